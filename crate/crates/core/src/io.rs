//! CSV persistence in the `i,j,k,t,attr1,...,attrv` layout. Missing values are
//! empty fields; a header row naming the columns is required.

use std::collections::HashMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use crate::dataset::{Dataset, NodeId, Observation, Role, TimeSeries, MAX_ATTRIBUTES};
use crate::error::{Error, Result};

/// How CSV columns map onto the data model.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum ColumnMapping {
    /// `i,j,k,t` in the first four columns, every remaining column is an attribute.
    #[default]
    Positional,
    /// Columns picked by header name.
    Named {
        node: [String; 3],
        time: String,
        attributes: Vec<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Schema {
    pub columns: ColumnMapping,
    pub max_series_len: Option<usize>,
}

impl Schema {
    pub fn with_max_len(mut self, max: usize) -> Self {
        self.max_series_len = Some(max);
        self
    }
}

struct Layout {
    node: [usize; 3],
    time: usize,
    attributes: Vec<usize>,
    names: Vec<String>,
}

fn resolve_layout(header: &csv::StringRecord, mapping: &ColumnMapping) -> Result<Layout> {
    let header_err = |reason: String| Error::MalformedRow { line: 1, reason };
    match mapping {
        ColumnMapping::Positional => {
            if header.len() < 5 {
                return Err(header_err(format!(
                    "expected i,j,k,t and at least one attribute column, found {} columns",
                    header.len()
                )));
            }
            Ok(Layout {
                node: [0, 1, 2],
                time: 3,
                attributes: (4..header.len()).collect(),
                names: header.iter().skip(4).map(|s| s.trim().to_string()).collect(),
            })
        }
        ColumnMapping::Named {
            node,
            time,
            attributes,
        } => {
            let find = |name: &str| {
                header
                    .iter()
                    .position(|h| h.trim() == name)
                    .ok_or_else(|| header_err(format!("column `{name}` not found in header")))
            };
            Ok(Layout {
                node: [find(&node[0])?, find(&node[1])?, find(&node[2])?],
                time: find(time)?,
                attributes: attributes.iter().map(|a| find(a)).collect::<Result<_>>()?,
                names: attributes.clone(),
            })
        }
    }
}

pub fn load_dataset(path: impl AsRef<Path>, schema: &Schema) -> Result<Dataset> {
    read_dataset(File::open(path)?, schema)
}

pub fn read_dataset<R: Read>(reader: R, schema: &Schema) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.is_empty() {
        return Err(Error::NoDataRows);
    }
    let layout = resolve_layout(&header, &schema.columns)?;
    let v = layout.names.len();
    if v > MAX_ATTRIBUTES {
        return Err(Error::InvalidArgument(format!(
            "at most {MAX_ATTRIBUTES} attributes are supported, header has {v}"
        )));
    }

    let mut index: HashMap<NodeId, usize> = HashMap::new();
    let mut series: Vec<TimeSeries> = Vec::new();
    let mut record = csv::StringRecord::new();
    while rdr.read_record(&mut record)? {
        let line = record.position().map_or(0, |p| p.line());
        if record.len() == 1 && record[0].trim().is_empty() {
            continue;
        }
        if record.len() != header.len() {
            return Err(Error::MalformedRow {
                line,
                reason: format!("expected {} fields, found {}", header.len(), record.len()),
            });
        }
        let int = |col: usize, what: &str| -> Result<u32> {
            record[col].trim().parse::<u32>().map_err(|_| Error::MalformedRow {
                line,
                reason: format!("{what} `{}` is not a non-negative integer", &record[col]),
            })
        };
        let node = NodeId::new(
            int(layout.node[0], "i")?,
            int(layout.node[1], "j")?,
            int(layout.node[2], "k")?,
        );
        let t = int(layout.time, "t")?;
        let mut values = Vec::with_capacity(v);
        for (&col, name) in layout.attributes.iter().zip(&layout.names) {
            let field = record[col].trim();
            if field.is_empty() {
                values.push(None);
                continue;
            }
            match field.parse::<f64>() {
                Ok(x) if x.is_finite() => values.push(Some(x)),
                _ => {
                    return Err(Error::MalformedRow {
                        line,
                        reason: format!("attribute `{name}` value `{field}` is not a finite number"),
                    })
                }
            }
        }
        let slot = *index.entry(node).or_insert_with(|| {
            series.push(TimeSeries::new(node, Vec::new()));
            series.len() - 1
        });
        series[slot].observations.push(Observation::new(t, values));
    }
    if series.is_empty() {
        return Err(Error::NoDataRows);
    }
    for s in &mut series {
        s.observations.sort_by_key(|o| o.t);
        if let Some(w) = s.observations.windows(2).find(|w| w[0].t == w[1].t) {
            return Err(Error::DuplicateTime {
                node: s.node,
                t: w[0].t,
            });
        }
        if let Some(max) = schema.max_series_len {
            if s.len() > max {
                return Err(Error::SeriesTooLong {
                    node: s.node,
                    len: s.len(),
                    max,
                });
            }
        }
    }
    Dataset::new(layout.names, series, Role::Dirty)
}

/// Writes values in original units (any transform is inverted on the way out).
pub fn save_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let file = File::create(path)?;
    let mut buf = std::io::BufWriter::new(file);
    write_dataset(ds, &mut buf)?;
    buf.flush()?;
    Ok(())
}

pub fn write_dataset<W: Write>(ds: &Dataset, writer: W) -> Result<()> {
    let mut seen = HashMap::new();
    for s in &ds.series {
        if seen.insert(s.node, ()).is_some() {
            return Err(Error::DuplicateSeries(s.id()));
        }
    }
    let mut wtr = csv::WriterBuilder::new().from_writer(writer);
    let mut header = vec!["i".to_string(), "j".into(), "k".into(), "t".into()];
    header.extend(ds.attribute_names.iter().cloned());
    wtr.write_record(&header)?;
    let mut row: Vec<String> = Vec::with_capacity(header.len());
    for s in &ds.series {
        for obs in &s.observations {
            row.clear();
            row.push(s.node.i.to_string());
            row.push(s.node.j.to_string());
            row.push(s.node.k.to_string());
            row.push(obs.t.to_string());
            for a in 0..ds.v() {
                row.push(match ds.original_value(obs, a) {
                    // Debug formatting is the shortest representation that parses back exactly.
                    Some(x) => format!("{x:?}"),
                    None => String::new(),
                });
            }
            wtr.write_record(&row)?;
        }
    }
    wtr.flush()?;
    Ok(())
}
