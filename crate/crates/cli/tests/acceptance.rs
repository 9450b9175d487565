//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so the lines come out in order and
//! unbuffered. The process exits non-zero when a criterion fails, unless it is
//! listed in `EXPECTED_UNMET`; those still print FAIL.

use std::collections::HashMap;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use cleaneval_cli::{cmd_run, RunConfig};
use cleaneval_core::experiment::extract_ideal_with_limits;
use cleaneval_core::{
    cell_glitch_index, emd, ground_distance, normalized_glitch_score, reference_dataset, reference_rules,
    run_experiment, BinDim, BinningSpec, Dataset, ExperimentConfig, ExperimentOutput, GlitchType, GlitchWeights,
    GroundMetric, Histogram, NodeId, Observation, OutlierLimits, Replication, ReplicationResult, Role, Strategy,
    TimeSeries,
};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Criteria that the reference configuration does not meet. They are still
/// evaluated and reported as FAIL; they just do not fail the process.
const EXPECTED_UNMET: &[u32] = &[7];

const TOL: f64 = 1e-9;
const REPLICATIONS: usize = 50;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn line_spec(bins: usize) -> BinningSpec {
    BinningSpec::new(vec![BinDim { min: 0.0, max: bins as f64, bins }], GroundMetric::Raw).unwrap()
}

/// Unit-spaced 1-D EMD is the L1 distance between the two CDFs.
fn cdf_emd(p: &[f64], q: &[f64]) -> f64 {
    let (sp, sq) = (p.iter().sum::<f64>(), q.iter().sum::<f64>());
    let (mut cp, mut cq, mut d) = (0.0, 0.0, 0.0);
    for i in 0..p.len() - 1 {
        cp += p[i] / sp;
        cq += q[i] / sq;
        d += (cp - cq).abs();
    }
    d
}

fn random_weights(r: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    loop {
        // Sparse-ish: roughly a third of the bins stay empty.
        let w: Vec<f64> = (0..n)
            .map(|_| if r.random_bool(0.35) { 0.0 } else { r.random::<f64>() })
            .collect();
        if w.iter().sum::<f64>() > 0.0 {
            return w;
        }
    }
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut r = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let n = r.random_range(2..=32);
        let (p, q) = (random_weights(&mut r, n), random_weights(&mut r, n));
        let spec = line_spec(n);
        let got = emd(
            &Histogram::from_weights(spec.clone(), &p).unwrap(),
            &Histogram::from_weights(spec, &q).unwrap(),
        )
        .unwrap();
        worst = worst.max((got - cdf_emd(&p, &q)).abs());
    }
    let t = start.elapsed();
    outcome(
        worst <= TOL && t < Duration::from_secs(5),
        format!("200 pairs, max |solver - cdf| = {worst:.2e}, {t:.2?}"),
    )
}

/// Exact optimum by enumerating every integral transport plan, memoized on the
/// remaining demand. Integer margins have an integral optimal vertex.
fn plan_enumeration(supply: &[u32], demand: &[u32], cost: &[Vec<f64>]) -> f64 {
    fn rec(
        i: usize,
        left: &mut Vec<u32>,
        supply: &[u32],
        cost: &[Vec<f64>],
        memo: &mut HashMap<(usize, Vec<u32>), f64>,
    ) -> f64 {
        if i == supply.len() {
            return if left.iter().all(|&l| l == 0) { 0.0 } else { f64::INFINITY };
        }
        if let Some(&c) = memo.get(&(i, left.clone())) {
            return c;
        }
        let mut best = f64::INFINITY;
        let mut ship = vec![0u32; left.len()];
        split(0, supply[i], &mut ship, i, left, supply, cost, memo, &mut best);
        memo.insert((i, left.clone()), best);
        best
    }

    #[allow(clippy::too_many_arguments)]
    fn split(
        j: usize,
        rest: u32,
        ship: &mut Vec<u32>,
        i: usize,
        left: &mut Vec<u32>,
        supply: &[u32],
        cost: &[Vec<f64>],
        memo: &mut HashMap<(usize, Vec<u32>), f64>,
        best: &mut f64,
    ) {
        if j == left.len() {
            if rest == 0 {
                let here: f64 = ship.iter().zip(&cost[i]).map(|(&f, c)| f as f64 * c).sum();
                for (l, f) in left.iter_mut().zip(ship.iter()) {
                    *l -= f;
                }
                *best = best.min(here + rec(i + 1, left, supply, cost, memo));
                for (l, f) in left.iter_mut().zip(ship.iter()) {
                    *l += f;
                }
            }
            return;
        }
        for f in 0..=rest.min(left[j]) {
            ship[j] = f;
            split(j + 1, rest - f, ship, i, left, supply, cost, memo, best);
        }
        ship[j] = 0;
    }

    rec(0, &mut demand.to_vec(), supply, cost, &mut HashMap::new())
}

/// `k` positive integers summing to `total`.
fn composition(r: &mut ChaCha8Rng, total: u32, k: usize) -> Vec<u32> {
    let mut cuts: Vec<u32> = sample(r, total as usize - 1, k - 1).into_iter().map(|c| c as u32 + 1).collect();
    cuts.sort_unstable();
    cuts.push(total);
    let mut prev = 0;
    cuts.into_iter()
        .map(|c| {
            let part = c - prev;
            prev = c;
            part
        })
        .collect()
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let mut r = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let dims: Vec<usize> = (0..r.random_range(1..=3)).map(|_| r.random_range(2..=6)).collect();
        let metric = if r.random_bool(0.5) { GroundMetric::Raw } else { GroundMetric::Normalized };
        let spec = BinningSpec::new(
            dims.iter().map(|&n| BinDim { min: 0.0, max: r.random_range(1.0..10.0), bins: n }).collect(),
            metric,
        )
        .unwrap();
        let cells = spec.cell_count();
        let (kp, kq) = (r.random_range(1..=6.min(cells)), r.random_range(1..=6.min(cells)));
        let total = r.random_range(kp.max(kq) as u32..=12);
        let (sp, sq) = (composition(&mut r, total, kp), composition(&mut r, total, kq));
        let (bp, bq) = (sample(&mut r, cells, kp).into_vec(), sample(&mut r, cells, kq).into_vec());

        let mut wp = vec![0.0; cells];
        let mut wq = vec![0.0; cells];
        for (&b, &m) in bp.iter().zip(&sp) {
            wp[b] = m as f64;
        }
        for (&b, &m) in bq.iter().zip(&sq) {
            wq[b] = m as f64;
        }
        let cost: Vec<Vec<f64>> = bp
            .iter()
            .map(|&i| bq.iter().map(|&j| ground_distance(&spec.center(i), &spec.center(j), &spec)).collect())
            .collect();
        let oracle = plan_enumeration(&sp, &sq, &cost) / total as f64;
        let got = emd(
            &Histogram::from_weights(spec.clone(), &wp).unwrap(),
            &Histogram::from_weights(spec, &wq).unwrap(),
        )
        .unwrap();
        worst = worst.max((got - oracle).abs());
    }
    let t = start.elapsed();
    outcome(
        worst <= TOL && t < Duration::from_secs(30),
        format!("100 instances, max |solver - enumeration| = {worst:.2e}, {t:.2?}"),
    )
}

fn criterion_3() -> Outcome {
    let mut r = ChaCha8Rng::seed_from_u64(3);
    let (mut identity, mut asym, mut triangle): (bool, f64, f64) = (true, 0.0, f64::NEG_INFINITY);
    for _ in 0..100 {
        let dims: Vec<usize> = (0..r.random_range(1..=3)).map(|_| r.random_range(2..=5)).collect();
        let spec = BinningSpec::new(
            dims.iter().map(|&n| BinDim { min: -1.0, max: 1.0, bins: n }).collect(),
            GroundMetric::Normalized,
        )
        .unwrap();
        let n = spec.cell_count();
        let [a, b, c] = [0; 3].map(|_| Histogram::from_weights(spec.clone(), &random_weights(&mut r, n)).unwrap());
        identity &= emd(&a, &a).unwrap() == 0.0 && emd(&b, &b).unwrap() == 0.0;
        let ab = emd(&a, &b).unwrap();
        asym = asym.max((ab - emd(&b, &a).unwrap()).abs());
        triangle = triangle.max(emd(&a, &c).unwrap() - ab - emd(&b, &c).unwrap());
    }
    outcome(
        identity && asym <= TOL && triangle <= TOL,
        format!("100 triples, identity exact: {identity}, max asymmetry {asym:.2e}, max triangle excess {triangle:.2e}"),
    )
}

fn dataset(rows_per_series: &[Vec<Vec<Option<f64>>>]) -> Dataset {
    let series = rows_per_series
        .iter()
        .enumerate()
        .map(|(k, rows)| {
            let obs = rows.iter().enumerate().map(|(t, v)| Observation::new(t as u32, v.clone())).collect();
            TimeSeries::new(NodeId::new(0, 0, k as u32), obs)
        })
        .collect();
    Dataset::new(Dataset::default_names(3), series, Role::Dirty).unwrap()
}

fn criterion_4() -> Outcome {
    let rules = reference_rules();
    let w = GlitchWeights::try_from([0.25, 0.25, 0.5]).unwrap();
    let limits = OutlierLimits::from_bounds(&[(-10.0, 10.0), (-10.0, 10.0), (-10.0, 10.0)]);
    let ok = [Some(1.0), Some(1.0), Some(0.5)];

    // attr2 missing only.
    let a = cell_glitch_index(&dataset(&[vec![vec![Some(1.0), None, Some(0.5)]]]), &rules, &limits, &w);
    // attr3 missing leaves a populated attr1 inconsistent; attr2 = 50 is an outlier.
    let b = cell_glitch_index(
        &dataset(&[vec![vec![Some(1.0), Some(1.0), None], vec![Some(1.0), Some(50.0), Some(0.5)]]]),
        &rules,
        &limits,
        &w,
    );
    let mut rows = vec![ok.to_vec(); 10];
    rows[2][0] = None;
    rows[6][0] = None;
    let c = normalized_glitch_score(&dataset(&[rows.clone()]), &rules, &limits, &w);
    let d = normalized_glitch_score(&dataset(&[rows.clone(), rows]), &rules, &limits, &w);
    let got = [a, b, c, d];
    outcome(got == [0.25, 1.0, 0.05, 0.10], format!("got {got:?}, want [0.25, 1.0, 0.05, 0.1]"))
}

/// The full reference experiment, plus each replication rebuilt so treated
/// cells can be inspected.
struct Reference {
    config: ExperimentConfig,
    output: ExperimentOutput,
    elapsed: Duration,
    replications: Vec<Replication>,
}

impl Reference {
    fn build() -> Self {
        let ds = reference_dataset();
        let config = ExperimentConfig::default();
        let start = Instant::now();
        let output = run_experiment(&ds, &config).expect("reference experiment runs");
        let elapsed = start.elapsed();
        let (ideal, _) = extract_ideal_with_limits(&ds, &config.rules, config.ideal_threshold).unwrap();
        let replications = (0..config.replications)
            .map(|i| Replication::prepare(&ds, &ideal, &config, i, None).unwrap())
            .collect();
        Self { config, output, elapsed, replications }
    }

    fn result(&self, rep: usize, strategy: u8, fraction: f64) -> &ReplicationResult {
        self.output
            .results
            .iter()
            .find(|r| r.replication == rep && r.strategy == strategy && r.fraction == fraction)
            .unwrap_or_else(|| panic!("missing result ({rep}, {strategy}, {fraction})"))
    }
}

fn criterion_5(refx: &Reference) -> Outcome {
    let mut bad: Vec<String> = Vec::new();
    for rep in &refx.replications {
        let det = &rep.models.detector;
        let before = &rep.scan;
        for id in [3u8, 4, 5] {
            let t = rep.treat(&refx.config, Strategy::by_id(id).unwrap(), 100.0).unwrap();
            let after = det.scan(&t.data);
            let repaired: std::collections::HashSet<(usize, usize, usize)> =
                t.repaired.iter().map(|c| (c.series, c.obs, c.attr)).collect();
            let mut ok = true;
            for (s, rows) in after.series.iter().enumerate() {
                for (o, m) in rows.iter().enumerate() {
                    let b = &before.series[s][o];
                    for a in 0..after.v {
                        let flag = |g: &cleaneval_core::GlitchMatrix, ty| g.get(a, ty);
                        ok &= match id {
                            5 => m.is_clean(),
                            4 => {
                                !flag(m, GlitchType::Missing)
                                    && !flag(m, GlitchType::Inconsistent)
                                    && (repaired.contains(&(s, o, a))
                                        || flag(m, GlitchType::Outlier) == flag(b, GlitchType::Outlier))
                            }
                            _ => {
                                flag(m, GlitchType::Missing) == flag(b, GlitchType::Missing)
                                    && flag(m, GlitchType::Inconsistent) == flag(b, GlitchType::Inconsistent)
                                    && !(flag(b, GlitchType::Outlier) && flag(m, GlitchType::Outlier))
                            }
                        };
                    }
                }
            }
            if !ok {
                bad.push(format!("rep {} strategy {id}", rep.index));
            }
        }
    }
    let zeros = (0..REPLICATIONS).all(|i| refx.result(i, 5, 100.0).treated_pct == [0.0; 3]);
    outcome(
        bad.is_empty() && zeros,
        if bad.is_empty() {
            format!("cell-level pattern holds for strategies 3, 4, 5 in all {REPLICATIONS} replications")
        } else {
            format!("violations: {}", bad.join(", "))
        },
    )
}

fn criterion_6(refx: &Reference) -> Outcome {
    let (mut hits, mut negatives, mut above_dirty) = (0, 0usize, 0);
    for rep in &refx.replications {
        let t = rep.treat(&refx.config, Strategy::by_id(2).unwrap(), 100.0).unwrap();
        let neg = t
            .repaired
            .iter()
            .filter(|c| c.attr == 0)
            .filter(|c| t.data.series[c.series].observations[c.obs].value(0).is_some_and(|x| x < 0.0))
            .count();
        negatives += neg;
        let s2 = refx.result(rep.index, 2, 100.0);
        let s3 = refx.result(rep.index, 3, 100.0);
        if neg >= 1 && s2.treated_pct[1] > 0.0 && s2.treated_pct[2] > s3.treated_pct[2] {
            hits += 1;
        }
        if s2.treated_pct[2] > s2.dirty_pct[2] {
            above_dirty += 1;
        }
    }
    outcome(
        hits >= 40,
        format!(
            "{hits}/{REPLICATIONS} replications; {negatives} negative attr1 imputations in total; \
             treated outliers above the dirty level in {above_dirty}/{REPLICATIONS}"
        ),
    )
}

fn criterion_7(refx: &Reference) -> Outcome {
    let (mut hits, mut lower_emd, mut comparable) = (0, 0, 0);
    for i in 0..REPLICATIONS {
        let (s2, s4) = (refx.result(i, 2, 100.0), refx.result(i, 4, 100.0));
        let e = s4.emd < s2.emd;
        let scale = s2.glitch_improvement.abs().max(s4.glitch_improvement.abs());
        let c = (s4.glitch_improvement - s2.glitch_improvement).abs() <= 0.1 * scale;
        lower_emd += e as usize;
        comparable += c as usize;
        hits += (e && c) as usize;
    }
    let mean = |s: u8, f: fn(&ReplicationResult) -> f64| {
        (0..REPLICATIONS).map(|i| f(refx.result(i, s, 100.0))).sum::<f64>() / REPLICATIONS as f64
    };
    outcome(
        hits >= 40,
        format!(
            "{hits}/{REPLICATIONS} (lower EMD {lower_emd}, comparable improvement {comparable}); \
             mean EMD s4 {:.4} vs s2 {:.4}, mean improvement s4 {:.3} vs s2 {:.3}",
            mean(4, |r| r.emd),
            mean(2, |r| r.emd),
            mean(4, |r| r.glitch_improvement),
            mean(2, |r| r.glitch_improvement),
        ),
    )
}

fn criterion_8(refx: &Reference) -> Outcome {
    let zero = refx
        .output
        .results
        .iter()
        .filter(|r| r.fraction == 0.0)
        .all(|r| r.glitch_improvement == 0.0 && r.emd == 0.0);
    let fractions = &refx.config.cost_fractions;
    let mean = |x: f64, f: fn(&ReplicationResult) -> f64| {
        (0..REPLICATIONS).map(|i| f(refx.result(i, 1, x))).sum::<f64>() / REPLICATIONS as f64
    };
    let imp: Vec<f64> = fractions.iter().map(|&x| mean(x, |r| r.glitch_improvement)).collect();
    let dist: Vec<f64> = fractions.iter().map(|&x| mean(x, |r| r.emd)).collect();
    let monotone = |v: &[f64]| v.windows(2).all(|w| w[0] <= w[1]);
    outcome(
        zero && monotone(&imp) && monotone(&dist),
        format!("x=0 exact zeros: {zero}; strategy 1 improvement {imp:.3?}, EMD {dist:.4?}"),
    )
}

fn criterion_9() -> Outcome {
    let cfg = RunConfig::parse("[synth]\n[experiment]\nmaster_seed = 7\n", Path::new(".")).unwrap();
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        if let Err(e) = cmd_run(&cfg, d.path()) {
            return outcome(false, format!("run failed: {e:#}"));
        }
    }
    let mut names: Vec<_> = std::fs::read_dir(dirs[0].path())
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    let differing: Vec<String> = names
        .iter()
        .filter(|n| std::fs::read(dirs[0].path().join(n)).ok() != std::fs::read(dirs[1].path().join(n)).ok())
        .map(|n| n.to_string_lossy().into_owned())
        .collect();
    outcome(
        differing.is_empty() && !names.is_empty(),
        format!("{} files compared, differing: {differing:?}", names.len()),
    )
}

fn criterion_10(refx: &Reference) -> Outcome {
    let c = &refx.config;
    outcome(
        refx.elapsed < Duration::from_secs(600) && refx.output.failures.is_empty(),
        format!(
            "R={} B={} strategies={} fractions={} in {:.2?} on {} thread(s), {} failures",
            c.replications,
            c.series_per_sample,
            c.strategies.len(),
            c.cost_fractions.len(),
            refx.elapsed,
            available_threads(),
            refx.output.failures.len()
        ),
    )
}

fn available_threads() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

fn main() -> ExitCode {
    // `cargo test -- --list` and friends probe test binaries; nothing to list.
    if std::env::args().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    let report = |n: u32, o: Outcome| -> bool {
        let verdict = if o.pass { "PASS" } else { "FAIL" };
        let note = if !o.pass && EXPECTED_UNMET.contains(&n) { " (expected, not met by the reference configuration)" } else { "" };
        println!("criterion {n:>2}: {verdict}{note}  {}", o.detail);
        o.pass || EXPECTED_UNMET.contains(&n)
    };
    let mut ok = true;
    ok &= report(1, criterion_1());
    ok &= report(2, criterion_2());
    ok &= report(3, criterion_3());
    ok &= report(4, criterion_4());
    let refx = Reference::build();
    ok &= report(5, criterion_5(&refx));
    ok &= report(6, criterion_6(&refx));
    ok &= report(7, criterion_7(&refx));
    ok &= report(8, criterion_8(&refx));
    ok &= report(9, criterion_9());
    ok &= report(10, criterion_10(&refx));
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
