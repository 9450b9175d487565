//! Primal network simplex for the balanced, uncapacitated transportation problem.
//!
//! The spanning-tree bookkeeping (parent / thread / successor counts) and the
//! block-search pivot rule follow LEMON's `NetworkSimplex`. An artificial root
//! node with one artificial arc per real node provides the initial strongly
//! feasible basis; the leaving-arc tie rule keeps every later basis strongly
//! feasible, which rules out cycling.

use crate::error::{Error, Result};

const NONE: usize = usize::MAX;

const STATE_TREE: i8 = 0;
const STATE_LOWER: i8 = 1;

const DIR_UP: i8 = 1;
const DIR_DOWN: i8 = -1;

/// Relative tolerance on reduced costs when picking an entering arc.
const EPSILON: f64 = 2.2e-15;

/// Tolerance on the supply/demand balance, relative to total supply.
const BALANCE_TOL: f64 = 1e-9;

/// One positive shipment from source `source` to sink `sink`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Flow {
    pub source: usize,
    pub sink: usize,
    pub amount: f64,
}

/// Optimal transportation plan.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowSolution {
    pub flows: Vec<Flow>,
    /// `Σ f_ij · c_ij`.
    pub objective: f64,
    pub pivots: usize,
}

impl FlowSolution {
    pub fn total_flow(&self) -> f64 {
        self.flows.iter().map(|f| f.amount).sum()
    }

    /// Row sums (shipped per source) and column sums (received per sink).
    pub fn marginals(&self, sources: usize, sinks: usize) -> (Vec<f64>, Vec<f64>) {
        let mut out = vec![0.0; sources];
        let mut inn = vec![0.0; sinks];
        for f in &self.flows {
            out[f.source] += f.amount;
            inn[f.sink] += f.amount;
        }
        (out, inn)
    }
}

/// Minimises `Σ f_ij c_ij` subject to row sums `supply`, column sums `demand`,
/// `f ≥ 0`. `cost` is row-major `supply.len() × demand.len()`.
pub fn solve_transport(supply: &[f64], demand: &[f64], cost: &[f64]) -> Result<FlowSolution> {
    let (m, n) = (supply.len(), demand.len());
    if m == 0 || n == 0 {
        return Err(Error::InvalidArgument(
            "transportation problem needs at least one source and one sink".into(),
        ));
    }
    if cost.len() != m * n {
        return Err(Error::InvalidArgument(format!(
            "cost matrix has {} entries, expected {}",
            cost.len(),
            m * n
        )));
    }
    if supply.iter().chain(demand).any(|x| !x.is_finite() || *x < 0.0)
        || cost.iter().any(|c| !c.is_finite())
    {
        return Err(Error::InvalidArgument(
            "masses must be finite and non-negative, costs finite".into(),
        ));
    }
    let total_supply: f64 = supply.iter().sum();
    let total_demand: f64 = demand.iter().sum();
    if (total_supply - total_demand).abs() > BALANCE_TOL * total_supply.max(total_demand) {
        return Err(Error::Infeasible);
    }

    // Absorb rounding-level imbalance in the largest demand.
    let mut demand = demand.to_vec();
    let big = (0..n)
        .max_by(|&a, &b| demand[a].total_cmp(&demand[b]))
        .unwrap();
    demand[big] = (demand[big] + (total_supply - total_demand)).max(0.0);

    let mut ns = NetworkSimplex::new(supply, &demand, cost);
    ns.run()?;
    Ok(ns.solution())
}

struct NetworkSimplex {
    node_num: usize,
    arc_num: usize,
    sinks: usize,

    source: Vec<usize>,
    target: Vec<usize>,
    cost: Vec<f64>,
    flow: Vec<f64>,
    state: Vec<i8>,

    pi: Vec<f64>,
    parent: Vec<usize>,
    pred: Vec<usize>,
    thread: Vec<usize>,
    rev_thread: Vec<usize>,
    succ_num: Vec<usize>,
    last_succ: Vec<usize>,
    pred_dir: Vec<i8>,
    dirty_revs: Vec<usize>,

    in_arc: usize,
    join: usize,
    u_in: usize,
    v_in: usize,
    u_out: usize,
    delta: f64,

    next_arc: usize,
    block_size: usize,
    pivots: usize,
}

impl NetworkSimplex {
    fn new(supply: &[f64], demand: &[f64], cost: &[f64]) -> Self {
        let (m, n) = (supply.len(), demand.len());
        let node_num = m + n;
        let arc_num = m * n;
        let all_arcs = arc_num + node_num;

        let mut source = Vec::with_capacity(all_arcs);
        let mut target = Vec::with_capacity(all_arcs);
        for i in 0..m {
            for j in 0..n {
                source.push(i);
                target.push(m + j);
            }
        }
        let mut costs = cost.to_vec();
        let max_cost = cost.iter().fold(0.0f64, |a, c| a.max(c.abs()));
        let art_cost = (max_cost + 1.0) * node_num as f64;

        let root = node_num;
        let mut s = Self {
            node_num,
            arc_num,
            sinks: n,
            source,
            target,
            cost: Vec::new(),
            flow: vec![0.0; all_arcs],
            state: vec![STATE_LOWER; all_arcs],
            pi: vec![0.0; node_num + 1],
            parent: vec![NONE; node_num + 1],
            pred: vec![NONE; node_num + 1],
            thread: vec![0; node_num + 1],
            rev_thread: vec![0; node_num + 1],
            succ_num: vec![1; node_num + 1],
            last_succ: vec![0; node_num + 1],
            pred_dir: vec![DIR_UP; node_num + 1],
            dirty_revs: Vec::new(),
            in_arc: NONE,
            join: NONE,
            u_in: NONE,
            v_in: NONE,
            u_out: NONE,
            delta: 0.0,
            next_arc: 0,
            block_size: ((arc_num as f64).sqrt().ceil() as usize).max(10),
            pivots: 0,
        };

        s.thread[root] = 0;
        s.rev_thread[0] = root;
        s.succ_num[root] = node_num + 1;
        s.last_succ[root] = root - 1;
        s.pi[root] = 0.0;

        for u in 0..node_num {
            let e = arc_num + u;
            let sup = if u < m { supply[u] } else { -demand[u - m] };
            s.parent[u] = root;
            s.pred[u] = e;
            s.thread[u] = u + 1;
            s.rev_thread[u + 1] = u;
            s.succ_num[u] = 1;
            s.last_succ[u] = u;
            s.state[e] = STATE_TREE;
            if sup >= 0.0 {
                s.pred_dir[u] = DIR_UP;
                s.pi[u] = 0.0;
                s.source.push(u);
                s.target.push(root);
                s.flow[e] = sup;
                costs.push(0.0);
            } else {
                s.pred_dir[u] = DIR_DOWN;
                s.pi[u] = art_cost;
                s.source.push(root);
                s.target.push(u);
                s.flow[e] = -sup;
                costs.push(art_cost);
            }
        }
        s.cost = costs;
        s
    }

    #[inline]
    fn reduced_cost(&self, e: usize) -> f64 {
        self.cost[e] + self.pi[self.source[e]] - self.pi[self.target[e]]
    }

    /// Block search: scan arcs in blocks, take the most negative reduced cost
    /// of the first block that has one.
    fn find_entering_arc(&mut self) -> bool {
        let mut min = 0.0;
        let mut cnt = self.block_size;
        let mut found = false;
        let mut e = self.next_arc;
        for _ in 0..self.arc_num {
            let c = f64::from(self.state[e]) * self.reduced_cost(e);
            if c < min {
                let scale = self
                    .cost[e]
                    .abs()
                    .max(self.pi[self.source[e]].abs())
                    .max(self.pi[self.target[e]].abs());
                if c < -EPSILON * scale.max(1.0) {
                    min = c;
                    self.in_arc = e;
                    found = true;
                }
            }
            e += 1;
            if e == self.arc_num {
                e = 0;
            }
            cnt -= 1;
            if cnt == 0 {
                if found {
                    break;
                }
                cnt = self.block_size;
            }
        }
        self.next_arc = e;
        found
    }

    fn find_join_node(&mut self) {
        let mut u = self.source[self.in_arc];
        let mut v = self.target[self.in_arc];
        while u != v {
            if self.succ_num[u] < self.succ_num[v] {
                u = self.parent[u];
            } else {
                v = self.parent[v];
            }
        }
        self.join = u;
    }

    /// Arcs are uncapacitated, so only arcs whose flow decreases around the
    /// cycle can block it. Ties on the second path resolve to the last blocking
    /// arc, which keeps the tree strongly feasible.
    fn find_leaving_arc(&mut self) -> bool {
        let (first, second) = if self.state[self.in_arc] == STATE_LOWER {
            (self.source[self.in_arc], self.target[self.in_arc])
        } else {
            (self.target[self.in_arc], self.source[self.in_arc])
        };
        self.delta = f64::INFINITY;
        let mut result = 0;

        let mut u = first;
        while u != self.join {
            if self.pred_dir[u] == DIR_UP {
                let d = self.flow[self.pred[u]];
                if d < self.delta {
                    self.delta = d;
                    self.u_out = u;
                    result = 1;
                }
            }
            u = self.parent[u];
        }
        let mut u = second;
        while u != self.join {
            if self.pred_dir[u] == DIR_DOWN {
                let d = self.flow[self.pred[u]];
                if d <= self.delta {
                    self.delta = d;
                    self.u_out = u;
                    result = 2;
                }
            }
            u = self.parent[u];
        }

        if result == 1 {
            self.u_in = first;
            self.v_in = second;
        } else {
            self.u_in = second;
            self.v_in = first;
        }
        result != 0
    }

    fn change_flow(&mut self) {
        if self.delta > 0.0 {
            let val = f64::from(self.state[self.in_arc]) * self.delta;
            self.flow[self.in_arc] += val;
            let mut u = self.source[self.in_arc];
            while u != self.join {
                let e = self.pred[u];
                self.flow[e] -= f64::from(self.pred_dir[u]) * val;
                u = self.parent[u];
            }
            let mut u = self.target[self.in_arc];
            while u != self.join {
                let e = self.pred[u];
                self.flow[e] += f64::from(self.pred_dir[u]) * val;
                u = self.parent[u];
            }
        }
        self.state[self.in_arc] = STATE_TREE;
        let leaving = self.pred[self.u_out];
        self.flow[leaving] = 0.0;
        self.state[leaving] = STATE_LOWER;
    }

    fn update_tree_structure(&mut self) {
        let (u_in, v_in, u_out, join, in_arc) =
            (self.u_in, self.v_in, self.u_out, self.join, self.in_arc);
        let old_rev_thread = self.rev_thread[u_out];
        let old_succ_num = self.succ_num[u_out];
        let old_last_succ = self.last_succ[u_out];
        let v_out = self.parent[u_out];

        if u_in == u_out {
            self.parent[u_in] = v_in;
            self.pred[u_in] = in_arc;
            self.pred_dir[u_in] = if u_in == self.source[in_arc] {
                DIR_UP
            } else {
                DIR_DOWN
            };

            if self.thread[v_in] != u_out {
                let mut after = self.thread[old_last_succ];
                self.thread[old_rev_thread] = after;
                self.rev_thread[after] = old_rev_thread;
                after = self.thread[v_in];
                self.thread[v_in] = u_out;
                self.rev_thread[u_out] = v_in;
                self.thread[old_last_succ] = after;
                self.rev_thread[after] = old_last_succ;
            }
        } else {
            // When old_rev_thread == v_in, join and v_out coincide.
            let thread_continue = if old_rev_thread == v_in {
                self.thread[old_last_succ]
            } else {
                self.thread[v_in]
            };

            // Re-hang the stem nodes between u_in and u_out.
            let mut stem = u_in;
            let mut par_stem = v_in;
            let mut last = self.last_succ[u_in];
            let mut after = self.thread[last];
            self.thread[v_in] = u_in;
            self.dirty_revs.clear();
            self.dirty_revs.push(v_in);
            while stem != u_out {
                let next_stem = self.parent[stem];
                self.thread[last] = next_stem;
                self.dirty_revs.push(last);

                let before = self.rev_thread[stem];
                self.thread[before] = after;
                self.rev_thread[after] = before;

                self.parent[stem] = par_stem;
                par_stem = stem;
                stem = next_stem;

                last = if self.last_succ[stem] == self.last_succ[par_stem] {
                    self.rev_thread[par_stem]
                } else {
                    self.last_succ[stem]
                };
                after = self.thread[last];
            }
            self.parent[u_out] = par_stem;
            self.thread[last] = thread_continue;
            self.rev_thread[thread_continue] = last;
            self.last_succ[u_out] = last;

            if old_rev_thread != v_in {
                self.thread[old_rev_thread] = after;
                self.rev_thread[after] = old_rev_thread;
            }

            for i in 0..self.dirty_revs.len() {
                let u = self.dirty_revs[i];
                let t = self.thread[u];
                self.rev_thread[t] = u;
            }

            // pred, pred_dir, last_succ, succ_num along the stem from u_out to u_in.
            let mut tmp_sc: isize = 0;
            let tmp_ls = self.last_succ[u_out];
            let mut u = u_out;
            while u != u_in {
                let p = self.parent[u];
                self.pred[u] = self.pred[p];
                self.pred_dir[u] = -self.pred_dir[p];
                tmp_sc += self.succ_num[u] as isize - self.succ_num[p] as isize;
                self.succ_num[u] = tmp_sc as usize;
                self.last_succ[p] = tmp_ls;
                u = p;
            }
            self.pred[u_in] = in_arc;
            self.pred_dir[u_in] = if u_in == self.source[in_arc] {
                DIR_UP
            } else {
                DIR_DOWN
            };
            self.succ_num[u_in] = old_succ_num;
        }

        // last_succ from v_in towards the root.
        let up_limit_out = if self.last_succ[join] == v_in {
            join
        } else {
            NONE
        };
        let last_succ_out = self.last_succ[u_out];
        let mut u = v_in;
        while u != NONE && self.last_succ[u] == v_in {
            self.last_succ[u] = last_succ_out;
            u = self.parent[u];
        }

        // last_succ from v_out towards the root.
        if join != old_rev_thread && v_in != old_rev_thread {
            let mut u = v_out;
            while u != up_limit_out && self.last_succ[u] == old_last_succ {
                self.last_succ[u] = old_rev_thread;
                u = self.parent[u];
            }
        } else if last_succ_out != old_last_succ {
            let mut u = v_out;
            while u != up_limit_out && self.last_succ[u] == old_last_succ {
                self.last_succ[u] = last_succ_out;
                u = self.parent[u];
            }
        }

        let mut u = v_in;
        while u != join {
            self.succ_num[u] += old_succ_num;
            u = self.parent[u];
        }
        let mut u = v_out;
        while u != join {
            self.succ_num[u] -= old_succ_num;
            u = self.parent[u];
        }
    }

    fn update_potential(&mut self) {
        let u_in = self.u_in;
        let sigma = self.pi[self.v_in]
            - self.pi[u_in]
            - f64::from(self.pred_dir[u_in]) * self.cost[self.in_arc];
        let end = self.thread[self.last_succ[u_in]];
        let mut u = u_in;
        while u != end {
            self.pi[u] += sigma;
            u = self.thread[u];
        }
    }

    fn run(&mut self) -> Result<()> {
        // Generous cap; strongly feasible pivoting terminates far earlier.
        let max_pivots = 50 * (self.arc_num + self.node_num) + 10_000;
        while self.find_entering_arc() {
            self.find_join_node();
            if !self.find_leaving_arc() {
                return Err(Error::InvalidArgument(
                    "transportation problem is unbounded".into(),
                ));
            }
            self.change_flow();
            self.update_tree_structure();
            self.update_potential();
            self.pivots += 1;
            if self.pivots > max_pivots {
                return Err(Error::InvalidArgument(format!(
                    "network simplex did not converge within {max_pivots} pivots"
                )));
            }
        }
        let scale: f64 = self.flow[self.arc_num..].iter().sum::<f64>().max(1.0);
        let residual: f64 = (self.arc_num..self.arc_num + self.node_num)
            .map(|e| self.flow[e])
            .sum();
        let shipped: f64 = self.flow[..self.arc_num].iter().sum();
        if residual > BALANCE_TOL * shipped.max(scale) {
            return Err(Error::Infeasible);
        }
        Ok(())
    }

    fn solution(&self) -> FlowSolution {
        let mut flows = Vec::new();
        let mut objective = 0.0;
        for e in 0..self.arc_num {
            let f = self.flow[e];
            if f > 0.0 {
                objective += f * self.cost[e];
                flows.push(Flow {
                    source: e / self.sinks,
                    sink: e % self.sinks,
                    amount: f,
                });
            }
        }
        FlowSolution {
            flows,
            objective,
            pivots: self.pivots,
        }
    }
}
