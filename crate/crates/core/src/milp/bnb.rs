use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::rc::Rc;
use std::time::Instant;

use super::problem::{MilpProblem, Sense, SparseRow};
use super::simplex::{LpStatus, LpTolerances, Tableau};
use super::{IncumbentEvent, MilpError, MilpSolution, SolveConfig, SolveStatus, TieBreak};

/// Memory budget for tableaux stored on open nodes. Nodes without one start
/// from the most recently solved tableau.
const WARM_BUDGET_BYTES: usize = 384 << 20;
const ACCEPT_TOL: f64 = 1e-6;

fn empty(status: SolveStatus, start: Instant) -> MilpSolution {
    MilpSolution {
        status,
        values: None,
        objective_value: f64::NAN,
        dual_bound: f64::NEG_INFINITY,
        node_count: 0,
        wall_time: start.elapsed().as_secs_f64(),
        lp_iterations: 0,
        incumbents: Vec::new(),
        bound_trace: Vec::new(),
    }
}

/// Solves the LP relaxation to optimality and checks the point against the
/// original rows, re-solving from the slack basis if the check fails.
fn solve_checked(
    problem: &MilpProblem,
    tab: &mut Tableau,
    lo: &[f64],
    up: &[f64],
    tol: &LpTolerances,
    warm: bool,
) -> Result<LpStatus, MilpError> {
    let accept = |t: &Tableau| {
        let x = t.primal_values();
        let scale = 1.0 + x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        problem.with_bounds_violation(&x, lo, up) <= ACCEPT_TOL * scale
    };
    if warm {
        match tab.reoptimize(tol) {
            Ok(LpStatus::Optimal) if accept(tab) => return Ok(LpStatus::Optimal),
            Ok(s @ (LpStatus::Infeasible | LpStatus::Unbounded)) => return Ok(s),
            _ => {}
        }
        *tab = Tableau::new(problem, lo, up);
    }
    let status = tab.solve_primal(tol)?;
    if status == LpStatus::Optimal && !accept(tab) {
        return Err(MilpError::NumericalFailure(
            "LP solution violates constraints after a cold re-solve".into(),
        ));
    }
    Ok(status)
}

impl MilpProblem {
    fn with_bounds_violation(&self, x: &[f64], lo: &[f64], up: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for (row, &b) in self.rows().iter().zip(self.rhs()) {
            worst = worst.max(row.dot(x) - b);
        }
        for j in 0..x.len() {
            worst = worst.max(lo[j] - x[j]).max(x[j] - up[j]);
        }
        worst
    }
}

fn clamp_into(x: &mut [f64], lo: &[f64], up: &[f64]) {
    for j in 0..x.len() {
        x[j] = x[j].clamp(lo[j], up[j]);
    }
}

/// Solves the continuous relaxation, ignoring integrality.
pub fn solve_lp(problem: &MilpProblem, config: &SolveConfig) -> Result<MilpSolution, MilpError> {
    config.validate()?;
    let start = Instant::now();
    let sign = problem.sense().sign();
    let p = problem.to_minimize();
    let tol = LpTolerances::new(config.feasibility_tolerance.min(1e-9));
    let (lo, up) = (p.var_lower(), p.var_upper());
    let mut tab = Tableau::new(&p, lo, up);
    let status = solve_checked(&p, &mut tab, lo, up, &tol, false)?;
    let mut sol = empty(
        match status {
            LpStatus::Optimal => SolveStatus::Optimal,
            LpStatus::Infeasible => SolveStatus::Infeasible,
            LpStatus::Unbounded => SolveStatus::Unbounded,
        },
        start,
    );
    sol.lp_iterations = tab.iterations;
    if status == LpStatus::Optimal {
        let mut x = tab.primal_values();
        clamp_into(&mut x, lo, up);
        let obj = sign * p.objective_value(&x);
        sol.objective_value = obj;
        sol.dual_bound = obj;
        sol.values = Some(x);
    } else if status == LpStatus::Unbounded {
        sol.objective_value = -sign * f64::INFINITY;
        sol.dual_bound = -sign * f64::INFINITY;
    }
    sol.wall_time = start.elapsed().as_secs_f64();
    Ok(sol)
}

struct Node {
    bound: f64,
    seq: u64,
    lo: Vec<f64>,
    up: Vec<f64>,
    warm: Option<Rc<Tableau>>,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Node {}
impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Node {
    // BinaryHeap is a max-heap: smallest bound first, then oldest first.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .bound
            .total_cmp(&self.bound)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

struct Search<'a> {
    p: &'a MilpProblem,
    config: &'a SolveConfig,
    tol: LpTolerances,
    start: Instant,
    root: Rc<Tableau>,
    heap: BinaryHeap<Node>,
    stored: usize,
    max_stored: usize,
    seq: u64,
    nodes: u64,
    lp_iterations: usize,
    incumbent: Option<(Vec<f64>, f64)>,
    events: Vec<IncumbentEvent>,
    bound_trace: Vec<f64>,
    pruned_bound: f64,
    work: Option<Tableau>,
}

enum Stop {
    Exhausted,
    Limit,
    Incumbents,
}

impl<'a> Search<'a> {
    fn prune_tol(&self, inc: f64) -> f64 {
        self.config.gap_tolerance * inc.abs().max(1.0)
    }

    fn dominated(&self, bound: f64) -> bool {
        match &self.incumbent {
            Some((_, inc)) => bound >= inc - self.prune_tol(*inc),
            None => false,
        }
    }

    fn next_seq(&mut self) -> u64 {
        self.seq += 1;
        self.seq
    }

    fn global_bound(&self, pending: Option<f64>) -> f64 {
        let mut lb = self.pruned_bound;
        if let Some(n) = self.heap.peek() {
            lb = lb.min(n.bound);
        }
        if let Some(b) = pending {
            lb = lb.min(b);
        }
        if let Some((_, inc)) = &self.incumbent {
            lb = lb.min(*inc);
        }
        lb
    }

    fn note_bound(&mut self, pending: Option<f64>) {
        let lb = self.global_bound(pending);
        if self.bound_trace.last().is_none_or(|&last| lb > last) {
            self.bound_trace.push(lb);
        }
    }

    fn limit_hit(&self) -> bool {
        self.config.node_limit.is_some_and(|l| self.nodes >= l)
            || self
                .config
                .time_limit
                .is_some_and(|t| self.start.elapsed() >= t)
    }

    fn push(&mut self, node: Node) {
        self.heap.push(node);
    }

    fn pop(&mut self) -> Option<Node> {
        let node = self.heap.pop()?;
        if node.warm.as_ref().is_some_and(|rc| Rc::strong_count(rc) == 1) {
            self.stored = self.stored.saturating_sub(1);
        }
        Some(node)
    }

    /// Solves one node; returns the child to dive into, if any.
    fn process(&mut self, node: Node, dive: bool) -> Result<Option<Node>, MilpError> {
        self.nodes += 1;
        let mut tab = match node.warm.map(Rc::try_unwrap) {
            Some(Ok(owned)) => owned,
            Some(Err(shared)) => match self.work.take() {
                Some(mut buf) => {
                    buf.clone_from(&shared);
                    buf
                }
                None => (*shared).clone(),
            },
            None => self.work.take().unwrap_or_else(|| (*self.root).clone()),
        };
        for j in 0..self.p.num_vars() {
            if tab.bounds(j) != (node.lo[j], node.up[j]) {
                tab.set_bounds(j, node.lo[j], node.up[j]);
            }
        }
        let before = tab.iterations;
        let status = solve_checked(self.p, &mut tab, &node.lo, &node.up, &self.tol, true)?;
        self.lp_iterations += tab.iterations.saturating_sub(before);
        match status {
            LpStatus::Infeasible => {
                self.work = Some(tab);
                return Ok(None);
            }
            LpStatus::Unbounded => {
                return Err(MilpError::NumericalFailure(
                    "node relaxation unbounded under a bounded root".into(),
                ))
            }
            LpStatus::Optimal => {}
        }
        let bound = tab.objective().max(node.bound);
        let mut x = tab.primal_values();
        if self.dominated(bound) {
            self.pruned_bound = self.pruned_bound.min(bound);
            self.work = Some(tab);
            return Ok(None);
        }
        clamp_into(&mut x, &node.lo, &node.up);
        let (mut lo, mut up) = (node.lo, node.up);
        if let Some((_, inc)) = &self.incumbent {
            // Moving a nonbasic integer one unit off its bound costs at least |d_j|.
            let cutoff = inc - self.prune_tol(*inc) + 1e-9 * inc.abs().max(1.0);
            for (j, &is_int) in self.p.integrality().iter().enumerate() {
                if !is_int || lo[j] == up[j] {
                    continue;
                }
                match tab.nonbasic_reduced_cost(j) {
                    Some((d, false)) if bound + d >= cutoff => up[j] = lo[j],
                    Some((d, true)) if bound - d >= cutoff => lo[j] = up[j],
                    _ => {}
                }
            }
        }

        let int_tol = self.config.integrality_tolerance;
        let mut branch: Option<(usize, f64)> = None;
        for (j, &is_int) in self.p.integrality().iter().enumerate() {
            if !is_int {
                continue;
            }
            let frac = x[j] - x[j].floor();
            let score = frac.min(1.0 - frac);
            if score > int_tol && branch.is_none_or(|(_, s)| score > s) {
                branch = Some((j, score));
            }
        }

        let Some((j, _)) = branch else {
            self.work = Some(tab);
            for (k, &is_int) in self.p.integrality().iter().enumerate() {
                if is_int {
                    x[k] = x[k].round();
                }
            }
            let obj = self.p.objective_value(&x);
            let better = match &self.incumbent {
                None => true,
                Some((_, inc)) => obj < inc - 1e-9 * inc.abs().max(1.0),
            };
            if better {
                self.incumbent = Some((x, obj));
                self.events.push(IncumbentEvent {
                    time: self.start.elapsed().as_secs_f64(),
                    node: self.nodes,
                    objective: obj,
                });
            }
            return Ok(None);
        };

        let shared = if self.stored < self.max_stored {
            self.stored += 1;
            Some(Rc::new(tab))
        } else {
            self.work = Some(tab);
            None
        };
        let mut down = Node {
            bound,
            seq: self.next_seq(),
            lo: lo.clone(),
            up: up.clone(),
            warm: shared.clone(),
        };
        down.up[j] = x[j].floor();
        let mut upc = Node {
            bound,
            seq: self.next_seq(),
            lo,
            up,
            warm: shared,
        };
        upc.lo[j] = x[j].ceil();
        if dive {
            self.push(upc);
            Ok(Some(down))
        } else {
            self.push(down);
            self.push(upc);
            Ok(None)
        }
    }

    fn run(&mut self, root_node: Node) -> Result<Stop, MilpError> {
        let target = self.config.stop_after_incumbents;
        let mut next = Some(root_node);
        loop {
            let node = match next.take() {
                Some(n) => n,
                None => match self.pop() {
                    Some(n) => n,
                    None => return Ok(Stop::Exhausted),
                },
            };
            if self.dominated(node.bound) {
                self.pruned_bound = self.pruned_bound.min(node.bound);
                continue;
            }
            if self.limit_hit() {
                let b = node.bound;
                self.push(node);
                self.note_bound(Some(b));
                return Ok(Stop::Limit);
            }
            let dive = self.incumbent.is_none();
            next = self.process(node, dive)?;
            self.note_bound(next.as_ref().map(|n| n.bound));
            if target.is_some_and(|k| self.events.len() >= k) {
                return Ok(Stop::Incumbents);
            }
            if self.incumbent.is_some() {
                if let Some(n) = next.take() {
                    self.push(n);
                }
            }
        }
    }
}

fn search_min(p: &MilpProblem, config: &SolveConfig) -> Result<MilpSolution, MilpError> {
    let start = Instant::now();
    let n = p.num_vars();
    let mut lo = p.var_lower().to_vec();
    let mut up = p.var_upper().to_vec();
    for j in 0..n {
        if p.integrality()[j] {
            lo[j] = (lo[j] - config.integrality_tolerance).ceil();
            up[j] = (up[j] + config.integrality_tolerance).floor();
            if lo[j] > up[j] {
                return Ok(empty(SolveStatus::Infeasible, start));
            }
        }
    }
    let tol = LpTolerances::new(config.feasibility_tolerance.min(1e-9));
    let mut root_tab = Tableau::new(p, &lo, &up);
    let status = solve_checked(p, &mut root_tab, &lo, &up, &tol, false)?;
    let root_iters = root_tab.iterations;
    match status {
        LpStatus::Infeasible => return Ok(empty(SolveStatus::Infeasible, start)),
        LpStatus::Unbounded => {
            let mut s = empty(SolveStatus::Unbounded, start);
            s.objective_value = f64::NEG_INFINITY;
            return Ok(s);
        }
        LpStatus::Optimal => {}
    }
    let root_bound = root_tab.objective();
    let root = Rc::new(root_tab);
    let mut search = Search {
        p,
        config,
        tol,
        start,
        root: Rc::clone(&root),
        heap: BinaryHeap::new(),
        stored: 0,
        max_stored: (WARM_BUDGET_BYTES / (8 * p.num_rows().max(1) * (p.num_rows() + n))).max(2),
        seq: 0,
        nodes: 0,
        lp_iterations: root_iters,
        incumbent: None,
        events: Vec::new(),
        bound_trace: Vec::new(),
        pruned_bound: f64::INFINITY,
        work: None,
    };
    let root_node = Node {
        bound: root_bound,
        seq: 0,
        lo,
        up,
        warm: Some(root),
    };
    let stop = search.run(root_node)?;
    let dual_bound = search.global_bound(None);
    let status = match (&stop, &search.incumbent) {
        (Stop::Exhausted, Some(_)) => SolveStatus::Optimal,
        (Stop::Exhausted, None) => SolveStatus::Infeasible,
        (_, Some(_)) => SolveStatus::Feasible,
        (_, None) => SolveStatus::LimitReached,
    };
    let (values, objective_value) = match search.incumbent.take() {
        Some((x, obj)) => (Some(x), obj),
        None => (None, f64::NAN),
    };
    Ok(MilpSolution {
        status,
        values,
        objective_value,
        dual_bound: if status == SolveStatus::Infeasible {
            f64::INFINITY
        } else {
            dual_bound
        },
        node_count: search.nodes,
        wall_time: start.elapsed().as_secs_f64(),
        lp_iterations: search.lp_iterations,
        incumbents: search.events,
        bound_trace: search.bound_trace,
    })
}

/// Among the optima of `p` (value `best`), picks the lexicographically
/// smallest point by fixing variables one at a time under an objective cut.
fn lexicographic_refine(
    p: &MilpProblem,
    config: &SolveConfig,
    best: f64,
    mut sol: MilpSolution,
) -> Result<MilpSolution, MilpError> {
    let n = p.num_vars();
    let cut = SparseRow::new(p.objective().iter().copied().enumerate().collect());
    let slack = 1e-9 * best.abs().max(1.0);
    let base = p.with_extra_row(cut, best + slack)?;
    let inner = SolveConfig {
        tie_break: TieBreak::SearchOrder,
        stop_after_incumbents: None,
        gap_tolerance: 1e-9,
        ..config.clone()
    };
    let mut lo = base.var_lower().to_vec();
    let mut up = base.var_upper().to_vec();
    let mut nodes = sol.node_count;
    for j in 0..n {
        if !p.integrality()[j] {
            continue;
        }
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        let q = base
            .with_bounds(lo.clone(), up.clone())?
            .with_objective(e, Sense::Minimize)?;
        let s = search_min(&q, &inner)?;
        nodes += s.node_count;
        let Some(x) = s.values else {
            break;
        };
        lo[j] = x[j].round();
        up[j] = x[j].round();
    }
    let fixed = base.with_bounds(lo, up)?;
    let s = search_min(&fixed, &inner)?;
    if let Some(x) = s.values {
        sol.objective_value = p.objective_value(&x);
        sol.values = Some(x);
    }
    sol.node_count = nodes + s.node_count;
    Ok(sol)
}

/// Branch-and-bound with best-bound node selection and most-fractional branching.
pub fn solve_milp(problem: &MilpProblem, config: &SolveConfig) -> Result<MilpSolution, MilpError> {
    config.validate()?;
    let sign = problem.sense().sign();
    let p = problem.to_minimize();
    let mut sol = search_min(&p, config)?;
    if config.tie_break == TieBreak::Lexicographic && sol.status == SolveStatus::Optimal {
        let best = sol.objective_value;
        sol = lexicographic_refine(&p, config, best, sol)?;
    }
    if problem.sense() == Sense::Maximize {
        sol.objective_value *= sign;
        sol.dual_bound *= sign;
        for e in &mut sol.incumbents {
            e.objective *= sign;
        }
        for b in &mut sol.bound_trace {
            *b *= sign;
        }
    }
    Ok(sol)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn binary(c: Vec<f64>, rows: Vec<Vec<(usize, f64)>>, b: Vec<f64>) -> MilpProblem {
        MilpProblem::binary(
            c,
            rows.into_iter().map(SparseRow::new).collect(),
            b,
            Sense::Minimize,
        )
        .unwrap()
    }

    #[test]
    fn warm_and_cold_trees_agree() {
        let p = binary(
            vec![-5.0, -4.0, -3.0, -7.0, -2.0],
            vec![vec![(0, 2.0), (1, 3.0), (2, 1.0), (3, 4.0), (4, 1.5)]],
            vec![6.3],
        );
        let sol = solve_milp(&p, &SolveConfig::default()).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!((sol.objective_value + 12.0).abs() < 1e-9, "{sol:?}");
    }

    #[test]
    fn maximize_reports_original_sense() {
        let p = MilpProblem::binary(
            vec![2.0, 3.0, 4.0],
            vec![SparseRow::new(vec![(0, 3.0), (1, 4.0), (2, 5.0)])],
            vec![7.0],
            Sense::Maximize,
        )
        .unwrap();
        let sol = solve_milp(&p, &SolveConfig::default()).unwrap();
        assert!((sol.objective_value - 5.0).abs() < 1e-9);
        assert!(sol.dual_bound >= sol.objective_value - 1e-9);
    }

    #[test]
    fn node_limit_yields_incumbent_or_limit() {
        let n = 16;
        let c: Vec<f64> = (0..n).map(|j| -1.0 - 0.01 * j as f64).collect();
        let row: Vec<(usize, f64)> = (0..n).map(|j| (j, 2.0)).collect();
        let p = binary(c, vec![row], vec![n as f64 - 1.0]);
        let cfg = SolveConfig {
            node_limit: Some(1),
            ..SolveConfig::default()
        };
        let sol = solve_milp(&p, &cfg).unwrap();
        assert!(matches!(
            sol.status,
            SolveStatus::Feasible | SolveStatus::LimitReached
        ));
        assert_eq!(sol.node_count, 1);
    }
}
