//! Dense bounded-variable simplex.
//!
//! Rows are `A x + s = b` with one slack `s_i ∈ [0, ∞)` per `≤` row, so the
//! slack basis is always a valid starting basis. Nonbasic columns sit at a
//! finite bound (or at zero when free). Phase 1 minimizes the sum of bound
//! infeasibilities of the basic variables and therefore works from any basis,
//! which is what lets branch-and-bound restart from a parent tableau with the
//! dual simplex and fall back to the primal when needed.

use super::problem::MilpProblem;
use super::MilpError;

const DEGENERATE_STEP: f64 = 1e-11;
const DEGENERATE_STREAK_FOR_BLAND: usize = 50;
const DROP_TOL: f64 = 1e-13;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum VarState {
    Basic,
    AtLower,
    AtUpper,
    FreeZero,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct LpTolerances {
    pub feasibility: f64,
    pub optimality: f64,
    pub pivot: f64,
}

impl LpTolerances {
    pub fn new(feasibility: f64) -> Self {
        Self {
            feasibility,
            optimality: 1e-9,
            pivot: 1e-9,
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Leave {
    Flip,
    Row(usize, VarState),
}

/// Simplex tableau `B⁻¹ [A I]` together with basic values and reduced costs.
#[derive(Debug)]
pub(crate) struct Tableau {
    n: usize,
    m: usize,
    nc: usize,
    t: Vec<f64>,
    beta: Vec<f64>,
    basis: Vec<usize>,
    row_of: Vec<usize>,
    state: Vec<VarState>,
    lo: Vec<f64>,
    up: Vec<f64>,
    cost: Vec<f64>,
    d: Vec<f64>,
    pub iterations: usize,
}

impl Clone for Tableau {
    fn clone(&self) -> Self {
        Self {
            n: self.n,
            m: self.m,
            nc: self.nc,
            t: self.t.clone(),
            beta: self.beta.clone(),
            basis: self.basis.clone(),
            row_of: self.row_of.clone(),
            state: self.state.clone(),
            lo: self.lo.clone(),
            up: self.up.clone(),
            cost: self.cost.clone(),
            d: self.d.clone(),
            iterations: self.iterations,
        }
    }

    fn clone_from(&mut self, src: &Self) {
        self.n = src.n;
        self.m = src.m;
        self.nc = src.nc;
        self.t.clone_from(&src.t);
        self.beta.clone_from(&src.beta);
        self.basis.clone_from(&src.basis);
        self.row_of.clone_from(&src.row_of);
        self.state.clone_from(&src.state);
        self.lo.clone_from(&src.lo);
        self.up.clone_from(&src.up);
        self.cost.clone_from(&src.cost);
        self.d.clone_from(&src.d);
        self.iterations = src.iterations;
    }
}

impl Tableau {
    /// Slack-basis tableau of `problem` (assumed in minimize form) with the
    /// given structural bounds.
    pub fn new(problem: &MilpProblem, lower: &[f64], upper: &[f64]) -> Self {
        let n = problem.num_vars();
        let m = problem.num_rows();
        let nc = n + m;
        let mut t = vec![0.0; m * nc];
        for (i, row) in problem.rows().iter().enumerate() {
            for &(j, v) in &row.entries {
                t[i * nc + j] = v;
            }
            t[i * nc + n + i] = 1.0;
        }
        let mut lo = Vec::with_capacity(nc);
        let mut up = Vec::with_capacity(nc);
        lo.extend_from_slice(lower);
        up.extend_from_slice(upper);
        lo.extend(std::iter::repeat_n(0.0, m));
        up.extend(std::iter::repeat_n(f64::INFINITY, m));
        let mut cost = problem.objective().to_vec();
        cost.extend(std::iter::repeat_n(0.0, m));

        let mut state = vec![VarState::Basic; nc];
        for j in 0..n {
            state[j] = if lo[j].is_finite() {
                VarState::AtLower
            } else if up[j].is_finite() {
                VarState::AtUpper
            } else {
                VarState::FreeZero
            };
        }
        let basis: Vec<usize> = (n..nc).collect();
        let mut row_of = vec![usize::MAX; nc];
        for (i, &b) in basis.iter().enumerate() {
            row_of[b] = i;
        }
        let mut tab = Self {
            n,
            m,
            nc,
            t,
            beta: vec![0.0; m],
            basis,
            row_of,
            state,
            lo,
            up,
            d: cost.clone(),
            cost,
            iterations: 0,
        };
        for (i, row) in problem.rows().iter().enumerate() {
            let nb: f64 = row
                .entries
                .iter()
                .map(|&(j, v)| v * tab.nonbasic_value(j))
                .sum();
            tab.beta[i] = problem.rhs()[i] - nb;
        }
        tab
    }

    fn nonbasic_value(&self, j: usize) -> f64 {
        match self.state[j] {
            VarState::AtLower => self.lo[j],
            VarState::AtUpper => self.up[j],
            VarState::FreeZero | VarState::Basic => 0.0,
        }
    }

    fn value(&self, j: usize) -> f64 {
        match self.state[j] {
            VarState::Basic => self.beta[self.row_of[j]],
            _ => self.nonbasic_value(j),
        }
    }

    /// Structural variable values.
    pub fn primal_values(&self) -> Vec<f64> {
        (0..self.n).map(|j| self.value(j)).collect()
    }

    pub fn objective(&self) -> f64 {
        (0..self.n).map(|j| self.cost[j] * self.value(j)).sum()
    }

    /// Reduced cost of a nonbasic structural and whether it sits at its upper bound.
    pub fn nonbasic_reduced_cost(&self, j: usize) -> Option<(f64, bool)> {
        match self.state[j] {
            VarState::AtLower => Some((self.d[j], false)),
            VarState::AtUpper => Some((self.d[j], true)),
            VarState::Basic | VarState::FreeZero => None,
        }
    }

    pub fn bounds(&self, j: usize) -> (f64, f64) {
        (self.lo[j], self.up[j])
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.t[i * self.nc + j]
    }

    /// Changes the bounds of structural `j`, keeping basic values consistent.
    pub fn set_bounds(&mut self, j: usize, lo: f64, up: f64) {
        let old = self.nonbasic_value(j);
        self.lo[j] = lo;
        self.up[j] = up;
        let new = match self.state[j] {
            VarState::Basic => return,
            VarState::AtLower if lo.is_finite() => lo,
            VarState::AtUpper if up.is_finite() => up,
            _ => {
                self.state[j] = if lo.is_finite() {
                    VarState::AtLower
                } else if up.is_finite() {
                    VarState::AtUpper
                } else {
                    VarState::FreeZero
                };
                self.nonbasic_value(j)
            }
        };
        let delta = new - old;
        if delta != 0.0 {
            for i in 0..self.m {
                let a = self.at(i, j);
                if a != 0.0 {
                    self.beta[i] -= a * delta;
                }
            }
        }
    }

    fn infeasibility(&self, i: usize, tol: f64) -> f64 {
        let b = self.basis[i];
        let v = self.beta[i];
        if v < self.lo[b] - tol {
            self.lo[b] - v
        } else if v > self.up[b] + tol {
            v - self.up[b]
        } else {
            0.0
        }
    }

    fn is_primal_feasible(&self, tol: f64) -> bool {
        (0..self.m).all(|i| self.infeasibility(i, tol) == 0.0)
    }

    fn is_dual_feasible(&self, tol: f64) -> bool {
        (0..self.nc).all(|j| match self.state[j] {
            VarState::Basic => true,
            _ if self.lo[j] == self.up[j] => true,
            VarState::AtLower => self.d[j] >= -tol,
            VarState::AtUpper => self.d[j] <= tol,
            VarState::FreeZero => self.d[j].abs() <= tol,
        })
    }

    fn recompute_reduced_costs(&mut self) {
        self.d.copy_from_slice(&self.cost);
        for i in 0..self.m {
            let cb = self.cost[self.basis[i]];
            if cb != 0.0 {
                let row = &self.t[i * self.nc..(i + 1) * self.nc];
                for (dj, &a) in self.d.iter_mut().zip(row) {
                    *dj -= cb * a;
                }
            }
        }
        for &b in &self.basis {
            self.d[b] = 0.0;
        }
    }

    fn pivot(&mut self, r: usize, q: usize) {
        let nc = self.nc;
        let piv = self.t[r * nc + q];
        let inv = 1.0 / piv;
        let mut nz: Vec<usize> = Vec::with_capacity(nc);
        {
            let row = &mut self.t[r * nc..(r + 1) * nc];
            for (k, v) in row.iter_mut().enumerate() {
                if *v != 0.0 {
                    *v *= inv;
                    if v.abs() < DROP_TOL {
                        *v = 0.0;
                    } else {
                        nz.push(k);
                    }
                }
            }
            row[q] = 1.0;
        }
        let (before, rest) = self.t.split_at_mut(r * nc);
        let (prow, after) = rest.split_at_mut(nc);
        let eliminate = |row: &mut [f64]| {
            let f = row[q];
            if f != 0.0 {
                for &k in &nz {
                    let v = row[k] - f * prow[k];
                    row[k] = if v.abs() < DROP_TOL { 0.0 } else { v };
                }
                row[q] = 0.0;
            }
        };
        before.chunks_exact_mut(nc).for_each(eliminate);
        after.chunks_exact_mut(nc).for_each(eliminate);
        let f = self.d[q];
        if f != 0.0 {
            for &k in &nz {
                self.d[k] -= f * prow[k];
            }
            self.d[q] = 0.0;
        }
        let leaving = self.basis[r];
        self.row_of[leaving] = usize::MAX;
        self.basis[r] = q;
        self.row_of[q] = r;
        self.state[q] = VarState::Basic;
        self.iterations += 1;
    }

    fn is_fixed(&self, j: usize) -> bool {
        self.lo[j] == self.up[j]
    }

    /// Entering column and direction for the given reduced costs.
    fn choose_entering(&self, d: &[f64], tol: f64, bland: bool) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64, f64)> = None;
        for j in 0..self.nc {
            if self.is_fixed(j) {
                continue;
            }
            let dj = d[j];
            let dir = match self.state[j] {
                VarState::Basic => continue,
                VarState::AtLower if dj < -tol => 1.0,
                VarState::AtUpper if dj > tol => -1.0,
                VarState::FreeZero if dj.abs() > tol => -dj.signum(),
                _ => continue,
            };
            if bland {
                return Some((j, dir));
            }
            let score = dj.abs();
            if best.is_none_or(|(_, _, s)| score > s) {
                best = Some((j, dir, score));
            }
        }
        best.map(|(j, dir, _)| (j, dir))
    }

    /// Bounded ratio test. In phase 1 infeasible basics only block once they
    /// reach the bound they violate.
    fn ratio_test(
        &self,
        q: usize,
        dir: f64,
        tol: &LpTolerances,
        phase1: bool,
        bland: bool,
    ) -> Option<(f64, Leave)> {
        let mut best_t = if self.lo[q].is_finite() && self.up[q].is_finite() {
            self.up[q] - self.lo[q]
        } else {
            f64::INFINITY
        };
        let mut best_leave = Leave::Flip;
        let mut best_piv = f64::INFINITY;
        for i in 0..self.m {
            let a = self.at(i, q);
            if a.abs() <= tol.pivot {
                continue;
            }
            let rate = -dir * a;
            let b = self.basis[i];
            let v = self.beta[i];
            let (lim, to) = if phase1 && v < self.lo[b] - tol.feasibility {
                if rate > 0.0 {
                    ((self.lo[b] - v) / rate, VarState::AtLower)
                } else {
                    continue;
                }
            } else if phase1 && v > self.up[b] + tol.feasibility {
                if rate < 0.0 {
                    ((v - self.up[b]) / -rate, VarState::AtUpper)
                } else {
                    continue;
                }
            } else if rate < 0.0 {
                if self.lo[b].is_finite() {
                    (((v - self.lo[b]) / -rate).max(0.0), VarState::AtLower)
                } else {
                    continue;
                }
            } else if self.up[b].is_finite() {
                (((self.up[b] - v) / rate).max(0.0), VarState::AtUpper)
            } else {
                continue;
            };
            let better = if lim < best_t - 1e-12 {
                true
            } else if lim <= best_t + 1e-12 {
                match best_leave {
                    Leave::Flip => false,
                    Leave::Row(r, _) => {
                        if bland {
                            b < self.basis[r]
                        } else {
                            a.abs() > best_piv
                        }
                    }
                }
            } else {
                false
            };
            if better {
                best_t = lim;
                best_leave = Leave::Row(i, to);
                best_piv = a.abs();
            }
        }
        if best_t.is_finite() {
            Some((best_t, best_leave))
        } else {
            None
        }
    }

    fn apply_step(&mut self, q: usize, dir: f64, step: f64, leave: Leave) {
        let entering_old = self.nonbasic_value(q);
        if step != 0.0 {
            for i in 0..self.m {
                let a = self.at(i, q);
                if a != 0.0 {
                    self.beta[i] -= dir * a * step;
                }
            }
        }
        match leave {
            Leave::Flip => {
                self.state[q] = if dir > 0.0 {
                    VarState::AtUpper
                } else {
                    VarState::AtLower
                };
            }
            Leave::Row(r, to) => {
                let leaving = self.basis[r];
                self.state[leaving] = to;
                self.beta[r] = entering_old + dir * step;
                self.pivot(r, q);
            }
        }
    }

    fn iteration_limit(&self) -> usize {
        50 * (self.m + self.nc) + 1000
    }

    fn phase1(&mut self, tol: &LpTolerances) -> Result<bool, MilpError> {
        let mut degenerate = 0usize;
        let mut d1 = vec![0.0; self.nc];
        let limit = self.iterations + self.iteration_limit();
        loop {
            let mut weights: Vec<(usize, f64)> = Vec::new();
            for i in 0..self.m {
                let b = self.basis[i];
                let v = self.beta[i];
                if v < self.lo[b] - tol.feasibility {
                    weights.push((i, -1.0));
                } else if v > self.up[b] + tol.feasibility {
                    weights.push((i, 1.0));
                }
            }
            if weights.is_empty() {
                return Ok(true);
            }
            if self.iterations > limit {
                return Err(MilpError::NumericalFailure(
                    "phase 1 iteration limit exceeded".into(),
                ));
            }
            d1.iter_mut().for_each(|v| *v = 0.0);
            for &(i, w) in &weights {
                let row = &self.t[i * self.nc..(i + 1) * self.nc];
                for (dj, &a) in d1.iter_mut().zip(row) {
                    *dj -= w * a;
                }
            }
            for &b in &self.basis {
                d1[b] = 0.0;
            }
            let bland = degenerate > DEGENERATE_STREAK_FOR_BLAND;
            let Some((q, dir)) = self.choose_entering(&d1, tol.optimality, bland) else {
                return Ok(false);
            };
            let Some((step, leave)) = self.ratio_test(q, dir, tol, true, bland) else {
                return Err(MilpError::NumericalFailure(
                    "phase 1 ratio test found no blocking variable".into(),
                ));
            };
            degenerate = if step < DEGENERATE_STEP {
                degenerate + 1
            } else {
                0
            };
            self.apply_step(q, dir, step, leave);
        }
    }

    fn phase2(&mut self, tol: &LpTolerances) -> Result<LpStatus, MilpError> {
        let mut degenerate = 0usize;
        let limit = self.iterations + self.iteration_limit();
        loop {
            if self.iterations > limit {
                return Err(MilpError::NumericalFailure(
                    "phase 2 iteration limit exceeded".into(),
                ));
            }
            let bland = degenerate > DEGENERATE_STREAK_FOR_BLAND;
            let d = std::mem::take(&mut self.d);
            let entering = self.choose_entering(&d, tol.optimality, bland);
            self.d = d;
            let Some((q, dir)) = entering else {
                return Ok(LpStatus::Optimal);
            };
            let Some((step, leave)) = self.ratio_test(q, dir, tol, false, bland) else {
                return Ok(LpStatus::Unbounded);
            };
            degenerate = if step < DEGENERATE_STEP {
                degenerate + 1
            } else {
                0
            };
            self.apply_step(q, dir, step, leave);
        }
    }

    fn dual(&mut self, tol: &LpTolerances) -> Result<LpStatus, MilpError> {
        let mut degenerate = 0usize;
        let limit = self.iterations + self.iteration_limit();
        loop {
            if self.iterations > limit {
                return Err(MilpError::NumericalFailure(
                    "dual simplex iteration limit exceeded".into(),
                ));
            }
            let bland = degenerate > DEGENERATE_STREAK_FOR_BLAND;
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..self.m {
                let inf = self.infeasibility(i, tol.feasibility);
                if inf > 0.0 {
                    let better = match leave {
                        None => true,
                        Some((r, best)) => {
                            if bland {
                                self.basis[i] < self.basis[r]
                            } else {
                                inf > best
                            }
                        }
                    };
                    if better {
                        leave = Some((i, inf));
                    }
                }
            }
            let Some((r, _)) = leave else {
                return Ok(LpStatus::Optimal);
            };
            let b = self.basis[r];
            let below = self.beta[r] < self.lo[b];
            let target = if below { self.lo[b] } else { self.up[b] };
            let mut best: Option<(usize, f64, f64)> = None;
            for j in 0..self.nc {
                if self.state[j] == VarState::Basic || self.is_fixed(j) {
                    continue;
                }
                let a = self.at(r, j);
                if a.abs() <= tol.pivot {
                    continue;
                }
                // moving j in its admissible direction must push β_r toward `target`
                let ok = match self.state[j] {
                    VarState::AtLower => (a < 0.0) == below,
                    VarState::AtUpper => (a > 0.0) == below,
                    VarState::FreeZero => true,
                    VarState::Basic => false,
                };
                if !ok {
                    continue;
                }
                let ratio = self.d[j].abs() / a.abs();
                let better = match best {
                    None => true,
                    Some((_, br, ba)) => {
                        if ratio < br - 1e-12 {
                            true
                        } else if ratio <= br + 1e-12 {
                            !bland && a.abs() > ba
                        } else {
                            false
                        }
                    }
                };
                if better {
                    best = Some((j, ratio, a.abs()));
                }
            }
            let Some((q, ratio, _)) = best else {
                return Ok(LpStatus::Infeasible);
            };
            degenerate = if ratio < DEGENERATE_STEP {
                degenerate + 1
            } else {
                0
            };
            let a_rq = self.at(r, q);
            let dx = (self.beta[r] - target) / a_rq;
            let entering_old = self.nonbasic_value(q);
            for i in 0..self.m {
                let a = self.at(i, q);
                if a != 0.0 {
                    self.beta[i] -= a * dx;
                }
            }
            self.state[b] = if below {
                VarState::AtLower
            } else {
                VarState::AtUpper
            };
            self.beta[r] = entering_old + dx;
            self.pivot(r, q);
        }
    }

    /// Full solve from the current basis: phase 1 then phase 2.
    pub fn solve_primal(&mut self, tol: &LpTolerances) -> Result<LpStatus, MilpError> {
        if !self.phase1(tol)? {
            return Ok(LpStatus::Infeasible);
        }
        self.recompute_reduced_costs();
        self.phase2(tol)
    }

    /// Re-solve after bound changes, using the dual simplex when the current
    /// basis is still dual feasible.
    pub fn reoptimize(&mut self, tol: &LpTolerances) -> Result<LpStatus, MilpError> {
        if self.is_primal_feasible(tol.feasibility) {
            return self.phase2(tol);
        }
        if self.is_dual_feasible(tol.optimality * 10.0) {
            match self.dual(tol)? {
                LpStatus::Optimal => self.phase2(tol),
                other => Ok(other),
            }
        } else {
            self.solve_primal(tol)
        }
    }
}
