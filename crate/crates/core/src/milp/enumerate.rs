use super::bnb::solve_lp;
use super::problem::MilpProblem;
use super::{MilpError, SolveConfig, SolveStatus, ENUMERATION_GUARD};

const TIE_REL: f64 = 1e-9;
const FEAS_TOL: f64 = 1e-9;

/// All optimal points of a problem, in lexicographic order.
#[derive(Debug, Clone, PartialEq)]
pub struct Enumeration {
    /// Optimal value in the problem's own sense; `None` if infeasible.
    pub value: Option<f64>,
    pub points: Vec<Vec<f64>>,
}

fn integer_domain(problem: &MilpProblem, guard: u64) -> Result<Vec<(usize, i64, i64)>, MilpError> {
    let mut domain = Vec::new();
    let mut size = 1.0f64;
    for j in 0..problem.num_vars() {
        if !problem.integrality()[j] {
            continue;
        }
        let lo = problem.var_lower()[j].ceil();
        let up = problem.var_upper()[j].floor();
        if !lo.is_finite() || !up.is_finite() {
            return Err(MilpError::SearchSpaceTooLarge {
                points: f64::INFINITY,
                guard,
            });
        }
        size *= (up - lo + 1.0).max(0.0);
        domain.push((j, lo as i64, up as i64));
    }
    if size > guard as f64 {
        return Err(MilpError::SearchSpaceTooLarge { points: size, guard });
    }
    Ok(domain)
}

/// Visits every integer assignment in lexicographic order (variable 0 most
/// significant), stopping early if `visit` returns an error.
fn odometer<F>(n: usize, domain: &[(usize, i64, i64)], mut visit: F) -> Result<(), MilpError>
where
    F: FnMut(&[f64]) -> Result<(), MilpError>,
{
    if domain.iter().any(|&(_, lo, up)| lo > up) {
        return Ok(());
    }
    let mut x = vec![0.0; n];
    for &(j, lo, _) in domain {
        x[j] = lo as f64;
    }
    loop {
        visit(&x)?;
        let mut k = domain.len();
        loop {
            if k == 0 {
                return Ok(());
            }
            k -= 1;
            let (j, lo, up) = domain[k];
            if (x[j] as i64) < up {
                x[j] += 1.0;
                break;
            }
            x[j] = lo as f64;
        }
    }
}

fn row_feasible(problem: &MilpProblem, x: &[f64]) -> bool {
    problem
        .rows()
        .iter()
        .zip(problem.rhs())
        .all(|(row, &b)| row.dot(x) <= b + FEAS_TOL * (1.0 + b.abs()))
}

/// Every feasible point of a pure-integer problem, in lexicographic order.
pub fn feasible_points(problem: &MilpProblem, guard: u64) -> Result<Vec<Vec<f64>>, MilpError> {
    if problem.integrality().iter().any(|&b| !b) {
        return Err(MilpError::InvalidData(
            "feasible_points requires every variable to be integer".into(),
        ));
    }
    let domain = integer_domain(problem, guard)?;
    let mut out = Vec::new();
    odometer(problem.num_vars(), &domain, |x| {
        if row_feasible(problem, x) {
            out.push(x.to_vec());
        }
        Ok(())
    })?;
    Ok(out)
}

pub fn enumerate_optimal(problem: &MilpProblem) -> Result<Enumeration, MilpError> {
    enumerate_optimal_with_guard(problem, ENUMERATION_GUARD)
}

/// Brute-force optimum. Continuous variables are optimized by an LP for each
/// integer assignment.
pub fn enumerate_optimal_with_guard(
    problem: &MilpProblem,
    guard: u64,
) -> Result<Enumeration, MilpError> {
    let p = problem.to_minimize();
    let sign = problem.sense().sign();
    let n = p.num_vars();
    let domain = integer_domain(&p, guard)?;
    let has_continuous = domain.len() < n;
    let lp_config = SolveConfig::default();

    let mut best = f64::INFINITY;
    let mut kept: Vec<(Vec<f64>, f64)> = Vec::new();
    let within = |v: f64, best: f64| v <= best + TIE_REL * best.abs().max(1.0);

    odometer(n, &domain, |x| {
        let candidate = if has_continuous {
            let mut lo = p.var_lower().to_vec();
            let mut up = p.var_upper().to_vec();
            for &(j, _, _) in &domain {
                lo[j] = x[j];
                up[j] = x[j];
            }
            let s = solve_lp(&p.with_bounds(lo, up)?, &lp_config)?;
            match s.status {
                SolveStatus::Optimal => s.values.map(|v| {
                    let obj = p.objective_value(&v);
                    (v, obj)
                }),
                SolveStatus::Unbounded => {
                    return Err(MilpError::InvalidData(
                        "continuous part is unbounded".into(),
                    ))
                }
                _ => None,
            }
        } else if row_feasible(&p, x) {
            Some((x.to_vec(), p.objective_value(x)))
        } else {
            None
        };
        if let Some((v, obj)) = candidate {
            if obj < best {
                best = obj;
                kept.retain(|(_, o)| within(*o, best));
            }
            if within(obj, best) {
                kept.push((v, obj));
            }
        }
        Ok(())
    })?;

    Ok(Enumeration {
        value: best.is_finite().then_some(sign * best),
        points: kept.into_iter().map(|(v, _)| v).collect(),
    })
}
