//! Log-barrier interior-point solver for the small dense subproblems.
//!
//! Phase I finds a strictly feasible point (minimizing the max constraint
//! value with an auxiliary slack); phase II follows the central path with
//! damped Newton steps and backtracking line search, barrier parameter x10
//! per outer stage.

use super::{ConvexError, ConvexSubproblem, SolveReport, SolveStatus};
use nalgebra::{Cholesky, DMatrix, DVector};

#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    /// Total Newton/descent step cap across both phases.
    pub max_newton: usize,
    /// Relative duality-gap target.
    pub gap_tol: f64,
    /// Newton decrement^2 / 2 threshold per centering stage.
    pub newton_tol: f64,
    /// Strict feasibility margin required to skip phase I.
    pub feas_margin: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { max_newton: 200, gap_tol: 1e-9, newton_tol: 1e-10, feas_margin: 1e-9 }
    }
}

struct Barrier<'a> {
    sub: &'a ConvexSubproblem,
    /// Barrier multiplier on the objective.
    t: f64,
    /// Index of a phase-I slack variable, if present.
    slack: Option<usize>,
}

impl Barrier<'_> {
    /// g_j values with the phase-I slack subtracted from general constraints.
    fn value(&self, w: &[f64]) -> f64 {
        let mut phi = match self.slack {
            Some(s) => self.t * w[s],
            None => self.t * self.sub.objective_value(w),
        };
        let shift = self.slack.map_or(0.0, |s| w[s]);
        for c in &self.sub.constraints {
            let g = c.eval(w) - shift;
            if g >= 0.0 {
                return f64::INFINITY;
            }
            phi -= (-g).ln();
        }
        for (i, &(lo, hi)) in self.sub.bounds.iter().enumerate() {
            if w[i] <= lo || w[i] >= hi {
                return f64::INFINITY;
            }
            phi -= (w[i] - lo).ln() + (hi - w[i]).ln();
        }
        phi
    }

    fn is_strictly_feasible(&self, w: &[f64]) -> bool {
        self.value(w).is_finite()
    }

    fn grad_hess(&self, w: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
        let n = w.len();
        let mut grad = vec![0.0; n];
        let mut hdiag = vec![0.0; n];
        let mut hess = DMatrix::zeros(n, n);
        match self.slack {
            Some(s) => grad[s] += self.t,
            None => {
                for &(i, c) in &self.sub.objective {
                    grad[i] += self.t * c;
                }
            }
        }
        let shift = self.slack.map_or(0.0, |s| w[s]);
        let mut cg = vec![0.0; n];
        for c in &self.sub.constraints {
            let g = c.eval(w) - shift;
            let inv = 1.0 / (-g);
            cg.iter_mut().for_each(|x| *x = 0.0);
            c.add_gradient(w, 1.0, &mut cg);
            if let Some(s) = self.slack {
                cg[s] -= 1.0;
            }
            for i in 0..n {
                if cg[i] != 0.0 {
                    grad[i] += inv * cg[i];
                    for j in 0..n {
                        if cg[j] != 0.0 {
                            hess[(i, j)] += inv * inv * cg[i] * cg[j];
                        }
                    }
                }
            }
            c.add_hessian_diag(w, inv, &mut hdiag);
        }
        for (i, &(lo, hi)) in self.sub.bounds.iter().enumerate() {
            let a = w[i] - lo;
            let b = hi - w[i];
            grad[i] += -1.0 / a + 1.0 / b;
            hdiag[i] += 1.0 / (a * a) + 1.0 / (b * b);
        }
        for i in 0..n {
            hess[(i, i)] += hdiag[i];
        }
        (DVector::from_vec(grad), hess)
    }
}

/// One centering stage: damped Newton until the decrement is small.
/// Returns the number of steps taken, or None when the cap is hit.
fn center(
    barrier: &Barrier,
    w: &mut Vec<f64>,
    opts: &SolverOptions,
    budget: &mut usize,
    early_exit: &mut impl FnMut(&[f64]) -> bool,
) -> Result<bool, ConvexError> {
    loop {
        if *budget == 0 {
            return Ok(false);
        }
        if early_exit(w) {
            return Ok(true);
        }
        let (grad, hess) = barrier.grad_hess(w);
        let step = cholesky_solve(&hess, &grad)?;
        let decrement2 = grad.dot(&step);
        if decrement2 / 2.0 <= opts.newton_tol {
            return Ok(true);
        }
        *budget -= 1;
        // Backtrack into the domain, then Armijo.
        let phi0 = barrier.value(w);
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let cand: Vec<f64> =
                w.iter().zip(step.iter()).map(|(wi, si)| wi - alpha * si).collect();
            let phi = barrier.value(&cand);
            if phi.is_finite() && phi <= phi0 - 0.25 * alpha * decrement2 {
                *w = cand;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            // No productive step left at this centering accuracy.
            return Ok(true);
        }
    }
}

fn cholesky_solve(hess: &DMatrix<f64>, grad: &DVector<f64>) -> Result<DVector<f64>, ConvexError> {
    let mut ridge = 0.0;
    let scale = hess.diagonal().amax().max(1e-30);
    for _ in 0..8 {
        let mut h = hess.clone();
        if ridge > 0.0 {
            for i in 0..h.nrows() {
                h[(i, i)] += ridge;
            }
        }
        if let Some(chol) = Cholesky::new(h) {
            return Ok(chol.solve(grad));
        }
        ridge = if ridge == 0.0 { scale * 1e-14 } else { ridge * 100.0 };
    }
    Err(ConvexError::LinearAlgebra)
}

/// Finds a strictly feasible scaled point, running phase I when the hint
/// (or box centers) is not already interior with margin.
fn strict_start(
    sub: &ConvexSubproblem,
    opts: &SolverOptions,
    budget: &mut usize,
) -> Result<Vec<f64>, ConvexError> {
    let n = sub.num_vars;
    let mut w: Vec<f64> = match &sub.start_hint {
        Some(h) => h.clone(),
        None => sub.bounds.iter().map(|&(lo, hi)| 0.5 * (lo + hi)).collect(),
    };
    for (i, &(lo, hi)) in sub.bounds.iter().enumerate() {
        let span = hi - lo;
        w[i] = w[i].clamp(lo + 1e-7 * span, hi - 1e-7 * span);
    }
    let worst = sub.constraints.iter().map(|c| c.eval(&w)).fold(f64::NEG_INFINITY, f64::max);
    if worst <= -opts.feas_margin {
        return Ok(w);
    }

    // Phase I over (w, s): minimize s subject to g_j(w) <= s.
    let mut aux = sub.clone();
    let s0 = if worst.is_finite() { worst.abs() + 1.0 } else { 1.0 };
    if !worst.is_finite() {
        // Hint sits outside the reciprocal domain; restart from box centers.
        for (i, &(lo, hi)) in sub.bounds.iter().enumerate() {
            w[i] = 0.5 * (lo + hi);
        }
    }
    let s_start = sub
        .constraints
        .iter()
        .map(|c| c.eval(&w))
        .fold(f64::NEG_INFINITY, f64::max)
        .max(0.0)
        + s0;
    aux.num_vars = n + 1;
    aux.var_names.push("phase1_slack".into());
    aux.var_scales.push(1.0);
    aux.bounds.push((-10.0 - s_start, 2.0 * s_start + 10.0));
    aux.objective = vec![(n, 1.0)];
    aux.obj_constant = 0.0;
    let mut v = w.clone();
    v.push(s_start);

    let mut t = 1.0;
    let m = aux.constraints.len() as f64 + 2.0 * aux.num_vars as f64;
    let target = -opts.feas_margin.max(1e-9) * 10.0;
    loop {
        let barrier = Barrier { sub: &aux, t, slack: Some(n) };
        let done = center(&barrier, &mut v, opts, budget, &mut |v: &[f64]| v[n] <= target)?;
        if v[n] <= target {
            let mut out = v.clone();
            out.truncate(n);
            return Ok(out);
        }
        if !done || m / t < 1e-12 {
            break;
        }
        t *= 10.0;
        if t > 1e14 {
            break;
        }
    }
    if v[n] <= -1e-12 {
        let mut out = v;
        out.truncate(n);
        return Ok(out);
    }
    Err(ConvexError::Infeasible {
        detail: Some(format!("phase I residual {:.3e} (no interior point found)", v[n])),
    })
}

pub fn solve(sub: &ConvexSubproblem) -> Result<SolveReport, ConvexError> {
    solve_with(sub, &SolverOptions::default())
}

pub fn solve_with(sub: &ConvexSubproblem, opts: &SolverOptions) -> Result<SolveReport, ConvexError> {
    let mut budget = opts.max_newton;
    let mut w = strict_start(sub, opts, &mut budget)?;
    let m = (sub.constraints.len() + 2 * sub.num_vars) as f64;
    let mut t: f64 = 1.0;
    let mut completed = true;
    loop {
        let barrier = Barrier { sub, t, slack: None };
        debug_assert!(barrier.is_strictly_feasible(&w));
        let done = center(&barrier, &mut w, opts, &mut budget, &mut |_| false)?;
        if !done {
            completed = false;
            break;
        }
        let obj = sub.objective_value(&w);
        if m / t <= opts.gap_tol * obj.abs().max(1.0) {
            break;
        }
        t *= 10.0;
    }
    let violation = sub.max_violation(&w);
    // Scaled stationarity residual of the barrier optimality condition.
    let barrier = Barrier { sub, t, slack: None };
    let (grad, _) = barrier.grad_hess(&w);
    let obj_norm = sub.objective.iter().map(|&(_, c)| c * c).sum::<f64>().sqrt().max(1.0);
    let kkt = grad.amax() / (t * obj_norm);
    let status = if completed { SolveStatus::Optimal } else { SolveStatus::MaxIter };
    Ok(SolveReport {
        point: sub.to_physical(&w),
        objective: sub.objective_value(&w),
        max_violation: violation,
        kkt_residual: kkt,
        iterations: opts.max_newton - budget,
        status,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::convex::{Constraint, ConstraintKind};
    use approx::assert_relative_eq;

    fn linear_constraint(terms: Vec<(usize, f64)>, rhs: f64) -> Constraint {
        Constraint {
            kind: ConstraintKind::Linear,
            label: "lin".into(),
            constant: -rhs,
            linear: terms,
            quadratic: vec![],
            reciprocal: vec![],
        }
    }

    #[test]
    fn epigraph_floor() {
        // min t subject to t >= 3.
        let sub = ConvexSubproblem {
            num_vars: 1,
            var_names: vec!["t".into()],
            var_scales: vec![1.0],
            bounds: vec![(0.0, 100.0)],
            objective: vec![(0, 1.0)],
            obj_constant: 0.0,
            constraints: vec![linear_constraint(vec![(0, -1.0)], -3.0)],
            expansion: None,
            start_hint: None,
        };
        let rep = solve(&sub).unwrap();
        assert_eq!(rep.status, SolveStatus::Optimal);
        assert_relative_eq!(rep.objective, 3.0, max_relative = 1e-6);
        assert!(rep.max_violation <= 1e-8);
    }

    #[test]
    fn simple_lp_vertex() {
        // min -x - 2y s.t. x + y <= 1, boxes [0, 1]: optimum (0, 1), value -2.
        let sub = ConvexSubproblem {
            num_vars: 2,
            var_names: vec!["x".into(), "y".into()],
            var_scales: vec![1.0, 1.0],
            bounds: vec![(0.0, 1.0), (0.0, 1.0)],
            objective: vec![(0, -1.0), (1, -2.0)],
            obj_constant: 0.0,
            constraints: vec![linear_constraint(vec![(0, 1.0), (1, 1.0)], 1.0)],
            expansion: None,
            start_hint: None,
        };
        let rep = solve(&sub).unwrap();
        assert_relative_eq!(rep.objective, -2.0, epsilon = 1e-6);
        assert_relative_eq!(rep.point[1], 1.0, epsilon = 1e-5);
    }

    #[test]
    fn quadratic_plus_reciprocal() {
        // min t s.t. 1/x + x^2 <= t, x in [0.1, 10]: optimum at x = (1/2)^{1/3},
        // t* = 1/x + x^2.
        let sub = ConvexSubproblem {
            num_vars: 2,
            var_names: vec!["x".into(), "t".into()],
            var_scales: vec![1.0, 1.0],
            bounds: vec![(0.1, 10.0), (0.0, 1e3)],
            objective: vec![(1, 1.0)],
            obj_constant: 0.0,
            constraints: vec![Constraint {
                kind: ConstraintKind::Epigraph,
                label: "epi".into(),
                constant: 0.0,
                linear: vec![(1, -1.0)],
                quadratic: vec![(0, 1.0)],
                reciprocal: vec![(0, 1.0)],
            }],
            expansion: None,
            start_hint: None,
        };
        let rep = solve(&sub).unwrap();
        let xs = 0.5f64.powf(1.0 / 3.0);
        assert_relative_eq!(rep.objective, 1.0 / xs + xs * xs, max_relative = 1e-6);
        assert_relative_eq!(rep.point[0], xs, max_relative = 1e-4);
    }

    #[test]
    fn detects_infeasible() {
        // x <= -1 with x in [0, 1] is infeasible.
        let sub = ConvexSubproblem {
            num_vars: 1,
            var_names: vec!["x".into()],
            var_scales: vec![1.0],
            bounds: vec![(0.0, 1.0)],
            objective: vec![(0, 1.0)],
            obj_constant: 0.0,
            constraints: vec![linear_constraint(vec![(0, 1.0)], -1.0)],
            expansion: None,
            start_hint: None,
        };
        assert!(matches!(solve(&sub), Err(ConvexError::Infeasible { .. })));
    }

    #[test]
    fn grid_oracle_two_vars() {
        // min t s.t. a/x + b/y <= t, x^2 + y^2 <= 1, boxes (0, 1].
        let (a, b) = (1.0, 2.0);
        let sub = ConvexSubproblem {
            num_vars: 3,
            var_names: vec!["x".into(), "y".into(), "t".into()],
            var_scales: vec![1.0, 1.0, 1.0],
            bounds: vec![(0.0, 1.0), (0.0, 1.0), (0.0, 1e4)],
            objective: vec![(2, 1.0)],
            obj_constant: 0.0,
            constraints: vec![
                Constraint {
                    kind: ConstraintKind::Epigraph,
                    label: "epi".into(),
                    constant: 0.0,
                    linear: vec![(2, -1.0)],
                    quadratic: vec![],
                    reciprocal: vec![(0, a), (1, b)],
                },
                Constraint {
                    kind: ConstraintKind::ConvexQuadratic,
                    label: "ball".into(),
                    constant: -1.0,
                    linear: vec![],
                    quadratic: vec![(0, 1.0), (1, 1.0)],
                    reciprocal: vec![],
                },
            ],
            expansion: None,
            start_hint: None,
        };
        let rep = solve(&sub).unwrap();
        // 401 x 401 grid oracle.
        let mut best = f64::INFINITY;
        for i in 1..=401 {
            for j in 1..=401 {
                let x = i as f64 / 401.0;
                let y = j as f64 / 401.0;
                if x * x + y * y <= 1.0 {
                    best = best.min(a / x + b / y);
                }
            }
        }
        assert!((rep.objective - best).abs() / best < 1e-3, "{} vs {}", rep.objective, best);
    }
}
