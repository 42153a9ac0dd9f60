//! Convex subproblem construction and solving: epigraph min-max
//! reformulation, SCA surrogates (bilinear upper bound, log-rate lower
//! bound), and a log-barrier interior-point solver for the resulting small
//! dense problems.

mod build;
mod solver;

pub use build::{
    build_leaf_subproblem, build_relay_subproblem, build_routing_lp, LeafProblem, RelayProblem,
    RoutingLp,
};
pub use solver::{solve, solve_with, SolverOptions};

use std::fmt;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConvexError {
    #[error("nonpositive expansion point: {name} = {value}")]
    BadExpansion { name: &'static str, value: f64 },
    #[error("subproblem infeasible{}", .detail.as_deref().map(|d| format!(": {d}")).unwrap_or_default())]
    Infeasible { detail: Option<String> },
    #[error("expansion point infeasible for {constraint}; restore feasibility before building")]
    ExpansionInfeasible { constraint: String },
    #[error("linear algebra failure in Newton step")]
    LinearAlgebra,
    #[error("cost evaluation failed: {0}")]
    Cost(#[from] crate::cost::CostError),
}

/// SCA upper bound on the bilinear term x*p around (x_i, p_i):
/// (1/2)(p_i/x_i) x^2 + (1/2)(x_i/p_i) p^2. Tight at the expansion point.
pub fn bilinear_upper(x: f64, p: f64, x_i: f64, p_i: f64) -> Result<f64, ConvexError> {
    if x_i <= 0.0 {
        return Err(ConvexError::BadExpansion { name: "x_i", value: x_i });
    }
    if p_i <= 0.0 {
        return Err(ConvexError::BadExpansion { name: "p_i", value: p_i });
    }
    Ok(0.5 * (p_i / x_i) * x * x + 0.5 * (x_i / p_i) * p * p)
}

/// SCA lower bound on ln(1 + z) around z_i:
/// ln(1 + z_i) + z_i/(z_i + 1) - (z_i^2/(z_i + 1)) / z. Tight at z = z_i.
pub fn log_rate_lower(z: f64, z_i: f64) -> Result<f64, ConvexError> {
    if z <= 0.0 {
        return Err(ConvexError::BadExpansion { name: "z", value: z });
    }
    if z_i <= 0.0 {
        return Err(ConvexError::BadExpansion { name: "z_i", value: z_i });
    }
    Ok((1.0 + z_i).ln() + z_i / (z_i + 1.0) - z_i * z_i / (z_i + 1.0) / z)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstraintKind {
    Linear,
    ConvexQuadratic,
    LogRateLowerBound,
    Epigraph,
}

/// One smooth convex constraint g(w) <= 0 in the solver's scaled variables:
/// g(w) = constant + sum lin_i w_i + sum quad_i w_i^2 + sum rec_i / w_i,
/// with quad_i, rec_i >= 0 (reciprocal terms require w_i > 0).
#[derive(Debug, Clone)]
pub struct Constraint {
    pub kind: ConstraintKind,
    pub label: String,
    pub constant: f64,
    pub linear: Vec<(usize, f64)>,
    pub quadratic: Vec<(usize, f64)>,
    pub reciprocal: Vec<(usize, f64)>,
}

impl Constraint {
    pub fn eval(&self, w: &[f64]) -> f64 {
        let mut g = self.constant;
        for &(i, c) in &self.linear {
            g += c * w[i];
        }
        for &(i, c) in &self.quadratic {
            g += c * w[i] * w[i];
        }
        for &(i, c) in &self.reciprocal {
            if w[i] <= 0.0 {
                return f64::INFINITY;
            }
            g += c / w[i];
        }
        g
    }

    /// Adds the constraint gradient into `out`.
    pub fn add_gradient(&self, w: &[f64], scale: f64, out: &mut [f64]) {
        for &(i, c) in &self.linear {
            out[i] += scale * c;
        }
        for &(i, c) in &self.quadratic {
            out[i] += scale * 2.0 * c * w[i];
        }
        for &(i, c) in &self.reciprocal {
            out[i] -= scale * c / (w[i] * w[i]);
        }
    }

    pub fn gradient(&self, w: &[f64], n: usize) -> Vec<f64> {
        let mut g = vec![0.0; n];
        self.add_gradient(w, 1.0, &mut g);
        g
    }

    /// Diagonal Hessian of the constraint.
    pub fn add_hessian_diag(&self, w: &[f64], scale: f64, out: &mut [f64]) {
        for &(i, c) in &self.quadratic {
            out[i] += scale * 2.0 * c;
        }
        for &(i, c) in &self.reciprocal {
            out[i] += scale * 2.0 * c / (w[i] * w[i] * w[i]);
        }
    }
}

/// A solver-neutral convex subproblem over scaled variables w; the physical
/// point is `scale_i * w_i`. The objective is linear: obj = c . w + const
/// (already expressed in physical units by the builders).
#[derive(Debug, Clone)]
pub struct ConvexSubproblem {
    pub num_vars: usize,
    pub var_names: Vec<String>,
    pub var_scales: Vec<f64>,
    /// Box bounds per variable in scaled space.
    pub bounds: Vec<(f64, f64)>,
    pub objective: Vec<(usize, f64)>,
    pub obj_constant: f64,
    pub constraints: Vec<Constraint>,
    /// SCA expansion point in physical units, for reporting.
    pub expansion: Option<Vec<f64>>,
    /// Suggested strictly feasible start in scaled space.
    pub start_hint: Option<Vec<f64>>,
}

impl ConvexSubproblem {
    pub fn objective_value(&self, w: &[f64]) -> f64 {
        self.obj_constant + self.objective.iter().map(|&(i, c)| c * w[i]).sum::<f64>()
    }

    pub fn to_physical(&self, w: &[f64]) -> Vec<f64> {
        w.iter().zip(&self.var_scales).map(|(wi, s)| wi * s).collect()
    }

    /// Max constraint violation at a scaled point (box + general).
    pub fn max_violation(&self, w: &[f64]) -> f64 {
        let mut v: f64 = 0.0;
        for (i, &(lo, hi)) in self.bounds.iter().enumerate() {
            v = v.max(lo - w[i]).max(w[i] - hi);
        }
        for c in &self.constraints {
            v = v.max(c.eval(w));
        }
        v
    }
}

/// Plain-text canonical dump (variables then constraint rows) for external
/// verification.
impl fmt::Display for ConvexSubproblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "minimize {:+e} + sum:", self.obj_constant)?;
        for &(i, c) in &self.objective {
            writeln!(f, "  {:+e} * {}", c, self.var_names[i])?;
        }
        writeln!(f, "variables (scaled; physical = scale * var):")?;
        for i in 0..self.num_vars {
            writeln!(
                f,
                "  {} in [{:e}, {:e}] scale={:e}  (box)",
                self.var_names[i], self.bounds[i].0, self.bounds[i].1, self.var_scales[i]
            )?;
        }
        writeln!(f, "constraints (g <= 0):")?;
        for c in &self.constraints {
            write!(f, "  [{:?}] {}: {:+e}", c.kind, c.label, c.constant)?;
            for &(i, v) in &c.linear {
                write!(f, " {:+e}*{}", v, self.var_names[i])?;
            }
            for &(i, v) in &c.quadratic {
                write!(f, " {:+e}*{}^2", v, self.var_names[i])?;
            }
            for &(i, v) in &c.reciprocal {
                write!(f, " {:+e}/{}", v, self.var_names[i])?;
            }
            writeln!(f)?;
        }
        if let Some(exp) = &self.expansion {
            writeln!(f, "expansion point (physical): {exp:?}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    MaxIter,
    Infeasible,
}

/// Result of one interior-point solve. `point` is in physical units.
#[derive(Debug, Clone)]
pub struct SolveReport {
    pub point: Vec<f64>,
    pub objective: f64,
    pub max_violation: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub status: SolveStatus,
}
