//! Builders for the three per-round convex subproblems: the routing-indicator
//! LP, the leaf-node block, and the relay-node block. All three use the
//! epigraph reformulation of the per-round max over routes; the node blocks
//! carry the SCA surrogates (bilinear upper bound in the energy constraint,
//! log lower bound in the rate constraint) around the supplied expansion
//! point. Variables are scaled to O(1) for the solver.

use super::{Constraint, ConstraintKind, ConvexError, ConvexSubproblem};
use crate::cost::{achievable_rate, train_energy, train_time, DecisionVars};
use crate::net::NetworkInstance;

const LN2: f64 = std::f64::consts::LN_2;

/// Full per-round time of leaf m at the current variables.
fn leaf_time(inst: &NetworkInstance, vars: &DecisionVars, k: usize, m: usize) -> f64 {
    let node = &inst.leaves[m];
    let t_train =
        train_time(node.local_iters, node.cycles_per_sample, node.data_samples, vars.leaf_freq[k][m])
            .unwrap_or(f64::INFINITY);
    let rate = achievable_rate(node.bandwidth, vars.leaf_power[k][m], inst.leaf_gain(k, m), inst.noise_psd);
    t_train + inst.payload_bits / rate
}

/// Per-unit-delta contribution of relay n to a route sum.
fn relay_weight(inst: &NetworkInstance, vars: &DecisionVars, k: usize, n: usize) -> f64 {
    let node = &inst.relays[n];
    let t_train =
        train_time(node.local_iters, node.cycles_per_sample, node.data_samples, vars.relay_freq[k][n])
            .unwrap_or(f64::INFINITY);
    let rate =
        achievable_rate(node.bandwidth, vars.relay_power[k][n], inst.relay_gain(k, n), inst.noise_psd);
    let mult = inst.successor_relays[n] as f64 + 2.0;
    t_train + mult * inst.payload_bits / rate
}

/// Routing-indicator block for one round: a linear program over the relaxed
/// deltas with the per-round epigraph variable. Relays with a single
/// available route are fixed to it; relays in outage are fixed to zero.
pub struct RoutingLp {
    pub sub: ConvexSubproblem,
    /// Per free variable: (relay, routes it selects among). The variable is
    /// the delta on `routes[pos]`; the last listed route takes the remainder.
    pub free: Vec<(usize, usize)>,
    /// Availability lists per free relay (shared index with `free`).
    pub round: usize,
    /// Fully determined deltas [relay][route] for fixed relays.
    pub fixed: Vec<Vec<f64>>,
    pub t_index: usize,
}

impl RoutingLp {
    /// Relaxed deltas from a solved physical point.
    pub fn relaxed_deltas(&self, inst: &NetworkInstance, point: &[f64]) -> Vec<Vec<f64>> {
        let mut delta = self.fixed.clone();
        let k = self.round;
        let mut per_relay: Vec<(usize, Vec<(usize, f64)>)> = Vec::new();
        for (i, &(n, route)) in self.free.iter().enumerate() {
            match per_relay.iter_mut().find(|(rn, _)| *rn == n) {
                Some((_, v)) => v.push((route, point[i].clamp(0.0, 1.0))),
                None => per_relay.push((n, vec![(route, point[i].clamp(0.0, 1.0))])),
            }
        }
        for (n, assigned) in per_relay {
            let avail = &inst.availability[k][n];
            let mut used = 0.0;
            for &(route, u) in &assigned {
                delta[n][route] = u;
                used += u;
            }
            let last = *avail.last().expect("free relay has availability");
            delta[n][last] = (1.0 - used).clamp(0.0, 1.0);
        }
        delta
    }

    /// Rounds relaxed deltas to binary: argmax over available routes, ties
    /// to the lowest route id.
    pub fn round_deltas(inst: &NetworkInstance, k: usize, relaxed: &[Vec<f64>]) -> Vec<Vec<f64>> {
        relaxed
            .iter()
            .enumerate()
            .map(|(n, per_route)| {
                let mut out = vec![0.0; per_route.len()];
                let avail = &inst.availability[k][n];
                if avail.is_empty() {
                    return out;
                }
                let mut best = avail[0];
                for &r in avail {
                    if per_route[r] > per_route[best] + 1e-12 {
                        best = r;
                    }
                }
                out[best] = 1.0;
                out
            })
            .collect()
    }
}

pub fn build_routing_lp(
    inst: &NetworkInstance,
    vars: &DecisionVars,
    k: usize,
) -> Result<RoutingLp, ConvexError> {
    let routes_n = inst.routes.len();
    let mut fixed = vec![vec![0.0; routes_n]; inst.num_relays()];
    let mut free: Vec<(usize, usize)> = Vec::new();
    let mut free_of_relay: Vec<Vec<usize>> = vec![Vec::new(); inst.num_relays()];
    for n in 0..inst.num_relays() {
        let avail = &inst.availability[k][n];
        match avail.len() {
            0 => {}
            1 => fixed[n][avail[0]] = 1.0,
            q => {
                for &r in &avail[..q - 1] {
                    free_of_relay[n].push(free.len());
                    free.push((n, r));
                }
            }
        }
    }
    let t_index = free.len();
    let num_vars = t_index + 1;

    let weights: Vec<f64> = (0..inst.num_relays()).map(|n| relay_weight(inst, vars, k, n)).collect();
    // Upper bound on any route sum: every relay that can touch the route does.
    let mut route_ub = vec![0.0; routes_n];
    let mut route_const = vec![0.0; routes_n];
    for r in 0..routes_n {
        route_const[r] = leaf_time(inst, vars, k, r);
        route_ub[r] = route_const[r];
    }
    for n in 0..inst.num_relays() {
        for &r in &inst.availability[k][n] {
            route_ub[r] += weights[n];
        }
    }
    let t_scale = route_ub.iter().cloned().fold(1e-12, f64::max);

    // Route epigraph rows: const_r + fixed + free contributions - t <= 0.
    let mut constraints = Vec::new();
    for r in 0..routes_n {
        let mut constant = route_const[r];
        for n in 0..inst.num_relays() {
            constant += fixed[n][r] * weights[n];
        }
        let mut linear: Vec<(usize, f64)> = vec![(t_index, -1.0)];
        for n in 0..inst.num_relays() {
            let avail = &inst.availability[k][n];
            if free_of_relay[n].is_empty() {
                continue;
            }
            let last = *avail.last().unwrap();
            for (&var, &route) in free_of_relay[n].iter().zip(&avail[..avail.len() - 1]) {
                if route == r {
                    linear.push((var, weights[n] / t_scale));
                }
                if last == r {
                    linear.push((var, -weights[n] / t_scale));
                }
            }
            if last == r {
                constant += weights[n];
            }
        }
        constraints.push(Constraint {
            kind: ConstraintKind::Linear,
            label: format!("route{r}_epigraph"),
            constant: constant / t_scale,
            linear,
            quadratic: vec![],
            reciprocal: vec![],
        });
    }
    // Simplex caps for relays with three or more available routes.
    for n in 0..inst.num_relays() {
        if free_of_relay[n].len() >= 2 {
            constraints.push(Constraint {
                kind: ConstraintKind::Linear,
                label: format!("relay{n}_simplex"),
                constant: -1.0,
                linear: free_of_relay[n].iter().map(|&v| (v, 1.0)).collect(),
                quadratic: vec![],
                reciprocal: vec![],
            });
        }
    }

    let mut var_names: Vec<String> =
        free.iter().map(|&(n, r)| format!("delta_n{n}_r{r}")).collect();
    var_names.push("t".into());
    let mut bounds = vec![(0.0, 1.0); t_index];
    bounds.push((0.0, 2.0));
    let mut scales = vec![1.0; t_index];
    scales.push(t_scale);

    // Uniform start over each availability set.
    let mut hint = Vec::with_capacity(num_vars);
    for &(n, _) in &free {
        hint.push(1.0 / inst.availability[k][n].len() as f64);
    }
    hint.push(1.0 + 1e-3);

    Ok(RoutingLp {
        sub: ConvexSubproblem {
            num_vars,
            var_names,
            var_scales: scales,
            bounds,
            objective: vec![(t_index, t_scale)],
            obj_constant: 0.0,
            constraints,
            expansion: None,
            start_hint: Some(hint),
        },
        free,
        round: k,
        fixed,
        t_index,
    })
}

/// Leaf-node block for one round: variables (p_m, f_m, x_m) per leaf plus
/// the epigraph slack t.
pub struct LeafProblem {
    pub sub: ConvexSubproblem,
    pub round: usize,
    pub num_leaves: usize,
}

impl LeafProblem {
    pub fn power_index(&self, m: usize) -> usize {
        3 * m
    }
    pub fn freq_index(&self, m: usize) -> usize {
        3 * m + 1
    }
    pub fn slack_index(&self, m: usize) -> usize {
        3 * m + 2
    }
    pub fn t_index(&self) -> usize {
        3 * self.num_leaves
    }
}

/// Builds the per-round leaf block: epigraph objective, power/frequency
/// boxes, SCA energy bound, SCA rate bound. `expansion` is the
/// (p_m, x_m) pair per leaf, which must be feasible for the true problem.
pub fn build_leaf_subproblem(
    inst: &NetworkInstance,
    vars: &DecisionVars,
    k: usize,
    expansion: &[(f64, f64)],
) -> Result<LeafProblem, ConvexError> {
    let m_count = inst.num_leaves();
    assert_eq!(expansion.len(), m_count);
    let s = inst.payload_bits;
    let n0 = inst.noise_psd;

    // Relay contributions are constants in this block.
    let mut route_const = vec![0.0; inst.routes.len()];
    for (r, c) in route_const.iter_mut().enumerate() {
        for n in 0..inst.num_relays() {
            let d = vars.delta[k][n][r];
            if d > 0.0 {
                *c += d * relay_weight(inst, vars, k, n);
            }
        }
    }

    let num_vars = 3 * m_count + 1;
    let mut names = Vec::with_capacity(num_vars);
    let mut scales = Vec::with_capacity(num_vars);
    let mut bounds = Vec::with_capacity(num_vars);
    let mut constraints = Vec::new();
    let mut expansion_phys = Vec::new();

    for (m, &(p_i, x_i)) in expansion.iter().enumerate() {
        let node = &inst.leaves[m];
        if p_i <= 0.0 {
            return Err(ConvexError::BadExpansion { name: "p_i", value: p_i });
        }
        if x_i <= 0.0 {
            return Err(ConvexError::BadExpansion { name: "x_i", value: x_i });
        }
        let g2 = inst.leaf_gain(k, m);
        let b = node.bandwidth;
        let e_max = node.self_energy;
        let f_i = vars.leaf_freq[k][m];
        // The expansion point must satisfy the true energy budget; the
        // surrogate is tight there, so this is exactly surrogate feasibility.
        let e_at_expansion = train_energy(
            node.local_iters,
            node.chip_coeff,
            node.cycles_per_sample,
            node.data_samples,
            f_i,
        ) + x_i * p_i;
        if e_at_expansion > e_max * (1.0 + 1e-9) {
            return Err(ConvexError::ExpansionInfeasible {
                constraint: format!(
                    "leaf{m} energy {e_at_expansion:.3e} > budget {e_max:.3e}"
                ),
            });
        }

        names.push(format!("p_m{m}"));
        names.push(format!("f_m{m}"));
        names.push(format!("x_m{m}"));
        scales.push(node.max_power);
        scales.push(node.max_freq);
        scales.push(x_i);
        bounds.push((0.0, 1.0));
        bounds.push((0.0, 1.0));
        bounds.push((0.0, 1.0e4));
        expansion_phys.extend([p_i, x_i]);

        let lcd = node.local_iters * node.cycles_per_sample * node.data_samples;
        // Energy surrogate, normalized by the budget.
        constraints.push(Constraint {
            kind: ConstraintKind::ConvexQuadratic,
            label: format!("leaf{m}_energy_sca"),
            constant: -1.0,
            linear: vec![],
            quadratic: vec![
                (3 * m + 1, lcd * node.chip_coeff * node.max_freq * node.max_freq / e_max),
                (3 * m + 2, 0.5 * (p_i / x_i) * x_i * x_i / e_max),
                (3 * m, 0.5 * (x_i / p_i) * node.max_power * node.max_power / e_max),
            ],
            reciprocal: vec![],
        });
        // Rate lower bound: s ln2/(b x) <= ln(1+z_i) + z_i/(z_i+1) - (z_i^2/(z_i+1)) / z.
        let z_i = p_i * g2 / (b * n0);
        constraints.push(Constraint {
            kind: ConstraintKind::LogRateLowerBound,
            label: format!("leaf{m}_rate_sca"),
            constant: -((1.0 + z_i).ln() + z_i / (z_i + 1.0)),
            linear: vec![],
            quadratic: vec![],
            reciprocal: vec![
                (3 * m + 2, s * LN2 / b / x_i),
                (3 * m, z_i * z_i / (z_i + 1.0) * b * n0 / g2 / node.max_power),
            ],
        });
    }

    // Epigraph rows, normalized by the current round latency scale.
    let t_index = 3 * m_count;
    names.push("t".into());
    let mut hint_sums = vec![0.0; inst.routes.len()];
    let t_scale = {
        let mut worst = 1e-12f64;
        for r in 0..inst.routes.len() {
            let node = &inst.leaves[r];
            let lcd = node.local_iters * node.cycles_per_sample * node.data_samples;
            let sum = route_const[r] + lcd / vars.leaf_freq[k][r].max(1e-30) + expansion[r].1;
            hint_sums[r] = sum;
            worst = worst.max(sum);
        }
        worst
    };
    scales.push(t_scale);
    bounds.push((0.0, 1.0e5));
    for r in 0..inst.routes.len() {
        let node = &inst.leaves[r];
        let lcd = node.local_iters * node.cycles_per_sample * node.data_samples;
        constraints.push(Constraint {
            kind: ConstraintKind::Epigraph,
            label: format!("route{r}_epigraph"),
            constant: route_const[r] / t_scale,
            linear: vec![(3 * r + 2, expansion[r].1 / t_scale), (t_index, -1.0)],
            quadratic: vec![],
            reciprocal: vec![(3 * r + 1, lcd / node.max_freq / t_scale)],
        });
    }

    // Start at the expansion point, slacks nudged upward.
    let mut hint = vec![0.0; num_vars];
    for (m, &(p_i, _)) in expansion.iter().enumerate() {
        hint[3 * m] = p_i / inst.leaves[m].max_power;
        hint[3 * m + 1] = vars.leaf_freq[k][m] / inst.leaves[m].max_freq;
        hint[3 * m + 2] = 1.0 + 1e-6;
    }
    hint[t_index] = hint_sums.iter().cloned().fold(0.0, f64::max) / t_scale * (1.0 + 1e-6) + 1e-9;

    Ok(LeafProblem {
        sub: ConvexSubproblem {
            num_vars,
            var_names: names,
            var_scales: scales,
            bounds,
            objective: vec![(t_index, t_scale)],
            obj_constant: 0.0,
            constraints,
            expansion: Some(expansion_phys),
            start_hint: Some(hint),
        },
        round: k,
        num_leaves: m_count,
    })
}

/// Relay-node block for one round: variables (p_n, f_n, y_n) per assigned
/// relay plus the epigraph slack t. Relays with delta = 0 everywhere are
/// excluded (their terms vanish from every route sum).
pub struct RelayProblem {
    pub sub: ConvexSubproblem,
    pub round: usize,
    /// Relay ids in variable order with their assigned route.
    pub relays: Vec<(usize, usize)>,
}

impl RelayProblem {
    pub fn power_index(&self, i: usize) -> usize {
        3 * i
    }
    pub fn freq_index(&self, i: usize) -> usize {
        3 * i + 1
    }
    pub fn slack_index(&self, i: usize) -> usize {
        3 * i + 2
    }
    pub fn t_index(&self) -> usize {
        3 * self.relays.len()
    }
}

/// Builds the per-round relay block: mirror of the leaf block with (p_n, f_n, y_n) and
/// E_n^max = E_n^self + harvested energy. `expansion` is (p_n, y_n) per
/// assigned relay, in the same order as the returned `relays` list.
pub fn build_relay_subproblem(
    inst: &NetworkInstance,
    vars: &DecisionVars,
    k: usize,
    expansion: &[(f64, f64)],
) -> Result<RelayProblem, ConvexError> {
    let s = inst.payload_bits;
    let n0 = inst.noise_psd;
    let assigned: Vec<(usize, usize)> = (0..inst.num_relays())
        .filter_map(|n| vars.assigned_route(k, n).map(|r| (n, r)))
        .collect();
    assert_eq!(expansion.len(), assigned.len());

    // Leaf contributions are constants in this block.
    let route_const: Vec<f64> =
        (0..inst.routes.len()).map(|r| leaf_time(inst, vars, k, r)).collect();

    let count = assigned.len();
    let num_vars = 3 * count + 1;
    let t_index = 3 * count;
    let mut names = Vec::with_capacity(num_vars);
    let mut scales = Vec::with_capacity(num_vars);
    let mut bounds = Vec::with_capacity(num_vars);
    let mut constraints = Vec::new();
    let mut expansion_phys = Vec::new();
    let mut route_terms: Vec<Vec<(usize, f64)>> = vec![Vec::new(); inst.routes.len()];
    let mut route_rec: Vec<Vec<(usize, f64)>> = vec![Vec::new(); inst.routes.len()];

    for (i, (&(n, r), &(p_i, y_i))) in assigned.iter().zip(expansion).enumerate() {
        let node = &inst.relays[n];
        if p_i <= 0.0 {
            return Err(ConvexError::BadExpansion { name: "p_i", value: p_i });
        }
        if y_i <= 0.0 {
            return Err(ConvexError::BadExpansion { name: "y_i", value: y_i });
        }
        let g2 = inst.relay_gain(k, n);
        let b = node.bandwidth;
        let e_max = inst.relay_energy_budget(k, n);
        let f_i = vars.relay_freq[k][n];
        let e_at_expansion = train_energy(
            node.local_iters,
            node.chip_coeff,
            node.cycles_per_sample,
            node.data_samples,
            f_i,
        ) + y_i * p_i;
        if e_at_expansion > e_max * (1.0 + 1e-9) {
            return Err(ConvexError::ExpansionInfeasible {
                constraint: format!(
                    "relay{n} energy {e_at_expansion:.3e} > budget {e_max:.3e}"
                ),
            });
        }

        names.push(format!("p_n{n}"));
        names.push(format!("f_n{n}"));
        names.push(format!("y_n{n}"));
        scales.push(node.max_power);
        scales.push(node.max_freq);
        scales.push(y_i);
        bounds.push((0.0, 1.0));
        bounds.push((0.0, 1.0));
        bounds.push((0.0, 1.0e4));
        expansion_phys.extend([p_i, y_i]);

        let lcd = node.local_iters * node.cycles_per_sample * node.data_samples;
        let mult = inst.successor_relays[n] as f64 + 2.0;
        constraints.push(Constraint {
            kind: ConstraintKind::ConvexQuadratic,
            label: format!("relay{n}_energy_sca"),
            constant: -1.0,
            linear: vec![],
            quadratic: vec![
                (3 * i + 1, lcd * node.chip_coeff * node.max_freq * node.max_freq / e_max),
                (3 * i + 2, 0.5 * (p_i / y_i) * y_i * y_i / e_max),
                (3 * i, 0.5 * (y_i / p_i) * node.max_power * node.max_power / e_max),
            ],
            reciprocal: vec![],
        });
        let z_i = p_i * g2 / (b * n0);
        constraints.push(Constraint {
            kind: ConstraintKind::LogRateLowerBound,
            label: format!("relay{n}_rate_sca"),
            constant: -((1.0 + z_i).ln() + z_i / (z_i + 1.0)),
            linear: vec![],
            quadratic: vec![],
            reciprocal: vec![
                (3 * i + 2, mult * s * LN2 / b / y_i),
                (3 * i, z_i * z_i / (z_i + 1.0) * b * n0 / g2 / node.max_power),
            ],
        });
        route_terms[r].push((3 * i + 2, y_i));
        route_rec[r].push((3 * i + 1, lcd / node.max_freq));
    }

    names.push("t".into());
    let mut hint_sums = vec![0.0; inst.routes.len()];
    let t_scale = {
        let mut worst = 1e-12f64;
        for r in 0..inst.routes.len() {
            let mut sum = route_const[r];
            for (i, &(n, rr)) in assigned.iter().enumerate() {
                if rr == r {
                    let node = &inst.relays[n];
                    let lcd = node.local_iters * node.cycles_per_sample * node.data_samples;
                    sum += lcd / vars.relay_freq[k][n].max(1e-30) + expansion[i].1;
                }
            }
            hint_sums[r] = sum;
            worst = worst.max(sum);
        }
        worst
    };
    scales.push(t_scale);
    bounds.push((0.0, 1.0e5));
    for r in 0..inst.routes.len() {
        let mut linear: Vec<(usize, f64)> = vec![(t_index, -1.0)];
        for &(idx, y_i) in &route_terms[r] {
            linear.push((idx, y_i / t_scale));
        }
        let reciprocal: Vec<(usize, f64)> =
            route_rec[r].iter().map(|&(idx, c)| (idx, c / t_scale)).collect();
        constraints.push(Constraint {
            kind: ConstraintKind::Epigraph,
            label: format!("route{r}_epigraph"),
            constant: route_const[r] / t_scale,
            linear,
            quadratic: vec![],
            reciprocal,
        });
    }

    let mut hint = vec![0.0; num_vars];
    for (i, (&(n, _), &(p_i, _))) in assigned.iter().zip(expansion).enumerate() {
        hint[3 * i] = p_i / inst.relays[n].max_power;
        hint[3 * i + 1] = vars.relay_freq[k][n] / inst.relays[n].max_freq;
        hint[3 * i + 2] = 1.0 + 1e-6;
    }
    hint[t_index] = hint_sums.iter().cloned().fold(0.0, f64::max) / t_scale * (1.0 + 1e-6) + 1e-9;

    Ok(RelayProblem {
        sub: ConvexSubproblem {
            num_vars,
            var_names: names,
            var_scales: scales,
            bounds,
            objective: vec![(t_index, t_scale)],
            obj_constant: 0.0,
            constraints,
            expansion: Some(expansion_phys),
            start_hint: Some(hint),
        },
        round: k,
        relays: assigned,
    })
}
