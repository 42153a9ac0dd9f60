//! Pure evaluation of the latency and energy terms: per-node train, upload,
//! and relay-transmit costs, per-route sums, the per-round max, and the
//! K-round total. Also hosts the independent feasibility audit used by the
//! optimizer's acceptance checks.

use crate::net::{NetworkInstance, NodeParams};
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CostError {
    #[error("zero frequency with positive workload (L*C*D = {workload})")]
    InfeasibleTime { workload: f64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

/// Training time L C D / f.
pub fn train_time(local_iters: f64, cycles: f64, samples: f64, freq: f64) -> Result<f64, CostError> {
    let workload = local_iters * cycles * samples;
    if workload == 0.0 {
        return Ok(0.0);
    }
    if freq <= 0.0 {
        return Err(CostError::InfeasibleTime { workload });
    }
    Ok(workload / freq)
}

/// Training energy L zeta C D f^2.
pub fn train_energy(local_iters: f64, chip_coeff: f64, cycles: f64, samples: f64, freq: f64) -> f64 {
    local_iters * chip_coeff * cycles * samples * freq * freq
}

/// Achievable uplink rate b log2(1 + p g^2 / (b n0)) in bit/s.
pub fn achievable_rate(bandwidth: f64, power: f64, gain2: f64, noise_psd: f64) -> f64 {
    bandwidth * (1.0 + power * gain2 / (bandwidth * noise_psd)).log2()
}

/// Per-node per-round cost entries (times in s, energies in J).
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct NodeCost {
    pub t_train: f64,
    pub t_up: f64,
    pub t_tx: f64,
    pub e_train: f64,
    pub e_up: f64,
    pub e_tx: f64,
}

impl NodeCost {
    pub fn total_time(&self) -> f64 {
        self.t_train + self.t_up + self.t_tx
    }
    pub fn total_energy(&self) -> f64 {
        self.e_train + self.e_up + self.e_tx
    }
}

/// Leaf cost: trains and uploads its own model only.
pub fn leaf_costs(
    node: &NodeParams,
    power: f64,
    freq: f64,
    gain2: f64,
    noise_psd: f64,
    payload: f64,
) -> Result<NodeCost, CostError> {
    let t_train = train_time(node.local_iters, node.cycles_per_sample, node.data_samples, freq)?;
    let e_train =
        train_energy(node.local_iters, node.chip_coeff, node.cycles_per_sample, node.data_samples, freq);
    let rate = achievable_rate(node.bandwidth, power, gain2, noise_psd);
    let t_up = if payload > 0.0 && rate <= 0.0 { f64::INFINITY } else { payload / rate };
    Ok(NodeCost { t_train, t_up, t_tx: 0.0, e_train, e_up: t_up * power, e_tx: 0.0 })
}

/// Relay cost on its assigned route: comm terms carry the routing indicator
/// delta and the (n' + 2) payload multiplier (own model, one leaf model, n'
/// downstream relay models). E_tx covers the forwarded models: (1 + n') E_up.
pub fn relay_costs(
    node: &NodeParams,
    power: f64,
    freq: f64,
    gain2: f64,
    noise_psd: f64,
    payload: f64,
    delta: f64,
    successors: usize,
) -> Result<NodeCost, CostError> {
    let t_train = train_time(node.local_iters, node.cycles_per_sample, node.data_samples, freq)?;
    let e_train =
        train_energy(node.local_iters, node.chip_coeff, node.cycles_per_sample, node.data_samples, freq);
    if delta == 0.0 {
        return Ok(NodeCost { t_train, e_train, ..NodeCost::default() });
    }
    let rate = achievable_rate(node.bandwidth, power, gain2, noise_psd);
    let unit = if payload > 0.0 && rate <= 0.0 { f64::INFINITY } else { payload / rate };
    let t_up = delta * unit;
    let t_tx = delta * (successors as f64 + 1.0) * unit;
    let e_up = t_up * power;
    Ok(NodeCost { t_train, t_up, t_tx, e_train, e_up, e_tx: (1.0 + successors as f64) * e_up })
}

/// Decision variables: per-round transmit powers, CPU frequencies, and
/// routing indicators (relaxed in [0,1] or rounded binary).
#[derive(Debug, Clone, Serialize)]
pub struct DecisionVars {
    /// [round][leaf]
    pub leaf_power: Vec<Vec<f64>>,
    pub leaf_freq: Vec<Vec<f64>>,
    /// [round][relay]
    pub relay_power: Vec<Vec<f64>>,
    pub relay_freq: Vec<Vec<f64>>,
    /// [round][relay][route]
    pub delta: Vec<Vec<Vec<f64>>>,
}

impl DecisionVars {
    pub fn zeros(rounds: usize, leaves: usize, relays: usize, routes: usize) -> Self {
        DecisionVars {
            leaf_power: vec![vec![0.0; leaves]; rounds],
            leaf_freq: vec![vec![0.0; leaves]; rounds],
            relay_power: vec![vec![0.0; relays]; rounds],
            relay_freq: vec![vec![0.0; relays]; rounds],
            delta: vec![vec![vec![0.0; routes]; relays]; rounds],
        }
    }

    /// Route of relay n in round k after rounding (None when all delta = 0).
    pub fn assigned_route(&self, k: usize, n: usize) -> Option<usize> {
        self.delta[k][n]
            .iter()
            .enumerate()
            .filter(|(_, &d)| d > 0.5)
            .map(|(r, _)| r)
            .next()
    }
}

/// Full cost decomposition of one decision-variable assignment.
#[derive(Debug, Clone, Serialize)]
pub struct CostBreakdown {
    /// [round][leaf]
    pub leaf: Vec<Vec<NodeCost>>,
    /// [round][relay] (comm terms already scaled by the relay's delta on its
    /// assigned route)
    pub relay: Vec<Vec<NodeCost>>,
    /// [round][route] route totals T_total^{r,k}
    pub route_total: Vec<Vec<f64>>,
    /// max over routes per round
    pub round_latency: Vec<f64>,
    /// sum over rounds
    pub total_latency: f64,
}

impl CostBreakdown {
    pub fn total_energy(&self) -> f64 {
        let leaves: f64 =
            self.leaf.iter().flatten().map(NodeCost::total_energy).sum();
        let relays: f64 =
            self.relay.iter().flatten().map(NodeCost::total_energy).sum();
        leaves + relays
    }

    /// Flattens to CSV rows (round, route, node, term, value).
    pub fn csv_rows(&self) -> Vec<(usize, String, String, String, f64)> {
        let mut rows = Vec::new();
        for (k, per_leaf) in self.leaf.iter().enumerate() {
            for (m, c) in per_leaf.iter().enumerate() {
                let node = format!("leaf{m}");
                for (term, v) in [
                    ("t_train", c.t_train),
                    ("t_up", c.t_up),
                    ("e_train", c.e_train),
                    ("e_up", c.e_up),
                ] {
                    rows.push((k, format!("{m}"), node.clone(), term.to_string(), v));
                }
            }
        }
        for (k, per_relay) in self.relay.iter().enumerate() {
            for (n, c) in per_relay.iter().enumerate() {
                let node = format!("relay{n}");
                for (term, v) in [
                    ("t_train", c.t_train),
                    ("t_up", c.t_up),
                    ("t_tx", c.t_tx),
                    ("e_train", c.e_train),
                    ("e_up", c.e_up),
                    ("e_tx", c.e_tx),
                ] {
                    rows.push((k, String::new(), node.clone(), term.to_string(), v));
                }
            }
        }
        for (k, per_route) in self.route_total.iter().enumerate() {
            for (r, v) in per_route.iter().enumerate() {
                rows.push((k, format!("{r}"), "route".to_string(), "t_total".to_string(), *v));
            }
        }
        rows
    }
}

/// Latency of a single round: max over routes of the route sum. Cheap
/// variant of [`total_latency`] for per-round block updates.
pub fn round_latency(
    instance: &NetworkInstance,
    vars: &DecisionVars,
    k: usize,
) -> Result<f64, CostError> {
    let s = instance.payload_bits;
    let n0 = instance.noise_psd;
    let mut best = f64::NEG_INFINITY;
    for route in &instance.routes {
        let m = route.leaf;
        let c = leaf_costs(
            &instance.leaves[m],
            vars.leaf_power[k][m],
            vars.leaf_freq[k][m],
            instance.leaf_gain(k, m),
            n0,
            s,
        )?;
        let mut total = c.total_time();
        for n in 0..instance.num_relays() {
            let d = vars.delta[k][n][route.id];
            if d > 0.0 {
                let rc = relay_costs(
                    &instance.relays[n],
                    vars.relay_power[k][n],
                    vars.relay_freq[k][n],
                    instance.relay_gain(k, n),
                    n0,
                    s,
                    d,
                    instance.successor_relays[n],
                )?;
                total += d * rc.t_train + rc.t_up + rc.t_tx;
            }
        }
        best = best.max(total);
    }
    Ok(best)
}

/// Evaluates every cost term of an assignment. The per-route sum counts
/// relay n's whole contribution (training included) weighted by its delta on
/// that route; round latency is the max over routes; the total sums rounds.
pub fn total_latency(
    instance: &NetworkInstance,
    vars: &DecisionVars,
) -> Result<CostBreakdown, CostError> {
    let rounds = instance.rounds;
    if vars.leaf_power.len() != rounds || vars.delta.len() != rounds {
        return Err(CostError::DimensionMismatch(format!(
            "vars cover {} rounds, instance has {rounds}",
            vars.leaf_power.len()
        )));
    }
    let s = instance.payload_bits;
    let n0 = instance.noise_psd;
    let mut leaf = Vec::with_capacity(rounds);
    let mut relay = Vec::with_capacity(rounds);
    let mut route_total = Vec::with_capacity(rounds);
    let mut round_latency = Vec::with_capacity(rounds);
    for k in 0..rounds {
        let leaf_k: Vec<NodeCost> = instance
            .leaves
            .iter()
            .enumerate()
            .map(|(m, node)| {
                leaf_costs(
                    node,
                    vars.leaf_power[k][m],
                    vars.leaf_freq[k][m],
                    instance.leaf_gain(k, m),
                    n0,
                    s,
                )
            })
            .collect::<Result<_, _>>()?;
        // Relay comm cost per unit delta, independent of which route holds it.
        let relay_k: Vec<NodeCost> = instance
            .relays
            .iter()
            .enumerate()
            .map(|(n, node)| {
                let delta_sum: f64 = vars.delta[k][n].iter().sum();
                relay_costs(
                    node,
                    vars.relay_power[k][n],
                    vars.relay_freq[k][n],
                    instance.relay_gain(k, n),
                    n0,
                    s,
                    delta_sum,
                    instance.successor_relays[n],
                )
            })
            .collect::<Result<_, _>>()?;

        let mut totals = vec![0.0; instance.routes.len()];
        for (r, total) in totals.iter_mut().enumerate() {
            *total = leaf_k[r].total_time();
            for n in 0..instance.num_relays() {
                let d = vars.delta[k][n][r];
                if d > 0.0 {
                    let node = &instance.relays[n];
                    let c = relay_costs(
                        node,
                        vars.relay_power[k][n],
                        vars.relay_freq[k][n],
                        instance.relay_gain(k, n),
                        n0,
                        s,
                        d,
                        instance.successor_relays[n],
                    )?;
                    *total += d * c.t_train + c.t_up + c.t_tx;
                }
            }
        }
        let latency = totals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        leaf.push(leaf_k);
        relay.push(relay_k);
        route_total.push(totals);
        round_latency.push(latency);
    }
    let total = round_latency.iter().sum();
    Ok(CostBreakdown { leaf, relay, route_total, round_latency, total_latency: total })
}

/// One constraint violation found by the audit.
#[derive(Debug, Clone)]
pub struct Violation {
    pub round: usize,
    pub node: String,
    pub constraint: String,
    pub excess: f64,
}

/// Independent feasibility checker for the original problem's constraints
/// (power/frequency boxes, energy budgets, rounded routing indicators).
/// Reuses only the cost formulas above; tolerance is relative.
pub fn audit_feasibility(
    instance: &NetworkInstance,
    vars: &DecisionVars,
    tol: f64,
) -> Result<Vec<Violation>, CostError> {
    let mut violations = Vec::new();
    let s = instance.payload_bits;
    let n0 = instance.noise_psd;
    let mut check = |round: usize, node: String, constraint: &str, value: f64, bound: f64| {
        let excess = value - bound;
        if excess > tol * (1.0 + bound.abs()) {
            violations.push(Violation { round, node, constraint: constraint.to_string(), excess });
        }
    };
    for k in 0..instance.rounds {
        for (m, node) in instance.leaves.iter().enumerate() {
            let p = vars.leaf_power[k][m];
            let f = vars.leaf_freq[k][m];
            let name = format!("leaf{m}");
            check(k, name.clone(), "p <= P", p, node.max_power);
            check(k, name.clone(), "0 <= p", -p, 0.0);
            check(k, name.clone(), "f <= F", f, node.max_freq);
            check(k, name.clone(), "0 <= f", -f, 0.0);
            let c = leaf_costs(node, p, f, instance.leaf_gain(k, m), n0, s)?;
            check(k, name, "E_m <= E_m^max", c.total_energy(), node.self_energy);
        }
        for (n, node) in instance.relays.iter().enumerate() {
            let p = vars.relay_power[k][n];
            let f = vars.relay_freq[k][n];
            let name = format!("relay{n}");
            check(k, name.clone(), "p <= P", p, node.max_power);
            check(k, name.clone(), "0 <= p", -p, 0.0);
            check(k, name.clone(), "f <= F", f, node.max_freq);
            check(k, name.clone(), "0 <= f", -f, 0.0);
            let delta_sum: f64 = vars.delta[k][n].iter().sum();
            for (r, &d) in vars.delta[k][n].iter().enumerate() {
                if d != 0.0 && d != 1.0 {
                    check(k, name.clone(), "delta binary", (d - 0.5).abs() * -1.0 + 0.5, 0.0);
                }
                if d > 0.0 && !instance.availability[k][n].contains(&r) {
                    check(k, name.clone(), "delta within availability", d, 0.0);
                }
            }
            let available = !instance.availability[k][n].is_empty();
            let expected = if available { 1.0 } else { 0.0 };
            check(k, name.clone(), "sum delta = 1 on availability", (delta_sum - expected).abs(), 0.0);
            let c = relay_costs(
                node,
                p,
                f,
                instance.relay_gain(k, n),
                n0,
                s,
                delta_sum,
                instance.successor_relays[n],
            )?;
            check(
                k,
                name,
                "E_n <= E_n^max",
                c.total_energy(),
                instance.relay_energy_budget(k, n),
            );
        }
    }
    Ok(violations)
}
