//! Outer BCD/SCA loop over the routing, leaf, and relay blocks, the four
//! baseline schemes, and the parameter sweep machinery.
//!
//! Every block update is guarded: a candidate is accepted only when it does
//! not increase the round latency, so the objective history is nonincreasing
//! by construction and every iterate stays feasible for the original
//! problem (the SCA surrogates are one-sided).

use crate::convex::{
    build_leaf_subproblem, build_relay_subproblem, build_routing_lp, solve_with, ConvexError,
    RoutingLp, SolveStatus, SolverOptions,
};
use crate::cost::{
    achievable_rate, round_latency, total_latency, train_energy, CostError, DecisionVars,
};
use crate::net::{derive_seed, generate_instance, GenParams, InstanceShape, NetworkInstance};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BcdError {
    #[error("infeasible initialization: {0}")]
    InfeasibleInit(String),
    #[error("block {block} infeasible in round {round}: {detail}")]
    BlockInfeasible { block: &'static str, round: usize, detail: String },
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error(transparent)]
    Convex(#[from] ConvexError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineKind {
    /// Leaf-node optimization only.
    Scheme1,
    /// Relay-node optimization only.
    Scheme2,
    /// Leaf and relay optimization without the routing indicator block.
    Scheme3,
    /// Max local resources scaled to the energy budget, home-route routing.
    Greedy,
    /// Full BCD over routing, leaf, and relay blocks.
    Proposed,
}

impl BaselineKind {
    pub fn name(&self) -> &'static str {
        match self {
            BaselineKind::Scheme1 => "scheme1",
            BaselineKind::Scheme2 => "scheme2",
            BaselineKind::Scheme3 => "scheme3",
            BaselineKind::Greedy => "greedy",
            BaselineKind::Proposed => "proposed",
        }
    }
    pub const ALL: [BaselineKind; 5] = [
        BaselineKind::Scheme1,
        BaselineKind::Scheme2,
        BaselineKind::Scheme3,
        BaselineKind::Greedy,
        BaselineKind::Proposed,
    ];
}

#[derive(Debug, Clone, Copy)]
pub struct BcdOptions {
    /// Relative objective-change stopping tolerance.
    pub tol: f64,
    pub max_iter: usize,
    pub solver: SolverOptions,
}

impl Default for BcdOptions {
    fn default() -> Self {
        BcdOptions { tol: 1e-4, max_iter: 30, solver: SolverOptions::default() }
    }
}

/// Per-iteration per-block solve summary.
#[derive(Debug, Clone, Copy, Default)]
pub struct BlockStats {
    pub solved: usize,
    pub kept_previous: usize,
}

#[derive(Debug, Clone)]
pub struct BcdState {
    pub iterations: usize,
    pub vars: DecisionVars,
    /// Total FL latency after each outer iteration (index 0 = initial point).
    pub objective_history: Vec<f64>,
    /// Final tight comm-time slacks x_m per [round][leaf].
    pub slack_x: Vec<Vec<f64>>,
    /// Final tight comm-time slacks y_n per [round][relay] (0 when unrouted).
    pub slack_y: Vec<Vec<f64>>,
    pub block_stats: Vec<[BlockStats; 3]>,
}

impl BcdState {
    pub fn final_latency(&self) -> f64 {
        *self.objective_history.last().expect("history is never empty")
    }
}

fn leaf_energy(inst: &NetworkInstance, k: usize, m: usize, p: f64, f: f64) -> f64 {
    let node = &inst.leaves[m];
    let e_train =
        train_energy(node.local_iters, node.chip_coeff, node.cycles_per_sample, node.data_samples, f);
    let rate = achievable_rate(node.bandwidth, p, inst.leaf_gain(k, m), inst.noise_psd);
    e_train + inst.payload_bits / rate * p
}

fn relay_energy(inst: &NetworkInstance, k: usize, n: usize, p: f64, f: f64, assigned: bool) -> f64 {
    let node = &inst.relays[n];
    let e_train =
        train_energy(node.local_iters, node.chip_coeff, node.cycles_per_sample, node.data_samples, f);
    if !assigned {
        return e_train;
    }
    let rate = achievable_rate(node.bandwidth, p, inst.relay_gain(k, n), inst.noise_psd);
    let mult = inst.successor_relays[n] as f64 + 2.0;
    e_train + mult * inst.payload_bits / rate * p
}

/// Largest gamma in (0, 1] with energy(gamma * p0, gamma * f0) within budget.
fn scale_to_budget(energy: impl Fn(f64) -> f64, budget: f64) -> Option<f64> {
    if energy(1.0) <= budget {
        return Some(1.0);
    }
    let mut lo = 1e-12;
    if energy(lo) > budget {
        return None;
    }
    let mut hi = 1.0;
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if energy(mid) <= budget {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(lo)
}

/// Home-route (or first-available) binary routing for one round.
fn default_delta(inst: &NetworkInstance, k: usize) -> Vec<Vec<f64>> {
    (0..inst.num_relays())
        .map(|n| {
            let mut d = vec![0.0; inst.routes.len()];
            let avail = &inst.availability[k][n];
            if !avail.is_empty() {
                let r = if avail.contains(&inst.home_route[n]) {
                    inst.home_route[n]
                } else {
                    avail[0]
                };
                d[r] = 1.0;
            }
            d
        })
        .collect()
}

/// Initial feasible point shared by every scheme: f = F, p = P scaled
/// uniformly into each node's energy budget, home-route routing. Starting at
/// the budget-scaled full-throttle point keeps the first iterate feasible
/// and means no optimizing scheme can end worse than the greedy baseline.
pub fn initial_vars(inst: &NetworkInstance) -> Result<DecisionVars, BcdError> {
    vars_at_fraction(inst, 1.0)
}

fn vars_at_fraction(inst: &NetworkInstance, frac: f64) -> Result<DecisionVars, BcdError> {
    let mut vars = DecisionVars::zeros(
        inst.rounds,
        inst.num_leaves(),
        inst.num_relays(),
        inst.routes.len(),
    );
    for k in 0..inst.rounds {
        vars.delta[k] = default_delta(inst, k);
        for m in 0..inst.num_leaves() {
            let node = &inst.leaves[m];
            let (p0, f0) = (node.max_power * frac, node.max_freq * frac);
            let gamma = scale_to_budget(|g| leaf_energy(inst, k, m, g * p0, g * f0), node.self_energy)
                .ok_or_else(|| {
                    BcdError::InfeasibleInit(format!(
                        "leaf{m} round {k}: budget {:.3e} J below minimum achievable energy",
                        node.self_energy
                    ))
                })?;
            vars.leaf_power[k][m] = gamma * p0;
            vars.leaf_freq[k][m] = gamma * f0;
        }
        for n in 0..inst.num_relays() {
            let node = &inst.relays[n];
            let assigned = vars.assigned_route(k, n).is_some();
            let (p0, f0) = (node.max_power * frac, node.max_freq * frac);
            let budget = inst.relay_energy_budget(k, n);
            let gamma =
                scale_to_budget(|g| relay_energy(inst, k, n, g * p0, g * f0, assigned), budget)
                    .ok_or_else(|| {
                        BcdError::InfeasibleInit(format!(
                            "relay{n} round {k}: budget {budget:.3e} J below minimum achievable energy"
                        ))
                    })?;
            vars.relay_power[k][n] = gamma * p0;
            vars.relay_freq[k][n] = gamma * f0;
        }
    }
    Ok(vars)
}

/// Greedy baseline: every node takes f = F, p = P scaled uniformly to its
/// budget; relays keep their home route.
pub fn greedy_vars(inst: &NetworkInstance) -> Result<DecisionVars, BcdError> {
    vars_at_fraction(inst, 1.0)
}

/// Routing block for one round: solve the relaxed LP, round to binary, and
/// restore energy feasibility of re-routed relays. Returns a candidate
/// assignment, or `None` when the rounded indicator equals the current one
/// (or cannot be made energy-feasible).
fn routing_candidate(
    inst: &NetworkInstance,
    vars: &DecisionVars,
    k: usize,
    opts: &BcdOptions,
) -> Result<Option<DecisionVars>, BcdError> {
    let lp: RoutingLp = build_routing_lp(inst, vars, k)?;
    let rounded = if lp.free.is_empty() {
        lp.fixed.clone()
    } else {
        let report = match solve_with(&lp.sub, &opts.solver) {
            Ok(r) => r,
            Err(ConvexError::Infeasible { .. }) => return Ok(None),
            Err(e) => return Err(e.into()),
        };
        let relaxed = lp.relaxed_deltas(inst, &report.point);
        RoutingLp::round_deltas(inst, k, &relaxed)
    };
    if rounded == vars.delta[k] {
        return Ok(None);
    }

    let mut candidate = vars.clone();
    candidate.delta[k] = rounded;
    // Re-check energy of every assigned relay under the new indicator.
    for n in 0..inst.num_relays() {
        if candidate.assigned_route(k, n).is_some() {
            let (p, f) = (candidate.relay_power[k][n], candidate.relay_freq[k][n]);
            let budget = inst.relay_energy_budget(k, n);
            if relay_energy(inst, k, n, p, f, true) > budget {
                match scale_to_budget(|g| relay_energy(inst, k, n, g * p, g * f, true), budget) {
                    Some(gamma) => {
                        candidate.relay_power[k][n] = gamma * p;
                        candidate.relay_freq[k][n] = gamma * f;
                    }
                    None => return Ok(None),
                }
            }
        }
    }
    Ok(Some(candidate))
}

fn block_leaf(
    inst: &NetworkInstance,
    vars: &mut DecisionVars,
    k: usize,
    opts: &BcdOptions,
    stats: &mut BlockStats,
) -> Result<(), BcdError> {
    let expansion: Vec<(f64, f64)> = (0..inst.num_leaves())
        .map(|m| {
            let p = vars.leaf_power[k][m];
            let rate = achievable_rate(
                inst.leaves[m].bandwidth,
                p,
                inst.leaf_gain(k, m),
                inst.noise_psd,
            );
            (p, inst.payload_bits / rate)
        })
        .collect();
    let problem = match build_leaf_subproblem(inst, vars, k, &expansion) {
        Ok(p) => p,
        Err(ConvexError::ExpansionInfeasible { .. }) => {
            stats.kept_previous += 1;
            return Ok(());
        }
        Err(e) => return Err(e.into()),
    };
    let report = match solve_with(&problem.sub, &opts.solver) {
        Ok(r) if r.status != SolveStatus::Infeasible => r,
        Ok(_) | Err(ConvexError::Infeasible { .. }) => {
            stats.kept_previous += 1;
            return Ok(());
        }
        Err(e) => return Err(e.into()),
    };
    let mut candidate = vars.clone_round(k);
    for m in 0..inst.num_leaves() {
        candidate.leaf_power[k][m] =
            report.point[problem.power_index(m)].clamp(1e-12, inst.leaves[m].max_power);
        candidate.leaf_freq[k][m] =
            report.point[problem.freq_index(m)].clamp(1e-12, inst.leaves[m].max_freq);
    }
    let old = round_latency(inst, vars, k)?;
    let new = round_latency(inst, &candidate, k)?;
    if new <= old * (1.0 + 1e-12) + 1e-15 {
        vars.adopt_round(k, &candidate);
        stats.solved += 1;
    } else {
        stats.kept_previous += 1;
    }
    Ok(())
}

fn block_relay(
    inst: &NetworkInstance,
    vars: &mut DecisionVars,
    k: usize,
    opts: &BcdOptions,
    stats: &mut BlockStats,
) -> Result<(), BcdError> {
    let assigned: Vec<usize> =
        (0..inst.num_relays()).filter(|&n| vars.assigned_route(k, n).is_some()).collect();
    if assigned.is_empty() {
        return Ok(());
    }
    let expansion: Vec<(f64, f64)> = assigned
        .iter()
        .map(|&n| {
            let p = vars.relay_power[k][n];
            let rate = achievable_rate(
                inst.relays[n].bandwidth,
                p,
                inst.relay_gain(k, n),
                inst.noise_psd,
            );
            let mult = inst.successor_relays[n] as f64 + 2.0;
            (p, mult * inst.payload_bits / rate)
        })
        .collect();
    let problem = match build_relay_subproblem(inst, vars, k, &expansion) {
        Ok(p) => p,
        Err(ConvexError::ExpansionInfeasible { .. }) => {
            stats.kept_previous += 1;
            return Ok(());
        }
        Err(e) => return Err(e.into()),
    };
    let report = match solve_with(&problem.sub, &opts.solver) {
        Ok(r) if r.status != SolveStatus::Infeasible => r,
        Ok(_) | Err(ConvexError::Infeasible { .. }) => {
            stats.kept_previous += 1;
            return Ok(());
        }
        Err(e) => return Err(e.into()),
    };
    let mut candidate = vars.clone_round(k);
    for (i, &(n, _)) in problem.relays.iter().enumerate() {
        candidate.relay_power[k][n] =
            report.point[problem.power_index(i)].clamp(1e-12, inst.relays[n].max_power);
        candidate.relay_freq[k][n] =
            report.point[problem.freq_index(i)].clamp(1e-12, inst.relays[n].max_freq);
    }
    let old = round_latency(inst, vars, k)?;
    let new = round_latency(inst, &candidate, k)?;
    if new <= old * (1.0 + 1e-12) + 1e-15 {
        vars.adopt_round(k, &candidate);
        stats.solved += 1;
    } else {
        stats.kept_previous += 1;
    }
    Ok(())
}

impl DecisionVars {
    fn clone_round(&self, _k: usize) -> DecisionVars {
        self.clone()
    }
    fn adopt_round(&mut self, k: usize, other: &DecisionVars) {
        self.leaf_power[k] = other.leaf_power[k].clone();
        self.leaf_freq[k] = other.leaf_freq[k].clone();
        self.relay_power[k] = other.relay_power[k].clone();
        self.relay_freq[k] = other.relay_freq[k].clone();
        self.delta[k] = other.delta[k].clone();
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Block {
    Routing,
    Leaf,
    Relay,
}

fn run_node_blocks(
    inst: &NetworkInstance,
    vars: &mut DecisionVars,
    k: usize,
    blocks: &[Block],
    opts: &BcdOptions,
    stats: &mut [BlockStats; 3],
) -> Result<(), BcdError> {
    for &block in blocks {
        match block {
            Block::Leaf => block_leaf(inst, vars, k, opts, &mut stats[1])?,
            Block::Relay => block_relay(inst, vars, k, opts, &mut stats[2])?,
            Block::Routing => unreachable!("routing is handled separately"),
        }
    }
    Ok(())
}

fn run_blocks(
    inst: &NetworkInstance,
    init: DecisionVars,
    blocks: &[Block],
    opts: &BcdOptions,
) -> Result<BcdState, BcdError> {
    let routing = blocks.contains(&Block::Routing);
    let node_blocks: Vec<Block> =
        blocks.iter().copied().filter(|&b| b != Block::Routing).collect();
    let mut vars = init;
    let mut history = vec![total_latency(inst, &vars)?.total_latency];
    let mut block_stats = Vec::new();
    let mut iterations = 0;
    for _ in 0..opts.max_iter {
        iterations += 1;
        let mut stats = [BlockStats::default(); 3];
        for k in 0..inst.rounds {
            // Routing is evaluated with one step of lookahead: optimize the
            // node blocks under both the re-routed and the current indicator
            // and keep whichever round comes out faster. The "keep" branch
            // is exactly the no-rerouting update, so routing can never make
            // an iteration worse than not having the routing block at all.
            let candidate = if routing { routing_candidate(inst, &vars, k, opts)? } else { None };
            match candidate {
                Some(mut branch) => {
                    run_node_blocks(inst, &mut branch, k, &node_blocks, opts, &mut stats)?;
                    run_node_blocks(inst, &mut vars, k, &node_blocks, opts, &mut stats)?;
                    let rerouted = round_latency(inst, &branch, k)?;
                    let kept = round_latency(inst, &vars, k)?;
                    if rerouted < kept * (1.0 - 1e-9) {
                        vars.adopt_round(k, &branch);
                        stats[0].solved += 1;
                    } else {
                        stats[0].kept_previous += 1;
                    }
                }
                None => run_node_blocks(inst, &mut vars, k, &node_blocks, opts, &mut stats)?,
            }
        }
        let total = total_latency(inst, &vars)?.total_latency;
        let prev = *history.last().unwrap();
        debug_assert!(total <= prev * (1.0 + 1e-9) + 1e-12, "descent violated: {prev} -> {total}");
        history.push(total);
        block_stats.push(stats);
        if (prev - total).abs() <= opts.tol * prev.abs().max(1e-30) {
            break;
        }
    }
    let (slack_x, slack_y) = final_slacks(inst, &vars);
    Ok(BcdState { iterations, vars, objective_history: history, slack_x, slack_y, block_stats })
}

fn final_slacks(inst: &NetworkInstance, vars: &DecisionVars) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut x = vec![vec![0.0; inst.num_leaves()]; inst.rounds];
    let mut y = vec![vec![0.0; inst.num_relays()]; inst.rounds];
    for k in 0..inst.rounds {
        for m in 0..inst.num_leaves() {
            let rate = achievable_rate(
                inst.leaves[m].bandwidth,
                vars.leaf_power[k][m],
                inst.leaf_gain(k, m),
                inst.noise_psd,
            );
            x[k][m] = inst.payload_bits / rate;
        }
        for n in 0..inst.num_relays() {
            if vars.assigned_route(k, n).is_some() {
                let rate = achievable_rate(
                    inst.relays[n].bandwidth,
                    vars.relay_power[k][n],
                    inst.relay_gain(k, n),
                    inst.noise_psd,
                );
                y[k][n] = (inst.successor_relays[n] as f64 + 2.0) * inst.payload_bits / rate;
            }
        }
    }
    (x, y)
}

/// Algorithm: outer loop over routing -> leaf -> relay blocks until the
/// relative change of the total FL latency falls below `tol`.
pub fn bcd_optimize(
    inst: &NetworkInstance,
    init: DecisionVars,
    opts: &BcdOptions,
) -> Result<BcdState, BcdError> {
    run_blocks(inst, init, &[Block::Routing, Block::Leaf, Block::Relay], opts)
}

pub fn run_baseline(
    kind: BaselineKind,
    inst: &NetworkInstance,
    init: DecisionVars,
    opts: &BcdOptions,
) -> Result<BcdState, BcdError> {
    match kind {
        BaselineKind::Proposed => bcd_optimize(inst, init, opts),
        BaselineKind::Scheme1 => run_blocks(inst, init, &[Block::Leaf], opts),
        BaselineKind::Scheme2 => run_blocks(inst, init, &[Block::Relay], opts),
        BaselineKind::Scheme3 => run_blocks(inst, init, &[Block::Leaf, Block::Relay], opts),
        BaselineKind::Greedy => {
            let vars = greedy_vars(inst)?;
            let total = total_latency(inst, &vars)?.total_latency;
            let (slack_x, slack_y) = final_slacks(inst, &vars);
            Ok(BcdState {
                iterations: 1,
                vars,
                objective_history: vec![total],
                slack_x,
                slack_y,
                block_stats: vec![],
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepParam {
    LeafMaxFreq,
    LeafMaxPower,
    RelayMaxFreq,
    RelayMaxPower,
    NodeCount,
}

impl SweepParam {
    pub fn name(&self) -> &'static str {
        match self {
            SweepParam::LeafMaxFreq => "leaf-max-freq",
            SweepParam::LeafMaxPower => "leaf-max-power",
            SweepParam::RelayMaxFreq => "relay-max-freq",
            SweepParam::RelayMaxPower => "relay-max-power",
            SweepParam::NodeCount => "node-count",
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepCell {
    pub scheme: BaselineKind,
    pub value: f64,
    pub latency: Option<f64>,
    pub energy: Option<f64>,
    pub status: String,
}

/// Re-solves per grid point and scheme. All cells of one sweep share the
/// base seed, so the realized instance is identical along the grid except
/// for the swept parameter (the generator's random draws do not depend on
/// the caps); failures are recorded per cell and the sweep continues.
pub fn sweep(
    gen: &GenParams,
    shape: InstanceShape,
    seed: u64,
    param: SweepParam,
    grid: &[f64],
    schemes: &[BaselineKind],
    opts: &BcdOptions,
) -> Result<Vec<SweepCell>, BcdError> {
    if grid.iter().any(|&v| v <= 0.0) || grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(BcdError::InfeasibleInit(
            "sweep grid must be positive and strictly ascending".into(),
        ));
    }
    let mut cells = Vec::new();
    for &value in grid {
        let mut g = gen.clone();
        let mut sh = shape;
        match param {
            SweepParam::LeafMaxFreq => g.leaf_max_freq = value,
            SweepParam::LeafMaxPower => g.leaf_max_power = value,
            SweepParam::RelayMaxFreq => g.relay_max_freq = value,
            SweepParam::RelayMaxPower => g.relay_max_power = value,
            SweepParam::NodeCount => sh.relays = value.round() as usize,
        }
        for &scheme in schemes {
            let cell = (|| -> Result<(f64, f64), BcdError> {
                let inst = generate_instance(seed, sh, &g)
                    .map_err(|e| BcdError::InfeasibleInit(e.to_string()))?;
                let init = initial_vars(&inst)?;
                let state = run_baseline(scheme, &inst, init, opts)?;
                let bd = total_latency(&inst, &state.vars)?;
                Ok((state.final_latency(), bd.total_energy()))
            })();
            match cell {
                Ok((latency, energy)) => cells.push(SweepCell {
                    scheme,
                    value,
                    latency: Some(latency),
                    energy: Some(energy),
                    status: "ok".into(),
                }),
                Err(e) => cells.push(SweepCell {
                    scheme,
                    value,
                    latency: None,
                    energy: None,
                    status: format!("failed: {e}"),
                }),
            }
        }
    }
    Ok(cells)
}

#[derive(Debug, Clone, Copy)]
pub struct EhRow {
    pub node_count: usize,
    pub latency_eh: f64,
    pub latency_no_eh: f64,
}

/// Energy-harvesting comparison: Proposed scheme with EH on vs off over a
/// set of relay counts, one instance seed per count.
pub fn eh_comparison(
    gen: &GenParams,
    routes: usize,
    rounds: usize,
    counts: &[usize],
    seed: u64,
    opts: &BcdOptions,
) -> Result<Vec<EhRow>, BcdError> {
    let mut rows = Vec::new();
    for (i, &count) in counts.iter().enumerate() {
        let shape = InstanceShape { routes, relays: count, rounds };
        let cell_seed = derive_seed(seed, i as u64);
        let mut latency = [0.0; 2];
        for (slot, eh) in [(0usize, true), (1, false)] {
            let g = GenParams { eh_enabled: eh, ..gen.clone() };
            let inst = generate_instance(cell_seed, shape, &g)
                .map_err(|e| BcdError::InfeasibleInit(e.to_string()))?;
            let init = initial_vars(&inst)?;
            let state = bcd_optimize(&inst, init, opts)?;
            latency[slot] = state.final_latency();
        }
        rows.push(EhRow { node_count: count, latency_eh: latency[0], latency_no_eh: latency[1] });
    }
    Ok(rows)
}
