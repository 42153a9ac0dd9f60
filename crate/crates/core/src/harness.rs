//! Experiment configuration, orchestration, and reproducible artifact
//! output: structured-text configs, CSV tables, and run manifests that allow
//! byte-identical replay.

use crate::bcd::{
    eh_comparison, initial_vars, run_baseline, sweep, BaselineKind, BcdOptions, SweepParam,
};
use crate::cost::total_latency;
use crate::net::{
    derive_seed, export_instance, generate_instance, GenParams, InstanceShape,
};
use crate::pafl::{synthetic_data, train, Algorithm, SyntheticParams, TrainConfig, WeightRule};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid config value for `{key}`: {detail}")]
    Validation { key: String, detail: String },
    #[error("csv write error: {0}")]
    Csv(#[from] csv::Error),
    #[error("manifest mismatch: {0}")]
    Manifest(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Convergence,
    BaselineCompare,
    Sweep,
    EhTable,
    FlTraining,
}

impl ExperimentKind {
    pub fn output_file(&self) -> &'static str {
        match self {
            ExperimentKind::Convergence => "convergence.csv",
            ExperimentKind::BaselineCompare => "baseline_compare.csv",
            ExperimentKind::Sweep => "sweep.csv",
            ExperimentKind::EhTable => "eh_table.csv",
            ExperimentKind::FlTraining => "fl_metrics.csv",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct ShapeConfig {
    #[serde(default = "d_routes")]
    pub routes: usize,
    #[serde(default = "d_relays")]
    pub relays: usize,
    #[serde(default = "d_rounds")]
    pub rounds: usize,
}
fn d_routes() -> usize {
    3
}
fn d_relays() -> usize {
    6
}
fn d_rounds() -> usize {
    84
}
impl Default for ShapeConfig {
    fn default() -> Self {
        ShapeConfig { routes: 3, relays: 6, rounds: 84 }
    }
}

/// Optional overrides of the network generation defaults (20 MHz system
/// band, -174 dBm/Hz noise, 2 GHz caps, 25 dBm caps). Power caps are
/// configured in dBm and must stay within the supported [5, 25] range.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct NetworkOverrides {
    pub leaf_max_power_dbm: Option<f64>,
    pub relay_max_power_dbm: Option<f64>,
    pub leaf_max_freq: Option<f64>,
    pub relay_max_freq: Option<f64>,
    pub bandwidth_total: Option<f64>,
    pub payload_bits: Option<f64>,
    pub leaf_energy_budget: Option<f64>,
    pub relay_self_energy: Option<f64>,
    pub source_energy: Option<f64>,
    pub move_prob: Option<f64>,
    pub outage_prob: Option<f64>,
    pub eh_enabled: Option<bool>,
}

fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct SolverConfig {
    #[serde(default = "d_tol")]
    pub tol: f64,
    #[serde(default = "d_max_iter")]
    pub max_iter: usize,
}
fn d_tol() -> f64 {
    1e-4
}
fn d_max_iter() -> usize {
    30
}
impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig { tol: 1e-4, max_iter: 30 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct SweepConfig {
    #[serde(default = "d_sweep_param")]
    pub param: SweepParam,
    #[serde(default = "d_sweep_grid")]
    pub grid: Vec<f64>,
    #[serde(default = "d_sweep_schemes")]
    pub schemes: Vec<BaselineKind>,
}
fn d_sweep_param() -> SweepParam {
    SweepParam::LeafMaxFreq
}
fn d_sweep_grid() -> Vec<f64> {
    vec![1.0e9, 1.25e9, 1.5e9, 1.75e9, 2.0e9]
}
fn d_sweep_schemes() -> Vec<BaselineKind> {
    vec![BaselineKind::Proposed, BaselineKind::Greedy]
}
impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig { param: d_sweep_param(), grid: d_sweep_grid(), schemes: d_sweep_schemes() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct EhTableConfig {
    #[serde(default = "d_eh_counts")]
    pub node_counts: Vec<usize>,
    /// Global rounds per table cell (kept small: each cell is one full run).
    #[serde(default = "d_eh_rounds")]
    pub rounds: usize,
}
fn d_eh_counts() -> Vec<usize> {
    vec![3, 6, 9]
}
fn d_eh_rounds() -> usize {
    10
}
impl Default for EhTableConfig {
    fn default() -> Self {
        EhTableConfig { node_counts: d_eh_counts(), rounds: d_eh_rounds() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct FlConfig {
    #[serde(default = "d_fl_clients")]
    pub clients: usize,
    #[serde(default = "d_fl_rounds")]
    pub rounds: usize,
    #[serde(default = "d_fl_steps")]
    pub local_steps: usize,
    #[serde(default = "d_fl_eta")]
    pub eta: f64,
    #[serde(default = "d_fl_lambda")]
    pub lambda: f64,
    #[serde(default = "d_fl_rule")]
    pub weight_rule: WeightRule,
    #[serde(default = "d_fl_algorithms")]
    pub algorithms: Vec<Algorithm>,
}
fn d_fl_clients() -> usize {
    10
}
fn d_fl_rounds() -> usize {
    50
}
fn d_fl_steps() -> usize {
    5
}
fn d_fl_eta() -> f64 {
    0.05
}
fn d_fl_lambda() -> f64 {
    0.5
}
fn d_fl_rule() -> WeightRule {
    WeightRule::DataSize
}
fn d_fl_algorithms() -> Vec<Algorithm> {
    vec![Algorithm::Pafl, Algorithm::VanillaFl]
}
impl Default for FlConfig {
    fn default() -> Self {
        FlConfig {
            clients: d_fl_clients(),
            rounds: d_fl_rounds(),
            local_steps: d_fl_steps(),
            eta: d_fl_eta(),
            lambda: d_fl_lambda(),
            weight_rule: d_fl_rule(),
            algorithms: d_fl_algorithms(),
        }
    }
}

/// Top-level experiment description. An empty file is valid and yields the
/// default convergence experiment with the standard parameter set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct ExperimentConfig {
    #[serde(default = "d_kind")]
    pub kind: ExperimentKind,
    #[serde(default = "d_seed")]
    pub seed: u64,
    /// Optional explicit seed list; defaults to the single base seed.
    #[serde(default)]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub dump_instance: bool,
    #[serde(default)]
    pub shape: ShapeConfig,
    #[serde(default)]
    pub network: NetworkOverrides,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub eh: EhTableConfig,
    #[serde(default)]
    pub fl: FlConfig,
}
fn d_kind() -> ExperimentKind {
    ExperimentKind::Convergence
}
fn d_seed() -> u64 {
    1
}
impl Default for ExperimentConfig {
    fn default() -> Self {
        parse_config("").expect("empty config is valid")
    }
}

impl ExperimentConfig {
    pub fn seed_list(&self) -> Vec<u64> {
        if self.seeds.is_empty() {
            vec![self.seed]
        } else {
            self.seeds.clone()
        }
    }

    /// Network generation parameters with overrides applied.
    pub fn gen_params(&self) -> GenParams {
        let mut g = GenParams::default();
        let o = &self.network;
        if let Some(dbm) = o.leaf_max_power_dbm {
            g.leaf_max_power = dbm_to_watts(dbm);
        }
        if let Some(dbm) = o.relay_max_power_dbm {
            g.relay_max_power = dbm_to_watts(dbm);
        }
        macro_rules! take {
            ($($field:ident),*) => {
                $(if let Some(v) = o.$field { g.$field = v; })*
            };
        }
        take!(
            leaf_max_freq,
            relay_max_freq,
            bandwidth_total,
            payload_bits,
            leaf_energy_budget,
            relay_self_energy,
            source_energy,
            move_prob,
            outage_prob,
            eh_enabled
        );
        g
    }

    pub fn instance_shape(&self) -> InstanceShape {
        InstanceShape {
            routes: self.shape.routes,
            relays: self.shape.relays,
            rounds: self.shape.rounds,
        }
    }

    pub fn bcd_options(&self, tol_override: Option<f64>) -> BcdOptions {
        BcdOptions {
            tol: tol_override.unwrap_or(self.solver.tol),
            max_iter: self.solver.max_iter,
            ..BcdOptions::default()
        }
    }

    /// Range and consistency checks beyond what the parser enforces.
    pub fn validate(&self) -> Result<(), HarnessError> {
        let fail = |key: &str, detail: String| {
            Err(HarnessError::Validation { key: key.to_string(), detail })
        };
        for (key, v) in [
            ("network.leaf-max-power-dbm", self.network.leaf_max_power_dbm),
            ("network.relay-max-power-dbm", self.network.relay_max_power_dbm),
        ] {
            if let Some(dbm) = v {
                if !(5.0..=25.0).contains(&dbm) {
                    return fail(key, format!("{dbm} dBm outside the supported range [5, 25]"));
                }
            }
        }
        if self.solver.tol <= 0.0 {
            return fail("solver.tol", "must be positive".into());
        }
        if self.solver.max_iter == 0 {
            return fail("solver.max-iter", "must be >= 1".into());
        }
        if self.kind == ExperimentKind::Sweep {
            if self.sweep.grid.is_empty() {
                return fail("sweep.grid", "must contain at least one value".into());
            }
            if self.sweep.grid.iter().any(|&v| v <= 0.0)
                || self.sweep.grid.windows(2).any(|w| w[1] <= w[0])
            {
                return fail("sweep.grid", "must be positive and strictly ascending".into());
            }
            if self.sweep.schemes.is_empty() {
                return fail("sweep.schemes", "must contain at least one scheme".into());
            }
        }
        if self.kind == ExperimentKind::EhTable {
            if self.eh.node_counts.is_empty() {
                return fail("eh.node-counts", "must contain at least one count".into());
            }
            if self.eh.rounds == 0 {
                return fail("eh.rounds", "must be >= 1".into());
            }
        }
        if self.kind == ExperimentKind::FlTraining {
            if self.fl.clients == 0 || self.fl.rounds == 0 || self.fl.local_steps == 0 {
                return fail("fl", "clients, rounds, local-steps must be >= 1".into());
            }
            if self.fl.eta <= 0.0 {
                return fail("fl.eta", "must be positive".into());
            }
            if self.fl.lambda < 0.0 {
                return fail("fl.lambda", "must be nonnegative".into());
            }
            if self.fl.algorithms.is_empty() {
                return fail("fl.algorithms", "must contain at least one algorithm".into());
            }
        }
        // Everything upstream of a run must already be generable: dry-run a
        // one-round instance through the generator's own range checks.
        let shape = InstanceShape { rounds: 1, ..self.instance_shape() };
        generate_instance(self.seed, shape, &self.gen_params()).map_err(|e| {
            HarnessError::Validation { key: "shape/network".into(), detail: e.to_string() }
        })?;
        Ok(())
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serialization cannot fail")
    }
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig, HarnessError> {
    toml::from_str(text).map_err(|e| HarnessError::Parse(e.to_string()))
}

/// Loads and validates a config file; returns the config and the raw text
/// (the raw text is embedded in the run manifest).
pub fn load_config(path: &Path) -> Result<(ExperimentConfig, String), HarnessError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let config = parse_config(&text)?;
    config.validate()?;
    Ok((config, text))
}

pub fn sha256_hex(text: &str) -> String {
    let digest = Sha256::digest(text.as_bytes());
    let mut out = String::with_capacity(64);
    for b in digest {
        let _ = write!(out, "{b:02x}");
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct Manifest {
    pub version: String,
    pub seed: u64,
    pub config_sha256: String,
    pub config: String,
}

#[derive(Debug, Clone, Copy)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub jobs: usize,
    pub tol: Option<f64>,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions { seed: None, jobs: 1, tol: None }
    }
}

#[derive(Debug)]
pub struct RunOutcome {
    pub files: Vec<PathBuf>,
    pub failed_cells: usize,
    pub total_cells: usize,
}

impl RunOutcome {
    pub fn all_ok(&self) -> bool {
        self.failed_cells == 0
    }
}

type Row = Vec<String>;

/// Runs `f` over `items` on up to `jobs` threads, preserving input order.
fn parallel_map<I, O, F>(jobs: usize, items: &[I], f: F) -> Vec<O>
where
    I: Sync,
    O: Send,
    F: Fn(&I) -> O + Sync,
{
    let jobs = jobs.max(1).min(items.len().max(1));
    if jobs <= 1 {
        return items.iter().map(&f).collect();
    }
    let mut out: Vec<Option<O>> = (0..items.len()).map(|_| None).collect();
    let chunk = items.len().div_ceil(jobs);
    let f = &f;
    std::thread::scope(|scope| {
        for (islice, oslice) in items.chunks(chunk).zip(out.chunks_mut(chunk)) {
            scope.spawn(move || {
                for (i, o) in islice.iter().zip(oslice.iter_mut()) {
                    *o = Some(f(i));
                }
            });
        }
    });
    out.into_iter().map(|o| o.expect("every slot is filled")).collect()
}

fn fmt(v: f64) -> String {
    format!("{v}")
}

struct Cell {
    rows: Vec<Row>,
    failed: usize,
    total: usize,
}

fn trace_cell(
    config: &ExperimentConfig,
    seed: u64,
    schemes: &[BaselineKind],
    opts: &BcdOptions,
) -> Cell {
    let mut rows = Vec::new();
    let mut failed = 0;
    let inst = match generate_instance(seed, config.instance_shape(), &config.gen_params()) {
        Ok(i) => i,
        Err(e) => {
            return Cell {
                rows: vec![vec![
                    "all".into(),
                    seed.to_string(),
                    "0".into(),
                    String::new(),
                    String::new(),
                    format!("failed: {e}"),
                ]],
                failed: schemes.len(),
                total: schemes.len(),
            }
        }
    };
    for &scheme in schemes {
        let result = initial_vars(&inst)
            .and_then(|init| run_baseline(scheme, &inst, init, opts))
            .and_then(|state| {
                let energy = total_latency(&inst, &state.vars)?.total_energy();
                Ok((state, energy))
            });
        match result {
            Ok((state, energy)) => {
                for (it, &latency) in state.objective_history.iter().enumerate() {
                    rows.push(vec![
                        scheme.name().into(),
                        seed.to_string(),
                        it.to_string(),
                        fmt(latency),
                        fmt(energy),
                        "ok".into(),
                    ]);
                }
            }
            Err(e) => {
                failed += 1;
                rows.push(vec![
                    scheme.name().into(),
                    seed.to_string(),
                    "0".into(),
                    String::new(),
                    String::new(),
                    format!("failed: {e}"),
                ]);
            }
        }
    }
    Cell { rows, failed, total: schemes.len() }
}

fn write_csv(path: &Path, header: &[&str], rows: &[Row]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| HarnessError::Parse(format!("cannot open {}: {e}", path.display())))?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

/// Executes the experiment and writes its CSV, the manifest, and (optionally)
/// the realized instance into `out_dir`.
pub fn run(
    config: &ExperimentConfig,
    config_text: &str,
    out_dir: &Path,
    opts: &RunOptions,
) -> Result<RunOutcome, HarnessError> {
    let mut config = config.clone();
    if let Some(seed) = opts.seed {
        config.seed = seed;
        config.seeds.clear();
    }
    config.validate()?;
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let bcd_opts = config.bcd_options(opts.tol);
    let seeds = config.seed_list();

    let (header, cells): (Vec<&str>, Vec<Cell>) = match config.kind {
        ExperimentKind::Convergence | ExperimentKind::BaselineCompare => {
            let schemes: &[BaselineKind] = if config.kind == ExperimentKind::Convergence {
                &[BaselineKind::Proposed]
            } else {
                &BaselineKind::ALL
            };
            let cells = parallel_map(opts.jobs, &seeds, |&seed| {
                trace_cell(&config, seed, schemes, &bcd_opts)
            });
            (vec!["scheme", "seed", "iteration", "latency_s", "energy_j", "status"], cells)
        }
        ExperimentKind::Sweep => {
            let cells = parallel_map(opts.jobs, &seeds, |&seed| {
                match sweep(
                    &config.gen_params(),
                    config.instance_shape(),
                    seed,
                    config.sweep.param,
                    &config.sweep.grid,
                    &config.sweep.schemes,
                    &bcd_opts,
                ) {
                    Ok(cells) => {
                        let failed = cells.iter().filter(|c| c.status != "ok").count();
                        let total = cells.len();
                        let rows = cells
                            .into_iter()
                            .map(|c| {
                                vec![
                                    c.scheme.name().into(),
                                    seed.to_string(),
                                    fmt(c.value),
                                    c.latency.map(fmt).unwrap_or_default(),
                                    c.energy.map(fmt).unwrap_or_default(),
                                    c.status,
                                ]
                            })
                            .collect();
                        Cell { rows, failed, total }
                    }
                    Err(e) => Cell {
                        rows: vec![vec![
                            "all".into(),
                            seed.to_string(),
                            String::new(),
                            String::new(),
                            String::new(),
                            format!("failed: {e}"),
                        ]],
                        failed: 1,
                        total: 1,
                    },
                }
            });
            (
                vec![
                    "scheme",
                    "seed",
                    config.sweep.param.name(),
                    "latency_s",
                    "energy_j",
                    "status",
                ],
                cells,
            )
        }
        ExperimentKind::EhTable => {
            let cells = parallel_map(opts.jobs, &seeds, |&seed| {
                match eh_comparison(
                    &config.gen_params(),
                    config.shape.routes,
                    config.eh.rounds,
                    &config.eh.node_counts,
                    seed,
                    &bcd_opts,
                ) {
                    Ok(table) => Cell {
                        total: table.len(),
                        rows: table
                            .iter()
                            .map(|r| {
                                vec![
                                    seed.to_string(),
                                    r.node_count.to_string(),
                                    fmt(r.latency_eh),
                                    fmt(r.latency_no_eh),
                                    fmt(r.latency_no_eh - r.latency_eh),
                                    "ok".into(),
                                ]
                            })
                            .collect(),
                        failed: 0,
                    },
                    Err(e) => Cell {
                        rows: vec![vec![
                            seed.to_string(),
                            String::new(),
                            String::new(),
                            String::new(),
                            String::new(),
                            format!("failed: {e}"),
                        ]],
                        failed: 1,
                        total: 1,
                    },
                }
            });
            (
                vec!["seed", "node_count", "latency_eh_s", "latency_no_eh_s", "gap_s", "status"],
                cells,
            )
        }
        ExperimentKind::FlTraining => {
            let cells = parallel_map(opts.jobs, &seeds, |&seed| {
                let mut rows = Vec::new();
                let mut failed = 0;
                let total = config.fl.algorithms.len();
                let data = match synthetic_data(seed, config.fl.clients, &SyntheticParams::default())
                {
                    Ok(d) => d,
                    Err(e) => {
                        return Cell {
                            rows: vec![vec![
                                "0".into(),
                                "all".into(),
                                String::new(),
                                String::new(),
                                seed.to_string(),
                                format!("failed: {e}"),
                            ]],
                            failed: total,
                            total,
                        }
                    }
                };
                for &algorithm in &config.fl.algorithms {
                    let tc = TrainConfig {
                        rounds: config.fl.rounds,
                        local_steps: config.fl.local_steps,
                        eta: config.fl.eta,
                        lambda: config.fl.lambda,
                        weight_rule: config.fl.weight_rule,
                        algorithm,
                    };
                    match train(&tc, &data) {
                        Ok(result) => {
                            for m in result.metrics {
                                rows.push(vec![
                                    m.round.to_string(),
                                    algorithm.name().into(),
                                    fmt(m.accuracy),
                                    fmt(m.loss),
                                    seed.to_string(),
                                    "ok".into(),
                                ]);
                            }
                        }
                        Err(e) => {
                            failed += 1;
                            rows.push(vec![
                                "0".into(),
                                algorithm.name().into(),
                                String::new(),
                                String::new(),
                                seed.to_string(),
                                format!("failed: {e}"),
                            ]);
                        }
                    }
                }
                Cell { rows, failed, total }
            });
            (vec!["round", "algorithm", "accuracy", "loss", "seed", "status"], cells)
        }
    };

    let rows: Vec<Row> = cells.iter().flat_map(|c| c.rows.clone()).collect();
    let failed_cells: usize = cells.iter().map(|c| c.failed).sum();
    let total_cells: usize = cells.iter().map(|c| c.total).sum();

    let mut files = Vec::new();
    let csv_path = out_dir.join(config.kind.output_file());
    write_csv(&csv_path, &header, &rows)?;
    files.push(csv_path);

    if config.dump_instance && config.kind != ExperimentKind::FlTraining {
        for (i, &seed) in seeds.iter().enumerate() {
            let inst_seed = derive_seed(seed, i as u64);
            if let Ok(inst) =
                generate_instance(inst_seed, config.instance_shape(), &config.gen_params())
            {
                let path = out_dir.join(format!("instance_{seed}.toml"));
                std::fs::write(&path, export_instance(&inst)).map_err(io_err(&path))?;
                files.push(path);
            }
        }
    }

    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: config.seed,
        config_sha256: sha256_hex(config_text),
        config: config_text.to_string(),
    };
    let manifest_path = out_dir.join("manifest.toml");
    std::fs::write(
        &manifest_path,
        toml::to_string_pretty(&manifest).expect("manifest serialization cannot fail"),
    )
    .map_err(io_err(&manifest_path))?;
    files.push(manifest_path);

    Ok(RunOutcome { files, failed_cells, total_cells })
}

#[derive(Debug)]
pub struct ReplayOutcome {
    pub outcome: RunOutcome,
    /// Files that existed before the replay and came out different.
    pub mismatches: Vec<PathBuf>,
    /// Files that existed before the replay and matched byte-for-byte.
    pub verified: usize,
}

/// Re-runs the experiment recorded in a manifest and verifies that every
/// pre-existing output file is reproduced byte-identically.
pub fn replay(
    manifest_path: &Path,
    out_dir: Option<&Path>,
    opts: &RunOptions,
) -> Result<ReplayOutcome, HarnessError> {
    let text = std::fs::read_to_string(manifest_path).map_err(io_err(manifest_path))?;
    let manifest: Manifest =
        toml::from_str(&text).map_err(|e| HarnessError::Parse(e.to_string()))?;
    if sha256_hex(&manifest.config) != manifest.config_sha256 {
        return Err(HarnessError::Manifest(
            "embedded config does not match its recorded hash".into(),
        ));
    }
    let config = parse_config(&manifest.config)?;
    let out = out_dir
        .map(Path::to_path_buf)
        .or_else(|| manifest_path.parent().map(Path::to_path_buf))
        .unwrap_or_else(|| PathBuf::from("."));

    // Snapshot whatever already exists so the rerun can be compared to it.
    let mut before: Vec<(PathBuf, Vec<u8>)> = Vec::new();
    let expected = out.join(config.kind.output_file());
    if let Ok(bytes) = std::fs::read(&expected) {
        before.push((expected, bytes));
    }

    let run_opts = RunOptions { seed: Some(manifest.seed), ..*opts };
    let outcome = run(&config, &manifest.config, &out, &run_opts)?;

    let mut mismatches = Vec::new();
    let mut verified = 0;
    for (path, old) in before {
        let new = std::fs::read(&path).map_err(io_err(&path))?;
        if new == old {
            verified += 1;
        } else {
            mismatches.push(path);
        }
    }
    Ok(ReplayOutcome { outcome, mismatches, verified })
}
