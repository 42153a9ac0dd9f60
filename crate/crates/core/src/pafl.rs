//! Personalized federated learning with adaptive weighted aggregation, plus
//! the personalized-fine-tuning and vanilla baselines, on a synthetic
//! label-skew classification task (multinomial logistic regression over
//! Gaussian class clusters).
//!
//! All three algorithms run through one code path, so the vanilla baseline
//! is literally the personalized update with lambda = 0 and uniform
//! aggregation weights — the trajectories coincide bitwise for equal seeds.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FlError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("non-finite {what}")]
    NonFinite { what: String },
    #[error("empty client set")]
    EmptyClients,
    #[error("aggregation weights must be positive with positive sum")]
    BadWeights,
    #[error("training diverged at round {round}: loss is non-finite")]
    Diverged { round: usize },
    #[error("invalid training config: {0}")]
    BadConfig(String),
}

/// One labeled dataset. Features carry a trailing bias column of ones.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub features: DMatrix<f64>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }
    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
    /// Feature dimension including the bias column.
    pub fn dim(&self) -> usize {
        self.features.ncols()
    }
}

/// Synthetic federated split: per-client training shards, per-client
/// held-out sets drawn from the same skewed mixtures, and a population-level
/// held-out set following the aggregate label distribution of the split.
#[derive(Debug, Clone)]
pub struct FlData {
    pub clients: Vec<Dataset>,
    /// Held-out evaluation data per client, same label mixture as training.
    pub local_holdouts: Vec<Dataset>,
    pub holdout: Dataset,
}

#[derive(Debug, Clone)]
pub struct SyntheticParams {
    pub num_classes: usize,
    pub feature_dim: usize,
    /// Distance scale of the class cluster means.
    pub cluster_spread: f64,
    /// Per-client sample count range (inclusive); drawn uniformly, so shards
    /// are deliberately unequal.
    pub samples_range: (usize, usize),
    /// Probability mass on each client's two dominant labels.
    pub skew: f64,
    /// Population-level held-out samples. Labels follow the aggregate label
    /// distribution of the training split, so the held-out set represents
    /// the population the federation actually serves.
    pub holdout_size: usize,
    /// Held-out samples per client, drawn from that client's skewed mixture.
    pub local_holdout_per_client: usize,
}

impl Default for SyntheticParams {
    fn default() -> Self {
        SyntheticParams {
            num_classes: 10,
            feature_dim: 20,
            cluster_spread: 1.5,
            samples_range: (20, 300),
            skew: 0.9,
            holdout_size: 500,
            local_holdout_per_client: 100,
        }
    }
}

fn draw_sample(
    rng: &mut ChaCha8Rng,
    means: &[DVector<f64>],
    label: usize,
    dim: usize,
) -> DVector<f64> {
    let noise: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
    &means[label] + DVector::from_vec(noise)
}

fn dataset_from(samples: Vec<(DVector<f64>, usize)>, num_classes: usize) -> Dataset {
    let n = samples.len();
    let dim = samples[0].0.len();
    let mut features = DMatrix::zeros(n, dim + 1);
    let mut labels = Vec::with_capacity(n);
    for (i, (x, y)) in samples.into_iter().enumerate() {
        for j in 0..dim {
            features[(i, j)] = x[j];
        }
        features[(i, dim)] = 1.0;
        labels.push(y);
    }
    Dataset { features, labels, num_classes }
}

/// Deterministic label-skew split: client u concentrates `skew` of its label
/// mass on the two labels (2u, 2u+1) mod C and spreads the rest uniformly.
pub fn synthetic_data(
    seed: u64,
    num_clients: usize,
    params: &SyntheticParams,
) -> Result<FlData, FlError> {
    if num_clients == 0 {
        return Err(FlError::EmptyClients);
    }
    if params.num_classes < 2 || params.feature_dim == 0 {
        return Err(FlError::BadConfig("need >= 2 classes and >= 1 feature".into()));
    }
    if !(0.0..=1.0).contains(&params.skew) {
        return Err(FlError::BadConfig("skew must lie in [0, 1]".into()));
    }
    let (lo, hi) = params.samples_range;
    if lo == 0 || hi < lo {
        return Err(FlError::BadConfig("samples_range must be positive and ordered".into()));
    }
    let c = params.num_classes;
    let d = params.feature_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let means: Vec<DVector<f64>> = (0..c)
        .map(|_| {
            let v: Vec<f64> = (0..d)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    params.cluster_spread * z
                })
                .collect();
            DVector::from_vec(v)
        })
        .collect();

    let draw_label = |rng: &mut ChaCha8Rng, u: usize| -> usize {
        let dom = [(2 * u) % c, (2 * u + 1) % c];
        let rest = (1.0 - params.skew) / (c - 2) as f64;
        let roll: f64 = rng.gen();
        if roll < params.skew {
            return dom[if rng.gen_bool(0.5) { 0 } else { 1 }];
        }
        // Inverse-CDF over the remaining labels.
        let mut r = (roll - params.skew) / rest;
        let mut pick = 0;
        for l in 0..c {
            if dom.contains(&l) {
                continue;
            }
            if r < 1.0 {
                return l;
            }
            r -= 1.0;
            pick = l;
        }
        pick
    };

    let mut clients = Vec::with_capacity(num_clients);
    let mut local_holdouts = Vec::with_capacity(num_clients);
    for u in 0..num_clients {
        let n = rng.gen_range(lo..=hi);
        let draw_set = |rng: &mut ChaCha8Rng, count: usize| {
            let samples: Vec<(DVector<f64>, usize)> = (0..count)
                .map(|_| {
                    let label = draw_label(rng, u);
                    (draw_sample(rng, &means, label, d), label)
                })
                .collect();
            dataset_from(samples, c)
        };
        clients.push(draw_set(&mut rng, n));
        local_holdouts.push(draw_set(&mut rng, params.local_holdout_per_client.max(1)));
    }

    // Held-out labels follow the aggregate training label distribution.
    let mut counts = vec![0usize; c];
    for client in &clients {
        for &l in &client.labels {
            counts[l] += 1;
        }
    }
    let total: usize = counts.iter().sum();
    let cdf: Vec<f64> = counts
        .iter()
        .scan(0.0, |acc, &cnt| {
            *acc += cnt as f64 / total as f64;
            Some(*acc)
        })
        .collect();
    let holdout_samples: Vec<(DVector<f64>, usize)> = (0..params.holdout_size.max(1))
        .map(|_| {
            let roll: f64 = rng.gen();
            let label = cdf.iter().position(|&p| roll < p).unwrap_or(c - 1);
            (draw_sample(&mut rng, &means, label, d), label)
        })
        .collect();
    Ok(FlData { clients, local_holdouts, holdout: dataset_from(holdout_samples, c) })
}

/// Model layout: row-major C x D weight matrix flattened into a vector,
/// D = feature dim including bias.
fn logits(w: &DVector<f64>, data: &Dataset, row: usize) -> Vec<f64> {
    let d = data.dim();
    (0..data.num_classes)
        .map(|class| {
            let mut z = 0.0;
            for j in 0..d {
                z += w[class * d + j] * data.features[(row, j)];
            }
            z
        })
        .collect()
}

fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
}

/// Mean cross-entropy loss and its analytic gradient for multinomial
/// logistic regression.
pub fn loss_and_gradient(w: &DVector<f64>, data: &Dataset) -> Result<(f64, DVector<f64>), FlError> {
    let d = data.dim();
    let c = data.num_classes;
    if w.len() != c * d {
        return Err(FlError::DimensionMismatch(format!(
            "model has {} entries, data needs {}",
            w.len(),
            c * d
        )));
    }
    if data.is_empty() {
        return Err(FlError::EmptyClients);
    }
    let n = data.len() as f64;
    let mut loss = 0.0;
    let mut grad = DVector::zeros(c * d);
    for i in 0..data.len() {
        let mut p = logits(w, data, i);
        softmax_in_place(&mut p);
        loss -= p[data.labels[i]].max(1e-300).ln();
        for (class, &pk) in p.iter().enumerate() {
            let resid = pk - if class == data.labels[i] { 1.0 } else { 0.0 };
            for j in 0..d {
                grad[class * d + j] += resid * data.features[(i, j)];
            }
        }
    }
    loss /= n;
    grad /= n;
    if !loss.is_finite() {
        return Err(FlError::NonFinite { what: "loss".into() });
    }
    Ok((loss, grad))
}

/// Fraction of correctly classified rows under the argmax rule.
pub fn accuracy(w: &DVector<f64>, data: &Dataset) -> f64 {
    let mut hits = 0usize;
    for i in 0..data.len() {
        let z = logits(w, data, i);
        let best = z
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(k, _)| k)
            .unwrap();
        if best == data.labels[i] {
            hits += 1;
        }
    }
    hits as f64 / data.len().max(1) as f64
}

/// One personalized local step: w' = w - eta * (g + lambda * (w - w_global)).
pub fn pafl_local_update(
    w_u: &DVector<f64>,
    w_global: &DVector<f64>,
    gradient: &DVector<f64>,
    eta: f64,
    lambda: f64,
) -> Result<DVector<f64>, FlError> {
    if w_u.len() != w_global.len() || w_u.len() != gradient.len() {
        return Err(FlError::DimensionMismatch(format!(
            "w_u {}, w_global {}, gradient {}",
            w_u.len(),
            w_global.len(),
            gradient.len()
        )));
    }
    if eta <= 0.0 || lambda < 0.0 {
        return Err(FlError::BadConfig(format!("eta = {eta}, lambda = {lambda}")));
    }
    if gradient.iter().any(|g| !g.is_finite()) {
        return Err(FlError::NonFinite { what: "gradient".into() });
    }
    Ok(w_u - eta * (gradient + lambda * (w_u - w_global)))
}

/// Weighted model average: sum(alpha_u w_u) / sum(alpha_u).
pub fn pafl_aggregate(models: &[DVector<f64>], weights: &[f64]) -> Result<DVector<f64>, FlError> {
    if models.is_empty() {
        return Err(FlError::EmptyClients);
    }
    if models.len() != weights.len() {
        return Err(FlError::DimensionMismatch(format!(
            "{} models, {} weights",
            models.len(),
            weights.len()
        )));
    }
    let total: f64 = weights.iter().sum();
    if weights.iter().any(|&a| a <= 0.0) || total <= 0.0 {
        return Err(FlError::BadWeights);
    }
    let dim = models[0].len();
    let mut acc = DVector::zeros(dim);
    for (w, &a) in models.iter().zip(weights) {
        if w.len() != dim {
            return Err(FlError::DimensionMismatch(format!(
                "model length {} vs {}",
                w.len(),
                dim
            )));
        }
        acc += a * w;
    }
    Ok(acc / total)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Pafl,
    PersonalizedFl,
    VanillaFl,
}

impl Algorithm {
    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::Pafl => "pafl",
            Algorithm::PersonalizedFl => "personalized-fl",
            Algorithm::VanillaFl => "vanilla-fl",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightRule {
    /// alpha_u proportional to the client's sample count (FedAvg weighting).
    DataSize,
    /// alpha_u proportional to 1 / (client training loss + 1).
    InverseLoss,
    Uniform,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TrainConfig {
    pub rounds: usize,
    pub local_steps: usize,
    pub eta: f64,
    pub lambda: f64,
    pub weight_rule: WeightRule,
    pub algorithm: Algorithm,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            rounds: 50,
            local_steps: 5,
            eta: 0.05,
            lambda: 0.5,
            weight_rule: WeightRule::DataSize,
            algorithm: Algorithm::Pafl,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct RoundMetrics {
    pub round: usize,
    pub accuracy: f64,
    pub loss: f64,
}

/// Training output: per-round deployment metrics plus the global-model
/// trajectory (one aggregate per round). The trajectory is what algorithm
/// reductions are compared on: with lambda = 0 and uniform weights the
/// personalized path produces bitwise the same aggregates as the vanilla
/// baseline.
#[derive(Debug, Clone)]
pub struct TrainResult {
    pub metrics: Vec<RoundMetrics>,
    pub global_trajectory: Vec<DVector<f64>>,
}

impl TrainResult {
    pub fn final_loss(&self) -> f64 {
        self.metrics.last().expect("at least one round").loss
    }
}

fn client_weights(
    rule: WeightRule,
    data: &FlData,
    losses: &[f64],
) -> Vec<f64> {
    match rule {
        WeightRule::Uniform => vec![1.0; data.clients.len()],
        WeightRule::DataSize => data.clients.iter().map(|c| c.len() as f64).collect(),
        WeightRule::InverseLoss => losses.iter().map(|&l| 1.0 / (l + 1.0)).collect(),
    }
}

/// Full training loop over global rounds. All three algorithms share this
/// code path: the vanilla baseline is the same loop with lambda forced to 0
/// and uniform weights, and the personalized baseline fine-tunes the
/// aggregate with lambda = 0.
///
/// Metrics follow the deployment protocol: every client is evaluated on its
/// own held-out set — with its personalized model for the personalized
/// algorithms, with the shared global model for the vanilla baseline — and
/// the per-client losses and accuracies are averaged.
pub fn train(config: &TrainConfig, data: &FlData) -> Result<TrainResult, FlError> {
    if config.rounds == 0 || config.local_steps == 0 {
        return Err(FlError::BadConfig("rounds and local_steps must be >= 1".into()));
    }
    if data.clients.is_empty() {
        return Err(FlError::EmptyClients);
    }
    if data.local_holdouts.len() != data.clients.len() {
        return Err(FlError::DimensionMismatch(format!(
            "{} clients vs {} local holdouts",
            data.clients.len(),
            data.local_holdouts.len()
        )));
    }
    let (lambda, rule) = match config.algorithm {
        Algorithm::Pafl => (config.lambda, config.weight_rule),
        Algorithm::PersonalizedFl => (0.0, config.weight_rule),
        Algorithm::VanillaFl => (0.0, WeightRule::Uniform),
    };
    let personalized_eval = config.algorithm != Algorithm::VanillaFl;
    let dim = data.clients[0].num_classes * data.clients[0].dim();
    let mut global = DVector::zeros(dim);
    let mut metrics = Vec::with_capacity(config.rounds);
    let mut trajectory = Vec::with_capacity(config.rounds);
    for round in 0..config.rounds {
        let mut models = Vec::with_capacity(data.clients.len());
        let mut losses = Vec::with_capacity(data.clients.len());
        for client in &data.clients {
            let mut w = global.clone();
            let mut last_loss = 0.0;
            for _ in 0..config.local_steps {
                let (loss, grad) = loss_and_gradient(&w, client)?;
                last_loss = loss;
                w = pafl_local_update(&w, &global, &grad, config.eta, lambda)?;
            }
            models.push(w);
            losses.push(last_loss);
        }
        let weights = client_weights(rule, data, &losses);
        global = pafl_aggregate(&models, &weights)?;

        let mut acc = 0.0;
        let mut loss = 0.0;
        for (u, holdout) in data.local_holdouts.iter().enumerate() {
            let model = if personalized_eval { &models[u] } else { &global };
            acc += accuracy(model, holdout);
            loss += loss_and_gradient(model, holdout)?.0;
        }
        let count = data.local_holdouts.len() as f64;
        acc /= count;
        loss /= count;
        if !loss.is_finite() {
            return Err(FlError::Diverged { round });
        }
        metrics.push(RoundMetrics { round, accuracy: acc, loss });
        trajectory.push(global.clone());
    }
    Ok(TrainResult { metrics, global_trajectory: trajectory })
}
