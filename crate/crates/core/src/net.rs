//! Multi-hop network instances: topology, stochastic channels, node
//! capability parameters, per-round route availability, and the RF
//! energy-harvesting chain of the relay routes.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("invalid parameter range for `{name}`: {detail}")]
    InvalidRange { name: String, detail: String },
    #[error("hop index {index} out of chain range 1..={len}")]
    HopOutOfRange { index: usize, len: usize },
    #[error("nonpositive input `{name}` = {value}")]
    NonPositive { name: String, value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodeKind {
    Leaf,
    Relay,
}

/// Per-node capability parameters (symbols C, D, L, zeta, P, F, b).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NodeParams {
    pub id: usize,
    pub kind: NodeKind,
    /// CPU cycles needed per data sample.
    pub cycles_per_sample: f64,
    /// Local data samples.
    pub data_samples: f64,
    /// Local training iterations per global round.
    pub local_iters: f64,
    /// Chip/architecture energy coefficient (J s^2 / cycle^3).
    pub chip_coeff: f64,
    /// Transmit power cap P (W).
    pub max_power: f64,
    /// CPU frequency cap F (Hz).
    pub max_freq: f64,
    /// Allocated FDMA bandwidth b (Hz).
    pub bandwidth: f64,
    /// Own energy budget per round (J): E_m^max for leaves, E_n^self for relays.
    pub self_energy: f64,
    /// Power-splitting ratio rho (relays; 1.0 for leaves).
    pub ps_ratio: f64,
    /// Energy conversion efficiency beta (relays; 1.0 for leaves).
    pub conv_eff: f64,
}

/// One realized wireless link: gain g^2 = xi * |g~|^2 with stored path-loss
/// parameters, so `xi == path_loss(A, d, d0, alpha)` holds exactly.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChannelRealization {
    pub large_scale: f64,
    pub small_scale_mag: f64,
    pub ref_attenuation: f64,
    pub distance: f64,
    pub ref_distance: f64,
    pub exponent: f64,
}

impl ChannelRealization {
    /// Channel power gain g^2 entering the SNR.
    pub fn power_gain(&self) -> f64 {
        self.large_scale * self.small_scale_mag * self.small_scale_mag
    }
}

/// One route: an ordered relay chain (closest to the server first) ending in
/// a single leaf node.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RouteTopology {
    pub id: usize,
    /// Relay ids ordered from the server outward.
    pub relay_chain: Vec<usize>,
    pub leaf: usize,
}

/// RF energy-harvesting chain of one route: source energy and per-hop
/// conversion/splitting/gain factors.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EhParams {
    pub source_energy: f64,
    /// Per-hop (beta_j, rho_j, |g_j|^2), hop 1 adjacent to the source.
    pub hops: Vec<(f64, f64, f64)>,
}

impl EhParams {
    /// lambda_n = prod_{j<=n} beta_j |g_j|^2.
    pub fn lambda(&self, n: usize) -> Result<f64, NetError> {
        if n == 0 || n > self.hops.len() {
            return Err(NetError::HopOutOfRange {
                index: n,
                len: self.hops.len(),
            });
        }
        Ok(self.hops[..n].iter().map(|h| h.0 * h.2).product())
    }
}

/// Harvested energy at hop `n`: E_0 * lambda_n * prod_{j<=n} rho_j.
pub fn harvested_energy(eh: &EhParams, n: usize) -> Result<f64, NetError> {
    let lambda = eh.lambda(n)?;
    let rho: f64 = eh.hops[..n].iter().map(|h| h.1).product();
    Ok(eh.source_energy * lambda * rho)
}

/// Large-scale path loss xi = A (d/d0)^(-alpha).
pub fn path_loss(ref_attenuation: f64, d: f64, d0: f64, alpha: f64) -> Result<f64, NetError> {
    for (name, v) in [("A", ref_attenuation), ("d", d), ("d0", d0), ("alpha", alpha)] {
        if v <= 0.0 {
            return Err(NetError::NonPositive {
                name: name.to_string(),
                value: v,
            });
        }
    }
    Ok(ref_attenuation * (d / d0).powf(-alpha))
}

/// Instance shape: route, relay, and round counts.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct InstanceShape {
    pub routes: usize,
    pub relays: usize,
    pub rounds: usize,
}

/// Generation parameters. Defaults follow the experiment setup: 20 MHz
/// system band, -174 dBm/Hz noise, 2 GHz frequency caps, 25 dBm power caps,
/// zeta = 1e-28, L = 5 (leaf) / 15 (relay).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenParams {
    pub cycles_range: (f64, f64),
    pub samples_range: (f64, f64),
    pub distance_range: (f64, f64),
    pub ref_attenuation: f64,
    pub ref_distance: f64,
    pub path_loss_exp: f64,
    pub rayleigh_scale: f64,
    pub leaf_max_power: f64,
    pub relay_max_power: f64,
    pub leaf_max_freq: f64,
    pub relay_max_freq: f64,
    pub leaf_local_iters: f64,
    pub relay_local_iters: f64,
    pub chip_coeff: f64,
    pub bandwidth_total: f64,
    pub noise_psd: f64,
    pub payload_bits: f64,
    pub leaf_energy_budget: f64,
    pub relay_self_energy: f64,
    pub beta_range: (f64, f64),
    pub rho_range: (f64, f64),
    pub source_energy: f64,
    pub move_prob: f64,
    pub outage_prob: f64,
    pub eh_enabled: bool,
}

pub const DBM_25: f64 = 0.31622776601683794; // 25 dBm in W
pub const NOISE_PSD_174_DBM_HZ: f64 = 3.9810717055349695e-21; // -174 dBm/Hz in W/Hz

impl Default for GenParams {
    fn default() -> Self {
        GenParams {
            cycles_range: (1.0e4, 3.0e4),
            samples_range: (50.0, 200.0),
            distance_range: (20.0, 80.0),
            ref_attenuation: 1.0e-3,
            ref_distance: 1.0,
            path_loss_exp: 3.0,
            rayleigh_scale: 1.0,
            leaf_max_power: DBM_25,
            relay_max_power: DBM_25,
            leaf_max_freq: 2.0e9,
            relay_max_freq: 2.0e9,
            leaf_local_iters: 5.0,
            relay_local_iters: 15.0,
            chip_coeff: 1.0e-28,
            bandwidth_total: 2.0e7,
            noise_psd: NOISE_PSD_174_DBM_HZ,
            payload_bits: 5.0e5,
            leaf_energy_budget: 0.05,
            relay_self_energy: 0.02,
            beta_range: (0.6, 0.9),
            rho_range: (0.4, 0.6),
            source_energy: 10.0,
            move_prob: 0.2,
            outage_prob: 0.05,
            eh_enabled: true,
        }
    }
}

impl GenParams {
    fn validate(&self, shape: &InstanceShape) -> Result<(), NetError> {
        let err = |name: &str, detail: &str| NetError::InvalidRange {
            name: name.to_string(),
            detail: detail.to_string(),
        };
        if shape.routes < 1 {
            return Err(err("routes", "must be >= 1"));
        }
        if shape.rounds < 1 {
            return Err(err("rounds", "must be >= 1"));
        }
        let ranges = [
            ("cycles_range", self.cycles_range),
            ("samples_range", self.samples_range),
            ("distance_range", self.distance_range),
            ("beta_range", self.beta_range),
            ("rho_range", self.rho_range),
        ];
        for (name, (lo, hi)) in ranges {
            if lo <= 0.0 || hi < lo {
                return Err(err(name, "bounds must be positive and ordered"));
            }
        }
        if self.beta_range.1 > 1.0 {
            return Err(err("beta_range", "conversion efficiency must be <= 1"));
        }
        if self.rho_range.1 > 1.0 {
            return Err(err("rho_range", "power-splitting ratio must be <= 1"));
        }
        let scalars = [
            ("ref_attenuation", self.ref_attenuation),
            ("ref_distance", self.ref_distance),
            ("path_loss_exp", self.path_loss_exp),
            ("rayleigh_scale", self.rayleigh_scale),
            ("leaf_max_power", self.leaf_max_power),
            ("relay_max_power", self.relay_max_power),
            ("leaf_max_freq", self.leaf_max_freq),
            ("relay_max_freq", self.relay_max_freq),
            ("leaf_local_iters", self.leaf_local_iters),
            ("relay_local_iters", self.relay_local_iters),
            ("chip_coeff", self.chip_coeff),
            ("bandwidth_total", self.bandwidth_total),
            ("noise_psd", self.noise_psd),
            ("payload_bits", self.payload_bits),
            ("leaf_energy_budget", self.leaf_energy_budget),
            ("relay_self_energy", self.relay_self_energy),
            ("source_energy", self.source_energy),
        ];
        for (name, v) in scalars {
            if v <= 0.0 {
                return Err(err(name, "must be positive"));
            }
        }
        for (name, v) in [("move_prob", self.move_prob), ("outage_prob", self.outage_prob)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(err(name, "must lie in [0, 1]"));
            }
        }
        Ok(())
    }
}

/// An immutable realized network: safe to share across concurrent solver runs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetworkInstance {
    pub seed: u64,
    pub rounds: usize,
    pub routes: Vec<RouteTopology>,
    pub leaves: Vec<NodeParams>,
    pub relays: Vec<NodeParams>,
    /// n' per relay: relays strictly farther from the server on its chain.
    pub successor_relays: Vec<usize>,
    pub home_route: Vec<usize>,
    /// 1-based hop index of each relay on its home EH chain.
    pub chain_pos: Vec<usize>,
    /// Per-round per-leaf channel realizations.
    pub leaf_channel: Vec<Vec<ChannelRealization>>,
    /// Per-round per-relay channel realizations.
    pub relay_channel: Vec<Vec<ChannelRealization>>,
    /// A(n, k): available route ids per relay per round (empty = outage).
    pub availability: Vec<Vec<Vec<usize>>>,
    /// Per-round per-route EH chains.
    pub eh_chains: Vec<Vec<EhParams>>,
    /// Precomputed harvested energy per round per relay (0 when EH off).
    pub harvested: Vec<Vec<f64>>,
    pub noise_psd: f64,
    pub payload_bits: f64,
}

impl NetworkInstance {
    pub fn num_leaves(&self) -> usize {
        self.leaves.len()
    }
    pub fn num_relays(&self) -> usize {
        self.relays.len()
    }
    /// Usable relay energy budget in round k: E_n^self + E_n^EH.
    pub fn relay_energy_budget(&self, k: usize, n: usize) -> f64 {
        self.relays[n].self_energy + self.harvested[k][n]
    }
    pub fn leaf_gain(&self, k: usize, m: usize) -> f64 {
        self.leaf_channel[k][m].power_gain()
    }
    pub fn relay_gain(&self, k: usize, n: usize) -> f64 {
        self.relay_channel[k][n].power_gain()
    }
}

/// Deterministic per-cell seed derivation (splitmix64 over base and index).
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base
        .wrapping_mul(0x9e3779b97f4a7c15)
        .wrapping_add(index.wrapping_mul(0xbf58476d1ce4e5b9))
        .wrapping_add(0x94d049bb133111eb);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Rayleigh(sigma) draw by inverse CDF: sigma * sqrt(-2 ln(1 - U)).
fn rayleigh(rng: &mut ChaCha8Rng, sigma: f64) -> f64 {
    let u: f64 = rng.gen_range(0.0..1.0);
    sigma * (-2.0 * (1.0 - u).ln()).sqrt()
}

fn draw_channel(rng: &mut ChaCha8Rng, gen: &GenParams, distance: f64) -> ChannelRealization {
    let xi = gen.ref_attenuation * (distance / gen.ref_distance).powf(-gen.path_loss_exp);
    let mag = rayleigh(rng, gen.rayleigh_scale);
    ChannelRealization {
        large_scale: xi,
        small_scale_mag: mag,
        ref_attenuation: gen.ref_attenuation,
        distance,
        ref_distance: gen.ref_distance,
        exponent: gen.path_loss_exp,
    }
}

/// Generates a deterministic instance for the given seed. Relays are split
/// as evenly as possible across the routes; channels are block-fading,
/// redrawn each global round.
pub fn generate_instance(
    seed: u64,
    shape: InstanceShape,
    gen: &GenParams,
) -> Result<NetworkInstance, NetError> {
    gen.validate(&shape)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let routes_n = shape.routes;
    let relays_n = shape.relays;
    let rounds = shape.rounds;
    let per_node_bw = gen.bandwidth_total / (routes_n + relays_n) as f64;

    let draw_node = |id: usize, kind: NodeKind, rng: &mut ChaCha8Rng| {
        let cycles = rng.gen_range(gen.cycles_range.0..=gen.cycles_range.1).round();
        let samples = rng.gen_range(gen.samples_range.0..=gen.samples_range.1).round();
        let relay = kind == NodeKind::Relay;
        NodeParams {
            id,
            kind,
            cycles_per_sample: cycles,
            data_samples: samples,
            local_iters: if relay { gen.relay_local_iters } else { gen.leaf_local_iters },
            chip_coeff: gen.chip_coeff,
            max_power: if relay { gen.relay_max_power } else { gen.leaf_max_power },
            max_freq: if relay { gen.relay_max_freq } else { gen.leaf_max_freq },
            bandwidth: per_node_bw,
            self_energy: if relay { gen.relay_self_energy } else { gen.leaf_energy_budget },
            ps_ratio: if relay { rng.gen_range(gen.rho_range.0..=gen.rho_range.1) } else { 1.0 },
            conv_eff: if relay { rng.gen_range(gen.beta_range.0..=gen.beta_range.1) } else { 1.0 },
        }
    };

    let leaves: Vec<NodeParams> =
        (0..routes_n).map(|m| draw_node(m, NodeKind::Leaf, &mut rng)).collect();
    let relays: Vec<NodeParams> =
        (0..relays_n).map(|n| draw_node(n, NodeKind::Relay, &mut rng)).collect();

    // Round-robin chain assignment: relay n goes to route n % R.
    let mut chains: Vec<Vec<usize>> = vec![Vec::new(); routes_n];
    for n in 0..relays_n {
        chains[n % routes_n].push(n);
    }
    let routes: Vec<RouteTopology> = (0..routes_n)
        .map(|r| RouteTopology { id: r, relay_chain: chains[r].clone(), leaf: r })
        .collect();
    let mut successor_relays = vec![0usize; relays_n];
    let mut home_route = vec![0usize; relays_n];
    let mut chain_pos = vec![0usize; relays_n];
    for route in &routes {
        let len = route.relay_chain.len();
        for (j, &n) in route.relay_chain.iter().enumerate() {
            successor_relays[n] = len - 1 - j;
            home_route[n] = route.id;
            chain_pos[n] = j + 1;
        }
    }

    // Inter-node distances, fixed per node for the whole run.
    let leaf_dist: Vec<f64> = (0..routes_n)
        .map(|_| rng.gen_range(gen.distance_range.0..=gen.distance_range.1))
        .collect();
    let relay_dist: Vec<f64> = (0..relays_n)
        .map(|_| rng.gen_range(gen.distance_range.0..=gen.distance_range.1))
        .collect();

    let mut leaf_channel = Vec::with_capacity(rounds);
    let mut relay_channel = Vec::with_capacity(rounds);
    let mut availability = Vec::with_capacity(rounds);
    let mut eh_chains = Vec::with_capacity(rounds);
    let mut harvested = Vec::with_capacity(rounds);
    for _ in 0..rounds {
        let lc: Vec<ChannelRealization> =
            (0..routes_n).map(|m| draw_channel(&mut rng, gen, leaf_dist[m])).collect();
        let rc: Vec<ChannelRealization> =
            (0..relays_n).map(|n| draw_channel(&mut rng, gen, relay_dist[n])).collect();

        let avail: Vec<Vec<usize>> = (0..relays_n)
            .map(|n| {
                if rng.gen_bool(gen.outage_prob) {
                    Vec::new()
                } else {
                    let mut a = vec![home_route[n]];
                    if routes_n > 1 && rng.gen_bool(gen.move_prob) {
                        let adj = if rng.gen_bool(0.5) {
                            (home_route[n] + 1) % routes_n
                        } else {
                            (home_route[n] + routes_n - 1) % routes_n
                        };
                        if adj != home_route[n] {
                            a.push(adj);
                        }
                    }
                    a.sort_unstable();
                    a
                }
            })
            .collect();

        // EH chains use the small-scale fading of each relay's round draw;
        // hop order follows the home-route chain from the source outward.
        let chains_k: Vec<EhParams> = routes
            .iter()
            .map(|route| EhParams {
                source_energy: gen.source_energy,
                hops: route
                    .relay_chain
                    .iter()
                    .map(|&n| {
                        let g2 = rc[n].small_scale_mag * rc[n].small_scale_mag;
                        (relays[n].conv_eff, relays[n].ps_ratio, g2)
                    })
                    .collect(),
            })
            .collect();
        let harv_k: Vec<f64> = (0..relays_n)
            .map(|n| {
                if gen.eh_enabled {
                    harvested_energy(&chains_k[home_route[n]], chain_pos[n]).unwrap_or(0.0)
                } else {
                    0.0
                }
            })
            .collect();

        leaf_channel.push(lc);
        relay_channel.push(rc);
        availability.push(avail);
        eh_chains.push(chains_k);
        harvested.push(harv_k);
    }

    Ok(NetworkInstance {
        seed,
        rounds,
        routes,
        leaves,
        relays,
        successor_relays,
        home_route,
        chain_pos,
        leaf_channel,
        relay_channel,
        availability,
        eh_chains,
        harvested,
        noise_psd: gen.noise_psd,
        payload_bits: gen.payload_bits,
    })
}

/// Serializes an instance to a self-describing structured text form.
pub fn export_instance(instance: &NetworkInstance) -> String {
    toml::to_string(instance).expect("instance serialization cannot fail")
}

pub fn import_instance(text: &str) -> Result<NetworkInstance, toml::de::Error> {
    toml::from_str(text)
}
