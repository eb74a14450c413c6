//! The simulated edge environment: heterogeneous client speeds, crash
//! sampling, and the wall-clock model that turns protocol events into round
//! lengths.

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::protocol::Protocol;
use crate::rng::{stream_rng, Stream};

/// One simulated device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientProfile {
    pub id: usize,
    /// Batches processed per second.
    pub perf: f64,
    pub crash_prob: f64,
    /// Bits per second.
    pub bandwidth: f64,
    pub partition_size: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PopulationConfig {
    /// Rate of the exponential performance distribution.
    pub perf_lambda: f64,
    /// Multiplier applied to every exponential draw.
    pub perf_base_rate: f64,
    /// Draws below `perf_floor * perf_base_rate` are re-drawn.
    pub perf_floor: f64,
    pub crash_prob: f64,
}

impl Default for PopulationConfig {
    fn default() -> Self {
        Self {
            perf_lambda: 1.0,
            perf_base_rate: 1.0,
            perf_floor: 0.05,
            crash_prob: 0.3,
        }
    }
}

impl PopulationConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.perf_lambda > 0.0
            && self.perf_base_rate > 0.0
            && (0.0..1.0).contains(&self.perf_floor)
            && (0.0..=1.0).contains(&self.crash_prob);
        if ok {
            Ok(())
        } else {
            Err(SimError::InvalidArgument(format!(
                "invalid population config {self:?}"
            )))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimingConfig {
    /// Model size in bits (10 MB = 8e7 bits).
    pub model_size: f64,
    /// Client bandwidth in bits per second.
    pub client_bw: f64,
    /// Server bandwidth in bits per second.
    pub server_bw: f64,
    /// Round time limit in seconds.
    pub t_lim: f64,
    /// Seconds to send one model copy; overrides `model_size / server_bw`.
    pub per_model_dist_time: Option<f64>,
    /// When set, the limit caps `T_dist + wait` instead of the wait alone.
    pub cap_includes_dist: bool,
}

impl Default for TimingConfig {
    fn default() -> Self {
        Self {
            model_size: 8e7,
            client_bw: 1.4e6,
            server_bw: 1e10,
            t_lim: 1620.0,
            per_model_dist_time: Some(0.404),
            cap_includes_dist: false,
        }
    }
}

impl TimingConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v > 0.0 && !v.is_nan();
        let ok = positive(self.model_size)
            && positive(self.client_bw)
            && positive(self.server_bw)
            && positive(self.t_lim)
            && self
                .per_model_dist_time
                .is_none_or(|t| t >= 0.0 && t.is_finite());
        if ok {
            Ok(())
        } else {
            Err(SimError::InvalidArgument(format!(
                "invalid timing config {self:?}"
            )))
        }
    }

    pub fn per_model_time(&self) -> f64 {
        self.per_model_dist_time
            .unwrap_or(self.model_size / self.server_bw)
    }
}

/// Draws one profile per client: exponential performance (re-drawn below the
/// floor), a shared crash probability and the configured bandwidth.
pub fn sample_population(
    partition_sizes: &[usize],
    population: &PopulationConfig,
    client_bw: f64,
    seed: u64,
) -> Result<Vec<ClientProfile>> {
    population.validate()?;
    if partition_sizes.is_empty() {
        return Err(SimError::InvalidArgument(
            "population needs at least one client".into(),
        ));
    }
    let mut rng = stream_rng(seed, Stream::Population, &[]);
    let exp = Exp::new(population.perf_lambda).expect("validated rate");
    Ok(partition_sizes
        .iter()
        .enumerate()
        .map(|(id, &partition_size)| {
            let raw = loop {
                let v: f64 = exp.sample(&mut rng);
                if v >= population.perf_floor {
                    break v;
                }
            };
            ClientProfile {
                id,
                perf: raw * population.perf_base_rate,
                crash_prob: population.crash_prob,
                bandwidth: client_bw,
                partition_size,
            }
        })
        .collect())
}

/// Crash outcome for every client in round `round`: `Some(fraction)` when the
/// client crashes, where `fraction` in [0, 1) is how far through its local
/// training it got. Deterministic per `(seed, round, client)`.
pub fn sample_crashes(profiles: &[ClientProfile], round: usize, seed: u64) -> Vec<Option<f64>> {
    profiles
        .iter()
        .map(|p| {
            let mut rng = stream_rng(seed, Stream::Crash, &[round as u64, p.id as u64]);
            let crashed = rng.random::<f64>() < p.crash_prob;
            let fraction: f64 = rng.random();
            crashed.then_some(fraction)
        })
        .collect()
}

/// Local training time `ceil(n_k / B) * E / s_k`.
pub fn t_train(profile: &ClientProfile, epochs: usize, batch_size: usize) -> f64 {
    let batches = profile.partition_size.div_ceil(batch_size.max(1));
    (batches * epochs) as f64 / profile.perf
}

/// `(T_down, T_up)`, both `model_size / bandwidth`.
pub fn t_updown(profile: &ClientProfile, timing: &TimingConfig) -> (f64, f64) {
    let t = timing.model_size / profile.bandwidth;
    (t, t)
}

/// Server-side distribution overhead for `m_sync` model copies.
pub fn t_dist(m_sync: usize, timing: &TimingConfig) -> f64 {
    m_sync as f64 * timing.per_model_time()
}

/// Round length from the completion times of the clients the server waits
/// on (`f64::INFINITY` for a client that never reports).
///
/// `T_dist + min(T_lim, max wait)` by default, or
/// `min(T_lim, T_dist + max wait)` with `cap_includes_dist`.
pub fn round_length(waited_on: &[f64], t_dist: f64, timing: &TimingConfig) -> f64 {
    let wait = waited_on.iter().cloned().fold(0.0, f64::max);
    if timing.cap_includes_dist {
        timing.t_lim.min(t_dist + wait)
    } else {
        t_dist + timing.t_lim.min(wait)
    }
}

/// Everything recorded about one simulated round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: usize,
    pub protocol: Protocol,
    pub round_length: f64,
    pub t_dist: f64,
    pub loss: f64,
    pub accuracy: f64,
    pub eur: f64,
    pub m_sync: usize,
    pub picked: usize,
    pub undrafted: usize,
    pub crashed: usize,
    pub deprecated: usize,
    pub version_variance: f64,
    pub futility: f64,
    pub wasted_epochs: f64,
    pub attempted_epochs: f64,
}

impl RoundReport {
    /// CSV header, in field order.
    pub const CSV_COLUMNS: [&'static str; 16] = [
        "round",
        "protocol",
        "round_length",
        "t_dist",
        "loss",
        "accuracy",
        "eur",
        "m_sync",
        "picked",
        "undrafted",
        "crashed",
        "deprecated",
        "version_variance",
        "futility",
        "wasted_epochs",
        "attempted_epochs",
    ];
}
