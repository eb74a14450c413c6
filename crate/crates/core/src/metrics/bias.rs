//! Contribution bias between the fastest client A and the slowest client B
//! under CFCFM selection.
//!
//! `P_D` is the probability that a client is picked in round `r`; `P_S` that
//! its update was undrafted in `r - 1` and it is not picked in `r`, so the
//! bypassed update is the one that counts. The recurrences start from a round
//! in which every client is prioritised.

use std::collections::BTreeSet;

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::protocol::{cfcfm_select, Arrival};
use crate::rng::{stream_rng, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BiasCase {
    /// `C >= 1 - R`: every committed update is picked.
    Case1,
    /// `(1 - C)(1 - R) <= C < 1 - R`.
    Case2,
    /// `C < (1 - C)(1 - R)`: prioritised clients alone fill the quota.
    Case3,
}

pub fn classify_bias_case(c: f64, r: f64) -> BiasCase {
    if c >= 1.0 - r {
        BiasCase::Case1
    } else if c >= (1.0 - c) * (1.0 - r) {
        BiasCase::Case2
    } else {
        BiasCase::Case3
    }
}

fn default_background() -> usize {
    100
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BiasParams {
    /// Selection fraction.
    pub c: f64,
    /// Crash ratio of the whole population.
    pub r: f64,
    pub cr_a: f64,
    pub cr_b: f64,
    pub rounds: usize,
    /// Background clients in the Monte-Carlo game.
    #[serde(default = "default_background")]
    pub background: usize,
}

impl BiasParams {
    pub fn validate(&self) -> Result<()> {
        let unit = |x: f64| (0.0..1.0).contains(&x);
        if !(self.c > 0.0 && self.c <= 1.0) {
            return Err(SimError::InvalidArgument(format!(
                "C must be in (0, 1], got {}",
                self.c
            )));
        }
        for (name, v) in [("R", self.r), ("cr_A", self.cr_a), ("cr_B", self.cr_b)] {
            if !unit(v) {
                return Err(SimError::InvalidArgument(format!(
                    "{name} must be in [0, 1), got {v}"
                )));
            }
        }
        if self.rounds == 0 {
            return Err(SimError::InvalidArgument(
                "rounds must be at least 1".into(),
            ));
        }
        Ok(())
    }

    pub fn case(&self) -> BiasCase {
        classify_bias_case(self.c, self.r)
    }
}

/// Per-round probabilities, index 0 is round 1.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct BiasTrace {
    pub pd_a: Vec<f64>,
    pub ps_a: Vec<f64>,
    pub pd_b: Vec<f64>,
    pub ps_b: Vec<f64>,
    pub p_a: Vec<f64>,
    pub p_b: Vec<f64>,
    pub bias: Vec<f64>,
}

impl BiasTrace {
    fn push(&mut self, pd_a: f64, ps_a: f64, pd_b: f64, ps_b: f64) {
        let (p_a, p_b) = (pd_a + ps_a, pd_b + ps_b);
        self.pd_a.push(pd_a);
        self.ps_a.push(ps_a);
        self.pd_b.push(pd_b);
        self.ps_b.push(ps_b);
        self.p_a.push(p_a);
        self.p_b.push(p_b);
        self.bias.push(p_a / p_b);
    }

    pub fn len(&self) -> usize {
        self.bias.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bias.is_empty()
    }
}

/// FedAvg bias `(1 - cr_A) / (1 - cr_B)`, independent of the round.
pub fn bias_fedavg(cr_a: f64, cr_b: f64) -> Result<f64> {
    if cr_b >= 1.0 {
        return Err(SimError::InvalidArgument(
            "cr_B = 1 makes the FedAvg bias undefined".into(),
        ));
    }
    Ok((1.0 - cr_a) / (1.0 - cr_b))
}

/// Probabilities of a client that is picked whenever it arrives.
fn always_picked(cr: f64) -> (f64, f64) {
    (1.0 - cr, 0.0)
}

/// One step of the alternating recurrence: picked iff it arrives and was not
/// picked last round; bypass counts if it crashes after an undrafted round.
fn alternating(cr: f64, pd_prev: f64) -> (f64, f64) {
    let sigma = 1.0 - pd_prev;
    ((1.0 - cr) * sigma, cr * (sigma - cr))
}

const ROUNDING: f64 = 1e-12;

/// Accepts `value` in [0, 1], absorbing float rounding at the edges; anything
/// further out is an error.
fn check(round: usize, quantity: &'static str, value: f64) -> Result<f64> {
    if (-ROUNDING..=1.0 + ROUNDING).contains(&value) {
        Ok(value.clamp(0.0, 1.0))
    } else {
        Err(SimError::AnalyticInconsistency {
            round,
            quantity,
            value,
        })
    }
}

/// Iterates the case-dependent recurrences up to `params.rounds`.
///
/// Round 1: A is picked whenever it arrives. B is picked in round 1 only in
/// Case 1, since in the other cases faster prioritised clients fill the quota.
/// Nothing is in the bypass yet.
pub fn bias_safa_recurrence(params: &BiasParams) -> Result<BiasTrace> {
    params.validate()?;
    let case = params.case();
    let (cr_a, cr_b) = (params.cr_a, params.cr_b);
    let mut trace = BiasTrace::default();
    for round in 1..=params.rounds {
        let (pd_a, ps_a, pd_b, ps_b) = if round == 1 {
            let pd_b = if case == BiasCase::Case1 {
                1.0 - cr_b
            } else {
                0.0
            };
            (1.0 - cr_a, 0.0, pd_b, 0.0)
        } else {
            let prev_a = trace.pd_a[round - 2];
            let prev_b = trace.pd_b[round - 2];
            let (pd_a, ps_a) = match case {
                BiasCase::Case1 | BiasCase::Case2 => always_picked(cr_a),
                BiasCase::Case3 => alternating(cr_a, prev_a),
            };
            let (pd_b, ps_b) = match case {
                BiasCase::Case1 => always_picked(cr_b),
                BiasCase::Case2 => alternating(cr_b, prev_b),
                BiasCase::Case3 => (0.0, 1.0 - cr_b),
            };
            (pd_a, ps_a, pd_b, ps_b)
        };
        let pd_a = check(round, "P_D(A)", pd_a)?;
        let ps_a = check(round, "P_S(A)", ps_a)?;
        let pd_b = check(round, "P_D(B)", pd_b)?;
        let ps_b = check(round, "P_S(B)", ps_b)?;
        check(round, "P(A)", pd_a + ps_a)?;
        check(round, "P(B)", pd_b + ps_b)?;
        trace.push(pd_a, ps_a, pd_b, ps_b);
    }
    Ok(trace)
}

/// The closed form for `sigma^(k)` exactly as it is usually quoted,
/// `(2 cr - (cr - 1)^(k+1) - 3) / (cr - 2)`.
///
/// It does not solve the alternating recurrence: its limit is
/// `1 + 1/(2 - cr)`, above 1. [`pd_closed_form`] is the actual solution.
pub fn bias_sigma_closed_form(cr: f64, k: u32) -> f64 {
    (2.0 * cr - (cr - 1.0).powi(k as i32 + 1) - 3.0) / (cr - 2.0)
}

/// Solution of `p_k = (1 - cr)(1 - p_{k-1})` with `p_1 = first`:
/// `p* + (first - p*)(cr - 1)^(k-1)` where `p* = (1 - cr)/(2 - cr)`.
pub fn pd_closed_form(cr: f64, first: f64, k: u32) -> f64 {
    let fixed = (1.0 - cr) / (2.0 - cr);
    fixed + (first - fixed) * (cr - 1.0).powi(k as i32 - 1)
}

/// Monte-Carlo estimate with standard errors.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MonteCarloTrace {
    pub trace: BiasTrace,
    pub trials: usize,
    pub p_a_se: Vec<f64>,
    pub p_b_se: Vec<f64>,
    pub bias_se: Vec<f64>,
}

const CHUNK: usize = 1000;

#[derive(Clone, Default)]
struct Counts {
    pd_a: Vec<u64>,
    ps_a: Vec<u64>,
    pd_b: Vec<u64>,
    ps_b: Vec<u64>,
}

impl Counts {
    fn new(rounds: usize) -> Self {
        Self {
            pd_a: vec![0; rounds],
            ps_a: vec![0; rounds],
            pd_b: vec![0; rounds],
            ps_b: vec![0; rounds],
        }
    }

    fn merge(mut self, other: Counts) -> Counts {
        for (a, b) in [
            (&mut self.pd_a, &other.pd_a),
            (&mut self.ps_a, &other.ps_a),
            (&mut self.pd_b, &other.pd_b),
            (&mut self.ps_b, &other.ps_b),
        ] {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        self
    }
}

/// One trial of the selection game. Client 0 is A (always first), client 1
/// is B (always last), the rest are background clients with exponential
/// completion times fixed for the trial.
fn play<R: Rng>(params: &BiasParams, rng: &mut R, counts: &mut Counts) {
    let m = params.background + 2;
    let mut times = vec![0.0; m];
    times[1] = f64::MAX;
    for t in times.iter_mut().skip(2) {
        let e: f64 = Exp1.sample(rng);
        *t = 1.0 + e;
    }
    let crash_prob = |k: usize| match k {
        0 => params.cr_a,
        1 => params.cr_b,
        _ => params.r,
    };
    let mut picked_last = BTreeSet::new();
    let mut undrafted_last = [false; 2];
    for round in 0..params.rounds {
        let arrivals: Vec<Arrival> = (0..m)
            .filter(|&k| rng.random::<f64>() >= crash_prob(k))
            .map(|client| Arrival {
                client,
                time: times[client],
            })
            .collect();
        let sel = cfcfm_select(&arrivals, &picked_last, params.c, m);
        picked_last = sel.picked.iter().copied().collect();
        for (k, (pd, ps)) in [
            (&mut counts.pd_a, &mut counts.ps_a),
            (&mut counts.pd_b, &mut counts.ps_b),
        ]
        .into_iter()
        .enumerate()
        {
            let picked = picked_last.contains(&k);
            if picked {
                pd[round] += 1;
            } else if undrafted_last[k] {
                ps[round] += 1;
            }
            undrafted_last[k] = sel.undrafted.contains(&k);
        }
    }
}

/// Estimates the trace by playing `trials` independent games. Trials are
/// split into fixed chunks with derived seeds, so the result does not depend
/// on the thread count.
pub fn bias_monte_carlo(params: &BiasParams, trials: usize, seed: u64) -> Result<MonteCarloTrace> {
    params.validate()?;
    if trials == 0 {
        return Err(SimError::InvalidArgument(
            "trials must be at least 1".into(),
        ));
    }
    let chunks = trials.div_ceil(CHUNK);
    let counts = (0..chunks)
        .into_par_iter()
        .map(|chunk| {
            let mut rng = stream_rng(seed, Stream::MonteCarlo, &[chunk as u64]);
            let mut counts = Counts::new(params.rounds);
            let n = CHUNK.min(trials - chunk * CHUNK);
            for _ in 0..n {
                play(params, &mut rng, &mut counts);
            }
            counts
        })
        .reduce(|| Counts::new(params.rounds), Counts::merge);

    let n = trials as f64;
    let mut out = MonteCarloTrace {
        trials,
        ..Default::default()
    };
    let se = |p: f64| (p * (1.0 - p) / n).sqrt();
    for r in 0..params.rounds {
        let f = |c: &[u64]| c[r] as f64 / n;
        out.trace.push(
            f(&counts.pd_a),
            f(&counts.ps_a),
            f(&counts.pd_b),
            f(&counts.ps_b),
        );
        let (pa, pb) = (out.trace.p_a[r], out.trace.p_b[r]);
        let (sa, sb) = (se(pa), se(pb));
        out.p_a_se.push(sa);
        out.p_b_se.push(sb);
        out.bias_se.push(if pb > 0.0 {
            ((sa / pb).powi(2) + (pa * sb / (pb * pb)).powi(2)).sqrt()
        } else {
            f64::INFINITY
        });
    }
    Ok(out)
}
