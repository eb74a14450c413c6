use std::collections::BTreeSet;

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution as _, StandardNormal};
use rayon::prelude::*;

use super::{
    aggregate, cfcfm_select, classify_clients, distribute, quota, weighted_average, Arrival,
    ClientTag, Protocol, RoundOutcome, ServerState, SyncClass,
};
use crate::env::{
    round_length, sample_crashes, t_dist, t_train, t_updown, ClientProfile, RoundReport,
    TimingConfig,
};
use crate::error::{Result, SimError};
use crate::learners::{
    client_update_seeded, evaluate, Dataset, Evaluation, LearnerSpec, ModelParams, Partition,
};
use crate::metrics::{eur_empirical, population_variance};
use crate::rng::{stream_rng, Stream};

#[derive(Debug, Clone)]
pub struct ClientState {
    pub profile: ClientProfile,
    pub partition: Partition,
    pub model: ModelParams,
    /// Local epochs of the latest interrupted run not yet committed.
    pub in_flight_epochs: f64,
    pub tag: ClientTag,
}

/// Data and fixed settings shared by every round of a run.
#[derive(Debug, Clone)]
pub struct RoundEnv {
    pub train: Dataset,
    pub test: Dataset,
    pub spec: LearnerSpec,
    pub timing: TimingConfig,
    pub seed: u64,
    /// Log-normal sigma of the FedCS completion-time estimator; 0 is exact.
    pub fedcs_noise: f64,
}

/// How a client's local run ends this round.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Fate {
    /// Update reaches the server this many seconds into the training phase.
    Arrives(f64),
    /// Crashed, or exceeded the round limit, after this fraction of training.
    Interrupted(f64),
}

fn fate(
    profile: &ClientProfile,
    synced: bool,
    crash: Option<f64>,
    env: &RoundEnv,
    limit: f64,
) -> Fate {
    if let Some(f) = crash {
        return Fate::Interrupted(f);
    }
    let (down, up) = t_updown(profile, &env.timing);
    let down = if synced { down } else { 0.0 };
    let train = t_train(profile, env.spec.epochs, env.spec.batch_size);
    let total = down + train + up;
    if total <= limit {
        Fate::Arrives(total)
    } else {
        Fate::Interrupted(((limit - down) / train).clamp(0.0, 1.0))
    }
}

fn batch_budget(client: &ClientState, spec: &LearnerSpec, fraction: f64) -> usize {
    let total = spec.epochs * spec.batches_per_epoch(client.partition.len());
    (fraction * total as f64).floor() as usize
}

/// Trains each `(client, budget)` job from the client's current local model.
fn train_jobs(
    clients: &[ClientState],
    jobs: &[(usize, Option<usize>)],
    env: &RoundEnv,
    t: usize,
) -> Result<Vec<ModelParams>> {
    jobs.par_iter()
        .map(|&(k, budget)| {
            let c = &clients[k];
            let mut model = c.model.clone();
            client_update_seeded(
                k,
                t,
                &mut model,
                &env.train,
                &c.partition,
                &env.spec,
                env.seed,
                budget,
            )?;
            Ok(model)
        })
        .collect()
}

fn sizes(clients: &[ClientState]) -> Vec<usize> {
    clients.iter().map(|c| c.partition.len()).collect()
}

fn profiles(clients: &[ClientState]) -> Vec<ClientProfile> {
    clients.iter().map(|c| c.profile.clone()).collect()
}

#[derive(Default)]
struct Tally {
    round_length: f64,
    t_dist: f64,
    m_sync: usize,
    eur: f64,
    base_versions: Vec<f64>,
    deprecated: usize,
    wasted: f64,
    attempted: f64,
}

fn report(
    protocol: Protocol,
    t: usize,
    tally: Tally,
    eval: Evaluation,
    clients: &[ClientState],
) -> RoundReport {
    let count = |o: RoundOutcome| clients.iter().filter(|c| c.tag.round_outcome == o).count();
    RoundReport {
        round: t,
        protocol,
        round_length: tally.round_length,
        t_dist: tally.t_dist,
        loss: eval.loss,
        accuracy: eval.accuracy,
        eur: tally.eur,
        m_sync: tally.m_sync,
        picked: count(RoundOutcome::Picked),
        undrafted: count(RoundOutcome::Undrafted),
        crashed: count(RoundOutcome::Crashed),
        deprecated: tally.deprecated,
        version_variance: population_variance(&tally.base_versions),
        futility: if tally.attempted > 0.0 {
            tally.wasted / tally.attempted
        } else {
            0.0
        },
        wasted_epochs: tally.wasted,
        attempted_epochs: tally.attempted,
    }
}

/// One SAFA round `t >= 1`.
pub fn run_round_safa(
    server: &mut ServerState,
    clients: &mut [ClientState],
    env: &RoundEnv,
    t: usize,
) -> Result<RoundReport> {
    let m = clients.len();
    let epochs = env.spec.epochs as f64;
    let versions: Vec<u64> = clients.iter().map(|c| c.model.version).collect();
    let classes = classify_clients(&versions, t as u64, server.lag_tolerance)?;
    let prev_global = server.global.clone();
    let dist = distribute(&prev_global, clients, &classes);
    let mut tally = Tally {
        t_dist: t_dist(dist.m_sync, &env.timing),
        m_sync: dist.m_sync,
        deprecated: classes
            .iter()
            .filter(|c| **c == SyncClass::Deprecated)
            .count(),
        wasted: dist.discarded_epochs,
        attempted: epochs * m as f64,
        ..Tally::default()
    };
    let base_versions: Vec<u64> = clients.iter().map(|c| c.model.version).collect();

    let crashes = sample_crashes(&profiles(clients), t, env.seed);
    let fates: Vec<Fate> = clients
        .iter()
        .zip(&classes)
        .zip(&crashes)
        .map(|((c, class), crash)| {
            fate(
                &c.profile,
                *class != SyncClass::Tolerable,
                *crash,
                env,
                env.timing.t_lim,
            )
        })
        .collect();
    let jobs: Vec<(usize, Option<usize>)> = fates
        .iter()
        .enumerate()
        .map(|(k, f)| match *f {
            Fate::Arrives(_) => (k, None),
            Fate::Interrupted(frac) => (k, Some(batch_budget(&clients[k], &env.spec, frac))),
        })
        .collect();
    let trained = train_jobs(clients, &jobs, env, t)?;

    let arrivals: Vec<Arrival> = fates
        .iter()
        .enumerate()
        .filter_map(|(client, f)| match *f {
            Fate::Arrives(time) => Some(Arrival { client, time }),
            Fate::Interrupted(_) => None,
        })
        .collect();
    let crashed: Vec<usize> = (0..m)
        .filter(|&k| matches!(fates[k], Fate::Interrupted(_)))
        .collect();
    let selection = cfcfm_select(&arrivals, &server.picked_last, server.selection_fraction, m);

    let waited: Vec<f64> = match selection.closed_at {
        Some(time) => vec![time],
        None => {
            let mut w: Vec<f64> = arrivals.iter().map(|a| a.time).collect();
            // Clients over the limit keep the server waiting until it expires.
            let timed_out = crashes
                .iter()
                .zip(&fates)
                .any(|(c, f)| c.is_none() && matches!(f, Fate::Interrupted(_)));
            if timed_out {
                w.push(f64::INFINITY);
            }
            w
        }
    };
    tally.round_length = round_length(&waited, tally.t_dist, &env.timing);
    tally.eur = eur_empirical(&selection.picked, &crashed, m);

    for &k in &selection.undrafted {
        server.bypass.insert(k, trained[k].clone());
    }
    let picked_models: Vec<(usize, ModelParams)> = selection
        .picked
        .iter()
        .map(|&k| (k, trained[k].clone()))
        .collect();
    let picked_set: BTreeSet<usize> = selection.picked.iter().copied().collect();
    let deprecated: Vec<usize> = (0..m)
        .filter(|k| classes[*k] == SyncClass::Deprecated && !picked_set.contains(k))
        .collect();
    server.pre_aggregation_cache_update(&picked_models, &deprecated)?;
    server.global = aggregate(&server.cache, &sizes(clients), t as u64)?;
    server.post_aggregation_cache_update();

    for (k, (client, model)) in clients.iter_mut().zip(trained).enumerate() {
        client.tag.round_outcome = match fates[k] {
            Fate::Interrupted(frac) => {
                client.model.weights = model.weights;
                client.in_flight_epochs = frac * epochs;
                RoundOutcome::Crashed
            }
            Fate::Arrives(_) => {
                tally.base_versions.push(base_versions[k] as f64);
                client.model = ModelParams {
                    weights: model.weights,
                    version: t as u64,
                };
                client.in_flight_epochs = 0.0;
                if picked_set.contains(&k) {
                    RoundOutcome::Picked
                } else {
                    RoundOutcome::Undrafted
                }
            }
        };
    }
    server.picked_last = picked_set;

    let eval = evaluate(&server.global, &env.test, &env.spec)?;
    Ok(report(Protocol::Safa, t, tally, eval, clients))
}

/// Aggregates the committed clients in id order; keeps the old model when none commit.
fn aggregate_committed(
    server: &mut ServerState,
    clients: &[ClientState],
    committed: &[(usize, ModelParams)],
    t: usize,
) -> Result<()> {
    let weights = if committed.is_empty() {
        server.global.weights.clone()
    } else {
        weighted_average(
            committed
                .iter()
                .map(|(k, p)| (clients[*k].partition.len(), p.weights.as_slice())),
            t as u64,
        )?
    };
    server.global = ModelParams {
        weights,
        version: t as u64,
    };
    Ok(())
}

/// Runs the selected clients from `w(t-1)` against a per-client deadline and
/// aggregates whoever makes it.
fn synchronous_round(
    server: &mut ServerState,
    clients: &mut [ClientState],
    env: &RoundEnv,
    t: usize,
    selected: &[usize],
    deadline: f64,
) -> Result<(Tally, Vec<Fate>)> {
    let m = clients.len();
    let epochs = env.spec.epochs as f64;
    let prev_global = server.global.clone();
    for c in clients.iter_mut() {
        c.tag = ClientTag::default();
    }
    for &k in selected {
        clients[k].model.clone_from(&prev_global);
        clients[k].in_flight_epochs = 0.0;
    }
    let crashes = sample_crashes(&profiles(clients), t, env.seed);
    let fates: Vec<Fate> = selected
        .iter()
        .map(|&k| fate(&clients[k].profile, true, crashes[k], env, deadline))
        .collect();
    let committed_ids: Vec<usize> = selected
        .iter()
        .zip(&fates)
        .filter(|(_, f)| matches!(f, Fate::Arrives(_)))
        .map(|(k, _)| *k)
        .collect();
    let jobs: Vec<(usize, Option<usize>)> = committed_ids.iter().map(|&k| (k, None)).collect();
    let trained = train_jobs(clients, &jobs, env, t)?;
    let committed: Vec<(usize, ModelParams)> = committed_ids.iter().copied().zip(trained).collect();
    aggregate_committed(server, clients, &committed, t)?;

    let crashed: Vec<usize> = selected
        .iter()
        .zip(&fates)
        .filter(|(_, f)| matches!(f, Fate::Interrupted(_)))
        .map(|(k, _)| *k)
        .collect();
    let mut tally = Tally {
        t_dist: t_dist(selected.len(), &env.timing),
        m_sync: selected.len(),
        eur: eur_empirical(selected, &crashed, m),
        attempted: epochs * selected.len() as f64,
        ..Tally::default()
    };
    for (&k, f) in selected.iter().zip(&fates) {
        clients[k].tag.round_outcome = match *f {
            Fate::Arrives(_) => RoundOutcome::Picked,
            Fate::Interrupted(frac) => {
                tally.wasted += frac * epochs;
                RoundOutcome::Crashed
            }
        };
    }
    for (k, model) in committed {
        tally.base_versions.push(clients[k].model.version as f64);
        clients[k].model = ModelParams {
            weights: model.weights,
            version: t as u64,
        };
    }
    Ok((tally, fates))
}

/// One FedAvg round: a uniform random `ceil(C m)` clients, waiting on all of
/// them up to the round limit.
pub fn run_round_fedavg(
    server: &mut ServerState,
    clients: &mut [ClientState],
    env: &RoundEnv,
    t: usize,
) -> Result<RoundReport> {
    let m = clients.len();
    let q = quota(server.selection_fraction, m);
    let mut rng = stream_rng(env.seed, Stream::Selection, &[t as u64]);
    let mut selected = sample(&mut rng, m, q).into_vec();
    selected.sort_unstable();

    let (mut tally, fates) =
        synchronous_round(server, clients, env, t, &selected, env.timing.t_lim)?;
    // A crashed client never reports, so the server waits out the limit.
    let waited: Vec<f64> = fates
        .iter()
        .map(|f| match *f {
            Fate::Arrives(time) => time,
            Fate::Interrupted(_) => f64::INFINITY,
        })
        .collect();
    tally.round_length = round_length(&waited, tally.t_dist, &env.timing);
    let eval = evaluate(&server.global, &env.test, &env.spec)?;
    Ok(report(Protocol::Fedavg, t, tally, eval, clients))
}

/// One FedCS round: the `ceil(C m)` clients with the smallest estimated
/// completion time that fit the limit, with the deadline set to the slowest
/// estimate among them.
pub fn run_round_fedcs(
    server: &mut ServerState,
    clients: &mut [ClientState],
    env: &RoundEnv,
    t: usize,
) -> Result<RoundReport> {
    let m = clients.len();
    let q = quota(server.selection_fraction, m);
    let mut tie_rng = stream_rng(env.seed, Stream::Selection, &[t as u64]);
    let mut candidates: Vec<(f64, u64, usize)> = clients
        .iter()
        .enumerate()
        .map(|(k, c)| {
            let (down, up) = t_updown(&c.profile, &env.timing);
            let exact = down + t_train(&c.profile, env.spec.epochs, env.spec.batch_size) + up;
            let est = if env.fedcs_noise > 0.0 {
                let mut rng = stream_rng(env.seed, Stream::Estimator, &[t as u64, k as u64]);
                let z: f64 = StandardNormal.sample(&mut rng);
                exact * (env.fedcs_noise * z).exp()
            } else {
                exact
            };
            (est, tie_rng.random::<u64>(), k)
        })
        .filter(|(est, _, _)| *est <= env.timing.t_lim)
        .collect();
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    candidates.truncate(q);
    let deadline = candidates
        .iter()
        .map(|c| c.0)
        .fold(0.0, f64::max)
        .min(env.timing.t_lim);
    let mut selected: Vec<usize> = candidates.iter().map(|c| c.2).collect();
    selected.sort_unstable();

    let (mut tally, _) = synchronous_round(server, clients, env, t, &selected, deadline)?;
    let waited = if selected.is_empty() {
        vec![]
    } else {
        vec![deadline]
    };
    tally.round_length = round_length(&waited, tally.t_dist, &env.timing);
    let eval = evaluate(&server.global, &env.test, &env.spec)?;
    Ok(report(Protocol::Fedcs, t, tally, eval, clients))
}

/// One round of isolated local training. The reported global model is the
/// data-weighted average of all local models, computed without feeding back.
pub fn run_round_fully_local(
    server: &mut ServerState,
    clients: &mut [ClientState],
    env: &RoundEnv,
    t: usize,
) -> Result<RoundReport> {
    let m = clients.len();
    let epochs = env.spec.epochs as f64;
    let crashes = sample_crashes(&profiles(clients), t, env.seed);
    let limit = env.timing.t_lim;
    let fates: Vec<Fate> = clients
        .iter()
        .zip(&crashes)
        .map(|(c, crash)| {
            if let Some(f) = crash {
                return Fate::Interrupted(*f);
            }
            let train = t_train(&c.profile, env.spec.epochs, env.spec.batch_size);
            if train <= limit {
                Fate::Arrives(train)
            } else {
                Fate::Interrupted((limit / train).clamp(0.0, 1.0))
            }
        })
        .collect();
    let done: Vec<usize> = (0..m)
        .filter(|&k| matches!(fates[k], Fate::Arrives(_)))
        .collect();
    let crashed: Vec<usize> = (0..m)
        .filter(|&k| !matches!(fates[k], Fate::Arrives(_)))
        .collect();
    let jobs: Vec<(usize, Option<usize>)> = done.iter().map(|&k| (k, None)).collect();
    let trained = train_jobs(clients, &jobs, env, t)?;

    // Nobody waits on a crashed client; one over the limit runs the clock out.
    let waited: Vec<f64> = fates
        .iter()
        .zip(&crashes)
        .filter_map(|(f, crash)| match *f {
            Fate::Arrives(time) => Some(time),
            Fate::Interrupted(_) if crash.is_none() => Some(f64::INFINITY),
            Fate::Interrupted(_) => None,
        })
        .collect();
    let mut tally = Tally {
        round_length: round_length(&waited, 0.0, &env.timing),
        eur: eur_empirical(&done, &crashed, m),
        attempted: epochs * m as f64,
        ..Tally::default()
    };
    for (k, c) in clients.iter_mut().enumerate() {
        c.tag = ClientTag::default();
        if let Fate::Interrupted(frac) = fates[k] {
            tally.wasted += frac * epochs;
            c.tag.round_outcome = RoundOutcome::Crashed;
        }
    }
    for (k, model) in done.iter().copied().zip(trained) {
        let c = &mut clients[k];
        tally.base_versions.push(c.model.version as f64);
        c.model = ModelParams {
            weights: model.weights,
            version: t as u64,
        };
        c.tag.round_outcome = RoundOutcome::Picked;
    }
    let locals: Vec<ModelParams> = clients.iter().map(|c| c.model.clone()).collect();
    server.global = aggregate(&locals, &sizes(clients), t as u64)?;
    let eval = evaluate(&server.global, &env.test, &env.spec)?;
    Ok(report(Protocol::Local, t, tally, eval, clients))
}

/// A full federated run: environment, server and client state.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub protocol: Protocol,
    pub env: RoundEnv,
    pub server: ServerState,
    pub clients: Vec<ClientState>,
    round: usize,
}

impl Simulation {
    /// Every client starts at version 0 holding the zero model, which also
    /// fills the cache.
    pub fn new(
        protocol: Protocol,
        env: RoundEnv,
        profiles: Vec<ClientProfile>,
        partitions: Vec<Partition>,
        lag_tolerance: u64,
        selection_fraction: f64,
    ) -> Result<Self> {
        if profiles.len() != partitions.len() {
            return Err(SimError::DimensionMismatch {
                expected: partitions.len(),
                got: profiles.len(),
            });
        }
        if profiles.is_empty() {
            return Err(SimError::InvalidArgument("no clients".into()));
        }
        if lag_tolerance < 1 {
            return Err(SimError::InvalidArgument(
                "lag tolerance must be at least 1".into(),
            ));
        }
        if !(selection_fraction > 0.0 && selection_fraction <= 1.0) {
            return Err(SimError::InvalidArgument(format!(
                "selection fraction must be in (0, 1], got {selection_fraction}"
            )));
        }
        env.spec.validate()?;
        env.timing.validate()?;
        if !env.spec.model_kind.matches(env.train.kind()) {
            return Err(SimError::InvalidArgument(format!(
                "model {:?} does not fit task {:?}",
                env.spec.model_kind,
                env.train.kind()
            )));
        }
        let initial = ModelParams::zeros(
            env.spec
                .model_kind
                .param_len(env.train.dim(), env.train.kind()),
        );
        let clients = profiles
            .into_iter()
            .zip(partitions)
            .map(|(profile, partition)| ClientState {
                profile,
                partition,
                model: initial.clone(),
                in_flight_epochs: 0.0,
                tag: ClientTag::default(),
            })
            .collect::<Vec<_>>();
        let server = ServerState::new(initial, clients.len(), lag_tolerance, selection_fraction);
        Ok(Self {
            protocol,
            env,
            server,
            clients,
            round: 0,
        })
    }

    /// Rounds completed so far.
    pub fn round(&self) -> usize {
        self.round
    }

    pub fn global(&self) -> &ModelParams {
        &self.server.global
    }

    pub fn evaluate_global(&self) -> Result<Evaluation> {
        evaluate(&self.server.global, &self.env.test, &self.env.spec)
    }

    pub fn step(&mut self) -> Result<RoundReport> {
        let t = self.round + 1;
        let (server, clients, env) = (&mut self.server, &mut self.clients[..], &self.env);
        let report = match self.protocol {
            Protocol::Safa => run_round_safa(server, clients, env, t)?,
            Protocol::Fedavg => run_round_fedavg(server, clients, env, t)?,
            Protocol::Fedcs => run_round_fedcs(server, clients, env, t)?,
            Protocol::Local => run_round_fully_local(server, clients, env, t)?,
        };
        self.round = t;
        Ok(report)
    }
}
