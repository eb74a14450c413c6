use safa_sim::env::{t_train, t_updown, ClientProfile, TimingConfig};
use safa_sim::learners::{Dataset, LearnerSpec, ModelKind, ModelParams, Partition};
use safa_sim::protocol::{
    distribute, quota, ClientState, ClientTag, Protocol, RoundEnv, RoundOutcome, Simulation,
    SyncClass,
};
use safa_sim::runner::{build_simulation, RunConfig, Task};

fn cfg(protocol: Protocol, c: f64, cr: f64, tau: u64) -> RunConfig {
    let mut cfg = RunConfig::preset(Task::SyntheticRegression);
    cfg.protocol = protocol;
    cfg.federation.clients = 12;
    cfg.federation.selection_fraction = c;
    cfg.federation.lag_tolerance = tau;
    cfg.population.crash_prob = cr;
    cfg.data.samples = 300;
    cfg.seed = 17;
    cfg
}

fn client(id: usize, weights: Vec<f64>, version: u64, in_flight: f64) -> ClientState {
    ClientState {
        profile: ClientProfile {
            id,
            perf: 1.0,
            crash_prob: 0.0,
            bandwidth: 1.4e6,
            partition_size: 1,
        },
        partition: Partition {
            client_id: id,
            sample_indices: vec![id],
        },
        model: ModelParams { weights, version },
        in_flight_epochs: in_flight,
        tag: ClientTag::default(),
    }
}

#[test]
fn distribution_skips_tolerable_clients() {
    let global = ModelParams {
        weights: vec![9.0],
        version: 6,
    };
    let mut clients = vec![
        client(0, vec![1.0], 6, 0.0),
        client(1, vec![2.0], 4, 1.5),
        client(2, vec![3.0], 0, 2.5),
    ];
    let classes = [
        SyncClass::UpToDate,
        SyncClass::Tolerable,
        SyncClass::Deprecated,
    ];
    let d = distribute(&global, &mut clients, &classes);
    assert_eq!(d.m_sync, 2);
    assert_eq!(d.discarded_epochs, 2.5);
    assert_eq!(clients[0].model, global);
    assert_eq!(clients[1].model.weights, vec![2.0]);
    assert_eq!(clients[1].in_flight_epochs, 1.5);
    assert_eq!(clients[2].model, global);
    assert_eq!(clients[2].in_flight_epochs, 0.0);
}

#[test]
fn zero_tolerance_synchronises_everyone() {
    let mut sim = build_simulation(&cfg(Protocol::Safa, 0.3, 0.4, 1)).unwrap();
    for _ in 0..8 {
        assert_eq!(sim.step().unwrap().m_sync, 12);
    }
}

#[test]
fn first_round_picks_the_fastest() {
    let mut sim = build_simulation(&cfg(Protocol::Safa, 0.25, 0.0, 5)).unwrap();
    let r = sim.step().unwrap();
    let q = quota(0.25, 12);
    assert_eq!((r.picked, r.undrafted), (q, 12 - q));
    assert_eq!(r.eur, q as f64 / 12.0);
    let spec = sim.env.spec;
    let finish = |c: &ClientState| {
        let (down, up) = t_updown(&c.profile, &sim.env.timing);
        down + t_train(&c.profile, spec.epochs, spec.batch_size) + up
    };
    let of = |o: RoundOutcome| sim.clients.iter().filter(move |c| c.tag.round_outcome == o);
    let slowest_picked = of(RoundOutcome::Picked).map(finish).fold(0.0, f64::max);
    let fastest_undrafted = of(RoundOutcome::Undrafted)
        .map(finish)
        .fold(f64::INFINITY, f64::min);
    assert!(slowest_picked <= fastest_undrafted);
}

#[test]
fn crashed_clients_keep_their_version() {
    let mut sim = build_simulation(&cfg(Protocol::Safa, 0.3, 0.6, 5)).unwrap();
    for t in 1..=10u64 {
        sim.step().unwrap();
        for c in &sim.clients {
            match c.tag.round_outcome {
                RoundOutcome::Crashed => assert!(c.model.version < t),
                RoundOutcome::Picked | RoundOutcome::Undrafted => assert_eq!(c.model.version, t),
                RoundOutcome::NotRun => panic!("every SAFA client runs"),
            }
        }
    }
}

#[test]
fn fedavg_waits_out_the_limit_on_a_crash() {
    let mut c = cfg(Protocol::Fedavg, 0.5, 0.3, 5);
    c.timing.per_model_dist_time = Some(0.0);
    let mut fedavg = build_simulation(&c).unwrap();
    c.protocol = Protocol::Safa;
    let mut safa = build_simulation(&c).unwrap();
    let mut stalls = 0;
    for _ in 0..20 {
        let f = fedavg.step().unwrap();
        let s = safa.step().unwrap();
        if f.crashed > 0 {
            stalls += 1;
            assert_eq!(f.round_length, c.timing.t_lim + f.t_dist);
            assert!(s.round_length <= f.round_length);
        }
    }
    assert!(stalls > 0);
}

#[test]
fn fedavg_without_commits_keeps_the_model() {
    let mut c = cfg(Protocol::Fedavg, 0.2, 1.0, 5);
    c.population.crash_prob = 1.0;
    let mut sim = build_simulation(&c).unwrap();
    let before = sim.global().weights.clone();
    let r = sim.step().unwrap();
    assert_eq!(sim.global().weights, before);
    assert_eq!(r.eur, 0.0);
}

#[test]
fn fully_local_never_synchronises() {
    let mut sim = build_simulation(&cfg(Protocol::Local, 0.3, 0.3, 5)).unwrap();
    for _ in 0..5 {
        let r = sim.step().unwrap();
        assert_eq!(r.m_sync, 0);
        assert_eq!(r.t_dist, 0.0);
    }
    let distinct = sim
        .clients
        .iter()
        .filter(|c| c.model.weights != sim.global().weights)
        .count();
    assert!(distinct > 0);
}

/// Identical clients: FedCS has nothing to prefer and its picks should be
/// spread like FedAvg's uniform draw.
#[test]
fn fedcs_with_identical_clients_spreads_selection() {
    let m = 10;
    let ds = Dataset::synthetic_regression(100, 3, 0.1, 3).unwrap();
    let (train, test) = ds.split(0.2, 3).unwrap();
    let partitions: Vec<Partition> = (0..m)
        .map(|k| Partition {
            client_id: k,
            sample_indices: (k * 8..k * 8 + 8).collect(),
        })
        .collect();
    let profiles: Vec<ClientProfile> = (0..m)
        .map(|id| ClientProfile {
            id,
            perf: 1.0,
            crash_prob: 0.0,
            bandwidth: 1.4e6,
            partition_size: 8,
        })
        .collect();
    let env = RoundEnv {
        train,
        test,
        spec: LearnerSpec {
            model_kind: ModelKind::LinearRegression,
            learning_rate: 1e-3,
            epochs: 1,
            batch_size: 4,
            l2: 1e-4,
        },
        timing: TimingConfig::default(),
        seed: 5,
        fedcs_noise: 0.0,
    };
    let mut sim = Simulation::new(Protocol::Fedcs, env, profiles, partitions, 5, 0.3).unwrap();
    let mut counts = vec![0usize; m];
    let rounds = 300;
    for _ in 0..rounds {
        sim.step().unwrap();
        for (k, c) in sim.clients.iter().enumerate() {
            if c.tag.round_outcome == RoundOutcome::Picked {
                counts[k] += 1;
            }
        }
    }
    // Expected 90 each; binomial sd is about 7.9.
    assert!(
        counts.iter().all(|&n| (60..=120).contains(&n)),
        "{counts:?}"
    );
}
