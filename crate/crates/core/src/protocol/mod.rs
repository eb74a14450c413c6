//! The SAFA state machine and the baseline round procedures.
//!
//! A SAFA round runs lag-tolerant distribution, local training with crash
//! sampling, CFCFM selection, and the three-step cache update around the
//! weighted aggregation. FedAvg, FedCS and fully-local training share the
//! client bookkeeping but select, wait and aggregate differently.

mod classify;
mod rounds;
mod select;
mod server;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use classify::{classify_clients, distribute, Distribution};
pub use rounds::{
    run_round_fedavg, run_round_fedcs, run_round_fully_local, run_round_safa, ClientState,
    RoundEnv, Simulation,
};
pub use select::{cfcfm_select, quota, Arrival, Selection};
pub use server::{aggregate, weighted_average, ServerState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    Safa,
    Fedavg,
    Fedcs,
    Local,
}

impl Protocol {
    pub const ALL: [Protocol; 4] = [
        Protocol::Safa,
        Protocol::Fedavg,
        Protocol::Fedcs,
        Protocol::Local,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Protocol::Safa => "safa",
            Protocol::Fedavg => "fedavg",
            Protocol::Fedcs => "fedcs",
            Protocol::Local => "local",
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Protocol {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Protocol::ALL
            .into_iter()
            .find(|p| p.as_str() == s.to_ascii_lowercase())
            .ok_or_else(|| {
                format!("unknown protocol {s:?} (expected safa, fedavg, fedcs or local)")
            })
    }
}

/// Version class assigned at the start of a round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SyncClass {
    UpToDate,
    Tolerable,
    Deprecated,
}

/// What happened to a client's local training this round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RoundOutcome {
    Picked,
    Undrafted,
    Crashed,
    NotRun,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClientTag {
    pub sync_class: SyncClass,
    pub round_outcome: RoundOutcome,
}

impl Default for ClientTag {
    fn default() -> Self {
        Self {
            sync_class: SyncClass::UpToDate,
            round_outcome: RoundOutcome::NotRun,
        }
    }
}
