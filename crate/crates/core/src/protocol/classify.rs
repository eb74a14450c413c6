use super::{ClientState, SyncClass};
use crate::error::{Result, SimError};
use crate::learners::ModelParams;

/// Lag-tolerant version classes for round `t`: `t-1` is up to date,
/// `[t-tau, t-1)` tolerable, anything older deprecated.
pub fn classify_clients(versions: &[u64], t: u64, tau: u64) -> Result<Vec<SyncClass>> {
    versions
        .iter()
        .enumerate()
        .map(|(client, &v)| {
            if v >= t {
                Err(SimError::VersionAhead {
                    client,
                    version: v,
                    round: t,
                })
            } else if v == t - 1 {
                Ok(SyncClass::UpToDate)
            } else if v + tau >= t {
                Ok(SyncClass::Tolerable)
            } else {
                Ok(SyncClass::Deprecated)
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Distribution {
    /// Model copies sent this round.
    pub m_sync: usize,
    /// In-flight local epochs thrown away by forced synchronisation.
    pub discarded_epochs: f64,
}

/// Sends `global` to up-to-date and deprecated clients; tolerable clients
/// keep their local model untouched.
pub fn distribute(
    global: &ModelParams,
    clients: &mut [ClientState],
    classes: &[SyncClass],
) -> Distribution {
    let mut out = Distribution::default();
    for (client, class) in clients.iter_mut().zip(classes) {
        client.tag.sync_class = *class;
        match class {
            SyncClass::Tolerable => {}
            SyncClass::UpToDate | SyncClass::Deprecated => {
                if *class == SyncClass::Deprecated {
                    out.discarded_epochs += client.in_flight_epochs;
                }
                client.in_flight_epochs = 0.0;
                client.model.clone_from(global);
                out.m_sync += 1;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eq3_branches() {
        let t = 10;
        let classes = classify_clients(&[9, 7, 8, 5, 4], t, 5).unwrap();
        assert_eq!(
            classes,
            vec![
                SyncClass::UpToDate,
                SyncClass::Tolerable,
                SyncClass::Tolerable,
                SyncClass::Tolerable,
                SyncClass::Deprecated
            ]
        );
    }

    #[test]
    fn two_missed_rounds_with_tolerance_two_is_deprecated() {
        assert_eq!(
            classify_clients(&[7], 10, 2).unwrap(),
            vec![SyncClass::Deprecated]
        );
        assert_eq!(
            classify_clients(&[8], 10, 2).unwrap(),
            vec![SyncClass::Tolerable]
        );
    }

    #[test]
    fn tolerance_one_has_no_tolerable_clients() {
        let classes = classify_clients(&[0, 1, 2, 3, 4], 5, 1).unwrap();
        assert!(classes.iter().all(|c| *c != SyncClass::Tolerable));
        assert_eq!(classes[4], SyncClass::UpToDate);
    }

    #[test]
    fn client_ahead_of_server_is_an_error() {
        assert!(matches!(
            classify_clients(&[3, 5], 5, 2),
            Err(SimError::VersionAhead {
                client: 1,
                version: 5,
                round: 5
            })
        ));
    }
}
