use std::collections::BTreeSet;

/// A client's trained model reaching the server at `time` seconds into the
/// training phase.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Arrival {
    pub client: usize,
    pub time: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Selection {
    /// Picked clients in pick order.
    pub picked: Vec<usize>,
    /// Arrived but not picked, in arrival order.
    pub undrafted: Vec<usize>,
    /// Time of the quota-completing arrival when the first pass met the quota.
    pub closed_at: Option<f64>,
}

/// `ceil(c * m)` clamped to `[1, m]`, tolerant of float noise in the product.
pub fn quota(c: f64, m: usize) -> usize {
    let raw = (c * m as f64 - 1e-9).ceil();
    (raw.max(1.0) as usize).min(m)
}

/// Compensatory first-come-first-merge selection.
///
/// Arrivals are taken in time order (ties by client id). The first pass only
/// accepts clients missing from `picked_last`; if that cannot fill the quota
/// the remaining arrivals are appended in arrival order.
pub fn cfcfm_select(
    arrivals: &[Arrival],
    picked_last: &BTreeSet<usize>,
    c: f64,
    m: usize,
) -> Selection {
    let q = quota(c, m);
    let mut ordered = arrivals.to_vec();
    ordered.sort_by(|a, b| a.time.total_cmp(&b.time).then(a.client.cmp(&b.client)));

    let mut taken = vec![false; ordered.len()];
    let mut picked = Vec::with_capacity(q);
    let mut closed_at = None;
    for (i, a) in ordered.iter().enumerate() {
        if picked.len() == q {
            break;
        }
        if !picked_last.contains(&a.client) {
            taken[i] = true;
            picked.push(a.client);
            if picked.len() == q {
                closed_at = Some(a.time);
            }
        }
    }
    if picked.len() < q {
        for (i, a) in ordered.iter().enumerate() {
            if picked.len() == q {
                break;
            }
            if !taken[i] {
                taken[i] = true;
                picked.push(a.client);
            }
        }
    }
    let undrafted = ordered
        .iter()
        .zip(&taken)
        .filter(|(_, t)| !**t)
        .map(|(a, _)| a.client)
        .collect();
    Selection {
        picked,
        undrafted,
        closed_at,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn arr(pairs: &[(usize, f64)]) -> Vec<Arrival> {
        pairs
            .iter()
            .map(|&(client, time)| Arrival { client, time })
            .collect()
    }

    #[test]
    fn quota_rounding() {
        assert_eq!(quota(0.3, 100), 30);
        assert_eq!(quota(0.7, 100), 70);
        assert_eq!(quota(0.1, 5), 1);
        assert_eq!(quota(0.5, 5), 3);
        assert_eq!(quota(1.0, 7), 7);
    }

    #[test]
    fn compensation_prefers_missed_clients() {
        // quota 2 of 6; client 1 was picked last round.
        let a = arr(&[(1, 1.0), (2, 2.0), (3, 3.0), (4, 4.0)]);
        let last: BTreeSet<usize> = [1].into();
        let s = cfcfm_select(&a, &last, 0.3, 6);
        assert_eq!(s.picked, vec![2, 3]);
        assert_eq!(s.undrafted, vec![1, 4]);
        assert_eq!(s.closed_at, Some(3.0));
    }

    #[test]
    fn quota_filled_from_previously_picked() {
        let a = arr(&[(1, 1.0), (2, 2.0), (3, 3.0)]);
        let last: BTreeSet<usize> = [1, 3].into();
        let s = cfcfm_select(&a, &last, 0.5, 4);
        assert_eq!(s.picked, vec![2, 1]);
        assert_eq!(s.undrafted, vec![3]);
        assert_eq!(s.closed_at, None);
    }

    #[test]
    fn fewer_arrivals_than_quota_picks_all() {
        let a = arr(&[(0, 5.0)]);
        let s = cfcfm_select(&a, &BTreeSet::new(), 0.5, 10);
        assert_eq!(s.picked, vec![0]);
        assert!(s.undrafted.is_empty());
        assert_eq!(s.closed_at, None);
    }

    #[test]
    fn ties_broken_by_client_id() {
        let a = arr(&[(5, 1.0), (2, 1.0), (9, 1.0)]);
        let s = cfcfm_select(&a, &BTreeSet::new(), 0.2, 10);
        assert_eq!(s.picked, vec![2, 5]);
        assert_eq!(s.undrafted, vec![9]);
    }
}
