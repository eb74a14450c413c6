use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Result, SimError};
use crate::learners::ModelParams;

/// Server-side state carried between rounds.
#[derive(Debug, Clone)]
pub struct ServerState {
    pub global: ModelParams,
    /// One entry per client, always fully populated.
    pub cache: Vec<ModelParams>,
    /// Undrafted updates held back until after aggregation.
    pub bypass: BTreeMap<usize, ModelParams>,
    /// Clients picked in the previous round.
    pub picked_last: BTreeSet<usize>,
    pub lag_tolerance: u64,
    pub selection_fraction: f64,
}

impl ServerState {
    pub fn new(
        initial: ModelParams,
        m: usize,
        lag_tolerance: u64,
        selection_fraction: f64,
    ) -> Self {
        Self {
            cache: vec![initial.clone(); m],
            global: initial,
            bypass: BTreeMap::new(),
            picked_last: BTreeSet::new(),
            lag_tolerance,
            selection_fraction,
        }
    }

    /// Clients that were not picked last round, i.e. the ones prioritised now.
    pub fn missed_last_round(&self) -> BTreeSet<usize> {
        (0..self.cache.len())
            .filter(|k| !self.picked_last.contains(k))
            .collect()
    }

    /// Writes picked updates into the cache and resets the entries of
    /// deprecated clients that were not picked to the previous global model.
    pub fn pre_aggregation_cache_update(
        &mut self,
        picked: &[(usize, ModelParams)],
        deprecated: &[usize],
    ) -> Result<()> {
        let picked_ids: BTreeSet<usize> = picked.iter().map(|(k, _)| *k).collect();
        if let Some(&k) = deprecated.iter().find(|k| picked_ids.contains(k)) {
            return Err(SimError::PickedAndDeprecated(k));
        }
        for (k, model) in picked {
            self.cache[*k].clone_from(model);
        }
        for &k in deprecated {
            self.cache[k].clone_from(&self.global);
        }
        Ok(())
    }

    /// Moves every bypassed update into the cache and empties the bypass.
    pub fn post_aggregation_cache_update(&mut self) -> Vec<usize> {
        let drained = std::mem::take(&mut self.bypass);
        let mut ids = Vec::with_capacity(drained.len());
        for (k, model) in drained {
            self.cache[k] = model;
            ids.push(k);
        }
        ids
    }
}

/// `sum_k (n_k / n) * w_k` accumulated in the given order.
///
/// Every protocol aggregates through this function so that equal inputs give
/// bitwise equal global models.
pub fn weighted_average<'a, I>(entries: I, round: u64) -> Result<Vec<f64>>
where
    I: IntoIterator<Item = (usize, &'a [f64])>,
    I::IntoIter: Clone,
{
    let iter = entries.into_iter();
    let total: usize = iter.clone().map(|(n, _)| n).sum();
    if total == 0 {
        return Err(SimError::InvalidArgument(
            "aggregation over zero samples".into(),
        ));
    }
    let total = total as f64;
    let mut out: Vec<f64> = Vec::new();
    for (entry, (n, w)) in iter.enumerate() {
        if out.is_empty() {
            out = vec![0.0; w.len()];
        } else if out.len() != w.len() {
            return Err(SimError::DimensionMismatch {
                expected: out.len(),
                got: w.len(),
            });
        }
        if !w.iter().all(|x| x.is_finite()) {
            return Err(SimError::NonFiniteAggregate {
                entry,
                round: round as usize,
            });
        }
        let coef = n as f64 / total;
        for (o, x) in out.iter_mut().zip(w) {
            *o += coef * x;
        }
    }
    Ok(out)
}

/// Aggregates the full cache with data-size weights into global version `round`.
pub fn aggregate(cache: &[ModelParams], sizes: &[usize], round: u64) -> Result<ModelParams> {
    if cache.len() != sizes.len() {
        return Err(SimError::DimensionMismatch {
            expected: sizes.len(),
            got: cache.len(),
        });
    }
    let weights = weighted_average(
        sizes
            .iter()
            .zip(cache)
            .map(|(&n, p)| (n, p.weights.as_slice())),
        round,
    )?;
    Ok(ModelParams {
        weights,
        version: round,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(w: &[f64], version: u64) -> ModelParams {
        ModelParams {
            weights: w.to_vec(),
            version,
        }
    }

    #[test]
    fn aggregation_weights_by_size() {
        let cache = [p(&[1.0, 0.0], 1), p(&[3.0, 4.0], 1)];
        let g = aggregate(&cache, &[1, 3], 2).unwrap();
        assert_eq!(g.weights, vec![2.5, 3.0]);
        assert_eq!(g.version, 2);
    }

    #[test]
    fn identical_entries_average_to_themselves() {
        let cache = vec![p(&[0.25, -1.5], 0); 4];
        let g = aggregate(&cache, &[3, 7, 1, 9], 1).unwrap();
        assert_eq!(g.weights, vec![0.25, -1.5]);
    }

    #[test]
    fn non_finite_entry_is_reported() {
        let cache = [p(&[1.0], 0), p(&[f64::NAN], 0)];
        assert!(matches!(
            aggregate(&cache, &[1, 1], 4),
            Err(SimError::NonFiniteAggregate { entry: 1, round: 4 })
        ));
    }

    #[test]
    fn three_step_cache_update() {
        let mut s = ServerState::new(p(&[0.0], 0), 4, 2, 0.5);
        s.global = p(&[9.0], 3);
        s.bypass.insert(2, p(&[2.0], 4));
        s.pre_aggregation_cache_update(&[(0, p(&[1.0], 4))], &[3])
            .unwrap();
        assert_eq!(s.cache[0].weights, vec![1.0]);
        assert_eq!(s.cache[3].weights, vec![9.0]);
        assert_eq!(s.cache[2].weights, vec![0.0]);
        assert_eq!(s.post_aggregation_cache_update(), vec![2]);
        assert_eq!(s.cache[2].weights, vec![2.0]);
        assert!(s.bypass.is_empty());
        assert_eq!(s.cache.len(), 4);
    }

    #[test]
    fn picked_and_deprecated_is_rejected() {
        let mut s = ServerState::new(p(&[0.0], 0), 3, 2, 0.5);
        assert!(matches!(
            s.pre_aggregation_cache_update(&[(1, p(&[1.0], 1))], &[1]),
            Err(SimError::PickedAndDeprecated(1))
        ));
    }

    #[test]
    fn missed_last_round_is_complement() {
        let mut s = ServerState::new(p(&[0.0], 0), 4, 2, 0.5);
        s.picked_last = [0, 2].into();
        assert_eq!(s.missed_last_round(), [1, 3].into());
    }
}
