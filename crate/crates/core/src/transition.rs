//! Sparse item-to-item transition weights with interval weighting.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::events::InteractionEvent;
use crate::scoring::ScoreVector;

/// `exp(beta_i * (t2 - t1) / t_ref)`, or with the exponent negated when
/// `negate` is set. A zero gap always weighs 1.
pub fn interval_weight(t1: f64, t2: f64, t_ref: f64, beta_i: f64, negate: bool) -> Result<f64> {
    let gap = t2 - t1;
    if gap == 0.0 || beta_i == 0.0 {
        return Ok(1.0);
    }
    if t_ref <= 0.0 {
        return Err(Error::DegenerateReference(t_ref));
    }
    let exponent = beta_i * gap / t_ref;
    Ok(if negate { (-exponent).exp() } else { exponent.exp() })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransitionStore {
    rows: Vec<BTreeMap<usize, f64>>,
    last_item: Vec<Option<(usize, f64)>>,
    beta_i: f64,
    negate: bool,
}

impl TransitionStore {
    pub fn new(n_users: usize, n_items: usize, beta_i: f64, negate: bool) -> Self {
        TransitionStore {
            rows: vec![BTreeMap::new(); n_items],
            last_item: vec![None; n_users],
            beta_i,
            negate,
        }
    }

    pub fn n_users(&self) -> usize {
        self.last_item.len()
    }

    pub fn n_items(&self) -> usize {
        self.rows.len()
    }

    pub fn beta_i(&self) -> f64 {
        self.beta_i
    }

    pub fn negate(&self) -> bool {
        self.negate
    }

    pub fn last_item(&self, u: usize) -> Option<(usize, f64)> {
        self.last_item.get(u).copied().flatten()
    }

    /// Adds the transition from the user's previous item to `event.item` and
    /// returns its weight; `None` for the user's first event.
    pub fn record_transition(&mut self, event: &InteractionEvent, t_ref: f64) -> Result<Option<f64>> {
        let (u, i) = (event.user, event.item);
        if u >= self.n_users() {
            return Err(Error::index("user", u, self.n_users()));
        }
        if i >= self.n_items() {
            return Err(Error::index("item", i, self.n_items()));
        }
        let added = match self.last_item[u] {
            Some((i0, t0)) => {
                let w = interval_weight(t0, event.timestamp, t_ref, self.beta_i, self.negate)?;
                *self.rows[i0].entry(i).or_insert(0.0) += w;
                Some(w)
            }
            None => None,
        };
        self.last_item[u] = Some((i, event.timestamp));
        Ok(added)
    }

    pub fn weight(&self, from: usize, to: usize) -> f64 {
        self.rows.get(from).and_then(|r| r.get(&to)).copied().unwrap_or(0.0)
    }

    pub fn row(&self, from: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.rows[from].iter().map(|(&j, &w)| (j, w))
    }

    /// Dense row of the user's last item; zeros for a user without history.
    pub fn transition_scores(&self, u: usize) -> ScoreVector {
        let mut scores = ScoreVector::zeros(self.n_items());
        if let Some((i0, _)) = self.last_item(u) {
            for (j, w) in self.row(i0) {
                scores.values[j] = w;
            }
        }
        scores
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.rows
            .iter()
            .enumerate()
            .flat_map(|(i, row)| row.iter().map(move |(&j, &w)| (i, j, w)))
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(BTreeMap::len).sum()
    }

    pub(crate) fn from_parts(
        n_items: usize,
        triplets: Vec<(usize, usize, f64)>,
        last_item: Vec<Option<(usize, f64)>>,
        beta_i: f64,
        negate: bool,
    ) -> Result<Self> {
        let mut rows = vec![BTreeMap::new(); n_items];
        for (i, j, w) in triplets {
            if i >= n_items || j >= n_items {
                return Err(Error::Checkpoint(format!("transition ({i}, {j}) outside {n_items} items")));
            }
            rows[i].insert(j, w);
        }
        Ok(TransitionStore {
            rows,
            last_item,
            beta_i,
            negate,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn interval_weight_values() {
        assert_eq!(interval_weight(3.0, 9.0, 10.0, 0.0, false).unwrap(), 1.0);
        assert_eq!(interval_weight(4.0, 4.0, 10.0, 7.0, false).unwrap(), 1.0);
        let e = interval_weight(0.0, 10.0, 100.0, 10.0, false).unwrap();
        assert!((e - std::f64::consts::E).abs() < 1e-15);
        let inv = interval_weight(0.0, 10.0, 100.0, 10.0, true).unwrap();
        assert!((inv - 1.0 / std::f64::consts::E).abs() < 1e-15);
        assert!(matches!(
            interval_weight(1.0, 2.0, 0.0, 1.0, false),
            Err(Error::DegenerateReference(_))
        ));
    }

    #[test]
    fn first_event_sets_last_item_only() {
        let mut t = TransitionStore::new(2, 3, 0.0, false);
        assert_eq!(t.record_transition(&InteractionEvent::new(0, 1, 1.0), 10.0).unwrap(), None);
        assert_eq!(t.nnz(), 0);
        assert_eq!(t.last_item(0), Some((1, 1.0)));
        assert_eq!(t.record_transition(&InteractionEvent::new(0, 2, 2.0), 10.0).unwrap(), Some(1.0));
        assert_eq!(t.weight(1, 2), 1.0);
        assert_eq!(t.transition_scores(0).values, vec![0.0, 0.0, 0.0]);
        assert_eq!(t.transition_scores(1).values, vec![0.0; 3]);
    }

    #[test]
    fn self_loop_and_scores() {
        let mut t = TransitionStore::new(1, 3, 0.0, false);
        for (i, ts) in [(2, 1.0), (2, 2.0), (0, 3.0), (2, 4.0)] {
            t.record_transition(&InteractionEvent::new(0, i, ts), 4.0).unwrap();
        }
        assert_eq!(t.weight(2, 2), 1.0);
        assert_eq!(t.weight(2, 0), 1.0);
        assert_eq!(t.weight(0, 2), 1.0);
        assert_eq!(t.transition_scores(0).values, vec![1.0, 0.0, 1.0]);
    }

    proptest! {
        #[test]
        fn stream_matches_rebuild(
            raw in prop::collection::vec((0usize..4, 0usize..6, 0u16..50), 1..80),
            beta in 0.0f64..5.0,
        ) {
            let mut events: Vec<InteractionEvent> =
                raw.into_iter().map(|(u, i, t)| InteractionEvent::new(u, i, t as f64)).collect();
            events.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
            let t_ref = 50.0;
            let mut store = TransitionStore::new(4, 6, beta, false);
            let mut previous: Vec<(usize, usize, f64)> = Vec::new();
            for e in &events {
                store.record_transition(e, t_ref).unwrap();
                let now: Vec<_> = store.triplets().collect();
                for &(i, j, w) in &previous {
                    prop_assert!(store.weight(i, j) >= w);
                }
                previous = now;
            }

            // Rebuild from each user's full sequence.
            let mut dense = vec![vec![0.0f64; 6]; 6];
            for u in 0..4 {
                let seq: Vec<&InteractionEvent> = events.iter().filter(|e| e.user == u).collect();
                for pair in seq.windows(2) {
                    let gap = pair[1].timestamp - pair[0].timestamp;
                    dense[pair[0].item][pair[1].item] += (beta * gap / t_ref).exp();
                }
                prop_assert_eq!(store.last_item(u).map(|x| x.0), seq.last().map(|e| e.item));
            }
            for (i, row) in dense.iter().enumerate() {
                for (j, w) in row.iter().enumerate() {
                    prop_assert!((store.weight(i, j) - w).abs() <= 1e-12 * w.max(1.0));
                }
            }
        }
    }
}
