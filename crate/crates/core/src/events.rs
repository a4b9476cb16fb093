//! The interaction stream and the time-decayed user-item matrix.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::config::{ModelConfig, TRefMode};
use crate::error::{Error, Result};
use crate::linalg::SparseMatrix;

/// One `(user, item, timestamp)` interaction, with dense 0-based indices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InteractionEvent {
    pub user: usize,
    pub item: usize,
    pub timestamp: f64,
}

impl InteractionEvent {
    pub fn new(user: usize, item: usize, timestamp: f64) -> Self {
        InteractionEvent {
            user,
            item,
            timestamp,
        }
    }
}

/// `exp(-beta_t * (1 - t / t_ref))`, a weight in `(0, 1]` for `0 <= t <= t_ref`.
pub fn time_decay(t: f64, t_ref: f64, beta_t: f64) -> Result<f64> {
    if !(t_ref > 0.0) {
        return Err(Error::DegenerateReference(t_ref));
    }
    if t > t_ref {
        return Err(Error::AfterReference { t, t_ref });
    }
    Ok((-beta_t * (1.0 - t / t_ref)).exp())
}

/// Inverse square root of a degree, or 0 for degrees at or below `guard_eps`.
pub fn normalized_row_factor(degree: f64, guard_eps: f64) -> f64 {
    if degree > guard_eps {
        degree.powf(-0.5)
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub item: usize,
    pub timestamp: f64,
}

/// Parameters that fix how weights are computed at insertion time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StoreParams {
    pub beta_t: f64,
    pub t_ref_mode: TRefMode,
    /// Initial reference time; the dataset's last timestamp in `DatasetMax` mode.
    pub t_ref: f64,
    pub guard_eps: f64,
    pub history_cap: usize,
}

impl StoreParams {
    pub fn from_config(config: &ModelConfig, t_ref: f64) -> Self {
        StoreParams {
            beta_t: config.beta_t,
            t_ref_mode: config.t_ref_mode,
            t_ref,
            guard_eps: config.guard_eps,
            history_cap: config.history_cap,
        }
    }
}

/// Sparse decayed matrix with row and column views, degree vectors and
/// per-user histories. Weights are frozen when inserted.
#[derive(Debug, Clone, PartialEq)]
pub struct DecayedInteractionStore {
    n_users: usize,
    n_items: usize,
    rows: Vec<BTreeMap<usize, f64>>,
    cols: Vec<BTreeMap<usize, f64>>,
    user_degree: Vec<f64>,
    item_degree: Vec<f64>,
    histories: Vec<Vec<HistoryEntry>>,
    params: StoreParams,
    t_max_seen: f64,
    n_events: u64,
}

impl DecayedInteractionStore {
    pub fn new(n_users: usize, n_items: usize, params: StoreParams) -> Self {
        DecayedInteractionStore {
            n_users,
            n_items,
            rows: vec![BTreeMap::new(); n_users],
            cols: vec![BTreeMap::new(); n_items],
            user_degree: vec![0.0; n_users],
            item_degree: vec![0.0; n_items],
            histories: vec![Vec::new(); n_users],
            params,
            t_max_seen: 0.0,
            n_events: 0,
        }
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn params(&self) -> &StoreParams {
        &self.params
    }

    pub fn t_ref(&self) -> f64 {
        self.params.t_ref
    }

    pub fn t_max_seen(&self) -> f64 {
        self.t_max_seen
    }

    pub fn n_events(&self) -> u64 {
        self.n_events
    }

    pub fn guard_eps(&self) -> f64 {
        self.params.guard_eps
    }

    /// The reference time that applies once an event at `t` has been ingested.
    pub fn reference_after(&self, t: f64) -> f64 {
        match self.params.t_ref_mode {
            TRefMode::DatasetMax => self.params.t_ref.max(t),
            TRefMode::StreamMax => self.t_max_seen.max(t),
        }
    }

    /// Decay weight an event at `t` would receive on insertion.
    pub fn prospective_weight(&self, t: f64) -> Result<f64> {
        decay_against(t, self.reference_after(t), self.params.beta_t)
    }

    /// Decay of a stored history timestamp against the current reference.
    pub fn history_weight(&self, t: f64) -> Result<f64> {
        decay_against(t, self.params.t_ref, self.params.beta_t)
    }

    pub fn check_event(&self, event: &InteractionEvent) -> Result<()> {
        if event.user >= self.n_users {
            return Err(Error::index("user", event.user, self.n_users));
        }
        if event.item >= self.n_items {
            return Err(Error::index("item", event.item, self.n_items));
        }
        if !(event.timestamp >= 0.0) || !event.timestamp.is_finite() {
            return Err(Error::Invalid(format!("bad timestamp {}", event.timestamp)));
        }
        if event.timestamp < self.t_max_seen {
            return Err(Error::Ordering {
                t: event.timestamp,
                last: self.t_max_seen,
            });
        }
        Ok(())
    }

    /// Adds the decayed weight of `event` and returns it.
    pub fn ingest(&mut self, event: &InteractionEvent) -> Result<f64> {
        self.check_event(event)?;
        let w = self.prospective_weight(event.timestamp)?;
        let (u, i) = (event.user, event.item);
        if w > 0.0 {
            *self.rows[u].entry(i).or_insert(0.0) += w;
            *self.cols[i].entry(u).or_insert(0.0) += w;
            self.user_degree[u] += w;
            self.item_degree[i] += w;
        }
        let history = &mut self.histories[u];
        history.push(HistoryEntry {
            item: i,
            timestamp: event.timestamp,
        });
        let cap = self.params.history_cap;
        if cap > 0 && history.len() > cap {
            let excess = history.len() - cap;
            history.drain(..excess);
        }
        self.params.t_ref = self.reference_after(event.timestamp);
        self.t_max_seen = event.timestamp;
        self.n_events += 1;
        Ok(w)
    }

    pub fn weight(&self, user: usize, item: usize) -> f64 {
        self.rows[user].get(&item).copied().unwrap_or(0.0)
    }

    pub fn user_row(&self, user: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.rows[user].iter().map(|(&i, &w)| (i, w))
    }

    pub fn item_column(&self, item: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.cols[item].iter().map(|(&u, &w)| (u, w))
    }

    /// All stored weights in (user, item) order.
    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.rows
            .iter()
            .enumerate()
            .flat_map(|(u, row)| row.iter().map(move |(&i, &w)| (u, i, w)))
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(BTreeMap::len).sum()
    }

    pub fn user_degree(&self) -> &[f64] {
        &self.user_degree
    }

    pub fn item_degree(&self) -> &[f64] {
        &self.item_degree
    }

    pub fn history(&self, user: usize) -> &[HistoryEntry] {
        &self.histories[user]
    }

    pub fn user_factor(&self, user: usize) -> f64 {
        normalized_row_factor(self.user_degree[user], self.params.guard_eps)
    }

    pub fn item_factor(&self, item: usize) -> f64 {
        normalized_row_factor(self.item_degree[item], self.params.guard_eps)
    }

    /// `diag(d_U)^(-1/2) R~ diag(d_I)^(-1/2)` with the zero-degree guard.
    pub fn normalized_matrix(&self) -> SparseMatrix {
        let triplets: Vec<_> = self
            .triplets()
            .map(|(u, i, w)| (u, i, self.user_factor(u) * w * self.item_factor(i)))
            .collect();
        SparseMatrix::from_triplets(self.n_users, self.n_items, triplets)
    }

    /// Reassembles a store from checkpointed parts.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn from_parts(
        n_users: usize,
        n_items: usize,
        params: StoreParams,
        triplets: Vec<(usize, usize, f64)>,
        user_degree: Vec<f64>,
        item_degree: Vec<f64>,
        histories: Vec<Vec<HistoryEntry>>,
        t_max_seen: f64,
        n_events: u64,
    ) -> Result<Self> {
        if user_degree.len() != n_users || histories.len() != n_users {
            return Err(Error::Shape {
                expected: n_users,
                got: user_degree.len(),
            });
        }
        if item_degree.len() != n_items {
            return Err(Error::Shape {
                expected: n_items,
                got: item_degree.len(),
            });
        }
        let mut rows = vec![BTreeMap::new(); n_users];
        let mut cols = vec![BTreeMap::new(); n_items];
        for (u, i, w) in triplets {
            if u >= n_users || i >= n_items {
                return Err(Error::Checkpoint(format!("weight ({u}, {i}) out of range")));
            }
            rows[u].insert(i, w);
            cols[i].insert(u, w);
        }
        Ok(DecayedInteractionStore {
            n_users,
            n_items,
            rows,
            cols,
            user_degree,
            item_degree,
            histories,
            params,
            t_max_seen,
            n_events,
        })
    }
}

fn decay_against(t: f64, t_ref: f64, beta_t: f64) -> Result<f64> {
    // With a zero reference every timestamp so far is 0, the limit t = t_ref.
    if t_ref <= 0.0 && t == 0.0 {
        return Ok(1.0);
    }
    time_decay(t, t_ref, beta_t)
}
