//! The full streaming model: decayed store, factor state, transitions and an
//! optional interest trajectory log.

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::events::{DecayedInteractionStore, InteractionEvent, StoreParams};
use crate::factor::{apply_event, batch_factorize, FactorState};
use crate::scoring::{fuse, EmbeddingView, ScoreVector};
use crate::spectral::{frequency_scores, FrequencyWeights, TrajectoryLog};
use crate::transition::TransitionStore;

/// Co-occurrence, sequential and transition scores for one user.
#[derive(Debug, Clone, PartialEq)]
pub struct Channels {
    pub cooccurrence: ScoreVector,
    pub sequential: ScoreVector,
    pub transition: ScoreVector,
}

impl Channels {
    pub fn fuse(&self, lambda_s: f64, lambda_t: f64) -> Result<ScoreVector> {
        fuse(&self.cooccurrence, &self.sequential, &self.transition, lambda_s, lambda_t)
    }
}

/// What one observed event changed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub weight: f64,
    pub transition: Option<f64>,
    pub version: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Recommender {
    config: ModelConfig,
    store: DecayedInteractionStore,
    factors: FactorState,
    transitions: TransitionStore,
    trajectory: Option<TrajectoryLog>,
}

impl Recommender {
    /// Ingests `train` and batch-factorizes the result. `t_ref` is the initial
    /// decay reference (the dataset's last timestamp in `dataset_max` mode).
    pub fn fit(
        config: &ModelConfig,
        n_users: usize,
        n_items: usize,
        t_ref: f64,
        train: &[InteractionEvent],
    ) -> Result<Self> {
        config.validate()?;
        let max = n_users.min(n_items);
        if config.k > max {
            return Err(Error::Rank { k: config.k, max });
        }
        let mut store = DecayedInteractionStore::new(n_users, n_items, StoreParams::from_config(config, t_ref));
        let mut transitions = TransitionStore::new(n_users, n_items, config.beta_i, config.negate_interval);
        for event in train {
            store.ingest(event)?;
            transitions.record_transition(event, store.t_ref())?;
        }
        let factors = batch_factorize(&store.normalized_matrix(), config.k)?;
        Ok(Recommender {
            config: config.clone(),
            store,
            factors,
            transitions,
            trajectory: config.trajectory.then(TrajectoryLog::new),
        })
    }

    /// Reassembles a model from its parts, checking that the shapes agree.
    pub fn from_parts(
        config: ModelConfig,
        store: DecayedInteractionStore,
        factors: FactorState,
        transitions: TransitionStore,
        trajectory: Option<TrajectoryLog>,
    ) -> Result<Self> {
        let expected = store.n_users() * store.n_items();
        if factors.n_users() != store.n_users()
            || factors.n_items() != store.n_items()
            || transitions.n_users() != store.n_users()
            || transitions.n_items() != store.n_items()
        {
            return Err(Error::Shape {
                expected,
                got: factors.n_users() * factors.n_items(),
            });
        }
        if factors.rank() != config.k {
            return Err(Error::Shape {
                expected: config.k,
                got: factors.rank(),
            });
        }
        Ok(Recommender {
            config,
            store,
            factors,
            transitions,
            trajectory,
        })
    }

    /// Applies one event to every component (predict-then-update order is the
    /// caller's business).
    pub fn observe(&mut self, event: &InteractionEvent) -> Result<Observation> {
        let weight = apply_event(&mut self.factors, &mut self.store, event, self.config.rebuild_interval)?;
        let transition = self.transitions.record_transition(event, self.store.t_ref())?;
        if let Some(log) = self.trajectory.as_mut() {
            let view = EmbeddingView::from_state(&self.factors);
            let interests = view.interests(&self.store, event.user)?;
            log.record(event.user, event.timestamp, &interests.long_term, &interests.short_term)?;
        }
        Ok(Observation {
            weight,
            transition,
            version: self.factors.version,
        })
    }

    pub fn check_event(&self, event: &InteractionEvent) -> Result<()> {
        self.store.check_event(event)
    }

    /// The three unfused score channels. `weights` rescales the frequencies of
    /// the co-occurrence channel.
    pub fn channels(&self, u: usize, weights: Option<&FrequencyWeights>) -> Result<Channels> {
        let view = self.view();
        let cooccurrence = match weights {
            Some(w) => frequency_scores(&self.factors, u, w)?,
            None => view.cooccurrence_scores(u)?,
        };
        let short_term = view.short_term_vector(&self.store, u)?;
        Ok(Channels {
            cooccurrence,
            sequential: view.sequential_scores(&short_term)?,
            transition: self.transitions.transition_scores(u),
        })
    }

    /// Fused scores with the configured mixing weights.
    pub fn scores(&self, u: usize, weights: Option<&FrequencyWeights>) -> Result<ScoreVector> {
        self.channels(u, weights)?
            .fuse(self.config.lambda_s, self.config.lambda_t)
    }

    /// Items the user has interacted with, as a mask over all items.
    pub fn seen_mask(&self, u: usize) -> Vec<bool> {
        let mut mask = vec![false; self.store.n_items()];
        for h in self.store.history(u) {
            mask[h.item] = true;
        }
        for (i, _) in self.store.user_row(u) {
            mask[i] = true;
        }
        mask
    }

    /// Top `n` items by fused score, optionally skipping seen items; ties go
    /// to the smaller index.
    pub fn recommend(
        &self,
        u: usize,
        n: usize,
        weights: Option<&FrequencyWeights>,
        exclude_seen: bool,
    ) -> Result<Vec<(usize, f64)>> {
        let scores = self.scores(u, weights)?;
        let mask = if exclude_seen { self.seen_mask(u) } else { vec![false; scores.len()] };
        Ok(top_n(&scores, &mask, n))
    }

    pub fn view(&self) -> EmbeddingView {
        EmbeddingView::from_state(&self.factors)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn store(&self) -> &DecayedInteractionStore {
        &self.store
    }

    pub fn factors(&self) -> &FactorState {
        &self.factors
    }

    pub fn transitions(&self) -> &TransitionStore {
        &self.transitions
    }

    pub fn trajectory(&self) -> Option<&TrajectoryLog> {
        self.trajectory.as_ref()
    }

    pub fn version(&self) -> u64 {
        self.factors.version
    }

    pub fn n_users(&self) -> usize {
        self.store.n_users()
    }

    pub fn n_items(&self) -> usize {
        self.store.n_items()
    }
}

/// Indices of the `n` largest unmasked scores, ties by ascending index.
pub fn top_n(scores: &ScoreVector, mask: &[bool], n: usize) -> Vec<(usize, f64)> {
    let mut candidates: Vec<(usize, f64)> = scores
        .values
        .iter()
        .enumerate()
        .filter(|(i, _)| !mask.get(*i).copied().unwrap_or(false))
        .map(|(i, s)| (i, *s))
        .collect();
    candidates.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    candidates.truncate(n);
    candidates
}
