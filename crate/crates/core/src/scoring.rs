//! Embeddings derived from the factor state and the three per-user score channels.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::DecayedInteractionStore;
use crate::factor::FactorState;

/// One score per item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreVector {
    pub values: Vec<f64>,
}

impl ScoreVector {
    pub fn zeros(len: usize) -> Self {
        ScoreVector {
            values: vec![0.0; len],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }
}

impl From<Vec<f64>> for ScoreVector {
    fn from(values: Vec<f64>) -> Self {
        ScoreVector { values }
    }
}

impl From<DVector<f64>> for ScoreVector {
    fn from(v: DVector<f64>) -> Self {
        ScoreVector {
            values: v.as_slice().to_vec(),
        }
    }
}

/// `P = U diag(s)^(1/2)` and `Q = V diag(s)^(1/2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingView {
    pub p: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub version: u64,
}

/// Long-term (row of `P`) and short-term (attention over history) interests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterestVectors {
    pub long_term: Vec<f64>,
    pub short_term: Vec<f64>,
}

impl EmbeddingView {
    pub fn from_state(state: &FactorState) -> Self {
        let mut p = state.u.clone();
        let mut q = state.v.clone();
        for (j, s) in state.s.iter().enumerate() {
            let root = s.max(0.0).sqrt();
            p.column_mut(j).scale_mut(root);
            q.column_mut(j).scale_mut(root);
        }
        EmbeddingView {
            p,
            q,
            version: state.version,
        }
    }

    pub fn rank(&self) -> usize {
        self.p.ncols()
    }

    pub fn n_users(&self) -> usize {
        self.p.nrows()
    }

    pub fn n_items(&self) -> usize {
        self.q.nrows()
    }

    fn check_user(&self, u: usize) -> Result<()> {
        if u >= self.n_users() {
            return Err(Error::Index {
                kind: "user",
                index: u,
                size: self.n_users(),
            });
        }
        Ok(())
    }

    pub fn long_term_vector(&self, u: usize) -> Result<DVector<f64>> {
        self.check_user(u)?;
        Ok(self.p.row(u).transpose())
    }

    /// `l_u Q^T`
    pub fn cooccurrence_scores(&self, u: usize) -> Result<ScoreVector> {
        let l = self.long_term_vector(u)?;
        Ok((&self.q * l).into())
    }

    /// Softmax attention weights over the user's decayed history rows, in
    /// history order. Empty for an empty history.
    pub fn attention(&self, store: &DecayedInteractionStore, u: usize) -> Result<(Vec<f64>, DMatrix<f64>)> {
        let l = self.long_term_vector(u)?;
        let history = store.history(u);
        let k = self.rank();
        let mut rows = DMatrix::zeros(history.len(), k);
        for (r, entry) in history.iter().enumerate() {
            let w = store.history_weight(entry.timestamp)?;
            for j in 0..k {
                rows[(r, j)] = w * self.q[(entry.item, j)];
            }
        }
        if history.is_empty() {
            return Ok((Vec::new(), rows));
        }
        let scale = (k as f64).sqrt();
        let logits: Vec<f64> = (0..history.len())
            .map(|r| rows.row(r).transpose().dot(&l) / scale)
            .collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|x| (x - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        Ok((exps.into_iter().map(|e| e / total).collect(), rows))
    }

    /// `softmax(l_u Q_u^T / sqrt(k)) Q_u` where `Q_u` stacks the decayed
    /// embeddings of the user's history; zero for an empty history.
    pub fn short_term_vector(&self, store: &DecayedInteractionStore, u: usize) -> Result<DVector<f64>> {
        let (weights, rows) = self.attention(store, u)?;
        let mut s = DVector::zeros(self.rank());
        for (r, a) in weights.iter().enumerate() {
            s += rows.row(r).transpose() * *a;
        }
        Ok(s)
    }

    /// `s_u Q^T`
    pub fn sequential_scores(&self, short_term: &DVector<f64>) -> Result<ScoreVector> {
        if short_term.len() != self.rank() {
            return Err(Error::Shape {
                expected: self.rank(),
                got: short_term.len(),
            });
        }
        Ok((&self.q * short_term).into())
    }

    pub fn interests(&self, store: &DecayedInteractionStore, u: usize) -> Result<InterestVectors> {
        Ok(InterestVectors {
            long_term: self.long_term_vector(u)?.as_slice().to_vec(),
            short_term: self.short_term_vector(store, u)?.as_slice().to_vec(),
        })
    }
}

/// `(1 - lambda_t) ((1 - lambda_s) pc + lambda_s ps) + lambda_t pt`
pub fn fuse(
    pc: &ScoreVector,
    ps: &ScoreVector,
    pt: &ScoreVector,
    lambda_s: f64,
    lambda_t: f64,
) -> Result<ScoreVector> {
    for other in [ps, pt] {
        if other.len() != pc.len() {
            return Err(Error::Shape {
                expected: pc.len(),
                got: other.len(),
            });
        }
    }
    let values = pc
        .values
        .iter()
        .zip(&ps.values)
        .zip(&pt.values)
        .map(|((c, s), t)| (1.0 - lambda_t) * ((1.0 - lambda_s) * c + lambda_s * s) + lambda_t * t)
        .collect();
    Ok(ScoreVector { values })
}
