//! Graph-filter view of the factorization: Laplacians, ideal low-pass filters,
//! equivalence checks, per-frequency scoring and explanations.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::config::Similarity;
use crate::error::{Error, Result};
use crate::events::DecayedInteractionStore;
use crate::factor::FactorState;
use crate::linalg::{symmetric_eigen_ascending, thin_svd_sorted, SparseMatrix};
use crate::scoring::{EmbeddingView, ScoreVector};

pub const RESIDUAL_TOLERANCE: f64 = 1e-8;
pub const RHO_OMEGA_TOLERANCE: f64 = 1e-9;
pub const IDEMPOTENCE_TOLERANCE: f64 = 1e-8;
pub const SYMMETRY_TOLERANCE: f64 = 1e-10;
/// Eigen-gaps below this (relative to the top squared singular value) make
/// the rank-k subspace ill-defined.
pub const GAP_TOLERANCE: f64 = 1e-6;

/// `(I - R^T R, I - R R^T)`
pub fn laplacians(r: &SparseMatrix) -> (DMatrix<f64>, DMatrix<f64>) {
    let dense = r.to_dense();
    let l_i = DMatrix::identity(r.ncols(), r.ncols()) - dense.tr_mul(&dense);
    let l_u = DMatrix::identity(r.nrows(), r.nrows()) - &dense * dense.transpose();
    (l_i, l_u)
}

/// `G G^T` where `G` holds the eigenvectors of the `k` smallest eigenvalues.
pub fn ideal_lowpass_filter(l: &DMatrix<f64>, k: usize) -> Result<DMatrix<f64>> {
    let (_, g) = lowest_eigenvectors(l, k)?;
    Ok(&g * g.transpose())
}

fn lowest_eigenvectors(l: &DMatrix<f64>, k: usize) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = l.nrows();
    if k > n {
        return Err(Error::Rank { k, max: n });
    }
    if (l - l.transpose()).norm() > SYMMETRY_TOLERANCE * l.norm().max(1.0) {
        return Err(Error::Invalid("Laplacian is not symmetric".into()));
    }
    let (values, vectors) = symmetric_eigen_ascending(l)?;
    Ok((values, vectors.columns(0, k).into_owned()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckStatus {
    Pass,
    Fail,
    Inconclusive,
}

/// Residuals of the factorization against both filter forms and the filters
/// built from the Laplacians.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    pub status: CheckStatus,
    pub k: usize,
    /// `||U S V^T - R V V^T||_F / ||R||_F`
    pub right_filter_residual: f64,
    /// `||U S V^T - U U^T R||_F / ||R||_F`
    pub left_filter_residual: f64,
    /// `||G G^T - V V^T||_F` with `G` from the item Laplacian.
    pub item_projector_residual: f64,
    /// `||H H^T - U U^T||_F` with `H` from the user Laplacian.
    pub user_projector_residual: f64,
    /// `max_j |rho_j + omega_j - 1|` over the retained frequencies.
    pub rho_omega_residual: f64,
    /// `||F^2 - F||_F` for the item filter.
    pub idempotence_residual: f64,
    /// `||F - F^T||_F` for the item filter.
    pub symmetry_residual: f64,
    /// Relative gap between the k-th and (k+1)-th squared singular values.
    pub spectral_gap: f64,
}

impl EquivalenceReport {
    pub fn passed(&self) -> bool {
        self.status == CheckStatus::Pass
    }

    fn within_tolerance(&self) -> bool {
        self.right_filter_residual < RESIDUAL_TOLERANCE
            && self.left_filter_residual < RESIDUAL_TOLERANCE
            && self.item_projector_residual < RESIDUAL_TOLERANCE
            && self.user_projector_residual < RESIDUAL_TOLERANCE
            && self.rho_omega_residual <= RHO_OMEGA_TOLERANCE
            && self.idempotence_residual <= IDEMPOTENCE_TOLERANCE
            && self.symmetry_residual <= SYMMETRY_TOLERANCE
    }
}

/// Batch-factorizes `r` at rank `k` and checks it against the filter forms.
pub fn verify_svd_filter_equivalence(r: &SparseMatrix, k: usize) -> Result<EquivalenceReport> {
    let dense = r.to_dense();
    let max = dense.nrows().min(dense.ncols());
    if k == 0 || k > max {
        return Err(Error::Rank { k, max });
    }
    let (u, s, v) = thin_svd_sorted(&dense)?;
    check_factors(
        &dense,
        &u.columns(0, k).into_owned(),
        &s.rows(0, k).into_owned(),
        &v.columns(0, k).into_owned(),
        &s,
    )
}

/// Checks an existing (for example incrementally maintained) factor state
/// against the filter forms built from `r`.
pub fn verify_state_against_filters(state: &FactorState, r: &SparseMatrix) -> Result<EquivalenceReport> {
    let dense = r.to_dense();
    if state.n_users() != dense.nrows() || state.n_items() != dense.ncols() {
        return Err(Error::Shape {
            expected: dense.nrows() * dense.ncols(),
            got: state.n_users() * state.n_items(),
        });
    }
    let (_, spectrum, _) = thin_svd_sorted(&dense)?;
    check_factors(&dense, &state.u, &state.s, &state.v, &spectrum)
}

fn check_factors(
    r: &DMatrix<f64>,
    u: &DMatrix<f64>,
    s: &DVector<f64>,
    v: &DMatrix<f64>,
    spectrum: &DVector<f64>,
) -> Result<EquivalenceReport> {
    let k = s.len();
    let scale = r.norm();
    let rel = |x: f64| if scale > 0.0 { x / scale } else { x };

    let mut us = u.clone();
    for (j, sj) in s.iter().enumerate() {
        us.column_mut(j).scale_mut(*sj);
    }
    let reconstruction = us * v.transpose();
    let right = r * v * v.transpose();
    let left = u * u.transpose() * r;

    let sparse = SparseMatrix::from_dense(r);
    let (l_i, l_u) = laplacians(&sparse);
    let (omega, g) = lowest_eigenvectors(&l_i, k)?;
    let (_, h) = lowest_eigenvectors(&l_u, k)?;
    let f = &g * g.transpose();

    let rho_omega_residual = (0..k)
        .map(|j| (spectrum[j] * spectrum[j] + omega[j] - 1.0).abs())
        .fold(0.0, f64::max);

    let top = spectrum.get(0).map_or(0.0, |x| x * x).max(f64::MIN_POSITIVE);
    let below = spectrum.get(k).map_or(0.0, |x| x * x);
    let spectral_gap = (spectrum[k - 1] * spectrum[k - 1] - below) / top;
    let full_on_both_sides = k == r.nrows() && k == r.ncols();

    let mut report = EquivalenceReport {
        status: CheckStatus::Pass,
        k,
        right_filter_residual: rel((&reconstruction - right).norm()),
        left_filter_residual: rel((&reconstruction - left).norm()),
        item_projector_residual: (&f - v * v.transpose()).norm(),
        user_projector_residual: (&h * h.transpose() - u * u.transpose()).norm(),
        rho_omega_residual,
        idempotence_residual: (&f * &f - &f).norm(),
        symmetry_residual: (&f - f.transpose()).norm(),
        spectral_gap,
    };
    report.status = if report.within_tolerance() {
        CheckStatus::Pass
    } else if !full_on_both_sides && spectral_gap < GAP_TOLERANCE {
        CheckStatus::Inconclusive
    } else {
        CheckStatus::Fail
    };
    Ok(report)
}

/// Largest singular value of `r`.
pub fn spectral_norm(r: &SparseMatrix) -> Result<f64> {
    let (_, s, _) = thin_svd_sorted(&r.to_dense())?;
    Ok(s.get(0).copied().unwrap_or(0.0))
}

/// Per-frequency gains applied to the co-occurrence score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyWeights {
    c: Vec<f64>,
}

impl FrequencyWeights {
    pub fn ones(k: usize) -> Self {
        FrequencyWeights { c: vec![1.0; k] }
    }

    pub fn new(c: Vec<f64>) -> Result<Self> {
        if let Some(bad) = c.iter().find(|x| !(x.is_finite() && **x >= 0.0)) {
            return Err(Error::Invalid(format!("frequency weight {bad} must be finite and >= 0")));
        }
        Ok(FrequencyWeights { c })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.c
    }

    pub fn len(&self) -> usize {
        self.c.len()
    }

    pub fn is_empty(&self) -> bool {
        self.c.is_empty()
    }
}

impl FromStr for FrequencyWeights {
    type Err = Error;

    /// Comma-separated gains, e.g. `1,1,10,1`.
    fn from_str(s: &str) -> Result<Self> {
        let c = s
            .split(',')
            .map(|part| {
                part.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Invalid(format!("bad frequency weight '{part}'")))
            })
            .collect::<Result<Vec<_>>>()?;
        FrequencyWeights::new(c)
    }
}

/// `sum_j c_j S[j] U[u, j] V[., j]`
pub fn frequency_scores(state: &FactorState, u: usize, weights: &FrequencyWeights) -> Result<ScoreVector> {
    if u >= state.n_users() {
        return Err(Error::index("user", u, state.n_users()));
    }
    if weights.len() != state.rank() {
        return Err(Error::Shape {
            expected: state.rank(),
            got: weights.len(),
        });
    }
    let coefficients = DVector::from_fn(state.rank(), |j, _| weights.c[j] * state.s[j] * state.u[(u, j)]);
    Ok((&state.v * coefficients).into())
}

/// Items with the largest signed loading on frequency `j`, ties by index.
pub fn leading_items(state: &FactorState, j: usize, n: usize) -> Result<Vec<usize>> {
    if j >= state.rank() {
        return Err(Error::index("frequency", j, state.rank()));
    }
    let column = state.v.column(j);
    let mut items: Vec<usize> = (0..state.n_items()).collect();
    items.sort_by(|&a, &b| column[b].total_cmp(&column[a]).then(a.cmp(&b)));
    items.truncate(n);
    Ok(items)
}

/// Lines `frequency_index,item_id,score` listing the `n_items` leading items
/// of every frequency.
pub fn frequency_report(state: &FactorState, n_items: usize, label: impl Fn(usize) -> String) -> Result<String> {
    let mut out = String::new();
    for j in 0..state.rank() {
        for i in leading_items(state, j, n_items)? {
            writeln!(out, "{j},{},{}", label(i), state.v[(i, j)]).unwrap();
        }
    }
    Ok(out)
}

/// The `n` distinct history items of `u` most similar to `i` in interest space.
pub fn explain(
    view: &EmbeddingView,
    store: &DecayedInteractionStore,
    u: usize,
    i: usize,
    n: usize,
    similarity: Similarity,
) -> Result<Vec<(usize, f64)>> {
    if u >= store.n_users() {
        return Err(Error::index("user", u, store.n_users()));
    }
    if i >= view.n_items() {
        return Err(Error::index("item", i, view.n_items()));
    }
    let target = view.q.row(i);
    let distinct: BTreeSet<usize> = store.history(u).iter().map(|h| h.item).collect();
    let mut scored: Vec<(usize, f64)> = distinct
        .into_iter()
        .map(|h| {
            let row = view.q.row(h);
            let dot = target.dot(&row);
            let sim = match similarity {
                Similarity::Inner => dot,
                Similarity::Cosine => {
                    let norms = target.norm() * row.norm();
                    if norms > 0.0 {
                        dot / norms
                    } else {
                        0.0
                    }
                }
            };
            (h, sim)
        })
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.truncate(n);
    Ok(scored)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub timestamp: f64,
    pub long_term: Vec<f64>,
    pub short_term: Vec<f64>,
}

/// Per-user time series of long- and short-term interest vectors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrajectoryLog {
    entries: BTreeMap<usize, Vec<TrajectoryPoint>>,
}

impl TrajectoryLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, u: usize, t: f64, long_term: &[f64], short_term: &[f64]) -> Result<()> {
        let points = self.entries.entry(u).or_default();
        if let Some(last) = points.last() {
            if t < last.timestamp {
                return Err(Error::Ordering {
                    t,
                    last: last.timestamp,
                });
            }
        }
        points.push(TrajectoryPoint {
            timestamp: t,
            long_term: long_term.to_vec(),
            short_term: short_term.to_vec(),
        });
        Ok(())
    }

    /// Users with at least one snapshot, in ascending index order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, &[TrajectoryPoint])> {
        self.entries.iter().map(|(&u, points)| (u, points.as_slice()))
    }

    pub fn user(&self, u: usize) -> &[TrajectoryPoint] {
        self.entries.get(&u).map_or(&[], Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.entries.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// One line per snapshot: `user_id,timestamp,l_1..l_k,s_1..s_k`.
    pub fn export(&self, label: impl Fn(usize) -> String) -> String {
        let mut out = String::new();
        for (&u, points) in &self.entries {
            for p in points {
                write!(out, "{},{}", label(u), p.timestamp).unwrap();
                for x in p.long_term.iter().chain(&p.short_term) {
                    write!(out, ",{x}").unwrap();
                }
                out.push('\n');
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::TRefMode;
    use crate::events::{InteractionEvent, StoreParams};
    use crate::factor::batch_factorize;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_sparse(rng: &mut ChaCha8Rng, rows: usize, cols: usize, density: f64) -> SparseMatrix {
        let mut triplets = Vec::new();
        for r in 0..rows {
            for c in 0..cols {
                if rng.random::<f64>() < density {
                    triplets.push((r, c, rng.random_range(0.1..1.0)));
                }
            }
        }
        SparseMatrix::from_triplets(rows, cols, triplets)
    }

    fn normalized(dense: &DMatrix<f64>) -> SparseMatrix {
        let du: Vec<f64> = dense.row_iter().map(|r| r.sum()).collect();
        let di: Vec<f64> = dense.column_iter().map(|c| c.sum()).collect();
        let inv = |d: f64| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 };
        SparseMatrix::from_dense(&DMatrix::from_fn(dense.nrows(), dense.ncols(), |r, c| {
            dense[(r, c)] * inv(du[r]) * inv(di[c])
        }))
    }

    #[test]
    fn laplacian_edge_cases() {
        let zero = SparseMatrix::from_triplets(2, 3, Vec::new());
        let (l_i, l_u) = laplacians(&zero);
        assert_eq!(l_i, DMatrix::identity(3, 3));
        assert_eq!(l_u, DMatrix::identity(2, 2));
        let eye = SparseMatrix::from_dense(&DMatrix::identity(3, 3));
        assert_eq!(laplacians(&eye).0, DMatrix::zeros(3, 3));
    }

    #[test]
    fn normalized_laplacian_spectrum_in_unit_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let r = normalized(&random_sparse(&mut rng, 7, 5, 0.5).to_dense());
            let (l_i, _) = laplacians(&r);
            let (values, _) = symmetric_eigen_ascending(&l_i).unwrap();
            assert!(values.iter().all(|x| *x >= -1e-9 && *x <= 1.0 + 1e-9), "{values}");
        }
    }

    #[test]
    fn lowpass_filter_cases() {
        assert!((ideal_lowpass_filter(&DMatrix::identity(3, 3), 3).unwrap() - DMatrix::identity(3, 3)).norm() < 1e-12);
        let l = DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 0.1, 0.9]));
        let f = ideal_lowpass_filter(&l, 1).unwrap();
        let mut expected = DMatrix::zeros(3, 3);
        expected[(1, 1)] = 1.0;
        assert!((f - expected).norm() < 1e-12);
        let asym = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        assert!(ideal_lowpass_filter(&asym, 1).is_err());
    }

    #[test]
    fn lowpass_filter_matches_power_projector() {
        // Oracle: projector onto the top-k eigenspace of (I - L) obtained by
        // repeated squaring of a shifted matrix, independent of the eigensolver.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let r = normalized(&random_sparse(&mut rng, 8, 5, 0.6).to_dense());
        let (l_i, _) = laplacians(&r);
        let k = 2;
        let f = ideal_lowpass_filter(&l_i, k).unwrap();
        let a = DMatrix::identity(5, 5) - &l_i;
        let mut x = DMatrix::from_fn(5, k, |i, j| ((i * 7 + j * 3) % 5) as f64 + 0.5);
        for _ in 0..500 {
            x = &a * x;
            x = x.qr().q();
        }
        assert!((f - &x * x.transpose()).norm() < 1e-8);
    }

    #[test]
    fn equivalence_on_random_matrices() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for trial in 0..10 {
            let r = normalized(&random_sparse(&mut rng, 9, 6, 0.5).to_dense());
            let report = verify_svd_filter_equivalence(&r, 1 + trial % 5).unwrap();
            assert!(report.status != CheckStatus::Fail, "{report:?}");
        }
    }

    #[test]
    fn diagonal_matrix_is_axis_aligned() {
        let r = SparseMatrix::from_dense(&DMatrix::from_diagonal(&DVector::from_vec(vec![0.9, 0.5, 0.2])));
        let report = verify_svd_filter_equivalence(&r, 2).unwrap();
        assert_eq!(report.status, CheckStatus::Pass);
        assert!(report.item_projector_residual < 1e-14);
    }

    #[test]
    fn degenerate_gap_is_inconclusive() {
        let r = SparseMatrix::from_dense(&DMatrix::identity(3, 3));
        let report = verify_svd_filter_equivalence(&r, 1).unwrap();
        assert!(report.spectral_gap < GAP_TOLERANCE);
        assert_ne!(report.status, CheckStatus::Fail);
    }

    #[test]
    fn flipped_column_fails() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let r = normalized(&random_sparse(&mut rng, 8, 6, 0.6).to_dense());
        let mut state = batch_factorize(&r, 3).unwrap();
        assert!(verify_state_against_filters(&state, &r).unwrap().passed());
        state.v.column_mut(1).neg_mut();
        assert_eq!(verify_state_against_filters(&state, &r).unwrap().status, CheckStatus::Fail);
    }

    fn toy_state() -> (FactorState, DecayedInteractionStore) {
        let mut store = DecayedInteractionStore::new(
            4,
            5,
            StoreParams {
                beta_t: 0.0,
                t_ref_mode: TRefMode::DatasetMax,
                t_ref: 10.0,
                guard_eps: 1e-12,
                history_cap: 0,
            },
        );
        let events = [(0, 0), (0, 1), (1, 1), (1, 2), (2, 2), (2, 3), (3, 4), (0, 2), (3, 0), (1, 0)];
        for (n, (u, i)) in events.into_iter().enumerate() {
            store.ingest(&InteractionEvent::new(u, i, n as f64)).unwrap();
        }
        (batch_factorize(&store.normalized_matrix(), 3).unwrap(), store)
    }

    #[test]
    fn neutral_weights_match_cooccurrence() {
        let (state, _) = toy_state();
        let view = EmbeddingView::from_state(&state);
        for u in 0..4 {
            let a = frequency_scores(&state, u, &FrequencyWeights::ones(3)).unwrap();
            let b = view.cooccurrence_scores(u).unwrap();
            for (x, y) in a.values.iter().zip(&b.values) {
                assert!((x - y).abs() < 1e-10);
            }
        }
        assert!(frequency_scores(&state, 0, &FrequencyWeights::ones(2)).is_err());
    }

    #[test]
    fn one_hot_weights_select_a_term() {
        let (state, _) = toy_state();
        let scores = frequency_scores(&state, 1, &"0,1,0".parse().unwrap()).unwrap();
        for i in 0..5 {
            let expected = state.s[1] * state.u[(1, 1)] * state.v[(i, 1)];
            assert!((scores.values[i] - expected).abs() < 1e-14);
        }
    }

    #[test]
    fn uniform_scaling_preserves_ranking() {
        let (state, _) = toy_state();
        let order = |w: &FrequencyWeights| {
            let s = frequency_scores(&state, 0, w).unwrap().values;
            let mut idx: Vec<usize> = (0..s.len()).collect();
            idx.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(a.cmp(&b)));
            idx
        };
        assert_eq!(order(&FrequencyWeights::ones(3)), order(&FrequencyWeights::new(vec![4.0; 3]).unwrap()));
    }

    #[test]
    fn weights_parse_and_validate() {
        assert_eq!("1, 2.5,0".parse::<FrequencyWeights>().unwrap().as_slice(), &[1.0, 2.5, 0.0]);
        assert!("1,-1".parse::<FrequencyWeights>().is_err());
        assert!("1,x".parse::<FrequencyWeights>().is_err());
        assert!(FrequencyWeights::new(vec![f64::NAN]).is_err());
    }

    #[test]
    fn leading_items_by_signed_value() {
        let mut state = FactorState {
            u: DMatrix::identity(2, 1),
            s: DVector::from_element(1, 1.0),
            v: DMatrix::zeros(7, 1),
            version: 0,
            rank1_updates: 0,
        };
        state.v[(5, 0)] = 1.0;
        assert_eq!(leading_items(&state, 0, 1).unwrap(), vec![5]);
        assert_eq!(leading_items(&state, 0, 20).unwrap(), vec![5, 0, 1, 2, 3, 4, 6]);
        assert!(leading_items(&state, 1, 1).is_err());

        let (toy, _) = toy_state();
        for j in 0..3 {
            let mut brute: Vec<(usize, f64)> = (0..5).map(|i| (i, toy.v[(i, j)])).collect();
            brute.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
            let expected: Vec<usize> = brute.iter().take(3).map(|x| x.0).collect();
            assert_eq!(leading_items(&toy, j, 3).unwrap(), expected);
        }
    }

    #[test]
    fn explanations_match_brute_force() {
        let (state, store) = toy_state();
        let view = EmbeddingView::from_state(&state);
        for u in 0..4 {
            for i in 0..5 {
                let got = explain(&view, &store, u, i, 3, Similarity::Inner).unwrap();
                let mut items: Vec<usize> = store.history(u).iter().map(|h| h.item).collect();
                items.sort();
                items.dedup();
                let mut brute: Vec<(usize, f64)> = items
                    .iter()
                    .map(|&h| (h, (0..3).map(|j| view.q[(i, j)] * view.q[(h, j)]).sum()))
                    .collect();
                brute.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
                brute.truncate(3);
                assert_eq!(got.len(), brute.len());
                for (g, b) in got.iter().zip(&brute) {
                    assert_eq!(g.0, b.0);
                    assert!((g.1 - b.1).abs() < 1e-12);
                }
            }
        }
        let single = explain(&view, &store, 3, 1, 3, Similarity::Cosine).unwrap();
        assert_eq!(single.len(), 2);
        assert!(single.iter().all(|x| x.1.abs() <= 1.0 + 1e-12));
    }

    #[test]
    fn trajectory_order_and_export() {
        let mut log = TrajectoryLog::new();
        log.record(2, 1.0, &[0.5], &[0.25]).unwrap();
        log.record(2, 3.0, &[0.5], &[1.0]).unwrap();
        assert!(log.record(2, 2.0, &[0.0], &[0.0]).is_err());
        assert_eq!(log.user(2).len(), 2);
        assert_eq!(log.export(|u| format!("u{u}")), "u2,1,0.5,0.25\nu2,3,0.5,1\n");
    }
}
