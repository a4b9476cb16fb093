//! Rank-k truncated SVD of the normalized interaction matrix, kept current
//! one event at a time with rank-1 updates.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::events::{normalized_row_factor, DecayedInteractionStore, InteractionEvent};
use crate::linalg::{
    complete_orthonormal, orient_columns, orthonormal_basis, orthonormality_error,
    symmetric_eigen_ascending, thin_svd_sorted, SparseMatrix,
};

/// Rank-1 updates between orthonormality checks.
pub const ORTHO_CHECK_INTERVAL: u64 = 1_000;
/// Drift in `||U^T U - I||_F` that triggers re-orthogonalization.
pub const ORTHO_TOLERANCE: f64 = 1e-6;

const DENSE_MAX_ENTRIES: usize = 4_000_000;
const DENSE_MAX_SIDE: usize = 2_000;
const GRAM_MAX_SIDE: usize = 4_096;
const OVERSAMPLE: usize = 10;
const POWER_ITERS: usize = 16;

/// `R ~ U diag(s) V^T` with orthonormal columns and nonincreasing `s`.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorState {
    pub u: DMatrix<f64>,
    pub s: DVector<f64>,
    pub v: DMatrix<f64>,
    /// Number of events applied since construction.
    pub version: u64,
    /// Number of rank-1 updates applied, drives the orthonormality check.
    pub rank1_updates: u64,
}

impl FactorState {
    pub fn rank(&self) -> usize {
        self.s.len()
    }

    pub fn n_users(&self) -> usize {
        self.u.nrows()
    }

    pub fn n_items(&self) -> usize {
        self.v.nrows()
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        let mut us = self.u.clone();
        for (j, s) in self.s.iter().enumerate() {
            us.column_mut(j).scale_mut(*s);
        }
        us * self.v.transpose()
    }

    pub fn orthonormality_error(&self) -> f64 {
        orthonormality_error(&self.u).max(orthonormality_error(&self.v))
    }

    /// Replaces the state by the rank-k truncation of `U diag(s) V^T + a b^T`.
    pub fn rank1_update(&mut self, a: &DVector<f64>, b: &DVector<f64>, guard_eps: f64) -> Result<()> {
        if a.len() != self.n_users() {
            return Err(Error::Shape {
                expected: self.n_users(),
                got: a.len(),
            });
        }
        if b.len() != self.n_items() {
            return Err(Error::Shape {
                expected: self.n_items(),
                got: b.len(),
            });
        }
        if a.iter().all(|x| *x == 0.0) || b.iter().all(|x| *x == 0.0) {
            return Ok(());
        }
        let k = self.rank();
        let (m, p) = split_component(&self.u, a);
        let (n, q) = split_component(&self.v, b);
        let p_norm = p.norm();
        let q_norm = q.norm();
        // A component inside the current subspace contributes no new direction.
        let extend_u = p_norm > guard_eps;
        let extend_v = q_norm > guard_eps;

        let rows = k + usize::from(extend_u);
        let cols = k + usize::from(extend_v);
        let mut core = DMatrix::zeros(rows, cols);
        for j in 0..k {
            core[(j, j)] = self.s[j];
        }
        let left = DVector::from_fn(rows, |r, _| if r < k { m[r] } else { p_norm });
        let right = DVector::from_fn(cols, |c, _| if c < k { n[c] } else { q_norm });
        core.ger(1.0, &left, &right, 1.0);

        let (uk, sk, vk) = thin_svd_sorted(&core)?;
        let mut new_u = &self.u * uk.view((0, 0), (k, k));
        if extend_u {
            new_u.ger(1.0 / p_norm, &p, &uk.row(k).columns(0, k).transpose(), 1.0);
        }
        let mut new_v = &self.v * vk.view((0, 0), (k, k));
        if extend_v {
            new_v.ger(1.0 / q_norm, &q, &vk.row(k).columns(0, k).transpose(), 1.0);
        }
        orient_columns(&mut new_u, &mut new_v);
        self.u = new_u;
        self.v = new_v;
        self.s = sk.rows(0, k).into_owned();
        self.rank1_updates += 1;
        if self.rank1_updates % ORTHO_CHECK_INTERVAL == 0 && self.orthonormality_error() > ORTHO_TOLERANCE {
            self.reorthogonalize()?;
        }
        Ok(())
    }

    /// Restores orthonormal factors via thin QR of `U` and `V` and a fresh SVD
    /// of the small core `R_u diag(s) R_v^T`.
    pub fn reorthogonalize(&mut self) -> Result<()> {
        let (qu, ru) = orthonormal_basis(&self.u);
        let (qv, rv) = orthonormal_basis(&self.v);
        let mut core = ru;
        for (j, s) in self.s.iter().enumerate() {
            core.column_mut(j).scale_mut(*s);
        }
        let core = core * rv.transpose();
        let (uc, sc, vc) = thin_svd_sorted(&core)?;
        let mut u = qu * uc;
        let mut v = qv * vc;
        orient_columns(&mut u, &mut v);
        self.u = u;
        self.v = v;
        self.s = sc;
        Ok(())
    }
}

/// Splits `x` into coordinates in the column space of `basis` and the
/// orthogonal remainder, with one re-projection pass.
fn split_component(basis: &DMatrix<f64>, x: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
    let mut coords = basis.tr_mul(x);
    let mut rest = x - basis * &coords;
    let again = basis.tr_mul(&rest);
    rest -= basis * &again;
    coords += again;
    (coords, rest)
}

/// Top-k singular triplets of `r`, oriented by the sign convention.
pub fn batch_factorize(r: &SparseMatrix, k: usize) -> Result<FactorState> {
    let (rows, cols) = (r.nrows(), r.ncols());
    let max = rows.min(cols);
    if k == 0 || k > max {
        return Err(Error::Rank { k, max });
    }
    let (mut u, s, mut v) = if rows * cols <= DENSE_MAX_ENTRIES && max <= DENSE_MAX_SIDE {
        let (u, s, v) = thin_svd_sorted(&r.to_dense())?;
        (
            u.columns(0, k).into_owned(),
            s.rows(0, k).into_owned(),
            v.columns(0, k).into_owned(),
        )
    } else if max <= GRAM_MAX_SIDE {
        gram_factorize(r, k)?
    } else {
        randomized_factorize(r, k)?
    };
    orient_columns(&mut u, &mut v);
    Ok(FactorState {
        u,
        s,
        v,
        version: 0,
        rank1_updates: 0,
    })
}

type Triplets = (DMatrix<f64>, DVector<f64>, DMatrix<f64>);

/// Projects `r` onto the column space of `r * right_basis` and takes the SVD
/// of the small projected matrix.
fn rayleigh_ritz(r: &SparseMatrix, right_basis: &DMatrix<f64>, k: usize) -> Result<Triplets> {
    let y = r.mul_dense(right_basis);
    let (q, _) = orthonormal_basis(&y);
    let b = r.tr_mul_dense(&q).transpose();
    let (ub, s, vb) = thin_svd_sorted(&b)?;
    let mut u = (q * ub).columns(0, k).into_owned();
    let s = s.rows(0, k).into_owned();
    let mut v = vb.columns(0, k).into_owned();
    // Columns of a rank-deficient matrix may come back degenerate.
    let first_bad = (0..k)
        .find(|&j| (u.column(j).norm() - 1.0).abs() > 1e-8 || (v.column(j).norm() - 1.0).abs() > 1e-8);
    if let Some(j) = first_bad {
        complete_orthonormal(&mut u, j);
        complete_orthonormal(&mut v, j);
    }
    Ok((u, s, v))
}

fn gram_factorize(r: &SparseMatrix, k: usize) -> Result<Triplets> {
    if r.ncols() <= r.nrows() {
        let (_, vecs) = symmetric_eigen_ascending(&r.gram_cols())?;
        let n = vecs.ncols();
        let basis = DMatrix::from_fn(vecs.nrows(), k, |i, j| vecs[(i, n - 1 - j)]);
        rayleigh_ritz(r, &basis, k)
    } else {
        let rt = r.transpose();
        let (u, s, v) = gram_factorize(&rt, k)?;
        Ok((v, s, u))
    }
}

fn randomized_factorize(r: &SparseMatrix, k: usize) -> Result<Triplets> {
    let width = (k + OVERSAMPLE).min(r.nrows().min(r.ncols()));
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let omega = DMatrix::from_fn(r.ncols(), width, |_, _| rng.random_range(-1.0..1.0));
    let (mut basis, _) = orthonormal_basis(&omega);
    for _ in 0..POWER_ITERS {
        let (left, _) = orthonormal_basis(&r.mul_dense(&basis));
        basis = orthonormal_basis(&r.tr_mul_dense(&left)).0;
    }
    rayleigh_ritz(r, &basis, k)
}

/// The change of the normalized matrix caused by one event, as
/// `e_u user_delta^T + item_delta e_i^T + cross e_u e_i^T`.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaDecomposition {
    /// Change along the user's row (length = number of items).
    pub user_delta: DVector<f64>,
    /// Change along the item's column (length = number of users).
    pub item_delta: DVector<f64>,
    /// Correction at `(u, i)` so the entry is counted once.
    pub cross: f64,
    /// Decayed weight the event adds to the raw matrix.
    pub weight: f64,
}

impl DeltaDecomposition {
    pub fn to_dense(&self, event: &InteractionEvent) -> DMatrix<f64> {
        let (nu, ni) = (self.item_delta.len(), self.user_delta.len());
        let mut out = DMatrix::zeros(nu, ni);
        for j in 0..ni {
            out[(event.user, j)] += self.user_delta[j];
        }
        for v in 0..nu {
            out[(v, event.item)] += self.item_delta[v];
        }
        out[(event.user, event.item)] += self.cross;
        out
    }
}

/// Splits `R_after - R_before` for `event` into three rank-1 pieces, reading
/// only the pre-event store.
pub fn delta_decompose(store: &DecayedInteractionStore, event: &InteractionEvent) -> Result<DeltaDecomposition> {
    store.check_event(event)?;
    let w = store.prospective_weight(event.timestamp)?;
    let (u, i) = (event.user, event.item);
    let eps = store.guard_eps();

    let du = store.user_degree()[u];
    let di = store.item_degree()[i];
    let (du_new, di_new) = if w > 0.0 { (du + w, di + w) } else { (du, di) };
    let hu = normalized_row_factor(du, eps);
    let hi = normalized_row_factor(di, eps);
    let hu_new = normalized_row_factor(du_new, eps);
    let hi_new = normalized_row_factor(di_new, eps);

    let mut user_delta = DVector::zeros(store.n_items());
    let mut item_delta = DVector::zeros(store.n_users());
    let user_step = hu_new - hu;
    let item_step = hi_new - hi;
    if user_step != 0.0 {
        for (j, r) in store.user_row(u) {
            user_delta[j] = user_step * r * store.item_factor(j);
        }
    }
    if item_step != 0.0 {
        for (v, r) in store.item_column(i) {
            item_delta[v] = item_step * r * store.user_factor(v);
        }
    }
    let r_ui = store.weight(u, i);
    let r_ui_new = if w > 0.0 { r_ui + w } else { r_ui };
    let gamma_ui = hu_new * r_ui_new * hi_new - hu * r_ui * hi;
    let cross = gamma_ui - user_delta[i] - item_delta[u];
    Ok(DeltaDecomposition {
        user_delta,
        item_delta,
        cross,
        weight: w,
    })
}

fn unit(len: usize, at: usize) -> DVector<f64> {
    let mut e = DVector::zeros(len);
    e[at] = 1.0;
    e
}

/// Ingests `event` into `store` and brings `state` up to date with three
/// rank-1 updates. Returns the decayed weight of the event.
pub fn apply_event(
    state: &mut FactorState,
    store: &mut DecayedInteractionStore,
    event: &InteractionEvent,
    rebuild_interval: u64,
) -> Result<f64> {
    if state.n_users() != store.n_users() || state.n_items() != store.n_items() {
        return Err(Error::Shape {
            expected: store.n_users() * store.n_items(),
            got: state.n_users() * state.n_items(),
        });
    }
    let delta = delta_decompose(store, event)?;
    let w = store.ingest(event)?;
    let eps = store.guard_eps();
    if w > 0.0 {
        let e_u = unit(store.n_users(), event.user);
        let e_i = unit(store.n_items(), event.item);
        state.rank1_update(&e_u, &delta.user_delta, eps)?;
        state.rank1_update(&delta.item_delta, &e_i, eps)?;
        state.rank1_update(&e_u, &(e_i * delta.cross), eps)?;
    }
    state.version += 1;
    if rebuild_interval > 0 && state.version % rebuild_interval == 0 {
        let version = state.version;
        let updates = state.rank1_updates;
        *state = batch_factorize(&store.normalized_matrix(), state.rank())?;
        state.version = version;
        state.rank1_updates = updates;
    }
    Ok(w)
}
