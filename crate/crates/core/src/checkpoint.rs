//! Versioned little-endian binary container for a fitted model and its id maps.

use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::config::ModelConfig;
use crate::dataset::IdMap;
use crate::error::{Error, Result};
use crate::events::{DecayedInteractionStore, HistoryEntry, StoreParams};
use crate::factor::FactorState;
use crate::model::Recommender;
use crate::spectral::TrajectoryLog;
use crate::transition::TransitionStore;

pub const MAGIC: &[u8; 8] = b"SPECREC\0";
pub const FORMAT_VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Recommender,
    pub users: IdMap,
    pub items: IdMap,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let model = &self.model;
        let store = model.store();
        let factors = model.factors();
        let mut w = Writer::default();
        w.bytes(MAGIC);
        w.u8(FORMAT_VERSION);
        w.string(&model.config().to_text());
        w.usize(store.n_users());
        w.usize(store.n_items());

        w.f64(store.t_ref());
        w.f64(store.t_max_seen());
        w.u64(store.n_events());
        let triplets: Vec<_> = store.triplets().collect();
        w.triplets(&triplets);
        w.f64s(store.user_degree());
        w.f64s(store.item_degree());
        for u in 0..store.n_users() {
            let history = store.history(u);
            w.usize(history.len());
            for h in history {
                w.usize(h.item);
                w.f64(h.timestamp);
            }
        }

        w.usize(factors.rank());
        w.matrix(&factors.u);
        w.f64s(factors.s.as_slice());
        w.matrix(&factors.v);
        w.u64(factors.version);
        w.u64(factors.rank1_updates);

        let transitions = model.transitions();
        let triplets: Vec<_> = transitions.triplets().collect();
        w.triplets(&triplets);
        for u in 0..transitions.n_users() {
            match transitions.last_item(u) {
                Some((i, t)) => {
                    w.u8(1);
                    w.usize(i);
                    w.f64(t);
                }
                None => w.u8(0),
            }
        }

        match model.trajectory() {
            Some(log) => {
                w.u8(1);
                let users: Vec<_> = log.iter().collect();
                w.usize(users.len());
                for (u, points) in users {
                    w.usize(u);
                    w.usize(points.len());
                    for p in points {
                        w.f64(p.timestamp);
                        w.f64s(&p.long_term);
                        w.f64s(&p.short_term);
                    }
                }
            }
            None => w.u8(0),
        }

        for map in [&self.users, &self.items] {
            w.usize(map.len());
            for id in map.ids() {
                w.string(id);
            }
        }
        w.buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file".into()));
        }
        let version = r.u8()?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "format version {version} is not supported (expected {FORMAT_VERSION})"
            )));
        }
        let config = ModelConfig::from_text(&r.string()?)?;
        let n_users = r.usize()?;
        let n_items = r.usize()?;

        let t_ref = r.f64()?;
        let t_max_seen = r.f64()?;
        let n_events = r.u64()?;
        let weights = r.triplets()?;
        let user_degree = r.f64s()?;
        let item_degree = r.f64s()?;
        let mut histories = Vec::with_capacity(n_users.min(1 << 24));
        for _ in 0..n_users {
            let len = r.usize()?;
            let mut history = Vec::with_capacity(len.min(1 << 24));
            for _ in 0..len {
                history.push(HistoryEntry {
                    item: r.usize()?,
                    timestamp: r.f64()?,
                });
            }
            histories.push(history);
        }
        let store = DecayedInteractionStore::from_parts(
            n_users,
            n_items,
            StoreParams::from_config(&config, t_ref),
            weights,
            user_degree,
            item_degree,
            histories,
            t_max_seen,
            n_events,
        )?;

        let k = r.usize()?;
        let u = r.matrix(n_users, k)?;
        let s = DVector::from_vec(r.f64s()?);
        let v = r.matrix(n_items, k)?;
        if s.len() != k {
            return Err(Error::Checkpoint(format!("expected {k} singular values, found {}", s.len())));
        }
        let factors = FactorState {
            u,
            s,
            v,
            version: r.u64()?,
            rank1_updates: r.u64()?,
        };

        let transition_weights = r.triplets()?;
        let mut last_item = Vec::with_capacity(n_users.min(1 << 24));
        for _ in 0..n_users {
            last_item.push(match r.u8()? {
                0 => None,
                _ => Some((r.usize()?, r.f64()?)),
            });
        }
        let transitions = TransitionStore::from_parts(
            n_items,
            transition_weights,
            last_item,
            config.beta_i,
            config.negate_interval,
        )?;

        let trajectory = match r.u8()? {
            0 => None,
            _ => {
                let mut log = TrajectoryLog::new();
                for _ in 0..r.usize()? {
                    let user = r.usize()?;
                    for _ in 0..r.usize()? {
                        let t = r.f64()?;
                        let long_term = r.f64s()?;
                        let short_term = r.f64s()?;
                        log.record(user, t, &long_term, &short_term)?;
                    }
                }
                Some(log)
            }
        };

        let mut maps = Vec::with_capacity(2);
        for _ in 0..2 {
            let len = r.usize()?;
            let ids = (0..len).map(|_| r.string()).collect::<Result<Vec<_>>>()?;
            maps.push(IdMap::from_ids(ids)?);
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        let items = maps.pop().unwrap();
        let users = maps.pop().unwrap();
        Ok(Checkpoint {
            model: Recommender::from_parts(config, store, factors, transitions, trajectory)?,
            users,
            items,
        })
    }
}

#[derive(Default)]
struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }

    fn u8(&mut self, x: u8) {
        self.buf.push(x);
    }

    fn u64(&mut self, x: u64) {
        self.bytes(&x.to_le_bytes());
    }

    fn usize(&mut self, x: usize) {
        self.u64(x as u64);
    }

    fn f64(&mut self, x: f64) {
        self.bytes(&x.to_le_bytes());
    }

    fn f64s(&mut self, xs: &[f64]) {
        self.usize(xs.len());
        for x in xs {
            self.f64(*x);
        }
    }

    fn string(&mut self, s: &str) {
        self.usize(s.len());
        self.bytes(s.as_bytes());
    }

    fn triplets(&mut self, t: &[(usize, usize, f64)]) {
        self.usize(t.len());
        for &(i, j, w) in t {
            self.usize(i);
            self.usize(j);
            self.f64(w);
        }
    }

    /// Row-major.
    fn matrix(&mut self, m: &DMatrix<f64>) {
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                self.f64(m[(i, j)]);
            }
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint("truncated file".into()))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Checkpoint("length overflow".into()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self) -> Result<Vec<f64>> {
        let len = self.usize()?;
        if len > (self.buf.len() - self.pos) / 8 {
            return Err(Error::Checkpoint("truncated file".into()));
        }
        (0..len).map(|_| self.f64()).collect()
    }

    fn string(&mut self) -> Result<String> {
        let len = self.usize()?;
        String::from_utf8(self.take(len)?.to_vec()).map_err(|_| Error::Checkpoint("invalid utf-8".into()))
    }

    fn triplets(&mut self) -> Result<Vec<(usize, usize, f64)>> {
        let len = self.usize()?;
        if len > (self.buf.len() - self.pos) / 24 {
            return Err(Error::Checkpoint("truncated file".into()));
        }
        (0..len).map(|_| Ok((self.usize()?, self.usize()?, self.f64()?))).collect()
    }

    fn matrix(&mut self, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
        let n = rows
            .checked_mul(cols)
            .filter(|&n| n <= (self.buf.len() - self.pos) / 8)
            .ok_or_else(|| Error::Checkpoint("truncated file".into()))?;
        let data = (0..n).map(|_| self.f64()).collect::<Result<Vec<_>>>()?;
        Ok(DMatrix::from_row_slice(rows, cols, &data))
    }
}
