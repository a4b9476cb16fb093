//! Chronological splits, ranking metrics, the predict-then-update stream and
//! the experiment drivers built on it.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::{ModelConfig, TRefMode};
use crate::error::{Error, Result};
use crate::events::InteractionEvent;
use crate::model::Recommender;
use crate::scoring::{fuse, ScoreVector};
use crate::transition::TransitionStore;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    /// Predict the next new item; previously consumed items are not candidates.
    FutureItem,
    /// Predict the next interaction, repeats included.
    NextInteraction,
}

impl Task {
    pub fn default_exclude_seen(self) -> bool {
        self == Task::FutureItem
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::FutureItem => "future_item",
            Task::NextInteraction => "next_interaction",
        })
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "future_item" | "future" => Ok(Task::FutureItem),
            "next_interaction" | "next" => Ok(Task::NextInteraction),
            other => Err(Error::Config(format!("unknown task '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalProtocol {
    pub task: Task,
    pub train_frac: f64,
    pub valid_frac: f64,
    pub test_frac: f64,
    /// Cutoff of the hit rate.
    pub k: usize,
    pub exclude_seen: bool,
}

impl EvalProtocol {
    pub fn new(task: Task) -> Self {
        EvalProtocol {
            task,
            train_frac: 0.8,
            valid_frac: 0.1,
            test_frac: 0.1,
            k: 10,
            exclude_seen: task.default_exclude_seen(),
        }
    }

    pub fn with_split(mut self, train: f64, valid: f64, test: f64) -> Self {
        self.train_frac = train;
        self.valid_frac = valid;
        self.test_frac = test;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let fracs = [self.train_frac, self.valid_frac, self.test_frac];
        if fracs.iter().any(|f| !(*f > 0.0)) || fracs.iter().sum::<f64>() > 1.0 + 1e-9 {
            return Err(Error::Config(format!(
                "split fractions must be positive and sum to at most 1, got {fracs:?}"
            )));
        }
        if self.k == 0 {
            return Err(Error::Config("hit-rate cutoff must be at least 1".into()));
        }
        Ok(())
    }
}

/// Contiguous `(train, valid, test)` windows by event count. Each window gets
/// `floor(frac * N)` events; when the fractions sum to 1 the remainder goes
/// to test.
pub fn chronological_split<'a>(
    events: &'a [InteractionEvent],
    protocol: &EvalProtocol,
) -> Result<(&'a [InteractionEvent], &'a [InteractionEvent], &'a [InteractionEvent])> {
    protocol.validate()?;
    if let Some(w) = events.windows(2).find(|w| w[1].timestamp < w[0].timestamp) {
        return Err(Error::Ordering {
            t: w[1].timestamp,
            last: w[0].timestamp,
        });
    }
    let n = events.len();
    let count = |f: f64| ((f * n as f64).floor() as usize).min(n);
    let n_train = count(protocol.train_frac);
    let n_valid = count(protocol.valid_frac).min(n - n_train);
    let total = protocol.train_frac + protocol.valid_frac + protocol.test_frac;
    let n_test = if (total - 1.0).abs() <= 1e-9 {
        n - n_train - n_valid
    } else {
        count(protocol.test_frac).min(n - n_train - n_valid)
    };
    Ok((
        &events[..n_train],
        &events[n_train..n_train + n_valid],
        &events[n_train + n_valid..n_train + n_valid + n_test],
    ))
}

/// `1 + #{higher} + #{equal with smaller index}` over the candidate set, which
/// drops seen items other than the truth when `exclude_seen` is set.
pub fn rank_of(scores: &ScoreVector, truth: usize, seen: &[bool], exclude_seen: bool) -> usize {
    let target = scores.values[truth];
    let mut rank = 1;
    for (i, &s) in scores.values.iter().enumerate() {
        if i == truth || (exclude_seen && seen.get(i).copied().unwrap_or(false)) {
            continue;
        }
        if s > target || (s == target && i < truth) {
            rank += 1;
        }
    }
    rank
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
struct Accumulator {
    reciprocal_sum: f64,
    hits: usize,
    n: usize,
}

impl Accumulator {
    fn push(&mut self, rank: usize, k: usize) {
        self.reciprocal_sum += 1.0 / rank as f64;
        self.hits += usize::from(rank <= k);
        self.n += 1;
    }

    fn report(&self, k: usize) -> MetricReport {
        let n = self.n.max(1) as f64;
        MetricReport {
            mrr: self.reciprocal_sum / n,
            hr_at_k: self.hits as f64 / n,
            k,
            n_events: self.n,
            ranks: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub mrr: f64,
    pub hr_at_k: f64,
    pub k: usize,
    pub n_events: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ranks: Option<Vec<usize>>,
}

impl MetricReport {
    pub fn from_ranks(ranks: &[usize], k: usize) -> Self {
        let mut acc = Accumulator::default();
        for &r in ranks {
            acc.push(r, k);
        }
        acc.report(k)
    }

    pub fn metric(&self, metric: Metric) -> f64 {
        match metric {
            Metric::Mrr => self.mrr,
            Metric::Hr => self.hr_at_k,
        }
    }
}

/// Anything that scores items for a user and learns from each event.
pub trait StreamModel {
    fn n_items(&self) -> usize;
    fn score(&self, u: usize) -> Result<ScoreVector>;
    fn seen_mask(&self, u: usize) -> Vec<bool>;
    fn update(&mut self, event: &InteractionEvent) -> Result<()>;
}

impl StreamModel for Recommender {
    fn n_items(&self) -> usize {
        Recommender::n_items(self)
    }

    fn score(&self, u: usize) -> Result<ScoreVector> {
        self.scores(u, None)
    }

    fn seen_mask(&self, u: usize) -> Vec<bool> {
        Recommender::seen_mask(self, u)
    }

    fn update(&mut self, event: &InteractionEvent) -> Result<()> {
        self.observe(event).map(|_| ())
    }
}

/// Scores each event before the model sees it, then applies it.
pub fn run_stream_eval<M: StreamModel>(
    model: &mut M,
    events: &[InteractionEvent],
    protocol: &EvalProtocol,
    keep_ranks: bool,
) -> Result<MetricReport> {
    let mut ranks = Vec::with_capacity(events.len());
    for event in events {
        let scores = model.score(event.user)?;
        let mask = if protocol.exclude_seen { model.seen_mask(event.user) } else { Vec::new() };
        ranks.push(rank_of(&scores, event.item, &mask, protocol.exclude_seen));
        model.update(event)?;
    }
    let mut report = MetricReport::from_ranks(&ranks, protocol.k);
    if keep_ranks {
        report.ranks = Some(ranks);
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Mrr,
    Hr,
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mrr" => Ok(Metric::Mrr),
            "hr" => Ok(Metric::Hr),
            other => Err(Error::Config(format!("unknown metric '{other}'"))),
        }
    }
}

/// Hyperparameter values to search. Every combination is evaluated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub k: Vec<usize>,
    pub beta_t: Vec<f64>,
    pub beta_i: Vec<f64>,
    pub lambda_s: Vec<f64>,
    pub lambda_t: Vec<f64>,
}

fn steps(n: usize, step: f64) -> Vec<f64> {
    (0..=n).map(|j| j as f64 * step).map(|x| (x * 1e9).round() / 1e9).collect()
}

impl GridSpec {
    /// Reduced grid suited to a single workstation.
    pub fn desk() -> Self {
        GridSpec {
            k: vec![64, 128],
            beta_t: vec![0.0, 10.0, 30.0],
            beta_i: vec![0.0, 10.0, 30.0],
            lambda_s: steps(5, 0.2),
            lambda_t: steps(5, 0.2),
        }
    }

    pub fn full() -> Self {
        GridSpec {
            k: vec![64, 128, 256, 512],
            beta_t: steps(5, 10.0),
            beta_i: steps(5, 10.0),
            lambda_s: steps(10, 0.1),
            lambda_t: steps(10, 0.1),
        }
    }

    pub fn single(config: &ModelConfig) -> Self {
        GridSpec {
            k: vec![config.k],
            beta_t: vec![config.beta_t],
            beta_i: vec![config.beta_i],
            lambda_s: vec![config.lambda_s],
            lambda_t: vec![config.lambda_t],
        }
    }

    pub fn len(&self) -> usize {
        self.k.len() * self.beta_t.len() * self.beta_i.len() * self.lambda_s.len() * self.lambda_t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Drops ranks that exceed `max`, keeping at least the largest feasible one.
    pub fn clamp_rank(&mut self, max: usize) {
        let feasible: Vec<usize> = self.k.iter().copied().filter(|&k| k <= max).collect();
        self.k = if feasible.is_empty() { vec![max] } else { feasible };
    }
}

/// One evaluated configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub config: ModelConfig,
    pub valid: MetricReport,
    pub test: MetricReport,
    /// Wall time of the shared stream that produced this point.
    pub wall_time_seconds: f64,
}

/// Event windows and dimensions of one experiment.
#[derive(Debug, Clone, Copy)]
pub struct Experiment<'a> {
    pub train: &'a [InteractionEvent],
    pub valid: &'a [InteractionEvent],
    pub test: &'a [InteractionEvent],
    pub n_users: usize,
    pub n_items: usize,
    /// Initial decay reference, normally the last timestamp of the data.
    pub t_ref: f64,
    pub protocol: EvalProtocol,
}

impl<'a> Experiment<'a> {
    pub fn from_split(
        events: &'a [InteractionEvent],
        n_users: usize,
        n_items: usize,
        protocol: EvalProtocol,
    ) -> Result<Self> {
        let (train, valid, test) = chronological_split(events, &protocol)?;
        let t_ref = test
            .last()
            .or(valid.last())
            .or(train.last())
            .map_or(0.0, |e| e.timestamp);
        Ok(Experiment {
            train,
            valid,
            test,
            n_users,
            n_items,
            t_ref,
            protocol,
        })
    }

    /// Fits `config` on train and streams validation then test through it.
    pub fn evaluate(&self, config: &ModelConfig) -> Result<(MetricReport, MetricReport)> {
        let (_, valid, test) = self.run(config)?;
        Ok((valid, test))
    }

    /// Like [`Experiment::evaluate`], also returning the model after the last
    /// test event.
    pub fn run(&self, config: &ModelConfig) -> Result<(Recommender, MetricReport, MetricReport)> {
        let mut model = Recommender::fit(config, self.n_users, self.n_items, self.t_ref, self.train)?;
        let valid = run_stream_eval(&mut model, self.valid, &self.protocol, false)?;
        let test = run_stream_eval(&mut model, self.test, &self.protocol, false)?;
        Ok((model, valid, test))
    }

    /// Evaluates every grid combination. Configurations that share `(k,
    /// beta_t)` share one factor stream, since the mixing weights and the
    /// transition coefficient do not influence the factor state; each
    /// `beta_i` keeps its own transition matrix. Points come back in
    /// lexicographic grid order.
    pub fn grid_search(&self, base: &ModelConfig, grid: &GridSpec, jobs: usize) -> Result<Vec<GridPoint>> {
        let groups: Vec<(usize, f64)> = grid
            .k
            .iter()
            .flat_map(|&k| grid.beta_t.iter().map(move |&b| (k, b)))
            .collect();
        let jobs = jobs.max(1).min(groups.len().max(1));
        let mut results: Vec<Option<Result<Vec<GridPoint>>>> = (0..groups.len()).map(|_| None).collect();
        std::thread::scope(|scope| {
            let chunks: Vec<Vec<usize>> = (0..jobs)
                .map(|j| (0..groups.len()).filter(|g| g % jobs == j).collect())
                .collect();
            let handles: Vec<_> = chunks
                .into_iter()
                .map(|chunk| {
                    let groups = &groups;
                    scope.spawn(move || {
                        chunk
                            .into_iter()
                            .map(|g| (g, self.stream_group(base, grid, groups[g].0, groups[g].1)))
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            for handle in handles {
                for (g, r) in handle.join().expect("grid worker panicked") {
                    results[g] = Some(r);
                }
            }
        });
        let mut points = Vec::with_capacity(grid.len());
        for r in results {
            points.extend(r.expect("every group evaluated")?);
        }
        Ok(points)
    }

    fn stream_group(&self, base: &ModelConfig, grid: &GridSpec, k: usize, beta_t: f64) -> Result<Vec<GridPoint>> {
        let start = Instant::now();
        let mut config = base.clone();
        config.k = k;
        config.beta_t = beta_t;
        config.beta_i = grid.beta_i.first().copied().unwrap_or(0.0);
        config.trajectory = false;
        let mut model = Recommender::fit(&config, self.n_users, self.n_items, self.t_ref, self.train)?;

        let mut transitions: Vec<TransitionStore> = grid
            .beta_i
            .iter()
            .map(|&b| TransitionStore::new(self.n_users, self.n_items, b, config.negate_interval))
            .collect();
        let mut t_ref = self.t_ref;
        for e in self.train {
            t_ref = reference_after(config.t_ref_mode, t_ref, e.timestamp);
            for store in &mut transitions {
                store.record_transition(e, t_ref)?;
            }
        }

        let n_combos = grid.beta_i.len() * grid.lambda_s.len() * grid.lambda_t.len();
        let mut valid = vec![Accumulator::default(); n_combos];
        let mut test = vec![Accumulator::default(); n_combos];
        let protocol = &self.protocol;
        for (n, event) in self.valid.iter().chain(self.test).enumerate() {
            let u = event.user;
            let channels = model.channels(u, None)?;
            let mask = if protocol.exclude_seen { model.seen_mask(u) } else { Vec::new() };
            let target = if n < self.valid.len() { &mut valid } else { &mut test };
            let mut c = 0;
            for store in &transitions {
                let pt = store.transition_scores(u);
                for &ls in &grid.lambda_s {
                    for &lt in &grid.lambda_t {
                        let fused = fuse(&channels.cooccurrence, &channels.sequential, &pt, ls, lt)?;
                        target[c].push(rank_of(&fused, event.item, &mask, protocol.exclude_seen), protocol.k);
                        c += 1;
                    }
                }
            }
            model.observe(event)?;
            let t_ref = model.store().t_ref();
            for store in &mut transitions {
                store.record_transition(event, t_ref)?;
            }
        }

        let elapsed = start.elapsed().as_secs_f64();
        let mut points = Vec::with_capacity(n_combos);
        let mut c = 0;
        for &beta_i in &grid.beta_i {
            for &ls in &grid.lambda_s {
                for &lt in &grid.lambda_t {
                    let mut point_config = config.clone();
                    point_config.beta_i = beta_i;
                    point_config.lambda_s = ls;
                    point_config.lambda_t = lt;
                    point_config.trajectory = base.trajectory;
                    points.push(GridPoint {
                        config: point_config,
                        valid: valid[c].report(protocol.k),
                        test: test[c].report(protocol.k),
                        wall_time_seconds: elapsed,
                    });
                    c += 1;
                }
            }
        }
        Ok(points)
    }

    /// Train fractions swept with validation and test windows of `window`
    /// each; returns `(train_frac, test report)` per fraction.
    pub fn robustness(
        events: &[InteractionEvent],
        n_users: usize,
        n_items: usize,
        protocol: EvalProtocol,
        config: &ModelConfig,
        train_fracs: &[f64],
        window: f64,
    ) -> Result<Vec<(f64, MetricReport)>> {
        train_fracs
            .iter()
            .map(|&f| {
                let p = protocol.with_split(f, window, window);
                let exp = Experiment::from_split(events, n_users, n_items, p)?;
                Ok((f, exp.evaluate(config)?.1))
            })
            .collect()
    }
}

fn reference_after(mode: TRefMode, current: f64, t: f64) -> f64 {
    match mode {
        TRefMode::DatasetMax => current.max(t),
        TRefMode::StreamMax => t,
    }
}

/// Index of the best point by validation `metric`; the earliest wins ties.
pub fn select_best(points: &[GridPoint], metric: Metric) -> Option<usize> {
    select_where(points, metric, |_| true)
}

pub fn select_where(points: &[GridPoint], metric: Metric, keep: impl Fn(&ModelConfig) -> bool) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (n, p) in points.iter().enumerate() {
        if !keep(&p.config) {
            continue;
        }
        let v = p.valid.metric(metric);
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((n, v));
        }
    }
    best.map(|(n, _)| n)
}

/// Channel-removal variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    /// Transition scores only.
    A1,
    /// Co-occurrence only.
    A2,
    /// Co-occurrence and transitions.
    A3,
    /// Co-occurrence and sequential attention.
    A4,
    #[serde(rename = "full")]
    Full,
}

impl Variant {
    pub const ALL: [Variant; 5] = [Variant::A1, Variant::A2, Variant::A3, Variant::A4, Variant::Full];

    /// Whether `config`'s mixing weights belong to this variant.
    pub fn admits(self, config: &ModelConfig) -> bool {
        match self {
            Variant::A1 => config.lambda_t == 1.0,
            Variant::A2 => config.lambda_s == 0.0 && config.lambda_t == 0.0,
            Variant::A3 => config.lambda_s == 0.0,
            Variant::A4 => config.lambda_t == 0.0,
            Variant::Full => true,
        }
    }

    /// Restricts a grid to this variant's mixing weights.
    pub fn restrict(self, grid: &GridSpec) -> GridSpec {
        let mut g = grid.clone();
        match self {
            Variant::A1 => {
                g.lambda_s = vec![0.0];
                g.lambda_t = vec![1.0];
            }
            Variant::A2 => {
                g.lambda_s = vec![0.0];
                g.lambda_t = vec![0.0];
            }
            Variant::A3 => g.lambda_s = vec![0.0],
            Variant::A4 => g.lambda_t = vec![0.0],
            Variant::Full => {}
        }
        g
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::A1 => "A1",
            Variant::A2 => "A2",
            Variant::A3 => "A3",
            Variant::A4 => "A4",
            Variant::Full => "full",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "a1" => Ok(Variant::A1),
            "a2" => Ok(Variant::A2),
            "a3" => Ok(Variant::A3),
            "a4" => Ok(Variant::A4),
            "full" => Ok(Variant::Full),
            other => Err(Error::Config(format!("unknown variant '{other}'"))),
        }
    }
}

/// Population standard deviation over the mean.
pub fn relative_std(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    if mean == 0.0 {
        return if var == 0.0 { 0.0 } else { f64::INFINITY };
    }
    var.sqrt() / mean.abs()
}

/// One JSON-lines output record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub command: String,
    pub task: Task,
    pub split: String,
    pub config: ModelConfig,
    pub mrr: f64,
    pub hr_at_k: f64,
    pub k: usize,
    pub n_events: usize,
    pub exclude_seen: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub variant: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_frac: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub selected: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_time_seconds: Option<f64>,
}

impl RunRecord {
    pub fn new(command: &str, protocol: &EvalProtocol, split: &str, config: &ModelConfig, report: &MetricReport) -> Self {
        RunRecord {
            command: command.to_string(),
            task: protocol.task,
            split: split.to_string(),
            config: config.clone(),
            mrr: report.mrr,
            hr_at_k: report.hr_at_k,
            k: report.k,
            n_events: report.n_events,
            exclude_seen: protocol.exclude_seen,
            variant: None,
            train_frac: None,
            selected: None,
            wall_time_seconds: None,
        }
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("records serialize") + "\n"
    }
}
