//! `spectrec` command-line driver.

mod manifest;

use std::fs;
use std::io::Write as _;
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;
use spectrec::eval::{relative_std, select_best, select_where, Metric, RunRecord};
use spectrec::spectral::frequency_report;
use spectrec::{
    run_suites, Checkpoint, Dataset, EvalProtocol, Experiment, Format, GridSpec, LoadOptions, ModelConfig,
    Recommender, Task, Variant, VerifyOptions,
};
use spectrec_service::{AppState, IdPolicy, ServiceOptions};

use manifest::{DatasetInfo, RunManifest};

#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn validation(message: impl Into<String>) -> Self {
        Failure {
            code: 3,
            message: message.into(),
        }
    }

    fn verification(message: impl Into<String>) -> Self {
        Failure {
            code: 4,
            message: message.into(),
        }
    }
}

impl From<spectrec::Error> for Failure {
    fn from(e: spectrec::Error) -> Self {
        let code = match e {
            spectrec::Error::Io(_) => 2,
            _ => 3,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure {
            code: 2,
            message: e.to_string(),
        }
    }
}

type CmdResult = Result<(), Failure>;

#[derive(Parser, Debug)]
#[command(name = "spectrec", version, about = "Streaming spectral recommender")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit a model on the leading part of an event file and write a checkpoint.
    Fit(FitArgs),
    /// Stream validation and test events through one config or a grid.
    Evaluate(EvaluateArgs),
    /// Compare channel-removal variants on the same grid.
    Ablate(AblateArgs),
    /// Sweep the training fraction with a fixed config.
    Robustness(RobustnessArgs),
    /// Run the randomized algebra suites.
    Verify(VerifyArgs),
    /// Serve a checkpoint over HTTP.
    Serve(ServeArgs),
    /// Inspect, compare or export checkpoints.
    #[command(subcommand)]
    Checkpoint(CheckpointCommand),
}

#[derive(Args, Debug, Clone)]
struct DataArgs {
    /// Event file.
    #[arg(long)]
    events: PathBuf,
    #[arg(long, default_value = "canonical")]
    format: Format,
    /// Drop items with fewer interactions than this.
    #[arg(long, default_value_t = 0)]
    min_item_count: usize,
    /// Keep only the first N events (0 keeps all).
    #[arg(long, default_value_t = 0)]
    max_events: usize,
    /// Keep only this leading fraction of the events.
    #[arg(long)]
    prefix: Option<f64>,
}

impl DataArgs {
    fn load(&self) -> Result<(Dataset, DatasetInfo), Failure> {
        let options = LoadOptions {
            min_item_count: self.min_item_count,
            max_events: self.max_events,
            prefix_frac: self.prefix,
        };
        let data = Dataset::load(&self.events, self.format, options).map_err(|e| {
            let mut f = Failure::from(e);
            f.message = format!("{}: {}", self.events.display(), f.message);
            f
        })?;
        let info = DatasetInfo {
            path: self.events.display().to_string(),
            format: self.format,
            min_item_count: self.min_item_count,
            max_events: self.max_events,
            prefix: self.prefix,
            n_events: data.events.len(),
            n_users: data.n_users(),
            n_items: data.n_items(),
        };
        Ok((data, info))
    }
}

#[derive(Args, Debug, Clone)]
struct ConfigArgs {
    /// Flat `key = value` config file.
    #[arg(long, env = "SPECTREC_CONFIG")]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set k=32`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<ModelConfig, Failure> {
        let mut config = match &self.config {
            Some(path) => ModelConfig::from_text(&fs::read_to_string(path).map_err(|e| Failure {
                code: 2,
                message: format!("{}: {e}", path.display()),
            })?)?,
            None => ModelConfig::default(),
        };
        for o in &self.overrides {
            config.apply_override(o)?;
        }
        config.validate()?;
        Ok(config)
    }
}

#[derive(Args, Debug, Clone)]
struct ProtocolArgs {
    #[arg(long, default_value = "future_item")]
    task: Task,
    /// Train, validation and test fractions.
    #[arg(long, default_value = "0.8,0.1,0.1")]
    split: String,
    /// Hit-rate cutoff.
    #[arg(long, default_value_t = 10)]
    hr_k: usize,
    /// Override the task's default candidate rule.
    #[arg(long)]
    exclude_seen: Option<bool>,
}

impl ProtocolArgs {
    fn protocol(&self) -> Result<EvalProtocol, Failure> {
        let fracs: Vec<f64> = self
            .split
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| Failure::validation(format!("bad --split '{}'", self.split)))?;
        let [train, valid, test] = fracs[..] else {
            return Err(Failure::validation("--split needs three fractions"));
        };
        let mut p = EvalProtocol::new(self.task).with_split(train, valid, test);
        p.k = self.hr_k;
        if let Some(x) = self.exclude_seen {
            p.exclude_seen = x;
        }
        p.validate()?;
        Ok(p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum GridChoice {
    Desk,
    Full,
}

impl GridChoice {
    fn spec(self) -> GridSpec {
        match self {
            GridChoice::Desk => GridSpec::desk(),
            GridChoice::Full => GridSpec::full(),
        }
    }

    fn name(self) -> &'static str {
        match self {
            GridChoice::Desk => "desk",
            GridChoice::Full => "full",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SelectBy {
    Mrr,
    Hr,
}

impl From<SelectBy> for Metric {
    fn from(s: SelectBy) -> Metric {
        match s {
            SelectBy::Mrr => Metric::Mrr,
            SelectBy::Hr => Metric::Hr,
        }
    }
}

#[derive(Args, Debug)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    config: ConfigArgs,
    /// Fit on this leading fraction of the events; the rest can be replayed later.
    #[arg(long, default_value_t = 1.0)]
    train_frac: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    config: ConfigArgs,
    #[command(flatten)]
    protocol: ProtocolArgs,
    /// Search a grid instead of evaluating the single resolved config.
    #[arg(long)]
    grid: Option<GridChoice>,
    /// Validation metric used to pick the best grid point.
    #[arg(long, default_value = "mrr")]
    select: SelectBy,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long)]
    out_jsonl: PathBuf,
    /// Write the model state after the last test event (single config only).
    #[arg(long)]
    save_checkpoint: Option<PathBuf>,
    /// Record wall time in the output; makes runs differ byte-wise.
    #[arg(long)]
    timing: bool,
}

#[derive(Args, Debug)]
struct AblateArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    config: ConfigArgs,
    #[command(flatten)]
    protocol: ProtocolArgs,
    /// A1, A2, A3, A4, full, or all.
    #[arg(long, default_value = "all")]
    variant: String,
    #[arg(long, default_value = "desk")]
    grid: GridChoice,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long)]
    out_jsonl: PathBuf,
    #[arg(long)]
    timing: bool,
}

#[derive(Args, Debug)]
struct RobustnessArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, default_value = "future_item")]
    task: Task,
    #[arg(long, default_value = "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8")]
    fracs: String,
    /// Validation and test window size as a fraction of the events.
    #[arg(long, default_value_t = 0.1)]
    window: f64,
    #[arg(long, default_value_t = 10)]
    hr_k: usize,
    #[arg(long)]
    out_jsonl: PathBuf,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    /// Users per random instance; items are about four fifths of that.
    #[arg(long, default_value_t = 12)]
    size: usize,
    #[arg(long, default_value_t = 20)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Flip one right singular vector before checking; the run must fail.
    #[arg(long)]
    inject_fault: bool,
    /// Also write the report as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ServeArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: IpAddr,
    /// Let posted events claim spare rows for unknown ids.
    #[arg(long)]
    lenient: bool,
    /// Write the live state here on ctrl-c or SIGTERM.
    #[arg(long)]
    save_on_exit: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum CheckpointCommand {
    /// Print a JSON summary.
    Inspect { path: PathBuf },
    /// Exit 0 when two checkpoints are byte-identical, 4 otherwise.
    Diff { a: PathBuf, b: PathBuf },
    /// Leading items of every frequency as CSV.
    Frequencies {
        path: PathBuf,
        #[arg(long, default_value_t = 3)]
        n_items: usize,
    },
    /// Logged interest vectors as CSV.
    Trajectory { path: PathBuf },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 3 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::Robustness(a) => cmd_robustness(a),
        Command::Verify(a) => cmd_verify(a),
        Command::Serve(a) => cmd_serve(a),
        Command::Checkpoint(c) => cmd_checkpoint(c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn write_jsonl(path: &Path, records: &[RunRecord]) -> CmdResult {
    let mut out = fs::File::create(path).map_err(|e| Failure {
        code: 2,
        message: format!("{}: {e}", path.display()),
    })?;
    for r in records {
        out.write_all(r.to_json_line().as_bytes())?;
    }
    Ok(())
}

fn dims(data: &Dataset, config: &ModelConfig) -> (usize, usize) {
    (data.n_users() + config.spare_users, data.n_items() + config.spare_items)
}

fn cmd_fit(a: FitArgs) -> CmdResult {
    let (data, info) = a.data.load()?;
    let config = a.config.resolve()?;
    if !(a.train_frac > 0.0 && a.train_frac <= 1.0) {
        return Err(Failure::validation(format!("--train-frac {} outside (0, 1]", a.train_frac)));
    }
    let n_train = (a.train_frac * data.events.len() as f64).floor() as usize;
    let (n_users, n_items) = dims(&data, &config);
    let model = Recommender::fit(&config, n_users, n_items, data.t_max(), &data.events[..n_train])?;
    let checkpoint = Checkpoint {
        model,
        users: data.users,
        items: data.items,
    };
    checkpoint.save(&a.out)?;
    let mut m = RunManifest::new("fit", &config, Some(info), &[&a.out]);
    m.set("train_frac", json!(a.train_frac));
    m.set("n_train_events", json!(n_train));
    m.write_next_to(&a.out)?;
    println!("wrote {} ({n_train} training events)", a.out.display());
    Ok(())
}

fn clamped_grid(choice: GridChoice, base: &ModelConfig, data: &Dataset) -> GridSpec {
    let mut grid = choice.spec();
    let (n_users, n_items) = dims(data, base);
    grid.clamp_rank(n_users.min(n_items));
    grid
}

fn cmd_evaluate(a: EvaluateArgs) -> CmdResult {
    let (data, info) = a.data.load()?;
    let config = a.config.resolve()?;
    let protocol = a.protocol.protocol()?;
    let (n_users, n_items) = dims(&data, &config);
    let exp = Experiment::from_split(&data.events, n_users, n_items, protocol)?;
    let mut outputs: Vec<&Path> = vec![&a.out_jsonl];
    let mut manifest_extra = Vec::new();
    let records = match a.grid {
        None => {
            let started = std::time::Instant::now();
            let (model, _, test) = exp.run(&config)?;
            let mut r = RunRecord::new("evaluate", &protocol, "test", &config, &test);
            if a.timing {
                r.wall_time_seconds = Some(started.elapsed().as_secs_f64());
            }
            if let Some(path) = &a.save_checkpoint {
                Checkpoint {
                    model,
                    users: data.users.clone(),
                    items: data.items.clone(),
                }
                .save(path)?;
                outputs.push(path);
            }
            println!("test mrr {:.6} hr@{} {:.6} over {} events", test.mrr, test.k, test.hr_at_k, test.n_events);
            vec![r]
        }
        Some(choice) => {
            if a.save_checkpoint.is_some() {
                return Err(Failure::validation("--save-checkpoint needs a single config, not --grid"));
            }
            let grid = clamped_grid(choice, &config, &data);
            let points = exp.grid_search(&config, &grid, a.jobs)?;
            let best = select_best(&points, a.select.into())
                .ok_or_else(|| Failure::validation("empty grid"))?;
            let mut records: Vec<RunRecord> = points
                .iter()
                .map(|p| {
                    let mut r = RunRecord::new("evaluate", &protocol, "valid", &p.config, &p.valid);
                    if a.timing {
                        r.wall_time_seconds = Some(p.wall_time_seconds);
                    }
                    r
                })
                .collect();
            let p = &points[best];
            let mut r = RunRecord::new("evaluate", &protocol, "test", &p.config, &p.test);
            r.selected = Some(true);
            records.push(r);
            manifest_extra.push(("grid", json!(choice.name())));
            manifest_extra.push(("grid_points", json!(grid.len())));
            manifest_extra.push(("select", json!(format!("{:?}", a.select).to_lowercase())));
            println!(
                "best of {} points: valid {} test mrr {:.6} hr@{} {:.6}",
                points.len(),
                p.valid.metric(a.select.into()),
                p.test.mrr,
                p.test.k,
                p.test.hr_at_k
            );
            records
        }
    };
    write_jsonl(&a.out_jsonl, &records)?;
    let mut m = RunManifest::new("evaluate", &config, Some(info), &outputs);
    m.set("protocol", json!(protocol));
    for (k, v) in manifest_extra {
        m.set(k, v);
    }
    m.write_next_to(&a.out_jsonl)?;
    Ok(())
}

fn parse_variants(text: &str) -> Result<Vec<Variant>, Failure> {
    if text.eq_ignore_ascii_case("all") {
        return Ok(Variant::ALL.to_vec());
    }
    text.split(',')
        .map(|v| v.trim().parse::<Variant>().map_err(Failure::from))
        .collect()
}

/// Mixing weights a variant pins, as recorded in the manifest.
fn lambda_overrides(v: Variant) -> serde_json::Value {
    match v {
        Variant::A1 => json!({ "lambda_s": 0.0, "lambda_t": 1.0 }),
        Variant::A2 => json!({ "lambda_s": 0.0, "lambda_t": 0.0 }),
        Variant::A3 => json!({ "lambda_s": 0.0 }),
        Variant::A4 => json!({ "lambda_t": 0.0 }),
        Variant::Full => json!({}),
    }
}

fn cmd_ablate(a: AblateArgs) -> CmdResult {
    let (data, info) = a.data.load()?;
    let config = a.config.resolve()?;
    let protocol = a.protocol.protocol()?;
    let variants = parse_variants(&a.variant)?;
    let (n_users, n_items) = dims(&data, &config);
    let exp = Experiment::from_split(&data.events, n_users, n_items, protocol)?;
    let base_grid = clamped_grid(a.grid, &config, &data);
    // One search over the union of the requested variants' grids.
    let grid = if variants.contains(&Variant::Full) {
        base_grid.clone()
    } else {
        union_grid(&variants.iter().map(|v| v.restrict(&base_grid)).collect::<Vec<_>>())
    };
    let points = exp.grid_search(&config, &grid, a.jobs)?;
    let mut records = Vec::new();
    let mut overrides = serde_json::Map::new();
    for v in &variants {
        let restricted = v.restrict(&base_grid);
        let keep = |c: &ModelConfig| {
            v.admits(c) && restricted.lambda_s.contains(&c.lambda_s) && restricted.lambda_t.contains(&c.lambda_t)
        };
        let best = select_where(&points, Metric::Hr, keep)
            .ok_or_else(|| Failure::validation(format!("no grid point admitted by {v}")))?;
        let p = &points[best];
        for (split, report) in [("valid", &p.valid), ("test", &p.test)] {
            let mut r = RunRecord::new("ablate", &protocol, split, &p.config, report);
            r.variant = Some(v.to_string());
            r.selected = Some(true);
            if a.timing {
                r.wall_time_seconds = Some(p.wall_time_seconds);
            }
            records.push(r);
        }
        overrides.insert(v.to_string(), lambda_overrides(*v));
        println!("{v}: valid hr@{} {:.6} mrr {:.6}", p.valid.k, p.valid.hr_at_k, p.valid.mrr);
    }
    write_jsonl(&a.out_jsonl, &records)?;
    let mut m = RunManifest::new("ablate", &config, Some(info), &[&a.out_jsonl]);
    m.set("protocol", json!(protocol));
    m.set("grid", json!(a.grid.name()));
    m.set("select", json!("hr"));
    m.set("lambda_overrides", serde_json::Value::Object(overrides));
    m.write_next_to(&a.out_jsonl)?;
    Ok(())
}

fn union_grid(grids: &[GridSpec]) -> GridSpec {
    fn merge(lists: impl Iterator<Item = Vec<f64>>) -> Vec<f64> {
        let mut all: Vec<f64> = lists.flatten().collect();
        all.sort_by(f64::total_cmp);
        all.dedup();
        all
    }
    let first = &grids[0];
    GridSpec {
        k: first.k.clone(),
        beta_t: first.beta_t.clone(),
        beta_i: first.beta_i.clone(),
        lambda_s: merge(grids.iter().map(|g| g.lambda_s.clone())),
        lambda_t: merge(grids.iter().map(|g| g.lambda_t.clone())),
    }
}

fn cmd_robustness(a: RobustnessArgs) -> CmdResult {
    let (data, info) = a.data.load()?;
    let config = a.config.resolve()?;
    let fracs: Vec<f64> = a
        .fracs
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| Failure::validation(format!("bad --fracs '{}'", a.fracs)))?;
    let mut protocol = EvalProtocol::new(a.task);
    protocol.k = a.hr_k;
    let (n_users, n_items) = dims(&data, &config);
    let sweep = Experiment::robustness(&data.events, n_users, n_items, protocol, &config, &fracs, a.window)?;
    let records: Vec<RunRecord> = sweep
        .iter()
        .map(|(f, report)| {
            let p = protocol.with_split(*f, a.window, a.window);
            let mut r = RunRecord::new("robustness", &p, "test", &config, report);
            r.train_frac = Some(*f);
            r
        })
        .collect();
    let hrs: Vec<f64> = sweep.iter().map(|(_, r)| r.hr_at_k).collect();
    let rel = relative_std(&hrs);
    write_jsonl(&a.out_jsonl, &records)?;
    let mut m = RunManifest::new("robustness", &config, Some(info), &[&a.out_jsonl]);
    m.set("train_fracs", json!(fracs));
    m.set("window", json!(a.window));
    m.set("hr_relative_std", json!(rel));
    m.write_next_to(&a.out_jsonl)?;
    for (f, r) in &sweep {
        println!("train {f:.2}: hr@{} {:.6} mrr {:.6}", r.k, r.hr_at_k, r.mrr);
    }
    println!("relative std of hr@{}: {:.4}", protocol.k, rel);
    Ok(())
}

fn cmd_verify(a: VerifyArgs) -> CmdResult {
    let options = VerifyOptions {
        size: a.size,
        trials: a.trials,
        seed: a.seed,
        inject_fault: a.inject_fault,
    };
    let report = run_suites(&options)?;
    for s in &report.suites {
        println!(
            "{:<24} {} trials={} failures={} inconclusive={} max_residual={:.3e} tolerance={:.0e}",
            s.name,
            if s.passed() { "PASS" } else { "FAIL" },
            s.trials,
            s.failures,
            s.inconclusive,
            s.max_residual,
            s.tolerance
        );
    }
    if let Some(path) = &a.out {
        fs::write(path, serde_json::to_string_pretty(&report).expect("report serializes") + "\n")?;
    }
    if report.passed() {
        Ok(())
    } else {
        Err(Failure::verification("verification failed"))
    }
}

fn cmd_serve(a: ServeArgs) -> CmdResult {
    let checkpoint = Checkpoint::load(&a.checkpoint)?;
    let options = ServiceOptions {
        ids: if a.lenient { IdPolicy::Lenient } else { IdPolicy::Strict },
        save_path: a.save_on_exit,
    };
    let state = AppState::new(checkpoint, options);
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(spectrec_service::serve(state, SocketAddr::new(a.host, a.port)))?;
    Ok(())
}

fn cmd_checkpoint(c: CheckpointCommand) -> CmdResult {
    match c {
        CheckpointCommand::Inspect { path } => {
            let ck = Checkpoint::load(&path)?;
            let m = &ck.model;
            let summary = json!({
                "version": m.version(),
                "config": m.config(),
                "n_users": m.n_users(),
                "n_items": m.n_items(),
                "known_users": ck.users.len(),
                "known_items": ck.items.len(),
                "n_events": m.store().n_events(),
                "nnz": m.store().nnz(),
                "t_ref": m.store().t_ref(),
                "singular_values": m.factors().s.as_slice(),
                "orthonormality_error": m.factors().orthonormality_error(),
                "transitions": m.transitions().nnz(),
            });
            println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
            Ok(())
        }
        CheckpointCommand::Diff { a, b } => {
            let (x, y) = (fs::read(&a)?, fs::read(&b)?);
            if x == y {
                println!("identical ({} bytes)", x.len());
                Ok(())
            } else {
                let at = x.iter().zip(&y).position(|(p, q)| p != q).unwrap_or(x.len().min(y.len()));
                Err(Failure::verification(format!(
                    "checkpoints differ at byte {at} ({} vs {} bytes)",
                    x.len(),
                    y.len()
                )))
            }
        }
        CheckpointCommand::Frequencies { path, n_items } => {
            let ck = Checkpoint::load(&path)?;
            print!("{}", frequency_report(ck.model.factors(), n_items, |i| ck.items.label(i))?);
            Ok(())
        }
        CheckpointCommand::Trajectory { path } => {
            let ck = Checkpoint::load(&path)?;
            match ck.model.trajectory() {
                Some(log) => print!("{}", log.export(|u| ck.users.label(u))),
                None => return Err(Failure::validation("checkpoint was fitted without trajectory logging")),
            }
            Ok(())
        }
    }
}
