//! Strategy x environment x seed matrix execution and run artifacts.
//!
//! Each run writes into `<out>/<strategy>/<env>/seed<k>/`:
//!
//! | file | columns |
//! |---|---|
//! | `scores.csv` | `step, score` |
//! | `batchstats.csv` | `step, mean_td, std_td, mean_pred, std_pred` |
//! | `priority_trace.csv` | `step, p_max_seen, median, max_raw, p_min, p_max, p_tilde` |
//! | `histograms.csv` | `step, bin_lo, bin_hi, count` |
//! | `cdf.csv` | `step, priority, cdf` |
//! | `summary.txt` | score-curve metrics, recomputable from `scores.csv` |
//! | `diagnostics.txt` | priority and TD-error diagnostics |
//! | `failure.txt` | only after a numerical abort |
//!
//! Every CSV starts with a `# <name> v1` comment line. Empty cells mean "not
//! available" (no predictor, or a window shorter than two batches). Floats are
//! written in shortest round-trip form, so artifacts are byte-reproducible.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rayon::prelude::*;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::agent::{Agent, AgentConfig, AgentError};
use crate::config::{EnvParams, RunConfig};
use crate::metrics::{self, normalized_max_forget, BatchStats, PriorityHistogram, ScoreCurve};
use crate::snapshot;
use crate::strategy::StrategyKind;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error("parse error in {path} at line {line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("stored summary in {path} differs from the recomputed one")]
    Mismatch {
        path: String,
        stored: String,
        recomputed: String,
    },
    #[error(transparent)]
    Replay(#[from] crate::replay::ReplayError),
    #[error("thread pool: {0}")]
    Pool(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |source| RunError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Per-run seed: the first 8 bytes (little-endian) of
/// `sha256("<master>|<strategy>|<env>|<index>")`.
pub fn derive_seed(master: u64, strategy: StrategyKind, env: &str, index: usize) -> u64 {
    let digest = Sha256::digest(format!("{master}|{}|{env}|{index}", strategy.name()).as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

/// Evaluation stream seed for the evaluation at step `t`.
fn eval_seed(run_seed: u64, t: u64) -> u64 {
    run_seed ^ t.wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub strategy: StrategyKind,
    pub env: EnvParams,
    pub seed_index: usize,
    pub agent: AgentConfig,
    pub eval_interval: u64,
    pub eval_episodes: usize,
    pub eval_epsilon: f64,
    pub trace_interval: u64,
    pub histogram_interval: u64,
    pub histogram_bins: usize,
    pub batch_window: usize,
    pub snapshot_interval: u64,
}

impl RunSpec {
    pub fn env_name(&self) -> &'static str {
        self.env.kind().name()
    }

    pub fn dir(&self, out: &Path) -> PathBuf {
        out.join(self.strategy.name())
            .join(self.env_name())
            .join(format!("seed{}", self.seed_index))
    }
}

/// Expands a config into runs, ordered env, strategy, seed.
pub fn plan(config: &RunConfig) -> Vec<RunSpec> {
    let mut specs = Vec::new();
    for env in &config.envs {
        for &strategy in &config.strategies {
            for seed_index in 0..config.seeds {
                let mut agent = env.agent.clone();
                agent.seed = derive_seed(
                    config.master_seed,
                    strategy,
                    env.params.kind().name(),
                    seed_index,
                );
                specs.push(RunSpec {
                    strategy,
                    env: env.params.clone(),
                    seed_index,
                    agent,
                    eval_interval: config.eval_interval,
                    eval_episodes: config.eval_episodes,
                    eval_epsilon: config.eval_epsilon,
                    trace_interval: config.trace_interval,
                    histogram_interval: config.histogram_interval,
                    histogram_bins: config.histogram_bins,
                    batch_window: config.batch_window,
                    snapshot_interval: config.snapshot_interval,
                });
            }
        }
    }
    specs
}

/// Metrics derived from the score curve alone.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSummary {
    pub points: usize,
    pub final_score: f64,
    pub max_score: f64,
    pub mean_score: f64,
    pub normalized_max_forget: f64,
    pub forget_degenerate: bool,
    pub peak_step: u64,
    pub solved_threshold: f64,
    pub first_solved_step: Option<u64>,
}

impl ScoreSummary {
    pub fn from_curve(curve: &ScoreCurve, solved_threshold: f64) -> Self {
        let s = curve.scores();
        let forget = normalized_max_forget(curve);
        Self {
            points: s.len(),
            final_score: *s.last().expect("curves are non-empty"),
            max_score: s.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            mean_score: metrics::mean(s),
            normalized_max_forget: forget.value,
            forget_degenerate: forget.degenerate,
            peak_step: curve.steps()[forget.peak],
            solved_threshold,
            first_solved_step: curve
                .steps()
                .iter()
                .zip(s)
                .find(|(_, &v)| v >= solved_threshold)
                .map(|(&t, _)| t),
        }
    }

    pub fn solved(&self) -> bool {
        self.first_solved_step.is_some()
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# summary v{SCHEMA_VERSION}");
        let _ = writeln!(out, "points = {}", self.points);
        let _ = writeln!(out, "final_score = {}", self.final_score);
        let _ = writeln!(out, "max_score = {}", self.max_score);
        let _ = writeln!(out, "mean_score = {}", self.mean_score);
        let _ = writeln!(
            out,
            "normalized_max_forget = {}",
            self.normalized_max_forget
        );
        let _ = writeln!(out, "forget_degenerate = {}", self.forget_degenerate);
        let _ = writeln!(out, "peak_step = {}", self.peak_step);
        let _ = writeln!(out, "solved_threshold = {}", self.solved_threshold);
        match self.first_solved_step {
            Some(t) => {
                let _ = writeln!(out, "first_solved_step = {t}");
            }
            None => {
                let _ = writeln!(out, "first_solved_step = none");
            }
        }
        out
    }
}

/// Diagnostics not recoverable from the score curve.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Diagnostics {
    pub steps: u64,
    pub writes: u64,
    pub bound_violations: u64,
    pub p_max_seen_decreases: u64,
    pub max_raw_decreases: u64,
    pub final_p_max_seen: f64,
    pub gap_initial: Option<f64>,
    pub gap_final: Option<f64>,
    pub window_batches: usize,
    pub std_td: Option<f64>,
    pub std_pred: Option<f64>,
    pub std_ratio: Option<f64>,
    pub bias: Option<f64>,
    pub lag1_td: Option<f64>,
    pub lag1_pred: Option<f64>,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_else(|| "none".into())
}

impl Diagnostics {
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# diagnostics v{SCHEMA_VERSION}");
        let _ = writeln!(out, "steps = {}", self.steps);
        let _ = writeln!(out, "writes = {}", self.writes);
        let _ = writeln!(out, "bound_violations = {}", self.bound_violations);
        let _ = writeln!(out, "p_max_seen_decreases = {}", self.p_max_seen_decreases);
        let _ = writeln!(out, "max_raw_decreases = {}", self.max_raw_decreases);
        let _ = writeln!(out, "final_p_max_seen = {}", self.final_p_max_seen);
        let _ = writeln!(out, "gap_initial = {}", opt(self.gap_initial));
        let _ = writeln!(out, "gap_final = {}", opt(self.gap_final));
        let _ = writeln!(out, "window_batches = {}", self.window_batches);
        let _ = writeln!(out, "std_batch_mean_td = {}", opt(self.std_td));
        let _ = writeln!(out, "std_batch_mean_pred = {}", opt(self.std_pred));
        let _ = writeln!(out, "std_ratio_pred_over_td = {}", opt(self.std_ratio));
        let _ = writeln!(out, "bias_mean_td_minus_pred = {}", opt(self.bias));
        let _ = writeln!(out, "lag1_autocorr_td = {}", opt(self.lag1_td));
        let _ = writeln!(out, "lag1_autocorr_pred = {}", opt(self.lag1_pred));
        out
    }
}

/// One priority trace row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TracePoint {
    pub step: u64,
    pub p_max_seen: f64,
    pub median: f64,
    pub max_raw: f64,
    pub p_min: f64,
    pub p_max: f64,
    pub p_tilde: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub spec: RunSpec,
    pub dir: PathBuf,
    pub curve: Option<ScoreCurve>,
    pub summary: Option<ScoreSummary>,
    pub diagnostics: Diagnostics,
    pub trace: Vec<TracePoint>,
    pub failure: Option<String>,
    /// Wall-clock time; not written to any artifact.
    pub elapsed: Duration,
}

struct Csv {
    path: PathBuf,
    out: BufWriter<File>,
}

impl Csv {
    fn create(path: PathBuf, name: &str, header: &str) -> Result<Self, RunError> {
        let file = File::create(&path).map_err(io_err(&path))?;
        let mut csv = Self {
            path,
            out: BufWriter::new(file),
        };
        csv.line(&format!("# {name} v{SCHEMA_VERSION}"))?;
        csv.line(header)?;
        Ok(csv)
    }

    fn line(&mut self, line: &str) -> Result<(), RunError> {
        writeln!(self.out, "{line}").map_err(io_err(&self.path))
    }

    fn finish(mut self) -> Result<(), RunError> {
        self.out.flush().map_err(io_err(&self.path))
    }
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

struct Sinks {
    scores: Csv,
    batch: Csv,
    trace: Csv,
    hist: Csv,
    cdf: Csv,
}

impl Sinks {
    fn create(dir: &Path) -> Result<Self, RunError> {
        Ok(Self {
            scores: Csv::create(dir.join("scores.csv"), "scores", "step,score")?,
            batch: Csv::create(
                dir.join("batchstats.csv"),
                "batchstats",
                "step,mean_td,std_td,mean_pred,std_pred",
            )?,
            trace: Csv::create(
                dir.join("priority_trace.csv"),
                "priority_trace",
                "step,p_max_seen,median,max_raw,p_min,p_max,p_tilde",
            )?,
            hist: Csv::create(
                dir.join("histograms.csv"),
                "histograms",
                "step,bin_lo,bin_hi,count",
            )?,
            cdf: Csv::create(dir.join("cdf.csv"), "cdf", "step,priority,cdf")?,
        })
    }

    fn finish(self) -> Result<(), RunError> {
        self.scores.finish()?;
        self.batch.finish()?;
        self.trace.finish()?;
        self.hist.finish()?;
        self.cdf.finish()
    }
}

fn write_file(path: &Path, text: &str) -> Result<(), RunError> {
    fs::write(path, text).map_err(io_err(path))
}

/// Executes one run and writes its artifacts. A numerical abort leaves the
/// partial CSVs plus `failure.txt` and is reported in the outcome, not as an
/// error; only I/O problems are errors.
pub fn execute(spec: &RunSpec, out: &Path) -> Result<RunOutcome, RunError> {
    let dir = spec.dir(out);
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let stale = dir.join("failure.txt");
    if stale.exists() {
        fs::remove_file(&stale).map_err(io_err(&stale))?;
    }
    let mut sinks = Sinks::create(&dir)?;
    let mut outcome = RunOutcome {
        spec: spec.clone(),
        dir: dir.clone(),
        curve: None,
        summary: None,
        diagnostics: Diagnostics::default(),
        trace: Vec::new(),
        failure: None,
        elapsed: Duration::ZERO,
    };
    let start = Instant::now();
    let result = drive(spec, &dir, &mut sinks, &mut outcome);
    outcome.elapsed = start.elapsed();
    sinks.finish()?;
    match result {
        Ok(()) => Ok(outcome),
        Err(RunError::Agent(e)) => {
            let text = format!(
                "# failure v{SCHEMA_VERSION}\nstrategy = {}\nenv = {}\nseed_index = {}\nseed = {}\nerror = {e}\n",
                spec.strategy,
                spec.env_name(),
                spec.seed_index,
                spec.agent.seed
            );
            write_file(&dir.join("failure.txt"), &text)?;
            outcome.failure = Some(e.to_string());
            Ok(outcome)
        }
        Err(e) => Err(e),
    }
}

fn drive(
    spec: &RunSpec,
    dir: &Path,
    sinks: &mut Sinks,
    outcome: &mut RunOutcome,
) -> Result<(), RunError> {
    let env = spec.env.build();
    let threshold = env.spec().solved_threshold;
    let mut agent = Agent::new(spec.agent.clone(), spec.strategy, env)?;
    let mut stats = BatchStats::new(spec.batch_window);
    let mut steps = Vec::new();
    let mut scores = Vec::new();
    let t_max = spec.agent.t_max;
    for t in 1..=t_max {
        let report = agent.train_step()?;
        if let Some(batch) = &report.batch {
            let row = stats
                .update(&batch.deltas, batch.delta_hats.as_deref())
                .expect("batches are non-empty");
            sinks.batch.line(&format!(
                "{t},{},{},{},{}",
                row.mean_td,
                cell(row.std_td),
                cell(row.mean_pred),
                cell(row.std_pred)
            ))?;
        }
        if t % spec.trace_interval == 0 && !agent.memory().is_empty() {
            let tree = agent.memory().tree();
            let clip = agent.strategy().clip_state();
            let point = TracePoint {
                step: t,
                p_max_seen: agent.strategy().p_max_seen(),
                median: tree.median_raw_priority()?,
                max_raw: tree.max_raw_priority()?,
                p_min: clip.p_min(),
                p_max: clip.p_max(),
                p_tilde: clip.p_tilde(),
            };
            sinks.trace.line(&format!(
                "{t},{},{},{},{},{},{}",
                point.p_max_seen,
                point.median,
                point.max_raw,
                point.p_min,
                point.p_max,
                point.p_tilde
            ))?;
            outcome.trace.push(point);
        }
        if t % spec.eval_interval == 0 {
            let score = agent.evaluate(
                spec.eval_episodes,
                spec.eval_epsilon,
                eval_seed(spec.agent.seed, t),
            )?;
            sinks.scores.line(&format!("{t},{score}"))?;
            steps.push(t);
            scores.push(score);
        }
        if (spec.histogram_interval > 0 && t % spec.histogram_interval == 0) || t == t_max {
            let raw = agent.memory().tree().raw_priorities();
            let floor = spec.agent.priority_epsilon;
            let hist = PriorityHistogram::from_priorities(raw, floor, spec.histogram_bins, t)
                .expect("memory holds at least one finite priority");
            for (i, c) in hist.counts.iter().enumerate() {
                sinks
                    .hist
                    .line(&format!("{t},{},{},{c}", hist.edges[i], hist.edges[i + 1]))?;
            }
            for (p, f) in metrics::empirical_cdf(raw).expect("memory is non-empty") {
                sinks.cdf.line(&format!("{t},{p},{f}"))?;
            }
        }
        if spec.snapshot_interval > 0 && t % spec.snapshot_interval == 0 {
            let path = dir.join("snapshot.bin");
            let file = File::create(&path).map_err(io_err(&path))?;
            let mut w = BufWriter::new(file);
            snapshot::save(&agent, &mut w).map_err(io_err(&path))?;
            w.flush().map_err(io_err(&path))?;
        }
        outcome.diagnostics =
            collect_diagnostics(&agent, &stats, &outcome.trace, spec.agent.warmup as u64);
    }
    if !scores.is_empty() {
        let curve = ScoreCurve::new(steps, scores).expect("steps increase and scores are finite");
        let summary = ScoreSummary::from_curve(&curve, threshold);
        write_file(&dir.join("summary.txt"), &summary.render())?;
        outcome.curve = Some(curve);
        outcome.summary = Some(summary);
    }
    write_file(&dir.join("diagnostics.txt"), &outcome.diagnostics.render())?;
    Ok(())
}

fn collect_diagnostics(
    agent: &Agent,
    stats: &BatchStats,
    trace: &[TracePoint],
    warmup: u64,
) -> Diagnostics {
    let c = agent.counters();
    let gaps: Vec<f64> = trace
        .iter()
        .filter(|p| p.step >= warmup)
        .map(|p| p.p_max_seen - p.median)
        .collect();
    let td = stats.td_means();
    let pred = stats.pred_means();
    let paired = !pred.is_empty() && pred.len() == td.len();
    let std_td = stats.std_td();
    let std_pred = stats.std_pred();
    Diagnostics {
        steps: agent.steps(),
        writes: c.writes,
        bound_violations: c.bound_violations,
        p_max_seen_decreases: c.p_max_seen_decreases,
        max_raw_decreases: c.max_raw_decreases,
        final_p_max_seen: agent.strategy().p_max_seen(),
        gap_initial: gaps.first().copied(),
        gap_final: gaps.last().copied(),
        window_batches: td.len(),
        std_td,
        std_pred,
        std_ratio: match (std_pred, std_td) {
            (Some(p), Some(t)) if t > 0.0 => Some(p / t),
            _ => None,
        },
        bias: paired.then(|| {
            metrics::mean(&td.iter().zip(&pred).map(|(a, b)| a - b).collect::<Vec<_>>()).abs()
        }),
        lag1_td: metrics::lag1_autocorrelation(&td),
        lag1_pred: metrics::lag1_autocorrelation(&pred),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatrixOutcome {
    pub runs: Vec<RunOutcome>,
    pub report: String,
}

impl MatrixOutcome {
    pub fn failures(&self) -> usize {
        self.runs.iter().filter(|r| r.failure.is_some()).count()
    }

    pub fn find(&self, strategy: StrategyKind, env: &str) -> Vec<&RunOutcome> {
        self.runs
            .iter()
            .filter(|r| r.spec.strategy == strategy && r.spec.env_name() == env)
            .collect()
    }
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

/// Per-environment aggregation across seeds.
pub fn matrix_report(runs: &[RunOutcome], strategies: &[StrategyKind], envs: &[&str]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# matrix_report v{SCHEMA_VERSION}");
    for env in envs {
        let _ = writeln!(out, "[{env}]");
        let forgets = |k: StrategyKind| -> Vec<(usize, f64)> {
            runs.iter()
                .filter(|r| r.spec.strategy == k && r.spec.env_name() == *env)
                .filter_map(|r| {
                    r.summary
                        .as_ref()
                        .map(|s| (r.spec.seed_index, s.normalized_max_forget))
                })
                .collect()
        };
        for &k in strategies {
            let f: Vec<f64> = forgets(k).into_iter().map(|(_, v)| v).collect();
            let failed = runs
                .iter()
                .filter(|r| {
                    r.spec.strategy == k && r.spec.env_name() == *env && r.failure.is_some()
                })
                .count();
            let _ = writeln!(out, "{k}.runs = {}", f.len());
            let _ = writeln!(out, "{k}.failed = {failed}");
            let _ = writeln!(
                out,
                "{k}.median_normalized_max_forget = {}",
                opt(median(&f))
            );
        }
        if strategies.contains(&StrategyKind::Per) && strategies.contains(&StrategyKind::Pper) {
            let per = forgets(StrategyKind::Per);
            let pper = forgets(StrategyKind::Pper);
            let scores: Vec<f64> = per
                .iter()
                .filter_map(|(i, a)| pper.iter().find(|(j, _)| j == i).map(|(_, b)| a - b))
                .collect();
            let _ = writeln!(out, "relative_stability_score.pairs = {}", scores.len());
            let _ = writeln!(
                out,
                "relative_stability_score.median = {}",
                opt(median(&scores))
            );
            let mean = (!scores.is_empty()).then(|| metrics::mean(&scores));
            let _ = writeln!(out, "relative_stability_score.mean = {}", opt(mean));
        }
    }
    out
}

/// Runs the whole matrix on a pool of `jobs` threads, then writes the report.
pub fn run_matrix(config: &RunConfig, out: &Path, jobs: usize) -> Result<MatrixOutcome, RunError> {
    fs::create_dir_all(out).map_err(io_err(out))?;
    let specs = plan(config);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| RunError::Pool(e.to_string()))?;
    let results: Vec<Result<RunOutcome, RunError>> =
        pool.install(|| specs.par_iter().map(|s| execute(s, out)).collect());
    let runs = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    let envs: Vec<&str> = config.envs.iter().map(|e| e.params.kind().name()).collect();
    let report = matrix_report(&runs, &config.strategies, &envs);
    write_file(&out.join("matrix_report.txt"), &report)?;
    Ok(MatrixOutcome { runs, report })
}

/// Parses a `scores.csv` file.
pub fn read_scores(path: &Path) -> Result<ScoreCurve, RunError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let parse_err = |line: usize, message: String| RunError::Parse {
        path: path.display().to_string(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, l)) if l == format!("# scores v{SCHEMA_VERSION}") => {}
        Some((_, l)) => return Err(parse_err(1, format!("expected version line, found {l:?}"))),
        None => return Err(parse_err(1, "empty file".into())),
    }
    let body: String = lines.map(|(_, l)| format!("{l}\n")).collect();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(body.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| parse_err(2, e.to_string()))?
        .clone();
    if headers.iter().collect::<Vec<_>>() != ["step", "score"] {
        return Err(parse_err(
            2,
            format!(
                "expected header step,score, found {:?}",
                headers.iter().collect::<Vec<_>>()
            ),
        ));
    }
    let mut steps = Vec::new();
    let mut scores = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 3;
        let record = record.map_err(|e| parse_err(line, e.to_string()))?;
        if record.len() != 2 {
            return Err(parse_err(
                line,
                format!("expected 2 fields, found {}", record.len()),
            ));
        }
        let step: u64 = record[0]
            .parse()
            .map_err(|e| parse_err(line, format!("step {:?}: {e}", &record[0])))?;
        let score: f64 = record[1]
            .parse()
            .map_err(|e| parse_err(line, format!("score {:?}: {e}", &record[1])))?;
        steps.push(step);
        scores.push(score);
    }
    if steps.is_empty() {
        return Err(parse_err(3, "no score rows".into()));
    }
    ScoreCurve::new(steps, scores).map_err(|e| parse_err(3, e.to_string()))
}

fn stored_threshold(summary: &str) -> Option<f64> {
    summary
        .lines()
        .find_map(|l| l.strip_prefix("solved_threshold = "))
        .and_then(|v| v.parse().ok())
}

/// Recomputes `summary.txt` from `scores.csv` in `dir` and checks that it
/// matches the stored one byte for byte. Without a stored summary the
/// solved threshold defaults to 1.
pub fn replay_metrics(dir: &Path) -> Result<ScoreSummary, RunError> {
    let curve = read_scores(&dir.join("scores.csv"))?;
    let summary_path = dir.join("summary.txt");
    let stored = fs::read_to_string(&summary_path).ok();
    let threshold = stored.as_deref().and_then(stored_threshold).unwrap_or(1.0);
    let summary = ScoreSummary::from_curve(&curve, threshold);
    if let Some(stored) = stored {
        let recomputed = summary.render();
        if stored != recomputed {
            return Err(RunError::Mismatch {
                path: summary_path.display().to_string(),
                stored,
                recomputed,
            });
        }
    }
    Ok(summary)
}
