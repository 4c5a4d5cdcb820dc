//! Sweeps over `N`, decay-slope fits and CSV/JSON output.
//!
//! A sweep point builds the model, takes its exact law and cumulants,
//! matches a compound target, measures the total-variation distance and
//! evaluates every bound that applies. Failures at one point become an
//! inapplicable row rather than aborting the sweep.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{bound_11runs, bound_k1k2, bound_kruns_t5, bound_theorem_main, bound_wang_xia, BoundReport, XiMode};
use crate::dist_core::{factorial_cumulants, tv_distance, CumulantTriple, LatticeMeasure, Target, TargetKind};
use crate::error::{Error, Result};
use crate::matching::{match_as, match_cumulants, MatchResult};
use crate::runs_models::{closed_cumulants, exact_law, RunsKind, RunsModel, MAX_WINDOW};

pub const CSV_HEADER: &str =
    "N,k1,k2,p,gamma1,gamma2,gamma3,target,n,p_match,lambda,delta,r,p_bar,theta,tv,bound,bound_wx,ratio,applicable";

/// Tail tolerance for target pmfs built during sweeps.
const TARGET_TAIL_TOL: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetChoice {
    #[default]
    Auto,
    #[serde(alias = "M1")]
    M1,
    #[serde(alias = "M2")]
    M2,
}

impl std::str::FromStr for TargetChoice {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(TargetChoice::Auto),
            "m1" | "M1" => Ok(TargetChoice::M1),
            "m2" | "M2" => Ok(TargetChoice::M2),
            _ => Err(Error::Config(format!("unknown target '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

impl std::str::FromStr for OutputFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            _ => Err(Error::Config(format!("unknown format '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub kind: RunsKind,
    #[serde(default)]
    pub k1: Option<usize>,
    #[serde(default)]
    pub k2: Option<usize>,
    /// Run length for `k`-runs.
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default)]
    pub p: Option<f64>,
    /// One success probability per line; fixes the trial count.
    #[serde(default)]
    pub probs_file: Option<PathBuf>,
}

impl ModelSpec {
    /// `(k1, k2)` of the pattern.
    pub fn pattern(&self) -> Result<(usize, usize)> {
        match self.kind {
            RunsKind::OneOne => Ok((1, 1)),
            RunsKind::K1k2 => match (self.k1, self.k2) {
                (Some(a), Some(b)) => Ok((a, b)),
                _ => Err(Error::Config("k1k2 models need k1 and k2".into())),
            },
            RunsKind::Kruns => self
                .k
                .or(self.k2)
                .map(|k| (0, k))
                .ok_or_else(|| Error::Config("kruns models need k".into())),
        }
    }

    pub fn build(&self, big_n: usize) -> Result<RunsModel> {
        let (k1, k2) = self.pattern()?;
        match (&self.probs_file, self.p) {
            (Some(_), _) => {
                let model = self.from_file()?;
                if model.big_n() != big_n {
                    return Err(Error::Config(format!(
                        "probs file fixes N = {}, sweep asks for N = {big_n}",
                        model.big_n()
                    )));
                }
                Ok(model)
            }
            (None, Some(p)) => RunsModel::identical(self.kind, big_n, k1, k2, p),
            (None, None) => Err(Error::Config("model needs p or probs_file".into())),
        }
    }
}

impl ModelSpec {
    /// The model described by `probs_file`, whose length fixes `N`.
    pub fn from_file(&self) -> Result<RunsModel> {
        let (k1, k2) = self.pattern()?;
        let path = self.probs_file.as_ref().ok_or_else(|| Error::Config("no probs_file given".into()))?;
        let probs = read_probs_file(path)?;
        match self.kind {
            RunsKind::OneOne => RunsModel::one_one(probs),
            RunsKind::K1k2 => RunsModel::k1k2(k1, k2, probs),
            RunsKind::Kruns => RunsModel::kruns(k2, probs),
        }
    }
}

pub fn read_probs_file(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(|l| l.parse::<f64>().map_err(|e| Error::Config(format!("{}: bad probability '{l}': {e}", path.display()))))
        .collect()
}

fn io_error(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Io { path: path.display().to_string(), msg: e.to_string() }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default)]
    pub format: OutputFormat,
    #[serde(default)]
    pub path: Option<PathBuf>,
}

fn default_mode() -> XiMode {
    XiMode::Exact
}
fn default_samples() -> usize {
    1_000_000
}
fn default_max_exact() -> usize {
    200_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSpec,
    #[serde(default)]
    pub target: TargetChoice,
    #[serde(default = "default_mode")]
    pub mode: XiMode,
    pub sweep: Vec<usize>,
    #[serde(default)]
    pub seed: u64,
    /// Sample size of the Monte Carlo fallback.
    #[serde(default = "default_samples")]
    pub monte_carlo_samples: usize,
    /// Above this many trials the exact law is replaced by simulation.
    #[serde(default = "default_max_exact")]
    pub max_exact_trials: usize,
    #[serde(default)]
    pub output: OutputSpec,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sweep.is_empty() {
            return Err(Error::Config("sweep must list at least one N".into()));
        }
        if self.monte_carlo_samples == 0 {
            return Err(Error::Config("monte_carlo_samples must be positive".into()));
        }
        self.model.pattern()?;
        if self.model.p.is_none() && self.model.probs_file.is_none() {
            return Err(Error::Config("model needs p or probs_file".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    #[serde(rename = "N")]
    pub big_n: usize,
    pub k1: usize,
    pub k2: usize,
    /// The common success probability (the mean one for heterogeneous models).
    pub p: f64,
    pub gamma1: Option<f64>,
    pub gamma2: Option<f64>,
    pub gamma3: Option<f64>,
    pub target: Option<TargetKind>,
    pub n: Option<u64>,
    pub p_match: Option<f64>,
    pub lambda: Option<f64>,
    pub delta: Option<f64>,
    pub r: Option<f64>,
    pub p_bar: Option<f64>,
    pub theta: Option<f64>,
    pub tv: Option<f64>,
    pub tv_is_estimate: bool,
    pub bound: Option<f64>,
    pub bound_source: Option<String>,
    pub bound_wx: Option<f64>,
    pub ratio: Option<f64>,
    pub applicable: bool,
    pub notes: Vec<String>,
}

impl SweepRecord {
    fn empty(big_n: usize, k1: usize, k2: usize, p: f64) -> Self {
        SweepRecord {
            big_n,
            k1,
            k2,
            p,
            gamma1: None,
            gamma2: None,
            gamma3: None,
            target: None,
            n: None,
            p_match: None,
            lambda: None,
            delta: None,
            r: None,
            p_bar: None,
            theta: None,
            tv: None,
            tv_is_estimate: false,
            bound: None,
            bound_source: None,
            bound_wx: None,
            ratio: None,
            applicable: false,
            notes: Vec::new(),
        }
    }
}

/// Every bound that applies to the model, in a fixed order.
pub fn family_bounds(model: &RunsModel, m: &MatchResult, mode: XiMode) -> Result<Vec<BoundReport>> {
    let mut out = vec![bound_theorem_main(model, m, mode, None)?];
    match model.kind {
        RunsKind::OneOne => out.push(bound_11runs(model, m)?),
        RunsKind::K1k2 if model.identical_p().is_some() => out.push(bound_k1k2(model, m)?),
        RunsKind::Kruns => {
            if let Some(p) = model.identical_p() {
                out.push(bound_kruns_t5(model.trials(), model.k2, p));
            }
        }
        _ => {}
    }
    Ok(out)
}

/// Law of `W` estimated from `samples` simulated circles, split into
/// fixed chunks with their own ChaCha8 stream so the result does not depend
/// on thread scheduling.
pub fn monte_carlo_law(model: &RunsModel, samples: usize, seed: u64) -> LatticeMeasure {
    const CHUNK: usize = 50_000;
    let l = model.trials();
    let pattern = model.pattern();
    let chunks = samples.div_ceil(CHUNK);
    let counts: Vec<Vec<u64>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            let mut hist = vec![0u64; l + 1];
            let mut trial = vec![0u8; l];
            for _ in 0..CHUNK.min(samples - c * CHUNK) {
                for (t, v) in trial.iter_mut().enumerate() {
                    *v = rng.gen_bool(model.probs[t]) as u8;
                }
                let w = (0..l).filter(|&j| pattern.iter().enumerate().all(|(o, &b)| trial[(j + o) % l] == b)).count();
                hist[w] += 1;
            }
            hist
        })
        .collect();
    let mut total = vec![0u64; l + 1];
    for h in counts {
        for (t, v) in total.iter_mut().zip(h) {
            *t += v;
        }
    }
    LatticeMeasure::new(0, total.into_iter().map(|v| v as f64 / samples as f64).collect())
}

fn matched(gamma: &CumulantTriple, choice: TargetChoice) -> Result<MatchResult> {
    match choice {
        TargetChoice::Auto => match_cumulants(gamma),
        TargetChoice::M1 => match_as(gamma, TargetKind::M1),
        TargetChoice::M2 => match_as(gamma, TargetKind::M2),
    }
}

/// One sweep point; errors are folded into the row's notes.
pub fn sweep_point(cfg: &ExperimentConfig, big_n: usize) -> SweepRecord {
    let (k1, k2) = cfg.model.pattern().unwrap_or((0, 0));
    let mut rec = SweepRecord::empty(big_n, k1, k2, cfg.model.p.unwrap_or(f64::NAN));
    if let Err(e) = fill_point(cfg, big_n, &mut rec) {
        rec.notes.push(e.to_string());
        rec.applicable = false;
        rec.bound = None;
        rec.ratio = None;
    }
    rec
}

fn fill_point(cfg: &ExperimentConfig, big_n: usize, rec: &mut SweepRecord) -> Result<()> {
    let model = cfg.model.build(big_n)?;
    rec.p = model.identical_p().unwrap_or(model.probs.iter().sum::<f64>() / model.trials() as f64);
    let exact = if model.window() <= MAX_WINDOW && model.trials() <= cfg.max_exact_trials {
        Some(exact_law(&model)?)
    } else {
        None
    };
    let gamma = match &exact {
        Some(law) => factorial_cumulants(law),
        None => closed_cumulants(&model)?,
    };
    rec.gamma1 = Some(gamma.gamma1);
    rec.gamma2 = Some(gamma.gamma2);
    rec.gamma3 = Some(gamma.gamma3);

    let m = matched(&gamma, cfg.target)?;
    rec.target = Some(m.which);
    rec.theta = Some(m.diagnostics.theta);
    match m.target() {
        Target::M1(t) => {
            rec.n = Some(t.n);
            rec.p_match = Some(t.p);
            rec.lambda = Some(t.lambda);
            rec.delta = Some(t.delta);
        }
        Target::M2(t) => {
            rec.r = Some(t.r);
            rec.p_bar = Some(t.p_bar);
            rec.lambda = Some(t.lambda);
        }
    }
    let target_law = m.target().build(TARGET_TAIL_TOL)?;
    let law = match exact {
        Some(law) => law,
        None => {
            rec.tv_is_estimate = true;
            rec.notes.push(format!("tv estimated from {} simulated circles", cfg.monte_carlo_samples));
            monte_carlo_law(&model, cfg.monte_carlo_samples, cfg.seed)
        }
    };
    let tv = tv_distance(&law, &target_law)?;
    rec.tv = Some(tv);

    if model.kind == RunsKind::Kruns {
        if let Some(p) = model.identical_p() {
            rec.bound_wx = Some(bound_wang_xia(model.trials(), model.k2, p));
        }
    }
    let reports = family_bounds(&model, &m, cfg.mode)?;
    for r in &reports {
        if !r.applicable {
            rec.notes.push(format!("{}: {}", r.name, r.reasons.join("; ")));
        }
        rec.notes.extend(r.warnings.iter().map(|w| format!("{}: {w}", r.name)));
    }
    let best = reports
        .iter()
        .filter_map(|r| r.bound_value.map(|v| (v, r.name.clone())))
        .min_by(|a, b| a.0.total_cmp(&b.0));
    if let Some((v, name)) = best {
        rec.bound = Some(v);
        rec.bound_source = Some(name);
        rec.ratio = Some(tv / v);
        rec.applicable = true;
    }
    Ok(())
}

/// Runs every sweep point in parallel; rows come back ordered by `N`.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<Vec<SweepRecord>> {
    cfg.validate()?;
    let mut ns = cfg.sweep.clone();
    ns.sort_unstable();
    ns.dedup();
    Ok(ns.par_iter().map(|&n| sweep_point(cfg, n)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// Least squares of `log y` on `log x`; points with non-positive values are
/// skipped and at least three must remain.
pub fn fit_log_log(points: &[(f64, f64)]) -> Result<SlopeFit> {
    let logs: Vec<(f64, f64)> =
        points.iter().filter(|(x, y)| *x > 0.0 && *y > 0.0).map(|(x, y)| (x.ln(), y.ln())).collect();
    if logs.len() < 3 {
        return Err(Error::Domain(format!("slope fit needs 3 positive points, got {}", logs.len())));
    }
    let n = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = logs.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Domain("slope fit needs at least two distinct N".into()));
    }
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok(SlopeFit { slope, intercept: my - slope * mx, r2 })
}

/// Decay slope of the exact TV column over applicable rows.
pub fn fit_decay_slope(records: &[SweepRecord]) -> Result<SlopeFit> {
    let pts: Vec<(f64, f64)> = records
        .iter()
        .filter(|r| r.applicable && !r.tv_is_estimate)
        .filter_map(|r| r.tv.map(|tv| (r.big_n as f64, tv)))
        .collect();
    fit_log_log(&pts)
}

fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt_float).unwrap_or_default()
}

/// The records as CSV (header plus one line per record) or a JSON array.
pub fn render(records: &[SweepRecord], format: OutputFormat) -> Result<String> {
    match format {
        OutputFormat::Json => {
            let mut s = serde_json::to_string_pretty(records).map_err(|e| Error::Config(e.to_string()))?;
            s.push('\n');
            Ok(s)
        }
        OutputFormat::Csv => {
            let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
            let header: Vec<&str> = CSV_HEADER.split(',').collect();
            w.write_record(&header).map_err(|e| Error::Config(e.to_string()))?;
            for r in records {
                let row = [
                    r.big_n.to_string(),
                    r.k1.to_string(),
                    r.k2.to_string(),
                    fmt_float(r.p),
                    opt(r.gamma1),
                    opt(r.gamma2),
                    opt(r.gamma3),
                    r.target.map(|t| t.to_string()).unwrap_or_default(),
                    r.n.map(|n| n.to_string()).unwrap_or_default(),
                    opt(r.p_match),
                    opt(r.lambda),
                    opt(r.delta),
                    opt(r.r),
                    opt(r.p_bar),
                    opt(r.theta),
                    opt(r.tv),
                    opt(r.bound),
                    opt(r.bound_wx),
                    opt(r.ratio),
                    r.applicable.to_string(),
                ];
                w.write_record(&row).map_err(|e| Error::Config(e.to_string()))?;
            }
            let bytes = w.into_inner().map_err(|e| Error::Config(e.to_string()))?;
            String::from_utf8(bytes).map_err(|e| Error::Config(e.to_string()))
        }
    }
}

/// Writes to `path`, or to stdout when there is none.
pub fn emit(records: &[SweepRecord], format: OutputFormat, path: Option<&Path>) -> Result<()> {
    let text = render(records, format)?;
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| io_error(p, e)),
        None => {
            use std::io::Write;
            std::io::stdout().lock().write_all(text.as_bytes()).map_err(|e| io_error(Path::new("stdout"), e))
        }
    }
}

/// A short human-readable table of the sweep.
pub fn summary_table(records: &[SweepRecord]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:>7} {:>6} {:>12} {:>12} {:>12} {:>10}", "N", "target", "tv", "bound", "ratio", "applicable");
    for r in records {
        let f = |v: Option<f64>| v.map(|x| format!("{x:.4e}")).unwrap_or_else(|| "-".into());
        let _ = writeln!(
            s,
            "{:>7} {:>6} {:>12} {:>12} {:>12} {:>10}",
            r.big_n,
            r.target.map(|t| t.to_string()).unwrap_or_else(|| "-".into()),
            f(r.tv),
            f(r.bound),
            f(r.ratio),
            r.applicable
        );
    }
    s
}
