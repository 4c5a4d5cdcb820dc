use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use stein_runs::bounds::{bound_wang_xia, XiMode};
use stein_runs::dist_core::{factorial_cumulants, tv_distance, CumulantTriple, TargetKind};
use stein_runs::harness::{
    emit, family_bounds, fit_decay_slope, run_sweep, summary_table, ExperimentConfig, ModelSpec, OutputFormat,
    OutputSpec, TargetChoice,
};
use stein_runs::matching::{cumulants_from_raw_moments, match_as, match_cumulants, MatchResult};
use stein_runs::runs_models::{
    brute_force_law, closed_cumulants, conditional_laws, exact_law, RunsKind, RunsModel,
};
use stein_runs::stein_ops::{stein_identity_residual, CompoundOperator};
use stein_runs::{Error, Result};

#[derive(Parser)]
#[command(name = "stein-runs", version, about = "Compound binomial / negative-binomial approximation of run statistics")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone, Default)]
struct ModelArgs {
    /// TOML experiment config; flags given alongside override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// one_one, k1k2 or kruns
    #[arg(long)]
    kind: Option<RunsKind>,
    /// Number of indicators; comma-separated list for sweeps.
    #[arg(long = "N", value_delimiter = ',')]
    big_n: Vec<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    k1: Option<usize>,
    #[arg(long)]
    k2: Option<usize>,
    #[arg(long)]
    p: Option<f64>,
    /// One success probability per line.
    #[arg(long)]
    probs_file: Option<PathBuf>,
    /// auto, m1 or m2
    #[arg(long)]
    target: Option<TargetChoice>,
    /// exact or prime
    #[arg(long)]
    mode: Option<XiMode>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// csv or json
    #[arg(long)]
    format: Option<OutputFormat>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Match cumulants (or raw moments, or a model's cumulants) to a compound target.
    Match {
        /// Γ₁,Γ₂,Γ₃
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, conflicts_with = "moments")]
        cumulants: Option<Vec<f64>>,
        /// E W, E W², E W³
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        moments: Option<Vec<f64>>,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Exact law of W as JSON.
    Law {
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Every applicable bound for one model, as JSON.
    Bound {
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Runs the oracle checks and prints one line per check.
    Verify,
    /// Sweeps over N and writes CSV or JSON.
    Sweep {
        #[command(flatten)]
        model: ModelArgs,
    },
}

/// Merges flags over the optional config file.
fn experiment(args: &ModelArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => {
            let kind = args.kind.ok_or_else(|| Error::Config("--kind or --config is required".into()))?;
            ExperimentConfig {
                model: ModelSpec { kind, k1: None, k2: None, k: None, p: None, probs_file: None },
                target: TargetChoice::Auto,
                mode: XiMode::Exact,
                sweep: Vec::new(),
                seed: 0,
                monte_carlo_samples: 1_000_000,
                max_exact_trials: 200_000,
                output: OutputSpec::default(),
            }
        }
    };
    if let Some(kind) = args.kind {
        cfg.model.kind = kind;
    }
    macro_rules! set {
        ($($field:ident => $dst:expr),*) => {$(if let Some(v) = args.$field.clone() { $dst = Some(v); })*};
    }
    set!(k => cfg.model.k, k1 => cfg.model.k1, k2 => cfg.model.k2, p => cfg.model.p, probs_file => cfg.model.probs_file, out => cfg.output.path);
    if !args.big_n.is_empty() {
        cfg.sweep = args.big_n.clone();
    }
    if let Some(t) = args.target {
        cfg.target = t;
    }
    if let Some(m) = args.mode {
        cfg.mode = m;
    }
    if let Some(f) = args.format {
        cfg.output.format = f;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn single_model(args: &ModelArgs) -> Result<(ExperimentConfig, RunsModel)> {
    let cfg = experiment(args)?;
    let model = match (cfg.sweep.as_slice(), &cfg.model.probs_file) {
        (_, Some(_)) => cfg.model.from_file()?,
        ([n], None) => cfg.model.build(*n)?,
        _ => return Err(Error::Config("give exactly one --N".into())),
    };
    Ok((cfg, model))
}

fn match_with(gamma: &CumulantTriple, choice: TargetChoice) -> Result<MatchResult> {
    match choice {
        TargetChoice::Auto => match_cumulants(gamma),
        TargetChoice::M1 => match_as(gamma, TargetKind::M1),
        TargetChoice::M2 => match_as(gamma, TargetKind::M2),
    }
}

fn print_json(v: &impl serde::Serialize) -> Result<()> {
    use std::io::Write;
    let text = serde_json::to_string_pretty(v).map_err(|e| Error::Config(e.to_string()))?;
    writeln!(std::io::stdout().lock(), "{text}").map_err(|e| Error::Io { path: "stdout".into(), msg: e.to_string() })
}

fn write_json(v: &impl serde::Serialize, out: Option<&PathBuf>) -> Result<()> {
    match out {
        None => print_json(v),
        Some(p) => {
            let text = serde_json::to_string_pretty(v).map_err(|e| Error::Config(e.to_string()))? + "\n";
            std::fs::write(p, text).map_err(|e| Error::Io { path: p.display().to_string(), msg: e.to_string() })
        }
    }
}

fn cmd_match(cumulants: Option<Vec<f64>>, moments: Option<Vec<f64>>, args: &ModelArgs) -> Result<()> {
    if [&cumulants, &moments].iter().any(|v| v.as_ref().is_some_and(|v| v.len() != 3)) {
        return Err(Error::Config("--cumulants and --moments take three comma-separated values".into()));
    }
    let gamma = match (cumulants, moments) {
        (Some(g), _) => CumulantTriple::new(g[0], g[1], g[2]),
        (None, Some(m)) => cumulants_from_raw_moments(m[0], m[1], m[2]),
        (None, None) => closed_cumulants(&single_model(args)?.1)?,
    };
    let m = match_with(&gamma, args.target.unwrap_or_default())?;
    print_json(&serde_json::json!({ "cumulants": gamma, "match": m }))
}

fn cmd_law(args: &ModelArgs) -> Result<()> {
    let (cfg, model) = single_model(args)?;
    write_json(&exact_law(&model)?, cfg.output.path.as_ref())
}

fn cmd_bound(args: &ModelArgs) -> Result<()> {
    let (cfg, model) = single_model(args)?;
    let law = exact_law(&model)?;
    let gamma = factorial_cumulants(&law);
    let m = match_with(&gamma, cfg.target)?;
    let tv = tv_distance(&law, &m.target().build(1e-14)?)?;
    let reports = family_bounds(&model, &m, cfg.mode)?;
    let wx = match (model.kind, model.identical_p()) {
        (RunsKind::Kruns, Some(p)) => Some(bound_wang_xia(model.trials(), model.k2, p)),
        _ => None,
    };
    write_json(
        &serde_json::json!({ "cumulants": gamma, "match": m, "tv": tv, "bounds": reports, "bound_wang_xia": wx }),
        cfg.output.path.as_ref(),
    )
}

/// Small instances of every oracle relation; returns false if any fails.
fn cmd_verify() -> Result<bool> {
    let mut ok = true;
    let mut line = |name: &str, value: f64, tol: f64| {
        let pass = value <= tol;
        ok &= pass;
        println!("{} {name}: {value:.3e} (tol {tol:.0e})", if pass { "PASS" } else { "FAIL" });
    };
    let models = [
        RunsModel::one_one(vec![0.3, 0.6, 0.5, 0.4, 0.7, 0.35, 0.45, 0.55, 0.65, 0.25, 0.5, 0.4])?,
        RunsModel::k1k2(1, 2, vec![0.4; 14])?,
        RunsModel::kruns(3, vec![0.3; 14])?,
    ];
    for model in &models {
        let law = exact_law(model)?;
        line(&format!("{} transfer DP vs enumeration", model.kind), law.linf_distance(&brute_force_law(model)?), 1e-13);
        let (a, b) = (closed_cumulants(model)?, factorial_cumulants(&law));
        let diff = (a.gamma1 - b.gamma1).abs().max((a.gamma2 - b.gamma2).abs()).max((a.gamma3 - b.gamma3).abs());
        line(&format!("{} closed cumulants vs exact law", model.kind), diff, 1e-10);
        let table = conditional_laws(model, 0)?;
        line(&format!("{} conditional mixture vs exact law", model.kind), table.mixture().linf_distance(&law), 1e-12);
    }
    for gamma in [CumulantTriple::new(24.0, -17.28, 13.824), CumulantTriple::new(2.7, 1.7415, 0.7556814)] {
        let m = match_cumulants(&gamma)?;
        let target = m.target();
        let law = target.build(1e-16)?;
        let op = CompoundOperator::for_target(&target);
        let r = stein_identity_residual(&law, &op, |k| k as f64).abs().max(stein_identity_residual(&law, &op, |k| (k.min(10)) as f64).abs());
        line(&format!("{} Stein identity", m.which), r, 1e-9);
    }
    Ok(ok)
}

fn cmd_sweep(args: &ModelArgs) -> Result<bool> {
    let cfg = experiment(args)?;
    cfg.validate()?;
    let records = run_sweep(&cfg)?;
    emit(&records, cfg.output.format, cfg.output.path.as_deref())?;
    if cfg.output.path.is_some() {
        eprint!("{}", summary_table(&records));
        if let Ok(fit) = fit_decay_slope(&records) {
            eprintln!("tv decay slope {:.4} (r2 {:.4})", fit.slope, fit.r2);
        }
    }
    Ok(records.iter().any(|r| r.applicable))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.cmd {
        Cmd::Match { cumulants, moments, model } => cmd_match(cumulants, moments, &model).map(|_| ExitCode::SUCCESS),
        Cmd::Law { model } => cmd_law(&model).map(|_| ExitCode::SUCCESS),
        Cmd::Bound { model } => cmd_bound(&model).map(|_| ExitCode::SUCCESS),
        Cmd::Verify => cmd_verify().map(|ok| if ok { ExitCode::SUCCESS } else { ExitCode::from(1) }),
        Cmd::Sweep { model } => cmd_sweep(&model).map(|any| if any { ExitCode::SUCCESS } else { ExitCode::from(2) }),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
