//! Command-line surface: every subcommand reads JSON/CSV artifacts, writes
//! JSON/CSV artifacts atomically alongside a run manifest, and prints a short
//! human summary to standard output. Exit codes: 0 success, 1 validation or
//! usage error, 2 runtime/solver error.

use std::fs;
use std::hash::Hasher;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use strategio::error::{Error, Result};
use strategio::geometry::{separation_of_types, SeparationMode};
use strategio::harness::{
    build_policy, configure_jobs, delta_sweep, demo_gap_necessity, demo_impossible,
    demo_si_failure, ingest_csv, run_experiment, ExperimentConfig, SiFailureConfig,
};
use strategio::panel_model::PanelDataset;
use strategio::policies::InterventionPolicy;
use strategio::rewards::{BetaSet, RewardWeights};

#[derive(Parser)]
#[command(
    name = "strategio",
    version,
    about = "Strategyproof intervention assignment on panel data"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate an observed training panel from a config and write it as CSV.
    Generate(GenerateArgs),
    /// Learn reward estimates and a deployable policy from a panel.
    Learn(LearnArgs),
    /// Apply a policy to every unit of a panel, without best responses.
    Assign(AssignArgs),
    /// Simulate each unit's effort-optimal manipulation against a policy.
    BestResponse(BestResponseArgs),
    /// Check separation of types for a set of units.
    CheckSot(CheckSotArgs),
    /// Re-run an experiment across shift-misspecification ratios.
    Sweep(SweepArgs),
    /// Self-contained constructions from the analysis.
    Demo(DemoArgs),
    /// Run the full generate-learn-respond-score experiment.
    Evaluate(EvaluateArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PolicyArg {
    ShiftedTwo,
    ShiftedMulti,
    MinIndex,
    Naive,
    Si,
}

impl PolicyArg {
    fn config_key(self) -> &'static str {
        match self {
            PolicyArg::ShiftedTwo => "shifted_two",
            PolicyArg::ShiftedMulti => "shifted_multi",
            PolicyArg::MinIndex => "min_index",
            PolicyArg::Naive => "naive",
            PolicyArg::Si => "si",
        }
    }
}

#[derive(Args)]
struct OutOpts {
    /// Output directory (created if missing).
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Cap on worker threads; defaults to the available cores.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args)]
struct GenerateArgs {
    /// Experiment config JSON.
    #[arg(long)]
    config: PathBuf,
    /// Seed override (highest precedence).
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    out: OutOpts,
}

#[derive(Args)]
struct LearnArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Policy shift override.
    #[arg(long)]
    delta_hat: Option<f64>,
    /// Policy variant override.
    #[arg(long)]
    policy: Option<PolicyArg>,
    /// Panel CSV to learn from; defaults to generating one from the config.
    data: Option<PathBuf>,
    #[command(flatten)]
    out: OutOpts,
}

#[derive(Args)]
struct AssignArgs {
    /// Config for learning a policy when no policy file is given.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    delta_hat: Option<f64>,
    #[arg(long)]
    policy: Option<PolicyArg>,
    /// Policy JSON; defaults to learning one from the config.
    policy_file: Option<PathBuf>,
    /// Panel CSV; defaults to the config's truthful test panel.
    data: Option<PathBuf>,
    #[command(flatten)]
    out: OutOpts,
}

#[derive(Args)]
struct BestResponseArgs {
    /// Config; supplies the units' true effort budget.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    delta_hat: Option<f64>,
    #[arg(long)]
    policy: Option<PolicyArg>,
    /// Policy JSON; defaults to learning one from the config.
    policy_file: Option<PathBuf>,
    /// Panel CSV; defaults to the config's truthful test panel.
    data: Option<PathBuf>,
    #[command(flatten)]
    out: OutOpts,
}

#[derive(Args)]
struct CheckSotArgs {
    /// Request JSON: {delta, mode, units: [{y, unit_type}], betas?}.
    request: PathBuf,
    #[command(flatten)]
    out: OutOpts,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    policy: Option<PolicyArg>,
    /// Shift ratios to evaluate: delta_hat = ratio * delta_true.
    #[arg(long, value_delimiter = ',', default_value = "0,0.2,0.5,1,2,5")]
    ratios: Vec<f64>,
    /// Seeds per ratio.
    #[arg(long, default_value_t = 10)]
    trials: usize,
    #[command(flatten)]
    out: OutOpts,
}

#[derive(Args)]
struct DemoArgs {
    #[command(subcommand)]
    which: DemoCommand,
}

#[derive(Subcommand)]
enum DemoCommand {
    /// Three interventions where no budget admits a strategyproof policy.
    Impossible {
        /// Distance of the flanking unit lines from the top type's cone.
        #[arg(long)]
        alpha: f64,
        /// Height of the top-type unit.
        #[arg(long)]
        zeta: f64,
        /// Effort budget.
        #[arg(long)]
        delta: f64,
        #[command(flatten)]
        out: OutOpts,
    },
    /// The donor-regression baseline is gamed where the shifted policy is not.
    SiFailure {
        #[arg(long, default_value_t = 0.5)]
        delta: f64,
        /// Distance between the two type centers.
        #[arg(long, default_value_t = 0.25)]
        separation: f64,
        #[arg(long, default_value_t = 0.02)]
        sigma: f64,
        #[arg(long, default_value_t = 200)]
        train: usize,
        #[arg(long, default_value_t = 500)]
        test: usize,
        #[arg(long, default_value_t = 10)]
        trials: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 2)]
        rank: usize,
        #[command(flatten)]
        out: OutOpts,
    },
    /// An O(c/n) estimation perturbation flips a boundary unit's response.
    GapNecessity {
        #[arg(long, default_value_t = 0.0)]
        theta1: f64,
        #[arg(long, default_value_t = 1.0)]
        theta2: f64,
        #[arg(long, default_value_t = 1.0)]
        c: f64,
        #[arg(long, default_value_t = 0.01)]
        alpha_small: f64,
        #[arg(long, default_value_t = 0.6)]
        delta: f64,
        /// Sample sizes to probe.
        #[arg(long, value_delimiter = ',', default_value = "10,50,99,101,200")]
        n: Vec<u64>,
        #[command(flatten)]
        out: OutOpts,
    },
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    delta_hat: Option<f64>,
    #[arg(long)]
    policy: Option<PolicyArg>,
    #[command(flatten)]
    out: OutOpts,
}

#[derive(Serialize)]
struct Versions {
    strategio: &'static str,
    strategio_cli: &'static str,
}

#[derive(Serialize)]
struct RunManifest<'a> {
    subcommand: &'a str,
    config_hash: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    versions: Versions,
}

fn fnv64(bytes: &[u8]) -> String {
    let mut hasher = fnv::FnvHasher::default();
    hasher.write(bytes);
    format!("{:016x}", hasher.finish())
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let parent = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(parent)?;
    let mut tmp = tempfile::NamedTempFile::new_in(parent)?;
    tmp.write_all(bytes)?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

fn write_manifest(
    out: &Path,
    stem: &str,
    subcommand: &str,
    hashed: &str,
    seed: Option<u64>,
) -> Result<()> {
    let manifest = RunManifest {
        subcommand,
        config_hash: fnv64(hashed.as_bytes()),
        seed,
        versions: Versions {
            strategio: strategio::VERSION,
            strategio_cli: env!("CARGO_PKG_VERSION"),
        },
    };
    let text = serde_json::to_string_pretty(&manifest)?;
    write_atomic(&out.join(format!("{stem}.manifest.json")), text.as_bytes())
}

/// Load a config file and resolve overrides. Seed precedence: `--seed`, then
/// the config's own `seed` key, then `STRATEGIO_SEED`, then 0.
fn load_config(
    path: &Path,
    seed: Option<u64>,
    delta_hat: Option<f64>,
    policy: Option<PolicyArg>,
) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Validation(format!("config {}: {e}", path.display())))?;
    let mut value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| Error::Validation(format!("config {}: {e}", path.display())))?;
    let obj = value
        .as_object_mut()
        .ok_or_else(|| Error::Validation("config must be a JSON object".into()))?;
    if let Some(s) = seed {
        obj.insert("seed".into(), s.into());
    } else if !obj.contains_key("seed") {
        let s = match std::env::var("STRATEGIO_SEED") {
            Ok(raw) => raw
                .trim()
                .parse::<u64>()
                .map_err(|e| Error::Validation(format!("STRATEGIO_SEED {raw:?}: {e}")))?,
            Err(_) => 0,
        };
        obj.insert("seed".into(), s.into());
    }
    if let Some(d) = delta_hat {
        obj.insert("delta_hat".into(), d.into());
    }
    if let Some(p) = policy {
        obj.insert("policy".into(), p.config_key().into());
    }
    let config: ExperimentConfig = serde_json::from_value(value)
        .map_err(|e| Error::Validation(format!("config {}: {e}", path.display())))?;
    config.validate()?;
    Ok(config)
}

fn require_no_learning_flags(
    policy_file: &Path,
    delta_hat: Option<f64>,
    policy: Option<PolicyArg>,
) -> Result<()> {
    if delta_hat.is_some() || policy.is_some() {
        return Err(Error::Validation(format!(
            "--delta-hat/--policy configure learning and conflict with the policy file {}",
            policy_file.display()
        )));
    }
    Ok(())
}

/// Build the observed training panel a config describes.
fn training_panel(config: &ExperimentConfig) -> Result<PanelDataset> {
    strategio::harness::panels(config).map(|(train, _)| train)
}

fn load_policy_or_learn(
    config: Option<&ExperimentConfig>,
    policy_file: Option<&PathBuf>,
    data: Option<&PathBuf>,
) -> Result<InterventionPolicy> {
    match policy_file {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Error::Validation(format!("policy {}: {e}", path.display())))?;
            InterventionPolicy::from_json_str(&text)
                .map_err(|e| Error::Validation(format!("policy {}: {e}", path.display())))
        }
        None => {
            let config = config.ok_or_else(|| {
                Error::Validation("need --config when no policy file is given".into())
            })?;
            let train = match data {
                Some(path) => ingest_csv(path, config.t0)?,
                None => training_panel(config)?,
            };
            let omega = RewardWeights::new(nalgebra_vec(&config.omega))?;
            let (policy, _) =
                build_policy(config.policy, &train, &omega, config.delta_hat, &config.pcr)?;
            Ok(policy)
        }
    }
}

fn nalgebra_vec(values: &[f64]) -> nalgebra::DVector<f64> {
    nalgebra::DVector::from_column_slice(values)
}

/// Pre-period submissions to score: an ingested panel's pre-period rows, or
/// the config's truthful test panel.
fn submissions(
    config: Option<&ExperimentConfig>,
    data: Option<&PathBuf>,
    t0: usize,
) -> Result<Vec<(String, nalgebra::DVector<f64>)>> {
    match data {
        Some(path) => {
            let panel = ingest_csv(path, t0)?;
            Ok((0..panel.y_pre.nrows())
                .map(|i| (i.to_string(), panel.y_pre.row(i).transpose()))
                .collect())
        }
        None => {
            let config = config.ok_or_else(|| {
                Error::Validation("need --config when no panel CSV is given".into())
            })?;
            if config.t0 != t0 {
                return Err(Error::Validation(format!(
                    "policy expects {t0} pre-periods but the config generates {}",
                    config.t0
                )));
            }
            let (_, test_pre) = strategio::harness::panels(config)?;
            Ok((0..test_pre.nrows())
                .map(|i| (i.to_string(), test_pre.row(i).transpose()))
                .collect())
        }
    }
}

#[derive(Serialize, Deserialize)]
struct SotUnit {
    y: Vec<f64>,
    unit_type: usize,
}

#[derive(Serialize, Deserialize)]
struct SotRequest {
    delta: f64,
    mode: SeparationMode,
    units: Vec<SotUnit>,
    #[serde(default)]
    betas: Option<Vec<Vec<f64>>>,
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        let code = match e {
            Error::Validation(_) => 1,
            _ => 2,
        };
        std::process::exit(code);
    }
}

fn setup_jobs(out: &OutOpts) -> Result<()> {
    match out.jobs {
        Some(n) => configure_jobs(n),
        None => Ok(()),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(args) => {
            setup_jobs(&args.out)?;
            let config = load_config(&args.config, args.seed, None, None)?;
            let train = training_panel(&config)?;
            let csv = train.to_csv_string()?;
            let path = args.out.out.join("panel.csv");
            write_atomic(&path, csv.as_bytes())?;
            write_manifest(
                &args.out.out,
                "panel",
                "generate",
                &serde_json::to_string(&config)?,
                Some(config.seed),
            )?;
            println!(
                "panel: {} units, {} interventions, {} of {} periods pre -> {}",
                train.y_pre.nrows(),
                train.k,
                train.t0,
                train.t0 + train.y_post[0].len(),
                path.display()
            );
            Ok(())
        }
        Command::Learn(args) => {
            setup_jobs(&args.out)?;
            let config = load_config(&args.config, args.seed, args.delta_hat, args.policy)?;
            let train = match &args.data {
                Some(path) => ingest_csv(path, config.t0)?,
                None => training_panel(&config)?,
            };
            let omega = RewardWeights::new(nalgebra_vec(&config.omega))?;
            let (policy, learned) =
                build_policy(config.policy, &train, &omega, config.delta_hat, &config.pcr)?;
            let policy_path = args.out.out.join("policy.json");
            write_atomic(&policy_path, policy.to_json_string()?.as_bytes())?;
            let learned_path = args.out.out.join("learned.json");
            write_atomic(&learned_path, learned.to_json_string()?.as_bytes())?;
            write_manifest(
                &args.out.out,
                "policy",
                "learn",
                &serde_json::to_string(&config)?,
                Some(config.seed),
            )?;
            println!(
                "learned {} arms from {} units -> {}",
                train.k,
                train.y_pre.nrows(),
                policy_path.display()
            );
            for d in 0..train.k {
                println!("  arm {d}: {} units, snr {:.3}", learned.n_d[d], learned.snr[d]);
            }
            Ok(())
        }
        Command::Assign(args) => {
            setup_jobs(&args.out)?;
            if let Some(pf) = &args.policy_file {
                require_no_learning_flags(pf, args.delta_hat, args.policy)?;
            }
            let config = match &args.config {
                Some(path) => Some(load_config(path, args.seed, args.delta_hat, args.policy)?),
                None => None,
            };
            let policy = load_policy_or_learn(config.as_ref(), args.policy_file.as_ref(), None)?;
            let units = submissions(config.as_ref(), args.data.as_ref(), policy.t0())?;
            let mut counts = vec![0usize; policy.k()];
            let mut csv = String::from("unit_id,intervention\n");
            for (id, y) in &units {
                let d = policy.assign(y)?;
                counts[d] += 1;
                csv.push_str(&format!("{id},{d}\n"));
            }
            let path = args.out.out.join("assignments.csv");
            write_atomic(&path, csv.as_bytes())?;
            write_manifest(
                &args.out.out,
                "assignments",
                "assign",
                &serde_json::to_string(&json!({
                    "policy": fnv64(policy.to_json_string()?.as_bytes()),
                    "units": units.len(),
                }))?,
                config.as_ref().map(|c| c.seed),
            )?;
            println!("assigned {} units -> {}", units.len(), path.display());
            for (d, n) in counts.iter().enumerate() {
                println!("  intervention {d}: {n}");
            }
            Ok(())
        }
        Command::BestResponse(args) => {
            setup_jobs(&args.out)?;
            if let Some(pf) = &args.policy_file {
                require_no_learning_flags(pf, args.delta_hat, args.policy)?;
            }
            let config = load_config(&args.config, args.seed, args.delta_hat, args.policy)?;
            let policy = load_policy_or_learn(Some(&config), args.policy_file.as_ref(), None)?;
            let units = submissions(Some(&config), args.data.as_ref(), policy.t0())?;
            let mut moved = 0usize;
            let mut csv = String::from("unit_id,achieved_intervention,effort,moved,exact\n");
            for (id, y) in &units {
                let o = policy.best_response(y, config.delta_true)?;
                moved += o.moved as usize;
                csv.push_str(&format!(
                    "{id},{},{:.16e},{},{}\n",
                    o.achieved_intervention, o.effort, o.moved, o.exact
                ));
            }
            let path = args.out.out.join("best_responses.csv");
            write_atomic(&path, csv.as_bytes())?;
            write_manifest(
                &args.out.out,
                "best_responses",
                "best-response",
                &serde_json::to_string(&json!({
                    "policy": fnv64(policy.to_json_string()?.as_bytes()),
                    "delta_true": config.delta_true,
                    "units": units.len(),
                }))?,
                Some(config.seed),
            )?;
            println!(
                "best responses for {} units at budget {} ({} moved) -> {}",
                units.len(),
                config.delta_true,
                moved,
                path.display()
            );
            Ok(())
        }
        Command::CheckSot(args) => {
            setup_jobs(&args.out)?;
            let text = fs::read_to_string(&args.request).map_err(|e| {
                Error::Validation(format!("request {}: {e}", args.request.display()))
            })?;
            let request: SotRequest = serde_json::from_str(&text).map_err(|e| {
                Error::Validation(format!("request {}: {e}", args.request.display()))
            })?;
            let units: Vec<(nalgebra::DVector<f64>, usize)> =
                request.units.iter().map(|u| (nalgebra_vec(&u.y), u.unit_type)).collect();
            let betas = match &request.betas {
                Some(rows) => Some(BetaSet::new(rows.iter().map(|r| nalgebra_vec(r)).collect())?),
                None => None,
            };
            let report = separation_of_types(&units, request.delta, request.mode, betas.as_ref())?;
            let path = args.out.out.join("separation.json");
            write_atomic(&path, report.to_json_string()?.as_bytes())?;
            write_manifest(&args.out.out, "separation", "check-sot", &text, None)?;
            println!(
                "separation of types: {} ({}) over {} units -> {}",
                if report.satisfied { "SATISFIED" } else { "VIOLATED" },
                if report.certified { "certified" } else { "sampled" },
                report.units.len(),
                path.display()
            );
            Ok(())
        }
        Command::Sweep(args) => {
            setup_jobs(&args.out)?;
            let config = load_config(&args.config, args.seed, None, args.policy)?;
            let table = delta_sweep(&config, &args.ratios, args.trials)?;
            let path = args.out.out.join("sweep.csv");
            write_atomic(&path, table.to_csv_string().as_bytes())?;
            write_manifest(
                &args.out.out,
                "sweep",
                "sweep",
                &serde_json::to_string(&json!({
                    "config": config,
                    "ratios": args.ratios,
                    "trials": args.trials,
                }))?,
                Some(config.seed),
            )?;
            println!(
                "sweep over {} ratios x {} seeds -> {}",
                args.ratios.len(),
                args.trials,
                path.display()
            );
            for row in &table.rows {
                println!(
                    "  ratio {:>5}: ndr {:.3} (std {:.3}), misassignment {:.3}",
                    row.ratio, row.mean_ndr, row.std_ndr, row.misassignment
                );
            }
            Ok(())
        }
        Command::Demo(args) => run_demo(args.which),
        Command::Evaluate(args) => {
            setup_jobs(&args.out)?;
            let config = load_config(&args.config, args.seed, args.delta_hat, args.policy)?;
            let metrics = run_experiment(&config)?;
            let path = args.out.out.join("metrics.json");
            write_atomic(&path, metrics.to_json_string()?.as_bytes())?;
            write_manifest(
                &args.out.out,
                "metrics",
                "evaluate",
                &serde_json::to_string(&config)?,
                Some(config.seed),
            )?;
            println!("evaluated {} test units -> {}", metrics.units.len(), path.display());
            if let Some(ndr) = metrics.normalized_delta_revenue {
                println!("  normalized delta revenue: {ndr:.4}");
            }
            println!("  misassignment rate: {:.4}", metrics.misassignment_rate);
            println!("  mean squared regret: {:.6}", metrics.mean_squared_regret);
            if let Some(mismatches) = metrics.equivalence_mismatches {
                println!("  strategic-vs-truthful mismatches: {mismatches}");
            }
            Ok(())
        }
    }
}

fn run_demo(which: DemoCommand) -> Result<()> {
    match which {
        DemoCommand::Impossible { alpha, zeta, delta, out } => {
            setup_jobs(&out)?;
            let report = demo_impossible(alpha, zeta, delta)?;
            let path = out.out.join("impossible.json");
            write_atomic(&path, report.to_json_string()?.as_bytes())?;
            write_manifest(
                &out.out,
                "impossible",
                "demo impossible",
                &serde_json::to_string(&json!({"alpha": alpha, "zeta": zeta, "delta": delta}))?,
                None,
            )?;
            println!(
                "inequality: {:.4} {} {:.4} -> {}",
                report.lhs,
                if report.impossible { "<=" } else { ">" },
                report.rhs,
                if report.impossible {
                    "no strategyproof policy exists for this instance"
                } else {
                    "no impossibility certificate from this construction"
                }
            );
            for (name, r) in [("finite", &report.finite), ("continuum", &report.continuum)] {
                println!(
                    "separation of types ({name}): {} ({})",
                    if r.satisfied { "SATISFIED" } else { "VIOLATED" },
                    if r.certified { "certified" } else { "sampled" },
                );
            }
            println!(
                "top-type unit best response reaches intervention {} (blocked: {})",
                report.top_unit_achieved, report.top_unit_blocked
            );
            println!("-> {}", path.display());
            Ok(())
        }
        DemoCommand::SiFailure {
            delta,
            separation,
            sigma,
            train,
            test,
            trials,
            seed,
            rank,
            out,
        } => {
            setup_jobs(&out)?;
            let config = SiFailureConfig {
                delta,
                center_separation: separation,
                sigma,
                m_train: train,
                m_test: test,
                n_seeds: trials,
                base_seed: seed,
                p: rank,
            };
            let report = demo_si_failure(&config)?;
            let path = out.out.join("si_failure.json");
            write_atomic(&path, report.to_json_string()?.as_bytes())?;
            write_manifest(
                &out.out,
                "si_failure",
                "demo si-failure",
                &serde_json::to_string(&config)?,
                Some(seed),
            )?;
            for row in &report.seeds {
                println!(
                    "  seed {}: donor-regression misassignment {:.3}, shifted {:.3}",
                    row.seed, row.si_misassignment, row.shifted_misassignment
                );
            }
            println!(
                "worst cases: donor-regression >= {:.3}, shifted <= {:.3} -> {}",
                report.min_si_misassignment,
                report.max_shifted_misassignment,
                path.display()
            );
            Ok(())
        }
        DemoCommand::GapNecessity { theta1, theta2, c, alpha_small, delta, n, out } => {
            setup_jobs(&out)?;
            let report = demo_gap_necessity(theta1, theta2, c, alpha_small, delta, &n)?;
            let path = out.out.join("gap_necessity.json");
            write_atomic(&path, report.to_json_string()?.as_bytes())?;
            write_manifest(
                &out.out,
                "gap_necessity",
                "demo gap-necessity",
                &serde_json::to_string(&json!({
                    "theta1": theta1, "theta2": theta2, "c": c,
                    "alpha_small": alpha_small, "delta": delta, "n": n,
                }))?,
                None,
            )?;
            for row in &report.rows {
                println!(
                    "  n {:>5}: perturbed targets give interventions {} / {} -> {}",
                    row.n,
                    row.achieved_minus,
                    row.achieved_plus,
                    if row.flips { "FLIPS" } else { "stable" }
                );
            }
            println!("-> {}", path.display());
            Ok(())
        }
    }
}
