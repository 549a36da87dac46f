//! `disagg` — regional-to-substation demand disaggregation toolkit.
//!
//! Subcommands cover the full pipeline: synthetic scenario generation,
//! allocator training, the cross-validated method-matrix evaluation,
//! intensity sweeps, downstream power-flow validation, and report
//! rendering. Exit codes: 0 success, 1 validation error, 2 runtime error.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use disagg_core::error::Error as CoreError;
use disagg_core::experiment::{
    render_mechanism_table, render_method_matrix, render_sweep_table, run_comparisons, run_cv,
    run_sweep, summary_document, write_audit_log, write_metrics_csv, write_predictions_csv,
    write_summary_json, write_sweep_csv, Manifest, SummaryDocument,
};
use disagg_core::io::{load_scenario, save_scenario, save_truth};
use disagg_core::learner::{save_trained, train, TrainConfig};
use disagg_core::powerflow::{
    build_network, loading_csv, loading_deviation, loads_from_mva, save_network, solve_ac,
    LineParams, LoadingDeviation, PowerFlowSolution,
};
use disagg_core::synth::{generate, SynthConfig};
use disagg_core::Scenario64;

#[derive(Parser)]
#[command(name = "disagg", version, about = "Regional-to-substation electricity demand disaggregation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic ground-truth scenario
    Generate(GenerateArgs),
    /// Train the learned allocator on a scenario
    Train(TrainArgs),
    /// Run the cross-validated method evaluation described by a manifest
    Evaluate(EvaluateArgs),
    /// Run an intensity or prior-weight sweep described by a manifest
    Sweep(SweepArgs),
    /// Build the radial network and solve AC power flow
    Powerflow(PowerflowArgs),
    /// Render tables from a stored evaluation report
    Report(ReportArgs),
}

/// Fallback output directory when `--out` (or the manifest output) is absent.
const OUT_DIR_ENV: &str = "DISAGG_OUT_DIR";

fn resolve_out_dir(explicit: Option<PathBuf>) -> Result<PathBuf, CoreError> {
    explicit
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .ok_or_else(|| {
            CoreError::InvalidConfig(format!(
                "no output directory: pass --out or set {OUT_DIR_ENV}"
            ))
        })
}

#[derive(Args)]
struct GenerateArgs {
    /// Output directory for the scenario files (falls back to $DISAGG_OUT_DIR)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Generator seed (overrides the config file)
    #[arg(long)]
    seed: Option<u64>,
    /// Generator configuration JSON; defaults apply when omitted
    #[arg(long)]
    config: Option<PathBuf>,
    /// Write gzip-compressed CSV files
    #[arg(long)]
    gzip: bool,
}

#[derive(Args)]
struct TrainArgs {
    /// Scenario directory
    #[arg(long)]
    scenario: PathBuf,
    /// Output path of the trained-parameters JSON
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 0.05)]
    lambda_ntl: f64,
    #[arg(long, default_value_t = 0.05)]
    lambda_prox: f64,
    #[arg(long, default_value_t = 1.0)]
    learning_rate: f64,
    #[arg(long, default_value_t = 300)]
    max_epochs: usize,
    #[arg(long, default_value_t = 1e-7)]
    convergence_tol: f64,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Experiment manifest JSON
    #[arg(long)]
    manifest: PathBuf,
    /// Worker threads (defaults to the manifest value, then logical cores)
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args)]
struct SweepArgs {
    /// Experiment manifest JSON with a `sweep` section
    #[arg(long)]
    manifest: PathBuf,
}

#[derive(Args)]
struct PowerflowArgs {
    /// Scenario directory (substations define the network)
    #[arg(long)]
    scenario: PathBuf,
    /// Output directory (falls back to $DISAGG_OUT_DIR)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Optional predictions CSV (either `substation_id,demand` or the
    /// evaluate output `method,substation_id,demand_pred`)
    #[arg(long)]
    predictions: Option<PathBuf>,
    /// Method label to select when the predictions file carries several
    #[arg(long)]
    method: Option<String>,
    /// Also evaluate a flat equal-share allocation
    #[arg(long)]
    flat: bool,
    /// Load power factor
    #[arg(long, default_value_t = 0.95)]
    power_factor: f64,
    /// Line-parameters JSON overriding the built-in conductor defaults
    #[arg(long)]
    line_params: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Directory holding an evaluate output (summary.json)
    #[arg(long = "in")]
    input: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            use clap::error::ErrorKind;
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Generate(args) => cmd_generate(args),
        Command::Train(args) => cmd_train(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Powerflow(args) => cmd_powerflow(args),
        Command::Report(args) => cmd_report(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}

fn io_error(path: &Path, source: std::io::Error) -> CoreError {
    CoreError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn cmd_generate(args: GenerateArgs) -> Result<(), CoreError> {
    let mut config = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
            serde_json::from_str::<SynthConfig>(&text).map_err(|e| CoreError::Json {
                path: path.display().to_string(),
                message: e.to_string(),
            })?
        }
        None => SynthConfig::default(),
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let out = resolve_out_dir(args.out)?;
    let (scenario, truth) = generate::<f64>(&config)?;
    std::fs::create_dir_all(&out).map_err(|e| io_error(&out, e))?;
    save_scenario(&scenario, &out, args.gzip)?;
    save_truth(&truth, &out, args.gzip)?;
    let config_path = out.join("synth_config.json");
    std::fs::write(
        &config_path,
        serde_json::to_string_pretty(&config).expect("config serializes"),
    )
    .map_err(|e| io_error(&config_path, e))?;
    println!(
        "generated scenario: {} regions, {} agents, {} substations -> {}",
        scenario.regions.len(),
        scenario.agents.len(),
        scenario.substations.len(),
        out.display()
    );
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<(), CoreError> {
    let scenario: Scenario64 = load_scenario(&args.scenario)?;
    let config = TrainConfig {
        lambda_ntl: args.lambda_ntl,
        lambda_prox: args.lambda_prox,
        learning_rate: args.learning_rate,
        max_epochs: args.max_epochs,
        convergence_tol: args.convergence_tol,
        seed: args.seed,
    };
    let trained = train(&scenario, &config)?;
    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| io_error(parent, e))?;
        }
    }
    save_trained(&trained, &args.out)?;
    let last = trained.loss_trace.last().expect("trace is never empty");
    println!(
        "trained {} epochs, converged={}, landuse={:.6}, ntl_prior={:.6}, prox_prior={:.6}, total={:.6} -> {}",
        trained.loss_trace.len() - 1,
        trained.converged,
        last.landuse,
        last.ntl_prior,
        last.prox_prior,
        last.total,
        args.out.display()
    );
    Ok(())
}

fn configure_workers(cli: Option<usize>, manifest: Option<usize>) {
    if let Some(workers) = cli.or(manifest) {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build_global();
    }
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<(), CoreError> {
    let manifest = Manifest::load(&args.manifest)?;
    configure_workers(args.workers, manifest.workers);
    let scenario: Scenario64 = load_scenario(Path::new(&manifest.scenario))?;
    let specs = manifest.specs()?;
    let (report, audit) = run_cv(&manifest.plan, &scenario, &specs, &manifest.train)?;

    let labels = report.methods.keys().cloned().collect();
    let pairs = manifest.comparison_pairs(&labels);
    let comparisons = if pairs.is_empty() {
        Vec::new()
    } else {
        match run_comparisons(&report, &pairs, &manifest.plan.seeds) {
            Ok(comparisons) => comparisons,
            Err(err) => {
                eprintln!("warning: skipping planned comparisons: {err}");
                Vec::new()
            }
        }
    };

    let out_dir = if manifest.output_dir.is_empty() {
        resolve_out_dir(None)?
    } else {
        PathBuf::from(&manifest.output_dir)
    };
    std::fs::create_dir_all(&out_dir).map_err(|e| io_error(&out_dir, e))?;
    write_metrics_csv(&report, &out_dir.join("metrics.csv"))?;
    write_predictions_csv(&report, &out_dir.join("predictions.csv"))?;
    let document = summary_document(&report, &comparisons, &manifest.plan, &scenario);
    write_summary_json(&document, &out_dir.join("summary.json"))?;
    write_audit_log(&audit, &out_dir.join("audit.log"))?;

    print!("{}", render_method_matrix(&document));
    if !comparisons.is_empty() {
        println!("\nplanned comparisons (Wilcoxon signed-rank, Holm-adjusted median p):");
        for c in &comparisons {
            println!(
                "  {:<12} vs {:<12} dRMSE {:+8.3}  p_median {:.4}  p_holm {:.4}  {}",
                c.a,
                c.b,
                c.delta_rmse,
                c.p_median,
                c.p_holm,
                if c.significant { "significant" } else { "---" }
            );
        }
    }
    println!("\noutputs written to {}", out_dir.display());
    Ok(())
}

fn cmd_sweep(args: SweepArgs) -> Result<(), CoreError> {
    let manifest = Manifest::load(&args.manifest)?;
    configure_workers(None, manifest.workers);
    let sweep = manifest.sweep.clone().ok_or_else(|| CoreError::Json {
        path: args.manifest.display().to_string(),
        message: "manifest has no `sweep` section".into(),
    })?;
    let scenario: Scenario64 = load_scenario(Path::new(&manifest.scenario))?;
    let levels = sweep
        .levels
        .clone()
        .unwrap_or_else(|| sweep.axis.default_levels());
    let table = run_sweep(sweep.axis, &levels, &scenario, &manifest.train)?;

    let out_dir = if manifest.output_dir.is_empty() {
        resolve_out_dir(None)?
    } else {
        PathBuf::from(&manifest.output_dir)
    };
    std::fs::create_dir_all(&out_dir).map_err(|e| io_error(&out_dir, e))?;
    write_sweep_csv(&table, &out_dir.join("sweep.csv"))?;
    print!("{}", render_sweep_table(&table));
    println!("\nsweep written to {}", out_dir.display());
    Ok(())
}

fn read_predictions(
    path: &Path,
    method: Option<&str>,
) -> Result<BTreeMap<u64, f64>, CoreError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| CoreError::Schema {
            file: path.display().to_string(),
            row: 0,
            column: String::new(),
            message: "empty file".into(),
        })?
        .split(',')
        .collect();
    let with_method = header.first() == Some(&"method");
    if with_method && method.is_none() {
        return Err(CoreError::InvalidConfig(
            "predictions file carries multiple methods; pass --method".into(),
        ));
    }
    let mut map = BTreeMap::new();
    for (idx, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let (id_field, demand_field) = if with_method {
            if fields.first().copied() != method {
                continue;
            }
            (fields.get(1), fields.get(2))
        } else {
            (fields.first(), fields.get(1))
        };
        let schema_err = |column: &str| CoreError::Schema {
            file: path.display().to_string(),
            row: idx + 1,
            column: column.to_string(),
            message: "expected a number".into(),
        };
        let id = id_field
            .and_then(|f| f.parse::<u64>().ok())
            .ok_or_else(|| schema_err("substation_id"))?;
        let demand = demand_field
            .and_then(|f| f.parse::<f64>().ok())
            .ok_or_else(|| schema_err("demand"))?;
        map.insert(id, demand);
    }
    if map.is_empty() {
        return Err(CoreError::InvalidConfig(format!(
            "no predictions found in {}{}",
            path.display(),
            method.map(|m| format!(" for method `{m}`")).unwrap_or_default()
        )));
    }
    Ok(map)
}

fn cmd_powerflow(args: PowerflowArgs) -> Result<(), CoreError> {
    let scenario: Scenario64 = load_scenario(&args.scenario)?;
    let line_params = match &args.line_params {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
            serde_json::from_str::<LineParams>(&text).map_err(|e| CoreError::Json {
                path: path.display().to_string(),
                message: e.to_string(),
            })?
        }
        None => LineParams::default(),
    };
    let network = build_network(&scenario.substations, line_params)?;

    let solve_named = |demands: &[f64]| -> Result<PowerFlowSolution, CoreError> {
        let (p, q) = loads_from_mva(demands, args.power_factor);
        solve_ac(&network, &p, &q)
    };

    let actual: Vec<f64> = network
        .substation_ids
        .iter()
        .map(|id| {
            scenario
                .substations
                .iter()
                .find(|s| s.id == *id)
                .expect("network built from these substations")
                .demand_actual
        })
        .collect();
    let reference = solve_named(&actual)?;

    let mut solutions: BTreeMap<String, PowerFlowSolution> = BTreeMap::new();
    let mut deviations: BTreeMap<String, LoadingDeviation> = BTreeMap::new();
    deviations.insert("reference".into(), loading_deviation(&reference, &reference)?);

    if args.flat {
        let total: f64 = actual.iter().sum();
        let flat = vec![total / actual.len() as f64; actual.len()];
        let solution = solve_named(&flat)?;
        deviations.insert("flat".into(), loading_deviation(&solution, &reference)?);
        solutions.insert("flat".into(), solution);
    }
    if let Some(path) = &args.predictions {
        let predictions = read_predictions(path, args.method.as_deref())?;
        let demands: Vec<f64> = network
            .substation_ids
            .iter()
            .map(|id| {
                predictions.get(&id.0).copied().ok_or_else(|| {
                    CoreError::InvalidConfig(format!("predictions miss substation {id}"))
                })
            })
            .collect::<Result<_, _>>()?;
        let solution = solve_named(&demands)?;
        let name = args.method.clone().unwrap_or_else(|| "predicted".into());
        deviations.insert(name.clone(), loading_deviation(&solution, &reference)?);
        solutions.insert(name, solution);
    }

    let out = resolve_out_dir(args.out)?;
    std::fs::create_dir_all(&out).map_err(|e| io_error(&out, e))?;
    save_network(&network, &out.join("network.json"))?;
    let mut named: BTreeMap<String, &PowerFlowSolution> =
        BTreeMap::from([(String::from("reference"), &reference)]);
    for (name, solution) in &solutions {
        named.insert(name.clone(), solution);
    }
    let csv = loading_csv(&network, &named);
    let csv_path = out.join("loading.csv");
    std::fs::write(&csv_path, csv).map_err(|e| io_error(&csv_path, e))?;
    let dev_path = out.join("deviation.json");
    std::fs::write(
        &dev_path,
        serde_json::to_string_pretty(&deviations).expect("deviation serializes"),
    )
    .map_err(|e| io_error(&dev_path, e))?;

    println!(
        "network: {} buses, {} edges; reference converged={} max_mismatch={:.2e}",
        network.n_buses(),
        network.edges.len(),
        reference.converged,
        reference.max_mismatch_pu
    );
    for (name, deviation) in &deviations {
        println!(
            "  {:<12} delta_mae {:>8.3} pp   max loading {:>8.2} %",
            name, deviation.delta_mae_pp, deviation.max_loading_pct
        );
    }
    println!("outputs written to {}", out.display());
    Ok(())
}

fn cmd_report(args: ReportArgs) -> Result<(), CoreError> {
    let summary_path = args.input.join("summary.json");
    let text = std::fs::read_to_string(&summary_path).map_err(|e| io_error(&summary_path, e))?;
    let document: SummaryDocument =
        serde_json::from_str(&text).map_err(|e| CoreError::Json {
            path: summary_path.display().to_string(),
            message: e.to_string(),
        })?;

    let mut rendered = String::new();
    rendered.push_str("method matrix\n");
    rendered.push_str(&render_method_matrix(&document));
    rendered.push_str("\nmechanism isolation (vs learned baseline)\n");
    rendered.push_str(&render_mechanism_table(&document));
    if !document.comparisons.is_empty() {
        rendered.push_str("\nplanned comparisons\n");
        for c in &document.comparisons {
            rendered.push_str(&format!(
                "  {:<12} vs {:<12} dRMSE {:+8.3}  p_median {:.4}  p_holm {:.4}  {}\n",
                c.a,
                c.b,
                c.delta_rmse,
                c.p_median,
                c.p_holm,
                if c.significant { "significant" } else { "---" }
            ));
        }
    }
    print!("{rendered}");
    let report_path = args.input.join("report.txt");
    std::fs::write(&report_path, rendered).map_err(|e| io_error(&report_path, e))?;
    println!("\nreport written to {}", report_path.display());
    Ok(())
}
