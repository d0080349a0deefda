//! Command-line front end for the tube scheduler.
//!
//! Exit codes: 0 success, 2 an online window was infeasible, 3 bad
//! configuration or unreadable input, 1 any other failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use tubesched::grid::GridModel;
use tubesched::harness::{
    compare_methods, machine_fingerprint, run_method, run_summary, sweep_and_emit,
    synth_network_3, synth_network_38, synth_network_94, write_actions_csv,
    write_reliability_csv, HarnessError, Method, RunConfig, Scenario, SweepAxes,
};
use tubesched::sched::SchedError;
use tubesched::tube::write_tube_csv;

#[derive(Parser)]
#[command(
    name = "tubesched",
    about = "Two-stage robust scheduling of storage, reserve and generation on radial feeders",
    version
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Solve a receding-horizon schedule and write the committed actions.
    Solve(SolveArgs),
    /// Size the disturbance error tube and write its per-slot bounds.
    Tube(TubeArgs),
    /// Run the parameter sweeps and write one CSV per table plus plot data.
    Sweep(SweepArgs),
    /// Replay committed schedules against held-out draws and report
    /// per-method reliability.
    Evaluate(EvaluateArgs),
    /// Check the bundled instances and any supplied inputs, solving one
    /// small window end to end.
    Validate(ValidateArgs),
}

#[derive(Args)]
struct InputArgs {
    /// Network description (JSON).
    #[arg(long)]
    network: PathBuf,
    /// Renewable output pool (CSV, columns `bus{id}_t{slot}`); synthesized
    /// from the network when omitted.
    #[arg(long)]
    res_samples: Option<PathBuf>,
    /// Charging disturbance pool (CSV, columns `s{bus}_t{slot}`);
    /// synthesized from the network when omitted.
    #[arg(long)]
    disturbances: Option<PathBuf>,
    /// JSON run configuration; explicit flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    /// Weight on the worst-case risk terms.
    #[arg(long)]
    mu1: Option<f64>,
    /// Weight on the margin magnitudes.
    #[arg(long)]
    mu2: Option<f64>,
    /// Stage-1 tube exclusion weight.
    #[arg(long)]
    mu_tube: Option<f64>,
    /// Slots per online window.
    #[arg(long)]
    horizon: Option<usize>,
    /// Number of committed slots.
    #[arg(long)]
    receding: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Solve stage 2 with the exact Wasserstein dual (slow on large
    /// networks) instead of the accelerated form.
    #[arg(long)]
    exact_dual: bool,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

impl InputArgs {
    fn config(&self) -> Result<RunConfig, HarnessError> {
        let mut cfg = RunConfig::load(self.config.as_deref())?;
        if let Some(v) = self.epsilon {
            cfg.epsilon = v;
        }
        if let Some(v) = self.beta {
            cfg.beta = v;
        }
        if let Some(v) = self.mu1 {
            cfg.mu1 = v;
        }
        if let Some(v) = self.mu2 {
            cfg.mu2 = v;
        }
        if let Some(v) = self.mu_tube {
            cfg.mu_tube = v;
        }
        if let Some(v) = self.horizon {
            cfg.t_c = v;
        }
        if let Some(v) = self.receding {
            cfg.t_l = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        cfg.exact_dual = cfg.exact_dual || self.exact_dual;
        cfg.validate()?;
        Ok(cfg)
    }

    fn scenario(&self, cfg: &RunConfig) -> Result<Scenario, HarnessError> {
        Scenario::load(
            &self.network,
            self.res_samples.as_deref(),
            self.disturbances.as_deref(),
            cfg.seed,
        )
    }
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    input: InputArgs,
    /// wdr-mpc, saa-mpc, normal-mpc or static-dro.
    #[arg(long, default_value = "wdr-mpc")]
    method: Method,
}

#[derive(Args)]
struct TubeArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Tube sizing rule: wdr-mpc or saa-mpc.
    #[arg(long, default_value = "wdr-mpc")]
    method: Method,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Evaluation rounds per sweep cell.
    #[arg(long, default_value_t = 5)]
    rounds: usize,
    /// Replay events per round.
    #[arg(long, default_value_t = 200)]
    tests: usize,
    /// Training sample sizes, comma separated.
    #[arg(long, value_delimiter = ',')]
    sample_sizes: Option<Vec<usize>>,
    /// Station counts, comma separated.
    #[arg(long, value_delimiter = ',')]
    stations: Option<Vec<usize>>,
    /// Ambiguity radii, comma separated.
    #[arg(long, value_delimiter = ',')]
    epsilons: Option<Vec<f64>>,
    /// Confidence levels, comma separated.
    #[arg(long, value_delimiter = ',')]
    betas: Option<Vec<f64>>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Methods to compare, comma separated; defaults to all four.
    #[arg(long, value_delimiter = ',')]
    method: Option<Vec<Method>>,
    #[arg(long, default_value_t = 20)]
    rounds: usize,
    #[arg(long, default_value_t = 500)]
    tests: usize,
}

#[derive(Args)]
struct ValidateArgs {
    /// Network description to check in addition to the bundled instances.
    #[arg(long)]
    network: Option<PathBuf>,
    /// JSON run configuration to check.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

fn ensure_out(dir: &Path) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

fn cmd_solve(args: &SolveArgs) -> Result<(), HarnessError> {
    let cfg = args.input.config()?;
    let scn = args.input.scenario(&cfg)?;
    let run = run_method(&scn, &cfg, args.method)?;
    ensure_out(&args.input.out)?;
    let actions = args.input.out.join("results.csv");
    write_actions_csv(&actions, &scn.grid, &run.result)?;
    let summary = run_summary(&cfg, &run);
    std::fs::write(
        args.input.out.join("summary.json"),
        serde_json::to_string_pretty(&summary)
            .map_err(|e| HarnessError::Config(format!("summary serialization: {e}")))?,
    )?;
    if let (Some(tube), Some(sets)) = (&run.tube, &run.sets) {
        write_tube_csv(&args.input.out.join("tube.csv"), tube, sets)?;
    }
    println!(
        "{}: committed {} slots, weighted objective {:.6}, {} windows, mean solve {:.1} ms",
        run.method,
        run.result.committed.len(),
        run.result.cost.weighted_total(&cfg.weights()),
        run.result.windows.len(),
        1e3 * run.mean_window_solve().as_secs_f64(),
    );
    println!("wrote {}", actions.display());
    Ok(())
}

fn cmd_tube(args: &TubeArgs) -> Result<(), HarnessError> {
    let cfg = args.input.config()?;
    if !matches!(args.method, Method::WdrMpc | Method::SaaMpc) {
        return Err(HarnessError::Config(format!(
            "{} does not size a tube",
            args.method
        )));
    }
    let scn = args.input.scenario(&cfg)?;
    let run = run_method(&scn, &cfg, args.method)?;
    let (Some(tube), Some(sets)) = (&run.tube, &run.sets) else {
        return Err(HarnessError::Config(
            "network has no stations, nothing to size".into(),
        ));
    };
    ensure_out(&args.input.out)?;
    let path = args.input.out.join("tube.csv");
    write_tube_csv(&path, tube, sets)?;
    println!(
        "{}: tube over {} slots x {} stations, total width {:.6}, offline {:.1} ms",
        run.method,
        tube.horizon,
        tube.dim,
        tube.total_width(),
        1e3 * run.offline_time.as_secs_f64(),
    );
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_sweep(args: &SweepArgs) -> Result<(), HarnessError> {
    let cfg = args.input.config()?;
    let scn = args.input.scenario(&cfg)?;
    let mut axes = SweepAxes::default();
    if let Some(v) = &args.epsilons {
        axes.epsilon = v.clone();
    }
    if let Some(v) = &args.betas {
        axes.beta = v.clone();
    }
    if let Some(v) = &args.sample_sizes {
        axes.sample_sizes = v.clone();
    }
    if let Some(v) = &args.stations {
        axes.station_counts = v.clone();
    }
    let summary = sweep_and_emit(&scn, &cfg, &axes, args.rounds, args.tests, &args.input.out)?;
    for f in &summary.files {
        println!("wrote {f}");
    }
    if summary.failures.is_empty() {
        println!("all cells completed ({})", summary.fingerprint);
    } else {
        println!(
            "{} cells failed, see {}",
            summary.failures.len(),
            args.input.out.join("log.txt").display()
        );
    }
    Ok(())
}

fn cmd_evaluate(args: &EvaluateArgs) -> Result<(), HarnessError> {
    let cfg = args.input.config()?;
    let scn = args.input.scenario(&cfg)?;
    let methods = args.method.clone().unwrap_or_else(|| Method::ALL.to_vec());
    let results = compare_methods(&scn, &cfg, &methods, args.rounds, args.tests)?;
    ensure_out(&args.input.out)?;
    let reports: Vec<_> = results.iter().map(|(_, rep)| rep.clone()).collect();
    write_reliability_csv(&args.input.out.join("evaluate.csv"), &reports)?;
    #[derive(serde::Serialize)]
    struct EvalSummary<'a> {
        fingerprint: String,
        config: &'a RunConfig,
        rounds: usize,
        tests: usize,
        reports: &'a [tubesched::harness::ReliabilityReport],
    }
    std::fs::write(
        args.input.out.join("evaluate.json"),
        serde_json::to_string_pretty(&EvalSummary {
            fingerprint: machine_fingerprint(),
            config: &cfg,
            rounds: args.rounds,
            tests: args.tests,
            reports: &reports,
        })
        .map_err(|e| HarnessError::Config(format!("report serialization: {e}")))?,
    )?;
    for rep in &reports {
        println!(
            "{:>10}: reliability {:.4} +- {:.4} ({} rounds x {} tests), online {:.1} ms/window, offline {:.1} ms",
            rep.method,
            rep.mean_reliability,
            rep.std_reliability,
            args.rounds,
            args.tests,
            1e3 * rep.mean_window_solve_s,
            1e3 * rep.offline_s,
        );
    }
    println!("wrote {}", args.input.out.join("evaluate.csv").display());
    Ok(())
}

fn cmd_validate(args: &ValidateArgs) -> Result<(), HarnessError> {
    let cfg = {
        let mut c = RunConfig::load(args.config.as_deref())?;
        if let Some(s) = args.seed {
            c.seed = s;
        }
        c
    };
    println!("config ok ({})", machine_fingerprint());
    for (tag, net) in [
        ("3-bus", synth_network_3()),
        ("38-bus", synth_network_38()),
        ("94-bus", synth_network_94()),
    ] {
        GridModel::new(net)?;
        println!("bundled {tag} instance ok");
    }
    if let Some(path) = &args.network {
        let grid = GridModel::load(path)?;
        println!(
            "{}: {} buses, {} generators, {} renewable units, {} stations",
            path.display(),
            grid.num_buses(),
            grid.net.generators.len(),
            grid.net.res_units.len(),
            grid.net.stations.len()
        );
    }
    // One small end-to-end solve so a broken build cannot validate.
    let net = synth_network_3();
    let res = tubesched::harness::synth_res_pool(&net, 40, 0.2, cfg.seed);
    let dist = tubesched::harness::synth_dist_pool(&net, 60, 0.2, cfg.seed ^ 1)?;
    let scn = Scenario::new(GridModel::new(net)?, res, dist)?;
    let small = RunConfig {
        t_c: 3,
        t_l: 2,
        n_static: 20,
        n_dynamic: 40,
        ..cfg
    };
    let run = run_method(&scn, &small, Method::WdrMpc)?;
    println!(
        "probe schedule ok: {} slots committed, objective {:.6}",
        run.result.committed.len(),
        run.result.cost.weighted_total(&small.weights())
    );
    Ok(())
}

fn exit_for(err: &HarnessError) -> u8 {
    match err {
        HarnessError::Sched(SchedError::InfeasibleWindow { .. }) => 2,
        HarnessError::Config(_)
        | HarnessError::Data(_)
        | HarnessError::Grid(_)
        | HarnessError::Io(_) => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.cmd {
        Cmd::Solve(a) => cmd_solve(a),
        Cmd::Tube(a) => cmd_tube(a),
        Cmd::Sweep(a) => cmd_sweep(a),
        Cmd::Evaluate(a) => cmd_evaluate(a),
        Cmd::Validate(a) => cmd_validate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_for(&e))
        }
    }
}
