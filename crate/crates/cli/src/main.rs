use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rsmpc_core::sim_harness::{
    emit_report, run_alpha_sweep, run_scaling_study, write_runs, ExperimentConfig, ExperimentReport,
    ScalingSettings,
};
use rsmpc_core::terminal_design::DesignFile;
use rsmpc_core::{solve_pe, verify_terminal, EnvelopeSpec, Error, MpcController, Plant, Pmf, TerminalDesign, Vector};

/// Risk-sensitive MPC toolkit.
///
/// Exit status: 0 on success, 2 when terminal synthesis is infeasible,
/// 3 on solver failure, 1 for anything else.
#[derive(Parser)]
#[command(name = "rsmpc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize the terminal set, cost and gain for one envelope.
    Design(DesignArgs),
    /// Check a saved design against the model with direct eigenvalue tests.
    Verify(VerifyArgs),
    /// Simulate one closed-loop trajectory.
    Run(RunArgs),
    /// Run the envelope sweep and, if configured, the scaling study.
    Sweep(SweepArgs),
    /// Time the online program over a range of horizons on a random system.
    Bench(BenchArgs),
}

#[derive(Args)]
struct DesignArgs {
    /// Model or experiment file (TOML or JSON).
    #[arg(long, short)]
    config: PathBuf,
    /// `expectation` or `cvar:<alpha>`; defaults to the first envelope of the config.
    #[arg(long, short)]
    envelope: Option<String>,
    /// Output JSON file; printed to stdout when absent.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, short)]
    config: PathBuf,
    /// Design file written by `rsmpc design`.
    #[arg(long, short)]
    design: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, short)]
    config: PathBuf,
    /// Saved design; synthesized from `--envelope` when absent.
    #[arg(long, short)]
    design: Option<PathBuf>,
    #[arg(long, short)]
    envelope: Option<String>,
    /// Initial state, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    x0: Option<Vec<f64>>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for `trajectory.csv` and `trajectory.json`.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long, short)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides `experiment.out`.
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Worker threads; all cores when absent.
    #[arg(long, short)]
    jobs: Option<usize>,
    #[arg(long)]
    runs: Option<usize>,
    /// Also write one row per run and step.
    #[arg(long)]
    per_run: bool,
}

#[derive(Args)]
struct BenchArgs {
    /// Experiment file with a `[scaling]` table; built-in defaults when absent.
    #[arg(long, short)]
    config: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    horizons: Option<Vec<usize>>,
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, short)]
    jobs: Option<usize>,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Design(a) => design(a),
        Command::Verify(a) => verify(a),
        Command::Run(a) => run(a),
        Command::Sweep(a) => sweep(a),
        Command::Bench(a) => bench(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<Error>() {
        Some(Error::SynthesisInfeasible(_)) => 2,
        Some(Error::Solver(_)) => 3,
        _ => 1,
    }
}

fn load_config(path: &Path) -> Result<ExperimentConfig> {
    ExperimentConfig::load(path).with_context(|| format!("reading {}", path.display()))
}

fn pick_envelope(arg: Option<&str>, config: &ExperimentConfig) -> Result<EnvelopeSpec> {
    if let Some(s) = arg {
        return Ok(s.parse()?);
    }
    let listed = match &config.experiment {
        Some(e) => e.specs()?,
        None => Vec::new(),
    };
    listed.into_iter().next().ok_or_else(|| anyhow!("no envelope given and none listed in the config"))
}

fn synthesize(plant: &Plant, spec: &EnvelopeSpec) -> Result<(Vec<Pmf>, TerminalDesign)> {
    let vertices = spec.build(plant.model.pmf())?.vertices().to_vec();
    let design = solve_pe(plant, &vertices).with_context(|| format!("synthesizing for {}", spec.label()))?;
    Ok((vertices, design))
}

fn write_json(path: Option<&Path>, value: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match path {
        Some(p) => std::fs::write(p, text + "\n").with_context(|| format!("writing {}", p.display()))?,
        None => println!("{text}"),
    }
    Ok(())
}

fn design(a: DesignArgs) -> Result<()> {
    let config = load_config(&a.config)?;
    let plant = config.plant()?;
    let spec = pick_envelope(a.envelope.as_deref(), &config)?;
    let (vertices, design) = synthesize(&plant, &spec)?;
    let report = verify_terminal(&plant, &vertices, &design)?;
    if !report.pass {
        eprintln!("warning: synthesized design fails direct verification (worst margin {:e})", report.worst());
    }
    write_json(a.out.as_deref(), &DesignFile::new(spec, &vertices, &design, report))
}

fn verify(a: VerifyArgs) -> Result<()> {
    let plant = load_config(&a.config)?.plant()?;
    let file = DesignFile::load(&a.design).with_context(|| format!("reading {}", a.design.display()))?;
    let report = verify_terminal(&plant, &file.vertex_list()?, &file.design()?)?;
    write_json(None, &report)?;
    if !report.pass {
        bail!("design fails verification (worst margin {:e})", report.worst());
    }
    Ok(())
}

fn run(a: RunArgs) -> Result<()> {
    let config = load_config(&a.config)?;
    let plant = config.plant()?;
    let exp = config.experiment.as_ref();
    let (vertices, design) = match &a.design {
        Some(path) => {
            let file = DesignFile::load(path).with_context(|| format!("reading {}", path.display()))?;
            (file.vertex_list()?, file.design()?)
        }
        None => synthesize(&plant, &pick_envelope(a.envelope.as_deref(), &config)?)?,
    };
    let x0 = a.x0.or_else(|| exp.map(|e| e.x0.clone())).ok_or_else(|| anyhow!("no initial state given"))?;
    let horizon = a.horizon.or(exp.map(|e| e.horizon)).unwrap_or(4);
    let steps = a.steps.or(exp.map(|e| e.steps)).unwrap_or(15);
    let seed = a.seed.or(exp.map(|e| e.seed)).unwrap_or(0);

    let controller = MpcController::new(plant, design, vertices, horizon)?;
    let traj = controller.closed_loop(&Vector::from_vec(x0), steps, seed)?;
    if let Some(dir) = &a.out {
        std::fs::create_dir_all(dir)?;
        write_runs(&dir.join("trajectory.csv"), std::slice::from_ref(&traj))?;
        write_json(Some(&dir.join("trajectory.json")), &traj)?;
    }
    write_json(
        None,
        &serde_json::json!({
            "steps": traj.steps.len(),
            "cumulative_cost": traj.cumulative_cost(),
            "final_state": traj.final_state,
            "violations": traj.violations,
            "infeasible_steps": traj.infeasible_steps,
            "lyapunov_violations": traj.lyapunov_violations,
            "max_lyapunov_gap": traj.max_lyapunov_gap,
            "aborted": traj.aborted,
        }),
    )
}

fn sweep(a: SweepArgs) -> Result<()> {
    let mut config = load_config(&a.config)?;
    if config.experiment.is_none() && config.scaling.is_none() {
        bail!("{} has neither an [experiment] nor a [scaling] table", a.config.display());
    }
    let mut report = ExperimentReport::default();
    let mut out = a.out.clone();
    let plant = config.model.as_ref().map(|m| m.into_plant()).transpose()?;
    if let (Some(exp), Some(plant)) = (config.experiment.as_mut(), plant.as_ref()) {
        if let Some(seed) = a.seed {
            exp.seed = seed;
        }
        if let Some(runs) = a.runs {
            exp.runs = runs;
        }
        out = out.or_else(|| exp.out.as_ref().map(|o| a.config.parent().unwrap_or(Path::new(".")).join(o)));
        report = run_alpha_sweep(plant, exp, a.jobs)?;
        for env in &report.envelopes {
            match &env.error {
                Some(reason) => eprintln!("{}: no runs ({reason})", env.label),
                None => eprintln!(
                    "{}: {}/{} runs feasible, {} violations",
                    env.label, env.feasible_runs, env.runs, env.violations
                ),
            }
        }
    }
    if let Some(scaling) = config.scaling.as_mut() {
        if let Some(seed) = a.seed {
            scaling.seed = seed;
        }
        let study = run_scaling_study(scaling, a.jobs)?;
        report.scaling = study.scaling;
        report.scaling_system = study.scaling_system;
    }
    let dir = out.unwrap_or_else(|| PathBuf::from("results"));
    for path in emit_report(&report, &dir, a.per_run)? {
        println!("{}", path.display());
    }
    Ok(())
}

fn bench(a: BenchArgs) -> Result<()> {
    let mut settings = match &a.config {
        Some(path) => load_config(path)?.scaling.unwrap_or_default(),
        None => ScalingSettings::default(),
    };
    if let Some(h) = a.horizons {
        settings.horizons = h;
    }
    if let Some(r) = a.runs {
        settings.runs = r;
    }
    if let Some(s) = a.seed {
        settings.seed = s;
    }
    let report = run_scaling_study(&settings, a.jobs)?;
    println!("{:>3} {:>8} {:>10} {:>10}", "N", "nodes", "mean_ms", "max_ms");
    for row in &report.scaling {
        match (&row.skipped, row.control_nodes) {
            (Some(reason), _) => println!("{:>3} skipped: {reason}", row.horizon),
            (None, nodes) => println!(
                "{:>3} {:>8} {:>10.2} {:>10.2}",
                row.horizon,
                nodes.unwrap_or(0),
                row.mean_ms.unwrap_or(f64::NAN),
                row.max_ms.unwrap_or(f64::NAN)
            ),
        }
    }
    if let Some(dir) = &a.out {
        emit_report(&report, dir, false)?;
    }
    Ok(())
}
