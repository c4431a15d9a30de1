//! Phase-based command-line driver: `fom` (reference solve and snapshot
//! collection), `merge` (snapshot-set union), `offline` (partition and
//! window-basis construction), `online` (hyper-reduced simulation),
//! `restore` (error and speed-up evaluation), and `pareto` (non-dominated
//! filtering of report collections).
//!
//! Exit codes: 0 on success, 1 on user errors (bad flags, missing or
//! malformed files), 2 on runtime failures (solver aborts, rank
//! deficiency).

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;

use crate::fom::{discretize, FomConfig, Solver};
use crate::metrics::{pareto_front, read_reports, relative_errors, write_reports, RunReport};
use crate::online::{run_rom, OnlineConfig};
use crate::rom::{build_window_roms, load_windows, save_windows, OfflineMeta, RomBuildConfig};
use crate::snapshots::{load_state, save_state, SnapshotSet};
use crate::windows::{partition, Indicator, IndicatorKind};
use crate::{Error, Result};

#[derive(Parser)]
#[command(
    name = "hydro-rom",
    about = "Windowed hyper-reduced ROMs for 2D Lagrangian Rayleigh-Taylor hydrodynamics",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full order model; optionally write snapshots and the final state.
    Fom(FomArgs),
    /// Merge snapshot files into one training set.
    Merge(MergeArgs),
    /// Partition the indicator range and build per-window reduced bases.
    Offline(OfflineArgs),
    /// Run the windowed hyper-reduced simulation from an offline directory.
    Online(OnlineArgs),
    /// Evaluate errors and speed-up of an online run against a reference.
    Restore(RestoreArgs),
    /// Filter report rows to the (velocity error, relative wall time) Pareto front.
    Pareto(ParetoArgs),
}

#[derive(Args)]
struct ProblemArgs {
    /// Mesh refinement level (0-6).
    #[arg(long, default_value_t = 2)]
    refine: usize,
    /// Kinematic polynomial degree.
    #[arg(long, default_value_t = 2)]
    ok: usize,
    /// Thermodynamic polynomial degree.
    #[arg(long, default_value_t = 1)]
    ot: usize,
}

#[derive(Args)]
struct FomArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    /// Final time.
    #[arg(long, default_value_t = 1.5)]
    tf: f64,
    /// Atwood number of the run.
    #[arg(long, default_value_t = 1.0 / 3.0)]
    atwood: f64,
    #[arg(long, default_value_t = 0.5)]
    cfl: f64,
    /// Collect stage snapshots into this file.
    #[arg(long)]
    write_snapshots: Option<PathBuf>,
    /// Write the final state for later error evaluation.
    #[arg(long)]
    write_solution: Option<PathBuf>,
    /// Write the run report CSV.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct MergeArgs {
    /// Snapshot files to merge.
    #[arg(long, num_args = 1.., required = true)]
    inputs: Vec<PathBuf>,
    /// Merged snapshot file.
    #[arg(long, required = true)]
    output: PathBuf,
    /// Intermediate samples per window and parameter; with --ef and
    /// --indicator, also writes the partition sidecar for audit.
    #[arg(long)]
    nsample: Option<usize>,
    /// Energy fraction, 1 - delta_sigma.
    #[arg(long)]
    ef: Option<f64>,
    /// Partition indicator: "time" or "distance".
    #[arg(long)]
    indicator: Option<String>,
    /// Where to write the partition sidecar (default: <output>.partition.txt).
    #[arg(long)]
    partition_out: Option<PathBuf>,
}

#[derive(Args)]
struct OfflineArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    /// Training snapshot file (from `fom` or `merge`).
    #[arg(long, required = true)]
    snapshots: PathBuf,
    /// Intermediate samples per window and parameter.
    #[arg(long, default_value_t = 20)]
    nsample: usize,
    /// Energy fraction, 1 - delta_sigma.
    #[arg(long, default_value_t = 0.9999)]
    ef: f64,
    /// Partition indicator: "time" or "distance".
    #[arg(long, default_value = "time")]
    indicator: String,
    /// Oversampling factor of the momentum force term.
    #[arg(long, default_value_t = 2)]
    sfac_v: usize,
    /// Oversampling factor of the energy force term.
    #[arg(long, default_value_t = 2)]
    sfac_e: usize,
    /// Output directory for window bases and the partition sidecar.
    #[arg(long, required = true)]
    outdir: PathBuf,
}

#[derive(Args)]
struct OnlineArgs {
    /// Offline basis directory.
    #[arg(long, required = true)]
    bases: PathBuf,
    /// Atwood number of the online run.
    #[arg(long, required = true)]
    atwood: f64,
    /// Final time of the online run.
    #[arg(long, required = true)]
    tf: f64,
    #[arg(long, default_value_t = 0.5)]
    cfl: f64,
    /// Abort when the indicator leaves the offline range instead of
    /// continuing in the last window.
    #[arg(long, default_value_t = false)]
    strict_windows: bool,
    /// Write the final lifted state.
    #[arg(long)]
    write_solution: Option<PathBuf>,
    /// Write the per-step trace CSV (t, dt, window, indicator).
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Write the run report CSV.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct RestoreArgs {
    /// Final state written by `online`.
    #[arg(long, required = true)]
    rom_solution: PathBuf,
    /// Reference final state written by `fom --write-solution`.
    #[arg(long, required = true)]
    fom_solution: PathBuf,
    /// Report written by `online`.
    #[arg(long, required = true)]
    rom_report: PathBuf,
    /// Report written by the reference `fom` run.
    #[arg(long, required = true)]
    fom_report: PathBuf,
    /// Combined report with errors and speed-up.
    #[arg(long, required = true)]
    output: PathBuf,
}

#[derive(Args)]
struct ParetoArgs {
    /// Report CSV (restore rows).
    #[arg(long, required = true)]
    input: PathBuf,
    /// Non-dominated rows, ordered by relative wall time.
    #[arg(long, required = true)]
    output: PathBuf,
}

/// Parses arguments from the process environment and runs; returns the
/// process exit code.
pub fn run() -> i32 {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::Input(_) | Error::Format(_) | Error::Io(_) => 1,
                _ => 2,
            }
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Fom(args) => cmd_fom(args),
        Command::Merge(args) => cmd_merge(args),
        Command::Offline(args) => cmd_offline(args),
        Command::Online(args) => cmd_online(args),
        Command::Restore(args) => cmd_restore(args),
        Command::Pareto(args) => cmd_pareto(args),
    }
}

fn atwood_config(atwood: f64, tf: f64, cfl: f64) -> FomConfig {
    FomConfig {
        t_final: tf,
        cfl,
        ..FomConfig::with_atwood(atwood)
    }
}

fn cmd_fom(args: FomArgs) -> Result<()> {
    let config = atwood_config(args.atwood, args.tf, args.cfl);
    let disc = discretize(args.problem.refine, args.problem.ok, args.problem.ot, &config)?;
    let solver = Solver::new(&disc, config.clone())?;
    println!(
        "fom: level {} ({} elements, n_kin {}, n_thermo {}), A = {:.6}, tf = {}",
        args.problem.refine, disc.mesh.element_count, disc.spaces.n_kin, disc.spaces.n_thermo,
        args.atwood, args.tf
    );

    let mut snapshots = args
        .write_snapshots
        .as_ref()
        .map(|_| SnapshotSet::new(disc.spaces.n_kin, disc.spaces.n_thermo));
    if let Some(set) = snapshots.as_mut() {
        set.add_parameter(args.atwood);
    }
    let mut record_err = None;
    let (final_state, summary) = solver.run(|step, stage, state| {
        if let Some(set) = snapshots.as_mut() {
            if record_err.is_none() {
                if let Err(e) = set.record(0, step, stage, state) {
                    record_err = Some(e);
                }
            }
        }
    })?;
    if let Some(e) = record_err {
        return Err(e);
    }
    println!(
        "fom: {} steps to t = {:.6}, time loop {:.3}s (setup {:.3}s){}",
        summary.steps,
        final_state.time,
        summary.loop_seconds,
        summary.setup_seconds,
        if summary.negative_pressure {
            ", negative pressure encountered"
        } else {
            ""
        }
    );

    if let (Some(path), Some(set)) = (&args.write_snapshots, &snapshots) {
        set.save(path)?;
        println!("fom: wrote {} snapshot columns to {}", set.total_columns(), path.display());
    }
    if let Some(path) = &args.write_solution {
        save_state(path, &final_state, args.atwood)?;
        println!("fom: wrote final state to {}", path.display());
    }
    if let Some(path) = &args.report {
        let report = RunReport {
            kind: "fom".into(),
            refinement: args.problem.refine,
            atwood: args.atwood,
            density_ratio: config.density_ratio,
            t_final: args.tf,
            cfl: args.cfl,
            setup_seconds: summary.setup_seconds,
            loop_seconds: summary.loop_seconds,
            steps: summary.steps,
            negative_pressure: summary.negative_pressure,
            ..Default::default()
        };
        write_reports(path, &[report])?;
        println!("fom: wrote report to {}", path.display());
    }
    Ok(())
}

fn cmd_merge(args: MergeArgs) -> Result<()> {
    let mut sets = Vec::with_capacity(args.inputs.len());
    for p in &args.inputs {
        sets.push(SnapshotSet::load(p)?);
    }
    let merged = SnapshotSet::merge(sets)?;
    merged.save(&args.output)?;
    println!(
        "merge: {} parameters, {} columns -> {}",
        merged.n_parameters(),
        merged.total_columns(),
        args.output.display()
    );
    if let (Some(nsample), Some(_ef), Some(kind)) = (args.nsample, args.ef, args.indicator.as_ref()) {
        let kind: IndicatorKind = kind.parse()?;
        let indicator = indicator_for(kind, merged.n_kin)?;
        let part = partition(&merged, nsample, &indicator)?;
        let out = args
            .partition_out
            .unwrap_or_else(|| args.output.with_extension("partition.txt"));
        part.write_sidecar(&out)?;
        println!(
            "merge: partition has {} windows (psi in [{:.4e}, {:.4e}]) -> {}",
            part.n_windows(),
            part.psi_start,
            part.groups.last().map(|g| g.psi_end).unwrap_or(part.psi_start),
            out.display()
        );
        for w in &part.warnings {
            println!("merge: warning: {w}");
        }
    }
    Ok(())
}

/// Interface dofs can be rebuilt from any discretization with matching
/// n_kin; resolve the refinement level from the kinematic dof count.
fn refinement_from_n_kin(n_kin: usize, kin_degree: usize) -> Result<usize> {
    for level in 0..=6usize {
        let nx = 1usize << level;
        let scalar = (kin_degree * nx + 1) * (kin_degree * 4 * nx + 1);
        if 2 * scalar == n_kin {
            return Ok(level);
        }
    }
    Err(Error::Input(format!(
        "no refinement level in [0, 6] matches n_kin = {n_kin} at degree {kin_degree}"
    )))
}

fn indicator_for(kind: IndicatorKind, n_kin: usize) -> Result<Indicator> {
    match kind {
        IndicatorKind::Time => Ok(Indicator::time()),
        IndicatorKind::PenetrationDistance => {
            let level = refinement_from_n_kin(n_kin, 2)?;
            let mesh = crate::mesh::build_mesh(level)?;
            let spaces = crate::mesh::build_spaces(&mesh, 2, 1)?;
            Ok(Indicator::penetration_distance(&spaces))
        }
    }
}

fn cmd_offline(args: OfflineArgs) -> Result<()> {
    let set = SnapshotSet::load(&args.snapshots)?;
    let first_mu = set
        .parameters
        .first()
        .ok_or_else(|| Error::Input("snapshot set has no parameters".into()))?
        .mu;
    let config = atwood_config(first_mu, 1.0, 0.5);
    let disc = discretize(args.problem.refine, args.problem.ok, args.problem.ot, &config)?;
    if disc.spaces.n_kin != set.n_kin || disc.spaces.n_thermo != set.n_thermo {
        return Err(Error::Input(format!(
            "snapshot sizes ({}, {}) do not match level {} degrees ({}, {})",
            set.n_kin, set.n_thermo, args.problem.refine, args.problem.ok, args.problem.ot
        )));
    }
    let kind: IndicatorKind = args.indicator.parse()?;
    let indicator = Indicator::of_kind(kind, &disc.spaces);
    if !(args.ef > 0.0 && args.ef <= 1.0) {
        return Err(Error::Config(format!("energy fraction {} outside (0, 1]", args.ef)));
    }
    let delta_sigma = 1.0 - args.ef;

    let part = partition(&set, args.nsample, &indicator)?;
    for w in &part.warnings {
        println!("offline: warning: {w}");
    }
    let build = RomBuildConfig {
        delta_sigma,
        lambda_f1: args.sfac_v,
        lambda_ftv: args.sfac_e,
    };
    let (windows, sizes) = build_window_roms(&disc.mass, &set, &part, &build)?;
    println!(
        "offline: {} windows over psi in [{:.4e}, {:.4e}], indicator = {}",
        windows.len(),
        part.psi_start,
        windows.last().map(|w| w.psi_end).unwrap_or(part.psi_start),
        kind
    );
    for s in &sizes {
        println!(
            "offline: window {:>4}: columns {:>4}, n_v {:>3}, n_e {:>3}, n_x {:>3}, m_f1 {:>4}, m_ftv {:>4}",
            s.index + 1, s.columns, s.n_v, s.n_e, s.n_x, s.m_f1, s.m_ftv
        );
    }
    let meta = OfflineMeta {
        refinement: args.problem.refine,
        kin_degree: args.problem.ok,
        thermo_degree: args.problem.ot,
        n_kin: set.n_kin,
        n_thermo: set.n_thermo,
        indicator: kind,
        delta_sigma,
        n_sample: args.nsample,
        lambda_f1: args.sfac_v,
        lambda_ftv: args.sfac_e,
        training_mu: set.parameters.iter().map(|p| p.mu).collect(),
        psi_start: part.psi_start,
        n_windows: windows.len(),
    };
    save_windows(&args.outdir, &meta, &windows, &part)?;
    println!("offline: wrote window bases to {}", args.outdir.display());
    Ok(())
}

fn cmd_online(args: OnlineArgs) -> Result<()> {
    let (meta, windows) = load_windows(&args.bases)?;
    let config = atwood_config(args.atwood, args.tf, args.cfl);
    let disc = discretize(meta.refinement, meta.kin_degree, meta.thermo_degree, &config)?;
    let indicator = Indicator::of_kind(meta.indicator, &disc.spaces);
    let online_config = OnlineConfig {
        fom: config.clone(),
        strict_windows: args.strict_windows,
        forced_dts: None,
    };
    println!(
        "online: {} windows, indicator = {}, A = {:.6}, tf = {}",
        windows.len(),
        meta.indicator,
        args.atwood,
        args.tf
    );
    let (final_state, trace, summary) = run_rom(&disc, &windows, &indicator, &online_config)?;
    for w in &summary.warnings {
        println!("online: warning: {w}");
    }
    println!(
        "online: {} steps to t = {:.6}, {} of {} windows, time loop {:.3}s (setup {:.3}s)",
        summary.steps,
        final_state.time,
        summary.windows_traversed,
        windows.len(),
        summary.loop_seconds,
        summary.setup_seconds
    );
    if let Some(path) = &args.write_solution {
        save_state(path, &final_state, args.atwood)?;
        println!("online: wrote final state to {}", path.display());
    }
    if let Some(path) = &args.trace {
        trace.write_csv(path)?;
        println!("online: wrote trace to {}", path.display());
    }
    if let Some(path) = &args.report {
        let report = RunReport {
            kind: "online".into(),
            refinement: meta.refinement,
            atwood: args.atwood,
            density_ratio: config.density_ratio,
            t_final: args.tf,
            cfl: args.cfl,
            delta_sigma: Some(meta.delta_sigma),
            n_sample: Some(meta.n_sample),
            lambda_f1: Some(meta.lambda_f1),
            lambda_ftv: Some(meta.lambda_ftv),
            indicator: Some(meta.indicator.to_string()),
            setup_seconds: summary.setup_seconds,
            loop_seconds: summary.loop_seconds,
            steps: summary.steps,
            windows_traversed: Some(summary.windows_traversed),
            negative_pressure: summary.negative_pressure,
            notes: summary.warnings.join("; "),
            ..Default::default()
        };
        write_reports(path, &[report])?;
        println!("online: wrote report to {}", path.display());
    }
    Ok(())
}

fn cmd_restore(args: RestoreArgs) -> Result<()> {
    let (rom_state, _) = load_state(&args.rom_solution)?;
    let (fom_state, _) = load_state(&args.fom_solution)?;
    let (eps_v, eps_e, eps_x) = relative_errors(&fom_state, &rom_state)?;
    let rom_rows = read_reports(&args.rom_report)?;
    let fom_rows = read_reports(&args.fom_report)?;
    let rom = rom_rows
        .first()
        .ok_or_else(|| Error::Input("empty online report".into()))?;
    let fom = fom_rows
        .first()
        .ok_or_else(|| Error::Input("empty fom report".into()))?;
    if rom.loop_seconds <= 0.0 {
        return Err(Error::Input("online report has non-positive loop time".into()));
    }
    let speedup = fom.loop_seconds / rom.loop_seconds;
    let mut combined = rom.clone();
    combined.kind = "restore".into();
    combined.eps_v = Some(eps_v);
    combined.eps_e = Some(eps_e);
    combined.eps_x = Some(eps_x);
    combined.speedup = Some(speedup);
    write_reports(&args.output, &[combined])?;
    println!(
        "restore: eps_v {eps_v:.4e}, eps_e {eps_e:.4e}, eps_x {eps_x:.4e}, speed-up {speedup:.4}"
    );
    println!("restore: wrote report to {}", args.output.display());
    Ok(())
}

fn cmd_pareto(args: ParetoArgs) -> Result<()> {
    let rows = read_reports(&args.input)?;
    let front = pareto_front(&rows)?;
    write_reports(&args.output, &front)?;
    println!(
        "pareto: kept {} of {} rows -> {}",
        front.len(),
        rows.len(),
        args.output.display()
    );
    Ok(())
}
