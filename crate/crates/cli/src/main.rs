mod io;
mod report;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use ipop_dispatch::curvefit::DEFAULT_DEGREE;
use ipop_dispatch::oracle::DEFAULT_GRID_STEP;
use ipop_dispatch::synth::{reference_samples, DEFAULT_POINTS};
use ipop_dispatch::tps::{current_stress, phase_shifts, voltage_gain, OperatingPoint};
use ipop_dispatch::{
    anneal, build_dispatch_schedule, compare_with_equal_split, enumerate_combinations, fit_profile,
    grid_search, ActiveSet, AllocatorRegistry, AnnealerConfig, Error, Fleet, ScheduleOptions,
};
use serde::Serialize;
use serde_json::json;

use crate::io::{emit, report_json};
use crate::report::{sha256_hex, InputDigest, RunReport};

const LOG_ENV: &str = "IPOP_DISPATCH_LOG";

#[derive(Parser, Debug)]
#[command(
    name = "ipop-dispatch",
    version,
    about = "Efficiency-optimal load sharing for parallel converter modules"
)]
struct Cli {
    /// Seed for stochastic commands (`synth`, `anneal`, `--method anneal`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Write the primary output here instead of standard output.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Suppress the run report on standard error.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct FleetArgs {
    /// Profile JSON file; repeat once per module.
    #[arg(long = "profile", short = 'p', required = true)]
    profiles: Vec<PathBuf>,
    /// Restrict to these module ids (comma separated).
    #[arg(long, value_delimiter = ',')]
    modules: Vec<String>,
}

#[derive(Args, Debug)]
struct MethodArgs {
    /// Allocator used for each active set.
    #[arg(long, default_value = "equal-incremental")]
    method: String,
    /// Annealer configuration JSON for `--method anneal`.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Grid step in watts for `--method grid`.
    #[arg(long, default_value_t = DEFAULT_GRID_STEP)]
    grid_step: f64,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit per-module power polynomials to a sample CSV.
    Fit {
        samples: PathBuf,
        #[arg(long, default_value_t = DEFAULT_DEGREE)]
        degree: usize,
        /// Directory receiving one `<module_id>.json` profile per module.
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Split a demand across the active modules.
    Dispatch {
        #[command(flatten)]
        fleet: FleetArgs,
        #[arg(long)]
        demand: f64,
        #[command(flatten)]
        method: MethodArgs,
    },
    /// Best module combination per demand range, with switching points.
    Schedule {
        #[command(flatten)]
        fleet: FleetArgs,
        #[arg(long)]
        p_min: f64,
        #[arg(long)]
        p_max: f64,
        #[arg(long, default_value_t = 10.0)]
        step: f64,
        /// Evaluate every module subset instead of priority-list prefixes.
        #[arg(long)]
        exhaustive: bool,
        /// Also write the priority list, ranges with example allocations
        /// and switching points as JSON.
        #[arg(long)]
        json_out: Option<PathBuf>,
        #[command(flatten)]
        method: MethodArgs,
    },
    /// Simulated annealing for one demand.
    Anneal {
        #[command(flatten)]
        fleet: FleetArgs,
        #[arg(long)]
        demand: f64,
        /// Annealer configuration JSON; defaults apply when absent.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Optimised dispatch against every module at an equal share.
    Compare {
        #[command(flatten)]
        fleet: FleetArgs,
        #[arg(long)]
        demand: f64,
        #[arg(long)]
        exhaustive: bool,
        #[command(flatten)]
        method: MethodArgs,
    },
    /// Minimum-current-stress phase shifts for a dual active bridge.
    Tps {
        /// Voltage gain; or give --n, --u-in and --u-out.
        #[arg(long, required_unless_present_all = ["n", "u_in", "u_out"], conflicts_with_all = ["n", "u_in", "u_out"])]
        k: Option<f64>,
        #[arg(long)]
        n: Option<f64>,
        #[arg(long)]
        u_in: Option<f64>,
        #[arg(long)]
        u_out: Option<f64>,
        /// Per-unit transmitted power in [0, 1].
        #[arg(long)]
        p: f64,
    },
    /// Emit the pinned two-module reference sample set as CSV.
    Synth {
        #[arg(long, default_value_t = DEFAULT_POINTS)]
        points: usize,
        /// Half-width of uniform noise added to input power, in watts.
        #[arg(long, default_value_t = 0.25)]
        noise_w: f64,
    },
    /// Exhaustive grid search (at most four modules).
    #[command(hide = true)]
    Oracle {
        #[command(flatten)]
        fleet: FleetArgs,
        #[arg(long)]
        demand: f64,
        #[arg(long, default_value_t = DEFAULT_GRID_STEP)]
        step: f64,
        /// Search every non-empty module subset.
        #[arg(long)]
        all_combinations: bool,
    },
}

/// Primary output plus what the run report needs.
struct Run {
    output: String,
    digest: InputDigest,
    seed: Option<u64>,
    notes: Vec<String>,
    summary: serde_json::Value,
}

impl Run {
    fn new(digest: InputDigest) -> Self {
        Self {
            output: String::new(),
            digest,
            seed: None,
            notes: Vec::new(),
            summary: serde_json::Value::Null,
        }
    }
}

fn digest_files(command: &Command, paths: &[&Path]) -> Result<InputDigest> {
    let mut d = InputDigest::default();
    d.add("args", format!("{command:?}").as_bytes());
    for p in paths {
        let bytes = fs::read(p).with_context(|| format!("reading {}", p.display()))?;
        d.add(&p.display().to_string(), &bytes);
    }
    Ok(d)
}

fn load_fleet(args: &FleetArgs) -> Result<(Fleet, ActiveSet)> {
    let fleet = io::read_fleet(&args.profiles)?;
    let active = if args.modules.is_empty() {
        ActiveSet::all(&fleet)
    } else {
        let set = ActiveSet::new(args.modules.iter().cloned())?;
        set.profiles(&fleet)?;
        set
    };
    Ok((fleet, active))
}

/// The fleet cut down to `--modules`, for commands that choose their own
/// active sets.
fn load_subfleet(args: &FleetArgs) -> Result<Fleet> {
    let (fleet, active) = load_fleet(args)?;
    if args.modules.is_empty() {
        return Ok(fleet);
    }
    Ok(Fleet::new(
        active.profiles(&fleet)?.into_iter().cloned().collect(),
    )?)
}

/// Annealer settings from `path`, falling back to defaults when the path is
/// absent or missing. `--seed` overrides the file's seed.
fn load_config(
    path: Option<&Path>,
    seed: Option<u64>,
    notes: &mut Vec<String>,
) -> Result<AnnealerConfig> {
    let config = match path {
        Some(p) if p.exists() => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            let config: AnnealerConfig = serde_json::from_str(&text)
                .map_err(|e| Error::Input(format!("{}: {e}", p.display())))?;
            config.validate()?;
            config
        }
        Some(p) => {
            log::warn!("annealer config {} not found; using defaults", p.display());
            notes.push(format!("config {} not found; defaults used", p.display()));
            AnnealerConfig::default()
        }
        None => {
            notes.push("no config given; defaults used".into());
            AnnealerConfig::default()
        }
    };
    Ok(match seed {
        Some(s) => config.with_seed(s),
        None => config,
    })
}

fn registry(method: &MethodArgs, seed: Option<u64>, run: &mut Run) -> Result<AllocatorRegistry> {
    let config = if method.method == "anneal" {
        let config = load_config(method.config.as_deref(), seed, &mut run.notes)?;
        run.seed = Some(config.seed);
        config
    } else {
        AnnealerConfig::default()
    };
    Ok(AllocatorRegistry::with_builtins(config, method.grid_step))
}

fn fleet_paths<'a>(fleet: &'a FleetArgs, extra: &[Option<&'a Path>]) -> Vec<&'a Path> {
    let mut paths: Vec<&Path> = fleet.profiles.iter().map(PathBuf::as_path).collect();
    paths.extend(extra.iter().flatten().filter(|p| p.exists()));
    paths
}

#[derive(Serialize)]
struct TpsRecord {
    k: f64,
    p: f64,
    regime: &'static str,
    mode: u8,
    d1: f64,
    d2: f64,
    d3: f64,
    i_m_pu: f64,
}

fn execute(cli: &Cli) -> Result<Run> {
    let seed = cli.seed;
    let command = &cli.command;
    match command {
        Command::Fit {
            samples,
            degree,
            out_dir,
        } => {
            let mut run = Run::new(digest_files(command, &[samples])?);
            let rows = io::read_samples(samples)?;
            fs::create_dir_all(out_dir)
                .with_context(|| format!("creating {}", out_dir.display()))?;
            let mut reports = Vec::new();
            for (id, group) in io::group_by_module(rows) {
                let (profile, fit) =
                    fit_profile(&group, *degree).with_context(|| format!("fitting module {id}"))?;
                let path = out_dir.join(format!("{id}.json"));
                fs::write(&path, io::profile_json(&profile)?)
                    .with_context(|| format!("writing {}", path.display()))?;
                run.notes.push(format!("wrote {}", path.display()));
                reports.push(fit);
            }
            run.output = report_json(&reports)?;
            run.summary = json!({ "modules": reports.len() });
            Ok(run)
        }
        Command::Dispatch {
            fleet,
            demand,
            method,
        } => {
            let mut run = Run::new(digest_files(
                command,
                &fleet_paths(fleet, &[method.config.as_deref()]),
            )?);
            let (f, active) = load_fleet(fleet)?;
            let registry = registry(method, seed, &mut run)?;
            let allocation = registry
                .get(&method.method)?
                .allocate(&f, &active, *demand)?;
            run.summary = json!({ "eta": allocation.eta, "active": active.to_string() });
            run.output = report_json(&allocation)?;
            Ok(run)
        }
        Command::Schedule {
            fleet,
            p_min,
            p_max,
            step,
            exhaustive,
            json_out,
            method,
        } => {
            let mut run = Run::new(digest_files(
                command,
                &fleet_paths(fleet, &[method.config.as_deref()]),
            )?);
            let f = load_subfleet(fleet)?;
            let registry = registry(method, seed, &mut run)?;
            let options = ScheduleOptions {
                p_min: *p_min,
                p_max: *p_max,
                step: *step,
                exhaustive: *exhaustive,
            };
            let schedule = build_dispatch_schedule(registry.get(&method.method)?, &f, &options)?;
            if let Some(path) = json_out {
                emit(Some(path), &report_json(&schedule)?)?;
            }
            run.summary = json!({ "switching_points": schedule.switching_points });
            run.output = io::schedule_csv(&schedule)?;
            Ok(run)
        }
        Command::Anneal {
            fleet,
            demand,
            config,
        } => {
            let mut run = Run::new(digest_files(
                command,
                &fleet_paths(fleet, &[config.as_deref()]),
            )?);
            let (f, active) = load_fleet(fleet)?;
            let cfg = load_config(config.as_deref(), seed, &mut run.notes)?;
            run.seed = Some(cfg.seed);
            let outcome = anneal(&f, &active, *demand, &cfg, None)?;
            run.summary = json!({ "eta": outcome.best.eta, "accepted": outcome.accepted });
            run.output = report_json(&outcome)?;
            Ok(run)
        }
        Command::Compare {
            fleet,
            demand,
            exhaustive,
            method,
        } => {
            let mut run = Run::new(digest_files(
                command,
                &fleet_paths(fleet, &[method.config.as_deref()]),
            )?);
            let f = load_subfleet(fleet)?;
            let registry = registry(method, seed, &mut run)?;
            let c =
                compare_with_equal_split(registry.get(&method.method)?, &f, *demand, *exhaustive)?;
            if let Some(note) = &c.equal_split_note {
                run.notes.push(note.clone());
            }
            run.summary = json!({ "improvement_points": c.improvement_points });
            run.output = report_json(&c)?;
            Ok(run)
        }
        Command::Tps {
            k,
            n,
            u_in,
            u_out,
            p,
        } => {
            let mut run = Run::new(digest_files(command, &[])?);
            let k = match (k, n, u_in, u_out) {
                (Some(k), ..) => *k,
                (None, Some(n), Some(u_in), Some(u_out)) => voltage_gain(*n, *u_in, *u_out)?,
                _ => {
                    return Err(
                        Error::Input("give --k or all of --n, --u-in, --u-out".into()).into(),
                    )
                }
            };
            let shifts = phase_shifts(OperatingPoint::new(k, *p)?)?;
            if !shifts.d2_in_unit_range() {
                run.notes
                    .push(format!("d2 = {} lies outside [0, 1]", shifts.d2));
            }
            let record = TpsRecord {
                k,
                p: *p,
                regime: shifts.regime.as_str(),
                mode: shifts.mode.number(),
                d1: shifts.d1,
                d2: shifts.d2,
                d3: shifts.d3,
                i_m_pu: current_stress(k, &shifts),
            };
            run.output = io::report_json_line(&record)?;
            Ok(run)
        }
        Command::Synth { points, noise_w } => {
            let mut run = Run::new(digest_files(command, &[])?);
            let s = seed.unwrap_or(0);
            run.seed = Some(s);
            let samples = reference_samples(*points, *noise_w, s)?;
            run.summary = json!({ "rows": samples.len() });
            run.output = io::samples_csv(&samples)?;
            Ok(run)
        }
        Command::Oracle {
            fleet,
            demand,
            step,
            all_combinations,
        } => {
            let mut run = Run::new(digest_files(command, &fleet_paths(fleet, &[]))?);
            let (f, active) = load_fleet(fleet)?;
            let result = if *all_combinations {
                enumerate_combinations(&f, *demand, *step)?
            } else {
                grid_search(&f, &active, *demand, *step)?
            };
            run.summary = json!({ "evaluations": result.evaluations });
            run.output = report_json(&result)?;
            Ok(run)
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::Infeasible { .. } => 3,
                Error::Solver(_) | Error::Singular { .. } => 4,
                _ => 2,
            };
        }
    }
    2
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or(LOG_ENV, "warn")).init();
    let cli = Cli::parse();
    let started = Instant::now();

    let result = execute(&cli).and_then(|run| {
        emit(cli.out.as_deref(), &run.output)?;
        Ok(run)
    });
    match result {
        Ok(run) => {
            if !cli.quiet {
                let report = RunReport {
                    command: std::env::args().collect(),
                    inputs_sha256: run.digest.finish(),
                    outputs_sha256: sha256_hex(run.output.as_bytes()),
                    seed: run.seed,
                    elapsed_ms: started.elapsed().as_secs_f64() * 1e3,
                    notes: run.notes,
                    summary: io::rounded(&run.summary).unwrap_or_default(),
                };
                match serde_json::to_string(&report) {
                    Ok(text) => eprintln!("{text}"),
                    Err(e) => log::error!("cannot serialise run report: {e}"),
                }
            }
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
