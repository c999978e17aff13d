//! Command-line front end: validate configs, execute runs, sweep arrival
//! rates or the tradeoff knob, and solve the small-instance oracle.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use mecsim_core::config::{presets, InstanceConfig, RateTable};
use mecsim_core::harness::{self, ControllerKind, RunConfig, RunOptions, SweepSpec};
use mecsim_core::model::{build_instance, Instance};
use mecsim_core::oracle::{self, OracleError, OracleObjective};

#[derive(Parser)]
#[command(
    name = "mecsim",
    about = "Multi-hop mobile-edge-computing network simulator",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArg {
    /// Instance config: a JSON file path, or preset:{tiny,desk,full,single-queue}
    #[arg(long)]
    config: String,
}

#[derive(Args, Clone)]
struct RunOverrides {
    /// RNG seed
    #[arg(long)]
    seed: Option<u64>,
    /// Horizon in slots
    #[arg(long)]
    slots: Option<u64>,
    /// Cost-delay tradeoff knob (>= 0)
    #[arg(long)]
    v: Option<f64>,
    /// Uniform arrival rate, packets/slot per (UE, service)
    #[arg(long)]
    lambda: Option<f64>,
    /// Controller: mecnc, oracle, or local
    #[arg(long)]
    controller: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and validate a config, print a short instance summary.
    Validate(ConfigArg),
    /// Execute one run and write summary.json / timeseries.csv.
    Run {
        #[command(flatten)]
        config: ConfigArg,
        #[command(flatten)]
        overrides: RunOverrides,
        /// Output directory (created if missing)
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write per-slot queue backlogs (queues.csv; verbose)
        #[arg(long)]
        trace: bool,
    },
    /// Sweep the arrival rate and report stability and the capacity knee.
    SweepLambda {
        #[command(flatten)]
        config: ConfigArg,
        #[command(flatten)]
        overrides: RunOverrides,
        /// Comma-separated, strictly increasing rate grid (pkts/slot per UE-service)
        #[arg(long, value_delimiter = ',', required = true)]
        grid: Vec<f64>,
        /// Comma-separated replicate seeds
        #[arg(long, value_delimiter = ',', default_value = "1")]
        seeds: Vec<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sweep the tradeoff knob V at fixed arrivals.
    SweepV {
        #[command(flatten)]
        config: ConfigArg,
        #[command(flatten)]
        overrides: RunOverrides,
        /// Comma-separated, nondecreasing V grid
        #[arg(long, value_delimiter = ',', required = true)]
        grid: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "1")]
        seeds: Vec<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve the capacity/cost oracle on a small instance.
    Oracle {
        #[command(flatten)]
        config: ConfigArg,
        /// feasibility, max-throughput, or min-cost
        #[arg(long, default_value = "max-throughput")]
        objective: String,
        /// Uniform arrival rate (pkts/slot per UE-service); the direction
        /// for max-throughput
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print a built-in config document.
    Preset {
        /// tiny, desk, full, or single-queue
        name: String,
    },
}

fn load_config(arg: &str) -> Result<InstanceConfig> {
    if let Some(name) = arg.strip_prefix("preset:") {
        return preset_by_name(name);
    }
    let text = std::fs::read_to_string(arg).with_context(|| format!("reading {arg}"))?;
    Ok(InstanceConfig::from_json(&text)?)
}

fn preset_by_name(name: &str) -> Result<InstanceConfig> {
    Ok(match name {
        "tiny" => presets::tiny(),
        "desk" => presets::desk(10),
        "full" => presets::full(),
        "single-queue" => presets::single_queue(),
        other => bail!("unknown preset `{other}` (tiny, desk, full, single-queue)"),
    })
}

fn apply_overrides(mut run: RunConfig, instance: &Instance, o: &RunOverrides) -> Result<RunConfig> {
    if let Some(seed) = o.seed {
        run.seed = seed;
    }
    if let Some(slots) = o.slots {
        run.slots = slots;
    }
    if let Some(v) = o.v {
        run.v = v;
    }
    if let Some(lambda) = o.lambda {
        run.rates = RateTable::uniform(instance, lambda);
    }
    if let Some(c) = &o.controller {
        run.controller = c.parse::<ControllerKind>().map_err(anyhow::Error::msg)?;
    }
    run.validate()?;
    Ok(run)
}

fn ensure_dir(out: &Option<PathBuf>) -> Result<Option<PathBuf>> {
    match out {
        Some(dir) => {
            std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            Ok(Some(dir.clone()))
        }
        None => Ok(None),
    }
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn run_summary_json(run: &RunConfig, instance: &Instance, out: &harness::RunOutput) -> String {
    let n = (instance.num_ues * instance.services.len()) as f64;
    let value = serde_json::json!({
        "controller": run.controller.as_str(),
        "seed": run.seed,
        "slots": run.slots,
        "warmup_frac": run.warmup_frac,
        "v": run.v,
        "mean_rate_pkts_per_slot": run.rates.total() / n,
        "stability": out.stability,
        "metrics": out.metrics,
    });
    serde_json::to_string_pretty(&value).expect("serializable")
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Validate(cfg) => {
            let config = load_config(&cfg.config)?;
            let instance = build_instance(&config)?;
            println!(
                "ok: {} UEs, {} servers, {} wired edges, {} wireless links, {} services, {} commodities",
                instance.num_ues,
                instance.num_nodes() - instance.num_ues,
                instance.wired_edges.len(),
                instance.wireless_links.len(),
                instance.services.len(),
                instance.num_commodities()
            );
        }
        Command::Run {
            config,
            overrides,
            out,
            trace,
        } => {
            let cfg = load_config(&config.config)?;
            let instance = Arc::new(build_instance(&cfg)?);
            let run_cfg = apply_overrides(
                RunConfig::from_config(&cfg, &instance)?,
                &instance,
                &overrides,
            )?;
            let options = RunOptions {
                timeseries: true,
                trace,
            };
            let result = harness::run(instance.clone(), run_cfg.clone(), &options)?;
            let summary = run_summary_json(&run_cfg, &instance, &result);
            if let Some(dir) = ensure_dir(&out)? {
                write_file(&dir, "config.snapshot.json", &cfg.to_json_pretty())?;
                write_file(&dir, "summary.json", &summary)?;
                if let Some(ts) = &result.timeseries_csv {
                    write_file(&dir, "timeseries.csv", ts)?;
                }
                if let Some(tr) = &result.trace_csv {
                    write_file(&dir, "queues.csv", tr)?;
                }
                if let Some(dc) = &result.decisions_csv {
                    write_file(&dir, "decisions.csv", dc)?;
                }
                println!("wrote {}", dir.display());
            } else {
                println!("{summary}");
            }
        }
        Command::SweepLambda {
            config,
            overrides,
            grid,
            seeds,
            out,
        } => {
            let cfg = load_config(&config.config)?;
            let instance = Arc::new(build_instance(&cfg)?);
            let base = apply_overrides(
                RunConfig::from_config(&cfg, &instance)?,
                &instance,
                &overrides,
            )?;
            let spec = SweepSpec { grid, seeds };
            let report = harness::sweep_lambda(instance.clone(), &base, &spec)?;
            let summary = serde_json::to_string_pretty(&report).expect("serializable");
            if let Some(dir) = ensure_dir(&out)? {
                write_file(&dir, "config.snapshot.json", &cfg.to_json_pretty())?;
                write_file(&dir, "sweep.csv", &report.to_csv())?;
                write_file(&dir, "sweep_summary.json", &summary)?;
                println!("wrote {}", dir.display());
            } else {
                println!("{summary}");
            }
            if let Some(knee) = &report.knee {
                eprintln!(
                    "knee: last stable {} / first unstable {} -> estimate {}",
                    knee.last_stable, knee.first_unstable, knee.estimate
                );
            } else {
                eprintln!("knee: not bracketed by the grid");
            }
        }
        Command::SweepV {
            config,
            overrides,
            grid,
            seeds,
            out,
        } => {
            let cfg = load_config(&config.config)?;
            let instance = Arc::new(build_instance(&cfg)?);
            let base = apply_overrides(
                RunConfig::from_config(&cfg, &instance)?,
                &instance,
                &overrides,
            )?;
            let spec = SweepSpec { grid, seeds };
            let report = harness::sweep_v(instance.clone(), &base, &spec)?;
            let summary = serde_json::to_string_pretty(&report).expect("serializable");
            if let Some(dir) = ensure_dir(&out)? {
                write_file(&dir, "config.snapshot.json", &cfg.to_json_pretty())?;
                write_file(&dir, "sweep.csv", &report.to_csv())?;
                write_file(&dir, "sweep_summary.json", &summary)?;
                println!("wrote {}", dir.display());
            } else {
                println!("{summary}");
            }
        }
        Command::Oracle {
            config,
            objective,
            lambda,
            out,
        } => {
            let cfg = load_config(&config.config)?;
            let instance = Arc::new(build_instance(&cfg)?);
            let opts = cfg.oracle.clone().unwrap_or_default();
            let objective = match objective.as_str() {
                "feasibility" => OracleObjective::Feasibility,
                "max-throughput" => OracleObjective::MaxThroughput,
                "min-cost" => OracleObjective::MinCost,
                other => bail!("unknown objective `{other}`"),
            };
            let rates = match lambda {
                Some(l) => RateTable::uniform(&instance, l),
                None => match &cfg.arrivals {
                    Some(a) => a.resolve(&instance)?,
                    None => RateTable::uniform(&instance, 1.0),
                },
            };
            let report = match oracle::solve_instance(&instance, &opts, &rates, objective) {
                Ok(solution) => {
                    let residual = solution.certificate_residual(&instance, &rates);
                    oracle::solution_report(&instance, &solution, residual)
                }
                Err(OracleError::Infeasible) => serde_json::json!({
                    "feasible": false,
                    "objective": format!("{objective:?}"),
                }),
                Err(e) => return Err(e.into()),
            };
            let text = serde_json::to_string_pretty(&report).expect("serializable");
            if let Some(dir) = ensure_dir(&out)? {
                write_file(&dir, "config.snapshot.json", &cfg.to_json_pretty())?;
                write_file(&dir, "oracle.json", &text)?;
                println!("wrote {}", dir.display());
            } else {
                println!("{text}");
            }
        }
        Command::Preset { name } => {
            let cfg = preset_by_name(&name)?;
            println!("{}", cfg.to_json_pretty());
        }
    }
    Ok(())
}
