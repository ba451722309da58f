//! `osd` — generate sample paths, train the stopping network, and decide
//! execution times from the command line.
//!
//! Exit codes: 0 success, 2 config/parse error, 3 numerical/training
//! error, 4 oracle disagreement.

mod config;

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use osd_core::evalharness::run_backtest;
use osd_core::oracle::{exhaustive_adapted_value, lattice_value, LatticeModel};
use osd_core::pathgen::{
    bootstrap_paths, fit_ar, load_history, load_paths, merge_series, sample_ar_paths,
    save_paths, simulate_gbm, DatedSeries,
};
use osd_core::stopnet::{train, ModelBundle};
use osd_core::timing::decide;
use osd_core::{CoreError, GbmParams, PathSet, Result, SeriesHistory};

use config::{ForecasterConfig, RunConfig};

#[derive(Parser)]
#[command(name = "osd", version, about = "Optimal execution timing from Monte Carlo sample paths")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample future paths per the configured forecaster and write a paths CSV.
    Generate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one stopping network per series and write a model file.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        paths: PathBuf,
        #[arg(long)]
        model_out: PathBuf,
        /// Optional per-epoch loss trace CSV.
        #[arg(long)]
        trace_out: Option<PathBuf>,
    },
    /// Apply a trained model to a paths file and report stop decisions.
    Decide {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        paths: PathBuf,
        /// Optional config supplying cost weights and seed.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Stop-step histogram CSV (series_id, step, count).
        #[arg(long)]
        histogram_out: Option<PathBuf>,
        /// Full decision report as JSON.
        #[arg(long)]
        report_out: Option<PathBuf>,
    },
    /// Rolling backtest against realized history.
    Backtest {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        report_out: PathBuf,
    },
    /// Compare the lattice backward-induction value against exhaustive
    /// rule enumeration.
    OracleCheck(OracleArgs),
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long, default_value_t = 1.0)]
    s0: f64,
    #[arg(long)]
    up: f64,
    #[arg(long)]
    down: f64,
    #[arg(long)]
    p_up: f64,
    #[arg(long)]
    horizon: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Generate { config, out } => cmd_generate(&config, &out),
        Command::Train {
            config,
            paths,
            model_out,
            trace_out,
        } => cmd_train(&config, &paths, &model_out, trace_out.as_deref()),
        Command::Decide {
            model,
            paths,
            config,
            histogram_out,
            report_out,
        } => cmd_decide(
            &model,
            &paths,
            config.as_deref(),
            histogram_out.as_deref(),
            report_out.as_deref(),
        ),
        Command::Backtest { config, report_out } => cmd_backtest(&config, &report_out),
        Command::OracleCheck(args) => return cmd_oracle_check(&args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &CoreError) -> u8 {
    match e {
        CoreError::InvalidArgument(_) | CoreError::Parse { .. } | CoreError::Io(_) => 2,
        CoreError::Numerical(_)
        | CoreError::TrainingDiverged { .. }
        | CoreError::Degenerate { .. } => 3,
    }
}

/// Write via a sibling temp file and rename, so a crash never leaves a
/// half-written output.
fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Distinct deterministic seed per series so multi-series noise never
/// repeats across series.
fn series_seed(master: u64, series: usize) -> u64 {
    master.wrapping_add(0x9e3779b97f4a7c15u64.wrapping_mul(series as u64 + 1))
}

fn cmd_generate(config_path: &Path, out: &Path) -> Result<()> {
    let cfg = RunConfig::load(config_path)?;
    let section = cfg
        .generate
        .as_ref()
        .ok_or_else(|| CoreError::invalid("config has no [generate] section"))?;
    let n_paths = positive("n_paths", section.n_paths)?;
    let horizon = positive("horizon", section.horizon)?;

    let histories: Option<Vec<SeriesHistory>> = match &section.history_file {
        Some(file) => Some(
            load_history(file)?
                .iter()
                .map(dated_to_history)
                .collect::<Result<Vec<_>>>()?,
        ),
        None => None,
    };

    let paths = match cfg
        .forecaster
        .as_ref()
        .ok_or_else(|| CoreError::invalid("config has no [forecaster] section"))?
    {
        ForecasterConfig::Gbm { s0, mu, sigma } => match &histories {
            Some(hs) => generate_per_series(hs, |i, h| {
                let params = GbmParams {
                    s0: h.last_value(),
                    mu: *mu,
                    sigma: *sigma,
                };
                let mut ps = simulate_gbm(&params, n_paths, horizon, series_seed(cfg.seed, i))?;
                ps.series_ids[0] = h.series_id.clone();
                ps.t0 = h.t0;
                Ok(ps)
            })?,
            None => {
                let s0 = s0.ok_or_else(|| {
                    CoreError::invalid("gbm without history_file needs forecaster.s0")
                })?;
                simulate_gbm(&GbmParams { s0, mu: *mu, sigma: *sigma }, n_paths, horizon, cfg.seed)?
            }
        },
        ForecasterConfig::Ar { order } => {
            let hs = histories
                .as_ref()
                .ok_or_else(|| CoreError::invalid("ar forecaster needs generate.history_file"))?;
            generate_per_series(hs, |i, h| {
                let model = fit_ar(h, *order)?;
                sample_ar_paths(&model, h, n_paths, horizon, series_seed(cfg.seed, i))
            })?
        }
        ForecasterConfig::Bootstrap { block_len } => {
            let hs = histories.as_ref().ok_or_else(|| {
                CoreError::invalid("bootstrap forecaster needs generate.history_file")
            })?;
            generate_per_series(hs, |i, h| {
                bootstrap_paths(h, *block_len, n_paths, horizon, series_seed(cfg.seed, i))
            })?
        }
    };

    let mut bytes = Vec::new();
    save_paths(&paths, &mut bytes)?;
    atomic_write(out, &bytes)?;
    println!(
        "wrote {} paths x {} series x {} steps to {}",
        paths.n_paths,
        paths.n_series,
        paths.horizon,
        out.display()
    );
    Ok(())
}

fn dated_to_history(series: &DatedSeries) -> Result<SeriesHistory> {
    SeriesHistory::from_values(series.series_id.clone(), &series.values)
}

fn generate_per_series(
    histories: &[SeriesHistory],
    mut sample: impl FnMut(usize, &SeriesHistory) -> Result<PathSet>,
) -> Result<PathSet> {
    let sets = histories
        .iter()
        .enumerate()
        .map(|(i, h)| sample(i, h))
        .collect::<Result<Vec<_>>>()?;
    if sets.len() == 1 {
        Ok(sets.into_iter().next().unwrap())
    } else {
        merge_series(&sets)
    }
}

fn positive(name: &str, v: i64) -> Result<usize> {
    if v < 1 {
        return Err(CoreError::invalid(format!("{name} must be >= 1, got {v}")));
    }
    Ok(v as usize)
}

fn cmd_train(
    config_path: &Path,
    paths_file: &Path,
    model_out: &Path,
    trace_out: Option<&Path>,
) -> Result<()> {
    let cfg = RunConfig::load(config_path)?;
    let paths = load_paths(paths_file)?;
    let mut params = Vec::with_capacity(paths.n_series);
    let mut trace_csv = String::from("series_id,epoch,loss\n");
    for i in 0..paths.n_series {
        let net_config = cfg.stopnet.to_core(series_seed(cfg.seed, i));
        let (p, trace) = train(&net_config, &paths, i)?;
        for (epoch, loss) in trace.iter().enumerate() {
            trace_csv.push_str(&format!("{},{},{:?}\n", paths.series_ids[i], epoch + 1, loss));
        }
        println!(
            "series {}: final loss {:?} after {} epochs",
            paths.series_ids[i],
            trace.last().unwrap(),
            trace.len()
        );
        params.push(p);
    }
    let bundle = ModelBundle::new(paths.series_ids.clone(), params);
    let json = serde_json::to_string_pretty(&bundle)
        .map_err(|e| CoreError::Numerical(e.to_string()))?;
    atomic_write(model_out, json.as_bytes())?;
    if let Some(out) = trace_out {
        atomic_write(out, trace_csv.as_bytes())?;
    }
    println!("wrote model to {}", model_out.display());
    Ok(())
}

fn cmd_decide(
    model_file: &Path,
    paths_file: &Path,
    config_path: Option<&Path>,
    histogram_out: Option<&Path>,
    report_out: Option<&Path>,
) -> Result<()> {
    let bundle = ModelBundle::load(model_file)?;
    let paths = load_paths(paths_file)?;
    if bundle.series_ids != paths.series_ids {
        return Err(CoreError::invalid(format!(
            "model was trained on series {:?} but paths file has {:?}",
            bundle.series_ids, paths.series_ids
        )));
    }
    let cfg = config_path.map(RunConfig::load).transpose()?;
    let cost = match &cfg {
        Some(c) => c.cost_spec(paths.n_series)?,
        None => osd_core::CostSpec::uniform(paths.n_series),
    };
    let seed = cfg.as_ref().map_or(0, |c| c.seed);
    let report = decide(&bundle.params, &paths, &cost, "stopnet", seed)?;

    for s in &report.series {
        println!(
            "series {}: stop at step {} (calendar index {})",
            s.series_id,
            s.tau_star,
            report.t0 + s.tau_star as i64
        );
    }
    println!("expected cost: {:?}", report.expected_cost);

    if let Some(out) = histogram_out {
        let mut csv = String::from("series_id,step,count\n");
        for s in &report.series {
            for (step, count) in &s.histogram {
                csv.push_str(&format!("{},{step},{count}\n", s.series_id));
            }
        }
        atomic_write(out, csv.as_bytes())?;
    }
    if let Some(out) = report_out {
        let json = serde_json::to_string_pretty(&report)
            .map_err(|e| CoreError::Numerical(e.to_string()))?;
        atomic_write(out, json.as_bytes())?;
    }
    Ok(())
}

fn cmd_backtest(config_path: &Path, report_out: &Path) -> Result<()> {
    let cfg = RunConfig::load(config_path)?;
    let section = cfg
        .backtest
        .as_ref()
        .ok_or_else(|| CoreError::invalid("config has no [backtest] section"))?;
    let series = load_history(&section.history_file)?;
    let mut dates: Vec<chrono::NaiveDate> =
        series.iter().flat_map(|s| s.dates.iter().copied()).collect();
    dates.sort_unstable();
    dates.dedup();
    let (bt_config, _) = cfg.backtest_config(&dates)?;
    let report = run_backtest(&bt_config, &series)?;

    let mut out = Vec::new();
    writeln!(
        out,
        "date,series_id,baseline_step,osd_step,actual_step,baseline_accuracy,osd_accuracy"
    )?;
    for r in &report.rows {
        writeln!(
            out,
            "{},{},{},{},{},{:?},{:?}",
            r.date,
            r.series_id,
            r.baseline_step,
            r.osd_step,
            r.actual_step,
            r.baseline_accuracy,
            r.osd_accuracy
        )?;
    }
    let s = &report.summary;
    let summary_lines = [
        format!("rows={}", s.rows),
        format!("skipped={}", report.skipped.len()),
        format!("baseline_accuracy={:?}", s.baseline_accuracy),
        format!("osd_accuracy={:?}", s.osd_accuracy),
        format!("advantage={:?}", s.advantage),
        format!("t_stat={:?}", s.t_stat),
        format!("p_value={:?}", s.p_value),
        format!("degenerate={}", s.degenerate),
    ];
    for line in &summary_lines {
        writeln!(out, "# {line}")?;
        println!("{line}");
    }
    atomic_write(report_out, &out)?;
    Ok(())
}

fn cmd_oracle_check(args: &OracleArgs) -> ExitCode {
    let model = LatticeModel {
        s0: args.s0,
        up: args.up,
        down: args.down,
        p_up: args.p_up,
        horizon: args.horizon,
    };
    let (lattice, _policy) = match lattice_value(&model) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(exit_code(&e));
        }
    };
    println!("lattice value: {lattice:?}");
    let exhaustive = match exhaustive_adapted_value(&model) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(exit_code(&e));
        }
    };
    println!("exhaustive value: {exhaustive:?}");
    if (lattice - exhaustive).abs() <= 1e-12 {
        println!("agreement OK");
        ExitCode::SUCCESS
    } else {
        eprintln!(
            "error: oracle disagreement: |{lattice:?} - {exhaustive:?}| = {:?}",
            (lattice - exhaustive).abs()
        );
        ExitCode::from(4)
    }
}
