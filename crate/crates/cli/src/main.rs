use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use glasdi::config::RunConfig;
use glasdi::exec::{with_jobs, Execution};
use glasdi::parameter_space::{random_subset, ParamPoint, SampleSet};
use glasdi::report::{correlate, correlation_csv, heatmap_csv, heatmap_svg};
use glasdi::rom::{error_heatmap, FomCache};
use glasdi::trainer::{
    load_checkpoint, run, save_checkpoint, write_atomic, write_audit_log, write_loss_csv,
    TrainEvent, TrainOptions, TrainState,
};
use glasdi::Error;

#[derive(Parser)]
#[command(
    name = "glasdi",
    version,
    about = "Greedy latent-space dynamics identification"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the full-order model at one parameter point.
    Fom {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        a: f64,
        #[arg(long)]
        w: f64,
        /// Output directory for the trajectory files.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model; writes model.ckpt, loss.csv and audit.jsonl.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the seed in the config.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        jobs: Option<usize>,
        #[arg(long)]
        quiet: bool,
    },
    /// Maximum relative error at every grid point.
    Heatmap {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 1)]
        k: usize,
        /// CSV output.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        svg: Option<PathBuf>,
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Residual indicator against true error at random grid points.
    Correlate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 20)]
        n_eval: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        k: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        jobs: Option<usize>,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::NonConvergence { .. } => 2,
        Error::NonFiniteLoss(_) => 3,
        _ => 1,
    }
}

fn load_config(path: Option<&Path>) -> glasdi::Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::desk()),
    }
}

fn create_dir(dir: &Path) -> glasdi::Result<()> {
    fs::create_dir_all(dir)
        .map_err(|e| Error::InvalidArgument(format!("cannot create {}: {e}", dir.display())))
}

fn cmd_fom(config: Option<&Path>, a: f64, w: f64, out: &Path) -> glasdi::Result<()> {
    let config = load_config(config)?;
    let fom = config.build_fom()?;
    let traj = FomCache::from_env().solve(&config.fom, &fom, &ParamPoint::new(vec![a, w]))?;
    let path = traj.save(out, "fom", Some(&config.hash()?))?;
    println!(
        "wrote {} ({} x {})",
        path.display(),
        traj.n_points(),
        traj.n_steps() + 1
    );
    Ok(())
}

fn cmd_train(
    config: Option<&Path>,
    out: &Path,
    seed: Option<u64>,
    quiet: bool,
) -> glasdi::Result<()> {
    let mut config = load_config(config)?;
    if let Some(s) = seed {
        config.training.seed = s;
    }
    create_dir(out)?;
    let mut state = TrainState::initialize(&config, Execution::Parallel)?;
    let options = TrainOptions {
        exec: Execution::Parallel,
        failure_checkpoint: Some(out.join("partial.ckpt")),
    };
    let n_up = config.training.n_up.max(1);
    let result = run(&mut state, &options, &mut |ev| {
        if quiet {
            return;
        }
        match ev {
            TrainEvent::Epoch(l) if l.epoch % n_up == 0 => {
                eprintln!(
                    "epoch {:>6}  samples {:>3}  loss {:.4e}",
                    l.epoch, l.n_samples, l.loss.total
                )
            }
            TrainEvent::Sample(r) => eprintln!(
                "  sampled #{} {:?}  e_res {:.3e}  level {}",
                r.chosen_index, r.chosen_param, r.e_res_max, r.level
            ),
            _ => {}
        }
    });
    write_loss_csv(&out.join("loss.csv"), &state.losses, &state.config_hash)?;
    write_audit_log(&out.join("audit.jsonl"), &state.audit)?;
    result?;
    save_checkpoint(&out.join("model.ckpt"), &state)?;
    println!(
        "stopped ({:?}) after {} epochs with {} samples; config_hash={}",
        state.stop,
        state.epoch,
        state.db.len(),
        state.config_hash
    );
    Ok(())
}

fn cmd_heatmap(checkpoint: &Path, k: usize, out: &Path, svg: Option<&Path>) -> glasdi::Result<()> {
    let state = load_checkpoint(checkpoint)?;
    let space = state.config.space()?;
    let fom = state.config.build_fom()?;
    let rom = state.rom(&space)?;
    let map = error_heatmap(
        &rom,
        &fom,
        &state.config.fom,
        &FomCache::from_env(),
        k,
        Execution::Parallel,
    )?;
    write_atomic(
        out,
        heatmap_csv(&space, &map, k, &state.config_hash).as_bytes(),
    )?;
    if let Some(svg) = svg {
        let title = format!(
            "k={k}, {} samples, config {}",
            state.db.len(),
            state.config_hash
        );
        write_atomic(
            svg,
            heatmap_svg(&space, &map, &state.db.samples, &title)?.as_bytes(),
        )?;
    }
    match map.argmax {
        Some(i) => println!("max e_max = {:.6e} at {:?}", map.max, space.point(i).coords),
        None => println!("max e_max undefined: no grid point evaluated"),
    }
    if !map.missing.is_empty() {
        println!(
            "{} grid points skipped (reference solve failed)",
            map.missing.len()
        );
    }
    Ok(())
}

fn cmd_correlate(
    checkpoint: &Path,
    n_eval: usize,
    seed: u64,
    k: usize,
    out: &Path,
) -> glasdi::Result<()> {
    let state = load_checkpoint(checkpoint)?;
    let space = state.config.space()?;
    let fom = state.config.build_fom()?;
    let rom = state.rom(&space)?;
    let n_ts = state.config.train_config()?.n_ts;
    let indices = random_subset(&space, &SampleSet::new(), n_eval.min(space.len()), seed)?;
    let report = correlate(
        &rom,
        &fom,
        &state.config.fom,
        &FomCache::from_env(),
        &indices,
        k,
        n_ts,
        Execution::Parallel,
    )?;
    write_atomic(
        out,
        correlation_csv(&space, &report, &state.config_hash).as_bytes(),
    )?;
    match (&report.fit, report.fallback_estimate) {
        (Some(f), _) => println!("k* = {:.6e}  b* = {:.6e}", f.slope, f.intercept),
        (None, Some(e)) => println!("degenerate fit; estimate falls back to max e_max = {e:.6e}"),
        _ => {}
    }
    match report.pearson {
        Some(r) => println!("pearson r = {r:.4} over {} points", report.indices.len()),
        None => println!("pearson r undefined over {} points", report.indices.len()),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Fom { config, a, w, out } => cmd_fom(config.as_deref(), a, w, &out),
        Command::Train {
            config,
            out,
            seed,
            jobs,
            quiet,
        } => with_jobs(jobs, || cmd_train(config.as_deref(), &out, seed, quiet)),
        Command::Heatmap {
            checkpoint,
            k,
            out,
            svg,
            jobs,
        } => with_jobs(jobs, || cmd_heatmap(&checkpoint, k, &out, svg.as_deref())),
        Command::Correlate {
            checkpoint,
            n_eval,
            seed,
            k,
            out,
            jobs,
        } => with_jobs(jobs, || cmd_correlate(&checkpoint, n_eval, seed, k, &out)),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
