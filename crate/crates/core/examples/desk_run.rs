//! Trains the desk-scale 1D Burgers configuration and prints the error
//! heatmap summary. Overrides: `LR`, `BATCH`, `BETA1`, `BETA2`, `SEED`,
//! `N_UP`, `HIDDEN`, `UNIFORM=1`, `EPOCHS`.

use std::time::Instant;

use glasdi::config::{RunConfig, SamplingConfig};
use glasdi::exec::Execution;
use glasdi::rom::{error_heatmap, FomCache};
use glasdi::trainer::{run, TrainEvent, TrainOptions, TrainState};

fn env<T: std::str::FromStr>(k: &str) -> Option<T> {
    std::env::var(k).ok().and_then(|v| v.parse().ok())
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut c = RunConfig::desk();
    if let Some(v) = env("LR") {
        c.training.lr = v;
    }
    if let Some(v) = env("BATCH") {
        c.training.batch_size = v;
    }
    if let Some(v) = env("BETA1") {
        c.training.beta1 = v;
    }
    if let Some(v) = env("BETA2") {
        c.training.beta2 = v;
    }
    if let Some(v) = env("SEED") {
        c.training.seed = v;
    }
    if let Some(v) = env("N_UP") {
        c.training.n_up = v;
    }
    if let Some(v) = env::<usize>("HIDDEN") {
        c.network.hidden = vec![v];
    }
    if env::<u8>("UNIFORM") == Some(1) {
        c.sampling = SamplingConfig::Uniform { counts: vec![4, 3] };
        c.training.n_epoch_max = env("EPOCHS").unwrap_or(4500);
    }
    let t0 = Instant::now();
    let mut s = TrainState::initialize(&c, Execution::Parallel)?;
    run(&mut s, &TrainOptions::default(), &mut |ev| match ev {
        TrainEvent::Epoch(l) if l.epoch % 250 == 0 => eprintln!(
            "epoch {:5} n={:2} loss {:.3e} recon {:.3e} zdot {:.3e} udot {:.3e} ({:.0}s)",
            l.epoch,
            l.n_samples,
            l.loss.total,
            l.loss.recon,
            l.loss.zdot,
            l.loss.udot,
            t0.elapsed().as_secs_f64()
        ),
        TrainEvent::Sample(r) => eprintln!(
            "  sample {} -> {:?} e_res {:.3e} e_v_max {:.3e}",
            r.iter, r.chosen_param, r.e_res_max, r.e_v_max
        ),
        _ => {}
    })?;
    let space = c.space()?;
    let fom = c.build_fom()?;
    let rom = s.rom(&space)?;
    for k in [1, 3, 4] {
        let h = error_heatmap(
            &rom,
            &fom,
            &c.fom,
            &FomCache::default(),
            k,
            Execution::Parallel,
        )?;
        println!(
            "k={k}: max e_max = {:.4} at {:?}",
            h.max,
            h.argmax.map(|i| &space.point(i).coords)
        );
    }
    println!(
        "samples {:?}, epochs {}, {:.0}s",
        s.db.samples.indices(),
        s.epoch,
        t0.elapsed().as_secs_f64()
    );
    Ok(())
}
