//! Pilot runs used to choose the toy teacher and freeze the training
//! thresholds. `cargo run --release -p bhra-core --example pilot -- [steps]`
//! prints the figure-1, Gini and b-sweep tables for the default task.
//! Further positional arguments (`decay mask_rank grid mask_mean`) replace
//! the teacher for every probe, figure 1 included.

use bhra_core::experiments::{
    aggregate, check_b_sweep, check_figure1, check_gini, figure1_probe, gini_probe, run_many,
    sweep, ExperimentConfig,
};
use bhra_core::{AdapterConfig, AdapterKind, BlockGrid};

fn main() -> bhra_core::Result<()> {
    let mut cfg = ExperimentConfig::default();
    let args: Vec<String> = std::env::args().skip(1).collect();
    if let Some(steps) = args.first() {
        cfg.task.train_steps = steps.parse().expect("step count");
    }
    if let Some(decay) = args.get(1) {
        cfg.task.w0_decay = decay.parse().expect("decay");
    }
    if let Some(k) = args.get(2) {
        cfg.task.mask_rank = k.parse().expect("mask rank");
    }
    if let Some(p) = args.get(3) {
        let p: usize = p.parse().expect("profile grid");
        cfg.task.teacher_block_profile = bhra_core::experiments::quadrant_profile(p, 4.0);
    }
    if let Some(mu) = args.get(4) {
        cfg.task.mask_mean = mu.parse().expect("mask mean");
    }
    let fig_task = if args.len() > 1 {
        cfg.task.clone()
    } else {
        cfg.figure1.task(&cfg.task)?
    };
    let task = &cfg.task;
    let seeds = &task.seeds;

    let fig = figure1_probe(&fig_task, &cfg.figure1.budgets, seeds, cfg.figure1.bhra_b)?;
    for row in &fig {
        println!(
            "figure1 {:>5} r={:<3} mean_sr={:.4}",
            row.kind, row.r_tot, row.mean_stable_rank
        );
    }
    for c in check_figure1(&fig) {
        println!("  {} {} {}", c.name, c.passed, c.detail);
    }

    let g = &cfg.gini;
    let configs = [
        AdapterConfig::new(AdapterKind::Lora, g.r_tot),
        AdapterConfig::new(AdapterKind::Hira, g.r_tot),
        AdapterConfig::bhra(g.r_tot, g.bhra_b),
    ];
    let outcomes = run_many(task, &configs, seeds);
    let records: Vec<_> = outcomes
        .iter()
        .filter_map(|o| o.result.clone().ok())
        .collect();
    let rows = gini_probe(&records, BlockGrid::square(g.grid_b)?)?;
    for r in &rows {
        println!(
            "gini {:>5} seed={:<5} gini={:.4} loss={:.4e}",
            r.kind, r.seed, r.block_gini, r.final_loss
        );
    }
    for c in check_gini(&rows, g.min_seeds) {
        println!("  {} {} {}", c.name, c.passed, c.detail);
    }

    let out = sweep(task, &cfg.sweep.adapters(), seeds)?;
    for row in aggregate(&out) {
        println!(
            "sweep b={} improvement={:.5} final={:.4e} initial={:.4e}",
            row.b, row.median_improvement, row.median_final_loss, row.median_initial_loss
        );
    }
    let c = check_b_sweep(&aggregate(&out));
    println!("  {} {} {}", c.name, c.passed, c.detail);
    Ok(())
}
