//! `bhra`: command-line front end for the verification suite and the toy
//! experiments. JSON goes to stdout, prose to stderr. Exit status is 0 on
//! success, 1 when a checked property fails and 2 on usage errors.

mod json;

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bhra_core::adapters::AdapterKind;
use bhra_core::cost::{cost_report, flops_bhra_train, flops_hira_train, flops_lora_train};
use bhra_core::experiments::{
    aggregate, check_b_sweep, check_figure1, check_gini, figure1_configs, figure1_rows,
    gini_configs, gini_probe, run_many, sweep, write_outputs, Claim, ExperimentConfig, RunOutcome,
};
use bhra_core::matrix::parse_matrix;
use bhra_core::verify::{grad_check, rank_check, rank_witness, GRAD_REL_TOL};
use bhra_core::{BhraError, BlockGrid, SpectralReport};
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

#[derive(Debug, Parser)]
#[command(
    name = "bhra",
    version,
    about = "Block Hadamard adapter verification and toy experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Compare analytic gradients with central finite differences.
    GradCheck {
        /// Comma-separated kinds (lora, hira, abba, bhra) or `all`.
        #[arg(long, default_value = "all")]
        kinds: String,
        #[arg(long, default_value_t = 50, value_parser = clap::value_parser!(u64).range(1..))]
        trials: u64,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Check update ranks against their bounds and report the BHRA witness.
    RankBounds {
        #[arg(long, default_value = "all")]
        kinds: String,
        #[arg(long, default_value_t = 200, value_parser = clap::value_parser!(u64).range(1..))]
        trials: u64,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Spectral report of a matrix stored in the text format.
    Spectra {
        matrix_file: PathBuf,
        /// Square grid used for the block Gini; omitted means no Gini.
        #[arg(long)]
        grid_b: Option<usize>,
    },
    /// Train the configured adapter on every seed.
    TrainToy(ExperimentArgs),
    /// Block-size sweep at a fixed budget.
    Sweep(ExperimentArgs),
    /// Stable rank of learned updates per kind and budget.
    Figure1(ExperimentArgs),
    /// Block Gini against final loss per kind.
    Gini(ExperimentArgs),
    /// Closed-form FLOPs and memory for one layer.
    Flops {
        #[arg(long)]
        m: usize,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        r: usize,
        #[arg(long, default_value_t = 1)]
        b: usize,
        /// Tokens per step.
        #[arg(long = "t", alias = "tokens", default_value_t = 1)]
        t: usize,
    },
}

#[derive(Debug, Args)]
struct ExperimentArgs {
    /// TOML experiment file; see `configs/default.toml`.
    config: PathBuf,
    /// Directory for `records.jsonl` and `aggregate.csv`.
    #[arg(long, default_value = "bhra-out")]
    out_dir: PathBuf,
}

/// How a command ended, before being mapped to an exit status.
enum Failure {
    /// Bad flags, paths or input files: exit 2.
    Usage(String),
    /// A numerical routine gave up: exit 1.
    Runtime(String),
}

impl From<BhraError> for Failure {
    fn from(e: BhraError) -> Self {
        match e {
            BhraError::Diverged { .. } | BhraError::SvdNoConvergence { .. } => {
                Failure::Runtime(e.to_string())
            }
            other => Failure::Usage(other.to_string()),
        }
    }
}

type CmdResult = Result<(Value, bool), Failure>;

fn parse_kinds(spec: &str) -> Result<Vec<AdapterKind>, Failure> {
    if spec.trim() == "all" {
        return Ok(AdapterKind::ALL.to_vec());
    }
    let mut kinds = Vec::new();
    for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let k: AdapterKind = part
            .parse()
            .map_err(|e: BhraError| Failure::Usage(e.to_string()))?;
        if !kinds.contains(&k) {
            kinds.push(k);
        }
    }
    if kinds.is_empty() {
        return Err(Failure::Usage("no adapter kinds given".into()));
    }
    Ok(kinds)
}

fn cmd_grad_check(kinds: &str, trials: u64, seed: u64) -> CmdResult {
    let kinds = parse_kinds(kinds)?;
    let mut entries = Vec::new();
    let mut ok = true;
    for kind in kinds {
        let s = grad_check(kind, trials as usize, seed)?;
        eprintln!(
            "grad-check {:<5} trials={} max_rel_err={:.3e} {}",
            kind,
            s.trials,
            s.max_rel_err,
            if s.passed { "ok" } else { "FAILED" }
        );
        ok &= s.passed;
        entries.push(serde_json::to_value(&s).expect("serializable"));
    }
    Ok((
        json!({"command": "grad-check", "tolerance": GRAD_REL_TOL, "seed": seed, "kinds": entries}),
        ok,
    ))
}

fn cmd_rank_bounds(kinds: &str, trials: u64, seed: u64) -> CmdResult {
    let kinds = parse_kinds(kinds)?;
    let mut entries = Vec::new();
    let mut ok = true;
    for kind in kinds {
        let s = rank_check(kind, trials as usize, seed)?;
        eprintln!(
            "rank-bounds {:<5} trials={} violations={} at_bound={}",
            kind, s.trials, s.violations, s.at_bound
        );
        ok &= s.passed;
        entries.push(serde_json::to_value(&s).expect("serializable"));
    }
    let w = rank_witness()?;
    eprintln!(
        "witness: rank(ΔW) = {} with r0 = {}, r = {}, b = {} (HiRA bound {}, BHRA bound {})",
        w.rank, w.r0, w.r_tot, w.b, w.hira_bound, w.bhra_bound
    );
    ok &= w.passed;
    Ok((
        json!({"command": "rank-bounds", "seed": seed, "kinds": entries, "witness": serde_json::to_value(&w).expect("serializable")}),
        ok,
    ))
}

fn cmd_spectra(path: &Path, grid_b: Option<usize>) -> CmdResult {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    let m = parse_matrix(&text)?;
    let grid = grid_b.map(BlockGrid::square).transpose()?;
    let report = SpectralReport::compute(&m, grid)?;
    eprintln!(
        "{}x{} matrix: stable rank {:.6}, effective rank {:.6}, numeric rank {}",
        m.rows(),
        m.cols(),
        report.stable_rank,
        report.effective_rank,
        report.numeric_rank
    );
    Ok((serde_json::to_value(&report).expect("serializable"), true))
}

fn load_config(path: &Path) -> Result<ExperimentConfig, Failure> {
    if !path.is_file() {
        return Err(Failure::Usage(format!(
            "config file not found: {}",
            path.display()
        )));
    }
    Ok(ExperimentConfig::load(path)?)
}

fn claims_json(claims: &[Claim]) -> Value {
    serde_json::to_value(claims).expect("serializable")
}

fn report_claims(claims: &[Claim]) -> bool {
    for c in claims {
        eprintln!(
            "{} {}: {}",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.detail
        );
    }
    claims.iter().all(|c| c.passed)
}

fn finish_experiment(
    command: &str,
    args: &ExperimentArgs,
    outcomes: &[RunOutcome],
    mut claims: Vec<Claim>,
    extra: Value,
) -> CmdResult {
    let rows = aggregate(outcomes);
    let paths = write_outputs(&args.out_dir, outcomes, &rows)?;
    let failures: Vec<Value> = outcomes
        .iter()
        .filter_map(|o| {
            o.result
                .as_ref()
                .err()
                .map(|e| json!({"kind": o.config.kind, "r_tot": o.config.r_tot, "b": o.config.b, "seed": o.seed, "error": e}))
        })
        .collect();
    if !failures.is_empty() {
        claims.push(Claim {
            name: "all_runs_completed".into(),
            passed: false,
            detail: format!("{} of {} runs failed", failures.len(), outcomes.len()),
        });
    }
    eprintln!("quality proxy: population loss; no accuracy figures are reported");
    let ok = report_claims(&claims);
    eprintln!(
        "wrote {} and {}",
        paths.records.display(),
        paths.aggregate.display()
    );
    let mut payload = json!({
        "command": command,
        "aggregate": serde_json::to_value(&rows).expect("serializable"),
        "claims": claims_json(&claims),
        "failures": failures,
        "records_path": paths.records.display().to_string(),
        "aggregate_path": paths.aggregate.display().to_string(),
    });
    if let (Value::Object(p), Value::Object(e)) = (&mut payload, extra) {
        p.extend(e);
    }
    Ok((payload, ok))
}

fn cmd_train_toy(args: &ExperimentArgs) -> CmdResult {
    let cfg = load_config(&args.config)?;
    let adapter = cfg.train.adapter();
    adapter.validate(cfg.task.m, cfg.task.n)?;
    let outcomes = run_many(&cfg.task, &[adapter], &cfg.task.seeds);
    let improved = outcomes
        .iter()
        .filter_map(|o| o.result.as_ref().ok())
        .filter(|r| r.final_loss < r.initial_loss)
        .count();
    let claims = vec![Claim {
        name: "final_loss_below_initial".into(),
        passed: improved == outcomes.len(),
        detail: format!("{improved} of {} runs reduced the loss", outcomes.len()),
    }];
    finish_experiment("train-toy", args, &outcomes, claims, json!({}))
}

fn cmd_sweep(args: &ExperimentArgs) -> CmdResult {
    let cfg = load_config(&args.config)?;
    let outcomes = sweep(&cfg.task, &cfg.sweep.adapters(), &cfg.task.seeds)?;
    let claims = vec![check_b_sweep(&aggregate(&outcomes))];
    finish_experiment("sweep", args, &outcomes, claims, json!({}))
}

fn cmd_figure1(args: &ExperimentArgs) -> CmdResult {
    let cfg = load_config(&args.config)?;
    let task = cfg.figure1.task(&cfg.task)?;
    let configs = figure1_configs(&cfg.figure1.budgets, cfg.figure1.bhra_b);
    for c in &configs {
        c.validate(task.m, task.n)?;
    }
    let outcomes = run_many(&task, &configs, &task.seeds);
    let (rows, claims) = match figure1_rows(&outcomes) {
        Ok(rows) => {
            let claims = check_figure1(&rows);
            (serde_json::to_value(&rows).expect("serializable"), claims)
        }
        Err(_) => (Value::Array(vec![]), vec![]),
    };
    finish_experiment("figure1", args, &outcomes, claims, json!({"figure1": rows}))
}

fn cmd_gini(args: &ExperimentArgs) -> CmdResult {
    let cfg = load_config(&args.config)?;
    let g = &cfg.gini;
    let grid = BlockGrid::square(g.grid_b)?;
    grid.block_shape(cfg.task.m, cfg.task.n)?;
    let configs = gini_configs(g.r_tot, g.bhra_b);
    for c in &configs {
        c.validate(cfg.task.m, cfg.task.n)?;
    }
    let outcomes = run_many(&cfg.task, &configs, &cfg.task.seeds);
    let records: Vec<_> = outcomes
        .iter()
        .filter_map(|o| o.result.as_ref().ok().cloned())
        .collect();
    let rows = gini_probe(&records, grid)?;
    let claims = check_gini(&rows, g.min_seeds);
    finish_experiment(
        "gini",
        args,
        &outcomes,
        claims,
        json!({"gini": serde_json::to_value(&rows).expect("serializable")}),
    )
}

fn cmd_flops(m: usize, n: usize, r: usize, b: usize, t: usize) -> CmdResult {
    let reports = [AdapterKind::Lora, AdapterKind::Hira, AdapterKind::Bhra]
        .into_iter()
        .map(|k| cost_report(k, m, n, r, b, t))
        .collect::<Result<Vec<_>, _>>()?;
    let lora = flops_lora_train(m, n, r, t)?;
    let hira = flops_hira_train(m, n, r, t)?;
    let bhra = flops_bhra_train(m, n, r, b, t)?;
    eprintln!(
        "training FLOPs at m={m} n={n} r={r} b={b} T={t}: lora {lora}, hira {hira}, bhra {bhra}"
    );
    Ok((
        json!({
            "command": "flops",
            "inputs": {"m": m, "n": n, "r": r, "b": b, "T": t},
            "lora_train": lora,
            "hira_train": hira,
            "bhra_train": bhra,
            "reports": serde_json::to_value(&reports).expect("serializable"),
        }),
        true,
    ))
}

/// Caps the rayon pool from `BHRA_THREADS` when set.
fn configure_threads() -> Result<(), Failure> {
    let Ok(raw) = std::env::var("BHRA_THREADS") else {
        return Ok(());
    };
    let threads: usize = raw.trim().parse().ok().filter(|&t| t > 0).ok_or_else(|| {
        Failure::Usage(format!(
            "BHRA_THREADS must be a positive integer, got {raw:?}"
        ))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Failure::Runtime(e.to_string()))
}

fn run(cli: Cli) -> CmdResult {
    configure_threads()?;
    match cli.command {
        Command::GradCheck {
            kinds,
            trials,
            seed,
        } => cmd_grad_check(&kinds, trials, seed),
        Command::RankBounds {
            kinds,
            trials,
            seed,
        } => cmd_rank_bounds(&kinds, trials, seed),
        Command::Spectra {
            matrix_file,
            grid_b,
        } => cmd_spectra(&matrix_file, grid_b),
        Command::TrainToy(args) => cmd_train_toy(&args),
        Command::Sweep(args) => cmd_sweep(&args),
        Command::Figure1(args) => cmd_figure1(&args),
        Command::Gini(args) => cmd_gini(&args),
        Command::Flops { m, n, r, b, t } => cmd_flops(m, n, r, b, t),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    match run(cli) {
        Ok((payload, ok)) => {
            // A closed pipe (`bhra ... | head`) is not an error worth reporting.
            let _ = writeln!(std::io::stdout().lock(), "{}", json::render(&payload));
            if ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
