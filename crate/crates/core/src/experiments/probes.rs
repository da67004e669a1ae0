use rayon::prelude::*;
use serde::Serialize;

use super::{budget_config, run_training, RunRecord, ToyTaskSpec};
use crate::adapters::{param_count, AdapterConfig, AdapterKind, BlockGrid};
use crate::error::{BhraError, Result};
use crate::spectral::block_gini;

/// Result of one `(config, seed)` cell; failures are kept rather than
/// aborting the batch.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub config: AdapterConfig,
    pub seed: u64,
    pub result: std::result::Result<RunRecord, String>,
}

/// Runs every `config × seed` pair on the current rayon pool. Output order
/// is config-major, then seed, independent of scheduling.
pub fn run_many(spec: &ToyTaskSpec, configs: &[AdapterConfig], seeds: &[u64]) -> Vec<RunOutcome> {
    let cells: Vec<(AdapterConfig, u64)> = configs
        .iter()
        .flat_map(|c| seeds.iter().map(move |&s| (*c, s)))
        .collect();
    cells
        .into_par_iter()
        .map(|(config, seed)| RunOutcome {
            config,
            seed,
            result: run_training(spec, &config, seed).map_err(|e| e.to_string()),
        })
        .collect()
}

/// [`run_many`] after checking that every config holds the same number of
/// trainable parameters.
pub fn sweep(
    spec: &ToyTaskSpec,
    configs: &[AdapterConfig],
    seeds: &[u64],
) -> Result<Vec<RunOutcome>> {
    spec.validate()?;
    if configs.is_empty() || seeds.is_empty() {
        return Err(BhraError::config(
            "sweep needs at least one config and one seed",
        ));
    }
    let counts = configs
        .iter()
        .map(|c| param_count(c, spec.m, spec.n))
        .collect::<Result<Vec<_>>>()?;
    if let Some(pos) = counts.iter().position(|&c| c != counts[0]) {
        return Err(BhraError::config(format!(
            "budget parity violated: {} {:?} holds {} parameters, {} {:?} holds {}",
            configs[0].kind, configs[0], counts[0], configs[pos].kind, configs[pos], counts[pos]
        )));
    }
    Ok(run_many(spec, configs, seeds))
}

fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let k = values.len();
    if k % 2 == 1 {
        values[k / 2]
    } else {
        0.5 * (values[k / 2 - 1] + values[k / 2])
    }
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Per-config medians over seeds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateRow {
    pub kind: AdapterKind,
    pub r_tot: usize,
    pub b: usize,
    pub runs: usize,
    pub failures: usize,
    pub median_initial_loss: f64,
    pub median_final_loss: f64,
    pub median_improvement: f64,
    pub median_stable_rank: f64,
    pub median_effective_rank: f64,
    pub median_count_1pct: f64,
    pub median_energy: f64,
    pub median_block_gini: f64,
}

impl AggregateRow {
    pub fn matrix_id(&self) -> String {
        format!("{}_r{}_b{}", self.kind, self.r_tot, self.b)
    }
}

/// Groups outcomes by config in first-seen order.
pub fn aggregate(outcomes: &[RunOutcome]) -> Vec<AggregateRow> {
    let mut configs: Vec<AdapterConfig> = Vec::new();
    for o in outcomes {
        if !configs.contains(&o.config) {
            configs.push(o.config);
        }
    }
    configs
        .into_iter()
        .map(|cfg| {
            let group: Vec<&RunOutcome> = outcomes.iter().filter(|o| o.config == cfg).collect();
            let ok: Vec<&RunRecord> = group
                .iter()
                .filter_map(|o| o.result.as_ref().ok())
                .collect();
            let col = |f: &dyn Fn(&RunRecord) -> f64| {
                median(&mut ok.iter().map(|r| f(r)).collect::<Vec<_>>())
            };
            AggregateRow {
                kind: cfg.kind,
                r_tot: cfg.r_tot,
                b: cfg.b,
                runs: ok.len(),
                failures: group.len() - ok.len(),
                median_initial_loss: col(&|r| r.initial_loss),
                median_final_loss: col(&|r| r.final_loss),
                median_improvement: col(&|r| r.improvement()),
                median_stable_rank: col(&|r| r.report.stable_rank),
                median_effective_rank: col(&|r| r.report.effective_rank),
                median_count_1pct: col(&|r| r.report.count_above_1pct as f64),
                median_energy: col(&|r| r.report.energy),
                median_block_gini: col(&|r| r.report.block_gini.unwrap_or(f64::NAN)),
            }
        })
        .collect()
}

/// One tested claim with a one-line explanation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Claim {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// Median improvement must rise then fall across the swept `b` values
/// (in the order given), peaking strictly inside the range at `b ∈ {2, 4}`.
pub fn check_b_sweep(rows: &[AggregateRow]) -> Claim {
    let name = "b_sweep_interior_maximum".to_string();
    let bhra: Vec<&AggregateRow> = rows
        .iter()
        .filter(|r| r.kind == AdapterKind::Bhra)
        .collect();
    let values: Vec<f64> = bhra.iter().map(|r| r.median_improvement).collect();
    let summary = bhra
        .iter()
        .map(|r| format!("b={}:{:.4}", r.b, r.median_improvement))
        .collect::<Vec<_>>()
        .join(" ");
    if values.len() < 3 || values.iter().any(|v| !v.is_finite()) {
        return Claim {
            name,
            passed: false,
            detail: format!("need at least three finite b entries; got {summary}"),
        };
    }
    let peak = values
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .expect("non-empty");
    let rising = values[..=peak].windows(2).all(|w| w[0] <= w[1]);
    let falling = values[peak..].windows(2).all(|w| w[0] >= w[1]);
    let interior = peak > 0 && peak + 1 < values.len();
    let peak_b = bhra[peak].b;
    let passed = rising && falling && interior && (peak_b == 2 || peak_b == 4);
    Claim {
        name,
        passed,
        detail: format!(
            "median improvement {summary}; peak at b={peak_b}, unimodal={}",
            rising && falling
        ),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Figure1Row {
    pub kind: AdapterKind,
    pub r_tot: usize,
    pub b: usize,
    pub runs: usize,
    pub mean_stable_rank: f64,
}

/// LoRA, HiRA and BHRA (at `bhra_b`) at every budget, budget-major.
pub fn figure1_configs(budgets: &[usize], bhra_b: usize) -> Vec<AdapterConfig> {
    let kinds = [AdapterKind::Lora, AdapterKind::Hira, AdapterKind::Bhra];
    budgets
        .iter()
        .flat_map(|&r| kinds.iter().map(move |&k| budget_config(k, r, bhra_b)))
        .collect()
}

/// Mean stable rank per config over seeds; any failed run is an error.
pub fn figure1_rows(outcomes: &[RunOutcome]) -> Result<Vec<Figure1Row>> {
    let mut configs: Vec<AdapterConfig> = Vec::new();
    for o in outcomes {
        if !configs.contains(&o.config) {
            configs.push(o.config);
        }
    }
    configs
        .iter()
        .map(|cfg| {
            let srs = outcomes
                .iter()
                .filter(|o| o.config == *cfg)
                .map(|o| match &o.result {
                    Ok(r) => Ok(r.report.stable_rank),
                    Err(e) => Err(BhraError::config(format!(
                        "{} seed {}: {e}",
                        cfg.kind, o.seed
                    ))),
                })
                .collect::<Result<Vec<f64>>>()?;
            Ok(Figure1Row {
                kind: cfg.kind,
                r_tot: cfg.r_tot,
                b: cfg.b,
                runs: srs.len(),
                mean_stable_rank: mean(&srs),
            })
        })
        .collect()
}

/// Trains every [`figure1_configs`] entry on every seed and averages the
/// stable rank of the learned update.
pub fn figure1_probe(
    spec: &ToyTaskSpec,
    budgets: &[usize],
    seeds: &[u64],
    bhra_b: usize,
) -> Result<Vec<Figure1Row>> {
    spec.validate()?;
    let configs = figure1_configs(budgets, bhra_b);
    for cfg in &configs {
        cfg.validate(spec.m, spec.n)?;
    }
    figure1_rows(&run_many(spec, &configs, seeds))
}

/// BHRA above HiRA at every budget, LoRA below 2 at every budget.
pub fn check_figure1(rows: &[Figure1Row]) -> Vec<Claim> {
    let mut budgets: Vec<usize> = rows.iter().map(|r| r.r_tot).collect();
    budgets.dedup();
    let find = |kind, r| rows.iter().find(|row| row.kind == kind && row.r_tot == r);
    let mut bhra_ok = true;
    let mut lora_ok = true;
    let mut bhra_detail = Vec::new();
    let mut lora_detail = Vec::new();
    for &r in &budgets {
        match (find(AdapterKind::Bhra, r), find(AdapterKind::Hira, r)) {
            (Some(b), Some(h)) => {
                bhra_ok &= b.mean_stable_rank > h.mean_stable_rank;
                bhra_detail.push(format!(
                    "r={r}: {:.3} vs {:.3}",
                    b.mean_stable_rank, h.mean_stable_rank
                ));
            }
            _ => {
                bhra_ok = false;
                bhra_detail.push(format!("r={r}: missing row"));
            }
        }
        match find(AdapterKind::Lora, r) {
            Some(l) => {
                lora_ok &= l.mean_stable_rank < 2.0;
                lora_detail.push(format!("r={r}: {:.3}", l.mean_stable_rank));
            }
            None => {
                lora_ok = false;
                lora_detail.push(format!("r={r}: missing row"));
            }
        }
    }
    vec![
        Claim {
            name: "figure1_bhra_above_hira".into(),
            passed: bhra_ok && !budgets.is_empty(),
            detail: format!("mean stable rank BHRA vs HiRA: {}", bhra_detail.join(", ")),
        },
        Claim {
            name: "figure1_lora_below_two".into(),
            passed: lora_ok && !budgets.is_empty(),
            detail: format!("mean stable rank LoRA: {}", lora_detail.join(", ")),
        },
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GiniRow {
    pub kind: AdapterKind,
    pub r_tot: usize,
    pub b: usize,
    pub seed: u64,
    pub block_gini: f64,
    pub final_loss: f64,
}

/// LoRA, HiRA and BHRA (at `bhra_b`) sharing the budget `r_tot`.
pub fn gini_configs(r_tot: usize, bhra_b: usize) -> Vec<AdapterConfig> {
    [AdapterKind::Lora, AdapterKind::Hira, AdapterKind::Bhra]
        .into_iter()
        .map(|k| budget_config(k, r_tot, bhra_b))
        .collect()
}

/// Block Gini of every trained update on `grid`, paired with its final loss.
pub fn gini_probe(records: &[RunRecord], grid: BlockGrid) -> Result<Vec<GiniRow>> {
    records
        .iter()
        .map(|r| {
            Ok(GiniRow {
                kind: r.config.kind,
                r_tot: r.config.r_tot,
                b: r.config.b,
                seed: r.seed,
                block_gini: block_gini(&r.delta, grid)?,
                final_loss: r.final_loss,
            })
        })
        .collect()
}

/// Per seed: Gini ordering BHRA > HiRA > LoRA, and BHRA loss below LoRA
/// loss. Each claim needs `min_seeds` agreeing seeds. Kinds with several
/// rows for one seed are summarized by their median.
pub fn check_gini(rows: &[GiniRow], min_seeds: usize) -> Vec<Claim> {
    let mut seeds: Vec<u64> = rows.iter().map(|r| r.seed).collect();
    seeds.sort_unstable();
    seeds.dedup();
    let stat = |kind, seed, f: fn(&GiniRow) -> f64| {
        let mut v: Vec<f64> = rows
            .iter()
            .filter(|r| r.kind == kind && r.seed == seed)
            .map(f)
            .collect();
        median(&mut v)
    };
    let mut order_hits = 0;
    let mut loss_hits = 0;
    let mut detail_g = Vec::new();
    let mut detail_l = Vec::new();
    for &s in &seeds {
        let g = |k| stat(k, s, |r| r.block_gini);
        let l = |k| stat(k, s, |r| r.final_loss);
        let (gb, gh, gl) = (
            g(AdapterKind::Bhra),
            g(AdapterKind::Hira),
            g(AdapterKind::Lora),
        );
        let (lb, ll) = (l(AdapterKind::Bhra), l(AdapterKind::Lora));
        if gb > gh && gh > gl {
            order_hits += 1;
        }
        if lb < ll {
            loss_hits += 1;
        }
        detail_g.push(format!("seed {s}: {gb:.3}/{gh:.3}/{gl:.3}"));
        detail_l.push(format!("seed {s}: {lb:.4e}/{ll:.4e}"));
    }
    vec![
        Claim {
            name: "gini_order_bhra_hira_lora".into(),
            passed: order_hits >= min_seeds,
            detail: format!(
                "{order_hits}/{} seeds ordered; Gini BHRA/HiRA/LoRA {}",
                seeds.len(),
                detail_g.join(", ")
            ),
        },
        Claim {
            name: "gini_bhra_loss_below_lora".into(),
            passed: loss_hits >= min_seeds,
            detail: format!(
                "{loss_hits}/{} seeds; final loss BHRA/LoRA {}",
                seeds.len(),
                detail_l.join(", ")
            ),
        },
    ]
}
