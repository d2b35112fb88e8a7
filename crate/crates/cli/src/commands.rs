//! `reference`, `run`, `compare` and `figure-data`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rbmd_core::market_models::{sample_returns_with, SampleMatrix};
use rbmd_core::mirror_descent::{
    default_m_cap, dmd_run, initial_point, sgd_run, smd_run, OptimizerConfig, RunResult, SgdVariant,
};
use rbmd_core::parallel::map_indexed;
use rbmd_core::rb_solver::{divergence_flag, mde, normalize, reference_portfolio, risk_scaled_point};
use rbmd_core::{Error, MeasureSpec, MixtureModel, ObjectiveContext, Parallelism, PortfolioReport};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{default_schedule, ExperimentConfig, InitRule, Method, OptimizerSpec};
use crate::error::CliError;

/// Objective-gap thresholds used to count divergences.
pub const DIVERGENCE_THRESHOLDS: [f64; 4] = [5e-2, 5e-1, 5.0, 50.0];
/// Fractions of the iteration budget at which compare evaluates iterates.
pub const CHECKPOINT_FRACTIONS: [f64; 3] = [0.3, 0.6, 0.9];
/// A run "reaches" the reference when its final MDE is below this value.
pub const REFERENCE_MDE_THRESHOLD: f64 = 1e-2;

pub const REFERENCE_FILE: &str = "reference.json";
pub const SUMMARY_FILE: &str = "summary.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const ROWS_FILE: &str = "compare_rows.csv";
pub const AGGREGATE_FILE: &str = "compare_aggregate.csv";
pub const FIGURE_FILE: &str = "figure_data.csv";

#[derive(Debug, Clone)]
pub struct Invocation {
    pub config: ExperimentConfig,
    /// Raw config text, hashed into the manifest.
    pub config_text: String,
    pub out: PathBuf,
    pub seed: Option<u64>,
    pub parallelism: Parallelism,
}

impl Invocation {
    pub fn master_seed(&self) -> u64 {
        self.seed.unwrap_or(self.config.master_seed)
    }
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    command: &'a str,
    config_sha256: String,
    seed: u64,
    build: String,
}

fn write_manifest(inv: &Invocation, command: &str) -> Result<(), CliError> {
    let manifest = Manifest {
        command,
        config_sha256: hex::encode(Sha256::digest(inv.config_text.as_bytes())),
        seed: inv.master_seed(),
        build: format!(
            "rbmd {} ({})",
            env!("CARGO_PKG_VERSION"),
            if cfg!(feature = "parallel") { "parallel" } else { "sequential" }
        ),
    };
    write_json(&inv.out.join(MANIFEST_FILE), &manifest)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::io(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::io(format!("cannot write {}: {e}", path.display())))
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(format!("cannot create {}: {e}", dir.display())))
}

/// SplitMix64 finalizer, used to derive independent sub-seeds.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn core_error(context: &str, e: Error) -> CliError {
    match e {
        Error::NoConvergence { .. } => CliError::Convergence(format!("{context}: {e}")),
        Error::Config(_) => CliError::config(format!("{context}: {e}")),
        _ => CliError::config(format!("{context}: {e}")),
    }
}

fn context_for(cfg: &ExperimentConfig, model: MixtureModel) -> Result<ObjectiveContext, CliError> {
    let budget = cfg.build_budget(model.dim())?;
    ObjectiveContext::new(budget, cfg.measure, model).map_err(|e| core_error("measure", e))
}

fn compute_reference(cfg: &ExperimentConfig, ctx: &ObjectiveContext) -> Result<PortfolioReport, CliError> {
    reference_portfolio(ctx, cfg.reference.tolerance).map_err(|e| core_error("reference", e))
}

/// Optimizer configuration for one spec; `rows` is the sample count of
/// stochastic runs.
pub fn optimizer_config(
    spec: &OptimizerSpec,
    ctx: &ObjectiveContext,
    rows: Option<usize>,
) -> Result<OptimizerConfig, CliError> {
    let model = &ctx.model;
    let d = model.dim();
    let key = format!("optimizers.{}", spec.label);
    let m = spec.m.unwrap_or_else(|| default_m_cap(d));
    let schedule = match spec.schedule {
        Some(s) => s,
        None => default_schedule(spec.method, d).ok_or_else(|| {
            CliError::config(format!("{key}.schedule: no default learning rate for d = {d}"))
        })?,
    };
    let y0 = match &spec.y0 {
        Some(y) => {
            if y.len() != d {
                return Err(CliError::config(format!("{key}.y0: expected {d} entries, got {}", y.len())));
            }
            y.clone()
        }
        None => starting_point(spec.init, ctx, m).map_err(|e| core_error(&format!("{key}.init"), e))?,
    };
    let iterations = match (spec.method, rows) {
        (Method::Dmd, _) => spec.iterations.unwrap_or(1),
        (_, Some(r)) => r * spec.epochs,
        (_, None) => return Err(CliError::config(format!("samples: required by {key}"))),
    };
    let mut cfg = OptimizerConfig::new(m, schedule, iterations, y0).map_err(|e| CliError::config(format!("{key}: {e}")))?;
    cfg.epochs = if spec.method == Method::Dmd { 1 } else { spec.epochs };
    cfg.xi0 = spec.xi0;
    cfg.tail_fraction = spec.tail_fraction;
    cfg.record_every = spec.record_every;
    cfg.reshuffle = spec.reshuffle;
    cfg.validate().map_err(|e| CliError::config(format!("{key}: {e}")))?;
    Ok(cfg)
}

fn starting_point(rule: InitRule, ctx: &ObjectiveContext, m: f64) -> rbmd_core::Result<Vec<f64>> {
    let mut y = match rule {
        InitRule::InverseVariance => initial_point(&ctx.model, f64::INFINITY),
        InitRule::RiskScaled => risk_scaled_point(ctx, &initial_point(&ctx.model, f64::INFINITY))?,
        InitRule::Entropy => vec![(-1.0f64).exp(); ctx.dim()],
    };
    let norm: f64 = y.iter().sum();
    if norm > m {
        y.iter_mut().for_each(|v| *v *= m / norm);
    }
    Ok(y)
}

fn execute_optimizer(
    spec: &OptimizerSpec,
    ctx: &ObjectiveContext,
    samples: Option<&SampleMatrix>,
    cfg: &OptimizerConfig,
) -> Result<RunResult, CliError> {
    let key = format!("optimizers.{}", spec.label);
    let samples = || samples.ok_or_else(|| CliError::config(format!("samples: required by {key}")));
    let result = match spec.method {
        Method::Dmd => dmd_run(ctx, cfg),
        Method::Smd => smd_run(ctx, samples()?, cfg),
        Method::Csgd => sgd_run(SgdVariant::Classical, ctx, samples()?, cfg, spec.floor_eps),
        Method::Tsgd => sgd_run(SgdVariant::Tamed, ctx, samples()?, cfg, spec.floor_eps),
    };
    result.map_err(|e| core_error(&key, e))
}

fn draw_samples(
    cfg: &ExperimentConfig,
    model: &MixtureModel,
    seed: u64,
    par: Parallelism,
) -> Result<Option<SampleMatrix>, CliError> {
    if !cfg.optimizers.iter().any(|o| o.method.is_stochastic()) {
        return Ok(None);
    }
    let n = cfg.samples.ok_or_else(|| CliError::config("samples: required by stochastic optimizers"))?;
    sample_returns_with(model, n, derive_seed(seed, 1), par)
        .map(Some)
        .map_err(|e| core_error("samples", e))
}

/// Writes the reference portfolio report; exit code 2 when it does not converge.
pub fn cmd_reference(inv: &Invocation) -> Result<PortfolioReport, CliError> {
    ensure_dir(&inv.out)?;
    write_manifest(inv, "reference")?;
    let model = inv.config.build_model(0)?;
    let ctx = context_for(&inv.config, model)?;
    let report = compute_reference(&inv.config, &ctx)?;
    write_json(&inv.out.join(REFERENCE_FILE), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerSummary {
    pub label: String,
    pub method: Method,
    pub iterations: usize,
    pub diverged: bool,
    pub weights_final: Vec<f64>,
    pub weights_weighted_avg: Vec<f64>,
    pub weights_tail_avg: Vec<f64>,
    pub y_final: Vec<f64>,
    pub xi_final: f64,
    /// VaR estimate for Expected Shortfall: `xi / |y|_1` for stochastic
    /// methods, the exact VaR of the final portfolio for `dmd`.
    pub var_estimate: Option<f64>,
    pub gap_final: Option<f64>,
    pub mde_final: Option<f64>,
    pub mde_tail_avg: Option<f64>,
    pub reference_reached: Option<bool>,
    pub projections: usize,
    pub last_projection: Option<usize>,
    pub min_underbar_y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub reference_weights: Option<Vec<f64>>,
    pub reference_objective: Option<f64>,
    pub optimizers: Vec<OptimizerSummary>,
}

fn weights_or_nan(y: &[f64]) -> Vec<f64> {
    normalize(y).unwrap_or_else(|_| vec![f64::NAN; y.len()])
}

/// JSON cannot carry non-finite numbers; they are reported as `null`.
fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

/// Runs every configured optimizer on one model and sample set.
pub fn cmd_run(inv: &Invocation) -> Result<RunSummary, CliError> {
    let cfg = &inv.config;
    if cfg.optimizers.is_empty() {
        return Err(CliError::config("optimizers: at least one optimizer is required"));
    }
    ensure_dir(&inv.out)?;
    write_manifest(inv, "run")?;
    let seed = inv.master_seed();
    let model = cfg.build_model(0)?;
    let ctx = context_for(cfg, model.clone())?;
    let reference = compute_reference(cfg, &ctx).ok();
    if let Some(rep) = &reference {
        write_json(&inv.out.join(REFERENCE_FILE), rep)?;
    }
    let samples = draw_samples(cfg, &model, seed, inv.parallelism)?;
    let mut summaries = Vec::new();
    for spec in &cfg.optimizers {
        let mut oc = optimizer_config(spec, &ctx, samples.as_ref().map(|s| s.rows()))?;
        oc.gap_reference = reference.as_ref().map(|r| r.objective);
        oc.shuffle_seed = derive_seed(seed, 2);
        let run = execute_optimizer(spec, &ctx, samples.as_ref(), &oc)?;
        let path = inv.out.join(format!("trace_{}.csv", spec.label));
        let file = fs::File::create(&path).map_err(|e| CliError::io(format!("cannot write {}: {e}", path.display())))?;
        run.write_trace_csv(std::io::BufWriter::new(file))?;

        let weights_final = weights_or_nan(&run.y_final);
        let weights_tail_avg = weights_or_nan(&run.y_tail_avg);
        let var_estimate = match (cfg.measure, spec.method) {
            (MeasureSpec::ExpectedShortfall { .. }, Method::Dmd) => {
                ctx.inner_minimizer(&weights_final).ok().and_then(finite)
            }
            (MeasureSpec::ExpectedShortfall { .. }, _) => finite(run.xi_final / run.y_final.iter().sum::<f64>()),
            _ => None,
        };
        let mde_final = reference.as_ref().and_then(|r| mde(&weights_final, &r.weights).ok()).and_then(finite);
        let gap_final = reference
            .as_ref()
            .and_then(|r| ctx.gamma_value(&run.y_final).ok().map(|g| g - r.objective))
            .and_then(finite);
        summaries.push(OptimizerSummary {
            label: spec.label.clone(),
            method: spec.method,
            iterations: run.iterations,
            diverged: run.diverged,
            weights_weighted_avg: weights_or_nan(&run.y_weighted_avg),
            mde_tail_avg: reference
                .as_ref()
                .and_then(|r| mde(&weights_tail_avg, &r.weights).ok())
                .and_then(finite),
            reference_reached: reference
                .as_ref()
                .map(|_| !run.diverged && mde_final.is_some_and(|e| e < REFERENCE_MDE_THRESHOLD)),
            weights_final,
            weights_tail_avg,
            y_final: run.y_final.clone(),
            xi_final: run.xi_final,
            var_estimate,
            gap_final,
            mde_final,
            projections: run.projections,
            last_projection: run.last_projection,
            min_underbar_y: run.min_underbar_y,
        });
    }
    let summary = RunSummary {
        seed,
        reference_weights: reference.as_ref().map(|r| r.weights.clone()),
        reference_objective: reference.as_ref().map(|r| r.objective),
        optimizers: summaries,
    };
    write_json(&inv.out.join(SUMMARY_FILE), &summary)?;
    Ok(summary)
}

/// One optimizer on one replication.
#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub optimizer: String,
    pub d: usize,
    pub replication: usize,
    pub seed: u64,
    pub gap_checkpoints: [f64; 3],
    pub mde_checkpoints: [f64; 3],
    pub gap_final: f64,
    pub mde_final: f64,
    pub diverged: [bool; 4],
}

fn gap_and_mde(ctx: &ObjectiveContext, reference: &PortfolioReport, y: &[f64]) -> (f64, f64) {
    if y.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return (f64::INFINITY, f64::INFINITY);
    }
    let gap = ctx
        .gamma_value(y)
        .map(|g| g - reference.objective)
        .unwrap_or(f64::INFINITY);
    let err = normalize(y)
        .and_then(|u| mde(&u, &reference.weights))
        .unwrap_or(f64::INFINITY);
    (if gap.is_nan() { f64::INFINITY } else { gap }, err)
}

fn failed_row(spec: &OptimizerSpec, d: usize, replication: usize, seed: u64) -> CompareRow {
    CompareRow {
        optimizer: spec.label.clone(),
        d,
        replication,
        seed,
        gap_checkpoints: [f64::INFINITY; 3],
        mde_checkpoints: [f64::INFINITY; 3],
        gap_final: f64::INFINITY,
        mde_final: f64::INFINITY,
        diverged: [true; 4],
    }
}

fn replicate(cfg: &ExperimentConfig, master: u64, index: usize) -> Result<Vec<CompareRow>, CliError> {
    let seed = master ^ index as u64;
    let model = cfg.build_model(index as u64)?;
    let d = model.dim();
    let ctx = context_for(cfg, model.clone())?;
    let reference = match compute_reference(cfg, &ctx) {
        Ok(r) => r,
        Err(CliError::Convergence(_)) => {
            return Ok(cfg.optimizers.iter().map(|s| failed_row(s, d, index, seed)).collect());
        }
        Err(e) => return Err(e),
    };
    let samples = draw_samples(cfg, &model, seed, Parallelism::Sequential)?;
    let mut rows = Vec::new();
    for spec in &cfg.optimizers {
        let mut oc = optimizer_config(spec, &ctx, samples.as_ref().map(|s| s.rows()))?;
        let n = oc.iterations;
        oc.checkpoints = CHECKPOINT_FRACTIONS
            .iter()
            .map(|f| ((f * n as f64).round() as usize).max(1))
            .collect();
        oc.track_gap = false;
        oc.record_every = n;
        oc.shuffle_seed = derive_seed(seed, 2);
        let run = match execute_optimizer(spec, &ctx, samples.as_ref(), &oc) {
            Ok(r) => r,
            Err(CliError::Config(msg)) if msg.contains("optimizers.") => return Err(CliError::Config(msg)),
            Err(_) => {
                rows.push(failed_row(spec, d, index, seed));
                continue;
            }
        };
        let mut gap_checkpoints = [f64::INFINITY; 3];
        let mut mde_checkpoints = [f64::INFINITY; 3];
        for (slot, k) in oc.checkpoints.iter().enumerate() {
            if let Some(s) = run.snapshots.iter().find(|s| s.iter == *k) {
                let (g, e) = gap_and_mde(&ctx, &reference, &s.y);
                gap_checkpoints[slot] = g;
                mde_checkpoints[slot] = e;
            }
        }
        let (gap_final, mde_final) = if run.diverged {
            (f64::INFINITY, f64::INFINITY)
        } else {
            gap_and_mde(&ctx, &reference, &run.y_final)
        };
        let mut diverged = [false; 4];
        for (flag, eps) in diverged.iter_mut().zip(DIVERGENCE_THRESHOLDS) {
            *flag = run.diverged || divergence_flag(gap_final, eps);
        }
        rows.push(CompareRow {
            optimizer: spec.label.clone(),
            d,
            replication: index,
            seed,
            gap_checkpoints,
            mde_checkpoints,
            gap_final,
            mde_final,
            diverged,
        });
    }
    Ok(rows)
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else if v[n / 2 - 1] == v[n / 2] {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Median absolute deviation around the median.
pub fn median_abs_deviation(values: &[f64]) -> f64 {
    let m = median(values);
    let dev: Vec<f64> = values.iter().map(|v| if *v == m { 0.0 } else { (v - m).abs() }).collect();
    median(&dev)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub optimizer: String,
    pub d: usize,
    pub replications: usize,
    pub divergences: [usize; 4],
    /// `(median, MAD)` of the gap at the three checkpoints and at the end.
    pub gap: [(f64, f64); 4],
    pub mde: [(f64, f64); 4],
}

pub fn aggregate(rows: &[CompareRow]) -> Vec<AggregateRow> {
    let mut groups: BTreeMap<(String, usize), Vec<&CompareRow>> = BTreeMap::new();
    for r in rows {
        groups.entry((r.optimizer.clone(), r.d)).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|((optimizer, d), group)| {
            let stat = |f: &dyn Fn(&CompareRow) -> f64| {
                let v: Vec<f64> = group.iter().map(|r| f(r)).collect();
                (median(&v), median_abs_deviation(&v))
            };
            let mut divergences = [0; 4];
            for (j, count) in divergences.iter_mut().enumerate() {
                *count = group.iter().filter(|r| r.diverged[j]).count();
            }
            AggregateRow {
                optimizer,
                d,
                replications: group.len(),
                divergences,
                gap: [
                    stat(&|r| r.gap_checkpoints[0]),
                    stat(&|r| r.gap_checkpoints[1]),
                    stat(&|r| r.gap_checkpoints[2]),
                    stat(&|r| r.gap_final),
                ],
                mde: [
                    stat(&|r| r.mde_checkpoints[0]),
                    stat(&|r| r.mde_checkpoints[1]),
                    stat(&|r| r.mde_checkpoints[2]),
                    stat(&|r| r.mde_final),
                ],
            }
        })
        .collect()
}

const STAGES: [&str; 4] = ["k30", "k60", "k90", "final"];
const EPS_LABELS: [&str; 4] = ["0.05", "0.5", "5", "50"];

pub fn rows_header() -> Vec<String> {
    let mut h: Vec<String> = ["optimizer", "d", "replication", "seed"].iter().map(|s| s.to_string()).collect();
    for s in STAGES {
        h.push(format!("gap_{s}"));
    }
    for s in STAGES {
        h.push(format!("mde_{s}"));
    }
    for e in EPS_LABELS {
        h.push(format!("diverged_{e}"));
    }
    h
}

pub fn aggregate_header() -> Vec<String> {
    let mut h: Vec<String> = ["optimizer", "d", "replications"].iter().map(|s| s.to_string()).collect();
    for e in EPS_LABELS {
        h.push(format!("divergences_{e}"));
    }
    for metric in ["gap", "mde"] {
        for s in STAGES {
            h.push(format!("median_{metric}_{s}"));
            h.push(format!("mad_{metric}_{s}"));
        }
    }
    h
}

fn num(v: f64) -> String {
    format!("{v:e}")
}

fn write_csv(path: &Path, header: &[String], rows: impl Iterator<Item = Vec<String>>) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::io(format!("cannot write {}: {e}", path.display())))?;
    w.write_record(header).map_err(|e| CliError::io(e.to_string()))?;
    for r in rows {
        w.write_record(&r).map_err(|e| CliError::io(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct CompareOutput {
    pub rows: Vec<CompareRow>,
    pub aggregate: Vec<AggregateRow>,
}

/// Replication sweep: fresh model, reference and samples per replication,
/// every optimizer on the same samples.
pub fn cmd_compare(inv: &Invocation) -> Result<CompareOutput, CliError> {
    let cfg = &inv.config;
    if cfg.optimizers.is_empty() {
        return Err(CliError::config("optimizers: at least one optimizer is required"));
    }
    ensure_dir(&inv.out)?;
    write_manifest(inv, "compare")?;
    let master = inv.master_seed();
    let results = map_indexed(cfg.replications, inv.parallelism, |i| replicate(cfg, master, i));
    let mut rows = Vec::new();
    for r in results {
        rows.extend(r?);
    }
    rows.sort_by(|a, b| (&a.optimizer, a.seed, a.replication).cmp(&(&b.optimizer, b.seed, b.replication)));
    let agg = aggregate(&rows);

    write_csv(
        &inv.out.join(ROWS_FILE),
        &rows_header(),
        rows.iter().map(|r| {
            let mut rec = vec![r.optimizer.clone(), r.d.to_string(), r.replication.to_string(), r.seed.to_string()];
            rec.extend(r.gap_checkpoints.iter().chain([&r.gap_final]).map(|v| num(*v)));
            rec.extend(r.mde_checkpoints.iter().chain([&r.mde_final]).map(|v| num(*v)));
            rec.extend(r.diverged.iter().map(|b| b.to_string()));
            rec
        }),
    )?;
    write_csv(
        &inv.out.join(AGGREGATE_FILE),
        &aggregate_header(),
        agg.iter().map(|a| {
            let mut rec = vec![a.optimizer.clone(), a.d.to_string(), a.replications.to_string()];
            rec.extend(a.divergences.iter().map(|c| c.to_string()));
            for pairs in [&a.gap, &a.mde] {
                for (m, s) in pairs.iter() {
                    rec.push(num(*m));
                    rec.push(num(*s));
                }
            }
            rec
        }),
    )?;
    Ok(CompareOutput { rows, aggregate: agg })
}

/// Converts run traces and compare rows found in the input directory into
/// a long `series,iter,value` table.
pub fn cmd_figure_data(inv: &Invocation) -> Result<usize, CliError> {
    let input = inv.config.output_dir.clone().unwrap_or_else(|| inv.out.clone());
    if !input.is_dir() {
        return Err(CliError::io(format!("input directory {} does not exist", input.display())));
    }
    let mut traces: Vec<PathBuf> = fs::read_dir(&input)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("trace_") && n.ends_with(".csv"))
        })
        .collect();
    traces.sort();
    let rows_path = input.join(ROWS_FILE);
    if traces.is_empty() && !rows_path.is_file() {
        return Err(CliError::io(format!("no trace or compare files in {}", input.display())));
    }
    let mut out: Vec<(String, String, String)> = Vec::new();
    for path in &traces {
        let label = path
            .file_stem()
            .and_then(|s| s.to_str())
            .and_then(|s| s.strip_prefix("trace_"))
            .unwrap_or_default()
            .to_string();
        let mut reader = csv::Reader::from_path(path).map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
        let header = reader.headers().map_err(|e| CliError::io(e.to_string()))?.clone();
        let cols: Vec<&str> = header.iter().collect();
        if cols.len() < 5 || cols[..4] != ["iter", "gamma", "gap", "xi"] {
            return Err(CliError::io(format!("{}: unexpected trace header", path.display())));
        }
        let d = cols.len() - 4;
        let mut count = 0;
        for rec in reader.records() {
            let rec = rec.map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
            let iter = rec[0].to_string();
            let y: Vec<f64> = (0..d)
                .map(|i| rec[4 + i].parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
            let total: f64 = y.iter().sum();
            out.push((format!("{label}/gap"), iter.clone(), rec[2].to_string()));
            out.push((format!("{label}/xi"), iter.clone(), rec[3].to_string()));
            for (i, v) in y.iter().enumerate() {
                out.push((format!("{label}/y_{}", i + 1), iter.clone(), num(*v)));
                out.push((format!("{label}/u_{}", i + 1), iter.clone(), num(v / total)));
            }
            count += 1;
        }
        if count == 0 {
            return Err(CliError::io(format!("{}: empty trace", path.display())));
        }
    }
    if rows_path.is_file() {
        let mut reader = csv::Reader::from_path(&rows_path).map_err(|e| CliError::io(e.to_string()))?;
        let header = reader.headers().map_err(|e| CliError::io(e.to_string()))?.clone();
        let expected = rows_header();
        if header.iter().ne(expected.iter().map(String::as_str)) {
            return Err(CliError::io(format!("{}: unexpected header", rows_path.display())));
        }
        for rec in reader.records() {
            let rec = rec.map_err(|e| CliError::io(e.to_string()))?;
            for (j, col) in expected.iter().enumerate().skip(4).take(8) {
                out.push((format!("{}/d{}/{col}", &rec[0], &rec[1]), rec[2].to_string(), rec[j].to_string()));
            }
        }
    }
    ensure_dir(&inv.out)?;
    let header: Vec<String> = ["series", "iter", "value"].iter().map(|s| s.to_string()).collect();
    let n = out.len();
    write_csv(&inv.out.join(FIGURE_FILE), &header, out.into_iter().map(|(a, b, c)| vec![a, b, c]))?;
    Ok(n)
}
