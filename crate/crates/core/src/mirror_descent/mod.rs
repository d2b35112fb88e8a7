//! Entropic mirror descent (deterministic and stochastic) on the capped
//! orthant, projected SGD baselines, step schedules and iterate averaging.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::market_models::{MixtureModel, SampleMatrix};
use crate::rb_solver::ObjectiveContext;

const EXP_CLAMP: f64 = 700.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Constant,
    PowerLaw,
}

/// `gamma_n = gamma0` or `gamma_n = gamma0 * n^-beta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepSchedule {
    pub kind: ScheduleKind,
    pub gamma0: f64,
    #[serde(default)]
    pub beta: f64,
}

impl StepSchedule {
    pub fn constant(gamma0: f64) -> Self {
        StepSchedule {
            kind: ScheduleKind::Constant,
            gamma0,
            beta: 0.0,
        }
    }

    pub fn power_law(gamma0: f64, beta: f64) -> Self {
        StepSchedule {
            kind: ScheduleKind::PowerLaw,
            gamma0,
            beta,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma0 > 0.0 && self.gamma0.is_finite()) {
            return Err(Error::Config(format!("schedule.gamma0 must be positive, got {}", self.gamma0)));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::Config(format!("schedule.beta must lie in [0, 1], got {}", self.beta)));
        }
        Ok(())
    }
}

/// Step size for iteration `n >= 1`.
pub fn step_size(schedule: &StepSchedule, n: usize) -> f64 {
    debug_assert!(n >= 1);
    match schedule.kind {
        ScheduleKind::Constant => schedule.gamma0,
        ScheduleKind::PowerLaw => schedule.gamma0 * (n as f64).powf(-schedule.beta),
    }
}

/// Default cap: 100 for up to ten assets, `100 d` beyond.
pub fn default_m_cap(d: usize) -> f64 {
    if d <= 10 {
        100.0
    } else {
        100.0 * d as f64
    }
}

/// `y0_i = 1 / (d sigma_i^2)` with `sigma_i^2` the variances of the first
/// mixture component, or `e^-1 (1, ..., 1)` when that component has no
/// variance; rescaled onto the ball of radius `m` when it lies outside.
pub fn initial_point(model: &MixtureModel, m: f64) -> Vec<f64> {
    let d = model.dim();
    let mut y = match model.first.variances() {
        Some(var) => var.iter().map(|v| 1.0 / (d as f64 * v)).collect(),
        None => vec![(-1.0f64).exp(); d],
    };
    let norm: f64 = y.iter().sum();
    if norm > m {
        for v in &mut y {
            *v *= m / norm;
        }
    }
    y
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    pub m_cap: f64,
    pub schedule: StepSchedule,
    /// Total number of updates; stochastic runs need `epochs * rows`.
    pub iterations: usize,
    pub epochs: usize,
    pub y0: Vec<f64>,
    pub xi0: f64,
    pub record_every: usize,
    /// Reshuffle the sample order at every epoch after the first.
    pub reshuffle: bool,
    pub shuffle_seed: u64,
    /// Deterministic runs stop once the sup-norm of the tamed gradient is
    /// at most this value.
    pub tolerance: Option<f64>,
    /// `Gamma(y*)`; the gap column then reports `Gamma(y) - Gamma(y*)`.
    pub gap_reference: Option<f64>,
    /// Iterations at which the current iterate is stored.
    pub checkpoints: Vec<usize>,
    pub tail_fraction: f64,
    /// Whether to evaluate `Gamma` at recorded iterates.
    pub track_gap: bool,
}

impl OptimizerConfig {
    pub fn new(m_cap: f64, schedule: StepSchedule, iterations: usize, y0: Vec<f64>) -> Result<Self> {
        let cfg = OptimizerConfig {
            m_cap,
            schedule,
            iterations,
            epochs: 1,
            y0,
            xi0: 0.0,
            record_every: 100,
            reshuffle: false,
            shuffle_seed: 0,
            tolerance: None,
            gap_reference: None,
            checkpoints: Vec::new(),
            tail_fraction: 0.2,
            track_gap: true,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Sets `epochs` and the matching iteration count for `rows` samples.
    pub fn with_epochs(mut self, rows: usize, epochs: usize) -> Self {
        self.epochs = epochs;
        self.iterations = rows * epochs;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        if !(self.m_cap > 0.0 && self.m_cap.is_finite()) {
            return Err(Error::Config(format!("m must be positive, got {}", self.m_cap)));
        }
        if self.iterations == 0 || self.epochs == 0 {
            return Err(Error::Config("iterations and epochs must be at least 1".into()));
        }
        if self.y0.is_empty() || self.y0.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::Config("y0 must be strictly positive".into()));
        }
        let norm: f64 = self.y0.iter().sum();
        if norm > self.m_cap * (1.0 + 1e-12) {
            return Err(Error::Config(format!("m = {} is below |y0|_1 = {norm}", self.m_cap)));
        }
        if !(self.tail_fraction > 0.0 && self.tail_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "tail_fraction must lie in (0, 1], got {}",
                self.tail_fraction
            )));
        }
        if self.record_every == 0 {
            return Err(Error::Config("record_every must be at least 1".into()));
        }
        if !self.xi0.is_finite() {
            return Err(Error::Config("xi0 must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    /// Step used to reach this iterate (0 for the initial point).
    pub gamma: f64,
    pub gap: f64,
    pub xi: f64,
    pub y: Vec<f64>,
    /// Weighted average `ybar^n` at this iteration.
    pub y_avg: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub iter: usize,
    pub y: Vec<f64>,
    pub xi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub y_final: Vec<f64>,
    pub xi_final: f64,
    pub y_weighted_avg: Vec<f64>,
    pub y_tail_avg: Vec<f64>,
    pub trace: Vec<TraceRow>,
    pub min_underbar_y: f64,
    pub diverged: bool,
    /// Updates performed.
    pub iterations: usize,
    /// Number of updates where the cap rescaling was active.
    pub projections: usize,
    /// Last update (1-based) where the cap rescaling was active.
    pub last_projection: Option<usize>,
    pub snapshots: Vec<Snapshot>,
    /// Sup-norm of the tamed gradient at `y_final` (deterministic runs).
    pub final_grad_norm: f64,
    pub converged: bool,
}

impl RunResult {
    /// `(iteration, gap)` pairs of the recorded trace.
    pub fn gap_trace(&self) -> Vec<(usize, f64)> {
        self.trace.iter().map(|r| (r.iter, r.gap)).collect()
    }

    /// Writes `iter,gamma,gap,xi,y_1,...,y_d` rows.
    pub fn write_trace_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let d = self.y_final.len();
        let mut header = String::from("iter,gamma,gap,xi");
        for i in 1..=d {
            header.push_str(&format!(",y_{i}"));
        }
        writeln!(out, "{header}")?;
        for row in &self.trace {
            write!(out, "{},{:e},{:e},{:e}", row.iter, row.gamma, row.gap, row.xi)?;
            for v in &row.y {
                write!(out, ",{v:e}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// Entropic proximal map on `B_m`: `y e^-v`, rescaled to norm `m` when its
/// norm exceeds `m`. Returns the point and whether rescaling was applied.
pub fn prox_map_flagged(y: &[f64], v: &[f64], m: f64) -> (Vec<f64>, bool) {
    let mut raw: Vec<f64> = y
        .iter()
        .zip(v)
        .map(|(yi, vi)| yi * (-vi.clamp(-EXP_CLAMP, EXP_CLAMP)).exp())
        .collect();
    let norm: f64 = raw.iter().sum();
    let capped = if norm.is_finite() && raw.iter().all(|r| r.is_finite()) {
        if norm > m {
            let s = m / norm;
            raw.iter_mut().for_each(|r| *r *= s);
            true
        } else {
            false
        }
    } else {
        // overflow: renormalize in log space
        let logs: Vec<f64> = y
            .iter()
            .zip(v)
            .map(|(yi, vi)| yi.ln() - vi.clamp(-EXP_CLAMP, EXP_CLAMP))
            .collect();
        let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = top + logs.iter().map(|l| (l - top).exp()).sum::<f64>().ln();
        for (r, l) in raw.iter_mut().zip(&logs) {
            *r = (l - lse + m.ln()).exp();
        }
        true
    };
    raw.iter_mut().for_each(|r| *r = r.max(f64::MIN_POSITIVE));
    (raw, capped)
}

pub fn prox_map(y: &[f64], v: &[f64], m: f64) -> Vec<f64> {
    prox_map_flagged(y, v, m).0
}

/// `sum_k gamma_k y^{k-1} / sum_k gamma_k`, with `trajectory[k-1]` weighted
/// by `gamma_k`.
pub fn weighted_average(trajectory: &[Vec<f64>], schedule: &StepSchedule) -> Result<Vec<f64>> {
    let first = trajectory
        .first()
        .ok_or_else(|| Error::Domain("empty trajectory".into()))?;
    let mut acc = Averager::new(first.len());
    for (k, y) in trajectory.iter().enumerate() {
        check_dim(first.len(), y.len())?;
        acc.add(y, step_size(schedule, k + 1));
    }
    Ok(acc.mean())
}

/// Unweighted mean of the last `ceil(fraction * len)` iterates.
pub fn tail_average(trajectory: &[Vec<f64>], fraction: f64) -> Result<Vec<f64>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Domain(format!("fraction must lie in (0, 1], got {fraction}")));
    }
    let count = tail_len(trajectory.len(), fraction);
    if count == 0 {
        return Err(Error::Domain("empty tail".into()));
    }
    let tail = &trajectory[trajectory.len() - count..];
    let mut acc = Averager::new(tail[0].len());
    for y in tail {
        check_dim(tail[0].len(), y.len())?;
        acc.add(y, 1.0);
    }
    Ok(acc.mean())
}

fn tail_len(len: usize, fraction: f64) -> usize {
    ((fraction * len as f64).ceil() as usize).min(len)
}

struct Averager {
    sum: Vec<f64>,
    weight: f64,
}

impl Averager {
    fn new(d: usize) -> Self {
        Averager {
            sum: vec![0.0; d],
            weight: 0.0,
        }
    }

    fn add(&mut self, y: &[f64], w: f64) {
        for (s, v) in self.sum.iter_mut().zip(y) {
            *s += w * v;
        }
        self.weight += w;
    }

    fn mean(&self) -> Vec<f64> {
        if self.weight == 0.0 {
            return self.sum.clone();
        }
        self.sum.iter().map(|s| s / self.weight).collect()
    }
}

/// Bookkeeping shared by every engine.
struct Recorder<'a> {
    ctx: &'a ObjectiveContext,
    cfg: &'a OptimizerConfig,
    weighted: Averager,
    tail: Averager,
    tail_start: usize,
    trace: Vec<TraceRow>,
    snapshots: Vec<Snapshot>,
    min_y: f64,
    projections: usize,
    last_projection: Option<usize>,
}

impl<'a> Recorder<'a> {
    fn new(ctx: &'a ObjectiveContext, cfg: &'a OptimizerConfig) -> Self {
        let d = cfg.y0.len();
        Recorder {
            ctx,
            cfg,
            weighted: Averager::new(d),
            tail: Averager::new(d),
            tail_start: cfg.iterations - tail_len(cfg.iterations, cfg.tail_fraction),
            trace: Vec::new(),
            snapshots: Vec::new(),
            min_y: f64::INFINITY,
            projections: 0,
            last_projection: None,
        }
    }

    fn gap(&self, y: &[f64]) -> f64 {
        if !self.cfg.track_gap {
            return f64::NAN;
        }
        match self.ctx.gamma_value(y) {
            Ok(v) => v - self.cfg.gap_reference.unwrap_or(0.0),
            Err(_) => f64::INFINITY,
        }
    }

    /// Called with the iterate `y^{k-1}` right before update `k` with step `gamma`.
    fn before_step(&mut self, y: &[f64], gamma: f64) {
        self.weighted.add(y, gamma);
    }

    /// Called with the iterate `y^k` after update `k`.
    fn after_step(&mut self, k: usize, gamma: f64, y: &[f64], xi: f64, capped: bool) {
        if capped {
            self.projections += 1;
            self.last_projection = Some(k);
        }
        self.observe(y);
        if k > self.tail_start {
            self.tail.add(y, 1.0);
        }
        if self.cfg.checkpoints.contains(&k) {
            self.snapshots.push(Snapshot { iter: k, y: y.to_vec(), xi });
        }
        if k.is_multiple_of(self.cfg.record_every) || k == self.cfg.iterations {
            self.record(k, gamma, y, xi);
        }
    }

    fn observe(&mut self, y: &[f64]) {
        let m = y.iter().copied().fold(f64::INFINITY, f64::min);
        self.min_y = self.min_y.min(m);
    }

    fn record(&mut self, k: usize, gamma: f64, y: &[f64], xi: f64) {
        let gap = self.gap(y);
        self.trace.push(TraceRow {
            iter: k,
            gamma,
            gap,
            xi,
            y: y.to_vec(),
            y_avg: self.weighted.mean(),
        });
    }

    fn finish(self, y: Vec<f64>, xi: f64, iterations: usize, diverged: bool, converged: bool) -> RunResult {
        let final_grad_norm = if diverged {
            f64::INFINITY
        } else {
            self.ctx
                .tamed_gradient(&y)
                .map(|g| g.iter().fold(0.0f64, |a, v| a.max(v.abs())))
                .unwrap_or(f64::INFINITY)
        };
        let y_tail_avg = if self.tail.weight > 0.0 { self.tail.mean() } else { y.clone() };
        let y_weighted_avg = if self.weighted.weight > 0.0 {
            self.weighted.mean()
        } else {
            y.clone()
        };
        RunResult {
            y_final: y,
            xi_final: xi,
            y_weighted_avg,
            y_tail_avg,
            trace: self.trace,
            min_underbar_y: self.min_y,
            diverged,
            iterations,
            projections: self.projections,
            last_projection: self.last_projection,
            snapshots: self.snapshots,
            final_grad_norm,
            converged,
        }
    }
}

fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |a, x| a.max(x.abs()))
}

/// Deterministic mirror descent `y^{k+1} = P(y^k, gamma_{k+1} kappa(y^k) grad Gamma(y^k))`.
pub fn dmd_run(ctx: &ObjectiveContext, cfg: &OptimizerConfig) -> Result<RunResult> {
    cfg.validate()?;
    check_dim(ctx.dim(), cfg.y0.len())?;
    let mut rec = Recorder::new(ctx, cfg);
    let mut y = cfg.y0.clone();
    rec.observe(&y);
    let xi_of = |y: &[f64]| ctx.inner_minimizer(y).unwrap_or(f64::NAN);
    rec.record(0, 0.0, &y, xi_of(&y));
    let mut done = 0;
    let mut diverged = false;
    let mut converged = false;
    for k in 1..=cfg.iterations {
        let grad = match ctx.tamed_gradient(&y) {
            Ok(g) if g.iter().all(|v| v.is_finite()) => g,
            _ => {
                diverged = true;
                break;
            }
        };
        if let Some(tol) = cfg.tolerance {
            if sup_norm(&grad) <= tol {
                converged = true;
                break;
            }
        }
        let gamma = step_size(&cfg.schedule, k);
        rec.before_step(&y, gamma);
        let step: Vec<f64> = grad.iter().map(|g| gamma * g).collect();
        let (next, capped) = prox_map_flagged(&y, &step, cfg.m_cap);
        y = next;
        done = k;
        let record_now = k % cfg.record_every == 0 || k == cfg.iterations;
        let xi = if record_now || cfg.checkpoints.contains(&k) { xi_of(&y) } else { f64::NAN };
        rec.after_step(k, gamma, &y, xi, capped);
    }
    if converged && rec.trace.last().map(|r| r.iter) != Some(done) {
        let xi = xi_of(&y);
        rec.record(done, step_size(&cfg.schedule, done.max(1)), &y, xi);
    }
    if !diverged && cfg.tolerance.is_none() {
        converged = true;
    }
    let xi = xi_of(&y);
    Ok(rec.finish(y, xi, done, diverged, converged))
}

/// Which stochastic update is applied to `y`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StochasticMethod {
    /// Tamed gradient through the entropic proximal map (SMD).
    MirrorDescent,
    /// `y - gamma G` with nonpositive coordinates floored (c-SGD).
    ClassicalSgd,
    /// As `ClassicalSgd` with `G` multiplied by `kappa(y)` (t-SGD).
    TamedSgd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SgdVariant {
    Classical,
    Tamed,
}

/// Stochastic mirror descent on the joint `(xi, y)` problem.
pub fn smd_run(ctx: &ObjectiveContext, samples: &SampleMatrix, cfg: &OptimizerConfig) -> Result<RunResult> {
    stochastic_run(StochasticMethod::MirrorDescent, ctx, samples, cfg, 0.0)
}

/// Projected SGD baseline; no cap on `|y|_1`.
pub fn sgd_run(
    variant: SgdVariant,
    ctx: &ObjectiveContext,
    samples: &SampleMatrix,
    cfg: &OptimizerConfig,
    floor_eps: f64,
) -> Result<RunResult> {
    if !(floor_eps > 0.0 && floor_eps.is_finite()) {
        return Err(Error::Config(format!("floor_eps must be positive, got {floor_eps}")));
    }
    let method = match variant {
        SgdVariant::Classical => StochasticMethod::ClassicalSgd,
        SgdVariant::Tamed => StochasticMethod::TamedSgd,
    };
    stochastic_run(method, ctx, samples, cfg, floor_eps)
}

/// Sets every nonpositive coordinate to `eps`.
pub fn floor_projection(y: &mut [f64], eps: f64) {
    for v in y.iter_mut() {
        if *v <= 0.0 {
            *v = eps;
        }
    }
}

fn stochastic_run(
    method: StochasticMethod,
    ctx: &ObjectiveContext,
    samples: &SampleMatrix,
    cfg: &OptimizerConfig,
    floor_eps: f64,
) -> Result<RunResult> {
    cfg.validate()?;
    let d = ctx.dim();
    check_dim(d, cfg.y0.len())?;
    check_dim(d, samples.cols())?;
    let rows = samples.rows();
    if rows == 0 {
        return Err(Error::Domain("sample matrix is empty".into()));
    }
    if cfg.epochs * rows != cfg.iterations {
        return Err(Error::Config(format!(
            "iterations ({}) must equal epochs ({}) times sample rows ({rows})",
            cfg.iterations, cfg.epochs
        )));
    }
    let measure = ctx.measure;
    let budget = ctx.budget.as_slice();
    let mut rec = Recorder::new(ctx, cfg);
    let mut y = cfg.y0.clone();
    let mut xi = cfg.xi0;
    rec.observe(&y);
    rec.record(0, 0.0, &y, xi);

    let mut order: Vec<usize> = (0..rows).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.shuffle_seed);
    let mut grad = vec![0.0; d];
    let mut step = vec![0.0; d];
    let mut k = 0;
    let mut diverged = false;
    'epochs: for epoch in 0..cfg.epochs {
        if cfg.reshuffle && epoch > 0 {
            order.shuffle(&mut rng);
        }
        for &row in &order {
            k += 1;
            let x = samples.row(row);
            let gamma = step_size(&cfg.schedule, k);
            rec.before_step(&y, gamma);
            let z = -y.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
            let g_xi = measure.loss_grad_xi(xi, z);
            let g_z = measure.loss_grad_z(xi, z);
            for i in 0..d {
                grad[i] = -x[i] * g_z - budget[i] / y[i];
            }
            xi -= gamma * g_xi;
            let capped = match method {
                StochasticMethod::MirrorDescent => {
                    let kappa = y.iter().copied().fold(1.0f64, f64::min);
                    for i in 0..d {
                        step[i] = gamma * kappa * grad[i];
                    }
                    let (next, capped) = prox_map_flagged(&y, &step, cfg.m_cap);
                    y = next;
                    capped
                }
                StochasticMethod::ClassicalSgd | StochasticMethod::TamedSgd => {
                    let kappa = if method == StochasticMethod::TamedSgd {
                        y.iter().copied().fold(1.0f64, f64::min)
                    } else {
                        1.0
                    };
                    for i in 0..d {
                        y[i] -= gamma * kappa * grad[i];
                    }
                    floor_projection(&mut y, floor_eps);
                    false
                }
            };
            if !xi.is_finite() || y.iter().any(|v| !v.is_finite()) {
                diverged = true;
                rec.record(k, gamma, &y, xi);
                break 'epochs;
            }
            rec.after_step(k, gamma, &y, xi, capped);
        }
    }
    Ok(rec.finish(y, xi, k, diverged, !diverged))
}
