//! Implicit Euler time stepping for `u_t = −u_xxxx − ∂ₓₓ(u_x²)`.
//!
//! Each step solves
//!
//! ```text
//! (u_k − u_{k−1})/τ + ∂ₓ⁴u_k + ∂ₓₓ((∂ₓu_k)²) = 0
//! ```
//!
//! by Picard iteration on `u ← (I + τ∂ₓ⁴)⁻¹(u_{k−1} − τ∂ₓₓ((∂ₓu)²))`, which is
//! diagonal in Fourier space. When the iteration fails to contract, the step
//! is split in two halves, recursively.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::{FieldError, SpectralField, MEAN_ZERO_TOL};
use crate::local_energy::{SpaceTimeWeight, WeightError};
use crate::sampling::{self, SamplingError, SpaceRule, SpaceTimeSamples};

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
    #[error("initial data has nonzero mean {0:e}")]
    NonZeroMean(f64),
    #[error("Picard iteration did not converge at step {step} (t = {t}) after {halvings} step halvings")]
    NonConvergence { step: usize, t: f64, halvings: u32 },
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error(transparent)]
    Weight(#[from] WeightError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub tau: f64,
    pub t_end: f64,
    pub picard_tol: f64,
    pub picard_max_iter: usize,
    pub step_halving_max: u32,
    pub dealias: bool,
    /// `false` drops `∂ₓₓ(u_x²)`, leaving the biharmonic heat flow.
    pub nonlinear: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tau: 5e-4,
            t_end: 0.1,
            picard_tol: 1e-12,
            picard_max_iter: 200,
            step_halving_max: 8,
            dealias: true,
            nonlinear: true,
        }
    }
}

impl SolverConfig {
    pub fn new(tau: f64, t_end: f64) -> Self {
        Self { tau, t_end, ..Self::default() }
    }

    pub fn linear(mut self) -> Self {
        self.nonlinear = false;
        self
    }

    pub fn validate(&self) -> Result<(), SolverError> {
        let bad = |m: &str| Err(SolverError::InvalidConfig(m.to_string()));
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return bad("tau must be positive");
        }
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return bad("t_end must be positive");
        }
        if self.tau >= self.t_end {
            return bad("tau must be smaller than t_end");
        }
        if !(self.picard_tol > 0.0) {
            return bad("picard_tol must be positive");
        }
        if self.picard_max_iter == 0 {
            return bad("picard_max_iter must be positive");
        }
        Ok(())
    }

    /// Number of steps, the last one possibly shorter than `tau`.
    pub fn n_steps(&self) -> usize {
        ((self.t_end / self.tau) * (1.0 - 1e-12)).ceil() as usize
    }
}

/// Diagnostics of one accepted step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub t: f64,
    pub dt: f64,
    pub picard_iters: usize,
    pub substeps: usize,
    /// Sup over Fourier modes of the scheme defect at the accepted iterate.
    pub residual: f64,
    /// `‖u_k‖²`.
    pub energy: f64,
    /// `Σ_sub h‖∂ₓₓu‖²` accumulated over the substeps of this step.
    pub dissipation: f64,
    /// `‖u_k‖² + Σ_sub (2h‖∂ₓₓu‖² + ‖Δu‖²) − ‖u_{k−1}‖²`, zero for an exact solve.
    pub energy_defect: f64,
}

/// Outcome of a single implicit Euler solve.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub field: SpectralField,
    pub stats: StepStats,
}

/// Solves one implicit Euler step of size `tau` from `u_prev`.
pub fn implicit_euler_step(u_prev: &SpectralField, tau: f64, cfg: &SolverConfig) -> Result<SpectralField, SolverError> {
    Ok(step_with_stats(u_prev, 0.0, tau, cfg, 0)?.field)
}

/// Like [`implicit_euler_step`], also reporting iteration counts and the energy budget.
pub fn step_with_stats(
    u_prev: &SpectralField,
    t_prev: f64,
    tau: f64,
    cfg: &SolverConfig,
    step_index: usize,
) -> Result<StepOutcome, SolverError> {
    if u_prev.mean().abs() >= MEAN_ZERO_TOL {
        return Err(SolverError::NonZeroMean(u_prev.mean()));
    }
    let mut acc = Budget::default();
    let field = advance(u_prev, tau, cfg, 0, &mut acc).ok_or(SolverError::NonConvergence {
        step: step_index,
        t: t_prev + tau,
        halvings: cfg.step_halving_max,
    })?;
    let energy = field.energy();
    Ok(StepOutcome {
        stats: StepStats {
            t: t_prev + tau,
            dt: tau,
            picard_iters: acc.iters,
            substeps: acc.substeps,
            residual: acc.residual,
            energy,
            dissipation: acc.dissipation,
            energy_defect: energy + acc.identity_terms - u_prev.energy(),
        },
        field,
    })
}

#[derive(Default)]
struct Budget {
    iters: usize,
    substeps: usize,
    residual: f64,
    dissipation: f64,
    identity_terms: f64,
}

fn advance(u_prev: &SpectralField, h: f64, cfg: &SolverConfig, depth: u32, acc: &mut Budget) -> Option<SpectralField> {
    match picard(u_prev, h, cfg) {
        Some((u, iters, residual)) => {
            let d2 = u.derivative(2).expect("order 2").energy();
            let jump = u.axpy(-1.0, u_prev).expect("same grid").energy();
            acc.iters += iters;
            acc.substeps += 1;
            acc.residual = acc.residual.max(residual);
            acc.dissipation += h * d2;
            acc.identity_terms += 2.0 * h * d2 + jump;
            Some(u)
        }
        None if depth < cfg.step_halving_max => {
            let mid = advance(u_prev, 0.5 * h, cfg, depth + 1, acc)?;
            advance(&mid, 0.5 * h, cfg, depth + 1, acc)
        }
        None => None,
    }
}

/// Applies `(I + h∂ₓ⁴)⁻¹(u_prev − h N(u))`.
fn picard_map(u_prev: &SpectralField, u: &SpectralField, h: f64, cfg: &SolverConfig) -> SpectralField {
    let rhs = if cfg.nonlinear {
        u_prev.axpy(-h, &u.quadratic_term(cfg.dealias)).expect("same grid")
    } else {
        u_prev.clone()
    };
    rhs.map_modes(|k| {
        let k2 = (k * k) as f64;
        1.0 / (1.0 + h * k2 * k2)
    })
}

fn sup_mode_diff(a: &SpectralField, b: &SpectralField) -> f64 {
    a.coeffs().iter().zip(b.coeffs()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

fn picard(u_prev: &SpectralField, h: f64, cfg: &SolverConfig) -> Option<(SpectralField, usize, f64)> {
    let scale = 1.0 + u_prev.l2_norm();
    let mut u = u_prev.clone();
    for it in 1..=cfg.picard_max_iter {
        let next = picard_map(u_prev, &u, h, cfg);
        let change = next.axpy(-1.0, &u).expect("same grid").l2_norm();
        let norm = next.l2_norm();
        if !norm.is_finite() || change > 1e6 * scale {
            return None;
        }
        u = next;
        if change <= cfg.picard_tol * norm.max(f64::MIN_POSITIVE) || change == 0.0 {
            // The weak residual against the normalized test modes
            // e^{ikx}·h/(1 + h k⁴) is the next Picard increment.
            let residual = sup_mode_diff(&picard_map(u_prev, &u, h, cfg), &u);
            if residual <= cfg.picard_tol * (1.0 + norm) {
                return Some((u, it, residual));
            }
        }
    }
    None
}

/// One stored time level.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub t: f64,
    pub field: SpectralField,
}

/// Which interpolant of the stored frames to evaluate between time levels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpolant {
    /// `ū(t) = u_k` for `t ∈ [t_{k−1}, t_k)`.
    PiecewiseConstant,
    /// Linear between neighbouring frames.
    PiecewiseLinear,
}

/// A time-indexed sequence of mean-zero fields.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    config: SolverConfig,
    frames: Vec<Frame>,
    times: Vec<f64>,
    steps: Vec<StepStats>,
}

impl Trajectory {
    /// Assembles a trajectory from frames; times must increase strictly and
    /// every frame must share a grid.
    pub fn from_frames(config: SolverConfig, frames: Vec<Frame>) -> Result<Self, SolverError> {
        if frames.is_empty() {
            return Err(SolverError::InvalidConfig("trajectory needs at least one frame".into()));
        }
        if frames.windows(2).any(|w| w[1].t <= w[0].t) {
            return Err(SolverError::InvalidConfig("frame times must increase".into()));
        }
        let n = frames[0].field.n_grid();
        if let Some(f) = frames.iter().find(|f| f.field.n_grid() != n) {
            return Err(FieldError::GridMismatch(n, f.field.n_grid()).into());
        }
        let times = frames.iter().map(|f| f.t).collect();
        Ok(Self { config, frames, times, steps: Vec::new() })
    }

    pub fn config(&self) -> &SolverConfig {
        &self.config
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn steps(&self) -> &[StepStats] {
        &self.steps
    }

    pub fn n_grid(&self) -> usize {
        self.frames[0].field.n_grid()
    }

    pub fn initial(&self) -> &SpectralField {
        &self.frames[0].field
    }

    pub fn last(&self) -> &SpectralField {
        &self.frames.last().expect("nonempty").field
    }

    pub fn energies(&self) -> Vec<f64> {
        self.frames.iter().map(|f| f.field.energy()).collect()
    }

    /// `‖u_k‖² + Σ_{j≤k} (t_j − t_{j−1})‖∂ₓₓu_j‖²` for every frame.
    pub fn energy_budget(&self) -> Vec<f64> {
        let mut acc = 0.0;
        let mut out = vec![self.frames[0].field.energy()];
        for w in self.frames.windows(2) {
            let dt = w[1].t - w[0].t;
            acc += dt * w[1].field.derivative(2).expect("order 2").energy();
            out.push(w[1].field.energy() + acc);
        }
        out
    }

    /// The field at time `t` under the chosen interpolant.
    pub fn at(&self, t: f64, kind: Interpolant) -> SpectralField {
        let times = &self.times;
        if t <= times[0] {
            return match kind {
                Interpolant::PiecewiseConstant if self.frames.len() > 1 && t == times[0] => self.frames[1].field.clone(),
                _ => self.frames[0].field.clone(),
            };
        }
        if t >= *times.last().expect("nonempty") {
            return self.last().clone();
        }
        let k = times.partition_point(|&s| s <= t);
        match kind {
            Interpolant::PiecewiseConstant => self.frames[k].field.clone(),
            Interpolant::PiecewiseLinear => {
                let a = (t - times[k - 1]) / (times[k] - times[k - 1]);
                self.frames[k - 1].field.scaled(1.0 - a).axpy(a, &self.frames[k].field).expect("same grid")
            }
        }
    }

    /// Spatially resampled copy, e.g. for refinement studies.
    pub fn resampled(&self, n_grid: usize) -> Result<Trajectory, SolverError> {
        let frames = self
            .frames
            .iter()
            .map(|f| Ok(Frame { t: f.t, field: f.field.resampled(n_grid)? }))
            .collect::<Result<Vec<_>, FieldError>>()?;
        Ok(Trajectory { frames, ..self.clone() })
    }

    /// `v(x, t) = u(λx, λ⁴t)`, stored on a `λn` grid with frame times `t/λ⁴`.
    pub fn rescaled(&self, lambda: usize) -> Result<Trajectory, SolverError> {
        let l4 = (lambda as f64).powi(4);
        let frames = self
            .frames
            .iter()
            .map(|f| Ok(Frame { t: f.t / l4, field: f.field.dilated(lambda)? }))
            .collect::<Result<Vec<_>, FieldError>>()?;
        let mut config = self.config;
        config.tau /= l4;
        config.t_end /= l4;
        Trajectory::from_frames(config, frames)
    }
}

impl SpaceTimeSamples for Trajectory {
    fn frame_times(&self) -> &[f64] {
        &self.times
    }

    fn eval_frame(&self, frame: usize, xs: &[f64], out: &mut [[f64; 3]]) {
        self.frames[frame].field.eval_many(xs, out);
    }
}

/// Runs the scheme from `u0` to `cfg.t_end`, storing every step.
pub fn simulate(u0: &SpectralField, cfg: &SolverConfig) -> Result<Trajectory, SolverError> {
    cfg.validate()?;
    if u0.mean().abs() >= MEAN_ZERO_TOL {
        return Err(SolverError::NonZeroMean(u0.mean()));
    }
    let n_steps = cfg.n_steps();
    let mut frames = Vec::with_capacity(n_steps + 1);
    let mut steps = Vec::with_capacity(n_steps);
    frames.push(Frame { t: 0.0, field: u0.clone() });
    for k in 1..=n_steps {
        let t_prev = (k - 1) as f64 * cfg.tau;
        let t_next = if k == n_steps { cfg.t_end } else { k as f64 * cfg.tau };
        let prev = &frames.last().expect("nonempty").field;
        let out = step_with_stats(prev, t_prev, t_next - t_prev, cfg, k)?;
        steps.push(out.stats);
        frames.push(Frame { t: t_next, field: out.field });
    }
    let mut traj = Trajectory::from_frames(*cfg, frames)?;
    traj.steps = steps;
    Ok(traj)
}

/// `û(k, t) = e^{−k⁴t} û₀(k)`.
pub fn biharmonic_exact(u0: &SpectralField, t: f64) -> SpectralField {
    if t == 0.0 {
        return u0.clone();
    }
    u0.map_modes(|k| {
        let k2 = (k * k) as f64;
        (-k2 * k2 * t).exp()
    })
}

/// Frames of the exact biharmonic flow at the given times.
pub fn biharmonic_trajectory(u0: &SpectralField, times: &[f64]) -> Result<Trajectory, SolverError> {
    let frames = times.iter().map(|&t| Frame { t, field: biharmonic_exact(u0, t) }).collect();
    let dt = if times.len() > 1 { times[1] - times[0] } else { 1.0 };
    let t_end = *times.last().unwrap_or(&1.0);
    Trajectory::from_frames(SolverConfig { tau: dt, t_end, ..SolverConfig::default() }.linear(), frames)
}

/// Empirical lower bound for the constant in
/// `‖v_x‖_{L∞(Q_b)} ≤ C (‖v‖_{L²(Q_a)} + ‖v_x‖_{L²(Q_a)})`, centred at
/// `x = π` and the midpoint of the trajectory's time span.
pub fn interior_regularity_probe(traj: &Trajectory, a: f64, b: f64) -> Result<f64, SolverError> {
    let tm = 0.5 * (traj.times()[0] + *traj.times().last().expect("nonempty"));
    interior_regularity_probe_at(traj, PI, tm, a, b)
}

pub fn interior_regularity_probe_at(traj: &Trajectory, x0: f64, t0: f64, a: f64, b: f64) -> Result<f64, SolverError> {
    if !(0.0 < b && b < a && a < PI) {
        return Err(SolverError::InvalidConfig(format!("need 0 < b < a < π, got a = {a}, b = {b}")));
    }
    let outer = sampling::resolved_time_rule(traj.times(), t0 - a.powi(4), t0 + a.powi(4))?;
    let outer = sampling::BoxSamples::sample(traj, outer, &SpaceRule::uniform(x0 - a, x0 + a, 8));
    let l2_v = outer.integrate(|_, v| v[0] * v[0]).sqrt();
    let l2_vx = outer.integrate(|_, v| v[1] * v[1]).sqrt();
    let denom = l2_v + l2_vx;
    if denom == 0.0 {
        return Ok(0.0);
    }
    let inner = sampling::resolved_time_rule(traj.times(), t0 - b.powi(4), t0 + b.powi(4))?;
    let m = 4 * traj.n_grid();
    let xs: Vec<f64> = (0..=m).map(|i| x0 - b + 2.0 * b * i as f64 / m as f64).collect();
    let mut vals = vec![[0.0; 3]; xs.len()];
    let mut scratch = Vec::new();
    let mut sup = 0.0f64;
    for node in &inner.nodes {
        sampling::eval_node(traj, node, &xs, &mut vals, &mut scratch);
        sup = vals.iter().fold(sup, |s, v| s.max(v[1].abs()));
    }
    Ok(sup / denom)
}

/// `|∫∫ (u φ_t − u_xx φ_xx − u_x² φ_xx)|` over the support of `phi`, i.e.
/// the defect of the weak formulation tested against a compactly supported
/// weight. The quadratic term is dropped for linear trajectories.
pub fn weak_residual<W: SpaceTimeWeight + ?Sized>(traj: &Trajectory, phi: &W) -> Result<f64, SolverError> {
    let nonlinear = if traj.config().nonlinear { 1.0 } else { 0.0 };
    Ok(weak_form_defect(traj, phi, nonlinear)?.abs())
}

pub(crate) fn weak_form_defect<S, W>(src: &S, phi: &W, nonlinear: f64) -> Result<f64, SolverError>
where
    S: SpaceTimeSamples + ?Sized,
    W: SpaceTimeWeight + ?Sized,
{
    let (t_lo, t_hi) = phi.time_support();
    let times = src.frame_times();
    if t_lo < times[0] || t_hi > *times.last().expect("nonempty") {
        return Err(WeightError::SupportOutsideDomain.into());
    }
    let time = sampling::time_rule(times, t_lo, t_hi)?;
    let rule = phi.space_rule();
    let samples = sampling::BoxSamples::sample(src, time, &rule);
    let mut total = 0.0;
    for (i, node) in samples.time.nodes.iter().enumerate() {
        let row = samples.row(i);
        let mut acc = 0.0;
        for ((x, w), v) in samples.xs.iter().zip(&samples.x_weights).zip(row) {
            let d = phi.derivs(*x, node.t);
            acc += w * (v[0] * d.t - v[2] * d.x[2] - nonlinear * v[1] * v[1] * d.x[2]);
        }
        total += node.weight * acc;
    }
    Ok(total)
}
