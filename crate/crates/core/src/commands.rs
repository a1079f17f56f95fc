//! The operations behind the `sgm` binary. Each returns a serializable
//! report; failures carry the process exit code.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::campanato::{self, CampanatoDetail, CampanatoError, HolderFit, SampledField, Sweep};
use crate::cylinder::{
    self, CylinderError, CylinderStats, InterpolationResiduals, ParabolicCylinder, PoincareCheck, StatsRow,
};
use crate::io::{self, IoError, RunConfig, RunMetadata, Sgt1};
use crate::local_energy::{lei_slack, TestFunction};
use crate::sampling::MIN_FRAMES_IN_WINDOW;
use crate::singular::{self, Criterion, RegularityReport, ScanGrid, SingularError};
use crate::solver::{self, SolverError, Trajectory};

pub const TRAJECTORY_FILE: &str = "trajectory.sgt1";
pub const METADATA_FILE: &str = "run.json";
pub const CONFIG_FILE: &str = "config.json";
pub const REPORT_FILE: &str = "report.json";
pub const STATS_FILE: &str = "cylinder_stats.csv";

/// Relative slack for the per-step energy check.
pub const ENERGY_TOL: f64 = 1e-8;
pub const MEAN_TOL: f64 = 1e-13;
/// Relative agreement of a linear run with the diagonal implicit Euler solve.
pub const LINEAR_TOL: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum CmdError {
    #[error("solver failure: {0}")]
    Solver(SolverError),
    #[error("{0}; try smaller radii or a smaller time step")]
    Resolution(String),
    #[error("bad input: {0}")]
    BadInput(String),
    #[error("verification failed: {0}")]
    VerifyFailed(String),
}

impl CmdError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CmdError::VerifyFailed(_) => 1,
            CmdError::Solver(_) => 2,
            CmdError::Resolution(_) => 3,
            CmdError::BadInput(_) => 4,
        }
    }
}

impl From<IoError> for CmdError {
    fn from(e: IoError) -> Self {
        CmdError::BadInput(e.to_string())
    }
}

impl From<SolverError> for CmdError {
    fn from(e: SolverError) -> Self {
        match e {
            SolverError::InvalidConfig(_) | SolverError::NonZeroMean(_) | SolverError::Field(_) => {
                CmdError::BadInput(e.to_string())
            }
            _ => CmdError::Solver(e),
        }
    }
}

impl From<CylinderError> for CmdError {
    fn from(e: CylinderError) -> Self {
        match e {
            CylinderError::Sampling(_) => CmdError::Resolution(e.to_string()),
            _ => CmdError::BadInput(e.to_string()),
        }
    }
}

impl From<SingularError> for CmdError {
    fn from(e: SingularError) -> Self {
        match e {
            SingularError::Cylinder(c) => c.into(),
            _ => CmdError::BadInput(e.to_string()),
        }
    }
}

impl From<CampanatoError> for CmdError {
    fn from(e: CampanatoError) -> Self {
        match e {
            CampanatoError::Unresolved { .. } | CampanatoError::EmptyGrid => CmdError::Resolution(e.to_string()),
            _ => CmdError::BadInput(e.to_string()),
        }
    }
}

fn write_err(path: &Path, e: impl std::fmt::Display) -> CmdError {
    CmdError::BadInput(format!("{}: {e}", path.display()))
}

#[derive(Debug)]
pub struct SimulateOutput {
    pub trajectory: Trajectory,
    pub traj_path: PathBuf,
    pub meta_path: PathBuf,
}

/// Integrates the configured run and writes `trajectory.sgt1`, `run.json`
/// and the effective `config.json` into the output directory.
pub fn cmd_simulate(cfg: &RunConfig) -> Result<SimulateOutput, CmdError> {
    cfg.solver.validate()?;
    let ratio = cfg.solver.t_end / cfg.solver.tau;
    if (ratio - ratio.round()).abs() > 1e-9 * ratio {
        return Err(CmdError::BadInput(format!(
            "t_end = {} is not a multiple of tau = {}; SGT1 stores uniformly spaced frames",
            cfg.solver.t_end, cfg.solver.tau
        )));
    }
    let u0 = cfg.ic.build(cfg.n_grid)?;
    let trajectory = solver::simulate(&u0, &cfg.solver)?;
    let dir = &cfg.output_dir;
    fs::create_dir_all(dir).map_err(|e| write_err(dir, e))?;
    let traj_path = dir.join(TRAJECTORY_FILE);
    let meta_path = dir.join(METADATA_FILE);
    Sgt1::from_trajectory(&trajectory)?.write_path(&traj_path)?;
    io::write_json(&meta_path, &RunMetadata::new(cfg, &trajectory))?;
    io::write_json(&dir.join(CONFIG_FILE), cfg)?;
    Ok(SimulateOutput { trajectory, traj_path, meta_path })
}

/// Loads an SGT1 file. The model (with or without the nonlinearity) comes
/// from `linear` if given, else from a sibling `run.json`, else nonlinear.
pub fn load_trajectory(path: &Path, linear: Option<bool>) -> Result<Trajectory, CmdError> {
    let data = Sgt1::read_path(path)?;
    let nonlinear = match linear {
        Some(l) => !l,
        None => {
            let meta = path.parent().map(|d| d.join(METADATA_FILE));
            match meta.filter(|m| m.exists()) {
                Some(m) => io::read_json::<RunMetadata>(&m)?.solver.nonlinear,
                None => true,
            }
        }
    };
    Ok(data.to_trajectory(nonlinear)?)
}

/// Statistics and inequality checks on one cylinder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CylinderEntry {
    pub x0: f64,
    pub t0: f64,
    pub r: f64,
    pub stats: CylinderStats,
    pub poincare: PoincareCheck,
    pub interpolation: InterpolationResiduals,
    /// `None` when the shrunk cylinder is not resolved by the frames.
    pub decay_ratio: Option<f64>,
}

/// Ensemble maxima of the empirical constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CempSummary {
    pub poincare: f64,
    pub interpolation_w: f64,
    pub interpolation_y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub regularity: RegularityReport,
    pub cylinders: Vec<CylinderEntry>,
    pub c_emp: CempSummary,
    pub warnings: Vec<String>,
}

#[derive(Debug)]
pub struct AnalyzeOutput {
    pub report: AnalysisReport,
    pub report_path: PathBuf,
    pub stats_path: PathBuf,
}

fn resolves(traj: &Trajectory, t0: f64, h: f64) -> bool {
    let times = traj.times();
    let (a, b) = (t0 - h, t0 + h);
    a >= times[0] && b <= times[times.len() - 1] && times.iter().filter(|&&t| t > a && t < b).count() >= MIN_FRAMES_IN_WINDOW
}

/// Scan grid: every `x_stride`-th grid point and every `t_stride`-th interior frame.
pub fn scan_grid(traj: &Trajectory, x_stride: usize, t_stride: usize) -> ScanGrid {
    let n = traj.n_grid();
    let times = traj.times();
    let xs = (0..n).step_by(x_stride.max(1)).map(|i| 2.0 * std::f64::consts::PI * i as f64 / n as f64).collect();
    let mut ts: Vec<f64> = times.iter().copied().step_by(t_stride.max(1)).collect();
    ts.retain(|&t| t > times[0] && t < times[times.len() - 1]);
    if ts.is_empty() {
        ts.push(0.5 * (times[0] + times[times.len() - 1]));
    }
    ScanGrid { xs, ts }
}

fn cylinder_entry(traj: &Trajectory, q: &ParabolicCylinder, eta: f64, theta: f64) -> Result<CylinderEntry, CmdError> {
    let stats = cylinder::quantities(traj, q, None)?;
    let poincare = cylinder::poincare_residual(traj, q, eta)?;
    let decay_ratio = if resolves(traj, q.t0, (theta * q.r).powi(4)) {
        Some(cylinder::decay_ratio(traj, q, theta)?)
    } else {
        None
    };
    Ok(CylinderEntry {
        x0: q.x0,
        t0: q.t0,
        r: q.r,
        stats,
        poincare,
        interpolation: cylinder::interpolation_residuals(&stats),
        decay_ratio,
    })
}

/// Runs the regularity scan and the cylinder table, then writes
/// `report.json` and `cylinder_stats.csv` into `out_dir`.
///
/// The table is centred at the middle frame time. Explicit `table_radii`
/// that the frames cannot resolve are a resolution error; by default the
/// resolvable radii of `r_scan` are used.
pub fn cmd_analyze(traj: &Trajectory, cfg: &RunConfig, criterion: Criterion, out_dir: &Path) -> Result<AnalyzeOutput, CmdError> {
    let an = &cfg.analysis;
    an.thresholds.validate()?;
    if !(an.decay_theta > 0.0 && an.decay_theta < 0.25) {
        return Err(CmdError::BadInput(format!("decay_theta = {} must lie in (0, 1/4)", an.decay_theta)));
    }
    let eta = if traj.config().nonlinear { 1.0 } else { 0.0 };
    let grid = scan_grid(traj, an.x_stride, an.t_stride);
    let regularity = singular::regularity_report(traj, criterion, &an.thresholds, &grid, &an.deltas)?;

    let times = traj.times();
    let t_mid = 0.5 * (times[0] + times[times.len() - 1]);
    let mut warnings = Vec::new();
    let fits = |r: f64| resolves(traj, t_mid, r.powi(4)) && resolves(traj, t_mid, (0.5 * r).powi(4));
    let radii: Vec<f64> = match &an.table_radii {
        Some(rs) => {
            if let Some(&r) = rs.iter().find(|&&r| !fits(r)) {
                return Err(CmdError::Resolution(format!(
                    "cylinders of radius {r} at t = {t_mid} are not resolved by the frames"
                )));
            }
            rs.clone()
        }
        None => {
            let rs: Vec<f64> = an.thresholds.r_scan.iter().copied().filter(|&r| fits(r)).collect();
            if rs.is_empty() {
                return Err(CmdError::Resolution(format!(
                    "no scanned radius gives a resolved cylinder at t = {t_mid}"
                )));
            }
            rs
        }
    };
    let mut cylinders = Vec::new();
    for &r in &radii {
        for &x in &grid.xs {
            let q = ParabolicCylinder::new(x, t_mid, r)?;
            cylinders.push(cylinder_entry(traj, &q, eta, an.decay_theta)?);
        }
    }
    if cylinders.iter().any(|c| c.decay_ratio.is_none()) {
        warnings.push(format!("decay ratios at theta = {} are unresolved for some radii", an.decay_theta));
    }
    let max_of = |f: &dyn Fn(&CylinderEntry) -> f64| cylinders.iter().map(f).fold(0.0, f64::max);
    let c_emp = CempSummary {
        poincare: max_of(&|c| c.poincare.c_emp),
        interpolation_w: max_of(&|c| c.interpolation.c_emp_w),
        interpolation_y: max_of(&|c| c.interpolation.c_emp_y),
    };
    let report = AnalysisReport { regularity, cylinders, c_emp, warnings };

    fs::create_dir_all(out_dir).map_err(|e| write_err(out_dir, e))?;
    let report_path = out_dir.join(REPORT_FILE);
    let stats_path = out_dir.join(STATS_FILE);
    io::write_json(&report_path, &report)?;
    let rows: Vec<StatsRow> = report
        .cylinders
        .iter()
        .map(|c| StatsRow::new(&ParabolicCylinder { x0: c.x0, t0: c.t0, r: c.r }, &c.stats))
        .collect();
    let file = fs::File::create(&stats_path).map_err(|e| write_err(&stats_path, e))?;
    cylinder::write_stats_csv(file, &rows).map_err(|e| write_err(&stats_path, e))?;
    Ok(AnalyzeOutput { report, report_path, stats_path })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    /// Worst value of the checked quantity.
    pub value: f64,
    pub detail: String,
    /// Informational checks are reported but do not decide the verdict.
    pub informational: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub n_frames: usize,
    pub nonlinear: bool,
    pub checks: Vec<Check>,
    pub passed: bool,
}

impl VerifyReport {
    pub fn summary(&self) -> String {
        self.checks
            .iter()
            .map(|c| {
                let tag = match (c.passed, c.informational) {
                    (true, _) => "PASS",
                    (false, false) => "FAIL",
                    (false, true) => "WARN",
                };
                format!("{tag} {}: {} ({:.3e})", c.name, c.detail, c.value)
            })
            .collect::<Vec<_>>()
            .join("\n")
    }
}

fn check_mean(traj: &Trajectory) -> Check {
    let means: Vec<f64> = traj.frames().iter().map(|f| f.field.mean().abs()).collect();
    let (k, worst) = means.iter().copied().enumerate().fold((0, 0.0), |acc, (k, m)| if m > acc.1 { (k, m) } else { acc });
    let passed = worst < MEAN_TOL;
    let detail = if passed { "all frames mean-zero".into() } else { format!("frame {k} has mean {worst:e}") };
    Check { name: "mean_zero".into(), passed, value: worst, detail, informational: false }
}

/// `‖u_k‖² + τ_k‖∂ₓₓu_k‖² ≤ ‖u_{k−1}‖²` step by step.
fn check_energy(traj: &Trajectory) -> Check {
    let budget = traj.energy_budget();
    let e0 = budget[0];
    let mut worst = 0.0f64;
    let mut first_bad = None;
    for k in 1..budget.len() {
        let excess = (budget[k] - budget[k - 1]) / e0.max(f64::MIN_POSITIVE);
        worst = worst.max(excess);
        if excess > ENERGY_TOL && first_bad.is_none() {
            first_bad = Some(k);
        }
    }
    let detail = match first_bad {
        None => "energy budget non-increasing".into(),
        Some(k) => format!("energy increases at frame {k}"),
    };
    Check { name: "energy".into(), passed: first_bad.is_none(), value: worst, detail, informational: false }
}

/// Frame `k` against one diagonal solve `û_k = û_{k−1} / (1 + τ κ⁴)` from frame `k − 1`.
fn check_linear(traj: &Trajectory) -> Check {
    let frames = traj.frames();
    let scale = frames[0].field.l2_norm().max(f64::MIN_POSITIVE);
    let mut worst = 0.0f64;
    let mut first_bad = None;
    for k in 1..frames.len() {
        let tau = frames[k].t - frames[k - 1].t;
        let pred = frames[k - 1].field.map_modes(|m| {
            let m2 = (m * m) as f64;
            1.0 / (1.0 + tau * m2 * m2)
        });
        let err = pred.axpy(-1.0, &frames[k].field).expect("same grid").l2_norm() / scale;
        worst = worst.max(err);
        if err > LINEAR_TOL && first_bad.is_none() {
            first_bad = Some(k);
        }
    }
    let detail = match first_bad {
        None => "frames match the implicit Euler decay".into(),
        Some(k) => format!("frame {k} departs from the implicit Euler decay"),
    };
    Check { name: "linear_decay".into(), passed: first_bad.is_none(), value: worst, detail, informational: false }
}

/// Space-time bumps spread over the torus, supported in the middle half of the run.
fn probe_weights(traj: &Trajectory) -> Option<Vec<TestFunction>> {
    let times = traj.times();
    let (a, b) = (times[0], times[times.len() - 1]);
    let (tc, rt) = (0.5 * (a + b), 0.25 * (b - a));
    if !resolves(traj, tc, rt) {
        return None;
    }
    (0..5)
        .map(|j| TestFunction::bump(2.0 * std::f64::consts::PI * j as f64 / 5.0, tc, 1.0, rt).ok())
        .collect()
}

/// Energy, mean-zero and (for linear runs) exact-decay checks, plus the weak
/// residual and local energy slack against a few bumps as information.
pub fn cmd_verify(traj: &Trajectory) -> Result<VerifyReport, CmdError> {
    let nonlinear = traj.config().nonlinear;
    let mut checks = vec![check_mean(traj), check_energy(traj)];
    if !nonlinear {
        checks.push(check_linear(traj));
    }
    if let Some(phis) = probe_weights(traj) {
        let scale = traj.initial().energy().max(f64::MIN_POSITIVE);
        let mut res = 0.0f64;
        let mut slack = f64::INFINITY;
        let t_end = *traj.times().last().expect("nonempty");
        for phi in &phis {
            res = res.max(solver::weak_residual(traj, phi)? / scale.sqrt());
            slack = slack.min(lei_slack(traj, phi, t_end).map_err(SolverError::from)? / scale);
        }
        checks.push(Check {
            name: "weak_residual".into(),
            passed: res < 1e-2,
            value: res,
            detail: "max |weak-form defect| / ‖u₀‖ over 5 bumps".into(),
            informational: true,
        });
        checks.push(Check {
            name: "lei_slack".into(),
            passed: slack >= -1e-3,
            value: slack,
            detail: "min local energy slack / ‖u₀‖² over 5 bumps".into(),
            informational: true,
        });
    }
    let passed = checks.iter().all(|c| c.passed || c.informational);
    Ok(VerifyReport { n_frames: traj.frames().len(), nonlinear, checks, passed })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampanatoReport {
    pub p: f64,
    pub beta: f64,
    pub alpha: u32,
    pub radii: Vec<f64>,
    pub n_centres: usize,
    pub detail: CampanatoDetail,
    pub fit: HolderFit,
}

/// Loads a field from an SGT1 trajectory or an `x,t,value` CSV.
pub fn load_sampled_field(path: &Path) -> Result<SampledField, CmdError> {
    if io::is_sgt1(path) {
        let traj = Sgt1::read_path(path)?.to_trajectory(true)?;
        Ok(SampledField::from_trajectory(&traj)?)
    } else {
        Ok(SampledField::from_csv_path(path)?)
    }
}

/// Smallest spacing of a sorted axis.
fn min_spacing(axis: &[f64]) -> f64 {
    axis.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min)
}

pub const SWEEP_RADII: usize = 6;

/// Campanato seminorm and Hölder fit on an automatic sweep: `SWEEP_RADII`
/// geometric radii from half the domain down to the smallest resolved radius.
pub fn cmd_campanato(field: &SampledField, p: f64, beta: f64) -> Result<CampanatoReport, CmdError> {
    if !(p >= 1.0) || !(beta > 0.0 && beta <= 1.0) {
        return Err(CmdError::BadInput(format!("need p ≥ 1 and β ∈ (0, 1], got p = {p}, β = {beta}")));
    }
    let region = field.domain();
    let xs = field.xs();
    let hx = 0.5 * (region.x.1 - region.x.0);
    let dx = min_spacing(xs);
    let (mut r_max, dt) = (0.5 * hx, field.ts().map(min_spacing));
    if let (Some((a, b)), Some(_)) = (region.t, dt) {
        r_max = r_max.min((0.25 * (b - a)).powf(0.25));
    }
    let need = MIN_FRAMES_IN_WINDOW as f64 + 2.0;
    let mut r_min = 0.5 * need * dx;
    if let Some(dt) = dt {
        r_min = r_min.max((0.5 * need * dt).powf(0.25));
    }
    if !(r_min < 0.8 * r_max) {
        return Err(CmdError::Resolution(format!(
            "sweep radii must exceed {r_min:.4} to be resolved, but the domain allows at most {r_max:.4}"
        )));
    }
    let n_radii = SWEEP_RADII;
    let r_lo = 1.05 * r_min;
    let stride = (xs.len() / 64).max(1);
    let mut sweep = Sweep::new(field, region, r_max, n_radii, stride);
    sweep.r_grid = (0..n_radii).map(|i| r_max * (r_lo / r_max).powf(i as f64 / (n_radii - 1) as f64)).collect();
    sweep.p = p;
    let detail = campanato::campanato_detail(&sweep, beta)?;
    let fit = campanato::holder_fit(&sweep)?;
    Ok(CampanatoReport {
        p,
        beta,
        alpha: sweep.alpha,
        radii: sweep.r_grid.clone(),
        n_centres: sweep.z_grid.len(),
        detail,
        fit,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimReport {
    pub n_points: usize,
    pub deltas: Vec<f64>,
    pub dimension: f64,
}

/// Default deltas: `D/8, D/16, D/32, D/64` for the bounding-box extent `D`
/// (or `1` for a single point).
pub fn default_deltas(points: &[(f64, f64)]) -> Vec<f64> {
    let ext = |f: fn(&(f64, f64)) -> f64| {
        let (lo, hi) = points.iter().map(f).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        if hi > lo { hi - lo } else { 0.0 }
    };
    let d = ext(|p| p.0).max(ext(|p| p.1));
    let d = if d > 0.0 { d } else { 1.0 };
    (3..7).map(|k| d * 0.5f64.powi(k)).collect()
}

pub fn cmd_dim(points: &[(f64, f64)], deltas: Option<&[f64]>) -> Result<DimReport, CmdError> {
    let deltas = deltas.map_or_else(|| default_deltas(points), <[f64]>::to_vec);
    let dimension = singular::box_dimension(points, &deltas)?;
    Ok(DimReport { n_points: points.len(), deltas, dimension })
}
