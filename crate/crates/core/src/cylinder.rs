//! Parabolic cylinders `Q(z, r) = (x0 − r, x0 + r) × (t0 − r⁴, t0 + r⁴)` and
//! the scale-invariant quantities built on them.
//!
//! Every integral over a cylinder uses the same rule: 64 Gauss–Legendre
//! nodes in space (four panels of 16) and the trapezoid rule over the stored
//! frames in time, with the window end points interpolated.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::wrap_offset;
use crate::local_energy::{Profile, TestFunction, WeightError};
use crate::sampling::{self, BoxSamples, SamplingError, SpaceRule, SpaceTimeSamples};

/// Gauss–Legendre panels across the spatial ball of a cylinder.
pub const SPACE_PANELS: usize = 4;

/// `lhs` above this with a vanishing bound is reported as a violation.
pub const VIOLATION_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CylinderError {
    #[error("cylinder radius {0} must lie in (0, π)")]
    BadRadius(f64),
    #[error("decay factor {0} must lie in (0, 1/4)")]
    BadTheta(f64),
    #[error("cut-off is not a space-only weight supported in the cylinder's ball")]
    NotSubordinate,
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error(transparent)]
    Weight(#[from] WeightError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParabolicCylinder {
    pub x0: f64,
    pub t0: f64,
    pub r: f64,
}

impl ParabolicCylinder {
    pub fn new(x0: f64, t0: f64, r: f64) -> Result<Self, CylinderError> {
        if !(r > 0.0 && r < std::f64::consts::PI) {
            return Err(CylinderError::BadRadius(r));
        }
        Ok(Self { x0, t0, r })
    }

    /// `|Q| = 2r · 2r⁴`.
    pub fn volume(&self) -> f64 {
        4.0 * self.r.powi(5)
    }

    pub fn time_window(&self) -> (f64, f64) {
        let h = self.r.powi(4);
        (self.t0 - h, self.t0 + h)
    }

    /// Same centre, radius scaled by `factor`.
    pub fn shrunk(&self, factor: f64) -> Result<Self, CylinderError> {
        Self::new(self.x0, self.t0, factor * self.r)
    }

    fn space_rule(&self) -> SpaceRule {
        SpaceRule::uniform(self.x0 - self.r, self.x0 + self.r, SPACE_PANELS)
    }

    fn sample<S: SpaceTimeSamples + ?Sized>(&self, src: &S, rule: &SpaceRule) -> Result<BoxSamples, CylinderError> {
        let (lo, hi) = self.time_window();
        let time = sampling::resolved_time_rule(src.frame_times(), lo, hi)?;
        Ok(BoxSamples::sample(src, time, rule))
    }
}

/// Scale-invariant quantities of one cylinder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct CylinderStats {
    pub Y: f64,
    pub A: f64,
    pub A_bar: f64,
    pub E: f64,
    pub W: f64,
    /// Plain average of `u` over the cylinder.
    pub mean: f64,
    /// Average of `u` weighted by the spatial cut-off.
    pub sigma_mean_cyl: f64,
}

impl CylinderStats {
    pub const ZERO: CylinderStats =
        CylinderStats { Y: 0.0, A: 0.0, A_bar: 0.0, E: 0.0, W: 0.0, mean: 0.0, sigma_mean_cyl: 0.0 };
}

/// One CSV row of cylinder statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct StatsRow {
    pub x0: f64,
    pub t0: f64,
    pub r: f64,
    pub Y: f64,
    pub A: f64,
    pub Abar: f64,
    pub E: f64,
    pub W: f64,
    pub mean: f64,
}

impl StatsRow {
    pub fn new(q: &ParabolicCylinder, s: &CylinderStats) -> Self {
        Self { x0: q.x0, t0: q.t0, r: q.r, Y: s.Y, A: s.A, Abar: s.A_bar, E: s.E, W: s.W, mean: s.mean }
    }
}

/// Writes rows with a header line.
pub fn write_stats_csv<W: Write>(out: W, rows: &[StatsRow]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// `⨍_Q u`.
pub fn cyl_mean<S: SpaceTimeSamples + ?Sized>(src: &S, q: &ParabolicCylinder) -> Result<f64, CylinderError> {
    let s = q.sample(src, &q.space_rule())?;
    Ok(s.integrate(|_, v| v[0]) / q.volume())
}

/// σ-means of `u`: per time node `∫uσ/∫σ`, and over the cylinder `∫∫uσ/∫∫σ`.
#[derive(Debug, Clone, PartialEq)]
pub struct SigmaMeans {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub cyl_value: f64,
    /// `|[u]^σ − (time average of u^σ(t))|`.
    pub identity_residual: f64,
}

impl SigmaMeans {
    /// `u^σ(t)` by linear interpolation between time nodes.
    pub fn at(&self, t: f64) -> f64 {
        let node = sampling::locate(&self.times, t);
        (1.0 - node.alpha) * self.values[node.left] + node.alpha * self.values[node.right]
    }
}

fn check_subordinate(q: &ParabolicCylinder, sigma: &TestFunction) -> Result<f64, CylinderError> {
    if sigma.profile != Profile::BumpSpaceOnly {
        return Err(CylinderError::NotSubordinate);
    }
    let c = q.x0 + wrap_offset(sigma.x0 - q.x0);
    if (c - q.x0).abs() + sigma.r_space > q.r * (1.0 + 1e-12) {
        return Err(CylinderError::NotSubordinate);
    }
    Ok(c)
}

/// Space rule on the cylinder's ball, with four panels across each transition
/// layer of the cut-off.
fn sigma_rule(q: &ParabolicCylinder, sigma: &TestFunction, centre: f64) -> SpaceRule {
    let (a, b) = (q.x0 - q.r, q.x0 + q.r);
    let rs = sigma.r_space;
    let p = sigma.plateau_fraction;
    let mut breaks: Vec<f64> = (0..=SPACE_PANELS).map(|i| a + (b - a) * i as f64 / SPACE_PANELS as f64).collect();
    breaks.push(centre);
    for i in 0..=4 {
        let off = p * rs + (1.0 - p) * rs * i as f64 / 4.0;
        breaks.push(centre - off);
        breaks.push(centre + off);
    }
    breaks.retain(|x| *x >= a - 1e-15 && *x <= b + 1e-15);
    breaks.sort_by(f64::total_cmp);
    breaks.dedup_by(|x, y| (*x - *y).abs() < 1e-12 * (1.0 + q.r));
    SpaceRule::from_breaks(&breaks)
}

pub fn sigma_means<S: SpaceTimeSamples + ?Sized>(
    src: &S,
    q: &ParabolicCylinder,
    sigma: &TestFunction,
) -> Result<SigmaMeans, CylinderError> {
    let centre = check_subordinate(q, sigma)?;
    let rule = sigma_rule(q, sigma, centre);
    let s = q.sample(src, &rule)?;
    let sig: Vec<f64> = s.xs.iter().map(|&x| sigma.value(x, 0.0)).collect();
    let mass: f64 = s.x_weights.iter().zip(&sig).map(|(w, g)| w * g).sum();
    let values: Vec<f64> = (0..s.time.nodes.len())
        .map(|i| s.row(i).iter().zip(&s.x_weights).zip(&sig).map(|((v, w), g)| w * g * v[0]).sum::<f64>() / mass)
        .collect();
    let num = s.integrate(|x, v| v[0] * sigma.value(x, 0.0));
    let den = s.integrate(|x, _| sigma.value(x, 0.0));
    let cyl_value = num / den;
    let tw = s.time.total_weight();
    let avg: f64 = s.time.nodes.iter().zip(&values).map(|(n, v)| n.weight * v).sum::<f64>() / tw;
    Ok(SigmaMeans {
        times: s.time.nodes.iter().map(|n| n.t).collect(),
        values,
        cyl_value,
        identity_residual: (cyl_value - avg).abs(),
    })
}

/// `Y, A, Ā, E, W`, the plain mean and the σ-mean over `q`.
///
/// `sigma` defaults to the space-only cut-off of radius `r` centred at `x0`.
pub fn quantities<S: SpaceTimeSamples + ?Sized>(
    src: &S,
    q: &ParabolicCylinder,
    sigma: Option<&TestFunction>,
) -> Result<CylinderStats, CylinderError> {
    let r = q.r;
    let s = q.sample(src, &q.space_rule())?;
    let y = s.integrate(|_, v| v[1].abs().powi(3)) / (r * r);
    let e = s.integrate(|_, v| v[2] * v[2]) / r;
    let w = s.integrate(|_, v| v[0].abs().powi(3)) / r.powi(5);
    let mean = s.integrate(|_, v| v[0]) / q.volume();
    let mut a = 0.0f64;
    let mut a_bar = 0.0f64;
    for i in 0..s.time.nodes.len() {
        let ball_mean = s.integrate_row(i, |_, v| v[0]) / (2.0 * r);
        a = a.max(s.integrate_row(i, |_, v| v[0] * v[0]) / r);
        a_bar = a_bar.max(s.integrate_row(i, |_, v| (v[0] - ball_mean).powi(2)) / r);
    }
    let default_sigma;
    let sigma = match sigma {
        Some(sg) => sg,
        None => {
            default_sigma = TestFunction::spatial(q.x0, r)?;
            &default_sigma
        }
    };
    let sigma_mean_cyl = sigma_means(src, q, sigma)?.cyl_value;
    Ok(CylinderStats { Y: y, A: a, A_bar: a_bar, E: e, W: w, mean, sigma_mean_cyl })
}

/// Quantities for many cylinders in parallel.
pub fn scan_quantities<S: SpaceTimeSamples + ?Sized>(
    src: &S,
    cylinders: &[ParabolicCylinder],
) -> Vec<Result<CylinderStats, CylinderError>> {
    cylinders.par_iter().map(|q| quantities(src, q, None)).collect()
}

/// `Y(z, r) = r⁻² ∫_Q |u_x|³`.
pub fn y_quantity<S: SpaceTimeSamples + ?Sized>(src: &S, q: &ParabolicCylinder) -> Result<f64, CylinderError> {
    let s = q.sample(src, &q.space_rule())?;
    Ok(s.integrate(|_, v| v[1].abs().powi(3)) / (q.r * q.r))
}

/// `E(z, r) = r⁻¹ ∫_Q u_xx²`.
pub fn e_quantity<S: SpaceTimeSamples + ?Sized>(src: &S, q: &ParabolicCylinder) -> Result<f64, CylinderError> {
    let s = q.sample(src, &q.space_rule())?;
    Ok(s.integrate(|_, v| v[2] * v[2]) / q.r)
}

/// `A(z, r) = max_t r⁻¹ ∫_{B_r} u²`.
pub fn a_quantity<S: SpaceTimeSamples + ?Sized>(src: &S, q: &ParabolicCylinder) -> Result<f64, CylinderError> {
    let s = q.sample(src, &q.space_rule())?;
    Ok((0..s.time.nodes.len()).map(|i| s.integrate_row(i, |_, v| v[0] * v[0]) / q.r).fold(0.0, f64::max))
}

/// Outcome of one Poincaré-type check `lhs ≤ c (Y + ηY²)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoincareCheck {
    pub lhs: f64,
    pub rhs_bound: f64,
    pub c_emp: f64,
    /// Set when the bound vanishes but `lhs` does not.
    pub violation: bool,
}

impl PoincareCheck {
    fn new(lhs: f64, rhs_bound: f64) -> Self {
        if rhs_bound > 0.0 {
            Self { lhs, rhs_bound, c_emp: lhs / rhs_bound, violation: false }
        } else if lhs > VIOLATION_FLOOR {
            Self { lhs, rhs_bound, c_emp: f64::INFINITY, violation: true }
        } else {
            Self { lhs, rhs_bound, c_emp: 0.0, violation: false }
        }
    }
}

/// `r⁻⁵ ∫_{Q(z, r/2)} |u − u_{z,r/2}|³` against `Y(z, r) + ηY(z, r)²`.
pub fn poincare_residual<S: SpaceTimeSamples + ?Sized>(
    src: &S,
    q: &ParabolicCylinder,
    eta: f64,
) -> Result<PoincareCheck, CylinderError> {
    let half = q.shrunk(0.5)?;
    let s = half.sample(src, &half.space_rule())?;
    let mean = s.integrate(|_, v| v[0]) / half.volume();
    let lhs = s.integrate(|_, v| (v[0] - mean).abs().powi(3)) / q.r.powi(5);
    let y = y_quantity(src, q)?;
    Ok(PoincareCheck::new(lhs, y + eta * y * y))
}

/// `r⁻⁵ ∫_{Q(z, r)} |u − [u]^σ_r|³ σ` against `Y + ηY²`.
pub fn corollary_poincare_residual<S: SpaceTimeSamples + ?Sized>(
    src: &S,
    q: &ParabolicCylinder,
    sigma: &TestFunction,
    eta: f64,
) -> Result<PoincareCheck, CylinderError> {
    let centre = check_subordinate(q, sigma)?;
    let s = q.sample(src, &sigma_rule(q, sigma, centre))?;
    let num = s.integrate(|x, v| v[0] * sigma.value(x, 0.0));
    let den = s.integrate(|x, _| sigma.value(x, 0.0));
    let m = num / den;
    let lhs = s.integrate(|x, v| (v[0] - m).abs().powi(3) * sigma.value(x, 0.0)) / q.r.powi(5);
    let y = y_quantity(src, q)?;
    Ok(PoincareCheck::new(lhs, y + eta * y * y))
}

/// Interpolation checks `W ≤ c(A^{11/8}E^{1/8} + A^{3/2})` and `Y ≤ c Ā^{5/8}E^{7/8}`.
///
/// Gaps are `lhs − rhs` with `c = 1`; empirical constants are `lhs / rhs`
/// with `0/0 = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InterpolationResiduals {
    pub gap_w: f64,
    pub gap_y: f64,
    pub c_emp_w: f64,
    pub c_emp_y: f64,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else if num > 0.0 {
        f64::INFINITY
    } else {
        0.0
    }
}

pub fn interpolation_residuals(stats: &CylinderStats) -> InterpolationResiduals {
    let rhs_w = stats.A.powf(11.0 / 8.0) * stats.E.powf(1.0 / 8.0) + stats.A.powf(1.5);
    let rhs_y = stats.A_bar.powf(5.0 / 8.0) * stats.E.powf(7.0 / 8.0);
    InterpolationResiduals {
        gap_w: stats.W - rhs_w,
        gap_y: stats.Y - rhs_y,
        c_emp_w: ratio(stats.W, rhs_w),
        c_emp_y: ratio(stats.Y, rhs_y),
    }
}

/// `Y(z, θr) / (θ³ Y(z, r))`, or 0 when `Y(z, r) = 0`.
pub fn decay_ratio<S: SpaceTimeSamples + ?Sized>(
    src: &S,
    q: &ParabolicCylinder,
    theta: f64,
) -> Result<f64, CylinderError> {
    if !(theta > 0.0 && theta < 0.25) {
        return Err(CylinderError::BadTheta(theta));
    }
    let outer = y_quantity(src, q)?;
    let inner = y_quantity(src, &q.shrunk(theta)?)?;
    Ok(if outer > 0.0 { inner / (theta.powi(3) * outer) } else { 0.0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::SpectralField;
    use crate::sampling::AnalyticField;
    use crate::solver::{simulate, SolverConfig, Trajectory};
    use std::f64::consts::PI;

    fn frames(r: f64, t0: f64, n: usize) -> Vec<f64> {
        let h = r.powi(4);
        (0..n).map(|i| t0 - 1.5 * h + 3.0 * h * i as f64 / (n - 1) as f64).collect()
    }

    fn small_run() -> Trajectory {
        let u0 = SpectralField::from_fn(64, |x| 0.4 * x.cos() - 0.3 * (2.0 * x).sin()).unwrap();
        simulate(&u0, &SolverConfig::new(5e-4, 0.06)).unwrap()
    }

    #[test]
    fn bad_radius_rejected() {
        assert!(ParabolicCylinder::new(0.0, 0.0, 0.0).is_err());
        assert!(ParabolicCylinder::new(0.0, 0.0, 3.2).is_err());
    }

    #[test]
    fn zero_field_gives_zero_stats() {
        let q = ParabolicCylinder::new(1.0, 0.5, 0.3).unwrap();
        let f = AnalyticField::uniform(0.49, 0.51, 40_001, |_, _| [0.0; 3]);
        assert_eq!(cyl_mean(&f, &q).unwrap(), 0.0);
        assert_eq!(quantities(&f, &q, None).unwrap(), CylinderStats::ZERO);
        let p = poincare_residual(&f, &q, 1.0).unwrap();
        assert_eq!((p.lhs, p.rhs_bound, p.c_emp, p.violation), (0.0, 0.0, 0.0, false));
        let i = interpolation_residuals(&CylinderStats::ZERO);
        assert_eq!((i.c_emp_w, i.c_emp_y), (0.0, 0.0));
        assert_eq!(decay_ratio(&f, &q, 0.2).unwrap(), 0.0);
    }

    #[test]
    fn cosine_mean_closed_form() {
        let r = 0.7;
        let q = ParabolicCylinder::new(0.0, 1.0, r).unwrap();
        let f = AnalyticField::new(frames(r, 1.0, 9), |x, _| [x.cos(), -x.sin(), -x.cos()]);
        assert!((cyl_mean(&f, &q).unwrap() - r.sin() / r).abs() < 1e-14);
    }

    #[test]
    fn too_few_frames_refused() {
        let q = ParabolicCylinder::new(0.0, 1.0, 0.3).unwrap();
        let f = AnalyticField::uniform(0.0, 2.0, 11, |x, _| [x.cos(), 0.0, 0.0]);
        assert!(matches!(cyl_mean(&f, &q), Err(CylinderError::Sampling(SamplingError::TooFewFrames { .. }))));
        let late = ParabolicCylinder::new(0.0, 2.0, 0.3).unwrap();
        assert!(matches!(cyl_mean(&f, &late), Err(CylinderError::Sampling(SamplingError::OutsideTimeRange { .. }))));
    }

    #[test]
    fn locally_linear_closed_forms() {
        let (g, r, x0) = (1.3, 0.4, 0.5);
        let q = ParabolicCylinder::new(x0, 1.0, r).unwrap();
        let f = AnalyticField::new(frames(r, 1.0, 200), move |x, _| [g * x, g, 0.0]);
        let st = quantities(&f, &q, None).unwrap();
        assert!((st.Y - 4.0 * g.powi(3) * r.powi(3)).abs() < 1e-12);
        assert_eq!(st.E, 0.0);
        assert!((st.mean - g * x0).abs() < 1e-13);
        assert!((st.sigma_mean_cyl - g * x0).abs() < 1e-13);
        // Ā: variance of g·x on the ball is g²r²/3, so Ā = 2g²r²/3.
        assert!((st.A_bar - 2.0 * g * g * r * r / 3.0).abs() < 1e-12);
        let p = poincare_residual(&f, &q, 1.0).unwrap();
        assert!((p.lhs - g.powi(3) * r.powi(3) / 256.0).abs() < 1e-13);
        assert!(p.c_emp <= 1.0 / 1024.0);
        let sigma = TestFunction::spatial(x0, r).unwrap();
        let c = corollary_poincare_residual(&f, &q, &sigma, 1.0).unwrap();
        // Oracle: r⁻⁵ · 2r⁴ · ∫ |g(x − x0)|³ σ(x) dx by a fine midpoint rule.
        let m = 200_000;
        let h = 2.0 * r / m as f64;
        let space: f64 = (0..m)
            .map(|i| {
                let x = x0 - r + (i as f64 + 0.5) * h;
                (g * (x - x0)).abs().powi(3) * sigma.value(x, 0.0) * h
            })
            .sum();
        let want = 2.0 * r.powi(4) * space / r.powi(5);
        assert!((c.lhs - want).abs() < 1e-8 * want, "{} vs {want}", c.lhs);
        assert!(c.c_emp < 1.0);
    }

    #[test]
    fn constant_field_poincare_vanishes() {
        let q = ParabolicCylinder::new(2.0, 1.0, 0.5).unwrap();
        let f = AnalyticField::new(frames(0.5, 1.0, 200), |_, _| [3.5, 0.0, 0.0]);
        let p = poincare_residual(&f, &q, 1.0).unwrap();
        assert!(p.lhs < 1e-25 && p.rhs_bound == 0.0 && p.c_emp == 0.0 && !p.violation);
        let sigma = TestFunction::spatial(2.0, 0.5).unwrap();
        let c = corollary_poincare_residual(&f, &q, &sigma, 1.0).unwrap();
        assert!(c.lhs < 1e-25 && c.c_emp == 0.0);
        let sm = sigma_means(&f, &q, &sigma).unwrap();
        assert!((sm.cyl_value - 3.5).abs() < 1e-14);
        assert!(sm.values.iter().all(|v| (v - 3.5).abs() < 1e-14));
    }

    #[test]
    fn violation_is_flagged() {
        let p = PoincareCheck::new(1e-6, 0.0);
        assert!(p.violation && p.c_emp.is_infinite());
    }

    #[test]
    fn symmetric_sigma_mean_of_cosine() {
        let q = ParabolicCylinder::new(0.0, 1.0, 0.6).unwrap();
        let f = AnalyticField::new(frames(0.6, 1.0, 10), |x, _| [x.cos(), -x.sin(), -x.cos()]);
        let sigma = TestFunction::spatial(0.0, 0.6).unwrap();
        let sm = sigma_means(&f, &q, &sigma).unwrap();
        for v in &sm.values {
            assert!((v - sm.cyl_value).abs() < 1e-14);
        }
        assert!((sm.at(1.0) - sm.cyl_value).abs() < 1e-14);
    }

    #[test]
    fn sigma_must_be_subordinate() {
        let q = ParabolicCylinder::new(0.0, 1.0, 0.5).unwrap();
        let f = AnalyticField::new(frames(0.5, 1.0, 10), |_, _| [1.0, 0.0, 0.0]);
        let wide = TestFunction::spatial(0.0, 0.6).unwrap();
        assert_eq!(sigma_means(&f, &q, &wide), Err(CylinderError::NotSubordinate));
        let bump = TestFunction::bump(0.0, 1.0, 0.3, 0.01).unwrap();
        assert_eq!(sigma_means(&f, &q, &bump), Err(CylinderError::NotSubordinate));
        let inner = TestFunction::spatial(0.2, 0.3).unwrap();
        assert!(sigma_means(&f, &q, &inner).is_ok());
    }

    #[test]
    fn sigma_identity_on_solver_output() {
        let traj = small_run();
        let q = ParabolicCylinder::new(1.0, 0.03, 0.2).unwrap();
        let sm = sigma_means(&traj, &q, &TestFunction::spatial(1.0, 0.2).unwrap()).unwrap();
        assert!(sm.identity_residual < 1e-10);
    }

    /// Independent oracle: Simpson in space with explicit Fourier sums, the
    /// trapezoid rule in time with linearly interpolated window ends.
    fn brute_force(traj: &Trajectory, q: &ParabolicCylinder, g: impl Fn(&[f64; 3]) -> f64) -> f64 {
        let eval = |field: &SpectralField, x: f64| -> [f64; 3] {
            let n = field.n_grid();
            let mut out = [0.0; 3];
            for (j, c) in field.coeffs().iter().enumerate() {
                let k = crate::field::wavenumber(j, n) as f64;
                let (s, co) = (k * x).sin_cos();
                let re = c.re * co - c.im * s;
                let im = c.re * s + c.im * co;
                if j == n / 2 {
                    out[0] += c.re * (k * x).cos();
                    out[2] -= k * k * c.re * (k * x).cos();
                    continue;
                }
                out[0] += re;
                out[1] += -k * im;
                out[2] += -k * k * re;
            }
            out
        };
        let m = 4 * 512;
        let h = 2.0 * q.r / m as f64;
        let space = |field: &SpectralField| -> f64 {
            (0..=m)
                .map(|i| {
                    let w = if i == 0 || i == m { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
                    w * g(&eval(field, q.x0 - q.r + i as f64 * h))
                })
                .sum::<f64>()
                * h
                / 3.0
        };
        let (lo, hi) = q.time_window();
        let times = traj.times();
        let at = |t: f64| -> f64 {
            let k = times.iter().position(|&s| s > t).unwrap();
            let a = (t - times[k - 1]) / (times[k] - times[k - 1]);
            let blend = traj.frames()[k - 1].field.scaled(1.0 - a).axpy(a, &traj.frames()[k].field).unwrap();
            space(&blend)
        };
        let mut pts = vec![(lo, at(lo))];
        for (t, f) in times.iter().zip(traj.frames()) {
            if *t > lo && *t < hi {
                pts.push((*t, space(&f.field)));
            }
        }
        pts.push((hi, at(hi)));
        pts.windows(2).map(|w| 0.5 * (w[1].0 - w[0].0) * (w[0].1 + w[1].1)).sum()
    }

    #[test]
    fn refined_quadrature_oracle() {
        let traj = small_run();
        let q = ParabolicCylinder::new(2.3, 0.03, 0.25).unwrap();
        let mean = cyl_mean(&traj, &q).unwrap();
        let want = brute_force(&traj, &q, |v| v[0]) / q.volume();
        assert!((mean - want).abs() < 1e-8, "{mean} vs {want}");
        let st = quantities(&traj, &q, None).unwrap();
        let y = brute_force(&traj, &q, |v| v[1].abs().powi(3)) / (q.r * q.r);
        let e = brute_force(&traj, &q, |v| v[2] * v[2]) / q.r;
        let w = brute_force(&traj, &q, |v| v[0].abs().powi(3)) / q.r.powi(5);
        for (got, want) in [(st.Y, y), (st.E, e), (st.W, w)] {
            assert!((got - want).abs() < 1e-6 * want.abs(), "{got} vs {want}");
        }
    }

    #[test]
    fn shift_invariance() {
        let traj = small_run();
        let dx = 0.77;
        let frames: Vec<_> = traj
            .frames()
            .iter()
            .map(|f| crate::solver::Frame { t: f.t, field: f.field.shifted(dx) })
            .collect();
        let moved = Trajectory::from_frames(*traj.config(), frames).unwrap();
        let q = ParabolicCylinder::new(5.9, 0.03, 0.3).unwrap();
        let q2 = ParabolicCylinder::new(5.9 + dx, 0.03, 0.3).unwrap();
        let a = quantities(&traj, &q, None).unwrap();
        let b = quantities(&moved, &q2, None).unwrap();
        for (x, y) in [(a.Y, b.Y), (a.A, b.A), (a.A_bar, b.A_bar), (a.E, b.E), (a.W, b.W), (a.mean, b.mean)] {
            assert!((x - y).abs() < 1e-12 * (1.0 + x.abs()), "{x} vs {y}");
        }
    }

    #[test]
    fn scaling_invariance() {
        let traj = small_run();
        let v = traj.rescaled(2).unwrap();
        let (x, t, r) = (1.1, 0.03, 0.2);
        let a = quantities(&traj, &ParabolicCylinder::new(x, t, 2.0 * r).unwrap(), None).unwrap();
        let b = quantities(&v, &ParabolicCylinder::new(x / 2.0, t / 16.0, r).unwrap(), None).unwrap();
        for (p, q) in [(a.Y, b.Y), (a.A, b.A), (a.A_bar, b.A_bar), (a.E, b.E), (a.W, b.W)] {
            assert!((p - q).abs() < 0.02 * p.abs().max(1e-300), "{p} vs {q}");
        }
    }

    #[test]
    fn adding_a_constant_leaves_poincare_unchanged() {
        let (q, r) = (ParabolicCylinder::new(1.0, 0.5, 0.4).unwrap(), 0.4);
        let f = AnalyticField::new(frames(r, 0.5, 200), |x, t| [x.sin() * (1.0 + t), x.cos() * (1.0 + t), -x.sin() * (1.0 + t)]);
        let g = AnalyticField::new(frames(r, 0.5, 200), |x, t| [x.sin() * (1.0 + t) + 7.0, x.cos() * (1.0 + t), -x.sin() * (1.0 + t)]);
        let a = poincare_residual(&f, &q, 1.0).unwrap();
        let b = poincare_residual(&g, &q, 1.0).unwrap();
        assert!((a.lhs - b.lhs).abs() < 1e-12 * a.lhs);
        assert_eq!(a.rhs_bound, b.rhs_bound);
    }

    #[test]
    fn decay_ratio_tends_to_one_for_smooth_fields() {
        // |u_x|³ is locally constant, so Y(θr)/Y(r) → θ³.
        let theta = 0.2;
        let mut prev = f64::INFINITY;
        for r in [0.4, 0.2, 0.1, 0.05] {
            let q = ParabolicCylinder::new(PI / 3.0, 1.0, r).unwrap();
            let ts = frames(theta * r, 1.0, 12).into_iter().chain(frames(r, 1.0, 12)).collect::<Vec<_>>();
            let mut ts = ts;
            ts.sort_by(f64::total_cmp);
            ts.dedup();
            let f = AnalyticField::new(ts, |x, t| {
                let a = 1.0 + 0.1 * t;
                [a * x.sin(), a * x.cos(), -a * x.sin()]
            });
            let d = (decay_ratio(&f, &q, theta).unwrap() - 1.0).abs();
            assert!(d < prev);
            prev = d;
        }
        assert!(prev < 0.01);
    }

    #[test]
    fn a_bar_bounded_by_four_a() {
        let traj = small_run();
        for x in [0.0, 1.0, 2.5, 4.0, 5.5] {
            let st = quantities(&traj, &ParabolicCylinder::new(x, 0.03, 0.25).unwrap(), None).unwrap();
            assert!(st.A_bar <= 4.0 * st.A);
            assert!(st.A_bar <= st.A * (1.0 + 1e-12));
        }
    }

    #[test]
    fn csv_rows() {
        let q = ParabolicCylinder::new(1.0, 2.0, 0.5).unwrap();
        let mut buf = Vec::new();
        write_stats_csv(&mut buf, &[StatsRow::new(&q, &CylinderStats::ZERO)]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("x0,t0,r,Y,A,Abar,E,W,mean\n1.0,2.0,0.5,"));
    }
}
