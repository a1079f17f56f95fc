//! Averages over anisotropic cylinders `B_r(x) × B_{r^α}(y)`, Campanato
//! seminorms and Hölder exponent fits for sampled data.
//!
//! Fields are dense samples on a uniform grid in `x`, optionally times a
//! uniform grid in `t`. Integrals use the trapezoid rule of the piecewise
//! (bi)linear interpolant, with cylinder boundaries interpolated.

use std::io::Read;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sampling::{time_rule, TimeRule};
use crate::singular::least_squares_slope;
use crate::solver::Trajectory;

/// Interior samples required along each axis of a cylinder.
pub const MIN_SAMPLES_PER_AXIS: usize = 4;

/// Fitted exponents below this are reported as "not Hölder".
pub const HOLDER_FLOOR: f64 = 0.05;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CampanatoError {
    #[error("only n1 = 1 and n2 ∈ {{0, 1}} are supported (got n1 = {0}, n2 = {1})")]
    Unsupported(usize, usize),
    #[error("cylinder does not match the field's dimensions")]
    DimensionMismatch,
    #[error("invalid grid: {0}")]
    BadGrid(String),
    #[error("cylinder leaves the sampled domain")]
    OutsideDomain,
    #[error("cylinder under-resolved along {axis}: {found} interior samples, {MIN_SAMPLES_PER_AXIS} needed")]
    Unresolved { axis: &'static str, found: usize },
    #[error("no admissible (centre, radius) pair in the grid")]
    EmptyGrid,
    #[error("invalid parameter: {0}")]
    BadParameter(String),
    #[error("input: {0}")]
    Input(String),
}

/// Volume of the unit ball in `ℝ^d`.
pub fn unit_ball_volume(d: usize) -> f64 {
    match d {
        0 => 1.0,
        1 => 2.0,
        _ => unit_ball_volume(d - 2) * 2.0 * std::f64::consts::PI / d as f64,
    }
}

/// `B_r(x) × B_{r^α}(y)` with `x ∈ ℝ^{n1}`, `y ∈ ℝ^{n2}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnisotropicCylinder {
    pub n1: usize,
    pub n2: usize,
    pub alpha: u32,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub r: f64,
}

impl AnisotropicCylinder {
    pub fn new(x: Vec<f64>, y: Vec<f64>, alpha: u32, r: f64) -> Result<Self, CampanatoError> {
        if !(r > 0.0) {
            return Err(CampanatoError::BadParameter(format!("radius {r} must be positive")));
        }
        if x.is_empty() || alpha == 0 {
            return Err(CampanatoError::BadParameter("need n1 ≥ 1 and α ≥ 1".into()));
        }
        Ok(Self { n1: x.len(), n2: y.len(), alpha, x, y, r })
    }

    /// The parabolic case `n1 = n2 = 1`, `α = 4`.
    pub fn parabolic(x: f64, t: f64, r: f64) -> Result<Self, CampanatoError> {
        Self::new(vec![x], vec![t], 4, r)
    }

    /// A ball in one space dimension.
    pub fn interval(x: f64, r: f64) -> Result<Self, CampanatoError> {
        Self::new(vec![x], vec![], 1, r)
    }

    /// Homogeneous dimension `n = n1 + α n2`.
    pub fn homogeneous_dim(&self) -> usize {
        self.n1 + self.alpha as usize * self.n2
    }

    /// `V`, the volume of the unit cylinder.
    pub fn unit_volume(&self) -> f64 {
        unit_ball_volume(self.n1) * unit_ball_volume(self.n2)
    }

    pub fn volume(&self) -> f64 {
        self.unit_volume() * self.r.powi(self.homogeneous_dim() as i32)
    }

    pub fn with_radius(&self, r: f64) -> Self {
        Self { r, ..self.clone() }
    }
}

/// Samples on `x0 + i·dx` (`i < nx`), optionally times `t0 + j·dt` (`j < nt`).
#[derive(Debug, Clone, PartialEq)]
pub struct SampledField {
    xs: Vec<f64>,
    ts: Option<Vec<f64>>,
    /// Row-major, `values[j * nx + i]`.
    values: Vec<f64>,
}

fn uniform_axis(start: f64, step: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| start + i as f64 * step).collect()
}

impl SampledField {
    pub fn new_1d(x0: f64, dx: f64, values: Vec<f64>) -> Result<Self, CampanatoError> {
        if values.len() < 2 || !(dx > 0.0) {
            return Err(CampanatoError::BadGrid("need at least two samples and dx > 0".into()));
        }
        Ok(Self { xs: uniform_axis(x0, dx, values.len()), ts: None, values })
    }

    pub fn new_2d(x0: f64, dx: f64, nx: usize, t0: f64, dt: f64, values: Vec<f64>) -> Result<Self, CampanatoError> {
        if nx < 2 || !(dx > 0.0) || !(dt > 0.0) || values.len() % nx != 0 || values.len() / nx < 2 {
            return Err(CampanatoError::BadGrid("need a full grid of at least 2 × 2 samples".into()));
        }
        let nt = values.len() / nx;
        Ok(Self { xs: uniform_axis(x0, dx, nx), ts: Some(uniform_axis(t0, dt, nt)), values })
    }

    pub fn from_fn_1d(a: f64, b: f64, n: usize, f: impl Fn(f64) -> f64) -> Result<Self, CampanatoError> {
        let dx = (b - a) / (n - 1) as f64;
        Self::new_1d(a, dx, (0..n).map(|i| f(a + i as f64 * dx)).collect())
    }

    pub fn from_fn_2d(
        (xa, xb, nx): (f64, f64, usize),
        (ta, tb, nt): (f64, f64, usize),
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Self, CampanatoError> {
        let dx = (xb - xa) / (nx - 1) as f64;
        let dt = (tb - ta) / (nt - 1) as f64;
        let mut values = Vec::with_capacity(nx * nt);
        for j in 0..nt {
            for i in 0..nx {
                values.push(f(xa + i as f64 * dx, ta + j as f64 * dt));
            }
        }
        Self::new_2d(xa, dx, nx, ta, dt, values)
    }

    /// Grid samples of a trajectory: `x_j = 2πj/n` and the frame times, which
    /// must be uniformly spaced.
    pub fn from_trajectory(traj: &Trajectory) -> Result<Self, CampanatoError> {
        let times = traj.times();
        if times.len() < 2 {
            return Err(CampanatoError::BadGrid("need at least two frames".into()));
        }
        let dt = times[1] - times[0];
        if times.windows(2).any(|w| ((w[1] - w[0]) - dt).abs() > 1e-9 * dt) {
            return Err(CampanatoError::BadGrid("frame times are not uniformly spaced".into()));
        }
        let n = traj.n_grid();
        let values = traj.frames().iter().flat_map(|f| f.field.samples().iter().copied()).collect();
        Self::new_2d(0.0, 2.0 * std::f64::consts::PI / n as f64, n, times[0], dt, values)
    }

    /// Reads `x,t,value` rows (with header) forming a complete uniform grid.
    /// A single distinct `t` gives a one-dimensional field.
    pub fn from_csv_reader<R: Read>(rdr: R) -> Result<Self, CampanatoError> {
        #[derive(Deserialize)]
        struct Row {
            x: f64,
            t: f64,
            value: f64,
        }
        let mut rows = Vec::new();
        for rec in csv::Reader::from_reader(rdr).deserialize::<Row>() {
            rows.push(rec.map_err(|e| CampanatoError::Input(e.to_string()))?);
        }
        let axis = |get: &dyn Fn(&Row) -> f64| -> Vec<f64> {
            let mut v: Vec<f64> = rows.iter().map(get).collect();
            v.sort_by(f64::total_cmp);
            v.dedup();
            v
        };
        let xs = axis(&|r| r.x);
        let ts = axis(&|r| r.t);
        let check_uniform = |v: &[f64], name: &str| -> Result<f64, CampanatoError> {
            if v.len() < 2 {
                return Ok(0.0);
            }
            let step = (v[v.len() - 1] - v[0]) / (v.len() - 1) as f64;
            if v.windows(2).any(|w| ((w[1] - w[0]) - step).abs() > 1e-6 * step) {
                return Err(CampanatoError::BadGrid(format!("{name} values are not uniformly spaced")));
            }
            Ok(step)
        };
        let dx = check_uniform(&xs, "x")?;
        let dt = check_uniform(&ts, "t")?;
        if rows.len() != xs.len() * ts.len() {
            return Err(CampanatoError::BadGrid(format!(
                "{} rows do not fill a {} × {} grid",
                rows.len(),
                xs.len(),
                ts.len()
            )));
        }
        let index = |v: f64, start: f64, step: f64| -> usize {
            if step == 0.0 {
                0
            } else {
                ((v - start) / step).round() as usize
            }
        };
        let mut values = vec![f64::NAN; rows.len()];
        for r in &rows {
            let k = index(r.t, ts[0], dt) * xs.len() + index(r.x, xs[0], dx);
            values[k] = r.value;
        }
        if values.iter().any(|v| v.is_nan()) {
            return Err(CampanatoError::BadGrid("duplicate or missing grid points".into()));
        }
        if ts.len() == 1 {
            Self::new_1d(xs[0], dx, values)
        } else {
            Self::new_2d(xs[0], dx, xs.len(), ts[0], dt, values)
        }
    }

    pub fn from_csv_path(path: &Path) -> Result<Self, CampanatoError> {
        let file = std::fs::File::open(path).map_err(|e| CampanatoError::Input(format!("{}: {e}", path.display())))?;
        Self::from_csv_reader(file)
    }

    /// 0 for a purely spatial field, 1 with a time axis.
    pub fn n2(&self) -> usize {
        usize::from(self.ts.is_some())
    }

    pub fn xs(&self) -> &[f64] {
        &self.xs
    }

    pub fn ts(&self) -> Option<&[f64]> {
        self.ts.as_deref()
    }

    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.xs.len() + i]
    }

    /// The full sampled box.
    pub fn domain(&self) -> Region {
        Region {
            x: (self.xs[0], self.xs[self.xs.len() - 1]),
            t: self.ts.as_ref().map(|ts| (ts[0], ts[ts.len() - 1])),
        }
    }

    fn rule(axis: &[f64], c: f64, h: f64, name: &'static str) -> Result<TimeRule, CampanatoError> {
        let (lo, hi) = (c - h, c + h);
        let slack = 1e-12 * (1.0 + axis[axis.len() - 1].abs());
        if lo < axis[0] - slack || hi > axis[axis.len() - 1] + slack {
            return Err(CampanatoError::OutsideDomain);
        }
        let rule = time_rule(axis, lo, hi).map_err(|_| CampanatoError::OutsideDomain)?;
        if rule.frames_inside < MIN_SAMPLES_PER_AXIS {
            return Err(CampanatoError::Unresolved { axis: name, found: rule.frames_inside });
        }
        Ok(rule)
    }

    /// Quadrature weights and interpolated values on the cylinder.
    fn nodes(&self, q: &AnisotropicCylinder) -> Result<(Vec<f64>, Vec<f64>), CampanatoError> {
        if q.n1 != 1 || q.n2 > 1 {
            return Err(CampanatoError::Unsupported(q.n1, q.n2));
        }
        if q.n2 != self.n2() {
            return Err(CampanatoError::DimensionMismatch);
        }
        let rx = Self::rule(&self.xs, q.x[0], q.r, "x")?;
        let rt = match &self.ts {
            Some(ts) => Some(Self::rule(ts, q.y[0], q.r.powi(q.alpha as i32), "t")?),
            None => None,
        };
        let interp_x = |j: usize, n: &crate::sampling::TimeNode| {
            (1.0 - n.alpha) * self.value(n.left, j) + n.alpha * self.value(n.right, j)
        };
        let mut ws = Vec::new();
        let mut vs = Vec::new();
        match rt {
            None => {
                for n in &rx.nodes {
                    ws.push(n.weight);
                    vs.push(interp_x(0, n));
                }
            }
            Some(rt) => {
                for m in &rt.nodes {
                    for n in &rx.nodes {
                        ws.push(n.weight * m.weight);
                        vs.push((1.0 - m.alpha) * interp_x(m.left, n) + m.alpha * interp_x(m.right, n));
                    }
                }
            }
        }
        Ok((ws, vs))
    }
}

/// A box `[x.0, x.1] × [t.0, t.1]` (or an interval for one-dimensional fields).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub x: (f64, f64),
    pub t: Option<(f64, f64)>,
}

impl Region {
    fn contains(&self, q: &AnisotropicCylinder) -> bool {
        let tol = 1e-12;
        let x_ok = q.x[0] - q.r >= self.x.0 - tol && q.x[0] + q.r <= self.x.1 + tol;
        let t_ok = match (self.t, q.y.first()) {
            (Some((a, b)), Some(&y)) => {
                let h = q.r.powi(q.alpha as i32);
                y - h >= a - tol && y + h <= b + tol
            }
            (None, None) => true,
            _ => false,
        };
        x_ok && t_ok
    }
}

/// `(⨍_Q f, (⨍_Q |f − ⨍_Q f|^p)^{1/p})`.
pub fn aniso_mean(f: &SampledField, q: &AnisotropicCylinder, p: f64) -> Result<(f64, f64), CampanatoError> {
    if !(p >= 1.0) {
        return Err(CampanatoError::BadParameter(format!("p = {p} must be at least 1")));
    }
    let (ws, vs) = f.nodes(q)?;
    let total: f64 = ws.iter().sum();
    let mean = ws.iter().zip(&vs).map(|(w, v)| w * v).sum::<f64>() / total;
    let osc = (ws.iter().zip(&vs).map(|(w, v)| w * (v - mean).abs().powf(p)).sum::<f64>() / total).powf(1.0 / p);
    Ok((mean, osc))
}

/// `(|f_{z,θr} − f_{z,r}|, θ^{−n} (⨍_{Q_r} |f − f_{z,r}|^p)^{1/p})`.
pub fn average_comparison_check(
    f: &SampledField,
    q: &AnisotropicCylinder,
    theta: f64,
    p: f64,
) -> Result<(f64, f64), CampanatoError> {
    if !(theta > 0.0 && theta <= 1.0) {
        return Err(CampanatoError::BadParameter(format!("theta = {theta} must lie in (0, 1]")));
    }
    let (outer, osc) = aniso_mean(f, q, p)?;
    let (inner, _) = aniso_mean(f, &q.with_radius(theta * q.r), p)?;
    Ok(((inner - outer).abs(), theta.powi(-(q.homogeneous_dim() as i32)) * osc))
}

/// Cylinder centres; `t` is ignored for one-dimensional fields.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Centre {
    pub x: f64,
    pub t: f64,
}

/// A `(centres × radii)` sweep for one field.
#[derive(Debug, Clone)]
pub struct Sweep<'a> {
    pub field: &'a SampledField,
    pub region: Region,
    pub p: f64,
    pub alpha: u32,
    pub r_grid: Vec<f64>,
    pub z_grid: Vec<Centre>,
}

impl<'a> Sweep<'a> {
    /// `p = 3`, `α = 4`, a geometric radius grid of ratio ½ from `r_max`
    /// and centres at every `stride`-th sample inside the region.
    pub fn new(field: &'a SampledField, region: Region, r_max: f64, n_radii: usize, stride: usize) -> Self {
        let r_grid = (0..n_radii).map(|i| r_max * 0.5f64.powi(i as i32)).collect();
        let xs: Vec<f64> = field.xs().iter().step_by(stride.max(1)).copied().filter(|x| *x >= region.x.0 && *x <= region.x.1).collect();
        let ts: Vec<f64> = match (field.ts(), region.t) {
            (Some(ts), Some((a, b))) => ts.iter().step_by(stride.max(1)).copied().filter(|t| *t >= a && *t <= b).collect(),
            _ => vec![0.0],
        };
        let z_grid = ts.iter().flat_map(|&t| xs.iter().map(move |&x| Centre { x, t })).collect();
        Self { field, region, p: 3.0, alpha: 4, r_grid, z_grid }
    }

    fn cylinder(&self, z: &Centre, r: f64) -> AnisotropicCylinder {
        let y = if self.field.n2() == 1 { vec![z.t] } else { vec![] };
        AnisotropicCylinder { n1: 1, n2: y.len(), alpha: self.alpha, x: vec![z.x], y, r }
    }

    /// Worst p-oscillation over admissible centres, per radius (`None` if no
    /// centre admits the radius).
    pub fn worst_oscillations(&self) -> Result<Vec<(f64, Option<f64>)>, CampanatoError> {
        self.r_grid
            .iter()
            .map(|&r| {
                let oscs: Vec<Result<Option<f64>, CampanatoError>> = self
                    .z_grid
                    .par_iter()
                    .map(|z| {
                        let q = self.cylinder(z, r);
                        if !self.region.contains(&q) {
                            return Ok(None);
                        }
                        aniso_mean(self.field, &q, self.p).map(|(_, o)| Some(o))
                    })
                    .collect();
                let mut worst: Option<f64> = None;
                for o in oscs {
                    if let Some(o) = o? {
                        worst = Some(worst.map_or(o, |w: f64| w.max(o)));
                    }
                }
                Ok((r, worst))
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampanatoDetail {
    /// Smallest `M` certified on the grid.
    pub m: f64,
    /// `(r, max_z r^{−β} osc)` per admissible radius.
    pub per_radius: Vec<(f64, f64)>,
    /// Slope of `log M(r)` against `log r`; clearly negative values mean
    /// `M(r)` grows as `r → 0`, so `β` is too large for this field.
    pub growth_exponent: f64,
}

impl CampanatoDetail {
    pub fn diverges(&self, tol: f64) -> bool {
        self.growth_exponent < -tol
    }
}

pub fn campanato_detail(sweep: &Sweep<'_>, beta: f64) -> Result<CampanatoDetail, CampanatoError> {
    let per_radius: Vec<(f64, f64)> = sweep
        .worst_oscillations()?
        .into_iter()
        .filter_map(|(r, w)| w.map(|w| (r, w * r.powf(-beta))))
        .collect();
    if per_radius.is_empty() {
        return Err(CampanatoError::EmptyGrid);
    }
    let m = per_radius.iter().map(|p| p.1).fold(0.0, f64::max);
    let logs: Vec<(f64, f64)> =
        per_radius.iter().filter(|p| p.1 > 0.0).map(|&(r, v)| (r.ln(), v.ln())).collect();
    let growth_exponent = if logs.len() >= 2 { least_squares_slope(&logs).0 } else { 0.0 };
    Ok(CampanatoDetail { m, per_radius, growth_exponent })
}

/// `max_{z, r} r^{−β} (⨍_{Q_r(z)} |f − f_{z,r}|^p)^{1/p}` over the sweep grid.
pub fn campanato_seminorm(sweep: &Sweep<'_>, beta: f64) -> Result<f64, CampanatoError> {
    Ok(campanato_detail(sweep, beta)?.m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HolderFit {
    pub beta_hat: f64,
    pub m_hat: f64,
    pub holder: bool,
    pub per_radius: Vec<(f64, f64)>,
    /// `max |f(z) − f(w)| / d(z, w)^{β̂}` over sampled pairs, with
    /// `d = |x − y| + |t − s|^{1/α}`.
    pub two_point_max: f64,
    /// `two_point_max / M̂`.
    pub c_measured: f64,
    pub warnings: Vec<String>,
}

/// Fits `worst_osc(r) ≈ M̂ r^{β̂}` on a log-log scale.
pub fn holder_fit(sweep: &Sweep<'_>) -> Result<HolderFit, CampanatoError> {
    let per_radius: Vec<(f64, f64)> =
        sweep.worst_oscillations()?.into_iter().filter_map(|(r, w)| w.map(|w| (r, w))).collect();
    if per_radius.len() < 2 {
        return Err(CampanatoError::EmptyGrid);
    }
    let mut warnings = Vec::new();
    let floor = 1e-300;
    let logs: Vec<(f64, f64)> = per_radius.iter().map(|&(r, w)| (r.ln(), w.max(floor).ln())).collect();
    let (slope, intercept) = least_squares_slope(&logs);
    let mut beta_hat = slope;
    if per_radius.iter().all(|p| p.1 == 0.0) {
        beta_hat = 1.0;
    }
    if beta_hat <= 0.0 {
        warnings.push(format!("non-positive fitted slope {slope:.4}; reporting beta_hat = 0"));
        beta_hat = 0.0;
    }
    let holder = beta_hat >= HOLDER_FLOOR;
    if !holder {
        warnings.push("oscillation does not decay with r: field is not Hölder continuous on this grid".into());
    }
    let m_hat = intercept.exp();
    let two_point_max = two_point_quotient(sweep, beta_hat);
    let c_measured = if m_hat > 0.0 { two_point_max / m_hat } else { 0.0 };
    Ok(HolderFit { beta_hat, m_hat, holder, per_radius, two_point_max, c_measured, warnings })
}

/// Largest two-point Hölder quotient over sample pairs in the region whose
/// parabolic distance is at most the largest sweep radius.
fn two_point_quotient(sweep: &Sweep<'_>, beta: f64) -> f64 {
    let f = sweep.field;
    let reg = sweep.region;
    let r_max = sweep.r_grid.iter().copied().fold(0.0, f64::max);
    let alpha = sweep.alpha as f64;
    let stride_x = (f.xs().len() / 256).max(1);
    let xi: Vec<usize> = (0..f.xs().len()).step_by(stride_x).filter(|&i| f.xs()[i] >= reg.x.0 && f.xs()[i] <= reg.x.1).collect();
    let tj: Vec<usize> = match (f.ts(), reg.t) {
        (Some(ts), Some((a, b))) => {
            let stride_t = (ts.len() / 32).max(1);
            (0..ts.len()).step_by(stride_t).filter(|&j| ts[j] >= a && ts[j] <= b).collect()
        }
        _ => vec![0],
    };
    let pts: Vec<(f64, f64, f64)> = tj
        .iter()
        .flat_map(|&j| {
            let t = f.ts().map_or(0.0, |ts| ts[j]);
            xi.iter().map(move |&i| (f.xs()[i], t, f.value(i, j)))
        })
        .collect();
    pts.par_iter()
        .enumerate()
        .map(|(k, a)| {
            let mut best = 0.0f64;
            for b in &pts[k + 1..] {
                let d = (a.0 - b.0).abs() + (a.1 - b.1).abs().powf(1.0 / alpha);
                if d > 0.0 && d <= r_max {
                    best = best.max((a.2 - b.2).abs() / d.powf(beta));
                }
            }
            best
        })
        .reduce(|| 0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn line(n: usize) -> SampledField {
        SampledField::from_fn_1d(-1.0, 1.0, n, |x| x).unwrap()
    }

    #[test]
    fn volumes() {
        assert_eq!(unit_ball_volume(1), 2.0);
        assert!((unit_ball_volume(2) - std::f64::consts::PI).abs() < 1e-15);
        assert!((unit_ball_volume(3) - 4.0 * std::f64::consts::PI / 3.0).abs() < 1e-15);
        let q = AnisotropicCylinder::parabolic(0.0, 0.0, 0.5).unwrap();
        assert_eq!(q.homogeneous_dim(), 5);
        assert!((q.volume() - 4.0 * 0.5f64.powi(5)).abs() < 1e-15);
    }

    #[test]
    fn constant_field() {
        let f = SampledField::from_fn_2d((0.0, 1.0, 65), (0.0, 1.0, 65), |_, _| 2.5).unwrap();
        let q = AnisotropicCylinder::new(vec![0.5], vec![0.5], 1, 0.3).unwrap();
        let (m, o) = aniso_mean(&f, &q, 2.0).unwrap();
        assert!((m - 2.5).abs() < 1e-13 && o < 1e-13, "{m} {o}");
        let (l, r) = average_comparison_check(&f, &q, 0.5, 2.0).unwrap();
        assert!(l < 1e-13 && r < 1e-12);
    }

    #[test]
    fn linear_oscillation_is_half_radius() {
        let f = line(2001);
        for r in [0.1, 0.25, 0.5] {
            let (m, o) = aniso_mean(&f, &AnisotropicCylinder::interval(0.0, r).unwrap(), 1.0).unwrap();
            assert!(m.abs() < 1e-15);
            assert!((o - r / 2.0).abs() < 1e-12, "{o}");
        }
    }

    #[test]
    fn theta_one_compares_equal_averages() {
        let f = line(2001);
        let (l, r) = average_comparison_check(&f, &AnisotropicCylinder::interval(0.2, 0.3).unwrap(), 1.0, 1.0).unwrap();
        assert_eq!(l, 0.0);
        assert!(r > 0.0);
    }

    #[test]
    fn refuses_bad_cylinders() {
        let f = line(101);
        assert_eq!(aniso_mean(&f, &AnisotropicCylinder::interval(0.9, 0.2).unwrap(), 1.0), Err(CampanatoError::OutsideDomain));
        assert!(matches!(
            aniso_mean(&f, &AnisotropicCylinder::interval(0.0, 0.02).unwrap(), 1.0),
            Err(CampanatoError::Unresolved { axis: "x", .. })
        ));
        let q = AnisotropicCylinder::parabolic(0.0, 0.0, 0.2).unwrap();
        assert_eq!(aniso_mean(&f, &q, 1.0), Err(CampanatoError::DimensionMismatch));
    }

    #[test]
    fn random_field_matches_refined_quadrature() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let amps: Vec<(f64, f64)> = (1..=6).map(|k| (rng.gen_range(-1.0..1.0) / k as f64, rng.gen_range(0.0..6.3))).collect();
        let g = |x: f64, t: f64| -> f64 {
            amps.iter().enumerate().map(|(k, (a, ph))| a * ((k + 1) as f64 * x + ph + 3.0 * t).sin()).sum()
        };
        let coarse = SampledField::from_fn_2d((0.0, 2.0, 2049), (0.0, 1.0, 513), g).unwrap();
        let fine = SampledField::from_fn_2d((0.0, 2.0, 8193), (0.0, 1.0, 2049), g).unwrap();
        let q = AnisotropicCylinder::new(vec![1.0], vec![0.5], 2, 0.6).unwrap();
        let a = aniso_mean(&coarse, &q, 3.0).unwrap();
        let b = aniso_mean(&fine, &q, 3.0).unwrap();
        assert!((a.0 - b.0).abs() < 1e-6 && (a.1 - b.1).abs() < 1e-6, "{a:?} {b:?}");
    }

    #[test]
    fn comparison_of_averages_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let vals: Vec<f64> = (0..401 * 101).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let f = SampledField::new_2d(0.0, 0.005, 401, 0.0, 0.01, vals).unwrap();
            let q = AnisotropicCylinder::new(vec![rng.gen_range(0.6..1.4)], vec![0.5], 1, rng.gen_range(0.3..0.5)).unwrap();
            let theta = rng.gen_range(0.3..1.0);
            let (l, r) = average_comparison_check(&f, &q, theta, rng.gen_range(1.0..4.0)).unwrap();
            assert!(l <= r + 1e-9);
        }
    }

    #[test]
    fn seminorm_of_constant_and_line() {
        let c = SampledField::from_fn_1d(-1.0, 1.0, 2001, |_| 4.0).unwrap();
        let s = Sweep::new(&c, c.domain(), 0.4, 5, 50);
        assert_eq!(campanato_seminorm(&s, 0.7).unwrap(), 0.0);
        let f = line(2001);
        let mut s = Sweep::new(&f, f.domain(), 0.4, 5, 50);
        s.p = 1.0;
        assert!((campanato_seminorm(&s, 1.0).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn seminorm_monotone_in_region() {
        let f = SampledField::from_fn_1d(-1.0, 1.0, 4001, |x| x.abs().sqrt()).unwrap();
        let small = Region { x: (0.2, 0.8), t: None };
        let a = campanato_seminorm(&Sweep::new(&f, small, 0.2, 5, 20), 0.5).unwrap();
        let b = campanato_seminorm(&Sweep::new(&f, f.domain(), 0.2, 5, 20), 0.5).unwrap();
        assert!(b >= a);
    }

    #[test]
    fn sqrt_cusp_seminorm_and_divergence() {
        let f = SampledField::from_fn_1d(-1.0, 1.0, 1 << 16 | 1, |x| x.abs().sqrt()).unwrap();
        let s = Sweep::new(&f, Region { x: (-0.5, 0.5), t: None }, 0.25, 8, 16);
        let ok = campanato_detail(&s, 0.5).unwrap();
        assert!(ok.m.is_finite() && !ok.diverges(0.05), "{ok:?}");
        let bad = campanato_detail(&s, 0.6).unwrap();
        assert!(bad.diverges(0.05), "{bad:?}");
    }

    #[test]
    fn time_constant_fit_equals_space_fit() {
        let g = |x: f64| (3.0 * x).sin() + x.abs().sqrt();
        let f1 = SampledField::from_fn_1d(-1.0, 1.0, 4097, g).unwrap();
        let f2 = SampledField::from_fn_2d((-1.0, 1.0, 4097), (0.0, 1.0, 257), |x, _| g(x)).unwrap();
        let mut s1 = Sweep::new(&f1, Region { x: (-0.6, 0.6), t: None }, 0.2, 5, 64);
        let mut s2 = Sweep::new(&f2, Region { x: (-0.6, 0.6), t: Some((0.0, 1.0)) }, 0.2, 5, 64);
        s1.alpha = 1;
        s2.alpha = 1;
        s2.z_grid = s1.z_grid.iter().map(|z| Centre { x: z.x, t: 0.5 }).collect();
        let a = holder_fit(&s1).unwrap();
        let b = holder_fit(&s2).unwrap();
        assert!((a.beta_hat - b.beta_hat).abs() < 1e-10);
    }

    #[test]
    fn csv_adapter_round_trip() {
        let mut text = String::from("x,t,value\n");
        for j in 0..3 {
            for i in 0..5 {
                text.push_str(&format!("{},{},{}\n", i as f64 * 0.25, j as f64 * 0.5, i * 10 + j));
            }
        }
        let f = SampledField::from_csv_reader(text.as_bytes()).unwrap();
        assert_eq!(f.n2(), 1);
        assert_eq!(f.value(3, 2), 32.0);
        let missing: String = text.lines().take(10).map(|l| format!("{l}\n")).collect();
        assert!(SampledField::from_csv_reader(missing.as_bytes()).is_err());
        let one_d = "x,t,value\n0,0,1\n1,0,2\n2,0,3\n";
        assert_eq!(SampledField::from_csv_reader(one_d.as_bytes()).unwrap().n2(), 0);
    }
}
