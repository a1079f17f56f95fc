//! Smooth cut-off functions and the local energy inequality.
//!
//! Cut-offs are tensor products of a 1D profile that equals 1 on a plateau,
//! 0 outside the support, and moves between the two through the `C^∞`
//! transition `g(y) = f(1−y) / (f(1−y) + f(y))`, `f(s) = exp(−1/s)`.
//! Derivatives up to order 4 are evaluated exactly with truncated Taylor
//! arithmetic.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::wrap_offset;
use crate::sampling::{self, SamplingError, SpaceRule, SpaceTimeSamples};
use crate::solver::Trajectory;

/// Samples per transition used to certify derivative bounds.
pub const BOUND_SAMPLES: usize = 2048;
/// Safety factor applied to sampled derivative maxima.
pub const BOUND_SAFETY: f64 = 1.05;

const FLAT_EPS: f64 = 2e-3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WeightError {
    #[error("spatial radius {0} would wrap around the torus (must be < π)")]
    SupportWraps(f64),
    #[error("plateau fraction {0} outside (0, 1)")]
    BadPlateau(f64),
    #[error("radius must be positive, got {0}")]
    BadRadius(f64),
    #[error("weight is not compactly supported in time")]
    NotCompactInTime,
    #[error("weight support leaves the sampled space-time domain")]
    SupportOutsideDomain,
    #[error("weight takes the negative value {0:e}")]
    Negative(f64),
    #[error("combined spatial support is longer than the torus")]
    CombinedSupportWraps,
    #[error(transparent)]
    Sampling(#[from] SamplingError),
}

/// Truncated Taylor series `Σ c_n h^n`, `n ≤ 4`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Jet([f64; 5]);

impl Jet {
    fn constant(c: f64) -> Self {
        Jet([c, 0.0, 0.0, 0.0, 0.0])
    }

    fn linear(c0: f64, c1: f64) -> Self {
        Jet([c0, c1, 0.0, 0.0, 0.0])
    }

    fn add(self, o: Jet) -> Jet {
        Jet(std::array::from_fn(|i| self.0[i] + o.0[i]))
    }

    fn mul(self, o: Jet) -> Jet {
        Jet(std::array::from_fn(|n| (0..=n).map(|i| self.0[i] * o.0[n - i]).sum()))
    }

    fn recip(self) -> Jet {
        let a = self.0;
        let mut r = [0.0; 5];
        r[0] = 1.0 / a[0];
        for n in 1..5 {
            r[n] = -(1..=n).map(|k| a[k] * r[n - k]).sum::<f64>() / a[0];
        }
        Jet(r)
    }

    fn exp(self) -> Jet {
        let a = self.0;
        let mut e = [0.0; 5];
        e[0] = a[0].exp();
        for n in 1..5 {
            e[n] = (1..=n).map(|k| k as f64 * a[k] * e[n - k]).sum::<f64>() / n as f64;
        }
        Jet(e)
    }

    fn neg(self) -> Jet {
        Jet(self.0.map(|c| -c))
    }

    /// Derivatives `f^{(n)}(x) = n!·c_n`.
    fn derivatives(self) -> [f64; 5] {
        let f = [1.0, 1.0, 2.0, 6.0, 24.0];
        std::array::from_fn(|n| self.0[n] * f[n])
    }
}

/// `exp(−1/s)` for `s > 0`, flat zero near `s = 0`.
fn flat_exp(s: Jet) -> Jet {
    if s.0[0] < FLAT_EPS {
        Jet::constant(0.0)
    } else {
        s.recip().neg().exp()
    }
}

/// The 1D profile and its first four derivatives with respect to `s`.
fn profile(s: f64, plateau: f64) -> [f64; 5] {
    let a = s.abs();
    if a <= plateau {
        return [1.0, 0.0, 0.0, 0.0, 0.0];
    }
    if a >= 1.0 {
        return [0.0; 5];
    }
    let width = 1.0 - plateau;
    let y = Jet::linear((a - plateau) / width, s.signum() / width);
    let one_minus = Jet::linear(1.0 - y.0[0], -y.0[1]);
    let num = flat_exp(one_minus);
    let den = num.add(flat_exp(y));
    num.mul(den.recip()).derivatives()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    /// `φ(x, t) = ρ((x − x0)/r) ρ((t − t0)/r_t)`.
    BumpSpaceTime,
    /// `σ(x) = ρ((x − x0)/r)`, constant in time.
    BumpSpaceOnly,
}

/// Derivatives of a weight at one point: `x[k] = ∂ₓᵏφ` for `k ≤ 4` and `t = ∂ₜφ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightDerivs {
    pub x: [f64; 5],
    pub t: f64,
}

impl WeightDerivs {
    pub fn value(&self) -> f64 {
        self.x[0]
    }
}

/// A nonnegative space-time weight with compact support.
pub trait SpaceTimeWeight: Sync {
    fn derivs(&self, x: f64, t: f64) -> WeightDerivs;

    /// Closed time interval outside which the weight vanishes.
    fn time_support(&self) -> (f64, f64);

    /// A quadrature rule covering the spatial support.
    fn space_rule(&self) -> SpaceRule;

    /// Nonnegativity check on the quadrature nodes.
    fn check_nonnegative(&self) -> Result<(), WeightError> {
        let (a, b) = self.time_support();
        if !a.is_finite() || !b.is_finite() {
            return Err(WeightError::NotCompactInTime);
        }
        let rule = self.space_rule();
        let mut min = 0.0f64;
        for i in 0..=64 {
            let t = a + (b - a) * i as f64 / 64.0;
            for &x in &rule.xs {
                min = min.min(self.derivs(x, t).value());
            }
        }
        if min < -1e-14 {
            Err(WeightError::Negative(min))
        } else {
            Ok(())
        }
    }
}

/// Certified sup-norms of derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivBounds {
    /// `sup |∂ₓᵏφ|`, `k = 0..=4`.
    pub x: [f64; 5],
    /// `sup |∂ₜφ|`.
    pub t: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestFunction {
    pub x0: f64,
    pub t0: f64,
    pub r_space: f64,
    pub r_time: f64,
    pub profile: Profile,
    pub plateau_fraction: f64,
    pub deriv_bounds: DerivBounds,
}

/// Builds a cut-off around `(x0, t0)` and certifies its derivative bounds by
/// dense sampling of the transition layers.
pub fn make_cutoff(
    x0: f64,
    t0: f64,
    r_space: f64,
    r_time: f64,
    profile: Profile,
    plateau_fraction: f64,
) -> Result<TestFunction, WeightError> {
    if !(r_space > 0.0) {
        return Err(WeightError::BadRadius(r_space));
    }
    if r_space >= std::f64::consts::PI {
        return Err(WeightError::SupportWraps(r_space));
    }
    if profile == Profile::BumpSpaceTime && !(r_time > 0.0) {
        return Err(WeightError::BadRadius(r_time));
    }
    if !(plateau_fraction > 0.0 && plateau_fraction < 1.0) {
        return Err(WeightError::BadPlateau(plateau_fraction));
    }
    let sampled = sampled_profile_bounds(plateau_fraction, BOUND_SAMPLES);
    let x = std::array::from_fn(|k| BOUND_SAFETY * sampled[k] / r_space.powi(k as i32));
    let t = match profile {
        Profile::BumpSpaceTime => BOUND_SAFETY * sampled[1] / r_time,
        Profile::BumpSpaceOnly => 0.0,
    };
    Ok(TestFunction {
        x0,
        t0,
        r_space,
        r_time,
        profile,
        plateau_fraction,
        deriv_bounds: DerivBounds { x, t },
    })
}

/// Max of `|ρ^{(k)}|` over `samples` points spread across one transition layer.
pub fn sampled_profile_bounds(plateau: f64, samples: usize) -> [f64; 5] {
    let mut out = [0.0f64; 5];
    for i in 0..samples {
        let s = plateau + (1.0 - plateau) * (i as f64 + 0.5) / samples as f64;
        let d = profile(s, plateau);
        for k in 0..5 {
            out[k] = out[k].max(d[k].abs());
        }
    }
    out[0] = 1.0;
    out
}

impl TestFunction {
    /// Space-time bump with the default plateau fraction 1/2.
    pub fn bump(x0: f64, t0: f64, r_space: f64, r_time: f64) -> Result<Self, WeightError> {
        make_cutoff(x0, t0, r_space, r_time, Profile::BumpSpaceTime, 0.5)
    }

    /// Space-only cut-off with plateau fraction 1/2.
    pub fn spatial(x0: f64, r: f64) -> Result<Self, WeightError> {
        make_cutoff(x0, 0.0, r, 0.0, Profile::BumpSpaceOnly, 0.5)
    }

    pub fn value(&self, x: f64, t: f64) -> f64 {
        self.derivs(x, t).value()
    }

    /// Largest `sup|∂ₓᵏφ|·r^k`, the constant `C` in `|∂ₓᵏφ| ≤ C r^{−k}`.
    pub fn scaled_bound_constant(&self) -> f64 {
        (0..5).map(|k| self.deriv_bounds.x[k] * self.r_space.powi(k as i32)).fold(0.0, f64::max)
    }

    /// `‖φ‖_{C⁴}`: the largest certified derivative bound.
    pub fn c4_norm(&self) -> f64 {
        self.deriv_bounds.x.iter().copied().fold(self.deriv_bounds.t, f64::max)
    }

    fn space_breaks(&self) -> Vec<f64> {
        let r = self.r_space;
        let p = self.plateau_fraction;
        let mut breaks = Vec::new();
        let per_side = 16;
        for i in 0..=per_side {
            breaks.push(self.x0 - r + (1.0 - p) * r * i as f64 / per_side as f64);
        }
        breaks.push(self.x0);
        for i in 0..=per_side {
            breaks.push(self.x0 + p * r + (1.0 - p) * r * i as f64 / per_side as f64);
        }
        breaks
    }
}

impl SpaceTimeWeight for TestFunction {
    fn derivs(&self, x: f64, t: f64) -> WeightDerivs {
        let sx = wrap_offset(x - self.x0) / self.r_space;
        let px = profile(sx, self.plateau_fraction);
        let (pt, dpt) = match self.profile {
            Profile::BumpSpaceOnly => (1.0, 0.0),
            Profile::BumpSpaceTime => {
                let st = (t - self.t0) / self.r_time;
                let d = profile(st, self.plateau_fraction);
                (d[0], d[1] / self.r_time)
            }
        };
        WeightDerivs {
            x: std::array::from_fn(|k| px[k] * pt / self.r_space.powi(k as i32)),
            t: px[0] * dpt,
        }
    }

    fn time_support(&self) -> (f64, f64) {
        match self.profile {
            Profile::BumpSpaceTime => (self.t0 - self.r_time, self.t0 + self.r_time),
            Profile::BumpSpaceOnly => (f64::NEG_INFINITY, f64::INFINITY),
        }
    }

    fn space_rule(&self) -> SpaceRule {
        SpaceRule::from_breaks(&self.space_breaks())
    }
}

/// A finite linear combination `Σ wᵢ φᵢ` of cut-offs.
#[derive(Debug, Clone, PartialEq)]
pub struct Combination {
    terms: Vec<(f64, TestFunction)>,
    breaks: Vec<f64>,
}

impl Combination {
    pub fn new(terms: Vec<(f64, TestFunction)>) -> Result<Self, WeightError> {
        let Some((_, first)) = terms.first() else {
            return Err(WeightError::BadRadius(0.0));
        };
        let anchor = first.x0;
        let mut breaks: Vec<f64> = Vec::new();
        for (_, phi) in &terms {
            let centre = anchor + wrap_offset(phi.x0 - anchor);
            let shifted = TestFunction { x0: centre, ..*phi };
            breaks.extend(shifted.space_breaks());
        }
        breaks.sort_by(f64::total_cmp);
        breaks.dedup_by(|a, b| (*a - *b).abs() < 1e-14);
        if breaks.last().unwrap() - breaks[0] >= 2.0 * std::f64::consts::PI {
            return Err(WeightError::CombinedSupportWraps);
        }
        Ok(Self { terms, breaks })
    }
}

impl SpaceTimeWeight for Combination {
    fn derivs(&self, x: f64, t: f64) -> WeightDerivs {
        let mut out = WeightDerivs { x: [0.0; 5], t: 0.0 };
        for (w, phi) in &self.terms {
            let d = phi.derivs(x, t);
            for k in 0..5 {
                out.x[k] += w * d.x[k];
            }
            out.t += w * d.t;
        }
        out
    }

    fn time_support(&self) -> (f64, f64) {
        self.terms.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), (_, phi)| {
            let (lo, hi) = phi.time_support();
            (a.min(lo), b.max(hi))
        })
    }

    fn space_rule(&self) -> SpaceRule {
        SpaceRule::from_breaks(&self.breaks)
    }
}

/// The three pieces of the local energy inequality at time `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LeiTerms {
    /// `∫₀ᵗ∫ (½(φ_t − φ_xxxx)u² + 2u_x²φ_xx − η(5/3)u_x³φ_x − η u_x²uφ_xx)`.
    pub rhs: f64,
    /// `∫₀ᵗ∫ u_xx² φ`.
    pub dissipation: f64,
    /// `½∫ u(t)² φ(t)`.
    pub final_energy: f64,
}

impl LeiTerms {
    pub fn slack(&self) -> f64 {
        self.rhs - self.final_energy - self.dissipation
    }
}

fn check_lei_weight<S, W>(src: &S, phi: &W) -> Result<(), WeightError>
where
    S: SpaceTimeSamples + ?Sized,
    W: SpaceTimeWeight + ?Sized,
{
    phi.check_nonnegative()?;
    let (a, b) = phi.time_support();
    if a < src.first_time() || b > src.last_time() {
        return Err(WeightError::SupportOutsideDomain);
    }
    Ok(())
}

/// Evaluates the local energy terms for `u − shift`, with the nonlinear
/// terms weighted by `eta` (1 for the surface growth model, 0 for the
/// biharmonic heat flow).
pub fn lei_terms<S, W>(src: &S, phi: &W, t: f64, eta: f64, shift: f64) -> Result<LeiTerms, WeightError>
where
    S: SpaceTimeSamples + ?Sized,
    W: SpaceTimeWeight + ?Sized,
{
    check_lei_weight(src, phi)?;
    let (a, b) = phi.time_support();
    let rule = phi.space_rule();
    let mut terms = LeiTerms { rhs: 0.0, dissipation: 0.0, final_energy: 0.0 };
    let hi = t.min(b);
    if hi > a {
        let time = sampling::time_rule(src.frame_times(), a, hi)?;
        let box_ = sampling::BoxSamples::sample(src, time, &rule);
        for (i, node) in box_.time.nodes.iter().enumerate() {
            let (mut rhs, mut diss) = (0.0, 0.0);
            for ((x, w), v) in box_.xs.iter().zip(&box_.x_weights).zip(box_.row(i)) {
                let d = phi.derivs(*x, node.t);
                let (u, ux, uxx) = (v[0] - shift, v[1], v[2]);
                rhs += w
                    * (0.5 * (d.t - d.x[4]) * u * u + 2.0 * ux * ux * d.x[2]
                        - eta * (5.0 / 3.0) * ux * ux * ux * d.x[1]
                        - eta * ux * ux * u * d.x[2]);
                diss += w * uxx * uxx * d.x[0];
            }
            terms.rhs += node.weight * rhs;
            terms.dissipation += node.weight * diss;
        }
    }
    if t > a && t < b {
        let node = sampling::locate(src.frame_times(), t);
        let mut vals = vec![[0.0; 3]; rule.xs.len()];
        sampling::eval_node(src, &node, &rule.xs, &mut vals, &mut Vec::new());
        terms.final_energy = 0.5
            * rule
                .xs
                .iter()
                .zip(&rule.ws)
                .zip(&vals)
                .map(|((x, w), v)| w * (v[0] - shift).powi(2) * phi.derivs(*x, t).value())
                .sum::<f64>();
    }
    Ok(terms)
}

fn eta_of(traj: &Trajectory) -> f64 {
    if traj.config().nonlinear {
        1.0
    } else {
        0.0
    }
}

/// Right-hand side minus left-hand side of the local energy inequality.
pub fn lei_slack<W: SpaceTimeWeight + ?Sized>(traj: &Trajectory, phi: &W, t: f64) -> Result<f64, WeightError> {
    Ok(lei_terms(traj, phi, t, eta_of(traj), 0.0)?.slack())
}

/// `slack(u−K) − slack(u)` predicted from the weak formulation:
///
/// ```text
/// K∫u(t)φ(t) − K∫∫(φ_t − φ_xxxx)u + ηK∫∫u_x²φ_xx + ½K²(∫∫(φ_t − φ_xxxx) − ∫φ(t))
/// ```
pub fn shift_correction<S, W>(src: &S, phi: &W, t: f64, eta: f64, k: f64) -> Result<f64, WeightError>
where
    S: SpaceTimeSamples + ?Sized,
    W: SpaceTimeWeight + ?Sized,
{
    let (a, b) = phi.time_support();
    let rule = phi.space_rule();
    let mut total = 0.0;
    let hi = t.min(b);
    if hi > a {
        let time = sampling::time_rule(src.frame_times(), a, hi)?;
        let box_ = sampling::BoxSamples::sample(src, time, &rule);
        for (i, node) in box_.time.nodes.iter().enumerate() {
            let mut acc = 0.0;
            for ((x, w), v) in box_.xs.iter().zip(&box_.x_weights).zip(box_.row(i)) {
                let d = phi.derivs(*x, node.t);
                let lin = d.t - d.x[4];
                acc += w * (-k * lin * v[0] + eta * k * v[1] * v[1] * d.x[2] + 0.5 * k * k * lin);
            }
            total += node.weight * acc;
        }
    }
    if t > a && t < b {
        let node = sampling::locate(src.frame_times(), t);
        let mut vals = vec![[0.0; 3]; rule.xs.len()];
        sampling::eval_node(src, &node, &rule.xs, &mut vals, &mut Vec::new());
        total += rule
            .xs
            .iter()
            .zip(&rule.ws)
            .zip(&vals)
            .map(|((x, w), v)| {
                let p = phi.derivs(*x, t).value();
                w * (k * v[0] * p - 0.5 * k * k * p)
            })
            .sum::<f64>();
    }
    Ok(total)
}

/// `|slack(u−K) − (slack(u) + correction(K))|`, an algebraic identity at the
/// quadrature level.
pub fn lei_shift_consistency<W: SpaceTimeWeight + ?Sized>(
    traj: &Trajectory,
    phi: &W,
    t: f64,
    k: f64,
) -> Result<f64, WeightError> {
    let eta = eta_of(traj);
    let shifted = lei_terms(traj, phi, t, eta, k)?.slack();
    let base = lei_terms(traj, phi, t, eta, 0.0)?.slack();
    let corr = shift_correction(traj, phi, t, eta, k)?;
    Ok((shifted - (base + corr)).abs())
}
