//! Periodic scalar fields on the torus `[0, 2π)`.
//!
//! A [`SpectralField`] keeps both representations of a real function:
//! `n` equispaced samples `f(2πj/n)` and the Fourier coefficients
//! `f̂(k) = (1/2π) ∫ f e^{-ikx} dx` for `k = -n/2 .. n/2-1`, stored in FFT
//! order (index `j` holds `k = j` for `j < n/2`, `k = j - n` otherwise).

use std::cell::RefCell;
use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Smallest admissible grid.
pub const MIN_GRID: usize = 16;

/// Highest derivative order used by the model equations.
pub const MAX_DERIVATIVE_ORDER: u32 = 4;

/// Constant `c` in `‖f‖_{Ḣˢ} = c ‖∂ₓˢ f‖_{L²}` for integer `s` and mean-zero `f`.
///
/// Norms carry the Parseval factor `2π`, so the dotted seminorm of order 0
/// is the L² norm and `c = 1`.
pub const SEMINORM_DERIVATIVE_CONSTANT: f64 = 1.0;

/// Tolerance below which `|f̂(0)|` counts as zero mean.
pub const MEAN_ZERO_TOL: f64 = 1e-13;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FieldError {
    #[error("grid size {0} is not a power of two >= {MIN_GRID}")]
    BadGridSize(usize),
    #[error("derivative order {0} exceeds the supported maximum of {MAX_DERIVATIVE_ORDER}")]
    DerivativeOrder(u32),
    #[error("field contains non-finite values")]
    NonFinite,
    #[error("grid sizes differ: {0} vs {1}")]
    GridMismatch(usize, usize),
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn forward_plan(n: usize) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft_forward(n))
}

fn inverse_plan(n: usize) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft_inverse(n))
}

fn check_grid(n: usize) -> Result<(), FieldError> {
    if n >= MIN_GRID && n.is_power_of_two() {
        Ok(())
    } else {
        Err(FieldError::BadGridSize(n))
    }
}

/// Signed wavenumber stored at FFT index `j` of an `n`-point transform.
#[inline]
pub fn wavenumber(j: usize, n: usize) -> i64 {
    if j < n / 2 {
        j as i64
    } else {
        j as i64 - n as i64
    }
}

/// Largest wavenumber kept by the 2/3 truncation on an `n`-point grid.
///
/// Products of two fields band-limited to `|k| <= K` alias only onto
/// `|k| >= n - 2K > K`, so the retained modes of the product are exact.
#[inline]
pub fn dealias_cutoff(n: usize) -> i64 {
    ((n - 1) / 3) as i64
}

/// Sobolev order and whether the `k = 0` mode is dropped.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormOrder {
    pub s: f64,
    pub dotted: bool,
}

impl NormOrder {
    pub fn dotted(s: f64) -> Self {
        Self { s, dotted: true }
    }

    pub fn full(s: f64) -> Self {
        Self { s, dotted: false }
    }

    fn weight(&self, k: i64) -> f64 {
        let pow = (k.unsigned_abs() as f64).powf(2.0 * self.s);
        if self.dotted {
            if k == 0 {
                0.0
            } else {
                pow
            }
        } else {
            1.0 + pow
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralField {
    samples: Vec<f64>,
    coeffs: Vec<Complex64>,
}

impl SpectralField {
    pub fn zeros(n: usize) -> Result<Self, FieldError> {
        check_grid(n)?;
        Ok(Self { samples: vec![0.0; n], coeffs: vec![Complex64::new(0.0, 0.0); n] })
    }

    pub fn from_samples(samples: Vec<f64>) -> Result<Self, FieldError> {
        let n = samples.len();
        check_grid(n)?;
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(FieldError::NonFinite);
        }
        let mut buf: Vec<Complex64> = samples.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        forward_plan(n).process(&mut buf);
        let inv = 1.0 / n as f64;
        for c in buf.iter_mut() {
            *c *= inv;
        }
        // The Nyquist coefficient of a real signal is real.
        buf[n / 2].im = 0.0;
        Ok(Self { samples, coeffs: buf })
    }

    /// Builds a field from coefficients in FFT order.
    ///
    /// The input is projected onto Hermitian-symmetric coefficients; the
    /// stored coefficients are kept as given otherwise, so a zero `k = 0`
    /// entry stays exactly zero.
    pub fn from_coeffs(coeffs: Vec<Complex64>) -> Result<Self, FieldError> {
        let n = coeffs.len();
        check_grid(n)?;
        if coeffs.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(FieldError::NonFinite);
        }
        let mut coeffs = coeffs;
        coeffs[0].im = 0.0;
        coeffs[n / 2].im = 0.0;
        for j in 1..n / 2 {
            let avg = 0.5 * (coeffs[j] + coeffs[n - j].conj());
            coeffs[j] = avg;
            coeffs[n - j] = avg.conj();
        }
        let mut buf = coeffs.clone();
        inverse_plan(n).process(&mut buf);
        let samples: Vec<f64> = buf.iter().map(|c| c.re).collect();
        Ok(Self { samples, coeffs })
    }

    /// Samples `f` on the `n`-point grid.
    pub fn from_fn(n: usize, f: impl Fn(f64) -> f64) -> Result<Self, FieldError> {
        check_grid(n)?;
        let h = 2.0 * PI / n as f64;
        Self::from_samples((0..n).map(|j| f(j as f64 * h)).collect())
    }

    pub fn n_grid(&self) -> usize {
        self.samples.len()
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    /// Grid abscissae `2πj/n`.
    pub fn grid(&self) -> Vec<f64> {
        let h = self.spacing();
        (0..self.n_grid()).map(|j| j as f64 * h).collect()
    }

    pub fn spacing(&self) -> f64 {
        2.0 * PI / self.n_grid() as f64
    }

    /// Spatial mean, i.e. `f̂(0)`.
    pub fn mean(&self) -> f64 {
        self.coeffs[0].re
    }

    pub fn is_mean_zero(&self) -> bool {
        self.coeffs[0].norm() < MEAN_ZERO_TOL
    }

    pub fn is_zero(&self) -> bool {
        self.samples.iter().all(|&v| v == 0.0)
    }

    /// `∂ₓ^order f`, computed as `(ik)^order f̂(k)`.
    ///
    /// For odd orders the Nyquist mode is dropped: it has no real derivative
    /// representable on the grid.
    pub fn derivative(&self, order: u32) -> Result<SpectralField, FieldError> {
        if order > MAX_DERIVATIVE_ORDER {
            return Err(FieldError::DerivativeOrder(order));
        }
        if order == 0 {
            return Ok(self.clone());
        }
        let n = self.n_grid();
        let coeffs = self
            .coeffs
            .iter()
            .enumerate()
            .map(|(j, &c)| {
                if order % 2 == 1 && j == n / 2 {
                    return Complex64::new(0.0, 0.0);
                }
                c * ik_pow(wavenumber(j, n), order)
            })
            .collect();
        SpectralField::from_coeffs(coeffs)
    }

    /// `(2π Σ w(k) |f̂(k)|²)^{1/2}` with `w = |k|^{2s}` (dotted) or `1 + |k|^{2s}`.
    pub fn sobolev_norm(&self, ord: NormOrder) -> f64 {
        let n = self.n_grid();
        let sum: f64 = self
            .coeffs
            .iter()
            .enumerate()
            .map(|(j, c)| ord.weight(wavenumber(j, n)) * c.norm_sqr())
            .sum();
        (2.0 * PI * sum).sqrt()
    }

    pub fn l2_norm(&self) -> f64 {
        (2.0 * PI * self.coeffs.iter().map(|c| c.norm_sqr()).sum::<f64>()).sqrt()
    }

    /// `‖f‖²_{L²}` via Parseval.
    pub fn energy(&self) -> f64 {
        2.0 * PI * self.coeffs.iter().map(|c| c.norm_sqr()).sum::<f64>()
    }

    /// `‖f‖^θ_{H^{s1}} ‖f‖^{1-θ}_{H^{s2}} − ‖f‖_{H^s}` with `s = θ s1 + (1−θ) s2`.
    ///
    /// Nonnegative up to roundoff by Hölder's inequality on the Fourier side.
    pub fn interpolation_gap(&self, s1: f64, s2: f64, theta: f64) -> f64 {
        if self.is_zero() {
            return 0.0;
        }
        let s = theta * s1 + (1.0 - theta) * s2;
        let n1 = self.sobolev_norm(NormOrder::full(s1));
        let n2 = self.sobolev_norm(NormOrder::full(s2));
        let ns = self.sobolev_norm(NormOrder::full(s));
        n1.powf(theta) * n2.powf(1.0 - theta) - ns
    }

    /// `∂ₓₓ((∂ₓ f)²)`, with the 2/3 rule applied to `∂ₓ f` and to the product.
    pub fn sgm_nonlinearity(&self) -> SpectralField {
        self.quadratic_term(true)
    }

    /// Like [`Self::sgm_nonlinearity`], optionally skipping the truncation.
    pub fn quadratic_term(&self, dealias: bool) -> SpectralField {
        let n = self.n_grid();
        let cut = dealias_cutoff(n);
        let keep = |j: usize| !dealias || wavenumber(j, n).abs() <= cut;
        let mut slope: Vec<Complex64> = self
            .coeffs
            .iter()
            .enumerate()
            .map(|(j, &c)| {
                if j == n / 2 || !keep(j) {
                    Complex64::new(0.0, 0.0)
                } else {
                    c * Complex64::new(0.0, wavenumber(j, n) as f64)
                }
            })
            .collect();
        inverse_plan(n).process(&mut slope);
        let mut sq: Vec<Complex64> = slope.iter().map(|c| Complex64::new(c.re * c.re, 0.0)).collect();
        forward_plan(n).process(&mut sq);
        let inv = 1.0 / n as f64;
        let coeffs = sq
            .iter()
            .enumerate()
            .map(|(j, &c)| {
                if !keep(j) {
                    return Complex64::new(0.0, 0.0);
                }
                let k = wavenumber(j, n) as f64;
                c * (-k * k * inv)
            })
            .collect();
        SpectralField::from_coeffs(coeffs).expect("grid already validated")
    }

    /// Trigonometric interpolant and its first two derivatives at `x`.
    pub fn eval(&self, x: f64) -> [f64; 3] {
        let mut out = [[0.0; 3]];
        self.eval_many(&[x], &mut out);
        out[0]
    }

    /// Evaluates `(f, f_x, f_xx)` of the trigonometric interpolant at every
    /// point of `xs`. The Nyquist mode follows the conventions of
    /// [`Self::derivative`].
    pub fn eval_many(&self, xs: &[f64], out: &mut [[f64; 3]]) {
        let n = self.n_grid();
        let half = n / 2;
        let nyq = self.coeffs[half].re;
        for (x, o) in xs.iter().zip(out.iter_mut()) {
            let step = Complex64::from_polar(1.0, *x);
            let mut phase = step;
            let (mut v, mut vx, mut vxx) = (self.coeffs[0].re, 0.0, 0.0);
            for k in 1..half {
                let z = self.coeffs[k] * phase;
                let kf = k as f64;
                v += 2.0 * z.re;
                vx -= 2.0 * kf * z.im;
                vxx -= 2.0 * kf * kf * z.re;
                phase *= step;
            }
            let hf = half as f64;
            let c = (hf * x).cos();
            v += nyq * c;
            vxx -= hf * hf * nyq * c;
            *o = [v, vx, vxx];
        }
    }

    pub fn scaled(&self, a: f64) -> SpectralField {
        SpectralField {
            samples: self.samples.iter().map(|v| v * a).collect(),
            coeffs: self.coeffs.iter().map(|c| c * a).collect(),
        }
    }

    /// `self + a·other`.
    pub fn axpy(&self, a: f64, other: &SpectralField) -> Result<SpectralField, FieldError> {
        if self.n_grid() != other.n_grid() {
            return Err(FieldError::GridMismatch(self.n_grid(), other.n_grid()));
        }
        Ok(SpectralField {
            samples: self.samples.iter().zip(&other.samples).map(|(x, y)| x + a * y).collect(),
            coeffs: self.coeffs.iter().zip(&other.coeffs).map(|(x, y)| x + y * a).collect(),
        })
    }

    /// `x ↦ f(x − shift)`. Exact for fields with a vanishing Nyquist mode;
    /// otherwise that mode keeps only its cosine part.
    pub fn shifted(&self, shift: f64) -> SpectralField {
        let n = self.n_grid();
        let coeffs = self
            .coeffs
            .iter()
            .enumerate()
            .map(|(j, &c)| {
                let k = wavenumber(j, n) as f64;
                if j == n / 2 {
                    c * (k * shift).cos()
                } else {
                    c * Complex64::from_polar(1.0, -k * shift)
                }
            })
            .collect();
        SpectralField::from_coeffs(coeffs).expect("grid already validated")
    }

    /// Spectral zero-padding or truncation onto an `n_new`-point grid.
    pub fn resampled(&self, n_new: usize) -> Result<SpectralField, FieldError> {
        check_grid(n_new)?;
        let n = self.n_grid();
        let mut coeffs = vec![Complex64::new(0.0, 0.0); n_new];
        let kmax = (n.min(n_new) / 2) as i64;
        for (j, &c) in self.coeffs.iter().enumerate() {
            let k = wavenumber(j, n);
            if k.abs() >= kmax {
                continue;
            }
            let idx = if k >= 0 { k as usize } else { (n_new as i64 + k) as usize };
            coeffs[idx] = c;
        }
        SpectralField::from_coeffs(coeffs)
    }

    /// `x ↦ f(λx)` on a `λn`-point grid.
    pub fn dilated(&self, lambda: usize) -> Result<SpectralField, FieldError> {
        if lambda == 0 {
            return Err(FieldError::BadGridSize(0));
        }
        let n = self.n_grid();
        let n_new = n * lambda;
        check_grid(n_new)?;
        let mut coeffs = vec![Complex64::new(0.0, 0.0); n_new];
        for (j, &c) in self.coeffs.iter().enumerate() {
            let k = wavenumber(j, n) * lambda as i64;
            let idx = if k >= 0 { k as usize } else { (n_new as i64 + k) as usize };
            coeffs[idx] = c;
        }
        SpectralField::from_coeffs(coeffs)
    }

    /// Applies a real multiplier `m(k)` to every coefficient.
    pub fn map_modes(&self, m: impl Fn(i64) -> f64) -> SpectralField {
        let n = self.n_grid();
        let coeffs = self
            .coeffs
            .iter()
            .enumerate()
            .map(|(j, &c)| c * m(wavenumber(j, n)))
            .collect();
        SpectralField::from_coeffs(coeffs).expect("grid already validated")
    }
}

fn ik_pow(k: i64, order: u32) -> Complex64 {
    let kf = k as f64;
    let mag = kf.powi(order as i32);
    match order % 4 {
        0 => Complex64::new(mag, 0.0),
        1 => Complex64::new(0.0, mag),
        2 => Complex64::new(-mag, 0.0),
        _ => Complex64::new(0.0, -mag),
    }
}

/// Wraps `dx` into `(−π, π]`.
#[inline]
pub fn wrap_offset(dx: f64) -> f64 {
    let two_pi = 2.0 * PI;
    let mut d = dx.rem_euclid(two_pi);
    if d > PI {
        d -= two_pi;
    }
    d
}
