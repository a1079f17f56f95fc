//! Suspect-point detection through the ε-regularity criteria, and the
//! counting and covering arithmetic used to bound the size of singular sets.
//!
//! Cylinder geometry is parabolic throughout: `Q(z, r)` has half-width `r`
//! in space and `r⁴` in time, and two open cylinders meet iff
//! `|Δx| < r₁ + r₂` and `|Δt| < r₁⁴ + r₂⁴`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cylinder::{a_quantity, e_quantity, y_quantity, CylinderError, ParabolicCylinder};
use crate::field::wrap_offset;
use crate::sampling::{SamplingError, SpaceTimeSamples};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SingularError {
    #[error("invalid thresholds: {0}")]
    BadThresholds(String),
    #[error("need at least two positive, strictly decreasing deltas")]
    BadDeltas,
    #[error(transparent)]
    Cylinder(#[from] CylinderError),
}

/// Thresholds and radii for the ε-criteria.
///
/// `theta` and `beta` are not used by the classifiers; they record the decay
/// factor and Hölder exponent a scan is meant to be read against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Thresholds {
    pub eps0: f64,
    pub eps1: f64,
    /// Must exceed `2 max u²` for smooth data to count as regular, since
    /// `r⁻¹∫_{B_r} u² → 2u(z)²`.
    pub eps2: f64,
    #[serde(rename = "R0")]
    pub r0: f64,
    pub r_scan: Vec<f64>,
    pub theta: f64,
    pub beta: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            eps0: 1e-3,
            eps1: 1e-2,
            eps2: 0.05,
            r0: 0.9,
            r_scan: vec![0.8, 0.6, 0.4, 0.3, 0.2],
            theta: 0.2,
            beta: 0.5,
        }
    }
}

impl Thresholds {
    pub fn validate(&self) -> Result<(), SingularError> {
        let bad = |m: &str| Err(SingularError::BadThresholds(m.to_string()));
        if !(self.eps0 > 0.0 && self.eps1 > 0.0 && self.eps2 > 0.0) {
            return bad("eps0, eps1, eps2 must be positive");
        }
        if !(self.r0 > 0.0 && self.r0 < 1.0) {
            return bad("R0 must lie in (0, 1)");
        }
        if self.r_scan.is_empty() || self.r_scan.iter().any(|r| !(*r > 0.0)) {
            return bad("r_scan must be a nonempty list of positive radii");
        }
        if self.r_scan.windows(2).any(|w| w[1] >= w[0]) {
            return bad("r_scan must be strictly decreasing");
        }
        if self.r_scan[0] >= self.r0 {
            return bad("largest scanned radius must be below R0");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Criterion {
    /// `r⁻² ∫_Q |u_x|³ < ε₀` at some scanned radius.
    #[serde(rename = "Y_criterion")]
    Y,
    /// `limsup r⁻¹ ∫_Q u_xx² < ε₁`.
    #[serde(rename = "E_criterion")]
    E,
    /// `limsup max_t r⁻¹ ∫_{B_r} u² < ε₂`.
    #[serde(rename = "A_criterion")]
    A,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    Regular,
    Suspect,
    /// No scanned radius gives a cylinder inside the sampled time range.
    Unclassifiable,
}

/// Classification of one point together with the quantity that decided it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointVerdict {
    pub class: Classification,
    /// Criterion value at `r` (the smallest admissible radius for suspects).
    pub value: f64,
    pub r: f64,
}

fn is_resolution_error(e: &CylinderError) -> bool {
    matches!(
        e,
        CylinderError::Sampling(SamplingError::TooFewFrames { .. } | SamplingError::OutsideTimeRange { .. })
    )
}

/// Scanned radii (ascending) below `R0` whose cylinder at `(x, t)` can be resolved.
fn admissible_radii<S: SpaceTimeSamples + ?Sized>(src: &S, t: f64, th: &Thresholds) -> Vec<f64> {
    let times = src.frame_times();
    let (first, last) = (times[0], times[times.len() - 1]);
    let mut out: Vec<f64> = th
        .r_scan
        .iter()
        .copied()
        .filter(|&r| r < th.r0)
        .filter(|&r| {
            let h = r.powi(4);
            if t - h < first || t + h > last {
                return false;
            }
            let inside = times.iter().filter(|&&s| s > t - h && s < t + h).count();
            inside >= crate::sampling::MIN_FRAMES_IN_WINDOW
        })
        .collect();
    out.reverse();
    out
}

fn quantity<S: SpaceTimeSamples + ?Sized>(
    src: &S,
    criterion: Criterion,
    q: &ParabolicCylinder,
) -> Result<f64, CylinderError> {
    match criterion {
        Criterion::Y => y_quantity(src, q),
        Criterion::E => e_quantity(src, q),
        Criterion::A => a_quantity(src, q),
    }
}

pub fn classify_point<S: SpaceTimeSamples + ?Sized>(
    src: &S,
    x: f64,
    t: f64,
    criterion: Criterion,
    th: &Thresholds,
) -> Result<PointVerdict, SingularError> {
    let radii = admissible_radii(src, t, th);
    if radii.is_empty() {
        return Ok(PointVerdict { class: Classification::Unclassifiable, value: f64::NAN, r: f64::NAN });
    }
    let eval = |r: f64| -> Result<f64, SingularError> {
        let q = ParabolicCylinder::new(x, t, r)?;
        Ok(quantity(src, criterion, &q)?)
    };
    match criterion {
        Criterion::Y => {
            let mut smallest = None;
            for &r in &radii {
                let y = eval(r)?;
                if y < th.eps0 {
                    return Ok(PointVerdict { class: Classification::Regular, value: y, r });
                }
                smallest.get_or_insert((y, r));
            }
            let (value, r) = smallest.expect("nonempty");
            Ok(PointVerdict { class: Classification::Suspect, value, r })
        }
        Criterion::E | Criterion::A => {
            if radii.len() < 2 {
                return Ok(PointVerdict { class: Classification::Unclassifiable, value: f64::NAN, r: f64::NAN });
            }
            let eps = if criterion == Criterion::E { th.eps1 } else { th.eps2 };
            let v0 = eval(radii[0])?;
            let v1 = eval(radii[1])?;
            let proxy = v0.max(v1);
            let class = if proxy < eps { Classification::Regular } else { Classification::Suspect };
            Ok(PointVerdict { class, value: v0, r: radii[0] })
        }
    }
}

pub fn classify_point_y<S: SpaceTimeSamples + ?Sized>(
    src: &S,
    x: f64,
    t: f64,
    th: &Thresholds,
) -> Result<Classification, SingularError> {
    Ok(classify_point(src, x, t, Criterion::Y, th)?.class)
}

pub fn classify_point_e<S: SpaceTimeSamples + ?Sized>(
    src: &S,
    x: f64,
    t: f64,
    th: &Thresholds,
) -> Result<Classification, SingularError> {
    Ok(classify_point(src, x, t, Criterion::E, th)?.class)
}

pub fn classify_point_a<S: SpaceTimeSamples + ?Sized>(
    src: &S,
    x: f64,
    t: f64,
    th: &Thresholds,
) -> Result<Classification, SingularError> {
    Ok(classify_point(src, x, t, Criterion::A, th)?.class)
}

/// Tensor grid of scan points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanGrid {
    pub xs: Vec<f64>,
    pub ts: Vec<f64>,
}

impl ScanGrid {
    /// `nx` equispaced points on the torus and `nt` equispaced interior times.
    pub fn uniform<S: SpaceTimeSamples + ?Sized>(src: &S, nx: usize, nt: usize) -> Self {
        let (a, b) = (src.first_time(), src.last_time());
        Self {
            xs: (0..nx).map(|i| 2.0 * std::f64::consts::PI * i as f64 / nx as f64).collect(),
            ts: (0..nt).map(|j| a + (b - a) * (j as f64 + 0.5) / nt as f64).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuspectPoint {
    pub x: f64,
    pub t: f64,
    pub value: f64,
    pub r: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuspectSet {
    pub points: Vec<SuspectPoint>,
    pub criterion: Criterion,
    pub thresholds: Thresholds,
}

impl SuspectSet {
    pub fn coords(&self) -> Vec<(f64, f64)> {
        self.points.iter().map(|p| (p.x, p.t)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanResult {
    pub suspects: SuspectSet,
    pub regular: usize,
    pub unclassifiable: usize,
}

/// Classifies every grid point in parallel.
pub fn scan<S: SpaceTimeSamples + ?Sized>(
    src: &S,
    criterion: Criterion,
    th: &Thresholds,
    grid: &ScanGrid,
) -> Result<ScanResult, SingularError> {
    th.validate()?;
    let pts: Vec<(f64, f64)> = grid.ts.iter().flat_map(|&t| grid.xs.iter().map(move |&x| (x, t))).collect();
    let verdicts: Vec<(f64, f64, PointVerdict)> = pts
        .par_iter()
        .map(|&(x, t)| classify_point(src, x, t, criterion, th).map(|v| (x, t, v)))
        .collect::<Result<_, _>>()?;
    let mut points = Vec::new();
    let (mut regular, mut unclassifiable) = (0, 0);
    for (x, t, v) in verdicts {
        match v.class {
            Classification::Regular => regular += 1,
            Classification::Unclassifiable => unclassifiable += 1,
            Classification::Suspect => points.push(SuspectPoint { x, t, value: v.value, r: v.r }),
        }
    }
    Ok(ScanResult { suspects: SuspectSet { points, criterion, thresholds: th.clone() }, regular, unclassifiable })
}

/// Area of the Euclidean `delta`-neighbourhood of `points`, counted on square
/// pixels of side `pixel` (pixel centres at `(i + ½)·pixel`).
pub fn neighbourhood_area(points: &[(f64, f64)], delta: f64, pixel: f64) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    let mut by_t: Vec<(f64, f64)> = points.to_vec();
    by_t.sort_by(|a, b| a.1.total_cmp(&b.1));
    let t_min = by_t[0].1 - delta;
    let t_max = by_t[by_t.len() - 1].1 + delta;
    let row_lo = (t_min / pixel - 0.5).floor() as i64;
    let row_hi = (t_max / pixel - 0.5).ceil() as i64;
    let mut count: u64 = 0;
    let mut spans: Vec<(f64, f64)> = Vec::new();
    for row in row_lo..=row_hi {
        let tc = (row as f64 + 0.5) * pixel;
        let lo = by_t.partition_point(|p| p.1 <= tc - delta);
        let hi = by_t.partition_point(|p| p.1 < tc + delta);
        spans.clear();
        for p in &by_t[lo..hi] {
            let dt = p.1 - tc;
            let half = (delta * delta - dt * dt).sqrt();
            spans.push((p.0 - half, p.0 + half));
        }
        if spans.is_empty() {
            continue;
        }
        spans.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut cur = spans[0];
        let mut merged = Vec::new();
        for &s in &spans[1..] {
            if s.0 <= cur.1 {
                cur.1 = cur.1.max(s.1);
            } else {
                merged.push(cur);
                cur = s;
            }
        }
        merged.push(cur);
        // Pixel centres in each merged span; spans are disjoint and sorted,
        // so no centre is counted twice.
        for (a, b) in merged {
            let first = (a / pixel - 0.5).ceil() as i64;
            let last = (b / pixel - 0.5).floor() as i64;
            if last >= first {
                count += (last - first + 1) as u64;
            }
        }
    }
    count as f64 * pixel * pixel
}

/// Pixels per `delta` in each direction.
pub const PIXELS_PER_DELTA: f64 = 8.0;

/// Box-counting dimension in the plane: `2 − slope` of the least-squares fit
/// of `log |K_δ|` against `log δ`. The empty set has dimension 0.
pub fn box_dimension(points: &[(f64, f64)], deltas: &[f64]) -> Result<f64, SingularError> {
    if deltas.len() < 2 || deltas.iter().any(|d| !(*d > 0.0)) || deltas.windows(2).any(|w| w[1] >= w[0]) {
        return Err(SingularError::BadDeltas);
    }
    if points.is_empty() {
        return Ok(0.0);
    }
    let samples: Vec<(f64, f64)> = deltas
        .par_iter()
        .map(|&d| (d.ln(), neighbourhood_area(points, d, d / PIXELS_PER_DELTA).ln()))
        .collect();
    Ok(2.0 - least_squares_slope(&samples).0)
}

/// Slope and intercept of the least-squares line through `(x, y)` pairs.
pub fn least_squares_slope(pts: &[(f64, f64)]) -> (f64, f64) {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

fn disjoint(a: (f64, f64), ra: f64, b: (f64, f64), rb: f64) -> bool {
    wrap_offset(a.0 - b.0).abs() >= ra + rb || (a.1 - b.1).abs() >= ra.powi(4) + rb.powi(4)
}

fn greedy_packing(points: &[(f64, f64)], r: f64) -> Vec<(f64, f64)> {
    let mut chosen: Vec<(f64, f64)> = Vec::new();
    for &p in points {
        if chosen.iter().all(|&c| disjoint(p, r, c, r)) {
            chosen.push(p);
        }
    }
    chosen
}

fn in_cylinder(p: (f64, f64), c: (f64, f64), r: f64) -> bool {
    wrap_offset(p.0 - c.0).abs() < r && (p.1 - c.1).abs() < r.powi(4)
}

/// Centres of a greedy cover of `points` by cylinders of radius `r`.
pub fn greedy_cover(points: &[(f64, f64)], r: f64) -> Vec<(f64, f64)> {
    let mut centres: Vec<(f64, f64)> = Vec::new();
    for &p in points {
        if !centres.iter().any(|&c| in_cylinder(p, c, r)) {
            centres.push(p);
        }
    }
    centres
}

/// `(M_r, N_r)`: size of a maximal disjoint family of `r`-cylinders centred
/// at set points, and size of a greedy `r`-cover.
///
/// The centres of a greedy `2r`-cover are pairwise at parabolic distance at
/// least `2r`, so their `r`-cylinders are disjoint; `M_r` is the larger of
/// that family and the plain greedy packing, which gives `N_{2r} ≤ M_r`.
pub fn cylinder_counts(points: &[(f64, f64)], r: f64) -> (usize, usize) {
    let packing = greedy_packing(points, r);
    let cover = greedy_cover(points, r);
    let double = greedy_cover(points, 2.0 * r);
    #[cfg(debug_assertions)]
    {
        for (i, a) in packing.iter().enumerate() {
            for b in &packing[i + 1..] {
                debug_assert!(disjoint(*a, r, *b, r));
            }
        }
        for (i, a) in double.iter().enumerate() {
            for b in &double[i + 1..] {
                debug_assert!(disjoint(*a, r, *b, r));
            }
        }
        for &p in points {
            debug_assert!(cover.iter().any(|&c| in_cylinder(p, c, r)));
        }
    }
    (packing.len().max(double.len()), cover.len())
}

/// Greedy Vitali selection: largest radii first, keep a cylinder when it
/// misses every cylinder kept so far.
pub fn vitali_disjointify(cylinders: &[ParabolicCylinder]) -> Vec<ParabolicCylinder> {
    let mut order: Vec<&ParabolicCylinder> = cylinders.iter().collect();
    order.sort_by(|a, b| b.r.total_cmp(&a.r));
    let mut chosen: Vec<ParabolicCylinder> = Vec::new();
    for q in order {
        if chosen.iter().all(|c| disjoint((q.x0, q.t0), q.r, (c.x0, c.t0), c.r)) {
            chosen.push(*q);
        }
    }
    chosen
}

/// Whether `inner ⊂ Q(outer.z, 5·outer.r)`.
pub fn inside_five_dilate(inner: &ParabolicCylinder, outer: &ParabolicCylinder) -> bool {
    let big = 5.0 * outer.r;
    wrap_offset(inner.x0 - outer.x0).abs() + inner.r <= big * (1.0 + 1e-12)
        && (inner.t0 - outer.t0).abs() + inner.r.powi(4) <= big.powi(4) * (1.0 + 1e-12)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct P1Estimate {
    /// `Σ rᵢ` over the selected cylinders `Q(zᵢ, rᵢ)` (their `rᵢ/5` shrinks are disjoint).
    pub sum: f64,
    pub selected: Vec<ParabolicCylinder>,
    /// Suspects without an admissible radius, treated as regular.
    pub reclassified: Vec<(f64, f64)>,
    pub warnings: Vec<String>,
}

/// Upper estimate for `P¹_δ` of an E-criterion suspect set.
///
/// For each suspect, takes the largest scanned `ρ` with `5ρ < delta` and
/// `ρ⁻¹∫_{Q(z, ρ)} u_xx² > eps1`, Vitali-selects among the `Q(z, ρ)`, and
/// sums `5ρ` over the selection.
pub fn hausdorff_p1_upper<S: SpaceTimeSamples + ?Sized>(
    src: &S,
    suspects: &SuspectSet,
    eps1: f64,
    delta: f64,
) -> Result<P1Estimate, SingularError> {
    let mut radii: Vec<f64> = suspects.thresholds.r_scan.clone();
    radii.sort_by(|a, b| b.total_cmp(a));
    let picks: Vec<Result<Option<ParabolicCylinder>, SingularError>> = suspects
        .points
        .par_iter()
        .map(|p| {
            for &rho in radii.iter().filter(|&&rho| 5.0 * rho < delta) {
                let q = ParabolicCylinder::new(p.x, p.t, rho)?;
                match e_quantity(src, &q) {
                    Ok(e) if e > eps1 => return Ok(Some(q)),
                    Ok(_) => {}
                    Err(e) if is_resolution_error(&e) => {}
                    Err(e) => return Err(e.into()),
                }
            }
            Ok(None)
        })
        .collect();
    let mut small = Vec::new();
    let mut reclassified = Vec::new();
    let mut warnings = Vec::new();
    for (p, pick) in suspects.points.iter().zip(picks) {
        match pick? {
            Some(q) => small.push(q),
            None => {
                warnings.push(format!(
                    "suspect at (x = {:.6}, t = {:.6}) has no scanned radius below delta/5 exceeding eps1; treated as regular",
                    p.x, p.t
                ));
                reclassified.push((p.x, p.t));
            }
        }
    }
    let chosen = vitali_disjointify(&small);
    let selected: Vec<ParabolicCylinder> = chosen
        .iter()
        .map(|q| ParabolicCylinder { x0: q.x0, t0: q.t0, r: 5.0 * q.r })
        .collect();
    Ok(P1Estimate { sum: selected.iter().map(|q| q.r).sum(), selected, reclassified, warnings })
}

/// Pixel area of the `r⁴`-neighbourhood against the covering bound `2⁷ r⁵ N_r`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChainCheck {
    pub r: f64,
    pub area: f64,
    pub n_r: usize,
    pub bound: f64,
    pub holds: bool,
}

pub fn minkowski_chain_check(points: &[(f64, f64)], r: f64) -> ChainCheck {
    let delta = r.powi(4);
    let area = neighbourhood_area(points, delta, delta / PIXELS_PER_DELTA);
    let (_, n_r) = cylinder_counts(points, r);
    let bound = 128.0 * r.powi(5) * n_r as f64;
    // One pixel row and column of slack per covering cylinder.
    let pixel = delta / PIXELS_PER_DELTA;
    let slack = n_r as f64 * pixel * (2.0 * (r + delta) + 4.0 * delta + 2.0 * pixel);
    ChainCheck { r, area, n_r, bound, holds: area <= bound + slack }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct CountRow {
    pub r: f64,
    pub M_r: usize,
    pub N_r: usize,
}

/// Machine-readable summary of a scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularityReport {
    pub criterion: Criterion,
    pub thresholds: Thresholds,
    pub grid: ScanGrid,
    pub suspect_points: Vec<SuspectPoint>,
    pub regular: usize,
    pub unclassifiable: usize,
    pub counts: Vec<CountRow>,
    pub dimension_estimate: f64,
    pub p1_upper: Option<f64>,
    pub warnings: Vec<String>,
}

/// Scans `grid`, then fills in counts over `r_scan`, a box-dimension
/// estimate over `deltas` and, for the E-criterion, a `P¹` estimate with
/// `delta = R0`.
pub fn regularity_report<S: SpaceTimeSamples + ?Sized>(
    src: &S,
    criterion: Criterion,
    th: &Thresholds,
    grid: &ScanGrid,
    deltas: &[f64],
) -> Result<RegularityReport, SingularError> {
    let res = scan(src, criterion, th, grid)?;
    let pts = res.suspects.coords();
    let counts = th
        .r_scan
        .iter()
        .map(|&r| {
            let (m, n) = cylinder_counts(&pts, r);
            CountRow { r, M_r: m, N_r: n }
        })
        .collect();
    let dimension_estimate = box_dimension(&pts, deltas)?;
    let mut warnings = Vec::new();
    if res.unclassifiable > 0 {
        warnings.push(format!("{} grid points had no admissible radius", res.unclassifiable));
    }
    let p1_upper = if criterion == Criterion::E {
        let est = hausdorff_p1_upper(src, &res.suspects, th.eps1, th.r0)?;
        warnings.extend(est.warnings);
        Some(est.sum)
    } else {
        None
    };
    Ok(RegularityReport {
        criterion,
        thresholds: th.clone(),
        grid: grid.clone(),
        suspect_points: res.suspects.points,
        regular: res.regular,
        unclassifiable: res.unclassifiable,
        counts,
        dimension_estimate,
        p1_upper,
        warnings,
    })
}
