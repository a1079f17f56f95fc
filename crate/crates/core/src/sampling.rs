//! Space-time sampling and quadrature shared by the analysis modules.
//!
//! Time integrals use the trapezoid rule over stored frames, with the window
//! end points filled in by linear interpolation between neighbouring frames.
//! Space integrals use composite Gauss–Legendre rules evaluated through the
//! field's trigonometric interpolant.

use std::sync::OnceLock;

use thiserror::Error;

/// Minimum number of frames strictly inside a time window before cylinder
/// integrals are attempted.
pub const MIN_FRAMES_IN_WINDOW: usize = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SamplingError {
    #[error("time window ({lo}, {hi}) leaves the sampled range [{first}, {last}]")]
    OutsideTimeRange { lo: f64, hi: f64, first: f64, last: f64 },
    #[error("only {found} frames inside ({lo}, {hi}); at least {required} needed")]
    TooFewFrames { lo: f64, hi: f64, found: usize, required: usize },
    #[error("empty or reversed interval ({0}, {1})")]
    EmptyInterval(f64, f64),
}

/// A real space-time field known on a finite list of time frames and
/// evaluable anywhere in space on each frame.
pub trait SpaceTimeSamples: Sync {
    /// Strictly increasing frame times.
    fn frame_times(&self) -> &[f64];

    /// Writes `(u, u_x, u_xx)` at each `xs[i]` on frame `frame`.
    fn eval_frame(&self, frame: usize, xs: &[f64], out: &mut [[f64; 3]]);

    fn first_time(&self) -> f64 {
        self.frame_times()[0]
    }

    fn last_time(&self) -> f64 {
        *self.frame_times().last().expect("at least one frame")
    }
}

/// A field given by a closure `(x, t) ↦ (u, u_x, u_xx)` and a list of frame
/// times at which the analysis samples it.
pub struct AnalyticField<F> {
    times: Vec<f64>,
    f: F,
}

impl<F> AnalyticField<F>
where
    F: Fn(f64, f64) -> [f64; 3] + Sync,
{
    pub fn new(times: Vec<f64>, f: F) -> Self {
        assert!(!times.is_empty(), "need at least one frame");
        assert!(times.windows(2).all(|w| w[0] < w[1]), "frame times must increase");
        Self { times, f }
    }

    /// Frames `t0, t0 + dt, …` covering `[t0, t1]`.
    pub fn uniform(t0: f64, t1: f64, n_frames: usize, f: F) -> Self {
        let dt = (t1 - t0) / (n_frames - 1) as f64;
        Self::new((0..n_frames).map(|i| t0 + i as f64 * dt).collect(), f)
    }
}

impl<F> SpaceTimeSamples for AnalyticField<F>
where
    F: Fn(f64, f64) -> [f64; 3] + Sync,
{
    fn frame_times(&self) -> &[f64] {
        &self.times
    }

    fn eval_frame(&self, frame: usize, xs: &[f64], out: &mut [[f64; 3]]) {
        let t = self.times[frame];
        for (x, o) in xs.iter().zip(out.iter_mut()) {
            *o = (self.f)(*x, t);
        }
    }
}

/// One node of the time quadrature: a blend `(1 − alpha)·frame[left] + alpha·frame[right]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeNode {
    pub t: f64,
    pub weight: f64,
    pub left: usize,
    pub right: usize,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeRule {
    pub nodes: Vec<TimeNode>,
    /// Frames with time strictly inside the window.
    pub frames_inside: usize,
}

impl TimeRule {
    pub fn total_weight(&self) -> f64 {
        self.nodes.iter().map(|n| n.weight).sum()
    }
}

/// Trapezoid rule on `[lo, hi]` using the frames inside plus the two end points.
pub fn time_rule(times: &[f64], lo: f64, hi: f64) -> Result<TimeRule, SamplingError> {
    if hi <= lo {
        return Err(SamplingError::EmptyInterval(lo, hi));
    }
    let first = times[0];
    let last = *times.last().expect("nonempty");
    let slack = 1e-12 * (1.0 + last.abs());
    if lo < first - slack || hi > last + slack {
        return Err(SamplingError::OutsideTimeRange { lo, hi, first, last });
    }
    let lo = lo.max(first);
    let hi = hi.min(last);
    let mut pts: Vec<TimeNode> = Vec::new();
    pts.push(locate(times, lo));
    let inside: Vec<usize> = (0..times.len()).filter(|&i| times[i] > lo && times[i] < hi).collect();
    for &i in &inside {
        pts.push(TimeNode { t: times[i], weight: 0.0, left: i, right: i, alpha: 0.0 });
    }
    pts.push(locate(times, hi));
    for i in 0..pts.len() - 1 {
        let h = pts[i + 1].t - pts[i].t;
        pts[i].weight += 0.5 * h;
        pts[i + 1].weight += 0.5 * h;
    }
    Ok(TimeRule { nodes: pts, frames_inside: inside.len() })
}

/// Like [`time_rule`] but refuses windows with fewer than
/// [`MIN_FRAMES_IN_WINDOW`] interior frames.
pub fn resolved_time_rule(times: &[f64], lo: f64, hi: f64) -> Result<TimeRule, SamplingError> {
    let rule = time_rule(times, lo, hi)?;
    if rule.frames_inside < MIN_FRAMES_IN_WINDOW {
        return Err(SamplingError::TooFewFrames {
            lo,
            hi,
            found: rule.frames_inside,
            required: MIN_FRAMES_IN_WINDOW,
        });
    }
    Ok(rule)
}

/// The linear blend of frames at time `t` (clamped to the sampled range).
pub fn locate(times: &[f64], t: f64) -> TimeNode {
    let idx = times.partition_point(|&s| s <= t);
    if idx == 0 {
        return TimeNode { t, weight: 0.0, left: 0, right: 0, alpha: 0.0 };
    }
    let left = idx - 1;
    if left + 1 >= times.len() || times[left] == t {
        return TimeNode { t, weight: 0.0, left, right: left, alpha: 0.0 };
    }
    let alpha = (t - times[left]) / (times[left + 1] - times[left]);
    TimeNode { t, weight: 0.0, left, right: left + 1, alpha }
}

/// Evaluates the blended frame of `node` at `xs`.
pub fn eval_node<S: SpaceTimeSamples + ?Sized>(
    src: &S,
    node: &TimeNode,
    xs: &[f64],
    out: &mut [[f64; 3]],
    scratch: &mut Vec<[f64; 3]>,
) {
    src.eval_frame(node.left, xs, out);
    if node.right != node.left && node.alpha != 0.0 {
        scratch.resize(xs.len(), [0.0; 3]);
        src.eval_frame(node.right, xs, scratch);
        let a = node.alpha;
        for (o, s) in out.iter_mut().zip(scratch.iter()) {
            for c in 0..3 {
                o[c] = (1.0 - a) * o[c] + a * s[c];
            }
        }
    }
}

/// Values of `(u, u_x, u_xx)` on a tensor grid of time nodes × space nodes.
#[derive(Debug, Clone)]
pub struct BoxSamples {
    pub time: TimeRule,
    pub xs: Vec<f64>,
    pub x_weights: Vec<f64>,
    /// Row-major: `values[i * xs.len() + j]` at time node `i`, space node `j`.
    pub values: Vec<[f64; 3]>,
}

impl BoxSamples {
    pub fn sample<S: SpaceTimeSamples + ?Sized>(src: &S, time: TimeRule, rule: &SpaceRule) -> Self {
        let m = rule.xs.len();
        let mut values = vec![[0.0; 3]; time.nodes.len() * m];
        let mut scratch = Vec::new();
        for (i, node) in time.nodes.iter().enumerate() {
            eval_node(src, node, &rule.xs, &mut values[i * m..(i + 1) * m], &mut scratch);
        }
        Self { time, xs: rule.xs.clone(), x_weights: rule.ws.clone(), values }
    }

    pub fn row(&self, i: usize) -> &[[f64; 3]] {
        let m = self.xs.len();
        &self.values[i * m..(i + 1) * m]
    }

    /// `∫∫ g(x, u, u_x, u_xx) dx dt`.
    pub fn integrate(&self, g: impl Fn(f64, &[f64; 3]) -> f64) -> f64 {
        self.time
            .nodes
            .iter()
            .enumerate()
            .map(|(i, node)| node.weight * self.integrate_row(i, &g))
            .sum()
    }

    /// `∫ g dx` on time node `i`.
    pub fn integrate_row(&self, i: usize, g: impl Fn(f64, &[f64; 3]) -> f64) -> f64 {
        self.row(i)
            .iter()
            .zip(&self.xs)
            .zip(&self.x_weights)
            .map(|((v, x), w)| w * g(*x, v))
            .sum()
    }
}

/// A composite Gauss–Legendre rule on an interval.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceRule {
    pub xs: Vec<f64>,
    pub ws: Vec<f64>,
}

/// Nodes per Gauss–Legendre panel.
pub const GL_ORDER: usize = 16;

impl SpaceRule {
    /// `panels` equal panels of [`GL_ORDER`] nodes each on `[a, b]`.
    pub fn uniform(a: f64, b: f64, panels: usize) -> Self {
        let cuts: Vec<f64> = (0..=panels).map(|i| a + (b - a) * i as f64 / panels as f64).collect();
        Self::from_breaks(&cuts)
    }

    /// One [`GL_ORDER`]-node panel per consecutive pair of `breaks`.
    pub fn from_breaks(breaks: &[f64]) -> Self {
        let (gx, gw) = gauss_legendre_16();
        let mut xs = Vec::with_capacity(GL_ORDER * (breaks.len() - 1));
        let mut ws = Vec::with_capacity(xs.capacity());
        for pair in breaks.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            let half = 0.5 * (b - a);
            let mid = 0.5 * (a + b);
            for (x, w) in gx.iter().zip(gw) {
                xs.push(mid + half * x);
                ws.push(half * w);
            }
        }
        Self { xs, ws }
    }

    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.xs.iter().zip(&self.ws).map(|(x, w)| w * f(*x)).sum()
    }
}

fn gauss_legendre_16() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre(GL_ORDER))
}

/// Gauss–Legendre nodes and weights on `[-1, 1]` by Newton iteration on `P_m`.
pub fn gauss_legendre(m: usize) -> (Vec<f64>, Vec<f64>) {
    let mut xs = vec![0.0; m];
    let mut ws = vec![0.0; m];
    for i in 0..m.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (m as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre(m, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(m, x);
        dp = if d != 0.0 { d } else { dp };
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        xs[i] = -x;
        xs[m - 1 - i] = x;
        ws[i] = w;
        ws[m - 1 - i] = w;
    }
    (xs, ws)
}

fn legendre(m: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    for k in 2..=m {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = m as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}
