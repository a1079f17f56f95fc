//! File formats and run configuration.
//!
//! SGT1 trajectory layout: the 4 bytes `SGT1`, one newline-terminated JSON
//! header `{"version":1,"n_grid":…,"tau":…,"n_frames":…,"t0":…,"storage":"real"}`,
//! then `n_frames` frames of `n_grid` little-endian `f64` grid samples.
//! Frame `k` sits at time `t0 + kτ`.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::field::{FieldError, SpectralField};
use crate::singular::Thresholds;
use crate::solver::{Frame, SolverConfig, Trajectory};

pub const SGT1_MAGIC: &[u8; 4] = b"SGT1";
pub const SGT1_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("not an SGT1 file (bad magic)")]
    BadMagic,
    #[error("bad SGT1 header: {0}")]
    BadHeader(String),
    #[error("SGT1 payload holds {found} bytes, header promises {expected}")]
    Truncated { expected: usize, found: usize },
    #[error("frames are not uniformly spaced in time (frame {0})")]
    NonUniformFrames(usize),
    #[error("bad initial condition spec {0:?}: {1}")]
    BadIc(String, String),
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn open(path: &Path) -> Result<File, IoError> {
    File::open(path).map_err(|source| IoError::File { path: path.to_path_buf(), source })
}

fn create(path: &Path) -> Result<File, IoError> {
    File::create(path).map_err(|source| IoError::File { path: path.to_path_buf(), source })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sgt1Header {
    pub version: u32,
    pub n_grid: usize,
    pub tau: f64,
    pub n_frames: usize,
    pub t0: f64,
    pub storage: String,
}

/// Decoded SGT1 contents.
#[derive(Debug, Clone, PartialEq)]
pub struct Sgt1 {
    pub header: Sgt1Header,
    pub frames: Vec<Vec<f64>>,
}

impl Sgt1 {
    /// Frames of a trajectory whose times are `t0 + kτ`.
    pub fn from_trajectory(traj: &Trajectory) -> Result<Self, IoError> {
        let times = traj.times();
        let t0 = times[0];
        let tau = if times.len() > 1 { times[1] - times[0] } else { traj.config().tau };
        for (k, &t) in times.iter().enumerate() {
            if (t - (t0 + k as f64 * tau)).abs() > 1e-9 * tau.max(1e-300) {
                return Err(IoError::NonUniformFrames(k));
            }
        }
        Ok(Self {
            header: Sgt1Header {
                version: SGT1_VERSION,
                n_grid: traj.n_grid(),
                tau,
                n_frames: times.len(),
                t0,
                storage: "real".into(),
            },
            frames: traj.frames().iter().map(|f| f.field.samples().to_vec()).collect(),
        })
    }

    pub fn time(&self, k: usize) -> f64 {
        self.header.t0 + k as f64 * self.header.tau
    }

    /// Rebuilds the trajectory; `nonlinear` selects the model recorded in its config.
    pub fn to_trajectory(&self, nonlinear: bool) -> Result<Trajectory, IoError> {
        let frames = self
            .frames
            .iter()
            .enumerate()
            .map(|(k, s)| Ok(Frame { t: self.time(k), field: SpectralField::from_samples(s.clone())? }))
            .collect::<Result<Vec<_>, FieldError>>()?;
        let h = &self.header;
        let t_end = self.time(h.n_frames.saturating_sub(1));
        let cfg = SolverConfig { tau: h.tau, t_end, nonlinear, ..SolverConfig::default() };
        Trajectory::from_frames(cfg, frames).map_err(|e| IoError::BadHeader(e.to_string()))
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<(), IoError> {
        w.write_all(SGT1_MAGIC)?;
        serde_json::to_writer(&mut w, &self.header)?;
        w.write_all(b"\n")?;
        for frame in &self.frames {
            for v in frame {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read<R: Read>(r: R) -> Result<Self, IoError> {
        let mut r = BufReader::new(r);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|_| IoError::BadMagic)?;
        if &magic != SGT1_MAGIC {
            return Err(IoError::BadMagic);
        }
        let mut line = String::new();
        r.read_line(&mut line)?;
        let header: Sgt1Header = serde_json::from_str(line.trim_end()).map_err(|e| IoError::BadHeader(e.to_string()))?;
        if header.version != SGT1_VERSION {
            return Err(IoError::BadHeader(format!("unsupported version {}", header.version)));
        }
        if header.storage != "real" {
            return Err(IoError::BadHeader(format!("unsupported storage {:?}", header.storage)));
        }
        if header.n_frames == 0 || header.n_grid == 0 {
            return Err(IoError::BadHeader("empty trajectory".into()));
        }
        let mut payload = Vec::new();
        r.read_to_end(&mut payload)?;
        let expected = header.n_frames * header.n_grid * 8;
        if payload.len() != expected {
            return Err(IoError::Truncated { expected, found: payload.len() });
        }
        let frames = payload
            .chunks_exact(header.n_grid * 8)
            .map(|chunk| {
                chunk.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes"))).collect()
            })
            .collect();
        Ok(Self { header, frames })
    }

    pub fn write_path(&self, path: &Path) -> Result<(), IoError> {
        self.write(BufWriter::new(create(path)?))
    }

    pub fn read_path(path: &Path) -> Result<Self, IoError> {
        Self::read(open(path)?)
    }
}

/// Whether the file starts with the SGT1 magic.
pub fn is_sgt1(path: &Path) -> bool {
    let mut magic = [0u8; 4];
    open(path).and_then(|mut f| f.read_exact(&mut magic).map_err(IoError::from)).is_ok() && &magic == SGT1_MAGIC
}

/// Initial condition presets.
#[derive(Debug, Clone, PartialEq)]
pub enum IcSpec {
    /// `amp · cos(kx)`.
    Mode { k: u32, amp: f64 },
    /// `amp · Σ_{k ≤ n_modes} (a_k cos kx + b_k sin kx) / k` with
    /// `a_k, b_k` uniform on `[−1, 1]` from a seeded ChaCha stream.
    Random { seed: u64, n_modes: u32, amp: f64 },
    /// First frame of an SGT1 file.
    File(PathBuf),
}

impl FromStr for IcSpec {
    type Err = IoError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = |m: &str| IoError::BadIc(s.to_string(), m.to_string());
        let (kind, args) = s.split_once(':').ok_or_else(|| bad("expected kind:args"))?;
        let parts: Vec<&str> = args.split(',').map(str::trim).collect();
        let num = |i: usize| -> Result<f64, IoError> {
            parts.get(i).ok_or_else(|| bad("missing argument"))?.parse::<f64>().map_err(|e| bad(&e.to_string()))
        };
        let int = |i: usize| -> Result<u64, IoError> {
            parts.get(i).ok_or_else(|| bad("missing argument"))?.parse::<u64>().map_err(|e| bad(&e.to_string()))
        };
        match kind {
            "mode" if parts.len() == 2 => {
                let k = int(0)?;
                if k == 0 {
                    return Err(bad("mode 0 has nonzero mean"));
                }
                Ok(IcSpec::Mode { k: k as u32, amp: num(1)? })
            }
            "random" if parts.len() == 3 => {
                Ok(IcSpec::Random { seed: int(0)?, n_modes: int(1)? as u32, amp: num(2)? })
            }
            "file" if !args.is_empty() => Ok(IcSpec::File(PathBuf::from(args))),
            _ => Err(bad("expected mode:k,amp | random:seed,n_modes,amp | file:path")),
        }
    }
}

impl fmt::Display for IcSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IcSpec::Mode { k, amp } => write!(f, "mode:{k},{amp:?}"),
            IcSpec::Random { seed, n_modes, amp } => write!(f, "random:{seed},{n_modes},{amp:?}"),
            IcSpec::File(p) => write!(f, "file:{}", p.display()),
        }
    }
}

impl Serialize for IcSpec {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for IcSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

impl IcSpec {
    pub fn build(&self, n_grid: usize) -> Result<SpectralField, IoError> {
        match self {
            IcSpec::Mode { k, amp } => {
                let k = *k as f64;
                Ok(SpectralField::from_fn(n_grid, |x| amp * (k * x).cos())?.map_modes(|k| if k == 0 { 0.0 } else { 1.0 }))
            }
            IcSpec::Random { seed, n_modes, amp } => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                let coef: Vec<(f64, f64)> =
                    (0..*n_modes).map(|_| (rng.gen_range(-1.0..=1.0), rng.gen_range(-1.0..=1.0))).collect();
                let f = SpectralField::from_fn(n_grid, |x| {
                    coef.iter()
                        .enumerate()
                        .map(|(i, (a, b))| {
                            let k = (i + 1) as f64;
                            (a * (k * x).cos() + b * (k * x).sin()) / k
                        })
                        .sum::<f64>()
                        * amp
                })?;
                Ok(f.map_modes(|k| if k == 0 { 0.0 } else { 1.0 }))
            }
            IcSpec::File(path) => {
                let data = Sgt1::read_path(path)?;
                let f = SpectralField::from_samples(data.frames[0].clone())?;
                Ok(if f.n_grid() == n_grid { f } else { f.resampled(n_grid)? })
            }
        }
    }
}

/// Scan and table settings for `analyze`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalysisConfig {
    pub thresholds: Thresholds,
    /// Every `x_stride`-th grid point is a scan centre.
    pub x_stride: usize,
    /// Every `t_stride`-th frame is a scan time.
    pub t_stride: usize,
    /// Radii of the cylinder statistics table; defaults to `thresholds.r_scan`.
    pub table_radii: Option<Vec<f64>>,
    /// Deltas for the box-dimension estimate of the suspect set.
    pub deltas: Vec<f64>,
    pub decay_theta: f64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            thresholds: Thresholds::default(),
            x_stride: 8,
            t_stride: 50,
            table_radii: None,
            deltas: vec![0.04, 0.02, 0.01, 0.005],
            decay_theta: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub ic: IcSpec,
    pub n_grid: usize,
    pub solver: SolverConfig,
    pub analysis: AnalysisConfig,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            ic: IcSpec::Mode { k: 1, amp: 0.1 },
            n_grid: 128,
            solver: SolverConfig::default(),
            analysis: AnalysisConfig::default(),
            output_dir: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, IoError> {
        serde_json::from_str(text).map_err(|e| IoError::Config(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self, IoError> {
        let mut text = String::new();
        open(path)?.read_to_string(&mut text)?;
        Self::from_json(&text)
    }
}

/// Metadata written next to each simulated trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub ic: IcSpec,
    pub n_grid: usize,
    pub solver: SolverConfig,
    pub energies: Vec<f64>,
    pub dissipation: Vec<f64>,
    pub picard_iters: Vec<usize>,
    pub substeps: Vec<usize>,
    pub max_residual: f64,
}

impl RunMetadata {
    pub fn new(cfg: &RunConfig, traj: &Trajectory) -> Self {
        let steps = traj.steps();
        Self {
            ic: cfg.ic.clone(),
            n_grid: cfg.n_grid,
            solver: *traj.config(),
            energies: traj.energies(),
            dissipation: steps.iter().map(|s| s.dissipation).collect(),
            picard_iters: steps.iter().map(|s| s.picard_iters).collect(),
            substeps: steps.iter().map(|s| s.substeps).collect(),
            max_residual: steps.iter().map(|s| s.residual).fold(0.0, f64::max),
        }
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let mut w = BufWriter::new(create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, IoError> {
    Ok(serde_json::from_reader(BufReader::new(open(path)?))?)
}

/// Reads `x,t` rows (extra columns ignored) into points.
pub fn read_points_csv(path: &Path) -> Result<Vec<(f64, f64)>, IoError> {
    #[derive(Deserialize)]
    struct Row {
        x: f64,
        t: f64,
    }
    let mut out = Vec::new();
    for rec in csv::Reader::from_reader(open(path)?).deserialize::<Row>() {
        let row = rec.map_err(|e| IoError::Config(format!("{}: {e}", path.display())))?;
        out.push((row.x, row.t));
    }
    Ok(out)
}
