//! Promptable 2D segmenters.
//!
//! The engine treats the 2D model as a black box behind [`Segmenter`]. Two
//! geometric oracles run in-process, [`FaultBackend`] wraps any backend to
//! inject seeded failures, and [`remote::RemoteBackend`] speaks the HTTP wire
//! protocol to an out-of-process model server.

mod fault;
mod flood;
pub mod remote;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::slicing::SliceTask;

pub use fault::{corruption_pattern, FaultBackend};
pub use flood::{flood_oracle, threshold_oracle};
pub use remote::RemoteBackend;

/// Binary per-pixel mask, row-major, values 0 or 1.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask2D {
    pub width: usize,
    pub height: usize,
    pub bits: Vec<u8>,
}

impl Mask2D {
    pub fn empty(width: usize, height: usize) -> Self {
        Mask2D { width, height, bits: vec![0; width * height] }
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x] != 0
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b != 0).count()
    }
}

pub trait Segmenter: Send + Sync {
    fn segment(&self, task: &SliceTask) -> Result<Mask2D>;
    fn name(&self) -> String;
}

#[derive(Clone, Debug, PartialEq)]
pub enum BackendSpec {
    Flood { tau: u8 },
    Threshold { tau: u8 },
    Fault { p: f64, seed: u64, inner: Box<BackendSpec> },
    Remote { url: String },
}

impl Default for BackendSpec {
    fn default() -> Self {
        BackendSpec::Flood { tau: 128 }
    }
}

impl BackendSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            BackendSpec::Flood { .. } | BackendSpec::Threshold { .. } => Ok(()),
            BackendSpec::Fault { p, inner, .. } => {
                if !(0.0..=1.0).contains(p) {
                    return Err(Error::InvalidConfig(format!("fault probability {p} outside [0, 1]")));
                }
                inner.validate()
            }
            BackendSpec::Remote { url } if url.trim().is_empty() => Err(Error::InvalidConfig("empty remote url".into())),
            BackendSpec::Remote { .. } => Ok(()),
        }
    }

    /// Instantiate the backend. `run_seed` is mixed into fault randomness.
    pub fn build(&self, run_seed: u64) -> Result<Box<dyn Segmenter>> {
        self.validate()?;
        Ok(match self {
            BackendSpec::Flood { tau } => Box::new(FloodBackend { tau: *tau }),
            BackendSpec::Threshold { tau } => Box::new(ThresholdBackend { tau: *tau }),
            BackendSpec::Fault { p, seed, inner } => Box::new(FaultBackend::new(inner.build(run_seed)?, *p, *seed, run_seed)),
            BackendSpec::Remote { url } => Box::new(RemoteBackend::new(url)),
        })
    }
}

fn parse_tau(s: &str) -> Result<u8> {
    let tau: u16 = s.parse().map_err(|_| Error::InvalidConfig(format!("threshold {s:?} is not an integer")))?;
    u8::try_from(tau).map_err(|_| Error::InvalidConfig(format!("threshold {tau} outside [0, 255]")))
}

impl FromStr for BackendSpec {
    type Err = Error;

    /// Grammar: `flood:<tau>`, `threshold:<tau>`, `fault:<p>:<seed>:<inner>`, `remote:<url>`.
    fn from_str(s: &str) -> Result<Self> {
        let (kind, rest) = s.split_once(':').unwrap_or((s, ""));
        let spec = match kind {
            "flood" => BackendSpec::Flood { tau: if rest.is_empty() { 128 } else { parse_tau(rest)? } },
            "threshold" => BackendSpec::Threshold { tau: if rest.is_empty() { 128 } else { parse_tau(rest)? } },
            "fault" => {
                let mut parts = rest.splitn(3, ':');
                let (Some(p), Some(seed), Some(inner)) = (parts.next(), parts.next(), parts.next()) else {
                    return Err(Error::InvalidConfig(format!("expected fault:<p>:<seed>:<inner>, got {s:?}")));
                };
                BackendSpec::Fault {
                    p: p.parse().map_err(|_| Error::InvalidConfig(format!("fault probability {p:?}")))?,
                    seed: seed.parse().map_err(|_| Error::InvalidConfig(format!("fault seed {seed:?}")))?,
                    inner: Box::new(inner.parse()?),
                }
            }
            "remote" => BackendSpec::Remote { url: rest.to_string() },
            _ => return Err(Error::InvalidConfig(format!("unknown backend {s:?}"))),
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl fmt::Display for BackendSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BackendSpec::Flood { tau } => write!(f, "flood:{tau}"),
            BackendSpec::Threshold { tau } => write!(f, "threshold:{tau}"),
            BackendSpec::Fault { p, seed, inner } => write!(f, "fault:{p}:{seed}:{inner}"),
            BackendSpec::Remote { url } => write!(f, "remote:{url}"),
        }
    }
}

impl Serialize for BackendSpec {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for BackendSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

pub struct FloodBackend {
    pub tau: u8,
}

impl Segmenter for FloodBackend {
    fn segment(&self, task: &SliceTask) -> Result<Mask2D> {
        let s = &task.slice;
        Ok(flood_oracle(&s.pixels, s.width(), s.height(), self.tau, &task.positives, &task.negatives))
    }

    fn name(&self) -> String {
        format!("flood:{}", self.tau)
    }
}

pub struct ThresholdBackend {
    pub tau: u8,
}

impl Segmenter for ThresholdBackend {
    fn segment(&self, task: &SliceTask) -> Result<Mask2D> {
        let s = &task.slice;
        Ok(threshold_oracle(&s.pixels, s.width(), s.height(), self.tau, &task.negatives))
    }

    fn name(&self) -> String {
        format!("threshold:{}", self.tau)
    }
}
