//! Client side of the segmentation wire protocol.
//!
//! `POST {url}/segment` with a [`SegmentRequest`], answered by a
//! [`SegmentReply`]; `GET {url}/health` answers [`HealthReply`].

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::{Mask2D, Segmenter};
use crate::error::{Error, Result};
use crate::geometry::{Label, PromptPoint2D};
use crate::slicing::SliceTask;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);
pub const DEFAULT_MAX_IN_FLIGHT: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentRequest {
    pub width: usize,
    pub height: usize,
    pub pixels_b64: String,
    pub positive: Vec<[f64; 2]>,
    pub negative: Vec<[f64; 2]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentReply {
    pub mask_b64: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HealthReply {
    pub status: String,
    pub model: String,
}

pub fn encode_request(task: &SliceTask) -> SegmentRequest {
    let xy = |pts: &[PromptPoint2D]| pts.iter().map(|p| [p.x, p.y]).collect();
    SegmentRequest {
        width: task.slice.width(),
        height: task.slice.height(),
        pixels_b64: B64.encode(&task.slice.pixels),
        positive: xy(&task.positives),
        negative: xy(&task.negatives),
    }
}

/// Server-side view of a request: `(pixels, positives, negatives)`.
pub fn decode_request(req: &SegmentRequest) -> Result<(Vec<u8>, Vec<PromptPoint2D>, Vec<PromptPoint2D>)> {
    let pixels = B64
        .decode(&req.pixels_b64)
        .map_err(|e| Error::ProtocolError(format!("pixels_b64: {e}")))?;
    if pixels.len() != req.width * req.height {
        return Err(Error::ProtocolError(format!(
            "{} pixels for a {}x{} image",
            pixels.len(),
            req.width,
            req.height
        )));
    }
    let pts = |v: &[[f64; 2]], label| -> Result<Vec<PromptPoint2D>> {
        v.iter()
            .map(|&[x, y]| {
                if x.is_finite() && y.is_finite() {
                    Ok(PromptPoint2D { x, y, label })
                } else {
                    Err(Error::ProtocolError("non-finite prompt coordinate".into()))
                }
            })
            .collect()
    };
    Ok((pixels, pts(&req.positive, Label::Positive)?, pts(&req.negative, Label::Negative)?))
}

pub fn encode_reply(mask: &Mask2D) -> SegmentReply {
    let bytes: Vec<u8> = mask.bits.iter().map(|&b| if b != 0 { 255 } else { 0 }).collect();
    SegmentReply { mask_b64: B64.encode(bytes) }
}

pub fn decode_reply(reply: &SegmentReply, width: usize, height: usize) -> Result<Mask2D> {
    let bytes = B64
        .decode(&reply.mask_b64)
        .map_err(|e| Error::ProtocolError(format!("mask_b64: {e}")))?;
    if bytes.len() != width * height {
        return Err(Error::ProtocolError(format!(
            "mask has {} bytes, expected {}x{}",
            bytes.len(),
            width,
            height
        )));
    }
    let bits = bytes
        .iter()
        .map(|&b| match b {
            0 => Ok(0),
            255 => Ok(1),
            other => Err(Error::ProtocolError(format!("mask byte {other} is neither 0 nor 255"))),
        })
        .collect::<Result<Vec<u8>>>()?;
    Ok(Mask2D { width, height, bits })
}

/// Counting semaphore bounding concurrent requests.
struct Gate {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Gate {
    fn acquire(&self) -> GatePass<'_> {
        let mut free = self.free.lock().unwrap();
        while *free == 0 {
            free = self.cv.wait(free).unwrap();
        }
        *free -= 1;
        GatePass(self)
    }
}

struct GatePass<'a>(&'a Gate);

impl Drop for GatePass<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap() += 1;
        self.0.cv.notify_one();
    }
}

pub struct RemoteBackend {
    base: String,
    agent: ureq::Agent,
    gate: Gate,
}

impl RemoteBackend {
    pub fn new(url: &str) -> Self {
        Self::with_limits(url, DEFAULT_TIMEOUT, DEFAULT_MAX_IN_FLIGHT)
    }

    pub fn with_limits(url: &str, timeout: Duration, max_in_flight: usize) -> Self {
        let base = url.trim_end_matches('/').trim_end_matches("/segment").to_string();
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        RemoteBackend { base, agent, gate: Gate { free: Mutex::new(max_in_flight.max(1)), cv: Condvar::new() } }
    }

    pub fn health(&self) -> Result<HealthReply> {
        let resp = self
            .agent
            .get(format!("{}/health", self.base))
            .call()
            .map_err(|e| Error::BackendUnavailable(e.to_string()))?;
        if !resp.status().is_success() {
            return Err(Error::BackendUnavailable(format!("health returned {}", resp.status())));
        }
        resp.into_body()
            .read_json()
            .map_err(|e| Error::ProtocolError(format!("health reply: {e}")))
    }

    fn post_once(&self, req: &SegmentRequest) -> std::result::Result<ureq::http::Response<ureq::Body>, ureq::Error> {
        self.agent.post(format!("{}/segment", self.base)).send_json(req)
    }
}

impl Segmenter for RemoteBackend {
    fn segment(&self, task: &SliceTask) -> Result<Mask2D> {
        let req = encode_request(task);
        let _pass = self.gate.acquire();
        let resp = match self.post_once(&req) {
            Ok(r) => r,
            Err(first) => {
                log::warn!("remote segment failed ({first}); retrying once");
                self.post_once(&req).map_err(|e| Error::BackendUnavailable(e.to_string()))?
            }
        };
        let status = resp.status();
        if status.as_u16() == 503 {
            return Err(Error::BackendUnavailable("server reported 503".into()));
        }
        if !status.is_success() {
            return Err(Error::ProtocolError(format!("server replied {status}")));
        }
        let reply: SegmentReply = resp
            .into_body()
            .with_config()
            .limit(256 * 1024 * 1024)
            .read_json()
            .map_err(|e| Error::ProtocolError(format!("reply body: {e}")))?;
        decode_reply(&reply, req.width, req.height)
    }

    fn name(&self) -> String {
        format!("remote:{}", self.base)
    }
}
