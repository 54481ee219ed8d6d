//! Rendering 2D slices from a normalized volume and deciding which slices
//! get segmented.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{intersect_polyline_plane, slice_frames, AxisSet, Label, Polyline, PromptPoint2D, SliceFrame, DEFAULT_EPS_MM};
use crate::volume::{Grid, NormalizedVolume};

/// An 8-bit grayscale slice. Pixels outside the volume are 0 with `inside` false.
#[derive(Clone, Debug, PartialEq)]
pub struct Slice2D {
    pub frame: SliceFrame,
    pub pixels: Vec<u8>,
    pub inside: Vec<bool>,
}

impl Slice2D {
    pub fn width(&self) -> usize {
        self.frame.width
    }

    pub fn height(&self) -> usize {
        self.frame.height
    }

    pub fn to_png(&self) -> Vec<u8> {
        encode_png_gray(self.frame.width, self.frame.height, &self.pixels)
    }
}

/// One unit of 2D segmentation work.
#[derive(Clone, Debug, PartialEq)]
pub struct SliceTask {
    pub slice: Slice2D,
    pub positives: Vec<PromptPoint2D>,
    pub negatives: Vec<PromptPoint2D>,
}

impl SliceTask {
    pub fn frame(&self) -> &SliceFrame {
        &self.slice.frame
    }
}

/// A scheduled task before its pixels are rendered.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskPlan {
    pub frame: SliceFrame,
    pub positives: Vec<PromptPoint2D>,
    pub negatives: Vec<PromptPoint2D>,
}

impl TaskPlan {
    pub fn render(self, nv: &NormalizedVolume) -> SliceTask {
        SliceTask { slice: extract_slice(nv, &self.frame), positives: self.positives, negatives: self.negatives }
    }
}

#[inline]
pub(crate) fn to_gray(x: f64) -> u8 {
    // round half up; the epsilon absorbs interpolation round-off at exact halves
    (255.0 * x + 0.5 + 1e-9).floor().clamp(0.0, 255.0) as u8
}

/// Sample `nv` on the frame's pixel grid.
pub fn extract_slice(nv: &NormalizedVolume, frame: &SliceFrame) -> Slice2D {
    let n = frame.width * frame.height;
    let mut pixels = vec![0u8; n];
    let mut inside = vec![false; n];
    let grid = &nv.grid;
    // index-space walk: idx(x, y) = idx0 + x * du + y * dv
    let idx0 = grid.world_to_index(&frame.origin2d);
    let du = grid.world_to_index(&(frame.origin2d + frame.u * frame.pitch)) - idx0;
    let dv = grid.world_to_index(&(frame.origin2d + frame.v * frame.pitch)) - idx0;
    for y in 0..frame.height {
        let row = idx0 + dv * y as f64;
        for x in 0..frame.width {
            let idx = row + du * x as f64;
            if let Some(val) = crate::volume::trilinear(grid, &nv.data, &idx) {
                let o = y * frame.width + x;
                pixels[o] = to_gray(val);
                inside[o] = true;
            }
        }
    }
    Slice2D { frame: frame.clone(), pixels, inside }
}

/// Frames for every axis of `axes` at the given stride, in axis order.
pub fn frames_for_axes(grid: &Grid, axes: &AxisSet, stride: usize) -> Result<Vec<Vec<SliceFrame>>> {
    axes.axes
        .iter()
        .enumerate()
        .map(|(id, axis)| slice_frames(grid, axis, id, stride, grid.pitch()))
        .collect()
}

/// Prompt projection for every frame, keeping only frames with at least one
/// positive prompt inside the slice. Order: axis, then offset index.
pub fn plan(grid: &Grid, axes: &AxisSet, prompts: &[Polyline], stride: usize) -> Result<Vec<TaskPlan>> {
    if !prompts.iter().any(|p| p.label == Label::Positive) {
        return Err(Error::NoPositivePrompts);
    }
    let frames: Vec<SliceFrame> = frames_for_axes(grid, axes, stride)?.into_iter().flatten().collect();
    Ok(frames
        .into_par_iter()
        .filter_map(|frame| {
            let mut positives = Vec::new();
            let mut negatives = Vec::new();
            for poly in prompts {
                for p in intersect_polyline_plane(poly, &frame, DEFAULT_EPS_MM) {
                    if !frame.contains_pixel(p.x, p.y) {
                        continue;
                    }
                    match p.label {
                        Label::Positive => positives.push(p),
                        Label::Negative => negatives.push(p),
                    }
                }
            }
            (!positives.is_empty()).then_some(TaskPlan { frame, positives, negatives })
        })
        .collect())
}

/// Build every slice task for the run.
pub fn schedule(nv: &NormalizedVolume, axes: &AxisSet, prompts: &[Polyline], stride: usize) -> Result<Vec<SliceTask>> {
    Ok(plan(&nv.grid, axes, prompts, stride)?
        .into_par_iter()
        .map(|p| p.render(nv))
        .collect())
}

pub fn encode_png_gray(width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
    encode_png(width, height, png::ColorType::Grayscale, pixels)
}

pub fn encode_png_rgba(width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
    encode_png(width, height, png::ColorType::Rgba, pixels)
}

fn encode_png(width: usize, height: usize, color: png::ColorType, pixels: &[u8]) -> Vec<u8> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width as u32, height as u32);
        enc.set_color(color);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().expect("in-memory PNG header");
        writer.write_image_data(pixels).expect("in-memory PNG body");
    }
    out
}

/// Decode an 8-bit PNG into `(width, height, channels, bytes)`.
pub fn decode_png(bytes: &[u8]) -> Result<(usize, usize, usize, Vec<u8>)> {
    let dec = png::Decoder::new(std::io::Cursor::new(bytes));
    let mut reader = dec.read_info().map_err(|e| Error::CorruptInput(format!("png: {e}")))?;
    let mut buf = vec![0; reader.output_buffer_size().unwrap_or(0)];
    let info = reader.next_frame(&mut buf).map_err(|e| Error::CorruptInput(format!("png: {e}")))?;
    buf.truncate(info.buffer_size());
    Ok((info.width as usize, info.height as usize, info.color_type.samples(), buf))
}
