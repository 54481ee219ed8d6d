//! Geometric stand-ins for a promptable 2D segmenter.

use std::collections::VecDeque;

use super::Mask2D;
use crate::geometry::PromptPoint2D;

fn seed_pixel(p: &PromptPoint2D, width: usize, height: usize) -> Option<usize> {
    let x = p.x.round();
    let y = p.y.round();
    if x < 0.0 || y < 0.0 || x >= width as f64 || y >= height as f64 {
        return None;
    }
    Some(y as usize * width + x as usize)
}

/// Label 4-connected components of `fg`; returns per-pixel labels
/// (0 = background) and the number of components.
fn label_components(fg: &[bool], width: usize, height: usize) -> (Vec<u32>, u32) {
    let mut labels = vec![0u32; fg.len()];
    let mut next = 0u32;
    let mut queue = VecDeque::new();
    for start in 0..fg.len() {
        if !fg[start] || labels[start] != 0 {
            continue;
        }
        next += 1;
        labels[start] = next;
        queue.push_back(start);
        while let Some(o) = queue.pop_front() {
            let (x, y) = (o % width, o / width);
            let mut visit = |n: usize| {
                if fg[n] && labels[n] == 0 {
                    labels[n] = next;
                    queue.push_back(n);
                }
            };
            if x > 0 {
                visit(o - 1);
            }
            if x + 1 < width {
                visit(o + 1);
            }
            if y > 0 {
                visit(o - width);
            }
            if y + 1 < height {
                visit(o + width);
            }
        }
    }
    (labels, next)
}

/// Threshold at `tau`, flood-fill (4-connected) from every positive seed on a
/// supra-threshold pixel, then drop filled components holding a negative seed.
pub fn flood_oracle(
    image: &[u8],
    width: usize,
    height: usize,
    tau: u8,
    positives: &[PromptPoint2D],
    negatives: &[PromptPoint2D],
) -> Mask2D {
    let fg: Vec<bool> = image.iter().map(|&p| p >= tau).collect();
    let (labels, count) = label_components(&fg, width, height);
    let mut keep = vec![false; count as usize + 1];
    for p in positives {
        if let Some(o) = seed_pixel(p, width, height) {
            keep[labels[o] as usize] = true;
        }
    }
    for p in negatives {
        if let Some(o) = seed_pixel(p, width, height) {
            keep[labels[o] as usize] = false;
        }
    }
    keep[0] = false;
    Mask2D {
        width,
        height,
        bits: labels.iter().map(|&l| u8::from(keep[l as usize])).collect(),
    }
}

/// Every supra-threshold pixel, minus components holding a negative seed.
pub fn threshold_oracle(image: &[u8], width: usize, height: usize, tau: u8, negatives: &[PromptPoint2D]) -> Mask2D {
    let fg: Vec<bool> = image.iter().map(|&p| p >= tau).collect();
    let (labels, count) = label_components(&fg, width, height);
    let mut keep = vec![true; count as usize + 1];
    keep[0] = false;
    for p in negatives {
        if let Some(o) = seed_pixel(p, width, height) {
            keep[labels[o] as usize] = false;
        }
    }
    Mask2D {
        width,
        height,
        bits: labels.iter().map(|&l| u8::from(keep[l as usize])).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Label;

    fn pt(x: f64, y: f64, label: Label) -> PromptPoint2D {
        PromptPoint2D { x, y, label }
    }

    /// Reference: recursive-free fixed-point growth from a seed, no labeling.
    fn grow(fg: &[bool], w: usize, h: usize, seed: usize) -> Vec<bool> {
        let mut region = vec![false; fg.len()];
        if !fg[seed] {
            return region;
        }
        region[seed] = true;
        loop {
            let mut changed = false;
            for o in 0..fg.len() {
                if region[o] || !fg[o] {
                    continue;
                }
                let (x, y) = (o % w, o / w);
                let n = (x > 0 && region[o - 1])
                    || (x + 1 < w && region[o + 1])
                    || (y > 0 && region[o - w])
                    || (y + 1 < h && region[o + w]);
                if n {
                    region[o] = true;
                    changed = true;
                }
            }
            if !changed {
                return region;
            }
        }
    }

    #[test]
    fn disk_is_selected_exactly() {
        let (w, h) = (40, 30);
        let img: Vec<u8> = (0..w * h)
            .map(|o| {
                let (x, y) = ((o % w) as f64 - 20.0, (o / w) as f64 - 14.0);
                if x * x + y * y <= 81.0 { 255 } else { 0 }
            })
            .collect();
        let m = flood_oracle(&img, w, h, 128, &[pt(21.2, 13.6, Label::Positive)], &[]);
        let expect: Vec<u8> = img.iter().map(|&p| u8::from(p == 255)).collect();
        assert_eq!(m.bits, expect);
    }

    #[test]
    fn negative_blob_removed() {
        let (w, h) = (30, 10);
        let img: Vec<u8> = (0..w * h)
            .map(|o| {
                let x = o % w;
                if (2..10).contains(&x) || (15..25).contains(&x) { 200 } else { 10 }
            })
            .collect();
        let m = flood_oracle(&img, w, h, 128, &[pt(5.0, 5.0, Label::Positive), pt(20.0, 5.0, Label::Positive)], &[pt(18.0, 2.0, Label::Negative)]);
        let fg: Vec<bool> = img.iter().map(|&p| p >= 128).collect();
        let blob_a = grow(&fg, w, h, 5 * w + 5);
        assert_eq!(m.bits, blob_a.iter().map(|&b| u8::from(b)).collect::<Vec<_>>());
    }

    #[test]
    fn c_shape_single_component() {
        let (w, h) = (20, 20);
        let img: Vec<u8> = (0..w * h)
            .map(|o| {
                let (x, y) = (o % w, o / w);
                let on = (3..17).contains(&y) && (3..6).contains(&x)
                    || (3..6).contains(&y) && (3..17).contains(&x)
                    || (14..17).contains(&y) && (3..17).contains(&x);
                if on { 255 } else { 0 }
            })
            .collect();
        let m = flood_oracle(&img, w, h, 128, &[pt(15.0, 4.0, Label::Positive)], &[]);
        let fg: Vec<bool> = img.iter().map(|&p| p >= 128).collect();
        let expect = grow(&fg, w, h, 4 * w + 15);
        assert_eq!(m.bits, expect.iter().map(|&b| u8::from(b)).collect::<Vec<_>>());
        assert_eq!(m.count(), fg.iter().filter(|&&b| b).count());
    }

    #[test]
    fn empty_and_background_seed() {
        let img = vec![0u8; 64];
        assert_eq!(flood_oracle(&img, 8, 8, 128, &[pt(3.0, 3.0, Label::Positive)], &[]).count(), 0);
        let mut img = vec![0u8; 64];
        img[0] = 255;
        assert_eq!(flood_oracle(&img, 8, 8, 128, &[pt(3.0, 3.0, Label::Positive)], &[]).count(), 0);
    }

    #[test]
    fn threshold_keeps_all_unvetoed_components() {
        let img = [255, 0, 255, 0, 255];
        let m = threshold_oracle(&img, 5, 1, 128, &[pt(2.0, 0.0, Label::Negative)]);
        assert_eq!(m.bits, vec![1, 0, 0, 0, 1]);
    }
}
