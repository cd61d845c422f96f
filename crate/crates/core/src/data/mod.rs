//! Frame ingestion, preprocessing and cuboid construction.

pub mod manifest;
pub mod pgm;
pub mod synth;

use crate::error::{Error, Result};
use crate::parallel;
use crate::tensor::Tensor;

/// A sequence of same-sized grayscale frames. Raw frames hold values in
/// [0,255]; preprocessed frames are standardized reals.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    pub frames: Vec<Tensor>,
    pub fps: Option<f64>,
}

impl FrameSequence {
    pub fn new(frames: Vec<Tensor>) -> Result<Self> {
        if let Some(first) = frames.first() {
            for f in &frames {
                if f.shape() != first.shape() {
                    return Err(Error::dimension(
                        "frame_sequence",
                        first.shape_string(),
                        f.shape_string(),
                    ));
                }
            }
        }
        Ok(FrameSequence { frames, fps: None })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn height(&self) -> usize {
        self.frames[0].shape()[0]
    }

    pub fn width(&self) -> usize {
        self.frames[0].shape()[1]
    }
}

/// Statistics learned on training frames and reused verbatim on test frames.
#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessStats {
    /// Mean image over the training frames, at target size, in [0,1] scale.
    pub mean_image: Tensor,
    /// Global scalar mean after mean-image subtraction (close to zero).
    pub mean: f64,
    /// Global scalar standard deviation after mean-image subtraction.
    pub std: f64,
    /// True when the stats were computed from training frames; test frames
    /// must never flow into them.
    pub from_training: bool,
}

/// Bilinear resize with corner-aligned sampling: output corners map exactly
/// onto input corners, making resized values reproducible across
/// implementations. A target extent of 1 samples the input center line.
pub fn resize_bilinear(frame: &Tensor, out_h: usize, out_w: usize) -> Tensor {
    let (in_h, in_w) = (frame.shape()[0], frame.shape()[1]);
    let src = frame.data();
    let scale = |out: usize, inp: usize, idx: usize| -> f64 {
        if out == 1 {
            (inp - 1) as f64 / 2.0
        } else {
            idx as f64 * (inp - 1) as f64 / (out - 1) as f64
        }
    };
    let mut data = Vec::with_capacity(out_h * out_w);
    for i in 0..out_h {
        let sy = scale(out_h, in_h, i);
        let y0 = sy.floor() as usize;
        let y1 = (y0 + 1).min(in_h - 1);
        let fy = sy - y0 as f64;
        for j in 0..out_w {
            let sx = scale(out_w, in_w, j);
            let x0 = sx.floor() as usize;
            let x1 = (x0 + 1).min(in_w - 1);
            let fx = sx - x0 as f64;
            let v00 = src[y0 * in_w + x0];
            let v01 = src[y0 * in_w + x1];
            let v10 = src[y1 * in_w + x0];
            let v11 = src[y1 * in_w + x1];
            let top = v00 + (v01 - v00) * fx;
            let bot = v10 + (v11 - v10) * fx;
            data.push(top + (bot - top) * fy);
        }
    }
    Tensor::new(vec![out_h, out_w], data).unwrap()
}

/// Preprocess a frame sequence: resize to the target, scale [0,255] into
/// [0,1], subtract the global mean image, then standardize with global
/// scalar mean/std. When `stats` is absent the statistics are computed from
/// this (training) sequence and returned; when present they are applied
/// unchanged, so test frames never contaminate them.
pub fn preprocess(
    seq: &FrameSequence,
    stats: Option<&PreprocessStats>,
    target: (usize, usize),
) -> Result<(FrameSequence, PreprocessStats)> {
    if seq.is_empty() {
        return Err(Error::Argument("cannot preprocess an empty sequence".into()));
    }
    let (h, w) = target;
    if h == 0 || w == 0 {
        return Err(Error::Argument("target size must be positive".into()));
    }
    if let Some(s) = stats {
        if s.mean_image.shape() != [h, w] {
            return Err(Error::Incompatible(format!(
                "preprocess stats were computed at {} but the target is {}x{}",
                s.mean_image.shape_string(),
                h,
                w
            )));
        }
    }

    let scaled: Vec<Tensor> = parallel::par_map(&seq.frames, |f| {
        resize_bilinear(f, h, w).map(|v| v / 255.0)
    });

    let stats = match stats {
        Some(s) => s.clone(),
        None => {
            let mut mean_image = Tensor::zeros(vec![h, w]);
            for f in &scaled {
                mean_image.add_assign(f)?;
            }
            mean_image.scale_assign(1.0 / scaled.len() as f64);

            let count = (scaled.len() * h * w) as f64;
            let mut mean = 0.0;
            for f in &scaled {
                for (v, m) in f.data().iter().zip(mean_image.data()) {
                    mean += v - m;
                }
            }
            mean /= count;
            let mut var = 0.0;
            for f in &scaled {
                for (v, m) in f.data().iter().zip(mean_image.data()) {
                    let d = (v - m) - mean;
                    var += d * d;
                }
            }
            var /= count;
            let std = var.sqrt();
            PreprocessStats {
                mean_image,
                mean,
                // Guard against fully constant sequences.
                std: if std < 1e-12 { 1.0 } else { std },
                from_training: true,
            }
        }
    };

    let frames: Vec<Tensor> = parallel::par_map(&scaled, |f| {
        let data = f
            .data()
            .iter()
            .zip(stats.mean_image.data())
            .map(|(v, m)| ((v - m) - stats.mean) / stats.std)
            .collect();
        Tensor::new(vec![h, w], data).unwrap()
    });

    let mut out = FrameSequence::new(frames)?;
    out.fps = seq.fps;
    Ok((out, stats))
}

/// Affine map of standardized pixel values into a target interval inside
/// [0,1], fitted on training frames and clamped at apply time. The network's
/// output stage and the cross-entropy loss both live in the unit interval,
/// so everything the network sees goes through this conditioning step; the
/// default target band is chosen so the data's lower tail sits inside the
/// output stage's representable range.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ValueRange {
    /// Input extremes observed on the training frames.
    pub lo: f64,
    pub hi: f64,
    /// Output interval; a subset of [0,1].
    pub out_lo: f64,
    pub out_hi: f64,
}

impl ValueRange {
    pub fn fit(seq: &FrameSequence, out: (f64, f64)) -> Result<Self> {
        if seq.is_empty() {
            return Err(Error::Argument("cannot fit a range on an empty sequence".into()));
        }
        if !(0.0 <= out.0 && out.0 < out.1 && out.1 <= 1.0) {
            return Err(Error::Argument(format!(
                "target range [{}, {}] must be an interval inside [0,1]",
                out.0, out.1
            )));
        }
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for f in &seq.frames {
            for &v in f.data() {
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        Ok(ValueRange {
            lo,
            hi,
            out_lo: out.0,
            out_hi: out.1,
        })
    }

    pub fn apply_value(&self, v: f64) -> f64 {
        if self.hi <= self.lo {
            return (self.out_lo + self.out_hi) / 2.0;
        }
        let unit = ((v - self.lo) / (self.hi - self.lo)).clamp(0.0, 1.0);
        self.out_lo + unit * (self.out_hi - self.out_lo)
    }

    pub fn apply(&self, seq: &FrameSequence) -> FrameSequence {
        let frames = parallel::par_map(&seq.frames, |f| f.map(|v| self.apply_value(v)));
        FrameSequence {
            frames,
            fps: seq.fps,
        }
    }
}

/// A stack of `T` frames taken `stride` apart, the network's input unit.
#[derive(Debug, Clone, PartialEq)]
pub struct Cuboid {
    /// Frame stack with shape `[T, H, W, 1]`.
    pub frames: Tensor,
    /// Original frame indices, strictly increasing by `stride`.
    pub source_indices: Vec<usize>,
    pub stride: usize,
}

impl Cuboid {
    pub fn t_steps(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn frame_pixels(&self) -> usize {
        self.frames.shape()[1] * self.frames.shape()[2]
    }

    /// Time coordinate used when mapping cuboid costs back onto frames.
    pub fn center_time(&self) -> f64 {
        let sum: usize = self.source_indices.iter().sum();
        sum as f64 / self.source_indices.len() as f64
    }

    /// Flattened `[T, H*W]` view consumed by the network.
    pub fn as_matrix(&self) -> Tensor {
        Tensor::matrix(self.t_steps(), self.frame_pixels(), self.frames.data().to_vec()).unwrap()
    }
}

/// Sliding-window cuboids for every stride: for stride `s`, each start `i`
/// with `i + (T-1)s < L` yields the frames `{i, i+s, ..., i+(T-1)s}`.
pub fn build_cuboids(seq: &FrameSequence, t_steps: usize, strides: &[usize]) -> Result<Vec<Cuboid>> {
    if t_steps == 0 {
        return Err(Error::Argument("cuboids need at least one timestep".into()));
    }
    if strides.is_empty() || strides.contains(&0) {
        return Err(Error::Argument("strides must be positive".into()));
    }
    let max_stride = *strides.iter().max().unwrap();
    let needed = (t_steps - 1) * max_stride + 1;
    if seq.len() < needed {
        return Err(Error::Argument(format!(
            "sequence of {} frames is too short for T={t_steps} at stride {max_stride}; at least {needed} frames required",
            seq.len()
        )));
    }
    let (h, w) = (seq.height(), seq.width());
    let mut out = Vec::new();
    for &s in strides {
        let span = (t_steps - 1) * s;
        for start in 0..seq.len() - span {
            let indices: Vec<usize> = (0..t_steps).map(|k| start + k * s).collect();
            let mut data = Vec::with_capacity(t_steps * h * w);
            for &i in &indices {
                data.extend_from_slice(seq.frames[i].data());
            }
            out.push(Cuboid {
                frames: Tensor::new(vec![t_steps, h, w, 1], data)?,
                source_indices: indices,
                stride: s,
            });
        }
    }
    Ok(out)
}
