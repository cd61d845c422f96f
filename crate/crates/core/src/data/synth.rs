//! Synthetic frame-sequence generator: a bright square bouncing over a dark
//! background, with optional anomalies injected inside a labelled window.

use rand::Rng;

use crate::error::{Error, Result};
use crate::seed;
use crate::tensor::Tensor;

use super::FrameSequence;

const BACKGROUND: f64 = 20.0;
const OBJECT: f64 = 235.0;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "factor")]
pub enum AnomalyKind {
    /// No anomaly; labels are all zero.
    None,
    /// Object speed multiplied by the factor inside the window.
    Speed(u32),
    /// A second object appears inside the window.
    ExtraObject,
}

impl AnomalyKind {
    pub fn parse(kind: &str, factor: u32) -> Result<Self> {
        match kind {
            "none" => Ok(AnomalyKind::None),
            "speed" => {
                if factor < 1 {
                    return Err(Error::Argument("speed factor must be at least 1".into()));
                }
                Ok(AnomalyKind::Speed(factor))
            }
            "extra_object" => Ok(AnomalyKind::ExtraObject),
            other => Err(Error::Argument(format!("unknown anomaly kind '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SyntheticConfig {
    pub height: usize,
    pub width: usize,
    pub length: usize,
    pub object_size: usize,
    /// Normal speed in pixels per frame.
    pub speed: usize,
    pub anomaly: AnomalyKind,
    /// Half-open frame window `[start, end)` where the anomaly is active.
    pub window: (usize, usize),
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            height: 32,
            width: 32,
            length: 60,
            object_size: 6,
            speed: 1,
            anomaly: AnomalyKind::None,
            window: (0, 0),
            seed: 1,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.length == 0 {
            return Err(Error::Argument("sequence length must be positive".into()));
        }
        if self.object_size == 0
            || self.object_size >= self.height
            || self.object_size >= self.width
        {
            return Err(Error::Argument(format!(
                "object size {} does not fit a {}x{} frame",
                self.object_size, self.height, self.width
            )));
        }
        if self.speed < 1 {
            return Err(Error::Argument("speed must be at least 1".into()));
        }
        if self.window.0 > self.window.1 || self.window.1 > self.length {
            return Err(Error::Argument(format!(
                "anomaly window [{}, {}) must lie within the {}-frame sequence",
                self.window.0, self.window.1, self.length
            )));
        }
        if let AnomalyKind::Speed(k) = self.anomaly {
            if k < 1 {
                return Err(Error::Argument("speed factor must be at least 1".into()));
            }
        }
        Ok(())
    }

    fn in_window(&self, t: usize) -> bool {
        self.anomaly != AnomalyKind::None && t >= self.window.0 && t < self.window.1
    }
}

struct Mover {
    x: f64,
    y: f64,
    vx: f64,
    vy: f64,
    max_x: f64,
    max_y: f64,
}

impl Mover {
    fn advance(&mut self, scale: f64) {
        self.x += self.vx * scale;
        self.y += self.vy * scale;
        // Reflect off the walls, possibly more than once for large steps.
        loop {
            let mut bounced = false;
            if self.x < 0.0 {
                self.x = -self.x;
                self.vx = -self.vx;
                bounced = true;
            } else if self.x > self.max_x {
                self.x = 2.0 * self.max_x - self.x;
                self.vx = -self.vx;
                bounced = true;
            }
            if self.y < 0.0 {
                self.y = -self.y;
                self.vy = -self.vy;
                bounced = true;
            } else if self.y > self.max_y {
                self.y = 2.0 * self.max_y - self.y;
                self.vy = -self.vy;
                bounced = true;
            }
            if !bounced {
                break;
            }
        }
    }
}

fn paint(frame: &mut Tensor, width: usize, x: f64, y: f64, size: usize) {
    let x0 = x.round() as usize;
    let y0 = y.round() as usize;
    for r in y0..y0 + size {
        for c in x0..x0 + size {
            frame.data_mut()[r * width + c] = OBJECT;
        }
    }
}

/// Render the sequence and its per-frame labels (1 inside the anomaly
/// window, 0 outside). Deterministic per seed.
pub fn generate(cfg: &SyntheticConfig) -> Result<(FrameSequence, Vec<u8>)> {
    cfg.validate()?;
    let mut rng = seed::rng(cfg.seed, "synth.init");
    let max_x = (cfg.width - cfg.object_size) as f64;
    let max_y = (cfg.height - cfg.object_size) as f64;
    let speed = cfg.speed as f64;
    let spawn = |rng: &mut rand_chacha::ChaCha12Rng| Mover {
        x: rng.gen_range(0.0..=max_x).round(),
        y: rng.gen_range(0.0..=max_y).round(),
        vx: if rng.gen_bool(0.5) { speed } else { -speed },
        vy: if rng.gen_bool(0.5) { speed } else { -speed },
        max_x,
        max_y,
    };
    let mut main = spawn(&mut rng);
    let mut extra = spawn(&mut rng);

    let mut frames = Vec::with_capacity(cfg.length);
    let mut labels = Vec::with_capacity(cfg.length);
    for t in 0..cfg.length {
        if t > 0 {
            let scale = match cfg.anomaly {
                AnomalyKind::Speed(k) if cfg.in_window(t) => k as f64,
                _ => 1.0,
            };
            main.advance(scale);
            extra.advance(1.0);
        }
        let mut frame =
            Tensor::new(vec![cfg.height, cfg.width], vec![BACKGROUND; cfg.height * cfg.width])?;
        paint(&mut frame, cfg.width, main.x, main.y, cfg.object_size);
        if cfg.anomaly == AnomalyKind::ExtraObject && cfg.in_window(t) {
            paint(&mut frame, cfg.width, extra.x, extra.y, cfg.object_size);
        }
        frames.push(frame);
        labels.push(u8::from(cfg.in_window(t)));
    }
    Ok((FrameSequence::new(frames)?, labels))
}
