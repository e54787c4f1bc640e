use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::blur::SharpClip;
use crate::error::{Error, Result};
use crate::frame::{Frame, FrameSequence};

/// Procedural sharp footage: discs, rotated rectangles and thin bars over a
/// flat background, all translating rigidly (a camera pan) with sub-pixel
/// motion per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyScene {
    pub height: usize,
    pub width: usize,
    pub frames: usize,
    /// Speed in pixels per frame.
    pub motion: f64,
    /// Motion direction in radians; drawn from the seed when `None`.
    pub angle: Option<f64>,
    /// Number of shapes; scales with the frame area when `None`.
    pub objects: Option<usize>,
    pub fps: f64,
}

const SUPERSAMPLE: usize = 4;

#[derive(Debug, Clone)]
enum Shape {
    Disc { r: f64 },
    Rect { hx: f64, hy: f64, cos: f64, sin: f64 },
}

#[derive(Debug, Clone)]
struct Object {
    cx: f64,
    cy: f64,
    shape: Shape,
    color: [f32; 3],
    extent: f64,
}

impl Object {
    fn contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.cx, y - self.cy);
        if dx.abs() > self.extent || dy.abs() > self.extent {
            return false;
        }
        match self.shape {
            Shape::Disc { r } => dx * dx + dy * dy <= r * r,
            Shape::Rect { hx, hy, cos, sin } => {
                let u = dx * cos + dy * sin;
                let v = -dx * sin + dy * cos;
                u.abs() <= hx && v.abs() <= hy
            }
        }
    }
}

impl ToyScene {
    pub fn new(frames: usize, height: usize, width: usize, motion: f64) -> Self {
        Self {
            height,
            width,
            frames,
            motion,
            angle: None,
            objects: None,
            fps: 240.0,
        }
    }

    pub fn render(&self, seed: u64) -> Result<SharpClip> {
        let (h, w) = (self.height, self.width);
        if h < 4 || w < 4 || h % 4 != 0 || w % 4 != 0 {
            return Err(Error::Config(format!("toy scene size {h}x{w} must be at least 4x4 and divisible by 4")));
        }
        if self.frames == 0 {
            return Err(Error::Config("toy scene needs at least one frame".into()));
        }
        if !(self.motion >= 0.0 && self.motion.is_finite()) {
            return Err(Error::Config(format!("motion must be a non-negative number, got {}", self.motion)));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let angle = self.angle.unwrap_or_else(|| rng.gen_range(0.0..std::f64::consts::TAU));
        let (vx, vy) = (self.motion * angle.cos(), self.motion * angle.sin());
        let background = random_color(&mut rng);

        // shapes cover everything the pan reveals
        let travel = self.motion * self.frames as f64 / 2.0 + 4.0;
        let (x_lo, x_hi) = (-travel, w as f64 + travel);
        let (y_lo, y_hi) = (-travel, h as f64 + travel);
        let area = (x_hi - x_lo) * (y_hi - y_lo);
        let count = self.objects.unwrap_or(((area / 300.0) as usize).max(6));
        let size = (h.min(w) as f64 / 4.0).max(3.0);
        let objects: Vec<Object> = (0..count)
            .map(|_| {
                let cx = rng.gen_range(x_lo..x_hi);
                let cy = rng.gen_range(y_lo..y_hi);
                let color = random_color(&mut rng);
                let (shape, extent) = match rng.gen_range(0..3) {
                    0 => {
                        let r = rng.gen_range(2.0..size);
                        (Shape::Disc { r }, r)
                    }
                    kind => {
                        let (hx, hy) = if kind == 1 {
                            (rng.gen_range(1.5..size), rng.gen_range(1.5..size))
                        } else {
                            // text-like stroke
                            (rng.gen_range(3.0..size.max(3.5)), rng.gen_range(0.6..1.6))
                        };
                        let theta = rng.gen_range(0.0..std::f64::consts::PI);
                        (
                            Shape::Rect {
                                hx,
                                hy,
                                cos: theta.cos(),
                                sin: theta.sin(),
                            },
                            hx.hypot(hy),
                        )
                    }
                };
                Object {
                    cx,
                    cy,
                    shape,
                    color,
                    extent,
                }
            })
            .collect();

        let centre = (self.frames as f64 - 1.0) / 2.0;
        let frames = (0..self.frames)
            .map(|t| {
                let s = t as f64 - centre;
                render_frame(h, w, &objects, background, vx * s, vy * s)
            })
            .collect();
        Ok(SharpClip {
            frames: FrameSequence::new(frames)?,
            fps: self.fps,
            velocity: Some((vx, vy)),
        })
    }
}

fn random_color(rng: &mut ChaCha8Rng) -> [f32; 3] {
    [0, 1, 2].map(|_| rng.gen_range(0.05f32..0.95))
}

/// Frame with every shape shifted by `(ox, oy)`, box-filtered over a 4x4 grid per pixel.
fn render_frame(h: usize, w: usize, objects: &[Object], bg: [f32; 3], ox: f64, oy: f64) -> Frame {
    let mut f = Frame::zeros(h, w);
    let data = f.data_mut();
    let n = (SUPERSAMPLE * SUPERSAMPLE) as f32;
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0.0f32; 3];
            for sy in 0..SUPERSAMPLE {
                for sx in 0..SUPERSAMPLE {
                    let px = x as f64 + (sx as f64 + 0.5) / SUPERSAMPLE as f64 - ox;
                    let py = y as f64 + (sy as f64 + 0.5) / SUPERSAMPLE as f64 - oy;
                    let c = objects
                        .iter()
                        .rev()
                        .find(|o| o.contains(px, py))
                        .map_or(bg, |o| o.color);
                    for k in 0..3 {
                        acc[k] += c[k];
                    }
                }
            }
            for k in 0..3 {
                data[(k * h + y) * w + x] = acc[k] / n;
            }
        }
    }
    f
}

/// Seeded toy clip with a seed-drawn motion direction.
pub fn generate_toy_scene(seed: u64, num_frames: usize, height: usize, width: usize, motion: f64) -> Result<SharpClip> {
    ToyScene::new(num_frames, height, width, motion).render(seed)
}
