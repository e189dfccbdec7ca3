//! Deterministic synthetic phantoms standing in for anatomical slices.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config, Error, Result};
use crate::image::ImageGrid;

pub const MIN_PHANTOM_SIDE: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PhantomKind {
    SheppLogan,
    Texture,
    Edges,
}

impl PhantomKind {
    fn salt(self) -> u64 {
        match self {
            PhantomKind::SheppLogan => 0x5348_4550,
            PhantomKind::Texture => 0x5445_5854,
            PhantomKind::Edges => 0x4544_4745,
        }
    }
}

impl fmt::Display for PhantomKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PhantomKind::SheppLogan => "shepp-logan",
            PhantomKind::Texture => "texture",
            PhantomKind::Edges => "edges",
        })
    }
}

impl FromStr for PhantomKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "shepp-logan" | "shepp-logan-like" => Ok(PhantomKind::SheppLogan),
            "texture" => Ok(PhantomKind::Texture),
            "edges" => Ok(PhantomKind::Edges),
            other => config(format!(
                "unknown phantom kind `{other}` (expected shepp-logan, texture or edges)"
            )),
        }
    }
}

/// Rotated ellipse in `[-1, 1]²` coordinates.
#[derive(Clone, Copy, Debug)]
struct Ellipse {
    value: f64,
    a: f64,
    b: f64,
    x0: f64,
    y0: f64,
    phi_deg: f64,
}

impl Ellipse {
    fn contains(&self, x: f64, y: f64) -> bool {
        let (s, c) = self.phi_deg.to_radians().sin_cos();
        let (dx, dy) = (x - self.x0, y - self.y0);
        let u = dx * c + dy * s;
        let v = -dx * s + dy * c;
        (u / self.a).powi(2) + (v / self.b).powi(2) <= 1.0
    }
}

const SHEPP_LOGAN: [[f64; 6]; 10] = [
    [1.0, 0.69, 0.92, 0.0, 0.0, 0.0],
    [-0.8, 0.6624, 0.874, 0.0, -0.0184, 0.0],
    [-0.2, 0.11, 0.31, 0.22, 0.0, -18.0],
    [-0.2, 0.16, 0.41, -0.22, 0.0, 18.0],
    [0.1, 0.21, 0.25, 0.0, 0.35, 0.0],
    [0.1, 0.046, 0.046, 0.0, 0.1, 0.0],
    [0.1, 0.046, 0.046, 0.0, -0.1, 0.0],
    [0.1, 0.046, 0.023, -0.08, -0.605, 0.0],
    [0.1, 0.023, 0.023, 0.0, -0.606, 0.0],
    [0.1, 0.023, 0.046, 0.06, -0.605, 0.0],
];

/// Normalized coordinates of pixel `(row, col)` in `[-1, 1]²`, y pointing up.
fn unit_coords(row: usize, col: usize, n: usize) -> (f64, f64) {
    let x = 2.0 * (col as f64 + 0.5) / n as f64 - 1.0;
    let y = 1.0 - 2.0 * (row as f64 + 0.5) / n as f64;
    (x, y)
}

pub fn make_phantom(kind: PhantomKind, n: usize, seed: u64) -> Result<ImageGrid> {
    if n < MIN_PHANTOM_SIDE {
        return config(format!("phantom side {n} is below {MIN_PHANTOM_SIDE}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ kind.salt());
    let img = match kind {
        PhantomKind::SheppLogan => shepp_logan(n, &mut rng),
        PhantomKind::Texture => texture(n, &mut rng),
        PhantomKind::Edges => edges(n, &mut rng),
    };
    Ok(img.clamp01())
}

fn shepp_logan(n: usize, rng: &mut ChaCha8Rng) -> ImageGrid {
    let ellipses: Vec<Ellipse> = SHEPP_LOGAN
        .iter()
        .enumerate()
        .map(|(i, p)| {
            // The two outer shells stay fixed; inner structures wander a little.
            let jitter = if i < 2 { 0.0 } else { 1.0 };
            Ellipse {
                value: p[0] * (1.0 + jitter * rng.random_range(-0.15..0.15)),
                a: p[1] * (1.0 + jitter * rng.random_range(-0.1..0.1)),
                b: p[2] * (1.0 + jitter * rng.random_range(-0.1..0.1)),
                x0: p[3] + jitter * rng.random_range(-0.03..0.03),
                y0: p[4] + jitter * rng.random_range(-0.03..0.03),
                phi_deg: p[5] + jitter * rng.random_range(-8.0..8.0),
            }
        })
        .collect();
    ImageGrid::from_fn(n, n, |r, c| {
        let (x, y) = unit_coords(r, c, n);
        ellipses
            .iter()
            .filter(|e| e.contains(x, y))
            .map(|e| e.value)
            .sum::<f64>() as f32
    })
}

struct Grating {
    amp: f64,
    fx: f64,
    fy: f64,
    phase: f64,
    sharpness: f64,
}

impl Grating {
    /// Near-square wave `tanh(β cos θ) / tanh β`: a fundamental at
    /// 0.08-0.16 cycles/pixel with odd harmonics reaching past half-Nyquist.
    fn at(&self, px: f64, py: f64) -> f64 {
        let c = (2.0 * PI * (self.fx * px + self.fy * py) + self.phase).cos();
        self.amp * (self.sharpness * c).tanh() / self.sharpness.tanh()
    }
}

/// Overlapping elliptical compartments, each carrying one oriented
/// sharp-edged grating (later compartments cover earlier ones). The
/// gratings' fundamentals survive 2x downsampling; their harmonics carry
/// the energy above half-Nyquist.
fn texture(n: usize, rng: &mut ChaCha8Rng) -> ImageGrid {
    let base = rng.random_range(0.4..0.6);
    let regions: Vec<(Ellipse, Grating)> = (0..8)
        .map(|_| {
            let region = Ellipse {
                value: base + rng.random_range(-0.1..0.1),
                a: rng.random_range(0.3..0.7),
                b: rng.random_range(0.3..0.7),
                x0: rng.random_range(-0.6..0.6),
                y0: rng.random_range(-0.6..0.6),
                phi_deg: rng.random_range(0.0..180.0),
            };
            let f = rng.random_range(0.08..0.16);
            let theta = rng.random_range(0.0..PI);
            let grating = Grating {
                amp: rng.random_range(0.1..0.2),
                fx: f * theta.cos(),
                fy: f * theta.sin(),
                phase: rng.random_range(0.0..2.0 * PI),
                sharpness: rng.random_range(10.0..20.0),
            };
            (region, grating)
        })
        .collect();
    ImageGrid::from_fn(n, n, |r, c| {
        let (x, y) = unit_coords(r, c, n);
        match regions.iter().rev().find(|(e, _)| e.contains(x, y)) {
            Some((e, g)) => (e.value + g.at(c as f64, r as f64)) as f32,
            None => base as f32,
        }
    })
}

/// Step edges, linear ramps and a sharp disk on a flat background.
fn edges(n: usize, rng: &mut ChaCha8Rng) -> ImageGrid {
    struct Rect {
        y0: f64,
        y1: f64,
        x0: f64,
        x1: f64,
        value: f64,
        ramp: Option<(f64, f64)>,
    }
    let rects: Vec<Rect> = (0..5)
        .map(|i| {
            let (cx, cy) = (rng.random_range(-0.7..0.7), rng.random_range(-0.7..0.7));
            let (hw, hh) = (rng.random_range(0.1..0.4), rng.random_range(0.1..0.4));
            let ramp = (i % 2 == 1).then(|| {
                let th: f64 = rng.random_range(0.0..2.0 * PI);
                (th.cos() * 0.4, th.sin() * 0.4)
            });
            Rect {
                y0: cy - hh,
                y1: cy + hh,
                x0: cx - hw,
                x1: cx + hw,
                value: rng.random_range(-0.3..0.3),
                ramp,
            }
        })
        .collect();
    let disk = Ellipse {
        value: rng.random_range(0.2..0.4),
        a: rng.random_range(0.1..0.25),
        b: rng.random_range(0.1..0.25),
        x0: rng.random_range(-0.5..0.5),
        y0: rng.random_range(-0.5..0.5),
        phi_deg: rng.random_range(0.0..180.0),
    };
    let background = rng.random_range(0.3..0.5);
    let tilt = (rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1));
    ImageGrid::from_fn(n, n, |r, c| {
        let (x, y) = unit_coords(r, c, n);
        let mut v = background + tilt.0 * x + tilt.1 * y;
        for rc in &rects {
            if x >= rc.x0 && x <= rc.x1 && y >= rc.y0 && y <= rc.y1 {
                v += rc.value;
                if let Some((gx, gy)) = rc.ramp {
                    let (mx, my) = ((rc.x0 + rc.x1) / 2.0, (rc.y0 + rc.y1) / 2.0);
                    v += gx * (x - mx) + gy * (y - my);
                }
            }
        }
        if disk.contains(x, y) {
            v += disk.value;
        }
        v as f32
    })
}
