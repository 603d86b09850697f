//! Stylized paraspinal phantoms: one ellipse per foreground class on a
//! textured background.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::array::{LabelMap, ScalarMap};
use crate::error::{Error, Result};
use crate::rng;

const MAX_ATTEMPTS: u64 = 64;
const BACKGROUND_INTENSITY: f64 = 0.15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomSpec {
    pub height: usize,
    pub width: usize,
    pub num_foreground_classes: usize,
    /// Deviation from the template layout; scales every anatomy jitter.
    pub atypicality: f64,
    /// Standard deviation of the Gaussian texture noise.
    pub noise_level: f64,
    /// Center jitter in pixels per unit atypicality.
    pub center_jitter: f64,
    /// Log-scale axis jitter per unit atypicality.
    pub axis_jitter: f64,
    /// Orientation jitter in degrees per unit atypicality.
    pub angle_jitter: f64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            height: 128,
            width: 128,
            num_foreground_classes: 4,
            atypicality: 0.0,
            noise_level: 0.05,
            center_jitter: 4.0,
            axis_jitter: 0.15,
            angle_jitter: 12.0,
        }
    }
}

impl PhantomSpec {
    pub fn check(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.height < 8 || self.width < 8 {
            return bad(format!("phantom must be at least 8x8, got {}x{}", self.height, self.width));
        }
        if !(1..=255).contains(&self.num_foreground_classes) {
            return bad(format!(
                "num_foreground_classes must be in [1, 255], got {}",
                self.num_foreground_classes
            ));
        }
        for (name, v) in [
            ("atypicality", self.atypicality),
            ("noise_level", self.noise_level),
            ("center_jitter", self.center_jitter),
            ("axis_jitter", self.axis_jitter),
            ("angle_jitter", self.angle_jitter),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.num_foreground_classes + 1
    }
}

/// Ellipse in pixel coordinates; `angle` in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ellipse {
    pub cx: f64,
    pub cy: f64,
    pub ax: f64,
    pub ay: f64,
    pub angle: f64,
}

impl Ellipse {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (s, c) = self.angle.to_radians().sin_cos();
        let (dx, dy) = (x - self.cx, y - self.cy);
        let u = c * dx + s * dy;
        let v = -s * dx + c * dy;
        (u / self.ax).powi(2) + (v / self.ay).powi(2) <= 1.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    pub image: ScalarMap,
    pub labels: LabelMap,
    pub ellipses: Vec<Ellipse>,
}

/// Template layout. The four-class case is a pair of medial and a pair of
/// lateral muscles mirrored about the midline; other counts fall back to a
/// single row of equal ellipses.
pub fn template(spec: &PhantomSpec) -> Vec<Ellipse> {
    let (w, h) = (spec.width as f64, spec.height as f64);
    let k = spec.num_foreground_classes;
    let norm: Vec<(f64, f64, f64, f64, f64)> = if k == 4 {
        vec![
            (0.41, 0.58, 0.065, 0.11, 10.0),
            (0.59, 0.58, 0.065, 0.11, -10.0),
            (0.22, 0.52, 0.09, 0.13, -15.0),
            (0.78, 0.52, 0.09, 0.13, 15.0),
        ]
    } else {
        let step = 1.0 / k as f64;
        (0..k)
            .map(|i| ((i as f64 + 0.5) * step, 0.5, 0.36 * step, 0.2, 0.0))
            .collect()
    };
    norm.into_iter()
        .map(|(cx, cy, ax, ay, angle)| Ellipse {
            cx: cx * w,
            cy: cy * h,
            ax: ax * w,
            ay: ay * h,
            angle,
        })
        .collect()
}

fn intensity(class: usize) -> f64 {
    if class == 0 {
        BACKGROUND_INTENSITY
    } else {
        0.45 + 0.05 * ((class - 1) % 4) as f64
    }
}

fn render(spec: &PhantomSpec, ellipses: &[Ellipse]) -> Vec<u8> {
    let (h, w) = (spec.height, spec.width);
    let mut labels = vec![0u8; h * w];
    for y in 0..h {
        for x in 0..w {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            if let Some(k) = ellipses.iter().position(|e| e.contains(px, py)) {
                labels[y * w + x] = (k + 1) as u8;
            }
        }
    }
    labels
}

/// Renders one subject. Every ellipse is jittered around the template in
/// proportion to `atypicality`; draws that leave a class empty are
/// rejected and redrawn from the next sub-stream.
pub fn generate_phantom(spec: &PhantomSpec, seed: u64) -> Result<Phantom> {
    spec.check()?;
    let base = template(spec);
    let a = spec.atypicality;
    let (h, w) = (spec.height, spec.width);
    let mut empty = Vec::new();
    for attempt in 0..MAX_ATTEMPTS {
        let mut g = rng::stream(seed, attempt);
        let mut normal = || -> f64 { StandardNormal.sample(&mut g) };
        let ellipses: Vec<Ellipse> = base
            .iter()
            .map(|e| Ellipse {
                cx: e.cx + a * spec.center_jitter * normal(),
                cy: e.cy + a * spec.center_jitter * normal(),
                ax: e.ax * (a * spec.axis_jitter * normal()).exp(),
                ay: e.ay * (a * spec.axis_jitter * normal()).exp(),
                angle: e.angle + a * spec.angle_jitter * normal(),
            })
            .collect();
        let labels = render(spec, &ellipses);
        let mut counts = vec![0usize; spec.num_classes()];
        labels.iter().for_each(|&l| counts[l as usize] += 1);
        empty = (1..spec.num_classes()).filter(|&c| counts[c] == 0).collect();
        if !empty.is_empty() {
            continue;
        }
        let mut noise = rng::stream(rng::derive(seed, 0x7e47), attempt);
        let image: Vec<f32> = labels
            .iter()
            .map(|&l| {
                let z: f64 = StandardNormal.sample(&mut noise);
                (intensity(l as usize) + spec.noise_level * z).max(0.0) as f32
            })
            .collect();
        return Ok(Phantom {
            image: ScalarMap::new(h, w, image)?,
            labels: LabelMap::new(h, w, spec.num_classes(), labels)?,
            ellipses,
        });
    }
    Err(Error::InvalidParameter(format!(
        "phantom generation failed after {MAX_ATTEMPTS} attempts; classes {empty:?} stayed empty \
         (atypicality {a}, {h}x{w})"
    )))
}
