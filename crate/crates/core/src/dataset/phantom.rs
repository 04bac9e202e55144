//! Rendered stand-in B-scans for running the pipeline without real scans.
//!
//! Background is Rayleigh-distributed speckle, smoothed laterally and
//! attenuated with depth. Each defect is an anisotropic Gaussian echo added
//! on top. [`Polarity::Dark`] inverts the finished image. The recorded box
//! is the region where the echo profile exceeds 10% of its peak.

use rand::Rng as _;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use super::{AnnotatedSample, SourceTag};
use crate::error::{Error, Result};
use crate::geometry::BoundingBox;
use crate::par::{self, Parallelism};
use crate::patch::GrayscalePatch;
use crate::seed;

/// Half-width, in sigmas, of the 10%-of-peak contour of a Gaussian.
const TENTH_PEAK_SIGMAS: f64 = 2.145_966_026_289_347;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    /// Defects brighter than background.
    Bright,
    /// Defects darker than background, as on an inverted-palette display.
    #[default]
    Dark,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomConfig {
    pub count: usize,
    pub width: usize,
    pub height: usize,
    pub defects_min: usize,
    pub defects_max: usize,
    /// Peak echo intensity above (or below) the background.
    pub echo_amplitude: [f64; 2],
    pub echo_sigma_x: [f64; 2],
    pub echo_sigma_y: [f64; 2],
    /// Rayleigh scale of the speckle.
    pub speckle_scale: f64,
    /// Lateral box-blur radius applied to the speckle.
    pub speckle_correlation: usize,
    /// Fractional brightness loss from top to bottom row.
    pub attenuation: f64,
    /// Per-image gain drawn from `1 ± gain_jitter`.
    pub gain_jitter: f64,
    pub polarity: Polarity,
    pub placement_attempts: usize,
    pub id_prefix: String,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self {
            count: 100,
            width: 64,
            height: 64,
            defects_min: 0,
            defects_max: 3,
            echo_amplitude: [70.0, 140.0],
            echo_sigma_x: [1.5, 4.0],
            echo_sigma_y: [0.8, 2.0],
            speckle_scale: 40.0,
            speckle_correlation: 1,
            attenuation: 0.3,
            gain_jitter: 0.15,
            polarity: Polarity::Dark,
            placement_attempts: 200,
            id_prefix: "ph".into(),
        }
    }
}

impl PhantomConfig {
    fn half_extent(sigma: f64) -> u32 {
        ((sigma * TENTH_PEAK_SIGMAS).floor() as u32).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.width == 0 || self.height == 0 {
            return bad("phantom image size must be positive".into());
        }
        if self.defects_min > self.defects_max {
            return bad(format!(
                "defects_min {} exceeds defects_max {}",
                self.defects_min, self.defects_max
            ));
        }
        for (name, r) in [
            ("echo_amplitude", self.echo_amplitude),
            ("echo_sigma_x", self.echo_sigma_x),
            ("echo_sigma_y", self.echo_sigma_y),
        ] {
            if !(r[0] > 0.0 && r[0] <= r[1]) {
                return bad(format!("{name} range {r:?} must be positive and ordered"));
            }
        }
        if self.placement_attempts == 0 {
            return bad("placement_attempts must be at least 1".into());
        }
        let w = 2 * Self::half_extent(self.echo_sigma_x[1]) + 1;
        let h = 2 * Self::half_extent(self.echo_sigma_y[1]) + 1;
        if w as usize > self.width || h as usize > self.height {
            return bad(format!(
                "largest echo box {w}x{h} does not fit a {}x{} image",
                self.width, self.height
            ));
        }
        Ok(())
    }
}

fn uniform(rng: &mut seed::Rng, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.random_range(r[0]..r[1])
    }
}

fn render_one(cfg: &PhantomConfig, index: usize, rng: &mut seed::Rng) -> Result<AnnotatedSample> {
    let (w, h) = (cfg.width, cfg.height);
    let unit = Uniform::new(f64::MIN_POSITIVE, 1.0).unwrap();
    // Rayleigh(σ) = σ·sqrt(-2 ln U)
    let raw: Vec<f64> = (0..w * h)
        .map(|_| cfg.speckle_scale * (-2.0 * unit.sample(rng).ln()).sqrt())
        .collect();
    let r = cfg.speckle_correlation as isize;
    let j = cfg.gain_jitter.abs();
    let gain = 1.0 + uniform(rng, [-j, j]);
    let mut field = vec![0.0; w * h];
    for y in 0..h {
        let depth = 1.0 - cfg.attenuation * y as f64 / (h.max(2) - 1) as f64;
        for x in 0..w {
            let mut acc = 0.0;
            let mut n = 0.0;
            for dx in -r..=r {
                let xx = x as isize + dx;
                if xx >= 0 && (xx as usize) < w {
                    acc += raw[y * w + xx as usize];
                    n += 1.0;
                }
            }
            field[y * w + x] = acc / n * depth * gain;
        }
    }

    let count = if cfg.defects_min == cfg.defects_max {
        cfg.defects_min
    } else {
        rng.random_range(cfg.defects_min..=cfg.defects_max)
    };
    let mut sample = AnnotatedSample::new(GrayscalePatch::filled(w, h, 0), SourceTag::Phantom);
    for k in 0..count {
        let mut placed = None;
        for _ in 0..cfg.placement_attempts {
            let sx = uniform(rng, cfg.echo_sigma_x);
            let sy = uniform(rng, cfg.echo_sigma_y);
            let (hx, hy) = (PhantomConfig::half_extent(sx), PhantomConfig::half_extent(sy));
            let cx = rng.random_range(hx..=(w as u32 - 1 - hx));
            let cy = rng.random_range(hy..=(h as u32 - 1 - hy));
            let b = BoundingBox::new(cx - hx, cy - hy, 2 * hx + 1, 2 * hy + 1);
            if sample.boxes.iter().all(|o| !o.overlaps(&b)) {
                placed = Some((cx, cy, sx, sy, b));
                break;
            }
        }
        // A crowded image keeps the echoes it has once the minimum is met.
        let Some((cx, cy, sx, sy, b)) = placed else {
            if k >= cfg.defects_min {
                break;
            }
            return Err(Error::Config(format!(
                "could not place echo {k} of image {index} without overlap"
            )));
        };
        let amp = uniform(rng, cfg.echo_amplitude);
        for y in b.y..b.bottom() {
            for x in b.x..b.right() {
                let dx = x as f64 - cx as f64;
                let dy = y as f64 - cy as f64;
                let g = (-(dx * dx) / (2.0 * sx * sx) - (dy * dy) / (2.0 * sy * sy)).exp();
                let texture = 0.85 + 0.3 * rng.random::<f64>();
                field[y as usize * w + x as usize] += amp * g * texture;
            }
        }
        sample.push(b, format!("{}-{index}-{k}", cfg.id_prefix));
    }
    sample.image = GrayscalePatch::new(
        w,
        h,
        field
            .iter()
            .map(|v| {
                let v = v.round().clamp(0.0, 255.0) as u8;
                match cfg.polarity {
                    Polarity::Bright => v,
                    Polarity::Dark => 255 - v,
                }
            })
            .collect(),
    )?;
    Ok(sample)
}

/// Render `config.count` phantoms. Image `i` uses a seed derived from
/// `(seed, i)`, so output is identical for any thread count.
pub fn generate_phantom_dataset(config: &PhantomConfig, seed_value: u64) -> Result<Vec<AnnotatedSample>> {
    generate_phantoms_with(config, seed_value, Parallelism::Parallel)
}

pub fn generate_phantoms_with(
    config: &PhantomConfig,
    seed_value: u64,
    mode: Parallelism,
) -> Result<Vec<AnnotatedSample>> {
    config.validate()?;
    par::try_map_indexed(config.count, mode, |i| {
        let mut rng = seed::rng(seed::derive(seed_value, i as u64));
        render_one(config, i, &mut rng)
    })
}
