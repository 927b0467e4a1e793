//! Procedural test panoramas.

use std::fmt;
use std::str::FromStr;

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Error, Result};
use crate::projection::ErpImage;
use crate::sphere::{wrap_longitude, SphericalDirection};

/// Longitude band width of the direction encoding, degrees.
const ENC_THETA_PERIOD: f64 = 36.0;
/// Latitude band width of the direction encoding, degrees.
const ENC_PHI_PERIOD: f64 = 30.0;
// Band edges are offset by half a band so the forward direction sits mid-band.
const ENC_THETA_OFFSET: f64 = 180.0 + ENC_THETA_PERIOD / 2.0;
const ENC_PHI_OFFSET: f64 = 90.0 + ENC_PHI_PERIOD / 2.0;
const ENC_PHI_BANDS: u32 = 7;
const ENC_INDEX_STEP: u32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pattern {
    /// Red/green carry the position within a longitude/latitude band, blue the band index.
    DirectionEncoding,
    Checkerboard,
    GradientHorizon,
}

impl Pattern {
    pub const ALL: [Pattern; 3] = [Pattern::DirectionEncoding, Pattern::Checkerboard, Pattern::GradientHorizon];
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Pattern::DirectionEncoding => "direction",
            Pattern::Checkerboard => "checkerboard",
            Pattern::GradientHorizon => "horizon",
        })
    }
}

impl FromStr for Pattern {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "direction" | "direction-encoding" => Ok(Pattern::DirectionEncoding),
            "checkerboard" => Ok(Pattern::Checkerboard),
            "horizon" | "gradient-horizon" => Ok(Pattern::GradientHorizon),
            other => Err(invalid(format!("unknown pattern '{other}'"))),
        }
    }
}

/// Direction at the center of ERP pixel `(x, y)`, in degrees.
fn pixel_center_angles(x: u32, y: u32, width: u32, height: u32) -> (f64, f64) {
    let theta = 360.0 * (x as f64 + 0.5) / width as f64 - 180.0;
    let phi = 90.0 - 180.0 * (y as f64 + 0.5) / height as f64;
    (theta, phi)
}

/// Color of the direction-encoding pattern for a direction.
pub fn encode_direction(theta_deg: f64, phi_deg: f64) -> [u8; 3] {
    let t = (theta_deg + ENC_THETA_OFFSET).rem_euclid(360.0);
    let band_t = ((t / ENC_THETA_PERIOD).floor() as u32).min(9);
    let frac_t = (t - band_t as f64 * ENC_THETA_PERIOD) / ENC_THETA_PERIOD;

    let p = phi_deg + ENC_PHI_OFFSET;
    let band_p = ((p / ENC_PHI_PERIOD).floor() as u32).min(ENC_PHI_BANDS - 1);
    let frac_p = (p - band_p as f64 * ENC_PHI_PERIOD) / ENC_PHI_PERIOD;

    let index = band_t * ENC_PHI_BANDS + band_p;
    [
        (reflect(band_t, frac_t) * 255.0).round() as u8,
        (reflect(band_p, frac_p).clamp(0.0, 1.0) * 255.0).round() as u8,
        (index * ENC_INDEX_STEP + 1) as u8,
    ]
}

/// Ramps run backwards in odd bands, so each channel is continuous across band edges.
fn reflect(band: u32, frac: f64) -> f64 {
    if band % 2 == 0 {
        frac
    } else {
        1.0 - frac
    }
}

/// Inverse of [`encode_direction`], up to quantization.
pub fn decode_direction(rgb: [u8; 3]) -> SphericalDirection {
    let index = rgb[2] as u32 / ENC_INDEX_STEP;
    let band_t = index / ENC_PHI_BANDS;
    let band_p = index % ENC_PHI_BANDS;
    let frac_t = reflect(band_t, rgb[0] as f64 / 255.0);
    let frac_p = reflect(band_p, rgb[1] as f64 / 255.0);
    let theta = band_t as f64 * ENC_THETA_PERIOD + frac_t * ENC_THETA_PERIOD - ENC_THETA_OFFSET;
    let phi = band_p as f64 * ENC_PHI_PERIOD + frac_p * ENC_PHI_PERIOD - ENC_PHI_OFFSET;
    SphericalDirection::new(wrap_longitude(theta), phi.clamp(-90.0, 90.0)).expect("decoded angles are in range")
}

/// Generates a deterministic panorama. The seed varies palette and layout
/// for the checkerboard and horizon patterns; the direction encoding ignores it.
pub fn synthesize(width: u32, height: u32, pattern: Pattern, seed: u64) -> Result<ErpImage> {
    if width < 2 || height < 2 {
        return Err(invalid(format!("panorama size {width}x{height} must be at least 2x2")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let img = match pattern {
        Pattern::DirectionEncoding => RgbImage::from_fn(width, height, |x, y| {
            let (t, p) = pixel_center_angles(x, y, width, height);
            Rgb(encode_direction(t, p))
        }),
        Pattern::Checkerboard => {
            let cell = [10.0, 15.0, 20.0, 30.0][rng.random_range(0..4)];
            let a: [u8; 3] = rng.random();
            let b: [u8; 3] = [255 - a[0], 255 - a[1], 255 - a[2]];
            RgbImage::from_fn(width, height, |x, y| {
                let (t, p) = pixel_center_angles(x, y, width, height);
                let parity = ((t + 180.0) / cell).floor() as i64 + ((p + 90.0) / cell).floor() as i64;
                Rgb(if parity.rem_euclid(2) == 0 { a } else { b })
            })
        }
        Pattern::GradientHorizon => horizon_scene(width, height, &mut rng),
    };
    ErpImage::from_rgb(img)
}

struct Blob {
    theta: f64,
    phi: f64,
    radius: f64,
    color: [u8; 3],
}

fn horizon_scene(width: u32, height: u32, rng: &mut ChaCha8Rng) -> RgbImage {
    let tilt: f64 = rng.random_range(-6.0..6.0);
    let phase: f64 = rng.random_range(-180.0..180.0);
    let base: f64 = rng.random_range(-12.0..12.0);
    let sky_top = [rng.random_range(20..80), rng.random_range(60..140), rng.random_range(160..255)];
    let sky_low = [rng.random_range(170..240), rng.random_range(190..240), rng.random_range(200..255)];
    let ground = [rng.random_range(40..120), rng.random_range(70..140), rng.random_range(20..80)];
    let blobs: Vec<Blob> = (0..6)
        .map(|_| Blob {
            theta: rng.random_range(-180.0..180.0),
            phi: rng.random_range(-25.0..25.0),
            radius: rng.random_range(3.0..12.0),
            color: rng.random(),
        })
        .collect();

    RgbImage::from_fn(width, height, |x, y| {
        let (t, p) = pixel_center_angles(x, y, width, height);
        for b in &blobs {
            let dt = wrap_longitude(t - b.theta) * b.phi.to_radians().cos();
            let dp = p - b.phi;
            if dt * dt + dp * dp < b.radius * b.radius {
                return Rgb(b.color);
            }
        }
        let horizon = base + tilt * (t + phase).to_radians().sin();
        if p > horizon {
            let s = ((p - horizon) / (90.0 - horizon).max(1e-6)).clamp(0.0, 1.0);
            Rgb(std::array::from_fn(|c| {
                (sky_low[c] as f64 * (1.0 - s) + sky_top[c] as f64 * s).round() as u8
            }))
        } else {
            let s = ((horizon - p) / (horizon + 90.0).max(1e-6)).clamp(0.0, 1.0);
            Rgb(std::array::from_fn(|c| (ground[c] as f64 * (1.0 - 0.6 * s)).round() as u8))
        }
    })
}
