//! Mapping between equirectangular (ERP) pixels, sphere directions and
//! perspective-view pixels, plus perspective view rendering.
//!
//! Pixel coordinates are 0-based and continuous. View pixel `(i, j)` has
//! column `i` growing to the right and row `j` growing downwards; the camera
//! frame uses `+y` up, so the row offset is negated when building rays.
//! ERP pixel `(k, l)` covers `[k, k+1) × [l, l+1)` and is sampled at its
//! center.

use std::f64::consts::PI;
use std::path::Path;

use image::{ImageReader, Rgb, RgbImage};
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::linalg::{camera_to_world, rot_x};
use crate::sphere::{dir_to_vec, vec_to_dir, wrap_longitude, SphericalDirection, SphericalRect, UnitVector3};

pub const DEFAULT_FOV_Y_DEG: f64 = 60.0;
pub const DEFAULT_VIEW_WIDTH: u32 = 1024;
pub const DEFAULT_VIEW_HEIGHT: u32 = 768;

/// Fractional bits of the fixed-point bilinear sampler.
const SUBPIXEL_BITS: u32 = 8;
const SUBPIXEL_ONE: i64 = 1 << SUBPIXEL_BITS;

/// Pinhole intrinsics with square pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fov_x: f64,
    pub fov_y: f64,
    pub width: u32,
    pub height: u32,
    pub fx: f64,
    pub fy: f64,
    /// Principal point column, `(w − 1) / 2`.
    pub cx: f64,
    /// Principal point row, `(h − 1) / 2`.
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn from_fov(fov_y_deg: f64, width: u32, height: u32) -> Result<Self> {
        intrinsics_from_fov(fov_y_deg, width, height)
    }
}

impl Default for CameraIntrinsics {
    fn default() -> Self {
        intrinsics_from_fov(DEFAULT_FOV_Y_DEG, DEFAULT_VIEW_WIDTH, DEFAULT_VIEW_HEIGHT)
            .expect("default intrinsics are valid")
    }
}

pub fn intrinsics_from_fov(fov_y_deg: f64, width: u32, height: u32) -> Result<CameraIntrinsics> {
    if !(fov_y_deg > 0.0 && fov_y_deg < 180.0) {
        return Err(invalid(format!("fov_y = {fov_y_deg}° must lie in (0, 180)")));
    }
    if width < 2 || height < 2 {
        return Err(invalid(format!("view size {width}x{height} must be at least 2x2")));
    }
    let (w, h) = (width as f64, height as f64);
    let half_y = fov_y_deg.to_radians() / 2.0;
    let fy = h / (2.0 * half_y.tan());
    let fov_x = 2.0 * ((w / h) * half_y.tan()).atan().to_degrees();
    let fx = w / (2.0 * (fov_x.to_radians() / 2.0).tan());
    Ok(CameraIntrinsics {
        fov_x,
        fov_y: fov_y_deg,
        width,
        height,
        fx,
        fy,
        cx: (w - 1.0) / 2.0,
        cy: (h - 1.0) / 2.0,
    })
}

/// Camera orientation: yaw `theta` and pitch `phi` in degrees. Roll is always zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraPose {
    theta: f64,
    phi: f64,
}

impl CameraPose {
    /// Wraps yaw into `[-180, 180)` and rejects pitch outside `[-90, 90]`.
    pub fn new(theta_deg: f64, phi_deg: f64) -> Result<Self> {
        let d = SphericalDirection::new(theta_deg, phi_deg)?;
        Ok(Self {
            theta: d.theta(),
            phi: d.phi(),
        })
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn phi(&self) -> f64 {
        self.phi
    }

    pub fn roll(&self) -> f64 {
        0.0
    }

    pub fn direction(&self) -> SphericalDirection {
        SphericalDirection::new(self.theta, self.phi).expect("pose angles are in range")
    }
}

impl Default for CameraPose {
    fn default() -> Self {
        Self { theta: 0.0, phi: 0.0 }
    }
}

fn camera_ray(i: f64, j: f64, k: &CameraIntrinsics) -> [f64; 3] {
    [(i - k.cx) / k.fx, -(j - k.cy) / k.fy, 1.0]
}

pub fn view_pixel_to_sphere(i: f64, j: f64, k: &CameraIntrinsics, pose: &CameraPose) -> SphericalDirection {
    let world = camera_to_world(pose.theta, pose.phi).mul_vec(camera_ray(i, j, k));
    let v = UnitVector3::from_array(world).expect("camera rays are never zero");
    vec_to_dir(v)
}

/// Forward camera model. Returns `None` for directions behind the camera.
pub fn sphere_to_view_pixel(d: SphericalDirection, k: &CameraIntrinsics, pose: &CameraPose) -> Option<(f64, f64)> {
    let cam = camera_to_world(pose.theta, pose.phi).tmul_vec(dir_to_vec(d).as_array());
    if cam[2] <= 0.0 {
        return None;
    }
    Some((k.fx * cam[0] / cam[2] + k.cx, -k.fy * cam[1] / cam[2] + k.cy))
}

pub fn sphere_to_erp_pixel(d: SphericalDirection, width: u32, height: u32) -> (f64, f64) {
    let theta = d.theta().to_radians();
    let phi = d.phi().to_radians();
    (
        (theta / (2.0 * PI) + 0.5) * width as f64,
        (-phi / PI + 0.5) * height as f64,
    )
}

pub fn erp_pixel_to_sphere(u: f64, v: f64, width: u32, height: u32) -> SphericalDirection {
    let theta = 2.0 * PI * u / width as f64 - PI;
    let phi = -PI * v / height as f64 + PI / 2.0;
    SphericalDirection::new(theta.to_degrees(), phi.to_degrees().clamp(-90.0, 90.0))
        .expect("finite ERP coordinates map onto the sphere")
}

pub fn view_rect_of(pose: &CameraPose, k: &CameraIntrinsics) -> SphericalRect {
    SphericalRect::new(pose.direction(), k.fov_x, k.fov_y).expect("intrinsics FOVs are in (0, 180)")
}

/// An equirectangular panorama, immutable once loaded.
#[derive(Debug, Clone)]
pub struct ErpImage {
    pixels: RgbImage,
}

impl ErpImage {
    pub fn from_rgb(pixels: RgbImage) -> Result<Self> {
        let (w, h) = pixels.dimensions();
        if w < 2 || h < 2 {
            return Err(invalid(format!("panorama {w}x{h} must be at least 2x2")));
        }
        if w != 2 * h {
            log::warn!("panorama is {w}x{h}, not the usual 2:1 aspect");
        }
        Ok(Self { pixels })
    }

    pub fn open(path: &Path) -> Result<Self> {
        let img = ImageReader::open(path)
            .map_err(|source| Error::Io {
                path: path.to_path_buf(),
                source,
            })?
            .with_guessed_format()
            .map_err(|source| Error::Io {
                path: path.to_path_buf(),
                source,
            })?
            .decode()
            .map_err(|source| Error::Image {
                path: path.to_path_buf(),
                source,
            })?;
        Self::from_rgb(img.into_rgb8())
    }

    pub fn width(&self) -> u32 {
        self.pixels.width()
    }

    pub fn height(&self) -> u32 {
        self.pixels.height()
    }

    pub fn pixels(&self) -> &RgbImage {
        &self.pixels
    }

    pub fn to_jpeg_bytes(&self, quality: u8) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        image::codecs::jpeg::JpegEncoder::new_with_quality(&mut out, quality)
            .encode_image(&self.pixels)
            .map_err(|e| Error::Format(format!("JPEG encoding failed: {e}")))?;
        Ok(out)
    }
}

/// Where a rendered view came from.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewProvenance {
    pub scene_id: Option<String>,
    pub pose: CameraPose,
    pub intrinsics: CameraIntrinsics,
}

#[derive(Debug, Clone)]
pub struct ViewImage {
    pub pixels: RgbImage,
    pub provenance: ViewProvenance,
}

impl ViewImage {
    pub fn width(&self) -> u32 {
        self.pixels.width()
    }

    pub fn height(&self) -> u32 {
        self.pixels.height()
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.pixels
            .save_with_format(path, image::ImageFormat::Png)
            .map_err(|source| Error::Image {
                path: path.to_path_buf(),
                source,
            })
    }

    pub fn to_png_bytes(&self) -> Result<Vec<u8>> {
        let mut out = std::io::Cursor::new(Vec::new());
        self.pixels
            .write_to(&mut out, image::ImageFormat::Png)
            .map_err(|e| Error::Format(format!("PNG encoding failed: {e}")))?;
        Ok(out.into_inner())
    }
}

/// Renders the perspective view seen at `pose` through `k`.
///
/// Sampling is bilinear in 8-bit fixed point: longitude wraps across the
/// ±180° seam and latitude clamps at the poles. The yaw enters as an exact
/// fixed-point column shift, so rendering at a yaw that is a multiple of
/// `360 / W` degrees equals rendering a horizontally rolled panorama at yaw 0.
pub fn render_view(erp: &ErpImage, pose: &CameraPose, k: &CameraIntrinsics) -> ViewImage {
    let (ew, eh) = (erp.width() as i64, erp.height() as i64);
    let (vw, vh) = (k.width as usize, k.height as usize);
    let pitch = rot_x(pose.phi.to_radians());
    let yaw_shift = (pose.theta / 360.0 * ew as f64 * SUBPIXEL_ONE as f64).round() as i64;
    let src = erp.pixels.as_raw();

    let mut out = vec![0u8; vw * vh * 3];
    out.par_chunks_mut(vw * 3).enumerate().for_each(|(j, row)| {
        let y = -(j as f64 - k.cy) / k.fy;
        for i in 0..vw {
            let x = (i as f64 - k.cx) / k.fx;
            let p = pitch.mul_vec([x, y, 1.0]);
            let lon = p[0].atan2(p[2]);
            let lat = p[1].atan2(p[0].hypot(p[2]));
            // continuous ERP coordinates, shifted to pixel-center sampling
            let su = (lon / (2.0 * PI) + 0.5) * ew as f64 - 0.5;
            let sv = ((-lat / PI + 0.5) * eh as f64 - 0.5).clamp(0.0, (eh - 1) as f64);

            let fu = (su * SUBPIXEL_ONE as f64).round() as i64 + yaw_shift;
            let fv = (sv * SUBPIXEL_ONE as f64).round() as i64;
            let (x0, wx) = (fu >> SUBPIXEL_BITS, fu & (SUBPIXEL_ONE - 1));
            let (y0, wy) = (fv >> SUBPIXEL_BITS, fv & (SUBPIXEL_ONE - 1));
            let x0w = x0.rem_euclid(ew);
            let x1w = (x0 + 1).rem_euclid(ew);
            let y1 = (y0 + 1).min(eh - 1);

            let idx = |xx: i64, yy: i64| ((yy * ew + xx) * 3) as usize;
            let (p00, p10, p01, p11) = (idx(x0w, y0), idx(x1w, y0), idx(x0w, y1), idx(x1w, y1));
            let w00 = (SUBPIXEL_ONE - wx) * (SUBPIXEL_ONE - wy);
            let w10 = wx * (SUBPIXEL_ONE - wy);
            let w01 = (SUBPIXEL_ONE - wx) * wy;
            let w11 = wx * wy;
            for c in 0..3 {
                let acc = w00 * src[p00 + c] as i64
                    + w10 * src[p10 + c] as i64
                    + w01 * src[p01 + c] as i64
                    + w11 * src[p11 + c] as i64;
                row[i * 3 + c] = ((acc + (1 << (2 * SUBPIXEL_BITS - 1))) >> (2 * SUBPIXEL_BITS)) as u8;
            }
        }
    });

    ViewImage {
        pixels: RgbImage::from_raw(k.width, k.height, out).expect("buffer matches view size"),
        provenance: ViewProvenance {
            scene_id: None,
            pose: *pose,
            intrinsics: *k,
        },
    }
}

/// Shifts every row of a panorama left by `shift` columns (wrapping).
pub fn roll_columns(erp: &ErpImage, shift: i64) -> ErpImage {
    let (w, h) = erp.pixels.dimensions();
    let rolled = RgbImage::from_fn(w, h, |x, y| {
        let sx = (x as i64 + shift).rem_euclid(w as i64) as u32;
        *erp.pixels.get_pixel(sx, y)
    });
    ErpImage { pixels: rolled }
}

/// Uniform-color panorama.
pub fn constant_erp(width: u32, height: u32, color: [u8; 3]) -> Result<ErpImage> {
    ErpImage::from_rgb(RgbImage::from_pixel(width, height, Rgb(color)))
}

/// Great-circle distance in degrees between two directions.
pub fn angular_distance(a: SphericalDirection, b: SphericalDirection) -> f64 {
    dir_to_vec(a).angle_to(&dir_to_vec(b))
}

/// Offsets a pose by `(d_theta, d_phi)` degrees, wrapping yaw and clamping pitch.
pub fn offset_pose_clamped(pose: &CameraPose, d_theta: f64, d_phi: f64) -> CameraPose {
    CameraPose {
        theta: wrap_longitude(pose.theta + d_theta),
        phi: (pose.phi + d_phi).clamp(-90.0, 90.0),
    }
}
