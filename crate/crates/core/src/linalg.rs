//! Minimal fixed-size vector and rotation helpers shared by the geometry and
//! projection code.

pub(crate) type Vec3 = [f64; 3];

#[inline]
pub(crate) fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub(crate) fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub(crate) fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub(crate) fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[inline]
pub(crate) fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub(crate) fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

/// Row-major 3x3 matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Mat3(pub [[f64; 3]; 3]);

impl Mat3 {
    pub(crate) fn mul_vec(&self, v: Vec3) -> Vec3 {
        let m = &self.0;
        [dot(m[0], v), dot(m[1], v), dot(m[2], v)]
    }

    /// `selfᵀ · v`, the inverse rotation for orthonormal matrices.
    pub(crate) fn tmul_vec(&self, v: Vec3) -> Vec3 {
        let m = &self.0;
        [
            m[0][0] * v[0] + m[1][0] * v[1] + m[2][0] * v[2],
            m[0][1] * v[0] + m[1][1] * v[1] + m[2][1] * v[2],
            m[0][2] * v[0] + m[1][2] * v[1] + m[2][2] * v[2],
        ]
    }

    pub(crate) fn mul(&self, other: &Mat3) -> Mat3 {
        let mut out = [[0.0; 3]; 3];
        for (r, row) in out.iter_mut().enumerate() {
            for (c, cell) in row.iter_mut().enumerate() {
                *cell = (0..3).map(|k| self.0[r][k] * other.0[k][c]).sum();
            }
        }
        Mat3(out)
    }
}

/// Rotation about the vertical (y) axis. Carries +z towards +x for positive angles.
pub(crate) fn rot_y(rad: f64) -> Mat3 {
    let (s, c) = rad.sin_cos();
    Mat3([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])
}

/// Rotation about the horizontal (x) axis. Carries +z towards +y (up) for positive angles.
pub(crate) fn rot_x(rad: f64) -> Mat3 {
    let (s, c) = rad.sin_cos();
    Mat3([[1.0, 0.0, 0.0], [0.0, c, s], [0.0, -s, c]])
}

/// Camera-to-world rotation `Ry(yaw) · Rx(pitch)` with angles in degrees.
pub(crate) fn camera_to_world(yaw_deg: f64, pitch_deg: f64) -> Mat3 {
    rot_y(yaw_deg.to_radians()).mul(&rot_x(pitch_deg.to_radians()))
}
