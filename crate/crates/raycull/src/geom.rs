//! Geometric primitives shared across the pipeline: points, rigid poses,
//! and LiDAR scans.
//!
//! All distances are meters, all angles are radians, everywhere. Rotations
//! are stored as row-major 3x3 matrices because that is what odometry pose
//! files provide.

use thiserror::Error;

/// Tolerance for the orthonormality check on rotation matrices, per entry.
pub const ROTATION_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum GeomError {
    #[error(
        "not a rigid transform: rotation must be orthonormal with determinant +1 \
         (tolerance {ROTATION_TOL}) and translation finite"
    )]
    NotARotation,
}

/// A point (or free vector) in some stated frame, in meters.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const ORIGIN: Point3 = Point3 {
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Point3 { x, y, z }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    /// Euclidean norm of the position vector.
    pub fn range(&self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn dot(&self, o: &Point3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn scaled(&self, s: f64) -> Point3 {
        Point3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl std::ops::Add for Point3 {
    type Output = Point3;
    fn add(self, o: Point3) -> Point3 {
        Point3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl std::ops::Sub for Point3 {
    type Output = Point3;
    fn sub(self, o: Point3) -> Point3 {
        Point3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

/// Row-major 3x3 matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mat3 {
    pub m: [f64; 9],
}

impl Mat3 {
    pub const IDENTITY: Mat3 = Mat3 {
        m: [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
    };

    pub fn from_rows(r0: [f64; 3], r1: [f64; 3], r2: [f64; 3]) -> Self {
        Mat3 {
            m: [
                r0[0], r0[1], r0[2], r1[0], r1[1], r1[2], r2[0], r2[1], r2[2],
            ],
        }
    }

    pub fn rotation_z(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Mat3::from_rows([c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0])
    }

    pub fn rotation_x(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Mat3::from_rows([1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c])
    }

    pub fn mul_vec(&self, v: &Point3) -> Point3 {
        let m = &self.m;
        Point3::new(
            m[0] * v.x + m[1] * v.y + m[2] * v.z,
            m[3] * v.x + m[4] * v.y + m[5] * v.z,
            m[6] * v.x + m[7] * v.y + m[8] * v.z,
        )
    }

    pub fn mul_mat(&self, o: &Mat3) -> Mat3 {
        let a = &self.m;
        let b = &o.m;
        let mut r = [0.0; 9];
        for i in 0..3 {
            for j in 0..3 {
                r[3 * i + j] = a[3 * i] * b[j] + a[3 * i + 1] * b[3 + j] + a[3 * i + 2] * b[6 + j];
            }
        }
        Mat3 { m: r }
    }

    pub fn transpose(&self) -> Mat3 {
        let m = &self.m;
        Mat3 {
            m: [m[0], m[3], m[6], m[1], m[4], m[7], m[2], m[5], m[8]],
        }
    }

    pub fn det(&self) -> f64 {
        let m = &self.m;
        m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6])
            + m[2] * (m[3] * m[7] - m[4] * m[6])
    }

    fn is_rotation(&self) -> bool {
        if !self.m.iter().all(|v| v.is_finite()) {
            return false;
        }
        let rrt = self.mul_mat(&self.transpose());
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 1.0 } else { 0.0 };
                if (rrt.m[3 * i + j] - expect).abs() > ROTATION_TOL {
                    return false;
                }
            }
        }
        (self.det() - 1.0).abs() <= ROTATION_TOL
    }
}

/// A rigid transform (rotation + translation), mapping points from one
/// frame into another.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseSE3 {
    pub rotation: Mat3,
    pub translation: Point3,
}

impl PoseSE3 {
    /// Builds a pose, verifying that `rotation` is orthonormal with
    /// determinant +1 within [`ROTATION_TOL`].
    pub fn new(rotation: Mat3, translation: Point3) -> Result<Self, GeomError> {
        if !rotation.is_rotation() || !translation.is_finite() {
            return Err(GeomError::NotARotation);
        }
        Ok(PoseSE3 {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        PoseSE3 {
            rotation: Mat3::IDENTITY,
            translation: Point3::ORIGIN,
        }
    }

    pub fn from_translation(t: Point3) -> Self {
        PoseSE3 {
            rotation: Mat3::IDENTITY,
            translation: t,
        }
    }

    /// Applies the transform: `R * p + t`.
    pub fn transform(&self, p: &Point3) -> Point3 {
        self.rotation.mul_vec(p) + self.translation
    }

    /// Rotates a free vector without translating it.
    pub fn rotate(&self, v: &Point3) -> Point3 {
        self.rotation.mul_vec(v)
    }

    pub fn inverse(&self) -> PoseSE3 {
        let rt = self.rotation.transpose();
        let t = rt.mul_vec(&self.translation).scaled(-1.0);
        PoseSE3 {
            rotation: rt,
            translation: t,
        }
    }

    /// Composition `self * rhs`: apply `rhs` first, then `self`.
    pub fn compose(&self, rhs: &PoseSE3) -> PoseSE3 {
        PoseSE3 {
            rotation: self.rotation.mul_mat(&rhs.rotation),
            translation: self.rotation.mul_vec(&rhs.translation) + self.translation,
        }
    }
}

/// One LiDAR frame: points in the sensor frame plus the sensor-to-world pose
/// at acquisition time.
#[derive(Debug, Clone)]
pub struct Scan {
    pub points: Vec<Point3>,
    pub pose: PoseSE3,
    pub frame_id: usize,
}

impl Scan {
    pub fn new(points: Vec<Point3>, pose: PoseSE3, frame_id: usize) -> Self {
        Scan {
            points,
            pose,
            frame_id,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}
