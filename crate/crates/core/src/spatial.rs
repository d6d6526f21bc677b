//! Six-dimensional spatial vector algebra in Plücker coordinates.
//!
//! Every spatial vector is stored angular-first: `[angular; linear]`. Motion
//! vectors carry `(ω, v)` where `v` is the velocity of the point at the frame
//! origin; force vectors carry `(n, f)` where `n` is the moment about the
//! frame origin.
//!
//! A [`SpatialTransform`] `(R, r)` is a rigid pose mapping coordinates of
//! frame A into frame B: `p_B = R p_A + r`. Transforms stay factored; the
//! dense 6×6 forms exist for test oracles and the articulated-inertia
//! congruence only.

use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use nalgebra::{Matrix3, Matrix6, Rotation3, Unit, Vector3, Vector6};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;
pub type Mat6 = Matrix6<f64>;
pub type Vec6 = Vector6<f64>;

/// Skew-symmetric cross-product matrix: `skew(a) * b == a × b`.
pub fn skew(a: &Vec3) -> Mat3 {
    Mat3::new(0.0, -a.z, a.y, a.z, 0.0, -a.x, -a.y, a.x, 0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SpatialVector {
    pub angular: Vec3,
    pub linear: Vec3,
}

impl SpatialVector {
    pub fn new(angular: Vec3, linear: Vec3) -> Self {
        Self { angular, linear }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn from_vec6(v: &Vec6) -> Self {
        Self {
            angular: Vec3::new(v[0], v[1], v[2]),
            linear: Vec3::new(v[3], v[4], v[5]),
        }
    }

    pub fn to_vec6(&self) -> Vec6 {
        Vec6::new(
            self.angular.x,
            self.angular.y,
            self.angular.z,
            self.linear.x,
            self.linear.y,
            self.linear.z,
        )
    }

    /// Pairing between a motion and a force vector (power).
    pub fn dot(&self, other: &SpatialVector) -> f64 {
        self.angular.dot(&other.angular) + self.linear.dot(&other.linear)
    }

    pub fn is_finite(&self) -> bool {
        self.angular.iter().chain(self.linear.iter()).all(|x| x.is_finite())
    }
}

impl Add for SpatialVector {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        Self::new(self.angular + rhs.angular, self.linear + rhs.linear)
    }
}

impl AddAssign for SpatialVector {
    fn add_assign(&mut self, rhs: Self) {
        self.angular += rhs.angular;
        self.linear += rhs.linear;
    }
}

impl Sub for SpatialVector {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        Self::new(self.angular - rhs.angular, self.linear - rhs.linear)
    }
}

impl Neg for SpatialVector {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.angular, -self.linear)
    }
}

impl Mul<f64> for SpatialVector {
    type Output = Self;
    fn mul(self, s: f64) -> Self {
        Self::new(self.angular * s, self.linear * s)
    }
}

/// Rigid pose `(R, r)`: `p_B = R p_A + r`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpatialTransform {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl Default for SpatialTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl SpatialTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn new(rotation: Mat3, translation: Vec3) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn translation(r: Vec3) -> Self {
        Self::new(Mat3::identity(), r)
    }

    /// Rotation by `angle` about a unit `axis` (right-hand rule).
    pub fn rotation_about(axis: &Vec3, angle: f64) -> Self {
        let rot = Rotation3::from_axis_angle(&Unit::new_unchecked(*axis), angle);
        Self::new(*rot.matrix(), Vec3::zeros())
    }

    /// URDF-style origin: fixed-axis roll, pitch, yaw then translation.
    pub fn from_xyz_rpy(xyz: [f64; 3], rpy: [f64; 3]) -> Self {
        let rot = Rotation3::from_euler_angles(rpy[0], rpy[1], rpy[2]);
        Self::new(*rot.matrix(), Vec3::new(xyz[0], xyz[1], xyz[2]))
    }

    /// `self ∘ other`: first apply `other`, then `self`.
    pub fn compose(&self, other: &SpatialTransform) -> SpatialTransform {
        SpatialTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> SpatialTransform {
        let rt = self.rotation.transpose();
        SpatialTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn apply_point(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn is_valid(&self, tol: f64) -> bool {
        let r = &self.rotation;
        (r.transpose() * r - Mat3::identity()).amax() <= tol
            && (r.determinant() - 1.0).abs() <= tol
            && self.translation.iter().all(|x| x.is_finite())
    }

    /// Express a motion vector given in frame A in frame B.
    pub fn transform_motion(&self, v: &SpatialVector) -> SpatialVector {
        let w = self.rotation * v.angular;
        SpatialVector::new(w, self.rotation * v.linear + self.translation.cross(&w))
    }

    /// Express a force vector given in frame A in frame B.
    pub fn transform_force(&self, f: &SpatialVector) -> SpatialVector {
        let lin = self.rotation * f.linear;
        SpatialVector::new(self.rotation * f.angular + self.translation.cross(&lin), lin)
    }

    /// Express a motion vector given in frame B in frame A.
    pub fn inv_transform_motion(&self, v: &SpatialVector) -> SpatialVector {
        let rt = self.rotation.transpose();
        let w = v.angular;
        SpatialVector::new(rt * w, rt * (v.linear - self.translation.cross(&w)))
    }

    /// Express a force vector given in frame B in frame A.
    pub fn inv_transform_force(&self, f: &SpatialVector) -> SpatialVector {
        let rt = self.rotation.transpose();
        SpatialVector::new(rt * (f.angular - self.translation.cross(&f.linear)), rt * f.linear)
    }

    /// Re-express a dense 6×6 inertia-like operator (motion → force) given
    /// in frame A in frame B, one column at a time through the factored
    /// transforms.
    pub fn transform_inertia(&self, inertia: &Mat6) -> Mat6 {
        let mut out = Mat6::zeros();
        for k in 0..6 {
            let mut e = Vec6::zeros();
            e[k] = 1.0;
            let m_a = self.inv_transform_motion(&SpatialVector::from_vec6(&e));
            let f_a = SpatialVector::from_vec6(&(inertia * m_a.to_vec6()));
            out.set_column(k, &self.transform_force(&f_a).to_vec6());
        }
        out
    }
}

/// Rigid-body inertia: mass, centre of mass and rotational inertia about the
/// link frame origin, all in link coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpatialInertia {
    pub mass: f64,
    pub com: Vec3,
    pub rot_inertia: Mat3,
}

impl SpatialInertia {
    pub fn new(mass: f64, com: Vec3, rot_inertia: Mat3) -> Self {
        Self {
            mass,
            com,
            rot_inertia,
        }
    }

    /// Build from a rotational inertia taken about the centre of mass.
    pub fn from_com_inertia(mass: f64, com: Vec3, inertia_com: Mat3) -> Self {
        let cx = skew(&com);
        Self::new(mass, com, inertia_com - mass * cx * cx)
    }

    /// Rotational inertia about the centre of mass.
    pub fn com_inertia(&self) -> Mat3 {
        let cx = skew(&self.com);
        self.rot_inertia + self.mass * cx * cx
    }

    pub fn point_mass(mass: f64, com: Vec3) -> Self {
        Self::from_com_inertia(mass, com, Mat3::zeros())
    }

    pub fn is_valid(&self) -> bool {
        self.mass > 0.0
            && self.mass.is_finite()
            && (self.rot_inertia - self.rot_inertia.transpose()).amax() <= 1e-12
            && self.com.iter().all(|x| x.is_finite())
    }

    /// Force produced by this inertia under a motion (acceleration or velocity).
    pub fn apply(&self, v: &SpatialVector) -> SpatialVector {
        let mc = self.com * self.mass;
        SpatialVector::new(
            self.rot_inertia * v.angular + mc.cross(&v.linear),
            v.linear * self.mass - mc.cross(&v.angular),
        )
    }

    pub fn to_matrix(&self) -> Mat6 {
        let mcx = skew(&(self.com * self.mass));
        let mut m = Mat6::zeros();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rot_inertia);
        m.fixed_view_mut::<3, 3>(0, 3).copy_from(&mcx);
        m.fixed_view_mut::<3, 3>(3, 0).copy_from(&mcx.transpose());
        m.fixed_view_mut::<3, 3>(3, 3).copy_from(&(Mat3::identity() * self.mass));
        m
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self::new(self.mass * factor, self.com, self.rot_inertia * factor)
    }

    /// Inertia of this body re-expressed through pose `x` (this frame → target frame).
    pub fn transformed(&self, x: &SpatialTransform) -> Self {
        let com = x.apply_point(&self.com);
        let ic = x.rotation * self.com_inertia() * x.rotation.transpose();
        Self::from_com_inertia(self.mass, com, ic)
    }

    /// Sum of two rigid inertias expressed in the same frame.
    pub fn combined(&self, other: &SpatialInertia) -> Self {
        Self::new(
            self.mass + other.mass,
            (self.com * self.mass + other.com * other.mass) / (self.mass + other.mass),
            self.rot_inertia + other.rot_inertia,
        )
    }
}

/// Spatial motion cross product `v ×`.
pub fn cross_motion(v: &SpatialVector, w: &SpatialVector) -> SpatialVector {
    SpatialVector::new(
        v.angular.cross(&w.angular),
        v.angular.cross(&w.linear) + v.linear.cross(&w.angular),
    )
}

/// Spatial force cross product `v ×*`.
pub fn cross_force(v: &SpatialVector, f: &SpatialVector) -> SpatialVector {
    SpatialVector::new(
        v.angular.cross(&f.angular) + v.linear.cross(&f.linear),
        v.angular.cross(&f.linear),
    )
}

/// Joint-permitted motion directions, expressed in the child link frame.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionSubspace {
    columns: Vec<SpatialVector>,
}

impl MotionSubspace {
    pub fn new(columns: Vec<SpatialVector>) -> Self {
        debug_assert!(columns.len() <= 6);
        Self { columns }
    }

    pub fn revolute(axis: Vec3) -> Self {
        Self::new(vec![SpatialVector::new(axis, Vec3::zeros())])
    }

    pub fn prismatic(axis: Vec3) -> Self {
        Self::new(vec![SpatialVector::new(Vec3::zeros(), axis)])
    }

    pub fn fixed() -> Self {
        Self::new(Vec::new())
    }

    pub fn dof(&self) -> usize {
        self.columns.len()
    }

    pub fn columns(&self) -> &[SpatialVector] {
        &self.columns
    }

    /// `S q̇` for a slice of joint rates.
    pub fn motion(&self, rates: &[f64]) -> SpatialVector {
        self.columns
            .iter()
            .zip(rates)
            .fold(SpatialVector::zero(), |acc, (s, &r)| acc + *s * r)
    }

    /// `Sᵀ f`.
    pub fn project_force(&self, f: &SpatialVector) -> Vec<f64> {
        self.columns.iter().map(|s| s.dot(f)).collect()
    }

    pub fn as_matrix(&self) -> nalgebra::DMatrix<f64> {
        let mut m = nalgebra::DMatrix::zeros(6, self.dof());
        for (j, s) in self.columns.iter().enumerate() {
            m.set_column(j, &s.to_vec6());
        }
        m
    }
}
