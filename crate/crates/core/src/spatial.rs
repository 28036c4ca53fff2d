//! Frame, rotation and twist algebra.
//!
//! Conventions used throughout the crate:
//!
//! * A [`RigidTransform`] named `a_from_b` (or `T^a_b`) maps coordinates expressed in
//!   frame `b` into frame `a`. Its translation is the origin of `b` expressed in `a`.
//! * A [`Twist`] is the velocity of a rigid body described at a frame: `linear` is the
//!   velocity of that frame's origin and `angular` the body angular velocity, both
//!   expressed in that frame's axes.
//! * Angles are radians.

use std::ops::Mul;

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;

/// Largest tolerated entry of `RᵀR − I` before a rotation is re-orthonormalized.
pub const ORTHONORMAL_TOL: f64 = 1e-9;

/// Longest accepted step for [`integrate_pose`], in seconds.
pub const MAX_INTEGRATION_STEP: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpatialError {
    #[error("matrix is not a proper rotation (orthonormality residual {residual:e}, det {det})")]
    NotARotation { residual: f64, det: f64 },
    #[error("non-finite component in {0}")]
    NonFinite(&'static str),
    #[error("integration step {0} s outside (0, {MAX_INTEGRATION_STEP}]")]
    StepOutOfRange(f64),
}

pub fn is_finite_vec(v: &Vec3) -> bool {
    v.iter().all(|c| c.is_finite())
}

/// Right-handed cross product.
pub fn cross(a: &Vec3, b: &Vec3) -> Vec3 {
    Vec3::new(
        a.y * b.z - a.z * b.y,
        a.z * b.x - a.x * b.z,
        a.x * b.y - a.y * b.x,
    )
}

fn skew(w: &Vec3) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

/// Proper rotation stored as a 3×3 matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation(Matrix3<f64>);

impl Default for Rotation {
    fn default() -> Self {
        Self::identity()
    }
}

impl Rotation {
    pub fn identity() -> Self {
        Rotation(Matrix3::identity())
    }

    /// Validates orthonormality and `det = +1`, both within [`ORTHONORMAL_TOL`].
    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self, SpatialError> {
        if !m.iter().all(|c| c.is_finite()) {
            return Err(SpatialError::NonFinite("rotation"));
        }
        let residual = orthonormality_residual(&m);
        let det = m.determinant();
        if residual > ORTHONORMAL_TOL || (det - 1.0).abs() > ORTHONORMAL_TOL {
            return Err(SpatialError::NotARotation { residual, det });
        }
        Ok(Rotation(m))
    }

    /// Exponential map of a rotation vector (axis × angle), via Rodrigues' formula.
    pub fn exp(w: &Vec3) -> Self {
        let theta_sq = w.norm_squared();
        let theta = theta_sq.sqrt();
        let (a, b) = if theta < 1e-6 {
            (1.0 - theta_sq / 6.0, 0.5 - theta_sq / 24.0)
        } else {
            (theta.sin() / theta, (1.0 - theta.cos()) / theta_sq)
        };
        let k = skew(w);
        Rotation(Matrix3::identity() + k * a + k * k * b).settled()
    }

    pub fn about_x(angle: f64) -> Self {
        Self::exp(&Vec3::new(angle, 0.0, 0.0))
    }

    pub fn about_y(angle: f64) -> Self {
        Self::exp(&Vec3::new(0.0, angle, 0.0))
    }

    pub fn about_z(angle: f64) -> Self {
        Self::exp(&Vec3::new(0.0, 0.0, angle))
    }

    /// Fixed-axis roll/pitch/yaw: `Rz(yaw) · Ry(pitch) · Rx(roll)`.
    pub fn from_rpy(roll: f64, pitch: f64, yaw: f64) -> Self {
        Self::about_z(yaw) * Self::about_y(pitch) * Self::about_x(roll)
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        Rotation(self.0.transpose())
    }

    pub fn inverse(&self) -> Self {
        self.transpose()
    }

    pub fn axis(&self, i: usize) -> Vec3 {
        self.0.column(i).into_owned()
    }

    pub fn x_axis(&self) -> Vec3 {
        self.axis(0)
    }

    /// Max entry of `|RᵀR − I|`.
    pub fn residual(&self) -> f64 {
        orthonormality_residual(&self.0)
    }

    /// Gram–Schmidt on the columns; the third column is rebuilt as `c0 × c1`.
    pub fn orthonormalized(&self) -> Self {
        let c0 = self.axis(0).normalize();
        let c1 = self.axis(1);
        let c1 = (c1 - c0 * c0.dot(&c1)).normalize();
        let c2 = cross(&c0, &c1);
        Rotation(Matrix3::from_columns(&[c0, c1, c2]))
    }

    fn settled(self) -> Self {
        if self.residual() > ORTHONORMAL_TOL {
            self.orthonormalized()
        } else {
            self
        }
    }

    /// Unit quaternion `[w, x, y, z]` with `w ≥ 0`.
    pub fn to_quaternion(&self) -> [f64; 4] {
        let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(self.0));
        let q = if q.w < 0.0 { -q.into_inner() } else { q.into_inner() };
        [q.w, q.i, q.j, q.k]
    }
}

fn orthonormality_residual(m: &Matrix3<f64>) -> f64 {
    (m.transpose() * m - Matrix3::identity()).abs().max()
}

impl Mul for Rotation {
    type Output = Rotation;

    fn mul(self, rhs: Rotation) -> Rotation {
        Rotation(self.0 * rhs.0).settled()
    }
}

impl Mul<Vec3> for Rotation {
    type Output = Vec3;

    fn mul(self, rhs: Vec3) -> Vec3 {
        self.0 * rhs
    }
}

impl Mul<&Vec3> for &Rotation {
    type Output = Vec3;

    fn mul(self, rhs: &Vec3) -> Vec3 {
        self.0 * rhs
    }
}

/// Rotation plus translation (metres).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RigidTransform {
    pub rotation: Rotation,
    pub translation: Vec3,
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self::default()
    }

    pub fn new(rotation: Rotation, translation: Vec3) -> Result<Self, SpatialError> {
        if !is_finite_vec(&translation) {
            return Err(SpatialError::NonFinite("translation"));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn from_translation(translation: Vec3) -> Self {
        Self {
            rotation: Rotation::identity(),
            translation,
        }
    }

    pub fn from_rotation(rotation: Rotation) -> Self {
        Self {
            rotation,
            translation: Vec3::zeros(),
        }
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation * *p + self.translation
    }

    pub fn transform_vector(&self, v: &Vec3) -> Vec3 {
        self.rotation * *v
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        compose(self, other)
    }
}

impl Mul for RigidTransform {
    type Output = RigidTransform;

    fn mul(self, rhs: RigidTransform) -> RigidTransform {
        compose(&self, &rhs)
    }
}

/// `a ∘ b`, i.e. the transform that applies `b` then `a`.
pub fn compose(a: &RigidTransform, b: &RigidTransform) -> RigidTransform {
    RigidTransform {
        rotation: a.rotation * b.rotation,
        translation: a.rotation * b.translation + a.translation,
    }
}

/// Linear (m/s) and angular (rad/s) velocity of a frame.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Twist {
    pub linear: Vec3,
    pub angular: Vec3,
}

impl Twist {
    pub fn new(linear: Vec3, angular: Vec3) -> Self {
        Self { linear, angular }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        Self {
            linear: Vec3::new(a[0], a[1], a[2]),
            angular: Vec3::new(a[3], a[4], a[5]),
        }
    }

    pub fn to_array(&self) -> [f64; 6] {
        [
            self.linear.x,
            self.linear.y,
            self.linear.z,
            self.angular.x,
            self.angular.y,
            self.angular.z,
        ]
    }

    pub fn is_finite(&self) -> bool {
        is_finite_vec(&self.linear) && is_finite_vec(&self.angular)
    }

    pub fn is_zero(&self) -> bool {
        self.to_array().iter().all(|c| *c == 0.0)
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            linear: self.linear * s,
            angular: self.angular * s,
        }
    }
}

/// Re-expresses a twist at another frame of the same rigid body.
///
/// `target_from_source` maps source coordinates into target coordinates, so its
/// translation `t` is the source origin seen from the target origin, in target axes:
///
/// ```text
/// ω' = R ω
/// v' = R v + t × ω'
/// ```
pub fn transform_twist(tw: &Twist, target_from_source: &RigidTransform) -> Twist {
    let r = &target_from_source.rotation;
    let angular = r * &tw.angular;
    let linear = r * &tw.linear + cross(&target_from_source.translation, &angular);
    Twist { linear, angular }
}

/// First-order body-frame pose update with an exact rotation exponential.
///
/// `tw` is expressed in the body frame of `pose`.
pub fn integrate_pose(
    pose: &RigidTransform,
    tw: &Twist,
    dt: f64,
) -> Result<RigidTransform, SpatialError> {
    if !(dt > 0.0 && dt <= MAX_INTEGRATION_STEP) {
        return Err(SpatialError::StepOutOfRange(dt));
    }
    if !tw.is_finite() {
        return Err(SpatialError::NonFinite("twist"));
    }
    Ok(RigidTransform {
        rotation: pose.rotation * Rotation::exp(&(tw.angular * dt)),
        translation: pose.translation + pose.rotation * (tw.linear * dt),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn random_vec(rng: &mut ChaCha8Rng, scale: f64) -> Vec3 {
        Vec3::new(
            rng.gen_range(-scale..scale),
            rng.gen_range(-scale..scale),
            rng.gen_range(-scale..scale),
        )
    }

    fn random_transform(rng: &mut ChaCha8Rng) -> RigidTransform {
        RigidTransform {
            rotation: Rotation::exp(&random_vec(rng, PI)),
            translation: random_vec(rng, 1.0),
        }
    }

    fn assert_transform_eq(a: &RigidTransform, b: &RigidTransform, tol: f64) {
        assert_abs_diff_eq!(a.rotation.matrix(), b.rotation.matrix(), epsilon = tol);
        assert_abs_diff_eq!(a.translation, b.translation, epsilon = tol);
    }

    #[test]
    fn identity_composition() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = random_transform(&mut rng);
        assert_transform_eq(&compose(&RigidTransform::identity(), &t), &t, 0.0);
        assert_transform_eq(
            &compose(&t, &t.inverse()),
            &RigidTransform::identity(),
            1e-9,
        );
    }

    #[test]
    fn composition_matches_homogeneous_products() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let (a, b, c) = (
                random_transform(&mut rng),
                random_transform(&mut rng),
                random_transform(&mut rng),
            );
            let left = compose(&compose(&a, &b), &c);
            let right = compose(&a, &compose(&b, &c));
            assert_transform_eq(&left, &right, 1e-9);

            // Direct 4x4 product.
            let h = |t: &RigidTransform| {
                let mut m = nalgebra::Matrix4::identity();
                m.fixed_view_mut::<3, 3>(0, 0).copy_from(t.rotation.matrix());
                m.fixed_view_mut::<3, 1>(0, 3).copy_from(&t.translation);
                m
            };
            let direct = h(&a) * h(&b) * h(&c);
            let lh = h(&left);
            assert!((direct - lh).abs().max() < 1e-9);
        }
    }

    #[test]
    fn cross_examples() {
        let z = Vec3::new(0.0, 0.0, 1.0);
        assert_eq!(cross(&z, &Vec3::new(0.1, 0.0, 0.0)), Vec3::new(0.0, 0.1, 0.0));
        let a = Vec3::new(0.3, -1.2, 4.0);
        assert_eq!(cross(&a, &a), Vec3::zeros());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let a = random_vec(&mut rng, 1.0);
            let b = random_vec(&mut rng, 1.0);
            assert!(a.dot(&cross(&a, &b)).abs() < 1e-12);
        }
    }

    #[test]
    fn rotation_validation() {
        assert!(Rotation::from_matrix(Matrix3::identity()).is_ok());
        let reflect = Matrix3::from_diagonal(&Vec3::new(1.0, 1.0, -1.0));
        assert!(matches!(
            Rotation::from_matrix(reflect),
            Err(SpatialError::NotARotation { .. })
        ));
        let skewed = Matrix3::new(1.0, 1e-6, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(Rotation::from_matrix(skewed).is_err());
        let mut nan = Matrix3::identity();
        nan[(1, 2)] = f64::NAN;
        assert_eq!(
            Rotation::from_matrix(nan),
            Err(SpatialError::NonFinite("rotation"))
        );
    }

    #[test]
    fn transform_twist_basic_cases() {
        let tw = Twist::new(Vec3::new(0.1, -0.2, 0.3), Vec3::new(0.5, 0.1, -0.4));
        assert_eq!(transform_twist(&tw, &RigidTransform::identity()), tw);

        let rel = RigidTransform {
            rotation: Rotation::about_z(FRAC_PI_2),
            translation: Vec3::new(0.0, 0.0, 0.1),
        };
        let tw = Twist::new(Vec3::new(0.1, 0.0, 0.0), Vec3::new(0.0, 0.0, 1.0));
        let out = transform_twist(&tw, &rel);
        assert_abs_diff_eq!(out.linear, Vec3::new(0.0, 0.1, 0.0), epsilon = 1e-15);
        assert_abs_diff_eq!(out.angular, Vec3::new(0.0, 0.0, 1.0), epsilon = 1e-15);

        let shift = RigidTransform::from_translation(Vec3::new(0.3, -0.1, 0.7));
        let pure = Twist::new(Vec3::new(0.1, 0.2, 0.3), Vec3::zeros());
        assert_eq!(transform_twist(&pure, &shift).linear, pure.linear);
    }

    #[test]
    fn transform_twist_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..1000 {
            let rel = random_transform(&mut rng);
            let tw = Twist::new(random_vec(&mut rng, 1.0), random_vec(&mut rng, 1.0));
            let back = transform_twist(&transform_twist(&tw, &rel), &rel.inverse());
            assert_abs_diff_eq!(back.linear, tw.linear, epsilon = 1e-9);
            assert_abs_diff_eq!(back.angular, tw.angular, epsilon = 1e-9);
        }
    }

    #[test]
    fn integrate_zero_twist_and_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pose = random_transform(&mut rng);
        let out = integrate_pose(&pose, &Twist::zero(), 0.01).unwrap();
        assert_transform_eq(&out, &pose, 0.0);
        for dt in [0.0, -0.001, 0.1000001, f64::NAN] {
            assert!(matches!(
                integrate_pose(&pose, &Twist::zero(), dt),
                Err(SpatialError::StepOutOfRange(_))
            ));
        }
        assert!(integrate_pose(&pose, &Twist::zero(), 0.1).is_ok());
    }

    #[test]
    fn integrate_axis_aligned_exponential() {
        let tw = Twist::new(Vec3::zeros(), Vec3::new(0.0, 0.0, PI));
        // 0.5 s exceeds the step limit; five 0.1 s steps compose exactly.
        let mut out = RigidTransform::identity();
        for _ in 0..5 {
            out = integrate_pose(&out, &tw, 0.1).unwrap();
        }
        assert_abs_diff_eq!(
            out.rotation.matrix(),
            Rotation::about_z(FRAC_PI_2).matrix(),
            epsilon = 1e-9
        );
        let expected = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        assert_abs_diff_eq!(out.rotation.matrix(), &expected, epsilon = 1e-9);
    }

    #[test]
    fn step_halving_error_is_second_order() {
        // Difference between one step of dt and two steps of dt/2 must shrink ~4x
        // each time dt halves.
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..20 {
            let pose = random_transform(&mut rng);
            let tw = Twist::new(random_vec(&mut rng, 0.5), random_vec(&mut rng, 2.0));
            let gap = |dt: f64| {
                let one = integrate_pose(&pose, &tw, dt).unwrap();
                let half = integrate_pose(&pose, &tw, dt / 2.0).unwrap();
                let two = integrate_pose(&half, &tw, dt / 2.0).unwrap();
                (one.translation - two.translation).norm()
                    + (one.rotation.matrix() - two.rotation.matrix()).abs().max()
            };
            let (g1, g2) = (gap(0.02), gap(0.01));
            let ratio = g1 / g2;
            assert!((3.5..4.5).contains(&ratio), "ratio {ratio}");
            assert!(g2 < 0.5 * 0.01 * 0.01 * (tw.angular.norm() * tw.linear.norm() + 1.0));
        }
    }

    #[test]
    fn orthonormality_survives_long_integration() {
        let mut pose = RigidTransform::identity();
        let tw = Twist::new(Vec3::new(0.01, 0.0, 0.0), Vec3::new(0.7, -1.3, 2.1));
        let step = RigidTransform {
            rotation: Rotation::exp(&Vec3::new(1e-3, 2e-3, -5e-4)),
            translation: Vec3::new(1e-4, 0.0, 0.0),
        };
        for i in 0..1_000_000 {
            pose = if i % 2 == 0 {
                integrate_pose(&pose, &tw, 1e-3).unwrap()
            } else {
                compose(&pose, &step)
            };
        }
        assert!(pose.rotation.residual() < 1e-6);
        assert!((pose.rotation.matrix().determinant() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn orthonormalize_repairs_drift() {
        let mut m = *Rotation::from_rpy(0.3, -0.2, 1.1).matrix();
        m[(0, 1)] += 1e-7;
        let r = Rotation(m).orthonormalized();
        assert!(r.residual() < 1e-14);
        assert!(Rotation(m).settled().residual() < 1e-14);
    }

    #[test]
    fn quaternion_has_nonnegative_scalar() {
        let q = Rotation::about_z(1.9 * PI).to_quaternion();
        assert!(q[0] >= 0.0);
        let n: f64 = q.iter().map(|c| c * c).sum();
        assert_abs_diff_eq!(n, 1.0, epsilon = 1e-12);
        assert_eq!(Rotation::identity().to_quaternion(), [1.0, 0.0, 0.0, 0.0]);
    }
}
