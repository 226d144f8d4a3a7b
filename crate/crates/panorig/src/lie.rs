//! SE(3)/se(3): hat operator, exponential and logarithm maps, composition,
//! and the analytic Jacobian of a transformed point with respect to a left
//! perturbation of the pose.
//!
//! Convention used everywhere a 6-vector appears: translation part first,
//! `xi = [rho, phi]`, with `phi` an axis-angle rotation vector. Perturbations
//! are applied on the left: `T <- exp(delta^) * T`.

use crate::error::{Error, Result};
use nalgebra::{Matrix3, Matrix3x6, Vector3, Vector6};

/// Angle below which the Rodrigues terms switch to their Taylor series.
const SMALL_ANGLE: f64 = 1e-8;

/// Margin around pi inside which the logarithm refuses to evaluate.
const PI_MARGIN: f64 = 1e-6;

/// An element of se(3): translation part `rho`, rotation part `phi` (radians).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Twist {
    pub rho: Vector3<f64>,
    pub phi: Vector3<f64>,
}

impl Twist {
    pub fn new(rho: Vector3<f64>, phi: Vector3<f64>) -> Self {
        Self { rho, phi }
    }

    pub fn zero() -> Self {
        Self::new(Vector3::zeros(), Vector3::zeros())
    }

    /// Packs as `[rho, phi]`.
    pub fn as_vector(&self) -> Vector6<f64> {
        Vector6::new(
            self.rho.x, self.rho.y, self.rho.z, self.phi.x, self.phi.y, self.phi.z,
        )
    }

    pub fn from_vector(v: &Vector6<f64>) -> Self {
        Self::new(Vector3::new(v[0], v[1], v[2]), Vector3::new(v[3], v[4], v[5]))
    }

    pub fn norm(&self) -> f64 {
        self.as_vector().norm()
    }
}

/// A rigid transform in SE(3).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Pose {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self { rotation, translation }
    }

    pub fn identity() -> Self {
        Self::new(Matrix3::identity(), Vector3::zeros())
    }

    /// `self ∘ other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose::new(
            self.rotation * other.rotation,
            self.rotation * other.translation + self.translation,
        )
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose::new(rt, -(rt * self.translation))
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Frobenius deviation from orthonormality plus determinant deviation
    /// from +1; near zero for a valid rotation.
    pub fn rotation_defect(&self) -> f64 {
        let d = self.rotation.transpose() * self.rotation - Matrix3::identity();
        d.norm() + (self.rotation.determinant() - 1.0).abs()
    }

    /// Serializes as 12 numbers, the row-major 3x4 matrix `[R | t]`.
    pub fn to_row_major(&self) -> [f64; 12] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)], r[(0, 1)], r[(0, 2)], t[0],
            r[(1, 0)], r[(1, 1)], r[(1, 2)], t[1],
            r[(2, 0)], r[(2, 1)], r[(2, 2)], t[2],
        ]
    }

    pub fn from_row_major(v: &[f64; 12]) -> Self {
        Pose::new(
            Matrix3::new(v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10]),
            Vector3::new(v[3], v[7], v[11]),
        )
    }
}

/// Anti-symmetric 3x3 matrix; `m + m^T = 0` by construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SkewMatrix(pub Matrix3<f64>);

/// Maps a 3-vector to its cross-product matrix: `hat3(v) * w = v x w`.
pub fn hat3(v: &Vector3<f64>) -> SkewMatrix {
    SkewMatrix(Matrix3::new(
        0.0, -v.z, v.y,
        v.z, 0.0, -v.x,
        -v.y, v.x, 0.0,
    ))
}

fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

/// Rodrigues rotation for an axis-angle vector.
fn rodrigues(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta = phi.norm();
    let k = hat3(phi).0;
    let k2 = k * k;
    let (a, b) = if theta < SMALL_ANGLE {
        let t2 = theta * theta;
        (1.0 - t2 / 6.0, 0.5 - t2 / 24.0)
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / (theta * theta))
    };
    Matrix3::identity() + k * a + k2 * b
}

/// Left Jacobian of SO(3), converting `rho` to the group translation.
fn left_jacobian(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta = phi.norm();
    let k = hat3(phi).0;
    let k2 = k * k;
    let (b, c) = if theta < SMALL_ANGLE {
        let t2 = theta * theta;
        (0.5 - t2 / 24.0, 1.0 / 6.0 - t2 / 120.0)
    } else {
        let t2 = theta * theta;
        ((1.0 - theta.cos()) / t2, (theta - theta.sin()) / (t2 * theta))
    };
    Matrix3::identity() + k * b + k2 * c
}

fn left_jacobian_inv(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta = phi.norm();
    let k = hat3(phi).0;
    let k2 = k * k;
    let c = if theta < SMALL_ANGLE {
        1.0 / 12.0 + theta * theta / 720.0
    } else {
        let half = 0.5 * theta;
        (1.0 - half * half.cos() / half.sin()) / (theta * theta)
    };
    Matrix3::identity() - k * 0.5 + k2 * c
}

/// Exponential map se(3) -> SE(3).
pub fn exp_map(xi: &Twist) -> Pose {
    Pose::new(rodrigues(&xi.phi), left_jacobian(&xi.phi) * xi.rho)
}

/// Logarithm map SE(3) -> se(3).
///
/// Fails with `AngleNearPi` when the rotation angle is within `1e-6` of pi,
/// where the axis is not recoverable to useful precision.
pub fn log_map(pose: &Pose) -> Result<Twist> {
    let r = &pose.rotation;
    let cos_theta = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let theta = cos_theta.acos();
    if theta > std::f64::consts::PI - PI_MARGIN {
        return Err(Error::AngleNearPi(std::f64::consts::PI - theta));
    }
    let anti = (r - r.transpose()) * 0.5;
    let phi = if theta < SMALL_ANGLE {
        // sin(theta)/theta ~ 1 - theta^2/6
        vee(&anti) * (1.0 + theta * theta / 6.0)
    } else {
        vee(&anti) * (theta / theta.sin())
    };
    let rho = left_jacobian_inv(&phi) * pose.translation;
    Ok(Twist::new(rho, phi))
}

/// Derivative of `exp(delta^) * (T p)` with respect to `delta` at zero:
/// `[ I_3 | -hat3(T p) ]`, translation block first.
pub fn point_jacobian(pose: &Pose, p: &Vector3<f64>) -> Matrix3x6<f64> {
    let q = pose.transform_point(p);
    let s = hat3(&q).0;
    let mut j = Matrix3x6::zeros();
    j.fixed_view_mut::<3, 3>(0, 0).copy_from(&Matrix3::identity());
    j.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-s));
    j
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    #[test]
    fn hat3_matches_displayed_matrix() {
        let m = hat3(&Vector3::new(1.0, 2.0, 3.0)).0;
        let expected = Matrix3::new(0.0, -3.0, 2.0, 3.0, 0.0, -1.0, -2.0, 1.0, 0.0);
        assert_eq!(m, expected);
        assert_eq!(hat3(&Vector3::zeros()).0, Matrix3::zeros());
    }

    #[test]
    fn hat3_is_cross_product() {
        let v = Vector3::new(1.0, 0.0, 0.0);
        let w = Vector3::new(0.0, 1.0, 0.0);
        assert_eq!(hat3(&v).0 * w, Vector3::new(0.0, 0.0, 1.0));
    }

    #[test]
    fn exp_of_zero_is_identity() {
        let p = exp_map(&Twist::zero());
        assert_eq!(p.rotation, Matrix3::identity());
        assert_eq!(p.translation, Vector3::zeros());
    }

    #[test]
    fn exp_quarter_turn_about_z() {
        let p = exp_map(&Twist::new(Vector3::zeros(), Vector3::new(0.0, 0.0, PI / 2.0)));
        let expected = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        assert_abs_diff_eq!(p.rotation, expected, epsilon = 1e-15);
        assert_abs_diff_eq!(p.translation, Vector3::zeros(), epsilon = 1e-15);
    }

    #[test]
    fn exp_pure_translation() {
        let p = exp_map(&Twist::new(Vector3::new(1.0, 0.0, 0.0), Vector3::zeros()));
        assert_eq!(p.rotation, Matrix3::identity());
        assert_eq!(p.translation, Vector3::new(1.0, 0.0, 0.0));
    }

    #[test]
    fn log_of_identity_is_zero() {
        let xi = log_map(&Pose::identity()).unwrap();
        assert_eq!(xi.as_vector(), Vector6::zeros());
    }

    #[test]
    fn log_exp_round_trip() {
        let xi = Twist::from_vector(&Vector6::new(0.1, -0.2, 0.3, 0.05, 0.1, -0.15));
        let back = log_map(&exp_map(&xi)).unwrap();
        assert_abs_diff_eq!(back.as_vector(), xi.as_vector(), epsilon = 1e-9);
    }

    #[test]
    fn log_refuses_near_pi() {
        let pose = exp_map(&Twist::new(
            Vector3::zeros(),
            Vector3::new(0.0, 0.0, PI - 1e-9),
        ));
        assert!(matches!(log_map(&pose), Err(Error::AngleNearPi(_))));
    }

    #[test]
    fn point_jacobian_at_origin() {
        let j = point_jacobian(&Pose::identity(), &Vector3::zeros());
        assert_eq!(j.fixed_view::<3, 3>(0, 0).into_owned(), Matrix3::identity());
        assert_eq!(j.fixed_view::<3, 3>(0, 3).into_owned(), Matrix3::zeros());
    }

    #[test]
    fn point_jacobian_rotation_block() {
        let j = point_jacobian(&Pose::identity(), &Vector3::new(1.0, 2.0, 3.0));
        let expected = Matrix3::new(0.0, 3.0, -2.0, -3.0, 0.0, 1.0, 2.0, -1.0, 0.0);
        assert_eq!(j.fixed_view::<3, 3>(0, 3).into_owned(), expected);
    }

    /// Finite-difference oracle for the point Jacobian.
    fn numeric_point_jacobian(pose: &Pose, p: &Vector3<f64>) -> Matrix3x6<f64> {
        let h = 1e-6;
        let mut j = Matrix3x6::zeros();
        for k in 0..6 {
            let mut dp = Vector6::zeros();
            dp[k] = h;
            let dm = -dp;
            let fwd = exp_map(&Twist::from_vector(&dp)).compose(pose).transform_point(p);
            let bwd = exp_map(&Twist::from_vector(&dm)).compose(pose).transform_point(p);
            j.set_column(k, &((fwd - bwd) / (2.0 * h)));
        }
        j
    }

    #[test]
    fn point_jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..1000 {
            let xi = Twist::new(
                Vector3::from_fn(|_, _| rng.gen_range(-10.0..10.0)),
                Vector3::from_fn(|_, _| rng.gen_range(-2.0..2.0)),
            );
            let pose = exp_map(&xi);
            let p = Vector3::from_fn(|_, _| rng.gen_range(-10.0..10.0));
            let analytic = point_jacobian(&pose, &p);
            let numeric = numeric_point_jacobian(&pose, &p);
            let scale = analytic.norm().max(1.0);
            assert!(
                (analytic - numeric).norm() / scale < 1e-5,
                "jacobian mismatch: {analytic} vs {numeric}"
            );
        }
    }

    #[test]
    fn pose_row_major_round_trip() {
        let pose = exp_map(&Twist::from_vector(&Vector6::new(1.0, -2.0, 0.5, 0.3, -0.1, 0.9)));
        let back = Pose::from_row_major(&pose.to_row_major());
        assert_eq!(back, pose);
    }

    proptest! {
        #[test]
        fn log_exp_identity(raw in prop::array::uniform6(-3.0f64..3.0)) {
            let mut xi = Twist::from_vector(&Vector6::from_row_slice(&raw));
            // stay clear of the pi branch cut
            let angle = xi.phi.norm();
            if angle >= PI - 0.01 {
                xi.phi *= (PI - 0.02) / angle;
            }
            let back = log_map(&exp_map(&xi)).unwrap();
            prop_assert!((back.as_vector() - xi.as_vector()).norm() < 1e-9);
        }

        #[test]
        fn exp_is_orthonormal(raw in prop::array::uniform6(-3.0f64..3.0)) {
            let pose = exp_map(&Twist::from_vector(&Vector6::from_row_slice(&raw)));
            prop_assert!(pose.rotation_defect() < 1e-9);
        }

        #[test]
        fn hat3_antisymmetry(
            v in prop::array::uniform3(-10.0f64..10.0),
            w in prop::array::uniform3(-10.0f64..10.0),
        ) {
            let v = Vector3::from_row_slice(&v);
            let w = Vector3::from_row_slice(&w);
            prop_assert!((hat3(&v).0 * w + hat3(&w).0 * v).norm() < 1e-12);
        }
    }

    #[test]
    fn small_angle_branch_is_orthonormal() {
        let pose = exp_map(&Twist::new(
            Vector3::new(1.0, 2.0, 3.0),
            Vector3::new(1e-11, -2e-11, 5e-12),
        ));
        assert!(pose.rotation_defect() < 1e-9);
        let back = log_map(&pose).unwrap();
        assert_abs_diff_eq!(back.rho, Vector3::new(1.0, 2.0, 3.0), epsilon = 1e-9);
    }
}
