//! Relative pose between two cameras from matched 3D point sets: a
//! closed-form rigid alignment seeds Gauss-Newton on se(3) minimizing
//! `1/2 sum ||p'_i - exp(xi^) p_i||^2`.

use crate::error::{Error, Result};
use crate::lie::{exp_map, hat3, Pose, Twist};
use crate::matching::CorrespondenceSet;
use nalgebra::{Matrix3, Matrix3x6, Matrix6, Vector3, Vector6};

/// Result of a pairwise estimation: camera A points into camera B frame.
#[derive(Debug, Clone)]
pub struct PairwiseEstimate {
    pub pose: Pose,
    pub rmse: f64,
    pub iterations: usize,
    pub inlier_count: usize,
    /// False when the iteration budget ran out; the estimate is then the
    /// best one seen.
    pub converged: bool,
}

/// Gauss-Newton settings shared by the pairwise and graph solvers.
#[derive(Debug, Clone, Copy)]
pub struct SolverConfig {
    pub max_iterations: usize,
    pub convergence_eps: f64,
    /// Huber robust-loss scale in meters; 0 disables it.
    pub huber_delta: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { max_iterations: 50, convergence_eps: 1e-12, huber_delta: 0.0 }
    }
}

/// Closed-form rigid alignment minimizing `sum ||p'_i - (R p_i + t)||^2`
/// via centroid subtraction and SVD of the 3x3 covariance, with reflection
/// correction.
pub fn closed_form_align(c: &CorrespondenceSet) -> Result<Pose> {
    let n = c.len();
    if n < 3 {
        return Err(Error::TooFewPoints(n));
    }
    let nf = n as f64;
    let centroid_a: Vector3<f64> = c.points_a.iter().sum::<Vector3<f64>>() / nf;
    let centroid_b: Vector3<f64> = c.points_b.iter().sum::<Vector3<f64>>() / nf;
    let mut cov = Matrix3::zeros();
    for (a, b) in c.points_a.iter().zip(&c.points_b) {
        cov += (a - centroid_a) * (b - centroid_b).transpose();
    }
    let svd = cov.svd(true, true);
    // rank < 2 means the points do not span a plane
    if svd.singular_values[1] < 1e-9 {
        return Err(Error::DegenerateGeometry);
    }
    let u = svd.u.ok_or(Error::DegenerateGeometry)?;
    let v_t = svd.v_t.ok_or(Error::DegenerateGeometry)?;
    let mut d = Matrix3::identity();
    if (v_t.transpose() * u.transpose()).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let rotation = v_t.transpose() * d * u.transpose();
    let translation = centroid_b - rotation * centroid_a;
    Ok(Pose::new(rotation, translation))
}

/// Per-point residuals `r_i = p'_i - exp(xi^) p_i`.
pub fn residuals(xi: &Twist, c: &CorrespondenceSet) -> Vec<Vector3<f64>> {
    let t = exp_map(xi);
    residuals_of_pose(&t, c)
}

fn residuals_of_pose(t: &Pose, c: &CorrespondenceSet) -> Vec<Vector3<f64>> {
    c.points_a
        .iter()
        .zip(&c.points_b)
        .map(|(a, b)| b - t.transform_point(a))
        .collect()
}

fn objective(t: &Pose, c: &CorrespondenceSet, huber_delta: f64) -> f64 {
    residuals_of_pose(t, c)
        .iter()
        .map(|r| {
            let n = r.norm();
            if huber_delta > 0.0 && n > huber_delta {
                huber_delta * (n - 0.5 * huber_delta)
            } else {
                0.5 * n * n
            }
        })
        .sum()
}

/// Gauss-Newton on the point-set objective, seeded by the closed-form
/// alignment. Left perturbation: `T <- exp(delta^) T`. Steps that would
/// increase the objective are halved; the objective is non-increasing over
/// accepted iterations.
pub fn estimate_pose(c: &CorrespondenceSet, cfg: &SolverConfig) -> Result<PairwiseEstimate> {
    let n = c.len();
    let mut pose = closed_form_align(c)?;
    let mut cost = objective(&pose, c, cfg.huber_delta);
    for iter in 0..cfg.max_iterations {
        let iterations = iter + 1;
        let mut h = Matrix6::<f64>::zeros();
        let mut g = Vector6::<f64>::zeros();
        for (a, b) in c.points_a.iter().zip(&c.points_b) {
            let q = pose.transform_point(a);
            let r = b - q;
            // d r / d delta = -[I | -hat(q)]
            let mut j = Matrix3x6::<f64>::zeros();
            j.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-Matrix3::identity()));
            j.fixed_view_mut::<3, 3>(0, 3).copy_from(&hat3(&q).0);
            let w = if cfg.huber_delta > 0.0 && r.norm() > cfg.huber_delta {
                cfg.huber_delta / r.norm()
            } else {
                1.0
            };
            h += j.transpose() * j * w;
            g += j.transpose() * r * w;
        }
        let full_step = match h.cholesky() {
            Some(chol) => chol.solve(&(-g)),
            None => return Err(Error::DegenerateGeometry),
        };
        if full_step.norm() < cfg.convergence_eps {
            let rmse = rmse_of(&pose, c);
            return Ok(PairwiseEstimate { pose, rmse, iterations, inlier_count: n, converged: true });
        }
        let mut step = full_step;
        let mut accepted = false;
        for _ in 0..20 {
            let candidate = exp_map(&Twist::from_vector(&step)).compose(&pose);
            let candidate_cost = objective(&candidate, c, cfg.huber_delta);
            if candidate_cost <= cost {
                pose = candidate;
                cost = candidate_cost;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted || step.norm() < cfg.convergence_eps {
            let rmse = rmse_of(&pose, c);
            return Ok(PairwiseEstimate { pose, rmse, iterations, inlier_count: n, converged: true });
        }
    }
    let rmse = rmse_of(&pose, c);
    Ok(PairwiseEstimate { pose, rmse, iterations: cfg.max_iterations, inlier_count: n, converged: false })
}

fn rmse_of(pose: &Pose, c: &CorrespondenceSet) -> f64 {
    let ss: f64 = residuals_of_pose(pose, c).iter().map(|r| r.norm_squared()).sum();
    (ss / c.len() as f64).sqrt()
}

/// Geodesic rotation error in degrees and translation error in centimeters.
pub fn pose_error(estimate: &Pose, truth: &Pose) -> (f64, f64) {
    let rel = estimate.rotation * truth.rotation.transpose();
    let cos = ((rel.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let rot_deg = cos.acos().to_degrees();
    let trans_cm = (estimate.translation - truth.translation).norm() * 100.0;
    (rot_deg, trans_cm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_pose(rng: &mut ChaCha8Rng) -> Pose {
        exp_map(&Twist::new(
            Vector3::from_fn(|_, _| rng.gen_range(-1.0..1.0)),
            Vector3::from_fn(|_, _| rng.gen_range(-1.5..1.5)),
        ))
    }

    fn random_set(rng: &mut ChaCha8Rng, n: usize, truth: &Pose) -> CorrespondenceSet {
        let points_a: Vec<Vector3<f64>> =
            (0..n).map(|_| Vector3::from_fn(|_, _| rng.gen_range(-2.0..2.0))).collect();
        let points_b = points_a.iter().map(|p| truth.transform_point(p)).collect();
        CorrespondenceSet { points_a, points_b }
    }

    #[test]
    fn closed_form_identity_on_equal_sets() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = random_set(&mut rng, 10, &Pose::identity());
        let pose = closed_form_align(&c).unwrap();
        let (rot, trans) = pose_error(&pose, &Pose::identity());
        assert!(rot < 1e-9 && trans < 1e-9);
    }

    #[test]
    fn closed_form_recovers_random_transform() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let truth = random_pose(&mut rng);
        let c = random_set(&mut rng, 10, &truth);
        let pose = closed_form_align(&c).unwrap();
        let (rot, trans) = pose_error(&pose, &truth);
        assert!(rot.to_radians() < 1e-9, "rotation error {rot} deg");
        assert!(trans / 100.0 < 1e-9, "translation error {trans} cm");
    }

    #[test]
    fn closed_form_rejects_collinear_points() {
        let points_a: Vec<Vector3<f64>> =
            (0..3).map(|i| Vector3::new(i as f64, 2.0 * i as f64, 0.0)).collect();
        let c = CorrespondenceSet { points_a: points_a.clone(), points_b: points_a };
        assert!(matches!(closed_form_align(&c), Err(Error::DegenerateGeometry)));
    }

    #[test]
    fn residuals_at_truth_vanish() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let truth = random_pose(&mut rng);
        let xi = crate::lie::log_map(&truth).unwrap();
        let c = random_set(&mut rng, 20, &truth);
        for r in residuals(&xi, &c) {
            assert!(r.norm() < 1e-12);
        }
    }

    #[test]
    fn residuals_pure_offset() {
        let points_a = vec![
            Vector3::new(0.0, 0.0, 1.0),
            Vector3::new(1.0, 0.0, 1.0),
            Vector3::new(0.0, 1.0, 1.0),
        ];
        let points_b = points_a.iter().map(|p| p + Vector3::new(1.0, 0.0, 0.0)).collect();
        let c = CorrespondenceSet { points_a, points_b };
        for r in residuals(&Twist::zero(), &c) {
            assert_abs_diff_eq!(r, Vector3::new(1.0, 0.0, 0.0), epsilon = 1e-15);
        }
    }

    #[test]
    fn objective_matches_direct_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let truth = random_pose(&mut rng);
        let c = random_set(&mut rng, 15, &truth);
        let xi = Twist::new(Vector3::new(0.1, -0.3, 0.2), Vector3::new(0.05, 0.02, -0.4));
        let t = exp_map(&xi);
        let direct: f64 = c
            .points_a
            .iter()
            .zip(&c.points_b)
            .map(|(a, b)| 0.5 * (b - (t.rotation * a + t.translation)).norm_squared())
            .sum();
        let via_residuals: f64 =
            residuals(&xi, &c).iter().map(|r| 0.5 * r.norm_squared()).sum();
        assert_abs_diff_eq!(direct, via_residuals, epsilon = 1e-12);
    }

    #[test]
    fn noiseless_exact_recovery() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..500 {
            let truth = random_pose(&mut rng);
            let c = random_set(&mut rng, 10, &truth);
            let est = estimate_pose(&c, &SolverConfig::default()).unwrap();
            let (rot, trans) = pose_error(&est.pose, &truth);
            assert!(rot < 1e-5, "rotation error {rot} deg");
            assert!(trans / 100.0 < 1e-7, "translation error {trans} cm");
        }
    }

    #[test]
    fn identical_sets_converge_immediately() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let c = random_set(&mut rng, 8, &Pose::identity());
        let est = estimate_pose(&c, &SolverConfig::default()).unwrap();
        let (rot, trans) = pose_error(&est.pose, &Pose::identity());
        assert!(rot < 1e-10 && trans < 1e-10);
        assert!(est.rmse < 1e-12);
        assert!(est.iterations <= 2);
    }

    #[test]
    fn too_few_points_is_rejected() {
        let c = CorrespondenceSet {
            points_a: vec![Vector3::zeros(), Vector3::x()],
            points_b: vec![Vector3::zeros(), Vector3::x()],
        };
        assert!(matches!(
            estimate_pose(&c, &SolverConfig::default()),
            Err(Error::TooFewPoints(2))
        ));
    }

    #[test]
    fn estimate_invariant_under_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let truth = random_pose(&mut rng);
        let mut c = random_set(&mut rng, 12, &truth);
        // add noise so the estimate is not trivially exact
        for p in c.points_b.iter_mut() {
            *p += Vector3::from_fn(|_, _| rng.gen_range(-0.005..0.005));
        }
        let est = estimate_pose(&c, &SolverConfig::default()).unwrap();
        let mut idx: Vec<usize> = (0..c.len()).collect();
        idx.reverse();
        idx.swap(0, 3);
        let permuted = CorrespondenceSet {
            points_a: idx.iter().map(|&i| c.points_a[i]).collect(),
            points_b: idx.iter().map(|&i| c.points_b[i]).collect(),
        };
        let est2 = estimate_pose(&permuted, &SolverConfig::default()).unwrap();
        assert!((est.pose.rotation - est2.pose.rotation).norm() < 1e-9);
        assert!((est.pose.translation - est2.pose.translation).norm() < 1e-9);
    }

    #[test]
    fn estimate_conjugates_under_common_transform() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let truth = random_pose(&mut rng);
        let mut c = random_set(&mut rng, 30, &truth);
        for p in c.points_b.iter_mut() {
            *p += Vector3::from_fn(|_, _| rng.gen_range(-0.003..0.003));
        }
        let g = random_pose(&mut rng);
        let moved = CorrespondenceSet {
            points_a: c.points_a.iter().map(|p| g.transform_point(p)).collect(),
            points_b: c.points_b.iter().map(|p| g.transform_point(p)).collect(),
        };
        let est = estimate_pose(&c, &SolverConfig::default()).unwrap();
        let est_moved = estimate_pose(&moved, &SolverConfig::default()).unwrap();
        let conjugated = g.compose(&est.pose).compose(&g.inverse());
        assert!((est_moved.pose.rotation - conjugated.rotation).norm() < 1e-7);
        assert!((est_moved.pose.translation - conjugated.translation).norm() < 1e-7);
    }

    /// Finite-difference check of the residual Jacobian used by Gauss-Newton.
    #[test]
    fn residual_jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pose = random_pose(&mut rng);
        let truth = random_pose(&mut rng);
        let c = random_set(&mut rng, 5, &truth);
        let h = 1e-6;
        for (a, b) in c.points_a.iter().zip(&c.points_b) {
            let q = pose.transform_point(a);
            let mut j = Matrix3x6::<f64>::zeros();
            j.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-Matrix3::identity()));
            j.fixed_view_mut::<3, 3>(0, 3).copy_from(&hat3(&q).0);
            for k in 0..6 {
                let mut d = Vector6::zeros();
                d[k] = h;
                let fwd = b - exp_map(&Twist::from_vector(&d)).compose(&pose).transform_point(a);
                let bwd =
                    b - exp_map(&Twist::from_vector(&(-d))).compose(&pose).transform_point(a);
                let numeric = (fwd - bwd) / (2.0 * h);
                let col: Vector3<f64> = j.column(k).into_owned();
                assert!((col - numeric).norm() / col.norm().max(1.0) < 1e-5);
            }
        }
    }

    #[test]
    fn pose_error_cases() {
        let truth = Pose::identity();
        assert_eq!(pose_error(&truth, &truth), (0.0, 0.0));

        let est = exp_map(&Twist::new(
            Vector3::zeros(),
            Vector3::new(0.0, 0.56f64.to_radians(), 0.0),
        ));
        let (rot, trans) = pose_error(&est, &truth);
        assert_abs_diff_eq!(rot, 0.56, epsilon = 1e-9);
        assert_abs_diff_eq!(trans, 0.0, epsilon = 1e-12);

        let est = Pose::new(Matrix3::identity(), Vector3::new(0.018, 0.0, 0.0));
        let (rot, trans) = pose_error(&est, &truth);
        assert_abs_diff_eq!(rot, 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(trans, 1.8, epsilon = 1e-12);
    }
}
