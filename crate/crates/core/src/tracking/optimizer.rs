//! Pose-only Gauss-Newton on robustified reprojection error.
//!
//! The state is the world-to-camera transform, updated by left
//! multiplication with `exp(δ)`. Each round minimizes the Huber cost over the
//! active set; between rounds correspondences are re-classified with the χ²
//! test and only inliers stay active.

use nalgebra::{Matrix6, Vector2, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{project_unbounded, projection_jacobian, Intrinsics, PixelObs, Point3, Pose};

pub const MIN_CORRESPONDENCES: usize = 6;
/// χ² 95% quantile for 2 degrees of freedom.
pub const CHI2_2DOF_95: f64 = 5.991;
/// Residual norm charged to points that fall behind the camera.
const BEHIND_CAMERA_RESIDUAL: f64 = 1e3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    /// World-frame landmark.
    pub point: Point3,
    pub obs: PixelObs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerParams {
    pub huber_delta: f64,
    pub chi2_threshold: f64,
    pub max_iterations: usize,
    pub min_cost_decrease: f64,
    pub rounds: usize,
}

impl Default for OptimizerParams {
    fn default() -> Self {
        Self {
            huber_delta: CHI2_2DOF_95.sqrt(),
            chi2_threshold: CHI2_2DOF_95,
            max_iterations: 20,
            min_cost_decrease: 1e-6,
            rounds: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseEstimate {
    /// Camera-to-world pose.
    pub pose: Pose,
    pub inliers: Vec<bool>,
    /// Huber cost over all correspondences at `pose`.
    pub cost: f64,
    /// Huber cost over all correspondences at the initial pose.
    pub initial_cost: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Costs of the accepted iterates, one list per round.
    pub cost_history: Vec<Vec<f64>>,
}

impl PoseEstimate {
    pub fn inlier_count(&self) -> usize {
        self.inliers.iter().filter(|&&b| b).count()
    }
}

fn huber(norm: f64, delta: f64) -> f64 {
    if norm <= delta {
        norm * norm
    } else {
        2.0 * delta * norm - delta * delta
    }
}

/// Residual `π(T_cw · X) − obs`, or `None` when the point is behind the camera.
fn residual(t_cw: &Pose, c: &Correspondence, k: &Intrinsics) -> Option<(Vector2<f64>, Point3)> {
    let pc = t_cw.transform_point(&c.point);
    let px = project_unbounded(&pc, k)?;
    Some((Vector2::new(px.u - c.obs.u, px.v - c.obs.v), pc))
}

fn residual_norm(t_cw: &Pose, c: &Correspondence, k: &Intrinsics) -> f64 {
    residual(t_cw, c, k).map_or(BEHIND_CAMERA_RESIDUAL, |(r, _)| r.norm())
}

fn robust_cost<'a>(
    t_cw: &Pose,
    corr: impl Iterator<Item = &'a Correspondence>,
    k: &Intrinsics,
    delta: f64,
) -> f64 {
    corr.map(|c| huber(residual_norm(t_cw, c, k), delta)).sum()
}

struct RoundOutcome {
    t_cw: Pose,
    iterations: usize,
    converged: bool,
    history: Vec<f64>,
}

fn gauss_newton(
    start: Pose,
    active: &[&Correspondence],
    k: &Intrinsics,
    p: &OptimizerParams,
) -> RoundOutcome {
    let mut t_cw = start;
    let mut cost = robust_cost(&t_cw, active.iter().copied(), k, p.huber_delta);
    let mut history = vec![cost];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < p.max_iterations {
        iterations += 1;
        let mut h = Matrix6::<f64>::zeros();
        let mut g = Vector6::<f64>::zeros();
        for c in active {
            let Some((r, pc)) = residual(&t_cw, c, k) else {
                continue;
            };
            let n = r.norm();
            let w = if n <= p.huber_delta { 1.0 } else { p.huber_delta / n };
            let j = projection_jacobian(&pc, k);
            h += j.transpose() * j * w;
            g += j.transpose() * r * w;
        }
        let step = match h.cholesky() {
            Some(ch) => -ch.solve(&g),
            None => {
                let damped = h + Matrix6::identity() * (1e-9 * h.trace().max(1e-12));
                match damped.cholesky() {
                    Some(ch) => -ch.solve(&g),
                    None => break,
                }
            }
        };
        // Backtracking keeps every accepted iterate below the previous cost.
        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..12 {
            let candidate = Pose::exp(&(step * scale)).compose(&t_cw);
            let c_new = robust_cost(&candidate, active.iter().copied(), k, p.huber_delta);
            if c_new < cost {
                accepted = Some((candidate, c_new));
                break;
            }
            scale *= 0.5;
        }
        let Some((candidate, c_new)) = accepted else {
            // No descent direction left: a (numerical) minimum.
            converged = true;
            break;
        };
        let decrease = cost - c_new;
        t_cw = candidate;
        cost = c_new;
        history.push(cost);
        if decrease < p.min_cost_decrease {
            converged = true;
            break;
        }
    }
    RoundOutcome {
        t_cw,
        iterations,
        converged,
        history,
    }
}

/// Refines a camera-to-world pose from 3D-2D correspondences.
pub fn optimize_pose(
    initial: &Pose,
    correspondences: &[Correspondence],
    k: &Intrinsics,
    params: &OptimizerParams,
) -> Result<PoseEstimate> {
    if correspondences.len() < MIN_CORRESPONDENCES {
        return Err(Error::DegenerateProblem {
            found: correspondences.len(),
            needed: MIN_CORRESPONDENCES,
        });
    }
    let classify = |t_cw: &Pose| -> Vec<bool> {
        correspondences
            .iter()
            .map(|c| {
                residual(t_cw, c, k).is_some_and(|(r, _)| r.norm_squared() < params.chi2_threshold)
            })
            .collect()
    };
    let start = initial.inverse();
    let initial_cost = robust_cost(&start, correspondences.iter(), k, params.huber_delta);

    let mut t_cw = start;
    let mut inliers = vec![true; correspondences.len()];
    let mut history = Vec::new();
    let mut iterations = 0;
    let mut converged = true;
    for round in 0..params.rounds.max(1) {
        let active: Vec<&Correspondence> = correspondences
            .iter()
            .zip(&inliers)
            .filter(|(_, &keep)| keep || round == 0)
            .map(|(c, _)| c)
            .collect();
        if active.len() < MIN_CORRESPONDENCES {
            break;
        }
        let out = gauss_newton(t_cw, &active, k, params);
        t_cw = out.t_cw;
        iterations += out.iterations;
        converged = out.converged;
        history.push(out.history);
        let next = classify(&t_cw);
        let unchanged = next == inliers;
        inliers = next;
        if unchanged && round > 0 {
            break;
        }
    }

    let cost = robust_cost(&t_cw, correspondences.iter(), k, params.huber_delta);
    if cost > initial_cost {
        return Ok(PoseEstimate {
            pose: *initial,
            inliers: classify(&start),
            cost: initial_cost,
            initial_cost,
            iterations,
            converged: false,
            cost_history: history,
        });
    }
    Ok(PoseEstimate {
        pose: t_cw.inverse(),
        inliers,
        cost,
        initial_cost,
        iterations,
        converged,
        cost_history: history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{project, Twist};
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn k() -> Intrinsics {
        Intrinsics::new(525.0, 525.0, 319.5, 239.5, 640, 480).unwrap()
    }

    /// Points in front of `pose` with their exact projections.
    fn scene(pose: &Pose, n: usize, seed: u64) -> Vec<Correspondence> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::new();
        while out.len() < n {
            let pc = Point3::new(
                rng.random_range(-1.5..1.5),
                rng.random_range(-1.0..1.0),
                rng.random_range(1.0..4.0),
            );
            if let Some(obs) = project(&pc, &k()) {
                out.push(Correspondence {
                    point: pose.transform_point(&pc),
                    obs,
                });
            }
        }
        out
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let pc = Point3::new(0.3, -0.2, 2.1);
        let j = projection_jacobian(&pc, &k());
        let h = 1e-6;
        for i in 0..6 {
            let mut d = Twist::zeros();
            d[i] = h;
            let plus = project_unbounded(&Pose::exp(&d).transform_point(&pc), &k()).unwrap();
            let minus = project_unbounded(&Pose::exp(&-d).transform_point(&pc), &k()).unwrap();
            let du = (plus.u - minus.u) / (2.0 * h);
            let dv = (plus.v - minus.v) / (2.0 * h);
            assert!((du - j[(0, i)]).abs() < 1e-4, "col {i}");
            assert!((dv - j[(1, i)]).abs() < 1e-4, "col {i}");
        }
    }

    #[test]
    fn gross_outliers_are_rejected() {
        let mut c = scene(&truth(), 60, 5);
        for (i, cc) in c.iter_mut().enumerate().take(12) {
            cc.obs.u = (cc.obs.u + 80.0 + i as f64 * 7.0) % 640.0;
        }
        let est = optimize_pose(&perturbed(&truth()), &c, &k(), &OptimizerParams::default()).unwrap();
        assert!(est.inliers[..12].iter().all(|&b| !b));
        assert!(est.inliers[12..].iter().all(|&b| b));
        let (r, t) = est.pose.distance(&truth());
        assert!(r < 1e-6 && t < 1e-6);
    }

    fn truth() -> Pose {
        Pose::exp(&Twist::new(0.2, -0.1, 0.3, 0.05, -0.1, 0.02))
    }

    fn perturbed(p: &Pose) -> Pose {
        // 5 cm translation and 3° rotation
        let dir = Vector3::new(1.0, -2.0, 0.5).normalize() * 0.05;
        let axis = Vector3::new(0.3, 1.0, -0.2).normalize() * 3f64.to_radians();
        p.compose(&Pose::exp(&Twist::new(dir.x, dir.y, dir.z, axis.x, axis.y, axis.z)))
    }

    #[test]
    fn too_few_correspondences() {
        let c = scene(&truth(), 5, 1);
        assert!(matches!(
            optimize_pose(&truth(), &c, &k(), &OptimizerParams::default()),
            Err(Error::DegenerateProblem { found: 5, .. })
        ));
    }

    #[test]
    fn exact_correspondences_are_a_fixed_point() {
        let c = scene(&truth(), 30, 2);
        let est = optimize_pose(&truth(), &c, &k(), &OptimizerParams::default()).unwrap();
        let (r, t) = est.pose.distance(&truth());
        assert!(r < 1e-12 && t < 1e-12);
        assert!(est.cost < 1e-18);
        assert!(est.inliers.iter().all(|&b| b));
    }

    #[test]
    fn recovers_from_perturbation() {
        let c = scene(&truth(), 50, 3);
        let est = optimize_pose(&perturbed(&truth()), &c, &k(), &OptimizerParams::default()).unwrap();
        let (r, t) = est.pose.distance(&truth());
        assert!(r < 1e-6 && t < 1e-6, "rot {r} trans {t}");
        assert!(est.cost <= est.initial_cost);
        assert!(est.converged);
    }

    #[test]
    fn accepted_iterates_never_increase_cost() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for seed in 0..20 {
            let mut c = scene(&truth(), 40, seed);
            for cc in c.iter_mut().take(8) {
                cc.obs.u = rng.random_range(0.0..640.0);
                cc.obs.v = rng.random_range(0.0..480.0);
            }
            let est = optimize_pose(&perturbed(&truth()), &c, &k(), &OptimizerParams::default()).unwrap();
            for round in &est.cost_history {
                for w in round.windows(2) {
                    assert!(w[1] < w[0]);
                }
            }
            assert!(est.cost <= est.initial_cost);
        }
    }
}
