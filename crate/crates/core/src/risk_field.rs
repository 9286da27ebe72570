//! Per-future-time-step risk potential field built from all vehicles'
//! prediction sets.
//!
//! Each kernel is an anisotropic exponential centered on a predicted pose,
//! weighted by the trajectory probability and evaluated in the kernel's
//! local (heading-aligned) frame. The per-stage discount is applied by the
//! planner cost term, exactly once, not inside evaluation.

use alloc::string::String;
use alloc::vec::Vec;

#[allow(unused_imports)] // trait shim backs no_std float math
use crate::math::{angle_lerp, FloatExt as _, Pose, Vec2};
use crate::prediction::PredictionSet;

#[derive(Clone, Debug, PartialEq)]
pub enum FieldError {
    InvalidInput(String),
}

impl core::fmt::Display for FieldError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            FieldError::InvalidInput(m) => write!(f, "invalid input: {m}"),
        }
    }
}

impl core::error::Error for FieldError {}

/// Shape and discount parameters of the field.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct RiskFieldParams {
    /// Longitudinal shape parameter in meters.
    pub a: f64,
    /// Lateral shape parameter in meters.
    pub b: f64,
    /// Per-stage discount factor in (0, 1]; consumed by the planner.
    pub gamma: f64,
}

impl Default for RiskFieldParams {
    fn default() -> Self {
        RiskFieldParams {
            a: 4.0,
            b: 1.5,
            gamma: 0.99,
        }
    }
}

impl RiskFieldParams {
    pub fn validate(&self) -> Result<(), FieldError> {
        if !(self.a > 0.0) || !(self.b > 0.0) {
            return Err(FieldError::InvalidInput(
                "shape parameters must be positive".into(),
            ));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(FieldError::InvalidInput("gamma must be in (0, 1]".into()));
        }
        Ok(())
    }
}

/// One probability-weighted exponential kernel.
#[derive(Clone, Copy, Debug)]
pub struct Kernel {
    pub center: Vec2,
    pub heading: f64,
    pub weight: f64,
}

/// Prediction of one vehicle anchored at its current pose, so stage times
/// before the first predicted step interpolate from the real position.
#[derive(Clone, Debug)]
pub struct AgentPrediction {
    pub current: Pose,
    pub set: PredictionSet,
}

/// Risk potential field: one kernel list per planner stage; immutable after
/// construction.
#[derive(Clone, Debug)]
pub struct RiskField {
    stages: Vec<Vec<Kernel>>,
    params: RiskFieldParams,
    truncated: bool,
}

impl RiskField {
    /// Field with no kernels at every stage.
    pub fn empty(params: RiskFieldParams, stages: usize) -> Self {
        RiskField {
            stages: alloc::vec![Vec::new(); stages],
            params,
            truncated: false,
        }
    }

    /// Builds the field by resampling every predicted trajectory of every
    /// vehicle onto the planner stage times `k * planner_dt`,
    /// `k = 0..stage_count`. Positions interpolate linearly and headings
    /// along the shortest arc; beyond the prediction horizon the last pose
    /// is held and the `truncated` flag set.
    pub fn build(
        agents: &[AgentPrediction],
        params: RiskFieldParams,
        stage_count: usize,
        planner_dt: f64,
        dt_pred: f64,
    ) -> Result<Self, FieldError> {
        params.validate()?;
        if !(planner_dt > 0.0) || !(dt_pred > 0.0) {
            return Err(FieldError::InvalidInput(
                "planner_dt and dt_pred must be positive".into(),
            ));
        }

        let mut stages: Vec<Vec<Kernel>> = alloc::vec![Vec::new(); stage_count];
        let mut truncated = false;
        for agent in agents {
            for (traj, p) in agent.set.iter() {
                let horizon = traj.poses.len() as f64 * dt_pred;
                for (k, kernels) in stages.iter_mut().enumerate() {
                    let t = k as f64 * planner_dt;
                    if t > horizon + 1e-9 {
                        truncated = true;
                    }
                    let pose = sample_traj(agent.current, &traj.poses, dt_pred, t);
                    kernels.push(Kernel {
                        center: pose.position(),
                        heading: pose.phi,
                        weight: p,
                    });
                }
            }
        }
        Ok(RiskField {
            stages,
            params,
            truncated,
        })
    }

    pub fn stage_count(&self) -> usize {
        self.stages.len()
    }

    pub fn kernels(&self, stage: usize) -> &[Kernel] {
        &self.stages[stage]
    }

    pub fn params(&self) -> &RiskFieldParams {
        &self.params
    }

    /// True when the planner horizon outran the predictions and the last
    /// pose was held constant.
    pub fn truncated(&self) -> bool {
        self.truncated
    }

    /// Total risk at a query point for one stage:
    /// `sum_j p_j * exp(-(dx_j^2/a^2 + dy_j^2/b^2))` with the offset rotated
    /// into each kernel's heading frame. No stage discount here.
    pub fn evaluate(&self, stage: usize, x: f64, y: f64) -> Result<f64, FieldError> {
        self.check_query(stage, x, y)?;
        Ok(self.value_at(stage, x, y))
    }

    /// Analytic spatial gradient of [`Self::evaluate`].
    pub fn evaluate_gradient(
        &self,
        stage: usize,
        x: f64,
        y: f64,
    ) -> Result<(f64, f64), FieldError> {
        self.check_query(stage, x, y)?;
        Ok(self.gradient_at(stage, x, y))
    }

    fn check_query(&self, stage: usize, x: f64, y: f64) -> Result<(), FieldError> {
        if stage >= self.stages.len() {
            return Err(FieldError::InvalidInput(alloc::format!(
                "stage {stage} out of range 0..{}",
                self.stages.len()
            )));
        }
        if !x.is_finite() || !y.is_finite() {
            return Err(FieldError::InvalidInput("non-finite query".into()));
        }
        Ok(())
    }

    /// Unchecked evaluation for the solver hot path.
    pub fn value_at(&self, stage: usize, x: f64, y: f64) -> f64 {
        let inv_a2 = 1.0 / (self.params.a * self.params.a);
        let inv_b2 = 1.0 / (self.params.b * self.params.b);
        let mut sum = 0.0;
        for k in &self.stages[stage] {
            let (s, c) = k.heading.sin_cos();
            let rx = x - k.center.x;
            let ry = y - k.center.y;
            let dx = c * rx + s * ry;
            let dy = -s * rx + c * ry;
            sum += k.weight * (-(dx * dx * inv_a2 + dy * dy * inv_b2)).exp();
        }
        sum
    }

    /// Unchecked analytic gradient.
    pub fn gradient_at(&self, stage: usize, x: f64, y: f64) -> (f64, f64) {
        let inv_a2 = 1.0 / (self.params.a * self.params.a);
        let inv_b2 = 1.0 / (self.params.b * self.params.b);
        let (mut gx, mut gy) = (0.0, 0.0);
        for k in &self.stages[stage] {
            let (s, c) = k.heading.sin_cos();
            let rx = x - k.center.x;
            let ry = y - k.center.y;
            let dx = c * rx + s * ry;
            let dy = -s * rx + c * ry;
            let e = k.weight * (-(dx * dx * inv_a2 + dy * dy * inv_b2)).exp();
            // d(dx)/d(x,y) = (c, s); d(dy)/d(x,y) = (-s, c)
            let u = -2.0 * dx * inv_a2;
            let w = -2.0 * dy * inv_b2;
            gx += e * (u * c - w * s);
            gy += e * (u * s + w * c);
        }
        (gx, gy)
    }

    /// Diagonal of the analytic spatial Hessian, used by the solver's
    /// positive-semidefinite risk curvature approximation.
    pub fn hessian_diag_at(&self, stage: usize, x: f64, y: f64) -> (f64, f64) {
        let inv_a2 = 1.0 / (self.params.a * self.params.a);
        let inv_b2 = 1.0 / (self.params.b * self.params.b);
        let (mut hxx, mut hyy) = (0.0, 0.0);
        for k in &self.stages[stage] {
            let (s, c) = k.heading.sin_cos();
            let rx = x - k.center.x;
            let ry = y - k.center.y;
            let dx = c * rx + s * ry;
            let dy = -s * rx + c * ry;
            let e = k.weight * (-(dx * dx * inv_a2 + dy * dy * inv_b2)).exp();
            let u = -2.0 * dx * inv_a2;
            let w = -2.0 * dy * inv_b2;
            let gx_dir = u * c - w * s;
            let gy_dir = u * s + w * c;
            hxx += e * (gx_dir * gx_dir - 2.0 * (c * c * inv_a2 + s * s * inv_b2));
            hyy += e * (gy_dir * gy_dir - 2.0 * (s * s * inv_a2 + c * c * inv_b2));
        }
        (hxx, hyy)
    }
}

/// Piecewise-linear pose lookup along an anchored trajectory at time `t`
/// (seconds from now). Index 0 of `poses` is at `dt_pred`.
fn sample_traj(anchor: Pose, poses: &[Pose], dt_pred: f64, t: f64) -> Pose {
    if poses.is_empty() {
        return anchor;
    }
    let last = poses[poses.len() - 1];
    let horizon = poses.len() as f64 * dt_pred;
    if t >= horizon {
        return last;
    }
    if t <= 0.0 {
        return anchor;
    }
    // Segment [idx, idx+1] over anchored timeline: node i at i*dt_pred.
    let f = t / dt_pred;
    let idx = f.floor() as usize;
    let frac = f - idx as f64;
    let from = if idx == 0 { anchor } else { poses[idx - 1] };
    let to = poses[idx.min(poses.len() - 1)];
    Pose::new(
        from.x + frac * (to.x - from.x),
        from.y + frac * (to.y - from.y),
        angle_lerp(from.phi, to.phi, frac),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prediction::{PredictedTrajectory, PredictionSet};
    use crate::rng::Rng;
    use core::f64::consts::FRAC_PI_2;

    fn single_kernel_field(center: Vec2, heading: f64, params: RiskFieldParams) -> RiskField {
        let traj = PredictedTrajectory {
            poses: alloc::vec![Pose::new(center.x, center.y, heading); 8],
            source_path: None,
        };
        let set = PredictionSet::new(alloc::vec![traj], alloc::vec![1.0]).unwrap();
        let agent = AgentPrediction {
            current: Pose::new(center.x, center.y, heading),
            set,
        };
        RiskField::build(&[agent], params, 81, 0.05, 0.5).unwrap()
    }

    #[test]
    fn kernel_center_evaluates_to_weight() {
        let field = single_kernel_field(Vec2::new(3.0, -2.0), 0.7, RiskFieldParams::default());
        let v = field.evaluate(0, 3.0, -2.0).unwrap();
        assert_eq!(v, 1.0); // e^0 exactly
    }

    #[test]
    fn longitudinal_offset_a_gives_e_minus_one() {
        let params = RiskFieldParams::default();
        let field = single_kernel_field(Vec2::ZERO, 0.0, params);
        let v = field.evaluate(0, params.a, 0.0).unwrap();
        assert!((v - (-1.0f64).exp()).abs() < 1e-12, "value {v}");
    }

    #[test]
    fn rotated_kernel_swaps_axes() {
        // Kernel heading pi/2: a world offset (a, 0) lands at local
        // (0, -a), so the value is exp(-a^2/b^2).
        let params = RiskFieldParams::default();
        let field = single_kernel_field(Vec2::ZERO, FRAC_PI_2, params);
        let v = field.evaluate(0, params.a, 0.0).unwrap();
        let want = (-(params.a * params.a) / (params.b * params.b)).exp();
        assert!((v - want).abs() < 1e-12, "value {v} want {want}");
    }

    #[test]
    fn kernel_count_matches_trajectories() {
        let mk_agent = |n_traj: usize, x: f64| {
            let trajs: Vec<PredictedTrajectory> = (0..n_traj)
                .map(|j| PredictedTrajectory {
                    poses: alloc::vec![Pose::new(x, j as f64, 0.0); 8],
                    source_path: None,
                })
                .collect();
            let probs = alloc::vec![1.0 / n_traj as f64; n_traj];
            AgentPrediction {
                current: Pose::new(x, 0.0, 0.0),
                set: PredictionSet::new(trajs, probs).unwrap(),
            }
        };
        let agents = alloc::vec![mk_agent(2, 0.0), mk_agent(3, 10.0), mk_agent(1, 20.0)];
        let field = RiskField::build(&agents, RiskFieldParams::default(), 81, 0.05, 0.5).unwrap();
        for k in 0..field.stage_count() {
            assert_eq!(field.kernels(k).len(), 6);
        }
    }

    #[test]
    fn resampling_interpolates_predicted_poses() {
        // Anchor at origin, first predicted pose at (1, 0) after 0.5 s: at
        // stage time 0.25 s the kernel sits halfway.
        let traj = PredictedTrajectory {
            poses: alloc::vec![Pose::new(1.0, 0.0, 0.0), Pose::new(2.0, 0.5, 0.0)],
            source_path: None,
        };
        let agent = AgentPrediction {
            current: Pose::new(0.0, 0.0, 0.0),
            set: PredictionSet::new(alloc::vec![traj], alloc::vec![1.0]).unwrap(),
        };
        let field = RiskField::build(&[agent], RiskFieldParams::default(), 21, 0.05, 0.5).unwrap();
        // Stage 5 -> t = 0.25 s -> halfway between anchor and pose 1.
        let k5 = field.kernels(5)[0];
        assert!((k5.center.x - 0.5).abs() < 1e-12 && k5.center.y.abs() < 1e-12);
        // Stage 15 -> t = 0.75 s -> halfway between pose 1 and pose 2.
        let k15 = field.kernels(15)[0];
        assert!((k15.center.x - 1.5).abs() < 1e-12);
        assert!((k15.center.y - 0.25).abs() < 1e-12);
        // Stage 20 -> t = 1.0 s -> exactly pose 2, the horizon end.
        let k20 = field.kernels(20)[0];
        assert!((k20.center.x - 2.0).abs() < 1e-12);
        assert!(!field.truncated());
    }

    #[test]
    fn horizon_shorter_than_planner_sets_truncated_flag() {
        let traj = PredictedTrajectory {
            poses: alloc::vec![Pose::new(1.0, 0.0, 0.0)],
            source_path: None,
        };
        let agent = AgentPrediction {
            current: Pose::new(0.0, 0.0, 0.0),
            set: PredictionSet::new(alloc::vec![traj], alloc::vec![1.0]).unwrap(),
        };
        let field = RiskField::build(&[agent], RiskFieldParams::default(), 81, 0.05, 0.5).unwrap();
        assert!(field.truncated());
        // Held constant at the last predicted pose.
        let k80 = field.kernels(80)[0];
        assert!((k80.center.x - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gradient_vanishes_at_kernel_center() {
        let field = single_kernel_field(Vec2::new(2.0, 5.0), 1.1, RiskFieldParams::default());
        let (gx, gy) = field.evaluate_gradient(0, 2.0, 5.0).unwrap();
        assert_eq!((gx, gy), (0.0, 0.0));
    }

    #[test]
    fn gradient_matches_finite_differences_on_random_configs() {
        let mut rng = Rng::new(99);
        for round in 0..1000 {
            let params = RiskFieldParams {
                a: rng.range(1.0, 6.0),
                b: rng.range(0.5, 3.0),
                gamma: 0.95,
            };
            let n_kernels = 1 + rng.index(4);
            let trajs: Vec<PredictedTrajectory> = (0..n_kernels)
                .map(|_| PredictedTrajectory {
                    poses: alloc::vec![
                        Pose::new(
                            rng.range(-10.0, 10.0),
                            rng.range(-10.0, 10.0),
                            rng.range(-3.1, 3.1),
                        );
                        4
                    ],
                    source_path: None,
                })
                .collect();
            let mut probs = alloc::vec![0.0; n_kernels];
            let mut sum = 0.0;
            for p in probs.iter_mut() {
                *p = rng.range(0.1, 1.0);
                sum += *p;
            }
            for p in probs.iter_mut() {
                *p /= sum;
            }
            let agent = AgentPrediction {
                current: trajs[0].poses[0],
                set: PredictionSet::new(trajs, probs).unwrap(),
            };
            let field = RiskField::build(&[agent], params, 4, 0.5, 0.5).unwrap();

            let q = Vec2::new(rng.range(-12.0, 12.0), rng.range(-12.0, 12.0));
            let (gx, gy) = field.evaluate_gradient(0, q.x, q.y).unwrap();
            let h = 1e-6;
            let fx =
                (field.value_at(0, q.x + h, q.y) - field.value_at(0, q.x - h, q.y)) / (2.0 * h);
            let fy =
                (field.value_at(0, q.x, q.y + h) - field.value_at(0, q.x, q.y - h)) / (2.0 * h);
            let scale = gx.abs().max(gy.abs()).max(1e-5);
            assert!(
                ((gx - fx).abs() / scale) < 1e-5 && ((gy - fy).abs() / scale) < 1e-5,
                "round {round}: analytic ({gx}, {gy}) fd ({fx}, {fy})"
            );
        }
    }

    #[test]
    fn hessian_diag_matches_finite_differences() {
        let mut rng = Rng::new(17);
        for _ in 0..200 {
            let field = single_kernel_field(
                Vec2::new(rng.range(-5.0, 5.0), rng.range(-5.0, 5.0)),
                rng.range(-3.0, 3.0),
                RiskFieldParams::default(),
            );
            let q = Vec2::new(rng.range(-8.0, 8.0), rng.range(-8.0, 8.0));
            let (hxx, hyy) = field.hessian_diag_at(0, q.x, q.y);
            let h = 1e-5;
            let fxx = (field.value_at(0, q.x + h, q.y) - 2.0 * field.value_at(0, q.x, q.y)
                + field.value_at(0, q.x - h, q.y))
                / (h * h);
            let fyy = (field.value_at(0, q.x, q.y + h) - 2.0 * field.value_at(0, q.x, q.y)
                + field.value_at(0, q.x, q.y - h))
                / (h * h);
            assert!((hxx - fxx).abs() < 1e-4, "hxx {hxx} fd {fxx}");
            assert!((hyy - fyy).abs() < 1e-4, "hyy {hyy} fd {fyy}");
        }
    }

    #[test]
    fn mirror_symmetric_kernels_cancel_along_axis() {
        // Kernels at (0, +2) and (0, -2): at the midpoint the y components
        // cancel and symmetry keeps the x component zero too.
        let mk = |y: f64| PredictedTrajectory {
            poses: alloc::vec![Pose::new(0.0, y, 0.0); 4],
            source_path: None,
        };
        let agent = AgentPrediction {
            current: Pose::new(0.0, 2.0, 0.0),
            set: PredictionSet::new(alloc::vec![mk(2.0), mk(-2.0)], alloc::vec![0.5, 0.5]).unwrap(),
        };
        // Anchor and predictions both symmetric at stage >= 1; use stage 1.
        let field = RiskField::build(&[agent], RiskFieldParams::default(), 12, 0.5, 0.5).unwrap();
        let (gx, gy) = field.evaluate_gradient(1, 0.0, 0.0).unwrap();
        assert!(gx.abs() < 1e-15 && gy.abs() < 1e-15, "({gx}, {gy})");
    }

    #[test]
    fn value_bounded_by_total_probability_mass() {
        let mut rng = Rng::new(55);
        let field = single_kernel_field(Vec2::ZERO, 0.3, RiskFieldParams::default());
        for _ in 0..200 {
            let v = field
                .evaluate(0, rng.range(-20.0, 20.0), rng.range(-20.0, 20.0))
                .unwrap();
            assert!((0.0..=1.0 + 1e-12).contains(&v));
        }
    }

    #[test]
    fn rigid_transform_invariance() {
        let mut rng = Rng::new(4);
        for _ in 0..100 {
            let center = Vec2::new(rng.range(-5.0, 5.0), rng.range(-5.0, 5.0));
            let heading = rng.range(-3.0, 3.0);
            let q = Vec2::new(rng.range(-8.0, 8.0), rng.range(-8.0, 8.0));
            let field = single_kernel_field(center, heading, RiskFieldParams::default());
            let v0 = field.value_at(0, q.x, q.y);

            // Apply a rigid transform (rotation + translation) to both the
            // kernel and the query.
            let ang = rng.range(-3.0, 3.0);
            let shift = Vec2::new(rng.range(-10.0, 10.0), rng.range(-10.0, 10.0));
            let center2 = center.rotated(ang) + shift;
            let q2 = q.rotated(ang) + shift;
            let field2 = single_kernel_field(center2, heading + ang, RiskFieldParams::default());
            let v1 = field2.value_at(0, q2.x, q2.y);
            assert!((v0 - v1).abs() < 1e-9, "{v0} vs {v1}");
        }
    }

    #[test]
    fn monotone_decay_along_rays() {
        let field = single_kernel_field(Vec2::ZERO, 0.9, RiskFieldParams::default());
        let mut rng = Rng::new(21);
        for _ in 0..50 {
            let dir = Vec2::from_angle(rng.range(-3.1, 3.1));
            let mut prev = f64::INFINITY;
            for step in 0..40 {
                let r = step as f64 * 0.25;
                let v = field.value_at(0, dir.x * r, dir.y * r);
                assert!(v <= prev + 1e-15, "ray value rose at r={r}");
                prev = v;
            }
        }
    }

    #[test]
    fn invalid_queries_rejected() {
        let field = single_kernel_field(Vec2::ZERO, 0.0, RiskFieldParams::default());
        assert!(field.evaluate(0, f64::NAN, 0.0).is_err());
        assert!(field.evaluate(500, 0.0, 0.0).is_err());
        assert!(RiskFieldParams {
            a: -1.0,
            ..RiskFieldParams::default()
        }
        .validate()
        .is_err());
    }
}
