//! Predictor contract and the two non-neural reference predictors: the
//! constant-speed baseline and the target-region kinematic predictor that
//! pairs each enumerated lane-piece path with one trajectory plus a
//! probability.

use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec::Vec;

use crate::lane_graph::{
    enumerate_paths, locate_pieces, CenterPoint, LaneGraph, PieceId, TargetPath,
};
#[allow(unused_imports)] // trait shim backs no_std float math
use crate::math::{angle_diff, point_segment_distance, FloatExt as _, Pose, Vec2};

#[derive(Clone, Debug, PartialEq)]
pub enum PredictionError {
    InvalidInput(String),
}

impl core::fmt::Display for PredictionError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            PredictionError::InvalidInput(m) => write!(f, "invalid input: {m}"),
        }
    }
}

impl core::error::Error for PredictionError {}

/// One observed state sample of a traffic participant.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct HistorySample {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub phi: f64,
    pub v: f64,
    pub a: f64,
    pub w: f64,
}

impl HistorySample {
    pub fn pose(&self) -> Pose {
        Pose::new(self.x, self.y, self.phi)
    }
}

/// Observed track with strictly increasing timestamps.
#[derive(Clone, Debug, Default)]
pub struct HistoryTrack {
    samples: Vec<HistorySample>,
}

impl HistoryTrack {
    pub fn new(samples: Vec<HistorySample>) -> Result<Self, PredictionError> {
        if samples.is_empty() {
            return Err(PredictionError::InvalidInput("empty history".into()));
        }
        if samples.windows(2).any(|w| w[1].t <= w[0].t) {
            return Err(PredictionError::InvalidInput(
                "timestamps not strictly increasing".into(),
            ));
        }
        Ok(HistoryTrack { samples })
    }

    pub fn from_sample(sample: HistorySample) -> Self {
        HistoryTrack {
            samples: alloc::vec![sample],
        }
    }

    /// Appends a sample, dropping the oldest beyond `max_len`.
    pub fn push(&mut self, sample: HistorySample, max_len: usize) {
        debug_assert!(self.samples.last().map_or(true, |l| sample.t > l.t));
        self.samples.push(sample);
        if self.samples.len() > max_len {
            self.samples.remove(0);
        }
    }

    pub fn samples(&self) -> &[HistorySample] {
        &self.samples
    }

    pub fn last(&self) -> &HistorySample {
        self.samples.last().expect("non-empty by construction")
    }

    pub fn duration(&self) -> f64 {
        self.last().t - self.samples[0].t
    }

    /// Most recent samples downsampled to roughly `stride_t` spacing,
    /// oldest first, at most `max_count` entries (the final sample is always
    /// included).
    pub fn downsampled(&self, stride_t: f64, max_count: usize) -> Vec<HistorySample> {
        let dt = if self.samples.len() > 1 {
            (self.last().t - self.samples[0].t) / (self.samples.len() - 1) as f64
        } else {
            stride_t
        };
        let stride = (stride_t / dt).round().max(1.0) as usize;
        let mut picked: Vec<HistorySample> = self
            .samples
            .iter()
            .rev()
            .step_by(stride)
            .take(max_count)
            .copied()
            .collect();
        picked.reverse();
        picked
    }
}

/// Predicted pose sequence at a fixed stride.
#[derive(Clone, Debug)]
pub struct PredictedTrajectory {
    pub poses: Vec<Pose>,
    /// End piece of the lane path that produced this trajectory, when one
    /// exists.
    pub source_path: Option<PieceId>,
}

/// Multi-modal prediction: trajectories plus a probability distribution.
#[derive(Clone, Debug, Default)]
pub struct PredictionSet {
    trajectories: Vec<PredictedTrajectory>,
    probabilities: Vec<f64>,
}

impl PredictionSet {
    pub fn new(
        trajectories: Vec<PredictedTrajectory>,
        probabilities: Vec<f64>,
    ) -> Result<Self, PredictionError> {
        if trajectories.is_empty() {
            return Err(PredictionError::InvalidInput("empty prediction set".into()));
        }
        if trajectories.len() != probabilities.len() {
            return Err(PredictionError::InvalidInput(
                "trajectory/probability length mismatch".into(),
            ));
        }
        if probabilities.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
            return Err(PredictionError::InvalidInput(
                "negative or non-finite probability".into(),
            ));
        }
        let sum: f64 = probabilities.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(PredictionError::InvalidInput(
                "probabilities do not sum to 1".into(),
            ));
        }
        if trajectories
            .iter()
            .any(|t| t.poses.iter().any(|p| !p.is_finite()))
        {
            return Err(PredictionError::InvalidInput(
                "non-finite predicted pose".into(),
            ));
        }
        Ok(PredictionSet {
            trajectories,
            probabilities,
        })
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn trajectories(&self) -> &[PredictedTrajectory] {
        &self.trajectories
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    pub fn iter(&self) -> impl Iterator<Item = (&PredictedTrajectory, f64)> {
        self.trajectories
            .iter()
            .zip(self.probabilities.iter().copied())
    }
}

/// Tuning knobs of the target-region predictor.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct PredictionConfig {
    /// Cap on the reach-budget speed for path enumeration.
    pub v_max: f64,
    /// Path-score weight on heading misalignment at the path start.
    pub w_head: f64,
    /// Path-score weight on lateral offset from the path centerline.
    pub w_lat: f64,
    /// Path-score weight on the required speed change.
    pub w_spd: f64,
    /// Nominal driving speed for lanes without a mapped speed limit.
    pub nominal_speed: f64,
    /// Acceleration bound for the blend toward the nominal speed.
    pub blend_accel_max: f64,
    /// Lateral capture radius for localizing the vehicle on the graph.
    pub capture_radius: f64,
}

impl Default for PredictionConfig {
    fn default() -> Self {
        PredictionConfig {
            v_max: 15.0,
            w_head: 2.0,
            w_lat: 1.0,
            w_spd: 0.5,
            nominal_speed: 8.0,
            blend_accel_max: 2.0,
            capture_radius: crate::lane_graph::DEFAULT_CAPTURE_RADIUS,
        }
    }
}

/// Straight-line extrapolation of the last pose at constant speed and
/// heading; single trajectory with probability one.
pub fn predict_constant_speed(
    history: &HistoryTrack,
    horizon_t: f64,
    dt_pred: f64,
) -> PredictionSet {
    let last = history.last();
    let steps = horizon_steps(horizon_t, dt_pred);
    let dir = Vec2::from_angle(last.phi);
    let poses = (1..=steps)
        .map(|k| {
            let d = last.v * k as f64 * dt_pred;
            Pose::new(last.x + d * dir.x, last.y + d * dir.y, last.phi)
        })
        .collect();
    PredictionSet::new(
        alloc::vec![PredictedTrajectory {
            poses,
            source_path: None,
        }],
        alloc::vec![1.0],
    )
    .expect("constant-speed set is valid by construction")
}

fn horizon_steps(horizon_t: f64, dt_pred: f64) -> usize {
    ((horizon_t / dt_pred).round() as usize).max(1)
}

/// Diagnostics of a target-region prediction.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct TargetRegionDiag {
    /// Set when the vehicle could not be localized on the graph (or no path
    /// could be enumerated) and the constant-speed fallback was used.
    pub fell_back: bool,
}

/// Arc-length projection of a point onto a piecewise-linear centerline:
/// returns (arc length of the closest point, lateral distance).
fn project_to_centerline(line: &[CenterPoint], q: Vec2) -> (f64, f64) {
    let mut best = (0.0, f64::INFINITY);
    let mut acc = 0.0;
    for w in line.windows(2) {
        let (a, b) = (w[0].position(), w[1].position());
        let (d, t) = point_segment_distance(q, a, b);
        if d < best.1 {
            best = (acc + t, d);
        }
        acc += a.dist(b);
    }
    (best.0, best.1)
}

/// Pose on a piecewise-linear centerline at arc length `s` (clamped), with
/// the segment tangent as heading.
fn pose_at_arc(line: &[CenterPoint], s: f64) -> Pose {
    let mut acc = 0.0;
    for w in line.windows(2) {
        let (a, b) = (w[0].position(), w[1].position());
        let seg = a.dist(b);
        if s <= acc + seg || acc + seg >= total_arc(line) - 1e-12 {
            let t = ((s - acc) / seg).clamp(0.0, 1.0);
            let p = a.lerp(b, t);
            return Pose::new(p.x, p.y, (b - a).angle());
        }
        acc += seg;
    }
    let last = line.last().expect("non-empty centerline");
    let prev = &line[line.len() - 2];
    Pose::new(last.x, last.y, (last.position() - prev.position()).angle())
}

fn total_arc(line: &[CenterPoint]) -> f64 {
    line.windows(2)
        .map(|w| w[0].position().dist(w[1].position()))
        .sum()
}

/// Per-path score under the documented formula:
/// `-w_head * |heading error| - w_lat * lateral offset - w_spd * |dv|`.
fn path_score(
    cfg: &PredictionConfig,
    vehicle: &HistorySample,
    path: &TargetPath,
    graph: &LaneGraph,
) -> (f64, f64, f64) {
    let line = &path.concatenated_centerline;
    let (s0, lat) = project_to_centerline(line, Pose::new(vehicle.x, vehicle.y, 0.0).position());
    let tangent = pose_at_arc(line, s0).phi;
    let head_err = angle_diff(vehicle.phi, tangent).abs();
    let nominal = nominal_speed(cfg, path, graph);
    let score = -cfg.w_head * head_err - cfg.w_lat * lat - cfg.w_spd * (nominal - vehicle.v).abs();
    (score, s0, nominal)
}

fn nominal_speed(cfg: &PredictionConfig, path: &TargetPath, graph: &LaneGraph) -> f64 {
    graph
        .piece(path.end_piece())
        .and_then(|p| p.speed_limit)
        .unwrap_or(cfg.nominal_speed)
}

/// Numerically stable softmax.
pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|&s| (s - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Target-region kinematic predictor: one trajectory per enumerated lane
/// path, advanced along the path centerline under a constant-acceleration
/// blend from the current speed toward the path's nominal speed;
/// probabilities are a softmax over the documented path scores.
///
/// Falls back to [`predict_constant_speed`] when the vehicle cannot be
/// localized on the graph or no path can be enumerated.
pub fn predict_target_region(
    history: &HistoryTrack,
    graph: &LaneGraph,
    horizon_t: f64,
    dt_pred: f64,
    cfg: &PredictionConfig,
) -> (PredictionSet, TargetRegionDiag) {
    let vehicle = *history.last();
    let pos = Vec2::new(vehicle.x, vehicle.y);

    let located = locate_pieces(graph, pos, cfg.capture_radius).unwrap_or_default();
    if located.is_empty() {
        return (
            predict_constant_speed(history, horizon_t, dt_pred),
            TargetRegionDiag { fell_back: true },
        );
    }

    // Reach budget: the current speed, raised to the local nominal speed so
    // that slow vehicles still enumerate the region they can reach while
    // accelerating, capped by the configured maximum.
    let local_nominal = graph
        .piece(&located[0])
        .and_then(|p| p.speed_limit)
        .unwrap_or(cfg.nominal_speed);
    let budget_speed = vehicle.v.max(local_nominal).clamp(0.1, cfg.v_max);

    let paths = match enumerate_paths(graph, &located, horizon_t, budget_speed) {
        Ok(p) if !p.is_empty() => p,
        _ => {
            return (
                predict_constant_speed(history, horizon_t, dt_pred),
                TargetRegionDiag { fell_back: true },
            )
        }
    };

    let steps = horizon_steps(horizon_t, dt_pred);
    let mut scores = Vec::with_capacity(paths.len());
    let mut trajectories = Vec::with_capacity(paths.len());
    for path in &paths {
        let (score, s0, nominal) = path_score(cfg, &vehicle, path, graph);
        scores.push(score);

        let accel =
            ((nominal - vehicle.v) / horizon_t).clamp(-cfg.blend_accel_max, cfg.blend_accel_max);
        let mut poses = Vec::with_capacity(steps);
        let mut s = s0;
        let mut v_prev = vehicle.v;
        for k in 1..=steps {
            let v_k = (vehicle.v + accel * k as f64 * dt_pred).clamp(0.0, cfg.v_max);
            s += 0.5 * (v_prev + v_k) * dt_pred;
            v_prev = v_k;
            poses.push(pose_at_arc(&path.concatenated_centerline, s));
        }
        trajectories.push(PredictedTrajectory {
            poses,
            source_path: Some(path.end_piece().clone()),
        });
    }

    let probabilities = softmax(&scores);
    (
        PredictionSet::new(trajectories, probabilities)
            .expect("softmax probabilities are valid by construction"),
        TargetRegionDiag::default(),
    )
}

/// Common interface so the constant-speed baseline, the target-region
/// predictor and the toy neural model are interchangeable in the simulator.
pub trait Predictor {
    fn predict(
        &self,
        target: &HistoryTrack,
        neighbors: &[&HistoryTrack],
        graph: &LaneGraph,
        horizon_t: f64,
        dt_pred: f64,
    ) -> PredictionSet;

    fn name(&self) -> &'static str;
}

/// Constant-speed baseline predictor.
#[derive(Clone, Copy, Debug, Default)]
pub struct CspPredictor;

impl Predictor for CspPredictor {
    fn predict(
        &self,
        target: &HistoryTrack,
        _neighbors: &[&HistoryTrack],
        _graph: &LaneGraph,
        horizon_t: f64,
        dt_pred: f64,
    ) -> PredictionSet {
        predict_constant_speed(target, horizon_t, dt_pred)
    }

    fn name(&self) -> &'static str {
        "csp"
    }
}

/// Target-region kinematic predictor.
#[derive(Clone, Copy, Debug, Default)]
pub struct TargetRegionPredictor {
    pub cfg: PredictionConfig,
}

impl Predictor for TargetRegionPredictor {
    fn predict(
        &self,
        target: &HistoryTrack,
        _neighbors: &[&HistoryTrack],
        graph: &LaneGraph,
        horizon_t: f64,
        dt_pred: f64,
    ) -> PredictionSet {
        predict_target_region(target, graph, horizon_t, dt_pred, &self.cfg).0
    }

    fn name(&self) -> &'static str {
        "target_region"
    }
}

/// Builds a predictor by its configuration name.
pub fn predictor_by_name(
    name: &str,
    cfg: PredictionConfig,
) -> Option<Box<dyn Predictor + Send + Sync>> {
    match name {
        "csp" => Some(Box::new(CspPredictor)),
        "target_region" => Some(Box::new(TargetRegionPredictor { cfg })),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lane_graph::{split_lanes, LanePolyline};
    use core::f64::consts::FRAC_PI_2;

    fn sample(x: f64, y: f64, phi: f64, v: f64) -> HistorySample {
        HistorySample {
            t: 0.0,
            x,
            y,
            phi,
            v,
            a: 0.0,
            w: 0.0,
        }
    }

    #[test]
    fn history_rejects_non_increasing_time() {
        let s = sample(0.0, 0.0, 0.0, 1.0);
        let mut s2 = s;
        s2.t = 0.0;
        assert!(HistoryTrack::new(alloc::vec![s, s2]).is_err());
        assert!(HistoryTrack::new(alloc::vec![]).is_err());
    }

    #[test]
    fn csp_extrapolates_straight() {
        let h = HistoryTrack::from_sample(sample(0.0, 0.0, 0.0, 4.0));
        let set = predict_constant_speed(&h, 4.0, 0.5);
        assert_eq!(set.len(), 1);
        assert_eq!(set.probabilities(), &[1.0]);
        let poses = &set.trajectories()[0].poses;
        assert_eq!(poses.len(), 8);
        for (k, p) in poses.iter().enumerate() {
            let want = 4.0 * (k + 1) as f64 * 0.5;
            assert!((p.x - want).abs() < 1e-12 && p.y.abs() < 1e-12);
        }
    }

    #[test]
    fn csp_at_rest_stays_put() {
        let h = HistoryTrack::from_sample(sample(3.0, -1.0, 0.7, 0.0));
        let set = predict_constant_speed(&h, 4.0, 0.5);
        for p in &set.trajectories()[0].poses {
            assert_eq!((p.x, p.y, p.phi), (3.0, -1.0, 0.7));
        }
    }

    #[test]
    fn csp_heads_along_heading() {
        let h = HistoryTrack::from_sample(sample(0.0, 0.0, FRAC_PI_2, 2.0));
        let set = predict_constant_speed(&h, 4.0, 0.5);
        let p = set.trajectories()[0].poses[2]; // step 3
        assert!(p.x.abs() < 1e-12);
        assert!((p.y - 3.0).abs() < 1e-12);
        assert_eq!(p.phi, FRAC_PI_2);
    }

    fn straight_graph() -> LaneGraph {
        let lane = LanePolyline {
            id: "a".into(),
            points: (0..=12).map(|i| Vec2::new(i as f64 * 5.0, 0.0)).collect(),
            successors: alloc::vec![],
            speed_limit: Some(8.0),
        };
        split_lanes(&[lane], 5.0).unwrap()
    }

    #[test]
    fn single_path_has_probability_one() {
        let graph = straight_graph();
        let h = HistoryTrack::from_sample(sample(2.0, 0.0, 0.0, 5.0));
        let (set, diag) = predict_target_region(&h, &graph, 4.0, 0.5, &PredictionConfig::default());
        assert!(!diag.fell_back);
        assert_eq!(set.len(), 1);
        assert_eq!(set.probabilities(), &[1.0]);
    }

    fn fork_graph(angle: f64) -> LaneGraph {
        let stem = LanePolyline {
            id: "stem".into(),
            points: alloc::vec![Vec2::new(-10.0, 0.0), Vec2::new(0.0, 0.0)],
            successors: alloc::vec!["up".into(), "down".into()],
            speed_limit: None,
        };
        let arm = |id: &str, sign: f64| LanePolyline {
            id: id.into(),
            points: (0..=8)
                .map(|i| {
                    let d = i as f64 * 5.0;
                    Vec2::new(d * angle.cos(), sign * d * angle.sin())
                })
                .collect(),
            successors: alloc::vec![],
            speed_limit: None,
        };
        split_lanes(&[stem, arm("up", 1.0), arm("down", -1.0)], 5.0).unwrap()
    }

    #[test]
    fn symmetric_fork_splits_probability_evenly() {
        let graph = fork_graph(0.4);
        // Mid-piece on the stem (away from piece boundaries), aligned.
        let h = HistoryTrack::from_sample(sample(-2.5, 0.0, 0.0, 6.0));
        let (set, _) = predict_target_region(&h, &graph, 4.0, 0.5, &PredictionConfig::default());
        assert_eq!(set.len(), 2);
        assert!((set.probabilities()[0] - 0.5).abs() < 1e-9);
        assert!((set.probabilities()[1] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn three_path_scores_match_hand_softmax() {
        // Three parallel lanes with distinct speed limits, all within the
        // capture radius, so the heading, lateral and speed terms of the
        // documented score all contribute and each lane yields one path.
        let lane = |id: &str, y: f64, speed: f64| LanePolyline {
            id: id.into(),
            points: alloc::vec![Vec2::new(0.0, y), Vec2::new(40.0, y)],
            successors: alloc::vec![],
            speed_limit: Some(speed),
        };
        let graph = split_lanes(
            &[
                lane("a", 0.0, 6.0),
                lane("b", 1.0, 8.0),
                lane("c", -1.0, 10.0),
            ],
            5.0,
        )
        .unwrap();

        let cfg = PredictionConfig::default();
        let (v, bias) = (6.0, 0.05);
        let h = HistoryTrack::from_sample(sample(2.5, 0.25, bias, v));
        let (set, diag) = predict_target_region(&h, &graph, 4.0, 0.5, &cfg);
        assert!(!diag.fell_back);
        assert_eq!(set.len(), 3);

        // Hand evaluation: lateral offsets 0.25 / 0.75 / 1.25 m, heading
        // error `bias` everywhere, speed changes 0 / 2 / 4 m/s. Paths sort
        // lexicographically: lane a, then b, then c.
        let score = |lat: f64, dv: f64| -cfg.w_head * bias - cfg.w_lat * lat - cfg.w_spd * dv;
        let want = softmax(&[score(0.25, 0.0), score(0.75, 2.0), score(1.25, 4.0)]);
        for (got, want) in set.probabilities().iter().zip(want.iter()) {
            assert!(
                (got - want).abs() < 1e-9,
                "{:?} vs {want}",
                set.probabilities()
            );
        }
    }

    #[test]
    fn off_graph_vehicle_falls_back_to_csp() {
        let graph = straight_graph();
        let h = HistoryTrack::from_sample(sample(0.0, 50.0, 0.0, 5.0));
        let (set, diag) = predict_target_region(&h, &graph, 4.0, 0.5, &PredictionConfig::default());
        assert!(diag.fell_back);
        assert_eq!(set.len(), 1);
    }

    #[test]
    fn trajectories_stay_on_their_source_centerline() {
        let graph = fork_graph(0.5);
        let h = HistoryTrack::from_sample(sample(-3.0, 0.3, 0.05, 7.0));
        let (set, _) = predict_target_region(&h, &graph, 4.0, 0.5, &PredictionConfig::default());
        for (traj, _) in set.iter() {
            let end = traj.source_path.as_ref().unwrap();
            let piece = graph.piece(end).unwrap();
            // Every pose within 0.5 m lateral of some piece of the graph
            // along the predicted path; check against the end piece's lane
            // by at least verifying poses are near the graph.
            let _ = piece;
            for pose in &traj.poses {
                let located = locate_pieces(&graph, pose.position(), 0.5).unwrap();
                assert!(
                    !located.is_empty(),
                    "pose {:?} strays from the lane centerlines",
                    pose
                );
            }
        }
    }

    #[test]
    fn prediction_set_validation() {
        let traj = PredictedTrajectory {
            poses: alloc::vec![Pose::new(0.0, 0.0, 0.0)],
            source_path: None,
        };
        assert!(PredictionSet::new(alloc::vec![traj.clone()], alloc::vec![0.5]).is_err());
        assert!(PredictionSet::new(alloc::vec![], alloc::vec![]).is_err());
        assert!(PredictionSet::new(
            alloc::vec![traj.clone(), traj.clone()],
            alloc::vec![0.6, 0.4]
        )
        .is_ok());
        assert!(PredictionSet::new(alloc::vec![traj], alloc::vec![-1.0]).is_err());
    }

    #[test]
    fn probability_sums_to_one_across_random_cases() {
        let graph = fork_graph(0.35);
        let mut rng = crate::rng::Rng::new(31);
        for _ in 0..50 {
            let h = HistoryTrack::from_sample(sample(
                rng.range(-9.0, -1.0),
                rng.range(-1.5, 1.5),
                rng.range(-0.4, 0.4),
                rng.range(0.0, 12.0),
            ));
            let (set, _) =
                predict_target_region(&h, &graph, 4.0, 0.5, &PredictionConfig::default());
            let sum: f64 = set.probabilities().iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
            assert!(set.probabilities().iter().all(|&p| p >= 0.0));
        }
    }
}
