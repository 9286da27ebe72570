//! Synthetic lane-following data for toy-network training: random fork
//! networks, a scripted driver with a constant-acceleration speed profile,
//! and (history, path set, ground truth) tuples in the shape the trainer
//! consumes.

use alloc::format;
use alloc::vec::Vec;

use crate::lane_graph::{enumerate_paths, locate_pieces, split_lanes, LaneGraph, LanePolyline};
#[allow(unused_imports)] // trait shim backs no_std float math
use crate::math::{FloatExt as _, Pose, Vec2};
use crate::prediction::{HistorySample, HistoryTrack, PredictedTrajectory};
use crate::rng::Rng;
use crate::trtp::TrainingSample;

/// Generator settings.
#[derive(Clone, Copy, Debug)]
pub struct SyntheticConfig {
    pub horizon_t: f64,
    pub horizon_steps: usize,
    /// History samples per track (2 Hz grid, most recent last).
    pub history_len: usize,
    /// Constant lateral offset amplitude drawn per vehicle.
    pub lateral_noise: f64,
    pub max_neighbors: usize,
    pub piece_length: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            horizon_t: 4.0,
            horizon_steps: 8,
            history_len: 5,
            lateral_noise: 0.1,
            max_neighbors: 2,
            piece_length: 5.0,
        }
    }
}

/// Position and tangent along a polyline at arc length `s` (clamped).
fn walk(line: &[Vec2], s: f64) -> (Vec2, Vec2) {
    let mut acc = 0.0;
    for w in line.windows(2) {
        let seg = w[0].dist(w[1]);
        if s <= acc + seg {
            let t = ((s - acc) / seg).clamp(0.0, 1.0);
            let dir = (w[1] - w[0]).scaled(1.0 / seg);
            return (w[0].lerp(w[1], t), dir);
        }
        acc += seg;
    }
    let n = line.len();
    let dir = (line[n - 1] - line[n - 2]).scaled(1.0 / line[n - 2].dist(line[n - 1]));
    (line[n - 1], dir)
}

fn polyline_len(line: &[Vec2]) -> f64 {
    line.windows(2).map(|w| w[0].dist(w[1])).sum()
}

/// One random fork network: a stem, two or three outgoing arms and a
/// parallel side lane carrying neighbor traffic.
pub struct Network {
    pub lanes: Vec<LanePolyline>,
    pub graph: LaneGraph,
    /// Drivable centerlines per stem+arm combination.
    pub drive_lines: Vec<Vec<Vec2>>,
    /// The side lane's centerline.
    pub side_line: Vec<Vec2>,
}

/// Builds a random network. Geometry is jittered but always well-formed.
pub fn random_network(rng: &mut Rng, piece_length: f64) -> Network {
    let stem_len = rng.range(22.0, 32.0);
    let stem_angle = rng.range(-0.3, 0.3);
    let stem_dir = Vec2::from_angle(stem_angle);
    let origin = Vec2::new(rng.range(-5.0, 5.0), rng.range(-5.0, 5.0));
    let fork = origin + stem_dir.scaled(stem_len);

    let n_arms = 2 + rng.index(2);
    let mut arm_angles = Vec::new();
    for i in 0..n_arms {
        // Spread the arms so they stay distinct.
        let base = -0.6 + 1.2 * i as f64 / (n_arms - 1) as f64;
        arm_angles.push(stem_angle + base + rng.range(-0.1, 0.1));
    }

    let mut lanes = Vec::new();
    let arm_names: Vec<_> = (0..n_arms).map(|i| format!("arm{i}")).collect();
    lanes.push(LanePolyline {
        id: "stem".into(),
        points: alloc::vec![origin, fork],
        successors: arm_names.clone(),
        speed_limit: Some(rng.range(5.0, 9.0)),
    });
    let mut drive_lines = Vec::new();
    for (i, name) in arm_names.iter().enumerate() {
        let dir = Vec2::from_angle(arm_angles[i]);
        let len = rng.range(40.0, 55.0);
        let mid = fork + dir.scaled(len * 0.5);
        let end = fork + dir.scaled(len);
        lanes.push(LanePolyline {
            id: name.clone(),
            points: alloc::vec![fork, mid, end],
            successors: alloc::vec![],
            speed_limit: Some(rng.range(4.0, 10.0)),
        });
        drive_lines.push(alloc::vec![origin, fork, mid, end]);
    }

    // Side lane for neighbor traffic, offset laterally from the stem.
    let offset = stem_dir
        .perp()
        .scaled(if rng.bernoulli(0.5) { 7.0 } else { -7.0 });
    let side_start = origin + offset - stem_dir.scaled(5.0);
    let side_end = origin + offset + stem_dir.scaled(stem_len + 45.0);
    let side_line = alloc::vec![side_start, side_end];
    lanes.push(LanePolyline {
        id: "side".into(),
        points: side_line.clone(),
        successors: alloc::vec![],
        speed_limit: Some(rng.range(5.0, 10.0)),
    });

    let graph = split_lanes(&lanes, piece_length).expect("generated network is well-formed");
    Network {
        lanes,
        graph,
        drive_lines,
        side_line,
    }
}

/// Scripted drive along a centerline: constant speed through the history
/// window, constant acceleration toward a nominal speed over the future.
struct Drive {
    line: Vec<Vec2>,
    lateral: f64,
    s0: f64,
    v0: f64,
    accel: f64,
}

impl Drive {
    fn state_at(&self, t: f64) -> (Vec2, f64, f64) {
        let (s, v) = if t <= 0.0 {
            (self.s0 + self.v0 * t, self.v0)
        } else {
            (
                self.s0 + self.v0 * t + 0.5 * self.accel * t * t,
                (self.v0 + self.accel * t).max(0.0),
            )
        };
        let (pos, dir) = walk(&self.line, s.max(0.0));
        (pos + dir.perp().scaled(self.lateral), dir.angle(), v)
    }

    fn history(&self, cfg: &SyntheticConfig, dt: f64) -> HistoryTrack {
        let mut samples = Vec::with_capacity(cfg.history_len);
        let mut prev_phi: Option<f64> = None;
        for i in 0..cfg.history_len {
            let t = -((cfg.history_len - 1 - i) as f64) * dt;
            let (pos, phi, v) = self.state_at(t);
            let w = prev_phi.map_or(0.0, |p| crate::math::angle_diff(phi, p) / dt);
            prev_phi = Some(phi);
            samples.push(HistorySample {
                t,
                x: pos.x,
                y: pos.y,
                phi,
                v,
                a: if t < 0.0 { 0.0 } else { self.accel },
                w,
            });
        }
        HistoryTrack::new(samples).expect("strictly increasing synthetic timestamps")
    }
}

/// Generates `count` training samples; fully deterministic in the generator
/// state.
pub fn generate_dataset(rng: &mut Rng, count: usize, cfg: &SyntheticConfig) -> Vec<TrainingSample> {
    let dt = cfg.horizon_t / cfg.horizon_steps as f64;
    let mut out = Vec::with_capacity(count);
    let mut guard = 0;
    while out.len() < count {
        guard += 1;
        assert!(
            guard < count * 100 + 1000,
            "synthetic generator failed to converge"
        );
        if let Some(sample) = try_sample(rng, cfg, dt) {
            out.push(sample);
        }
    }
    out
}

fn try_sample(rng: &mut Rng, cfg: &SyntheticConfig, dt: f64) -> Option<TrainingSample> {
    let net = random_network(rng, cfg.piece_length);
    let line_idx = rng.index(net.drive_lines.len());
    let line = net.drive_lines[line_idx].clone();
    let stem_len = polyline_len(&net.lanes[0].points);

    let history_span = (cfg.history_len - 1) as f64 * dt;
    let v0 = rng.range(2.0, ((stem_len - 4.0) / history_span.max(0.1)).min(9.0));
    let s0 = rng.range(
        (v0 * history_span + 1.0).min(stem_len - 2.0),
        stem_len - 1.0,
    );
    let nominal = rng.range(4.0, 10.0);
    let accel = ((nominal - v0) / cfg.horizon_t)
        .clamp(-2.0, 2.0)
        .max((0.5 - v0) / cfg.horizon_t);

    let drive = Drive {
        line,
        lateral: rng.range(-cfg.lateral_noise, cfg.lateral_noise),
        s0,
        v0,
        accel,
    };

    let target_history = drive.history(cfg, dt);
    let current = target_history.last();
    let current_pos = Vec2::new(current.x, current.y);

    let located = locate_pieces(&net.graph, current_pos, 2.0).ok()?;
    if located.is_empty() {
        return None;
    }
    let budget = v0.max(nominal).clamp(0.1, 15.0);
    let path_set = enumerate_paths(&net.graph, &located, cfg.horizon_t, budget).ok()?;
    if path_set.is_empty() {
        return None;
    }

    let gt_poses: Vec<Pose> = (1..=cfg.horizon_steps)
        .map(|k| {
            let (pos, phi, _) = drive.state_at(k as f64 * dt);
            Pose::new(pos.x, pos.y, phi)
        })
        .collect();
    let gt_end = gt_poses.last().unwrap().position();

    // The ground-truth path shares the ending piece with the real future.
    let mut best: Option<(f64, usize)> = None;
    for (i, path) in path_set.iter().enumerate() {
        let piece = net.graph.piece(path.end_piece())?;
        let d = piece
            .centerline
            .windows(2)
            .map(|w| {
                crate::math::point_segment_distance(gt_end, w[0].position(), w[1].position()).0
            })
            .fold(f64::INFINITY, f64::min);
        if best.map_or(true, |(bd, _)| d < bd) {
            best = Some((d, i));
        }
    }
    let (dist, gt_path_index) = best?;
    if dist > 3.0 {
        return None;
    }

    // Neighbor traffic on the side lane (and occasionally a second one).
    let n_neighbors = rng.index(cfg.max_neighbors + 1);
    let mut neighbor_histories = Vec::with_capacity(n_neighbors);
    for _ in 0..n_neighbors {
        let side_len = polyline_len(&net.side_line);
        let nv = rng.range(3.0, 9.0);
        let ns0 = rng.range(
            nv * history_span + 1.0,
            (side_len - 2.0).max(nv * history_span + 2.0),
        );
        let neighbor = Drive {
            line: net.side_line.clone(),
            lateral: rng.range(-cfg.lateral_noise, cfg.lateral_noise),
            s0: ns0.min(side_len - 1.0),
            v0: nv,
            accel: 0.0,
        };
        neighbor_histories.push(neighbor.history(cfg, dt));
    }

    Some(TrainingSample {
        target_history,
        neighbor_histories,
        path_set,
        gt_trajectory: PredictedTrajectory {
            poses: gt_poses,
            source_path: None,
        },
        gt_path_index,
    })
}
