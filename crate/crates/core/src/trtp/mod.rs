//! Toy-scale target-region trajectory prediction network, built from
//! scratch: GRU encoders for histories and candidate lane paths, a scaled
//! dot-product interaction encoder, an MLP trajectory decoder and an
//! attention probability decoder, trained with hand-written reverse-mode
//! gradients on synthetic lane-following data.

mod model;
mod nn;
mod train;

pub use model::{
    backward, decode, featurize, forward, gru_encode, loss, to_world, AttnParams, ForwardCache,
    ForwardOutput, LossValues, ModelInput, NetDims, NetError, NetParams, ProbParams,
    TrainingSample, HISTORY_FEATURES, PATH_FEATURES, POSE_DIMS,
};
pub use nn::{
    attention, attention_backward, gru_backward, gru_forward, mlp_backward, mlp_forward,
    softmax_backward, GruParams, Matrix, MlpParams,
};
pub use train::{
    analytic_gradient, dataset_loss, gradient_check, numeric_gradient, sample_loss, train_toy,
    TrainError, TrainOutcome, DEFAULT_ALPHA, DEFAULT_BETA,
};

use alloc::vec::Vec;

use crate::lane_graph::{enumerate_paths, locate_pieces, LaneGraph};
#[allow(unused_imports)] // trait shim backs no_std float math
use crate::math::{angle_lerp, FloatExt as _, Pose};
use crate::prediction::{
    predict_constant_speed, HistoryTrack, PredictedTrajectory, PredictionConfig, PredictionSet,
    Predictor,
};

/// Neural predictor backed by trained toy-network parameters; falls back to
/// constant-speed extrapolation off the lane graph.
pub struct TrtpPredictor {
    pub params: NetParams,
    pub cfg: PredictionConfig,
}

impl TrtpPredictor {
    pub fn new(params: NetParams, cfg: PredictionConfig) -> Self {
        TrtpPredictor { params, cfg }
    }
}

impl Predictor for TrtpPredictor {
    fn predict(
        &self,
        target: &HistoryTrack,
        neighbors: &[&HistoryTrack],
        graph: &LaneGraph,
        horizon_t: f64,
        dt_pred: f64,
    ) -> PredictionSet {
        let fallback = |t: &HistoryTrack| predict_constant_speed(t, horizon_t, dt_pred);
        let last = target.last();
        let located = match locate_pieces(
            graph,
            crate::math::Vec2::new(last.x, last.y),
            self.cfg.capture_radius,
        ) {
            Ok(l) if !l.is_empty() => l,
            _ => return fallback(target),
        };
        let local_nominal = graph
            .piece(&located[0])
            .and_then(|p| p.speed_limit)
            .unwrap_or(self.cfg.nominal_speed);
        let budget = last.v.max(local_nominal).clamp(0.1, self.cfg.v_max);
        let paths = match enumerate_paths(graph, &located, horizon_t, budget) {
            Ok(p) if !p.is_empty() => p,
            _ => return fallback(target),
        };

        let input = featurize(&self.params.dims, target, neighbors, &paths);
        let Ok((out, _)) = forward(&self.params, &input) else {
            return fallback(target);
        };

        // The network decodes on its native grid (horizon_steps poses over
        // horizon_t); resample onto the requested stride.
        let native_dt = horizon_t / self.params.dims.horizon_steps as f64;
        let want_steps = ((horizon_t / dt_pred).round() as usize).max(1);
        let trajectories: Vec<PredictedTrajectory> = out
            .trajectories_local
            .iter()
            .zip(paths.iter())
            .map(|(local, path)| {
                let world = to_world(input.anchor, local);
                let poses = (1..=want_steps)
                    .map(|k| sample_pose_line(&world, input.anchor, native_dt, k as f64 * dt_pred))
                    .collect();
                PredictedTrajectory {
                    poses,
                    source_path: Some(path.end_piece().clone()),
                }
            })
            .collect();

        match PredictionSet::new(trajectories, out.probabilities) {
            Ok(set) => set,
            Err(_) => fallback(target),
        }
    }

    fn name(&self) -> &'static str {
        "trtp_toy"
    }
}

/// Linear pose interpolation over a decoded trajectory whose poses sit at
/// multiples of `stride` after the anchor.
fn sample_pose_line(world: &[Pose], anchor: Pose, stride: f64, t: f64) -> Pose {
    if world.is_empty() {
        return anchor;
    }
    let f = t / stride;
    if f <= 0.0 {
        return anchor;
    }
    let idx = f as usize; // node i sits at (i+1)*stride; the anchor at 0
    if idx >= world.len() {
        return world[world.len() - 1];
    }
    let from = if idx == 0 { anchor } else { world[idx - 1] };
    let to = world[idx];
    let frac = f - idx as f64;
    Pose::new(
        from.x + frac * (to.x - from.x),
        from.y + frac * (to.y - from.y),
        angle_lerp(from.phi, to.phi, frac),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prediction::HistorySample;
    use crate::rng::Rng;
    use crate::synthetic::{generate_dataset, SyntheticConfig};

    fn tiny_dataset(seed: u64, count: usize) -> Vec<TrainingSample> {
        let mut rng = Rng::new(seed);
        generate_dataset(
            &mut rng,
            count,
            &SyntheticConfig {
                horizon_steps: NetDims::tiny().horizon_steps,
                ..SyntheticConfig::default()
            },
        )
    }

    #[test]
    fn decode_shape_contract() {
        let dims = NetDims::tiny();
        let mut rng = Rng::new(1);
        let params = NetParams::init(dims, &mut rng);
        let e_updated = alloc::vec![0.1; dims.hidden];
        let e_paths = alloc::vec![alloc::vec![0.2; dims.hidden]; 4];
        let (trajs, probs) = decode(&params, &e_updated, &e_paths, dims.horizon_steps).unwrap();
        assert_eq!(trajs.len(), 4);
        assert_eq!(probs.len(), 4);
        for t in &trajs {
            assert_eq!(t.len(), dims.horizon_steps);
        }
        // Identical path encodings: uniform probabilities.
        for p in &probs {
            assert!((p - 0.25).abs() < 1e-12);
        }
        let sum: f64 = probs.iter().sum();
        assert!((sum - 1.0).abs() < 1e-9);
    }

    #[test]
    fn decode_zero_mlp_outputs_bias() {
        let dims = NetDims::tiny();
        let mut params = NetParams::zeros(dims);
        for (i, b) in params.mlp_traj.b2.iter_mut().enumerate() {
            *b = i as f64 * 0.1;
        }
        let e_updated = alloc::vec![0.3; dims.hidden];
        let e_paths = alloc::vec![alloc::vec![0.7; dims.hidden]; 2];
        let (trajs, _) = decode(&params, &e_updated, &e_paths, dims.horizon_steps).unwrap();
        for t in &trajs {
            for (i, pose) in t.iter().enumerate() {
                assert!((pose.x - (3 * i) as f64 * 0.1).abs() < 1e-12);
                assert!((pose.y - (3 * i + 1) as f64 * 0.1).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn decode_rejects_mismatched_dims() {
        let dims = NetDims::tiny();
        let params = NetParams::zeros(dims);
        let bad = alloc::vec![alloc::vec![0.0; dims.hidden + 1]];
        assert!(matches!(
            decode(
                &params,
                &alloc::vec![0.0; dims.hidden],
                &bad,
                dims.horizon_steps
            ),
            Err(NetError::DimensionMismatch(_))
        ));
        assert!(decode(
            &params,
            &alloc::vec![0.0; dims.hidden],
            &[],
            dims.horizon_steps
        )
        .is_err());
    }

    #[test]
    fn loss_hand_cases() {
        let dims = NetDims::tiny();
        let sample = &tiny_dataset(3, 1)[0];
        let mut rng = Rng::new(2);
        let params = NetParams::init(dims, &mut rng);
        let neighbors: Vec<&_> = sample.neighbor_histories.iter().collect();
        let input = featurize(&dims, &sample.target_history, &neighbors, &sample.path_set);
        let (out, _) = forward(&params, &input).unwrap();

        // Perfect prediction with certainty: all loss terms zero.
        let mut perfect = out;
        perfect.trajectories_local[sample.gt_path_index] = sample
            .gt_trajectory
            .poses
            .iter()
            .map(|p| {
                let l = input.anchor.to_local(p.position());
                Pose::new(l.x, l.y, 0.0)
            })
            .collect();
        for p in perfect.probabilities.iter_mut() {
            *p = 0.0;
        }
        perfect.probabilities[sample.gt_path_index] = 1.0;
        let l = loss(&perfect, input.anchor, sample, 0.5, 1.0).unwrap();
        assert!(l.l_traj < 1e-9 && l.l_pro.abs() < 1e-12 && l.total < 1e-9);

        // Uniform displacement (1, 0) on every point: L_traj = point count.
        let mut displaced = ForwardOutput {
            trajectories_local: perfect.trajectories_local.clone(),
            probabilities: perfect.probabilities.clone(),
        };
        for pose in displaced.trajectories_local[sample.gt_path_index].iter_mut() {
            pose.x += 1.0;
        }
        let l = loss(&displaced, input.anchor, sample, 0.5, 1.0).unwrap();
        let t = sample.gt_trajectory.poses.len() as f64;
        assert!((l.l_traj - t).abs() < 1e-9);
        assert!((l.total - 0.5 * t).abs() < 1e-9);

        // Half probability on the true path: L_pro = ln 2.
        let mut half = displaced;
        half.trajectories_local = perfect.trajectories_local.clone();
        let k = half.probabilities.len();
        for p in half.probabilities.iter_mut() {
            *p = if k > 1 { 0.5 / (k - 1) as f64 } else { 0.5 };
        }
        half.probabilities[sample.gt_path_index] = 0.5;
        let l = loss(&half, input.anchor, sample, 0.5, 1.0).unwrap();
        assert!((l.l_pro - core::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn loss_clamps_zero_probability() {
        let dims = NetDims::tiny();
        let sample = &tiny_dataset(5, 1)[0];
        let params = NetParams::zeros(dims);
        let neighbors: Vec<&_> = sample.neighbor_histories.iter().collect();
        let input = featurize(&dims, &sample.target_history, &neighbors, &sample.path_set);
        let (mut out, _) = forward(&params, &input).unwrap();
        for p in out.probabilities.iter_mut() {
            *p = 0.0;
        }
        let l = loss(&out, input.anchor, sample, 0.5, 1.0).unwrap();
        assert!(l.p_clamped);
        assert!(l.l_pro.is_finite());
    }

    #[test]
    fn forward_is_permutation_covariant_over_neighbors() {
        let dims = NetDims::tiny();
        let mut rng = Rng::new(11);
        let params = NetParams::init(dims, &mut rng);
        let dataset = tiny_dataset(21, 16);
        let sample = dataset
            .iter()
            .find(|s| s.neighbor_histories.len() >= 2)
            .expect("a sample with neighbors");

        let fwd = |neighbors: Vec<&HistoryTrack>| {
            let input = featurize(&dims, &sample.target_history, &neighbors, &sample.path_set);
            let (_, cache) = forward(&params, &input).unwrap();
            cache.e_updated
        };
        let order: Vec<&_> = sample.neighbor_histories.iter().collect();
        let mut reversed = order.clone();
        reversed.reverse();
        let a = fwd(order);
        let b = fwd(reversed);
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x - y).abs() < 1e-12, "{x} vs {y}");
        }
    }

    #[test]
    fn probabilities_always_sum_to_one() {
        let dims = NetDims::tiny();
        let mut rng = Rng::new(13);
        let params = NetParams::init(dims, &mut rng);
        for sample in tiny_dataset(31, 10) {
            let neighbors: Vec<&_> = sample.neighbor_histories.iter().collect();
            let input = featurize(&dims, &sample.target_history, &neighbors, &sample.path_set);
            let (out, _) = forward(&params, &input).unwrap();
            let sum: f64 = out.probabilities.iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
            assert!(out.probabilities.iter().all(|&p| p >= 0.0));
        }
    }

    #[test]
    fn gradient_check_tiny_net() {
        let dims = NetDims::tiny();
        let mut rng = Rng::new(41);
        let params = NetParams::init(dims, &mut rng);
        let dataset = tiny_dataset(51, 16);
        // Include at least one sample with neighbors so the interaction
        // encoder's gradients are exercised.
        let with_neighbors = dataset
            .iter()
            .find(|s| !s.neighbor_histories.is_empty())
            .expect("sample with neighbors");
        for sample in [&dataset[0], with_neighbors] {
            let worst = gradient_check(&params, sample, 0.5, 1.0, 1e-5).unwrap();
            assert!(worst < 1e-4, "gradient check failed: {worst}");
        }
    }

    #[test]
    fn zero_learning_rate_is_identity() {
        let dims = NetDims::tiny();
        let mut rng = Rng::new(7);
        let params = NetParams::init(dims, &mut rng);
        let dataset = tiny_dataset(61, 3);
        let before = params.to_flat();
        let out = train_toy(&dataset, params, 50, 0.0).unwrap();
        assert_eq!(before, out.params.to_flat());
    }

    #[test]
    fn single_sample_overfit() {
        let dims = NetDims::tiny();
        let mut rng = Rng::new(17);
        let params = NetParams::init(dims, &mut rng);
        let dataset = tiny_dataset(71, 1);
        let initial = dataset_loss(&params, &dataset, 0.5, 1.0).unwrap();
        let out = train_toy(&dataset, params, 1500, 0.01).unwrap();
        let trained = dataset_loss(&out.params, &dataset, 0.5, 1.0).unwrap();
        assert!(
            trained < 0.1 * initial,
            "overfit failed: {initial} -> {trained}"
        );
    }

    #[test]
    fn training_is_deterministic() {
        let dims = NetDims::tiny();
        let run = || {
            let mut rng = Rng::new(23);
            let params = NetParams::init(dims, &mut rng);
            let dataset = tiny_dataset(81, 4);
            train_toy(&dataset, params, 100, 0.005)
                .unwrap()
                .params
                .to_flat()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn params_flat_roundtrip() {
        let dims = NetDims::tiny();
        let mut rng = Rng::new(29);
        let params = NetParams::init(dims, &mut rng);
        let flat = params.to_flat();
        let back = NetParams::from_flat(dims, &flat);
        assert_eq!(params, back);
        assert_eq!(flat.len(), params.param_count());
        assert!(params.validate().is_ok());
    }

    #[test]
    fn predictor_emits_valid_sets_and_falls_back() {
        let dims = NetDims::tiny();
        let mut rng = Rng::new(3);
        let params = NetParams::init(dims, &mut rng);
        let predictor = TrtpPredictor::new(params, PredictionConfig::default());

        let lane = crate::lane_graph::LanePolyline {
            id: "l".into(),
            points: alloc::vec![
                crate::math::Vec2::new(0.0, 0.0),
                crate::math::Vec2::new(50.0, 0.0)
            ],
            successors: alloc::vec![],
            speed_limit: None,
        };
        let graph = crate::lane_graph::split_lanes(&[lane], 5.0).unwrap();

        // Off-graph: falls back to constant speed.
        let off = HistoryTrack::from_sample(HistorySample {
            t: 0.0,
            x: 0.0,
            y: 500.0,
            phi: 0.0,
            v: 4.0,
            a: 0.0,
            w: 0.0,
        });
        let set = predictor.predict(&off, &[], &graph, 4.0, 0.5);
        assert_eq!(set.len(), 1);

        // On-graph: one trajectory per enumerated path, probabilities sum 1,
        // poses on the requested stride.
        let on = HistoryTrack::from_sample(HistorySample {
            t: 0.0,
            x: 12.5,
            y: 0.2,
            phi: 0.0,
            v: 6.0,
            a: 0.0,
            w: 0.0,
        });
        let set = predictor.predict(&on, &[], &graph, 4.0, 0.5);
        let sum: f64 = set.probabilities().iter().sum();
        assert!((sum - 1.0).abs() < 1e-9);
        for t in set.trajectories() {
            assert_eq!(t.poses.len(), 8);
            assert!(t.source_path.is_some());
        }
    }
}
