//! Target-region trajectory prediction network: GRU history/path encoders,
//! a scaled dot-product interaction encoder, an MLP trajectory decoder and
//! an attention probability decoder, with full reverse-mode gradients.

use alloc::string::String;
use alloc::vec::Vec;

use crate::lane_graph::TargetPath;
#[allow(unused_imports)] // trait shim backs no_std float math
use crate::math::{angle_diff, normalize_angle, FloatExt as _, Pose, Vec2};
use crate::prediction::{softmax, HistoryTrack, PredictedTrajectory};
use crate::rng::Rng;

use super::nn::{
    attention, attention_backward, gru_backward, gru_forward, mlp_backward, mlp_forward,
    softmax_backward, GruCache, GruParams, Matrix, MlpCache, MlpParams,
};

pub const HISTORY_FEATURES: usize = 6; // x, y, phi, v, a, w (target frame)
pub const PATH_FEATURES: usize = 3; // x, y, phi (target frame)
pub const POSE_DIMS: usize = 3;

#[derive(Clone, Debug, PartialEq)]
pub enum NetError {
    DimensionMismatch(String),
    InvalidInput(String),
}

impl core::fmt::Display for NetError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            NetError::DimensionMismatch(m) => write!(f, "dimension mismatch: {m}"),
            NetError::InvalidInput(m) => write!(f, "invalid input: {m}"),
        }
    }
}

impl core::error::Error for NetError {}

/// Network dimension table.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct NetDims {
    /// Feature embedding width fed to both GRUs.
    pub embed: usize,
    /// GRU hidden size (also the attention projection width).
    pub hidden: usize,
    /// Trajectory decoder hidden width.
    pub mlp_hidden: usize,
    /// Predicted poses per trajectory.
    pub horizon_steps: usize,
    /// Path centerline resampled to this many points before encoding.
    pub path_points: usize,
    /// History samples consumed (2 Hz, most recent last).
    pub history_len: usize,
}

impl Default for NetDims {
    fn default() -> Self {
        NetDims {
            embed: 16,
            hidden: 64,
            mlp_hidden: 64,
            horizon_steps: 8,
            path_points: 10,
            history_len: 5,
        }
    }
}

impl NetDims {
    /// Tiny instance for gradient checking.
    pub fn tiny() -> Self {
        NetDims {
            embed: 8,
            hidden: 8,
            mlp_hidden: 8,
            horizon_steps: 4,
            path_points: 5,
            history_len: 3,
        }
    }
}

/// Interaction-encoder projections (query from the target encoding, keys
/// and values from neighbor encodings).
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AttnParams {
    pub w_q: Matrix,
    pub w_k: Matrix,
    pub w_v: Matrix,
}

/// Probability-decoder projections (query from the updated target encoding,
/// keys from path encodings; the softmax scores are the probabilities).
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ProbParams {
    pub w_q: Matrix,
    pub w_k: Matrix,
}

/// Full parameter set.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct NetParams {
    pub dims: NetDims,
    /// Shared encoder for the target's and the neighbors' histories.
    pub gru_history: GruParams,
    pub gru_path: GruParams,
    pub attn_interaction: AttnParams,
    pub attn_prob: ProbParams,
    pub mlp_traj: MlpParams,
}

impl NetParams {
    pub fn zeros(dims: NetDims) -> Self {
        let h = dims.hidden;
        NetParams {
            dims,
            gru_history: GruParams::zeros(HISTORY_FEATURES, dims.embed, h),
            gru_path: GruParams::zeros(PATH_FEATURES, dims.embed, h),
            attn_interaction: AttnParams {
                w_q: Matrix::zeros(h, h),
                w_k: Matrix::zeros(h, h),
                w_v: Matrix::zeros(h, h),
            },
            attn_prob: ProbParams {
                w_q: Matrix::zeros(h, h),
                w_k: Matrix::zeros(h, h),
            },
            mlp_traj: MlpParams::zeros(2 * h, dims.mlp_hidden, dims.horizon_steps * POSE_DIMS),
        }
    }

    pub fn init(dims: NetDims, rng: &mut Rng) -> Self {
        let h = dims.hidden;
        NetParams {
            dims,
            gru_history: GruParams::init(HISTORY_FEATURES, dims.embed, h, rng),
            gru_path: GruParams::init(PATH_FEATURES, dims.embed, h, rng),
            attn_interaction: AttnParams {
                w_q: Matrix::init(h, h, rng),
                w_k: Matrix::init(h, h, rng),
                w_v: Matrix::init(h, h, rng),
            },
            attn_prob: ProbParams {
                w_q: Matrix::init(h, h, rng),
                w_k: Matrix::init(h, h, rng),
            },
            mlp_traj: MlpParams::init(2 * h, dims.mlp_hidden, dims.horizon_steps * POSE_DIMS, rng),
        }
    }

    /// Checks that every tensor matches the dimension table.
    pub fn validate(&self) -> Result<(), NetError> {
        let d = &self.dims;
        let check = |ok: bool, what: &str| -> Result<(), NetError> {
            if ok {
                Ok(())
            } else {
                Err(NetError::DimensionMismatch(what.into()))
            }
        };
        check(
            self.gru_history.feat() == HISTORY_FEATURES
                && self.gru_history.embed() == d.embed
                && self.gru_history.hidden() == d.hidden,
            "gru_history",
        )?;
        check(
            self.gru_path.feat() == PATH_FEATURES
                && self.gru_path.embed() == d.embed
                && self.gru_path.hidden() == d.hidden,
            "gru_path",
        )?;
        check(
            self.attn_interaction.w_q.rows == d.hidden
                && self.attn_interaction.w_k.rows == d.hidden
                && self.attn_interaction.w_v.rows == d.hidden,
            "attn_interaction",
        )?;
        check(
            self.attn_prob.w_q.rows == d.hidden && self.attn_prob.w_k.rows == d.hidden,
            "attn_prob",
        )?;
        check(
            self.mlp_traj.w1.cols == 2 * d.hidden
                && self.mlp_traj.w2.rows == d.horizon_steps * POSE_DIMS,
            "mlp_traj",
        )?;
        Ok(())
    }

    /// Flattens every parameter into one vector (fixed traversal order).
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.visit(|chunk| out.extend_from_slice(chunk));
        out
    }

    /// Rebuilds parameters from a flat vector produced by [`Self::to_flat`].
    pub fn from_flat(dims: NetDims, flat: &[f64]) -> Self {
        let mut p = NetParams::zeros(dims);
        let mut offset = 0;
        p.visit_mut(|chunk| {
            chunk.copy_from_slice(&flat[offset..offset + chunk.len()]);
            offset += chunk.len();
        });
        p
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit(|chunk| n += chunk.len());
        n
    }

    /// SGD update: `self -= lr * grads`.
    pub fn step(&mut self, grads: &NetParams, lr: f64) {
        let flat = grads.to_flat();
        let mut offset = 0;
        self.visit_mut(|chunk| {
            for (p, g) in chunk.iter_mut().zip(flat[offset..].iter()) {
                *p -= lr * g;
            }
            offset += chunk.len();
        });
    }

    fn visit<F: FnMut(&[f64])>(&self, mut f: F) {
        for gru in [&self.gru_history, &self.gru_path] {
            f(&gru.w_embed.data);
            f(&gru.b_embed);
            f(&gru.w_z.data);
            f(&gru.u_z.data);
            f(&gru.b_z);
            f(&gru.w_r.data);
            f(&gru.u_r.data);
            f(&gru.b_r);
            f(&gru.w_h.data);
            f(&gru.u_h.data);
            f(&gru.b_h);
        }
        f(&self.attn_interaction.w_q.data);
        f(&self.attn_interaction.w_k.data);
        f(&self.attn_interaction.w_v.data);
        f(&self.attn_prob.w_q.data);
        f(&self.attn_prob.w_k.data);
        f(&self.mlp_traj.w1.data);
        f(&self.mlp_traj.b1);
        f(&self.mlp_traj.w2.data);
        f(&self.mlp_traj.b2);
    }

    fn visit_mut<F: FnMut(&mut [f64])>(&mut self, mut f: F) {
        for gru in [&mut self.gru_history, &mut self.gru_path] {
            f(&mut gru.w_embed.data);
            f(&mut gru.b_embed);
            f(&mut gru.w_z.data);
            f(&mut gru.u_z.data);
            f(&mut gru.b_z);
            f(&mut gru.w_r.data);
            f(&mut gru.u_r.data);
            f(&mut gru.b_r);
            f(&mut gru.w_h.data);
            f(&mut gru.u_h.data);
            f(&mut gru.b_h);
        }
        f(&mut self.attn_interaction.w_q.data);
        f(&mut self.attn_interaction.w_k.data);
        f(&mut self.attn_interaction.w_v.data);
        f(&mut self.attn_prob.w_q.data);
        f(&mut self.attn_prob.w_k.data);
        f(&mut self.mlp_traj.w1.data);
        f(&mut self.mlp_traj.b1);
        f(&mut self.mlp_traj.w2.data);
        f(&mut self.mlp_traj.b2);
    }
}

/// One training example.
#[derive(Clone, Debug)]
pub struct TrainingSample {
    pub target_history: HistoryTrack,
    pub neighbor_histories: Vec<HistoryTrack>,
    pub path_set: Vec<TargetPath>,
    /// Ground-truth future poses (world frame), one per horizon step.
    pub gt_trajectory: PredictedTrajectory,
    /// Index of the path sharing the ground truth's ending lane piece.
    pub gt_path_index: usize,
}

/// Featurized network input, all in the target's current frame.
pub struct ModelInput {
    pub anchor: Pose,
    pub target_feats: Vec<Vec<f64>>,
    pub neighbor_feats: Vec<Vec<Vec<f64>>>,
    pub path_feats: Vec<Vec<Vec<f64>>>,
}

fn history_features(dims: &NetDims, anchor: Pose, track: &HistoryTrack) -> Vec<Vec<f64>> {
    track
        .downsampled(0.5, dims.history_len)
        .iter()
        .map(|s| {
            let local = anchor.to_local(Vec2::new(s.x, s.y));
            alloc::vec![
                local.x,
                local.y,
                angle_diff(s.phi, anchor.phi),
                s.v,
                s.a,
                s.w,
            ]
        })
        .collect()
}

/// Resamples a path centerline to `n` points at uniform arc spacing,
/// expressed in the anchor frame.
fn path_features(anchor: Pose, path: &TargetPath, n: usize) -> Vec<Vec<f64>> {
    let line = &path.concatenated_centerline;
    let total: f64 = line
        .windows(2)
        .map(|w| w[0].position().dist(w[1].position()))
        .sum();
    (0..n)
        .map(|i| {
            let s = total * i as f64 / (n - 1) as f64;
            // Walk to arc length s.
            let mut acc = 0.0;
            for w in line.windows(2) {
                let (a, b) = (w[0].position(), w[1].position());
                let seg = a.dist(b);
                if s <= acc + seg || acc + seg >= total - 1e-12 {
                    let t = ((s - acc) / seg).clamp(0.0, 1.0);
                    let p = a.lerp(b, t);
                    let local = anchor.to_local(p);
                    let phi = angle_diff((b - a).angle(), anchor.phi);
                    return alloc::vec![local.x, local.y, phi];
                }
                acc += seg;
            }
            let last = line.last().unwrap();
            let local = anchor.to_local(last.position());
            alloc::vec![local.x, local.y, angle_diff(last.phi, anchor.phi)]
        })
        .collect()
}

/// Builds the featurized input for one sample.
pub fn featurize(
    dims: &NetDims,
    target: &HistoryTrack,
    neighbors: &[&HistoryTrack],
    paths: &[TargetPath],
) -> ModelInput {
    let last = target.last();
    let anchor = Pose::new(last.x, last.y, last.phi);
    ModelInput {
        anchor,
        target_feats: history_features(dims, anchor, target),
        neighbor_feats: neighbors
            .iter()
            .map(|n| history_features(dims, anchor, n))
            .collect(),
        path_feats: paths
            .iter()
            .map(|p| path_features(anchor, p, dims.path_points))
            .collect(),
    }
}

/// Forward-pass intermediates retained for the backward pass.
pub struct ForwardCache {
    target_gru: GruCache,
    neighbor_grus: Vec<GruCache>,
    e_target: Vec<f64>,
    e_neighbors: Vec<Vec<f64>>,
    inter_q: Vec<f64>,
    inter_keys: Vec<Vec<f64>>,
    inter_values: Vec<Vec<f64>>,
    inter_weights: Vec<f64>,
    pub e_updated: Vec<f64>,
    path_grus: Vec<GruCache>,
    pub e_paths: Vec<Vec<f64>>,
    mlp_caches: Vec<MlpCache>,
    mlp_outputs: Vec<Vec<f64>>,
    prob_q: Vec<f64>,
    prob_keys: Vec<Vec<f64>>,
    pub probabilities: Vec<f64>,
}

/// Forward-pass result: per-path trajectories in the anchor frame plus the
/// probability distribution over paths.
pub struct ForwardOutput {
    pub trajectories_local: Vec<Vec<Pose>>,
    pub probabilities: Vec<f64>,
}

/// Checked GRU encoding (standard recurrence, zero initial hidden state).
pub fn gru_encode(params: &GruParams, sequence: &[Vec<f64>]) -> Result<Vec<f64>, NetError> {
    if sequence.is_empty() {
        return Err(NetError::InvalidInput("empty sequence".into()));
    }
    if sequence.iter().any(|f| f.len() != params.feat()) {
        return Err(NetError::DimensionMismatch(alloc::format!(
            "feature width {} expected {}",
            sequence[0].len(),
            params.feat()
        )));
    }
    Ok(gru_forward(params, sequence).0)
}

/// Full forward pass over a featurized input.
pub fn forward(
    params: &NetParams,
    input: &ModelInput,
) -> Result<(ForwardOutput, ForwardCache), NetError> {
    if input.path_feats.is_empty() {
        return Err(NetError::InvalidInput("no candidate paths".into()));
    }
    if input.target_feats.is_empty() {
        return Err(NetError::InvalidInput("empty target history".into()));
    }

    let (e_target, target_gru) = gru_forward(&params.gru_history, &input.target_feats);

    let mut neighbor_grus = Vec::new();
    let mut e_neighbors = Vec::new();
    for feats in &input.neighbor_feats {
        let (e, cache) = gru_forward(&params.gru_history, feats);
        neighbor_grus.push(cache);
        e_neighbors.push(e);
    }

    // Interaction encoder: neighbors update the target encoding through
    // attention; with no neighbors the encoding passes through unchanged.
    let (inter_q, inter_keys, inter_values, inter_weights, e_updated) = if e_neighbors.is_empty() {
        (
            Vec::new(),
            Vec::new(),
            Vec::new(),
            Vec::new(),
            e_target.clone(),
        )
    } else {
        let q = params.attn_interaction.w_q.matvec(&e_target);
        let keys: Vec<Vec<f64>> = e_neighbors
            .iter()
            .map(|e| params.attn_interaction.w_k.matvec(e))
            .collect();
        let values: Vec<Vec<f64>> = e_neighbors
            .iter()
            .map(|e| params.attn_interaction.w_v.matvec(e))
            .collect();
        let (ctx, weights) = attention(&q, &keys, &values);
        let e_updated: Vec<f64> = e_target
            .iter()
            .zip(ctx.iter())
            .map(|(a, b)| a + b)
            .collect();
        (q, keys, values, weights, e_updated)
    };

    let mut path_grus = Vec::new();
    let mut e_paths = Vec::new();
    for feats in &input.path_feats {
        let (e, cache) = gru_forward(&params.gru_path, feats);
        path_grus.push(cache);
        e_paths.push(e);
    }

    // Trajectory decoder: one MLP pass per path on concat(e_updated, e_path).
    let mut mlp_caches = Vec::new();
    let mut mlp_outputs = Vec::new();
    let mut trajectories_local = Vec::new();
    for e_path in &e_paths {
        let mut joint = e_updated.clone();
        joint.extend_from_slice(e_path);
        let (out, cache) = mlp_forward(&params.mlp_traj, &joint);
        trajectories_local.push(
            out.chunks(POSE_DIMS)
                .map(|c| Pose::new(c[0], c[1], normalize_angle(c[2])))
                .collect(),
        );
        mlp_caches.push(cache);
        mlp_outputs.push(out);
    }

    // Probability decoder: softmax over scaled dot-product scores between
    // the projected updated encoding and projected path encodings.
    let prob_q = params.attn_prob.w_q.matvec(&e_updated);
    let prob_keys: Vec<Vec<f64>> = e_paths
        .iter()
        .map(|e| params.attn_prob.w_k.matvec(e))
        .collect();
    let scale = 1.0 / (prob_q.len() as f64).sqrt();
    let scores: Vec<f64> = prob_keys
        .iter()
        .map(|k| prob_q.iter().zip(k.iter()).map(|(a, b)| a * b).sum::<f64>() * scale)
        .collect();
    let probabilities = softmax(&scores);

    Ok((
        ForwardOutput {
            trajectories_local,
            probabilities: probabilities.clone(),
        },
        ForwardCache {
            target_gru,
            neighbor_grus,
            e_target,
            e_neighbors,
            inter_q,
            inter_keys,
            inter_values,
            inter_weights,
            e_updated,
            path_grus,
            e_paths,
            mlp_caches,
            mlp_outputs,
            prob_q,
            prob_keys,
            probabilities,
        },
    ))
}

/// Decodes trajectories and probabilities from precomputed encodings
/// (shape contract of the decoder heads).
pub fn decode(
    params: &NetParams,
    e_updated: &[f64],
    e_paths: &[Vec<f64>],
    horizon_steps: usize,
) -> Result<(Vec<Vec<Pose>>, Vec<f64>), NetError> {
    if e_paths.is_empty() {
        return Err(NetError::InvalidInput("no path encodings".into()));
    }
    if e_updated.len() != params.dims.hidden
        || e_paths.iter().any(|e| e.len() != params.dims.hidden)
    {
        return Err(NetError::DimensionMismatch("encoding width".into()));
    }
    if horizon_steps != params.dims.horizon_steps {
        return Err(NetError::DimensionMismatch("horizon steps".into()));
    }
    let mut trajectories = Vec::with_capacity(e_paths.len());
    for e_path in e_paths {
        let mut joint = e_updated.to_vec();
        joint.extend_from_slice(e_path);
        let (out, _) = mlp_forward(&params.mlp_traj, &joint);
        trajectories.push(
            out.chunks(POSE_DIMS)
                .map(|c| Pose::new(c[0], c[1], normalize_angle(c[2])))
                .collect(),
        );
    }
    let q = params.attn_prob.w_q.matvec(e_updated);
    let keys: Vec<Vec<f64>> = e_paths
        .iter()
        .map(|e| params.attn_prob.w_k.matvec(e))
        .collect();
    let scale = 1.0 / (q.len() as f64).sqrt();
    let scores: Vec<f64> = keys
        .iter()
        .map(|k| q.iter().zip(k.iter()).map(|(a, b)| a * b).sum::<f64>() * scale)
        .collect();
    Ok((trajectories, softmax(&scores)))
}

/// Loss terms for one sample.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossValues {
    /// Summed pointwise positional displacement on the P* trajectory.
    pub l_traj: f64,
    /// Negative log probability of P*.
    pub l_pro: f64,
    /// `alpha * l_traj + beta * l_pro`.
    pub total: f64,
    /// Set when p* had to be clamped away from zero.
    pub p_clamped: bool,
}

const P_STAR_FLOOR: f64 = 1e-12;

/// Computes the training loss from forward outputs. Positions are compared
/// in the anchor frame; the ground truth is mapped into it here.
pub fn loss(
    output: &ForwardOutput,
    anchor: Pose,
    sample: &TrainingSample,
    alpha: f64,
    beta: f64,
) -> Result<LossValues, NetError> {
    if sample.gt_path_index >= output.trajectories_local.len() {
        return Err(NetError::InvalidInput("gt_path_index out of bounds".into()));
    }
    let pred = &output.trajectories_local[sample.gt_path_index];
    if pred.len() != sample.gt_trajectory.poses.len() {
        return Err(NetError::DimensionMismatch(
            "prediction/ground-truth length".into(),
        ));
    }
    let mut l_traj = 0.0;
    for (p, gt) in pred.iter().zip(sample.gt_trajectory.poses.iter()) {
        let gt_local = anchor.to_local(gt.position());
        l_traj += (Vec2::new(p.x, p.y) - gt_local).norm();
    }
    let p_star = output.probabilities[sample.gt_path_index];
    let p_clamped = p_star < P_STAR_FLOOR;
    let l_pro = -p_star.max(P_STAR_FLOOR).ln();
    Ok(LossValues {
        l_traj,
        l_pro,
        total: alpha * l_traj + beta * l_pro,
        p_clamped,
    })
}

/// Reverse-mode gradients of `alpha * L_traj + beta * L_pro` with respect
/// to every parameter, accumulated into a parameter-shaped container.
pub fn backward(
    params: &NetParams,
    input: &ModelInput,
    cache: &ForwardCache,
    sample: &TrainingSample,
    alpha: f64,
    beta: f64,
) -> NetParams {
    let mut grads = NetParams::zeros(params.dims);
    let hidden = params.dims.hidden;
    let n_paths = cache.e_paths.len();
    let star = sample.gt_path_index;

    let mut d_e_updated = alloc::vec![0.0; hidden];
    let mut d_e_paths = alloc::vec![alloc::vec![0.0; hidden]; n_paths];

    // --- Trajectory loss through the P* MLP head ---
    let pred = &cache.mlp_outputs[star];
    let mut d_out = alloc::vec![0.0; pred.len()];
    for (i, gt) in sample.gt_trajectory.poses.iter().enumerate() {
        let gt_local = input.anchor.to_local(gt.position());
        let dx = pred[i * POSE_DIMS] - gt_local.x;
        let dy = pred[i * POSE_DIMS + 1] - gt_local.y;
        let norm = dx.hypot(dy);
        if norm > 1e-12 {
            d_out[i * POSE_DIMS] = alpha * dx / norm;
            d_out[i * POSE_DIMS + 1] = alpha * dy / norm;
        }
        // Heading components carry no loss.
    }
    let d_joint = mlp_backward(
        &params.mlp_traj,
        &cache.mlp_caches[star],
        &d_out,
        &mut grads.mlp_traj,
    );
    for i in 0..hidden {
        d_e_updated[i] += d_joint[i];
        d_e_paths[star][i] += d_joint[hidden + i];
    }

    // --- Probability loss through the softmax scores ---
    let p_star = cache.probabilities[star].max(P_STAR_FLOOR);
    let mut d_prob = alloc::vec![0.0; n_paths];
    d_prob[star] = -beta / p_star;
    let d_scores = softmax_backward(&cache.probabilities, &d_prob);
    let scale = 1.0 / (hidden as f64).sqrt();
    let mut d_prob_q = alloc::vec![0.0; hidden];
    for (j, k) in cache.prob_keys.iter().enumerate() {
        let ds = d_scores[j] * scale;
        for i in 0..hidden {
            d_prob_q[i] += ds * k[i];
        }
        // d key_j = ds * q; key_j = Pk e_path_j
        let dk: Vec<f64> = cache.prob_q.iter().map(|q| ds * q).collect();
        grads.attn_prob.w_k.add_outer(&dk, &cache.e_paths[j]);
        let de = params.attn_prob.w_k.matvec_t(&dk);
        for i in 0..hidden {
            d_e_paths[j][i] += de[i];
        }
    }
    grads.attn_prob.w_q.add_outer(&d_prob_q, &cache.e_updated);
    let de = params.attn_prob.w_q.matvec_t(&d_prob_q);
    for i in 0..hidden {
        d_e_updated[i] += de[i];
    }

    // --- Path encoders ---
    for (j, d_e) in d_e_paths.iter().enumerate() {
        gru_backward(
            &params.gru_path,
            &cache.path_grus[j],
            d_e,
            &mut grads.gru_path,
        );
    }

    // --- Interaction encoder ---
    let mut d_e_target = alloc::vec![0.0; hidden];
    if cache.e_neighbors.is_empty() {
        d_e_target.copy_from_slice(&d_e_updated);
    } else {
        // e_updated = e_target + ctx
        d_e_target.copy_from_slice(&d_e_updated);
        let d_ctx = &d_e_updated;
        let (d_q, d_keys, d_values) = attention_backward(
            &cache.inter_q,
            &cache.inter_keys,
            &cache.inter_values,
            &cache.inter_weights,
            d_ctx,
        );
        grads.attn_interaction.w_q.add_outer(&d_q, &cache.e_target);
        let de = params.attn_interaction.w_q.matvec_t(&d_q);
        for i in 0..hidden {
            d_e_target[i] += de[i];
        }
        for (j, e_n) in cache.e_neighbors.iter().enumerate() {
            grads.attn_interaction.w_k.add_outer(&d_keys[j], e_n);
            grads.attn_interaction.w_v.add_outer(&d_values[j], e_n);
            let mut d_e_n = params.attn_interaction.w_k.matvec_t(&d_keys[j]);
            let dv = params.attn_interaction.w_v.matvec_t(&d_values[j]);
            for i in 0..hidden {
                d_e_n[i] += dv[i];
            }
            gru_backward(
                &params.gru_history,
                &cache.neighbor_grus[j],
                &d_e_n,
                &mut grads.gru_history,
            );
        }
    }

    gru_backward(
        &params.gru_history,
        &cache.target_gru,
        &d_e_target,
        &mut grads.gru_history,
    );

    grads
}

/// Converts a local-frame decoded trajectory back to world poses.
pub fn to_world(anchor: Pose, local: &[Pose]) -> Vec<Pose> {
    local
        .iter()
        .map(|p| {
            let w = anchor.to_world(Vec2::new(p.x, p.y));
            Pose::new(w.x, w.y, normalize_angle(anchor.phi + p.phi))
        })
        .collect()
}
