//! Risk-aware model predictive contouring control.
//!
//! Each control cycle solves the contouring problem over an N-stage horizon:
//! track the reference path via contouring/lag errors, maximize progress
//! along it, and pay probability-weighted risk-field costs, subject to
//! kinematic bicycle dynamics and box limits.
//!
//! The solver is a sequential-quadratic-programming scheme in
//! real-time-iteration style: single shooting with analytic stage Jacobians,
//! Gauss-Newton curvature for the quadratic terms plus the exact risk
//! gradient with a clamped diagonal Hessian, a Riccati sweep for the QP
//! subproblem, input clipping against the box limits, and a backtracking
//! line search on the true nonlinear objective under a fixed iteration cap.

use alloc::vec::Vec;

#[allow(unused_imports)] // trait shim backs no_std float math
use crate::math::{normalize_angle, FloatExt as _};
use crate::reference_path::ReferencePath;
use crate::risk_field::{RiskField, RiskFieldParams};
use crate::vehicle::{ControlInput, VehicleLimits, VehicleState};

const NX: usize = 6; // x, y, phi, delta, v, theta_mu
const NU: usize = 3; // delta_rate, accel, v_theta

type ZVec = [f64; NX];
type WVec = [f64; NU];
type ZMat = [[f64; NX]; NX];
type BMat = [[f64; NU]; NX]; // B[state row][input col]
type KMat = [[f64; NX]; NU]; // feedback gain, input x state

/// Objective weights of the stage cost.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct PlannerWeights {
    /// Contouring error weight.
    pub q_c: f64,
    /// Lag error weight; must stay positive for the progress approximation
    /// to track the true projection.
    pub q_l: f64,
    /// Input weights (steering rate, acceleration).
    pub q_u: (f64, f64),
    /// Risk-field weight.
    pub q_r: f64,
    /// Progress reward weight.
    pub q_v: f64,
    /// Per-stage risk discount, shared with the field parameters.
    pub gamma: f64,
}

impl Default for PlannerWeights {
    fn default() -> Self {
        PlannerWeights {
            q_c: 5.0,
            q_l: 50.0,
            q_u: (0.1, 0.05),
            q_r: 200.0,
            q_v: 0.2,
            gamma: 0.99,
        }
    }
}

/// Solver configuration.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct PlannerConfig {
    /// Horizon length N (stages).
    pub horizon: usize,
    /// Stage duration in seconds.
    pub dt: f64,
    /// SQP iteration cap per solve.
    pub max_iters: usize,
    pub weights: PlannerWeights,
    /// Upper bound on the progress speed input.
    pub v_theta_max: f64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        PlannerConfig {
            horizon: 80,
            dt: 0.05,
            max_iters: 5,
            weights: PlannerWeights::default(),
            v_theta_max: 15.0,
        }
    }
}

/// Vehicle state augmented with the progress parameter.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AugmentedState {
    pub vehicle: VehicleState,
    pub theta_mu: f64,
}

/// Control input augmented with the progress speed.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AugmentedInput {
    pub control: ControlInput,
    pub v_theta: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum SolverStatus {
    Converged,
    MaxIters,
    InfeasibleStartRecovered,
}

/// Solution of one MPCC solve; warm-startable.
#[derive(Clone, Debug)]
pub struct PlannerSolution {
    /// N + 1 states; they satisfy the discretized dynamics under `inputs`.
    pub states: Vec<AugmentedState>,
    /// N inputs.
    pub inputs: Vec<AugmentedInput>,
    /// N + 1 per-stage costs of the returned trajectory (the terminal stage
    /// has no input or progress term).
    pub stage_costs: Vec<f64>,
    /// Objective values of the accepted SQP iterates, starting with the
    /// initial rollout; strictly decreasing by the line-search guarantee.
    pub objectives: Vec<f64>,
    pub status: SolverStatus,
}

impl PlannerSolution {
    pub fn objective(&self) -> f64 {
        *self
            .objectives
            .last()
            .expect("solution carries at least the initial objective")
    }

    pub fn first_input(&self) -> AugmentedInput {
        self.inputs[0]
    }
}

/// Approximate contouring and lag errors at progress `theta_mu`
/// (`e_c`: signed lateral deviation, `e_l`: signed longitudinal lag).
pub fn contouring_and_lag_errors(
    path: &ReferencePath,
    x: f64,
    y: f64,
    theta_mu: f64,
) -> (f64, f64) {
    let f = path.frame_at(theta_mu);
    let (sin_phi, cos_phi) = (f.tangent.y, f.tangent.x);
    let dx = f.pos.x - x;
    let dy = f.pos.y - y;
    let e_c = sin_phi * dx - cos_phi * dy;
    let e_l = cos_phi * dx + sin_phi * dy;
    (e_c, e_l)
}

/// One stage of the planner objective:
/// `q_c e_c^2 + q_l e_l^2 + ||u||_{q_u}^2 + q_r gamma^k risk - q_v v_theta`.
pub fn stage_cost(
    weights: &PlannerWeights,
    errors: (f64, f64),
    input: &AugmentedInput,
    risk_value: f64,
    k: usize,
) -> f64 {
    let (e_c, e_l) = errors;
    weights.q_c * e_c * e_c
        + weights.q_l * e_l * e_l
        + weights.q_u.0 * input.control.delta_rate * input.control.delta_rate
        + weights.q_u.1 * input.control.accel * input.control.accel
        + weights.q_r * weights.gamma.powi(k as i32) * risk_value
        - weights.q_v * input.v_theta
}

/// MPCC solver bound to one vehicle's limits and configuration.
#[derive(Clone, Debug)]
pub struct MpccPlanner {
    pub config: PlannerConfig,
    pub limits: VehicleLimits,
}

struct StageDerivs {
    cx: ZVec,
    cu: WVec,
    cxx: ZMat,
    cuu_diag: WVec,
}

impl MpccPlanner {
    pub fn new(config: PlannerConfig, limits: VehicleLimits) -> Self {
        MpccPlanner { config, limits }
    }

    /// Solves the horizon problem from `initial`, optionally warm-started
    /// with the (time-shifted) previous solution's input sequence.
    pub fn solve(
        &self,
        initial: &VehicleState,
        path: &ReferencePath,
        field: &RiskField,
        warm: Option<&PlannerSolution>,
    ) -> PlannerSolution {
        let n = self.config.horizon;
        let theta0 = path
            .project(initial.x, initial.y, warm.map(|w| w.states[0].theta_mu))
            .unwrap_or(0.0);
        let z0: ZVec = [
            initial.x,
            initial.y,
            initial.phi,
            initial
                .delta
                .clamp(-self.limits.delta_max, self.limits.delta_max),
            initial.v.clamp(self.limits.v_min, self.limits.v_max),
            theta0,
        ];

        let default_inputs =
            alloc::vec![[0.0, 0.0, initial.v.clamp(0.0, self.config.v_theta_max)]; n];
        let mut recovered = false;
        let mut inputs: Vec<WVec> = match warm {
            Some(w) if w.inputs.len() == n => w
                .inputs
                .iter()
                .map(|u| self.clamp_input([u.control.delta_rate, u.control.accel, u.v_theta]))
                .collect(),
            _ => default_inputs.clone(),
        };

        let (mut states, mut cost) = self.rollout(z0, &inputs, path, field);
        if !cost.is_finite() {
            // Reject the warm start and recover from the default profile.
            recovered = true;
            inputs = default_inputs;
            let (s, c) = self.rollout(z0, &inputs, path, field);
            states = s;
            cost = c;
        }

        let mut objectives = alloc::vec![cost];
        let mut mu = 1e-6;
        let mut status = SolverStatus::Converged;
        let path_len = path.total_length();

        for iter in 0..self.config.max_iters {
            let derivs = self.stage_derivatives(&states, &inputs, path, field);

            // Backward Riccati sweep; bump regularization until the input
            // Hessian factors.
            let gains = loop {
                match self.backward_pass(&states, &inputs, &derivs, mu, path_len) {
                    Some(g) => break Some(g),
                    None => {
                        mu *= 10.0;
                        if mu > 1e8 {
                            break None;
                        }
                    }
                }
            };
            let Some((kff, kfb)) = gains else {
                break;
            };

            // Backtracking line search on the true objective.
            let mut accepted = false;
            let mut alpha = 1.0;
            for _ in 0..7 {
                let (cand_states, cand_inputs, cand_cost) =
                    self.rollout_feedback(z0, &states, &inputs, &kff, &kfb, alpha, path, field);
                if cand_cost.is_finite() && cand_cost < cost {
                    let improvement = cost - cand_cost;
                    states = cand_states;
                    inputs = cand_inputs;
                    cost = cand_cost;
                    objectives.push(cost);
                    accepted = true;
                    mu = (mu * 0.5).max(1e-9);
                    if improvement < 1e-10 * (1.0 + cost.abs()) {
                        // Converged: further iterations cannot make progress
                        // worth their cost.
                        status = SolverStatus::Converged;
                        accepted = false; // exit the outer loop below
                    } else if iter + 1 == self.config.max_iters {
                        status = SolverStatus::MaxIters;
                    }
                    break;
                }
                alpha *= 0.5;
            }
            if !accepted {
                break;
            }
        }

        if recovered {
            status = SolverStatus::InfeasibleStartRecovered;
        }

        self.package(states, inputs, objectives, status, path, field)
    }

    /// Receding-horizon warm start: drop the first stage, duplicate the last
    /// input, and extend the state tail by integrating it, so the shifted
    /// solution keeps shooting consistency.
    pub fn warm_start_shift(
        &self,
        previous: &PlannerSolution,
        path: &ReferencePath,
    ) -> PlannerSolution {
        let n = self.config.horizon;
        debug_assert_eq!(previous.inputs.len(), n);
        let mut inputs: Vec<WVec> = previous.inputs[1..]
            .iter()
            .map(|u| [u.control.delta_rate, u.control.accel, u.v_theta])
            .collect();
        let last = *inputs.last().expect("non-empty input sequence");
        inputs.push(last);

        let first = &previous.states[1];
        let z0: ZVec = [
            first.vehicle.x,
            first.vehicle.y,
            first.vehicle.phi,
            first.vehicle.delta,
            first.vehicle.v,
            first.theta_mu,
        ];
        let field = RiskField::empty(RiskFieldParams::default(), 0);
        let (states, cost) = self.rollout(z0, &inputs, path, &field);
        self.package(
            states,
            inputs,
            alloc::vec![cost],
            previous.status,
            path,
            &field,
        )
    }

    fn clamp_input(&self, w: WVec) -> WVec {
        [
            w[0].clamp(-self.limits.delta_rate_max, self.limits.delta_rate_max),
            w[1].clamp(self.limits.accel_min, self.limits.accel_max),
            w[2].clamp(0.0, self.config.v_theta_max),
        ]
    }

    /// Discrete dynamics: one midpoint RK2 step of the augmented model with
    /// the steering angle, speed and progress clamped afterwards.
    fn step(&self, z: &ZVec, w: &WVec, path_len: f64) -> ZVec {
        let dt = self.config.dt;
        let l = self.limits.wheelbase_l;
        let f = |z: &ZVec| -> ZVec {
            let (s, c) = z[2].sin_cos();
            [z[4] * c, z[4] * s, z[4] / l * z[3].tan(), w[0], w[1], w[2]]
        };
        let k1 = f(z);
        let mut zm = *z;
        for i in 0..NX {
            zm[i] += 0.5 * dt * k1[i];
        }
        let k2 = f(&zm);
        let mut next = *z;
        for i in 0..NX {
            next[i] += dt * k2[i];
        }
        next[2] = normalize_angle(next[2]);
        next[3] = next[3].clamp(-self.limits.delta_max, self.limits.delta_max);
        next[4] = next[4].clamp(self.limits.v_min, self.limits.v_max);
        next[5] = next[5].clamp(0.0, path_len);
        next
    }

    /// Dynamics step plus analytic Jacobians A = dz'/dz, B = dz'/dw, with
    /// rows zeroed for clamped output channels.
    fn step_jacobians(&self, z: &ZVec, w: &WVec, path_len: f64) -> (ZVec, ZMat, BMat) {
        let dt = self.config.dt;
        let l = self.limits.wheelbase_l;

        let jac = |z: &ZVec| -> ZMat {
            let (s, c) = z[2].sin_cos();
            let cos_d = z[3].cos();
            let mut j = [[0.0; NX]; NX];
            j[0][2] = -z[4] * s;
            j[0][4] = c;
            j[1][2] = z[4] * c;
            j[1][4] = s;
            j[2][3] = z[4] / (l * cos_d * cos_d);
            j[2][4] = z[3].tan() / l;
            j
        };

        let f = |z: &ZVec| -> ZVec {
            let (s, c) = z[2].sin_cos();
            [z[4] * c, z[4] * s, z[4] / l * z[3].tan(), w[0], w[1], w[2]]
        };

        let k1 = f(z);
        let mut zm = *z;
        for i in 0..NX {
            zm[i] += 0.5 * dt * k1[i];
        }
        let j0 = jac(z);
        let jm = jac(&zm);

        // A = I + dt * Jm * (I + dt/2 * J0)
        let mut inner = [[0.0; NX]; NX];
        for (i, row) in inner.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = 0.5 * dt * j0[i][j] + if i == j { 1.0 } else { 0.0 };
            }
        }
        let mut a = [[0.0; NX]; NX];
        for i in 0..NX {
            for j in 0..NX {
                let mut acc = if i == j { 1.0 } else { 0.0 };
                for (k, inner_row) in inner.iter().enumerate() {
                    acc += dt * jm[i][k] * inner_row[j];
                }
                a[i][j] = acc;
            }
        }

        // B[i][j] = dt * (dt/2 * Jm[i][3 + j] + Bc[i][j]); the continuous
        // input matrix maps inputs straight onto states 3..5.
        let mut b = [[0.0; NU]; NX];
        for (i, row) in b.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                let bc = if i == 3 + j { 1.0 } else { 0.0 };
                *v = dt * (0.5 * dt * jm[i][3 + j] + bc);
            }
        }

        let k2 = f(&zm);
        let mut next = *z;
        for i in 0..NX {
            next[i] += dt * k2[i];
        }
        next[2] = normalize_angle(next[2]);

        // Clamped channels propagate no sensitivity.
        let d = next[3].clamp(-self.limits.delta_max, self.limits.delta_max);
        if d != next[3] {
            next[3] = d;
            a[3] = [0.0; NX];
            b[3] = [0.0; NU];
        }
        let v = next[4].clamp(self.limits.v_min, self.limits.v_max);
        if v != next[4] {
            next[4] = v;
            a[4] = [0.0; NX];
            b[4] = [0.0; NU];
        }
        let th = next[5].clamp(0.0, path_len);
        if th != next[5] {
            next[5] = th;
            a[5] = [0.0; NX];
            b[5] = [0.0; NU];
        }

        (next, a, b)
    }

    fn risk_weight(&self, k: usize) -> f64 {
        self.config.weights.q_r * self.config.weights.gamma.powi(k as i32)
    }

    fn stage_cost_raw(
        &self,
        z: &ZVec,
        w: Option<&WVec>,
        k: usize,
        path: &ReferencePath,
        field: &RiskField,
    ) -> f64 {
        let wts = &self.config.weights;
        let (e_c, e_l) = contouring_and_lag_errors(path, z[0], z[1], z[5]);
        let mut cost = wts.q_c * e_c * e_c + wts.q_l * e_l * e_l;
        if wts.q_r != 0.0 && field.stage_count() > 0 {
            cost +=
                self.risk_weight(k) * field.value_at(k.min(field.stage_count() - 1), z[0], z[1]);
        }
        if let Some(w) = w {
            cost += wts.q_u.0 * w[0] * w[0] + wts.q_u.1 * w[1] * w[1] - wts.q_v * w[2];
        }
        cost
    }

    fn rollout(
        &self,
        z0: ZVec,
        inputs: &[WVec],
        path: &ReferencePath,
        field: &RiskField,
    ) -> (Vec<ZVec>, f64) {
        let path_len = path.total_length();
        let mut states = Vec::with_capacity(inputs.len() + 1);
        states.push(z0);
        let mut cost = 0.0;
        for (k, w) in inputs.iter().enumerate() {
            cost += self.stage_cost_raw(&states[k], Some(w), k, path, field);
            let next = self.step(&states[k], w, path_len);
            states.push(next);
        }
        cost += self.stage_cost_raw(states.last().unwrap(), None, inputs.len(), path, field);
        (states, cost)
    }

    #[allow(clippy::too_many_arguments)]
    fn rollout_feedback(
        &self,
        z0: ZVec,
        ref_states: &[ZVec],
        ref_inputs: &[WVec],
        kff: &[WVec],
        kfb: &[KMat],
        alpha: f64,
        path: &ReferencePath,
        field: &RiskField,
    ) -> (Vec<ZVec>, Vec<WVec>, f64) {
        let path_len = path.total_length();
        let n = ref_inputs.len();
        let mut states = Vec::with_capacity(n + 1);
        let mut inputs = Vec::with_capacity(n);
        states.push(z0);
        let mut cost = 0.0;
        for k in 0..n {
            let mut w = ref_inputs[k];
            for i in 0..NU {
                let mut fb = 0.0;
                for j in 0..NX {
                    fb += kfb[k][i][j] * (states[k][j] - ref_states[k][j]);
                }
                w[i] += alpha * kff[k][i] + fb;
            }
            let w = self.clamp_input(w);
            cost += self.stage_cost_raw(&states[k], Some(&w), k, path, field);
            let next = self.step(&states[k], &w, path_len);
            states.push(next);
            inputs.push(w);
        }
        cost += self.stage_cost_raw(states.last().unwrap(), None, n, path, field);
        (states, inputs, cost)
    }

    fn stage_derivatives(
        &self,
        states: &[ZVec],
        inputs: &[WVec],
        path: &ReferencePath,
        field: &RiskField,
    ) -> Vec<StageDerivs> {
        let wts = self.config.weights;
        let n = inputs.len();
        let mut out = Vec::with_capacity(n + 1);
        for (k, z) in states.iter().enumerate() {
            let frame = path.frame_at(z[5]);
            let (sin_phi, cos_phi) = (frame.tangent.y, frame.tangent.x);
            let dx = frame.pos.x - z[0];
            let dy = frame.pos.y - z[1];
            let e_c = sin_phi * dx - cos_phi * dy;
            let e_l = cos_phi * dx + sin_phi * dy;

            // Residual Jacobians over (x, y, theta); the theta column follows
            // from d(ref)/d(theta) = tangent and d(phi)/d(theta) = 0 on the
            // piecewise-linear path.
            let de_c = [-sin_phi, cos_phi, 0.0];
            let de_l = [-cos_phi, -sin_phi, 1.0];
            let idx = [0usize, 1, 5];

            let mut cx = [0.0; NX];
            let mut cxx = [[0.0; NX]; NX];
            for (r, &i) in idx.iter().enumerate() {
                cx[i] += 2.0 * wts.q_c * e_c * de_c[r] + 2.0 * wts.q_l * e_l * de_l[r];
                for (c, &j) in idx.iter().enumerate() {
                    cxx[i][j] +=
                        2.0 * wts.q_c * de_c[r] * de_c[c] + 2.0 * wts.q_l * de_l[r] * de_l[c];
                }
            }

            if wts.q_r != 0.0 && field.stage_count() > 0 {
                let stage = k.min(field.stage_count() - 1);
                let s = self.risk_weight(k);
                let (gx, gy) = field.gradient_at(stage, z[0], z[1]);
                cx[0] += s * gx;
                cx[1] += s * gy;
                let (hxx, hyy) = field.hessian_diag_at(stage, z[0], z[1]);
                cxx[0][0] += s * hxx.max(0.0);
                cxx[1][1] += s * hyy.max(0.0);
            }

            let (cu, cuu_diag) = if k < n {
                let w = &inputs[k];
                (
                    [2.0 * wts.q_u.0 * w[0], 2.0 * wts.q_u.1 * w[1], -wts.q_v],
                    [2.0 * wts.q_u.0, 2.0 * wts.q_u.1, 0.0],
                )
            } else {
                ([0.0; NU], [0.0; NU])
            };

            out.push(StageDerivs {
                cx,
                cu,
                cxx,
                cuu_diag,
            });
        }
        out
    }

    /// Riccati backward sweep. Returns feedforward and feedback gains, or
    /// `None` when the regularized input Hessian is not positive definite.
    fn backward_pass(
        &self,
        states: &[ZVec],
        inputs: &[WVec],
        derivs: &[StageDerivs],
        mu: f64,
        path_len: f64,
    ) -> Option<(Vec<WVec>, Vec<KMat>)> {
        let n = inputs.len();
        let term = &derivs[n];
        let mut vx = term.cx;
        let mut vxx = term.cxx;

        let mut kff = alloc::vec![[0.0; NU]; n];
        let mut kfb = alloc::vec![[[0.0; NX]; NU]; n];

        for k in (0..n).rev() {
            let d = &derivs[k];
            let (_, a, b) = self.step_jacobians(&states[k], &inputs[k], path_len);

            let mut qx = d.cx;
            for i in 0..NX {
                for (j, vxj) in vx.iter().enumerate() {
                    qx[i] += a[j][i] * vxj;
                }
            }
            let mut qu = d.cu;
            for i in 0..NU {
                for (j, vxj) in vx.iter().enumerate() {
                    qu[i] += b[j][i] * vxj;
                }
            }

            let mut vxx_a = [[0.0; NX]; NX];
            let mut vxx_b = [[0.0; NU]; NX];
            for i in 0..NX {
                for j in 0..NX {
                    let mut acc = 0.0;
                    for (k2, a_row) in a.iter().enumerate() {
                        acc += vxx[i][k2] * a_row[j];
                    }
                    vxx_a[i][j] = acc;
                }
                for j in 0..NU {
                    let mut acc = 0.0;
                    for (k2, b_row) in b.iter().enumerate() {
                        acc += vxx[i][k2] * b_row[j];
                    }
                    vxx_b[i][j] = acc;
                }
            }

            let mut qxx = d.cxx;
            for i in 0..NX {
                for j in 0..NX {
                    let mut acc = 0.0;
                    for (k2, a_col) in a.iter().enumerate() {
                        acc += a_col[i] * vxx_a[k2][j];
                    }
                    qxx[i][j] += acc;
                }
            }
            let mut quu = [[0.0; NU]; NU];
            for i in 0..NU {
                for j in 0..NU {
                    let mut acc = if i == j { d.cuu_diag[i] + mu } else { 0.0 };
                    for (k2, b_col) in b.iter().enumerate() {
                        acc += b_col[i] * vxx_b[k2][j];
                    }
                    quu[i][j] += acc;
                }
            }
            let mut qux = [[0.0; NX]; NU];
            for i in 0..NU {
                for j in 0..NX {
                    let mut acc = 0.0;
                    for (k2, b_col) in b.iter().enumerate() {
                        acc += b_col[i] * vxx_a[k2][j];
                    }
                    qux[i][j] = acc;
                }
            }

            let chol = cholesky3(&quu)?;
            let kf = solve3(&chol, &[-qu[0], -qu[1], -qu[2]]);
            let mut km = [[0.0; NX]; NU];
            for j in 0..NX {
                let col = solve3(&chol, &[-qux[0][j], -qux[1][j], -qux[2][j]]);
                for i in 0..NU {
                    km[i][j] = col[i];
                }
            }

            // Vx = Qx + K^T Quu kff + K^T Qu + Qux^T kff
            let mut quu_kff = [0.0; NU];
            for i in 0..NU {
                for (j, kfj) in kf.iter().enumerate() {
                    quu_kff[i] += quu[i][j] * kfj;
                }
            }
            let mut new_vx = qx;
            for j in 0..NX {
                for i in 0..NU {
                    new_vx[j] += km[i][j] * (quu_kff[i] + qu[i]) + qux[i][j] * kf[i];
                }
            }

            // Vxx = Qxx + K^T Quu K + K^T Qux + Qux^T K, symmetrized.
            let mut quu_k = [[0.0; NX]; NU];
            for i in 0..NU {
                for j in 0..NX {
                    for (k2, km_row) in km.iter().enumerate() {
                        quu_k[i][j] += quu[i][k2] * km_row[j];
                    }
                }
            }
            let mut new_vxx = qxx;
            for i in 0..NX {
                for j in 0..NX {
                    let mut acc = 0.0;
                    for k2 in 0..NU {
                        acc += km[k2][i] * quu_k[k2][j]
                            + km[k2][i] * qux[k2][j]
                            + qux[k2][i] * km[k2][j];
                    }
                    new_vxx[i][j] += acc;
                }
            }
            for i in 0..NX {
                for j in (i + 1)..NX {
                    let m = 0.5 * (new_vxx[i][j] + new_vxx[j][i]);
                    new_vxx[i][j] = m;
                    new_vxx[j][i] = m;
                }
            }

            vx = new_vx;
            vxx = new_vxx;
            kff[k] = kf;
            kfb[k] = km;
        }
        Some((kff, kfb))
    }

    fn package(
        &self,
        states: Vec<ZVec>,
        inputs: Vec<WVec>,
        objectives: Vec<f64>,
        status: SolverStatus,
        path: &ReferencePath,
        field: &RiskField,
    ) -> PlannerSolution {
        let stage_costs: Vec<f64> = states
            .iter()
            .enumerate()
            .map(|(k, z)| {
                let w = inputs.get(k);
                self.stage_cost_raw(z, w, k, path, field)
            })
            .collect();
        PlannerSolution {
            states: states
                .iter()
                .map(|z| AugmentedState {
                    vehicle: VehicleState {
                        x: z[0],
                        y: z[1],
                        phi: z[2],
                        delta: z[3],
                        v: z[4],
                    },
                    theta_mu: z[5],
                })
                .collect(),
            inputs: inputs
                .iter()
                .map(|w| AugmentedInput {
                    control: ControlInput::new(w[0], w[1]),
                    v_theta: w[2],
                })
                .collect(),
            stage_costs,
            objectives,
            status,
        }
    }
}

/// Lower Cholesky factor of a 3x3 symmetric positive-definite matrix.
fn cholesky3(m: &[[f64; NU]; NU]) -> Option<[[f64; NU]; NU]> {
    let mut l = [[0.0; NU]; NU];
    for i in 0..NU {
        for j in 0..=i {
            let mut sum = m[i][j];
            for k in 0..j {
                sum -= l[i][k] * l[j][k];
            }
            if i == j {
                if sum <= 0.0 {
                    return None;
                }
                l[i][j] = sum.sqrt();
            } else {
                l[i][j] = sum / l[j][j];
            }
        }
    }
    Some(l)
}

/// Solves `L L^T x = b` given the lower factor.
fn solve3(l: &[[f64; NU]; NU], b: &[f64; NU]) -> [f64; NU] {
    let mut y = [0.0; NU];
    for i in 0..NU {
        let mut sum = b[i];
        for j in 0..i {
            sum -= l[i][j] * y[j];
        }
        y[i] = sum / l[i][i];
    }
    let mut x = [0.0; NU];
    for i in (0..NU).rev() {
        let mut sum = y[i];
        for j in (i + 1)..NU {
            sum -= l[j][i] * x[j];
        }
        x[i] = sum / l[i][i];
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{Pose, Vec2};
    use crate::prediction::{PredictedTrajectory, PredictionSet};
    use crate::risk_field::{AgentPrediction, RiskFieldParams};

    fn straight_path(len: f64) -> ReferencePath {
        let n = (len / 5.0) as usize;
        let pts: Vec<Vec2> = (0..=n).map(|i| Vec2::new(i as f64 * 5.0, 0.0)).collect();
        ReferencePath::from_polyline(&pts, 0.5).unwrap()
    }

    fn empty_field(stages: usize) -> RiskField {
        RiskField::empty(RiskFieldParams::default(), stages)
    }

    fn static_kernel_field(center: Vec2, stages: usize) -> RiskField {
        let traj = PredictedTrajectory {
            poses: alloc::vec![Pose::new(center.x, center.y, 0.0); 8],
            source_path: None,
        };
        let agent = AgentPrediction {
            current: Pose::new(center.x, center.y, 0.0),
            set: PredictionSet::new(alloc::vec![traj], alloc::vec![1.0]).unwrap(),
        };
        RiskField::build(&[agent], RiskFieldParams::default(), stages, 0.05, 0.5).unwrap()
    }

    #[test]
    fn error_identities_hand_cases() {
        let path = straight_path(60.0);
        // On the reference: both errors vanish.
        let (e_c, e_l) = contouring_and_lag_errors(&path, 5.0, 0.0, 5.0);
        assert!(e_c.abs() < 1e-9 && e_l.abs() < 1e-9);
        // Pure lateral offset.
        let (e_c, e_l) = contouring_and_lag_errors(&path, 5.0, 0.5, 5.0);
        assert_eq!(e_c, 0.5);
        assert!(e_l.abs() < 1e-12);
        // Pure lag.
        let (e_c, e_l) = contouring_and_lag_errors(&path, 4.0, 0.0, 5.0);
        assert!(e_c.abs() < 1e-12);
        assert_eq!(e_l, 1.0);
    }

    #[test]
    fn stage_cost_hand_cases() {
        let w = PlannerWeights::default();
        let zero = AugmentedInput {
            control: ControlInput::default(),
            v_theta: 0.0,
        };
        assert_eq!(stage_cost(&w, (0.0, 0.0), &zero, 0.0, 0), 0.0);

        let w2 = PlannerWeights {
            q_c: 0.0,
            q_l: 0.0,
            q_u: (0.0, 0.0),
            q_r: 0.0,
            q_v: 1.0,
            gamma: 0.95,
        };
        let progress = AugmentedInput {
            control: ControlInput::default(),
            v_theta: 3.0,
        };
        assert_eq!(stage_cost(&w2, (0.0, 0.0), &progress, 0.0, 0), -3.0);

        let w3 = PlannerWeights {
            q_c: 0.0,
            q_l: 0.0,
            q_u: (0.0, 0.0),
            q_r: 10.0,
            q_v: 0.0,
            gamma: 0.9,
        };
        let c = stage_cost(&w3, (0.0, 0.0), &zero, 0.5, 2);
        assert!((c - 4.05).abs() < 1e-12, "cost {c}");
    }

    fn planner(max_iters: usize) -> MpccPlanner {
        MpccPlanner::new(
            PlannerConfig {
                max_iters,
                ..PlannerConfig::default()
            },
            VehicleLimits::default(),
        )
    }

    #[test]
    fn straight_path_tracking_and_descent() {
        let path = straight_path(80.0);
        let field = empty_field(81);
        let p = planner(20);
        let initial = VehicleState::new(0.0, 0.0, 0.0, 0.0, 5.0);
        let sol = p.solve(&initial, &path, &field, None);

        assert!(sol.objectives.len() >= 2, "no iterate accepted");
        for w in sol.objectives.windows(2) {
            assert!(w[1] < w[0], "objective rose: {:?}", sol.objectives);
        }
        for (k, s) in sol.states.iter().enumerate() {
            let (e_c, e_l) = contouring_and_lag_errors(&path, s.vehicle.x, s.vehicle.y, s.theta_mu);
            assert!(e_c.abs() < 1e-3, "stage {k}: e_c {e_c}");
            // The progress reward buys a small steady lag offset at the
            // default weights; it stays within centimeters.
            assert!(e_l.abs() < 2e-2, "stage {k}: e_l {e_l}");
        }
        // Progress speed rises toward its ceiling.
        let v_first = sol.inputs[0].v_theta;
        let v_last = sol.inputs.last().unwrap().v_theta;
        assert!(v_last > v_first, "v_theta {v_first} -> {v_last}");
        assert!(v_last > 5.0, "terminal progress speed {v_last}");
    }

    #[test]
    fn no_progress_reward_keeps_vehicle_at_rest() {
        let path = straight_path(60.0);
        let field = empty_field(81);
        let mut cfg = PlannerConfig {
            max_iters: 20,
            ..PlannerConfig::default()
        };
        cfg.weights.q_v = 0.0;
        let p = MpccPlanner::new(cfg, VehicleLimits::default());
        let initial = VehicleState::new(0.0, 0.0, 0.0, 0.0, 0.0);
        let sol = p.solve(&initial, &path, &field, None);
        let v_term = sol.states.last().unwrap().vehicle.v;
        assert!(v_term < 0.1, "terminal speed {v_term}");
    }

    #[test]
    fn risk_kernel_increases_clearance() {
        let path = straight_path(60.0);
        let kernel = Vec2::new(20.0, 0.0);
        let field = static_kernel_field(kernel, 81);
        let initial = VehicleState::new(0.0, 0.0, 0.0, 0.0, 5.0);

        let clearance = |q_r: f64| -> f64 {
            let mut cfg = PlannerConfig {
                max_iters: 30,
                ..PlannerConfig::default()
            };
            cfg.weights.q_r = q_r;
            let p = MpccPlanner::new(cfg, VehicleLimits::default());
            let sol = p.solve(&initial, &path, &field, None);
            sol.states
                .iter()
                .map(|s| s.vehicle.position().dist(kernel))
                .fold(f64::INFINITY, f64::min)
        };

        let free = clearance(0.0);
        let risky = clearance(60.0);
        assert!(
            risky > free + 0.5,
            "clearance did not grow: {free} -> {risky}"
        );
    }

    #[test]
    fn risk_weight_sweep_is_monotone() {
        let path = straight_path(60.0);
        let kernel = Vec2::new(20.0, 0.0);
        let field = static_kernel_field(kernel, 81);
        let initial = VehicleState::new(0.0, 0.0, 0.0, 0.0, 5.0);
        let mut prev = -f64::INFINITY;
        for q_r in [0.0, 20.0, 60.0] {
            let mut cfg = PlannerConfig {
                max_iters: 30,
                ..PlannerConfig::default()
            };
            cfg.weights.q_r = q_r;
            let p = MpccPlanner::new(cfg, VehicleLimits::default());
            let sol = p.solve(&initial, &path, &field, None);
            let clearance = sol
                .states
                .iter()
                .map(|s| s.vehicle.position().dist(kernel))
                .fold(f64::INFINITY, f64::min);
            assert!(
                clearance >= prev - 1e-3,
                "clearance regressed at q_r={q_r}: {prev} -> {clearance}"
            );
            prev = clearance;
        }
    }

    #[test]
    fn box_constraints_hold_within_tolerance() {
        let path = straight_path(60.0);
        let field = static_kernel_field(Vec2::new(15.0, 0.5), 81);
        let limits = VehicleLimits::default();
        let p = planner(10);
        let initial = VehicleState::new(0.0, 0.3, 0.1, 0.0, 8.0);
        let sol = p.solve(&initial, &path, &field, None);
        for u in &sol.inputs {
            assert!(u.control.delta_rate.abs() <= limits.delta_rate_max + 1e-8);
            assert!(u.control.accel >= limits.accel_min - 1e-8);
            assert!(u.control.accel <= limits.accel_max + 1e-8);
            assert!(u.v_theta >= -1e-8 && u.v_theta <= p.config.v_theta_max + 1e-8);
        }
        for s in &sol.states {
            assert!(s.vehicle.delta.abs() <= limits.delta_max + 1e-8);
            assert!(s.vehicle.v >= limits.v_min - 1e-8);
            assert!(s.vehicle.v <= limits.v_max + 1e-8);
            assert!(s.theta_mu >= -1e-8 && s.theta_mu <= path.total_length() + 1e-8);
        }
    }

    #[test]
    fn shooting_consistency_of_solutions() {
        let path = straight_path(60.0);
        let field = empty_field(81);
        let p = planner(5);
        let initial = VehicleState::new(0.0, 0.2, 0.05, 0.0, 6.0);
        let sol = p.solve(&initial, &path, &field, None);
        let z0 = [
            sol.states[0].vehicle.x,
            sol.states[0].vehicle.y,
            sol.states[0].vehicle.phi,
            sol.states[0].vehicle.delta,
            sol.states[0].vehicle.v,
            sol.states[0].theta_mu,
        ];
        let inputs: Vec<WVec> = sol
            .inputs
            .iter()
            .map(|u| [u.control.delta_rate, u.control.accel, u.v_theta])
            .collect();
        let (re_states, _) = p.rollout(z0, &inputs, &path, &field);
        for (a, b) in sol.states.iter().zip(re_states.iter()) {
            assert!((a.vehicle.x - b[0]).abs() < 1e-6);
            assert!((a.vehicle.y - b[1]).abs() < 1e-6);
            assert!((a.theta_mu - b[5]).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_risk_weight_ignores_field_contents() {
        let path = straight_path(60.0);
        let empty = empty_field(81);
        let loaded = static_kernel_field(Vec2::new(10.0, 0.0), 81);
        let mut cfg = PlannerConfig::default();
        cfg.weights.q_r = 0.0;
        let p = MpccPlanner::new(cfg, VehicleLimits::default());
        let initial = VehicleState::new(0.0, 0.0, 0.0, 0.0, 5.0);
        let a = p.solve(&initial, &path, &empty, None);
        let b = p.solve(&initial, &path, &loaded, None);
        assert_eq!(a.objective(), b.objective());
        for (sa, sb) in a.states.iter().zip(b.states.iter()) {
            assert_eq!(sa.vehicle.x, sb.vehicle.x);
            assert_eq!(sa.vehicle.y, sb.vehicle.y);
        }
    }

    #[test]
    fn warm_start_shift_consistency() {
        let path = straight_path(80.0);
        let field = empty_field(81);
        let p = planner(10);
        let initial = VehicleState::new(0.0, 0.0, 0.0, 0.0, 5.0);
        let sol = p.solve(&initial, &path, &field, None);
        let shifted = p.warm_start_shift(&sol, &path);
        assert_eq!(shifted.states.len(), sol.states.len());
        assert_eq!(shifted.inputs.len(), sol.inputs.len());
        assert_eq!(shifted.states[0].vehicle.x, sol.states[1].vehicle.x);
        // Consistency: re-rollout of the shifted inputs reproduces states.
        let z0 = [
            shifted.states[0].vehicle.x,
            shifted.states[0].vehicle.y,
            shifted.states[0].vehicle.phi,
            shifted.states[0].vehicle.delta,
            shifted.states[0].vehicle.v,
            shifted.states[0].theta_mu,
        ];
        let inputs: Vec<WVec> = shifted
            .inputs
            .iter()
            .map(|u| [u.control.delta_rate, u.control.accel, u.v_theta])
            .collect();
        let (re_states, _) = p.rollout(z0, &inputs, &path, &field);
        for (a, b) in shifted.states.iter().zip(re_states.iter()) {
            assert!((a.vehicle.x - b[0]).abs() < 1e-6);
            assert!((a.vehicle.v - b[4]).abs() < 1e-6);
            assert!((a.theta_mu - b[5]).abs() < 1e-6);
        }
    }

    #[test]
    fn shift_of_rest_solution_is_identity() {
        let path = straight_path(60.0);
        let field = empty_field(81);
        let mut cfg = PlannerConfig {
            max_iters: 10,
            ..PlannerConfig::default()
        };
        cfg.weights.q_v = 0.0;
        let p = MpccPlanner::new(cfg, VehicleLimits::default());
        let initial = VehicleState::new(0.0, 0.0, 0.0, 0.0, 0.0);
        let sol = p.solve(&initial, &path, &field, None);
        // An at-rest optimum is a fixed point of the shift.
        let shifted = p.warm_start_shift(&sol, &path);
        let twice = p.warm_start_shift(&shifted, &path);
        for ((a, b), c) in sol
            .states
            .iter()
            .zip(shifted.states.iter())
            .zip(twice.states.iter())
        {
            assert!((a.vehicle.x - b.vehicle.x).abs() < 1e-9);
            assert!((b.vehicle.x - c.vehicle.x).abs() < 1e-9);
            assert!((a.vehicle.v - b.vehicle.v).abs() < 1e-9);
        }
    }

    #[test]
    fn warm_started_resolve_stays_cheap() {
        let path = straight_path(80.0);
        let field = empty_field(81);
        let p = planner(5);
        let initial = VehicleState::new(0.0, 0.0, 0.0, 0.0, 5.0);
        let first = p.solve(&initial, &path, &field, None);
        let warm = p.warm_start_shift(&first, &path);
        let next_state = first.states[1].vehicle;
        let second = p.solve(&next_state, &path, &field, Some(&warm));
        assert!(second.objectives.len() <= first.objectives.len());
    }

    #[test]
    fn cholesky_solves_spd_system() {
        let m = [[4.0, 1.0, 0.2], [1.0, 3.0, 0.1], [0.2, 0.1, 2.0]];
        let l = cholesky3(&m).unwrap();
        let x = solve3(&l, &[1.0, 2.0, 3.0]);
        for (i, b) in [1.0, 2.0, 3.0].iter().enumerate() {
            let got: f64 = (0..3).map(|j| m[i][j] * x[j]).sum();
            assert!((got - b).abs() < 1e-12);
        }
        let not_spd = [[1.0, 2.0, 0.0], [2.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        assert!(cholesky3(&not_spd).is_none());
    }
}
