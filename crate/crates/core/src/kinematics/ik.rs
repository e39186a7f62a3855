use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

use super::chain::{EndEffector, JointState, KinematicChain};
use super::pose::{rotation_distance, rotation_log, Pose};
use super::KinematicsError;

/// Damped-least-squares settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IkConfig {
    pub damping: f64,
    pub max_iters: usize,
    pub tol_pos: f64,
    pub tol_rot: f64,
    /// Ignore the target orientation. Forced on for chains with fewer than
    /// six actuated joints.
    pub position_only: bool,
}

impl Default for IkConfig {
    fn default() -> Self {
        Self {
            damping: 0.05,
            max_iters: 200,
            tol_pos: 1e-4,
            tol_rot: 1e-3,
            position_only: false,
        }
    }
}

const FD_STEP: f64 = 1e-6;
const MIN_DAMPING: f64 = 1e-3;
const MAX_DAMPING: f64 = 1e3;

impl IkConfig {
    fn position_only_for(&self, chain: &KinematicChain) -> bool {
        self.position_only || chain.dof() < 6
    }
}

fn tool(chain: &KinematicChain, q: &JointState, ee: &EndEffector) -> Pose {
    chain.tool_pose(&chain.fk_unchecked(q), ee)
}

/// Tool-frame Jacobian by central differences: rows 0..3 linear velocity,
/// rows 3..6 world-frame angular velocity.
pub fn numeric_jacobian(chain: &KinematicChain, q: &JointState, ee: &EndEffector) -> DMatrix<f64> {
    let n = chain.dof();
    let mut jac = DMatrix::zeros(6, n);
    let mut qp = q.clone();
    for i in 0..n {
        let v = q.values[i];
        qp.values[i] = v + FD_STEP;
        let plus = tool(chain, &qp, ee);
        qp.values[i] = v - FD_STEP;
        let minus = tool(chain, &qp, ee);
        qp.values[i] = v;
        let dp = (plus.translation - minus.translation) / (2.0 * FD_STEP);
        let dw = rotation_log(&(plus.rotation * minus.rotation.transpose())) / (2.0 * FD_STEP);
        for r in 0..3 {
            jac[(r, i)] = dp[r];
            jac[(r + 3, i)] = dw[r];
        }
    }
    jac
}

/// Pose residual `(position error, rotation error)` of `q` against `target`.
pub fn pose_residual(chain: &KinematicChain, q: &JointState, ee: &EndEffector, target: &Pose) -> (f64, f64) {
    let cur = tool(chain, q, ee);
    (
        (target.translation - cur.translation).norm(),
        rotation_distance(&cur.rotation, &target.rotation),
    )
}

/// Damped least squares with a numeric Jacobian. The damping starts at
/// `cfg.damping` and adapts per step. Limits are enforced by clamping after
/// every update.
pub fn inverse_kinematics(
    chain: &KinematicChain,
    target: &Pose,
    seed: &JointState,
    cfg: &IkConfig,
) -> Result<JointState, KinematicsError> {
    inverse_kinematics_for(chain, &chain.end_effector(), target, seed, cfg)
}

pub fn inverse_kinematics_for(
    chain: &KinematicChain,
    ee: &EndEffector,
    target: &Pose,
    seed: &JointState,
    cfg: &IkConfig,
) -> Result<JointState, KinematicsError> {
    if seed.len() != chain.dof() {
        return Err(KinematicsError::DimensionMismatch {
            expected: chain.dof(),
            got: seed.len(),
        });
    }
    let reach = chain.reach();
    let distance = (target.translation - chain.shoulder()).norm();
    if distance > reach + cfg.tol_pos {
        return Err(KinematicsError::UnreachableTarget { distance, reach });
    }
    let position_only = cfg.position_only_for(chain);
    let rows = if position_only { 3 } else { 6 };

    let errors = |q: &JointState| {
        let cur = tool(chain, q, ee);
        let dp: Vector3<f64> = target.translation - cur.translation;
        let dw = rotation_log(&(target.rotation * cur.rotation.transpose()));
        let score = (dp.norm_squared() + if position_only { 0.0 } else { dw.norm_squared() }).sqrt();
        (dp, dw, score)
    };

    let mut q = seed.clone();
    chain.clamp(&mut q);
    let (mut dp, mut dw, mut score) = errors(&q);
    let mut lambda = cfg.damping;
    for _ in 0..=cfg.max_iters {
        let converged = dp.norm() <= cfg.tol_pos && (position_only || dw.norm() <= cfg.tol_rot);
        if converged {
            return Ok(q);
        }

        let jac = numeric_jacobian(chain, &q, ee);
        let jac = jac.rows(0, rows).into_owned();
        let mut err = DVector::zeros(rows);
        for r in 0..3 {
            err[r] = dp[r];
            if !position_only {
                err[r + 3] = dw[r];
            }
        }
        let jjt = &jac * jac.transpose() + DMatrix::identity(rows, rows) * (lambda * lambda);
        let Some(chol) = jjt.cholesky() else {
            break;
        };
        let dq = jac.transpose() * chol.solve(&err);
        let mut next = q.clone();
        for (v, d) in next.values.iter_mut().zip(dq.iter()) {
            *v += d;
        }
        chain.clamp(&mut next);
        let (ndp, ndw, nscore) = errors(&next);
        // Levenberg-Marquardt schedule: relax the damping after progress,
        // stiffen it after a step that made things worse.
        if nscore < score {
            (q, dp, dw, score) = (next, ndp, ndw, nscore);
            lambda = (lambda * 0.5).max(cfg.damping * MIN_DAMPING);
        } else {
            lambda = (lambda * 2.0).min(cfg.damping * MAX_DAMPING);
        }
    }
    Err(KinematicsError::DidNotConverge { best_error: score })
}
