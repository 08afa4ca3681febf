//! Trace objectives and their model-based and model-free readings, plus the
//! value-function fits used to compare learned representations.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::linalg::{gram_residual, mean_stderr, projector, trace_of_product};
use crate::mdp::{induced_transition, sample_reward, value_triple, Mdp, Policy, StateDistribution};
use crate::{Error, ObjectiveKind, Result};

/// How far from orthonormal a representation may be for the trace formulas.
pub const ORTHO_TOL: f64 = 1e-6;

fn check_orthonormal(phi: &DMatrix<f64>, n: usize) -> Result<()> {
    if phi.nrows() != n || phi.ncols() == 0 || phi.ncols() > n {
        return Err(Error::invalid(format!("representation shape {:?} does not fit {n} states", phi.shape())));
    }
    let r = gram_residual(phi);
    if r > ORTHO_TOL {
        return Err(Error::invalid(format!("representation is not orthonormal (residual {r:e})")));
    }
    Ok(())
}

/// Per-action weights: the policy's action marginal under uniform states.
/// For a uniform policy this is `1/|A|` for every action.
pub fn action_weights(policy: &Policy) -> DVector<f64> {
    let n = policy.n_states();
    policy.probs().row_sum().transpose() / n as f64
}

/// `tr(ΦᵀTΦ ΦᵀTΦ)`.
pub fn trace_term(phi: &DMatrix<f64>, t: &DMatrix<f64>) -> f64 {
    let p = phi.transpose() * t * phi;
    trace_of_product(&p, &p)
}

/// Trace objective `f(Φ)` for one objective kind. The per-action term is
/// weighted by [`action_weights`]; `Var` is `Ac − Pi`.
pub fn trace_objective(phi: &DMatrix<f64>, mdp: &Mdp, policy: &Policy, kind: ObjectiveKind) -> Result<f64> {
    check_orthonormal(phi, mdp.n_states())?;
    let t_pi = induced_transition(mdp, policy)?;
    let w = action_weights(policy);
    let pi = || trace_term(phi, &t_pi);
    let ac = || mdp.transitions().iter().zip(w.iter()).map(|(t, w)| w * trace_term(phi, t)).sum::<f64>();
    Ok(match kind {
        ObjectiveKind::Pi => pi(),
        ObjectiveKind::Ac => ac(),
        ObjectiveKind::Var => ac() - pi(),
    })
}

/// `f_var` written as a weighted sum over the residual dynamics `T_a − T^π`.
pub fn var_trace_pointwise(phi: &DMatrix<f64>, mdp: &Mdp, policy: &Policy) -> Result<f64> {
    check_orthonormal(phi, mdp.n_states())?;
    let t_pi = induced_transition(mdp, policy)?;
    let w = action_weights(policy);
    Ok(mdp.transitions().iter().zip(w.iter()).map(|(t, w)| w * trace_term(phi, &(t - &t_pi))).sum())
}

/// Squared Frobenius residual of the best rank-`k` latent model of `t`,
/// `‖T − Φ P* Φᵀ‖_F²` with `P* = Φᵀ T Φ`.
pub fn model_based_residual(phi: &DMatrix<f64>, t: &DMatrix<f64>) -> Result<(f64, DMatrix<f64>)> {
    check_orthonormal(phi, t.nrows())?;
    let p = phi.transpose() * t * phi;
    let residual = (t - phi * &p * phi.transpose()).norm_squared();
    Ok((residual, p))
}

/// The matrices each kind approximates, with their weights.
fn targets(mdp: &Mdp, policy: &Policy, kind: ObjectiveKind) -> Result<Vec<(f64, DMatrix<f64>)>> {
    let t_pi = induced_transition(mdp, policy)?;
    let w = action_weights(policy);
    Ok(match kind {
        ObjectiveKind::Pi => vec![(1.0, t_pi)],
        ObjectiveKind::Ac => mdp.transitions().iter().zip(w.iter()).map(|(t, w)| (*w, t.clone())).collect(),
        ObjectiveKind::Var => {
            mdp.transitions().iter().zip(w.iter()).map(|(t, w)| (*w, t - &t_pi)).collect()
        }
    })
}

/// Weighted model-based loss: `T^π`, each `T_a`, or each `T_a − T^π`.
pub fn model_based_objective(phi: &DMatrix<f64>, mdp: &Mdp, policy: &Policy, kind: ObjectiveKind) -> Result<f64> {
    let mut total = 0.0;
    for (w, t) in targets(mdp, policy, kind)? {
        total += w * model_based_residual(phi, &t)?.0;
    }
    Ok(total)
}

/// Additive constant `C`: the weighted `‖B‖_F²` of the approximated matrices.
/// Equals `tr(B²)` for symmetric `B`.
pub fn constant_term(mdp: &Mdp, policy: &Policy, kind: ObjectiveKind) -> Result<f64> {
    Ok(targets(mdp, policy, kind)?.iter().map(|(w, t)| w * t.norm_squared()).sum())
}

fn require_uniform(policy: &Policy, kind: ObjectiveKind) -> Result<()> {
    if kind != ObjectiveKind::Pi && !policy.is_uniform() {
        return Err(Error::AssumptionViolation(format!("the {kind} model-free reading needs a uniform policy")));
    }
    Ok(())
}

/// `tr(Bᵀ(I−Π)B) + tr(Π Bᵀ(I−Π) B Π)`: the exact expected fit error of
/// `BR` and `BΠR` for rewards with `|X|·E[RRᵀ] = I`.
fn expected_fit_error(phi: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let n = phi.nrows();
    let proj = projector(phi);
    let comp = DMatrix::identity(n, n) - &proj;
    let inner = b.transpose() * &comp * b;
    inner.trace() + trace_of_product(&(&proj * &inner), &proj)
}

/// Closed-form expectation of the model-free objective over isotropic rewards.
pub fn model_free_value_analytic(phi: &DMatrix<f64>, mdp: &Mdp, policy: &Policy, kind: ObjectiveKind) -> Result<f64> {
    check_orthonormal(phi, mdp.n_states())?;
    require_uniform(policy, kind)?;
    Ok(targets(mdp, policy, kind)?.iter().map(|(w, b)| w * expected_fit_error(phi, b)).sum())
}

/// Monte Carlo estimate of the model-free objective: rewards `R ~ N(0, I/|X|)`,
/// inner least-squares fits solved per draw. Returns `(mean, stderr)`.
pub fn model_free_value_mc(
    phi: &DMatrix<f64>,
    mdp: &Mdp,
    policy: &Policy,
    kind: ObjectiveKind,
    n_samples: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    check_orthonormal(phi, mdp.n_states())?;
    require_uniform(policy, kind)?;
    if n_samples < 2 {
        return Err(Error::invalid("Monte Carlo needs at least two samples"));
    }
    let n = mdp.n_states();
    let targets = targets(mdp, policy, kind)?;
    let phi_t = phi.transpose();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draws = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let r = sample_reward(n, 1.0, &mut rng);
        let pr = phi * (&phi_t * &r);
        let mut total = 0.0;
        for (w, b) in &targets {
            let y1 = b * &r;
            let theta = &phi_t * &y1;
            let y2 = b * &pr;
            let omega = &phi_t * &y2;
            total += w * ((y1 - phi * theta).norm_squared() + (y2 - phi * omega).norm_squared());
        }
        draws.push(n as f64 * total);
    }
    Ok(mean_stderr(&draws))
}

/// One objective evaluated every way the crate knows.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ObjectiveValue {
    pub kind: ObjectiveKind,
    pub trace_value: f64,
    pub constant_term: f64,
    pub model_based_residual: f64,
    /// Absent when the policy is not uniform for the per-action kinds.
    pub model_free_value: Option<f64>,
}

pub fn evaluate_objective(phi: &DMatrix<f64>, mdp: &Mdp, policy: &Policy, kind: ObjectiveKind) -> Result<ObjectiveValue> {
    let model_free_value = match model_free_value_analytic(phi, mdp, policy, kind) {
        Ok(v) => Some(v),
        Err(Error::AssumptionViolation(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(ObjectiveValue {
        kind,
        trace_value: trace_objective(phi, mdp, policy, kind)?,
        constant_term: constant_term(mdp, policy, kind)?,
        model_based_residual: model_based_objective(phi, mdp, policy, kind)?,
        model_free_value,
    })
}

/// Which value-like function a fit targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum FitTarget {
    V,
    Q,
    Advantage,
}

impl FitTarget {
    pub const ALL: [FitTarget; 3] = [FitTarget::V, FitTarget::Q, FitTarget::Advantage];

    pub fn as_str(self) -> &'static str {
        match self {
            FitTarget::V => "v",
            FitTarget::Q => "q",
            FitTarget::Advantage => "advantage",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MseReport {
    pub v_mse: f64,
    pub q_mse: f64,
    pub adv_mse: f64,
    pub v_stderr: f64,
    pub q_stderr: f64,
    pub adv_stderr: f64,
    pub n_samples: usize,
}

impl MseReport {
    pub fn mse(&self, target: FitTarget) -> f64 {
        match target {
            FitTarget::V => self.v_mse,
            FitTarget::Q => self.q_mse,
            FitTarget::Advantage => self.adv_mse,
        }
    }

    pub fn stderr(&self, target: FitTarget) -> f64 {
        match target {
            FitTarget::V => self.v_stderr,
            FitTarget::Q => self.q_stderr,
            FitTarget::Advantage => self.adv_stderr,
        }
    }
}

/// Mean over columns of `min_θ ‖y − Φθ‖²`, by least squares on the column
/// span of `phi` (which need not be orthonormal).
pub fn projection_residual(phi: &DMatrix<f64>, targets: &DMatrix<f64>) -> Result<f64> {
    if phi.nrows() != targets.nrows() || targets.ncols() == 0 {
        return Err(Error::invalid("fit targets do not match the representation"));
    }
    let q = crate::linalg::thin_orthonormal(phi)?;
    let residual = targets - &q * (q.transpose() * targets);
    Ok(residual.norm_squared() / targets.ncols() as f64)
}

/// Least-squares fit errors of `V`, `Q` and the advantage on the column span
/// of `phi`, averaged over seeded reward draws `R ~ N(0, scale²·I/|X|)`. All
/// three use the same draws. `Q` and advantage errors are averaged over actions.
pub fn fit_mse(
    phi: &DMatrix<f64>,
    mdp: &Mdp,
    policy: &Policy,
    n_reward_samples: usize,
    reward_scale: f64,
    seed: u64,
) -> Result<MseReport> {
    check_orthonormal(phi, mdp.n_states())?;
    if n_reward_samples == 0 {
        return Err(Error::invalid("need at least one reward sample"));
    }
    let n = mdp.n_states();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut vs, mut qs, mut advs) = (Vec::new(), Vec::new(), Vec::new());
    for _ in 0..n_reward_samples {
        let r = sample_reward(n, reward_scale, &mut rng);
        let instance = mdp.with_reward(r)?;
        let (v, q, adv) = value_triple(&instance, policy)?;
        vs.push(projection_residual(phi, &DMatrix::from_column_slice(n, 1, v.as_slice()))?);
        qs.push(projection_residual(phi, &q)?);
        advs.push(projection_residual(phi, &adv)?);
    }
    let (v_mse, v_stderr) = mean_stderr(&vs);
    let (q_mse, q_stderr) = mean_stderr(&qs);
    let (adv_mse, adv_stderr) = mean_stderr(&advs);
    Ok(MseReport { v_mse, q_mse, adv_mse, v_stderr, q_stderr, adv_stderr, n_samples: n_reward_samples })
}

/// Uniform state weights, as used by every objective here.
pub fn uniform_state_distribution(n: usize) -> Result<StateDistribution> {
    StateDistribution::uniform(n)
}
