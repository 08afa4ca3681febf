//! Optimal latent predictors, the semi-gradient flows on `Φ`, and an explicit
//! Euler integrator for them.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::linalg::{asymmetry, gram_residual, thin_orthonormal, to_rows};
use crate::mdp::{induced_transition, Mdp, Policy, StateDistribution, STOCHASTIC_TOL};
use crate::{Error, ObjectiveKind, Result};

pub const DEFAULT_ORTHO_TOL: f64 = 1e-8;
/// Smallest step the adaptive integrator may halve down to.
pub const MIN_STEP: f64 = 1e-8;
/// Trace decrease per step tolerated before a step counts as a violation.
pub const LYAPUNOV_SLACK: f64 = 1e-12;

/// `n × k` representation matrix with orthonormal columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Representation {
    phi: DMatrix<f64>,
}

impl Representation {
    pub fn new(phi: DMatrix<f64>, tol: f64) -> Result<Self> {
        let (n, k) = phi.shape();
        if k == 0 || k > n {
            return Err(Error::invalid(format!("representation must be n x k with n >= k >= 1, got {n}x{k}")));
        }
        let r = gram_residual(&phi);
        if r > tol {
            return Err(Error::invalid(format!("columns are not orthonormal (residual {r:e})")));
        }
        Ok(Representation { phi })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.phi
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.phi
    }

    pub fn n(&self) -> usize {
        self.phi.nrows()
    }

    pub fn k(&self) -> usize {
        self.phi.ncols()
    }
}

/// Thin orthonormal factor of a seeded standard Gaussian `n × k` draw.
pub fn orthogonal_init(n: usize, k: usize, seed: u64) -> Result<Representation> {
    if k == 0 || k > n {
        return Err(Error::invalid(format!("need n >= k >= 1, got n={n}, k={k}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = DMatrix::from_fn(n, k, |_, _| {
        let z: f64 = StandardNormal.sample(&mut rng);
        z
    });
    Ok(Representation { phi: thin_orthonormal(&g)? })
}

/// `‖ΦᵀΦ − I‖_∞` (max-abs entry).
pub fn noncollapse_residual(phi: &DMatrix<f64>) -> f64 {
    gram_residual(phi)
}

/// Solves `(Φᵀ diag(w) Φ) P = Φᵀ diag(w) T Φ` for nonnegative state weights `w`.
pub fn weighted_predictor(phi: &DMatrix<f64>, w: &DVector<f64>, t: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = phi.nrows();
    if w.len() != n || t.shape() != (n, n) {
        return Err(Error::invalid("predictor inputs have mismatched shapes"));
    }
    let dphi = scale_rows(phi, w);
    let gram = dphi.transpose() * phi;
    let rhs = dphi.transpose() * (t * phi);
    let chol = gram.cholesky().ok_or_else(|| {
        Error::RankDeficient("Φᵀ D Φ is not positive definite; predictor is undefined".into())
    })?;
    Ok(chol.solve(&rhs))
}

/// Optimal latent predictor `P*` for transition matrix `t` under state weights `d`.
pub fn optimal_predictor(phi: &DMatrix<f64>, d: &StateDistribution, t: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    weighted_predictor(phi, d.weights(), t)
}

fn scale_rows(m: &DMatrix<f64>, w: &DVector<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    for (i, mut row) in out.row_iter_mut().enumerate() {
        row *= w[i];
    }
    out
}

/// Predictors for the shared (`T^π`) and per-action problems. Actions that
/// carry zero occupancy have no predictor.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorSet {
    pub shared: DMatrix<f64>,
    pub per_action: Vec<Option<DMatrix<f64>>>,
}

pub fn optimal_predictors(
    phi: &DMatrix<f64>,
    mdp: &Mdp,
    policy: &Policy,
    d: &StateDistribution,
) -> Result<PredictorSet> {
    let field = FlowField::new(ObjectiveKind::Ac, mdp, policy, d)?;
    let shared = weighted_predictor(phi, &field.d, &field.t_pi)?;
    let per_action = field
        .occupancy
        .iter()
        .zip(mdp.transitions())
        .map(|(w, t)| if w.sum() > 0.0 { weighted_predictor(phi, w, t).map(Some) } else { Ok(None) })
        .collect::<Result<Vec<_>>>()?;
    Ok(PredictorSet { shared, per_action })
}

/// How the policy weights the per-action terms of `Ac` and `Var`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionWeighting {
    /// State-action occupancy `diag(d ⊙ π(a|·))`: the action is drawn from
    /// `π(·|x)` at the sampled state.
    #[default]
    PerState,
    /// `w_a · diag(d)` with `w_a = Σ_x d(x) π(a|x)`: the action is drawn from
    /// the policy's action marginal, independently of the state. Agrees with
    /// `PerState` whenever every row of `π` is the same.
    Marginal,
}

impl std::str::FromStr for ActionWeighting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per_state" => Ok(ActionWeighting::PerState),
            "marginal" => Ok(ActionWeighting::Marginal),
            other => Err(Error::invalid(format!("unknown action weighting `{other}` (expected per_state or marginal)"))),
        }
    }
}

/// The right-hand side of one objective's ODE, with everything that does not
/// depend on `Φ` precomputed.
#[derive(Debug, Clone)]
pub struct FlowField {
    kind: ObjectiveKind,
    transitions: Vec<DMatrix<f64>>,
    t_pi: DMatrix<f64>,
    d: DVector<f64>,
    /// Per-action state weights, see [`ActionWeighting`].
    occupancy: Vec<DVector<f64>>,
    /// Total occupancy per action.
    action_weights: Vec<f64>,
    lyapunov: bool,
}

impl FlowField {
    pub fn new(kind: ObjectiveKind, mdp: &Mdp, policy: &Policy, d: &StateDistribution) -> Result<Self> {
        Self::with_weighting(kind, mdp, policy, d, ActionWeighting::PerState)
    }

    pub fn with_weighting(
        kind: ObjectiveKind,
        mdp: &Mdp,
        policy: &Policy,
        d: &StateDistribution,
        weighting: ActionWeighting,
    ) -> Result<Self> {
        if d.len() != mdp.n_states() {
            return Err(Error::invalid("state distribution length differs from the state count"));
        }
        let t_pi = induced_transition(mdp, policy)?;
        let per_state: Vec<DVector<f64>> = (0..mdp.n_actions())
            .map(|a| d.weights().component_mul(&policy.probs().column(a)))
            .collect();
        let occupancy = match weighting {
            ActionWeighting::PerState => per_state,
            ActionWeighting::Marginal => per_state.iter().map(|w| d.weights() * w.sum()).collect(),
        };
        let action_weights: Vec<f64> = occupancy.iter().map(|w| w.sum()).collect();
        if kind != ObjectiveKind::Pi {
            for (a, w) in action_weights.iter().enumerate() {
                if *w == 0.0 {
                    log::warn!("action {a} has zero occupancy; its term is dropped from the {kind} flow");
                }
            }
        }
        // Under uniform d each per-action term is the gradient flow of its own
        // trace term once T_a is symmetric; state-dependent action weights break that.
        let state_free = weighting == ActionWeighting::Marginal || policy.is_uniform();
        let pi_sym = asymmetry(&t_pi) < STOCHASTIC_TOL;
        let lyapunov = d.is_uniform()
            && match kind {
                ObjectiveKind::Pi => pi_sym,
                ObjectiveKind::Ac => mdp.is_symmetric() && state_free,
                ObjectiveKind::Var => mdp.is_symmetric() && state_free && pi_sym,
            };
        Ok(FlowField {
            kind,
            transitions: mdp.transitions().to_vec(),
            t_pi,
            d: d.weights().clone(),
            occupancy,
            action_weights,
            lyapunov,
        })
    }

    pub fn kind(&self) -> ObjectiveKind {
        self.kind
    }

    pub fn induced(&self) -> &DMatrix<f64> {
        &self.t_pi
    }

    /// Whether the trace objective is guaranteed non-decreasing along the flow:
    /// uniform state weights, a symmetric `T^π` for the `Pi` part, and symmetric
    /// `T_a` with state-independent action weights for the per-action part.
    pub fn lyapunov_applies(&self) -> bool {
        self.lyapunov
    }

    /// `Φ̇` at `phi`.
    pub fn velocity(&self, phi: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        match self.kind {
            ObjectiveKind::Pi => self.pi_velocity(phi),
            ObjectiveKind::Ac => self.ac_velocity(phi),
            ObjectiveKind::Var => Ok(self.ac_velocity(phi)? - self.pi_velocity(phi)?),
        }
    }

    fn pi_velocity(&self, phi: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        semi_gradient_term(phi, &self.d, &self.t_pi)
    }

    fn ac_velocity(&self, phi: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let mut acc = DMatrix::zeros(phi.nrows(), phi.ncols());
        for (w, t) in self.occupancy.iter().zip(&self.transitions) {
            if w.sum() > 0.0 {
                acc += semi_gradient_term(phi, w, t)?;
            }
        }
        Ok(acc)
    }

    /// Trace objective of this flow's kind, evaluated on the orthonormalized
    /// column span of `phi`.
    pub fn trace_value(&self, phi: &DMatrix<f64>) -> Result<f64> {
        let gram = (phi.transpose() * phi)
            .cholesky()
            .ok_or_else(|| Error::RankDeficient("representation has lost rank".into()))?;
        let tr_sq = |t: &DMatrix<f64>| {
            let p = gram.solve(&(phi.transpose() * (t * phi)));
            crate::linalg::trace_of_product(&p, &p)
        };
        let pi = || tr_sq(&self.t_pi);
        let ac = || {
            self.transitions
                .iter()
                .zip(&self.action_weights)
                .filter(|(_, w)| **w > 0.0)
                .map(|(t, w)| w * tr_sq(t))
                .sum::<f64>()
        };
        Ok(match self.kind {
            ObjectiveKind::Pi => pi(),
            ObjectiveKind::Ac => ac(),
            ObjectiveKind::Var => ac() - pi(),
        })
    }
}

/// `−2 (DΦP* − D T Φ) P*ᵀ` with `D = diag(w)`.
fn semi_gradient_term(phi: &DMatrix<f64>, w: &DVector<f64>, t: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let p = weighted_predictor(phi, w, t)?;
    let residual = scale_rows(&(phi * &p - t * phi), w);
    Ok(residual * p.transpose() * -2.0)
}

pub fn phi_dot_pi(phi: &DMatrix<f64>, mdp: &Mdp, policy: &Policy, d: &StateDistribution) -> Result<DMatrix<f64>> {
    FlowField::new(ObjectiveKind::Pi, mdp, policy, d)?.velocity(phi)
}

pub fn phi_dot_ac(phi: &DMatrix<f64>, mdp: &Mdp, policy: &Policy, d: &StateDistribution) -> Result<DMatrix<f64>> {
    FlowField::new(ObjectiveKind::Ac, mdp, policy, d)?.velocity(phi)
}

pub fn phi_dot_var(phi: &DMatrix<f64>, mdp: &Mdp, policy: &Policy, d: &StateDistribution) -> Result<DMatrix<f64>> {
    FlowField::new(ObjectiveKind::Var, mdp, policy, d)?.velocity(phi)
}

pub fn phi_dot(
    kind: ObjectiveKind,
    phi: &DMatrix<f64>,
    mdp: &Mdp,
    policy: &Policy,
    d: &StateDistribution,
) -> Result<DMatrix<f64>> {
    FlowField::new(kind, mdp, policy, d)?.velocity(phi)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
#[serde(default)]
pub struct IntegratorConfig {
    pub step_size: f64,
    pub max_iters: usize,
    /// Stop once `‖Φ̇‖_F` drops below this.
    pub grad_tol: f64,
    /// Re-orthonormalize every this many steps; 0 disables it.
    pub retraction_period: usize,
    /// Halve the step when the trace objective drops. Only active where the
    /// trace objective is a Lyapunov function.
    pub adaptive: bool,
    /// Keep a `Φ` snapshot every this many steps; 0 keeps the first and last only.
    pub snapshot_period: usize,
    pub ortho_tol: f64,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig {
            step_size: 5.0,
            max_iters: 20_000,
            grad_tol: 1e-9,
            retraction_period: 100,
            adaptive: true,
            snapshot_period: 0,
            ortho_tol: DEFAULT_ORTHO_TOL,
        }
    }
}

impl IntegratorConfig {
    /// Defaults with step `0.5·n`, which offsets the `1/n` factor in `Φ̇`.
    pub fn default_for(n_states: usize) -> Self {
        IntegratorConfig { step_size: 0.5 * n_states as f64, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0) || !self.step_size.is_finite() {
            return Err(Error::invalid(format!("step size must be positive, got {}", self.step_size)));
        }
        if self.max_iters == 0 {
            return Err(Error::invalid("max_iters must be positive"));
        }
        if !(self.grad_tol > 0.0) {
            return Err(Error::invalid("grad_tol must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepRecord {
    pub iteration: usize,
    pub trace_value: f64,
    pub noncollapse_residual: f64,
    /// `‖Φ̇‖_F` at the start of the step.
    pub grad_norm: f64,
    pub step_size: f64,
}

#[derive(Clone, PartialEq)]
pub struct Trajectory {
    pub snapshots: Vec<(usize, DMatrix<f64>)>,
    pub diagnostics: Vec<StepRecord>,
    pub phi: DMatrix<f64>,
    pub initial_trace: f64,
    /// `‖Φ̇‖_F` at the final `Φ`.
    pub final_grad_norm: f64,
    pub converged: bool,
    /// Steps rejected by the Lyapunov check.
    pub rejected_steps: usize,
}

impl fmt::Debug for Trajectory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Trajectory")
            .field("steps", &self.steps())
            .field("converged", &self.converged)
            .field("final_grad_norm", &self.final_grad_norm)
            .field("final_trace", &self.final_trace())
            .finish()
    }
}

impl Trajectory {
    pub fn steps(&self) -> usize {
        self.diagnostics.len()
    }

    pub fn final_trace(&self) -> f64 {
        self.diagnostics.last().map_or(self.initial_trace, |r| r.trace_value)
    }

    /// Trace values starting with the initial one, one per step after that.
    pub fn trace_series(&self) -> Vec<f64> {
        std::iter::once(self.initial_trace).chain(self.diagnostics.iter().map(|r| r.trace_value)).collect()
    }

    /// Accepted steps whose trace value fell by more than [`LYAPUNOV_SLACK`].
    pub fn lyapunov_violations(&self) -> usize {
        self.trace_series().windows(2).filter(|w| w[1] < w[0] - LYAPUNOV_SLACK).count()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,trace_value,noncollapse_residual,grad_norm,step_size\n");
        for r in &self.diagnostics {
            out.push_str(&format!(
                "{},{:e},{:e},{:e},{:e}\n",
                r.iteration, r.trace_value, r.noncollapse_residual, r.grad_norm, r.step_size
            ));
        }
        out
    }

    /// Snapshots as `[{"iteration": i, "phi": [[...]]}, ...]`.
    pub fn snapshots_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Snap {
            iteration: usize,
            phi: Vec<Vec<f64>>,
        }
        let snaps: Vec<Snap> =
            self.snapshots.iter().map(|(i, p)| Snap { iteration: *i, phi: to_rows(p) }).collect();
        Ok(serde_json::to_string(&snaps)?)
    }
}

/// Explicit Euler on `Φ̇ = field(Φ)` starting from an orthonormal `phi0`.
pub fn integrate(
    phi0: &DMatrix<f64>,
    kind: ObjectiveKind,
    mdp: &Mdp,
    policy: &Policy,
    d: &StateDistribution,
    config: &IntegratorConfig,
) -> Result<Trajectory> {
    let field = FlowField::new(kind, mdp, policy, d)?;
    integrate_field(phi0, &field, config)
}

/// [`integrate`] with an explicit [`ActionWeighting`].
pub fn integrate_weighted(
    phi0: &DMatrix<f64>,
    kind: ObjectiveKind,
    mdp: &Mdp,
    policy: &Policy,
    d: &StateDistribution,
    weighting: ActionWeighting,
    config: &IntegratorConfig,
) -> Result<Trajectory> {
    let field = FlowField::with_weighting(kind, mdp, policy, d, weighting)?;
    integrate_field(phi0, &field, config)
}

pub fn integrate_field(phi0: &DMatrix<f64>, field: &FlowField, config: &IntegratorConfig) -> Result<Trajectory> {
    config.validate()?;
    let phi0 = Representation::new(phi0.clone(), config.ortho_tol)?.into_matrix();
    if phi0.nrows() != field.t_pi.nrows() {
        return Err(Error::invalid("representation row count differs from the state count"));
    }
    let adaptive = config.adaptive && field.lyapunov_applies();
    let mut phi = phi0;
    let mut f = field.trace_value(&phi)?;
    let mut v = field.velocity(&phi)?;
    let mut grad = v.norm();
    let mut h = config.step_size;
    let mut traj = Trajectory {
        snapshots: vec![(0, phi.clone())],
        diagnostics: Vec::new(),
        phi: phi.clone(),
        initial_trace: f,
        final_grad_norm: grad,
        converged: false,
        rejected_steps: 0,
    };

    let mut iter = 0;
    while grad >= config.grad_tol && iter < config.max_iters {
        let (next, f_next) = loop {
            let mut candidate = &phi + &v * h;
            if config.retraction_period > 0 && (iter + 1) % config.retraction_period == 0 {
                candidate = thin_orthonormal(&candidate)?;
            }
            let f_candidate = field.trace_value(&candidate)?;
            if !adaptive || f_candidate >= f - LYAPUNOV_SLACK {
                break (candidate, f_candidate);
            }
            traj.rejected_steps += 1;
            h *= 0.5;
            if h < MIN_STEP {
                traj.phi = phi.clone();
                traj.final_grad_norm = grad;
                return Err(Error::StepUnderflow { step: h, trajectory: Box::new(traj) });
            }
        };
        iter += 1;
        traj.diagnostics.push(StepRecord {
            iteration: iter,
            trace_value: f_next,
            noncollapse_residual: noncollapse_residual(&next),
            grad_norm: grad,
            step_size: h,
        });
        phi = next;
        f = f_next;
        if config.snapshot_period > 0 && iter % config.snapshot_period == 0 {
            traj.snapshots.push((iter, phi.clone()));
        }
        v = field.velocity(&phi)?;
        grad = v.norm();
    }

    traj.converged = grad < config.grad_tol;
    traj.final_grad_norm = grad;
    if traj.snapshots.last().map(|(i, _)| *i) != Some(iter) {
        traj.snapshots.push((iter, phi.clone()));
    }
    traj.phi = phi;
    Ok(traj)
}

/// Uniform `d_X`; all the experiments use it.
pub fn uniform_states(n: usize) -> StateDistribution {
    StateDistribution::uniform(n).expect("n >= 1")
}
