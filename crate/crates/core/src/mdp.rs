//! Tabular MDPs, policies and their exact value functions.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Gamma, Open01, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::linalg::{asymmetry, max_abs, row_sums};
use crate::{Error, Result};

/// Tolerance for "rows sum to one" and symmetry checks on transition matrices.
pub const STOCHASTIC_TOL: f64 = 1e-12;
/// Dirichlet concentration of the shift weights in [`gen_common_eigenbasis_family`].
pub const FAMILY_CONCENTRATION: f64 = 0.2;
pub const DEFAULT_GAMMA: f64 = 0.99;
pub const SINKHORN_TOL: f64 = 1e-12;
pub const SINKHORN_MAX_ITERS: usize = 10_000;

/// Finite MDP with per-action transition matrices and a state reward.
#[derive(Debug, Clone, PartialEq)]
pub struct Mdp {
    transitions: Vec<DMatrix<f64>>,
    reward: DVector<f64>,
    gamma: f64,
}

impl Mdp {
    pub fn new(transitions: Vec<DMatrix<f64>>, reward: DVector<f64>, gamma: f64) -> Result<Self> {
        let n = reward.len();
        if n == 0 || transitions.is_empty() {
            return Err(Error::invalid("an MDP needs at least one state and one action"));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::invalid(format!("gamma must lie in [0, 1), got {gamma}")));
        }
        for (a, t) in transitions.iter().enumerate() {
            check_stochastic(t, n).map_err(|e| Error::invalid(format!("action {a}: {e}")))?;
        }
        if reward.iter().any(|r| !r.is_finite()) {
            return Err(Error::invalid("reward has non-finite entries"));
        }
        Ok(Mdp { transitions, reward, gamma })
    }

    pub fn n_states(&self) -> usize {
        self.reward.len()
    }

    pub fn n_actions(&self) -> usize {
        self.transitions.len()
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn reward(&self) -> &DVector<f64> {
        &self.reward
    }

    pub fn transitions(&self) -> &[DMatrix<f64>] {
        &self.transitions
    }

    pub fn transition(&self, action: usize) -> &DMatrix<f64> {
        &self.transitions[action]
    }

    /// True when every `T_a` is symmetric to within [`STOCHASTIC_TOL`].
    pub fn is_symmetric(&self) -> bool {
        self.transitions.iter().all(|t| asymmetry(t) < STOCHASTIC_TOL)
    }

    pub fn with_reward(&self, reward: DVector<f64>) -> Result<Self> {
        Mdp::new(self.transitions.clone(), reward, self.gamma)
    }

    pub fn with_gamma(&self, gamma: f64) -> Result<Self> {
        Mdp::new(self.transitions.clone(), self.reward.clone(), gamma)
    }

    pub fn to_document(&self) -> MdpDocument {
        MdpDocument {
            n_states: self.n_states(),
            n_actions: self.n_actions(),
            gamma: self.gamma,
            reward: self.reward.iter().copied().collect(),
            transitions: self.transitions.iter().map(crate::linalg::to_rows).collect(),
        }
    }

    pub fn from_document(doc: &MdpDocument) -> Result<Self> {
        if doc.transitions.len() != doc.n_actions || doc.reward.len() != doc.n_states {
            return Err(Error::invalid("MDP document counts disagree with its arrays"));
        }
        let transitions = doc
            .transitions
            .iter()
            .map(|rows| crate::linalg::from_rows(rows))
            .collect::<Result<Vec<_>>>()?;
        Mdp::new(transitions, DVector::from_vec(doc.reward.clone()), doc.gamma)
    }

    /// JSON text of [`MdpDocument`]; floats round-trip exactly.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_document())?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: MdpDocument = serde_json::from_str(text)?;
        Mdp::from_document(&doc)
    }
}

/// On-disk form of an [`Mdp`]. Matrices are row-major nested arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdpDocument {
    pub n_states: usize,
    pub n_actions: usize,
    pub gamma: f64,
    pub reward: Vec<f64>,
    pub transitions: Vec<Vec<Vec<f64>>>,
}

fn check_stochastic(t: &DMatrix<f64>, n: usize) -> std::result::Result<(), String> {
    if t.shape() != (n, n) {
        return Err(format!("expected {n}x{n} matrix, got {:?}", t.shape()));
    }
    if t.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err("entries must be finite and nonnegative".into());
    }
    let worst = row_sums(t).iter().fold(0.0f64, |acc, s| acc.max((s - 1.0).abs()));
    if worst > STOCHASTIC_TOL {
        return Err(format!("row sums deviate from 1 by {worst:e}"));
    }
    Ok(())
}

/// Row-stochastic `n_states × n_actions` matrix of action probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    probs: DMatrix<f64>,
}

impl Policy {
    pub fn new(probs: DMatrix<f64>) -> Result<Self> {
        if probs.nrows() == 0 || probs.ncols() == 0 {
            return Err(Error::invalid("policy needs at least one state and one action"));
        }
        if probs.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid("policy entries must be finite and nonnegative"));
        }
        let worst = row_sums(&probs).iter().fold(0.0f64, |acc, s| acc.max((s - 1.0).abs()));
        if worst > STOCHASTIC_TOL {
            return Err(Error::invalid(format!("policy rows deviate from 1 by {worst:e}")));
        }
        Ok(Policy { probs })
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(Error::invalid("policy dimensions must be positive"));
        }
        Ok(Policy { probs: DMatrix::from_element(n_states, n_actions, 1.0 / n_actions as f64) })
    }

    /// Deterministic policy taking `actions[x]` in state `x`.
    pub fn deterministic(actions: &[usize], n_actions: usize) -> Result<Self> {
        if actions.iter().any(|&a| a >= n_actions) {
            return Err(Error::invalid("action index out of range"));
        }
        let mut probs = DMatrix::zeros(actions.len(), n_actions);
        for (x, &a) in actions.iter().enumerate() {
            probs[(x, a)] = 1.0;
        }
        Policy::new(probs)
    }

    pub fn random_deterministic<R: Rng + ?Sized>(n_states: usize, n_actions: usize, rng: &mut R) -> Result<Self> {
        let actions: Vec<usize> = (0..n_states).map(|_| rng.random_range(0..n_actions)).collect();
        Policy::deterministic(&actions, n_actions)
    }

    /// Each row drawn uniformly from the probability simplex.
    pub fn random_stochastic<R: Rng + ?Sized>(n_states: usize, n_actions: usize, rng: &mut R) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(Error::invalid("policy dimensions must be positive"));
        }
        let mut probs = DMatrix::zeros(n_states, n_actions);
        for x in 0..n_states {
            let draws: Vec<f64> = (0..n_actions).map(|_| Exp1.sample(rng)).collect();
            let total: f64 = draws.iter().sum();
            for (a, d) in draws.into_iter().enumerate() {
                probs[(x, a)] = d / total;
            }
        }
        Policy::new(probs)
    }

    pub fn probs(&self) -> &DMatrix<f64> {
        &self.probs
    }

    pub fn n_states(&self) -> usize {
        self.probs.nrows()
    }

    pub fn n_actions(&self) -> usize {
        self.probs.ncols()
    }

    pub fn prob(&self, state: usize, action: usize) -> f64 {
        self.probs[(state, action)]
    }

    pub fn is_uniform(&self) -> bool {
        let u = 1.0 / self.n_actions() as f64;
        self.probs.iter().all(|p| (p - u).abs() < STOCHASTIC_TOL)
    }

    /// Marginal action distribution under the state distribution `d`.
    pub fn action_marginal(&self, d: &StateDistribution) -> DVector<f64> {
        self.probs.transpose() * d.weights()
    }

    /// `(1 − ε)·π + ε·uniform`.
    pub fn perturb(&self, epsilon: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&epsilon) {
            return Err(Error::invalid(format!("epsilon must lie in [0, 1], got {epsilon}")));
        }
        let u = 1.0 / self.n_actions() as f64;
        Policy::new(self.probs.map(|p| (1.0 - epsilon) * p + epsilon * u))
    }

    /// `(1 − ε)·π + ε·other`.
    pub fn mix(&self, other: &Policy, epsilon: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&epsilon) {
            return Err(Error::invalid(format!("epsilon must lie in [0, 1], got {epsilon}")));
        }
        if self.probs.shape() != other.probs.shape() {
            return Err(Error::invalid("policy shapes differ"));
        }
        Policy::new(&self.probs * (1.0 - epsilon) + &other.probs * epsilon)
    }
}

pub fn make_uniform_policy(n_states: usize, n_actions: usize) -> Result<Policy> {
    Policy::uniform(n_states, n_actions)
}

pub fn perturb_policy(policy: &Policy, epsilon: f64) -> Result<Policy> {
    policy.perturb(epsilon)
}

/// Probability vector over states (`d_X`).
#[derive(Debug, Clone, PartialEq)]
pub struct StateDistribution {
    weights: DVector<f64>,
}

impl StateDistribution {
    pub fn new(weights: DVector<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::invalid("state distribution is empty"));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::invalid("state weights must be finite and nonnegative"));
        }
        let total = weights.sum();
        if (total - 1.0).abs() > STOCHASTIC_TOL {
            return Err(Error::invalid(format!("state weights sum to {total}")));
        }
        Ok(StateDistribution { weights })
    }

    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("state distribution is empty"));
        }
        Ok(StateDistribution { weights: DVector::from_element(n, 1.0 / n as f64) })
    }

    pub fn weights(&self) -> &DVector<f64> {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn is_uniform(&self) -> bool {
        let u = 1.0 / self.len() as f64;
        self.weights.iter().all(|w| (w - u).abs() < STOCHASTIC_TOL)
    }
}

fn check_policy_shape(mdp: &Mdp, policy: &Policy) -> Result<()> {
    if policy.n_states() != mdp.n_states() || policy.n_actions() != mdp.n_actions() {
        return Err(Error::invalid(format!(
            "policy is {}x{} but the MDP has {} states and {} actions",
            policy.n_states(),
            policy.n_actions(),
            mdp.n_states(),
            mdp.n_actions()
        )));
    }
    Ok(())
}

/// `T^π(x, ·) = Σ_a π(a|x) T_a(x, ·)`.
pub fn induced_transition(mdp: &Mdp, policy: &Policy) -> Result<DMatrix<f64>> {
    check_policy_shape(mdp, policy)?;
    let n = mdp.n_states();
    let mut t_pi = DMatrix::zeros(n, n);
    for (a, t) in mdp.transitions().iter().enumerate() {
        for x in 0..n {
            let p = policy.prob(x, a);
            if p != 0.0 {
                for y in 0..n {
                    t_pi[(x, y)] += p * t[(x, y)];
                }
            }
        }
    }
    Ok(t_pi)
}

/// `V = (I − γ T^π)^{-1} R`.
pub fn value_function(mdp: &Mdp, policy: &Policy) -> Result<DVector<f64>> {
    let t_pi = induced_transition(mdp, policy)?;
    let n = mdp.n_states();
    let system = DMatrix::identity(n, n) - t_pi * mdp.gamma();
    system
        .lu()
        .solve(mdp.reward())
        .ok_or_else(|| Error::Internal("singular Bellman system".into()))
}

/// Column `a` is `R + γ T_a V`.
pub fn q_function(mdp: &Mdp, policy: &Policy) -> Result<DMatrix<f64>> {
    let v = value_function(mdp, policy)?;
    Ok(q_from_value(mdp, &v))
}

fn q_from_value(mdp: &Mdp, v: &DVector<f64>) -> DMatrix<f64> {
    let n = mdp.n_states();
    let mut q = DMatrix::zeros(n, mdp.n_actions());
    for (a, t) in mdp.transitions().iter().enumerate() {
        let col = mdp.reward() + t * v * mdp.gamma();
        q.set_column(a, &col);
    }
    q
}

/// `A_a = Q_a − V`.
pub fn advantage_function(mdp: &Mdp, policy: &Policy) -> Result<DMatrix<f64>> {
    let v = value_function(mdp, policy)?;
    let mut q = q_from_value(mdp, &v);
    for mut col in q.column_iter_mut() {
        col -= &v;
    }
    Ok(q)
}

/// Value, Q and advantage from one linear solve.
pub fn value_triple(mdp: &Mdp, policy: &Policy) -> Result<(DVector<f64>, DMatrix<f64>, DMatrix<f64>)> {
    let v = value_function(mdp, policy)?;
    let q = q_from_value(mdp, &v);
    let mut adv = q.clone();
    for mut col in adv.column_iter_mut() {
        col -= &v;
    }
    Ok((v, q, adv))
}

/// Symmetric matrix with i.i.d. entries in (0, 1) on and above the diagonal.
pub fn draw_symmetric_positive<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v: f64 = Open01.sample(rng);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
    a
}

/// Finds a positive `d` with `diag(d)·A·diag(d)` row-stochastic. `A` must be
/// symmetric with positive entries. The result is exactly symmetric.
pub fn symmetric_sinkhorn(a: &DMatrix<f64>, tol: f64, max_iters: usize) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if n == 0 || a.ncols() != n {
        return Err(Error::invalid("sinkhorn scaling needs a nonempty square matrix"));
    }
    if !(tol > 0.0) {
        return Err(Error::invalid("tolerance must be positive"));
    }
    if asymmetry(a) != 0.0 {
        return Err(Error::invalid("sinkhorn input must be exactly symmetric"));
    }
    if a.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(Error::invalid("sinkhorn input must be strictly positive"));
    }
    if n == 1 {
        return Ok(DMatrix::from_element(1, 1, 1.0));
    }
    let scale = |d: &DVector<f64>| DMatrix::from_fn(n, n, |i, j| a[(i, j)] * (d[i] * d[j]));
    let mut d = DVector::from_element(n, 1.0 / a.row_sum().max().sqrt());
    let mut residual = f64::INFINITY;
    for _ in 0..max_iters {
        let t = scale(&d);
        let sums = row_sums(&t);
        residual = sums.iter().fold(0.0f64, |acc, s| acc.max((s - 1.0).abs()));
        if residual < tol {
            return Ok(t);
        }
        // d_i ← sqrt(d_i / (A d)_i): geometric averaging of the one-sided update.
        let ad = a * &d;
        for i in 0..n {
            d[i] = (d[i] / ad[i]).sqrt();
        }
    }
    Err(Error::NonConvergence { iterations: max_iters, residual })
}

/// Seeded symmetric, nonnegative, row-stochastic `n × n` matrix.
pub fn gen_symmetric_stochastic(n: usize, seed: u64, tol: f64, max_iters: usize) -> Result<DMatrix<f64>> {
    if n == 0 {
        return Err(Error::invalid("n must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = draw_symmetric_positive(n, &mut rng);
    symmetric_sinkhorn(&a, tol, max_iters)
}

fn gen_symmetric_with_rng<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<DMatrix<f64>> {
    let a = draw_symmetric_positive(n, rng);
    symmetric_sinkhorn(&a, SINKHORN_TOL, SINKHORN_MAX_ITERS)
}

/// `(P^s + P^{-s}) / 2` for the cyclic shift `P` on `n` states.
pub fn shift_pair_matrix(n: usize, s: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        m[(i, (i + s) % n)] += 0.5;
        m[(i, (i + n - s % n) % n)] += 0.5;
    }
    m
}

/// Symmetric circulant `Σ_s w_s (P^s + P^{-s})/2` for `s = 0..=n/2`.
pub fn symmetric_circulant(n: usize, weights: &[f64]) -> Result<DMatrix<f64>> {
    if weights.len() != n / 2 + 1 {
        return Err(Error::invalid(format!("expected {} shift weights, got {}", n / 2 + 1, weights.len())));
    }
    if weights.iter().any(|w| *w < 0.0) || (weights.iter().sum::<f64>() - 1.0).abs() > STOCHASTIC_TOL {
        return Err(Error::invalid("shift weights must form a probability vector"));
    }
    let mut m = DMatrix::zeros(n, n);
    for (s, w) in weights.iter().enumerate() {
        if *w != 0.0 {
            m += shift_pair_matrix(n, s) * *w;
        }
    }
    // Enforce exact symmetry and unit row sums against accumulated rounding.
    let m = crate::linalg::symmetric_part(&m);
    Ok(m)
}

/// Family of `m` symmetric circulant transition matrices on `n` states. All
/// members commute and share the real Fourier eigenbasis.
///
/// Each action's weights over the `n/2 + 1` shift pairs (stay included) are a
/// sparse Dirichlet draw (concentration [`FAMILY_CONCENTRATION`]), so actions
/// tend to favour a few shifts each and eigenvalues of either sign occur.
pub fn gen_common_eigenbasis_family(n: usize, m: usize, seed: u64) -> Result<Mdp> {
    if n < 2 || m == 0 {
        return Err(Error::invalid("common-eigenbasis family needs n >= 2 and m >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gamma = Gamma::new(FAMILY_CONCENTRATION, 1.0).expect("positive shape");
    let n_shifts = n / 2 + 1;
    let mut transitions = Vec::with_capacity(m);
    for _ in 0..m {
        let mut weights: Vec<f64> = (0..n_shifts).map(|_| gamma.sample(&mut rng)).collect();
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::invalid("degenerate Dirichlet draw"));
        }
        weights.iter_mut().for_each(|w| *w /= total);
        // renormalize the rounding error into the stay weight
        let err: f64 = weights.iter().sum::<f64>() - 1.0;
        weights[0] -= err;
        transitions.push(symmetric_circulant(n, &weights)?);
    }
    let reward = sample_reward(n, 1.0, &mut rng);
    Mdp::new(transitions, reward, DEFAULT_GAMMA)
}

/// Commuting circulant family whose actions differ only in laziness:
/// `T_a = α_a I + (1 − α_a) M` for one shared circulant `M` (stay weight 0.5,
/// flat Dirichlet over the nonzero shifts) and `α_a` uniform in `[0, 0.9)`.
///
/// The eigenvalues are `β_ai = λ_i + α_a (1 − λ_i)` with `λ_i ∈ [0, 1]`, so the
/// centered per-action eigenvalue vectors are all parallel. For `Pi` and `Var`
/// this leaves the top-k set as the only stable critical subspace, so the
/// flows reach it from almost every start. In the generic family of
/// [`gen_common_eigenbasis_family`] other eigen-subsets can be stable too.
pub fn gen_lazy_circulant_family(n: usize, m: usize, seed: u64) -> Result<Mdp> {
    if n < 2 || m == 0 {
        return Err(Error::invalid("lazy circulant family needs n >= 2 and m >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_shifts = n / 2 + 1;
    let draws: Vec<f64> = (1..n_shifts).map(|_| Exp1.sample(&mut rng)).collect();
    let total: f64 = draws.iter().sum();
    let mut base = Vec::with_capacity(n_shifts);
    base.push(0.5);
    base.extend(draws.iter().map(|d| 0.5 * d / total));
    let mut transitions = Vec::with_capacity(m);
    for _ in 0..m {
        let alpha: f64 = 0.9 * rng.random::<f64>();
        let mut weights: Vec<f64> = base.iter().map(|w| (1.0 - alpha) * w).collect();
        weights[0] += alpha;
        let err: f64 = weights.iter().sum::<f64>() - 1.0;
        weights[0] -= err;
        transitions.push(symmetric_circulant(n, &weights)?);
    }
    let reward = sample_reward(n, 1.0, &mut rng);
    Mdp::new(transitions, reward, DEFAULT_GAMMA)
}

/// Zero-mean Gaussian reward with covariance `(scale² / n) · I`.
pub fn sample_reward<R: Rng + ?Sized>(n: usize, scale: f64, rng: &mut R) -> DVector<f64> {
    let sd = scale / (n as f64).sqrt();
    DVector::from_iterator(n, (0..n).map(|_| {
        let z: f64 = StandardNormal.sample(rng);
        sd * z
    }))
}

/// Random MDP: symmetric (Sinkhorn-scaled) or plain row-normalized dynamics,
/// Gaussian reward, `γ =` [`DEFAULT_GAMMA`].
pub fn gen_random_mdp(n: usize, m: usize, seed: u64, symmetric: bool, reward_scale: f64) -> Result<Mdp> {
    if n == 0 || m == 0 {
        return Err(Error::invalid("n and m must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut transitions = Vec::with_capacity(m);
    for _ in 0..m {
        let t = if symmetric {
            gen_symmetric_with_rng(n, &mut rng)?
        } else {
            let mut t = DMatrix::from_fn(n, n, |_, _| {
                let v: f64 = Open01.sample(&mut rng);
                v
            });
            for mut row in t.row_iter_mut() {
                let s = row.sum();
                row /= s;
            }
            t
        };
        transitions.push(t);
    }
    let reward = sample_reward(n, reward_scale, &mut rng);
    Mdp::new(transitions, reward, DEFAULT_GAMMA)
}

/// Largest `‖T_a T_b − T_b T_a‖` entry over action pairs.
pub fn max_commutator(mdp: &Mdp) -> f64 {
    let ts = mdp.transitions();
    let mut worst = 0.0f64;
    for a in 0..ts.len() {
        for b in a + 1..ts.len() {
            worst = worst.max(max_abs(&(&ts[a] * &ts[b] - &ts[b] * &ts[a])));
        }
    }
    worst
}
