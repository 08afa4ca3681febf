use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

use super::{argmin_set, check_skips, instance_seed, run_batch, scaled_mean_stderr, stream, train_all, ExperimentConfig, Manifest, Table};
use crate::dynamics::orthogonal_init;
use crate::mdp::{gen_random_mdp, Policy};
use crate::spectral::grassmann_distance;
use crate::{ObjectiveKind, Result};

/// Subspace shift of each objective's limit under a policy change, for one ε.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RobustnessRow {
    pub epsilon: f64,
    /// Mean Grassmann distance per objective, [`ObjectiveKind::ALL`] order.
    pub mean: [f64; 3],
    pub stderr: [f64; 3],
    /// Fraction of runs where the objective's distance is smallest; tied
    /// objectives each get the run.
    pub pr_smallest: [f64; 3],
    pub n_used: usize,
    pub n_skipped: usize,
    pub n_unconverged: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RobustnessTable {
    pub rows: Vec<RobustnessRow>,
}

/// Per run: a seeded deterministic base policy `π₀`, an independent random
/// stochastic policy `N`, `π = (1−ε)π₀ + ε·uniform` and `π′ = (1−ε)π₀ + ε·N`.
/// All flows for both policies start from the same `Φ₀`. The per-action flows
/// weight actions as `cfg.robustness_weighting` says.
pub fn run_robustness_table(cfg: &ExperimentConfig) -> Result<(RobustnessTable, Vec<Table>, Manifest)> {
    cfg.validate()?;
    if cfg.epsilon_list.is_empty() {
        return Err(crate::Error::invalid("epsilon_list is empty"));
    }
    let integ = cfg.integrator_config();
    let n_runs = cfg.n_robustness_runs;
    let mut rows = Vec::new();
    let mut total_skipped = 0;
    let mut total_unconverged = 0;
    for &eps in &cfg.epsilon_list {
        let results = run_batch(n_runs, "robustness", |i| {
            let mdp = gen_random_mdp(cfg.n_states, cfg.n_actions, instance_seed(cfg.seed, i, stream::MDP), true, cfg.reward_scale)?
                .with_gamma(cfg.gamma)?;
            let mut prng = ChaCha8Rng::seed_from_u64(instance_seed(cfg.seed, i, stream::POLICY));
            let base = Policy::random_deterministic(cfg.n_states, cfg.n_actions, &mut prng)?;
            let mut nrng = ChaCha8Rng::seed_from_u64(instance_seed(cfg.seed, i, stream::NOISE));
            let noise = Policy::random_stochastic(cfg.n_states, cfg.n_actions, &mut nrng)?;
            let pi = base.perturb(eps)?;
            let pi_prime = base.mix(&noise, eps)?;
            let phi0 = orthogonal_init(cfg.n_states, cfg.k, instance_seed(cfg.seed, i, stream::INIT))?.into_matrix();
            let a = train_all(&mdp, &pi, &phi0, cfg.robustness_weighting, &integ)?;
            let b = train_all(&mdp, &pi_prime, &phi0, cfg.robustness_weighting, &integ)?;
            let mut deltas = [0.0; 3];
            for c in 0..3 {
                deltas[c] = grassmann_distance(&a.phis[c], &b.phis[c])?;
            }
            Ok((deltas, a.unconverged + b.unconverged))
        });
        let used: Vec<_> = results.iter().flatten().collect();
        let n_skipped = n_runs - used.len();
        check_skips(n_skipped, n_runs)?;
        let mut row = RobustnessRow {
            epsilon: eps,
            mean: [0.0; 3],
            stderr: [0.0; 3],
            pr_smallest: [0.0; 3],
            n_used: used.len(),
            n_skipped,
            n_unconverged: used.iter().map(|(_, u)| *u).sum(),
        };
        for c in 0..3 {
            let vals: Vec<f64> = used.iter().map(|(d, _)| d[c]).collect();
            (row.mean[c], row.stderr[c]) = scaled_mean_stderr(&vals);
        }
        for (d, _) in &used {
            for c in argmin_set(d) {
                row.pr_smallest[c] += 1.0;
            }
        }
        if !used.is_empty() {
            for c in 0..3 {
                row.pr_smallest[c] /= used.len() as f64;
            }
        }
        total_skipped += n_skipped;
        total_unconverged += row.n_unconverged;
        rows.push(row);
    }

    let mut out = Table::new("robustness", &["epsilon", "objective", "mean_distance", "stderr95", "pr_smallest"]);
    for row in &rows {
        for kind in ObjectiveKind::ALL {
            let c = kind.index();
            out.push(vec![json!(row.epsilon), json!(kind.as_str()), json!(row.mean[c]), json!(row.stderr[c]), json!(row.pr_smallest[c])]);
        }
    }
    let instances = n_runs * cfg.epsilon_list.len();
    let manifest = Manifest::new("robustness", cfg, instances, total_skipped, total_unconverged);
    Ok((RobustnessTable { rows }, vec![out], manifest))
}
