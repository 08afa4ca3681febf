use nalgebra::DMatrix;
use serde::Serialize;
use serde_json::json;

use super::{
    argmin_set, check_skips, instance_seed, run_batch, scaled_mean_stderr, stream, train_all, ExperimentConfig,
    Manifest, Table, Trained,
};
use crate::dynamics::{orthogonal_init, ActionWeighting};
use crate::mdp::{gen_random_mdp, make_uniform_policy, Mdp, Policy};
use crate::objectives::trace_objective;
use crate::{ObjectiveKind, Result};

/// Negative trace objectives (rows) of the representations trained by each
/// objective (columns), over a batch of symmetric MDPs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CrossTable {
    pub mean: [[f64; 3]; 3],
    /// 1.96 × standard error of the mean.
    pub stderr: [[f64; 3]; 3],
    /// `pr_matrix[r][c]`: fraction of instances where representation `c` is
    /// the unique minimizer of objective `r`.
    pub pr_matrix: [[f64; 3]; 3],
    /// Diagonal of `pr_matrix`.
    pub pr_best: [f64; 3],
    /// Per objective, instances whose minimum was tied.
    pub ties: [usize; 3],
    pub n_used: usize,
    pub n_skipped: usize,
    pub n_unconverged: usize,
    /// Set for single-action MDPs, where the objectives coincide.
    pub degenerate: bool,
}

pub(crate) struct SymmetricInstance {
    pub mdp: Mdp,
    pub policy: Policy,
    pub phi0: DMatrix<f64>,
}

pub(crate) fn symmetric_instance(cfg: &ExperimentConfig, i: usize) -> Result<SymmetricInstance> {
    let mdp = gen_random_mdp(cfg.n_states, cfg.n_actions, instance_seed(cfg.seed, i, stream::MDP), true, cfg.reward_scale)?
        .with_gamma(cfg.gamma)?;
    let policy = make_uniform_policy(cfg.n_states, cfg.n_actions)?;
    let phi0 = orthogonal_init(cfg.n_states, cfg.k, instance_seed(cfg.seed, i, stream::INIT))?.into_matrix();
    Ok(SymmetricInstance { mdp, policy, phi0 })
}

pub(crate) fn train_symmetric(cfg: &ExperimentConfig, i: usize) -> Result<(SymmetricInstance, Trained)> {
    let inst = symmetric_instance(cfg, i)?;
    let trained = train_all(&inst.mdp, &inst.policy, &inst.phi0, ActionWeighting::PerState, &cfg.integrator_config())?;
    Ok((inst, trained))
}

pub fn run_cross_objective_table(cfg: &ExperimentConfig) -> Result<(CrossTable, Vec<Table>, Manifest)> {
    cfg.validate()?;
    let results = run_batch(cfg.n_mdps, "cross-table", |i| {
        let (inst, trained) = train_symmetric(cfg, i)?;
        let mut neg = [[0.0; 3]; 3];
        for row in ObjectiveKind::ALL {
            for (c, phi) in trained.phis.iter().enumerate() {
                neg[row.index()][c] = -trace_objective(phi, &inst.mdp, &inst.policy, row)?;
            }
        }
        Ok((neg, trained.unconverged))
    });
    let used: Vec<_> = results.iter().flatten().collect();
    let n_skipped = cfg.n_mdps - used.len();
    check_skips(n_skipped, cfg.n_mdps)?;

    let mut table = CrossTable {
        mean: [[0.0; 3]; 3],
        stderr: [[0.0; 3]; 3],
        pr_matrix: [[0.0; 3]; 3],
        pr_best: [0.0; 3],
        ties: [0; 3],
        n_used: used.len(),
        n_skipped,
        n_unconverged: used.iter().map(|(_, u)| *u).sum(),
        degenerate: cfg.n_actions == 1,
    };
    for r in 0..3 {
        for c in 0..3 {
            let vals: Vec<f64> = used.iter().map(|(neg, _)| neg[r][c]).collect();
            (table.mean[r][c], table.stderr[r][c]) = scaled_mean_stderr(&vals);
        }
        for (neg, _) in &used {
            let best = argmin_set(&neg[r]);
            if best.len() == 1 {
                table.pr_matrix[r][best[0]] += 1.0;
            } else {
                table.ties[r] += 1;
            }
        }
        if !used.is_empty() {
            for c in 0..3 {
                table.pr_matrix[r][c] /= used.len() as f64;
            }
        }
        table.pr_best[r] = table.pr_matrix[r][r];
        if table.ties[r] > 0 {
            log::info!("cross-table: {} ties on objective {}", table.ties[r], ObjectiveKind::ALL[r]);
        }
    }
    if table.degenerate {
        log::warn!("cross-table: single-action MDPs make the three objectives degenerate");
    }

    let mut out = Table::new(
        "cross_table",
        &["objective", "representation", "mean_neg_trace", "stderr95", "pr_best", "ties", "degenerate"],
    );
    for row in ObjectiveKind::ALL {
        for col in ObjectiveKind::ALL {
            let (r, c) = (row.index(), col.index());
            out.push(vec![
                json!(row.as_str()),
                json!(col.as_str()),
                json!(table.mean[r][c]),
                json!(table.stderr[r][c]),
                json!(table.pr_matrix[r][c]),
                json!(table.ties[r]),
                json!(table.degenerate),
            ]);
        }
    }
    let manifest = Manifest::new("cross-table", cfg, cfg.n_mdps, n_skipped, table.n_unconverged);
    Ok((table, vec![out], manifest))
}
