use serde::Serialize;
use serde_json::json;

use super::cross::train_symmetric;
use super::{argmin_set, check_skips, instance_seed, run_batch, scaled_mean_stderr, stream, ExperimentConfig, Manifest, Table};
use crate::objectives::{fit_mse, FitTarget};
use crate::{ObjectiveKind, Result};

/// Fit errors of `V`, `Q` and the advantage (rows, [`FitTarget::ALL`] order)
/// on each trained representation (columns).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValueMseTable {
    pub mean: [[f64; 3]; 3],
    pub stderr: [[f64; 3]; 3],
    /// `pr_best[f][c]`: fraction of instances where representation `c` has the
    /// unique smallest error for fit `f`.
    pub pr_best: [[f64; 3]; 3],
    pub n_used: usize,
    pub n_skipped: usize,
    pub n_unconverged: usize,
}

pub fn run_value_mse_table(cfg: &ExperimentConfig) -> Result<(ValueMseTable, Vec<Table>, Manifest)> {
    cfg.validate()?;
    let results = run_batch(cfg.n_mdps, "value-mse", |i| {
        let (inst, trained) = train_symmetric(cfg, i)?;
        let reward_seed = instance_seed(cfg.seed, i, stream::REWARD);
        let mut mse = [[0.0; 3]; 3];
        for (c, phi) in trained.phis.iter().enumerate() {
            let rep = fit_mse(phi, &inst.mdp, &inst.policy, cfg.n_reward_samples, cfg.reward_scale, reward_seed)?;
            for (f, target) in FitTarget::ALL.iter().enumerate() {
                mse[f][c] = rep.mse(*target);
            }
        }
        Ok((mse, trained.unconverged))
    });
    let used: Vec<_> = results.iter().flatten().collect();
    let n_skipped = cfg.n_mdps - used.len();
    check_skips(n_skipped, cfg.n_mdps)?;

    let mut table = ValueMseTable {
        mean: [[0.0; 3]; 3],
        stderr: [[0.0; 3]; 3],
        pr_best: [[0.0; 3]; 3],
        n_used: used.len(),
        n_skipped,
        n_unconverged: used.iter().map(|(_, u)| *u).sum(),
    };
    for f in 0..3 {
        for c in 0..3 {
            let vals: Vec<f64> = used.iter().map(|(m, _)| m[f][c]).collect();
            (table.mean[f][c], table.stderr[f][c]) = scaled_mean_stderr(&vals);
        }
        for (m, _) in &used {
            let best = argmin_set(&m[f]);
            if best.len() == 1 {
                table.pr_best[f][best[0]] += 1.0;
            }
        }
        if !used.is_empty() {
            for c in 0..3 {
                table.pr_best[f][c] /= used.len() as f64;
            }
        }
    }

    let mut out = Table::new("value_mse", &["fit", "representation", "mean_mse", "stderr95", "pr_best"]);
    for (f, target) in FitTarget::ALL.iter().enumerate() {
        for col in ObjectiveKind::ALL {
            let c = col.index();
            out.push(vec![
                json!(target.as_str()),
                json!(col.as_str()),
                json!(table.mean[f][c]),
                json!(table.stderr[f][c]),
                json!(table.pr_best[f][c]),
            ]);
        }
    }
    let manifest = Manifest::new("value-mse", cfg, cfg.n_mdps, n_skipped, table.n_unconverged);
    Ok((table, vec![out], manifest))
}
