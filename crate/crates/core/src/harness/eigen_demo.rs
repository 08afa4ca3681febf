use serde::Serialize;
use serde_json::json;

use super::{ExperimentConfig, Manifest, Table};
use crate::mdp::{gen_common_eigenbasis_family, Mdp};
use crate::spectral::{joint_eigendecomposition, Criterion, CriterionScores};
use crate::Result;

/// A top-`k` boundary gap at or below this is a tie inside a degenerate
/// eigenspace, where the selected indices are arbitrary.
pub const DEMO_MIN_GAP: f64 = 1e-9;
/// Fixture seeds tried after `cfg.seed` before settling for a tied boundary.
pub const DEMO_SEED_SEARCH: u64 = 1000;

/// Per-eigenvector criterion scores of a common-eigenbasis fixture and the
/// top-`k` set each objective keeps.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EigenDemo {
    pub eigvals: Vec<Vec<f64>>,
    pub scores: CriterionScores,
    /// Top-`k` indices for square-of-mean, mean-of-squares and variance.
    pub selected: [Vec<usize>; 3],
    /// Score gap between the `k`-th and `(k+1)`-th entry, per criterion.
    pub boundary_gaps: [f64; 3],
    /// Largest `|AC − Π − VAR|` over indices.
    pub decomposition_residual: f64,
    pub fixture_seed: u64,
}

/// Circulant families pair up their eigenvalues, so many seeds put a
/// degenerate pair across the top-`k` boundary. The demo uses the first seed
/// from `cfg.seed` on where every criterion's boundary is strict.
pub fn run_eigen_picking_demo(cfg: &ExperimentConfig) -> Result<(EigenDemo, Vec<Table>, Manifest)> {
    cfg.validate()?;
    for seed in cfg.seed..cfg.seed.saturating_add(DEMO_SEED_SEARCH) {
        let mdp = gen_common_eigenbasis_family(cfg.n_states, cfg.n_actions, seed)?;
        let report = joint_eigendecomposition(&mdp)?;
        if Criterion::ALL.iter().all(|c| report.gap(*c, cfg.k) > DEMO_MIN_GAP) {
            return eigen_demo_for(&mdp, seed, cfg);
        }
    }
    log::warn!("no fixture with strict top-{} boundaries near seed {}; ties are broken by index", cfg.k, cfg.seed);
    let mdp = gen_common_eigenbasis_family(cfg.n_states, cfg.n_actions, cfg.seed)?;
    eigen_demo_for(&mdp, cfg.seed, cfg)
}

pub(crate) fn eigen_demo_for(mdp: &Mdp, fixture_seed: u64, cfg: &ExperimentConfig) -> Result<(EigenDemo, Vec<Table>, Manifest)> {
    let report = joint_eigendecomposition(mdp)?;
    let s = &report.scores;
    let residual = (0..report.n())
        .map(|i| (s.mean_of_squares[i] - s.square_of_mean[i] - s.variance[i]).abs())
        .fold(0.0, f64::max);
    let selected = Criterion::ALL.map(|c| report.topk_indices(c, cfg.k));
    let eigvals: Vec<Vec<f64>> = crate::linalg::to_rows(&report.eigvals);
    let boundary_gaps = Criterion::ALL.map(|c| report.gap(c, cfg.k));
    let demo = EigenDemo {
        eigvals,
        scores: s.clone(),
        selected,
        boundary_gaps,
        decomposition_residual: residual,
        fixture_seed,
    };

    let mut header = vec!["index".to_string()];
    header.extend((0..mdp.n_actions()).map(|a| format!("lambda_{a}")));
    for h in ["pi_score", "var_score", "ac_score", "pi_selected", "ac_selected", "var_selected"] {
        header.push(h.to_string());
    }
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut out = Table::new("eigen_demo", &header_refs);
    for i in 0..report.n() {
        let mut row = vec![json!(i)];
        row.extend(report.eigvals.column(i).iter().map(|v| json!(v)));
        row.push(json!(s.square_of_mean[i]));
        row.push(json!(s.variance[i]));
        row.push(json!(s.mean_of_squares[i]));
        for sel in [&demo.selected[0], &demo.selected[1], &demo.selected[2]] {
            row.push(json!(sel.contains(&i)));
        }
        out.push(row);
    }
    let manifest = Manifest::new("eigen-demo", cfg, 1, 0, 0);
    Ok((demo, vec![out], manifest))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn demo_has_strict_boundaries_and_exact_decomposition() {
        let cfg = ExperimentConfig { n_actions: 2, ..ExperimentConfig::default() };
        let (demo, tables, _) = run_eigen_picking_demo(&cfg).unwrap();
        assert!(demo.boundary_gaps.iter().all(|g| *g > DEMO_MIN_GAP));
        assert!(demo.decomposition_residual < 1e-12);
        assert_eq!(tables[0].rows.len(), cfg.n_states);
        for sel in &demo.selected {
            assert_eq!(sel.len(), cfg.k);
        }
        let (again, _, _) = run_eigen_picking_demo(&cfg).unwrap();
        assert_eq!(demo, again);
    }

    #[test]
    fn identical_actions_pick_identically() {
        let base = gen_common_eigenbasis_family(6, 1, 3).unwrap();
        let t = base.transition(0).clone();
        let mdp = Mdp::new(vec![t.clone(), t], base.reward().clone(), 0.9).unwrap();
        let cfg = ExperimentConfig { n_states: 6, n_actions: 2, k: 2, ..ExperimentConfig::default() };
        let (demo, _, _) = eigen_demo_for(&mdp, 3, &cfg).unwrap();
        assert!(demo.scores.variance.iter().all(|v| v.abs() < 1e-15));
        assert_eq!(demo.selected[0], demo.selected[1]);
    }
}
