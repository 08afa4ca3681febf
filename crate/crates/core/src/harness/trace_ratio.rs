use nalgebra::DMatrix;
use serde::Serialize;
use serde_json::json;

use super::{check_skips, instance_seed, run_batch, stream, ExperimentConfig, Manifest, Table};
use crate::dynamics::{integrate, orthogonal_init, uniform_states};
use crate::linalg::{median, symmetric_part};
use crate::mdp::{gen_random_mdp, induced_transition, make_uniform_policy, Mdp, Policy};
use crate::objectives::trace_objective;
use crate::spectral::sym_eigendecomposition;
use crate::{Error, ObjectiveKind, Result};

/// Ratio curves for one objective: `f(Φ_t) / f(reference)` sampled on a
/// shared iteration grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RatioCurves {
    pub kind: ObjectiveKind,
    pub iterations: Vec<usize>,
    /// One curve per kept run. Runs that stop early hold their last value.
    pub curves: Vec<Vec<f64>>,
    pub median: Vec<f64>,
    /// Runs dropped because the reference value was not positive.
    pub excluded: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRatioCurves {
    pub pi: RatioCurves,
    pub ac: RatioCurves,
    pub n_skipped: usize,
}

/// Top-`k` eigenvectors of the reference matrix for `kind`, ranked by squared
/// eigenvalue. The symmetric part stands in for non-symmetric dynamics.
fn reference_subspace(mdp: &Mdp, policy: &Policy, kind: ObjectiveKind, k: usize) -> Result<DMatrix<f64>> {
    let n = mdp.n_states();
    let target = match kind {
        ObjectiveKind::Pi => {
            let s = symmetric_part(&induced_transition(mdp, policy)?);
            &s * &s
        }
        ObjectiveKind::Ac => {
            let m = mdp.n_actions() as f64;
            mdp.transitions().iter().fold(DMatrix::zeros(n, n), |acc, t| {
                let s = symmetric_part(t);
                acc + &s * &s / m
            })
        }
        ObjectiveKind::Var => return Err(Error::invalid("no trace-ratio reference for the variance objective")),
    };
    let (q, _) = sym_eigendecomposition(&symmetric_part(&target))?;
    Ok(q.columns(0, k).into_owned())
}

/// Trace-ratio curves for the `Pi` and `Ac` flows over a batch of MDPs.
pub fn trace_ratio_curves(cfg: &ExperimentConfig, symmetric: bool) -> Result<(TraceRatioCurves, Vec<Table>, Manifest)> {
    cfg.validate()?;
    let integ = cfg.integrator_config();
    let grid: Vec<usize> = (0..=integ.max_iters).step_by(cfg.curve_stride).collect();
    let kinds = [ObjectiveKind::Pi, ObjectiveKind::Ac];
    let results = run_batch(cfg.n_mdps, "trace-ratio", |i| {
        let mdp = gen_random_mdp(cfg.n_states, cfg.n_actions, instance_seed(cfg.seed, i, stream::MDP), symmetric, cfg.reward_scale)?
            .with_gamma(cfg.gamma)?;
        let policy = make_uniform_policy(cfg.n_states, cfg.n_actions)?;
        let phi0 = orthogonal_init(cfg.n_states, cfg.k, instance_seed(cfg.seed, i, stream::INIT))?.into_matrix();
        let d = uniform_states(cfg.n_states);
        let mut out: Vec<Option<Vec<f64>>> = Vec::new();
        for kind in kinds {
            let reference = trace_objective(&reference_subspace(&mdp, &policy, kind, cfg.k)?, &mdp, &policy, kind)?;
            if !(reference > 0.0) {
                out.push(None);
                continue;
            }
            let traj = integrate(&phi0, kind, &mdp, &policy, &d, &integ)?;
            let series = traj.trace_series();
            let curve = grid.iter().map(|&t| series[t.min(series.len() - 1)] / reference).collect();
            out.push(Some(curve));
        }
        Ok(out)
    });
    let used: Vec<_> = results.iter().flatten().collect();
    let n_skipped = cfg.n_mdps - used.len();
    check_skips(n_skipped, cfg.n_mdps)?;

    let build = |slot: usize| {
        let curves: Vec<Vec<f64>> = used.iter().filter_map(|r| r[slot].clone()).collect();
        let excluded = used.len() - curves.len();
        let median_curve = (0..grid.len())
            .map(|t| median(&curves.iter().map(|c| c[t]).collect::<Vec<_>>()))
            .collect();
        RatioCurves { kind: kinds[slot], iterations: grid.clone(), curves, median: median_curve, excluded }
    };
    let result = TraceRatioCurves { pi: build(0), ac: build(1), n_skipped };

    let mut runs = Table::new("trace_ratio_curves", &["objective", "run", "iteration", "ratio"]);
    let mut med = Table::new("trace_ratio_median", &["objective", "iteration", "median_ratio"]);
    for rc in [&result.pi, &result.ac] {
        for (r, curve) in rc.curves.iter().enumerate() {
            for (t, v) in rc.iterations.iter().zip(curve) {
                runs.push(vec![json!(rc.kind.as_str()), json!(r), json!(t), json!(v)]);
            }
        }
        for (t, v) in rc.iterations.iter().zip(&rc.median) {
            med.push(vec![json!(rc.kind.as_str()), json!(t), json!(v)]);
        }
    }
    let manifest = Manifest::new("trace-ratio", cfg, cfg.n_mdps, n_skipped, 0);
    Ok((result, vec![runs, med], manifest))
}

/// Trace-ratio curves on non-symmetric MDPs.
pub fn run_trace_ratio_curves(cfg: &ExperimentConfig) -> Result<(TraceRatioCurves, Vec<Table>, Manifest)> {
    trace_ratio_curves(cfg, false)
}
