//! Seeded batches of MDPs run through the flows and objectives, written out
//! as CSV or JSON tables with a manifest.

mod config;
mod cross;
mod eigen_demo;
mod output;
mod robustness;
mod trace_ratio;
mod value_mse;

pub use config::{ExperimentConfig, Format, IntegratorSettings};
pub use cross::{run_cross_objective_table, CrossTable};
pub use eigen_demo::{run_eigen_picking_demo, EigenDemo};
pub use output::{write_outputs, Manifest, Table};
pub use robustness::{run_robustness_table, RobustnessRow, RobustnessTable};
pub use trace_ratio::{run_trace_ratio_curves, trace_ratio_curves, RatioCurves, TraceRatioCurves};
pub use value_mse::{run_value_mse_table, ValueMseTable};

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::dynamics::{integrate_weighted, uniform_states, ActionWeighting, IntegratorConfig};
use crate::mdp::{Mdp, Policy};
use crate::{Error, ObjectiveKind, Result};

/// Answers within this absolute distance count as tied.
pub const TIE_TOL: f64 = 1e-9;
/// Multiplier applied to sample standard errors in reported tables.
pub const STDERR_SCALE: f64 = 1.96;

pub mod stream {
    pub const MDP: u64 = 1;
    pub const INIT: u64 = 2;
    pub const REWARD: u64 = 3;
    pub const POLICY: u64 = 4;
    pub const NOISE: u64 = 5;
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Seed for one random stream of one batch instance. Depends only on the
/// arguments, so results do not depend on scheduling.
pub fn instance_seed(master: u64, index: usize, stream: u64) -> u64 {
    splitmix64(splitmix64(master ^ splitmix64(index as u64)) ^ splitmix64(stream.wrapping_mul(0x1000_0000_01b3)))
}

/// The three limits of one instance, in [`ObjectiveKind::ALL`] order.
#[derive(Debug, Clone)]
pub(crate) struct Trained {
    pub phis: Vec<DMatrix<f64>>,
    pub unconverged: usize,
}

pub(crate) fn train_all(
    mdp: &Mdp,
    policy: &Policy,
    phi0: &DMatrix<f64>,
    weighting: ActionWeighting,
    cfg: &IntegratorConfig,
) -> Result<Trained> {
    let d = uniform_states(mdp.n_states());
    let mut phis = Vec::with_capacity(3);
    let mut unconverged = 0;
    for kind in ObjectiveKind::ALL {
        let traj = integrate_weighted(phi0, kind, mdp, policy, &d, weighting, cfg)?;
        if !traj.converged {
            unconverged += 1;
        }
        phis.push(crate::linalg::thin_orthonormal(&traj.phi)?);
    }
    Ok(Trained { phis, unconverged })
}

/// Runs `f` on every index in parallel and returns the results in index
/// order, with failures replaced by `None`.
pub(crate) fn run_batch<T: Send>(n: usize, label: &str, f: impl Fn(usize) -> Result<T> + Sync) -> Vec<Option<T>> {
    (0..n)
        .into_par_iter()
        .map(|i| match f(i) {
            Ok(v) => Some(v),
            Err(e) => {
                log::warn!("{label}: instance {i} skipped: {e}");
                None
            }
        })
        .collect()
}

pub(crate) fn check_skips(skipped: usize, total: usize) -> Result<()> {
    if skipped * 10 > total {
        return Err(Error::TooManySkips { skipped, total });
    }
    Ok(())
}

/// Indices within [`TIE_TOL`] of the minimum.
pub(crate) fn argmin_set(values: &[f64]) -> Vec<usize> {
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    (0..values.len()).filter(|&i| values[i] - min <= TIE_TOL).collect()
}

pub(crate) fn scaled_mean_stderr(values: &[f64]) -> (f64, f64) {
    let (m, s) = crate::linalg::mean_stderr(values);
    (m, STDERR_SCALE * s)
}
