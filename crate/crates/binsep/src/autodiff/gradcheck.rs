//! Finite-difference validation of the reverse pass.
//!
//! The checker rebuilds the graph through a user closure, so it exercises
//! the same construction path the model uses. Anything whose gradient
//! should be checked must live in the [`ParamStore`]; tests wrap plain
//! inputs as parameters to cover input adjoints too.

use super::graph::{Graph, NodeId};
use super::params::{ParamId, ParamStore};
use crate::error::{Error, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Which parameters to perturb.
#[derive(Debug, Clone)]
pub enum GradCheckTarget {
    AllParams,
    Params(Vec<String>),
}

#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub epsilon: f64,
    /// Entry budget; above this the checked set is a random subsample.
    pub max_entries: usize,
    /// Seed for the subsample draw, so reruns check the same entries.
    pub seed: u64,
    /// Gradient magnitudes below this are compared by absolute error
    /// instead of relative error. Central differences of a loss of
    /// magnitude f resolve derivatives only to about ulp(f)/epsilon, so
    /// relative comparison of gradients near that floor measures rounding
    /// noise, not correctness. Deep compositions should raise this.
    pub zero_scale: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            epsilon: 1e-5,
            max_entries: 10_000,
            seed: 0,
            zero_scale: 1e-10,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub mean_rel_err: f64,
    pub checked_entries: usize,
    pub total_entries: usize,
    /// Parameter name and flat entry index of the worst disagreement.
    pub worst: Option<(String, usize)>,
}

/// Error of `analytic` against the central difference `numeric`, relative
/// where the magnitudes support it, absolute near zero.
fn entry_err(analytic: f64, numeric: f64, zero_scale: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale < zero_scale {
        (analytic - numeric).abs()
    } else {
        (analytic - numeric).abs() / scale
    }
}

/// Compares the tape's gradients against central finite differences of the
/// scalar loss produced by `build`. `build` must be deterministic in the
/// store contents; it is called twice per checked entry.
pub fn grad_check<F>(
    store: &ParamStore,
    target: &GradCheckTarget,
    config: &GradCheckConfig,
    build: F,
) -> Result<GradCheckReport>
where
    F: Fn(&ParamStore) -> Result<(Graph, NodeId)>,
{
    let (graph, loss) = build(store)?;
    if graph.value(loss).shape() != (1, 1) {
        return Err(Error::shape("grad check: loss must be [1, 1]"));
    }
    if !graph.value(loss).is_finite() {
        return Err(Error::NonFinite("grad check loss".into()));
    }
    let grads = graph.backward(loss, store)?;
    if !grads.is_finite() {
        return Err(Error::NonFinite("grad check analytic gradients".into()));
    }
    drop(graph);

    let selected: Vec<ParamId> = match target {
        GradCheckTarget::AllParams => store.iter().map(|(id, _)| id).collect(),
        GradCheckTarget::Params(names) => names
            .iter()
            .map(|n| {
                store
                    .id(n)
                    .ok_or_else(|| Error::invalid(format!("grad check: no parameter {n:?}")))
            })
            .collect::<Result<_>>()?,
    };
    let mut entries: Vec<(ParamId, usize)> = selected
        .iter()
        .flat_map(|&id| (0..store.get(id).len()).map(move |i| (id, i)))
        .collect();
    let total_entries = entries.len();
    if total_entries == 0 {
        return Err(Error::invalid("grad check: nothing to check"));
    }
    if total_entries > config.max_entries {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        entries.shuffle(&mut rng);
        entries.truncate(config.max_entries);
    }

    let mut work = store.clone();
    let mut max_rel_err = 0.0f64;
    let mut sum_rel_err = 0.0f64;
    let mut worst = None;
    for &(id, idx) in &entries {
        let base = store.get(id).data[idx];
        let step = config.epsilon;
        work.get_mut(id).data[idx] = base + step;
        let (gp, lp) = build(&work)?;
        let f_plus = gp.value(lp).at(0, 0);
        drop(gp);
        work.get_mut(id).data[idx] = base - step;
        let (gm, lm) = build(&work)?;
        let f_minus = gm.value(lm).at(0, 0);
        drop(gm);
        work.get_mut(id).data[idx] = base;
        let numeric = (f_plus - f_minus) / (2.0 * step);
        let analytic = grads.param(id).map_or(0.0, |g| g.data[idx]);
        let err = entry_err(analytic, numeric, config.zero_scale);
        sum_rel_err += err;
        if err > max_rel_err {
            max_rel_err = err;
            worst = Some((store.name(id).to_string(), idx));
        }
    }
    Ok(GradCheckReport {
        max_rel_err,
        mean_rel_err: sum_rel_err / entries.len() as f64,
        checked_entries: entries.len(),
        total_entries,
        worst,
    })
}
