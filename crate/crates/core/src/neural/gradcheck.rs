use std::collections::BTreeSet;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::encoder::Inputs;
use super::model::TransformerModel;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Denominator floor for the relative error, so coordinates with a true
/// gradient of zero compare on absolute error instead.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckOptions {
    /// Lower bound on the number of coordinates checked across all groups.
    pub min_coordinates: usize,
    /// Restrict to groups whose names start with one of these prefixes.
    pub groups: Option<Vec<String>>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions { min_coordinates: 200, groups: None, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoordinateCheck {
    pub group: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub groups_checked: usize,
    pub checks: Vec<CoordinateCheck>,
}

impl GradCheckReport {
    pub fn worst(&self) -> Option<&CoordinateCheck> {
        self.checks.iter().max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Central-difference check of the classification gradient over a sample
/// of at least 200 coordinates covering every parameter group.
pub fn grad_check<T: Scalar>(model: &TransformerModel<T>, inputs: &Inputs<T>, labels: &[usize], epsilon: f64) -> Result<f64> {
    Ok(grad_check_with(model, inputs, labels, epsilon, &GradCheckOptions::default())?.max_rel_error)
}

pub fn grad_check_with<T: Scalar>(
    model: &TransformerModel<T>,
    inputs: &Inputs<T>,
    labels: &[usize],
    epsilon: f64,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::Config("epsilon must be positive".into()));
    }
    let (_, analytic) = model.classification_loss_and_grad(inputs, labels)?;
    let groups: Vec<_> = model
        .layout
        .groups
        .iter()
        .filter(|g| opts.groups.as_ref().is_none_or(|names| names.iter().any(|n| g.name.starts_with(n.as_str()))))
        .collect();
    if groups.is_empty() {
        return Err(Error::Config("no parameter group selected".into()));
    }
    // Embedding rows of tokens absent from the batch have zero gradient on
    // both sides; sample rows that are actually used.
    let h = model.config.hidden;
    let used_rows: Option<Vec<usize>> = match inputs {
        Inputs::Tokens(seqs) => {
            let ids: BTreeSet<usize> = seqs.iter().flat_map(|s| s.ids.iter().map(|&i| i as usize)).collect();
            Some(ids.into_iter().collect())
        }
        Inputs::Dense { .. } => None,
    };

    let pools: Vec<Vec<usize>> = groups
        .iter()
        .map(|g| match (&used_rows, g.name.as_str()) {
            (Some(rows), "embed") => rows.iter().flat_map(|&r| r * h..(r + 1) * h).collect(),
            _ => (0..g.len).collect(),
        })
        .collect();
    // Spread the quota evenly; small groups hand their unused share on.
    let mut order: Vec<usize> = (0..groups.len()).collect();
    order.sort_by_key(|&i| pools[i].len());
    let mut quota = vec![0; groups.len()];
    let mut remaining = opts.min_coordinates;
    for (done, &i) in order.iter().enumerate() {
        let share = remaining.div_ceil(groups.len() - done).max(1);
        quota[i] = share.min(pools[i].len());
        remaining = remaining.saturating_sub(quota[i]);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut probe = model.clone();
    let eps = T::lit(epsilon);
    let mut checks = Vec::new();
    for ((g, pool), &k) in groups.iter().zip(&pools).zip(&quota) {
        for pick in sample(&mut rng, pool.len(), k) {
            let index = pool[pick];
            let at = g.offset + index;
            let orig = probe.params[at];
            probe.params[at] = orig + eps;
            let (up, _) = probe.classification_loss_and_grad(inputs, labels)?;
            probe.params[at] = orig - eps;
            let (down, _) = probe.classification_loss_and_grad(inputs, labels)?;
            probe.params[at] = orig;
            let numeric = (up - down).to_f64_lossy() / (2.0 * epsilon);
            let a = analytic[at].to_f64_lossy();
            checks.push(CoordinateCheck { group: g.name.clone(), index, analytic: a, numeric, rel_error: relative_error(a, numeric) });
        }
    }
    let max_rel_error = checks.iter().map(|c| c.rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport { max_rel_error, groups_checked: groups.len(), checks })
}
