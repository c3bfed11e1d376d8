use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::grad::grad;
use super::loss::batch_loss;
use crate::error::{Error, Result};
use crate::model::AdaptedModel;
use crate::rng::{seeded, Stream};
use crate::tokenizer::TokenSequence;

/// Denominator floor for the relative error, so coordinates whose true
/// gradient vanishes are judged on absolute error instead.
const REL_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordCheck {
    pub param: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub h: f64,
    pub max_rel_error: f64,
    pub coords: Vec<CoordCheck>,
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

/// Overwrite every adapter entry with `N(0, std²)` draws. Freshly attached
/// adapters have `B = 0`, which zeroes every `A` gradient; checks want both
/// factors non-zero.
pub fn randomize_adapters(model: &mut AdaptedModel, std: f64, seed: u64) -> Result<()> {
    let dist = Normal::new(0.0, std).map_err(|e| Error::Precondition(format!("bad std {std}: {e}")))?;
    let mut rng = seeded(seed, Stream::GradCheck);
    for p in model.params_mut() {
        p.mapv_inplace(|_| dist.sample(&mut rng));
    }
    Ok(())
}

/// Compare analytic gradients to central differences on `n_coords` adapter
/// coordinates chosen uniformly at random with `seed`.
pub fn grad_check(
    model: &AdaptedModel,
    batch: &[TokenSequence],
    h: f64,
    n_coords: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    let sizes: Vec<usize> = model.params().iter().map(|p| p.len()).collect();
    let total: usize = sizes.iter().sum();
    if total == 0 {
        return Err(Error::Precondition("model has no trainable parameters".into()));
    }
    let mut rng = seeded(seed, Stream::GradCheck);
    let coords: Vec<(usize, usize)> = (0..n_coords)
        .map(|_| {
            let mut flat = rng.random_range(0..total);
            let mut param = 0;
            while flat >= sizes[param] {
                flat -= sizes[param];
                param += 1;
            }
            (param, flat)
        })
        .collect();
    grad_check_coords(model, batch, h, &coords)
}

/// Central-difference check on explicit `(param, flat index)` coordinates.
pub fn grad_check_coords(
    model: &AdaptedModel,
    batch: &[TokenSequence],
    h: f64,
    coords: &[(usize, usize)],
) -> Result<GradCheckReport> {
    if !(h.is_finite() && h > 0.0) {
        return Err(Error::Precondition(format!("step h must be positive, got {h}")));
    }
    let analytic = grad(model, batch)?.grads;
    let mut probe = model.clone();
    let mut checks = Vec::with_capacity(coords.len());
    for &(param, index) in coords {
        let a = *analytic
            .get(param)
            .and_then(|g| g.as_slice().and_then(|s| s.get(index)))
            .ok_or_else(|| Error::Precondition(format!("no coordinate ({param}, {index})")))?;
        let original = model.params()[param].as_slice().unwrap()[index];
        let mut eval_at = |v: f64| -> Result<f64> {
            probe.params_mut()[param].as_slice_mut().unwrap()[index] = v;
            batch_loss(&probe, batch)
        };
        let plus = eval_at(original + h)?;
        let minus = eval_at(original - h)?;
        probe.params_mut()[param].as_slice_mut().unwrap()[index] = original;
        let numeric = (plus - minus) / (2.0 * h);
        checks.push(CoordCheck { param, index, analytic: a, numeric, rel_error: relative_error(a, numeric) });
    }
    let max_rel_error = checks.iter().map(|c| c.rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport { h, max_rel_error, coords: checks })
}
