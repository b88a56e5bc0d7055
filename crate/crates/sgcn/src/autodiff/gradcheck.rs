//! Central-difference verification of backward passes.
//!
//! Works on `f64` stores only: float32 finite differences drown in rounding
//! noise long before they can certify a gradient.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::store::ParamStore;
use crate::autodiff::TapeError;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_coord: usize,
    pub coords_checked: usize,
}

/// Compares analytic gradients already accumulated in `store` against central
/// differences of `forward`, coordinate by coordinate.
///
/// `forward` must rebuild the full computation from the store's current
/// values and return the scalar loss; it runs twice per checked coordinate.
/// Tensors larger than `max_coords_per_tensor` are subsampled with a seeded
/// RNG so repeated runs check the same coordinates. Relative error uses
/// `|a - n| / max(1, |a|, |n|)`, which stays meaningful when the true
/// gradient is near zero.
pub fn finite_difference_check<F>(
    store: &mut ParamStore<f64>,
    eps: f64,
    max_coords_per_tensor: usize,
    seed: u64,
    mut forward: F,
) -> Result<GradCheckReport, TapeError>
where
    F: FnMut(&ParamStore<f64>) -> Result<f64, TapeError>,
{
    // Below 1e-7 cancellation noise dominates; above 1e-4 truncation does.
    if !(1e-7..=1e-4).contains(&eps) {
        return Err(TapeError::BadEpsilon(eps));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_coord: 0,
        coords_checked: 0,
    };
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let numel = store.get(id).numel();
        let coords: Vec<usize> = if numel <= max_coords_per_tensor {
            (0..numel).collect()
        } else {
            let mut picked: Vec<usize> =
                rand::seq::index::sample(&mut rng, numel, max_coords_per_tensor).into_vec();
            picked.sort_unstable();
            picked
        };
        for c in coords {
            let analytic = store.get(id).grad().map_or(0.0, |g| g[c]);
            let orig = store.get(id).values()[c];

            store.get_mut(id).values_mut()[c] = orig + eps;
            let up = forward(store)?;
            store.get_mut(id).values_mut()[c] = orig - eps;
            let down = forward(store)?;
            store.get_mut(id).values_mut()[c] = orig;

            let numeric = (up - down) / (2.0 * eps);
            let rel = (analytic - numeric).abs() / 1.0_f64.max(analytic.abs()).max(numeric.abs());
            report.coords_checked += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst_param = store.name(id).to_string();
                report.worst_coord = c;
            }
        }
    }
    Ok(report)
}
