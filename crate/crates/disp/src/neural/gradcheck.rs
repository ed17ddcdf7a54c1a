//! Central-finite-difference verification of analytic gradients over a
//! random subsample of parameter coordinates.

use rand::seq::SliceRandom as _;

use super::{HasTensors, Scalar};
use crate::seeding;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// Coordinate where the maximum occurred, as "tensor[i,j]".
    pub worst_coordinate: String,
    pub coords_checked: usize,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.tolerance
    }
}

/// Compare `grad_fn`'s analytic gradients against (f(x+h) − f(x−h)) / 2h on
/// up to `num_coords` uniformly sampled parameter coordinates. Relative
/// error uses max(|analytic|, |numeric|, 1e-4) as the denominator, so
/// coordinates below 1e-4 are judged absolutely at tolerance·1e-4 — keeps
/// finite-difference rounding noise from dominating near-zero gradients.
pub fn grad_check<M, L, G>(
    model: &mut M,
    loss_fn: L,
    grad_fn: G,
    num_coords: usize,
    h: f64,
    tolerance: f64,
    seed: u64,
) -> GradCheckReport
where
    M: HasTensors<f64>,
    L: Fn(&M) -> f64,
    G: Fn(&M) -> M,
{
    let grads = grad_fn(model);
    let shapes: Vec<(String, usize, usize)> = model
        .tensors()
        .into_iter()
        .map(|(name, t)| (name, t.nrows(), t.ncols()))
        .collect();
    let mut coords: Vec<(usize, usize, usize)> = Vec::new();
    for (t, (_, rows, cols)) in shapes.iter().enumerate() {
        for i in 0..*rows {
            for j in 0..*cols {
                coords.push((t, i, j));
            }
        }
    }
    let mut rng = seeding::rng(seeding::derive_str(seed, "grad-check"));
    coords.shuffle(&mut rng);
    coords.truncate(num_coords.min(coords.len()));

    let mut max_rel_err = 0.0f64;
    let mut worst = String::from("-");
    for &(t, i, j) in &coords {
        let original = model.tensors()[t].1[[i, j]];

        set_coord(model, t, i, j, original + h);
        let plus = loss_fn(model);
        set_coord(model, t, i, j, original - h);
        let minus = loss_fn(model);
        set_coord(model, t, i, j, original);

        let numeric = (plus - minus) / (2.0 * h);
        let analytic = grads.tensors()[t].1[[i, j]];
        let denom = analytic.abs().max(numeric.abs()).max(1e-4);
        let rel = (analytic - numeric).abs() / denom;
        if rel > max_rel_err {
            max_rel_err = rel;
            worst = format!("{}[{i},{j}]", shapes[t].0);
        }
    }

    GradCheckReport {
        max_rel_err,
        worst_coordinate: worst,
        coords_checked: coords.len(),
        tolerance,
    }
}

fn set_coord<M: HasTensors<f64>>(model: &mut M, t: usize, i: usize, j: usize, value: f64) {
    let mut tensors = model.tensors_mut();
    tensors[t].1[[i, j]] = value;
}

/// Scalar trait keeps f32 in the same code path; re-exported here so tests
/// can assert the two instantiations stay in sync.
pub(crate) fn _assert_scalar_paths<T: Scalar>() {}
