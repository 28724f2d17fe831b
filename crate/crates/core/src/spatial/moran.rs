use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::WeightMatrix;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct MoranResult {
    pub statistic: f64,
    /// Two-sided permutation p-value, `(b + 1) / (n_perm + 1)`.
    pub p_perm: Option<f64>,
    pub n_perm: usize,
    /// `-1 / (n - 1)`, the exact mean over all permutations.
    pub expected: f64,
    pub null_mean: Option<f64>,
    pub null_sd: Option<f64>,
}

struct Sparse {
    rows: Vec<Vec<(usize, f64)>>,
    s0: f64,
}

impl Sparse {
    fn new(w: &WeightMatrix) -> Self {
        Sparse { rows: (0..w.n()).map(|i| w.neighbors(i).collect()).collect(), s0: w.total() }
    }

    /// I for already-centered values with sum of squares `ss`.
    fn statistic(&self, z: &[f64], ss: f64) -> f64 {
        let cross: f64 =
            self.rows.iter().zip(z).map(|(row, zi)| zi * row.iter().map(|&(j, w)| w * z[j]).sum::<f64>()).sum();
        (z.len() as f64 / self.s0) * cross / ss
    }
}

/// Global Moran's I of `values` (one per region, in W's order), with a
/// two-sided permutation test when `n_perm > 0`.
///
/// Permutation `k` shuffles with its own stream `rng::stream(seed, k)`, so the
/// result is identical for any thread count.
pub fn morans_i(values: &[f64], w: &WeightMatrix, n_perm: usize, seed: u64) -> Result<MoranResult> {
    let n = values.len();
    if n != w.n() {
        return Err(Error::Input(format!("{n} values for a {}-region weight matrix", w.n())));
    }
    if n < 3 {
        return Err(Error::precondition("Moran's I needs at least 3 regions"));
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let z: Vec<f64> = values.iter().map(|v| v - mean).collect();
    let ss: f64 = z.iter().map(|v| v * v).sum();
    if !(ss > 0.0) {
        return Err(Error::Degenerate("values are constant across regions; Moran's I undefined".into()));
    }
    let sparse = Sparse::new(w);
    if sparse.s0 <= 0.0 {
        return Err(Error::precondition("weight matrix has no links"));
    }
    let statistic = sparse.statistic(&z, ss);
    let expected = -1.0 / (n as f64 - 1.0);

    if n_perm == 0 {
        return Ok(MoranResult { statistic, p_perm: None, n_perm, expected, null_mean: None, null_sd: None });
    }

    let null: Vec<f64> = (0..n_perm)
        .into_par_iter()
        .map(|k| {
            let mut zp = z.clone();
            zp.shuffle(&mut rng::stream(seed, k as u64));
            sparse.statistic(&zp, ss)
        })
        .collect();
    let observed_dev = (statistic - expected).abs();
    // Relative slack so permutations reproducing the observed arrangement count.
    let tol = 1e-12 * observed_dev.max(1.0);
    let extreme = null.iter().filter(|&&i| (i - expected).abs() >= observed_dev - tol).count();
    let null_mean = null.iter().sum::<f64>() / n_perm as f64;
    let null_sd = if n_perm > 1 {
        let ss: f64 = null.iter().map(|i| (i - null_mean).powi(2)).sum();
        Some((ss / (n_perm as f64 - 1.0)).sqrt())
    } else {
        None
    };
    Ok(MoranResult {
        statistic,
        p_perm: Some((extreme as f64 + 1.0) / (n_perm as f64 + 1.0)),
        n_perm,
        expected,
        null_mean: Some(null_mean),
        null_sd,
    })
}
