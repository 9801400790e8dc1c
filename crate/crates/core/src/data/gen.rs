//! Schema-matched synthetic surrogate generators.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{ColumnKind, Dataset};
use crate::error::{Error, Result};
use crate::nn::Matrix;

/// Per-bit probability of flipping a class prototype bit. Chosen so a linear
/// probe is strong but imperfect.
pub const PURCHASE_FLIP_PROB: f64 = 0.1;

/// Binary features from class-conditional Bernoulli prototypes: one random
/// prototype in `{0,1}^d` per class, each record copies its class prototype
/// with independent per-bit flips.
pub fn gen_purchase_like(n: usize, d: usize, classes: usize, seed: u64) -> Result<Dataset> {
    if n < classes {
        return Err(Error::domain(format!(
            "n={n} records cannot cover {classes} classes"
        )));
    }
    if d < 2 || classes < 2 {
        return Err(Error::domain("need d >= 2 and classes >= 2"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let prototypes: Vec<Vec<f64>> = (0..classes)
        .map(|_| (0..d).map(|_| f64::from(rng.gen_bool(0.5))).collect())
        .collect();
    let mut labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
    labels.shuffle(&mut rng);
    let mut data = Vec::with_capacity(n * d);
    for &label in &labels {
        for &bit in &prototypes[label] {
            let flip = rng.gen_bool(PURCHASE_FLIP_PROB);
            data.push(if flip { 1.0 - bit } else { bit });
        }
    }
    let ds = Dataset {
        features: Matrix::from_vec(n, d, data)?,
        labels,
        classes,
        schema: vec![ColumnKind::Binary; d],
        record_ids: (0..n as u64).collect(),
    };
    ds.validate()?;
    Ok(ds)
}

/// Numeric features from two Gaussian class clusters at the requested
/// positive prevalence, standardized per column to zero mean and unit
/// variance.
pub fn gen_credit_like(n: usize, d: usize, positive_rate: f64, seed: u64) -> Result<Dataset> {
    if !(0.0 < positive_rate && positive_rate < 0.5) {
        return Err(Error::domain(format!(
            "positive_rate {positive_rate} outside (0, 0.5)"
        )));
    }
    let positives = (n as f64 * positive_rate).floor() as usize;
    if positives < 1 {
        return Err(Error::domain(format!(
            "n={n} at positive_rate {positive_rate} yields no positive records"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Positive cluster mean: +/-1.2 per coordinate.
    let shift: Vec<f64> = (0..d)
        .map(|_| if rng.gen_bool(0.5) { 1.2 } else { -1.2 })
        .collect();
    let mut labels = vec![0usize; n];
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    for &i in order.iter().take(positives) {
        labels[i] = 1;
    }
    let mut features = Matrix::zeros(n, d);
    for r in 0..n {
        for c in 0..d {
            let mean = if labels[r] == 1 { shift[c] } else { 0.0 };
            features.set(r, c, mean + gaussian(&mut rng));
        }
    }
    standardize_columns(&mut features);
    let ds = Dataset {
        features,
        labels,
        classes: 2,
        schema: vec![ColumnKind::Numeric; d],
        record_ids: (0..n as u64).collect(),
    };
    ds.validate()?;
    Ok(ds)
}

/// Integer-coded categorical attributes with a binary label correlated with
/// a hidden linear score of the (rescaled) codes.
pub fn gen_adult_like(n: usize, attr_cardinalities: &[usize], seed: u64) -> Result<Dataset> {
    if attr_cardinalities.is_empty() {
        return Err(Error::domain("need at least one attribute"));
    }
    if let Some(&bad) = attr_cardinalities.iter().find(|&&k| k < 2) {
        return Err(Error::domain(format!("cardinality {bad} below 2")));
    }
    let d = attr_cardinalities.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights: Vec<f64> = (0..d).map(|_| gaussian(&mut rng)).collect();
    let mut features = Matrix::zeros(n, d);
    let mut labels = Vec::with_capacity(n);
    for r in 0..n {
        let mut score = 0.0;
        for (c, &k) in attr_cardinalities.iter().enumerate() {
            let code = rng.gen_range(0..k);
            features.set(r, c, code as f64);
            score += weights[c] * (code as f64 / (k as f64 - 1.0) - 0.5);
        }
        labels.push(usize::from(score + 0.3 * gaussian(&mut rng) > 0.0));
    }
    let ds = Dataset {
        features,
        labels,
        classes: 2,
        schema: attr_cardinalities
            .iter()
            .map(|&k| ColumnKind::Categorical(k))
            .collect(),
        record_ids: (0..n as u64).collect(),
    };
    ds.validate()?;
    Ok(ds)
}

/// Box-Muller standard normal draw.
fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

fn standardize_columns(m: &mut Matrix) {
    let (rows, cols) = (m.rows(), m.cols());
    for c in 0..cols {
        let mut mean = 0.0;
        for r in 0..rows {
            mean += m.get(r, c);
        }
        mean /= rows as f64;
        let mut var = 0.0;
        for r in 0..rows {
            var += (m.get(r, c) - mean).powi(2);
        }
        var /= rows as f64;
        let inv_std = 1.0 / var.sqrt().max(1e-12);
        for r in 0..rows {
            m.set(r, c, (m.get(r, c) - mean) * inv_std);
        }
    }
}
