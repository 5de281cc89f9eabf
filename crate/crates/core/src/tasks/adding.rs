//! The adding problem: a sequence of `(value, marker)` pairs where exactly
//! two markers are set, and the target is the sum of the two marked values.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct AddingExample {
    pub values: Vec<f64>,
    pub markers: Vec<bool>,
    pub target: f64,
}

impl AddingExample {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Positions of the two markers, in order.
    pub fn marked(&self) -> (usize, usize) {
        let mut it = self
            .markers
            .iter()
            .enumerate()
            .filter(|(_, &m)| m)
            .map(|(i, _)| i);
        (it.next().unwrap(), it.next().unwrap())
    }

    /// `[T×2]` input rows `(n_t, i_t)`.
    pub fn inputs(&self) -> Tensor {
        let data = self
            .values
            .iter()
            .zip(&self.markers)
            .flat_map(|(&v, &m)| [v, if m { 1.0 } else { 0.0 }])
            .collect();
        Tensor::new(&[self.len(), 2], data).unwrap()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MarkerPlacement {
    /// Two distinct positions anywhere in the sequence.
    #[default]
    Anywhere,
    /// One marker in the first half, one in the second.
    SplitHalves,
}

pub fn gen_adding(rng: &mut Rng, len: usize, count: usize) -> Result<Vec<AddingExample>> {
    gen_adding_with(rng, len, count, MarkerPlacement::Anywhere)
}

pub fn gen_adding_with(
    rng: &mut Rng,
    len: usize,
    count: usize,
    placement: MarkerPlacement,
) -> Result<Vec<AddingExample>> {
    if len < 2 {
        return Err(Error::param(format!(
            "adding task needs sequence length >= 2, got {len}"
        )));
    }
    let t = len as u64;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let values: Vec<f64> = (0..len).map(|_| rng.uniform()).collect();
        let (a, b) = match placement {
            MarkerPlacement::Anywhere => {
                let a = rng.below(t) as usize;
                let mut b = rng.below(t - 1) as usize;
                if b >= a {
                    b += 1;
                }
                (a, b)
            }
            MarkerPlacement::SplitHalves => {
                let half = t / 2;
                let a = rng.below(half) as usize;
                let b = (half + rng.below(t - half)) as usize;
                (a, b)
            }
        };
        let mut markers = vec![false; len];
        markers[a] = true;
        markers[b] = true;
        let target = values[a] + values[b];
        out.push(AddingExample {
            values,
            markers,
            target,
        });
    }
    Ok(out)
}

/// Reference mean-squared errors for trivial predictors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AddingBaselines {
    /// Knows one marked value and guesses the other's mean:
    /// `Var(U[0,1]) = 1/12`.
    pub short_sighted: f64,
    /// Best constant prediction (1.0): `Var(U + U) = 1/6`.
    pub constant_predictor: f64,
}

pub fn adding_baselines() -> AddingBaselines {
    AddingBaselines {
        short_sighted: 1.0 / 12.0,
        constant_predictor: 1.0 / 6.0,
    }
}

/// Empirical MSE of the two reference predictors over `count` fresh
/// examples: "first marked value + 0.5" and the constant 1.0.
pub fn monte_carlo_baselines(rng: &mut Rng, len: usize, count: usize) -> Result<AddingBaselines> {
    if count == 0 {
        return Err(Error::param("monte carlo needs at least one example"));
    }
    let (mut short, mut constant) = (0.0, 0.0);
    for ex in gen_adding(rng, len, count)? {
        let (a, _) = ex.marked();
        short += mse_loss(ex.values[a] + 0.5, ex.target).0;
        constant += mse_loss(1.0, ex.target).0;
    }
    Ok(AddingBaselines {
        short_sighted: short / count as f64,
        constant_predictor: constant / count as f64,
    })
}

/// Squared error and its derivative with respect to `pred`.
pub fn mse_loss(pred: f64, target: f64) -> (f64, f64) {
    let d = pred - target;
    (d * d, 2.0 * d)
}
