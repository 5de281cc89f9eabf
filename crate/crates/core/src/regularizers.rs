//! Activation-norm penalties on a recurrent trajectory, each with its exact
//! gradient, plus the weight-noise and dropout baselines.
//!
//! All penalties act on the states `s_0..s_T` (hidden states or LSTM memory
//! cells). With `N_t = ‖s_t‖₂` the norm stabilizer is
//!
//! ```text
//! β/T · Σ_{t=1..T} (N_t − N_{t−1})²
//! ```
//!
//! and the alternatives replace the summand. Divisions by a norm use
//! `max(N_t, NORM_EPS)`.

use std::fmt;
use std::str::FromStr;

use crate::cells::Trajectory;
use crate::error::{Error, Result};
use crate::params::Parameters;
use crate::rng::Rng;
use crate::tensor::{l1_norm, Tensor};

pub const NORM_EPS: f64 = 1e-8;

/// Target norm used by `fixed_target_sq` when none is given.
pub const DEFAULT_FIXED_TARGET: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PenaltyVariant {
    /// `(‖s_t‖₂ − ‖s_{t−1}‖₂)²`
    NormStabilizer,
    /// `‖s_t − s_{t−1}‖₂²`
    StateDiffSq,
    /// `((‖s_t‖₂ − ‖s_{t−1}‖₂) / ‖s_t‖₂)²`
    RelativeNormDiffSq,
    /// `(‖s_t‖₁ − ‖s_{t−1}‖₁)²`
    L1NormDiffSq,
    /// `(‖s_t‖₂ − target)²`
    FixedTargetSq { target: f64 },
    /// `(‖s_0‖₂ − ‖s_T‖₂)²`, not averaged over time.
    EndpointDiffSq,
    /// `|‖s_t‖₂ − ‖s_{t−1}‖₂|`
    NormDiffAbs,
    /// `‖s_t‖₂²`
    NormSq,
    None,
}

impl PenaltyVariant {
    pub const NAMES: [&'static str; 9] = [
        "norm_stabilizer",
        "state_diff_sq",
        "relative_norm_diff_sq",
        "l1_norm_diff_sq",
        "fixed_target_sq",
        "endpoint_diff_sq",
        "norm_diff_abs",
        "norm_sq",
        "none",
    ];

    pub fn all() -> [PenaltyVariant; 9] {
        [
            PenaltyVariant::NormStabilizer,
            PenaltyVariant::StateDiffSq,
            PenaltyVariant::RelativeNormDiffSq,
            PenaltyVariant::L1NormDiffSq,
            PenaltyVariant::FixedTargetSq {
                target: DEFAULT_FIXED_TARGET,
            },
            PenaltyVariant::EndpointDiffSq,
            PenaltyVariant::NormDiffAbs,
            PenaltyVariant::NormSq,
            PenaltyVariant::None,
        ]
    }

    pub fn name(&self) -> &'static str {
        match self {
            PenaltyVariant::NormStabilizer => "norm_stabilizer",
            PenaltyVariant::StateDiffSq => "state_diff_sq",
            PenaltyVariant::RelativeNormDiffSq => "relative_norm_diff_sq",
            PenaltyVariant::L1NormDiffSq => "l1_norm_diff_sq",
            PenaltyVariant::FixedTargetSq { .. } => "fixed_target_sq",
            PenaltyVariant::EndpointDiffSq => "endpoint_diff_sq",
            PenaltyVariant::NormDiffAbs => "norm_diff_abs",
            PenaltyVariant::NormSq => "norm_sq",
            PenaltyVariant::None => "none",
        }
    }
}

impl fmt::Display for PenaltyVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PenaltyVariant::FixedTargetSq { target } if *target != DEFAULT_FIXED_TARGET => {
                write!(f, "fixed_target_sq({target})")
            }
            v => f.write_str(v.name()),
        }
    }
}

/// Accepts the plain variant names; `fixed_target_sq(7.5)` sets the target.
impl FromStr for PenaltyVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Some(arg) = s
            .strip_prefix("fixed_target_sq(")
            .and_then(|r| r.strip_suffix(')'))
        {
            let target: f64 = arg
                .trim()
                .parse()
                .map_err(|_| Error::param(format!("bad fixed_target_sq target `{arg}`")))?;
            return Ok(PenaltyVariant::FixedTargetSq { target });
        }
        PenaltyVariant::all()
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::param(format!("unknown penalty variant `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PenaltyTarget {
    Hidden,
    MemoryCell,
}

impl FromStr for PenaltyTarget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "hidden" => Ok(PenaltyTarget::Hidden),
            "memory_cell" => Ok(PenaltyTarget::MemoryCell),
            other => Err(Error::param(format!("unknown penalty target `{other}`"))),
        }
    }
}

impl fmt::Display for PenaltyTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PenaltyTarget::Hidden => "hidden",
            PenaltyTarget::MemoryCell => "memory_cell",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegularizerSpec {
    pub variant: PenaltyVariant,
    pub beta: f64,
    pub target: PenaltyTarget,
    pub weight_noise_sigma: f64,
    pub dropout_p: f64,
    /// Drop the `t = 1` summand, which compares against the initial state.
    pub skip_first_term: bool,
}

impl Default for RegularizerSpec {
    fn default() -> Self {
        RegularizerSpec {
            variant: PenaltyVariant::NormStabilizer,
            beta: 0.0,
            target: PenaltyTarget::Hidden,
            weight_noise_sigma: 0.0,
            dropout_p: 0.0,
            skip_first_term: false,
        }
    }
}

impl RegularizerSpec {
    pub fn norm_stabilizer(beta: f64) -> Self {
        RegularizerSpec {
            beta,
            ..Default::default()
        }
    }

    pub fn with_variant(variant: PenaltyVariant, beta: f64) -> Self {
        RegularizerSpec {
            variant,
            beta,
            ..Default::default()
        }
    }

    pub fn validate(&self, has_memory_cell: bool) -> Result<()> {
        if !(self.beta >= 0.0) || !self.beta.is_finite() {
            return Err(Error::param(format!("beta must be >= 0, got {}", self.beta)));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::param(format!(
                "dropout_p must be in [0, 1), got {}",
                self.dropout_p
            )));
        }
        if !(self.weight_noise_sigma >= 0.0) {
            return Err(Error::param(format!(
                "weight_noise_sigma must be >= 0, got {}",
                self.weight_noise_sigma
            )));
        }
        if self.target == PenaltyTarget::MemoryCell && !has_memory_cell {
            return Err(Error::param(
                "penalty target memory_cell requires an LSTM cell",
            ));
        }
        Ok(())
    }

    fn is_inactive(&self) -> bool {
        self.beta == 0.0 || self.variant == PenaltyVariant::None
    }

    fn first_term(&self) -> usize {
        if self.skip_first_term {
            2
        } else {
            1
        }
    }

    fn select<'a>(&self, traj: &'a Trajectory) -> Result<&'a [Tensor]> {
        match self.target {
            PenaltyTarget::Hidden => Ok(&traj.hiddens),
            PenaltyTarget::MemoryCell => traj.cells.as_deref().ok_or_else(|| {
                Error::param("penalty target memory_cell but trajectory has no memory cells")
            }),
        }
    }

    /// Penalty on explicit states `s_0..s_T`.
    pub fn value_on(&self, states: &[Tensor]) -> Result<f64> {
        let steps = check_len(states)?;
        if self.is_inactive() {
            return Ok(0.0);
        }
        let beta = self.beta;
        let first = self.first_term();
        let terms = (steps + 1).saturating_sub(first);
        if terms == 0 && self.variant != PenaltyVariant::EndpointDiffSq {
            return Ok(0.0);
        }
        let avg = beta / terms as f64;
        let l2: Vec<f64> = states.iter().map(Tensor::l2_norm).collect();
        let sum_over = |f: &dyn Fn(usize) -> f64| (first..=steps).map(f).sum::<f64>();

        let value = match self.variant {
            PenaltyVariant::NormStabilizer => avg * sum_over(&|t| (l2[t] - l2[t - 1]).powi(2)),
            PenaltyVariant::StateDiffSq => avg * sum_over(&|t| {
                states[t]
                    .data()
                    .iter()
                    .zip(states[t - 1].data())
                    .map(|(a, b)| (a - b).powi(2))
                    .sum()
            }),
            PenaltyVariant::RelativeNormDiffSq => avg * sum_over(&|t| {
                ((l2[t] - l2[t - 1]) / l2[t].max(NORM_EPS)).powi(2)
            }),
            PenaltyVariant::L1NormDiffSq => {
                let l1: Vec<f64> = states.iter().map(|s| l1_norm(s.data())).collect();
                avg * sum_over(&|t| (l1[t] - l1[t - 1]).powi(2))
            }
            PenaltyVariant::FixedTargetSq { target } => {
                avg * sum_over(&|t| (l2[t] - target).powi(2))
            }
            PenaltyVariant::EndpointDiffSq => beta * (l2[0] - l2[steps]).powi(2),
            PenaltyVariant::NormDiffAbs => avg * sum_over(&|t| (l2[t] - l2[t - 1]).abs()),
            PenaltyVariant::NormSq => avg * sum_over(&|t| states[t].data().iter().map(|v| v * v).sum()),
            PenaltyVariant::None => 0.0,
        };
        Ok(value)
    }

    /// Exact gradient of [`value_on`](Self::value_on) with respect to each state.
    pub fn gradient_on(&self, states: &[Tensor]) -> Result<Vec<Tensor>> {
        let steps = check_len(states)?;
        let mut grads: Vec<Tensor> = states.iter().map(Tensor::zeros_like).collect();
        if self.is_inactive() {
            return Ok(grads);
        }
        let beta = self.beta;
        let first = self.first_term();
        let terms = (steps + 1).saturating_sub(first);
        if terms == 0 && self.variant != PenaltyVariant::EndpointDiffSq {
            return Ok(grads);
        }
        let avg = beta / terms as f64;
        let l2: Vec<f64> = states.iter().map(Tensor::l2_norm).collect();
        // summand index t couples s_t and s_{t-1}; it is active for first..=steps
        let active = |t: usize| t >= first && t <= steps;

        // d(summand)/dN coefficients, accumulated per state, then mapped
        // through dN_s/ds_s = s_s / max(N_s, eps).
        let mut norm_coef = vec![0.0; steps + 1];

        match self.variant {
            PenaltyVariant::NormStabilizer => {
                for t in first..=steps {
                    let d = 2.0 * avg * (l2[t] - l2[t - 1]);
                    norm_coef[t] += d;
                    norm_coef[t - 1] -= d;
                }
            }
            PenaltyVariant::RelativeNormDiffSq => {
                for t in first..=steps {
                    let denom = l2[t].max(NORM_EPS);
                    let r = (l2[t] - l2[t - 1]) / denom;
                    let dr_dcur = if l2[t] > NORM_EPS {
                        l2[t - 1] / (l2[t] * l2[t])
                    } else {
                        1.0 / NORM_EPS
                    };
                    let dr_dprev = -1.0 / denom;
                    norm_coef[t] += 2.0 * avg * r * dr_dcur;
                    norm_coef[t - 1] += 2.0 * avg * r * dr_dprev;
                }
            }
            PenaltyVariant::FixedTargetSq { target } => {
                for t in first..=steps {
                    norm_coef[t] += 2.0 * avg * (l2[t] - target);
                }
            }
            PenaltyVariant::EndpointDiffSq => {
                let d = 2.0 * beta * (l2[0] - l2[steps]);
                norm_coef[0] += d;
                norm_coef[steps] -= d;
            }
            PenaltyVariant::NormDiffAbs => {
                for t in first..=steps {
                    let d = avg * sign(l2[t] - l2[t - 1]);
                    norm_coef[t] += d;
                    norm_coef[t - 1] -= d;
                }
            }
            PenaltyVariant::StateDiffSq => {
                for t in (0..=steps).filter(|&t| active(t)) {
                    let (lo, hi) = grads.split_at_mut(t);
                    let (prev, cur) = (&mut lo[t - 1], &mut hi[0]);
                    for j in 0..states[t].len() {
                        let d = 2.0 * avg * (states[t].data()[j] - states[t - 1].data()[j]);
                        cur.data_mut()[j] += d;
                        prev.data_mut()[j] -= d;
                    }
                }
                return Ok(grads);
            }
            PenaltyVariant::L1NormDiffSq => {
                let l1: Vec<f64> = states.iter().map(|s| l1_norm(s.data())).collect();
                let mut l1_coef = vec![0.0; steps + 1];
                for t in first..=steps {
                    let d = 2.0 * avg * (l1[t] - l1[t - 1]);
                    l1_coef[t] += d;
                    l1_coef[t - 1] -= d;
                }
                for (g, (s, c)) in grads.iter_mut().zip(states.iter().zip(l1_coef)) {
                    for (gv, &sv) in g.data_mut().iter_mut().zip(s.data()) {
                        *gv = c * sign(sv);
                    }
                }
                return Ok(grads);
            }
            PenaltyVariant::NormSq => {
                for t in first..=steps {
                    for (gv, &sv) in grads[t].data_mut().iter_mut().zip(states[t].data()) {
                        *gv = 2.0 * avg * sv;
                    }
                }
                return Ok(grads);
            }
            PenaltyVariant::None => return Ok(grads),
        }

        for ((g, s), (&c, &n)) in grads.iter_mut().zip(states).zip(norm_coef.iter().zip(&l2)) {
            if c == 0.0 || n == 0.0 {
                continue;
            }
            let scale = c / n.max(NORM_EPS);
            for (gv, &sv) in g.data_mut().iter_mut().zip(s.data()) {
                *gv = scale * sv;
            }
        }
        Ok(grads)
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn check_len(states: &[Tensor]) -> Result<usize> {
    if states.len() < 2 {
        return Err(Error::param(format!(
            "penalty needs T >= 1 (at least two states), got {}",
            states.len()
        )));
    }
    Ok(states.len() - 1)
}

/// Penalty value on the states selected by `spec.target`.
pub fn penalty_value(spec: &RegularizerSpec, traj: &Trajectory) -> Result<f64> {
    spec.value_on(spec.select(traj)?)
}

/// Per-step gradients of [`penalty_value`], with respect to `h_t` or `c_t`
/// depending on `spec.target`.
pub fn penalty_backward(spec: &RegularizerSpec, traj: &Trajectory) -> Result<Vec<Tensor>> {
    spec.gradient_on(spec.select(traj)?)
}

/// Clean copies of the weights perturbed by [`apply_weight_noise`].
#[derive(Debug)]
#[must_use = "restore the clean weights before the optimizer step"]
pub struct WeightNoise {
    clean: Vec<(usize, Tensor)>,
}

impl WeightNoise {
    /// Put the clean weights back, bit for bit.
    pub fn restore<P: Parameters + ?Sized>(self, params: &mut P) {
        let mut tensors = params.tensors_mut();
        for (k, t) in self.clean {
            *tensors[k] = t;
        }
    }
}

/// Add i.i.d. `N(0, sigma²)` noise to every weight matrix (rank ≥ 2 tensor);
/// biases are left alone.
pub fn apply_weight_noise<P: Parameters + ?Sized>(params: &mut P, sigma: f64, rng: &mut Rng) -> WeightNoise {
    let mut clean = Vec::new();
    if sigma == 0.0 {
        return WeightNoise { clean };
    }
    for (k, t) in params.tensors_mut().into_iter().enumerate() {
        if t.rank() < 2 {
            continue;
        }
        clean.push((k, t.clone()));
        for v in t.data_mut() {
            *v += sigma * rng.normal();
        }
    }
    WeightNoise { clean }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Inverted-dropout mask: 0 with probability `p`, else `1/(1-p)`. At
/// evaluation time the mask is all ones.
pub fn dropout_mask(rng: &mut Rng, shape: &[usize], p: f64, mode: Mode) -> Result<Tensor> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::param(format!("dropout p must be in [0, 1), got {p}")));
    }
    let mut mask = Tensor::zeros(shape);
    if mode == Mode::Eval || p == 0.0 {
        mask.fill(1.0);
        return Ok(mask);
    }
    let keep = 1.0 / (1.0 - p);
    for v in mask.data_mut() {
        *v = if rng.uniform() < p { 0.0 } else { keep };
    }
    Ok(mask)
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::cells::{CellKind, CellInit, CellParams};
    use crate::gradcheck::{central_difference_vec, max_relative_error_slices};
    use crate::tensor::uniform_init;

    fn states(rows: &[&[f64]]) -> Vec<Tensor> {
        rows.iter().map(|r| Tensor::from_vec(r.to_vec())).collect()
    }

    #[test]
    fn constant_norm_trajectory_is_free() {
        let s = states(&[&[3.0, 4.0], &[3.0, 4.0], &[0.0, 5.0], &[5.0, 0.0]]);
        for beta in [0.0, 1.0, 500.0] {
            let spec = RegularizerSpec::norm_stabilizer(beta);
            assert_eq!(spec.value_on(&s).unwrap(), 0.0);
            for g in spec.gradient_on(&s).unwrap() {
                assert!(g.data().iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn worked_example_values() {
        let s = states(&[&[0.0, 0.0], &[3.0, 4.0], &[6.0, 8.0]]);
        let ns = RegularizerSpec::norm_stabilizer(1.0);
        assert!((ns.value_on(&s).unwrap() - 25.0).abs() < 1e-12);
        let ft = RegularizerSpec::with_variant(PenaltyVariant::FixedTargetSq { target: 5.0 }, 1.0);
        assert!((ft.value_on(&s).unwrap() - 12.5).abs() < 1e-12);
    }

    #[test]
    fn zero_beta_is_zero_for_every_variant() {
        let s = states(&[&[1.0, f64::INFINITY], &[3.0, 4.0], &[f64::NAN, 8.0]]);
        for v in PenaltyVariant::all() {
            let spec = RegularizerSpec::with_variant(v, 0.0);
            assert_eq!(spec.value_on(&s).unwrap(), 0.0, "{v}");
        }
    }

    #[test]
    fn empty_trajectory_rejected() {
        let spec = RegularizerSpec::norm_stabilizer(1.0);
        assert!(spec.value_on(&states(&[&[1.0]])).is_err());
        assert!(spec.gradient_on(&[]).is_err());
    }

    #[test]
    fn norm_sq_gradient_is_exact() {
        let mut rng = Rng::new(1);
        let s: Vec<Tensor> = (0..7)
            .map(|_| uniform_init(&mut rng, &[8], -1.0, 1.0).unwrap())
            .collect();
        let beta = 3.0;
        let spec = RegularizerSpec::with_variant(PenaltyVariant::NormSq, beta);
        let g = spec.gradient_on(&s).unwrap();
        assert!(g[0].data().iter().all(|&v| v == 0.0));
        for t in 1..7 {
            for (gv, sv) in g[t].data().iter().zip(s[t].data()) {
                assert_eq!(*gv, 2.0 * beta / 6.0 * sv);
            }
        }
    }

    fn flatten(s: &[Tensor]) -> Vec<f64> {
        s.iter().flat_map(|t| t.data().iter().copied()).collect()
    }

    fn unflatten(v: &[f64], n: usize) -> Vec<Tensor> {
        v.chunks(n).map(|c| Tensor::from_vec(c.to_vec())).collect()
    }

    /// Random states whose norms are distinct and bounded away from zero.
    fn spread_states(rng: &mut Rng, count: usize, n: usize) -> Vec<Tensor> {
        (0..count)
            .map(|t| {
                let mut s = uniform_init(rng, &[n], -1.0, 1.0).unwrap();
                s.scale(0.5 + 0.37 * t as f64);
                s
            })
            .collect()
    }

    #[test]
    fn every_variant_matches_finite_differences() {
        let mut rng = Rng::new(2);
        let n = 8;
        for v in PenaltyVariant::all() {
            for skip in [false, true] {
                let spec = RegularizerSpec {
                    variant: v,
                    beta: 1.7,
                    skip_first_term: skip,
                    ..Default::default()
                };
                for _ in 0..5 {
                    let s = spread_states(&mut rng, 7, n);
                    let analytic = flatten(&spec.gradient_on(&s).unwrap());
                    let numeric = central_difference_vec(
                        &flatten(&s),
                        |x| spec.value_on(&unflatten(x, n)).unwrap(),
                        1e-5,
                    );
                    let err = max_relative_error_slices(&analytic, &numeric);
                    assert!(err < 1e-4, "{v} skip={skip}: {err}");
                }
            }
        }
    }

    #[test]
    fn scaling_states_scales_stabilizer_but_not_relative() {
        let mut rng = Rng::new(3);
        let s = spread_states(&mut rng, 6, 5);
        let c = 3.5;
        let scaled: Vec<Tensor> = s
            .iter()
            .map(|t| {
                let mut t = t.clone();
                t.scale(c);
                t
            })
            .collect();
        let ns = RegularizerSpec::norm_stabilizer(1.0);
        let rel = RegularizerSpec::with_variant(PenaltyVariant::RelativeNormDiffSq, 1.0);
        let (a, b) = (ns.value_on(&s).unwrap(), ns.value_on(&scaled).unwrap());
        assert!((b - c * c * a).abs() < 1e-10 * b);
        let (a, b) = (rel.value_on(&s).unwrap(), rel.value_on(&scaled).unwrap());
        assert!((a - b).abs() < 1e-12 * a.max(1.0));
    }

    #[test]
    fn endpoint_ignores_interior_order() {
        let mut rng = Rng::new(4);
        let mut s = spread_states(&mut rng, 6, 4);
        let spec = RegularizerSpec::with_variant(PenaltyVariant::EndpointDiffSq, 2.0);
        let before = spec.value_on(&s).unwrap();
        s[1..5].reverse();
        s.swap(1, 3);
        assert_eq!(spec.value_on(&s).unwrap(), before);
    }

    #[test]
    fn zero_initial_state_has_finite_gradient() {
        let s = states(&[&[0.0, 0.0], &[3.0, 4.0], &[6.0, 8.0]]);
        for v in PenaltyVariant::all() {
            let g = RegularizerSpec::with_variant(v, 1.0).gradient_on(&s).unwrap();
            assert!(g.iter().all(Tensor::is_finite), "{v}");
        }
    }

    #[test]
    fn skip_first_term_drops_initial_comparison() {
        let s = states(&[&[0.0, 0.0], &[3.0, 4.0], &[6.0, 8.0]]);
        let spec = RegularizerSpec {
            skip_first_term: true,
            ..RegularizerSpec::norm_stabilizer(1.0)
        };
        assert!((spec.value_on(&s).unwrap() - 25.0).abs() < 1e-12);
        let g = spec.gradient_on(&s).unwrap();
        assert!(g[0].data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn variant_names_parse() {
        for v in PenaltyVariant::all() {
            assert_eq!(v.name().parse::<PenaltyVariant>().unwrap(), v);
        }
        assert_eq!(
            "fixed_target_sq(2.5)".parse::<PenaltyVariant>().unwrap(),
            PenaltyVariant::FixedTargetSq { target: 2.5 }
        );
        assert!("pascanu".parse::<PenaltyVariant>().is_err());
    }

    #[test]
    fn spec_validation() {
        let ok = RegularizerSpec::norm_stabilizer(1.0);
        assert!(ok.validate(false).is_ok());
        assert!(RegularizerSpec { beta: -1.0, ..ok }.validate(false).is_err());
        assert!(RegularizerSpec { dropout_p: 1.0, ..ok }.validate(false).is_err());
        assert!(RegularizerSpec { weight_noise_sigma: -0.1, ..ok }.validate(false).is_err());
        let cell = RegularizerSpec {
            target: PenaltyTarget::MemoryCell,
            ..ok
        };
        assert!(cell.validate(false).is_err());
        assert!(cell.validate(true).is_ok());
    }

    #[test]
    fn memory_cell_target_reads_cells() {
        let mut rng = Rng::new(5);
        let p = CellParams::init(&mut rng, CellKind::Lstm, 3, 4, CellInit { scale: 0.5, ..Default::default() }).unwrap();
        let x = uniform_init(&mut rng, &[6, 3], -1.0, 1.0).unwrap();
        let traj = p.forward(&x, &Tensor::zeros(&[4]), None).unwrap();
        let spec = RegularizerSpec {
            target: PenaltyTarget::MemoryCell,
            ..RegularizerSpec::norm_stabilizer(1.0)
        };
        let direct = spec.value_on(traj.cells.as_ref().unwrap()).unwrap();
        assert_eq!(penalty_value(&spec, &traj).unwrap(), direct);
        let srnn = CellParams::init(&mut rng, CellKind::Irnn, 3, 4, CellInit::default()).unwrap();
        let traj = srnn.forward(&x, &Tensor::zeros(&[4]), None).unwrap();
        assert!(penalty_value(&spec, &traj).is_err());
    }

    #[test]
    fn weight_noise_statistics_and_restore() {
        let mut rng = Rng::new(6);
        let mut p = CellParams::init(&mut rng, CellKind::SrnnTanh, 100, 300, CellInit::default()).unwrap();
        let clean = p.clone();

        let handle = apply_weight_noise(&mut p, 0.0, &mut rng);
        assert_eq!(p, clean);
        handle.restore(&mut p);

        let handle = apply_weight_noise(&mut p, 0.05, &mut rng);
        let mut diffs = Vec::new();
        for ((name, a), (_, b)) in p.named_tensors().into_iter().zip(clean.named_tensors()) {
            let d: Vec<f64> = a.data().iter().zip(b.data()).map(|(x, y)| x - y).collect();
            if name == "b" {
                assert!(d.iter().all(|&v| v == 0.0));
            } else {
                diffs.extend(d);
            }
        }
        assert!(diffs.len() >= 100_000);
        let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
        let std = (diffs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / diffs.len() as f64).sqrt();
        assert!((std - 0.05).abs() < 0.02 * 0.05, "std {std}");
        handle.restore(&mut p);
        assert_eq!(p, clean);
    }

    #[test]
    fn dropout_mask_examples() {
        let mut rng = Rng::new(7);
        let ones = dropout_mask(&mut rng, &[10], 0.0, Mode::Train).unwrap();
        assert!(ones.data().iter().all(|&v| v == 1.0));
        let eval = dropout_mask(&mut rng, &[10], 0.5, Mode::Eval).unwrap();
        assert!(eval.data().iter().all(|&v| v == 1.0));
        assert!(dropout_mask(&mut rng, &[10], 1.0, Mode::Train).is_err());

        let n = 100_000;
        let m = dropout_mask(&mut rng, &[n], 0.5, Mode::Train).unwrap();
        assert!(m.data().iter().all(|&v| v == 0.0 || v == 2.0));
        let mean = m.data().iter().sum::<f64>() / n as f64;
        // each entry is 2·Bernoulli(1/2): variance 1, so the mean has std 1/sqrt(n)
        let sigma = 1.0 / (n as f64).sqrt();
        assert!((mean - 1.0).abs() < 3.0 * sigma, "mean {mean}");
    }
}
