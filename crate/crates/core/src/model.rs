//! A recurrent cell followed by a linear readout, and the per-sequence loss
//! that combines the task loss with an activation penalty.

use crate::cells::{CellInit, CellKind, CellParams, Trajectory};
use crate::error::{Error, Result};
use crate::params::Parameters;
use crate::regularizers::{dropout_mask, penalty_backward, penalty_value, Mode, PenaltyTarget, RegularizerSpec};
use crate::rng::Rng;
use crate::tasks::{mse_loss, softmax_xent};
use crate::tensor::{matvec_acc, outer_acc, uniform_init, vecmat_acc, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub cell: CellParams,
    /// `[n×o]`
    pub readout_w: Tensor,
    /// `[o]`
    pub readout_b: Tensor,
}

impl Parameters for Model {
    fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut v: Vec<(String, &Tensor)> = self
            .cell
            .named()
            .into_iter()
            .map(|(n, t)| (format!("cell.{n}"), t))
            .collect();
        v.push(("readout.w".into(), &self.readout_w));
        v.push(("readout.b".into(), &self.readout_b));
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = self.cell.tensors_mut();
        v.push(&mut self.readout_w);
        v.push(&mut self.readout_b);
        v
    }
}

/// What a sequence is scored against.
#[derive(Debug, Clone, Copy)]
pub enum Targets<'a> {
    /// Regression on the final hidden state only.
    Final(f64),
    /// Next-symbol classification at every step.
    PerStep(&'a [usize]),
}

#[derive(Debug, Clone)]
pub struct Sequence<'a> {
    /// `[T×d]`
    pub inputs: Tensor,
    pub targets: Targets<'a>,
}

impl<'a> Sequence<'a> {
    pub fn one_hot(ids: &[usize], targets: &'a [usize], vocab: usize) -> Self {
        let mut x = Tensor::zeros(&[ids.len(), vocab]);
        for (t, &id) in ids.iter().enumerate() {
            x.row_mut(t)[id] = 1.0;
        }
        Sequence {
            inputs: x,
            targets: Targets::PerStep(targets),
        }
    }
}

/// Initial recurrent state.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub h: Tensor,
    pub c: Option<Tensor>,
}

/// Forward-pass results for one sequence.
#[derive(Debug, Clone)]
pub struct SequenceEval {
    /// Mean squared error (final target) or mean nats per step.
    pub data_loss: f64,
    pub penalty: f64,
    /// Per-step cost: cross-entropy in nats, or for regression the squared
    /// error of the readout at that step against the final target.
    pub step_costs: Vec<f64>,
    /// Number of scored predictions contributing to `data_loss`.
    pub scored: usize,
    pub trajectory: Trajectory,
}

impl SequenceEval {
    pub fn total(&self) -> f64 {
        self.data_loss + self.penalty
    }

    pub fn final_state(&self) -> State {
        State {
            h: self.trajectory.hiddens.last().unwrap().clone(),
            c: self
                .trajectory
                .cells
                .as_ref()
                .map(|c| c.last().unwrap().clone()),
        }
    }
}

/// Dropout masks for one training sequence: input rows and readout inputs.
struct Masks {
    input: Option<Tensor>,
    output: Option<Tensor>,
}

impl Model {
    pub fn init(
        rng: &mut Rng,
        kind: CellKind,
        input_dim: usize,
        hidden: usize,
        output_dim: usize,
        init: CellInit,
    ) -> Result<Self> {
        let cell = CellParams::init(rng, kind, input_dim, hidden, init)?;
        let s = init.scale;
        Ok(Model {
            cell,
            readout_w: uniform_init(rng, &[hidden, output_dim], -s, s)?,
            readout_b: Tensor::zeros(&[output_dim]),
        })
    }

    pub fn hidden_size(&self) -> usize {
        self.cell.hidden_size()
    }

    pub fn output_size(&self) -> usize {
        self.readout_b.len()
    }

    pub fn zero_state(&self) -> State {
        let (h, c) = self.cell.zero_state();
        State { h, c }
    }

    pub fn zeros_like(&self) -> Model {
        Model {
            cell: self.cell.zeros_like(),
            readout_w: Tensor::zeros_like(&self.readout_w),
            readout_b: Tensor::zeros_like(&self.readout_b),
        }
    }

    fn readout(&self, h: &[f64]) -> Vec<f64> {
        let mut out = self.readout_b.data().to_vec();
        vecmat_acc(h, &self.readout_w, &mut out);
        out
    }

    fn check_targets(&self, seq: &Sequence) -> Result<()> {
        let steps = seq.inputs.rows();
        match seq.targets {
            Targets::Final(_) if self.output_size() != 1 => Err(Error::Structural(
                "regression target needs a one-dimensional readout".into(),
            )),
            Targets::PerStep(ids) if ids.len() != steps => Err(Error::Structural(format!(
                "{} targets for {steps} steps",
                ids.len()
            ))),
            Targets::PerStep(ids) if ids.iter().any(|&i| i >= self.output_size()) => Err(
                Error::Structural("target id outside the readout vocabulary".into()),
            ),
            _ => Ok(()),
        }
    }

    fn masks(&self, seq: &Sequence, dropout: Option<(&mut Rng, f64)>) -> Result<Masks> {
        match dropout {
            Some((rng, p)) if p > 0.0 => {
                let input = dropout_mask(rng, seq.inputs.shape(), p, Mode::Train)?;
                let output = dropout_mask(rng, &[seq.inputs.rows(), self.hidden_size()], p, Mode::Train)?;
                Ok(Masks {
                    input: Some(input),
                    output: Some(output),
                })
            }
            _ => Ok(Masks {
                input: None,
                output: None,
            }),
        }
    }

    fn run(
        &self,
        seq: &Sequence,
        spec: &RegularizerSpec,
        state: Option<&State>,
        masks: &Masks,
    ) -> Result<SequenceEval> {
        self.check_targets(seq)?;
        let zero;
        let state = match state {
            Some(s) => s,
            None => {
                zero = self.zero_state();
                &zero
            }
        };
        let traj = match &masks.input {
            Some(m) => {
                let mut x = seq.inputs.clone();
                x.data_mut().iter_mut().zip(m.data()).for_each(|(a, b)| *a *= b);
                self.cell.forward(&x, &state.h, state.c.as_ref())?
            }
            None => self.cell.forward(&seq.inputs, &state.h, state.c.as_ref())?,
        };
        let steps = traj.steps();
        let readout_input = |t: usize| -> Vec<f64> {
            let h = traj.hiddens[t].data();
            match &masks.output {
                Some(m) => h.iter().zip(m.row(t - 1)).map(|(a, b)| a * b).collect(),
                None => h.to_vec(),
            }
        };

        let mut step_costs = Vec::with_capacity(steps);
        let (data_loss, scored) = match seq.targets {
            Targets::Final(y) => {
                for t in 1..=steps {
                    let pred = self.readout(&readout_input(t))[0];
                    step_costs.push(mse_loss(pred, y).0);
                }
                (*step_costs.last().unwrap_or(&0.0), 1)
            }
            Targets::PerStep(ids) => {
                for t in 1..=steps {
                    let logits = self.readout(&readout_input(t));
                    step_costs.push(nonfinite_as_inf(softmax_xent(&logits, ids[t - 1]).0));
                }
                (step_costs.iter().sum::<f64>() / steps.max(1) as f64, steps)
            }
        };
        let penalty = penalty_value(spec, &traj)?;
        Ok(SequenceEval {
            data_loss,
            penalty,
            step_costs,
            scored,
            trajectory: traj,
        })
    }

    /// Forward pass only, no dropout.
    pub fn evaluate(&self, seq: &Sequence, spec: &RegularizerSpec, state: Option<&State>) -> Result<SequenceEval> {
        self.run(seq, spec, state, &Masks { input: None, output: None })
    }

    /// Loss and its gradient with respect to every parameter. When `dropout`
    /// is given, fresh masks are drawn for this sequence.
    pub fn gradients(
        &self,
        seq: &Sequence,
        spec: &RegularizerSpec,
        state: Option<&State>,
        dropout: Option<(&mut Rng, f64)>,
    ) -> Result<(SequenceEval, Model)> {
        let masks = self.masks(seq, dropout)?;
        let eval = self.run(seq, spec, state, &masks)?;
        let traj = &eval.trajectory;
        let steps = traj.steps();
        let n = self.hidden_size();
        let mut grads = self.zeros_like();
        let mut dh: Vec<Tensor> = (0..=steps).map(|_| Tensor::zeros(&[n])).collect();

        let masked_h = |t: usize| -> Vec<f64> {
            let h = traj.hiddens[t].data();
            match &masks.output {
                Some(m) => h.iter().zip(m.row(t - 1)).map(|(a, b)| a * b).collect(),
                None => h.to_vec(),
            }
        };
        let mut backprop_readout = |t: usize, dout: &[f64], dh_t: &mut Tensor| {
            let hin = masked_h(t);
            outer_acc(&mut grads.readout_w, &hin, dout);
            for (g, d) in grads.readout_b.data_mut().iter_mut().zip(dout) {
                *g += d;
            }
            let mut d_in = vec![0.0; n];
            matvec_acc(&self.readout_w, dout, &mut d_in);
            if let Some(m) = &masks.output {
                d_in.iter_mut().zip(m.row(t - 1)).for_each(|(a, b)| *a *= b);
            }
            for (a, b) in dh_t.data_mut().iter_mut().zip(&d_in) {
                *a += b;
            }
        };

        match seq.targets {
            Targets::Final(y) => {
                if steps > 0 {
                    let pred = self.readout(&masked_h(steps))[0];
                    let (_, d) = mse_loss(pred, y);
                    backprop_readout(steps, &[d], &mut dh[steps]);
                }
            }
            Targets::PerStep(ids) => {
                let scale = 1.0 / steps.max(1) as f64;
                for t in 1..=steps {
                    let logits = self.readout(&masked_h(t));
                    let (_, mut d) = softmax_xent(&logits, ids[t - 1]);
                    d.iter_mut().for_each(|v| *v *= scale);
                    backprop_readout(t, &d, &mut dh[t]);
                }
            }
        }

        let pen = penalty_backward(spec, traj)?;
        let dc = match spec.target {
            PenaltyTarget::Hidden => {
                for (a, b) in dh.iter_mut().zip(&pen) {
                    a.add_assign(b)?;
                }
                None
            }
            PenaltyTarget::MemoryCell => Some(pen),
        };
        let cell_grads = self.cell.backward(traj, &dh, dc.as_deref())?;
        grads.cell = cell_grads.params;
        Ok((eval, grads))
    }
}

fn nonfinite_as_inf(v: f64) -> f64 {
    if v.is_finite() {
        v
    } else {
        f64::INFINITY
    }
}
