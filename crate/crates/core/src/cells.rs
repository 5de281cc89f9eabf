//! Simple recurrent (tanh / ReLU / TRec) and LSTM cells with full
//! backpropagation through time.
//!
//! Conventions: inputs are rows, so the SRNN pre-activation is
//! `a_t = x_t W_xh + h_{t-1} W_hh + b` with `W_xh: [d×n]`, `W_hh: [n×n]`.
//! The LSTM stacks its four gates along the columns of `W_x: [d×4n]`,
//! `W_h: [n×4n]` and `b: [4n]` in the order input, forget, output,
//! modulation.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::params::Parameters;
use crate::rng::Rng;
use crate::tensor::{identity_init, matvec_acc, outer_acc, uniform_init, vecmat_acc, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Relu,
    /// Thresholded rectifier at threshold 0: a ReLU with no bias term.
    Trec,
}

impl Activation {
    #[inline]
    fn apply(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => a.tanh(),
            Activation::Relu | Activation::Trec => {
                if a > 0.0 {
                    a
                } else {
                    0.0
                }
            }
        }
    }

    /// Derivative expressed through the output `h = act(a)`; the rectifier
    /// derivative at exactly 0 is taken to be 0.
    #[inline]
    fn derivative_from_output(self, h: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - h * h,
            Activation::Relu | Activation::Trec => {
                if h > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellKind {
    SrnnTanh,
    SrnnRelu,
    SrnnTrec,
    Irnn,
    Lstm,
    LstmNoOutputTanh,
}

impl CellKind {
    pub const ALL: [CellKind; 6] = [
        CellKind::SrnnTanh,
        CellKind::SrnnRelu,
        CellKind::SrnnTrec,
        CellKind::Irnn,
        CellKind::Lstm,
        CellKind::LstmNoOutputTanh,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CellKind::SrnnTanh => "srnn_tanh",
            CellKind::SrnnRelu => "srnn_relu",
            CellKind::SrnnTrec => "srnn_trec",
            CellKind::Irnn => "irnn",
            CellKind::Lstm => "lstm",
            CellKind::LstmNoOutputTanh => "lstm_no_output_tanh",
        }
    }

    pub fn is_lstm(self) -> bool {
        matches!(self, CellKind::Lstm | CellKind::LstmNoOutputTanh)
    }
}

impl fmt::Display for CellKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CellKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CellKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::param(format!("unknown cell `{s}`")))
    }
}

/// Initialisation knobs shared by every cell family.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellInit {
    /// Weights are drawn from `U[-scale, scale)`.
    pub scale: f64,
    /// Identity recurrent matrix for SRNN cells; IRNN always uses it.
    pub identity_recurrent: bool,
    /// Initial LSTM forget-gate bias.
    pub forget_bias: f64,
}

impl Default for CellInit {
    fn default() -> Self {
        CellInit {
            scale: 0.01,
            identity_recurrent: false,
            forget_bias: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SrnnParams {
    pub w_xh: Tensor,
    pub w_hh: Tensor,
    pub b: Option<Tensor>,
    pub activation: Activation,
}

impl SrnnParams {
    pub fn new(w_xh: Tensor, w_hh: Tensor, b: Option<Tensor>, activation: Activation) -> Result<Self> {
        let p = SrnnParams {
            w_xh,
            w_hh,
            b,
            activation,
        };
        p.validate()?;
        Ok(p)
    }

    fn validate(&self) -> Result<()> {
        let n = self.w_hh.rows();
        if self.w_hh.rank() != 2 || self.w_hh.cols() != n {
            return Err(Error::Structural(format!(
                "W_hh must be square, got {:?}",
                self.w_hh.shape()
            )));
        }
        if self.w_xh.rank() != 2 || self.w_xh.cols() != n {
            return Err(Error::Dimension {
                op: "SrnnParams",
                left: self.w_xh.shape().to_vec(),
                right: self.w_hh.shape().to_vec(),
            });
        }
        match (&self.b, self.activation) {
            (Some(_), Activation::Trec) => Err(Error::Structural(
                "trec activation has no bias term".into(),
            )),
            (Some(b), _) if b.shape() != [n] => Err(Error::Dimension {
                op: "SrnnParams bias",
                left: b.shape().to_vec(),
                right: vec![n],
            }),
            _ => Ok(()),
        }
    }

    pub fn init(
        rng: &mut Rng,
        input_dim: usize,
        hidden: usize,
        activation: Activation,
        with_bias: bool,
        init: CellInit,
    ) -> Result<Self> {
        let s = init.scale;
        let w_xh = uniform_init(rng, &[input_dim, hidden], -s, s)?;
        let w_hh = if init.identity_recurrent {
            identity_init(hidden)
        } else {
            uniform_init(rng, &[hidden, hidden], -s, s)?
        };
        let b = (with_bias && activation != Activation::Trec).then(|| Tensor::zeros(&[hidden]));
        SrnnParams::new(w_xh, w_hh, b, activation)
    }

    pub fn hidden_size(&self) -> usize {
        self.w_hh.rows()
    }

    pub fn input_size(&self) -> usize {
        self.w_xh.rows()
    }

    fn zeros_like(&self) -> Self {
        SrnnParams {
            w_xh: Tensor::zeros_like(&self.w_xh),
            w_hh: Tensor::zeros_like(&self.w_hh),
            b: self.b.as_ref().map(Tensor::zeros_like),
            activation: self.activation,
        }
    }

    pub fn forward(&self, x: &Tensor, h0: &Tensor) -> Result<Trajectory> {
        let n = self.hidden_size();
        check_inputs(x, self.input_size(), h0, n)?;
        let steps = x.rows();
        let mut hiddens = Vec::with_capacity(steps + 1);
        hiddens.push(h0.clone());
        let mut a = vec![0.0; n];
        for t in 0..steps {
            match &self.b {
                Some(b) => a.copy_from_slice(b.data()),
                None => a.fill(0.0),
            }
            vecmat_acc(x.row(t), &self.w_xh, &mut a);
            vecmat_acc(hiddens[t].data(), &self.w_hh, &mut a);
            let h: Vec<f64> = a.iter().map(|&v| self.activation.apply(v)).collect();
            hiddens.push(Tensor::from_vec(h));
        }
        Ok(Trajectory {
            hiddens,
            cells: None,
            gates: None,
            inputs: x.clone(),
        })
    }

    fn backward(
        &self,
        traj: &Trajectory,
        dh: &[Tensor],
    ) -> Result<CellGradients> {
        let n = self.hidden_size();
        let steps = traj.steps();
        let mut grads = self.zeros_like();
        let mut carry = vec![0.0; n];
        let mut da = vec![0.0; n];
        for t in (1..=steps).rev() {
            let h = traj.hiddens[t].data();
            for j in 0..n {
                let g = dh[t].data()[j] + carry[j];
                da[j] = g * self.activation.derivative_from_output(h[j]);
            }
            outer_acc(&mut grads.w_xh, traj.inputs.row(t - 1), &da);
            outer_acc(&mut grads.w_hh, traj.hiddens[t - 1].data(), &da);
            if let Some(db) = grads.b.as_mut() {
                for (g, d) in db.data_mut().iter_mut().zip(&da) {
                    *g += d;
                }
            }
            carry.fill(0.0);
            matvec_acc(&self.w_hh, &da, &mut carry);
        }
        for (c, d) in carry.iter_mut().zip(dh[0].data()) {
            *c += d;
        }
        Ok(CellGradients {
            params: CellParams::Srnn(grads),
            dh0: Tensor::from_vec(carry),
            dc0: None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    pub w_x: Tensor,
    pub w_h: Tensor,
    pub b: Tensor,
    /// `h_t = o_t ⊙ tanh(c_t)` when set, `h_t = o_t ⊙ c_t` otherwise.
    pub output_tanh: bool,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl LstmParams {
    pub fn new(w_x: Tensor, w_h: Tensor, b: Tensor, output_tanh: bool) -> Result<Self> {
        let n = w_h.rows();
        let ok = w_h.rank() == 2
            && w_h.cols() == 4 * n
            && w_x.rank() == 2
            && w_x.cols() == 4 * n
            && b.shape() == [4 * n];
        if !ok {
            return Err(Error::Structural(format!(
                "LSTM gate shapes inconsistent: W_x {:?}, W_h {:?}, b {:?}",
                w_x.shape(),
                w_h.shape(),
                b.shape()
            )));
        }
        Ok(LstmParams {
            w_x,
            w_h,
            b,
            output_tanh,
        })
    }

    pub fn init(
        rng: &mut Rng,
        input_dim: usize,
        hidden: usize,
        output_tanh: bool,
        init: CellInit,
    ) -> Result<Self> {
        let s = init.scale;
        let w_x = uniform_init(rng, &[input_dim, 4 * hidden], -s, s)?;
        let w_h = uniform_init(rng, &[hidden, 4 * hidden], -s, s)?;
        let mut b = Tensor::zeros(&[4 * hidden]);
        b.data_mut()[hidden..2 * hidden].fill(init.forget_bias);
        LstmParams::new(w_x, w_h, b, output_tanh)
    }

    pub fn hidden_size(&self) -> usize {
        self.w_h.rows()
    }

    pub fn input_size(&self) -> usize {
        self.w_x.rows()
    }

    fn zeros_like(&self) -> Self {
        LstmParams {
            w_x: Tensor::zeros_like(&self.w_x),
            w_h: Tensor::zeros_like(&self.w_h),
            b: Tensor::zeros_like(&self.b),
            output_tanh: self.output_tanh,
        }
    }

    pub fn forward(&self, x: &Tensor, h0: &Tensor, c0: &Tensor) -> Result<Trajectory> {
        let n = self.hidden_size();
        check_inputs(x, self.input_size(), h0, n)?;
        if c0.shape() != [n] {
            return Err(Error::Dimension {
                op: "lstm_forward c0",
                left: c0.shape().to_vec(),
                right: vec![n],
            });
        }
        let steps = x.rows();
        let mut hiddens = Vec::with_capacity(steps + 1);
        let mut cells = Vec::with_capacity(steps + 1);
        let mut gates = Vec::with_capacity(steps);
        hiddens.push(h0.clone());
        cells.push(c0.clone());
        for t in 0..steps {
            let mut z = self.b.data().to_vec();
            vecmat_acc(x.row(t), &self.w_x, &mut z);
            vecmat_acc(hiddens[t].data(), &self.w_h, &mut z);
            let (ifo, g) = z.split_at_mut(3 * n);
            ifo.iter_mut().for_each(|v| *v = sigmoid(*v));
            g.iter_mut().for_each(|v| *v = v.tanh());

            let c_prev = cells[t].data();
            let mut c = vec![0.0; n];
            let mut h = vec![0.0; n];
            for j in 0..n {
                let (i_g, f_g, o_g, m_g) = (z[j], z[n + j], z[2 * n + j], z[3 * n + j]);
                c[j] = f_g * c_prev[j] + i_g * m_g;
                h[j] = if self.output_tanh {
                    o_g * c[j].tanh()
                } else {
                    o_g * c[j]
                };
            }
            hiddens.push(Tensor::from_vec(h));
            cells.push(Tensor::from_vec(c));
            gates.push(Tensor::from_vec(z));
        }
        Ok(Trajectory {
            hiddens,
            cells: Some(cells),
            gates: Some(gates),
            inputs: x.clone(),
        })
    }

    fn backward(
        &self,
        traj: &Trajectory,
        dh: &[Tensor],
        dc: Option<&[Tensor]>,
    ) -> Result<CellGradients> {
        let n = self.hidden_size();
        let steps = traj.steps();
        let (cells, gates) = match (&traj.cells, &traj.gates) {
            (Some(c), Some(g)) => (c, g),
            _ => {
                return Err(Error::Structural(
                    "LSTM backward needs a trajectory with memory cells".into(),
                ))
            }
        };
        let mut grads = self.zeros_like();
        let mut carry_h = vec![0.0; n];
        let mut carry_c = vec![0.0; n];
        let mut dz = vec![0.0; 4 * n];
        for t in (1..=steps).rev() {
            let z = gates[t - 1].data();
            let c = cells[t].data();
            let c_prev = cells[t - 1].data();
            for j in 0..n {
                let (i_g, f_g, o_g, m_g) = (z[j], z[n + j], z[2 * n + j], z[3 * n + j]);
                let g_h = dh[t].data()[j] + carry_h[j];
                let mut g_c = carry_c[j] + dc.map_or(0.0, |d| d[t].data()[j]);
                let d_o;
                if self.output_tanh {
                    let tc = c[j].tanh();
                    g_c += g_h * o_g * (1.0 - tc * tc);
                    d_o = g_h * tc;
                } else {
                    g_c += g_h * o_g;
                    d_o = g_h * c[j];
                }
                let d_i = g_c * m_g;
                let d_f = g_c * c_prev[j];
                let d_m = g_c * i_g;
                carry_c[j] = g_c * f_g;
                dz[j] = d_i * i_g * (1.0 - i_g);
                dz[n + j] = d_f * f_g * (1.0 - f_g);
                dz[2 * n + j] = d_o * o_g * (1.0 - o_g);
                dz[3 * n + j] = d_m * (1.0 - m_g * m_g);
            }
            outer_acc(&mut grads.w_x, traj.inputs.row(t - 1), &dz);
            outer_acc(&mut grads.w_h, traj.hiddens[t - 1].data(), &dz);
            for (g, d) in grads.b.data_mut().iter_mut().zip(&dz) {
                *g += d;
            }
            carry_h.fill(0.0);
            matvec_acc(&self.w_h, &dz, &mut carry_h);
        }
        for (c, d) in carry_h.iter_mut().zip(dh[0].data()) {
            *c += d;
        }
        if let Some(d) = dc {
            for (c, g) in carry_c.iter_mut().zip(d[0].data()) {
                *c += g;
            }
        }
        Ok(CellGradients {
            params: CellParams::Lstm(grads),
            dh0: Tensor::from_vec(carry_h),
            dc0: Some(Tensor::from_vec(carry_c)),
        })
    }
}

fn check_inputs(x: &Tensor, d: usize, h0: &Tensor, n: usize) -> Result<()> {
    if x.rank() != 2 || x.cols() != d {
        return Err(Error::Dimension {
            op: "forward inputs",
            left: x.shape().to_vec(),
            right: vec![x.rows(), d],
        });
    }
    if h0.shape() != [n] {
        return Err(Error::Dimension {
            op: "forward h0",
            left: h0.shape().to_vec(),
            right: vec![n],
        });
    }
    Ok(())
}

/// States `h_0..h_T` (and `c_0..c_T` for LSTM) plus what backward needs.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub hiddens: Vec<Tensor>,
    pub cells: Option<Vec<Tensor>>,
    /// Post-nonlinearity gate activations per step (LSTM only), `[i, f, o, g]`.
    pub gates: Option<Vec<Tensor>>,
    pub inputs: Tensor,
}

impl Trajectory {
    /// Number of transitions `T`; there are `T + 1` stored states.
    pub fn steps(&self) -> usize {
        self.hiddens.len() - 1
    }

    pub fn hidden_size(&self) -> usize {
        self.hiddens[0].len()
    }

    /// Forget-gate activations for step `t` (1-based), LSTM only.
    pub fn forget_gate(&self, t: usize) -> Option<&[f64]> {
        let n = self.hidden_size();
        self.gates
            .as_ref()
            .map(|g| &g[t - 1].data()[n..2 * n])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CellParams {
    Srnn(SrnnParams),
    Lstm(LstmParams),
}

#[derive(Debug, Clone)]
pub struct CellGradients {
    /// Same layout as the parameters they differentiate.
    pub params: CellParams,
    pub dh0: Tensor,
    pub dc0: Option<Tensor>,
}

impl Parameters for CellParams {
    fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        self.named()
            .into_iter()
            .map(|(n, t)| (n.to_string(), t))
            .collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.cell_tensors_mut()
    }
}

impl CellParams {
    pub fn init(rng: &mut Rng, kind: CellKind, input_dim: usize, hidden: usize, init: CellInit) -> Result<Self> {
        let srnn = |rng: &mut Rng, act, bias, identity| {
            let init = CellInit {
                identity_recurrent: identity,
                ..init
            };
            SrnnParams::init(rng, input_dim, hidden, act, bias, init).map(CellParams::Srnn)
        };
        match kind {
            CellKind::SrnnTanh => srnn(rng, Activation::Tanh, true, init.identity_recurrent),
            CellKind::SrnnRelu => srnn(rng, Activation::Relu, true, init.identity_recurrent),
            CellKind::SrnnTrec => srnn(rng, Activation::Trec, false, init.identity_recurrent),
            CellKind::Irnn => srnn(rng, Activation::Relu, true, true),
            CellKind::Lstm => {
                LstmParams::init(rng, input_dim, hidden, true, init).map(CellParams::Lstm)
            }
            CellKind::LstmNoOutputTanh => {
                LstmParams::init(rng, input_dim, hidden, false, init).map(CellParams::Lstm)
            }
        }
    }

    pub fn hidden_size(&self) -> usize {
        match self {
            CellParams::Srnn(p) => p.hidden_size(),
            CellParams::Lstm(p) => p.hidden_size(),
        }
    }

    pub fn input_size(&self) -> usize {
        match self {
            CellParams::Srnn(p) => p.input_size(),
            CellParams::Lstm(p) => p.input_size(),
        }
    }

    pub fn has_memory_cell(&self) -> bool {
        matches!(self, CellParams::Lstm(_))
    }

    /// Initial state: zero hidden vector and, for LSTM, zero memory cell.
    pub fn zero_state(&self) -> (Tensor, Option<Tensor>) {
        let n = self.hidden_size();
        (
            Tensor::zeros(&[n]),
            self.has_memory_cell().then(|| Tensor::zeros(&[n])),
        )
    }

    pub fn forward(&self, x: &Tensor, h0: &Tensor, c0: Option<&Tensor>) -> Result<Trajectory> {
        match self {
            CellParams::Srnn(p) => p.forward(x, h0),
            CellParams::Lstm(p) => {
                let zero;
                let c0 = match c0 {
                    Some(c) => c,
                    None => {
                        zero = Tensor::zeros(&[p.hidden_size()]);
                        &zero
                    }
                };
                p.forward(x, h0, c0)
            }
        }
    }

    /// Reverse-mode gradients given upstream `dL/dh_t` for `t = 0..=T` and,
    /// for LSTM, optional `dL/dc_t`. Contributions at the same step from
    /// different loss terms simply add before being passed in.
    pub fn backward(
        &self,
        traj: &Trajectory,
        dh: &[Tensor],
        dc: Option<&[Tensor]>,
    ) -> Result<CellGradients> {
        let n = self.hidden_size();
        let steps = traj.steps();
        if traj.hidden_size() != n || traj.inputs.cols() != self.input_size() {
            return Err(Error::Structural(format!(
                "trajectory (n={}, d={}) does not match parameters (n={n}, d={})",
                traj.hidden_size(),
                traj.inputs.cols(),
                self.input_size()
            )));
        }
        if dh.len() != steps + 1 || dh.iter().any(|g| g.shape() != [n]) {
            return Err(Error::Structural(format!(
                "expected {} hidden gradients of size {n}",
                steps + 1
            )));
        }
        match self {
            CellParams::Srnn(p) => {
                if dc.is_some() {
                    return Err(Error::Structural(
                        "memory-cell gradients given to an SRNN".into(),
                    ));
                }
                p.backward(traj, dh)
            }
            CellParams::Lstm(p) => {
                if let Some(d) = dc {
                    if d.len() != steps + 1 || d.iter().any(|g| g.shape() != [n]) {
                        return Err(Error::Structural(format!(
                            "expected {} memory-cell gradients of size {n}",
                            steps + 1
                        )));
                    }
                }
                p.backward(traj, dh, dc)
            }
        }
    }

    pub fn zeros_like(&self) -> Self {
        match self {
            CellParams::Srnn(p) => CellParams::Srnn(p.zeros_like()),
            CellParams::Lstm(p) => CellParams::Lstm(p.zeros_like()),
        }
    }

    /// Named parameter tensors in a fixed order.
    pub fn named(&self) -> Vec<(&'static str, &Tensor)> {
        match self {
            CellParams::Srnn(p) => {
                let mut v = vec![("w_xh", &p.w_xh), ("w_hh", &p.w_hh)];
                if let Some(b) = &p.b {
                    v.push(("b", b));
                }
                v
            }
            CellParams::Lstm(p) => vec![("w_x", &p.w_x), ("w_h", &p.w_h), ("b", &p.b)],
        }
    }

    fn cell_tensors_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            CellParams::Srnn(p) => {
                let mut v = vec![&mut p.w_xh, &mut p.w_hh];
                if let Some(b) = p.b.as_mut() {
                    v.push(b);
                }
                v
            }
            CellParams::Lstm(p) => vec![&mut p.w_x, &mut p.w_h, &mut p.b],
        }
    }

    /// The recurrent transition matrix (`W_hh`, or the stacked `W_h` for LSTM).
    pub fn recurrent_matrix(&self) -> &Tensor {
        match self {
            CellParams::Srnn(p) => &p.w_hh,
            CellParams::Lstm(p) => &p.w_h,
        }
    }
}
