//! Diagnostics beyond the training horizon: per-step norm and cost curves,
//! eigenvalue-modulus spectra, forget-gate distributions, and CSV export.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::{determinant, eigenvalues, trace, Eigenvalue};
use crate::model::{Model, Sequence, Targets};
use crate::regularizers::RegularizerSpec;
use crate::tensor::{l2_norm, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct NormTrajectoryReport {
    pub horizon: usize,
    pub sequences: usize,
    /// Index `t-1` holds statistics for step `t`.
    pub mean_h_norm: Vec<f64>,
    pub std_h_norm: Vec<f64>,
    /// Mean of `ln ‖h_t‖` over sequences; `-inf` if any norm is zero.
    pub mean_log_h_norm: Vec<f64>,
    /// `+inf` wherever any sequence's cost is non-finite.
    pub mean_cost: Vec<f64>,
    pub mean_c_norm: Option<Vec<f64>>,
    pub std_c_norm: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumReport {
    /// Descending.
    pub moduli: Vec<f64>,
    pub eigenvalues: Vec<Eigenvalue>,
    pub trace: f64,
    pub determinant: f64,
    /// `|Σλ − tr W|`.
    pub trace_residual: f64,
    /// `|Π|λ| − |det W|| / |det W|`.
    pub det_relative_residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForgetGateReport {
    /// Ascending; one entry per memory cell.
    pub averages: Vec<f64>,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if !mean.is_finite() {
        return (mean, f64::NAN);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn truncate<'a>(seq: &Sequence<'a>, horizon: usize) -> Result<Sequence<'a>> {
    let steps = seq.inputs.rows();
    if steps < horizon {
        return Err(Error::param(format!(
            "evaluation sequence has {steps} steps, horizon is {horizon}"
        )));
    }
    let d = seq.inputs.cols();
    let inputs = Tensor::new(&[horizon, d], seq.inputs.data()[..horizon * d].to_vec())?;
    let targets = match seq.targets {
        Targets::PerStep(ids) => Targets::PerStep(&ids[..horizon]),
        t => t,
    };
    Ok(Sequence { inputs, targets })
}

/// Run each sequence for `horizon` steps from the zero state without any
/// reset and aggregate norms and per-step costs across sequences.
pub fn norm_trajectory(model: &Model, sequences: &[Sequence], horizon: usize) -> Result<NormTrajectoryReport> {
    if horizon < 1 {
        return Err(Error::param("horizon must be >= 1"));
    }
    if sequences.is_empty() {
        return Err(Error::param("norm trajectory needs at least one sequence"));
    }
    let spec = RegularizerSpec::default();
    let mut h_norms = vec![Vec::with_capacity(sequences.len()); horizon];
    let mut c_norms = vec![Vec::with_capacity(sequences.len()); horizon];
    let mut costs = vec![Vec::with_capacity(sequences.len()); horizon];
    for seq in sequences {
        let eval = model.evaluate(&truncate(seq, horizon)?, &spec, None)?;
        let traj = &eval.trajectory;
        for t in 1..=horizon {
            h_norms[t - 1].push(l2_norm(traj.hiddens[t].data()));
            if let Some(c) = &traj.cells {
                c_norms[t - 1].push(l2_norm(c[t].data()));
            }
            let cost = eval.step_costs[t - 1];
            costs[t - 1].push(if cost.is_finite() { cost } else { f64::INFINITY });
        }
    }
    let (mean_h_norm, std_h_norm): (Vec<f64>, Vec<f64>) = h_norms.iter().map(|v| mean_std(v)).unzip();
    let mean_log_h_norm = h_norms
        .iter()
        .map(|v| v.iter().map(|x| x.ln()).sum::<f64>() / v.len() as f64)
        .collect();
    let mean_cost = costs.iter().map(|v| mean_std(v).0).collect();
    let (mean_c_norm, std_c_norm) = if model.cell.has_memory_cell() {
        let (m, s): (Vec<f64>, Vec<f64>) = c_norms.iter().map(|v| mean_std(v)).unzip();
        (Some(m), Some(s))
    } else {
        (None, None)
    };
    Ok(NormTrajectoryReport {
        horizon,
        sequences: sequences.len(),
        mean_h_norm,
        std_h_norm,
        mean_log_h_norm,
        mean_cost,
        mean_c_norm,
        std_c_norm,
    })
}

pub fn eig_moduli(w: &Tensor) -> Result<SpectrumReport> {
    let eigs = eigenvalues(w)?;
    let mut moduli: Vec<f64> = eigs.iter().map(Eigenvalue::modulus).collect();
    moduli.sort_by(|a, b| b.total_cmp(a));
    let tr = trace(w)?;
    let det = determinant(w)?;
    let sum: f64 = eigs.iter().map(|e| e.re).sum();
    let prod: f64 = moduli.iter().product();
    Ok(SpectrumReport {
        moduli,
        eigenvalues: eigs,
        trace: tr,
        determinant: det,
        trace_residual: (sum - tr).abs(),
        det_relative_residual: (prod - det.abs()).abs() / det.abs(),
    })
}

/// Per-cell forget-gate activation averaged over every step of every
/// sequence.
pub fn forget_gate_stats(model: &Model, sequences: &[Sequence]) -> Result<ForgetGateReport> {
    if !model.cell.has_memory_cell() {
        return Err(Error::Type("forget-gate statistics need an LSTM model".into()));
    }
    let n = model.hidden_size();
    let mut sums = vec![0.0; n];
    let mut count = 0usize;
    let spec = RegularizerSpec::default();
    for seq in sequences {
        let traj = model.evaluate(seq, &spec, None)?.trajectory;
        for t in 1..=traj.steps() {
            let f = traj.forget_gate(t).expect("LSTM trajectory stores gates");
            sums.iter_mut().zip(f).for_each(|(s, v)| *s += v);
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::param("forget-gate statistics need at least one step"));
    }
    let mut averages: Vec<f64> = sums.into_iter().map(|s| s / count as f64).collect();
    averages.sort_by(|a, b| a.total_cmp(b));
    Ok(ForgetGateReport { averages })
}

/// A table with an integer first column and floating-point remaining columns.
pub trait CsvReport {
    fn header(&self) -> String;
    fn rows(&self) -> Vec<(usize, Vec<f64>)>;
}

impl CsvReport for NormTrajectoryReport {
    fn header(&self) -> String {
        let mut h = String::from("t,mean_h_norm,std_h_norm,mean_cost");
        if self.mean_c_norm.is_some() {
            h.push_str(",mean_c_norm,std_c_norm");
        }
        h
    }

    fn rows(&self) -> Vec<(usize, Vec<f64>)> {
        (0..self.horizon)
            .map(|i| {
                let mut r = vec![self.mean_h_norm[i], self.std_h_norm[i], self.mean_cost[i]];
                if let (Some(m), Some(s)) = (&self.mean_c_norm, &self.std_c_norm) {
                    r.extend([m[i], s[i]]);
                }
                (i + 1, r)
            })
            .collect()
    }
}

impl CsvReport for SpectrumReport {
    fn header(&self) -> String {
        "rank,modulus".into()
    }

    fn rows(&self) -> Vec<(usize, Vec<f64>)> {
        self.moduli.iter().enumerate().map(|(i, &m)| (i + 1, vec![m])).collect()
    }
}

impl CsvReport for ForgetGateReport {
    fn header(&self) -> String {
        "rank,avg_forget_gate".into()
    }

    fn rows(&self) -> Vec<(usize, Vec<f64>)> {
        self.averages.iter().enumerate().map(|(i, &m)| (i + 1, vec![m])).collect()
    }
}

/// `%.12g`-style rendering; non-finite values become `inf`, `-inf`, `nan`.
pub fn format_number(v: f64) -> String {
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return "0".into();
    }
    let sci = format!("{v:.11e}");
    let (mantissa, exp) = sci.split_once('e').unwrap();
    let exp: i32 = exp.parse().unwrap();
    if (-5..12).contains(&exp) {
        let decimals = (11 - exp) as usize;
        trim_zeros(format!("{v:.decimals$}"))
    } else {
        format!("{}e{exp}", trim_zeros(mantissa.to_string()))
    }
}

fn trim_zeros(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

pub fn render_csv<R: CsvReport + ?Sized>(report: &R) -> String {
    let mut out = report.header();
    out.push('\n');
    for (i, row) in report.rows() {
        let _ = write!(out, "{i}");
        for v in row {
            out.push(',');
            out.push_str(&format_number(v));
        }
        out.push('\n');
    }
    out
}

pub fn export_csv<R: CsvReport + ?Sized>(report: &R, path: &Path) -> Result<()> {
    fs::write(path, render_csv(report)).map_err(|e| Error::io(path, e))
}
