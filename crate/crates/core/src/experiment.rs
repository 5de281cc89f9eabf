//! Training loop, evaluation, diagnostics output, and multi-seed runs.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::analysis::{eig_moduli, export_csv, forget_gate_stats, format_number, norm_trajectory};
use crate::cells::{CellInit, CellKind, CellParams};
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::model::{Model, Sequence, State, Targets};
use crate::optim::{clip_gradients, early_stop, nan_rollback, ClipOutcome, TrainConfig, TrainerState};
use crate::params::Parameters;
use crate::regularizers::{apply_weight_noise, RegularizerSpec};
use crate::rng::Rng;
use crate::tasks::{gen_adding_with, AddingExample, CharCorpus, MarkerPlacement};

/// Learning rates below this after repeated rollbacks mark the run failed.
pub const MIN_LEARNING_RATE: f64 = 1e-12;

// Independent random streams derived from a run's seed.
const STREAM_INIT: u64 = 1;
const STREAM_DATA: u64 = 2;
const STREAM_SHUFFLE: u64 = 3;
const STREAM_NOISE: u64 = 4;
const STREAM_EVAL: u64 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    Adding,
    CharLm,
}

impl FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "adding" => Ok(TaskKind::Adding),
            "char_lm" => Ok(TaskKind::CharLm),
            other => Err(Error::param(format!("unknown task `{other}`"))),
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaskKind::Adding => "adding",
            TaskKind::CharLm => "char_lm",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AddingSettings {
    pub train_examples: usize,
    pub dev_examples: usize,
    pub test_examples: usize,
    pub placement: MarkerPlacement,
}

impl Default for AddingSettings {
    fn default() -> Self {
        AddingSettings {
            train_examples: 10_000,
            dev_examples: 1000,
            test_examples: 1000,
            placement: MarkerPlacement::Anywhere,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CharLmSettings {
    pub corpus: Option<PathBuf>,
    pub train_fraction: f64,
    pub dev_fraction: f64,
}

impl Default for CharLmSettings {
    fn default() -> Self {
        CharLmSettings {
            corpus: None,
            train_fraction: 0.9,
            dev_fraction: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub task: TaskKind,
    pub cell: CellKind,
    pub hidden_size: usize,
    pub regularizer: RegularizerSpec,
    pub train: TrainConfig,
    pub seq_len: usize,
    pub batch_size: usize,
    pub seeds: Vec<u64>,
    /// Steps for the out-of-horizon diagnostics; 0 disables them.
    pub eval_horizon: usize,
    pub eval_sequences: usize,
    /// Carry hidden state across consecutive windows (char-LM only).
    pub carry_state: bool,
    pub init: CellInit,
    pub adding: AddingSettings,
    pub char_lm: CharLmSettings,
}

impl ExperimentConfig {
    /// Task-specific defaults.
    pub fn new(task: TaskKind) -> Self {
        let (cell, hidden_size, seq_len, batch_size, train) = match task {
            TaskKind::Adding => (
                CellKind::Irnn,
                100,
                100,
                16,
                TrainConfig {
                    learning_rate: 0.01,
                    ..TrainConfig::default()
                },
            ),
            TaskKind::CharLm => (CellKind::Lstm, 128, 50, 32, TrainConfig::default()),
        };
        ExperimentConfig {
            task,
            cell,
            hidden_size,
            regularizer: RegularizerSpec::default(),
            train,
            seq_len,
            batch_size,
            seeds: vec![0],
            eval_horizon: 0,
            eval_sequences: 8,
            carry_state: false,
            init: CellInit::default(),
            adding: AddingSettings::default(),
            char_lm: CharLmSettings::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("hidden_size", self.hidden_size),
            ("seq_len", self.seq_len),
            ("batch_size", self.batch_size),
            ("eval_sequences", self.eval_sequences),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::param(format!("{name} must be >= 1")));
            }
        }
        if self.seeds.is_empty() {
            return Err(Error::param("seeds must not be empty"));
        }
        if self.eval_horizon > 0 && self.eval_horizon < self.seq_len {
            return Err(Error::param(format!(
                "eval_horizon {} is shorter than seq_len {}",
                self.eval_horizon, self.seq_len
            )));
        }
        if !(self.init.scale >= 0.0 && self.init.scale.is_finite()) {
            return Err(Error::param("init_scale must be finite and >= 0"));
        }
        self.train.validate()?;
        self.regularizer.validate(self.cell.is_lstm())?;
        match self.task {
            TaskKind::Adding => {
                if self.seq_len < 2 {
                    return Err(Error::param("adding task needs seq_len >= 2"));
                }
                if self.carry_state {
                    return Err(Error::param("carry_state applies to char_lm only"));
                }
                let a = &self.adding;
                if a.train_examples == 0 || a.dev_examples == 0 || a.test_examples == 0 {
                    return Err(Error::param("adding example counts must be >= 1"));
                }
            }
            TaskKind::CharLm => {
                let c = &self.char_lm;
                if !(c.train_fraction > 0.0 && c.dev_fraction > 0.0 && c.train_fraction + c.dev_fraction < 1.0) {
                    return Err(Error::param("char_lm split fractions must be positive and sum below 1"));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Dev,
    Test,
}

/// Materialized data for one run.
#[derive(Debug, Clone)]
pub enum TaskData {
    Adding {
        train: Vec<AddingExample>,
        dev: Vec<AddingExample>,
        test: Vec<AddingExample>,
    },
    CharLm {
        corpus: CharCorpus,
        seq_len: usize,
    },
}

impl TaskData {
    /// Adding-task splits drawn from the run seed.
    pub fn adding(config: &ExperimentConfig, seed: u64) -> Result<Self> {
        let mut rng = Rng::new(seed).derive(STREAM_DATA);
        let a = &config.adding;
        let mut draw = |count| gen_adding_with(&mut rng, config.seq_len, count, a.placement);
        Ok(TaskData::Adding {
            train: draw(a.train_examples)?,
            dev: draw(a.dev_examples)?,
            test: draw(a.test_examples)?,
        })
    }

    pub fn char_lm(config: &ExperimentConfig, text: &[u8]) -> Result<Self> {
        let c = &config.char_lm;
        let corpus = CharCorpus::from_bytes(text, c.train_fraction, c.dev_fraction)?;
        for (name, ids) in [("train", &corpus.train), ("dev", &corpus.dev), ("test", &corpus.test)] {
            if ids.len() < config.seq_len + 1 {
                return Err(Error::param(format!(
                    "{name} split has {} symbols, need at least seq_len + 1 = {}",
                    ids.len(),
                    config.seq_len + 1
                )));
            }
        }
        Ok(TaskData::CharLm {
            corpus,
            seq_len: config.seq_len,
        })
    }

    pub fn input_dim(&self) -> usize {
        match self {
            TaskData::Adding { .. } => 2,
            TaskData::CharLm { corpus, .. } => corpus.vocab.size(),
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            TaskData::Adding { .. } => 1,
            TaskData::CharLm { corpus, .. } => corpus.vocab.size(),
        }
    }

    fn lm_ids(&self, split: Split) -> Option<&[usize]> {
        match self {
            TaskData::CharLm { corpus, .. } => Some(match split {
                Split::Train => &corpus.train,
                Split::Dev => &corpus.dev,
                Split::Test => &corpus.test,
            }),
            TaskData::Adding { .. } => None,
        }
    }

    /// Number of sequences (examples or windows) in a split.
    pub fn len(&self, split: Split) -> usize {
        match self {
            TaskData::Adding { train, dev, test } => match split {
                Split::Train => train.len(),
                Split::Dev => dev.len(),
                Split::Test => test.len(),
            },
            TaskData::CharLm { seq_len, .. } => (self.lm_ids(split).unwrap().len() - 1) / seq_len,
        }
    }

    pub fn is_empty(&self, split: Split) -> bool {
        self.len(split) == 0
    }

    pub fn sequence(&self, split: Split, index: usize) -> Sequence<'_> {
        match self {
            TaskData::Adding { train, dev, test } => {
                let ex = match split {
                    Split::Train => &train[index],
                    Split::Dev => &dev[index],
                    Split::Test => &test[index],
                };
                Sequence {
                    inputs: ex.inputs(),
                    targets: Targets::Final(ex.target),
                }
            }
            TaskData::CharLm { corpus, seq_len } => {
                let ids = self.lm_ids(split).unwrap();
                let s = index * seq_len;
                Sequence::one_hot(&ids[s..s + seq_len], &ids[s + 1..s + seq_len + 1], corpus.vocab.size())
            }
        }
    }
}

/// Mean loss over a batch and the matching gradient.
#[derive(Debug, Clone)]
pub struct BatchLoss {
    /// Mean of data loss plus penalty; non-finite signals a NaN event.
    pub loss: f64,
    pub data_loss: f64,
    pub penalty: f64,
    pub grads: Model,
    pub final_states: Vec<State>,
}

impl BatchLoss {
    pub fn is_nan_event(&self) -> bool {
        !self.loss.is_finite()
    }
}

/// Task loss plus penalty averaged over `batch`, with gradients summed
/// per sequence and then averaged. `states` optionally seeds each
/// sequence's initial state.
pub fn total_loss(
    model: &Model,
    batch: &[Sequence],
    spec: &RegularizerSpec,
    mut dropout: Option<&mut Rng>,
    states: Option<&[State]>,
) -> Result<BatchLoss> {
    if batch.is_empty() {
        return Err(Error::param("empty batch"));
    }
    if let Some(s) = states {
        if s.len() != batch.len() {
            return Err(Error::Structural(format!("{} states for {} sequences", s.len(), batch.len())));
        }
    }
    let mut acc = model.zeros_like();
    let (mut data, mut penalty) = (0.0, 0.0);
    let mut final_states = Vec::with_capacity(batch.len());
    for (k, seq) in batch.iter().enumerate() {
        let state = states.map(|s| &s[k]);
        let drop = match dropout.as_deref_mut() {
            Some(rng) if spec.dropout_p > 0.0 => Some((rng, spec.dropout_p)),
            _ => None,
        };
        let (eval, grads) = model.gradients(seq, spec, state, drop)?;
        data += eval.data_loss;
        penalty += eval.penalty;
        for (a, g) in acc.tensors_mut().into_iter().zip(grads.tensors()) {
            a.add_assign(g)?;
        }
        final_states.push(eval.final_state());
    }
    let scale = 1.0 / batch.len() as f64;
    for t in acc.tensors_mut() {
        t.scale(scale);
    }
    let (data, penalty) = (data * scale, penalty * scale);
    Ok(BatchLoss {
        loss: data + penalty,
        data_loss: data,
        penalty,
        grads: acc,
        final_states,
    })
}

/// Dev/test metric: MSE for the adding task, bits per character for LM.
/// With `carry_state`, LM windows are evaluated as one continuous stream.
pub fn evaluate(model: &Model, data: &TaskData, split: Split, carry_state: bool) -> Result<f64> {
    let spec = RegularizerSpec::default();
    let mut total = 0.0;
    let mut count = 0usize;
    let mut state: Option<State> = None;
    for i in 0..data.len(split) {
        let seq = data.sequence(split, i);
        let eval = model.evaluate(&seq, &spec, state.as_ref())?;
        total += eval.data_loss * eval.scored as f64;
        count += eval.scored;
        if carry_state {
            state = Some(eval.final_state());
        }
    }
    let mean = total / count as f64;
    Ok(match data {
        TaskData::Adding { .. } => mean,
        TaskData::CharLm { .. } => mean / std::f64::consts::LN_2,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EpochOutcome {
    Completed { train_loss: f64, dev_metric: f64 },
    /// A NaN event at this batch; the epoch will be retried.
    RolledBack { batch: usize },
    /// The learning rate fell below [`MIN_LEARNING_RATE`].
    Failed,
}

/// One seed's training run.
pub struct Trainer<'a> {
    config: &'a ExperimentConfig,
    data: &'a TaskData,
    seed: u64,
    pub state: TrainerState<Model>,
    pub dev_history: Vec<f64>,
    /// Best dev metric, its parameters, and the epoch count at which it was seen.
    pub best: Option<(f64, Model, usize)>,
    /// Force a NaN loss at `(epoch, batch)`, once.
    pub nan_injection: Option<(usize, usize)>,
    pub failed: bool,
}

impl<'a> Trainer<'a> {
    pub fn new(config: &'a ExperimentConfig, data: &'a TaskData, seed: u64) -> Result<Self> {
        let mut rng = Rng::new(seed).derive(STREAM_INIT);
        let model = Model::init(
            &mut rng,
            config.cell,
            data.input_dim(),
            config.hidden_size,
            data.output_dim(),
            config.init,
        )?;
        Ok(Trainer {
            config,
            data,
            seed,
            state: TrainerState::new(model, config.train.optimizer, config.train.learning_rate),
            dev_history: Vec::new(),
            best: None,
            nan_injection: None,
            failed: false,
        })
    }

    /// Batches of training-sequence indices for `epoch`. The order depends
    /// on the epoch index only, so a retried epoch sees the same batches.
    pub fn epoch_batches(&self, epoch: usize) -> Vec<Vec<usize>> {
        let n = self.data.len(Split::Train);
        let b = self.config.batch_size;
        if self.config.carry_state {
            // lane `l` walks its own contiguous stretch of windows
            let lanes = b.min(n);
            let per_lane = n / lanes;
            return (0..per_lane)
                .map(|k| (0..lanes).map(|l| l * per_lane + k).collect())
                .collect();
        }
        let mut order: Vec<usize> = (0..n).collect();
        Rng::new(self.seed)
            .derive(STREAM_SHUFFLE)
            .derive(epoch as u64)
            .shuffle(&mut order);
        order.chunks(b).map(<[usize]>::to_vec).collect()
    }

    fn rollback(&mut self) -> bool {
        nan_rollback(&mut self.state);
        self.state.learning_rate >= MIN_LEARNING_RATE
    }

    pub fn run_epoch(&mut self) -> Result<EpochOutcome> {
        let epoch = self.state.completed_epochs;
        let spec = self.config.regularizer;
        let mut states: Option<Vec<State>> = None;
        let mut loss_sum = 0.0;
        let batches = self.epoch_batches(epoch);
        for (b, idxs) in batches.iter().enumerate() {
            let seqs: Vec<Sequence> = idxs.iter().map(|&i| self.data.sequence(Split::Train, i)).collect();
            let mut rng = Rng::new(self.seed)
                .derive(STREAM_NOISE)
                .derive(epoch as u64)
                .derive(b as u64);
            let noise = apply_weight_noise(&mut self.state.params, spec.weight_noise_sigma, &mut rng);
            let result = total_loss(&self.state.params, &seqs, &spec, Some(&mut rng), states.as_deref());
            noise.restore(&mut self.state.params);
            let mut batch = result?;
            if self.nan_injection == Some((epoch, b)) {
                self.nan_injection = None;
                batch.loss = f64::NAN;
            }
            let clip = if batch.is_nan_event() {
                ClipOutcome::NonFinite
            } else {
                clip_gradients(&mut batch.grads.tensors_mut(), self.config.train.clip_threshold)?
            };
            if clip == ClipOutcome::NonFinite {
                return Ok(if self.rollback() {
                    EpochOutcome::RolledBack { batch: b }
                } else {
                    self.failed = true;
                    EpochOutcome::Failed
                });
            }
            loss_sum += batch.loss;
            let lr = self.state.learning_rate;
            self.state
                .optimizer
                .apply(&mut self.state.params, &batch.grads, lr, &self.config.train)?;
            if self.config.carry_state {
                states = Some(batch.final_states);
            }
        }
        let dev = evaluate(&self.state.params, self.data, Split::Dev, self.config.carry_state)?;
        if dev.is_nan() {
            return Ok(if self.rollback() {
                EpochOutcome::RolledBack { batch: batches.len() }
            } else {
                self.failed = true;
                EpochOutcome::Failed
            });
        }
        self.state.commit_epoch();
        self.dev_history.push(dev);
        if self.best.as_ref().map_or(dev.is_finite(), |(b, _, _)| dev < *b) {
            self.best = Some((dev, self.state.params.clone(), self.state.completed_epochs));
        }
        Ok(EpochOutcome::Completed {
            train_loss: loss_sum / batches.len().max(1) as f64,
            dev_metric: dev,
        })
    }

    /// Train until `max_epochs`, early stopping, or failure.
    pub fn train(&mut self) -> Result<()> {
        while self.state.completed_epochs < self.config.train.max_epochs {
            match self.run_epoch()? {
                EpochOutcome::Completed { .. } => {
                    if early_stop(&self.dev_history, self.config.train.patience) {
                        break;
                    }
                }
                EpochOutcome::RolledBack { .. } => {}
                EpochOutcome::Failed => break,
            }
        }
        Ok(())
    }

    /// Best-dev parameters, or the current ones if no epoch completed.
    pub fn best_model(&self) -> &Model {
        self.best.as_ref().map_or(&self.state.params, |(_, m, _)| m)
    }
}

/// One summary row.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedResult {
    pub seed: u64,
    pub beta: f64,
    pub cell: CellKind,
    pub dev_metric: f64,
    pub test_metric: f64,
    pub epochs: usize,
    pub rollbacks: usize,
    pub failed: bool,
    pub best_checkpoint: Option<PathBuf>,
    pub reports: Vec<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub rows: Vec<SeedResult>,
}

pub const SUMMARY_HEADER: &str = "seed,beta,cell,dev_metric,test_metric,epochs,rollbacks";

/// Summary CSV; failed runs carry `failed` in both metric columns.
pub fn summary_csv(rows: &[SeedResult]) -> String {
    let mut out = format!("{SUMMARY_HEADER}\n");
    for r in rows {
        let (dev, test) = if r.failed {
            ("failed".to_string(), "failed".to_string())
        } else {
            (format_number(r.dev_metric), format_number(r.test_metric))
        };
        out.push_str(&format!(
            "{},{},{},{dev},{test},{},{}\n",
            r.seed,
            format_number(r.beta),
            r.cell,
            r.epochs,
            r.rollbacks
        ));
    }
    out
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Sequences of at least `horizon` steps for the out-of-horizon diagnostics.
/// For LM they are consecutive stretches of test, then dev, then train text.
pub struct HorizonData {
    ids: Vec<usize>,
    adding: Vec<AddingExample>,
    horizon: usize,
    vocab: usize,
}

impl HorizonData {
    pub fn new(config: &ExperimentConfig, data: &TaskData, seed: u64, horizon: usize) -> Result<Self> {
        let count = config.eval_sequences;
        match data {
            TaskData::Adding { .. } => {
                let mut rng = Rng::new(seed).derive(STREAM_EVAL);
                Ok(HorizonData {
                    ids: Vec::new(),
                    adding: gen_adding_with(&mut rng, horizon.max(2), count, config.adding.placement)?,
                    horizon,
                    vocab: 0,
                })
            }
            TaskData::CharLm { corpus, .. } => {
                let mut ids: Vec<usize> = corpus.test.iter().chain(&corpus.dev).chain(&corpus.train).copied().collect();
                let available = (ids.len() - 1) / horizon;
                if available == 0 {
                    return Err(Error::param(format!(
                        "corpus of {} symbols is too short for horizon {horizon}",
                        ids.len()
                    )));
                }
                ids.truncate(count.min(available) * horizon + 1);
                Ok(HorizonData {
                    ids,
                    adding: Vec::new(),
                    horizon,
                    vocab: corpus.vocab.size(),
                })
            }
        }
    }

    pub fn sequences(&self) -> Vec<Sequence<'_>> {
        if !self.adding.is_empty() {
            return self
                .adding
                .iter()
                .map(|ex| Sequence {
                    inputs: ex.inputs(),
                    targets: Targets::Final(ex.target),
                })
                .collect();
        }
        let h = self.horizon;
        (0..(self.ids.len() - 1) / h)
            .map(|k| Sequence::one_hot(&self.ids[k * h..(k + 1) * h], &self.ids[k * h + 1..(k + 1) * h + 1], self.vocab))
            .collect()
    }
}

/// Write the horizon, spectrum, and forget-gate reports that apply to
/// `model` into `dir`.
pub fn write_diagnostics(
    config: &ExperimentConfig,
    data: &TaskData,
    model: &Model,
    seed: u64,
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    if config.eval_horizon > 0 {
        let hd = HorizonData::new(config, data, seed, config.eval_horizon)?;
        let report = norm_trajectory(model, &hd.sequences(), config.eval_horizon)?;
        let path = dir.join("norm_trajectory.csv");
        export_csv(&report, &path)?;
        written.push(path);
    }
    match &model.cell {
        CellParams::Srnn(p) => {
            let path = dir.join("spectrum.csv");
            export_csv(&eig_moduli(&p.w_hh)?, &path)?;
            written.push(path);
        }
        CellParams::Lstm(_) => {
            let n = data.len(Split::Test).min(config.eval_sequences);
            let seqs: Vec<Sequence> = (0..n).map(|i| data.sequence(Split::Test, i)).collect();
            let path = dir.join("forget_gates.csv");
            export_csv(&forget_gate_stats(model, &seqs)?, &path)?;
            written.push(path);
        }
    }
    Ok(written)
}

/// Train one seed on prepared data and evaluate the best-dev model.
pub fn run_seed(config: &ExperimentConfig, data: &TaskData, seed: u64, out_dir: Option<&Path>) -> Result<SeedResult> {
    let mut run_config = config.clone();
    run_config.train.seed = seed;
    let mut trainer = Trainer::new(&run_config, data, seed)?;
    trainer.train()?;
    let model = trainer.best_model();
    let test_metric = evaluate(model, data, Split::Test, config.carry_state)?;
    let dev_metric = trainer.best.as_ref().map_or(f64::NAN, |(d, _, _)| *d);
    let mut result = SeedResult {
        seed,
        beta: config.regularizer.beta,
        cell: config.cell,
        dev_metric,
        test_metric,
        epochs: trainer.state.completed_epochs,
        rollbacks: trainer.state.rollbacks,
        failed: trainer.failed || trainer.best.is_none(),
        best_checkpoint: None,
        reports: Vec::new(),
    };
    if let Some(root) = out_dir {
        let dir = root.join(format!("seed_{seed}"));
        create_dir(&dir)?;
        let epoch = trainer.best.as_ref().map_or(0, |(_, _, e)| *e) as u64;
        let ck = Checkpoint::capture(model, None, epoch, trainer.state.learning_rate, &Rng::new(seed));
        let path = dir.join("best.ckpt");
        ck.save(&path)?;
        result.best_checkpoint = Some(path);
        if !result.failed {
            result.reports = write_diagnostics(config, data, model, seed, &dir)?;
        }
    }
    Ok(result)
}

/// Load the corpus named in the config.
pub fn read_corpus(config: &ExperimentConfig) -> Result<Vec<u8>> {
    let path = config
        .char_lm
        .corpus
        .as_deref()
        .ok_or_else(|| Error::param("char_lm task needs a corpus path"))?;
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Every seed of `config`, each with its own model and, for the adding
/// task, its own data. Writes `summary.csv` when `out_dir` is given.
pub fn run_experiment(config: &ExperimentConfig, out_dir: Option<&Path>) -> Result<ExperimentResult> {
    config.validate()?;
    if let Some(dir) = out_dir {
        create_dir(dir)?;
    }
    let shared = match config.task {
        TaskKind::CharLm => {
            let data = TaskData::char_lm(config, &read_corpus(config)?)?;
            if let (Some(dir), TaskData::CharLm { corpus, .. }) = (out_dir, &data) {
                corpus.vocab.write_sidecar(&dir.join("vocab.tsv"))?;
            }
            Some(data)
        }
        TaskKind::Adding => None,
    };
    let mut rows = Vec::with_capacity(config.seeds.len());
    for &seed in &config.seeds {
        let owned;
        let data = match &shared {
            Some(d) => d,
            None => {
                owned = TaskData::adding(config, seed)?;
                &owned
            }
        };
        rows.push(run_seed(config, data, seed, out_dir)?);
    }
    if let Some(dir) = out_dir {
        write_file(&dir.join("summary.csv"), &summary_csv(&rows))?;
    }
    Ok(ExperimentResult { rows })
}

/// `run_experiment` once per β, in the given order. Each β writes into
/// `beta_<β>/` and the combined table goes to `summary.csv`.
pub fn sweep(config: &ExperimentConfig, betas: &[f64], out_dir: Option<&Path>) -> Result<Vec<(f64, ExperimentResult)>> {
    if betas.is_empty() {
        return Err(Error::param("sweep needs at least one beta"));
    }
    let mut out = Vec::with_capacity(betas.len());
    for &beta in betas {
        let mut c = config.clone();
        c.regularizer.beta = beta;
        let dir = out_dir.map(|d| d.join(format!("beta_{}", format_number(beta))));
        out.push((beta, run_experiment(&c, dir.as_deref())?));
    }
    if let Some(dir) = out_dir {
        let rows: Vec<SeedResult> = out.iter().flat_map(|(_, r)| r.rows.clone()).collect();
        write_file(&dir.join("summary.csv"), &summary_csv(&rows))?;
    }
    Ok(out)
}
