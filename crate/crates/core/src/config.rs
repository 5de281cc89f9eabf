//! Experiment configuration files.
//!
//! TOML with one table per module; every key is optional and unknown keys
//! are rejected. Values missing from the file take the task defaults of
//! [`ExperimentConfig::new`].
//!
//! ```toml
//! [experiment]
//! task = "adding"            # adding | char_lm
//! cell = "irnn"
//! hidden_size = 100
//! seq_len = 100
//! batch_size = 16
//! seeds = [0, 1, 2]
//! eval_horizon = 1000        # 0 disables horizon diagnostics
//! eval_sequences = 8
//! carry_state = false
//! init_scale = 0.01
//! forget_bias = 1.0
//!
//! [regularizer]
//! variant = "norm_stabilizer"
//! beta = 1.0
//! target = "hidden"          # hidden | memory_cell
//! weight_noise_sigma = 0.0
//! dropout_p = 0.0
//! skip_first_term = false
//!
//! [train]
//! optimizer = "adam"         # sgd_momentum | adam
//! learning_rate = 0.01
//! momentum = 0.99
//! clip_threshold = 1.0
//! max_epochs = 1000
//! patience = 25
//! adam_beta1 = 0.9
//! adam_beta2 = 0.999
//! adam_eps = 1e-8
//!
//! [adding]
//! train_examples = 10000
//! dev_examples = 1000
//! test_examples = 1000
//! marker_placement = "anywhere"   # anywhere | split_halves
//!
//! [char_lm]
//! corpus = "data/moby_dick_ch1-14.txt"
//! train_fraction = 0.9
//! dev_fraction = 0.05
//! ```

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Deserialize;
use toml::Spanned;

use crate::cells::CellKind;
use crate::error::{Error, Result};
use crate::experiment::{ExperimentConfig, TaskKind};
use crate::tasks::MarkerPlacement;

type Field<T> = Option<Spanned<T>>;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(default)]
    experiment: RawExperiment,
    #[serde(default)]
    regularizer: RawRegularizer,
    #[serde(default)]
    train: RawTrain,
    #[serde(default)]
    adding: RawAdding,
    #[serde(default)]
    char_lm: RawCharLm,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawExperiment {
    task: Field<String>,
    cell: Field<String>,
    hidden_size: Field<usize>,
    seq_len: Field<usize>,
    batch_size: Field<usize>,
    seeds: Field<Vec<u64>>,
    eval_horizon: Field<usize>,
    eval_sequences: Field<usize>,
    carry_state: Field<bool>,
    init_scale: Field<f64>,
    forget_bias: Field<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRegularizer {
    variant: Field<String>,
    beta: Field<f64>,
    target: Field<String>,
    weight_noise_sigma: Field<f64>,
    dropout_p: Field<f64>,
    skip_first_term: Field<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTrain {
    optimizer: Field<String>,
    learning_rate: Field<f64>,
    momentum: Field<f64>,
    clip_threshold: Field<f64>,
    max_epochs: Field<usize>,
    patience: Field<usize>,
    adam_beta1: Field<f64>,
    adam_beta2: Field<f64>,
    adam_eps: Field<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAdding {
    train_examples: Field<usize>,
    dev_examples: Field<usize>,
    test_examples: Field<usize>,
    marker_placement: Field<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCharLm {
    corpus: Field<String>,
    train_fraction: Field<f64>,
    dev_fraction: Field<f64>,
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

struct Ctx<'a> {
    text: &'a str,
}

impl Ctx<'_> {
    fn err(&self, span: std::ops::Range<usize>, e: impl ToString) -> Error {
        Error::Config {
            line: line_of(self.text, span.start),
            msg: e.to_string(),
        }
    }

    fn set<T: Clone>(&self, dst: &mut T, src: &Field<T>) {
        if let Some(v) = src {
            *dst = v.get_ref().clone();
        }
    }

    fn parse<T: FromStr<Err = Error>>(&self, dst: &mut T, src: &Field<String>) -> Result<()> {
        if let Some(v) = src {
            *dst = v.get_ref().parse().map_err(|e| self.err(v.span(), e))?;
        }
        Ok(())
    }
}

fn parse_placement(s: &str) -> Result<MarkerPlacement> {
    match s.trim() {
        "anywhere" => Ok(MarkerPlacement::Anywhere),
        "split_halves" => Ok(MarkerPlacement::SplitHalves),
        other => Err(Error::Parameter(format!("unknown marker placement `{other}`"))),
    }
}

/// Parse and validate a configuration. Relative corpus paths are resolved
/// against `base_dir` when given.
pub fn parse_config(text: &str, base_dir: Option<&Path>) -> Result<ExperimentConfig> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| Error::Config {
        line: e.span().map_or(0, |s| line_of(text, s.start)),
        msg: e.message().to_string(),
    })?;
    let cx = Ctx { text };
    let mut task = TaskKind::Adding;
    cx.parse(&mut task, &raw.experiment.task)?;
    let mut c = ExperimentConfig::new(task);

    let e = &raw.experiment;
    cx.parse(&mut c.cell, &e.cell)?;
    cx.set(&mut c.hidden_size, &e.hidden_size);
    cx.set(&mut c.seq_len, &e.seq_len);
    cx.set(&mut c.batch_size, &e.batch_size);
    cx.set(&mut c.seeds, &e.seeds);
    cx.set(&mut c.eval_horizon, &e.eval_horizon);
    cx.set(&mut c.eval_sequences, &e.eval_sequences);
    cx.set(&mut c.carry_state, &e.carry_state);
    cx.set(&mut c.init.scale, &e.init_scale);
    cx.set(&mut c.init.forget_bias, &e.forget_bias);

    let r = &raw.regularizer;
    cx.parse(&mut c.regularizer.variant, &r.variant)?;
    cx.set(&mut c.regularizer.beta, &r.beta);
    cx.parse(&mut c.regularizer.target, &r.target)?;
    cx.set(&mut c.regularizer.weight_noise_sigma, &r.weight_noise_sigma);
    cx.set(&mut c.regularizer.dropout_p, &r.dropout_p);
    cx.set(&mut c.regularizer.skip_first_term, &r.skip_first_term);

    let t = &raw.train;
    cx.parse(&mut c.train.optimizer, &t.optimizer)?;
    cx.set(&mut c.train.learning_rate, &t.learning_rate);
    cx.set(&mut c.train.momentum, &t.momentum);
    cx.set(&mut c.train.clip_threshold, &t.clip_threshold);
    cx.set(&mut c.train.max_epochs, &t.max_epochs);
    cx.set(&mut c.train.patience, &t.patience);
    cx.set(&mut c.train.adam_beta1, &t.adam_beta1);
    cx.set(&mut c.train.adam_beta2, &t.adam_beta2);
    cx.set(&mut c.train.adam_eps, &t.adam_eps);

    let a = &raw.adding;
    cx.set(&mut c.adding.train_examples, &a.train_examples);
    cx.set(&mut c.adding.dev_examples, &a.dev_examples);
    cx.set(&mut c.adding.test_examples, &a.test_examples);
    if let Some(p) = &a.marker_placement {
        c.adding.placement = parse_placement(p.get_ref()).map_err(|e| cx.err(p.span(), e))?;
    }

    let l = &raw.char_lm;
    if let Some(p) = &l.corpus {
        let path = PathBuf::from(p.get_ref());
        c.char_lm.corpus = Some(match base_dir {
            Some(base) if path.is_relative() => base.join(path),
            _ => path,
        });
    }
    cx.set(&mut c.char_lm.train_fraction, &l.train_fraction);
    cx.set(&mut c.char_lm.dev_fraction, &l.dev_fraction);

    c.validate()?;
    Ok(c)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text, path.parent())
}

/// Values given on the command line, applied after the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub beta: Option<f64>,
    pub cell: Option<CellKind>,
    pub corpus: Option<PathBuf>,
}

impl Overrides {
    pub fn apply(&self, config: &mut ExperimentConfig) -> Result<()> {
        if let Some(s) = self.seed {
            config.seeds = vec![s];
        }
        if let Some(b) = self.beta {
            config.regularizer.beta = b;
        }
        if let Some(c) = self.cell {
            config.cell = c;
        }
        if let Some(p) = &self.corpus {
            config.char_lm.corpus = Some(p.clone());
        }
        config.validate()
    }
}
