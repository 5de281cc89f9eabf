//! Training tasks: the adding problem and character-level language modelling.

pub mod adding;
pub mod text;

pub use adding::{adding_baselines, gen_adding, gen_adding_with, monte_carlo_baselines, mse_loss, AddingBaselines, AddingExample, MarkerPlacement};
pub use text::{bits_per_character, char_batches, char_windows, softmax_xent, CharBatch, CharCorpus, Vocabulary};
