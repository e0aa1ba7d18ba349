//! Desk-scale laboratory for comparing differentially private training
//! pipelines on synthetic multi-label text classification tasks.
//!
//! The library trains small low-rank-adapted models four ways (private
//! training on real data, private synthetic-data generation followed by
//! non-private training, budget-split generation plus distillation from a
//! private teacher, and a non-private ceiling), then scores each student on
//! held-out real data and audits it with a membership-inference attack.
//! Privacy is accounted with a Renyi-divergence accountant for the
//! subsampled Gaussian mechanism, and every run is deterministic given its
//! seeds.
//!
//! Module map:
//!
//! * [`corpus`]: seeded synthetic multi-label corpora with deterministic
//!   splits, plus a line-based persistence format.
//! * [`accountant`]: Renyi accounting, composition, conversion to
//!   `(epsilon, delta)`, and noise calibration by bisection.
//! * [`model`]: low-rank-adapted linear/one-hidden-layer models, loss
//!   functions, exact per-example gradients, and a binary parameter
//!   container.
//! * [`dp_optim`]: per-example clipping, Poisson subsampling, noisy
//!   momentum SGD with early stopping, and a non-private optimizer pair;
//!   every run yields a [`dp_optim::TrainingTranscript`].
//! * [`distill`]: nucleus sampling, synthetic-corpus generation, and the
//!   distillation loss.
//! * [`metrics`]: threshold tuning, micro/macro F1, Hamming loss,
//!   micro-averaged AUPRC.
//! * [`mia`]: membership-attack features, per-feature AUCs, and a
//!   cross-validated logistic ensemble attacker.
//! * [`pipelines`]: the four end-to-end pipelines over a shared corpus.
//! * [`experiment`]: resumable (pipeline, epsilon, seed) grids persisted
//!   as CSV.
//! * [`report`]: seed-aggregated summaries with pass/fail checks.
//!
//! Runnable walkthroughs live in `examples/`:
//!
//! ```text
//! cargo run --example calibrate_noise     # budget -> noise multiplier
//! cargo run --example generate_corpus     # corpus synthesis and persistence
//! cargo run --example dp_training         # one private training run
//! cargo run --example synthetic_notes     # generator + nucleus sampling
//! cargo run --example distillation        # split budget, teacher, student
//! cargo run --example membership_audit    # attack an overfit vs a private model
//! cargo run --example experiment_grid     # a small grid end to end
//! ```

pub mod accountant;
pub mod corpus;
pub mod distill;
pub mod dp_optim;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod mia;
pub mod model;
pub mod pipelines;
pub mod report;
pub mod stream;

pub use error::{Error, Result};
