//! Account interaction graphs, TopK subgraph sampling, graph augmentation,
//! a hierarchical graph attention encoder, and joint contrastive + supervised
//! training for blockchain account identification.
//!
//! Pipeline overview:
//!
//! 1. [`graph`] ingests raw interaction records and builds the lightweight
//!    account interaction graph (merged EOA-to-EOA edges with `[times, amount]`
//!    features, contract-call node features).
//! 2. [`sampler`] extracts h-hop TopK neighborhood subgraphs around target
//!    accounts under one of three edge-statistic strategies.
//! 3. [`augment`] derives correlated views of subgraphs for contrastive
//!    training.
//! 4. [`hgate`] encodes subgraph batches with node-level attention layers and
//!    subgraph-level attentive pooling, on top of the [`autodiff`] tape.
//! 5. [`trainer`] jointly optimizes classification and subgraph contrast and
//!    evaluates with repeated stratified cross-validation.
//! 6. [`baselines`] provides the 16 manual account features plus a logistic
//!    regression reference classifier, and [`synth`] generates labeled
//!    behavior-pattern graphs for desk-scale experiments.

pub mod augment;
pub mod autodiff;
pub mod baselines;
pub mod graph;
pub mod hgate;
pub mod sampler;
pub mod synth;
pub mod trainer;
pub mod util;
