//! Desk-scale active-learning laboratory.
//!
//! Saliency maps from a small trained classifier are converted into
//! informativeness scores by several scorer families (histogram kurtosis,
//! radiomics-style features fused by Borda count, and self-supervised deep
//! saliency features), and an experiment engine measures how fast each
//! scorer's active-learning loop reaches fully-supervised performance.
//!
//! The crate is organized around the pipeline stages:
//!
//! * [`synthdata`] — seeded synthetic datasets, splits, and the label oracle
//! * [`nnet`] — the differentiable-network kernel (conv/dense layers, Adam,
//!   MC dropout, the saliency-map autoencoder)
//! * [`saliency`] — relevance-propagation, Grad-CAM and gradient×input maps
//! * [`features`] — classical scorers over saliency maps + Borda fusion
//! * [`deepsel`] — ordinal clustering, ΔAUC cluster ranking and the online
//!   random forest that scores unseen maps
//! * [`strategies`] — the uniform sample-selection scoring interface
//! * [`alloop`] — the active-learning engine and experiment battery
//! * [`segharness`] — the segmentation use case driven by a classifier proxy
//! * [`metrics`] — ROC AUC, nDCG, selection overlap, paired t-test

pub mod alloop;
pub mod config;
pub mod deepsel;
pub mod error;
pub mod features;
pub mod grid;
pub mod manifest;
pub mod metrics;
pub mod nnet;
pub mod rng;
pub mod saliency;
pub mod segharness;
pub mod strategies;
pub mod synthdata;

pub use error::{Error, Result};
pub use grid::{Grid, Mask};
