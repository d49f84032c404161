//! Detection and localization of UI display issues in app screenshots.
//!
//! The crate covers the whole pipeline:
//!
//! * [`imaging`]: RGB rasters, resizing, drawing, PNG I/O.
//! * [`hierarchy`]: Rico-style view hierarchies.
//! * [`augmentor`]: injecting labeled display issues into clean screenshots.
//! * [`dedup`]: ORB signatures and near-duplicate removal.
//! * [`nn`]: tensors and differentiable layers.
//! * [`owlnet`]: the detector network, training, evaluation, checkpoints.
//! * [`gradcam`]: gradient-weighted class activation maps.
//! * [`corpus`]: directory-level drivers used by the CLI.
//! * [`synth`]: procedurally generated app screens for demos and tests.

pub mod augmentor;
pub mod corpus;
pub mod dedup;
pub mod gradcam;
pub mod hierarchy;
pub mod imaging;
pub mod manifest;
pub mod nn;
pub mod owlnet;
pub mod synth;
