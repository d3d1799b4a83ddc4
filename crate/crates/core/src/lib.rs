//! Reconstruction of dense 3D intraventricular velocity fields from sparse
//! samples.
//!
//! The crate is organised as a pipeline:
//!
//! * [`flowgen`] synthesizes ventricle geometries and divergence-free flow
//!   snapshots with a projection solver.
//! * [`datapipe`] normalizes snapshots, draws sparse masks, assembles network
//!   inputs, splits folds and owns the on-disk formats.
//! * [`tensorgrad`] provides tensors, a reverse-mode tape and 3-D operators.
//! * [`models`] builds the five-level hybrid-downsampling autoencoder and the
//!   four-level U-Net baseline.
//! * [`trainer`] runs Adam with cosine decay on the Huber loss and handles
//!   checkpoints.
//! * [`evalkit`] computes error metrics, velocity magnitudes and the ablation
//!   tables.

pub mod datapipe;
pub mod evalkit;
pub mod flowgen;
pub mod models;
pub mod tensorgrad;
pub mod trainer;

pub mod volume;

pub use volume::VolumeField;
