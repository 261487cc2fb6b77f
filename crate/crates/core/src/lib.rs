//! Paper ECG image toolkit.
//!
//! * [`waveform`]: 12-lead records, labels, dataset manifests.
//! * [`render`]: 3×4 paper layout with grid, calibration pulses and labels.
//! * [`distort`]: seeded, replayable shadows, warps and photometric noise.
//! * [`rectify`]: paper detection, corner fitting, homography, CLAHE.
//! * [`metrics`]: AUROC, class weights, weighted BCE, cosine schedule, voting.
//! * [`cli`]: batch front-end used by the `paperecg` binary.

pub mod cli;
pub mod distort;
pub mod geometry;
pub mod metrics;
pub mod rectify;
pub mod render;
pub mod seeds;
pub mod synth;
pub mod waveform;

pub use distort::{apply_recipe, DistortionRecipe, DistortionStep};
pub use geometry::{solve_homography, Homography, Point, Quad};
pub use render::{render_record, GridConfig, PaperImage};
pub use waveform::{DatasetManifest, Diagnosis, DiagnosisVector, EcgRecord, Lead};
