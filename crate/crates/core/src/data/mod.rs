//! Dataset manifests, image files and the synthetic-face generator.

pub mod manifest;
pub mod netpbm;
pub mod synth;

pub use manifest::{load_manifest, BoundingBox, Manifest, Sample};
pub use netpbm::{read_pgm, read_ppm, write_pgm, write_ppm, RgbImage};
pub use synth::{generate_synthetic, SynthConfig};
