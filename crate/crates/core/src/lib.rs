//! Numerical laboratory for simultaneous homogenisation and dimension
//! reduction of thin periodic elastic plates, worked fibre by fibre.
//!
//! The pipeline: [`material`] fields on a periodic [`cell_mesh`], fibre
//! operators from [`assembly`], zero-mean correctors and corrector cascades in
//! [`cell_problems`], effective tensors and symbols in [`homogenised`], fibre
//! spectra in [`fiber_spectrum`], resolvent comparisons in [`resolvent_lab`],
//! and sweep orchestration with CSV/JSON output in [`sweep_io`].

pub mod assembly;
pub mod cell_mesh;
pub mod cell_problems;
pub mod dense;
pub mod fiber_spectrum;
pub mod fit;
pub mod homogenised;
pub mod material;
pub mod resolvent_lab;
pub mod sweep_io;
pub mod sparse;

pub use num_complex::Complex64 as C64;
