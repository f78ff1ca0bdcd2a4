//! # morphrom
//!
//! Reduced-order modelling of a parametrised geometry, from mesh morphing to
//! online evaluation:
//!
//! - [`ffd`]: free-form deformation of space through a Bernstein control lattice.
//! - [`mesh`]: structured quad meshes, vertex morphing and quality checks.
//! - [`fom`]: the full-order model, a cell-centred finite-volume solver for
//!   steady advection-diffusion with a boundary-flux output functional.
//! - [`pod`]: POD bases by one-sided Jacobi SVD or by the method of snapshots.
//! - [`podi`]: Delaunay triangulation of the parameter plane and interpolation
//!   of POD coefficients.
//! - [`ddpod`]: hybrid full-order/POD solves coupled by Schwarz iteration.
//! - [`sampling`]: leave-one-out error indicators and greedy enrichment.
//! - [`pipeline`]: run configuration, the on-disk snapshot store and the
//!   offline/eval/report commands.
//!
//! Snapshots are not mean-centred and all inner products are plain Euclidean
//! products over cell values.

// `!(x > 0.0)` style guards are meant to reject NaN as well
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop)]

pub mod ddpod;
pub mod error;
pub mod ffd;
pub mod fom;
pub(crate) mod linalg;
pub mod mesh;
pub mod pipeline;
pub mod pod;
pub mod podi;
pub mod sampling;

pub use error::{Error, Result};
