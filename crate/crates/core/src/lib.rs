//! Basic-block execution-count prediction.
//!
//! [`cfg`] interprets parameterized control-flow programs and records how
//! often each block runs. [`trace`] reads those counts back, splits them and
//! normalizes them. [`pnn`] and [`brbpnn`] are the two count models, and
//! [`eval`] scores their predictions. [`experiment`] ties it together.

pub mod brbpnn;
pub mod cfg;
pub mod eval;
pub mod experiment;
pub mod nn;
pub mod pnn;
pub mod trace;
