//! Boosted distillation of a deep residual teacher into a group of shallow
//! parallel students, plus a discrete-event simulator of serving such a
//! group on a GPU cluster.

pub mod nn;
pub mod rng;
pub mod distill;
pub mod perf;
pub mod sim;
