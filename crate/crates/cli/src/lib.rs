//! Dataset plumbing and the command-line surface over the core toolkit:
//! synthetic data generation, the labeled-video file format, and the
//! `nlvc` subcommands (gen-data, train, eval, avg-checkpoints, quantize,
//! predict, ensemble).

mod commands;
pub mod dataset;
pub mod synth;

pub use commands::run;
