//! File formats, reports, parallel Monte Carlo and the command-line front end for
//! [`changeplane_core`].

pub mod cli;
pub mod error;
pub mod io;
pub mod mc;
pub mod report;

pub use changeplane_core as core;
pub use error::{AppError, ExitCode};
