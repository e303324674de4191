//! Library side of the `anyprec` command-line tool.

pub mod commands;
pub mod error;
pub mod footprint;
pub mod io;

pub use commands::{run, Cli};
pub use error::{CliError, Result};
