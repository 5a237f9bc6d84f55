//! Files, run directories, transports and the command line around
//! `drcal-core`.

pub mod cli;
pub mod error;
pub mod exec;
pub mod io;
pub mod net;
pub mod plot;
pub mod run;
pub mod sweep;

pub use error::Error;
pub use exec::Parallel;
