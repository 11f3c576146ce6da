//! Library surface behind the `placement` binary: fixture replays, CSV
//! emission, and the verify/rmse subcommand logic live here so integration
//! tests can drive them without spawning processes.

pub mod output;
pub mod replay;
pub mod verify;
