//! Library side of the `mdfa` command-line tool: configuration, the
//! train/ablate/sweep pipeline and raw-data conversion.

pub mod config;
pub mod convert;
pub mod pipeline;

use mdfa_core::Error;

/// Process exit status for a failed command.
pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Usage(_) | Error::Lookup { .. } => 2,
        Error::Numerical(_) => 4,
        _ => 3,
    }
}
