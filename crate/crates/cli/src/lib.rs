//! Library side of the `landsr` command: configuration, synthetic datasets
//! and the reconstruct/sweep workflows.

pub mod config;
pub mod synthetic;
pub mod workflows;

use landsr_core::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;
pub const EXIT_IO: i32 = 4;

/// Process exit status for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Io(_) | Error::Resource { .. } | Error::Image(_) => EXIT_IO,
        Error::Csv(e) if e.is_io_error() => EXIT_IO,
        Error::Denoiser { source, .. } => exit_code(source),
        _ => EXIT_VALIDATION,
    }
}
