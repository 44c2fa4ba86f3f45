//! Library side of the `smokesal` command-line tool: run configuration,
//! provenance and one function per subcommand.

pub mod commands;
pub mod config;

use serde_json::json;
use smokesal_core::{Error, ErrorKind};

pub use config::{Provenance, RunConfig};

/// Process exit code for an error class.
pub fn exit_code(kind: ErrorKind) -> i32 {
    match kind {
        ErrorKind::Usage => 1,
        ErrorKind::Data => 2,
        ErrorKind::Numerical => 3,
    }
}

pub fn kind_name(kind: ErrorKind) -> &'static str {
    match kind {
        ErrorKind::Usage => "usage",
        ErrorKind::Data => "data",
        ErrorKind::Numerical => "numerical",
    }
}

/// `{"error": {"kind": ..., "message": ...}}`, the form written to stderr.
pub fn error_json(kind: ErrorKind, message: &str) -> String {
    json!({ "error": { "kind": kind_name(kind), "message": message } }).to_string()
}

pub fn report(err: &Error) -> (i32, String) {
    (exit_code(err.kind()), error_json(err.kind(), &err.to_string()))
}
