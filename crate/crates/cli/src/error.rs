use std::fmt;
use std::path::Path;

use audit_core::ingest::IngestError;

/// Exit status for a run that failed on its arguments or configuration.
pub const EXIT_USAGE: i32 = 2;
/// Exit status for a run that failed on its input data.
pub const EXIT_DATA: i32 = 1;

/// Bad arguments, bad configuration, or a stage asked for without the input
/// it needs. Anything else that fails is a data error.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

pub fn exit_code(err: &anyhow::Error) -> i32 {
    if err.downcast_ref::<UsageError>().is_some() {
        EXIT_USAGE
    } else {
        EXIT_DATA
    }
}

/// `path:line: reason` for row-level errors, `path: reason` otherwise.
pub fn located(path: &Path, err: &IngestError) -> String {
    let msg = err.to_string();
    match err.line() {
        Some(line) => {
            let prefix = format!("line {line}: ");
            let reason = msg.strip_prefix(&prefix).unwrap_or(&msg);
            format!("{}:{line}: {reason}", path.display())
        }
        None => format!("{}: {msg}", path.display()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn row_errors_name_file_and_line() {
        let e = IngestError::UnknownSplit { line: 7 };
        assert_eq!(located(Path::new("d/faces.csv"), &e), "d/faces.csv:7: unknown split");
        let e = IngestError::Header {
            expected: "a".into(),
            found: "b".into(),
        };
        assert_eq!(
            located(Path::new("x.csv"), &e),
            "x.csv: unexpected header: expected `a`, found `b`"
        );
    }

    #[test]
    fn usage_errors_map_to_exit_two() {
        assert_eq!(exit_code(&usage("no faces")), EXIT_USAGE);
        assert_eq!(exit_code(&anyhow::anyhow!("bad row")), EXIT_DATA);
    }
}
