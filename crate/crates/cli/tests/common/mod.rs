#![allow(dead_code)]

pub mod fixture;

use std::path::{Path, PathBuf};

pub fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/mini")
}

pub fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/mini")
}

pub fn updating_golden() -> bool {
    std::env::var_os("UPDATE_GOLDEN").is_some_and(|v| v == "1")
}

/// Runs the CLI in-process with `args` (the program name is supplied).
pub fn audit(args: &[&str]) -> i32 {
    audit_cli::run(std::iter::once("audit").chain(args.iter().copied()))
}
