//! Shared test helpers: the dynamic taint-tracking interpreter used as an
//! oracle, and corpus loading.

pub mod interp;

use std::path::{Path, PathBuf};

pub fn corpus_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/corpus")
}

/// All corpus programs as (file name, text), sorted by name.
pub fn corpus_programs() -> Vec<(String, String)> {
    let mut programs: Vec<(String, String)> = std::fs::read_dir(corpus_dir())
        .expect("corpus directory exists")
        .map(|entry| entry.expect("corpus entry"))
        .filter(|entry| entry.path().extension().and_then(|e| e.to_str()) == Some("ir"))
        .map(|entry| {
            let name = entry.file_name().to_string_lossy().into_owned();
            let text = std::fs::read_to_string(entry.path()).expect("corpus file readable");
            (name, text)
        })
        .collect();
    programs.sort();
    programs
}

pub fn corpus_program(name: &str) -> String {
    std::fs::read_to_string(corpus_dir().join(name))
        .unwrap_or_else(|_| panic!("corpus file {name}"))
}
