#![allow(dead_code)]

pub mod hb;
pub mod oracle;

use std::path::PathBuf;

use ebf_core::corpus::{self, BenchmarkTask};

pub fn corpus_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../corpus")
}

pub fn tasks() -> Vec<BenchmarkTask> {
    corpus::load_corpus(&corpus_dir()).expect("corpus loads")
}

pub fn task(name: &str) -> BenchmarkTask {
    tasks().into_iter().find(|t| t.name == name).unwrap_or_else(|| panic!("no task {name}"))
}

pub fn oracle_props(p: &ebf_core::exec::PropertySet) -> oracle::Props {
    oracle::Props {
        unreach_call: p.unreach_call,
        memsafety: p.valid_memsafety,
        overflow: p.no_overflow,
        races: p.data_races,
    }
}
