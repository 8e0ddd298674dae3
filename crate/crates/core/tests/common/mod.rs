//! Helpers shared by integration tests and the acceptance suite.
#![allow(dead_code)]

use std::path::Path;
use std::sync::Arc;

use treegen::backend::MockBackend;
use treegen::corpus::{build_corpus, export_sharegpt, SystemPrompt};
use treegen::scheduler::{run, CheckpointStore, RunOptions, RunReport};
use treegen::{Backends, TreeConfig, TurnPolicy};

/// SFT config with constant question budgets and increasing answer budgets.
pub fn sft(branching: &[u32]) -> TreeConfig {
    let answers: Vec<u32> = (1..=branching.len() as u32 / 2).map(|i| 8 + 4 * i).collect();
    TreeConfig::sft("You are a helpful assistant.", branching, 8, &answers)
}

pub fn mock_run(config: &TreeConfig, dir: &Path, options: &RunOptions) -> (Arc<MockBackend>, RunReport) {
    mock_run_with(MockBackend::new(), config, dir, options)
}

pub fn mock_run_with(
    mock: MockBackend,
    config: &TreeConfig,
    dir: &Path,
    options: &RunOptions,
) -> (Arc<MockBackend>, RunReport) {
    let mock = Arc::new(mock);
    let backends = Backends::shared(mock.clone());
    let report = run(config, &backends, &CheckpointStore::new(dir), options).expect("run succeeds");
    (mock, report)
}

pub fn nodes_bytes(dir: &Path) -> Vec<u8> {
    std::fs::read(dir.join("nodes.jsonl")).expect("nodes.jsonl exists")
}

/// Full-depth ShareGPT export of the checkpoint in `dir`, as bytes.
pub fn sharegpt_bytes(dir: &Path, out: &Path) -> Vec<u8> {
    let (stored, tree) = CheckpointStore::new(dir).load().expect("checkpoint loads");
    let k = stored.config.depth() as u32 / 2;
    let records = build_corpus(&tree, &TurnPolicy::FixedK { k }, false).expect("corpus builds");
    export_sharegpt(&records, out, SystemPrompt::Omit).expect("export succeeds");
    std::fs::read(out).expect("export readable")
}
