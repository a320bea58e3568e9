#![allow(dead_code)]

use std::path::{Path, PathBuf};

use grg_gateway::adapters::Backends;
use grg_gateway::commands;
use grg_gateway::config::Config;

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

/// Ablation config with the store redirected to `root`.
pub fn ablation_config(root: &Path) -> Config {
    Config::load(Some(&fixtures().join("ablation/grg.toml")), Some(root.to_path_buf())).unwrap()
}

/// Ingest, index and graph the ablation corpus into `root`.
pub fn build_ablation(root: &Path) -> (Config, Backends) {
    let cfg = ablation_config(root);
    let backends = Backends::from_config(&cfg).unwrap();
    commands::ingest(&cfg, &backends, &fixtures().join("ablation/manifest.jsonl")).unwrap();
    commands::index(&cfg, &backends).unwrap();
    commands::graph(&cfg, &backends).unwrap();
    (cfg, backends)
}
