#![allow(dead_code)]

use std::path::{Path, PathBuf};

use hypotool::config::PipelineConfig;
use hypotool::pipeline::Pipeline;

pub fn fixture_dir(set: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(set)
}

/// Loads a shipped fixture config with its output redirected to `out`.
pub fn fixture_config(set: &str, out: &Path) -> PipelineConfig {
    let mut config = PipelineConfig::load(&fixture_dir(set).join("config.toml")).unwrap();
    config.paths.output_dir = out.to_path_buf();
    config
}

pub fn pipeline(config: PipelineConfig) -> Pipeline {
    Pipeline::new(config).unwrap()
}

pub fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}
