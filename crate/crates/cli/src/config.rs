//! The `--config` file: TOML, every table optional. Command-line flags
//! override the values it sets.

use std::path::Path;

use serde::Deserialize;

use textground_core::align::AlignConfig;
use textground_core::client::{RetryPolicy, SubprocessTransport};
use textground_core::filter::FilterConfig;
use textground_core::io::mine::RetrievalGate;
use textground_core::io::ocr::OcrNoise;
use textground_core::io::pipeline::{OnAuditError, PipelineConfig};

use crate::Usage;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub bench_quota: Option<usize>,
    pub on_audit_error: Option<OnAuditError>,
    pub align: AlignConfig,
    pub filter: FilterConfig,
    pub retry: RetryPolicy,
    pub noise: OcrNoise,
    pub gate: RetrievalGate,
    pub clients: Clients,
}

/// External services, each a program plus arguments speaking one JSON
/// record per line on stdio.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Clients {
    pub auditor: Option<Vec<String>>,
    pub expander: Option<Vec<String>>,
    pub scorer: Option<Vec<String>>,
}

impl FileConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Usage(format!("reading config {}: {e}", path.display())))?;
        let cfg: FileConfig = toml::from_str(&text).map_err(|e| Usage(format!("config {}: {e}", path.display())))?;
        cfg.filter.validate().map_err(|e| Usage(format!("config {}: {e}", path.display())))?;
        Ok(cfg)
    }

    pub fn pipeline(&self, seed: u64, workers: usize) -> PipelineConfig {
        let defaults = PipelineConfig::default();
        PipelineConfig {
            seed,
            workers,
            align: self.align,
            filter: self.filter,
            retry: self.retry,
            bench_quota: self.bench_quota.unwrap_or(defaults.bench_quota),
            on_audit_error: self.on_audit_error.unwrap_or(defaults.on_audit_error),
        }
    }
}

/// Starts the program named by a flag (split on whitespace) or, failing
/// that, by the config entry.
pub fn spawn_client(flag: Option<&str>, configured: Option<&[String]>) -> anyhow::Result<Option<SubprocessTransport>> {
    let argv: Vec<String> = match (flag, configured) {
        (Some(cmd), _) => cmd.split_whitespace().map(str::to_string).collect(),
        (None, Some(argv)) => argv.to_vec(),
        (None, None) => return Ok(None),
    };
    let (program, args) = argv.split_first().ok_or_else(|| Usage("empty client command".into()))?;
    Ok(Some(SubprocessTransport::spawn(program, args)?))
}
