//! The JSON run configuration shared by every command.

use std::path::{Path, PathBuf};
use std::time::Duration;

use okra_client::KeySource;
use okra_core::ml::{MlTask, SvmParams, SvmSettings};
use okra_core::{KernelSpec, Seed};
use okra_transport::{SessionConfig, DEFAULT_MAX_BODY};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// 64 hex characters. Parties need it; the server never reads it.
    #[serde(default)]
    pub seed: Option<String>,
    #[serde(default)]
    pub plan: PlanConfig,
    pub kernel: KernelSpec,
    #[serde(default)]
    pub io: IoConfig,
    #[serde(default)]
    pub network: NetworkConfig,
    #[serde(default)]
    pub session: SessionSection,
    #[serde(default)]
    pub ml: MlConfig,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlanConfig {
    pub block_size: usize,
    pub redundancy: usize,
    /// Expected feature count of party data, checked before encoding.
    pub features: Option<usize>,
}

impl Default for PlanConfig {
    fn default() -> Self {
        Self {
            block_size: 64,
            redundancy: 1,
            features: None,
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IoConfig {
    pub data: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub normalize: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    pub host: String,
    pub port: u16,
    /// Seconds.
    pub timeout: f64,
    pub http_port: Option<u16>,
    pub max_body: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            host: "127.0.0.1".into(),
            port: 7878,
            timeout: 120.0,
            http_port: None,
            max_body: DEFAULT_MAX_BODY,
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SessionSection {
    pub parties: Vec<String>,
    /// This process's identity when running as a party.
    pub party_id: Option<String>,
    pub allow_append: bool,
    pub release_gram: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskName {
    GramOnly,
    Kpca,
    Svm,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MlConfig {
    pub task: TaskName,
    pub components: usize,
    #[serde(rename = "C")]
    pub c: f64,
    pub tol: f64,
    pub folds: usize,
    pub c_grid: Vec<f64>,
    pub max_passes: usize,
    pub seed: u64,
}

impl Default for MlConfig {
    fn default() -> Self {
        let p = SvmParams::default();
        Self {
            task: TaskName::GramOnly,
            components: 2,
            c: p.c,
            tol: p.tol,
            folds: 5,
            c_grid: Vec::new(),
            max_passes: p.max_passes,
            seed: p.seed,
        }
    }
}

impl MlConfig {
    pub fn task(&self) -> MlTask {
        match self.task {
            TaskName::GramOnly => MlTask::GramOnly,
            TaskName::Kpca => MlTask::Kpca {
                components: self.components,
            },
            TaskName::Svm => MlTask::Svm(SvmSettings {
                params: SvmParams {
                    c: self.c,
                    tol: self.tol,
                    max_passes: self.max_passes,
                    seed: self.seed,
                },
                folds: self.folds,
                c_grid: self.c_grid.clone(),
            }),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// Parses and validates a configuration document. Errors carry the
    /// line and column of the offending JSON.
    pub fn parse(text: &str) -> Result<Self, String> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| e.to_string())?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), String> {
        if let Some(s) = &self.seed {
            Seed::from_hex(s).map_err(|e| format!("seed: {e}"))?;
        }
        self.kernel.validate().map_err(|e| format!("kernel: {e}"))?;
        if self.plan.block_size == 0 || self.plan.redundancy == 0 {
            return Err("plan: block_size and redundancy must be positive".into());
        }
        if !(self.network.timeout.is_finite() && self.network.timeout > 0.0) {
            return Err("network.timeout must be a positive number of seconds".into());
        }
        let ml = &self.ml;
        if !(ml.c.is_finite() && ml.c > 0.0)
            || ml.c_grid.iter().any(|c| !(c.is_finite() && *c > 0.0))
        {
            return Err("ml: penalties must be positive".into());
        }
        if !(ml.tol.is_finite() && ml.tol > 0.0) || ml.max_passes == 0 {
            return Err("ml: tol and max_passes must be positive".into());
        }
        if ml.task == TaskName::Kpca && ml.components == 0 {
            return Err("ml.components must be positive".into());
        }
        Ok(())
    }

    pub fn seed(&self) -> Result<Seed, CliError> {
        let hex = self
            .seed
            .as_deref()
            .ok_or_else(|| CliError::Config("seed is required for this command".into()))?;
        Seed::from_hex(hex).map_err(|e| CliError::Config(format!("seed: {e}")))
    }

    pub fn key_source(&self) -> Result<KeySource, CliError> {
        Ok(KeySource {
            seed: self.seed()?,
            block_size: self.plan.block_size,
            redundancy: self.plan.redundancy,
        })
    }

    pub fn address(&self) -> String {
        format!("{}:{}", self.network.host, self.network.port)
    }

    pub fn session_config(&self, out_dir: PathBuf) -> SessionConfig {
        let mut s = SessionConfig::new(self.session.parties.clone(), self.kernel.clone(), out_dir);
        s.host = self.network.host.clone();
        s.port = self.network.port;
        s.timeout = Duration::from_secs_f64(self.network.timeout);
        s.allow_append = self.session.allow_append;
        s.ml = self.ml.task();
        s.max_body = self.network.max_body;
        s.http_port = self.network.http_port;
        s.release_gram = self.session.release_gram;
        s
    }
}
