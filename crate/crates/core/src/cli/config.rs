use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agent::Hyperparams;
use crate::data::Extents;
use crate::error::{Error, Result};
use crate::qnet::{ArchitectureConfig, ConvSpec, HeadKind};

/// Image counts for a synthetic train/test split.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthCounts {
    pub train_normal: usize,
    pub train_tumor: usize,
    pub test_normal: usize,
    pub test_tumor: usize,
}

impl Default for SynthCounts {
    fn default() -> Self {
        Self {
            train_normal: 15,
            train_tumor: 15,
            test_normal: 15,
            test_tumor: 15,
        }
    }
}

/// Every setting of a run. Loaded from JSON (unknown keys rejected), then
/// overridden by command-line flags.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub command: Option<String>,
    pub synth: bool,
    pub synth_counts: SynthCounts,
    pub data: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub precision: String,
    pub extents: Extents,
    pub conv: Vec<ConvSpec>,
    pub hidden: [usize; 2],
    pub hyperparams: Hyperparams,
}

impl Default for RunConfig {
    fn default() -> Self {
        let arch = ArchitectureConfig::dqn();
        Self {
            command: None,
            synth: false,
            synth_counts: SynthCounts::default(),
            data: None,
            model: None,
            out: None,
            precision: "f32".into(),
            extents: Extents::default(),
            conv: arch.conv,
            hidden: arch.hidden,
            hyperparams: Hyperparams::default(),
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        if self.precision != "f32" {
            return Err(Error::Config(format!(
                "precision {:?} is not supported for training; use \"f32\"",
                self.precision
            )));
        }
        self.hyperparams.validate()?;
        self.architecture(HeadKind::QHead).layer_specs()?;
        Ok(())
    }

    pub fn architecture(&self, head: HeadKind) -> ArchitectureConfig {
        ArchitectureConfig {
            height: self.extents.height,
            width: self.extents.width,
            channels: match head {
                HeadKind::QHead => 3,
                HeadKind::SigmoidHead => 1,
            },
            conv: self.conv.clone(),
            hidden: self.hidden,
            head,
        }
    }

    pub fn write_resolved(&self, dir: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(dir.join("config.resolved.json"), text)?;
        Ok(())
    }
}
