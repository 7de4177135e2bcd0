//! Run manifests: everything needed to reproduce a `report` run.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::pipeline::{Exit, Failure, InputSource, MapOptions};
use crate::InputArgs;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub input: String,
    pub source_sha256: String,
    pub tiles: [usize; 2],
    pub budget: Option<usize>,
    pub candidates: usize,
    pub seed: Option<u64>,
    pub inputs_file: Option<String>,
    pub report_sha256: String,
}

impl RunManifest {
    pub fn new(input: &Path, opts: &MapOptions, inputs: &InputArgs) -> Self {
        let inputs_file = inputs.inputs.as_ref().map(|p| p.display().to_string());
        Self {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            input: input.display().to_string(),
            source_sha256: String::new(),
            tiles: [opts.rows, opts.cols],
            budget: opts.budget,
            candidates: opts.candidates,
            seed: inputs_file.is_none().then(|| inputs.seed.unwrap_or(0)),
            inputs_file,
            report_sha256: String::new(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::new(Exit::Usage, "USAGE", format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Failure::new(Exit::Usage, "BAD_MANIFEST", e.to_string()))
    }

    pub fn map_options(&self) -> MapOptions {
        MapOptions {
            rows: self.tiles[0],
            cols: self.tiles[1],
            budget: self.budget,
            candidates: self.candidates,
        }
    }

    pub fn input_source(&self) -> InputSource {
        match &self.inputs_file {
            Some(p) => InputSource::File(p.into()),
            None => InputSource::Seed(self.seed.unwrap_or(0)),
        }
    }
}

pub fn text_digest(text: &str) -> String {
    hex(&Sha256::digest(text.as_bytes()))
}

pub fn file_digest(path: &Path) -> Result<String, Failure> {
    let bytes = std::fs::read(path)
        .map_err(|e| Failure::new(Exit::Usage, "USAGE", format!("cannot read {}: {e}", path.display())))?;
    Ok(hex(&Sha256::digest(&bytes)))
}

fn hex(b: &[u8]) -> String {
    b.iter().map(|x| format!("{x:02x}")).collect()
}
