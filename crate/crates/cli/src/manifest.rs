//! Run manifests: `filename sha256` lines, a `---` separator, then a TOML
//! block with the command, software version, seed and the full config.
//!
//! ```text
//! toy_rbf.csv 3f1c...
//! toy_ck.csv 9a02...
//! ---
//! command = "toy"
//! version = "0.1.0"
//! seed = 0
//!
//! [config]
//! seed = 0
//! ...
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::CliError;

pub const SEPARATOR: &str = "---";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestHeader {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub config: RunConfig,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub files: Vec<(String, String)>,
    pub header: ManifestHeader,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl Manifest {
    /// Checksums `names` inside `dir`.
    pub fn build(
        dir: &Path,
        names: &[String],
        command: &str,
        config: &RunConfig,
    ) -> Result<Self, CliError> {
        let mut files = Vec::with_capacity(names.len());
        for n in names {
            let path = dir.join(n);
            let bytes = std::fs::read(&path).map_err(|e| CliError::io(&path, e))?;
            files.push((n.clone(), sha256_hex(&bytes)));
        }
        Ok(Self {
            files,
            header: ManifestHeader {
                command: command.into(),
                version: env!("CARGO_PKG_VERSION").into(),
                seed: config.seed,
                config: config.clone(),
            },
        })
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for (n, h) in &self.files {
            s.push_str(&format!("{n} {h}\n"));
        }
        s.push_str(SEPARATOR);
        s.push('\n');
        s.push_str(&toml::to_string(&self.header).expect("manifest header serializes"));
        s
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let (files_part, header_part) = match text.split_once(&format!("\n{SEPARATOR}\n")) {
            Some((f, h)) => (f, h),
            None => match text.strip_prefix(&format!("{SEPARATOR}\n")) {
                Some(h) => ("", h),
                None => return Err("missing config block separator".into()),
            },
        };
        let mut files = Vec::new();
        for (i, line) in files_part.lines().enumerate() {
            let (name, hash) = line
                .rsplit_once(' ')
                .ok_or_else(|| format!("line {}: expected `filename sha256`", i + 1))?;
            if hash.len() != 64 || !hash.bytes().all(|b| b.is_ascii_hexdigit()) {
                return Err(format!("line {}: malformed sha256", i + 1));
            }
            files.push((name.to_string(), hash.to_ascii_lowercase()));
        }
        let header = toml::from_str(header_part).map_err(|e| e.to_string())?;
        Ok(Self { files, header })
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text).map_err(|m| CliError::corrupt(path, m))
    }

    /// Recomputes every checksum; files are resolved relative to `dir`.
    /// Returns the number of files checked.
    pub fn verify(&self, dir: &Path) -> Result<usize, CliError> {
        for (n, expect) in &self.files {
            let path = dir.join(n);
            let bytes = std::fs::read(&path).map_err(|e| CliError::io(&path, e))?;
            let got = sha256_hex(&bytes);
            if &got != expect {
                return Err(CliError::corrupt(
                    &path,
                    format!("checksum mismatch (manifest {expect}, file {got})"),
                ));
            }
        }
        Ok(self.files.len())
    }
}
