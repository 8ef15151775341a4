use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.txt";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageEntry {
    pub stage: String,
    pub seed: u64,
    /// `(name, sha256)` of everything the stage read.
    pub inputs: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArtifactEntry {
    pub stage: String,
    pub file: String,
    pub sha256: String,
}

/// Plain-text record of a run: stages with their seeds and input hashes, and
/// every artifact with its content hash. Re-running a stage replaces its
/// entries.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Manifest {
    pub root_seed: u64,
    pub stages: Vec<StageEntry>,
    pub artifacts: Vec<ArtifactEntry>,
}

impl Manifest {
    pub fn new(root_seed: u64) -> Self {
        Self {
            root_seed,
            ..Self::default()
        }
    }

    pub fn record_stage(&mut self, stage: &str, seed: u64, inputs: Vec<(String, String)>) {
        let entry = StageEntry {
            stage: stage.to_string(),
            seed,
            inputs,
        };
        match self.stages.iter_mut().find(|s| s.stage == stage) {
            Some(s) => *s = entry,
            None => self.stages.push(entry),
        }
    }

    pub fn record_artifact(&mut self, stage: &str, file: &str, sha256: String) {
        let entry = ArtifactEntry {
            stage: stage.to_string(),
            file: file.to_string(),
            sha256,
        };
        match self.artifacts.iter_mut().find(|a| a.file == file) {
            Some(a) => *a = entry,
            None => self.artifacts.push(entry),
        }
    }

    pub fn artifact(&self, file: &str) -> Option<&ArtifactEntry> {
        self.artifacts.iter().find(|a| a.file == file)
    }

    pub fn render(&self) -> String {
        let mut out = format!("root_seed\t{}\n", self.root_seed);
        for s in &self.stages {
            let inputs: Vec<String> = s.inputs.iter().map(|(n, h)| format!("{n}={h}")).collect();
            out.push_str(&format!("stage\t{}\t{}\t{}\n", s.stage, s.seed, inputs.join(",")));
        }
        for a in &self.artifacts {
            out.push_str(&format!("artifact\t{}\t{}\t{}\n", a.stage, a.file, a.sha256));
        }
        out
    }

    pub fn parse(src: &str) -> Result<Self> {
        let mut m = Manifest::default();
        for (i, line) in src.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let bad = || Error::Config(format!("manifest line {}: `{line}`", i + 1));
            let fields: Vec<&str> = line.split('\t').collect();
            match fields.as_slice() {
                ["root_seed", seed] => m.root_seed = seed.parse().map_err(|_| bad())?,
                ["stage", stage, seed, inputs] => {
                    let inputs = inputs
                        .split(',')
                        .filter(|s| !s.is_empty())
                        .map(|kv| {
                            kv.split_once('=')
                                .map(|(k, v)| (k.to_string(), v.to_string()))
                                .ok_or_else(bad)
                        })
                        .collect::<Result<_>>()?;
                    m.stages.push(StageEntry {
                        stage: stage.to_string(),
                        seed: seed.parse().map_err(|_| bad())?,
                        inputs,
                    });
                }
                ["artifact", stage, file, sha] => m.artifacts.push(ArtifactEntry {
                    stage: stage.to_string(),
                    file: file.to_string(),
                    sha256: sha.to_string(),
                }),
                _ => return Err(bad()),
            }
        }
        Ok(m)
    }

    pub fn load(dir: &Path) -> Result<Option<Self>> {
        let p = dir.join(MANIFEST_FILE);
        if !p.exists() {
            return Ok(None);
        }
        Self::parse(&std::fs::read_to_string(p)?).map(Some)
    }

    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        let p = dir.join(MANIFEST_FILE);
        std::fs::write(&p, self.render())?;
        Ok(p)
    }

    /// Artifacts whose file content no longer matches the recorded hash.
    pub fn verify(&self, dir: &Path) -> Result<Vec<String>> {
        let mut stale = Vec::new();
        for a in &self.artifacts {
            let p = dir.join(&a.file);
            if !p.exists() || sha256_hex(&std::fs::read(&p)?) != a.sha256 {
                stale.push(a.file.clone());
            }
        }
        Ok(stale)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_parse_round_trip() {
        let mut m = Manifest::new(7);
        m.record_stage("victim", 11, vec![("config".into(), "ab".into())]);
        m.record_stage("attack", 12, vec![]);
        m.record_artifact("victim", "victim.json", "00".into());
        m.record_artifact("victim", "victim.json", "01".into());
        assert_eq!(m.artifacts.len(), 1);
        let back = Manifest::parse(&m.render()).unwrap();
        assert_eq!(back, m);
        assert!(Manifest::parse("stage\tx\n").is_err());
    }

    #[test]
    fn verify_flags_changed_files() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.csv"), "1\n").unwrap();
        let mut m = Manifest::new(0);
        m.record_artifact("s", "a.csv", sha256_hex(b"1\n"));
        assert!(m.verify(dir.path()).unwrap().is_empty());
        std::fs::write(dir.path().join("a.csv"), "2\n").unwrap();
        assert_eq!(m.verify(dir.path()).unwrap(), vec!["a.csv".to_string()]);
    }
}
