use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use aimlab::io::write_atomic;
use aimlab::Result;
use serde::{Deserialize, Serialize};

pub const MANIFEST: &str = "manifest.json";
pub const RUN_DIR_ENV: &str = "AIMLAB_RUN_DIR";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub wall_seconds: f64,
    /// Seconds per named phase.
    pub phases: BTreeMap<String, f64>,
}

/// What a run did and where its outputs are. Artifact paths are relative to the
/// run directory. Timing is the only field that differs between otherwise
/// identical runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub seed: u64,
    /// Resolved configuration as TOML, when the command uses one.
    pub config: Option<String>,
    pub config_hash: Option<String>,
    pub artifacts: Vec<String>,
    pub status: String,
    pub error: Option<String>,
    pub timing: Timing,
}

/// Output directory of one command invocation.
pub struct RunDir {
    root: PathBuf,
    artifacts: Vec<String>,
    started: Instant,
    phase_start: Instant,
    timing: Timing,
}

/// `explicit` if given, else `$AIMLAB_RUN_DIR/<default_name>`, else
/// `runs/<default_name>`.
pub fn resolve(explicit: Option<&Path>, default_name: &str) -> PathBuf {
    match explicit {
        Some(p) => p.to_path_buf(),
        None => {
            let root = std::env::var_os(RUN_DIR_ENV).map_or_else(|| PathBuf::from("runs"), PathBuf::from);
            root.join(default_name)
        }
    }
}

impl RunDir {
    pub fn create(root: PathBuf) -> Result<Self> {
        std::fs::create_dir_all(&root)?;
        let now = Instant::now();
        Ok(RunDir {
            root,
            artifacts: Vec::new(),
            started: now,
            phase_start: now,
            timing: Timing::default(),
        })
    }

    pub fn path(&self) -> &Path {
        &self.root
    }

    pub fn join(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        write_atomic(&self.root.join(name), bytes)?;
        self.record(name);
        Ok(())
    }

    /// Notes a file some other writer already placed in the directory.
    pub fn record(&mut self, name: &str) {
        if !self.artifacts.iter().any(|a| a == name) {
            self.artifacts.push(name.to_string());
        }
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    /// Closes the current timing phase.
    pub fn lap(&mut self, phase: &str) {
        let now = Instant::now();
        *self.timing.phases.entry(phase.to_string()).or_insert(0.0) += (now - self.phase_start).as_secs_f64();
        self.phase_start = now;
    }

    pub fn finish(mut self, mut manifest: RunManifest) -> Result<RunManifest> {
        self.timing.wall_seconds = self.started.elapsed().as_secs_f64();
        manifest.artifacts = self.artifacts.clone();
        manifest.timing = self.timing.clone();
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        write_atomic(&self.root.join(MANIFEST), text.as_bytes())?;
        Ok(manifest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_lists_relative_artifacts() {
        let tmp = tempfile::tempdir().unwrap();
        let mut rd = RunDir::create(tmp.path().join("r")).unwrap();
        rd.write("a.txt", b"x").unwrap();
        rd.write("a.txt", b"y").unwrap();
        rd.lap("work");
        let m = rd
            .finish(RunManifest {
                command: "synth".into(),
                argv: vec![],
                seed: 3,
                config: None,
                config_hash: None,
                artifacts: vec![],
                status: "ok".into(),
                error: None,
                timing: Timing::default(),
            })
            .unwrap();
        assert_eq!(m.artifacts, ["a.txt"]);
        assert!(m.timing.phases.contains_key("work"));
        let text = std::fs::read_to_string(tmp.path().join("r").join(MANIFEST)).unwrap();
        let back: RunManifest = serde_json::from_str(&text).unwrap();
        assert_eq!((back.artifacts, back.seed), (m.artifacts, 3));
    }

    #[test]
    fn explicit_dir_wins() {
        assert_eq!(resolve(Some(Path::new("x/y")), "eval-seed0"), PathBuf::from("x/y"));
    }
}
