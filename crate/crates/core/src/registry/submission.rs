//! Submission manifests, intake copies and size scrubbing.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::RegistryError;
use crate::protocol::Entrypoint;

/// File at the root of a submission naming its two entrypoints.
pub const MANIFEST_FILE: &str = "procbench.toml";
/// Default scrub threshold: files strictly larger than this are removed.
pub const DEFAULT_SCRUB_THRESHOLD: u64 = 10 * 1024 * 1024;

/// Entrypoint command lines. The harness appends `<workdir> <checkpoint>`.
/// A program given as a relative path containing `/` resolves against the
/// submission directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    #[serde(default)]
    pub train: Vec<String>,
    #[serde(default)]
    pub rollout: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub team: Option<String>,
}

impl Manifest {
    pub fn new(train: Vec<String>, rollout: Vec<String>) -> Self {
        Manifest { train, rollout, team: None }
    }

    pub fn validate(&self) -> Result<(), RegistryError> {
        let blank = |argv: &[String]| argv.first().is_none_or(|p| p.trim().is_empty());
        if blank(&self.train) {
            return Err(RegistryError::MissingEntrypoint("train".into()));
        }
        if blank(&self.rollout) {
            return Err(RegistryError::MissingEntrypoint("rollout".into()));
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self, RegistryError> {
        toml::from_str(text).map_err(|e| RegistryError::InvalidManifest(e.to_string()))
    }

    pub fn read(dir: &Path) -> Result<Self, RegistryError> {
        let path = dir.join(MANIFEST_FILE);
        match fs::read_to_string(&path) {
            Ok(text) => Self::from_toml_str(&text),
            Err(e) if e.kind() == io::ErrorKind::NotFound => {
                Err(RegistryError::InvalidManifest(format!("{} not found", path.display())))
            }
            Err(e) => Err(RegistryError::Io(e)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Submission {
    pub id: String,
    pub team: String,
    pub source_dir: PathBuf,
    pub manifest: Manifest,
    /// Seconds since the Unix epoch.
    pub received_at: u64,
}

impl Submission {
    pub fn train_entrypoint(&self) -> Entrypoint {
        self.entrypoint(&self.manifest.train)
    }

    pub fn rollout_entrypoint(&self) -> Entrypoint {
        self.entrypoint(&self.manifest.rollout)
    }

    fn entrypoint(&self, argv: &[String]) -> Entrypoint {
        let mut ep = Entrypoint::new(argv).expect("validated manifest").in_dir(&self.source_dir);
        let program = Path::new(&ep.program);
        if program.is_relative() && ep.program.contains('/') {
            ep.program = self.source_dir.join(program).to_string_lossy().into_owned();
        }
        ep
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScrubbedFile {
    /// Relative to the submission root.
    pub path: PathBuf,
    pub size_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScrubReport {
    pub removed: Vec<ScrubbedFile>,
    pub threshold: u64,
}

/// Recursively copies `from` into `to`. Symlinks are not followed; they are
/// copied as the files they point to only when they resolve inside `from`.
pub(crate) fn copy_tree(from: &Path, to: &Path) -> io::Result<u64> {
    fs::create_dir_all(to)?;
    let root = from.canonicalize()?;
    let mut files = 0;
    let mut stack = vec![(from.to_path_buf(), to.to_path_buf())];
    while let Some((src, dst)) = stack.pop() {
        for entry in fs::read_dir(&src)? {
            let entry = entry?;
            let target = dst.join(entry.file_name());
            let kind = entry.file_type()?;
            if kind.is_dir() {
                fs::create_dir_all(&target)?;
                stack.push((entry.path(), target));
            } else if kind.is_file() {
                fs::copy(entry.path(), &target)?;
                files += 1;
            } else if kind.is_symlink() {
                let resolved = entry.path().canonicalize()?;
                if resolved.starts_with(&root) && resolved.is_file() {
                    fs::copy(&resolved, &target)?;
                    files += 1;
                } else {
                    log::warn!("skipping symlink {} outside the submission", entry.path().display());
                }
            }
        }
    }
    Ok(files)
}

/// Deletes every file under `root` strictly larger than `threshold` bytes.
pub fn scrub(root: &Path, threshold: u64) -> io::Result<ScrubReport> {
    let mut removed = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir)? {
            let entry = entry?;
            let kind = entry.file_type()?;
            if kind.is_dir() {
                stack.push(entry.path());
            } else if kind.is_file() {
                let size = entry.metadata()?.len();
                if size > threshold {
                    fs::remove_file(entry.path())?;
                    let rel = entry.path().strip_prefix(root).map(Path::to_path_buf).unwrap_or_else(|_| entry.path());
                    removed.push(ScrubbedFile { path: rel, size_bytes: size });
                }
            }
        }
    }
    removed.sort_by(|a, b| a.path.cmp(&b.path));
    Ok(ScrubReport { removed, threshold })
}
