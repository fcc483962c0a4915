//! Staged output files and provenance headers.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use sha2::{Digest, Sha256};
use tempfile::NamedTempFile;

/// Output files written to temporaries next to their targets and renamed into
/// place only by [`OutputSet::commit`]. Dropping the set without committing
/// deletes every temporary.
pub struct OutputSet {
    dir: PathBuf,
    staged: Vec<(NamedTempFile, PathBuf)>,
}

impl OutputSet {
    pub fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)
            .with_context(|| format!("creating output directory {}", dir.display()))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            staged: Vec::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Stages `name` by running `fill` on a buffered writer.
    pub fn write<F>(&mut self, name: &str, fill: F) -> Result<PathBuf>
    where
        F: FnOnce(&mut dyn Write) -> Result<()>,
    {
        let target = self.path(name);
        let tmp =
            staging_file(&self.dir).with_context(|| format!("staging {}", target.display()))?;
        {
            let mut w = BufWriter::new(tmp.as_file());
            fill(&mut w).with_context(|| format!("writing {}", target.display()))?;
            w.flush()
                .with_context(|| format!("writing {}", target.display()))?;
        }
        self.staged.push((tmp, target.clone()));
        Ok(target)
    }

    pub fn commit(self) -> Result<Vec<PathBuf>> {
        let mut done = Vec::with_capacity(self.staged.len());
        for (tmp, target) in self.staged {
            tmp.persist(&target)
                .with_context(|| format!("moving output into {}", target.display()))?;
            done.push(target);
        }
        Ok(done)
    }
}

#[cfg(unix)]
fn staging_file(dir: &Path) -> std::io::Result<NamedTempFile> {
    use std::os::unix::fs::PermissionsExt;
    tempfile::Builder::new()
        .permissions(fs::Permissions::from_mode(0o644))
        .tempfile_in(dir)
}

#[cfg(not(unix))]
fn staging_file(dir: &Path) -> std::io::Result<NamedTempFile> {
    NamedTempFile::new_in(dir)
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex(&Sha256::digest(&bytes)))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Comment line naming the tool version, the seed and the inputs by content hash.
pub struct Provenance {
    parts: Vec<String>,
}

impl Provenance {
    pub fn new(command: &str, seed: u64) -> Self {
        Self {
            parts: vec![
                format!("satthermo {}", env!("CARGO_PKG_VERSION")),
                format!("command={command}"),
                format!("seed={seed}"),
            ],
        }
    }

    pub fn field(mut self, key: &str, value: impl std::fmt::Display) -> Self {
        self.parts.push(format!("{key}={value}"));
        self
    }

    pub fn input(self, path: &Path) -> Result<Self> {
        let name = path.file_name().map_or_else(
            || path.display().to_string(),
            |n| n.to_string_lossy().into_owned(),
        );
        let digest = file_sha256(path)?;
        Ok(self.field("input", format!("{name}:sha256:{}", &digest[..16])))
    }

    pub fn line(&self) -> String {
        self.parts.join(" ")
    }
}
