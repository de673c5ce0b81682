//! Output directory handling: atomic writes and the per-command run manifest.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CliError;

pub struct OutDir {
    root: PathBuf,
    written: Vec<String>,
}

impl OutDir {
    pub fn create(root: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(root).map_err(|e| CliError::io(root, e))?;
        Ok(Self {
            root: root.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// Writes `name` through a temporary file in the same directory that is
    /// renamed into place once `fill` succeeds.
    pub fn write<F>(&mut self, name: &str, fill: F) -> Result<PathBuf, CliError>
    where
        F: FnOnce(&mut dyn Write) -> Result<(), CliError>,
    {
        let target = self.path(name);
        if let Some(parent) = target.parent() {
            fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
        }
        let tmp = tempfile::NamedTempFile::new_in(target.parent().unwrap_or(&self.root))
            .map_err(|e| CliError::io(&self.root, e))?;
        {
            let mut w = BufWriter::new(tmp.as_file());
            fill(&mut w)?;
            w.flush().map_err(|e| CliError::io(&target, e))?;
        }
        tmp.persist(&target).map_err(|e| CliError::io(&target, e.error))?;
        self.written.push(name.to_string());
        Ok(target)
    }

    /// Like [`OutDir::write`] for a directory produced by `fill`.
    pub fn write_dir<F>(&mut self, name: &str, fill: F) -> Result<PathBuf, CliError>
    where
        F: FnOnce(&Path) -> Result<(), CliError>,
    {
        let target = self.path(name);
        let tmp = tempfile::Builder::new()
            .prefix(".tmp")
            .tempdir_in(&self.root)
            .map_err(|e| CliError::io(&self.root, e))?;
        fill(tmp.path())?;
        if target.exists() {
            fs::remove_dir_all(&target).map_err(|e| CliError::io(&target, e))?;
        }
        fs::rename(tmp.path(), &target).map_err(|e| CliError::io(&target, e))?;
        // already moved; nothing left for the guard to delete
        let _ = tmp.keep();
        self.written.push(name.to_string());
        Ok(target)
    }

    pub fn written(&self) -> &[String] {
        &self.written
    }
}

#[derive(Debug, Serialize)]
pub struct RunManifest<'a, C: Serialize> {
    pub command: &'a str,
    pub version: &'a str,
    pub config: &'a C,
    pub seed: u64,
    pub deterministic: bool,
    /// SHA-256 of every input file, keyed by the path as given.
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<String>,
    pub duration_secs: f64,
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let mut f = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf).map_err(|e| CliError::io(path, e))?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

/// Digests of the given inputs. Directories contribute each file inside
/// them, sorted by name.
pub fn digest_inputs(paths: &[PathBuf]) -> Result<BTreeMap<String, String>, CliError> {
    let mut out = BTreeMap::new();
    for p in paths {
        if p.is_dir() {
            let mut entries: Vec<PathBuf> = fs::read_dir(p)
                .map_err(|e| CliError::io(p, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|e| e.is_file())
                .collect();
            entries.sort();
            for e in entries {
                out.insert(e.display().to_string(), sha256_file(&e)?);
            }
        } else {
            out.insert(p.display().to_string(), sha256_file(p)?);
        }
    }
    Ok(out)
}

pub struct Run {
    pub started: Instant,
}

impl Run {
    pub fn start() -> Self {
        Self { started: Instant::now() }
    }
}

pub fn write_manifest<C: Serialize>(
    out: &mut OutDir,
    command: &str,
    config: &C,
    seed: u64,
    deterministic: bool,
    inputs: &[PathBuf],
    run: &Run,
) -> Result<(), CliError> {
    let manifest = RunManifest {
        command,
        version: crate::BUILD_ID,
        config,
        seed,
        deterministic,
        inputs: digest_inputs(inputs)?,
        outputs: out.written().to_vec(),
        duration_secs: run.started.elapsed().as_secs_f64(),
    };
    let name = format!("{command}.manifest.json");
    out.write(&name, |w| {
        serde_json::to_writer_pretty(&mut *w, &manifest).map_err(|e| CliError::io(Path::new(&name), io::Error::other(e)))?;
        writeln!(w).map_err(|e| CliError::io(Path::new(&name), e))
    })?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_and_digest() {
        let dir = tempfile::tempdir().unwrap();
        let mut out = OutDir::create(dir.path()).unwrap();
        let p = out
            .write("a/b.txt", |w| w.write_all(b"abc").map_err(|e| CliError::io(Path::new("b"), e)))
            .unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"abc");
        assert_eq!(
            sha256_file(&p).unwrap(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        let failed = out.write("c.txt", |_| Err(CliError::Usage("boom".into())));
        assert!(failed.is_err());
        assert!(!out.path("c.txt").exists());
        assert_eq!(out.written(), ["a/b.txt".to_string()]);
    }
}
