use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::CliError;

/// Identifies the tool version, resolved configuration and seed behind an artifact.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provenance {
    pub version: String,
    pub config_sha256: String,
    pub seed: u64,
}

impl Provenance {
    pub fn new(config_sha256: String, seed: u64) -> Self {
        Self {
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_sha256,
            seed,
        }
    }

    /// `#`-prefixed lines; the CSV readers skip them.
    pub fn header(&self) -> String {
        format!(
            "# tdreg {}\n# config_sha256 {}\n# seed {}\n",
            self.version, self.config_sha256, self.seed
        )
    }

    pub fn json(&self) -> serde_json::Value {
        serde_json::json!({
            "tool": "tdreg",
            "version": self.version,
            "config_sha256": self.config_sha256,
            "seed": self.seed,
        })
    }
}

/// Artifacts are written beside their destination and moved into place only
/// by `commit`; anything staged but not committed is deleted on drop.
pub struct Staging {
    dir: PathBuf,
    provenance: Provenance,
    staged: Vec<(PathBuf, PathBuf)>,
}

impl Staging {
    pub fn new(dir: &Path, provenance: Provenance) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            provenance,
            staged: Vec::new(),
        })
    }

    fn open(&mut self, name: &str) -> Result<(BufWriter<File>, PathBuf), CliError> {
        let target = self.dir.join(name);
        let partial = self.dir.join(format!(".{name}.partial"));
        let file = File::create(&partial).map_err(|e| CliError::io(&partial, e))?;
        self.staged.push((partial.clone(), target));
        Ok((BufWriter::new(file), partial))
    }

    /// Stages a text artifact that starts with the provenance header.
    pub fn text(
        &mut self,
        name: &str,
        body: impl FnOnce(&mut dyn Write) -> Result<(), CliError>,
    ) -> Result<(), CliError> {
        let (mut w, partial) = self.open(name)?;
        w.write_all(self.provenance.header().as_bytes())
            .map_err(|e| CliError::io(&partial, e))?;
        body(&mut w)?;
        w.flush().map_err(|e| CliError::io(&partial, e))
    }

    /// Stages a JSON artifact whose first key is `provenance`.
    pub fn json(&mut self, name: &str, key: &str, value: serde_json::Value) -> Result<(), CliError> {
        let mut doc = serde_json::Map::new();
        doc.insert("provenance".into(), self.provenance.json());
        doc.insert(key.into(), value);
        let (mut w, partial) = self.open(name)?;
        serde_json::to_writer_pretty(&mut w, &serde_json::Value::Object(doc))
            .map_err(|e| CliError::Output(e.to_string()))?;
        w.write_all(b"\n").map_err(|e| CliError::io(&partial, e))?;
        w.flush().map_err(|e| CliError::io(&partial, e))
    }

    /// Moves every staged artifact into place and returns the final paths. If
    /// any move fails, artifacts already moved by this call are removed.
    pub fn commit(mut self) -> Result<Vec<PathBuf>, CliError> {
        let staged = std::mem::take(&mut self.staged);
        let mut done = Vec::with_capacity(staged.len());
        for (i, (partial, target)) in staged.iter().enumerate() {
            if let Err(e) = std::fs::rename(partial, target) {
                for (p, _) in &staged[i..] {
                    let _ = std::fs::remove_file(p);
                }
                for t in &done {
                    let _ = std::fs::remove_file(t);
                }
                return Err(CliError::io(target, e));
            }
            done.push(target.clone());
        }
        Ok(done)
    }
}

impl Drop for Staging {
    fn drop(&mut self) {
        for (partial, _) in &self.staged {
            let _ = std::fs::remove_file(partial);
        }
    }
}

/// Adapts a CSV error into a CLI error.
pub fn csv_err(e: csv::Error) -> CliError {
    CliError::Output(e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prov() -> Provenance {
        Provenance::new("abc".into(), 3)
    }

    #[test]
    fn dropped_staging_leaves_nothing() {
        let dir = tempfile::tempdir().unwrap();
        {
            let mut s = Staging::new(dir.path(), prov()).unwrap();
            s.text("a.csv", |w| Ok(writeln!(w, "x").unwrap())).unwrap();
        }
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
    }

    #[test]
    fn committed_files_carry_the_header() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = Staging::new(dir.path(), prov()).unwrap();
        s.text("a.csv", |w| Ok(writeln!(w, "x,y").unwrap())).unwrap();
        let paths = s.commit().unwrap();
        let text = std::fs::read_to_string(&paths[0]).unwrap();
        assert!(text.starts_with("# tdreg "));
        assert!(text.contains("# config_sha256 abc\n# seed 3\nx,y\n"));
    }
}
