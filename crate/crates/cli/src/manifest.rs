//! Run manifests: a flat key=value file written beside each output, listing
//! the command, every resolved setting, the seed, and SHA-256 digests of the
//! inputs. Identical invocations produce byte-identical manifests, so a
//! manifest plus its inputs is enough to reproduce the output bit-exact.
//! Wall-clock timing is reported on stderr instead of stored, precisely so
//! manifests stay comparable across runs.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use replyrank_core::Result;

pub struct Manifest {
    entries: Vec<(String, String)>,
}

impl Manifest {
    pub fn new(command: &str) -> Self {
        let mut m = Manifest { entries: Vec::new() };
        m.set("command", command);
        m.set("tool_version", env!("CARGO_PKG_VERSION"));
        m
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.entries.push((key.to_string(), value.to_string()));
    }

    /// Records the SHA-256 digest of an input file under `input.<name>`.
    pub fn input(&mut self, name: &str, path: &Path) -> Result<()> {
        let bytes = fs::read(path)?;
        let digest = Sha256::digest(&bytes);
        let mut hex = String::with_capacity(64);
        for b in digest {
            write!(hex, "{b:02x}").unwrap();
        }
        self.entries.push((format!("input.{name}"), hex));
        Ok(())
    }

    /// Writes the manifest beside `output` as `<output>.manifest`.
    pub fn write_beside(&self, output: &Path) -> Result<()> {
        let mut path = output.as_os_str().to_owned();
        path.push(".manifest");
        self.write_to(&PathBuf::from(path))
    }

    pub fn write_to(&self, path: &Path) -> Result<()> {
        let mut text = String::new();
        for (k, v) in &self.entries {
            writeln!(text, "{k}={v}").unwrap();
        }
        fs::write(path, text)?;
        Ok(())
    }
}
