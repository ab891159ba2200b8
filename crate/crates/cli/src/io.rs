//! Output files: CSV traces, JSON reports, the binary path-bundle format and
//! the run manifest.
//!
//! Binary bundle layout (little endian): magic `TOPB`, `u32` version,
//! `u8` measure (0 reference, 1 original), `u64` seed, paths, state dim,
//! action dim, steps, `f64` horizon, `u64` agent count followed by each
//! observation dimension, then the arrays states, noise, controls,
//! log-likelihood and one observation array per agent, each as a `u64`
//! length and that many `f64`.

use std::io::Read;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};
use teamopt_core::model::TimeGrid;
use teamopt_core::paths::{Measure, PathBundle};

use crate::error::CliError;

const MAGIC: &[u8; 4] = b"TOPB";
const VERSION: u32 = 1;

/// Directory receiving a run's files.
pub struct OutputDir {
    dir: PathBuf,
}

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FileEntry {
    pub name: String,
    pub bytes: u64,
    pub sha256: String,
}

impl OutputDir {
    pub fn create(dir: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir)
            .map_err(|e| CliError::io(format!("creating {}", dir.display()), e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
        })
    }

    pub fn path(&self) -> &Path {
        &self.dir
    }

    pub fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.dir.join(name);
        std::fs::write(&path, bytes)
            .map_err(|e| CliError::io(format!("writing {}", path.display()), e))
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value).expect("reports serialize");
        text.push('\n');
        self.write_bytes(name, text.as_bytes())
    }

    pub fn write_csv<R, I>(&mut self, name: &str, header: &[&str], rows: I) -> Result<(), CliError>
    where
        R: IntoIterator<Item = String>,
        I: IntoIterator<Item = R>,
    {
        let mut w = csv::Writer::from_writer(Vec::new());
        let err =
            |e: csv::Error| CliError::io(format!("encoding {name}"), std::io::Error::other(e));
        w.write_record(header).map_err(err)?;
        for row in rows {
            w.write_record(row).map_err(err)?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| CliError::io(format!("encoding {name}"), e.into_error()))?;
        self.write_bytes(name, &bytes)
    }

    /// Hashes of every file in the directory except the manifest, sorted by
    /// name (files left by earlier runs are listed too).
    pub fn inventory(&self) -> Result<Vec<FileEntry>, CliError> {
        let ctx = |e| CliError::io(format!("listing {}", self.dir.display()), e);
        let mut names = Vec::new();
        for entry in std::fs::read_dir(&self.dir).map_err(ctx)? {
            let entry = entry.map_err(ctx)?;
            if entry.file_type().map_err(ctx)?.is_file() {
                let name = entry.file_name().to_string_lossy().into_owned();
                if name != MANIFEST {
                    names.push(name);
                }
            }
        }
        names.sort();
        names
            .into_iter()
            .map(|name| {
                let path = self.dir.join(&name);
                let bytes = std::fs::read(&path)
                    .map_err(|e| CliError::io(format!("reading {}", path.display()), e))?;
                Ok(FileEntry {
                    bytes: bytes.len() as u64,
                    sha256: sha256_hex(&bytes),
                    name,
                })
            })
            .collect()
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Provenance record written last as `manifest.json`.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub artifact: &'static str,
    pub version: &'static str,
    pub subcommand: String,
    pub resolved_config: Value,
    pub seeds: Vec<(String, u64)>,
    pub wall_clock_seconds: f64,
    pub exit_status: i32,
    pub files: Vec<FileEntry>,
}

pub fn write_manifest(out: &mut OutputDir, manifest: &RunManifest) -> Result<(), CliError> {
    out.write_json(MANIFEST, manifest)
}

pub fn num(v: f64) -> String {
    format!("{v}")
}

pub fn encode_bundle(b: &PathBundle) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(match b.measure {
        Measure::Reference => 0,
        Measure::Original => 1,
    });
    for v in [
        b.seed,
        b.num_paths as u64,
        b.state_dim as u64,
        b.action_dim as u64,
        b.num_steps() as u64,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&b.grid.horizon().to_le_bytes());
    out.extend_from_slice(&(b.obs_dims.len() as u64).to_le_bytes());
    for d in &b.obs_dims {
        out.extend_from_slice(&(*d as u64).to_le_bytes());
    }
    let arrays = [&b.states, &b.noise, &b.controls, &b.log_likelihood]
        .into_iter()
        .chain(b.observations.iter());
    for a in arrays {
        out.extend_from_slice(&(a.len() as u64).to_le_bytes());
        for v in a {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> std::io::Result<&[u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(std::io::Error::new(
                std::io::ErrorKind::UnexpectedEof,
                "truncated bundle",
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u64(&mut self) -> std::io::Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn f64(&mut self) -> std::io::Result<f64> {
        Ok(f64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn array(&mut self) -> std::io::Result<Vec<f64>> {
        let n = self.u64()? as usize;
        if n > (self.bytes.len() - self.pos) / 8 {
            return Err(bad("array length exceeds file size"));
        }
        (0..n).map(|_| self.f64()).collect()
    }
}

fn bad(msg: &str) -> std::io::Error {
    std::io::Error::new(std::io::ErrorKind::InvalidData, msg.to_string())
}

pub fn decode_bundle(bytes: &[u8]) -> std::io::Result<PathBundle> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(4)? != MAGIC {
        return Err(bad("not a TOPB bundle"));
    }
    let version = u32::from_le_bytes(c.take(4)?.try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(bad("unsupported bundle version"));
    }
    let measure = match c.take(1)?[0] {
        0 => Measure::Reference,
        1 => Measure::Original,
        _ => return Err(bad("unknown measure tag")),
    };
    let seed = c.u64()?;
    let num_paths = c.u64()? as usize;
    let state_dim = c.u64()? as usize;
    let action_dim = c.u64()? as usize;
    let steps = c.u64()? as usize;
    let horizon = c.f64()?;
    let agents = c.u64()? as usize;
    if agents > bytes.len() {
        return Err(bad("agent count exceeds file size"));
    }
    let obs_dims = (0..agents)
        .map(|_| c.u64().map(|d| d as usize))
        .collect::<std::io::Result<Vec<_>>>()?;
    let states = c.array()?;
    let noise = c.array()?;
    let controls = c.array()?;
    let log_likelihood = c.array()?;
    let observations = (0..agents)
        .map(|_| c.array())
        .collect::<std::io::Result<Vec<_>>>()?;
    if c.pos != bytes.len() {
        return Err(bad("trailing bytes after bundle"));
    }
    let grid = TimeGrid::new(horizon, steps).map_err(|e| bad(&e.to_string()))?;
    let w = steps + 1;
    if states.len() != num_paths * w * state_dim
        || noise.len() != num_paths * steps * state_dim
        || controls.len() != num_paths * steps * action_dim
        || log_likelihood.len() != num_paths * w
    {
        return Err(bad("array lengths disagree with the header"));
    }
    Ok(PathBundle {
        num_paths,
        state_dim,
        action_dim,
        grid,
        obs_dims,
        states,
        noise,
        observations,
        controls,
        log_likelihood,
        measure,
        seed,
    })
}

pub fn read_bundle(path: &Path) -> std::io::Result<PathBundle> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_bundle(&bytes)
}
