//! Run directories: manifest, CSV tables, snapshots and checkpoints.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use kfl_core::grid::Grid1D;
use kfl_core::model::Frame;
use kfl_core::solver::{Checkpoint, Formulation, RunSink, Snapshot, TraceRow};

use crate::config::file_digest;

pub const MANIFEST: &str = "manifest.json";
pub const TRACE: &str = "trace.csv";
pub const CONFIG_COPY: &str = "config.toml";

/// Seventeen significant digits, enough to round-trip any `f64`.
pub fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn now_unix() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Running,
    Complete,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotEntry {
    pub t: f64,
    pub path: String,
    pub frame: Frame,
    pub formulation: Formulation,
    pub dx: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub kind: String,
    pub status: Status,
    pub config_hash: String,
    pub numerics_hash: String,
    pub code_version: String,
    pub platform: String,
    pub started_unix: f64,
    pub finished_unix: Option<f64>,
    pub files: Vec<FileEntry>,
    pub headline: BTreeMap<String, f64>,
    pub snapshots: Vec<SnapshotEntry>,
    /// Latest checkpoint, relative to the run directory.
    pub checkpoint: Option<String>,
    pub resumed_from: Option<String>,
    pub error: Option<String>,
}

impl Manifest {
    pub fn new(kind: &str, config_hash: String, numerics_hash: String) -> Self {
        Self {
            kind: kind.to_string(),
            status: Status::Running,
            config_hash,
            numerics_hash,
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            platform: format!("{}-{}", std::env::consts::OS, std::env::consts::ARCH),
            started_unix: now_unix(),
            finished_unix: None,
            files: Vec::new(),
            headline: BTreeMap::new(),
            snapshots: Vec::new(),
            checkpoint: None,
            resumed_from: None,
            error: None,
        }
    }

    /// Records a finite metric; non-finite values are skipped because JSON cannot carry them.
    pub fn metric(&mut self, name: impl Into<String>, value: f64) {
        if value.is_finite() {
            self.headline.insert(name.into(), value);
        }
    }

    pub fn load(dir: &Path) -> std::io::Result<Self> {
        let text = fs::read_to_string(dir.join(MANIFEST))?;
        serde_json::from_str(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }

    pub fn save(&self, dir: &Path) -> std::io::Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(std::io::Error::other)?;
        let tmp = dir.join("manifest.json.tmp");
        fs::write(&tmp, text)?;
        fs::rename(tmp, dir.join(MANIFEST))
    }

    /// Lists every file under `dir` except the manifest, with digests.
    pub fn inventory(&mut self, dir: &Path) -> std::io::Result<()> {
        let mut files = Vec::new();
        collect_files(dir, dir, &mut files)?;
        files.sort();
        self.files = files
            .into_iter()
            .filter(|rel| rel != MANIFEST && !rel.ends_with(".tmp"))
            .map(|rel| {
                let bytes = fs::read(dir.join(&rel))?;
                Ok(FileEntry { sha256: file_digest(&bytes), bytes: bytes.len() as u64, path: rel })
            })
            .collect::<std::io::Result<_>>()?;
        Ok(())
    }

    /// Files whose digest no longer matches, or that are missing.
    pub fn verify(&self, dir: &Path) -> Vec<String> {
        self.files
            .iter()
            .filter(|f| fs::read(dir.join(&f.path)).map(|b| file_digest(&b) != f.sha256).unwrap_or(true))
            .map(|f| f.path.clone())
            .collect()
    }
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<String>) -> std::io::Result<()> {
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else {
            let rel = path.strip_prefix(root).expect("inside root");
            out.push(rel.to_string_lossy().replace('\\', "/"));
        }
    }
    Ok(())
}

/// Prepares `dir` for a fresh run: an earlier run directory is cleared, any other non-empty
/// directory is refused.
pub fn prepare_run_dir(dir: &Path) -> Result<(), String> {
    if dir.exists() {
        let mut entries = fs::read_dir(dir).map_err(|e| format!("{}: {e}", dir.display()))?.peekable();
        if entries.peek().is_some() {
            if !dir.join(MANIFEST).exists() {
                return Err(format!("{} is not empty and is not a run directory", dir.display()));
            }
            for entry in fs::read_dir(dir).map_err(|e| e.to_string())? {
                let path = entry.map_err(|e| e.to_string())?.path();
                let removed = if path.is_dir() { fs::remove_dir_all(&path) } else { fs::remove_file(&path) };
                removed.map_err(|e| format!("{}: {e}", path.display()))?;
            }
        }
    }
    fs::create_dir_all(dir).map_err(|e| format!("{}: {e}", dir.display()))
}

/// Writes a CSV table with a header and full-precision values.
pub fn write_table(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<f64>>) -> std::io::Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(row.iter().map(|v| fmt(*v)))?;
    }
    w.flush()
}

/// Reads a numeric CSV table written by [`write_table`]; returns the header and the columns.
pub fn read_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>), String> {
    let mut r = csv::Reader::from_path(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let header: Vec<String> = r.headers().map_err(|e| e.to_string())?.iter().map(String::from).collect();
    let mut cols = vec![Vec::new(); header.len()];
    for rec in r.records() {
        let rec = rec.map_err(|e| format!("{}: {e}", path.display()))?;
        for (c, field) in cols.iter_mut().zip(rec.iter()) {
            c.push(field.trim().parse::<f64>().map_err(|e| format!("{}: {e}", path.display()))?);
        }
    }
    Ok((header, cols))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> std::io::Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, serde_json::to_string_pretty(value).map_err(std::io::Error::other)?)
}

pub const TRACE_HEADER: [&str; 5] = ["t", "level", "position_frame", "position_lab", "amplitude"];

pub fn trace_record(r: &TraceRow) -> Vec<f64> {
    vec![r.t, r.level, r.position_frame, r.position_lab, r.amplitude]
}

pub fn read_trace(path: &Path) -> Result<Vec<TraceRow>, String> {
    let (header, cols) = read_table(path)?;
    if header != TRACE_HEADER {
        return Err(format!("{}: unexpected header {header:?}", path.display()));
    }
    Ok((0..cols[0].len())
        .map(|i| TraceRow {
            t: cols[0][i],
            level: cols[1][i],
            position_frame: cols[2][i],
            position_lab: cols[3][i],
            amplitude: cols[4][i],
        })
        .collect())
}

pub fn snapshot_name(t: f64) -> String {
    format!("snapshots/t{t}.csv")
}

fn write_snapshot(dir: &Path, snap: &Snapshot) -> std::io::Result<String> {
    let rel = snapshot_name(snap.t);
    let shift = snap.frame.shift(snap.t);
    let u = snap.u_values();
    let v = snap.v_values();
    let rows = snap.grid.nodes().enumerate().map(|(i, x)| vec![x, x + shift, u[i], v[i]]);
    write_table(&dir.join(&rel), &["x", "x_lab", "u", "v"], rows)?;
    Ok(rel)
}

pub fn read_snapshot(dir: &Path, entry: &SnapshotEntry) -> Result<Snapshot, String> {
    let (header, cols) = read_table(&dir.join(&entry.path))?;
    if header != ["x", "x_lab", "u", "v"] || cols[0].len() < 2 {
        return Err(format!("{}: malformed snapshot", entry.path));
    }
    let grid = Grid1D::from_len(cols[0][0], entry.dx, cols[0].len()).map_err(|e| e.to_string())?;
    let values = match entry.formulation {
        Formulation::UForm => cols[2].clone(),
        Formulation::VForm => cols[3].clone(),
    };
    Ok(Snapshot { t: entry.t, frame: entry.frame, formulation: entry.formulation, grid, values })
}

/// Streams solver output into a run directory.
pub struct FileSink {
    dir: PathBuf,
    trace: csv::Writer<fs::File>,
    pub manifest: Manifest,
    dx: f64,
}

impl FileSink {
    /// Opens `trace.csv` and writes the carried-over rows first.
    pub fn new(dir: &Path, manifest: Manifest, dx: f64, carried: &[TraceRow]) -> std::io::Result<Self> {
        let mut trace = csv::Writer::from_path(dir.join(TRACE))?;
        trace.write_record(TRACE_HEADER)?;
        for r in carried {
            trace.write_record(trace_record(r).iter().map(|v| fmt(*v)))?;
        }
        trace.flush()?;
        Ok(Self { dir: dir.to_path_buf(), trace, manifest, dx })
    }

    pub fn finish(mut self) -> std::io::Result<Manifest> {
        self.trace.flush()?;
        Ok(self.manifest)
    }
}

fn io(e: std::io::Error) -> kfl_core::Error {
    kfl_core::Error::Io(e)
}

impl RunSink for FileSink {
    fn trace(&mut self, row: &TraceRow) -> kfl_core::Result<()> {
        let record: Vec<String> = trace_record(row).iter().map(|v| fmt(*v)).collect();
        self.trace.write_record(&record).map_err(|e| io(e.into()))
    }

    fn snapshot(&mut self, snapshot: &Snapshot) -> kfl_core::Result<()> {
        let path = write_snapshot(&self.dir, snapshot).map_err(io)?;
        self.manifest.snapshots.retain(|e| e.path != path);
        self.manifest.snapshots.push(SnapshotEntry {
            t: snapshot.t,
            path,
            frame: snapshot.frame,
            formulation: snapshot.formulation,
            dx: self.dx,
        });
        Ok(())
    }

    fn checkpoint(&mut self, checkpoint: &Checkpoint) -> kfl_core::Result<()> {
        self.trace.flush().map_err(io)?;
        let rel = format!("checkpoints/ckpt_t{}.json", checkpoint.state.t);
        write_json(&self.dir.join(&rel), checkpoint).map_err(io)?;
        self.manifest.checkpoint = Some(rel);
        self.manifest.save(&self.dir).map_err(io)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_digits_round_trip() {
        for x in [std::f64::consts::PI, -1.0 / 3.0, 1e-300, 6.02214076e23] {
            let s = fmt(x);
            assert_eq!(s.parse::<f64>().unwrap(), x);
            let mantissa = s.split('e').next().unwrap().replace(['-', '.'], "");
            assert_eq!(mantissa.len(), 17);
        }
    }

    #[test]
    fn manifest_detects_tampering() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("a.csv"), "x\n1\n").unwrap();
        let mut m = Manifest::new("wave", "h".into(), "n".into());
        m.inventory(dir.path()).unwrap();
        m.save(dir.path()).unwrap();
        assert!(m.verify(dir.path()).is_empty());
        fs::write(dir.path().join("a.csv"), "x\n2\n").unwrap();
        assert_eq!(m.verify(dir.path()), vec!["a.csv".to_string()]);
    }

    #[test]
    fn foreign_directories_are_not_cleared() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("notes.txt"), "keep").unwrap();
        assert!(prepare_run_dir(dir.path()).is_err());
        assert!(dir.path().join("notes.txt").exists());
    }
}
