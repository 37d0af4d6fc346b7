//! Output directory bookkeeping. Every file goes through [`Outputs`] so the
//! manifest can list exactly what was written.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde_json::{json, Map, Value};

use crate::failure::Failure;

pub struct Outputs {
    dir: PathBuf,
    files: Vec<String>,
    results: Map<String, Value>,
}

impl Outputs {
    pub fn new(dir: &Path) -> Result<Self, Failure> {
        std::fs::create_dir_all(dir).map_err(|e| Failure::Output(format!("cannot create {}: {e}", dir.display())))?;
        Ok(Outputs { dir: dir.to_path_buf(), files: Vec::new(), results: Map::new() })
    }

    fn open(&mut self, name: &str) -> Result<BufWriter<File>, Failure> {
        let path = self.dir.join(name);
        let f = File::create(&path).map_err(|e| Failure::Output(format!("cannot create {}: {e}", path.display())))?;
        if !self.files.iter().any(|n| n == name) {
            self.files.push(name.to_string());
        }
        Ok(BufWriter::new(f))
    }

    /// Writes a CSV file through a library writer taking `impl Write`.
    pub fn write_with<F>(&mut self, name: &str, body: F) -> Result<(), Failure>
    where
        F: FnOnce(&mut BufWriter<File>) -> raman_hom::Result<()>,
    {
        let mut w = self.open(name)?;
        body(&mut w).map_err(|e| Failure::Output(format!("{name}: {e}")))?;
        w.flush().map_err(|e| Failure::Output(format!("{name}: {e}")))
    }

    /// Writes a CSV file from a header and rows of numbers or strings.
    pub fn table<R, I>(&mut self, name: &str, header: &[&str], rows: I) -> Result<(), Failure>
    where
        I: IntoIterator<Item = R>,
        R: IntoIterator,
        R::Item: Cell,
    {
        let err = |e: csv::Error| Failure::Output(format!("{name}: {e}"));
        let mut w = csv::Writer::from_writer(self.open(name)?);
        w.write_record(header).map_err(err)?;
        for row in rows {
            let fields: Vec<String> = row.into_iter().map(|x| x.cell()).collect();
            w.write_record(&fields).map_err(err)?;
        }
        w.flush().map_err(|e| Failure::Output(format!("{name}: {e}")))
    }

    /// Records a headline number in the manifest.
    pub fn result(&mut self, key: &str, value: impl Into<Value>) {
        self.results.insert(key.to_string(), value.into());
    }

    pub fn finish(mut self, run: RunInfo) -> Result<PathBuf, Failure> {
        let name = "manifest.json";
        self.files.push(name.to_string());
        let manifest = json!({
            "subcommand": run.subcommand,
            "scenario": {
                "path": run.scenario_path.display().to_string(),
                "contents": run.scenario_text,
            },
            "seed": run.seed,
            "substreams": run.substreams,
            "threads": run.threads,
            "versions": {
                "raman-hom-cli": env!("CARGO_PKG_VERSION"),
                "raman-hom": raman_hom::VERSION,
            },
            "wall_time_s": run.started.elapsed().as_secs_f64(),
            "outputs": self.files,
            "results": Value::Object(self.results),
        });
        let path = self.dir.join(name);
        let text = serde_json::to_string_pretty(&manifest).expect("manifest is plain JSON");
        std::fs::write(&path, text + "\n").map_err(|e| Failure::Output(format!("{}: {e}", path.display())))?;
        Ok(path)
    }
}

/// CSV field text. Floats use the shortest round-trip form, which switches to
/// exponent notation for very small or large magnitudes.
pub trait Cell {
    fn cell(&self) -> String;
}

impl Cell for f64 {
    fn cell(&self) -> String {
        format!("{self:?}")
    }
}

impl Cell for u64 {
    fn cell(&self) -> String {
        self.to_string()
    }
}

impl Cell for String {
    fn cell(&self) -> String {
        self.clone()
    }
}

pub struct RunInfo {
    pub subcommand: &'static str,
    pub scenario_path: PathBuf,
    pub scenario_text: String,
    pub seed: u64,
    pub substreams: Map<String, Value>,
    pub threads: usize,
    pub started: Instant,
}
