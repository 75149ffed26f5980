//! On-disk formats of a run directory.
//!
//! | file | content |
//! |------|---------|
//! | `metrics.csv` | one row per round, header [`METRICS_HEADER`] |
//! | `rounds.jsonl` | one JSON object per round with the full record |
//! | `partition.json` | partition recipe and per-client example indices |
//! | `label_histogram.csv` | per-client class counts |
//! | `manifest.json` | run description, written before round 1 and rewritten at the end |
//! | `config.toml` | resolved configuration |
//! | `model.bin` | `u64` little-endian length, then that many `f64` little-endian |

use std::fs::{self, File};
use std::io::{self, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use fedstas_core::data::{Partition, PartitionRecipe};
use fedstas_core::engine::{MetricsRecord, Strategy};
use fedstas_core::model::{Example, ParamVector};

pub const METRICS_HEADER: [&str; 6] = [
    "round",
    "train_loss",
    "test_accuracy",
    "n_selected",
    "ntilde",
    "wall_ms",
];

pub const METRICS_FILE: &str = "metrics.csv";
pub const ROUNDS_FILE: &str = "rounds.jsonl";
pub const PARTITION_FILE: &str = "partition.json";
pub const HISTOGRAM_FILE: &str = "label_histogram.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONFIG_FILE: &str = "config.toml";
pub const MODEL_FILE: &str = "model.bin";

fn create(path: &Path) -> io::Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

fn open(path: &Path) -> io::Result<File> {
    File::open(path).map_err(|e| io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

/// Streams per-round rows to `metrics.csv` and `rounds.jsonl`, flushing after each round.
pub struct RoundLog {
    csv: csv::Writer<BufWriter<File>>,
    jsonl: BufWriter<File>,
}

impl RoundLog {
    pub fn create(dir: &Path) -> io::Result<Self> {
        let mut csv = csv::Writer::from_writer(create(&dir.join(METRICS_FILE))?);
        csv.write_record(METRICS_HEADER)?;
        csv.flush()?;
        Ok(RoundLog {
            csv,
            jsonl: create(&dir.join(ROUNDS_FILE))?,
        })
    }

    pub fn append(&mut self, rec: &MetricsRecord) -> io::Result<()> {
        self.csv.write_record([
            rec.round.to_string(),
            rec.train_loss.to_string(),
            rec.test_accuracy.to_string(),
            rec.distinct_selected().to_string(),
            opt(rec.ntilde),
            opt(rec.wall_time_ms),
        ])?;
        self.csv.flush()?;
        serde_json::to_writer(&mut self.jsonl, &RoundJson::from(rec))?;
        self.jsonl.write_all(b"\n")?;
        self.jsonl.flush()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundJson {
    pub round: usize,
    pub train_loss: f64,
    pub test_loss: f64,
    pub test_accuracy: f64,
    pub selected_client_ids: Vec<usize>,
    pub allocation: Vec<usize>,
    pub ntilde: Option<f64>,
    pub data_budget: Option<usize>,
    pub examples_used: usize,
    pub stale_updates: usize,
    pub wall_time_ms: Option<u64>,
}

impl From<&MetricsRecord> for RoundJson {
    fn from(r: &MetricsRecord) -> Self {
        RoundJson {
            round: r.round,
            train_loss: r.train_loss,
            test_loss: r.test_loss,
            test_accuracy: r.test_accuracy,
            selected_client_ids: r.selected_client_ids.clone(),
            allocation: r.allocation.clone(),
            ntilde: r.ntilde,
            data_budget: r.data_budget,
            examples_used: r.examples_used,
            stale_updates: r.stale_updates,
            wall_time_ms: r.wall_time_ms,
        }
    }
}

/// One parsed `metrics.csv` row.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct MetricsRow {
    pub round: usize,
    pub train_loss: f64,
    pub test_accuracy: f64,
    pub n_selected: usize,
    pub ntilde: Option<f64>,
    pub wall_ms: Option<u64>,
}

pub fn read_metrics(path: &Path) -> io::Result<Vec<MetricsRow>> {
    let mut reader = csv::Reader::from_reader(open(path)?);
    let header = reader.headers()?.clone();
    if header.iter().ne(METRICS_HEADER) {
        return Err(io::Error::new(
            io::ErrorKind::InvalidData,
            format!("{}: unexpected header", path.display()),
        ));
    }
    reader
        .deserialize()
        .collect::<Result<Vec<MetricsRow>, _>>()
        .map_err(|e| {
            io::Error::new(
                io::ErrorKind::InvalidData,
                format!("{}: {e}", path.display()),
            )
        })
}

/// Serialized partition: indices into the source dataset, not copies of examples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionFile {
    pub recipe: PartitionRecipe,
    pub num_examples: usize,
    pub num_classes: usize,
    pub clients: Vec<Vec<usize>>,
}

impl PartitionFile {
    pub fn new(partition: &Partition) -> Self {
        PartitionFile {
            recipe: partition.recipe,
            num_examples: partition.clients.iter().map(Vec::len).sum(),
            num_classes: partition.label_histogram.first().map_or(0, Vec::len),
            clients: partition.clients.clone(),
        }
    }

    /// Rebuilds the partition against its source dataset.
    pub fn into_partition(self, examples: &[Example]) -> io::Result<Partition> {
        if examples.len() != self.num_examples {
            return Err(io::Error::new(
                io::ErrorKind::InvalidData,
                format!(
                    "partition covers {} examples, dataset has {}",
                    self.num_examples,
                    examples.len()
                ),
            ));
        }
        Partition::from_clients(self.recipe, self.clients, examples, self.num_classes)
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e.to_string()))
    }
}

pub fn write_partition(path: &Path, partition: &Partition) -> io::Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer(&mut w, &PartitionFile::new(partition))?;
    w.write_all(b"\n")?;
    w.flush()
}

pub fn read_partition(path: &Path) -> io::Result<PartitionFile> {
    let bytes =
        fs::read(path).map_err(|e| io::Error::new(e.kind(), format!("{}: {e}", path.display())))?;
    serde_json::from_slice(&bytes).map_err(|e| {
        io::Error::new(
            io::ErrorKind::InvalidData,
            format!("{}: {e}", path.display()),
        )
    })
}

/// Header `client,size,label_0,...`; one row per client.
pub fn write_label_histogram(path: &Path, partition: &Partition) -> io::Result<()> {
    let classes = partition.label_histogram.first().map_or(0, Vec::len);
    let mut w = csv::Writer::from_writer(create(path)?);
    let mut header = vec!["client".to_string(), "size".to_string()];
    header.extend((0..classes).map(|c| format!("label_{c}")));
    w.write_record(&header)?;
    for (k, row) in partition.label_histogram.iter().enumerate() {
        let mut rec = vec![k.to_string(), row.iter().sum::<usize>().to_string()];
        rec.extend(row.iter().map(usize::to_string));
        w.write_record(&rec)?;
    }
    w.flush()
}

pub fn write_model(path: &Path, params: &ParamVector) -> io::Result<()> {
    let mut w = create(path)?;
    w.write_all(&(params.len() as u64).to_le_bytes())?;
    for v in params.as_slice() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()
}

pub fn read_model(path: &Path) -> io::Result<ParamVector> {
    let mut bytes = Vec::new();
    open(path)?.read_to_end(&mut bytes)?;
    let bad = |msg: &str| {
        io::Error::new(
            io::ErrorKind::InvalidData,
            format!("{}: {msg}", path.display()),
        )
    };
    let (len, body) = bytes
        .split_at_checked(8)
        .ok_or_else(|| bad("missing length prefix"))?;
    let len = u64::from_le_bytes(len.try_into().expect("8 bytes"));
    if body.len() as u64 != len.saturating_mul(8) {
        return Err(bad("length prefix does not match payload"));
    }
    Ok(ParamVector(
        body.chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect(),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Running,
    Completed,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outputs {
    pub metrics: PathBuf,
    pub rounds: PathBuf,
    pub partition: PathBuf,
    pub label_histogram: PathBuf,
    pub config: PathBuf,
    pub model: PathBuf,
}

impl Default for Outputs {
    fn default() -> Self {
        Outputs {
            metrics: METRICS_FILE.into(),
            rounds: ROUNDS_FILE.into(),
            partition: PARTITION_FILE.into(),
            label_histogram: HISTOGRAM_FILE.into(),
            config: CONFIG_FILE.into(),
            model: MODEL_FILE.into(),
        }
    }
}

/// Self-description of a run directory; `config` alone reproduces the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub core_version: String,
    pub strategy: Strategy,
    pub master_seed: u64,
    pub config: serde_json::Value,
    pub status: RunStatus,
    pub started_at: String,
    pub finished_at: Option<String>,
    pub rounds_completed: usize,
    /// Privatized size reports released over the run.
    pub size_reports: usize,
    pub error: Option<String>,
    /// Relative to the run directory.
    pub outputs: Outputs,
}

pub fn write_manifest(dir: &Path, manifest: &Manifest) -> io::Result<()> {
    let tmp = dir.join(".manifest.json.tmp");
    let mut w = create(&tmp)?;
    serde_json::to_writer_pretty(&mut w, manifest)?;
    w.write_all(b"\n")?;
    w.flush()?;
    drop(w);
    fs::rename(tmp, dir.join(MANIFEST_FILE))
}

pub fn read_manifest(dir: &Path) -> io::Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    let bytes = fs::read(&path)
        .map_err(|e| io::Error::new(e.kind(), format!("{}: {e}", path.display())))?;
    serde_json::from_slice(&bytes).map_err(|e| {
        io::Error::new(
            io::ErrorKind::InvalidData,
            format!("{}: {e}", path.display()),
        )
    })
}
