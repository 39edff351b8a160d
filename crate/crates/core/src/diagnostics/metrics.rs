use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use super::RoundMetrics;
use crate::aggregation::{MatrixKind, MatrixTrace};
use crate::error::{Error, Result};

pub const METRICS_HEADER: &str = "round,aggregator,test_accuracy,test_loss,wall_seconds";
pub const TRACE_HEADER: &str = "round,layer,matrix,E,beta,rpca_iterations,rpca_residual,converged";

/// Sidecar trace file for a metrics file: `metrics.csv` pairs with
/// `rpca_trace.csv`, any other `name.csv` with `name.rpca_trace.csv`.
pub fn trace_path(metrics: &Path) -> PathBuf {
    let stem = metrics.file_stem().and_then(|s| s.to_str()).unwrap_or("metrics");
    let name = if stem == "metrics" {
        "rpca_trace.csv".to_string()
    } else {
        format!("{stem}.rpca_trace.csv")
    };
    metrics.with_file_name(name)
}

fn num(x: f64) -> String {
    format!("{x:.16e}")
}

/// Append-only writer for the metrics file and its trace sidecar.
pub struct MetricsWriter {
    metrics: BufWriter<File>,
    trace: BufWriter<File>,
    metrics_path: PathBuf,
    trace_path: PathBuf,
}

impl MetricsWriter {
    /// Creates (truncating) both files and writes their headers.
    pub fn create(path: impl AsRef<Path>) -> Result<Self> {
        let metrics_path = path.as_ref().to_path_buf();
        let trace_path = trace_path(&metrics_path);
        let open = |p: &Path| -> Result<BufWriter<File>> {
            let mut w = BufWriter::new(File::create(p).map_err(|e| Error::io(p, e))?);
            let header = if p == metrics_path { METRICS_HEADER } else { TRACE_HEADER };
            writeln!(w, "{header}").map_err(|e| Error::io(p, e))?;
            Ok(w)
        };
        Ok(Self {
            metrics: open(&metrics_path)?,
            trace: open(&trace_path)?,
            metrics_path,
            trace_path,
        })
    }

    pub fn append(&mut self, m: &RoundMetrics) -> Result<()> {
        if m.aggregator.contains([',', '\n', '\r']) {
            return Err(Error::invalid(format!("aggregator name {:?} is not CSV-safe", m.aggregator)));
        }
        writeln!(
            self.metrics,
            "{},{},{},{},{}",
            m.round,
            m.aggregator,
            num(m.test_accuracy),
            num(m.test_loss),
            num(m.wall_seconds)
        )
        .map_err(|e| Error::io(&self.metrics_path, e))?;
        for t in &m.rpca {
            writeln!(
                self.trace,
                "{},{},{},{},{},{},{},{}",
                m.round,
                t.layer,
                t.matrix,
                t.energy.map(num).unwrap_or_default(),
                num(t.beta),
                t.rpca_iterations,
                num(t.rpca_residual),
                t.converged
            )
            .map_err(|e| Error::io(&self.trace_path, e))?;
        }
        self.flush()
    }

    pub fn flush(&mut self) -> Result<()> {
        self.metrics.flush().map_err(|e| Error::io(&self.metrics_path, e))?;
        self.trace.flush().map_err(|e| Error::io(&self.trace_path, e))
    }
}

/// Writes `series` to `path` and its trace sidecar (see [`trace_path`]).
pub fn write_metrics(series: &[RoundMetrics], path: impl AsRef<Path>) -> Result<()> {
    let mut w = MetricsWriter::create(path)?;
    for m in series {
        w.append(m)?;
    }
    w.flush()
}

struct Lines<'a> {
    path: &'a Path,
    text: String,
}

impl<'a> Lines<'a> {
    fn read(path: &'a Path, header: &str) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let lines = Self { path, text };
        match lines.text.lines().next() {
            Some(h) if h.trim_end() == header => Ok(lines),
            _ => Err(lines.err(1, format!("expected header `{header}`"))),
        }
    }

    fn err(&self, line: usize, message: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.to_path_buf(),
            line,
            message: message.into(),
        }
    }

    /// Non-blank data rows as `(line number, fields)`.
    fn rows(&self, width: usize) -> Result<Vec<(usize, Vec<&str>)>> {
        self.text
            .lines()
            .enumerate()
            .skip(1)
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                let fields: Vec<&str> = l.trim_end().split(',').collect();
                if fields.len() != width {
                    return Err(self.err(i + 1, format!("expected {width} columns, found {}", fields.len())));
                }
                Ok((i + 1, fields))
            })
            .collect()
    }

    fn field<T: std::str::FromStr>(&self, line: usize, name: &str, raw: &str) -> Result<T> {
        raw.trim()
            .parse()
            .map_err(|_| self.err(line, format!("invalid {name} `{raw}`")))
    }
}

/// Reads a metrics file and its trace sidecar (absent sidecar means no trace).
pub fn read_metrics(path: impl AsRef<Path>) -> Result<Vec<RoundMetrics>> {
    let path = path.as_ref();
    let file = Lines::read(path, METRICS_HEADER)?;
    let mut series = Vec::new();
    for (line, f) in file.rows(5)? {
        let m = RoundMetrics {
            round: file.field(line, "round", f[0])?,
            aggregator: f[1].to_string(),
            test_accuracy: file.field(line, "test_accuracy", f[2])?,
            test_loss: file.field(line, "test_loss", f[3])?,
            wall_seconds: file.field(line, "wall_seconds", f[4])?,
            rpca: Vec::new(),
        };
        if !(0.0..=1.0).contains(&m.test_accuracy) {
            return Err(file.err(line, format!("test_accuracy {} outside [0, 1]", m.test_accuracy)));
        }
        if series.last().is_some_and(|p: &RoundMetrics| p.round >= m.round) {
            return Err(file.err(line, "rounds must be strictly increasing"));
        }
        series.push(m);
    }

    let tpath = trace_path(path);
    if !tpath.exists() {
        return Ok(series);
    }
    let trace = Lines::read(&tpath, TRACE_HEADER)?;
    for (line, f) in trace.rows(8)? {
        let round: i64 = trace.field(line, "round", f[0])?;
        let matrix = match f[2].trim() {
            "A" => MatrixKind::A,
            "B" => MatrixKind::B,
            other => return Err(trace.err(line, format!("invalid matrix `{other}`"))),
        };
        let energy = match f[3].trim() {
            "" => None,
            raw => Some(trace.field(line, "E", raw)?),
        };
        let record = MatrixTrace {
            layer: trace.field(line, "layer", f[1])?,
            matrix,
            energy,
            beta: trace.field(line, "beta", f[4])?,
            rpca_iterations: trace.field(line, "rpca_iterations", f[5])?,
            rpca_residual: trace.field(line, "rpca_residual", f[6])?,
            converged: trace.field(line, "converged", f[7])?,
        };
        let target = series
            .iter_mut()
            .find(|m| m.round == round)
            .ok_or_else(|| trace.err(line, format!("round {round} is not in {}", path.display())))?;
        target.rpca.push(record);
    }
    Ok(series)
}
