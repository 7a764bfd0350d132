//! On-disk formats: JSON-lines currents and Q-functions, book JSON, point lists, CSV tables.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use openbook_core::dirichlet::{HalfBallGrid, QFunction};
use openbook_core::geometry::OpenBook;
use openbook_core::measures::DiscreteCurrent;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

pub const CURRENT_FORMAT: &str = "openbook-current";
pub const QFUNCTION_FORMAT: &str = "openbook-qfunction";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurrentHeader {
    pub format: String,
    pub version: u32,
    pub m: usize,
    pub dim: usize,
    pub count: usize,
    pub generator: String,
    pub seed: Option<u64>,
    pub tangents: bool,
}

#[derive(Serialize, Deserialize)]
struct SampleRecord {
    p: Vec<f64>,
    w: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    t: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    s: Option<usize>,
}

pub fn write_current<W: Write>(mut out: W, t: &DiscreteCurrent) -> Result<()> {
    let header = CurrentHeader {
        format: CURRENT_FORMAT.into(),
        version: 1,
        m: t.m,
        dim: t.points.first().map_or(0, Vec::len),
        count: t.len(),
        generator: t.generator.clone(),
        seed: t.seed,
        tangents: t.tangents.is_some(),
    };
    serde_json::to_writer(&mut out, &header)?;
    writeln!(out).map_err(|e| LabError::io("<output>", e))?;
    for i in 0..t.len() {
        let rec = SampleRecord {
            p: t.points[i].clone(),
            w: t.weights[i],
            t: t.tangents.as_ref().map(|tg| tg[i].clone()),
            s: t.sheet.get(i).copied(),
        };
        serde_json::to_writer(&mut out, &rec)?;
        writeln!(out).map_err(|e| LabError::io("<output>", e))?;
    }
    Ok(())
}

pub fn read_current<R: BufRead>(input: R, path: &Path) -> Result<DiscreteCurrent> {
    let bad = |line: usize, msg: String| LabError::Format {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut lines = input.lines();
    let first = lines
        .next()
        .ok_or_else(|| bad(1, "empty file".into()))?
        .map_err(|e| LabError::io(path, e))?;
    let header: CurrentHeader = serde_json::from_str(&first).map_err(|e| bad(1, e.to_string()))?;
    if header.format != CURRENT_FORMAT {
        return Err(bad(
            1,
            format!("expected format {CURRENT_FORMAT}, got {}", header.format),
        ));
    }
    let mut t = DiscreteCurrent {
        m: header.m,
        points: Vec::with_capacity(header.count),
        weights: Vec::with_capacity(header.count),
        tangents: header.tangents.then(Vec::new),
        sheet: Vec::new(),
        generator: header.generator.clone(),
        seed: header.seed,
    };
    for (k, line) in lines.enumerate() {
        let line = line.map_err(|e| LabError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: SampleRecord =
            serde_json::from_str(&line).map_err(|e| bad(k + 2, e.to_string()))?;
        if rec.p.len() != header.dim {
            return Err(bad(
                k + 2,
                format!(
                    "point has dimension {}, header says {}",
                    rec.p.len(),
                    header.dim
                ),
            ));
        }
        match (&mut t.tangents, rec.t) {
            (Some(tg), Some(row)) => tg.push(row),
            (Some(_), None) => return Err(bad(k + 2, "missing tangent".into())),
            _ => {}
        }
        if let Some(s) = rec.s {
            t.sheet.push(s);
        }
        t.points.push(rec.p);
        t.weights.push(rec.w);
    }
    if t.len() != header.count {
        return Err(bad(
            1,
            format!(
                "header announces {} samples, found {}",
                header.count,
                t.len()
            ),
        ));
    }
    if !t.sheet.is_empty() && t.sheet.len() != t.len() {
        return Err(bad(1, "sheet labels present on some samples only".into()));
    }
    t.validate()?;
    Ok(t)
}

pub fn save_current(path: &Path, t: &DiscreteCurrent) -> Result<()> {
    let f = File::create(path).map_err(|e| LabError::io(path, e))?;
    let mut w = BufWriter::new(f);
    write_current(&mut w, t)?;
    w.flush().map_err(|e| LabError::io(path, e))
}

pub fn load_current(path: &Path) -> Result<DiscreteCurrent> {
    let f = File::open(path).map_err(|e| LabError::io(path, e))?;
    read_current(BufReader::new(f), path)
}

/// Shorthand for books over the standard spine.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanarBook {
    pub m: usize,
    pub n: usize,
    /// `(θ, Q_i)` pairs.
    pub sheets: Vec<(f64, usize)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BookFile {
    Planar { planar: PlanarBook },
    Full(OpenBook),
}

impl BookFile {
    pub fn build(&self) -> Result<OpenBook> {
        match self {
            BookFile::Planar { planar } => {
                Ok(OpenBook::planar(planar.m, planar.n, &planar.sheets)?)
            }
            BookFile::Full(b) => Ok(b.clone()),
        }
    }
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| LabError::Format {
        path: path.to_path_buf(),
        line: e.line(),
        msg: e.to_string(),
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| LabError::io(path, e))
}

pub fn load_book(path: &Path) -> Result<OpenBook> {
    read_json::<BookFile>(path)?.build()
}

/// A JSON array of points.
pub fn load_points(path: &Path) -> Result<Vec<Vec<f64>>> {
    read_json(path)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QFunctionHeader {
    pub format: String,
    pub version: u32,
    pub m: usize,
    pub n: usize,
    #[serde(rename = "Q")]
    pub q: usize,
    pub h: f64,
    pub zero_trace: bool,
    pub nodes: usize,
}

#[derive(Serialize, Deserialize)]
struct NodeRecord {
    k: Vec<i64>,
    a: Vec<f64>,
}

pub fn write_qfunction<W: Write>(mut out: W, u: &QFunction) -> Result<()> {
    let header = QFunctionHeader {
        format: QFUNCTION_FORMAT.into(),
        version: 1,
        m: u.grid.m(),
        n: u.n,
        q: u.q,
        h: u.grid.h(),
        zero_trace: u.zero_trace,
        nodes: u.grid.len(),
    };
    serde_json::to_writer(&mut out, &header)?;
    writeln!(out).map_err(|e| LabError::io("<output>", e))?;
    for idx in 0..u.grid.len() {
        let rec = NodeRecord {
            k: u.grid.multi_index(idx),
            a: u.atoms(idx).to_vec(),
        };
        serde_json::to_writer(&mut out, &rec)?;
        writeln!(out).map_err(|e| LabError::io("<output>", e))?;
    }
    Ok(())
}

pub fn read_qfunction<R: BufRead>(input: R, path: &Path) -> Result<QFunction> {
    let bad = |line: usize, msg: String| LabError::Format {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut lines = input.lines();
    let first = lines
        .next()
        .ok_or_else(|| bad(1, "empty file".into()))?
        .map_err(|e| LabError::io(path, e))?;
    let header: QFunctionHeader =
        serde_json::from_str(&first).map_err(|e| bad(1, e.to_string()))?;
    if header.format != QFUNCTION_FORMAT {
        return Err(bad(
            1,
            format!("expected format {QFUNCTION_FORMAT}, got {}", header.format),
        ));
    }
    let grid = HalfBallGrid::new(header.m, header.h)?;
    if grid.len() != header.nodes {
        return Err(bad(
            1,
            format!(
                "grid has {} nodes, header says {}",
                grid.len(),
                header.nodes
            ),
        ));
    }
    let w = header.q * header.n;
    let mut values = vec![f64::NAN; grid.len() * w];
    let mut seen = vec![false; grid.len()];
    for (k, line) in lines.enumerate() {
        let line = line.map_err(|e| LabError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: NodeRecord = serde_json::from_str(&line).map_err(|e| bad(k + 2, e.to_string()))?;
        if rec.k.len() != header.m {
            return Err(bad(k + 2, "node index has the wrong dimension".into()));
        }
        let idx = grid
            .index_of(&rec.k)
            .ok_or_else(|| bad(k + 2, "node outside the grid".into()))?;
        if rec.a.len() != w {
            return Err(bad(
                k + 2,
                format!("expected {w} values, got {}", rec.a.len()),
            ));
        }
        values[idx * w..(idx + 1) * w].copy_from_slice(&rec.a);
        seen[idx] = true;
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(bad(
            1,
            format!("node {:?} missing", grid.multi_index(missing)),
        ));
    }
    if header.zero_trace {
        for idx in (0..grid.len()).filter(|&i| grid.on_face(i)) {
            if values[idx * w..(idx + 1) * w].iter().any(|v| *v != 0.0) {
                return Err(bad(1, "zero_trace set but face values are nonzero".into()));
            }
        }
    }
    Ok(QFunction {
        grid,
        q: header.q,
        n: header.n,
        values,
        zero_trace: header.zero_trace,
    })
}

pub fn save_qfunction(path: &Path, u: &QFunction) -> Result<()> {
    let f = File::create(path).map_err(|e| LabError::io(path, e))?;
    let mut w = BufWriter::new(f);
    write_qfunction(&mut w, u)?;
    w.flush().map_err(|e| LabError::io(path, e))
}

pub fn load_qfunction(path: &Path) -> Result<QFunction> {
    let f = File::open(path).map_err(|e| LabError::io(path, e))?;
    read_qfunction(BufReader::new(f), path)
}

/// Column-labelled rows of plot-ready numbers.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Table {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn write<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.flush().map_err(|e| LabError::io("<output>", e))?;
        Ok(())
    }

    pub fn to_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }
}

/// Shortest round-trip decimal form.
pub fn num(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else {
        format!("{x}")
    }
}

pub fn opt(x: Option<f64>) -> String {
    x.map_or_else(String::new, num)
}
