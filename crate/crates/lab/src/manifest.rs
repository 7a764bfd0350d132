//! Batch experiments: one decay run per (seed, resolution), executed in parallel.

use std::path::{Path, PathBuf};

use openbook_core::geometry::OpenBook;
use openbook_core::measures::{SampleLayout, SheetGraph};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::Params;
use crate::decay::{decay_loop, noise_floor, CurrentSource, DecaySummary};
use crate::error::{LabError, Result};
use crate::fixtures::BlowupFamily;
use crate::formats::{num, opt, BookFile, Table};

pub const THREADS_ENV: &str = "OPENBOOK_LAB_THREADS";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FixtureSpec {
    Blowup {
        family: BlowupFamily,
        amplitude: f64,
    },
    /// An exact book; the loop should only halve.
    Book { book: BookFile },
}

impl FixtureSpec {
    pub fn name(&self) -> String {
        match self {
            FixtureSpec::Blowup { family, amplitude } => {
                format!("{}_{}", family.name(), num(*amplitude))
            }
            FixtureSpec::Book { .. } => "book".into(),
        }
    }

    pub fn book(&self) -> Result<OpenBook> {
        match self {
            FixtureSpec::Blowup { family, .. } => Ok(family.book()),
            FixtureSpec::Book { book } => book.build(),
        }
    }

    pub fn source(&self, count: usize, seed: u64) -> Result<CurrentSource> {
        let book = self.book()?;
        let graph = match self {
            FixtureSpec::Blowup { family, amplitude } => family.graph(*amplitude),
            FixtureSpec::Book { .. } => SheetGraph::zero(&book),
        };
        Ok(CurrentSource::Graph {
            book,
            graph,
            count,
            seed,
            layout: SampleLayout::Stratified,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub fixture: FixtureSpec,
    #[serde(default)]
    pub parameters: Params,
    pub seeds: Vec<u64>,
    /// Base-point counts.
    pub resolutions: Vec<usize>,
    #[serde(default = "default_radius")]
    pub radius: f64,
}

fn default_radius() -> f64 {
    0.5
}

#[derive(Clone, Debug)]
pub struct JobResult {
    pub seed: u64,
    pub resolution: usize,
    pub noise_floor: f64,
    pub summary: DecaySummary,
    pub path: PathBuf,
}

impl JobResult {
    pub fn passed(&self) -> bool {
        self.summary.q_conserved && self.summary.ratios_in_range
    }
}

/// Worker count from the environment, if set to a positive integer.
pub fn thread_cap() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(LabError::Config(format!(
                "{THREADS_ENV} must be a positive integer, got {v:?}"
            ))),
        },
        Err(_) => Ok(None),
    }
}

/// Runs `f` on a pool capped by [`THREADS_ENV`].
pub fn with_pool<T: Send>(f: impl FnOnce() -> T + Send) -> Result<T> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = thread_cap()? {
        b = b.num_threads(n);
    }
    let pool = b.build().map_err(|e| LabError::Config(e.to_string()))?;
    Ok(pool.install(f))
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let m: Manifest = crate::formats::read_json(path)?;
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<Vec<String>> {
        if self.seeds.is_empty() || self.resolutions.is_empty() {
            return Err(LabError::Config(
                "manifest needs at least one seed and one resolution".into(),
            ));
        }
        if !(self.radius > 0.0) {
            return Err(LabError::Config("radius must be positive".into()));
        }
        self.parameters.validate()
    }

    /// Jobs in (seed, resolution) order.
    pub fn jobs(&self) -> Vec<(u64, usize)> {
        self.seeds
            .iter()
            .flat_map(|&s| self.resolutions.iter().map(move |&n| (s, n)))
            .collect()
    }

    /// Writes `<fixture>_s<seed>_n<resolution>.jsonl` per job and `summary.csv` into `dir`.
    pub fn run(&self, dir: &Path) -> Result<Vec<JobResult>> {
        std::fs::create_dir_all(dir).map_err(|e| LabError::io(dir, e))?;
        let book = self.fixture.book()?;
        let p = book.spine().origin().to_vec();
        let name = self.fixture.name();
        let jobs = self.jobs();
        let results: Vec<Result<JobResult>> = with_pool(|| {
            jobs.par_iter()
                .map(|&(seed, resolution)| {
                    let source = self.fixture.source(resolution, seed)?;
                    let params = self.parameters.decay(seed);
                    let summary = decay_loop(&source, &book, &p, self.radius, &params)?;
                    let floor = noise_floor(&source, &book, &p, self.radius, &params.cone)?;
                    let path = dir.join(format!("{name}_s{seed}_n{resolution}.jsonl"));
                    write_records(&path, &summary, resolution, floor)?;
                    Ok(JobResult {
                        seed,
                        resolution,
                        noise_floor: floor,
                        summary,
                        path,
                    })
                })
                .collect()
        })?;
        let results: Vec<JobResult> = results.into_iter().collect::<Result<_>>()?;
        let mut table = Table::new(&[
            "fixture",
            "seed",
            "resolution",
            "noise_floor",
            "steps",
            "refits",
            "contracted",
            "contraction_rate",
            "max_drift",
            "q_conserved",
            "ratios_in_range",
        ]);
        for r in &results {
            let s = &r.summary;
            table.push(vec![
                name.clone(),
                r.seed.to_string(),
                r.resolution.to_string(),
                num(r.noise_floor),
                s.records.len().to_string(),
                s.refits.to_string(),
                s.contracted.to_string(),
                opt(s.contraction_rate()),
                opt(s.max_drift),
                s.q_conserved.to_string(),
                s.ratios_in_range.to_string(),
            ]);
        }
        let summary = dir.join("summary.csv");
        let file = std::fs::File::create(&summary).map_err(|e| LabError::io(&summary, e))?;
        table.write(file)?;
        Ok(results)
    }
}

/// One JSON object per record, with the resolution and noise floor attached.
pub fn write_records(
    path: &Path,
    summary: &DecaySummary,
    resolution: usize,
    floor: f64,
) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| LabError::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    write_record_stream(&mut out, summary, resolution, floor).map_err(|e| match e {
        LabError::Json(j) if j.is_io() => LabError::io(path, std::io::Error::other(j.to_string())),
        other => other,
    })
}

pub fn write_record_stream<W: std::io::Write>(
    out: &mut W,
    summary: &DecaySummary,
    resolution: usize,
    floor: f64,
) -> Result<()> {
    for rec in &summary.records {
        let mut v = serde_json::to_value(rec)?;
        if let serde_json::Value::Object(map) = &mut v {
            map.insert("resolution".into(), resolution.into());
            map.insert("noise_floor".into(), serde_json::json!(floor));
        }
        serde_json::to_writer(&mut *out, &v)?;
        out.write_all(b"\n")
            .map_err(|e| LabError::io("<records>", e))?;
    }
    out.flush().map_err(|e| LabError::io("<records>", e))
}
