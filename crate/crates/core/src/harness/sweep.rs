//! Sweep execution with an append-only record file and resume.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{apply_axis, write_plots, HarnessError, RunRecord, SweepSpec, RECORD_SCHEMA};
use crate::joint::run_policy;
use crate::scenario::Scenario;

pub const RECORDS_FILE: &str = "records.ndjson";
pub const MANIFEST_FILE: &str = "sweep.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SweepOptions {
    /// Worker threads; zero picks the machine default.
    pub jobs: usize,
    /// Keep successful cells already present in the output directory.
    pub resume: bool,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self { jobs: 0, resume: true }
    }
}

/// What the output directory was produced from; a resumed run must match.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepManifest {
    pub schema: u32,
    pub spec: SweepSpec,
    pub scenario: Scenario,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    /// Canonically ordered: value, then policy, then seed, as listed in the spec.
    pub records: Vec<RunRecord>,
    pub computed: usize,
    pub skipped: usize,
    pub failed: usize,
    pub files: Vec<PathBuf>,
}

type CellKey = (usize, usize, usize);

fn cell_key(spec: &SweepSpec, r: &RunRecord) -> Option<CellKey> {
    if r.axis != spec.axis {
        return None;
    }
    let v = spec.values.iter().position(|&x| x == r.x_value)?;
    let p = spec.policies.iter().position(|&x| x == r.policy)?;
    let s = spec.seeds.iter().position(|&x| x == r.seed)?;
    Some((v, p, s))
}

/// Reads a record file, ignoring a torn final line left by an interrupted
/// write. Any other malformed line is an error.
pub fn load_records(path: &Path) -> Result<Vec<RunRecord>, HarnessError> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(HarnessError::io(path, e)),
    };
    let lines: Vec<String> = BufReader::new(file).lines().collect::<Result<_, _>>().map_err(|e| HarnessError::io(path, e))?;
    let mut out = Vec::with_capacity(lines.len());
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<RunRecord>(line) {
            Ok(r) if r.schema == RECORD_SCHEMA => out.push(r),
            Ok(r) => {
                return Err(HarnessError::Malformed {
                    path: path.to_path_buf(),
                    message: format!("line {}: record schema {} is not {RECORD_SCHEMA}", i + 1, r.schema),
                })
            }
            Err(_) if i + 1 == lines.len() => log::warn!("{}: dropping torn last line", path.display()),
            Err(e) => return Err(HarnessError::Malformed { path: path.to_path_buf(), message: format!("line {}: {e}", i + 1) }),
        }
    }
    Ok(out)
}

fn run_cell(base: &Scenario, spec: &SweepSpec, (v, p, s): CellKey) -> RunRecord {
    let start = Instant::now();
    let (x_value, policy, seed) = (spec.values[v], spec.policies[p], spec.seeds[s]);
    let result = apply_axis(base, spec.axis, x_value)
        .map_err(|e| e.to_string())
        .and_then(|sc| run_policy(policy, &sc, &sc.generate_tasks(seed), seed).map_err(|e| e.to_string()));
    let (metrics, iterations, converged, error) = match result {
        Ok(sol) => (Some(sol.metrics), sol.iterations, sol.converged, None),
        Err(e) => (None, 0, false, Some(e)),
    };
    RunRecord {
        schema: RECORD_SCHEMA,
        axis: spec.axis,
        x_value,
        policy,
        seed,
        metrics,
        iterations,
        converged,
        error,
        runtime_ms: start.elapsed().as_secs_f64() * 1e3,
    }
}

fn record_line(r: &RunRecord) -> String {
    let mut line = serde_json::to_string(r).expect("record serializes");
    line.push('\n');
    line
}

/// Rewrites `path` atomically.
fn replace_file(path: &Path, contents: &str) -> Result<(), HarnessError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, contents).map_err(|e| HarnessError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| HarnessError::io(path, e))
}

/// Runs every (value, policy, seed) cell of `spec` against `base`, writing
/// raw records to `out_dir/records.ndjson` and aggregate CSVs next to them.
///
/// Records are appended as cells finish, so an interrupted sweep can be
/// resumed; successful cells already on disk are not recomputed. Failed
/// cells are recorded and retried on resume. When all cells are in, the
/// record file is rewritten in canonical order.
pub fn run_sweep(base: &Scenario, spec: &SweepSpec, out_dir: &Path, opts: &SweepOptions) -> Result<SweepReport, HarnessError> {
    spec.validate()?;
    base.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| HarnessError::io(out_dir, e))?;

    let manifest = SweepManifest { schema: RECORD_SCHEMA, spec: spec.clone(), scenario: base.clone() };
    let manifest_text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    let manifest_path = out_dir.join(MANIFEST_FILE);
    let records_path = out_dir.join(RECORDS_FILE);

    let mut done: HashMap<CellKey, RunRecord> = HashMap::new();
    if opts.resume {
        if let Ok(existing) = fs::read_to_string(&manifest_path) {
            if existing != manifest_text {
                return Err(HarnessError::InvalidSpec(format!("{} holds a different sweep; use a fresh directory or disable resume", out_dir.display())));
            }
            for r in load_records(&records_path)? {
                if let Some(k) = cell_key(spec, &r) {
                    if r.is_ok() {
                        done.insert(k, r);
                    }
                }
            }
        }
    }
    // Drop torn or failed lines before appending.
    let kept: String = {
        let mut keys: Vec<&CellKey> = done.keys().collect();
        keys.sort();
        keys.into_iter().map(|k| record_line(&done[k])).collect()
    };
    replace_file(&manifest_path, &manifest_text)?;
    replace_file(&records_path, &kept)?;
    let mut appender = OpenOptions::new().append(true).open(&records_path).map_err(|e| HarnessError::io(&records_path, e))?;

    let mut todo = Vec::new();
    for v in 0..spec.values.len() {
        for p in 0..spec.policies.len() {
            for s in 0..spec.seeds.len() {
                if !done.contains_key(&(v, p, s)) {
                    todo.push((v, p, s));
                }
            }
        }
    }
    let skipped = done.len();
    let total = todo.len();
    log::info!("sweep over {}: {} cells to run, {} already done", spec.axis, total, skipped);

    let pool =
        rayon::ThreadPoolBuilder::new().num_threads(opts.jobs).build().map_err(|e| HarnessError::InvalidSpec(format!("cannot start worker pool: {e}")))?;
    let (tx, rx) = mpsc::channel::<(CellKey, RunRecord)>();
    let records_at = &records_path;
    let fresh = std::thread::scope(|scope| {
        let writer = scope.spawn(move || -> Result<Vec<(CellKey, RunRecord)>, HarnessError> {
            let mut got = Vec::with_capacity(total);
            for (k, r) in rx {
                appender.write_all(record_line(&r).as_bytes()).and_then(|_| appender.flush()).map_err(|e| HarnessError::io(records_at, e))?;
                log::info!("cell {}/{} done ({} = {}, {}, seed {})", got.len() + 1, total, spec.axis, r.x_value, r.policy, r.seed);
                got.push((k, r));
            }
            Ok(got)
        });
        pool.install(|| {
            todo.par_iter().for_each_with(tx, |tx, &k| {
                // A closed channel means the writer failed; its error is reported below.
                let _ = tx.send((k, run_cell(base, spec, k)));
            });
        });
        writer.join().expect("record writer panicked")
    })?;

    let computed = fresh.len();
    let failed = fresh.iter().filter(|(_, r)| !r.is_ok()).count();
    for (k, r) in fresh {
        done.insert(k, r);
    }
    let mut keys: Vec<CellKey> = done.keys().copied().collect();
    keys.sort();
    let records: Vec<RunRecord> = keys.iter().map(|k| done[k].clone()).collect();
    let canonical: String = records.iter().map(record_line).collect();
    replace_file(&records_path, &canonical)?;

    let mut files = vec![manifest_path, records_path];
    files.extend(write_plots(&records, spec, out_dir)?);
    for r in records.iter().filter(|r| !r.is_ok()) {
        log::warn!("{} {} policy {} seed {} failed: {}", spec.axis, r.x_value, r.policy, r.seed, r.error.as_deref().unwrap_or("?"));
    }
    Ok(SweepReport { records, computed, skipped, failed, files })
}
