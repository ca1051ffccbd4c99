//! Experiment orchestration: configuration, the per-replica pipeline, record
//! persistence with resume, and summary emission.
//!
//! Output directory layout:
//!
//! ```text
//! <out>/manifest.json      config and library version
//! <out>/records.jsonl      merged record stream, deterministic order
//! <out>/spill/worker-*.jsonl  per-worker spill files (removed after merge)
//! ```
//!
//! Every record is one JSON line tagged by `record_type`. A unit of work is one
//! `(β, n, replica)` cell; its records are appended as one block ending with the
//! `extreme` record, so a unit is complete exactly when that record is present.

use std::collections::{BTreeMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::auxfield::{coupling_residual, AuxAccumulator, ResidualSummary};
use crate::error::{Error, Result};
use crate::extremes::{ensemble_summary, extract, fhk_density_bessel, ExtremeRecord, LadderSummary, Statistic};
use crate::opuc::{dyadic_checkpoints, last_step_charpoly, CircleGrid, FieldSnapshot, FieldState};
use crate::sampling::DrawSequence;

/// Environment variable holding the worker count.
pub const WORKERS_ENV: &str = "CBE_WORKERS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Jsonl,
    Csv,
}

impl std::str::FromStr for OutputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jsonl" => Ok(Self::Jsonl),
            "csv" => Ok(Self::Csv),
            other => Err(Error::Config(format!("unknown format {other:?}"))),
        }
    }
}

fn default_betas() -> Vec<f64> {
    vec![1.0, 2.0, 4.0]
}
fn default_ladder() -> Vec<usize> {
    (8..=14).map(|m| 1 << m).collect()
}
fn default_grid_mult() -> usize {
    4
}
fn default_replicas() -> usize {
    200
}
fn default_epsilon() -> f64 {
    crate::opuc::DEFAULT_EPS_EXCLUDE
}
fn default_true() -> bool {
    true
}
fn default_output() -> PathBuf {
    PathBuf::from("cbe-out")
}

/// Flat experiment configuration; mirrors the JSON config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_betas")]
    pub beta_list: Vec<f64>,
    #[serde(default = "default_ladder")]
    pub n_ladder: Vec<usize>,
    #[serde(default = "default_grid_mult")]
    pub grid_mult: usize,
    #[serde(default = "default_replicas")]
    pub replicas: usize,
    #[serde(default)]
    pub seed: u64,
    /// Emit snapshot records at dyadic `k`.
    #[serde(default = "default_true")]
    pub checkpoints: bool,
    /// Accumulate the auxiliary field and emit residual records.
    #[serde(default = "default_true")]
    pub aux: bool,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    #[serde(default)]
    pub format: OutputFormat,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            beta_list: default_betas(),
            n_ladder: default_ladder(),
            grid_mult: default_grid_mult(),
            replicas: default_replicas(),
            seed: 0,
            checkpoints: true,
            aux: true,
            epsilon: default_epsilon(),
            output: default_output(),
            format: OutputFormat::Jsonl,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicas == 0 {
            return Err(Error::Config("replicas must be at least 1".into()));
        }
        if self.grid_mult < 2 {
            return Err(Error::Config(format!("grid_mult must be at least 2, got {}", self.grid_mult)));
        }
        if self.beta_list.is_empty() || self.beta_list.iter().any(|&b| !(b > 0.0 && b.is_finite())) {
            return Err(Error::Config(format!("betas must be positive: {:?}", self.beta_list)));
        }
        if self.n_ladder.is_empty() || self.n_ladder.iter().any(|&n| n < 3) {
            return Err(Error::Config(format!("every n must be at least 3: {:?}", self.n_ladder)));
        }
        if !(self.epsilon >= 0.0) {
            return Err(Error::Config(format!("epsilon must be non-negative, got {}", self.epsilon)));
        }
        Ok(())
    }

    /// Units in output order.
    pub fn units(&self) -> Vec<Unit> {
        let mut out = Vec::new();
        for &beta in &self.beta_list {
            for &n in &self.n_ladder {
                for replica in 0..self.replicas as u64 {
                    out.push(Unit { beta, n, replica });
                }
            }
        }
        out
    }
}

/// One `(β, n, replica)` cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Unit {
    pub beta: f64,
    pub n: usize,
    pub replica: u64,
}

impl Unit {
    fn key(&self) -> UnitKey {
        (self.beta.to_bits(), self.n, self.replica)
    }
}

type UnitKey = (u64, usize, u64);

/// Which polynomial a snapshot record describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    PhiStar,
    Charpoly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotRecord {
    pub replica: u64,
    pub field: FieldKind,
    pub k: usize,
    pub beta: f64,
    pub n: usize,
    pub grid_size: usize,
    pub re_max: f64,
    pub im_max: f64,
    pub im_min: f64,
    pub argmax_index: usize,
    pub excluded_count: usize,
}

impl SnapshotRecord {
    fn from_snapshot(s: &FieldSnapshot, field: FieldKind) -> Self {
        let live = (0..s.grid_size()).filter(|&i| !s.excluded[i]);
        let mut argmax_index = 0;
        let (mut re_max, mut im_max, mut im_min) = (f64::NEG_INFINITY, f64::NEG_INFINITY, f64::INFINITY);
        for i in live {
            if s.re_log[i] > re_max {
                re_max = s.re_log[i];
                argmax_index = i;
            }
            im_max = im_max.max(s.im_log[i]);
            im_min = im_min.min(s.im_log[i]);
        }
        Self {
            replica: s.tag.replica,
            field,
            k: s.k,
            beta: s.beta,
            n: s.n_total,
            grid_size: s.grid_size(),
            re_max,
            im_max,
            im_min,
            argmax_index,
            excluded_count: s.excluded_count(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualRecord {
    pub replica: u64,
    pub beta: f64,
    pub n: usize,
    pub k: usize,
    pub sup_residual: f64,
    pub sup_s: f64,
    pub sup_t: f64,
}

/// One line of the record stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record_type", rename_all = "snake_case")]
pub enum Record {
    Snapshot(SnapshotRecord),
    Residual(ResidualRecord),
    Extreme(ExtremeRecord),
}

impl Record {
    fn unit_key(&self) -> UnitKey {
        match self {
            Record::Snapshot(r) => (r.beta.to_bits(), r.n, r.replica),
            Record::Residual(r) => (r.beta.to_bits(), r.n, r.replica),
            Record::Extreme(r) => (r.beta.to_bits(), r.n, r.replica),
        }
    }
}

/// Inputs of a single replica run.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicaParams {
    pub beta: f64,
    pub n: usize,
    pub grid_size: usize,
    pub seed: u64,
    pub replica: u64,
    pub epsilon: f64,
    /// `k` values at which `Φ*_k` is captured (at most `n`).
    pub checkpoints: Vec<usize>,
    pub aux: bool,
}

/// Everything one replica produces.
#[derive(Debug, Clone)]
pub struct ReplicaOutput {
    pub phi_star: Vec<FieldSnapshot>,
    pub charpoly: FieldSnapshot,
    pub extreme: ExtremeRecord,
    pub residuals: Vec<ResidualRecord>,
}

impl ReplicaOutput {
    pub fn records(&self, snapshots: bool) -> Vec<Record> {
        let mut out = Vec::new();
        if snapshots {
            out.extend(
                self.phi_star
                    .iter()
                    .map(|s| Record::Snapshot(SnapshotRecord::from_snapshot(s, FieldKind::PhiStar))),
            );
            out.push(Record::Snapshot(SnapshotRecord::from_snapshot(&self.charpoly, FieldKind::Charpoly)));
        }
        out.extend(self.residuals.iter().copied().map(Record::Residual));
        out.push(Record::Extreme(self.extreme.clone()));
        out
    }
}

/// Sampling → Prüfer field → last step → extremes, plus the auxiliary field.
///
/// Draws `n` coefficients: the first `n - 1` build `Φ*_{n-1}` and, with the
/// unimodular final phase, `X_n`; the last one extends `Φ*` to `k = n` so that
/// checkpoints may reach `n`.
pub fn run_replica(p: &ReplicaParams) -> Result<ReplicaOutput> {
    if p.n < 3 {
        return Err(Error::InvalidParameter(format!("n must be at least 3, got {}", p.n)));
    }
    if let Some(&k) = p.checkpoints.iter().find(|&&k| k > p.n) {
        return Err(Error::Range { k, max: p.n });
    }
    let draws = DrawSequence::generate(p.seed, p.replica, p.beta, p.n)?;
    let grid = CircleGrid::new(p.grid_size)?;
    let mut cps = p.checkpoints.clone();
    cps.sort_unstable();
    cps.dedup();
    let mut state = FieldState::new(&grid);
    let mut aux = p.aux.then(|| AuxAccumulator::new(draws.tag, p.beta, p.grid_size, &cps));
    let mut phi_star = Vec::new();
    let mut charpoly = None;
    for draw in &draws.draws {
        let j = state.j();
        if cps.binary_search(&j).is_ok() {
            phi_star.push(state.snapshot(draws.tag, p.beta, p.n));
        }
        if j == p.n - 1 {
            let base = state.snapshot(draws.tag, p.beta, p.n);
            charpoly = Some(last_step_charpoly(&base, state.psi(), draws.final_phase(), p.epsilon)?);
        }
        if let Some(a) = aux.as_mut() {
            a.observe(&state, draw);
        }
        state.prufer_advance(draw)?;
    }
    if cps.binary_search(&state.j()).is_ok() {
        phi_star.push(state.snapshot(draws.tag, p.beta, p.n));
    }
    if state.branch_violations() > 0 {
        return Err(Error::Numerical(format!(
            "{} factors with non-positive real part",
            state.branch_violations()
        )));
    }
    let charpoly = charpoly.expect("n >= 3 reaches the last step");
    let extreme = extract(&charpoly)?;
    let mut residuals = Vec::new();
    if let Some(a) = aux {
        let (zs, st) = a.finish();
        for ((snap, z), d) in phi_star.iter().zip(&zs).zip(&st) {
            let r = coupling_residual(snap, z, p.beta)?;
            residuals.push(ResidualRecord {
                replica: p.replica,
                beta: p.beta,
                n: p.n,
                k: r.k,
                sup_residual: r.sup_residual,
                sup_s: d.sup_s,
                sup_t: d.sup_t,
            });
        }
    }
    Ok(ReplicaOutput {
        phi_star,
        charpoly,
        extreme,
        residuals,
    })
}

fn unit_params(cfg: &ExperimentConfig, u: &Unit) -> ReplicaParams {
    ReplicaParams {
        beta: u.beta,
        n: u.n,
        grid_size: cfg.grid_mult * u.n,
        seed: cfg.seed,
        replica: u.replica,
        epsilon: cfg.epsilon,
        checkpoints: if cfg.checkpoints { dyadic_checkpoints(u.n) } else { Vec::new() },
        aux: cfg.aux,
    }
}

/// Serialized lines of one unit, newline-terminated.
fn unit_block(cfg: &ExperimentConfig, u: &Unit) -> Result<String> {
    let out = run_replica(&unit_params(cfg, u))?;
    let mut block = String::new();
    for r in out.records(cfg.checkpoints) {
        block.push_str(&serde_json::to_string(&r)?);
        block.push('\n');
    }
    Ok(block)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub library: String,
    pub version: String,
    pub config: ExperimentConfig,
    pub units: usize,
}

/// Outcome of [`run_experiment`].
#[derive(Debug, Clone)]
pub struct RunReport {
    pub records_path: PathBuf,
    pub units_total: usize,
    pub units_run: usize,
    pub units_resumed: usize,
    /// `false` when stopped early by `stop_after`.
    pub merged: bool,
}

/// Options that control execution but not results.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Keep completed units from a previous run.
    pub resume: bool,
    /// Stop (without merging) after this many new units; simulates a crash.
    pub stop_after: Option<usize>,
    /// Worker count; falls back to `CBE_WORKERS`, then the core count.
    pub workers: Option<usize>,
}

fn worker_count(opt: Option<usize>) -> usize {
    opt.or_else(|| std::env::var(WORKERS_ENV).ok().and_then(|v| v.parse().ok()))
        .filter(|&w| w > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Complete unit blocks found in a record file; a trailing partial line and
/// records of unfinished units are dropped.
fn read_complete_units(path: &Path) -> Result<BTreeMap<UnitKey, String>> {
    let mut done = BTreeMap::new();
    if !path.exists() {
        return Ok(done);
    }
    let mut text = String::new();
    File::open(path)?.read_to_string(&mut text)?;
    let mut pending: BTreeMap<UnitKey, String> = BTreeMap::new();
    let complete_len = text.rfind('\n').map_or(0, |i| i + 1);
    if complete_len < text.len() {
        log::warn!("dropping truncated final line of {}", path.display());
    }
    for (i, line) in text[..complete_len].lines().enumerate() {
        let rec: Record = match serde_json::from_str(line) {
            Ok(r) => r,
            Err(e) => {
                log::warn!("{}:{}: unreadable record dropped: {e}", path.display(), i + 1);
                continue;
            }
        };
        let key = rec.unit_key();
        let block = pending.entry(key).or_default();
        block.push_str(line);
        block.push('\n');
        if matches!(rec, Record::Extreme(_)) {
            done.insert(key, pending.remove(&key).unwrap_or_default());
        }
    }
    Ok(done)
}

/// Run every unit of `cfg`, persisting records under `cfg.output`.
pub fn run_experiment(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunReport> {
    cfg.validate()?;
    let out = &cfg.output;
    fs::create_dir_all(out)?;
    let spill_dir = out.join("spill");
    fs::create_dir_all(&spill_dir)?;
    let manifest = Manifest {
        library: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config: cfg.clone(),
        units: cfg.units().len(),
    };
    let manifest_path = out.join("manifest.json");
    if opts.resume && manifest_path.exists() {
        let old: Manifest = serde_json::from_str(&fs::read_to_string(&manifest_path)?)?;
        if old.config != cfg.clone() {
            return Err(Error::Config("resume with a different configuration".into()));
        }
    }
    fs::write(&manifest_path, serde_json::to_string_pretty(&manifest)? + "\n")?;

    let records_path = out.join("records.jsonl");
    let mut done: BTreeMap<UnitKey, String> = BTreeMap::new();
    if opts.resume {
        done.append(&mut read_complete_units(&records_path)?);
        let mut spills: Vec<PathBuf> = fs::read_dir(&spill_dir)?.filter_map(|e| e.ok().map(|e| e.path())).collect();
        spills.sort();
        for s in spills {
            done.append(&mut read_complete_units(&s)?);
        }
    } else {
        for e in fs::read_dir(&spill_dir)? {
            fs::remove_file(e?.path())?;
        }
        if records_path.exists() {
            fs::remove_file(&records_path)?;
        }
    }
    // Rewrite resumed units into one spill so the per-worker files only ever
    // receive whole blocks.
    let units = cfg.units();
    let wanted: HashSet<UnitKey> = units.iter().map(Unit::key).collect();
    done.retain(|k, _| wanted.contains(k));
    let resumed_path = spill_dir.join("resumed.jsonl");
    let tmp = spill_dir.join("resumed.tmp");
    {
        let mut w = BufWriter::new(File::create(&tmp)?);
        for block in done.values() {
            w.write_all(block.as_bytes())?;
        }
        w.flush()?;
    }
    for e in fs::read_dir(&spill_dir)? {
        let p = e?.path();
        if p != tmp {
            fs::remove_file(p)?;
        }
    }
    fs::rename(&tmp, &resumed_path)?;

    let mut todo: Vec<Unit> = units.iter().copied().filter(|u| !done.contains_key(&u.key())).collect();
    let units_resumed = units.len() - todo.len();
    let mut merged = true;
    if let Some(m) = opts.stop_after {
        if m < todo.len() {
            todo.truncate(m);
            merged = false;
        }
    }
    let workers = worker_count(opts.workers);
    log::info!("{} units ({units_resumed} resumed), {workers} workers", todo.len());
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    let writers: Vec<std::sync::Mutex<Option<File>>> = (0..workers).map(|_| std::sync::Mutex::new(None)).collect();
    pool.install(|| {
        todo.par_iter().with_max_len(1).try_for_each(|u| -> Result<()> {
            let block = unit_block(cfg, u)?;
            let w = rayon::current_thread_index().unwrap_or(0) % workers;
            let mut slot = writers[w].lock().expect("spill writer poisoned");
            if slot.is_none() {
                *slot = Some(
                    OpenOptions::new()
                        .create(true)
                        .append(true)
                        .open(spill_dir.join(format!("worker-{w}.jsonl")))?,
                );
            }
            let f = slot.as_mut().expect("opened");
            f.write_all(block.as_bytes())?;
            f.flush()?;
            Ok(())
        })
    })?;
    drop(writers);
    let units_run = todo.len();
    if !merged {
        return Ok(RunReport {
            records_path,
            units_total: units.len(),
            units_run,
            units_resumed,
            merged,
        });
    }

    let mut all: BTreeMap<UnitKey, String> = BTreeMap::new();
    let mut spills: Vec<PathBuf> = fs::read_dir(&spill_dir)?.filter_map(|e| e.ok().map(|e| e.path())).collect();
    spills.sort();
    for s in &spills {
        all.append(&mut read_complete_units(s)?);
    }
    let tmp = out.join("records.jsonl.tmp");
    {
        let mut w = BufWriter::new(File::create(&tmp)?);
        for u in &units {
            let block = all
                .get(&u.key())
                .ok_or_else(|| Error::MissingCell(format!("beta = {}, n = {}, replica = {}", u.beta, u.n, u.replica)))?;
            w.write_all(block.as_bytes())?;
        }
        w.flush()?;
    }
    fs::rename(&tmp, &records_path)?;
    fs::remove_dir_all(&spill_dir)?;
    if cfg.format == OutputFormat::Csv {
        let records = read_records(&records_path)?;
        write_extremes_csv(&records, &out.join("extremes.csv"))?;
    }
    Ok(RunReport {
        records_path,
        units_total: units.len(),
        units_run,
        units_resumed,
        merged,
    })
}

/// Parse a record stream; a malformed line is an error naming its line number.
pub fn read_records(path: &Path) -> Result<Vec<Record>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

fn write_extremes_csv(records: &[Record], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        if let Record::Extreme(e) = r {
            w.serialize(e)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Files written by [`emit_summary`].
#[derive(Debug, Clone)]
pub struct SummaryOutput {
    pub summary: LadderSummary,
    pub residuals: Vec<ResidualSummary>,
    pub files: Vec<PathBuf>,
}

fn write_two_column(path: &Path, header: &str, rows: &[(f64, f64)]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "# {header}")?;
    for (x, y) in rows {
        writeln!(w, "{x} {y}")?;
    }
    w.flush()?;
    Ok(())
}

/// Summarise a record stream into `out_dir`: `summary.csv`, optional
/// `residuals.csv`, ladder curves `ladder_<stat>_beta<β>.dat`, histograms
/// `hist_<stat>_beta<β>_n<n>.dat` and the reference density `density_fhk.dat`.
pub fn emit_summary(records_path: &Path, out_dir: &Path) -> Result<SummaryOutput> {
    let records = read_records(records_path)?;
    if records.is_empty() {
        return Err(Error::EmptyInput(format!("{} has no records", records_path.display())));
    }
    fs::create_dir_all(out_dir)?;
    let extremes: Vec<ExtremeRecord> = records
        .iter()
        .filter_map(|r| match r {
            Record::Extreme(e) => Some(e.clone()),
            _ => None,
        })
        .collect();
    let summary = ensemble_summary(&extremes)?;
    let mut files = Vec::new();

    let summary_path = out_dir.join("summary.csv");
    let mut w = csv::Writer::from_path(&summary_path)?;
    for c in &summary.cells {
        w.serialize(c)?;
    }
    w.flush()?;
    files.push(summary_path);

    let mut by_k: BTreeMap<(u64, usize, usize), Vec<crate::auxfield::ResidualReport>> = BTreeMap::new();
    for r in &records {
        if let Record::Residual(x) = r {
            by_k.entry((x.beta.to_bits(), x.n, x.k)).or_default().push(crate::auxfield::ResidualReport {
                tag: crate::sampling::ReplicaTag { seed: 0, replica: x.replica },
                k: x.k,
                beta: x.beta,
                sup_residual: x.sup_residual,
            });
        }
    }
    let mut residuals = Vec::new();
    if !by_k.is_empty() {
        let path = out_dir.join("residuals.csv");
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["beta", "n", "k", "replicas", "median", "p05", "p95", "max"])?;
        for ((beta_bits, n, k), reports) in &by_k {
            let s = ResidualSummary::from_reports(*k, reports)?;
            w.write_record([
                f64::from_bits(*beta_bits).to_string(),
                n.to_string(),
                k.to_string(),
                s.replicas.to_string(),
                s.median.to_string(),
                s.p05.to_string(),
                s.p95.to_string(),
                s.max.to_string(),
            ])?;
            residuals.push(s);
        }
        w.flush()?;
        files.push(path);
    }

    let mut betas: Vec<f64> = summary.cells.iter().map(|c| c.beta).collect();
    betas.dedup();
    for &beta in &betas {
        for stat in Statistic::ALL {
            let rows: Vec<(f64, f64)> = summary
                .cells
                .iter()
                .filter(|c| c.beta == beta && c.stat == stat)
                .map(|c| (c.n as f64, c.median))
                .collect();
            let path = out_dir.join(format!("ladder_{stat}_beta{beta}.dat"));
            write_two_column(&path, "n median", &rows)?;
            files.push(path);
        }
    }
    let mut cells: BTreeMap<(u64, usize), Vec<&ExtremeRecord>> = BTreeMap::new();
    for e in &extremes {
        cells.entry((e.beta.to_bits(), e.n)).or_default().push(e);
    }
    for ((beta_bits, n), recs) in &cells {
        let beta = f64::from_bits(*beta_bits);
        for stat in Statistic::ALL {
            let vals: Vec<f64> = recs.iter().map(|r| r.centered(stat)).collect();
            let path = out_dir.join(format!("hist_{stat}_beta{beta}_n{n}.dat"));
            write_two_column(&path, "bin_centre density", &histogram(&vals, 30))?;
            files.push(path);
        }
    }
    let density: Vec<(f64, f64)> = (0..=400).map(|i| -10.0 + 0.05 * i as f64).map(|x| (x, fhk_density_bessel(x))).collect();
    let path = out_dir.join("density_fhk.dat");
    write_two_column(&path, "x p(x)", &density)?;
    files.push(path);
    Ok(SummaryOutput {
        summary,
        residuals,
        files,
    })
}

/// Normalised histogram as `(bin centre, density)`.
pub fn histogram(values: &[f64], bins: usize) -> Vec<(f64, f64)> {
    if values.is_empty() || bins == 0 {
        return Vec::new();
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let mut counts = vec![0usize; bins];
    for &v in values {
        let b = (((v - lo) / width) as usize).min(bins - 1);
        counts[b] += 1;
    }
    let norm = 1.0 / (values.len() as f64 * width);
    counts
        .iter()
        .enumerate()
        .map(|(i, &c)| (lo + (i as f64 + 0.5) * width, c as f64 * norm))
        .collect()
}

/// Flat little-endian dump: `u64 G`, `u64 k`, then `G` values of `Re log`,
/// then `G` values of `Im log`.
pub fn write_grid_dump(path: &Path, snapshot: &FieldSnapshot) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&(snapshot.grid_size() as u64).to_le_bytes())?;
    w.write_all(&(snapshot.k as u64).to_le_bytes())?;
    for v in snapshot.re_log.iter().chain(&snapshot.im_log) {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Inverse of [`write_grid_dump`]: `(k, re_log, im_log)`.
pub fn read_grid_dump(path: &Path) -> Result<(usize, Vec<f64>, Vec<f64>)> {
    let bytes = fs::read(path)?;
    let word = |i: usize| -> Result<[u8; 8]> {
        bytes
            .get(8 * i..8 * i + 8)
            .map(|b| b.try_into().expect("8 bytes"))
            .ok_or_else(|| Error::Shape(format!("dump truncated at word {i}")))
    };
    let g = u64::from_le_bytes(word(0)?) as usize;
    let k = u64::from_le_bytes(word(1)?) as usize;
    if bytes.len() != 16 + 16 * g {
        return Err(Error::Shape(format!("dump of {} bytes for G = {g}", bytes.len())));
    }
    let re = (0..g).map(|i| word(2 + i).map(f64::from_le_bytes)).collect::<Result<Vec<_>>>()?;
    let im = (0..g).map(|i| word(2 + g + i).map(f64::from_le_bytes)).collect::<Result<Vec<_>>>()?;
    Ok((k, re, im))
}
