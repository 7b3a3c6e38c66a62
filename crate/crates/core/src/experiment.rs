//! Experiment configuration and the commands behind the `polylab` binary.
//!
//! Every command writes plain CSV / JSON-lines files into the configured output
//! directory followed by `manifest.json`, which records SHA-256 digests of the
//! data files. Wall-clock information appears only in the manifest, so data
//! files are byte-identical across reruns and worker counts.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use log::{info, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use crate::chain::{
    auto_alpha, fourth_moment_check, run_chain, stationarity_gap, variational_gap, UpdateContext,
    VariationalSettings,
};
use crate::env_field::{EnvironmentLaw, SeededField};
use crate::error::{PolylabError, Result};
use crate::instances::{random_beta, random_law, random_orbit_map, random_pspm, random_walk_1d};
use crate::localization::{localization_sufficient, EpsSchedule, LocalizationSeries};
use crate::numeric::{checkpoint_grid, log_sum_exp, mean_se};
use crate::polymer_dp::{
    brute_force_log_weights, brute_force_log_z, shift_identity_check, Checkpoint, PolymerState,
    Truncation,
};
use crate::pspm::{distance, d_alpha_exact, d_alpha_upper, DistanceMode, Pspm, DEFAULT_SUPPORT_CAP};
use crate::rng::derive_seed;
use crate::walk::{StepDistribution, WalkSpec};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// A single `β` or an inclusive evenly spaced grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BetaSpec {
    Single(f64),
    Grid { start: f64, stop: f64, count: usize },
}

impl BetaSpec {
    pub fn values(&self) -> Vec<f64> {
        match *self {
            BetaSpec::Single(b) => vec![b],
            BetaSpec::Grid { start, count: 1, .. } => vec![start],
            BetaSpec::Grid { start, stop, count } => (0..count)
                .map(|j| start + (stop - start) * j as f64 / (count - 1) as f64)
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedSpec {
    pub count: u64,
    #[serde(default)]
    pub base: u64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum AlphaSpec {
    Auto,
    Fixed(f64),
}

impl AlphaSpec {
    pub fn resolve(&self, beta: f64, law: &EnvironmentLaw) -> f64 {
        match *self {
            AlphaSpec::Auto => auto_alpha(beta, law),
            AlphaSpec::Fixed(a) => a,
        }
    }

    fn to_json(self) -> Value {
        match self {
            AlphaSpec::Auto => json!("auto"),
            AlphaSpec::Fixed(a) => json!(a),
        }
    }
}

fn default_eps() -> Vec<f64> {
    vec![0.2, 0.05, 0.01]
}

fn default_true() -> bool {
    true
}

fn default_delta() -> f64 {
    0.5
}

fn default_k() -> i64 {
    10
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocalizationSpec {
    /// Constant thresholds.
    #[serde(default = "default_eps")]
    pub eps: Vec<f64>,
    /// Also track `ε_i = 1/log(e + i)`.
    #[serde(default = "default_true")]
    pub log_decay: bool,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(rename = "K", default = "default_k")]
    pub k: i64,
}

impl LocalizationSpec {
    pub fn schedules(&self) -> Vec<EpsSchedule> {
        let mut s: Vec<EpsSchedule> = self.eps.iter().map(|&eps| EpsSchedule::Constant { eps }).collect();
        if self.log_decay {
            s.push(EpsSchedule::LogDecay);
        }
        s
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialState {
    Unit,
    Zero,
}

fn default_subsample() -> usize {
    64
}
fn default_one() -> usize {
    1
}
fn default_energy_samples() -> usize {
    10_000
}
fn default_checkpoints() -> Vec<usize> {
    vec![250, 500, 1000]
}
fn default_unit() -> InitialState {
    InitialState::Unit
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainSpec {
    #[serde(default = "default_unit")]
    pub initial: InitialState,
    #[serde(default = "default_subsample")]
    pub subsample: usize,
    #[serde(default = "default_one")]
    pub per_atom: usize,
    /// Environment rows per atom for the energy functional.
    #[serde(default = "default_energy_samples")]
    pub energy_samples: usize,
    /// Steps at which the stationarity gap is evaluated.
    #[serde(default = "default_checkpoints")]
    pub checkpoints: Vec<usize>,
    #[serde(default = "default_energy_samples")]
    pub moment_samples: usize,
}

impl Default for ChainSpec {
    fn default() -> Self {
        serde_json::from_value(json!({})).expect("defaults deserialize")
    }
}

/// Parsed and validated experiment configuration.
#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub env: EnvironmentLaw,
    pub walk_spec: WalkSpec,
    pub walk: StepDistribution,
    pub beta: BetaSpec,
    pub n: u64,
    pub seeds: SeedSpec,
    pub alpha: AlphaSpec,
    pub localization: Option<LocalizationSpec>,
    pub truncation: Option<Truncation>,
    pub outputs: PathBuf,
    pub chain: ChainSpec,
    raw: Value,
}

const KNOWN_KEYS: [&str; 10] = [
    "env", "walk", "beta", "n", "seeds", "alpha", "localization", "truncation", "outputs", "chain",
];

fn take<T: DeserializeOwned>(obj: &Map<String, Value>, key: &str) -> Result<Option<T>> {
    match obj.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(v) => serde_json::from_value(v.clone())
            .map(Some)
            .map_err(|e| PolylabError::config(key, e.to_string())),
    }
}

fn require<T: DeserializeOwned>(obj: &Map<String, Value>, key: &str) -> Result<T> {
    take(obj, key)?.ok_or_else(|| PolylabError::config(key, "missing required key"))
}

impl ExperimentConfig {
    pub fn from_json(value: Value) -> Result<Self> {
        let obj = value
            .as_object()
            .ok_or_else(|| PolylabError::config("<root>", "configuration must be a JSON object"))?;
        if let Some(k) = obj.keys().find(|k| !KNOWN_KEYS.contains(&k.as_str())) {
            return Err(PolylabError::config(k.clone(), "unknown key"));
        }
        let env: EnvironmentLaw = require(obj, "env")?;
        env.validate().map_err(|e| PolylabError::config("env", e.to_string()))?;
        let walk_spec: WalkSpec = require(obj, "walk")?;
        let walk = walk_spec.build().map_err(|e| PolylabError::config("walk", e.to_string()))?;
        let beta: BetaSpec = require(obj, "beta")?;
        let n: u64 = require(obj, "n")?;
        let seeds: SeedSpec = require(obj, "seeds")?;
        let alpha = match obj.get("alpha") {
            None | Some(Value::Null) => AlphaSpec::Auto,
            Some(Value::String(s)) if s == "auto" => AlphaSpec::Auto,
            Some(v) => AlphaSpec::Fixed(
                v.as_f64()
                    .ok_or_else(|| PolylabError::config("alpha", "expected a number or \"auto\""))?,
            ),
        };
        let localization: Option<LocalizationSpec> = take(obj, "localization")?;
        // absent means the default policy; the string "off" disables it
        let truncation = match obj.get("truncation") {
            None => Some(Truncation::default()),
            Some(Value::String(s)) if s == "off" => None,
            Some(_) => Some(require::<Truncation>(obj, "truncation")?),
        };
        let outputs: PathBuf = require(obj, "outputs")?;
        let chain: ChainSpec = take(obj, "chain")?.unwrap_or_default();
        let cfg = ExperimentConfig {
            env,
            walk_spec,
            walk,
            beta,
            n,
            seeds,
            alpha,
            localization,
            truncation,
            outputs,
            chain,
            raw: value,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let value: Value =
            serde_json::from_str(&text).map_err(|e| PolylabError::config("<root>", e.to_string()))?;
        Self::from_json(value)
    }

    fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(PolylabError::config("n", "must be at least 1"));
        }
        if self.seeds.count == 0 {
            return Err(PolylabError::config("seeds", "count must be at least 1"));
        }
        if let BetaSpec::Grid { count: 0, .. } = self.beta {
            return Err(PolylabError::config("beta", "grid count must be at least 1"));
        }
        let bmax = self.env.beta_max();
        let bad: Vec<f64> = self
            .betas()
            .into_iter()
            .filter(|&b| !(b > 0.0 && b < bmax))
            .collect();
        if !bad.is_empty() {
            return Err(PolylabError::config(
                "beta",
                format!("values outside (0, {bmax}): {bad:?}"),
            ));
        }
        if let AlphaSpec::Fixed(a) = self.alpha {
            if !(a > 1.0) {
                return Err(PolylabError::config("alpha", "must exceed 1"));
            }
            let bad: Vec<f64> = self.betas().into_iter().filter(|&b| !(a * b < bmax)).collect();
            if !bad.is_empty() {
                return Err(PolylabError::config(
                    "alpha",
                    format!("alpha * beta reaches beta_max = {bmax} for beta in {bad:?}"),
                ));
            }
        }
        if let Some(loc) = &self.localization {
            for s in loc.schedules() {
                s.validate().map_err(|e| PolylabError::config("localization", e.to_string()))?;
            }
            if !(loc.delta > 0.0 && loc.delta < 1.0) || loc.k < 0 {
                return Err(PolylabError::config("localization", "need 0 < delta < 1 and K >= 0"));
            }
        }
        if let Some(t) = &self.truncation {
            if !(t.tau_rel >= 0.0 && t.tau_rel < 1.0) || !(t.ledger_warn >= 0.0) {
                return Err(PolylabError::config("truncation", "need 0 <= tau_rel < 1 and ledger_warn >= 0"));
            }
        }
        if self.chain.subsample == 0 || self.chain.per_atom == 0 {
            return Err(PolylabError::config("chain", "subsample and per_atom must be positive"));
        }
        if self.chain.energy_samples < 2 || self.chain.moment_samples < 2 {
            return Err(PolylabError::config("chain", "sample counts must be at least 2"));
        }
        Ok(())
    }

    pub fn betas(&self) -> Vec<f64> {
        self.beta.values()
    }

    pub fn field_seed(&self, index: u64) -> u64 {
        derive_seed(self.seeds.base, "replica", index)
    }

    pub fn field_seeds(&self) -> Vec<u64> {
        (0..self.seeds.count).map(|i| self.field_seed(i)).collect()
    }

    fn single_beta(&self) -> Result<f64> {
        match self.betas().as_slice() {
            [b] => Ok(*b),
            _ => Err(PolylabError::config("beta", "this command needs a single beta")),
        }
    }
}

fn write_lines(path: &Path, lines: impl IntoIterator<Item = String>) -> Result<()> {
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    for l in lines {
        writeln!(out, "{l}")?;
    }
    out.flush()?;
    Ok(())
}

fn digest(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}

/// Written outputs of a command.
#[derive(Clone, Debug)]
pub struct RunReport {
    pub files: Vec<PathBuf>,
    pub manifest: PathBuf,
    pub summary: Value,
}

fn finish(
    cfg: &ExperimentConfig,
    command: &str,
    files: Vec<PathBuf>,
    started: Instant,
    summary: Value,
) -> Result<RunReport> {
    let mut entries = Vec::with_capacity(files.len());
    for f in &files {
        entries.push(json!({
            "path": f.file_name().map(|s| s.to_string_lossy().into_owned()),
            "bytes": fs::metadata(f)?.len(),
            "sha256": digest(f)?,
        }));
    }
    let manifest = json!({
        "command": command,
        "version": VERSION,
        "config": cfg.raw,
        "alpha": cfg.alpha.to_json(),
        "seeds": cfg.field_seeds(),
        "started_unix": SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
        "wall_clock_seconds": started.elapsed().as_secs_f64(),
        "files": entries,
    });
    let path = cfg.outputs.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(RunReport {
        files,
        manifest: path,
        summary,
    })
}

/// Recomputes the digests listed in a manifest; returns the mismatching file names.
pub fn verify_manifest(path: &Path) -> Result<Vec<String>> {
    let manifest: Value = serde_json::from_str(&fs::read_to_string(path)?)?;
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut bad = Vec::new();
    for e in manifest["files"].as_array().into_iter().flatten() {
        let name = e["path"].as_str().unwrap_or_default();
        let ok = digest(&dir.join(name)).map(|d| Some(d.as_str()) == e["sha256"].as_str());
        if !matches!(ok, Ok(true)) {
            bad.push(name.to_string());
        }
    }
    Ok(bad)
}

struct SeedOutcome {
    seed: u64,
    checkpoints: Vec<Checkpoint>,
    localization: Vec<LocalizationSeries>,
}

/// One polymer on one field: checkpoints on the dyadic grid and, if asked,
/// localization records for `f_0, …, f_{n−1}`.
fn run_seed(
    cfg: &ExperimentConfig,
    beta: f64,
    seed: u64,
    with_localization: bool,
) -> Result<SeedOutcome> {
    let field = SeededField::new(seed, cfg.env);
    let dim = cfg.walk.dim();
    let mut series = match (&cfg.localization, with_localization) {
        (Some(loc), true) => loc
            .schedules()
            .into_iter()
            .map(|s| LocalizationSeries::new(s, loc.delta, loc.k, dim))
            .collect::<Result<Vec<_>>>()?,
        _ => Vec::new(),
    };
    let grid = checkpoint_grid(cfg.n);
    let mut next = 0;
    let mut checkpoints = Vec::with_capacity(grid.len());
    let mut state = PolymerState::init(dim);
    for step in 0..=cfg.n {
        if step > 0 {
            state = state.advance(&cfg.walk, &field, beta, cfg.truncation.as_ref())?;
        }
        if step < cfg.n {
            for s in &mut series {
                s.observe_state(&state)?;
            }
        }
        if next < grid.len() && step == grid[next] {
            checkpoints.push(Checkpoint {
                n: step,
                log_z: state.log_z(),
                free_energy: state.log_z() / step as f64,
                dropped_mass: state.dropped_mass(),
            });
            next += 1;
        }
    }
    Ok(SeedOutcome {
        seed,
        checkpoints,
        localization: series,
    })
}

fn final_f(o: &SeedOutcome) -> f64 {
    o.checkpoints.last().map(|c| c.free_energy).unwrap_or(f64::NAN)
}

/// Replica polymers and localization series at a single `β`.
///
/// Files: `replicas.csv` (`seed,n,logZ,F_n,dropped_mass` per checkpoint),
/// `summary.jsonl`, and `localization.csv` when a localization section is present.
pub fn cmd_simulate(cfg: &ExperimentConfig) -> Result<RunReport> {
    let started = Instant::now();
    let beta = cfg.single_beta()?;
    fs::create_dir_all(&cfg.outputs)?;
    info!("simulate: beta = {beta}, n = {}, {} seeds", cfg.n, cfg.seeds.count);
    let outcomes: Vec<SeedOutcome> = cfg
        .field_seeds()
        .into_par_iter()
        .map(|seed| run_seed(cfg, beta, seed, true))
        .collect::<Result<_>>()?;

    let mut rows = vec!["seed,n,logZ,F_n,dropped_mass".to_string()];
    for o in &outcomes {
        for c in &o.checkpoints {
            rows.push(format!("{},{},{},{},{}", o.seed, c.n, c.log_z, c.free_energy, c.dropped_mass));
        }
    }
    let replicas = cfg.outputs.join("replicas.csv");
    write_lines(&replicas, rows)?;

    let fs_: Vec<f64> = outcomes.iter().map(final_f).collect();
    let (mean_f, se) = mean_se(&fs_);
    let lambda = cfg.env.lambda(beta);
    let sufficient = localization_sufficient(beta, &cfg.env, &cfg.walk)?;
    let dropped = outcomes
        .iter()
        .map(|o| o.checkpoints.last().map(|c| c.dropped_mass).unwrap_or(0.0))
        .fold(0.0, f64::max);
    let summary = json!({
        "kind": "replicas",
        "beta": beta,
        "n": cfg.n,
        "seeds": cfg.seeds.count,
        "lambda": lambda,
        "mean_F": mean_f,
        "se": se,
        "gap": lambda - mean_f,
        "max_dropped_mass": dropped,
        "sufficient_condition": sufficient,
    });
    let mut summary_lines = vec![summary.to_string()];
    let mut files = vec![replicas];

    if cfg.localization.is_some() {
        let mut loc_rows = vec![format!("seed,schedule,{}", LocalizationSeries::csv_header())];
        for o in &outcomes {
            for s in &o.localization {
                let label = s.schedule.label();
                loc_rows.extend(s.csv_rows().into_iter().map(|r| format!("{},{label},{r}", o.seed)));
                let mut line = s.summary(beta);
                line["kind"] = json!("localization");
                line["seed"] = json!(o.seed);
                summary_lines.push(line.to_string());
            }
        }
        let loc = cfg.outputs.join("localization.csv");
        write_lines(&loc, loc_rows)?;
        files.push(loc);
    }
    let summary_path = cfg.outputs.join("summary.jsonl");
    write_lines(&summary_path, summary_lines)?;
    files.push(summary_path);
    finish(cfg, "simulate", files, started, summary)
}

/// One row of a `β` scan.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScanRow {
    pub beta: f64,
    pub lambda: f64,
    #[serde(rename = "mean_F")]
    pub mean_f: f64,
    pub se: f64,
    pub gap: f64,
}

/// Adjacent pairs where the gap decreases, and those where the decrease
/// exceeds `3·sqrt(se_j² + se_{j+1}²)`.
pub fn isotonic_violations(rows: &[ScanRow]) -> (usize, usize) {
    let mut any = 0;
    let mut beyond = 0;
    for w in rows.windows(2) {
        let drop = w[0].gap - w[1].gap;
        if drop > 0.0 {
            any += 1;
            if drop > 3.0 * w[0].se.hypot(w[1].se) {
                beyond += 1;
            }
        }
    }
    (any, beyond)
}

/// `F_n` replicas over a `β` grid. All grid points reuse the same field seeds.
///
/// Files: `scan.jsonl` (one row per `β`), `scan_replicas.csv`
/// (`beta,seed,n,logZ,F_n,dropped_mass`) and `scan_summary.json`.
pub fn cmd_scan(cfg: &ExperimentConfig) -> Result<RunReport> {
    let started = Instant::now();
    fs::create_dir_all(&cfg.outputs)?;
    let betas = cfg.betas();
    let seeds = cfg.field_seeds();
    info!("scan: {} beta values x {} seeds, n = {}", betas.len(), seeds.len(), cfg.n);
    let tasks: Vec<(usize, u64)> = (0..betas.len())
        .flat_map(|b| seeds.iter().map(move |&s| (b, s)))
        .collect();
    let outcomes: Vec<SeedOutcome> = tasks
        .into_par_iter()
        .map(|(b, seed)| run_seed(cfg, betas[b], seed, false))
        .collect::<Result<_>>()?;

    let mut rep_rows = vec!["beta,seed,n,logZ,F_n,dropped_mass".to_string()];
    let mut rows = Vec::with_capacity(betas.len());
    for (b, chunk) in outcomes.chunks(seeds.len()).enumerate() {
        let beta = betas[b];
        for o in chunk {
            let c = o.checkpoints.last().expect("n >= 1");
            rep_rows.push(format!("{beta},{},{},{},{},{}", o.seed, c.n, c.log_z, c.free_energy, c.dropped_mass));
        }
        let fs_: Vec<f64> = chunk.iter().map(final_f).collect();
        let (mean_f, se) = mean_se(&fs_);
        let lambda = cfg.env.lambda(beta);
        rows.push(ScanRow {
            beta,
            lambda,
            mean_f,
            se,
            gap: lambda - mean_f,
        });
    }
    let (violations, beyond) = isotonic_violations(&rows);
    if beyond > 0 {
        warn!("scan: {beyond} gap decreases exceed 3 SE");
    }
    let scan = cfg.outputs.join("scan.jsonl");
    write_lines(&scan, rows.iter().map(|r| serde_json::to_string(r).expect("row serializes")))?;
    let reps = cfg.outputs.join("scan_replicas.csv");
    write_lines(&reps, rep_rows)?;
    let summary = json!({
        "n": cfg.n,
        "seeds": cfg.seeds.count,
        "rows": rows,
        "isotonic_violations": violations,
        "violations_beyond_3se": beyond,
    });
    let summary_path = cfg.outputs.join("scan_summary.json");
    fs::write(&summary_path, serde_json::to_string_pretty(&summary)? + "\n")?;
    finish(cfg, "scan", vec![scan, reps, summary_path], started, summary)
}

/// Endpoint-chain trajectory and diagnostics at a single `β`.
///
/// Files: `trajectory.jsonl` (first seed) and `chain_summary.json` with the
/// stationarity-gap checkpoints, the variational comparison over all seeds and
/// a fourth-moment check on the last state.
pub fn cmd_chain(cfg: &ExperimentConfig) -> Result<RunReport> {
    let started = Instant::now();
    let beta = cfg.single_beta()?;
    fs::create_dir_all(&cfg.outputs)?;
    let alpha = cfg.alpha.resolve(beta, &cfg.env);
    let stream = derive_seed(cfg.seeds.base, "chain-stream", 0);
    let ctx = UpdateContext::new(cfg.walk.clone(), beta, cfg.env, alpha, stream)
        .map_err(|e| PolylabError::config("alpha", e.to_string()))?
        .with_truncation(cfg.truncation);
    let n = cfg.n as usize;
    let initial = match cfg.chain.initial {
        InitialState::Unit => None,
        InitialState::Zero => Some(Pspm::zero(cfg.walk.dim())),
    };
    info!("chain: beta = {beta}, alpha = {alpha}, n = {n}");
    let traj = run_chain(&ctx, n, cfg.field_seed(0), initial)?;
    let trajectory = cfg.outputs.join("trajectory.jsonl");
    write_lines(&trajectory, traj.export_lines().iter().map(Value::to_string))?;

    let mut gaps = Vec::new();
    for &c in cfg.chain.checkpoints.iter().filter(|&&c| c <= n) {
        let m = cfg.chain.subsample.min(c + 1);
        let gap = stationarity_gap(&traj, c, &ctx, m, cfg.chain.per_atom, derive_seed(stream, "gap", c as u64))?;
        gaps.push(json!({ "n": c, "m": m, "gap": gap }));
    }
    let variational = match cfg.chain.initial {
        InitialState::Unit => Some(variational_gap(
            &ctx,
            &VariationalSettings {
                n,
                base_seed: cfg.seeds.base,
                num_seeds: cfg.seeds.count,
                subsample: cfg.chain.subsample,
                samples: cfg.chain.energy_samples,
            },
        )?),
        InitialState::Zero => None,
    };
    let last = traj.states.last().expect("trajectory holds f_0");
    let fourth = if (last.norm() - 1.0).abs() <= 1e-12 {
        Some(fourth_moment_check(last, &ctx, cfg.chain.moment_samples, derive_seed(stream, "fourth", 0))?)
    } else {
        None
    };
    let summary = json!({
        "beta": beta,
        "alpha": alpha,
        "n": n,
        "initial": cfg.chain.initial,
        "log_z": traj.log_z(),
        "dropped_mass": traj.dropped_mass,
        "stationarity": gaps,
        "variational": variational,
        "fourth_moment": fourth,
    });
    let summary_path = cfg.outputs.join("chain_summary.json");
    fs::write(&summary_path, serde_json::to_string_pretty(&summary)? + "\n")?;
    finish(cfg, "chain", vec![trajectory, summary_path], started, summary)
}

/// Options of the exact-identity suite.
#[derive(Clone, Debug)]
pub struct OracleOptions {
    pub seed: u64,
    pub cases: usize,
    pub n: u64,
    /// Test hook: perturbs the named check so that it must fail.
    pub corrupt: Option<String>,
}

impl Default for OracleOptions {
    fn default() -> Self {
        OracleOptions {
            seed: 2024,
            cases: 10,
            n: 6,
            corrupt: None,
        }
    }
}

pub const ORACLE_CHECKS: [&str; 4] = ["path_sum", "shift_identity", "chain_dp", "metric_axioms"];
pub const ORACLE_TOLERANCE: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OracleCheck {
    pub name: String,
    /// `pass`, `fail` or `skipped`.
    pub status: String,
    pub residual: f64,
    pub detail: String,
}

fn check(name: &str, residual: std::result::Result<f64, String>, detail: String) -> OracleCheck {
    let (status, residual, detail) = match residual {
        Ok(r) if r < ORACLE_TOLERANCE => ("pass", r, detail),
        Ok(r) => ("fail", r, detail),
        Err(why) => ("skipped", 0.0, why),
    };
    OracleCheck {
        name: name.to_string(),
        status: status.to_string(),
        residual,
        detail,
    }
}

fn size_guarded<T>(r: Result<T>) -> Result<std::result::Result<T, String>> {
    match r {
        Ok(v) => Ok(Ok(v)),
        Err(PolylabError::Size(msg)) => Ok(Err(msg)),
        Err(e) => Err(e),
    }
}

/// Exact identities on random small instances: DP against path enumeration,
/// the time-space shift decomposition, chain increments against the DP, and
/// metric axioms.
pub fn cmd_oracle(opts: &OracleOptions) -> Result<Vec<OracleCheck>> {
    let corrupt = |name: &str| opts.corrupt.as_deref() == Some(name);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let cases: Vec<(StepDistribution, EnvironmentLaw, f64, u64)> = (0..opts.cases)
        .map(|k| {
            let law = random_law(&mut rng);
            let beta = random_beta(&mut rng, &law);
            (random_walk_1d(&mut rng, 4), law, beta, derive_seed(opts.seed, "oracle", k as u64))
        })
        .collect();
    let mut out = Vec::new();

    // DP against enumeration
    let mut res: std::result::Result<f64, String> = Ok(0.0);
    for (j, (walk, law, beta, seed)) in cases.iter().enumerate() {
        let field = SeededField::new(*seed, *law);
        let other = if corrupt("path_sum") && j == cases.len() / 2 {
            SeededField::new(seed ^ 1, *law)
        } else {
            field
        };
        let state = (0..opts.n).try_fold(PolymerState::init(1), |s, _| s.advance(walk, &field, *beta, None))?;
        let exact = match size_guarded(brute_force_log_weights(walk, &other, *beta, opts.n))? {
            Ok(w) => w,
            Err(why) => {
                res = Err(why);
                break;
            }
        };
        let log_z = log_sum_exp(exact.values().copied());
        let tv: f64 = 0.5
            * state
                .endpoint_distribution()
                .iter()
                .map(|&(x, m)| (m - exact.get(&x).map_or(0.0, |l| (l - log_z).exp())).abs())
                .sum::<f64>();
        let r = (state.log_z() - log_z).abs().max(tv);
        res = res.map(|acc| acc.max(r));
    }
    out.push(check("path_sum", res, format!("{} cases, n = {}", cases.len(), opts.n)));

    // shift identity for every split point
    let mut res: std::result::Result<f64, String> = Ok(0.0);
    'cases: for (j, (walk, law, beta, seed)) in cases.iter().enumerate() {
        let field = SeededField::new(*seed, *law);
        for k in 0..=opts.n {
            let mut r = size_guarded(shift_identity_check(walk, &field, *beta, opts.n, k))?;
            if corrupt("shift_identity") && j == 0 && k == opts.n / 2 {
                // the tail factor read from a different field
                let other = SeededField::new(seed ^ 1, *law);
                let moved = (brute_force_log_z(walk, &field, *beta, opts.n)?
                    - brute_force_log_z(walk, &other, *beta, opts.n)?)
                    .abs();
                r = r.map(|v| v + moved);
            }
            match r {
                Ok(v) => res = res.map(|acc| acc.max(v)),
                Err(why) => {
                    res = Err(why);
                    break 'cases;
                }
            }
        }
    }
    out.push(check("shift_identity", res, format!("{} cases, k = 0..={}", cases.len(), opts.n)));

    // chain increments against the DP on the same field
    let chain_n = opts.n.max(40);
    let mut worst = 0.0f64;
    for (j, (walk, law, beta, seed)) in cases.iter().enumerate() {
        let ctx = UpdateContext::new(walk.clone(), *beta, *law, auto_alpha(*beta, law), 0)?;
        let chain_seed = if corrupt("chain_dp") && j == 0 { seed ^ 1 } else { *seed };
        let traj = run_chain(&ctx, chain_n as usize, chain_seed, None)?;
        let field = SeededField::new(*seed, *law);
        let state = (0..chain_n).try_fold(PolymerState::init(1), |s, _| s.advance(walk, &field, *beta, None))?;
        worst = worst.max((traj.log_z() - state.log_z()).abs());
    }
    out.push(check("chain_dp", Ok(worst), format!("{} cases, n = {chain_n}", cases.len())));

    // metric axioms in exact mode
    let mut worst = 0.0f64;
    for _ in 0..opts.cases * 5 {
        let alpha = 1.0 + rng.random_range(0.1..2.0f64);
        let mut sample = || {
            let norm = rng.random_range(0.2..=1.0);
            random_pspm(&mut rng, 1, 4, 2, norm)
        };
        let (f, g, h) = (sample(), sample(), sample());
        let d = |a: &Pspm, b: &Pspm| d_alpha_exact(a, b, alpha, DEFAULT_SUPPORT_CAP).map(|d| d.value);
        let (fg, gf, gh, fh) = (d(&f, &g)?, d(&g, &f)?, d(&g, &h)?, d(&f, &h)?);
        worst = worst.max((fg - gf).abs()).max((fh - fg - gh).max(0.0));
        let map = random_orbit_map(&mut rng, &f);
        let mut moved = f.translate_levels(&map)?;
        if corrupt("metric_axioms") {
            moved = moved.truncate(moved.len().saturating_sub(1).max(1));
            if moved.len() == f.len() {
                moved = Pspm::zero(1);
            }
        }
        worst = worst.max(d(&f, &moved)?);
    }
    out.push(check("metric_axioms", Ok(worst), format!("{} triples", opts.cases * 5)));
    Ok(out)
}


/// Result of `polylab dist`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DistReport {
    pub d_exact: Option<f64>,
    pub d_upper: f64,
    pub degree_of_argmin: Value,
}

pub fn cmd_dist(f: &Pspm, g: &Pspm, alpha: f64, exact: bool) -> Result<DistReport> {
    if !(alpha > 1.0) {
        return Err(PolylabError::InvalidParameter(format!("alpha = {alpha} must exceed 1")));
    }
    let upper = d_alpha_upper(f, g, alpha)?;
    let best = if exact {
        Some(distance(f, g, alpha, DistanceMode::Exact)?)
    } else {
        None
    };
    Ok(DistReport {
        d_exact: best.as_ref().map(|d| d.value),
        d_upper: upper.value,
        degree_of_argmin: best.as_ref().unwrap_or(&upper).degree.to_json(),
    })
}

/// Reads a `{"atoms": [...]}` file.
pub fn read_pspm(path: &Path) -> Result<Pspm> {
    let value: Value = serde_json::from_str(&fs::read_to_string(path)?)?;
    Pspm::from_json(&value)
}

/// Worker count from `POLYLAB_WORKERS`, if set.
pub fn workers_from_env() -> Result<Option<usize>> {
    match std::env::var("POLYLAB_WORKERS") {
        Err(_) => Ok(None),
        Ok(s) => match s.trim().parse::<usize>() {
            Ok(w) if w > 0 => Ok(Some(w)),
            _ => Err(PolylabError::config("POLYLAB_WORKERS", format!("`{s}` is not a positive integer"))),
        },
    }
}

/// Runs `job` on a pool with the requested number of workers.
pub fn with_workers<T: Send>(workers: Option<usize>, job: impl FnOnce() -> T + Send) -> Result<T> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = workers {
        builder = builder.num_threads(w);
    }
    let pool = builder
        .build()
        .map_err(|e| PolylabError::InvalidParameter(format!("thread pool: {e}")))?;
    Ok(pool.install(job))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> Value {
        json!({
            "env": {"kind": "gaussian", "mean": 0.0, "sd": 1.0},
            "walk": {"kind": "srw", "d": 1},
            "beta": 1.0,
            "n": 20,
            "seeds": {"count": 3, "base": 5},
            "outputs": "out",
        })
    }

    fn field_of(v: Value) -> String {
        match ExperimentConfig::from_json(v) {
            Err(PolylabError::Config { field, .. }) => field,
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn config_errors_name_the_field() {
        let mut v = base();
        v.as_object_mut().unwrap().remove("env");
        assert_eq!(field_of(v), "env");
        let mut v = base();
        v["n"] = json!(0);
        assert_eq!(field_of(v), "n");
        let mut v = base();
        v["bogus"] = json!(1);
        assert_eq!(field_of(v), "bogus");
        let mut v = base();
        v["env"] = json!({"kind": "exponential", "rate": 1.0});
        v["beta"] = json!({"start": 0.5, "stop": 1.5, "count": 3});
        assert_eq!(field_of(v.clone()), "beta");
        v["beta"] = json!(0.6);
        v["alpha"] = json!(2.0);
        assert_eq!(field_of(v), "alpha");
    }

    #[test]
    fn beta_grid_values() {
        let g = BetaSpec::Grid { start: 0.1, stop: 3.0, count: 10 };
        let v = g.values();
        assert_eq!(v.len(), 10);
        assert_eq!(v[0], 0.1);
        assert!((v[9] - 3.0).abs() < 1e-15);
        assert_eq!(BetaSpec::Grid { start: 0.4, stop: 9.0, count: 1 }.values(), vec![0.4]);
    }

    #[test]
    fn defaults() {
        let cfg = ExperimentConfig::from_json(base()).unwrap();
        assert_eq!(cfg.alpha, AlphaSpec::Auto);
        assert!(cfg.localization.is_none());
        assert_eq!(cfg.chain.subsample, 64);
        assert_eq!(cfg.chain.checkpoints, vec![250, 500, 1000]);
        let loc: LocalizationSpec = serde_json::from_value(json!({})).unwrap();
        assert_eq!(loc.schedules().len(), 4);
        assert_eq!((loc.delta, loc.k), (0.5, 10));
    }

    #[test]
    fn violations_count() {
        let row = |gap: f64, se: f64| ScanRow { beta: 0.0, lambda: 0.0, mean_f: 0.0, se, gap };
        let rows = vec![row(0.0, 0.01), row(0.1, 0.01), row(0.09, 0.01), row(0.5, 0.01), row(0.2, 0.01)];
        assert_eq!(isotonic_violations(&rows), (2, 1));
    }

    #[test]
    fn oracle_passes_and_detects_corruption() {
        let opts = OracleOptions { cases: 4, n: 4, ..Default::default() };
        let report = cmd_oracle(&opts).unwrap();
        assert_eq!(report.len(), 4);
        assert!(report.iter().all(|c| c.status == "pass"), "{report:?}");
        for name in ORACLE_CHECKS {
            let bad = cmd_oracle(&OracleOptions { corrupt: Some(name.into()), ..opts.clone() }).unwrap();
            for c in &bad {
                assert_eq!(c.status == "fail", c.name == name, "{c:?}");
            }
        }
        let big = cmd_oracle(&OracleOptions { cases: 2, n: 40, ..Default::default() }).unwrap();
        assert_eq!(big[0].status, "skipped");
        assert_eq!(big[1].status, "skipped");
        assert_eq!(big[2].status, "pass");
    }

    #[test]
    fn dist_report() {
        let f = Pspm::unit(1);
        let r = cmd_dist(&f, &f, 2.0, true).unwrap();
        assert_eq!(r.d_exact, Some(0.0));
        assert_eq!(r.d_upper, 0.0);
        assert_eq!(r.degree_of_argmin, json!("inf"));
        assert!(cmd_dist(&f, &f, 1.0, false).is_err());
    }
}
