//! Batch runner: training runs with manifests, evaluation logs, demo files,
//! the friction × mass × shape transfer sweep and curve merging.
//!
//! A training run writes into `<out>/<algo>-seed<seed>/`:
//!
//! ```text
//! manifest.json      full config, seed, git describe, wall time
//! curves.csv         one row per training episode
//! policy_final.rgnn  policy_best.rgnn  [value_final.rgnn]  [disc_final.rgnn]
//! eval.jsonl         one evaluation episode per line
//! [demos.jsonl]      the demonstrations used (bc, gail)
//! ```

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{unknown_keys, EnvConfig, ENV_KEYS};
use crate::curves::check_schema;
use crate::demos::{generate_demos, DemoSet};
use crate::env::{success_fraction, EpisodeLog};
use crate::error::{Error, Result};
use crate::imitation::{train_bc, train_gail, BcConfig, GailConfig};
use crate::nn::NetParams;
use crate::physics::{ObjectSpec, Shape};
use crate::policy::{evaluate_policy, EvalMode, PolicyNet};
use crate::ppo::{train_ppo, PpoConfig, TrainOutput};

pub const MANIFEST_VERSION: u32 = 1;
pub const SWEEP_COLUMNS: &str = "algorithm,shape,mu,mass_g,episodes,success";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Gail,
    Ppo,
    Bc,
}

impl Algorithm {
    pub const ALL: [Algorithm; 3] = [Algorithm::Gail, Algorithm::Bc, Algorithm::Ppo];

    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Gail => "gail",
            Algorithm::Ppo => "ppo",
            Algorithm::Bc => "bc",
        }
    }

    pub fn uses_demos(self) -> bool {
        self != Algorithm::Ppo
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gail" => Ok(Algorithm::Gail),
            "ppo" => Ok(Algorithm::Ppo),
            "bc" => Ok(Algorithm::Bc),
            other => Err(Error::InvalidConfig(format!(
                "unknown algorithm {other:?}; expected gail, ppo or bc"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub shapes: Vec<Shape>,
    pub frictions: Vec<f64>,
    /// Masses evaluated for GAIL.
    pub masses_gail_g: Vec<f64>,
    /// Masses evaluated for PPO and BC.
    pub masses_baseline_g: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            shapes: vec![Shape::Cuboid, Shape::Cylinder],
            frictions: vec![0.1, 0.3, 0.5],
            masses_gail_g: vec![120.0, 150.0, 200.0],
            masses_baseline_g: vec![100.0, 150.0, 200.0],
        }
    }
}

impl SweepConfig {
    pub fn masses(&self, algo: Algorithm) -> &[f64] {
        match algo {
            Algorithm::Gail => &self.masses_gail_g,
            _ => &self.masses_baseline_g,
        }
    }

    /// Object for one grid cell. Shapes keep their catalogue dimensions.
    pub fn object(shape: Shape, mu: f64, mass_g: f64) -> ObjectSpec {
        match shape {
            Shape::Cylinder => ObjectSpec::sweep_cylinder(mass_g, mu),
            Shape::Cuboid => ObjectSpec {
                mass_g,
                mu,
                ..ObjectSpec::training_cuboid()
            },
            Shape::Hammer => ObjectSpec {
                mass_g,
                mu,
                ..ObjectSpec::catalogue()[0].1.clone()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub algorithm: Algorithm,
    pub env: EnvConfig,
    pub episodes: usize,
    pub eval_episodes: usize,
    pub eval_mode: EvalMode,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
    /// Scripted demonstrations generated for bc and gail.
    pub demos: usize,
    pub demo_seed: u64,
    /// Use these recorded demonstrations instead of generating them.
    pub demos_path: Option<PathBuf>,
    pub ppo: PpoConfig,
    pub bc: BcConfig,
    pub gail: GailConfig,
    pub sweep: SweepConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            algorithm: Algorithm::Gail,
            env: EnvConfig::default(),
            episodes: 500,
            eval_episodes: 50,
            eval_mode: EvalMode::Sample,
            seeds: vec![0],
            out: PathBuf::from("runs"),
            demos: 6,
            demo_seed: 0,
            demos_path: None,
            ppo: PpoConfig::default(),
            bc: BcConfig::default(),
            gail: GailConfig::default(),
            sweep: SweepConfig::default(),
        }
    }
}

const HARNESS_KEYS: &[&str] = &[
    "algorithm",
    "episodes",
    "eval_episodes",
    "eval_mode",
    "seeds",
    "out",
    "demos",
    "demo_seed",
    "demos_path",
];
const SECTIONS: &[&str] = &["ppo", "bc", "gail", "sweep"];

impl ExperimentConfig {
    /// Parse a TOML experiment file. Environment keys sit at the top level
    /// (`object.mu = 0.3`, `obs_delay_ticks = 3`, ...); trainer settings go
    /// in `[ppo]`, `[bc]`, `[gail]` and `[sweep]` tables.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table: toml::Table = text.parse()?;
        let mut top = table.clone();
        for s in SECTIONS {
            top.remove(*s);
        }
        let known: Vec<&str> = ENV_KEYS.iter().chain(HARNESS_KEYS).copied().collect();
        if let Some(k) = unknown_keys(&top, &known).first() {
            return Err(Error::InvalidConfig(format!(
                "unknown key {k:?}; expected environment keys, one of {} or a [{}] table",
                HARNESS_KEYS.join(", "),
                SECTIONS.join("]/[")
            )));
        }
        let mut cfg = ExperimentConfig {
            env: EnvConfig::from_table(&top)?,
            ..ExperimentConfig::default()
        };
        let str_of = |k: &str| -> Result<Option<String>> {
            match table.get(k) {
                None => Ok(None),
                Some(v) => v
                    .as_str()
                    .map(|s| Some(s.to_string()))
                    .ok_or_else(|| Error::InvalidConfig(format!("{k} must be a string"))),
            }
        };
        if let Some(a) = str_of("algorithm")? {
            cfg.algorithm = a.parse()?;
        }
        if let Some(v) = table.get("episodes") {
            cfg.episodes = crate::config::count(v, "episodes")?;
        }
        if let Some(v) = table.get("eval_episodes") {
            cfg.eval_episodes = crate::config::count(v, "eval_episodes")?;
        }
        if let Some(m) = str_of("eval_mode")? {
            cfg.eval_mode = m.parse()?;
        }
        if let Some(v) = table.get("demos") {
            cfg.demos = crate::config::count(v, "demos")?;
        }
        if let Some(v) = table.get("demo_seed") {
            cfg.demo_seed = crate::config::count(v, "demo_seed")? as u64;
        }
        if let Some(v) = table.get("seeds") {
            let arr = v
                .as_array()
                .ok_or_else(|| Error::InvalidConfig("seeds must be an array of integers".into()))?;
            cfg.seeds = arr
                .iter()
                .map(|s| crate::config::count(s, "seeds").map(|x| x as u64))
                .collect::<Result<_>>()?;
        }
        if let Some(o) = str_of("out")? {
            cfg.out = PathBuf::from(o);
        }
        cfg.demos_path = str_of("demos_path")?.map(PathBuf::from);
        let section = |name: &str| table.get(name).cloned();
        if let Some(v) = section("ppo") {
            cfg.ppo = v.try_into().map_err(|e| bad_section("ppo", e))?;
        }
        if let Some(v) = section("bc") {
            cfg.bc = v.try_into().map_err(|e| bad_section("bc", e))?;
        }
        if let Some(v) = section("gail") {
            cfg.gail = v.try_into().map_err(|e| bad_section("gail", e))?;
        }
        if let Some(v) = section("sweep") {
            cfg.sweep = v.try_into().map_err(|e| bad_section("sweep", e))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Read a TOML experiment file, or a run's `manifest.json` to repeat
    /// that run.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        if path.extension().is_some_and(|e| e == "json") {
            let m: Manifest = serde_json::from_str(&text)?;
            let cfg = ExperimentConfig {
                seeds: vec![m.seed],
                ..m.config
            };
            cfg.validate()?;
            return Ok(cfg);
        }
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.ppo.validate()?;
        self.gail.validate()?;
        if self.eval_episodes == 0 {
            return Err(Error::InvalidConfig("eval_episodes must be >= 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::InvalidConfig("seeds must not be empty".into()));
        }
        if self.demos == 0 && self.demos_path.is_none() {
            return Err(Error::InvalidConfig("demos must be >= 1".into()));
        }
        Ok(())
    }

    pub fn run_dir(&self, algo: Algorithm, seed: u64) -> PathBuf {
        self.out.join(format!("{algo}-seed{seed}"))
    }

    /// The demonstrations bc and gail train on.
    pub fn demo_set(&self) -> Result<DemoSet> {
        match &self.demos_path {
            Some(p) => {
                let set = DemoSet::load(p)?;
                set.check_compatible(&self.env)?;
                if set.count() == 0 {
                    return Err(Error::Precondition(format!("{} holds no trajectories", p.display())));
                }
                Ok(set)
            }
            None => generate_demos(&self.env, self.demos, self.demo_seed),
        }
    }
}

fn bad_section(name: &str, e: toml::de::Error) -> Error {
    Error::InvalidConfig(format!("[{name}]: {}", e.message()))
}

/// Evaluation episodes never share seeds with training episodes.
pub fn eval_seed(train_seed: u64) -> u64 {
    train_seed.wrapping_add(1_000_000)
}

/// Train one policy; `demos` is required for bc and gail.
pub fn train(
    cfg: &ExperimentConfig,
    algo: Algorithm,
    seed: u64,
    demos: Option<&DemoSet>,
) -> Result<(TrainOutput, Option<NetParams>)> {
    let need = || {
        demos.ok_or_else(|| Error::Precondition(format!("{algo} needs demonstrations")))
    };
    Ok(match algo {
        Algorithm::Ppo => (train_ppo(&cfg.env, &cfg.ppo, cfg.episodes, seed)?, None),
        Algorithm::Bc => (train_bc(&cfg.env, need()?, &cfg.bc, cfg.episodes, seed)?, None),
        Algorithm::Gail => {
            let (out, disc) = train_gail(&cfg.env, need()?, &cfg.gail, cfg.episodes, seed)?;
            (out, Some(disc.net))
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: u32,
    pub algorithm: Algorithm,
    pub seed: u64,
    pub eval_seed: u64,
    pub config: ExperimentConfig,
    pub env_config_hash: String,
    pub git_describe: String,
    /// Worker threads available to the process; results do not depend on it.
    pub threads: usize,
    pub wall_time_s: f64,
    pub episodes: usize,
    pub best_episode: Option<usize>,
    pub eval_success: f64,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub algorithm: Algorithm,
    pub seed: u64,
    pub dir: PathBuf,
    pub output: TrainOutput,
    pub eval: Vec<EpisodeLog>,
    pub success: f64,
}

pub fn git_describe() -> String {
    std::process::Command::new("git")
        .args(["describe", "--always", "--dirty", "--tags"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "unknown".into())
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn write_eval_log(path: &Path, logs: &[EpisodeLog]) -> Result<()> {
    let mut text = String::new();
    for l in logs {
        text.push_str(&serde_json::to_string(l)?);
        text.push('\n');
    }
    write(path, text)
}

/// One full run: train, evaluate greedily, write the run directory.
pub fn run_one(cfg: &ExperimentConfig, algo: Algorithm, seed: u64) -> Result<RunResult> {
    let start = Instant::now();
    let dir = cfg.run_dir(algo, seed);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let demos = if algo.uses_demos() {
        let set = cfg.demo_set()?;
        set.save(&dir.join("demos.jsonl"))?;
        Some(set)
    } else {
        None
    };
    let (output, disc) = train(cfg, algo, seed, demos.as_ref())?;
    let eseed = eval_seed(seed);
    let eval = evaluate_policy(&output.policy, cfg.eval_mode, &cfg.env, cfg.eval_episodes, eseed)?;
    let success = success_fraction(&eval);

    output.curve.save(&dir.join("curves.csv"))?;
    output.policy.net.save(&dir.join("policy_final.rgnn"))?;
    output.best.net.save(&dir.join("policy_best.rgnn"))?;
    if let Some(v) = &output.value {
        v.net.save(&dir.join("value_final.rgnn"))?;
    }
    if let Some(d) = &disc {
        d.save(&dir.join("disc_final.rgnn"))?;
    }
    write_eval_log(&dir.join("eval.jsonl"), &eval)?;
    let manifest = Manifest {
        format: MANIFEST_VERSION,
        algorithm: algo,
        seed,
        eval_seed: eseed,
        config: ExperimentConfig {
            algorithm: algo,
            ..cfg.clone()
        },
        env_config_hash: cfg.env.config_hash(),
        git_describe: git_describe(),
        threads: rayon::current_num_threads(),
        wall_time_s: start.elapsed().as_secs_f64(),
        episodes: cfg.episodes,
        best_episode: output.best_episode,
        eval_success: success,
    };
    write(&dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(RunResult {
        algorithm: algo,
        seed,
        dir,
        output,
        eval,
        success,
    })
}

/// Train every configured seed of `cfg.algorithm` in parallel.
pub fn cmd_train(cfg: &ExperimentConfig) -> Result<Vec<RunResult>> {
    cfg.validate()?;
    cfg.seeds
        .par_iter()
        .map(|s| run_one(cfg, cfg.algorithm, *s))
        .collect()
}

pub fn load_policy(path: &Path) -> Result<PolicyNet> {
    if !path.exists() {
        return Err(Error::Precondition(format!(
            "checkpoint {} not found; run `train` first or pass --checkpoint",
            path.display()
        )));
    }
    PolicyNet::from_params(NetParams::load(path)?)
}

/// Evaluate a saved policy; writes the episode log when `out` is given.
pub fn cmd_eval(
    checkpoint: &Path,
    env: &EnvConfig,
    mode: EvalMode,
    episodes: usize,
    seed: u64,
    out: Option<&Path>,
) -> Result<(f64, Vec<EpisodeLog>)> {
    let policy = load_policy(checkpoint)?;
    let logs = evaluate_policy(&policy, mode, env, episodes, seed)?;
    if let Some(p) = out {
        write_eval_log(p, &logs)?;
    }
    Ok((success_fraction(&logs), logs))
}

pub fn cmd_demos(env: &EnvConfig, n: usize, seed: u64, out: &Path) -> Result<DemoSet> {
    let set = generate_demos(env, n, seed)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    set.save(out)?;
    Ok(set)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub algorithm: Algorithm,
    pub shape: Shape,
    pub mu: f64,
    pub mass_g: f64,
    pub episodes: usize,
    pub success: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SweepReport {
    pub cells: Vec<SweepCell>,
}

impl SweepReport {
    pub fn cells_for(&self, algo: Algorithm) -> impl Iterator<Item = &SweepCell> {
        self.cells.iter().filter(move |c| c.algorithm == algo)
    }

    pub fn mean(&self, algo: Algorithm) -> f64 {
        let v: Vec<f64> = self.cells_for(algo).map(|c| c.success).collect();
        if v.is_empty() {
            return f64::NAN;
        }
        v.iter().sum::<f64>() / v.len() as f64
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{SWEEP_COLUMNS}\n");
        for c in &self.cells {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                c.algorithm, c.shape, c.mu, c.mass_g, c.episodes, c.success
            ));
        }
        out
    }

    /// Rows of shape × friction with one column per mass, the layout of a
    /// printed success-rate table.
    pub fn table(&self, algo: Algorithm) -> String {
        let mut masses: Vec<f64> = Vec::new();
        for c in self.cells_for(algo) {
            if !masses.contains(&c.mass_g) {
                masses.push(c.mass_g);
            }
        }
        let mut out = format!("{algo:<5} {:>9} {:>5}", "shape", "mu");
        for m in &masses {
            out.push_str(&format!(" {:>7}", format!("{m}g")));
        }
        out.push('\n');
        let mut rows: Vec<(Shape, f64)> = Vec::new();
        for c in self.cells_for(algo) {
            if !rows.contains(&(c.shape, c.mu)) {
                rows.push((c.shape, c.mu));
            }
        }
        for (shape, mu) in rows {
            out.push_str(&format!("{:<5} {:>9} {:>5}", "", shape.to_string(), mu));
            for m in &masses {
                let s = self
                    .cells_for(algo)
                    .find(|c| c.shape == shape && c.mu == mu && c.mass_g == *m)
                    .map_or(f64::NAN, |c| c.success);
                out.push_str(&format!(" {s:>7.2}"));
            }
            out.push('\n');
        }
        out.push_str(&format!("{:<5} mean {:.3}\n", "", self.mean(algo)));
        out
    }
}

/// Evaluate fixed policies over the grid. Every cell of every algorithm
/// uses the same evaluation seeds, so cells that differ only in mass or
/// shape are directly comparable.
pub fn sweep_policies(
    policies: &[(Algorithm, PolicyNet)],
    base_env: &EnvConfig,
    sweep: &SweepConfig,
    mode: EvalMode,
    eval_episodes: usize,
    seed: u64,
) -> Result<SweepReport> {
    let mut jobs = Vec::new();
    for (algo, policy) in policies {
        for shape in &sweep.shapes {
            for mu in &sweep.frictions {
                for mass in sweep.masses(*algo) {
                    jobs.push((*algo, policy, *shape, *mu, *mass));
                }
            }
        }
    }
    let cells = jobs
        .par_iter()
        .map(|(algo, policy, shape, mu, mass)| {
            let env = base_env
                .clone()
                .with_object(SweepConfig::object(*shape, *mu, *mass));
            env.validate()?;
            let logs = evaluate_policy(policy, mode, &env, eval_episodes, seed)?;
            Ok(SweepCell {
                algorithm: *algo,
                shape: *shape,
                mu: *mu,
                mass_g: *mass,
                episodes: eval_episodes,
                success: success_fraction(&logs),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepReport { cells })
}

/// Train (or reuse a finished run's final checkpoint for) one canonical
/// policy per algorithm on the configured training object, then evaluate
/// all of them across the grid. Writes `<out>/sweep.csv`.
pub fn cmd_sweep(cfg: &ExperimentConfig) -> Result<SweepReport> {
    cfg.validate()?;
    let seed = cfg.seeds[0];
    let policies = Algorithm::ALL
        .par_iter()
        .map(|algo| {
            let ckpt = cfg.run_dir(*algo, seed).join("policy_final.rgnn");
            let policy = if ckpt.exists() {
                load_policy(&ckpt)?
            } else {
                run_one(cfg, *algo, seed)?.output.policy
            };
            Ok((*algo, policy))
        })
        .collect::<Result<Vec<_>>>()?;
    let report = sweep_policies(
        &policies,
        &cfg.env,
        &cfg.sweep,
        cfg.eval_mode,
        cfg.eval_episodes,
        eval_seed(seed),
    )?;
    std::fs::create_dir_all(&cfg.out).map_err(|e| Error::io(&cfg.out, e))?;
    write(&cfg.out.join("sweep.csv"), report.to_csv())?;
    Ok(report)
}

/// Merge the curves of several run directories into one CSV with a leading
/// `run` column. Extra columns are the union across runs, left empty where
/// a run lacks them.
pub fn cmd_curves(run_dirs: &[PathBuf], out: &Path) -> Result<String> {
    if run_dirs.is_empty() {
        return Err(Error::Precondition("no run directories given".into()));
    }
    let mut parsed = Vec::new();
    let mut columns: Vec<String> = Vec::new();
    for dir in run_dirs {
        let path = dir.join("curves.csv");
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let header = check_schema(&text)?;
        for h in &header {
            if !columns.contains(h) {
                columns.push(h.clone());
            }
        }
        let name = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| dir.display().to_string());
        parsed.push((name, header, text));
    }
    let mut merged = format!("run,{}\n", columns.join(","));
    for (name, header, text) in &parsed {
        for line in text.lines().skip(1) {
            let fields: Vec<&str> = line.split(',').collect();
            let row: Vec<&str> = columns
                .iter()
                .map(|c| header.iter().position(|h| h == c).map_or("", |i| fields[i]))
                .collect();
            merged.push_str(name);
            merged.push(',');
            merged.push_str(&row.join(","));
            merged.push('\n');
        }
    }
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    write(out, &merged)?;
    Ok(merged)
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
