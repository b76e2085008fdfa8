//! Monte-Carlo experiments: the risk-aversion sweep, the horizon scaling
//! study, and CSV/JSON report files.
//!
//! Every run draws its branches from a ChaCha8 stream seeded with
//! [`stable_hash`]`(master, envelope_index, run_index)`, and results are
//! reduced in `(envelope, run)` order, so reports do not depend on how runs
//! are scheduled across threads.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Mat, Vector};
use crate::risk_envelope::{EnvelopeSpec, Pmf};
use crate::scenario_mpc::{MpcController, ScenarioTree, Trajectory, DEFAULT_NODE_CAP};
use crate::system_model::{ConstraintSet, CostWeights, ModelFile, Plant, SystemModel};
use crate::terminal_design::solve_pe;

/// Settings of the risk-aversion sweep (the `[experiment]` table).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSettings {
    /// Model file, resolved against the config file's directory. When
    /// absent the model fields must be inlined at the top level.
    #[serde(default)]
    pub model_file: Option<PathBuf>,
    /// Envelopes as `"expectation"`, `"cvar:<alpha>"` or full tables.
    #[serde(default)]
    pub envelopes: Vec<EnvelopeEntry>,
    /// Shorthand for CVaR envelopes, appended after `envelopes`.
    #[serde(default)]
    pub alphas: Vec<f64>,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_runs")]
    pub runs: usize,
    #[serde(default)]
    pub seed: u64,
    pub x0: Vec<f64>,
    #[serde(default = "default_snapshots")]
    pub snapshots: Vec<usize>,
    #[serde(default = "default_quantiles")]
    pub quantiles: Vec<f64>,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

fn default_horizon() -> usize {
    4
}
fn default_steps() -> usize {
    15
}
fn default_runs() -> usize {
    1000
}
fn default_snapshots() -> Vec<usize> {
    vec![3, 7, 11, 14]
}
fn default_quantiles() -> Vec<f64> {
    vec![0.99]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EnvelopeEntry {
    Short(String),
    Full(EnvelopeSpec),
}

impl EnvelopeEntry {
    pub fn spec(&self) -> Result<EnvelopeSpec> {
        match self {
            EnvelopeEntry::Short(s) => s.parse(),
            EnvelopeEntry::Full(spec) => Ok(spec.clone()),
        }
    }
}

/// Settings of the horizon scaling study (the `[scaling]` table).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalingSettings {
    #[serde(default = "default_branches")]
    pub branches: usize,
    #[serde(default = "default_scaling_nx")]
    pub nx: usize,
    #[serde(default = "default_scaling_nu")]
    pub nu: usize,
    #[serde(default = "default_scaling_alpha")]
    pub alpha: f64,
    #[serde(default = "default_scaling_horizons")]
    pub horizons: Vec<usize>,
    #[serde(default = "default_scaling_runs")]
    pub runs: usize,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default)]
    pub seed: u64,
    /// Range of the spectral radius drawn for each `A_j`.
    #[serde(default = "default_radius")]
    pub spectral_radius: [f64; 2],
    /// Symmetric Dirichlet concentration of the random pmf.
    #[serde(default = "default_concentration")]
    pub concentration: f64,
    #[serde(default = "default_bound")]
    pub x_max: f64,
    #[serde(default = "default_bound")]
    pub u_max: f64,
    #[serde(default = "default_node_cap")]
    pub node_cap: usize,
    /// Random systems tried before giving up on terminal synthesis.
    #[serde(default = "default_attempts")]
    pub max_attempts: usize,
}

fn default_branches() -> usize {
    6
}
fn default_scaling_nx() -> usize {
    5
}
fn default_scaling_nu() -> usize {
    2
}
fn default_scaling_alpha() -> f64 {
    0.2
}
fn default_scaling_horizons() -> Vec<usize> {
    vec![2, 3]
}
fn default_scaling_runs() -> usize {
    2
}
fn default_radius() -> [f64; 2] {
    [0.3, 0.95]
}
fn default_concentration() -> f64 {
    1.0
}
fn default_bound() -> f64 {
    10.0
}
fn default_node_cap() -> usize {
    DEFAULT_NODE_CAP
}
fn default_attempts() -> usize {
    20
}

impl Default for ScalingSettings {
    fn default() -> Self {
        toml::from_str("").expect("every scaling field has a default")
    }
}

/// Full experiment file: model fields at the top level (or `model_file`),
/// plus `[experiment]` and optionally `[scaling]`.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub model: Option<ModelFile>,
    pub experiment: Option<ExperimentSettings>,
    pub scaling: Option<ScalingSettings>,
}

impl ExperimentConfig {
    /// Reads a `.toml` or `.json` experiment file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let value: serde_json::Value = match path.extension().and_then(|e| e.to_str()) {
            Some("json") => serde_json::from_str(&text)?,
            _ => toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?,
        };
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_value(value, base)
    }

    pub fn from_toml_str(text: &str, base: &Path) -> Result<Self> {
        let value: serde_json::Value = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Self::from_value(value, base)
    }

    fn from_value(value: serde_json::Value, base: &Path) -> Result<Self> {
        let serde_json::Value::Object(mut map) = value else {
            return Err(Error::Config("experiment file must be a table".into()));
        };
        let section = |v: Option<serde_json::Value>, name: &str| -> Result<Option<serde_json::Value>> {
            match v {
                Some(serde_json::Value::Object(t)) => Ok(Some(serde_json::Value::Object(t))),
                Some(_) => Err(Error::Config(format!("`{name}` must be a table"))),
                None => Ok(None),
            }
        };
        let experiment: Option<ExperimentSettings> = section(map.remove("experiment"), "experiment")?
            .map(serde_json::from_value)
            .transpose()
            .map_err(|e| Error::Config(format!("[experiment]: {e}")))?;
        let scaling: Option<ScalingSettings> = section(map.remove("scaling"), "scaling")?
            .map(serde_json::from_value)
            .transpose()
            .map_err(|e| Error::Config(format!("[scaling]: {e}")))?;

        let file = experiment.as_ref().and_then(|e| e.model_file.clone());
        let model = match (file, map.is_empty()) {
            (Some(f), true) => Some(ModelFile::load(&base.join(f))?),
            (Some(_), false) => {
                return Err(Error::Config("give either `model_file` or inline model fields, not both".into()))
            }
            (None, false) => Some(
                serde_json::from_value(serde_json::Value::Object(map))
                    .map_err(|e| Error::Config(format!("model: {e}")))?,
            ),
            (None, true) => None,
        };
        let config = Self { model, experiment, scaling };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(e) = &self.experiment {
            e.validate()?;
            if self.model.is_none() {
                return Err(Error::Config("the sweep needs a model".into()));
            }
        }
        if let Some(s) = &self.scaling {
            s.validate()?;
        }
        Ok(())
    }

    pub fn plant(&self) -> Result<Plant> {
        self.model.as_ref().ok_or_else(|| Error::Config("no model given".into()))?.into_plant()
    }
}

impl ExperimentSettings {
    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 {
            return Err(Error::Config("runs must be at least 1".into()));
        }
        if self.horizon == 0 || self.steps == 0 {
            return Err(Error::Config("horizon and steps must be at least 1".into()));
        }
        if let Some(k) = self.snapshots.iter().find(|k| **k >= self.steps) {
            return Err(Error::Config(format!("snapshot {k} is not below the step count {}", self.steps)));
        }
        if let Some(q) = self.quantiles.iter().find(|q| !(**q > 0.0 && **q <= 1.0)) {
            return Err(Error::Config(format!("quantile level {q} outside (0, 1]")));
        }
        self.specs().map(|_| ())
    }

    /// Envelope list in sweep order.
    pub fn specs(&self) -> Result<Vec<EnvelopeSpec>> {
        let mut out = self.envelopes.iter().map(EnvelopeEntry::spec).collect::<Result<Vec<_>>>()?;
        out.extend(self.alphas.iter().map(|&alpha| EnvelopeSpec::Cvar { alpha }));
        Ok(out)
    }
}

impl ScalingSettings {
    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.spectral_radius;
        if !(0.0 <= lo && lo <= hi && hi < 1.0) {
            return Err(Error::Config("spectral radius range must satisfy 0 ≤ lo ≤ hi < 1".into()));
        }
        if self.branches == 0 || self.nx == 0 || self.nu == 0 || self.runs == 0 || self.steps == 0 {
            return Err(Error::Config("scaling sizes must be positive".into()));
        }
        if !(self.concentration > 0.0) || !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::Config("concentration must be positive and alpha in (0, 1]".into()));
        }
        Ok(())
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-run seed. Injective in `run` for fixed `(master, group)`.
pub fn stable_hash(master: u64, group: u64, run: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(master) ^ group) ^ run)
}

/// Nearest-rank quantile: the `ceil(q·n)`-th smallest value.
pub fn nearest_rank(sorted: &[f64], q: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let rank = (q * sorted.len() as f64).ceil() as usize;
    Some(sorted[rank.clamp(1, sorted.len()) - 1])
}

/// Empirical CDF as `(value, fraction ≤ value)` at each distinct value.
pub fn empirical_cdf(values: &[f64]) -> Vec<(f64, f64)> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (i, v) in sorted.iter().enumerate() {
        let frac = (i + 1) as f64 / n;
        match out.last_mut() {
            Some(last) if last.0 == *v => last.1 = frac,
            _ => out.push((*v, frac)),
        }
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct QuantileValue {
    pub level: f64,
    pub value: f64,
}

/// Cumulative-cost statistics at one time index.
#[derive(Debug, Clone, Serialize)]
pub struct Snapshot {
    pub k: usize,
    /// Runs that reached step `k`.
    pub samples: usize,
    pub mean: Option<f64>,
    pub quantiles: Vec<QuantileValue>,
    #[serde(skip)]
    pub cdf: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EnvelopeResult {
    pub label: String,
    pub spec: EnvelopeSpec,
    pub vertices: usize,
    pub detroot_w: Option<f64>,
    /// Why this envelope produced no runs, if it did not.
    pub error: Option<String>,
    pub runs: usize,
    /// Runs whose every online solve succeeded.
    pub feasible_runs: usize,
    pub feasibility_rate: f64,
    /// Steps with a state or control outside its set.
    pub violations: usize,
    pub fallback_steps: usize,
    pub aborted_runs: usize,
    pub lyapunov_violations: usize,
    pub max_lyapunov_gap: Option<f64>,
    pub snapshots: Vec<Snapshot>,
    #[serde(skip)]
    pub trajectories: Vec<Trajectory>,
}

impl EnvelopeResult {
    fn failed(spec: EnvelopeSpec, runs: usize, vertices: usize, detroot_w: Option<f64>, error: String) -> Self {
        Self {
            label: spec.label(),
            spec,
            vertices,
            detroot_w,
            error: Some(error),
            runs,
            feasible_runs: 0,
            feasibility_rate: 0.0,
            violations: 0,
            fallback_steps: 0,
            aborted_runs: 0,
            lyapunov_violations: 0,
            max_lyapunov_gap: None,
            snapshots: Vec::new(),
            trajectories: Vec::new(),
        }
    }

    /// Cumulative cost at step `k` for every run that reached it, in run order.
    pub fn cumulative_at(&self, k: usize) -> Vec<f64> {
        self.trajectories.iter().filter_map(|t| t.steps.get(k).map(|s| s.cum_cost)).collect()
    }

    pub fn snapshot(&self, k: usize) -> Option<&Snapshot> {
        self.snapshots.iter().find(|s| s.k == k)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ScalingRow {
    pub horizon: usize,
    pub control_nodes: Option<usize>,
    pub variables: Option<usize>,
    pub solves: usize,
    pub mean_ms: Option<f64>,
    pub max_ms: Option<f64>,
    pub skipped: Option<String>,
}

/// The random system used by the scaling study.
#[derive(Debug, Clone, Serialize)]
pub struct ScalingSystem {
    pub attempts: usize,
    pub spectral_radii: Vec<f64>,
    pub pmf: Vec<f64>,
    pub vertices: usize,
    pub x0: Vec<f64>,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct ExperimentReport {
    pub seed: u64,
    pub envelopes: Vec<EnvelopeResult>,
    pub scaling: Vec<ScalingRow>,
    pub scaling_system: Option<ScalingSystem>,
}

/// Fixed-size worker pool, or the global one when `jobs` is `None`.
fn with_pool<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match jobs {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))
            .map(|pool| pool.install(f)),
        None => Ok(f()),
    }
}

/// Synthesizes a design per envelope and simulates every run.
pub fn run_alpha_sweep(plant: &Plant, settings: &ExperimentSettings, jobs: Option<usize>) -> Result<ExperimentReport> {
    settings.validate()?;
    let x0 = Vector::from_column_slice(&settings.x0);
    if x0.len() != plant.nx() {
        return Err(Error::Config(format!("x0 has {} entries, model has {} states", x0.len(), plant.nx())));
    }
    let mut report = ExperimentReport { seed: settings.seed, ..Default::default() };
    for (ai, spec) in settings.specs()?.into_iter().enumerate() {
        report.envelopes.push(sweep_one(plant, settings, jobs, ai as u64, spec, &x0)?);
    }
    Ok(report)
}

fn sweep_one(
    plant: &Plant,
    settings: &ExperimentSettings,
    jobs: Option<usize>,
    index: u64,
    spec: EnvelopeSpec,
    x0: &Vector,
) -> Result<EnvelopeResult> {
    let runs = settings.runs;
    let vertices = match spec.build(plant.model.pmf()) {
        Ok(env) => env.vertices().to_vec(),
        Err(e) => return Ok(EnvelopeResult::failed(spec, runs, 0, None, e.to_string())),
    };
    let design = match solve_pe(plant, &vertices) {
        Ok(d) => d,
        Err(e) => return Ok(EnvelopeResult::failed(spec, runs, vertices.len(), None, e.to_string())),
    };
    let detroot = Some(design.detroot());
    let m = vertices.len();
    let controller = match MpcController::new(plant.clone(), design, vertices, settings.horizon) {
        Ok(c) => c,
        Err(e) => return Ok(EnvelopeResult::failed(spec, runs, m, detroot, e.to_string())),
    };
    // The first solve is the same for every run.
    if let Err(e) = controller.solve_step(x0) {
        match e {
            Error::MpcInfeasible { .. } | Error::Solver(_) => {
                return Ok(EnvelopeResult::failed(spec, runs, m, detroot, format!("initial state: {e}")))
            }
            other => return Err(other),
        }
    }

    let trajectories: Vec<Result<Trajectory>> = with_pool(jobs, || {
        (0..runs as u64)
            .into_par_iter()
            .map(|r| controller.closed_loop(x0, settings.steps, stable_hash(settings.seed, index, r)))
            .collect()
    })?;
    let trajectories = trajectories.into_iter().collect::<Result<Vec<_>>>()?;

    let feasible_runs = trajectories.iter().filter(|t| t.all_feasible()).count();
    let mut result = EnvelopeResult {
        label: spec.label(),
        spec,
        vertices: m,
        detroot_w: detroot,
        error: None,
        runs,
        feasible_runs,
        feasibility_rate: feasible_runs as f64 / runs as f64,
        violations: trajectories.iter().map(|t| t.violations).sum(),
        fallback_steps: trajectories.iter().flat_map(|t| &t.steps).filter(|s| s.fallback).count(),
        aborted_runs: trajectories.iter().filter(|t| t.aborted.is_some()).count(),
        lyapunov_violations: trajectories.iter().map(|t| t.lyapunov_violations).sum(),
        max_lyapunov_gap: trajectories.iter().filter_map(|t| t.max_lyapunov_gap).reduce(f64::max),
        snapshots: Vec::new(),
        trajectories,
    };
    result.snapshots = settings
        .snapshots
        .iter()
        .map(|&k| {
            let mut values = result.cumulative_at(k);
            values.sort_by(f64::total_cmp);
            Snapshot {
                k,
                samples: values.len(),
                mean: (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64),
                quantiles: settings
                    .quantiles
                    .iter()
                    .filter_map(|&level| nearest_rank(&values, level).map(|value| QuantileValue { level, value }))
                    .collect(),
                cdf: empirical_cdf(&values),
            }
        })
        .collect();
    Ok(result)
}

fn spectral_radius(a: &Mat) -> f64 {
    a.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Random plant: Schur-stable `A_j` with spectral radius drawn from the
/// configured range, Gaussian `B_j` with unit-norm columns, a symmetric
/// Dirichlet pmf, identity weights and norm-ball constraints.
pub fn random_plant(rng: &mut impl Rng, s: &ScalingSettings) -> Result<(Plant, Vec<f64>)> {
    let (nx, nu, l) = (s.nx, s.nu, s.branches);
    let mut radii = Vec::with_capacity(l);
    let mut a = Vec::with_capacity(l);
    let mut b = Vec::with_capacity(l);
    for _ in 0..l {
        let raw = Mat::from_fn(nx, nx, |_, _| StandardNormal.sample(rng));
        let rho = spectral_radius(&raw).max(1e-12);
        let target = rng.random_range(s.spectral_radius[0]..=s.spectral_radius[1]);
        a.push(raw * (target / rho));
        radii.push(target);
        let mut bj = Mat::from_fn(nx, nu, |_, _| StandardNormal.sample(rng));
        for mut col in bj.column_iter_mut() {
            let n = col.norm().max(1e-12);
            col /= n;
        }
        b.push(bj);
    }
    let gamma = Gamma::new(s.concentration, 1.0).map_err(|e| Error::Config(e.to_string()))?;
    let mut p: Vec<f64> = (0..l).map(|_| gamma.sample(rng).max(1e-9)).collect();
    let total: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= total);
    let model = SystemModel::new(a, b, Pmf::nominal(p)?)?;
    let weights = CostWeights::new(Mat::identity(nx, nx), Mat::identity(nu, nu))?;
    let cons = ConstraintSet::new(Mat::identity(nx, nx), s.x_max, Mat::identity(nu, nu), s.u_max)?;
    Ok((Plant::new(model, weights, cons)?, radii))
}

/// Online solve times against the horizon on a random system.
pub fn run_scaling_study(s: &ScalingSettings, jobs: Option<usize>) -> Result<ExperimentReport> {
    s.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    let spec = EnvelopeSpec::Cvar { alpha: s.alpha };
    let mut found = None;
    for attempt in 1..=s.max_attempts {
        let (plant, radii) = random_plant(&mut rng, s)?;
        let vertices = spec.build(plant.model.pmf())?.vertices().to_vec();
        if let Ok(design) = solve_pe(&plant, &vertices) {
            found = Some((attempt, plant, radii, vertices, design));
            break;
        }
    }
    let Some((attempts, plant, radii, vertices, design)) = found else {
        return Err(Error::SynthesisInfeasible(format!(
            "no random system out of {} admitted a terminal design",
            s.max_attempts
        )));
    };

    // Start inside the terminal set so every horizon is feasible.
    let dir = Vector::from_fn(plant.nx(), |_, _| StandardNormal.sample(&mut rng));
    let scale = (&dir.transpose() * design.ellipsoid.shape_inv() * &dir)[(0, 0)].sqrt();
    let x0 = dir * (0.9 / scale);

    let mut rows = Vec::new();
    for &n in &s.horizons {
        if let Err(e) = ScenarioTree::with_cap(plant.branches(), n, s.node_cap) {
            rows.push(ScalingRow {
                horizon: n,
                control_nodes: None,
                variables: None,
                solves: 0,
                mean_ms: None,
                max_ms: None,
                skipped: Some(e.to_string()),
            });
            continue;
        }
        let controller = MpcController::new(plant.clone(), design.clone(), vertices.clone(), n)?;
        let stats = controller.build_program(&x0)?.stats;
        let trajectories: Vec<Result<Trajectory>> = with_pool(jobs, || {
            (0..s.runs as u64)
                .into_par_iter()
                .map(|r| controller.closed_loop(&x0, s.steps, stable_hash(s.seed, n as u64, r)))
                .collect()
        })?;
        let mut times = Vec::new();
        for t in trajectories {
            times.extend(t?.steps.iter().filter(|st| st.feasible).map(|st| st.solve_ms));
        }
        rows.push(ScalingRow {
            horizon: n,
            control_nodes: Some(stats.control_nodes),
            variables: Some(stats.variables),
            solves: times.len(),
            mean_ms: (!times.is_empty()).then(|| times.iter().sum::<f64>() / times.len() as f64),
            max_ms: times.iter().copied().reduce(f64::max),
            skipped: None,
        });
    }
    Ok(ExperimentReport {
        seed: s.seed,
        envelopes: Vec::new(),
        scaling: rows,
        scaling_system: Some(ScalingSystem {
            attempts,
            spectral_radii: radii,
            pmf: plant.model.pmf().as_slice().to_vec(),
            vertices: vertices.len(),
            x0: x0.iter().copied().collect(),
        }),
    })
}

/// File-name tag of an envelope: the level for CVaR, the label otherwise.
pub fn file_tag(spec: &EnvelopeSpec) -> String {
    match spec {
        EnvelopeSpec::Cvar { alpha } => format!("{alpha}"),
        other => other.label(),
    }
}

#[derive(Serialize)]
struct CdfRow {
    cum_cost: f64,
    empirical_cdf: f64,
}

#[derive(Serialize)]
struct ScalingCsvRow {
    #[serde(rename = "N")]
    horizon: usize,
    nodes: Option<usize>,
    mean_ms: Option<f64>,
    max_ms: Option<f64>,
}

/// Writes `cdf_<tag>_<k>.csv`, `summary.json`, `scaling.csv` (when the
/// report has scaling rows) and, with `per_run`, `runs_<tag>.csv`.
/// Returns the written paths.
pub fn emit_report(report: &ExperimentReport, dir: &Path, per_run: bool) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for env in &report.envelopes {
        let tag = file_tag(&env.spec);
        for snap in &env.snapshots {
            let path = dir.join(format!("cdf_{tag}_{}.csv", snap.k));
            let mut w = csv::Writer::from_path(&path).map_err(csv_err)?;
            if snap.cdf.is_empty() {
                w.write_record(["cum_cost", "empirical_cdf"]).map_err(csv_err)?;
            }
            for &(cum_cost, empirical_cdf) in &snap.cdf {
                w.serialize(CdfRow { cum_cost, empirical_cdf }).map_err(csv_err)?;
            }
            w.flush()?;
            written.push(path);
        }
        if per_run {
            let path = dir.join(format!("runs_{tag}.csv"));
            write_runs(&path, &env.trajectories)?;
            written.push(path);
        }
    }
    let summary = dir.join("summary.json");
    std::fs::write(&summary, serde_json::to_string_pretty(report)?)?;
    written.push(summary);
    if !report.scaling.is_empty() {
        let path = dir.join("scaling.csv");
        let mut w = csv::Writer::from_path(&path).map_err(csv_err)?;
        for row in &report.scaling {
            w.serialize(ScalingCsvRow {
                horizon: row.horizon,
                nodes: row.control_nodes,
                mean_ms: row.mean_ms,
                max_ms: row.max_ms,
            })
            .map_err(csv_err)?;
        }
        w.flush()?;
        written.push(path);
    }
    Ok(written)
}

/// One row per (run, step): `run, k, x…, u…, stage_cost, cum_cost, feasible, solve_ms`.
pub fn write_runs(path: &Path, trajectories: &[Trajectory]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    let first = trajectories.iter().flat_map(|t| t.steps.first()).next();
    let (nx, nu) = first.map_or((0, 0), |s| (s.x.len(), s.u.len()));
    let mut header = vec!["run".to_string(), "k".to_string()];
    header.extend((0..nx).map(|i| format!("x{i}")));
    header.extend((0..nu).map(|i| format!("u{i}")));
    header.extend(["stage_cost", "cum_cost", "feasible", "solve_ms"].map(String::from));
    w.write_record(&header).map_err(csv_err)?;
    for (run, t) in trajectories.iter().enumerate() {
        for s in &t.steps {
            let mut rec = vec![run.to_string(), s.k.to_string()];
            rec.extend(s.x.iter().chain(&s.u).map(|v| v.to_string()));
            rec.extend([
                s.stage_cost.to_string(),
                s.cum_cost.to_string(),
                s.feasible.to_string(),
                format!("{:.3}", s.solve_ms),
            ]);
            w.write_record(&rec).map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Config(format!("csv: {e}"))
}
