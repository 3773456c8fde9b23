//! Experiment configuration: JSON schema, validation and hashing.
//!
//! Matrices are row-major nested arrays; a bare number is read as a 1x1
//! matrix. Every error names the offending field, e.g. `channels.xi_s[0][1]`.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;
use wncs_core::dqn::TrainConfig;
use wncs_core::model::{CostWeights, ModelError, PlantModel};
use wncs_core::network::NetworkModel;
use wncs_core::simulator::WncsSystem;

type Mat = DMatrix<f64>;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{path}: {msg}")]
    Schema { path: String, msg: String },
    #[error("{path}: dimension mismatch: {msg}")]
    DimensionMismatch { path: String, msg: String },
    #[error("{path}: probability {value} outside [0, 1]")]
    ProbabilityRange { path: String, value: f64 },
    #[error("{path}: {source}")]
    Model { path: String, source: ModelError },
    #[error("cannot read {0}: {1}")]
    Io(String, std::io::Error),
}

impl ConfigError {
    pub fn path(&self) -> Option<&str> {
        match self {
            ConfigError::Schema { path, .. }
            | ConfigError::DimensionMismatch { path, .. }
            | ConfigError::ProbabilityRange { path, .. }
            | ConfigError::Model { path, .. } => Some(path),
            _ => None,
        }
    }
}

fn schema(path: &str, msg: impl Into<String>) -> ConfigError {
    ConfigError::Schema {
        path: path.to_string(),
        msg: msg.into(),
    }
}

fn dims(path: &str, msg: impl Into<String>) -> ConfigError {
    ConfigError::DimensionMismatch {
        path: path.to_string(),
        msg: msg.into(),
    }
}

/// Where the channel probabilities come from.
#[derive(Debug, Clone, PartialEq)]
pub enum ChannelSpec {
    Explicit { xi_s: Vec<Vec<f64>>, xi_c: Vec<Vec<f64>> },
    /// Every entry drawn independently from `U(lo, hi)`: all of `xi_s` row
    /// by row, then all of `xi_c`, from a ChaCha8 stream seeded with `seed`.
    Uniform { lo: f64, hi: f64, seed: u64, frequencies: usize },
}

/// Evaluation block.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSettings {
    pub episodes: usize,
    pub t: usize,
    pub policies: Vec<String>,
}

/// Cost-validation block.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationSettings {
    pub patterns: usize,
    pub samples: usize,
    /// Largest register value allowed in generated patterns.
    pub max_age: u32,
    /// Explicit `(β, γ)` scripts; the target slot is the script length.
    pub scripts: Vec<Vec<(bool, bool)>>,
}

/// A validated experiment.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub plants: Vec<PlantModel>,
    pub channels: ChannelSpec,
    pub net: NetworkModel,
    pub weights: Vec<CostWeights>,
    pub theta: f64,
    pub aoi_cap: u32,
    pub seed: u64,
    pub dqn: TrainConfig,
    pub evaluation: EvalSettings,
    pub validation: ValidationSettings,
    /// SHA-256 over the system definition (plants, channels, weights, theta,
    /// cap). Trained models and value tables record it.
    pub hash: String,
}

impl ExperimentConfig {
    pub fn n(&self) -> usize {
        self.plants.len()
    }

    pub fn system(&self) -> WncsSystem {
        WncsSystem::new(
            self.plants.clone(),
            self.weights.clone(),
            self.net.clone(),
            self.aoi_cap,
            self.theta,
        )
        .expect("validated config")
    }

    /// Same experiment with a different AoI cap.
    pub fn system_with_cap(&self, cap: u32) -> WncsSystem {
        WncsSystem::new(self.plants.clone(), self.weights.clone(), self.net.clone(), cap, self.theta)
            .expect("validated config")
    }
}

const TOP_KEYS: &[&str] = &[
    "name",
    "description",
    "plants",
    "channels",
    "weights",
    "theta",
    "aoi_cap",
    "seed",
    "dqn",
    "evaluation",
    "validation",
];
const SYSTEM_KEYS: &[&str] = &["plants", "channels", "weights", "theta", "aoi_cap"];

pub fn load_config(path: &std::path::Path) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io(path.display().to_string(), e))?;
    parse_config(&text)
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let root: Value = serde_json::from_str(text)?;
    let obj = root.as_object().ok_or_else(|| schema("$", "expected an object"))?;
    check_keys(obj, "", TOP_KEYS)?;

    let plants_v = obj.get("plants").ok_or_else(|| schema("plants", "missing"))?;
    let plants_a = plants_v.as_array().ok_or_else(|| schema("plants", "expected an array"))?;
    if plants_a.is_empty() {
        return Err(schema("plants", "at least one plant required"));
    }
    let plants = plants_a
        .iter()
        .enumerate()
        .map(|(i, p)| parse_plant(p, &format!("plants[{i}]")))
        .collect::<Result<Vec<_>, _>>()?;
    let n = plants.len();

    let channels = parse_channels(obj.get("channels").ok_or_else(|| schema("channels", "missing"))?, n)?;
    let net = build_network(&channels, n);
    let weights = parse_weights(obj.get("weights"), &plants)?;
    let theta = opt_f64(obj, "theta", "theta")?.unwrap_or(0.95);
    if !(0.0..1.0).contains(&theta) {
        return Err(schema("theta", format!("{theta} outside [0, 1)")));
    }
    let aoi_cap = opt_u64(obj, "aoi_cap", "aoi_cap")?.unwrap_or(20);
    if !(2..=10_000).contains(&aoi_cap) {
        return Err(schema("aoi_cap", "must lie in 2..=10000"));
    }
    let aoi_cap = aoi_cap as u32;
    let seed = opt_u64(obj, "seed", "seed")?.unwrap_or(0);

    let mut dqn = match obj.get("dqn") {
        None => TrainConfig::default(),
        Some(v) => {
            let o = v.as_object().ok_or_else(|| schema("dqn", "expected an object"))?;
            if o.contains_key("theta") || o.contains_key("cap") {
                return Err(schema("dqn", "theta and cap are set at the top level"));
            }
            serde_json::from_value(v.clone()).map_err(|e| schema("dqn", e.to_string()))?
        }
    };
    dqn.theta = theta;
    dqn.cap = aoi_cap;
    if theta > 0.0 {
        dqn.validate().map_err(|e| schema("dqn", e.to_string()))?;
    }

    let evaluation = parse_eval(obj.get("evaluation"))?;
    let validation = parse_validation(obj.get("validation"))?;

    let mut system = Map::new();
    for k in SYSTEM_KEYS {
        if let Some(v) = obj.get(*k) {
            system.insert(k.to_string(), v.clone());
        }
    }
    let hash = sha256_hex(Value::Object(system).to_string().as_bytes());

    Ok(ExperimentConfig {
        plants,
        channels,
        net,
        weights,
        theta,
        aoi_cap,
        seed,
        dqn,
        evaluation,
        validation,
        hash,
    })
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn check_keys(obj: &Map<String, Value>, prefix: &str, allowed: &[&str]) -> Result<(), ConfigError> {
    for k in obj.keys() {
        if !allowed.contains(&k.as_str()) {
            return Err(schema(&join(prefix, k), "unknown field"));
        }
    }
    Ok(())
}

fn join(prefix: &str, key: &str) -> String {
    if prefix.is_empty() {
        key.to_string()
    } else {
        format!("{prefix}.{key}")
    }
}

fn opt_f64(obj: &Map<String, Value>, key: &str, path: &str) -> Result<Option<f64>, ConfigError> {
    obj.get(key)
        .map(|v| v.as_f64().ok_or_else(|| schema(path, "expected a number")))
        .transpose()
}

fn opt_u64(obj: &Map<String, Value>, key: &str, path: &str) -> Result<Option<u64>, ConfigError> {
    obj.get(key)
        .map(|v| v.as_u64().ok_or_else(|| schema(path, "expected a non-negative integer")))
        .transpose()
}

fn rows(v: &Value, path: &str) -> Result<Vec<Vec<f64>>, ConfigError> {
    if let Some(x) = v.as_f64() {
        return Ok(vec![vec![x]]);
    }
    let outer = v.as_array().ok_or_else(|| schema(path, "expected a matrix"))?;
    if outer.is_empty() {
        return Err(schema(path, "empty matrix"));
    }
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(outer.len());
    for (r, row) in outer.iter().enumerate() {
        let rp = format!("{path}[{r}]");
        let cells = row.as_array().ok_or_else(|| schema(&rp, "expected an array of numbers"))?;
        let vals = cells
            .iter()
            .enumerate()
            .map(|(c, x)| x.as_f64().ok_or_else(|| schema(&format!("{rp}[{c}]"), "expected a number")))
            .collect::<Result<Vec<_>, _>>()?;
        if vals.is_empty() || (r > 0 && vals.len() != out[0].len()) {
            return Err(dims(&rp, "rows must be nonempty and of equal length"));
        }
        out.push(vals);
    }
    Ok(out)
}

fn matrix(v: &Value, path: &str) -> Result<Mat, ConfigError> {
    let r = rows(v, path)?;
    Ok(Mat::from_fn(r.len(), r[0].len(), |i, j| r[i][j]))
}

fn expect_shape(m: &Mat, shape: (usize, usize), path: &str) -> Result<(), ConfigError> {
    if m.shape() != shape {
        return Err(dims(
            path,
            format!("is {}x{}, expected {}x{}", m.nrows(), m.ncols(), shape.0, shape.1),
        ));
    }
    Ok(())
}

fn parse_plant(v: &Value, path: &str) -> Result<PlantModel, ConfigError> {
    let o = v.as_object().ok_or_else(|| schema(path, "expected an object"))?;
    check_keys(o, path, &["A", "B", "C", "Qw", "Qv", "Khat", "Ps"])?;
    let get = |k: &str| {
        let p = format!("{path}.{k}");
        o.get(k).ok_or_else(|| schema(&p, "missing")).and_then(|v| matrix(v, &p))
    };
    let a = get("A")?;
    let n = a.nrows();
    expect_shape(&a, (n, n), &format!("{path}.A"))?;
    let b = get("B")?;
    if b.nrows() != n {
        return Err(dims(&format!("{path}.B"), format!("has {} rows, A is {n}x{n}", b.nrows())));
    }
    let c = get("C")?;
    if c.ncols() != n {
        return Err(dims(&format!("{path}.C"), format!("has {} columns, A is {n}x{n}", c.ncols())));
    }
    let p = c.nrows();
    let qw = get("Qw")?;
    expect_shape(&qw, (n, n), &format!("{path}.Qw"))?;
    let qv = get("Qv")?;
    expect_shape(&qv, (p, p), &format!("{path}.Qv"))?;
    let model = match (o.get("Khat"), o.get("Ps")) {
        (None, None) => PlantModel::new(a, b, c, qw, qv),
        (Some(k), Some(ps)) => {
            let k = matrix(k, &format!("{path}.Khat"))?;
            expect_shape(&k, (n, p), &format!("{path}.Khat"))?;
            let ps = matrix(ps, &format!("{path}.Ps"))?;
            expect_shape(&ps, (n, n), &format!("{path}.Ps"))?;
            PlantModel::with_filter(a, b, c, qw, qv, k, ps)
        }
        _ => return Err(schema(path, "Khat and Ps must be given together")),
    };
    model.map_err(|source| ConfigError::Model {
        path: path.to_string(),
        source,
    })
}

fn probability_matrix(v: &Value, path: &str, n: usize) -> Result<Vec<Vec<f64>>, ConfigError> {
    let r = rows(v, path)?;
    if r[0].len() != n {
        return Err(dims(path, format!("rows have {} entries for {n} plants", r[0].len())));
    }
    for (m, row) in r.iter().enumerate() {
        for (i, &p) in row.iter().enumerate() {
            if !(0.0..=1.0).contains(&p) {
                return Err(ConfigError::ProbabilityRange {
                    path: format!("{path}[{m}][{i}]"),
                    value: p,
                });
            }
        }
    }
    Ok(r)
}

fn parse_channels(v: &Value, n: usize) -> Result<ChannelSpec, ConfigError> {
    let o = v.as_object().ok_or_else(|| schema("channels", "expected an object"))?;
    if o.contains_key("uniform_range") {
        check_keys(o, "channels", &["uniform_range", "seed", "frequencies"])?;
        let r = o["uniform_range"]
            .as_array()
            .filter(|a| a.len() == 2)
            .and_then(|a| Some((a[0].as_f64()?, a[1].as_f64()?)))
            .ok_or_else(|| schema("channels.uniform_range", "expected [lo, hi]"))?;
        for (k, x) in [(0, r.0), (1, r.1)] {
            if !(0.0..=1.0).contains(&x) {
                return Err(ConfigError::ProbabilityRange {
                    path: format!("channels.uniform_range[{k}]"),
                    value: x,
                });
            }
        }
        if r.0 >= r.1 {
            return Err(schema("channels.uniform_range", "lo must be below hi"));
        }
        let seed = opt_u64(o, "seed", "channels.seed")?.unwrap_or(0);
        let frequencies = opt_u64(o, "frequencies", "channels.frequencies")?.unwrap_or(n as u64) as usize;
        if frequencies == 0 {
            return Err(schema("channels.frequencies", "must be positive"));
        }
        return Ok(ChannelSpec::Uniform {
            lo: r.0,
            hi: r.1,
            seed,
            frequencies,
        });
    }
    check_keys(o, "channels", &["xi_s", "xi_c"])?;
    let get = |k: &str| {
        let p = format!("channels.{k}");
        o.get(k)
            .ok_or_else(|| schema(&p, "missing"))
            .and_then(|v| probability_matrix(v, &p, n))
    };
    let xi_s = get("xi_s")?;
    let xi_c = get("xi_c")?;
    if xi_c.len() != xi_s.len() {
        return Err(dims(
            "channels.xi_c",
            format!("has {} frequencies, xi_s has {}", xi_c.len(), xi_s.len()),
        ));
    }
    Ok(ChannelSpec::Explicit { xi_s, xi_c })
}

/// Draws the channel matrices of a sampler spec; `n` plants.
pub fn sample_channels(lo: f64, hi: f64, seed: u64, m: usize, n: usize) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = || -> Vec<Vec<f64>> {
        (0..m)
            .map(|_| (0..n).map(|_| rng.random_range(lo..hi)).collect())
            .collect()
    };
    let xi_s = draw();
    let xi_c = draw();
    (xi_s, xi_c)
}

fn build_network(spec: &ChannelSpec, n: usize) -> NetworkModel {
    let (xi_s, xi_c) = match spec {
        ChannelSpec::Explicit { xi_s, xi_c } => (xi_s.clone(), xi_c.clone()),
        ChannelSpec::Uniform {
            lo,
            hi,
            seed,
            frequencies,
        } => sample_channels(*lo, *hi, *seed, *frequencies, n),
    };
    NetworkModel::new(xi_s, xi_c).expect("validated probabilities")
}

fn parse_weights(v: Option<&Value>, plants: &[PlantModel]) -> Result<Vec<CostWeights>, ConfigError> {
    let identity = || plants.iter().map(|p| CostWeights::identity(p.n(), p.m())).collect();
    let Some(v) = v else {
        return Ok(identity());
    };
    if v.as_str() == Some("identity") {
        return Ok(identity());
    }
    let arr = v
        .as_array()
        .ok_or_else(|| schema("weights", "expected \"identity\" or one {Sx, Su} per plant"))?;
    if arr.len() != plants.len() {
        return Err(dims("weights", format!("{} entries for {} plants", arr.len(), plants.len())));
    }
    arr.iter()
        .zip(plants)
        .enumerate()
        .map(|(i, (w, p))| {
            let path = format!("weights[{i}]");
            let o = w.as_object().ok_or_else(|| schema(&path, "expected an object"))?;
            check_keys(o, &path, &["Sx", "Su"])?;
            let get = |k: &str| {
                let kp = format!("{path}.{k}");
                o.get(k).ok_or_else(|| schema(&kp, "missing")).and_then(|v| matrix(v, &kp))
            };
            let sx = get("Sx")?;
            expect_shape(&sx, (p.n(), p.n()), &format!("{path}.Sx"))?;
            let su = get("Su")?;
            expect_shape(&su, (p.m(), p.m()), &format!("{path}.Su"))?;
            CostWeights::new(sx, su).map_err(|source| ConfigError::Model { path, source })
        })
        .collect()
}

fn parse_eval(v: Option<&Value>) -> Result<EvalSettings, ConfigError> {
    let mut out = EvalSettings {
        episodes: 1000,
        t: 500,
        policies: vec!["random".into(), "roundrobin".into(), "greedy".into()],
    };
    let Some(v) = v else {
        return Ok(out);
    };
    let o = v.as_object().ok_or_else(|| schema("evaluation", "expected an object"))?;
    check_keys(o, "evaluation", &["episodes", "T", "policies"])?;
    if let Some(e) = opt_u64(o, "episodes", "evaluation.episodes")? {
        out.episodes = e as usize;
    }
    if let Some(t) = opt_u64(o, "T", "evaluation.T")? {
        out.t = t as usize;
    }
    if out.episodes == 0 || out.t == 0 {
        return Err(schema("evaluation", "episodes and T must be positive"));
    }
    if let Some(p) = o.get("policies") {
        let arr = p.as_array().ok_or_else(|| schema("evaluation.policies", "expected an array"))?;
        out.policies = arr
            .iter()
            .enumerate()
            .map(|(i, s)| {
                s.as_str()
                    .map(str::to_string)
                    .ok_or_else(|| schema(&format!("evaluation.policies[{i}]"), "expected a string"))
            })
            .collect::<Result<_, _>>()?;
    }
    Ok(out)
}

fn parse_validation(v: Option<&Value>) -> Result<ValidationSettings, ConfigError> {
    let mut out = ValidationSettings {
        patterns: 10,
        samples: 100_000,
        max_age: 4,
        scripts: Vec::new(),
    };
    let Some(v) = v else {
        return Ok(out);
    };
    let o = v.as_object().ok_or_else(|| schema("validation", "expected an object"))?;
    check_keys(o, "validation", &["patterns", "samples", "max_age", "scripts"])?;
    if let Some(x) = opt_u64(o, "patterns", "validation.patterns")? {
        out.patterns = x as usize;
    }
    if let Some(x) = opt_u64(o, "samples", "validation.samples")? {
        if x < 2 {
            return Err(schema("validation.samples", "at least two samples required"));
        }
        out.samples = x as usize;
    }
    if let Some(x) = opt_u64(o, "max_age", "validation.max_age")? {
        out.max_age = x.max(1) as u32;
    }
    if let Some(s) = o.get("scripts") {
        let arr = s.as_array().ok_or_else(|| schema("validation.scripts", "expected an array"))?;
        for (k, script) in arr.iter().enumerate() {
            let path = format!("validation.scripts[{k}]");
            let text = script
                .as_str()
                .ok_or_else(|| schema(&path, "expected a string of slot codes like \"10 01 11\""))?;
            out.scripts.push(parse_script(text).map_err(|m| schema(&path, m))?);
        }
    }
    Ok(out)
}

/// Parses whitespace-separated two-character slot codes `βγ`, e.g. `"10 01"`.
pub fn parse_script(text: &str) -> Result<Vec<(bool, bool)>, String> {
    text.split_whitespace()
        .map(|tok| match tok {
            "00" => Ok((false, false)),
            "10" => Ok((true, false)),
            "01" => Ok((false, true)),
            "11" => Ok((true, true)),
            other => Err(format!("bad slot code `{other}`")),
        })
        .collect()
}
