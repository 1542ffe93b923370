//! Configuration, run manifests, caching and output for the `lab` binary.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::critical::{
    deep_piece_sample, distortion, find_critical_orbit, pinching_check, sample_limit_set, uniformize_critical,
    CriticalOrbit,
};
use crate::dynamics::{dist, HenonLikeMap, OrbitCocycle, Polyline, QuadraticMap};
use crate::error::{LabError, Result};
use crate::odometer::{
    all_blowup_orders, connectedness_scan, extremal_points, odometer_add, order_axiom_violations,
    random_blowup_order, OdometerState, OrderOracle, PieceAtlas,
};
use crate::pesin::{lyapunov_exponents, pliss_density_check, PlissKind, PlissQuery};
use crate::real::Precision;
use crate::renorm1d::{renorm_1d, verify_1d_unicriticality, SuperstableLadder, UnicritOptions, Unimodal};
use crate::renorm2d::{boundary_of_chaos_param, renorm_sequence, slice, BoundaryOfChaosPoint};

/// Formats a log-scale value, writing `-inf` for exact zeros.
pub fn fmt_log(v: f64) -> String {
    fmt_real(v)
}

/// Shortest round-trip text of `v`, in exponent form when very small or large.
pub fn fmt_real(v: f64) -> String {
    if v == f64::NEG_INFINITY {
        "-inf".into()
    } else if v != 0.0 && v.is_finite() && !(1e-4..1e15).contains(&v.abs()) {
        format!("{v:e}")
    } else {
        format!("{v}")
    }
}

/// Serde adapter storing `-inf` as the string `"-inf"`.
pub mod logval {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_str(&super::fmt_log(*v))
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        #[derive(serde::Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(v),
            Raw::Str(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// JSON number, or `"-inf"`/`"inf"`/`"NaN"` for non-finite values.
fn num(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        json!(fmt_log(v))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Ladder,
    Boundary,
    Tower,
    Lyapunov,
    Pliss,
    Normalform,
    Pinch,
    Order,
    Report,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Kind {
    Int,
    Real,
    Str,
}

struct Key {
    name: &'static str,
    kind: Kind,
    default: &'static str,
}

const fn key(name: &'static str, kind: Kind, default: &'static str) -> Key {
    Key { name, kind, default }
}

// shared by the commands that locate the critical orbit of F_{a_*(b), b}
const ORBIT_KEYS: [Key; 5] = [
    key("b", Kind::Real, "0.1"),
    key("max_level", Kind::Int, "8"),
    key("transient", Kind::Int, "10000"),
    key("length", Kind::Int, "100000"),
    key("horizon", Kind::Int, "30"),
];

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Ladder => "ladder",
            Command::Boundary => "boundary",
            Command::Tower => "tower",
            Command::Lyapunov => "lyapunov",
            Command::Pliss => "pliss",
            Command::Normalform => "normalform",
            Command::Pinch => "pinch",
            Command::Order => "order",
            Command::Report => "report",
        }
    }

    fn keys(self) -> Vec<Key> {
        use Kind::*;
        let own = match self {
            Command::Ladder => vec![
                key("levels", Int, "8"),
                key("t", Real, "0.05"),
                key("epsilon", Real, "0.1"),
                key("N", Int, "1000"),
                key("unicrit_sample", Int, "20000"),
            ],
            Command::Boundary => vec![key("b", Real, "0.1"), key("max_level", Int, "8")],
            Command::Tower => vec![key("b", Real, "0.2"), key("N", Int, "4"), key("max_level", Int, "8")],
            Command::Lyapunov => return ORBIT_KEYS.into_iter().filter(|k| k.name != "horizon").collect(),
            Command::Pliss => vec![
                key("trials", Int, "10000"),
                key("N", Int, "200"),
                key("alpha1", Int, "0"),
                key("alpha2", Int, "100"),
                key("alpha3", Int, "150"),
                key("max_value", Int, "600"),
                key("epsilon", Int, "1"),
                key("exhaustive_len", Int, "14"),
            ],
            Command::Normalform => vec![key("degree", Int, "4"), key("radius", Real, "0.1")],
            Command::Pinch => vec![
                key("degree", Int, "4"),
                key("radius", Real, "0.1"),
                key("omega", Real, "1.5"),
                key("depth", Int, "4"),
                key("count", Int, "10000"),
                key("segments", Int, "100"),
                key("segment_length", Real, "0.001"),
                key("iterates", Int, "64"),
                key("curvature_bound", Real, "10"),
            ],
            Command::Order => vec![
                key("atlas_log2", Int, "14"),
                key("depth", Int, "8"),
                key("points", Int, "10000"),
                key("max_n", Int, "8"),
                key("odometer_states", Int, "10000"),
                key("blowup_exhaustive", Int, "6"),
                key("blowup_trees", Int, "20"),
                key("blowup_leaves", Int, "200"),
            ],
            Command::Report => vec![key("inputs", Str, "")],
        };
        let orbit = matches!(self, Command::Normalform | Command::Pinch | Command::Order);
        let mut keys: Vec<Key> = if orbit { ORBIT_KEYS.into_iter().collect() } else { Vec::new() };
        if self == Command::Pinch {
            // a depth-4 piece holds 1/16 of the orbit; keep at least 10^4 points near c0
            keys.iter_mut().filter(|k| k.name == "length").for_each(|k| k.default = "200000");
        }
        keys.extend(own);
        keys
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Int(i64),
    Real(f64),
    Str(String),
}

impl ParamValue {
    fn canonical(&self) -> String {
        match self {
            ParamValue::Int(v) => v.to_string(),
            ParamValue::Real(v) => format!("{v:?}"),
            ParamValue::Str(s) => s.clone(),
        }
    }
}

fn parse_value(name: &str, kind: Kind, raw: &str) -> Result<ParamValue> {
    let bad = || LabError::Config(format!("{name}: cannot read {raw:?} as {kind:?}"));
    match kind {
        Kind::Int => match raw.parse::<i64>() {
            Ok(v) => Ok(ParamValue::Int(v)),
            // accept 1e4 and the like when exact
            Err(_) => {
                let v: f64 = raw.parse().map_err(|_| bad())?;
                if v.fract() == 0.0 && v.abs() < 9.0e15 {
                    Ok(ParamValue::Int(v as i64))
                } else {
                    Err(bad())
                }
            }
        },
        Kind::Real => raw.parse::<f64>().ok().filter(|v| v.is_finite()).map(ParamValue::Real).ok_or_else(bad),
        Kind::Str => Ok(ParamValue::Str(raw.to_string())),
    }
}

/// One command's parameters, read from `key = value` lines.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub command: Command,
    /// Every key of the command, defaults filled in.
    pub params: BTreeMap<String, ParamValue>,
    pub precision: Precision,
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Root of `<command>/<hash>.json` cache entries.
    pub cache_dir: PathBuf,
}

impl ExperimentConfig {
    /// Defaults for `command`.
    pub fn new(command: Command) -> Self {
        let params = command
            .keys()
            .into_iter()
            .map(|k| (k.name.to_string(), parse_value(k.name, k.kind, k.default).expect("valid default")))
            .collect();
        ExperimentConfig {
            command,
            params,
            precision: Precision::Standard,
            seed: 0,
            output_dir: PathBuf::from("out").join(command.name()),
            cache_dir: PathBuf::from("cache"),
        }
    }

    /// Sets one key from its text form; unknown keys are rejected.
    pub fn set(&mut self, name: &str, raw: &str) -> Result<&mut Self> {
        match name {
            "command" => {
                if raw != self.command.name() {
                    return Err(LabError::Config(format!("config is for {raw:?}, not {}", self.command.name())));
                }
            }
            "seed" => self.seed = raw.parse().map_err(|_| LabError::Config(format!("seed: {raw:?}")))?,
            "precision" => self.precision = parse_precision(raw)?,
            "output_dir" => self.output_dir = PathBuf::from(raw),
            "cache_dir" => self.cache_dir = PathBuf::from(raw),
            _ => {
                let k = self.command.keys().into_iter().find(|k| k.name == name).ok_or_else(|| {
                    LabError::Config(format!("unknown key {name:?} for {}", self.command.name()))
                })?;
                self.params.insert(name.to_string(), parse_value(name, k.kind, raw)?);
            }
        }
        Ok(self)
    }

    /// Reads `key = value` lines; `#` starts a comment and repeated keys are errors.
    pub fn parse(command: Command, text: &str) -> Result<Self> {
        let mut cfg = Self::new(command);
        let mut seen = std::collections::BTreeSet::new();
        for (no, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| LabError::Config(format!("line {}: expected key = value", no + 1)))?;
            let (k, v) = (k.trim(), v.trim().trim_matches('"'));
            if !seen.insert(k.to_string()) {
                return Err(LabError::Config(format!("line {}: {k:?} given twice", no + 1)));
            }
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }

    pub fn from_file(command: Command, path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| LabError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(command, &text)
    }

    /// Text that the hash is taken over: command, precision, seed and all parameters.
    pub fn canonical(&self) -> String {
        let mut s = format!("command={}\nprecision={}\nseed={}\n", self.command.name(), precision_name(self.precision), self.seed);
        for (k, v) in &self.params {
            let _ = writeln!(s, "{k}={}", v.canonical());
        }
        s
    }

    pub fn hash(&self) -> String {
        sha256_hex(self.canonical().as_bytes())
    }

    fn get(&self, name: &str) -> Result<&ParamValue> {
        self.params.get(name).ok_or_else(|| LabError::Config(format!("{name} is not a key of {}", self.command.name())))
    }

    pub fn real(&self, name: &str) -> Result<f64> {
        match self.get(name)? {
            ParamValue::Real(v) => Ok(*v),
            ParamValue::Int(v) => Ok(*v as f64),
            ParamValue::Str(_) => Err(LabError::Config(format!("{name} is not numeric"))),
        }
    }

    pub fn int(&self, name: &str) -> Result<i64> {
        match self.get(name)? {
            ParamValue::Int(v) => Ok(*v),
            _ => Err(LabError::Config(format!("{name} is not an integer"))),
        }
    }

    /// Non-negative integer parameter.
    pub fn count(&self, name: &str) -> Result<usize> {
        usize::try_from(self.int(name)?).map_err(|_| LabError::Config(format!("{name} must be non-negative")))
    }

    pub fn string(&self, name: &str) -> Result<String> {
        match self.get(name)? {
            ParamValue::Str(s) => Ok(s.clone()),
            v => Ok(v.canonical()),
        }
    }
}

pub fn parse_precision(raw: &str) -> Result<Precision> {
    raw.parse().map_err(LabError::Config)
}

fn precision_name(p: Precision) -> &'static str {
    match p {
        Precision::Standard => "standard",
        Precision::Compensated => "compensated",
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// A named check made by a command, optionally tied to an acceptance criterion.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Assertion {
    pub name: String,
    pub criterion: Option<u32>,
    pub pass: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: Command,
    pub config_hash: String,
    pub version: String,
    pub precision: Precision,
    pub seed: u64,
    pub wall_time_s: f64,
    pub outputs: Vec<String>,
    pub metrics: BTreeMap<String, Value>,
    pub assertions: Vec<Assertion>,
    pub passed: bool,
}

impl RunManifest {
    /// `0` when every assertion passed, `1` otherwise.
    pub fn exit_code(&self) -> i32 {
        if self.passed {
            0
        } else {
            1
        }
    }
}

/// Files, metrics and checks gathered by a pipeline before anything is written.
#[derive(Default)]
struct Outputs {
    files: Vec<(String, Vec<u8>)>,
    metrics: BTreeMap<String, Value>,
    assertions: Vec<Assertion>,
}

impl Outputs {
    fn metric(&mut self, name: &str, v: Value) {
        self.metrics.insert(name.to_string(), v);
    }

    fn check(&mut self, name: &str, criterion: Option<u32>, pass: bool, detail: String) {
        self.assertions.push(Assertion { name: name.into(), criterion, pass, detail });
    }

    fn csv(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header)?;
        for r in rows {
            w.write_record(r)?;
        }
        let bytes = w.into_inner().map_err(|e| LabError::Io(e.to_string()))?;
        self.files.push((name.into(), bytes));
        Ok(())
    }

    fn json(&mut self, name: &str, v: &impl Serialize) -> Result<()> {
        self.files.push((name.into(), serde_json::to_vec_pretty(v)?));
        Ok(())
    }
}

/// Runs one command, writes its files and `manifest.json` into the output directory.
pub fn run(cfg: &ExperimentConfig) -> Result<RunManifest> {
    let start = Instant::now();
    let out = match cfg.command {
        Command::Ladder => run_ladder(cfg),
        Command::Boundary => run_boundary(cfg),
        Command::Tower => run_tower(cfg),
        Command::Lyapunov => run_lyapunov(cfg),
        Command::Pliss => run_pliss(cfg),
        Command::Normalform => run_normalform(cfg),
        Command::Pinch => run_pinch(cfg),
        Command::Order => run_order(cfg),
        Command::Report => run_report(cfg),
    }?;
    fs::create_dir_all(&cfg.output_dir)?;
    let mut outputs = Vec::new();
    for (name, bytes) in &out.files {
        fs::write(cfg.output_dir.join(name), bytes)?;
        outputs.push(name.clone());
    }
    fs::write(cfg.output_dir.join("config.txt"), cfg.canonical())?;
    outputs.push("config.txt".into());
    let manifest = RunManifest {
        command: cfg.command,
        config_hash: cfg.hash(),
        version: env!("CARGO_PKG_VERSION").into(),
        precision: cfg.precision,
        seed: cfg.seed,
        wall_time_s: start.elapsed().as_secs_f64(),
        outputs,
        passed: out.assertions.iter().all(|a| a.pass),
        metrics: out.metrics,
        assertions: out.assertions,
    };
    fs::write(cfg.output_dir.join("manifest.json"), serde_json::to_vec_pretty(&manifest)?)?;
    Ok(manifest)
}

/// Machine-readable form of an error, as printed by the binary.
pub fn error_payload(e: &LabError) -> Value {
    json!({ "error": e.kind(), "message": e.to_string(), "exit_code": e.exit_code() })
}

// ---------------------------------------------------------------- cache

/// Lock file held while a cache entry is written; removed on drop.
struct CacheLock(PathBuf);

impl CacheLock {
    fn acquire(path: PathBuf) -> Result<Self> {
        let deadline = Instant::now() + Duration::from_secs(60);
        loop {
            match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
                Ok(_) => return Ok(CacheLock(path)),
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists && Instant::now() < deadline => {
                    std::thread::sleep(Duration::from_millis(50));
                }
                Err(e) => return Err(LabError::Io(format!("{}: {e}", path.display()))),
            }
        }
    }
}

impl Drop for CacheLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

/// Path of the boundary cache entry for `(b, max_level, precision)`.
pub fn boundary_cache_path(cache_dir: &Path, b: f64, max_level: usize, precision: Precision) -> PathBuf {
    let mut cfg = ExperimentConfig::new(Command::Boundary);
    cfg.precision = precision;
    cfg.params.insert("b".into(), ParamValue::Real(b));
    cfg.params.insert("max_level".into(), ParamValue::Int(max_level as i64));
    cache_dir.join("boundary").join(format!("{}.json", cfg.hash()))
}

/// `boundary_of_chaos_param` through the on-disk cache; the flag reports a hit.
pub fn cached_boundary(cache_dir: &Path, b: f64, max_level: usize, precision: Precision) -> Result<(BoundaryOfChaosPoint, bool)> {
    let path = boundary_cache_path(cache_dir, b, max_level, precision);
    let read = |p: &Path| -> Option<BoundaryOfChaosPoint> {
        let bytes = fs::read(p).ok()?;
        serde_json::from_slice(&bytes).ok()
    };
    if let Some(v) = read(&path) {
        return Ok((v, true));
    }
    let dir = path.parent().expect("cache path has a parent");
    fs::create_dir_all(dir)?;
    let _lock = CacheLock::acquire(path.with_extension("lock"))?;
    // another writer may have finished while we waited
    if let Some(v) = read(&path) {
        return Ok((v, true));
    }
    let v = boundary_of_chaos_param(b, max_level, precision)?;
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, serde_json::to_vec_pretty(&v)?)?;
    fs::rename(&tmp, &path)?;
    Ok((v, false))
}

fn base_map(cfg: &ExperimentConfig) -> Result<(HenonLikeMap, BoundaryOfChaosPoint, bool)> {
    let b = cfg.real("b")?;
    let (bp, hit) = cached_boundary(&cfg.cache_dir, b, cfg.count("max_level")?, cfg.precision)?;
    Ok((HenonLikeMap::henon(bp.a_star, b), bp, hit))
}

// ---------------------------------------------------------------- pipelines

fn run_ladder(cfg: &ExperimentConfig) -> Result<Outputs> {
    let levels = cfg.count("levels")?;
    let mut out = Outputs::default();
    let ladder = SuperstableLadder::build(levels, cfg.precision)?;
    let mut buf = Vec::new();
    ladder.write_csv(&mut buf)?;
    out.files.push(("ladder.csv".into(), buf));
    let full = levels >= 8;
    let worst = ladder.entries.iter().map(|e| e.residual).fold(0.0, f64::max);
    out.check("residual_below_1e-12", full.then_some(1), worst < 1e-12, format!("max residual {worst:e}"));
    let ratios: Vec<(usize, f64)> =
        (2..=levels).map(|n| ladder.feigenbaum_ratio(n).map(|r| (n, r))).collect::<Result<_>>()?;
    out.csv(
        "ratios.csv",
        &["level", "feigenbaum_ratio"],
        &ratios.iter().map(|(n, r)| vec![n.to_string(), fmt_real(*r)]).collect::<Vec<_>>(),
    )?;
    out.metric("a", json!(ladder.entries.iter().map(|e| e.a).collect::<Vec<_>>()));
    out.metric("feigenbaum_ratios", json!(ratios));
    out.metric("max_residual", num(worst));
    if levels >= 6 {
        let (r5, r6) = (ladder.feigenbaum_ratio(5)?, ladder.feigenbaum_ratio(6)?);
        let inside = |r: f64| r > 4.6 && r < 4.75;
        out.check(
            "ratios_5_6",
            full.then_some(1),
            (r5 - r6).abs() < 0.05 && inside(r5) && inside(r6),
            format!("ratio 5 = {r5}, ratio 6 = {r6}"),
        );
    }
    if levels >= 3 {
        let a = ladder.accumulation();
        out.metric("accumulation", num(a));
        let (t, eps, n, sample) = (cfg.real("t")?, cfg.real("epsilon")?, cfg.count("N")?, cfg.count("unicrit_sample")?);
        let opts = UnicritOptions { sample, shrink: None };
        let base = verify_1d_unicriticality(a, t, eps, n, opts)?;
        let rerun = verify_1d_unicriticality(a, t, eps, n, UnicritOptions { sample: 2 * sample, ..opts })?;
        let wider = verify_1d_unicriticality(a, 2.0 * t, eps, n, opts)?;
        out.csv(
            "unicrit.csv",
            &["t", "epsilon", "N", "sample", "L_min", "admissible"],
            &[&base, &rerun, &wider]
                .iter()
                .map(|r| {
                    vec![
                        fmt_real(r.t),
                        fmt_real(r.epsilon),
                        r.n.to_string(),
                        r.sample.to_string(),
                        fmt_real(r.l_min),
                        r.admissible.to_string(),
                    ]
                })
                .collect::<Vec<_>>(),
        )?;
        out.metric("unicrit_l_min", num(base.l_min));
        let tag = (levels >= 8).then_some(11);
        out.check("unicrit_finite", tag, base.l_min.is_finite(), format!("L_min = {}", base.l_min));
        let stable = (base.l_min - rerun.l_min).abs() <= 5e-4 * base.l_min.abs();
        out.check("unicrit_stable", tag, stable, format!("rerun with {} points: {}", 2 * sample, rerun.l_min));
        out.check(
            "unicrit_monotone_in_t",
            tag,
            wider.l_min <= base.l_min,
            format!("L_min({}) = {}", 2.0 * t, wider.l_min),
        );
    }
    Ok(out)
}

fn run_boundary(cfg: &ExperimentConfig) -> Result<Outputs> {
    let b = cfg.real("b")?;
    let max_level = cfg.count("max_level")?;
    let (bp, hit) = cached_boundary(&cfg.cache_dir, b, max_level, cfg.precision)?;
    let mut out = Outputs::default();
    out.csv(
        "boundary.csv",
        &["level", "a_n", "x", "y"],
        &bp.ladder
            .iter()
            .map(|c| vec![c.level.to_string(), fmt_real(c.a), fmt_real(c.point[0]), fmt_real(c.point[1])])
            .collect::<Vec<_>>(),
    )?;
    out.metric("a_star", num(bp.a_star));
    out.metric("residual", num(bp.residual));
    out.metric("cache_hit", json!(hit));
    out.check("cycle_residual", None, bp.residual < 1e-10, format!("residual {:e}", bp.residual));
    if b == 0.0 {
        let a1 = SuperstableLadder::build(max_level, cfg.precision)?.accumulation();
        let d = (bp.a_star - a1).abs();
        out.check("matches_1d_accumulation", Some(2), d < 1e-8, format!("|a_*(0) - a_*^1D| = {d:e}"));
    }
    Ok(out)
}

fn run_tower(cfg: &ExperimentConfig) -> Result<Outputs> {
    let b = cfg.real("b")?;
    let depth = cfg.count("N")?;
    let (f, bp, _) = base_map(cfg)?;
    let tower = renorm_sequence(f, depth, cfg.precision)?;
    let mut out = Outputs::default();
    out.csv(
        "tower.csv",
        &["n", "R_n", "log_delta_n (ln)", "domain_scale", "shape_residual", "det_law_rel_error", "dist_to_1d"],
        &tower
            .levels
            .iter()
            .map(|l| {
                vec![
                    l.n.to_string(),
                    l.period.to_string(),
                    fmt_log(l.log_delta_n),
                    fmt_real(l.domain_scale),
                    fmt_real(l.residuals.shape),
                    fmt_real(l.residuals.det_law),
                    fmt_real(l.dist_to_1d),
                ]
            })
            .collect::<Vec<_>>(),
    )?;
    let logs: Vec<f64> = tower.levels.iter().map(|l| l.log_delta_n).collect();
    out.metric("a_star", num(bp.a_star));
    out.metric("log_delta_n", Value::Array(logs.iter().map(|&v| num(v)).collect()));
    if b == 0.0 {
        out.check(
            "degenerate_thinness",
            None,
            logs.iter().all(|&v| v == f64::NEG_INFINITY),
            "every level of the b = 0 tower has delta_n = 0".into(),
        );
        let f1 = QuadraticMap::new(bp.a_star);
        let mut worst: f64 = 0.0;
        for n in 1..=depth {
            let g = renorm_1d(&f1, n)?;
            for i in 0..=64 {
                let x = -1.0 + i as f64 / 32.0;
                worst = worst.max((slice(&tower, n, x)? - g.eval(x)).abs());
            }
        }
        out.metric("slice_vs_1d", num(worst));
        out.check("slice_matches_1d", Some(2), worst < 1e-8, format!("max |slice - 1D| = {worst:e}"));
    } else {
        let tag = (depth >= 4).then_some(3);
        let ratios: Vec<f64> = logs.windows(2).map(|w| w[1] / w[0]).collect();
        out.metric("thinness_ratios", json!(ratios));
        out.check(
            "thinness_ratio",
            tag,
            ratios.iter().all(|r| *r > 1.7 && *r < 2.3),
            format!("log delta ratios {ratios:?}"),
        );
        let bound_ok = tower
            .levels
            .iter()
            .filter(|l| l.n >= 2)
            .all(|l| l.log_delta_n < 0.9 * (1u64 << l.n) as f64 * b.ln());
        out.check("super_exponential_bound", tag, bound_ok, "delta_n < b^(0.9 R_n) for n >= 2".into());
        let det = tower.levels.iter().map(|l| l.residuals.det_law).fold(0.0, f64::max);
        out.check("determinant_law", tag, det < 1e-6, format!("max relative log error {det:e}"));
    }
    Ok(out)
}

/// Orbit sample and critical orbit of `F_{a_*(b), b}`.
fn critical_setup(cfg: &ExperimentConfig) -> Result<(HenonLikeMap, OrbitCocycle, CriticalOrbit)> {
    let (f, _, _) = base_map(cfg)?;
    let s = sample_limit_set(&f, [0.0, 0.0], cfg.count("transient")?, cfg.count("length")?)?;
    let co = find_critical_orbit(&f, &s, cfg.count("horizon")?)?;
    Ok((f, s, co))
}

fn run_lyapunov(cfg: &ExperimentConfig) -> Result<Outputs> {
    let b = cfg.real("b")?;
    let (f, _, _) = base_map(cfg)?;
    let s = sample_limit_set(&f, [0.0, 0.0], cfg.count("transient")?, cfg.count("length")?)?;
    let (c1, c2) = lyapunov_exponents(&s)?;
    let mut out = Outputs::default();
    out.csv(
        "lyapunov.csv",
        &["chi1 (ln)", "chi2 (ln)", "log_b (ln)"],
        &[vec![fmt_real(c1), fmt_log(c2), fmt_log(b.ln())]],
    )?;
    out.metric("chi1", num(c1));
    out.metric("chi2", num(c2));
    let tag = (b > 0.0).then_some(4);
    out.check("chi1_zero", tag, c1.abs() < 0.05, format!("chi1 = {c1}"));
    if b > 0.0 {
        let d = (c1 + c2 - b.ln()).abs();
        out.check("sum_is_log_b", tag, d < 1e-10, format!("|chi1 + chi2 - log b| = {d:e}"));
    }
    Ok(out)
}

/// Values uniform in `(alpha1, max_value]`, clamped so every prefix average stays at
/// most `alpha2`.
pub fn random_pliss_sequence(rng: &mut impl Rng, n: usize, alpha1: i64, alpha2: i64, max_value: i64) -> Vec<i64> {
    let mut sum = 0i64;
    (1..=n as i64)
        .map(|i| {
            let v = rng.gen_range(alpha1 + 1..=max_value.max(alpha1 + 1)).min(i * alpha2 - sum);
            sum += v;
            v
        })
        .collect()
}

const PLISS_KINDS: [PlissKind; 3] = [PlissKind::Preserving, PlissKind::Reversing, PlissKind::Absolute];

fn run_pliss(cfg: &ExperimentConfig) -> Result<Outputs> {
    let (a1, a2, a3) = (cfg.int("alpha1")?, cfg.int("alpha2")?, cfg.int("alpha3")?);
    let (trials, n, max_value) = (cfg.count("trials")?, cfg.count("N")?, cfg.int("max_value")?);
    let low = a1 + cfg.int("epsilon")?;
    if !(low > a1 && low < a2) {
        return Err(LabError::Config("need alpha1 < alpha1 + epsilon < alpha2".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Outputs::default();
    let mut rows = Vec::new();
    let mut violations = [0usize; 3];
    let mut margins = [f64::INFINITY; 3];
    for trial in 0..trials {
        let q = PlissQuery::new(random_pliss_sequence(&mut rng, n, a1, a2, max_value), a1, a2, a3)?;
        let mut row = vec![trial.to_string()];
        for (k, kind) in PLISS_KINDS.into_iter().enumerate() {
            let c = pliss_density_check(&q, kind)?;
            violations[k] += usize::from(!c.holds);
            margins[k] = margins[k].min(c.margin);
            row.extend([c.moments.to_string(), fmt_real(c.margin), u8::from(c.holds).to_string()]);
        }
        rows.push(row);
    }
    out.csv(
        "pliss.csv",
        &[
            "trial",
            "preserving_moments",
            "preserving_margin",
            "preserving_holds",
            "reversing_moments",
            "reversing_margin",
            "reversing_holds",
            "absolute_moments",
            "absolute_margin",
            "absolute_holds",
        ],
        &rows,
    )?;
    // every {alpha1 + epsilon, alpha2}-valued sequence
    let mut ex_rows = Vec::new();
    let mut ex_violations = 0usize;
    for len in 1..=cfg.count("exhaustive_len")? {
        let mut bad = 0usize;
        for mask in 0u64..(1u64 << len) {
            let seq = (0..len).map(|i| if mask >> i & 1 == 1 { a2 } else { low }).collect();
            let q = PlissQuery::new(seq, a1, a2, a3)?;
            for kind in PLISS_KINDS {
                bad += usize::from(!pliss_density_check(&q, kind)?.holds);
            }
        }
        ex_violations += bad;
        ex_rows.push(vec![len.to_string(), (1u64 << len).to_string(), bad.to_string()]);
    }
    out.csv("pliss_exhaustive.csv", &["length", "sequences", "violations"], &ex_rows)?;
    out.metric("violations", json!(violations));
    out.metric("min_margins", Value::Array(margins.iter().map(|&m| num(m)).collect()));
    out.metric("exhaustive_violations", json!(ex_violations));
    let tag = Some(5);
    out.check("random_sequences", tag, violations == [0; 3], format!("violations {violations:?} over {trials} sequences"));
    out.check("exhaustive_sequences", tag, ex_violations == 0, format!("{ex_violations} violations"));
    Ok(out)
}

fn run_normalform(cfg: &ExperimentConfig) -> Result<Outputs> {
    let b = cfg.real("b")?;
    let (degree, radius) = (cfg.count("degree")?, cfg.real("radius")?);
    let (f, s, co) = critical_setup(cfg)?;
    let fit = uniformize_critical(&f, &co, degree, radius)?;
    let half = uniformize_critical(&f, &co, degree, radius / 2.0)?;
    let (_, chi2) = lyapunov_exponents(&s)?;
    let mut out = Outputs::default();
    out.csv(
        "normalform.csv",
        &["radius", "residual", "lambda", "cond"],
        &[&fit, &half]
            .iter()
            .map(|r| vec![fmt_real(r.radius), fmt_real(r.residual), fmt_real(r.lambda), fmt_real(r.cond)])
            .collect::<Vec<_>>(),
    )?;
    out.json("charts.json", &fit)?;
    out.json("critical_orbit.json", &json!({ "c0": co.c0, "c1": co.c1, "min_angle": co.min_angle, "tangency": co.tangency }))?;
    let factor = half.residual / fit.residual;
    out.metric("residual", num(fit.residual));
    out.metric("contraction_factor", num(factor));
    out.metric("lambda", num(fit.lambda));
    out.metric("exp_chi2", num(chi2.exp()));
    let tag = (b > 0.0 && degree == 4).then_some(6);
    out.check("residual", tag, fit.residual < 1e-3, format!("residual {:e} at radius {radius}", fit.residual));
    // a fit already at roundoff cannot contract further
    let floor = half.residual < 1e-13;
    out.check("contraction", tag, factor < 0.5 || floor, format!("residual ratio under halving {factor}"));
    if b > 0.0 {
        let r = fit.lambda.abs() / chi2.exp();
        out.check("lambda_vs_chi2", tag, r > 0.5 && r < 2.0, format!("lambda / exp(chi2) = {r}"));
    }
    Ok(out)
}

fn run_pinch(cfg: &ExperimentConfig) -> Result<Outputs> {
    let (f, s, co) = critical_setup(cfg)?;
    let fit = uniformize_critical(&f, &co, cfg.count("degree")?, cfg.real("radius")?)?;
    let depth = u32::try_from(cfg.count("depth")?).map_err(|_| LabError::Config("depth too large".into()))?;
    let sample = deep_piece_sample(&co.orbit, co.zero_index, depth, cfg.count("count")?);
    let omega = cfg.real("omega")?;
    let rep = pinching_check(&fit, &sample, omega, None)?;
    let mut out = Outputs::default();
    out.csv(
        "pinch.csv",
        &["x_chart", "y_chart", "in_tunnel"],
        &rep.points.iter().map(|p| vec![fmt_real(p.0), fmt_real(p.1), u8::from(p.2).to_string()]).collect::<Vec<_>>(),
    )?;
    out.metric("pinch_fraction", num(rep.fraction));
    out.metric("omega_hat", num(rep.omega_hat));
    out.metric("pinch_points", json!(rep.in_disk));
    let tag = (omega == 1.5).then_some(7);
    out.check("pinch_fraction", tag, rep.fraction >= 0.99, format!("{} of {} in the tunnel", rep.inside, rep.in_disk));
    out.check("envelope_exponent", tag, rep.omega_hat > 1.0, format!("omega_hat = {}", rep.omega_hat));

    // distortion along short horizontal segments through sample points
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (len, iterates, bound) = (cfg.real("segment_length")?, cfg.count("iterates")?, cfg.real("curvature_bound")?);
    let pts = s.points();
    let mut rows = Vec::new();
    let (mut worst_ratio, mut worst_refine): (f64, f64) = (0.0, 0.0);
    for k in 0..cfg.count("segments")? {
        let p = pts[rng.gen_range(0..pts.len())];
        let g = Polyline::segment([p[0] - len / 2.0, p[1]], [p[0] + len / 2.0, p[1]], 32);
        let horizon = distortion(&f, &g, iterates)?.bounded_horizon(bound).max(1);
        let r = distortion(&f, &g, horizon)?;
        let fine = distortion(&f, &g.refined(), horizon)?;
        let ratio = r.log_distortion / r.length_sum;
        let refine = (fine.distortion / r.distortion - 1.0).abs();
        worst_ratio = worst_ratio.max(ratio);
        worst_refine = worst_refine.max(refine);
        rows.push(vec![
            k.to_string(),
            fmt_real(p[0]),
            fmt_real(p[1]),
            horizon.to_string(),
            fmt_real(r.log_distortion),
            fmt_real(r.length_sum),
            fmt_real(refine),
        ]);
    }
    out.csv(
        "denjoy.csv",
        &["segment", "x", "y", "iterates", "log_distortion (ln)", "length_sum", "refinement_change"],
        &rows,
    )?;
    out.metric("denjoy_worst_ratio", num(worst_ratio));
    out.metric("denjoy_refinement_change", num(worst_refine));
    let tag = (cfg.real("b")? > 0.0).then_some(12);
    out.check("denjoy_bound", tag, worst_ratio <= 10.0, format!("max log D / sum |F^i gamma| = {worst_ratio}"));
    out.check("denjoy_refinement", tag, worst_refine < 0.01, format!("max relative change {worst_refine:e}"));
    Ok(out)
}

/// Mixed-radix value of little-endian digits, computed independently of
/// [`OdometerState`].
fn horner(digits: &[u32], radices: &[u32]) -> u128 {
    digits.iter().zip(radices).rev().fold(0u128, |v, (&d, &r)| v * r as u128 + d as u128)
}

fn run_order(cfg: &ExperimentConfig) -> Result<Outputs> {
    let b = cfg.real("b")?;
    let (f, _, co) = critical_setup(cfg)?;
    let atlas_len = 1usize << cfg.count("atlas_log2")?;
    let points = cfg.count("points")?;
    let depth = cfg.count("depth")? as u32;
    let stride = 7;
    let fwd = f.orbit_points(co.c1, atlas_len + stride * points + 2)?;
    let atlas = PieceAtlas::new(fwd[..atlas_len].to_vec());
    let mut out = Outputs::default();

    let mut bad = 0usize;
    for m in 0..points {
        let p = fwd[atlas_len + stride * m];
        let sp = atlas.project_pi(p, depth)?;
        let sq = atlas.project_pi(f.eval(p)?, depth)?;
        bad += usize::from(odometer_add(&sp) != sq);
    }
    out.metric("semiconjugacy_violations", json!(bad));
    let full_depth = depth == 8 && points >= 10_000;
    out.check("semiconjugacy", full_depth.then_some(8), bad == 0, format!("{bad} of {points} points"));

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let states = cfg.count("odometer_states")?;
    let mut mismatches = 0usize;
    for _ in 0..states {
        let d = rng.gen_range(1..=12);
        let radices: Vec<u32> = (0..d).map(|_| rng.gen_range(2..=6)).collect();
        let digits: Vec<u32> = radices.iter().map(|&r| rng.gen_range(0..r)).collect();
        let modulus: u128 = radices.iter().map(|&r| r as u128).product();
        let next = odometer_add(&OdometerState::new(digits.clone(), radices.clone())?);
        mismatches += usize::from(horner(&next.digits, &radices) != (horner(&digits, &radices) + 1) % modulus);
    }
    out.check(
        "adding_machine",
        (states >= 10_000).then_some(8),
        mismatches == 0,
        format!("{mismatches} of {states} random states"),
    );

    let max_n = cfg.count("max_n")? as u32;
    let oracle = OrderOracle::StrongStable(&f);
    let records = connectedness_scan(&atlas, oracle, 0, max_n)?;
    let mut buf = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        for r in &records {
            w.serialize(r)?;
        }
        w.flush()?;
    }
    out.files.push(("components.csv".into(), buf));
    let broken = records.iter().filter(|r| r.components != 1).count();
    out.metric("component_records", json!(records.len()));
    out.metric("disconnected_records", json!(broken));
    let tag9 = ((b == 0.0 && max_n >= 8) || (b > 0.0 && max_n >= 6)).then_some(9);
    out.check("combinatorially_connected", tag9, broken == 0, format!("{broken} of {} records", records.len()));

    let mut ext_rows = Vec::new();
    let mut ext_ok = true;
    for n in 1..=max_n {
        let piece = atlas.piece(n, 1);
        let diam = piece
            .iter()
            .enumerate()
            .flat_map(|(i, p)| piece[i + 1..].iter().map(move |q| dist(p.1, q.1)))
            .fold(0.0, f64::max);
        let (lo, hi) = extremal_points(&atlas, oracle, n)?;
        let (e0, e1) = (atlas.points[0], atlas.points[1 << n]);
        let err = (dist(lo.1, e0).max(dist(hi.1, e1))).min(dist(lo.1, e1).max(dist(hi.1, e0)));
        ext_ok &= err < diam / 10.0;
        ext_rows.push(vec![n.to_string(), lo.0.to_string(), hi.0.to_string(), fmt_real(diam), fmt_real(err)]);
    }
    out.csv("extremes.csv", &["n", "min_index", "max_index", "piece_diameter", "distance_to_endpoints"], &ext_rows)?;
    out.check("extremal_points", tag9, ext_ok, "extremes of Lambda^n_1 near c_1 and c_{1+R_n}".into());

    let mut axiom_bad = 0usize;
    let mut trees = 0usize;
    for leaves in 1..=cfg.count("blowup_exhaustive")? {
        for o in all_blowup_orders(leaves) {
            axiom_bad += order_axiom_violations(&o);
            trees += 1;
        }
    }
    let max_leaves = cfg.count("blowup_leaves")?;
    for k in 0..cfg.count("blowup_trees")? {
        let leaves = if k == 0 { max_leaves } else { rng.gen_range(1..=max_leaves.max(1)) };
        let o = random_blowup_order(&mut rng, leaves, 6);
        if o.leaf_count() <= max_leaves {
            axiom_bad += order_axiom_violations(&o);
            trees += 1;
        }
    }
    out.metric("blowup_trees", json!(trees));
    out.metric("blowup_violations", json!(axiom_bad));
    out.check(
        "blowup_axioms",
        (max_leaves >= 200).then_some(10),
        axiom_bad == 0,
        format!("{axiom_bad} violations over {trees} trees"),
    );
    Ok(out)
}

// ---------------------------------------------------------------- report

fn find_manifests(path: &Path, acc: &mut Vec<PathBuf>) -> Result<()> {
    if path.is_dir() {
        let mut entries: Vec<PathBuf> = fs::read_dir(path)?.map(|e| e.map(|e| e.path())).collect::<std::io::Result<_>>()?;
        entries.sort();
        for e in entries {
            if e.is_dir() || e.file_name().is_some_and(|n| n == "manifest.json") {
                find_manifests(&e, acc)?;
            }
        }
    } else if path.exists() {
        acc.push(path.to_path_buf());
    } else {
        return Err(LabError::Io(format!("{}: no such file or directory", path.display())));
    }
    Ok(())
}

/// Per-criterion verdict aggregated over manifests.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriterionStatus {
    pub id: u32,
    pub pass: bool,
    pub checks: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub runs: Vec<RunManifest>,
    pub criteria: Vec<CriterionStatus>,
    pub criteria_evaluated: usize,
    /// `(level, ratio)` rows from ladder runs.
    pub ratio_table: Vec<(usize, f64)>,
}

/// Aggregates manifests: every criterion appears once, passing only if all of its
/// checks passed in every run.
pub fn summarize(manifests: Vec<RunManifest>) -> Summary {
    let mut by_id: BTreeMap<u32, CriterionStatus> = BTreeMap::new();
    let mut ratio_table = Vec::new();
    for m in &manifests {
        for a in &m.assertions {
            if let Some(id) = a.criterion {
                let c = by_id.entry(id).or_insert(CriterionStatus { id, pass: true, checks: Vec::new() });
                c.pass &= a.pass;
                c.checks.push(format!("{}:{} {}", m.command.name(), a.name, if a.pass { "pass" } else { "FAIL" }));
            }
        }
        if m.command == Command::Ladder {
            if let Some(v) = m.metrics.get("feigenbaum_ratios") {
                ratio_table = serde_json::from_value(v.clone()).unwrap_or_default();
            }
        }
    }
    let criteria: Vec<CriterionStatus> = by_id.into_values().collect();
    Summary { runs: manifests, criteria_evaluated: criteria.len(), criteria, ratio_table }
}

/// Plain-text table of a summary.
pub fn summary_table(s: &Summary) -> String {
    let mut t = String::new();
    let _ = writeln!(t, "{:<12} {:<8} {:>10}  config", "command", "status", "seconds");
    for r in &s.runs {
        let status = if r.passed { "pass" } else { "FAIL" };
        let _ = writeln!(t, "{:<12} {:<8} {:>10.2}  {}", r.command.name(), status, r.wall_time_s, &r.config_hash[..12]);
    }
    let _ = writeln!(t, "\ncriteria evaluated: {}", s.criteria_evaluated);
    for c in &s.criteria {
        let _ = writeln!(t, "  {:>2} {}  {}", c.id, if c.pass { "pass" } else { "FAIL" }, c.checks.join(", "));
    }
    if !s.ratio_table.is_empty() {
        let _ = writeln!(t, "\nlevel  feigenbaum_ratio");
        for (n, r) in &s.ratio_table {
            let _ = writeln!(t, "{n:>5}  {r:.10}");
        }
    }
    t
}

fn run_report(cfg: &ExperimentConfig) -> Result<Outputs> {
    let inputs = cfg.string("inputs")?;
    let mut paths = Vec::new();
    for p in inputs.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        find_manifests(Path::new(p), &mut paths)?;
    }
    let own = cfg.output_dir.join("manifest.json");
    let mut manifests = Vec::new();
    for p in paths.iter().filter(|p| **p != own) {
        let bytes = fs::read(p).map_err(|e| LabError::Io(format!("{}: {e}", p.display())))?;
        let m: RunManifest =
            serde_json::from_slice(&bytes).map_err(|e| LabError::Io(format!("{}: {e}", p.display())))?;
        if m.command != Command::Report {
            manifests.push(m);
        }
    }
    let summary = summarize(manifests);
    let mut out = Outputs::default();
    out.files.push(("summary.txt".into(), summary_table(&summary).into_bytes()));
    out.json("summary.json", &summary)?;
    out.metric("runs", json!(summary.runs.len()));
    out.metric("criteria_evaluated", json!(summary.criteria_evaluated));
    out.metric("criteria_passed", json!(summary.criteria.iter().filter(|c| c.pass).count()));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_parsing() {
        let cfg = ExperimentConfig::parse(Command::Pliss, "# demo\ntrials = 10\nN = 50 # short\nseed = 7\n").unwrap();
        assert_eq!(cfg.count("trials").unwrap(), 10);
        assert_eq!(cfg.count("N").unwrap(), 50);
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.int("alpha3").unwrap(), 150);
        assert!(matches!(ExperimentConfig::parse(Command::Pliss, "bogus = 1"), Err(LabError::Config(_))));
        assert!(matches!(ExperimentConfig::parse(Command::Pliss, "N = 1\nN = 2"), Err(LabError::Config(_))));
        assert!(matches!(ExperimentConfig::parse(Command::Pliss, "N = 1.5"), Err(LabError::Config(_))));
        assert!(matches!(ExperimentConfig::parse(Command::Ladder, "command = tower"), Err(LabError::Config(_))));
        assert_eq!(ExperimentConfig::parse(Command::Pliss, "trials = 1e4").unwrap().count("trials").unwrap(), 10_000);
    }

    #[test]
    fn hash_ignores_spelling_of_defaults() {
        let a = ExperimentConfig::new(Command::Tower);
        let b = ExperimentConfig::parse(Command::Tower, "b = 0.20\nN = 4").unwrap();
        assert_eq!(a.hash(), b.hash());
        let c = ExperimentConfig::parse(Command::Tower, "b = 0.1").unwrap();
        assert_ne!(a.hash(), c.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn empty_summary() {
        let s = summarize(Vec::new());
        assert_eq!(s.criteria_evaluated, 0);
        assert!(s.criteria.is_empty());
    }

    #[test]
    fn clamped_pliss_sequences_are_admissible() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let seq = random_pliss_sequence(&mut rng, 60, 0, 100, 600);
            let q = PlissQuery::new(seq, 0, 100, 150).unwrap();
            assert_eq!(q.hypothesis_failure(), None);
        }
    }
}
