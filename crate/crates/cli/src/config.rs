//! Flat TOML config with dotted section keys (`run.*`, `model.*`,
//! `policy.*`, `grid.*`, `meta.*`). Every artifact echoes the resolved table
//! so a run can be repeated from its own output.

use std::collections::BTreeSet;
use std::path::Path;

use sheref_core::boosting::DEFAULT_TOL;
use sheref_core::config::{ChangeSpec, Method, ScenarioConfig};
use sheref_core::models::ModelSpec;
use sheref_core::sim::montecarlo::replication_rng;
use sheref_core::sim::policy::PolicySpec;
use sheref_core::sim::SimError;
use toml::{Table, Value};

use crate::error::CliError;

/// Interpretation choices that affect the numbers, echoed as metadata.
pub const INTERPRETATIONS: [&str; 5] = [
    "replacements are drawn uniformly without replacement from never-activated pool members",
    "rejections = mean over replications of total detections across all ticks",
    "afnr is a mean of per-replication ratios",
    "shared-factor loadings are redrawn in every replication",
    "change points use the global clock: P(tau = t) = (1-p)^t p on {0, 1, ...}",
];

const SECTIONS: [&str; 5] = ["run", "model", "policy", "grid", "meta"];

/// Command-line values that replace file values.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub alpha: Option<f64>,
    pub method: Option<Method>,
    pub reps: Option<usize>,
    pub seed: Option<u64>,
}

/// Reads a TOML config, or the config echoed at the head of a CSV artifact.
pub fn load_table(path: &Path) -> Result<Table, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    if path.extension().is_some_and(|x| x == "csv") {
        return parse_table(&strip_comment_block(&text));
    }
    parse_table(&text)
}

pub fn parse_table(text: &str) -> Result<Table, CliError> {
    let table: Table = toml::from_str(text).map_err(|e| CliError::config("<file>", e.to_string()))?;
    for (name, value) in &table {
        if !SECTIONS.contains(&name.as_str()) {
            return Err(CliError::config(name, "unknown section"));
        }
        if !value.is_table() {
            return Err(CliError::config(name, "expected a section of key = value pairs"));
        }
    }
    Ok(table)
}

/// Read access to one section that remembers which keys were consumed.
struct Section<'a> {
    name: &'static str,
    table: Option<&'a Table>,
    seen: BTreeSet<&'static str>,
}

impl<'a> Section<'a> {
    fn new(root: &'a Table, name: &'static str) -> Self {
        Self {
            name,
            table: root.get(name).and_then(Value::as_table),
            seen: BTreeSet::new(),
        }
    }

    fn key(&self, key: &str) -> String {
        format!("{}.{key}", self.name)
    }

    fn raw(&mut self, key: &'static str) -> Option<&'a Value> {
        self.seen.insert(key);
        self.table.and_then(|t| t.get(key))
    }

    fn f64(&mut self, key: &'static str) -> Result<Option<f64>, CliError> {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => as_f64(v).map(Some).ok_or_else(|| CliError::config(self.key(key), "expected a number")),
        }
    }

    fn f64_or(&mut self, key: &'static str, default: f64) -> Result<f64, CliError> {
        Ok(self.f64(key)?.unwrap_or(default))
    }

    fn f64_req(&mut self, key: &'static str) -> Result<f64, CliError> {
        self.f64(key)?.ok_or_else(|| CliError::config(self.key(key), "missing required key"))
    }

    fn f64_list(&mut self, key: &'static str) -> Result<Option<Vec<f64>>, CliError> {
        match self.raw(key) {
            None => Ok(None),
            Some(Value::Array(items)) => items
                .iter()
                .map(|v| as_f64(v).ok_or_else(|| CliError::config(self.key(key), "expected numbers")))
                .collect::<Result<Vec<_>, _>>()
                .map(Some),
            Some(v) => as_f64(v)
                .map(|x| Some(vec![x]))
                .ok_or_else(|| CliError::config(self.key(key), "expected a number or a list of numbers")),
        }
    }

    fn uint(&mut self, key: &'static str) -> Result<Option<u64>, CliError> {
        match self.raw(key) {
            None => Ok(None),
            Some(Value::Integer(i)) if *i >= 0 => Ok(Some(*i as u64)),
            Some(_) => Err(CliError::config(self.key(key), "expected a non-negative integer")),
        }
    }

    fn uint_or(&mut self, key: &'static str, default: u64) -> Result<u64, CliError> {
        Ok(self.uint(key)?.unwrap_or(default))
    }

    fn string(&mut self, key: &'static str) -> Result<Option<&'a str>, CliError> {
        match self.raw(key) {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(s.as_str())),
            Some(_) => Err(CliError::config(self.key(key), "expected a string")),
        }
    }

    fn string_list(&mut self, key: &'static str) -> Result<Option<Vec<&'a str>>, CliError> {
        match self.raw(key) {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(vec![s.as_str()])),
            Some(Value::Array(items)) => items
                .iter()
                .map(|v| v.as_str().ok_or_else(|| CliError::config(self.key(key), "expected strings")))
                .collect::<Result<Vec<_>, _>>()
                .map(Some),
            Some(_) => Err(CliError::config(self.key(key), "expected a string or a list of strings")),
        }
    }

    fn bool_or(&mut self, key: &'static str, default: bool) -> Result<bool, CliError> {
        match self.raw(key) {
            None => Ok(default),
            Some(Value::Boolean(b)) => Ok(*b),
            Some(_) => Err(CliError::config(self.key(key), "expected true or false")),
        }
    }

    /// Fails on any key that was never asked for.
    fn finish(self) -> Result<(), CliError> {
        if let Some(t) = self.table {
            if let Some(k) = t.keys().find(|k| !self.seen.contains(k.as_str())) {
                return Err(CliError::config(format!("{}.{k}", self.name), "unknown key"));
            }
        }
        Ok(())
    }
}

fn as_f64(v: &Value) -> Option<f64> {
    match v {
        Value::Float(f) => Some(*f),
        Value::Integer(i) => Some(*i as f64),
        _ => None,
    }
}

/// A resolved `simulate` request: one scenario per (method, alpha) pair.
#[derive(Debug, Clone)]
pub struct SimulateConfig {
    pub base: ScenarioConfig,
    pub methods: Vec<Method>,
    pub alphas: Vec<f64>,
    pub threads: Option<usize>,
    meta: Option<Table>,
}

impl SimulateConfig {
    pub fn scenarios(&self) -> impl Iterator<Item = ScenarioConfig> + '_ {
        self.methods.iter().flat_map(move |&method| {
            self.alphas.iter().map(move |&alpha| ScenarioConfig {
                method,
                alpha,
                ..self.base.clone()
            })
        })
    }

    /// Fully resolved table; parsing it yields the same configuration.
    pub fn echo(&self) -> Table {
        let b = &self.base;
        let mut run = Table::new();
        run.insert("seed".into(), Value::Integer(b.seed as i64));
        run.insert(
            "method".into(),
            Value::Array(self.methods.iter().map(|m| Value::String(m.name().into())).collect()),
        );
        run.insert("alpha".into(), Value::Array(self.alphas.iter().map(|&a| Value::Float(a)).collect()));
        run.insert("reps".into(), Value::Integer(b.replications as i64));
        run.insert("cap".into(), Value::Integer(b.cap as i64));
        run.insert("deadline".into(), Value::Integer(b.deadline as i64));
        run.insert("pool_size".into(), Value::Integer(b.pool_size as i64));
        match b.change {
            ChangeSpec::Geometric { p } => {
                run.insert("change".into(), Value::String("geometric".into()));
                run.insert("change_p".into(), Value::Float(p));
            }
            ChangeSpec::Never => {
                run.insert("change".into(), Value::String("never".into()));
            }
        }
        run.insert("boost_tol".into(), Value::Float(b.boost_tol));
        if let Some(n) = self.threads {
            run.insert("threads".into(), Value::Integer(n as i64));
        }

        let mut root = Table::new();
        root.insert("run".into(), Value::Table(run));
        root.insert("model".into(), Value::Table(model_table(&b.model)));
        root.insert("policy".into(), Value::Table(policy_table(b.policy, b.initial_active)));
        let mut meta = self.meta.clone().unwrap_or_default();
        meta.insert(
            "interpretations".into(),
            Value::Array(INTERPRETATIONS.iter().map(|s| Value::String((*s).into())).collect()),
        );
        root.insert("meta".into(), Value::Table(meta));
        root
    }
}

fn model_table(spec: &ModelSpec) -> Table {
    let mut t = Table::new();
    let mut put = |k: &str, v: f64| {
        t.insert(k.into(), Value::Float(v));
    };
    let variant = match spec {
        ModelSpec::IidMeanShift { mu, sigma } => {
            put("mu", *mu);
            put("sigma", *sigma);
            "iid_mean_shift"
        }
        ModelSpec::SharedFactor {
            mu,
            sigma_z,
            sigma_eps,
            loading_range,
            loadings,
        } => {
            put("mu", *mu);
            put("sigma_z", *sigma_z);
            put("sigma_eps", *sigma_eps);
            t.insert(
                "factor_loading_range".into(),
                Value::Array(vec![Value::Float(loading_range.0), Value::Float(loading_range.1)]),
            );
            if let Some(l) = loadings {
                t.insert("loadings".into(), Value::Array(l.iter().map(|&a| Value::Float(a)).collect()));
            }
            "shared_factor"
        }
        ModelSpec::WithinSensorAr {
            ar_pre,
            ar_post,
            sigma,
            noise_rho,
        } => {
            put("ar_pre", *ar_pre);
            put("ar_post", *ar_post);
            put("sigma", *sigma);
            put("noise_rho", *noise_rho);
            "within_sensor_ar"
        }
        ModelSpec::FixedNetworkVar {
            coef,
            mu,
            sigma,
            noise_rho,
        } => {
            put("coef", *coef);
            put("mu", *mu);
            put("sigma", *sigma);
            put("noise_rho", *noise_rho);
            "fixed_network_var"
        }
    };
    t.insert("variant".into(), Value::String(variant.into()));
    t
}

fn policy_table(policy: PolicySpec, initial_active: usize) -> Table {
    let mut t = Table::new();
    let kind = match policy {
        PolicySpec::FixedAll => "fixed_all",
        PolicySpec::DeactivateOnly => "deactivate_only",
        PolicySpec::ReplaceFromPool => "replace_from_pool",
        PolicySpec::Bernoulli { q } => {
            t.insert("q".into(), Value::Float(q));
            "bernoulli"
        }
    };
    t.insert("kind".into(), Value::String(kind.into()));
    t.insert("initial_active".into(), Value::Integer(initial_active as i64));
    t
}

fn parse_model(s: &mut Section<'_>) -> Result<ModelSpec, CliError> {
    let variant = s
        .string("variant")?
        .ok_or_else(|| CliError::config("model.variant", "missing required key"))?;
    let spec = match variant {
        "iid_mean_shift" => ModelSpec::IidMeanShift {
            mu: s.f64_req("mu")?,
            sigma: s.f64_or("sigma", 1.0)?,
        },
        "shared_factor" => {
            let range = match s.f64_list("factor_loading_range")? {
                None => (0.0, 0.5),
                Some(v) if v.len() == 2 => (v[0], v[1]),
                Some(_) => return Err(CliError::config("model.factor_loading_range", "expected [lo, hi]")),
            };
            ModelSpec::SharedFactor {
                mu: s.f64_or("mu", 3.0)?,
                sigma_z: s.f64_or("sigma_z", 1.0)?,
                sigma_eps: s.f64_or("sigma_eps", 1.0)?,
                loading_range: range,
                loadings: s.f64_list("loadings")?,
            }
        }
        "within_sensor_ar" => ModelSpec::WithinSensorAr {
            ar_pre: s.f64_or("ar_pre", -0.8)?,
            ar_post: s.f64_or("ar_post", 0.8)?,
            sigma: s.f64_or("sigma", 1.0)?,
            noise_rho: s.f64_or("noise_rho", -0.8)?,
        },
        "fixed_network_var" => ModelSpec::FixedNetworkVar {
            coef: s.f64_req("coef")?,
            mu: s.f64_req("mu")?,
            sigma: s.f64_or("sigma", 1.0)?,
            noise_rho: s.f64_or("noise_rho", 0.0)?,
        },
        other => {
            return Err(CliError::config(
                "model.variant",
                format!(
                    "unknown variant `{other}` (expected iid_mean_shift, shared_factor, within_sensor_ar or fixed_network_var)"
                ),
            ))
        }
    };
    Ok(spec)
}

fn parse_policy(s: &mut Section<'_>, cap: usize) -> Result<(PolicySpec, usize), CliError> {
    let kind = s.string("kind")?.unwrap_or("replace_from_pool");
    let policy = match kind {
        "fixed_all" => PolicySpec::FixedAll,
        "deactivate_only" => PolicySpec::DeactivateOnly,
        "replace_from_pool" => PolicySpec::ReplaceFromPool,
        "bernoulli" => PolicySpec::Bernoulli { q: s.f64_req("q")? },
        other => {
            return Err(CliError::config(
                "policy.kind",
                format!("unknown policy `{other}` (expected fixed_all, deactivate_only, replace_from_pool or bernoulli)"),
            ))
        }
    };
    let initial = s.uint_or("initial_active", cap as u64)? as usize;
    Ok((policy, initial))
}

fn parse_methods(s: &mut Section<'_>) -> Result<Vec<Method>, CliError> {
    match s.string_list("method")? {
        None => Ok(Method::ALL.to_vec()),
        Some(names) => names
            .iter()
            .map(|n| n.parse::<Method>().map_err(|e| CliError::config("run.method", e.to_string())))
            .collect(),
    }
}

/// Resolves a config table plus overrides into a simulation request.
pub fn simulate_config(root: &Table, ov: &Overrides) -> Result<SimulateConfig, CliError> {
    let mut run = Section::new(root, "run");
    let seed = match (ov.seed, run.uint("seed")?) {
        (Some(s), _) | (None, Some(s)) => s,
        (None, None) => return Err(CliError::config("run.seed", "missing required key")),
    };
    if seed > i64::MAX as u64 {
        return Err(CliError::config("run.seed", "must be below 2^63"));
    }
    let mut methods = parse_methods(&mut run)?;
    if let Some(m) = ov.method {
        methods = vec![m];
    }
    let mut alphas = run.f64_list("alpha")?.unwrap_or_else(|| vec![0.1, 0.05]);
    if let Some(a) = ov.alpha {
        alphas = vec![a];
    }
    if methods.is_empty() || alphas.is_empty() {
        return Err(CliError::config("run.method", "need at least one method and one alpha"));
    }
    let cap = run.uint_or("cap", 100)? as usize;
    let reps = match ov.reps {
        Some(r) => r,
        None => run.uint_or("reps", 500)? as usize,
    };
    let deadline = run.uint_or("deadline", 30)?;
    let deadline = u32::try_from(deadline).map_err(|_| CliError::config("run.deadline", "too large"))?;
    let pool_size = run.uint_or("pool_size", 1000)? as usize;
    let change = match run.string("change")?.unwrap_or("geometric") {
        "geometric" => ChangeSpec::Geometric {
            p: run.f64_or("change_p", 0.1)?,
        },
        "never" => ChangeSpec::Never,
        other => {
            return Err(CliError::config(
                "run.change",
                format!("unknown change law `{other}` (expected geometric or never)"),
            ))
        }
    };
    let boost_tol = run.f64_or("boost_tol", DEFAULT_TOL)?;
    let threads = run.uint("threads")?.map(|n| n as usize);
    if threads == Some(0) {
        return Err(CliError::config("run.threads", "must be positive"));
    }
    // Consumed here so that `seed` and friends are known even when overridden.
    run.raw("reps");
    run.raw("seed");
    run.finish()?;

    let mut model_sec = Section::new(root, "model");
    if model_sec.table.is_none() {
        return Err(CliError::config("model.variant", "missing required key"));
    }
    let model = parse_model(&mut model_sec)?;
    model_sec.finish()?;

    let mut policy_sec = Section::new(root, "policy");
    let (policy, initial_active) = parse_policy(&mut policy_sec, cap)?;
    policy_sec.finish()?;

    if root.contains_key("grid") {
        return Err(CliError::config("grid", "only used by the boost subcommand"));
    }

    let base = ScenarioConfig {
        cap,
        deadline,
        alpha: alphas[0],
        method: methods[0],
        model,
        policy,
        pool_size,
        initial_active,
        change,
        replications: reps,
        seed,
        boost_tol,
    };
    let cfg = SimulateConfig {
        base,
        methods,
        alphas,
        threads,
        meta: root.get("meta").and_then(Value::as_table).cloned(),
    };
    for sc in cfg.scenarios() {
        sc.validate()?;
    }
    // Parameter checks live in the model constructor.
    cfg.base
        .model
        .build(cfg.base.pool_size, &mut replication_rng(seed, 0))
        .map_err(|e| CliError::from(SimError::Model(e)))?;
    Ok(cfg)
}

/// One row family of the `boost` grid.
#[derive(Debug, Clone, PartialEq)]
pub enum GridLaw {
    PointMass,
    /// Unit-mean lognormal with log-variance `v`.
    LogNormal(f64),
}

#[derive(Debug, Clone)]
pub struct BoostGrid {
    pub alphas: Vec<f64>,
    pub scales: Vec<f64>,
    pub laws: Vec<GridLaw>,
    pub cap: usize,
    pub tol: f64,
    pub b_max: Option<f64>,
}

pub fn boost_grid(root: &Table, ov: &Overrides) -> Result<BoostGrid, CliError> {
    for name in ["run", "model", "policy"] {
        if root.contains_key(name) {
            return Err(CliError::config(name, "not used by the boost subcommand"));
        }
    }
    let mut g = Section::new(root, "grid");
    let mut alphas = g.f64_list("alpha")?.unwrap_or_else(|| vec![0.1, 0.05]);
    if let Some(a) = ov.alpha {
        alphas = vec![a];
    }
    let scales = g.f64_list("c")?.unwrap_or_else(|| vec![1.0]);
    let mut laws = Vec::new();
    if g.bool_or("point_mass", true)? {
        laws.push(GridLaw::PointMass);
    }
    for v in g.f64_list("lognormal_v")?.unwrap_or_default() {
        if !(v > 0.0 && v.is_finite()) {
            return Err(CliError::config("grid.lognormal_v", format!("must be positive, got {v}")));
        }
        laws.push(GridLaw::LogNormal(v));
    }
    let cap = g.uint_or("cap", 100)? as usize;
    let tol = g.f64_or("tol", DEFAULT_TOL)?;
    let b_max = g.f64("b_max")?;
    g.finish()?;

    if let Some(a) = alphas.iter().find(|a| !(**a > 0.0 && **a < 1.0)) {
        return Err(CliError::config("grid.alpha", format!("must lie in (0,1), got {a}")));
    }
    if let Some(c) = scales.iter().find(|c| !(**c > 0.0 && c.is_finite())) {
        return Err(CliError::config("grid.c", format!("must be positive, got {c}")));
    }
    if cap == 0 {
        return Err(CliError::config("grid.cap", "must be positive"));
    }
    if !(tol > 0.0) {
        return Err(CliError::config("grid.tol", "must be positive"));
    }
    if let Some(b) = b_max {
        if !(b >= 1.0 && b.is_finite()) {
            return Err(CliError::config("grid.b_max", format!("must be >= 1, got {b}")));
        }
    }
    if laws.is_empty() {
        return Err(CliError::config("grid.lognormal_v", "the grid has no laws"));
    }
    Ok(BoostGrid {
        alphas,
        scales,
        laws,
        cap,
        tol,
        b_max,
    })
}

/// Renders a table as `# `-prefixed TOML lines.
pub fn comment_block(table: &Table) -> String {
    let text = toml::to_string(table).expect("toml tables always serialize");
    let mut out = String::new();
    for line in text.lines() {
        out.push_str("# ");
        out.push_str(line);
        out.push('\n');
    }
    out
}

/// Inverse of [`comment_block`]: the TOML echo at the head of a CSV file.
pub fn strip_comment_block(text: &str) -> String {
    text.lines()
        .take_while(|l| l.starts_with('#'))
        .map(|l| l.strip_prefix("# ").or_else(|| l.strip_prefix('#')).unwrap_or(l))
        .collect::<Vec<_>>()
        .join("\n")
}
