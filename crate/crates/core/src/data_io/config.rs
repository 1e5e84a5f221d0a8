use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Result, SpargeError};
use crate::graph_embedding::GraphMode;
use crate::trainer::{Descent, Hyperparams, SvtRule};

/// Parse `key = value` lines. `#` starts a comment line; blank lines are
/// skipped; a repeated key is an error.
pub fn parse_key_values(text: &str) -> Result<Vec<(String, String)>> {
    let mut seen = BTreeMap::new();
    let mut out = Vec::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| SpargeError::Config(format!("line {}: expected key = value", no + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(SpargeError::Config(format!("line {}: empty key", no + 1)));
        }
        if let Some(prev) = seen.insert(k.to_string(), no + 1) {
            return Err(SpargeError::Config(format!(
                "line {}: key {k:?} already set on line {prev}",
                no + 1
            )));
        }
        out.push((k.to_string(), v.to_string()));
    }
    Ok(out)
}

pub fn read_key_values(path: impl AsRef<Path>) -> Result<Vec<(String, String)>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| SpargeError::io(path, e))?;
    parse_key_values(&text)
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| SpargeError::Config(format!("cannot parse {value:?} for {key}")))
}

impl FromStr for SvtRule {
    type Err = SpargeError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(SvtRule::Constant),
            "proximal" => Ok(SvtRule::ProximalStep),
            _ => Err(SpargeError::Config(format!("unknown svt rule {s:?} (constant|proximal)"))),
        }
    }
}

impl SvtRule {
    pub fn as_str(&self) -> &'static str {
        match self {
            SvtRule::Constant => "constant",
            SvtRule::ProximalStep => "proximal",
        }
    }
}

impl FromStr for Descent {
    type Err = SpargeError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "quotient" => Ok(Descent::QuotientOnly),
            "composite" => Ok(Descent::Composite),
            _ => Err(SpargeError::Config(format!("unknown descent {s:?} (quotient|composite)"))),
        }
    }
}

impl Descent {
    pub fn as_str(&self) -> &'static str {
        match self {
            Descent::QuotientOnly => "quotient",
            Descent::Composite => "composite",
        }
    }
}

/// Neighbourhood sizes used when a mode is named without its parameters.
pub const DEFAULT_K1: usize = 5;
pub const DEFAULT_K2: usize = 5;
pub const DEFAULT_T: f64 = 1.0;
pub const DEFAULT_KG: usize = 5;

/// Every hyperparameter as a key/value pair. Floats use the shortest
/// representation that parses back to the same bits.
pub fn hyperparams_to_pairs(hp: &Hyperparams) -> Vec<(String, String)> {
    let mut v: Vec<(&str, String)> = vec![
        ("lambda1", format!("{:?}", hp.lambda1)),
        ("lambda2", format!("{:?}", hp.lambda2)),
        ("r1", format!("{:?}", hp.r1)),
        ("r2", format!("{:?}", hp.r2)),
        ("gamma", format!("{:?}", hp.gamma)),
        ("zeta", format!("{:?}", hp.zeta)),
        ("dict_size", hp.k.to_string()),
        ("embed_dim", hp.l.to_string()),
    ];
    match hp.mode {
        GraphMode::Supervised { k1, k2 } => {
            v.push(("mode", "supervised".into()));
            v.push(("k1", k1.to_string()));
            v.push(("k2", k2.to_string()));
        }
        GraphMode::Unsupervised { t, kg } => {
            v.push(("mode", "unsupervised".into()));
            v.push(("t", format!("{t:?}")));
            v.push(("kg", kg.to_string()));
        }
    }
    v.extend([
        ("max_iter", hp.max_iter.to_string()),
        ("grad_tol", format!("{:?}", hp.grad_tol)),
        ("init_subset", hp.init_subset.to_string()),
        ("seed", hp.seed.to_string()),
        ("backtrack", hp.backtracking.to_string()),
        ("svt_rule", hp.svt_rule.as_str().into()),
        ("descent", hp.descent.as_str().into()),
        ("class_dictionaries", hp.class_dictionaries.to_string()),
        ("ksvd_iterations", hp.ksvd_iterations.to_string()),
        ("completion_max_iter", hp.completion_max_iter.to_string()),
        ("coding_tol", format!("{:?}", hp.coding_tol)),
        ("coding_max_iter", hp.coding_max_iter.to_string()),
    ]);
    v.into_iter().map(|(k, s)| (k.to_string(), s)).collect()
}

/// Keys understood by [`apply_hyperparams`]. Dashes and underscores are
/// interchangeable.
pub const HYPERPARAM_KEYS: [&str; 25] = [
    "lambda1",
    "lambda2",
    "r1",
    "r2",
    "gamma",
    "zeta",
    "dict_size",
    "embed_dim",
    "mode",
    "k1",
    "k2",
    "t",
    "kg",
    "max_iter",
    "grad_tol",
    "init_subset",
    "seed",
    "backtrack",
    "svt_rule",
    "descent",
    "class_dictionaries",
    "ksvd_iterations",
    "completion_max_iter",
    "coding_tol",
    "coding_max_iter",
];

pub fn normalize_key(key: &str) -> String {
    key.replace('-', "_")
}

/// Overlay hyperparameter pairs on `base`. Returns the keys it did not
/// recognise. Graph parameters for the other mode are rejected.
pub fn apply_hyperparams(base: &Hyperparams, pairs: &[(String, String)]) -> Result<(Hyperparams, Vec<String>)> {
    let mut hp = base.clone();
    let mut unknown = Vec::new();
    let mut mode: Option<String> = None;
    let mut graph: BTreeMap<String, String> = BTreeMap::new();
    for (key, value) in pairs {
        let key = normalize_key(key);
        let k = key.as_str();
        match k {
            "lambda1" => hp.lambda1 = parse(k, value)?,
            "lambda2" => hp.lambda2 = parse(k, value)?,
            "r1" => hp.r1 = parse(k, value)?,
            "r2" => hp.r2 = parse(k, value)?,
            "gamma" => hp.gamma = parse(k, value)?,
            "zeta" => hp.zeta = parse(k, value)?,
            "dict_size" => hp.k = parse(k, value)?,
            "embed_dim" => hp.l = parse(k, value)?,
            "mode" => mode = Some(value.clone()),
            "k1" | "k2" | "t" | "kg" => {
                graph.insert(key.clone(), value.clone());
            }
            "max_iter" => hp.max_iter = parse(k, value)?,
            "grad_tol" => hp.grad_tol = parse(k, value)?,
            "init_subset" => hp.init_subset = parse(k, value)?,
            "seed" => hp.seed = parse(k, value)?,
            "backtrack" => hp.backtracking = parse(k, value)?,
            "svt_rule" => hp.svt_rule = value.parse()?,
            "descent" => hp.descent = value.parse()?,
            "class_dictionaries" => hp.class_dictionaries = parse(k, value)?,
            "ksvd_iterations" => hp.ksvd_iterations = parse(k, value)?,
            "completion_max_iter" => hp.completion_max_iter = parse(k, value)?,
            "coding_tol" => hp.coding_tol = parse(k, value)?,
            "coding_max_iter" => hp.coding_max_iter = parse(k, value)?,
            _ => unknown.push(key.clone()),
        }
    }
    let supervised = match mode.as_deref() {
        None => hp.is_supervised(),
        Some("supervised") => true,
        Some("unsupervised") => false,
        Some(other) => {
            return Err(SpargeError::Config(format!(
                "unknown mode {other:?} (supervised|unsupervised)"
            )))
        }
    };
    let get = |name: &'static str| graph.get(name).map(|v| (name, v.as_str()));
    if supervised {
        if let Some((name, _)) = get("t").or(get("kg")) {
            return Err(SpargeError::Config(format!("{name} only applies to unsupervised mode")));
        }
        let (d1, d2) = match hp.mode {
            GraphMode::Supervised { k1, k2 } => (k1, k2),
            _ => (DEFAULT_K1, DEFAULT_K2),
        };
        hp.mode = GraphMode::Supervised {
            k1: get("k1").map(|(n, v)| parse(n, v)).transpose()?.unwrap_or(d1),
            k2: get("k2").map(|(n, v)| parse(n, v)).transpose()?.unwrap_or(d2),
        };
    } else {
        if let Some((name, _)) = get("k1").or(get("k2")) {
            return Err(SpargeError::Config(format!("{name} only applies to supervised mode")));
        }
        let (dt, dk) = match hp.mode {
            GraphMode::Unsupervised { t, kg } => (t, kg),
            _ => (DEFAULT_T, DEFAULT_KG),
        };
        hp.mode = GraphMode::Unsupervised {
            t: get("t").map(|(n, v)| parse(n, v)).transpose()?.unwrap_or(dt),
            kg: get("kg").map(|(n, v)| parse(n, v)).transpose()?.unwrap_or(dk),
        };
    }
    Ok((hp, unknown))
}
