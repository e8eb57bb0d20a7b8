//! Run configuration: TOML file plus command-line overrides.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::expert::HttpSettings;
use crate::fusion::FusionConfig;
use crate::supplement::SupplementParams;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("reading config {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("config is missing required path `{0}`")]
    MissingPath(&'static str),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Mock,
    Http,
}

impl std::str::FromStr for BackendKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "mock" => Ok(Self::Mock),
            "http" => Ok(Self::Http),
            other => Err(format!("unknown backend `{other}` (expected mock or http)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SupplementSection {
    pub alpha_v: f64,
    pub alpha_c: f64,
    pub epsilon: f64,
    pub max_hops: usize,
    pub k_sup: usize,
}

impl Default for SupplementSection {
    fn default() -> Self {
        let p = SupplementParams::<f64>::default();
        Self {
            alpha_v: p.alpha_v,
            alpha_c: p.alpha_c,
            epsilon: p.epsilon,
            max_hops: p.max_hops,
            k_sup: 1,
        }
    }
}

impl SupplementSection {
    pub fn params(&self) -> SupplementParams<f64> {
        SupplementParams {
            alpha_v: self.alpha_v,
            alpha_c: self.alpha_c,
            epsilon: self.epsilon,
            max_hops: self.max_hops,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EntitySection {
    /// Multiplier on abnormal evidence.
    pub boost: f64,
}

impl Default for EntitySection {
    fn default() -> Self {
        Self { boost: 1.5 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoopSection {
    /// Confidence gap below which an exclusive pair is a conflict.
    pub delta: f64,
    /// Feedback rounds allowed before forced termination.
    pub max_iters: usize,
}

impl Default for LoopSection {
    fn default() -> Self {
        Self {
            delta: 0.1,
            max_iters: 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub fuzzy_threshold: f64,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { fuzzy_threshold: 0.5 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    /// Worker count. Left out of serialized traces: it never changes results.
    #[serde(skip_serializing)]
    pub parallelism: usize,
    pub backend: BackendKind,
    /// Keep raw expert requests and responses in traces.
    pub trace_io: bool,
    /// Record wall-clock stage timings; off by default so traces stay
    /// byte-stable.
    pub timing: bool,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            parallelism: 1,
            backend: BackendKind::Mock,
            trace_io: false,
            timing: false,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathSection {
    pub graph: Option<PathBuf>,
    pub relation_classes: Option<PathBuf>,
    pub alignment: Option<PathBuf>,
    pub icd: Option<PathBuf>,
    pub corpus: Option<PathBuf>,
    pub rules: Option<PathBuf>,
}

impl PathSection {
    fn resolve_against(&mut self, base: &Path) {
        for p in [
            &mut self.graph,
            &mut self.relation_classes,
            &mut self.alignment,
            &mut self.icd,
            &mut self.corpus,
            &mut self.rules,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ablation {
    /// Skip the graph supplement.
    pub no_mkg: bool,
    /// Uniform type weights, no abnormal set.
    pub no_lab: bool,
    /// Evidence score fixed at 1.
    pub no_sin: bool,
    /// Logic score fixed at 1, no conflicts.
    pub no_rel: bool,
}

impl Ablation {
    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        for (on, name) in [
            (self.no_mkg, "no-mkg"),
            (self.no_lab, "no-lab"),
            (self.no_sin, "no-sin"),
            (self.no_rel, "no-rel"),
        ] {
            if on {
                parts.push(name);
            }
        }
        if parts.is_empty() {
            "full".into()
        } else {
            parts.join("+")
        }
    }
}

/// Fully resolved configuration; echoed into every trace.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub supplement: SupplementSection,
    pub entity: EntitySection,
    pub fusion: FusionConfig<f64>,
    #[serde(rename = "loop")]
    pub feedback: LoopSection,
    pub eval: EvalSection,
    pub run: RunSection,
    pub paths: PathSection,
    pub ablation: Ablation,
    pub http: HttpSettings,
}

/// Command-line values that take precedence over the file.
#[derive(Clone, Debug, Default)]
pub struct ConfigOverrides {
    pub graph: Option<PathBuf>,
    pub relation_classes: Option<PathBuf>,
    pub corpus: Option<PathBuf>,
    pub rules: Option<PathBuf>,
    pub backend: Option<BackendKind>,
    pub k: Option<usize>,
    pub k_sup: Option<usize>,
    pub parallelism: Option<usize>,
    pub trace_io: bool,
    pub timing: bool,
    pub ablation: Ablation,
}

impl RunConfig {
    pub fn from_toml(text: &str, origin: &Path) -> Result<Self, ConfigError> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: origin.to_path_buf(),
            message: e.to_string(),
        })?;
        if let Some(dir) = origin.parent() {
            cfg.paths.resolve_against(dir);
        }
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &ConfigOverrides) {
        let p = &mut self.paths;
        for (slot, value) in [
            (&mut p.graph, &o.graph),
            (&mut p.relation_classes, &o.relation_classes),
            (&mut p.corpus, &o.corpus),
            (&mut p.rules, &o.rules),
        ] {
            if value.is_some() {
                slot.clone_from(value);
            }
        }
        if let Some(b) = o.backend {
            self.run.backend = b;
        }
        if let Some(k) = o.k {
            self.fusion.k = k;
        }
        if let Some(k) = o.k_sup {
            self.supplement.k_sup = k;
        }
        if let Some(n) = o.parallelism {
            self.run.parallelism = n;
        }
        self.run.trace_io |= o.trace_io;
        self.run.timing |= o.timing;
        let a = &mut self.ablation;
        a.no_mkg |= o.ablation.no_mkg;
        a.no_lab |= o.ablation.no_lab;
        a.no_sin |= o.ablation.no_sin;
        a.no_rel |= o.ablation.no_rel;
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        let s = &self.supplement;
        if !(s.alpha_v >= 0.0 && s.alpha_c >= 0.0) {
            return bad("alpha weights must be nonnegative");
        }
        if (s.alpha_v + s.alpha_c - 1.0).abs() > 1e-9 {
            return bad("alpha_v + alpha_c must equal 1");
        }
        if !(s.epsilon > 0.0 && s.epsilon < 1e-3) {
            return bad("epsilon must lie in (0, 1e-3)");
        }
        if s.max_hops == 0 {
            return bad("max_hops must be at least 1");
        }
        if !(self.entity.boost >= 1.0 && self.entity.boost.is_finite()) {
            return bad("boost must be a finite factor >= 1");
        }
        self.fusion
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string().trim_start_matches("invalid fusion config: ").into()))?;
        if !(self.feedback.delta >= 0.0 && self.feedback.delta.is_finite()) {
            return bad("delta must be nonnegative");
        }
        let t = self.eval.fuzzy_threshold;
        if !(t > 0.0 && t <= 1.0) {
            return bad("fuzzy_threshold must lie in (0, 1]");
        }
        if self.run.parallelism == 0 {
            return bad("parallelism must be at least 1");
        }
        if self.run.backend == BackendKind::Http && self.http.base_url.trim().is_empty() {
            return bad("http backend needs a base_url");
        }
        if self.http.max_in_flight == 0 {
            return bad("max_in_flight must be at least 1");
        }
        Ok(())
    }

    pub fn require<'a>(&'a self, name: &'static str, value: &'a Option<PathBuf>) -> Result<&'a Path, ConfigError> {
        value.as_deref().ok_or(ConfigError::MissingPath(name))
    }
}

/// Loads `file` (or defaults when `None`), applies `overrides` and validates.
pub fn parse_config(file: Option<&Path>, overrides: &ConfigOverrides) -> Result<RunConfig, ConfigError> {
    let mut cfg = match file {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
                path: path.to_path_buf(),
                source,
            })?;
            RunConfig::from_toml(&text, path)?
        }
        None => RunConfig::default(),
    };
    cfg.apply(overrides);
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn from(text: &str) -> Result<RunConfig, ConfigError> {
        let cfg = RunConfig::from_toml(text, Path::new("/cfg/run.toml"))?;
        cfg.validate()?;
        Ok(cfg)
    }

    #[test]
    fn defaults() {
        let cfg = parse_config(None, &ConfigOverrides::default()).unwrap();
        assert_eq!(cfg.supplement.k_sup, 1);
        assert_eq!(cfg.fusion.k, 5);
        assert_eq!(cfg.feedback.max_iters, 2);
        assert_eq!(cfg.entity.boost, 1.5);
        assert_eq!(from("").unwrap(), cfg);
    }

    #[test]
    fn beta_must_sum_to_one() {
        let err = from("[fusion]\nbeta = [0.5, 0.5, 0.1]\n").unwrap_err();
        assert_eq!(err.to_string(), "invalid config: beta must sum to 1");
    }

    #[test]
    fn unknown_keys_are_named() {
        let err = from("[fusion]\nbeta_1 = 0.4\n").unwrap_err().to_string();
        assert!(err.contains("beta_1"), "{err}");
        let err = from("[tuning]\nx = 1\n").unwrap_err().to_string();
        assert!(err.contains("tuning"), "{err}");
    }

    #[test]
    fn flags_override_file() {
        let mut cfg = from("[fusion]\nk = 5\n[paths]\ngraph = \"kg.tsv\"\n").unwrap();
        assert_eq!(cfg.paths.graph.as_deref(), Some(Path::new("/cfg/kg.tsv")));
        cfg.apply(&ConfigOverrides {
            k: Some(3),
            graph: Some("other.tsv".into()),
            ablation: Ablation {
                no_rel: true,
                ..Ablation::default()
            },
            ..ConfigOverrides::default()
        });
        assert_eq!(cfg.fusion.k, 3);
        assert_eq!(cfg.paths.graph.as_deref(), Some(Path::new("other.tsv")));
        assert!(cfg.ablation.no_rel);
        assert_eq!(cfg.ablation.label(), "no-rel");
    }

    #[test]
    fn other_constraints() {
        assert!(from("[supplement]\nalpha_v = 0.7\n").is_err());
        assert!(from("[loop]\ndelta = -0.1\n").is_err());
        assert!(from("[run]\nparallelism = 0\n").is_err());
        assert!(from("[run]\nbackend = \"grpc\"\n").is_err());
        assert!(from("[fusion]\nk = 0\n").is_err());
    }

    #[test]
    fn toml_roundtrip() {
        let cfg = RunConfig::default();
        let text = toml::to_string(&cfg).unwrap();
        assert_eq!(toml::from_str::<RunConfig>(&text).unwrap(), cfg);
    }
}
