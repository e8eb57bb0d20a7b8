//! Final score fusion: composite score, ICD standardization penalty and
//! Top-k ranking.

use std::cmp::Ordering;
use std::fs::File;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;
use crate::text::{edit_similarity, normalize_name};

#[derive(Debug, thiserror::Error)]
pub enum FusionError {
    #[error("{name} = {value} is outside [0, 1]")]
    OutOfRange { name: &'static str, value: f64 },
    #[error("ICD table is empty")]
    EmptyTable,
    #[error("reading ICD table {path}: {reason}")]
    Table { path: PathBuf, reason: String },
    #[error("invalid fusion config: {0}")]
    Config(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar", default, deny_unknown_fields)]
pub struct FusionConfig<S> {
    /// Weights on evidence, logic and connectivity scores.
    pub beta: [S; 3],
    pub w_icd: S,
    pub b_icd: S,
    pub tau_thr: S,
    pub gamma: S,
    pub k: usize,
}

impl<S: Scalar> Default for FusionConfig<S> {
    fn default() -> Self {
        Self {
            beta: [S::lit(0.4), S::lit(0.4), S::lit(0.2)],
            w_icd: S::lit(0.2),
            b_icd: S::lit(0.2),
            tau_thr: S::lit(0.5),
            gamma: S::lit(2.0),
            k: 5,
        }
    }
}

impl<S: Scalar> FusionConfig<S> {
    pub fn validate(&self) -> Result<(), FusionError> {
        let sum: S = self.beta.iter().copied().sum();
        if self.beta.iter().any(|b| *b < S::zero()) {
            return Err(FusionError::Config("beta weights must be nonnegative".into()));
        }
        if (sum - S::one()).abs() > S::lit(1e-9) {
            return Err(FusionError::Config("beta must sum to 1".into()));
        }
        if !self.w_icd.in_unit_interval() {
            return Err(FusionError::Config("w_icd must lie in [0, 1]".into()));
        }
        if !(self.b_icd >= S::zero()) {
            return Err(FusionError::Config("b_icd must be nonnegative".into()));
        }
        if !(self.tau_thr > S::zero() && self.tau_thr <= S::one()) {
            return Err(FusionError::Config("tau_thr must lie in (0, 1]".into()));
        }
        if !(self.gamma > S::zero()) {
            return Err(FusionError::Config("gamma must be positive".into()));
        }
        if self.k == 0 {
            return Err(FusionError::Config("k must be at least 1".into()));
        }
        Ok(())
    }
}

fn unit<S: Scalar>(name: &'static str, value: S) -> Result<S, FusionError> {
    if value.in_unit_interval() {
        Ok(value)
    } else {
        Err(FusionError::OutOfRange {
            name,
            value: value.as_f64(),
        })
    }
}

/// Core composite score `b1*F_evid + b2*F_logic + b3*Omega`.
pub fn composite<S: Scalar>(f_evid: S, f_logic: S, omega: S, config: &FusionConfig<S>) -> Result<S, FusionError> {
    let [b1, b2, b3] = config.beta;
    Ok(b1 * unit("F_evid", f_evid)? + b2 * unit("F_logic", f_logic)? + b3 * unit("Omega", omega)?)
}

/// ICD-10 terminology rows.
#[derive(Clone, Debug, Default)]
pub struct IcdTable {
    rows: Vec<(String, String)>,
}

impl IcdTable {
    pub fn from_rows(rows: impl IntoIterator<Item = (String, String)>) -> Self {
        Self {
            rows: rows
                .into_iter()
                .map(|(code, term)| (code.trim().to_string(), normalize_name(&term)))
                .collect(),
        }
    }

    /// Reads a CSV with header `code,term`.
    pub fn load(path: &Path) -> Result<Self, FusionError> {
        let err = |reason: String| FusionError::Table {
            path: path.to_path_buf(),
            reason,
        };
        let file = File::open(path).map_err(|e| err(e.to_string()))?;
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
        let mut rows = Vec::new();
        for rec in reader.records() {
            let rec = rec.map_err(|e| err(e.to_string()))?;
            if rec.len() != 2 {
                return Err(err(format!("expected `code,term`, got {} columns", rec.len())));
            }
            rows.push((rec[0].to_string(), rec[1].to_string()));
        }
        Ok(Self::from_rows(rows))
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Best-matching `(code, term, similarity)`; first row wins ties.
    pub fn best_match(&self, name: &str) -> Option<(&str, &str, f64)> {
        let mut best: Option<(&str, &str, f64)> = None;
        for (code, term) in &self.rows {
            let sim = edit_similarity(name, term);
            if best.is_none_or(|(_, _, b)| sim > b) {
                best = Some((code, term, sim));
            }
        }
        best
    }
}

/// Maximum normalized edit similarity of `disease` against the table.
pub fn icd_similarity<S: Scalar>(disease: &str, table: &IcdTable) -> Result<S, FusionError> {
    table
        .best_match(disease)
        .map(|(_, _, s)| S::lit(s))
        .ok_or(FusionError::EmptyTable)
}

/// Standardization penalty: 1 at or above `tau_thr`, `(s/tau)^gamma` below.
pub fn penalty<S: Scalar>(s_icd: S, config: &FusionConfig<S>) -> S {
    if s_icd >= config.tau_thr {
        S::one()
    } else {
        (s_icd / config.tau_thr).powf(config.gamma)
    }
}

pub fn final_score<S: Scalar>(h: S, s_icd: S, config: &FusionConfig<S>) -> S {
    penalty(s_icd, config) * (h * (S::one() - config.w_icd) + config.b_icd * s_icd)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Primary,
    Supplement,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct RankedDiagnosis<S> {
    pub disease: String,
    pub f_evid: S,
    pub f_logic: S,
    pub omega: S,
    pub h: S,
    pub s_icd: S,
    pub phi: S,
    pub f_fin: S,
    /// 1-based; 0 until ranked.
    pub rank: usize,
    pub provenance: Provenance,
}

impl<S: Scalar> RankedDiagnosis<S> {
    /// Scores one candidate from its components.
    pub fn score(
        disease: impl Into<String>,
        provenance: Provenance,
        f_evid: S,
        f_logic: S,
        omega: S,
        s_icd: S,
        config: &FusionConfig<S>,
    ) -> Result<Self, FusionError> {
        let h = composite(f_evid, f_logic, omega, config)?;
        let s_icd = unit("S_icd", s_icd)?;
        Ok(Self {
            disease: disease.into(),
            f_evid,
            f_logic,
            omega,
            h,
            s_icd,
            phi: penalty(s_icd, config),
            f_fin: final_score(h, s_icd, config),
            rank: 0,
            provenance,
        })
    }
}

pub fn by_final_score<S: Scalar>(a: &RankedDiagnosis<S>, b: &RankedDiagnosis<S>) -> Ordering {
    b.f_fin
        .partial_cmp(&a.f_fin)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.disease.cmp(&b.disease))
        .then_with(|| a.provenance.cmp(&b.provenance))
}

/// Sorts by final score descending (name ascending on ties), keeps the first
/// `k` and assigns ranks from 1.
pub fn rank_topk<S: Scalar>(mut candidates: Vec<RankedDiagnosis<S>>, k: usize) -> Vec<RankedDiagnosis<S>> {
    if candidates.is_empty() {
        log::warn!("ranking an empty candidate list");
        return candidates;
    }
    candidates.sort_by(by_final_score);
    candidates.truncate(k);
    for (i, c) in candidates.iter_mut().enumerate() {
        c.rank = i + 1;
    }
    candidates
}
