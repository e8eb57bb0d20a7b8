//! Evidence extraction: dictionary tagging, alignment to the standard
//! comparison table, per-type weight normalization and the abnormal boost.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::scalar::Weight;
use crate::text::normalize_name;
use crate::types::EntityType;

#[derive(Debug, thiserror::Error)]
pub enum EntityError {
    #[error("degenerate weights: {0}")]
    DegenerateWeights(String),
    #[error("reading alignment table {path}: {reason}")]
    Table { path: PathBuf, reason: String },
    #[error("alignment table row {row}: unknown entity type `{code}`")]
    TableType { row: usize, code: String },
    #[error("invalid record: {0}")]
    InvalidRecord(String),
}

/// One electronic medical record.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmrRecord {
    pub case_id: String,
    /// Chief complaint.
    pub cc: String,
    /// History of present illness.
    pub hpi: String,
    /// Past medical history.
    pub pmh: String,
    /// Physical examination.
    pub pe: String,
    /// Auxiliary examination (labs, imaging).
    pub ae: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_labels: Option<Vec<String>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Field {
    Cc,
    Hpi,
    Pmh,
    Pe,
    Ae,
}

impl Field {
    pub const ALL: [Field; 5] = [Field::Cc, Field::Hpi, Field::Pmh, Field::Pe, Field::Ae];

    pub fn header(self) -> &'static str {
        match self {
            Field::Cc => "CHIEF COMPLAINT",
            Field::Hpi => "HISTORY OF PRESENT ILLNESS",
            Field::Pmh => "PAST MEDICAL HISTORY",
            Field::Pe => "PHYSICAL EXAMINATION",
            Field::Ae => "AUXILIARY EXAMINATION",
        }
    }
}

impl EmrRecord {
    pub fn field(&self, field: Field) -> &str {
        match field {
            Field::Cc => &self.cc,
            Field::Hpi => &self.hpi,
            Field::Pmh => &self.pmh,
            Field::Pe => &self.pe,
            Field::Ae => &self.ae,
        }
    }

    pub fn validate(&self) -> Result<(), EntityError> {
        if self.case_id.trim().is_empty() {
            return Err(EntityError::InvalidRecord("case_id must be nonempty".into()));
        }
        Ok(())
    }
}

/// Templated record summaries fed to the experts.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Summary {
    /// All five fields under fixed section headers.
    pub full: String,
    /// Chief complaint and past history.
    pub base: String,
    /// Physical and auxiliary examinations.
    pub exam: String,
}

fn section(field: Field, body: &str) -> String {
    format!("{}: {}", field.header(), body)
}

fn sections(record: &EmrRecord, fields: &[Field], keep_empty: bool) -> String {
    fields
        .iter()
        .filter(|f| keep_empty || !record.field(**f).is_empty())
        .map(|f| section(*f, record.field(*f)))
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn summarize(record: &EmrRecord) -> Summary {
    Summary {
        full: sections(record, &Field::ALL, true),
        base: sections(record, &[Field::Cc, Field::Pmh], false),
        exam: sections(record, &[Field::Pe, Field::Ae], false),
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignmentRow {
    pub alias: String,
    pub canonical: String,
    pub entity_type: EntityType,
}

/// The standard comparison table: alias → (canonical term, type).
#[derive(Clone, Debug, Default)]
pub struct AlignmentTable {
    rows: HashMap<String, AlignmentRow>,
    max_alias_chars: usize,
}

impl AlignmentTable {
    pub fn from_rows(rows: impl IntoIterator<Item = AlignmentRow>) -> Self {
        let mut table = AlignmentTable::default();
        let mut canonicals = Vec::new();
        for row in rows {
            let row = AlignmentRow {
                alias: normalize_name(&row.alias),
                canonical: normalize_name(&row.canonical),
                entity_type: row.entity_type,
            };
            canonicals.push(row.clone());
            table.insert(row.alias.clone(), row);
        }
        // Canonical terms are aliases of themselves unless listed explicitly.
        for row in canonicals {
            let key = row.canonical.clone();
            table.insert(key, row);
        }
        table
    }

    fn insert(&mut self, key: String, row: AlignmentRow) {
        if key.is_empty() {
            return;
        }
        self.max_alias_chars = self.max_alias_chars.max(key.chars().count());
        self.rows.entry(key).or_insert(row);
    }

    /// Reads a CSV with header `alias,canonical,entity_type`.
    pub fn load(path: &Path) -> Result<Self, EntityError> {
        let file = File::open(path).map_err(|e| EntityError::Table {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        Self::from_csv(file, path)
    }

    pub fn from_csv<R: std::io::Read>(reader: R, origin: &Path) -> Result<Self, EntityError> {
        let mut csv = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let mut rows = Vec::new();
        for (i, rec) in csv.records().enumerate() {
            let rec = rec.map_err(|e| EntityError::Table {
                path: origin.to_path_buf(),
                reason: e.to_string(),
            })?;
            if rec.len() != 3 {
                return Err(EntityError::Table {
                    path: origin.to_path_buf(),
                    reason: format!("row {}: expected 3 columns", i + 2),
                });
            }
            let entity_type = rec[2].parse().map_err(|_| EntityError::TableType {
                row: i + 2,
                code: rec[2].to_string(),
            })?;
            rows.push(AlignmentRow {
                alias: rec[0].to_string(),
                canonical: rec[1].to_string(),
                entity_type,
            });
        }
        Ok(Self::from_rows(rows))
    }

    pub fn get(&self, alias: &str) -> Option<&AlignmentRow> {
        self.rows.get(&normalize_name(alias))
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// A tagged span of record text.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mention {
    pub surface: String,
    /// Raw type label emitted by the tagger; may fall outside the known set.
    pub entity_type: String,
    pub field: Option<Field>,
    /// Character offsets within the field, end exclusive.
    pub span: (usize, usize),
}

/// Pluggable named-entity tagger.
pub trait EntityTagger: Send + Sync {
    fn tag_text(&self, text: &str) -> Vec<Mention>;

    fn tag_record(&self, record: &EmrRecord) -> Vec<Mention> {
        Field::ALL
            .iter()
            .flat_map(|&field| {
                self.tag_text(record.field(field)).into_iter().map(move |mut m| {
                    m.field = Some(field);
                    m
                })
            })
            .collect()
    }
}

/// Longest-match dictionary tagger over the alias column of the table.
pub struct DictionaryTagger<'a> {
    table: &'a AlignmentTable,
}

impl<'a> DictionaryTagger<'a> {
    pub fn new(table: &'a AlignmentTable) -> Self {
        Self { table }
    }
}

fn fold_char(c: char) -> char {
    if c.is_whitespace() {
        ' '
    } else {
        c.to_lowercase().next().unwrap_or(c)
    }
}

impl EntityTagger for DictionaryTagger<'_> {
    fn tag_text(&self, text: &str) -> Vec<Mention> {
        let original: Vec<char> = text.chars().collect();
        let folded: Vec<char> = original.iter().copied().map(fold_char).collect();
        let n = folded.len();
        let word = |c: char| c.is_ascii_alphanumeric();
        let mut out = Vec::new();
        let mut i = 0;
        while i < n {
            let start_ok = i == 0 || !word(folded[i - 1]) || !word(folded[i]);
            let mut matched = None;
            if start_ok {
                let longest = self.table.max_alias_chars.min(n - i);
                for len in (1..=longest).rev() {
                    let end = i + len;
                    let end_ok = end == n || !word(folded[end]) || !word(folded[end - 1]);
                    if !end_ok {
                        continue;
                    }
                    let key: String = folded[i..end].iter().collect();
                    if let Some(row) = self.table.rows.get(&key) {
                        matched = Some((len, row.entity_type));
                        break;
                    }
                }
            }
            match matched {
                Some((len, ty)) => {
                    out.push(Mention {
                        surface: original[i..i + len].iter().collect(),
                        entity_type: ty.code().to_string(),
                        field: None,
                        span: (i, i + len),
                    });
                    i += len;
                }
                None => i += 1,
            }
        }
        out
    }
}

pub fn tag_entities(record: &EmrRecord, table: &AlignmentTable) -> Vec<Mention> {
    DictionaryTagger::new(table).tag_record(record)
}

/// A standardized evidence entity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StdEntity<S> {
    pub surface: String,
    pub canonical: String,
    pub entity_type: EntityType,
    pub base_weight: S,
    pub abnormal: bool,
    pub effective_weight: S,
}

/// Canonicalizes mentions, deduplicating by `(canonical, type)`.
///
/// A mention without a table row keeps its surface as canonical name and
/// its tagger type; if that type is not a known category it is dropped.
/// Output is sorted by `(canonical, type)`.
pub fn align_entities<S: Weight>(mentions: &[Mention], table: &AlignmentTable) -> Vec<StdEntity<S>> {
    let mut out: BTreeMap<(String, EntityType), StdEntity<S>> = BTreeMap::new();
    for m in mentions {
        let (canonical, ty) = match table.get(&m.surface) {
            Some(row) => (row.canonical.clone(), row.entity_type),
            None => match m.entity_type.parse::<EntityType>() {
                Ok(ty) => (normalize_name(&m.surface), ty),
                Err(_) => continue,
            },
        };
        if canonical.is_empty() {
            continue;
        }
        out.entry((canonical.clone(), ty)).or_insert_with(|| StdEntity {
            surface: m.surface.clone(),
            canonical,
            entity_type: ty,
            base_weight: S::zero(),
            abnormal: false,
            effective_weight: S::zero(),
        });
    }
    out.into_values().collect()
}

/// Normalized per-type base weights; values sum to one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TypeWeights<S>(BTreeMap<EntityType, S>);

impl<S: Weight> TypeWeights<S> {
    pub fn get(&self, ty: EntityType) -> S {
        self.0.get(&ty).cloned().unwrap_or_else(S::zero)
    }

    pub fn as_map(&self) -> &BTreeMap<EntityType, S> {
        &self.0
    }

    /// Equal weight on every category.
    pub fn uniform() -> Self {
        let raw = EntityType::ALL.iter().map(|&t| (t, S::one())).collect();
        normalize_type_weights(&raw).expect("uniform weights are nondegenerate")
    }

    pub fn total(&self) -> S {
        sum(self.0.values())
    }
}

fn sum<'a, S: Weight + 'a>(values: impl Iterator<Item = &'a S>) -> S {
    values.fold(S::zero(), |acc, v| acc + v.clone())
}

pub fn normalize_type_weights<S: Weight>(raw: &BTreeMap<EntityType, S>) -> Result<TypeWeights<S>, EntityError> {
    if let Some((t, v)) = raw.iter().find(|(_, v)| !v.is_admissible()) {
        return Err(EntityError::DegenerateWeights(format!("weight for {t} is {v}")));
    }
    let total = sum(raw.values());
    if !(total > S::zero() && total.is_admissible()) {
        return Err(EntityError::DegenerateWeights("no positive weight".into()));
    }
    Ok(TypeWeights(
        raw.iter().map(|(&t, v)| (t, v.clone() / total.clone())).collect(),
    ))
}

/// Sets base weights from `weights` and multiplies abnormal entities by `boost`.
pub fn apply_abnormal_boost<S: Weight>(
    entities: &mut [StdEntity<S>],
    weights: &TypeWeights<S>,
    abnormal: &BTreeSet<String>,
    boost: S,
) {
    for e in entities.iter_mut() {
        e.base_weight = weights.get(e.entity_type);
        e.abnormal = abnormal.contains(&e.canonical);
        e.effective_weight = if e.abnormal {
            boost.clone() * e.base_weight.clone()
        } else {
            e.base_weight.clone()
        };
    }
}
