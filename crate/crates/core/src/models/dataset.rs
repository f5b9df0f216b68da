use std::collections::HashMap;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, PrefError, Result};
use crate::rng::Rng;

/// Where a record's feature vector comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum FeatureSource {
    /// A fixed vector stored with the record.
    Inline(Vec<f64>),
    /// A learnable row of the dataset's item or context table.
    Table(usize),
}

/// One preference observation, winner first.
#[derive(Debug, Clone, PartialEq)]
pub struct PairRecord {
    /// `None` means the record carries no context features.
    pub context: Option<FeatureSource>,
    pub winner: FeatureSource,
    pub loser: FeatureSource,
}

/// Named, learnable feature vectors (tabular mode).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmbeddingTable {
    ids: Vec<String>,
    index: HashMap<String, usize>,
    dim: usize,
    values: Vec<f64>,
}

impl EmbeddingTable {
    fn intern(&mut self, id: &str) -> usize {
        if let Some(&i) = self.index.get(id) {
            return i;
        }
        let i = self.ids.len();
        self.ids.push(id.to_string());
        self.index.insert(id.to_string(), i);
        i
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_initialised(&self) -> bool {
        self.values.len() == self.ids.len() * self.dim && (self.dim > 0 || self.ids.is_empty())
    }

    pub fn get(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Draws every row from `N(0, scale^2)`.
    pub fn initialise(&mut self, dim: usize, scale: f64, rng: &mut Rng) -> Result<()> {
        let normal = Normal::new(0.0, scale).map_err(|e| PrefError::domain(e.to_string()))?;
        self.dim = dim;
        self.values = (0..self.ids.len() * dim).map(|_| normal.sample(rng)).collect();
        Ok(())
    }

    pub fn set_values(&mut self, dim: usize, values: Vec<f64>) -> Result<()> {
        check_len(self.ids.len() * dim, values.len())?;
        self.dim = dim;
        self.values = values;
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct TableJson {
    dim: usize,
    ids: Vec<String>,
    values: Vec<f64>,
}

impl Serialize for EmbeddingTable {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        TableJson { dim: self.dim, ids: self.ids.clone(), values: self.values.clone() }.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for EmbeddingTable {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let raw = TableJson::deserialize(deserializer)?;
        let mut table = EmbeddingTable::default();
        for id in &raw.ids {
            table.intern(id);
        }
        if table.len() != raw.ids.len() {
            return Err(serde::de::Error::custom("duplicate ids in embedding table"));
        }
        table.set_values(raw.dim, raw.values).map_err(serde::de::Error::custom)?;
        Ok(table)
    }
}

/// One JSONL line. Each slot is given either inline or by id.
#[derive(Debug, Default, Serialize, Deserialize)]
struct RawRecord {
    #[serde(skip_serializing_if = "Option::is_none")]
    context: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    ctx_id: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    winner: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    win_id: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    loser: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    lose_id: Option<String>,
}

/// Preference pairs `(x, y_w, y_l)` plus the tables backing id references.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PairDataset {
    records: Vec<PairRecord>,
    items: EmbeddingTable,
    contexts: EmbeddingTable,
}

impl PairDataset {
    /// Dataset of records with inline features only.
    pub fn from_inline(records: Vec<(Option<Vec<f64>>, Vec<f64>, Vec<f64>)>) -> Result<Self> {
        let mut data = PairDataset::default();
        for (x, w, l) in records {
            data.push(PairRecord {
                context: x.map(FeatureSource::Inline),
                winner: FeatureSource::Inline(w),
                loser: FeatureSource::Inline(l),
            })?;
        }
        Ok(data)
    }

    /// Appends a record whose winner, loser and context are given by id.
    pub fn push_ids(&mut self, ctx_id: Option<&str>, win_id: &str, lose_id: &str) -> Result<()> {
        let context = ctx_id.map(|c| FeatureSource::Table(self.contexts.intern(c)));
        let winner = FeatureSource::Table(self.items.intern(win_id));
        let loser = FeatureSource::Table(self.items.intern(lose_id));
        self.push(PairRecord { context, winner, loser })
    }

    pub fn push(&mut self, record: PairRecord) -> Result<()> {
        if record.winner == record.loser {
            return Err(PrefError::Data("a record's winner and loser must differ".into()));
        }
        for src in [Some(&record.winner), Some(&record.loser), record.context.as_ref()].into_iter().flatten() {
            if let FeatureSource::Inline(v) = src {
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(PrefError::Data("feature vectors must be finite".into()));
                }
            }
        }
        if let (FeatureSource::Table(a), FeatureSource::Table(b)) = (&record.winner, &record.loser) {
            debug_assert!(*a < self.items.len() && *b < self.items.len());
        }
        self.records.push(record);
        Ok(())
    }

    /// Parses JSONL; errors carry the 1-based line number.
    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut data = PairDataset::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let at = |msg: String| PrefError::Data(format!("line {}: {msg}", lineno + 1));
            let raw: RawRecord = serde_json::from_str(line).map_err(|e| at(e.to_string()))?;
            let context = match (raw.context, raw.ctx_id) {
                (Some(_), Some(_)) => return Err(at("both \"context\" and \"ctx_id\" given".into())),
                (Some(v), None) => Some(FeatureSource::Inline(v)),
                (None, Some(id)) => Some(FeatureSource::Table(data.contexts.intern(&id))),
                (None, None) => None,
            };
            let mut slot = |inline: Option<Vec<f64>>, id: Option<String>, name: &str| match (inline, id) {
                (Some(v), None) => Ok(FeatureSource::Inline(v)),
                (None, Some(id)) => Ok(FeatureSource::Table(data.items.intern(&id))),
                _ => Err(at(format!("exactly one of \"{name}\" and its id must be given"))),
            };
            let winner = slot(raw.winner, raw.win_id, "winner")?;
            let loser = slot(raw.loser, raw.lose_id, "loser")?;
            data.push(PairRecord { context, winner, loser }).map_err(|e| at(e.to_string()))?;
        }
        Ok(data)
    }

    /// One JSON object per record, in record order.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            let mut raw = RawRecord::default();
            match &r.context {
                Some(FeatureSource::Inline(v)) => raw.context = Some(v.clone()),
                Some(FeatureSource::Table(i)) => raw.ctx_id = Some(self.contexts.ids()[*i].clone()),
                None => {}
            }
            match &r.winner {
                FeatureSource::Inline(v) => raw.winner = Some(v.clone()),
                FeatureSource::Table(i) => raw.win_id = Some(self.items.ids()[*i].clone()),
            }
            match &r.loser {
                FeatureSource::Inline(v) => raw.loser = Some(v.clone()),
                FeatureSource::Table(i) => raw.lose_id = Some(self.items.ids()[*i].clone()),
            }
            out.push_str(&serde_json::to_string(&raw).expect("plain data serialises"));
            out.push('\n');
        }
        out
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[PairRecord] {
        &self.records
    }

    pub fn items(&self) -> &EmbeddingTable {
        &self.items
    }

    pub fn items_mut(&mut self) -> &mut EmbeddingTable {
        &mut self.items
    }

    pub fn contexts(&self) -> &EmbeddingTable {
        &self.contexts
    }

    pub fn contexts_mut(&mut self) -> &mut EmbeddingTable {
        &mut self.contexts
    }

    /// True when any record references a table row.
    pub fn is_tabular(&self) -> bool {
        !self.items.is_empty() || !self.contexts.is_empty()
    }

    /// Gives every item and context id a fresh Gaussian feature vector.
    pub fn init_tabular(&mut self, item_dim: usize, context_dim: usize, scale: f64, rng: &mut Rng) -> Result<()> {
        self.items.initialise(item_dim, scale, rng)?;
        self.contexts.initialise(context_dim, scale, rng)
    }

    /// Replaces the tables (e.g. with trained values from a saved model).
    pub fn with_tables(mut self, items: EmbeddingTable, contexts: EmbeddingTable) -> Result<Self> {
        for id in self.items.ids() {
            if items.position(id).is_none() {
                return Err(PrefError::Data(format!("item id {id:?} missing from the table")));
            }
        }
        for id in self.contexts.ids() {
            if contexts.position(id).is_none() {
                return Err(PrefError::Data(format!("context id {id:?} missing from the table")));
            }
        }
        let remap_items: Vec<usize> = self.items.ids().iter().map(|id| items.position(id).unwrap()).collect();
        let remap_ctx: Vec<usize> = self.contexts.ids().iter().map(|id| contexts.position(id).unwrap()).collect();
        let remap = |src: &mut FeatureSource, map: &[usize]| {
            if let FeatureSource::Table(i) = src {
                *i = map[*i];
            }
        };
        for r in &mut self.records {
            remap(&mut r.winner, &remap_items);
            remap(&mut r.loser, &remap_items);
            if let Some(c) = r.context.as_mut() {
                remap(c, &remap_ctx);
            }
        }
        self.items = items;
        self.contexts = contexts;
        Ok(self)
    }

    pub(crate) fn item_features<'a>(&'a self, src: &'a FeatureSource) -> Result<&'a [f64]> {
        Self::lookup(&self.items, src, "item")
    }

    pub(crate) fn context_features<'a>(&'a self, src: Option<&'a FeatureSource>) -> Result<&'a [f64]> {
        match src {
            None => Ok(&[]),
            Some(src) => Self::lookup(&self.contexts, src, "context"),
        }
    }

    fn lookup<'a>(table: &'a EmbeddingTable, src: &'a FeatureSource, what: &str) -> Result<&'a [f64]> {
        match src {
            FeatureSource::Inline(v) => Ok(v),
            FeatureSource::Table(i) => {
                if !table.is_initialised() {
                    return Err(PrefError::State(format!("{what} table has no feature values yet")));
                }
                Ok(table.get(*i))
            }
        }
    }

    /// Resolved `(context, winner, loser)` features of record `i`.
    pub fn features(&self, i: usize) -> Result<(&[f64], &[f64], &[f64])> {
        let r = &self.records[i];
        Ok((
            self.context_features(r.context.as_ref())?,
            self.item_features(&r.winner)?,
            self.item_features(&r.loser)?,
        ))
    }
}
