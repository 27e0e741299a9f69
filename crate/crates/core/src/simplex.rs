//! Compositional data types and descriptive statistics.
//!
//! Count vectors are turned into compositions by [`close`], optionally with
//! an additive pseudo-count so every part is strictly positive. Plate
//! appearance data arrives with 14 outcome categories; [`aggregate_14_to_6`]
//! folds them into the six modeled components.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on `sum(parts) == 1` for a [`Composition`].
pub const SUM_TOLERANCE: f64 = 1e-12;

/// Default additive pseudo-count applied at closure time.
pub const DEFAULT_SMOOTHING: f64 = 0.5;

/// Default minimum total count (plate appearances) for a row to be kept.
pub const DEFAULT_MIN_TOTAL: u64 = 20;

/// Canonical 14-outcome column order.
pub const RAW14_COMPONENTS: [&str; 14] = [
    "fb_hr",
    "fb_triple",
    "fb_double",
    "fb_single",
    "gb_hr",
    "gb_triple",
    "gb_double",
    "gb_single",
    "fly_out",
    "ground_out",
    "strike_out",
    "interference",
    "hbp",
    "bb",
];

/// Six modeled components, in the order used throughout the crate.
pub const SIX_COMPONENTS: [&str; 6] = ["hr", "triple", "double", "single", "out", "other"];

// For each of the six outputs, the raw14 indices that feed it.
const AGGREGATION: [&[usize]; 6] = [
    &[0, 4],
    &[1, 5],
    &[2, 6],
    &[3, 7],
    &[8, 9, 10],
    &[11, 12, 13],
];

/// Ordered, unique component labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct ComponentSchema {
    names: Vec<String>,
}

impl ComponentSchema {
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Result<Self> {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        if names.len() < 2 {
            return Err(Error::InvalidSchema(format!(
                "need at least 2 components, got {}",
                names.len()
            )));
        }
        let mut seen = std::collections::BTreeSet::new();
        for n in &names {
            if !seen.insert(n.as_str()) {
                return Err(Error::InvalidSchema(format!("duplicate component {n:?}")));
            }
        }
        Ok(Self { names })
    }

    pub fn six() -> Self {
        Self::new(SIX_COMPONENTS).expect("static schema")
    }

    pub fn raw14() -> Self {
        Self::new(RAW14_COMPONENTS).expect("static schema")
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

impl TryFrom<Vec<String>> for ComponentSchema {
    type Error = Error;
    fn try_from(v: Vec<String>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<ComponentSchema> for Vec<String> {
    fn from(s: ComponentSchema) -> Self {
        s.names
    }
}

/// Non-negative outcome counts for one observation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct OutcomeCounts(pub Vec<u64>);

impl OutcomeCounts {
    pub fn total(&self) -> u64 {
        self.0.iter().sum()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// A point on the unit simplex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Composition(Vec<f64>);

impl Composition {
    pub fn new(parts: Vec<f64>) -> Result<Self> {
        if parts.len() < 2 {
            return Err(Error::InvalidComposition("need at least 2 parts".into()));
        }
        if let Some(p) = parts.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::InvalidComposition(format!("part {p} outside [0, 1]")));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::InvalidComposition(format!("parts sum to {sum}")));
        }
        Ok(Self(parts))
    }

    /// Normalizes positive weights to sum to one.
    pub fn from_weights(weights: &[f64]) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if total.is_nan() || total <= 0.0 || weights.iter().any(|w| *w < 0.0 || !w.is_finite()) {
            return Err(Error::InvalidComposition(
                "weights must be non-negative with a positive sum".into(),
            ));
        }
        Self::new(weights.iter().map(|w| w / total).collect())
    }

    pub fn parts(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// True when every part is strictly positive.
    pub fn is_interior(&self) -> bool {
        self.0.iter().all(|&p| p > 0.0)
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl AsRef<[f64]> for Composition {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Closure of a count vector: `(c_j + s) / (total + k s)`.
pub fn close(counts: &OutcomeCounts, smoothing: f64) -> Result<Composition> {
    if !(smoothing.is_finite() && smoothing >= 0.0) {
        return Err(Error::InvalidParams(format!(
            "smoothing must be finite and >= 0, got {smoothing}"
        )));
    }
    let k = counts.len() as f64;
    let denom = counts.total() as f64 + k * smoothing;
    if denom <= 0.0 {
        return Err(Error::EmptyClosure);
    }
    let parts = counts
        .0
        .iter()
        .map(|&c| (c as f64 + smoothing) / denom)
        .collect();
    Composition::new(parts)
}

/// Folds the 14 raw plate-appearance outcomes into the six components.
pub fn aggregate_14_to_6(schema: &ComponentSchema, raw: &OutcomeCounts) -> Result<OutcomeCounts> {
    if schema.names().iter().map(String::as_str).ne(RAW14_COMPONENTS) {
        return Err(Error::SchemaMismatch(format!(
            "expected the 14-outcome schema, got {:?}",
            schema.names()
        )));
    }
    if raw.len() != RAW14_COMPONENTS.len() {
        return Err(Error::SchemaMismatch(format!(
            "expected 14 counts, got {}",
            raw.len()
        )));
    }
    Ok(OutcomeCounts(
        AGGREGATION
            .iter()
            .map(|idx| idx.iter().map(|&i| raw.0[i]).sum())
            .collect(),
    ))
}

/// Age cut points: `age <= young_max` is young, `age >= experienced_min`
/// is experienced, anything between is middle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgeGrouping {
    pub young_max: u32,
    pub experienced_min: u32,
}

impl Default for AgeGrouping {
    fn default() -> Self {
        Self {
            young_max: 26,
            experienced_min: 35,
        }
    }
}

impl AgeGrouping {
    pub fn new(young_max: u32, experienced_min: u32) -> Result<Self> {
        if young_max >= experienced_min {
            return Err(Error::Config(format!(
                "young_max ({young_max}) must be below experienced_min ({experienced_min})"
            )));
        }
        Ok(Self {
            young_max,
            experienced_min,
        })
    }

    pub fn assign(&self, age: u32) -> AgeGroup {
        if age <= self.young_max {
            AgeGroup::Young
        } else if age >= self.experienced_min {
            AgeGroup::Experienced
        } else {
            AgeGroup::Middle
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AgeGroup {
    Young,
    Middle,
    Experienced,
}

impl AgeGroup {
    pub fn label(self) -> &'static str {
        match self {
            AgeGroup::Young => "young",
            AgeGroup::Middle => "middle",
            AgeGroup::Experienced => "experienced",
        }
    }

    pub fn from_label(s: &str) -> Option<Self> {
        match s {
            "young" => Some(AgeGroup::Young),
            "middle" => Some(AgeGroup::Middle),
            "experienced" => Some(AgeGroup::Experienced),
            _ => None,
        }
    }
}

impl std::fmt::Display for AgeGroup {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

pub fn assign_age_group(age: u32, grouping: &AgeGrouping) -> AgeGroup {
    grouping.assign(age)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowMeta {
    pub player_id: String,
    pub season: i32,
    pub age: u32,
    pub bat_hand: String,
    pub pitch_hand: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PanelRow {
    #[serde(flatten)]
    pub meta: RowMeta,
    pub group: String,
    pub counts: OutcomeCounts,
}

/// Observations sharing one component schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Panel {
    pub schema: ComponentSchema,
    pub rows: Vec<PanelRow>,
}

/// Row attribute used to split a panel into comparison groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupKey {
    #[default]
    AgeGroup,
    BatHand,
    PitchHand,
    Season,
}

impl GroupKey {
    pub fn label_of(self, row: &PanelRow) -> String {
        match self {
            GroupKey::AgeGroup => row.group.clone(),
            GroupKey::BatHand => row.meta.bat_hand.clone(),
            GroupKey::PitchHand => row.meta.pitch_hand.clone(),
            GroupKey::Season => row.meta.season.to_string(),
        }
    }
}

impl std::str::FromStr for GroupKey {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "age_group" | "group" => Ok(GroupKey::AgeGroup),
            "bat_hand" => Ok(GroupKey::BatHand),
            "pitch_hand" => Ok(GroupKey::PitchHand),
            "season" => Ok(GroupKey::Season),
            other => Err(Error::Config(format!("unknown group key {other:?}"))),
        }
    }
}

impl Panel {
    pub fn new(schema: ComponentSchema, rows: Vec<PanelRow>) -> Result<Self> {
        for (i, r) in rows.iter().enumerate() {
            if r.counts.len() != schema.len() {
                return Err(Error::SchemaMismatch(format!(
                    "row {i} has {} counts, schema has {}",
                    r.counts.len(),
                    schema.len()
                )));
            }
        }
        Ok(Self { schema, rows })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Smoothed closure of every row.
    pub fn compositions(&self, smoothing: f64) -> Result<Vec<Composition>> {
        self.rows.iter().map(|r| close(&r.counts, smoothing)).collect()
    }

    /// Rows whose group label (under `key`) equals `label`.
    pub fn subset(&self, key: GroupKey, label: &str) -> Panel {
        Panel {
            schema: self.schema.clone(),
            rows: self
                .rows
                .iter()
                .filter(|r| key.label_of(r) == label)
                .cloned()
                .collect(),
        }
    }

    pub fn filter_season(&self, season: i32) -> Panel {
        Panel {
            schema: self.schema.clone(),
            rows: self
                .rows
                .iter()
                .filter(|r| r.meta.season == season)
                .cloned()
                .collect(),
        }
    }

    /// Drops rows whose total count is below `min_total`; returns the kept
    /// panel and the number dropped.
    pub fn filter_min_total(&self, min_total: u64) -> (Panel, usize) {
        let (keep, drop): (Vec<_>, Vec<_>) = self
            .rows
            .iter()
            .cloned()
            .partition(|r| r.counts.total() >= min_total);
        (
            Panel {
                schema: self.schema.clone(),
                rows: keep,
            },
            drop.len(),
        )
    }

    /// Distinct group labels under `key`, in canonical order.
    pub fn group_labels(&self, key: GroupKey) -> Vec<String> {
        let mut labels: Vec<String> = self.rows.iter().map(|r| key.label_of(r)).collect();
        sort_group_labels(&mut labels);
        labels.dedup();
        labels
    }
}

/// Sorts labels so age groups come out young, middle, experienced and
/// anything else lexicographically after them.
pub fn sort_group_labels(labels: &mut [String]) {
    labels.sort_by(|a, b| {
        let ka = (AgeGroup::from_label(a).map_or(3, |g| g as u8), a.as_str());
        let kb = (AgeGroup::from_label(b).map_or(3, |g| g as u8), b.as_str());
        ka.cmp(&kb)
    });
}

/// Symmetric correlation matrix with optional (undefined) entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    pub components: Vec<String>,
    pub n: usize,
    pub values: Vec<Vec<Option<f64>>>,
}

impl CorrelationMatrix {
    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.values[i][j]
    }

    /// Components whose variance is zero, making their row undefined.
    pub fn undefined_components(&self) -> Vec<&str> {
        (0..self.components.len())
            .filter(|&i| self.values[i][i].is_none())
            .map(|i| self.components[i].as_str())
            .collect()
    }
}

/// Pearson correlations between components of row compositions.
pub fn correlation_of_rows(components: &[String], rows: &[Vec<f64>]) -> Result<CorrelationMatrix> {
    let n = rows.len();
    if n < 3 {
        return Err(Error::InsufficientData(format!(
            "correlation needs at least 3 rows, got {n}"
        )));
    }
    let k = components.len();
    let mut mean = vec![0.0; k];
    for r in rows {
        for (m, x) in mean.iter_mut().zip(r) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut cov = vec![vec![0.0; k]; k];
    for r in rows {
        for i in 0..k {
            let di = r[i] - mean[i];
            for j in i..k {
                cov[i][j] += di * (r[j] - mean[j]);
            }
        }
    }
    let sd: Vec<f64> = (0..k).map(|i| cov[i][i].sqrt()).collect();
    let scale = mean.iter().map(|m| m.abs()).fold(1.0_f64, f64::max);
    let defined: Vec<bool> = sd
        .iter()
        .map(|&s| s > 1e-14 * scale * (n as f64).sqrt())
        .collect();
    let mut values = vec![vec![None; k]; k];
    for i in 0..k {
        for j in i..k {
            if defined[i] && defined[j] {
                let r = if i == j {
                    1.0
                } else {
                    (cov[i][j] / (sd[i] * sd[j])).clamp(-1.0, 1.0)
                };
                values[i][j] = Some(r);
                values[j][i] = Some(r);
            }
        }
    }
    Ok(CorrelationMatrix {
        components: components.to_vec(),
        n,
        values,
    })
}

/// Pearson correlation of the smoothed row compositions, optionally
/// restricted to one group label.
pub fn pearson_correlation(
    panel: &Panel,
    subset: Option<(GroupKey, &str)>,
    smoothing: f64,
) -> Result<CorrelationMatrix> {
    let rows: Vec<Vec<f64>> = panel
        .rows
        .iter()
        .filter(|r| subset.is_none_or(|(key, label)| key.label_of(r) == label))
        .map(|r| close(&r.counts, smoothing).map(Composition::into_inner))
        .collect::<Result<_>>()?;
    correlation_of_rows(panel.schema.names(), &rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProportionTable {
    pub components: Vec<String>,
    pub groups: Vec<String>,
    /// `values[g][j]`: share of component `j` among all outcomes of group `g`.
    pub values: Vec<Vec<f64>>,
    pub totals: Vec<u64>,
}

/// Group-level proportions: summed counts per component over the group's
/// total count.
pub fn descriptive_proportions(panel: &Panel, key: GroupKey) -> Result<ProportionTable> {
    let k = panel.schema.len();
    let mut sums: BTreeMap<String, Vec<u64>> = BTreeMap::new();
    for r in &panel.rows {
        let acc = sums.entry(key.label_of(r)).or_insert_with(|| vec![0; k]);
        for (a, c) in acc.iter_mut().zip(&r.counts.0) {
            *a += c;
        }
    }
    if sums.is_empty() {
        return Err(Error::InsufficientData("panel has no rows".into()));
    }
    let mut groups: Vec<String> = sums.keys().cloned().collect();
    sort_group_labels(&mut groups);
    let mut values = Vec::with_capacity(groups.len());
    let mut totals = Vec::with_capacity(groups.len());
    for g in &groups {
        let s = &sums[g];
        let total: u64 = s.iter().sum();
        if total == 0 {
            return Err(Error::EmptyGroup(g.clone()));
        }
        values.push(s.iter().map(|&c| c as f64 / total as f64).collect());
        totals.push(total);
    }
    Ok(ProportionTable {
        components: panel.schema.names().to_vec(),
        groups,
        values,
        totals,
    })
}
