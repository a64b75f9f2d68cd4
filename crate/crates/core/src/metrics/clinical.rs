use std::collections::{BTreeMap, HashMap};
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use super::MetricError;
use crate::graph::{EntityLabel, RadGraph, RelationKind};

pub const PATHOLOGY_COUNT: usize = 14;

/// Presence indicators for the 14 CheXbert pathologies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<u8>", into = "Vec<u8>")]
pub struct PathologyVector([u8; PATHOLOGY_COUNT]);

impl PathologyVector {
    pub fn new(values: [u8; PATHOLOGY_COUNT]) -> Result<Self, MetricError> {
        if values.iter().any(|&v| v > 1) {
            return Err(MetricError::Input("pathology indicators must be 0 or 1".into()));
        }
        Ok(PathologyVector(values))
    }

    pub fn values(&self) -> &[u8; PATHOLOGY_COUNT] {
        &self.0
    }
}

impl TryFrom<Vec<u8>> for PathologyVector {
    type Error = MetricError;

    fn try_from(v: Vec<u8>) -> Result<Self, Self::Error> {
        let arr: [u8; PATHOLOGY_COUNT] = v.try_into().map_err(|v: Vec<u8>| {
            MetricError::Input(format!(
                "pathology vector has {} entries (expected {PATHOLOGY_COUNT})",
                v.len()
            ))
        })?;
        PathologyVector::new(arr)
    }
}

impl From<PathologyVector> for Vec<u8> {
    fn from(v: PathologyVector) -> Self {
        v.0.to_vec()
    }
}

/// Cosine similarity of two indicator vectors. Two all-zero vectors count as
/// identical; exactly one all-zero vector scores 0.
pub fn chexbert_similarity(a: &PathologyVector, b: &PathologyVector) -> f64 {
    let dot: u32 = a.0.iter().zip(&b.0).map(|(&x, &y)| u32::from(x * y)).sum();
    let na: u32 = a.0.iter().map(|&x| u32::from(x)).sum();
    let nb: u32 = b.0.iter().map(|&x| u32::from(x)).sum();
    match (na, nb) {
        (0, 0) => 1.0,
        (0, _) | (_, 0) => 0.0,
        _ => f64::from(dot) / (f64::from(na) * f64::from(nb)).sqrt(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadGraphF1 {
    pub entity_f1: f64,
    pub relation_f1: f64,
    /// Mean of the entity and relation F1.
    pub combined: f64,
}

type EntityKey = (String, EntityLabel);

fn entity_key(tokens: &str, label: EntityLabel) -> EntityKey {
    (tokens.trim().to_lowercase(), label)
}

fn multiset<K: Eq + Hash>(keys: impl IntoIterator<Item = K>) -> HashMap<K, usize> {
    let mut m = HashMap::new();
    for k in keys {
        *m.entry(k).or_insert(0) += 1;
    }
    m
}

fn f1_of<K: Eq + Hash>(pred: &HashMap<K, usize>, reference: &HashMap<K, usize>) -> f64 {
    let n_pred: usize = pred.values().sum();
    let n_ref: usize = reference.values().sum();
    match (n_pred, n_ref) {
        (0, 0) => return 1.0,
        (0, _) | (_, 0) => return 0.0,
        _ => {}
    }
    let overlap: usize = pred
        .iter()
        .map(|(k, &c)| c.min(reference.get(k).copied().unwrap_or(0)))
        .sum();
    if overlap == 0 {
        return 0.0;
    }
    let p = overlap as f64 / n_pred as f64;
    let r = overlap as f64 / n_ref as f64;
    2.0 * p * r / (p + r)
}

fn entity_keys(g: &RadGraph) -> HashMap<EntityKey, usize> {
    multiset(g.entities.values().map(|e| entity_key(&e.tokens, e.label)))
}

fn relation_keys(g: &RadGraph) -> HashMap<(EntityKey, EntityKey, RelationKind), usize> {
    multiset(g.relations.iter().filter_map(|r| {
        let s = g.entity(&r.source)?;
        let t = g.entity(&r.target)?;
        Some((entity_key(&s.tokens, s.label), entity_key(&t.tokens, t.label), r.kind))
    }))
}

/// Entity and relation overlap between a predicted and a reference graph.
///
/// Entities match on case-folded surface form and label; relations match
/// when both endpoint keys and the kind agree. Token positions are ignored.
/// Each level scores 1 when both sides are empty and 0 when only one is.
pub fn radgraph_f1(pred: &RadGraph, reference: &RadGraph) -> RadGraphF1 {
    let entity_f1 = f1_of(&entity_keys(pred), &entity_keys(reference));
    let relation_f1 = f1_of(&relation_keys(pred), &relation_keys(reference));
    RadGraphF1 { entity_f1, relation_f1, combined: (entity_f1 + relation_f1) / 2.0 }
}

/// Affine composite over the other metrics; lower is better.
///
/// The shipped default weights are placeholders, not fitted coefficients.
/// Supply real ones through configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RadCliqConfig {
    pub bias: f64,
    pub weights: BTreeMap<String, f64>,
}

impl Default for RadCliqConfig {
    fn default() -> Self {
        let weights = [
            (super::RADGRAPH_F1, -1.0),
            (super::CHEXBERT, -0.5),
            (super::BLEU2, -0.25),
            (super::BERTSCORE, -0.25),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        RadCliqConfig { bias: 2.0, weights }
    }
}

pub fn radcliq(
    components: &BTreeMap<String, f64>,
    weights: &BTreeMap<String, f64>,
    bias: f64,
) -> Result<f64, MetricError> {
    let mut total = bias;
    for (name, w) in weights {
        let v = components
            .get(name)
            .ok_or_else(|| MetricError::MissingComponent(name.clone()))?;
        total += w * v;
    }
    Ok(total)
}
