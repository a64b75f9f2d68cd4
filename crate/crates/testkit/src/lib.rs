//! Random fixtures and brute-force reference computations for tests.
//!
//! Everything here works on plain data (strings, indices, JSON) and shares no
//! code with the library under test, so the reference computations stay
//! independent of the implementations they check.

use std::collections::BTreeSet;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Map, Value};

pub const LABELS: [&str; 4] = ["ANAT-DP", "OBS-DP", "OBS-DA", "OBS-U"];
pub const KINDS: [&str; 3] = ["modify", "located_at", "suggestive_of"];

const VOCAB: [&str; 10] = [
    "lungs", "clear", "effusion", "pleural", "heart", "enlarged", "opacity", "left", "base", "edema",
];

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawEntity {
    pub id: String,
    pub tokens: String,
    pub label: &'static str,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawGraph {
    pub entities: Vec<RawEntity>,
    /// (source index, target index, kind)
    pub relations: Vec<(usize, usize, &'static str)>,
    pub text: Option<String>,
}

#[derive(Debug, Clone, Copy)]
pub struct GraphShape {
    pub max_entities: usize,
    pub max_relations: usize,
    /// Every entity gets its own surface form.
    pub distinct_tokens: bool,
    /// Positions are drawn from `0..max_position`, so ties occur.
    pub max_position: usize,
}

impl Default for GraphShape {
    fn default() -> Self {
        GraphShape { max_entities: 8, max_relations: 10, distinct_tokens: false, max_position: 12 }
    }
}

pub fn random_graph(rng: &mut impl Rng, shape: GraphShape) -> RawGraph {
    let n = rng.random_range(0..=shape.max_entities);
    let entities: Vec<RawEntity> = (0..n)
        .map(|i| {
            let start = rng.random_range(0..shape.max_position);
            let end = start + rng.random_range(0..2);
            let tokens = if shape.distinct_tokens {
                format!("w{i}q")
            } else {
                VOCAB.choose(rng).unwrap().to_string()
            };
            RawEntity {
                id: format!("{}", i + 1),
                tokens,
                label: LABELS.choose(rng).unwrap(),
                start,
                end,
            }
        })
        .collect();
    let mut relations = Vec::new();
    if n >= 2 {
        let m = rng.random_range(0..=shape.max_relations);
        for _ in 0..m {
            let s = rng.random_range(0..n);
            let t = rng.random_range(0..n);
            let k = *KINDS.choose(rng).unwrap();
            if s != t && !relations.contains(&(s, t, k)) {
                relations.push((s, t, k));
            }
        }
    }
    RawGraph { entities, relations, text: None }
}

impl RawGraph {
    /// Ingestion-format JSON.
    pub fn to_json(&self) -> Value {
        let mut ents = Map::new();
        for (i, e) in self.entities.iter().enumerate() {
            let rels: Vec<Value> = self
                .relations
                .iter()
                .filter(|r| r.0 == i)
                .map(|r| json!([r.2, self.entities[r.1].id]))
                .collect();
            ents.insert(
                e.id.clone(),
                json!({"tokens": e.tokens, "label": e.label, "start_ix": e.start, "end_ix": e.end, "relations": rels}),
            );
        }
        let mut doc = Map::new();
        if let Some(t) = &self.text {
            doc.insert("text".into(), Value::String(t.clone()));
        }
        doc.insert("entities".into(), Value::Object(ents));
        Value::Object(doc)
    }

    /// Reverses every relation.
    pub fn reversed(&self) -> RawGraph {
        RawGraph {
            relations: self.relations.iter().map(|&(s, t, k)| (t, s, k)).collect(),
            ..self.clone()
        }
    }
}

/// Quick-find connectivity: every union relabels one whole class.
pub fn oracle_components(g: &RawGraph) -> BTreeSet<BTreeSet<String>> {
    let mut class: Vec<usize> = (0..g.entities.len()).collect();
    for &(s, t, _) in &g.relations {
        let (from, to) = (class[s], class[t]);
        if from != to {
            for c in class.iter_mut() {
                if *c == from {
                    *c = to;
                }
            }
        }
    }
    let mut out = BTreeSet::new();
    for c in class.iter().copied().collect::<BTreeSet<_>>() {
        out.insert(
            g.entities
                .iter()
                .enumerate()
                .filter(|(i, _)| class[*i] == c)
                .map(|(_, e)| e.id.clone())
                .collect(),
        );
    }
    out
}

fn count_occurrences(haystack: &[String], gram: &[String]) -> usize {
    if gram.len() > haystack.len() {
        return 0;
    }
    (0..=haystack.len() - gram.len()).filter(|&i| &haystack[i..i + gram.len()] == gram).count()
}

/// BLEU-2 by explicit n-gram enumeration: for each distinct candidate
/// n-gram, count occurrences in both sequences by scanning. A one-token
/// candidate is scored on unigrams only; zero-match orders use `eps`.
pub fn oracle_bleu2(cand: &[String], reference: &[String], eps: f64) -> f64 {
    if cand.is_empty() {
        return 0.0;
    }
    let orders = if cand.len() >= 2 { 2 } else { 1 };
    let mut precisions = Vec::new();
    for n in 1..=orders {
        let mut seen: Vec<&[String]> = Vec::new();
        let mut clipped = 0usize;
        for i in 0..=cand.len() - n {
            let gram = &cand[i..i + n];
            if seen.contains(&gram) {
                continue;
            }
            seen.push(gram);
            clipped += count_occurrences(cand, gram).min(count_occurrences(reference, gram));
        }
        let total = cand.len() - n + 1;
        precisions.push(if clipped == 0 { eps } else { clipped as f64 / total as f64 });
    }
    let geo = precisions.iter().product::<f64>().powf(1.0 / orders as f64);
    let bp = if cand.len() < reference.len() {
        (1.0 - reference.len() as f64 / cand.len() as f64).exp()
    } else {
        1.0
    };
    bp * geo
}

pub fn random_tokens(rng: &mut impl Rng, max_len: usize, vocab: usize) -> Vec<String> {
    let len = rng.random_range(0..=max_len);
    (0..len).map(|_| format!("t{}", rng.random_range(0..vocab))).collect()
}

fn matched_pairs<T: PartialEq + Clone>(pred: &[T], reference: &[T]) -> usize {
    let mut remaining = reference.to_vec();
    let mut matched = 0;
    for p in pred {
        if let Some(pos) = remaining.iter().position(|r| r == p) {
            remaining.swap_remove(pos);
            matched += 1;
        }
    }
    matched
}

fn f1(matched: usize, n_pred: usize, n_ref: usize) -> f64 {
    if n_pred == 0 && n_ref == 0 {
        return 1.0;
    }
    if n_pred == 0 || n_ref == 0 || matched == 0 {
        return 0.0;
    }
    let p = matched as f64 / n_pred as f64;
    let r = matched as f64 / n_ref as f64;
    2.0 * p * r / (p + r)
}

/// (entity F1, relation F1, mean) by greedy one-to-one matching of keys.
pub fn oracle_radgraph_f1(pred: &RawGraph, reference: &RawGraph) -> (f64, f64, f64) {
    let ekey = |e: &RawEntity| (e.tokens.trim().to_lowercase(), e.label);
    let ents = |g: &RawGraph| g.entities.iter().map(ekey).collect::<Vec<_>>();
    let rels = |g: &RawGraph| {
        g.relations
            .iter()
            .map(|&(s, t, k)| (ekey(&g.entities[s]), ekey(&g.entities[t]), k))
            .collect::<Vec<_>>()
    };
    let (pe, re) = (ents(pred), ents(reference));
    let (pr, rr) = (rels(pred), rels(reference));
    let ef = f1(matched_pairs(&pe, &re), pe.len(), re.len());
    let rf = f1(matched_pairs(&pr, &rr), pr.len(), rr.len());
    (ef, rf, (ef + rf) / 2.0)
}

/// JSONL lines of a synthetic dataset: `n_train` train and `n_test` test
/// studies, each with a unique serialization, a report, a radiologist id,
/// a pathology vector and a reference RadGraph.
pub fn synthetic_dataset(n_train: usize, n_test: usize, seed: u64) -> Vec<Value> {
    let mut rng = rng(seed);
    let mut out = Vec::new();
    for i in 0..n_train + n_test {
        let split = if i < n_train { "train" } else { "test" };
        let size = format!("{}", 2 + i);
        let organ = *["lungs", "heart", "mediastinum"].choose(&mut rng).unwrap();
        let finding = *["opacity", "nodule", "edema"].choose(&mut rng).unwrap();
        let absent = *["effusion", "pneumothorax"].choose(&mut rng).unwrap();
        let text = format!("FINDINGS : {size} mm {finding} in {organ} . IMPRESSION : no {absent} .");
        let report = format!("FINDINGS: There is a {size} mm {finding} in the {organ}. IMPRESSION: No {absent}.");
        let graph = RawGraph {
            entities: vec![
                RawEntity { id: "1".into(), tokens: size.clone(), label: "OBS-DP", start: 2, end: 2 },
                RawEntity { id: "2".into(), tokens: finding.into(), label: "OBS-DP", start: 4, end: 4 },
                RawEntity { id: "3".into(), tokens: organ.into(), label: "ANAT-DP", start: 6, end: 6 },
                RawEntity { id: "4".into(), tokens: absent.into(), label: "OBS-DA", start: 11, end: 11 },
            ],
            relations: vec![(0, 1, "modify"), (1, 2, "located_at")],
            text: Some(text),
        };
        let serialization = format!("findings: {size} {finding} {organ}. impression: no {absent}");
        let mut pv = vec![0u8; 14];
        pv[rng.random_range(0..14)] = 1;
        out.push(json!({
            "study_id": format!("s{i:04}"),
            "serialization": serialization,
            "report": report,
            "radiologist_id": format!("R{}", i % 3),
            "pathology_vector": pv,
            "split": split,
            "radgraph": graph.to_json(),
        }));
    }
    out
}

/// One embedding row per whitespace token, derived from the token's bytes.
pub fn toy_embedding(text: &str, dim: usize) -> Vec<Vec<f64>> {
    text.split_whitespace()
        .map(|tok| {
            let mut row = vec![0.0; dim];
            for (i, b) in tok.bytes().enumerate() {
                row[(i + b as usize) % dim] += f64::from(b) / 100.0;
            }
            row
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(x: &str) -> Vec<String> {
        x.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn oracle_bleu_hand_case() {
        let v = oracle_bleu2(&s("the cat sat"), &s("the cat ran"), 1e-9);
        assert!((v - (1.0f64 / 3.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn oracle_components_basic() {
        let g = RawGraph {
            entities: (0..3)
                .map(|i| RawEntity { id: i.to_string(), tokens: "x".into(), label: "OBS-DP", start: i, end: i })
                .collect(),
            relations: vec![(0, 1, "modify")],
            text: None,
        };
        assert_eq!(oracle_components(&g).len(), 2);
    }
}
