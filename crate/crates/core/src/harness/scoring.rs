use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::annotations::AnnotationStore;
use super::dataset::StudyRecord;
use crate::graph::RadGraph;
use crate::metrics::{
    self, bert_score, bleu2_with, chexbert_similarity, radcliq, radgraph_f1, tokenize, BleuConfig,
    RadCliqConfig,
};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    pub bleu: BleuConfig,
    pub radcliq: RadCliqConfig,
}

/// Scores generated reports against their references. Metrics whose
/// annotations are unavailable for either side are left out of the item's
/// score map.
pub struct Scorer<'a> {
    pub annotations: &'a AnnotationStore,
    pub config: &'a MetricsConfig,
}

impl Scorer<'_> {
    pub fn score(&self, reference: &StudyRecord, generated: &str) -> BTreeMap<String, f64> {
        let mut scores = BTreeMap::new();
        scores.insert(
            metrics::BLEU2.to_string(),
            bleu2_with(&tokenize(generated), &tokenize(&reference.report), &self.config.bleu),
        );

        let ref_ann = self.annotations.reference(&reference.study_id);
        let gen_ann = self.annotations.for_text(generated);
        let empty_graph = RadGraph::default();
        // An empty report has no entities to extract.
        let gen_graph = if generated.trim().is_empty() {
            Some(&empty_graph)
        } else {
            gen_ann.and_then(|a| a.radgraph.as_ref())
        };
        if let (Some(r), Some(g)) = (ref_ann.and_then(|a| a.radgraph.as_ref()), gen_graph) {
            scores.insert(metrics::RADGRAPH_F1.to_string(), radgraph_f1(g, r).combined);
        }
        if let (Some(r), Some(g)) = (
            ref_ann.and_then(|a| a.pathology_vector.as_ref()),
            gen_ann.and_then(|a| a.pathology_vector.as_ref()),
        ) {
            scores.insert(metrics::CHEXBERT.to_string(), chexbert_similarity(g, r));
        }
        if let (Some(r), Some(g)) = (
            ref_ann.and_then(|a| a.embedding.as_ref()),
            gen_ann.and_then(|a| a.embedding.as_ref()),
        ) {
            match bert_score(g, r) {
                Ok(v) => {
                    scores.insert(metrics::BERTSCORE.to_string(), v);
                }
                Err(e) => tracing::warn!(study = %reference.study_id, error = %e, "skipping BERTScore"),
            }
        }
        let rc = &self.config.radcliq;
        if let Ok(v) = radcliq(&scores, &rc.weights, rc.bias) {
            scores.insert(metrics::RADCLIQ.to_string(), v);
        }
        scores
    }
}
