//! Blinded style evaluation: evaluators see four reports in one
//! radiologist's style, three written by the radiologist and one generated,
//! and try to spot the generated one. Identification rates are tested
//! against chance.

use std::collections::{BTreeMap, HashSet, VecDeque};

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::metrics::{z_test_proportion, ZTestResult};

pub const SET_SIZE: usize = 4;
pub const HUMAN_PER_SET: usize = 3;
/// Chance of picking the generated report out of four.
pub const CHANCE_RATE: f64 = 0.25;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateReport {
    pub study_id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StyleEvalSet {
    pub reports: Vec<CandidateReport>,
    pub generated_index: usize,
    pub radiologist_id: String,
    pub order_seed: u64,
}

const LABELS: [char; SET_SIZE] = ['A', 'B', 'C', 'D'];

impl StyleEvalSet {
    /// Evaluator-facing text. Carries no trace of which report is generated.
    pub fn render_for_evaluator(&self, set_number: usize) -> String {
        let mut out = format!("Set {set_number}\n");
        for (label, r) in LABELS.iter().zip(&self.reports) {
            out.push_str(&format!("\nReport {label}:\n{}\n", r.text.trim_end()));
        }
        out
    }
}

/// Builds `n_sets` evaluation sets, cycling through the radiologists that
/// have generated reports in sorted order. Reports are never reused; the four
/// studies in a set are distinct.
pub fn assemble_style_eval_sets(
    human: &BTreeMap<String, Vec<CandidateReport>>,
    generated: &BTreeMap<String, Vec<CandidateReport>>,
    n_sets: usize,
    seed: u64,
) -> Result<Vec<StyleEvalSet>, HarnessError> {
    let contributors: Vec<&String> = generated.iter().filter(|(_, g)| !g.is_empty()).map(|(r, _)| r).collect();
    if n_sets > 0 && contributors.is_empty() {
        return Err(HarnessError::Input("no radiologist has generated reports".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pools: BTreeMap<&String, (VecDeque<CandidateReport>, VecDeque<CandidateReport>)> = BTreeMap::new();
    for rad in &contributors {
        let humans = human.get(*rad).map_or(&[][..], Vec::as_slice);
        if humans.len() < HUMAN_PER_SET {
            return Err(HarnessError::Input(format!(
                "radiologist {rad} has {} human reports, needs {HUMAN_PER_SET} (short by {})",
                humans.len(),
                HUMAN_PER_SET - humans.len()
            )));
        }
        let mut h = humans.to_vec();
        let mut g = generated[*rad].clone();
        h.shuffle(&mut rng);
        g.shuffle(&mut rng);
        pools.insert(rad, (h.into(), g.into()));
    }

    let mut sets = Vec::with_capacity(n_sets);
    for i in 0..n_sets {
        let rad = contributors[i % contributors.len()];
        let (humans, gens) = pools.get_mut(rad).expect("pool per contributor");
        let Some(gen) = gens.pop_front() else {
            return Err(HarnessError::Input(format!(
                "radiologist {rad}: set {} needs 1 more generated report (pool exhausted)",
                i + 1
            )));
        };
        let mut picked: Vec<CandidateReport> = Vec::with_capacity(HUMAN_PER_SET);
        let mut used: HashSet<String> = HashSet::from([gen.study_id.clone()]);
        let mut skipped = VecDeque::new();
        while picked.len() < HUMAN_PER_SET {
            let Some(h) = humans.pop_front() else { break };
            if used.insert(h.study_id.clone()) {
                picked.push(h);
            } else {
                skipped.push_back(h);
            }
        }
        if picked.len() < HUMAN_PER_SET {
            return Err(HarnessError::Input(format!(
                "radiologist {rad}: set {} needs {} more human report(s) from distinct studies",
                i + 1,
                HUMAN_PER_SET - picked.len()
            )));
        }
        skipped.extend(humans.drain(..));
        *humans = skipped;

        let order_seed = rng.next_u64();
        let mut reports = picked;
        reports.push(gen.clone());
        reports.shuffle(&mut ChaCha8Rng::seed_from_u64(order_seed));
        let generated_index = reports.iter().position(|r| r == &gen).expect("generated report present");
        sets.push(StyleEvalSet { reports, generated_index, radiologist_id: rad.clone(), order_seed });
    }
    Ok(sets)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StyleEvalScore {
    pub per_evaluator: BTreeMap<String, ZTestResult>,
    pub pooled: ZTestResult,
}

/// Tests each evaluator's identification rate, and the pooled rate, against
/// the one-in-four chance level.
pub fn score_style_eval(
    answers: &BTreeMap<String, Vec<usize>>,
    sets: &[StyleEvalSet],
) -> Result<StyleEvalScore, HarnessError> {
    if sets.is_empty() {
        return Err(HarnessError::Input("no evaluation sets".into()));
    }
    if answers.is_empty() {
        return Err(HarnessError::Input("no evaluator answers".into()));
    }
    let mut per_evaluator = BTreeMap::new();
    let (mut total_x, mut total_n) = (0u64, 0u64);
    for (evaluator, picks) in answers {
        if picks.len() != sets.len() {
            return Err(HarnessError::Input(format!(
                "evaluator {evaluator} answered {} of {} sets",
                picks.len(),
                sets.len()
            )));
        }
        if let Some((i, &bad)) = picks.iter().enumerate().find(|(_, &p)| p >= SET_SIZE) {
            return Err(HarnessError::Input(format!(
                "evaluator {evaluator} set {}: answer {bad} out of range 0..{SET_SIZE}",
                i + 1
            )));
        }
        let correct = picks.iter().zip(sets).filter(|(&p, s)| p == s.generated_index).count() as u64;
        let n = sets.len() as u64;
        per_evaluator.insert(evaluator.clone(), z_test_proportion(correct, n, CHANCE_RATE)?);
        total_x += correct;
        total_n += n;
    }
    Ok(StyleEvalScore { per_evaluator, pooled: z_test_proportion(total_x, total_n, CHANCE_RATE)? })
}
