//! What-if scoring of candidate next-term plans, plus the HTTP service that
//! exposes it.

mod service;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::encoder::{encode_term, group_terms, QueryCombo, TermStep};
use crate::error::{Error, Result};
use crate::nnet::{encode_history, head_forward, Checkpoint, ModelParams};
use crate::transcript::{CourseCatalog, Grade, RawRecord};

pub use service::{router, serve, ServiceConfig};

pub const MAX_CANDIDATES: usize = 20;
pub const MAX_COURSES_PER_CANDIDATE: usize = 12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradeEntry {
    pub course: String,
    pub grade: Grade,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HistoryTerm {
    pub period: String,
    pub grades: Vec<GradeEntry>,
}

/// A student's raw history and the course sets they are weighing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanQuery {
    pub history: Vec<HistoryTerm>,
    pub candidates: Vec<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanResponse {
    /// Success probability per candidate, in request order.
    pub probabilities: Vec<f64>,
    /// Candidate indices, most likely to succeed first. Exact ties keep
    /// request order.
    pub ranking: Vec<usize>,
    pub checkpoint: String,
}

impl PlanQuery {
    fn check_shape(&self) -> Result<()> {
        if self.candidates.is_empty() || self.candidates.len() > MAX_CANDIDATES {
            return Err(Error::invalid(format!(
                "expected 1 to {MAX_CANDIDATES} candidates, got {}",
                self.candidates.len()
            )));
        }
        for (i, c) in self.candidates.iter().enumerate() {
            if c.is_empty() || c.len() > MAX_COURSES_PER_CANDIDATE {
                return Err(Error::invalid(format!(
                    "candidate {i} has {} courses, expected 1 to {MAX_COURSES_PER_CANDIDATE}",
                    c.len()
                )));
            }
        }
        Ok(())
    }
}

/// Encodes a raw history the same way training transcripts are encoded:
/// terms ordered by period key, one step per period.
pub fn encode_plan_history(history: &[HistoryTerm], catalog: &CourseCatalog) -> Result<Vec<TermStep>> {
    let records: Vec<RawRecord> = history
        .iter()
        .flat_map(|t| {
            t.grades
                .iter()
                .map(|g| RawRecord::new("query", &g.course, &t.period, g.grade))
        })
        .collect();
    let terms = group_terms(&records, catalog)?;
    if terms.is_empty() {
        return Err(Error::invalid("history must contain at least one graded course"));
    }
    terms.iter().map(|(_, t)| encode_term(t, catalog.len())).collect()
}

pub fn encode_candidate(courses: &[String], catalog: &CourseCatalog) -> Result<QueryCombo> {
    let indices = courses
        .iter()
        .map(|c| catalog.require(c))
        .collect::<Result<Vec<_>>>()?;
    QueryCombo::new(catalog.len(), indices)
}

/// Candidate indices by descending probability, stable on ties.
pub fn rank(probabilities: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..probabilities.len()).collect();
    order.sort_by(|&a, &b| probabilities[b].total_cmp(&probabilities[a]));
    order
}

/// Probability of passing every course, for each candidate. The history is
/// run through the recurrent branch once and shared across candidates.
pub fn score_plans(params: &ModelParams, catalog: &CourseCatalog, query: &PlanQuery) -> Result<Vec<f64>> {
    query.check_shape()?;
    let history = encode_plan_history(&query.history, catalog)?;
    let candidates = query
        .candidates
        .iter()
        .map(|c| encode_candidate(c, catalog))
        .collect::<Result<Vec<_>>>()?;
    let representation = encode_history(params, &history)?.representation();
    candidates
        .iter()
        .map(|c| head_forward(params, &representation, c).map(|h| h.probability))
        .collect()
}

/// A loaded checkpoint ready to answer queries. Immutable once built.
#[derive(Debug)]
pub struct Planner {
    checkpoint: Checkpoint,
    id: String,
}

impl Planner {
    pub fn new(checkpoint: Checkpoint) -> Result<Self> {
        let id = checkpoint.id()?;
        Ok(Planner { checkpoint, id })
    }

    pub fn checkpoint_id(&self) -> &str {
        &self.id
    }

    pub fn catalog(&self) -> &CourseCatalog {
        &self.checkpoint.catalog
    }

    pub fn failure_rates(&self) -> &BTreeMap<String, f64> {
        &self.checkpoint.meta.failure_rates
    }

    pub fn score(&self, query: &PlanQuery) -> Result<PlanResponse> {
        let probabilities = score_plans(&self.checkpoint.params, &self.checkpoint.catalog, query)?;
        Ok(PlanResponse {
            ranking: rank(&probabilities),
            probabilities,
            checkpoint: self.id.clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnet::{CheckpointMeta, Dims};

    fn planner() -> Planner {
        let catalog = CourseCatalog::from_courses(["A", "B", "C", "D"]).unwrap();
        let params = ModelParams::init(Dims::with_catalog(4), 5).unwrap();
        Planner::new(Checkpoint::new(params, catalog, CheckpointMeta::default()).unwrap()).unwrap()
    }

    fn query(candidates: &[&[&str]]) -> PlanQuery {
        serde_json::from_value(serde_json::json!({
            "history": [
                {"period": "2018-1", "grades": [{"course": "A", "grade": 15}, {"course": "B", "grade": "R"}]},
                {"period": "2018-2", "grades": [{"course": "B", "grade": 9}]}
            ],
            "candidates": candidates,
        }))
        .unwrap()
    }

    #[test]
    fn identical_candidates_tie_in_request_order() {
        let r = planner().score(&query(&[&["C"], &["A", "B"], &["C"]])).unwrap();
        assert_eq!(r.probabilities[0], r.probabilities[2]);
        let first = r.ranking.iter().position(|&i| i == 0).unwrap();
        let last = r.ranking.iter().position(|&i| i == 2).unwrap();
        assert!(first < last);
    }

    #[test]
    fn ranking_sorts_probabilities() {
        let r = planner()
            .score(&query(&[&["A"], &["B", "C"], &["A", "B", "C", "D"], &["D"]]))
            .unwrap();
        let mut sorted = r.ranking.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, vec![0, 1, 2, 3]);
        for w in r.ranking.windows(2) {
            assert!(r.probabilities[w[0]] >= r.probabilities[w[1]]);
        }
        assert!(r.probabilities.iter().all(|&p| p > 0.0 && p < 1.0));
    }

    #[test]
    fn rank_is_stable() {
        assert_eq!(rank(&[0.2, 0.5, 0.2, 0.9]), vec![3, 1, 0, 2]);
    }

    #[test]
    fn repeated_calls_are_identical() {
        let p = planner();
        let q = query(&[&["A", "C"], &["D"]]);
        assert_eq!(
            serde_json::to_vec(&p.score(&q).unwrap()).unwrap(),
            serde_json::to_vec(&p.score(&q).unwrap()).unwrap()
        );
    }

    #[test]
    fn period_order_not_request_order_decides_sequence() {
        let p = planner();
        let mut q = query(&[&["A", "C"]]);
        let forward = p.score(&q).unwrap();
        q.history.reverse();
        assert_eq!(p.score(&q).unwrap(), forward);
    }

    #[test]
    fn rejects_bad_queries() {
        let p = planner();
        match p.score(&query(&[&["A", "NOPE"]])) {
            Err(Error::UnknownCourse(c)) => assert_eq!(c, "NOPE"),
            other => panic!("expected unknown course, got {other:?}"),
        }
        assert!(p.score(&query(&[])).is_err());
        assert!(p.score(&query(&[&[]])).is_err());
        assert!(p.score(&query(&[&["A", "A"]])).is_err());
        let many: Vec<&[&str]> = vec![&["A"]; MAX_CANDIDATES + 1];
        assert!(p.score(&query(&many)).is_err());
        let mut q = query(&[&["A"]]);
        q.history.clear();
        assert!(matches!(p.score(&q), Err(Error::InvalidInput(_))));
    }
}
