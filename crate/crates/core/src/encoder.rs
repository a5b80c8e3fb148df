//! Turns bucketed transcripts into model inputs.
//!
//! Each student-term becomes a multi-label one-hot [`TermStep`] of dimension
//! `catalog_size * 4`, with the slot for `(course, category)` at
//! `course * 4 + category`. A student's terms in chronological order form the
//! history; the final term is held out as the query (courses only) and its
//! all-passed outcome becomes the label.

use std::collections::{BTreeMap, HashSet};
use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::transcript::{bucket_grade, is_passing, CourseCatalog, GradeCategory, RawRecord};

pub const DATASET_VERSION: u32 = 1;

/// Position of a `(course, category)` pair inside a term vector.
pub fn slot(course_index: usize, category: GradeCategory) -> usize {
    course_index * GradeCategory::COUNT + category.index()
}

/// One student-term, stored sparsely as the sorted positions of its ones.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TermStep {
    dim: usize,
    active: Vec<usize>,
}

impl TermStep {
    /// Rebuilds a term from stored positions, checking the one-category-per-course rule.
    pub fn from_positions(catalog_size: usize, mut positions: Vec<usize>) -> Result<Self> {
        positions.sort_unstable();
        let pairs = positions
            .iter()
            .map(|&p| {
                let category = GradeCategory::from_index(p % GradeCategory::COUNT)
                    .expect("remainder is a valid category index");
                (p / GradeCategory::COUNT, category)
            })
            .collect::<Vec<_>>();
        encode_term(&pairs, catalog_size)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn catalog_size(&self) -> usize {
        self.dim / GradeCategory::COUNT
    }

    pub fn active(&self) -> &[usize] {
        &self.active
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        for &i in &self.active {
            v[i] = 1.0;
        }
        v
    }

    /// Recovers the `(course, category)` pairs, ordered by course.
    pub fn decode(&self) -> Vec<(usize, GradeCategory)> {
        self.active
            .iter()
            .map(|&p| {
                (
                    p / GradeCategory::COUNT,
                    GradeCategory::from_index(p % GradeCategory::COUNT).unwrap(),
                )
            })
            .collect()
    }
}

/// Encodes one term. Fails on an empty term, a repeated course or an index past the catalog.
pub fn encode_term(term_records: &[(usize, GradeCategory)], catalog_size: usize) -> Result<TermStep> {
    if term_records.is_empty() {
        return Err(Error::invalid("a term needs at least one course"));
    }
    let mut seen = HashSet::with_capacity(term_records.len());
    let mut active = Vec::with_capacity(term_records.len());
    for &(course, category) in term_records {
        if course >= catalog_size {
            return Err(Error::invalid(format!(
                "course index {course} outside catalog of size {catalog_size}"
            )));
        }
        if !seen.insert(course) {
            return Err(Error::invalid(format!("course index {course} repeated within a term")));
        }
        active.push(slot(course, category));
    }
    active.sort_unstable();
    Ok(TermStep {
        dim: catalog_size * GradeCategory::COUNT,
        active,
    })
}

/// Multi-hot set of courses a student intends to take.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct QueryCombo {
    dim: usize,
    courses: Vec<usize>,
}

impl QueryCombo {
    pub fn new(catalog_size: usize, courses: impl IntoIterator<Item = usize>) -> Result<Self> {
        let mut courses: Vec<usize> = courses.into_iter().collect();
        if courses.is_empty() {
            return Err(Error::invalid("a course combination needs at least one course"));
        }
        courses.sort_unstable();
        if courses.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::invalid("course repeated within a combination"));
        }
        if let Some(&c) = courses.last().filter(|&&c| c >= catalog_size) {
            return Err(Error::invalid(format!(
                "course index {c} outside catalog of size {catalog_size}"
            )));
        }
        Ok(QueryCombo {
            dim: catalog_size,
            courses,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn courses(&self) -> &[usize] {
        &self.courses
    }

    pub fn len(&self) -> usize {
        self.courses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.courses.is_empty()
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        for &i in &self.courses {
            v[i] = 1.0;
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainExample {
    pub student_id: String,
    pub history: Vec<TermStep>,
    pub query: QueryCombo,
    pub label: bool,
}

impl TrainExample {
    pub fn label_f64(&self) -> f64 {
        if self.label {
            1.0
        } else {
            0.0
        }
    }
}

/// Students dropped by [`build_examples`] and why.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct SkipReport {
    /// Students with a single period have no history to condition on.
    pub single_term_students: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct BuiltExamples {
    pub examples: Vec<TrainExample>,
    pub skipped: SkipReport,
}

/// Groups one student's records into chronologically ordered terms.
pub(crate) fn group_terms<'a>(
    records: impl IntoIterator<Item = &'a RawRecord>,
    catalog: &CourseCatalog,
) -> Result<Vec<(&'a str, Vec<(usize, GradeCategory)>)>> {
    let mut terms: BTreeMap<&str, Vec<(usize, GradeCategory)>> = BTreeMap::new();
    for r in records {
        let course = catalog.require(&r.course_id)?;
        terms
            .entry(r.period.as_str())
            .or_default()
            .push((course, bucket_grade(r.grade)));
    }
    Ok(terms
        .into_iter()
        .map(|(p, mut t)| {
            t.sort_unstable();
            (p, t)
        })
        .collect())
}

/// Builds one example per student with at least two periods. Output is ordered
/// by student id and does not depend on record order.
pub fn build_examples(records: &[RawRecord], catalog: &CourseCatalog) -> Result<BuiltExamples> {
    let mut by_student: BTreeMap<&str, Vec<&RawRecord>> = BTreeMap::new();
    for r in records {
        by_student.entry(r.student_id.as_str()).or_default().push(r);
    }

    let c = catalog.len();
    let mut examples = Vec::with_capacity(by_student.len());
    let mut skipped = SkipReport::default();
    for (student, recs) in by_student {
        let mut terms = group_terms(recs, catalog)?;
        if terms.len() < 2 {
            skipped.single_term_students.push(student.to_owned());
            continue;
        }
        let (_, last) = terms.pop().expect("at least two terms");
        let history = terms
            .iter()
            .map(|(_, t)| encode_term(t, c))
            .collect::<Result<Vec<_>>>()?;
        let query = QueryCombo::new(c, last.iter().map(|&(course, _)| course))?;
        let label = last.iter().all(|&(_, cat)| is_passing(cat));
        examples.push(TrainExample {
            student_id: student.to_owned(),
            history,
            query,
            label,
        });
    }
    Ok(BuiltExamples { examples, skipped })
}

#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub train: Vec<TrainExample>,
    pub validation: Vec<TrainExample>,
    pub seed: u64,
}

/// Seeded split by student. Validation size is `round(fraction * n)`.
pub fn split_dataset(examples: &[TrainExample], validation_fraction: f64, seed: u64) -> Result<DatasetSplit> {
    if !(validation_fraction > 0.0 && validation_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "validation fraction {validation_fraction} must lie strictly between 0 and 1"
        )));
    }
    let n = examples.len();
    if n < 2 {
        return Err(Error::invalid("need at least two examples to split"));
    }
    let n_val = (validation_fraction * n as f64).round() as usize;
    if n_val == 0 || n_val == n {
        return Err(Error::invalid(format!(
            "fraction {validation_fraction} of {n} examples leaves one side empty"
        )));
    }
    let mut students = HashSet::with_capacity(n);
    if let Some(dup) = examples.iter().find(|e| !students.insert(e.student_id.as_str())) {
        return Err(Error::invalid(format!(
            "student {} has more than one example",
            dup.student_id
        )));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut in_val = vec![false; n];
    for &i in &order[..n_val] {
        in_val[i] = true;
    }
    let (mut train, mut validation) = (Vec::with_capacity(n - n_val), Vec::with_capacity(n_val));
    for (e, v) in examples.iter().zip(in_val) {
        if v {
            validation.push(e.clone());
        } else {
            train.push(e.clone());
        }
    }
    Ok(DatasetSplit {
        train,
        validation,
        seed,
    })
}

#[derive(Serialize, Deserialize)]
struct ExampleDoc {
    #[serde(default, skip_serializing_if = "String::is_empty")]
    student: String,
    history: Vec<Vec<usize>>,
    query: Vec<usize>,
    label: u8,
}

#[derive(Serialize, Deserialize)]
struct DatasetDoc {
    version: u32,
    catalog: CourseCatalog,
    examples: Vec<ExampleDoc>,
}

/// Writes the versioned sparse JSON form of an encoded dataset.
pub fn save_dataset<W: Write>(catalog: &CourseCatalog, examples: &[TrainExample], sink: W) -> Result<()> {
    let doc = DatasetDoc {
        version: DATASET_VERSION,
        catalog: catalog.clone(),
        examples: examples
            .iter()
            .map(|e| ExampleDoc {
                student: e.student_id.clone(),
                history: e.history.iter().map(|t| t.active().to_vec()).collect(),
                query: e.query.courses().to_vec(),
                label: e.label as u8,
            })
            .collect(),
    };
    serde_json::to_writer(sink, &doc)?;
    Ok(())
}

pub fn load_dataset<R: Read>(source: R) -> Result<(CourseCatalog, Vec<TrainExample>)> {
    let doc: DatasetDoc = serde_json::from_reader(source)?;
    if doc.version != DATASET_VERSION {
        return Err(Error::invalid(format!("unsupported dataset version {}", doc.version)));
    }
    let c = doc.catalog.len();
    let examples = doc
        .examples
        .into_iter()
        .map(|e| {
            if e.history.is_empty() {
                return Err(Error::invalid("example with empty history"));
            }
            let label = match e.label {
                0 => false,
                1 => true,
                other => return Err(Error::invalid(format!("label {other} is not 0 or 1"))),
            };
            Ok(TrainExample {
                student_id: e.student,
                history: e
                    .history
                    .into_iter()
                    .map(|p| TermStep::from_positions(c, p))
                    .collect::<Result<_>>()?,
                query: QueryCombo::new(c, e.query)?,
                label,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((doc.catalog, examples))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transcript::{build_catalog, Grade};
    use GradeCategory::*;

    fn rec(s: &str, c: &str, p: &str, g: Grade) -> RawRecord {
        RawRecord::new(s, c, p, g)
    }

    #[test]
    fn encode_term_positions() {
        let t = encode_term(&[(0, Bad), (2, Excellent)], 3).unwrap();
        assert_eq!(t.active(), [2, 11]);
        assert_eq!(t.dim(), 12);
        let dense = t.to_dense();
        assert_eq!(dense.iter().sum::<f64>(), 2.0);
        assert_eq!(dense[2], 1.0);
        assert_eq!(dense[11], 1.0);

        assert_eq!(encode_term(&[(0, Withdraw)], 1).unwrap().to_dense(), [1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn encode_term_errors() {
        assert!(encode_term(&[], 2).is_err());
        assert!(encode_term(&[(0, Bad), (0, Excellent)], 2).is_err());
        assert!(encode_term(&[(2, Bad)], 2).is_err());
    }

    #[test]
    fn decode_inverts_encode() {
        let pairs = vec![(0, Withdraw), (1, NotApproved), (3, Excellent)];
        let t = encode_term(&pairs, 5).unwrap();
        assert_eq!(t.decode(), pairs);
        assert_eq!(TermStep::from_positions(5, t.active().to_vec()).unwrap(), t);
        // two categories for course 0
        assert!(TermStep::from_positions(5, vec![0, 1]).is_err());
    }

    #[test]
    fn failed_last_term_gives_negative_label() {
        let recs = vec![
            rec("s", "A", "P1", Grade::Score(15)),
            rec("s", "A", "P2", Grade::Score(9)),
        ];
        let cat = build_catalog(&recs).unwrap();
        let built = build_examples(&recs, &cat).unwrap();
        let ex = &built.examples[0];
        assert_eq!(ex.history, vec![encode_term(&[(0, Excellent)], 1).unwrap()]);
        assert_eq!(ex.query.courses(), [0]);
        assert!(!ex.label);
    }

    #[test]
    fn passed_last_term_gives_positive_label() {
        let recs = vec![
            rec("s", "A", "P1", Grade::Score(15)),
            rec("s", "B", "P2", Grade::Score(10)),
            rec("s", "C", "P2", Grade::Score(13)),
        ];
        let cat = build_catalog(&recs).unwrap();
        let ex = &build_examples(&recs, &cat).unwrap().examples[0];
        assert!(ex.label);
        assert_eq!(ex.query.courses(), [1, 2]);
    }

    #[test]
    fn withdrawal_in_last_term_is_failure() {
        let recs = vec![
            rec("s", "A", "P1", Grade::Score(15)),
            rec("s", "A", "P2", Grade::Score(15)),
            rec("s", "B", "P2", Grade::Withdrawn),
        ];
        let cat = build_catalog(&recs).unwrap();
        let ex = &build_examples(&recs, &cat).unwrap().examples[0];
        assert!(!ex.label);
        assert_eq!(ex.query.len(), 2);
    }

    #[test]
    fn single_term_students_are_reported() {
        let recs = vec![
            rec("solo", "A", "P1", Grade::Score(15)),
            rec("duo", "A", "P1", Grade::Score(15)),
            rec("duo", "A", "P2", Grade::Score(15)),
        ];
        let cat = build_catalog(&recs).unwrap();
        let built = build_examples(&recs, &cat).unwrap();
        assert_eq!(built.examples.len(), 1);
        assert_eq!(built.skipped.single_term_students, ["solo"]);
    }

    #[test]
    fn history_is_chronological() {
        let recs = vec![
            rec("s", "A", "2011-1", Grade::Score(5)),
            rec("s", "A", "2010-2", Grade::Score(15)),
            rec("s", "B", "2012-1", Grade::Score(15)),
            rec("s", "B", "2010-1", Grade::Withdrawn),
        ];
        let cat = build_catalog(&recs).unwrap();
        let ex = &build_examples(&recs, &cat).unwrap().examples[0];
        let decoded: Vec<_> = ex.history.iter().map(TermStep::decode).collect();
        assert_eq!(decoded, vec![vec![(1, Withdraw)], vec![(0, Excellent)], vec![(0, NotApproved)]]);
        assert_eq!(ex.query.courses(), [1]);
    }

    fn toy_examples(n: usize) -> Vec<TrainExample> {
        (0..n)
            .map(|i| TrainExample {
                student_id: format!("s{i:04}"),
                history: vec![encode_term(&[(0, Bad)], 2).unwrap()],
                query: QueryCombo::new(2, [1]).unwrap(),
                label: i % 2 == 0,
            })
            .collect()
    }

    #[test]
    fn split_sizes_and_determinism() {
        let ex = toy_examples(817);
        let split = split_dataset(&ex, 44.0 / 817.0, 7).unwrap();
        assert_eq!((split.train.len(), split.validation.len()), (773, 44));

        let ex = toy_examples(10);
        let a = split_dataset(&ex, 0.2, 3).unwrap();
        let b = split_dataset(&ex, 0.2, 3).unwrap();
        assert_eq!((a.train.len(), a.validation.len()), (8, 2));
        assert_eq!(a.validation, b.validation);
        let train_ids: HashSet<_> = a.train.iter().map(|e| &e.student_id).collect();
        assert!(a.validation.iter().all(|e| !train_ids.contains(&e.student_id)));
    }

    #[test]
    fn split_rejects_degenerate_fractions() {
        let ex = toy_examples(10);
        assert!(split_dataset(&ex, 1.0, 0).is_err());
        assert!(split_dataset(&ex, 0.0, 0).is_err());
        assert!(split_dataset(&ex, 0.01, 0).is_err());
        assert!(split_dataset(&ex[..1], 0.5, 0).is_err());
    }

    #[test]
    fn query_combo_validation() {
        assert!(QueryCombo::new(3, []).is_err());
        assert!(QueryCombo::new(3, [1, 1]).is_err());
        assert!(QueryCombo::new(3, [3]).is_err());
        assert_eq!(QueryCombo::new(3, [2, 0]).unwrap().courses(), [0, 2]);
    }

    #[test]
    fn dataset_json_round_trip() {
        let recs = vec![
            rec("s1", "A", "P1", Grade::Score(15)),
            rec("s1", "B", "P2", Grade::Withdrawn),
            rec("s2", "B", "P1", Grade::Score(3)),
            rec("s2", "A", "P3", Grade::Score(11)),
        ];
        let cat = build_catalog(&recs).unwrap();
        let built = build_examples(&recs, &cat).unwrap();
        let mut buf = Vec::new();
        save_dataset(&cat, &built.examples, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with(r#"{"version":1,"catalog":["A","B"],"examples":[{"#), "{text}");
        let (cat2, ex2) = load_dataset(buf.as_slice()).unwrap();
        assert_eq!(cat2, cat);
        assert_eq!(ex2, built.examples);
    }
}
