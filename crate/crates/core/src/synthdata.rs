//! Synthetic transcripts drawn from a latent logistic model with known truth.
//!
//! Each student has an ability `a ~ N(0, 1)`, each course a difficulty
//! `d ~ N(difficulty_mean, 1)`. An enrollment in a term of `n` courses
//! withdraws with probability `withdraw_prob`, and otherwise passes with
//! probability `σ(a - d - λ·max(0, n - 4))`. Passing grades are
//! `10 + Binomial(10, p)` where `p` is that pass probability, so stronger
//! students collect higher marks; failing grades are uniform on 0..=9.

use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nnet::sigmoid;
use crate::transcript::{Grade, RawRecord, PASS_MARK};

/// Courses a term may hold before the load penalty applies.
pub const LOAD_FREE_COURSES: usize = 4;

const FIRST_YEAR: usize = 2010;

/// Students enroll for the first time somewhere in the first this-many periods
/// (plus the slack left by a short career).
const START_PERIODS: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub num_students: usize,
    pub catalog_size: usize,
    /// Inclusive range of terms per student.
    pub terms: (usize, usize),
    /// Inclusive range of courses per term.
    pub courses_per_term: (usize, usize),
    /// Penalty per course above [`LOAD_FREE_COURSES`] in a term.
    pub load_penalty: f64,
    pub withdraw_prob: f64,
    /// Mean of the course difficulty distribution.
    pub difficulty_mean: f64,
    /// Replaces every sampled ability when set.
    pub ability_override: Option<f64>,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_students: 800,
            catalog_size: 40,
            terms: (4, 10),
            courses_per_term: (3, 6),
            load_penalty: 0.15,
            withdraw_prob: 0.05,
            difficulty_mean: -1.0,
            ability_override: None,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let (t0, t1) = self.terms;
        let (c0, c1) = self.courses_per_term;
        if self.num_students == 0 || self.catalog_size == 0 {
            return Err(Error::invalid("need at least one student and one course"));
        }
        if t0 == 0 || t0 > t1 {
            return Err(Error::invalid(format!("terms range {t0}..={t1} is empty")));
        }
        if c0 == 0 || c0 > c1 {
            return Err(Error::invalid(format!("courses-per-term range {c0}..={c1} is empty")));
        }
        if c1 > self.catalog_size {
            return Err(Error::invalid(format!(
                "{c1} courses per term exceeds catalog of {}",
                self.catalog_size
            )));
        }
        if !(0.0..=1.0).contains(&self.withdraw_prob) {
            return Err(Error::invalid("withdraw probability must lie in [0, 1]"));
        }
        if !self.load_penalty.is_finite() || self.load_penalty < 0.0 || !self.difficulty_mean.is_finite() {
            return Err(Error::invalid("load penalty and difficulty mean must be finite, penalty non-negative"));
        }
        if self.ability_override.is_some_and(|a| !a.is_finite()) {
            return Err(Error::invalid("ability override must be finite"));
        }
        Ok(())
    }
}

/// Latent parameters of a generated corpus: the oracle for success probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub abilities: BTreeMap<String, f64>,
    pub difficulties: BTreeMap<String, f64>,
    pub lambda: f64,
    pub withdraw_prob: f64,
}

impl GroundTruth {
    fn ability(&self, student: &str) -> Result<f64> {
        self.abilities
            .get(student)
            .copied()
            .ok_or_else(|| Error::invalid(format!("unknown student {student}")))
    }

    fn difficulty(&self, course: &str) -> Result<f64> {
        self.difficulties
            .get(course)
            .copied()
            .ok_or_else(|| Error::UnknownCourse(course.to_owned()))
    }

    /// Probability that a non-withdrawn enrollment passes.
    pub fn pass_probability(&self, student: &str, course: &str, term_load: usize) -> Result<f64> {
        Ok(pass_probability(
            self.ability(student)?,
            self.difficulty(course)?,
            self.lambda,
            term_load,
        ))
    }
}

fn pass_probability(ability: f64, difficulty: f64, lambda: f64, load: usize) -> f64 {
    let excess = load.saturating_sub(LOAD_FREE_COURSES) as f64;
    sigmoid(ability - difficulty - lambda * excess)
}

/// Oracle probability of passing every course in `courses` in one term.
pub fn true_success_probability(truth: &GroundTruth, student: &str, courses: &[&str]) -> Result<f64> {
    if courses.is_empty() {
        return Err(Error::invalid("a course combination needs at least one course"));
    }
    let mut seen = HashSet::new();
    if let Some(dup) = courses.iter().find(|c| !seen.insert(**c)) {
        return Err(Error::invalid(format!("course {dup} repeated in combination")));
    }
    let a = truth.ability(student)?;
    courses.iter().try_fold(1.0, |acc, c| {
        Ok(acc * (1.0 - truth.withdraw_prob) * pass_probability(a, truth.difficulty(c)?, truth.lambda, courses.len()))
    })
}

pub fn course_id(index: usize) -> String {
    format!("C{index:03}")
}

pub fn student_id(index: usize) -> String {
    format!("S{index:05}")
}

/// Period keys run `2010-1`, `2010-2`, `2011-1`, ...
pub fn period_key(index: usize) -> String {
    format!("{}-{}", FIRST_YEAR + index / 2, index % 2 + 1)
}

/// Generates a corpus. Deterministic in `config`.
pub fn generate(config: &SynthConfig) -> Result<(Vec<RawRecord>, GroundTruth)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let std_normal = Normal::new(0.0, 1.0).expect("valid normal");

    let courses: Vec<String> = (0..config.catalog_size).map(course_id).collect();
    let difficulties: Vec<f64> = (0..config.catalog_size)
        .map(|_| config.difficulty_mean + std_normal.sample(&mut rng))
        .collect();

    let (t0, t1) = config.terms;
    let (c0, c1) = config.courses_per_term;
    let mut records = Vec::new();
    let mut abilities = BTreeMap::new();

    for s in 0..config.num_students {
        let sid = student_id(s);
        let sampled = std_normal.sample(&mut rng);
        let ability = config.ability_override.unwrap_or(sampled);
        abilities.insert(sid.clone(), ability);

        let n_terms = rng.gen_range(t0..=t1);
        let start = rng.gen_range(0..=START_PERIODS + t1 - n_terms);
        let mut passed = vec![false; config.catalog_size];

        for term in 0..n_terms {
            let period = period_key(start + term);
            let load = rng.gen_range(c0..=c1);
            let mut fresh: Vec<usize> = (0..config.catalog_size).filter(|&c| !passed[c]).collect();
            fresh.shuffle(&mut rng);
            let mut chosen: Vec<usize> = fresh.into_iter().take(load).collect();
            if chosen.len() < load {
                let mut retake: Vec<usize> = (0..config.catalog_size).filter(|c| !chosen.contains(c)).collect();
                retake.shuffle(&mut rng);
                chosen.extend(retake.into_iter().take(load - chosen.len()));
            }
            chosen.sort_unstable();

            for c in chosen {
                let grade = if rng.gen_bool(config.withdraw_prob) {
                    Grade::Withdrawn
                } else {
                    let p = pass_probability(ability, difficulties[c], config.load_penalty, load);
                    if rng.gen_bool(p) {
                        let bonus = Binomial::new(10, p).expect("p in [0, 1]").sample(&mut rng) as u8;
                        Grade::Score(PASS_MARK + bonus)
                    } else {
                        Grade::Score(rng.gen_range(0..PASS_MARK))
                    }
                };
                if matches!(grade, Grade::Score(g) if g >= PASS_MARK) {
                    passed[c] = true;
                }
                records.push(RawRecord {
                    student_id: sid.clone(),
                    course_id: courses[c].clone(),
                    period: period.clone(),
                    grade,
                });
            }
        }
    }

    let truth = GroundTruth {
        abilities,
        difficulties: courses.into_iter().zip(difficulties).collect(),
        lambda: config.load_penalty,
        withdraw_prob: config.withdraw_prob,
    };
    Ok((records, truth))
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;

    fn small(seed: u64) -> SynthConfig {
        SynthConfig {
            num_students: 60,
            seed,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn same_seed_same_corpus() {
        let a = generate(&small(5)).unwrap();
        let b = generate(&small(5)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.0, generate(&small(6)).unwrap().0);
    }

    #[test]
    fn strong_students_rarely_fail() {
        let cfg = SynthConfig {
            ability_override: Some(10.0),
            withdraw_prob: 0.0,
            seed: 0,
            ..SynthConfig::default()
        };
        let (recs, _) = generate(&cfg).unwrap();
        let failed = recs.iter().filter(|r| matches!(r.grade, Grade::Score(g) if g < 10)).count();
        assert!((failed as f64) < 0.01 * recs.len() as f64, "{failed} of {}", recs.len());
    }

    #[test]
    fn default_corpus_shape() {
        let (recs, truth) = generate(&SynthConfig::default()).unwrap();
        let terms: HashSet<(&str, &str)> = recs.iter().map(|r| (r.student_id.as_str(), r.period.as_str())).collect();
        assert!((3000..=8000).contains(&terms.len()), "{} student-terms", terms.len());
        assert_eq!(truth.abilities.len(), 800);
        assert_eq!(truth.difficulties.len(), 40);
    }

    #[test]
    fn records_are_unique_and_ordered() {
        let (recs, _) = generate(&small(1)).unwrap();
        let keys: HashSet<_> = recs.iter().map(|r| (&r.student_id, &r.course_id, &r.period)).collect();
        assert_eq!(keys.len(), recs.len());
        let mut per_student: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for r in &recs {
            per_student.entry(&r.student_id).or_default().push(&r.period);
        }
        for periods in per_student.values() {
            // emitted term by term, so keys never decrease
            assert!(periods.windows(2).all(|w| w[0] <= w[1]));
            let distinct: HashSet<_> = periods.iter().collect();
            assert!((4..=10).contains(&distinct.len()));
        }
        assert!(period_key(0) < period_key(1) && period_key(1) < period_key(2) && period_key(19) < period_key(20));
    }

    #[test]
    fn empirical_pass_rate_matches_oracle() {
        let cfg = SynthConfig {
            num_students: 400,
            seed: 11,
            ..SynthConfig::default()
        };
        let (recs, truth) = generate(&cfg).unwrap();
        let mut loads: BTreeMap<(&str, &str), usize> = BTreeMap::new();
        for r in &recs {
            *loads.entry((&r.student_id, &r.period)).or_default() += 1;
        }
        let (mut observed, mut expected, mut variance) = (0.0, 0.0, 0.0);
        for r in recs.iter().take(10_000) {
            let load = loads[&(r.student_id.as_str(), r.period.as_str())];
            let p = (1.0 - truth.withdraw_prob) * truth.pass_probability(&r.student_id, &r.course_id, load).unwrap();
            observed += matches!(r.grade, Grade::Score(g) if g >= 10) as u8 as f64;
            expected += p;
            variance += p * (1.0 - p);
        }
        assert!(recs.len() >= 10_000);
        let z = (observed - expected) / variance.sqrt();
        assert!(z.abs() < 3.0, "z = {z}");
    }

    fn truth() -> GroundTruth {
        GroundTruth {
            abilities: [("s".to_string(), 0.0), ("t".to_string(), 1.0)].into(),
            difficulties: [("A".to_string(), 0.0), ("B".to_string(), 0.0), ("C".to_string(), 0.7)].into(),
            lambda: 0.15,
            withdraw_prob: 0.0,
        }
    }

    #[test]
    fn oracle_examples() {
        let t = truth();
        assert_eq!(true_success_probability(&t, "s", &["A"]).unwrap(), 0.5);
        assert_eq!(true_success_probability(&t, "s", &["A", "B"]).unwrap(), 0.25);
        assert!(true_success_probability(&t, "s", &[]).is_err());
        assert!(matches!(
            true_success_probability(&t, "s", &["Z"]),
            Err(Error::UnknownCourse(_))
        ));
        assert!(true_success_probability(&t, "s", &["A", "A"]).is_err());
    }

    #[test]
    fn oracle_monotonicity() {
        let t = truth();
        let one = true_success_probability(&t, "s", &["A"]).unwrap();
        let two = true_success_probability(&t, "s", &["A", "C"]).unwrap();
        assert!(two <= one);
        for combo in [&["A"][..], &["A", "C"], &["A", "B", "C"]] {
            assert!(
                true_success_probability(&t, "t", combo).unwrap() >= true_success_probability(&t, "s", combo).unwrap()
            );
        }
    }

    #[test]
    fn truth_json_shape() {
        let v = serde_json::to_value(truth()).unwrap();
        let keys: Vec<&String> = v.as_object().unwrap().keys().collect();
        assert_eq!(keys, ["abilities", "difficulties", "lambda", "withdraw_prob"]);
    }

    #[test]
    fn invalid_configs() {
        for cfg in [
            SynthConfig { terms: (5, 4), ..SynthConfig::default() },
            SynthConfig { courses_per_term: (0, 3), ..SynthConfig::default() },
            SynthConfig { withdraw_prob: 1.5, ..SynthConfig::default() },
            SynthConfig { catalog_size: 3, ..SynthConfig::default() },
        ] {
            assert!(generate(&cfg).is_err());
        }
    }
}
