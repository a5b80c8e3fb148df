//! Evaluation: exact AUC, GPA bands, combination difficulty tiers and the
//! GPA-band x difficulty-tier grid of mean predicted success.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::encoder::{QueryCombo, TrainExample};
use crate::error::{Error, Result};
use crate::nnet::{encode_history, head_forward, ModelParams};
use crate::transcript::{bucket_grade, is_passing, CourseCatalog, RawRecord};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredExample {
    pub score: f64,
    pub label: bool,
}

impl ScoredExample {
    pub fn new(score: f64, label: bool) -> Self {
        ScoredExample { score, label }
    }
}

/// Area under the ROC curve as the Mann-Whitney statistic: the fraction of
/// (positive, negative) pairs where the positive scores higher, ties counting
/// one half. Exact: pair counts are accumulated as integers in half units.
pub fn auc(scored: &[ScoredExample]) -> Result<f64> {
    if let Some(s) = scored.iter().find(|s| !(0.0..=1.0).contains(&s.score)) {
        return Err(Error::invalid(format!("score {} outside [0, 1]", s.score)));
    }
    let positives = scored.iter().filter(|s| s.label).count() as u64;
    let negatives = scored.len() as u64 - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::invalid("AUC needs at least one positive and one negative example"));
    }

    let mut sorted: Vec<&ScoredExample> = scored.iter().collect();
    sorted.sort_by(|a, b| a.score.total_cmp(&b.score));

    let mut half_units: u64 = 0;
    let mut negatives_below: u64 = 0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        let (mut pos, mut neg) = (0u64, 0u64);
        while j < sorted.len() && sorted[j].score == sorted[i].score {
            if sorted[j].label {
                pos += 1;
            } else {
                neg += 1;
            }
            j += 1;
        }
        half_units += 2 * pos * negatives_below + pos * neg;
        negatives_below += neg;
        i = j;
    }
    Ok(half_units as f64 / (2 * positives * negatives) as f64)
}

/// Mean numeric grade; withdrawals are excluded.
pub fn gpa_of<'a>(records: impl IntoIterator<Item = &'a RawRecord>) -> Result<f64> {
    let (sum, n) = records
        .into_iter()
        .filter_map(|r| r.grade.score())
        .fold((0u64, 0u64), |(s, n), g| (s + g as u64, n + 1));
    if n == 0 {
        return Err(Error::invalid("GPA undefined without a numeric grade"));
    }
    Ok(sum as f64 / n as f64)
}

/// GPA bands: `[0, 12)`, `[12, 16]`, `(16, 20]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GpaBand {
    Low,
    Mid,
    High,
}

impl GpaBand {
    pub const ALL: [GpaBand; 3] = [GpaBand::Low, GpaBand::Mid, GpaBand::High];

    pub fn of(gpa: f64) -> Self {
        if gpa < 12.0 {
            GpaBand::Low
        } else if gpa <= 16.0 {
            GpaBand::Mid
        } else {
            GpaBand::High
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            GpaBand::Low => "gpa<12",
            GpaBand::Mid => "12<=gpa<=16",
            GpaBand::High => "gpa>16",
        }
    }
}

/// GPA of each example's student over every term except the held-out last one.
pub fn history_gpas(records: &[RawRecord], examples: &[TrainExample]) -> Result<Vec<f64>> {
    let mut by_student: HashMap<&str, Vec<&RawRecord>> = HashMap::new();
    for r in records {
        by_student.entry(r.student_id.as_str()).or_default().push(r);
    }
    examples
        .iter()
        .map(|e| {
            let recs = by_student
                .get(e.student_id.as_str())
                .ok_or_else(|| Error::invalid(format!("no records for student {}", e.student_id)))?;
            let last = recs.iter().map(|r| r.period.as_str()).max().expect("non-empty");
            gpa_of(recs.iter().copied().filter(|r| r.period.as_str() != last))
        })
        .collect()
}

/// Share of each course's enrollments that ended NotApproved or Withdraw.
/// Courses never taken in `records` have no rate.
#[derive(Debug, Clone, PartialEq)]
pub struct FailureRates {
    rates: Vec<Option<f64>>,
}

/// Courses above this failure rate count as difficult.
pub const DIFFICULT_COURSE_RATE: f64 = 0.30;

impl FailureRates {
    pub fn from_records(records: &[RawRecord], catalog: &CourseCatalog) -> Result<Self> {
        let mut failed = vec![0usize; catalog.len()];
        let mut total = vec![0usize; catalog.len()];
        for r in records {
            let c = catalog.require(&r.course_id)?;
            total[c] += 1;
            if !is_passing(bucket_grade(r.grade)) {
                failed[c] += 1;
            }
        }
        Ok(FailureRates {
            rates: failed
                .iter()
                .zip(&total)
                .map(|(&f, &t)| (t > 0).then(|| f as f64 / t as f64))
                .collect(),
        })
    }

    /// Rebuilds rates from a course-id map, e.g. from checkpoint metadata.
    pub fn from_map(map: &BTreeMap<String, f64>, catalog: &CourseCatalog) -> Result<Self> {
        let mut rates = vec![None; catalog.len()];
        for (course, &rate) in map {
            if !(0.0..=1.0).contains(&rate) {
                return Err(Error::invalid(format!("failure rate {rate} for {course} outside [0, 1]")));
            }
            rates[catalog.require(course)?] = Some(rate);
        }
        Ok(FailureRates { rates })
    }

    pub fn to_map(&self, catalog: &CourseCatalog) -> BTreeMap<String, f64> {
        self.rates
            .iter()
            .enumerate()
            .filter_map(|(i, r)| r.map(|r| (catalog.course(i).unwrap().to_owned(), r)))
            .collect()
    }

    pub fn get(&self, course: usize) -> Option<f64> {
        self.rates.get(course).copied().flatten()
    }

    pub fn len(&self) -> usize {
        self.rates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rates.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DifficultyTier {
    Hard,
    Medium,
    Easy,
}

impl DifficultyTier {
    pub const ALL: [DifficultyTier; 3] = [DifficultyTier::Hard, DifficultyTier::Medium, DifficultyTier::Easy];
}

/// Classifies a combination by the share of its courses with a failure rate
/// above 30%: at least 0.8 is hard, at least 0.5 medium, anything lower easy.
pub fn difficulty_tier(combo: &QueryCombo, rates: &FailureRates) -> Result<DifficultyTier> {
    let mut difficult = 0usize;
    for &c in combo.courses() {
        let rate = rates
            .get(c)
            .ok_or_else(|| Error::invalid(format!("no failure rate for course index {c}")))?;
        if rate > DIFFICULT_COURSE_RATE {
            difficult += 1;
        }
    }
    let share = difficult as f64 / combo.len() as f64;
    Ok(if share >= 0.8 {
        DifficultyTier::Hard
    } else if share >= 0.5 {
        DifficultyTier::Medium
    } else {
        DifficultyTier::Easy
    })
}

/// Builds one exemplar combination per tier: 4 of 5 difficult courses, 2 of 4,
/// and 0 of 4. Difficult courses are taken hardest first, the rest easiest first.
pub fn tier_combos(rates: &FailureRates) -> Result<[QueryCombo; 3]> {
    let mut difficult: Vec<(usize, f64)> = Vec::new();
    let mut manageable: Vec<(usize, f64)> = Vec::new();
    for c in 0..rates.len() {
        if let Some(r) = rates.get(c) {
            if r > DIFFICULT_COURSE_RATE {
                difficult.push((c, r));
            } else {
                manageable.push((c, r));
            }
        }
    }
    if difficult.len() < 4 || manageable.len() < 4 {
        return Err(Error::invalid(format!(
            "tier exemplars need 4 courses on each side of the {DIFFICULT_COURSE_RATE} failure rate; found {} above and {} at or below",
            difficult.len(),
            manageable.len()
        )));
    }
    difficult.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    manageable.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    let pick = |d: usize, m: usize| {
        QueryCombo::new(
            rates.len(),
            difficult[..d].iter().chain(&manageable[..m]).map(|&(c, _)| c),
        )
    };
    Ok([pick(4, 1)?, pick(2, 2)?, pick(0, 4)?])
}

/// Mean predicted success per (GPA band, difficulty tier).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fig4Grid {
    /// `cells[band][tier]`, bands low to high, tiers hard, medium, easy.
    pub cells: [[f64; 3]; 3],
    pub band_counts: [usize; 3],
}

impl Fig4Grid {
    /// Within every band, success does not drop as the combination gets easier.
    pub fn rows_monotone(&self) -> bool {
        self.cells.iter().all(|row| row[0] <= row[1] && row[1] <= row[2])
    }

    /// Within every tier, success does not drop as GPA rises.
    pub fn columns_monotone(&self) -> bool {
        (0..3).all(|t| self.cells[0][t] <= self.cells[1][t] && self.cells[1][t] <= self.cells[2][t])
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("band,students,hard,medium,easy\n");
        for (b, band) in GpaBand::ALL.iter().enumerate() {
            let [h, m, e] = self.cells[b];
            writeln!(out, "{},{},{h},{m},{e}", band.label(), self.band_counts[b]).unwrap();
        }
        out
    }
}

/// Scores each tier exemplar for every student and averages within GPA bands.
/// `students` pairs each validation example with its history GPA.
pub fn fig4_experiment(
    params: &ModelParams,
    students: &[(f64, &TrainExample)],
    tiers: &[QueryCombo; 3],
    rates: &FailureRates,
) -> Result<Fig4Grid> {
    for (combo, expected) in tiers.iter().zip(DifficultyTier::ALL) {
        let tier = difficulty_tier(combo, rates)?;
        if tier != expected {
            return Err(Error::invalid(format!(
                "combination {:?} is {tier:?}, expected {expected:?}",
                combo.courses()
            )));
        }
    }
    let mut band_counts = [0usize; 3];
    for &(gpa, _) in students {
        band_counts[GpaBand::of(gpa) as usize] += 1;
    }
    if band_counts.contains(&0) {
        return Err(Error::invalid(format!(
            "every GPA band needs a student; populations (low, mid, high) = {band_counts:?}"
        )));
    }

    let mut sums = [[0.0f64; 3]; 3];
    for &(gpa, example) in students {
        let band = GpaBand::of(gpa) as usize;
        let repr = encode_history(params, &example.history)?.representation();
        for (t, combo) in tiers.iter().enumerate() {
            sums[band][t] += head_forward(params, &repr, combo)?.probability;
        }
    }
    let mut cells = [[0.0; 3]; 3];
    for b in 0..3 {
        for t in 0..3 {
            cells[b][t] = sums[b][t] / band_counts[b] as f64;
        }
    }
    Ok(Fig4Grid { cells, band_counts })
}

/// One-feature logistic regression on GPA, the baseline the sequence model must beat.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GpaLogistic {
    pub intercept: f64,
    pub slope: f64,
    mean: f64,
    scale: f64,
}

impl GpaLogistic {
    /// Newton-Raphson on the standardised feature with a small ridge term.
    pub fn fit(gpas: &[f64], labels: &[bool]) -> Result<Self> {
        if gpas.len() != labels.len() || gpas.is_empty() {
            return Err(Error::invalid("GPA and label lists must be non-empty and equal length"));
        }
        let n = gpas.len() as f64;
        let mean = gpas.iter().sum::<f64>() / n;
        let var = gpas.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / n;
        let scale = if var > 0.0 { var.sqrt() } else { 1.0 };
        let xs: Vec<f64> = gpas.iter().map(|g| (g - mean) / scale).collect();

        let ridge = 1e-6;
        let (mut a, mut b) = (0.0f64, 0.0f64);
        for _ in 0..100 {
            let (mut ga, mut gb, mut haa, mut hab, mut hbb) = (0.0, 0.0, ridge, 0.0, ridge);
            for (&x, &y) in xs.iter().zip(labels) {
                let p = crate::nnet::sigmoid(a + b * x);
                let r = p - if y { 1.0 } else { 0.0 };
                let w = p * (1.0 - p);
                ga += r;
                gb += r * x;
                haa += w;
                hab += w * x;
                hbb += w * x * x;
            }
            ga += ridge * a;
            gb += ridge * b;
            let det = haa * hbb - hab * hab;
            let da = (hbb * ga - hab * gb) / det;
            let db = (haa * gb - hab * ga) / det;
            a -= da;
            b -= db;
            if da.abs().max(db.abs()) < 1e-12 {
                break;
            }
        }
        Ok(GpaLogistic {
            intercept: a,
            slope: b,
            mean,
            scale,
        })
    }

    pub fn predict(&self, gpa: f64) -> f64 {
        crate::nnet::sigmoid(self.intercept + self.slope * (gpa - self.mean) / self.scale)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transcript::Grade;

    fn s(score: f64, label: bool) -> ScoredExample {
        ScoredExample::new(score, label)
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&[s(0.9, true), s(0.8, true), s(0.1, false)]).unwrap(), 1.0);
        assert_eq!(auc(&[s(0.5, true), s(0.5, false)]).unwrap(), 0.5);
        // pairs (0.2 vs 0.4) -> 0, (0.7 vs 0.4) -> 1
        assert_eq!(auc(&[s(0.2, true), s(0.7, true), s(0.4, false)]).unwrap(), 0.5);
    }

    #[test]
    fn auc_requires_both_classes() {
        assert!(auc(&[s(0.2, true), s(0.3, true)]).is_err());
        assert!(auc(&[]).is_err());
        assert!(auc(&[s(1.5, true), s(0.3, false)]).is_err());
    }

    fn rec(grade: Grade) -> RawRecord {
        RawRecord::new("s", "A", "p", grade)
    }

    #[test]
    fn gpa_examples() {
        assert_eq!(gpa_of(&[rec(Grade::Score(10)), rec(Grade::Score(14))]).unwrap(), 12.0);
        assert_eq!(
            gpa_of(&[rec(Grade::Score(15)), rec(Grade::Withdrawn), rec(Grade::Score(15))]).unwrap(),
            15.0
        );
        assert!(gpa_of(&[rec(Grade::Withdrawn)]).is_err());
    }

    #[test]
    fn gpa_band_edges() {
        assert_eq!(GpaBand::of(11.99), GpaBand::Low);
        assert_eq!(GpaBand::of(12.0), GpaBand::Mid);
        assert_eq!(GpaBand::of(16.0), GpaBand::Mid);
        assert_eq!(GpaBand::of(16.01), GpaBand::High);
    }

    fn rates(values: &[f64]) -> FailureRates {
        FailureRates {
            rates: values.iter().map(|&v| Some(v)).collect(),
        }
    }

    #[test]
    fn tier_examples() {
        let r = rates(&[0.35, 0.35, 0.35, 0.35, 0.1, 0.1, 0.1]);
        let combo = |c: &[usize]| QueryCombo::new(7, c.iter().copied()).unwrap();
        assert_eq!(difficulty_tier(&combo(&[0, 1, 2, 3, 4]), &r).unwrap(), DifficultyTier::Hard);
        assert_eq!(difficulty_tier(&combo(&[0, 1, 4, 5]), &r).unwrap(), DifficultyTier::Medium);
        assert_eq!(difficulty_tier(&combo(&[4, 5, 6]), &r).unwrap(), DifficultyTier::Easy);
        // a third over the threshold falls back to easy
        assert_eq!(difficulty_tier(&combo(&[0, 4, 5]), &r).unwrap(), DifficultyTier::Easy);
        // exactly 0.30 is not over the threshold
        assert_eq!(
            difficulty_tier(&combo(&[0]), &rates(&[0.30])).unwrap(),
            DifficultyTier::Easy
        );
        let unknown = FailureRates {
            rates: vec![Some(0.5), None],
        };
        assert!(difficulty_tier(&QueryCombo::new(2, [1]).unwrap(), &unknown).is_err());
    }

    #[test]
    fn tier_exemplars_classify_as_intended() {
        let r = rates(&[0.5, 0.05, 0.6, 0.2, 0.45, 0.31, 0.1, 0.25, 0.3]);
        let combos = tier_combos(&r).unwrap();
        for (c, t) in combos.iter().zip(DifficultyTier::ALL) {
            assert_eq!(difficulty_tier(c, &r).unwrap(), t);
        }
        assert_eq!(combos[0].courses(), [0, 1, 2, 4, 5]);
        assert!(tier_combos(&rates(&[0.5, 0.5, 0.5, 0.1])).is_err());
    }

    #[test]
    fn failure_rates_from_records() {
        let recs = vec![
            RawRecord::new("a", "X", "p1", Grade::Score(5)),
            RawRecord::new("b", "X", "p1", Grade::Withdrawn),
            RawRecord::new("c", "X", "p1", Grade::Score(10)),
            RawRecord::new("d", "X", "p1", Grade::Score(18)),
            RawRecord::new("a", "Y", "p2", Grade::Score(12)),
        ];
        let cat = CourseCatalog::from_courses(["X", "Y", "Z"]).unwrap();
        let r = FailureRates::from_records(&recs, &cat).unwrap();
        assert_eq!(r.get(0), Some(0.5));
        assert_eq!(r.get(1), Some(0.0));
        assert_eq!(r.get(2), None);
        let map = r.to_map(&cat);
        assert_eq!(map.len(), 2);
        assert_eq!(FailureRates::from_map(&map, &cat).unwrap(), r);
    }

    #[test]
    fn grid_monotonicity_checks() {
        let grid = Fig4Grid {
            cells: [[0.1, 0.2, 0.3], [0.2, 0.3, 0.4], [0.3, 0.4, 0.5]],
            band_counts: [1, 1, 1],
        };
        assert!(grid.rows_monotone() && grid.columns_monotone());
        let mut bad = grid.clone();
        bad.cells[1][0] = 0.35;
        assert!(!bad.rows_monotone());
        assert!(grid.to_csv().starts_with("band,students,hard,medium,easy\ngpa<12,1,0.1,0.2,0.3\n"));
    }

    #[test]
    fn logistic_baseline_tracks_gpa() {
        let gpas = [8.0, 9.0, 10.0, 11.0, 13.0, 14.0, 15.0, 16.0, 12.0, 12.5];
        let labels = [false, false, false, true, true, true, true, true, false, true];
        let m = GpaLogistic::fit(&gpas, &labels).unwrap();
        assert!(m.slope > 0.0);
        assert!(m.predict(16.0) > m.predict(8.0));
        // separable data: the fit still terminates with finite parameters
        let sep = GpaLogistic::fit(&[1.0, 2.0, 3.0, 4.0], &[false, false, true, true]).unwrap();
        assert!(sep.slope.is_finite() && sep.slope > 0.0);
    }
}
