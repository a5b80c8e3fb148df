//! Raw grade transcripts: CSV parsing, grade bucketing and the course catalog.
//!
//! A transcript is a flat list of `(student, course, period, grade)` rows. Grades
//! live on a 0..=20 scale with `R` marking a withdrawal. Period keys are opaque
//! strings whose lexicographic order is their chronological order.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CSV_HEADER: [&str; 4] = ["student_id", "course_id", "period", "grade"];

/// Highest grade on the scale.
pub const MAX_GRADE: u8 = 20;

/// Lowest passing grade.
pub const PASS_MARK: u8 = 10;

pub const WITHDRAWAL_TOKEN: &str = "R";

/// A recorded grade: a score on the 0..=20 scale or a withdrawal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Grade {
    Score(u8),
    Withdrawn,
}

impl Grade {
    pub fn score(self) -> Option<u8> {
        match self {
            Grade::Score(s) => Some(s),
            Grade::Withdrawn => None,
        }
    }
}

impl fmt::Display for Grade {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Grade::Score(s) => write!(f, "{s}"),
            Grade::Withdrawn => f.write_str(WITHDRAWAL_TOKEN),
        }
    }
}

impl FromStr for Grade {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let s = s.trim();
        if s == WITHDRAWAL_TOKEN {
            return Ok(Grade::Withdrawn);
        }
        match s.parse::<i64>() {
            Ok(v) if (0..=MAX_GRADE as i64).contains(&v) => Ok(Grade::Score(v as u8)),
            Ok(v) => Err(format!("grade {v} outside 0..={MAX_GRADE}")),
            Err(_) => Err(format!("grade {s:?} is neither an integer nor {WITHDRAWAL_TOKEN:?}")),
        }
    }
}

// Grades travel through JSON as either an integer or the string "R".
impl Serialize for Grade {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Grade::Score(v) => s.serialize_u8(*v),
            Grade::Withdrawn => s.serialize_str(WITHDRAWAL_TOKEN),
        }
    }
}

impl<'de> Deserialize<'de> for Grade {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Int(i64),
            Str(String),
        }
        match Repr::deserialize(d)? {
            Repr::Int(v) if (0..=MAX_GRADE as i64).contains(&v) => Ok(Grade::Score(v as u8)),
            Repr::Int(v) => Err(serde::de::Error::custom(format!(
                "grade {v} outside 0..={MAX_GRADE}"
            ))),
            Repr::Str(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RawRecord {
    pub student_id: String,
    pub course_id: String,
    pub period: String,
    pub grade: Grade,
}

impl RawRecord {
    pub fn new(student_id: &str, course_id: &str, period: &str, grade: Grade) -> Self {
        RawRecord {
            student_id: student_id.to_owned(),
            course_id: course_id.to_owned(),
            period: period.to_owned(),
            grade,
        }
    }
}

/// The four grade buckets. The discriminants are the persisted category indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum GradeCategory {
    Withdraw = 0,
    NotApproved = 1,
    Bad = 2,
    Excellent = 3,
}

impl GradeCategory {
    pub const COUNT: usize = 4;
    pub const ALL: [GradeCategory; 4] = [
        GradeCategory::Withdraw,
        GradeCategory::NotApproved,
        GradeCategory::Bad,
        GradeCategory::Excellent,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }
}

/// Maps a grade onto its category: `R` is a withdrawal, 0..=9 not approved,
/// 10..=12 bad and 13..=20 excellent.
pub fn bucket_grade(grade: Grade) -> GradeCategory {
    match grade {
        Grade::Withdrawn => GradeCategory::Withdraw,
        Grade::Score(s) if s < PASS_MARK => GradeCategory::NotApproved,
        Grade::Score(s) if s <= 12 => GradeCategory::Bad,
        Grade::Score(_) => GradeCategory::Excellent,
    }
}

/// Withdrawals yield no passing grade, so only `Bad` and `Excellent` pass.
pub fn is_passing(category: GradeCategory) -> bool {
    matches!(category, GradeCategory::Bad | GradeCategory::Excellent)
}

/// Reads a transcript CSV. Row order is preserved.
pub fn parse_transcript<R: Read>(source: R) -> Result<Vec<RawRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(source);

    let mut records = Vec::new();
    let mut seen: HashSet<(String, String, String)> = HashSet::new();
    let mut header_checked = false;

    for row in reader.records() {
        let row = row.map_err(|e| Error::Parse {
            line: e.position().map(|p| p.line() as usize).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = row.position().map(|p| p.line() as usize).unwrap_or(0);

        if !header_checked {
            header_checked = true;
            let header: Vec<&str> = row.iter().map(str::trim).collect();
            if header != CSV_HEADER {
                return Err(Error::Parse {
                    line,
                    message: format!(
                        "expected header {:?}, found {:?}",
                        CSV_HEADER.join(","),
                        header.join(",")
                    ),
                });
            }
            continue;
        }

        if row.len() != CSV_HEADER.len() {
            return Err(Error::Parse {
                line,
                message: format!("expected {} columns, found {}", CSV_HEADER.len(), row.len()),
            });
        }

        let field = |i: usize| row[i].trim().to_owned();
        let (student_id, course_id, period) = (field(0), field(1), field(2));
        for (name, value) in [("student_id", &student_id), ("course_id", &course_id), ("period", &period)] {
            if value.is_empty() {
                return Err(Error::Validation {
                    line,
                    message: format!("empty {name}"),
                });
            }
        }
        let grade: Grade = row[3]
            .parse()
            .map_err(|message| Error::Validation { line, message })?;

        let key = (student_id.clone(), course_id.clone(), period.clone());
        if !seen.insert(key) {
            return Err(Error::Validation {
                line,
                message: format!(
                    "duplicate record for student {student_id}, course {course_id}, period {period}"
                ),
            });
        }
        records.push(RawRecord {
            student_id,
            course_id,
            period,
            grade,
        });
    }

    if !header_checked {
        return Err(Error::Parse {
            line: 1,
            message: "missing header row".into(),
        });
    }
    Ok(records)
}

/// Writes records in the format [`parse_transcript`] reads.
pub fn write_transcript<W: Write>(records: &[RawRecord], sink: W) -> Result<()> {
    let mut writer = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(sink);
    let to_io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    writer.write_record(CSV_HEADER).map_err(to_io)?;
    for r in records {
        writer
            .write_record([
                r.student_id.as_str(),
                r.course_id.as_str(),
                r.period.as_str(),
                &r.grade.to_string(),
            ])
            .map_err(to_io)?;
    }
    writer.flush()?;
    Ok(())
}

/// Dense, lexicographically ordered course index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CourseCatalog {
    courses: Vec<String>,
    index: HashMap<String, usize>,
}

impl CourseCatalog {
    /// Builds a catalog from course ids in any order; duplicates collapse.
    pub fn from_courses<I, S>(courses: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let sorted: BTreeSet<String> = courses.into_iter().map(Into::into).collect();
        if sorted.is_empty() {
            return Err(Error::invalid("catalog needs at least one course"));
        }
        let courses: Vec<String> = sorted.into_iter().collect();
        let index = courses
            .iter()
            .enumerate()
            .map(|(i, c)| (c.clone(), i))
            .collect();
        Ok(CourseCatalog { courses, index })
    }

    pub fn len(&self) -> usize {
        self.courses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.courses.is_empty()
    }

    pub fn lookup(&self, course_id: &str) -> Option<usize> {
        self.index.get(course_id).copied()
    }

    pub fn require(&self, course_id: &str) -> Result<usize> {
        self.lookup(course_id)
            .ok_or_else(|| Error::UnknownCourse(course_id.to_owned()))
    }

    pub fn course(&self, index: usize) -> Option<&str> {
        self.courses.get(index).map(String::as_str)
    }

    pub fn courses(&self) -> &[String] {
        &self.courses
    }
}

impl Serialize for CourseCatalog {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.courses.serialize(s)
    }
}

impl<'de> Deserialize<'de> for CourseCatalog {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let courses = Vec::<String>::deserialize(d)?;
        let catalog = CourseCatalog::from_courses(courses.iter().cloned()).map_err(serde::de::Error::custom)?;
        if catalog.courses() != courses.as_slice() {
            return Err(serde::de::Error::custom(
                "catalog must list distinct courses in lexicographic order",
            ));
        }
        Ok(catalog)
    }
}

pub fn build_catalog(records: &[RawRecord]) -> Result<CourseCatalog> {
    if records.is_empty() {
        return Err(Error::invalid("cannot build a catalog from an empty transcript"));
    }
    CourseCatalog::from_courses(records.iter().map(|r| r.course_id.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<Vec<RawRecord>> {
        parse_transcript(text.as_bytes())
    }

    const HEADER: &str = "student_id,course_id,period,grade\n";

    #[test]
    fn parses_numeric_and_withdrawal_rows() {
        let recs = parse(&format!("{HEADER}s1,BPTMI01,2010-1,15\ns1,BPTMI02,2010-1,R\n")).unwrap();
        assert_eq!(recs[0], RawRecord::new("s1", "BPTMI01", "2010-1", Grade::Score(15)));
        assert_eq!(recs[1].grade, Grade::Withdrawn);
    }

    #[test]
    fn rejects_out_of_range_grade() {
        let err = parse(&format!("{HEADER}s1,BPTMI01,2010-1,21\n")).unwrap_err();
        assert!(matches!(err, Error::Validation { line: 2, .. }), "{err}");
        assert!(parse(&format!("{HEADER}s1,BPTMI01,2010-1,-1\n")).is_err());
        assert!(parse(&format!("{HEADER}s1,BPTMI01,2010-1,x\n")).is_err());
    }

    #[test]
    fn reports_line_of_malformed_row() {
        let err = parse(&format!("{HEADER}s1,A,2010-1,15\ns1,B,2010-1\n")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
    }

    #[test]
    fn rejects_duplicates_and_bad_header() {
        let err = parse(&format!("{HEADER}s1,A,2010-1,15\ns1,A,2010-1,12\n")).unwrap_err();
        assert!(matches!(err, Error::Validation { line: 3, .. }), "{err}");
        assert!(matches!(parse("a,b,c,d\n"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(parse(""), Err(Error::Parse { .. })));
    }

    #[test]
    fn header_only_is_empty_transcript() {
        assert!(parse(HEADER).unwrap().is_empty());
    }

    #[test]
    fn bucket_boundaries() {
        assert_eq!(bucket_grade(Grade::Score(9)), GradeCategory::NotApproved);
        assert_eq!(bucket_grade(Grade::Score(10)), GradeCategory::Bad);
        assert_eq!(bucket_grade(Grade::Score(12)), GradeCategory::Bad);
        assert_eq!(bucket_grade(Grade::Score(13)), GradeCategory::Excellent);
        assert_eq!(bucket_grade(Grade::Withdrawn), GradeCategory::Withdraw);
    }

    #[test]
    fn bucket_preimages_partition_the_scale() {
        let mut pre: [Vec<u8>; 4] = Default::default();
        for s in 0..=MAX_GRADE {
            pre[bucket_grade(Grade::Score(s)).index()].push(s);
        }
        assert!(pre[0].is_empty());
        assert_eq!(pre[1], (0..=9).collect::<Vec<_>>());
        assert_eq!(pre[2], (10..=12).collect::<Vec<_>>());
        assert_eq!(pre[3], (13..=20).collect::<Vec<_>>());
    }

    #[test]
    fn passing_categories() {
        assert!(is_passing(GradeCategory::Excellent));
        assert!(is_passing(GradeCategory::Bad));
        assert!(!is_passing(GradeCategory::NotApproved));
        assert!(!is_passing(GradeCategory::Withdraw));
    }

    #[test]
    fn catalog_is_sorted_and_deterministic() {
        let recs = vec![
            RawRecord::new("s1", "B", "p1", Grade::Score(10)),
            RawRecord::new("s1", "A", "p1", Grade::Score(10)),
            RawRecord::new("s2", "B", "p1", Grade::Score(10)),
        ];
        let cat = build_catalog(&recs).unwrap();
        assert_eq!(cat.courses(), ["A", "B"]);
        assert_eq!(cat.lookup("A"), Some(0));
        assert_eq!(cat.lookup("B"), Some(1));

        let mut rev = recs.clone();
        rev.reverse();
        assert_eq!(build_catalog(&rev).unwrap(), cat);

        let single = build_catalog(&recs[..1]).unwrap();
        assert_eq!(single.courses(), ["B"]);
        assert!(build_catalog(&[]).is_err());
    }

    #[test]
    fn catalog_json_rejects_unsorted() {
        assert!(serde_json::from_str::<CourseCatalog>(r#"["B","A"]"#).is_err());
        let cat: CourseCatalog = serde_json::from_str(r#"["A","B"]"#).unwrap();
        assert_eq!(serde_json::to_string(&cat).unwrap(), r#"["A","B"]"#);
    }

    #[test]
    fn grade_json_forms() {
        assert_eq!(serde_json::from_str::<Grade>("15").unwrap(), Grade::Score(15));
        assert_eq!(serde_json::from_str::<Grade>("\"R\"").unwrap(), Grade::Withdrawn);
        assert!(serde_json::from_str::<Grade>("21").is_err());
        assert_eq!(serde_json::to_string(&Grade::Withdrawn).unwrap(), "\"R\"");
    }
}
