//! Data model: problems with ordered test suites, student interactions and
//! trajectories, plus ingestion, first-submission filtering and fold
//! construction.
//!
//! Outcome strings are positional: character `i` is the label of test `i` of
//! the problem's suite. Reordering a suite invalidates every stored label.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value as Json;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("submissions row {row}: field `{field}`: {message}")]
    Schema { row: usize, field: &'static str, message: String },
    #[error("problems file: {0}")]
    Problems(String),
    #[error("submissions row {row}: unknown problem_id `{problem_id}`")]
    UnknownProblem { row: usize, problem_id: String },
    #[error(
        "submissions row {row}: outcomes has {found} entries but problem `{problem_id}` has {expected} tests"
    )]
    OutcomeLength { row: usize, problem_id: String, expected: usize, found: usize },
    #[error("student `{student_id}` has two interactions at timestamp {timestamp}")]
    DuplicateTimestamp { student_id: String, timestamp: i64 },
    #[error("configuration error: {0}")]
    Config(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Visibility {
    #[default]
    Public,
    Hidden,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestCase {
    /// Argument tuple, one JSON literal per parameter of the entry signature.
    pub input: Vec<Json>,
    pub expected_output: Json,
    #[serde(default)]
    pub visibility: Visibility,
}

impl TestCase {
    /// Short textual form used for embedding test cases, e.g. `("bread") -> "jam"`.
    pub fn describe(&self) -> String {
        let args: Vec<String> = self.input.iter().map(|v| v.to_string()).collect();
        format!("({}) -> {}", args.join(", "), self.expected_output)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Problem {
    pub problem_id: String,
    pub statement: String,
    /// e.g. `fn getSandwich(str: string) -> string`.
    pub entry_signature: String,
    pub tests: Vec<TestCase>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_solution: Option<String>,
}

impl Problem {
    pub fn suite(&self) -> &[TestCase] {
        &self.tests
    }

    /// Name of the function a submission must define.
    pub fn entry_name(&self) -> &str {
        let sig = self.entry_signature.trim();
        let sig = sig.strip_prefix("fn").map(str::trim_start).unwrap_or(sig);
        sig.split(|c: char| c == '(' || c.is_whitespace()).next().unwrap_or("")
    }
}

/// Ordered pass/fail labels aligned with a problem's suite.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Outcomes(pub Vec<bool>);

impl Outcomes {
    pub fn parse(s: &str) -> Result<Self, String> {
        s.chars()
            .map(|c| match c {
                '1' => Ok(true),
                '0' => Ok(false),
                other => Err(format!("invalid outcome character `{other}`")),
            })
            .collect::<Result<Vec<_>, _>>()
            .map(Outcomes)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Overall score: 1 iff every test passes.
    pub fn all_pass(&self) -> bool {
        self.0.iter().all(|&p| p)
    }
}

impl fmt::Display for Outcomes {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &p in &self.0 {
            f.write_str(if p { "1" } else { "0" })?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interaction {
    pub student_id: String,
    pub problem_id: String,
    pub timestamp: i64,
    pub attempt_index: u32,
    pub code: String,
    /// `None` while the submission still needs grading.
    pub outcomes: Option<Outcomes>,
}

impl Interaction {
    /// Binary score derived from the outcomes; `None` when ungraded.
    pub fn score(&self) -> Option<bool> {
        self.outcomes.as_ref().map(Outcomes::all_pass)
    }

    pub fn needs_grading(&self) -> bool {
        self.outcomes.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub student_id: String,
    pub interactions: Vec<Interaction>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub problems: BTreeMap<String, Problem>,
    /// Sorted by student id; each trajectory sorted by timestamp.
    pub trajectories: Vec<Trajectory>,
    pub provenance: String,
}

#[derive(Debug, Deserialize)]
struct SubmissionRow {
    student_id: String,
    problem_id: String,
    timestamp: String,
    attempt_index: String,
    code: String,
    score: String,
    outcomes: String,
}

const SUBMISSION_HEADER: [&str; 7] =
    ["student_id", "problem_id", "timestamp", "attempt_index", "code", "score", "outcomes"];

pub fn parse_problems(text: &str) -> Result<BTreeMap<String, Problem>, DataError> {
    let list: Vec<Problem> =
        serde_json::from_str(text).map_err(|e| DataError::Problems(e.to_string()))?;
    let mut problems = BTreeMap::new();
    for p in list {
        if p.tests.is_empty() {
            return Err(DataError::Problems(format!("problem `{}` has an empty suite", p.problem_id)));
        }
        if p.entry_name().is_empty() {
            return Err(DataError::Problems(format!(
                "problem `{}` has no entry function name in `{}`",
                p.problem_id, p.entry_signature
            )));
        }
        let id = p.problem_id.clone();
        if problems.insert(id.clone(), p).is_some() {
            return Err(DataError::Problems(format!("duplicate problem_id `{id}`")));
        }
    }
    Ok(problems)
}

/// Parses submissions CSV text against a problem table.
pub fn parse_submissions(
    text: &str,
    problems: &BTreeMap<String, Problem>,
) -> Result<Vec<Interaction>, DataError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| DataError::Schema { row: 1, field: "header", message: e.to_string() })?
        .clone();
    if headers.iter().ne(SUBMISSION_HEADER.iter().copied()) && !(text.trim().is_empty()) {
        return Err(DataError::Schema {
            row: 1,
            field: "header",
            message: format!("expected `{}`", SUBMISSION_HEADER.join(",")),
        });
    }
    let mut out = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 2;
        let record = record.map_err(|e| DataError::Schema { row, field: "record", message: e.to_string() })?;
        let raw: SubmissionRow = record
            .deserialize(Some(&headers))
            .map_err(|e| DataError::Schema { row, field: "record", message: e.to_string() })?;
        let problem = problems
            .get(&raw.problem_id)
            .ok_or_else(|| DataError::UnknownProblem { row, problem_id: raw.problem_id.clone() })?;
        if raw.student_id.is_empty() {
            return Err(DataError::Schema { row, field: "student_id", message: "empty".into() });
        }
        let timestamp = if raw.timestamp.trim().is_empty() {
            // ingestion order
            i as i64
        } else {
            raw.timestamp.trim().parse::<i64>().map_err(|e| DataError::Schema {
                row,
                field: "timestamp",
                message: e.to_string(),
            })?
        };
        let attempt_index = if raw.attempt_index.trim().is_empty() {
            1
        } else {
            raw.attempt_index.trim().parse::<u32>().map_err(|e| DataError::Schema {
                row,
                field: "attempt_index",
                message: e.to_string(),
            })?
        };
        if attempt_index == 0 {
            return Err(DataError::Schema { row, field: "attempt_index", message: "must be >= 1".into() });
        }
        let outcomes = if raw.outcomes.trim().is_empty() {
            None
        } else {
            let o = Outcomes::parse(raw.outcomes.trim())
                .map_err(|message| DataError::Schema { row, field: "outcomes", message })?;
            if o.len() != problem.tests.len() {
                return Err(DataError::OutcomeLength {
                    row,
                    problem_id: raw.problem_id.clone(),
                    expected: problem.tests.len(),
                    found: o.len(),
                });
            }
            Some(o)
        };
        match (raw.score.trim(), &outcomes) {
            ("", _) => {}
            (s @ ("0" | "1"), Some(o)) => {
                if (s == "1") != o.all_pass() {
                    log::warn!("row {row}: score {s} disagrees with outcomes; using outcomes");
                }
            }
            ("0" | "1", None) => {}
            (other, _) => {
                return Err(DataError::Schema {
                    row,
                    field: "score",
                    message: format!("expected 0 or 1, found `{other}`"),
                });
            }
        }
        out.push(Interaction {
            student_id: raw.student_id,
            problem_id: raw.problem_id,
            timestamp,
            attempt_index,
            code: raw.code,
            outcomes,
        });
    }
    Ok(out)
}

impl Dataset {
    pub fn from_parts(
        problems: BTreeMap<String, Problem>,
        interactions: Vec<Interaction>,
        provenance: impl Into<String>,
    ) -> Result<Self, DataError> {
        let mut by_student: BTreeMap<String, Vec<Interaction>> = BTreeMap::new();
        for it in interactions {
            if !problems.contains_key(&it.problem_id) {
                return Err(DataError::UnknownProblem { row: 0, problem_id: it.problem_id });
            }
            by_student.entry(it.student_id.clone()).or_default().push(it);
        }
        let mut trajectories = Vec::with_capacity(by_student.len());
        for (student_id, mut interactions) in by_student {
            interactions.sort_by_key(|i| i.timestamp);
            if let Some(w) = interactions.windows(2).find(|w| w[0].timestamp == w[1].timestamp) {
                return Err(DataError::DuplicateTimestamp { student_id, timestamp: w[0].timestamp });
            }
            trajectories.push(Trajectory { student_id, interactions });
        }
        Ok(Dataset { problems, trajectories, provenance: provenance.into() })
    }

    pub fn interactions(&self) -> impl Iterator<Item = &Interaction> {
        self.trajectories.iter().flat_map(|t| t.interactions.iter())
    }

    pub fn num_interactions(&self) -> usize {
        self.trajectories.iter().map(|t| t.interactions.len()).sum()
    }

    pub fn student_ids(&self) -> Vec<String> {
        self.trajectories.iter().map(|t| t.student_id.clone()).collect()
    }

    pub fn trajectory(&self, student_id: &str) -> Option<&Trajectory> {
        self.trajectories
            .binary_search_by(|t| t.student_id.as_str().cmp(student_id))
            .ok()
            .map(|i| &self.trajectories[i])
    }

    pub fn is_fully_labeled(&self) -> bool {
        self.interactions().all(|i| !i.needs_grading())
    }

    /// Restriction to the given students (problems are kept whole).
    pub fn subset(&self, students: &[String]) -> Dataset {
        let keep: BTreeSet<&str> = students.iter().map(String::as_str).collect();
        Dataset {
            problems: self.problems.clone(),
            trajectories: self
                .trajectories
                .iter()
                .filter(|t| keep.contains(t.student_id.as_str()))
                .cloned()
                .collect(),
            provenance: self.provenance.clone(),
        }
    }

    pub fn problems_json(&self) -> String {
        let list: Vec<&Problem> = self.problems.values().collect();
        serde_json::to_string_pretty(&list).expect("problems serialize")
    }

    pub fn submissions_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(SUBMISSION_HEADER).expect("in-memory write");
        for it in self.interactions() {
            let score = match it.score() {
                Some(true) => "1".to_string(),
                Some(false) => "0".to_string(),
                None => String::new(),
            };
            let outcomes = it.outcomes.as_ref().map(|o| o.to_string()).unwrap_or_default();
            w.write_record([
                it.student_id.as_str(),
                it.problem_id.as_str(),
                &it.timestamp.to_string(),
                &it.attempt_index.to_string(),
                it.code.as_str(),
                &score,
                &outcomes,
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf8 csv")
    }

    pub fn write(&self, submissions_path: &Path, problems_path: &Path) -> Result<(), DataError> {
        std::fs::write(submissions_path, self.submissions_csv()).map_err(io_err(submissions_path))?;
        std::fs::write(problems_path, self.problems_json()).map_err(io_err(problems_path))?;
        Ok(())
    }

    pub fn summary(&self) -> DatasetSummary {
        DatasetSummary::of(self)
    }
}

pub fn load_dataset(submissions_path: &Path, problems_path: &Path) -> Result<Dataset, DataError> {
    let problems_text = std::fs::read_to_string(problems_path).map_err(io_err(problems_path))?;
    let subs_text = std::fs::read_to_string(submissions_path).map_err(io_err(submissions_path))?;
    let problems = parse_problems(&problems_text)?;
    let interactions = parse_submissions(&subs_text, &problems)?;
    Dataset::from_parts(problems, interactions, submissions_path.display().to_string())
}

/// Keeps only the earliest attempt of each student on each problem.
pub fn filter_first_submissions(dataset: &Dataset) -> Dataset {
    let trajectories = dataset
        .trajectories
        .iter()
        .map(|t| {
            let mut seen = BTreeSet::new();
            let interactions = t
                .interactions
                .iter()
                .filter(|i| seen.insert(i.problem_id.clone()))
                .map(|i| Interaction { attempt_index: 1, ..i.clone() })
                .collect();
            Trajectory { student_id: t.student_id.clone(), interactions }
        })
        .collect();
    Dataset { problems: dataset.problems.clone(), trajectories, provenance: dataset.provenance.clone() }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
}

/// Student-level k-fold split. Fold `i` tests on group `i` and validates on
/// group `i + 1 (mod k)`. With `k = 2` there is no spare group, so the
/// validation set is the last tenth (at least one student) of the train group.
pub fn make_folds(dataset: &Dataset, k: usize, seed: u64) -> Result<Vec<Fold>, DataError> {
    let mut students = dataset.student_ids();
    if k < 2 {
        return Err(DataError::Config(format!("fold count must be at least 2, got {k}")));
    }
    if students.len() < k {
        return Err(DataError::Config(format!(
            "{} students cannot fill {k} folds",
            students.len()
        )));
    }
    students.sort();
    students.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n = students.len();
    let mut groups: Vec<Vec<String>> = Vec::with_capacity(k);
    let mut start = 0;
    for g in 0..k {
        let size = n / k + usize::from(g < n % k);
        groups.push(students[start..start + size].to_vec());
        start += size;
    }
    let folds = (0..k)
        .map(|i| {
            let test = groups[i].clone();
            if k == 2 {
                let mut train = groups[1 - i].clone();
                let n_val = (train.len() / 10).max(1).min(train.len().saturating_sub(1));
                let validation = train.split_off(train.len() - n_val);
                return Fold { train, validation, test };
            }
            let v = (i + 1) % k;
            let validation = groups[v].clone();
            let train = (0..k)
                .filter(|&g| g != i && g != v)
                .flat_map(|g| groups[g].iter().cloned())
                .collect();
            Fold { train, validation, test }
        })
        .collect();
    Ok(folds)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Stat {
    pub mean: f64,
    pub sd: f64,
    pub min: f64,
    pub max: f64,
}

impl Stat {
    fn of(values: &[f64]) -> Stat {
        if values.is_empty() {
            return Stat { mean: 0.0, sd: 0.0, min: 0.0, max: 0.0 };
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = if values.len() > 1 {
            values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Stat {
            mean,
            sd: var.sqrt(),
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

/// Corpus statistics in the layout of a dataset-statistics table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetSummary {
    pub problems: usize,
    pub students: usize,
    pub test_cases: usize,
    pub submissions: usize,
    pub tests_per_problem: Stat,
    pub lines_per_submission: Stat,
    pub tokens_per_problem: Stat,
    pub tokens_per_test_case: Stat,
    pub tokens_per_submission: Stat,
    pub submissions_per_student: Stat,
    pub submissions_per_problem: Stat,
}

impl DatasetSummary {
    fn of(ds: &Dataset) -> Self {
        let count_tokens = |s: &str| minilang::surface_tokens(s).len() as f64;
        let mut per_problem: HashMap<&str, usize> = HashMap::new();
        for it in ds.interactions() {
            *per_problem.entry(it.problem_id.as_str()).or_default() += 1;
        }
        let tests: Vec<f64> = ds.problems.values().map(|p| p.tests.len() as f64).collect();
        DatasetSummary {
            problems: ds.problems.len(),
            students: ds.trajectories.len(),
            test_cases: ds.problems.values().map(|p| p.tests.len()).sum(),
            submissions: ds.num_interactions(),
            tests_per_problem: Stat::of(&tests),
            lines_per_submission: Stat::of(
                &ds.interactions().map(|i| i.code.lines().count() as f64).collect::<Vec<_>>(),
            ),
            tokens_per_problem: Stat::of(
                &ds.problems.values().map(|p| count_tokens(&p.statement)).collect::<Vec<_>>(),
            ),
            tokens_per_test_case: Stat::of(
                &ds.problems
                    .values()
                    .flat_map(|p| p.tests.iter().map(|t| count_tokens(&t.describe())))
                    .collect::<Vec<_>>(),
            ),
            tokens_per_submission: Stat::of(
                &ds.interactions().map(|i| count_tokens(&i.code)).collect::<Vec<_>>(),
            ),
            submissions_per_student: Stat::of(
                &ds.trajectories.iter().map(|t| t.interactions.len() as f64).collect::<Vec<_>>(),
            ),
            submissions_per_problem: Stat::of(
                &ds.problems
                    .keys()
                    .map(|p| per_problem.get(p.as_str()).copied().unwrap_or(0) as f64)
                    .collect::<Vec<_>>(),
            ),
        }
    }
}

impl fmt::Display for DatasetSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "# unique problems            {}", self.problems)?;
        writeln!(f, "# unique students            {}", self.students)?;
        writeln!(f, "# total test cases           {}", self.test_cases)?;
        writeln!(f, "# student code submissions   {}", self.submissions)?;
        writeln!(f, "{:<28} {:>8} {:>8} {:>8} {:>8}", "statistic", "mean", "sd", "min", "max")?;
        let rows = [
            ("# test cases/problem", self.tests_per_problem),
            ("# lines/submission", self.lines_per_submission),
            ("# tokens/problem", self.tokens_per_problem),
            ("# tokens/test case", self.tokens_per_test_case),
            ("# tokens/submission", self.tokens_per_submission),
            ("# submissions/student", self.submissions_per_student),
            ("# submissions/problem", self.submissions_per_problem),
        ];
        for (name, s) in rows {
            writeln!(f, "{name:<28} {:>8.1} {:>8.1} {:>8.0} {:>8.0}", s.mean, s.sd, s.min, s.max)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    pub(crate) fn toy_problems() -> BTreeMap<String, Problem> {
        let mk = |id: &str, n: usize| Problem {
            problem_id: id.into(),
            statement: format!("Problem {id}."),
            entry_signature: "fn f(a: int) -> int".into(),
            tests: (0..n)
                .map(|i| TestCase {
                    input: vec![json!(i)],
                    expected_output: json!(i + 1),
                    visibility: Visibility::Public,
                })
                .collect(),
            reference_solution: None,
        };
        [("p1", 2), ("p2", 8)].into_iter().map(|(id, n)| (id.to_string(), mk(id, n))).collect()
    }

    const HEADER: &str = "student_id,problem_id,timestamp,attempt_index,code,score,outcomes\n";

    #[test]
    fn empty_submissions_file_loads() {
        let ds = Dataset::from_parts(toy_problems(), parse_submissions(HEADER, &toy_problems()).unwrap(), "t")
            .unwrap();
        assert_eq!(ds.trajectories.len(), 0);
        assert!(parse_submissions("", &toy_problems()).unwrap().is_empty());
    }

    #[test]
    fn outcome_length_mismatch_is_rejected() {
        let csv = format!("{HEADER}s1,p2,1,1,\"x\",0,01010\n");
        let err = parse_submissions(&csv, &toy_problems()).unwrap_err();
        assert!(
            matches!(err, DataError::OutcomeLength { row: 2, expected: 8, found: 5, .. }),
            "{err}"
        );
    }

    #[test]
    fn unknown_problem_and_bad_fields_name_the_row() {
        let csv = format!("{HEADER}s1,p1,1,1,x,1,11\ns1,zz,2,1,x,1,11\n");
        let err = parse_submissions(&csv, &toy_problems()).unwrap_err();
        assert!(matches!(err, DataError::UnknownProblem { row: 3, .. }), "{err}");
        let csv = format!("{HEADER}s1,p1,abc,1,x,1,11\n");
        let err = parse_submissions(&csv, &toy_problems()).unwrap_err();
        assert!(matches!(err, DataError::Schema { row: 2, field: "timestamp", .. }), "{err}");
        let csv = format!("{HEADER}s1,p1,1,1,x,1,1x\n");
        let err = parse_submissions(&csv, &toy_problems()).unwrap_err();
        assert!(matches!(err, DataError::Schema { field: "outcomes", .. }), "{err}");
    }

    #[test]
    fn ungraded_rows_are_admitted() {
        let csv = format!("{HEADER}s1,p1,1,1,\"fn f(a: int) -> int {{ return a; }}\",,\n");
        let rows = parse_submissions(&csv, &toy_problems()).unwrap();
        assert!(rows[0].needs_grading());
        let ds = Dataset::from_parts(toy_problems(), rows, "t").unwrap();
        assert!(!ds.is_fully_labeled());
    }

    fn row(student: &str, problem: &str, t: i64, attempt: u32) -> Interaction {
        Interaction {
            student_id: student.into(),
            problem_id: problem.into(),
            timestamp: t,
            attempt_index: attempt,
            code: format!("code {student} {t}"),
            outcomes: Some(Outcomes(vec![true, false])),
        }
    }

    #[test]
    fn first_submission_filter_keeps_earliest() {
        let ds = Dataset::from_parts(
            toy_problems(),
            vec![row("a", "p1", 3, 3), row("a", "p1", 1, 1), row("a", "p1", 2, 2)],
            "t",
        )
        .unwrap();
        let f = filter_first_submissions(&ds);
        assert_eq!(f.trajectories[0].interactions.len(), 1);
        assert_eq!(f.trajectories[0].interactions[0].timestamp, 1);
    }

    #[test]
    fn first_submission_filter_interleaved_students() {
        // 4-row toy corpus: two students alternate on p1.
        let ds = Dataset::from_parts(
            toy_problems(),
            vec![row("a", "p1", 1, 1), row("b", "p1", 2, 1), row("a", "p1", 3, 2), row("b", "p1", 4, 2)],
            "t",
        )
        .unwrap();
        let f = filter_first_submissions(&ds);
        let kept: Vec<(String, i64)> =
            f.interactions().map(|i| (i.student_id.clone(), i.timestamp)).collect();
        assert_eq!(kept, vec![("a".to_string(), 1), ("b".to_string(), 2)]);
        // idempotent on already-filtered data
        assert_eq!(filter_first_submissions(&f), f);
    }

    #[test]
    fn duplicate_timestamps_are_rejected() {
        let err = Dataset::from_parts(toy_problems(), vec![row("a", "p1", 1, 1), row("a", "p2", 1, 1)], "t")
            .unwrap_err();
        assert!(matches!(err, DataError::DuplicateTimestamp { .. }));
    }

    fn students(n: usize) -> Dataset {
        let rows = (0..n).map(|i| row(&format!("s{i:03}"), "p1", 1, 1)).collect();
        Dataset::from_parts(toy_problems(), rows, "t").unwrap()
    }

    #[test]
    fn folds_of_246_students() {
        let ds = students(246);
        let folds = make_folds(&ds, 5, 7).unwrap();
        let sizes: Vec<usize> = folds.iter().map(|f| f.test.len()).collect();
        assert_eq!(sizes, vec![50, 49, 49, 49, 49]);
        let mut all: Vec<String> = folds.iter().flat_map(|f| f.test.clone()).collect();
        all.sort();
        assert_eq!(all, ds.student_ids());
        for f in &folds {
            let mut seen = BTreeSet::new();
            for s in f.train.iter().chain(&f.validation).chain(&f.test) {
                assert!(seen.insert(s.clone()), "{s} appears twice");
            }
            assert_eq!(seen.len(), 246);
        }
        assert_eq!(make_folds(&ds, 5, 7).unwrap(), folds);
        assert_ne!(make_folds(&ds, 5, 8).unwrap(), folds);
    }

    #[test]
    fn two_folds_of_two_students() {
        let ds = students(2);
        let folds = make_folds(&ds, 2, 0).unwrap();
        assert_eq!(folds[0].test.len(), 1);
        assert_eq!(folds[1].test.len(), 1);
        assert_ne!(folds[0].test, folds[1].test);
        assert!(make_folds(&students(1), 2, 0).is_err());
        assert!(make_folds(&ds, 1, 0).is_err());
    }

    #[test]
    fn entry_name_is_extracted() {
        let p = &toy_problems()["p1"];
        assert_eq!(p.entry_name(), "f");
    }
}
