use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::metrics::{bucket_scores, cosine_eval, jaccard, BUCKET_COUNT, BUCKET_LABELS};
use super::numeric::{parse_reference, score_numeric, ScoringMode, Verdict, DEFAULT_TOLERANCE};
use crate::error::{Error, Result};
use crate::index::Embedder;
use crate::knowledge::QuestionCategory;
use crate::rag::Answer;

pub const SIMILARITY_REPORT: &str = "similarity_report.csv";
pub const HISTOGRAM_REPORT: &str = "histogram.csv";
pub const CATEGORY_REPORT: &str = "category_report.csv";
pub const NUMERIC_REPORT: &str = "numeric_report.csv";
pub const SUMMARY: &str = "summary.txt";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairKind {
    Text,
    Numeric,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalPair {
    /// 1-based data row in the pairs file (header excluded).
    pub row: usize,
    pub question: String,
    pub category: QuestionCategory,
    pub reference_answer: String,
    /// Empty when the answer is to be produced at evaluation time.
    pub generated_answer: String,
    pub kind: PairKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct InvalidRow {
    pub row: usize,
    pub message: String,
}

#[derive(Deserialize)]
struct RawPair {
    question: String,
    category: String,
    reference_answer: String,
    #[serde(default)]
    generated_answer: String,
    kind: String,
}

/// Reads a pairs CSV. Rows that fail validation are returned separately so
/// the rest can still be scored.
pub fn load_pairs(path: &Path) -> Result<(Vec<EvalPair>, Vec<InvalidRow>)> {
    let file = fs::File::open(path).map_err(|e| Error::file(path, e))?;
    read_pairs(file)
}

pub fn read_pairs(reader: impl Read) -> Result<(Vec<EvalPair>, Vec<InvalidRow>)> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::Fields).flexible(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    for required in ["question", "category", "reference_answer", "kind"] {
        if !headers.iter().any(|h| h == required) {
            return Err(Error::Parse {
                line: 1,
                message: format!("missing column {required}"),
            });
        }
    }
    let (mut pairs, mut invalid) = (Vec::new(), Vec::new());
    for (i, record) in rdr.records().enumerate() {
        let row = i + 1;
        let parsed = record
            .map_err(Error::from)
            .and_then(|r| r.deserialize::<RawPair>(Some(&headers)).map_err(Error::from))
            .and_then(|raw| validate(row, raw));
        match parsed {
            Ok(p) => pairs.push(p),
            Err(e) => invalid.push(InvalidRow {
                row,
                message: e.to_string(),
            }),
        }
    }
    Ok((pairs, invalid))
}

fn validate(row: usize, raw: RawPair) -> Result<EvalPair> {
    let category = QuestionCategory::from_str(&raw.category)?;
    let kind = match raw.kind.to_ascii_lowercase().as_str() {
        "text" => PairKind::Text,
        "numeric" => PairKind::Numeric,
        other => return Err(Error::validation(format!("unknown kind {other:?}"))),
    };
    if raw.question.is_empty() {
        return Err(Error::validation("empty question"));
    }
    if raw.reference_answer.is_empty() {
        return Err(Error::validation("empty reference_answer"));
    }
    if kind == PairKind::Numeric {
        parse_reference(&raw.reference_answer)?;
    }
    Ok(EvalPair {
        row,
        question: raw.question,
        category,
        reference_answer: raw.reference_answer,
        generated_answer: raw.generated_answer,
        kind,
    })
}

pub fn category_distribution(pairs: &[EvalPair]) -> BTreeMap<QuestionCategory, usize> {
    let mut counts = BTreeMap::new();
    for p in pairs {
        *counts.entry(p.category).or_insert(0) += 1;
    }
    counts
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalConfig {
    pub mode: ScoringMode,
    pub tolerance: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            mode: ScoringMode::Strict,
            tolerance: DEFAULT_TOLERANCE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairScore {
    pub row: usize,
    pub category: QuestionCategory,
    pub jaccard: f64,
    pub cosine: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimilarityReport {
    pub per_pair: Vec<PairScore>,
    pub jaccard_histogram: [usize; BUCKET_COUNT],
    pub cosine_histogram: [usize; BUCKET_COUNT],
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NumericScore {
    pub row: usize,
    pub question: String,
    pub generated_answer: String,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NumericAccuracyReport {
    pub mode: ScoringMode,
    pub total: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub per_question: Vec<NumericScore>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalOutcome {
    pub similarity: SimilarityReport,
    pub numeric: NumericAccuracyReport,
    pub categories: BTreeMap<QuestionCategory, usize>,
    pub invalid: Vec<InvalidRow>,
}

impl EvalOutcome {
    pub fn is_clean(&self) -> bool {
        self.invalid.is_empty()
    }
}

/// Produces an answer for a question whose generated answer is blank.
pub type Answerer<'a> = &'a dyn Fn(&str) -> Result<Answer>;

/// Scores every pair. Text pairs get both similarity metrics; numeric pairs a
/// verdict. Pairs that cannot be scored join the invalid list.
pub fn run_eval(
    pairs: &[EvalPair],
    embedder: &dyn Embedder,
    answerer: Option<Answerer<'_>>,
    config: &EvalConfig,
) -> EvalOutcome {
    let mut invalid = Vec::new();
    let mut per_pair = Vec::new();
    let mut per_question = Vec::new();
    let mut scored = Vec::new();
    for pair in pairs {
        let generated = match resolve_answer(pair, answerer) {
            Ok(g) => g,
            Err(e) => {
                invalid.push(InvalidRow {
                    row: pair.row,
                    message: e.to_string(),
                });
                continue;
            }
        };
        let outcome = match pair.kind {
            PairKind::Text => jaccard(&pair.reference_answer, &generated).and_then(|j| {
                let c = cosine_eval(&pair.reference_answer, &generated, embedder)?;
                per_pair.push(PairScore {
                    row: pair.row,
                    category: pair.category,
                    jaccard: j,
                    cosine: c,
                });
                Ok(())
            }),
            PairKind::Numeric => score_numeric(&pair.reference_answer, &generated, config.tolerance, config.mode)
                .map(|verdict| {
                    per_question.push(NumericScore {
                        row: pair.row,
                        question: pair.question.clone(),
                        generated_answer: generated.clone(),
                        verdict,
                    })
                }),
        };
        match outcome {
            Ok(()) => scored.push(pair.clone()),
            Err(e) => invalid.push(InvalidRow {
                row: pair.row,
                message: e.to_string(),
            }),
        }
    }

    let jaccards: Vec<f64> = per_pair.iter().map(|p| p.jaccard).collect();
    // negative cosine (possible with external embedders) counts in the lowest bucket
    let cosines: Vec<f64> = per_pair.iter().map(|p| p.cosine.max(0.0)).collect();
    let correct = per_question.iter().filter(|q| q.verdict.correct).count();
    let total = per_question.len();
    invalid.sort_by_key(|r| r.row);
    EvalOutcome {
        similarity: SimilarityReport {
            n: per_pair.len(),
            jaccard_histogram: bucket_scores(&jaccards).expect("jaccard lies in [0, 1]"),
            cosine_histogram: bucket_scores(&cosines).expect("clamped cosine lies in [0, 1]"),
            per_pair,
        },
        numeric: NumericAccuracyReport {
            mode: config.mode,
            total,
            correct,
            accuracy: if total == 0 { 0.0 } else { correct as f64 / total as f64 },
            per_question,
        },
        categories: category_distribution(pairs),
        invalid,
    }
}

fn resolve_answer(pair: &EvalPair, answerer: Option<Answerer<'_>>) -> Result<String> {
    if !pair.generated_answer.is_empty() {
        return Ok(pair.generated_answer.clone());
    }
    let answerer = answerer.ok_or_else(|| Error::validation("empty generated_answer and no answering pipeline"))?;
    Ok(answerer(&pair.question)?.text)
}

fn csv_text(rows: &[Vec<String>]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.write_record(r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv of UTF-8 fields is UTF-8"))
}

/// Writes the five report files into `out_dir` and returns their paths.
/// Output depends only on the outcome, so identical runs give identical bytes.
pub fn write_reports(outcome: &EvalOutcome, out_dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir).map_err(|e| Error::file(out_dir, e))?;
    let sim = &outcome.similarity;

    let mut rows = vec![vec!["row".into(), "category".into(), "jaccard".into(), "cosine".into()]];
    rows.extend(sim.per_pair.iter().map(|p| {
        vec![
            p.row.to_string(),
            p.category.name().into(),
            format!("{:.6}", p.jaccard),
            format!("{:.6}", p.cosine),
        ]
    }));
    let similarity = csv_text(&rows)?;

    let mut rows = vec![vec!["bucket".into(), "jaccard".into(), "cosine".into()]];
    for (i, label) in BUCKET_LABELS.iter().enumerate() {
        rows.push(vec![
            label.to_string(),
            sim.jaccard_histogram[i].to_string(),
            sim.cosine_histogram[i].to_string(),
        ]);
    }
    let histogram = csv_text(&rows)?;

    let mut rows = vec![vec!["category".into(), "count".into()]];
    rows.extend(outcome.categories.iter().map(|(c, n)| vec![c.name().into(), n.to_string()]));
    rows.push(vec!["Total".into(), outcome.categories.values().sum::<usize>().to_string()]);
    let categories = csv_text(&rows)?;

    let num = &outcome.numeric;
    let mut rows = vec![vec![
        "row".into(),
        "question".into(),
        "verdict".into(),
        "detail".into(),
        "generated_answer".into(),
    ]];
    rows.extend(num.per_question.iter().map(|q| {
        vec![
            q.row.to_string(),
            q.question.clone(),
            if q.verdict.correct { "correct" } else { "incorrect" }.into(),
            q.verdict.detail.clone(),
            q.generated_answer.clone(),
        ]
    }));
    let numeric = csv_text(&rows)?;

    let files = [
        (SIMILARITY_REPORT, similarity),
        (HISTOGRAM_REPORT, histogram),
        (CATEGORY_REPORT, categories),
        (NUMERIC_REPORT, numeric),
        (SUMMARY, summary(outcome)),
    ];
    let mut written = Vec::new();
    for (name, body) in files {
        let path = out_dir.join(name);
        fs::write(&path, body).map_err(|e| Error::file(&path, e))?;
        written.push(path);
    }
    Ok(written)
}

pub fn summary(outcome: &EvalOutcome) -> String {
    let sim = &outcome.similarity;
    let num = &outcome.numeric;
    let mut s = String::new();
    let _ = writeln!(s, "Text pairs scored: {}", sim.n);
    let _ = writeln!(s, "{:<10} {:>8} {:>8}", "bucket", "jaccard", "cosine");
    for (i, label) in BUCKET_LABELS.iter().enumerate() {
        let _ = writeln!(s, "{label:<10} {:>8} {:>8}", sim.jaccard_histogram[i], sim.cosine_histogram[i]);
    }
    let _ = writeln!(s);
    let total: usize = outcome.categories.values().sum();
    let _ = writeln!(s, "Questions by category (total {total}):");
    for (c, n) in &outcome.categories {
        let _ = writeln!(s, "  {:<24} {n}", c.name());
    }
    let _ = writeln!(s);
    let _ = writeln!(
        s,
        "Numeric accuracy ({} mode): {}/{} = {:.2}",
        num.mode, num.correct, num.total, num.accuracy
    );
    if !outcome.invalid.is_empty() {
        let _ = writeln!(s);
        let _ = writeln!(s, "Invalid rows ({}):", outcome.invalid.len());
        for r in &outcome.invalid {
            let _ = writeln!(s, "  row {}: {}", r.row, r.message);
        }
    }
    s
}
