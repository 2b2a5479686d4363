//! Corpus ingestion: sentence-level DA records, word-level OK/BAD tags,
//! the overlap join between them, and deterministic train/valid/test splits.
//!
//! The canonical on-disk corpus format is JSON lines, one instance per line,
//! with fields `id`, `pair`, `source`, `mt`, `reference`, `error_words`,
//! `da_score`. Raw inputs are tab-separated files read through a
//! user-supplied column mapping, since upstream releases do not share a
//! single layout.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::CorpusError;

/// One of the eight supported language pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PairCode {
    EnDe,
    EnMr,
    EnZh,
    EtEn,
    NeEn,
    RoEn,
    RuEn,
    SiEn,
}

impl PairCode {
    pub const ALL: [PairCode; 8] = [
        PairCode::EnDe,
        PairCode::EnMr,
        PairCode::EnZh,
        PairCode::EtEn,
        PairCode::NeEn,
        PairCode::RoEn,
        PairCode::RuEn,
        PairCode::SiEn,
    ];

    /// Canonical tag, e.g. `EN-DE`.
    pub fn code(&self) -> &'static str {
        match self {
            PairCode::EnDe => "EN-DE",
            PairCode::EnMr => "EN-MR",
            PairCode::EnZh => "EN-ZH",
            PairCode::EtEn => "ET-EN",
            PairCode::NeEn => "NE-EN",
            PairCode::RoEn => "RO-EN",
            PairCode::RuEn => "RU-EN",
            PairCode::SiEn => "SI-EN",
        }
    }

    pub fn source_lang(&self) -> &'static str {
        match self {
            PairCode::EnDe | PairCode::EnMr | PairCode::EnZh => "English",
            PairCode::EtEn => "Estonian",
            PairCode::NeEn => "Nepali",
            PairCode::RoEn => "Romanian",
            PairCode::RuEn => "Russian",
            PairCode::SiEn => "Sinhala",
        }
    }

    pub fn target_lang(&self) -> &'static str {
        match self {
            PairCode::EnDe => "German",
            PairCode::EnMr => "Marathi",
            PairCode::EnZh => "Chinese",
            PairCode::EtEn | PairCode::NeEn | PairCode::RoEn | PairCode::RuEn | PairCode::SiEn => {
                "English"
            }
        }
    }
}

impl fmt::Display for PairCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for PairCode {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_uppercase().replace('_', "-");
        PairCode::ALL
            .iter()
            .copied()
            .find(|p| p.code() == norm)
            .ok_or_else(|| CorpusError::UnknownPair(s.to_string()))
    }
}

impl Serialize for PairCode {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.code())
    }
}

impl<'de> Deserialize<'de> for PairCode {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// One scored translation instance: the unit everything downstream consumes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QEInstance {
    pub id: String,
    pub pair: PairCode,
    pub source: String,
    #[serde(rename = "mt")]
    pub mt_output: String,
    pub reference: String,
    pub error_words: Vec<String>,
    pub da_score: f64,
}

impl QEInstance {
    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.source.is_empty() || self.mt_output.is_empty() || self.reference.is_empty() {
            return Err(CorpusError::EmptyField(self.id.clone()));
        }
        if !(0.0..=100.0).contains(&self.da_score) {
            return Err(CorpusError::ScoreOutOfRange {
                id: self.id.clone(),
                score: self.da_score,
            });
        }
        let tokens: HashSet<&str> = self.mt_output.split_whitespace().collect();
        for w in &self.error_words {
            if !tokens.contains(w.as_str()) {
                return Err(CorpusError::ErrorWordNotInOutput {
                    id: self.id.clone(),
                    word: w.clone(),
                });
            }
        }
        Ok(())
    }
}

/// Word-level record: MT tokens with per-token OK/BAD quality tags.
#[derive(Debug, Clone, PartialEq)]
pub struct WordTaggedRecord {
    pub pair: PairCode,
    pub source: String,
    pub mt_output: String,
    pub tokens: Vec<String>,
    pub tags: Vec<WordTag>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WordTag {
    Ok,
    Bad,
}

impl FromStr for WordTag {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "OK" => Ok(WordTag::Ok),
            "BAD" => Ok(WordTag::Bad),
            other => Err(CorpusError::UnknownTag(other.to_string())),
        }
    }
}

/// Split proportions plus the shuffle seed. Defaults to 80/10/10.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_frac: f64,
    pub valid_frac: f64,
    pub test_frac: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(seed: u64) -> Self {
        SplitSpec {
            train_frac: 0.8,
            valid_frac: 0.1,
            test_frac: 0.1,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        let sum = self.train_frac + self.valid_frac + self.test_frac;
        if (sum - 1.0).abs() > 1e-9 {
            return Err(CorpusError::BadSplitFractions(sum));
        }
        Ok(())
    }
}

/// Column selector for raw tab-separated inputs: a 0-based index or, when
/// the file has a header row, a column name.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ColumnRef {
    Index(usize),
    Name(String),
}

impl FromStr for ColumnRef {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Ok(i) = s.parse::<usize>() {
            Ok(ColumnRef::Index(i))
        } else {
            Ok(ColumnRef::Name(s.to_string()))
        }
    }
}

/// Names the columns holding source, MT output, reference and gold score.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ColumnMap {
    pub source: ColumnRef,
    pub mt: ColumnRef,
    pub reference: ColumnRef,
    pub score: ColumnRef,
    pub has_header: bool,
}

/// A rejected input row, with enough context to find it in the file.
#[derive(Debug, Clone, PartialEq)]
pub struct RowError {
    /// 1-based line number in the input file (header included).
    pub line: usize,
    pub reason: String,
}

impl fmt::Display for RowError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.reason)
    }
}

/// A sentence-level row prior to the overlap join.
#[derive(Debug, Clone, PartialEq)]
pub struct SentenceRecord {
    pub source: String,
    pub mt_output: String,
    pub reference: String,
    pub da_score: f64,
}

/// Parse result carrying both good records and per-row rejections.
#[derive(Debug)]
pub struct Parsed<T> {
    pub records: Vec<T>,
    pub rejected: Vec<RowError>,
}

fn resolve_column(
    cref: &ColumnRef,
    header: Option<&[&str]>,
    what: &str,
) -> Result<usize, CorpusError> {
    match cref {
        ColumnRef::Index(i) => Ok(*i),
        ColumnRef::Name(name) => {
            let header = header.ok_or_else(|| CorpusError::MissingColumn {
                column: name.clone(),
                what: format!("{what} (named column requires a header row)"),
            })?;
            header
                .iter()
                .position(|h| h.trim() == name)
                .ok_or_else(|| CorpusError::MissingColumn {
                    column: name.clone(),
                    what: what.to_string(),
                })
        }
    }
}

/// Gold score cell: a single number, or several annotator scores separated
/// by `|`, `,` or whitespace, in which case the mean is taken.
fn parse_score_cell(cell: &str) -> Result<f64, String> {
    let parts: Vec<&str> = cell
        .split(|c: char| c == '|' || c == ',' || c.is_whitespace())
        .filter(|p| !p.is_empty())
        .collect();
    if parts.is_empty() {
        return Err("empty score cell".to_string());
    }
    let mut sum = 0.0;
    for p in &parts {
        let v: f64 = p
            .parse()
            .map_err(|_| format!("unparseable score {p:?}"))?;
        sum += v;
    }
    Ok(sum / parts.len() as f64)
}

/// Read sentence-level DA rows from a tab-separated file.
///
/// Rows with unparseable or out-of-range scores are rejected individually
/// (with their line numbers) rather than failing the whole file; a missing
/// file or an unresolvable column mapping is fatal.
pub fn parse_sentence_level(
    path: &Path,
    _pair: PairCode,
    mapping: &ColumnMap,
) -> Result<Parsed<SentenceRecord>, CorpusError> {
    let raw = fs::read_to_string(path).map_err(|e| CorpusError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let mut lines = raw.lines().enumerate();

    let header_fields: Option<Vec<&str>> = if mapping.has_header {
        match lines.next() {
            Some((_, line)) => Some(line.trim_end_matches('\r').split('\t').collect()),
            None => None,
        }
    } else {
        None
    };
    let header = header_fields.as_deref();

    let src_i = resolve_column(&mapping.source, header, "source")?;
    let mt_i = resolve_column(&mapping.mt, header, "mt")?;
    let ref_i = resolve_column(&mapping.reference, header, "reference")?;
    let score_i = resolve_column(&mapping.score, header, "score")?;

    let mut records = Vec::new();
    let mut rejected = Vec::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.trim_end_matches('\r').split('\t').collect();
        let max_needed = src_i.max(mt_i).max(ref_i).max(score_i);
        if fields.len() <= max_needed {
            rejected.push(RowError {
                line: lineno,
                reason: format!(
                    "expected at least {} columns, found {}",
                    max_needed + 1,
                    fields.len()
                ),
            });
            continue;
        }
        let da_score = match parse_score_cell(fields[score_i]) {
            Ok(v) => v,
            Err(reason) => {
                rejected.push(RowError {
                    line: lineno,
                    reason,
                });
                continue;
            }
        };
        if !(0.0..=100.0).contains(&da_score) {
            rejected.push(RowError {
                line: lineno,
                reason: format!("score {da_score} outside [0,100]"),
            });
            continue;
        }
        records.push(SentenceRecord {
            source: fields[src_i].to_string(),
            mt_output: fields[mt_i].to_string(),
            reference: fields[ref_i].to_string(),
            da_score,
        });
    }

    Ok(Parsed { records, rejected })
}

/// Read word-level records from a tab-separated file with columns
/// `source`, `mt`, `tags`. MT tokens come from whitespace-splitting the
/// pre-tokenized MT column; tags must align one-to-one with the tokens.
pub fn parse_word_level(path: &Path, pair: PairCode) -> Result<Parsed<WordTaggedRecord>, CorpusError> {
    let raw = fs::read_to_string(path).map_err(|e| CorpusError::Io {
        path: path.display().to_string(),
        source: e,
    })?;

    let mut records = Vec::new();
    let mut rejected = Vec::new();
    for (idx, line) in raw.lines().enumerate() {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.trim_end_matches('\r').split('\t').collect();
        if fields.len() < 3 {
            rejected.push(RowError {
                line: lineno,
                reason: format!("expected 3 columns (source, mt, tags), found {}", fields.len()),
            });
            continue;
        }
        let tokens: Vec<String> = fields[1].split_whitespace().map(str::to_string).collect();
        let mut tags = Vec::new();
        let mut bad_label = None;
        for t in fields[2].split_whitespace() {
            match t.parse::<WordTag>() {
                Ok(tag) => tags.push(tag),
                Err(_) => {
                    bad_label = Some(t.to_string());
                    break;
                }
            }
        }
        if let Some(label) = bad_label {
            rejected.push(RowError {
                line: lineno,
                reason: format!("unknown tag label {label:?}"),
            });
            continue;
        }
        if tokens.len() != tags.len() {
            rejected.push(RowError {
                line: lineno,
                reason: format!(
                    "token/tag length mismatch: {} tokens vs {} tags",
                    tokens.len(),
                    tags.len()
                ),
            });
            continue;
        }
        records.push(WordTaggedRecord {
            pair,
            source: fields[0].to_string(),
            mt_output: fields[1].to_string(),
            tokens,
            tags,
        });
    }

    Ok(Parsed { records, rejected })
}

/// Tokens tagged BAD, in order, duplicates preserved.
pub fn extract_error_words(record: &WordTaggedRecord) -> Vec<String> {
    record
        .tokens
        .iter()
        .zip(record.tags.iter())
        .filter(|(_, tag)| **tag == WordTag::Bad)
        .map(|(tok, _)| tok.clone())
        .collect()
}

/// Counts reported by the overlap join.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct JoinReport {
    pub matched: usize,
    pub sentence_only: usize,
    pub word_only: usize,
    pub duplicate_sentence_keys: usize,
    pub duplicate_word_keys: usize,
}

fn join_key(source: &str, mt: &str) -> (String, String) {
    // Exact string match after trimming trailing whitespace only.
    (
        source.trim_end().to_string(),
        mt.trim_end().to_string(),
    )
}

/// Join sentence-level and word-level records on the exact (source, MT)
/// pair. Only keys present on both sides survive; error words come from the
/// word-level side. Duplicate keys within one input keep the first
/// occurrence.
pub fn join_overlap(
    pair: PairCode,
    sentence: &[SentenceRecord],
    word: &[WordTaggedRecord],
) -> (Vec<QEInstance>, JoinReport) {
    let mut report = JoinReport::default();

    let mut word_by_key: std::collections::HashMap<(String, String), &WordTaggedRecord> =
        std::collections::HashMap::new();
    for rec in word {
        let key = join_key(&rec.source, &rec.mt_output);
        if word_by_key.contains_key(&key) {
            report.duplicate_word_keys += 1;
        } else {
            word_by_key.insert(key, rec);
        }
    }

    let mut seen_sentence: HashSet<(String, String)> = HashSet::new();
    let mut matched_keys: HashSet<(String, String)> = HashSet::new();
    let mut instances = Vec::new();
    for rec in sentence {
        let key = join_key(&rec.source, &rec.mt_output);
        if !seen_sentence.insert(key.clone()) {
            report.duplicate_sentence_keys += 1;
            continue;
        }
        match word_by_key.get(&key) {
            Some(word_rec) => {
                matched_keys.insert(key);
                let id = format!("{}-{:05}", pair.code(), instances.len());
                instances.push(QEInstance {
                    id,
                    pair,
                    source: rec.source.clone(),
                    mt_output: rec.mt_output.clone(),
                    reference: rec.reference.clone(),
                    error_words: extract_error_words(word_rec),
                    da_score: rec.da_score,
                });
            }
            None => report.sentence_only += 1,
        }
    }
    report.matched = instances.len();
    report.word_only = word_by_key
        .keys()
        .filter(|k| !matched_keys.contains(*k))
        .count();

    (instances, report)
}

/// The three split buckets.
#[derive(Debug, Clone)]
pub struct SplitResult {
    pub train: Vec<QEInstance>,
    pub valid: Vec<QEInstance>,
    pub test: Vec<QEInstance>,
}

/// Deterministic shuffle-and-cut split. Bucket sizes are
/// `floor(n * frac)` for valid and test, with the remainder going to train.
pub fn split_dataset(instances: &[QEInstance], spec: &SplitSpec) -> Result<SplitResult, CorpusError> {
    spec.validate()?;
    if instances.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    let n = instances.len();
    let n_valid = (n as f64 * spec.valid_frac).floor() as usize;
    let n_test = (n as f64 * spec.test_frac).floor() as usize;
    let n_train = n - n_valid - n_test;

    let mut order: Vec<usize> = (0..n).collect();
    // Fisher-Yates driven directly by the stream so the permutation does not
    // depend on distribution internals of any rand release.
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    for i in (1..n).rev() {
        let j = (rng.next_u64() % (i as u64 + 1)) as usize;
        order.swap(i, j);
    }

    let pick = |range: std::ops::Range<usize>| -> Vec<QEInstance> {
        order[range].iter().map(|&i| instances[i].clone()).collect()
    };
    Ok(SplitResult {
        train: pick(0..n_train),
        valid: pick(n_train..n_train + n_valid),
        test: pick(n_train + n_valid..n),
    })
}

/// Write the canonical corpus file: UTF-8 JSON lines, one instance per line.
pub fn write_corpus(path: &Path, instances: &[QEInstance]) -> Result<(), CorpusError> {
    let file = fs::File::create(path).map_err(|e| CorpusError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let mut w = BufWriter::new(file);
    for inst in instances {
        let line = serde_json::to_string(inst).map_err(CorpusError::Serde)?;
        writeln!(w, "{line}").map_err(|e| CorpusError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
    }
    w.flush().map_err(|e| CorpusError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    Ok(())
}

/// Read a canonical corpus file, validating every instance.
pub fn read_corpus(path: &Path) -> Result<Vec<QEInstance>, CorpusError> {
    let raw = fs::read_to_string(path).map_err(|e| CorpusError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let mut out = Vec::new();
    for (idx, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let inst: QEInstance = serde_json::from_str(line).map_err(|e| CorpusError::BadRecord {
            line: idx + 1,
            reason: e.to_string(),
        })?;
        inst.validate()?;
        out.push(inst);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write as _;

    fn tmp_file(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    fn inst(id: &str, score: f64) -> QEInstance {
        QEInstance {
            id: id.to_string(),
            pair: PairCode::EnDe,
            source: format!("source {id}"),
            mt_output: format!("mt {id}"),
            reference: format!("ref {id}"),
            error_words: vec![],
            da_score: score,
        }
    }

    #[test]
    fn sentence_level_reads_rows_in_order() {
        let f = tmp_file("s\tm\tr\tscore\na one\tb one\tc one\t10\na two\tb two\tc two\t50\na three\tb three\tc three\t90\n");
        let mapping = ColumnMap {
            source: ColumnRef::Name("s".into()),
            mt: ColumnRef::Name("m".into()),
            reference: ColumnRef::Name("r".into()),
            score: ColumnRef::Name("score".into()),
            has_header: true,
        };
        let parsed = parse_sentence_level(f.path(), PairCode::EnDe, &mapping).unwrap();
        assert_eq!(parsed.records.len(), 3);
        assert!(parsed.rejected.is_empty());
        let scores: Vec<f64> = parsed.records.iter().map(|r| r.da_score).collect();
        assert_eq!(scores, vec![10.0, 50.0, 90.0]);
    }

    #[test]
    fn sentence_level_rejects_bad_score_with_line_number() {
        let f = tmp_file("a\tb\tc\tabc\nd\te\tf\t55\n");
        let mapping = ColumnMap {
            source: ColumnRef::Index(0),
            mt: ColumnRef::Index(1),
            reference: ColumnRef::Index(2),
            score: ColumnRef::Index(3),
            has_header: false,
        };
        let parsed = parse_sentence_level(f.path(), PairCode::EnDe, &mapping).unwrap();
        assert_eq!(parsed.records.len(), 1);
        assert_eq!(parsed.rejected.len(), 1);
        assert_eq!(parsed.rejected[0].line, 1);
        assert!(parsed.rejected[0].reason.contains("abc"));
    }

    #[test]
    fn sentence_level_rejects_out_of_range_score() {
        let f = tmp_file("a\tb\tc\t130\n");
        let mapping = ColumnMap {
            source: ColumnRef::Index(0),
            mt: ColumnRef::Index(1),
            reference: ColumnRef::Index(2),
            score: ColumnRef::Index(3),
            has_header: false,
        };
        let parsed = parse_sentence_level(f.path(), PairCode::EnDe, &mapping).unwrap();
        assert!(parsed.records.is_empty());
        assert_eq!(parsed.rejected.len(), 1);
    }

    #[test]
    fn sentence_level_missing_named_column_is_fatal() {
        let f = tmp_file("s\tm\tr\tscore\na\tb\tc\t10\n");
        let mapping = ColumnMap {
            source: ColumnRef::Name("nonexistent".into()),
            mt: ColumnRef::Index(1),
            reference: ColumnRef::Index(2),
            score: ColumnRef::Index(3),
            has_header: true,
        };
        let err = parse_sentence_level(f.path(), PairCode::EnDe, &mapping).unwrap_err();
        assert!(matches!(err, CorpusError::MissingColumn { .. }));
    }

    #[test]
    fn sentence_level_missing_file_is_fatal() {
        let mapping = ColumnMap {
            source: ColumnRef::Index(0),
            mt: ColumnRef::Index(1),
            reference: ColumnRef::Index(2),
            score: ColumnRef::Index(3),
            has_header: false,
        };
        let err =
            parse_sentence_level(Path::new("/nonexistent/x.tsv"), PairCode::EnDe, &mapping)
                .unwrap_err();
        assert!(matches!(err, CorpusError::Io { .. }));
    }

    #[test]
    fn score_cell_mean_of_annotators() {
        assert_eq!(parse_score_cell("70").unwrap(), 70.0);
        assert_eq!(parse_score_cell("60|70|80").unwrap(), 70.0);
        assert_eq!(parse_score_cell("60, 80").unwrap(), 70.0);
    }

    #[test]
    fn word_level_parses_aligned_records() {
        let f = tmp_file("src a\ta b c\tOK BAD OK\n");
        let parsed = parse_word_level(f.path(), PairCode::EnDe).unwrap();
        assert_eq!(parsed.records.len(), 1);
        let rec = &parsed.records[0];
        assert_eq!(rec.tokens, vec!["a", "b", "c"]);
        assert_eq!(rec.tags, vec![WordTag::Ok, WordTag::Bad, WordTag::Ok]);
    }

    #[test]
    fn word_level_rejects_unknown_label() {
        let f = tmp_file("src\ta b\tOK MAYBE\n");
        let parsed = parse_word_level(f.path(), PairCode::EnDe).unwrap();
        assert!(parsed.records.is_empty());
        assert!(parsed.rejected[0].reason.contains("MAYBE"));
    }

    #[test]
    fn word_level_rejects_misaligned_record_keeps_rest() {
        let f = tmp_file("s1\ta b\tOK BAD\ns2\ta b c\tOK BAD\n");
        let parsed = parse_word_level(f.path(), PairCode::EnDe).unwrap();
        assert_eq!(parsed.records.len(), 1);
        assert_eq!(parsed.rejected.len(), 1);
        assert_eq!(parsed.rejected[0].line, 2);
    }

    #[test]
    fn error_words_are_bad_tokens_in_order() {
        let rec = WordTaggedRecord {
            pair: PairCode::EnDe,
            source: "s".into(),
            mt_output: "the cat sat".into(),
            tokens: vec!["the".into(), "cat".into(), "sat".into()],
            tags: vec![WordTag::Ok, WordTag::Bad, WordTag::Bad],
        };
        assert_eq!(extract_error_words(&rec), vec!["cat", "sat"]);
    }

    #[test]
    fn error_words_empty_when_all_ok() {
        let rec = WordTaggedRecord {
            pair: PairCode::EnDe,
            source: "s".into(),
            mt_output: "a b".into(),
            tokens: vec!["a".into(), "b".into()],
            tags: vec![WordTag::Ok, WordTag::Ok],
        };
        assert!(extract_error_words(&rec).is_empty());
    }

    #[test]
    fn error_words_keep_duplicates() {
        let rec = WordTaggedRecord {
            pair: PairCode::EnDe,
            source: "s".into(),
            mt_output: "x x".into(),
            tokens: vec!["x".into(), "x".into()],
            tags: vec![WordTag::Bad, WordTag::Bad],
        };
        assert_eq!(extract_error_words(&rec), vec!["x", "x"]);
    }

    fn sent(s: &str, m: &str) -> SentenceRecord {
        SentenceRecord {
            source: s.into(),
            mt_output: m.into(),
            reference: "ref".into(),
            da_score: 50.0,
        }
    }

    fn word(s: &str, m: &str) -> WordTaggedRecord {
        WordTaggedRecord {
            pair: PairCode::EnDe,
            source: s.into(),
            mt_output: m.into(),
            tokens: m.split_whitespace().map(str::to_string).collect(),
            tags: m.split_whitespace().map(|_| WordTag::Ok).collect(),
        }
    }

    #[test]
    fn join_keeps_only_overlap() {
        let (instances, report) = join_overlap(
            PairCode::EnDe,
            &[sent("s1", "m1"), sent("s2", "m2")],
            &[word("s1", "m1")],
        );
        assert_eq!(instances.len(), 1);
        assert_eq!(instances[0].source, "s1");
        assert_eq!(report.matched, 1);
        assert_eq!(report.sentence_only, 1);
        assert_eq!(report.word_only, 0);
    }

    #[test]
    fn join_zero_overlap_reports_both_sides() {
        let (instances, report) = join_overlap(
            PairCode::EnDe,
            &[sent("s1", "m1")],
            &[word("s2", "m2")],
        );
        assert!(instances.is_empty());
        assert_eq!(report.sentence_only, 1);
        assert_eq!(report.word_only, 1);
    }

    #[test]
    fn join_duplicate_word_key_keeps_first() {
        let mut w1 = word("s1", "m1");
        w1.tags = vec![WordTag::Bad];
        let w2 = word("s1", "m1");
        let (instances, report) = join_overlap(PairCode::EnDe, &[sent("s1", "m1")], &[w1, w2]);
        assert_eq!(instances.len(), 1);
        assert_eq!(instances[0].error_words, vec!["m1"]);
        assert_eq!(report.duplicate_word_keys, 1);
    }

    #[test]
    fn join_key_trims_trailing_whitespace_only() {
        let (instances, _) = join_overlap(
            PairCode::EnDe,
            &[sent("s1  ", "m1")],
            &[word("s1", "m1 ")],
        );
        assert_eq!(instances.len(), 1);
        // Leading whitespace is significant.
        let (instances, _) = join_overlap(PairCode::EnDe, &[sent("  s1", "m1")], &[word("s1", "m1")]);
        assert!(instances.is_empty());
    }

    #[test]
    fn split_sizes_floor_with_remainder_to_train() {
        for (n, train, valid, test) in [
            (10usize, 8usize, 1usize, 1usize),
            (343, 275, 34, 34),
            (891, 713, 89, 89),
            (2598, 2080, 259, 259),
        ] {
            let data: Vec<QEInstance> = (0..n).map(|i| inst(&format!("i{i}"), 50.0)).collect();
            let result = split_dataset(&data, &SplitSpec::new(7)).unwrap();
            assert_eq!(result.train.len(), train, "n={n}");
            assert_eq!(result.valid.len(), valid, "n={n}");
            assert_eq!(result.test.len(), test, "n={n}");
        }
    }

    #[test]
    fn split_is_deterministic_and_disjoint() {
        let data: Vec<QEInstance> = (0..57).map(|i| inst(&format!("i{i}"), 50.0)).collect();
        let a = split_dataset(&data, &SplitSpec::new(13)).unwrap();
        let b = split_dataset(&data, &SplitSpec::new(13)).unwrap();
        let ids = |v: &[QEInstance]| v.iter().map(|i| i.id.clone()).collect::<Vec<_>>();
        assert_eq!(ids(&a.train), ids(&b.train));
        assert_eq!(ids(&a.valid), ids(&b.valid));
        assert_eq!(ids(&a.test), ids(&b.test));

        let mut all: Vec<String> = ids(&a.train);
        all.extend(ids(&a.valid));
        all.extend(ids(&a.test));
        let unique: HashSet<&String> = all.iter().collect();
        assert_eq!(unique.len(), data.len());
    }

    #[test]
    fn split_varies_with_seed() {
        let data: Vec<QEInstance> = (0..100).map(|i| inst(&format!("i{i}"), 50.0)).collect();
        let a = split_dataset(&data, &SplitSpec::new(1)).unwrap();
        let b = split_dataset(&data, &SplitSpec::new(2)).unwrap();
        let ids = |v: &[QEInstance]| v.iter().map(|i| i.id.clone()).collect::<Vec<_>>();
        assert_ne!(ids(&a.test), ids(&b.test));
    }

    #[test]
    fn corpus_roundtrip_is_byte_identical() {
        let data = vec![inst("a", 12.5), inst("b", 99.0)];
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("c1.jsonl");
        let p2 = dir.path().join("c2.jsonl");
        write_corpus(&p1, &data).unwrap();
        let loaded = read_corpus(&p1).unwrap();
        write_corpus(&p2, &loaded).unwrap();
        assert_eq!(fs::read(&p1).unwrap(), fs::read(&p2).unwrap());
    }

    #[test]
    fn read_corpus_validates_instances() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.jsonl");
        fs::write(
            &p,
            r#"{"id":"x","pair":"EN-DE","source":"s","mt":"m","reference":"r","error_words":[],"da_score":130.0}"#,
        )
        .unwrap();
        assert!(matches!(
            read_corpus(&p),
            Err(CorpusError::ScoreOutOfRange { .. })
        ));
    }

    #[test]
    fn pair_code_roundtrip() {
        for p in PairCode::ALL {
            assert_eq!(p.code().parse::<PairCode>().unwrap(), p);
        }
        assert!("XX-YY".parse::<PairCode>().is_err());
    }
}
