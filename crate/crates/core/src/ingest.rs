//! Corpus loading, text preprocessing and the chronological split.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::domain::{target_from_return, DisclosureRecord, Partition, SplitAssignment, SplitEntry};
use crate::error::{Error, Result};

/// One line of a corpus file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusLine {
    pub id: String,
    pub timestamp: DateTime<Utc>,
    pub ticker: String,
    pub text: String,
    pub next_day_return: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub max_tokens: usize,
    #[serde(default = "default_chars_per_token")]
    pub chars_per_token: f64,
}

fn default_chars_per_token() -> f64 {
    4.0
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        // 8k-token context, the smallest window in the reference model pool.
        Self {
            max_tokens: 8192,
            chars_per_token: default_chars_per_token(),
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_tokens == 0 {
            return Err(Error::Config("max_tokens must be at least 1".into()));
        }
        if !(self.chars_per_token.is_finite() && self.chars_per_token > 0.0) {
            return Err(Error::Config("chars_per_token must be positive".into()));
        }
        Ok(())
    }

    pub fn char_budget(&self) -> usize {
        (self.max_tokens as f64 * self.chars_per_token).floor() as usize
    }
}

pub fn load_corpus(path: &Path) -> Result<Vec<DisclosureRecord>> {
    let file = File::open(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingArtifact(format!("corpus file missing: {}", path.display()))
        } else {
            Error::io(path, e)
        }
    })?;
    parse_corpus(BufReader::new(file), path)
}

/// Parses line-delimited corpus JSON. Blank lines are skipped. `clean_text`
/// is left empty until [`preprocess`] runs.
pub fn parse_corpus(reader: impl BufRead, path: &Path) -> Result<Vec<DisclosureRecord>> {
    let mut seen = HashSet::new();
    let mut records = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |message: String| Error::Malformed {
            path: path.to_path_buf(),
            line: line_no,
            message,
        };
        let value: serde_json::Value =
            serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?;
        // serde_json cannot represent NaN, so accept it spelled as a string
        // only to reject it with the right error.
        if let Some(serde_json::Value::String(s)) = value.get("next_day_return") {
            if let Ok(r) = s.parse::<f64>() {
                target_from_return(r)
                    .map_err(|e| Error::RejectedInput(format!("line {line_no}: {e}")))?;
            }
        }
        let parsed: CorpusLine =
            serde_json::from_value(value).map_err(|e| malformed(e.to_string()))?;
        let binary_target = target_from_return(parsed.next_day_return)
            .map_err(|e| Error::RejectedInput(format!("line {line_no}: {e}")))?;
        if !seen.insert(parsed.id.clone()) {
            return Err(Error::DuplicateId(parsed.id));
        }
        records.push(DisclosureRecord {
            id: parsed.id,
            timestamp: parsed.timestamp,
            ticker: parsed.ticker,
            raw_text: parsed.text,
            clean_text: String::new(),
            next_day_return: parsed.next_day_return,
            binary_target,
        });
    }
    Ok(records)
}

pub fn write_corpus(path: &Path, lines: &[CorpusLine]) -> Result<()> {
    write_jsonl(path, lines)
}

/// Keys whose metadata values are ticker symbols.
fn is_ticker_key(key: &str) -> bool {
    let key = key.trim().to_ascii_lowercase();
    key.contains("ticker") || key.contains("symbol")
}

/// Splits `KEY: VALUE` lines; the key starts with a letter and holds only
/// letters, digits, spaces, `_` or `-`.
fn split_metadata(line: &str) -> Option<(&str, &str)> {
    let (key, value) = line.split_once(':')?;
    let key_ok = key.chars().next().is_some_and(|c| c.is_ascii_alphabetic())
        && key
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, ' ' | '_' | '-'));
    (key_ok && !value.trim().is_empty()).then_some((key, value))
}

/// Normalizes a disclosure for prompting.
///
/// Consecutive identical lines collapse to one, ticker values in a leading
/// `KEY: VALUE` block (terminated by a blank line) are lowercased, all
/// whitespace runs become single spaces, and the result is cut to the
/// character budget at the last whitespace boundary. Everything else,
/// numbers and dates included, is kept verbatim.
pub fn preprocess(raw_text: &str, cfg: &PreprocessConfig) -> String {
    let mut lines: Vec<String> = Vec::new();
    for line in raw_text.split('\n') {
        let line = line.trim_end_matches('\r');
        if lines.last().is_some_and(|prev| prev.trim() == line.trim()) {
            continue;
        }
        lines.push(line.to_string());
    }

    if let Some(blank) = lines.iter().position(|l| l.trim().is_empty()) {
        for line in &mut lines[..blank] {
            if let Some((key, value)) = split_metadata(line) {
                if is_ticker_key(key) {
                    *line = format!("{key}:{}", value.to_lowercase());
                }
            }
        }
    }

    let mut out = String::new();
    for word in lines.iter().flat_map(|l| l.split_whitespace()) {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
    }
    truncate_at_whitespace(out, cfg.char_budget())
}

fn truncate_at_whitespace(text: String, limit: usize) -> String {
    let Some((cut, _)) = text.char_indices().nth(limit) else {
        return text;
    };
    // `cut` is the byte offset of the first character past the budget.
    if text[cut..].starts_with(char::is_whitespace) {
        return text[..cut].trim_end().to_string();
    }
    match text[..cut].rfind(char::is_whitespace) {
        Some(ws) => text[..ws].trim_end().to_string(),
        None => text[..cut].to_string(),
    }
}

pub fn preprocess_all(records: &mut [DisclosureRecord], cfg: &PreprocessConfig) {
    for record in records {
        record.clean_text = preprocess(&record.raw_text, cfg);
    }
}

/// Chronological partition by `(timestamp, id)`. The train and train+dev
/// boundaries are floored; the remainder goes to test.
pub fn chronological_split(
    records: &[DisclosureRecord],
    fractions: (f64, f64, f64),
) -> Result<SplitAssignment> {
    let n = records.len();
    if n < 5 {
        return Err(Error::DegenerateSplit(format!(
            "need at least 5 records, got {n}"
        )));
    }
    let (train, dev, test) = fractions;
    if [train, dev, test].iter().any(|f| !(f.is_finite() && *f > 0.0))
        || ((train + dev + test) - 1.0).abs() > 1e-9
    {
        return Err(Error::DegenerateSplit(format!(
            "fractions {fractions:?} must be positive and sum to 1"
        )));
    }
    let mut order: Vec<&DisclosureRecord> = records.iter().collect();
    order.sort_by(|a, b| a.timestamp.cmp(&b.timestamp).then_with(|| a.id.cmp(&b.id)));

    // Floor the cumulative boundaries so every partition is within one
    // record of its share. The epsilon keeps 0.6 * 10 from landing at 5.999...
    let n_train = (train * n as f64 + 1e-9).floor() as usize;
    let n_dev = ((train + dev) * n as f64 + 1e-9).floor() as usize - n_train;
    let entries = order
        .into_iter()
        .enumerate()
        .map(|(i, r)| SplitEntry {
            id: r.id.clone(),
            partition: if i < n_train {
                Partition::Train
            } else if i < n_train + n_dev {
                Partition::Dev
            } else {
                Partition::Test
            },
        })
        .collect();
    Ok(SplitAssignment { entries })
}

pub const DEFAULT_FRACTIONS: (f64, f64, f64) = (0.6, 0.2, 0.2);

pub fn write_split(path: &Path, split: &SplitAssignment) -> Result<()> {
    write_jsonl(path, &split.entries)
}

pub fn read_split(path: &Path) -> Result<SplitAssignment> {
    let entries: Vec<SplitEntry> = read_jsonl(path)?;
    let mut seen = HashSet::new();
    for entry in &entries {
        if !seen.insert(entry.id.as_str()) {
            return Err(Error::DuplicateId(entry.id.clone()));
        }
    }
    Ok(SplitAssignment { entries })
}

pub fn write_records(path: &Path, records: &[DisclosureRecord]) -> Result<()> {
    write_jsonl(path, records)
}

pub fn read_records(path: &Path) -> Result<Vec<DisclosureRecord>> {
    read_jsonl(path)
}

pub(crate) fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, item).map_err(|e| Error::io(path, e.into()))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub(crate) fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingArtifact(format!("{} missing", path.display()))
        } else {
            Error::io(path, e)
        }
    })?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Malformed {
            path: path.to_path_buf(),
            line: idx + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}
