//! Corpus loading, tokenization, synthetic corpora and descriptive statistics.

mod stats;
mod synth;

pub use stats::{corpus_stats, k_anonymity_baseline, CorpusStats, KAnonymity, DEFAULT_THRESHOLDS};
pub use synth::{synth_zipf_corpus, SynthParams};

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{DpsuError, Result};
use crate::model::{Database, ItemSet, UserRecord};

static URL: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\b(?:[a-z][a-z0-9+.\-]*://|www\.)\S*").unwrap());

/// Set of contiguous `n`-grams of `text`, space-joined.
///
/// URLs are removed, every non-alphanumeric character becomes a space, and
/// the rest is lowercased and split on whitespace. `n = 0` is treated as 1.
pub fn tokenize(text: &str, n: usize) -> ItemSet {
    let n = n.max(1);
    let stripped = URL.replace_all(text, " ");
    let cleaned: String = stripped
        .chars()
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .collect();
    let lowered = cleaned.to_lowercase();
    let words: Vec<&str> = lowered.split_whitespace().collect();
    if words.len() < n {
        return ItemSet::new();
    }
    words.windows(n).map(|g| g.join(" ")).collect()
}

/// One input record: raw text or a pre-tokenized item list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusRecord {
    pub user_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub items: Option<Vec<String>>,
}

impl CorpusRecord {
    fn into_items(self, n: usize) -> std::result::Result<(String, ItemSet), String> {
        match (self.text, self.items) {
            (Some(text), None) => Ok((self.user_id, tokenize(&text, n))),
            (None, Some(items)) => Ok((
                self.user_id,
                items.into_iter().filter(|s| !s.is_empty()).collect(),
            )),
            (Some(_), Some(_)) => Err("record has both `text` and `items`".into()),
            (None, None) => Err("record has neither `text` nor `items`".into()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusFormat {
    /// One JSON object per line: `{"user_id", "text"}` or `{"user_id", "items"}`.
    Jsonl,
    /// `user_id<TAB>item1 item2 ...`, items pre-tokenized and space-free.
    Tsv,
}

impl CorpusFormat {
    /// Guesses from the extension: `.tsv` is TSV, anything else JSONL.
    pub fn from_path(path: &Path) -> CorpusFormat {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("tsv") => CorpusFormat::Tsv,
            _ => CorpusFormat::Jsonl,
        }
    }
}

impl FromStr for CorpusFormat {
    type Err = DpsuError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "jsonl" | "json" => Ok(CorpusFormat::Jsonl),
            "tsv" => Ok(CorpusFormat::Tsv),
            other => Err(DpsuError::invalid(format!("unknown corpus format `{other}`"))),
        }
    }
}

/// Loads a corpus, unioning every user's items across records.
///
/// Blank lines are skipped and users whose union is empty are dropped. The
/// result is sorted by user id, so it does not depend on record order.
pub fn load_corpus(path: impl AsRef<Path>, format: CorpusFormat, n: usize) -> Result<Database> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| DpsuError::io(path, e))?;
    let mut users: BTreeMap<String, ItemSet> = BTreeMap::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| DpsuError::io(path, e))?;
        let parse_err = |message: String| DpsuError::Parse {
            path: path.to_path_buf(),
            line: line_no,
            message,
        };
        let trimmed = line.trim_end_matches('\r');
        if trimmed.trim().is_empty() {
            continue;
        }
        let (user_id, items) = match format {
            CorpusFormat::Jsonl => {
                let record: CorpusRecord =
                    serde_json::from_str(trimmed).map_err(|e| parse_err(e.to_string()))?;
                record.into_items(n).map_err(parse_err)?
            }
            CorpusFormat::Tsv => {
                let (id, rest) = trimmed
                    .split_once('\t')
                    .ok_or_else(|| parse_err("expected `user_id<TAB>items`".into()))?;
                let items: ItemSet = rest.split(' ').filter(|s| !s.is_empty()).map(String::from).collect();
                (id.to_owned(), items)
            }
        };
        if user_id.is_empty() {
            return Err(parse_err("empty user_id".into()));
        }
        users.entry(user_id).or_default().extend(items);
    }
    Database::new(
        users
            .into_iter()
            .filter(|(_, items)| !items.is_empty())
            .map(|(user_id, items)| UserRecord { user_id, items })
            .collect(),
    )
}

/// Writes `db` as TSV. Fails on items containing spaces, tabs or newlines,
/// which the format cannot represent.
pub fn write_tsv(db: &Database, out: impl Write) -> Result<()> {
    let mut out = BufWriter::new(out);
    let io = |e| DpsuError::io("<tsv output>", e);
    for user in db.users() {
        if user.user_id.contains(['\t', '\n', '\r']) {
            return Err(DpsuError::invalid(format!("user id {:?} cannot be written as TSV", user.user_id)));
        }
        if let Some(bad) = user.items.iter().find(|u| u.contains([' ', '\t', '\n', '\r'])) {
            return Err(DpsuError::invalid(format!("item {bad:?} cannot be written as TSV")));
        }
        let items: Vec<&str> = user.items.iter().map(String::as_str).collect();
        writeln!(out, "{}\t{}", user.user_id, items.join(" ")).map_err(io)?;
    }
    out.flush().map_err(io)
}

pub fn write_tsv_file(db: &Database, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| DpsuError::io(path, e))?;
    write_tsv(db, file)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(items: &[&str]) -> ItemSet {
        items.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn tokenize_examples() {
        assert_eq!(tokenize("The cat the CAT", 1), set(&["the", "cat"]));
        assert_eq!(tokenize("a b c", 2), set(&["a b", "b c"]));
        assert_eq!(tokenize("see http://x.co now!", 1), set(&["see", "now"]));
        assert_eq!(tokenize("visit www.example.com/page?q=1 today", 1), set(&["visit", "today"]));
        assert_eq!(tokenize("don't stop", 1), set(&["don", "t", "stop"]));
        assert!(tokenize("!!!", 1).is_empty());
        assert!(tokenize("one", 2).is_empty());
    }

    #[test]
    fn tokenize_keeps_unicode_letters() {
        assert_eq!(tokenize("Ärger über Größe", 1), set(&["ärger", "über", "größe"]));
    }

    #[test]
    fn unigrams_are_fixed_points() {
        for text in ["The quick, brown fox; jumps over http://t.co/x the LAZY dog.", "a1 b2 c3"] {
            for u in tokenize(text, 1) {
                assert_eq!(tokenize(&u, 1), set(&[&u]));
            }
        }
    }

    #[test]
    fn format_detection() {
        assert_eq!(CorpusFormat::from_path(Path::new("x.TSV")), CorpusFormat::Tsv);
        assert_eq!(CorpusFormat::from_path(Path::new("x.jsonl")), CorpusFormat::Jsonl);
        assert!("csv".parse::<CorpusFormat>().is_err());
    }
}
