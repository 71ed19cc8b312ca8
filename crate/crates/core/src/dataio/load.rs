use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One review row as it arrives from disk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawInteraction {
    pub user: String,
    pub item: String,
    pub rating: f64,
    #[serde(default)]
    pub keyphrases: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputFormat {
    Jsonl,
    Csv,
}

impl FromStr for InputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "jsonl" | "json" => Ok(InputFormat::Jsonl),
            "csv" => Ok(InputFormat::Csv),
            other => Err(Error::Config(format!("unknown input format `{other}`"))),
        }
    }
}

impl InputFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()? {
            "jsonl" | "json" => Some(InputFormat::Jsonl),
            "csv" => Some(InputFormat::Csv),
            _ => None,
        }
    }
}

pub fn normalize_keyphrase(k: &str) -> String {
    k.trim().to_lowercase()
}

/// Reads a review file. Keyphrases are trimmed and lower-cased; repeated
/// `(user, item)` rows keep the last occurrence.
pub fn load_interactions(path: impl AsRef<Path>, format: InputFormat) -> Result<Vec<RawInteraction>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_interactions(BufReader::new(file), format)
}

pub fn parse_interactions<R: Read>(reader: R, format: InputFormat) -> Result<Vec<RawInteraction>> {
    let rows = match format {
        InputFormat::Jsonl => parse_jsonl(reader)?,
        InputFormat::Csv => parse_csv(reader)?,
    };
    if rows.is_empty() {
        return Err(Error::EmptyDataset("input contains no interactions".into()));
    }
    Ok(dedup_last_wins(rows))
}

fn validate(mut row: RawInteraction, line: usize) -> Result<RawInteraction> {
    if !row.rating.is_finite() {
        return Err(Error::Parse {
            line,
            message: format!("rating {} is not finite", row.rating),
        });
    }
    if row.user.is_empty() || row.item.is_empty() {
        return Err(Error::Parse {
            line,
            message: "empty user or item id".into(),
        });
    }
    row.keyphrases = row
        .keyphrases
        .iter()
        .map(|k| normalize_keyphrase(k))
        .filter(|k| !k.is_empty())
        .collect();
    row.keyphrases.sort();
    row.keyphrases.dedup();
    Ok(row)
}

fn parse_jsonl<R: Read>(reader: R) -> Result<Vec<RawInteraction>> {
    let mut rows = Vec::new();
    for (n, line) in BufReader::new(reader).lines().enumerate() {
        let line_no = n + 1;
        let line = line.map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let row: RawInteraction = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        rows.push(validate(row, line_no)?);
    }
    Ok(rows)
}

#[derive(Deserialize)]
struct CsvRow {
    user: String,
    item: String,
    rating: Option<f64>,
    #[serde(default)]
    keyphrases: Option<String>,
}

fn parse_csv<R: Read>(reader: R) -> Result<Vec<RawInteraction>> {
    let mut csv = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut rows = Vec::new();
    for (n, rec) in csv.deserialize::<CsvRow>().enumerate() {
        // header is line 1
        let fallback_line = n + 2;
        let rec = rec.map_err(|e| Error::Parse {
            line: e
                .position()
                .map(|p| p.line() as usize)
                .unwrap_or(fallback_line),
            message: e.to_string(),
        })?;
        let rating = rec.rating.ok_or_else(|| Error::Parse {
            line: fallback_line,
            message: "missing rating".into(),
        })?;
        let keyphrases = rec
            .keyphrases
            .map(|s| s.split('|').map(str::to_string).collect())
            .unwrap_or_default();
        rows.push(validate(
            RawInteraction {
                user: rec.user,
                item: rec.item,
                rating,
                keyphrases,
            },
            fallback_line,
        )?);
    }
    Ok(rows)
}

pub(crate) fn dedup_last_wins(rows: Vec<RawInteraction>) -> Vec<RawInteraction> {
    let mut last: HashMap<(String, String), usize> = HashMap::with_capacity(rows.len());
    for (i, r) in rows.iter().enumerate() {
        last.insert((r.user.clone(), r.item.clone()), i);
    }
    let duplicates = rows.len() - last.len();
    if duplicates > 0 {
        log::warn!("{duplicates} duplicate (user, item) rows; keeping the last occurrence");
    }
    rows.into_iter()
        .enumerate()
        .filter(|(i, r)| last[&(r.user.clone(), r.item.clone())] == *i)
        .map(|(_, r)| r)
        .collect()
}
