//! Format-specific dataset adapters. Each one emits the shared
//! [`CaseRecord`] shape; structurally malformed rows are skipped and
//! counted, unknown gold labels are a hard error.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{
    canon_key, CaseRecord, CorpusError, Domain, Extracted, LabelSpace, SkippedRow, TaskKind,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdapterId {
    MtsamplesCsv,
    EurlexJson,
    HyperpartisanByarticle,
    CaseholdCsv,
}

impl AdapterId {
    pub fn domain(self) -> Domain {
        match self {
            AdapterId::MtsamplesCsv => Domain::Medical,
            AdapterId::EurlexJson => Domain::LegalClassification,
            AdapterId::HyperpartisanByarticle => Domain::PoliticalBias,
            AdapterId::CaseholdCsv => Domain::LegalReasoning,
        }
    }

    pub fn task_kind(self) -> TaskKind {
        match self {
            AdapterId::CaseholdCsv => TaskKind::MultipleChoice,
            _ => TaskKind::SingleLabel,
        }
    }
}

impl fmt::Display for AdapterId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            AdapterId::MtsamplesCsv => "mtsamples_csv",
            AdapterId::EurlexJson => "eurlex_json",
            AdapterId::HyperpartisanByarticle => "hyperpartisan_byarticle",
            AdapterId::CaseholdCsv => "casehold_csv",
        };
        f.write_str(s)
    }
}

impl FromStr for AdapterId {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| CorpusError::UnknownAdapter(s.to_string()))
    }
}

type Parsed = (Vec<(usize, CaseRecord)>, Vec<SkippedRow>, usize);

pub(super) fn parse(
    adapter: AdapterId,
    bytes: &[u8],
    space: &LabelSpace,
) -> Result<Parsed, CorpusError> {
    match adapter {
        AdapterId::MtsamplesCsv => parse_mtsamples(bytes, space),
        AdapterId::EurlexJson => parse_eurlex(bytes, space),
        AdapterId::HyperpartisanByarticle => parse_hyperpartisan(bytes, space),
        AdapterId::CaseholdCsv => parse_casehold(bytes, space),
    }
}

fn require_label(
    raw: &str,
    space: &LabelSpace,
    row: usize,
) -> Result<String, CorpusError> {
    match space.normalize(raw) {
        Extracted::Label(l) => Ok(l),
        Extracted::Unparseable => Err(CorpusError::LabelOutOfSpace {
            row,
            label: raw.to_string(),
            domain: space.domain,
        }),
    }
}

fn header_index(headers: &csv::StringRecord, names: &[&str]) -> Option<usize> {
    headers.iter().position(|h| {
        let key = canon_key(h);
        names.iter().any(|n| key == *n)
    })
}

// --- MTSamples ---------------------------------------------------------

fn parse_mtsamples(bytes: &[u8], space: &LabelSpace) -> Result<Parsed, CorpusError> {
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(bytes);
    let headers = reader
        .headers()
        .map_err(|e| empty_detail(e.to_string()))?
        .clone();
    let specialty_col = header_index(&headers, &["medical_specialty", "specialty"]);
    let transcription_col = header_index(&headers, &["transcription"]);
    let description_col = header_index(&headers, &["description"]);
    let sample_col = header_index(&headers, &["sample_name"]);
    let (Some(specialty_col), Some(transcription_col)) = (specialty_col, transcription_col) else {
        return Err(empty_detail(
            "required columns medical_specialty/transcription not found".into(),
        ));
    };

    let mut cases = Vec::new();
    let mut skipped = Vec::new();
    let mut total = 0usize;
    for (i, record) in reader.records().enumerate() {
        total += 1;
        let row = i + 2; // 1-based, after the header line
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                skipped.push(SkippedRow {
                    row,
                    reason: format!("csv parse: {e}"),
                });
                continue;
            }
        };
        let specialty = record.get(specialty_col).unwrap_or("").trim();
        let transcription = record.get(transcription_col).unwrap_or("").trim();
        if specialty.is_empty() {
            skipped.push(SkippedRow {
                row,
                reason: "empty medical_specialty".into(),
            });
            continue;
        }
        if transcription.is_empty() {
            skipped.push(SkippedRow {
                row,
                reason: "empty transcription".into(),
            });
            continue;
        }
        let gold = require_label(specialty, space, row)?;
        let mut metadata = BTreeMap::new();
        if let Some(col) = description_col {
            let d = record.get(col).unwrap_or("").trim();
            if !d.is_empty() {
                metadata.insert("description".to_string(), d.to_string());
            }
        }
        if let Some(col) = sample_col {
            let s = record.get(col).unwrap_or("").trim();
            if !s.is_empty() {
                metadata.insert("sample_name".to_string(), s.to_string());
            }
        }
        cases.push((
            row,
            CaseRecord {
                case_id: format!("mts-{i:05}"),
                domain: Domain::Medical,
                task_kind: TaskKind::SingleLabel,
                input_text: transcription.to_string(),
                choices: None,
                gold: BTreeSet::from([gold.clone()]),
                strata_key: gold,
                metadata,
            },
        ));
    }
    Ok((cases, skipped, total))
}

// --- EURLEX ------------------------------------------------------------

// EURLEX documents are multi-concept; this adapter reduces them to a single
// gold label: the first concept that maps into the configured label space.
// The full raw concept list is preserved in metadata["concepts"]. Documents
// with no mappable concept are skipped and counted.
fn parse_eurlex(bytes: &[u8], space: &LabelSpace) -> Result<Parsed, CorpusError> {
    let text = String::from_utf8_lossy(bytes);
    let trimmed = text.trim_start();
    let docs: Vec<serde_json::Value> = if trimmed.starts_with('[') {
        serde_json::from_str(trimmed).map_err(|e| empty_detail(format!("json parse: {e}")))?
    } else {
        // One JSON document per line.
        let mut docs = Vec::new();
        for line in text.lines() {
            if line.trim().is_empty() {
                continue;
            }
            docs.push(
                serde_json::from_str(line)
                    .map_err(|e| empty_detail(format!("jsonl parse: {e}")))?,
            );
        }
        docs
    };

    let mut cases = Vec::new();
    let mut skipped = Vec::new();
    let total = docs.len();
    for (i, doc) in docs.iter().enumerate() {
        let row = i + 1;
        let id = ["celex_id", "doc_id", "id"]
            .iter()
            .find_map(|k| doc.get(*k).and_then(|v| v.as_str()))
            .map(|s| s.to_string())
            .unwrap_or_else(|| format!("{i:05}"));
        let mut parts = Vec::new();
        for key in ["title", "header", "text"] {
            if let Some(s) = doc.get(key).and_then(|v| v.as_str()) {
                if !s.trim().is_empty() {
                    parts.push(s.trim().to_string());
                }
            }
        }
        for key in ["recitals", "main_body"] {
            match doc.get(key) {
                Some(serde_json::Value::String(s)) if !s.trim().is_empty() => {
                    parts.push(s.trim().to_string())
                }
                Some(serde_json::Value::Array(items)) => {
                    for item in items {
                        if let Some(s) = item.as_str() {
                            if !s.trim().is_empty() {
                                parts.push(s.trim().to_string());
                            }
                        }
                    }
                }
                _ => {}
            }
        }
        if parts.is_empty() {
            skipped.push(SkippedRow {
                row,
                reason: "no text content".into(),
            });
            continue;
        }
        let concepts: Vec<String> = doc
            .get("concepts")
            .and_then(|v| v.as_array())
            .map(|a| {
                a.iter()
                    .filter_map(|c| c.as_str().map(|s| s.to_string()))
                    .collect()
            })
            .unwrap_or_default();
        // Explicit single label wins; otherwise first mappable concept.
        let gold = if let Some(label) = doc.get("label").and_then(|v| v.as_str()) {
            Some(require_label(label, space, row)?)
        } else {
            concepts
                .iter()
                .find_map(|c| space.normalize(c).as_label().map(|l| l.to_string()))
        };
        let Some(gold) = gold else {
            skipped.push(SkippedRow {
                row,
                reason: "no concept maps into the label space".into(),
            });
            continue;
        };
        let mut metadata = BTreeMap::new();
        if !concepts.is_empty() {
            metadata.insert("concepts".to_string(), concepts.join("|"));
        }
        cases.push((
            row,
            CaseRecord {
                case_id: format!("eur-{id}"),
                domain: Domain::LegalClassification,
                task_kind: TaskKind::SingleLabel,
                input_text: parts.join("\n"),
                choices: None,
                gold: BTreeSet::from([gold.clone()]),
                strata_key: gold,
                metadata,
            },
        ));
    }
    Ok((cases, skipped, total))
}

// --- Hyperpartisan (by-article TSV export) ------------------------------

fn parse_hyperpartisan(bytes: &[u8], space: &LabelSpace) -> Result<Parsed, CorpusError> {
    let text = String::from_utf8_lossy(bytes);
    if text.trim_start().starts_with('<') {
        return Err(empty_detail(
            "input looks like raw XML; this adapter reads the by-article TSV export \
             (columns: id, hyperpartisan, text)"
                .into(),
        ));
    }
    let mut lines = text.lines().enumerate();
    let Some((_, header)) = lines.next() else {
        return Err(empty_detail("empty file".into()));
    };
    let cols: Vec<String> = header.split('\t').map(canon_key).collect();
    let find = |names: &[&str]| cols.iter().position(|c| names.contains(&c.as_str()));
    let id_col = find(&["id", "article_id"]);
    let label_col = find(&["hyperpartisan", "label"]);
    let text_col = find(&["text", "content", "body"]);
    let (Some(label_col), Some(text_col)) = (label_col, text_col) else {
        return Err(empty_detail(
            "required TSV columns hyperpartisan/text not found".into(),
        ));
    };

    let mut cases = Vec::new();
    let mut skipped = Vec::new();
    let mut total = 0usize;
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        total += 1;
        let row = i + 1;
        let fields: Vec<&str> = line.split('\t').collect();
        let label_raw = fields.get(label_col).copied().unwrap_or("").trim();
        let body = fields.get(text_col).copied().unwrap_or("").trim();
        if label_raw.is_empty() || body.is_empty() {
            skipped.push(SkippedRow {
                row,
                reason: "missing label or text".into(),
            });
            continue;
        }
        let gold = require_label(label_raw, space, row)?;
        let id = id_col
            .and_then(|c| fields.get(c))
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .unwrap_or_else(|| format!("{row:05}"));
        cases.push((
            row,
            CaseRecord {
                case_id: format!("hyp-{id}"),
                domain: Domain::PoliticalBias,
                task_kind: TaskKind::SingleLabel,
                input_text: body.to_string(),
                choices: None,
                gold: BTreeSet::from([gold.clone()]),
                strata_key: gold,
                metadata: BTreeMap::new(),
            },
        ));
    }
    Ok((cases, skipped, total))
}

// --- CaseHOLD -----------------------------------------------------------

fn parse_casehold(bytes: &[u8], space: &LabelSpace) -> Result<Parsed, CorpusError> {
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(bytes);
    let headers = reader
        .headers()
        .map_err(|e| empty_detail(e.to_string()))?
        .clone();
    let prompt_col = header_index(&headers, &["citing_prompt", "prompt", "citing prompt"]);
    let label_col = header_index(&headers, &["label", "answer"]);
    let id_col = header_index(&headers, &["example_id"]);
    let holding_cols: Vec<Option<usize>> = (0..5)
        .map(|k| {
            header_index(
                &headers,
                &[
                    format!("holding_{k}").as_str(),
                    format!("holding {k}").as_str(),
                    format!("candidate_{k}").as_str(),
                ],
            )
        })
        .collect();
    let (Some(prompt_col), Some(label_col)) = (prompt_col, label_col) else {
        return Err(empty_detail(
            "required columns citing_prompt/label not found".into(),
        ));
    };
    if holding_cols.iter().any(|c| c.is_none()) {
        return Err(empty_detail(
            "expected five holding_0..holding_4 columns".into(),
        ));
    }
    let holding_cols: Vec<usize> = holding_cols.into_iter().flatten().collect();

    let mut cases = Vec::new();
    let mut skipped = Vec::new();
    let mut total = 0usize;
    for (i, record) in reader.records().enumerate() {
        total += 1;
        let row = i + 2;
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                skipped.push(SkippedRow {
                    row,
                    reason: format!("csv parse: {e}"),
                });
                continue;
            }
        };
        let prompt = record.get(prompt_col).unwrap_or("").trim();
        if prompt.is_empty() {
            skipped.push(SkippedRow {
                row,
                reason: "empty citing_prompt".into(),
            });
            continue;
        }
        let choices: Vec<String> = holding_cols
            .iter()
            .map(|&c| record.get(c).unwrap_or("").trim().to_string())
            .collect();
        if choices.iter().any(|c| c.is_empty()) {
            skipped.push(SkippedRow {
                row,
                reason: "missing holding candidate".into(),
            });
            continue;
        }
        let gold = require_label(record.get(label_col).unwrap_or("").trim(), space, row)?;
        let gold_idx: usize = gold.parse().map_err(|_| CorpusError::LabelOutOfSpace {
            row,
            label: gold.clone(),
            domain: space.domain,
        })?;
        if gold_idx >= choices.len() {
            return Err(CorpusError::LabelOutOfSpace {
                row,
                label: gold,
                domain: space.domain,
            });
        }
        let id = id_col
            .and_then(|c| record.get(c))
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .unwrap_or_else(|| format!("{i:05}"));
        cases.push((
            row,
            CaseRecord {
                case_id: format!("ch-{id}"),
                domain: Domain::LegalReasoning,
                task_kind: TaskKind::MultipleChoice,
                input_text: prompt.to_string(),
                choices: Some(choices),
                gold: BTreeSet::from([gold.clone()]),
                strata_key: gold,
                metadata: BTreeMap::new(),
            },
        ));
    }
    Ok((cases, skipped, total))
}

fn empty_detail(detail: String) -> CorpusError {
    CorpusError::EmptyDataset {
        path: "<input>".into(),
        detail,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::load_dataset;
    use std::io::Write;
    use std::path::PathBuf;

    fn fixture(name: &str) -> PathBuf {
        PathBuf::from(env!("CARGO_MANIFEST_DIR"))
            .join("tests/fixtures")
            .join(name)
    }

    fn medical_space() -> LabelSpace {
        LabelSpace::new(
            Domain::Medical,
            vec![
                "Cardiovascular / Pulmonary".into(),
                "Orthopedic".into(),
                "Surgery".into(),
            ],
            BTreeMap::from([("cardiology".to_string(), "Cardiovascular / Pulmonary".to_string())]),
        )
        .unwrap()
    }

    fn casehold_space() -> LabelSpace {
        LabelSpace::new(
            Domain::LegalReasoning,
            (0..5).map(|i| i.to_string()).collect(),
            BTreeMap::from([
                ("A".to_string(), "0".to_string()),
                ("B".to_string(), "1".to_string()),
                ("C".to_string(), "2".to_string()),
                ("D".to_string(), "3".to_string()),
                ("E".to_string(), "4".to_string()),
            ]),
        )
        .unwrap()
    }

    #[test]
    fn adapter_id_parses_and_prints() {
        let id: AdapterId = "mtsamples_csv".parse().unwrap();
        assert_eq!(id, AdapterId::MtsamplesCsv);
        assert_eq!(id.to_string(), "mtsamples_csv");
        assert!(matches!(
            "nope".parse::<AdapterId>(),
            Err(CorpusError::UnknownAdapter(_))
        ));
    }

    #[test]
    fn mtsamples_fixture_loads() {
        let out = load_dataset(
            &fixture("mtsamples_small.csv"),
            AdapterId::MtsamplesCsv,
            &medical_space(),
        )
        .unwrap();
        assert_eq!(out.cases.len(), 3);
        let first = &out.cases.cases[0];
        assert_eq!(first.domain, Domain::Medical);
        assert_eq!(first.task_kind, TaskKind::SingleLabel);
        assert!(first.gold.contains("Cardiovascular / Pulmonary"));
        assert!(first.input_text.contains("2-D M-MODE"));
        // The fixture carries one row with an empty transcription.
        assert_eq!(out.report.skipped.len(), 1);
        assert_eq!(out.report.total_rows, 4);
    }

    #[test]
    fn mtsamples_unknown_specialty_is_label_out_of_space() {
        let mut space = medical_space();
        space.canonical_labels = vec!["Orthopedic".into()];
        space.aliases.clear();
        let err = load_dataset(
            &fixture("mtsamples_small.csv"),
            AdapterId::MtsamplesCsv,
            &space,
        )
        .unwrap_err();
        assert!(matches!(err, CorpusError::LabelOutOfSpace { .. }));
    }

    #[test]
    fn casehold_fixture_loads() {
        let out = load_dataset(
            &fixture("casehold_small.csv"),
            AdapterId::CaseholdCsv,
            &casehold_space(),
        )
        .unwrap();
        let first = &out.cases.cases[0];
        assert_eq!(first.task_kind, TaskKind::MultipleChoice);
        assert_eq!(first.choices.as_ref().unwrap().len(), 5);
        assert!(first.gold.contains("2"));
    }

    #[test]
    fn eurlex_fixture_reduces_to_single_label() {
        let space = LabelSpace::new(
            Domain::LegalClassification,
            vec![
                "Environmental".into(),
                "Education".into(),
                "Health".into(),
                "Economic".into(),
                "Transport".into(),
            ],
            BTreeMap::new(),
        )
        .unwrap();
        let out = load_dataset(&fixture("eurlex_small.json"), AdapterId::EurlexJson, &space)
            .unwrap();
        assert_eq!(out.cases.len(), 2);
        let first = &out.cases.cases[0];
        assert!(first.gold.contains("Environmental"));
        assert!(first.metadata["concepts"].contains('|'));
        // The third document has no mappable concept and is counted.
        assert_eq!(out.report.skipped.len(), 1);
    }

    #[test]
    fn hyperpartisan_fixture_loads() {
        let space = LabelSpace::new(
            Domain::PoliticalBias,
            vec!["hyperpartisan".into(), "mainstream".into()],
            BTreeMap::from([
                ("true".to_string(), "hyperpartisan".to_string()),
                ("false".to_string(), "mainstream".to_string()),
            ]),
        )
        .unwrap();
        let out = load_dataset(
            &fixture("hyperpartisan_small.tsv"),
            AdapterId::HyperpartisanByarticle,
            &space,
        )
        .unwrap();
        assert_eq!(out.cases.len(), 2);
        assert!(out.cases.cases[0].gold.contains("hyperpartisan"));
        assert!(out.cases.cases[1].gold.contains("mainstream"));
    }

    #[test]
    fn empty_file_is_empty_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.csv");
        let mut f = std::fs::File::create(&path).unwrap();
        writeln!(f, "description,medical_specialty,transcription").unwrap();
        let err = load_dataset(&path, AdapterId::MtsamplesCsv, &medical_space()).unwrap_err();
        assert!(matches!(err, CorpusError::EmptyDataset { .. }));
    }

    #[test]
    fn determinism_across_reloads() {
        let path = fixture("mtsamples_small.csv");
        let a = load_dataset(&path, AdapterId::MtsamplesCsv, &medical_space()).unwrap();
        let b = load_dataset(&path, AdapterId::MtsamplesCsv, &medical_space()).unwrap();
        assert_eq!(a.cases.cases, b.cases.cases);
        assert_eq!(a.cases.provenance, b.cases.provenance);
    }
}
