use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Dataset, Judgments, QueryDocSet};
use crate::error::{Error, Result};

/// On-disk form of one query, one JSON object per line.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    query_id: String,
    q: Vec<f64>,
    #[serde(rename = "D")]
    docs: Vec<Vec<f64>>,
    #[serde(rename = "J")]
    judgments: Vec<Vec<u8>>,
}

pub fn write_jsonl<W: Write>(dataset: &Dataset, mut w: W) -> Result<()> {
    for it in dataset.items() {
        let rec = Record {
            query_id: it.query_id().to_string(),
            q: it.query().to_vec(),
            docs: it.docs().to_vec(),
            judgments: it.judgments().to_rows(),
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Parses a JSON-lines dataset. `origin` only labels diagnostics.
pub fn read_jsonl<R: Read>(r: R, origin: &Path) -> Result<Dataset> {
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: origin.to_path_buf(),
        line,
        msg,
    };
    let mut items = Vec::new();
    for (idx, line) in BufReader::new(r).lines().enumerate() {
        let lineno = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line).map_err(|e| parse_err(lineno, e.to_string()))?;
        let item = Judgments::new(&rec.judgments)
            .and_then(|j| QueryDocSet::new(rec.query_id, rec.q, rec.docs, j))
            .map_err(|e| parse_err(lineno, e.to_string()))?;
        if let Some(first) = items.first() {
            let first: &QueryDocSet = first;
            if first.embed_dim() != item.embed_dim()
                || first.num_docs() != item.num_docs()
                || first.judgments().subtopics() != item.judgments().subtopics()
            {
                return Err(parse_err(
                    lineno,
                    format!(
                        "record shape (L={}, n={}, m={}) differs from first record (L={}, n={}, m={})",
                        item.embed_dim(),
                        item.num_docs(),
                        item.judgments().subtopics(),
                        first.embed_dim(),
                        first.num_docs(),
                        first.judgments().subtopics()
                    ),
                ));
            }
        }
        items.push(item);
    }
    if items.is_empty() {
        return Err(parse_err(0, "no records".into()));
    }
    Dataset::new(items)
}

pub fn save(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    write_jsonl(dataset, BufWriter::new(File::create(path)?))
}

pub fn load(path: impl AsRef<Path>) -> Result<Dataset> {
    let path: PathBuf = path.as_ref().to_path_buf();
    read_jsonl(File::open(&path)?, &path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::{generate, GeneratorConfig};

    fn parse(text: &str) -> Result<Dataset> {
        read_jsonl(text.as_bytes(), Path::new("mem"))
    }

    #[test]
    fn round_trip_bit_exact() {
        let ds = generate(&GeneratorConfig {
            queries: 3,
            docs: 4,
            subtopics: 3,
            embed_dim: 5,
            coverage_rate: 0.4,
            ..Default::default()
        })
        .unwrap();
        let mut buf = Vec::new();
        write_jsonl(&ds, &mut buf).unwrap();
        let back = parse(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(back, ds);
        for (a, b) in ds.items().iter().zip(back.items()) {
            for (x, y) in a.docs().iter().flatten().zip(b.docs().iter().flatten()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn one_query_round_trip() {
        let text = r#"{"query_id":"a","q":[0.1,0.2],"D":[[1.0,0.0]],"J":[[1,0]]}"#;
        let ds = parse(text).unwrap();
        let mut buf = Vec::new();
        write_jsonl(&ds, &mut buf).unwrap();
        assert_eq!(parse(std::str::from_utf8(&buf).unwrap()).unwrap(), ds);
    }

    #[test]
    fn rejects_non_binary_judgment() {
        let text = r#"{"query_id":"a","q":[0.1],"D":[[1.0]],"J":[[2]]}"#;
        let err = parse(text).unwrap_err().to_string();
        assert!(err.contains("line 1") && err.contains("non-binary"), "{err}");
    }

    #[test]
    fn rejects_mismatched_dimension() {
        let text = r#"{"query_id":"a","q":[0.1,0.2],"D":[[1.0,0.0],[1.0]],"J":[[1],[0]]}"#;
        let err = parse(text).unwrap_err().to_string();
        assert!(err.contains("dimension"), "{err}");
    }

    #[test]
    fn rejects_unknown_field_and_shape_drift() {
        let text = r#"{"query_id":"a","q":[0.1],"D":[[1.0]],"J":[[1]],"extra":1}"#;
        assert!(parse(text).is_err());
        let text = concat!(
            r#"{"query_id":"a","q":[0.1],"D":[[1.0]],"J":[[1]]}"#,
            "\n",
            r#"{"query_id":"b","q":[0.1,0.3],"D":[[1.0,0.0]],"J":[[1]]}"#
        );
        let err = parse(text).unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
        assert!(parse("").is_err());
    }
}
