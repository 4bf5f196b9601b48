use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::record::{Dataset, SampleRecord};
use crate::{Error, Result};

/// A manifest line whose embeddings may still be missing (input to `embed`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestLine {
    pub id: String,
    pub label: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text_embedding: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_embedding: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_text: Option<String>,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_lines<T: for<'de> Deserialize<'de>>(text: &str) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(line).map_err(|e| Error::Manifest {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

/// Reads a manifest without requiring embeddings.
pub fn read_manifest_lines(path: impl AsRef<Path>) -> Result<Vec<ManifestLine>> {
    let path = path.as_ref();
    let lines: Vec<ManifestLine> = parse_lines(&read(path)?)?;
    if lines.is_empty() {
        return Err(Error::Manifest {
            line: 0,
            message: format!("{} contains no records", path.display()),
        });
    }
    Ok(lines)
}

/// Loads a JSON Lines manifest, preserving line order. Dimensions come from
/// the first record and are enforced on the rest.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = read(path)?;
    let records: Vec<SampleRecord> = parse_lines(&text)?;
    if records.is_empty() {
        return Err(Error::Manifest {
            line: 0,
            message: format!("{} contains no records", path.display()),
        });
    }
    // label range is part of the line format
    if let Some((i, r)) = records.iter().enumerate().find(|(_, r)| r.label > 1) {
        let line = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .nth(i)
            .map_or(0, |(n, _)| n + 1);
        return Err(Error::Manifest {
            line,
            message: format!("record `{}` has label {}, expected 0 or 1", r.id, r.label),
        });
    }
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "manifest".into());
    Dataset::new(name, records)
}

pub fn write_manifest<R: Serialize>(path: impl AsRef<Path>, records: &[R]) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &tempfile::TempDir, body: &str) -> std::path::PathBuf {
        let p = dir.path().join("m.jsonl");
        fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn loads_two_records() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            r#"{"id":"a","label":1,"text_embedding":[1,2,3,4],"image_embedding":[0,0,0,0,0,1.5]}
{"id":"b","label":0,"text_embedding":[0,0,0,1],"image_embedding":[1,1,1,1,1,1],"raw_text":"hi"}
"#,
        );
        let ds = load_manifest(&p).unwrap();
        assert_eq!((ds.len(), ds.d_text, ds.d_image), (2, 4, 6));
        assert_eq!(ds.records[1].raw_text.as_deref(), Some("hi"));
        assert_eq!(ds.records[0].id, "a");
    }

    #[test]
    fn dim_mismatch_names_record() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            r#"{"id":"a","label":1,"text_embedding":[1,2,3,4],"image_embedding":[0,1]}
{"id":"odd","label":0,"text_embedding":[1,2,3,4,5],"image_embedding":[0,1]}
"#,
        );
        let err = load_manifest(&p).unwrap_err().to_string();
        assert!(err.contains("odd"), "{err}");
    }

    #[test]
    fn malformed_line_reports_number() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            r#"{"id":"a","label":1,"text_embedding":[1],"image_embedding":[1]}
{"id":"b","label":1,"text_embedding":[1],
"#,
        );
        match load_manifest(&p).unwrap_err() {
            Error::Manifest { line, .. } => assert_eq!(line, 2),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn bad_label_and_empty_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            r#"{"id":"a","label":2,"text_embedding":[1],"image_embedding":[1]}"#,
        );
        assert!(matches!(load_manifest(&p), Err(Error::Manifest { line: 1, .. })));
        let p = write(&dir, "\n\n");
        assert!(load_manifest(&p).is_err());
        assert!(load_manifest(dir.path().join("missing.jsonl")).is_err());
    }
}
