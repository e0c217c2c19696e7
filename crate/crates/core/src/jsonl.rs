//! Schema-versioned JSONL snapshots.
//!
//! Every file starts with a header line `{"schema": <name>, "version": <n>}`
//! followed by one JSON record per line. Writes go to a temporary sibling and
//! are renamed into place.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Header {
    pub schema: String,
    pub version: u32,
}

/// Writes `bytes` to `path` through a temp file + rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let file_name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = path.with_file_name(format!(".{file_name}.tmp"));
    {
        let mut f = BufWriter::new(File::create(&tmp)?);
        f.write_all(bytes)?;
        f.flush()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn to_jsonl<T: Serialize>(schema: &str, version: u32, records: &[T]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    serde_json::to_writer(
        &mut buf,
        &Header {
            schema: schema.to_string(),
            version,
        },
    )?;
    buf.push(b'\n');
    for r in records {
        serde_json::to_writer(&mut buf, r)?;
        buf.push(b'\n');
    }
    Ok(buf)
}

pub fn snapshot<T: Serialize>(path: &Path, schema: &str, version: u32, records: &[T]) -> Result<()> {
    write_atomic(path, &to_jsonl(schema, version, records)?)
}

pub fn load<T: DeserializeOwned>(path: &Path, schema: &str, version: u32) -> Result<Vec<T>> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines().enumerate();
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let header: Header = match lines.next() {
        Some((_, line)) => serde_json::from_str(&line?)
            .map_err(|e| parse_err(1, format!("bad header: {e}")))?,
        None => return Err(parse_err(1, "empty file, header line missing".into())),
    };
    if header.schema != schema || header.version != version {
        return Err(Error::Migration {
            path: path.to_path_buf(),
            expected: schema.to_string(),
            expected_version: version,
            found: header.schema,
            found_version: header.version,
        });
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| parse_err(i + 1, e.to_string()))?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path)?;
    serde_json::from_slice(&bytes).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Debug, PartialEq, Serialize, Deserialize)]
    struct Rec {
        id: u32,
        name: String,
    }

    fn recs() -> Vec<Rec> {
        (0..3)
            .map(|id| Rec {
                id,
                name: format!("item {id}"),
            })
            .collect()
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        snapshot(&p, "rec", 1, &recs()).unwrap();
        let back: Vec<Rec> = load(&p, "rec", 1).unwrap();
        assert_eq!(back, recs());
    }

    #[test]
    fn empty_list_is_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.jsonl");
        snapshot::<Rec>(&p, "rec", 1, &[]).unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap().lines().count(), 1);
        assert!(load::<Rec>(&p, "rec", 1).unwrap().is_empty());
    }

    #[test]
    fn truncated_final_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.jsonl");
        let mut bytes = to_jsonl("rec", 1, &recs()).unwrap();
        bytes.truncate(bytes.len() - 6);
        fs::write(&p, bytes).unwrap();
        match load::<Rec>(&p, "rec", 1) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn schema_mismatch_is_migration_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.jsonl");
        snapshot(&p, "rec", 2, &recs()).unwrap();
        assert!(matches!(load::<Rec>(&p, "rec", 1), Err(Error::Migration { .. })));
    }
}
