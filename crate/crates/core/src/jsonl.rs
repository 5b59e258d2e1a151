//! Line-delimited JSON helpers and atomic file output.
//!
//! Every artifact the pipeline writes goes through [`write_atomic`]: the bytes
//! land in a temporary file in the destination directory and are renamed into
//! place only once fully flushed, so a failed stage never leaves a partial file.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

const BOM: char = '\u{feff}';

/// Reads non-blank lines of a UTF-8 file, stripping a leading byte-order mark.
/// Yields `(line_number, line)` with 1-based numbering.
pub fn read_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = if idx == 0 {
            line.strip_prefix(BOM).map(str::to_owned).unwrap_or(line)
        } else {
            line
        };
        if line.trim().is_empty() {
            continue;
        }
        out.push((idx + 1, line));
    }
    Ok(out)
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<(usize, T)>> {
    read_lines(path)?
        .into_iter()
        .map(|(line_no, line)| {
            serde_json::from_str(&line)
                .map(|v| (line_no, v))
                .map_err(|e| Error::parse(path, line_no, e))
        })
        .collect()
}

pub fn to_jsonl_bytes<T: Serialize>(records: &[T]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    for rec in records {
        serde_json::to_writer(&mut buf, rec)?;
        buf.push(b'\n');
    }
    Ok(buf)
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    write_atomic(path, &to_jsonl_bytes(records)?)
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut buf = serde_json::to_vec_pretty(value)?;
    buf.push(b'\n');
    write_atomic(path, &buf)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let text = text.strip_prefix(BOM).unwrap_or(&text);
    serde_json::from_str(text).map_err(|e| Error::parse(path, e.line(), e))
}

/// Writes `bytes` to `path` via a sibling temp file and an atomic rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut builder = tempfile::Builder::new();
    // Temp files default to 0600; outputs should look like any other file.
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        builder.permissions(std::fs::Permissions::from_mode(0o644));
    }
    let mut tmp = builder.tempfile_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Debug, PartialEq, Serialize, serde::Deserialize)]
    struct Rec {
        id: u32,
    }

    #[test]
    fn bom_and_blank_lines_are_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.jsonl");
        std::fs::write(&path, "\u{feff}{\"id\":1}\n\n{\"id\":2}\n").unwrap();
        let recs: Vec<(usize, Rec)> = read_jsonl(&path).unwrap();
        assert_eq!(recs, vec![(1, Rec { id: 1 }), (3, Rec { id: 2 })]);
    }

    #[test]
    fn parse_error_carries_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.jsonl");
        std::fs::write(&path, "{\"id\":1}\n{\"id\":\n").unwrap();
        match read_jsonl::<Rec>(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn atomic_write_replaces_existing() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.jsonl");
        write_jsonl(&path, &[Rec { id: 1 }]).unwrap();
        write_jsonl(&path, &[Rec { id: 2 }, Rec { id: 3 }]).unwrap();
        assert_eq!(
            std::fs::read_to_string(&path).unwrap(),
            "{\"id\":2}\n{\"id\":3}\n"
        );
        // no stray temp files
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
