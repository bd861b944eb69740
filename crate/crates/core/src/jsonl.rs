//! Newline-delimited JSON helpers shared by every file format in the crate.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

/// Decodes one record per non-blank line. `f` receives the 1-based line
/// number along with each decoded record.
pub fn read_records<T, R, F>(reader: R, path: &Path, mut f: F) -> Result<()>
where
    T: DeserializeOwned,
    R: Read,
    F: FnMut(usize, T) -> Result<()>,
{
    let reader = BufReader::new(reader);
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let record: T = serde_json::from_str(trimmed).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: line_no,
            message: e.to_string(),
        })?;
        f(line_no, record)?;
    }
    Ok(())
}

pub fn read_file<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    read_records(file, path, |_, rec| {
        out.push(rec);
        Ok(())
    })?;
    Ok(out)
}

pub fn write_records<T, W, I>(writer: W, records: I) -> std::io::Result<()>
where
    T: Serialize,
    W: Write,
    I: IntoIterator<Item = T>,
{
    let mut writer = BufWriter::new(writer);
    for rec in records {
        serde_json::to_writer(&mut writer, &rec)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()
}

pub fn write_file<T, I>(path: &Path, records: I) -> Result<()>
where
    T: Serialize,
    I: IntoIterator<Item = T>,
{
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_records(file, records).map_err(|e| Error::io(path, e))
}
