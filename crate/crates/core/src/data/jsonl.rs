use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use super::{DataFormat, InstructionRecord, RawTextRecord, Record};
use crate::error::{Error, Result};

/// Reads one JSON object per line. Blank lines are skipped, unknown fields
/// ignored, and the first malformed line aborts with its 1-based number.
pub fn load_jsonl(path: &Path, format: DataFormat) -> Result<Vec<Record>> {
    let text = fs::read_to_string(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::DatasetMissing(path.to_path_buf())
        } else {
            Error::io(path, e)
        }
    })?;
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec = match format {
            DataFormat::Raw => {
                let r: RawTextRecord = serde_json::from_str(line).map_err(|e| parse_err(lineno, e.to_string()))?;
                if r.text.trim().is_empty() {
                    return Err(parse_err(lineno, "text is empty".into()));
                }
                Record::Raw(r)
            }
            DataFormat::Instruction => {
                let r: InstructionRecord =
                    serde_json::from_str(line).map_err(|e| parse_err(lineno, e.to_string()))?;
                if r.instruction.trim().is_empty() || r.output.trim().is_empty() {
                    return Err(parse_err(lineno, "instruction and output must be non-empty".into()));
                }
                Record::Instruction(r)
            }
        };
        out.push(rec);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r).expect("serializable record");
        buf.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}
