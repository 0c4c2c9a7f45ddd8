use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::TextError;

/// One line of the JSONL dataset format.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawExample {
    pub image_id: u64,
    pub feature: Vec<f64>,
    pub captions: Vec<String>,
}

/// Reads `{"image_id", "feature", "captions"}` objects, one per line. Blank
/// lines are skipped; all features must share one dimension.
pub fn load_jsonl_dataset(path: impl AsRef<Path>) -> Result<Vec<RawExample>, TextError> {
    let path = path.as_ref();
    let io_err = |source| TextError::Io { path: path.to_path_buf(), source };
    let reader = BufReader::new(File::open(path).map_err(io_err)?);
    let mut out: Vec<RawExample> = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        let ex: RawExample = serde_json::from_str(&line).map_err(|e| TextError::Parse {
            path: path.to_path_buf(),
            line: line_no,
            message: e.to_string(),
        })?;
        let schema = |message: String| TextError::Schema { path: path.to_path_buf(), line: line_no, message };
        if ex.feature.is_empty() {
            return Err(schema("feature must not be empty".into()));
        }
        if let Some(first) = out.first() {
            if first.feature.len() != ex.feature.len() {
                return Err(schema(format!(
                    "feature has {} dimensions, earlier lines have {}",
                    ex.feature.len(),
                    first.feature.len()
                )));
            }
        }
        if ex.captions.is_empty() {
            return Err(schema("captions must not be empty".into()));
        }
        out.push(ex);
    }
    Ok(out)
}

pub fn write_jsonl_dataset(path: impl AsRef<Path>, data: &[RawExample]) -> Result<(), TextError> {
    let path = path.as_ref();
    let io_err = |source| TextError::Io { path: path.to_path_buf(), source };
    let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
    for ex in data {
        let line = serde_json::to_string(ex).expect("plain data serializes");
        writeln!(w, "{line}").map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}
