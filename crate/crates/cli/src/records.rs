//! Line-delimited completion records: the bridge between externally
//! generated model outputs and the offline best-of-N analyzer. One JSON
//! object per line.

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};

/// One sampled completion from any model, with its (model-reported)
/// sequence log-probability and optional grading metadata.
///
/// `logprob` is not required to be nonpositive: external models may report
/// length-summed or otherwise shifted values, and selection only compares.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompletionRecord {
    pub prompt_id: String,
    pub response_id: String,
    pub logprob: f64,
    /// Token count, at least 1.
    pub length: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correct: Option<bool>,
}

impl CompletionRecord {
    pub fn validate(&self) -> Result<()> {
        if self.length == 0 {
            bail!(
                "record for prompt {:?} has zero length; token counts start at 1",
                self.prompt_id
            );
        }
        if !self.logprob.is_finite() {
            bail!("record for prompt {:?} has non-finite logprob", self.prompt_id);
        }
        Ok(())
    }
}

/// Parse a JSONL stream of completion records.
pub fn read_records(reader: impl BufRead) -> Result<Vec<CompletionRecord>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.context("reading records")?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: CompletionRecord =
            serde_json::from_str(&line).with_context(|| format!("bad record on line {}", i + 1))?;
        rec.validate()?;
        out.push(rec);
    }
    if out.is_empty() {
        bail!("no completion records found");
    }
    Ok(out)
}

pub fn read_records_file(path: &std::path::Path) -> Result<Vec<CompletionRecord>> {
    let file = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_records(std::io::BufReader::new(file))
}

pub fn write_records(records: &[CompletionRecord], mut writer: impl Write) -> Result<()> {
    for rec in records {
        serde_json::to_writer(&mut writer, rec)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_round_trip() {
        let records = vec![
            CompletionRecord {
                prompt_id: "p0".into(),
                response_id: "r0".into(),
                logprob: -1.25,
                length: 7,
                answer: Some("42".into()),
                correct: Some(true),
            },
            CompletionRecord {
                prompt_id: "p1".into(),
                response_id: "r1".into(),
                logprob: 0.5,
                length: 1,
                answer: None,
                correct: None,
            },
        ];
        let mut buf = Vec::new();
        write_records(&records, &mut buf).unwrap();
        let back = read_records(std::io::Cursor::new(buf)).unwrap();
        assert_eq!(records, back);
    }

    #[test]
    fn zero_length_rejected() {
        let line = r#"{"prompt_id":"p","response_id":"r","logprob":-1.0,"length":0}"#;
        assert!(read_records(std::io::Cursor::new(line)).is_err());
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(read_records(std::io::Cursor::new("")).is_err());
    }

    #[test]
    fn unknown_fields_rejected() {
        let line = r#"{"prompt_id":"p","response_id":"r","logprob":-1.0,"length":1,"oops":3}"#;
        assert!(read_records(std::io::Cursor::new(line)).is_err());
    }
}
