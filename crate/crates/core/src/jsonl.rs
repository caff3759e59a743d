//! JSON Lines reading and writing shared by the scan, verdict and path formats.
//!
//! Every line, including the last, must be newline-terminated: a file cut
//! mid-record is rejected as a whole rather than yielding a partial load.

use std::io::{BufRead, Write};

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum JsonlError {
    #[error("line {line}: {message}")]
    Invalid { line: usize, message: String },
    #[error("line {line}: missing trailing newline (truncated file?)")]
    Truncated { line: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn write_line<W: Write, T: Serialize>(out: &mut W, value: &T) -> Result<(), JsonlError> {
    serde_json::to_writer(&mut *out, value).map_err(|e| JsonlError::Invalid {
        line: 0,
        message: e.to_string(),
    })?;
    out.write_all(b"\n")?;
    Ok(())
}

pub fn write_all<'a, W, T, I>(out: &mut W, values: I) -> Result<(), JsonlError>
where
    W: Write,
    T: Serialize + 'a,
    I: IntoIterator<Item = &'a T>,
{
    for v in values {
        write_line(out, v)?;
    }
    Ok(())
}

/// Reads every record, validating each with `check`. Blank lines are skipped.
pub fn read_all<R, T, F>(reader: R, mut check: F) -> Result<Vec<T>, JsonlError>
where
    R: BufRead,
    T: DeserializeOwned,
    F: FnMut(&T) -> Result<(), String>,
{
    let mut out = Vec::new();
    for_each_line(reader, |line_no, line| {
        let value: T = serde_json::from_str(line).map_err(|e| JsonlError::Invalid {
            line: line_no,
            message: e.to_string(),
        })?;
        check(&value).map_err(|message| JsonlError::Invalid {
            line: line_no,
            message,
        })?;
        out.push(value);
        Ok(())
    })?;
    Ok(out)
}

/// Calls `f` with (1-based line number, line text) for each non-blank line.
pub fn for_each_line<R, F>(mut reader: R, mut f: F) -> Result<(), JsonlError>
where
    R: BufRead,
    F: FnMut(usize, &str) -> Result<(), JsonlError>,
{
    let mut buf = String::new();
    let mut line_no = 0;
    loop {
        buf.clear();
        if reader.read_line(&mut buf)? == 0 {
            return Ok(());
        }
        line_no += 1;
        if !buf.ends_with('\n') {
            return Err(JsonlError::Truncated { line: line_no });
        }
        let line = buf.trim();
        if !line.is_empty() {
            f(line_no, line)?;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_unterminated_last_line() {
        let data = b"{\"a\":1}\n{\"a\":2}";
        let err = read_all::<_, serde_json::Value, _>(&data[..], |_| Ok(())).unwrap_err();
        assert!(matches!(err, JsonlError::Truncated { line: 2 }));
    }

    #[test]
    fn reports_bad_line() {
        let data = b"{\"a\":1}\n{\"a\":\n";
        let err = read_all::<_, serde_json::Value, _>(&data[..], |_| Ok(())).unwrap_err();
        assert!(matches!(err, JsonlError::Invalid { line: 2, .. }));
    }
}
