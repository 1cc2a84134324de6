//! Reading and writing header-stamped text artifacts.

use std::io::Write;
use std::path::{Path, PathBuf};

use scoopcoach_core::RunConfig;

use crate::CliError;

/// Config header, then `body`.
pub fn stamped(config: &RunConfig, body: &str) -> String {
    let mut out = config.header();
    out.push('\n');
    out.push_str(body);
    out
}

/// Writes to `path`, or standard output when `None`.
pub fn write(path: Option<&Path>, text: &str) -> Result<(), CliError> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| CliError::io(p, e)),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| CliError::Runtime(format!("stdout: {e}"))),
    }
}

pub fn write_stamped(config: &RunConfig, path: Option<&Path>, body: &str) -> Result<(), CliError> {
    write(path, &stamped(config, body))
}

/// Reads an artifact and strips its header lines. Warns when it was
/// written under a different configuration or seed.
pub fn read_body(config: &RunConfig, path: &Path) -> Result<String, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let mut body = String::with_capacity(text.len());
    for line in text.split_inclusive('\n') {
        if let Some(header) = line.strip_prefix('#') {
            let header = format!("#{}", header.trim_end());
            if header.starts_with("# scoopcoach ") && header != config.header() {
                eprintln!(
                    "warning: {} was written with `{header}`, running with `{}`",
                    path.display(),
                    config.header()
                );
            }
        } else {
            body.push_str(line);
        }
    }
    Ok(body)
}

/// Single JSON record artifact.
pub fn read_json<T: serde::de::DeserializeOwned>(config: &RunConfig, path: &Path) -> Result<T, CliError> {
    let body = read_body(config, path)?;
    serde_json::from_str(body.trim()).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

pub fn json_line<T: serde::Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string(value).expect("artifact serializes");
    s.push('\n');
    s
}

/// CSV text with `columns` as the header row.
pub fn csv<I, R>(columns: &[&str], rows: I) -> String
where
    I: IntoIterator<Item = R>,
    R: IntoIterator,
    R::Item: std::fmt::Display,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(columns).expect("in-memory write");
    for row in rows {
        w.write_record(row.into_iter().map(|v| v.to_string())).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
}

/// `<out stem>.<suffix>` next to `out`, unless `explicit` is given.
pub fn side_path(explicit: Option<PathBuf>, out: Option<&Path>, suffix: &str) -> Option<PathBuf> {
    explicit.or_else(|| {
        let out = out?;
        let stem = out.file_stem()?.to_string_lossy().into_owned();
        Some(out.with_file_name(format!("{stem}.{suffix}")))
    })
}
