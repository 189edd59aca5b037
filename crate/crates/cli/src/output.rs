use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::Path;
use std::time::SystemTime;

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};
use time::format_description::well_known::Rfc3339;
use time::OffsetDateTime;

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub inputs: Value,
    /// sha256 of every input file, keyed by path.
    pub input_digests: BTreeMap<String, String>,
    pub seed: Option<u64>,
    pub tool_version: String,
    pub timestamp: String,
}

#[derive(Serialize)]
struct Results<'a, T: Serialize> {
    manifest: &'a RunManifest,
    payload: &'a T,
}

/// `SOURCE_DATE_EPOCH` when set, so reruns can be byte-identical.
fn timestamp() -> String {
    let t = match std::env::var("SOURCE_DATE_EPOCH").ok().and_then(|s| s.trim().parse::<i64>().ok()) {
        Some(secs) => OffsetDateTime::from_unix_timestamp(secs).unwrap_or(OffsetDateTime::UNIX_EPOCH),
        None => OffsetDateTime::from(SystemTime::now()).replace_nanosecond(0).unwrap(),
    };
    t.format(&Rfc3339).unwrap()
}

impl RunManifest {
    pub fn new<A: Serialize>(command: &str, args: &A, files: &[&Path], seed: Option<u64>) -> io::Result<Self> {
        let mut input_digests = BTreeMap::new();
        for f in files {
            let bytes = fs::read(f)?;
            input_digests.insert(f.display().to_string(), format!("{:x}", Sha256::digest(&bytes)));
        }
        Ok(Self {
            command: command.into(),
            inputs: serde_json::to_value(args).expect("arguments serialize"),
            input_digests,
            seed,
            tool_version: env!("CARGO_PKG_VERSION").into(),
            timestamp: timestamp(),
        })
    }
}

/// Write `bytes` to `path` through a temporary file in the same directory.
/// `None` writes to stdout.
pub fn write_atomic(path: Option<&Path>, bytes: &[u8]) -> io::Result<()> {
    let Some(path) = path else {
        let mut out = io::stdout().lock();
        out.write_all(bytes)?;
        return out.flush();
    };
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

pub fn write_results<T: Serialize>(path: Option<&Path>, manifest: &RunManifest, payload: &T) -> io::Result<()> {
    let mut s = serde_json::to_vec_pretty(&Results { manifest, payload }).map_err(io::Error::other)?;
    s.push(b'\n');
    write_atomic(path, &s)
}

/// Render rows with a header as CSV.
pub fn csv_bytes<I, R>(header: &[&str], rows: I) -> io::Result<Vec<u8>>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator,
    R::Item: AsRef<[u8]>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.into_inner().map_err(|e| io::Error::other(e.to_string()))
}
