//! Frame intake and the append-only JSONL record store.
//!
//! Each stored line is one JSON object with fields in this order:
//! `device_id, ts, lat, lng, ppm, band, site_id, bucket`. A torn final line
//! (no LF, or unparseable) is skipped on load and reported.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{classify, HazardBand, Reading};
use crate::geo::{nearest_site, SiteRegistry};
use crate::protocol::{decode_frame, DecodeError, DecodeErrorKind};
use crate::report::{bucket_of, Bucket};

/// A decoded reading joined with its band, site and time bucket.
#[derive(Debug, Clone, PartialEq)]
pub struct EnrichedReading {
    pub reading: Reading,
    pub band: HazardBand,
    pub site_id: Option<String>,
    pub bucket: Bucket,
}

impl EnrichedReading {
    /// Classifies, matches and buckets `reading`.
    pub fn enrich(reading: Reading, reg: &SiteRegistry, tz_offset_minutes: i32) -> Self {
        let site_id = if reg.is_empty() {
            None
        } else {
            nearest_site(reading.point(), reg)
                .expect("reading coordinates are validated and registry is non-empty")
                .map(|s| s.site_id.clone())
        };
        let bucket = bucket_of(reading.ts(), tz_offset_minutes);
        Self::from_parts(reading, site_id, bucket)
    }

    pub fn from_parts(reading: Reading, site_id: Option<String>, bucket: Bucket) -> Self {
        let band = classify(reading.ppm()).expect("reading ppm is valid");
        Self {
            reading,
            band,
            site_id,
            bucket,
        }
    }

    /// One store line including the trailing LF.
    pub fn to_store_line(&self) -> String {
        let rec = StoredRecordRef {
            device_id: self.reading.device_id(),
            ts: self.reading.ts(),
            lat: self.reading.lat(),
            lng: self.reading.lng(),
            ppm: self.reading.ppm(),
            band: self.band,
            site_id: self.site_id.as_deref(),
            bucket: self.bucket,
        };
        let mut line = serde_json::to_string(&rec).expect("store record serializes");
        line.push('\n');
        line
    }

    pub fn from_store_line(line: &str) -> Result<Self, String> {
        let rec: StoredRecord = serde_json::from_str(line).map_err(|e| e.to_string())?;
        let reading = Reading::new(rec.device_id, rec.ts, rec.lat, rec.lng, rec.ppm)
            .map_err(|e| e.to_string())?;
        if (reading.lat(), reading.lng(), reading.ppm()) != (rec.lat, rec.lng, rec.ppm) {
            return Err("values are not in quantized form".into());
        }
        let expected = classify(reading.ppm()).map_err(|e| e.to_string())?;
        if expected != rec.band {
            return Err(format!(
                "stored band {} disagrees with classification {expected}",
                rec.band
            ));
        }
        Ok(Self {
            reading,
            band: rec.band,
            site_id: rec.site_id,
            bucket: rec.bucket,
        })
    }
}

#[derive(Serialize)]
struct StoredRecordRef<'a> {
    device_id: &'a str,
    ts: i64,
    lat: f64,
    lng: f64,
    ppm: f64,
    band: HazardBand,
    site_id: Option<&'a str>,
    bucket: Bucket,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct StoredRecord {
    device_id: String,
    ts: i64,
    lat: f64,
    lng: f64,
    ppm: f64,
    band: HazardBand,
    site_id: Option<String>,
    bucket: Bucket,
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("store {path} not found")]
    NotFound { path: PathBuf },
    #[error("store {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl StoreError {
    fn io(path: &Path, source: io::Error) -> Self {
        if source.kind() == io::ErrorKind::NotFound {
            StoreError::NotFound {
                path: path.to_path_buf(),
            }
        } else {
            StoreError::Io {
                path: path.to_path_buf(),
                source,
            }
        }
    }
}

/// Append-only handle on a store file. One writer per file.
#[derive(Debug)]
pub struct Store {
    file: File,
    path: PathBuf,
}

impl Store {
    /// Opens (creating if needed) `path` for appending. A torn final line left
    /// by an interrupted writer is terminated so new records start cleanly.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        let path = path.as_ref();
        let mut file = OpenOptions::new()
            .read(true)
            .append(true)
            .create(true)
            .open(path)
            .map_err(|e| StoreError::io(path, e))?;
        let len = file.metadata().map_err(|e| StoreError::io(path, e))?.len();
        if len > 0 {
            let mut last = [0u8; 1];
            file.seek(SeekFrom::End(-1))
                .and_then(|_| file.read_exact(&mut last))
                .map_err(|e| StoreError::io(path, e))?;
            if last[0] != b'\n' {
                file.write_all(b"\n").map_err(|e| StoreError::io(path, e))?;
            }
        }
        Ok(Self {
            file,
            path: path.to_path_buf(),
        })
    }

    /// Truncates `path` and opens it for appending.
    pub fn create(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        let path = path.as_ref();
        File::create(path).map_err(|e| StoreError::io(path, e))?;
        Self::open(path)
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Writes one complete record line with a single write call.
    pub fn append(&mut self, er: &EnrichedReading) -> Result<(), StoreError> {
        self.file
            .write_all(er.to_store_line().as_bytes())
            .map_err(|e| StoreError::io(&self.path, e))
    }

    pub fn sync(&mut self) -> Result<(), StoreError> {
        self.file
            .sync_data()
            .map_err(|e| StoreError::io(&self.path, e))
    }
}

/// Appends one record and syncs it to disk.
pub fn append_reading(store: &mut Store, er: &EnrichedReading) -> Result<(), StoreError> {
    store.append(er)?;
    store.sync()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedLine {
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LoadedStore {
    pub records: Vec<EnrichedReading>,
    pub skipped: Vec<SkippedLine>,
}

/// Reads every record in append order. Malformed lines are skipped and
/// listed in [`LoadedStore::skipped`].
pub fn load_store(path: impl AsRef<Path>) -> Result<LoadedStore, StoreError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| StoreError::io(path, e))?;
    read_store(BufReader::new(file)).map_err(|e| StoreError::io(path, e))
}

pub fn read_store<R: BufRead>(mut reader: R) -> io::Result<LoadedStore> {
    let mut loaded = LoadedStore::default();
    let mut buf = Vec::new();
    let mut line_no = 0;
    loop {
        buf.clear();
        if reader.read_until(b'\n', &mut buf)? == 0 {
            break;
        }
        line_no += 1;
        let complete = buf.last() == Some(&b'\n');
        let text = String::from_utf8_lossy(&buf);
        let text = text.trim_end_matches(['\n', '\r']);
        if text.trim().is_empty() {
            continue;
        }
        if !complete {
            loaded.skipped.push(SkippedLine {
                line: line_no,
                reason: "truncated final line".into(),
            });
            continue;
        }
        match EnrichedReading::from_store_line(text) {
            Ok(rec) => loaded.records.push(rec),
            Err(reason) => loaded.skipped.push(SkippedLine {
                line: line_no,
                reason,
            }),
        }
    }
    for s in &loaded.skipped {
        tracing::warn!(line = s.line, "skipped store record: {}", s.reason);
    }
    Ok(loaded)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestStats {
    pub accepted: usize,
    pub rejected: usize,
    pub rejects_by_variant: BTreeMap<DecodeErrorKind, usize>,
}

impl IngestStats {
    pub fn total(&self) -> usize {
        self.accepted + self.rejected
    }

    pub fn merge(&mut self, other: &IngestStats) {
        self.accepted += other.accepted;
        self.rejected += other.rejected;
        for (kind, n) in &other.rejects_by_variant {
            *self.rejects_by_variant.entry(*kind).or_default() += n;
        }
    }

    fn record_reject(&mut self, kind: DecodeErrorKind) {
        self.rejected += 1;
        *self.rejects_by_variant.entry(kind).or_default() += 1;
    }
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("site registry is empty; nothing to assign readings to")]
    EmptyRegistry,
    #[error("reading input at line {line}: {source}")]
    Source {
        line: usize,
        #[source]
        source: io::Error,
        stats: IngestStats,
    },
    #[error("writing store: {source}")]
    Store {
        #[source]
        source: StoreError,
        stats: IngestStats,
    },
}

impl IngestError {
    /// Counts up to the failure.
    pub fn partial_stats(&self) -> Option<&IngestStats> {
        match self {
            IngestError::EmptyRegistry => None,
            IngestError::Source { stats, .. } | IngestError::Store { stats, .. } => Some(stats),
        }
    }
}

/// Outcome of feeding one line to a session.
#[derive(Debug, Clone, PartialEq)]
pub enum LineOutcome {
    Blank,
    Accepted(EnrichedReading),
    Rejected(DecodeError),
}

/// Shared state of one ingest run: the registry, the store writer and the
/// running counts. Lines from any number of sources go through
/// [`IngestSession::ingest_line`]; callers serialize access.
#[derive(Debug)]
pub struct IngestSession {
    registry: SiteRegistry,
    store: Store,
    tz_offset_minutes: i32,
    stats: IngestStats,
}

impl IngestSession {
    pub fn new(registry: SiteRegistry, store: Store, tz_offset_minutes: i32) -> Result<Self, IngestError> {
        if registry.is_empty() {
            return Err(IngestError::EmptyRegistry);
        }
        Ok(Self {
            registry,
            store,
            tz_offset_minutes,
            stats: IngestStats::default(),
        })
    }

    pub fn registry(&self) -> &SiteRegistry {
        &self.registry
    }

    pub fn stats(&self) -> &IngestStats {
        &self.stats
    }

    pub fn tz_offset_minutes(&self) -> i32 {
        self.tz_offset_minutes
    }

    /// Decodes, enriches and appends one line. `line_no` is only used for
    /// diagnostics.
    pub fn ingest_line(&mut self, line_no: usize, line: &[u8]) -> Result<LineOutcome, StoreError> {
        if line.iter().all(u8::is_ascii_whitespace) {
            return Ok(LineOutcome::Blank);
        }
        match decode_frame(line) {
            Ok(reading) => {
                let er = EnrichedReading::enrich(reading, &self.registry, self.tz_offset_minutes);
                self.store.append(&er)?;
                self.stats.accepted += 1;
                Ok(LineOutcome::Accepted(er))
            }
            Err(err) => {
                let err = err.at_line(line_no);
                tracing::warn!("rejected frame: {err}");
                self.stats.record_reject(err.kind);
                Ok(LineOutcome::Rejected(err))
            }
        }
    }

    pub fn sync(&mut self) -> Result<(), StoreError> {
        self.store.sync()
    }

    pub fn into_stats(self) -> IngestStats {
        self.stats
    }
}

/// Ingests every line of `source` into a session, in input order.
pub fn ingest_lines<R: BufRead>(mut source: R, session: &mut IngestSession) -> Result<IngestStats, IngestError> {
    let before = session.stats().clone();
    let delta = |s: &IngestSession| {
        let mut d = s.stats().clone();
        d.accepted -= before.accepted;
        d.rejected -= before.rejected;
        for (k, n) in &before.rejects_by_variant {
            *d.rejects_by_variant.get_mut(k).expect("counts only grow") -= n;
        }
        d.rejects_by_variant.retain(|_, n| *n > 0);
        d
    };

    let mut buf = Vec::new();
    let mut line_no = 0;
    loop {
        buf.clear();
        match source.read_until(b'\n', &mut buf) {
            Ok(0) => break,
            Ok(_) => {}
            Err(source) => {
                return Err(IngestError::Source {
                    line: line_no + 1,
                    source,
                    stats: delta(session),
                })
            }
        }
        line_no += 1;
        if let Err(source) = session.ingest_line(line_no, &buf) {
            return Err(IngestError::Store {
                source,
                stats: delta(session),
            });
        }
    }
    Ok(delta(session))
}

/// Decodes every line of `source`, appends the accepted readings to `store`
/// and returns the counts. Blank lines are ignored.
pub fn ingest_stream<R: BufRead>(
    source: R,
    reg: &SiteRegistry,
    store: Store,
    tz_offset_minutes: i32,
) -> Result<IngestStats, IngestError> {
    let mut session = IngestSession::new(reg.clone(), store, tz_offset_minutes)?;
    let stats = ingest_lines(source, &mut session)?;
    session.sync().map_err(|source| IngestError::Store {
        source,
        stats: stats.clone(),
    })?;
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::encode_frame;

    fn reading(ts: i64, ppm: f64) -> Reading {
        Reading::new("DEV05", ts, -6.329349, 107.296362, ppm).unwrap()
    }

    fn enriched(ts: i64, ppm: f64) -> EnrichedReading {
        EnrichedReading::enrich(reading(ts, ppm), &SiteRegistry::bundled(), 420)
    }

    #[test]
    fn store_line_layout() {
        let er = enriched(1_583_031_600, 24.038);
        assert_eq!(
            er.to_store_line(),
            "{\"device_id\":\"DEV05\",\"ts\":1583031600,\"lat\":-6.329349,\"lng\":107.296362,\
             \"ppm\":24.038,\"band\":\"Safe\",\"site_id\":\"SITE-MCD\",\"bucket\":\"Morning\"}\n"
        );
        let far = EnrichedReading::enrich(
            Reading::new("X", 0, 10.0, 10.0, 1.0).unwrap(),
            &SiteRegistry::bundled(),
            420,
        );
        assert!(far.to_store_line().contains("\"site_id\":null"));
    }

    #[test]
    fn append_then_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("store.jsonl");
        let mut store = Store::open(&path).unwrap();
        let a = enriched(1_583_031_600, 24.038);
        let b = enriched(1_583_031_700, 89.79);
        append_reading(&mut store, &a).unwrap();
        assert_eq!(load_store(&path).unwrap().records, vec![a.clone()]);
        append_reading(&mut store, &b).unwrap();
        let loaded = load_store(&path).unwrap();
        assert_eq!(loaded.records, vec![a, b]);
        assert!(loaded.skipped.is_empty());
    }

    #[test]
    fn load_missing_and_empty() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_store(dir.path().join("nope.jsonl")),
            Err(StoreError::NotFound { .. })
        ));
        let empty = dir.path().join("empty.jsonl");
        File::create(&empty).unwrap();
        assert_eq!(load_store(&empty).unwrap(), LoadedStore::default());
    }

    #[test]
    fn truncated_tail_is_skipped_and_repaired() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("store.jsonl");
        let mut store = Store::open(&path).unwrap();
        for i in 0..3 {
            store.append(&enriched(1_583_031_600 + i, 30.0)).unwrap();
        }
        drop(store);
        let full = std::fs::read_to_string(&path).unwrap();
        std::fs::write(&path, &full[..full.len() - 20]).unwrap();

        let loaded = load_store(&path).unwrap();
        assert_eq!(loaded.records.len(), 2);
        assert_eq!(loaded.skipped.len(), 1);
        assert_eq!(loaded.skipped[0].line, 3);

        // Reopening terminates the torn line so the next record is intact.
        let mut store = Store::open(&path).unwrap();
        append_reading(&mut store, &enriched(1_583_040_000, 41.0)).unwrap();
        let loaded = load_store(&path).unwrap();
        assert_eq!(loaded.records.len(), 3);
        assert_eq!(loaded.skipped.len(), 1);
        assert_eq!(loaded.records[2].reading.ppm(), 41.0);
    }

    #[test]
    fn stale_band_is_rejected_on_load() {
        let line = enriched(1_583_031_600, 24.038)
            .to_store_line()
            .replace("\"Safe\"", "\"Danger30\"");
        let loaded = read_store(line.as_bytes()).unwrap();
        assert!(loaded.records.is_empty());
        assert!(loaded.skipped[0].reason.contains("disagrees"));
    }

    #[test]
    fn ingest_counts_and_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("store.jsonl");
        let good1 = encode_frame(&reading(1_583_031_600, 24.038));
        let good2 = encode_frame(&reading(1_583_031_601, 46.7436));
        let input = format!("{good1}\n\ngarbage\n{}{good2}", good1.replace("*", "*0"));
        let stats = ingest_stream(input.as_bytes(), &SiteRegistry::bundled(), Store::create(&path).unwrap(), 420).unwrap();
        assert_eq!(stats.accepted, 2);
        assert_eq!(stats.rejected, 2);
        assert_eq!(stats.rejects_by_variant[&DecodeErrorKind::MissingPrefix], 1);
        assert_eq!(stats.rejects_by_variant[&DecodeErrorKind::BadChecksum], 1);
        let loaded = load_store(&path).unwrap();
        let ppms: Vec<f64> = loaded.records.iter().map(|r| r.reading.ppm()).collect();
        assert_eq!(ppms, vec![24.038, 46.7436]);
        assert_eq!(loaded.records[0].site_id.as_deref(), Some("SITE-MCD"));
    }

    #[test]
    fn ingest_empty_input() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::create(dir.path().join("s.jsonl")).unwrap();
        let stats = ingest_stream(&b""[..], &SiteRegistry::bundled(), store, 420).unwrap();
        assert_eq!(stats, IngestStats::default());
    }

    #[test]
    fn ingest_needs_sites() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::create(dir.path().join("s.jsonl")).unwrap();
        let empty = SiteRegistry::new(vec![]).unwrap();
        assert!(matches!(
            ingest_stream(&b""[..], &empty, store, 420),
            Err(IngestError::EmptyRegistry)
        ));
    }

    struct FailingReader;

    impl Read for FailingReader {
        fn read(&mut self, _: &mut [u8]) -> io::Result<usize> {
            Err(io::Error::other("boom"))
        }
    }

    #[test]
    fn unreadable_source_reports_partial_stats() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::create(dir.path().join("s.jsonl")).unwrap();
        let good = encode_frame(&reading(1_583_031_600, 24.038));
        let source = BufReader::new(good.as_bytes().chain(FailingReader));
        let err = ingest_stream(source, &SiteRegistry::bundled(), store, 420).unwrap_err();
        assert_eq!(err.partial_stats().unwrap().accepted, 1);
        assert!(matches!(err, IngestError::Source { line: 2, .. }));
    }
}
