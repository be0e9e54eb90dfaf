//! Corpus files: one JSON [`SampleRecord`] per line, with a
//! `<file>.manifest.json` sidecar holding the schema version, record count
//! and SHA-256 of the file bytes.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::geometry::{RecordError, SampleRecord};

pub const CORPUS_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub schema_version: u32,
    pub count: usize,
    /// Hex SHA-256 of the corpus file bytes.
    pub sha256: String,
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("line {line}: {source}")]
    Parse { line: usize, source: serde_json::Error },
    #[error("line {line}: {source}")]
    Invalid { line: usize, source: RecordError },
    #[error("line {line}: duplicate id {id}")]
    DuplicateId { line: usize, id: String },
    #[error("unsupported corpus schema version {found} (supported: {supported})")]
    SchemaVersion { found: u32, supported: u32 },
    #[error("{path}: malformed manifest: {source}")]
    Manifest { path: PathBuf, source: serde_json::Error },
    #[error("manifest lists {expected} records, file has {found}")]
    Count { expected: usize, found: usize },
    #[error("manifest digest {expected} does not match file digest {found}")]
    Digest { expected: String, found: String },
}

pub fn manifest_path(corpus: &Path) -> PathBuf {
    let mut name = corpus.as_os_str().to_owned();
    name.push(".manifest.json");
    PathBuf::from(name)
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io { path: path.to_path_buf(), source }
}

struct HashingWriter<W> {
    inner: W,
    hasher: Sha256,
}

impl<W: Write> Write for HashingWriter<W> {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        let n = self.inner.write(buf)?;
        self.hasher.update(&buf[..n]);
        Ok(n)
    }

    fn flush(&mut self) -> std::io::Result<()> {
        self.inner.flush()
    }
}

/// Streams records to `w` and returns their manifest. Records must have
/// unique ids.
pub fn write_records<'a, W: Write>(
    w: W,
    records: impl IntoIterator<Item = &'a SampleRecord>,
) -> Result<CorpusManifest, CorpusError> {
    let mut w = HashingWriter { inner: w, hasher: Sha256::new() };
    let mut seen = HashSet::new();
    let mut count = 0;
    let sink = Path::new("<writer>");
    for r in records {
        count += 1;
        r.validate().map_err(|source| CorpusError::Invalid { line: count, source })?;
        if !seen.insert(r.id.clone()) {
            return Err(CorpusError::DuplicateId { line: count, id: r.id.clone() });
        }
        serde_json::to_writer(&mut w, r).map_err(|source| CorpusError::Parse { line: count, source })?;
        w.write_all(b"\n").map_err(io_err(sink))?;
    }
    w.flush().map_err(io_err(sink))?;
    Ok(CorpusManifest { schema_version: CORPUS_SCHEMA_VERSION, count, sha256: hex::encode(w.hasher.finalize()) })
}

/// Writes the corpus file and its manifest sidecar.
pub fn write_corpus<'a>(
    path: &Path,
    records: impl IntoIterator<Item = &'a SampleRecord>,
) -> Result<CorpusManifest, CorpusError> {
    let file = File::create(path).map_err(io_err(path))?;
    let manifest = write_records(BufWriter::new(file), records).map_err(|e| match e {
        CorpusError::Io { source, .. } => CorpusError::Io { path: path.to_path_buf(), source },
        e => e,
    })?;
    let mpath = manifest_path(path);
    super::write_json(&mpath, &manifest).map_err(io_err(&mpath))?;
    Ok(manifest)
}

pub fn read_manifest(path: &Path) -> Result<CorpusManifest, CorpusError> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    let m: CorpusManifest =
        serde_json::from_slice(&bytes).map_err(|source| CorpusError::Manifest { path: path.to_path_buf(), source })?;
    if m.schema_version != CORPUS_SCHEMA_VERSION {
        return Err(CorpusError::SchemaVersion { found: m.schema_version, supported: CORPUS_SCHEMA_VERSION });
    }
    Ok(m)
}

/// Streaming reader over corpus lines. Blank lines are skipped. When a
/// manifest is attached, the count and digest are checked after the last
/// record and a mismatch is yielded as a final error.
pub struct CorpusReader<R> {
    reader: R,
    line: usize,
    buf: String,
    seen: HashSet<String>,
    hasher: Sha256,
    count: usize,
    manifest: Option<CorpusManifest>,
    done: bool,
}

impl<R: BufRead> CorpusReader<R> {
    pub fn new(reader: R, manifest: Option<CorpusManifest>) -> Self {
        Self {
            reader,
            line: 0,
            buf: String::new(),
            seen: HashSet::new(),
            hasher: Sha256::new(),
            count: 0,
            manifest,
            done: false,
        }
    }

    fn finish(&mut self) -> Option<CorpusError> {
        let m = self.manifest.take()?;
        if m.count != self.count {
            return Some(CorpusError::Count { expected: m.count, found: self.count });
        }
        let found = hex::encode(std::mem::take(&mut self.hasher).finalize());
        (found != m.sha256).then_some(CorpusError::Digest { expected: m.sha256, found })
    }

    fn parse_line(&mut self) -> Result<SampleRecord, CorpusError> {
        let line = self.line;
        let record: SampleRecord =
            serde_json::from_str(self.buf.trim_end()).map_err(|source| CorpusError::Parse { line, source })?;
        record.validate().map_err(|source| CorpusError::Invalid { line, source })?;
        if !self.seen.insert(record.id.clone()) {
            return Err(CorpusError::DuplicateId { line, id: record.id });
        }
        Ok(record)
    }
}

impl<R: BufRead> Iterator for CorpusReader<R> {
    type Item = Result<SampleRecord, CorpusError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        loop {
            self.buf.clear();
            let n = match self.reader.read_line(&mut self.buf) {
                Ok(n) => n,
                Err(source) => {
                    self.done = true;
                    return Some(Err(CorpusError::Io { path: PathBuf::from("<reader>"), source }));
                }
            };
            if n == 0 {
                self.done = true;
                return self.finish().map(Err);
            }
            self.line += 1;
            self.hasher.update(self.buf.as_bytes());
            if self.buf.trim().is_empty() {
                continue;
            }
            self.count += 1;
            let r = self.parse_line();
            if r.is_err() {
                self.done = true;
            }
            return Some(r);
        }
    }
}

/// Opens a corpus file, checking the sidecar manifest when one exists.
pub fn read_corpus(path: &Path) -> Result<CorpusReader<BufReader<File>>, CorpusError> {
    let mpath = manifest_path(path);
    let manifest = if mpath.exists() { Some(read_manifest(&mpath)?) } else { None };
    let file = File::open(path).map_err(io_err(path))?;
    Ok(CorpusReader::new(BufReader::new(file), manifest))
}

pub fn load_corpus(path: &Path) -> Result<Vec<SampleRecord>, CorpusError> {
    read_corpus(path)?.collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{GroundedSpan, NormBox, OcrWord, PixelBox, Source};

    fn record(id: &str) -> SampleRecord {
        SampleRecord {
            id: id.into(),
            image_ref: format!("synthetic://{id}"),
            width: 640,
            height: 480,
            prompt: "A café sign reading \u{201c}Crème brûlée\u{201d}".into(),
            ocr_words: vec![
                OcrWord::new("Crème", PixelBox::new(10.0, 10.0, 90.5, 40.0).unwrap(), 0.93).unwrap(),
                OcrWord::new("brûlée", PixelBox::new(100.0, 10.0, 200.0, 40.0).unwrap(), 0.875).unwrap(),
            ],
            grounded_spans: vec![
                GroundedSpan::new("Crème brûlée", NormBox::new(8, 11, 160, 43).unwrap(), vec![0, 1]).unwrap()
            ],
            source: Source::Mined,
            topic_path: Some(vec!["food".into(), "bakery".into()]),
        }
    }

    #[test]
    fn round_trip_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        let mut plain = record("b");
        plain.topic_path = None;
        plain.source = Source::Public;
        let records = vec![record("a"), plain];
        let m = write_corpus(&path, &records).unwrap();
        assert_eq!(m.count, 2);
        assert_eq!(load_corpus(&path).unwrap(), records);
    }

    #[test]
    fn malformed_line_reports_its_number() {
        let text = format!("{}\n{{\"id\": \"x\", \"width\"\n", serde_json::to_string(&record("a")).unwrap());
        let items: Vec<_> = CorpusReader::new(text.as_bytes(), None).collect();
        assert!(items[0].is_ok());
        assert!(matches!(items[1], Err(CorpusError::Parse { line: 2, .. })));
        assert_eq!(items.len(), 2);
    }

    #[test]
    fn empty_file_with_empty_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.jsonl");
        write_corpus(&path, &[]).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), b"");
        assert!(load_corpus(&path).unwrap().is_empty());
    }

    #[test]
    fn version_mismatch_is_distinct() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        write_corpus(&path, &[record("a")]).unwrap();
        let mpath = manifest_path(&path);
        let mut m = read_manifest(&mpath).unwrap();
        m.schema_version = 99;
        std::fs::write(&mpath, serde_json::to_vec(&m).unwrap()).unwrap();
        assert!(matches!(read_corpus(&path), Err(CorpusError::SchemaVersion { found: 99, .. })));
    }

    #[test]
    fn tampering_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        write_corpus(&path, &[record("a")]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap().replace("640", "641");
        std::fs::write(&path, text).unwrap();
        assert!(matches!(load_corpus(&path), Err(CorpusError::Digest { .. })));
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let line = serde_json::to_string(&record("a")).unwrap();
        let text = format!("{line}\n\n{line}\n");
        let err = CorpusReader::new(text.as_bytes(), None).collect::<Result<Vec<_>, _>>().unwrap_err();
        assert!(matches!(err, CorpusError::DuplicateId { line: 3, .. }));
        assert!(write_records(Vec::new(), &[record("a"), record("a")]).is_err());
    }
}
