//! On-disk formats: embedding streams (`.demb`), classifiers (`.dcls`),
//! session checkpoints (`.ckpt`) and JSON-lines run reports.
//!
//! All integers and floats are little-endian; vectors are stored as 32-bit
//! IEEE-754 floats and widened to 64 bits on ingestion.
//!
//! ```text
//! .demb  "DEMB" | version u32 (=1) | dim u32 | count u64 | flags u32
//!        count × { id_len u16 | id | dim × f32 | [label i32] | [uri_len u16 | uri] }
//!        flags: bit0 has_labels, bit1 has_asset_uris; label −1 = absent
//! .dcls  "DCLS" | version u32 (=1) | K u32 | dim u32 | temperature f32
//!        K × { name_len u16 | name | dim × f32 }
//! .ckpt  "DCKP" | version u32 (=1) | payload_len u64 | sha256(payload) [32] | payload (JSON)
//! ```

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{DotaError, Result};
use crate::eval::{RunReport, Summary, Timing};
use crate::model::{AdaptConfig, ClassifierSpec, EmbeddingRecord};
use crate::session::{PredictionRecord, SessionState, SkippedSample};

pub const STREAM_MAGIC: &[u8; 4] = b"DEMB";
pub const CLASSIFIER_MAGIC: &[u8; 4] = b"DCLS";
pub const CHECKPOINT_MAGIC: &[u8; 4] = b"DCKP";
pub const FORMAT_VERSION: u32 = 1;

const FLAG_LABELS: u32 = 1;
const FLAG_URIS: u32 = 1 << 1;

/// A stream record exactly as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRecord {
    pub id: String,
    pub values: Vec<f32>,
    pub label: Option<u32>,
    pub asset_uri: Option<String>,
}

impl RawRecord {
    /// Widens and normalizes into an [`EmbeddingRecord`].
    pub fn ingest(&self) -> Result<EmbeddingRecord> {
        let raw: Vec<f64> = self.values.iter().map(|&v| f64::from(v)).collect();
        EmbeddingRecord::new(self.id.clone(), &raw, self.label.map(|l| l as usize), self.asset_uri.clone())
            .map_err(|e| DotaError::Ingestion(format!("record {:?}: {e}", self.id)))
    }
}

/// A classifier exactly as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct RawClassifier {
    pub class_names: Vec<String>,
    pub weights: Vec<Vec<f32>>,
    pub temperature: f32,
}

impl RawClassifier {
    pub fn from_spec(spec: &ClassifierSpec) -> Self {
        Self {
            class_names: spec.class_names().to_vec(),
            weights: spec.weights().iter().map(|w| w.iter().map(|&v| v as f32).collect()).collect(),
            temperature: spec.temperature() as f32,
        }
    }

    pub fn to_spec(&self) -> Result<ClassifierSpec> {
        ClassifierSpec::new(
            self.class_names.clone(),
            self.weights.iter().map(|w| w.iter().map(|&v| f64::from(v)).collect()).collect(),
            f64::from(self.temperature),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamHeader {
    pub dim: u32,
    pub count: u64,
    pub has_labels: bool,
    pub has_asset_uris: bool,
}

/// Byte-offset-tracking reader producing format errors on short reads.
struct OffsetReader<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> OffsetReader<R> {
    fn fail<T>(&self, message: impl Into<String>) -> Result<T> {
        Err(DotaError::Format { offset: self.offset, message: message.into() })
    }

    fn bytes<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.fill(&mut buf, what)?;
        Ok(buf)
    }

    fn fill(&mut self, buf: &mut [u8], what: &str) -> Result<()> {
        let mut read = 0;
        while read < buf.len() {
            match self.inner.read(&mut buf[read..]) {
                Ok(0) => {
                    self.offset += read as u64;
                    return self.fail(format!("truncated input while reading {what}"));
                }
                Ok(n) => read += n,
                Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
                Err(e) => return Err(e.into()),
            }
        }
        self.offset += buf.len() as u64;
        Ok(())
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.bytes(what)?))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(what)?))
    }

    fn i32(&mut self, what: &str) -> Result<i32> {
        Ok(i32::from_le_bytes(self.bytes(what)?))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes(what)?))
    }

    fn f32(&mut self, what: &str) -> Result<f32> {
        Ok(f32::from_le_bytes(self.bytes(what)?))
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let len = self.u16(what)? as usize;
        let start = self.offset;
        let mut buf = vec![0u8; len];
        self.fill(&mut buf, what)?;
        String::from_utf8(buf)
            .map_err(|_| DotaError::Format { offset: start, message: format!("{what} is not valid UTF-8") })
    }

    fn floats(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let at = self.offset;
            let v = self.f32(what)?;
            if !v.is_finite() {
                return Err(DotaError::Format { offset: at, message: format!("non-finite value in {what}") });
            }
            out.push(v);
        }
        Ok(out)
    }

    fn magic(&mut self, expected: &[u8; 4]) -> Result<()> {
        let at = self.offset;
        let got: [u8; 4] = self.bytes("magic")?;
        if &got != expected {
            return Err(DotaError::Format {
                offset: at,
                message: format!(
                    "bad magic {:?}, expected {:?}",
                    String::from_utf8_lossy(&got),
                    String::from_utf8_lossy(expected)
                ),
            });
        }
        let at = self.offset;
        let version = self.u32("version")?;
        if version != FORMAT_VERSION {
            return Err(DotaError::Format { offset: at, message: format!("unsupported version {version}") });
        }
        Ok(())
    }
}

fn write_str<W: Write>(w: &mut W, s: &str, what: &str) -> Result<()> {
    let len = u16::try_from(s.len())
        .map_err(|_| DotaError::Ingestion(format!("{what} longer than {} bytes", u16::MAX)))?;
    w.write_all(&len.to_le_bytes())?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn write_floats<W: Write>(w: &mut W, values: &[f32]) -> Result<()> {
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Writes a complete stream. Flags are set when any record carries a label or URI.
pub fn write_stream<W: Write>(w: &mut W, dim: u32, records: &[RawRecord]) -> Result<()> {
    let has_labels = records.iter().any(|r| r.label.is_some());
    let has_uris = records.iter().any(|r| r.asset_uri.is_some());
    let flags = if has_labels { FLAG_LABELS } else { 0 } | if has_uris { FLAG_URIS } else { 0 };
    w.write_all(STREAM_MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&dim.to_le_bytes())?;
    w.write_all(&(records.len() as u64).to_le_bytes())?;
    w.write_all(&flags.to_le_bytes())?;
    for r in records {
        if r.values.len() != dim as usize {
            return Err(DotaError::Dimension { expected: dim as usize, got: r.values.len() });
        }
        if r.values.iter().any(|v| !v.is_finite()) {
            return Err(DotaError::Ingestion(format!("record {:?} has non-finite values", r.id)));
        }
        write_str(w, &r.id, "record id")?;
        write_floats(w, &r.values)?;
        if has_labels {
            let label = match r.label {
                Some(l) => i32::try_from(l).map_err(|_| DotaError::Ingestion(format!("label {l} too large")))?,
                None => -1,
            };
            w.write_all(&label.to_le_bytes())?;
        }
        if has_uris {
            write_str(w, r.asset_uri.as_deref().unwrap_or(""), "asset uri")?;
        }
    }
    Ok(())
}

pub fn write_stream_file(path: impl AsRef<Path>, dim: u32, records: &[RawRecord]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_stream(&mut w, dim, records)?;
    w.flush()?;
    Ok(())
}

/// Incremental `.demb` reader; memory use is independent of the record count.
pub struct StreamReader<R> {
    reader: OffsetReader<R>,
    header: StreamHeader,
    remaining: u64,
    done: bool,
}

impl<R: Read> StreamReader<R> {
    pub fn new(inner: R) -> Result<Self> {
        let mut reader = OffsetReader { inner, offset: 0 };
        reader.magic(STREAM_MAGIC)?;
        let dim = reader.u32("dim")?;
        if dim == 0 {
            return reader.fail("dim must be positive");
        }
        let count = reader.u64("count")?;
        let at = reader.offset;
        let flags = reader.u32("flags")?;
        if flags & !(FLAG_LABELS | FLAG_URIS) != 0 {
            return Err(DotaError::Format { offset: at, message: format!("unknown flag bits {flags:#x}") });
        }
        let header = StreamHeader {
            dim,
            count,
            has_labels: flags & FLAG_LABELS != 0,
            has_asset_uris: flags & FLAG_URIS != 0,
        };
        Ok(Self { reader, header, remaining: count, done: false })
    }

    pub fn header(&self) -> StreamHeader {
        self.header
    }

    fn next_record(&mut self) -> Result<RawRecord> {
        let r = &mut self.reader;
        let id = r.string("record id")?;
        let values = r.floats(self.header.dim as usize, "embedding")?;
        let label = if self.header.has_labels {
            let at = r.offset;
            match r.i32("label")? {
                -1 => None,
                l if l >= 0 => Some(l as u32),
                l => return Err(DotaError::Format { offset: at, message: format!("invalid label {l}") }),
            }
        } else {
            None
        };
        let asset_uri = if self.header.has_asset_uris {
            Some(r.string("asset uri")?).filter(|s| !s.is_empty())
        } else {
            None
        };
        Ok(RawRecord { id, values, label, asset_uri })
    }

    fn check_trailing(&mut self) -> Result<()> {
        let mut probe = [0u8; 1];
        loop {
            match self.reader.inner.read(&mut probe) {
                Ok(0) => return Ok(()),
                Ok(_) => {
                    return self.reader.fail(format!(
                        "trailing data after the {} declared records",
                        self.header.count
                    ))
                }
                Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
                Err(e) => return Err(e.into()),
            }
        }
    }
}

impl<R: Read> Iterator for StreamReader<R> {
    type Item = Result<RawRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        if self.remaining == 0 {
            self.done = true;
            return self.check_trailing().err().map(Err);
        }
        let item = self.next_record();
        if item.is_err() {
            self.done = true;
        } else {
            self.remaining -= 1;
        }
        Some(item)
    }
}

pub fn open_stream(path: impl AsRef<Path>) -> Result<StreamReader<BufReader<File>>> {
    StreamReader::new(BufReader::new(File::open(path)?))
}

/// Opens a stream and yields ingested (normalized) records.
pub fn read_stream(path: impl AsRef<Path>) -> Result<impl Iterator<Item = Result<EmbeddingRecord>>> {
    Ok(open_stream(path)?.map(|r| r.and_then(|raw| raw.ingest())))
}

/// Opens a stream after checking its dimension against `spec`.
pub fn read_stream_for(
    path: impl AsRef<Path>,
    spec: &ClassifierSpec,
) -> Result<impl Iterator<Item = Result<EmbeddingRecord>>> {
    let reader = open_stream(path)?;
    if reader.header().dim as usize != spec.dim() {
        return Err(DotaError::Compatibility(format!(
            "stream dimension {} does not match classifier dimension {}",
            reader.header().dim,
            spec.dim()
        )));
    }
    Ok(reader.map(|r| r.and_then(|raw| raw.ingest())))
}

pub fn read_all_records(path: impl AsRef<Path>, spec: &ClassifierSpec) -> Result<Vec<EmbeddingRecord>> {
    read_stream_for(path, spec)?.collect()
}

pub fn write_classifier<W: Write>(w: &mut W, c: &RawClassifier) -> Result<()> {
    let k = c.class_names.len();
    if k == 0 || k != c.weights.len() {
        return Err(DotaError::Ingestion("classifier needs matching, nonempty names and weights".into()));
    }
    let dim = c.weights[0].len();
    w.write_all(CLASSIFIER_MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(k as u32).to_le_bytes())?;
    w.write_all(&(dim as u32).to_le_bytes())?;
    w.write_all(&c.temperature.to_le_bytes())?;
    for (name, weights) in c.class_names.iter().zip(&c.weights) {
        if weights.len() != dim {
            return Err(DotaError::Dimension { expected: dim, got: weights.len() });
        }
        write_str(w, name, "class name")?;
        write_floats(w, weights)?;
    }
    Ok(())
}

pub fn write_classifier_file(path: impl AsRef<Path>, c: &RawClassifier) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_classifier(&mut w, c)?;
    w.flush()?;
    Ok(())
}

pub fn parse_classifier<R: Read>(inner: R) -> Result<RawClassifier> {
    let mut r = OffsetReader { inner, offset: 0 };
    r.magic(CLASSIFIER_MAGIC)?;
    let k = r.u32("class count")? as usize;
    let dim = r.u32("dim")? as usize;
    if k == 0 || dim == 0 {
        return r.fail(format!("K and dim must be positive, got K={k}, dim={dim}"));
    }
    let at = r.offset;
    let temperature = r.f32("temperature")?;
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(DotaError::Format { offset: at, message: format!("temperature must be > 0, got {temperature}") });
    }
    let mut class_names = Vec::with_capacity(k);
    let mut weights = Vec::with_capacity(k);
    for _ in 0..k {
        class_names.push(r.string("class name")?);
        weights.push(r.floats(dim, "class weights")?);
    }
    let mut probe = [0u8; 1];
    if r.inner.read(&mut probe)? != 0 {
        return r.fail("trailing data after the declared classes");
    }
    Ok(RawClassifier { class_names, weights, temperature })
}

pub fn read_classifier(path: impl AsRef<Path>) -> Result<ClassifierSpec> {
    parse_classifier(BufReader::new(File::open(path)?))?.to_spec()
}

pub fn write_checkpoint<W: Write>(w: &mut W, state: &SessionState) -> Result<()> {
    let payload = serde_json::to_vec(state)?;
    let digest = Sha256::digest(&payload);
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(payload.len() as u64).to_le_bytes())?;
    w.write_all(&digest)?;
    w.write_all(&payload)?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(inner: R) -> Result<SessionState> {
    let mut r = OffsetReader { inner, offset: 0 };
    r.magic(CHECKPOINT_MAGIC)?;
    let len = r.u64("payload length")?;
    let expected: [u8; 32] = r.bytes("checksum")?;
    let mut payload = Vec::new();
    (&mut r.inner).take(len).read_to_end(&mut payload)?;
    if (payload.len() as u64) < len {
        r.offset += payload.len() as u64;
        return r.fail(format!("truncated checkpoint payload ({} of {len} bytes)", payload.len()));
    }
    if Sha256::digest(&payload).as_slice() != expected {
        return Err(DotaError::Corruption("payload checksum mismatch".into()));
    }
    Ok(serde_json::from_slice(&payload)?)
}

pub fn write_checkpoint_file(path: impl AsRef<Path>, state: &SessionState) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(&mut w, state)?;
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint_file(path: impl AsRef<Path>) -> Result<SessionState> {
    read_checkpoint(BufReader::new(File::open(path)?))
}

/// Final line of a report file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFooter {
    pub summary: Summary,
    pub timing: Timing,
    pub skipped: Vec<SkippedSample>,
    pub config: AdaptConfig,
}

/// One JSON object per sample, then a footer with the summary.
pub fn write_report<W: Write>(w: &mut W, report: &RunReport) -> Result<()> {
    for r in &report.log {
        serde_json::to_writer(&mut *w, r)?;
        w.write_all(b"\n")?;
    }
    let footer = ReportFooter {
        summary: report.summary.clone(),
        timing: report.timing,
        skipped: report.skipped.clone(),
        config: report.config.clone(),
    };
    serde_json::to_writer(&mut *w, &footer)?;
    w.write_all(b"\n")?;
    Ok(())
}

pub fn write_report_file(path: impl AsRef<Path>, report: &RunReport) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_report(&mut w, report)?;
    w.flush()?;
    Ok(())
}

pub fn read_report<R: BufRead>(reader: R) -> Result<(Vec<PredictionRecord>, ReportFooter)> {
    let mut lines: Vec<String> = reader.lines().collect::<std::io::Result<_>>()?;
    while lines.last().is_some_and(|l| l.trim().is_empty()) {
        lines.pop();
    }
    let footer_line = lines.pop().ok_or(DotaError::Empty("report file"))?;
    let footer = serde_json::from_str(&footer_line)?;
    let log = lines.iter().map(|l| serde_json::from_str(l)).collect::<std::result::Result<_, _>>()?;
    Ok((log, footer))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample_records() -> Vec<RawRecord> {
        vec![
            RawRecord { id: "a".into(), values: vec![1.0, 0.0, 0.5], label: Some(2), asset_uri: Some("x.png".into()) },
            RawRecord { id: "b".into(), values: vec![0.0, 1.0, 0.5], label: None, asset_uri: None },
            RawRecord { id: "ç".into(), values: vec![-1.0, 0.25, 3.0], label: Some(0), asset_uri: Some("y".into()) },
        ]
    }

    fn encode(records: &[RawRecord]) -> Vec<u8> {
        let mut buf = Vec::new();
        write_stream(&mut buf, 3, records).unwrap();
        buf
    }

    #[test]
    fn three_record_round_trip() {
        let recs = sample_records();
        let buf = encode(&recs);
        let reader = StreamReader::new(&buf[..]).unwrap();
        let h = reader.header();
        assert_eq!((h.dim, h.count, h.has_labels, h.has_asset_uris), (3, 3, true, true));
        let back: Vec<RawRecord> = reader.collect::<Result<_>>().unwrap();
        assert_eq!(back, recs);
    }

    #[test]
    fn header_layout_is_bit_exact() {
        let buf = encode(&sample_records()[1..2]);
        assert_eq!(&buf[0..4], b"DEMB");
        assert_eq!(&buf[4..8], &1u32.to_le_bytes());
        assert_eq!(&buf[8..12], &3u32.to_le_bytes());
        assert_eq!(&buf[12..20], &1u64.to_le_bytes());
        assert_eq!(&buf[20..24], &0u32.to_le_bytes());
        assert_eq!(&buf[24..26], &1u16.to_le_bytes());
        assert_eq!(&buf[26..27], b"b");
        assert_eq!(&buf[27..31], &0f32.to_le_bytes());
        assert_eq!(buf.len(), 24 + 2 + 1 + 12);
    }

    #[test]
    fn truncated_body_names_offset() {
        let buf = encode(&sample_records());
        let cut = &buf[..buf.len() - 3];
        let err = StreamReader::new(cut).unwrap().collect::<Result<Vec<_>>>().unwrap_err();
        match err {
            DotaError::Format { offset, message } => {
                assert!(message.contains("truncated"), "{message}");
                assert!(offset > 24 && offset <= cut.len() as u64, "offset {offset}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_magic_and_version() {
        let mut buf = encode(&sample_records());
        buf[0] = b'X';
        assert!(matches!(StreamReader::new(&buf[..]), Err(DotaError::Format { offset: 0, .. })));
        let mut buf = encode(&sample_records());
        buf[4] = 2;
        assert!(matches!(StreamReader::new(&buf[..]), Err(DotaError::Format { offset: 4, .. })));
    }

    #[test]
    fn trailing_bytes_and_short_count_are_errors() {
        let mut buf = encode(&sample_records());
        buf.push(0);
        assert!(StreamReader::new(&buf[..]).unwrap().collect::<Result<Vec<_>>>().is_err());
        let mut buf = encode(&sample_records());
        buf[12..20].copy_from_slice(&4u64.to_le_bytes());
        assert!(StreamReader::new(&buf[..]).unwrap().collect::<Result<Vec<_>>>().is_err());
    }

    #[test]
    fn non_finite_values_rejected() {
        let mut buf = encode(&sample_records());
        // first float of record "a": header 24 + id_len 2 + id 1
        buf[27..31].copy_from_slice(&f32::NAN.to_le_bytes());
        let err = StreamReader::new(&buf[..]).unwrap().next().unwrap().unwrap_err();
        assert!(matches!(err, DotaError::Format { offset: 27, .. }));
    }

    #[test]
    fn classifier_round_trip_and_validation() {
        let c = RawClassifier {
            class_names: vec!["cat".into(), "dog".into()],
            weights: vec![vec![1.0, 0.0], vec![0.6, 0.8]],
            temperature: 0.01,
        };
        let mut buf = Vec::new();
        write_classifier(&mut buf, &c).unwrap();
        assert_eq!(&buf[0..4], b"DCLS");
        let back = parse_classifier(&buf[..]).unwrap();
        assert_eq!(back, c);
        let spec = back.to_spec().unwrap();
        assert_eq!(spec.num_classes(), 2);
        assert!((spec.temperature() - 0.01).abs() < 1e-9);

        let dup = RawClassifier { class_names: vec!["cat".into(), "cat".into()], ..c.clone() };
        let mut buf = Vec::new();
        write_classifier(&mut buf, &dup).unwrap();
        assert!(parse_classifier(&buf[..]).unwrap().to_spec().is_err());

        let mut buf = Vec::new();
        write_classifier(&mut buf, &c).unwrap();
        buf[16..20].copy_from_slice(&(-1.0f32).to_le_bytes());
        assert!(matches!(parse_classifier(&buf[..]), Err(DotaError::Format { offset: 16, .. })));
    }

    #[test]
    fn ingestion_normalizes() {
        let rec = RawRecord { id: "z".into(), values: vec![3.0, 4.0], label: Some(1), asset_uri: None };
        let e = rec.ingest().unwrap();
        assert!((e.embedding[0] - 0.6).abs() < 1e-15);
        let zero = RawRecord { id: "z".into(), values: vec![0.0, 0.0], label: None, asset_uri: None };
        assert!(zero.ingest().is_err());
    }

    fn raw_record() -> impl Strategy<Value = RawRecord> {
        (
            "[a-z0-9]{1,12}",
            proptest::collection::vec(-10f32..10.0, 4),
            proptest::option::of(0u32..50),
            proptest::option::of("[a-z/.]{1,20}"),
        )
            .prop_map(|(id, values, label, asset_uri)| RawRecord { id, values, label, asset_uri })
    }

    proptest! {
        #[test]
        fn stream_round_trip(records in proptest::collection::vec(raw_record(), 0..20)) {
            let mut buf = Vec::new();
            write_stream(&mut buf, 4, &records).unwrap();
            let back: Vec<RawRecord> = StreamReader::new(&buf[..]).unwrap().collect::<Result<_>>().unwrap();
            prop_assert_eq!(back, records);
        }

        #[test]
        fn classifier_round_trip(
            names in proptest::collection::hash_set("[a-z]{1,8}", 2..6),
            tau in 0.001f32..5.0,
        ) {
            let names: Vec<String> = names.into_iter().collect();
            let weights = (0..names.len()).map(|i| vec![i as f32 + 1.0, -0.5, 0.25]).collect();
            let c = RawClassifier { class_names: names, weights, temperature: tau };
            let mut buf = Vec::new();
            write_classifier(&mut buf, &c).unwrap();
            prop_assert_eq!(parse_classifier(&buf[..]).unwrap(), c);
        }
    }
}
