//! On-disk formats: FSEQ feature files, SAVB checkpoints, score CSVs.
//!
//! Byte layouts are documented in `docs/formats.md`. All integers and floats
//! are little-endian; parameters and features are stored as 32-bit floats.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use crate::avsync::{AlignmentScorer, FeatureSequence, Modality, ScorerSpec};
use crate::error::{Error, Result};
use crate::fusion::{Branch, FusedPrediction, Verdict};
use crate::masks::RegionTag;
use crate::nn::Param;
use crate::scalar::Real;
use crate::visual::{BranchModel, EncoderSpec, TrainingMeta};

pub const FSEQ_MAGIC: &[u8; 4] = b"FSEQ";
pub const FSEQ_VERSION: u16 = 1;
pub const FSEQ_HEADER_LEN: u64 = 19;
pub const SAVB_MAGIC: &[u8; 4] = b"SAVB";
pub const SAVB_VERSION: u16 = 1;
/// SAVB kind byte for an alignment scorer; visual branches use their region code.
pub const SAVB_KIND_SYNC: u8 = 3;
pub const HASH_PREFIX: &str = "# config_hash: ";

/// Reader that tracks its byte offset for error reporting.
struct Cursor<'a, R> {
    inner: R,
    offset: u64,
    path: &'a Path,
}

impl<'a, R: Read> Cursor<'a, R> {
    fn new(inner: R, path: &'a Path) -> Self {
        Cursor { inner, offset: 0, path }
    }

    fn fail(&self, msg: impl Into<String>) -> Error {
        Error::Format { path: self.path.to_path_buf(), offset: self.offset, msg: msg.into() }
    }

    fn bytes(&mut self, n: usize, what: &str) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        self.inner
            .read_exact(&mut buf)
            .map_err(|_| self.fail(format!("truncated while reading {what}")))?;
        self.offset += n as u64;
        Ok(buf)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        let v = self.inner.read_u8().map_err(|_| self.fail(format!("truncated while reading {what}")))?;
        self.offset += 1;
        Ok(v)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        let v = self
            .inner
            .read_u16::<LittleEndian>()
            .map_err(|_| self.fail(format!("truncated while reading {what}")))?;
        self.offset += 2;
        Ok(v)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let v = self
            .inner
            .read_u32::<LittleEndian>()
            .map_err(|_| self.fail(format!("truncated while reading {what}")))?;
        self.offset += 4;
        Ok(v)
    }

    fn f32(&mut self, what: &str) -> Result<f32> {
        let v = self
            .inner
            .read_f32::<LittleEndian>()
            .map_err(|_| self.fail(format!("truncated while reading {what}")))?;
        self.offset += 4;
        Ok(v)
    }

    fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let mut out = vec![0f32; n];
        self.inner
            .read_f32_into::<LittleEndian>(&mut out)
            .map_err(|_| self.fail(format!("truncated while reading {what}")))?;
        self.offset += 4 * n as u64;
        Ok(out)
    }

    fn expect_end(&mut self) -> Result<()> {
        let mut probe = [0u8; 1];
        match self.inner.read(&mut probe) {
            Ok(0) => Ok(()),
            _ => Err(self.fail("trailing bytes after payload")),
        }
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

fn io_at(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |e| Error::io(path, e)
}

/// Header of an FSEQ file.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FseqHeader {
    pub version: u16,
    pub modality: Modality,
    pub frames: u32,
    pub dim: u32,
    pub frame_rate: f32,
}

fn read_fseq_header<R: Read>(cur: &mut Cursor<'_, R>) -> Result<FseqHeader> {
    let magic = cur.bytes(4, "magic")?;
    if magic != FSEQ_MAGIC {
        cur.offset = 0;
        return Err(cur.fail(format!("expected magic \"FSEQ\", found {:02x?}", magic)));
    }
    let version = cur.u16("version")?;
    if version != FSEQ_VERSION {
        cur.offset -= 2;
        return Err(cur.fail(format!("unsupported FSEQ version {version}")));
    }
    let code = cur.u8("modality")?;
    let modality = Modality::from_code(code).ok_or_else(|| {
        cur.offset -= 1;
        cur.fail(format!("unknown modality code {code}"))
    })?;
    let frames = cur.u32("T")?;
    let dim = cur.u32("D")?;
    let frame_rate = cur.f32("frame_rate")?;
    if frames == 0 || dim == 0 {
        return Err(cur.fail("T and D must be positive"));
    }
    if !(frame_rate.is_finite() && frame_rate > 0.0) {
        return Err(cur.fail("frame_rate must be positive and finite"));
    }
    Ok(FseqHeader { version, modality, frames, dim, frame_rate })
}

/// Read and validate only the header (used by manifest ingestion).
pub fn read_fseq_header_file(path: &Path) -> Result<FseqHeader> {
    let mut cur = Cursor::new(open(path)?, path);
    read_fseq_header(&mut cur)
}

pub fn read_fseq<T: Real>(path: &Path) -> Result<FeatureSequence<T>> {
    let mut cur = Cursor::new(open(path)?, path);
    let h = read_fseq_header(&mut cur)?;
    let n = h.frames as usize * h.dim as usize;
    let raw = cur.f32s(n, "feature payload")?;
    if let Some(i) = raw.iter().position(|v| !v.is_finite()) {
        return Err(Error::Format {
            path: path.to_path_buf(),
            offset: FSEQ_HEADER_LEN + 4 * i as u64,
            msg: "non-finite feature value".into(),
        });
    }
    cur.expect_end()?;
    let values = raw.into_iter().map(|v| T::lit(v as f64)).collect();
    FeatureSequence::new(h.modality, h.frames as usize, h.dim as usize, values, h.frame_rate)
}

pub fn write_fseq<T: Real>(path: &Path, seq: &FeatureSequence<T>) -> Result<()> {
    let mut w = create(path)?;
    let err = io_at(path);
    w.write_all(FSEQ_MAGIC).map_err(&err)?;
    w.write_u16::<LittleEndian>(FSEQ_VERSION).map_err(&err)?;
    w.write_u8(seq.modality.code()).map_err(&err)?;
    w.write_u32::<LittleEndian>(seq.len() as u32).map_err(&err)?;
    w.write_u32::<LittleEndian>(seq.dim() as u32).map_err(&err)?;
    w.write_f32::<LittleEndian>(seq.frame_rate).map_err(&err)?;
    for v in seq.values() {
        w.write_f32::<LittleEndian>(v.to_f64_lossy() as f32).map_err(&err)?;
    }
    w.flush().map_err(&err)
}

/// Metadata stored with an alignment scorer checkpoint.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SyncMeta {
    pub config_hash: String,
}

/// A model read back from a SAVB file.
#[derive(Debug, Clone, PartialEq)]
pub enum Checkpoint<T> {
    Visual(BranchModel<T>),
    Sync(AlignmentScorer<T>),
}

impl<T> Checkpoint<T> {
    pub fn config_hash(&self) -> &str {
        match self {
            Checkpoint::Visual(m) => &m.meta.config_hash,
            Checkpoint::Sync(s) => &s.config_hash,
        }
    }
}

fn write_savb<T: Real>(
    path: &Path,
    kind: u8,
    spec_json: &[u8],
    config_hash: &str,
    meta_json: &[u8],
    params: &[Param<T>],
) -> Result<()> {
    if config_hash.len() > u8::MAX as usize {
        return Err(Error::Config("config hash too long".into()));
    }
    let mut w = create(path)?;
    let err = io_at(path);
    w.write_all(SAVB_MAGIC).map_err(&err)?;
    w.write_u16::<LittleEndian>(SAVB_VERSION).map_err(&err)?;
    w.write_u8(kind).map_err(&err)?;
    w.write_u8(config_hash.len() as u8).map_err(&err)?;
    w.write_all(config_hash.as_bytes()).map_err(&err)?;
    w.write_u32::<LittleEndian>(spec_json.len() as u32).map_err(&err)?;
    w.write_all(spec_json).map_err(&err)?;
    w.write_u32::<LittleEndian>(meta_json.len() as u32).map_err(&err)?;
    w.write_all(meta_json).map_err(&err)?;
    w.write_u32::<LittleEndian>(params.len() as u32).map_err(&err)?;
    for p in params {
        w.write_u16::<LittleEndian>(p.name.len() as u16).map_err(&err)?;
        w.write_all(p.name.as_bytes()).map_err(&err)?;
        w.write_u8(p.shape.len() as u8).map_err(&err)?;
        for d in &p.shape {
            w.write_u32::<LittleEndian>(*d as u32).map_err(&err)?;
        }
    }
    for p in params {
        for v in &p.data {
            w.write_f32::<LittleEndian>(v.to_f64_lossy() as f32).map_err(&err)?;
        }
    }
    w.flush().map_err(&err)
}

pub fn save_branch<T: Real>(path: &Path, model: &BranchModel<T>) -> Result<()> {
    let spec = serde_json::to_vec(&model.spec)?;
    let meta = serde_json::to_vec(&model.meta)?;
    write_savb(path, model.region.code(), &spec, &model.meta.config_hash, &meta, &model.params)
}

pub fn save_scorer<T: Real>(path: &Path, scorer: &AlignmentScorer<T>) -> Result<()> {
    let spec = serde_json::to_vec(&scorer.spec)?;
    let meta = serde_json::to_vec(&SyncMeta { config_hash: scorer.config_hash.clone() })?;
    write_savb(path, SAVB_KIND_SYNC, &spec, &scorer.config_hash, &meta, &scorer.params)
}

pub fn load_checkpoint<T: Real>(path: &Path) -> Result<Checkpoint<T>> {
    let mut cur = Cursor::new(open(path)?, path);
    let magic = cur.bytes(4, "magic")?;
    if magic != SAVB_MAGIC {
        cur.offset = 0;
        return Err(cur.fail(format!("expected magic \"SAVB\", found {:02x?}", magic)));
    }
    let version = cur.u16("version")?;
    if version != SAVB_VERSION {
        return Err(cur.fail(format!("unsupported SAVB version {version}")));
    }
    let kind = cur.u8("kind")?;
    let hash_len = cur.u8("hash length")? as usize;
    let hash = String::from_utf8(cur.bytes(hash_len, "config hash")?).map_err(|_| cur.fail("config hash is not UTF-8"))?;
    let spec_len = cur.u32("spec length")? as usize;
    let spec_at = cur.offset;
    let spec_bytes = cur.bytes(spec_len, "spec")?;
    let meta_len = cur.u32("meta length")? as usize;
    let meta_at = cur.offset;
    let meta_bytes = cur.bytes(meta_len, "meta")?;
    let count = cur.u32("tensor count")? as usize;
    let mut dir = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let name_len = cur.u16("tensor name length")? as usize;
        let name = String::from_utf8(cur.bytes(name_len, "tensor name")?).map_err(|_| cur.fail("tensor name is not UTF-8"))?;
        let ndim = cur.u8("tensor rank")? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(cur.u32("tensor dim")? as usize);
        }
        dir.push((name, shape));
    }
    let mut params = Vec::with_capacity(dir.len());
    for (name, shape) in dir {
        let n = shape.iter().product();
        let data = cur.f32s(n, &format!("tensor {name}"))?;
        params.push(Param { name, shape, data: data.into_iter().map(|v| T::lit(v as f64)).collect() });
    }
    cur.expect_end()?;
    let bad_json = |at: u64, e: serde_json::Error| Error::Format {
        path: path.to_path_buf(),
        offset: at,
        msg: format!("invalid JSON: {e}"),
    };
    let ck = if kind == SAVB_KIND_SYNC {
        let spec: ScorerSpec = serde_json::from_slice(&spec_bytes).map_err(|e| bad_json(spec_at, e))?;
        let _: SyncMeta = serde_json::from_slice(&meta_bytes).map_err(|e| bad_json(meta_at, e))?;
        let s = AlignmentScorer { spec, params, config_hash: hash };
        s.validate()?;
        Checkpoint::Sync(s)
    } else {
        let region = RegionTag::from_code(kind)
            .ok_or_else(|| Error::Format { path: path.to_path_buf(), offset: 6, msg: format!("unknown kind {kind}") })?;
        let spec: EncoderSpec = serde_json::from_slice(&spec_bytes).map_err(|e| bad_json(spec_at, e))?;
        let mut meta: TrainingMeta = serde_json::from_slice(&meta_bytes).map_err(|e| bad_json(meta_at, e))?;
        meta.config_hash = hash;
        let m = BranchModel { region, spec, params, meta };
        m.validate()?;
        Checkpoint::Visual(m)
    };
    Ok(ck)
}

/// One row of a score file.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRow {
    pub video_id: String,
    pub branch: Branch,
    pub raw_score: f64,
}

#[derive(Serialize, Deserialize)]
struct ScoreRecord {
    video_id: String,
    branch: String,
    raw_score: f64,
}

#[derive(Serialize, Deserialize)]
struct FusedRecord {
    video_id: String,
    p_final: f64,
    label: String,
}

pub fn write_stamped<S: Serialize>(path: &Path, config_hash: &str, header: &[&str], rows: impl Iterator<Item = S>) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "{HASH_PREFIX}{config_hash}").map_err(io_at(path))?;
    let mut csv = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    csv.write_record(header)?;
    for r in rows {
        csv.serialize(r)?;
    }
    csv.flush().map_err(io_at(path))?;
    Ok(())
}

pub fn read_stamped<D: serde::de::DeserializeOwned>(path: &Path, header: &[&str]) -> Result<(String, Vec<D>)> {
    let text = std::fs::read_to_string(path).map_err(io_at(path))?;
    let (first, rest) = text.split_once('\n').unwrap_or((&text, ""));
    let hash = first
        .strip_prefix(HASH_PREFIX)
        .ok_or_else(|| Error::Format { path: path.to_path_buf(), offset: 0, msg: "missing config hash line".into() })?
        .trim()
        .to_string();
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(rest.as_bytes());
    let got: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if got != header {
        return Err(Error::Format {
            path: path.to_path_buf(),
            offset: first.len() as u64 + 1,
            msg: format!("expected header {}, found {}", header.join(","), got.join(",")),
        });
    }
    let rows = rdr.deserialize().collect::<std::result::Result<Vec<D>, _>>()?;
    Ok((hash, rows))
}

pub const SCORE_HEADER: [&str; 3] = ["video_id", "branch", "raw_score"];
pub const FUSED_HEADER: [&str; 3] = ["video_id", "p_final", "label"];

pub fn write_scores(path: &Path, config_hash: &str, rows: &[ScoreRow]) -> Result<()> {
    write_stamped(
        path,
        config_hash,
        &SCORE_HEADER,
        rows.iter().map(|r| ScoreRecord {
            video_id: r.video_id.clone(),
            branch: r.branch.as_str().to_string(),
            raw_score: r.raw_score,
        }),
    )
}

/// Returns the config hash and rows.
pub fn read_scores(path: &Path) -> Result<(String, Vec<ScoreRow>)> {
    let (hash, recs): (String, Vec<ScoreRecord>) = read_stamped(path, &SCORE_HEADER)?;
    let rows = recs
        .into_iter()
        .map(|r| {
            let branch = r.branch.parse::<Branch>()?;
            if !r.raw_score.is_finite() {
                return Err(Error::Numerical(format!("{}: score for {} is not finite", path.display(), r.video_id)));
            }
            Ok(ScoreRow { video_id: r.video_id, branch, raw_score: r.raw_score })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((hash, rows))
}

pub fn write_fused(path: &Path, config_hash: &str, rows: &[FusedPrediction]) -> Result<()> {
    write_stamped(
        path,
        config_hash,
        &FUSED_HEADER,
        rows.iter().map(|r| FusedRecord {
            video_id: r.video_id.clone(),
            p_final: r.p_final,
            label: r.label.to_string(),
        }),
    )
}

/// One row of a fused-output file.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedRow {
    pub video_id: String,
    pub p_final: f64,
    pub label: Verdict,
}

pub fn read_fused(path: &Path) -> Result<(String, Vec<FusedRow>)> {
    let (hash, recs): (String, Vec<FusedRecord>) = read_stamped(path, &FUSED_HEADER)?;
    let rows = recs
        .into_iter()
        .map(|r| Ok(FusedRow { video_id: r.video_id, p_final: r.p_final, label: r.label.parse()? }))
        .collect::<Result<Vec<_>>>()?;
    Ok((hash, rows))
}

/// Reject artifacts whose hashes disagree with `expected`.
pub fn check_hash(expected: &str, found: &str, what: &str) -> Result<()> {
    if expected != found {
        return Err(Error::HashMismatch { expected: expected.into(), found: found.into(), what: what.into() });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::visual::EncoderKind;

    #[test]
    fn fseq_round_trip_and_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.fseq");
        let seq = FeatureSequence::new(Modality::Audio, 3, 2, vec![0.5f64, -1.0, 2.0, 0.25, 0.0, 3.5], 25.0).unwrap();
        write_fseq(&p, &seq).unwrap();
        assert_eq!(std::fs::metadata(&p).unwrap().len(), FSEQ_HEADER_LEN + 24);
        assert_eq!(read_fseq::<f64>(&p).unwrap(), seq);

        let mut bytes = std::fs::read(&p).unwrap();
        bytes[0] = b'X';
        std::fs::write(&p, &bytes).unwrap();
        match read_fseq::<f64>(&p) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("{other:?}"),
        }
        bytes[0] = b'F';
        bytes.truncate(30);
        std::fs::write(&p, &bytes).unwrap();
        match read_fseq::<f64>(&p) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, FSEQ_HEADER_LEN),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let spec = EncoderSpec { kind: EncoderKind::TinyConv, input_size: 16, feature_dim: 8, conv_channels: [2, 2, 2, 2], patch_grid: 2, seed: 3 };
        let mut m = BranchModel::<f32>::init(RegionTag::Lip, &spec).unwrap();
        m.meta.config_hash = "0123456789abcdef".into();
        m.meta.steps = 9;
        let p = dir.path().join("lip.savb");
        save_branch(&p, &m).unwrap();
        match load_checkpoint::<f32>(&p).unwrap() {
            Checkpoint::Visual(back) => assert_eq!(back, m),
            other => panic!("{other:?}"),
        }

        let mut s = AlignmentScorer::<f32>::init(&ScorerSpec { hidden: 4, ..ScorerSpec::new(2, 3) }).unwrap();
        s.config_hash = "feedface".into();
        let p = dir.path().join("av.savb");
        save_scorer(&p, &s).unwrap();
        match load_checkpoint::<f32>(&p).unwrap() {
            Checkpoint::Sync(back) => assert_eq!(back, s),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn score_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("scores.csv");
        let rows = vec![
            ScoreRow { video_id: "v1".into(), branch: Branch::Fb, raw_score: 0.1 + 0.2 },
            ScoreRow { video_id: "v,2".into(), branch: Branch::Av, raw_score: -3.5e-9 },
        ];
        write_scores(&p, "abc", &rows).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("# config_hash: abc\nvideo_id,branch,raw_score\n"));
        let (h, back) = read_scores(&p).unwrap();
        assert_eq!(h, "abc");
        assert_eq!(back, rows);
        assert!(matches!(check_hash("abc", "abd", "x"), Err(Error::HashMismatch { .. })));
    }
}
