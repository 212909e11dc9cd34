//! Binary tensor and model files, and dataset directories.
//!
//! All integers and floats are little-endian.
//!
//! Tensor file (`.nskt`):
//!
//! | bytes        | content                              |
//! |--------------|--------------------------------------|
//! | 4            | magic `NSKT`                         |
//! | 4            | `u32` version (1)                    |
//! | 4            | `u32` number of modes `D`            |
//! | 8·D          | `u64` dims                           |
//! | 8·∏dims      | `f64` values, column-major           |
//!
//! Model file (`.nskm`):
//!
//! | bytes        | content                                        |
//! |--------------|------------------------------------------------|
//! | 4            | magic `NSKM`                                   |
//! | 4            | `u32` version (1)                              |
//! | 4            | `u32` number of modes `D`                      |
//! | 4            | `u32` rank `R`                                 |
//! | 8·D          | `u64` dims                                     |
//! | 25·D         | per mode: `f64` λ1, λ2, λ3 and `u8` nonneg     |
//! | 8·R·ΣI_d     | factors in mode order, each column-major       |
//! | 8            | `u64` byte length `L` of the metadata          |
//! | L            | UTF-8 JSON metadata                            |
//!
//! A dataset directory holds `covariates.nskt` (the samples stacked along an
//! extra last mode), `responses.csv` (`index,y`), `meta.json` and optionally
//! `truth.nskt`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{NsktrError, Result};
use crate::loss::Loss;
use crate::model::{Dataset, FitReport};
use crate::regularizer::ModeRegConfig;
use crate::tensor::{DenseTensor, KruskalModel, Matrix};

pub const TENSOR_MAGIC: &[u8; 4] = b"NSKT";
pub const MODEL_MAGIC: &[u8; 4] = b"NSKM";
pub const FORMAT_VERSION: u32 = 1;

pub const COVARIATES_FILE: &str = "covariates.nskt";
pub const TRUTH_FILE: &str = "truth.nskt";
pub const RESPONSES_FILE: &str = "responses.csv";
pub const META_FILE: &str = "meta.json";

/// Writes `bytes` to a sibling temporary file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| NsktrError::Usage(format!("{} is not a file path", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(NsktrError::io(path, e));
    }
    Ok(())
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| NsktrError::io(path, e))
}

/// Little-endian reader over a byte slice that reports truncation against
/// the file it came from.
struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8], path: &'a Path) -> Self {
        Self { bytes, pos: 0, path }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(NsktrError::Truncated {
                path: self.path.to_path_buf(),
                detail: format!(
                    "{what} needs {n} bytes at offset {}, file has {}",
                    self.pos,
                    self.bytes.len()
                ),
            }),
        }
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, count: usize, what: &str) -> Result<Vec<f64>> {
        let n = count.checked_mul(8).ok_or_else(|| self.overflow())?;
        let raw = self.take(n, what)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    fn header(&mut self, magic: &[u8; 4], expected: &'static str) -> Result<()> {
        if self.bytes.len() < 4 || &self.bytes[..4] != magic {
            return Err(NsktrError::BadMagic {
                path: self.path.to_path_buf(),
                expected,
            });
        }
        self.pos = 4;
        let version = self.u32("version")?;
        if version != FORMAT_VERSION {
            return Err(NsktrError::UnsupportedVersion {
                path: self.path.to_path_buf(),
                found: version,
            });
        }
        Ok(())
    }

    fn dims(&mut self, ndims: usize) -> Result<Vec<usize>> {
        let mut dims = Vec::with_capacity(ndims.min(64));
        for _ in 0..ndims {
            let d = self.u64("dims")?;
            dims.push(usize::try_from(d).map_err(|_| self.overflow())?);
        }
        let total = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .and_then(|n| n.checked_mul(8));
        if total.is_none() {
            return Err(self.overflow());
        }
        Ok(dims)
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(NsktrError::Format {
                path: self.path.to_path_buf(),
                detail: format!("{} trailing bytes", self.bytes.len() - self.pos),
            });
        }
        Ok(())
    }

    fn overflow(&self) -> NsktrError {
        NsktrError::DimsOverflow {
            path: self.path.to_path_buf(),
        }
    }

    fn format(&self, detail: impl Into<String>) -> NsktrError {
        NsktrError::Format {
            path: self.path.to_path_buf(),
            detail: detail.into(),
        }
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&u32::try_from(v).expect("count fits in u32").to_le_bytes());
}

fn put_f64s(out: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode_tensor(t: &DenseTensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 8 * t.ndims() + 8 * t.len());
    out.extend_from_slice(TENSOR_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    put_u32(&mut out, t.ndims());
    for &d in t.dims() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    put_f64s(&mut out, t.values());
    out
}

/// `path` is only used in error messages.
pub fn decode_tensor(bytes: &[u8], path: &Path) -> Result<DenseTensor> {
    let mut r = Reader::new(bytes, path);
    r.header(TENSOR_MAGIC, "tensor")?;
    let ndims = r.u32("mode count")? as usize;
    let dims = r.dims(ndims)?;
    let values = r.f64s(dims.iter().product(), "payload")?;
    r.finish()?;
    DenseTensor::new(dims, values).map_err(|e| r.format(e.to_string()))
}

pub fn write_tensor(path: impl AsRef<Path>, t: &DenseTensor) -> Result<()> {
    write_atomic(path.as_ref(), &encode_tensor(t))
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<DenseTensor> {
    let path = path.as_ref();
    decode_tensor(&read_bytes(path)?, path)
}

/// Provenance stored in a model file's JSON trailer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub loss: Loss,
    pub seed: u64,
    pub iterations: usize,
    /// Absent when the objective was not finite.
    pub final_objective: Option<f64>,
}

/// A trained model together with the penalties it was fit with.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub model: KruskalModel,
    pub per_mode: Vec<ModeRegConfig>,
    pub meta: ModelMeta,
}

impl ModelFile {
    pub fn from_report(report: &FitReport, seed: u64) -> Self {
        let obj = report.final_objective();
        Self {
            model: report.model.clone(),
            per_mode: report.modes.clone(),
            meta: ModelMeta {
                loss: report.loss,
                seed,
                iterations: report.iterations(),
                final_objective: obj.is_finite().then_some(obj),
            },
        }
    }
}

pub fn encode_model(m: &ModelFile) -> Result<Vec<u8>> {
    let model = &m.model;
    if m.per_mode.len() != model.ndims() {
        return Err(NsktrError::ShapeMismatch(format!(
            "{} mode configs for a {}-mode model",
            m.per_mode.len(),
            model.ndims()
        )));
    }
    let meta = serde_json::to_vec(&m.meta).map_err(|e| NsktrError::param("metadata", e.to_string()))?;
    let mut out = Vec::new();
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    put_u32(&mut out, model.ndims());
    put_u32(&mut out, model.rank());
    for d in model.dims() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for cfg in &m.per_mode {
        put_f64s(&mut out, &[cfg.lambda1, cfg.lambda2, cfg.lambda3]);
        out.push(u8::from(cfg.nonneg));
    }
    for d in 0..model.ndims() {
        put_f64s(&mut out, model.factor(d).as_slice());
    }
    out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
    out.extend_from_slice(&meta);
    Ok(out)
}

pub fn decode_model(bytes: &[u8], path: &Path) -> Result<ModelFile> {
    let mut r = Reader::new(bytes, path);
    r.header(MODEL_MAGIC, "model")?;
    let ndims = r.u32("mode count")? as usize;
    let rank = r.u32("rank")? as usize;
    let dims = r.dims(ndims)?;
    let mut per_mode = Vec::with_capacity(ndims);
    for d in 0..ndims {
        let l1 = r.f64("lambda1")?;
        let l2 = r.f64("lambda2")?;
        let l3 = r.f64("lambda3")?;
        let nonneg = match r.u8("nonneg flag")? {
            0 => false,
            1 => true,
            other => return Err(r.format(format!("mode {d}: nonneg flag {other} is not 0 or 1"))),
        };
        per_mode.push(ModeRegConfig::new(l1, l2, l3, nonneg).map_err(|e| r.format(format!("mode {d}: {e}")))?);
    }
    let mut factors = Vec::with_capacity(ndims);
    for &n in &dims {
        let count = n.checked_mul(rank).ok_or_else(|| r.overflow())?;
        let values = r.f64s(count, "factor payload")?;
        factors.push(Matrix::from_vec(n, rank, values));
    }
    let len = usize::try_from(r.u64("metadata length")?).map_err(|_| r.overflow())?;
    let raw = r.take(len, "metadata")?;
    r.finish()?;
    let text = std::str::from_utf8(raw).map_err(|_| r.format("metadata is not UTF-8"))?;
    let meta: ModelMeta = serde_json::from_str(text).map_err(|e| r.format(format!("metadata: {e}")))?;
    let model = KruskalModel::new(factors).map_err(|e| r.format(e.to_string()))?;
    Ok(ModelFile { model, per_mode, meta })
}

pub fn write_model(path: impl AsRef<Path>, m: &ModelFile) -> Result<()> {
    write_atomic(path.as_ref(), &encode_model(m)?)
}

pub fn read_model(path: impl AsRef<Path>) -> Result<ModelFile> {
    let path = path.as_ref();
    decode_model(&read_bytes(path)?, path)
}

/// Contents of a dataset directory's `meta.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub loss: Loss,
    pub n: usize,
    pub dims: Vec<usize>,
    /// Free-form generator settings (signal, SNR, seed, ...).
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub source: serde_json::Value,
}

pub fn responses_csv(y: &[f64]) -> String {
    let mut out = String::from("index,y\n");
    for (i, v) in y.iter().enumerate() {
        out.push_str(&format!("{i},{v}\n"));
    }
    out
}

pub fn parse_responses_csv(text: &str, path: &Path) -> Result<Vec<f64>> {
    let bad = |line: usize, detail: String| NsktrError::Format {
        path: path.to_path_buf(),
        detail: format!("line {line}: {detail}"),
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == "index,y" => {}
        _ => return Err(bad(1, "expected header `index,y`".into())),
    }
    let mut y = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let (idx, val) = line.split_once(',').ok_or_else(|| bad(i + 1, "expected `index,y`".into()))?;
        let idx: usize = idx.trim().parse().map_err(|_| bad(i + 1, format!("bad index `{idx}`")))?;
        if idx != y.len() {
            return Err(bad(i + 1, format!("index {idx} out of sequence")));
        }
        y.push(val.trim().parse().map_err(|_| bad(i + 1, format!("bad value `{val}`")))?);
    }
    Ok(y)
}

/// Samples stacked along a new last mode.
pub fn stack_samples(data: &Dataset) -> Result<DenseTensor> {
    let mut dims = data.dims().to_vec();
    dims.push(data.len());
    let mut values = Vec::with_capacity(dims.iter().product());
    for x in data.samples() {
        values.extend_from_slice(x.values());
    }
    DenseTensor::new(dims, values)
}

pub fn unstack_samples(stacked: DenseTensor) -> Result<Vec<DenseTensor>> {
    let dims = stacked.dims();
    if dims.len() < 2 {
        return Err(NsktrError::InvalidDims(format!(
            "stacked covariates need at least 2 modes, got {dims:?}"
        )));
    }
    let inner = dims[..dims.len() - 1].to_vec();
    let len: usize = inner.iter().product();
    stacked
        .values()
        .chunks_exact(len)
        .map(|c| DenseTensor::new(inner.clone(), c.to_vec()))
        .collect()
}

pub fn write_dataset(
    dir: impl AsRef<Path>,
    data: &Dataset,
    truth: Option<&DenseTensor>,
    source: serde_json::Value,
) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| NsktrError::io(dir, e))?;
    write_tensor(dir.join(COVARIATES_FILE), &stack_samples(data)?)?;
    if let Some(t) = truth {
        write_tensor(dir.join(TRUTH_FILE), t)?;
    }
    write_atomic(&dir.join(RESPONSES_FILE), responses_csv(data.responses()).as_bytes())?;
    let meta = DatasetMeta {
        loss: data.loss(),
        n: data.len(),
        dims: data.dims().to_vec(),
        source,
    };
    let json = serde_json::to_string_pretty(&meta).map_err(|e| NsktrError::param("meta", e.to_string()))?;
    write_atomic(&dir.join(META_FILE), format!("{json}\n").as_bytes())
}

pub struct LoadedDataset {
    pub data: Dataset,
    pub meta: DatasetMeta,
    pub truth: Option<DenseTensor>,
}

/// Reads a dataset directory. `loss` overrides the one recorded in
/// `meta.json`.
pub fn read_dataset(dir: impl AsRef<Path>, loss: Option<Loss>) -> Result<LoadedDataset> {
    let dir = dir.as_ref();
    let meta_path = dir.join(META_FILE);
    let text = fs::read_to_string(&meta_path).map_err(|e| NsktrError::io(&meta_path, e))?;
    let meta: DatasetMeta = serde_json::from_str(&text).map_err(|e| NsktrError::Format {
        path: meta_path.clone(),
        detail: e.to_string(),
    })?;
    let samples = unstack_samples(read_tensor(dir.join(COVARIATES_FILE))?)?;
    let resp_path = dir.join(RESPONSES_FILE);
    let resp_text = fs::read_to_string(&resp_path).map_err(|e| NsktrError::io(&resp_path, e))?;
    let responses = parse_responses_csv(&resp_text, &resp_path)?;
    let truth_path: PathBuf = dir.join(TRUTH_FILE);
    let truth = if truth_path.exists() {
        Some(read_tensor(&truth_path)?)
    } else {
        None
    };
    let data = Dataset::new(samples, responses, loss.unwrap_or(meta.loss))?;
    if data.len() != meta.n || data.dims() != meta.dims.as_slice() {
        return Err(NsktrError::Format {
            path: meta_path,
            detail: format!(
                "meta.json describes {} samples of {:?}, files hold {} of {:?}",
                meta.n,
                meta.dims,
                data.len(),
                data.dims()
            ),
        });
    }
    Ok(LoadedDataset { data, meta, truth })
}
