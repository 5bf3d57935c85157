//! Samples, shards and the on-disk formats they travel in.
//!
//! A shard is one JSONL metadata file (`<stem>.jsonl`, one sample per line)
//! plus optional row-aligned embedding sidecars (`<stem>.text.emb`,
//! `<stem>.image.emb`).
//!
//! Sidecar layout (little-endian):
//!
//! ```text
//! offset  size  field
//! 0       4     magic "MMEB"
//! 4       2     version (u16) = 1
//! 6       1     dtype (u8)    = 1 (float32)
//! 7       1     reserved      = 0
//! 8       4     dim (u32)
//! 12      8     count (u64)
//! 20      ...   count * dim float32 values, row-major
//! ```

use std::collections::HashSet;
use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde_json::{Map, Value};
use thiserror::Error;

pub const SIDECAR_MAGIC: [u8; 4] = *b"MMEB";
pub const SIDECAR_VERSION: u16 = 1;
pub const DTYPE_F32: u8 = 1;
pub const SIDECAR_HEADER_LEN: usize = 20;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("malformed record on line {line}: {message}")]
    MalformedRecord { line: usize, message: String },
    #[error("duplicate uid {uid:?}")]
    DuplicateUid { uid: String },
    #[error("{which} embedding matrix has {matrix_rows} rows but shard has {samples} samples")]
    EmbeddingCountMismatch {
        which: &'static str,
        matrix_rows: usize,
        samples: usize,
    },
    #[error("{path}: bad magic bytes {found:02x?}")]
    BadMagic { path: PathBuf, found: [u8; 4] },
    #[error("{path}: unsupported sidecar version {version}")]
    BadVersion { path: PathBuf, version: u16 },
    #[error("{path}: unsupported dtype {dtype} (only float32 = 1 is supported)")]
    UnsupportedDtype { path: PathBuf, dtype: u8 },
    #[error("{path}: expected {expected} bytes, found {actual}")]
    SizeMismatch {
        path: PathBuf,
        expected: u64,
        actual: u64,
    },
    #[error("embedding dim must be at least 1")]
    ZeroDim,
    #[error("embedding value count {len} is not a multiple of dim {dim}")]
    RaggedMatrix { len: usize, dim: usize },
    #[error("non-finite embedding value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("invalid sample {uid:?}: {message}")]
    InvalidSample { uid: String, message: String },
}

impl DataError {
    fn io(path: &Path, source: io::Error) -> Self {
        DataError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// One image-text pair.
///
/// The image is referenced either through `url` or implicitly by the
/// sample's row in its shard's image embedding matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub uid: String,
    pub caption: String,
    pub url: Option<String>,
    pub width: Option<u32>,
    pub height: Option<u32>,
    /// Fields not understood by this crate, kept in their original order.
    pub extra: Map<String, Value>,
}

impl Sample {
    pub fn new(uid: impl Into<String>, caption: impl Into<String>) -> Self {
        Sample {
            uid: uid.into(),
            caption: caption.into(),
            url: None,
            width: None,
            height: None,
            extra: Map::new(),
        }
    }

    pub fn with_size(mut self, width: u32, height: u32) -> Self {
        self.width = Some(width);
        self.height = Some(height);
        self
    }

    pub fn with_url(mut self, url: impl Into<String>) -> Self {
        self.url = Some(url.into());
        self
    }

    fn validate(&self) -> Result<(), DataError> {
        if self.uid.is_empty() {
            return Err(DataError::InvalidSample {
                uid: self.uid.clone(),
                message: "uid is empty".into(),
            });
        }
        if self.width == Some(0) || self.height == Some(0) {
            return Err(DataError::InvalidSample {
                uid: self.uid.clone(),
                message: "width and height must be at least 1".into(),
            });
        }
        Ok(())
    }

    /// Parses one JSONL record. `line` is 1-based and only used for errors.
    pub fn from_json_line(text: &str, line: usize) -> Result<Sample, DataError> {
        let malformed = |message: String| DataError::MalformedRecord { line, message };
        let value: Value = serde_json::from_str(text).map_err(|e| malformed(e.to_string()))?;
        let Value::Object(mut obj) = value else {
            return Err(malformed("record is not a JSON object".into()));
        };
        let uid = match obj.shift_remove("uid") {
            Some(Value::String(s)) if !s.is_empty() => s,
            Some(Value::String(_)) => return Err(malformed("`uid` is empty".into())),
            Some(_) => return Err(malformed("`uid` must be a string".into())),
            None => return Err(malformed("missing `uid`".into())),
        };
        let caption = match obj.shift_remove("text") {
            Some(Value::String(s)) => s,
            Some(_) => return Err(malformed("`text` must be a string".into())),
            None => return Err(malformed("missing `text`".into())),
        };
        let url = match obj.shift_remove("url") {
            None | Some(Value::Null) => None,
            Some(Value::String(s)) => Some(s),
            Some(_) => return Err(malformed("`url` must be a string".into())),
        };
        let mut dimension = |key: &str| -> Result<Option<u32>, DataError> {
            match obj.shift_remove(key) {
                None | Some(Value::Null) => Ok(None),
                Some(v) => match v.as_u64().and_then(|n| u32::try_from(n).ok()) {
                    Some(n) if n >= 1 => Ok(Some(n)),
                    _ => Err(malformed(format!("`{key}` must be a positive integer"))),
                },
            }
        };
        let width = dimension("width")?;
        let height = dimension("height")?;
        Ok(Sample {
            uid,
            caption,
            url,
            width,
            height,
            extra: obj,
        })
    }

    /// Serializes the sample as a single JSON object (no trailing newline).
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(&Value::Object(self.to_json_map())).expect("JSON map serializes")
    }

    pub fn to_json_map(&self) -> Map<String, Value> {
        let mut obj = Map::new();
        obj.insert("uid".into(), Value::String(self.uid.clone()));
        obj.insert("text".into(), Value::String(self.caption.clone()));
        if let Some(url) = &self.url {
            obj.insert("url".into(), Value::String(url.clone()));
        }
        if let Some(w) = self.width {
            obj.insert("width".into(), Value::from(w));
        }
        if let Some(h) = self.height {
            obj.insert("height".into(), Value::from(h));
        }
        for (k, v) in &self.extra {
            obj.insert(k.clone(), v.clone());
        }
        obj
    }
}

/// Dense row-major float32 matrix with finite values.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    dim: usize,
    values: Vec<f32>,
}

impl EmbeddingMatrix {
    pub fn new(dim: usize, values: Vec<f32>) -> Result<Self, DataError> {
        if dim == 0 {
            return Err(DataError::ZeroDim);
        }
        if !values.len().is_multiple_of(dim) {
            return Err(DataError::RaggedMatrix {
                len: values.len(),
                dim,
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(DataError::NonFinite {
                row: i / dim,
                col: i % dim,
            });
        }
        Ok(EmbeddingMatrix { dim, values })
    }

    pub fn from_rows<R: AsRef<[f32]>>(dim: usize, rows: &[R]) -> Result<Self, DataError> {
        let mut values = Vec::with_capacity(rows.len() * dim);
        for row in rows {
            let row = row.as_ref();
            if row.len() != dim {
                return Err(DataError::RaggedMatrix {
                    len: row.len(),
                    dim,
                });
            }
            values.extend_from_slice(row);
        }
        Self::new(dim, values)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn count(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn row(&self, r: usize) -> Option<&[f32]> {
        let start = r.checked_mul(self.dim)?;
        self.values.get(start..start + self.dim)
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn select_rows(&self, rows: &[usize]) -> EmbeddingMatrix {
        let mut values = Vec::with_capacity(rows.len() * self.dim);
        for &r in rows {
            values.extend_from_slice(self.row(r).expect("row in range"));
        }
        EmbeddingMatrix {
            dim: self.dim,
            values,
        }
    }

    /// Encodes header and payload in the sidecar layout.
    pub fn to_sidecar_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(SIDECAR_HEADER_LEN + self.values.len() * 4);
        out.extend_from_slice(&SIDECAR_MAGIC);
        out.extend_from_slice(&SIDECAR_VERSION.to_le_bytes());
        out.push(DTYPE_F32);
        out.push(0);
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.count() as u64).to_le_bytes());
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Decodes a sidecar. `path` is only used in error messages.
    pub fn from_sidecar_bytes(bytes: &[u8], path: &Path) -> Result<Self, DataError> {
        let size_err = |expected: u64| DataError::SizeMismatch {
            path: path.to_path_buf(),
            expected,
            actual: bytes.len() as u64,
        };
        if bytes.len() < 4 {
            return Err(size_err(SIDECAR_HEADER_LEN as u64));
        }
        let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
        if magic != SIDECAR_MAGIC {
            return Err(DataError::BadMagic {
                path: path.to_path_buf(),
                found: magic,
            });
        }
        if bytes.len() < SIDECAR_HEADER_LEN {
            return Err(size_err(SIDECAR_HEADER_LEN as u64));
        }
        let version = u16::from_le_bytes(bytes[4..6].try_into().unwrap());
        if version != SIDECAR_VERSION {
            return Err(DataError::BadVersion {
                path: path.to_path_buf(),
                version,
            });
        }
        if bytes[6] != DTYPE_F32 {
            return Err(DataError::UnsupportedDtype {
                path: path.to_path_buf(),
                dtype: bytes[6],
            });
        }
        let dim = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as u64;
        let count = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
        if dim == 0 {
            return Err(DataError::ZeroDim);
        }
        let expected = count
            .checked_mul(dim)
            .and_then(|n| n.checked_mul(4))
            .and_then(|n| n.checked_add(SIDECAR_HEADER_LEN as u64))
            .unwrap_or(u64::MAX);
        if bytes.len() as u64 != expected {
            return Err(size_err(expected));
        }
        let values = bytes[SIDECAR_HEADER_LEN..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        EmbeddingMatrix::new(dim as usize, values)
    }

    pub fn read_sidecar(path: &Path) -> Result<Self, DataError> {
        let bytes = fs::read(path).map_err(|e| DataError::io(path, e))?;
        Self::from_sidecar_bytes(&bytes, path)
    }

    pub fn write_sidecar(&self, path: &Path) -> Result<(), DataError> {
        fs::write(path, self.to_sidecar_bytes()).map_err(|e| DataError::io(path, e))
    }
}

/// An ordered collection of samples with optional row-aligned embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct Shard {
    name: String,
    samples: Vec<Sample>,
    text_embeddings: Option<EmbeddingMatrix>,
    image_embeddings: Option<EmbeddingMatrix>,
}

impl Shard {
    pub fn new(name: impl Into<String>, samples: Vec<Sample>) -> Result<Self, DataError> {
        Self::with_embeddings(name, samples, None, None)
    }

    pub fn with_embeddings(
        name: impl Into<String>,
        samples: Vec<Sample>,
        text_embeddings: Option<EmbeddingMatrix>,
        image_embeddings: Option<EmbeddingMatrix>,
    ) -> Result<Self, DataError> {
        let mut seen = HashSet::with_capacity(samples.len());
        for s in &samples {
            s.validate()?;
            if !seen.insert(s.uid.as_str()) {
                return Err(DataError::DuplicateUid { uid: s.uid.clone() });
            }
        }
        for (which, m) in [("text", &text_embeddings), ("image", &image_embeddings)] {
            if let Some(m) = m {
                if m.count() != samples.len() {
                    return Err(DataError::EmbeddingCountMismatch {
                        which,
                        matrix_rows: m.count(),
                        samples: samples.len(),
                    });
                }
            }
        }
        Ok(Shard {
            name: name.into(),
            samples,
            text_embeddings,
            image_embeddings,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn text_embeddings(&self) -> Option<&EmbeddingMatrix> {
        self.text_embeddings.as_ref()
    }

    pub fn image_embeddings(&self) -> Option<&EmbeddingMatrix> {
        self.image_embeddings.as_ref()
    }

    /// Keeps the given rows, in the given order, together with their embedding rows.
    pub fn subset(&self, rows: &[usize]) -> Shard {
        Shard {
            name: self.name.clone(),
            samples: rows.iter().map(|&r| self.samples[r].clone()).collect(),
            text_embeddings: self.text_embeddings.as_ref().map(|m| m.select_rows(rows)),
            image_embeddings: self.image_embeddings.as_ref().map(|m| m.select_rows(rows)),
        }
    }

    /// Replaces every caption, keeping uids and embedding rows.
    pub fn map_captions(&self, mut f: impl FnMut(&str) -> String) -> Shard {
        let mut out = self.clone();
        for s in &mut out.samples {
            s.caption = f(&s.caption);
        }
        out
    }

    pub fn into_samples(self) -> Vec<Sample> {
        self.samples
    }
}

/// Parses JSONL metadata. Blank trailing content is ignored; any other
/// unparsable line is a [`DataError::MalformedRecord`].
pub fn read_jsonl<R: BufRead>(reader: R) -> Result<Vec<Sample>, DataError> {
    let mut samples = Vec::new();
    let mut pending_blank: Option<usize> = None;
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| DataError::MalformedRecord {
            line: i + 1,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            pending_blank.get_or_insert(i + 1);
            continue;
        }
        if let Some(blank) = pending_blank {
            return Err(DataError::MalformedRecord {
                line: blank,
                message: "blank line inside shard".into(),
            });
        }
        samples.push(Sample::from_json_line(&line, i + 1)?);
    }
    Ok(samples)
}

pub fn write_jsonl<W: Write>(mut writer: W, samples: &[Sample]) -> io::Result<()> {
    for s in samples {
        writer.write_all(s.to_json_line().as_bytes())?;
        writer.write_all(b"\n")?;
    }
    writer.flush()
}

/// Where [`read_shard`] should look for embedding sidecars.
#[derive(Debug, Clone, Default)]
pub struct ReadOptions {
    pub text_embeddings: Option<PathBuf>,
    pub image_embeddings: Option<PathBuf>,
    /// Pick up `<stem>.text.emb` / `<stem>.image.emb` next to the metadata
    /// file when no explicit path is given.
    pub auto_sidecars: bool,
}

impl ReadOptions {
    pub fn auto() -> Self {
        ReadOptions {
            auto_sidecars: true,
            ..Default::default()
        }
    }
}

/// File stem of a metadata path, without the `.jsonl` extension.
pub fn shard_stem(metadata_path: &Path) -> String {
    let file = metadata_path
        .file_name()
        .map(|f| f.to_string_lossy().into_owned())
        .unwrap_or_default();
    file.strip_suffix(".jsonl").unwrap_or(&file).to_string()
}

pub fn sidecar_path(dir: &Path, stem: &str, which: &str) -> PathBuf {
    dir.join(format!("{stem}.{which}.emb"))
}

pub fn read_shard(metadata_path: &Path, options: &ReadOptions) -> Result<Shard, DataError> {
    let file = File::open(metadata_path).map_err(|e| DataError::io(metadata_path, e))?;
    let samples = read_jsonl(BufReader::new(file))?;
    let stem = shard_stem(metadata_path);
    let dir = metadata_path.parent().unwrap_or(Path::new("."));
    let locate = |explicit: &Option<PathBuf>, which: &str| -> Option<PathBuf> {
        match explicit {
            Some(p) => Some(p.clone()),
            None if options.auto_sidecars => {
                let p = sidecar_path(dir, &stem, which);
                p.exists().then_some(p)
            }
            None => None,
        }
    };
    let text = locate(&options.text_embeddings, "text")
        .map(|p| EmbeddingMatrix::read_sidecar(&p))
        .transpose()?;
    let image = locate(&options.image_embeddings, "image")
        .map(|p| EmbeddingMatrix::read_sidecar(&p))
        .transpose()?;
    Shard::with_embeddings(stem, samples, text, image)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShardPaths {
    pub metadata: PathBuf,
    pub text_embeddings: Option<PathBuf>,
    pub image_embeddings: Option<PathBuf>,
}

pub fn write_shard(shard: &Shard, out_dir: &Path) -> Result<ShardPaths, DataError> {
    fs::create_dir_all(out_dir).map_err(|e| DataError::io(out_dir, e))?;
    let metadata = out_dir.join(format!("{}.jsonl", shard.name));
    let file = File::create(&metadata).map_err(|e| DataError::io(&metadata, e))?;
    write_jsonl(BufWriter::new(file), &shard.samples).map_err(|e| DataError::io(&metadata, e))?;

    let write_sidecar =
        |m: &Option<EmbeddingMatrix>, which| -> Result<Option<PathBuf>, DataError> {
            match m {
                Some(m) => {
                    let p = sidecar_path(out_dir, &shard.name, which);
                    m.write_sidecar(&p)?;
                    Ok(Some(p))
                }
                None => Ok(None),
            }
        };
    let text_embeddings = write_sidecar(&shard.text_embeddings, "text")?;
    let image_embeddings = write_sidecar(&shard.image_embeddings, "image")?;
    Ok(ShardPaths {
        metadata,
        text_embeddings,
        image_embeddings,
    })
}
