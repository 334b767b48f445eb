use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;

use super::Modality;
use crate::error::{Error, Result};

pub const FEATURE_MAGIC: &[u8; 4] = b"MMPF";
pub const FEATURE_VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

/// Precomputed per-segment features of one modality of one video.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSequence {
    pub modality: Modality,
    pub video_id: String,
    values: Array2<f32>,
}

impl FeatureSequence {
    pub fn new(modality: Modality, video_id: impl Into<String>, values: Array2<f32>) -> Result<Self> {
        let (n, d) = values.dim();
        if n == 0 || d == 0 {
            return Err(Error::Shape(format!("feature matrix {n}x{d} is empty")));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                segment: pos / d,
                dim: pos % d,
            });
        }
        Ok(Self {
            modality,
            video_id: video_id.into(),
            values,
        })
    }

    pub fn num_segments(&self) -> usize {
        self.values.nrows()
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &Array2<f32> {
        &self.values
    }

    pub fn to_f64(&self) -> Array2<f64> {
        self.values.mapv(f64::from)
    }
}

/// `<path>.meta`
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta");
    PathBuf::from(s)
}

/// Header (magic, version, rows, cols) followed by row-major little-endian f32.
pub fn write_matrix_block<W: Write>(w: &mut W, values: &Array2<f32>) -> std::io::Result<()> {
    let (rows, cols) = values.dim();
    let mut buf = Vec::with_capacity(HEADER_LEN + 4 * rows * cols);
    buf.extend_from_slice(FEATURE_MAGIC);
    buf.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
    buf.extend_from_slice(&(rows as u32).to_le_bytes());
    buf.extend_from_slice(&(cols as u32).to_le_bytes());
    for v in values.iter() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)
}

fn parse_header(bytes: &[u8], path: &Path) -> Result<(usize, usize)> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::BadHeader {
            path: path.to_owned(),
            reason: format!("{} bytes is shorter than the 16-byte header", bytes.len()),
        });
    }
    if &bytes[..4] != FEATURE_MAGIC {
        return Err(Error::BadHeader {
            path: path.to_owned(),
            reason: "bad magic".into(),
        });
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes"));
    let version = word(4);
    if version != FEATURE_VERSION {
        return Err(Error::BadHeader {
            path: path.to_owned(),
            reason: format!("unsupported version {version}"),
        });
    }
    Ok((word(8) as usize, word(12) as usize))
}

fn decode_payload(payload: &[u8], rows: usize, cols: usize) -> Array2<f32> {
    let vals: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    Array2::from_shape_vec((rows, cols), vals).expect("length checked")
}

/// Read one matrix block from a stream (used inside checkpoints).
pub fn read_matrix_block<R: Read>(r: &mut R, origin: &Path) -> Result<Array2<f32>> {
    let mut header = [0u8; HEADER_LEN];
    r.read_exact(&mut header).map_err(|e| Error::io(origin, e))?;
    let (rows, cols) = parse_header(&header, origin)?;
    let mut payload = vec![0u8; 4 * rows * cols];
    r.read_exact(&mut payload).map_err(|_| Error::PayloadSizeMismatch {
        path: origin.to_owned(),
        expected: 4 * rows * cols,
        found: 0,
    })?;
    Ok(decode_payload(&payload, rows, cols))
}

pub fn write_feature_file(path: &Path, seq: &FeatureSequence) -> Result<()> {
    let mut buf = Vec::new();
    write_matrix_block(&mut buf, &seq.values).map_err(|e| Error::io(path, e))?;
    super::write_atomic(path, &buf)?;
    let meta = format!("video_id={}\nmodality={}\n", seq.video_id, seq.modality);
    super::write_atomic(&sidecar_path(path), meta.as_bytes())
}

/// Load a feature file and its `.meta` sidecar.
pub fn load_feature_file(path: &Path) -> Result<FeatureSequence> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (rows, cols) = parse_header(&bytes, path)?;
    let expected = 4 * rows * cols;
    let found = bytes.len() - HEADER_LEN;
    if found != expected {
        return Err(Error::PayloadSizeMismatch {
            path: path.to_owned(),
            expected,
            found,
        });
    }
    let values = decode_payload(&bytes[HEADER_LEN..], rows, cols);

    let side = sidecar_path(path);
    let meta = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let mut video_id = None;
    let mut modality = None;
    for line in meta.lines().map(str::trim).filter(|l| !l.is_empty()) {
        match line.split_once('=') {
            Some(("video_id", v)) => video_id = Some(v.to_string()),
            Some(("modality", v)) => modality = Some(v.parse::<Modality>()?),
            _ => {}
        }
    }
    let missing = |key: &str| Error::BadHeader {
        path: side.clone(),
        reason: format!("sidecar lacks `{key}`"),
    };
    let video_id = video_id.ok_or_else(|| missing("video_id"))?;
    let modality = modality.ok_or_else(|| missing("modality"))?;
    FeatureSequence::new(modality, video_id, values)
}
