//! Binary trace container.
//!
//! Layout (all integers little-endian):
//!
//! | bytes | field |
//! |-------|-------|
//! | 4     | magic `LASR` |
//! | 2     | version (`1`) |
//! | 28    | `L, H, P, rows, cols, image_width, image_height` as `u32` |
//! | 32    | system, visual, query, answer-prefix spans as `(start, end)` `u32` pairs |
//! | 4 + n | source id: `u32` byte length, then UTF-8 |
//! | 4·L·H·P | with-query weights, `f32`, layer-major, head-major, patch-minor |
//! | 4·L·H·P | without-query weights, same order |

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::error::LaserError;
use crate::geometry::GridGeometry;
use crate::scalar::Scalar;
use crate::trace::{AttentionTrace, TokenLayout, TokenSpan};

pub const MAGIC: [u8; 4] = *b"LASR";
pub const VERSION: u16 = 1;
/// Header bytes excluding the source id text.
pub const FIXED_HEADER_LEN: usize = 4 + 2 + 7 * 4 + 8 * 4 + 4;

#[derive(Debug, Error)]
pub enum TraceIoError {
    #[error("not a trace file: {0}")]
    Format(String),
    #[error("trace size mismatch: expected {expected} bytes, found {actual}")]
    Size { expected: usize, actual: usize },
    #[error(transparent)]
    Validation(#[from] LaserError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Stream(#[from] std::io::Error),
}

impl TraceIoError {
    fn at(path: &Path) -> impl FnOnce(std::io::Error) -> TraceIoError + '_ {
        move |source| TraceIoError::Io { path: path.to_path_buf(), source }
    }
}

/// Total encoded size of a trace.
pub fn encoded_len(layers: usize, heads: usize, patches: usize, source_id_len: usize) -> usize {
    FIXED_HEADER_LEN + source_id_len + 2 * layers * heads * patches * 4
}

/// Serializes a trace; weights are stored as `f32`.
pub fn write_trace<T: Scalar, W: Write>(trace: &AttentionTrace<T>, mut sink: W) -> Result<(), TraceIoError> {
    trace.validate()?;
    let grid = trace.grid();
    let id = trace.source_id().as_bytes();
    let mut buf = Vec::with_capacity(encoded_len(trace.layers(), trace.heads(), trace.patches(), id.len()));
    buf.extend_from_slice(&MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    for v in [
        trace.layers() as u32,
        trace.heads() as u32,
        trace.patches() as u32,
        grid.rows(),
        grid.cols(),
        grid.image_width(),
        grid.image_height(),
    ] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for span in trace.layout().spans() {
        buf.extend_from_slice(&span.start.to_le_bytes());
        buf.extend_from_slice(&span.end.to_le_bytes());
    }
    buf.extend_from_slice(&(id.len() as u32).to_le_bytes());
    buf.extend_from_slice(id);
    for &w in trace.with_query().iter().chain(trace.without_query()) {
        let f = w.to_f32().unwrap_or(f32::NAN);
        buf.extend_from_slice(&f.to_le_bytes());
    }
    sink.write_all(&buf)?;
    sink.flush()?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, expected_total: usize) -> Result<&'a [u8], TraceIoError> {
        if self.at + n > self.bytes.len() {
            return Err(TraceIoError::Size { expected: expected_total.max(self.at + n), actual: self.bytes.len() });
        }
        let out = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, TraceIoError> {
        let b = self.take(4, FIXED_HEADER_LEN)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }
}

/// Reads and validates a trace.
pub fn read_trace<R: Read>(source: R) -> Result<AttentionTrace<f32>, TraceIoError> {
    read_trace_as(source)
}

/// Reads a trace and converts its weights to `T`.
pub fn read_trace_as<T: Scalar, R: Read>(mut source: R) -> Result<AttentionTrace<T>, TraceIoError> {
    let mut bytes = Vec::new();
    source.read_to_end(&mut bytes)?;
    decode(&bytes)
}

fn decode<T: Scalar>(bytes: &[u8]) -> Result<AttentionTrace<T>, TraceIoError> {
    if bytes.len() < 6 || bytes[..4] != MAGIC {
        return Err(TraceIoError::Format(format!("bad magic {:?}", &bytes[..bytes.len().min(4)])));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(TraceIoError::Format(format!("unsupported version {version}")));
    }
    let mut c = Cursor { bytes, at: 6 };
    let mut dims = [0u32; 7];
    for d in dims.iter_mut() {
        *d = c.u32()?;
    }
    let [layers, heads, patches, rows, cols, width, height] = dims.map(|d| d as usize);
    let mut spans = [TokenSpan::new(0, 0); 4];
    for s in spans.iter_mut() {
        *s = TokenSpan::new(c.u32()?, c.u32()?);
    }
    let id_len = c.u32()? as usize;
    let expected = encoded_len(layers, heads, patches, id_len);
    if bytes.len() != expected {
        return Err(TraceIoError::Size { expected, actual: bytes.len() });
    }
    if rows * cols != patches {
        return Err(TraceIoError::Validation(LaserError::Validation(format!(
            "grid {rows}x{cols} does not hold {patches} patches"
        ))));
    }
    let source_id = std::str::from_utf8(c.take(id_len, expected)?)
        .map_err(|e| TraceIoError::Format(format!("source id is not UTF-8: {e}")))?
        .to_string();
    let n = layers * heads * patches;
    let read_tensor = |c: &mut Cursor| -> Result<Vec<T>, TraceIoError> {
        Ok(c.take(n * 4, expected)?
            .chunks_exact(4)
            .map(|b| T::of(f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64))
            .collect())
    };
    let with_query = read_tensor(&mut c)?;
    let without_query = read_tensor(&mut c)?;
    let grid = GridGeometry::new(rows as u32, cols as u32, width as u32, height as u32)?;
    let layout = TokenLayout { system: spans[0], visual: spans[1], query: spans[2], answer_prefix: spans[3] };
    Ok(AttentionTrace::new(layers, heads, grid, layout, with_query, without_query, source_id)?)
}

pub fn write_trace_file<T: Scalar>(trace: &AttentionTrace<T>, path: &Path) -> Result<(), TraceIoError> {
    let file = File::create(path).map_err(TraceIoError::at(path))?;
    write_trace(trace, BufWriter::new(file)).map_err(|e| match e {
        TraceIoError::Stream(source) => TraceIoError::Io { path: path.to_path_buf(), source },
        other => other,
    })
}

pub fn read_trace_file(path: &Path) -> Result<AttentionTrace<f32>, TraceIoError> {
    let file = File::open(path).map_err(TraceIoError::at(path))?;
    read_trace(BufReader::new(file)).map_err(|e| match e {
        TraceIoError::Stream(source) => TraceIoError::Io { path: path.to_path_buf(), source },
        other => other,
    })
}
