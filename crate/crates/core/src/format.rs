//! Binary encodings: the `TTNN` model file, `TTFM` feature/mask dumps and
//! 16-bit PCM WAV. All multi-byte values are little-endian.
//!
//! Model file layout:
//!
//! ```text
//! "TTNN" | u32 version | u8 float width (4|8) | u64 seed | f64 dropout | u32 layer count
//! per layer:
//!   u8 kind (1 = TT-LSTM, 2 = TT dense/ReLU, 3 = TT output/sigmoid)
//!   u32 d | u32 p[d] | u32 q[d] | u32 r[d+1] | u32 gate fusion
//!   core entries, core by core, row-major over (p, q, r_in, r_out)
//!   u8 has_bias [, Q floats]
//!   TT-LSTM only: 4H gate-bias floats (i, f, o, c~) | u32 n | u32 input factors[n]
//! u32 CRC-32 of every preceding byte
//! ```

use std::io::Cursor;
use std::path::Path;

use crate::audio::{Waveform, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::lstm::TtLstmCell;
use crate::tensornet::TensorNet;
use crate::tt::{TtLinear, TtShape};

pub const MODEL_MAGIC: &[u8; 4] = b"TTNN";
pub const MODEL_VERSION: u32 = 1;
pub const DUMP_MAGIC: &[u8; 4] = b"TTFM";

const KIND_LSTM: u8 = 1;
const KIND_DENSE: u8 = 2;
const KIND_OUTPUT: u8 = 3;
const MAX_CORES: usize = 64;
const MAX_LAYERS: usize = 1024;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FloatWidth {
    F32,
    F64,
}

impl FloatWidth {
    pub fn bytes(self) -> usize {
        match self {
            FloatWidth::F32 => 4,
            FloatWidth::F64 => 8,
        }
    }

    fn from_byte(b: u8, what: &'static str) -> Result<Self> {
        match b {
            4 => Ok(FloatWidth::F32),
            8 => Ok(FloatWidth::F64),
            other => Err(Error::format(what, format!("float width {other} (expected 4 or 8)"))),
        }
    }
}

struct Writer {
    buf: Vec<u8>,
    width: FloatWidth,
}

impl Writer {
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    fn u32(&mut self, v: usize) {
        let v = u32::try_from(v).expect("dimension fits in u32");
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn floats(&mut self, vs: &[f64]) {
        for &v in vs {
            match self.width {
                FloatWidth::F32 => self.buf.extend_from_slice(&(v as f32).to_le_bytes()),
                FloatWidth::F64 => self.buf.extend_from_slice(&v.to_le_bytes()),
            }
        }
    }
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Reader<'a> {
    fn new(data: &'a [u8], what: &'static str) -> Self {
        Self { data, pos: 0, what }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.data.len() - self.pos < n {
            return Err(Error::format(
                self.what,
                format!(
                    "truncated: need {} bytes at offset {}, {} left",
                    n,
                    self.pos,
                    self.data.len() - self.pos
                ),
            ));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn dims(&mut self, n: usize) -> Result<Vec<usize>> {
        self.remaining_at_least(n.saturating_mul(4))?;
        (0..n).map(|_| self.u32().map(|v| v as usize)).collect()
    }

    fn floats(&mut self, n: usize, width: FloatWidth) -> Result<Vec<f64>> {
        let bytes = n
            .checked_mul(width.bytes())
            .ok_or_else(|| Error::format(self.what, "float block size overflows"))?;
        let raw = self.take(bytes)?;
        let out = match width {
            FloatWidth::F32 => raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                .collect(),
            FloatWidth::F64 => raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect(),
        };
        Ok(out)
    }

    fn remaining_at_least(&self, n: usize) -> Result<()> {
        if self.data.len() - self.pos < n {
            return Err(Error::format(
                self.what,
                format!("truncated: {} bytes declared, {} left", n, self.data.len() - self.pos),
            ));
        }
        Ok(())
    }

    fn finished(&self) -> bool {
        self.pos == self.data.len()
    }
}

fn write_ttl(w: &mut Writer, ttl: &TtLinear) {
    let s = ttl.shape();
    w.u32(s.d());
    for &v in s.p().iter().chain(s.q()).chain(s.ranks()) {
        w.u32(v);
    }
    w.u32(s.gate_fusion());
    for core in &ttl.cores {
        w.floats(&core.data);
    }
    match &ttl.bias {
        Some(b) => {
            w.u8(1);
            w.floats(b);
        }
        None => w.u8(0),
    }
}

fn read_ttl(r: &mut Reader, width: FloatWidth) -> Result<TtLinear> {
    let d = r.u32()? as usize;
    if d == 0 || d > MAX_CORES {
        return Err(Error::format(r.what, format!("core count {d} out of range")));
    }
    let p = r.dims(d)?;
    let q = r.dims(d)?;
    let ranks = r.dims(d + 1)?;
    let g = r.u32()? as usize;
    let shape = TtShape::new(p, q, ranks, g).map_err(|e| Error::format(r.what, e.to_string()))?;
    let mut cores = Vec::with_capacity(d);
    for k in 0..d {
        cores.push(r.floats(shape.core_len(k), width)?);
    }
    let bias = match r.u8()? {
        0 => None,
        1 => Some(r.floats(shape.output_dim(), width)?),
        other => return Err(Error::format(r.what, format!("bias flag {other}"))),
    };
    TtLinear::from_cores(shape, cores, bias).map_err(|e| Error::format(r.what, e.to_string()))
}

pub fn encode_model(model: &TensorNet, width: FloatWidth) -> Vec<u8> {
    let mut w = Writer { buf: Vec::new(), width };
    w.buf.extend_from_slice(MODEL_MAGIC);
    w.buf.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    w.u8(width.bytes() as u8);
    w.buf.extend_from_slice(&model.seed.to_le_bytes());
    w.buf.extend_from_slice(&model.dropout.to_le_bytes());
    w.u32(model.lstm.len() + 2);
    for cell in &model.lstm {
        w.u8(KIND_LSTM);
        write_ttl(&mut w, &cell.gates);
        w.floats(&cell.gate_bias);
        w.u32(cell.input_factors().len());
        for &f in cell.input_factors() {
            w.u32(f);
        }
    }
    w.u8(KIND_DENSE);
    write_ttl(&mut w, &model.dense);
    w.u8(KIND_OUTPUT);
    write_ttl(&mut w, &model.output);
    let crc = crc32fast::hash(&w.buf);
    w.buf.extend_from_slice(&crc.to_le_bytes());
    w.buf
}

/// Parses and validates a model file image.
pub fn decode_model(bytes: &[u8]) -> Result<TensorNet> {
    const WHAT: &str = "model file";
    let mut r = Reader::new(bytes, WHAT);
    if r.take(4)? != MODEL_MAGIC {
        return Err(Error::format(WHAT, "bad magic"));
    }
    let version = r.u32()?;
    if version != MODEL_VERSION {
        return Err(Error::Version {
            what: WHAT,
            found: version,
            supported: MODEL_VERSION,
        });
    }
    if bytes.len() < 12 {
        return Err(Error::format(WHAT, "truncated before checksum"));
    }
    let (payload, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    let computed = crc32fast::hash(payload);
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }
    let mut r = Reader::new(payload, WHAT);
    r.pos = 8;
    let width = FloatWidth::from_byte(r.u8()?, WHAT)?;
    let seed = r.u64()?;
    let dropout = r.f64()?;
    if !(0.0..1.0).contains(&dropout) {
        return Err(Error::format(WHAT, format!("dropout {dropout} outside [0, 1)")));
    }
    let layers = r.u32()? as usize;
    if !(3..=MAX_LAYERS).contains(&layers) {
        return Err(Error::format(WHAT, format!("layer count {layers} out of range")));
    }
    let mut lstm = Vec::new();
    let mut dense = None;
    let mut output = None;
    for idx in 0..layers {
        let kind = r.u8()?;
        let expected = if idx < layers - 2 {
            KIND_LSTM
        } else if idx == layers - 2 {
            KIND_DENSE
        } else {
            KIND_OUTPUT
        };
        if kind != expected {
            return Err(Error::format(
                WHAT,
                format!("layer {} has kind {}, expected {}", idx + 1, kind, expected),
            ));
        }
        let ttl = read_ttl(&mut r, width)?;
        match kind {
            KIND_LSTM => {
                let hidden = ttl.shape().block_dim();
                let gate_bias = r.floats(4 * hidden, width)?;
                let n = r.u32()? as usize;
                if n == 0 || n > MAX_CORES {
                    return Err(Error::format(WHAT, format!("{n} input factors")));
                }
                let factors = r.dims(n)?;
                if factors.contains(&0) {
                    return Err(Error::format(WHAT, "zero input factor"));
                }
                let cell =
                    TtLstmCell::from_parts(ttl, gate_bias, factors).map_err(|e| Error::format(WHAT, e.to_string()))?;
                lstm.push(cell);
            }
            KIND_DENSE => dense = Some(ttl),
            _ => output = Some(ttl),
        }
    }
    if !r.finished() {
        return Err(Error::format(WHAT, "trailing bytes after the last layer"));
    }
    let (dense, output) = match (dense, output) {
        (Some(d), Some(o)) if d.bias.is_some() && o.bias.is_some() => (d, o),
        _ => return Err(Error::format(WHAT, "dense and output layers need biases")),
    };
    let model = TensorNet {
        lstm,
        dense,
        output,
        dropout,
        seed,
    };
    model
        .architecture()
        .validate()
        .map_err(|e| Error::format(WHAT, format!("dimension chain: {e}")))?;
    Ok(model)
}

pub fn save_model(model: &TensorNet, path: &Path, width: FloatWidth) -> Result<()> {
    std::fs::write(path, encode_model(model, width))?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<TensorNet> {
    decode_model(&std::fs::read(path)?)
}

/// `TTFM` header plus row-major payload.
pub fn encode_grid(grid: &Grid, width: FloatWidth) -> Vec<u8> {
    let mut w = Writer {
        buf: Vec::with_capacity(13 + grid.data().len() * width.bytes()),
        width,
    };
    w.buf.extend_from_slice(DUMP_MAGIC);
    w.u32(grid.rows());
    w.u32(grid.cols());
    w.u8(width.bytes() as u8);
    w.floats(grid.data());
    w.buf
}

pub fn decode_grid(bytes: &[u8]) -> Result<Grid> {
    const WHAT: &str = "feature dump";
    let mut r = Reader::new(bytes, WHAT);
    if r.take(4)? != DUMP_MAGIC {
        return Err(Error::format(WHAT, "bad magic"));
    }
    let rows = r.u32()? as usize;
    let cols = r.u32()? as usize;
    let width = FloatWidth::from_byte(r.u8()?, WHAT)?;
    let n = rows
        .checked_mul(cols)
        .ok_or_else(|| Error::format(WHAT, "size overflows"))?;
    let data = r.floats(n, width)?;
    if !r.finished() {
        return Err(Error::format(WHAT, "trailing bytes"));
    }
    Grid::from_vec(rows, cols, data)
}

pub fn write_grid(path: &Path, grid: &Grid, width: FloatWidth) -> Result<()> {
    std::fs::write(path, encode_grid(grid, width))?;
    Ok(())
}

pub fn read_grid(path: &Path) -> Result<Grid> {
    decode_grid(&std::fs::read(path)?)
}

/// Parses a 16-bit PCM mono 16 kHz WAV image; samples scaled to [-1, 1).
pub fn decode_wav(bytes: &[u8]) -> Result<Waveform> {
    let reader = hound::WavReader::new(Cursor::new(bytes)).map_err(|e| Error::format("WAV file", e.to_string()))?;
    let spec = reader.spec();
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::UnsupportedAudio(format!(
            "{} {}-bit samples, expected 16-bit PCM",
            if spec.sample_format == hound::SampleFormat::Int {
                "integer"
            } else {
                "float"
            },
            spec.bits_per_sample
        )));
    }
    if spec.channels != 1 {
        return Err(Error::UnsupportedAudio(format!(
            "{} channels, expected mono",
            spec.channels
        )));
    }
    if spec.sample_rate != SAMPLE_RATE {
        return Err(Error::UnsupportedAudio(format!(
            "sample rate {} Hz, expected {} Hz",
            spec.sample_rate, SAMPLE_RATE
        )));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f64 / 32768.0))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Error::format("WAV file", e.to_string()))?;
    Waveform::new(samples, SAMPLE_RATE)
}

/// Quantizes to 16-bit PCM (rounded, clamped).
pub fn quantize(x: f64) -> i16 {
    (x * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

pub fn encode_wav_pcm(samples: &[i16]) -> Result<Vec<u8>> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: SAMPLE_RATE,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut cursor = Cursor::new(Vec::new());
    {
        let mut w = hound::WavWriter::new(&mut cursor, spec).map_err(|e| Error::format("WAV file", e.to_string()))?;
        for &s in samples {
            w.write_sample(s)
                .map_err(|e| Error::format("WAV file", e.to_string()))?;
        }
        w.finalize().map_err(|e| Error::format("WAV file", e.to_string()))?;
    }
    Ok(cursor.into_inner())
}

pub fn encode_wav(wave: &Waveform) -> Result<Vec<u8>> {
    let pcm: Vec<i16> = wave.samples.iter().map(|&v| quantize(v)).collect();
    encode_wav_pcm(&pcm)
}

pub fn read_wav(path: &Path) -> Result<Waveform> {
    decode_wav(&std::fs::read(path)?)
}

pub fn write_wav(path: &Path, wave: &Waveform) -> Result<()> {
    std::fs::write(path, encode_wav(wave)?)?;
    Ok(())
}
