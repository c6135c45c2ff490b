//! Binary formats for datasets (`RGDS`), autoencoder checkpoints (`DNAE`)
//! and mixture models (`GMM1`), plus 16-bit PGM images.
//!
//! All three binary formats are little-endian, carry a magic tag and a
//! version, and are rejected as a whole on any inconsistency.

use std::path::Path;

use ndarray::{Array1, ArrayView1};

use crate::datapipe::{Dataset, Image, Sample, Split};
use crate::dnnae::{ArchSpec, DnnaeModel, Regularizer};
use crate::error::{Error, Result};
use crate::gmm::{Covariances, GmmModel};
use crate::neural::{AdamState, DenseLayer, Matrix};
use crate::Label;

pub const DATASET_MAGIC: &[u8; 4] = b"RGDS";
pub const CHECKPOINT_MAGIC: &[u8; 4] = b"DNAE";
pub const GMM_MAGIC: &[u8; 4] = b"GMM1";
pub const FORMAT_VERSION: u32 = 1;

/// Write via a temporary sibling file and rename, so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| Error::validation("path has no file name"))?;
    let tmp = dir.join(format!(
        ".{}.tmp{}",
        name.to_string_lossy(),
        std::process::id()
    ));
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: usize) {
        let v = u32::try_from(v).expect("value fits the u32 header field");
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f32s<'a>(&mut self, vs: impl IntoIterator<Item = &'a f64>) {
        for &v in vs {
            self.0.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    fn f64s<'a>(&mut self, vs: impl IntoIterator<Item = &'a f64>) {
        for &v in vs {
            self.f64(v);
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn offset(&self) -> u64 {
        self.pos as u64
    }

    fn fail(&self, msg: impl Into<String>) -> Error {
        Error::format(self.offset(), msg)
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let left = self.buf.len() - self.pos;
        if n > left {
            return Err(self.fail(format!(
                "truncated while reading {what}: expected {n} more bytes, file has {left} \
                 (expected length at least {}, actual {})",
                self.pos + n,
                self.buf.len()
            )));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn magic(&mut self, expect: &[u8; 4]) -> Result<()> {
        let got = self.take(4, "magic")?;
        if got != expect {
            return Err(Error::format(
                0,
                format!(
                    "bad magic {:?}, expected {:?}",
                    String::from_utf8_lossy(got),
                    String::from_utf8_lossy(expect)
                ),
            ));
        }
        let at = self.offset();
        let version = self.u32("version")?;
        if version != FORMAT_VERSION {
            return Err(Error::format(
                at,
                format!("unsupported version {version}, expected {FORMAT_VERSION}"),
            ));
        }
        Ok(())
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }
    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()))
    }
    fn u64(&mut self, what: &str) -> Result<u64> {
        let b = self.take(8, what)?;
        Ok(u64::from_le_bytes(b.try_into().unwrap()))
    }
    fn f64(&mut self, what: &str) -> Result<f64> {
        let b = self.take(8, what)?;
        Ok(f64::from_le_bytes(b.try_into().unwrap()))
    }
    fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let b = self.take(n * 4, what)?;
        Ok(b.chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect())
    }
    fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let b = self.take(n * 8, what)?;
        Ok(b.chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    /// Length check made before bulk reads so a bad header fails fast.
    fn expect_remaining(&self, n: usize) -> Result<()> {
        let left = self.buf.len() - self.pos;
        if left != n {
            return Err(self.fail(format!(
                "length inconsistent with header: expected {} bytes, actual {}",
                self.pos + n,
                self.buf.len()
            )));
        }
        Ok(())
    }

    fn finish(&self) -> Result<()> {
        self.expect_remaining(0)
    }
}

// ---------------------------------------------------------------- datasets

pub fn encode_dataset(ds: &Dataset) -> Result<Vec<u8>> {
    let px = (ds.height * ds.width) as usize;
    let mut w = Writer::default();
    w.0.extend_from_slice(DATASET_MAGIC);
    w.u32(FORMAT_VERSION as usize);
    w.u32(ds.samples.len());
    w.u32(ds.height as usize);
    w.u32(ds.width as usize);
    for (i, s) in ds.samples.iter().enumerate() {
        if s.pixels.len() != px {
            return Err(Error::shape(format!(
                "sample {i} has {} pixels, expected {px}",
                s.pixels.len()
            )));
        }
        w.u8(s.label.index() as u8);
        w.u8(s.split as u8);
        w.u32(s.origin_id as usize);
        w.u32(s.aug_index as usize);
        for &v in &s.pixels {
            w.0.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(w.0)
}

pub fn decode_dataset(bytes: &[u8]) -> Result<Dataset> {
    let mut r = Reader::new(bytes);
    r.magic(DATASET_MAGIC)?;
    let count = r.u32("record count")? as usize;
    let height = r.u32("height")?;
    let width = r.u32("width")?;
    let px = height as usize * width as usize;
    let rec = 10 + 4 * px;
    r.expect_remaining(count * rec)?;
    let mut samples = Vec::with_capacity(count);
    for _ in 0..count {
        let at = r.offset();
        let label = r.u8("label")?;
        let label = Label::from_index(label)
            .ok_or_else(|| Error::format(at, format!("invalid label {label}")))?;
        let split = r.u8("split")?;
        let split = Split::from_index(split)
            .ok_or_else(|| Error::format(at + 1, format!("invalid split {split}")))?;
        let origin_id = r.u32("origin id")?;
        let aug_index = r.u32("aug index")?;
        let at = r.offset();
        let pixels: Vec<f32> = r
            .take(4 * px, "pixels")?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if let Some(v) = pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::format(at, format!("pixel {v} outside [0, 1]")));
        }
        samples.push(Sample {
            pixels,
            label,
            split,
            origin_id,
            aug_index,
        });
    }
    r.finish()?;
    Ok(Dataset {
        height,
        width,
        samples,
    })
}

pub fn save_dataset(path: &Path, ds: &Dataset) -> Result<()> {
    write_atomic(path, &encode_dataset(ds)?)
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    decode_dataset(&read_file(path)?)
}

// ------------------------------------------------------------- checkpoints

fn regularizer_code(r: Regularizer) -> u8 {
    match r {
        Regularizer::Bn => 0,
        Regularizer::Dropout => 1,
        Regularizer::None => 2,
    }
}

/// Serialize a model. Values are stored as `f32`; Adam state is included
/// only when `with_optimizer` is set.
pub fn encode_checkpoint(model: &DnnaeModel, with_optimizer: bool) -> Vec<u8> {
    let a = &model.arch;
    let mut w = Writer::default();
    w.0.extend_from_slice(CHECKPOINT_MAGIC);
    w.u32(FORMAT_VERSION as usize);
    w.u32(a.input_side);
    w.u32(a.encoder_widths.len());
    for &x in &a.encoder_widths {
        w.u32(x);
    }
    w.u32(a.code_len);
    w.u8(regularizer_code(a.regularizer));
    w.f64(a.keep_prob);
    w.u32(a.n_classes);

    let blocks: Vec<&DenseLayer> = model.blocks().collect();
    w.u32(blocks.len());
    for (layer, adam) in blocks.iter().zip(&model.adam) {
        w.u32(layer.input_dim());
        w.u32(layer.output_dim());
        w.u8(layer.has_bn() as u8);
        w.u8(with_optimizer as u8);
        w.f32s(layer.weights.iter());
        w.f32s(layer.bias.iter());
        if let Some(bn) = &layer.bn {
            w.f32s(bn.gamma.iter());
            w.f32s(bn.beta.iter());
            w.f32s(bn.running_mean.iter());
            w.f32s(bn.running_var.iter());
        }
        if with_optimizer {
            w.u64(adam.t);
            w.f32s(adam.m.iter());
            w.f32s(adam.v.iter());
        }
    }
    w.0
}

fn read_arr(r: &mut Reader, n: usize, what: &str) -> Result<Array1<f64>> {
    Ok(Array1::from(r.f32s(n, what)?))
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<DnnaeModel> {
    let mut r = Reader::new(bytes);
    r.magic(CHECKPOINT_MAGIC)?;
    let input_side = r.u32("input side")? as usize;
    let n_enc = r.u32("encoder depth")? as usize;
    if n_enc > 64 {
        return Err(r.fail(format!("implausible encoder depth {n_enc}")));
    }
    let encoder_widths = (0..n_enc)
        .map(|_| r.u32("encoder width").map(|v| v as usize))
        .collect::<Result<Vec<_>>>()?;
    let code_len = r.u32("code length")? as usize;
    let at = r.offset();
    let regularizer = match r.u8("regularizer")? {
        0 => Regularizer::Bn,
        1 => Regularizer::Dropout,
        2 => Regularizer::None,
        other => return Err(Error::format(at, format!("invalid regularizer {other}"))),
    };
    let keep_prob = r.f64("keep probability")?;
    let n_classes = r.u32("class count")? as usize;
    let arch = ArchSpec {
        input_side,
        decoder_widths: encoder_widths.iter().rev().copied().collect(),
        encoder_widths,
        code_len,
        regularizer,
        keep_prob,
        n_classes,
    };
    let at = r.offset();
    let mut model =
        DnnaeModel::zeros(arch).map_err(|e| Error::format(at, format!("bad architecture: {e}")))?;

    let n_blocks = r.u32("block count")? as usize;
    let expect_blocks = model.chain.len() + 1;
    if n_blocks != expect_blocks {
        return Err(Error::format(
            at,
            format!("architecture implies {expect_blocks} blocks, header says {n_blocks}"),
        ));
    }
    for b in 0..n_blocks {
        let at = r.offset();
        let (din, dout) = (
            r.u32("block input")? as usize,
            r.u32("block output")? as usize,
        );
        let has_bn = r.u8("bn flag")? != 0;
        let has_adam = r.u8("optimizer flag")? != 0;
        let layer = if b < model.chain.len() {
            &mut model.chain[b]
        } else {
            &mut model.head
        };
        if (din, dout, has_bn) != (layer.input_dim(), layer.output_dim(), layer.has_bn()) {
            return Err(Error::format(
                at,
                format!(
                    "block {b} is {din}x{dout} (bn {has_bn}), architecture expects {}x{} (bn {})",
                    layer.input_dim(),
                    layer.output_dim(),
                    layer.has_bn()
                ),
            ));
        }
        layer.weights = Matrix::from_shape_vec((dout, din), r.f32s(dout * din, "weights")?)
            .expect("length checked by reader");
        layer.bias = read_arr(&mut r, dout, "bias")?;
        if let Some(bn) = layer.bn.as_mut() {
            bn.gamma = read_arr(&mut r, dout, "gamma")?;
            bn.beta = read_arr(&mut r, dout, "beta")?;
            bn.running_mean = read_arr(&mut r, dout, "running mean")?;
            bn.running_var = read_arr(&mut r, dout, "running variance")?;
        }
        let n = layer.param_count();
        if has_adam {
            let t = r.u64("optimizer step")?;
            let m = r.f32s(n, "first moment")?;
            let v = r.f32s(n, "second moment")?;
            model.adam[b] = AdamState {
                m,
                v,
                t,
                ..AdamState::new(n)
            };
        }
    }
    r.finish()?;
    Ok(model)
}

pub fn save_checkpoint(path: &Path, model: &DnnaeModel, with_optimizer: bool) -> Result<()> {
    write_atomic(path, &encode_checkpoint(model, with_optimizer))
}

pub fn load_checkpoint(path: &Path) -> Result<DnnaeModel> {
    decode_checkpoint(&read_file(path)?)
}

// -------------------------------------------------------------------- GMMs

pub fn encode_gmm(model: &GmmModel) -> Vec<u8> {
    let (k, m) = (model.k(), model.dim());
    let mut w = Writer::default();
    w.0.extend_from_slice(GMM_MAGIC);
    w.u32(FORMAT_VERSION as usize);
    w.u32(k);
    w.u32(m);
    match &model.covariances {
        Covariances::Diag(d) => {
            w.u8(0);
            for j in 0..k {
                w.f64(model.weights[j]);
                w.f64s(model.means.row(j));
                w.f64s(d.row(j));
            }
        }
        Covariances::Full(c) => {
            w.u8(1);
            for j in 0..k {
                w.f64(model.weights[j]);
                w.f64s(model.means.row(j));
                w.f64s(c[j].iter());
            }
        }
    }
    w.0
}

/// Decode and validate (simplex weights, symmetric positive-definite covariances).
pub fn decode_gmm(bytes: &[u8]) -> Result<GmmModel> {
    let mut r = Reader::new(bytes);
    r.magic(GMM_MAGIC)?;
    let k = r.u32("component count")? as usize;
    let m = r.u32("dimension")? as usize;
    let at = r.offset();
    let full = match r.u8("covariance type")? {
        0 => false,
        1 => true,
        other => {
            return Err(Error::format(
                at,
                format!("invalid covariance type {other}"),
            ))
        }
    };
    let cov_len = if full { m * m } else { m };
    r.expect_remaining(k * 8 * (1 + m + cov_len))?;
    let mut weights = Vec::with_capacity(k);
    let mut means = Matrix::zeros((k, m));
    let mut diag = Matrix::zeros((if full { 0 } else { k }, m));
    let mut fulls = Vec::new();
    for j in 0..k {
        weights.push(r.f64("weight")?);
        means
            .row_mut(j)
            .assign(&ArrayView1::from(&r.f64s(m, "mean")?));
        let cov = r.f64s(cov_len, "covariance")?;
        if full {
            fulls.push(Matrix::from_shape_vec((m, m), cov).expect("length checked"));
        } else {
            diag.row_mut(j).assign(&ArrayView1::from(&cov));
        }
    }
    r.finish()?;
    let model = GmmModel {
        weights,
        means,
        covariances: if full {
            Covariances::Full(fulls)
        } else {
            Covariances::Diag(diag)
        },
        ridge: 0.0,
    };
    model
        .validate()
        .map_err(|e| Error::format(13, format!("invalid mixture: {e}")))?;
    Ok(model)
}

pub fn save_gmm(path: &Path, model: &GmmModel) -> Result<()> {
    write_atomic(path, &encode_gmm(model))
}

pub fn load_gmm(path: &Path) -> Result<GmmModel> {
    decode_gmm(&read_file(path)?)
}

// --------------------------------------------------------------------- PGM

/// `round(v · 65535)` with halves rounded up.
pub fn quantize16(v: f64) -> u16 {
    (v.clamp(0.0, 1.0) * 65535.0 + 0.5).floor() as u16
}

/// Binary P5 with maxval 65535 and big-endian samples.
pub fn encode_pgm(img: &Image) -> Result<Vec<u8>> {
    if let Some(v) = img.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::validation(format!(
            "pixel {v} outside [0, 1] cannot be exported"
        )));
    }
    let (h, w) = img.dim();
    let mut out = format!("P5\n{w} {h}\n65535\n").into_bytes();
    for &v in img {
        out.extend_from_slice(&quantize16(v).to_be_bytes());
    }
    Ok(out)
}

pub fn export_pgm(img: &Image, path: &Path) -> Result<()> {
    write_atomic(path, &encode_pgm(img)?)
}

/// Parse a binary P5 image (8- or 16-bit). Pixels are scaled by `1/maxval`.
pub fn decode_pgm(bytes: &[u8]) -> Result<Image> {
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() && bytes[pos] != b'#' {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format(pos as u64, "truncated PGM header"));
        }
        fields.push((
            start,
            String::from_utf8_lossy(&bytes[start..pos]).into_owned(),
        ));
    }
    if fields[0].1 != "P5" {
        return Err(Error::format(
            0,
            format!("bad PGM magic {:?}, expected P5", fields[0].1),
        ));
    }
    let num = |i: usize| -> Result<usize> {
        fields[i]
            .1
            .parse()
            .map_err(|_| Error::format(fields[i].0 as u64, format!("bad number {:?}", fields[i].1)))
    };
    let (w, h, maxval) = (num(1)?, num(2)?, num(3)?);
    if maxval == 0 || maxval > 65535 {
        return Err(Error::format(
            fields[3].0 as u64,
            format!("bad maxval {maxval}"),
        ));
    }
    pos += 1; // single whitespace byte after maxval
    let bps = if maxval < 256 { 1 } else { 2 };
    let need = w * h * bps;
    let have = bytes.len().saturating_sub(pos);
    if have != need {
        return Err(Error::format(
            pos as u64,
            format!("expected {need} bytes of pixel data, found {have}"),
        ));
    }
    let data = &bytes[pos..];
    let scale = 1.0 / maxval as f64;
    let pixels: Vec<f64> = if bps == 1 {
        data.iter().map(|&b| b as f64 * scale).collect()
    } else {
        data.chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 * scale)
            .collect()
    };
    Ok(Image::from_shape_vec((h, w), pixels).expect("length checked"))
}

pub fn read_pgm(path: &Path) -> Result<Image> {
    decode_pgm(&read_file(path)?)
}
