//! File formats: PFM depth maps, PGM/PNG grayscale loaders, and the model
//! checkpoint container.
//!
//! # PFM
//! Grayscale maps are stored as standard PFM: header `Pf\n<width>
//! <height>\n-1.0\n` followed by `width * height` 32-bit floats, rows
//! bottom-to-top, little-endian (the negative scale marks the byte order).
//! Values are converted from the internal 64-bit representation on write.
//!
//! # Checkpoint byte layout (version 1, all integers little-endian)
//! ```text
//! offset  size  field
//! 0       8     magic "DSRCKPT1"
//! 8       4     version: u32 = 1
//! 12      4     layer count: u32
//! --- per layer ---
//!         4     in_channels: u32
//!         4     out_channels: u32
//!         1     activation: u8 (0 = rectifier, 1 = none)
//!         8*out                 bias: f64 each
//!         8*out*in*9            kernel: f64, layout [out][in][ky][kx]
//! --- solver parameters ---
//!         8*10  alpha0, alpha1, beta, gamma, w_lambda,
//!               sigma_p, sigma_q, tau_u, tau_v, theta: f64 each
//!         8     iters: u64
//! --- metadata ---
//!         4     JSON byte length: u32
//!         n     UTF-8 JSON: CheckpointMeta
//! ```

use crate::error::{Error, Result};
use crate::field::Field2D;
use crate::net::{Activation, ConvLayer, ConvNet};
use crate::solver::SolverParams;
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use sha2::{Digest, Sha256};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

fn wrap_io<T>(path: &Path, r: std::io::Result<T>) -> Result<T> {
    r.map_err(|e| Error::io(path, e))
}

/// Write a single-channel field as little-endian 32-bit PFM.
pub fn write_pfm(path: &Path, field: &Field2D) -> Result<()> {
    if field.channels() != 1 {
        return Err(Error::InvalidArgument(
            "PFM writer expects a single-channel field".into(),
        ));
    }
    let mut w = BufWriter::new(wrap_io(path, File::create(path))?);
    wrap_io(
        path,
        write!(w, "Pf\n{} {}\n-1.0\n", field.width(), field.height()),
    )?;
    // PFM stores rows bottom-to-top
    for y in (0..field.height()).rev() {
        for x in 0..field.width() {
            wrap_io(path, w.write_f32::<LittleEndian>(field.at(0, y, x) as f32))?;
        }
    }
    wrap_io(path, w.flush())
}

fn read_pfm_token(path: &Path, r: &mut impl Read) -> Result<String> {
    // tokens separated by single whitespace bytes, per the PFM convention
    let mut tok = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        wrap_io(path, r.read_exact(&mut byte))?;
        if byte[0].is_ascii_whitespace() {
            if tok.is_empty() {
                continue;
            }
            break;
        }
        tok.push(byte[0]);
    }
    String::from_utf8(tok).map_err(|_| Error::format(path, "non-UTF-8 header token"))
}

/// Read a grayscale PFM file into a single-channel field.
pub fn read_pfm(path: &Path) -> Result<Field2D> {
    let mut r = BufReader::new(wrap_io(path, File::open(path))?);
    let magic = read_pfm_token(path, &mut r)?;
    if magic != "Pf" {
        return Err(Error::format(
            path,
            format!("expected grayscale PFM magic 'Pf', found '{magic}'"),
        ));
    }
    let parse = |t: String| -> Result<f64> {
        t.parse()
            .map_err(|_| Error::format(path, format!("bad header number '{t}'")))
    };
    let width = parse(read_pfm_token(path, &mut r)?)? as usize;
    let height = parse(read_pfm_token(path, &mut r)?)? as usize;
    let scale = parse(read_pfm_token(path, &mut r)?)?;
    if width == 0 || height == 0 {
        return Err(Error::format(path, "zero image dimension"));
    }
    let little_endian = scale < 0.0;
    let mut out = Field2D::zeros(1, height, width);
    for y in (0..height).rev() {
        for x in 0..width {
            let v = if little_endian {
                wrap_io(path, r.read_f32::<LittleEndian>())?
            } else {
                wrap_io(path, r.read_f32::<byteorder::BigEndian>())?
            };
            *out.at_mut(0, y, x) = v as f64;
        }
    }
    Ok(out)
}

/// Read a binary PGM (P5), 8- or 16-bit.
pub fn read_pgm(path: &Path) -> Result<Field2D> {
    let mut r = BufReader::new(wrap_io(path, File::open(path))?);
    let mut header = Vec::new();
    // PGM allows comments; collect tokens skipping '#' lines
    let mut tokens = Vec::new();
    while tokens.len() < 4 {
        let mut line = Vec::new();
        wrap_io(path, r.read_until(b'\n', &mut line))?;
        if line.is_empty() {
            return Err(Error::format(path, "truncated PGM header"));
        }
        header.extend_from_slice(&line);
        let text = String::from_utf8_lossy(&line);
        let text = text.split('#').next().unwrap_or("");
        tokens.extend(text.split_whitespace().map(str::to_owned));
    }
    if tokens[0] != "P5" {
        return Err(Error::format(path, "expected binary PGM magic 'P5'"));
    }
    let num = |s: &str| -> Result<usize> {
        s.parse()
            .map_err(|_| Error::format(path, format!("bad header number '{s}'")))
    };
    let (width, height, maxval) = (num(&tokens[1])?, num(&tokens[2])?, num(&tokens[3])?);
    let mut out = Field2D::zeros(1, height, width);
    for y in 0..height {
        for x in 0..width {
            let v = if maxval > 255 {
                wrap_io(path, r.read_u16::<byteorder::BigEndian>())? as f64
            } else {
                wrap_io(path, r.read_u8())? as f64
            };
            *out.at_mut(0, y, x) = v;
        }
    }
    Ok(out)
}

/// Read an 8- or 16-bit grayscale PNG.
pub fn read_png(path: &Path) -> Result<Field2D> {
    let file = wrap_io(path, File::open(path))?;
    let decoder = png::Decoder::new(BufReader::new(file));
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::format(path, format!("PNG decode: {e}")))?;
    let mut buf = vec![0u8; reader.output_buffer_size()];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::format(path, format!("PNG decode: {e}")))?;
    if info.color_type != png::ColorType::Grayscale {
        return Err(Error::format(path, "only grayscale PNG is supported"));
    }
    let (width, height) = (info.width as usize, info.height as usize);
    let mut out = Field2D::zeros(1, height, width);
    match info.bit_depth {
        png::BitDepth::Eight => {
            for i in 0..width * height {
                out.data_mut()[i] = buf[i] as f64;
            }
        }
        png::BitDepth::Sixteen => {
            for i in 0..width * height {
                out.data_mut()[i] = u16::from_be_bytes([buf[2 * i], buf[2 * i + 1]]) as f64;
            }
        }
        other => {
            return Err(Error::format(
                path,
                format!("unsupported PNG bit depth {other:?}"),
            ))
        }
    }
    Ok(out)
}

/// Write a field as an 8-bit grayscale PNG, linearly mapping
/// [min, max] to [0, 255] (for error-map inspection).
pub fn write_png_gray(path: &Path, field: &Field2D, min: f64, max: f64) -> Result<()> {
    if field.channels() != 1 {
        return Err(Error::InvalidArgument(
            "PNG writer expects a single-channel field".into(),
        ));
    }
    let span = (max - min).max(f64::MIN_POSITIVE);
    let bytes: Vec<u8> = field
        .data()
        .iter()
        .map(|&v| (((v - min) / span).clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let file = wrap_io(path, File::create(path))?;
    let mut encoder = png::Encoder::new(
        BufWriter::new(file),
        field.width() as u32,
        field.height() as u32,
    );
    encoder.set_color(png::ColorType::Grayscale);
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder
        .write_header()
        .map_err(|e| Error::format(path, format!("PNG encode: {e}")))?;
    writer
        .write_image_data(&bytes)
        .map_err(|e| Error::format(path, format!("PNG encode: {e}")))?;
    Ok(())
}

/// Load a depth/disparity file by extension (pfm/pgm/png). Zero-valued
/// pixels conventionally mark invalid measurements; see `metrics::mask_valid`.
pub fn read_depth(path: &Path) -> Result<Field2D> {
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .as_deref()
    {
        Some("pfm") => read_pfm(path),
        Some("pgm") => read_pgm(path),
        Some("png") => read_png(path),
        other => Err(Error::format(
            path,
            format!("unsupported depth file extension {other:?}"),
        )),
    }
}

/// Hex SHA-256 of a file's contents.
pub fn sha256_file(path: &Path) -> Result<String> {
    let mut f = wrap_io(path, File::open(path))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 65536];
    loop {
        let n = wrap_io(path, f.read(&mut buf))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex(&hasher.finalize()))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Training metadata stored inside a checkpoint.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CheckpointMeta {
    /// Multiplicative factor applied to raw depth values before they enter
    /// the network and solver (and inverted on output).
    pub value_scale: f64,
    /// "pretrain" or "joint".
    pub stage: String,
    pub epochs_completed: usize,
    pub final_train_loss: f64,
    pub rng_seed: u64,
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"DSRCKPT1";
const CHECKPOINT_VERSION: u32 = 1;

/// A trained model: network weights, solver scalars, and provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub net: ConvNet,
    pub params: SolverParams,
    pub meta: CheckpointMeta,
}

pub fn write_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let mut w = BufWriter::new(wrap_io(path, File::create(path))?);
    let io = |r: std::io::Result<()>| wrap_io(path, r);
    io(w.write_all(CHECKPOINT_MAGIC))?;
    io(w.write_u32::<LittleEndian>(CHECKPOINT_VERSION))?;
    io(w.write_u32::<LittleEndian>(ckpt.net.layers.len() as u32))?;
    for layer in &ckpt.net.layers {
        io(w.write_u32::<LittleEndian>(layer.in_channels as u32))?;
        io(w.write_u32::<LittleEndian>(layer.out_channels as u32))?;
        io(w.write_u8(match layer.activation {
            Activation::Rectifier => 0,
            Activation::None => 1,
        }))?;
        for &b in &layer.bias {
            io(w.write_f64::<LittleEndian>(b))?;
        }
        for &k in &layer.kernel {
            io(w.write_f64::<LittleEndian>(k))?;
        }
    }
    let p = &ckpt.params;
    for v in [
        p.alpha0, p.alpha1, p.beta, p.gamma, p.w_lambda, p.sigma_p, p.sigma_q, p.tau_u, p.tau_v,
        p.theta,
    ] {
        io(w.write_f64::<LittleEndian>(v))?;
    }
    io(w.write_u64::<LittleEndian>(p.iters as u64))?;
    let meta = serde_json::to_vec(&ckpt.meta).map_err(|e| Error::Checkpoint(e.to_string()))?;
    io(w.write_u32::<LittleEndian>(meta.len() as u32))?;
    io(w.write_all(&meta))?;
    wrap_io(path, w.flush())
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut r = BufReader::new(wrap_io(path, File::open(path))?);
    let mut magic = [0u8; 8];
    wrap_io(path, r.read_exact(&mut magic))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint(format!(
            "{}: bad magic (not a checkpoint file)",
            path.display()
        )));
    }
    let version = wrap_io(path, r.read_u32::<LittleEndian>())?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "{}: unsupported checkpoint version {version}",
            path.display()
        )));
    }
    let n_layers = wrap_io(path, r.read_u32::<LittleEndian>())? as usize;
    if n_layers == 0 || n_layers > 1024 {
        return Err(Error::Checkpoint(format!(
            "{}: implausible layer count {n_layers}",
            path.display()
        )));
    }
    let mut layers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let in_channels = wrap_io(path, r.read_u32::<LittleEndian>())? as usize;
        let out_channels = wrap_io(path, r.read_u32::<LittleEndian>())? as usize;
        let activation = match wrap_io(path, r.read_u8())? {
            0 => Activation::Rectifier,
            1 => Activation::None,
            other => {
                return Err(Error::Checkpoint(format!(
                    "{}: unknown activation code {other}",
                    path.display()
                )))
            }
        };
        let mut layer = ConvLayer::zeros(in_channels, out_channels, activation);
        for b in &mut layer.bias {
            *b = wrap_io(path, r.read_f64::<LittleEndian>())?;
        }
        for k in &mut layer.kernel {
            *k = wrap_io(path, r.read_f64::<LittleEndian>())?;
        }
        layers.push(layer);
    }
    let mut s = [0.0f64; 10];
    for v in &mut s {
        *v = wrap_io(path, r.read_f64::<LittleEndian>())?;
    }
    let iters = wrap_io(path, r.read_u64::<LittleEndian>())? as usize;
    let params = SolverParams {
        alpha0: s[0],
        alpha1: s[1],
        beta: s[2],
        gamma: s[3],
        w_lambda: s[4],
        sigma_p: s[5],
        sigma_q: s[6],
        tau_u: s[7],
        tau_v: s[8],
        theta: s[9],
        iters,
    };
    let meta_len = wrap_io(path, r.read_u32::<LittleEndian>())? as usize;
    let mut meta_buf = vec![0u8; meta_len];
    wrap_io(path, r.read_exact(&mut meta_buf))?;
    let meta = serde_json::from_slice(&meta_buf)
        .map_err(|e| Error::Checkpoint(format!("{}: metadata: {e}", path.display())))?;
    Ok(Checkpoint {
        net: ConvNet { layers },
        params,
        meta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tmp() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    #[test]
    fn pfm_round_trip_preserves_f32_values() {
        let dir = tmp();
        let path = dir.path().join("depth.pfm");
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut f = Field2D::zeros(1, 5, 7);
        for v in f.data_mut() {
            *v = rng.gen_range(100.0..5000.0f64) as f32 as f64;
        }
        write_pfm(&path, &f).unwrap();
        let back = read_pfm(&path).unwrap();
        assert_eq!(f, back);
    }

    #[test]
    fn pfm_rejects_color_magic() {
        let dir = tmp();
        let path = dir.path().join("bad.pfm");
        std::fs::write(&path, b"PF\n2 2\n-1.0\n").unwrap();
        let err = read_pfm(&path).unwrap_err();
        assert!(err.to_string().contains("Pf"));
    }

    #[test]
    fn pgm_8_and_16_bit() {
        let dir = tmp();
        let p8 = dir.path().join("a.pgm");
        std::fs::write(&p8, b"P5\n# comment\n2 2\n255\n\x00\x7f\xff\x01").unwrap();
        let f = read_pgm(&p8).unwrap();
        assert_eq!(f.data(), &[0.0, 127.0, 255.0, 1.0]);

        let p16 = dir.path().join("b.pgm");
        // 16-bit PGM samples are big-endian
        std::fs::write(&p16, b"P5\n2 1\n65535\n\x01\x00\xff\xfe").unwrap();
        let f = read_pgm(&p16).unwrap();
        assert_eq!(f.data(), &[256.0, 65534.0]);
    }

    #[test]
    fn png_round_trip_via_writer() {
        let dir = tmp();
        let path = dir.path().join("gray.png");
        let f = Field2D::from_fn(4, 3, |y, x| (y * 3 + x) as f64);
        write_png_gray(&path, &f, 0.0, 11.0).unwrap();
        let back = read_png(&path).unwrap();
        assert_eq!(back.height(), 4);
        assert_eq!(back.width(), 3);
        assert_eq!(back.at(0, 0, 0), 0.0);
        assert_eq!(back.at(0, 3, 2), 255.0);
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let dir = tmp();
        let path = dir.path().join("model.ckpt");
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = crate::net::ConvNet::new(3, 4, &mut rng);
        let ckpt = Checkpoint {
            net,
            params: SolverParams::default(),
            meta: CheckpointMeta {
                value_scale: 1e-3,
                stage: "pretrain".into(),
                epochs_completed: 7,
                final_train_loss: 0.123,
                rng_seed: 99,
            },
        };
        write_checkpoint(&path, &ckpt).unwrap();
        let back = read_checkpoint(&path).unwrap();
        assert_eq!(ckpt, back);
    }

    #[test]
    fn checkpoint_rejects_garbage() {
        let dir = tmp();
        let path = dir.path().join("junk.ckpt");
        std::fs::write(&path, b"not a checkpoint at all").unwrap();
        assert!(read_checkpoint(&path).is_err());
    }

    #[test]
    fn sha256_matches_known_vector() {
        let dir = tmp();
        let path = dir.path().join("abc.txt");
        std::fs::write(&path, b"abc").unwrap();
        assert_eq!(
            sha256_file(&path).unwrap(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
