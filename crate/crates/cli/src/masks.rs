//! Indexed PNG label maps and binary probability sidecars.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use png::{BitDepth, ColorType, Transformations};

/// A decoded label map: one byte per pixel, 0 is background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    pub height: usize,
    pub width: usize,
    pub labels: Vec<u8>,
}

/// The usual VOC/DAVIS colour map: bits of the index spread over RGB.
pub fn palette() -> Vec<u8> {
    let mut out = Vec::with_capacity(256 * 3);
    for i in 0..256u32 {
        let (mut r, mut g, mut b) = (0u8, 0u8, 0u8);
        let mut c = i;
        for j in 0..8 {
            r |= ((c & 1) as u8) << (7 - j);
            g |= (((c >> 1) & 1) as u8) << (7 - j);
            b |= (((c >> 2) & 1) as u8) << (7 - j);
            c >>= 3;
        }
        out.extend_from_slice(&[r, g, b]);
    }
    out
}

/// Reads raw palette indices (or grey levels); the palette itself is ignored.
pub fn read_label_png(path: &Path) -> Result<LabelMap> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(Transformations::IDENTITY);
    let mut reader = decoder
        .read_info()
        .with_context(|| format!("reading PNG header of {}", path.display()))?;
    let size = reader
        .output_buffer_size()
        .context("PNG frame does not fit in memory")?;
    let mut buf = vec![0u8; size];
    let info = reader
        .next_frame(&mut buf)
        .with_context(|| format!("decoding {}", path.display()))?;
    ensure!(
        matches!(info.color_type, ColorType::Indexed | ColorType::Grayscale),
        "{}: label maps must be indexed or greyscale PNGs, found {:?}",
        path.display(),
        info.color_type
    );
    let bits = match info.bit_depth {
        BitDepth::One => 1,
        BitDepth::Two => 2,
        BitDepth::Four => 4,
        BitDepth::Eight => 8,
        BitDepth::Sixteen => bail!("{}: 16-bit label maps are not supported", path.display()),
    };
    let (w, h) = (info.width as usize, info.height as usize);
    let per_byte = 8 / bits;
    let mask = ((1u16 << bits) - 1) as u8;
    let mut labels = Vec::with_capacity(w * h);
    for row in buf.chunks(info.line_size).take(h) {
        for x in 0..w {
            let byte = row[x / per_byte];
            let shift = 8 - bits * (x % per_byte + 1);
            labels.push((byte >> shift) & mask);
        }
    }
    Ok(LabelMap {
        height: h,
        width: w,
        labels,
    })
}

/// Writes an 8-bit indexed PNG with the standard palette.
pub fn write_label_png(path: &Path, map: &LabelMap) -> Result<()> {
    ensure!(
        map.labels.len() == map.height * map.width,
        "label map size does not match {}x{}",
        map.height,
        map.width
    );
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), map.width as u32, map.height as u32);
    encoder.set_color(ColorType::Indexed);
    encoder.set_depth(BitDepth::Eight);
    encoder.set_palette(palette());
    let mut writer = encoder.write_header()?;
    writer.write_image_data(&map.labels)?;
    writer.finish()?;
    Ok(())
}

/// `"VOSP"` read as a little-endian `u32`.
pub const SIDECAR_MAGIC: u32 = u32::from_le_bytes(*b"VOSP");

/// Per-frame object probabilities. Plane `k` belongs to object id `k + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sidecar {
    pub height: usize,
    pub width: usize,
    pub planes: Vec<Vec<f32>>,
}

/// Header `{magic, H, W, K}` as little-endian `u32`, then `K` planes of
/// little-endian `f32` in row-major order.
pub fn write_sidecar(path: &Path, s: &Sidecar) -> Result<()> {
    let mut out = BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    );
    for v in [SIDECAR_MAGIC, s.height as u32, s.width as u32, s.planes.len() as u32] {
        out.write_all(&v.to_le_bytes())?;
    }
    for plane in &s.planes {
        ensure!(plane.len() == s.height * s.width, "sidecar plane has the wrong size");
        for v in plane {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read_sidecar(path: &Path) -> Result<Sidecar> {
    let mut bytes = Vec::new();
    File::open(path)
        .with_context(|| format!("opening {}", path.display()))?
        .read_to_end(&mut bytes)?;
    ensure!(bytes.len() >= 16, "{}: truncated sidecar header", path.display());
    let word = |i: usize| u32::from_le_bytes(bytes[4 * i..4 * i + 4].try_into().unwrap());
    ensure!(
        word(0) == SIDECAR_MAGIC,
        "{}: not a probability sidecar",
        path.display()
    );
    let (h, w, k) = (word(1) as usize, word(2) as usize, word(3) as usize);
    let n = h * w;
    ensure!(
        bytes.len() == 16 + 4 * n * k,
        "{}: expected {} bytes for {k} planes of {h}x{w}, found {}",
        path.display(),
        16 + 4 * n * k,
        bytes.len()
    );
    let planes = bytes[16..]
        .chunks_exact(4 * n.max(1))
        .take(k)
        .map(|plane| {
            plane
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                .collect()
        })
        .collect();
    Ok(Sidecar {
        height: h,
        width: w,
        planes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn palette_starts_like_davis() {
        let p = palette();
        assert_eq!(&p[..12], &[0, 0, 0, 128, 0, 0, 0, 128, 0, 128, 128, 0]);
        assert_eq!(p.len(), 768);
    }

    #[test]
    fn label_png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.png");
        let map = LabelMap {
            height: 3,
            width: 5,
            labels: vec![0, 1, 2, 3, 255, 0, 0, 1, 1, 7, 9, 9, 0, 0, 2],
        };
        write_label_png(&path, &map).unwrap();
        assert_eq!(read_label_png(&path).unwrap(), map);
    }

    #[test]
    fn low_bit_depth_indices_are_unpacked() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m2.png");
        let file = File::create(&path).unwrap();
        let mut enc = png::Encoder::new(BufWriter::new(file), 5, 2);
        enc.set_color(ColorType::Indexed);
        enc.set_depth(BitDepth::Two);
        enc.set_palette(palette()[..12].to_vec());
        let mut w = enc.write_header().unwrap();
        // row 0: 0 1 2 3 | 1 ; row 1: 3 3 0 0 | 2
        w.write_image_data(&[0b0001_1011, 0b0100_0000, 0b1111_0000, 0b1000_0000])
            .unwrap();
        w.finish().unwrap();
        let map = read_label_png(&path).unwrap();
        assert_eq!(map.labels, vec![0, 1, 2, 3, 1, 3, 3, 0, 0, 2]);
    }

    #[test]
    fn sidecar_round_trip_and_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.probs");
        let s = Sidecar {
            height: 2,
            width: 3,
            planes: vec![vec![0.0, 0.25, 0.5, 0.75, 1.0, 0.1], vec![0.5; 6]],
        };
        write_sidecar(&path, &s).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..4], b"VOSP");
        assert_eq!(&bytes[4..16], &[2, 0, 0, 0, 3, 0, 0, 0, 2, 0, 0, 0]);
        assert_eq!(bytes.len(), 16 + 2 * 6 * 4);
        assert_eq!(read_sidecar(&path).unwrap(), s);
        std::fs::write(&path, &bytes[..20]).unwrap();
        assert!(read_sidecar(&path).is_err());
    }
}
