//! Grayscale PGM images, MPCV1 cost volumes, data-term construction and CSV
//! energy reports.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{format_err, Error, Result};
use crate::potentials::UnaryVolume;
use crate::real::Real;
use crate::MAX_LABELS;

/// Row-major grayscale image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub maxval: u16,
    pub data: Vec<u16>,
}

impl Image {
    #[inline]
    pub fn get(&self, y: usize, x: usize) -> u16 {
        self.data[y * self.width + x]
    }
}

/// Reads a P2 or P5 graymap with any maxval up to 65535.
pub fn load_pgm(path: impl AsRef<Path>) -> Result<Image> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    decode_pgm(&bytes)
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    fn skip_space(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                c if c.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self) -> Result<u32> {
        self.skip_space();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| format_err("pgm", format!("expected a number at byte {start}")))
    }
}

pub fn decode_pgm(bytes: &[u8]) -> Result<Image> {
    let ascii = match bytes.get(..2) {
        Some(b"P2") => true,
        Some(b"P5") => false,
        _ => return Err(format_err("pgm", "missing P2/P5 magic")),
    };
    let mut hd = Header { bytes, pos: 2 };
    let (w, h, maxval) = (hd.number()? as usize, hd.number()? as usize, hd.number()?);
    if maxval == 0 || maxval > 65535 {
        return Err(format_err("pgm", format!("maxval {maxval} outside 1..=65535")));
    }
    let n = w.checked_mul(h).ok_or_else(|| format_err("pgm", "size overflows"))?;
    let mut data = Vec::with_capacity(n);
    if ascii {
        for _ in 0..n {
            let v = hd.number().map_err(|_| format_err("pgm", "truncated sample list"))?;
            data.push(v);
        }
    } else {
        // Exactly one whitespace byte separates the header from the samples.
        let start = hd.pos + 1;
        let width = if maxval > 255 { 2 } else { 1 };
        let body = bytes.get(start..start + n * width).ok_or_else(|| format_err("pgm", "truncated payload"))?;
        if width == 1 {
            data.extend(body.iter().map(|&b| b as u32));
        } else {
            data.extend(body.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]]) as u32));
        }
    }
    if data.iter().any(|&v| v > maxval) {
        return Err(format_err("pgm", "sample exceeds maxval"));
    }
    Ok(Image { height: h, width: w, maxval: maxval as u16, data: data.into_iter().map(|v| v as u16).collect() })
}

/// Writes a binary (P5) graymap: 8-bit samples when `maxval < 256`, else
/// 16-bit big-endian.
pub fn save_pgm(path: impl AsRef<Path>, img: &Image) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    encode_pgm(&mut out, img, false)?;
    out.flush()?;
    Ok(())
}

/// Encodes with the image's own maxval; `ascii` selects P2.
pub fn encode_pgm(out: &mut impl Write, img: &Image, ascii: bool) -> Result<()> {
    if img.data.len() != img.height * img.width {
        return Err(Error::Shape("image payload does not match its size".into()));
    }
    if img.maxval == 0 || img.data.iter().any(|&v| v > img.maxval) {
        return Err(format_err("pgm", "sample exceeds maxval"));
    }
    write!(out, "{}\n{} {}\n{}\n", if ascii { "P2" } else { "P5" }, img.width, img.height, img.maxval)?;
    if ascii {
        for row in img.data.chunks(img.width.max(1)) {
            let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            writeln!(out, "{}", line.join(" "))?;
        }
    } else if img.maxval > 255 {
        for v in &img.data {
            out.write_all(&v.to_be_bytes())?;
        }
    } else {
        out.write_all(&img.data.iter().map(|&v| v as u8).collect::<Vec<u8>>())?;
    }
    Ok(())
}

const MPCV_MAGIC: &[u8; 5] = b"MPCV1";

/// Reads an MPCV1 cost volume into a unary volume.
pub fn read_cost_volume(path: impl AsRef<Path>) -> Result<UnaryVolume<f32>> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    decode_cost_volume(&bytes)
}

pub fn decode_cost_volume(bytes: &[u8]) -> Result<UnaryVolume<f32>> {
    let bad = |m: &str| format_err("mpcv", m);
    if bytes.len() < 17 || &bytes[..5] != MPCV_MAGIC {
        return Err(bad("missing MPCV1 header"));
    }
    let u = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes")) as usize;
    let (h, w, l) = (u(5), u(9), u(13));
    if l == 0 || l > MAX_LABELS {
        return Err(Error::LabelCount(l));
    }
    let count = h.checked_mul(w).and_then(|n| n.checked_mul(l)).ok_or_else(|| bad("header overflows"))?;
    let payload = &bytes[17..];
    if payload.len() != count * 4 {
        return Err(bad(&format!("payload has {} bytes, header implies {}", payload.len(), count * 4)));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    UnaryVolume::new(h, w, l, data)
}

pub fn write_cost_volume(path: impl AsRef<Path>, vol: &UnaryVolume<f32>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(&encode_cost_volume(vol)?)?;
    out.flush()?;
    Ok(())
}

pub fn encode_cost_volume(vol: &UnaryVolume<f32>) -> Result<Vec<u8>> {
    if vol.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("cost volume"));
    }
    let mut out = Vec::with_capacity(17 + vol.data.len() * 4);
    out.extend_from_slice(MPCV_MAGIC);
    for d in [vol.height, vol.width, vol.labels] {
        let d = u32::try_from(d).map_err(|_| Error::TooLarge(format!("dimension {d}")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    for v in &vol.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

/// `θ_i(λ) = |left(y, x) − right(y, x − λ)|`, columns left of the border
/// clamped to column 0.
pub fn stereo_unaries<T: Real>(left: &Image, right: &Image, max_disp: usize) -> Result<UnaryVolume<T>> {
    if left.height != right.height || left.width != right.width {
        return Err(Error::Shape(format!(
            "stereo pair sizes differ: {}x{} vs {}x{}",
            left.height, left.width, right.height, right.width
        )));
    }
    let (h, w) = (left.height, left.width);
    let mut data = Vec::with_capacity(h * w * max_disp);
    for y in 0..h {
        for x in 0..w {
            let a = left.get(y, x) as f64;
            for d in 0..max_disp {
                let b = right.get(y, x.saturating_sub(d)) as f64;
                data.push(T::from_f64((a - b).abs()));
            }
        }
    }
    UnaryVolume::new(h, w, max_disp, data)
}

/// `θ_i(λ) = min(|I_i − λ|^p, τ)` for denoising with `labels` intensities.
pub fn denoise_unaries<T: Real>(noisy: &Image, labels: usize, power: u32, tau: f64) -> Result<UnaryVolume<T>> {
    if tau.is_nan() || tau <= 0.0 {
        return Err(Error::InvalidParameter(format!("truncation {tau} must be > 0")));
    }
    if power != 1 && power != 2 {
        return Err(Error::InvalidParameter(format!("data-term power {power} must be 1 or 2")));
    }
    if let Some(&v) = noisy.data.iter().find(|&&v| v as usize >= labels) {
        return Err(Error::InvalidParameter(format!("intensity {v} outside [0, {labels})")));
    }
    let mut data = Vec::with_capacity(noisy.data.len() * labels);
    for &v in &noisy.data {
        for lambda in 0..labels {
            let d = (v as f64 - lambda as f64).abs().powi(power as i32);
            data.push(T::from_f64(d.min(tau)));
        }
    }
    UnaryVolume::new(noisy.height, noisy.width, labels, data)
}

/// Label map as a 16-bit binary graymap.
pub fn labels_to_image(labels: &[u8], height: usize, width: usize) -> Image {
    Image { height, width, maxval: 65535, data: labels.iter().map(|&v| v as u16).collect() }
}

/// One row of an energy report.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyRow {
    pub iteration: usize,
    pub energy: f64,
    pub forward_ms: f64,
}

pub fn write_energy_csv(out: impl Write, rows: &[EnergyRow]) -> Result<()> {
    let csv_err = |e: csv::Error| format_err("csv", e.to_string());
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["iteration", "energy", "forward_ms"]).map_err(csv_err)?;
    for r in rows {
        w.write_record([r.iteration.to_string(), r.energy.to_string(), format!("{:.3}", r.forward_ms)])
            .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_energy_csv(input: impl Read) -> Result<Vec<EnergyRow>> {
    let csv_err = |e: csv::Error| format_err("csv", e.to_string());
    let mut r = csv::Reader::from_reader(input);
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        let field = |i: usize| -> Result<f64> {
            rec.get(i)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| format_err("csv", format!("bad field {i} in {rec:?}")))
        };
        rows.push(EnergyRow { iteration: field(0)? as usize, energy: field(1)?, forward_ms: field(2)? });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ascii_pgm() {
        let img = decode_pgm(b"P2\n2 2\n3\n0 1\n2 3\n").unwrap();
        assert_eq!(img.data, vec![0, 1, 2, 3]);
        assert_eq!((img.height, img.width, img.maxval), (2, 2, 3));
    }

    #[test]
    fn binary_equals_ascii() {
        let img = Image { height: 2, width: 3, maxval: 200, data: vec![0, 7, 200, 13, 99, 1] };
        let (mut a, mut b) = (Vec::new(), Vec::new());
        encode_pgm(&mut a, &img, true).unwrap();
        encode_pgm(&mut b, &img, false).unwrap();
        assert_eq!(decode_pgm(&a).unwrap(), decode_pgm(&b).unwrap());
        assert_eq!(decode_pgm(&b).unwrap(), img);
    }

    #[test]
    fn sixteen_bit_roundtrip() {
        let img = labels_to_image(&[0, 5, 255, 31], 2, 2);
        let mut buf = Vec::new();
        encode_pgm(&mut buf, &img, false).unwrap();
        assert_eq!(decode_pgm(&buf).unwrap(), img);
    }

    #[test]
    fn truncated_pgm_rejected() {
        assert!(decode_pgm(b"P5\n4 4\n255\nabc").is_err());
        assert!(decode_pgm(b"P7\n").is_err());
    }

    #[test]
    fn cost_volume_bit_exact() {
        let vol = UnaryVolume::new(1, 2, 3, vec![0.1f32, -2.5, 1e30, 0.0, -0.0, 7.0]).unwrap();
        let bytes = encode_cost_volume(&vol).unwrap();
        let back = decode_cost_volume(&bytes).unwrap();
        let bits = |v: &UnaryVolume<f32>| v.data.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&vol));
        assert!(decode_cost_volume(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn identical_views_zero_at_disparity_zero() {
        let img = Image { height: 2, width: 4, maxval: 255, data: vec![5, 9, 1, 200, 7, 7, 30, 4] };
        let u = stereo_unaries::<f32>(&img, &img, 3).unwrap();
        assert!((0..8).all(|i| u.node(i)[0] == 0.0));
    }

    #[test]
    fn shifted_view_prefers_one() {
        let right = Image { height: 1, width: 6, maxval: 255, data: vec![10, 50, 90, 20, 70, 30] };
        let mut left = right.clone();
        for x in 1..6 {
            left.data[x] = right.data[x - 1];
        }
        let u = stereo_unaries::<f64>(&left, &right, 3).unwrap();
        for x in 1..6 {
            assert_eq!(crate::messages::argmin(u.node(x)), 1);
        }
    }

    #[test]
    fn denoise_terms() {
        let img = Image { height: 1, width: 1, maxval: 255, data: vec![5] };
        let u = denoise_unaries::<f64>(&img, 8, 1, f64::INFINITY).unwrap();
        assert_eq!(u.data, vec![5.0, 4.0, 3.0, 2.0, 1.0, 0.0, 1.0, 2.0]);
        let q = denoise_unaries::<f64>(&img, 8, 2, 4.0).unwrap();
        assert_eq!(q.data[5], 0.0);
        assert_eq!(q.data[0], 4.0);
        assert!(denoise_unaries::<f64>(&img, 8, 1, 0.0).is_err());
        assert!(denoise_unaries::<f64>(&img, 4, 1, 1.0).is_err());
    }

    #[test]
    fn csv_roundtrip() {
        let rows = vec![
            EnergyRow { iteration: 1, energy: 12.5, forward_ms: 0.25 },
            EnergyRow { iteration: 2, energy: 11.0, forward_ms: 0.5 },
        ];
        let mut buf = Vec::new();
        write_energy_csv(&mut buf, &rows).unwrap();
        assert!(buf.starts_with(b"iteration,energy,forward_ms\n"));
        assert_eq!(read_energy_csv(&buf[..]).unwrap(), rows);
    }
}
