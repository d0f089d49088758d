//! Single-channel PFM (`Pf`) with little-endian samples (scale -1).
//!
//! Rows are stored bottom-to-top as the format prescribes; [`Map2`] rows are
//! top-to-bottom, so the codec flips on the way in and out.

use super::{read_bytes, write_bytes};
use crate::{Error, Map2, Result};
use std::path::Path;

pub fn encode_pfm(map: &Map2) -> Vec<u8> {
    let (w, h) = map.shape();
    let mut out = format!("Pf\n{w} {h}\n-1.0\n").into_bytes();
    out.reserve(w * h * 4);
    for y in (0..h).rev() {
        for x in 0..w {
            out.extend_from_slice(&(map.get(x, y) as f32).to_le_bytes());
        }
    }
    out
}

fn next_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Option<&'a [u8]> {
    while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    (start < *pos).then(|| &bytes[start..*pos])
}

pub fn decode_pfm(bytes: &[u8], path: &Path) -> Result<Map2> {
    let bad = |reason: &str| Error::format(path, reason.to_string());
    let mut pos = 0;
    let magic = next_token(bytes, &mut pos).ok_or_else(|| bad("empty file"))?;
    if magic != b"Pf" {
        return Err(bad("expected single-channel `Pf` header"));
    }
    let mut number = |what: &str| -> Result<f64> {
        let tok = next_token(bytes, &mut pos).ok_or_else(|| bad(what))?;
        std::str::from_utf8(tok)
            .ok()
            .and_then(|s| s.parse::<f64>().ok())
            .ok_or_else(|| bad(what))
    };
    let w = number("missing width")?;
    let h = number("missing height")?;
    let scale = number("missing scale")?;
    if w < 1.0 || h < 1.0 || w.fract() != 0.0 || h.fract() != 0.0 {
        return Err(bad("invalid dimensions"));
    }
    let (w, h) = (w as usize, h as usize);
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let little = scale < 0.0;
    let need = w * h * 4;
    if bytes.len() < pos + need {
        return Err(bad("truncated raster"));
    }
    let raster = &bytes[pos..pos + need];
    let mut map = Map2::zeros(w, h);
    for (i, chunk) in raster.chunks_exact(4).enumerate() {
        let arr = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little {
            f32::from_le_bytes(arr)
        } else {
            f32::from_be_bytes(arr)
        };
        let (x, row) = (i % w, i / w);
        map.set(x, h - 1 - row, v as f64);
    }
    Ok(map)
}

pub fn write_pfm(path: &Path, map: &Map2) -> Result<()> {
    write_bytes(path, &encode_pfm(map))
}

pub fn read_pfm(path: &Path) -> Result<Map2> {
    decode_pfm(&read_bytes(path)?, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_is_little_endian_single_channel() {
        let m = Map2::new(2, 1, vec![1.0, 2.0]).unwrap();
        let bytes = encode_pfm(&m);
        assert!(bytes.starts_with(b"Pf\n2 1\n-1.0\n"));
        assert_eq!(&bytes[bytes.len() - 4..], &2.0f32.to_le_bytes());
    }

    #[test]
    fn first_stored_row_is_bottom_row() {
        let m = Map2::new(1, 2, vec![5.0, 7.0]).unwrap();
        let bytes = encode_pfm(&m);
        let raster = &bytes[bytes.len() - 8..];
        assert_eq!(&raster[..4], &7.0f32.to_le_bytes());
    }

    #[test]
    fn rejects_color_pfm_and_truncation() {
        let p = Path::new("x.pfm");
        assert!(decode_pfm(b"PF\n1 1\n-1.0\n\0\0\0\0\0\0\0\0\0\0\0\0", p).is_err());
        assert!(decode_pfm(b"Pf\n2 2\n-1.0\n\0\0\0\0", p).is_err());
    }

    proptest! {
        #[test]
        fn roundtrip_preserves_f32_values(w in 1usize..6, h in 1usize..6, seed in any::<u64>()) {
            let m = Map2::from_fn(w, h, |x, y| {
                let k = crate::rng::mix(&[seed, x as u64, y as u64]);
                (k % 100_000) as f32 as f64 / 7.0
            }).map(|v| v as f32 as f64);
            let back = decode_pfm(&encode_pfm(&m), Path::new("mem")).unwrap();
            prop_assert_eq!(back, m);
        }
    }
}
