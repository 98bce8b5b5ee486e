//! Binary PGM (`P5`, maxval 255) images: background 0, foreground 255.

use std::fs;
use std::path::Path;

use super::grid::{BinaryPattern, ContinuousPattern};
use crate::error::{Error, Result};
use crate::io::write_atomic;

pub fn encode_binary(img: &BinaryPattern) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(img.data().iter().map(|&v| if v == 1 { 255 } else { 0 }));
    out
}

/// Linear map of `[lo, hi]` to `[0, 255]` (constant images map to 0).
pub fn encode_gray(img: &ContinuousPattern) -> Vec<u8> {
    let lo = img.data().iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = img.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let mut out = format!("P5\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(img.data().iter().map(|&v| {
        if span > 0.0 {
            ((v - lo) / span * 255.0).round() as u8
        } else {
            0
        }
    }));
    out
}

pub fn write_binary(path: &Path, img: &BinaryPattern) -> Result<()> {
    write_atomic(path, &encode_binary(img))
}

pub fn write_gray(path: &Path, img: &ContinuousPattern) -> Result<()> {
    write_atomic(path, &encode_gray(img))
}

fn header_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Option<&'a [u8]> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    (start < *pos).then(|| &bytes[start..*pos])
}

/// Decodes a P5 image; pixels above half of maxval are foreground.
pub fn decode_binary(bytes: &[u8], path: &Path) -> Result<BinaryPattern> {
    let bad = |reason: &str| Error::Format {
        path: path.to_path_buf(),
        reason: reason.into(),
    };
    let mut pos = 0;
    if header_token(bytes, &mut pos) != Some(b"P5") {
        return Err(bad("missing P5 magic"));
    }
    let mut num = || -> Result<usize> {
        header_token(bytes, &mut pos)
            .and_then(|t| std::str::from_utf8(t).ok())
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("bad header field"))
    };
    let (w, h, maxval) = (num()?, num()?, num()?);
    if maxval == 0 || maxval > 255 {
        return Err(bad("only 8-bit maxval is supported"));
    }
    pos += 1;
    let pixels = bytes.get(pos..pos + w * h).ok_or_else(|| bad("truncated pixel data"))?;
    let data = pixels.iter().map(|&v| u8::from(2 * v as usize > maxval)).collect();
    BinaryPattern::new(h, w, data)
}

pub fn read_binary(path: &Path) -> Result<BinaryPattern> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_binary(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let img = BinaryPattern::new(2, 3, vec![1, 0, 0, 0, 1, 1]).unwrap();
        let bytes = encode_binary(&img);
        assert_eq!(&bytes[..11], b"P5\n3 2\n255\n");
        assert_eq!(&bytes[11..], &[255, 0, 0, 0, 255, 255]);
        assert_eq!(decode_binary(&bytes, Path::new("x")).unwrap(), img);
    }

    #[test]
    fn comments_and_truncation() {
        let ok = b"P5 # c\n2 1\n255\n\xff\x00";
        assert_eq!(decode_binary(ok, Path::new("x")).unwrap().data(), &[1, 0]);
        assert!(decode_binary(b"P5\n2 2\n255\n\x00", Path::new("x")).is_err());
        assert!(decode_binary(b"P2\n1 1\n255\n0", Path::new("x")).is_err());
    }
}
