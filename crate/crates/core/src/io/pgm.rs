//! Binary masks as 8-bit P5 graymaps (0 = background, 255 = foreground).

use std::path::Path;

use crate::error::{Error, Result};
use crate::mask::BinaryMask;

pub fn encode_pgm(mask: &BinaryMask) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", mask.width(), mask.height()).into_bytes();
    out.extend(mask.data().iter().map(|&v| v * 255));
    out
}

/// Reads a P5 graymap whose pixels are all `0` or `maxval`.
pub fn decode_pgm(bytes: &[u8]) -> Result<BinaryMask> {
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format("truncated graymap header".into()));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    if fields[0] != "P5" {
        return Err(Error::Format(format!("expected P5 graymap, found {:?}", fields[0])));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| Error::Format(format!("bad graymap field {s:?}")));
    let (w, h, maxval) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
    if maxval == 0 || maxval > 255 {
        return Err(Error::Format(format!("unsupported graymap maxval {maxval}")));
    }
    pos += 1;
    let pixels = bytes.get(pos..).unwrap_or_default();
    if pixels.len() < w * h {
        return Err(Error::Format(format!(
            "truncated graymap: expected {} bytes, found {}",
            w * h,
            pixels.len()
        )));
    }
    let data = pixels[..w * h]
        .iter()
        .map(|&v| match v as usize {
            0 => Ok(0),
            v if v == maxval => Ok(1),
            v => Err(Error::Format(format!("graymap mask value {v} is neither 0 nor {maxval}"))),
        })
        .collect::<Result<Vec<u8>>>()?;
    BinaryMask::new(h, w, data)
}

pub fn write_pgm(path: impl AsRef<Path>, mask: &BinaryMask) -> Result<()> {
    crate::io::write_file(path, encode_pgm(mask))?;
    Ok(())
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<BinaryMask> {
    decode_pgm(&crate::io::read_file(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_layout() {
        let m = BinaryMask::from_fn(3, 5, |y, x| (x + y) % 3 == 0);
        let b = encode_pgm(&m);
        assert!(b.starts_with(b"P5\n5 3\n255\n"));
        assert_eq!(b.len(), 11 + 15);
        assert_eq!(decode_pgm(&b).unwrap(), m);
    }

    #[test]
    fn comments_and_bad_values() {
        let mut b = b"P5\n# made by hand\n2 1\n1\n".to_vec();
        b.extend([0, 1]);
        assert_eq!(decode_pgm(&b).unwrap().data(), &[0, 1]);
        let mut bad = b"P5 2 1 255\n".to_vec();
        bad.extend([0, 7]);
        assert!(matches!(decode_pgm(&bad), Err(Error::Format(_))));
        assert!(matches!(decode_pgm(b"P5 4 4 255\n\0\0"), Err(Error::Format(_))));
    }
}
