//! Plain PGM/PPM fixtures for depth and RGB images. Binary (P5/P6) and
//! ASCII (P2/P3) variants; 16-bit PGM samples are big-endian per the format.

use super::{DataError, DepthImage};
use std::io::{self, Write};

#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<[u8; 3]>,
}

/// Splits a PNM header from the pixel payload: magic, width, height, maxval.
fn parse_header(bytes: &[u8]) -> Result<(String, usize, usize, u32, usize), DataError> {
    let mut fields = Vec::new();
    let mut pos = 0usize;
    while fields.len() < 4 && pos < bytes.len() {
        // skip whitespace and comments
        while pos < bytes.len() {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else if bytes[pos].is_ascii_whitespace() {
                pos += 1;
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            break;
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).to_string());
    }
    if fields.len() < 4 {
        return Err(DataError::Invalid("incomplete PNM header".into()));
    }
    // exactly one whitespace byte separates the header from binary payload
    pos += 1;
    let width: usize = fields[1]
        .parse()
        .map_err(|_| DataError::Invalid("bad PNM width".into()))?;
    let height: usize = fields[2]
        .parse()
        .map_err(|_| DataError::Invalid("bad PNM height".into()))?;
    let maxval: u32 = fields[3]
        .parse()
        .map_err(|_| DataError::Invalid("bad PNM maxval".into()))?;
    Ok((fields[0].clone(), width, height, maxval, pos))
}

fn ascii_values(bytes: &[u8], expect: usize) -> Result<Vec<u32>, DataError> {
    let text = String::from_utf8_lossy(bytes);
    let vals: Result<Vec<u32>, _> = text.split_whitespace().map(|t| t.parse::<u32>()).collect();
    let vals = vals.map_err(|_| DataError::Invalid("bad ASCII sample".into()))?;
    if vals.len() < expect {
        return Err(DataError::Invalid(format!(
            "expected {expect} samples, got {}",
            vals.len()
        )));
    }
    Ok(vals)
}

/// Reads a PGM (P2/P5) as a depth image; samples are returned as raw counts
/// in f32.
pub fn read_pgm(bytes: &[u8]) -> Result<DepthImage, DataError> {
    let (magic, width, height, maxval, payload) = parse_header(bytes)?;
    let n = width * height;
    let data: Vec<f32> = match magic.as_str() {
        "P2" => ascii_values(&bytes[payload..], n)?
            .into_iter()
            .take(n)
            .map(|v| v as f32)
            .collect(),
        "P5" if maxval < 256 => {
            let body = &bytes[payload..];
            if body.len() < n {
                return Err(DataError::Invalid("P5 payload too short".into()));
            }
            body[..n].iter().map(|v| *v as f32).collect()
        }
        "P5" => {
            let body = &bytes[payload..];
            if body.len() < 2 * n {
                return Err(DataError::Invalid("P5 payload too short".into()));
            }
            body[..2 * n]
                .chunks_exact(2)
                .map(|c| u16::from_be_bytes([c[0], c[1]]) as f32)
                .collect()
        }
        other => return Err(DataError::Invalid(format!("unsupported magic {other:?}"))),
    };
    Ok(DepthImage {
        width,
        height,
        data,
    })
}

/// Reads a PPM (P3/P6) with maxval up to 255.
pub fn read_ppm(bytes: &[u8]) -> Result<RgbImage, DataError> {
    let (magic, width, height, maxval, payload) = parse_header(bytes)?;
    if maxval > 255 {
        return Err(DataError::Invalid("only 8-bit PPM supported".into()));
    }
    let n = width * height;
    let data: Vec<[u8; 3]> = match magic.as_str() {
        "P3" => ascii_values(&bytes[payload..], 3 * n)?
            .chunks_exact(3)
            .take(n)
            .map(|c| [c[0] as u8, c[1] as u8, c[2] as u8])
            .collect(),
        "P6" => {
            let body = &bytes[payload..];
            if body.len() < 3 * n {
                return Err(DataError::Invalid("P6 payload too short".into()));
            }
            body[..3 * n]
                .chunks_exact(3)
                .map(|c| [c[0], c[1], c[2]])
                .collect()
        }
        other => return Err(DataError::Invalid(format!("unsupported magic {other:?}"))),
    };
    Ok(RgbImage {
        width,
        height,
        data,
    })
}

/// Writes a binary PPM (P6).
pub fn write_ppm<W: Write>(
    w: &mut W,
    width: usize,
    height: usize,
    pixels: &[[u8; 3]],
) -> io::Result<()> {
    debug_assert_eq!(pixels.len(), width * height);
    write!(w, "P6\n{width} {height}\n255\n")?;
    for px in pixels {
        w.write_all(px)?;
    }
    Ok(())
}
