//! Channel and observation file formats.
//!
//! Text: a header line `rows cols domain`, then one `re,im` pair per line in
//! row-major order. Values are written with round-trip precision.
//!
//! Binary: the 16-byte magic [`BINARY_MAGIC`], then `rows`, `cols` and a
//! domain code as little-endian `u64`, then row-major interleaved `re, im`
//! little-endian `f64` values.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::channel::{ChannelMatrix, Domain};
use crate::error::{Error, Result};
use crate::matrix::{ComplexMatrix, C64};

pub const BINARY_MAGIC: &[u8; 16] = b"STCS-CHANNEL-v1\n";

pub fn write_text<W: Write>(mut w: W, h: &ChannelMatrix) -> Result<()> {
    writeln!(w, "{} {} {}", h.rows(), h.cols(), h.domain)?;
    for r in 0..h.rows() {
        for c in 0..h.cols() {
            let v = h.values.get(r, c);
            writeln!(w, "{:?},{:?}", v.re, v.im)?;
        }
    }
    Ok(())
}

pub fn read_text<R: Read>(r: R) -> Result<ChannelMatrix> {
    let mut lines = BufReader::new(r).lines().enumerate();
    let (rows, cols, domain) = loop {
        let (idx, line) = lines
            .next()
            .ok_or_else(|| Error::parse(1, "missing header"))?;
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 3 {
            return Err(Error::parse(idx + 1, "header must be `rows cols domain`"));
        }
        let rows: usize = parts[0]
            .parse()
            .map_err(|e| Error::parse(idx + 1, format!("rows: {e}")))?;
        let cols: usize = parts[1]
            .parse()
            .map_err(|e| Error::parse(idx + 1, format!("cols: {e}")))?;
        break (rows, cols, parts[2].parse::<Domain>()?);
    };
    let mut values = ComplexMatrix::zeros(rows, cols);
    let mut k = 0usize;
    for (idx, line) in lines {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if k >= rows * cols {
            return Err(Error::parse(idx + 1, "more entries than the header declares"));
        }
        let (re, im) = line
            .split_once(',')
            .ok_or_else(|| Error::parse(idx + 1, "expected `re,im`"))?;
        let re: f64 = re
            .trim()
            .parse()
            .map_err(|e| Error::parse(idx + 1, format!("real part: {e}")))?;
        let im: f64 = im
            .trim()
            .parse()
            .map_err(|e| Error::parse(idx + 1, format!("imaginary part: {e}")))?;
        values.set(k / cols, k % cols, C64::new(re, im));
        k += 1;
    }
    if k != rows * cols {
        return Err(Error::parse(
            0,
            format!("expected {} entries, found {k}", rows * cols),
        ));
    }
    Ok(ChannelMatrix::new(values, domain))
}

fn domain_code(d: Domain) -> u64 {
    match d {
        Domain::AngleFrequency => 0,
        Domain::AngleDelay => 1,
    }
}

pub fn write_binary<W: Write>(mut w: W, h: &ChannelMatrix) -> Result<()> {
    w.write_all(BINARY_MAGIC)?;
    for v in [h.rows() as u64, h.cols() as u64, domain_code(h.domain)] {
        w.write_all(&v.to_le_bytes())?;
    }
    for r in 0..h.rows() {
        for c in 0..h.cols() {
            let v = h.values.get(r, c);
            w.write_all(&v.re.to_le_bytes())?;
            w.write_all(&v.im.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_binary<R: Read>(mut r: R) -> Result<ChannelMatrix> {
    let mut magic = [0u8; 16];
    r.read_exact(&mut magic)?;
    if &magic != BINARY_MAGIC {
        return Err(Error::parse(0, "bad magic in binary channel file"));
    }
    let mut word = [0u8; 8];
    let mut next_u64 = |r: &mut R| -> Result<u64> {
        r.read_exact(&mut word)?;
        Ok(u64::from_le_bytes(word))
    };
    let rows = next_u64(&mut r)? as usize;
    let cols = next_u64(&mut r)? as usize;
    let domain = match next_u64(&mut r)? {
        0 => Domain::AngleFrequency,
        1 => Domain::AngleDelay,
        other => return Err(Error::parse(0, format!("unknown domain code {other}"))),
    };
    let mut values = ComplexMatrix::zeros(rows, cols);
    let mut buf = [0u8; 16];
    for k in 0..rows * cols {
        r.read_exact(&mut buf)?;
        let re = f64::from_le_bytes(buf[..8].try_into().expect("8 bytes"));
        let im = f64::from_le_bytes(buf[8..].try_into().expect("8 bytes"));
        values.set(k / cols, k % cols, C64::new(re, im));
    }
    Ok(ChannelMatrix::new(values, domain))
}

/// Loads a channel file, picking the format from the magic bytes.
pub fn load(path: &Path) -> Result<ChannelMatrix> {
    let bytes = fs::read(path)?;
    if bytes.starts_with(BINARY_MAGIC) {
        read_binary(bytes.as_slice())
    } else {
        read_text(bytes.as_slice())
    }
}

pub fn save_text(path: &Path, h: &ChannelMatrix) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    write_text(&mut f, h)?;
    f.flush()?;
    Ok(())
}

pub fn save_binary(path: &Path, h: &ChannelMatrix) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    write_binary(&mut f, h)?;
    f.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample(rows: usize, cols: usize, seed: u64) -> ChannelMatrix {
        let values = ComplexMatrix::from_fn(rows, cols, |r, c| {
            let x = (seed as f64 + 1.0) * (r as f64 + 0.37) / (c as f64 + 1.3);
            C64::new(x.sin() * 1e3, (x * 7.1).cos() / 3.0)
        });
        ChannelMatrix::new(values, Domain::AngleDelay)
    }

    #[test]
    fn text_header_and_layout() {
        let mut h = ChannelMatrix::new(ComplexMatrix::zeros(2, 2), Domain::AngleFrequency);
        h.values.set(0, 1, C64::new(1.5, -2.0));
        let mut out = Vec::new();
        write_text(&mut out, &h).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "2 2 angle_frequency");
        assert_eq!(lines[2], "1.5,-2.0");
        assert_eq!(lines.len(), 5);
    }

    #[test]
    fn truncated_inputs_rejected() {
        assert!(read_text("2 2 angle_delay\n1,2\n".as_bytes()).is_err());
        assert!(read_text("2 angle_delay\n".as_bytes()).is_err());
        assert!(read_binary(&b"not-a-channel-file-at-all"[..]).is_err());
    }

    proptest! {
        #[test]
        fn both_formats_round_trip(rows in 1usize..6, cols in 1usize..6, seed in 0u64..1000) {
            let h = sample(rows, cols, seed);
            let mut text = Vec::new();
            write_text(&mut text, &h).unwrap();
            prop_assert_eq!(read_text(text.as_slice()).unwrap(), h.clone());
            let mut bin = Vec::new();
            write_binary(&mut bin, &h).unwrap();
            prop_assert_eq!(bin.len(), 16 + 24 + rows * cols * 16);
            prop_assert_eq!(read_binary(bin.as_slice()).unwrap(), h);
        }
    }
}
