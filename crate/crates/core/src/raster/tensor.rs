//! Raster and heatmap container: a one-line text header followed by
//! little-endian f32 values in `[frame][row][col][channel]` order.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::Vec2;

const MAGIC: &str = "zonecast-tensor 1";

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub h: usize,
    pub w: usize,
    pub channels: usize,
    pub tau: usize,
    pub origin: Vec2,
    pub res: f64,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn expected_len(&self) -> usize {
        self.tau * self.h * self.w * self.channels
    }

    pub fn at(&self, frame: usize, row: usize, col: usize, ch: usize) -> f32 {
        self.data[((frame * self.h + row) * self.w + col) * self.channels + ch]
    }
}

pub fn write_tensor(path: &Path, t: &Tensor) -> Result<()> {
    if t.data.len() != t.expected_len() {
        return Err(Error::Shape(format!(
            "tensor holds {} values, header implies {}",
            t.data.len(),
            t.expected_len()
        )));
    }
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(
        f,
        "{MAGIC} h {} w {} channels {} tau {} origin {} {} res {}",
        t.h, t.w, t.channels, t.tau, t.origin.x, t.origin.y, t.res
    )?;
    for v in &t.data {
        f.write_all(&v.to_le_bytes())?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_tensor(path: &Path) -> Result<Tensor> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let mut header = String::new();
    r.read_line(&mut header)?;
    let rest = header
        .trim_end()
        .strip_prefix(MAGIC)
        .ok_or_else(|| Error::format("tensor header", header.trim_end()))?;
    let tok: Vec<&str> = rest.split_whitespace().collect();
    let bad = || Error::format("tensor header", header.trim_end());
    if tok.len() != 13 || [0, 2, 4, 6, 8, 11].iter().zip(["h", "w", "channels", "tau", "origin", "res"]).any(|(&i, k)| tok[i] != k) {
        return Err(bad());
    }
    let us = |i: usize| tok[i].parse::<usize>().map_err(|_| bad());
    let fl = |i: usize| tok[i].parse::<f64>().map_err(|_| bad());
    let mut t = Tensor {
        h: us(1)?,
        w: us(3)?,
        channels: us(5)?,
        tau: us(7)?,
        origin: Vec2::new(fl(9)?, fl(10)?),
        res: fl(12)?,
        data: Vec::new(),
    };
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() != 4 * t.expected_len() {
        return Err(Error::format(
            "tensor payload",
            format!("{} bytes, expected {}", bytes.len(), 4 * t.expected_len()),
        ));
    }
    t.data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.bin");
        let t = Tensor {
            h: 2,
            w: 3,
            channels: 2,
            tau: 2,
            origin: Vec2::new(-1.5, 0.25),
            res: 0.5,
            data: (0..24).map(|i| i as f32 * 0.1 - 1.0).collect(),
        };
        write_tensor(&p, &t).unwrap();
        let back = read_tensor(&p).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.at(1, 1, 2, 1), t.data[23]);
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(read_tensor(&p), Err(Error::Format { .. })));
        let mut short = t.clone();
        short.data.pop();
        assert!(write_tensor(&p, &short).is_err());
    }
}
