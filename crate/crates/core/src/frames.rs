use std::fmt::Write as _;
use std::path::Path;

use crate::error::{CoreError, Result};

/// `L x D` grid of continuous frames, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameSequence {
    dim: usize,
    data: Vec<f64>,
}

impl FrameSequence {
    pub fn new(dim: usize) -> Self {
        Self { dim, data: Vec::new() }
    }

    pub fn from_rows<R: AsRef<[f64]>>(dim: usize, rows: &[R]) -> Result<Self> {
        let mut s = Self::new(dim);
        for r in rows {
            s.push(r.as_ref())?;
        }
        Ok(s)
    }

    pub fn from_flat(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || !data.len().is_multiple_of(dim) {
            return Err(CoreError::Dimension { expected: dim, got: data.len() });
        }
        Ok(Self { dim, data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.data.len() / self.dim
        }
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn push(&mut self, frame: &[f64]) -> Result<()> {
        if frame.len() != self.dim {
            return Err(CoreError::Dimension { expected: self.dim, got: frame.len() });
        }
        self.data.extend_from_slice(frame);
        Ok(())
    }

    pub fn frame(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn last(&self) -> Option<&[f64]> {
        (!self.is_empty()).then(|| self.frame(self.len() - 1))
    }

    pub fn frames(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.dim.max(1))
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    /// First `n` frames (or all, if shorter).
    pub fn prefix(&self, n: usize) -> FrameSequence {
        let n = n.min(self.len());
        Self { dim: self.dim, data: self.data[..n * self.dim].to_vec() }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// One frame per line, comma-separated, shortest round-trip float formatting.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.data.len() * 12);
        for f in self.frames() {
            for (j, v) in f.iter().enumerate() {
                if j > 0 {
                    out.push(',');
                }
                write!(out, "{v}").expect("write to string");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> std::result::Result<Self, String> {
        let mut dim = None;
        let mut data = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let row: Vec<f64> = line
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| format!("line {}: {e}", lineno + 1))?;
            match dim {
                None => dim = Some(row.len()),
                Some(d) if d != row.len() => {
                    return Err(format!("line {}: expected {d} columns, got {}", lineno + 1, row.len()))
                }
                _ => {}
            }
            data.extend(row);
        }
        let dim = dim.ok_or("no frames")?;
        Ok(Self { dim, data })
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| CoreError::Load { path: path.to_path_buf(), reason: e.to_string() })?;
        Self::from_csv(&text).map_err(|reason| CoreError::Load { path: path.to_path_buf(), reason })
    }

    /// Binary PGM with time on the horizontal axis and feature index 0 at the
    /// bottom, min-max scaled to 0..=255.
    pub fn to_pgm(&self) -> Vec<u8> {
        let (w, h) = (self.len(), self.dim);
        let lo = self.data.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = if hi > lo { hi - lo } else { 1.0 };
        let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
        for row in (0..h).rev() {
            for col in 0..w {
                let v = (self.data[col * self.dim + row] - lo) / span;
                out.push((v * 255.0).round().clamp(0.0, 255.0) as u8);
            }
        }
        out
    }

    pub fn write_pgm(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_pgm())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_exact() {
        let s = FrameSequence::from_rows(3, &[[0.1, -2.5e-7, 3.0], [1.0 / 3.0, 0.0, -1.0]]).unwrap();
        assert_eq!(FrameSequence::from_csv(&s.to_csv()).unwrap(), s);
    }

    #[test]
    fn ragged_csv_rejected() {
        assert!(FrameSequence::from_csv("1,2\n3\n").unwrap_err().contains("line 2"));
    }

    #[test]
    fn pgm_header_and_size() {
        let s = FrameSequence::from_rows(2, &[[0.0, 1.0], [0.5, 0.25], [1.0, 0.0]]).unwrap();
        let pgm = s.to_pgm();
        let header = b"P5\n3 2\n255\n";
        assert_eq!(&pgm[..header.len()], header);
        assert_eq!(pgm.len(), header.len() + 6);
        // Top image row is feature 1.
        assert_eq!(&pgm[header.len()..header.len() + 3], &[255, 64, 0]);
    }

    #[test]
    fn push_checks_dimension() {
        let mut s = FrameSequence::new(4);
        assert!(s.push(&[1.0, 2.0]).is_err());
    }
}
