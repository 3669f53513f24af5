//! Stacks of RGB frames and the `SVT1` tensor file format.
//!
//! `SVT1` layout: the ASCII magic `SVT1`, four little-endian `u32` dims
//! `(frames, height, width, 3)`, then `f32` little-endian samples in
//! row-major order.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const CHANNELS: usize = 3;
const MAGIC: &[u8; 4] = b"SVT1";

/// `count × height × width × 3` samples, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameStack {
    pub count: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl FrameStack {
    pub fn zeros(count: usize, height: usize, width: usize) -> Self {
        FrameStack {
            count,
            height,
            width,
            data: vec![0.0; count * height * width * CHANNELS],
        }
    }

    pub fn frame_len(&self) -> usize {
        self.height * self.width * CHANNELS
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        let n = self.frame_len();
        &self.data[t * n..(t + 1) * n]
    }

    pub fn frame_mut(&mut self, t: usize) -> &mut [f64] {
        let n = self.frame_len();
        &mut self.data[t * n..(t + 1) * n]
    }

    /// A one-frame stack holding a copy of frame `t`.
    pub fn single(&self, t: usize) -> FrameStack {
        FrameStack {
            count: 1,
            height: self.height,
            width: self.width,
            data: self.frame(t).to_vec(),
        }
    }

    /// Frames at the given indices, in order.
    pub fn select(&self, indices: &[usize]) -> FrameStack {
        let mut data = Vec::with_capacity(indices.len() * self.frame_len());
        for &i in indices {
            data.extend_from_slice(self.frame(i));
        }
        FrameStack {
            count: indices.len(),
            height: self.height,
            width: self.width,
            data,
        }
    }

    #[inline]
    pub fn pixel(&self, t: usize, y: usize, x: usize) -> [f64; 3] {
        let i = ((t * self.height + y) * self.width + x) * CHANNELS;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, t: usize, y: usize, x: usize, rgb: [f64; 3]) {
        let i = ((t * self.height + y) * self.width + x) * CHANNELS;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(20 + 4 * self.data.len());
        out.extend_from_slice(MAGIC);
        for d in [self.count, self.height, self.width, CHANNELS] {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in &self.data {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        if bytes.len() < 20 || &bytes[..4] != MAGIC {
            return Err(Error::format(origin, "missing SVT1 header"));
        }
        let dim = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
        let (count, height, width, channels) = (dim(0), dim(1), dim(2), dim(3));
        if channels != CHANNELS {
            return Err(Error::format(origin, format!("expected 3 channels, found {channels}")));
        }
        let n = count * height * width * channels;
        let body = &bytes[20..];
        if body.len() != 4 * n {
            return Err(Error::format(
                origin,
                format!("expected {} payload bytes, found {}", 4 * n, body.len()),
            ));
        }
        let data = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        Ok(FrameStack {
            count,
            height,
            width,
            data,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }

    /// Rounds every sample through `f32`, matching what a file round trip yields.
    pub fn quantized(&self) -> FrameStack {
        FrameStack {
            data: self.data.iter().map(|&v| v as f32 as f64).collect(),
            ..self.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn svt1_layout() {
        let mut f = FrameStack::zeros(2, 1, 2);
        f.set_pixel(1, 0, 1, [0.25, 0.5, 1.0]);
        let bytes = f.to_bytes();
        assert_eq!(&bytes[..4], b"SVT1");
        assert_eq!(&bytes[4..8], &2u32.to_le_bytes());
        assert_eq!(&bytes[16..20], &3u32.to_le_bytes());
        assert_eq!(bytes.len(), 20 + 4 * 12);
        let back = FrameStack::from_bytes(&bytes, Path::new("mem")).unwrap();
        assert_eq!(back, f);
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let f = FrameStack::zeros(1, 2, 2);
        let bytes = f.to_bytes();
        assert!(FrameStack::from_bytes(&bytes[..bytes.len() - 1], Path::new("mem")).is_err());
        assert!(FrameStack::from_bytes(b"SVT2", Path::new("mem")).is_err());
    }
}
