//! `SVCK` checkpoint files.
//!
//! Layout: magic `SVCK`; the nine [`ModelConfig`] fields as little-endian
//! `u32` (frames, patch_size, grid_h, grid_w, dim, objects, depth, heads,
//! image_size); then one section per parameter until end of file:
//! `u32` name length, UTF-8 name, `u32` dim count, `u32` dims, `f64` values.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{ModelConfig, Parameters};
use crate::tensor::Mat;

const MAGIC: &[u8; 4] = b"SVCK";

pub fn encode(params: &Parameters) -> Vec<u8> {
    let c = &params.config;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    for v in [c.frames, c.patch_size, c.grid_h, c.grid_w, c.dim, c.objects, c.depth, c.heads, c.image_size] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for (name, t) in params.names.iter().zip(&params.tensors) {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&2u32.to_le_bytes());
        out.extend_from_slice(&(t.rows as u32).to_le_bytes());
        out.extend_from_slice(&(t.cols as u32).to_le_bytes());
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    origin: &'a Path,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::format(self.origin, format!("truncated at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn done(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

pub fn decode(bytes: &[u8], origin: &Path) -> Result<Parameters> {
    let mut r = Reader { bytes, pos: 0, origin };
    if r.take(4)? != MAGIC {
        return Err(Error::format(origin, "missing SVCK header"));
    }
    let mut f = [0usize; 9];
    for v in f.iter_mut() {
        *v = r.u32()?;
    }
    let config = ModelConfig {
        frames: f[0],
        patch_size: f[1],
        grid_h: f[2],
        grid_w: f[3],
        dim: f[4],
        objects: f[5],
        depth: f[6],
        heads: f[7],
        image_size: f[8],
    };
    let mut names = Vec::new();
    let mut tensors = Vec::new();
    while !r.done() {
        let len = r.u32()?;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::format(origin, "parameter name is not UTF-8"))?
            .to_string();
        let ndim = r.u32()?;
        let dims: Vec<usize> = (0..ndim).map(|_| r.u32()).collect::<Result<_>>()?;
        let (rows, cols) = match dims.as_slice() {
            [n] => (1, *n),
            [a, b] => (*a, *b),
            _ => return Err(Error::format(origin, format!("{name}: unsupported rank {ndim}"))),
        };
        let data = r
            .take(8 * rows * cols)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        names.push(name);
        tensors.push(Mat::from_vec(rows, cols, data));
    }
    Parameters::from_parts(config, names, tensors).map_err(|e| Error::format(origin, e.to_string()))
}

pub fn save(params: &Parameters, path: &Path) -> Result<()> {
    fs::write(path, encode(params)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Parameters> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let p = Parameters::init(ModelConfig::toy(), 9).unwrap();
        let bytes = encode(&p);
        assert_eq!(&bytes[..4], b"SVCK");
        assert_eq!(&bytes[4..8], &8u32.to_le_bytes());
        let back = decode(&bytes, Path::new("mem")).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let p = Parameters::init(ModelConfig::toy(), 9).unwrap();
        let bytes = encode(&p);
        assert!(decode(&bytes[..bytes.len() - 3], Path::new("mem")).is_err());
        assert!(decode(b"XXXX", Path::new("mem")).is_err());
        let mut wrong = bytes.clone();
        wrong[4 + 4 * 4] = 16; // dim
        assert!(decode(&wrong, Path::new("mem")).is_err());
    }
}
