//! Little-endian tensor serialization: `"CLCT"`, `u32` version, four `u32`
//! dimensions (n, c, h, w), then `n·c·h·w` `f32` values.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::{Scalar, Shape, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"CLCT";
pub const VERSION: u32 = 1;

pub fn write_tensor<T: Scalar, W: Write>(mut w: W, tensor: &Tensor<T>) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    for d in tensor.shape().dims() {
        let d = u32::try_from(d).map_err(|_| Error::Invalid(format!("dimension {d} exceeds u32")))?;
        w.write_all(&d.to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(tensor.numel() * 4);
    for &v in tensor.data() {
        buf.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_tensor<T: Scalar, R: Read>(mut r: R) -> Result<Tensor<T>> {
    let mut header = [0u8; 24];
    r.read_exact(&mut header)?;
    if &header[..4] != MAGIC {
        return Err(Error::Invalid("not a CLCT tensor (bad magic)".into()));
    }
    let word = |i: usize| u32::from_le_bytes(header[i..i + 4].try_into().unwrap());
    let version = word(4);
    if version != VERSION {
        return Err(Error::Invalid(format!("unsupported CLCT version {version}")));
    }
    let shape = Shape::new(word(8) as usize, word(12) as usize, word(16) as usize, word(20) as usize);
    let mut raw = vec![0u8; shape.numel() * 4];
    r.read_exact(&mut raw)?;
    let data = raw
        .chunks_exact(4)
        .map(|b| T::from_f64(f32::from_le_bytes(b.try_into().unwrap()) as f64))
        .collect();
    Tensor::new(shape, data)
}

pub fn save<T: Scalar>(path: &Path, tensor: &Tensor<T>) -> Result<()> {
    let mut buf = Vec::new();
    write_tensor(&mut buf, tensor)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn load<T: Scalar>(path: &Path) -> Result<Tensor<T>> {
    let bytes = fs::read(path)?;
    read_tensor(bytes.as_slice()).map_err(|e| Error::Data {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let t = Tensor::<f32>::new(Shape::new(1, 2, 1, 1), vec![1.0, -2.5]).unwrap();
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t).unwrap();
        assert_eq!(&buf[..4], b"CLCT");
        assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(buf[12..16].try_into().unwrap()), 2);
        assert_eq!(buf.len(), 24 + 8);
        assert_eq!(f32::from_le_bytes(buf[28..32].try_into().unwrap()), -2.5);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        assert!(read_tensor::<f32, _>(&b"XXXX\x01\0\0\0"[..]).is_err());
        let t = Tensor::<f32>::zeros(Shape::new(1, 1, 2, 2));
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t).unwrap();
        buf.pop();
        assert!(read_tensor::<f32, _>(buf.as_slice()).is_err());
    }

    proptest! {
        #[test]
        fn round_trip(dims in (1usize..4, 1usize..4, 1usize..5, 1usize..5), seed in any::<u32>()) {
            let shape = Shape::new(dims.0, dims.1, dims.2, dims.3);
            let t = Tensor::<f32>::from_fn(shape, |n, c, y, x| {
                f32::from_bits(seed.wrapping_mul(2654435761).wrapping_add((n * 1000 + c * 100 + y * 10 + x) as u32) % 0x7f00_0000)
            });
            let mut buf = Vec::new();
            write_tensor(&mut buf, &t).unwrap();
            let back: Tensor<f32> = read_tensor(buf.as_slice()).unwrap();
            prop_assert_eq!(back, t);
        }
    }
}
