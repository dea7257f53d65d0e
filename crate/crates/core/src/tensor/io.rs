//! Raw tensor files: `RTEN`, u32 version 1, u32 rank 4, four u64 extents,
//! then the f32 payload, all little-endian.

use std::io::{Read, Write};

use super::{Result, Shape, Tensor, TensorError};

pub const MAGIC: &[u8; 4] = b"RTEN";
pub const VERSION: u32 = 1;

pub fn write_tensor<W: Write>(mut w: W, t: &Tensor) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&4u32.to_le_bytes())?;
    for d in t.shape().dims() {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(t.len() * 4);
    for v in t.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_tensor<R: Read>(mut r: R) -> Result<Tensor> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(TensorError::Format(format!("bad magic {magic:?}")));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(TensorError::Format(format!("unsupported version {version}")));
    }
    let rank = read_u32(&mut r)?;
    if rank != 4 {
        return Err(TensorError::Format(format!("rank {rank}, expected 4")));
    }
    let mut dims = [0usize; 4];
    for d in &mut dims {
        let mut b = [0u8; 8];
        r.read_exact(&mut b)?;
        *d = usize::try_from(u64::from_le_bytes(b)).map_err(|_| TensorError::Format("extent overflows usize".into()))?;
    }
    let shape = Shape::from(dims);
    let mut bytes = vec![0u8; shape.numel() * 4];
    r.read_exact(&mut bytes)
        .map_err(|e| TensorError::Format(format!("payload for {shape}: {e}")))?;
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Tensor::from_vec(shape, data)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let t = Tensor::from_vec([1, 1, 1, 2], vec![1.0, -2.5]).unwrap();
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t).unwrap();
        assert_eq!(&buf[..4], b"RTEN");
        assert_eq!(&buf[4..12], &[1, 0, 0, 0, 4, 0, 0, 0]);
        assert_eq!(buf.len(), 12 + 32 + 8);
        assert_eq!(&buf[44..48], &1.0f32.to_le_bytes());
        assert_eq!(read_tensor(&buf[..]).unwrap(), t);
    }

    #[test]
    fn truncated_payload_rejected() {
        let t = Tensor::zeros([1, 2, 3, 4]);
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t).unwrap();
        buf.truncate(buf.len() - 1);
        assert!(matches!(read_tensor(&buf[..]), Err(TensorError::Format(_))));
    }

    #[test]
    fn bad_magic_rejected() {
        assert!(matches!(read_tensor(&b"NOPE\x01\0\0\0"[..]), Err(TensorError::Format(_))));
    }
}
