//! `.jt` tensor files: the magic `JT01`, a dtype byte (0 = f32, 1 = f64),
//! four little-endian `u32` dims `(n, c, h, w)`, then the row-major data in
//! little-endian.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::{DType, Element, Shape, Tensor};
use crate::{Error, Result};

pub const JT_MAGIC: &[u8; 4] = b"JT01";
const HEADER_LEN: usize = 4 + 1 + 16;

pub fn write_jt_to<T: Element>(t: &Tensor<T>, out: &mut impl Write) -> std::io::Result<()> {
    let mut buf = Vec::with_capacity(HEADER_LEN + t.len() * T::DTYPE.size_of());
    buf.extend_from_slice(JT_MAGIC);
    buf.push(T::DTYPE.code());
    for d in t.shape().dims() {
        let d = u32::try_from(d).map_err(|_| {
            std::io::Error::new(std::io::ErrorKind::InvalidInput, "dimension exceeds u32")
        })?;
        buf.extend_from_slice(&d.to_le_bytes());
    }
    for &v in t.data() {
        v.write_le(&mut buf);
    }
    out.write_all(&buf)
}

pub fn read_jt_from<T: Element>(input: &mut impl Read) -> Result<Tensor<T>> {
    let mut bytes = Vec::new();
    input
        .read_to_end(&mut bytes)
        .map_err(|e| Error::Format(e.to_string()))?;
    decode(&bytes)
}

fn decode<T: Element>(bytes: &[u8]) -> Result<Tensor<T>> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format(format!("{} bytes is shorter than the header", bytes.len())));
    }
    if &bytes[..4] != JT_MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let dtype = DType::from_code(bytes[4])
        .ok_or_else(|| Error::Format(format!("unknown dtype code {}", bytes[4])))?;
    if dtype != T::DTYPE {
        return Err(Error::DTypeMismatch {
            expected: T::DTYPE,
            actual: dtype,
        });
    }
    let mut dims = [0usize; 4];
    for (i, d) in dims.iter_mut().enumerate() {
        let at = 5 + 4 * i;
        *d = u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes")) as usize;
    }
    let shape = Shape::try_from(dims)?;
    let size = dtype.size_of();
    let body = &bytes[HEADER_LEN..];
    if body.len() != shape.numel() * size {
        return Err(Error::Format(format!(
            "expected {} data bytes for {shape}, found {}",
            shape.numel() * size,
            body.len()
        )));
    }
    let data = body.chunks_exact(size).map(T::read_le).collect();
    Tensor::from_vec(shape, data)
}

pub fn write_jt<T: Element>(t: &Tensor<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_jt_to(t, &mut f).map_err(|e| Error::io(path, e))
}

pub fn read_jt<T: Element>(path: impl AsRef<Path>) -> Result<Tensor<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Rng;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let t = Tensor::<f32>::from_vec([1, 2, 1, 1], vec![1.0, -2.0]).unwrap();
        let mut buf = vec![];
        write_jt_to(&t, &mut buf).unwrap();
        assert_eq!(&buf[..5], b"JT01\x00");
        assert_eq!(&buf[5..21], &[1, 0, 0, 0, 2, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0]);
        assert_eq!(&buf[21..25], &1.0f32.to_le_bytes());
        assert_eq!(buf.len(), 29);
    }

    #[test]
    fn rejects_wrong_dtype_and_truncation() {
        let t = Tensor::<f64>::ones([1, 1, 2, 2]).unwrap();
        let mut buf = vec![];
        write_jt_to(&t, &mut buf).unwrap();
        assert!(matches!(
            read_jt_from::<f32>(&mut buf.as_slice()),
            Err(Error::DTypeMismatch { .. })
        ));
        buf.pop();
        assert!(matches!(read_jt_from::<f64>(&mut buf.as_slice()), Err(Error::Format(_))));
        assert!(read_jt_from::<f64>(&mut &b"JT02"[..]).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(seed in any::<u64>(), n in 1usize..3, c in 1usize..4, h in 1usize..5, w in 1usize..5) {
            let t = Tensor::<f64>::random_uniform([n, c, h, w], &mut Rng::new(seed), -1e6, 1e6).unwrap();
            let mut buf = vec![];
            write_jt_to(&t, &mut buf).unwrap();
            let back: Tensor<f64> = read_jt_from(&mut buf.as_slice()).unwrap();
            prop_assert!(back.data().iter().zip(t.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
            prop_assert_eq!(back.shape(), t.shape());
        }
    }
}
