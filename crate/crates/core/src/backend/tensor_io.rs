//! Tensor files: magic `TCTN1`, element kind byte, rank (u32), extents
//! (u64 each), then row-major little-endian values.

use std::io::{Read, Write};

use crate::frontend::ScalarType;

use super::value::{Tensor, Value};
use super::BackendError;

pub const TENSOR_MAGIC: &[u8; 5] = b"TCTN1";

fn kind_code(ty: ScalarType) -> u8 {
    match ty {
        ScalarType::Float => 0,
        ScalarType::Double => 1,
        ScalarType::Half => 2,
        ScalarType::Int => 3,
        ScalarType::Long => 4,
        ScalarType::Byte => 5,
        ScalarType::Uint32 => 6,
    }
}

fn kind_from(code: u8) -> Option<ScalarType> {
    Some(match code {
        0 => ScalarType::Float,
        1 => ScalarType::Double,
        2 => ScalarType::Half,
        3 => ScalarType::Int,
        4 => ScalarType::Long,
        5 => ScalarType::Byte,
        6 => ScalarType::Uint32,
        _ => return None,
    })
}

/// Half values are stored as 32-bit floats.
pub fn write_tensor(w: &mut dyn Write, t: &Tensor) -> Result<(), BackendError> {
    w.write_all(TENSOR_MAGIC)?;
    w.write_all(&[kind_code(t.ty)])?;
    w.write_all(&(t.shape.len() as u32).to_le_bytes())?;
    for e in &t.shape {
        w.write_all(&(*e as u64).to_le_bytes())?;
    }
    for v in &t.data {
        match t.ty {
            ScalarType::Float | ScalarType::Half => w.write_all(&(v.as_f64() as f32).to_le_bytes())?,
            ScalarType::Double => w.write_all(&v.as_f64().to_le_bytes())?,
            ScalarType::Int => w.write_all(&(v.as_i64() as i32).to_le_bytes())?,
            ScalarType::Long => w.write_all(&v.as_i64().to_le_bytes())?,
            ScalarType::Byte => w.write_all(&[v.as_i64() as u8])?,
            ScalarType::Uint32 => w.write_all(&(v.as_i64() as u32).to_le_bytes())?,
        }
    }
    Ok(())
}

fn take<const N: usize>(r: &mut dyn Read) -> Result<[u8; N], BackendError> {
    let mut b = [0u8; N];
    r.read_exact(&mut b).map_err(|e| BackendError::BadTensorFile(e.to_string()))?;
    Ok(b)
}

pub fn read_tensor(r: &mut dyn Read) -> Result<Tensor, BackendError> {
    let magic: [u8; 5] = take(r)?;
    if &magic != TENSOR_MAGIC {
        return Err(BackendError::BadTensorFile("bad magic".into()));
    }
    let [code] = take::<1>(r)?;
    let ty = kind_from(code).ok_or_else(|| BackendError::BadTensorFile(format!("unknown element kind {code}")))?;
    let rank = u32::from_le_bytes(take(r)?) as usize;
    if rank > 16 {
        return Err(BackendError::BadTensorFile(format!("rank {rank} too large")));
    }
    let shape = (0..rank).map(|_| take::<8>(r).map(|b| u64::from_le_bytes(b) as usize)).collect::<Result<Vec<_>, _>>()?;
    let n = shape.iter().try_fold(1usize, |a, b| a.checked_mul(*b)).ok_or_else(|| BackendError::BadTensorFile("extent overflow".into()))?;
    let mut data = Vec::with_capacity(n.min(1 << 24));
    for _ in 0..n {
        data.push(match ty {
            ScalarType::Float | ScalarType::Half => Value::F(f32::from_le_bytes(take(r)?) as f64),
            ScalarType::Double => Value::F(f64::from_le_bytes(take(r)?)),
            ScalarType::Int => Value::I(i32::from_le_bytes(take(r)?) as i64),
            ScalarType::Long => Value::I(i64::from_le_bytes(take(r)?)),
            ScalarType::Byte => Value::I(take::<1>(r)?[0] as i64),
            ScalarType::Uint32 => Value::I(u32::from_le_bytes(take(r)?) as i64),
        });
    }
    Ok(Tensor { ty, shape, data })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_float_and_int() {
        for t in [
            Tensor::from_f64(ScalarType::Float, &[2, 3], vec![1.0, -2.5, 3.0, 0.0, 1e-3, 7.0]),
            Tensor::from_i64(ScalarType::Int, &[4], vec![1, -2, 3, 4]),
            Tensor::from_i64(ScalarType::Byte, &[], vec![200]),
        ] {
            let mut buf = Vec::new();
            write_tensor(&mut buf, &t).unwrap();
            assert_eq!(&buf[..5], b"TCTN1");
            let back = read_tensor(&mut buf.as_slice()).unwrap();
            assert_eq!(back, t.narrowed());
        }
    }

    #[test]
    fn truncated_file_is_rejected() {
        let t = Tensor::from_f64(ScalarType::Float, &[2], vec![1.0, 2.0]);
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t).unwrap();
        buf.pop();
        assert!(matches!(read_tensor(&mut buf.as_slice()), Err(BackendError::BadTensorFile(_))));
    }
}
