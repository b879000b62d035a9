//! `HTSR` binary tensor files.
//!
//! ```text
//! "HTSR" | version 0x01 | dtype (0x01 f32, 0x02 f64) | rank | rank x u64 LE extents | LE payload
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{DType, Scalar, Tensor};

pub const MAGIC: [u8; 4] = *b"HTSR";
pub const VERSION: u8 = 0x01;
const HEADER_LEN: usize = 7;

/// A decoded tensor in the precision it was stored in.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyTensor {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

impl AnyTensor {
    pub fn dtype(&self) -> DType {
        match self {
            AnyTensor::F32(_) => DType::F32,
            AnyTensor::F64(_) => DType::F64,
        }
    }

    pub fn shape(&self) -> &[usize] {
        match self {
            AnyTensor::F32(t) => t.shape(),
            AnyTensor::F64(t) => t.shape(),
        }
    }

    /// The stored tensor if it has element type `T`; no conversion.
    pub fn into_exact<T: Scalar>(self) -> Result<Tensor<T>> {
        let got = self.dtype();
        let mismatch = || Error::Format(format!("stored dtype is {got:?}, requested {:?}", T::DTYPE));
        if got != T::DTYPE {
            return Err(mismatch());
        }
        // The dtype check makes these casts identity conversions.
        match self {
            AnyTensor::F32(t) => t.cast(),
            AnyTensor::F64(t) => t.cast(),
        }
    }

    /// Explicit conversion to `T`, rounding when narrowing.
    pub fn convert<T: Scalar>(&self) -> Result<Tensor<T>> {
        match self {
            AnyTensor::F32(t) => t.cast(),
            AnyTensor::F64(t) => t.cast(),
        }
    }
}

impl<T: Scalar> From<Tensor<T>> for AnyTensor {
    fn from(t: Tensor<T>) -> Self {
        match T::DTYPE {
            DType::F32 => AnyTensor::F32(t.cast().expect("same dtype")),
            DType::F64 => AnyTensor::F64(t.cast().expect("same dtype")),
        }
    }
}

pub fn encode<T: Scalar>(t: &Tensor<T>) -> Vec<u8> {
    let width = T::DTYPE.width();
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * t.rank() + width * t.len());
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.push(T::DTYPE.code());
    out.push(u8::try_from(t.rank()).expect("rank fits in a byte"));
    for &e in t.shape() {
        out.extend_from_slice(&(e as u64).to_le_bytes());
    }
    for &v in t.data() {
        v.write_le(&mut out);
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<AnyTensor> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format(format!(
            "{} bytes is shorter than the header",
            bytes.len()
        )));
    }
    if bytes[..4] != MAGIC {
        return Err(Error::Format(format!("bad magic {:?}", &bytes[..4])));
    }
    if bytes[4] != VERSION {
        return Err(Error::Format(format!("unsupported version {:#04x}", bytes[4])));
    }
    let dtype =
        DType::from_code(bytes[5]).ok_or_else(|| Error::Format(format!("unknown dtype code {:#04x}", bytes[5])))?;
    let rank = bytes[6] as usize;
    if rank == 0 {
        return Err(Error::Format("rank 0 is not supported".into()));
    }
    let dims_end = HEADER_LEN + 8 * rank;
    if bytes.len() < dims_end {
        return Err(Error::Format(format!(
            "truncated extents: need {dims_end} bytes, have {}",
            bytes.len()
        )));
    }
    let mut shape = Vec::with_capacity(rank);
    let mut count: usize = 1;
    for chunk in bytes[HEADER_LEN..dims_end].chunks_exact(8) {
        let e = u64::from_le_bytes(chunk.try_into().expect("8-byte extent"));
        let e = usize::try_from(e).map_err(|_| Error::Format(format!("extent {e} too large")))?;
        if e == 0 {
            return Err(Error::Format("zero extent".into()));
        }
        count = count
            .checked_mul(e)
            .ok_or_else(|| Error::Format("element count overflows".into()))?;
        shape.push(e);
    }
    let payload = count
        .checked_mul(dtype.width())
        .ok_or_else(|| Error::Format("payload size overflows".into()))?;
    let have = bytes.len() - dims_end;
    if have != payload {
        let what = if have < payload {
            "truncated payload"
        } else {
            "trailing bytes after payload"
        };
        return Err(Error::Format(format!("{what}: expected {payload} bytes, found {have}")));
    }
    let body = &bytes[dims_end..];
    match dtype {
        DType::F32 => Ok(AnyTensor::F32(read_payload(&shape, body)?)),
        DType::F64 => Ok(AnyTensor::F64(read_payload(&shape, body)?)),
    }
}

fn read_payload<T: Scalar>(shape: &[usize], body: &[u8]) -> Result<Tensor<T>> {
    let data = body.chunks_exact(T::DTYPE.width()).map(T::read_le).collect();
    Tensor::from_vec(shape, data).map_err(|e| Error::Format(format!("payload rejected: {e}")))
}

pub fn save_tensor<T: Scalar>(path: impl AsRef<Path>, t: &Tensor<T>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(t)).map_err(|e| Error::io(path, e))
}

pub fn load_tensor(path: impl AsRef<Path>) -> Result<AnyTensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Loads a tensor that must already be stored as `T`.
pub fn load_tensor_as<T: Scalar>(path: impl AsRef<Path>) -> Result<Tensor<T>> {
    load_tensor(path)?.into_exact()
}
