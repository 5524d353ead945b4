//! Little-endian byte serialization shared by checkpoint writers. Formats
//! are versioned by 8-byte magic strings at each block boundary.

use ndarray::IxDyn;

use crate::autodiff::Arr;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ByteError {
    #[error("data ended early (wanted {wanted} more bytes)")]
    Truncated { wanted: usize },
    #[error("invalid utf-8 in serialized string")]
    Utf8,
    #[error("expected magic {expected:?}")]
    BadMagic { expected: &'static str },
    #[error("serialized length does not fit this platform")]
    LengthOverflow,
}

#[derive(Default)]
pub struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new() -> Writer {
        Writer { buf: Vec::new() }
    }

    pub fn magic(&mut self, m: &'static str) {
        assert_eq!(m.len(), 8, "magic strings are 8 bytes");
        self.buf.extend_from_slice(m.as_bytes());
    }

    pub fn u8(&mut self, x: u8) {
        self.buf.push(x);
    }

    pub fn u32(&mut self, x: u32) {
        self.buf.extend_from_slice(&x.to_le_bytes());
    }

    pub fn u64(&mut self, x: u64) {
        self.buf.extend_from_slice(&x.to_le_bytes());
    }

    pub fn u128(&mut self, x: u128) {
        self.buf.extend_from_slice(&x.to_le_bytes());
    }

    pub fn f64(&mut self, x: f64) {
        self.buf.extend_from_slice(&x.to_le_bytes());
    }

    pub fn raw(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    pub fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.buf.extend_from_slice(s.as_bytes());
    }

    /// Shape-prefixed array: u8 ndim, u64 per dim, then row-major f64s.
    pub fn arr(&mut self, a: &Arr) {
        self.u8(a.ndim() as u8);
        for &d in a.shape() {
            self.u64(d as u64);
        }
        for &x in a.iter() {
            self.f64(x);
        }
    }

    /// Length-prefixed nested block, so readers can skip unknown sections.
    pub fn block(&mut self, inner: Writer) {
        let bytes = inner.finish();
        self.u64(bytes.len() as u64);
        self.buf.extend_from_slice(&bytes);
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Reader<'a> {
        Reader { buf, pos: 0 }
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], ByteError> {
        if self.remaining() < n {
            return Err(ByteError::Truncated {
                wanted: n - self.remaining(),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn magic(&mut self, expected: &'static str) -> Result<(), ByteError> {
        let got = self.take(8)?;
        if got != expected.as_bytes() {
            return Err(ByteError::BadMagic { expected });
        }
        Ok(())
    }

    pub fn u8(&mut self) -> Result<u8, ByteError> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32, ByteError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64, ByteError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn u128(&mut self) -> Result<u128, ByteError> {
        Ok(u128::from_le_bytes(self.take(16)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> Result<f64, ByteError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn raw(&mut self, n: usize) -> Result<&'a [u8], ByteError> {
        self.take(n)
    }

    pub fn str(&mut self) -> Result<String, ByteError> {
        let n = self.u32()? as usize;
        let bytes = self.take(n)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| ByteError::Utf8)
    }

    pub fn arr(&mut self) -> Result<Arr, ByteError> {
        let ndim = self.u8()? as usize;
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            let d = self.u64()?;
            dims.push(usize::try_from(d).map_err(|_| ByteError::LengthOverflow)?);
        }
        let n: usize = dims.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(self.f64()?);
        }
        Ok(Arr::from_shape_vec(IxDyn(&dims), data).expect("shape/data consistent by construction"))
    }

    pub fn block(&mut self) -> Result<Reader<'a>, ByteError> {
        let n = self.u64()?;
        let n = usize::try_from(n).map_err(|_| ByteError::LengthOverflow)?;
        Ok(Reader::new(self.take(n)?))
    }

    pub fn expect_end(&self) -> Result<(), ByteError> {
        if self.remaining() != 0 {
            // Trailing garbage means the stream is not what the writer produced.
            return Err(ByteError::BadMagic { expected: "<end>" });
        }
        Ok(())
    }
}
