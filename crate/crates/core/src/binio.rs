//! Little-endian binary containers with a magic header.

use crate::error::{Error, Result};

pub struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new(magic: &[u8], version: u32) -> Self {
        let mut w = Self { buf: magic.to_vec() };
        w.u32(version);
        w
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64s(&mut self, v: &[f64]) {
        self.u64(v.len() as u64);
        for x in v {
            self.f64(*x);
        }
    }

    pub fn str(&mut self, s: &str) {
        self.u64(s.len() as u64);
        self.buf.extend_from_slice(s.as_bytes());
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
    /// Check the magic and return the reader plus the stored version.
    pub fn new(buf: &'a [u8], magic: &[u8]) -> Result<(Self, u32)> {
        if buf.len() < magic.len() || &buf[..magic.len()] != magic {
            return Err(Error::Format(format!(
                "missing magic header {:?}",
                String::from_utf8_lossy(magic)
            )));
        }
        let mut r = Self {
            buf,
            pos: magic.len(),
        };
        let v = r.u32()?;
        Ok((r, v))
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Format("truncated file".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    /// A length prefix, bounded by what the remaining bytes could hold.
    pub fn len(&mut self, elem_size: usize) -> Result<usize> {
        let n = self.u64()? as usize;
        if n.saturating_mul(elem_size.max(1)) > self.buf.len() - self.pos {
            return Err(Error::Format("length prefix exceeds file size".into()));
        }
        Ok(n)
    }

    pub fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.len(8)?;
        (0..n).map(|_| self.f64()).collect()
    }

    pub fn str(&mut self) -> Result<String> {
        let n = self.len(1)?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Format("invalid UTF-8 string".into()))
    }

    pub fn finish(self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Format("trailing bytes after payload".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_corruption() {
        let mut w = Writer::new(b"TEST1", 3);
        w.u32(7);
        w.f64s(&[1.5, -0.0, f64::MAX]);
        w.str("héllo");
        let bytes = w.finish();
        let (mut r, v) = Reader::new(&bytes, b"TEST1").unwrap();
        assert_eq!(v, 3);
        assert_eq!(r.u32().unwrap(), 7);
        assert_eq!(r.f64s().unwrap(), vec![1.5, -0.0, f64::MAX]);
        assert_eq!(r.str().unwrap(), "héllo");
        r.finish().unwrap();

        assert!(Reader::new(&bytes, b"TEST2").is_err());
        let (mut r, _) = Reader::new(&bytes[..bytes.len() - 2], b"TEST1").unwrap();
        r.u32().unwrap();
        r.f64s().unwrap();
        assert!(r.str().is_err());
    }
}
