//! Little-endian binary helpers shared by the on-disk formats.
//!
//! Every reader tracks its byte offset so that parse failures can name the
//! exact position of the offending field.

use std::io::{self, BufRead, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};

pub(crate) struct BinReader<R> {
    inner: R,
    offset: u64,
    file: &'static str,
}

impl<R: BufRead> BinReader<R> {
    pub fn new(inner: R, file: &'static str) -> Self {
        BinReader {
            inner,
            offset: 0,
            file,
        }
    }

    pub fn offset(&self) -> u64 {
        self.offset
    }

    pub fn error_at(&self, offset: u64, reason: impl Into<String>) -> Error {
        Error::Format {
            file: self.file,
            offset,
            reason: reason.into(),
        }
    }

    pub fn error(&self, reason: impl Into<String>) -> Error {
        self.error_at(self.offset, reason)
    }

    fn map_eof(&self, e: io::Error, what: &str) -> Error {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            self.error(format!("truncated while reading {what}"))
        } else {
            Error::Io(e)
        }
    }

    pub fn at_eof(&mut self) -> Result<bool> {
        Ok(self.inner.fill_buf()?.is_empty())
    }

    pub fn expect_magic(&mut self, magic: &[u8; 4]) -> Result<()> {
        let mut got = [0u8; 4];
        self.bytes(&mut got, "magic")?;
        if &got != magic {
            return Err(self.error_at(
                0,
                format!(
                    "bad magic {:?}, expected {:?}",
                    String::from_utf8_lossy(&got),
                    String::from_utf8_lossy(magic)
                ),
            ));
        }
        Ok(())
    }

    pub fn expect_version(&mut self, version: u32) -> Result<()> {
        let at = self.offset;
        let got = self.u32("version")?;
        if got != version {
            return Err(self.error_at(at, format!("unsupported version {got}, expected {version}")));
        }
        Ok(())
    }

    pub fn bytes(&mut self, buf: &mut [u8], what: &str) -> Result<()> {
        self.inner
            .read_exact(buf)
            .map_err(|e| self.map_eof(e, what))?;
        self.offset += buf.len() as u64;
        Ok(())
    }

    pub fn u8(&mut self, what: &str) -> Result<u8> {
        let v = self.inner.read_u8().map_err(|e| self.map_eof(e, what))?;
        self.offset += 1;
        Ok(v)
    }

    pub fn u16(&mut self, what: &str) -> Result<u16> {
        let v = self
            .inner
            .read_u16::<LittleEndian>()
            .map_err(|e| self.map_eof(e, what))?;
        self.offset += 2;
        Ok(v)
    }

    pub fn u32(&mut self, what: &str) -> Result<u32> {
        let v = self
            .inner
            .read_u32::<LittleEndian>()
            .map_err(|e| self.map_eof(e, what))?;
        self.offset += 4;
        Ok(v)
    }

    pub fn u64(&mut self, what: &str) -> Result<u64> {
        let v = self
            .inner
            .read_u64::<LittleEndian>()
            .map_err(|e| self.map_eof(e, what))?;
        self.offset += 8;
        Ok(v)
    }

    pub fn f32s(&mut self, out: &mut [f32], what: &str) -> Result<()> {
        self.inner
            .read_f32_into::<LittleEndian>(out)
            .map_err(|e| self.map_eof(e, what))?;
        self.offset += 4 * out.len() as u64;
        Ok(())
    }

    pub fn f64s(&mut self, out: &mut [f64], what: &str) -> Result<()> {
        self.inner
            .read_f64_into::<LittleEndian>(out)
            .map_err(|e| self.map_eof(e, what))?;
        self.offset += 8 * out.len() as u64;
        Ok(())
    }

    pub fn u32s(&mut self, out: &mut [u32], what: &str) -> Result<()> {
        self.inner
            .read_u32_into::<LittleEndian>(out)
            .map_err(|e| self.map_eof(e, what))?;
        self.offset += 4 * out.len() as u64;
        Ok(())
    }

    pub fn expect_eof(&mut self) -> Result<()> {
        if !self.at_eof()? {
            return Err(self.error("trailing bytes after last field"));
        }
        Ok(())
    }
}

pub(crate) fn write_f32s<W: Write>(w: &mut W, xs: impl IntoIterator<Item = f32>) -> io::Result<()> {
    for x in xs {
        w.write_f32::<LittleEndian>(x)?;
    }
    Ok(())
}

pub(crate) fn write_f64s<W: Write>(w: &mut W, xs: impl IntoIterator<Item = f64>) -> io::Result<()> {
    for x in xs {
        w.write_f64::<LittleEndian>(x)?;
    }
    Ok(())
}
