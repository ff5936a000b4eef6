//! Canonical byte serialization.
//!
//! Every field is written in declared order. Variable-length values carry a
//! 4-byte big-endian length prefix; integers are fixed-width big-endian;
//! enum tags, booleans and option markers are single bytes. Decoding is
//! strict: unknown tags, non-0/1 booleans, invalid UTF-8 and trailing bytes
//! are all rejected, so `decode(bytes)` succeeding implies
//! `encode(decode(bytes)) == bytes`.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("unexpected end of input at offset {0}")]
    Truncated(usize),
    #[error("invalid {what} at offset {offset}")]
    Invalid { what: &'static str, offset: usize },
    #[error("{0} trailing bytes after value")]
    TrailingBytes(usize),
}

/// Types with a single canonical byte encoding.
pub trait Canonical: Sized {
    fn encode_to(&self, enc: &mut Encoder);
    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError>;

    fn to_canonical_bytes(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        self.encode_to(&mut enc);
        enc.finish()
    }

    fn from_canonical_bytes(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut dec = Decoder::new(bytes);
        let value = Self::decode_from(&mut dec)?;
        dec.finish()?;
        Ok(value)
    }
}

#[derive(Debug, Default)]
pub struct Encoder {
    buf: Vec<u8>,
}

impl Encoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn u8(&mut self, v: u8) -> &mut Self {
        self.buf.push(v);
        self
    }

    pub fn u32(&mut self, v: u32) -> &mut Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub fn bool(&mut self, v: bool) -> &mut Self {
        self.u8(v as u8)
    }

    /// Fixed-size byte array, no prefix.
    pub fn fixed(&mut self, bytes: &[u8]) -> &mut Self {
        self.buf.extend_from_slice(bytes);
        self
    }

    /// Length-prefixed byte string.
    pub fn bytes(&mut self, bytes: &[u8]) -> &mut Self {
        let len = u32::try_from(bytes.len()).expect("field longer than 4 GiB");
        self.u32(len);
        self.fixed(bytes)
    }

    pub fn str(&mut self, s: &str) -> &mut Self {
        self.bytes(s.as_bytes())
    }

    pub fn value<T: Canonical>(&mut self, v: &T) -> &mut Self {
        v.encode_to(self);
        self
    }

    pub fn option<T: Canonical>(&mut self, v: &Option<T>) -> &mut Self {
        match v {
            None => self.u8(0),
            Some(inner) => self.u8(1).value(inner),
        }
    }

    pub fn list<T: Canonical>(&mut self, items: &[T]) -> &mut Self {
        let len = u32::try_from(items.len()).expect("list longer than u32::MAX");
        self.u32(len);
        for item in items {
            item.encode_to(self);
        }
        self
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

#[derive(Debug)]
pub struct Decoder<'a> {
    input: &'a [u8],
    pos: usize,
}

impl<'a> Decoder<'a> {
    pub fn new(input: &'a [u8]) -> Self {
        Self { input, pos: 0 }
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], DecodeError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|end| *end <= self.input.len())
            .ok_or(DecodeError::Truncated(self.pos))?;
        let out = &self.input[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    pub fn invalid(&self, what: &'static str) -> DecodeError {
        DecodeError::Invalid {
            what,
            offset: self.pos,
        }
    }

    pub fn u8(&mut self) -> Result<u8, DecodeError> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32, DecodeError> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes(b.try_into().expect("4 bytes")))
    }

    pub fn u64(&mut self) -> Result<u64, DecodeError> {
        let b = self.take(8)?;
        Ok(u64::from_be_bytes(b.try_into().expect("8 bytes")))
    }

    pub fn bool(&mut self) -> Result<bool, DecodeError> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            _ => Err(self.invalid("bool")),
        }
    }

    pub fn fixed<const N: usize>(&mut self) -> Result<[u8; N], DecodeError> {
        Ok(self.take(N)?.try_into().expect("N bytes"))
    }

    pub fn bytes(&mut self) -> Result<Vec<u8>, DecodeError> {
        let len = self.u32()? as usize;
        Ok(self.take(len)?.to_vec())
    }

    pub fn string(&mut self) -> Result<String, DecodeError> {
        let start = self.pos;
        let raw = self.bytes()?;
        String::from_utf8(raw).map_err(|_| DecodeError::Invalid {
            what: "utf-8 string",
            offset: start,
        })
    }

    pub fn value<T: Canonical>(&mut self) -> Result<T, DecodeError> {
        T::decode_from(self)
    }

    pub fn option<T: Canonical>(&mut self) -> Result<Option<T>, DecodeError> {
        match self.u8()? {
            0 => Ok(None),
            1 => Ok(Some(T::decode_from(self)?)),
            _ => Err(self.invalid("option tag")),
        }
    }

    pub fn list<T: Canonical>(&mut self) -> Result<Vec<T>, DecodeError> {
        let len = self.u32()? as usize;
        // every element occupies at least one byte
        if len > self.input.len() - self.pos {
            return Err(self.invalid("list length"));
        }
        (0..len).map(|_| T::decode_from(self)).collect()
    }

    pub fn finish(self) -> Result<(), DecodeError> {
        match self.input.len() - self.pos {
            0 => Ok(()),
            n => Err(DecodeError::TrailingBytes(n)),
        }
    }
}

impl Canonical for u64 {
    fn encode_to(&self, enc: &mut Encoder) {
        enc.u64(*self);
    }
    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        dec.u64()
    }
}

impl Canonical for String {
    fn encode_to(&self, enc: &mut Encoder) {
        enc.str(self);
    }
    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        dec.string()
    }
}

impl Canonical for Vec<u8> {
    fn encode_to(&self, enc: &mut Encoder) {
        enc.bytes(self);
    }
    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        dec.bytes()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_is_big_endian_length_prefixed() {
        let mut enc = Encoder::new();
        enc.u8(7).u64(1).str("ab").bool(true);
        assert_eq!(
            enc.finish(),
            vec![7, 0, 0, 0, 0, 0, 0, 0, 1, 0, 0, 0, 2, b'a', b'b', 1]
        );
    }

    #[test]
    fn rejects_trailing_and_truncated() {
        assert_eq!(
            String::from_canonical_bytes(&[0, 0, 0, 1, b'x', 0]),
            Err(DecodeError::TrailingBytes(1))
        );
        assert_eq!(
            String::from_canonical_bytes(&[0, 0, 0, 3, b'x']),
            Err(DecodeError::Truncated(4))
        );
    }

    #[test]
    fn rejects_bad_bool_and_utf8() {
        let mut dec = Decoder::new(&[2]);
        assert!(dec.bool().is_err());
        assert!(String::from_canonical_bytes(&[0, 0, 0, 1, 0xff]).is_err());
    }

    #[test]
    fn huge_list_length_is_rejected_without_allocating() {
        let mut dec = Decoder::new(&[0xff, 0xff, 0xff, 0xff]);
        assert!(dec.list::<u64>().is_err());
    }
}
