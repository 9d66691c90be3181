//! Canonical binary encoding shared by certificates and ledger transactions.
//!
//! Every field is written in declared order as a 4-byte big-endian length
//! followed by the raw bytes. Integers are big-endian, floats are IEEE-754
//! binary64 big-endian. Two implementations that follow these rules produce
//! identical bytes for identical values, which is what signatures and
//! transaction identifiers are computed over.

use sha2::{Digest as _, Sha256};
use thiserror::Error;

/// Name of the hash function used for every digest in the crate.
pub const HASH_NAME: &str = "SHA-256";
/// Digest length in bytes.
pub const DIGEST_LEN: usize = 32;

pub type Digest = [u8; DIGEST_LEN];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DecodeError {
    #[error("truncated input: wanted {wanted} bytes at offset {offset}")]
    Truncated { offset: usize, wanted: usize },
    #[error("field at offset {offset} has length {found}, expected {expected}")]
    BadLength {
        offset: usize,
        expected: usize,
        found: usize,
    },
    #[error("invalid value for field `{0}`")]
    InvalidValue(&'static str),
    #[error("{0} trailing bytes after the last field")]
    TrailingBytes(usize),
}

pub fn sha256(bytes: &[u8]) -> Digest {
    Sha256::digest(bytes).into()
}

#[derive(Debug, Default, Clone)]
pub struct Encoder {
    buf: Vec<u8>,
}

impl Encoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bytes(&mut self, field: &[u8]) -> &mut Self {
        let len = u32::try_from(field.len()).expect("field longer than u32::MAX");
        self.buf.extend_from_slice(&len.to_be_bytes());
        self.buf.extend_from_slice(field);
        self
    }

    pub fn u8(&mut self, v: u8) -> &mut Self {
        self.bytes(&[v])
    }

    pub fn u32(&mut self, v: u32) -> &mut Self {
        self.bytes(&v.to_be_bytes())
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.bytes(&v.to_be_bytes())
    }

    pub fn f64(&mut self, v: f64) -> &mut Self {
        self.bytes(&v.to_be_bytes())
    }

    pub fn bool(&mut self, v: bool) -> &mut Self {
        self.u8(u8::from(v))
    }

    /// A list is encoded as its element count followed by each element.
    pub fn list<T>(&mut self, items: &[T], mut each: impl FnMut(&mut Self, &T)) -> &mut Self {
        let n = u32::try_from(items.len()).expect("list longer than u32::MAX");
        self.u32(n);
        for item in items {
            each(self, item);
        }
        self
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    pub fn digest(&self) -> Digest {
        sha256(&self.buf)
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

#[derive(Debug, Clone)]
pub struct Decoder<'a> {
    input: &'a [u8],
    offset: usize,
}

impl<'a> Decoder<'a> {
    pub fn new(input: &'a [u8]) -> Self {
        Self { input, offset: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], DecodeError> {
        let end = self
            .offset
            .checked_add(n)
            .filter(|&end| end <= self.input.len())
            .ok_or(DecodeError::Truncated {
                offset: self.offset,
                wanted: n,
            })?;
        let out = &self.input[self.offset..end];
        self.offset = end;
        Ok(out)
    }

    pub fn bytes(&mut self) -> Result<&'a [u8], DecodeError> {
        let len = u32::from_be_bytes(self.take(4)?.try_into().unwrap()) as usize;
        self.take(len)
    }

    pub fn fixed<const N: usize>(&mut self) -> Result<[u8; N], DecodeError> {
        let offset = self.offset;
        let field = self.bytes()?;
        field.try_into().map_err(|_| DecodeError::BadLength {
            offset,
            expected: N,
            found: field.len(),
        })
    }

    pub fn u8(&mut self) -> Result<u8, DecodeError> {
        Ok(self.fixed::<1>()?[0])
    }

    pub fn u32(&mut self) -> Result<u32, DecodeError> {
        Ok(u32::from_be_bytes(self.fixed()?))
    }

    pub fn u64(&mut self) -> Result<u64, DecodeError> {
        Ok(u64::from_be_bytes(self.fixed()?))
    }

    pub fn f64(&mut self) -> Result<f64, DecodeError> {
        Ok(f64::from_be_bytes(self.fixed()?))
    }

    pub fn bool(&mut self, name: &'static str) -> Result<bool, DecodeError> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            _ => Err(DecodeError::InvalidValue(name)),
        }
    }

    pub fn list<T>(
        &mut self,
        mut each: impl FnMut(&mut Self) -> Result<T, DecodeError>,
    ) -> Result<Vec<T>, DecodeError> {
        let n = self.u32()? as usize;
        // every element costs at least one length prefix
        if n > self.input.len().saturating_sub(self.offset) / 4 {
            return Err(DecodeError::Truncated {
                offset: self.offset,
                wanted: n * 4,
            });
        }
        (0..n).map(|_| each(self)).collect()
    }

    pub fn finish(self) -> Result<(), DecodeError> {
        match self.input.len() - self.offset {
            0 => Ok(()),
            n => Err(DecodeError::TrailingBytes(n)),
        }
    }
}

/// Serde helpers that render byte fields as standard base64 in text dumps.
pub mod b64 {
    use base64::engine::general_purpose::STANDARD;
    use base64::Engine as _;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: impl AsRef<[u8]>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&STANDARD.encode(bytes.as_ref()))
    }

    pub fn deserialize<'de, D, T>(d: D) -> Result<T, D::Error>
    where
        D: Deserializer<'de>,
        T: TryFrom<Vec<u8>>,
    {
        let text = String::deserialize(d)?;
        let raw = STANDARD.decode(text).map_err(serde::de::Error::custom)?;
        T::try_from(raw).map_err(|_| serde::de::Error::custom("wrong byte length"))
    }

    pub fn encode(bytes: &[u8]) -> String {
        STANDARD.encode(bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fields_are_length_prefixed_big_endian() {
        let mut enc = Encoder::new();
        enc.bytes(b"ab").u32(7);
        assert_eq!(
            enc.finish(),
            vec![0, 0, 0, 2, b'a', b'b', 0, 0, 0, 4, 0, 0, 0, 7]
        );
    }

    #[test]
    fn decoder_reads_back_fields_in_order() {
        let mut enc = Encoder::new();
        enc.f64(1.5).bool(true).bytes(&[9; 32]).u64(42);
        let raw = enc.finish();
        let mut dec = Decoder::new(&raw);
        assert_eq!(dec.f64().unwrap(), 1.5);
        assert!(dec.bool("flag").unwrap());
        assert_eq!(dec.fixed::<32>().unwrap(), [9; 32]);
        assert_eq!(dec.u64().unwrap(), 42);
        dec.finish().unwrap();
    }

    #[test]
    fn decoder_rejects_truncation_and_bad_flags() {
        let mut enc = Encoder::new();
        enc.u8(2);
        let raw = enc.finish();
        assert_eq!(
            Decoder::new(&raw).bool("flag"),
            Err(DecodeError::InvalidValue("flag"))
        );
        assert!(matches!(
            Decoder::new(&raw[..3]).u8(),
            Err(DecodeError::Truncated { .. })
        ));
        let mut dec = Decoder::new(&raw);
        assert!(dec.fixed::<4>().is_err());
    }

    #[test]
    fn sha256_matches_known_vector() {
        let d = sha256(b"abc");
        assert_eq!(d[0], 0xba);
        assert_eq!(d[31], 0xad);
    }
}
