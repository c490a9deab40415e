//! Tag-length-value encoding used for every hashed or persisted value.
//!
//! A field is `tag (1 byte) ‖ payload length (u32 BE) ‖ payload`. Tags within
//! one list must be strictly ascending, which makes the encoding injective
//! over well-formed lists.

use crate::error::{Error, Result};

pub const FIELD_HEADER_LEN: usize = 5;

/// Encodes `(tag, payload)` pairs into one buffer.
pub fn canonical_encode(fields: &[(u8, &[u8])]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(
        fields
            .iter()
            .map(|(_, p)| FIELD_HEADER_LEN + p.len())
            .sum(),
    );
    let mut last: Option<u8> = None;
    for &(tag, payload) in fields {
        if last.is_some_and(|prev| tag <= prev) {
            return Err(Error::RejectEncoding(format!(
                "tag {tag:#04x} does not follow {:#04x}",
                last.unwrap_or_default()
            )));
        }
        let len = u32::try_from(payload.len()).map_err(|_| {
            Error::RejectEncoding(format!("payload of tag {tag:#04x} exceeds u32 length"))
        })?;
        out.push(tag);
        out.extend_from_slice(&len.to_be_bytes());
        out.extend_from_slice(payload);
        last = Some(tag);
    }
    Ok(out)
}

/// Incremental builder for call sites that already know their tags ascend.
#[derive(Debug, Default)]
pub struct Encoder {
    buf: Vec<u8>,
    last: Option<u8>,
}

impl Encoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn field(mut self, tag: u8, payload: &[u8]) -> Self {
        debug_assert!(self.last.is_none_or(|prev| tag > prev), "tags must ascend");
        debug_assert!(payload.len() <= u32::MAX as usize);
        self.buf.push(tag);
        self.buf
            .extend_from_slice(&(payload.len() as u32).to_be_bytes());
        self.buf.extend_from_slice(payload);
        self.last = Some(tag);
        self
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

/// Parses a buffer produced by [`canonical_encode`], borrowing payloads.
pub fn canonical_decode(mut data: &[u8]) -> Result<Vec<(u8, &[u8])>> {
    let mut fields = Vec::new();
    let mut last: Option<u8> = None;
    while !data.is_empty() {
        if data.len() < FIELD_HEADER_LEN {
            return Err(Error::RejectFormat("truncated field header".into()));
        }
        let tag = data[0];
        if last.is_some_and(|prev| tag <= prev) {
            return Err(Error::RejectFormat(format!("tag {tag:#04x} out of order")));
        }
        let len = u32::from_be_bytes(data[1..5].try_into().unwrap()) as usize;
        let rest = &data[FIELD_HEADER_LEN..];
        if rest.len() < len {
            return Err(Error::RejectFormat(format!("field {tag:#04x} truncated")));
        }
        fields.push((tag, &rest[..len]));
        data = &rest[len..];
        last = Some(tag);
    }
    Ok(fields)
}

/// Typed accessors over a decoded field list.
pub(crate) struct Fields<'a> {
    fields: Vec<(u8, &'a [u8])>,
}

impl<'a> Fields<'a> {
    pub fn parse(data: &'a [u8]) -> Result<Self> {
        Ok(Self {
            fields: canonical_decode(data)?,
        })
    }

    pub fn get(&self, tag: u8) -> Option<&'a [u8]> {
        self.fields.iter().find(|(t, _)| *t == tag).map(|(_, p)| *p)
    }

    pub fn bytes(&self, tag: u8) -> Result<&'a [u8]> {
        self.get(tag)
            .ok_or_else(|| Error::RejectFormat(format!("missing field {tag:#04x}")))
    }

    pub fn array<const N: usize>(&self, tag: u8) -> Result<[u8; N]> {
        self.bytes(tag)?
            .try_into()
            .map_err(|_| Error::RejectFormat(format!("field {tag:#04x} is not {N} bytes")))
    }

    pub fn u64(&self, tag: u8) -> Result<u64> {
        self.array::<8>(tag).map(u64::from_be_bytes)
    }

    pub fn string(&self, tag: u8) -> Result<String> {
        String::from_utf8(self.bytes(tag)?.to_vec())
            .map_err(|_| Error::RejectFormat(format!("field {tag:#04x} is not UTF-8")))
    }

    pub fn opt_string(&self, tag: u8) -> Result<Option<String>> {
        self.get(tag)
            .map(|b| {
                String::from_utf8(b.to_vec())
                    .map_err(|_| Error::RejectFormat(format!("field {tag:#04x} is not UTF-8")))
            })
            .transpose()
    }
}
