//! Length-prefixed field encoding shared by hashed payloads, envelope
//! plaintexts and wire frames: every field is a 4-byte big-endian length
//! followed by that many bytes.

/// Appends one length-prefixed field to `out`.
pub(crate) fn put_field(out: &mut Vec<u8>, field: &[u8]) {
    let len = u32::try_from(field.len()).expect("field longer than u32::MAX");
    out.extend_from_slice(&len.to_be_bytes());
    out.extend_from_slice(field);
}

/// Concatenates `fields` in length-prefixed form.
pub(crate) fn join_fields(fields: &[&[u8]]) -> Vec<u8> {
    let mut out = Vec::with_capacity(fields.iter().map(|f| f.len() + 4).sum());
    for field in fields {
        put_field(&mut out, field);
    }
    out
}

/// Cursor over a buffer of length-prefixed fields.
pub(crate) struct FieldReader<'a> {
    buf: &'a [u8],
}

impl<'a> FieldReader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Self { buf }
    }

    /// Next field, or `None` when the prefix or body is truncated.
    pub(crate) fn next_field(&mut self) -> Option<&'a [u8]> {
        if self.buf.len() < 4 {
            return None;
        }
        let (prefix, rest) = self.buf.split_at(4);
        let len = u32::from_be_bytes(prefix.try_into().ok()?) as usize;
        if rest.len() < len {
            return None;
        }
        let (field, rest) = rest.split_at(len);
        self.buf = rest;
        Some(field)
    }

    pub(crate) fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }
}

/// Splits `buf` into exactly `N` fields, rejecting truncation and trailing bytes.
pub(crate) fn split_fields<const N: usize>(buf: &[u8]) -> Option<[&[u8]; N]> {
    let mut reader = FieldReader::new(buf);
    let mut fields: [&[u8]; N] = [&[]; N];
    for slot in fields.iter_mut() {
        *slot = reader.next_field()?;
    }
    reader.is_empty().then_some(fields)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn join_then_split() {
        let joined = join_fields(&[b"ab", b"", b"xyz"]);
        assert_eq!(joined, [0, 0, 0, 2, b'a', b'b', 0, 0, 0, 0, 0, 0, 0, 3, b'x', b'y', b'z']);
        let [a, b, c] = split_fields::<3>(&joined).unwrap();
        assert_eq!((a, b, c), (&b"ab"[..], &b""[..], &b"xyz"[..]));
    }

    #[test]
    fn split_rejects_trailing_and_truncated() {
        let joined = join_fields(&[b"ab"]);
        assert!(split_fields::<2>(&joined).is_none());
        let mut trailing = joined.clone();
        trailing.push(0);
        assert!(split_fields::<1>(&trailing).is_none());
        assert!(split_fields::<1>(&joined[..joined.len() - 1]).is_none());
    }
}
