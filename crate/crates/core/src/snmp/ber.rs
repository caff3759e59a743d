//! The subset of BER needed for SNMPv3 discovery messages.

use super::SnmpError;

pub const INTEGER: u8 = 0x02;
pub const OCTET_STRING: u8 = 0x04;
pub const NULL: u8 = 0x05;
pub const OBJECT_IDENTIFIER: u8 = 0x06;
pub const SEQUENCE: u8 = 0x30;
pub const COUNTER32: u8 = 0x41;

pub fn push_length(out: &mut Vec<u8>, len: usize) {
    if len < 0x80 {
        out.push(len as u8);
    } else {
        let bytes = (len as u32).to_be_bytes();
        let skip = bytes.iter().take_while(|b| **b == 0).count();
        out.push(0x80 | (4 - skip) as u8);
        out.extend_from_slice(&bytes[skip..]);
    }
}

pub fn tlv(tag: u8, content: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(content.len() + 4);
    out.push(tag);
    push_length(&mut out, content.len());
    out.extend_from_slice(content);
    out
}

/// Minimal two's-complement encoding.
pub fn integer(value: i64) -> Vec<u8> {
    let bytes = value.to_be_bytes();
    let mut start = 0;
    while start < 7 {
        let (b, next) = (bytes[start], bytes[start + 1]);
        if (b == 0x00 && next & 0x80 == 0) || (b == 0xff && next & 0x80 != 0) {
            start += 1;
        } else {
            break;
        }
    }
    tlv(INTEGER, &bytes[start..])
}

pub fn unsigned(tag: u8, value: u32) -> Vec<u8> {
    let mut content = vec![0];
    content.extend_from_slice(&value.to_be_bytes());
    let skip = content
        .windows(2)
        .take_while(|w| w[0] == 0 && w[1] & 0x80 == 0)
        .count();
    tlv(tag, &content[skip..])
}

pub fn octets(bytes: &[u8]) -> Vec<u8> {
    tlv(OCTET_STRING, bytes)
}

pub fn oid(arcs: &[u32]) -> Vec<u8> {
    let mut content = vec![(arcs[0] * 40 + arcs[1]) as u8];
    for &arc in &arcs[2..] {
        let mut groups = vec![(arc & 0x7f) as u8];
        let mut rest = arc >> 7;
        while rest > 0 {
            groups.push(0x80 | (rest & 0x7f) as u8);
            rest >>= 7;
        }
        content.extend(groups.iter().rev());
    }
    tlv(OBJECT_IDENTIFIER, &content)
}

pub fn sequence(tag: u8, parts: &[Vec<u8>]) -> Vec<u8> {
    tlv(tag, &parts.concat())
}

/// Cursor over BER data that tracks absolute offsets for error reporting.
#[derive(Debug, Clone)]
pub struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
    base: usize,
}

impl<'a> Reader<'a> {
    pub fn new(data: &'a [u8]) -> Self {
        Reader {
            data,
            pos: 0,
            base: 0,
        }
    }

    pub fn offset(&self) -> usize {
        self.base + self.pos
    }

    pub fn is_empty(&self) -> bool {
        self.pos >= self.data.len()
    }

    fn err(&self, at: usize, reason: impl Into<String>) -> SnmpError {
        SnmpError::Ber {
            offset: self.base + at,
            reason: reason.into(),
        }
    }

    /// Reads one TLV, returning its tag and a reader over its content.
    pub fn any(&mut self) -> Result<(u8, Reader<'a>), SnmpError> {
        let start = self.pos;
        let tag = *self
            .data
            .get(self.pos)
            .ok_or_else(|| self.err(start, "unexpected end of data"))?;
        let first = *self
            .data
            .get(self.pos + 1)
            .ok_or_else(|| self.err(start + 1, "missing length"))?;
        let mut cursor = self.pos + 2;
        let len = if first & 0x80 == 0 {
            usize::from(first)
        } else {
            let n = usize::from(first & 0x7f);
            if n == 0 || n > 4 {
                return Err(self.err(start + 1, format!("unsupported length form 0x{first:02x}")));
            }
            let bytes = self
                .data
                .get(cursor..cursor + n)
                .ok_or_else(|| self.err(cursor, "truncated length"))?;
            cursor += n;
            bytes
                .iter()
                .fold(0usize, |acc, b| (acc << 8) | usize::from(*b))
        };
        let end = cursor
            .checked_add(len)
            .filter(|end| *end <= self.data.len())
            .ok_or_else(|| self.err(start, format!("length {len} overruns buffer")))?;
        let inner = Reader {
            data: &self.data[cursor..end],
            pos: 0,
            base: self.base + cursor,
        };
        self.pos = end;
        Ok((tag, inner))
    }

    pub fn expect(&mut self, tag: u8) -> Result<Reader<'a>, SnmpError> {
        let at = self.pos;
        let (got, inner) = self.any()?;
        if got != tag {
            return Err(self.err(at, format!("expected tag 0x{tag:02x}, found 0x{got:02x}")));
        }
        Ok(inner)
    }

    pub fn rest(&self) -> &'a [u8] {
        &self.data[self.pos..]
    }

    pub fn integer(&mut self) -> Result<i64, SnmpError> {
        let at = self.offset();
        let inner = self.expect(INTEGER)?;
        let bytes = inner.rest();
        if bytes.is_empty() || bytes.len() > 8 {
            return Err(SnmpError::Ber {
                offset: at,
                reason: format!("integer of {} bytes", bytes.len()),
            });
        }
        let init: i64 = if bytes[0] & 0x80 != 0 { -1 } else { 0 };
        Ok(bytes.iter().fold(init, |acc, b| (acc << 8) | i64::from(*b)))
    }

    pub fn octet_string(&mut self) -> Result<&'a [u8], SnmpError> {
        Ok(self.expect(OCTET_STRING)?.rest())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integer_encoding_is_minimal() {
        assert_eq!(integer(0), [0x02, 0x01, 0x00]);
        assert_eq!(integer(127), [0x02, 0x01, 0x7f]);
        assert_eq!(integer(128), [0x02, 0x02, 0x00, 0x80]);
        assert_eq!(integer(-1), [0x02, 0x01, 0xff]);
        assert_eq!(integer(65507), [0x02, 0x03, 0x00, 0xff, 0xe3]);
        for v in [
            0i64,
            1,
            -1,
            127,
            128,
            -128,
            -129,
            65507,
            i32::MAX as i64,
            i32::MIN as i64,
        ] {
            assert_eq!(Reader::new(&integer(v)).integer().unwrap(), v);
        }
    }

    #[test]
    fn long_form_length() {
        let content = vec![0xab; 300];
        let enc = octets(&content);
        assert_eq!(&enc[..4], &[0x04, 0x82, 0x01, 0x2c]);
        assert_eq!(Reader::new(&enc).octet_string().unwrap(), &content[..]);
    }

    #[test]
    fn oid_encoding() {
        assert_eq!(
            oid(&[1, 3, 6, 1, 6, 3, 15, 1, 1, 4, 0]),
            [0x06, 0x0a, 0x2b, 6, 1, 6, 3, 15, 1, 1, 4, 0]
        );
        assert_eq!(
            oid(&[1, 3, 6, 1, 4, 1, 2636]),
            [0x06, 0x07, 0x2b, 6, 1, 4, 1, 0x94, 0x4c]
        );
    }

    #[test]
    fn overrun_reports_offset() {
        let err = Reader::new(&[0x30, 0x05, 0x02, 0x01]).any().unwrap_err();
        assert_eq!(
            err,
            SnmpError::Ber {
                offset: 0,
                reason: "length 5 overruns buffer".into()
            }
        );
    }
}
