//! `EMBS` binary encoding (little-endian):
//!
//! ```text
//! magic "EMBS" | version u8 = 1 | modality u8 | flags u8 (bit0 = normalized)
//! dim u32 | count u64 | model_id_len u16 | model_id
//! count x ( id_len u16 | id | dim x f32 )
//! ```

use super::{EmbeddingStore, Modality};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"EMBS";
pub const VERSION: u8 = 1;

const FLAG_NORMALIZED: u8 = 0b1;

pub fn encode_binary(store: &EmbeddingStore) -> Vec<u8> {
    let record_bytes: usize = store.ids.iter().map(|id| 2 + id.len()).sum::<usize>() + store.data.len() * 4;
    let mut out = Vec::with_capacity(21 + store.model_id.len() + record_bytes);
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.push(store.modality.code());
    out.push(if store.normalized { FLAG_NORMALIZED } else { 0 });
    out.extend_from_slice(&(store.dim as u32).to_le_bytes());
    out.extend_from_slice(&(store.len() as u64).to_le_bytes());
    out.extend_from_slice(&(store.model_id.len() as u16).to_le_bytes());
    out.extend_from_slice(store.model_id.as_bytes());
    for (id, v) in store.iter() {
        out.extend_from_slice(&(id.len() as u16).to_le_bytes());
        out.extend_from_slice(id.as_bytes());
        for x in v {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Corrupt(format!(
                "truncated {what} at byte {} (need {n}, have {})",
                self.pos,
                self.buf.len() - self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let len = self.u16(what)? as usize;
        let bytes = self.take(len, what)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| Error::Corrupt(format!("{what} is not valid UTF-8")))
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }
}

pub fn decode_binary(bytes: &[u8]) -> Result<EmbeddingStore> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::Format("missing EMBS magic".into()));
    }
    let mut r = Reader { buf: bytes, pos: 4 };
    let version = r.u8("version")?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported EMBS version {version}")));
    }
    let modality_code = r.u8("modality")?;
    let modality = Modality::from_code(modality_code)
        .ok_or_else(|| Error::Format(format!("unknown modality code {modality_code}")))?;
    let flags = r.u8("flags")?;
    if flags & !FLAG_NORMALIZED != 0 {
        return Err(Error::Format(format!("unknown flag bits {flags:#010b}")));
    }
    let dim = r.u32("dim")? as usize;
    if dim == 0 {
        return Err(Error::Format("dim must be at least 1".into()));
    }
    let count = r.u64("count")?;
    let model_id = r.string("model id")?;

    let mut store = EmbeddingStore::new(model_id, modality, dim)?;
    store.normalized = flags & FLAG_NORMALIZED != 0;
    // A record needs at least 2 + 4*dim bytes; never trust `count` for allocation.
    let cap = (r.remaining() / (2 + 4 * dim)).min(count as usize);
    store.ids.reserve(cap);
    store.data.reserve(cap * dim);

    let mut vector = vec![0f32; dim];
    for k in 0..count {
        let id = r.string(&format!("id of record {k}"))?;
        let raw = r.take(4 * dim, &format!("vector of record {k}"))?;
        for (x, chunk) in vector.iter_mut().zip(raw.chunks_exact(4)) {
            *x = f32::from_le_bytes(chunk.try_into().unwrap());
        }
        store.push(id, &vector)?;
    }
    if r.remaining() != 0 {
        return Err(Error::Corrupt(format!("{} trailing bytes after {count} records", r.remaining())));
    }
    Ok(store)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> EmbeddingStore {
        let mut s = EmbeddingStore::new("clip-test", Modality::Text, 2).unwrap();
        s.push("a", &[1.0, 0.0]).unwrap();
        s.push("b", &[0.0, 1.0]).unwrap();
        s
    }

    #[test]
    fn header_layout() {
        let bytes = encode_binary(&sample());
        assert_eq!(&bytes[..4], b"EMBS");
        assert_eq!(bytes[4], 1);
        assert_eq!(bytes[5], 0);
        assert_eq!(bytes[6], 0);
        assert_eq!(u32::from_le_bytes(bytes[7..11].try_into().unwrap()), 2);
        assert_eq!(u64::from_le_bytes(bytes[11..19].try_into().unwrap()), 2);
        assert_eq!(u16::from_le_bytes(bytes[19..21].try_into().unwrap()), 9);
        assert_eq!(&bytes[21..30], b"clip-test");
        // two records of 2 + 1 + 8 bytes
        assert_eq!(bytes.len(), 30 + 2 * 11);
    }

    #[test]
    fn decodes_what_it_encodes() {
        let s = sample();
        let back = decode_binary(&encode_binary(&s)).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.len(), 2);
        assert_eq!(back.dim(), 2);
    }

    #[test]
    fn empty_store_is_header_only() {
        let s = EmbeddingStore::new("m", Modality::Image, 4).unwrap();
        let bytes = encode_binary(&s);
        assert_eq!(bytes.len(), 21 + 1);
        let back = decode_binary(&bytes).unwrap();
        assert!(back.is_empty());
        assert_eq!(back.dim(), 4);
        assert_eq!(back.modality(), Modality::Image);
    }

    #[test]
    fn rejects_bad_magic_and_version() {
        let mut bytes = encode_binary(&sample());
        bytes[4] = 2;
        assert!(matches!(decode_binary(&bytes), Err(Error::Format(_))));
        assert!(matches!(decode_binary(b"EMBX"), Err(Error::Format(_))));
    }

    #[test]
    fn rejects_truncation_and_trailing_bytes() {
        let bytes = encode_binary(&sample());
        for cut in [5, 12, 25, bytes.len() - 1] {
            assert!(matches!(decode_binary(&bytes[..cut]), Err(Error::Corrupt(_))), "cut {cut}");
        }
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(decode_binary(&extra), Err(Error::Corrupt(_))));
    }

    #[test]
    fn rejects_duplicates_and_nan() {
        let mut bytes = encode_binary(&sample());
        // rename record "b" to "a"
        let b_pos = bytes.len() - 9;
        assert_eq!(bytes[b_pos], b'b');
        bytes[b_pos] = b'a';
        assert!(matches!(decode_binary(&bytes), Err(Error::DuplicateId(_))));

        let mut bytes = encode_binary(&sample());
        let n = bytes.len();
        bytes[n - 4..].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(decode_binary(&bytes), Err(Error::Value(_))));
    }

    #[test]
    fn normalized_flag_round_trips_and_is_checked() {
        let s = sample().mark_normalized().unwrap();
        let bytes = encode_binary(&s);
        assert_eq!(bytes[6], 1);
        assert!(decode_binary(&bytes).unwrap().is_normalized());

        let mut raw = encode_binary(&sample());
        raw[6] = 1;
        let n = raw.len();
        raw[n - 4..].copy_from_slice(&2.0f32.to_le_bytes());
        assert!(matches!(decode_binary(&raw), Err(Error::Value(_))));
    }
}
