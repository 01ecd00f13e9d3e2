//! JSONL encoding: a header object followed by one `{"id", "vec"}` per line.

use serde::{Deserialize, Serialize};

use super::{EmbeddingStore, Modality};
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
struct Header {
    embs: u32,
    dim: usize,
    modality: Modality,
    model_id: String,
    normalized: bool,
}

#[derive(Serialize)]
struct RecordOut<'a> {
    id: &'a str,
    vec: &'a [f32],
}

#[derive(Deserialize)]
struct RecordIn {
    id: String,
    vec: Vec<f64>,
}

pub fn encode_jsonl(store: &EmbeddingStore) -> Vec<u8> {
    let header = Header {
        embs: 1,
        dim: store.dim,
        modality: store.modality,
        model_id: store.model_id.clone(),
        normalized: store.normalized,
    };
    let mut out = serde_json::to_vec(&header).expect("header serializes");
    out.push(b'\n');
    for (id, vec) in store.iter() {
        serde_json::to_writer(&mut out, &RecordOut { id, vec }).expect("record serializes");
        out.push(b'\n');
    }
    out
}

pub fn decode_jsonl(bytes: &[u8]) -> Result<EmbeddingStore> {
    let text = std::str::from_utf8(bytes).map_err(|_| Error::Corrupt("JSONL store is not UTF-8".into()))?;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, first) = lines.next().ok_or_else(|| Error::Format("empty JSONL store".into()))?;
    let header: Header = serde_json::from_str(first).map_err(|e| Error::Format(format!("bad JSONL header: {e}")))?;
    if header.embs != 1 {
        return Err(Error::Format(format!("unsupported JSONL store version {}", header.embs)));
    }
    let mut store =
        EmbeddingStore::new(header.model_id, header.modality, header.dim).map_err(|e| Error::Format(e.to_string()))?;
    store.normalized = header.normalized;

    for (idx, line) in lines {
        let lineno = idx + 1;
        let rec: RecordIn = serde_json::from_str(line).map_err(|e| Error::Corrupt(format!("line {lineno}: {e}")))?;
        if rec.vec.len() != store.dim {
            return Err(Error::Corrupt(format!(
                "line {lineno}: vector has {} components, expected {}",
                rec.vec.len(),
                store.dim
            )));
        }
        let v: Vec<f32> = rec.vec.iter().map(|x| *x as f32).collect();
        store.push(rec.id, &v).map_err(|e| match e {
            Error::Value(msg) => Error::Value(format!("line {lineno}: {msg}")),
            other => other,
        })?;
    }
    Ok(store)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_line_shape() {
        let mut s = EmbeddingStore::new("m", Modality::Image, 2).unwrap();
        s.push("a", &[0.5, -1.25]).unwrap();
        let text = String::from_utf8(encode_jsonl(&s)).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), r#"{"embs":1,"dim":2,"modality":"image","model_id":"m","normalized":false}"#);
        assert_eq!(lines.next().unwrap(), r#"{"id":"a","vec":[0.5,-1.25]}"#);
    }

    #[test]
    fn mismatched_length_names_the_line() {
        let text = concat!(
            r#"{"embs":1,"dim":2,"modality":"text","model_id":"m","normalized":false}"#,
            "\n",
            r#"{"id":"a","vec":[1,0]}"#,
            "\n",
            r#"{"id":"b","vec":[1,0,0]}"#,
            "\n"
        );
        let err = decode_jsonl(text.as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Corrupt(ref m) if m.contains("line 3")), "{err}");
    }

    #[test]
    fn overflowing_component_is_a_value_error() {
        let text = concat!(
            r#"{"embs":1,"dim":1,"modality":"text","model_id":"m","normalized":false}"#,
            "\n",
            r#"{"id":"a","vec":[1e300]}"#,
        );
        assert!(matches!(decode_jsonl(text.as_bytes()), Err(Error::Value(_))));
    }

    #[test]
    fn bad_header_is_a_format_error() {
        assert!(matches!(
            decode_jsonl(br#"{"embs":2,"dim":1,"modality":"text","model_id":"m","normalized":false}"#),
            Err(Error::Format(_))
        ));
        assert!(matches!(decode_jsonl(b"{\"hello\":1}"), Err(Error::Format(_))));
    }
}
