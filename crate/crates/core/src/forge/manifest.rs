//! JSONL manifest reading and writing.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

pub fn to_jsonl<T: Serialize>(items: &[T]) -> Vec<u8> {
    let mut out = Vec::new();
    for item in items {
        serde_json::to_writer(&mut out, item).expect("manifest rows serialize");
        out.push(b'\n');
    }
    out
}

pub fn from_jsonl<T: DeserializeOwned>(text: &str) -> Result<Vec<T>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::Corrupt(format!("line {}: {e}", i + 1))))
        .collect()
}

pub fn write_jsonl<T: Serialize>(path: impl AsRef<Path>, items: &[T]) -> Result<()> {
    crate::store::write_atomic(path.as_ref(), &to_jsonl(items))
}

pub fn read_jsonl<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_jsonl(&text).map_err(|e| match e {
        Error::Corrupt(m) => Error::Corrupt(format!("{}: {m}", path.display())),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forge::{make_caption, Placement, SceneSpec, SizeRole, Template};

    #[test]
    fn scene_schema() {
        let s = SceneSpec {
            image_id: "i".into(),
            placements: vec![Placement { object: "cat".into(), role: SizeRole::Large, slot: 0 }],
        };
        assert_eq!(
            String::from_utf8(to_jsonl(&[s])).unwrap(),
            "{\"image_id\":\"i\",\"placements\":[{\"object\":\"cat\",\"role\":\"large\",\"slot\":0}]}\n"
        );
    }

    #[test]
    fn caption_schema_round_trip() {
        let c = make_caption(&["cat", "dog"], Template::Short, None).unwrap().with_id("c");
        let line = String::from_utf8(to_jsonl(std::slice::from_ref(&c))).unwrap();
        assert_eq!(
            line,
            "{\"caption_id\":\"c\",\"objects\":[\"cat\",\"dog\"],\"template\":\"short\",\"text\":\"cat and dog\"}\n"
        );
        let back: Vec<crate::forge::CaptionSpec> = from_jsonl(&line).unwrap();
        assert_eq!(back, vec![c]);
    }
}
