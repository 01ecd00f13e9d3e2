use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CONJUNCTION: &str = " and ";
pub const MAX_CAPTION_OBJECTS: usize = 8;

/// Phrases used by the long template when no fillers are configured.
pub const DEFAULT_LONG_FILLERS: [&str; 4] =
    ["which is sitting near", "in a bright room with", "placed right beside", "shown together with"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Template {
    Short,
    Long,
}

impl fmt::Display for Template {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Template::Short => "short",
            Template::Long => "long",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionSpec {
    pub caption_id: String,
    pub objects: Vec<String>,
    pub template: Template,
    pub text: String,
}

impl CaptionSpec {
    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.caption_id = id.into();
        self
    }
}

/// Renders a caption. The short template joins names with `" and "`; the
/// long template follows every object with a filler phrase, cycling through
/// `long_fillers` (or [`DEFAULT_LONG_FILLERS`]).
pub fn make_caption<S: AsRef<str>>(
    objects: &[S],
    template: Template,
    long_fillers: Option<&[String]>,
) -> Result<CaptionSpec> {
    if objects.is_empty() {
        return Err(Error::Value("caption needs at least one object".into()));
    }
    if objects.len() > MAX_CAPTION_OBJECTS {
        return Err(Error::Value(format!(
            "caption has {} objects, at most {MAX_CAPTION_OBJECTS} supported",
            objects.len()
        )));
    }
    let objects: Vec<String> = objects.iter().map(|o| o.as_ref().to_string()).collect();
    let text = match template {
        Template::Short => objects.join(CONJUNCTION),
        Template::Long => {
            let defaults: Vec<String>;
            let fillers = match long_fillers {
                Some(f) if !f.is_empty() => f,
                Some(_) => return Err(Error::Value("long template needs at least one filler".into())),
                None => {
                    defaults = DEFAULT_LONG_FILLERS.iter().map(|s| s.to_string()).collect();
                    &defaults
                }
            };
            let mut parts = Vec::with_capacity(objects.len() * 2);
            for (i, o) in objects.iter().enumerate() {
                parts.push(o.as_str());
                parts.push(fillers[i % fillers.len()].as_str());
            }
            parts.join(" ")
        }
    };
    Ok(CaptionSpec { caption_id: String::new(), objects, template, text })
}

/// Moves `objects[first_index]` to the front, keeping the others in order.
pub fn permute_first<S: Clone>(objects: &[S], first_index: usize) -> Result<Vec<S>> {
    if first_index >= objects.len() {
        return Err(Error::Index { index: first_index, len: objects.len() });
    }
    let mut out = Vec::with_capacity(objects.len());
    out.push(objects[first_index].clone());
    out.extend(objects.iter().enumerate().filter(|(i, _)| *i != first_index).map(|(_, o)| o.clone()));
    Ok(out)
}

/// Splits a short-template caption into one caption per object. Sub-caption
/// ids are `<caption_id>/<k>` with `k` counting from 0.
pub fn split_caption(caption: &CaptionSpec) -> Result<Vec<CaptionSpec>> {
    if caption.template != Template::Short {
        return Err(Error::Unsupported(format!(
            "caption `{}` uses the long template; only conjunction captions can be split",
            caption.caption_id
        )));
    }
    let pieces: Vec<&str> = caption.text.split(CONJUNCTION).collect();
    if pieces.len() != caption.objects.len() || pieces.iter().zip(&caption.objects).any(|(p, o)| p != o) {
        return Err(Error::Value(format!("caption `{}` text does not match its object list", caption.caption_id)));
    }
    Ok(pieces
        .into_iter()
        .enumerate()
        .map(|(k, p)| CaptionSpec {
            caption_id: format!("{}/{k}", caption.caption_id),
            objects: vec![p.to_string()],
            template: Template::Short,
            text: p.to_string(),
        })
        .collect())
}
