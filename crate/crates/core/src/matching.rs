//! Image-text matching with correct/incorrect caption pairs, and the
//! split-caption aggregation that removes the text encoder's order effect.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forge::{split_caption, CaptionSpec, Scenario};
use crate::kernels;
use crate::store::EmbeddingStore;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchTrial {
    pub image_id: String,
    pub correct: String,
    pub incorrect: String,
    pub scenario: Scenario,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub accuracy: f64,
    /// 1 when the correct caption scores higher, 0 when lower, 0.5 on a tie.
    pub outcomes: Vec<f64>,
}

/// Anything that can embed a caption into the joint space.
pub trait TextEmbedder {
    fn embed_text(&self, caption: &CaptionSpec) -> Result<Vec<f64>>;
}

/// Looks single-object captions up in a store keyed by caption text.
pub struct StoreEmbedder<'a>(pub &'a EmbeddingStore);

impl TextEmbedder for StoreEmbedder<'_> {
    fn embed_text(&self, caption: &CaptionSpec) -> Result<Vec<f64>> {
        let v = self
            .0
            .get(&caption.text)
            .ok_or_else(|| Error::Key(format!("no single-object embedding for `{}`", caption.text)))?;
        Ok(v.iter().map(|x| f64::from(*x)).collect())
    }
}

fn unit_f32(id: &str, v: &[f32]) -> Result<Vec<f64>> {
    let wide: Vec<f64> = v.iter().map(|x| f64::from(*x)).collect();
    kernels::unit(&wide).ok_or_else(|| Error::Value(format!("zero vector for `{id}`")))
}

fn score(image: &[f64], correct: &[f64], incorrect: &[f64]) -> f64 {
    let (c, i) = (kernels::dot(image, correct), kernels::dot(image, incorrect));
    if c > i {
        1.0
    } else if c < i {
        0.0
    } else {
        0.5
    }
}

fn mean(outcomes: &[f64]) -> f64 {
    outcomes.iter().sum::<f64>() / outcomes.len() as f64
}

pub fn evaluate_matching(
    trials: &[MatchTrial],
    image_store: &EmbeddingStore,
    text_store: &EmbeddingStore,
) -> Result<MatchResult> {
    if trials.is_empty() {
        return Err(Error::Value("no matching trials".into()));
    }
    if image_store.dim() != text_store.dim() {
        return Err(Error::Dim { expected: image_store.dim(), actual: text_store.dim() });
    }
    let outcomes = trials
        .par_iter()
        .map(|t| {
            let img = unit_f32(&t.image_id, image_store.require(&t.image_id)?)?;
            let c = unit_f32(&t.correct, text_store.require(&t.correct)?)?;
            let i = unit_f32(&t.incorrect, text_store.require(&t.incorrect)?)?;
            Ok(score(&img, &c, &i))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(MatchResult { accuracy: mean(&outcomes), outcomes })
}

/// Mean of the unit-normalized sub-caption embeddings, renormalized. The
/// sum runs in object-name order so the result is exactly independent of
/// the caption's object order.
pub fn aggregate_split_embedding(caption: &CaptionSpec, embedder: &dyn TextEmbedder) -> Result<Vec<f64>> {
    let mut parts = split_caption(caption)?;
    parts.sort_by(|a, b| a.text.cmp(&b.text));
    let mut acc: Option<Vec<f64>> = None;
    for p in &parts {
        let v = embedder.embed_text(p)?;
        let u = kernels::unit(&v).ok_or_else(|| Error::Value(format!("zero embedding for `{}`", p.text)))?;
        match acc.as_mut() {
            None => acc = Some(u),
            Some(a) => {
                if a.len() != u.len() {
                    return Err(Error::Dim { expected: a.len(), actual: u.len() });
                }
                a.iter_mut().zip(&u).for_each(|(x, y)| *x += y);
            }
        }
    }
    let mut acc = acc.expect("split yields at least one caption");
    let n = parts.len() as f64;
    acc.iter_mut().for_each(|x| *x /= n);
    kernels::unit(&acc).ok_or_else(|| Error::Value(format!("aggregate of `{}` is zero", caption.caption_id)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MitigationResult {
    pub original: MatchResult,
    pub mitigated: MatchResult,
}

/// Scores every trial twice: with the stored caption embeddings, and with
/// split-caption aggregates built from `per_object_store` (keyed by object
/// name). `captions` resolves caption ids to their object lists.
pub fn evaluate_with_mitigation(
    trials: &[MatchTrial],
    image_store: &EmbeddingStore,
    text_store: &EmbeddingStore,
    per_object_store: &EmbeddingStore,
    captions: &HashMap<String, CaptionSpec>,
) -> Result<MitigationResult> {
    let original = evaluate_matching(trials, image_store, text_store)?;
    if per_object_store.dim() != image_store.dim() {
        return Err(Error::Dim { expected: image_store.dim(), actual: per_object_store.dim() });
    }
    let embedder = StoreEmbedder(per_object_store);
    let caption = |id: &str| captions.get(id).ok_or_else(|| Error::Key(format!("caption `{id}`")));
    let outcomes = trials
        .par_iter()
        .map(|t| {
            let img = unit_f32(&t.image_id, image_store.require(&t.image_id)?)?;
            let c = aggregate_split_embedding(caption(&t.correct)?, &embedder)?;
            let i = aggregate_split_embedding(caption(&t.incorrect)?, &embedder)?;
            Ok(score(&img, &c, &i))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(MitigationResult { original, mitigated: MatchResult { accuracy: mean(&outcomes), outcomes } })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchRow {
    pub model: String,
    pub scenario: Scenario,
    pub n_trials: usize,
    pub accuracy_original: f64,
    pub accuracy_mitigated: Option<f64>,
}

/// Results keyed by (model, scenario), accuracies in percent.
pub fn match_rows_to_csv(rows: &[MatchRow]) -> String {
    let mut out = String::from("model,scenario,n_trials,accuracy_original,accuracy_mitigated\n");
    for r in rows {
        let mitigated = r.accuracy_mitigated.map(|a| format!("{:.2}", 100.0 * a)).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{:.2},{}\n",
            crate::probe::csv_field(&r.model),
            r.scenario,
            r.n_trials,
            100.0 * r.accuracy_original,
            mitigated
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forge::{make_caption, Template};
    use crate::store::Modality;

    fn store(modality: Modality, rows: &[(&str, Vec<f32>)]) -> EmbeddingStore {
        let mut s = EmbeddingStore::new("m", modality, rows[0].1.len()).unwrap();
        for (id, v) in rows {
            s.push(*id, v).unwrap();
        }
        s
    }

    fn trial(c: &str, i: &str) -> MatchTrial {
        MatchTrial { image_id: "img".into(), correct: c.into(), incorrect: i.into(), scenario: Scenario::One }
    }

    #[test]
    fn outcome_rules() {
        let img = store(Modality::Image, &[("img", vec![1.0, 0.0])]);
        // cosines 0.8 and 0.5
        let txt = store(
            Modality::Text,
            &[("good", vec![0.8, 0.6]), ("bad", vec![0.5, 0.866_025_4]), ("dup", vec![0.8, 0.6])],
        );
        let r = evaluate_matching(&[trial("good", "bad")], &img, &txt).unwrap();
        assert_eq!(r.outcomes, vec![1.0]);
        let r = evaluate_matching(&[trial("good", "dup")], &img, &txt).unwrap();
        assert_eq!(r.outcomes, vec![0.5]);
        let r = evaluate_matching(&[trial("bad", "good"), trial("good", "bad")], &img, &txt).unwrap();
        assert_eq!(r.accuracy, 0.5);
        assert!(matches!(evaluate_matching(&[trial("good", "nope")], &img, &txt), Err(Error::Key(_))));
        assert!(evaluate_matching(&[], &img, &txt).is_err());
    }

    fn object_store() -> EmbeddingStore {
        store(
            Modality::Text,
            &[("cat", vec![1.0, 0.0, 0.0]), ("dog", vec![0.0, 1.0, 0.0]), ("bus", vec![0.0, 0.0, 1.0])],
        )
    }

    #[test]
    fn aggregate_examples() {
        let objs = object_store();
        let e = StoreEmbedder(&objs);
        let cd = make_caption(&["cat", "dog"], Template::Short, None).unwrap();
        let v = aggregate_split_embedding(&cd, &e).unwrap();
        assert!((v[0] - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert!((v[1] - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert_eq!(v[2], 0.0);

        let dc = make_caption(&["dog", "cat"], Template::Short, None).unwrap();
        assert_eq!(aggregate_split_embedding(&dc, &e).unwrap(), v);

        let single = make_caption(&["bus"], Template::Short, None).unwrap();
        assert_eq!(aggregate_split_embedding(&single, &e).unwrap(), vec![0.0, 0.0, 1.0]);

        let ghost = make_caption(&["cat", "ghost"], Template::Short, None).unwrap();
        let err = aggregate_split_embedding(&ghost, &e).unwrap_err();
        assert!(matches!(err, Error::Key(ref m) if m.contains("ghost")));

        let long = make_caption(&["cat"], Template::Long, None).unwrap();
        assert!(matches!(aggregate_split_embedding(&long, &e), Err(Error::Unsupported(_))));
    }

    #[test]
    fn mitigation_reports_both_views() {
        let img = store(Modality::Image, &[("img", vec![0.9, 0.1, 0.42])]);
        let txt = store(Modality::Text, &[("c", vec![1.0, 0.0, 0.0]), ("i", vec![1.0, 0.0, 0.0])]);
        let caps: HashMap<String, CaptionSpec> = [
            make_caption(&["cat", "bus"], Template::Short, None).unwrap().with_id("c"),
            make_caption(&["cat", "dog"], Template::Short, None).unwrap().with_id("i"),
        ]
        .into_iter()
        .map(|c| (c.caption_id.clone(), c))
        .collect();
        let r = evaluate_with_mitigation(&[trial("c", "i")], &img, &txt, &object_store(), &caps).unwrap();
        assert_eq!(r.original.accuracy, 0.5);
        assert_eq!(r.mitigated.accuracy, 1.0);
    }

    #[test]
    fn csv_rows() {
        let rows = vec![MatchRow {
            model: "mock".into(),
            scenario: Scenario::Two,
            n_trials: 10,
            accuracy_original: 0.5223,
            accuracy_mitigated: Some(0.8856),
        }];
        assert_eq!(
            match_rows_to_csv(&rows),
            "model,scenario,n_trials,accuracy_original,accuracy_mitigated\nmock,two,10,52.23,88.56\n"
        );
    }
}
