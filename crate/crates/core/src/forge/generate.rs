use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::caption::{make_caption, CaptionSpec, Template};
use super::scene::{make_scenario_pair, Placement, Scenario, ScenarioPair, SceneSpec, SizeRole};
use super::vocab::{SizeClass, Vocabulary};
use crate::error::{Error, Result};

pub const MIN_SCENE_OBJECTS: usize = 2;
pub const MAX_SCENE_OBJECTS: usize = 5;

/// Paired scene and caption manifests with `n_objects` distinct objects per
/// scene and the large role on a uniformly drawn slot. Short captions.
pub fn gen_manifests(
    vocab: &Vocabulary,
    n_objects: usize,
    count: usize,
    seed: u64,
) -> Result<(Vec<SceneSpec>, Vec<CaptionSpec>)> {
    gen_manifests_with(vocab, n_objects, count, seed, Template::Short, None)
}

pub fn gen_manifests_with(
    vocab: &Vocabulary,
    n_objects: usize,
    count: usize,
    seed: u64,
    template: Template,
    long_fillers: Option<&[String]>,
) -> Result<(Vec<SceneSpec>, Vec<CaptionSpec>)> {
    if !(MIN_SCENE_OBJECTS..=MAX_SCENE_OBJECTS).contains(&n_objects) {
        return Err(Error::Value(format!(
            "scenes hold {MIN_SCENE_OBJECTS} to {MAX_SCENE_OBJECTS} objects, got {n_objects}"
        )));
    }
    if n_objects > vocab.len() {
        return Err(Error::Value(format!(
            "vocabulary `{}` has {} objects, cannot draw {n_objects}",
            vocab.name(),
            vocab.len()
        )));
    }
    if count == 0 {
        return Err(Error::Value("manifest count must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names: Vec<&str> = vocab.names().collect();
    let mut scenes = Vec::with_capacity(count);
    let mut captions = Vec::with_capacity(count);
    for i in 0..count {
        let picked: Vec<&str> = sample(&mut rng, names.len(), n_objects).iter().map(|k| names[k]).collect();
        let large_slot = rng.random_range(0..n_objects);
        let placements = picked
            .iter()
            .enumerate()
            .map(|(slot, o)| Placement {
                object: (*o).to_string(),
                role: if slot == large_slot { SizeRole::Large } else { SizeRole::Small },
                slot: slot as u32,
            })
            .collect();
        scenes.push(SceneSpec { image_id: format!("img{n_objects}-{i:06}"), placements });
        captions.push(make_caption(&picked, template, long_fillers)?.with_id(format!("cap{n_objects}-{i:06}")));
    }
    Ok((scenes, captions))
}

/// Two caption sets for the size-class probe: set A opens with a large
/// object, set B with a small one, each followed by three medium objects.
/// Sentence `i` of both sets shares the same medium objects.
pub fn claim1_sentence_sets(
    vocab: &Vocabulary,
    count: usize,
    seed: u64,
) -> Result<(Vec<CaptionSpec>, Vec<CaptionSpec>)> {
    let large = vocab.of_size(SizeClass::Large);
    let small = vocab.of_size(SizeClass::Small);
    let medium = vocab.of_size(SizeClass::Medium);
    if large.is_empty() || small.is_empty() || medium.len() < 3 {
        return Err(Error::Value(format!(
            "vocabulary `{}` needs >=1 large, >=1 small and >=3 medium objects (has {}, {}, {})",
            vocab.name(),
            large.len(),
            small.len(),
            medium.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut set_a = Vec::with_capacity(count);
    let mut set_b = Vec::with_capacity(count);
    for i in 0..count {
        let first_large = large[rng.random_range(0..large.len())];
        let first_small = small[rng.random_range(0..small.len())];
        let mids: Vec<&str> = sample(&mut rng, medium.len(), 3).iter().map(|k| medium[k]).collect();
        let mut a = vec![first_large];
        a.extend(&mids);
        let mut b = vec![first_small];
        b.extend(&mids);
        set_a.push(make_caption(&a, Template::Short, None)?.with_id(format!("claim1-large-{i:06}")));
        set_b.push(make_caption(&b, Template::Short, None)?.with_id(format!("claim1-small-{i:06}")));
    }
    Ok((set_a, set_b))
}

/// One scenario pair per scene, with the absent object drawn uniformly from
/// the vocabulary objects not in that scene.
pub fn scenario_pairs(
    scenes: &[SceneSpec],
    vocab: &Vocabulary,
    scenario: Scenario,
    seed: u64,
) -> Result<Vec<ScenarioPair>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    scenes
        .iter()
        .map(|scene| {
            let candidates: Vec<&str> = vocab.names().filter(|n| !scene.contains(n)).collect();
            if candidates.is_empty() {
                return Err(Error::Value(format!("no absent object available for `{}`", scene.image_id)));
            }
            let absent = candidates[rng.random_range(0..candidates.len())];
            make_scenario_pair(scene, absent, scenario)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forge::split_caption;

    #[test]
    fn comco_manifest_invariants() {
        let vocab = Vocabulary::builtin("comco").unwrap();
        let (scenes, captions) = gen_manifests(&vocab, 4, 1000, 7).unwrap();
        assert_eq!(scenes.len(), 1000);
        assert_eq!(captions.len(), 1000);
        for (s, c) in scenes.iter().zip(&captions) {
            s.validate().unwrap();
            assert_eq!(s.placements.len(), 4);
            s.unique_large().unwrap();
            let objs: Vec<&str> = s.objects().collect();
            assert_eq!(c.objects, objs);
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let vocab = Vocabulary::builtin("simco").unwrap();
        assert_eq!(gen_manifests(&vocab, 3, 50, 11).unwrap(), gen_manifests(&vocab, 3, 50, 11).unwrap());
        assert_ne!(gen_manifests(&vocab, 3, 50, 11).unwrap().0, gen_manifests(&vocab, 3, 50, 12).unwrap().0);
    }

    #[test]
    fn large_slot_frequencies_are_uniform() {
        let vocab = Vocabulary::builtin("comco").unwrap();
        let n = 4;
        let (scenes, _) = gen_manifests(&vocab, n, 10_000, 3).unwrap();
        let mut counts = vec![0usize; n];
        for s in &scenes {
            counts[s.unique_large().unwrap().slot as usize] += 1;
        }
        let expected = scenes.len() as f64 / n as f64;
        let chi2: f64 = counts.iter().map(|c| (*c as f64 - expected).powi(2) / expected).sum();
        for c in &counts {
            let frac = *c as f64 / scenes.len() as f64;
            assert!((frac - 0.25).abs() < 0.03, "{counts:?}");
        }
        // 3 degrees of freedom, p = 0.001
        assert!(chi2 < 16.27, "chi2 {chi2}");
    }

    #[test]
    fn rejects_oversized_draws() {
        let vocab = Vocabulary::parse("tiny", "a\nb\n").unwrap();
        assert!(gen_manifests(&vocab, 3, 1, 0).is_err());
        assert!(gen_manifests(&vocab, 2, 0, 0).is_err());
    }

    #[test]
    fn claim1_membership() {
        let vocab = Vocabulary::builtin("domainnet").unwrap();
        let (a, b) = claim1_sentence_sets(&vocab, 200, 5).unwrap();
        let large = vocab.of_size(SizeClass::Large);
        let small = vocab.of_size(SizeClass::Small);
        let medium = vocab.of_size(SizeClass::Medium);
        for (ca, cb) in a.iter().zip(&b) {
            assert_eq!(ca.objects.len(), 4);
            assert!(large.contains(&ca.objects[0].as_str()));
            assert!(small.contains(&cb.objects[0].as_str()));
            assert!(ca.objects[1..].iter().all(|o| medium.contains(&o.as_str())));
            let mut mids = ca.objects[1..].to_vec();
            mids.dedup();
            assert_eq!(mids.len(), 3);
            assert_eq!(ca.objects[1..], cb.objects[1..]);
        }
        let (a0, b0) = claim1_sentence_sets(&vocab, 0, 5).unwrap();
        assert!(a0.is_empty() && b0.is_empty());
        assert!(claim1_sentence_sets(&Vocabulary::builtin("comco").unwrap(), 2, 0).is_err());
    }

    #[test]
    fn scenario_pairs_pick_absent_objects() {
        let vocab = Vocabulary::builtin("comco").unwrap();
        let (scenes, _) = gen_manifests(&vocab, 4, 100, 1).unwrap();
        let pairs = scenario_pairs(&scenes, &vocab, Scenario::Two, 9).unwrap();
        for (p, s) in pairs.iter().zip(&scenes) {
            assert!(!s.contains(&p.absent_object));
            assert_eq!(p.incorrect.objects.last().unwrap(), &p.absent_object);
            assert_eq!(split_caption(&p.correct).unwrap().len(), 4);
        }
    }
}
