//! Object vocabularies, caption and scene manifests, scenario pairs and
//! caption splitting. Everything here is deterministic given its seed.

mod caption;
mod generate;
pub mod manifest;
mod scene;
mod vocab;

pub use caption::{
    make_caption, permute_first, split_caption, CaptionSpec, Template, CONJUNCTION, DEFAULT_LONG_FILLERS,
    MAX_CAPTION_OBJECTS,
};
pub use generate::{
    claim1_sentence_sets, gen_manifests, gen_manifests_with, scenario_pairs, MAX_SCENE_OBJECTS, MIN_SCENE_OBJECTS,
};
pub use scene::{make_scenario_pair, Placement, Scenario, ScenarioPair, SceneSpec, SizeRole};
pub use vocab::{SizeClass, VocabEntry, Vocabulary, BUILTIN_VOCABULARIES};
