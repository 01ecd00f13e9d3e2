use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::caption::{make_caption, CaptionSpec, Template};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SizeRole {
    Large,
    Small,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Placement {
    pub object: String,
    pub role: SizeRole,
    pub slot: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub image_id: String,
    pub placements: Vec<Placement>,
}

impl SceneSpec {
    /// Checks the scene is non-empty with unique slots and distinct objects.
    pub fn validate(&self) -> Result<()> {
        if self.placements.is_empty() {
            return Err(Error::Value(format!("scene `{}` has no placements", self.image_id)));
        }
        let mut slots = HashSet::new();
        let mut names = HashSet::new();
        for p in &self.placements {
            if !slots.insert(p.slot) {
                return Err(Error::Value(format!("scene `{}` reuses slot {}", self.image_id, p.slot)));
            }
            if !names.insert(p.object.as_str()) {
                return Err(Error::Value(format!("scene `{}` repeats `{}`", self.image_id, p.object)));
            }
        }
        Ok(())
    }

    /// The single large placement, if there is exactly one.
    pub fn unique_large(&self) -> Result<&Placement> {
        let mut large = self.placements.iter().filter(|p| p.role == SizeRole::Large);
        match (large.next(), large.next()) {
            (Some(p), None) => Ok(p),
            _ => Err(Error::Value(format!("scene `{}` has no unique large object", self.image_id))),
        }
    }

    pub fn contains(&self, object: &str) -> bool {
        self.placements.iter().any(|p| p.object == object)
    }

    pub fn objects(&self) -> impl Iterator<Item = &str> + '_ {
        self.placements.iter().map(|p| p.object.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    /// Large object first; the substituted absent object also goes first.
    One,
    /// Large object last; the absent object replaces it at the end.
    Two,
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scenario::One => "one",
            Scenario::Two => "two",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioPair {
    pub image_id: String,
    pub correct: CaptionSpec,
    pub incorrect: CaptionSpec,
    pub scenario: Scenario,
    pub absent_object: String,
}

/// Builds the matched correct/incorrect caption pair for one scene.
pub fn make_scenario_pair(scene: &SceneSpec, absent: &str, scenario: Scenario) -> Result<ScenarioPair> {
    scene.validate()?;
    if scene.contains(absent) {
        return Err(Error::Value(format!("`{absent}` is present in scene `{}`", scene.image_id)));
    }
    let large = scene.unique_large()?;
    let rest: Vec<&str> =
        scene.placements.iter().filter(|p| p.role != SizeRole::Large).map(|p| p.object.as_str()).collect();

    let arrange = |head: &str| -> Vec<String> {
        let mut v: Vec<String> = Vec::with_capacity(rest.len() + 1);
        match scenario {
            Scenario::One => {
                v.push(head.to_string());
                v.extend(rest.iter().map(|s| s.to_string()));
            }
            Scenario::Two => {
                v.extend(rest.iter().map(|s| s.to_string()));
                v.push(head.to_string());
            }
        }
        v
    };
    let tag = match scenario {
        Scenario::One => "s1",
        Scenario::Two => "s2",
    };
    let correct = make_caption(&arrange(&large.object), Template::Short, None)?
        .with_id(format!("{}/{tag}/correct", scene.image_id));
    let incorrect =
        make_caption(&arrange(absent), Template::Short, None)?.with_id(format!("{}/{tag}/incorrect", scene.image_id));
    Ok(ScenarioPair {
        image_id: scene.image_id.clone(),
        correct,
        incorrect,
        scenario,
        absent_object: absent.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn scene(id: &str, large: &str, small: &[&str]) -> SceneSpec {
        let mut placements = vec![Placement { object: large.into(), role: SizeRole::Large, slot: 0 }];
        for (i, s) in small.iter().enumerate() {
            placements.push(Placement { object: (*s).into(), role: SizeRole::Small, slot: i as u32 + 1 });
        }
        SceneSpec { image_id: id.into(), placements }
    }

    #[test]
    fn scenario_one() {
        let s = scene("img", "bus", &["cat", "dog", "cup"]);
        let p = make_scenario_pair(&s, "zebra", Scenario::One).unwrap();
        assert_eq!(p.correct.text, "bus and cat and dog and cup");
        assert_eq!(p.incorrect.text, "zebra and cat and dog and cup");
    }

    #[test]
    fn scenario_two() {
        let s = scene("img", "bus", &["cat", "dog", "cup"]);
        let p = make_scenario_pair(&s, "zebra", Scenario::Two).unwrap();
        assert_eq!(p.correct.text, "cat and dog and cup and bus");
        assert_eq!(p.incorrect.text, "cat and dog and cup and zebra");
        assert_eq!(p.correct.objects.len(), p.incorrect.objects.len());
    }

    #[test]
    fn two_object_scene() {
        let s = scene("img", "tv", &["mug"]);
        let p = make_scenario_pair(&s, "fork", Scenario::One).unwrap();
        assert_eq!(p.correct.text, "tv and mug");
        assert_eq!(p.incorrect.text, "fork and mug");
    }

    #[test]
    fn errors() {
        let s = scene("img", "tv", &["mug"]);
        assert!(make_scenario_pair(&s, "mug", Scenario::One).is_err());
        let mut no_large = s.clone();
        no_large.placements[0].role = SizeRole::Small;
        assert!(make_scenario_pair(&no_large, "fork", Scenario::Two).is_err());
        let mut two_large = s;
        two_large.placements[1].role = SizeRole::Large;
        assert!(make_scenario_pair(&two_large, "fork", Scenario::Two).is_err());
    }
}
