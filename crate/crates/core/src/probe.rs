//! Object retrieval probes over multi-object embeddings.
//!
//! One computation covers text-side retrieval (caption query, single-object
//! caption gallery), image-side retrieval (scene query, single-object image
//! gallery) and image-to-text retrieval (scene query, object-name text
//! gallery). Each query retrieves the nearest gallery item by cosine over
//! the whole gallery; a retrieved object that belongs to the query is
//! credited to that object's group (caption position or size role), anything
//! else counts as a miss.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::forge::{CaptionSpec, SceneSpec, SizeRole};
use crate::store::{EmbeddingStore, UnitRows};

/// A caption position (1-based) or a size role within a scene.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum GroupKey {
    Position(u32),
    Large,
    /// 1-based index among the small objects, in placement order.
    Small(u32),
}

impl fmt::Display for GroupKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GroupKey::Position(p) => write!(f, "pos{p}"),
            GroupKey::Large => f.write_str("large"),
            GroupKey::Small(k) => write!(f, "small_{k}"),
        }
    }
}

impl FromStr for GroupKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Value(format!("bad group key `{s}`"));
        if s == "large" {
            Ok(GroupKey::Large)
        } else if let Some(n) = s.strip_prefix("pos") {
            n.parse().ok().filter(|n| *n > 0).map(GroupKey::Position).ok_or_else(bad)
        } else if let Some(n) = s.strip_prefix("small_") {
            n.parse().ok().filter(|n| *n > 0).map(GroupKey::Small).ok_or_else(bad)
        } else {
            Err(bad())
        }
    }
}

impl Serialize for GroupKey {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for GroupKey {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// The objects of one query and the group each is credited to.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryGroups {
    pub query_id: String,
    pub members: Vec<(String, GroupKey)>,
}

impl QueryGroups {
    /// Positions 1..n in caption order.
    pub fn from_caption(caption: &CaptionSpec) -> Self {
        Self {
            query_id: caption.caption_id.clone(),
            members: caption
                .objects
                .iter()
                .enumerate()
                .map(|(i, o)| (o.clone(), GroupKey::Position(i as u32 + 1)))
                .collect(),
        }
    }

    /// `large` for the large object, `small_k` for the others in placement order.
    pub fn from_scene(scene: &SceneSpec) -> Self {
        let mut k = 0;
        let members = scene
            .placements
            .iter()
            .map(|p| {
                let key = match p.role {
                    SizeRole::Large => GroupKey::Large,
                    SizeRole::Small => {
                        k += 1;
                        GroupKey::Small(k)
                    }
                };
                (p.object.clone(), key)
            })
            .collect();
        Self { query_id: scene.image_id.clone(), members }
    }
}

#[derive(Debug, Clone)]
pub struct ProbeTask<'a> {
    pub query_store: &'a EmbeddingStore,
    pub gallery_store: &'a EmbeddingStore,
    pub gallery_object_of: HashMap<String, String>,
    pub queries: Vec<QueryGroups>,
}

impl<'a> ProbeTask<'a> {
    /// Gallery ids are taken to be object names.
    pub fn new(query_store: &'a EmbeddingStore, gallery_store: &'a EmbeddingStore, queries: Vec<QueryGroups>) -> Self {
        let gallery_object_of = gallery_store.ids().iter().map(|id| (id.clone(), id.clone())).collect();
        Self { query_store, gallery_store, gallery_object_of, queries }
    }

    pub fn from_captions(query: &'a EmbeddingStore, gallery: &'a EmbeddingStore, captions: &[CaptionSpec]) -> Self {
        Self::new(query, gallery, captions.iter().map(QueryGroups::from_caption).collect())
    }

    pub fn from_scenes(query: &'a EmbeddingStore, gallery: &'a EmbeddingStore, scenes: &[SceneSpec]) -> Self {
        Self::new(query, gallery, scenes.iter().map(QueryGroups::from_scene).collect())
    }

    pub fn with_gallery_map(mut self, map: HashMap<String, String>) -> Self {
        self.gallery_object_of = map;
        self
    }

    fn validate(&self) -> Result<Vec<usize>> {
        if self.gallery_store.is_empty() {
            return Err(Error::Config("gallery store is empty".into()));
        }
        if self.query_store.dim() != self.gallery_store.dim() {
            return Err(Error::Dim { expected: self.query_store.dim(), actual: self.gallery_store.dim() });
        }
        if let Some(id) = self.gallery_store.ids().iter().find(|id| !self.gallery_object_of.contains_key(*id)) {
            return Err(Error::Config(format!("gallery id `{id}` has no object mapping")));
        }
        let mut rows = Vec::with_capacity(self.queries.len());
        for q in &self.queries {
            if q.members.is_empty() {
                return Err(Error::Config(format!("query `{}` has no objects", q.query_id)));
            }
            let mut objs = HashSet::new();
            let mut keys = HashSet::new();
            for (o, k) in &q.members {
                if !objs.insert(o) {
                    return Err(Error::Config(format!("query `{}` repeats object `{o}`", q.query_id)));
                }
                if !keys.insert(k) {
                    return Err(Error::Config(format!("query `{}` repeats group `{k}`", q.query_id)));
                }
            }
            let row = self
                .query_store
                .index_of(&q.query_id)
                .ok_or_else(|| Error::Config(format!("query `{}` is not in the query store", q.query_id)))?;
            rows.push(row);
        }
        Ok(rows)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupStat {
    pub count: usize,
    /// `count / hits`, or 0 when nothing was hit.
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub model_id: String,
    pub n_queries: usize,
    pub hit_rate: f64,
    pub miss_count: usize,
    pub per_group: BTreeMap<GroupKey, GroupStat>,
}

impl ProbeReport {
    pub fn hits(&self) -> usize {
        self.n_queries - self.miss_count
    }

    pub fn rate(&self, key: GroupKey) -> f64 {
        self.per_group.get(&key).map_or(0.0, |g| g.rate)
    }
}

/// Retrieved gallery row for every query, in query order.
pub fn retrieve(task: &ProbeTask<'_>) -> Result<Vec<usize>> {
    let rows = task.validate()?;
    let q = UnitRows::from_store(task.query_store)?;
    let g = UnitRows::from_store(task.gallery_store)?;
    Ok(rows.par_iter().map(|&r| g.nearest(q.row(r)).expect("non-empty gallery").0).collect())
}

pub fn run_probe(task: &ProbeTask<'_>) -> Result<ProbeReport> {
    let retrieved = retrieve(task)?;
    let gallery_ids = task.gallery_store.ids();

    let mut per_group: BTreeMap<GroupKey, GroupStat> = BTreeMap::new();
    for q in &task.queries {
        for (_, k) in &q.members {
            per_group.entry(*k).or_insert(GroupStat { count: 0, rate: 0.0 });
        }
    }
    let mut misses = 0;
    for (q, &j) in task.queries.iter().zip(&retrieved) {
        let object = &task.gallery_object_of[&gallery_ids[j]];
        match q.members.iter().find(|(o, _)| o == object) {
            Some((_, k)) => per_group.get_mut(k).expect("seeded above").count += 1,
            None => misses += 1,
        }
    }
    let n = task.queries.len();
    let hits = n - misses;
    for g in per_group.values_mut() {
        g.rate = if hits > 0 { g.count as f64 / hits as f64 } else { 0.0 };
    }
    Ok(ProbeReport {
        model_id: task.query_store.model_id().to_string(),
        n_queries: n,
        hit_rate: if n > 0 { hits as f64 / n as f64 } else { 0.0 },
        miss_count: misses,
        per_group,
    })
}

/// `run_probe` over labeled tasks, keeping input order. Errors carry the label.
pub fn sweep_stores(tasks: &[(String, ProbeTask<'_>)]) -> Result<Vec<(String, ProbeReport)>> {
    if tasks.is_empty() {
        return Err(Error::Config("sweep needs at least one task".into()));
    }
    tasks
        .iter()
        .map(|(label, t)| run_probe(t).map(|r| (label.clone(), r)).map_err(|e| e.labeled(label.clone())))
        .collect()
}

/// One row per labeled report, one column per group key (percent of hits).
pub fn reports_to_csv(rows: &[(String, ProbeReport)]) -> String {
    let keys: BTreeSet<GroupKey> = rows.iter().flat_map(|(_, r)| r.per_group.keys().copied()).collect();
    let mut out = String::from("label,model_id,n_queries,hit_rate,miss_count");
    for k in &keys {
        out.push(',');
        out.push_str(&k.to_string());
    }
    out.push('\n');
    for (label, r) in rows {
        out.push_str(&format!(
            "{},{},{},{:.4},{}",
            csv_field(label),
            csv_field(&r.model_id),
            r.n_queries,
            r.hit_rate,
            r.miss_count
        ));
        for k in &keys {
            match r.per_group.get(k) {
                Some(g) => out.push_str(&format!(",{:.2}", 100.0 * g.rate)),
                None => out.push(','),
            }
        }
        out.push('\n');
    }
    out
}

pub(crate) fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::Modality;

    fn store(rows: &[(&str, Vec<f32>)]) -> EmbeddingStore {
        let mut s = EmbeddingStore::new("m", Modality::Text, rows[0].1.len()).unwrap();
        for (id, v) in rows {
            s.push(*id, v).unwrap();
        }
        s
    }

    fn gallery() -> EmbeddingStore {
        store(&[("A", vec![1.0, 0.0]), ("B", vec![0.0, 1.0]), ("C", vec![0.6, 0.8])])
    }

    fn query(id: &str, objs: &[&str]) -> QueryGroups {
        QueryGroups {
            query_id: id.into(),
            members: objs.iter().enumerate().map(|(i, o)| (o.to_string(), GroupKey::Position(i as u32 + 1))).collect(),
        }
    }

    #[test]
    fn worked_example_hits_first_position() {
        let q = store(&[("q", vec![0.9, 0.3])]);
        let g = gallery();
        let r = run_probe(&ProbeTask::new(&q, &g, vec![query("q", &["A", "B"])])).unwrap();
        assert_eq!(r.per_group[&GroupKey::Position(1)].count, 1);
        assert_eq!(r.per_group[&GroupKey::Position(2)].count, 0);
        assert_eq!(r.miss_count, 0);
        assert_eq!(r.hit_rate, 1.0);
    }

    #[test]
    fn retrieving_a_foreign_object_is_a_miss() {
        let q = store(&[("q", vec![0.6, 0.8])]);
        let g = gallery();
        let r = run_probe(&ProbeTask::new(&q, &g, vec![query("q", &["A", "B"])])).unwrap();
        assert_eq!(r.miss_count, 1);
        assert_eq!(r.hit_rate, 0.0);
        assert!(r.per_group.values().all(|s| s.rate == 0.0));
    }

    #[test]
    fn config_errors() {
        let q = store(&[("q", vec![0.9, 0.3])]);
        let g = gallery();
        let mut map: HashMap<String, String> = HashMap::new();
        map.insert("A".into(), "A".into());
        let t = ProbeTask::new(&q, &g, vec![query("q", &["A"])]).with_gallery_map(map);
        assert!(matches!(run_probe(&t), Err(Error::Config(_))));
        let t = ProbeTask::new(&q, &g, vec![query("q", &[])]);
        assert!(matches!(run_probe(&t), Err(Error::Config(_))));
        let t = ProbeTask::new(&q, &g, vec![query("nope", &["A"])]);
        assert!(matches!(run_probe(&t), Err(Error::Config(_))));
        let g3 = store(&[("A", vec![1.0, 0.0, 0.0])]);
        assert!(matches!(run_probe(&ProbeTask::new(&q, &g3, vec![query("q", &["A"])])), Err(Error::Dim { .. })));
    }

    #[test]
    fn group_keys_parse_and_order() {
        for s in ["pos1", "pos12", "large", "small_3"] {
            assert_eq!(s.parse::<GroupKey>().unwrap().to_string(), s);
        }
        assert!("pos0".parse::<GroupKey>().is_err());
        assert!("medium".parse::<GroupKey>().is_err());
        assert!(GroupKey::Position(9) < GroupKey::Large && GroupKey::Large < GroupKey::Small(1));
    }

    #[test]
    fn scene_groups_label_roles() {
        use crate::forge::Placement;
        let scene = SceneSpec {
            image_id: "i".into(),
            placements: vec![
                Placement { object: "x".into(), role: SizeRole::Small, slot: 0 },
                Placement { object: "y".into(), role: SizeRole::Large, slot: 1 },
                Placement { object: "z".into(), role: SizeRole::Small, slot: 2 },
            ],
        };
        let g = QueryGroups::from_scene(&scene);
        let keys: Vec<String> = g.members.iter().map(|(_, k)| k.to_string()).collect();
        assert_eq!(keys, ["small_1", "large", "small_2"]);
    }

    #[test]
    fn sweep_labels_errors_and_keeps_order() {
        let q = store(&[("q", vec![0.9, 0.3])]);
        let g = gallery();
        let ok = ProbeTask::new(&q, &g, vec![query("q", &["A", "B"])]);
        let single = sweep_stores(&[("only".into(), ok.clone())]).unwrap();
        assert_eq!(single[0].1, run_probe(&ok).unwrap());
        let bad = ProbeTask::new(&q, &g, vec![query("missing", &["A"])]);
        let err = sweep_stores(&[("2B".into(), ok), ("4B".into(), bad)]).unwrap_err();
        assert!(err.to_string().starts_with("4B:"), "{err}");
        assert!(sweep_stores(&[]).is_err());
    }

    #[test]
    fn csv_layout() {
        let q = store(&[("q", vec![0.9, 0.3])]);
        let g = gallery();
        let r = run_probe(&ProbeTask::new(&q, &g, vec![query("q", &["A", "B"])])).unwrap();
        let csv = reports_to_csv(&[("tor".into(), r)]);
        assert_eq!(csv, "label,model_id,n_queries,hit_rate,miss_count,pos1,pos2\ntor,m,1,1.0000,0,100.00,0.00\n");
    }
}
