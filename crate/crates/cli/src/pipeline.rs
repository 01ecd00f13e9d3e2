//! One function per stage. Each reads its inputs from disk (configured paths
//! or the previous stage's default outputs) so stages can run separately.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use oscope_core::forge::manifest::read_jsonl;
use oscope_core::forge::{
    claim1_sentence_sets, gen_manifests_with, scenario_pairs, CaptionSpec, Scenario, ScenarioPair, SceneSpec,
    Vocabulary,
};
use oscope_core::linear_probe::{history_to_csv, labels_for_group};
use oscope_core::matching::{match_rows_to_csv, MatchRow};
use oscope_core::probe::{reports_to_csv, sweep_stores};
use oscope_core::sim::{convergence_sweep, estimate_both, toy_bias_trainer, SimConfig, SimEstimate, ToyConfig, ToyRun};
use oscope_core::stats::{
    histogram_to_csv, largest_position_histogram, presence_by_position_grouped, presence_to_csv, size_ranked_shares,
    AnalysisRecord, AttentionRecord, DetectionRecord, PositionHistogram, PresenceRow, RankedShares,
};
use oscope_core::{
    evaluate_matching, evaluate_with_mitigation, load_store, save_store, svg, train_probe, EmbeddingStore, GroupKey,
    MatchTrial, MockEncoder, MockEncoderConfig, Modality, ProbeReport, ProbeTask, QueryGroups, Scalar, TrainConfig,
};
use serde::{Deserialize, Serialize};

use crate::config::{
    ForgeSection, LoadedConfig, ManifestKind, MatchSection, MockSection, Precision, ProbeSection, SimulateSection,
    StatsSection, TrainSection,
};
use crate::error::CliError;
use crate::output::RunOutput;

pub const FORGE_SCENES: &str = "forge/scenes.jsonl";
pub const FORGE_CAPTIONS: &str = "forge/captions.jsonl";
pub const FORGE_CLAIM1_LARGE: &str = "forge/claim1_large.jsonl";
pub const FORGE_CLAIM1_SMALL: &str = "forge/claim1_small.jsonl";
pub const PROBE_JSON: &str = "probe/report.json";
pub const PROBE_CSV: &str = "probe/report.csv";
pub const LINEAR_PROBE_JSON: &str = "linear_probe/summary.json";
pub const MATCH_JSON: &str = "match/results.json";
pub const HISTOGRAM_JSON: &str = "stats/histogram.json";
pub const ATTENTION_JSON: &str = "stats/attention.json";
pub const PRESENCE_JSON: &str = "stats/presence.json";

const PAIRS_SEED_OFFSET: u64 = 0x5ce7a210;
const CLAIM1_SEED_OFFSET: u64 = 0xc1a1;

pub fn pairs_path(s: Scenario) -> String {
    format!("forge/pairs_{s}.jsonl")
}

fn store_stem(stem: &str) -> String {
    format!("stores/{stem}")
}

/// Existing store file for `stem` in either format; the binary name when neither exists.
fn default_store(out: &RunOutput, stem: &str) -> PathBuf {
    for ext in ["embs", "jsonl"] {
        let p = out.path(&format!("{}.{ext}", store_stem(stem)));
        if p.exists() {
            return p;
        }
    }
    out.path(&format!("{}.embs", store_stem(stem)))
}

fn section<'a, T>(s: &'a Option<T>, name: &str) -> Result<&'a T, CliError> {
    s.as_ref().ok_or_else(|| CliError::Schema(format!("at `{name}`: section is required for this verb")))
}

fn require_file(p: &Path) -> Result<(), CliError> {
    if p.exists() {
        Ok(())
    } else {
        Err(CliError::Missing(format!("{}: not found", p.display())))
    }
}

fn read_records<T: serde::de::DeserializeOwned>(p: &Path) -> Result<Vec<T>, CliError> {
    require_file(p)?;
    Ok(read_jsonl(p).map_err(|e| e.labeled(p.display().to_string()))?)
}

fn open_store(p: &Path) -> Result<EmbeddingStore, CliError> {
    require_file(p)?;
    Ok(load_store(p).map_err(|e| e.labeled(p.display().to_string()))?)
}

fn load_vocab(cfg: &LoadedConfig, spec: &str) -> Result<Vocabulary, CliError> {
    if oscope_core::forge::BUILTIN_VOCABULARIES.contains(&spec) {
        return Ok(Vocabulary::builtin(spec)?);
    }
    let p = cfg.resolve(Path::new(spec));
    let text = std::fs::read_to_string(&p).map_err(|e| CliError::from_io(&p, e))?;
    Ok(Vocabulary::parse(spec, &text)?)
}

fn jsonl<T: Serialize>(items: &[T]) -> Vec<u8> {
    oscope_core::forge::manifest::to_jsonl(items)
}

pub fn forge(cfg: &LoadedConfig, out: &mut RunOutput) -> Result<(), CliError> {
    let s: &ForgeSection = section(&cfg.config.forge, "forge")?;
    let seed = cfg.config.seed;
    let vocab = load_vocab(cfg, &s.vocabulary)?;
    let (scenes, captions) =
        gen_manifests_with(&vocab, s.n_objects, s.count, seed, s.template, s.long_fillers.as_deref())?;
    out.write(FORGE_SCENES, &jsonl(&scenes))?;
    out.write(FORGE_CAPTIONS, &jsonl(&captions))?;
    if s.scenarios {
        for sc in [Scenario::One, Scenario::Two] {
            let pairs = scenario_pairs(&scenes, &vocab, sc, seed ^ PAIRS_SEED_OFFSET)?;
            out.write(&pairs_path(sc), &jsonl(&pairs))?;
        }
    }
    if let Some(c1) = &s.claim1 {
        let v = load_vocab(cfg, &c1.vocabulary)?;
        let (a, b) = claim1_sentence_sets(&v, c1.count, seed ^ CLAIM1_SEED_OFFSET)?;
        out.write(FORGE_CLAIM1_LARGE, &jsonl(&a))?;
        out.write(FORGE_CLAIM1_SMALL, &jsonl(&b))?;
    }
    out.stage_done("forge")
}

fn save(out: &mut RunOutput, m: &MockSection, stem: &str, store: &EmbeddingStore) -> Result<(), CliError> {
    let rel = format!("{}.{}", store_stem(stem), m.format.extension());
    let p = out.path(&rel);
    if let Some(dir) = p.parent() {
        std::fs::create_dir_all(dir).map_err(|e| CliError::from_io(dir, e))?;
    }
    save_store(store, &p, m.format.format())?;
    out.record(&rel)
}

pub fn mock_encode(cfg: &LoadedConfig, out: &mut RunOutput) -> Result<(), CliError> {
    let m: &MockSection = section(&cfg.config.mock_encode, "mock_encode")?;
    let f = section(&cfg.config.forge, "forge")?;
    let enc_cfg = MockEncoderConfig {
        dim: m.dim,
        seed: cfg.config.seed,
        text_decay: m.text_decay,
        image_size_exponent: m.image_size_exponent,
        text_jitter: m.text_jitter,
        image_jitter: m.image_jitter,
    };
    let vocab = load_vocab(cfg, &f.vocabulary)?;
    let enc = MockEncoder::new(enc_cfg.clone(), &vocab)?;
    let id = m.model_id.as_str();

    let scenes: Vec<SceneSpec> = read_records(&out.path(FORGE_SCENES))?;
    let captions: Vec<CaptionSpec> = read_records(&out.path(FORGE_CAPTIONS))?;
    save(out, m, "text", &enc.text_store(&captions, id)?)?;
    save(out, m, "image", &enc.image_store(&scenes, m.large_scale, id)?)?;
    save(out, m, "objects_text", &enc.object_store(vocab.names(), Modality::Text, id)?)?;
    save(out, m, "objects_image", &enc.object_store(vocab.names(), Modality::Image, id)?)?;

    let mut pair_captions = Vec::new();
    for sc in [Scenario::One, Scenario::Two] {
        let p = out.path(&pairs_path(sc));
        if p.exists() {
            let pairs: Vec<ScenarioPair> = read_records(&p)?;
            pair_captions.extend(pairs.into_iter().flat_map(|p| [p.correct, p.incorrect]));
        }
    }
    if !pair_captions.is_empty() {
        save(out, m, "pairs_text", &enc.text_store(&pair_captions, id)?)?;
    }

    if let Some(c1) = &f.claim1 {
        let v = load_vocab(cfg, &c1.vocabulary)?;
        let enc1 = MockEncoder::new(enc_cfg, &v)?;
        let mut caps: Vec<CaptionSpec> = read_records(&out.path(FORGE_CLAIM1_LARGE))?;
        caps.extend(read_records::<CaptionSpec>(&out.path(FORGE_CLAIM1_SMALL))?);
        save(out, m, "claim1_text", &enc1.text_store(&caps, id)?)?;
        save(out, m, "claim1_objects_image", &enc1.object_store(v.names(), Modality::Image, id)?)?;
    }
    out.stage_done("mock-encode")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledReport {
    pub label: String,
    pub report: ProbeReport,
}

struct ResolvedTask {
    label: String,
    query: PathBuf,
    gallery: PathBuf,
    manifest: PathBuf,
    kind: ManifestKind,
    gallery_map: Option<PathBuf>,
}

fn default_probe_tasks(out: &RunOutput) -> Vec<ResolvedTask> {
    let mut tasks = vec![
        ResolvedTask {
            label: "tor".into(),
            query: default_store(out, "text"),
            gallery: default_store(out, "objects_image"),
            manifest: out.path(FORGE_CAPTIONS),
            kind: ManifestKind::Captions,
            gallery_map: None,
        },
        ResolvedTask {
            label: "ior".into(),
            query: default_store(out, "image"),
            gallery: default_store(out, "objects_text"),
            manifest: out.path(FORGE_SCENES),
            kind: ManifestKind::Scenes,
            gallery_map: None,
        },
    ];
    if out.path(FORGE_CLAIM1_LARGE).exists() {
        for (label, rel) in [("claim1-large", FORGE_CLAIM1_LARGE), ("claim1-small", FORGE_CLAIM1_SMALL)] {
            tasks.push(ResolvedTask {
                label: label.into(),
                query: default_store(out, "claim1_text"),
                gallery: default_store(out, "claim1_objects_image"),
                manifest: out.path(rel),
                kind: ManifestKind::Captions,
                gallery_map: None,
            });
        }
    }
    tasks
}

fn query_groups(manifest: &Path, kind: ManifestKind) -> Result<Vec<QueryGroups>, CliError> {
    Ok(match kind {
        ManifestKind::Captions => {
            read_records::<CaptionSpec>(manifest)?.iter().map(QueryGroups::from_caption).collect()
        }
        ManifestKind::Scenes => read_records::<SceneSpec>(manifest)?.iter().map(QueryGroups::from_scene).collect(),
    })
}

pub fn probe(cfg: &LoadedConfig, out: &mut RunOutput) -> Result<(), CliError> {
    let default = ProbeSection::default();
    let s = cfg.config.probe.as_ref().unwrap_or(&default);
    let tasks: Vec<ResolvedTask> = if s.tasks.is_empty() {
        default_probe_tasks(out)
    } else {
        s.tasks
            .iter()
            .map(|t| ResolvedTask {
                label: t.label.clone(),
                query: cfg.resolve(&t.query_store),
                gallery: cfg.resolve(&t.gallery_store),
                manifest: cfg.resolve(&t.manifest),
                kind: t.kind,
                gallery_map: t.gallery_map.as_ref().map(|p| cfg.resolve(p)),
            })
            .collect()
    };

    let mut loaded = Vec::with_capacity(tasks.len());
    for t in &tasks {
        let maps = match &t.gallery_map {
            Some(p) => {
                let text = std::fs::read(p).map_err(|e| CliError::from_io(p, e))?;
                Some(
                    serde_json::from_slice::<HashMap<String, String>>(&text)
                        .map_err(|e| CliError::Compute(format!("{}: {e}", p.display())))?,
                )
            }
            None => None,
        };
        loaded.push((open_store(&t.query)?, open_store(&t.gallery)?, query_groups(&t.manifest, t.kind)?, maps));
    }
    let probe_tasks: Vec<(String, ProbeTask<'_>)> = tasks
        .iter()
        .zip(&loaded)
        .map(|(t, (q, g, groups, map))| {
            let mut task = ProbeTask::new(q, g, groups.clone());
            if let Some(m) = map {
                task = task.with_gallery_map(m.clone());
            }
            (t.label.clone(), task)
        })
        .collect();
    let reports = sweep_stores(&probe_tasks)?;
    out.write(PROBE_CSV, reports_to_csv(&reports).as_bytes())?;
    let labeled: Vec<LabeledReport> =
        reports.into_iter().map(|(label, report)| LabeledReport { label, report }).collect();
    out.write_json(PROBE_JSON, &labeled)?;
    out.stage_done("probe")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeSummaryRow {
    pub group: GroupKey,
    pub model_id: String,
    pub n_classes: usize,
    pub n_train: usize,
    pub n_holdout: usize,
    pub holdout_accuracy: Option<f64>,
}

fn train_one<T: Scalar>(
    out: &mut RunOutput,
    store: &EmbeddingStore,
    labels: &HashMap<String, String>,
    tc: &TrainConfig,
    group: GroupKey,
) -> Result<ProbeSummaryRow, CliError> {
    let mut o = train_probe::<T>(store, labels, tc).map_err(|e| e.labeled(format!("group {group}")))?;
    o.probe.target_group = Some(group.to_string());
    out.write_json(&format!("linear_probe/{group}.json"), &o.probe)?;
    out.write(&format!("linear_probe/{group}_history.csv"), history_to_csv(&o.history).as_bytes())?;
    Ok(ProbeSummaryRow {
        group,
        model_id: store.model_id().to_string(),
        n_classes: o.probe.n_classes(),
        n_train: o.n_train,
        n_holdout: o.n_holdout,
        holdout_accuracy: o.holdout_accuracy,
    })
}

pub fn train(cfg: &LoadedConfig, out: &mut RunOutput) -> Result<(), CliError> {
    let s: &TrainSection = section(&cfg.config.train_probe, "train_probe")?;
    let default_stem = match s.kind {
        ManifestKind::Captions => "text",
        ManifestKind::Scenes => "image",
    };
    let store_path = s.store.as_ref().map(|p| cfg.resolve(p)).unwrap_or_else(|| default_store(out, default_stem));
    let manifest = s.manifest.as_ref().map(|p| cfg.resolve(p)).unwrap_or_else(|| {
        out.path(match s.kind {
            ManifestKind::Captions => FORGE_CAPTIONS,
            ManifestKind::Scenes => FORGE_SCENES,
        })
    });
    let store = open_store(&store_path)?;
    let queries = query_groups(&manifest, s.kind)?;
    let groups: Vec<GroupKey> = if s.groups.is_empty() {
        queries.iter().flat_map(|q| q.members.iter().map(|(_, k)| *k)).collect::<BTreeSet<_>>().into_iter().collect()
    } else {
        s.groups.clone()
    };
    let o = &s.optimizer;
    let tc = TrainConfig {
        learning_rate: o.learning_rate,
        epochs: o.epochs,
        batch_size: o.batch_size,
        l2: o.l2,
        split_fraction: o.split_fraction,
        seed: cfg.config.seed,
        cosine_decay: o.cosine_decay,
    };
    let mut rows = Vec::with_capacity(groups.len());
    for g in groups {
        let labels = labels_for_group(&queries, g);
        rows.push(match s.precision {
            Precision::F32 => train_one::<f32>(out, &store, &labels, &tc, g)?,
            Precision::F64 => train_one::<f64>(out, &store, &labels, &tc, g)?,
        });
    }
    let mut csv = String::from("group,model_id,n_classes,n_train,n_holdout,holdout_accuracy\n");
    for r in &rows {
        let acc = r.holdout_accuracy.map(|a| format!("{:.2}", 100.0 * a)).unwrap_or_default();
        csv.push_str(&format!("{},{},{},{},{},{acc}\n", r.group, r.model_id, r.n_classes, r.n_train, r.n_holdout));
    }
    out.write("linear_probe/summary.csv", csv.as_bytes())?;
    out.write_json(LINEAR_PROBE_JSON, &rows)?;
    out.stage_done("train-probe")
}

pub fn matching(cfg: &LoadedConfig, out: &mut RunOutput) -> Result<(), CliError> {
    let default = MatchSection { mitigation: true, ..MatchSection::default() };
    let s = cfg.config.matching.as_ref().unwrap_or(&default);
    let image =
        open_store(&s.image_store.as_ref().map(|p| cfg.resolve(p)).unwrap_or_else(|| default_store(out, "image")))?;
    let text =
        open_store(&s.text_store.as_ref().map(|p| cfg.resolve(p)).unwrap_or_else(|| default_store(out, "pairs_text")))?;
    let objects = if s.mitigation {
        Some(open_store(
            &s.object_store.as_ref().map(|p| cfg.resolve(p)).unwrap_or_else(|| default_store(out, "objects_text")),
        )?)
    } else {
        None
    };
    let pair_files: Vec<PathBuf> = if s.pairs.is_empty() {
        [Scenario::One, Scenario::Two].iter().map(|sc| out.path(&pairs_path(*sc))).collect()
    } else {
        s.pairs.iter().map(|p| cfg.resolve(p)).collect()
    };
    let mut by_scenario: BTreeMap<Scenario, Vec<ScenarioPair>> = BTreeMap::new();
    for f in &pair_files {
        for p in read_records::<ScenarioPair>(f)? {
            by_scenario.entry(p.scenario).or_default().push(p);
        }
    }
    let mut rows = Vec::new();
    for (sc, pairs) in &by_scenario {
        let trials: Vec<MatchTrial> = pairs
            .iter()
            .map(|p| MatchTrial {
                image_id: p.image_id.clone(),
                correct: p.correct.caption_id.clone(),
                incorrect: p.incorrect.caption_id.clone(),
                scenario: *sc,
            })
            .collect();
        let (original, mitigated) = match &objects {
            Some(obj) => {
                let caps: HashMap<String, CaptionSpec> = pairs
                    .iter()
                    .flat_map(|p| [p.correct.clone(), p.incorrect.clone()])
                    .map(|c| (c.caption_id.clone(), c))
                    .collect();
                let r = evaluate_with_mitigation(&trials, &image, &text, obj, &caps)?;
                (r.original.accuracy, Some(r.mitigated.accuracy))
            }
            None => (evaluate_matching(&trials, &image, &text)?.accuracy, None),
        };
        rows.push(MatchRow {
            model: text.model_id().to_string(),
            scenario: *sc,
            n_trials: trials.len(),
            accuracy_original: original,
            accuracy_mitigated: mitigated,
        });
    }
    out.write("match/results.csv", match_rows_to_csv(&rows).as_bytes())?;
    out.write_json(MATCH_JSON, &rows)?;
    out.stage_done("match")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PresenceOutput {
    pub label: String,
    pub detection_threshold: Option<f64>,
    pub rows: Vec<PresenceRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramOutput {
    pub label: String,
    pub histograms: Vec<PositionHistogram>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionOutput {
    pub label: String,
    pub n_records: usize,
    pub ranked: RankedShares,
}

fn histogram_svg(label: &str, h: &PositionHistogram) -> String {
    let title = match h.n_objects_filter {
        Some(n) => format!("{label}: largest object position ({n} objects)"),
        None => format!("{label}: largest object position"),
    };
    let bars: Vec<(String, f64)> = h.fractions.iter().map(|(p, f)| (p.to_string(), 100.0 * f)).collect();
    svg::bar_chart(&title, "caption position", "percent of records", &bars)
}

pub fn stats(cfg: &LoadedConfig, out: &mut RunOutput) -> Result<(), CliError> {
    let s: &StatsSection = section(&cfg.config.stats, "stats")?;
    let label = s.label.clone().unwrap_or_else(|| cfg.config.name.clone());
    if s.analysis.is_none() && s.attention.is_none() && s.detections.is_none() {
        return Err(CliError::Schema("at `stats`: set at least one of analysis, attention, detections".into()));
    }
    if let Some(p) = &s.analysis {
        let records: Vec<AnalysisRecord> = read_records(&cfg.resolve(p))?;
        let mut hs = vec![largest_position_histogram(&records, None)?];
        for &n in &s.n_objects {
            hs.push(largest_position_histogram(&records, Some(n)).map_err(|e| e.labeled(format!("{n} objects")))?);
        }
        for h in &hs {
            let tag = h.n_objects_filter.map_or("all".to_string(), |n| format!("n{n}"));
            out.write(&format!("stats/histogram_{tag}.csv"), histogram_to_csv(h).as_bytes())?;
            out.write(&format!("stats/histogram_{tag}.svg"), histogram_svg(&label, h).as_bytes())?;
        }
        out.write_json(HISTOGRAM_JSON, &HistogramOutput { label: label.clone(), histograms: hs })?;
    }
    if let Some(p) = &s.attention {
        let records: Vec<AttentionRecord> = read_records(&cfg.resolve(p))?;
        let ranked = size_ranked_shares(&records)?;
        let mut csv = String::from("rank,mean_share,records\n");
        let mut bars = Vec::new();
        for (k, (m, c)) in ranked.mean_share.iter().zip(&ranked.records_per_rank).enumerate() {
            csv.push_str(&format!("{},{m:.6},{c}\n", k + 1));
            bars.push((format!("#{}", k + 1), *m));
        }
        csv.push_str(&format!("background,{:.6},{}\n", ranked.mean_background, records.len()));
        bars.push(("background".into(), ranked.mean_background));
        out.write("stats/attention.csv", csv.as_bytes())?;
        out.write(
            "stats/attention.svg",
            svg::bar_chart(
                &format!("{label}: CLS attention by object size rank"),
                "object (by patch count)",
                "mean share",
                &bars,
            )
            .as_bytes(),
        )?;
        out.write_json(ATTENTION_JSON, &AttentionOutput { label: label.clone(), n_records: records.len(), ranked })?;
    }
    if let Some(p) = &s.detections {
        let records: Vec<DetectionRecord> = read_records(&cfg.resolve(p))?;
        let rows = presence_by_position_grouped(&records)?;
        out.write("stats/presence.csv", presence_to_csv(&label, &rows).as_bytes())?;
        for r in &rows {
            let bars: Vec<(String, f64)> =
                r.rates.iter().enumerate().map(|(p, v)| (format!("{}", p + 1), 100.0 * v)).collect();
            let title = format!("{label}: object presence by prompt position ({} objects)", r.n_objects);
            out.write(
                &format!("stats/presence_n{}.svg", r.n_objects),
                svg::bar_chart(&title, "prompt position", "percent present", &bars).as_bytes(),
            )?;
        }
        out.write_json(PRESENCE_JSON, &PresenceOutput { label, detection_threshold: s.detection_threshold, rows })?;
    }
    out.stage_done("stats")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoremRow {
    pub d: usize,
    pub k: usize,
    pub b: usize,
    pub trials: usize,
    pub ideal: SimEstimate,
    pub truncated: SimEstimate,
}

pub fn simulate(cfg: &LoadedConfig, out: &mut RunOutput) -> Result<(), CliError> {
    let s: &SimulateSection = section(&cfg.config.simulate, "simulate")?;
    let seed = cfg.config.seed;
    if let Some(t) = &s.theorem {
        let mut rows = Vec::with_capacity(t.b.len());
        let mut csv = String::from("d,k,b,trials,analytic_limit,ideal_mean,ideal_se,truncated_mean,truncated_se\n");
        for &b in &t.b {
            let sc = SimConfig { d: t.d, k: t.k, b, trials: t.trials, seed, distribution: t.distribution };
            let (ideal, truncated) = estimate_both(&sc).map_err(|e| e.labeled(format!("b = {b}")))?;
            csv.push_str(&format!(
                "{},{},{b},{},{:.8},{:.8},{:.8},{:.8},{:.8}\n",
                t.d,
                t.k,
                t.trials,
                ideal.analytic_limit,
                ideal.mean,
                ideal.std_error,
                truncated.mean,
                truncated.std_error
            ));
            rows.push(TheoremRow { d: t.d, k: t.k, b, trials: t.trials, ideal, truncated });
        }
        out.write("sim/theorem.csv", csv.as_bytes())?;
        out.write_json("sim/theorem.json", &rows)?;
    }
    if let Some(c) = &s.convergence {
        let pts = convergence_sweep(c.b, c.k, &c.dims, c.trials, seed, c.distribution)?;
        let mut csv = String::from("d,analytic_limit,ideal_mean,ideal_se,truncated_mean,truncated_se\n");
        for p in &pts {
            csv.push_str(&format!(
                "{},{:.8},{:.8},{:.8},{:.8},{:.8}\n",
                p.d, p.ideal.analytic_limit, p.ideal.mean, p.ideal.std_error, p.truncated.mean, p.truncated.std_error
            ));
        }
        let gap = |f: fn(&oscope_core::sim::ConvergencePoint) -> &SimEstimate| -> Vec<(f64, f64)> {
            pts.iter().map(|p| ((p.d as f64).log2(), (f(p).mean - f(p).analytic_limit).abs())).collect()
        };
        let series = vec![("ideal".to_string(), gap(|p| &p.ideal)), ("truncated".to_string(), gap(|p| &p.truncated))];
        out.write("sim/convergence.csv", csv.as_bytes())?;
        out.write(
            "sim/convergence.svg",
            svg::line_chart(&format!("|objective - e/(e+{})|", c.b), "log2 d", "absolute gap", &series).as_bytes(),
        )?;
        out.write_json("sim/convergence.json", &pts)?;
    }
    if let Some(t) = &s.toy {
        let mut runs: Vec<ToyRun> = Vec::with_capacity(t.gammas.len());
        let mut csv = String::from("gamma,step,first_position_rate,loss\n");
        for &gamma in &t.gammas {
            let tc = ToyConfig {
                d: t.d,
                vocab_size: t.vocab_size,
                n_positions: t.n_positions,
                gamma,
                steps: t.steps,
                batch: t.batch,
                lr: t.lr,
                seed,
                large_scale: t.large_scale,
                eval_every: t.eval_every,
                eval_captions: t.eval_captions,
            };
            let run = toy_bias_trainer(&tc).map_err(|e| e.labeled(format!("gamma = {gamma}")))?;
            for c in &run.checkpoints {
                let loss = c.loss.map(|l| format!("{l:.8}")).unwrap_or_default();
                csv.push_str(&format!("{gamma},{},{:.4},{loss}\n", c.step, c.first_position_rate));
            }
            runs.push(run);
        }
        let series: Vec<(String, Vec<(f64, f64)>)> = runs
            .iter()
            .map(|r| {
                (
                    format!("gamma {}", r.config.gamma),
                    r.checkpoints.iter().map(|c| (c.step as f64, c.first_position_rate)).collect(),
                )
            })
            .collect();
        out.write("sim/toy.csv", csv.as_bytes())?;
        out.write(
            "sim/toy.svg",
            svg::line_chart("First-position retrieval during training", "step", "percent", &series).as_bytes(),
        )?;
        out.write_json("sim/toy.json", &runs)?;
    }
    out.stage_done("simulate")
}

/// Runs every stage whose section is present, in pipeline order.
pub fn run_all(cfg: &LoadedConfig, out: &mut RunOutput) -> Result<Vec<&'static str>, CliError> {
    let c = &cfg.config;
    let mut ran = Vec::new();
    if c.forge.is_some() {
        forge(cfg, out)?;
        ran.push("forge");
    }
    if c.mock_encode.is_some() {
        mock_encode(cfg, out)?;
        ran.push("mock-encode");
    }
    if c.probe.is_some() {
        probe(cfg, out)?;
        ran.push("probe");
    }
    if c.train_probe.is_some() {
        train(cfg, out)?;
        ran.push("train-probe");
    }
    if c.matching.is_some() {
        matching(cfg, out)?;
        ran.push("match");
    }
    if c.stats.is_some() {
        stats(cfg, out)?;
        ran.push("stats");
    }
    if c.simulate.is_some() {
        simulate(cfg, out)?;
        ran.push("simulate");
    }
    if ran.is_empty() {
        return Err(CliError::Schema("at `.`: config has no stage sections".into()));
    }
    Ok(ran)
}
