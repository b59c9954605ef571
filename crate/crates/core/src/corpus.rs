//! Instruction-corpus schema, builder, validator, and statistics.
//!
//! A corpus file is a single JSON document: a version field, the sample
//! array, and a hash of the template bank that produced it. Boxes are
//! serialized as `[x0, y0, x1, y1]`, masks as run-length objects.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{rle_decode, Box, Rle};
use crate::trp::{
    self, AnswerAst, PhraseChild, PhraseNode, RefToken, Segment, Triplet, UnitBinding,
};
use crate::vdcot::{self, CotBlock, CotEntry};

pub const CORPUS_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("unreadable file: {0}")]
    UnreadableFile(String),
    #[error("schema error: {0}")]
    SchemaError(String),
    #[error("annotation {image_id:?} region {label:?} lacks {needed} geometry")]
    MissingGeometry {
        image_id: String,
        label: String,
        needed: &'static str,
    },
    #[error("template bank has no templates for task {0}")]
    EmptyTemplateBank(String),
}

/// Raw input region: a label plus at least one of box/mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionAnnotation {
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none", rename = "box")]
    pub bbox: Option<Box>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<Rle>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub image_id: String,
    pub regions: Vec<RegionAnnotation>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    Det,
    Seg,
    Rec,
    Res,
    Reg,
    GcgBox,
    GcgMask,
    InteractiveMask,
}

impl TaskKind {
    pub const ALL: [TaskKind; 8] = [
        TaskKind::Det,
        TaskKind::Seg,
        TaskKind::Rec,
        TaskKind::Res,
        TaskKind::Reg,
        TaskKind::GcgBox,
        TaskKind::GcgMask,
        TaskKind::InteractiveMask,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::Det => "det",
            TaskKind::Seg => "seg",
            TaskKind::Rec => "rec",
            TaskKind::Res => "res",
            TaskKind::Reg => "reg",
            TaskKind::GcgBox => "gcg-box",
            TaskKind::GcgMask => "gcg-mask",
            TaskKind::InteractiveMask => "interactive-mask",
        }
    }

    /// The unit this task decodes to, if it decodes at all.
    pub fn unit(self) -> Option<&'static str> {
        match self {
            TaskKind::Det | TaskKind::Rec | TaskKind::GcgBox => Some("box"),
            TaskKind::Seg | TaskKind::Res | TaskKind::GcgMask | TaskKind::InteractiveMask => {
                Some("mask")
            }
            TaskKind::Reg => None,
        }
    }

    /// Tasks grounding a single referred region rather than every label.
    fn single_region(self) -> bool {
        matches!(
            self,
            TaskKind::Rec | TaskKind::Res | TaskKind::InteractiveMask
        )
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskKind {
    type Err = CorpusError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TaskKind::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| CorpusError::SchemaError(format!("unknown task kind {s:?}")))
    }
}

/// Per-task prompt templates. Placeholders: `<image>`,
/// `<referring expression>`, `<region>`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct TemplateBank {
    pub templates: BTreeMap<String, Vec<String>>,
}

impl TemplateBank {
    /// One evaluation template per task.
    pub fn default_bank() -> Self {
        let mut templates = BTreeMap::new();
        let mut add = |task: TaskKind, t: &str| {
            templates.insert(task.as_str().to_string(), vec![t.to_string()]);
        };
        add(TaskKind::Det, "Please detect bounding boxes in the image<image>.");
        add(TaskKind::Seg, "Please segment objects in the image<image>.");
        add(
            TaskKind::Rec,
            "What are the coordinates of <referring expression> in the image<image>?",
        );
        add(
            TaskKind::Res,
            "Provide a segmentation mask for <referring expression> in the picture <image>.",
        );
        add(
            TaskKind::Reg,
            "For the given image <image>, can you provide a unique description of the area <region>?",
        );
        add(
            TaskKind::GcgBox,
            "Please describe the image <image> and detect relevant bounding boxes.",
        );
        add(
            TaskKind::GcgMask,
            "Describe the setting of the image <image> and offer masks for each visible object.",
        );
        add(
            TaskKind::InteractiveMask,
            "Please generate a mask based on the region <region> in the image <image>.",
        );
        TemplateBank { templates }
    }

    pub fn templates_for(&self, task: TaskKind) -> Result<&[String], CorpusError> {
        match self.templates.get(task.as_str()) {
            Some(ts) if !ts.is_empty() => Ok(ts),
            _ => Err(CorpusError::EmptyTemplateBank(task.to_string())),
        }
    }

    /// Stable content hash embedded in corpus files.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("bank serializes");
        let mut h: u64 = 0xcbf29ce484222325;
        for b in json.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
        format!("{h:016x}")
    }
}

/// One target region; the kind must match the binding's unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TargetGeometry {
    Box {
        #[serde(rename = "box")]
        bbox: Box,
    },
    Mask {
        mask: Rle,
    },
}

/// Targets for one (triplet, binding): `regions[i]` belongs to the ref
/// with index `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetGroup {
    pub group: usize,
    pub unit: String,
    pub regions: Vec<TargetGeometry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSample {
    pub image_id: String,
    pub task: TaskKind,
    pub system: String,
    pub prompt: String,
    pub cot: String,
    pub answer: String,
    pub targets: Vec<TargetGroup>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub version: u32,
    pub template_bank_hash: String,
    pub samples: Vec<CorpusSample>,
}

impl Corpus {
    pub fn from_json(json: &str) -> Result<Self, CorpusError> {
        let corpus: Corpus =
            serde_json::from_str(json).map_err(|e| CorpusError::SchemaError(e.to_string()))?;
        if corpus.version != CORPUS_VERSION {
            return Err(CorpusError::SchemaError(format!(
                "unsupported corpus version {}",
                corpus.version
            )));
        }
        Ok(corpus)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("corpus serializes")
    }
}

const SYSTEM_TEXT: &str = "You are a visual assistant. Ground every referenced \
object with the declared decoding units.";

fn phrase(label: &str) -> PhraseNode {
    PhraseNode {
        children: vec![PhraseChild::Text(label.to_string())],
        span: (0, 0),
    }
}

fn binding(unit: &str, n: usize) -> UnitBinding {
    UnitBinding {
        units: vec![unit.to_string()],
        refs: (0..n)
            .map(|index| RefToken {
                index,
                source_position: 0,
            })
            .collect(),
    }
}

fn geometry_for(
    region: &RegionAnnotation,
    unit: &str,
    image_id: &str,
) -> Result<TargetGeometry, CorpusError> {
    match unit {
        "box" => region
            .bbox
            .map(|bbox| TargetGeometry::Box { bbox })
            .ok_or_else(|| CorpusError::MissingGeometry {
                image_id: image_id.to_string(),
                label: region.label.clone(),
                needed: "box",
            }),
        _ => region
            .mask
            .clone()
            .map(|mask| TargetGeometry::Mask { mask })
            .ok_or_else(|| CorpusError::MissingGeometry {
                image_id: image_id.to_string(),
                label: region.label.clone(),
                needed: "mask",
            }),
    }
}

/// Build one sample per annotation. Deterministic given `seed`.
pub fn build_samples(
    annotations: &[Annotation],
    task: TaskKind,
    bank: &TemplateBank,
    seed: u64,
) -> Result<Vec<CorpusSample>, CorpusError> {
    let templates = bank.templates_for(task)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::with_capacity(annotations.len());
    for ann in annotations {
        let template = &templates[rng.gen_range(0..templates.len())];
        samples.push(build_one(ann, task, template, &mut rng)?);
    }
    Ok(samples)
}

pub fn build_corpus(
    annotations: &[Annotation],
    task: TaskKind,
    bank: &TemplateBank,
    seed: u64,
) -> Result<Corpus, CorpusError> {
    Ok(Corpus {
        version: CORPUS_VERSION,
        template_bank_hash: bank.hash(),
        samples: build_samples(annotations, task, bank, seed)?,
    })
}

fn build_one(
    ann: &Annotation,
    task: TaskKind,
    template: &str,
    rng: &mut ChaCha8Rng,
) -> Result<CorpusSample, CorpusError> {
    let first_label = ann
        .regions
        .first()
        .map(|r| r.label.to_lowercase())
        .unwrap_or_else(|| "the scene".to_string());
    let prompt = template
        .replace("<referring expression>", &first_label)
        .replace("<region>", "the marked region");

    let (cot_block, answer_ast, targets) = match task.unit() {
        None => {
            // caption-style: no decoding, plain-text answer
            let text = format!("The area shows {first_label}.");
            (
                CotBlock {
                    decode: false,
                    entries: Vec::new(),
                },
                AnswerAst {
                    segments: vec![Segment::Text(text)],
                },
                Vec::new(),
            )
        }
        Some(unit) => {
            let picked: Vec<&RegionAnnotation> = if task.single_region() {
                if ann.regions.is_empty() {
                    return Err(CorpusError::MissingGeometry {
                        image_id: ann.image_id.clone(),
                        label: "<none>".to_string(),
                        needed: unit,
                    });
                }
                vec![&ann.regions[0]]
            } else {
                ann.regions.iter().collect()
            };
            // group by lowercased label, first-appearance order
            let mut order: Vec<String> = Vec::new();
            let mut grouped: BTreeMap<String, Vec<&RegionAnnotation>> = BTreeMap::new();
            for r in picked {
                let key = r.label.to_lowercase();
                if !grouped.contains_key(&key) {
                    order.push(key.clone());
                }
                grouped.entry(key).or_default().push(r);
            }
            let mut entries = Vec::new();
            let mut segments = Vec::new();
            let mut targets = Vec::new();
            let intro = match task {
                TaskKind::Rec => "The coordinates of the referred object: ",
                TaskKind::Res | TaskKind::InteractiveMask => {
                    "The segmentation of the referred region: "
                }
                TaskKind::GcgBox | TaskKind::GcgMask => "The image shows ",
                _ => "Detected objects: ",
            };
            segments.push(Segment::Text(intro.to_string()));
            for (g, label) in order.iter().enumerate() {
                let members = &grouped[label];
                let regions: Vec<TargetGeometry> = members
                    .iter()
                    .map(|r| geometry_for(r, unit, &ann.image_id))
                    .collect::<Result<_, _>>()?;
                entries.push(CotEntry {
                    name: label.clone(),
                    units: [unit.to_string()].into(),
                    num: members.len(),
                });
                if g > 0 {
                    segments.push(Segment::Text(", ".to_string()));
                }
                segments.push(Segment::Triplet(Triplet {
                    phrase: phrase(label),
                    bindings: vec![binding(unit, members.len())],
                }));
                targets.push(TargetGroup {
                    group: g,
                    unit: unit.to_string(),
                    regions,
                });
            }
            segments.push(Segment::Text(".".to_string()));
            (
                CotBlock {
                    decode: true,
                    entries,
                },
                AnswerAst { segments },
                targets,
            )
        }
    };

    let _ = rng; // template choice is the only sampled decision per sample
    let answer = trp::emit_answer(&answer_ast)
        .map_err(|e| CorpusError::SchemaError(format!("builder produced invalid ast: {e}")))?;
    Ok(CorpusSample {
        image_id: ann.image_id.clone(),
        task,
        system: SYSTEM_TEXT.to_string(),
        prompt,
        cot: vdcot::emit_cot(&cot_block),
        answer,
        targets,
    })
}

/// One validator finding, attributed to a sample index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleViolation {
    pub sample: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ValidationReport {
    pub samples: usize,
    pub violations: Vec<SampleViolation>,
    pub notices: Vec<SampleViolation>,
}

impl ValidationReport {
    pub fn is_clean(&self, strict: bool) -> bool {
        self.violations.is_empty() && (!strict || self.notices.is_empty())
    }
}

/// Parse + consistency + target-alignment checks on every sample.
pub fn validate_corpus(corpus: &Corpus) -> ValidationReport {
    let mut report = ValidationReport {
        samples: corpus.samples.len(),
        ..Default::default()
    };
    for (i, sample) in corpus.samples.iter().enumerate() {
        validate_sample(i, sample, &mut report);
    }
    report
}

fn validate_sample(i: usize, sample: &CorpusSample, report: &mut ValidationReport) {
    let mut fail = |msg: String| {
        report.violations.push(SampleViolation {
            sample: i,
            message: msg,
        })
    };
    let cot = match vdcot::parse_cot_with_notices(&sample.cot) {
        Ok((block, notices)) => {
            for n in notices {
                report.notices.push(SampleViolation {
                    sample: i,
                    message: n,
                });
            }
            block
        }
        Err(e) => return fail(format!("cot: {e}")),
    };
    let ast = match trp::parse_answer(&sample.answer) {
        Ok(ast) => ast,
        Err(e) => return fail(format!("answer: {e}")),
    };
    for v in trp::validate_triplets(&ast) {
        fail(format!("answer: {v:?}"));
    }
    let consistency = vdcot::check_consistency_detailed(&cot, &ast);
    for v in &consistency.violations {
        fail(format!("consistency: {v:?}"));
    }
    for n in &consistency.notices {
        report.notices.push(SampleViolation {
            sample: i,
            message: n.clone(),
        });
    }
    // target alignment
    let triplets: Vec<&Triplet> = ast.triplets().collect();
    let mut used = vec![false; sample.targets.len()];
    for (g, t) in triplets.iter().enumerate() {
        for b in &t.bindings {
            let unit_key = b.units.join(", ");
            let Some(pos) = sample
                .targets
                .iter()
                .position(|tg| tg.group == g && tg.unit == unit_key)
            else {
                fail(format!("no targets for triplet {g} unit {unit_key:?}"));
                continue;
            };
            used[pos] = true;
            let tg = &sample.targets[pos];
            if tg.regions.len() != b.refs.len() {
                fail(format!(
                    "triplet {g} unit {unit_key:?}: {} targets for {} refs",
                    tg.regions.len(),
                    b.refs.len()
                ));
            }
            for (r, region) in tg.regions.iter().enumerate() {
                match (region, unit_key.as_str()) {
                    (TargetGeometry::Box { .. }, "box") => {}
                    (TargetGeometry::Mask { mask }, u) if u != "box" => {
                        if let Err(e) = rle_decode(mask) {
                            fail(format!("triplet {g} target {r}: bad mask: {e}"));
                        }
                    }
                    _ => fail(format!(
                        "triplet {g} target {r}: geometry kind does not match unit {unit_key:?}"
                    )),
                }
            }
        }
    }
    for (pos, was_used) in used.iter().enumerate() {
        if !was_used {
            fail(format!(
                "target group {} (unit {:?}) matches no triplet",
                sample.targets[pos].group, sample.targets[pos].unit
            ));
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StatsReport {
    pub samples: usize,
    pub per_task: BTreeMap<String, usize>,
    /// refs per unit name
    pub per_unit: BTreeMap<String, usize>,
    /// triplet ref-count → occurrences
    pub ref_count_hist: BTreeMap<usize, usize>,
    /// phrase word-count → occurrences
    pub phrase_len_hist: BTreeMap<usize, usize>,
}

/// Corpus statistics. Unparseable answers contribute only to the task
/// counts; run the validator to surface them.
pub fn stats(corpus: &Corpus) -> StatsReport {
    let mut report = StatsReport {
        samples: corpus.samples.len(),
        ..Default::default()
    };
    for sample in &corpus.samples {
        *report
            .per_task
            .entry(sample.task.to_string())
            .or_default() += 1;
        let Ok(ast) = trp::parse_answer(&sample.answer) else {
            continue;
        };
        for t in ast.triplets() {
            let refs: usize = t.bindings.iter().map(|b| b.refs.len()).sum();
            *report.ref_count_hist.entry(refs).or_default() += 1;
            let words = t.phrase.normalized_text().split(' ').count();
            *report.phrase_len_hist.entry(words).or_default() += 1;
            for b in &t.bindings {
                for u in &b.units {
                    *report.per_unit.entry(u.clone()).or_default() += b.refs.len();
                }
            }
        }
    }
    report
}
