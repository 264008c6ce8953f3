//! One-step next-action evaluation over a directory of records.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;

use screensense::executor::decode_screenshot;
use screensense::grouping::IconLexicon;
use screensense::llm::LlmClient;
use screensense::perception::{iou, parse_perception, BBox, Perception, SCHEMA_VERSION};
use screensense::planner::{build_prompt, parse_llm_reply, ActionHistory, ParsedReply, PromptParts};
use screensense::serialize::ScreenSemantics;
use screensense::understand::{understand, Observation, UnderstandParams};

/// Predicted and true elements match at this IoU or above.
pub const MATCH_IOU: f64 = 0.5;

/// A perception document plus the task and the box of the element a person
/// would act on next. A PNG with the same stem, if present, supplies pixels
/// for block division; otherwise the screen is one block.
#[derive(Debug, Clone)]
pub struct EvalRecord {
    pub name: String,
    pub perception: Perception,
    pub task: String,
    pub truth_box: BBox,
    /// The correct reading of the target's text, used to tell misread
    /// elements apart from planning errors.
    pub truth_label: Option<String>,
    pub image: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Correct,
    /// No rendered element covers the target.
    Missed,
    /// The chosen element is a spurious one overlapping the target.
    Overdetected,
    /// The target was found but its text was recognised wrongly.
    Misread,
    PlanningError,
}

impl Verdict {
    pub fn as_str(&self) -> &'static str {
        match self {
            Verdict::Correct => "correct",
            Verdict::Missed => "missed",
            Verdict::Overdetected => "overdetected",
            Verdict::Misread => "misread",
            Verdict::PlanningError => "planning error",
        }
    }

    pub fn is_ui_error(&self) -> bool {
        matches!(self, Verdict::Missed | Verdict::Overdetected | Verdict::Misread)
    }
}

pub fn parse_record(name: &str, text: &str) -> Result<EvalRecord> {
    let mut v: serde_json::Value = serde_json::from_str(text).context("record is not JSON")?;
    let obj = v.as_object_mut().context("record is not a JSON object")?;
    let task = obj.remove("task").and_then(|t| t.as_str().map(String::from)).context("record lacks \"task\"")?;
    let truth_box: BBox = serde_json::from_value(obj.remove("truth_element_box").context("record lacks \"truth_element_box\"")?)
        .context("bad \"truth_element_box\"")?;
    let truth_label = match obj.remove("truth_label") {
        Some(serde_json::Value::String(s)) => Some(s),
        Some(_) => bail!("\"truth_label\" must be a string"),
        None => None,
    };
    let perception = parse_perception(v.to_string().as_bytes(), SCHEMA_VERSION)?;
    Ok(EvalRecord { name: name.into(), perception, task, truth_box, truth_label, image: None })
}

pub fn load_dataset(dir: &Path) -> Result<Vec<EvalRecord>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    let mut out = Vec::new();
    for p in paths {
        let text = std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
        let name = p.file_stem().unwrap_or_default().to_string_lossy().to_string();
        let mut r = parse_record(&name, &text).with_context(|| format!("record {}", p.display()))?;
        let png = p.with_extension("png");
        r.image = png.exists().then_some(png);
        out.push(r);
    }
    if out.is_empty() {
        bail!("no records in {}", dir.display());
    }
    Ok(out)
}

pub fn semantics_for(record: &EvalRecord, params: &UnderstandParams, lexicon: &IconLexicon) -> Result<ScreenSemantics> {
    let s = record.perception.screen;
    let (image, blocks) = match &record.image {
        Some(p) => {
            let bytes = std::fs::read(p).with_context(|| format!("reading {}", p.display()))?;
            (decode_screenshot(&bytes)?, None)
        }
        None => (image::RgbImage::new(s.w, s.h), Some(vec![BBox::from_coords(0, 0, s.w as i32, s.h as i32)])),
    };
    let obs = Observation { perception: record.perception.clone(), blocks };
    Ok(understand(&obs, &image, params, Some(lexicon))?.semantics)
}

/// Scores one prediction. Without a prediction or with a wrong one, UI
/// errors take precedence over planning errors.
pub fn classify(sem: &ScreenSemantics, predicted: Option<u32>, truth: &BBox, truth_label: Option<&str>) -> Verdict {
    let pred = predicted.and_then(|id| sem.element(id));
    if pred.is_some_and(|e| iou(&e.bbox, truth) >= MATCH_IOU) {
        return Verdict::Correct;
    }
    let target = sem
        .elements
        .values()
        .filter(|e| iou(&e.bbox, truth) >= MATCH_IOU)
        .max_by(|a, b| iou(&a.bbox, truth).total_cmp(&iou(&b.bbox, truth)));
    let Some(target) = target else {
        return Verdict::Missed;
    };
    if pred.is_some_and(|e| e.bbox.intersection(truth).is_some()) {
        return Verdict::Overdetected;
    }
    if let Some(want) = truth_label {
        let got = target.label.as_deref().unwrap_or("");
        if !got.trim().eq_ignore_ascii_case(want.trim()) {
            return Verdict::Misread;
        }
    }
    Verdict::PlanningError
}

#[derive(Debug, Clone, Serialize)]
pub struct RecordResult {
    pub name: String,
    pub verdict: Verdict,
    pub reply: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalSummary {
    pub records: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub ui_errors: usize,
    pub planning_errors: usize,
    pub breakdown: BTreeMap<&'static str, usize>,
    pub results: Vec<RecordResult>,
}

pub fn evaluate(
    records: &[EvalRecord],
    llm: &mut dyn LlmClient,
    role: &str,
    params: &UnderstandParams,
    lexicon: &IconLexicon,
) -> Result<EvalSummary> {
    let mut results = Vec::new();
    for r in records {
        let sem = semantics_for(r, params, lexicon).with_context(|| format!("record {}", r.name))?;
        let prompt = build_prompt(&PromptParts {
            role: role.to_string(),
            task: r.task.clone(),
            history: ActionHistory::default(),
            ui_semantics: sem.render(),
            example: None,
        });
        let reply = llm.complete(&prompt).with_context(|| format!("record {}", r.name))?;
        let predicted = match parse_llm_reply(&reply, &sem) {
            Ok(ParsedReply::Action(a)) => a.target_id,
            _ => None,
        };
        let verdict = classify(&sem, predicted, &r.truth_box, r.truth_label.as_deref());
        results.push(RecordResult { name: r.name.clone(), verdict, reply });
    }
    let mut breakdown: BTreeMap<&'static str, usize> = BTreeMap::new();
    for v in [Verdict::Missed, Verdict::Overdetected, Verdict::Misread, Verdict::PlanningError] {
        breakdown.insert(v.as_str(), results.iter().filter(|r| r.verdict == v).count());
    }
    let correct = results.iter().filter(|r| r.verdict == Verdict::Correct).count();
    Ok(EvalSummary {
        records: results.len(),
        correct,
        accuracy: correct as f64 / results.len().max(1) as f64,
        ui_errors: results.iter().filter(|r| r.verdict.is_ui_error()).count(),
        planning_errors: results.iter().filter(|r| r.verdict == Verdict::PlanningError).count(),
        breakdown,
        results,
    })
}
