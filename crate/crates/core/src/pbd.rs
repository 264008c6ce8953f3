//! Programming by demonstration: lifting recorded taps to semantic steps and
//! storing task–solution pairs for prompt injection.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::executor::{decode_screenshot, DeviceDriver, ExecError, StitchedScreenshot};
use crate::grouping::{ElementKind, ElementSource, IconLexicon, UiElement};
use crate::perception::WidgetCategory;
use crate::planner::SwipeDir;
use crate::serialize::ScreenSemantics;
use crate::understand::{understand, PerceptionSource, UnderstandError, UnderstandParams};

pub const UNCERTAIN_MARK: &str = " (uncertain)";

#[derive(Debug, thiserror::Error)]
pub enum PbdError {
    #[error("a demonstration needs at least one step")]
    EmptyTrace,
    #[error(transparent)]
    Device(#[from] ExecError),
    #[error(transparent)]
    Understand(#[from] UnderstandError),
    #[error("trace store: {0}")]
    Store(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceProfile {
    pub w: u32,
    pub h: u32,
}

/// A task paired with lifted steps. Steps never hold coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PbdTrace {
    pub task: String,
    pub steps: Vec<String>,
    pub device: DeviceProfile,
    pub created_at: DateTime<Utc>,
}

impl PbdTrace {
    pub fn new(task: impl Into<String>, steps: Vec<String>, device: DeviceProfile, created_at: DateTime<Utc>) -> Result<Self, PbdError> {
        if steps.is_empty() {
            return Err(PbdError::EmptyTrace);
        }
        Ok(PbdTrace { task: task.into(), steps, device, created_at })
    }
}

/// Name and class of an element as used in step text, e.g. `save button`,
/// or `button (indicating More options)` for an interpreted icon.
pub fn describe_element(e: &UiElement, sem: &ScreenSemantics) -> String {
    let category = match e.kind {
        ElementKind::Widget(c) => c.as_str(),
        ElementKind::Text => "text",
    };
    let mut s = match (e.source, e.label.as_deref(), e.function.as_deref()) {
        (_, Some(label), _) => format!("{label} {category}"),
        (ElementSource::IconInterpreted, None, Some(f)) => format!("{category} (indicating {f})"),
        (_, None, Some(f)) => format!("{f} {category}"),
        _ => format!("unlabeled {category}"),
    };
    if let Some(caption) = sem.block_of(e.id).and_then(|b| b.caption.as_deref()) {
        s.push_str(" in ");
        s.push_str(caption);
    }
    s
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LiftedStep {
    pub text: String,
    pub uncertain: bool,
    pub element_id: Option<u32>,
}

impl LiftedStep {
    /// Stored form, with the uncertainty mark when flagged.
    pub fn stored(&self) -> String {
        if self.uncertain {
            format!("{}{UNCERTAIN_MARK}", self.text)
        } else {
            self.text.clone()
        }
    }
}

fn smallest_containing(x: i32, y: i32, sem: &ScreenSemantics) -> Option<&UiElement> {
    sem.elements
        .values()
        .filter(|e| e.bbox.contains_point(x, y))
        .min_by_key(|e| (e.bbox.area(), e.id))
}

/// `Tap <label-or-function> <category>[ in <caption>]` for the smallest
/// element under the point; a miss or an unlabeled element is uncertain.
pub fn lift_event(x: i32, y: i32, sem: &ScreenSemantics) -> LiftedStep {
    lift_with_verb("Tap", x, y, sem)
}

fn lift_with_verb(verb: &str, x: i32, y: i32, sem: &ScreenSemantics) -> LiftedStep {
    match smallest_containing(x, y, sem) {
        Some(e) => LiftedStep {
            text: format!("{verb} {}", describe_element(e, sem)),
            uncertain: e.source == ElementSource::Unlabeled,
            element_id: Some(e.id),
        },
        None => LiftedStep { text: format!("{verb} at unlabeled region"), uncertain: true, element_id: None },
    }
}

/// `Task: <task>\nSolution: step1 -> step2 -> ...`
pub fn format_example(trace: &PbdTrace) -> String {
    format!("Task: {}\nSolution: {}", trace.task, trace.steps.join(" -> "))
}

/// Lowercased alphanumeric words joined by single spaces.
pub fn normalize_task(task: &str) -> String {
    task.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn task_similarity(a: &str, b: &str) -> f64 {
    strsim::normalized_levenshtein(&normalize_task(a), &normalize_task(b))
}

/// One JSON document per trace in a flat directory, named by the SHA-256
/// of the normalized task. Writes go through a rename so readers never see
/// partial files.
#[derive(Debug, Clone)]
pub struct TraceStore {
    dir: PathBuf,
}

fn store_err(e: impl std::fmt::Display) -> PbdError {
    PbdError::Store(e.to_string())
}

impl TraceStore {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, PbdError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(store_err)?;
        Ok(TraceStore { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_for(&self, task: &str) -> PathBuf {
        let digest = Sha256::digest(normalize_task(task).as_bytes());
        let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
        self.dir.join(format!("{hex}.json"))
    }

    pub fn save(&self, trace: &PbdTrace) -> Result<PathBuf, PbdError> {
        if trace.steps.is_empty() {
            return Err(PbdError::EmptyTrace);
        }
        let path = self.path_for(&trace.task);
        let tmp = path.with_extension(format!("tmp{}", std::process::id()));
        let mut f = fs::File::create(&tmp).map_err(store_err)?;
        f.write_all(serde_json::to_string_pretty(trace).map_err(store_err)?.as_bytes())
            .map_err(store_err)?;
        f.sync_all().map_err(store_err)?;
        fs::rename(&tmp, &path).map_err(store_err)?;
        Ok(path)
    }

    pub fn load(&self, task: &str) -> Result<Option<PbdTrace>, PbdError> {
        read_trace(&self.path_for(task))
    }

    /// All readable traces, ordered by file name.
    pub fn list(&self) -> Result<Vec<PbdTrace>, PbdError> {
        let mut paths: Vec<PathBuf> = fs::read_dir(&self.dir)
            .map_err(store_err)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        paths.sort();
        let mut out = Vec::new();
        for p in paths {
            if let Some(t) = read_trace(&p)? {
                out.push(t);
            }
        }
        Ok(out)
    }

    /// The stored trace whose task is most similar to `task`, if at least
    /// `min_similarity`.
    pub fn best_match(&self, task: &str, min_similarity: f64) -> Result<Option<PbdTrace>, PbdError> {
        let mut best: Option<(f64, PbdTrace)> = None;
        for t in self.list()? {
            let s = task_similarity(task, &t.task);
            if s >= min_similarity && best.as_ref().is_none_or(|(bs, _)| s > *bs) {
                best = Some((s, t));
            }
        }
        Ok(best.map(|(_, t)| t))
    }
}

fn read_trace(path: &Path) -> Result<Option<PbdTrace>, PbdError> {
    match fs::read(path) {
        Ok(bytes) => serde_json::from_slice(&bytes).map(Some).map_err(store_err),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(store_err(e)),
    }
}

/// A user gesture in screen coordinates of the current viewport.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "event")]
pub enum DemoEvent {
    Tap { x: i32, y: i32 },
    LongPress { x: i32, y: i32 },
    Text { text: String },
    Swipe { dir: SwipeDir },
    Stop,
}

/// Supplies demonstration events. A source is called after the current
/// screen was captured and returns once the user has performed the gesture.
pub trait EventSource {
    fn next_event(&mut self) -> Result<(DemoEvent, DateTime<Utc>), PbdError>;
}

pub struct RecordContext<'a> {
    pub device: &'a mut dyn DeviceDriver,
    pub perception: &'a mut dyn PerceptionSource,
    pub understand: &'a UnderstandParams,
    pub lexicon: Option<&'a IconLexicon>,
}

/// Records until the stop event, lifting each gesture against the screen
/// it was made on. A text entry replaces the tap that focused its field.
pub fn record_demonstration(
    task: &str,
    ctx: &mut RecordContext,
    events: &mut dyn EventSource,
) -> Result<PbdTrace, PbdError> {
    let mut steps: Vec<LiftedStep> = Vec::new();
    let mut focused: Option<(usize, UiElement, ScreenSemantics)> = None;
    let mut profile = None;
    loop {
        let bytes = ctx.device.screenshot().map_err(ExecError::from)?;
        let image = decode_screenshot(&bytes).map_err(ExecError::from)?;
        profile.get_or_insert(DeviceProfile { w: image.width(), h: image.height() });
        let shot = StitchedScreenshot::single(image);
        let obs = ctx.perception.observe(&shot.image)?;
        let sem = understand(&obs, &shot.image, ctx.understand, ctx.lexicon)?.semantics;
        let (event, _at) = events.next_event()?;
        match event {
            DemoEvent::Stop => break,
            DemoEvent::Tap { x, y } => {
                let step = lift_event(x, y, &sem);
                focused = step
                    .element_id
                    .and_then(|id| sem.element(id))
                    .filter(|e| e.kind.widget() == Some(WidgetCategory::EditText))
                    .map(|e| (steps.len(), e.clone(), sem.clone()));
                steps.push(step);
            }
            DemoEvent::LongPress { x, y } => {
                focused = None;
                steps.push(lift_with_verb("Long press", x, y, &sem));
            }
            DemoEvent::Swipe { dir } => {
                focused = None;
                steps.push(LiftedStep { text: format!("Swipe {}", dir.as_str()), uncertain: false, element_id: None });
            }
            DemoEvent::Text { text } => match focused.take() {
                Some((idx, field, field_sem)) => {
                    steps[idx] = LiftedStep {
                        text: format!("Enter '{text}' in {}", describe_element(&field, &field_sem)),
                        uncertain: field.source == ElementSource::Unlabeled,
                        element_id: Some(field.id),
                    };
                }
                None => steps.push(LiftedStep { text: format!("Enter '{text}'"), uncertain: true, element_id: None }),
            },
        }
    }
    let profile = profile.expect("at least one capture");
    PbdTrace::new(task, steps.iter().map(LiftedStep::stored).collect(), profile, Utc::now())
}
