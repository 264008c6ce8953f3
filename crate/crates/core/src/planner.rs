//! Prompt construction, reply parsing and the chain-of-screens task loop.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::executor::{capture_long_screenshot, execute, to_device_commands, DeviceDriver, ExecutorParams};
use crate::grouping::{IconLexicon, UiElement};
use crate::llm::{LlmClient, LlmError};
use crate::pbd::{describe_element, format_example, TraceStore};
use crate::perception::WidgetCategory;
use crate::serialize::{render_element, ScreenSemantics};
use crate::understand::{understand, PerceptionSource, UnderstandParams};

pub const DEFAULT_ROLE: &str = "Supposing you are an intelligent agent to help users complete mobile tasks. \
Given the screen, predict the element in the current UI to complete the task";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    Tap,
    LongPress,
    Input,
    Swipe,
    Stop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SwipeDir {
    Up,
    Down,
    Left,
    Right,
}

impl SwipeDir {
    pub fn as_str(&self) -> &'static str {
        match self {
            SwipeDir::Up => "up",
            SwipeDir::Down => "down",
            SwipeDir::Left => "left",
            SwipeDir::Right => "right",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentAction {
    pub kind: ActionKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_id: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub swipe_dir: Option<SwipeDir>,
}

impl AgentAction {
    fn bare(kind: ActionKind) -> Self {
        AgentAction { kind, target_id: None, text: None, swipe_dir: None }
    }

    pub fn tap(id: u32) -> Self {
        AgentAction { target_id: Some(id), ..Self::bare(ActionKind::Tap) }
    }

    pub fn long_press(id: u32) -> Self {
        AgentAction { target_id: Some(id), ..Self::bare(ActionKind::LongPress) }
    }

    pub fn input(id: u32, text: impl Into<String>) -> Self {
        AgentAction { target_id: Some(id), text: Some(text.into()), ..Self::bare(ActionKind::Input) }
    }

    pub fn swipe(dir: SwipeDir) -> Self {
        AgentAction { swipe_dir: Some(dir), ..Self::bare(ActionKind::Swipe) }
    }

    pub fn stop() -> Self {
        Self::bare(ActionKind::Stop)
    }

    /// Checks the per-kind field requirements.
    pub fn is_well_formed(&self) -> bool {
        match self.kind {
            ActionKind::Tap | ActionKind::LongPress => self.target_id.is_some() && self.text.is_none(),
            ActionKind::Input => self.target_id.is_some() && self.text.is_some(),
            ActionKind::Swipe => self.target_id.is_none() && self.text.is_none() && self.swipe_dir.is_some(),
            ActionKind::Stop => self.target_id.is_none() && self.text.is_none() && self.swipe_dir.is_none(),
        }
    }
}

/// Past steps and explored dead ends. Append-only.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionHistory {
    steps: Vec<String>,
    failed_paths: Vec<String>,
}

impl ActionHistory {
    pub fn push_step(&mut self, step: impl Into<String>) {
        self.steps.push(step.into());
    }

    pub fn push_failed(&mut self, path: impl Into<String>) {
        self.failed_paths.push(path.into());
    }

    pub fn steps(&self) -> &[String] {
        &self.steps
    }

    pub fn failed_paths(&self) -> &[String] {
        &self.failed_paths
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty() && self.failed_paths.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptParts {
    pub role: String,
    pub task: String,
    pub history: ActionHistory,
    pub ui_semantics: String,
    pub example: Option<String>,
}

pub const SEMANTICS_HEADER: &str = "UI semantics:";

/// Role, task, history, current screen and optional example, in that order.
/// Empty history and a missing example leave out their sections.
pub fn build_prompt(parts: &PromptParts) -> String {
    let mut sections = vec![format!("Role: {}", parts.role), format!("Task: {}", parts.task)];
    if !parts.history.steps().is_empty() {
        sections.push(format!("Action history: {}", parts.history.steps().join(" -> ")));
    }
    if !parts.history.failed_paths().is_empty() {
        sections.push(format!("Failed paths: {}", parts.history.failed_paths().join("; ")));
    }
    sections.push(format!("{SEMANTICS_HEADER}\n{}", parts.ui_semantics));
    if let Some(ex) = &parts.example {
        sections.push(format!("Example:\n{ex}"));
    }
    sections.join("\n\n")
}

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum PlanError {
    #[error("no recognizable action in reply {0:?}")]
    UnparsableReply(String),
    #[error("no valid reply after {0} reprompts")]
    RepromptLimit(u32),
    #[error(transparent)]
    Llm(#[from] LlmError),
}

#[derive(Debug, Clone, PartialEq)]
pub enum ParsedReply {
    Action(AgentAction),
    /// The reply named `object`, which is not on screen.
    NeedsReprompt { object: String, available: Vec<String> },
}

fn verb_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"(?i)^(?:[-*>\d.)\s]+)?(?:(?:action|answer|next step|step)\s*\d*\s*:\s*)?(long[- ]?press|tap|click|press|select|open|choose|enter|type|input|swipe|scroll)\b[\s:]*(.*)$",
        )
        .expect("verb regex")
    })
}

fn is_stop(line: &str) -> bool {
    let l = line
        .trim()
        .trim_matches(|c: char| c.is_ascii_punctuation() || c.is_whitespace())
        .to_lowercase();
    l == "stop"
        || l == "done"
        || l.starts_with("stop ")
        || l.contains("task complete")
        || l.contains("task is complete")
        || l.contains("task has been completed")
}

fn strip_quotes(s: &str) -> &str {
    s.trim().trim_matches(|c| matches!(c, '\'' | '"' | '`' | '\u{2018}' | '\u{2019}' | '\u{201c}' | '\u{201d}')).trim()
}

const ARTICLES: &[&str] = &["the ", "a ", "an ", "on ", "at "];
const SUFFIX_WORDS: &[&str] = &[
    "button", "icon", "bar", "field", "box", "tab", "toggle", "option", "item", "link", "menu", "entry", "row",
    "element", "text", "label", "tile",
];

/// Candidate spellings of a reply's object, most literal first.
fn object_variants(object: &str) -> Vec<String> {
    if let Some(start) = object.find("(indicating ") {
        let inner = &object[start + "(indicating ".len()..];
        if let Some(end) = inner.find(')') {
            let mut out = vec![inner[..end].trim().to_string()];
            out.extend(object_variants(&object[..start]));
            return out;
        }
    }
    let mut base = strip_quotes(object.trim().trim_end_matches(['.', '!', ','])).to_string();
    loop {
        let lower = base.to_lowercase();
        match ARTICLES.iter().find(|a| lower.starts_with(*a)) {
            Some(a) => base = base[a.len()..].trim_start().to_string(),
            None => break,
        }
    }
    let base = strip_quotes(&base).to_string();
    let mut out = vec![base.clone()];
    let mut cur = base;
    for _ in 0..2 {
        let lower = cur.to_lowercase();
        let cut = WidgetCategory::ALL
            .iter()
            .map(|c| c.as_str())
            .chain(SUFFIX_WORDS.iter().copied())
            .filter(|w| lower.len() > w.len() && lower.ends_with(w) && lower[..lower.len() - w.len()].ends_with(' '))
            .map(|w| w.len())
            .max();
        let Some(n) = cut else { break };
        cur = strip_quotes(cur[..cur.len() - n].trim_end()).to_string();
        if cur.is_empty() {
            break;
        }
        out.push(cur.clone());
    }
    out.dedup();
    out
}

/// Fuzzy label matches must reach this normalized similarity.
pub const FUZZY_THRESHOLD: f64 = 0.8;

fn id_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\[(\d+)\]").expect("id regex"))
}

/// Resolves a free-text object to an element id: an `[n]` reference, then an
/// exact case-insensitive label, then the closest label by normalized edit
/// similarity. Among equals the smallest id wins. A trailing `in <caption>`
/// narrows the search to that block.
pub fn resolve_object(object: &str, sem: &ScreenSemantics) -> Option<u32> {
    if let Some(c) = id_regex().captures(object) {
        let id: u32 = c[1].parse().ok()?;
        return sem.element(id).map(|e| e.id);
    }
    let mut scopes: Vec<(String, Option<Vec<u32>>)> = Vec::new();
    let lower = object.to_lowercase();
    if let Some(pos) = lower.rfind(" in ") {
        let qualifier = strip_quotes(&object[pos + 4..]).trim_end_matches('.');
        let q = qualifier.trim_start_matches("the ").to_lowercase();
        if let Some(block) = sem
            .blocks
            .iter()
            .find(|b| b.caption.as_deref().is_some_and(|c| c.to_lowercase() == q))
        {
            scopes.push((object[..pos].to_string(), Some(block.element_ids.clone())));
        }
    }
    scopes.push((object.to_string(), None));

    for (obj, ids) in &scopes {
        let candidates: Vec<&UiElement> = sem
            .elements
            .values()
            .filter(|e| ids.as_ref().is_none_or(|ids| ids.contains(&e.id)))
            .collect();
        let variants = object_variants(obj);
        for v in &variants {
            let v = v.to_lowercase();
            if let Some(e) = candidates
                .iter()
                .find(|e| e.display_name().is_some_and(|n| n.trim().to_lowercase() == v))
            {
                return Some(e.id);
            }
        }
        let mut best: Option<(f64, u32)> = None;
        for v in &variants {
            let v = v.to_lowercase();
            for e in &candidates {
                let Some(name) = e.display_name() else { continue };
                let s = strsim::normalized_levenshtein(&v, &name.trim().to_lowercase());
                if s >= FUZZY_THRESHOLD && best.is_none_or(|(bs, bid)| s > bs || (s == bs && e.id < bid)) {
                    best = Some((s, e.id));
                }
            }
        }
        if let Some((_, id)) = best {
            return Some(id);
        }
    }
    None
}

fn available_elements(sem: &ScreenSemantics) -> Vec<String> {
    sem.ordered_elements().into_iter().map(render_element).collect()
}

fn split_input(rest: &str) -> (String, Option<String>) {
    let rest = rest.trim();
    let quoted = Regex::new(r#"^(?:'([^']*)'|"([^"]*)"|\u{201c}([^\u{201d}]*)\u{201d}|\u{2018}([^\u{2019}]*)\u{2019})\s*(.*)$"#)
        .expect("quote regex");
    if let Some(c) = quoted.captures(rest) {
        let text = (1..=4).find_map(|i| c.get(i)).map(|m| m.as_str().to_string()).unwrap_or_default();
        let tail = c.get(5).map(|m| m.as_str()).unwrap_or("").trim();
        let lower = tail.to_lowercase();
        let obj = ["into ", "in ", "on "]
            .iter()
            .find(|p| lower.starts_with(*p))
            .map(|p| tail[p.len()..].to_string());
        return (text, obj.filter(|o| !o.trim().is_empty()));
    }
    let lower = rest.to_lowercase();
    let split = [" into ", " in "]
        .iter()
        .filter_map(|sep| lower.rfind(sep).map(|p| (p, sep.len())))
        .max();
    match split {
        Some((p, n)) => (strip_quotes(&rest[..p]).to_string(), Some(rest[p + n..].to_string())),
        None => (strip_quotes(rest).to_string(), None),
    }
}

fn swipe_direction(rest: &str, scroll: bool) -> SwipeDir {
    let l = rest.to_lowercase();
    let word = |w: &str| l.split(|c: char| !c.is_alphanumeric()).any(|t| t == w);
    if word("left") {
        SwipeDir::Left
    } else if word("right") {
        SwipeDir::Right
    } else if word("down") {
        // Scrolling down moves the finger up.
        if scroll { SwipeDir::Up } else { SwipeDir::Down }
    } else if word("up") {
        if scroll { SwipeDir::Down } else { SwipeDir::Up }
    } else {
        SwipeDir::Up
    }
}

/// Parses the first line of `reply` holding a stop phrase or an action verb.
///
/// `scroll down` and `swipe up` both reveal content further down the page.
/// An input reply without a field falls back to the only edit text on
/// screen, if there is exactly one.
pub fn parse_llm_reply(reply: &str, sem: &ScreenSemantics) -> Result<ParsedReply, PlanError> {
    for line in reply.lines().map(str::trim).filter(|l| !l.is_empty()) {
        if is_stop(line) {
            return Ok(ParsedReply::Action(AgentAction::stop()));
        }
        let Some(c) = verb_regex().captures(line) else { continue };
        let verb = c[1].to_lowercase();
        let rest = c[2].trim().to_string();
        let reprompt = |object: String| {
            Ok(ParsedReply::NeedsReprompt { object, available: available_elements(sem) })
        };
        return match verb.as_str() {
            "swipe" | "scroll" => Ok(ParsedReply::Action(AgentAction::swipe(swipe_direction(&rest, verb == "scroll")))),
            "enter" | "type" | "input" => {
                let (text, obj) = split_input(&rest);
                let target = match &obj {
                    Some(o) => resolve_object(o, sem),
                    None => {
                        let fields: Vec<u32> = sem
                            .elements
                            .values()
                            .filter(|e| e.kind.widget() == Some(WidgetCategory::EditText))
                            .map(|e| e.id)
                            .collect();
                        (fields.len() == 1).then(|| fields[0])
                    }
                };
                match target {
                    Some(id) if !text.is_empty() => Ok(ParsedReply::Action(AgentAction::input(id, text))),
                    Some(_) => Err(PlanError::UnparsableReply(reply.to_string())),
                    None => reprompt(obj.unwrap_or_else(|| "text field".into())),
                }
            }
            v => {
                if rest.is_empty() {
                    return Err(PlanError::UnparsableReply(reply.to_string()));
                }
                match resolve_object(&rest, sem) {
                    Some(id) if v.starts_with("long") => Ok(ParsedReply::Action(AgentAction::long_press(id))),
                    Some(id) => Ok(ParsedReply::Action(AgentAction::tap(id))),
                    None => reprompt(strip_quotes(&rest).to_string()),
                }
            }
        };
    }
    Err(PlanError::UnparsableReply(reply.to_string()))
}

/// The natural-language form of an action kept in the history.
pub fn describe_action(action: &AgentAction, sem: &ScreenSemantics) -> String {
    let target = || {
        action
            .target_id
            .and_then(|id| sem.element(id))
            .map(|e| describe_element(e, sem))
            .unwrap_or_else(|| "unknown element".into())
    };
    match action.kind {
        ActionKind::Tap => format!("Tap {}", target()),
        ActionKind::LongPress => format!("Long press {}", target()),
        ActionKind::Input => format!("Enter '{}' in {}", action.text.as_deref().unwrap_or(""), target()),
        ActionKind::Swipe => format!("Swipe {}", action.swipe_dir.unwrap_or(SwipeDir::Up).as_str()),
        ActionKind::Stop => "Stop".into(),
    }
}

/// Appended to the prompt after a reply named an element not on screen.
pub fn reassessment_prompt(base: &str, object: &str, available: &[String]) -> String {
    format!(
        "{base}\n\nReassess: '{object}' is not on the current screen. Select from the elements that are actually available:\n{}",
        available.join("\n")
    )
}

fn unparsable_prompt(base: &str, available: &[String]) -> String {
    format!(
        "{base}\n\nReassess: the reply did not name an action. Answer with one action such as \"Tap <element>\", \"Enter <text> in <element>\", \"Swipe up\" or \"Stop\". Available elements:\n{}",
        available.join("\n")
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InjectionMode {
    /// Inject a matching demonstration from the first step.
    WhenMatched,
    /// Inject only after a reply needed reassessment.
    OnFailure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerParams {
    pub role_prompt: String,
    pub step_limit: usize,
    pub reprompt_limit: u32,
    /// Minimum normalized task similarity for a stored demonstration.
    pub pbd_similarity: f64,
    pub pbd_injection: InjectionMode,
}

impl Default for PlannerParams {
    fn default() -> Self {
        PlannerParams {
            role_prompt: DEFAULT_ROLE.to_string(),
            step_limit: 20,
            reprompt_limit: 3,
            pbd_similarity: 0.6,
            pbd_injection: InjectionMode::WhenMatched,
        }
    }
}

/// Per-task planner state carried between steps.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskState {
    pub task: String,
    pub history: ActionHistory,
    pub example: Option<String>,
}

impl TaskState {
    pub fn new(task: impl Into<String>) -> Self {
        TaskState { task: task.into(), history: ActionHistory::default(), example: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub action: AgentAction,
    pub reprompts: u32,
    pub prompt: String,
    pub reply: String,
}

/// One planning dialogue: query, then reassess up to `reprompt_limit` times.
/// Unparsable replies are reassessed like unknown elements. Failed targets
/// go to the history's failed paths; the chosen action is not recorded here.
pub fn step(
    state: &mut TaskState,
    sem: &ScreenSemantics,
    llm: &mut dyn LlmClient,
    params: &PlannerParams,
) -> Result<StepResult, PlanError> {
    let mut reprompts = 0u32;
    let mut pending: Option<String> = None;
    loop {
        let base = build_prompt(&PromptParts {
            role: params.role_prompt.clone(),
            task: state.task.clone(),
            history: state.history.clone(),
            ui_semantics: sem.render(),
            example: state.example.clone(),
        });
        let prompt = match &pending {
            None => base,
            Some(p) => p.replace("{base}", &base),
        };
        let reply = llm.complete(&prompt)?;
        let parsed = parse_llm_reply(&reply, sem);
        let next = match parsed {
            Ok(ParsedReply::Action(action)) => return Ok(StepResult { action, reprompts, prompt, reply }),
            Ok(ParsedReply::NeedsReprompt { object, available }) => {
                let line = reply.lines().map(str::trim).find(|l| !l.is_empty()).unwrap_or(&object);
                state.history.push_failed(line.trim_end_matches('.').to_string());
                reassessment_prompt("{base}", &object, &available)
            }
            Err(PlanError::UnparsableReply(_)) => unparsable_prompt("{base}", &available_elements(sem)),
            Err(e) => return Err(e),
        };
        if reprompts >= params.reprompt_limit {
            return Err(PlanError::RepromptLimit(reprompts));
        }
        reprompts += 1;
        pending = Some(next);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeStatus {
    Completed,
    StepLimit,
    RepromptLimit,
    DeviceError,
    PerceptionError,
    LlmError,
    Aborted,
}

impl OutcomeStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            OutcomeStatus::Completed => "completed",
            OutcomeStatus::StepLimit => "step_limit",
            OutcomeStatus::RepromptLimit => "reprompt_limit",
            OutcomeStatus::DeviceError => "device_error",
            OutcomeStatus::PerceptionError => "perception_error",
            OutcomeStatus::LlmError => "llm_error",
            OutcomeStatus::Aborted => "aborted",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskOutcome {
    pub status: OutcomeStatus,
    pub steps_taken: usize,
    pub history: ActionHistory,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// One executed step, reported to observers as it happens.
#[derive(Debug, Clone)]
pub struct StepReport<'a> {
    pub index: usize,
    pub action: &'a AgentAction,
    pub description: &'a str,
    pub reprompts: u32,
}

/// Everything a task run needs besides the task text.
pub struct TaskContext<'a> {
    pub device: &'a mut dyn DeviceDriver,
    pub perception: &'a mut dyn PerceptionSource,
    pub llm: &'a mut dyn LlmClient,
    pub lexicon: Option<&'a IconLexicon>,
    pub store: Option<&'a TraceStore>,
    pub understand: &'a UnderstandParams,
    pub planner: &'a PlannerParams,
    pub executor: &'a ExecutorParams,
    pub abort: Option<&'a AtomicBool>,
    pub on_step: Option<&'a mut dyn FnMut(&StepReport)>,
}

/// Capture, understand, plan and execute until the planner stops or a limit
/// is hit. Stopping does not count as a step.
pub fn run_task(task: &str, ctx: &mut TaskContext) -> TaskOutcome {
    let mut state = TaskState::new(task);
    let stored = ctx
        .store
        .and_then(|s| s.best_match(task, ctx.planner.pbd_similarity).ok().flatten())
        .map(|t| format_example(&t));
    if ctx.planner.pbd_injection == InjectionMode::WhenMatched {
        state.example = stored.clone();
    }
    let mut steps = 0usize;
    let finish = |status, steps, state: TaskState, error: Option<String>| TaskOutcome {
        status,
        steps_taken: steps,
        history: state.history,
        error,
    };
    loop {
        if ctx.abort.is_some_and(|a| a.load(Ordering::SeqCst)) {
            return finish(OutcomeStatus::Aborted, steps, state, None);
        }
        if steps >= ctx.planner.step_limit {
            return finish(OutcomeStatus::StepLimit, steps, state, None);
        }
        let shot = match capture_long_screenshot(ctx.device, ctx.executor) {
            Ok(s) => s,
            Err(e) => return finish(OutcomeStatus::DeviceError, steps, state, Some(e.to_string())),
        };
        let sem = match ctx
            .perception
            .observe(&shot.image)
            .and_then(|obs| understand(&obs, &shot.image, ctx.understand, ctx.lexicon))
        {
            Ok(u) => u.semantics,
            Err(e) => return finish(OutcomeStatus::PerceptionError, steps, state, Some(e.to_string())),
        };
        let planned = step(&mut state, &sem, ctx.llm, ctx.planner);
        // An interrupt that arrived while the model was queried wins over
        // whatever the step produced.
        if ctx.abort.is_some_and(|a| a.load(Ordering::SeqCst)) {
            return finish(OutcomeStatus::Aborted, steps, state, None);
        }
        let result = match planned {
            Ok(r) => r,
            Err(PlanError::RepromptLimit(n)) => {
                return finish(OutcomeStatus::RepromptLimit, steps, state, Some(format!("{n} reprompts")))
            }
            Err(e) => return finish(OutcomeStatus::LlmError, steps, state, Some(e.to_string())),
        };
        if result.reprompts > 0 && state.example.is_none() {
            state.example = stored.clone();
        }
        if result.action.kind == ActionKind::Stop {
            return finish(OutcomeStatus::Completed, steps, state, None);
        }
        let cmds = match to_device_commands(&result.action, &sem, &shot, ctx.executor) {
            Ok(c) => c,
            Err(e) => return finish(OutcomeStatus::DeviceError, steps, state, Some(e.to_string())),
        };
        if let Err(e) = execute(ctx.device, &cmds, ctx.executor) {
            return finish(OutcomeStatus::DeviceError, steps, state, Some(e.to_string()));
        }
        let description = describe_action(&result.action, &sem);
        state.history.push_step(description.clone());
        if let Some(cb) = ctx.on_step.as_mut() {
            cb(&StepReport { index: steps, action: &result.action, description: &description, reprompts: result.reprompts });
        }
        steps += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blocking::SemanticBlock;
    use crate::grouping::{ElementKind, ElementSource, Provenance};
    use crate::perception::BBox;

    fn el(id: u32, cat: WidgetCategory, label: &str, y: i32) -> UiElement {
        UiElement {
            id,
            bbox: BBox::from_coords(40, y, 1040, y + 100),
            kind: ElementKind::Widget(cat),
            label: Some(label.into()),
            function: None,
            source: ElementSource::Matched,
            provenance: Provenance::default(),
            crop_id: None,
        }
    }

    fn sem(elements: Vec<UiElement>) -> ScreenSemantics {
        let block = SemanticBlock {
            element_ids: elements.iter().map(|e| e.id).collect(),
            ..SemanticBlock::new(BBox::from_coords(0, 0, 1080, 2244))
        };
        ScreenSemantics::new(BBox::from_coords(0, 0, 1080, 2244), vec![block], elements)
    }

    struct Seq(Vec<&'static str>, usize);

    impl LlmClient for Seq {
        fn complete(&mut self, _prompt: &str) -> Result<String, LlmError> {
            let r = self.0.get(self.1).ok_or(LlmError::ScriptExhausted(self.1))?;
            self.1 += 1;
            Ok(r.to_string())
        }
    }

    fn parts(history: ActionHistory, example: Option<&str>) -> PromptParts {
        PromptParts {
            role: DEFAULT_ROLE.into(),
            task: "Turn on WLAN".into(),
            history,
            ui_semantics: "Section:\n[1] button 'SAVE'".into(),
            example: example.map(String::from),
        }
    }

    #[test]
    fn prompt_without_history_or_example() {
        let p = build_prompt(&parts(ActionHistory::default(), None));
        assert_eq!(
            p,
            format!("Role: {DEFAULT_ROLE}\n\nTask: Turn on WLAN\n\nUI semantics:\nSection:\n[1] button 'SAVE'")
        );
    }

    #[test]
    fn prompt_history_chain_and_example() {
        let mut h = ActionHistory::default();
        h.push_step("Tap Settings button");
        h.push_step("Tap WLAN button");
        let ex = "Task: Turn on WLAN\nSolution: Tap Settings button -> Tap WLAN button";
        let p = build_prompt(&parts(h, Some(ex)));
        assert!(p.contains("Action history: Tap Settings button -> Tap WLAN button"));
        assert!(p.ends_with(&format!("Example:\n{ex}")));
        assert!(!p.contains("Failed paths"));
    }

    #[test]
    fn parse_examples() {
        let s = sem(vec![el(1, WidgetCategory::Button, "SAVE", 100), el(2, WidgetCategory::EditText, "search", 300)]);
        assert_eq!(parse_llm_reply("Tap SAVE button", &s), Ok(ParsedReply::Action(AgentAction::tap(1))));
        assert!(matches!(
            parse_llm_reply("Tap the My Wallet button", &s),
            Ok(ParsedReply::NeedsReprompt { ref object, ref available }) if object == "the My Wallet button" && available.len() == 2
        ), "{:?}", parse_llm_reply("Tap the My Wallet button", &s));
        assert_eq!(
            parse_llm_reply("Enter pizza hut in the search bar", &s),
            Ok(ParsedReply::Action(AgentAction::input(2, "pizza hut")))
        );
        assert_eq!(
            parse_llm_reply("Enter 'in n out' in search edit text", &s),
            Ok(ParsedReply::Action(AgentAction::input(2, "in n out")))
        );
        assert_eq!(parse_llm_reply("Tap [2]", &s), Ok(ParsedReply::Action(AgentAction::tap(2))));
        assert!(matches!(parse_llm_reply("Tap [9]", &s), Ok(ParsedReply::NeedsReprompt { .. })));
        assert_eq!(parse_llm_reply("Task complete.", &s), Ok(ParsedReply::Action(AgentAction::stop())));
        assert_eq!(parse_llm_reply("Scroll down", &s), Ok(ParsedReply::Action(AgentAction::swipe(SwipeDir::Up))));
        assert_eq!(parse_llm_reply("Long press SAVE", &s), Ok(ParsedReply::Action(AgentAction::long_press(1))));
        assert_eq!(parse_llm_reply("Tap SAVEE", &s), Ok(ParsedReply::Action(AgentAction::tap(1))));
        assert!(matches!(parse_llm_reply("I am not sure", &s), Err(PlanError::UnparsableReply(_))));
    }

    #[test]
    fn duplicate_labels_resolve_to_smaller_id() {
        let s = sem(vec![el(3, WidgetCategory::Button, "OK", 500), el(1, WidgetCategory::Button, "OK", 100)]);
        assert_eq!(parse_llm_reply("Tap OK", &s), Ok(ParsedReply::Action(AgentAction::tap(1))));
    }

    #[test]
    fn caption_qualifier_narrows_scope() {
        let a = el(1, WidgetCategory::Switch, "Enable", 100);
        let b = el(2, WidgetCategory::Switch, "Enable", 1200);
        let top = SemanticBlock { element_ids: vec![1], caption: Some("Wi-Fi".into()), ..SemanticBlock::new(BBox::from_coords(0, 0, 1080, 1000)) };
        let bottom = SemanticBlock { element_ids: vec![2], caption: Some("Bluetooth".into()), ..SemanticBlock::new(BBox::from_coords(0, 1000, 1080, 2244)) };
        let s = ScreenSemantics::new(BBox::from_coords(0, 0, 1080, 2244), vec![top, bottom], vec![a, b]);
        assert_eq!(parse_llm_reply("Tap Enable switch in Bluetooth", &s), Ok(ParsedReply::Action(AgentAction::tap(2))));
    }

    #[test]
    fn step_reprompts_then_succeeds() {
        let s = sem(vec![el(1, WidgetCategory::Button, "SAVE", 100)]);
        let mut state = TaskState::new("save");
        let mut llm = Seq(vec!["Tap Cancel", "Tap SAVE button"], 0);
        let r = step(&mut state, &s, &mut llm, &PlannerParams::default()).unwrap();
        assert_eq!(r.action, AgentAction::tap(1));
        assert_eq!(r.reprompts, 1);
        assert!(r.prompt.contains("Reassess: 'Cancel'"));
        assert_eq!(state.history.failed_paths(), ["Tap Cancel"]);
        assert!(state.history.steps().is_empty());
    }

    #[test]
    fn step_hits_reprompt_limit() {
        let s = sem(vec![el(1, WidgetCategory::Button, "SAVE", 100)]);
        let mut state = TaskState::new("save");
        let mut llm = Seq(vec!["Tap X"; 4], 0);
        assert_eq!(step(&mut state, &s, &mut llm, &PlannerParams::default()), Err(PlanError::RepromptLimit(3)));
        assert_eq!(llm.1, 4);
    }

    #[test]
    fn action_shapes() {
        assert!(AgentAction::tap(1).is_well_formed());
        assert!(AgentAction::input(1, "x").is_well_formed());
        assert!(AgentAction::stop().is_well_formed());
        assert!(!AgentAction { target_id: None, ..AgentAction::tap(1) }.is_well_formed());
    }
}
