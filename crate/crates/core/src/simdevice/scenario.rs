//! Scenario documents: app states, their elements and blocks, and the
//! transitions between them.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::draw::{Color, ElementSpec};
use crate::pbd::DemoEvent;
use crate::perception::{BBox, ScreenSize, WidgetCategory};
use crate::planner::SwipeDir;

pub const SCENARIO_SCHEMA: &str = "1";

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ScenarioError {
    #[error("scenario format: {0}")]
    Format(String),
    #[error("scenario {scenario}: {msg}")]
    Invalid { scenario: String, msg: String },
    #[error("unknown bundled scenario {0:?}")]
    Unknown(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockSpec {
    #[serde(rename = "box")]
    pub bbox: BBox,
    #[serde(default)]
    pub fill: Option<Color>,
    #[serde(default)]
    pub border: Option<Color>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateSpec {
    /// Page height in frame pixels; defaults to the frame height.
    #[serde(default)]
    pub page_height: Option<u32>,
    #[serde(default = "default_background")]
    pub background: Color,
    #[serde(default)]
    pub blocks: Vec<BlockSpec>,
    pub elements: Vec<ElementSpec>,
}

fn default_background() -> Color {
    [246, 246, 246]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gesture {
    #[default]
    Tap,
    LongPress,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TextGuard {
    pub field: String,
    pub equals: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Transition {
    pub from: String,
    pub element: String,
    pub to: String,
    #[serde(default)]
    pub gesture: Gesture,
    /// Fires only when a field of the source state holds this text.
    #[serde(default)]
    pub when_text: Option<TextGuard>,
}

/// A demonstration gesture addressed by element name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "event", deny_unknown_fields)]
pub enum DemoStep {
    Tap { element: String },
    LongPress { element: String },
    Text { text: String },
    Swipe { dir: SwipeDir },
    Stop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema: String,
    pub name: String,
    pub task: String,
    /// Reference frame the coordinates are given in.
    pub frame: ScreenSize,
    pub initial: String,
    /// State reached when the task is done.
    pub goal: String,
    /// Add a status bar and a navigation bar to every page.
    #[serde(default = "yes")]
    pub system_bars: bool,
    pub states: BTreeMap<String, StateSpec>,
    #[serde(default)]
    pub transitions: Vec<Transition>,
    /// A human demonstration of the task.
    #[serde(default)]
    pub demonstration: Vec<DemoStep>,
}

fn yes() -> bool {
    true
}

pub const STATUS_BAR_H: u32 = 80;
pub const NAV_BAR_H: u32 = 120;

impl Scenario {
    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        let s: Scenario = serde_json::from_str(text).map_err(|e| ScenarioError::Format(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|e| ScenarioError::Format(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    fn invalid(&self, msg: String) -> ScenarioError {
        ScenarioError::Invalid { scenario: self.name.clone(), msg }
    }

    pub fn page_height(&self, state: &str) -> u32 {
        self.states
            .get(state)
            .and_then(|s| s.page_height)
            .unwrap_or(self.frame.h)
            .max(self.frame.h)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.schema != SCENARIO_SCHEMA {
            return Err(ScenarioError::Format(format!("schema {:?}, expected {SCENARIO_SCHEMA:?}", self.schema)));
        }
        for name in [&self.initial, &self.goal] {
            if !self.states.contains_key(name) {
                return Err(self.invalid(format!("state {name:?} does not exist")));
            }
        }
        for (name, st) in &self.states {
            let page = BBox::from_coords(0, 0, self.frame.w as i32, self.page_height(name) as i32);
            let mut seen = BTreeSet::new();
            for e in &st.elements {
                if !seen.insert(e.name.as_str()) {
                    return Err(self.invalid(format!("duplicate element {:?} in {name:?}", e.name)));
                }
                if !page.contains(&e.bbox) {
                    return Err(self.invalid(format!("element {:?} in {name:?} lies outside the page", e.name)));
                }
            }
            for b in &st.blocks {
                if !page.contains(&b.bbox) {
                    return Err(self.invalid(format!("block {} in {name:?} lies outside the page", b.bbox)));
                }
            }
        }
        for t in &self.transitions {
            for s in [&t.from, &t.to] {
                if !self.states.contains_key(s) {
                    return Err(self.invalid(format!("transition references unknown state {s:?}")));
                }
            }
            let from = &self.states[&t.from];
            if !from.elements.iter().any(|e| e.name == t.element) {
                return Err(self.invalid(format!("transition references unknown element {:?} in {:?}", t.element, t.from)));
            }
            if let Some(g) = &t.when_text {
                if !from.elements.iter().any(|e| e.name == g.field && e.category == Some(WidgetCategory::EditText)) {
                    return Err(self.invalid(format!("guard field {:?} is not an edit text in {:?}", g.field, t.from)));
                }
            }
        }
        Ok(())
    }
}

/// Placement of a scenario on a concrete device.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceSpec {
    pub w: u32,
    pub h: u32,
    /// Offset applied to page content, leaving system bars in place.
    pub shift: (i32, i32),
}

impl DeviceSpec {
    pub fn new(w: u32, h: u32) -> Self {
        DeviceSpec { w, h, shift: (0, 0) }
    }

    pub fn with_shift(self, dx: i32, dy: i32) -> Self {
        DeviceSpec { shift: (dx, dy), ..self }
    }
}

/// A state laid out in device pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviceState {
    pub page_height: u32,
    pub background: Color,
    pub blocks: Vec<BlockSpec>,
    pub elements: Vec<ElementSpec>,
    /// Ground-truth block partition in page pixels.
    pub truth_blocks: Vec<BBox>,
}

fn scale_box(b: &BBox, sx: f64, sy: f64, shift: (i32, i32), page: &BBox) -> BBox {
    let x1 = ((b.x1 as f64 * sx).round() as i32 + shift.0).clamp(page.x1, page.x2 - 1);
    let y1 = ((b.y1 as f64 * sy).round() as i32 + shift.1).clamp(page.y1, page.y2 - 1);
    let x2 = ((b.x2 as f64 * sx).round() as i32 + shift.0).clamp(x1 + 1, page.x2);
    let y2 = ((b.y2 as f64 * sy).round() as i32 + shift.1).clamp(y1 + 1, page.y2);
    BBox::from_coords(x1, y1, x2, y2)
}

/// Scales every state to `spec` and adds the system bars.
pub fn layout(scenario: &Scenario, spec: &DeviceSpec) -> BTreeMap<String, DeviceState> {
    let sx = spec.w as f64 / scenario.frame.w as f64;
    let sy = spec.h as f64 / scenario.frame.h as f64;
    let status_h = (STATUS_BAR_H as f64 * sy).round() as i32;
    let nav_h = (NAV_BAR_H as f64 * sy).round() as i32;
    scenario
        .states
        .iter()
        .map(|(name, st)| {
            let page_h = (scenario.page_height(name) as f64 * sy).round().max(spec.h as f64) as u32;
            let w = spec.w as i32;
            let bars = scenario.system_bars;
            let content = if bars {
                BBox::from_coords(0, status_h, w, page_h as i32 - nav_h)
            } else {
                BBox::from_coords(0, 0, w, page_h as i32)
            };
            let mut elements: Vec<ElementSpec> = st
                .elements
                .iter()
                .map(|e| ElementSpec { bbox: scale_box(&e.bbox, sx, sy, spec.shift, &content), ..e.clone() })
                .collect();
            let blocks: Vec<BlockSpec> = st
                .blocks
                .iter()
                .map(|b| BlockSpec { bbox: scale_box(&b.bbox, sx, sy, spec.shift, &content), ..b.clone() })
                .collect();
            let mut truth_blocks: Vec<BBox> = blocks.iter().map(|b| b.bbox).collect();
            if bars {
                let status = BBox::from_coords(0, 0, w, status_h);
                let nav = BBox::from_coords(0, page_h as i32 - nav_h, w, page_h as i32);
                elements.insert(0, ElementSpec::widget("status_bar", WidgetCategory::StatusBar, status, None));
                elements.push(ElementSpec::widget("navigation_bar", WidgetCategory::NavigationBar, nav, None));
                truth_blocks.extend([status, content, nav]);
            }
            let state = DeviceState { page_height: page_h, background: st.background, blocks, elements, truth_blocks };
            (name.clone(), state)
        })
        .collect()
}

/// Converts the named demo gesture to coordinates on the current viewport.
pub(crate) fn demo_event(step: &DemoStep, locate: impl Fn(&str) -> Option<(i32, i32)>) -> Option<DemoEvent> {
    Some(match step {
        DemoStep::Tap { element } => {
            let (x, y) = locate(element)?;
            DemoEvent::Tap { x, y }
        }
        DemoStep::LongPress { element } => {
            let (x, y) = locate(element)?;
            DemoEvent::LongPress { x, y }
        }
        DemoStep::Text { text } => DemoEvent::Text { text: text.clone() },
        DemoStep::Swipe { dir } => DemoEvent::Swipe { dir: *dir },
        DemoStep::Stop => DemoEvent::Stop,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINI: &str = r#"{
        "schema": "1", "name": "mini", "task": "Go", "frame": {"w": 1080, "h": 2244},
        "initial": "a", "goal": "b",
        "states": {
            "a": {"elements": [{"name": "go", "category": "button", "box": [100, 300, 500, 420], "label": "Go"}]},
            "b": {"elements": []}
        },
        "transitions": [{"from": "a", "element": "go", "to": "b"}]
    }"#;

    #[test]
    fn parses_and_validates() {
        let s = Scenario::parse(MINI).unwrap();
        assert_eq!(s.states["a"].elements[0].category, Some(WidgetCategory::Button));
        let bad = MINI.replace(r#""element": "go""#, r#""element": "gone""#);
        assert!(matches!(Scenario::parse(&bad), Err(ScenarioError::Invalid { .. })));
        let bad = MINI.replace(r#""goal": "b""#, r#""goal": "z""#);
        assert!(matches!(Scenario::parse(&bad), Err(ScenarioError::Invalid { .. })));
        let bad = MINI.replace(r#""schema": "1""#, r#""schema": "2""#);
        assert!(matches!(Scenario::parse(&bad), Err(ScenarioError::Format(_))));
    }

    #[test]
    fn layout_scales_and_adds_bars() {
        let s = Scenario::parse(MINI).unwrap();
        let states = layout(&s, &DeviceSpec::new(540, 1122).with_shift(0, 10));
        let a = &states["a"];
        assert_eq!(a.elements.len(), 3);
        assert_eq!(a.elements[1].bbox, BBox::from_coords(50, 160, 250, 220));
        assert_eq!(a.truth_blocks.len(), 3);
        assert_eq!(a.elements[0].category, Some(WidgetCategory::StatusBar));
    }
}
