use std::collections::{BTreeMap, HashMap};
use std::io::Cursor;
use std::sync::{Arc, Mutex, MutexGuard};

use image::codecs::png::{CompressionType, FilterType, PngEncoder};
use image::{ImageEncoder, RgbImage};

use super::draw::{fill_rect, stroke_rect, text_scale, ElementSpec};
use super::scenario::{demo_event, layout, DemoStep, DeviceSpec, DeviceState, Gesture, Scenario};
use crate::executor::{is_valid_shell_line, unescape_input_text, DeviceDriver, DeviceError};
use crate::grouping::IconLexicon;
use crate::pbd::{DemoEvent, EventSource, PbdError};
use crate::perception::{BBox, Perception, ScreenSize, WidgetCategory};
use crate::understand::{Observation, PerceptionSource, UnderstandError};

/// Swipes at least this long with no movement count as a long press.
const LONG_PRESS_MS: u32 = 500;
const KEY_BACK: u32 = 4;

struct Inner {
    scenario: Scenario,
    spec: DeviceSpec,
    states: BTreeMap<String, DeviceState>,
    current: String,
    offset: u32,
    focused: Option<String>,
    typed: HashMap<(String, String), String>,
    back_stack: Vec<String>,
    log: Vec<String>,
    screenshots: usize,
    pages: HashMap<String, RgbImage>,
}

impl Inner {
    fn state(&self) -> &DeviceState {
        &self.states[&self.current]
    }

    fn max_offset(&self) -> u32 {
        self.state().page_height - self.spec.h
    }

    fn page(&mut self) -> &RgbImage {
        if !self.pages.contains_key(&self.current) {
            let img = render_page(self.state(), self.spec.w);
            self.pages.insert(self.current.clone(), img);
        }
        &self.pages[&self.current]
    }

    fn element_at(&self, x: i32, page_y: i32) -> Option<&ElementSpec> {
        self.state()
            .elements
            .iter()
            .filter(|e| e.bbox.contains_point(x, page_y))
            .min_by_key(|e| e.bbox.area())
    }

    fn enter(&mut self, to: String) {
        let from = std::mem::replace(&mut self.current, to);
        self.back_stack.push(from);
        self.offset = 0;
        self.focused = None;
    }

    fn press(&mut self, x: i32, y: i32, gesture: Gesture) {
        let Some(e) = self.element_at(x, y + self.offset as i32) else {
            self.focused = None;
            return;
        };
        let name = e.name.clone();
        let is_field = e.category == Some(WidgetCategory::EditText);
        let typed = &self.typed;
        let current = &self.current;
        let fired = self
            .scenario
            .transitions
            .iter()
            .find(|t| {
                t.from == *current
                    && t.element == name
                    && t.gesture == gesture
                    && t.when_text.as_ref().is_none_or(|g| {
                        typed.get(&(current.clone(), g.field.clone())).is_some_and(|v| *v == g.equals)
                    })
            })
            .map(|t| t.to.clone());
        match fired {
            Some(to) => self.enter(to),
            None => self.focused = is_field.then_some(name),
        }
    }

    fn exec(&mut self, line: &str) -> Result<(), DeviceError> {
        if !is_valid_shell_line(line) {
            return Err(DeviceError::Grammar(line.to_string()));
        }
        self.log.push(line.to_string());
        let mut parts = line.splitn(3, ' ');
        let (head, verb) = (parts.next().unwrap_or(""), parts.next().unwrap_or(""));
        let rest = parts.next().unwrap_or("");
        let nums = || -> Vec<i64> { rest.split(' ').filter_map(|t| t.parse().ok()).collect() };
        match (head, verb) {
            ("input", "tap") => {
                let n = nums();
                self.press(n[0] as i32, n[1] as i32, Gesture::Tap);
            }
            ("input", "swipe") => {
                let n = nums();
                let (dx, dy) = (n[2] - n[0], n[3] - n[1]);
                if dx == 0 && dy == 0 {
                    if n[4] >= LONG_PRESS_MS as i64 {
                        self.press(n[0] as i32, n[1] as i32, Gesture::LongPress);
                    }
                } else if dy.abs() > dx.abs() {
                    let next = (self.offset as i64 - dy).clamp(0, self.max_offset() as i64);
                    self.offset = next as u32;
                }
            }
            ("input", "text") => {
                if let Some(field) = self.focused.clone() {
                    let key = (self.current.clone(), field);
                    self.typed.entry(key).or_default().push_str(&unescape_input_text(rest));
                }
            }
            ("input", "keyevent")
                if nums().first() == Some(&(KEY_BACK as i64)) => {
                    if let Some(prev) = self.back_stack.pop() {
                        self.current = prev;
                        self.offset = 0;
                        self.focused = None;
                    }
                }
            _ => {}
        }
        Ok(())
    }

    fn viewport(&mut self) -> RgbImage {
        let (w, h, off) = (self.spec.w, self.spec.h, self.offset);
        image::imageops::crop_imm(self.page(), 0, off, w, h).to_image()
    }

    /// Ground truth for the page rows `[offset, offset + height)`, shifted
    /// to start at 0. Only fully contained elements are reported.
    fn truth(&self, height: u32, lexicon: Option<&IconLexicon>) -> (Perception, Vec<BBox>) {
        let scale = text_scale(self.spec.w);
        let off = self.offset as i32;
        let window = BBox::from_coords(0, off, self.spec.w as i32, off + height as i32);
        let mut p = Perception::empty(ScreenSize { w: self.spec.w, h: height });
        for e in &self.state().elements {
            if !window.contains(&e.bbox) {
                continue;
            }
            let (widget, text) = e.perception(scale);
            if let Some(mut w) = widget {
                w.bbox = w.bbox.translate(0, -off).expect("inside window");
                if let (Some(desc), Some(lex)) = (&e.icon, lexicon) {
                    if let Some(v) = lex.embedding_of(desc) {
                        p.embeddings.insert(w.crop_id.clone(), v.clone());
                    }
                }
                p.widgets.push(w);
            }
            if let Some(mut t) = text {
                if window.contains(&t.bbox) {
                    t.bbox = t.bbox.translate(0, -off).expect("inside window");
                    p.texts.push(t);
                }
            }
        }
        let blocks = self
            .state()
            .truth_blocks
            .iter()
            .filter_map(|b| b.intersection(&window))
            .filter_map(|b| b.translate(0, -off).ok())
            .collect();
        (p, blocks)
    }
}

fn render_page(state: &DeviceState, w: u32) -> RgbImage {
    let mut img = RgbImage::from_pixel(w, state.page_height, image::Rgb(state.background));
    for b in &state.blocks {
        if let Some(fill) = b.fill {
            fill_rect(&mut img, &b.bbox, fill);
        }
        if let Some(border) = b.border {
            stroke_rect(&mut img, &b.bbox, border, 3);
        }
    }
    let scale = text_scale(w);
    for e in &state.elements {
        e.draw(&mut img, scale);
    }
    img
}

pub fn encode_png(img: &RgbImage) -> Vec<u8> {
    let mut out = Vec::new();
    PngEncoder::new_with_quality(Cursor::new(&mut out), CompressionType::Fast, FilterType::NoFilter)
        .write_image(img.as_raw(), img.width(), img.height(), image::ExtendedColorType::Rgb8)
        .expect("png encoding into memory");
    out
}

/// A scripted app running on a virtual screen. Clones share the device.
#[derive(Clone)]
pub struct SimDevice {
    inner: Arc<Mutex<Inner>>,
}

impl std::fmt::Debug for SimDevice {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let g = self.lock();
        f.debug_struct("SimDevice")
            .field("scenario", &g.scenario.name)
            .field("state", &g.current)
            .field("offset", &g.offset)
            .finish()
    }
}

impl SimDevice {
    pub fn new(scenario: Scenario, spec: DeviceSpec) -> Self {
        let states = layout(&scenario, &spec);
        let current = scenario.initial.clone();
        SimDevice {
            inner: Arc::new(Mutex::new(Inner {
                scenario,
                spec,
                states,
                current,
                offset: 0,
                focused: None,
                typed: HashMap::new(),
                back_stack: Vec::new(),
                log: Vec::new(),
                screenshots: 0,
                pages: HashMap::new(),
            })),
        }
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn spec(&self) -> DeviceSpec {
        self.lock().spec
    }

    pub fn scenario(&self) -> Scenario {
        self.lock().scenario.clone()
    }

    pub fn state_name(&self) -> String {
        self.lock().current.clone()
    }

    pub fn at_goal(&self) -> bool {
        let g = self.lock();
        g.current == g.scenario.goal
    }

    pub fn offset(&self) -> u32 {
        self.lock().offset
    }

    pub fn typed_text(&self, field: &str) -> Option<String> {
        let g = self.lock();
        g.typed.get(&(g.current.clone(), field.to_string())).cloned()
    }

    /// Every shell line executed so far.
    pub fn command_log(&self) -> Vec<String> {
        self.lock().log.clone()
    }

    pub fn screenshot_count(&self) -> usize {
        self.lock().screenshots
    }

    /// Applies one shell line to the app state.
    pub fn sim_exec(&self, line: &str) -> Result<(), DeviceError> {
        self.lock().exec(line)
    }

    pub fn render_viewport(&self) -> RgbImage {
        self.lock().viewport()
    }

    /// Full current page as drawn, regardless of scrolling.
    pub fn render_page(&self) -> RgbImage {
        self.lock().page().clone()
    }

    /// Ground-truth perception and blocks for a capture of `height` rows
    /// starting at the current viewport.
    pub fn ground_truth(&self, height: u32, lexicon: Option<&IconLexicon>) -> (Perception, Vec<BBox>) {
        self.lock().truth(height, lexicon)
    }

    /// Center of a named element in viewport coordinates, if visible.
    pub fn element_center(&self, name: &str) -> Option<(i32, i32)> {
        let g = self.lock();
        let e = g.state().elements.iter().find(|e| e.name == name)?;
        let (cx, cy) = e.bbox.center();
        let y = cy - g.offset as i32;
        (y >= 0 && y < g.spec.h as i32).then_some((cx, y))
    }
}

impl DeviceDriver for SimDevice {
    fn exec_shell(&mut self, line: &str) -> Result<Vec<u8>, DeviceError> {
        self.sim_exec(line)?;
        Ok(Vec::new())
    }

    fn screenshot(&mut self) -> Result<Vec<u8>, DeviceError> {
        let mut g = self.lock();
        g.screenshots += 1;
        let img = g.viewport();
        drop(g);
        Ok(encode_png(&img))
    }
}

/// Perfect perception: reports the simulator's own ground truth.
///
/// With `pixel_blocks` set, blocks come from pixel division of the capture
/// instead of the ground-truth partition.
pub struct SimPerception {
    pub device: SimDevice,
    pub lexicon: Option<Arc<IconLexicon>>,
    pub pixel_blocks: bool,
}

impl SimPerception {
    pub fn new(device: SimDevice, lexicon: Option<Arc<IconLexicon>>) -> Self {
        SimPerception { device, lexicon, pixel_blocks: false }
    }
}

impl PerceptionSource for SimPerception {
    fn observe(&mut self, image: &RgbImage) -> Result<Observation, UnderstandError> {
        let (perception, blocks) = self.device.ground_truth(image.height(), self.lexicon.as_deref());
        Ok(Observation { perception, blocks: (!self.pixel_blocks).then_some(blocks) })
    }
}

/// Plays a scenario's demonstration on the device, one gesture per call.
pub struct SimEventSource {
    device: SimDevice,
    steps: std::vec::IntoIter<DemoStep>,
    clock: chrono::DateTime<chrono::Utc>,
}

impl SimEventSource {
    pub fn new(device: SimDevice, steps: Vec<DemoStep>) -> Self {
        SimEventSource {
            device,
            steps: steps.into_iter(),
            clock: chrono::DateTime::from_timestamp(1_700_000_000, 0).expect("valid timestamp"),
        }
    }
}

impl EventSource for SimEventSource {
    fn next_event(&mut self) -> Result<(DemoEvent, chrono::DateTime<chrono::Utc>), PbdError> {
        let step = self.steps.next().unwrap_or(DemoStep::Stop);
        let event = demo_event(&step, |name| self.device.element_center(name))
            .ok_or_else(|| PbdError::Store(format!("demonstration target not visible: {step:?}")))?;
        let spec = self.device.spec();
        let line = match &event {
            DemoEvent::Tap { x, y } => Some(format!("input tap {x} {y}")),
            DemoEvent::LongPress { x, y } => Some(format!("input swipe {x} {y} {x} {y} 800")),
            DemoEvent::Text { text } => Some(crate::executor::DeviceCommand::text(text).shell_line),
            DemoEvent::Swipe { dir } => {
                let (cx, q) = ((spec.w / 2) as i32, (spec.h / 4) as i32);
                let c = (spec.h / 2) as i32;
                match dir {
                    crate::planner::SwipeDir::Up => Some(format!("input swipe {cx} {} {cx} {} 300", c + q, c - q)),
                    crate::planner::SwipeDir::Down => Some(format!("input swipe {cx} {} {cx} {} 300", c - q, c + q)),
                    _ => None,
                }
            }
            DemoEvent::Stop => None,
        };
        if let Some(line) = line {
            self.device.sim_exec(&line).map_err(|e| PbdError::Device(e.into()))?;
        }
        self.clock += chrono::Duration::seconds(2);
        Ok((event, self.clock))
    }
}
