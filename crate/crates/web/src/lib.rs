//! Browser demo: block division of synthetic screens with adjustable
//! parameters, the rendered description with its token estimate, and tap
//! resolution on a long scrolling page.
//!
//! Every export returns plain values or JSON strings, so the same API is
//! exercised by native tests.

use std::sync::Arc;

use image::RgbImage;
use serde::Serialize;
use wasm_bindgen::prelude::*;

use screensense::blocking::{divide_blocks, BlockingParams, LineSegment};
use screensense::executor::{resolve_coordinates, StitchedScreenshot};
use screensense::grouping::IconLexicon;
use screensense::pbd::lift_event;
use screensense::perception::{iou, BBox};
use screensense::serialize::{estimate_tokens, ScreenSemantics};
use screensense::simdevice::{
    bundled_scenario, default_lexicon, gen_synthetic_screen, DeviceSpec, SimDevice, SynthParams, SyntheticScreen,
};
use screensense::understand::{understand, Observation, UnderstandParams};

fn rgba(img: &RgbImage) -> Vec<u8> {
    img.pixels().flat_map(|p| [p.0[0], p.0[1], p.0[2], 255]).collect()
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).unwrap_or_else(|e| format!("{{\"error\":{:?}}}", e.to_string()))
}

/// A truth block counts as found when a detected block overlaps it at
/// this IoU.
const FOUND_IOU: f64 = 0.9;

#[derive(Serialize)]
struct Division<'a> {
    segments: &'a [LineSegment],
    blocks: &'a [BBox],
    truth_blocks: &'a [BBox],
    found: usize,
}

#[derive(Serialize)]
struct Description {
    rendering: String,
    tokens: usize,
    elements: usize,
    blocks: usize,
}

#[wasm_bindgen]
pub struct SyntheticDemo {
    screen: SyntheticScreen,
    lexicon: IconLexicon,
    params: UnderstandParams,
    segments: Vec<LineSegment>,
    blocks: Vec<BBox>,
    semantics: Option<ScreenSemantics>,
}

#[wasm_bindgen]
impl SyntheticDemo {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u64, width: u32, height: u32) -> SyntheticDemo {
        let params = SynthParams { w: width.clamp(360, 1440), h: height.clamp(640, 3200), ..SynthParams::default() };
        SyntheticDemo {
            screen: gen_synthetic_screen(seed, &params),
            lexicon: default_lexicon(),
            params: UnderstandParams::default(),
            segments: Vec::new(),
            blocks: Vec::new(),
            semantics: None,
        }
    }

    pub fn width(&self) -> u32 {
        self.screen.image.width()
    }

    pub fn height(&self) -> u32 {
        self.screen.image.height()
    }

    /// RGBA bytes for `ImageData`.
    pub fn pixels(&self) -> Vec<u8> {
        rgba(&self.screen.image)
    }

    /// Divides the screen into blocks and returns segments, blocks, truth
    /// blocks and how many truth blocks were found, as JSON.
    pub fn divide(&mut self, top_colors: usize, t_grad: f64) -> String {
        self.params.blocking = BlockingParams { top_colors: top_colors.clamp(2, 32), t_grad: t_grad.max(1.0), ..BlockingParams::default() };
        let (segments, blocks) = divide_blocks(&self.screen.image, &self.params.blocking);
        self.segments = segments;
        self.blocks = blocks;
        self.semantics = None;
        let truth = &self.screen.spec.truth_blocks;
        let found = truth.iter().filter(|t| self.blocks.iter().any(|b| iou(b, t) >= FOUND_IOU)).count();
        to_json(&Division { segments: &self.segments, blocks: &self.blocks, truth_blocks: truth, found })
    }

    fn semantics(&mut self) -> Result<&ScreenSemantics, String> {
        if self.semantics.is_none() {
            if self.blocks.is_empty() {
                self.divide(self.params.blocking.top_colors, self.params.blocking.t_grad);
            }
            let obs = Observation { perception: self.screen.perception(Some(&self.lexicon)), blocks: Some(self.blocks.clone()) };
            let u = understand(&obs, &self.screen.image, &self.params, Some(&self.lexicon)).map_err(|e| e.to_string())?;
            self.semantics = Some(u.semantics);
        }
        Ok(self.semantics.as_ref().expect("just set"))
    }

    /// The rendered screen description and its token estimate, as JSON.
    pub fn describe(&mut self) -> String {
        match self.semantics() {
            Ok(sem) => {
                let rendering = sem.render();
                to_json(&Description {
                    tokens: estimate_tokens(&rendering),
                    elements: sem.elements.len(),
                    blocks: sem.blocks.len(),
                    rendering,
                })
            }
            Err(e) => to_json(&serde_json::json!({ "error": e })),
        }
    }

    /// The demonstration step a tap at (x, y) would be recorded as.
    pub fn lift(&mut self, x: i32, y: i32) -> String {
        match self.semantics() {
            Ok(sem) => lift_event(x, y, sem).stored(),
            Err(e) => format!("error: {e}"),
        }
    }
}

#[derive(Serialize)]
struct Resolution {
    element: Option<String>,
    target: Option<BBox>,
    commands: Vec<String>,
    reached_state: Option<String>,
}

/// The bundled contact list, captured as one page taller than the screen.
#[wasm_bindgen]
pub struct LongPageDemo {
    device: SimDevice,
    page: RgbImage,
    semantics: ScreenSemantics,
}

#[wasm_bindgen]
impl LongPageDemo {
    #[wasm_bindgen(constructor)]
    pub fn new() -> Result<LongPageDemo, String> {
        let scenario = bundled_scenario("contacts_scroll").map_err(|e| e.to_string())?;
        let spec = DeviceSpec::new(scenario.frame.w, scenario.frame.h);
        let device = SimDevice::new(scenario, spec);
        let page = device.render_page();
        let lexicon = Arc::new(default_lexicon());
        let (perception, blocks) = device.ground_truth(page.height(), Some(&lexicon));
        let obs = Observation { perception, blocks: Some(blocks) };
        let semantics = understand(&obs, &page, &UnderstandParams::default(), Some(&lexicon))
            .map_err(|e| e.to_string())?
            .semantics;
        Ok(LongPageDemo { device, page, semantics })
    }

    pub fn width(&self) -> u32 {
        self.page.width()
    }

    pub fn page_height(&self) -> u32 {
        self.page.height()
    }

    pub fn screen_height(&self) -> u32 {
        self.device.spec().h
    }

    pub fn pixels(&self) -> Vec<u8> {
        rgba(&self.page)
    }

    /// Swipes and tap for the element under page point (x, y), replayed on
    /// a fresh device to show which screen the tap opens, as JSON.
    pub fn tap(&self, x: i32, y: i32) -> String {
        let step = lift_event(x, y, &self.semantics);
        let Some(el) = step.element_id.and_then(|id| self.semantics.element(id)) else {
            return to_json(&Resolution { element: None, target: None, commands: Vec::new(), reached_state: None });
        };
        let spec = self.device.spec();
        let shot = StitchedScreenshot {
            image: self.page.clone(),
            tile_offsets: vec![0],
            scroll_step: spec.h / 2,
            screen_w: spec.w,
            screen_h: spec.h,
        };
        let commands: Vec<String> = match resolve_coordinates(&el.bbox, &shot) {
            Ok(c) => c.into_iter().map(|c| c.shell_line).collect(),
            Err(e) => return to_json(&serde_json::json!({ "error": e.to_string() })),
        };
        let replay = SimDevice::new(self.device.scenario(), spec);
        let reached = commands.iter().try_for_each(|c| replay.sim_exec(c)).ok().map(|_| replay.state_name());
        to_json(&Resolution { element: Some(step.stored()), target: Some(el.bbox), commands, reached_state: reached })
    }
}
