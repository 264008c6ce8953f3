//! Seeded synthetic screens with full ground truth: a random canvas with a
//! status bar and a navigation bar, and sections drawn as full-width bands
//! or bordered cards holding widgets.

use image::{Rgb, RgbImage};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::draw::{blend_rect, draw_text, fill_rect, stroke_rect, text_scale, Color, ElementSpec, LabelPos};
use super::scenario::BlockSpec;
use crate::grouping::IconLexicon;
use crate::perception::{BBox, Perception, ScreenSize, WidgetCategory};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthParams {
    pub w: u32,
    pub h: u32,
    pub max_sections: usize,
    pub max_rows: usize,
    /// Probability that a section is a bordered card rather than a band.
    pub card_prob: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams { w: 1080, h: 2244, max_sections: 5, max_rows: 3, card_prob: 0.5 }
    }
}

impl SynthParams {
    /// A layout with no sections at all.
    pub fn empty(w: u32, h: u32) -> Self {
        SynthParams { w, h, max_sections: 0, ..Self::default() }
    }
}

/// Per-element appearance jitter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Augmentation {
    pub brightness: i32,
    pub contrast: f64,
    pub balance: [i32; 3],
    /// Opacity of the element fill over its background.
    pub opacity: f64,
}

impl Augmentation {
    pub const NONE: Augmentation = Augmentation { brightness: 0, contrast: 1.0, balance: [0; 3], opacity: 1.0 };

    pub fn apply(&self, c: Color) -> Color {
        let mut out = [0u8; 3];
        for i in 0..3 {
            let v = (c[i] as f64 - 128.0) * self.contrast + 128.0 + (self.brightness + self.balance[i]) as f64;
            out[i] = v.round().clamp(0.0, 255.0) as u8;
        }
        out
    }

    fn random(rng: &mut ChaCha8Rng) -> Self {
        Augmentation {
            brightness: rng.gen_range(-15..=15),
            contrast: rng.gen_range(0.9..=1.1),
            balance: [rng.gen_range(-8..=8), rng.gen_range(-8..=8), rng.gen_range(-8..=8)],
            opacity: rng.gen_range(0.85..=1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub element: ElementSpec,
    pub augmentation: Augmentation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticScreenSpec {
    pub seed: u64,
    pub screen: ScreenSize,
    pub canvas: Color,
    pub sections: Vec<BlockSpec>,
    pub placements: Vec<Placement>,
    /// Ground-truth partition: status bar, content area, navigation bar and
    /// every section.
    pub truth_blocks: Vec<BBox>,
}

#[derive(Debug, Clone)]
pub struct SyntheticScreen {
    pub image: RgbImage,
    pub spec: SyntheticScreenSpec,
}

fn luma(c: Color) -> f64 {
    0.299 * c[0] as f64 + 0.587 * c[1] as f64 + 0.114 * c[2] as f64
}

const CANVASES: &[Color] = &[[250, 250, 250], [236, 239, 241], [255, 248, 225], [232, 245, 233], [227, 242, 253], [243, 229, 245]];
const BAND_FILLS: &[Color] = &[[144, 164, 174], [120, 144, 156], [161, 136, 127], [121, 134, 203], [77, 182, 172], [149, 117, 205], [100, 100, 100]];
const CARD_FILLS: &[Color] = &[[255, 255, 255], [250, 250, 250], [245, 245, 245]];
const BORDERS: &[Color] = &[[66, 66, 66], [33, 33, 33], [55, 71, 79], [62, 39, 35], [26, 35, 126]];
const WORDS: &[&str] = &[
    "Account", "Privacy", "Display", "Sound", "Battery", "Storage", "Network", "Music", "Photos", "Search", "Profile",
    "Orders", "Wallet", "Help", "About", "Notes", "Maps", "Alarm", "Weather", "News", "Share", "Sync", "Theme",
    "Login", "Save", "Cancel", "Submit", "Next", "Back", "Done", "Email", "Phone", "Name", "City", "Cart",
];
const ICONS: &[&str] = &["Settings", "Search", "Share", "More options", "Add", "Delete", "Favorite", "Home"];

/// Lowest acceptable luma gap between a band and the canvas, and between a
/// card border and its neighbours.
const FILL_CONTRAST: f64 = 70.0;
const BORDER_CONTRAST: f64 = 90.0;
const MARGIN: i32 = 48;
const GAP_MIN: i32 = 48;
/// Vertical space between rows, wider than the text matching distance.
const ROW_GAP: i32 = 48;

fn pick(rng: &mut ChaCha8Rng, from: &[Color], ok: impl Fn(Color) -> bool) -> Option<Color> {
    let good: Vec<&Color> = from.iter().filter(|c| ok(**c)).collect();
    good.choose(rng).map(|c| **c)
}

fn word(rng: &mut ChaCha8Rng) -> String {
    (*WORDS.choose(rng).expect("non-empty")).to_string()
}

struct Builder<'a> {
    rng: &'a mut ChaCha8Rng,
    scale: u32,
    placements: Vec<Placement>,
    n: usize,
}

impl Builder<'_> {
    fn push(&mut self, mut e: ElementSpec) {
        self.n += 1;
        e.name = format!("e{}", self.n);
        let augmentation = if e.category.is_some() { Augmentation::random(self.rng) } else { Augmentation::NONE };
        self.placements.push(Placement { element: e, augmentation });
    }

    /// One row of content spanning `x1..x2` starting at `y`; returns its height.
    fn row(&mut self, x1: i32, x2: i32, y: i32) -> i32 {
        let s = self.scale as i32;
        let th = 8 * s;
        match self.rng.gen_range(0..5) {
            0 => {
                let w = self.rng.gen_range(260..=420).min(x2 - x1);
                let h = self.rng.gen_range(90..=120);
                let b = BBox::from_coords(x1, y, x1 + w, y + h);
                let label = word(self.rng);
                self.push(ElementSpec::widget("", WidgetCategory::Button, b, Some(&label)));
                h
            }
            1 => {
                let h = 100;
                let b = BBox::from_coords(x1, y, x2, y + h);
                let label = word(self.rng);
                self.push(ElementSpec::widget("", WidgetCategory::EditText, b, Some(&label)));
                h
            }
            2 => {
                let h = 90;
                let label = word(self.rng);
                let (tw, _) = super::draw::text_size(&label, self.scale);
                let tb = BBox::from_coords(x1, y + (h - th) / 2, x1 + tw as i32, y + (h + th) / 2);
                self.push(ElementSpec::text("", tb, &label));
                let sw = BBox::from_coords(x2 - 140, y + 15, x2, y + h - 15);
                let cat = if self.rng.gen_bool(0.5) { WidgetCategory::Switch } else { WidgetCategory::CheckBox };
                let mut e = ElementSpec::widget("", cat, sw, None);
                e.checked = self.rng.gen_bool(0.5);
                self.push(e);
                h
            }
            3 => {
                let n = self.rng.gen_range(2..=4);
                let size = 120;
                let span = x2 - x1;
                let step = span / n;
                for i in 0..n {
                    let cx = x1 + step * i + step / 2;
                    let b = BBox::from_coords(cx - size / 2, y, cx + size / 2, y + size);
                    let mut e = if self.rng.gen_bool(0.5) {
                        let mut e = ElementSpec::widget("", WidgetCategory::Image, b, None);
                        e.icon = Some((*ICONS.choose(self.rng).expect("non-empty")).to_string());
                        e
                    } else {
                        let label = word(self.rng);
                        let mut e = ElementSpec::widget("", WidgetCategory::Image, b, Some(&label));
                        e.label_pos = LabelPos::Below;
                        e
                    };
                    e.fill = Some([[245, 124, 0], [229, 57, 53], [67, 160, 71], [30, 136, 229]][i as usize % 4]);
                    self.push(e);
                }
                size + 2 * s + th
            }
            _ => {
                let words = self.rng.gen_range(1..=3);
                let mut label: Vec<String> = (0..words).map(|_| word(self.rng)).collect();
                while label.len() > 1 && super::draw::text_size(&label.join(" "), self.scale).0 as i32 > x2 - x1 {
                    label.pop();
                }
                let label = label.join(" ");
                let (tw, _) = super::draw::text_size(&label, self.scale);
                let tb = BBox::from_coords(x1, y, x1 + (tw as i32).min(x2 - x1), y + th);
                self.push(ElementSpec::text("", tb, &label));
                th
            }
        }
    }
}

/// Deterministic in `seed`. Bands and cards keep at least `MARGIN` pixels
/// of clearance so no element line spans a section.
pub fn gen_synthetic_screen(seed: u64, params: &SynthParams) -> SyntheticScreen {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (params.w as i32, params.h as i32);
    let scale = text_scale(params.w);
    let ry = params.h as f64 / 2244.0;
    let status_h = (80.0 * ry).round() as i32;
    let nav_h = (120.0 * ry).round() as i32;
    let canvas = *CANVASES.choose(&mut rng).expect("non-empty");

    let status = BBox::from_coords(0, 0, w, status_h);
    let nav = BBox::from_coords(0, h - nav_h, w, h);
    let content = BBox::from_coords(0, status_h, w, h - nav_h);
    let mut truth_blocks = vec![status, content, nav];
    let mut sections: Vec<BlockSpec> = Vec::new();
    let mut b = Builder { rng: &mut rng, scale, placements: Vec::new(), n: 0 };
    b.push(ElementSpec::widget("", WidgetCategory::StatusBar, status, None));

    let n_sections = if params.max_sections == 0 { 0 } else { b.rng.gen_range(1..=params.max_sections) };
    let mut y = status_h + b.rng.gen_range(GAP_MIN..=GAP_MIN + 40);
    let bottom = h - nav_h - GAP_MIN;
    let th = 8 * scale as i32;
    for _ in 0..n_sections {
        let card = b.rng.gen_bool(params.card_prob);
        let pair = card && b.rng.gen_bool(0.3);
        let rows = b.rng.gen_range(1..=params.max_rows.max(1));
        let columns: Vec<(i32, i32)> = if !card {
            vec![(0, w)]
        } else if pair {
            vec![(MARGIN, w / 2 - GAP_MIN / 2), (w / 2 + GAP_MIN / 2, w - MARGIN)]
        } else {
            vec![(MARGIN, w - MARGIN)]
        };
        let fill = if card {
            pick(b.rng, CARD_FILLS, |_| true)
        } else {
            pick(b.rng, BAND_FILLS, |c| (luma(c) - luma(canvas)).abs() >= FILL_CONTRAST)
        }
        .unwrap_or([96, 96, 96]);
        let border = card
            .then(|| {
                pick(b.rng, BORDERS, |c| {
                    (luma(c) - luma(canvas)).abs() >= BORDER_CONTRAST && (luma(c) - luma(fill)).abs() >= BORDER_CONTRAST
                })
            })
            .flatten();

        let saved = (b.placements.len(), b.n);
        let mut section_bottom = y;
        for &(x1, x2) in &columns {
            let inner_x1 = x1 + MARGIN;
            let inner_x2 = x2 - MARGIN;
            let mut cy = y + ROW_GAP;
            if b.rng.gen_bool(0.6) {
                let cap = word(b.rng);
                let (tw, _) = super::draw::text_size(&cap, scale);
                let tb = BBox::from_coords(inner_x1, cy, inner_x1 + tw as i32, cy + th);
                b.push(ElementSpec::text("", tb, &cap));
                cy += th + ROW_GAP;
            }
            for _ in 0..rows {
                let rh = b.row(inner_x1, inner_x2, cy);
                cy += rh + ROW_GAP;
            }
            section_bottom = section_bottom.max(cy);
        }
        if section_bottom > bottom {
            b.placements.truncate(saved.0);
            b.n = saved.1;
            break;
        }
        for &(x1, x2) in &columns {
            let bb = BBox::from_coords(x1, y, x2, section_bottom);
            sections.push(BlockSpec { bbox: bb, fill: Some(fill), border });
            truth_blocks.push(bb);
        }
        y = section_bottom + b.rng.gen_range(GAP_MIN..=GAP_MIN + 60);
        if y >= bottom {
            break;
        }
    }
    b.push(ElementSpec::widget("", WidgetCategory::NavigationBar, nav, None));
    let placements = b.placements;

    let mut image = RgbImage::from_pixel(params.w, params.h, Rgb(canvas));
    for s in &sections {
        if let Some(f) = s.fill {
            fill_rect(&mut image, &s.bbox, f);
        }
        if let Some(c) = s.border {
            stroke_rect(&mut image, &s.bbox, c, 3);
        }
    }
    for p in &placements {
        let e = &p.element;
        match (e.category, e.fill_color()) {
            (Some(_), Some(base)) => {
                let c = p.augmentation.apply(base);
                blend_rect(&mut image, &e.bbox, c, p.augmentation.opacity);
                ElementSpec { fill: Some(c), ..e.clone() }.draw_details(&mut image, scale);
            }
            _ => e.draw(&mut image, scale),
        }
    }
    draw_text(&mut image, 24, (status_h - th).max(0) / 2, "12:30", scale, [230, 230, 230]);

    SyntheticScreen {
        image,
        spec: SyntheticScreenSpec {
            seed,
            screen: ScreenSize { w: params.w, h: params.h },
            canvas,
            sections,
            placements,
            truth_blocks,
        },
    }
}

impl SyntheticScreen {
    /// What a perfect detector reports for this screen. Icons get the
    /// lexicon embedding of their function when a lexicon is given.
    pub fn perception(&self, lexicon: Option<&IconLexicon>) -> Perception {
        let scale = text_scale(self.spec.screen.w);
        let mut p = Perception::empty(self.spec.screen);
        for pl in &self.spec.placements {
            let (widget, text) = pl.element.perception(scale);
            if let Some(w) = widget {
                if let (Some(desc), Some(lex)) = (&pl.element.icon, lexicon) {
                    if let Some(v) = lex.embedding_of(desc) {
                        p.embeddings.insert(w.crop_id.clone(), v.clone());
                    }
                }
                p.widgets.push(w);
            }
            if let Some(t) = text {
                p.texts.push(t);
            }
        }
        p
    }

    /// Ground-truth element boxes with their categories (`None` for text).
    pub fn truth_elements(&self) -> Vec<(BBox, Option<WidgetCategory>, Option<String>)> {
        let scale = text_scale(self.spec.screen.w);
        self.spec
            .placements
            .iter()
            .map(|p| (p.element.truth_box(scale), p.element.category, p.element.label.clone()))
            .collect()
    }
}
