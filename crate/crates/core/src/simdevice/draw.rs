//! Flat-shaded drawing of element specs, and the perception records a
//! perfect detector would report for them.

use font8x8::UnicodeFonts;
use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::perception::{BBox, DetectedWidget, TextFragment, WidgetCategory};

pub type Color = [u8; 3];

pub const TEXT_DARK: Color = [33, 33, 33];
pub const TEXT_LIGHT: Color = [250, 250, 250];

/// Where an element's label is drawn relative to its box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelPos {
    #[default]
    Inside,
    Below,
}

/// One drawable element. `category: None` is free-standing text whose box
/// is the area the text is placed in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ElementSpec {
    pub name: String,
    #[serde(default, with = "category_opt")]
    pub category: Option<WidgetCategory>,
    #[serde(rename = "box")]
    pub bbox: BBox,
    #[serde(default)]
    pub label: Option<String>,
    #[serde(default)]
    pub label_pos: LabelPos,
    /// Function description of an icon, looked up in the icon lexicon.
    #[serde(default)]
    pub icon: Option<String>,
    #[serde(default)]
    pub fill: Option<Color>,
    #[serde(default)]
    pub text_color: Option<Color>,
    /// Switches and check boxes drawn in their on state.
    #[serde(default)]
    pub checked: bool,
}

mod category_opt {
    use serde::{Deserialize, Deserializer, Serializer};

    use crate::perception::WidgetCategory;

    pub fn serialize<S: Serializer>(c: &Option<WidgetCategory>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(c.map(|c| c.as_str()).unwrap_or("text"))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<WidgetCategory>, D::Error> {
        let s = String::deserialize(d)?;
        if s == "text" {
            return Ok(None);
        }
        s.parse().map(Some).map_err(serde::de::Error::custom)
    }
}

pub fn text_scale(screen_w: u32) -> u32 {
    if screen_w >= 1000 {
        3
    } else {
        2
    }
}

pub fn text_size(text: &str, scale: u32) -> (u32, u32) {
    (text.chars().count() as u32 * 8 * scale, 8 * scale)
}

pub fn fill_rect(img: &mut RgbImage, b: &BBox, c: Color) {
    let x2 = (b.x2.max(0) as u32).min(img.width());
    let y2 = (b.y2.max(0) as u32).min(img.height());
    for y in b.y1.max(0) as u32..y2 {
        for x in b.x1.max(0) as u32..x2 {
            img.put_pixel(x, y, Rgb(c));
        }
    }
}

pub fn blend_rect(img: &mut RgbImage, b: &BBox, c: Color, alpha: f64) {
    let x2 = (b.x2.max(0) as u32).min(img.width());
    let y2 = (b.y2.max(0) as u32).min(img.height());
    for y in b.y1.max(0) as u32..y2 {
        for x in b.x1.max(0) as u32..x2 {
            let p = img.get_pixel_mut(x, y);
            for i in 0..3 {
                p.0[i] = (alpha * c[i] as f64 + (1.0 - alpha) * p.0[i] as f64).round() as u8;
            }
        }
    }
}

pub fn stroke_rect(img: &mut RgbImage, b: &BBox, c: Color, t: i32) {
    let t = t.min(b.width() / 2).min(b.height() / 2).max(1);
    for edge in [
        BBox::from_coords(b.x1, b.y1, b.x2, b.y1 + t),
        BBox::from_coords(b.x1, b.y2 - t, b.x2, b.y2),
        BBox::from_coords(b.x1, b.y1, b.x1 + t, b.y2),
        BBox::from_coords(b.x2 - t, b.y1, b.x2, b.y2),
    ] {
        fill_rect(img, &edge, c);
    }
}

/// Renders `text` with its top-left corner at (x, y).
pub fn draw_text(img: &mut RgbImage, x: i32, y: i32, text: &str, scale: u32, c: Color) {
    let s = scale as i32;
    for (i, ch) in text.chars().enumerate() {
        let glyph = font8x8::BASIC_FONTS.get(ch).or_else(|| font8x8::BASIC_FONTS.get('?')).unwrap_or([0; 8]);
        let gx = x + i as i32 * 8 * s;
        for (row, bits) in glyph.iter().enumerate() {
            for col in 0..8 {
                if bits & (1 << col) != 0 {
                    let px = gx + col * s;
                    let py = y + row as i32 * s;
                    fill_rect(img, &BBox { x1: px, y1: py, x2: px + s, y2: py + s }, c);
                }
            }
        }
    }
}

fn default_fill(cat: WidgetCategory, checked: bool) -> Option<Color> {
    use WidgetCategory::*;
    Some(match cat {
        StatusBar => [48, 48, 48],
        NavigationBar => [24, 24, 24],
        Button => [25, 118, 210],
        EditText => [255, 255, 255],
        Image => [245, 124, 0],
        Switch | CheckBox if checked => [46, 160, 67],
        Switch | CheckBox => [176, 176, 176],
        _ => [200, 200, 200],
    })
}

impl ElementSpec {
    pub fn text(name: &str, bbox: BBox, label: &str) -> Self {
        ElementSpec {
            name: name.into(),
            category: None,
            bbox,
            label: Some(label.into()),
            label_pos: LabelPos::Inside,
            icon: None,
            fill: None,
            text_color: None,
            checked: false,
        }
    }

    pub fn widget(name: &str, cat: WidgetCategory, bbox: BBox, label: Option<&str>) -> Self {
        ElementSpec { category: Some(cat), label: label.map(String::from), ..Self::text(name, bbox, "") }
    }

    pub fn fill_color(&self) -> Option<Color> {
        self.fill.or_else(|| self.category.and_then(|c| default_fill(c, self.checked)))
    }

    /// The label's box, or `None` for an unlabeled element.
    pub fn label_box(&self, scale: u32) -> Option<BBox> {
        let label = self.label.as_deref().filter(|l| !l.trim().is_empty())?;
        let (mut tw, th) = text_size(label, scale);
        let b = &self.bbox;
        let (x, y) = match (self.category, self.label_pos) {
            (None, _) => {
                tw = tw.min(b.width().max(8) as u32);
                (b.x1, b.y1 + (b.height() - th as i32) / 2)
            }
            (Some(_), LabelPos::Inside) => {
                let pad = (b.height() / 4).clamp(4, 32);
                tw = tw.min((b.width() - 2 * pad).max(8) as u32);
                (b.x1 + pad, b.y1 + (b.height() - th as i32) / 2)
            }
            (Some(_), LabelPos::Below) => (b.x1 + (b.width() - tw as i32) / 2, b.y2 + 2 * scale as i32),
        };
        BBox::new(x, y.max(0), x + tw as i32, y.max(0) + th as i32).ok()
    }

    pub fn draw(&self, img: &mut RgbImage, scale: u32) {
        if self.category.is_some() {
            if let Some(fill) = self.fill_color() {
                fill_rect(img, &self.bbox, fill);
            }
        }
        self.draw_details(img, scale);
    }

    /// Everything except the background fill: outlines, icon glyph, label.
    pub fn draw_details(&self, img: &mut RgbImage, scale: u32) {
        if let Some(cat) = self.category {
            match cat {
                WidgetCategory::EditText | WidgetCategory::CheckBox | WidgetCategory::Spinner => {
                    stroke_rect(img, &self.bbox, [96, 96, 96], 3)
                }
                WidgetCategory::Image if self.icon.is_some() => {
                    let inner = self.bbox.width().min(self.bbox.height()) / 4;
                    if let Ok(b) = BBox::new(self.bbox.x1 + inner, self.bbox.y1 + inner, self.bbox.x2 - inner, self.bbox.y2 - inner) {
                        fill_rect(img, &b, [255, 255, 255]);
                    }
                }
                _ => {}
            }
        }
        if let (Some(label), Some(lb)) = (self.label.as_deref(), self.label_box(scale)) {
            let dark_bg = self
                .fill_color()
                .filter(|_| self.label_pos == LabelPos::Inside && self.category.is_some())
                .is_some_and(|c| (c[0] as u32 * 299 + c[1] as u32 * 587 + c[2] as u32 * 114) / 1000 < 128);
            let color = self.text_color.unwrap_or(if dark_bg { TEXT_LIGHT } else { TEXT_DARK });
            let max_chars = (lb.width() as u32 / (8 * scale)) as usize;
            let shown: String = label.chars().take(max_chars.max(1)).collect();
            draw_text(img, lb.x1, lb.y1, &shown, scale, color);
        }
    }

    /// Widget and text records for this element, with `crop_id` set to the
    /// element name for icons.
    pub fn perception(&self, scale: u32) -> (Option<DetectedWidget>, Option<TextFragment>) {
        let widget = self.category.map(|category| DetectedWidget {
            bbox: self.bbox,
            category,
            confidence: 0.99,
            crop_id: if self.icon.is_some() { self.name.clone() } else { String::new() },
        });
        let text = self.label_box(scale).map(|bbox| TextFragment {
            bbox,
            text: self.label.clone().unwrap_or_default(),
            confidence: 0.99,
        });
        (widget, text)
    }

    /// The ground-truth element box: the widget box, or the text box for
    /// free-standing text.
    pub fn truth_box(&self, scale: u32) -> BBox {
        match self.category {
            Some(_) => self.bbox,
            None => self.label_box(scale).unwrap_or(self.bbox),
        }
    }
}
