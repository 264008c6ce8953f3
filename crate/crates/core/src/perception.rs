//! Perception data contract: detected widgets, OCR text fragments and icon
//! embeddings, as produced by any detection provider.
//!
//! The wire format is a single JSON document:
//!
//! ```json
//! {"schema": "1", "screen": {"w": 1080, "h": 2244},
//!  "widgets": [{"box": [x1, y1, x2, y2], "category": "button", "conf": 0.9, "crop_id": "w0"}],
//!  "texts": [{"box": [x1, y1, x2, y2], "text": "Save", "conf": 0.97}],
//!  "embeddings": {"w0": [0.1, 0.2]}}
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Current version of the perception wire schema.
pub const SCHEMA_VERSION: &str = "1";

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum PerceptionError {
    #[error("malformed perception document: {0}")]
    Schema(String),
    #[error("unknown widget category {0:?}")]
    UnknownCategory(String),
    #[error("invalid geometry: {0}")]
    Geometry(String),
}

/// Axis-aligned box in screenshot pixels, origin top-left.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "[i32; 4]", into = "[i32; 4]")]
pub struct BBox {
    pub x1: i32,
    pub y1: i32,
    pub x2: i32,
    pub y2: i32,
}

impl BBox {
    pub fn new(x1: i32, y1: i32, x2: i32, y2: i32) -> Result<Self, PerceptionError> {
        if x1 < 0 || y1 < 0 {
            return Err(PerceptionError::Geometry(format!(
                "negative coordinate in ({x1},{y1},{x2},{y2})"
            )));
        }
        if x1 >= x2 || y1 >= y2 {
            return Err(PerceptionError::Geometry(format!(
                "degenerate box ({x1},{y1},{x2},{y2})"
            )));
        }
        Ok(BBox { x1, y1, x2, y2 })
    }

    /// Constructor for callers that already hold valid coordinates.
    ///
    /// Panics on an invalid box.
    pub fn from_coords(x1: i32, y1: i32, x2: i32, y2: i32) -> Self {
        Self::new(x1, y1, x2, y2).expect("valid bbox")
    }

    pub fn width(&self) -> i32 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> i32 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> i64 {
        self.width() as i64 * self.height() as i64
    }

    /// Integer center, rounded toward the top-left.
    pub fn center(&self) -> (i32, i32) {
        ((self.x1 + self.x2) / 2, (self.y1 + self.y2) / 2)
    }

    pub fn center_f(&self) -> (f64, f64) {
        (
            (self.x1 + self.x2) as f64 / 2.0,
            (self.y1 + self.y2) as f64 / 2.0,
        )
    }

    /// Half-open containment test: `[x1, x2) x [y1, y2)`.
    pub fn contains_point(&self, x: i32, y: i32) -> bool {
        x >= self.x1 && x < self.x2 && y >= self.y1 && y < self.y2
    }

    pub fn contains_point_f(&self, x: f64, y: f64) -> bool {
        x >= self.x1 as f64 && x < self.x2 as f64 && y >= self.y1 as f64 && y < self.y2 as f64
    }

    pub fn contains(&self, other: &BBox) -> bool {
        self.x1 <= other.x1 && self.y1 <= other.y1 && self.x2 >= other.x2 && self.y2 >= other.y2
    }

    pub fn intersection(&self, other: &BBox) -> Option<BBox> {
        let x1 = self.x1.max(other.x1);
        let y1 = self.y1.max(other.y1);
        let x2 = self.x2.min(other.x2);
        let y2 = self.y2.min(other.y2);
        (x1 < x2 && y1 < y2).then_some(BBox { x1, y1, x2, y2 })
    }

    pub fn union(&self, other: &BBox) -> BBox {
        BBox {
            x1: self.x1.min(other.x1),
            y1: self.y1.min(other.y1),
            x2: self.x2.max(other.x2),
            y2: self.y2.max(other.y2),
        }
    }

    /// Shift by `(dx, dy)`. The result must stay in the non-negative quadrant.
    pub fn translate(&self, dx: i32, dy: i32) -> Result<BBox, PerceptionError> {
        BBox::new(self.x1 + dx, self.y1 + dy, self.x2 + dx, self.y2 + dy)
    }
}

impl TryFrom<[i32; 4]> for BBox {
    type Error = PerceptionError;

    fn try_from(v: [i32; 4]) -> Result<Self, Self::Error> {
        BBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BBox> for [i32; 4] {
    fn from(b: BBox) -> Self {
        [b.x1, b.y1, b.x2, b.y2]
    }
}

impl fmt::Display for BBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})-({},{})", self.x1, self.y1, self.x2, self.y2)
    }
}

/// Intersection over union of two boxes.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    match a.intersection(b) {
        None => 0.0,
        Some(i) => {
            let inter = i.area() as f64;
            inter / (a.area() as f64 + b.area() as f64 - inter)
        }
    }
}

/// The twelve widget classes a detector may report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum WidgetCategory {
    StatusBar,
    NavigationBar,
    Button,
    EditText,
    Image,
    PageIndicator,
    SeekBar,
    RatingBar,
    CheckBox,
    RadioGroup,
    Spinner,
    Switch,
}

impl WidgetCategory {
    pub const ALL: [WidgetCategory; 12] = [
        WidgetCategory::StatusBar,
        WidgetCategory::NavigationBar,
        WidgetCategory::Button,
        WidgetCategory::EditText,
        WidgetCategory::Image,
        WidgetCategory::PageIndicator,
        WidgetCategory::SeekBar,
        WidgetCategory::RatingBar,
        WidgetCategory::CheckBox,
        WidgetCategory::RadioGroup,
        WidgetCategory::Spinner,
        WidgetCategory::Switch,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            WidgetCategory::StatusBar => "status bar",
            WidgetCategory::NavigationBar => "navigation bar",
            WidgetCategory::Button => "button",
            WidgetCategory::EditText => "edit text",
            WidgetCategory::Image => "image",
            WidgetCategory::PageIndicator => "page indicator",
            WidgetCategory::SeekBar => "seek bar",
            WidgetCategory::RatingBar => "rating bar",
            WidgetCategory::CheckBox => "check box",
            WidgetCategory::RadioGroup => "radio group",
            WidgetCategory::Spinner => "spinner",
            WidgetCategory::Switch => "switch",
        }
    }
}

impl fmt::Display for WidgetCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for WidgetCategory {
    type Err = PerceptionError;

    /// Accepts the canonical names plus `snake_case` / `CamelCase` spellings.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm: String = s
            .trim()
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .map(|c| c.to_ascii_lowercase())
            .collect();
        WidgetCategory::ALL
            .iter()
            .copied()
            .find(|c| c.as_str().replace(' ', "") == norm)
            .ok_or_else(|| PerceptionError::UnknownCategory(s.to_string()))
    }
}

impl Serialize for WidgetCategory {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for WidgetCategory {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectedWidget {
    pub bbox: BBox,
    pub category: WidgetCategory,
    pub confidence: f64,
    /// Key into [`Perception::embeddings`] and the provider's crop store.
    pub crop_id: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TextFragment {
    pub bbox: BBox,
    pub text: String,
    pub confidence: f64,
}

/// Fixed-length real vector from the joint image/text embedding space.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(pub Vec<f64>);

impl Embedding {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn dot(&self, other: &Embedding) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    /// Returns a unit-norm copy; the zero vector is returned unchanged.
    pub fn normalized(&self) -> Embedding {
        let n = self.norm();
        if n == 0.0 {
            return self.clone();
        }
        Embedding(self.0.iter().map(|v| v / n).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScreenSize {
    pub w: u32,
    pub h: u32,
}

/// One validated perception record set for a (possibly stitched) screenshot.
#[derive(Debug, Clone, PartialEq)]
pub struct Perception {
    pub screen: ScreenSize,
    pub widgets: Vec<DetectedWidget>,
    pub texts: Vec<TextFragment>,
    pub embeddings: BTreeMap<String, Embedding>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireDoc {
    schema: String,
    screen: ScreenSize,
    #[serde(default)]
    widgets: Vec<WireWidget>,
    #[serde(default)]
    texts: Vec<WireText>,
    #[serde(default)]
    embeddings: BTreeMap<String, Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireWidget {
    #[serde(rename = "box")]
    bbox: [i64; 4],
    category: String,
    conf: f64,
    #[serde(default)]
    crop_id: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireText {
    #[serde(rename = "box")]
    bbox: [i64; 4],
    text: String,
    conf: f64,
}

fn parse_box(raw: [i64; 4], screen: ScreenSize) -> Result<BBox, PerceptionError> {
    if raw.iter().any(|v| *v > i32::MAX as i64 || *v < i32::MIN as i64) {
        return Err(PerceptionError::Geometry(format!("coordinate overflow in {raw:?}")));
    }
    let b = BBox::new(raw[0] as i32, raw[1] as i32, raw[2] as i32, raw[3] as i32)?;
    if b.x2 as i64 > screen.w as i64 || b.y2 as i64 > screen.h as i64 {
        return Err(PerceptionError::Geometry(format!(
            "box {b} outside screen {}x{}",
            screen.w, screen.h
        )));
    }
    Ok(b)
}

fn check_conf(conf: f64) -> Result<f64, PerceptionError> {
    if !(0.0..=1.0).contains(&conf) {
        return Err(PerceptionError::Schema(format!("confidence {conf} outside [0,1]")));
    }
    Ok(conf)
}

/// Parses and validates a perception document.
///
/// Uses the fields' names only; key order is irrelevant.
pub fn parse_perception(payload: &[u8], schema_version: &str) -> Result<Perception, PerceptionError> {
    let doc: WireDoc =
        serde_json::from_slice(payload).map_err(|e| PerceptionError::Schema(e.to_string()))?;
    if doc.schema != schema_version {
        return Err(PerceptionError::Schema(format!(
            "schema {:?}, expected {schema_version:?}",
            doc.schema
        )));
    }
    if doc.screen.w == 0 || doc.screen.h == 0 {
        return Err(PerceptionError::Geometry("empty screen".into()));
    }
    let widgets = doc
        .widgets
        .into_iter()
        .map(|w| {
            Ok(DetectedWidget {
                category: w.category.parse()?,
                bbox: parse_box(w.bbox, doc.screen)?,
                confidence: check_conf(w.conf)?,
                crop_id: w.crop_id,
            })
        })
        .collect::<Result<Vec<_>, PerceptionError>>()?;
    let texts = doc
        .texts
        .into_iter()
        .map(|t| {
            if t.text.trim().is_empty() {
                return Err(PerceptionError::Schema("empty text fragment".into()));
            }
            Ok(TextFragment {
                bbox: parse_box(t.bbox, doc.screen)?,
                text: t.text,
                confidence: check_conf(t.conf)?,
            })
        })
        .collect::<Result<Vec<_>, PerceptionError>>()?;
    let mut embeddings = BTreeMap::new();
    let mut dim = None;
    for (id, v) in doc.embeddings {
        if v.is_empty() || v.iter().any(|x| !x.is_finite()) {
            return Err(PerceptionError::Schema(format!("invalid embedding for {id:?}")));
        }
        match dim {
            None => dim = Some(v.len()),
            Some(d) if d != v.len() => {
                return Err(PerceptionError::Schema(format!(
                    "embedding {id:?} has dim {}, expected {d}",
                    v.len()
                )))
            }
            _ => {}
        }
        embeddings.insert(id, Embedding(v));
    }
    Ok(Perception {
        screen: doc.screen,
        widgets,
        texts,
        embeddings,
    })
}

impl Perception {
    pub fn empty(screen: ScreenSize) -> Self {
        Perception {
            screen,
            widgets: Vec::new(),
            texts: Vec::new(),
            embeddings: BTreeMap::new(),
        }
    }

    pub fn to_json(&self) -> String {
        let doc = WireDoc {
            schema: SCHEMA_VERSION.to_string(),
            screen: self.screen,
            widgets: self
                .widgets
                .iter()
                .map(|w| WireWidget {
                    bbox: box_to_wire(w.bbox),
                    category: w.category.as_str().to_string(),
                    conf: w.confidence,
                    crop_id: w.crop_id.clone(),
                })
                .collect(),
            texts: self
                .texts
                .iter()
                .map(|t| WireText {
                    bbox: box_to_wire(t.bbox),
                    text: t.text.clone(),
                    conf: t.confidence,
                })
                .collect(),
            embeddings: self
                .embeddings
                .iter()
                .map(|(k, v)| (k.clone(), v.0.clone()))
                .collect(),
        };
        serde_json::to_string_pretty(&doc).expect("perception serializes")
    }
}

fn box_to_wire(b: BBox) -> [i64; 4] {
    [b.x1 as i64, b.y1 as i64, b.x2 as i64, b.y2 as i64]
}

/// Keeps fragments whose confidence strictly exceeds `threshold`, in order.
pub fn filter_text(fragments: &[TextFragment], threshold: f64) -> Vec<TextFragment> {
    fragments
        .iter()
        .filter(|f| f.confidence > threshold)
        .cloned()
        .collect()
}
