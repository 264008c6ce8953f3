//! Screenshot to screen semantics: perception sources and the pipeline that
//! fuses, groups and captions their output.

use std::collections::BTreeMap;
use std::path::PathBuf;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::blocking::{
    assign_elements_to_blocks, detect_active_tab, detect_caption, divide_blocks, is_tab_bar, BlockingParams,
    DebugDump, LineSegment,
};
use crate::grouping::{interpret_unmatched, match_text_to_widgets, GroupingError, IconLexicon};
use crate::perception::{filter_text, iou, parse_perception, BBox, Perception, PerceptionError, SCHEMA_VERSION};
use crate::serialize::ScreenSemantics;

#[derive(Debug, thiserror::Error)]
pub enum UnderstandError {
    #[error("perception unavailable: {0}")]
    Unavailable(String),
    #[error(transparent)]
    Perception(#[from] PerceptionError),
    #[error(transparent)]
    Grouping(#[from] GroupingError),
    #[error("perception is for a {pw}x{ph} screen but the image is {iw}x{ih}")]
    SizeMismatch { pw: u32, ph: u32, iw: u32, ih: u32 },
}

/// What a perception provider reports for one screenshot. Ground-truth
/// providers may also supply the block partition, skipping pixel division.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub perception: Perception,
    pub blocks: Option<Vec<BBox>>,
}

impl From<Perception> for Observation {
    fn from(perception: Perception) -> Self {
        Observation { perception, blocks: None }
    }
}

pub trait PerceptionSource {
    fn observe(&mut self, image: &RgbImage) -> Result<Observation, UnderstandError>;
}

/// Replays cached perception documents, one per call, cycling on the last.
#[derive(Debug, Clone)]
pub struct FilePerception {
    docs: Vec<Perception>,
    next: usize,
}

impl FilePerception {
    pub fn new(docs: Vec<Perception>) -> Self {
        FilePerception { docs, next: 0 }
    }

    pub fn load(paths: &[PathBuf]) -> Result<Self, UnderstandError> {
        let docs = paths
            .iter()
            .map(|p| {
                let bytes =
                    std::fs::read(p).map_err(|e| UnderstandError::Unavailable(format!("{}: {e}", p.display())))?;
                Ok(parse_perception(&bytes, SCHEMA_VERSION)?)
            })
            .collect::<Result<Vec<_>, UnderstandError>>()?;
        Ok(FilePerception::new(docs))
    }
}

impl PerceptionSource for FilePerception {
    fn observe(&mut self, _image: &RgbImage) -> Result<Observation, UnderstandError> {
        let doc = self
            .docs
            .get(self.next.min(self.docs.len().saturating_sub(1)))
            .ok_or_else(|| UnderstandError::Unavailable("no cached perception".into()))?;
        self.next += 1;
        Ok(doc.clone().into())
    }
}

/// Tunables of the understanding pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UnderstandParams {
    /// OCR fragments must strictly exceed this confidence.
    pub text_threshold: f64,
    /// Text-to-widget matching distance as a fraction of screen width.
    pub max_dist_frac: f64,
    /// Blocks overlapping a single element at least this much are treated as
    /// that element's own outline, not a section.
    pub element_outline_iou: f64,
    pub blocking: BlockingParams,
}

impl Default for UnderstandParams {
    fn default() -> Self {
        UnderstandParams {
            text_threshold: 0.95,
            max_dist_frac: 0.04,
            element_outline_iou: 0.7,
            blocking: BlockingParams::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Understanding {
    pub semantics: ScreenSemantics,
    pub segments: Vec<LineSegment>,
}

impl Understanding {
    pub fn debug_dump(&self) -> DebugDump {
        DebugDump {
            segments: self.segments.clone(),
            blocks: self.semantics.blocks.clone(),
            captions: self.semantics.blocks.iter().filter_map(|b| b.caption.clone()).collect(),
            active_tabs: self.semantics.blocks.iter().filter_map(|b| b.active_element_id).collect(),
        }
    }
}

/// Runs grouping, icon interpretation, block division, captioning and
/// active-tab detection over one observation of `image`.
pub fn understand(
    obs: &Observation,
    image: &RgbImage,
    params: &UnderstandParams,
    lexicon: Option<&IconLexicon>,
) -> Result<Understanding, UnderstandError> {
    let p = &obs.perception;
    if (p.screen.w, p.screen.h) != image.dimensions() {
        return Err(UnderstandError::SizeMismatch {
            pw: p.screen.w,
            ph: p.screen.h,
            iw: image.width(),
            ih: image.height(),
        });
    }
    let screen = BBox::from_coords(0, 0, p.screen.w as i32, p.screen.h as i32);
    let texts = filter_text(&p.texts, params.text_threshold);
    let mut elements = match_text_to_widgets(&p.widgets, &texts, params.max_dist_frac * p.screen.w as f64);
    if let Some(lex) = lexicon {
        interpret_unmatched(&mut elements, &p.embeddings, lex)?;
    }

    let (segments, raw_blocks) = match &obs.blocks {
        Some(b) => (Vec::new(), b.clone()),
        None => divide_blocks(image, &params.blocking),
    };
    let blocks: Vec<BBox> = raw_blocks
        .into_iter()
        .filter(|b| {
            !elements
                .iter()
                .any(|e| e.bbox.contains(b) || iou(b, &e.bbox) >= params.element_outline_iou)
        })
        .collect();

    let by_id: BTreeMap<u32, _> = elements.iter().map(|e| (e.id, e.clone())).collect();
    let mut sem_blocks = assign_elements_to_blocks(&elements, &blocks, &screen);
    for b in sem_blocks.iter_mut() {
        detect_caption(b, &by_id);
        if is_tab_bar(b, &by_id, &screen, &params.blocking.tab_bar) {
            b.is_tab_bar = true;
            b.active_element_id =
                detect_active_tab(b, &by_id, image, &params.blocking.tab_bar).expect("block flagged as tab bar");
        }
    }
    Ok(Understanding { semantics: ScreenSemantics::new(screen, sem_blocks, elements), segments })
}

#[cfg(feature = "http")]
pub use sidecar::SidecarClient;

#[cfg(feature = "http")]
mod sidecar {
    use std::io::Cursor;
    use std::time::Duration;

    use image::RgbImage;
    use serde::Deserialize;

    use super::{Observation, PerceptionSource, UnderstandError};
    use crate::perception::{parse_perception, Embedding, Perception, SCHEMA_VERSION};

    /// Client for the inference sidecar's `/detect`, `/embed` and `/health`.
    #[derive(Debug)]
    pub struct SidecarClient {
        base: String,
        agent: ureq::Agent,
    }

    #[derive(Deserialize)]
    struct EmbedReply {
        v: Vec<f64>,
    }

    fn unavailable(e: impl std::fmt::Display) -> UnderstandError {
        UnderstandError::Unavailable(e.to_string())
    }

    impl SidecarClient {
        pub fn new(base_url: &str, timeout: Duration) -> Self {
            let agent = ureq::Agent::config_builder()
                .timeout_global(Some(timeout))
                .build()
                .into();
            SidecarClient { base: base_url.trim_end_matches('/').to_string(), agent }
        }

        pub fn detect(&self, png: &[u8]) -> Result<Perception, UnderstandError> {
            let mut resp = self
                .agent
                .post(&format!("{}/detect", self.base))
                .header("Content-Type", "image/png")
                .send(png)
                .map_err(unavailable)?;
            let body = resp.body_mut().read_to_vec().map_err(unavailable)?;
            Ok(parse_perception(&body, SCHEMA_VERSION)?)
        }

        pub fn embed_text(&self, text: &str) -> Result<Embedding, UnderstandError> {
            let mut resp = self
                .agent
                .post(&format!("{}/embed", self.base))
                .send_json(serde_json::json!({ "text": text }))
                .map_err(unavailable)?;
            let reply: EmbedReply = resp.body_mut().read_json().map_err(unavailable)?;
            Ok(Embedding(reply.v))
        }

        pub fn health(&self) -> Result<serde_json::Value, UnderstandError> {
            let mut resp = self.agent.get(&format!("{}/health", self.base)).call().map_err(unavailable)?;
            resp.body_mut().read_json().map_err(unavailable)
        }
    }

    impl PerceptionSource for SidecarClient {
        fn observe(&mut self, image: &RgbImage) -> Result<Observation, UnderstandError> {
            let mut png = Vec::new();
            image
                .write_to(&mut Cursor::new(&mut png), image::ImageFormat::Png)
                .map_err(unavailable)?;
            Ok(self.detect(&png)?.into())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::perception::{DetectedWidget, ScreenSize, TextFragment, WidgetCategory};

    fn perception() -> Perception {
        Perception {
            screen: ScreenSize { w: 400, h: 600 },
            widgets: vec![DetectedWidget {
                bbox: BBox::from_coords(20, 120, 380, 180),
                category: WidgetCategory::Switch,
                confidence: 0.9,
                crop_id: String::new(),
            }],
            texts: vec![
                TextFragment { bbox: BBox::from_coords(20, 60, 200, 90), text: "Settings".into(), confidence: 0.99 },
                TextFragment { bbox: BBox::from_coords(30, 130, 120, 170), text: "WLAN".into(), confidence: 0.97 },
                TextFragment { bbox: BBox::from_coords(30, 300, 120, 330), text: "blurry".into(), confidence: 0.5 },
            ],
            embeddings: BTreeMap::new(),
        }
    }

    #[test]
    fn ground_truth_blocks_give_captioned_section() {
        let obs = Observation { perception: perception(), blocks: Some(vec![BBox::from_coords(0, 40, 400, 250)]) };
        let img = RgbImage::new(400, 600);
        let u = understand(&obs, &img, &UnderstandParams::default(), None).unwrap();
        assert_eq!(u.semantics.render(), "Section \"Settings\":\n[2] switch 'WLAN'");
        assert_eq!(u.debug_dump().captions, vec!["Settings".to_string()]);
    }

    #[test]
    fn size_mismatch_is_reported() {
        let obs: Observation = perception().into();
        let err = understand(&obs, &RgbImage::new(10, 10), &UnderstandParams::default(), None).unwrap_err();
        assert!(matches!(err, UnderstandError::SizeMismatch { .. }));
    }
}
