//! Natural-language rendering of a screen's blocks for the planner, and a
//! rough token estimate for prompt budgeting.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::blocking::SemanticBlock;
use crate::grouping::UiElement;
use crate::perception::BBox;

pub const EMPTY_SCREEN: &str = "The screen contains no recognized elements.";

/// The planner's world model for one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreenSemantics {
    pub screen: BBox,
    pub blocks: Vec<SemanticBlock>,
    pub elements: BTreeMap<u32, UiElement>,
}

impl ScreenSemantics {
    /// Builds semantics, dropping blocks without elements and index entries
    /// no block references (promoted captions).
    pub fn new(screen: BBox, blocks: Vec<SemanticBlock>, elements: Vec<UiElement>) -> Self {
        let mut blocks: Vec<SemanticBlock> = blocks
            .into_iter()
            .filter(|b| !b.element_ids.is_empty())
            .collect();
        blocks.sort_by_key(|b| (b.bbox.y1, b.bbox.x1, b.bbox.y2, b.bbox.x2));
        let referenced: std::collections::BTreeSet<u32> =
            blocks.iter().flat_map(|b| b.element_ids.iter().copied()).collect();
        let elements = elements
            .into_iter()
            .filter(|e| referenced.contains(&e.id))
            .map(|e| (e.id, e))
            .collect();
        ScreenSemantics { screen, blocks, elements }
    }

    pub fn element(&self, id: u32) -> Option<&UiElement> {
        self.elements.get(&id)
    }

    pub fn block_of(&self, id: u32) -> Option<&SemanticBlock> {
        self.blocks.iter().find(|b| b.element_ids.contains(&id))
    }

    /// Elements in rendering order.
    pub fn ordered_elements(&self) -> Vec<&UiElement> {
        self.blocks
            .iter()
            .flat_map(|b| b.element_ids.iter())
            .filter_map(|id| self.elements.get(id))
            .collect()
    }

    pub fn render(&self) -> String {
        render(self)
    }
}

/// `[id] category 'label'`, the form used inside renderings and reprompts.
pub fn render_element(e: &UiElement) -> String {
    match e.display_name() {
        Some(name) => format!("[{}] {} '{}'", e.id, e.kind, name),
        None => format!("[{}] {}", e.id, e.kind),
    }
}

/// One paragraph per block, top-to-bottom then left-to-right: a header line
/// with the optional caption, then one line per element.
pub fn render(sem: &ScreenSemantics) -> String {
    let mut paragraphs = Vec::new();
    for block in &sem.blocks {
        let ids: Vec<u32> = block
            .element_ids
            .iter()
            .copied()
            .filter(|id| sem.elements.contains_key(id))
            .collect();
        if ids.is_empty() {
            continue;
        }
        let kind = if block.is_tab_bar { "Tab bar" } else { "Section" };
        let mut lines = vec![match &block.caption {
            Some(c) => format!("{kind} \"{c}\":"),
            None => format!("{kind}:"),
        }];
        for id in ids {
            let e = &sem.elements[&id];
            let mut line = render_element(e);
            if block.active_element_id == Some(id) {
                line.push_str(" (currently selected)");
            }
            lines.push(line);
        }
        paragraphs.push(lines.join("\n"));
    }
    if paragraphs.is_empty() {
        return EMPTY_SCREEN.to_string();
    }
    paragraphs.join("\n\n")
}

/// Approximate token count: every whitespace-separated chunk is one token,
/// and a run of trailing punctuation on a chunk counts as one more.
///
/// `"Tap the 'Save' button."` splits as `Tap | the | 'Save | ' | button | .`.
pub fn estimate_tokens(text: &str) -> usize {
    text.split_whitespace()
        .map(|chunk| {
            let trimmed = chunk.trim_end_matches(|c: char| c.is_ascii_punctuation());
            if trimmed.is_empty() || trimmed.len() == chunk.len() {
                1
            } else {
                2
            }
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grouping::{ElementKind, ElementSource, Provenance};
    use crate::perception::WidgetCategory;

    fn element(id: u32, b: BBox, kind: ElementKind, label: &str) -> UiElement {
        UiElement {
            id,
            bbox: b,
            kind,
            label: Some(label.into()),
            function: None,
            source: ElementSource::Matched,
            provenance: Provenance::default(),
            crop_id: None,
        }
    }

    fn screen() -> BBox {
        BBox::from_coords(0, 0, 1080, 2244)
    }

    #[test]
    fn empty_screen_sentinel() {
        let sem = ScreenSemantics::new(screen(), vec![], vec![]);
        assert_eq!(render(&sem), EMPTY_SCREEN);
    }

    #[test]
    fn settings_block_golden() {
        let e = element(1, BBox::from_coords(40, 300, 1040, 400), ElementKind::Widget(WidgetCategory::Switch), "WLAN");
        let block = SemanticBlock {
            caption: Some("Settings".into()),
            element_ids: vec![1],
            ..SemanticBlock::new(BBox::from_coords(0, 200, 1080, 800))
        };
        let sem = ScreenSemantics::new(screen(), vec![block], vec![e]);
        assert_eq!(render(&sem), "Section \"Settings\":\n[1] switch 'WLAN'");
    }

    #[test]
    fn active_tab_annotation_and_order() {
        let tabs: Vec<UiElement> = (0..3)
            .map(|i| {
                let x = 40 + i * 350;
                element(i as u32 + 2, BBox::from_coords(x, 2000, x + 200, 2100), ElementKind::Widget(WidgetCategory::Button), ["Home", "Search", "Library"][i as usize])
            })
            .collect();
        let title = element(1, BBox::from_coords(40, 100, 400, 150), ElementKind::Text, "Music");
        let bar = SemanticBlock {
            element_ids: vec![2, 3, 4],
            is_tab_bar: true,
            active_element_id: Some(4),
            ..SemanticBlock::new(BBox::from_coords(0, 1950, 1080, 2150))
        };
        let top = SemanticBlock { element_ids: vec![1], ..SemanticBlock::new(BBox::from_coords(0, 0, 1080, 1950)) };
        let mut all = tabs.clone();
        all.push(title);
        let sem = ScreenSemantics::new(screen(), vec![bar, top], all);
        let text = render(&sem);
        assert!(text.starts_with("Section:\n[1] text 'Music'"));
        assert!(text.ends_with("[4] button 'Library' (currently selected)"));
        assert_eq!(text, render(&sem));
        for id in 1..=4 {
            assert_eq!(text.matches(&format!("[{id}]")).count(), 1);
        }
    }

    #[test]
    fn token_estimates() {
        assert_eq!(estimate_tokens(""), 0);
        assert_eq!(estimate_tokens("Tap SAVE button"), 3);
        assert_eq!(estimate_tokens("Tap the 'Save' button."), 6);
        assert_eq!(estimate_tokens("..."), 1);
    }
}
