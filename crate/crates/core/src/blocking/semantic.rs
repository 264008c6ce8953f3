use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::BlockingError;
use crate::grouping::{ElementKind, ElementSource, UiElement};
use crate::perception::{BBox, WidgetCategory};

/// A rectangular group of elements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticBlock {
    pub bbox: BBox,
    pub caption: Option<String>,
    pub element_ids: Vec<u32>,
    pub is_tab_bar: bool,
    pub active_element_id: Option<u32>,
}

impl SemanticBlock {
    pub fn new(bbox: BBox) -> Self {
        SemanticBlock {
            bbox,
            caption: None,
            element_ids: Vec::new(),
            is_tab_bar: false,
            active_element_id: None,
        }
    }
}

fn contains_closed(b: &BBox, x: f64, y: f64) -> bool {
    x >= b.x1 as f64 && x <= b.x2 as f64 && y >= b.y1 as f64 && y <= b.y2 as f64
}

/// Puts each element in the smallest block containing its center. Centers on
/// a shared edge go to the upper (then left) block; elements outside every
/// block land in a whole-screen fallback block. Only non-empty blocks are
/// returned, ordered top-to-bottom then left-to-right.
pub fn assign_elements_to_blocks(elements: &[UiElement], blocks: &[BBox], screen: &BBox) -> Vec<SemanticBlock> {
    let mut order: Vec<usize> = (0..blocks.len()).collect();
    order.sort_by_key(|&i| (blocks[i].area(), blocks[i].y1, blocks[i].x1, i));
    let mut buckets: BTreeMap<usize, Vec<&UiElement>> = BTreeMap::new();
    let mut fallback: Vec<&UiElement> = Vec::new();
    for e in elements {
        let (cx, cy) = e.bbox.center_f();
        match order.iter().find(|&&i| contains_closed(&blocks[i], cx, cy)) {
            Some(&i) => buckets.entry(i).or_default().push(e),
            None => fallback.push(e),
        }
    }
    let mut out: Vec<SemanticBlock> = buckets
        .into_iter()
        .map(|(i, els)| block_with(blocks[i], els))
        .collect();
    if !fallback.is_empty() {
        match out.iter_mut().find(|b| b.bbox == *screen) {
            Some(b) => {
                b.element_ids.extend(fallback.iter().map(|e| e.id));
                let mut merged: Vec<&UiElement> = elements
                    .iter()
                    .filter(|e| b.element_ids.contains(&e.id))
                    .collect();
                sort_reading(&mut merged);
                b.element_ids = merged.iter().map(|e| e.id).collect();
            }
            None => out.push(block_with(*screen, fallback)),
        }
    }
    out.sort_by_key(|b| (b.bbox.y1, b.bbox.x1, b.bbox.y2, b.bbox.x2));
    out
}

fn sort_reading(els: &mut [&UiElement]) {
    els.sort_by_key(|e| (e.bbox.y1, e.bbox.x1, e.id));
}

fn block_with(bbox: BBox, mut els: Vec<&UiElement>) -> SemanticBlock {
    sort_reading(&mut els);
    SemanticBlock {
        element_ids: els.iter().map(|e| e.id).collect(),
        ..SemanticBlock::new(bbox)
    }
}

/// Promotes a left- or top-justified text in the top fifth of the block,
/// with no widget beside it, to the block caption. The caption element is
/// removed from `element_ids`.
pub fn detect_caption(block: &mut SemanticBlock, elements_by_id: &BTreeMap<u32, UiElement>) -> Option<String> {
    let members: Vec<&UiElement> = block
        .element_ids
        .iter()
        .filter_map(|id| elements_by_id.get(id))
        .collect();
    if members.len() < 2 {
        return None;
    }
    let strip_bottom = block.bbox.y1 as f64 + 0.2 * block.bbox.height() as f64;
    let left_tol = 0.05 * block.bbox.width() as f64;

    let mut candidates: Vec<&UiElement> = members
        .iter()
        .copied()
        .filter(|e| e.kind == ElementKind::Text && e.source == ElementSource::TextOnly)
        .filter(|e| e.bbox.center_f().1 <= strip_bottom)
        .filter(|t| {
            let others = members.iter().filter(|o| o.id != t.id);
            let min_x = others.clone().map(|o| o.bbox.x1).min().unwrap_or(t.bbox.x1);
            let min_y = others.clone().map(|o| o.bbox.y1).min().unwrap_or(t.bbox.y2);
            let left_justified = (t.bbox.x1 as f64) <= min_x as f64 + left_tol;
            let top_justified = t.bbox.y2 <= min_y;
            let beside_widget = others.clone().any(|o| {
                matches!(o.kind, ElementKind::Widget(_))
                    && o.bbox.y1 < t.bbox.y2
                    && t.bbox.y1 < o.bbox.y2
            });
            (left_justified || top_justified) && !beside_widget
        })
        .collect();
    candidates.sort_by_key(|e| (e.bbox.y1, e.bbox.x1));
    let chosen = candidates.first()?;
    let caption = chosen.label.clone()?;
    block.element_ids.retain(|id| *id != chosen.id);
    block.caption = Some(caption.clone());
    Some(caption)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TabBarParams {
    /// The block must reach into this bottom fraction of the screen.
    pub bottom_frac: f64,
    pub min_width_frac: f64,
    pub min_items: usize,
    pub max_items: usize,
    /// Allowed deviation of each center gap from the mean gap, as a fraction.
    pub spacing_tolerance: f64,
    pub hue_bins: usize,
    /// Minimum mean L1 histogram distance for the active element.
    pub separation: f64,
    pub min_saturation: f64,
    pub min_value: f64,
}

impl Default for TabBarParams {
    fn default() -> Self {
        TabBarParams {
            bottom_frac: 0.15,
            min_width_frac: 0.8,
            min_items: 3,
            max_items: 6,
            spacing_tolerance: 0.2,
            hue_bins: 32,
            separation: 0.25,
            min_saturation: 0.2,
            min_value: 0.2,
        }
    }
}

fn tab_items<'a>(block: &SemanticBlock, elements_by_id: &'a BTreeMap<u32, UiElement>) -> Vec<&'a UiElement> {
    block
        .element_ids
        .iter()
        .filter_map(|id| elements_by_id.get(id))
        .filter(|e| {
            !matches!(
                e.kind,
                ElementKind::Widget(WidgetCategory::NavigationBar | WidgetCategory::StatusBar)
            )
        })
        .collect()
}

/// Bottom-anchored, nearly full-width block holding a few evenly spaced items.
pub fn is_tab_bar(
    block: &SemanticBlock,
    elements_by_id: &BTreeMap<u32, UiElement>,
    screen: &BBox,
    params: &TabBarParams,
) -> bool {
    let sh = screen.height() as f64;
    if (block.bbox.y2 as f64) < screen.y2 as f64 - params.bottom_frac * sh {
        return false;
    }
    if (block.bbox.width() as f64) < params.min_width_frac * screen.width() as f64 {
        return false;
    }
    let mut items = tab_items(block, elements_by_id);
    if items.len() < params.min_items || items.len() > params.max_items {
        return false;
    }
    items.sort_by_key(|e| e.bbox.x1);
    let centers: Vec<(f64, f64)> = items.iter().map(|e| e.bbox.center_f()).collect();
    let mean_h = items.iter().map(|e| e.bbox.height() as f64).sum::<f64>() / items.len() as f64;
    let mean_cy = centers.iter().map(|c| c.1).sum::<f64>() / centers.len() as f64;
    if centers.iter().any(|c| (c.1 - mean_cy).abs() > 0.5 * mean_h) {
        return false;
    }
    let gaps: Vec<f64> = centers.windows(2).map(|p| p[1].0 - p[0].0).collect();
    let mean_gap = gaps.iter().sum::<f64>() / gaps.len() as f64;
    mean_gap > 0.0
        && gaps
            .iter()
            .all(|g| (g - mean_gap).abs() <= params.spacing_tolerance * mean_gap)
}

fn rgb_to_hsv(r: u8, g: u8, b: u8) -> (f64, f64, f64) {
    let (r, g, b) = (r as f64 / 255.0, g as f64 / 255.0, b as f64 / 255.0);
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    let h = if d == 0.0 {
        0.0
    } else if max == r {
        60.0 * ((g - b) / d).rem_euclid(6.0)
    } else if max == g {
        60.0 * ((b - r) / d + 2.0)
    } else {
        60.0 * ((r - g) / d + 4.0)
    };
    let s = if max == 0.0 { 0.0 } else { d / max };
    (h, s, max)
}

/// Normalized hue histogram over an element's chromatic pixels. Pixels below
/// the saturation or value floor have no meaningful hue and are skipped; an
/// all-gray region yields the zero vector.
pub fn hue_histogram(img: &image::RgbImage, region: &BBox, params: &TabBarParams) -> Vec<f64> {
    let bins = params.hue_bins.max(1);
    let mut hist = vec![0f64; bins];
    let x2 = (region.x2 as u32).min(img.width());
    let y2 = (region.y2 as u32).min(img.height());
    let mut n = 0usize;
    for y in region.y1 as u32..y2 {
        for x in region.x1 as u32..x2 {
            let [r, g, b] = img.get_pixel(x, y).0;
            let (h, s, v) = rgb_to_hsv(r, g, b);
            if s < params.min_saturation || v < params.min_value {
                continue;
            }
            let bin = ((h / 360.0 * bins as f64) as usize).min(bins - 1);
            hist[bin] += 1.0;
            n += 1;
        }
    }
    if n > 0 {
        hist.iter_mut().for_each(|v| *v /= n as f64);
    }
    hist
}

/// Finds the tab whose hue distribution differs most from the others.
///
/// Each element's mean L1 distance to the rest is computed; the maximum wins
/// if it clears the separation threshold and is unique. Two-element bars are
/// symmetric and never yield a winner.
pub fn detect_active_tab(
    block: &SemanticBlock,
    elements_by_id: &BTreeMap<u32, UiElement>,
    img: &image::RgbImage,
    params: &TabBarParams,
) -> Result<Option<u32>, BlockingError> {
    if !block.is_tab_bar {
        return Err(BlockingError::NotTabBar);
    }
    let items = tab_items(block, elements_by_id);
    if items.len() < 3 {
        return Ok(None);
    }
    let hists: Vec<Vec<f64>> = items
        .iter()
        .map(|e| hue_histogram(img, &e.bbox, params))
        .collect();
    let l1 = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>();
    let means: Vec<f64> = (0..items.len())
        .map(|i| {
            (0..items.len())
                .filter(|&j| j != i)
                .map(|j| l1(&hists[i], &hists[j]))
                .sum::<f64>()
                / (items.len() - 1) as f64
        })
        .collect();
    let (best, best_v) = means
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
    let runner_up = means
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != best)
        .map(|(_, v)| *v)
        .fold(f64::NEG_INFINITY, f64::max);
    if best_v > params.separation && best_v - runner_up > 1e-9 {
        Ok(Some(items[best].id))
    } else {
        Ok(None)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grouping::Provenance;
    use image::{Rgb, RgbImage};

    fn el(id: u32, b: BBox, kind: ElementKind, label: Option<&str>) -> UiElement {
        let source = match (kind, label) {
            (ElementKind::Text, _) => ElementSource::TextOnly,
            (_, Some(_)) => ElementSource::Matched,
            _ => ElementSource::Unlabeled,
        };
        UiElement {
            id,
            bbox: b,
            kind,
            label: label.map(String::from),
            function: None,
            source,
            provenance: Provenance::default(),
            crop_id: None,
        }
    }

    fn index(els: &[UiElement]) -> BTreeMap<u32, UiElement> {
        els.iter().map(|e| (e.id, e.clone())).collect()
    }

    const BTN: ElementKind = ElementKind::Widget(WidgetCategory::Button);

    #[test]
    fn single_block_takes_everything() {
        let screen = BBox::from_coords(0, 0, 100, 100);
        let els = [
            el(1, BBox::from_coords(0, 0, 10, 10), BTN, None),
            el(2, BBox::from_coords(50, 50, 60, 60), BTN, None),
        ];
        let blocks = assign_elements_to_blocks(&els, &[screen], &screen);
        assert_eq!(blocks.len(), 1);
        assert_eq!(blocks[0].element_ids, vec![1, 2]);
    }

    #[test]
    fn boundary_center_goes_to_upper_block() {
        let screen = BBox::from_coords(0, 0, 100, 100);
        let upper = BBox::from_coords(0, 0, 100, 50);
        let lower = BBox::from_coords(0, 50, 100, 100);
        let els = [el(1, BBox::from_coords(10, 40, 20, 60), BTN, None)];
        let blocks = assign_elements_to_blocks(&els, &[lower, upper], &screen);
        assert_eq!(blocks.len(), 1);
        assert_eq!(blocks[0].bbox, upper);
    }

    #[test]
    fn nested_blocks_use_innermost_and_fallback_catches_rest() {
        let screen = BBox::from_coords(0, 0, 1000, 1000);
        let outer = BBox::from_coords(0, 0, 1000, 500);
        let inner = BBox::from_coords(100, 100, 400, 400);
        let els = [
            el(1, BBox::from_coords(150, 150, 200, 200), BTN, None),
            el(2, BBox::from_coords(600, 100, 700, 200), BTN, None),
            el(3, BBox::from_coords(600, 700, 700, 800), BTN, None),
        ];
        let blocks = assign_elements_to_blocks(&els, &[outer, inner], &screen);
        let find = |b: BBox| blocks.iter().find(|s| s.bbox == b).unwrap().element_ids.clone();
        assert_eq!(find(inner), vec![1]);
        assert_eq!(find(outer), vec![2]);
        assert_eq!(find(screen), vec![3]);
    }

    #[test]
    fn month_caption_is_promoted() {
        let mut els = vec![el(1, BBox::from_coords(20, 10, 200, 40), ElementKind::Text, Some("December"))];
        for i in 0..5 {
            let x = 20 + i * 80;
            els.push(el(2 + i as u32, BBox::from_coords(x, 120, x + 60, 180), BTN, Some("1")));
        }
        let idx = index(&els);
        let mut block = SemanticBlock {
            element_ids: els.iter().map(|e| e.id).collect(),
            ..SemanticBlock::new(BBox::from_coords(0, 0, 500, 400))
        };
        assert_eq!(detect_caption(&mut block, &idx).as_deref(), Some("December"));
        assert_eq!(block.element_ids, vec![2, 3, 4, 5, 6]);
        assert_eq!(block.caption.as_deref(), Some("December"));
    }

    #[test]
    fn text_beside_image_is_not_a_caption() {
        let els = [
            el(1, BBox::from_coords(80, 10, 200, 40), ElementKind::Text, Some("Profile")),
            el(2, BBox::from_coords(10, 5, 60, 45), ElementKind::Widget(WidgetCategory::Image), None),
            el(3, BBox::from_coords(10, 200, 300, 260), BTN, Some("Edit")),
        ];
        let mut block = SemanticBlock {
            element_ids: vec![1, 2, 3],
            ..SemanticBlock::new(BBox::from_coords(0, 0, 500, 400))
        };
        assert_eq!(detect_caption(&mut block, &index(&els)), None);
        let mut empty = SemanticBlock::new(BBox::from_coords(0, 0, 10, 10));
        assert_eq!(detect_caption(&mut empty, &BTreeMap::new()), None);
    }

    fn tab_image(tinted: Option<usize>, n: usize) -> (RgbImage, Vec<UiElement>) {
        let mut img = RgbImage::from_pixel(1000, 200, Rgb([250, 250, 250]));
        let mut els = Vec::new();
        for i in 0..n {
            let x = 50 + i as u32 * (900 / n as u32);
            let color = if Some(i) == tinted { Rgb([30, 110, 230]) } else { Rgb([120, 120, 120]) };
            for y in 60..140 {
                for xx in x..x + 80 {
                    img.put_pixel(xx, y, color);
                }
            }
            els.push(el(i as u32 + 1, BBox::from_coords(x as i32, 50, x as i32 + 100, 150), BTN, Some("t")));
        }
        (img, els)
    }

    fn tab_block(els: &[UiElement]) -> SemanticBlock {
        SemanticBlock {
            element_ids: els.iter().map(|e| e.id).collect(),
            is_tab_bar: true,
            ..SemanticBlock::new(BBox::from_coords(0, 0, 1000, 200))
        }
    }

    #[test]
    fn tinted_tab_is_active() {
        let p = TabBarParams::default();
        let (img, els) = tab_image(Some(2), 4);
        let got = detect_active_tab(&tab_block(&els), &index(&els), &img, &p).unwrap();
        assert_eq!(got, Some(3));
    }

    #[test]
    fn identical_tabs_have_no_active() {
        let p = TabBarParams::default();
        let (img, els) = tab_image(None, 4);
        assert_eq!(detect_active_tab(&tab_block(&els), &index(&els), &img, &p), Ok(None));
    }

    #[test]
    fn two_tabs_are_ambiguous() {
        let p = TabBarParams::default();
        let (img, els) = tab_image(Some(0), 2);
        assert_eq!(detect_active_tab(&tab_block(&els), &index(&els), &img, &p), Ok(None));
    }

    #[test]
    fn non_tab_bar_is_rejected() {
        let p = TabBarParams::default();
        let (img, els) = tab_image(Some(0), 4);
        let mut b = tab_block(&els);
        b.is_tab_bar = false;
        assert_eq!(detect_active_tab(&b, &index(&els), &img, &p), Err(BlockingError::NotTabBar));
    }

    #[test]
    fn tab_bar_shape_rules() {
        let p = TabBarParams::default();
        let screen = BBox::from_coords(0, 0, 1000, 2000);
        let mut els = Vec::new();
        for i in 0..4 {
            let x = 40 + i * 250;
            els.push(el(i as u32 + 1, BBox::from_coords(x, 1850, x + 170, 1950), BTN, Some("t")));
        }
        let block = SemanticBlock {
            element_ids: vec![1, 2, 3, 4],
            ..SemanticBlock::new(BBox::from_coords(0, 1800, 1000, 2000))
        };
        assert!(is_tab_bar(&block, &index(&els), &screen, &p));

        let high = SemanticBlock { bbox: BBox::from_coords(0, 800, 1000, 1000), ..block.clone() };
        assert!(!is_tab_bar(&high, &index(&els), &screen, &p));

        els[3].bbox = BBox::from_coords(500, 1850, 560, 1950);
        assert!(!is_tab_bar(&block, &index(&els), &screen, &p));
    }
}
