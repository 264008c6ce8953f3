//! Fuses widgets and text fragments into labeled UI elements, and interprets
//! icon-only buttons against a lexicon of function descriptions.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::perception::{BBox, DetectedWidget, Embedding, TextFragment, WidgetCategory};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum GroupingError {
    #[error("embedding dimension {got} does not match lexicon dimension {expected}")]
    DimMismatch { expected: usize, got: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("lexicon is empty")]
    EmptyLexicon,
    #[error("temperature must be positive, got {0}")]
    BadTemperature(f64),
    #[error("lexicon line {line}: {msg}")]
    LexiconFormat { line: usize, msg: String },
    #[error("reading lexicon: {0}")]
    Io(String),
}

/// What an element is: one of the detector classes, or free-standing text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ElementKind {
    Widget(WidgetCategory),
    Text,
}

impl ElementKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ElementKind::Widget(c) => c.as_str(),
            ElementKind::Text => "text",
        }
    }

    pub fn widget(&self) -> Option<WidgetCategory> {
        match self {
            ElementKind::Widget(c) => Some(*c),
            ElementKind::Text => None,
        }
    }
}

impl fmt::Display for ElementKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ElementSource {
    Matched,
    IconInterpreted,
    TextOnly,
    Unlabeled,
}

/// Which perception records an element was built from.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub widget: Option<usize>,
    pub texts: Vec<usize>,
}

/// A fused element, the unit the planner acts on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UiElement {
    pub id: u32,
    pub bbox: BBox,
    pub kind: ElementKind,
    pub label: Option<String>,
    pub function: Option<String>,
    pub source: ElementSource,
    #[serde(default)]
    pub provenance: Provenance,
    /// Provider crop handle, used for icon interpretation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crop_id: Option<String>,
}

impl UiElement {
    /// Label if present, otherwise the interpreted function.
    pub fn display_name(&self) -> Option<&str> {
        self.label.as_deref().or(self.function.as_deref())
    }
}

/// Gap between two boxes: 0 when they touch or overlap, otherwise the
/// Euclidean norm of the per-axis gaps.
pub fn edge_distance(a: &BBox, b: &BBox) -> f64 {
    let dx = (a.x1 - b.x2).max(b.x1 - a.x2).max(0) as f64;
    let dy = (a.y1 - b.y2).max(b.y1 - a.y2).max(0) as f64;
    dx.hypot(dy)
}

/// Side label (vertical center within the widget's rows) or above/below
/// label (horizontal center within the widget's columns).
fn aligned(widget: &BBox, text: &BBox) -> bool {
    let (tcx, tcy) = text.center_f();
    let side = tcy >= widget.y1 as f64 && tcy <= widget.y2 as f64;
    let stacked = tcx >= widget.x1 as f64 && tcx <= widget.x2 as f64;
    side || stacked
}

fn reading_key(b: &BBox) -> (i32, i32, i32, i32) {
    (b.y1, b.x1, b.y2, b.x2)
}

/// Icon-grid merge: an image or button directly above short text beneath it.
fn is_icon_grid_label(widget: &DetectedWidget, texts: &[&TextFragment]) -> bool {
    matches!(widget.category, WidgetCategory::Image | WidgetCategory::Button)
        && !texts.is_empty()
        && texts.iter().all(|t| {
            let (tcx, _) = t.bbox.center_f();
            t.bbox.y1 >= widget.bbox.y2 - 1
                && tcx >= widget.bbox.x1 as f64
                && tcx <= widget.bbox.x2 as f64
                && t.text.split_whitespace().count() <= 3
        })
}

/// Matches each text to at most one nearby aligned widget and emits one
/// element per widget plus one per leftover text, with IDs in reading order
/// starting at 1.
///
/// Ties between equidistant widgets go to the widget earlier in reading order.
pub fn match_text_to_widgets(
    widgets: &[DetectedWidget],
    texts: &[TextFragment],
    max_dist: f64,
) -> Vec<UiElement> {
    let mut widget_order: Vec<usize> = (0..widgets.len()).collect();
    widget_order.sort_by_key(|&i| (reading_key(&widgets[i].bbox), i));

    let mut absorbed: Vec<Vec<usize>> = vec![Vec::new(); widgets.len()];
    let mut leftover = Vec::new();
    for (ti, text) in texts.iter().enumerate() {
        let mut best: Option<(f64, usize)> = None;
        for &wi in &widget_order {
            let w = &widgets[wi].bbox;
            let d = edge_distance(w, &text.bbox);
            if d > max_dist || !aligned(w, &text.bbox) {
                continue;
            }
            if best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, wi));
            }
        }
        match best {
            Some((_, wi)) => absorbed[wi].push(ti),
            None => leftover.push(ti),
        }
    }

    let mut elements = Vec::with_capacity(widgets.len() + leftover.len());
    for (wi, widget) in widgets.iter().enumerate() {
        let mut mine = absorbed[wi].clone();
        mine.sort_by_key(|&ti| (reading_key(&texts[ti].bbox), ti));
        let frags: Vec<&TextFragment> = mine.iter().map(|&ti| &texts[ti]).collect();
        let (bbox, label, source) = if frags.is_empty() {
            (widget.bbox, None, ElementSource::Unlabeled)
        } else {
            let label = frags
                .iter()
                .map(|t| t.text.trim())
                .collect::<Vec<_>>()
                .join(" ");
            let bbox = if is_icon_grid_label(widget, &frags) {
                widget.bbox
            } else {
                frags.iter().fold(widget.bbox, |acc, t| acc.union(&t.bbox))
            };
            (bbox, Some(label), ElementSource::Matched)
        };
        elements.push(UiElement {
            id: 0,
            bbox,
            kind: ElementKind::Widget(widget.category),
            label,
            function: None,
            source,
            provenance: Provenance {
                widget: Some(wi),
                texts: mine,
            },
            crop_id: (!widget.crop_id.is_empty()).then(|| widget.crop_id.clone()),
        });
    }
    for ti in leftover {
        elements.push(UiElement {
            id: 0,
            bbox: texts[ti].bbox,
            kind: ElementKind::Text,
            label: Some(texts[ti].text.trim().to_string()),
            function: None,
            source: ElementSource::TextOnly,
            provenance: Provenance {
                widget: None,
                texts: vec![ti],
            },
            crop_id: None,
        });
    }
    assign_reading_order_ids(&mut elements);
    elements
}

/// Sorts elements into reading order and renumbers them from 1.
pub fn assign_reading_order_ids(elements: &mut [UiElement]) {
    elements.sort_by(|a, b| {
        reading_key(&a.bbox)
            .cmp(&reading_key(&b.bbox))
            .then_with(|| a.provenance.widget.is_none().cmp(&b.provenance.widget.is_none()))
            .then_with(|| a.provenance.widget.cmp(&b.provenance.widget))
            .then_with(|| a.provenance.texts.cmp(&b.provenance.texts))
    });
    for (i, e) in elements.iter_mut().enumerate() {
        e.id = i as u32 + 1;
    }
}

/// Function descriptions with their text embeddings, plus the softmax
/// temperature.
#[derive(Debug, Clone, PartialEq)]
pub struct IconLexicon {
    entries: Vec<(String, Embedding)>,
    temperature: f64,
}

impl IconLexicon {
    pub fn new(entries: Vec<(String, Embedding)>, temperature: f64) -> Result<Self, GroupingError> {
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(GroupingError::BadTemperature(temperature));
        }
        let dim = entries.first().ok_or(GroupingError::EmptyLexicon)?.1.dim();
        let mut seen = HashSet::new();
        for (i, (desc, emb)) in entries.iter().enumerate() {
            if emb.dim() != dim {
                return Err(GroupingError::DimMismatch { expected: dim, got: emb.dim() });
            }
            if !seen.insert(desc.as_str()) {
                return Err(GroupingError::LexiconFormat {
                    line: i + 1,
                    msg: format!("duplicate description {desc:?}"),
                });
            }
        }
        Ok(IconLexicon { entries, temperature })
    }

    /// Parses `description<TAB>e1,e2,...` lines. Blank lines and `#` comments
    /// are skipped.
    pub fn parse(text: &str, temperature: f64) -> Result<Self, GroupingError> {
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |msg: String| GroupingError::LexiconFormat { line: n + 1, msg };
            let (desc, vec) = line
                .split_once('\t')
                .ok_or_else(|| err("missing tab separator".into()))?;
            let values = vec
                .split(',')
                .map(|v| v.trim().parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| err(e.to_string()))?;
            entries.push((desc.trim().to_string(), Embedding(values)));
        }
        IconLexicon::new(entries, temperature)
    }

    pub fn load(path: &Path, temperature: f64) -> Result<Self, GroupingError> {
        let text = std::fs::read_to_string(path).map_err(|e| GroupingError::Io(e.to_string()))?;
        Self::parse(&text, temperature)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (desc, emb) in &self.entries {
            let vals: Vec<String> = emb.0.iter().map(|v| format!("{v}")).collect();
            out.push_str(desc);
            out.push('\t');
            out.push_str(&vals.join(","));
            out.push('\n');
        }
        out
    }

    pub fn dim(&self) -> usize {
        self.entries[0].1.dim()
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn with_temperature(&self, temperature: f64) -> Result<Self, GroupingError> {
        IconLexicon::new(self.entries.clone(), temperature)
    }

    pub fn entries(&self) -> &[(String, Embedding)] {
        &self.entries
    }

    pub fn embedding_of(&self, description: &str) -> Option<&Embedding> {
        self.entries
            .iter()
            .find(|(d, _)| d == description)
            .map(|(_, e)| e)
    }

    /// Softmax probabilities of `v` against every entry, in entry order.
    pub fn scores(&self, v: &Embedding) -> Result<Vec<f64>, GroupingError> {
        if v.dim() != self.dim() {
            return Err(GroupingError::DimMismatch { expected: self.dim(), got: v.dim() });
        }
        let logits: Vec<f64> = self
            .entries
            .iter()
            .map(|(_, t)| v.dot(t) / self.temperature)
            .collect();
        Ok(softmax(&logits))
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn log_softmax_at(logits: &[f64], i: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    logits[i] - lse
}

/// Picks the description whose embedding wins the temperature-scaled softmax
/// against `icon`. Ties go to the earlier lexicon entry.
pub fn interpret_icon(icon: &Embedding, lexicon: &IconLexicon) -> Result<(String, f64), GroupingError> {
    let scores = lexicon.scores(icon)?;
    let (best, score) = scores
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, &s)| if s > acc.1 { (i, s) } else { acc });
    Ok((lexicon.entries[best].0.clone(), score))
}

fn check_batch(v: &[Embedding], t: &[Embedding], tau: f64) -> Result<usize, GroupingError> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(GroupingError::BadTemperature(tau));
    }
    if v.is_empty() || t.is_empty() {
        return Err(GroupingError::EmptyBatch);
    }
    if v.len() != t.len() {
        return Err(GroupingError::DimMismatch { expected: v.len(), got: t.len() });
    }
    let dim = v[0].dim();
    for e in v.iter().chain(t) {
        if e.dim() != dim {
            return Err(GroupingError::DimMismatch { expected: dim, got: e.dim() });
        }
    }
    Ok(v.len())
}

fn similarity_matrix(v: &[Embedding], t: &[Embedding], tau: f64) -> Vec<Vec<f64>> {
    v.iter()
        .map(|vi| t.iter().map(|tj| vi.dot(tj) / tau).collect())
        .collect()
}

/// Symmetric image/text contrastive loss over a batch of matched pairs:
/// the mean of the image-to-text and text-to-image cross entropies, where
/// pair `j` is the positive for row and column `j`.
pub fn contrastive_loss(v: &[Embedding], t: &[Embedding], tau: f64) -> Result<f64, GroupingError> {
    let n = check_batch(v, t, tau)?;
    let s = similarity_matrix(v, t, tau);
    let mut total = 0.0;
    for j in 0..n {
        total += log_softmax_at(&s[j], j);
        let column: Vec<f64> = (0..n).map(|i| s[i][j]).collect();
        total += log_softmax_at(&column, j);
    }
    Ok(-total / (2.0 * n as f64))
}

/// Analytic gradient of [`contrastive_loss`] with respect to every
/// component of `v` and `t`.
pub fn contrastive_loss_grad(
    v: &[Embedding],
    t: &[Embedding],
    tau: f64,
) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>), GroupingError> {
    let n = check_batch(v, t, tau)?;
    let dim = v[0].dim();
    let s = similarity_matrix(v, t, tau);
    let rows: Vec<Vec<f64>> = s.iter().map(|r| softmax(r)).collect();
    let cols: Vec<Vec<f64>> = (0..n)
        .map(|j| softmax(&(0..n).map(|i| s[i][j]).collect::<Vec<_>>()))
        .collect();
    // dL/dS_ij
    let scale = -1.0 / (2.0 * n as f64);
    let g = |i: usize, j: usize| {
        let delta = if i == j { 1.0 } else { 0.0 };
        scale * ((delta - rows[i][j]) + (delta - cols[j][i]))
    };
    let mut gv = vec![vec![0.0; dim]; n];
    let mut gt = vec![vec![0.0; dim]; n];
    for i in 0..n {
        for j in 0..n {
            let gij = g(i, j) / tau;
            for d in 0..dim {
                gv[i][d] += gij * t[j].0[d];
                gt[j][d] += gij * v[i].0[d];
            }
        }
    }
    Ok((gv, gt))
}

/// Whether an unlabeled widget of this class is a candidate for icon
/// interpretation.
pub fn is_icon_candidate(category: WidgetCategory) -> bool {
    matches!(category, WidgetCategory::Button | WidgetCategory::Image)
}

/// Interprets every unlabeled icon-like element that has an embedding.
pub fn interpret_unmatched(
    elements: &mut [UiElement],
    embeddings: &std::collections::BTreeMap<String, Embedding>,
    lexicon: &IconLexicon,
) -> Result<(), GroupingError> {
    for e in elements.iter_mut() {
        if e.source != ElementSource::Unlabeled {
            continue;
        }
        let Some(cat) = e.kind.widget() else { continue };
        if !is_icon_candidate(cat) {
            continue;
        }
        let Some(emb) = e.crop_id.as_ref().and_then(|c| embeddings.get(c)) else {
            continue;
        };
        let (desc, _) = interpret_icon(emb, lexicon)?;
        e.function = Some(desc);
        e.source = ElementSource::IconInterpreted;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::E;

    fn bx(x1: i32, y1: i32, x2: i32, y2: i32) -> BBox {
        BBox::from_coords(x1, y1, x2, y2)
    }

    fn widget(b: BBox, c: WidgetCategory) -> DetectedWidget {
        DetectedWidget { bbox: b, category: c, confidence: 0.9, crop_id: String::new() }
    }

    fn text(b: BBox, s: &str) -> TextFragment {
        TextFragment { bbox: b, text: s.into(), confidence: 0.99 }
    }

    #[test]
    fn edge_distance_examples() {
        assert_eq!(edge_distance(&bx(0, 0, 10, 10), &bx(5, 5, 15, 15)), 0.0);
        assert_eq!(edge_distance(&bx(0, 0, 10, 10), &bx(20, 0, 30, 10)), 10.0);
        assert_eq!(edge_distance(&bx(0, 0, 10, 10), &bx(13, 14, 20, 20)), 5.0);
    }

    #[test]
    fn side_label_matches_within_distance() {
        let w = [widget(bx(0, 0, 100, 50), WidgetCategory::Button)];
        let t = [text(bx(110, 10, 160, 40), "Save")];
        let els = match_text_to_widgets(&w, &t, 20.0);
        assert_eq!(els.len(), 1);
        assert_eq!(els[0].label.as_deref(), Some("Save"));
        assert_eq!(els[0].source, ElementSource::Matched);

        let els = match_text_to_widgets(&w, &t, 5.0);
        assert_eq!(els.len(), 2);
        assert_eq!(els[0].source, ElementSource::Unlabeled);
        assert_eq!(els[1].source, ElementSource::TextOnly);
        assert_eq!(els[1].label.as_deref(), Some("Save"));
    }

    #[test]
    fn lone_text_becomes_text_only() {
        let els = match_text_to_widgets(&[], &[text(bx(0, 0, 10, 10), "Hi")], 20.0);
        assert_eq!(els.len(), 1);
        assert_eq!(els[0].kind, ElementKind::Text);
        assert_eq!(els[0].id, 1);
    }

    #[test]
    fn icon_grid_keeps_widget_box() {
        let w = [widget(bx(100, 100, 200, 200), WidgetCategory::Image)];
        let t = [text(bx(110, 210, 190, 240), "Settings")];
        let els = match_text_to_widgets(&w, &t, 30.0);
        assert_eq!(els[0].bbox, w[0].bbox);
        assert_eq!(els[0].label.as_deref(), Some("Settings"));
    }

    #[test]
    fn multiple_texts_concatenate_in_reading_order() {
        let w = [widget(bx(0, 0, 300, 100), WidgetCategory::Button)];
        let t = [text(bx(10, 60, 200, 90), "Wi-Fi"), text(bx(10, 10, 200, 40), "Network")];
        let els = match_text_to_widgets(&w, &t, 10.0);
        assert_eq!(els.len(), 1);
        assert_eq!(els[0].label.as_deref(), Some("Network Wi-Fi"));
    }

    #[test]
    fn misaligned_text_is_not_matched() {
        let w = [widget(bx(0, 0, 100, 50), WidgetCategory::Button)];
        // Diagonal neighbor: center outside both spans.
        let t = [text(bx(105, 55, 150, 80), "x")];
        assert_eq!(match_text_to_widgets(&w, &t, 50.0).len(), 2);
    }

    #[test]
    fn equidistant_text_goes_to_earlier_widget() {
        let w = [
            widget(bx(200, 0, 300, 50), WidgetCategory::Button),
            widget(bx(0, 0, 100, 50), WidgetCategory::Button),
        ];
        let t = [text(bx(120, 10, 180, 40), "Mid")];
        let els = match_text_to_widgets(&w, &t, 30.0);
        let labeled: Vec<_> = els.iter().filter(|e| e.label.is_some()).collect();
        assert_eq!(labeled.len(), 1);
        assert_eq!(labeled[0].provenance.widget, Some(1));
    }

    fn unit(dim: usize, i: usize) -> Embedding {
        let mut v = vec![0.0; dim];
        v[i] = 1.0;
        Embedding(v)
    }

    #[test]
    fn singleton_lexicon_scores_one() {
        let lex = IconLexicon::new(vec![("Search".into(), unit(3, 0))], 0.07).unwrap();
        let (d, s) = interpret_icon(&Embedding(vec![0.3, 0.4, 0.5]), &lex).unwrap();
        assert_eq!(d, "Search");
        assert_eq!(s, 1.0);
    }

    #[test]
    fn two_entry_softmax_by_hand() {
        let lex = IconLexicon::new(
            vec![("Settings".into(), unit(2, 0)), ("Send".into(), unit(2, 1))],
            1.0,
        )
        .unwrap();
        let (d, s) = interpret_icon(&unit(2, 0), &lex).unwrap();
        assert_eq!(d, "Settings");
        assert!((s - E / (E + 1.0)).abs() < 1e-12);
        assert!((s - 0.7311).abs() < 1e-4);
    }

    #[test]
    fn dim_mismatch_is_reported() {
        let lex = IconLexicon::new(vec![("a".into(), unit(2, 0))], 1.0).unwrap();
        assert_eq!(
            interpret_icon(&unit(3, 0), &lex),
            Err(GroupingError::DimMismatch { expected: 2, got: 3 })
        );
        assert!(IconLexicon::new(vec![], 1.0).is_err());
        assert!(IconLexicon::new(vec![("a".into(), unit(2, 0))], 0.0).is_err());
    }

    #[test]
    fn contrastive_examples() {
        let v = [Embedding(vec![0.6, 0.8])];
        assert_eq!(contrastive_loss(&v, &v, 0.07).unwrap(), 0.0);

        let b = [unit(2, 0), unit(2, 1)];
        let l = contrastive_loss(&b, &b, 1.0).unwrap();
        assert!((l - -(E / (E + 1.0)).ln()).abs() < 1e-12);
        assert!((l - 0.3133).abs() < 1e-4);

        assert_eq!(contrastive_loss(&[], &[], 1.0), Err(GroupingError::EmptyBatch));
        assert!(matches!(
            contrastive_loss(&[unit(2, 0)], &[unit(3, 0)], 1.0),
            Err(GroupingError::DimMismatch { .. })
        ));
    }

    #[test]
    fn lexicon_tsv_round_trip() {
        let text = "# comment\nSettings\t1,0\nSend\t0,1\n\n";
        let lex = IconLexicon::parse(text, 0.07).unwrap();
        assert_eq!(lex.entries().len(), 2);
        assert_eq!(IconLexicon::parse(&lex.to_tsv(), 0.07).unwrap(), lex);
        assert!(matches!(
            IconLexicon::parse("no tab here", 0.07),
            Err(GroupingError::LexiconFormat { line: 1, .. })
        ));
        assert!(IconLexicon::parse("a\t1,0\na\t0,1", 0.07).is_err());
    }
}
