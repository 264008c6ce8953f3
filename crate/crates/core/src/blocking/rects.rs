use super::{LineSegment, Orientation};
use crate::perception::BBox;

#[derive(Debug, Clone, Copy, PartialEq)]
struct Rect {
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
}

impl Rect {
    fn w(&self) -> f64 {
        self.x2 - self.x1
    }

    fn h(&self) -> f64 {
        self.y2 - self.y1
    }

    fn area(&self) -> f64 {
        self.w() * self.h()
    }

    fn overlaps(&self, o: &Rect) -> bool {
        self.x1.max(o.x1) < self.x2.min(o.x2) && self.y1.max(o.y1) < self.y2.min(o.y2)
    }

    fn clamp_to(&self, o: &Rect) -> Rect {
        Rect {
            x1: self.x1.max(o.x1),
            y1: self.y1.max(o.y1),
            x2: self.x2.min(o.x2),
            y2: self.y2.min(o.y2),
        }
    }
}

/// Horizontal segment `[a1, a2]` at position `at` (or vertical, transposed).
#[derive(Debug, Clone, Copy)]
struct Span {
    at: f64,
    a1: f64,
    a2: f64,
}

struct Divider {
    tol: f64,
    min_side: f64,
    out: Vec<Rect>,
}

fn full_span_cuts(spans: &[Span], lo: f64, hi: f64, start: f64, end: f64, tol: f64, min_side: f64) -> Vec<f64> {
    let mut cuts: Vec<f64> = spans
        .iter()
        .filter(|s| s.a1 <= start + tol && s.a2 >= end - tol)
        .map(|s| s.at)
        .filter(|&c| c - lo >= min_side && hi - c >= min_side)
        .collect();
    cuts.sort_by(f64::total_cmp);
    let mut merged: Vec<f64> = Vec::new();
    for c in cuts {
        match merged.last_mut() {
            Some(last) if c - *last < min_side => *last = (*last + c) / 2.0,
            _ => merged.push(c),
        }
    }
    merged
}

/// Splits `[lo, hi]` at the outermost cuts only: the two edge bands and the
/// middle between them, which is divided further by the caller. A bar at
/// each end thus leaves the area between the bars as one region.
fn peel(lo: f64, hi: f64, cuts: &[f64]) -> Vec<(f64, f64)> {
    match cuts {
        [] => vec![(lo, hi)],
        [c] => vec![(lo, *c), (*c, hi)],
        [first, .., last] => vec![(lo, *first), (*first, *last), (*last, hi)],
    }
}

impl Divider {
    fn divide(&mut self, region: Rect, hs: &[Span], vs: &[Span], depth: usize) {
        if depth > 32 {
            return;
        }
        let tol = self.tol;
        let inside_h: Vec<Span> = hs
            .iter()
            .filter(|s| s.at > region.y1 && s.at < region.y2 && s.a2 > region.x1 && s.a1 < region.x2)
            .copied()
            .collect();
        let inside_v: Vec<Span> = vs
            .iter()
            .filter(|s| s.at > region.x1 && s.at < region.x2 && s.a2 > region.y1 && s.a1 < region.y2)
            .copied()
            .collect();

        let hcuts = full_span_cuts(&inside_h, region.y1, region.y2, region.x1, region.x2, tol, self.min_side);
        if !hcuts.is_empty() {
            for (a, b) in peel(region.y1, region.y2, &hcuts) {
                let band = Rect { y1: a, y2: b, ..region };
                self.out.push(band);
                self.divide(band, &inside_h, &inside_v, depth + 1);
            }
            return;
        }
        let vcuts = full_span_cuts(&inside_v, region.x1, region.x2, region.y1, region.y2, tol, self.min_side);
        if !vcuts.is_empty() {
            for (a, b) in peel(region.x1, region.x2, &vcuts) {
                let band = Rect { x1: a, x2: b, ..region };
                self.out.push(band);
                self.divide(band, &inside_h, &inside_v, depth + 1);
            }
            return;
        }

        for rect in self.framed(region, &inside_h, &inside_v) {
            self.out.push(rect);
            self.divide(rect, &inside_h, &inside_v, depth + 1);
        }
    }

    /// Rectangles closed by two horizontal and two vertical supports (region
    /// borders count as supports), largest first, pairwise disjoint.
    fn framed(&self, region: Rect, hs: &[Span], vs: &[Span]) -> Vec<Rect> {
        let tol = self.tol;
        let mut hs = hs.to_vec();
        hs.push(Span { at: region.y1, a1: region.x1, a2: region.x2 });
        hs.push(Span { at: region.y2, a1: region.x1, a2: region.x2 });
        let mut vs = vs.to_vec();
        vs.push(Span { at: region.x1, a1: region.y1, a2: region.y2 });
        vs.push(Span { at: region.x2, a1: region.y1, a2: region.y2 });
        vs.sort_by(|a, b| a.at.total_cmp(&b.at));

        let mut candidates = Vec::new();
        for top in &hs {
            for bottom in &hs {
                if bottom.at - top.at < self.min_side {
                    continue;
                }
                let lo = top.a1.max(bottom.a1);
                let hi = top.a2.min(bottom.a2);
                if hi - lo < self.min_side {
                    continue;
                }
                let mut sides = vs.iter().filter(|v| {
                    v.at >= lo - tol
                        && v.at <= hi + tol
                        && v.a1 <= top.at + tol
                        && v.a2 >= bottom.at - tol
                });
                let Some(left) = sides.next() else { continue };
                let Some(right) = sides.next_back() else { continue };
                if right.at - left.at < self.min_side {
                    continue;
                }
                let r = Rect { x1: left.at, y1: top.at, x2: right.at, y2: bottom.at }.clamp_to(&region);
                let same_as_region = (r.x1 - region.x1).abs() <= tol
                    && (r.y1 - region.y1).abs() <= tol
                    && (r.x2 - region.x2).abs() <= tol
                    && (r.y2 - region.y2).abs() <= tol;
                if !same_as_region && r.w() >= self.min_side && r.h() >= self.min_side {
                    candidates.push(r);
                }
            }
        }
        candidates.sort_by(|a, b| {
            b.area()
                .total_cmp(&a.area())
                .then(a.y1.total_cmp(&b.y1))
                .then(a.x1.total_cmp(&b.x1))
        });
        let mut chosen: Vec<Rect> = Vec::new();
        for c in candidates {
            if chosen.iter().all(|k| !k.overlaps(&c)) {
                chosen.push(c);
            }
        }
        chosen
    }
}

fn to_bbox(r: &Rect, screen: &BBox) -> Option<BBox> {
    let x1 = (r.x1.round() as i32).clamp(screen.x1, screen.x2);
    let y1 = (r.y1.round() as i32).clamp(screen.y1, screen.y2);
    let x2 = (r.x2.round() as i32).clamp(screen.x1, screen.x2);
    let y2 = (r.y2.round() as i32).clamp(screen.y1, screen.y2);
    BBox::new(x1, y1, x2, y2).ok()
}

/// Recovers rectangular blocks bounded by border segments or screen edges.
///
/// Regions are split recursively: first along segments spanning the whole
/// region (horizontal, then vertical), otherwise around framed rectangles
/// whose corners close to within `join_tol` pixels. Every region produced
/// except the screen itself is returned, so results are disjoint or nested.
/// Returns `[screen]` when nothing is found.
pub fn find_blocks(segments: &[LineSegment], screen: &BBox, join_tol: f64) -> Vec<BBox> {
    let mut hs = Vec::new();
    let mut vs = Vec::new();
    for s in segments {
        match s.orientation {
            Orientation::Horizontal => hs.push(Span {
                at: (s.p1.1 + s.p2.1) / 2.0,
                a1: s.p1.0.min(s.p2.0),
                a2: s.p1.0.max(s.p2.0) + 1.0,
            }),
            Orientation::Vertical => vs.push(Span {
                at: (s.p1.0 + s.p2.0) / 2.0,
                a1: s.p1.1.min(s.p2.1),
                a2: s.p1.1.max(s.p2.1) + 1.0,
            }),
        }
    }
    let region = Rect {
        x1: screen.x1 as f64,
        y1: screen.y1 as f64,
        x2: screen.x2 as f64,
        y2: screen.y2 as f64,
    };
    let tol = join_tol.max(1.0);
    let mut d = Divider { tol, min_side: tol.max(4.0), out: Vec::new() };
    d.divide(region, &hs, &vs, 0);

    let mut out: Vec<BBox> = Vec::new();
    for r in &d.out {
        if let Some(b) = to_bbox(r, screen) {
            if !out.contains(&b) && b != *screen {
                out.push(b);
            }
        }
    }
    if out.is_empty() {
        out.push(*screen);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn h(y: f64, x1: f64, x2: f64) -> LineSegment {
        LineSegment { p1: (x1, y), p2: (x2, y), orientation: Orientation::Horizontal, support: 1 }
    }

    fn v(x: f64, y1: f64, y2: f64) -> LineSegment {
        LineSegment { p1: (x, y1), p2: (x, y2), orientation: Orientation::Vertical, support: 1 }
    }

    fn screen() -> BBox {
        BBox::from_coords(0, 0, 1000, 2000)
    }

    #[test]
    fn no_segments_falls_back_to_screen() {
        assert_eq!(find_blocks(&[], &screen(), 20.0), vec![screen()]);
    }

    #[test]
    fn perfect_rectangle() {
        let segs = [h(300.0, 100.0, 800.0), h(900.0, 100.0, 800.0), v(100.0, 300.0, 900.0), v(800.0, 300.0, 900.0)];
        assert_eq!(find_blocks(&segs, &screen(), 20.0), vec![BBox::from_coords(100, 300, 800, 900)]);
    }

    #[test]
    fn nearly_closed_rectangle() {
        let segs = [h(300.0, 110.0, 790.0), h(900.0, 105.0, 795.0), v(100.0, 312.0, 890.0), v(800.0, 308.0, 893.0)];
        assert_eq!(find_blocks(&segs, &screen(), 20.0), vec![BBox::from_coords(100, 300, 800, 900)]);
    }

    #[test]
    fn one_full_width_line_splits_the_screen() {
        let segs = [h(1000.0, 0.0, 999.0)];
        assert_eq!(
            find_blocks(&segs, &screen(), 20.0),
            vec![BBox::from_coords(0, 0, 1000, 1000), BBox::from_coords(0, 1000, 1000, 2000)]
        );
    }

    #[test]
    fn results_are_disjoint_or_nested() {
        let segs = [
            h(100.0, 0.0, 999.0),
            h(1800.0, 0.0, 999.0),
            h(300.0, 50.0, 950.0),
            h(800.0, 50.0, 950.0),
            v(50.0, 300.0, 800.0),
            v(950.0, 300.0, 800.0),
            v(500.0, 300.0, 800.0),
            h(1000.0, 50.0, 450.0),
            h(1500.0, 600.0, 950.0),
        ];
        let blocks = find_blocks(&segs, &screen(), 20.0);
        assert!(blocks.contains(&BBox::from_coords(50, 300, 950, 800)));
        assert!(blocks.contains(&BBox::from_coords(50, 300, 500, 800)));
        for a in &blocks {
            assert!(screen().contains(a));
            for b in &blocks {
                if a != b && a.intersection(b).is_some() {
                    assert!(a.contains(b) || b.contains(a), "{a} vs {b}");
                }
            }
        }
    }
}
