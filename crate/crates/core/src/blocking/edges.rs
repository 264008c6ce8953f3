use serde::{Deserialize, Serialize};

use super::GrayImage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    Horizontal,
    Vertical,
}

/// Axis-aligned border segment fit to a group of edge pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineSegment {
    pub p1: (f64, f64),
    pub p2: (f64, f64),
    pub orientation: Orientation,
    /// Number of edge pixels behind the fit.
    pub support: usize,
}

impl LineSegment {
    pub fn length(&self) -> f64 {
        (self.p2.0 - self.p1.0).hypot(self.p2.1 - self.p1.1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentParams {
    pub t_grad: f64,
    pub gaussian_sigma: f64,
    pub canny_low: f64,
    pub canny_high: f64,
    /// Minimum segment length in pixels.
    pub min_length: f64,
    /// Maximum deviation from the axis, in degrees, for an edge pixel to
    /// count as horizontal or vertical.
    pub axis_tolerance_deg: f64,
    /// Largest perpendicular drift between consecutive pixel runs of one group.
    pub max_row_drift: usize,
}

impl Default for SegmentParams {
    fn default() -> Self {
        SegmentParams {
            t_grad: 30.0,
            gaussian_sigma: 1.4,
            canny_low: 0.4,
            canny_high: 1.0,
            min_length: 20.0,
            axis_tolerance_deg: 25.0,
            max_row_drift: 2,
        }
    }
}

struct Gradients {
    w: usize,
    h: usize,
    gx: Vec<f32>,
    gy: Vec<f32>,
    mag: Vec<f32>,
}

/// Sobel derivatives scaled by 1/4, so a step of height d reads as d.
fn sobel(img: &GrayImage) -> Gradients {
    let w = img.width() as usize;
    let h = img.height() as usize;
    let p = img.pixels();
    let at = |x: isize, y: isize| -> f32 {
        let xc = x.clamp(0, w as isize - 1) as usize;
        let yc = y.clamp(0, h as isize - 1) as usize;
        p[yc * w + xc] as f32
    };
    let mut gx = vec![0f32; w * h];
    let mut gy = vec![0f32; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let dx = (at(x + 1, y - 1) + 2.0 * at(x + 1, y) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x - 1, y) + at(x - 1, y + 1));
            let dy = (at(x - 1, y + 1) + 2.0 * at(x, y + 1) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x, y - 1) + at(x + 1, y - 1));
            let i = y as usize * w + x as usize;
            gx[i] = dx / 4.0;
            gy[i] = dy / 4.0;
        }
    }
    let mag = gx.iter().zip(&gy).map(|(a, b)| a.hypot(*b)).collect();
    Gradients { w, h, gx, gy, mag }
}

fn gaussian_kernel(sigma: f64) -> Vec<f32> {
    let radius = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f32> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp() as f32)
        .collect();
    let sum: f32 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

fn gaussian_filter(data: &[f32], w: usize, h: usize, sigma: f64) -> Vec<f32> {
    if sigma <= 0.0 {
        return data.to_vec();
    }
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let mut tmp = vec![0f32; w * h];
    for y in 0..h {
        let row = &data[y * w..(y + 1) * w];
        for x in 0..w {
            let mut acc = 0.0;
            for (ki, kv) in k.iter().enumerate() {
                let xx = (x as isize + ki as isize - r).clamp(0, w as isize - 1) as usize;
                acc += kv * row[xx];
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0f32; w * h];
    for (ki, kv) in k.iter().enumerate() {
        for y in 0..h {
            let yy = (y as isize + ki as isize - r).clamp(0, h as isize - 1) as usize;
            let src = &tmp[yy * w..(yy + 1) * w];
            let dst = &mut out[y * w..(y + 1) * w];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += kv * s;
            }
        }
    }
    out
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum PixelAxis {
    None,
    /// Edge runs horizontally (gradient points up/down).
    Horizontal,
    Vertical,
}

/// Edge orientation from absolute gradient components summed over a 3x3
/// window, which stays defined on the centre row of thin lines where the
/// signed derivatives cancel.
fn pixel_axes(g: &Gradients, tan_tol: f32) -> Vec<PixelAxis> {
    let (w, h) = (g.w, g.h);
    let mut out = vec![PixelAxis::None; w * h];
    for y in 0..h {
        for x in 0..w {
            let (mut ax, mut ay) = (0f32, 0f32);
            for yy in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                for xx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                    ax += g.gx[yy * w + xx].abs();
                    ay += g.gy[yy * w + xx].abs();
                }
            }
            out[y * w + x] = if ay > 0.0 && ax <= ay * tan_tol {
                PixelAxis::Horizontal
            } else if ax > 0.0 && ay <= ax * tan_tol {
                PixelAxis::Vertical
            } else {
                PixelAxis::None
            };
        }
    }
    out
}

/// Canny on the filtered magnitude: non-maximum suppression across the
/// edge axis, then hysteresis between `low` and `high`.
fn canny(filtered: &[f32], axes: &[PixelAxis], w: usize, h: usize, low: f32, high: f32) -> Vec<bool> {
    let mut candidate = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let m = filtered[i];
            if m < low {
                continue;
            }
            let keep = match axes[i] {
                PixelAxis::None => false,
                PixelAxis::Horizontal => {
                    let up = if y > 0 { filtered[i - w] } else { 0.0 };
                    let down = if y + 1 < h { filtered[i + w] } else { 0.0 };
                    m >= up && m > down
                }
                PixelAxis::Vertical => {
                    let left = if x > 0 { filtered[i - 1] } else { 0.0 };
                    let right = if x + 1 < w { filtered[i + 1] } else { 0.0 };
                    m >= left && m > right
                }
            };
            candidate[i] = keep;
        }
    }
    let mut edge = vec![false; w * h];
    let mut stack: Vec<usize> = (0..w * h)
        .filter(|&i| candidate[i] && filtered[i] >= high)
        .collect();
    for &i in &stack {
        edge[i] = true;
    }
    while let Some(i) = stack.pop() {
        let (x, y) = (i % w, i / w);
        for yy in y.saturating_sub(1)..=(y + 1).min(h - 1) {
            for xx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                let j = yy * w + xx;
                if candidate[j] && !edge[j] {
                    edge[j] = true;
                    stack.push(j);
                }
            }
        }
    }
    edge
}

fn local_max(mag: &[f32], w: usize, h: usize, x: usize, y: usize) -> f32 {
    let mut m = 0f32;
    for yy in y.saturating_sub(1)..=(y + 1).min(h - 1) {
        for xx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
            m = m.max(mag[yy * w + xx]);
        }
    }
    m
}

/// A run of edge pixels on one row (for horizontal edges).
#[derive(Clone, Copy)]
struct Run {
    row: usize,
    start: usize,
    end: usize,
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Collects runs of chosen pixels along rows, allowing single-pixel gaps,
/// groups runs on nearby rows whose extents touch, and fits one line per
/// group by least squares. Coordinates are (along, across) the axis.
fn fit_axis_groups(
    chosen: &[bool],
    along_len: usize,
    across_len: usize,
    params: &SegmentParams,
    tan_tol: f64,
) -> Vec<(f64, f64, f64, usize)> {
    let mut runs: Vec<Run> = Vec::new();
    for row in 0..across_len {
        let line = &chosen[row * along_len..(row + 1) * along_len];
        let mut x = 0;
        while x < along_len {
            if !line[x] {
                x += 1;
                continue;
            }
            let start = x;
            let mut end = x;
            while x < along_len {
                if line[x] {
                    end = x;
                    x += 1;
                } else if x + 1 < along_len && line[x + 1] {
                    x += 1;
                } else {
                    break;
                }
            }
            runs.push(Run { row, start, end });
            x = end + 1;
        }
    }

    let mut parent: Vec<usize> = (0..runs.len()).collect();
    let mut first_of_row = vec![usize::MAX; across_len];
    for (i, r) in runs.iter().enumerate() {
        if first_of_row[r.row] == usize::MAX {
            first_of_row[r.row] = i;
        }
    }
    for i in 0..runs.len() {
        let r = runs[i];
        for d in 1..=params.max_row_drift {
            if r.row < d {
                break;
            }
            let prev_row = r.row - d;
            let mut j = first_of_row[prev_row];
            if j == usize::MAX {
                continue;
            }
            while j < runs.len() && runs[j].row == prev_row {
                let o = runs[j];
                if o.start <= r.end + 1 && r.start <= o.end + 1 {
                    let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                    if a != b {
                        parent[a] = b;
                    }
                }
                j += 1;
            }
        }
    }

    let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for i in 0..runs.len() {
        let root = find(&mut parent, i);
        groups.entry(root).or_default().push(i);
    }

    let mut out = Vec::new();
    for members in groups.values() {
        let min_along = members.iter().map(|&i| runs[i].start).min().unwrap();
        let max_along = members.iter().map(|&i| runs[i].end).max().unwrap();
        let length = (max_along - min_along + 1) as f64;
        if length < params.min_length {
            continue;
        }
        // Least squares of across = a + b * along over every pixel.
        let (mut n, mut sx, mut sy, mut sxx, mut sxy) = (0f64, 0f64, 0f64, 0f64, 0f64);
        for &i in members {
            let r = runs[i];
            let line = &chosen[r.row * along_len..(r.row + 1) * along_len];
            for (x, _) in line.iter().enumerate().take(r.end + 1).skip(r.start).filter(|(_, c)| **c) {
                let (xf, yf) = (x as f64, r.row as f64);
                n += 1.0;
                sx += xf;
                sy += yf;
                sxx += xf * xf;
                sxy += xf * yf;
            }
        }
        let denom = n * sxx - sx * sx;
        let slope = if denom.abs() < 1e-9 { 0.0 } else { (n * sxy - sx * sy) / denom };
        if slope.abs() > tan_tol {
            continue;
        }
        let intercept = (sy - slope * sx) / n;
        let mid = (min_along + max_along) as f64 / 2.0;
        let across = intercept + slope * mid;
        out.push((min_along as f64, max_along as f64, across, n as usize));
    }
    out
}

/// Extracts horizontal and vertical border segments from a (quantized)
/// grayscale image.
///
/// Gradient magnitude is smoothed with a Gaussian, thinned with Canny, and
/// edge pixels whose raw magnitude exceeds `t_grad` are grouped by axis and
/// proximity, then fit by least squares. Oblique edges are discarded.
pub fn detect_border_segments(img: &GrayImage, params: &SegmentParams) -> Vec<LineSegment> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    if w < 3 || h < 3 {
        return Vec::new();
    }
    let g = sobel(img);
    let filtered = gaussian_filter(&g.mag, w, h, params.gaussian_sigma);
    let pixel_tan = params.axis_tolerance_deg.to_radians().tan() as f32;
    let axes = pixel_axes(&g, pixel_tan);
    let low = (params.canny_low * params.t_grad) as f32;
    let high = (params.canny_high * params.t_grad) as f32;
    let edges = canny(&filtered, &axes, w, h, low, high);

    let t_grad = params.t_grad as f32;
    let mut horiz = vec![false; w * h];
    // Stored transposed so vertical runs are contiguous.
    let mut vert = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if !edges[i] || local_max(&g.mag, w, h, x, y) <= t_grad {
                continue;
            }
            match axes[i] {
                PixelAxis::Horizontal => horiz[i] = true,
                PixelAxis::Vertical => vert[x * h + y] = true,
                PixelAxis::None => {}
            }
        }
    }

    let fit_tan = 2f64.to_radians().tan();
    let mut segments = Vec::new();
    for (x1, x2, y, support) in fit_axis_groups(&horiz, w, h, params, fit_tan) {
        segments.push(LineSegment {
            p1: (x1, y),
            p2: (x2, y),
            orientation: Orientation::Horizontal,
            support,
        });
    }
    for (y1, y2, x, support) in fit_axis_groups(&vert, h, w, params, fit_tan) {
        segments.push(LineSegment {
            p1: (x, y1),
            p2: (x, y2),
            orientation: Orientation::Vertical,
            support,
        });
    }
    segments
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line_image(w: u32, h: u32, y0: u32, thickness: u32) -> GrayImage {
        let mut img = GrayImage::filled(w, h, 230);
        for y in y0..y0 + thickness {
            for x in 0..w {
                img.set(x, y, 40);
            }
        }
        img
    }

    fn params() -> SegmentParams {
        SegmentParams { min_length: 8.0, ..SegmentParams::default() }
    }

    #[test]
    fn blank_image_has_no_segments() {
        assert!(detect_border_segments(&GrayImage::filled(60, 40, 128), &params()).is_empty());
    }

    #[test]
    fn full_width_line_yields_one_horizontal_segment() {
        let img = line_image(200, 120, 60, 2);
        let segs = detect_border_segments(&img, &params());
        assert_eq!(segs.len(), 1, "{segs:?}");
        let s = &segs[0];
        assert_eq!(s.orientation, Orientation::Horizontal);
        assert!(s.length() >= 0.95 * 200.0, "length {}", s.length());
        assert!((s.p1.1 - 60.5).abs() <= 1.0);
    }

    #[test]
    fn rotated_line_yields_one_vertical_segment() {
        let img = line_image(200, 120, 60, 2).transposed();
        let segs = detect_border_segments(&img, &params());
        assert_eq!(segs.len(), 1, "{segs:?}");
        assert_eq!(segs[0].orientation, Orientation::Vertical);
        assert!(segs[0].length() >= 0.95 * 200.0);
    }

    #[test]
    fn thin_and_thick_lines_and_steps() {
        for thickness in [1, 3] {
            let segs = detect_border_segments(&line_image(150, 80, 30, thickness), &params());
            assert_eq!(segs.len(), 1, "thickness {thickness}: {segs:?}");
        }
        // A fill change produces a single step edge.
        let mut img = GrayImage::filled(150, 80, 230);
        for y in 40..80 {
            for x in 0..150 {
                img.set(x, y, 120);
            }
        }
        let segs = detect_border_segments(&img, &params());
        assert_eq!(segs.len(), 1, "{segs:?}");
    }

    #[test]
    fn weak_contrast_is_ignored() {
        let mut img = line_image(150, 80, 30, 2);
        for p in 0..150 {
            img.set(p, 30, 215);
            img.set(p, 31, 215);
        }
        assert!(detect_border_segments(&img, &params()).is_empty());
    }

    #[test]
    fn diagonal_edges_are_rejected() {
        let mut img = GrayImage::filled(100, 100, 230);
        for y in 0..100 {
            for x in 0..100 {
                if x > y {
                    img.set(x, y, 30);
                }
            }
        }
        assert!(detect_border_segments(&img, &params()).is_empty());
    }
}
