//! Semantic block division: border-line extraction from a quantized
//! grayscale screenshot, rectangle recovery, element assignment, block
//! captions and active-tab detection.

mod edges;
mod rects;
mod semantic;

use serde::{Deserialize, Serialize};

pub use edges::{detect_border_segments, LineSegment, Orientation, SegmentParams};
pub use rects::find_blocks;
pub use semantic::{
    assign_elements_to_blocks, detect_active_tab, detect_caption, hue_histogram, is_tab_bar,
    SemanticBlock, TabBarParams,
};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum BlockingError {
    #[error("block is not a tab bar")]
    NotTabBar,
    #[error("pixel buffer of {got} bytes does not match {width}x{height}")]
    BadBuffer { width: u32, height: u32, got: usize },
}

/// Row-major 8-bit luminance image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self, BlockingError> {
        if pixels.len() != width as usize * height as usize {
            return Err(BlockingError::BadBuffer { width, height, got: pixels.len() });
        }
        Ok(GrayImage { width, height, pixels })
    }

    pub fn filled(width: u32, height: u32, value: u8) -> Self {
        GrayImage { width, height, pixels: vec![value; width as usize * height as usize] }
    }

    /// ITU-R BT.601 luma, rounded.
    pub fn from_rgb(img: &image::RgbImage) -> Self {
        let pixels = img
            .pixels()
            .map(|p| {
                let [r, g, b] = p.0;
                ((299 * r as u32 + 587 * g as u32 + 114 * b as u32 + 500) / 1000) as u8
            })
            .collect();
        GrayImage { width: img.width(), height: img.height(), pixels }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.pixels[y as usize * self.width as usize + x as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, v: u8) {
        let w = self.width as usize;
        self.pixels[y as usize * w + x as usize] = v;
    }

    /// Transposed copy (x and y swapped).
    pub fn transposed(&self) -> Self {
        let mut out = GrayImage::filled(self.height, self.width, 0);
        for y in 0..self.height {
            for x in 0..self.width {
                out.set(y, x, self.get(x, y));
            }
        }
        out
    }
}

/// Maps every pixel to the nearest of the `k` most frequent gray levels.
///
/// Frequency ties prefer the darker level; distance ties map to the darker
/// retained level.
pub fn quantize_image(img: &GrayImage, k: usize) -> GrayImage {
    let k = k.max(1);
    let mut hist = [0usize; 256];
    for &p in &img.pixels {
        hist[p as usize] += 1;
    }
    let mut levels: Vec<u8> = (0..=255u8).filter(|&v| hist[v as usize] > 0).collect();
    levels.sort_by(|&a, &b| hist[b as usize].cmp(&hist[a as usize]).then(a.cmp(&b)));
    levels.truncate(k);
    levels.sort_unstable();
    let mut lut = [0u8; 256];
    for (v, slot) in lut.iter_mut().enumerate() {
        *slot = *levels
            .iter()
            .min_by_key(|&&l| ((l as i32 - v as i32).abs(), l))
            .unwrap_or(&(v as u8));
    }
    GrayImage {
        width: img.width,
        height: img.height,
        pixels: img.pixels.iter().map(|&p| lut[p as usize]).collect(),
    }
}

/// All tunables of block division.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BlockingParams {
    /// Number of predominant gray levels kept by quantization.
    pub top_colors: usize,
    /// Gradient magnitude threshold on 0-255 luminance.
    pub t_grad: f64,
    pub gaussian_sigma: f64,
    /// Canny hysteresis thresholds as multiples of `t_grad`.
    pub canny_low: f64,
    pub canny_high: f64,
    /// Minimum segment length as a fraction of screen width.
    pub min_segment_frac: f64,
    /// Rectangle join tolerance as a fraction of the screen diagonal.
    pub join_tol_frac: f64,
    pub tab_bar: TabBarParams,
}

impl Default for BlockingParams {
    fn default() -> Self {
        BlockingParams {
            top_colors: 8,
            t_grad: 30.0,
            gaussian_sigma: 1.4,
            canny_low: 0.4,
            canny_high: 1.0,
            min_segment_frac: 0.02,
            join_tol_frac: 0.01,
            tab_bar: TabBarParams::default(),
        }
    }
}

impl BlockingParams {
    pub fn segment_params(&self, width: u32) -> SegmentParams {
        SegmentParams {
            t_grad: self.t_grad,
            gaussian_sigma: self.gaussian_sigma,
            canny_low: self.canny_low,
            canny_high: self.canny_high,
            min_length: (self.min_segment_frac * width as f64).max(2.0),
            ..SegmentParams::default()
        }
    }

    pub fn join_tolerance(&self, w: u32, h: u32) -> f64 {
        self.join_tol_frac * (w as f64).hypot(h as f64)
    }
}

/// Runs quantization, border extraction and rectangle recovery on a
/// screenshot, returning the segments found and the block boxes.
pub fn divide_blocks(
    img: &image::RgbImage,
    params: &BlockingParams,
) -> (Vec<LineSegment>, Vec<crate::perception::BBox>) {
    let gray = GrayImage::from_rgb(img);
    let quant = quantize_image(&gray, params.top_colors);
    let segments = detect_border_segments(&quant, &params.segment_params(img.width()));
    let screen = crate::perception::BBox::from_coords(0, 0, img.width() as i32, img.height() as i32);
    let tol = params.join_tolerance(img.width(), img.height());
    let blocks = find_blocks(&segments, &screen, tol);
    (segments, blocks)
}

/// Per-screen debug document used by golden-file tests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DebugDump {
    pub segments: Vec<LineSegment>,
    pub blocks: Vec<SemanticBlock>,
    pub captions: Vec<String>,
    pub active_tabs: Vec<u32>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn img_from(values: &[u8], w: u32) -> GrayImage {
        GrayImage::new(w, values.len() as u32 / w, values.to_vec()).unwrap()
    }

    #[test]
    fn quantize_examples() {
        let uni = GrayImage::filled(4, 4, 77);
        assert_eq!(quantize_image(&uni, 1), uni);

        let two = img_from(&[0, 255, 255, 0], 2);
        assert_eq!(quantize_image(&two, 2), two);

        // 6 x 0, 3 x 128, 1 x 255: the 255 pixel is nearer to 128 than 0.
        let mut v = vec![0u8; 6];
        v.extend([128; 3]);
        v.push(255);
        let q = quantize_image(&img_from(&v, 10), 2);
        let mut expected = vec![0u8; 6];
        expected.extend([128; 4]);
        assert_eq!(q.pixels(), &expected[..]);
    }

    #[test]
    fn quantize_frequency_tie_prefers_darker() {
        let q = quantize_image(&img_from(&[10, 10, 200, 200, 100], 5), 1);
        assert!(q.pixels().iter().all(|&p| p == 10));
    }

    #[test]
    fn bad_buffer_rejected() {
        assert!(GrayImage::new(3, 3, vec![0; 8]).is_err());
    }

    proptest! {
        #[test]
        fn quantize_idempotent_with_bounded_palette(
            values in proptest::collection::vec(any::<u8>(), 1..400),
            k in 1usize..10,
        ) {
            let img = img_from(&values, values.len() as u32);
            let q = quantize_image(&img, k);
            let mut palette: Vec<u8> = q.pixels().to_vec();
            palette.sort_unstable();
            palette.dedup();
            prop_assert!(palette.len() <= k);
            prop_assert_eq!(quantize_image(&q, k), q);
        }
    }
}
