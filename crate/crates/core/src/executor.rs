//! Long-screenshot capture and stitching, coordinate resolution and device
//! shell command emission.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::process::Command;
use std::sync::OnceLock;
use std::time::Duration;

use image::RgbImage;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::perception::BBox;
use crate::planner::{ActionKind, AgentAction, SwipeDir};
use crate::serialize::ScreenSemantics;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum DeviceError {
    #[error("device command failed: {0}")]
    Command(String),
    #[error("invalid screenshot: {0}")]
    Image(String),
    #[error("malformed shell line {0:?}")]
    Grammar(String),
}

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum ExecError {
    #[error(transparent)]
    Device(#[from] DeviceError),
    #[error("tiles differ in width: {0} vs {1}")]
    WidthMismatch(u32, u32),
    #[error("no tiles to stitch")]
    NoTiles,
    #[error("target {0} lies outside the captured page")]
    OutOfBounds(BBox),
    #[error("action needs target element {0} which is not on screen")]
    MissingTarget(u32),
}

/// A device reachable through an Android-style shell.
pub trait DeviceDriver {
    fn exec_shell(&mut self, line: &str) -> Result<Vec<u8>, DeviceError>;
    /// PNG-encoded screenshot (`screencap -p`).
    fn screenshot(&mut self) -> Result<Vec<u8>, DeviceError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommandKind {
    Tap,
    Swipe,
    Text,
    Key,
    Screencap,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeviceCommand {
    pub shell_line: String,
    pub kind: CommandKind,
}

impl DeviceCommand {
    pub fn tap(x: i32, y: i32) -> Self {
        DeviceCommand { shell_line: format!("input tap {x} {y}"), kind: CommandKind::Tap }
    }

    pub fn swipe(x1: i32, y1: i32, x2: i32, y2: i32, ms: u32) -> Self {
        DeviceCommand {
            shell_line: format!("input swipe {x1} {y1} {x2} {y2} {ms}"),
            kind: CommandKind::Swipe,
        }
    }

    pub fn text(s: &str) -> Self {
        DeviceCommand {
            shell_line: format!("input text {}", escape_input_text(s)),
            kind: CommandKind::Text,
        }
    }

    pub fn key(code: u32) -> Self {
        DeviceCommand { shell_line: format!("input keyevent {code}"), kind: CommandKind::Key }
    }

    pub fn screencap() -> Self {
        DeviceCommand { shell_line: "screencap -p".into(), kind: CommandKind::Screencap }
    }
}

const SHELL_SPECIAL: &[char] = &[
    '\\', '\'', '"', '`', '$', '&', '|', ';', '<', '>', '(', ')', '*', '?', '~', '#', '!', '[', ']', '{', '}',
];

/// Escapes text for `input text`: spaces become `\ ` and shell
/// metacharacters are backslash-prefixed. Non-ASCII passes through.
pub fn escape_input_text(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        if c == ' ' || SHELL_SPECIAL.contains(&c) {
            out.push('\\');
            out.push(c);
        } else if c == '\n' || c == '\r' {
            out.push('\\');
            out.push(' ');
        } else if c.is_whitespace() {
            out.push('\\');
            out.push(c);
        } else {
            out.push(c);
        }
    }
    out
}

/// Inverse of [`escape_input_text`].
pub fn unescape_input_text(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c == '\\' {
            if let Some(n) = chars.next() {
                out.push(n);
            }
        } else {
            out.push(c);
        }
    }
    out
}

fn grammar() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"^(?:input tap \d+ \d+|input swipe \d+ \d+ \d+ \d+ \d+|input text (?:[^\s\\]|\\.)+|input keyevent \d+|screencap -p)$",
        )
        .expect("grammar regex")
    })
}

/// Whether `line` belongs to the device shell grammar.
pub fn is_valid_shell_line(line: &str) -> bool {
    grammar().is_match(line)
}

/// Row-hash aligned vertical stitching.
///
/// For each adjacent pair the overlap is searched in `nominal_overlap ± 10%`;
/// use [`stitch_with_window`] for a custom search range.
pub fn stitch(tiles: &[RgbImage], nominal_overlap: u32) -> Result<(RgbImage, Vec<u32>), ExecError> {
    let slack = nominal_overlap / 10;
    stitch_with_window(
        tiles,
        nominal_overlap,
        nominal_overlap.saturating_sub(slack),
        nominal_overlap.saturating_add(slack),
    )
}

fn row_hashes(img: &RgbImage) -> Vec<u64> {
    let stride = img.width() as usize * 3;
    img.as_raw()
        .chunks(stride)
        .map(|row| {
            let mut h = DefaultHasher::new();
            row.hash(&mut h);
            h.finish()
        })
        .collect()
}

/// Minimum fraction of agreeing rows for an alignment to beat the nominal
/// overlap.
const MIN_ROW_AGREEMENT: f64 = 0.8;

fn best_overlap(prev: &[u64], next: &[u64], nominal: u32, lo: u32, hi: u32) -> u32 {
    let max_o = prev.len().min(next.len()) as u32;
    let nominal = nominal.min(max_o);
    let (lo, hi) = (lo.max(1).min(max_o), hi.min(max_o));
    let mut best: Option<(f64, i64, u32)> = None;
    for o in lo..=hi {
        let start = prev.len() - o as usize;
        let agree = (0..o as usize).filter(|&r| prev[start + r] == next[r]).count();
        let frac = agree as f64 / o as f64;
        let dist = -(o as i64 - nominal as i64).abs();
        let key = (frac, dist, o);
        if best.is_none_or(|b| (key.0, key.1, key.2) > (b.0, b.1, b.2)) {
            best = Some(key);
        }
    }
    match best {
        Some((frac, _, o)) if frac >= MIN_ROW_AGREEMENT => o,
        _ => nominal,
    }
}

/// Stitches tiles top to bottom, searching overlaps in `[lo, hi]` rows.
/// Returns the image and each tile's top offset in it.
pub fn stitch_with_window(
    tiles: &[RgbImage],
    nominal_overlap: u32,
    lo: u32,
    hi: u32,
) -> Result<(RgbImage, Vec<u32>), ExecError> {
    let first = tiles.first().ok_or(ExecError::NoTiles)?;
    let width = first.width();
    if let Some(t) = tiles.iter().find(|t| t.width() != width) {
        return Err(ExecError::WidthMismatch(width, t.width()));
    }
    let mut offsets = vec![0u32];
    let mut raw: Vec<u8> = first.as_raw().clone();
    let mut height = first.height();
    let mut prev_hashes = row_hashes(first);
    let mut prev_offset = 0u32;
    for tile in &tiles[1..] {
        let hashes = row_hashes(tile);
        let overlap = best_overlap(&prev_hashes, &hashes, nominal_overlap, lo, hi);
        let prev_h = prev_hashes.len() as u32;
        let offset = prev_offset + prev_h - overlap;
        // Rows of this tile past the current bottom of the canvas.
        let skip = (height - offset).min(tile.height());
        let stride = width as usize * 3;
        raw.extend_from_slice(&tile.as_raw()[skip as usize * stride..]);
        height = offset + tile.height().max(skip);
        offsets.push(offset);
        prev_hashes = hashes;
        prev_offset = offset;
    }
    let img = RgbImage::from_raw(width, height, raw).expect("stitched buffer size");
    Ok((img, offsets))
}

#[derive(Debug, Clone, PartialEq)]
pub struct StitchedScreenshot {
    pub image: RgbImage,
    pub tile_offsets: Vec<u32>,
    pub scroll_step: u32,
    pub screen_w: u32,
    pub screen_h: u32,
}

impl StitchedScreenshot {
    pub fn single(image: RgbImage) -> Self {
        let (w, h) = image.dimensions();
        StitchedScreenshot { image, tile_offsets: vec![0], scroll_step: h / 2, screen_w: w, screen_h: h }
    }

    /// Number of scrolls performed while capturing.
    pub fn scrolls(&self) -> usize {
        self.tile_offsets.len() - 1
    }
}

pub fn decode_screenshot(bytes: &[u8]) -> Result<RgbImage, DeviceError> {
    image::load_from_memory(bytes)
        .map(|i| i.to_rgb8())
        .map_err(|e| DeviceError::Image(e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExecutorParams {
    pub max_scrolls: usize,
    /// Pause after each gesture before the next capture.
    pub settle_ms: u64,
    pub long_press_ms: u32,
    pub swipe_ms: u32,
}

impl Default for ExecutorParams {
    fn default() -> Self {
        ExecutorParams {
            max_scrolls: 4,
            settle_ms: 1500,
            long_press_ms: 800,
            swipe_ms: 300,
        }
    }
}

fn scroll_swipe(w: u32, h: u32, dir: SwipeDir, ms: u32) -> DeviceCommand {
    let (cx, cy) = ((w / 2) as i32, (h / 2) as i32);
    let (qx, qy) = ((w / 4) as i32, (h / 4) as i32);
    match dir {
        SwipeDir::Up => DeviceCommand::swipe(cx, cy + qy, cx, cy - qy, ms),
        SwipeDir::Down => DeviceCommand::swipe(cx, cy - qy, cx, cy + qy, ms),
        SwipeDir::Left => DeviceCommand::swipe(cx + qx, cy, cx - qx, cy, ms),
        SwipeDir::Right => DeviceCommand::swipe(cx - qx, cy, cx + qx, cy, ms),
    }
}

fn settle(params: &ExecutorParams) {
    if params.settle_ms > 0 {
        std::thread::sleep(Duration::from_millis(params.settle_ms));
    }
}

/// Captures the page by half-screen scrolls, stopping when a new tile is
/// identical to the previous one, then scrolls back to where it started.
///
/// Issues at most `max_scrolls + 1` screenshot requests.
pub fn capture_long_screenshot(
    device: &mut dyn DeviceDriver,
    params: &ExecutorParams,
) -> Result<StitchedScreenshot, ExecError> {
    let first = decode_screenshot(&device.screenshot()?)?;
    let (w, h) = first.dimensions();
    let step = h / 2;
    let mut tiles = vec![first];
    let mut swipes = 0usize;
    for _ in 0..params.max_scrolls {
        device.exec_shell(&scroll_swipe(w, h, SwipeDir::Up, params.swipe_ms).shell_line)?;
        swipes += 1;
        settle(params);
        let tile = decode_screenshot(&device.screenshot()?)?;
        if tile.dimensions() != (w, h) {
            return Err(DeviceError::Image("screenshot size changed while scrolling".into()).into());
        }
        if tile == *tiles.last().expect("non-empty") {
            break;
        }
        tiles.push(tile);
    }
    // Clamped final scrolls overlap by more than half a screen.
    let (image, tile_offsets) = stitch_with_window(&tiles, h - step, (h - step) * 9 / 10, h)?;
    // Undo exactly the displacement observed, so the page is back where the
    // capture started.
    let mut remaining = *tile_offsets.last().expect("non-empty") as i32;
    let cx = (w / 2) as i32;
    let cy = (h / 2) as i32;
    while remaining > 0 {
        let d = remaining.min(step as i32);
        let line = DeviceCommand::swipe(cx, cy - d / 2, cx, cy - d / 2 + d, params.swipe_ms).shell_line;
        device.exec_shell(&line)?;
        remaining -= d;
    }
    if swipes > 0 {
        settle(params);
    }
    Ok(StitchedScreenshot { image, tile_offsets, scroll_step: step, screen_w: w, screen_h: h })
}

/// Number of `scroll_step` swipes needed to bring `cy` into the upper half
/// of the screen: `ceil((cy - screen_h/2) / scroll_step)`, or 0 on-screen.
pub fn swipes_needed(cy: i32, screen_h: u32, scroll_step: u32) -> u32 {
    if cy < screen_h as i32 {
        return 0;
    }
    let num = 2 * cy as i64 - screen_h as i64;
    let den = 2 * scroll_step as i64;
    ((num + den - 1) / den) as u32
}

/// Tap location for `target` after any swipes required to reach it, and
/// the number of swipes.
pub fn resolve_point(target: &BBox, shot: &StitchedScreenshot) -> Result<(i32, i32, u32), ExecError> {
    if target.x2 as u32 > shot.image.width() || target.y2 as u32 > shot.image.height() {
        return Err(ExecError::OutOfBounds(*target));
    }
    let (cx, cy) = target.center();
    let k = swipes_needed(cy, shot.screen_h, shot.scroll_step);
    // Scrolling stops at the page bottom, so the last swipes may move less.
    let max_offset = shot.image.height().saturating_sub(shot.screen_h);
    let moved = (k * shot.scroll_step).min(max_offset);
    Ok((cx, cy - moved as i32, k))
}

fn page_swipes(k: u32, shot: &StitchedScreenshot, ms: u32) -> Vec<DeviceCommand> {
    let cx = (shot.screen_w / 2) as i32;
    let y1 = (shot.screen_h / 2 + shot.scroll_step / 2) as i32;
    let y2 = y1 - shot.scroll_step as i32;
    (0..k).map(|_| DeviceCommand::swipe(cx, y1, cx, y2, ms)).collect()
}

/// Tap commands for `target`: a direct tap when on-screen, otherwise swipes
/// of `scroll_step` followed by a tap at the shifted position.
pub fn resolve_coordinates(target: &BBox, shot: &StitchedScreenshot) -> Result<Vec<DeviceCommand>, ExecError> {
    let params = ExecutorParams::default();
    let (x, y, k) = resolve_point(target, shot)?;
    let mut cmds = page_swipes(k, shot, params.swipe_ms);
    cmds.push(DeviceCommand::tap(x, y));
    Ok(cmds)
}

/// Device commands for a planner action against the current capture.
pub fn to_device_commands(
    action: &AgentAction,
    sem: &ScreenSemantics,
    shot: &StitchedScreenshot,
    params: &ExecutorParams,
) -> Result<Vec<DeviceCommand>, ExecError> {
    let target = |id: Option<u32>| -> Result<(Vec<DeviceCommand>, i32, i32), ExecError> {
        let id = id.ok_or(ExecError::MissingTarget(0))?;
        let el = sem.element(id).ok_or(ExecError::MissingTarget(id))?;
        let (x, y, k) = resolve_point(&el.bbox, shot)?;
        Ok((page_swipes(k, shot, params.swipe_ms), x, y))
    };
    Ok(match action.kind {
        ActionKind::Tap => {
            let (mut cmds, x, y) = target(action.target_id)?;
            cmds.push(DeviceCommand::tap(x, y));
            cmds
        }
        ActionKind::LongPress => {
            let (mut cmds, x, y) = target(action.target_id)?;
            cmds.push(DeviceCommand::swipe(x, y, x, y, params.long_press_ms));
            cmds
        }
        ActionKind::Input => {
            let (mut cmds, x, y) = target(action.target_id)?;
            cmds.push(DeviceCommand::tap(x, y));
            cmds.push(DeviceCommand::text(action.text.as_deref().unwrap_or("")));
            cmds
        }
        ActionKind::Swipe => vec![scroll_swipe(
            shot.screen_w,
            shot.screen_h,
            action.swipe_dir.unwrap_or(SwipeDir::Up),
            params.swipe_ms,
        )],
        ActionKind::Stop => Vec::new(),
    })
}

/// Runs commands in order, pausing after each gesture.
pub fn execute(device: &mut dyn DeviceDriver, cmds: &[DeviceCommand], params: &ExecutorParams) -> Result<(), DeviceError> {
    for c in cmds {
        device.exec_shell(&c.shell_line)?;
    }
    if !cmds.is_empty() {
        settle(params);
    }
    Ok(())
}

/// Bridge to a physical device through the `adb` binary.
#[derive(Debug, Clone)]
pub struct AdbDevice {
    pub serial: String,
    pub adb_path: String,
}

impl AdbDevice {
    pub fn new(serial: impl Into<String>) -> Self {
        AdbDevice { serial: serial.into(), adb_path: "adb".into() }
    }

    fn run(&self, args: &[&str]) -> Result<Vec<u8>, DeviceError> {
        let out = Command::new(&self.adb_path)
            .arg("-s")
            .arg(&self.serial)
            .args(args)
            .output()
            .map_err(|e| DeviceError::Command(format!("{}: {e}", self.adb_path)))?;
        if !out.status.success() {
            return Err(DeviceError::Command(String::from_utf8_lossy(&out.stderr).trim().to_string()));
        }
        Ok(out.stdout)
    }
}

impl DeviceDriver for AdbDevice {
    fn exec_shell(&mut self, line: &str) -> Result<Vec<u8>, DeviceError> {
        if !is_valid_shell_line(line) {
            return Err(DeviceError::Grammar(line.to_string()));
        }
        self.run(&["shell", line])
    }

    fn screenshot(&mut self) -> Result<Vec<u8>, DeviceError> {
        self.run(&["exec-out", "screencap", "-p"])
    }
}
