//! All tunables in one document, loadable from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::executor::ExecutorParams;
use crate::planner::PlannerParams;
use crate::understand::UnderstandParams;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ConfigError {
    #[error("config parse: {0}")]
    Parse(String),
    #[error("config io: {0}")]
    Io(String),
    #[error("config value {key} = {value} outside {range}")]
    Range { key: &'static str, value: String, range: &'static str },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmConfig {
    pub url: Option<String>,
    pub retries: u32,
    pub timeout_s: u64,
}

impl Default for LlmConfig {
    fn default() -> Self {
        LlmConfig { url: None, retries: 2, timeout_s: 60 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SidecarConfig {
    pub url: String,
    pub timeout_s: u64,
}

impl Default for SidecarConfig {
    fn default() -> Self {
        SidecarConfig { url: "http://127.0.0.1:8700".into(), timeout_s: 30 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LexiconConfig {
    /// TSV file of descriptions and embeddings; the bundled file when unset.
    pub path: Option<PathBuf>,
    pub temperature: f64,
}

impl Default for LexiconConfig {
    fn default() -> Self {
        LexiconConfig { path: None, temperature: crate::simdevice::DEFAULT_TEMPERATURE }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PbdConfig {
    pub store_dir: PathBuf,
}

impl Default for PbdConfig {
    fn default() -> Self {
        PbdConfig { store_dir: PathBuf::from("pbd_traces") }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub understand: UnderstandParams,
    pub planner: PlannerParams,
    pub executor: ExecutorParams,
    pub llm: LlmConfig,
    pub sidecar: SidecarConfig,
    pub lexicon: LexiconConfig,
    pub pbd: PbdConfig,
}

fn check<T: PartialOrd + std::fmt::Display>(
    key: &'static str,
    v: T,
    ok: bool,
    range: &'static str,
) -> Result<(), ConfigError> {
    if ok {
        Ok(())
    } else {
        Err(ConfigError::Range { key, value: v.to_string(), range })
    }
}

fn unit(key: &'static str, v: f64) -> Result<(), ConfigError> {
    check(key, v, (0.0..=1.0).contains(&v), "[0, 1]")
}

fn positive(key: &'static str, v: f64) -> Result<(), ConfigError> {
    check(key, v, v > 0.0 && v.is_finite(), "(0, inf)")
}

impl Config {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let c: Config = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let u = &self.understand;
        unit("understand.text_threshold", u.text_threshold)?;
        check("understand.max_dist_frac", u.max_dist_frac, u.max_dist_frac > 0.0 && u.max_dist_frac <= 0.5, "(0, 0.5]")?;
        unit("understand.element_outline_iou", u.element_outline_iou)?;
        let b = &u.blocking;
        check("understand.blocking.top_colors", b.top_colors, (1..=256).contains(&b.top_colors), "[1, 256]")?;
        check("understand.blocking.t_grad", b.t_grad, b.t_grad > 0.0 && b.t_grad < 255.0, "(0, 255)")?;
        positive("understand.blocking.gaussian_sigma", b.gaussian_sigma)?;
        positive("understand.blocking.canny_low", b.canny_low)?;
        check("understand.blocking.canny_high", b.canny_high, b.canny_high >= b.canny_low, "[canny_low, inf)")?;
        unit("understand.blocking.min_segment_frac", b.min_segment_frac)?;
        unit("understand.blocking.join_tol_frac", b.join_tol_frac)?;
        let t = &b.tab_bar;
        unit("understand.blocking.tab_bar.bottom_frac", t.bottom_frac)?;
        unit("understand.blocking.tab_bar.min_width_frac", t.min_width_frac)?;
        check("understand.blocking.tab_bar.min_items", t.min_items, t.min_items >= 2, "[2, max_items]")?;
        check("understand.blocking.tab_bar.max_items", t.max_items, t.max_items >= t.min_items, "[min_items, inf)")?;
        unit("understand.blocking.tab_bar.spacing_tolerance", t.spacing_tolerance)?;
        check("understand.blocking.tab_bar.hue_bins", t.hue_bins, (2..=360).contains(&t.hue_bins), "[2, 360]")?;
        check("understand.blocking.tab_bar.separation", t.separation, (0.0..=2.0).contains(&t.separation), "[0, 2]")?;
        unit("understand.blocking.tab_bar.min_saturation", t.min_saturation)?;
        unit("understand.blocking.tab_bar.min_value", t.min_value)?;
        let p = &self.planner;
        check("planner.step_limit", p.step_limit, p.step_limit >= 1, "[1, inf)")?;
        unit("planner.pbd_similarity", p.pbd_similarity)?;
        check("planner.role_prompt", "(empty)", !p.role_prompt.trim().is_empty(), "non-empty text")?;
        let e = &self.executor;
        check("executor.swipe_ms", e.swipe_ms, e.swipe_ms >= 1, "[1, inf)")?;
        check("executor.long_press_ms", e.long_press_ms, e.long_press_ms >= 500, "[500, inf)")?;
        check("llm.timeout_s", self.llm.timeout_s, self.llm.timeout_s >= 1, "[1, inf)")?;
        check("sidecar.timeout_s", self.sidecar.timeout_s, self.sidecar.timeout_s >= 1, "[1, inf)")?;
        positive("lexicon.temperature", self.lexicon.temperature)?;
        Ok(())
    }

    pub fn load_lexicon(&self) -> Result<crate::grouping::IconLexicon, crate::grouping::GroupingError> {
        match &self.lexicon.path {
            Some(p) => crate::grouping::IconLexicon::load(p, self.lexicon.temperature),
            None => crate::simdevice::lexicon_with_temperature(self.lexicon.temperature),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_and_validate() {
        let c = Config::default();
        c.validate().unwrap();
        assert_eq!(Config::parse(&c.to_toml()).unwrap(), c);
        assert_eq!(Config::parse("").unwrap(), c);
        assert_eq!(c.understand.text_threshold, 0.95);
        assert_eq!(c.llm.retries, 2);
        assert_eq!(c.llm.timeout_s, 60);
        assert_eq!(c.executor.settle_ms, 1500);
        assert_eq!(c.lexicon.temperature, 0.07);
    }

    #[test]
    fn partial_override_and_rejections() {
        let c = Config::parse("[understand.blocking]\nt_grad = 12.5\n").unwrap();
        assert_eq!(c.understand.blocking.t_grad, 12.5);
        assert_eq!(c.understand.blocking.top_colors, 8);
        assert!(matches!(Config::parse("[understand]\ntext_threshold = 1.5\n"), Err(ConfigError::Range { .. })));
        assert!(matches!(Config::parse("[lexicon]\ntemperature = 0.0\n"), Err(ConfigError::Range { .. })));
        assert!(matches!(Config::parse("bogus = 1\n"), Err(ConfigError::Parse(_))));
    }
}
