//! A scripted virtual device, synthetic screen generator and model
//! stand-ins for running the full pipeline without hardware.

pub mod device;
pub mod draw;
pub mod llm;
pub mod scenario;
pub mod synth;

pub use device::{encode_png, SimDevice, SimEventSource, SimPerception};
pub use draw::{ElementSpec, LabelPos};
pub use llm::{ExampleFollowerLlm, InjectInvalid, LlmScript, NeverCorrectLlm, PromptLog, ScriptRule, ScriptedLlm};
pub use scenario::{DeviceSpec, Scenario, ScenarioError};
pub use synth::{gen_synthetic_screen, SynthParams, SyntheticScreen};

use crate::grouping::{GroupingError, IconLexicon};

pub const DEFAULT_TEMPERATURE: f64 = 0.07;

const LEXICON_TSV: &str = include_str!("../../data/icon_lexicon.tsv");

const BUNDLED: &[(&str, &str, &str)] = &[
    (
        "settings_wlan",
        include_str!("../../scenarios/settings_wlan.json"),
        include_str!("../../scenarios/settings_wlan.script.json"),
    ),
    (
        "food_search",
        include_str!("../../scenarios/food_search.json"),
        include_str!("../../scenarios/food_search.script.json"),
    ),
    (
        "contacts_scroll",
        include_str!("../../scenarios/contacts_scroll.json"),
        include_str!("../../scenarios/contacts_scroll.script.json"),
    ),
    (
        "music_tabs",
        include_str!("../../scenarios/music_tabs.json"),
        include_str!("../../scenarios/music_tabs.script.json"),
    ),
];

pub fn bundled_scenario_names() -> Vec<&'static str> {
    BUNDLED.iter().map(|(n, _, _)| *n).collect()
}

pub fn bundled_scenario(name: &str) -> Result<Scenario, ScenarioError> {
    let (_, text, _) = BUNDLED
        .iter()
        .find(|(n, _, _)| *n == name)
        .ok_or_else(|| ScenarioError::Unknown(name.to_string()))?;
    Scenario::parse(text)
}

/// The reference reply script that completes a bundled scenario.
pub fn bundled_script(name: &str) -> Result<LlmScript, ScenarioError> {
    let (_, _, text) = BUNDLED
        .iter()
        .find(|(n, _, _)| *n == name)
        .ok_or_else(|| ScenarioError::Unknown(name.to_string()))?;
    LlmScript::parse(text).map_err(|e| ScenarioError::Format(e.to_string()))
}

pub fn default_lexicon() -> IconLexicon {
    IconLexicon::parse(LEXICON_TSV, DEFAULT_TEMPERATURE).expect("bundled lexicon is well formed")
}

pub fn lexicon_with_temperature(t: f64) -> Result<IconLexicon, GroupingError> {
    IconLexicon::parse(LEXICON_TSV, t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_data_loads() {
        let lex = default_lexicon();
        assert!(lex.entries().len() >= 150);
        for icon in ["Settings", "Search", "Share", "More options", "Add", "Delete", "Favorite", "Home"] {
            assert!(lex.embedding_of(icon).is_some(), "{icon}");
        }
        for name in bundled_scenario_names() {
            bundled_scenario(name).unwrap().validate().unwrap();
            bundled_script(name).unwrap();
        }
    }
}
