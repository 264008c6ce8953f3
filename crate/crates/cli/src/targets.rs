//! Parsing of `--device`, `--llm` and `--perception` targets.

use std::path::PathBuf;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use screensense::executor::{AdbDevice, DeviceDriver};
use screensense::grouping::IconLexicon;
use screensense::llm::{HttpLlm, LlmClient};
use screensense::simdevice::{bundled_scenario, ExampleFollowerLlm, bundled_script, DeviceSpec, LlmScript, Scenario, ScriptedLlm, SimDevice, SimPerception};
use screensense::understand::{FilePerception, PerceptionSource, SidecarClient};
use screensense::Config;

#[derive(Debug, Clone, PartialEq)]
pub enum DeviceTarget {
    /// A bundled scenario name or a scenario JSON file.
    Sim(String),
    Serial(String),
}

impl FromStr for DeviceTarget {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.split_once(':') {
            Some(("sim", name)) if !name.is_empty() => Ok(DeviceTarget::Sim(name.into())),
            Some(("serial", id)) if !id.is_empty() => Ok(DeviceTarget::Serial(id.into())),
            _ => Err(format!("expected sim:SCENARIO or serial:ID, got {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LlmTarget {
    /// A reply script file; `None` uses the simulated scenario's own script.
    Scripted(Option<PathBuf>),
    /// Follows the solution of the demonstration injected into the prompt.
    Example,
    Http(String),
}

impl FromStr for LlmTarget {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "scripted" => return Ok(LlmTarget::Scripted(None)),
            "example" => return Ok(LlmTarget::Example),
            _ => {}
        }
        match s.split_once(':') {
            Some(("scripted", p)) if !p.is_empty() => Ok(LlmTarget::Scripted(Some(p.into()))),
            // Both `http:URL` and a bare `http://...` URL are accepted.
            Some(("http", rest)) if rest.starts_with("http://") || rest.starts_with("https://") => {
                Ok(LlmTarget::Http(rest.into()))
            }
            Some(("http" | "https", rest)) if rest.starts_with("//") => Ok(LlmTarget::Http(s.into())),
            _ => Err(format!("expected scripted[:PATH], example or http:URL, got {s:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum PerceptionMode {
    Sidecar,
    File,
    Perfect,
}

pub fn load_scenario(name: &str) -> Result<Scenario> {
    if name.ends_with(".json") {
        Ok(Scenario::load(name.as_ref())?)
    } else {
        Ok(bundled_scenario(name)?)
    }
}

pub enum Device {
    Sim(SimDevice),
    Adb(AdbDevice),
}

impl Device {
    pub fn open(target: &DeviceTarget, size: Option<(u32, u32)>) -> Result<Self> {
        Ok(match target {
            DeviceTarget::Sim(name) => {
                let scenario = load_scenario(name)?;
                let (w, h) = size.unwrap_or((scenario.frame.w, scenario.frame.h));
                Device::Sim(SimDevice::new(scenario, DeviceSpec::new(w, h)))
            }
            DeviceTarget::Serial(id) => Device::Adb(AdbDevice::new(id.clone())),
        })
    }

    pub fn driver(&mut self) -> &mut dyn DeviceDriver {
        match self {
            Device::Sim(d) => d,
            Device::Adb(d) => d,
        }
    }

    pub fn sim(&self) -> Option<&SimDevice> {
        match self {
            Device::Sim(d) => Some(d),
            Device::Adb(_) => None,
        }
    }
}

pub fn perception_source(
    mode: PerceptionMode,
    files: &[PathBuf],
    device: Option<&SimDevice>,
    lexicon: &Arc<IconLexicon>,
    config: &Config,
) -> Result<Box<dyn PerceptionSource>> {
    Ok(match mode {
        PerceptionMode::Perfect => {
            let Some(d) = device else { bail!("perfect perception needs a simulated device (--device sim:NAME)") };
            Box::new(SimPerception::new(d.clone(), Some(lexicon.clone())))
        }
        PerceptionMode::File => {
            if files.is_empty() {
                bail!("--perception file needs at least one --perception-file");
            }
            Box::new(FilePerception::load(files)?)
        }
        PerceptionMode::Sidecar => {
            Box::new(SidecarClient::new(&config.sidecar.url, Duration::from_secs(config.sidecar.timeout_s)))
        }
    })
}

pub fn llm_client(target: &LlmTarget, device: &DeviceTarget, config: &Config) -> Result<Box<dyn LlmClient>> {
    Ok(match target {
        LlmTarget::Scripted(Some(path)) => {
            Box::new(ScriptedLlm::new(LlmScript::load(path).with_context(|| format!("loading {}", path.display()))?))
        }
        LlmTarget::Scripted(None) => match device {
            DeviceTarget::Sim(name) if !name.ends_with(".json") => Box::new(ScriptedLlm::new(bundled_script(name)?)),
            _ => bail!("--llm scripted without a path needs a bundled simulated scenario"),
        },
        LlmTarget::Example => Box::new(ExampleFollowerLlm::default()),
        LlmTarget::Http(url) => Box::new(HttpLlm::new(url.clone(), config.llm.retries, Duration::from_secs(config.llm.timeout_s))),
    })
}
