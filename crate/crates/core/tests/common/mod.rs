#![allow(dead_code)]

use std::sync::Arc;

use screensense::executor::ExecutorParams;
use screensense::grouping::IconLexicon;
use screensense::llm::LlmClient;
use screensense::pbd::TraceStore;
use screensense::planner::{run_task, PlannerParams, TaskContext, TaskOutcome};
use screensense::simdevice::{bundled_scenario, default_lexicon, DeviceSpec, SimDevice, SimPerception};
use screensense::understand::UnderstandParams;

pub fn lexicon() -> Arc<IconLexicon> {
    Arc::new(default_lexicon())
}

/// Executor settings for the simulator: no settle delay.
pub fn sim_executor() -> ExecutorParams {
    ExecutorParams { settle_ms: 0, ..Default::default() }
}

pub struct Run {
    pub outcome: TaskOutcome,
    pub device: SimDevice,
}

/// Runs a bundled scenario's task on a fresh simulated device.
pub fn run_scenario(
    name: &str,
    spec: DeviceSpec,
    llm: &mut dyn LlmClient,
    planner: &PlannerParams,
    store: Option<&TraceStore>,
) -> Run {
    let scenario = bundled_scenario(name).expect("bundled scenario");
    let lexicon = lexicon();
    let device = SimDevice::new(scenario.clone(), spec);
    let mut perception = SimPerception::new(device.clone(), Some(lexicon.clone()));
    let mut driver = device.clone();
    let executor = sim_executor();
    let understand = UnderstandParams::default();
    let mut ctx = TaskContext {
        device: &mut driver,
        perception: &mut perception,
        llm,
        lexicon: Some(&lexicon),
        store,
        understand: &understand,
        planner,
        executor: &executor,
        abort: None,
        on_step: None,
    };
    let outcome = run_task(&scenario.task, &mut ctx);
    Run { outcome, device }
}
