mod common;

use proptest::prelude::*;

use screensense::blocking::{assign_elements_to_blocks, divide_blocks, BlockingParams};
use screensense::executor::{
    capture_long_screenshot, is_valid_shell_line, to_device_commands, ExecutorParams, StitchedScreenshot,
};
use screensense::grouping::{
    contrastive_loss, contrastive_loss_grad, interpret_icon, match_text_to_widgets, ElementKind, ElementSource,
    IconLexicon, Provenance, UiElement,
};
use screensense::pbd::{lift_event, DeviceProfile, PbdTrace, TraceStore};
use screensense::perception::{BBox, DetectedWidget, Embedding, TextFragment, WidgetCategory};
use screensense::planner::{parse_llm_reply, AgentAction, ParsedReply, SwipeDir};
use screensense::serialize::ScreenSemantics;
use screensense::simdevice::{bundled_scenario, gen_synthetic_screen, DeviceSpec, SimDevice, SynthParams};
use screensense::blocking::SemanticBlock;

fn arb_box() -> impl Strategy<Value = BBox> {
    (0i32..900, 0i32..1900, 10i32..300, 10i32..150).prop_map(|(x, y, w, h)| BBox::from_coords(x, y, x + w, y + h))
}

fn arb_widgets() -> impl Strategy<Value = Vec<DetectedWidget>> {
    prop::collection::vec((arb_box(), 0usize..12), 0..8).prop_map(|v| {
        v.into_iter()
            .map(|(bbox, c)| DetectedWidget {
                bbox,
                category: WidgetCategory::ALL[c],
                confidence: 0.9,
                crop_id: String::new(),
            })
            .collect()
    })
}

fn arb_texts() -> impl Strategy<Value = Vec<TextFragment>> {
    prop::collection::vec(arb_box(), 0..10).prop_map(|v| {
        v.into_iter()
            .enumerate()
            .map(|(i, bbox)| TextFragment { bbox, text: format!("w{i}"), confidence: 0.99 })
            .collect()
    })
}

fn unit_vec(dim: usize) -> impl Strategy<Value = Embedding> {
    prop::collection::vec(-1.0f64..1.0, dim)
        .prop_filter("non-zero", |v| v.iter().map(|x| x * x).sum::<f64>() > 1e-3)
        .prop_map(|v| Embedding(v).normalized())
}

fn batch() -> impl Strategy<Value = (Vec<Embedding>, Vec<Embedding>, f64)> {
    (1usize..=4, 2usize..=8).prop_flat_map(|(n, d)| {
        (prop::collection::vec(unit_vec(d), n), prop::collection::vec(unit_vec(d), n), 0.05f64..1.0)
    })
}

fn element(id: u32, bbox: BBox, label: &str) -> UiElement {
    UiElement {
        id,
        bbox,
        kind: ElementKind::Widget(WidgetCategory::Button),
        label: Some(label.to_string()),
        function: None,
        source: ElementSource::Matched,
        provenance: Provenance::default(),
        crop_id: None,
    }
}

fn screen() -> BBox {
    BBox::from_coords(0, 0, 1080, 2244)
}

fn semantics(n: usize) -> ScreenSemantics {
    let labels = ["Save", "Cancel", "Search", "Share", "Profile", "Orders", "Wallet", "Help"];
    let elements: Vec<UiElement> = (0..n)
        .map(|i| element(i as u32 + 1, BBox::from_coords(40, 100 + 200 * i as i32, 1040, 260 + 200 * i as i32), labels[i % 8]))
        .collect();
    let block = SemanticBlock { element_ids: elements.iter().map(|e| e.id).collect(), ..SemanticBlock::new(screen()) };
    ScreenSemantics::new(screen(), vec![block], elements)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn matching_conserves_every_record(w in arb_widgets(), t in arb_texts(), d in 0.0f64..150.0) {
        let out = match_text_to_widgets(&w, &t, d);
        let mut widgets = vec![0; w.len()];
        let mut texts = vec![0; t.len()];
        for e in &out {
            if let Some(i) = e.provenance.widget { widgets[i] += 1; }
            for &i in &e.provenance.texts { texts[i] += 1; }
        }
        prop_assert!(widgets.iter().chain(&texts).all(|&n| n == 1));
    }

    #[test]
    fn matching_is_translation_invariant(w in arb_widgets(), t in arb_texts(), dx in 0i32..200, dy in 0i32..200) {
        let out = match_text_to_widgets(&w, &t, 43.2);
        let mw: Vec<_> = w.iter().map(|x| DetectedWidget { bbox: x.bbox.translate(dx, dy).unwrap(), ..x.clone() }).collect();
        let mt: Vec<_> = t.iter().map(|x| TextFragment { bbox: x.bbox.translate(dx, dy).unwrap(), ..x.clone() }).collect();
        let moved = match_text_to_widgets(&mw, &mt, 43.2);
        prop_assert_eq!(moved.len(), out.len());
        for (a, b) in out.iter().zip(&moved) {
            prop_assert_eq!(a.id, b.id);
            prop_assert_eq!(&a.label, &b.label);
            prop_assert_eq!(&a.provenance, &b.provenance);
            prop_assert_eq!(a.bbox.translate(dx, dy).unwrap(), b.bbox);
        }
    }

    #[test]
    fn icon_scores_are_a_distribution(entries in prop::collection::vec(unit_vec(6), 1..20), icon in unit_vec(6), tau in 0.01f64..2.0) {
        let lex = IconLexicon::new(entries.into_iter().enumerate().map(|(i, e)| (format!("d{i}"), e)).collect(), tau).unwrap();
        let scores = lex.scores(&icon).unwrap();
        prop_assert!((scores.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        let (_, best) = interpret_icon(&icon, &lex).unwrap();
        prop_assert_eq!(best, scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
    }

    #[test]
    fn contrastive_loss_is_non_negative((v, t, tau) in batch()) {
        prop_assert!(contrastive_loss(&v, &t, tau).unwrap() >= -1e-12);
    }

    #[test]
    fn gradient_matches_central_differences((v, t, tau) in batch()) {
        const H: f64 = 1e-4;
        const REL: f64 = 1e-3;
        let (gv, gt) = contrastive_loss_grad(&v, &t, tau).unwrap();
        for side in 0..2 {
            for j in 0..v.len() {
                for k in 0..v[0].dim() {
                    let bump = |delta: f64| {
                        let (mut v2, mut t2) = (v.clone(), t.clone());
                        let target = if side == 0 { &mut v2 } else { &mut t2 };
                        target[j].0[k] += delta;
                        contrastive_loss(&v2, &t2, tau).unwrap()
                    };
                    let numeric = (bump(H) - bump(-H)) / (2.0 * H);
                    let analytic = if side == 0 { gv[j][k] } else { gt[j][k] };
                    let err = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-6);
                    prop_assert!(err <= REL || (numeric - analytic).abs() <= 1e-8, "{} vs {}", numeric, analytic);
                }
            }
        }
    }

    #[test]
    fn parsed_targets_always_exist(reply in "(Tap|Click|Long press|Enter 'x' in) (the )?(Save|Help|Wallet|\\[[0-9]{1,2}\\]|Nothing|Searc)( button)?") {
        let sem = semantics(5);
        if let Ok(ParsedReply::Action(a)) = parse_llm_reply(&reply, &sem) {
            if let Some(id) = a.target_id {
                prop_assert!(sem.element(id).is_some());
            }
        }
    }

    #[test]
    fn emitted_commands_follow_the_grammar(id in 1u32..=8, text in "[ -~]{1,20}", kind in 0usize..5) {
        let sem = semantics(8);
        let shot = StitchedScreenshot {
            image: image::RgbImage::new(1080, 2244 * 2),
            tile_offsets: vec![0, 1122, 2244],
            scroll_step: 1122,
            screen_w: 1080,
            screen_h: 2244,
        };
        let action = match kind {
            0 => AgentAction::tap(id),
            1 => AgentAction::long_press(id),
            2 => AgentAction::input(id, &text),
            3 => AgentAction::swipe(SwipeDir::Down),
            _ => AgentAction::stop(),
        };
        for c in to_device_commands(&action, &sem, &shot, &ExecutorParams::default()).unwrap() {
            prop_assert!(is_valid_shell_line(&c.shell_line), "{}", c.shell_line);
        }
    }

    #[test]
    fn render_is_pure_and_lists_each_id_once(n in 0usize..8) {
        let sem = semantics(n);
        let r = sem.render();
        prop_assert_eq!(&r, &sem.render());
        for id in 1..=n {
            prop_assert_eq!(r.matches(&format!("[{id}] ")).count(), 1);
        }
        // An empty screen renders as a fixed placeholder line instead.
        if n > 1 {
            prop_assert!(semantics(n - 1).render().len() < r.len());
        }
    }

    #[test]
    fn assignment_keeps_every_element_once(els in prop::collection::vec(arb_box(), 0..12), blocks in prop::collection::vec(arb_box(), 0..5)) {
        let elements: Vec<UiElement> = els.iter().enumerate().map(|(i, b)| element(i as u32 + 1, *b, "x")).collect();
        let out = assign_elements_to_blocks(&elements, &blocks, &screen());
        let mut ids: Vec<u32> = out.iter().flat_map(|b| b.element_ids.clone()).collect();
        ids.sort();
        prop_assert_eq!(ids, (1..=elements.len() as u32).collect::<Vec<_>>());
    }

    #[test]
    fn lifting_is_deterministic_and_coordinate_free(x in 0i32..1080, y in 0i32..2244) {
        let sem = semantics(6);
        let a = lift_event(x, y, &sem);
        prop_assert_eq!(&a, &lift_event(x, y, &sem));
        prop_assert!(!a.text.chars().any(|c| c.is_ascii_digit()), "{}", a.text);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn found_blocks_are_inside_and_nested_or_disjoint(seed in 0u64..10_000) {
        let s = gen_synthetic_screen(seed, &SynthParams::default());
        let (_, blocks) = divide_blocks(&s.image, &BlockingParams::default());
        for a in &blocks {
            prop_assert!(screen().contains(a));
            for b in &blocks {
                if a != b && a.intersection(b).is_some() {
                    prop_assert!(a.contains(b) || b.contains(a), "{} vs {}", a, b);
                }
            }
        }
    }

    #[test]
    fn pipeline_is_deterministic(seed in 0u64..10_000) {
        let lex = common::lexicon();
        let s = gen_synthetic_screen(seed, &SynthParams::default());
        let png = screensense::simdevice::encode_png(&s.image);
        let run = || {
            let img = screensense::executor::decode_screenshot(&png).unwrap();
            let obs = screensense::understand::Observation::from(s.perception(Some(&lex)));
            let u = screensense::understand::understand(&obs, &img, &Default::default(), Some(&lex)).unwrap();
            serde_json::to_string(&u.semantics.blocks).unwrap()
        };
        prop_assert_eq!(run(), run());
    }
}

#[test]
fn aligned_loss_falls_as_temperature_drops() {
    let e: Vec<Embedding> = (0..3).map(|i| Embedding((0..3).map(|k| f64::from(u8::from(k == i))).collect())).collect();
    let losses: Vec<f64> = [1.0, 0.5, 0.2, 0.1, 0.05].iter().map(|&tau| contrastive_loss(&e, &e, tau).unwrap()).collect();
    assert!(losses.windows(2).all(|w| w[1] < w[0]), "{losses:?}");
}

#[test]
fn capture_requests_at_most_max_scrolls_plus_one_screenshot() {
    for name in ["contacts_scroll", "settings_wlan"] {
        let mut device = SimDevice::new(bundled_scenario(name).unwrap(), DeviceSpec::new(1080, 2244));
        let params = common::sim_executor();
        let shot = capture_long_screenshot(&mut device, &params).unwrap();
        assert!(device.screenshot_count() <= params.max_scrolls + 1);
        assert_eq!(device.offset(), 0, "{name} not scrolled back");
        for line in device.command_log() {
            assert!(is_valid_shell_line(&line), "{line}");
        }
        if name == "contacts_scroll" {
            assert_eq!(shot.image.height(), 6732);
            assert_eq!(shot.image, device.render_page());
        }
    }
}

#[test]
fn trace_store_round_trip_is_lossless() {
    let dir = tempfile::tempdir().unwrap();
    let store = TraceStore::open(dir.path()).unwrap();
    let t = PbdTrace::new(
        "Turn on WLAN",
        vec!["Tap Settings image in Apps".into(), "Tap wlan button (uncertain)".into()],
        DeviceProfile { w: 1080, h: 2244 },
        chrono::DateTime::from_timestamp(1_700_000_000, 0).unwrap(),
    )
    .unwrap();
    store.save(&t).unwrap();
    assert_eq!(store.load("turn on  WLAN").unwrap(), Some(t));
}

#[test]
fn run_task_is_reproducible() {
    use screensense::simdevice::{bundled_script, ScriptedLlm};
    let once = || {
        let mut llm = ScriptedLlm::new(bundled_script("food_search").unwrap());
        let run = common::run_scenario("food_search", DeviceSpec::new(1080, 2244), &mut llm, &Default::default(), None);
        (serde_json::to_string(&run.outcome).unwrap(), run.device.command_log(), llm.log.prompts())
    };
    assert_eq!(once(), once());
}
