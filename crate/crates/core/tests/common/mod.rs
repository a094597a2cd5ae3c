//! Helpers shared by the integration tests and the acceptance harness.
#![allow(dead_code)]

pub mod server;

use std::sync::Arc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use scenecot::grpo::{compute_group_advantages, grpo_loss, sft_loss, GrpoConfig, Policy, TokenId, ToyPolicy};
use scenecot::reward::clients::{CountingClients, FixedScoringClients};
use scenecot::reward::RewardEngine;
use scenecot::vision::{
    Entity, Region, Relation, StructuredVisionState, FINAL_PROMPT_CLOSE, FINAL_PROMPT_OPEN, STRUCTURE_VISION_CLOSE,
    STRUCTURE_VISION_OPEN,
};

// ---------------------------------------------------------------------------
// Structured-vision generators

const NAMES: &[&str] = &["cat", "dog", "red \"kite\"", "tree", "café", "line\nbreak", "tab\there", "house"];
const KEYS: &[&str] = &["color", "size", "material", "mood", "pose"];
const VALUES: &[&str] = &["red", "small", "wood", "calm", "sitting", "ünïcode", "a/b\\c"];
const PREDICATES: &[&str] = &["on", "left of", "behind", "holding", "next to"];

fn region_strategy() -> impl Strategy<Value = Region> {
    (0.0f64..0.99, 0.0f64..0.99, 0.0f64..1.0, 0.0f64..1.0, 0u32..6).prop_map(|(x0, y0, fx, fy, depth)| {
        // stretch the second coordinate into (x0, 1] so the box is never empty
        let x1 = x0 + (1.0 - x0) * fx.max(0.01);
        let y1 = y0 + (1.0 - y0) * fy.max(0.01);
        Region::new(x0, y0, x1, y1, depth)
    })
}

fn entity_strategy(id: String) -> impl Strategy<Value = Entity> {
    (
        prop::sample::select(NAMES),
        prop::sample::subsequence(KEYS.to_vec(), 0..=3),
        prop::collection::vec(prop::sample::select(VALUES), 3),
        1u64..5,
    )
        .prop_map(move |(name, keys, values, count)| {
            let mut e = Entity::new(id.clone(), name).with_count(count);
            for (k, v) in keys.into_iter().zip(values) {
                e = e.with_attribute(k, v);
            }
            e
        })
}

/// Random states that satisfy every invariant under the default options.
pub fn valid_state() -> impl Strategy<Value = StructuredVisionState> {
    (1usize..6)
        .prop_flat_map(|n| {
            let ids: Vec<String> = (0..n).map(|i| format!("e{i}_{}", ["a", "b", "c"][i % 3])).collect();
            let entities: Vec<_> = ids.iter().cloned().map(entity_strategy).collect();
            let relations = prop::collection::vec((0..n, 0..n, prop::sample::select(PREDICATES)), 0..5);
            let layout = prop::collection::vec((0..n, region_strategy()), 0..=n);
            let style = prop::option::of(prop::sample::select(&["watercolor", "photo", "flat vector"][..]));
            (Just(ids), entities, relations, layout, style)
        })
        .prop_map(|(ids, entities, relations, layout, style)| {
            let mut state = StructuredVisionState::new(entities);
            let mut seen = std::collections::BTreeSet::new();
            for (s, o, p) in relations {
                if s != o && seen.insert((s, o, p)) {
                    state = state.with_relation(Relation::new(ids[s].clone(), p, ids[o].clone()));
                }
            }
            for (i, region) in layout {
                state = state.with_region(ids[i].clone(), region);
            }
            if let Some(style) = style {
                state = state.with_style(style);
            }
            state
        })
}

/// One single-invariant fault applied to a serialized valid state, with the
/// JSON path of the mutated field.
pub fn inject_fault(value: &mut Value, choice: usize) -> Option<String> {
    let entities = value["entities"].as_array().map_or(0, Vec::len);
    let relations = value["relations"].as_array().map_or(0, Vec::len);
    let layout_keys: Vec<String> =
        value["layout"].as_object().map(|m| m.keys().cloned().collect()).unwrap_or_default();
    let i = choice / 16 % entities.max(1);
    match choice % 10 {
        0 => {
            value["entities"][i]["count"] = Value::from(0);
            Some(format!("$.entities[{i}].count"))
        }
        1 => {
            value["entities"][i]["name"] = Value::from("");
            Some(format!("$.entities[{i}].name"))
        }
        2 => {
            let attrs = value["entities"][i]["attributes"].as_array_mut()?;
            let key = attrs.first().map_or(Value::from("k"), |a| a[0].clone());
            if attrs.is_empty() {
                attrs.push(serde_json::json!([key.clone(), "x"]));
            }
            attrs.push(serde_json::json!([key, "y"]));
            Some(format!("$.entities[{i}].attributes[{}]", attrs.len() - 1))
        }
        3 => {
            value["entities"][i]["id"] = Value::from("Bad-Id");
            Some(format!("$.entities[{i}].id"))
        }
        4 => {
            value["entities"][i]["colour"] = Value::from("red");
            Some(format!("$.entities[{i}].colour"))
        }
        5 if relations > 0 => {
            let r = choice / 16 % relations;
            value["relations"][r]["object"] = Value::from("zz_missing");
            Some(format!("$.relations[{r}].object"))
        }
        6 if relations > 0 => {
            let r = choice / 16 % relations;
            let subject = value["relations"][r]["subject"].clone();
            value["relations"][r]["object"] = subject;
            Some(format!("$.relations[{r}].object"))
        }
        7 if !layout_keys.is_empty() => {
            let k = &layout_keys[choice / 16 % layout_keys.len()];
            let x1 = value["layout"][k]["x1"].clone();
            value["layout"][k]["x0"] = x1;
            Some(format!("$.layout.{k}.x0"))
        }
        8 if !layout_keys.is_empty() => {
            let k = &layout_keys[choice / 16 % layout_keys.len()];
            value["layout"][k]["depth"] = Value::from(-1);
            Some(format!("$.layout.{k}.depth"))
        }
        9 if !layout_keys.is_empty() => {
            let k = &layout_keys[choice / 16 % layout_keys.len()];
            let region = value["layout"].as_object_mut()?.remove(k)?;
            value["layout"]["zz_missing"] = region;
            Some("$.layout.zz_missing".to_string())
        }
        _ => None,
    }
}

/// True when `prefix` is `path` or an ancestor of it.
pub fn path_prefixes(prefix: &str, path: &str) -> bool {
    path == prefix
        || (path.starts_with(prefix) && matches!(path.as_bytes().get(prefix.len()), Some(b'.') | Some(b'[')))
}

// ---------------------------------------------------------------------------
// Parser oracle

/// Token alphabet for the exhaustive agreement check: the four tag literals
/// plus two fillers, one of which is a tag's first byte.
pub const PARSER_ALPHABET: [&str; 6] =
    [STRUCTURE_VISION_OPEN, STRUCTURE_VISION_CLOSE, FINAL_PROMPT_OPEN, FINAL_PROMPT_CLOSE, "x", "<"];

/// Reference matcher: scans every byte offset for each literal and applies
/// the presence rule directly.
pub fn oracle_section(raw: &str, open: &str, close: &str) -> Option<String> {
    let bytes = raw.as_bytes();
    let find_all = |needle: &str| -> Vec<usize> {
        let n = needle.as_bytes();
        (0..bytes.len()).filter(|&i| bytes[i..].starts_with(n)).collect()
    };
    let (opens, closes) = (find_all(open), find_all(close));
    if opens.len() == 1 && closes.len() == 1 && opens[0] + open.len() <= closes[0] {
        Some(raw[opens[0] + open.len()..closes[0]].to_string())
    } else {
        None
    }
}

/// Whether the oracle expects extraction notes: any section whose tags are
/// neither absent nor a single ordered pair.
pub fn oracle_expects_notes(raw: &str) -> bool {
    [(STRUCTURE_VISION_OPEN, STRUCTURE_VISION_CLOSE), (FINAL_PROMPT_OPEN, FINAL_PROMPT_CLOSE)]
        .iter()
        .any(|(o, c)| oracle_section(raw, o, c).is_none() && (raw.contains(o) || raw.contains(c)))
}

/// Every token string over [`PARSER_ALPHABET`] with up to `max_len` tokens.
pub fn enumerate_tag_strings(max_len: usize) -> impl Iterator<Item = String> {
    let k = PARSER_ALPHABET.len();
    (0..=max_len).flat_map(move |len| {
        (0..k.pow(len as u32)).map(move |mut code| {
            let mut s = String::new();
            for _ in 0..len {
                s.push_str(PARSER_ALPHABET[code % k]);
                code /= k;
            }
            s
        })
    })
}

/// Checks one string against the oracle; returns a description on mismatch.
pub fn check_against_oracle(raw: &str) -> Result<(), String> {
    let got = scenecot::parser::extract_tagged_sections(raw);
    let sv = oracle_section(raw, STRUCTURE_VISION_OPEN, STRUCTURE_VISION_CLOSE);
    let fp = oracle_section(raw, FINAL_PROMPT_OPEN, FINAL_PROMPT_CLOSE);
    if got.structure_vision_raw != sv || got.final_prompt_raw != fp {
        return Err(format!("{raw:?}: sections {:?}/{:?}, oracle {sv:?}/{fp:?}", got.structure_vision_raw, got.final_prompt_raw));
    }
    if got.extraction_notes.is_empty() == oracle_expects_notes(raw) {
        return Err(format!("{raw:?}: notes {:?} disagree with oracle", got.extraction_notes));
    }
    if got.raw != raw {
        return Err(format!("{raw:?}: raw text was modified"));
    }
    Ok(())
}

/// Random bytes biased toward tag fragments so fuzzing reaches tag logic.
pub fn fuzz_bytes(rng: &mut ChaCha8Rng) -> Vec<u8> {
    let len = rng.gen_range(0..96);
    let mut out = Vec::with_capacity(len * 4);
    while out.len() < len {
        match rng.gen_range(0..6) {
            0 => out.extend_from_slice(PARSER_ALPHABET[rng.gen_range(0..4)].as_bytes()),
            1 => {
                let tag = PARSER_ALPHABET[rng.gen_range(0..4)].as_bytes();
                let cut = rng.gen_range(0..tag.len());
                out.extend_from_slice(&tag[..cut]);
            }
            _ => out.push(rng.gen()),
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Gradient checks

/// Central finite-difference step.
pub const FD_STEP: f64 = 1e-5;

fn random_tokens(rng: &mut ChaCha8Rng, min: usize, max: usize) -> Vec<TokenId> {
    let n = rng.gen_range(min..=max);
    (0..n).map(|_| rng.gen_range(0..64)).collect()
}

/// Indices worth differencing: every coordinate with a nonzero analytic
/// gradient plus a few random ones, which must come out zero.
fn probe_indices(rng: &mut ChaCha8Rng, grad: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = grad.iter().enumerate().filter(|(_, g)| **g != 0.0).map(|(i, _)| i).collect();
    idx.extend((0..16).map(|_| rng.gen_range(0..grad.len())));
    idx
}

/// `terms` splits the loss into summands. Differencing each summand before
/// adding keeps the cancellation error at the scale of one term rather than
/// of the whole loss.
fn max_relative_error(
    policy: &mut ToyPolicy,
    grad: &[f64],
    indices: &[usize],
    terms: impl Fn(&ToyPolicy) -> Vec<f64>,
) -> f64 {
    let mut worst: f64 = 0.0;
    for &i in indices {
        let original = policy.params()[i];
        policy.params_mut()[i] = original + FD_STEP;
        let up = terms(policy);
        policy.params_mut()[i] = original - FD_STEP;
        let down = terms(policy);
        policy.params_mut()[i] = original;
        let numeric = up.iter().zip(&down).map(|(u, d)| u - d).sum::<f64>() / (2.0 * FD_STEP);
        let err = (numeric - grad[i]).abs() / (numeric.abs() + grad[i].abs()).max(1e-6);
        worst = worst.max(err);
    }
    worst
}

/// Max relative error of the SFT gradient on one random configuration.
pub fn sft_gradient_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut policy = ToyPolicy::random(rng.gen_range(2..=12), rng.gen(), rng.gen_range(0.1..1.5));
    let prompt = random_tokens(&mut rng, 0, 5);
    let target = random_tokens(&mut rng, 1, 12);
    let (loss, grad) = sft_loss(&policy, &prompt, &target).unwrap();
    let summed: f64 = policy.logprobs(&prompt, &target).unwrap().iter().map(|lp| -lp).sum();
    assert_eq!(loss, summed, "sft_loss is not the summed per-token NLL");
    let indices = probe_indices(&mut rng, &grad);
    // the summed NLL is the sum of the per-token negative log-probs
    max_relative_error(&mut policy, &grad, &indices, |p| {
        p.logprobs(&prompt, &target).unwrap().iter().map(|lp| -lp).collect()
    })
}

/// Max relative error of the GRPO gradient, composed through the policy's
/// vector-Jacobian product, on one random configuration. Old log-probs are
/// kept away from the clip boundaries, where the loss has a kink.
pub fn grpo_gradient_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut policy = ToyPolicy::random(rng.gen_range(2..=12), rng.gen(), rng.gen_range(0.1..1.5));
    let config = GrpoConfig {
        kl_coef: rng.gen_range(0.0..0.3),
        clip_eps: rng.gen_range(0.1..0.3),
        ..GrpoConfig::default()
    };
    let g = rng.gen_range(2..=8);
    let prompt = random_tokens(&mut rng, 0, 4);
    let completions: Vec<Vec<TokenId>> = (0..g).map(|_| random_tokens(&mut rng, 1, 8)).collect();
    let new: Vec<Vec<f64>> = completions.iter().map(|c| policy.logprobs(&prompt, c).unwrap()).collect();
    let (lo, hi) = ((1.0 - config.clip_eps).ln(), (1.0 + config.clip_eps).ln());
    let mut perturb = |lp: &[f64], spread: f64, avoid_kinks: bool| -> Vec<f64> {
        lp.iter()
            .map(|x| loop {
                let shift: f64 = rng.gen_range(-spread..spread);
                // the ratio's log is -shift; stay 1e-3 away from ln(1 ± ε)
                if !avoid_kinks || ((-shift - lo).abs() > 1e-3 && (-shift - hi).abs() > 1e-3) {
                    break x + shift;
                }
            })
            .collect()
    };
    let old: Vec<Vec<f64>> = new.iter().map(|lp| perturb(lp, 0.5, true)).collect();
    let reference: Vec<Vec<f64>> = new.iter().map(|lp| perturb(lp, 0.8, false)).collect();
    let rewards: Vec<f64> = (0..g).map(|_| rng.gen_range(0.0..1.0)).collect();
    let advantages = compute_group_advantages(&rewards, 1e-8).unwrap();

    let loss_of = |p: &ToyPolicy| -> Vec<f64> {
        let lp: Vec<Vec<f64>> = completions.iter().map(|c| p.logprobs(&prompt, c).unwrap()).collect();
        vec![grpo_loss(&lp, &old, &reference, &advantages, &config).unwrap().0]
    };
    let (_, upstream) = grpo_loss(&new, &old, &reference, &advantages, &config).unwrap();
    let mut grad = vec![0.0; policy.params().len()];
    for (c, u) in completions.iter().zip(&upstream) {
        for (acc, v) in grad.iter_mut().zip(policy.logprob_vjp(&prompt, c, u).unwrap()) {
            *acc += v;
        }
    }
    let indices = probe_indices(&mut rng, &grad);
    max_relative_error(&mut policy, &grad, &indices, loss_of)
}

// ---------------------------------------------------------------------------
// Reward fixtures

pub const VALID_STATE: &str = r#"{"entities":[{"id":"cat_1","name":"cat"}]}"#;

/// A rollout text realizing the given format flags, when one exists. Both
/// r_json and r_prompt need their section, and both sections present means
/// r_label = 1, so (0, 1, 1) has no textual realization.
pub fn rollout_for_flags(label: bool, json: bool, prompt: bool) -> Option<String> {
    let sv = |ok: bool| format!("{STRUCTURE_VISION_OPEN}{}{STRUCTURE_VISION_CLOSE}", if ok { VALID_STATE } else { "{" });
    let fp = |ok: bool| format!("{FINAL_PROMPT_OPEN}{}{FINAL_PROMPT_CLOSE}", if ok { "a red cat" } else { "  " });
    let text = match (label, json, prompt) {
        (true, j, p) => format!("thinking {}{}", sv(j), fp(p)),
        (false, true, false) => format!("thinking {}", sv(true)),
        (false, false, true) => format!("thinking {}", fp(true)),
        (false, false, false) => "thinking only".to_string(),
        (false, true, true) => return None,
    };
    Some(text)
}

/// One fixture row with its hand-derived final reward.
#[derive(Debug, Clone)]
pub struct RewardFixture {
    pub flags: (bool, bool, bool),
    pub judge: [i64; 3],
    pub hps: f64,
    pub vlm: f64,
    pub expected_format: f64,
    pub expected_final: f64,
}

/// Judge triples with their understanding reward and image pairs with their
/// image reward, each worked out by hand.
pub const TRIPLES: [([i64; 3], f64); 3] = [([2, 2, 2], 1.0), ([1, 2, 0], 0.5), ([0, 1, 1], 1.0 / 3.0)];
pub const PAIRS: [((f64, f64), f64); 3] = [((1.0, 1.0), 1.0), ((0.5, 0.25), 0.4), ((0.8, 0.3), 0.6)];

pub fn reward_fixtures() -> Vec<RewardFixture> {
    let format_of = [
        ((true, true, true), 1.0),
        ((true, true, false), 0.8),
        ((true, false, true), 0.6),
        ((false, true, true), 0.6),
        ((true, false, false), 0.4),
        ((false, true, false), 0.4),
        ((false, false, true), 0.2),
        ((false, false, false), 0.0),
    ];
    let mut rows = Vec::new();
    for (flags, expected_format) in format_of {
        for (judge, u) in TRIPLES {
            for ((hps, vlm), i) in PAIRS {
                let expected_final = if expected_format >= 0.6 { 0.3 * u + 0.7 * i } else { 0.0 };
                rows.push(RewardFixture { flags, judge, hps, vlm, expected_format, expected_final });
            }
        }
    }
    rows
}

pub fn counting_engine(judge: [i64; 3], hps: f64, vlm: f64) -> (RewardEngine, Arc<CountingClients<FixedScoringClients>>) {
    let clients = Arc::new(CountingClients::new(FixedScoringClients::new(judge, hps, vlm)));
    (RewardEngine::new(clients.clone()), clients)
}

/// Random rollout assembled from tag fragments, JSON bodies and prompts.
pub fn random_rollout(rng: &mut ChaCha8Rng) -> String {
    let bodies = [VALID_STATE, "{", "{}", "[1,2]", r#"{"entities":[]}"#, "not json", ""];
    let prompts = ["a red cat", "", "   ", "x"];
    let mut s = String::from(["", "think ", "<structure", "plan: "][rng.gen_range(0..4)]);
    let sv_opens = [0, 1, 1, 1, 2][rng.gen_range(0..5)];
    let sv_closes = [0, 1, 1, 1, 2][rng.gen_range(0..5)];
    for _ in 0..sv_opens {
        s.push_str(STRUCTURE_VISION_OPEN);
    }
    s.push_str(bodies[rng.gen_range(0..bodies.len())]);
    for _ in 0..sv_closes {
        s.push_str(STRUCTURE_VISION_CLOSE);
    }
    if rng.gen_bool(0.1) {
        s.insert_str(0, FINAL_PROMPT_CLOSE);
    }
    let fp_present = rng.gen_bool(0.75);
    if fp_present {
        s.push_str(FINAL_PROMPT_OPEN);
        s.push_str(prompts[rng.gen_range(0..prompts.len())]);
        s.push_str(FINAL_PROMPT_CLOSE);
    }
    s
}
