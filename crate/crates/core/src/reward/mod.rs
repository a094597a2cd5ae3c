//! The reward stack: format, understanding and image rewards, and the gated
//! final reward that combines them.
//!
//! ```text
//! r_format        = 0.4·r_label + 0.4·r_json + 0.2·r_prompt
//! r_understanding = (r_perception + r_completeness + r_faithfulness) / 6
//! r_image         = 0.6·r_hps + 0.4·r_vlm
//! r_final         = [r_format ≥ 0.6] · (0.3·r_understanding + 0.7·r_image)
//! ```
//!
//! A rollout that fails the gate is never sent to the judge, the generator
//! or the image scorer.

pub mod clients;
mod engine;
pub mod http;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::parser::TaggedOutput;
use crate::vision::{SchemaOptions, ValidationReport};

pub use engine::{PartialBreakdown, RewardEngine, ScoringError, Stage};

pub const GATE_THRESHOLD: f64 = 0.6;

pub const W_LABEL: f64 = 0.4;
pub const W_JSON: f64 = 0.4;
pub const W_PROMPT: f64 = 0.2;
pub const W_HPS: f64 = 0.6;
pub const W_VLM: f64 = 0.4;
pub const W_UNDERSTANDING: f64 = 0.3;
pub const W_IMAGE: f64 = 0.7;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RewardError {
    #[error("{name} = {value} is outside [0, 1]")]
    OutOfRange { name: &'static str, value: f64 },
    #[error("gate passed but the {0} component is missing")]
    MissingComponent(&'static str),
    #[error("invalid reward configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FormatComponents {
    pub r_label: u8,
    pub r_json: u8,
    pub r_prompt: u8,
    pub r_format: f64,
}

impl FormatComponents {
    pub fn from_flags(label: bool, json: bool, prompt: bool) -> Self {
        let (r_label, r_json, r_prompt) = (label as u8, json as u8, prompt as u8);
        // summed in integer tenths so 0.6 lands exactly on the gate threshold
        let tenths = 4 * u32::from(r_label) + 4 * u32::from(r_json) + 2 * u32::from(r_prompt);
        let r_format = f64::from(tenths) / 10.0;
        Self { r_label, r_json, r_prompt, r_format }
    }

    pub fn passes_gate(&self) -> bool {
        self.r_format >= GATE_THRESHOLD
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnderstandingComponents {
    pub r_perception: u8,
    pub r_completeness: u8,
    pub r_faithfulness: u8,
    pub r_understanding: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageComponents {
    pub r_hps: f64,
    pub r_vlm: f64,
    pub r_image: f64,
}

/// Judge output after clamping into `{0, 1, 2}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeScores {
    pub perception: u8,
    pub completeness: u8,
    pub faithfulness: u8,
}

impl JudgeScores {
    pub fn clamped(perception: i64, completeness: i64, faithfulness: i64) -> Self {
        let c = |v: i64| v.clamp(0, 2) as u8;
        Self { perception: c(perception), completeness: c(completeness), faithfulness: c(faithfulness) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub format: FormatComponents,
    pub understanding: Option<UnderstandingComponents>,
    pub image: Option<ImageComponents>,
    pub gate_passed: bool,
    pub r_final: f64,
    pub external_calls_made: u32,
}

/// Reward toggles. The defaults reproduce the full gated reward; the
/// switches exist for ablations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    /// Count schema violations against `r_json`, not just malformed JSON.
    pub strict_json_schema: bool,
    /// Gated-out rollouts receive `coef · r_format` instead of 0.
    pub gated_format_shaping_coef: f64,
    pub understanding: bool,
    pub image: bool,
    /// When false every rollout passes the gate.
    pub format_gate: bool,
    pub schema: SchemaOptions,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            strict_json_schema: false,
            gated_format_shaping_coef: 0.0,
            understanding: true,
            image: true,
            format_gate: true,
            schema: SchemaOptions::default(),
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<(), RewardError> {
        if !self.understanding && !self.image {
            return Err(RewardError::Config("at least one of understanding/image must be enabled".into()));
        }
        if !(0.0..=1.0).contains(&self.gated_format_shaping_coef) {
            return Err(RewardError::Config("gated_format_shaping_coef must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// Weights of the understanding and image terms, renormalized when one
    /// of them is switched off.
    pub fn weights(&self) -> (f64, f64) {
        match (self.understanding, self.image) {
            (true, true) => (W_UNDERSTANDING, W_IMAGE),
            (true, false) => (1.0, 0.0),
            (false, true) => (0.0, 1.0),
            (false, false) => (0.0, 0.0),
        }
    }

    pub fn gate(&self, format: &FormatComponents) -> bool {
        !self.format_gate || format.passes_gate()
    }
}

/// `json_report` must come from the same tagged output. Under the default,
/// `r_json` only asks for well-formed JSON; `strict_json_schema` also
/// requires a schema-valid state.
pub fn format_reward(tagged: &TaggedOutput, json_report: &ValidationReport, strict_json_schema: bool) -> FormatComponents {
    let label = tagged.structure_vision_raw.is_some() && tagged.final_prompt_raw.is_some();
    let json = tagged.structure_vision_raw.is_some()
        && if strict_json_schema { json_report.valid } else { json_report.well_formed() };
    let prompt = tagged.final_prompt().is_some_and(|p| !p.is_empty());
    FormatComponents::from_flags(label, json, prompt)
}

pub fn understanding_reward(scores: JudgeScores) -> UnderstandingComponents {
    let (p, c, f) = (scores.perception.min(2), scores.completeness.min(2), scores.faithfulness.min(2));
    UnderstandingComponents {
        r_perception: p,
        r_completeness: c,
        r_faithfulness: f,
        r_understanding: (p as f64 + c as f64 + f as f64) / 6.0,
    }
}

pub fn image_reward(hps: f64, vlm: f64) -> Result<ImageComponents, RewardError> {
    for (name, value) in [("hps", hps), ("vlm", vlm)] {
        if !(0.0..=1.0).contains(&value) {
            return Err(RewardError::OutOfRange { name, value });
        }
    }
    Ok(ImageComponents { r_hps: hps, r_vlm: vlm, r_image: W_HPS * hps + W_VLM * vlm })
}

pub fn final_reward(
    format: &FormatComponents,
    understanding: Option<&UnderstandingComponents>,
    image: Option<&ImageComponents>,
) -> Result<f64, RewardError> {
    final_reward_with(format, understanding, image, &RewardConfig::default())
}

pub fn final_reward_with(
    format: &FormatComponents,
    understanding: Option<&UnderstandingComponents>,
    image: Option<&ImageComponents>,
    config: &RewardConfig,
) -> Result<f64, RewardError> {
    if !config.gate(format) {
        return Ok(config.gated_format_shaping_coef * format.r_format);
    }
    let (wu, wi) = config.weights();
    let mut total = 0.0;
    if config.understanding {
        total += wu * understanding.ok_or(RewardError::MissingComponent("understanding"))?.r_understanding;
    }
    if config.image {
        total += wi * image.ok_or(RewardError::MissingComponent("image"))?.r_image;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::extract_tagged_sections;
    use crate::parser::parse_structured_vision;

    fn format_of(text: &str) -> FormatComponents {
        let tagged = extract_tagged_sections(text);
        let (report, _) = parse_structured_vision(&tagged, &SchemaOptions::default());
        format_reward(&tagged, &report, false)
    }

    #[test]
    fn format_examples() {
        let full = format_of("<structure vision>{}</structure vision><final prompt>a cat</final prompt>");
        assert_eq!((full.r_label, full.r_json, full.r_prompt), (1, 1, 1));
        assert!((full.r_format - 1.0).abs() <= 1e-12);

        let sv_only = format_of("<structure vision>{}</structure vision>");
        assert_eq!((sv_only.r_label, sv_only.r_json, sv_only.r_prompt), (0, 1, 0));
        assert!((sv_only.r_format - 0.4).abs() <= 1e-12);

        let bad_json = format_of("<structure vision>{</structure vision><final prompt>a cat</final prompt>");
        assert_eq!((bad_json.r_label, bad_json.r_json, bad_json.r_prompt), (1, 0, 1));
        assert!((bad_json.r_format - 0.6).abs() <= 1e-12);
        assert!(bad_json.passes_gate());
    }

    #[test]
    fn blank_prompt_is_empty() {
        let f = format_of("<structure vision>1</structure vision><final prompt> \n </final prompt>");
        assert_eq!((f.r_label, f.r_json, f.r_prompt), (1, 1, 0));
    }

    #[test]
    fn strict_schema_folds_into_json() {
        let text = r#"<structure vision>{"entities":[]}</structure vision><final prompt>x</final prompt>"#;
        let tagged = extract_tagged_sections(text);
        let (report, _) = parse_structured_vision(&tagged, &SchemaOptions::default());
        assert_eq!(format_reward(&tagged, &report, false).r_json, 1);
        assert_eq!(format_reward(&tagged, &report, true).r_json, 0);
    }

    #[test]
    fn understanding_examples() {
        let u = |p, c, f| understanding_reward(JudgeScores::clamped(p, c, f)).r_understanding;
        assert_eq!(u(2, 2, 2), 1.0);
        assert_eq!(u(0, 0, 0), 0.0);
        assert!((u(1, 2, 0) - 0.5).abs() <= 1e-12);
        assert_eq!(u(7, -3, 2), u(2, 0, 2));
    }

    #[test]
    fn image_examples() {
        assert_eq!(image_reward(1.0, 1.0).unwrap().r_image, 1.0);
        assert_eq!(image_reward(0.0, 0.0).unwrap().r_image, 0.0);
        assert!((image_reward(0.5, 1.0).unwrap().r_image - 0.7).abs() <= 1e-12);
        assert!(matches!(image_reward(1.5, 0.0), Err(RewardError::OutOfRange { name: "hps", .. })));
        assert!(image_reward(0.5, f64::NAN).is_err());
    }

    #[test]
    fn final_examples() {
        let low = FormatComponents::from_flags(false, true, false);
        let u = understanding_reward(JudgeScores::clamped(2, 2, 2));
        let i = image_reward(1.0, 1.0).unwrap();
        assert_eq!(final_reward(&low, Some(&u), Some(&i)).unwrap(), 0.0);
        assert_eq!(final_reward(&low, None, None).unwrap(), 0.0);

        let full = FormatComponents::from_flags(true, true, true);
        assert_eq!(final_reward(&full, Some(&u), Some(&i)).unwrap(), 1.0);

        let half = UnderstandingComponents { r_understanding: 0.5, ..u };
        let img = ImageComponents { r_image: 0.9, ..i };
        let r = final_reward(&FormatComponents { r_format: 0.8, ..full }, Some(&half), Some(&img)).unwrap();
        assert!((r - 0.78).abs() <= 1e-12);

        assert_eq!(final_reward(&full, None, Some(&i)), Err(RewardError::MissingComponent("understanding")));
    }

    #[test]
    fn gate_boundary_passes_at_exactly_threshold() {
        let f = FormatComponents::from_flags(true, false, true);
        assert_eq!(f.r_format, GATE_THRESHOLD);
        assert!(f.passes_gate());
        assert!(FormatComponents::from_flags(false, true, true).passes_gate());
        assert!(!FormatComponents::from_flags(true, false, false).passes_gate());
        for (l, j, p) in [(0, 0, 0), (1, 0, 0), (0, 1, 0), (0, 0, 1), (1, 1, 0), (1, 0, 1), (0, 1, 1), (1, 1, 1)] {
            let f = FormatComponents::from_flags(l == 1, j == 1, p == 1);
            let expected = W_LABEL * l as f64 + W_JSON * j as f64 + W_PROMPT * p as f64;
            assert!((f.r_format - expected).abs() <= 1e-15);
        }
    }

    #[test]
    fn ablation_toggles() {
        let f = FormatComponents::from_flags(false, false, true);
        let shaped = RewardConfig { gated_format_shaping_coef: 0.5, ..Default::default() };
        assert!((final_reward_with(&f, None, None, &shaped).unwrap() - 0.1).abs() <= 1e-12);

        let u = understanding_reward(JudgeScores::clamped(1, 1, 1));
        let image_only = RewardConfig { understanding: false, ..Default::default() };
        let i = image_reward(0.5, 0.25).unwrap();
        let full = FormatComponents::from_flags(true, true, true);
        assert_eq!(final_reward_with(&full, None, Some(&i), &image_only).unwrap(), i.r_image);
        let text_only = RewardConfig { image: false, ..Default::default() };
        assert_eq!(final_reward_with(&full, Some(&u), None, &text_only).unwrap(), 0.5);
        let ungated = RewardConfig { format_gate: false, ..Default::default() };
        assert!(ungated.gate(&f));
        assert!(RewardConfig { understanding: false, image: false, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn monotone_in_each_component() {
        for bits in 0..8u8 {
            let base = FormatComponents::from_flags(bits & 1 != 0, bits & 2 != 0, bits & 4 != 0);
            for k in 0..3 {
                if bits & (1 << k) == 0 {
                    let b = bits | (1 << k);
                    let up = FormatComponents::from_flags(b & 1 != 0, b & 2 != 0, b & 4 != 0);
                    assert!(up.r_format > base.r_format);
                }
            }
        }
    }
}
