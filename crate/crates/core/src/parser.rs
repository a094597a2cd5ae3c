//! Extraction of the tagged sections from raw rollout text.
//!
//! A section is present only when its open tag and its close tag each occur
//! exactly once, open before close. Anything else (duplicates, a lone tag,
//! reversed order) leaves the section absent and adds a note.

use serde::{Deserialize, Serialize};

use crate::vision::{
    parse_state, SchemaOptions, StructuredVisionState, ValidationReport, Violation, ViolationKind,
    FINAL_PROMPT_CLOSE, FINAL_PROMPT_OPEN, STRUCTURE_VISION_CLOSE, STRUCTURE_VISION_OPEN, TAG_LITERALS,
};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaggedOutput {
    pub raw: String,
    pub structure_vision_raw: Option<String>,
    pub final_prompt_raw: Option<String>,
    pub extraction_notes: Vec<String>,
}

impl TaggedOutput {
    /// Section content with surrounding whitespace trimmed.
    pub fn structure_vision(&self) -> Option<&str> {
        self.structure_vision_raw.as_deref().map(str::trim)
    }

    pub fn final_prompt(&self) -> Option<&str> {
        self.final_prompt_raw.as_deref().map(str::trim)
    }

    /// Free text before the first tag of any kind, trimmed.
    pub fn thinking_text(&self) -> &str {
        let end = TAG_LITERALS.iter().filter_map(|t| self.raw.find(t)).min().unwrap_or(self.raw.len());
        self.raw[..end].trim()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Section {
    StructureVision,
    FinalPrompt,
}

impl Section {
    pub fn tags(self) -> (&'static str, &'static str) {
        match self {
            Section::StructureVision => (STRUCTURE_VISION_OPEN, STRUCTURE_VISION_CLOSE),
            Section::FinalPrompt => (FINAL_PROMPT_OPEN, FINAL_PROMPT_CLOSE),
        }
    }
}

fn extract_section(raw: &str, section: Section, notes: &mut Vec<String>) -> Option<String> {
    let (open, close) = section.tags();
    let opens: Vec<usize> = raw.match_indices(open).map(|(i, _)| i).collect();
    let closes: Vec<usize> = raw.match_indices(close).map(|(i, _)| i).collect();
    match (opens.as_slice(), closes.as_slice()) {
        ([], []) => None,
        ([o], [c]) if o + open.len() <= *c => Some(raw[o + open.len()..*c].to_string()),
        ([_], [_]) => {
            notes.push(format!("{close} appears before {open}"));
            None
        }
        (o, c) => {
            if o.len() > 1 {
                notes.push(format!("duplicate tag {open} ({} occurrences)", o.len()));
            }
            if c.len() > 1 {
                notes.push(format!("duplicate tag {close} ({} occurrences)", c.len()));
            }
            if o.is_empty() {
                notes.push(format!("{close} without {open}"));
            }
            if c.is_empty() {
                notes.push(format!("unclosed tag {open}"));
            }
            None
        }
    }
}

/// Splits raw rollout text into its tagged sections. Total and deterministic.
pub fn extract_tagged_sections(raw: &str) -> TaggedOutput {
    let mut notes = Vec::new();
    let structure_vision_raw = extract_section(raw, Section::StructureVision, &mut notes);
    let final_prompt_raw = extract_section(raw, Section::FinalPrompt, &mut notes);
    TaggedOutput { raw: raw.to_string(), structure_vision_raw, final_prompt_raw, extraction_notes: notes }
}

/// Byte-level entry point: invalid UTF-8 is replaced before extraction.
pub fn extract_tagged_bytes(raw: &[u8]) -> TaggedOutput {
    extract_tagged_sections(&String::from_utf8_lossy(raw))
}

/// Validates the structured-vision section of a rollout.
pub fn parse_structured_vision(
    tagged: &TaggedOutput,
    options: &SchemaOptions,
) -> (ValidationReport, Option<StructuredVisionState>) {
    match tagged.structure_vision() {
        None => {
            let violation = Violation {
                path: "$".into(),
                message: "section missing".into(),
                kind: ViolationKind::Missing,
            };
            (ValidationReport::from_violations(vec![violation]), None)
        }
        Some(text) => parse_state(text, options),
    }
}
