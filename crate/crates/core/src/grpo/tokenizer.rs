//! A fixed 64-entry vocabulary for the toy policy: the four tag literals,
//! JSON pieces for the structured-vision schema, digits and a few filler
//! words. Text is segmented into the fewest vocabulary pieces.

use thiserror::Error;

use super::policy::TokenId;
use crate::vision::TAG_LITERALS;

pub const EOS: TokenId = 0;

/// Ids of the four tag literals, in `TAG_LITERALS` order.
pub const TAG_TOKENS: [TokenId; 4] = [1, 2, 3, 4];

const PIECES: [&str; 64] = [
    "<eos>",
    TAG_LITERALS[0],
    TAG_LITERALS[1],
    TAG_LITERALS[2],
    TAG_LITERALS[3],
    "{",
    "}",
    "[",
    "]",
    ":",
    ",",
    "\"",
    "\"entities\":",
    "\"relations\":",
    "\"layout\":",
    "\"global_style\":",
    "\"id\":",
    "\"name\":",
    "\"attributes\":",
    "\"count\":",
    "\"subject\":",
    "\"predicate\":",
    "\"object\":",
    "\"x0\":",
    "\"y0\":",
    "\"x1\":",
    "\"y1\":",
    "\"depth\":",
    "0",
    "1",
    "2",
    "3",
    "4",
    "5",
    "6",
    "7",
    "8",
    "9",
    ".",
    "_",
    " ",
    "a",
    "the",
    "cat",
    "dog",
    "tree",
    "house",
    "bird",
    "red",
    "blue",
    "green",
    "small",
    "large",
    "near",
    "on",
    "under",
    "left",
    "right",
    "sits",
    "color",
    "size",
    "scene",
    "with",
    "of",
];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TokenizeError {
    #[error("text cannot be segmented into toy vocabulary pieces at byte {position}: {context:?}")]
    OutOfVocabulary { position: usize, context: String },
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ToyTokenizer;

impl ToyTokenizer {
    pub const VOCAB_SIZE: usize = PIECES.len();

    pub fn piece(&self, id: TokenId) -> Option<&'static str> {
        PIECES.get(id as usize).copied()
    }

    pub fn id_of(&self, piece: &str) -> Option<TokenId> {
        PIECES.iter().position(|p| *p == piece).map(|i| i as TokenId)
    }

    /// Minimum-piece segmentation by dynamic programming. The EOS piece is
    /// never produced from text.
    pub fn encode(&self, text: &str) -> Result<Vec<TokenId>, TokenizeError> {
        let bytes = text.as_bytes();
        let n = bytes.len();
        // best[i] = (pieces to cover text[i..], first piece)
        let mut best: Vec<Option<(usize, TokenId)>> = vec![None; n + 1];
        best[n] = Some((0, EOS));
        for i in (0..n).rev() {
            for (id, piece) in PIECES.iter().enumerate().skip(1) {
                let end = i + piece.len();
                if end <= n && &bytes[i..end] == piece.as_bytes() {
                    if let Some((rest, _)) = best[end] {
                        let candidate = (rest + 1, id as TokenId);
                        if best[i].is_none_or(|(count, _)| candidate.0 < count) {
                            best[i] = Some(candidate);
                        }
                    }
                }
            }
        }
        if best[0].is_none() {
            let position = self.furthest_reachable(bytes);
            let context = String::from_utf8_lossy(&bytes[position..n.min(position + 16)]).into_owned();
            return Err(TokenizeError::OutOfVocabulary { position, context });
        }
        let mut out = Vec::new();
        let mut i = 0;
        while let Some((count, id)) = best[i] {
            if count == 0 {
                break;
            }
            out.push(id);
            i += PIECES[id as usize].len();
        }
        Ok(out)
    }

    fn furthest_reachable(&self, bytes: &[u8]) -> usize {
        let mut reach = vec![false; bytes.len() + 1];
        reach[0] = true;
        let mut furthest = 0;
        for i in 0..bytes.len() {
            if !reach[i] {
                continue;
            }
            furthest = i;
            for piece in PIECES.iter().skip(1) {
                let end = i + piece.len();
                if end <= bytes.len() && &bytes[i..end] == piece.as_bytes() {
                    reach[end] = true;
                }
            }
        }
        furthest
    }

    /// Concatenates pieces up to (not including) the first EOS.
    pub fn decode(&self, tokens: &[TokenId]) -> String {
        tokens
            .iter()
            .take_while(|&&t| t != EOS)
            .filter_map(|&t| self.piece(t))
            .collect()
    }
}
