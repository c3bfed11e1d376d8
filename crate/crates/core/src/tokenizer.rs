//! Byte-level vocabulary: byte `b` is token `b`, followed by three specials.

use crate::error::{Error, Result};
use crate::promptgen::TuningSample;

pub type TokenId = u32;

pub const BOS: TokenId = 256;
pub const EOS: TokenId = 257;
pub const PAD: TokenId = 258;
pub const VOCAB_SIZE: usize = 259;

/// Token ids plus the index where supervised (answer) tokens begin.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<TokenId>,
    pub boundary: usize,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Number of positions that contribute to the loss.
    pub fn supervised(&self) -> usize {
        self.ids.len().saturating_sub(self.boundary)
    }
}

/// Raw bytes of `text`; the whole sequence counts as input.
pub fn encode(text: &str) -> TokenSequence {
    let ids: Vec<TokenId> = text.bytes().map(TokenId::from).collect();
    let boundary = ids.len();
    TokenSequence { ids, boundary }
}

/// Inverse of [`encode`]. A leading BOS and a trailing EOS are tolerated and
/// dropped; any other special id is an error.
pub fn decode(tokens: &TokenSequence) -> Result<String> {
    decode_ids(&tokens.ids)
}

pub fn decode_ids(ids: &[TokenId]) -> Result<String> {
    let mut payload = ids;
    if let [BOS, rest @ ..] = payload {
        payload = rest;
    }
    if let [rest @ .., EOS] = payload {
        payload = rest;
    }
    let mut bytes = Vec::with_capacity(payload.len());
    for &id in payload {
        match u8::try_from(id) {
            Ok(b) => bytes.push(b),
            Err(_) if (id as usize) < VOCAB_SIZE => {
                return Err(Error::Precondition(format!("special token {id} inside payload")))
            }
            Err(_) => return Err(Error::TokenOutOfRange { id: id as usize, vocab: VOCAB_SIZE }),
        }
    }
    String::from_utf8(bytes).map_err(|e| Error::Precondition(format!("decoded bytes are not UTF-8: {e}")))
}

/// `BOS · input · output · EOS` with the boundary at the first output token.
pub fn pack_pair(sample: &TuningSample) -> TokenSequence {
    let input = sample.instruction_input.as_bytes();
    let output = sample.instruction_output.as_bytes();
    let mut ids = Vec::with_capacity(input.len() + output.len() + 2);
    ids.push(BOS);
    ids.extend(input.iter().map(|&b| TokenId::from(b)));
    ids.extend(output.iter().map(|&b| TokenId::from(b)));
    ids.push(EOS);
    TokenSequence { ids, boundary: 1 + input.len() }
}

/// `BOS · input`, used to read off the distribution of the first answer token.
pub fn pack_prompt(instruction_input: &str) -> TokenSequence {
    let mut ids = Vec::with_capacity(instruction_input.len() + 1);
    ids.push(BOS);
    ids.extend(instruction_input.bytes().map(TokenId::from));
    let boundary = ids.len();
    TokenSequence { ids, boundary }
}

/// Token id of the first byte of `text`.
pub fn first_token(text: &str) -> Option<TokenId> {
    text.bytes().next().map(TokenId::from)
}
