use crate::bpe::TokenId;
use crate::risk::RiskClass;

/// A fixed-length encoder input, optionally carrying training targets.
///
/// Real tokens always form a prefix: `attention_mask` is `1` on positions
/// `0..real_len()` and `0` on the padding that follows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelInput {
    pub token_ids: Vec<TokenId>,
    pub segment_ids: Vec<u8>,
    pub attention_mask: Vec<u8>,
    /// `(position, original token id)` for every position selected for
    /// masked-token prediction.
    pub mlm_targets: Vec<(usize, TokenId)>,
    /// `true` when the second span directly follows the first.
    pub next_label: Option<bool>,
    pub class_label: Option<RiskClass>,
}

impl ModelInput {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    /// Number of attended (non-padding) positions.
    pub fn real_len(&self) -> usize {
        self.attention_mask.iter().take_while(|&&m| m == 1).count()
    }
}
