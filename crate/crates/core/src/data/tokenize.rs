use super::SamplePair;

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
/// Token id of byte `b` is `b + BYTE_OFFSET`.
pub const BYTE_OFFSET: u32 = 3;
pub const VOCAB_SIZE: usize = 256 + BYTE_OFFSET as usize;

pub fn encode_bytes(bytes: &[u8]) -> Vec<u32> {
    bytes.iter().map(|&b| b as u32 + BYTE_OFFSET).collect()
}

/// Inverse of [`encode_bytes`]; special tokens are dropped.
pub fn decode_bytes(tokens: &[u32]) -> Vec<u8> {
    tokens
        .iter()
        .filter(|&&t| t >= BYTE_OFFSET && t < VOCAB_SIZE as u32)
        .map(|&t| (t - BYTE_OFFSET) as u8)
        .collect()
}

pub fn detokenize(tokens: &[u32]) -> String {
    String::from_utf8_lossy(&decode_bytes(tokens)).into_owned()
}

/// One prompt/response pair laid out as `[BOS, prompt.., response.., EOS]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenizedPair {
    pub tokens: Vec<u32>,
    /// 1 on response tokens and EOS.
    pub mask: Vec<u8>,
    /// Index of the first response token in `tokens`.
    pub response_start: usize,
    /// Response positions (0-based, EOS included) flagged as corrupted.
    pub noise: Vec<bool>,
}

impl TokenizedPair {
    /// Number of masked (response + EOS) tokens kept after truncation.
    pub fn response_len(&self) -> usize {
        self.tokens.len() - self.response_start
    }

    /// Response position `j` of token index `t`, if `t` is masked.
    pub fn position_of(&self, t: usize) -> Option<u32> {
        (t >= self.response_start && t < self.tokens.len()).then(|| (t - self.response_start) as u32)
    }

    pub fn prompt_tokens(&self) -> &[u32] {
        &self.tokens[..self.response_start]
    }
}

/// Tokenizes a pair for a model with `max_context` positions.
///
/// Overlong pairs lose tokens from the response tail (EOS first). Returns
/// `None` (skip) when the prompt leaves no room for a single response token.
pub fn tokenize_pair(pair: &SamplePair, max_context: usize) -> Option<TokenizedPair> {
    let prompt = pair.prompt.as_bytes();
    let response = pair.response.as_bytes();
    let response_start = 1 + prompt.len();
    if response_start >= max_context {
        return None;
    }
    let mut tokens = Vec::with_capacity(response_start + response.len() + 1);
    tokens.push(BOS);
    tokens.extend(encode_bytes(prompt));
    tokens.extend(encode_bytes(response));
    tokens.push(EOS);
    tokens.truncate(max_context);

    let mut mask = vec![0u8; tokens.len()];
    mask[response_start..].iter_mut().for_each(|m| *m = 1);
    let mut noise = vec![false; tokens.len() - response_start];
    for &j in pair.noise_mask.iter().flatten() {
        if let Some(flag) = noise.get_mut(j) {
            *flag = true;
        }
    }
    Some(TokenizedPair {
        tokens,
        mask,
        response_start,
        noise,
    })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn pair(prompt: &str, response: &str) -> SamplePair {
        SamplePair::new("x", prompt, response)
    }

    #[test]
    fn response_bytes_shift_by_three() {
        let t = tokenize_pair(&pair("q", "hi"), 64).unwrap();
        assert_eq!(t.tokens, vec![BOS, b'q' as u32 + 3, 107, 108, EOS]);
        assert_eq!(&t.tokens[t.response_start..t.response_start + 2], &[107, 108]);
    }

    #[test]
    fn mask_covers_response_and_eos() {
        let t = tokenize_pair(&pair("2+2=", "four"), 64).unwrap();
        assert_eq!(t.mask.iter().filter(|&&m| m == 1).count(), 4 + 1);
        assert_eq!(t.mask, vec![0, 0, 0, 0, 0, 1, 1, 1, 1, 1]);
        assert_eq!(t.position_of(5), Some(0));
        assert_eq!(t.position_of(9), Some(4));
        assert_eq!(t.position_of(4), None);
    }

    #[test]
    fn truncation_drops_response_tail() {
        let t = tokenize_pair(&pair("ab", "cdef"), 5).unwrap();
        assert_eq!(t.tokens.len(), 5);
        assert_eq!(detokenize(&t.tokens), "abcd");
        assert_eq!(t.response_len(), 2);
    }

    #[test]
    fn prompt_filling_context_is_skipped() {
        assert!(tokenize_pair(&pair("abcd", "e"), 5).is_none());
        assert!(tokenize_pair(&pair("abc", "e"), 5).is_some());
    }

    proptest! {
        #[test]
        fn byte_level_round_trip(s in ".*") {
            prop_assert_eq!(detokenize(&encode_bytes(s.as_bytes())), s.clone());
            let t = tokenize_pair(&pair("p", &format!("{s}!")), 4096).unwrap();
            prop_assert_eq!(detokenize(&t.tokens[t.response_start..]), format!("{s}!"));
        }
    }
}
