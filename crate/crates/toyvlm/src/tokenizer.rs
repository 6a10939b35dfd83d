//! Fixed character-level vocabulary.

pub const END: usize = 0;
pub const BOS: usize = 1;
/// Opens the assistant turn; the answer prefix.
pub const ANS: usize = 2;
pub const FIRST_CHAR: usize = 3;

const CHARSET: &str = "abcdefghijklmnopqrstuvwxyz0123456789 .,?!'-:;()/\"";

/// Characters map to ids from [`FIRST_CHAR`] upward, wrapping when the
/// vocabulary is smaller than the character set. Unknown characters become `?`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tokenizer {
    vocab_size: usize,
}

impl Tokenizer {
    pub fn new(vocab_size: usize) -> Self {
        Self { vocab_size }
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn char_id(&self, c: char) -> usize {
        let c = c.to_ascii_lowercase();
        let idx = CHARSET.find(c).or_else(|| CHARSET.find('?')).expect("'?' in charset");
        FIRST_CHAR + idx % (self.vocab_size - FIRST_CHAR)
    }

    pub fn encode(&self, text: &str) -> Vec<usize> {
        text.chars().map(|c| self.char_id(c)).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter()
            .filter_map(|&id| match id {
                END | BOS | ANS => None,
                id => CHARSET.chars().nth(id - FIRST_CHAR),
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_lowercase_text() {
        let t = Tokenizer::new(64);
        let ids = t.encode("Is there a red square?");
        assert!(ids.iter().all(|&i| (FIRST_CHAR..64).contains(&i)));
        assert_eq!(t.decode(&ids), "is there a red square?");
        assert_eq!(t.encode("#"), t.encode("?"));
    }

    #[test]
    fn small_vocab_wraps() {
        let t = Tokenizer::new(8);
        assert!(t.encode("xyz").iter().all(|&i| i < 8));
    }
}
