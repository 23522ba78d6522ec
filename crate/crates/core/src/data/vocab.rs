/// One-letter codes in token order; indices 0..20 are the amino-acid tokens.
pub const AMINO_ACIDS: &[u8; 20] = b"ACDEFGHIKLMNPQRSTVWY";
pub const NUM_AMINO_ACIDS: usize = 20;

pub const MASK: u8 = 20;
pub const PAD: u8 = 21;
pub const UNK: u8 = 22;
pub const CHAIN_BREAK: u8 = 23;
pub const VOCAB_SIZE: usize = 24;

const SPECIAL_SYMBOLS: [&str; 4] = ["<mask>", "<pad>", "<unk>", "<cb>"];
// Single-character renderings of the special tokens inside sequence strings.
const SPECIAL_CHARS: [char; 4] = ['_', '.', 'X', '/'];

/// Fixed token alphabet shared by every model and checkpoint.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Vocabulary;

impl Vocabulary {
    pub fn symbols() -> Vec<String> {
        AMINO_ACIDS
            .iter()
            .map(|&b| (b as char).to_string())
            .chain(SPECIAL_SYMBOLS.iter().map(|s| s.to_string()))
            .collect()
    }

    pub fn len() -> usize {
        VOCAB_SIZE
    }

    pub fn is_amino_acid(token: u8) -> bool {
        (token as usize) < NUM_AMINO_ACIDS
    }

    /// Token for a one-letter amino-acid code, `None` for anything else.
    pub fn amino_acid(letter: char) -> Option<u8> {
        let upper = letter.to_ascii_uppercase();
        AMINO_ACIDS
            .iter()
            .position(|&b| b as char == upper)
            .map(|i| i as u8)
    }

    pub fn char_of(token: u8) -> char {
        match token as usize {
            t if t < NUM_AMINO_ACIDS => AMINO_ACIDS[t] as char,
            t if t < VOCAB_SIZE => SPECIAL_CHARS[t - NUM_AMINO_ACIDS],
            _ => '?',
        }
    }

    /// Tokenizes a sequence string. Unknown letters become `UNK`; the second
    /// return value counts them.
    pub fn tokenize(seq: &str) -> (Vec<u8>, usize) {
        let mut unknown = 0;
        let tokens = seq
            .chars()
            .map(|c| match Self::amino_acid(c) {
                Some(t) => t,
                None => match SPECIAL_CHARS.iter().position(|&s| s == c) {
                    Some(i) if c != 'X' => (NUM_AMINO_ACIDS + i) as u8,
                    _ => {
                        unknown += 1;
                        UNK
                    }
                },
            })
            .collect();
        (tokens, unknown)
    }

    pub fn detokenize(tokens: &[u8]) -> String {
        tokens.iter().map(|&t| Self::char_of(t)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn alphabetical_order() {
        assert_eq!(Vocabulary::tokenize("ACD").0, vec![0, 1, 2]);
        assert_eq!(Vocabulary::amino_acid('Y'), Some(19));
        assert_eq!(Vocabulary::symbols().len(), VOCAB_SIZE);
        assert_eq!(Vocabulary::symbols()[MASK as usize], "<mask>");
    }

    #[test]
    fn unknown_letter_maps_to_unk() {
        let (tokens, unknown) = Vocabulary::tokenize("ABC");
        assert_eq!(tokens, vec![0, UNK, 1]);
        assert_eq!(unknown, 1);
    }

    #[test]
    fn symbol_mapping_is_bijective() {
        let symbols = Vocabulary::symbols();
        let mut sorted = symbols.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), symbols.len());
        for t in 0..VOCAB_SIZE as u8 {
            let c = Vocabulary::char_of(t);
            if t != UNK {
                assert_eq!(Vocabulary::tokenize(&c.to_string()).0, vec![t]);
            }
        }
    }

    proptest! {
        #[test]
        fn tokenize_detokenize_identity(s in "[ACDEFGHIKLMNPQRSTVWY]{0,64}") {
            let (tokens, unknown) = Vocabulary::tokenize(&s);
            prop_assert_eq!(unknown, 0);
            prop_assert_eq!(Vocabulary::detokenize(&tokens), s);
        }
    }
}
