use crate::error::ModelError;

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;

const FIRST_CHAR: u8 = b' ';
const LAST_CHAR: u8 = b'~';
const N_SPECIAL: usize = 3;

/// Character-level vocabulary: three specials followed by printable ASCII.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Vocabulary;

impl Vocabulary {
    pub const NAME: &'static str = "ascii-char-v1";

    pub fn new() -> Self {
        Self
    }

    pub fn size(&self) -> usize {
        N_SPECIAL + (LAST_CHAR - FIRST_CHAR + 1) as usize
    }

    pub fn id_of(&self, c: char) -> Option<usize> {
        let b = u32::from(c);
        (u32::from(FIRST_CHAR)..=u32::from(LAST_CHAR))
            .contains(&b)
            .then(|| N_SPECIAL + (b - u32::from(FIRST_CHAR)) as usize)
    }

    pub fn char_of(&self, id: usize) -> Option<char> {
        (N_SPECIAL..self.size())
            .contains(&id)
            .then(|| char::from(FIRST_CHAR + (id - N_SPECIAL) as u8))
    }

    pub fn encode(&self, s: &str) -> Result<Vec<usize>, ModelError> {
        s.chars()
            .map(|c| self.id_of(c).ok_or(ModelError::UnknownChar(c)))
            .collect()
    }

    /// Drops special tokens.
    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter().filter_map(|&i| self.char_of(i)).collect()
    }
}
