//! Byte-level vocabularies.
//!
//! The full vocabulary maps byte `b` to id `b + 3`, after three specials.
//! The restricted vocabulary covers 64 printable symbols and plays the part
//! of a second model family's tokenizer.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const N_SPECIAL: u32 = 3;

/// Alphabet of the restricted vocabulary: `a-z A-Z 0-9`, space and `:`.
pub const RESTRICTED_ALPHABET: &[u8; 64] = b"abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789 :";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VocabKind {
    Bytes,
    Restricted,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    kind: VocabKind,
    // byte -> id, `None` for bytes outside the alphabet
    to_id: [Option<u32>; 256],
    to_byte: Vec<u8>,
}

impl Vocab {
    pub fn bytes() -> Self {
        let mut to_id = [None; 256];
        for b in 0..=255u8 {
            to_id[b as usize] = Some(u32::from(b) + N_SPECIAL);
        }
        Self {
            kind: VocabKind::Bytes,
            to_id,
            to_byte: (0..=255u8).collect(),
        }
    }

    pub fn restricted() -> Self {
        let mut to_id = [None; 256];
        for (i, b) in RESTRICTED_ALPHABET.iter().enumerate() {
            to_id[*b as usize] = Some(i as u32 + N_SPECIAL);
        }
        Self {
            kind: VocabKind::Restricted,
            to_id,
            to_byte: RESTRICTED_ALPHABET.to_vec(),
        }
    }

    pub fn of_kind(kind: VocabKind) -> Self {
        match kind {
            VocabKind::Bytes => Self::bytes(),
            VocabKind::Restricted => Self::restricted(),
        }
    }

    /// The vocabulary a model with `size` output ids was built for.
    pub fn for_size(size: usize) -> Result<Self> {
        [Self::bytes(), Self::restricted()]
            .into_iter()
            .find(|v| v.size() == size)
            .ok_or_else(|| Error::contract(format!("no vocabulary has {size} ids")))
    }

    pub fn kind(&self) -> VocabKind {
        self.kind
    }

    pub fn size(&self) -> usize {
        self.to_byte.len() + N_SPECIAL as usize
    }

    pub fn contains(&self, byte: u8) -> bool {
        self.to_id[byte as usize].is_some()
    }

    pub fn encode(&self, text: &[u8], add_eos: bool) -> Result<Vec<u32>> {
        let mut ids = Vec::with_capacity(text.len() + usize::from(add_eos));
        for (position, &byte) in text.iter().enumerate() {
            ids.push(self.to_id[byte as usize].ok_or(Error::Encoding { byte, position })?);
        }
        if add_eos {
            ids.push(EOS);
        }
        Ok(ids)
    }

    /// Specials are dropped from the output.
    pub fn decode(&self, ids: &[u32]) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(ids.len());
        for &id in ids {
            if id as usize >= self.size() {
                return Err(Error::Decoding { id, size: self.size() });
            }
            if id >= N_SPECIAL {
                out.push(self.to_byte[(id - N_SPECIAL) as usize]);
            }
        }
        Ok(out)
    }

    /// Decodes up to (not including) the first EOS.
    pub fn decode_until_eos(&self, ids: &[u32]) -> Result<Vec<u8>> {
        let end = ids.iter().position(|&t| t == EOS).unwrap_or(ids.len());
        self.decode(&ids[..end])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn encode_examples() {
        let v = Vocab::bytes();
        assert_eq!(v.encode(b"", true).unwrap(), vec![2]);
        assert_eq!(v.encode(b"AB", false).unwrap(), vec![68, 69]);
        assert_eq!(v.size(), 259);
    }

    #[test]
    fn decode_examples() {
        let v = Vocab::bytes();
        assert_eq!(v.decode(&[2]).unwrap(), b"");
        assert_eq!(v.decode(&[68, 69, 2]).unwrap(), b"AB");
        assert_eq!(v.decode(&[0, 0, 0]).unwrap(), b"");
        assert!(matches!(v.decode(&[259]), Err(Error::Decoding { id: 259, size: 259 })));
    }

    #[test]
    fn restricted_rejects_with_position() {
        let v = Vocab::restricted();
        assert_eq!(v.size(), 67);
        let err = v.encode(b"ab-c", false).unwrap_err();
        assert!(matches!(err, Error::Encoding { byte: b'-', position: 2 }));
    }

    #[test]
    fn vocabularies_disagree() {
        // Same text, different ids; and text one can encode but not the other.
        let (full, small) = (Vocab::bytes(), Vocab::restricted());
        assert_ne!(full.encode(b"a", false).unwrap(), small.encode(b"a", false).unwrap());
        assert!(full.encode(b"a.b", false).is_ok());
        assert!(small.encode(b"a.b", false).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn bytes_roundtrip(s in proptest::collection::vec(any::<u8>(), 0..64)) {
            let v = Vocab::bytes();
            prop_assert_eq!(v.decode(&v.encode(&s, true).unwrap()).unwrap(), s);
        }

        #[test]
        fn restricted_roundtrip(idx in proptest::collection::vec(0usize..64, 0..64)) {
            let s: Vec<u8> = idx.iter().map(|i| RESTRICTED_ALPHABET[*i]).collect();
            let v = Vocab::restricted();
            prop_assert_eq!(v.decode(&v.encode(&s, false).unwrap()).unwrap(), s);
        }

        #[test]
        fn encode_length_monotone(s in proptest::collection::vec(any::<u8>(), 0..32), extra in proptest::collection::vec(any::<u8>(), 0..8)) {
            let v = Vocab::bytes();
            let mut longer = s.clone();
            longer.extend(extra);
            prop_assert!(v.encode(&longer, false).unwrap().len() >= v.encode(&s, false).unwrap().len());
        }
    }
}
