use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type TokenId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Text,
    Speech,
}

/// Chat-template control tokens. Their ids follow the speech block in this order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Special {
    BosSystem,
    EosSystem,
    BosUser,
    EosUser,
    BosAssistant,
    EosAssistant,
    ThinkOpen,
    ThinkClose,
    SpeechEos,
    Pad,
}

impl Special {
    pub const ALL: [Special; 10] = [
        Special::BosSystem,
        Special::EosSystem,
        Special::BosUser,
        Special::EosUser,
        Special::BosAssistant,
        Special::EosAssistant,
        Special::ThinkOpen,
        Special::ThinkClose,
        Special::SpeechEos,
        Special::Pad,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Special::BosSystem => "BOS_SYSTEM",
            Special::EosSystem => "EOS_SYSTEM",
            Special::BosUser => "BOS_USER",
            Special::EosUser => "EOS_USER",
            Special::BosAssistant => "BOS_ASSISTANT",
            Special::EosAssistant => "EOS_ASSISTANT",
            Special::ThinkOpen => "THINK_OPEN",
            Special::ThinkClose => "THINK_CLOSE",
            Special::SpeechEos => "SPEECH_EOS",
            Special::Pad => "PAD",
        }
    }

    fn offset(self) -> u32 {
        Special::ALL.iter().position(|&s| s == self).unwrap() as u32
    }

    pub fn modality(self) -> Modality {
        match self {
            Special::SpeechEos => Modality::Speech,
            _ => Modality::Text,
        }
    }
}

/// Partitioned id space: text ids `[0, Vt)`, speech ids `[Vt, Vt+Vs)`, then the
/// ten specials in [`Special::ALL`] order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    text_vocab_size: usize,
    speech_vocab_size: usize,
}

impl Vocabulary {
    pub fn new(text_vocab_size: usize, speech_vocab_size: usize) -> Result<Self> {
        if text_vocab_size == 0 || speech_vocab_size == 0 {
            return Err(Error::InvalidConfig(format!(
                "vocabulary sizes must be >= 1 (text {text_vocab_size}, speech {speech_vocab_size})"
            )));
        }
        let total = text_vocab_size + speech_vocab_size + Special::ALL.len();
        if total > u32::MAX as usize {
            return Err(Error::InvalidConfig(format!("vocabulary too large: {total}")));
        }
        Ok(Vocabulary {
            text_vocab_size,
            speech_vocab_size,
        })
    }

    pub fn text_size(&self) -> usize {
        self.text_vocab_size
    }

    pub fn speech_size(&self) -> usize {
        self.speech_vocab_size
    }

    pub fn total_size(&self) -> usize {
        self.text_vocab_size + self.speech_vocab_size + Special::ALL.len()
    }

    pub fn special(&self, s: Special) -> TokenId {
        (self.text_vocab_size + self.speech_vocab_size) as u32 + s.offset()
    }

    pub fn special_tokens(&self) -> Vec<(&'static str, TokenId)> {
        Special::ALL
            .iter()
            .map(|&s| (s.name(), self.special(s)))
            .collect()
    }

    pub fn special_of(&self, id: TokenId) -> Option<Special> {
        let first = (self.text_vocab_size + self.speech_vocab_size) as u32;
        if id < first {
            return None;
        }
        Special::ALL.get((id - first) as usize).copied()
    }

    /// Reserved text id separating the description from the transcript.
    pub fn separator(&self) -> TokenId {
        self.text_vocab_size as u32 - 1
    }

    pub fn check(&self, id: TokenId) -> Result<()> {
        if (id as usize) < self.total_size() {
            Ok(())
        } else {
            Err(Error::InvalidToken {
                id,
                size: self.total_size(),
            })
        }
    }

    pub fn modality_of(&self, id: TokenId) -> Result<Modality> {
        self.check(id)?;
        let id = id as usize;
        if id < self.text_vocab_size {
            Ok(Modality::Text)
        } else if id < self.text_vocab_size + self.speech_vocab_size {
            Ok(Modality::Speech)
        } else {
            Ok(self.special_of(id as TokenId).unwrap().modality())
        }
    }

    pub fn is_text_content(&self, id: TokenId) -> bool {
        (id as usize) < self.text_vocab_size
    }

    pub fn is_speech_content(&self, id: TokenId) -> bool {
        let id = id as usize;
        id >= self.text_vocab_size && id < self.text_vocab_size + self.speech_vocab_size
    }

    /// Global id of the speech token with local index `local` in `[0, Vs)`.
    pub fn speech_id(&self, local: u32) -> Result<TokenId> {
        if (local as usize) < self.speech_vocab_size {
            Ok(self.text_vocab_size as u32 + local)
        } else {
            Err(Error::InvalidToken {
                id: local,
                size: self.speech_vocab_size,
            })
        }
    }

    pub fn speech_local(&self, id: TokenId) -> Option<u32> {
        self.is_speech_content(id)
            .then(|| id - self.text_vocab_size as u32)
    }

    /// Ids known to a text-only model: all text-modality ids, ascending.
    pub fn base_ids(&self) -> Vec<TokenId> {
        let mut ids: Vec<TokenId> = (0..self.text_vocab_size as u32).collect();
        ids.extend(
            Special::ALL
                .iter()
                .filter(|s| s.modality() == Modality::Text)
                .map(|&s| self.special(s)),
        );
        ids
    }

    /// Ids added when the text model is extended with speech: speech ids then SPEECH_EOS.
    pub fn extension_ids(&self) -> Vec<TokenId> {
        let start = self.text_vocab_size as u32;
        let mut ids: Vec<TokenId> = (start..start + self.speech_vocab_size as u32).collect();
        ids.push(self.special(Special::SpeechEos));
        ids
    }
}

pub fn build_vocabulary(text_vocab_size: usize, speech_vocab_size: usize) -> Result<Vocabulary> {
    Vocabulary::new(text_vocab_size, speech_vocab_size)
}

pub fn modality_of(id: TokenId, vocab: &Vocabulary) -> Result<Modality> {
    vocab.modality_of(id)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_sizes_rejected() {
        assert!(matches!(Vocabulary::new(0, 4), Err(Error::InvalidConfig(_))));
        assert!(matches!(Vocabulary::new(4, 0), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn production_shaped_layout() {
        let v = Vocabulary::new(151_936, 6561).unwrap();
        assert_eq!(v.speech_id(0).unwrap(), 151_936);
        assert_eq!(v.speech_id(6560).unwrap(), 151_936 + 6560);
        assert_eq!(v.modality_of(151_936 + 6561 - 1).unwrap(), Modality::Speech);
        assert_eq!(v.special(Special::BosSystem), 151_936 + 6561);
        assert_eq!(v.total_size(), 151_936 + 6561 + 10);
    }

    #[test]
    fn minimal_layout() {
        let v = Vocabulary::new(1, 1).unwrap();
        assert_eq!(v.total_size(), 12);
        assert_eq!(v.speech_id(0).unwrap(), 1);
        assert_eq!(v.special_tokens().len(), 10);
        assert_eq!(v.modality_of(0).unwrap(), Modality::Text);
        assert_eq!(v.modality_of(1).unwrap(), Modality::Speech);
    }

    #[test]
    fn desk_layout() {
        let v = Vocabulary::new(64, 64).unwrap();
        assert_eq!(v.modality_of(100).unwrap(), Modality::Speech);
        assert_eq!(v.modality_of(0).unwrap(), Modality::Text);
        assert_eq!(v.modality_of(64).unwrap(), Modality::Speech);
        assert_eq!(v.modality_of(v.special(Special::SpeechEos)).unwrap(), Modality::Speech);
        assert!(matches!(
            v.modality_of(138),
            Err(Error::InvalidToken { id: 138, size: 138 })
        ));
    }

    #[test]
    fn exhaustive_partition() {
        for (vt, vs) in [(1, 1), (3, 7), (64, 64), (43, 6561)] {
            let v = Vocabulary::new(vt, vs).unwrap();
            let mut text = 0;
            let mut speech = 0;
            for id in 0..v.total_size() as u32 {
                match v.modality_of(id).unwrap() {
                    Modality::Text => text += 1,
                    Modality::Speech => speech += 1,
                }
            }
            assert_eq!(text + speech, v.total_size());
            assert_eq!(speech, vs + 1);
            assert_eq!(text, v.base_ids().len());
            assert_eq!(speech, v.extension_ids().len());
        }
    }

    #[test]
    fn specials_are_text_except_speech_eos() {
        let v = Vocabulary::new(8, 8).unwrap();
        for (name, id) in v.special_tokens() {
            let expected = if name == "SPEECH_EOS" {
                Modality::Speech
            } else {
                Modality::Text
            };
            assert_eq!(v.modality_of(id).unwrap(), expected, "{name}");
        }
    }
}
