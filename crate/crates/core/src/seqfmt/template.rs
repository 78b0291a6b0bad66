use serde::{Deserialize, Serialize};

use super::vocab::{Modality, Special, TokenId, Vocabulary};
use crate::error::{Error, Result};

/// One conversation before template assembly. `speech` holds global speech ids.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ChatExample {
    pub system: Vec<TokenId>,
    pub description: Vec<TokenId>,
    pub transcript: Vec<TokenId>,
    pub speech: Vec<TokenId>,
}

impl ChatExample {
    /// Examples without a description belong to the plain TTS phase.
    pub fn is_tts_pretrain(&self) -> bool {
        self.description.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodedSequence {
    pub ids: Vec<TokenId>,
    pub modality_mask: Vec<Modality>,
    pub loss_mask: Vec<u8>,
}

impl EncodedSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn from_ids(ids: Vec<TokenId>, vocab: &Vocabulary) -> Result<Self> {
        let modality_mask = ids
            .iter()
            .map(|&id| vocab.modality_of(id))
            .collect::<Result<Vec<_>>>()?;
        let loss_mask = vec![0; ids.len()];
        Ok(EncodedSequence {
            ids,
            modality_mask,
            loss_mask,
        })
    }

    pub fn masked_count(&self) -> usize {
        self.loss_mask.iter().filter(|&&m| m == 1).count()
    }

    /// True when the sequence is an open assistant turn ready for generation.
    pub fn ends_at_think_close(&self, vocab: &Vocabulary) -> bool {
        self.ids.last() == Some(&vocab.special(Special::ThinkClose))
            && self.ids.contains(&vocab.special(Special::BosAssistant))
    }

    pub fn validate(&self, vocab: &Vocabulary) -> Result<()> {
        if self.modality_mask.len() != self.ids.len() || self.loss_mask.len() != self.ids.len() {
            return Err(Error::Shape(format!(
                "sequence masks disagree in length: ids {}, modality {}, loss {}",
                self.ids.len(),
                self.modality_mask.len(),
                self.loss_mask.len()
            )));
        }
        for (i, (&id, &m)) in self.ids.iter().zip(&self.modality_mask).enumerate() {
            let actual = vocab.modality_of(id)?;
            if actual != m {
                return Err(Error::MixedModality(format!(
                    "position {i}: id {id} is {actual:?} but mask says {m:?}"
                )));
            }
            if self.loss_mask[i] == 1 && m != Modality::Speech {
                return Err(Error::MixedModality(format!(
                    "position {i}: loss mask set on a text position"
                )));
            }
        }
        Ok(())
    }
}

struct Builder<'a> {
    vocab: &'a Vocabulary,
    seq: EncodedSequence,
}

impl<'a> Builder<'a> {
    fn new(vocab: &'a Vocabulary) -> Self {
        Builder {
            vocab,
            seq: EncodedSequence {
                ids: Vec::new(),
                modality_mask: Vec::new(),
                loss_mask: Vec::new(),
            },
        }
    }

    fn push(&mut self, id: TokenId, modality: Modality, loss: bool) {
        self.seq.ids.push(id);
        self.seq.modality_mask.push(modality);
        self.seq.loss_mask.push(loss as u8);
    }

    fn special(&mut self, s: Special, loss: bool) {
        let id = self.vocab.special(s);
        self.push(id, s.modality(), loss);
    }

    fn text(&mut self, ids: &[TokenId], field: &str) -> Result<()> {
        for &id in ids {
            if !self.vocab.is_text_content(id) {
                self.vocab.check(id)?;
                return Err(Error::MixedModality(format!(
                    "{field} contains non-text id {id}"
                )));
            }
            self.push(id, Modality::Text, false);
        }
        Ok(())
    }

    fn user_turn(
        &mut self,
        system: &[TokenId],
        description: &[TokenId],
        transcript: &[TokenId],
    ) -> Result<()> {
        self.special(Special::BosSystem, false);
        self.text(system, "system")?;
        self.special(Special::EosSystem, false);
        self.special(Special::BosUser, false);
        self.text(description, "description")?;
        let sep = self.vocab.separator();
        self.push(sep, Modality::Text, false);
        self.text(transcript, "transcript")?;
        self.special(Special::EosUser, false);
        self.special(Special::BosAssistant, false);
        self.special(Special::ThinkOpen, false);
        self.special(Special::ThinkClose, false);
        Ok(())
    }
}

/// Lays out `ex` in the chat template:
///
/// ```text
/// BOS_SYSTEM system EOS_SYSTEM BOS_USER description SEP transcript EOS_USER
/// BOS_ASSISTANT THINK_OPEN THINK_CLOSE [speech SPEECH_EOS EOS_ASSISTANT]
/// ```
///
/// The bracketed target is present only when `include_target` is set. The loss
/// mask covers the speech body and SPEECH_EOS.
pub fn assemble_example(
    ex: &ChatExample,
    vocab: &Vocabulary,
    include_target: bool,
) -> Result<EncodedSequence> {
    if !include_target && !ex.speech.is_empty() {
        return Err(Error::Contract(
            "speech must be empty when the target is not included".into(),
        ));
    }
    let mut b = Builder::new(vocab);
    b.user_turn(&ex.system, &ex.description, &ex.transcript)?;
    if include_target {
        for &id in &ex.speech {
            if !vocab.is_speech_content(id) {
                return Err(Error::MixedModality(format!(
                    "assistant speech contains non-speech id {id}"
                )));
            }
            b.push(id, Modality::Speech, true);
        }
        b.special(Special::SpeechEos, true);
        b.special(Special::EosAssistant, false);
    }
    Ok(b.seq)
}

/// Text-only conversation used to pretrain the base model: the assistant answers
/// in text. The loss mask is left empty because base training scores every position.
pub fn assemble_text_chat(
    system: &[TokenId],
    description: &[TokenId],
    transcript: &[TokenId],
    response: &[TokenId],
    vocab: &Vocabulary,
) -> Result<EncodedSequence> {
    let mut b = Builder::new(vocab);
    b.user_turn(system, description, transcript)?;
    b.text(response, "response")?;
    b.special(Special::EosAssistant, false);
    Ok(b.seq)
}

/// Extracts the speech body of the assistant turn, rebased to `[0, Vs)`.
pub fn decode_assistant(seq: &EncodedSequence, vocab: &Vocabulary) -> Result<Vec<u32>> {
    let bos = vocab.special(Special::BosAssistant);
    let start = seq
        .ids
        .iter()
        .position(|&id| id == bos)
        .ok_or_else(|| Error::Parse("no assistant segment".into()))?;
    let close = vocab.special(Special::ThinkClose);
    let body_start = seq.ids[start..]
        .iter()
        .position(|&id| id == close)
        .map(|p| start + p + 1)
        .ok_or_else(|| Error::Parse("assistant segment has no THINK_CLOSE".into()))?;
    let eos = vocab.special(Special::SpeechEos);
    let mut out = Vec::new();
    for (i, &id) in seq.ids[body_start..].iter().enumerate() {
        if id == eos {
            return Ok(out);
        }
        match vocab.speech_local(id) {
            Some(local) => out.push(local),
            None => {
                return Err(Error::Parse(format!(
                    "non-speech id {id} inside assistant body at position {}",
                    body_start + i
                )))
            }
        }
    }
    Err(Error::Parse("assistant body not terminated by SPEECH_EOS".into()))
}
