//! Synthetic speech-token grammar and its exact inverse.
//!
//! A token sequence is a four-token header (gender, pitch, speed, style) followed
//! by the transcript, one body token per character, each repeated according to
//! speed. Body tokens are the character index rotated by three times the pitch
//! level.

use super::attrs::{Gender, Pitch, Speed, Style, VoiceAttributes};
use crate::error::{Error, Result};

pub const SPEECH_VOCAB_SIZE: usize = 64;
pub const GENDER_BASE: u32 = 0;
pub const PITCH_BASE: u32 = 2;
pub const SPEED_BASE: u32 = 5;
pub const STYLE_BASE: u32 = 8;
pub const BODY_BASE: u32 = 16;
pub const BODY_ALPHABET: &str = "abcdefghijklmnopqrstuvwxyz ";
pub const BODY_SIZE: u32 = 27;
pub const HEADER_LEN: usize = 4;

fn char_index(c: char) -> Option<u32> {
    match c {
        'a'..='z' => Some(c as u32 - 'a' as u32),
        ' ' => Some(26),
        _ => None,
    }
}

fn index_char(x: u32) -> char {
    BODY_ALPHABET.as_bytes()[x as usize] as char
}

pub fn header(attrs: &VoiceAttributes) -> [u32; HEADER_LEN] {
    [
        GENDER_BASE + attrs.gender as u32,
        PITCH_BASE + attrs.pitch as u32,
        SPEED_BASE + attrs.speed as u32,
        STYLE_BASE + attrs.style as u32,
    ]
}

pub fn body_token(c: char, pitch: Pitch) -> Result<u32> {
    let x = char_index(c)
        .ok_or_else(|| Error::Encoding(format!("character {c:?} is outside the body alphabet")))?;
    Ok(BODY_BASE + (x + 3 * pitch.level()) % BODY_SIZE)
}

pub fn speech_encode(attrs: &VoiceAttributes, transcript: &str) -> Result<Vec<u32>> {
    let reps = attrs.speed.repetitions();
    let mut out = header(attrs).to_vec();
    for c in transcript.chars() {
        let tok = body_token(c, attrs.pitch)?;
        out.extend(std::iter::repeat_n(tok, reps));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeMode {
    Strict,
    /// Accepts body runs whose length is one off a multiple of the repetition count.
    Tolerant,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decoded {
    pub attrs: VoiceAttributes,
    pub transcript: String,
    /// False when tolerant decoding had to correct a run length.
    pub valid: bool,
}

fn decode_err(position: usize, reason: impl Into<String>) -> Error {
    Error::Decode {
        position,
        reason: reason.into(),
    }
}

fn header_field<T: Copy>(tokens: &[u32], pos: usize, base: u32, values: &[T], what: &str) -> Result<T> {
    let tok = tokens[pos];
    tok.checked_sub(base)
        .and_then(|i| values.get(i as usize).copied())
        .ok_or_else(|| decode_err(pos, format!("token {tok} is not a {what} header")))
}

pub fn oracle_decode(tokens: &[u32], mode: DecodeMode) -> Result<Decoded> {
    if tokens.is_empty() {
        return Err(decode_err(0, "empty sequence"));
    }
    if tokens.len() < HEADER_LEN {
        return Err(decode_err(tokens.len(), "truncated header"));
    }
    let attrs = VoiceAttributes {
        gender: header_field(tokens, 0, GENDER_BASE, &Gender::ALL, "gender")?,
        pitch: header_field(tokens, 1, PITCH_BASE, &Pitch::ALL, "pitch")?,
        speed: header_field(tokens, 2, SPEED_BASE, &Speed::ALL, "speed")?,
        style: header_field(tokens, 3, STYLE_BASE, &Style::ALL, "style")?,
    };
    let reps = attrs.speed.repetitions();
    let shift = 3 * attrs.pitch.level();
    let mut transcript = String::new();
    let mut valid = true;
    let mut pos = HEADER_LEN;
    while pos < tokens.len() {
        let tok = tokens[pos];
        if !(BODY_BASE..BODY_BASE + BODY_SIZE).contains(&tok) {
            return Err(decode_err(pos, format!("token {tok} is not a body token")));
        }
        let run = tokens[pos..].iter().take_while(|&&t| t == tok).count();
        let (q, rem) = (run / reps, run % reps);
        let chars = if rem == 0 {
            q
        } else {
            if mode == DecodeMode::Strict {
                return Err(decode_err(
                    pos,
                    format!("run of {run} is not a multiple of {reps}"),
                ));
            }
            valid = false;
            if rem == 1 && q >= 1 {
                q
            } else if rem == reps - 1 {
                q + 1
            } else {
                return Err(decode_err(
                    pos,
                    format!("run of {run} is more than one off a multiple of {reps}"),
                ));
            }
        };
        let x = (tok - BODY_BASE + BODY_SIZE * 3 - shift) % BODY_SIZE;
        transcript.extend(std::iter::repeat_n(index_char(x), chars));
        pos += run;
    }
    Ok(Decoded {
        attrs,
        transcript,
        valid,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn attrs(g: Gender, p: Pitch, s: Speed, st: Style) -> VoiceAttributes {
        VoiceAttributes {
            gender: g,
            pitch: p,
            speed: s,
            style: st,
        }
    }

    #[test]
    fn single_character_encoding() {
        let a = attrs(Gender::Male, Pitch::Mid, Speed::Fast, Style::Calm);
        // fast is the third speed value, so its header id is 5 + 2.
        assert_eq!(speech_encode(&a, "a").unwrap(), vec![1, 3, 7, 8, 19]);
    }

    #[test]
    fn empty_transcript_is_header_only() {
        let a = attrs(Gender::Female, Pitch::High, Speed::Slow, Style::Excited);
        assert_eq!(speech_encode(&a, "").unwrap(), vec![0, 4, 5, 9]);
    }

    #[test]
    fn slow_speed_triples_body() {
        let a = attrs(Gender::Female, Pitch::Low, Speed::Slow, Style::Calm);
        let toks = speech_encode(&a, "hello there").unwrap();
        assert_eq!(toks.len() - HEADER_LEN, 3 * 11);
    }

    #[test]
    fn pitch_rotation_wraps() {
        // 'z' = 25, high pitch adds 6 -> 31 mod 27 = 4.
        assert_eq!(body_token('z', Pitch::High).unwrap(), BODY_BASE + 4);
        assert_eq!(body_token(' ', Pitch::Low).unwrap(), BODY_BASE + 26);
    }

    #[test]
    fn rejects_out_of_alphabet() {
        let a = attrs(Gender::Female, Pitch::Low, Speed::Slow, Style::Calm);
        assert!(matches!(speech_encode(&a, "hi!"), Err(Error::Encoding(_))));
    }

    #[test]
    fn truncated_header() {
        assert!(matches!(
            oracle_decode(&[1, 3, 6], DecodeMode::Strict),
            Err(Error::Decode { position: 3, .. })
        ));
        assert!(matches!(
            oracle_decode(&[], DecodeMode::Tolerant),
            Err(Error::Decode { position: 0, .. })
        ));
    }

    #[test]
    fn bad_header_reports_position() {
        assert!(matches!(
            oracle_decode(&[0, 3, 9, 8], DecodeMode::Strict),
            Err(Error::Decode { position: 2, .. })
        ));
        assert!(matches!(
            oracle_decode(&[0, 3, 6, 8, 16, 60], DecodeMode::Tolerant),
            Err(Error::Decode { position: 5, .. })
        ));
    }

    #[test]
    fn strict_vs_tolerant_on_extra_repetition() {
        let a = attrs(Gender::Male, Pitch::Low, Speed::Mid, Style::Excited);
        let mut toks = speech_encode(&a, "ab").unwrap();
        // Duplicate the first body token: run of 3 where 2 is expected.
        toks.insert(HEADER_LEN, toks[HEADER_LEN]);
        assert!(matches!(
            oracle_decode(&toks, DecodeMode::Strict),
            Err(Error::Decode { position: 4, .. })
        ));
        let d = oracle_decode(&toks, DecodeMode::Tolerant).unwrap();
        assert_eq!(d.transcript, "ab");
        assert_eq!(d.attrs, a);
        assert!(!d.valid);
    }

    #[test]
    fn tolerant_accepts_missing_repetition() {
        let a = attrs(Gender::Male, Pitch::High, Speed::Slow, Style::Calm);
        let mut toks = speech_encode(&a, "ok").unwrap();
        toks.remove(HEADER_LEN);
        let d = oracle_decode(&toks, DecodeMode::Tolerant).unwrap();
        assert_eq!(d.transcript, "ok");
        assert!(!d.valid);
    }

    #[test]
    fn repeated_characters_decode() {
        let a = attrs(Gender::Female, Pitch::Mid, Speed::Slow, Style::Calm);
        let toks = speech_encode(&a, "hello  see").unwrap();
        let d = oracle_decode(&toks, DecodeMode::Strict).unwrap();
        assert_eq!(d.transcript, "hello  see");
        assert!(d.valid);
    }
}
