//! Description families: lexicons and sentence frames.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::attrs::{Attribute, VoiceAttributes};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyKind {
    InDomain,
    OodProxy,
}

/// Word lists keyed by `"<attribute>.<value>"` plus frames with `{g}`, `{p}`,
/// `{s}` and `{st}` slots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateFamily {
    pub kind: FamilyKind,
    pub lexicon: BTreeMap<String, Vec<String>>,
    pub frames: Vec<String>,
}

/// Function words ignored when comparing lexicons.
pub const STOPWORDS: &[&str] = &["a", "an", "the", "as", "like", "and", "with", "over", "nor"];

const SLOTS: [(Attribute, &str); 4] = [
    (Attribute::Gender, "{g}"),
    (Attribute::Pitch, "{p}"),
    (Attribute::Speed, "{s}"),
    (Attribute::Style, "{st}"),
];

/// Lowercase name of the value `attrs` holds for `attr`.
pub fn value_name(attrs: &VoiceAttributes, attr: Attribute) -> &'static str {
    const NAMES: [&[&str]; 4] = [
        &["female", "male"],
        &["low", "mid", "high"],
        &["slow", "mid", "fast"],
        &["calm", "excited"],
    ];
    let row = Attribute::ALL.iter().position(|&a| a == attr).unwrap();
    NAMES[row][attrs.value_index(attr)]
}

pub fn lexicon_key(attr: Attribute, value: &str) -> String {
    format!("{}.{value}", attr.name())
}

fn lexicon(entries: &[(&str, &[&str])]) -> BTreeMap<String, Vec<String>> {
    entries
        .iter()
        .map(|(k, v)| (k.to_string(), v.iter().map(|s| s.to_string()).collect()))
        .collect()
}

fn strings(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

impl TemplateFamily {
    pub fn in_domain() -> Self {
        TemplateFamily {
            kind: FamilyKind::InDomain,
            lexicon: lexicon(&[
                ("gender.female", &["female", "feminine"]),
                ("gender.male", &["male", "masculine"]),
                ("pitch.low", &["low", "deep"]),
                ("pitch.mid", &["medium", "normal"]),
                ("pitch.high", &["high", "bright"]),
                ("speed.slow", &["slow", "leisurely"]),
                ("speed.mid", &["moderate", "average"]),
                ("speed.fast", &["fast", "quick"]),
                ("style.calm", &["calm", "relaxed"]),
                ("style.excited", &["excited", "lively"]),
            ]),
            frames: strings(&[
                "a {g} speaker with a {p} pitch speaks at a {s} pace in a {st} tone.",
                "{g} voice, {p} pitch, {s} speed, {st} style.",
                "please use a {st} {g} voice with {p} pitch and a {s} pace.",
                "the speaker is {g}; the pitch is {p}, the pace is {s} and the mood is {st}.",
            ]),
        }
    }

    pub fn ood_proxy() -> Self {
        TemplateFamily {
            kind: FamilyKind::OodProxy,
            lexicon: lexicon(&[
                ("gender.female", &["a grandmother", "a young lady", "a queen"]),
                ("gender.male", &["a grandfather", "a young gentleman", "a king"]),
                ("pitch.low", &["rumbling like distant thunder", "booming like a drum"]),
                ("pitch.mid", &["plain and ordinary", "neither squeaky nor booming"]),
                ("pitch.high", &["squeaky like a mouse", "shrill as a whistle"]),
                ("speed.slow", &["dragging like a sleepy turtle", "crawling like honey"]),
                ("speed.mid", &["strolling along", "an even walking rhythm"]),
                ("speed.fast", &["words fire like a machine gun", "racing like a hummingbird"]),
                ("style.calm", &["serene as a still lake", "peaceful like a sleeping cat"]),
                ("style.excited", &["bursting like fireworks", "bubbling over with joy"]),
            ]),
            frames: strings(&[
                "picture {g}. the voice is {p}, {s}, and {st}.",
                "imagine {g} whose voice is {p}; {s}; {st}.",
                "{g} talking: {s}, {p}, {st}.",
            ]),
        }
    }

    pub fn of_kind(kind: FamilyKind) -> Self {
        match kind {
            FamilyKind::InDomain => Self::in_domain(),
            FamilyKind::OodProxy => Self::ood_proxy(),
        }
    }

    /// Phrases for one attribute value.
    pub fn phrases(&self, attr: Attribute, value: &str) -> Result<&[String]> {
        let key = lexicon_key(attr, value);
        match self.lexicon.get(&key) {
            Some(p) if !p.is_empty() => Ok(p),
            _ => Err(Error::Template(format!("no lexicon entry for {key}"))),
        }
    }

    /// Every lexicon entry present and every frame using all four slots.
    pub fn validate(&self) -> Result<()> {
        for a in VoiceAttributes::all() {
            for attr in Attribute::ALL {
                self.phrases(attr, value_name(&a, attr))?;
            }
        }
        if self.frames.is_empty() {
            return Err(Error::Template("family has no frames".into()));
        }
        for f in &self.frames {
            for (_, slot) in SLOTS {
                if !f.contains(slot) {
                    return Err(Error::Template(format!("frame {f:?} lacks slot {slot}")));
                }
            }
        }
        Ok(())
    }

    /// Content words used for one attribute across all its values.
    pub fn keywords(&self, attr: Attribute) -> BTreeSet<String> {
        let prefix = format!("{}.", attr.name());
        self.lexicon
            .iter()
            .filter(|(k, _)| k.starts_with(&prefix))
            .flat_map(|(_, v)| v.iter())
            .flat_map(|p| p.split_whitespace())
            .filter(|w| !STOPWORDS.contains(w))
            .map(str::to_string)
            .collect()
    }
}

/// Deterministic description of `attrs` drawn from `family`.
pub fn render_description(attrs: &VoiceAttributes, family: &TemplateFamily, seed: u64) -> Result<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let frame = family
        .frames
        .choose(&mut rng)
        .ok_or_else(|| Error::Template("family has no frames".into()))?;
    let mut out = frame.clone();
    for (attr, slot) in SLOTS {
        let phrase = family
            .phrases(attr, value_name(attrs, attr))?
            .choose(&mut rng)
            .expect("non-empty");
        if !out.contains(slot) {
            return Err(Error::Template(format!("frame {frame:?} lacks slot {slot}")));
        }
        out = out.replace(slot, phrase);
    }
    Ok(out)
}

/// Sentence tying an ood phrase to in-domain wording for the same value.
pub fn bridge_sentence(attr: Attribute, ood_phrase: &str, in_word: &str) -> String {
    let plain = match attr {
        Attribute::Gender => format!("a {in_word} speaker"),
        Attribute::Pitch => format!("a {in_word} pitch"),
        Attribute::Speed => format!("speaking at a {in_word} pace"),
        Attribute::Style => format!("a {in_word} tone"),
    };
    format!("{ood_phrase} means {plain}.")
}

/// Four-digit code matching the speech header ids, e.g. `"0479"`.
pub fn attribute_code(attrs: &VoiceAttributes) -> String {
    super::grammar::header(attrs)
        .iter()
        .map(|d| char::from_digit(*d, 10).expect("header ids are single digits"))
        .collect()
}
