use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Female,
    Male,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pitch {
    Low,
    Mid,
    High,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speed {
    Slow,
    Mid,
    Fast,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Style {
    Calm,
    Excited,
}

impl Gender {
    pub const ALL: [Gender; 2] = [Gender::Female, Gender::Male];
}
impl Pitch {
    pub const ALL: [Pitch; 3] = [Pitch::Low, Pitch::Mid, Pitch::High];

    pub fn level(self) -> u32 {
        self as u32
    }
}
impl Speed {
    pub const ALL: [Speed; 3] = [Speed::Slow, Speed::Mid, Speed::Fast];

    /// Times each body token is repeated.
    pub fn repetitions(self) -> usize {
        match self {
            Speed::Slow => 3,
            Speed::Mid => 2,
            Speed::Fast => 1,
        }
    }
}
impl Style {
    pub const ALL: [Style; 2] = [Style::Calm, Style::Excited];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VoiceAttributes {
    pub gender: Gender,
    pub pitch: Pitch,
    pub speed: Speed,
    pub style: Style,
}

/// The four attributes, for per-attribute reporting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Attribute {
    Gender,
    Pitch,
    Speed,
    Style,
}

impl Attribute {
    pub const ALL: [Attribute; 4] = [
        Attribute::Gender,
        Attribute::Pitch,
        Attribute::Speed,
        Attribute::Style,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Attribute::Gender => "gender",
            Attribute::Pitch => "pitch",
            Attribute::Speed => "speed",
            Attribute::Style => "style",
        }
    }

    pub fn cardinality(self) -> usize {
        match self {
            Attribute::Gender | Attribute::Style => 2,
            Attribute::Pitch | Attribute::Speed => 3,
        }
    }

    /// Accuracy of uniform guessing.
    pub fn chance(self) -> f64 {
        1.0 / self.cardinality() as f64
    }
}

impl VoiceAttributes {
    /// All 36 combinations in a fixed order.
    pub fn all() -> Vec<VoiceAttributes> {
        let mut out = Vec::with_capacity(36);
        for gender in Gender::ALL {
            for pitch in Pitch::ALL {
                for speed in Speed::ALL {
                    for style in Style::ALL {
                        out.push(VoiceAttributes {
                            gender,
                            pitch,
                            speed,
                            style,
                        });
                    }
                }
            }
        }
        out
    }

    /// Index of the value of `attr`, in declaration order.
    pub fn value_index(&self, attr: Attribute) -> usize {
        match attr {
            Attribute::Gender => self.gender as usize,
            Attribute::Pitch => self.pitch as usize,
            Attribute::Speed => self.speed as usize,
            Attribute::Style => self.style as usize,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thirty_six_distinct_combinations() {
        let all = VoiceAttributes::all();
        assert_eq!(all.len(), 36);
        let set: std::collections::BTreeSet<_> = all.iter().collect();
        assert_eq!(set.len(), 36);
    }

    #[test]
    fn serde_lowercase() {
        let a = VoiceAttributes {
            gender: Gender::Male,
            pitch: Pitch::Mid,
            speed: Speed::Fast,
            style: Style::Calm,
        };
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            r#"{"gender":"male","pitch":"mid","speed":"fast","style":"calm"}"#
        );
    }
}
