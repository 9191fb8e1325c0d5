//! Class labels shared by every stage of the pipeline.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Binary antigenic relationship between two strains.
///
/// `Variant` is the positive class for F1 and the winner of every
/// probability tie.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Class {
    Similar,
    Variant,
}

impl Class {
    pub const ALL: [Class; 2] = [Class::Similar, Class::Variant];

    /// Column of this class in a probability row `[p_similar, p_variant]`.
    pub fn index(self) -> usize {
        match self {
            Class::Similar => 0,
            Class::Variant => 1,
        }
    }

    pub fn from_index(i: usize) -> Class {
        if i == 0 {
            Class::Similar
        } else {
            Class::Variant
        }
    }

    /// +1 for Variant, -1 for Similar.
    pub fn sign(self) -> f64 {
        match self {
            Class::Similar => -1.0,
            Class::Variant => 1.0,
        }
    }

    /// Argmax over `[p_similar, p_variant]`, ties going to Variant.
    pub fn from_proba(p: [f64; 2]) -> Class {
        if p[0] > p[1] {
            Class::Similar
        } else {
            Class::Variant
        }
    }
}

impl fmt::Display for Class {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        Label::from(*self).fmt(f)
    }
}

/// Label of a strain pair in a corpus, including the unlabelled state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    Similar,
    Variant,
    Unlabelled,
}

impl Label {
    pub fn class(self) -> Option<Class> {
        match self {
            Label::Similar => Some(Class::Similar),
            Label::Variant => Some(Class::Variant),
            Label::Unlabelled => None,
        }
    }

    pub fn is_labelled(self) -> bool {
        self != Label::Unlabelled
    }
}

impl From<Class> for Label {
    fn from(c: Class) -> Self {
        match c {
            Class::Similar => Label::Similar,
            Class::Variant => Label::Variant,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Label::Similar => "Similar",
            Label::Variant => "Variant",
            Label::Unlabelled => "Unlabelled",
        };
        f.write_str(s)
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "Similar" => Ok(Label::Similar),
            "Variant" => Ok(Label::Variant),
            "Unlabelled" => Ok(Label::Unlabelled),
            other => Err(format!("unknown label `{other}`")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn proba_ties_go_to_variant() {
        assert_eq!(Class::from_proba([0.5, 0.5]), Class::Variant);
        assert_eq!(Class::from_proba([0.9, 0.1]), Class::Similar);
        assert_eq!(Class::from_proba([0.0, 0.0]), Class::Variant);
    }

    #[test]
    fn label_text_round_trip() {
        for l in [Label::Similar, Label::Variant, Label::Unlabelled] {
            assert_eq!(l.to_string().parse::<Label>().unwrap(), l);
        }
        assert!("similar".parse::<Label>().is_err());
    }
}
