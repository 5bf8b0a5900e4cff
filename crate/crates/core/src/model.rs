//! Survey vocabulary shared by every stage of the pipeline.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance on the total mass of a stored distribution.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-9;

/// Number of ordinal response options of a question. Only 2, 4 and 5 occur.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "usize", into = "usize")]
pub struct Cardinality(u8);

impl Cardinality {
    pub const ALLOWED: [usize; 3] = [2, 4, 5];

    pub fn new(c: usize) -> Result<Self> {
        if Self::ALLOWED.contains(&c) {
            Ok(Cardinality(c as u8))
        } else {
            Err(Error::InvalidCardinality(c))
        }
    }

    pub fn get(self) -> usize {
        self.0 as usize
    }
}

impl TryFrom<usize> for Cardinality {
    type Error = Error;
    fn try_from(c: usize) -> Result<Self> {
        Cardinality::new(c)
    }
}

impl From<Cardinality> for usize {
    fn from(c: Cardinality) -> usize {
        c.get()
    }
}

impl fmt::Display for Cardinality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawQuestion")]
pub struct Question {
    pub id: String,
    pub text: String,
    pub cardinality: Cardinality,
    /// Label of scale point 1.
    pub low_label: String,
    /// Label of scale point `cardinality`.
    pub high_label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tag: Option<String>,
}

#[derive(Deserialize)]
struct RawQuestion {
    id: String,
    text: String,
    cardinality: Cardinality,
    low_label: String,
    high_label: String,
    #[serde(default)]
    tag: Option<String>,
}

impl TryFrom<RawQuestion> for Question {
    type Error = Error;
    fn try_from(r: RawQuestion) -> Result<Self> {
        Question::new(r.id, r.text, r.cardinality, r.low_label, r.high_label, r.tag)
    }
}

impl Question {
    pub fn new(
        id: impl Into<String>,
        text: impl Into<String>,
        cardinality: Cardinality,
        low_label: impl Into<String>,
        high_label: impl Into<String>,
        tag: Option<String>,
    ) -> Result<Self> {
        let q = Question {
            id: id.into(),
            text: text.into(),
            cardinality,
            low_label: low_label.into(),
            high_label: high_label.into(),
            tag,
        };
        if q.id.is_empty() || q.id.contains('|') || q.id.chars().any(char::is_whitespace) {
            return Err(Error::InvalidQuestion(format!(
                "id {:?} must be non-empty without '|' or whitespace",
                q.id
            )));
        }
        if q.text.trim().is_empty() {
            return Err(Error::InvalidQuestion(format!("{}: empty text", q.id)));
        }
        if q.low_label.trim().is_empty() || q.high_label.trim().is_empty() {
            return Err(Error::InvalidQuestion(format!("{}: empty scale label", q.id)));
        }
        Ok(q)
    }
}

/// Checks that question ids are unique and tags belong to `tags` (when given).
pub fn validate_corpus(questions: &[Question], tags: Option<&[String]>) -> Result<()> {
    let mut seen = alloc::collections::BTreeSet::new();
    for q in questions {
        if !seen.insert(q.id.as_str()) {
            return Err(Error::InvalidQuestion(format!("duplicate id {}", q.id)));
        }
        if let (Some(tags), Some(tag)) = (tags, &q.tag) {
            if !tags.iter().any(|t| t == tag) {
                return Err(Error::InvalidQuestion(format!("{}: unknown tag {tag:?}", q.id)));
            }
        }
    }
    Ok(())
}

macro_rules! token_enum {
    ($(#[$m:meta])* $name:ident { $($variant:ident => $tok:literal),+ $(,)? }) => {
        $(#[$m])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        pub enum $name { $($variant),+ }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            /// Token used in permutation keys and config files.
            pub fn token(self) -> &'static str {
                match self { $($name::$variant => $tok),+ }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.token())
            }
        }

        impl FromStr for $name {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($tok => Ok($name::$variant),)+
                    _ => Err(Error::KeyParse(s.to_string())),
                }
            }
        }
    };
}

token_enum!(Ideology {
    VeryLiberal => "VeryLiberal",
    Liberal => "Liberal",
    Moderate => "Moderate",
    Conservative => "Conservative",
    VeryConservative => "VeryConservative",
});

token_enum!(Gender {
    Man => "Man",
    Woman => "Woman",
});

token_enum!(Race {
    White => "White",
    NonWhite => "NonWhite",
});

token_enum!(
    /// Single-Individual (one simulated respondent, repeated) or
    /// Direct-Distribution (the whole group distribution in one request).
    Framework {
        SI => "SI",
        DD => "DD",
    }
);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DemographicCell {
    pub ideology: Ideology,
    pub gender: Gender,
    pub race: Race,
}

impl DemographicCell {
    pub const COUNT: usize = 20;

    pub fn new(ideology: Ideology, gender: Gender, race: Race) -> Self {
        DemographicCell { ideology, gender, race }
    }

    /// All 20 cells, ideology-major, then gender, then race.
    pub fn all() -> Vec<DemographicCell> {
        let mut out = Vec::with_capacity(Self::COUNT);
        for &ideology in Ideology::ALL {
            for &gender in Gender::ALL {
                for &race in Race::ALL {
                    out.push(DemographicCell { ideology, gender, race });
                }
            }
        }
        out
    }
}

impl fmt::Display for DemographicCell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}|{}|{}", self.ideology, self.gender, self.race)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct PromptVariant {
    pub framework: Framework,
    pub cot_reminder: bool,
    pub dist_reminder: bool,
}

impl<'de> Deserialize<'de> for PromptVariant {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> core::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            framework: Framework,
            cot_reminder: bool,
            dist_reminder: bool,
        }
        let r = Raw::deserialize(d)?;
        PromptVariant::new(r.framework, r.cot_reminder, r.dist_reminder)
            .map_err(serde::de::Error::custom)
    }
}

impl PromptVariant {
    pub fn new(framework: Framework, cot_reminder: bool, dist_reminder: bool) -> Result<Self> {
        if framework == Framework::SI && (!cot_reminder || dist_reminder) {
            return Err(Error::InvalidVariant(
                "SI prompts always request a justification and never carry the distribution reminder"
                    .to_string(),
            ));
        }
        Ok(PromptVariant { framework, cot_reminder, dist_reminder })
    }

    pub const fn si() -> Self {
        PromptVariant { framework: Framework::SI, cot_reminder: true, dist_reminder: false }
    }

    pub const fn dd(cot_reminder: bool, dist_reminder: bool) -> Self {
        PromptVariant { framework: Framework::DD, cot_reminder, dist_reminder }
    }

    /// The four DD templates, in a fixed order.
    pub const DD_VARIANTS: [PromptVariant; 4] = [
        PromptVariant::dd(true, true),
        PromptVariant::dd(true, false),
        PromptVariant::dd(false, true),
        PromptVariant::dd(false, false),
    ];

    /// DD template paired against SI in framework comparisons: justification
    /// requested, no distribution reminder.
    pub const fn closest_to_si() -> Self {
        PromptVariant::dd(true, false)
    }
}

/// Identity of one elicitation: a question, a demographic cell and a prompt variant.
///
/// Canonical form: `<question_id>|<ideology>|<gender>|<race>|<framework>|cot=<0/1>|dist=<0/1>`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PermutationKey {
    pub question_id: String,
    pub cell: DemographicCell,
    pub variant: PromptVariant,
}

impl PermutationKey {
    pub fn new(question_id: impl Into<String>, cell: DemographicCell, variant: PromptVariant) -> Self {
        PermutationKey { question_id: question_id.into(), cell, variant }
    }

    pub fn canonical(&self) -> String {
        self.to_string()
    }

    pub fn parse(s: &str) -> Result<Self> {
        s.parse()
    }
}

impl fmt::Display for PermutationKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}|{}|{}|{}|{}|cot={}|dist={}",
            self.question_id,
            self.cell.ideology,
            self.cell.gender,
            self.cell.race,
            self.variant.framework,
            u8::from(self.variant.cot_reminder),
            u8::from(self.variant.dist_reminder),
        )
    }
}

impl FromStr for PermutationKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::KeyParse(s.to_string());
        let parts: Vec<&str> = s.split('|').collect();
        let [qid, ideo, gender, race, fw, cot, dist] = parts.as_slice() else {
            return Err(bad());
        };
        if qid.is_empty() {
            return Err(bad());
        }
        let flag = |part: &str, name: &str| -> Result<bool> {
            match part.strip_prefix(name).and_then(|r| r.strip_prefix('=')) {
                Some("0") => Ok(false),
                Some("1") => Ok(true),
                _ => Err(bad()),
            }
        };
        let cell = DemographicCell {
            ideology: ideo.parse().map_err(|_| bad())?,
            gender: gender.parse().map_err(|_| bad())?,
            race: race.parse().map_err(|_| bad())?,
        };
        let variant = PromptVariant::new(
            fw.parse().map_err(|_| bad())?,
            flag(cot, "cot")?,
            flag(dist, "dist")?,
        )
        .map_err(|_| bad())?;
        Ok(PermutationKey { question_id: (*qid).to_string(), cell, variant })
    }
}

impl Serialize for PermutationKey {
    fn serialize<S: serde::Serializer>(&self, s: S) -> core::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for PermutationKey {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> core::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Positions of the categories on the scaled `[0, 1]` grid: `(i-1)/(C-1)`.
pub fn scaled_positions(cardinality: usize) -> Result<Vec<f64>> {
    if cardinality < 2 {
        return Err(Error::InvalidCardinality(cardinality));
    }
    let last = (cardinality - 1) as f64;
    Ok((0..cardinality).map(|i| i as f64 / last).collect())
}

/// Probability vector over an ordinal scale, normalized to 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct OpinionDistribution {
    probs: Vec<f64>,
}

impl OpinionDistribution {
    /// Wraps an already-normalized vector, checking the invariants without rescaling.
    pub fn from_probs(probs: Vec<f64>) -> Result<Self> {
        if probs.len() < 2 {
            return Err(Error::InvalidCardinality(probs.len()));
        }
        check_masses(&probs)?;
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > NORMALIZATION_TOLERANCE {
            return Err(Error::NotNormalized { sum });
        }
        Ok(OpinionDistribution { probs })
    }

    pub fn cardinality(&self) -> usize {
        self.probs.len()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Cumulative distribution at categories `1..C`.
    pub fn cdf(&self) -> Vec<f64> {
        self.probs
            .iter()
            .scan(0.0, |acc, p| {
                *acc += p;
                Some(*acc)
            })
            .collect()
    }

    /// The same distribution with the scale read backwards.
    pub fn reversed(&self) -> Self {
        let mut probs = self.probs.clone();
        probs.reverse();
        OpinionDistribution { probs }
    }
}

impl TryFrom<Vec<f64>> for OpinionDistribution {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        OpinionDistribution::from_probs(v)
    }
}

impl From<OpinionDistribution> for Vec<f64> {
    fn from(d: OpinionDistribution) -> Vec<f64> {
        d.probs
    }
}

fn check_masses(raw: &[f64]) -> Result<()> {
    for (index, &value) in raw.iter().enumerate() {
        if !value.is_finite() {
            return Err(Error::NonFinite);
        }
        if value < 0.0 {
            return Err(Error::NegativeMass { index, value });
        }
    }
    Ok(())
}

/// Normalizes non-negative masses (counts, percentages) into a distribution.
pub fn make_distribution(raw: &[f64], cardinality: usize) -> Result<OpinionDistribution> {
    if cardinality < 2 {
        return Err(Error::InvalidCardinality(cardinality));
    }
    if raw.len() != cardinality {
        return Err(Error::Shape { expected: cardinality, got: raw.len() });
    }
    check_masses(raw)?;
    let total: f64 = raw.iter().sum();
    if total <= 0.0 {
        return Err(Error::EmptyDistribution);
    }
    Ok(OpinionDistribution { probs: raw.iter().map(|x| x / total).collect() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    #[test]
    fn positions_on_unit_grid() {
        assert_eq!(scaled_positions(2).unwrap(), vec![0.0, 1.0]);
        assert_eq!(scaled_positions(5).unwrap(), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        let four = scaled_positions(4).unwrap();
        assert_eq!(four[0], 0.0);
        assert!((four[1] - 1.0 / 3.0).abs() < 1e-15);
        assert!((four[2] - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(four[3], 1.0);
        assert_eq!(scaled_positions(1), Err(Error::InvalidCardinality(1)));
        assert_eq!(scaled_positions(0), Err(Error::InvalidCardinality(0)));
    }

    #[test]
    fn positions_have_mean_one_half() {
        for c in 2..12 {
            let p = scaled_positions(c).unwrap();
            let mean = p.iter().sum::<f64>() / c as f64;
            assert!((mean - 0.5).abs() < 1e-15, "C={c}");
            assert!(p.windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn make_distribution_examples() {
        assert_eq!(make_distribution(&[50.0, 50.0], 2).unwrap().probs(), &[0.5, 0.5]);
        assert_eq!(
            make_distribution(&[20.0, 30.0, 50.0, 0.0], 4).unwrap().probs(),
            &[0.2, 0.3, 0.5, 0.0]
        );
        assert_eq!(make_distribution(&[1.0; 5], 5).unwrap().probs(), &[0.2; 5]);
    }

    #[test]
    fn make_distribution_errors() {
        assert!(matches!(
            make_distribution(&[1.0, -0.5], 2),
            Err(Error::NegativeMass { index: 1, .. })
        ));
        assert_eq!(make_distribution(&[0.0, 0.0], 2), Err(Error::EmptyDistribution));
        assert_eq!(
            make_distribution(&[33.3, 33.3, 33.4], 4),
            Err(Error::Shape { expected: 4, got: 3 })
        );
        assert_eq!(make_distribution(&[f64::NAN, 1.0], 2), Err(Error::NonFinite));
    }

    #[test]
    fn cardinality_closed_set() {
        for c in [2, 4, 5] {
            assert_eq!(Cardinality::new(c).unwrap().get(), c);
        }
        for c in [0, 1, 3, 6, 7] {
            assert!(Cardinality::new(c).is_err());
        }
    }

    #[test]
    fn twenty_distinct_cells() {
        let cells = DemographicCell::all();
        assert_eq!(cells.len(), 20);
        let set: alloc::collections::BTreeSet<_> = cells.iter().collect();
        assert_eq!(set.len(), 20);
    }

    #[test]
    fn si_variant_invariant() {
        assert!(PromptVariant::new(Framework::SI, true, false).is_ok());
        assert!(PromptVariant::new(Framework::SI, false, false).is_err());
        assert!(PromptVariant::new(Framework::SI, true, true).is_err());
        assert!(serde_json::from_str::<PromptVariant>(
            r#"{"framework":"SI","cot_reminder":false,"dist_reminder":false}"#
        )
        .is_err());
    }

    #[test]
    fn canonical_key_format() {
        let key = PermutationKey::new(
            "CC22_330a",
            DemographicCell::new(Ideology::VeryConservative, Gender::Woman, Race::NonWhite),
            PromptVariant::dd(true, false),
        );
        assert_eq!(key.canonical(), "CC22_330a|VeryConservative|Woman|NonWhite|DD|cot=1|dist=0");
        let si = PermutationKey::new(
            "q1",
            DemographicCell::new(Ideology::Moderate, Gender::Man, Race::White),
            PromptVariant::si(),
        );
        assert_eq!(si.canonical(), "q1|Moderate|Man|White|SI|cot=1|dist=0");
    }

    #[test]
    fn key_parse_rejects_garbage() {
        for bad in [
            "",
            "q1|Moderate|Man|White|SI|cot=1",
            "q1|Centrist|Man|White|DD|cot=1|dist=0",
            "q1|Moderate|Man|White|DD|cot=2|dist=0",
            "q1|Moderate|Man|White|SI|cot=0|dist=0",
            "|Moderate|Man|White|DD|cot=1|dist=0",
            "q1|Moderate|Man|White|DD|dist=1|cot=0",
        ] {
            assert!(PermutationKey::parse(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn question_validation() {
        let c5 = Cardinality::new(5).unwrap();
        assert!(Question::new("q1", "Ban X", c5, "Strongly oppose", "Strongly support", None).is_ok());
        assert!(Question::new("q|1", "Ban X", c5, "a", "b", None).is_err());
        assert!(Question::new("q1", "Ban X", c5, "", "b", None).is_err());
        assert!(Question::new("q1", "Ban X", c5, "a", " ", None).is_err());
        assert!(serde_json::from_str::<Question>(
            r#"{"id":"q1","text":"t","cardinality":3,"low_label":"a","high_label":"b"}"#
        )
        .is_err());
    }

    #[test]
    fn corpus_uniqueness_and_tags() {
        let c2 = Cardinality::new(2).unwrap();
        let q = |id: &str, tag: &str| Question::new(id, "t", c2, "No", "Yes", Some(tag.into())).unwrap();
        let tags = vec![String::from("Gun Policy")];
        assert!(validate_corpus(&[q("a", "Gun Policy"), q("b", "Gun Policy")], Some(&tags)).is_ok());
        assert!(validate_corpus(&[q("a", "Gun Policy"), q("a", "Gun Policy")], Some(&tags)).is_err());
        assert!(validate_corpus(&[q("a", "Other")], Some(&tags)).is_err());
    }

    fn arb_key() -> impl Strategy<Value = PermutationKey> {
        (
            "[A-Za-z0-9_.-]{1,12}",
            0usize..20,
            prop_oneof![Just(PromptVariant::si()), (any::<bool>(), any::<bool>()).prop_map(|(c, d)| PromptVariant::dd(c, d))],
        )
            .prop_map(|(q, cell, v)| PermutationKey::new(q, DemographicCell::all()[cell], v))
    }

    proptest! {
        #[test]
        fn make_distribution_is_normalized(raw in proptest::collection::vec(0.0f64..1e6, 2..8)) {
            prop_assume!(raw.iter().sum::<f64>() > 0.0);
            let d = make_distribution(&raw, raw.len()).unwrap();
            prop_assert_eq!(d.cardinality(), raw.len());
            prop_assert!(d.probs().iter().all(|&p| p >= 0.0));
            prop_assert!((d.probs().iter().sum::<f64>() - 1.0).abs() <= NORMALIZATION_TOLERANCE);
            prop_assert!(OpinionDistribution::from_probs(d.probs().to_vec()).is_ok());
        }

        #[test]
        fn key_round_trips(key in arb_key()) {
            prop_assert_eq!(PermutationKey::parse(&key.canonical()).unwrap(), key.clone());
            let json = serde_json::to_string(&key).unwrap();
            prop_assert_eq!(serde_json::from_str::<PermutationKey>(&json).unwrap(), key);
        }
    }
}
