//! Prompt text for every (question, cell, variant) permutation.
//!
//! There are five template shapes: one Single-Individual template and four
//! Direct-Distribution templates obtained by switching the chain-of-thought
//! sentence and the distribution-reminder sentence on or off. Scale labels
//! and the question are wrapped in plain ASCII double quotes.

use alloc::format;
use alloc::string::String;

use serde::{Deserialize, Serialize};

use crate::model::{DemographicCell, Framework, Gender, Ideology, PermutationKey, PromptVariant, Question, Race};
use crate::payload::ExpectedSchema;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub key: PermutationKey,
    pub text: String,
    pub expected_schema: ExpectedSchema,
}

pub fn ideology_word(ideology: Ideology) -> &'static str {
    match ideology {
        Ideology::VeryLiberal => "Very liberal",
        Ideology::Liberal => "Liberal",
        Ideology::Moderate => "Moderate",
        Ideology::Conservative => "Conservative",
        Ideology::VeryConservative => "Very conservative",
    }
}

pub fn gender_word(gender: Gender) -> &'static str {
    match gender {
        Gender::Man => "Man",
        Gender::Woman => "Woman",
    }
}

pub fn race_word(race: Race) -> &'static str {
    match race {
        Race::White => "White",
        Race::NonWhite => "Non-white",
    }
}

/// Surface forms substituted for `{Ideology}`, `{Gender}` and `{Race}`.
pub fn demographic_phrase(cell: DemographicCell) -> (&'static str, &'static str, &'static str) {
    (ideology_word(cell.ideology), gender_word(cell.gender), race_word(cell.race))
}

pub fn expected_schema(variant: PromptVariant) -> ExpectedSchema {
    match (variant.framework, variant.cot_reminder) {
        (Framework::SI, _) => ExpectedSchema::ScoreWithJustification,
        (Framework::DD, true) => ExpectedSchema::DistributionWithJustification,
        (Framework::DD, false) => ExpectedSchema::DistributionOnly,
    }
}

pub fn render(question: &Question, cell: DemographicCell, variant: PromptVariant) -> RenderedPrompt {
    let (ideology, gender, race) = demographic_phrase(cell);
    let c = question.cardinality.get();
    let (q, low, high) = (&question.text, &question.low_label, &question.high_label);

    let text = match variant.framework {
        Framework::SI => format!(
            "Please represent the opinion of an individual selected at random from the politically \
             {ideology} {gender} populace living in the United States who identify as {race} on the \
             policy proposal to: \"{q}\" where the person's position on the issue is on a {c}-point \
             scale, with 1 representing the position \"{low}\" and {c} represents the position \
             \"{high}\". Write a brief 1 sentence justification on the beliefs of the selected {race} \
             {ideology} {gender} individual which motivates the score. Following the justification, \
             report the score the individual would select. Report the justification and score via \
             the \"justification\" and \"score\" JSON keys."
        ),
        Framework::DD => {
            let mut t = format!(
                "Please represent the distribution of opinions of the politically {ideology} {gender} \
                 populace living in the United States who identify as {race} on the policy proposal \
                 to: \"{q}\" where a person's position on the issue is on a {c}-point scale, with 1 \
                 representing the position \"{low}\" and {c} represents the position \"{high}\"."
            );
            if variant.cot_reminder {
                t.push_str(&format!(
                    " Write a brief 1 sentence justification on the beliefs of the selected {race} \
                     {ideology} {gender} populace, and infer the mean and spread of the distribution."
                ));
            }
            if variant.dist_reminder {
                t.push_str(
                    " Note the distribution need not be normal, symmetric, or encompass all category options.",
                );
            }
            t.push_str(if variant.cot_reminder {
                " Following the justification, report the proportion"
            } else {
                " Report the proportion"
            });
            t.push_str(&format!(
                " of individuals that would select each position as a list of decimals, such that the \
                 sum of all decimals is 100. The list should contain exactly {c} numbers."
            ));
            t.push_str(if variant.cot_reminder {
                " Report the justification and distribution via the \"justification\" and \
                 \"distribution\" JSON keys."
            } else {
                " Report the distribution via the \"distribution\" JSON key. Leave the \
                 \"justification\" JSON key as an empty string: Do not report any justification for \
                 the distribution."
            });
            t
        }
    };

    RenderedPrompt {
        key: PermutationKey::new(question.id.clone(), cell, variant),
        text,
        expected_schema: expected_schema(variant),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Cardinality;

    fn question(c: usize) -> Question {
        Question::new(
            "q1",
            "Ban assault rifles",
            Cardinality::new(c).unwrap(),
            "Strongly oppose",
            "Strongly support",
            None,
        )
        .unwrap()
    }

    #[test]
    fn surface_words() {
        assert_eq!(ideology_word(Ideology::VeryConservative), "Very conservative");
        assert_eq!(race_word(Race::NonWhite), "Non-white");
        assert_eq!(gender_word(Gender::Man), "Man");
    }

    #[test]
    fn dd_opening_sentence() {
        let cell = DemographicCell::new(Ideology::Conservative, Gender::Woman, Race::NonWhite);
        let p = render(&question(5), cell, PromptVariant::dd(true, true));
        assert!(p.text.starts_with(
            "Please represent the distribution of opinions of the politically Conservative Woman \
             populace living in the United States who identify as Non-white on the policy proposal to:"
        ));
        assert_eq!(p.expected_schema, ExpectedSchema::DistributionWithJustification);
    }

    #[test]
    fn si_mentions_scale_and_keys() {
        let cell = DemographicCell::new(Ideology::Liberal, Gender::Man, Race::White);
        let p = render(&question(5), cell, PromptVariant::si());
        assert!(p.text.contains("on a 5-point scale, with 1 representing the position"));
        assert!(p.text.contains("\"justification\" and \"score\" JSON keys"));
        assert_eq!(p.expected_schema, ExpectedSchema::ScoreWithJustification);
    }

    #[test]
    fn every_prompt_carries_question_labels_and_cardinality() {
        for c in [2, 4, 5] {
            let q = question(c);
            for cell in DemographicCell::all() {
                for v in core::iter::once(PromptVariant::si()).chain(PromptVariant::DD_VARIANTS) {
                    let p = render(&q, cell, v);
                    assert!(p.text.contains(&q.text));
                    assert!(p.text.contains("\"Strongly oppose\""));
                    assert!(p.text.contains("\"Strongly support\""));
                    assert!(p.text.contains(&format!("{c}-point scale")));
                    assert_eq!(p, render(&q, cell, v));
                    assert!(!p.text.contains("  "));
                }
            }
        }
    }

    #[test]
    fn schema_follows_variant() {
        assert_eq!(expected_schema(PromptVariant::dd(false, true)), ExpectedSchema::DistributionOnly);
        assert_eq!(expected_schema(PromptVariant::dd(false, false)), ExpectedSchema::DistributionOnly);
        assert_eq!(
            expected_schema(PromptVariant::dd(true, false)),
            ExpectedSchema::DistributionWithJustification
        );
    }
}
