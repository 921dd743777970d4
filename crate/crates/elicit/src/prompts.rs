//! Prompt templates for distribution and mode elicitation.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PersonaProfile {
    pub persona_id: String,
    pub profile_text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionSpec {
    pub question_id: String,
    pub question_text: String,
    pub n_categories: usize,
    /// Option labels in ordinal order; when present they are listed under
    /// the question as `1. label`, `2. label`, ...
    #[serde(default)]
    pub labels: Vec<String>,
}

impl QuestionSpec {
    /// The text substituted for `{question}`.
    pub fn rendered(&self) -> String {
        let mut text = self.question_text.clone();
        for (i, label) in self.labels.iter().enumerate() {
            text.push_str(&format!("\n{}. {label}", i + 1));
        }
        text
    }
}

/// What a prompt asks the model for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    Distribution,
    Mode,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prompt {
    pub system: String,
    pub user: String,
}

impl Prompt {
    /// SHA-256 (hex) over both messages.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.system.as_bytes());
        h.update([0u8]);
        h.update(self.user.as_bytes());
        hex::encode(h.finalize())
    }
}

fn count_word(k: usize) -> String {
    const WORDS: [&str; 11] = [
        "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten",
    ];
    WORDS
        .get(k)
        .map_or_else(|| k.to_string(), |w| w.to_string())
}

fn format_line(k: usize) -> String {
    let slots: Vec<String> = (1..=k).map(|i| format!("p{i}")).collect();
    format!(
        "Return ONLY a JSON-style list of {} numbers: [{}]. Do not include any explanation or additional text.",
        count_word(k),
        slots.join(", ")
    )
}

fn mode_format_line(k: usize) -> String {
    format!("Return ONLY a single integer from 1 to {k}. Do not include any explanation or additional text.")
}

fn user_prompt(persona: &PersonaProfile, question: &QuestionSpec, format: &str) -> String {
    format!(
        "PERSONA PROFILE:\n{}\n\nSURVEY QUESTION:\n{}\n\nFORMAT INSTRUCTIONS: \n{format}",
        persona.profile_text,
        question.rendered()
    )
}

/// System and user messages asking for a response distribution.
pub fn build_prompt(persona: &PersonaProfile, question: &QuestionSpec) -> Prompt {
    let k = question.n_categories;
    let responses: Vec<String> = (1..=k).map(|i| i.to_string()).collect();
    let system = format!(
        "You are an expert in simulating human survey responses. You will be given:\n\
- a detailed persona profile describing a human's values, beliefs, and background;\n\
- a survey question with ordinal response options numbered 1 to {k}.\n\
Your task is to predict the persona's *response distribution* to the question.\n\
\n\
Important instructions:\n\
- Responses are **ordinal**: higher numbers indicate stronger agreement, endorsement, or intensity (as implied by the question).\n\
- Output a probability distribution over responses {{{}}}.\n\
- The distribution should reflect realistic human uncertainty: do NOT assume the persona always responds deterministically.\n\
- If the persona strongly aligns with one side, assign higher probability there, but still allow nonzero probability for nearby options.\n\
- The probabilities must be non-negative and sum to exactly 1.\n\
- Avoid assigning probability 1.0 or 0.0 unless the persona makes all other responses essentially impossible.\n\
Output format:\n\
{}",
        responses.join(","),
        format_line(k)
    );
    Prompt {
        system,
        user: user_prompt(persona, question, &format_line(k)),
    }
}

/// System and user messages asking for the single most likely response.
pub fn build_mode_prompt(persona: &PersonaProfile, question: &QuestionSpec) -> Prompt {
    let k = question.n_categories;
    let system = format!(
        "You are an expert in simulating human survey responses. You will be given:\n\
- a detailed persona profile describing a human's values, beliefs, and background;\n\
- a survey question with ordinal response options numbered 1 to {k}.\n\
Your task is to predict the single response this persona is most likely to give.\n\
\n\
Important instructions:\n\
- Responses are **ordinal**: higher numbers indicate stronger agreement, endorsement, or intensity (as implied by the question).\n\
- Answer with exactly one option number between 1 and {k}.\n\
Output format:\n\
{}",
        mode_format_line(k)
    );
    Prompt {
        system,
        user: user_prompt(persona, question, &mode_format_line(k)),
    }
}

pub fn build(kind: PromptKind, persona: &PersonaProfile, question: &QuestionSpec) -> Prompt {
    match kind {
        PromptKind::Distribution => build_prompt(persona, question),
        PromptKind::Mode => build_mode_prompt(persona, question),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn persona() -> PersonaProfile {
        PersonaProfile {
            persona_id: "p1".into(),
            profile_text: "A retired teacher from Ohio.".into(),
        }
    }

    fn question(k: usize) -> QuestionSpec {
        QuestionSpec {
            question_id: "q1".into(),
            question_text: "How important is family in your life?".into(),
            n_categories: k,
            labels: vec![],
        }
    }

    #[test]
    fn four_category_prompts_are_exact() {
        let p = build_prompt(&persona(), &question(4));
        let system = "You are an expert in simulating human survey responses. You will be given:
- a detailed persona profile describing a human's values, beliefs, and background;
- a survey question with ordinal response options numbered 1 to 4.
Your task is to predict the persona's *response distribution* to the question.

Important instructions:
- Responses are **ordinal**: higher numbers indicate stronger agreement, endorsement, or intensity (as implied by the question).
- Output a probability distribution over responses {1,2,3,4}.
- The distribution should reflect realistic human uncertainty: do NOT assume the persona always responds deterministically.
- If the persona strongly aligns with one side, assign higher probability there, but still allow nonzero probability for nearby options.
- The probabilities must be non-negative and sum to exactly 1.
- Avoid assigning probability 1.0 or 0.0 unless the persona makes all other responses essentially impossible.
Output format:
Return ONLY a JSON-style list of four numbers: [p1, p2, p3, p4]. Do not include any explanation or additional text.";
        assert_eq!(p.system, system);
        let user = "PERSONA PROFILE:\nA retired teacher from Ohio.\n\nSURVEY QUESTION:\nHow important is family in your life?\n\nFORMAT INSTRUCTIONS: \nReturn ONLY a JSON-style list of four numbers: [p1, p2, p3, p4]. Do not include any explanation or additional text.";
        assert_eq!(p.user, user);
        assert!(p
            .system
            .contains("probabilities must be non-negative and sum to exactly 1"));
    }

    #[test]
    fn other_category_counts_generalize_the_wording() {
        let p = build_prompt(&persona(), &question(5));
        assert!(p.system.contains("numbered 1 to 5."));
        assert!(p.system.contains("{1,2,3,4,5}"));
        assert!(p.user.ends_with("list of five numbers: [p1, p2, p3, p4, p5]. Do not include any explanation or additional text."));
    }

    #[test]
    fn prompts_are_pure_and_hash_distinctly() {
        let a = build_prompt(&persona(), &question(4));
        assert_eq!(a, build_prompt(&persona(), &question(4)));
        assert_ne!(a.hash(), build_mode_prompt(&persona(), &question(4)).hash());
    }

    #[test]
    fn labels_are_listed_under_the_question() {
        let mut q = question(2);
        q.labels = vec!["No".into(), "Yes".into()];
        assert_eq!(
            q.rendered(),
            "How important is family in your life?\n1. No\n2. Yes"
        );
    }
}
