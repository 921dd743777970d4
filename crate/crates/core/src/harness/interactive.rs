//! Terminal session with one human respondent driven by greedy selection.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::persona::{LikelihoodTensor, PersonaPrior, SessionState};
use crate::policy::greedy_step;
use crate::scalar::Scalar;
use crate::scoring::UncertaintyKind;

use super::HarnessError;

/// Everything the session needs; question texts fall back to ids.
#[derive(Debug, Clone)]
pub struct InteractiveSetup<S> {
    pub tensor: LikelihoodTensor<S>,
    pub prior: PersonaPrior<S>,
    pub persona_ids: Vec<String>,
    pub question_ids: Vec<String>,
    pub question_texts: BTreeMap<String, String>,
    pub targets: Vec<usize>,
    pub feasible: Vec<usize>,
    pub kind: UncertaintyKind,
    pub budget: usize,
    /// Personas listed after every answer.
    pub top: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptStep {
    pub question_id: String,
    /// As typed, `1..=K`.
    pub answer: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub targets: Vec<String>,
    pub steps: Vec<TranscriptStep>,
    pub quit_early: bool,
    pub final_weights: Vec<f64>,
    /// Final predictive distribution of each target, keyed by question id.
    pub final_predictions: BTreeMap<String, Vec<f64>>,
}

enum Reply {
    Answer(usize),
    Quit,
}

fn read_reply<R: BufRead, W: Write>(
    input: &mut R,
    output: &mut W,
    k: usize,
) -> Result<Reply, HarnessError> {
    loop {
        write!(output, "answer 1-{k} or quit> ")?;
        output.flush()?;
        let mut line = String::new();
        if input.read_line(&mut line)? == 0 {
            writeln!(output)?;
            return Ok(Reply::Quit);
        }
        let text = line.trim();
        if text.eq_ignore_ascii_case("quit") || text.eq_ignore_ascii_case("q") {
            return Ok(Reply::Quit);
        }
        match text.parse::<usize>() {
            Ok(a) if (1..=k).contains(&a) => return Ok(Reply::Answer(a)),
            _ => writeln!(output, "please type a whole number from 1 to {k}, or quit")?,
        }
    }
}

fn format_dist<S: Scalar>(p: &[S]) -> String {
    let parts: Vec<String> = p
        .iter()
        .map(|v| format!("{:.3}", v.to_f64_lossy()))
        .collect();
    format!("[{}]", parts.join(", "))
}

impl<S: Scalar> InteractiveSetup<S> {
    fn question_text(&self, q: usize) -> &str {
        let id = &self.question_ids[q];
        self.question_texts
            .get(id)
            .map_or(id.as_str(), String::as_str)
    }

    fn print_state<W: Write>(
        &self,
        state: &SessionState<S>,
        output: &mut W,
    ) -> Result<(), HarnessError> {
        writeln!(output, "target predictions:")?;
        for &t in &self.targets {
            let p = state.predictive(t, &self.tensor)?;
            writeln!(output, "  {}: {}", self.question_ids[t], format_dist(&p))?;
        }
        writeln!(output, "top personas:")?;
        for (i, w) in state.posterior().top(self.top) {
            writeln!(output, "  {} {:.4}", self.persona_ids[i], w.to_f64_lossy())?;
        }
        Ok(())
    }

    fn transcript(
        &self,
        state: &SessionState<S>,
        quit_early: bool,
    ) -> Result<Transcript, HarnessError> {
        let mut final_predictions = BTreeMap::new();
        for &t in &self.targets {
            let p = state.predictive(t, &self.tensor)?;
            final_predictions.insert(
                self.question_ids[t].clone(),
                p.iter().map(|v| v.to_f64_lossy()).collect(),
            );
        }
        Ok(Transcript {
            targets: self
                .targets
                .iter()
                .map(|&t| self.question_ids[t].clone())
                .collect(),
            steps: state
                .queried()
                .iter()
                .zip(state.answers())
                .map(|(&q, &a)| TranscriptStep {
                    question_id: self.question_ids[q].clone(),
                    answer: a as usize + 1,
                })
                .collect(),
            quit_early,
            final_weights: state
                .posterior()
                .weights()
                .iter()
                .map(|w| w.to_f64_lossy())
                .collect(),
            final_predictions,
        })
    }

    /// Runs the session. End of input counts as `quit`.
    pub fn run<R: BufRead, W: Write>(
        &self,
        input: &mut R,
        output: &mut W,
    ) -> Result<Transcript, HarnessError> {
        let k = self.tensor.n_categories();
        let mut state = SessionState::new(&self.prior);
        let budget = self.budget.min(self.feasible.len());
        let mut quit_early = false;
        for step in 0..budget {
            let q = greedy_step(
                &state,
                &self.feasible,
                &self.targets,
                &self.tensor,
                self.kind,
            )?
            .question;
            writeln!(
                output,
                "\nquestion {}/{budget} [{}]",
                step + 1,
                self.question_ids[q]
            )?;
            writeln!(output, "{}", self.question_text(q))?;
            match read_reply(input, output, k)? {
                Reply::Quit => {
                    quit_early = true;
                    break;
                }
                Reply::Answer(a) => {
                    state = state.update(q, a - 1, &self.tensor)?;
                    self.print_state(&state, output)?;
                }
            }
        }
        writeln!(output, "\nfinal prediction after {} answers", state.len())?;
        self.print_state(&state, output)?;
        self.transcript(&state, quit_early)
    }

    /// Recomputes the session state recorded in a transcript.
    pub fn replay(&self, transcript: &Transcript) -> Result<SessionState<S>, HarnessError> {
        let mut state = SessionState::new(&self.prior);
        for step in &transcript.steps {
            let q = self
                .question_ids
                .iter()
                .position(|id| *id == step.question_id)
                .ok_or_else(|| {
                    HarnessError::Config(format!(
                        "unknown question {:?} in transcript",
                        step.question_id
                    ))
                })?;
            if step.answer == 0 {
                return Err(HarnessError::Config("transcript answers start at 1".into()));
            }
            state = state.update(q, step.answer - 1, &self.tensor)?;
        }
        Ok(state)
    }
}
