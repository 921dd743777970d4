//! Response datasets, user splits, survey import rules and synthetic data.

use std::collections::{BTreeSet, HashSet};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::persona::{LikelihoodTensor, ModelError, PersonaPrior, MAX_CATEGORIES};
use crate::rng::{purpose, stream_rng};
use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DatasetError {
    #[error("invalid dataset: {0}")]
    Invalid(String),
    #[error("answer {answer} for user {user} question {question} is out of range for {n_categories} categories")]
    AnswerOutOfRange {
        user: String,
        question: String,
        answer: usize,
        n_categories: usize,
    },
    #[error("duplicate id {0:?}")]
    DuplicateId(String),
    #[error("train fraction {0} must lie strictly between 0 and 1")]
    BadFraction(f64),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Users × questions answer matrix with missing entries.
///
/// Answers are 0-based category indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseDataset {
    user_ids: Vec<String>,
    question_ids: Vec<String>,
    n_categories: usize,
    responses: Vec<Option<u8>>,
}

fn check_unique(ids: &[String]) -> Result<(), DatasetError> {
    let mut seen = HashSet::with_capacity(ids.len());
    for id in ids {
        if !seen.insert(id.as_str()) {
            return Err(DatasetError::DuplicateId(id.clone()));
        }
    }
    Ok(())
}

impl ResponseDataset {
    pub fn new(
        user_ids: Vec<String>,
        question_ids: Vec<String>,
        n_categories: usize,
        responses: Vec<Option<u8>>,
    ) -> Result<Self, DatasetError> {
        if !(2..=MAX_CATEGORIES).contains(&n_categories) {
            return Err(DatasetError::Invalid(format!(
                "number of categories must be in 2..={MAX_CATEGORIES}, got {n_categories}"
            )));
        }
        if responses.len() != user_ids.len() * question_ids.len() {
            return Err(DatasetError::Invalid(format!(
                "expected {} x {} responses, got {}",
                user_ids.len(),
                question_ids.len(),
                responses.len()
            )));
        }
        check_unique(&user_ids)?;
        check_unique(&question_ids)?;
        let m = question_ids.len();
        for (idx, r) in responses.iter().enumerate() {
            if let Some(a) = *r {
                if a as usize >= n_categories {
                    return Err(DatasetError::AnswerOutOfRange {
                        user: user_ids[idx / m].clone(),
                        question: question_ids[idx % m].clone(),
                        answer: a as usize,
                        n_categories,
                    });
                }
            }
        }
        Ok(Self {
            user_ids,
            question_ids,
            n_categories,
            responses,
        })
    }

    pub fn n_users(&self) -> usize {
        self.user_ids.len()
    }

    pub fn n_questions(&self) -> usize {
        self.question_ids.len()
    }

    pub fn n_categories(&self) -> usize {
        self.n_categories
    }

    pub fn user_ids(&self) -> &[String] {
        &self.user_ids
    }

    pub fn question_ids(&self) -> &[String] {
        &self.question_ids
    }

    /// Row-major answer matrix.
    pub fn responses(&self) -> &[Option<u8>] {
        &self.responses
    }

    /// Answers of one user, indexed by question.
    pub fn user(&self, user: usize) -> &[Option<u8>] {
        let m = self.n_questions();
        &self.responses[user * m..(user + 1) * m]
    }

    pub fn get(&self, user: usize, question: usize) -> Option<u8> {
        self.responses[user * self.n_questions() + question]
    }

    pub fn missing_fraction(&self, user: usize) -> f64 {
        let row = self.user(user);
        if row.is_empty() {
            return 0.0;
        }
        row.iter().filter(|r| r.is_none()).count() as f64 / row.len() as f64
    }

    pub fn question_index(&self, id: &str) -> Option<usize> {
        self.question_ids.iter().position(|q| q == id)
    }

    /// Dataset restricted to the given users, in the given order.
    pub fn subset(&self, users: &[usize]) -> Self {
        let mut responses = Vec::with_capacity(users.len() * self.n_questions());
        for &u in users {
            responses.extend_from_slice(self.user(u));
        }
        Self {
            user_ids: users.iter().map(|&u| self.user_ids[u].clone()).collect(),
            question_ids: self.question_ids.clone(),
            n_categories: self.n_categories,
            responses,
        }
    }

    /// Checks that the dataset lines up with a tensor's question and
    /// category dimensions.
    pub fn check_against<S: Scalar>(
        &self,
        tensor: &LikelihoodTensor<S>,
    ) -> Result<(), DatasetError> {
        if tensor.n_questions() != self.n_questions() || tensor.n_categories() != self.n_categories
        {
            return Err(ModelError::DimensionMismatch(format!(
                "dataset has {} questions with {} categories, tensor has {} with {}",
                self.n_questions(),
                self.n_categories,
                tensor.n_questions(),
                tensor.n_categories()
            ))
            .into());
        }
        Ok(())
    }
}

/// Train/test split parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    #[serde(default = "SplitSpec::default_fraction")]
    pub train_fraction: f64,
    #[serde(default)]
    pub seed: u64,
}

impl SplitSpec {
    fn default_fraction() -> f64 {
        0.8
    }
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_fraction: Self::default_fraction(),
            seed: 0,
        }
    }
}

/// Seeded shuffle then prefix split. Returns (train, test) user indices,
/// each in shuffled order.
pub fn split_indices(
    n_users: usize,
    spec: &SplitSpec,
) -> Result<(Vec<usize>, Vec<usize>), DatasetError> {
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(DatasetError::BadFraction(spec.train_fraction));
    }
    let mut order: Vec<usize> = (0..n_users).collect();
    order.shuffle(&mut stream_rng(spec.seed, purpose::SPLIT, 0));
    let n_train = ((spec.train_fraction * n_users as f64).round() as usize).min(n_users);
    let test = order.split_off(n_train);
    Ok((order, test))
}

pub fn split_users(
    dataset: &ResponseDataset,
    spec: &SplitSpec,
) -> Result<(ResponseDataset, ResponseDataset), DatasetError> {
    let (train, test) = split_indices(dataset.n_users(), spec)?;
    Ok((dataset.subset(&train), dataset.subset(&test)))
}

/// Synthetic users along with the persona that generated each of them.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticUsers {
    pub dataset: ResponseDataset,
    pub true_personas: Vec<usize>,
}

pub(crate) fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs
        .iter()
        .rposition(|&p| p > 0.0)
        .unwrap_or(probs.len() - 1)
}

/// Draws users from the persona mixture: a persona from the prior, then one
/// answer per question. User `j` uses its own stream, so the result does not
/// depend on the thread count.
pub fn generate_synthetic_users<S: Scalar>(
    prior: &PersonaPrior<S>,
    tensor: &LikelihoodTensor<S>,
    n_users: usize,
    seed: u64,
) -> Result<SyntheticUsers, DatasetError> {
    if prior.len() != tensor.n_personas() {
        return Err(ModelError::DimensionMismatch(format!(
            "prior has {} personas, tensor has {}",
            prior.len(),
            tensor.n_personas()
        ))
        .into());
    }
    let m = tensor.n_questions();
    let prior_f64: Vec<f64> = prior.weights().iter().map(|w| w.to_f64_lossy()).collect();
    let rows: Vec<(usize, Vec<Option<u8>>)> = (0..n_users)
        .into_par_iter()
        .map(|j| {
            let mut rng = stream_rng(seed, purpose::SYNTHETIC_USERS, j as u64);
            let theta = sample_categorical(&prior_f64, &mut rng);
            let answers = (0..m)
                .map(|q| {
                    let row: Vec<f64> = tensor
                        .row(theta, q)
                        .iter()
                        .map(|p| p.to_f64_lossy())
                        .collect();
                    Some(sample_categorical(&row, &mut rng) as u8)
                })
                .collect();
            (theta, answers)
        })
        .collect();
    let mut true_personas = Vec::with_capacity(n_users);
    let mut responses = Vec::with_capacity(n_users * m);
    for (theta, answers) in rows {
        true_personas.push(theta);
        responses.extend(answers);
    }
    let dataset = ResponseDataset::new(
        (0..n_users).map(|j| format!("u{j}")).collect(),
        (0..m).map(|q| format!("q{q}")).collect(),
        tensor.n_categories(),
        responses,
    )?;
    Ok(SyntheticUsers {
        dataset,
        true_personas,
    })
}

/// Random dictionary whose rows are symmetric Dirichlet draws, paired with
/// a uniform prior.
pub fn generate_synthetic_dictionary<S: Scalar>(
    n_personas: usize,
    n_questions: usize,
    n_categories: usize,
    concentration: f64,
    seed: u64,
) -> Result<(LikelihoodTensor<S>, PersonaPrior<S>), DatasetError> {
    if !(concentration > 0.0 && concentration.is_finite()) {
        return Err(DatasetError::Invalid(format!(
            "concentration must be positive and finite, got {concentration}"
        )));
    }
    let gamma = Gamma::new(concentration, 1.0)
        .map_err(|e| DatasetError::Invalid(format!("gamma distribution: {e}")))?;
    let mut rng = stream_rng(seed, purpose::SYNTHETIC_DICTIONARY, 0);
    let mut probs = Vec::with_capacity(n_personas * n_questions * n_categories);
    let mut row = vec![0.0f64; n_categories];
    for _ in 0..n_personas * n_questions {
        loop {
            for r in row.iter_mut() {
                *r = gamma.sample(&mut rng);
            }
            let sum: f64 = row.iter().sum();
            if sum > 0.0 && sum.is_finite() {
                probs.extend(row.iter().map(|r| S::lit(r / sum)));
                break;
            }
        }
    }
    let tensor = LikelihoodTensor::new(n_personas, n_questions, n_categories, probs)?;
    Ok((tensor, PersonaPrior::uniform(n_personas)))
}

/// Rules applied when importing a raw wide survey table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportRules {
    /// Questions are kept only when their observed values are exactly
    /// `1..=n_categories`.
    pub n_categories: usize,
    /// Users whose missing fraction over kept questions is strictly above
    /// this value are dropped.
    pub max_missing_fraction: f64,
}

impl Default for ImportRules {
    fn default() -> Self {
        Self {
            n_categories: 4,
            max_missing_fraction: 0.2,
        }
    }
}

/// What the import kept and dropped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportReport {
    pub kept_questions: usize,
    pub dropped_questions: Vec<String>,
    pub kept_users: usize,
    pub dropped_users: Vec<String>,
}

/// Applies the import rules to raw 1-based survey values and recodes kept
/// answers to 0-based categories.
pub fn import_survey(
    user_ids: Vec<String>,
    question_ids: Vec<String>,
    raw: &[Vec<Option<i64>>],
    rules: &ImportRules,
) -> Result<(ResponseDataset, ImportReport), DatasetError> {
    let k = rules.n_categories;
    if raw.len() != user_ids.len() {
        return Err(DatasetError::Invalid(format!(
            "{} user ids for {} rows",
            user_ids.len(),
            raw.len()
        )));
    }
    if let Some((i, _)) = raw
        .iter()
        .enumerate()
        .find(|(_, r)| r.len() != question_ids.len())
    {
        return Err(DatasetError::Invalid(format!(
            "row for user {} has {} values, expected {}",
            user_ids[i],
            raw[i].len(),
            question_ids.len()
        )));
    }
    let wanted: BTreeSet<i64> = (1..=k as i64).collect();
    let mut kept = Vec::new();
    let mut dropped_questions = Vec::new();
    for (q, id) in question_ids.iter().enumerate() {
        let seen: BTreeSet<i64> = raw.iter().filter_map(|r| r[q]).collect();
        if seen == wanted {
            kept.push(q);
        } else {
            dropped_questions.push(id.clone());
        }
    }
    let mut kept_user_ids = Vec::new();
    let mut dropped_users = Vec::new();
    let mut responses = Vec::new();
    for (row, id) in raw.iter().zip(&user_ids) {
        let values: Vec<Option<u8>> = kept
            .iter()
            .map(|&q| row[q].map(|v| (v - 1) as u8))
            .collect();
        let missing = values.iter().filter(|v| v.is_none()).count();
        let frac = if values.is_empty() {
            1.0
        } else {
            missing as f64 / values.len() as f64
        };
        if frac > rules.max_missing_fraction {
            dropped_users.push(id.clone());
        } else {
            kept_user_ids.push(id.clone());
            responses.extend(values);
        }
    }
    let report = ImportReport {
        kept_questions: kept.len(),
        dropped_questions,
        kept_users: kept_user_ids.len(),
        dropped_users,
    };
    let dataset = ResponseDataset::new(
        kept_user_ids,
        kept.iter().map(|&q| question_ids[q].clone()).collect(),
        k,
        responses,
    )?;
    Ok((dataset, report))
}
