//! Cache-backed elicitation of whole persona × question tables.

use std::collections::HashSet;
use std::io::BufRead;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use persona_core::io::{write_json, TensorBundle};
use persona_core::transforms::ModeTable;
use persona_core::{LikelihoodTensor, Scalar};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::cache::{Cache, CacheKey, ElicitationRecord, Parsed};
use crate::client::ChatTransport;
use crate::parse::{parse_distribution, parse_mode};
use crate::prompts::{build, PersonaProfile, PromptKind, QuestionSpec};
use crate::ElicitError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ElicitConfig {
    /// Maximum number of requests in flight.
    pub concurrency: usize,
    /// Extra attempts after the first failure of a pair.
    pub retries: usize,
    /// Delay before the first retry; doubles on each further retry.
    pub backoff_ms: u64,
    /// Probability floor applied when the tensor is assembled.
    pub floor: f64,
}

impl Default for ElicitConfig {
    fn default() -> Self {
        Self {
            concurrency: 4,
            retries: 3,
            backoff_ms: 500,
            floor: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairId {
    pub persona_id: String,
    pub question_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailedPair {
    #[serde(flatten)]
    pub pair: PairId,
    pub attempts: usize,
    pub last_error: String,
}

/// Progress record written next to the cache after every run. Rerunning the
/// same command resumes from the cache and only requests missing pairs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub kind: PromptKind,
    pub model: String,
    pub n_personas: usize,
    pub n_questions: usize,
    pub completed: Vec<PairId>,
    pub failed: Vec<FailedPair>,
}

pub fn manifest_path(cache_dir: &Path, kind: PromptKind) -> PathBuf {
    match kind {
        PromptKind::Distribution => cache_dir.join("manifest.json"),
        PromptKind::Mode => cache_dir.join("manifest-modes.json"),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ElicitStats {
    pub network_calls: usize,
    pub cache_hits: usize,
    pub pairs: usize,
}

#[derive(Debug, Clone)]
pub struct ElicitedTensor<S> {
    pub bundle: TensorBundle<S>,
    pub stats: ElicitStats,
}

#[derive(Debug, Clone)]
pub struct ElicitedModes {
    pub persona_ids: Vec<String>,
    pub question_ids: Vec<String>,
    pub modes: ModeTable,
    pub stats: ElicitStats,
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, ElicitError> {
    let file = std::fs::File::open(path).map_err(|e| ElicitError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| ElicitError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|e| {
                ElicitError::Input(format!("{} line {}: {e}", path.display(), i + 1))
            })?,
        );
    }
    Ok(out)
}

/// Reads `{"persona_id": ..., "profile_text": ...}` lines.
pub fn read_personas(path: &Path) -> Result<Vec<PersonaProfile>, ElicitError> {
    read_jsonl(path)
}

/// Reads `{"question_id": ..., "question_text": ..., "n_categories": ...}` lines.
pub fn read_questions(path: &Path) -> Result<Vec<QuestionSpec>, ElicitError> {
    read_jsonl(path)
}

fn check_inputs(
    personas: &[PersonaProfile],
    questions: &[QuestionSpec],
) -> Result<usize, ElicitError> {
    if personas.is_empty() || questions.is_empty() {
        return Err(ElicitError::Input(
            "need at least one persona and one question".into(),
        ));
    }
    let mut seen = HashSet::new();
    if let Some(p) = personas
        .iter()
        .find(|p| !seen.insert(p.persona_id.as_str()))
    {
        return Err(ElicitError::Input(format!(
            "duplicate persona id {}",
            p.persona_id
        )));
    }
    let mut seen = HashSet::new();
    if let Some(q) = questions
        .iter()
        .find(|q| !seen.insert(q.question_id.as_str()))
    {
        return Err(ElicitError::Input(format!(
            "duplicate question id {}",
            q.question_id
        )));
    }
    let k = questions[0].n_categories;
    if k < 2 {
        return Err(ElicitError::Input(format!(
            "question {} has fewer than two categories",
            questions[0].question_id
        )));
    }
    if let Some(q) = questions.iter().find(|q| q.n_categories != k) {
        return Err(ElicitError::Input(format!(
            "question {} has {} categories but {} has {k}; all questions must share one scale",
            q.question_id, q.n_categories, questions[0].question_id
        )));
    }
    if let Some(q) = questions
        .iter()
        .find(|q| !q.labels.is_empty() && q.labels.len() != k)
    {
        return Err(ElicitError::Input(format!(
            "question {} lists {} labels for {k} categories",
            q.question_id,
            q.labels.len()
        )));
    }
    Ok(k)
}

fn now_secs() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

fn parse_reply(kind: PromptKind, raw: &str, k: usize) -> Result<Parsed, String> {
    match kind {
        PromptKind::Distribution => parse_distribution(raw, k).map(Parsed::Distribution),
        PromptKind::Mode => parse_mode(raw, k).map(Parsed::Mode),
    }
    .map_err(|e| e.to_string())
}

struct Job<'a> {
    index: usize,
    persona: &'a PersonaProfile,
    question: &'a QuestionSpec,
    key: CacheKey,
    prompt: crate::prompts::Prompt,
}

/// Requests one pair, retrying with exponential backoff. Every reply that
/// arrives is appended to the cache, parsed or not.
fn run_job(
    job: &Job<'_>,
    kind: PromptKind,
    transport: &dyn ChatTransport,
    cache: &Cache,
    config: &ElicitConfig,
    calls: &AtomicUsize,
) -> Result<Result<ElicitationRecord, FailedPair>, ElicitError> {
    let k = job.question.n_categories;
    let mut last_error = String::new();
    for attempt in 1..=config.retries + 1 {
        if attempt > 1 {
            let factor = 1u64 << (attempt - 2).min(20);
            std::thread::sleep(Duration::from_millis(
                config.backoff_ms.saturating_mul(factor),
            ));
        }
        calls.fetch_add(1, Ordering::Relaxed);
        match transport.complete(&job.prompt) {
            Ok(raw) => {
                let parsed = parse_reply(kind, &raw, k);
                let record = ElicitationRecord {
                    key: job.key.clone(),
                    kind,
                    raw,
                    parsed: parsed.as_ref().ok().cloned(),
                    error: parsed.as_ref().err().cloned(),
                    timestamp: now_secs(),
                    attempt,
                };
                cache.append(&record)?;
                match parsed {
                    Ok(_) => return Ok(Ok(record)),
                    Err(e) => last_error = format!("unparseable reply: {e}"),
                }
            }
            Err(e) => last_error = e.to_string(),
        }
        log::warn!(
            "{} / {}: attempt {attempt} failed: {last_error}",
            job.persona.persona_id,
            job.question.question_id
        );
    }
    Ok(Err(FailedPair {
        pair: PairId {
            persona_id: job.persona.persona_id.clone(),
            question_id: job.question.question_id.clone(),
        },
        attempts: config.retries + 1,
        last_error,
    }))
}

/// Fills every (persona, question) pair from the cache or the endpoint and
/// returns the parsed replies in persona-major order.
fn elicit_pairs(
    kind: PromptKind,
    personas: &[PersonaProfile],
    questions: &[QuestionSpec],
    transport: &dyn ChatTransport,
    model_key: &str,
    cache: &mut Cache,
    config: &ElicitConfig,
) -> Result<(Vec<Parsed>, ElicitStats), ElicitError> {
    check_inputs(personas, questions)?;
    if config.concurrency == 0 {
        return Err(ElicitError::Input("concurrency must be at least 1".into()));
    }
    let mut results: Vec<Option<Parsed>> = vec![None; personas.len() * questions.len()];
    let mut jobs = Vec::new();
    for (i, persona) in personas.iter().enumerate() {
        for (j, question) in questions.iter().enumerate() {
            let prompt = build(kind, persona, question);
            let key = CacheKey {
                persona_id: persona.persona_id.clone(),
                question_id: question.question_id.clone(),
                model: model_key.to_string(),
                prompt_hash: prompt.hash(),
            };
            let index = i * questions.len() + j;
            match cache.get(&key) {
                Some(record) => results[index] = record.parsed.clone(),
                None => jobs.push(Job {
                    index,
                    persona,
                    question,
                    key,
                    prompt,
                }),
            }
        }
    }
    let stats_hits = results.iter().filter(|r| r.is_some()).count();
    log::info!("{stats_hits} pairs cached, {} to request", jobs.len());

    let calls = AtomicUsize::new(0);
    let next = AtomicUsize::new(0);
    let shared: &Cache = cache;
    let outcomes: Vec<(usize, Result<ElicitationRecord, FailedPair>)> =
        std::thread::scope(|scope| {
            let workers: Vec<_> = (0..config.concurrency.min(jobs.len()))
                .map(|_| {
                    scope.spawn(|| -> Result<Vec<_>, ElicitError> {
                        let mut done = Vec::new();
                        loop {
                            let i = next.fetch_add(1, Ordering::Relaxed);
                            let Some(job) = jobs.get(i) else { break };
                            done.push((
                                job.index,
                                run_job(job, kind, transport, shared, config, &calls)?,
                            ));
                        }
                        Ok(done)
                    })
                })
                .collect();
            let mut all = Vec::new();
            for w in workers {
                all.extend(w.join().expect("elicitation worker panicked")?);
            }
            Ok::<_, ElicitError>(all)
        })?;

    let mut failed = Vec::new();
    for (index, outcome) in outcomes {
        match outcome {
            Ok(record) => {
                results[index] = record.parsed.clone();
                cache.remember(record);
            }
            Err(f) => failed.push((index, f)),
        }
    }
    failed.sort_by_key(|(i, _)| *i);

    let completed: Vec<PairId> = results
        .iter()
        .enumerate()
        .filter(|(_, r)| r.is_some())
        .map(|(index, _)| PairId {
            persona_id: personas[index / questions.len()].persona_id.clone(),
            question_id: questions[index % questions.len()].question_id.clone(),
        })
        .collect();
    let manifest = Manifest {
        kind,
        model: model_key.to_string(),
        n_personas: personas.len(),
        n_questions: questions.len(),
        completed,
        failed: failed.into_iter().map(|(_, f)| f).collect(),
    };
    let path = manifest_path(cache.dir(), kind);
    write_json(&path, &manifest)?;

    if !manifest.failed.is_empty() {
        return Err(ElicitError::Exhausted {
            failed: manifest.failed.len(),
            total: results.len(),
            manifest: path,
        });
    }
    let stats = ElicitStats {
        network_calls: calls.into_inner(),
        cache_hits: stats_hits,
        pairs: results.len(),
    };
    Ok((
        results
            .into_iter()
            .map(|r| r.expect("all pairs completed"))
            .collect(),
        stats,
    ))
}

/// Elicits a response distribution for every (persona, question) pair and
/// assembles the floored likelihood tensor. Axis ids follow input order.
pub fn elicit_tensor<S: Scalar>(
    personas: &[PersonaProfile],
    questions: &[QuestionSpec],
    transport: &dyn ChatTransport,
    model_key: &str,
    cache: &mut Cache,
    config: &ElicitConfig,
) -> Result<ElicitedTensor<S>, ElicitError> {
    let (parsed, stats) = elicit_pairs(
        PromptKind::Distribution,
        personas,
        questions,
        transport,
        model_key,
        cache,
        config,
    )?;
    let k = questions[0].n_categories;
    let mut probs = Vec::with_capacity(parsed.len() * k);
    for p in parsed {
        match p {
            Parsed::Distribution(row) => probs.extend(row.into_iter().map(S::lit)),
            Parsed::Mode(_) => {
                return Err(ElicitError::Input(
                    "cache holds a mode where a distribution was expected".into(),
                ))
            }
        }
    }
    let tensor = LikelihoodTensor::with_floor(
        personas.len(),
        questions.len(),
        k,
        probs,
        S::lit(config.floor),
    )?;
    Ok(ElicitedTensor {
        bundle: TensorBundle {
            persona_ids: personas.iter().map(|p| p.persona_id.clone()).collect(),
            question_ids: questions.iter().map(|q| q.question_id.clone()).collect(),
            tensor,
        },
        stats,
    })
}

/// Elicits the single most likely answer for every pair.
pub fn elicit_modes(
    personas: &[PersonaProfile],
    questions: &[QuestionSpec],
    transport: &dyn ChatTransport,
    model_key: &str,
    cache: &mut Cache,
    config: &ElicitConfig,
) -> Result<ElicitedModes, ElicitError> {
    let (parsed, stats) = elicit_pairs(
        PromptKind::Mode,
        personas,
        questions,
        transport,
        model_key,
        cache,
        config,
    )?;
    let k = questions[0].n_categories;
    if k > u8::MAX as usize + 1 {
        return Err(ElicitError::Input(format!(
            "{k} categories do not fit a mode table"
        )));
    }
    let modes = parsed
        .into_iter()
        .map(|p| match p {
            Parsed::Mode(m) => Ok(m as u8),
            Parsed::Distribution(_) => Err(ElicitError::Input(
                "cache holds a distribution where a mode was expected".into(),
            )),
        })
        .collect::<Result<Vec<u8>, _>>()?;
    Ok(ElicitedModes {
        persona_ids: personas.iter().map(|p| p.persona_id.clone()).collect(),
        question_ids: questions.iter().map(|q| q.question_id.clone()).collect(),
        modes: ModeTable::new(personas.len(), questions.len(), k, modes)?,
        stats,
    })
}
