//! On-disk formats.
//!
//! * Likelihood tensors: JSON lines. The first line is a header with the
//!   dimensions, the persona and question ids and the SHA-256 of the packed
//!   probabilities; every other line is one `{persona_id, question_id, probs}`
//!   record. A binary sidecar (`<file>.bin`) holds the same probabilities as
//!   little-endian `f64` after a small header carrying the same hash.
//! * Response datasets: wide CSV (`user_id` then one column per question,
//!   0-based categories, empty cell = missing) with a JSON sidecar
//!   (`<file>.json`) listing question ids, the category count and the
//!   SHA-256 of the CSV bytes.
//! * Priors, item banks and mode tables: pretty-printed JSON.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::cat::{GridConfig, IrtFitTrace, IrtItemBank};
use crate::dataset::{DatasetError, ResponseDataset};
use crate::persona::{LikelihoodTensor, ModelError, PersonaPrior};
use crate::prior_fit::{EmConfig, EmTrace};
use crate::scalar::Scalar;
use crate::transforms::ModeTable;

const TENSOR_FORMAT: &str = "persona-tensor";
const BIN_MAGIC: &[u8; 8] = b"PTENSOR1";

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: line {line}: {source}")]
    Json {
        path: PathBuf,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("{path}: missing pair (persona {persona_id:?}, question {question_id:?})")]
    MissingPair {
        path: PathBuf,
        persona_id: String,
        question_id: String,
    },
    #[error("{path}: row (persona {persona_id:?}, question {question_id:?}) sums to {sum}, not 1")]
    RowSum {
        path: PathBuf,
        persona_id: String,
        question_id: String,
        sum: f64,
    },
    #[error("{path}: hash mismatch: header says {expected}, content hashes to {actual}")]
    HashMismatch {
        path: PathBuf,
        expected: String,
        actual: String,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn format_err(path: &Path, message: impl Into<String>) -> IoError {
    IoError::Format {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

/// `<path><suffix>`, e.g. `tensor.jsonl` → `tensor.jsonl.bin`.
pub fn sidecar_path(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value).map_err(|source| IoError::Json {
        path: path.to_path_buf(),
        line: 0,
        source,
    })?;
    w.write_all(b"\n").map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|source| IoError::Json {
        path: path.to_path_buf(),
        line: source.line(),
        source,
    })
}

/// SHA-256 (hex) of the probabilities packed as little-endian `f64`.
pub fn tensor_hash<S: Scalar>(tensor: &LikelihoodTensor<S>) -> String {
    hash_f64s(tensor.probs().iter().map(|p| p.to_f64_lossy()))
}

fn hash_f64s(values: impl Iterator<Item = f64>) -> String {
    let mut h = Sha256::new();
    for v in values {
        h.update(v.to_le_bytes());
    }
    hex::encode(h.finalize())
}

/// A tensor together with the ids of its axes.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorBundle<S> {
    pub persona_ids: Vec<String>,
    pub question_ids: Vec<String>,
    pub tensor: LikelihoodTensor<S>,
}

impl<S: Scalar> TensorBundle<S> {
    /// Bundle with generated ids `p0, p1, …` and `q0, q1, …`.
    pub fn with_default_ids(tensor: LikelihoodTensor<S>) -> Self {
        Self {
            persona_ids: (0..tensor.n_personas()).map(|i| format!("p{i}")).collect(),
            question_ids: (0..tensor.n_questions()).map(|i| format!("q{i}")).collect(),
            tensor,
        }
    }

    pub fn hash(&self) -> String {
        tensor_hash(&self.tensor)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorHeader {
    format: String,
    n_personas: usize,
    n_questions: usize,
    n_categories: usize,
    sha256: String,
    persona_ids: Vec<String>,
    question_ids: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorRecord {
    persona_id: String,
    question_id: String,
    probs: Vec<f64>,
}

/// Writes the JSON-lines tensor file and its binary sidecar.
pub fn save_tensor<S: Scalar>(bundle: &TensorBundle<S>, path: &Path) -> Result<(), IoError> {
    let t = &bundle.tensor;
    if bundle.persona_ids.len() != t.n_personas() || bundle.question_ids.len() != t.n_questions() {
        return Err(format_err(path, "id lists do not match tensor dimensions"));
    }
    let hash = bundle.hash();
    let header = TensorHeader {
        format: TENSOR_FORMAT.into(),
        n_personas: t.n_personas(),
        n_questions: t.n_questions(),
        n_categories: t.n_categories(),
        sha256: hash.clone(),
        persona_ids: bundle.persona_ids.clone(),
        question_ids: bundle.question_ids.clone(),
    };
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    let json_err = |source| IoError::Json {
        path: path.to_path_buf(),
        line: 0,
        source,
    };
    serde_json::to_writer(&mut w, &header).map_err(json_err)?;
    w.write_all(b"\n").map_err(io_err(path))?;
    for (p, pid) in bundle.persona_ids.iter().enumerate() {
        for (q, qid) in bundle.question_ids.iter().enumerate() {
            let record = TensorRecord {
                persona_id: pid.clone(),
                question_id: qid.clone(),
                probs: t.row(p, q).iter().map(|v| v.to_f64_lossy()).collect(),
            };
            serde_json::to_writer(&mut w, &record).map_err(json_err)?;
            w.write_all(b"\n").map_err(io_err(path))?;
        }
    }
    w.flush().map_err(io_err(path))?;

    let bin = sidecar_path(path, ".bin");
    let file = File::create(&bin).map_err(io_err(&bin))?;
    let mut w = BufWriter::new(file);
    let mut head = Vec::with_capacity(8 + 24 + 32);
    head.extend_from_slice(BIN_MAGIC);
    for d in [t.n_personas(), t.n_questions(), t.n_categories()] {
        head.extend_from_slice(&(d as u64).to_le_bytes());
    }
    head.extend_from_slice(&hex::decode(&hash).expect("hex digest"));
    w.write_all(&head).map_err(io_err(&bin))?;
    for p in t.probs() {
        w.write_all(&p.to_f64_lossy().to_le_bytes())
            .map_err(io_err(&bin))?;
    }
    w.flush().map_err(io_err(&bin))
}

fn read_header(path: &Path, line: &str) -> Result<TensorHeader, IoError> {
    let header: TensorHeader = serde_json::from_str(line).map_err(|source| IoError::Json {
        path: path.to_path_buf(),
        line: 1,
        source,
    })?;
    if header.format != TENSOR_FORMAT {
        return Err(format_err(
            path,
            format!("unknown format {:?}", header.format),
        ));
    }
    if header.persona_ids.len() != header.n_personas
        || header.question_ids.len() != header.n_questions
    {
        return Err(format_err(
            path,
            "header id lists do not match its dimensions",
        ));
    }
    Ok(header)
}

fn index_of(ids: &[String], path: &Path, what: &str) -> Result<HashMap<String, usize>, IoError> {
    let mut map = HashMap::with_capacity(ids.len());
    for (i, id) in ids.iter().enumerate() {
        if map.insert(id.clone(), i).is_some() {
            return Err(format_err(path, format!("duplicate {what} id {id:?}")));
        }
    }
    Ok(map)
}

fn finish_tensor<S: Scalar>(
    path: &Path,
    header: TensorHeader,
    probs: Vec<f64>,
) -> Result<TensorBundle<S>, IoError> {
    let actual = hash_f64s(probs.iter().copied());
    if actual != header.sha256 {
        return Err(IoError::HashMismatch {
            path: path.to_path_buf(),
            expected: header.sha256,
            actual,
        });
    }
    Ok(TensorBundle {
        persona_ids: header.persona_ids,
        question_ids: header.question_ids,
        tensor: LikelihoodTensor::new(
            header.n_personas,
            header.n_questions,
            header.n_categories,
            probs.into_iter().map(S::lit).collect(),
        )?,
    })
}

/// Reads and validates a JSON-lines tensor file: every pair present exactly
/// once, every row a distribution, hash matching the header.
pub fn load_tensor<S: Scalar>(path: &Path) -> Result<TensorBundle<S>, IoError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut lines = BufReader::new(file).lines();
    let first = lines
        .next()
        .ok_or_else(|| format_err(path, "empty file"))?
        .map_err(io_err(path))?;
    let header = read_header(path, &first)?;
    let (n, m, k) = (header.n_personas, header.n_questions, header.n_categories);
    let personas = index_of(&header.persona_ids, path, "persona")?;
    let questions = index_of(&header.question_ids, path, "question")?;
    let mut probs = vec![f64::NAN; n * m * k];
    let mut seen = vec![false; n * m];
    let tol = S::sum_tolerance().to_f64_lossy();
    for (i, line) in lines.enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TensorRecord = serde_json::from_str(&line).map_err(|source| IoError::Json {
            path: path.to_path_buf(),
            line: i + 2,
            source,
        })?;
        let p = *personas.get(&rec.persona_id).ok_or_else(|| {
            format_err(
                path,
                format!("line {}: unknown persona {:?}", i + 2, rec.persona_id),
            )
        })?;
        let q = *questions.get(&rec.question_id).ok_or_else(|| {
            format_err(
                path,
                format!("line {}: unknown question {:?}", i + 2, rec.question_id),
            )
        })?;
        if rec.probs.len() != k {
            return Err(format_err(
                path,
                format!(
                    "line {}: expected {k} probabilities, got {}",
                    i + 2,
                    rec.probs.len()
                ),
            ));
        }
        if std::mem::replace(&mut seen[p * m + q], true) {
            return Err(format_err(
                path,
                format!(
                    "line {}: duplicate pair ({:?}, {:?})",
                    i + 2,
                    rec.persona_id,
                    rec.question_id
                ),
            ));
        }
        let sum: f64 = rec.probs.iter().sum();
        if rec.probs.iter().any(|&v| !(0.0..=1.0).contains(&v)) || (sum - 1.0).abs() > tol {
            return Err(IoError::RowSum {
                path: path.to_path_buf(),
                persona_id: rec.persona_id,
                question_id: rec.question_id,
                sum,
            });
        }
        probs[(p * m + q) * k..(p * m + q + 1) * k].copy_from_slice(&rec.probs);
    }
    if let Some(idx) = seen.iter().position(|&s| !s) {
        return Err(IoError::MissingPair {
            path: path.to_path_buf(),
            persona_id: header.persona_ids[idx / m].clone(),
            question_id: header.question_ids[idx % m].clone(),
        });
    }
    finish_tensor(path, header, probs)
}

/// Loads through the binary sidecar when present and consistent with the
/// JSON-lines header; otherwise falls back to [`load_tensor`].
pub fn load_tensor_fast<S: Scalar>(path: &Path) -> Result<TensorBundle<S>, IoError> {
    let bin = sidecar_path(path, ".bin");
    if !bin.exists() {
        return load_tensor(path);
    }
    let file = File::open(path).map_err(io_err(path))?;
    let first = BufReader::new(file)
        .lines()
        .next()
        .ok_or_else(|| format_err(path, "empty file"))?
        .map_err(io_err(path))?;
    let header = read_header(path, &first)?;
    let mut bytes = Vec::new();
    File::open(&bin)
        .map_err(io_err(&bin))?
        .read_to_end(&mut bytes)
        .map_err(io_err(&bin))?;
    let head_len = 8 + 24 + 32;
    let (n, m, k) = (header.n_personas, header.n_questions, header.n_categories);
    if bytes.len() != head_len + n * m * k * 8 || &bytes[..8] != BIN_MAGIC {
        return Err(format_err(&bin, "malformed binary sidecar"));
    }
    let dim = |i: usize| {
        u64::from_le_bytes(bytes[8 + 8 * i..16 + 8 * i].try_into().expect("8 bytes")) as usize
    };
    if (dim(0), dim(1), dim(2)) != (n, m, k) {
        return Err(format_err(
            &bin,
            "sidecar dimensions differ from the header",
        ));
    }
    let stored = hex::encode(&bytes[32..64]);
    if stored != header.sha256 {
        return Err(IoError::HashMismatch {
            path: bin,
            expected: header.sha256,
            actual: stored,
        });
    }
    let probs = bytes[head_len..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    finish_tensor(&bin, header, probs)
}

#[derive(Debug, Serialize, Deserialize)]
struct ResponseHeader {
    question_ids: Vec<String>,
    n_categories: usize,
    n_users: usize,
    sha256: String,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes the response CSV and its JSON sidecar.
pub fn save_responses(dataset: &ResponseDataset, path: &Path) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |source| IoError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut header = vec!["user_id".to_string()];
    header.extend(dataset.question_ids().iter().cloned());
    w.write_record(&header).map_err(csv_err)?;
    for u in 0..dataset.n_users() {
        let mut row = vec![dataset.user_ids()[u].clone()];
        row.extend(
            dataset
                .user(u)
                .iter()
                .map(|r| r.map(|v| v.to_string()).unwrap_or_default()),
        );
        w.write_record(&row).map_err(csv_err)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| format_err(path, e.to_string()))?;
    std::fs::write(path, &bytes).map_err(io_err(path))?;
    write_json(
        &sidecar_path(path, ".json"),
        &ResponseHeader {
            question_ids: dataset.question_ids().to_vec(),
            n_categories: dataset.n_categories(),
            n_users: dataset.n_users(),
            sha256: sha256_hex(&bytes),
        },
    )
}

/// Reads a response CSV written by [`save_responses`].
pub fn load_responses(path: &Path) -> Result<ResponseDataset, IoError> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    let meta_path = sidecar_path(path, ".json");
    let meta: ResponseHeader = read_json(&meta_path)?;
    let actual = sha256_hex(&bytes);
    if actual != meta.sha256 {
        return Err(IoError::HashMismatch {
            path: path.to_path_buf(),
            expected: meta.sha256,
            actual,
        });
    }
    let csv_err = |source| IoError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut r = csv::Reader::from_reader(bytes.as_slice());
    let headers = r.headers().map_err(csv_err)?.clone();
    if headers
        .iter()
        .skip(1)
        .ne(meta.question_ids.iter().map(String::as_str))
    {
        return Err(format_err(
            path,
            "CSV columns differ from the sidecar question ids",
        ));
    }
    let mut user_ids = Vec::new();
    let mut responses = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        user_ids.push(rec.get(0).unwrap_or_default().to_string());
        for cell in rec.iter().skip(1) {
            if cell.is_empty() {
                responses.push(None);
            } else {
                let v: u8 = cell
                    .parse()
                    .map_err(|_| format_err(path, format!("row {}: bad answer {cell:?}", i + 2)))?;
                responses.push(Some(v));
            }
        }
    }
    if user_ids.len() != meta.n_users {
        return Err(format_err(
            path,
            format!(
                "sidecar lists {} users, CSV has {}",
                meta.n_users,
                user_ids.len()
            ),
        ));
    }
    Ok(ResponseDataset::new(
        user_ids,
        meta.question_ids,
        meta.n_categories,
        responses,
    )?)
}

/// Raw wide survey table: ids, question columns and 1-based integer codes.
/// Empty cells and non-positive codes are read as missing.
pub struct RawSurvey {
    pub user_ids: Vec<String>,
    pub question_ids: Vec<String>,
    pub values: Vec<Vec<Option<i64>>>,
}

pub fn read_survey_csv(path: &Path, id_column: &str) -> Result<RawSurvey, IoError> {
    let csv_err = |source| IoError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let headers = r.headers().map_err(csv_err)?.clone();
    let id_idx = headers
        .iter()
        .position(|h| h == id_column)
        .ok_or_else(|| format_err(path, format!("no column named {id_column:?}")))?;
    let question_ids: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != id_idx)
        .map(|(_, h)| h.to_string())
        .collect();
    let mut user_ids = Vec::new();
    let mut values = Vec::new();
    for (row, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        user_ids.push(rec.get(id_idx).unwrap_or_default().to_string());
        let mut vals = Vec::with_capacity(question_ids.len());
        for (i, cell) in rec.iter().enumerate() {
            if i == id_idx {
                continue;
            }
            let cell = cell.trim();
            if cell.is_empty() {
                vals.push(None);
                continue;
            }
            let v: f64 = cell.parse().map_err(|_| {
                format_err(path, format!("row {}: non-numeric value {cell:?}", row + 2))
            })?;
            if v.fract() != 0.0 {
                return Err(format_err(
                    path,
                    format!("row {}: non-integer value {cell:?}", row + 2),
                ));
            }
            vals.push((v >= 1.0).then_some(v as i64));
        }
        values.push(vals);
    }
    Ok(RawSurvey {
        user_ids,
        question_ids,
        values,
    })
}

/// Fitted prior with provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorFile {
    pub weights: Vec<f64>,
    pub persona_ids: Vec<String>,
    pub tensor_sha256: String,
    pub em_config: Option<EmConfig>,
    pub trace: Option<EmTrace>,
}

impl PriorFile {
    pub fn prior<S: Scalar>(&self) -> Result<PersonaPrior<S>, ModelError> {
        PersonaPrior::new(self.weights.iter().map(|&w| S::lit(w)).collect())
    }
}

/// Calibrated item bank with the grid used to fit it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BankFile {
    pub bank: IrtItemBank<f64>,
    pub question_ids: Vec<String>,
    pub grid: GridConfig,
    pub trace: Option<IrtFitTrace>,
}

/// Mode table with axis ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModesFile {
    pub persona_ids: Vec<String>,
    pub question_ids: Vec<String>,
    pub table: ModeTable,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::generate_synthetic_dictionary;

    fn bundle() -> TensorBundle<f64> {
        let (t, _) = generate_synthetic_dictionary::<f64>(3, 4, 4, 0.5, 5).unwrap();
        TensorBundle::with_default_ids(t)
    }

    #[test]
    fn tensor_round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        let b = bundle();
        save_tensor(&b, &path).unwrap();
        let back: TensorBundle<f64> = load_tensor(&path).unwrap();
        assert_eq!(back, b);
        let fast: TensorBundle<f64> = load_tensor_fast(&path).unwrap();
        assert_eq!(fast, b);
        assert!(b
            .tensor
            .probs()
            .iter()
            .zip(back.tensor.probs())
            .all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn missing_line_names_the_pair() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        save_tensor(&bundle(), &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let kept: Vec<&str> = text
            .lines()
            .enumerate()
            .filter(|&(i, _)| i != 3)
            .map(|(_, l)| l)
            .collect();
        std::fs::write(&path, kept.join("\n")).unwrap();
        let err = load_tensor::<f64>(&path).unwrap_err();
        assert!(
            matches!(&err, IoError::MissingPair { persona_id, question_id, .. } if persona_id == "p0" && question_id == "q2")
        );
        assert!(err.to_string().contains("missing pair"));
    }

    #[test]
    fn bad_row_sum_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        save_tensor(&bundle(), &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        lines[1] = r#"{"persona_id":"p0","question_id":"q0","probs":[0.5,0.5,0.5,0.5]}"#.into();
        std::fs::write(&path, lines.join("\n")).unwrap();
        assert!(matches!(
            load_tensor::<f64>(&path),
            Err(IoError::RowSum { .. })
        ));
    }

    #[test]
    fn tampered_values_fail_the_hash() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        save_tensor(&bundle(), &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        lines[1] = r#"{"persona_id":"p0","question_id":"q0","probs":[0.25,0.25,0.25,0.25]}"#.into();
        std::fs::write(&path, lines.join("\n")).unwrap();
        assert!(matches!(
            load_tensor::<f64>(&path),
            Err(IoError::HashMismatch { .. })
        ));
    }

    #[test]
    fn f32_tensors_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        let t = LikelihoodTensor::<f32>::new(1, 1, 3, vec![0.1, 0.2, 0.7]).unwrap();
        let b = TensorBundle::with_default_ids(t);
        save_tensor(&b, &path).unwrap();
        assert_eq!(load_tensor::<f32>(&path).unwrap(), b);
    }

    #[test]
    fn responses_round_trip_with_missing() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        let d = ResponseDataset::new(
            vec!["a".into(), "b".into()],
            vec!["x".into(), "y".into(), "z".into()],
            4,
            vec![Some(0), None, Some(3), None, None, Some(2)],
        )
        .unwrap();
        save_responses(&d, &path).unwrap();
        assert_eq!(load_responses(&path).unwrap(), d);
        std::fs::write(
            &path,
            std::fs::read_to_string(&path).unwrap().replace("3", "2"),
        )
        .unwrap();
        assert!(matches!(
            load_responses(&path),
            Err(IoError::HashMismatch { .. })
        ));
    }

    #[test]
    fn survey_reader_treats_negative_codes_as_missing() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        std::fs::write(&path, "q1,id,q2\n1,u1,-2\n4,u2,\n").unwrap();
        let raw = read_survey_csv(&path, "id").unwrap();
        assert_eq!(raw.user_ids, vec!["u1", "u2"]);
        assert_eq!(raw.question_ids, vec!["q1", "q2"]);
        assert_eq!(raw.values, vec![vec![Some(1), None], vec![Some(4), None]]);
    }
}
