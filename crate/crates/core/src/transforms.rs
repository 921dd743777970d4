//! Transforms of the likelihood dictionary: prototype clustering,
//! temperature scaling and deterministic-with-noise replacement.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::persona::{LikelihoodTensor, ModelError, PersonaPrior};
use crate::rng::{purpose, stream_rng};
use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransformError {
    #[error("temperature must be positive, got {0}")]
    BadTemperature(f64),
    #[error("noise level must lie in [0, 1], got {0}")]
    BadEpsilon(f64),
    #[error("prune_mass must lie in [0, 1), got {0}")]
    BadPruneMass(f64),
    #[error("{n_clusters} clusters requested but only {survivors} personas survive pruning")]
    TooManyClusters { n_clusters: usize, survivors: usize },
    #[error("mode table: {0}")]
    BadModes(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Jensen–Shannon divergence in nats.
pub fn jsd<S: Scalar>(p: &[S], q: &[S]) -> S {
    let half = S::lit(0.5);
    let mut total = S::zero();
    for (&a, &b) in p.iter().zip(q) {
        let m = half * (a + b);
        if a > S::zero() {
            total += half * a * (a / m).ln();
        }
        if b > S::zero() {
            total += half * b * (b / m).ln();
        }
    }
    total.max(S::zero())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterConfig {
    pub n_clusters: usize,
    /// Lowest-prior personas are dropped while their cumulative mass stays
    /// at or below this value.
    #[serde(default)]
    pub prune_mass: f64,
    #[serde(default = "ClusterConfig::default_iters")]
    pub max_kmeans_iters: usize,
    #[serde(default)]
    pub seed: u64,
}

impl ClusterConfig {
    fn default_iters() -> usize {
        100
    }

    pub fn new(n_clusters: usize) -> Self {
        Self {
            n_clusters,
            prune_mass: 0.0,
            max_kmeans_iters: Self::default_iters(),
            seed: 0,
        }
    }
}

/// Prototype dictionary produced by [`cluster_dictionary`].
#[derive(Debug, Clone, PartialEq)]
pub struct ClusteredDictionary<S> {
    pub tensor: LikelihoodTensor<S>,
    pub prior: PersonaPrior<S>,
    /// Cluster of each original persona; `None` for pruned personas.
    pub assignment: Vec<Option<usize>>,
    /// Prior-weighted k-means objective after each assignment step.
    pub objective_trace: Vec<f64>,
}

/// Personas that survive pruning, in index order.
pub fn prune_personas<S: Scalar>(
    prior: &PersonaPrior<S>,
    prune_mass: f64,
) -> Result<Vec<usize>, TransformError> {
    if !(0.0..1.0).contains(&prune_mass) {
        return Err(TransformError::BadPruneMass(prune_mass));
    }
    let w = prior.weights();
    let mut keep = vec![true; w.len()];
    if prune_mass > 0.0 {
        let mut order: Vec<usize> = (0..w.len()).collect();
        order.sort_by(|&a, &b| {
            w[a].partial_cmp(&w[b])
                .expect("finite weights")
                .then(a.cmp(&b))
        });
        let mut dropped = 0.0;
        for &i in &order {
            let next = dropped + w[i].to_f64_lossy();
            if next > prune_mass {
                break;
            }
            dropped = next;
            keep[i] = false;
        }
    }
    Ok((0..w.len()).filter(|&i| keep[i]).collect())
}

struct Points<'a, S> {
    tensor: &'a LikelihoodTensor<S>,
    personas: Vec<usize>,
    weights: Vec<S>,
}

impl<S: Scalar> Points<'_, S> {
    fn len(&self) -> usize {
        self.personas.len()
    }

    fn point(&self, i: usize) -> &[S] {
        let per = self.tensor.n_questions() * self.tensor.n_categories();
        let p = self.personas[i];
        &self.tensor.probs()[p * per..(p + 1) * per]
    }

    fn distance(&self, i: usize, centroid: &[S]) -> S {
        let k = self.tensor.n_categories();
        self.point(i)
            .chunks_exact(k)
            .zip(centroid.chunks_exact(k))
            .map(|(a, b)| jsd(a, b))
            .sum()
    }

    fn nearest(&self, i: usize, centroids: &[Vec<S>]) -> (usize, S) {
        let mut best = (0, S::infinity());
        for (c, centroid) in centroids.iter().enumerate() {
            let d = self.distance(i, centroid);
            if d < best.1 {
                best = (c, d);
            }
        }
        best
    }

    fn assign(&self, centroids: &[Vec<S>]) -> (Vec<usize>, S) {
        let nearest: Vec<(usize, S)> = (0..self.len())
            .into_par_iter()
            .map(|i| self.nearest(i, centroids))
            .collect();
        let objective = nearest
            .iter()
            .zip(&self.weights)
            .map(|(&(_, d), &w)| w * d)
            .sum();
        (nearest.into_iter().map(|(c, _)| c).collect(), objective)
    }

    /// Prior-weighted mean of each cluster's member distributions. Clusters
    /// whose members carry no prior mass fall back to the plain mean; empty
    /// clusters keep `previous`.
    fn means(&self, assignment: &[usize], previous: &[Vec<S>]) -> Vec<Vec<S>> {
        let dim = previous[0].len();
        let mut sums = vec![vec![S::zero(); dim]; previous.len()];
        let mut plain = vec![vec![S::zero(); dim]; previous.len()];
        let mut mass = vec![S::zero(); previous.len()];
        let mut count = vec![0usize; previous.len()];
        for (i, &c) in assignment.iter().enumerate() {
            let w = self.weights[i];
            for ((s, pl), &x) in sums[c]
                .iter_mut()
                .zip(plain[c].iter_mut())
                .zip(self.point(i))
            {
                *s += w * x;
                *pl += x;
            }
            mass[c] += w;
            count[c] += 1;
        }
        let k = self.tensor.n_categories();
        (0..previous.len())
            .map(|c| {
                let mut v = if count[c] == 0 {
                    return previous[c].clone();
                } else if mass[c] > S::zero() {
                    sums[c].clone()
                } else {
                    plain[c].clone()
                };
                for row in v.chunks_exact_mut(k) {
                    let s: S = row.iter().copied().sum();
                    row.iter_mut().for_each(|x| *x /= s);
                }
                v
            })
            .collect()
    }
}

fn kmeans_pp<S: Scalar, R: Rng + ?Sized>(
    points: &Points<'_, S>,
    k: usize,
    rng: &mut R,
) -> Vec<Vec<S>> {
    let mut chosen: Vec<usize> = Vec::with_capacity(k);
    let mut best_d: Vec<S> = vec![S::infinity(); points.len()];
    while chosen.len() < k {
        let scores: Vec<f64> = (0..points.len())
            .map(|i| {
                if chosen.contains(&i) {
                    0.0
                } else if chosen.is_empty() {
                    points.weights[i].to_f64_lossy()
                } else {
                    (points.weights[i] * best_d[i]).to_f64_lossy()
                }
            })
            .collect();
        let total: f64 = scores.iter().sum();
        let pick = if total > 0.0 && total.is_finite() {
            let u = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &s) in scores.iter().enumerate() {
                acc += s;
                if s > 0.0 && u < acc {
                    pick = Some(i);
                    break;
                }
            }
            pick.unwrap_or_else(|| {
                scores
                    .iter()
                    .rposition(|&s| s > 0.0)
                    .expect("positive total")
            })
        } else {
            (0..points.len())
                .find(|i| !chosen.contains(i))
                .expect("k <= number of points")
        };
        chosen.push(pick);
        let centroid = points.point(pick);
        for (i, d) in best_d.iter_mut().enumerate() {
            let di = points.distance(i, centroid);
            if di < *d {
                *d = di;
            }
        }
    }
    chosen
        .into_iter()
        .map(|i| points.point(i).to_vec())
        .collect()
}

/// Compresses the dictionary into prototype personas with prior-weighted
/// k-means under the summed per-question Jensen–Shannon divergence.
pub fn cluster_dictionary<S: Scalar>(
    tensor: &LikelihoodTensor<S>,
    prior: &PersonaPrior<S>,
    config: &ClusterConfig,
) -> Result<ClusteredDictionary<S>, TransformError> {
    if prior.len() != tensor.n_personas() {
        return Err(ModelError::DimensionMismatch(format!(
            "prior has {} personas, tensor has {}",
            prior.len(),
            tensor.n_personas()
        ))
        .into());
    }
    let survivors = prune_personas(prior, config.prune_mass)?;
    if config.n_clusters == 0 || config.n_clusters > survivors.len() {
        return Err(TransformError::TooManyClusters {
            n_clusters: config.n_clusters,
            survivors: survivors.len(),
        });
    }
    let surviving_mass: S = survivors.iter().map(|&i| prior.weights()[i]).sum();
    let weights: Vec<S> = survivors
        .iter()
        .map(|&i| {
            if surviving_mass > S::zero() {
                prior.weights()[i] / surviving_mass
            } else {
                S::one() / S::from_usize_lossy(survivors.len())
            }
        })
        .collect();
    let points = Points {
        tensor,
        personas: survivors.clone(),
        weights,
    };

    let mut rng = stream_rng(config.seed, purpose::KMEANS, 0);
    let mut centroids = kmeans_pp(&points, config.n_clusters, &mut rng);
    let (mut assignment, mut objective) = points.assign(&centroids);
    let mut trace = vec![objective.to_f64_lossy()];
    for _ in 0..config.max_kmeans_iters {
        let next_centroids = points.means(&assignment, &centroids);
        let (next_assignment, next_objective) = points.assign(&next_centroids);
        if !(next_objective < objective) {
            break;
        }
        centroids = next_centroids;
        assignment = next_assignment;
        objective = next_objective;
        trace.push(objective.to_f64_lossy());
    }

    // Canonical cluster order: by smallest member persona index.
    let mut first_member: Vec<Option<usize>> = vec![None; config.n_clusters];
    for (i, &c) in assignment.iter().enumerate() {
        first_member[c].get_or_insert(i);
    }
    let mut order: Vec<usize> = (0..config.n_clusters)
        .filter(|&c| first_member[c].is_some())
        .collect();
    order.sort_by_key(|&c| first_member[c]);
    let mut relabel = vec![usize::MAX; config.n_clusters];
    for (new, &old) in order.iter().enumerate() {
        relabel[old] = new;
    }
    let assignment: Vec<usize> = assignment.iter().map(|&c| relabel[c]).collect();
    let n_proto = order.len();

    let dim = tensor.n_questions() * tensor.n_categories();
    let placeholder = vec![vec![S::zero(); dim]; n_proto];
    let prototypes = points.means(&assignment, &placeholder);
    let mut masses = vec![S::zero(); n_proto];
    for (i, &c) in assignment.iter().enumerate() {
        masses[c] += points.weights[i];
    }
    let proto_tensor = LikelihoodTensor::new(
        n_proto,
        tensor.n_questions(),
        tensor.n_categories(),
        prototypes.into_iter().flatten().collect(),
    )?;
    let proto_prior = if masses.iter().copied().sum::<S>() > S::zero() {
        PersonaPrior::from_masses(masses)?
    } else {
        PersonaPrior::uniform(n_proto)
    };
    let mut full_assignment = vec![None; tensor.n_personas()];
    for (i, &p) in survivors.iter().enumerate() {
        full_assignment[p] = Some(assignment[i]);
    }
    Ok(ClusteredDictionary {
        tensor: proto_tensor,
        prior: proto_prior,
        assignment: full_assignment,
        objective_trace: trace,
    })
}

/// Raises each row to the power `1/tau` and renormalizes.
pub fn temperature_scale<S: Scalar>(
    tensor: &LikelihoodTensor<S>,
    tau: f64,
) -> Result<LikelihoodTensor<S>, TransformError> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(TransformError::BadTemperature(tau));
    }
    let inv = S::lit(1.0 / tau);
    let k = tensor.n_categories();
    let mut probs = Vec::with_capacity(tensor.probs().len());
    for (row, log_row) in tensor
        .probs()
        .chunks_exact(k)
        .zip(tensor.log_probs().chunks_exact(k))
    {
        if tau == 1.0 {
            probs.extend_from_slice(row);
            continue;
        }
        let scaled: Vec<S> = log_row.iter().map(|&l| l * inv).collect();
        let max = scaled.iter().copied().fold(S::neg_infinity(), S::max);
        let exps: Vec<S> = scaled.iter().map(|&s| (s - max).exp()).collect();
        let sum: S = exps.iter().copied().sum();
        probs.extend(exps.into_iter().map(|e| e / sum));
    }
    Ok(LikelihoodTensor::new(
        tensor.n_personas(),
        tensor.n_questions(),
        tensor.n_categories(),
        probs,
    )?)
}

/// One canonical answer per persona–question pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModeTable {
    pub n_personas: usize,
    pub n_questions: usize,
    pub n_categories: usize,
    /// Row-major persona × question, 0-based categories.
    pub modes: Vec<u8>,
}

impl ModeTable {
    pub fn new(
        n_personas: usize,
        n_questions: usize,
        n_categories: usize,
        modes: Vec<u8>,
    ) -> Result<Self, TransformError> {
        if n_categories < 2 {
            return Err(TransformError::BadModes(
                "need at least two categories".into(),
            ));
        }
        if modes.len() != n_personas * n_questions {
            return Err(TransformError::BadModes(format!(
                "expected {} modes, got {}",
                n_personas * n_questions,
                modes.len()
            )));
        }
        if let Some(&bad) = modes.iter().find(|&&m| m as usize >= n_categories) {
            return Err(TransformError::BadModes(format!(
                "mode {bad} out of range for {n_categories} categories"
            )));
        }
        Ok(Self {
            n_personas,
            n_questions,
            n_categories,
            modes,
        })
    }

    /// Most likely category of every row; ties go to the lowest category.
    pub fn from_argmax<S: Scalar>(tensor: &LikelihoodTensor<S>) -> Self {
        let modes = tensor
            .probs()
            .chunks_exact(tensor.n_categories())
            .map(|row| {
                let mut best = 0;
                for (k, &p) in row.iter().enumerate() {
                    if p > row[best] {
                        best = k;
                    }
                }
                best as u8
            })
            .collect();
        Self {
            n_personas: tensor.n_personas(),
            n_questions: tensor.n_questions(),
            n_categories: tensor.n_categories(),
            modes,
        }
    }
}

/// Mass `1 - epsilon` on the mode and `epsilon / (K - 1)` on every other
/// category.
pub fn deterministic_with_noise<S: Scalar>(
    modes: &ModeTable,
    epsilon: f64,
) -> Result<LikelihoodTensor<S>, TransformError> {
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(TransformError::BadEpsilon(epsilon));
    }
    let k = modes.n_categories;
    let on = S::lit(1.0 - epsilon);
    let off = S::lit(epsilon / (k - 1) as f64);
    let mut probs = Vec::with_capacity(modes.modes.len() * k);
    for &mode in &modes.modes {
        probs.extend((0..k).map(|c| if c == mode as usize { on } else { off }));
    }
    Ok(LikelihoodTensor::new(
        modes.n_personas,
        modes.n_questions,
        k,
        probs,
    )?)
}
