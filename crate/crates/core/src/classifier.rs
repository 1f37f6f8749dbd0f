//! Feedforward network that maps a delta point to a suspicious degree.
//!
//! Sigmoid units throughout, per-example squared error `0.5 * (y - t)^2`,
//! plain stochastic gradient descent with a fixed learning rate. One model
//! is trained per granularity.

use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::calendar::Granularity;
use crate::clustering::ClusteringResult;
use crate::features::DeltaPoint;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ClassifierError {
    #[error("invalid network config: {0}")]
    InvalidConfig(String),
    #[error("invalid training set: {0}")]
    InvalidTrainingSet(String),
    #[error("non-finite value during training at cycle {cycle}, example {example}")]
    NonFinite { cycle: usize, example: usize },
    #[error("model trained for {model} cannot score a {point} point")]
    GranularityMismatch { model: Granularity, point: Granularity },
    #[error("malformed model document: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    /// Neuron counts: input, hidden, output.
    pub layer_sizes: Vec<usize>,
    pub training_cycles: usize,
    pub learning_rate: f64,
    pub rng_seed: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            layer_sizes: vec![2, 5, 1],
            training_cycles: 5000,
            learning_rate: 0.25,
            rng_seed: 0,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<(), ClassifierError> {
        let sizes = &self.layer_sizes;
        if sizes.len() != 3 {
            return Err(ClassifierError::InvalidConfig(format!(
                "expected 3 layers (input, hidden, output), got {}",
                sizes.len()
            )));
        }
        if sizes[0] != 2 || sizes[2] != 1 {
            return Err(ClassifierError::InvalidConfig(
                "input width must be 2 and output width 1".into(),
            ));
        }
        if sizes.contains(&0) {
            return Err(ClassifierError::InvalidConfig("layer widths must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(ClassifierError::InvalidConfig("learning rate must be positive".into()));
        }
        Ok(())
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Fully connected sigmoid layer. `weights` is row-major, one row per output.
#[derive(Debug, Clone, PartialEq)]
struct Dense {
    inputs: usize,
    outputs: usize,
    weights: Vec<f64>,
    biases: Vec<f64>,
}

/// Multi-layer perceptron with sigmoid activations.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<Dense>,
}

/// Per-parameter gradients, laid out like the network.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

struct Scratch {
    activations: Vec<Vec<f64>>,
    deltas: Vec<Vec<f64>>,
}

impl Network {
    /// Weights and biases uniform in `[-0.5, 0.5]`.
    pub fn random(layer_sizes: &[usize], rng: &mut impl Rng) -> Self {
        let layers = layer_sizes
            .windows(2)
            .map(|w| Dense {
                inputs: w[0],
                outputs: w[1],
                weights: (0..w[0] * w[1]).map(|_| rng.random_range(-0.5..=0.5)).collect(),
                biases: (0..w[1]).map(|_| rng.random_range(-0.5..=0.5)).collect(),
            })
            .collect();
        Network { layers }
    }

    pub fn zeros(layer_sizes: &[usize]) -> Self {
        let layers = layer_sizes
            .windows(2)
            .map(|w| Dense {
                inputs: w[0],
                outputs: w[1],
                weights: vec![0.0; w[0] * w[1]],
                biases: vec![0.0; w[1]],
            })
            .collect();
        Network { layers }
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.layers[0].inputs];
        sizes.extend(self.layers.iter().map(|l| l.outputs));
        sizes
    }

    fn scratch(&self) -> Scratch {
        let sizes = self.layer_sizes();
        Scratch {
            activations: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            deltas: sizes[1..].iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    fn forward_into(&self, input: &[f64], s: &mut Scratch) {
        s.activations[0].copy_from_slice(input);
        for (l, layer) in self.layers.iter().enumerate() {
            let (prev, next) = s.activations.split_at_mut(l + 1);
            let x = &prev[l];
            for (o, out) in next[0].iter_mut().enumerate() {
                let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                let z: f64 = layer.biases[o] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
                *out = sigmoid(z);
            }
        }
    }

    /// Fills `s.deltas` with dL/dz for every layer; returns the loss.
    fn backward_into(&self, target: f64, s: &mut Scratch) -> f64 {
        let last = self.layers.len() - 1;
        let y = s.activations[last + 1][0];
        let err = y - target;
        s.deltas[last][0] = err * y * (1.0 - y);
        for l in (0..last).rev() {
            let upper = &self.layers[l + 1];
            let (lower_d, upper_d) = s.deltas.split_at_mut(l + 1);
            for (i, d) in lower_d[l].iter_mut().enumerate() {
                let a = s.activations[l + 1][i];
                let back: f64 = upper_d[0]
                    .iter()
                    .enumerate()
                    .map(|(o, du)| upper.weights[o * upper.inputs + i] * du)
                    .sum();
                *d = back * a * (1.0 - a);
            }
        }
        0.5 * err * err
    }

    fn apply_update(&mut self, s: &Scratch, rate: f64) {
        for (l, layer) in self.layers.iter_mut().enumerate() {
            let x = &s.activations[l];
            for (o, d) in s.deltas[l].iter().enumerate() {
                let row = &mut layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                for (w, v) in row.iter_mut().zip(x) {
                    *w -= rate * d * v;
                }
                layer.biases[o] -= rate * d;
            }
        }
    }

    pub fn forward(&self, input: &[f64]) -> f64 {
        let mut s = self.scratch();
        self.forward_into(input, &mut s);
        s.activations[self.layers.len()][0]
    }

    pub fn loss(&self, input: &[f64], target: f64) -> f64 {
        let y = self.forward(input);
        0.5 * (y - target) * (y - target)
    }

    /// Analytic gradients of the per-example loss.
    pub fn gradients(&self, input: &[f64], target: f64) -> Gradients {
        let mut s = self.scratch();
        self.forward_into(input, &mut s);
        self.backward_into(target, &mut s);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut gw = vec![0.0; layer.weights.len()];
            for (o, d) in s.deltas[l].iter().enumerate() {
                for (i, v) in s.activations[l].iter().enumerate() {
                    gw[o * layer.inputs + i] = d * v;
                }
            }
            weights.push(gw);
            biases.push(s.deltas[l].clone());
        }
        Gradients { weights, biases }
    }

    /// Largest relative error between analytic gradients and central finite
    /// differences (step `1e-5`) over every weight and bias.
    pub fn gradient_check(&self, input: &[f64], target: f64) -> f64 {
        const STEP: f64 = 1e-5;
        let analytic = self.gradients(input, target);
        let mut probe = self.clone();
        let mut worst = 0.0_f64;
        let rel = |a: f64, n: f64| (a - n).abs() / (a.abs() + n.abs()).max(1e-8);

        for l in 0..self.layers.len() {
            for p in 0..self.layers[l].weights.len() {
                let orig = probe.layers[l].weights[p];
                probe.layers[l].weights[p] = orig + STEP;
                let up = probe.loss(input, target);
                probe.layers[l].weights[p] = orig - STEP;
                let down = probe.loss(input, target);
                probe.layers[l].weights[p] = orig;
                worst = worst.max(rel(analytic.weights[l][p], (up - down) / (2.0 * STEP)));
            }
            for p in 0..self.layers[l].biases.len() {
                let orig = probe.layers[l].biases[p];
                probe.layers[l].biases[p] = orig + STEP;
                let up = probe.loss(input, target);
                probe.layers[l].biases[p] = orig - STEP;
                let down = probe.loss(input, target);
                probe.layers[l].biases[p] = orig;
                worst = worst.max(rel(analytic.biases[l][p], (up - down) / (2.0 * STEP)));
            }
        }
        worst
    }

    fn all_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.biases).all(|v| v.is_finite()))
    }
}

/// A labeled input for gradient checking.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabeledSample {
    pub input: [f64; 2],
    pub target: f64,
}

/// Gradient check on a freshly initialised network drawn from `config`'s seed.
pub fn gradient_check(config: &NetworkConfig, sample: &LabeledSample) -> Result<f64, ClassifierError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let net = Network::random(&config.layer_sizes, &mut rng);
    Ok(net.gradient_check(&sample.input, sample.target))
}

/// Bounds and seed for drawing unsuspecting examples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingPolicy {
    /// Fraction of the non-suspicious population sampled as negatives.
    pub rate: f64,
    pub min_rate: f64,
    pub max_rate: f64,
    pub seed: u64,
}

impl Default for SamplingPolicy {
    fn default() -> Self {
        SamplingPolicy {
            rate: 0.05,
            min_rate: 0.05,
            max_rate: 0.10,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSet {
    pub positives: Vec<DeltaPoint>,
    pub negatives: Vec<DeltaPoint>,
    pub negative_sampling_rate: f64,
}

impl TrainingSet {
    pub fn len(&self) -> usize {
        self.positives.len() + self.negatives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(input, target)` pairs, positives first.
    pub fn examples(&self) -> Vec<([f64; 2], f64)> {
        self.positives
            .iter()
            .map(|p| (p.coords(), 1.0))
            .chain(self.negatives.iter().map(|p| (p.coords(), 0.0)))
            .collect()
    }

    /// SHA-256 over labels, keys and exact coordinates.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for (label, set) in [(1u8, &self.positives), (0u8, &self.negatives)] {
            for p in set {
                h.update([label]);
                h.update(p.key.id().as_bytes());
                h.update(p.delta1.to_bits().to_le_bytes());
                h.update(p.delta2.to_bits().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

/// Positives are `population[positive_idx]`; negatives are a uniform sample
/// without replacement of `ceil(rate * remaining)` of the other points,
/// kept in population order.
pub fn build_training_set_from(
    population: &[DeltaPoint],
    positive_idx: &[usize],
    policy: &SamplingPolicy,
) -> Result<TrainingSet, ClassifierError> {
    if !(policy.min_rate..=policy.max_rate).contains(&policy.rate) {
        return Err(ClassifierError::InvalidTrainingSet(format!(
            "negative sampling rate {} outside [{}, {}]",
            policy.rate, policy.min_rate, policy.max_rate
        )));
    }
    if positive_idx.is_empty() {
        return Err(ClassifierError::InvalidTrainingSet("suspicious cluster is empty".into()));
    }
    let mut is_positive = vec![false; population.len()];
    for &i in positive_idx {
        is_positive[i] = true;
    }
    let others: Vec<usize> = (0..population.len()).filter(|&i| !is_positive[i]).collect();
    let wanted = ((policy.rate * others.len() as f64).ceil() as usize).min(others.len());
    let mut rng = ChaCha8Rng::seed_from_u64(policy.seed);
    let mut picked = rand::seq::index::sample(&mut rng, others.len(), wanted).into_vec();
    picked.sort_unstable();

    let mut positive_idx = positive_idx.to_vec();
    positive_idx.sort_unstable();
    positive_idx.dedup();
    Ok(TrainingSet {
        positives: positive_idx.iter().map(|&i| population[i].clone()).collect(),
        negatives: picked.into_iter().map(|j| population[others[j]].clone()).collect(),
        negative_sampling_rate: policy.rate,
    })
}

/// Training set from a clustering of `points`: every member of
/// `suspicious_cluster` is a positive, negatives come from the rest.
pub fn build_training_set(
    points: &[DeltaPoint],
    clustering: &ClusteringResult,
    suspicious_cluster: usize,
    policy: &SamplingPolicy,
) -> Result<TrainingSet, ClassifierError> {
    let members: Vec<usize> = clustering
        .assignments
        .iter()
        .enumerate()
        .filter(|(_, &c)| c == suspicious_cluster)
        .map(|(i, _)| i)
        .collect();
    build_training_set_from(points, &members, policy)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub config: NetworkConfig,
    pub granularity: Granularity,
    pub network: Network,
    pub final_loss: f64,
    /// Mean loss per training cycle.
    pub loss_history: Vec<f64>,
    pub created_at: String,
    pub training_set_fingerprint: String,
}

impl fmt::Display for TrainedModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} model {:?} after {} cycles, loss {:.6}",
            self.granularity,
            self.config.layer_sizes,
            self.loss_history.len(),
            self.final_loss
        )
    }
}

/// Trains with per-example SGD over `config.training_cycles` passes, each
/// pass in a fresh seed-driven shuffle.
pub fn train(
    set: &TrainingSet,
    config: &NetworkConfig,
    granularity: Granularity,
) -> Result<TrainedModel, ClassifierError> {
    config.validate()?;
    if set.positives.is_empty() || set.negatives.is_empty() {
        return Err(ClassifierError::InvalidTrainingSet(
            "need at least one positive and one negative example".into(),
        ));
    }
    let examples = set.examples();
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let mut net = Network::random(&config.layer_sizes, &mut rng);
    let mut scratch = net.scratch();
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut history = Vec::with_capacity(config.training_cycles);

    for cycle in 0..config.training_cycles {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &e in &order {
            let (input, target) = &examples[e];
            net.forward_into(input, &mut scratch);
            let loss = net.backward_into(*target, &mut scratch);
            if !loss.is_finite() || scratch.deltas.iter().flatten().any(|d| !d.is_finite()) {
                return Err(ClassifierError::NonFinite { cycle, example: e });
            }
            net.apply_update(&scratch, config.learning_rate);
            total += loss;
        }
        history.push(total / examples.len() as f64);
    }
    if !net.all_finite() {
        return Err(ClassifierError::NonFinite {
            cycle: config.training_cycles,
            example: 0,
        });
    }

    let final_loss = match history.last() {
        Some(&l) => l,
        None => examples.iter().map(|(x, t)| net.loss(x, *t)).sum::<f64>() / examples.len() as f64,
    };
    Ok(TrainedModel {
        config: config.clone(),
        granularity,
        network: net,
        final_loss,
        loss_history: history,
        created_at: String::new(),
        training_set_fingerprint: set.fingerprint(),
    })
}

impl TrainedModel {
    /// Suspicious degree for raw coordinates.
    pub fn degree(&self, delta1: f64, delta2: f64) -> f64 {
        self.network.forward(&[delta1, delta2])
    }

    pub fn accuracy(&self, set: &TrainingSet) -> f64 {
        let examples = set.examples();
        let hits = examples
            .iter()
            .filter(|(x, t)| (self.network.forward(x) >= 0.5) == (*t >= 0.5))
            .count();
        hits as f64 / examples.len() as f64
    }

    pub fn to_json(&self) -> String {
        let doc = ModelDocument {
            config: self.config.clone(),
            granularity: self.granularity,
            layers: self
                .network
                .layers
                .iter()
                .map(|l| LayerDocument {
                    weights: l.weights.chunks(l.inputs).map(<[f64]>::to_vec).collect(),
                    biases: l.biases.clone(),
                })
                .collect(),
            final_loss: self.final_loss,
            loss_history: self.loss_history.clone(),
            created_at: self.created_at.clone(),
            training_set_fingerprint: self.training_set_fingerprint.clone(),
        };
        let mut s = serde_json::to_string_pretty(&doc).expect("model document serialises");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, ClassifierError> {
        let doc: ModelDocument =
            serde_json::from_str(text).map_err(|e| ClassifierError::Malformed(e.to_string()))?;
        doc.config.validate()?;
        let sizes = &doc.config.layer_sizes;
        if doc.layers.len() + 1 != sizes.len() {
            return Err(ClassifierError::Malformed("layer count does not match config".into()));
        }
        let mut layers = Vec::new();
        for (l, ld) in doc.layers.into_iter().enumerate() {
            let (inputs, outputs) = (sizes[l], sizes[l + 1]);
            if ld.weights.len() != outputs
                || ld.weights.iter().any(|r| r.len() != inputs)
                || ld.biases.len() != outputs
            {
                return Err(ClassifierError::Malformed(format!("layer {l} has wrong dimensions")));
            }
            layers.push(Dense {
                inputs,
                outputs,
                weights: ld.weights.into_iter().flatten().collect(),
                biases: ld.biases,
            });
        }
        let network = Network { layers };
        if !network.all_finite() {
            return Err(ClassifierError::Malformed("non-finite weight".into()));
        }
        Ok(TrainedModel {
            config: doc.config,
            granularity: doc.granularity,
            network,
            final_loss: doc.final_loss,
            loss_history: doc.loss_history,
            created_at: doc.created_at,
            training_set_fingerprint: doc.training_set_fingerprint,
        })
    }

    /// SHA-256 of the persisted JSON document.
    pub fn fingerprint(&self) -> String {
        hex::encode(Sha256::digest(self.to_json().as_bytes()))
    }
}

/// Scores one point; the point must match the model's granularity.
pub fn predict(model: &TrainedModel, point: &DeltaPoint) -> Result<f64, ClassifierError> {
    if point.key.granularity != model.granularity {
        return Err(ClassifierError::GranularityMismatch {
            model: model.granularity,
            point: point.key.granularity,
        });
    }
    Ok(model.degree(point.delta1, point.delta2))
}

#[derive(Serialize, Deserialize)]
struct LayerDocument {
    weights: Vec<Vec<f64>>,
    biases: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ModelDocument {
    config: NetworkConfig,
    granularity: Granularity,
    layers: Vec<LayerDocument>,
    final_loss: f64,
    loss_history: Vec<f64>,
    created_at: String,
    training_set_fingerprint: String,
}
