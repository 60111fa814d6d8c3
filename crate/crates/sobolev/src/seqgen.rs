//! Toy character-level sequence generation with constrained critics.
//!
//! A synthetic order-1 Markov corpus over a small alphabet stands in for real
//! text. Real sequences are encoded as rows of smoothed one-hot
//! distributions, optionally perturbed with annealed Gaussian noise before
//! the softmax; the generator emits per-position distributions over the
//! alphabet from noise through a small convolutional stack. Training reuses
//! the augmented-Lagrangian machinery and quality is tracked as the
//! Jensen-Shannon divergence between empirical 4-gram distributions of the
//! decoded samples and the corpus (JS-4).

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::nn::{Activation, Mlp};
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Result, SobolevError};
use crate::gan::adam::Adam;
use crate::gan::{lambda_update, ConstraintKind};

/// Fixed-length token sequences over an alphabet of size `v`.
#[derive(Debug, Clone)]
pub struct CharCorpus {
    pub v: usize,
    pub l: usize,
    pub sequences: Vec<Vec<usize>>,
}

impl CharCorpus {
    pub fn new(v: usize, l: usize, sequences: Vec<Vec<usize>>) -> Result<Self> {
        for s in &sequences {
            if s.len() != l {
                return Err(SobolevError::Dimension(format!(
                    "all sequences must have length {l}, got {}",
                    s.len()
                )));
            }
            if s.iter().any(|t| *t >= v) {
                return Err(SobolevError::Dimension(format!(
                    "token out of range for alphabet size {v}"
                )));
            }
        }
        Ok(CharCorpus { v, l, sequences })
    }
}

/// Synthetic order-1 Markov chain corpus spec.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct MarkovSpec {
    pub v: usize,
    pub l: usize,
    pub n_sequences: usize,
    pub seed: u64,
}

/// Sample a corpus and return it with the generating transition matrix
/// (rows: from-state) and initial distribution.
pub fn markov_corpus(spec: &MarkovSpec) -> Result<(CharCorpus, Vec<Vec<f64>>, Vec<f64>)> {
    use rand::SeedableRng;
    if spec.v < 2 || spec.v > 64 || spec.l < 4 || spec.l > 64 {
        return Err(SobolevError::Config(format!(
            "markov corpus needs 2 <= v <= 64 and 4 <= l <= 64, got v={} l={}",
            spec.v, spec.l
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let skewed_row = |rng: &mut ChaCha8Rng| {
        let logits: Vec<f64> = (0..spec.v)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                1.5 * z
            })
            .collect();
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
        let z: f64 = exps.iter().sum();
        exps.into_iter().map(|e| e / z).collect::<Vec<f64>>()
    };
    let initial = skewed_row(&mut rng);
    let transition: Vec<Vec<f64>> = (0..spec.v).map(|_| skewed_row(&mut rng)).collect();
    let draw = |probs: &[f64], rng: &mut ChaCha8Rng| {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (k, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return k;
            }
        }
        probs.len() - 1
    };
    let sequences = (0..spec.n_sequences)
        .map(|_| {
            let mut seq = Vec::with_capacity(spec.l);
            let mut state = draw(&initial, &mut rng);
            seq.push(state);
            for _ in 1..spec.l {
                state = draw(&transition[state], &mut rng);
                seq.push(state);
            }
            seq
        })
        .collect();
    Ok((CharCorpus::new(spec.v, spec.l, sequences)?, transition, initial))
}

/// Linear noise anneal sigma_i = sigma0 (1 - i / max_iter).
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct AnnealSchedule {
    pub sigma0: f64,
    pub max_iter: usize,
}

impl AnnealSchedule {
    pub fn sigma(&self, i: usize) -> Result<f64> {
        if i > self.max_iter {
            return Err(SobolevError::Config(format!(
                "anneal index {i} beyond horizon {}",
                self.max_iter
            )));
        }
        Ok(self.sigma0 * (1.0 - i as f64 / self.max_iter as f64))
    }
}

/// Smoothed, noised one-hot rows: 0.9 at the token, 0.1/(V-1) elsewhere,
/// then softmax(log p + eps) with eps ~ N(0, sigma^2) per entry.
pub fn smooth_onehot<R: Rng>(
    tokens: &[usize],
    v: usize,
    sigma: f64,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    if sigma < 0.0 {
        return Err(SobolevError::Config(format!(
            "smoothing noise must be nonnegative, got {sigma}"
        )));
    }
    let off = 0.1 / (v - 1) as f64;
    tokens
        .iter()
        .map(|t| {
            if *t >= v {
                return Err(SobolevError::Dimension(format!(
                    "token {t} out of range for alphabet size {v}"
                )));
            }
            let mut logits: Vec<f64> = (0..v)
                .map(|k| {
                    let p = if k == *t { 0.9 } else { off };
                    let eps: f64 = if sigma > 0.0 {
                        let z: f64 = StandardNormal.sample(rng);
                        sigma * z
                    } else {
                        0.0
                    };
                    p.ln() + eps
                })
                .collect();
            let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            for l in logits.iter_mut() {
                *l = (*l - m).exp();
            }
            let z: f64 = logits.iter().sum();
            for l in logits.iter_mut() {
                *l /= z;
            }
            Ok(logits)
        })
        .collect()
}

/// Pack per-position simplex rows (L of V) into a [V, L] channel tensor.
pub fn rows_to_channels(rows: &[Vec<f64>]) -> Tensor {
    let l = rows.len();
    let v = rows[0].len();
    let mut data = vec![0.0; v * l];
    for (t, row) in rows.iter().enumerate() {
        for (k, p) in row.iter().enumerate() {
            data[k * l + t] = *p;
        }
    }
    Tensor { data, shape: vec![v, l] }
}

/// Per-position argmax decode of a [V, L] tensor.
pub fn decode_argmax(x: &Tensor) -> Vec<usize> {
    let (v, l) = (x.shape[0], x.shape[1]);
    (0..l)
        .map(|t| {
            (0..v)
                .max_by(|a, b| x.data[a * l + t].partial_cmp(&x.data[b * l + t]).unwrap())
                .unwrap()
        })
        .collect()
}

/// Jensen-Shannon divergence (natural log, max ln 2) between the empirical
/// 4-gram distributions of two corpora, over overlapping windows.
pub fn js4(a: &CharCorpus, b: &CharCorpus) -> Result<f64> {
    if a.l < 4 || b.l < 4 || a.sequences.is_empty() || b.sequences.is_empty() {
        return Err(SobolevError::Dimension(
            "JS-4 needs non-empty corpora with length >= 4".into(),
        ));
    }
    let hist = |c: &CharCorpus| {
        let mut counts: HashMap<[usize; 4], f64> = HashMap::new();
        let mut total = 0.0;
        for s in &c.sequences {
            for w in s.windows(4) {
                *counts.entry([w[0], w[1], w[2], w[3]]).or_insert(0.0) += 1.0;
                total += 1.0;
            }
        }
        for v in counts.values_mut() {
            *v /= total;
        }
        counts
    };
    let pa = hist(a);
    let pb = hist(b);
    let mut js = 0.0;
    for (g, p) in &pa {
        let q = pb.get(g).copied().unwrap_or(0.0);
        let m = 0.5 * (p + q);
        js += 0.5 * p * (p / m).ln();
    }
    for (g, q) in &pb {
        let p = pa.get(g).copied().unwrap_or(0.0);
        let m = 0.5 * (p + q);
        js += 0.5 * q * (q / m).ln();
    }
    Ok(js.clamp(0.0, std::f64::consts::LN_2))
}

// ----- convolutional nets over [C, L] -----

/// Stack of 1-D convolutions with per-channel biases; activation between
/// layers, none after the last.
#[derive(Debug, Clone)]
pub struct ConvNet {
    /// (kernel [cout, cin, K], bias [cout]) per layer.
    pub layers: Vec<(Tensor, Tensor)>,
    pub activation: Activation,
}

impl ConvNet {
    /// `channels` lists cin..cout per layer boundary; `ksizes` one odd width
    /// per layer.
    pub fn init<R: Rng>(
        channels: &[usize],
        ksizes: &[usize],
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        if channels.len() < 2 || ksizes.len() != channels.len() - 1 {
            return Err(SobolevError::Config(
                "conv net needs channels per boundary and one kernel width per layer".into(),
            ));
        }
        let mut layers = Vec::new();
        for (i, k) in ksizes.iter().enumerate() {
            if k % 2 == 0 {
                return Err(SobolevError::Config("kernel widths must be odd".into()));
            }
            let (cin, cout) = (channels[i], channels[i + 1]);
            let std = (2.0 / (cin * k + cout * k) as f64).sqrt();
            let data = (0..cout * cin * k)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(rng);
                    std * z
                })
                .collect();
            layers.push((
                Tensor::new(data, vec![cout, cin, *k])?,
                Tensor::zeros(&[cout]),
            ));
        }
        Ok(ConvNet { layers, activation })
    }

    pub fn params(&self, tape: &Tape) -> Vec<Var> {
        self.layers
            .iter()
            .flat_map(|(k, b)| [tape.input(k.clone()), tape.input(b.clone())])
            .collect()
    }

    pub fn constants(&self, tape: &Tape) -> Vec<Var> {
        self.layers
            .iter()
            .flat_map(|(k, b)| [tape.constant(k.clone()), tape.constant(b.clone())])
            .collect()
    }

    pub fn forward(&self, tape: &Tape, params: &[Var], x: Var) -> Var {
        let n = self.layers.len();
        let mut h = x;
        for i in 0..n {
            let z = tape.add_col_vec(tape.conv1d(h, params[2 * i]), params[2 * i + 1]);
            h = if i + 1 < n {
                self.activation.apply(tape, z)
            } else {
                z
            };
        }
        h
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|(k, b)| k.len() + b.len()).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for (k, b) in &self.layers {
            out.extend_from_slice(&k.data);
            out.extend_from_slice(&b.data);
        }
        out
    }

    pub fn unflatten(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.n_params() {
            return Err(SobolevError::Dimension(format!(
                "expected {} parameters, got {}",
                self.n_params(),
                flat.len()
            )));
        }
        let mut at = 0;
        for (k, b) in self.layers.iter_mut() {
            let (kn, bn) = (k.len(), b.len());
            k.data.copy_from_slice(&flat[at..at + kn]);
            at += kn;
            b.data.copy_from_slice(&flat[at..at + bn]);
            at += bn;
        }
        Ok(())
    }
}

/// Critic: conv stack down to one channel, summed over positions.
#[derive(Debug, Clone)]
pub struct SeqCritic {
    pub net: ConvNet,
}

impl SeqCritic {
    pub fn init<R: Rng>(v: usize, width: usize, activation: Activation, rng: &mut R) -> Result<Self> {
        Ok(SeqCritic {
            net: ConvNet::init(&[v, width, width, 1], &[3, 3, 1], activation, rng)?,
        })
    }

    pub fn forward(&self, tape: &Tape, params: &[Var], x: Var) -> Var {
        tape.sum(self.net.forward(tape, params, x))
    }
}

/// Generator: noise -> dense features -> conv head -> per-position softmax.
#[derive(Debug, Clone)]
pub struct SeqGenerator {
    pub mlp: Mlp,
    pub conv: ConvNet,
    pub l: usize,
    pub feat_channels: usize,
}

impl SeqGenerator {
    pub fn init<R: Rng>(
        noise_dim: usize,
        v: usize,
        l: usize,
        width: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let feat_channels = width;
        Ok(SeqGenerator {
            mlp: Mlp::init(&[noise_dim, width, feat_channels * l], Activation::Tanh, rng)?,
            conv: ConvNet::init(&[feat_channels, width, v], &[3, 3], Activation::Tanh, rng)?,
            l,
            feat_channels,
        })
    }

    pub fn noise_dim(&self) -> usize {
        self.mlp.input_dim()
    }

    pub fn params(&self, tape: &Tape) -> Vec<Var> {
        let mut p = self.mlp.params(tape);
        p.extend(self.conv.params(tape));
        p
    }

    /// One sample: z is [noise_dim, 1]; output [V, L] rows on the simplex
    /// per position.
    pub fn forward(&self, tape: &Tape, params: &[Var], z: Var) -> Var {
        let n_mlp = 2 * self.mlp.layers.len();
        let feats = self.mlp.forward(tape, &params[..n_mlp], z);
        let grid = tape.tanh(tape.reshape(feats, &[self.feat_channels, self.l]));
        let logits = self.conv.forward(tape, &params[n_mlp..], grid);
        tape.softmax_cols(logits)
    }

    pub fn n_params(&self) -> usize {
        self.mlp.n_params() + self.conv.n_params()
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = self.mlp.flatten();
        out.extend(self.conv.flatten());
        out
    }

    pub fn unflatten(&mut self, flat: &[f64]) -> Result<()> {
        let nm = self.mlp.n_params();
        self.mlp.unflatten(&flat[..nm])?;
        self.conv.unflatten(&flat[nm..])
    }

    /// Decode `n` sequences from fresh noise (values only).
    pub fn sample_decoded<R: Rng>(&self, n: usize, rng: &mut R) -> Vec<Vec<usize>> {
        (0..n)
            .map(|_| {
                let z = Tensor::new(
                    (0..self.noise_dim())
                        .map(|_| StandardNormal.sample(rng))
                        .collect(),
                    vec![self.noise_dim(), 1],
                )
                .unwrap();
                let tape = Tape::new();
                let params: Vec<Var> = {
                    let mut p: Vec<Var> = self
                        .mlp
                        .layers
                        .iter()
                        .flat_map(|(w, b)| [tape.constant(w.clone()), tape.constant(b.clone())])
                        .collect();
                    p.extend(self.conv.constants(&tape));
                    p
                };
                let x = self.forward(&tape, &params, tape.constant(z));
                decode_argmax(&tape.value(x))
            })
            .collect()
    }
}

// ----- training -----

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct TextGanConfig {
    pub seed: u64,
    pub corpus: MarkovSpec,
    pub kind: ConstraintKind,
    /// Anneal the real-side smoothing noise from sigma0 to 0 over the run;
    /// otherwise the real encoding is the noise-free smoothed one-hot.
    pub annealed: bool,
    pub sigma0: f64,
    pub iters: usize,
    pub n_critic: usize,
    pub batch: usize,
    pub eta: f64,
    pub rho: f64,
    pub lambda_gp: f64,
    pub noise_dim: usize,
    pub width: usize,
    pub eval_every: usize,
    pub eval_sequences: usize,
}

impl Default for TextGanConfig {
    fn default() -> Self {
        TextGanConfig {
            seed: 0,
            corpus: MarkovSpec {
                v: 5,
                l: 8,
                n_sequences: 4096,
                seed: 7,
            },
            kind: ConstraintKind::Sobolev,
            annealed: true,
            sigma0: 1.5,
            iters: 1200,
            n_critic: 2,
            batch: 32,
            eta: 1e-3,
            rho: 1e-4,
            lambda_gp: 10.0,
            noise_dim: 16,
            width: 24,
            eval_every: 200,
            eval_sequences: 512,
        }
    }
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct TextHistoryRow {
    pub iter: usize,
    pub sigma: f64,
    pub e_hat: f64,
    pub omega: f64,
    pub lambda: f64,
    /// JS-4 against the corpus when evaluated this iteration.
    pub js4: Option<f64>,
}

#[derive(Debug)]
pub struct TextGanOutcome {
    pub generator: SeqGenerator,
    pub history: Vec<TextHistoryRow>,
    /// JS-4 of the untrained generator against the corpus.
    pub baseline_js4: f64,
    /// JS-4 after training.
    pub final_js4: f64,
    /// Self-distance floor: JS-4 between two halves of the corpus.
    pub floor_js4: f64,
}

fn batch_loss_grads(
    critic: &SeqCritic,
    kind: ConstraintKind,
    real: &[Tensor],
    fake: &[Tensor],
    constraint: &[Tensor],
    lambda: f64,
    rho: f64,
    lambda_gp: f64,
) -> Result<(f64, f64, Vec<f64>)> {
    if kind != ConstraintKind::Fisher && critic.net.activation == Activation::Relu {
        return Err(SobolevError::Unsupported(
            "gradient-norm constraints need a twice-differentiable activation".into(),
        ));
    }
    let tape = Tape::new();
    let params = critic.net.params(&tape);
    let mean_f = |batch: &[Tensor]| {
        let mut acc: Option<Var> = None;
        for x in batch {
            let f = critic.forward(&tape, &params, tape.constant(x.clone()));
            acc = Some(match acc {
                Some(a) => tape.add(a, f),
                None => f,
            });
        }
        tape.scale(acc.unwrap(), 1.0 / batch.len() as f64)
    };
    let e_hat = tape.sub(mean_f(real), mean_f(fake));
    let m = constraint.len() as f64;
    let mut acc: Option<Var> = None;
    for x in constraint {
        let term = match kind {
            ConstraintKind::Fisher => {
                let f = critic.forward(&tape, &params, tape.constant(x.clone()));
                tape.mul(f, f)
            }
            ConstraintKind::Sobolev => {
                let xv = tape.input(x.clone());
                let f = critic.forward(&tape, &params, xv);
                let g = tape.backward(f, &[xv])[0];
                tape.sumsq(g)
            }
            ConstraintKind::WganGp => {
                let xv = tape.input(x.clone());
                let f = critic.forward(&tape, &params, xv);
                let g = tape.backward(f, &[xv])[0];
                let norm = tape.sqrt(tape.add_const(tape.sumsq(g), 1e-24));
                let gap = tape.add_const(tape.scale(norm, -1.0), 1.0);
                tape.mul(gap, gap)
            }
        };
        acc = Some(match acc {
            Some(a) => tape.add(a, term),
            None => term,
        });
    }
    let omega = tape.scale(acc.unwrap(), 1.0 / m);
    let loss = match kind {
        ConstraintKind::WganGp => tape.sub(e_hat, tape.scale(omega, lambda_gp)),
        _ => {
            let gap = tape.add_const(omega, -1.0);
            let lin = tape.scale(gap, -lambda);
            let quad = tape.scale(tape.mul(gap, gap), -rho / 2.0);
            tape.add(e_hat, tape.add(lin, quad))
        }
    };
    let grads = tape.backward(loss, &params);
    let mut flat = Vec::with_capacity(critic.net.n_params());
    for g in &grads {
        flat.extend_from_slice(&tape.value(*g).data);
    }
    Ok((tape.value(e_hat).item(), tape.value(omega).item(), flat))
}

fn generator_grads(
    critic: &SeqCritic,
    generator: &SeqGenerator,
    zs: &[Tensor],
) -> Result<Vec<f64>> {
    let tape = Tape::new();
    let gparams = generator.params(&tape);
    let cparams = critic.net.constants(&tape);
    let mut acc: Option<Var> = None;
    for z in zs {
        let x = generator.forward(&tape, &gparams, tape.constant(z.clone()));
        let f = critic.forward(&tape, &cparams, x);
        acc = Some(match acc {
            Some(a) => tape.add(a, f),
            None => f,
        });
    }
    let loss = tape.scale(acc.unwrap(), -1.0 / zs.len() as f64);
    let grads = tape.backward(loss, &gparams);
    let mut flat = Vec::with_capacity(generator.n_params());
    for g in &grads {
        flat.extend_from_slice(&tape.value(*g).data);
    }
    Ok(flat)
}

/// Train the sequence generator against the Markov corpus and track JS-4.
pub fn train_text_gan(cfg: &TextGanConfig) -> Result<TextGanOutcome> {
    use rand::SeedableRng;
    let (corpus, _, _) = markov_corpus(&cfg.corpus)?;
    let (v, l) = (corpus.v, corpus.l);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut critic = SeqCritic::init(v, cfg.width, Activation::Tanh, &mut rng)?;
    let mut generator = SeqGenerator::init(cfg.noise_dim, v, l, cfg.width, &mut rng)?;
    let mut critic_opt = Adam::new(critic.net.n_params(), cfg.eta);
    let mut gen_opt = Adam::new(generator.n_params(), cfg.eta);
    let mut lambda = 0.0;
    let schedule = AnnealSchedule {
        sigma0: cfg.sigma0,
        max_iter: cfg.iters.max(1),
    };
    let eval_js = |generator: &SeqGenerator, rng: &mut ChaCha8Rng| -> Result<f64> {
        let decoded = generator.sample_decoded(cfg.eval_sequences, rng);
        js4(&corpus, &CharCorpus::new(v, l, decoded)?)
    };
    let baseline_js4 = eval_js(&generator, &mut rng)?;
    let half = corpus.sequences.len() / 2;
    let floor_js4 = js4(
        &CharCorpus::new(v, l, corpus.sequences[..half].to_vec())?,
        &CharCorpus::new(v, l, corpus.sequences[half..].to_vec())?,
    )?;
    let mut history = Vec::new();
    let mut final_js4 = baseline_js4;
    for iter in 0..cfg.iters {
        let sigma = if cfg.annealed { schedule.sigma(iter)? } else { 0.0 };
        let mut last = (0.0, 0.0);
        for _ in 0..cfg.n_critic {
            let real: Vec<Tensor> = (0..cfg.batch)
                .map(|_| {
                    let idx = rng.random_range(0..corpus.sequences.len());
                    let rows = smooth_onehot(&corpus.sequences[idx], v, sigma, &mut rng)?;
                    Ok(rows_to_channels(&rows))
                })
                .collect::<Result<_>>()?;
            let zs: Vec<Tensor> = (0..cfg.batch)
                .map(|_| {
                    Tensor::new(
                        (0..cfg.noise_dim).map(|_| StandardNormal.sample(&mut rng)).collect(),
                        vec![cfg.noise_dim, 1],
                    )
                })
                .collect::<Result<_>>()?;
            let fake: Vec<Tensor> = zs
                .iter()
                .map(|z| {
                    let tape = Tape::new();
                    let gp: Vec<Var> = {
                        let mut p: Vec<Var> = generator
                            .mlp
                            .layers
                            .iter()
                            .flat_map(|(w, b)| {
                                [tape.constant(w.clone()), tape.constant(b.clone())]
                            })
                            .collect();
                        p.extend(generator.conv.constants(&tape));
                        p
                    };
                    let x = generator.forward(&tape, &gp, tape.constant(z.clone()));
                    tape.value(x)
                })
                .collect();
            let constraint: Vec<Tensor> = if cfg.kind == ConstraintKind::WganGp {
                real.iter()
                    .zip(&fake)
                    .map(|(r, f)| {
                        let u: f64 = rng.random();
                        let data = r
                            .data
                            .iter()
                            .zip(&f.data)
                            .map(|(a, b)| a + u * (b - a))
                            .collect();
                        Tensor { data, shape: r.shape.clone() }
                    })
                    .collect()
            } else {
                real.iter().chain(fake.iter()).cloned().collect()
            };
            let (e_hat, omega, grads) = batch_loss_grads(
                &critic, cfg.kind, &real, &fake, &constraint, lambda, cfg.rho, cfg.lambda_gp,
            )?;
            if !e_hat.is_finite() || e_hat.abs() > 1e6 {
                return Err(SobolevError::Training(format!(
                    "text critic diverged at iteration {iter}: e_hat={e_hat} \
                     omega={omega} lambda={lambda}"
                )));
            }
            let mut flat = critic.net.flatten();
            let ascent: Vec<f64> = grads.iter().map(|g| -g).collect();
            critic_opt.update(&mut flat, &ascent)?;
            critic.net.unflatten(&flat)?;
            if cfg.kind != ConstraintKind::WganGp {
                lambda = lambda_update(lambda, cfg.rho, omega);
            }
            last = (e_hat, omega);
        }
        let zs: Vec<Tensor> = (0..cfg.batch)
            .map(|_| {
                Tensor::new(
                    (0..cfg.noise_dim).map(|_| StandardNormal.sample(&mut rng)).collect(),
                    vec![cfg.noise_dim, 1],
                )
            })
            .collect::<Result<_>>()?;
        let ggrads = generator_grads(&critic, &generator, &zs)?;
        let mut gflat = generator.flatten();
        gen_opt.update(&mut gflat, &ggrads)?;
        generator.unflatten(&gflat)?;
        let js = if (iter + 1) % cfg.eval_every == 0 || iter + 1 == cfg.iters {
            let j = eval_js(&generator, &mut rng)?;
            final_js4 = j;
            Some(j)
        } else {
            None
        };
        if js.is_some() || iter % 10 == 0 {
            history.push(TextHistoryRow {
                iter,
                sigma,
                e_hat: last.0,
                omega: last.1,
                lambda,
                js4: js,
            });
        }
    }
    Ok(TextGanOutcome {
        generator,
        history,
        baseline_js4,
        final_js4,
        floor_js4,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn smooth_onehot_noise_free_row() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rows = smooth_onehot(&[2], 5, 0.0, &mut rng).unwrap();
        let want = [0.025, 0.025, 0.9, 0.025, 0.025];
        for (a, b) in rows[0].iter().zip(&want) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn smooth_onehot_rows_on_simplex() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for sigma in [0.0, 0.5, 1.5, 10.0] {
            let rows = smooth_onehot(&[0, 3, 7, 1], 8, sigma, &mut rng).unwrap();
            for r in &rows {
                assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                assert!(r.iter().all(|p| *p >= 0.0));
            }
        }
    }

    #[test]
    fn smooth_onehot_argmax_retention() {
        // At sigma = 1 the argmax usually survives; measure against a large
        // simulation and check the rate is strictly between chance and 1.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let v = 5;
        let n = 100_000;
        let mut kept = 0;
        for _ in 0..n {
            let rows = smooth_onehot(&[2], v, 1.0, &mut rng).unwrap();
            if rows[0]
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0
                == 2
            {
                kept += 1;
            }
        }
        let rate = kept as f64 / n as f64;
        assert!(rate > 0.5 && rate < 0.999, "retention {rate}");
    }

    #[test]
    fn anneal_schedule_endpoints() {
        let s = AnnealSchedule { sigma0: 1.5, max_iter: 300 };
        assert_eq!(s.sigma(0).unwrap(), 1.5);
        assert_eq!(s.sigma(300).unwrap(), 0.0);
        assert!((s.sigma(150).unwrap() - 0.75).abs() < 1e-15);
        assert!(s.sigma(301).is_err());
    }

    #[test]
    fn js4_identities() {
        let spec = MarkovSpec { v: 5, l: 8, n_sequences: 500, seed: 9 };
        let (corpus, _, _) = markov_corpus(&spec).unwrap();
        assert!(js4(&corpus, &corpus).unwrap() < 1e-15);
        // Disjoint supports: all-zeros vs all-ones sequences.
        let a = CharCorpus::new(2, 4, vec![vec![0; 4]; 10]).unwrap();
        let b = CharCorpus::new(2, 4, vec![vec![1; 4]; 10]).unwrap();
        assert!((js4(&a, &b).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn js4_same_chain_floor_matches_counting_oracle() {
        // Two independent samples of the same chain: split one large corpus.
        let big = MarkovSpec { v: 4, l: 8, n_sequences: 20_000, seed: 1 };
        let (big_c, _, _) = markov_corpus(&big).unwrap();
        let a2 = CharCorpus::new(4, 8, big_c.sequences[..10_000].to_vec()).unwrap();
        let b = CharCorpus::new(4, 8, big_c.sequences[10_000..].to_vec()).unwrap();
        let j = js4(&a2, &b).unwrap();
        assert!(j > 0.0 && j < 0.05, "floor {j}");
        // Counting oracle: recompute from explicit count maps.
        let count = |c: &CharCorpus| {
            let mut m = std::collections::HashMap::new();
            let mut tot = 0usize;
            for s in &c.sequences {
                for w in s.windows(4) {
                    *m.entry((w[0], w[1], w[2], w[3])).or_insert(0usize) += 1;
                    tot += 1;
                }
            }
            (m, tot)
        };
        let (ca, ta) = count(&a2);
        let (cb, tb) = count(&b);
        let keys: std::collections::HashSet<_> =
            ca.keys().chain(cb.keys()).cloned().collect();
        let mut want = 0.0;
        for k in keys {
            let p = *ca.get(&k).unwrap_or(&0) as f64 / ta as f64;
            let q = *cb.get(&k).unwrap_or(&0) as f64 / tb as f64;
            let m = 0.5 * (p + q);
            if p > 0.0 {
                want += 0.5 * p * (p / m).ln();
            }
            if q > 0.0 {
                want += 0.5 * q * (q / m).ln();
            }
        }
        assert!((j - want).abs() < 1e-12);
    }

    #[test]
    fn generator_rows_on_simplex_and_decode_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let generator = SeqGenerator::init(8, 5, 8, 12, &mut rng).unwrap();
        let tape = Tape::new();
        let params = generator.params(&tape);
        let z = tape.constant(Tensor::new(vec![0.1; 8], vec![8, 1]).unwrap());
        let x = tape.value(generator.forward(&tape, &params, z));
        assert_eq!(x.shape, vec![5, 8]);
        for t in 0..8 {
            let col: f64 = (0..5).map(|k| x.data[k * 8 + t]).sum();
            assert!((col - 1.0).abs() < 1e-12);
        }
        assert_eq!(decode_argmax(&x).len(), 8);
    }

    #[test]
    fn critic_batch_gradients_match_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let critic = SeqCritic::init(4, 6, Activation::Tanh, &mut rng).unwrap();
        let mk = |rng: &mut ChaCha8Rng| {
            let rows = smooth_onehot(&[0, 1, 2, 3, 1, 0], 4, 0.5, rng).unwrap();
            rows_to_channels(&rows)
        };
        let real: Vec<Tensor> = (0..3).map(|_| mk(&mut rng)).collect();
        let fake: Vec<Tensor> = (0..3).map(|_| mk(&mut rng)).collect();
        let cb: Vec<Tensor> = real.iter().chain(fake.iter()).cloned().collect();
        for kind in [ConstraintKind::Sobolev, ConstraintKind::Fisher] {
            let (_, _, grads) =
                batch_loss_grads(&critic, kind, &real, &fake, &cb, 0.2, 0.5, 10.0).unwrap();
            let flat = critic.net.flatten();
            let fd = crate::autodiff::numerical_grad(
                |p| {
                    let mut c = critic.clone();
                    c.net.unflatten(p).unwrap();
                    let loss = {
                        // Recompute the loss value through the same path.
                        batch_loss_grads(&c, kind, &real, &fake, &cb, 0.2, 0.5, 10.0)
                            .map(|(e, o, _)| match kind {
                                ConstraintKind::WganGp => e - 10.0 * o,
                                _ => {
                                    e - 0.2 * (o - 1.0) - 0.5 / 2.0 * (o - 1.0) * (o - 1.0)
                                }
                            })
                            .unwrap()
                    };
                    loss
                },
                &flat,
                1e-5,
            );
            for (a, b) in grads.iter().zip(&fd) {
                assert!(
                    (a - b).abs() <= 1e-4 * (1.0 + b.abs()),
                    "{kind:?}: {a} vs {b}"
                );
            }
        }
    }

    #[test]
    fn markov_corpus_is_deterministic() {
        let spec = MarkovSpec { v: 6, l: 10, n_sequences: 50, seed: 42 };
        let (a, ta, ia) = markov_corpus(&spec).unwrap();
        let (b, tb, ib) = markov_corpus(&spec).unwrap();
        assert_eq!(a.sequences, b.sequences);
        assert_eq!(ta, tb);
        assert_eq!(ia, ib);
        for row in &ta {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
