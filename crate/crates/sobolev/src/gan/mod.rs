//! Adversarial training with gradient- or value-norm sphere constraints.
//!
//! The critic maximizes the mean discrepancy E_hat between real and generated
//! batches subject to a unit constraint on an empirical norm Omega_hat: either
//! the gradient energy (Sobolev), the squared critic value (Fisher), or a
//! pointwise gradient penalty at interpolates (the WGAN-GP baseline). The two
//! sphere constraints are enforced with an augmented Lagrangian: the critic
//! ascends `L = E_hat + lambda (1 - Omega_hat) - (rho/2)(Omega_hat - 1)^2` and
//! the multiplier follows `lambda <- lambda - rho (1 - Omega_hat)`; the
//! baseline subtracts a fixed-weight penalty instead. The generator descends
//! the mean critic value of its samples. All updates use Adam.

pub mod adam;
pub mod checkpoint;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::nn::{Activation, Mlp};
use crate::autodiff::{Tape, Tensor, Var};
use crate::densities::Density;
use crate::error::{Result, SobolevError};
use adam::Adam;

/// Which empirical norm the critic constraint measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintKind {
    /// Mean squared gradient norm, targeted to the unit sphere via ALM.
    Sobolev,
    /// Mean squared critic value, targeted to the unit sphere via ALM.
    Fisher,
    /// Pointwise penalty mean((1 - ||grad f||)^2) at interpolates, fixed weight.
    WganGp,
}

/// Where the constraint batch is drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MuRule {
    /// Union of the real and generated batches, weighted half-half.
    Average,
    /// Uniform interpolates between paired real and generated points.
    GpInterpolation,
}

fn check_activation(kind: ConstraintKind, activation: Activation) -> Result<()> {
    if kind != ConstraintKind::Fisher && activation == Activation::Relu {
        return Err(SobolevError::Unsupported(
            "gradient-norm constraints differentiate the critic's input \
             gradient and need a twice-differentiable activation (tanh or \
             softplus); relu is only valid with the fisher constraint"
                .into(),
        ));
    }
    Ok(())
}

/// Pack samples (rows) into a [d, N] column-per-sample tensor.
pub fn batch_tensor(samples: &[Vec<f64>]) -> Tensor {
    let n = samples.len();
    let d = samples[0].len();
    let mut data = vec![0.0; d * n];
    for (j, s) in samples.iter().enumerate() {
        for i in 0..d {
            data[i * n + j] = s[i];
        }
    }
    Tensor { data, shape: vec![d, n] }
}

/// Standard-normal noise batch [dim, n].
pub fn noise_batch<R: Rng>(dim: usize, n: usize, rng: &mut R) -> Tensor {
    let data = (0..dim * n).map(|_| StandardNormal.sample(rng)).collect();
    Tensor { data, shape: vec![dim, n] }
}

/// Columns of `a` followed by columns of `b`.
pub fn hconcat(a: &Tensor, b: &Tensor) -> Tensor {
    let d = a.shape[0];
    assert_eq!(d, b.shape[0], "hconcat row mismatch");
    let (na, nb) = (a.shape[1], b.shape[1]);
    let mut data = vec![0.0; d * (na + nb)];
    for i in 0..d {
        data[i * (na + nb)..i * (na + nb) + na]
            .copy_from_slice(&a.data[i * na..(i + 1) * na]);
        data[i * (na + nb) + na..(i + 1) * (na + nb)]
            .copy_from_slice(&b.data[i * nb..(i + 1) * nb]);
    }
    Tensor { data, shape: vec![d, na + nb] }
}

/// Uniform interpolates x + u (y - x), one u per column pair.
pub fn interpolate_batch<R: Rng>(x: &Tensor, y: &Tensor, rng: &mut R) -> Tensor {
    assert_eq!(x.shape, y.shape, "interpolate shape mismatch");
    let (d, n) = (x.shape[0], x.shape[1]);
    let us: Vec<f64> = (0..n).map(|_| rng.random()).collect();
    let mut data = vec![0.0; d * n];
    for i in 0..d {
        for j in 0..n {
            let a = x.data[i * n + j];
            let b = y.data[i * n + j];
            data[i * n + j] = a + us[j] * (b - a);
        }
    }
    Tensor { data, shape: vec![d, n] }
}

/// Sample mean difference (1/N) sum f(x_i) - (1/N) sum f(g_i).
pub fn estimate_objective(critic: &Mlp, real: &Tensor, fake: &Tensor) -> Result<f64> {
    if real.shape[1] != fake.shape[1] {
        return Err(SobolevError::Dimension(
            "objective needs equal batch sizes".into(),
        ));
    }
    let tape = Tape::new();
    let params = critic.params(&tape);
    let fr = critic.forward(&tape, &params, tape.constant(real.clone()));
    let ff = critic.forward(&tape, &params, tape.constant(fake.clone()));
    Ok(tape.value(tape.sub(tape.mean(fr), tape.mean(ff))).item())
}

/// Per-sample squared gradient norms of the critic over a batch: [n].
fn grad_norm_sq(tape: &Tape, critic: &Mlp, params: &[Var], x: Var) -> Var {
    let f = critic.forward(tape, params, x);
    let gx = tape.backward(tape.sum(f), &[x])[0];
    tape.col_sum(tape.mul(gx, gx))
}

/// The empirical constraint over a pre-assembled batch: mean ||grad f||^2
/// (sobolev), mean f^2 (fisher), or mean (1 - ||grad f||)^2 (wgan_gp).
pub fn estimate_constraint(kind: ConstraintKind, critic: &Mlp, batch: &Tensor) -> Result<f64> {
    check_activation(kind, critic.activation)?;
    let tape = Tape::new();
    let params = critic.params(&tape);
    let n = batch.shape[1] as f64;
    let omega = match kind {
        ConstraintKind::Fisher => {
            let f = critic.forward(&tape, &params, tape.constant(batch.clone()));
            tape.scale(tape.sumsq(f), 1.0 / n)
        }
        ConstraintKind::Sobolev => {
            let x = tape.input(batch.clone());
            let nsq = grad_norm_sq(&tape, critic, &params, x);
            tape.scale(tape.sum(nsq), 1.0 / n)
        }
        ConstraintKind::WganGp => {
            let x = tape.input(batch.clone());
            let nsq = grad_norm_sq(&tape, critic, &params, x);
            let norm = tape.sqrt(tape.add_const(nsq, 1e-24));
            let gap = tape.add_const(tape.scale(norm, -1.0), 1.0);
            tape.scale(tape.sumsq(gap), 1.0 / n)
        }
    };
    Ok(tape.value(omega).item())
}

/// One critic evaluation: objective, constraint, loss, parameter gradients.
#[derive(Debug, Clone)]
pub struct CriticEval {
    pub e_hat: f64,
    pub omega: f64,
    pub loss: f64,
    /// d loss / d p, flattened in parameter order (ascent negates these).
    pub grads: Vec<f64>,
}

/// Build the critic loss on a tape and differentiate it in the parameters.
///
/// `constraint_batch` is the mu-rule batch: real+fake union for `Average`,
/// interpolates for `GpInterpolation` / the WGAN-GP baseline.
pub fn critic_loss_grads(
    critic: &Mlp,
    kind: ConstraintKind,
    real: &Tensor,
    fake: &Tensor,
    constraint_batch: &Tensor,
    lambda: f64,
    rho: f64,
    lambda_gp: f64,
) -> Result<CriticEval> {
    check_activation(kind, critic.activation)?;
    let tape = Tape::new();
    let params = critic.params(&tape);
    let fr = critic.forward(&tape, &params, tape.constant(real.clone()));
    let ff = critic.forward(&tape, &params, tape.constant(fake.clone()));
    let e_hat = tape.sub(tape.mean(fr), tape.mean(ff));
    let m = constraint_batch.shape[1] as f64;
    let loss = match kind {
        ConstraintKind::Fisher | ConstraintKind::Sobolev => {
            let omega = if kind == ConstraintKind::Fisher {
                let f = critic.forward(&tape, &params, tape.constant(constraint_batch.clone()));
                tape.scale(tape.sumsq(f), 1.0 / m)
            } else {
                let x = tape.input(constraint_batch.clone());
                tape.scale(tape.sum(grad_norm_sq(&tape, critic, &params, x)), 1.0 / m)
            };
            let gap = tape.add_const(omega, -1.0);
            let lin = tape.scale(gap, -lambda);
            let quad = tape.scale(tape.mul(gap, gap), -rho / 2.0);
            tape.add(e_hat, tape.add(lin, quad))
        }
        ConstraintKind::WganGp => {
            let x = tape.input(constraint_batch.clone());
            let nsq = grad_norm_sq(&tape, critic, &params, x);
            let norm = tape.sqrt(tape.add_const(nsq, 1e-24));
            let gap = tape.add_const(tape.scale(norm, -1.0), 1.0);
            let pen = tape.scale(tape.sumsq(gap), lambda_gp / m);
            tape.sub(e_hat, pen)
        }
    };
    let grads = tape.backward(loss, &params);
    let omega = estimate_constraint(kind, critic, constraint_batch)?;
    Ok(CriticEval {
        e_hat: tape.value(e_hat).item(),
        omega,
        loss: tape.value(loss).item(),
        grads: critic.flatten_grads(&tape, &grads),
    })
}

/// Multiplier step `lambda <- lambda - rho (1 - omega)`; a fixed point
/// requires the constraint to sit on the sphere.
pub fn lambda_update(lambda: f64, rho: f64, omega: f64) -> f64 {
    lambda - rho * (1.0 - omega)
}

/// Generator loss -mean f(g(z)) and its gradients in the generator
/// parameters (critic held fixed).
pub fn generator_loss_grads(
    critic: &Mlp,
    generator: &Mlp,
    z: &Tensor,
) -> Result<(f64, Vec<f64>)> {
    let tape = Tape::new();
    let gparams = generator.params(&tape);
    let x = generator.forward(&tape, &gparams, tape.constant(z.clone()));
    let cparams: Vec<Var> = critic
        .layers
        .iter()
        .flat_map(|(w, b)| [tape.constant(w.clone()), tape.constant(b.clone())])
        .collect();
    let f = critic.forward(&tape, &cparams, x);
    let loss = tape.scale(tape.mean(f), -1.0);
    let grads = tape.backward(loss, &gparams);
    Ok((
        tape.value(loss).item(),
        generator.flatten_grads(&tape, &grads),
    ))
}

/// Push a noise batch through the generator (values only).
pub fn generate(generator: &Mlp, z: &Tensor) -> Tensor {
    let tape = Tape::new();
    let params = generator.params(&tape);
    let x = generator.forward(&tape, &params, tape.constant(z.clone()));
    tape.value(x)
}

// ----- augmented Lagrangian on an explicit quadratic program -----

/// ALM iteration for the finite-basis critic: maximize c^T a subject to
/// a^T G a = 1. The closed-form optimum is a* = G^{-1} c / sqrt(c^T G^{-1} c).
#[derive(Debug, Clone)]
pub struct QuadraticAlm {
    pub c: Vec<f64>,
    /// Row-major m x m Gram matrix.
    pub gram: Vec<f64>,
    pub a: Vec<f64>,
    pub lambda: f64,
    pub rho: f64,
    opt: Adam,
}

impl QuadraticAlm {
    pub fn new(c: Vec<f64>, gram: Vec<f64>, eta: f64, rho: f64) -> Result<Self> {
        let m = c.len();
        if gram.len() != m * m {
            return Err(SobolevError::Dimension(format!(
                "Gram matrix must be {m}x{m}"
            )));
        }
        Ok(QuadraticAlm {
            a: vec![0.0; m],
            lambda: 0.0,
            rho,
            opt: Adam::new(m, eta),
            c,
            gram,
        })
    }

    /// Current constraint value a^T G a.
    pub fn omega(&self) -> f64 {
        let m = self.c.len();
        let mut acc = 0.0;
        for i in 0..m {
            for j in 0..m {
                acc += self.a[i] * self.gram[i * m + j] * self.a[j];
            }
        }
        acc
    }

    /// One ascent step on a and one multiplier step on lambda.
    pub fn step(&mut self) -> Result<f64> {
        let m = self.c.len();
        let omega = self.omega();
        let coeff = 2.0 * (self.lambda + self.rho * (omega - 1.0));
        let mut grad = vec![0.0; m];
        for i in 0..m {
            let ga: f64 = (0..m).map(|j| self.gram[i * m + j] * self.a[j]).sum();
            // Descent form of -(dL/da); Adam descends.
            grad[i] = -(self.c[i] - coeff * ga);
        }
        self.opt.update(&mut self.a, &grad)?;
        self.lambda = lambda_update(self.lambda, self.rho, omega);
        Ok(omega)
    }
}

// ----- toy trainer -----

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct GanConfig {
    pub seed: u64,
    pub iters: usize,
    pub n_critic: usize,
    pub batch: usize,
    pub eta: f64,
    pub rho: f64,
    pub lambda_gp: f64,
    pub kind: ConstraintKind,
    pub mu_rule: MuRule,
    pub noise_dim: usize,
    pub critic_widths: Vec<usize>,
    pub generator_widths: Vec<usize>,
    pub activation: Activation,
    /// Record one history row every this many iterations (and the last).
    pub log_every: usize,
}

impl Default for GanConfig {
    fn default() -> Self {
        GanConfig {
            seed: 0,
            iters: 20_000,
            n_critic: 5,
            batch: 256,
            eta: 1e-4,
            rho: 1e-5,
            lambda_gp: 10.0,
            kind: ConstraintKind::Sobolev,
            mu_rule: MuRule::Average,
            noise_dim: 8,
            critic_widths: vec![2, 32, 32, 1],
            generator_widths: vec![8, 32, 32, 2],
            activation: Activation::Tanh,
            log_every: 10,
        }
    }
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct GanHistoryRow {
    pub iter: usize,
    pub e_hat: f64,
    pub omega: f64,
    pub lambda: f64,
}

#[derive(Debug)]
pub struct GanOutcome {
    pub critic: Mlp,
    pub generator: Mlp,
    pub history: Vec<GanHistoryRow>,
    /// Mean of 4096 generated samples.
    pub sample_mean: Vec<f64>,
    /// Covariance of the same samples, row-major d x d.
    pub sample_cov: Vec<f64>,
}

/// Alternate `n_critic` constrained critic ascent steps with one generator
/// descent step against samples of `target`.
pub fn train_toy_gan(target: &Density, cfg: &GanConfig) -> Result<GanOutcome> {
    use rand::SeedableRng;
    if cfg.batch < 2 || cfg.n_critic == 0 {
        return Err(SobolevError::Config(
            "gan training needs batch >= 2 and n_critic >= 1".into(),
        ));
    }
    let d = target.dim();
    if cfg.critic_widths.first() != Some(&d) || cfg.critic_widths.last() != Some(&1) {
        return Err(SobolevError::Config(format!(
            "critic widths must run from {d} to 1, got {:?}",
            cfg.critic_widths
        )));
    }
    if cfg.generator_widths.first() != Some(&cfg.noise_dim)
        || cfg.generator_widths.last() != Some(&d)
    {
        return Err(SobolevError::Config(format!(
            "generator widths must run from {} to {d}, got {:?}",
            cfg.noise_dim, cfg.generator_widths
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut critic = Mlp::init(&cfg.critic_widths, cfg.activation, &mut rng)?;
    let mut generator = Mlp::init(&cfg.generator_widths, cfg.activation, &mut rng)?;
    let mut critic_opt = Adam::new(critic.n_params(), cfg.eta);
    let mut gen_opt = Adam::new(generator.n_params(), cfg.eta);
    let mut lambda = 0.0;
    let mut history = Vec::new();
    for iter in 0..cfg.iters {
        let mut last = None;
        for _ in 0..cfg.n_critic {
            let real = batch_tensor(&target.sample_n(cfg.batch, &mut rng));
            let fake = generate(&generator, &noise_batch(cfg.noise_dim, cfg.batch, &mut rng));
            let cb = match (cfg.kind, cfg.mu_rule) {
                (ConstraintKind::WganGp, _) | (_, MuRule::GpInterpolation) => {
                    interpolate_batch(&real, &fake, &mut rng)
                }
                (_, MuRule::Average) => hconcat(&real, &fake),
            };
            let eval = critic_loss_grads(
                &critic, cfg.kind, &real, &fake, &cb, lambda, cfg.rho, cfg.lambda_gp,
            )?;
            if !eval.e_hat.is_finite() || eval.e_hat.abs() > 1e6 {
                return Err(SobolevError::Training(format!(
                    "critic objective diverged at iteration {iter}: \
                     e_hat={} omega={} lambda={lambda}",
                    eval.e_hat, eval.omega
                )));
            }
            let mut flat = critic.flatten();
            let ascent: Vec<f64> = eval.grads.iter().map(|g| -g).collect();
            critic_opt.update(&mut flat, &ascent)?;
            critic.unflatten(&flat)?;
            if cfg.kind != ConstraintKind::WganGp {
                lambda = lambda_update(lambda, cfg.rho, eval.omega);
            }
            last = Some(eval);
        }
        let z = noise_batch(cfg.noise_dim, cfg.batch, &mut rng);
        let (_, ggrads) = generator_loss_grads(&critic, &generator, &z)?;
        let mut gflat = generator.flatten();
        gen_opt.update(&mut gflat, &ggrads)?;
        generator.unflatten(&gflat)?;
        if iter % cfg.log_every == 0 || iter + 1 == cfg.iters {
            let eval = last.expect("n_critic >= 1");
            history.push(GanHistoryRow {
                iter,
                e_hat: eval.e_hat,
                omega: eval.omega,
                lambda,
            });
        }
    }
    let samples = generate(&generator, &noise_batch(cfg.noise_dim, 4096, &mut rng));
    let (sample_mean, sample_cov) = mean_cov(&samples);
    Ok(GanOutcome {
        critic,
        generator,
        history,
        sample_mean,
        sample_cov,
    })
}

/// Column-sample mean and covariance of a [d, n] batch.
pub fn mean_cov(batch: &Tensor) -> (Vec<f64>, Vec<f64>) {
    let (d, n) = (batch.shape[0], batch.shape[1]);
    let mut mean = vec![0.0; d];
    for i in 0..d {
        mean[i] = batch.data[i * n..(i + 1) * n].iter().sum::<f64>() / n as f64;
    }
    let mut cov = vec![0.0; d * d];
    for j in 0..n {
        for a in 0..d {
            let da = batch.data[a * n + j] - mean[a];
            for b in 0..d {
                let db = batch.data[b * n + j] - mean[b];
                cov[a * d + b] += da * db;
            }
        }
    }
    for v in cov.iter_mut() {
        *v /= (n - 1) as f64;
    }
    (mean, cov)
}
