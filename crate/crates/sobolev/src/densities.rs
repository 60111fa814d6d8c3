//! Analytic densities (Gaussian 1-D/2-D, mixtures, categorical atoms,
//! empirical samples), their CDFs, score functions and samplers, plus the
//! dominant-measure constructors used throughout the library.

use crate::error::{Result, SobolevError};
use crate::quad::adaptive_simpson;
use rand::Rng;
use rand_distr::StandardNormal;
use statrs::function::erf::erf;

/// Absolute tolerance for the 1-D quadratures behind 2-D CDF evaluation.
const CDF_QUAD_TOL: f64 = 1e-9;

pub fn std_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

pub fn std_normal_cdf(z: f64) -> f64 {
    0.5 * (1.0 + erf(z / std::f64::consts::SQRT_2))
}

/// 2-D Gaussian with precomputed inverse, determinant and Cholesky factor.
#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian2d {
    pub mean: [f64; 2],
    pub cov: [[f64; 2]; 2],
    inv: [[f64; 2]; 2],
    det: f64,
    chol: [[f64; 2]; 2],
}

impl Gaussian2d {
    pub fn new(mean: [f64; 2], cov: [[f64; 2]; 2]) -> Result<Self> {
        if (cov[0][1] - cov[1][0]).abs() > 1e-12 {
            return Err(SobolevError::InvalidDensity(
                "covariance must be symmetric".into(),
            ));
        }
        let det = cov[0][0] * cov[1][1] - cov[0][1] * cov[1][0];
        if cov[0][0] <= 0.0 || det <= 0.0 {
            return Err(SobolevError::InvalidDensity(format!(
                "covariance not positive definite (c11={}, det={det})",
                cov[0][0]
            )));
        }
        let inv = [
            [cov[1][1] / det, -cov[0][1] / det],
            [-cov[1][0] / det, cov[0][0] / det],
        ];
        let l11 = cov[0][0].sqrt();
        let l21 = cov[1][0] / l11;
        let l22 = (cov[1][1] - l21 * l21).sqrt();
        Ok(Gaussian2d {
            mean,
            cov,
            inv,
            det,
            chol: [[l11, 0.0], [l21, l22]],
        })
    }

    pub fn pdf(&self, x: &[f64]) -> f64 {
        let d = [x[0] - self.mean[0], x[1] - self.mean[1]];
        let q = d[0] * (self.inv[0][0] * d[0] + self.inv[0][1] * d[1])
            + d[1] * (self.inv[1][0] * d[0] + self.inv[1][1] * d[1]);
        (-0.5 * q).exp() / (2.0 * std::f64::consts::PI * self.det.sqrt())
    }

    /// Conditional law of coordinate `i` given the other coordinate's value.
    /// Returns (mean, std).
    pub fn conditional(&self, i: usize, other_value: f64) -> (f64, f64) {
        let j = 1 - i;
        let slope = self.cov[i][j] / self.cov[j][j];
        let mean = self.mean[i] + slope * (other_value - self.mean[j]);
        let var = self.cov[i][i] - self.cov[i][j] * self.cov[i][j] / self.cov[j][j];
        (mean, var.sqrt())
    }
}

/// A probability distribution with pdf/cdf/score/sampling capabilities.
///
/// Categorical densities are atomic on the real line; empirical densities
/// expose sampling and the ECDF only.
#[derive(Debug, Clone)]
pub enum Density {
    Gaussian1d {
        mean: f64,
        std: f64,
    },
    Gaussian2d(Gaussian2d),
    Mixture {
        weights: Vec<f64>,
        components: Vec<Density>,
    },
    Categorical {
        atoms: Vec<f64>,
        probs: Vec<f64>,
    },
    Empirical {
        samples: Vec<Vec<f64>>,
    },
}

impl Density {
    pub fn gaussian1d(mean: f64, std: f64) -> Result<Self> {
        if !(std > 0.0) || !mean.is_finite() || !std.is_finite() {
            return Err(SobolevError::InvalidDensity(format!(
                "gaussian1d needs finite mean and std > 0 (mean={mean}, std={std})"
            )));
        }
        Ok(Density::Gaussian1d { mean, std })
    }

    pub fn gaussian2d(mean: [f64; 2], cov: [[f64; 2]; 2]) -> Result<Self> {
        Ok(Density::Gaussian2d(Gaussian2d::new(mean, cov)?))
    }

    pub fn mixture(weights: Vec<f64>, components: Vec<Density>) -> Result<Self> {
        if weights.len() != components.len() || components.is_empty() {
            return Err(SobolevError::InvalidDensity(
                "mixture weights/components length mismatch".into(),
            ));
        }
        let total: f64 = weights.iter().sum();
        if weights.iter().any(|w| *w < 0.0) || (total - 1.0).abs() > 1e-9 {
            return Err(SobolevError::InvalidDensity(format!(
                "mixture weights must lie on the simplex (sum={total})"
            )));
        }
        let dim = components[0].dim();
        if components.iter().any(|c| c.dim() != dim) {
            return Err(SobolevError::Dimension(
                "mixture components must share a dimension".into(),
            ));
        }
        Ok(Density::Mixture {
            weights,
            components,
        })
    }

    pub fn categorical(atoms: Vec<f64>, probs: Vec<f64>) -> Result<Self> {
        if atoms.len() != probs.len() || atoms.is_empty() {
            return Err(SobolevError::InvalidDensity(
                "categorical atoms/probs length mismatch".into(),
            ));
        }
        let total: f64 = probs.iter().sum();
        if probs.iter().any(|p| *p < 0.0) || (total - 1.0).abs() > 1e-9 {
            return Err(SobolevError::InvalidDensity(format!(
                "categorical probs must lie on the simplex (sum={total})"
            )));
        }
        Ok(Density::Categorical { atoms, probs })
    }

    pub fn empirical(samples: Vec<Vec<f64>>) -> Result<Self> {
        if samples.is_empty() || samples.iter().any(|s| s.len() != samples[0].len()) {
            return Err(SobolevError::InvalidDensity(
                "empirical density needs non-empty samples of equal dimension".into(),
            ));
        }
        Ok(Density::Empirical { samples })
    }

    /// Point mass at `a` (single-atom categorical).
    pub fn point_mass(a: f64) -> Self {
        Density::Categorical {
            atoms: vec![a],
            probs: vec![1.0],
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Density::Gaussian1d { .. } | Density::Categorical { .. } => 1,
            Density::Gaussian2d(_) => 2,
            Density::Mixture { components, .. } => components[0].dim(),
            Density::Empirical { samples } => samples[0].len(),
        }
    }

    pub fn pdf(&self, x: &[f64]) -> Result<f64> {
        match self {
            Density::Gaussian1d { mean, std } => {
                Ok(std_normal_pdf((x[0] - mean) / std) / std)
            }
            Density::Gaussian2d(g) => Ok(g.pdf(x)),
            Density::Mixture {
                weights,
                components,
            } => {
                let mut acc = 0.0;
                for (w, c) in weights.iter().zip(components) {
                    acc += w * c.pdf(x)?;
                }
                Ok(acc)
            }
            Density::Categorical { .. } => Err(SobolevError::Unsupported(
                "categorical density has no Lebesgue pdf".into(),
            )),
            Density::Empirical { .. } => Err(SobolevError::Unsupported(
                "empirical density exposes sampling and ECDF only".into(),
            )),
        }
    }

    /// Joint CDF. The 2-D Gaussian case integrates the marginal density of
    /// the first coordinate against the conditional CDF of the second.
    pub fn cdf(&self, x: &[f64]) -> Result<f64> {
        match self {
            Density::Gaussian1d { mean, std } => Ok(std_normal_cdf((x[0] - mean) / std)),
            Density::Gaussian2d(g) => {
                let s1 = g.cov[0][0].sqrt();
                let lo = g.mean[0] - 8.0 * s1;
                if x[0] <= lo {
                    return Ok(0.0);
                }
                let v = adaptive_simpson(
                    &|u| {
                        let (cm, cs) = g.conditional(1, u);
                        std_normal_pdf((u - g.mean[0]) / s1) / s1
                            * std_normal_cdf((x[1] - cm) / cs)
                    },
                    lo,
                    x[0],
                    CDF_QUAD_TOL,
                );
                Ok(v.clamp(0.0, 1.0))
            }
            Density::Mixture {
                weights,
                components,
            } => {
                let mut acc = 0.0;
                for (w, c) in weights.iter().zip(components) {
                    acc += w * c.cdf(x)?;
                }
                Ok(acc)
            }
            Density::Categorical { atoms, probs } => Ok(atoms
                .iter()
                .zip(probs)
                .filter(|(a, _)| **a <= x[0])
                .map(|(_, p)| p)
                .sum()),
            Density::Empirical { samples } => {
                if samples[0].len() != 1 {
                    return Err(SobolevError::Unsupported(
                        "ECDF is implemented for 1-D empirical densities".into(),
                    ));
                }
                let count = samples.iter().filter(|s| s[0] <= x[0]).count();
                Ok(count as f64 / samples.len() as f64)
            }
        }
    }

    /// Score function s(x) = grad log pdf(x).
    pub fn score(&self, x: &[f64]) -> Result<Vec<f64>> {
        match self {
            Density::Gaussian1d { mean, std } => Ok(vec![-(x[0] - mean) / (std * std)]),
            Density::Gaussian2d(g) => {
                let d = [x[0] - g.mean[0], x[1] - g.mean[1]];
                Ok(vec![
                    -(g.inv[0][0] * d[0] + g.inv[0][1] * d[1]),
                    -(g.inv[1][0] * d[0] + g.inv[1][1] * d[1]),
                ])
            }
            Density::Mixture {
                weights,
                components,
            } => {
                // grad log p = sum_k w_k p_k s_k / sum_k w_k p_k
                let p = self.pdf(x)?;
                if p <= 0.0 {
                    return Err(SobolevError::Numerical(
                        "score undefined where the mixture pdf vanishes".into(),
                    ));
                }
                let mut acc = vec![0.0; self.dim()];
                for (w, c) in weights.iter().zip(components) {
                    let pk = c.pdf(x)?;
                    let sk = c.score(x)?;
                    for (a, s) in acc.iter_mut().zip(sk) {
                        *a += w * pk * s;
                    }
                }
                for a in acc.iter_mut() {
                    *a /= p;
                }
                Ok(acc)
            }
            _ => Err(SobolevError::Unsupported(
                "score requires a smooth analytic density".into(),
            )),
        }
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        match self {
            Density::Gaussian1d { mean, std } => {
                let z: f64 = rng.sample(StandardNormal);
                vec![mean + std * z]
            }
            Density::Gaussian2d(g) => {
                let z0: f64 = rng.sample(StandardNormal);
                let z1: f64 = rng.sample(StandardNormal);
                vec![
                    g.mean[0] + g.chol[0][0] * z0,
                    g.mean[1] + g.chol[1][0] * z0 + g.chol[1][1] * z1,
                ]
            }
            Density::Mixture {
                weights,
                components,
            } => {
                let k = pick_weighted(weights, rng);
                components[k].sample(rng)
            }
            Density::Categorical { atoms, probs } => {
                vec![atoms[pick_weighted(probs, rng)]]
            }
            Density::Empirical { samples } => {
                samples[rng.random_range(0..samples.len())].clone()
            }
        }
    }

    pub fn sample_n<R: Rng>(&self, n: usize, rng: &mut R) -> Vec<Vec<f64>> {
        (0..n).map(|_| self.sample(rng)).collect()
    }

    /// Per-coordinate [mean - 6 sigma, mean + 6 sigma] box (componentwise
    /// union over mixtures; data range with a margin for atomic kinds).
    pub fn support_box(&self) -> (Vec<f64>, Vec<f64>) {
        match self {
            Density::Gaussian1d { mean, std } => {
                (vec![mean - 6.0 * std], vec![mean + 6.0 * std])
            }
            Density::Gaussian2d(g) => {
                let s = [g.cov[0][0].sqrt(), g.cov[1][1].sqrt()];
                (
                    vec![g.mean[0] - 6.0 * s[0], g.mean[1] - 6.0 * s[1]],
                    vec![g.mean[0] + 6.0 * s[0], g.mean[1] + 6.0 * s[1]],
                )
            }
            Density::Mixture { components, .. } => {
                let (mut lo, mut hi) = components[0].support_box();
                for c in &components[1..] {
                    let (l, h) = c.support_box();
                    for d in 0..lo.len() {
                        lo[d] = lo[d].min(l[d]);
                        hi[d] = hi[d].max(h[d]);
                    }
                }
                (lo, hi)
            }
            Density::Categorical { atoms, .. } => {
                let lo = atoms.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = atoms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                (vec![lo - 1.0], vec![hi + 1.0])
            }
            Density::Empirical { samples } => {
                let dim = samples[0].len();
                let mut lo = vec![f64::INFINITY; dim];
                let mut hi = vec![f64::NEG_INFINITY; dim];
                for s in samples {
                    for d in 0..dim {
                        lo[d] = lo[d].min(s[d]);
                        hi[d] = hi[d].max(s[d]);
                    }
                }
                for d in 0..dim {
                    let margin = 0.05 * (hi[d] - lo[d]).max(1.0);
                    lo[d] -= margin;
                    hi[d] += margin;
                }
                (lo, hi)
            }
        }
    }

    /// D^{-i}F: the (d-1)-order mixed partial of the CDF excluding
    /// coordinate `i`, computed as a 1-D quadrature of the joint pdf along
    /// coordinate `i` with the other coordinates fixed.
    pub fn dminus_cdf(&self, i: usize, x: &[f64]) -> Result<f64> {
        let dim = self.dim();
        if i >= dim {
            return Err(SobolevError::Dimension(format!(
                "coordinate index {i} out of range for dimension {dim}"
            )));
        }
        if dim == 1 {
            // d = 1 degenerate case: D^{-i} is the CDF itself.
            return self.cdf(x);
        }
        let (lo, _) = self.support_box();
        if x[i] <= lo[i] {
            return Ok(0.0);
        }
        // Probe the pdf once so unsupported kinds fail before integrating.
        self.pdf(x)?;
        let v = adaptive_simpson(
            &|u| {
                let mut p = x.to_vec();
                p[i] = u;
                self.pdf(&p).unwrap_or(0.0)
            },
            lo[i],
            x[i],
            CDF_QUAD_TOL,
        );
        Ok(v.max(0.0))
    }

    /// The same quantity in its analytic form: the marginal pdf of the
    /// leave-one-out coordinates times the conditional CDF of coordinate `i`.
    pub fn weighted_conditional_cdf(&self, i: usize, x: &[f64]) -> Result<f64> {
        let dim = self.dim();
        if i >= dim {
            return Err(SobolevError::Dimension(format!(
                "coordinate index {i} out of range for dimension {dim}"
            )));
        }
        match self {
            Density::Gaussian1d { .. } => self.cdf(x),
            Density::Gaussian2d(g) => {
                let j = 1 - i;
                let sj = g.cov[j][j].sqrt();
                let marginal = std_normal_pdf((x[j] - g.mean[j]) / sj) / sj;
                let (cm, cs) = g.conditional(i, x[j]);
                Ok(marginal * std_normal_cdf((x[i] - cm) / cs))
            }
            Density::Mixture {
                weights,
                components,
            } => {
                // D^{-i}F is linear in the measure, so the mixture form is
                // the weighted sum of component forms.
                let mut acc = 0.0;
                for (w, c) in weights.iter().zip(components) {
                    acc += w * c.weighted_conditional_cdf(i, x)?;
                }
                Ok(acc)
            }
            _ => Err(SobolevError::Unsupported(
                "weighted conditional CDF needs analytic marginals/conditionals".into(),
            )),
        }
    }
}

fn pick_weighted<R: Rng>(weights: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return k;
        }
    }
    weights.len() - 1
}

/// mu = (P + Q)/2 as an explicit two-component mixture.
pub fn mu_average(p: &Density, q: &Density) -> Result<Density> {
    Density::mixture(vec![0.5, 0.5], vec![p.clone(), q.clone()])
}

/// One draw from the interpolation-line measure: u x + (1 - u) y, u ~ U[0,1].
pub fn mu_gp_sample<R: Rng>(x: &[f64], y: &[f64], rng: &mut R) -> Vec<f64> {
    let u: f64 = rng.random();
    x.iter().zip(y).map(|(a, b)| u * a + (1.0 - u) * b).collect()
}

/// Gaussian smoothing of a real sample: x + xi, xi ~ N(0, sigma^2 I).
pub fn mu_smoothed<R: Rng>(x: &[f64], sigma: f64, rng: &mut R) -> Result<Vec<f64>> {
    if sigma < 0.0 {
        return Err(SobolevError::Config(format!(
            "smoothing noise level must be nonnegative, got {sigma}"
        )));
    }
    Ok(x.iter()
        .map(|v| {
            let z: f64 = rng.sample(StandardNormal);
            v + sigma * z
        })
        .collect())
}

/// Kernel-smoothed density of a particle cloud: an equal-weight mixture of
/// isotropic Gaussians with Silverman-style bandwidth h = sigma_hat * N^{-1/(d+4)}.
///
/// Kernel centers are shrunk toward the per-axis mean by
/// sqrt(1 - h^2 / sigma_d^2) so the smoothed density reproduces the cloud's
/// empirical mean and per-axis variance exactly. Without the correction the
/// bandwidth inflates the variance by h^2, which reads as a spurious
/// contraction field when the smoothed cloud is compared against a target it
/// already matches.
pub fn kernel_smoothed(points: &[Vec<f64>]) -> Result<Density> {
    if points.is_empty() {
        return Err(SobolevError::InvalidDensity(
            "kernel smoothing needs at least one point".into(),
        ));
    }
    let n = points.len();
    let dim = points[0].len();
    let mut mean = vec![0.0; dim];
    let mut sd = vec![0.0; dim];
    for d in 0..dim {
        mean[d] = points.iter().map(|p| p[d]).sum::<f64>() / n as f64;
        let var =
            points.iter().map(|p| (p[d] - mean[d]).powi(2)).sum::<f64>() / n as f64;
        sd[d] = var.sqrt();
    }
    let sigma_hat = sd.iter().sum::<f64>() / dim as f64;
    let h = (sigma_hat.max(1e-3)) * (n as f64).powf(-1.0 / (dim as f64 + 4.0));
    let shrink: Vec<f64> = sd
        .iter()
        .map(|s| {
            let ratio = 1.0 - h * h / (s * s).max(f64::MIN_POSITIVE);
            ratio.max(0.0).sqrt()
        })
        .collect();
    let w = 1.0 / n as f64;
    // Renormalize exactly so the mixture constructor's simplex check passes.
    let mut weights = vec![w; n];
    let total: f64 = weights.iter().sum();
    for wk in weights.iter_mut() {
        *wk /= total;
    }
    let components = points
        .iter()
        .map(|p| {
            let c: Vec<f64> = (0..dim)
                .map(|d| mean[d] + shrink[d] * (p[d] - mean[d]))
                .collect();
            match dim {
                1 => Density::gaussian1d(c[0], h),
                2 => Density::gaussian2d([c[0], c[1]], [[h * h, 0.0], [0.0, h * h]]),
                _ => Err(SobolevError::Dimension(
                    "kernel smoothing supports d in {1, 2}".into(),
                )),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Density::mixture(weights, components)
}
