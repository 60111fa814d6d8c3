//! Closed-form and quadrature evaluation of the Fisher and Sobolev IPMs,
//! 1-D Cramer / Wasserstein oracles, and the restricted
//! feature-basis program.

use crate::densities::Density;
use crate::error::{Result, SobolevError};
use crate::grid::{Grid, ScalarField, VectorField};
use crate::quad::adaptive_simpson;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum IpmMethod {
    FisherClosed,
    SobolevCdf,
    SobolevConditional,
    Restricted,
    Cramer1d,
    Wasserstein1d,
}

/// A distance value together with how it was computed.
#[derive(Debug, Clone, serde::Serialize)]
pub struct IpmResult {
    pub value: f64,
    pub method: IpmMethod,
    /// Nodes per axis of the quadrature grid (0 for exact atomic formulas).
    pub resolution: usize,
    /// Richardson half-resolution error estimate (0 for exact formulas).
    pub est_error: f64,
}

/// Grid over the union of the densities' 6-sigma support boxes.
pub fn joint_support_grid(densities: &[&Density], n: usize) -> Result<Grid> {
    let dim = densities
        .first()
        .ok_or_else(|| SobolevError::Dimension("need at least one density".into()))?
        .dim();
    let mut lo = vec![f64::INFINITY; dim];
    let mut hi = vec![f64::NEG_INFINITY; dim];
    for d in densities {
        if d.dim() != dim {
            return Err(SobolevError::Dimension(
                "densities must share a dimension".into(),
            ));
        }
        let (l, h) = d.support_box();
        for k in 0..dim {
            lo[k] = lo[k].min(l[k]);
            hi[k] = hi[k].max(h[k]);
        }
    }
    Grid::from_box(&lo, &hi, &vec![n; dim])
}

/// Fisher IPM sqrt(E_mu ((P - Q)/mu)^2) by trapezoid quadrature.
pub fn fisher_ipm(p: &Density, q: &Density, mu: &Density, n: usize) -> Result<IpmResult> {
    let value = fisher_at(p, q, mu, n)?;
    let coarse = fisher_at(p, q, mu, n / 2)?;
    Ok(IpmResult {
        value,
        method: IpmMethod::FisherClosed,
        resolution: n,
        est_error: (value - coarse).abs() / 3.0,
    })
}

fn fisher_at(p: &Density, q: &Density, mu: &Density, n: usize) -> Result<f64> {
    let grid = joint_support_grid(&[p, q], n)?;
    let mut acc = 0.0;
    for k in 0..grid.len() {
        let x = grid.node(k);
        let m = mu.pdf(&x)?;
        if m <= 0.0 {
            continue;
        }
        let d = p.pdf(&x)? - q.pdf(&x)?;
        acc += grid.trapezoid_weight(k) * d * d / m;
    }
    Ok(acc.max(0.0).sqrt())
}

/// Discrete Fisher distance squared root: sqrt(sum (p_i - q_i)^2 / mu_i).
/// Pass `mu` as all-ones for the counting-uniform measure.
pub fn fisher_ipm_discrete(p: &[f64], q: &[f64], mu: &[f64]) -> Result<IpmResult> {
    if p.len() != q.len() || p.len() != mu.len() || p.is_empty() {
        return Err(SobolevError::Dimension(
            "discrete Fisher needs equal-length p, q, mu".into(),
        ));
    }
    if mu.iter().any(|m| *m <= 0.0) {
        return Err(SobolevError::Numerical(
            "discrete Fisher weights must be positive".into(),
        ));
    }
    let v: f64 = p
        .iter()
        .zip(q)
        .zip(mu)
        .map(|((pi, qi), mi)| (pi - qi) * (pi - qi) / mi)
        .sum();
    Ok(IpmResult {
        value: v.sqrt(),
        method: IpmMethod::FisherClosed,
        resolution: 0,
        est_error: 0.0,
    })
}

fn is_atomic_1d(d: &Density) -> bool {
    matches!(d, Density::Categorical { .. })
        || matches!(d, Density::Empirical { samples } if samples[0].len() == 1)
}

fn breakpoints_1d(d: &Density) -> Vec<f64> {
    match d {
        Density::Categorical { atoms, .. } => atoms.clone(),
        Density::Empirical { samples } => samples.iter().map(|s| s[0]).collect(),
        _ => Vec::new(),
    }
}

/// int (F_P - F_Q)^2 dx. Exact for atomic distributions; high-resolution
/// trapezoid otherwise. Note this is S^2 for the unit-weight measure.
pub fn cramer_1d(p: &Density, q: &Density) -> Result<IpmResult> {
    cdf_gap_integral(p, q, 2, IpmMethod::Cramer1d)
}

/// W1 as int |F_P - F_Q| dx (the inverse-CDF form in disguise).
pub fn wasserstein1_1d(p: &Density, q: &Density) -> Result<IpmResult> {
    cdf_gap_integral(p, q, 1, IpmMethod::Wasserstein1d)
}

fn cdf_gap_integral(
    p: &Density,
    q: &Density,
    power: u32,
    method: IpmMethod,
) -> Result<IpmResult> {
    if p.dim() != 1 || q.dim() != 1 {
        return Err(SobolevError::Dimension(format!(
            "{method:?} is a 1-D distance"
        )));
    }
    if is_atomic_1d(p) && is_atomic_1d(q) {
        // CDF difference is piecewise constant between merged breakpoints.
        let mut b: Vec<f64> = breakpoints_1d(p)
            .into_iter()
            .chain(breakpoints_1d(q))
            .collect();
        b.sort_by(|a, c| a.partial_cmp(c).unwrap());
        b.dedup();
        let mut acc = 0.0;
        for w in b.windows(2) {
            let gap = p.cdf(&[w[0]])? - q.cdf(&[w[0]])?;
            acc += gap.abs().powi(power as i32) * (w[1] - w[0]);
        }
        return Ok(IpmResult {
            value: acc,
            method,
            resolution: 0,
            est_error: 0.0,
        });
    }
    let n = 1 << 17;
    let value = cdf_gap_trapezoid(p, q, power, n)?;
    let coarse = cdf_gap_trapezoid(p, q, power, n / 2)?;
    Ok(IpmResult {
        value,
        method,
        resolution: n,
        est_error: (value - coarse).abs() / 3.0,
    })
}

fn cdf_gap_trapezoid(p: &Density, q: &Density, power: u32, n: usize) -> Result<f64> {
    let grid = joint_support_grid(&[p, q], n)?;
    let mut acc = 0.0;
    for k in 0..grid.len() {
        let x = grid.node(k);
        let gap = (p.cdf(&x)? - q.cdf(&x)?).abs().powi(power as i32);
        acc += grid.trapezoid_weight(k) * gap;
    }
    Ok(acc)
}

/// D^{-i}F sampled on every grid node by accumulating per-interval adaptive
/// quadratures of the joint pdf along axis `i`.
pub fn dminus_grid(d: &Density, i: usize, grid: &Grid) -> Result<ScalarField> {
    let dim = grid.dim();
    if i >= dim {
        return Err(SobolevError::Dimension(format!(
            "coordinate index {i} out of range for dimension {dim}"
        )));
    }
    let mut out = ScalarField::zeros(grid);
    if dim == 1 {
        for k in 0..grid.len() {
            out.values[k] = d.cdf(&grid.node(k))?;
        }
        return Ok(out);
    }
    // Probe once so unsupported kinds error out before the sweep.
    d.pdf(&grid.node(0))?;
    let j = 1 - i;
    let axis_i = grid.axes[i].clone();
    for (row, &xj) in grid.axes[j].iter().enumerate() {
        let mut acc = 0.0;
        for (col, w) in axis_i.windows(2).enumerate() {
            let f = |u: f64| {
                let mut x = [0.0; 2];
                x[i] = u;
                x[j] = xj;
                d.pdf(&x).unwrap_or(0.0)
            };
            let mut ij = [0usize; 2];
            ij[i] = col;
            ij[j] = row;
            out.values[grid.index(&ij)] = acc;
            acc += adaptive_simpson(&f, w[0], w[1], 1e-11);
        }
        let mut ij = [0usize; 2];
        ij[i] = axis_i.len() - 1;
        ij[j] = row;
        out.values[grid.index(&ij)] = acc;
    }
    Ok(out)
}

/// Sobolev IPM via the high-order CDF-derivative comparison:
/// (1/d) sqrt(int sum_i (D^{-i}F_P - D^{-i}F_Q)^2 / mu dx).
pub fn sobolev_ipm_cdf_form(
    p: &Density,
    q: &Density,
    mu: &Density,
    n: usize,
) -> Result<IpmResult> {
    let value = sobolev_cdf_at(p, q, mu, n)?;
    let coarse = sobolev_cdf_at(p, q, mu, n / 2)?;
    Ok(IpmResult {
        value,
        method: IpmMethod::SobolevCdf,
        resolution: n,
        est_error: (value - coarse).abs() / 3.0,
    })
}

fn sobolev_cdf_at(p: &Density, q: &Density, mu: &Density, n: usize) -> Result<f64> {
    let grid = joint_support_grid(&[p, q], n)?;
    let dim = grid.dim();
    let mut acc = 0.0;
    for i in 0..dim {
        let dp = dminus_grid(p, i, &grid)?;
        let dq = dminus_grid(q, i, &grid)?;
        for k in 0..grid.len() {
            let m = mu.pdf(&grid.node(k))?;
            if m <= 0.0 {
                continue;
            }
            let gap = dp.values[k] - dq.values[k];
            acc += grid.trapezoid_weight(k) * gap * gap / m;
        }
    }
    Ok(acc.max(0.0).sqrt() / dim as f64)
}

/// Sobolev IPM via weighted (coordinate-wise) conditional CDFs:
/// (1/d) sqrt(E_mu sum_i ((P_{X^-i} F_P[.|.] - Q_{X^-i} F_Q[.|.]) / mu)^2).
pub fn sobolev_ipm_conditional_form(
    p: &Density,
    q: &Density,
    mu: &Density,
    n: usize,
) -> Result<IpmResult> {
    let value = sobolev_cond_at(p, q, mu, n)?;
    let coarse = sobolev_cond_at(p, q, mu, n / 2)?;
    Ok(IpmResult {
        value,
        method: IpmMethod::SobolevConditional,
        resolution: n,
        est_error: (value - coarse).abs() / 3.0,
    })
}

fn sobolev_cond_at(p: &Density, q: &Density, mu: &Density, n: usize) -> Result<f64> {
    let grid = joint_support_grid(&[p, q], n)?;
    let dim = grid.dim();
    let mut acc = 0.0;
    for k in 0..grid.len() {
        let x = grid.node(k);
        let m = mu.pdf(&x)?;
        if m <= 0.0 {
            continue;
        }
        for i in 0..dim {
            let gap = p.weighted_conditional_cdf(i, &x)?
                - q.weighted_conditional_cdf(i, &x)?;
            // E_mu ((gap/mu)^2) = int gap^2 / mu dx.
            acc += grid.trapezoid_weight(k) * gap * gap / m;
        }
    }
    Ok(acc.max(0.0).sqrt() / dim as f64)
}

/// Normalized optimal-critic gradient field
/// grad f* = (D^- F_Q - D^- F_P) / (d S mu) and the distance S it uses.
pub fn optimal_critic_gradient_field(
    p: &Density,
    q: &Density,
    mu: &Density,
    grid: &Grid,
) -> Result<(VectorField, f64)> {
    let dim = grid.dim();
    let mut field = VectorField::zeros(grid);
    let mut energy = 0.0;
    let mut raw = Vec::new();
    for i in 0..dim {
        let dp = dminus_grid(p, i, grid)?;
        let dq = dminus_grid(q, i, grid)?;
        raw.push((dp, dq));
    }
    let mu_vals: Vec<f64> = (0..grid.len())
        .map(|k| mu.pdf(&grid.node(k)))
        .collect::<Result<_>>()?;
    for k in 0..grid.len() {
        if mu_vals[k] <= 0.0 {
            continue;
        }
        let mut nsq = 0.0;
        for i in 0..dim {
            let g = (raw[i].1.values[k] - raw[i].0.values[k]) / mu_vals[k];
            field.comps[i][k] = g;
            nsq += g * g;
        }
        energy += grid.trapezoid_weight(k) * mu_vals[k] * nsq;
    }
    // energy = (d S)^2 for the unnormalized ratio field.
    let s = energy.max(0.0).sqrt() / dim as f64;
    if s > 0.0 {
        let scale = 1.0 / (dim as f64 * s);
        for comp in field.comps.iter_mut() {
            for v in comp.iter_mut() {
                *v *= scale;
            }
        }
    } else {
        for comp in field.comps.iter_mut() {
            for v in comp.iter_mut() {
                *v = 0.0;
            }
        }
    }
    Ok((field, s))
}

/// A differentiable basis function vanishing on the boundary of its box.
pub trait Feature {
    fn eval(&self, x: &[f64]) -> f64;
    fn grad(&self, x: &[f64]) -> Vec<f64>;
}

/// Product-of-sines mode on a box; vanishes on the box boundary.
#[derive(Debug, Clone)]
pub struct SineFeature {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub modes: Vec<usize>,
}

impl Feature for SineFeature {
    fn eval(&self, x: &[f64]) -> f64 {
        let mut v = 1.0;
        for d in 0..x.len() {
            let len = self.hi[d] - self.lo[d];
            let t = (x[d] - self.lo[d]) / len;
            v *= (self.modes[d] as f64 * std::f64::consts::PI * t).sin();
        }
        v
    }

    fn grad(&self, x: &[f64]) -> Vec<f64> {
        let dim = x.len();
        let mut out = vec![0.0; dim];
        for g in 0..dim {
            let mut v = 1.0;
            for d in 0..dim {
                let len = self.hi[d] - self.lo[d];
                let omega = self.modes[d] as f64 * std::f64::consts::PI / len;
                let phase = omega * (x[d] - self.lo[d]);
                v *= if d == g {
                    omega * phase.cos()
                } else {
                    phase.sin()
                };
            }
            out[g] = v;
        }
        out
    }
}

/// Tensor-product sine basis with `k_per_axis` modes per axis.
pub fn sine_basis(lo: &[f64], hi: &[f64], k_per_axis: usize) -> Vec<SineFeature> {
    let dim = lo.len();
    let total = k_per_axis.pow(dim as u32);
    let mut out = Vec::with_capacity(total);
    for flat in 0..total {
        let mut modes = Vec::with_capacity(dim);
        let mut rem = flat;
        for _ in 0..dim {
            modes.push(rem % k_per_axis + 1);
            rem /= k_per_axis;
        }
        out.push(SineFeature {
            lo: lo.to_vec(),
            hi: hi.to_vec(),
            modes,
        });
    }
    out
}

/// A feature backed by closures (used to feed e.g. a known optimal critic).
pub struct FnFeature<E, G> {
    pub eval_fn: E,
    pub grad_fn: G,
}

impl<E: Fn(&[f64]) -> f64, G: Fn(&[f64]) -> Vec<f64>> Feature for FnFeature<E, G> {
    fn eval(&self, x: &[f64]) -> f64 {
        (self.eval_fn)(x)
    }
    fn grad(&self, x: &[f64]) -> Vec<f64> {
        (self.grad_fn)(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RestrictedNorm {
    Fisher,
    Sobolev,
}

/// Lemma-style restricted IPM over span{phi_j}: maximize c^T a subject to
/// a^T G a <= 1. Returns sqrt(c^T G^{-1} c) and the optimal coefficients.
pub fn restricted_ipm(
    features: &[&dyn Feature],
    p: &Density,
    q: &Density,
    mu: &Density,
    norm: RestrictedNorm,
    n: usize,
) -> Result<(IpmResult, Vec<f64>)> {
    if features.is_empty() {
        return Err(SobolevError::Dimension("need at least one feature".into()));
    }
    let grid = joint_support_grid(&[p, q], n)?;
    let m = features.len();
    let mut gram = vec![0.0; m * m];
    let mut c = vec![0.0; m];
    for k in 0..grid.len() {
        let x = grid.node(k);
        let w = grid.trapezoid_weight(k);
        let mv = mu.pdf(&x)?;
        let diff = p.pdf(&x)? - q.pdf(&x)?;
        let evals: Vec<f64> = features.iter().map(|f| f.eval(&x)).collect();
        let grads: Vec<Vec<f64>> = match norm {
            RestrictedNorm::Fisher => Vec::new(),
            RestrictedNorm::Sobolev => features.iter().map(|f| f.grad(&x)).collect(),
        };
        for j in 0..m {
            c[j] += w * evals[j] * diff;
            for l in j..m {
                let inner = match norm {
                    RestrictedNorm::Fisher => evals[j] * evals[l],
                    RestrictedNorm::Sobolev => grads[j]
                        .iter()
                        .zip(&grads[l])
                        .map(|(a, b)| a * b)
                        .sum(),
                };
                gram[j * m + l] += w * mv * inner;
            }
        }
    }
    for j in 0..m {
        for l in 0..j {
            gram[j * m + l] = gram[l * m + j];
        }
    }
    let chol = cholesky(&gram, m).map_err(|pivot| {
        SobolevError::Numerical(format!(
            "Gram matrix not positive definite (pivot {pivot} non-positive); \
             features are linearly dependent at this resolution"
        ))
    })?;
    let ginv_c = chol_solve(&chol, m, &c);
    let vsq: f64 = c.iter().zip(&ginv_c).map(|(a, b)| a * b).sum();
    let value = vsq.max(0.0).sqrt();
    let coeffs = if value > 0.0 {
        ginv_c.iter().map(|v| v / value).collect()
    } else {
        vec![0.0; m]
    };
    Ok((
        IpmResult {
            value,
            method: IpmMethod::Restricted,
            resolution: n,
            est_error: 0.0,
        },
        coeffs,
    ))
}

/// Dense Cholesky; returns Err(row) on a (relatively) non-positive pivot.
fn cholesky(a: &[f64], n: usize) -> std::result::Result<Vec<f64>, usize> {
    let scale = (0..n)
        .map(|i| a[i * n + i].abs())
        .fold(0.0_f64, f64::max)
        .max(f64::MIN_POSITIVE);
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[i * n + j];
            for k in 0..j {
                sum -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if sum <= 1e-12 * scale {
                    return Err(i);
                }
                l[i * n + i] = sum.sqrt();
            } else {
                l[i * n + j] = sum / l[j * n + j];
            }
        }
    }
    Ok(l)
}

fn chol_solve(l: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut sum = b[i];
        for k in 0..i {
            sum -= l[i * n + k] * y[k];
        }
        y[i] = sum / l[i * n + i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut sum = y[i];
        for k in i + 1..n {
            sum -= l[k * n + i] * x[k];
        }
        x[i] = sum / l[i * n + i];
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::densities::mu_average;

    #[test]
    fn fisher_zero_for_identical() {
        let p = Density::gaussian1d(0.0, 1.0).unwrap();
        let mu = mu_average(&p, &p).unwrap();
        let r = fisher_ipm(&p, &p, &mu, 512).unwrap();
        assert!(r.value < 1e-12);
    }

    #[test]
    fn two_atom_fisher_counting_uniform_is_sqrt_two() {
        // P = delta_{a1}, Q = delta_{a2} on the union atom set.
        let r = fisher_ipm_discrete(&[1.0, 0.0], &[0.0, 1.0], &[1.0, 1.0]).unwrap();
        assert!((r.value * r.value - 2.0).abs() < 1e-12);
    }

    #[test]
    fn pearson_case_hand_value() {
        // mu = P: F^2 = sum (p - q)^2 / p = 0.25.
        let r =
            fisher_ipm_discrete(&[0.5, 0.5], &[0.25, 0.75], &[0.5, 0.5]).unwrap();
        assert!((r.value * r.value - 0.25).abs() < 1e-12);
    }

    #[test]
    fn point_mass_cramer_and_wasserstein() {
        let p = Density::point_mass(0.0);
        let q = Density::point_mass(3.0);
        let c = cramer_1d(&p, &q).unwrap();
        let w = wasserstein1_1d(&p, &q).unwrap();
        assert!((c.value - 3.0).abs() < 1e-12);
        assert!((w.value - 3.0).abs() < 1e-12);
    }

    #[test]
    fn cramer_zero_for_identical_gaussian() {
        let p = Density::gaussian1d(0.3, 1.1).unwrap();
        assert!(cramer_1d(&p, &p).unwrap().value < 1e-12);
        assert!(wasserstein1_1d(&p, &p).unwrap().value < 1e-12);
    }

    #[test]
    fn shifted_gaussians_match_high_resolution_oracle() {
        let p = Density::gaussian1d(0.0, 1.0).unwrap();
        let q = Density::gaussian1d(1.0, 1.0).unwrap();
        let c = cramer_1d(&p, &q).unwrap();
        let w = wasserstein1_1d(&p, &q).unwrap();
        // Oracle: direct 10^6-point trapezoid of the CDF gap.
        let oracle = |power: u32| {
            let n = 1_000_001usize;
            let (lo, hi) = (-7.0f64, 8.0f64);
            let h = (hi - lo) / (n - 1) as f64;
            let mut acc = 0.0;
            for k in 0..n {
                let x = [lo + h * k as f64];
                let gap = (p.cdf(&x).unwrap() - q.cdf(&x).unwrap())
                    .abs()
                    .powi(power as i32);
                let w = if k == 0 || k == n - 1 { 0.5 } else { 1.0 };
                acc += w * h * gap;
            }
            acc
        };
        assert!((c.value - oracle(2)).abs() < 1e-6);
        assert!((w.value - oracle(1)).abs() < 1e-6);
        // W1 between unit-variance Gaussians is the mean shift.
        assert!((w.value - 1.0).abs() < 1e-6);
    }

    #[test]
    fn sobolev_cdf_form_zero_for_identical() {
        let p = Density::gaussian1d(0.0, 1.0).unwrap();
        let mu = mu_average(&p, &p).unwrap();
        assert!(sobolev_ipm_cdf_form(&p, &p, &mu, 256).unwrap().value < 1e-12);
        assert!(
            sobolev_ipm_conditional_form(&p, &p, &mu, 128)
                .unwrap()
                .value
                < 1e-12
        );
    }

    #[test]
    fn independent_product_forms_agree() {
        let p = Density::gaussian2d([0.0, 0.0], [[1.0, 0.0], [0.0, 1.0]]).unwrap();
        let q = Density::gaussian2d([0.6, -0.4], [[1.2, 0.0], [0.0, 0.8]]).unwrap();
        let mu = mu_average(&p, &q).unwrap();
        let a = sobolev_ipm_cdf_form(&p, &q, &mu, 128).unwrap();
        let b = sobolev_ipm_conditional_form(&p, &q, &mu, 128).unwrap();
        assert!(
            (a.value - b.value).abs() / b.value < 1e-3,
            "cdf={} cond={}",
            a.value,
            b.value
        );
    }

    #[test]
    fn symmetry_under_average_measure() {
        let p = Density::gaussian2d([0.5, 0.0], [[1.5, 0.3], [0.3, 0.9]]).unwrap();
        let q = Density::gaussian2d([-0.5, 0.5], [[1.0, -0.2], [-0.2, 1.4]]).unwrap();
        let mu = mu_average(&p, &q).unwrap();
        let pq = sobolev_ipm_conditional_form(&p, &q, &mu, 96).unwrap().value;
        let qp = sobolev_ipm_conditional_form(&q, &p, &mu, 96).unwrap().value;
        assert!((pq - qp).abs() < 1e-12);
        let fpq = fisher_ipm(&p, &q, &mu, 96).unwrap().value;
        let fqp = fisher_ipm(&q, &p, &mu, 96).unwrap().value;
        assert!((fpq - fqp).abs() < 1e-12);
    }

    #[test]
    fn gradient_field_1d_pointwise_formula() {
        let p = Density::gaussian1d(-1.0, 1.0).unwrap();
        let q = Density::gaussian1d(1.0, 1.0).unwrap();
        let mu = mu_average(&p, &q).unwrap();
        let grid = joint_support_grid(&[&p, &q], 1024).unwrap();
        let (field, s) = optimal_critic_gradient_field(&p, &q, &mu, &grid).unwrap();
        assert!(s > 0.0);
        for k in (0..grid.len()).step_by(97) {
            let x = grid.node(k);
            let want = (q.cdf(&x).unwrap() - p.cdf(&x).unwrap())
                / (mu.pdf(&x).unwrap() * s);
            assert!(
                (field.comps[0][k] - want).abs() < 1e-5 * (1.0 + want.abs()),
                "x={x:?}"
            );
        }
    }

    #[test]
    fn gradient_field_unit_norm() {
        let p = Density::gaussian2d([1.0, 0.0], [[1.9, 0.8], [0.8, 1.3]]).unwrap();
        let q = Density::gaussian2d([1.0, -2.0], [[1.9, -0.8], [-0.8, 1.3]]).unwrap();
        let mu = mu_average(&p, &q).unwrap();
        let grid = joint_support_grid(&[&p, &q], 128).unwrap();
        let (field, s) = optimal_critic_gradient_field(&p, &q, &mu, &grid).unwrap();
        assert!(s > 0.0);
        let nsq = field.norm_sq_field();
        let mut energy = 0.0;
        for k in 0..grid.len() {
            energy +=
                grid.trapezoid_weight(k) * mu.pdf(&grid.node(k)).unwrap() * nsq.values[k];
        }
        assert!((energy - 1.0).abs() < 1e-2, "energy {energy}");
    }

    #[test]
    fn restricted_zero_when_expectations_match() {
        let p = Density::gaussian1d(0.0, 1.0).unwrap();
        let mu = mu_average(&p, &p).unwrap();
        let (lo, hi) = p.support_box();
        let basis = sine_basis(&lo, &hi, 4);
        let feats: Vec<&dyn Feature> = basis.iter().map(|f| f as &dyn Feature).collect();
        let (r, a) =
            restricted_ipm(&feats, &p, &p, &mu, RestrictedNorm::Sobolev, 512).unwrap();
        assert!(r.value < 1e-10);
        assert!(a.iter().all(|v| v.abs() < 1e-10));
    }

    #[test]
    fn restricted_monotone_in_feature_count_and_below_full() {
        let p = Density::gaussian1d(-1.0, 1.0).unwrap();
        let q = Density::gaussian1d(1.0, 1.2).unwrap();
        let mu = mu_average(&p, &q).unwrap();
        let grid = joint_support_grid(&[&p, &q], 2048).unwrap();
        let lo = vec![grid.axes[0][0]];
        let hi = vec![*grid.axes[0].last().unwrap()];
        let full = sobolev_ipm_cdf_form(&p, &q, &mu, 2048).unwrap().value;
        let mut prev = 0.0;
        for k in [4usize, 8, 16] {
            let basis = sine_basis(&lo, &hi, k);
            let feats: Vec<&dyn Feature> =
                basis.iter().map(|f| f as &dyn Feature).collect();
            let (r, _) =
                restricted_ipm(&feats, &p, &q, &mu, RestrictedNorm::Sobolev, 2048)
                    .unwrap();
            assert!(r.value <= full + 1e-4, "restricted {} full {full}", r.value);
            assert!(r.value >= prev - 1e-9, "not monotone: {prev} -> {}", r.value);
            prev = r.value;
        }
        assert!(full - prev < 0.1 * full, "gap too large: {prev} vs {full}");
    }

    #[test]
    fn restricted_achieves_full_value_with_optimal_feature() {
        // Feed the true 1-D critic direction as the single feature.
        let p = Density::gaussian1d(-1.0, 1.0).unwrap();
        let q = Density::gaussian1d(1.0, 1.2).unwrap();
        let mu = mu_average(&p, &q).unwrap();
        let n = 4096;
        let grid = joint_support_grid(&[&p, &q], n).unwrap();
        let (fhat, s) = crate::pde::solve_critic_pde(&p, &q, &mu, &grid).unwrap();
        let grad = fhat.gradient();
        let feat = FnFeature {
            eval_fn: |x: &[f64]| fhat.interp(x),
            grad_fn: |x: &[f64]| grad.interp(x),
        };
        let feats: Vec<&dyn Feature> = vec![&feat];
        let (r, _) =
            restricted_ipm(&feats, &p, &q, &mu, RestrictedNorm::Sobolev, n).unwrap();
        assert!(
            (r.value - s).abs() / s < 2e-3,
            "restricted {} vs full {s}",
            r.value
        );
    }

    #[test]
    fn singular_gram_rejected() {
        let p = Density::gaussian1d(-1.0, 1.0).unwrap();
        let q = Density::gaussian1d(1.0, 1.0).unwrap();
        let mu = mu_average(&p, &q).unwrap();
        let (lo, hi) = p.support_box();
        let f1 = SineFeature {
            lo: lo.clone(),
            hi: hi.clone(),
            modes: vec![1],
        };
        let f2 = f1.clone();
        let feats: Vec<&dyn Feature> = vec![&f1, &f2];
        let err = restricted_ipm(&feats, &p, &q, &mu, RestrictedNorm::Fisher, 256);
        assert!(matches!(err, Err(SobolevError::Numerical(_))));
    }
}
