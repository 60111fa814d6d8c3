//! Finite-difference solver for the divergence-form elliptic equation
//! satisfied by the optimal Sobolev critic, -div(mu grad f) = P - Q with
//! zero Dirichlet boundary, plus the Stein-operator and
//! integration-by-parts identity checks.

use crate::densities::Density;
use crate::error::{Result, SobolevError};
use crate::grid::{Grid, ScalarField, VectorField};

/// Relative CG residual target.
const CG_TOL: f64 = 1e-10;

/// Discrete -div(mu grad .) with harmonic-mean face weights and zero
/// Dirichlet boundary. Matrix-free; the assembled operator is SPD on the
/// interior nodes.
pub struct CriticOperator {
    grid: Grid,
    mu: Vec<f64>,
}

impl CriticOperator {
    pub fn new(mu_density: &Density, grid: &Grid) -> Result<Self> {
        let mut mu = Vec::with_capacity(grid.len());
        for k in 0..grid.len() {
            let v = mu_density.pdf(&grid.node(k))?;
            if !grid.is_boundary(k) && v <= 0.0 {
                return Err(SobolevError::Numerical(format!(
                    "dominant measure must be positive on interior nodes (node {k})"
                )));
            }
            mu.push(v.max(f64::MIN_POSITIVE));
        }
        Ok(CriticOperator {
            grid: grid.clone(),
            mu,
        })
    }

    fn harmonic(a: f64, b: f64) -> f64 {
        2.0 * a * b / (a + b)
    }

    /// y = A x over the full grid vector; boundary entries are forced to 0.
    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        let g = &self.grid;
        for k in 0..g.len() {
            if g.is_boundary(k) {
                y[k] = 0.0;
                continue;
            }
            let ij = g.multi_index(k);
            let mut acc = 0.0;
            for d in 0..g.dim() {
                let h2 = g.spacing[d] * g.spacing[d];
                let mut lo = ij.clone();
                lo[d] -= 1;
                let mut hi = ij.clone();
                hi[d] += 1;
                let klo = g.index(&lo);
                let khi = g.index(&hi);
                let w_lo = Self::harmonic(self.mu[k], self.mu[klo]);
                let w_hi = Self::harmonic(self.mu[k], self.mu[khi]);
                let x_lo = if g.is_boundary(klo) { 0.0 } else { x[klo] };
                let x_hi = if g.is_boundary(khi) { 0.0 } else { x[khi] };
                acc += (w_lo * (x[k] - x_lo) + w_hi * (x[k] - x_hi)) / h2;
            }
            y[k] = acc;
        }
    }

    /// Jacobi diagonal of the operator.
    fn diagonal(&self) -> Vec<f64> {
        let g = &self.grid;
        let mut diag = vec![1.0; g.len()];
        for k in 0..g.len() {
            if g.is_boundary(k) {
                continue;
            }
            let ij = g.multi_index(k);
            let mut acc = 0.0;
            for d in 0..g.dim() {
                let h2 = g.spacing[d] * g.spacing[d];
                let mut lo = ij.clone();
                lo[d] -= 1;
                let mut hi = ij.clone();
                hi[d] += 1;
                acc += (Self::harmonic(self.mu[k], self.mu[g.index(&lo)])
                    + Self::harmonic(self.mu[k], self.mu[g.index(&hi)]))
                    / h2;
            }
            diag[k] = acc;
        }
        diag
    }

    pub fn mu_values(&self) -> &[f64] {
        &self.mu
    }
}

/// Solve -div(mu grad f) = P - Q with zero Dirichlet boundary.
///
/// Returns the unnormalized solution `fhat` together with
/// S = sqrt(E_mu ||grad fhat||^2), so that fhat / S is the unit-norm critic
/// and S estimates the Sobolev distance.
pub fn solve_critic_pde(
    p: &Density,
    q: &Density,
    mu: &Density,
    grid: &Grid,
) -> Result<(ScalarField, f64)> {
    let op = CriticOperator::new(mu, grid)?;
    let mut rhs = vec![0.0; grid.len()];
    for (k, r) in rhs.iter_mut().enumerate() {
        let x = grid.node(k);
        *r = p.pdf(&x)? - q.pdf(&x)?;
    }
    // Truncation to the box leaves a ~1e-8 mass imbalance; project it out
    // against mu in the trapezoid inner product.
    let num: f64 = (0..grid.len())
        .map(|k| grid.trapezoid_weight(k) * rhs[k])
        .sum();
    let den: f64 = (0..grid.len())
        .map(|k| grid.trapezoid_weight(k) * op.mu[k])
        .sum();
    let c = num / den;
    for (k, r) in rhs.iter_mut().enumerate() {
        *r -= c * op.mu[k];
        if grid.is_boundary(k) {
            *r = 0.0;
        }
    }

    let norm_b = norm(&rhs);
    let mut f = vec![0.0; grid.len()];
    if norm_b > 1e-14 {
        pcg(&op, &rhs, &mut f, norm_b)?;
    }
    let fhat = ScalarField {
        grid: grid.clone(),
        values: f,
    };
    let s = sobolev_seminorm(&fhat, &op.mu);
    Ok((fhat, s))
}

/// E_mu ||grad f||^2 under trapezoid quadrature, square-rooted.
pub fn sobolev_seminorm(f: &ScalarField, mu: &[f64]) -> f64 {
    let grad = f.gradient();
    let nsq = grad.norm_sq_field();
    let e: f64 = (0..f.grid.len())
        .map(|k| f.grid.trapezoid_weight(k) * mu[k] * nsq.values[k])
        .sum();
    e.max(0.0).sqrt()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn pcg(op: &CriticOperator, b: &[f64], x: &mut [f64], norm_b: f64) -> Result<()> {
    let n = b.len();
    let diag = op.diagonal();
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&diag).map(|(ri, di)| ri / di).collect();
    let mut pvec = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
    let max_iter = 10 * n;
    for _ in 0..max_iter {
        if norm(&r) <= CG_TOL * norm_b {
            return Ok(());
        }
        op.apply(&pvec, &mut ap);
        let pap: f64 = pvec.iter().zip(&ap).map(|(a, b)| a * b).sum();
        if pap <= 0.0 {
            return Err(SobolevError::Solver(format!(
                "CG curvature non-positive ({pap}); operator not SPD on this grid"
            )));
        }
        let alpha = rz / pap;
        for k in 0..n {
            x[k] += alpha * pvec[k];
            r[k] -= alpha * ap[k];
        }
        for k in 0..n {
            z[k] = r[k] / diag[k];
        }
        let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let beta = rz_new / rz;
        rz = rz_new;
        for k in 0..n {
            pvec[k] = z[k] + beta * pvec[k];
        }
    }
    Err(SobolevError::Solver(format!(
        "CG did not reach relative residual {CG_TOL} in {max_iter} iterations \
         (residual {:.3e}, rhs norm {:.3e})",
        norm(&r),
        norm_b
    )))
}

/// Max-abs discrete residual of (P-Q)/S + div(mu grad f) on interior nodes,
/// evaluated in the solver's own harmonic-mean stencil.
pub fn pde_residual(
    f: &ScalarField,
    p: &Density,
    q: &Density,
    mu: &Density,
    s: f64,
) -> Result<f64> {
    let grid = &f.grid;
    let op = CriticOperator::new(mu, grid)?;
    let mut af = vec![0.0; grid.len()];
    op.apply(&f.values, &mut af);
    let mut worst = 0.0f64;
    for k in 0..grid.len() {
        if grid.is_boundary(k) {
            continue;
        }
        let x = grid.node(k);
        let rhs = if s > 0.0 {
            (p.pdf(&x)? - q.pdf(&x)?) / s
        } else {
            0.0
        };
        worst = worst.max((rhs - af[k]).abs());
    }
    Ok(worst)
}

/// Pointwise check of the Stein-operator identity
/// T(mu)[grad f*] = (Q - P) / (2 S mu) over the region holding `mass`
/// of mu (interior nodes only). Divergence is taken by central differences,
/// so the deviation is O(h).
pub fn stein_identity_check(
    f_star: &ScalarField,
    p: &Density,
    q: &Density,
    mu: &Density,
    s: f64,
    mass: f64,
) -> Result<f64> {
    let grid = &f_star.grid;
    let mu_vals: Vec<f64> = (0..grid.len())
        .map(|k| mu.pdf(&grid.node(k)))
        .collect::<Result<_>>()?;
    let threshold = mass_threshold(grid, &mu_vals, mass);
    let grad = f_star.gradient();
    let div = divergence(&grad);
    let mut worst = 0.0f64;
    for k in 0..grid.len() {
        if grid.is_boundary(k) || mu_vals[k] < threshold {
            continue;
        }
        let x = grid.node(k);
        let score = mu.score(&x)?;
        let g = grad.at(k);
        let dot: f64 = score.iter().zip(&g).map(|(a, b)| a * b).sum();
        let lhs = 0.5 * dot + 0.5 * div.values[k];
        let rhs = if s > 0.0 {
            (q.pdf(&x)? - p.pdf(&x)?) / (2.0 * s * mu_vals[k])
        } else {
            0.0
        };
        worst = worst.max((lhs - rhs).abs());
    }
    Ok(worst)
}

/// Relative gap between the two discretizations of S^2:
/// |int fhat (P-Q) dx - E_mu ||grad fhat||^2| / E_mu ||grad fhat||^2.
pub fn integration_by_parts_check(
    fhat: &ScalarField,
    p: &Density,
    q: &Density,
    mu: &Density,
) -> Result<f64> {
    let grid = &fhat.grid;
    let mu_vals: Vec<f64> = (0..grid.len())
        .map(|k| mu.pdf(&grid.node(k)))
        .collect::<Result<_>>()?;
    let energy = sobolev_seminorm(fhat, &mu_vals).powi(2);
    let mut duality = 0.0;
    for k in 0..grid.len() {
        let x = grid.node(k);
        duality += grid.trapezoid_weight(k) * fhat.values[k] * (p.pdf(&x)? - q.pdf(&x)?);
    }
    if energy == 0.0 {
        return Ok(0.0);
    }
    Ok((duality - energy).abs() / energy)
}

/// Central-difference divergence of a vector field.
pub fn divergence(v: &VectorField) -> ScalarField {
    let grid = &v.grid;
    let mut out = ScalarField::zeros(grid);
    for (d, comp) in v.comps.iter().enumerate() {
        let partial = ScalarField {
            grid: grid.clone(),
            values: comp.clone(),
        }
        .gradient();
        for k in 0..grid.len() {
            out.values[k] += partial.comps[d][k];
        }
    }
    out
}

/// Smallest mu value whose superlevel set carries at least `mass` of mu
/// under trapezoid quadrature.
fn mass_threshold(grid: &Grid, mu_vals: &[f64], mass: f64) -> f64 {
    let mut order: Vec<usize> = (0..grid.len()).collect();
    order.sort_by(|a, b| mu_vals[*b].partial_cmp(&mu_vals[*a]).unwrap());
    let mut acc = 0.0;
    for k in order {
        acc += grid.trapezoid_weight(k) * mu_vals[k];
        if acc >= mass {
            return mu_vals[k];
        }
    }
    0.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::densities::mu_average;

    fn gaussian_pair_1d() -> (Density, Density, Density) {
        let p = Density::gaussian1d(-1.0, 1.0).unwrap();
        let q = Density::gaussian1d(1.0, 1.2).unwrap();
        let mu = mu_average(&p, &q).unwrap();
        (p, q, mu)
    }

    fn joint_grid_1d(p: &Density, q: &Density, n: usize) -> Grid {
        let (lo_p, hi_p) = p.support_box();
        let (lo_q, hi_q) = q.support_box();
        Grid::new_1d(lo_p[0].min(lo_q[0]), hi_p[0].max(hi_q[0]), n).unwrap()
    }

    #[test]
    fn identical_densities_give_zero_solution() {
        let p = Density::gaussian1d(0.0, 1.0).unwrap();
        let mu = mu_average(&p, &p).unwrap();
        let grid = Grid::new_1d(-6.0, 6.0, 256).unwrap();
        let (f, s) = solve_critic_pde(&p, &p, &mu, &grid).unwrap();
        assert!(s < 1e-10);
        assert!(f.values.iter().all(|v| v.abs() < 1e-10));
    }

    #[test]
    fn gradient_matches_1d_antiderivative_identity() {
        // mu f' = F_Q - F_P on interior nodes.
        let (p, q, mu) = gaussian_pair_1d();
        let grid = joint_grid_1d(&p, &q, 4096);
        let (fhat, _s) = solve_critic_pde(&p, &q, &mu, &grid).unwrap();
        let grad = fhat.gradient();
        let mu_vals: Vec<f64> = (0..grid.len())
            .map(|k| mu.pdf(&grid.node(k)).unwrap())
            .collect();
        // Sup norm over the 99%-mass interval of mu; outside it the
        // truncated-domain integration constant dominates the ratio.
        let threshold = mass_threshold(&grid, &mu_vals, 0.99);
        let mut worst = 0.0f64;
        for k in 1..grid.len() - 1 {
            if mu_vals[k] < threshold {
                continue;
            }
            let x = grid.node(k);
            let analytic = (q.cdf(&x).unwrap() - p.cdf(&x).unwrap()) / mu_vals[k];
            worst = worst.max((grad.comps[0][k] - analytic).abs());
        }
        assert!(worst < 1e-3, "sup deviation {worst}");
    }

    #[test]
    fn solve_then_check_residual_small_and_noise_detected() {
        let (p, q, mu) = gaussian_pair_1d();
        let grid = joint_grid_1d(&p, &q, 1024);
        let (fhat, s) = solve_critic_pde(&p, &q, &mu, &grid).unwrap();
        let f_star = ScalarField {
            grid: grid.clone(),
            values: fhat.values.iter().map(|v| v / s).collect(),
        };
        let res = pde_residual(&f_star, &p, &q, &mu, s).unwrap();
        assert!(res <= 1e-8, "residual {res}");

        // Negative control: 1e-3 noise must raise the residual by >= 10x.
        let mut noisy = f_star.clone();
        for (k, v) in noisy.values.iter_mut().enumerate() {
            if !grid.is_boundary(k) {
                *v += 1e-3 * if k % 2 == 0 { 1.0 } else { -1.0 };
            }
        }
        let res_noisy = pde_residual(&noisy, &p, &q, &mu, s).unwrap();
        assert!(res_noisy >= 10.0 * res.max(1e-12), "{res} -> {res_noisy}");
    }

    #[test]
    fn assembled_operator_is_symmetric() {
        let grid = Grid::new_2d([-3.0, -3.0], [3.0, 3.0], [24, 24]).unwrap();
        let op = CriticOperator::new(&mu_2d(), &grid).unwrap();
        let n = grid.len();
        let mut rng_state = 12345u64;
        let mut next = || {
            rng_state = rng_state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (rng_state >> 33) as usize % n
        };
        let mut checked = 0;
        while checked < 100 {
            let i = next();
            let j = next();
            if grid.is_boundary(i) || grid.is_boundary(j) || i == j {
                continue;
            }
            let mut ei = vec![0.0; n];
            ei[i] = 1.0;
            let mut ej = vec![0.0; n];
            ej[j] = 1.0;
            let mut aei = vec![0.0; n];
            let mut aej = vec![0.0; n];
            op.apply(&ei, &mut aei);
            op.apply(&ej, &mut aej);
            assert!((aei[j] - aej[i]).abs() < 1e-12);
            checked += 1;
        }
    }

    fn mu_2d() -> Density {
        let p = Density::gaussian2d([1.0, 0.0], [[1.9, 0.8], [0.8, 1.3]]).unwrap();
        let q = Density::gaussian2d([1.0, -2.0], [[1.9, -0.8], [-0.8, 1.3]]).unwrap();
        mu_average(&p, &q).unwrap()
    }

    #[test]
    fn stein_identity_first_order_convergence_1d() {
        let (p, q, mu) = gaussian_pair_1d();
        let mut deviations = Vec::new();
        for n in [512usize, 1024, 2048] {
            let grid = joint_grid_1d(&p, &q, n);
            let (fhat, s) = solve_critic_pde(&p, &q, &mu, &grid).unwrap();
            let f_star = ScalarField {
                grid: grid.clone(),
                values: fhat.values.iter().map(|v| v / s).collect(),
            };
            deviations.push(stein_identity_check(&f_star, &p, &q, &mu, s, 0.99).unwrap());
        }
        // Halving h should roughly halve the deviation.
        assert!(
            deviations[1] < 0.7 * deviations[0] && deviations[2] < 0.7 * deviations[1],
            "{deviations:?}"
        );
    }

    #[test]
    fn stein_identity_zero_for_equal_densities() {
        let p = Density::gaussian1d(0.0, 1.0).unwrap();
        let mu = mu_average(&p, &p).unwrap();
        let grid = Grid::new_1d(-6.0, 6.0, 512).unwrap();
        let (fhat, s) = solve_critic_pde(&p, &p, &mu, &grid).unwrap();
        let dev = stein_identity_check(&fhat, &p, &p, &mu, s, 0.99).unwrap();
        assert!(dev < 1e-9, "deviation {dev}");
    }

    #[test]
    fn two_dim_pair_sign_structure_and_normalization() {
        let p = Density::gaussian2d([1.0, 0.0], [[1.9, 0.8], [0.8, 1.3]]).unwrap();
        let q = Density::gaussian2d([1.0, -2.0], [[1.9, -0.8], [-0.8, 1.3]]).unwrap();
        let mu = mu_2d();
        let (lo_p, hi_p) = p.support_box();
        let (lo_q, hi_q) = q.support_box();
        let lo = [lo_p[0].min(lo_q[0]), lo_p[1].min(lo_q[1])];
        let hi = [hi_p[0].max(hi_q[0]), hi_p[1].max(hi_q[1])];
        let grid = Grid::new_2d(lo, hi, [96, 96]).unwrap();
        let (fhat, s) = solve_critic_pde(&p, &q, &mu, &grid).unwrap();
        assert!(s > 0.0);
        // Positive lobe over P's mode, negative over Q's mode.
        assert!(fhat.interp(&[1.0, 0.0]) > 0.0);
        assert!(fhat.interp(&[1.0, -2.0]) < 0.0);
        // Normalized critic sits on the unit Sobolev sphere at grid accuracy.
        let mu_vals: Vec<f64> = (0..grid.len())
            .map(|k| mu.pdf(&grid.node(k)).unwrap())
            .collect();
        let f_star = ScalarField {
            grid: grid.clone(),
            values: fhat.values.iter().map(|v| v / s).collect(),
        };
        let unit = sobolev_seminorm(&f_star, &mu_vals);
        assert!((unit - 1.0).abs() < 1e-3, "seminorm {unit}");
        let gap = integration_by_parts_check(&fhat, &p, &q, &mu).unwrap();
        assert!(gap <= 1e-2, "gap {gap}");
    }

    #[test]
    fn integration_by_parts_gap_small_1d() {
        let (p, q, mu) = gaussian_pair_1d();
        let grid = joint_grid_1d(&p, &q, 4096);
        let (fhat, _s) = solve_critic_pde(&p, &q, &mu, &grid).unwrap();
        let gap = integration_by_parts_check(&fhat, &p, &q, &mu).unwrap();
        assert!(gap <= 1e-3, "gap {gap}");
    }

    #[test]
    fn integration_by_parts_zero_guard() {
        let p = Density::gaussian1d(0.0, 1.0).unwrap();
        let mu = mu_average(&p, &p).unwrap();
        let grid = Grid::new_1d(-6.0, 6.0, 128).unwrap();
        let (fhat, _) = solve_critic_pde(&p, &p, &mu, &grid).unwrap();
        assert_eq!(integration_by_parts_check(&fhat, &p, &p, &mu).unwrap(), 0.0);
    }
}
