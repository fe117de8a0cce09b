//! Cosine-basis spectral representation of coverage densities and the
//! Sobolev-weighted ergodic metric.
//!
//! Basis functions are normalized against the uniform measure on the domain,
//! `f_k(x) = prod_i c_{k_i} cos(k_i pi x_i / L_i)` with `c_0 = 1` and
//! `c_k = sqrt(2)` otherwise, so `f_0 = 1` and a probability density has
//! `phi_0 = 1`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{CoverageDomain, DiscreteTrajectory};
use crate::error::{MeschError, Result};

/// Default number of coefficients per spatial dimension.
pub const DEFAULT_COEFFS: usize = 10;

/// Quadrature points per dimension for non-uniform densities.
const QUADRATURE_POINTS: usize = 128;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianComponent {
    pub mean: Vec<f64>,
    /// Row-major covariance.
    pub cov: Vec<Vec<f64>>,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DensitySpec {
    #[default]
    Uniform,
    GaussianMixture { components: Vec<GaussianComponent> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralDensity {
    /// Coefficients per dimension.
    pub coeffs_per_dim: usize,
    /// Multi-indices, row-major over dimensions.
    pub indices: Vec<Vec<usize>>,
    /// Target coefficients `phi_k`.
    pub phi: Vec<f64>,
    /// Sobolev weights `(1 + |k|^2)^(-(s+1)/2)`.
    pub lambda: Vec<f64>,
}

impl SpectralDensity {
    pub fn from_spec(spec: &DensitySpec, domain: &CoverageDomain, coeffs_per_dim: usize) -> Result<Self> {
        let s = domain.dim();
        let indices = multi_indices(s, coeffs_per_dim);
        let lambda = indices
            .iter()
            .map(|k| {
                let k2: f64 = k.iter().map(|&ki| (ki * ki) as f64).sum();
                (1.0 + k2).powf(-(s as f64 + 1.0) / 2.0)
            })
            .collect();
        let phi = match spec {
            DensitySpec::Uniform => indices
                .iter()
                .map(|k| if k.iter().all(|&ki| ki == 0) { 1.0 } else { 0.0 })
                .collect(),
            DensitySpec::GaussianMixture { components } => {
                mixture_coefficients(components, domain, &indices)?
            }
        };
        Ok(Self {
            coeffs_per_dim,
            indices,
            phi,
            lambda,
        })
    }

    pub fn uniform(domain: &CoverageDomain) -> Self {
        Self::from_spec(&DensitySpec::Uniform, domain, DEFAULT_COEFFS).expect("uniform density")
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

fn multi_indices(s: usize, k: usize) -> Vec<Vec<usize>> {
    let total = k.pow(s as u32);
    (0..total)
        .map(|mut flat| {
            let mut idx = vec![0; s];
            for d in (0..s).rev() {
                idx[d] = flat % k;
                flat /= k;
            }
            idx
        })
        .collect()
}

fn norm_factor(k: usize) -> f64 {
    if k == 0 {
        1.0
    } else {
        std::f64::consts::SQRT_2
    }
}

/// Per-dimension cosine and derivative tables for one point, row-major by
/// dimension with `kmax` entries per row.
struct PointTables {
    kmax: usize,
    cos: Vec<f64>,
    dcos: Vec<f64>,
}

impl PointTables {
    fn cos(&self, i: usize, k: usize) -> f64 {
        self.cos[i * self.kmax + k]
    }

    fn dcos(&self, i: usize, k: usize) -> f64 {
        self.dcos[i * self.kmax + k]
    }
}

fn tables(x: &[f64], domain: &CoverageDomain, kmax: usize, with_grad: bool) -> PointTables {
    let s = domain.dim();
    let mut cos = vec![0.0; s * kmax];
    let mut dcos = if with_grad { vec![0.0; s * kmax] } else { Vec::new() };
    for i in 0..s {
        let l = domain.lengths[i];
        for k in 0..kmax {
            let w = k as f64 * std::f64::consts::PI / l;
            let c = norm_factor(k);
            let (sin, cosv) = (w * x[i]).sin_cos();
            cos[i * kmax + k] = c * cosv;
            if with_grad {
                dcos[i * kmax + k] = -c * w * sin;
            }
        }
    }
    PointTables { kmax, cos, dcos }
}

fn basis_value(t: &PointTables, k: &[usize]) -> f64 {
    k.iter().enumerate().map(|(i, &ki)| t.cos(i, ki)).product()
}

/// Evaluate basis function `k` at a point.
pub fn basis(x: &[f64], domain: &CoverageDomain, k: &[usize]) -> f64 {
    let kmax = k.iter().copied().max().unwrap_or(0) + 1;
    basis_value(&tables(x, domain, kmax, false), k)
}

fn mixture_coefficients(
    components: &[GaussianComponent],
    domain: &CoverageDomain,
    indices: &[Vec<usize>],
) -> Result<Vec<f64>> {
    let s = domain.dim();
    if components.is_empty() {
        return Err(MeschError::Config("gaussian mixture needs at least one component".into()));
    }
    let mut prepared = Vec::new();
    for c in components {
        if c.mean.len() != s || c.cov.len() != s || c.cov.iter().any(|r| r.len() != s) || !(c.weight > 0.0) {
            return Err(MeschError::Config(format!("mixture component {c:?} does not match domain dimension {s}")));
        }
        let cov = DMatrix::from_fn(s, s, |i, j| c.cov[i][j]);
        let inv = cov
            .clone()
            .cholesky()
            .ok_or_else(|| MeschError::Config("mixture covariance must be positive definite".into()))?
            .inverse();
        prepared.push((DVector::from_vec(c.mean.clone()), inv, c.weight / cov.determinant().sqrt()));
    }
    let kmax = indices.iter().flatten().copied().max().unwrap_or(0) + 1;
    let n = QUADRATURE_POINTS;
    let total = n.pow(s as u32);
    let mut acc = vec![0.0; indices.len()];
    let mut mass = 0.0;
    let mut x = vec![0.0; s];
    for flat in 0..total {
        let mut rem = flat;
        for d in (0..s).rev() {
            x[d] = (rem % n) as f64 + 0.5;
            x[d] *= domain.lengths[d] / n as f64;
            rem /= n;
        }
        let xv = DVector::from_column_slice(&x);
        let p: f64 = prepared
            .iter()
            .map(|(m, inv, w)| {
                let dx = &xv - m;
                w * (-0.5 * dx.dot(&(inv * &dx))).exp()
            })
            .sum();
        mass += p;
        let t = tables(&x, domain, kmax, false);
        for (a, k) in acc.iter_mut().zip(indices) {
            *a += p * basis_value(&t, k);
        }
    }
    Ok(acc.into_iter().map(|a| a / mass).collect())
}

/// Time-averaged basis coefficients of a trajectory's spatial components.
pub fn trajectory_coefficients(traj: &DiscreteTrajectory, density: &SpectralDensity, domain: &CoverageDomain) -> Vec<f64> {
    let n = traj.states.len() as f64;
    let mut c = vec![0.0; density.len()];
    for x in &traj.states {
        let t = tables(x.as_slice(), domain, density.coeffs_per_dim, false);
        for (ck, k) in c.iter_mut().zip(&density.indices) {
            *ck += basis_value(&t, k);
        }
    }
    c.iter_mut().for_each(|v| *v /= n);
    c
}

/// `sum_k Lambda_k (c_k - phi_k)^2`.
pub fn ergodic_metric(traj: &DiscreteTrajectory, density: &SpectralDensity, domain: &CoverageDomain) -> f64 {
    let c = trajectory_coefficients(traj, density, domain);
    c.iter()
        .zip(&density.phi)
        .zip(&density.lambda)
        .map(|((ck, pk), lk)| lk * (ck - pk) * (ck - pk))
        .sum()
}

/// Gradient of the ergodic metric with respect to each state. Only the
/// spatial components are nonzero.
pub fn ergodic_metric_gradient(
    traj: &DiscreteTrajectory,
    density: &SpectralDensity,
    domain: &CoverageDomain,
) -> Vec<DVector<f64>> {
    let s = domain.dim();
    let n = traj.states.len() as f64;
    let c = trajectory_coefficients(traj, density, domain);
    let weights: Vec<f64> = c
        .iter()
        .zip(&density.phi)
        .zip(&density.lambda)
        .map(|((ck, pk), lk)| 2.0 * lk * (ck - pk) / n)
        .collect();
    traj.states
        .iter()
        .map(|x| {
            let t = tables(x.as_slice(), domain, density.coeffs_per_dim, true);
            let mut g = DVector::zeros(x.len());
            for (w, k) in weights.iter().zip(&density.indices) {
                for i in 0..s {
                    let mut d = t.dcos(i, k[i]);
                    for (j, &kj) in k.iter().enumerate() {
                        if j != i {
                            d *= t.cos(j, kj);
                        }
                    }
                    g[i] += w * d;
                }
            }
            g
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn domain() -> CoverageDomain {
        CoverageDomain::new(vec![10.0, 10.0]).unwrap()
    }

    fn traj_of(points: &[[f64; 2]]) -> DiscreteTrajectory {
        DiscreteTrajectory {
            states: points.iter().map(|p| DVector::from_vec(vec![p[0], p[1], 0.0, 0.0])).collect(),
            controls: vec![DVector::zeros(2); points.len().saturating_sub(1)],
            dt: 0.2,
            feasible: false,
        }
    }

    #[test]
    fn uniform_density_coefficients() {
        let d = SpectralDensity::uniform(&domain());
        assert_eq!(d.len(), 100);
        assert_eq!(d.phi[0], 1.0);
        assert!(d.phi[1..].iter().all(|&p| p == 0.0));
        assert_eq!(d.lambda[0], 1.0);
    }

    #[test]
    fn basis_is_orthonormal_under_uniform_measure() {
        let dom = CoverageDomain::new(vec![4.0]).unwrap();
        let n = 2000;
        for (a, b) in [(0usize, 0usize), (1, 1), (3, 3), (1, 2), (0, 4)] {
            let mut s = 0.0;
            for i in 0..n {
                let x = [(i as f64 + 0.5) * 4.0 / n as f64];
                s += basis(&x, &dom, &[a]) * basis(&x, &dom, &[b]);
            }
            s /= n as f64;
            let expected = if a == b { 1.0 } else { 0.0 };
            assert!((s - expected).abs() < 1e-9, "{a},{b}: {s}");
        }
    }

    #[test]
    fn metric_zero_when_coefficients_match() {
        let dom = domain();
        let traj = traj_of(&[[1.0, 2.0], [3.0, 7.5], [8.0, 4.0]]);
        let mut density = SpectralDensity::uniform(&dom);
        density.phi = trajectory_coefficients(&traj, &density, &dom);
        assert!(ergodic_metric(&traj, &density, &dom).abs() < 1e-15);
    }

    #[test]
    fn stationary_point_worse_than_lawnmower() {
        let dom = domain();
        let density = SpectralDensity::uniform(&dom);
        let n = 151;
        let stationary = traj_of(&vec![[5.0, 5.0]; n]);
        // Boustrophedon sweep with the same number of samples.
        let rows = 5;
        let per_row = n / rows + 1;
        let mut pts = Vec::new();
        for r in 0..rows {
            let y = 1.0 + 2.0 * r as f64;
            for c in 0..per_row {
                let x = 0.5 + 9.0 * c as f64 / (per_row - 1) as f64;
                pts.push([if r % 2 == 0 { x } else { 10.0 - x }, y]);
            }
        }
        pts.truncate(n);
        let sweep = traj_of(&pts);
        let a = ergodic_metric(&stationary, &density, &dom);
        let b = ergodic_metric(&sweep, &density, &dom);
        assert!(a > b, "stationary {a} sweep {b}");
    }

    #[test]
    fn metric_invariant_under_time_reversal() {
        let dom = domain();
        let density = SpectralDensity::uniform(&dom);
        let pts: Vec<[f64; 2]> = (0..40).map(|i| [0.2 * i as f64, 5.0 + (0.3 * i as f64).sin()]).collect();
        let fwd = traj_of(&pts);
        let mut rev_pts = pts.clone();
        rev_pts.reverse();
        let rev = traj_of(&rev_pts);
        let a = ergodic_metric(&fwd, &density, &dom);
        let b = ergodic_metric(&rev, &density, &dom);
        assert!((a - b).abs() < 1e-14);
    }

    #[test]
    fn gaussian_mixture_is_normalized() {
        let dom = domain();
        let spec = DensitySpec::GaussianMixture {
            components: vec![
                GaussianComponent { mean: vec![3.0, 3.0], cov: vec![vec![1.0, 0.0], vec![0.0, 1.0]], weight: 0.6 },
                GaussianComponent { mean: vec![7.0, 6.0], cov: vec![vec![2.0, 0.3], vec![0.3, 1.0]], weight: 0.4 },
            ],
        };
        let d = SpectralDensity::from_spec(&spec, &dom, 10).unwrap();
        assert!((d.phi[0] - 1.0).abs() < 1e-12);
        assert!(d.phi.iter().all(|p| p.is_finite()));
        assert!(d.phi[1..].iter().any(|p| p.abs() > 1e-3));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let dom = domain();
        let density = SpectralDensity::uniform(&dom);
        let pts: Vec<[f64; 2]> = (0..20).map(|i| [1.0 + 0.4 * i as f64, 2.0 + 0.25 * i as f64]).collect();
        let traj = traj_of(&pts);
        let g = ergodic_metric_gradient(&traj, &density, &dom);
        let h = 1e-6;
        for n in [0, 7, 19] {
            for i in 0..2 {
                let mut tp = traj.clone();
                let mut tm = traj.clone();
                tp.states[n][i] += h;
                tm.states[n][i] -= h;
                let fd = (ergodic_metric(&tp, &density, &dom) - ergodic_metric(&tm, &density, &dom)) / (2.0 * h);
                assert!((fd - g[n][i]).abs() <= 1e-4 * fd.abs().max(1e-6), "{fd} vs {}", g[n][i]);
            }
            assert_eq!(g[n][2], 0.0);
            assert_eq!(g[n][3], 0.0);
        }
    }
}
