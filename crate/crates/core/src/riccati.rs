//! Finite-horizon affine LQ problems solved by backward Riccati recursion.
//!
//! Minimizes
//!
//! ```text
//! sum_{n<N-1} [ z_n' Q_n z_n + q_n' z_n + v_n' R_n v_n + r_n' v_n ]
//!     + z_{N-1}' Q_f z_{N-1} + q_{N-1}' z_{N-1}
//! s.t. z_{n+1} = A_n z_n + B_n v_n,  z_0 given
//! ```
//!
//! The value function is kept as `V_n(z) = z' P_n z + p_n' z`.

use nalgebra::{DMatrix, DVector};

use crate::error::{MeschError, Result};

/// A per-step sequence that is either constant or given per index.
#[derive(Debug, Clone, Copy)]
pub enum Seq<'a, T> {
    Const(&'a T),
    Each(&'a [T]),
}

impl<'a, T> Seq<'a, T> {
    pub fn get(&self, n: usize) -> &'a T {
        match self {
            Seq::Const(t) => t,
            Seq::Each(ts) => &ts[n],
        }
    }
}

#[derive(Debug, Clone)]
pub struct AffineLq<'a> {
    pub a: Seq<'a, DMatrix<f64>>,
    pub b: Seq<'a, DMatrix<f64>>,
    pub q: Seq<'a, DMatrix<f64>>,
    pub r: Seq<'a, DMatrix<f64>>,
    pub q_terminal: &'a DMatrix<f64>,
    /// Linear state terms, one per state (length N). `None` means zero.
    pub q_lin: Option<&'a [DVector<f64>]>,
    /// Linear control terms, one per control (length N-1). `None` means zero.
    pub r_lin: Option<&'a [DVector<f64>]>,
}

/// Time-varying affine feedback `v_n = K_n z_n + k_n`.
#[derive(Debug, Clone)]
pub struct AffinePolicy {
    pub gains: Vec<DMatrix<f64>>,
    pub feedforward: Vec<DVector<f64>>,
}

impl AffinePolicy {
    pub fn steps(&self) -> usize {
        self.gains.len()
    }

    pub fn control(&self, n: usize, z: &DVector<f64>) -> DVector<f64> {
        &self.gains[n] * z + &self.feedforward[n]
    }
}

impl<'a> AffineLq<'a> {
    /// Backward pass over `states` states (`states - 1` controls).
    pub fn solve(&self, states: usize) -> Result<AffinePolicy> {
        if states < 2 {
            return Err(MeschError::Argument(format!("LQ horizon needs >= 2 states, got {states}")));
        }
        let steps = states - 1;
        let nz = self.q_terminal.nrows();
        let mut p = self.q_terminal.clone();
        let mut p_lin = match self.q_lin {
            Some(ql) => ql[steps].clone(),
            None => DVector::zeros(nz),
        };
        let mut gains = vec![DMatrix::zeros(0, 0); steps];
        let mut ff = vec![DVector::zeros(0); steps];
        for n in (0..steps).rev() {
            let a = self.a.get(n);
            let b = self.b.get(n);
            let pb = &p * b;
            let pa = &p * a;
            let m = self.r.get(n) + b.transpose() * &pb;
            let h = b.transpose() * &pa;
            let mut g = b.transpose() * &p_lin;
            if let Some(rl) = self.r_lin {
                g += &rl[n];
            }
            let chol = m.clone().cholesky().ok_or_else(|| {
                MeschError::Numerical(format!("R + B'PB is not positive definite at step {n}"))
            })?;
            let k = -chol.solve(&h);
            let kff = -chol.solve(&g) * 0.5;
            let mut p_next = self.q.get(n) + a.transpose() * &pa + h.transpose() * &k;
            p_next = (&p_next + p_next.transpose()) * 0.5;
            let mut pl = a.transpose() * &p_lin + k.transpose() * &g;
            if let Some(ql) = self.q_lin {
                pl += &ql[n];
            }
            if !p_next.iter().chain(pl.iter()).all(|v| v.is_finite()) {
                return Err(MeschError::Numerical(format!("Riccati recursion diverged at step {n}")));
            }
            p = p_next;
            p_lin = pl;
            gains[n] = k;
            ff[n] = kff;
        }
        Ok(AffinePolicy {
            gains,
            feedforward: ff,
        })
    }

    /// Roll the optimal policy through the linear dynamics from `z0`.
    pub fn rollout(&self, policy: &AffinePolicy, z0: &DVector<f64>) -> (Vec<DVector<f64>>, Vec<DVector<f64>>) {
        let steps = policy.steps();
        let mut zs = Vec::with_capacity(steps + 1);
        let mut vs = Vec::with_capacity(steps);
        zs.push(z0.clone());
        for n in 0..steps {
            let v = policy.control(n, &zs[n]);
            let next = self.a.get(n) * &zs[n] + self.b.get(n) * &v;
            vs.push(v);
            zs.push(next);
        }
        (zs, vs)
    }

    /// Objective value of a trajectory.
    pub fn cost(&self, zs: &[DVector<f64>], vs: &[DVector<f64>]) -> f64 {
        let steps = vs.len();
        let mut j = 0.0;
        for n in 0..steps {
            j += zs[n].dot(&(self.q.get(n) * &zs[n])) + vs[n].dot(&(self.r.get(n) * &vs[n]));
            if let Some(ql) = self.q_lin {
                j += ql[n].dot(&zs[n]);
            }
            if let Some(rl) = self.r_lin {
                j += rl[n].dot(&vs[n]);
            }
        }
        j += zs[steps].dot(&(self.q_terminal * &zs[steps]));
        if let Some(ql) = self.q_lin {
            j += ql[steps].dot(&zs[steps]);
        }
        j
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_problem<'a>(a: &'a DMatrix<f64>, b: &'a DMatrix<f64>, q: &'a DMatrix<f64>, r: &'a DMatrix<f64>) -> AffineLq<'a> {
        AffineLq {
            a: Seq::Const(a),
            b: Seq::Const(b),
            q: Seq::Const(q),
            r: Seq::Const(r),
            q_terminal: q,
            q_lin: None,
            r_lin: None,
        }
    }

    #[test]
    fn one_step_scalar_closed_form() {
        // min q z1^2 + r v0^2 with z1 = a z0 + b v0  =>  v0 = -q a b z0 / (r + q b^2)
        let (a, b, q, r) = (1.3, 0.7, 2.0, 0.5);
        let am = DMatrix::from_element(1, 1, a);
        let bm = DMatrix::from_element(1, 1, b);
        let qm = DMatrix::from_element(1, 1, q);
        let rm = DMatrix::from_element(1, 1, r);
        let lq = scalar_problem(&am, &bm, &qm, &rm);
        let pol = lq.solve(2).unwrap();
        let expected = -q * a * b / (r + q * b * b);
        assert!((pol.gains[0][(0, 0)] - expected).abs() < 1e-14);
        assert_eq!(pol.feedforward[0][0], 0.0);
    }

    #[test]
    fn zero_linear_terms_and_zero_start_give_zero_solution() {
        let a = DMatrix::identity(2, 2);
        let b = DMatrix::identity(2, 2);
        let q = DMatrix::identity(2, 2);
        let lq = scalar_problem(&a, &b, &q, &q);
        let pol = lq.solve(6).unwrap();
        let (zs, vs) = lq.rollout(&pol, &DVector::zeros(2));
        assert!(zs.iter().chain(vs.iter()).all(|v| v.amax() == 0.0));
    }

    #[test]
    fn indefinite_control_weight_is_numerical_error() {
        let a = DMatrix::identity(1, 1);
        let b = DMatrix::zeros(1, 1);
        let q = DMatrix::identity(1, 1);
        let r = DMatrix::from_element(1, 1, -1.0);
        let lq = scalar_problem(&a, &b, &q, &r);
        assert!(matches!(lq.solve(3), Err(MeschError::Numerical(_))));
    }

    #[test]
    fn optimal_cost_beats_perturbations() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]);
        let b = DMatrix::from_row_slice(2, 1, &[0.005, 0.1]);
        let q = DMatrix::identity(2, 2);
        let r = DMatrix::identity(1, 1) * 0.1;
        let ql: Vec<_> = (0..8).map(|n| DVector::from_vec(vec![0.3 * n as f64, -0.2])).collect();
        let rl: Vec<_> = (0..7).map(|n| DVector::from_vec(vec![0.1 * n as f64 - 0.4])).collect();
        let lq = AffineLq { q_lin: Some(&ql), r_lin: Some(&rl), ..scalar_problem(&a, &b, &q, &r) };
        let pol = lq.solve(8).unwrap();
        let z0 = DVector::from_vec(vec![1.0, -0.5]);
        let (zs, vs) = lq.rollout(&pol, &z0);
        let best = lq.cost(&zs, &vs);
        for k in 0..7 {
            for eps in [-1e-3, 1e-3] {
                let mut v2 = vs.clone();
                v2[k][0] += eps;
                let mut z2 = vec![z0.clone()];
                for n in 0..7 {
                    z2.push(&a * &z2[n] + &b * &v2[n]);
                }
                assert!(lq.cost(&z2, &v2) > best);
            }
        }
    }
}
