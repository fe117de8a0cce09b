//! Shared test helpers: an independent dense-KKT solver for equality-
//! constrained LQ problems and small random-instance generators.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Time-varying LQ problem in plain arrays.
///
/// `min sum_{n<N-1} z'Q_n z + q_n'z + v'R_n v + r_n'v + z_{N-1}'Q_f z_{N-1} + q_{N-1}'z_{N-1}`
/// subject to `z_{n+1} = A_n z_n + B_n v_n` and `z_0` fixed.
pub struct DenseLq {
    pub a: Vec<DMatrix<f64>>,
    pub b: Vec<DMatrix<f64>>,
    /// One per state including the terminal one.
    pub q: Vec<DMatrix<f64>>,
    pub r: Vec<DMatrix<f64>>,
    pub q_lin: Vec<DVector<f64>>,
    pub r_lin: Vec<DVector<f64>>,
    pub z0: DVector<f64>,
}

impl DenseLq {
    /// Stack every free variable and multiplier into one KKT system and solve it by LU.
    pub fn solve(&self) -> (Vec<DVector<f64>>, Vec<DVector<f64>>) {
        let steps = self.a.len();
        let nz = self.z0.len();
        let nv = self.b[0].ncols();
        let zvars = steps * nz;
        let vars = zvars + steps * nv;
        let cons = steps * nz;
        let dim = vars + cons;
        let zi = |n: usize| (n - 1) * nz;
        let vi = |n: usize| zvars + n * nv;

        let mut kkt = DMatrix::zeros(dim, dim);
        let mut rhs = DVector::zeros(dim);
        for n in 1..=steps {
            kkt.view_mut((zi(n), zi(n)), (nz, nz)).copy_from(&(&self.q[n] * 2.0));
            rhs.rows_mut(zi(n), nz).copy_from(&(-&self.q_lin[n]));
        }
        for n in 0..steps {
            kkt.view_mut((vi(n), vi(n)), (nv, nv)).copy_from(&(&self.r[n] * 2.0));
            rhs.rows_mut(vi(n), nv).copy_from(&(-&self.r_lin[n]));
        }
        // Row block n: z_{n+1} - A_n z_n - B_n v_n = 0 (A_0 z_0 moves to the rhs).
        for n in 0..steps {
            let row = vars + n * nz;
            let mut put = |col: usize, m: &DMatrix<f64>| {
                kkt.view_mut((row, col), (m.nrows(), m.ncols())).copy_from(m);
                kkt.view_mut((col, row), (m.ncols(), m.nrows())).copy_from(&m.transpose());
            };
            put(zi(n + 1), &DMatrix::identity(nz, nz));
            put(vi(n), &(-&self.b[n]));
            if n > 0 {
                put(zi(n), &(-&self.a[n]));
            }
            if n == 0 {
                rhs.rows_mut(row, nz).copy_from(&(&self.a[0] * &self.z0));
            }
        }
        let sol = kkt.lu().solve(&rhs).expect("KKT system is nonsingular");
        let mut zs = vec![self.z0.clone()];
        zs.extend((1..=steps).map(|n| sol.rows(zi(n), nz).into_owned()));
        let vs = (0..steps).map(|n| sol.rows(vi(n), nv).into_owned()).collect();
        (zs, vs)
    }
}

pub fn uniform_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.gen_range(-scale..scale))
}

pub fn uniform_vector(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.gen_range(-scale..scale))
}

/// Random symmetric positive definite matrix with eigenvalues bounded below by `floor`.
pub fn spd(rng: &mut ChaCha8Rng, n: usize, floor: f64) -> DMatrix<f64> {
    let m = uniform_matrix(rng, n, n, 1.0);
    &m * m.transpose() + DMatrix::identity(n, n) * floor
}

pub fn max_abs_diff(a: &[DVector<f64>], b: &[DVector<f64>]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).amax()).fold(0.0, f64::max)
}
