//! Small dense helpers shared by the integrators.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

/// Largest entry magnitude, or 1 for a zero or non-finite matrix. faer's
/// iterations can fail to converge on tables whose entries are all far below
/// one (seen on a 10x10 coupling with entries under 1e-5), so the
/// decompositions work on `A / scale`.
fn unit_scale(a: &DMatrix<f64>) -> f64 {
    let m = a.amax();
    if m > 0.0 && m.is_finite() {
        m
    } else {
        1.0
    }
}

/// `A = T diag(lambda) T^T` for a (numerically) symmetric `A`.
pub fn symmetric_eigen(a: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let scale = unit_scale(a);
    let m = faer::Mat::<f64>::from_fn(n, n, |i, j| 0.5 * (a[(i, j)] + a[(j, i)]) / scale);
    let dec = m.self_adjoint_eigen(faer::Side::Lower).expect("eigensolver did not converge");
    let (u, lambda) = (dec.U(), dec.S().column_vector());
    (DVector::from_fn(n, |i, _| lambda[i] * scale), DMatrix::from_fn(n, n, |i, j| u[(i, j)]))
}

pub fn antisymmetric_part(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a - a.transpose()) * 0.5
}

/// Thin SVD `A = U diag(sigma) V^T`, singular values non-increasing.
pub fn svd(a: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>, DMatrix<f64>) {
    let k = a.nrows().min(a.ncols());
    if k == 0 {
        return (DMatrix::zeros(a.nrows(), 0), Vec::new(), DMatrix::zeros(a.ncols(), 0));
    }
    let scale = unit_scale(a);
    let m = faer::Mat::<f64>::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)] / scale);
    let dec = m.thin_svd().expect("SVD did not converge");
    let (u, v, s) = (dec.U(), dec.V(), dec.S().column_vector());
    (
        DMatrix::from_fn(a.nrows(), k, |i, j| u[(i, j)]),
        (0..k).map(|i| s[i] * scale).collect(),
        DMatrix::from_fn(a.ncols(), k, |i, j| v[(i, j)]),
    )
}

/// Householder QR of a tall `A = Q R`, thin `Q`, signs fixed so that
/// `diag(R) >= 0`. `Q` has orthonormal columns even when `A` is rank deficient.
pub fn qr(a: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let (m, n) = a.shape();
    assert!(m >= n, "qr needs a tall matrix, got {m}x{n}");
    if n == 0 {
        return (DMatrix::zeros(m, 0), DMatrix::zeros(0, 0));
    }
    let fa = faer::Mat::<f64>::from_fn(m, n, |i, j| a[(i, j)]);
    let dec = fa.qr();
    let (q, r) = (dec.compute_thin_Q(), dec.thin_R());
    let sign: Vec<f64> = (0..n).map(|i| if r[(i, i)] < 0.0 { -1.0 } else { 1.0 }).collect();
    (
        DMatrix::from_fn(m, n, |i, j| q[(i, j)] * sign[j]),
        DMatrix::from_fn(n, n, |i, j| if j < i { 0.0 } else { r[(i, j)] * sign[i] }),
    )
}

pub fn spectral_norm(a: &DMatrix<f64>) -> f64 {
    svd(a).1.first().copied().unwrap_or(0.0)
}

/// Eigen-decomposition of `i G` for a real antisymmetric `G`, so that
/// `exp(s G) = W diag(exp(-i s lambda)) W^H` for any scalar `s`.
#[derive(Clone, Debug)]
pub struct SkewExponential {
    eigenvalues: DVector<f64>,
    basis: DMatrix<Complex64>,
}

impl SkewExponential {
    pub fn new(g: &DMatrix<f64>) -> Self {
        let skew = antisymmetric_part(g);
        let hermitian = skew.map(|v| Complex64::new(0.0, v));
        let n = hermitian.nrows();
        let m = faer::Mat::<faer::c64>::from_fn(n, n, |i, j| {
            let z = hermitian[(i, j)];
            faer::c64::new(z.re, z.im)
        });
        let dec = m.self_adjoint_eigen(faer::Side::Lower).expect("eigensolver did not converge");
        let (u, lambda) = (dec.U(), dec.S().column_vector());
        Self {
            eigenvalues: DVector::from_fn(n, |i, _| lambda[i].re),
            basis: DMatrix::from_fn(n, n, |i, j| Complex64::new(u[(i, j)].re, u[(i, j)].im)),
        }
    }

    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Applies `exp(scale_p G)` to row `p` of `rows` for every row, where
    /// `scale` holds one scalar per row.
    pub fn apply_rows(&self, rows: &mut DMatrix<f64>, scale: &[f64]) {
        let r = self.dim();
        debug_assert_eq!(rows.ncols(), r);
        debug_assert_eq!(rows.nrows(), scale.len());
        // Z = W^H U^T, column p belongs to grid point p
        let complex_rows = rows.map(|v| Complex64::new(v, 0.0));
        let mut z = self.basis.adjoint() * complex_rows.transpose();
        for (p, &s) in scale.iter().enumerate() {
            for a in 0..r {
                let phase = -s * self.eigenvalues[a];
                z[(a, p)] *= Complex64::new(phase.cos(), phase.sin());
            }
        }
        let back = &self.basis * z;
        for p in 0..rows.nrows() {
            for a in 0..r {
                rows[(p, a)] = back[(a, p)].re;
            }
        }
    }

    pub fn matrix(&self, s: f64) -> DMatrix<f64> {
        let r = self.dim();
        let phases = DMatrix::from_fn(r, r, |a, b| {
            if a == b {
                let p = -s * self.eigenvalues[a];
                Complex64::new(p.cos(), p.sin())
            } else {
                Complex64::new(0.0, 0.0)
            }
        });
        (&self.basis * phases * self.basis.adjoint()).map(|z| z.re)
    }
}

/// Orthogonal matrix `exp(G)` for a real antisymmetric `G`.
pub fn expm_skew(g: &DMatrix<f64>) -> DMatrix<f64> {
    antisymmetric_part(g).exp()
}

/// Integrates the autonomous ODE `y' = op(y)` with classical RK4,
/// sub-stepped so that `h * bound <= max_step_norm`. `bound` must dominate
/// the norm of the Jacobian of `op` along the solution.
pub fn rk4<F>(y0: &DMatrix<f64>, op: F, bound: f64, tau: f64, max_step_norm: f64) -> DMatrix<f64>
where
    F: Fn(&DMatrix<f64>) -> DMatrix<f64>,
{
    if tau == 0.0 {
        return y0.clone();
    }
    let needed = (tau.abs() * bound / max_step_norm).ceil();
    if !needed.is_finite() || needed > MAX_RK4_STEPS {
        // a blown-up operator: hand the failure on instead of looping forever
        return y0.map(|_| f64::NAN);
    }
    let steps = (needed as usize).max(1);
    let h = tau / steps as f64;
    let mut y = y0.clone();
    for _ in 0..steps {
        let k1 = op(&y);
        let k2 = op(&(&y + &k1 * (0.5 * h)));
        let k3 = op(&(&y + &k2 * (0.5 * h)));
        let k4 = op(&(&y + &k3 * h));
        y += (k1 + (k2 + k3) * 2.0 + k4) * (h / 6.0);
    }
    y
}

/// Step-norm bound for [`rk4`]: for skew generators RK4 loses about
/// `(h |G|)^6 / 72` of the norm per step, which stays at roundoff level here.
pub const RK4_STEP_NORM: f64 = 5e-3;

const MAX_RK4_STEPS: f64 = 1e6;

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_skew(r: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = DMatrix::from_fn(r, r, |_, _| rng.gen_range(-1.0..1.0));
        antisymmetric_part(&a)
    }

    #[test]
    fn svd_of_a_small_skew_coupling() {
        // faer does not converge on this table unless it is rescaled
        #[rustfmt::skip]
        let entries = [
            -2.0194839173657902e-27, 5.684557918950801e-13, -4.568005402103202e-18, -4.0177870875983e-7, -3.515017840256499e-7, 1.0935869711590754e-11, 5.821011220235947e-12, -1.5985822716424184e-7, 3.3337063641408207e-7, 3.5202665025338358e-9,
            -5.684557918962166e-13, -1.5615275689086673e-22, 1.4074838401290209e-11, 7.39648453224446e-11, -9.217626662526346e-11, -2.2667855175467817e-6, 8.14494201428027e-6, 3.394479288490106e-10, -9.140536269848802e-9, -3.8505330133087524e-7,
            4.568005400564199e-18, -1.4074838396438656e-11, -5.610110166570826e-22, -1.8184121145608328e-12, 3.6809293542598357e-11, -1.812572393685362e-6, 1.0371252848903042e-5, -1.2370054404117329e-9, 2.293530854018032e-9, 1.9021826272149905e-6,
            4.0177870875983034e-7, -7.396484532299933e-11, 1.8184121145707333e-12, -3.705769144237564e-22, -5.554067135793532e-7, -7.916079188112342e-11, 1.4876926628703345e-10, -2.4682835466462865e-6, -2.0842091407125415e-6, -1.2791549144473984e-8,
            3.515017840256499e-7, 9.21762666253144e-11, -3.680929354317305e-11, 5.554067135793553e-7, -1.465764045443965e-21, -6.234496816120892e-11, 1.6844030780964624e-10, 2.824811432996336e-6, -1.8199350922418325e-6, -2.3338525999246874e-8,
            -1.0935869711587821e-11, 2.266785517546782e-6, 1.8125723936853616e-6, 7.916079188122523e-11, 6.234496816117504e-11, 1.0587911840678754e-22, -8.230726711530388e-7, 6.722104236884153e-10, 1.3322670576300125e-9, -1.1595545933481447e-6,
            -5.821011220234997e-12, -8.144942014280266e-6, -1.0371252848903034e-5, -1.4876926628717394e-10, -1.6844030780984915e-10, 8.230726711530424e-7, 1.2705494208814505e-21, -1.9596696127364572e-9, -3.6321305653557777e-9, -1.0032894863393486e-5,
            1.5985822716424194e-7, -3.394479288486507e-10, 1.2370054404119467e-9, 2.468283546646286e-6, -2.824811432996335e-6, -6.722104236884981e-10, 1.959669612736578e-9, 3.044024654195142e-22, 3.8325008783508374e-7, 1.864747172834273e-8,
            -3.3337063641408196e-7, 9.14053626984908e-9, -2.2935308540177816e-9, 2.0842091407125402e-6, 1.8199350922418344e-6, -1.3322670576301149e-9, 3.632130565355917e-9, -3.8325008783508353e-7, -1.138200522872966e-21, -2.4169659800857738e-8,
            -3.5202665025338312e-9, 3.850533013308744e-7, -1.9021826272149905e-6, 1.2791549144474264e-8, 2.3338525999246864e-8, 1.159554593348146e-6, 1.0032894863393492e-5, -1.864747172834269e-8, 2.4169659800857993e-8, 1.707300784309449e-21,
        ];
        let a = DMatrix::from_row_slice(10, 10, &entries);
        let (u, sigma, v) = svd(&a);
        let back = &u * DMatrix::from_diagonal(&DVector::from_vec(sigma.clone())) * v.transpose();
        assert!((back - &a).amax() < 1e-13 * a.amax());
        assert!((sigma[0] - a.singular_values()[0]).abs() < 1e-13 * sigma[0]);
        let (lambda, t) = symmetric_eigen(&(a.transpose() * &a));
        assert!((lambda.max() - sigma[0] * sigma[0]).abs() < 1e-13 * sigma[0] * sigma[0]);
        assert!((t.transpose() * &t - DMatrix::identity(10, 10)).amax() < 1e-12);
    }

    #[test]
    fn qr_of_a_rank_deficient_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut a = DMatrix::from_fn(12, 4, |_, _| rng.gen_range(-1.0..1.0));
        let dup = a.column(0) * 2.0;
        a.set_column(2, &dup);
        let (q, r) = qr(&a);
        assert!((q.transpose() * &q - DMatrix::identity(4, 4)).amax() < 1e-14);
        assert!((&q * &r - &a).amax() < 1e-14);
        assert!((0..4).all(|i| r[(i, i)] >= 0.0));
        assert!(r[(2, 2)] < 1e-14);
    }

    #[test]
    fn svd_of_exactly_separable_table() {
        let p: Vec<f64> = (0..32).map(|i| i as f64 * 2.0 * std::f64::consts::PI / 32.0).collect();
        let t = DMatrix::from_fn(32, 32, |i, j| (p[i].sin() + p[j].cos()).exp() * 0.1);
        let (u, s, v) = svd(&t);
        let r = &u.columns(0, 1) * s[0] * v.columns(0, 1).transpose();
        assert!((r - &t).norm() < 1e-12);
        assert!(s[1] < 1e-13);
        let (u, s, v) = svd(&DMatrix::from_row_slice(2, 3, &[3.0, 0.0, 0.0, 0.0, 0.0, -2.0]));
        assert_eq!(s.len(), 2);
        assert!((s[0] - 3.0).abs() < 1e-15 && (s[1] - 2.0).abs() < 1e-15);
        assert_eq!((u.nrows(), v.nrows()), (2, 3));
    }

    #[test]
    fn skew_exponential_matches_expm() {
        let g = random_skew(5, 1);
        let se = SkewExponential::new(&g);
        let direct = expm_skew(&(&g * 0.7));
        assert!((se.matrix(0.7) - &direct).amax() < 1e-13);
        let orth = direct.transpose() * &direct;
        assert!((orth - DMatrix::identity(5, 5)).amax() < 1e-13);
    }

    #[test]
    fn skew_exponential_on_graded_entries() {
        // entries spread over many decades, as in couplings with tiny singular values
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = DMatrix::from_fn(10, 10, |i, j| rng.gen_range(-1.0..1.0) * 10f64.powi(-((i + j) as i32)));
        let g = antisymmetric_part(&a);
        let se = SkewExponential::new(&g);
        let m = se.matrix(12.5);
        assert!((m.transpose() * &m - DMatrix::identity(10, 10)).amax() < 1e-14);
        assert!((m - expm_skew(&(&g * 12.5))).amax() < 1e-13);
        let (lambda, t) = symmetric_eigen(&(&a + a.transpose()));
        assert!((t.transpose() * &t - DMatrix::identity(10, 10)).amax() < 1e-14);
        let back = &t * DMatrix::from_diagonal(&lambda) * t.transpose();
        assert!((back - (&a + a.transpose())).amax() < 1e-14);
    }

    #[test]
    fn rk4_on_a_quadratic_ode() {
        let y0 = DMatrix::from_element(1, 1, 0.5);
        let y = rk4(&y0, |y| y.map(|v| v * v), 2.0, 1.0, RK4_STEP_NORM);
        assert!((y[(0, 0)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn apply_rows_uses_per_row_scale() {
        let g = random_skew(3, 2);
        let se = SkewExponential::new(&g);
        let mut rows = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, -1.0, 0.5, 0.25]);
        let orig = rows.clone();
        se.apply_rows(&mut rows, &[0.3, -1.2]);
        for (p, s) in [0.3, -1.2].iter().enumerate() {
            let expected = expm_skew(&(&g * *s)) * orig.row(p).transpose();
            for a in 0..3 {
                assert!((rows[(p, a)] - expected[a]).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn rk4_matches_exponential() {
        let g = random_skew(4, 3);
        let y0 = DMatrix::from_fn(4, 1, |i, _| i as f64 + 1.0);
        let y = rk4(&y0, |y| &g * y, spectral_norm(&g), 0.4, RK4_STEP_NORM);
        let exact = expm_skew(&(&g * 0.4)) * &y0;
        // phase error is (h |G|)^5 / 120 per step, the norm defect one order higher
        let err = (&y - &exact).amax();
        assert!(err < 1e-10, "err {err}");
        assert!((y.norm() - y0.norm()).abs() < 1e-13);
    }
}
