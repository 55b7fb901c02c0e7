//! Problem families with gradient oracles and solution oracles.
//!
//! Solution oracles are only used to measure tracking error; the algorithms
//! see a problem through [`GradientOracle`] alone.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::analysis::PerturbationBounds;
use crate::error::{Error, Result};
use crate::online_algorithms::GradientOracle;
use crate::signal_models::{generate_sequence, SamplingConfig, SignalKind, SignalSpec};
use crate::synthesis::SpectralBounds;

/// Random streams drawn from one seed.
const STREAM_BASIS: u64 = 0;
const STREAM_EIGS: u64 = 1;

pub const NEWTON_TOL: f64 = 1e-12;
pub const NEWTON_MAX_ITER: usize = 100;

/// A cost sequence whose tracking error can be measured.
pub trait Problem: GradientOracle {
    /// ‖x - x_k*‖, or the distance to the solution set when it is not a point.
    fn tracking_error(&self, k: usize, x: &DVector<f64>) -> Result<f64>;
}

pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Orthogonal factor of a seeded standard Gaussian matrix.
pub fn random_orthogonal(n: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    let g = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    g.qr().q()
}

/// Uniform entries in [-1, 1].
pub fn random_uniform_vector(n: usize, rng: &mut impl Rng) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(-1.0..=1.0))
}

/// `n` values uniform in [lo, hi] including both endpoints, ascending.
fn spread(n: usize, lo: f64, hi: f64, rng: &mut impl Rng) -> Vec<f64> {
    let mut v = match n {
        0 => vec![],
        1 => vec![lo],
        _ => {
            let mut v = vec![lo, hi];
            v.extend((2..n).map(|_| if hi > lo { rng.random_range(lo..=hi) } else { lo }));
            v
        }
    };
    v.sort_by(f64::total_cmp);
    v
}

fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch { expected, found });
    }
    Ok(())
}

fn horizon_check(k: usize, horizon: usize) -> Result<()> {
    if k >= horizon {
        return Err(Error::Config(format!("step {k} is beyond the horizon {horizon}")));
    }
    Ok(())
}

/// f_k(x) = ½ xᵀ A x + xᵀ b_k with A = V diag(eigs) Vᵀ.
///
/// Zero eigenvalues give the convex variant; b_k is then projected onto
/// range(A) and the tracking error is the distance to the solution set.
#[derive(Debug, Clone)]
pub struct QuadraticProblem {
    v: DMatrix<f64>,
    eigs: DVector<f64>,
    a: DMatrix<f64>,
    a_pinv: DMatrix<f64>,
    rank: usize,
    signal: SignalSpec,
    b: Vec<DVector<f64>>,
}

impl QuadraticProblem {
    pub fn new(v: DMatrix<f64>, eigs: Vec<f64>, signal: SignalSpec, cfg: &SamplingConfig) -> Result<Self> {
        let n = eigs.len();
        if n == 0 {
            return Err(Error::Config("problem dimension must be >= 1".into()));
        }
        check_dim(n, v.nrows())?;
        check_dim(n, v.ncols())?;
        check_dim(n, signal.n())?;
        let orth = (v.transpose() * &v - DMatrix::identity(n, n)).amax();
        if orth > 1e-10 {
            return Err(Error::Config(format!("basis is not orthogonal (deviation {orth:e})")));
        }
        if eigs.iter().any(|&l| !(l >= 0.0 && l.is_finite())) {
            return Err(Error::Config("eigenvalues must be finite and nonnegative".into()));
        }
        let eigs = DVector::from_vec(eigs);
        let inv = eigs.map(|l| if l > 0.0 { 1.0 / l } else { 0.0 });
        let a = &v * DMatrix::from_diagonal(&eigs) * v.transpose();
        let a_pinv = &v * DMatrix::from_diagonal(&inv) * v.transpose();
        let rank = eigs.iter().filter(|&&l| l > 0.0).count();

        let mut b = generate_sequence(&signal, cfg);
        if rank < n {
            // keep only the components along nonzero-eigenvalue directions
            let range = DMatrix::from_fn(n, n, |i, j| if i == j && eigs[i] > 0.0 { 1.0 } else { 0.0 });
            let proj = &v * range * v.transpose();
            for bk in &mut b {
                *bk = &proj * &*bk;
            }
        }
        Ok(Self { v, eigs, a, a_pinv, rank, signal, b })
    }

    pub fn v(&self) -> &DMatrix<f64> {
        &self.v
    }

    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigs
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    /// Moore-Penrose pseudo-inverse of A (the inverse when A is nonsingular).
    pub fn a_pinv(&self) -> &DMatrix<f64> {
        &self.a_pinv
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn signal(&self) -> &SignalSpec {
        &self.signal
    }

    pub fn horizon(&self) -> usize {
        self.b.len()
    }

    pub fn b(&self, k: usize) -> Result<&DVector<f64>> {
        horizon_check(k, self.b.len())?;
        Ok(&self.b[k])
    }

    /// -A⁻¹ b_k; in the convex variant the minimum-norm solution -A⁺ b_k.
    pub fn solution(&self, k: usize) -> Result<DVector<f64>> {
        Ok(-(&self.a_pinv * self.b(k)?))
    }

    /// Minimum-norm solution and the projector I - A⁺A onto the solution set's directions.
    pub fn solution_set(&self, k: usize) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let n = self.eigs.len();
        let proj = DMatrix::identity(n, n) - &self.a_pinv * &self.a;
        Ok((self.solution(k)?, proj))
    }

    /// ‖A⁺(Ax + b_k)‖.
    pub fn distance_to_solution(&self, k: usize, x: &DVector<f64>) -> Result<f64> {
        let e = &self.a * x + self.b(k)?;
        Ok((&self.a_pinv * e).norm())
    }
}

impl GradientOracle for QuadraticProblem {
    fn dim(&self) -> usize {
        self.eigs.len()
    }

    fn gradient(&self, k: usize, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(self.dim(), x.len())?;
        Ok(&self.a * x + self.b(k)?)
    }
}

impl Problem for QuadraticProblem {
    fn tracking_error(&self, k: usize, x: &DVector<f64>) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        if self.rank == self.dim() {
            Ok((x + &self.a_pinv * self.b(k)?).norm())
        } else {
            self.distance_to_solution(k, x)
        }
    }
}

/// Seeded strongly convex quadratic with eigenvalues spanning `bounds`.
pub fn random_quadratic(n: usize, bounds: &SpectralBounds, signal: SignalSpec, cfg: &SamplingConfig, seed: u64) -> Result<QuadraticProblem> {
    random_convex_quadratic(n, n, bounds, signal, cfg, seed)
}

/// Seeded quadratic of rank `rank`; its nonzero eigenvalues span `bounds`.
pub fn random_convex_quadratic(
    n: usize,
    rank: usize,
    bounds: &SpectralBounds,
    signal: SignalSpec,
    cfg: &SamplingConfig,
    seed: u64,
) -> Result<QuadraticProblem> {
    if n == 0 || rank == 0 || rank > n {
        return Err(Error::Config(format!("need 1 <= rank <= n, got rank {rank}, n {n}")));
    }
    let v = random_orthogonal(n, &mut seeded_rng(seed, STREAM_BASIS));
    let mut eigs = spread(rank, bounds.min(), bounds.max(), &mut seeded_rng(seed, STREAM_EIGS));
    eigs.resize(n, 0.0);
    QuadraticProblem::new(v, eigs, signal, cfg)
}

/// Quadratic with Hessian A_k = A + V diag(sin(ω k Ts) d) Vᵀ and constant linear term.
#[derive(Debug, Clone)]
pub struct TvHessianProblem {
    base: QuadraticProblem,
    d: DVector<f64>,
    omega: f64,
    ts: f64,
    b: DVector<f64>,
    vt_b: DVector<f64>,
}

impl TvHessianProblem {
    /// Checks that A ± V diag(d) Vᵀ keeps its eigenvalues in `bounds`.
    pub fn new(base: QuadraticProblem, d: Vec<f64>, omega: f64, bounds: &SpectralBounds, cfg: &SamplingConfig) -> Result<Self> {
        let n = base.dim();
        check_dim(n, d.len())?;
        if !(omega > 0.0 && omega.is_finite()) {
            return Err(Error::Config(format!("omega must be > 0, got {omega}")));
        }
        let b = match base.signal().kind() {
            SignalKind::Constant { .. } => base.b(0)?.clone(),
            _ => return Err(Error::Config("time-varying Hessian problems take a constant linear term".into())),
        };
        for (l, di) in base.eigenvalues().iter().zip(&d) {
            for s in [-1.0, 1.0] {
                let e = l + s * di;
                if e < bounds.min() - 1e-12 || e > bounds.max() + 1e-12 {
                    return Err(Error::Config(format!(
                        "perturbed eigenvalue {e} leaves [{}, {}]",
                        bounds.min(),
                        bounds.max()
                    )));
                }
            }
        }
        let vt_b = base.v().transpose() * &b;
        Ok(Self { base, d: DVector::from_vec(d), omega, ts: cfg.ts(), b, vt_b })
    }

    /// Base eigenvalues uniform in [λ_min + γ0, λ_max - γ0], in decreasing
    /// order, paired with the decreasing perturbation d_i = γ0 (n - i)/n.
    pub fn random(
        n: usize,
        bounds: &SpectralBounds,
        gamma0: f64,
        omega: f64,
        b: DVector<f64>,
        cfg: &SamplingConfig,
        seed: u64,
    ) -> Result<Self> {
        if n == 0 {
            return Err(Error::Config("problem dimension must be >= 1".into()));
        }
        if !(gamma0 >= 0.0 && 2.0 * gamma0 <= bounds.max() - bounds.min()) {
            return Err(Error::Config(format!(
                "perturbation size {gamma0} must lie in [0, (lambda_max - lambda_min)/2]"
            )));
        }
        let v = random_orthogonal(n, &mut seeded_rng(seed, STREAM_BASIS));
        let mut eigs = spread(n, bounds.min() + gamma0, bounds.max() - gamma0, &mut seeded_rng(seed, STREAM_EIGS));
        eigs.reverse();
        let d = (0..n).map(|i| gamma0 * (n - i) as f64 / n as f64).collect();
        let signal = SignalSpec::new(n, SignalKind::Constant { direction: b })?;
        let base = QuadraticProblem::new(v, eigs, signal, cfg)?;
        Self::new(base, d, omega, bounds, cfg)
    }

    pub fn base(&self) -> &QuadraticProblem {
        &self.base
    }

    pub fn d(&self) -> &DVector<f64> {
        &self.d
    }

    /// Eigenvalues of A_k.
    pub fn eigenvalues_at(&self, k: usize) -> DVector<f64> {
        let s = self.phase(k);
        self.base.eigenvalues() + &self.d * s
    }

    fn phase(&self, k: usize) -> f64 {
        (self.omega * k as f64 * self.ts).sin()
    }

    /// β = ‖b‖, δ = 0, γ = max |d_i|.
    pub fn perturbation_bounds(&self) -> Result<PerturbationBounds> {
        PerturbationBounds::new(self.b.norm(), 0.0, self.d.amax())
    }

    pub fn solution(&self, k: usize) -> Result<DVector<f64>> {
        horizon_check(k, self.base.horizon())?;
        let eigs = self.eigenvalues_at(k);
        let y = self.vt_b.component_div(&eigs);
        Ok(-(self.base.v() * y))
    }
}

impl GradientOracle for TvHessianProblem {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn gradient(&self, k: usize, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(self.dim(), x.len())?;
        horizon_check(k, self.base.horizon())?;
        let y = (self.base.v().transpose() * x).component_mul(&self.eigenvalues_at(k));
        Ok(self.base.v() * y + &self.b)
    }
}

impl Problem for TvHessianProblem {
    fn tracking_error(&self, k: usize, x: &DVector<f64>) -> Result<f64> {
        Ok((x - self.solution(k)?).norm())
    }
}

fn logistic(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// f_k(x) = ½ xᵀ A x + ⟨b, x⟩ + sin(ω k Ts) log(1 + exp⟨c, x⟩).
#[derive(Debug, Clone)]
pub struct NonQuadraticProblem {
    a: DMatrix<f64>,
    a_inv: DMatrix<f64>,
    b: DVector<f64>,
    c: DVector<f64>,
    omega: f64,
    ts: f64,
    solutions: Vec<DVector<f64>>,
}

impl NonQuadraticProblem {
    /// Precomputes x_k* for the horizon by warm-started Newton iterations.
    pub fn new(
        a: DMatrix<f64>,
        lambda_min: f64,
        b: DVector<f64>,
        c: DVector<f64>,
        omega: f64,
        cfg: &SamplingConfig,
    ) -> Result<Self> {
        let n = b.len();
        check_dim(n, a.nrows())?;
        check_dim(n, a.ncols())?;
        check_dim(n, c.len())?;
        if ((c.norm() - 1.0).abs()) > 1e-12 {
            return Err(Error::Config(format!("c must have unit norm, got {}", c.norm())));
        }
        // the logistic term's curvature is at most 1/4
        if lambda_min <= 0.25 {
            return Err(Error::Config(format!(
                "lambda_min = {lambda_min} does not dominate the perturbation curvature 1/4"
            )));
        }
        if !(omega > 0.0 && omega.is_finite()) {
            return Err(Error::Config(format!("omega must be > 0, got {omega}")));
        }
        let a_inv = a
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Config("A is not positive definite".into()))?
            .inverse();
        let mut p = Self { a, a_inv, b, c, omega, ts: cfg.ts(), solutions: Vec::with_capacity(cfg.horizon()) };
        let mut x = -(&p.a_inv * &p.b);
        for k in 0..cfg.horizon() {
            x = p.newton(k, x)?;
            p.solutions.push(x.clone());
        }
        Ok(p)
    }

    /// Seeded instance: A as in [`random_quadratic`], b uniform in [-1, 1]ⁿ, c a random unit vector.
    pub fn random(n: usize, bounds: &SpectralBounds, omega: f64, cfg: &SamplingConfig, seed: u64) -> Result<Self> {
        let zero = SignalSpec::new(n, SignalKind::Constant { direction: DVector::zeros(n) })?;
        let one_step = SamplingConfig::new(cfg.ts(), 1)?;
        let q = random_quadratic(n, bounds, zero, &one_step, seed)?;
        let mut rng = seeded_rng(seed, 2);
        let b = random_uniform_vector(n, &mut rng);
        let c = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let c = &c / c.norm();
        Self::new(q.a().clone(), bounds.min(), b, c, omega, cfg)
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn c(&self) -> &DVector<f64> {
        &self.c
    }

    fn phase(&self, k: usize) -> f64 {
        (self.omega * k as f64 * self.ts).sin()
    }

    /// Gradient of the perturbation sin(ω k Ts) log(1 + exp⟨c, x⟩).
    pub fn perturbation_gradient(&self, k: usize, x: &DVector<f64>) -> DVector<f64> {
        &self.c * (self.phase(k) * logistic(self.c.dot(x)))
    }

    /// β = ‖b‖, δ = ‖c‖ = 1, γ = 0.
    pub fn perturbation_bounds(&self) -> Result<PerturbationBounds> {
        PerturbationBounds::new(self.b.norm(), self.c.norm(), 0.0)
    }

    /// The constant ‖c‖²/4 quoted for this cost family.
    pub fn quoted_delta(&self) -> f64 {
        self.c.norm_squared() / 4.0
    }

    pub fn solution(&self, k: usize) -> Result<&DVector<f64>> {
        horizon_check(k, self.solutions.len())?;
        Ok(&self.solutions[k])
    }

    fn raw_gradient(&self, k: usize, x: &DVector<f64>) -> DVector<f64> {
        &self.a * x + &self.b + self.perturbation_gradient(k, x)
    }

    /// Newton on f_k with Hessian A + μ ccᵀ, solved by Sherman-Morrison.
    fn newton(&self, k: usize, mut x: DVector<f64>) -> Result<DVector<f64>> {
        let s = self.phase(k);
        let a_inv_c = &self.a_inv * &self.c;
        let c_a_inv_c = self.c.dot(&a_inv_c);
        for _ in 0..NEWTON_MAX_ITER {
            let g = self.raw_gradient(k, &x);
            if g.norm() < NEWTON_TOL {
                return Ok(x);
            }
            let sig = logistic(self.c.dot(&x));
            let mu = s * sig * (1.0 - sig);
            let a_inv_g = &self.a_inv * &g;
            let step = &a_inv_g - &a_inv_c * (mu * self.c.dot(&a_inv_g) / (1.0 + mu * c_a_inv_c));
            x -= step;
        }
        let g = self.raw_gradient(k, &x).norm();
        if g < NEWTON_TOL {
            return Ok(x);
        }
        Err(Error::Oracle {
            step: k,
            reason: format!("Newton stopped after {NEWTON_MAX_ITER} iterations with gradient norm {g:e}"),
        })
    }
}

impl GradientOracle for NonQuadraticProblem {
    fn dim(&self) -> usize {
        self.b.len()
    }

    fn gradient(&self, k: usize, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(self.dim(), x.len())?;
        horizon_check(k, self.solutions.len())?;
        Ok(self.raw_gradient(k, x))
    }
}

impl Problem for NonQuadraticProblem {
    fn tracking_error(&self, k: usize, x: &DVector<f64>) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        Ok((x - self.solution(k)?).norm())
    }
}
