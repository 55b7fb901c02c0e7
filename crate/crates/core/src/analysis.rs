//! Frequency-domain norms, tracking-error bounds and trace metrics.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::poly;
use crate::signal_models::InternalModel;
use crate::synthesis::{Controller, SpectralBounds};

pub const DEFAULT_FREQ_GRID: usize = 4096;
pub const DEFAULT_LAMBDA_GRID: usize = 100;

/// Golden-section tolerance in θ and λ.
const REFINE_TOL: f64 = 1e-10;
/// Number of local grid peaks refined by golden section.
const REFINED_PEAKS: usize = 8;
const GOLDEN: f64 = 0.618_033_988_749_894_8;

/// Rational function num(z)/den(z), coefficients in ascending powers.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarTransferFunction {
    num: Vec<f64>,
    den: Vec<f64>,
}

impl ScalarTransferFunction {
    pub fn new(num: Vec<f64>, den: Vec<f64>) -> Result<Self> {
        if num.iter().chain(&den).any(|c| !c.is_finite()) {
            return Err(Error::Config("transfer function coefficients must be finite".into()));
        }
        if poly::trim(&den).is_empty() {
            return Err(Error::Config("transfer function denominator is zero".into()));
        }
        let num = if num.is_empty() { vec![0.0] } else { num };
        Ok(Self { num, den })
    }

    pub fn constant(c: f64) -> Self {
        Self { num: vec![c], den: vec![1.0] }
    }

    pub fn num(&self) -> &[f64] {
        &self.num
    }

    pub fn den(&self) -> &[f64] {
        &self.den
    }

    pub fn eval(&self, z: Complex64) -> Complex64 {
        poly::eval(&self.num, z) / poly::eval(&self.den, z)
    }

    fn gain(&self, theta: f64) -> f64 {
        self.eval(Complex64::from_polar(1.0, theta)).norm()
    }

    /// True if the denominator vanishes on the unit circle.
    pub fn has_unit_circle_pole(&self) -> bool {
        let den = poly::trim(&self.den);
        if den.len() <= 1 {
            return false;
        }
        let scale: f64 = den.iter().map(|c| c.abs()).sum();
        let roots = poly::roots(den);
        let clusters = poly::root_clusters(&roots, poly::CLUSTER_RADIUS);
        clusters.iter().any(|(c, _)| (c.norm() - 1.0).abs() <= 1e-9)
            || roots.iter().any(|r| {
                let z = Complex64::from_polar(1.0, r.arg());
                (r.norm() - 1.0).abs() < poly::CLUSTER_RADIUS && poly::eval(den, z).norm() <= 1e-9 * scale
            })
    }
}

/// Peak gain on the unit circle; `f64::INFINITY` for a unit-circle pole.
///
/// Real coefficients make the gain symmetric in θ, so the grid spans
/// [0, π] with the spacing of a `grid`-point grid on [0, 2π].
pub fn hinf_norm(tf: &ScalarTransferFunction, grid: usize) -> f64 {
    if tf.has_unit_circle_pole() {
        return f64::INFINITY;
    }
    let grid = grid.max(64);
    let step = 2.0 * PI / grid as f64;
    let half = grid / 2;
    let values: Vec<f64> = (0..=half).map(|i| tf.gain(i as f64 * step)).collect();
    if values.iter().any(|v| !v.is_finite()) {
        return f64::INFINITY;
    }
    let mut best = values.iter().copied().fold(0.0, f64::max);

    // local maxima, largest first
    let mut peaks: Vec<usize> = (0..values.len())
        .filter(|&i| {
            let left = if i == 0 { values[1.min(half)] } else { values[i - 1] };
            let right = if i == half { values[half.saturating_sub(1)] } else { values[i + 1] };
            values[i] >= left && values[i] >= right
        })
        .collect();
    peaks.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    for &i in peaks.iter().take(REFINED_PEAKS) {
        let lo = (i as f64 - 1.0) * step;
        let hi = (i as f64 + 1.0) * step;
        let (_, v) = golden_max(|t| tf.gain(t), lo, hi, REFINE_TOL);
        best = best.max(v);
    }
    best
}

/// Golden-section search for a maximum of a unimodal function on [lo, hi].
fn golden_max(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> (f64, f64) {
    let mut a = hi - GOLDEN * (hi - lo);
    let mut b = lo + GOLDEN * (hi - lo);
    let mut fa = f(a);
    let mut fb = f(b);
    while hi - lo > tol {
        if fa < fb {
            lo = a;
            a = b;
            fa = fb;
            b = lo + GOLDEN * (hi - lo);
            fb = f(b);
        } else {
            hi = b;
            b = a;
            fb = fa;
            a = hi - GOLDEN * (hi - lo);
            fa = f(a);
        }
    }
    if fa >= fb {
        (a, fa)
    } else {
        (b, fb)
    }
}

/// Scalar bounds on the loop transfer matrices over [λ_min, λ_max].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoopNorms {
    /// Bound on ‖(I - C A)⁻¹‖∞.
    pub n1: f64,
    /// Bound on ‖C (I - C A)⁻¹‖∞.
    pub n2: f64,
}

fn check_loop_stable(den: &[f64], lambda: f64) -> Result<()> {
    let modulus = poly::max_root_modulus(den);
    if modulus >= 1.0 - 1e-12 {
        return Err(Error::UnstableLoop { lambda, modulus });
    }
    Ok(())
}

/// Maximizes `norm_at(λ)` over a λ grid, then refines around the best grid points.
fn max_over_lambda(
    bounds: &SpectralBounds,
    lambda_grid: usize,
    norm_at: impl Fn(f64) -> Result<f64>,
) -> Result<f64> {
    let lambdas = bounds.grid(lambda_grid.max(2));
    let values = lambdas.iter().map(|&l| norm_at(l)).collect::<Result<Vec<_>>>()?;
    let mut best = values.iter().copied().fold(0.0, f64::max);
    if lambdas.len() < 3 || !best.is_finite() {
        return Ok(best);
    }
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    for &i in order.iter().take(3) {
        let lo = lambdas[i.saturating_sub(1)];
        let hi = lambdas[(i + 1).min(lambdas.len() - 1)];
        // stability already holds on the grid; off-grid failures only skip refinement
        let (_, v) = golden_max(|l| norm_at(l).unwrap_or(0.0), lo, hi, REFINE_TOL * (1.0 + hi));
        best = best.max(v);
    }
    Ok(best)
}

/// N1 = max_λ ‖B_D/(B_D - λC_N)‖∞ and N2 = max_λ ‖C_N/(B_D - λC_N)‖∞.
pub fn loop_norm_bounds(ctrl: &Controller, bounds: &SpectralBounds, lambda_grid: usize, freq_grid: usize) -> Result<LoopNorms> {
    let bd = ctrl.model().full_coeffs();
    let cn = ctrl.numerator();
    let at = |lambda: f64, num: &[f64]| -> Result<f64> {
        let den = ctrl.loop_polynomial(lambda);
        check_loop_stable(&den, lambda)?;
        Ok(hinf_norm(&ScalarTransferFunction { num: num.to_vec(), den }, freq_grid))
    };
    let n1 = max_over_lambda(bounds, lambda_grid, |l| at(l, &bd))?;
    let n2 = max_over_lambda(bounds, lambda_grid, |l| at(l, &cn))?;
    Ok(LoopNorms { n1, n2 })
}

/// Small-gain verdict and margin 1/γ - N2.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmallGain {
    pub holds: bool,
    pub margin: f64,
}

pub fn small_gain_check(norms: &LoopNorms, gamma: f64) -> SmallGain {
    if gamma <= 0.0 {
        return SmallGain { holds: true, margin: f64::INFINITY };
    }
    let margin = 1.0 / gamma - norms.n2;
    SmallGain { holds: margin > 0.0, margin }
}

/// Constants of a perturbed quadratic cost: ‖b_k‖ ≤ β, ‖∇φ'‖ ≤ δ, ‖∇φ''(x)‖ ≤ γ‖x‖.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerturbationBounds {
    beta: f64,
    delta: f64,
    gamma: f64,
}

impl PerturbationBounds {
    pub fn new(beta: f64, delta: f64, gamma: f64) -> Result<Self> {
        for (name, v) in [("beta", beta), ("delta", delta), ("gamma", gamma)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be finite and nonnegative, got {v}")));
            }
        }
        Ok(Self { beta, delta, gamma })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }
}

/// N1 (δ + βγN2) / (1 - γN2).
pub fn error_bound_general(norms: &LoopNorms, pert: &PerturbationBounds) -> Result<f64> {
    let product = pert.gamma * norms.n2;
    if product >= 1.0 {
        return Err(Error::SmallGainViolated { product });
    }
    let numer = pert.delta + pert.beta * product;
    if numer == 0.0 {
        return Ok(0.0);
    }
    Ok(norms.n1 * numer / (1.0 - product))
}

/// Coefficient difference between the true and the assumed model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelMismatch {
    delta: Vec<f64>,
}

impl ModelMismatch {
    pub fn new(truth: &InternalModel, assumed: &InternalModel) -> Result<Self> {
        if truth.degree() != assumed.degree() {
            return Err(Error::DimensionMismatch { expected: truth.degree(), found: assumed.degree() });
        }
        let delta = truth.coeffs().iter().zip(assumed.coeffs()).map(|(b, bh)| b - bh).collect();
        Ok(Self { delta })
    }

    pub fn delta_coeffs(&self) -> &[f64] {
        &self.delta
    }

    pub fn one_norm(&self) -> f64 {
        self.delta.iter().map(|d| d.abs()).sum()
    }
}

/// β · max_λ ‖1/(B̂_D - λC_N)‖∞ · ‖δ‖₁, with `ctrl` built on B̂_D.
pub fn error_bound_inexact(
    ctrl: &Controller,
    mismatch: &ModelMismatch,
    bounds: &SpectralBounds,
    beta: f64,
    lambda_grid: usize,
    freq_grid: usize,
) -> Result<f64> {
    if mismatch.delta.len() != ctrl.degree() {
        return Err(Error::DimensionMismatch { expected: ctrl.degree(), found: mismatch.delta.len() });
    }
    if mismatch.one_norm() == 0.0 || beta == 0.0 {
        return Ok(0.0);
    }
    let m = max_over_lambda(bounds, lambda_grid, |lambda| {
        let den = ctrl.loop_polynomial(lambda);
        check_loop_stable(&den, lambda)?;
        Ok(hinf_norm(&ScalarTransferFunction { num: vec![1.0], den }, freq_grid))
    })?;
    Ok(beta * m * mismatch.one_norm())
}

/// Per-step tracking errors of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackingTrace {
    errors: Vec<f64>,
    overflow: bool,
    metadata: BTreeMap<String, String>,
}

impl TrackingTrace {
    pub fn new(errors: Vec<f64>, overflow: bool, metadata: BTreeMap<String, String>) -> Self {
        Self { errors, overflow, metadata }
    }

    pub fn errors(&self) -> &[f64] {
        &self.errors
    }

    /// Set when the run diverged; entries after divergence hold `f64::MAX`.
    pub fn overflow(&self) -> bool {
        self.overflow
    }

    pub fn metadata(&self) -> &BTreeMap<String, String> {
        &self.metadata
    }

    pub fn metadata_mut(&mut self) -> &mut BTreeMap<String, String> {
        &mut self.metadata
    }
}

/// Maximum over the final ⌈4K/5⌉ entries; `f64::INFINITY` for a diverged run.
pub fn asymptotic_error(trace: &TrackingTrace) -> Result<f64> {
    let k = trace.errors.len();
    if k == 0 {
        return Err(Error::Config("empty trace".into()));
    }
    if trace.overflow {
        return Ok(f64::INFINITY);
    }
    let tail = (4 * k).div_ceil(5);
    Ok(trace.errors[k - tail..].iter().copied().fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tf(num: Vec<f64>, den: Vec<f64>) -> ScalarTransferFunction {
        ScalarTransferFunction::new(num, den).unwrap()
    }

    fn dense_oracle(t: &ScalarTransferFunction, points: usize) -> f64 {
        (0..points)
            .map(|i| t.gain(2.0 * PI * i as f64 / points as f64))
            .fold(0.0, f64::max)
    }

    fn trace(errors: Vec<f64>) -> TrackingTrace {
        TrackingTrace::new(errors, false, BTreeMap::new())
    }

    #[test]
    fn hinf_examples() {
        assert_eq!(hinf_norm(&ScalarTransferFunction::constant(1.0), 64), 1.0);
        let t = tf(vec![1.0], vec![-0.5, 1.0]);
        let v = hinf_norm(&t, 64);
        assert!((v - 2.0).abs() < 1e-9, "{v}");
        assert!((v - dense_oracle(&t, 1_000_000)).abs() < 1e-6);
        assert_eq!(hinf_norm(&tf(vec![1.0], vec![-1.0, 1.0]), 4096), f64::INFINITY);
        // double pole at 1 and resonator poles
        assert_eq!(hinf_norm(&tf(vec![1.0], vec![1.0, -2.0, 1.0]), 4096), f64::INFINITY);
        assert_eq!(hinf_norm(&tf(vec![1.0], vec![1.0, -2.0 * 0.1f64.cos(), 1.0]), 4096), f64::INFINITY);
    }

    #[test]
    fn hinf_refines_off_grid_peak() {
        // lightly damped resonance between grid points
        let r: f64 = 0.99;
        let w: f64 = 0.123_456;
        let t = tf(vec![1.0], vec![r * r, -2.0 * r * w.cos(), 1.0]);
        let v = hinf_norm(&t, 64);
        let oracle = dense_oracle(&t, 1_000_000);
        assert!(v >= oracle - 1e-9 * oracle, "{v} vs {oracle}");
        assert!(v <= oracle * (1.0 + 1e-6));
    }

    #[test]
    fn scalar_integrator_loop() {
        // B_D = z - 1, c_0 = -1/λ: loop B_D/(B_D - λC_N) = (z - 1)/z
        let ctrl = Controller::new(InternalModel::new(vec![-1.0]).unwrap(), vec![-0.5]).unwrap();
        let bounds = SpectralBounds::new(2.0, 2.0).unwrap();
        let norms = loop_norm_bounds(&ctrl, &bounds, 100, 4096).unwrap();
        assert!((norms.n1 - 2.0).abs() < 1e-9);
        let oracle = dense_oracle(&tf(vec![-1.0, 1.0], vec![0.0, 1.0]), 1_000_000);
        assert!((norms.n1 - oracle).abs() < 1e-6);
        // C(z)/(1 - λC) = -0.5/z
        assert!((norms.n2 - 0.5).abs() < 1e-12);
    }

    #[test]
    fn zero_controller_norms() {
        let ctrl = Controller::new(InternalModel::new(vec![0.0, 0.0]).unwrap(), vec![0.0, 0.0]).unwrap();
        let bounds = SpectralBounds::new(1.0, 10.0).unwrap();
        let norms = loop_norm_bounds(&ctrl, &bounds, 100, 4096).unwrap();
        assert_eq!(norms.n1, 1.0);
        assert_eq!(norms.n2, 0.0);
    }

    #[test]
    fn unstable_loop_reports_lambda() {
        let ctrl = Controller::new(InternalModel::new(vec![-1.0]).unwrap(), vec![-0.5]).unwrap();
        let bounds = SpectralBounds::new(1.0, 10.0).unwrap();
        match loop_norm_bounds(&ctrl, &bounds, 10, 256) {
            Err(Error::UnstableLoop { lambda, .. }) => assert!(lambda >= 4.0),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn small_gain_cases() {
        let norms = LoopNorms { n1: 3.0, n2: 0.8 };
        let s = small_gain_check(&norms, 0.0);
        assert!(s.holds && s.margin == f64::INFINITY);
        assert!(!small_gain_check(&norms, 2.0 / 0.8).holds);
        let s = small_gain_check(&norms, 0.5);
        assert!(s.holds && (s.margin - 1.2).abs() < 1e-15);
    }

    #[test]
    fn general_bound_reductions() {
        let norms = LoopNorms { n1: 3.0, n2: 0.8 };
        let zero = PerturbationBounds::new(5.0, 0.0, 0.0).unwrap();
        assert_eq!(error_bound_general(&norms, &zero).unwrap(), 0.0);
        let d = PerturbationBounds::new(5.0, 0.25, 0.0).unwrap();
        assert_eq!(error_bound_general(&norms, &d).unwrap(), 0.75);
        let g = PerturbationBounds::new(2.0, 0.0, 0.5).unwrap();
        assert!((error_bound_general(&norms, &g).unwrap() - 3.0 * 0.8 / 0.6).abs() < 1e-12);
        let bad = PerturbationBounds::new(2.0, 0.0, 2.0).unwrap();
        assert!(matches!(error_bound_general(&norms, &bad), Err(Error::SmallGainViolated { .. })));
        assert!(PerturbationBounds::new(-1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn mismatch_of_sine_models() {
        use crate::signal_models::resonator;
        let ts = 0.1;
        let truth = InternalModel::new(resonator(ts)).unwrap();
        let assumed = InternalModel::new(resonator(0.7 * ts)).unwrap();
        let mm = ModelMismatch::new(&truth, &assumed).unwrap();
        let expected = 2.0 * ((0.7 * ts).cos() - ts.cos()).abs();
        assert!((mm.one_norm() - expected).abs() < 1e-15);
        assert_eq!(mm.delta_coeffs()[0], 0.0);

        let exact = ModelMismatch::new(&truth, &truth).unwrap();
        let ctrl = Controller::new(truth, vec![0.1, -0.2]).unwrap();
        let bounds = SpectralBounds::new(1.0, 10.0).unwrap();
        assert_eq!(error_bound_inexact(&ctrl, &exact, &bounds, 7.0, 100, 4096).unwrap(), 0.0);
    }

    #[test]
    fn asymptotic_error_examples() {
        let t = trace(vec![5.0, 4.0, 3.0, 2.0, 1.0, 1.0, 1.0, 2.0, 1.0, 1.0]);
        assert_eq!(asymptotic_error(&t).unwrap(), 3.0);
        assert_eq!(asymptotic_error(&trace(vec![0.5; 7])).unwrap(), 0.5);
        let dec: Vec<f64> = (0..13).rev().map(|i| i as f64).collect();
        // K = 13, tail 11, first tail index 2
        assert_eq!(asymptotic_error(&trace(dec.clone())).unwrap(), dec[2]);
        let diverged = TrackingTrace::new(vec![1.0, f64::MAX], true, BTreeMap::new());
        assert_eq!(asymptotic_error(&diverged).unwrap(), f64::INFINITY);
        assert!(asymptotic_error(&trace(vec![])).is_err());
    }

    proptest::proptest! {
        #[test]
        fn refinement_is_monotone(
            r in 0.1f64..0.98,
            w in 0.0f64..3.1,
            z0 in -0.9f64..0.9,
            grid in 64usize..512,
        ) {
            let t = tf(vec![-z0, 1.0], vec![r * r, -2.0 * r * w.cos(), 1.0]);
            let a = hinf_norm(&t, grid);
            let b = hinf_norm(&t, 2 * grid);
            proptest::prop_assert!(b >= a - 1e-12 * (1.0 + a));
        }
    }
}
