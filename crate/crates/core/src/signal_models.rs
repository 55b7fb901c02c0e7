//! Rational models of the time-varying linear term and the signals they generate.

use std::f64::consts::PI;

use nalgebra::DVector;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::poly;

/// Slack on the unit-circle stability test for model roots.
pub const ROOT_TOLERANCE: f64 = 1e-9;

/// Monic denominator `z^m + b_{m-1} z^{m-1} + ... + b_0` of the Z-transform of `b_k`.
///
/// Coefficients are stored in ascending powers (`b_0` first) without the
/// leading one. Every root lies in the closed unit disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct InternalModel {
    coeffs: Vec<f64>,
}

impl InternalModel {
    pub fn new(coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.is_empty() {
            return Err(Error::Config("internal model must have degree >= 1".into()));
        }
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::Config("internal model coefficients must be finite".into()));
        }
        let modulus = poly::max_root_modulus(&poly::monic_full(&coeffs));
        if modulus > 1.0 + ROOT_TOLERANCE {
            return Err(Error::UnstableModel { modulus });
        }
        Ok(Self { coeffs })
    }

    /// Builds the monic polynomial with the given real-or-conjugate-paired roots.
    pub fn from_factors(factors: &[Vec<f64>]) -> Result<Self> {
        let mut acc: Vec<f64> = Vec::new();
        for f in factors {
            acc = if acc.is_empty() { f.clone() } else { poly_multiply(&acc, f) };
        }
        Self::new(acc)
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len()
    }

    /// Lower coefficients `b_0, ..., b_{m-1}`.
    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// Full ascending coefficient vector including the leading one.
    pub fn full_coeffs(&self) -> Vec<f64> {
        poly::monic_full(&self.coeffs)
    }

    pub fn roots(&self) -> Vec<Complex64> {
        poly::roots(&self.full_coeffs())
    }

    pub fn eval(&self, z: Complex64) -> Complex64 {
        poly::eval(&self.full_coeffs(), z)
    }
}

impl TryFrom<Vec<f64>> for InternalModel {
    type Error = Error;

    fn try_from(coeffs: Vec<f64>) -> Result<Self> {
        Self::new(coeffs)
    }
}

impl From<InternalModel> for Vec<f64> {
    fn from(m: InternalModel) -> Self {
        m.coeffs
    }
}

/// Product of two monic polynomials given by their lower coefficients.
pub fn poly_multiply(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut full = poly::convolve(&poly::monic_full(a), &poly::monic_full(b));
    full.pop();
    full
}

/// Lower coefficients of `z^2 - 2 cos(angle) z + 1`.
pub fn resonator(angle: f64) -> Vec<f64> {
    vec![1.0, -2.0 * angle.cos()]
}

/// Lower coefficients of `z - 1`.
pub fn integrator() -> Vec<f64> {
    vec![-1.0]
}

/// Sampling interval and horizon of an experiment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplingConfig {
    ts: f64,
    horizon: usize,
}

impl SamplingConfig {
    pub fn new(ts: f64, horizon: usize) -> Result<Self> {
        if !(ts > 0.0 && ts.is_finite()) {
            return Err(Error::Config(format!("sampling interval must be > 0, got {ts}")));
        }
        if horizon == 0 {
            return Err(Error::Config("horizon must be >= 1".into()));
        }
        Ok(Self { ts, horizon })
    }

    pub fn ts(&self) -> f64 {
        self.ts
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }
}

/// One impulse `a_i δ(k - k_i)` exciting a piecewise signal.
#[derive(Debug, Clone, PartialEq)]
pub struct Impulse {
    pub step: usize,
    pub amplitude: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SignalKind {
    /// `k Ts b̄`
    Ramp { direction: DVector<f64> },
    /// `sin(ω k Ts) 1`
    Sine { omega: f64 },
    /// `sin(ω k Ts) 1 + k Ts b̄`
    SineRamp { omega: f64, direction: DVector<f64> },
    /// `sin²(ω k Ts) 1`
    SineSquared { omega: f64 },
    /// `b̄`
    Constant { direction: DVector<f64> },
    /// Output of `1/B_D(z)` driven by a train of vector impulses.
    PiecewiseImpulse {
        model: InternalModel,
        impulses: Vec<Impulse>,
    },
}

/// A validated description of the signal `b_k` in dimension `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalSpec {
    n: usize,
    kind: SignalKind,
}

impl SignalSpec {
    pub fn new(n: usize, kind: SignalKind) -> Result<Self> {
        if n == 0 {
            return Err(Error::Config("signal dimension must be >= 1".into()));
        }
        let check_omega = |omega: f64| {
            if omega > 0.0 && omega.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("omega must be > 0, got {omega}")))
            }
        };
        let check_dir = |d: &DVector<f64>| {
            if d.len() == n {
                Ok(())
            } else {
                Err(Error::DimensionMismatch { expected: n, found: d.len() })
            }
        };
        match &kind {
            SignalKind::Ramp { direction } | SignalKind::Constant { direction } => check_dir(direction)?,
            SignalKind::Sine { omega } | SignalKind::SineSquared { omega } => check_omega(*omega)?,
            SignalKind::SineRamp { omega, direction } => {
                check_omega(*omega)?;
                check_dir(direction)?;
            }
            SignalKind::PiecewiseImpulse { impulses, .. } => {
                for pair in impulses.windows(2) {
                    if pair[1].step <= pair[0].step {
                        return Err(Error::Config("impulse steps must be strictly increasing".into()));
                    }
                }
                for imp in impulses {
                    check_dir(&imp.amplitude)?;
                }
            }
        }
        Ok(Self { n, kind })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn kind(&self) -> &SignalKind {
        &self.kind
    }

    /// Same signal with a different frequency; `None` for kinds without one.
    pub fn with_omega(&self, omega: f64) -> Option<Result<Self>> {
        let kind = match &self.kind {
            SignalKind::Sine { .. } => SignalKind::Sine { omega },
            SignalKind::SineSquared { .. } => SignalKind::SineSquared { omega },
            SignalKind::SineRamp { direction, .. } => SignalKind::SineRamp {
                omega,
                direction: direction.clone(),
            },
            _ => return None,
        };
        Some(Self::new(self.n, kind))
    }

    pub fn label(&self) -> &'static str {
        match self.kind {
            SignalKind::Ramp { .. } => "ramp",
            SignalKind::Sine { .. } => "sine",
            SignalKind::SineRamp { .. } => "sine_ramp",
            SignalKind::SineSquared { .. } => "sine_squared",
            SignalKind::Constant { .. } => "constant",
            SignalKind::PiecewiseImpulse { .. } => "piecewise_impulse",
        }
    }
}

/// Value of `b_k` for `0 <= k < horizon`.
pub fn generate_b(spec: &SignalSpec, cfg: &SamplingConfig, k: usize) -> Result<DVector<f64>> {
    if k >= cfg.horizon() {
        return Err(Error::Config(format!(
            "step {k} outside horizon {}",
            cfg.horizon()
        )));
    }
    let n = spec.n();
    let t = k as f64 * cfg.ts();
    Ok(match spec.kind() {
        SignalKind::Ramp { direction } => direction * t,
        SignalKind::Sine { omega } => DVector::from_element(n, (omega * t).sin()),
        SignalKind::SineRamp { omega, direction } => {
            direction * t + DVector::from_element(n, (omega * t).sin())
        }
        SignalKind::SineSquared { omega } => DVector::from_element(n, (omega * t).sin().powi(2)),
        SignalKind::Constant { direction } => direction.clone(),
        SignalKind::PiecewiseImpulse { model, impulses } => {
            let mut filter = ImpulseFilter::new(model, n);
            for step in 0..k {
                filter.advance(impulses, step);
            }
            filter.output()
        }
    })
}

/// All of `b_0, ..., b_{horizon-1}`.
pub fn generate_sequence(spec: &SignalSpec, cfg: &SamplingConfig) -> Vec<DVector<f64>> {
    match spec.kind() {
        SignalKind::PiecewiseImpulse { model, impulses } => {
            let mut filter = ImpulseFilter::new(model, spec.n());
            (0..cfg.horizon())
                .map(|k| {
                    let y = filter.output();
                    filter.advance(impulses, k);
                    y
                })
                .collect()
        }
        _ => (0..cfg.horizon())
            .map(|k| generate_b(spec, cfg, k).expect("k within horizon"))
            .collect(),
    }
}

/// Companion-form realization of `1/B_D(z)` applied blockwise to n-vectors.
struct ImpulseFilter<'a> {
    model: &'a InternalModel,
    state: Vec<DVector<f64>>,
}

impl<'a> ImpulseFilter<'a> {
    fn new(model: &'a InternalModel, n: usize) -> Self {
        Self {
            model,
            state: vec![DVector::zeros(n); model.degree()],
        }
    }

    fn output(&self) -> DVector<f64> {
        self.state[0].clone()
    }

    fn advance(&mut self, impulses: &[Impulse], step: usize) {
        let n = self.state[0].len();
        let mut last = DVector::zeros(n);
        for (b, w) in self.model.coeffs().iter().zip(&self.state) {
            last.axpy(-b, w, 1.0);
        }
        if let Ok(idx) = impulses.binary_search_by_key(&step, |imp| imp.step) {
            last += &impulses[idx].amplitude;
        }
        self.state.rotate_left(1);
        let m = self.state.len();
        self.state[m - 1] = last;
    }
}

/// Minimal annihilating denominator for the signal kinds with a closed form.
pub fn denominator_for(spec: &SignalSpec, cfg: &SamplingConfig) -> Result<InternalModel> {
    let ts = cfg.ts();
    let coeffs = match spec.kind() {
        SignalKind::Ramp { .. } => poly_multiply(&integrator(), &integrator()),
        SignalKind::Constant { .. } => integrator(),
        SignalKind::Sine { omega } => resonator(omega * ts),
        SignalKind::SineRamp { omega, .. } => poly_multiply(
            &poly_multiply(&integrator(), &integrator()),
            &resonator(omega * ts),
        ),
        // sin² = (1 - cos 2u) / 2
        SignalKind::SineSquared { omega } => poly_multiply(&integrator(), &resonator(2.0 * omega * ts)),
        SignalKind::PiecewiseImpulse { .. } => {
            return Err(Error::UnsupportedDerivation("piecewise impulse signals".into()))
        }
    };
    InternalModel::new(coeffs)
}

/// `(z - 1) ∏_{l=1}^{L} (z² - 2 cos(lθ) z + 1)` with `θ = 2π Ts / P`.
pub fn periodic_internal_model(period: f64, cfg: &SamplingConfig, harmonics: usize) -> Result<InternalModel> {
    if !(period > 0.0 && period.is_finite()) {
        return Err(Error::Config(format!("period must be > 0, got {period}")));
    }
    if harmonics == 0 {
        return Err(Error::Config("harmonic count must be >= 1".into()));
    }
    let theta = 2.0 * PI * cfg.ts() / period;
    let mut coeffs = integrator();
    for l in 1..=harmonics {
        let angle = l as f64 * theta;
        if angle >= PI {
            return Err(Error::Aliasing { harmonic: l, angle });
        }
        coeffs = poly_multiply(&coeffs, &resonator(angle));
    }
    InternalModel::new(coeffs)
}
