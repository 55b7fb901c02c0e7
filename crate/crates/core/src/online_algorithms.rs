//! Control-based online update and the gradient baselines.

use std::collections::BTreeMap;

use nalgebra::DVector;

use crate::analysis::TrackingTrace;
use crate::error::{Error, Result};
use crate::problems::Problem;
use crate::signal_models::SamplingConfig;
use crate::synthesis::{Controller, SpectralBounds};

/// Errors beyond this magnitude mark a run as divergent.
pub const DIVERGENCE_THRESHOLD: f64 = 1e150;

/// Access to the cost sequence through gradients only.
pub trait GradientOracle {
    fn dim(&self) -> usize;

    /// Gradient of f_k at x.
    fn gradient(&self, k: usize, x: &DVector<f64>) -> Result<DVector<f64>>;
}

/// Auxiliary state blocks w_0..w_{m-1} and the iterate x.
#[derive(Debug, Clone, PartialEq)]
pub struct AlgorithmState {
    w: Vec<DVector<f64>>,
    x: DVector<f64>,
}

impl AlgorithmState {
    pub fn zeros(m: usize, n: usize) -> Self {
        Self { w: vec![DVector::zeros(n); m], x: DVector::zeros(n) }
    }

    /// Builds a state from blocks, with x = Σ c_i w_i.
    pub fn from_blocks(ctrl: &Controller, w: Vec<DVector<f64>>) -> Result<Self> {
        if w.len() != ctrl.degree() {
            return Err(Error::DimensionMismatch { expected: ctrl.degree(), found: w.len() });
        }
        let n = w.first().map_or(0, |b| b.len());
        if let Some(b) = w.iter().find(|b| b.len() != n) {
            return Err(Error::DimensionMismatch { expected: n, found: b.len() });
        }
        let x = combine(ctrl.gains(), &w, n);
        Ok(Self { w, x })
    }

    pub fn w(&self) -> &[DVector<f64>] {
        &self.w
    }

    pub fn x(&self) -> &DVector<f64> {
        &self.x
    }

    pub fn n(&self) -> usize {
        self.x.len()
    }

    /// In-place form of [`step_control`].
    pub fn advance(&mut self, ctrl: &Controller, g: &DVector<f64>) -> Result<()> {
        let m = ctrl.degree();
        let n = self.n();
        if self.w.len() != m {
            return Err(Error::DimensionMismatch { expected: m, found: self.w.len() });
        }
        if g.len() != n {
            return Err(Error::DimensionMismatch { expected: n, found: g.len() });
        }
        let b = ctrl.model().coeffs();
        let mut last = g.clone();
        for (bi, wi) in b.iter().zip(&self.w) {
            last.axpy(-bi, wi, 1.0);
        }
        self.w.rotate_left(1);
        self.w[m - 1] = last;
        self.x = combine(ctrl.gains(), &self.w, n);
        Ok(())
    }
}

fn combine(c: &[f64], w: &[DVector<f64>], n: usize) -> DVector<f64> {
    let mut x = DVector::zeros(n);
    for (ci, wi) in c.iter().zip(w) {
        x.axpy(*ci, wi, 1.0);
    }
    x
}

/// One step of the control-based update, blockwise.
pub fn step_control(state: &AlgorithmState, ctrl: &Controller, g: &DVector<f64>) -> Result<AlgorithmState> {
    let mut next = state.clone();
    next.advance(ctrl, g)?;
    Ok(next)
}

pub fn step_gradient(x: &DVector<f64>, alpha: f64, g: &DVector<f64>) -> DVector<f64> {
    x - g * alpha
}

/// Extrapolated step x - α(2 g_now - g_prev); g_prev is ∇f_{k-1} at the current x.
pub fn step_predicted_gradient(x: &DVector<f64>, alpha: f64, g_now: &DVector<f64>, g_prev: &DVector<f64>) -> DVector<f64> {
    x - (g_now * 2.0 - g_prev) * alpha
}

/// Classical fixed step for the conditioning [λ_min, λ_max].
pub fn default_step(bounds: &SpectralBounds) -> f64 {
    2.0 / (bounds.min() + bounds.max())
}

#[derive(Debug, Clone)]
pub enum Algorithm {
    Control(Controller),
    Gradient { alpha: f64 },
    PredictedGradient { alpha: f64 },
}

impl Algorithm {
    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::Control(_) => "control",
            Algorithm::Gradient { .. } => "gradient",
            Algorithm::PredictedGradient { .. } => "predicted_gradient",
        }
    }

    fn metadata(&self) -> BTreeMap<String, String> {
        let mut meta = BTreeMap::new();
        meta.insert("algorithm".to_string(), self.name().to_string());
        match self {
            Algorithm::Control(ctrl) => {
                meta.insert("model".into(), join(ctrl.model().coeffs()));
                meta.insert("gains".into(), join(ctrl.gains()));
            }
            Algorithm::Gradient { alpha } | Algorithm::PredictedGradient { alpha } => {
                meta.insert("alpha".into(), format!("{alpha:.17e}"));
            }
        }
        meta
    }
}

pub(crate) fn join(v: &[f64]) -> String {
    v.iter().map(|c| format!("{c:.17e}")).collect::<Vec<_>>().join(";")
}

/// Runs `alg` on `problem` for `cfg.horizon()` steps from the zero state.
///
/// Entry k of the trace is the tracking error of x_k. The update from x_k to
/// x_{k+1} uses ∇f_k(x_k), plus ∇f_{k-1}(x_k) for the predicted gradient
/// (at k = 0 the previous gradient is taken equal to the current one).
pub fn run<P: Problem + ?Sized>(alg: &Algorithm, problem: &P, cfg: &SamplingConfig) -> Result<TrackingTrace> {
    let n = problem.dim();
    let horizon = cfg.horizon();
    let mut errors = Vec::with_capacity(horizon);
    let mut overflow = false;

    let mut state = match alg {
        Algorithm::Control(ctrl) => Some(AlgorithmState::zeros(ctrl.degree(), n)),
        _ => None,
    };
    let mut x = DVector::zeros(n);

    for k in 0..horizon {
        let e = problem.tracking_error(k, &x)?;
        if !e.is_finite() || e > DIVERGENCE_THRESHOLD {
            overflow = true;
            errors.resize(horizon, f64::MAX);
            break;
        }
        errors.push(e);
        if k + 1 == horizon {
            break;
        }
        let g = problem.gradient(k, &x)?;
        x = match alg {
            Algorithm::Control(ctrl) => {
                let s = state.as_mut().expect("control state");
                s.advance(ctrl, &g)?;
                s.x().clone()
            }
            Algorithm::Gradient { alpha } => step_gradient(&x, *alpha, &g),
            Algorithm::PredictedGradient { alpha } => {
                let g_prev = if k == 0 { g.clone() } else { problem.gradient(k - 1, &x)? };
                step_predicted_gradient(&x, *alpha, &g, &g_prev)
            }
        };
    }

    Ok(TrackingTrace::new(errors, overflow, alg.metadata()))
}
