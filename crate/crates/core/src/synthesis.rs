//! Robust controller synthesis for the internal-model loop.
//!
//! The controller `C(z) = C_N(z) / B_D(z)` is realized in companion form
//! `(F, G, K)`. It must stabilize `F + λ G K` for every Hessian eigenvalue
//! `λ` in `[λ_min, λ_max]`; two endpoint LMIs with a shared slack `Q`
//! certify the whole interval, and `K = R Q⁻¹`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lmi::{Feasibility, LmiConstraint, LmiSolver, LmiSystem};
use crate::poly;
use crate::signal_models::InternalModel;

/// Eigenvalue bounds `0 < λ_min <= λ_max` of the Hessian.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBounds", into = "RawBounds")]
pub struct SpectralBounds {
    lambda_min: f64,
    lambda_max: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBounds {
    lambda_min: f64,
    lambda_max: f64,
}

impl TryFrom<RawBounds> for SpectralBounds {
    type Error = Error;
    fn try_from(r: RawBounds) -> Result<Self> {
        Self::new(r.lambda_min, r.lambda_max)
    }
}

impl From<SpectralBounds> for RawBounds {
    fn from(b: SpectralBounds) -> Self {
        RawBounds { lambda_min: b.lambda_min, lambda_max: b.lambda_max }
    }
}

impl SpectralBounds {
    pub fn new(lambda_min: f64, lambda_max: f64) -> Result<Self> {
        if !(lambda_min > 0.0 && lambda_min <= lambda_max && lambda_max.is_finite()) {
            return Err(Error::Config(format!(
                "spectral bounds must satisfy 0 < min <= max < inf, got [{lambda_min}, {lambda_max}]"
            )));
        }
        Ok(Self { lambda_min, lambda_max })
    }

    pub fn min(&self) -> f64 {
        self.lambda_min
    }

    pub fn max(&self) -> f64 {
        self.lambda_max
    }

    /// `points` values evenly spaced over the interval, endpoints included.
    pub fn grid(&self, points: usize) -> Vec<f64> {
        if points <= 1 || self.lambda_min == self.lambda_max {
            return vec![self.lambda_min, self.lambda_max][..points.clamp(1, 2)].to_vec();
        }
        let step = (self.lambda_max - self.lambda_min) / (points - 1) as f64;
        (0..points)
            .map(|i| if i + 1 == points { self.lambda_max } else { self.lambda_min + step * i as f64 })
            .collect()
    }
}

/// Companion realization of the internal model.
#[derive(Debug, Clone, PartialEq)]
pub struct CompanionPair {
    pub f: DMatrix<f64>,
    pub g: DVector<f64>,
}

pub fn companion(model: &InternalModel) -> CompanionPair {
    let m = model.degree();
    let mut g = DVector::zeros(m);
    g[m - 1] = 1.0;
    CompanionPair { f: poly::companion_matrix(model.coeffs()), g }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Controller {
    model: InternalModel,
    gains: Vec<f64>,
    companion: CompanionPair,
}

impl Controller {
    /// Controller with numerator coefficients `c_0, ..., c_{m-1}`.
    pub fn new(model: InternalModel, gains: Vec<f64>) -> Result<Self> {
        if gains.len() != model.degree() {
            return Err(Error::DimensionMismatch { expected: model.degree(), found: gains.len() });
        }
        let companion = companion(&model);
        Ok(Self { model, gains, companion })
    }

    pub fn model(&self) -> &InternalModel {
        &self.model
    }

    /// Numerator coefficients `c_0, ..., c_{m-1}` (the row vector K).
    pub fn gains(&self) -> &[f64] {
        &self.gains
    }

    pub fn companion(&self) -> &CompanionPair {
        &self.companion
    }

    pub fn degree(&self) -> usize {
        self.model.degree()
    }

    /// `F + λ G K`.
    pub fn closed_loop(&self, lambda: f64) -> DMatrix<f64> {
        let mut fc = self.companion.f.clone();
        let m = self.degree();
        for (j, c) in self.gains.iter().enumerate() {
            fc[(m - 1, j)] += lambda * c;
        }
        fc
    }

    /// Full coefficients of `B_D(z) - λ C_N(z)`.
    pub fn loop_polynomial(&self, lambda: f64) -> Vec<f64> {
        let mut p = self.model.full_coeffs();
        for (pi, c) in p.iter_mut().zip(&self.gains) {
            *pi -= lambda * c;
        }
        p
    }

    /// Full coefficients of `C_N(z)`.
    pub fn numerator(&self) -> Vec<f64> {
        self.gains.clone()
    }
}

/// Max spectral radius of `F + λGK` over an inclusive uniform λ grid.
pub fn verify_stability(ctrl: &Controller, bounds: &SpectralBounds, grid_points: usize) -> f64 {
    bounds
        .grid(grid_points.max(2))
        .into_iter()
        .map(|lambda| poly::spectral_radius(&ctrl.closed_loop(lambda)))
        .fold(0.0, f64::max)
}

/// State coordinates in which the LMIs are posed.
///
/// Both give a controller in companion coordinates. The companion basis is
/// badly conditioned when model roots cluster near `z = 1`; the real Jordan
/// basis keeps certificates well scaled in that case.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Realization {
    Companion,
    Modal,
}

/// Decay-rate requirement on the closed loop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Contraction {
    /// Certify spectral radius below the given value in (0, 1].
    Fixed(f64),
    /// Bisect for the smallest certifiable value, to the given resolution.
    Fastest { resolution: f64 },
}

#[derive(Debug, Clone)]
pub struct SynthesisOptions {
    pub solver: LmiSolver,
    pub realization: Realization,
    pub contraction: Contraction,
    /// Largest acceptable condition number of `Q`.
    pub max_condition: f64,
    pub verify_points: usize,
}

impl Default for SynthesisOptions {
    fn default() -> Self {
        Self {
            solver: LmiSolver::default(),
            realization: Realization::Modal,
            contraction: Contraction::Fastest { resolution: 1e-3 },
            max_condition: 1e12,
            verify_points: 100,
        }
    }
}

impl SynthesisOptions {
    /// Plain robust stability in companion coordinates.
    pub fn plain() -> Self {
        Self {
            realization: Realization::Companion,
            contraction: Contraction::Fixed(1.0),
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone)]
pub struct Synthesis {
    pub controller: Controller,
    /// Minimum eigenvalue of each endpoint LMI at the returned certificate.
    pub endpoint_margins: [f64; 2],
    pub grid_spectral_radius: f64,
    pub condition_q: f64,
    /// Certified decay rate.
    pub contraction: f64,
    pub newton_steps: usize,
    /// The LMI system that was solved (in the realization's coordinates).
    pub system: LmiSystem,
    /// Values of `P_lo, P_hi, Q, R` certifying the system.
    pub certificate: Vec<DMatrix<f64>>,
}

/// Real Jordan basis of the companion matrix: columns are the real and
/// imaginary parts of (generalized) eigenvectors `[1, μ, μ², ...]`.
pub fn modal_basis(model: &InternalModel) -> DMatrix<f64> {
    use num_complex::Complex64;
    let m = model.degree();
    let clusters = poly::root_clusters(&model.roots(), poly::CLUSTER_RADIUS);
    let mut cols: Vec<DVector<f64>> = Vec::with_capacity(m);
    for (mu, mult) in clusters {
        let real = mu.im.abs() < 1e-12;
        if !real && mu.im < 0.0 {
            continue;
        }
        for j in 0..mult {
            // j-th derivative of the eigenvector divided by j!
            let v: Vec<Complex64> = (0..m)
                .map(|i| {
                    if i < j {
                        Complex64::new(0.0, 0.0)
                    } else {
                        mu.powu((i - j) as u32) * binomial(i, j)
                    }
                })
                .collect();
            cols.push(DVector::from_iterator(m, v.iter().map(|z| z.re)));
            if !real {
                cols.push(DVector::from_iterator(m, v.iter().map(|z| z.im)));
            }
        }
    }
    DMatrix::from_columns(&cols)
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Endpoint LMIs for `(F + λGK)/ρ` at `λ_min` and `λ_max`.
pub fn lmi_system(model: &InternalModel, bounds: &SpectralBounds, contraction: f64) -> LmiSystem {
    let CompanionPair { f, g } = companion(model);
    lmi_system_for(&f, &g, bounds, contraction)
}

/// Endpoint LMIs for an arbitrary realization `(F, G)`.
pub fn lmi_system_for(f: &DMatrix<f64>, g: &DVector<f64>, bounds: &SpectralBounds, contraction: f64) -> LmiSystem {
    let m = f.nrows();
    let mut sys = LmiSystem::new();
    let p_lo = sys.symmetric("P_lo", m);
    let p_hi = sys.symmetric("P_hi", m);
    let q = sys.general("Q", m, m);
    let r = sys.general("R", 1, m);

    let top = DMatrix::identity(m, m).insert_rows(m, m, 0.0);
    let bottom = DMatrix::identity(m, m).insert_rows(0, m, 0.0);
    let top_t = top.transpose();
    let bottom_t = bottom.transpose();
    let g_col = DMatrix::from_column_slice(m, 1, g.as_slice());

    for (name, p, lambda) in [("lambda_min", p_lo, bounds.min()), ("lambda_max", p_hi, bounds.max())] {
        // [P, (FQ + λGR)/ρ; *, Q + Qᵀ - P]
        let off_f = (f / contraction).insert_rows(m, m, 0.0);
        let off_g = (&g_col * (lambda / contraction)).insert_rows(m, m, 0.0);
        let c = LmiConstraint::new(name, DMatrix::zeros(2 * m, 2 * m))
            .term(p, top.clone(), top_t.clone(), false)
            .term(q, off_f, bottom_t.clone(), true)
            .term(r, off_g, bottom_t.clone(), true)
            .term(q, bottom.clone(), bottom_t.clone(), true)
            .term(p, -&bottom, bottom_t.clone(), false);
        sys.add_constraint(c);
    }
    sys
}

pub fn synthesize(model: &InternalModel, bounds: &SpectralBounds) -> Result<Synthesis> {
    synthesize_with(model, bounds, &SynthesisOptions::default())
}

pub fn synthesize_with(model: &InternalModel, bounds: &SpectralBounds, opts: &SynthesisOptions) -> Result<Synthesis> {
    match opts.contraction {
        Contraction::Fixed(rho) => synthesize_at(model, bounds, opts, rho),
        Contraction::Fastest { resolution } => {
            if !(resolution > 0.0 && resolution < 1.0) {
                return Err(Error::Config(format!("contraction resolution must lie in (0, 1), got {resolution}")));
            }
            // plain robust stability decides feasibility; the search only tightens it
            let mut best = synthesize_at(model, bounds, opts, 1.0)?;
            let mut hi = 1.0;
            let mut lo = 0.0;
            while hi - lo > resolution {
                let mid = 0.5 * (lo + hi);
                match synthesize_at(model, bounds, opts, mid) {
                    Ok(s) => {
                        best = s;
                        hi = mid;
                    }
                    Err(_) => lo = mid,
                }
            }
            Ok(best)
        }
    }
}

fn synthesize_at(model: &InternalModel, bounds: &SpectralBounds, opts: &SynthesisOptions, contraction: f64) -> Result<Synthesis> {
    if !(contraction > 0.0 && contraction <= 1.0) {
        return Err(Error::Config(format!("contraction must lie in (0, 1], got {contraction}")));
    }
    let m = model.degree();
    let CompanionPair { f, g } = companion(model);
    // K is computed in the chosen coordinates and mapped back by T⁻¹
    let (t_inv, sys) = match opts.realization {
        Realization::Companion => (None, lmi_system_for(&f, &g, bounds, contraction)),
        Realization::Modal => {
            let t = modal_basis(model);
            let t_inv = t
                .clone()
                .lu()
                .try_inverse()
                .ok_or_else(|| Error::Synthesis("modal basis is singular".into()))?;
            let f_m = &t_inv * &f * &t;
            let g_m = &t_inv * &g;
            let sys = lmi_system_for(&f_m, &g_m, bounds, contraction);
            (Some(t_inv), sys)
        }
    };
    let sol = match opts.solver.solve(&sys)? {
        Feasibility::Feasible(sol) => sol,
        Feasibility::Infeasible { margin_upper_bound } => {
            return Err(Error::Infeasible { margin: margin_upper_bound })
        }
    };
    let q = &sol.assignments[2];
    let r = &sol.assignments[3];

    let q_inv = q
        .clone()
        .lu()
        .try_inverse()
        .ok_or_else(|| Error::Synthesis("Q is singular".into()))?;
    let condition_q = norm_1(q) * norm_1(&q_inv);
    if condition_q.is_nan() || condition_q > opts.max_condition {
        return Err(Error::Synthesis(format!("Q is ill-conditioned (condition number {condition_q:e})")));
    }
    let mut k = r * q_inv;
    if let Some(t_inv) = t_inv {
        k *= t_inv;
    }
    let gains: Vec<f64> = (0..m).map(|j| k[(0, j)]).collect();
    let controller = Controller::new(model.clone(), gains)?;

    let endpoint_margins = [
        crate::lmi::min_eigenvalue(&sys.assemble(0, &sol.assignments)),
        crate::lmi::min_eigenvalue(&sys.assemble(1, &sol.assignments)),
    ];
    for lambda in [bounds.min(), bounds.max()] {
        let rho = poly::spectral_radius(&controller.closed_loop(lambda));
        if rho >= 1.0 - 1e-9 {
            return Err(Error::Synthesis(format!(
                "certificate accepted but spectral radius at lambda = {lambda} is {rho}"
            )));
        }
    }
    let grid_spectral_radius = verify_stability(&controller, bounds, opts.verify_points);
    if grid_spectral_radius >= 1.0 {
        return Err(Error::Synthesis(format!(
            "controller fails the interval check (spectral radius {grid_spectral_radius})"
        )));
    }
    Ok(Synthesis {
        controller,
        endpoint_margins,
        grid_spectral_radius,
        condition_q,
        contraction,
        newton_steps: sol.newton_steps,
        system: sys,
        certificate: sol.assignments,
    })
}

fn norm_1(m: &DMatrix<f64>) -> f64 {
    m.column_iter().map(|c| c.abs().sum()).fold(0.0, f64::max)
}
