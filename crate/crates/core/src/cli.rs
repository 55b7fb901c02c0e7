//! Configuration-driven experiment harness.
//!
//! One JSON document describes a problem, a signal and a list of algorithms.
//! Four verbs act on it: `synthesize`, `simulate`, `sweep` and `bounds`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use nalgebra::DVector;
use serde::Deserialize;

use crate::analysis::{
    asymptotic_error, error_bound_general, error_bound_inexact, loop_norm_bounds, small_gain_check, ModelMismatch,
    PerturbationBounds, TrackingTrace, DEFAULT_FREQ_GRID, DEFAULT_LAMBDA_GRID,
};
use crate::error::{Error, Result};
use crate::online_algorithms::{default_step, join, run, Algorithm};
use crate::problems::{
    random_convex_quadratic, random_quadratic, random_uniform_vector, seeded_rng, NonQuadraticProblem, Problem,
    QuadraticProblem, TvHessianProblem,
};
use crate::signal_models::{
    denominator_for, periodic_internal_model, Impulse, InternalModel, SamplingConfig, SignalKind, SignalSpec,
};
use crate::synthesis::{synthesize, SpectralBounds, Synthesis};

pub const SCHEMA_VERSION: u32 = 1;

const STREAM_DIRECTION: u64 = 3;
const STREAM_IMPULSES: u64 = 4;

#[derive(Debug, Parser)]
#[command(name = "imopt", version, about = "Internal-model online optimization experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Experiment configuration (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Output directory; overrides the config.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    /// Seed; overrides the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Suppress progress output.
    #[arg(long, global = true)]
    pub quiet: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Synthesize the controllers of all control entries.
    Synthesize,
    /// Run every algorithm and write traces plus a summary.
    Simulate,
    /// Inexact-model sweep over the assumed frequency.
    Sweep,
    /// Loop norms and tracking-error bounds.
    Bounds,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub problem: ProblemConfig,
    pub n: usize,
    #[serde(default)]
    pub seed: u64,
    pub bounds: SpectralBounds,
    #[serde(default)]
    pub signal: Option<SignalConfig>,
    pub sampling: SamplingSection,
    pub algorithms: Vec<AlgorithmConfig>,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemConfig {
    Quadratic,
    ConvexQuadratic {
        rank: usize,
    },
    TvHessian {
        #[serde(default = "default_gamma0")]
        gamma0: f64,
        omega: f64,
    },
    NonQuadratic {
        omega: f64,
    },
}

fn default_gamma0() -> f64 {
    0.5
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SignalConfig {
    Ramp {
        #[serde(default)]
        direction: Option<Vec<f64>>,
    },
    Sine {
        omega: f64,
    },
    SineRamp {
        omega: f64,
        #[serde(default)]
        direction: Option<Vec<f64>>,
    },
    SineSquared {
        omega: f64,
    },
    Constant {
        #[serde(default)]
        direction: Option<Vec<f64>>,
    },
    PiecewiseImpulse {
        model: InternalModel,
        impulses: Vec<ImpulseConfig>,
    },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImpulseConfig {
    pub step: usize,
    /// Seeded uniform in [-1, 1]ⁿ when absent.
    #[serde(default)]
    pub amplitude: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingSection {
    pub ts: f64,
    pub horizon: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AlgorithmConfig {
    Control {
        #[serde(default)]
        model: ModelSource,
        #[serde(default)]
        label: Option<String>,
    },
    Gradient {
        #[serde(default)]
        alpha: Option<f64>,
        #[serde(default)]
        label: Option<String>,
    },
    PredictedGradient {
        #[serde(default)]
        alpha: Option<f64>,
        #[serde(default)]
        label: Option<String>,
    },
}

impl AlgorithmConfig {
    fn label(&self) -> String {
        match self {
            AlgorithmConfig::Control { label, .. } => label.clone().unwrap_or_else(|| "control".into()),
            AlgorithmConfig::Gradient { label, .. } => label.clone().unwrap_or_else(|| "gradient".into()),
            AlgorithmConfig::PredictedGradient { label, .. } => {
                label.clone().unwrap_or_else(|| "predicted_gradient".into())
            }
        }
    }
}

/// Where a control entry gets its internal model.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSource {
    /// Derived from the signal.
    #[default]
    Auto,
    Explicit { coeffs: InternalModel },
    Periodic { period: f64, harmonics: usize },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub parameter: SweepParameter,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    OmegaHat,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.n == 0 {
            return Err(Error::Config("n must be >= 1".into()));
        }
        self.sampling()?;
        match (&self.problem, &self.signal) {
            (ProblemConfig::Quadratic | ProblemConfig::ConvexQuadratic { .. }, None) => {
                return Err(Error::Config("quadratic problems need a signal".into()))
            }
            (ProblemConfig::TvHessian { .. }, Some(s)) if !matches!(s, SignalConfig::Constant { .. }) => {
                return Err(Error::Config("tv_hessian takes a constant signal".into()))
            }
            (ProblemConfig::NonQuadratic { .. }, Some(_)) => {
                return Err(Error::Config("non_quadratic generates its own linear term; remove the signal".into()))
            }
            _ => {}
        }
        if let ProblemConfig::ConvexQuadratic { rank } = self.problem {
            if rank == 0 || rank > self.n {
                return Err(Error::Config(format!("rank must lie in [1, n], got {rank}")));
            }
        }
        if self.algorithms.is_empty() {
            return Err(Error::Config("at least one algorithm is required".into()));
        }
        let mut labels: Vec<String> = self.algorithms.iter().map(|a| a.label()).collect();
        for l in &labels {
            if l.is_empty() || !l.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
                return Err(Error::Config(format!("label {l:?} must be nonempty [A-Za-z0-9_-]")));
            }
        }
        labels.sort();
        if let Some(w) = labels.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::Config(format!("duplicate algorithm label {:?}; set `label`", w[0])));
        }
        for a in &self.algorithms {
            if let AlgorithmConfig::Gradient { alpha: Some(alpha), .. }
            | AlgorithmConfig::PredictedGradient { alpha: Some(alpha), .. } = a
            {
                if !(*alpha > 0.0 && alpha.is_finite()) {
                    return Err(Error::Config(format!("alpha must be > 0, got {alpha}")));
                }
            }
        }
        if let Some(sweep) = &self.sweep {
            if sweep.values.is_empty() || sweep.values.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                return Err(Error::Config("sweep values must be a nonempty list of positive numbers".into()));
            }
        }
        Ok(())
    }

    pub fn sampling(&self) -> Result<SamplingConfig> {
        SamplingConfig::new(self.sampling.ts, self.sampling.horizon)
    }

    /// Signal with seeded defaults filled in.
    pub fn signal_spec(&self, seed: u64) -> Result<Option<SignalSpec>> {
        let n = self.n;
        let vector = |v: &Option<Vec<f64>>, stream: u64| match v {
            Some(v) => DVector::from_vec(v.clone()),
            None => random_uniform_vector(n, &mut seeded_rng(seed, stream)),
        };
        let signal = match &self.signal {
            Some(s) => s,
            None if matches!(self.problem, ProblemConfig::TvHessian { .. }) => {
                &SignalConfig::Constant { direction: None }
            }
            None => return Ok(None),
        };
        let kind = match signal {
            SignalConfig::Ramp { direction } => SignalKind::Ramp { direction: vector(direction, STREAM_DIRECTION) },
            SignalConfig::Sine { omega } => SignalKind::Sine { omega: *omega },
            SignalConfig::SineRamp { omega, direction } => SignalKind::SineRamp {
                omega: *omega,
                direction: vector(direction, STREAM_DIRECTION),
            },
            SignalConfig::SineSquared { omega } => SignalKind::SineSquared { omega: *omega },
            SignalConfig::Constant { direction } => {
                SignalKind::Constant { direction: vector(direction, STREAM_DIRECTION) }
            }
            SignalConfig::PiecewiseImpulse { model, impulses } => SignalKind::PiecewiseImpulse {
                model: model.clone(),
                impulses: impulses
                    .iter()
                    .enumerate()
                    .map(|(i, imp)| Impulse {
                        step: imp.step,
                        amplitude: vector(&imp.amplitude, STREAM_IMPULSES + i as u64),
                    })
                    .collect(),
            },
        };
        SignalSpec::new(n, kind).map(Some)
    }
}

/// A constructed problem instance.
pub enum Instance {
    Quadratic(QuadraticProblem),
    TvHessian(TvHessianProblem),
    NonQuadratic(NonQuadraticProblem),
}

impl Instance {
    pub fn problem(&self) -> &dyn Problem {
        match self {
            Instance::Quadratic(p) => p,
            Instance::TvHessian(p) => p,
            Instance::NonQuadratic(p) => p,
        }
    }

    /// β, δ, γ of the perturbed-quadratic view.
    pub fn perturbation_bounds(&self) -> Result<PerturbationBounds> {
        match self {
            Instance::Quadratic(p) => {
                let mut beta = 0.0f64;
                for k in 0..p.horizon() {
                    beta = beta.max(p.b(k)?.norm());
                }
                PerturbationBounds::new(beta, 0.0, 0.0)
            }
            Instance::TvHessian(p) => p.perturbation_bounds(),
            Instance::NonQuadratic(p) => p.perturbation_bounds(),
        }
    }
}

/// Resolved run settings after command-line overrides.
pub struct Experiment {
    pub config: ExperimentConfig,
    pub seed: u64,
    pub sampling: SamplingConfig,
    pub signal: Option<SignalSpec>,
}

impl Experiment {
    pub fn new(config: ExperimentConfig, seed_override: Option<u64>) -> Result<Self> {
        let seed = seed_override.unwrap_or(config.seed);
        let sampling = config.sampling()?;
        let signal = config.signal_spec(seed)?;
        Ok(Self { config, seed, sampling, signal })
    }

    pub fn bounds(&self) -> SpectralBounds {
        self.config.bounds
    }

    pub fn instance_with(&self, signal: Option<&SignalSpec>) -> Result<Instance> {
        let c = &self.config;
        let need = || signal.cloned().ok_or_else(|| Error::Config("problem needs a signal".into()));
        Ok(match c.problem {
            ProblemConfig::Quadratic => {
                Instance::Quadratic(random_quadratic(c.n, &c.bounds, need()?, &self.sampling, self.seed)?)
            }
            ProblemConfig::ConvexQuadratic { rank } => Instance::Quadratic(random_convex_quadratic(
                c.n,
                rank,
                &c.bounds,
                need()?,
                &self.sampling,
                self.seed,
            )?),
            ProblemConfig::TvHessian { gamma0, omega } => {
                let b = match need()?.kind() {
                    SignalKind::Constant { direction } => direction.clone(),
                    _ => return Err(Error::Config("tv_hessian takes a constant signal".into())),
                };
                Instance::TvHessian(TvHessianProblem::random(
                    c.n,
                    &c.bounds,
                    gamma0,
                    omega,
                    b,
                    &self.sampling,
                    self.seed,
                )?)
            }
            ProblemConfig::NonQuadratic { omega } => {
                Instance::NonQuadratic(NonQuadraticProblem::random(c.n, &c.bounds, omega, &self.sampling, self.seed)?)
            }
        })
    }

    pub fn instance(&self) -> Result<Instance> {
        self.instance_with(self.signal.as_ref())
    }

    pub fn model_for(&self, source: &ModelSource) -> Result<InternalModel> {
        match source {
            ModelSource::Auto => {
                let signal = self
                    .signal
                    .as_ref()
                    .ok_or_else(|| Error::Config("model `auto` needs a signal; use `periodic` or `explicit`".into()))?;
                denominator_for(signal, &self.sampling)
            }
            ModelSource::Explicit { coeffs } => Ok(coeffs.clone()),
            ModelSource::Periodic { period, harmonics } => {
                if !(*period > 0.0 && period.is_finite()) || *harmonics == 0 {
                    return Err(Error::Config("periodic model needs period > 0 and harmonics >= 1".into()));
                }
                periodic_internal_model(*period, &self.sampling, *harmonics)
            }
        }
    }

    fn provenance(&self) -> Vec<(String, String)> {
        let c = &self.config;
        let problem = match c.problem {
            ProblemConfig::Quadratic => "quadratic".to_string(),
            ProblemConfig::ConvexQuadratic { rank } => format!("convex_quadratic(rank={rank})"),
            ProblemConfig::TvHessian { gamma0, omega } => format!("tv_hessian(gamma0={gamma0},omega={omega})"),
            ProblemConfig::NonQuadratic { omega } => format!("non_quadratic(omega={omega})"),
        };
        let mut v = vec![
            ("schema_version".to_string(), SCHEMA_VERSION.to_string()),
            ("problem".into(), problem),
            ("n".into(), c.n.to_string()),
            ("seed".into(), self.seed.to_string()),
            ("lambda_min".into(), c.bounds.min().to_string()),
            ("lambda_max".into(), c.bounds.max().to_string()),
            ("ts".into(), self.sampling.ts().to_string()),
            ("horizon".into(), self.sampling.horizon().to_string()),
        ];
        if let Some(s) = &self.signal {
            v.push(("signal".into(), s.label().to_string()));
            if let SignalKind::Sine { omega } | SignalKind::SineSquared { omega } | SignalKind::SineRamp { omega, .. } =
                s.kind()
            {
                v.push(("signal_omega".into(), omega.to_string()));
            }
            if let SignalKind::Ramp { direction } | SignalKind::SineRamp { direction, .. } | SignalKind::Constant { direction } =
                s.kind()
            {
                v.push(("signal_direction".into(), join(direction.as_slice())));
            }
        }
        v
    }
}

/// Flat `key=value` report.
#[derive(Debug, Default, Clone)]
pub struct Report {
    lines: Vec<(String, String)>,
}

impl Report {
    pub fn push(&mut self, key: impl Into<String>, value: impl ToString) {
        self.lines.push((key.into(), value.to_string()));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.lines.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.lines {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }
}

/// What a verb produced and how the process should exit.
#[derive(Debug)]
pub struct Outcome {
    pub report: Report,
    pub exit_code: i32,
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Infeasible { .. } | Error::NoConvergence { .. } | Error::Synthesis(_) | Error::UnstableLoop { .. } => 2,
        Error::Oracle { .. } => 3,
        _ => 1,
    }
}

fn fmt_err(x: f64) -> String {
    if x.is_infinite() {
        "inf".into()
    } else {
        format!("{x:.12e}")
    }
}

pub fn write_csv(path: &Path, trace: &TrackingTrace) -> Result<()> {
    let mut s = String::with_capacity(trace.errors().len() * 28 + 8);
    s.push_str("k,error\n");
    for (k, e) in trace.errors().iter().enumerate() {
        let _ = writeln!(s, "{k},{e:.15e}");
    }
    fs::write(path, s)?;
    Ok(())
}

fn controller_keys(report: &mut Report, prefix: &str, syn: &Synthesis) {
    report.push(format!("{prefix}.model"), join(syn.controller.model().coeffs()));
    report.push(format!("{prefix}.gains"), join(syn.controller.gains()));
    report.push(format!("{prefix}.contraction"), syn.contraction);
    report.push(format!("{prefix}.grid_spectral_radius"), syn.grid_spectral_radius);
    report.push(format!("{prefix}.lmi_margin_min"), syn.endpoint_margins[0]);
    report.push(format!("{prefix}.lmi_margin_max"), syn.endpoint_margins[1]);
}

const FALLBACK_HINT: &str =
    "no robustly stabilizing controller was certified for this model and Hessian range; the online gradient method remains available";

pub struct Session {
    pub experiment: Experiment,
    pub out: PathBuf,
    pub quiet: bool,
}

impl Session {
    pub fn from_cli(cli: &Cli) -> Result<Self> {
        let path = cli.config.as_ref().ok_or_else(|| Error::Config("--config is required".into()))?;
        let config = ExperimentConfig::load(path)?;
        let out = cli
            .out
            .clone()
            .or_else(|| config.output.clone())
            .unwrap_or_else(|| PathBuf::from("out"));
        let experiment = Experiment::new(config, cli.seed)?;
        Ok(Self { experiment, out, quiet: cli.quiet })
    }

    fn say(&self, msg: &str) {
        if !self.quiet {
            println!("{msg}");
        }
    }

    fn write_report(&self, name: &str, report: &Report) -> Result<()> {
        fs::create_dir_all(&self.out)?;
        fs::write(self.out.join(name), report.render())?;
        Ok(())
    }

    fn base_report(&self) -> Report {
        let mut r = Report::default();
        for (k, v) in self.experiment.provenance() {
            r.push(k, v);
        }
        r
    }

    pub fn run(&self, command: Command) -> Result<Outcome> {
        match command {
            Command::Synthesize => self.synthesize(),
            Command::Simulate => self.simulate(),
            Command::Sweep => self.sweep(),
            Command::Bounds => self.bounds(),
        }
    }

    fn control_entries(&self) -> Vec<(String, &ModelSource)> {
        self.experiment
            .config
            .algorithms
            .iter()
            .filter_map(|a| match a {
                AlgorithmConfig::Control { model, .. } => Some((a.label(), model)),
                _ => None,
            })
            .collect()
    }

    fn synthesize(&self) -> Result<Outcome> {
        let exp = &self.experiment;
        let mut report = self.base_report();
        let mut exit = 0;
        let entries = self.control_entries();
        if entries.is_empty() {
            return Err(Error::Config("no control entries to synthesize".into()));
        }
        for (label, source) in entries {
            let model = exp.model_for(source)?;
            match synthesize(&model, &exp.bounds()) {
                Ok(syn) => {
                    report.push(format!("{label}.status"), "feasible");
                    controller_keys(&mut report, &label, &syn);
                    self.say(&format!("{label}: feasible, spectral radius {:.6}", syn.grid_spectral_radius));
                }
                Err(e) if exit_code(&e) == 2 => {
                    let status = if matches!(e, Error::Infeasible { .. }) { "infeasible" } else { "solver_failure" };
                    report.push(format!("{label}.status"), status);
                    report.push(format!("{label}.model"), join(model.coeffs()));
                    report.push(format!("{label}.diagnostic"), e.to_string());
                    eprintln!("{label}: {e}; {FALLBACK_HINT}");
                    exit = 2;
                }
                Err(e) => return Err(e),
            }
        }
        self.write_report("synthesis.txt", &report)?;
        Ok(Outcome { report, exit_code: exit })
    }

    /// Resolves one algorithm entry; control entries run synthesis.
    fn resolve(&self, a: &AlgorithmConfig, report: &mut Report) -> Result<Algorithm> {
        let exp = &self.experiment;
        let label = a.label();
        let alpha = |alpha: &Option<f64>, report: &mut Report| {
            let (v, src) = match alpha {
                Some(v) => (*v, "config"),
                None => (default_step(&exp.bounds()), "default"),
            };
            report.push(format!("{label}.alpha"), v);
            report.push(format!("{label}.alpha_source"), src);
            v
        };
        Ok(match a {
            AlgorithmConfig::Control { model, .. } => {
                let model = exp.model_for(model)?;
                let syn = synthesize(&model, &exp.bounds())?;
                controller_keys(report, &label, &syn);
                Algorithm::Control(syn.controller)
            }
            AlgorithmConfig::Gradient { alpha: a, .. } => Algorithm::Gradient { alpha: alpha(a, report) },
            AlgorithmConfig::PredictedGradient { alpha: a, .. } => {
                Algorithm::PredictedGradient { alpha: alpha(a, report) }
            }
        })
    }

    fn simulate(&self) -> Result<Outcome> {
        let instance = self.experiment.instance()?;
        let mut report = self.base_report();
        let mut exit = 0;
        fs::create_dir_all(&self.out)?;
        for a in &self.experiment.config.algorithms {
            let label = a.label();
            let alg = self.resolve(a, &mut report)?;
            let trace = match run(&alg, instance.problem(), &self.experiment.sampling) {
                Ok(t) => t,
                Err(e @ Error::Oracle { .. }) => {
                    report.push(format!("{label}.status"), "oracle_failure");
                    report.push(format!("{label}.diagnostic"), e.to_string());
                    eprintln!("{label}: {e}");
                    exit = 3;
                    continue;
                }
                Err(e) => return Err(e),
            };
            write_csv(&self.out.join(format!("{label}.csv")), &trace)?;
            let ae = asymptotic_error(&trace)?;
            report.push(format!("{label}.status"), if trace.overflow() { "diverged" } else { "ok" });
            report.push(format!("{label}.asymptotic_error"), fmt_err(ae));
            if trace.overflow() {
                exit = 3;
            }
            self.say(&format!("{label}: asymptotic error {}", fmt_err(ae)));
        }
        self.write_report("summary.txt", &report)?;
        Ok(Outcome { report, exit_code: exit })
    }

    fn sweep(&self) -> Result<Outcome> {
        let exp = &self.experiment;
        let sweep = exp.config.sweep.as_ref().ok_or_else(|| Error::Config("config has no sweep section".into()))?;
        let signal = exp.signal.as_ref().ok_or_else(|| Error::Config("sweep needs a signal".into()))?;
        if !matches!(exp.config.problem, ProblemConfig::Quadratic | ProblemConfig::ConvexQuadratic { .. }) {
            return Err(Error::Config("sweep applies to quadratic problems".into()));
        }
        let truth = denominator_for(signal, &exp.sampling)?;
        let instance = exp.instance()?;
        let beta = instance.perturbation_bounds()?.beta();
        let mut report = self.base_report();
        report.push("sweep.parameter", "omega_hat");
        report.push("beta", beta);

        let alpha = default_step(&exp.bounds());
        let grad = run(&Algorithm::Gradient { alpha }, instance.problem(), &exp.sampling)?;
        report.push("gradient.alpha", alpha);
        report.push("gradient.asymptotic_error", fmt_err(asymptotic_error(&grad)?));

        let mut csv = String::from("omega_hat,error,bound\n");
        for (i, &omega_hat) in sweep.values.iter().enumerate() {
            let key = |s: &str| format!("sweep.{i}.{s}");
            report.push(key("omega_hat"), omega_hat);
            let assumed = signal
                .with_omega(omega_hat)
                .ok_or_else(|| Error::Config(format!("signal {} has no frequency to sweep", signal.label())))??;
            let model = denominator_for(&assumed, &exp.sampling)?;
            let syn = match synthesize(&model, &exp.bounds()) {
                Ok(s) => s,
                Err(e) if exit_code(&e) == 2 => {
                    report.push(key("status"), "infeasible");
                    report.push(key("diagnostic"), e.to_string());
                    continue;
                }
                Err(e) => return Err(e),
            };
            let trace = run(&Algorithm::Control(syn.controller.clone()), instance.problem(), &exp.sampling)?;
            let ae = asymptotic_error(&trace)?;
            let mismatch = ModelMismatch::new(&truth, &model)?;
            let bound = error_bound_inexact(
                &syn.controller,
                &mismatch,
                &exp.bounds(),
                beta,
                DEFAULT_LAMBDA_GRID,
                DEFAULT_FREQ_GRID,
            )?;
            report.push(key("status"), "ok");
            report.push(key("model"), join(model.coeffs()));
            report.push(key("gains"), join(syn.controller.gains()));
            report.push(key("mismatch_one_norm"), mismatch.one_norm());
            report.push(key("asymptotic_error"), fmt_err(ae));
            report.push(key("bound"), fmt_err(bound));
            let _ = writeln!(csv, "{omega_hat},{ae:.15e},{bound:.15e}");
            self.say(&format!("omega_hat={omega_hat}: error {} bound {}", fmt_err(ae), fmt_err(bound)));
        }
        fs::create_dir_all(&self.out)?;
        fs::write(self.out.join("sweep.csv"), csv)?;
        self.write_report("sweep.txt", &report)?;
        Ok(Outcome { report, exit_code: 0 })
    }

    fn bounds(&self) -> Result<Outcome> {
        let exp = &self.experiment;
        let instance = exp.instance()?;
        let pert = instance.perturbation_bounds()?;
        let mut report = self.base_report();
        report.push("beta", pert.beta());
        report.push("delta", pert.delta());
        report.push("gamma", pert.gamma());
        if let Instance::NonQuadratic(p) = &instance {
            report.push("delta_quoted", p.quoted_delta());
        }
        let truth = exp.signal.as_ref().and_then(|s| denominator_for(s, &exp.sampling).ok());
        let entries = self.control_entries();
        if entries.is_empty() {
            return Err(Error::Config("no control entries to bound".into()));
        }
        for (label, source) in entries {
            let model = exp.model_for(source)?;
            let syn = synthesize(&model, &exp.bounds())?;
            controller_keys(&mut report, &label, &syn);
            let norms = loop_norm_bounds(&syn.controller, &exp.bounds(), DEFAULT_LAMBDA_GRID, DEFAULT_FREQ_GRID)?;
            let sg = small_gain_check(&norms, pert.gamma());
            report.push(format!("{label}.n1"), norms.n1);
            report.push(format!("{label}.n2"), norms.n2);
            report.push(format!("{label}.small_gain"), sg.holds);
            report.push(format!("{label}.small_gain_margin"), fmt_err(sg.margin));
            match error_bound_general(&norms, &pert) {
                Ok(b) => report.push(format!("{label}.general_bound"), fmt_err(b)),
                Err(e @ Error::SmallGainViolated { .. }) => {
                    report.push(format!("{label}.general_bound"), "undefined");
                    report.push(format!("{label}.general_bound_diagnostic"), e.to_string());
                }
                Err(e) => return Err(e),
            }
            if let (Instance::Quadratic(_), Some(truth)) = (&instance, &truth) {
                if let Ok(mm) = ModelMismatch::new(truth, &model) {
                    let b = error_bound_inexact(
                        &syn.controller,
                        &mm,
                        &exp.bounds(),
                        pert.beta(),
                        DEFAULT_LAMBDA_GRID,
                        DEFAULT_FREQ_GRID,
                    )?;
                    report.push(format!("{label}.mismatch_one_norm"), mm.one_norm());
                    report.push(format!("{label}.inexact_bound"), fmt_err(b));
                }
            }
            self.say(&format!("{label}: N1 {:.6} N2 {:.6}", norms.n1, norms.n2));
        }
        self.write_report("bounds.txt", &report)?;
        Ok(Outcome { report, exit_code: 0 })
    }
}

/// Parses, runs and returns the process exit code.
pub fn main_with(cli: Cli) -> i32 {
    let result = Session::from_cli(&cli).and_then(|s| s.run(cli.command));
    match result {
        Ok(outcome) => outcome.exit_code,
        Err(e) => {
            eprintln!("error: {e}");
            if exit_code(&e) == 2 {
                eprintln!("{FALLBACK_HINT}");
            }
            exit_code(&e)
        }
    }
}

/// Metadata map of a report, for callers that want lookups.
pub fn report_map(report: &Report) -> BTreeMap<&str, &str> {
    report.lines.iter().map(|(k, v)| (k.as_str(), v.as_str())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base(extra: &str) -> String {
        format!(
            r#"{{
  "schema_version": 1,
  "problem": {{"kind": "quadratic"}},
  "n": 4,
  "seed": 3,
  "bounds": {{"lambda_min": 1.0, "lambda_max": 10.0}},
  "signal": {{"kind": "sine", "omega": 1.0}},
  "sampling": {{"ts": 0.1, "horizon": 50}},
  "algorithms": [{{"kind": "control"}}, {{"kind": "gradient"}}]{extra}
}}"#
        )
    }

    #[test]
    fn parses_minimal_config() {
        let c = ExperimentConfig::from_json(&base("")).unwrap();
        assert_eq!(c.n, 4);
        assert!(matches!(c.algorithms[0], AlgorithmConfig::Control { model: ModelSource::Auto, .. }));
    }

    #[test]
    fn rejects_unknown_keys_and_versions() {
        assert!(ExperimentConfig::from_json(&base(r#", "bogus": 1"#)).is_err());
        let v2 = base("").replace("\"schema_version\": 1", "\"schema_version\": 2");
        assert!(matches!(ExperimentConfig::from_json(&v2), Err(Error::Config(_))));
        let dup = base("").replace(r#"{"kind": "gradient"}"#, r#"{"kind": "control"}"#);
        assert!(ExperimentConfig::from_json(&dup).is_err());
    }

    #[test]
    fn model_sources() {
        let text = base("").replace(
            r#"{"kind": "control"}"#,
            r#"{"kind": "control", "model": {"periodic": {"period": 6.283185307179586, "harmonics": 2}}, "label": "p"},
               {"kind": "control", "model": {"explicit": {"coeffs": [1.0, -1.9]}}, "label": "e"}"#,
        );
        let c = ExperimentConfig::from_json(&text).unwrap();
        let exp = Experiment::new(c, None).unwrap();
        for (a, degree) in exp.config.algorithms.iter().zip([5, 2]) {
            if let AlgorithmConfig::Control { model, .. } = a {
                assert_eq!(exp.model_for(model).unwrap().degree(), degree);
            }
        }
    }

    #[test]
    fn problem_signal_combinations() {
        let nq = base("")
            .replace(r#"{"kind": "quadratic"}"#, r#"{"kind": "non_quadratic", "omega": 1.0}"#);
        assert!(ExperimentConfig::from_json(&nq).is_err());
        let tv = base("").replace(r#"{"kind": "quadratic"}"#, r#"{"kind": "tv_hessian", "omega": 1.0}"#);
        assert!(ExperimentConfig::from_json(&tv).is_err());
        let tv_ok = tv.replace(r#"{"kind": "sine", "omega": 1.0}"#, r#"{"kind": "constant"}"#);
        let exp = Experiment::new(ExperimentConfig::from_json(&tv_ok).unwrap(), None).unwrap();
        assert!(matches!(exp.instance().unwrap(), Instance::TvHessian(_)));
    }

    #[test]
    fn seed_override_changes_defaults() {
        let text = base("").replace(r#"{"kind": "sine", "omega": 1.0}"#, r#"{"kind": "ramp"}"#);
        let c = ExperimentConfig::from_json(&text).unwrap();
        let a = Experiment::new(c.clone(), None).unwrap();
        let b = Experiment::new(c.clone(), Some(3)).unwrap();
        let d = Experiment::new(c, Some(4)).unwrap();
        assert_eq!(a.signal, b.signal);
        assert_ne!(a.signal, d.signal);
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::Config("x".into())), 1);
        assert_eq!(exit_code(&Error::Infeasible { margin: -1.0 }), 2);
        assert_eq!(exit_code(&Error::Oracle { step: 0, reason: "x".into() }), 3);
    }

    #[test]
    fn report_format() {
        let mut r = Report::default();
        r.push("a", 1);
        r.push("b.c", "x");
        assert_eq!(r.render(), "a=1\nb.c=x\n");
        assert_eq!(r.get("b.c"), Some("x"));
        assert_eq!(report_map(&r).len(), 2);
    }
}
