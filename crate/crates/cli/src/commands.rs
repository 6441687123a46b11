//! Subcommand bodies. Each returns its result instead of printing, so the
//! binary stays a thin dispatcher and the logic is testable.

use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use blowup_core::coeffs::CoefficientSpec;
use blowup_core::evolve::{evolve_interval, exact_pc_solution, Trajectory};
use blowup_core::experiment::{limit_sequence, run_construction, ExperimentConfig};
use blowup_core::linops::{estimate_mu, identity_residuals, MuEstimate};
use blowup_core::modulation::{
    decompose, energy_h, project_orthogonal, DecomposeOptions, DecompositionDiagnostics, EnergyParams, Frame,
    ModulationState, Params,
};
use blowup_core::profiles::{
    build_bundle, solve_ground_state, solve_ground_state_with_history, ProfileBundle, DEFAULT_GROUND_STATE_TOL,
};
use blowup_core::{Complex, ComplexField, Field, Grid, SpatialGrid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{InitialData, RunConfig};
use crate::output::{emit_outputs, read_field_csv, RunResults};

#[derive(Clone, Debug, Serialize)]
pub struct GroundStateReport {
    pub residual: f64,
    pub iterations: usize,
    pub q0: f64,
    pub mass: f64,
}

pub fn ground_state(dim: usize, points: usize, half_width: f64, tol: f64) -> Result<(Field, GroundStateReport)> {
    let grid = SpatialGrid::new(dim, half_width, points)?;
    let gs = solve_ground_state_with_history(&grid, tol)?;
    let q = gs.q;
    let report = GroundStateReport {
        residual: gs.residuals.last().copied().unwrap_or(f64::NAN),
        iterations: gs.residuals.len(),
        q0: q.values().iter().map(|z| z.re).fold(0.0, f64::max),
        mass: q.l2_sq(),
    };
    Ok((q, report))
}

#[derive(Clone, Debug, Serialize)]
pub struct CoercivityProbe {
    pub seed: u64,
    pub trials: usize,
    pub coercive: usize,
    /// smallest `H / ((μ/4)||ε||²_{H¹} + ε₂ b² || |y|ε ||²)` over the trials
    pub min_ratio: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct OperatorsReport {
    pub grid: (usize, f64, usize),
    pub ground_state_residual: f64,
    pub rho_residual: f64,
    /// the five identities by name
    pub residuals: Vec<(String, f64)>,
    pub max_residual: f64,
    /// `||L- (yQ) + ∇Q||`, the translation identity with unit coefficient
    pub translation_unit_coefficient: f64,
    pub mu: MuEstimate,
    pub probe: Option<CoercivityProbe>,
}

/// Random `ε` orthogonal to the decomposition directions and to `Q`, checked
/// against the coercivity of the modified energy at `λ = b = 0.1`.
pub fn coercivity_probe(bundle: &ProfileBundle<f64>, mu: f64, seed: u64, trials: usize) -> Result<CoercivityProbe> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = EnergyParams::defaults(mu, 8);
    let mut coercive = 0;
    let mut min_ratio = f64::INFINITY;
    for _ in 0..trials {
        let c: Vec<Complex<f64>> = (0..6)
            .map(|_| Complex::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        let size: f64 = rng.random_range(1e-4..3e-2);
        let raw = ComplexField::from_fn(&bundle.grid, |y| {
            let g = (-0.5 * y * y).exp();
            c.iter().enumerate().map(|(k, a)| a * y.powi(k as i32) * g).sum()
        })?;
        let eps = project_orthogonal(&raw, bundle)?;
        let norm = eps.h1_sq().sqrt();
        if norm == 0.0 {
            continue;
        }
        let st = ModulationState {
            lambda: 0.1,
            b: 0.1,
            gamma: 0.0,
            w: vec![0.0; bundle.grid.dim()],
            eps: eps.scale_real(size / norm),
            s: 10.0,
            t: -0.1,
            diagnostics: DecompositionDiagnostics {
                ortho: Vec::new(),
                near_identity: 0.0,
                translation_imag: 0.0,
                iterations: 0,
                history: Vec::new(),
            },
        };
        let d = energy_h(&st, &CoefficientSpec::free(), &params, mu, bundle)?;
        coercive += usize::from(d.coercive);
        min_ratio = min_ratio.min(d.coercivity_lhs / d.coercivity_rhs);
    }
    Ok(CoercivityProbe {
        seed,
        trials,
        coercive,
        min_ratio,
    })
}

pub fn operators_check(grid: &Grid, seed: Option<u64>, trials: usize) -> Result<OperatorsReport> {
    let bundle = build_bundle(grid)?;
    let res = identity_residuals(&bundle)?;
    let mu = estimate_mu(&bundle)?;
    let probe = match seed {
        Some(seed) => Some(coercivity_probe(&bundle, mu.mu, seed, trials)?),
        None => None,
    };
    Ok(OperatorsReport {
        grid: (grid.dim(), grid.half_width(), grid.points()),
        ground_state_residual: bundle.ground_state_residual,
        rho_residual: bundle.rho_residual,
        residuals: res.named().iter().map(|(n, v)| (n.to_string(), *v)).collect(),
        max_residual: res.max(),
        translation_unit_coefficient: res.lminus_y_q_unit,
        mu,
        probe,
    })
}

/// Evolves the configured initial data over `evolve.t_span`.
pub fn simulate(cfg: &RunConfig) -> Result<Trajectory<f64>> {
    let spec = cfg.coefficient_spec().map_err(anyhow::Error::msg)?;
    let grid: Grid = cfg.grid.build()?;
    let ecfg = cfg.evolve_config();
    let q = solve_ground_state(&grid, DEFAULT_GROUND_STATE_TOL)?;
    let u0 = match cfg.evolve.initial {
        InitialData::ExactS => exact_pc_solution(ecfg.t_span.0, &q)?,
        InitialData::GroundState => q,
    };
    Ok(evolve_interval(&u0, &spec, &ecfg)?)
}

/// Rebuilds the grid behind `x` samples: a periodic line when `dim == 1`,
/// a cell-centred radial mesh otherwise.
pub fn grid_from_nodes(xs: &[f64], dim: usize) -> Result<Grid> {
    ensure!(xs.len() >= 8, "need at least 8 samples, got {}", xs.len());
    let n = xs.len();
    let h = xs[1] - xs[0];
    let grid = if dim == 1 {
        SpatialGrid::periodic(-xs[0], n)?
    } else {
        SpatialGrid::radial(dim, n as f64 * h, n)?
    };
    let tol = 1e-9 * grid.half_width();
    for (a, b) in xs.iter().zip(grid.coords()) {
        ensure!((a - b).abs() <= tol, "sample at x = {a} is off the grid (expected {b})");
    }
    Ok(grid)
}

#[derive(Clone, Debug, Serialize)]
pub struct StateJson {
    pub lambda: f64,
    pub b: f64,
    pub gamma: f64,
    pub gamma_wrapped: f64,
    pub w: Vec<f64>,
    pub s: f64,
    pub t: f64,
    pub eps_h1: f64,
    pub eps_l2: f64,
    pub diagnostics: DecompositionDiagnostics,
}

impl StateJson {
    pub fn from_state(st: &ModulationState<f64>) -> Self {
        Self {
            lambda: st.lambda,
            b: st.b,
            gamma: st.gamma,
            gamma_wrapped: st.gamma_wrapped(),
            w: st.w.clone(),
            s: st.s,
            t: st.t,
            eps_h1: st.eps_h1(),
            eps_l2: st.eps.l2(),
            diagnostics: st.diagnostics.clone(),
        }
    }
}

/// `l,b,g,w` (with `w` omitted on radial meshes).
pub fn parse_guess(text: &str, dim: usize) -> Result<Params> {
    let v: Vec<f64> = text
        .split(',')
        .map(|c| c.trim().parse::<f64>().with_context(|| format!("bad number {c:?} in guess")))
        .collect::<Result<_>>()?;
    match (v.len(), dim) {
        (4, 1) => Ok(Params::new(v[0], v[1], v[2], vec![v[3]])),
        (3, d) if d > 1 => Ok(Params::new(v[0], v[1], v[2], vec![0.0; d])),
        (n, _) => bail!("guess needs l,b,g,w on the line and l,b,g on radial meshes; got {n} numbers"),
    }
}

/// Decomposes a field given as `x,re,im` rows on a grid of dimension `dim`.
pub fn decompose_csv(text: &str, dim: usize, guess: &Params, opts: &DecomposeOptions, t: f64) -> Result<StateJson> {
    let rows = read_field_csv(text)?;
    let xs: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let grid = grid_from_nodes(&xs, dim)?;
    let field = ComplexField::new(grid.clone(), rows.iter().map(|r| Complex::new(r.1, r.2)).collect())?;
    let bundle = build_bundle(&grid)?;
    let st = decompose(&field, &Frame::identity(dim), guess, &bundle, opts, t)?;
    Ok(StateJson::from_state(&st))
}

/// `μ` from the configuration, or estimated on `bundle`.
fn mu_for(cfg: &RunConfig, bundle: &ProfileBundle<f64>) -> Result<f64> {
    Ok(match cfg.modulation.mu {
        Some(mu) => mu,
        None => estimate_mu(bundle)?.mu,
    })
}

fn experiment_setup(cfg: &RunConfig, spec: CoefficientSpec) -> Result<(ExperimentConfig, ProfileBundle<f64>, f64)> {
    let mut ecfg = cfg.experiment_config(spec);
    let grid: Grid = cfg.grid.build()?;
    let bundle = build_bundle(&grid)?;
    let mu = mu_for(cfg, &bundle)?;
    ecfg.energy = Some(cfg.modulation.energy_params(mu));
    Ok((ecfg, bundle, mu))
}

/// Construction run, plus the limit sequence when a schedule is configured;
/// outputs go to `dir`.
pub fn experiment(cfg: &RunConfig, dir: &Path) -> Result<Vec<PathBuf>> {
    let spec = cfg.coefficient_spec().map_err(anyhow::Error::msg)?;
    let (ecfg, bundle, mu) = experiment_setup(cfg, spec)?;
    let rec = run_construction(&ecfg, &bundle, mu)?;
    let cauchy = if ecfg.schedule.is_empty() {
        None
    } else {
        // for the free equation every member equals S(t₀) up to phase, i.e. Q in the frame
        let oracle = ecfg.spec.is_free().then_some(&bundle.q);
        Some(limit_sequence(&ecfg, &bundle, mu, oracle)?)
    };
    let runs = [RunResults::from_record("run", &rec)];
    emit_outputs(dir, &runs, cauchy.as_ref(), cfg.output.plots)
}

/// Label for a sweep member: `a<index>`.
pub fn sweep_label(i: usize) -> String {
    format!("a{i}")
}

/// Construction runs with `V` scaled by each amplitude, in parallel.
pub fn sweep(cfg: &RunConfig, amplitudes: &[f64], dir: &Path) -> Result<Vec<PathBuf>> {
    ensure!(!amplitudes.is_empty(), "sweep needs at least one amplitude");
    let spec = cfg.coefficient_spec().map_err(anyhow::Error::msg)?;
    let (ecfg, bundle, mu) = experiment_setup(cfg, spec.clone())?;
    let runs: Vec<Result<RunResults>> = amplitudes
        .par_iter()
        .enumerate()
        .map(|(i, &a)| {
            let member = ExperimentConfig {
                spec: spec.with_potential_scaled(a),
                ..ecfg.clone()
            };
            let rec = run_construction(&member, &bundle, mu).with_context(|| format!("amplitude {a}"))?;
            Ok(RunResults::from_record(&sweep_label(i), &rec))
        })
        .collect();
    let runs: Vec<RunResults> = runs.into_iter().collect::<Result<_>>()?;
    emit_outputs(dir, &runs, None, cfg.output.plots)
}
