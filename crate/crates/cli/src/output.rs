//! CSV, JSON and SVG outputs.
//!
//! CSV files use '.' decimals, ',' separators and a mandatory header row.
//! Floats are written with 17 significant digits (`{:.16e}`), so identical
//! inputs give byte-identical files.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use blowup_core::evolve::Trajectory;
use blowup_core::experiment::{
    interval_conversion_check, momentum_diagnostic, rate_fits, ConstructionRecord, ConstructionStop, IntervalReport,
    LimitReport, MomentumReport, RateFit, Sample,
};
use blowup_core::modulation::{BootstrapParams, EnergyParams, MonotonicityReport};
use blowup_core::{ComplexField, Real};
use serde::Serialize;

use crate::svg::{flag_timeline, line_plot, Series};

/// 17 significant digits; non-finite values as `NaN`, `inf`, `-inf`.
pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "NaN".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{x:.16e}")
    }
}

fn push_row(out: &mut String, cells: &[String]) {
    out.push_str(&cells.join(","));
    out.push('\n');
}

/// `x,Q` on the grid nodes (the radius on radial meshes).
pub fn ground_state_csv<T: Real>(q: &ComplexField<T>) -> String {
    let mut out = String::from("x,Q\n");
    for (x, z) in q.grid().coords().iter().zip(q.values()) {
        push_row(&mut out, &[fmt_f64(x.f64()), fmt_f64(z.re.f64())]);
    }
    out
}

/// `x,re,im`: the format read by `decompose --in`.
pub fn field_csv<T: Real>(u: &ComplexField<T>) -> String {
    let mut out = String::from("x,re,im\n");
    for (x, z) in u.grid().coords().iter().zip(u.values()) {
        push_row(&mut out, &[fmt_f64(x.f64()), fmt_f64(z.re.f64()), fmt_f64(z.im.f64())]);
    }
    out
}

/// `t,mass,energy,momentum,grad_norm,dt`, one row per snapshot. The momentum
/// column is the component on the line and the Euclidean norm otherwise.
pub fn trajectory_csv<T: Real>(traj: &Trajectory<T>) -> String {
    let mut out = String::from("t,mass,energy,momentum,grad_norm,dt\n");
    for s in &traj.snapshots {
        let p = &s.conserved.momentum;
        let momentum = if p.len() == 1 { p[0] } else { p.iter().map(|v| v * v).sum::<f64>().sqrt() };
        push_row(
            &mut out,
            &[s.t, s.conserved.mass, s.conserved.energy, momentum, s.grad_norm, s.dt].map(fmt_f64),
        );
    }
    out
}

fn w_columns(dim: usize) -> Vec<String> {
    if dim == 1 {
        vec!["w".into()]
    } else {
        (1..=dim).map(|i| format!("w_{i}")).collect()
    }
}

pub fn construction_header(dim: usize) -> String {
    let mut cols: Vec<String> = ["t", "s", "lambda", "b", "gamma_unwrapped"].iter().map(|s| s.to_string()).collect();
    cols.extend(w_columns(dim));
    cols.extend(
        ["eps_h1", "eps_weighted_l2", "mod_norm", "H", "S", "mass", "energy", "flags"]
            .iter()
            .map(|s| s.to_string()),
    );
    cols.join(",")
}

/// One row per recorded sample; `mod_norm` is `NaN` at the two ends of the record.
pub fn construction_csv(samples: &[Sample], dim: usize) -> String {
    let mut out = construction_header(dim);
    out.push('\n');
    for s in samples {
        let mut cells: Vec<String> = [s.t, s.s, s.lambda, s.b, s.gamma].iter().map(|&v| fmt_f64(v)).collect();
        cells.extend((0..dim).map(|i| fmt_f64(s.w.get(i).copied().unwrap_or(0.0))));
        cells.extend(
            [
                s.eps_h1,
                s.eps_weighted_l2,
                s.mod_norm().unwrap_or(f64::NAN),
                s.h,
                s.s_energy,
                s.conserved.mass,
                s.conserved.energy,
            ]
            .iter()
            .map(|&v| fmt_f64(v)),
        );
        cells.push(s.flags.code());
        push_row(&mut out, &cells);
    }
    out
}

#[derive(Clone, Debug, Serialize)]
pub struct FlagStatistics {
    pub samples: usize,
    pub all_hold: usize,
    pub eps: usize,
    pub lambda: usize,
    pub b: usize,
    pub w: usize,
    /// rescaled time of the first sample (in integration order) with a failing flag
    pub first_failure_s: Option<f64>,
    pub max_refined_eps: f64,
    pub max_refined_w: f64,
    pub coercive: usize,
}

pub fn flag_statistics(samples: &[Sample]) -> FlagStatistics {
    let count = |f: &dyn Fn(&Sample) -> bool| samples.iter().filter(|s| f(s)).count();
    FlagStatistics {
        samples: samples.len(),
        all_hold: count(&|s| s.flags.all()),
        eps: count(&|s| s.flags.eps),
        lambda: count(&|s| s.flags.lambda),
        b: count(&|s| s.flags.b),
        w: count(&|s| s.flags.w),
        first_failure_s: samples.iter().find(|s| !s.flags.all()).map(|s| s.s),
        max_refined_eps: samples.iter().map(|s| s.flags.refined_eps).fold(0.0, f64::max),
        max_refined_w: samples.iter().map(|s| s.flags.refined_w).fold(0.0, f64::max),
        coercive: count(&|s| s.coercive),
    }
}

/// What one construction run contributes to the outputs.
#[derive(Clone, Debug)]
pub struct RunResults {
    pub label: String,
    pub dim: usize,
    pub samples: Vec<Sample>,
    pub stop: Option<ConstructionStop>,
    pub s_star: Option<f64>,
    pub steps: usize,
    pub mass_drift: f64,
    pub mu: f64,
    pub energy_params: Option<EnergyParams>,
    pub bootstrap: Option<BootstrapParams>,
    pub monotonicity: Option<MonotonicityReport>,
}

impl RunResults {
    pub fn from_record<T: Real>(label: &str, rec: &ConstructionRecord<T>) -> Self {
        Self {
            label: label.to_string(),
            dim: rec.final_field.grid().dim(),
            samples: rec.samples.clone(),
            stop: Some(rec.stop),
            s_star: rec.s_star,
            steps: rec.steps,
            mass_drift: rec.mass_drift,
            mu: rec.mu,
            energy_params: Some(rec.energy_params),
            bootstrap: Some(rec.bootstrap),
            monotonicity: Some(rec.monotonicity.clone()),
        }
    }

    /// A run that recorded nothing.
    pub fn empty(label: &str, dim: usize) -> Self {
        Self {
            label: label.to_string(),
            dim,
            samples: Vec::new(),
            stop: None,
            s_star: None,
            steps: 0,
            mass_drift: 0.0,
            mu: f64::NAN,
            energy_params: None,
            bootstrap: None,
            monotonicity: None,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
#[serde(untagged)]
pub enum FitsOrError {
    Fits(Vec<RateFit>),
    Error { error: String },
}

#[derive(Clone, Debug, Serialize)]
pub struct RunSummary {
    pub label: String,
    pub trajectory: String,
    pub samples: usize,
    pub stop: Option<ConstructionStop>,
    pub s_star: Option<f64>,
    pub steps: usize,
    pub mass_drift: f64,
    pub mu: f64,
    pub energy_params: Option<EnergyParams>,
    pub bootstrap: Option<BootstrapParams>,
    pub rate_fits: FitsOrError,
    pub flag_statistics: FlagStatistics,
    pub monotonicity: Option<MonotonicityReport>,
    pub momentum: Option<MomentumReport>,
    pub interval: Option<IntervalReport>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Summary {
    pub runs: Vec<RunSummary>,
    /// limit-sequence report, when a schedule was configured
    pub cauchy: Option<LimitReport>,
}

pub fn trajectory_file_name(label: &str) -> String {
    format!("trajectory_{label}.csv")
}

pub fn run_summary(run: &RunResults) -> RunSummary {
    let nonempty = !run.samples.is_empty();
    RunSummary {
        label: run.label.clone(),
        trajectory: trajectory_file_name(&run.label),
        samples: run.samples.len(),
        stop: run.stop,
        s_star: run.s_star,
        steps: run.steps,
        mass_drift: run.mass_drift,
        mu: run.mu,
        energy_params: run.energy_params,
        bootstrap: run.bootstrap,
        rate_fits: match rate_fits(&run.samples) {
            Ok(f) => FitsOrError::Fits(f),
            Err(e) => FitsOrError::Error { error: e.to_string() },
        },
        flag_statistics: flag_statistics(&run.samples),
        monotonicity: run.monotonicity.clone(),
        momentum: nonempty.then(|| momentum_diagnostic(&run.samples)),
        interval: match (nonempty, run.bootstrap) {
            (true, Some(b)) => Some(interval_conversion_check(&run.samples, b.m_exp)),
            _ => None,
        },
    }
}

fn write(path: PathBuf, text: &str, written: &mut Vec<PathBuf>) -> Result<()> {
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    written.push(path);
    Ok(())
}

fn plots(run: &RunResults) -> [(String, String); 3] {
    let abs_t: Vec<f64> = run.samples.iter().map(|s| s.t.abs()).collect();
    let lb = line_plot(
        &format!("{}: lambda and b against |t|", run.label),
        "|t|",
        "lambda, b",
        &[
            Series {
                name: "lambda".into(),
                points: abs_t.iter().zip(&run.samples).map(|(&t, s)| (t, s.lambda)).collect(),
            },
            Series {
                name: "b".into(),
                points: abs_t.iter().zip(&run.samples).map(|(&t, s)| (t, s.b)).collect(),
            },
        ],
        true,
    );
    let md = line_plot(
        &format!("{}: |Mod| against s", run.label),
        "s",
        "|Mod|",
        &[Series {
            name: "|Mod|".into(),
            points: run
                .samples
                .iter()
                .filter_map(|s| s.mod_norm().map(|m| (s.s, m)))
                .collect(),
        }],
        true,
    );
    let s: Vec<f64> = run.samples.iter().map(|x| x.s).collect();
    let rows: Vec<Vec<bool>> = vec![
        run.samples.iter().map(|x| x.flags.eps).collect(),
        run.samples.iter().map(|x| x.flags.lambda).collect(),
        run.samples.iter().map(|x| x.flags.b).collect(),
        run.samples.iter().map(|x| x.flags.w).collect(),
        run.samples.iter().map(|x| x.coercive).collect(),
    ];
    let fl = flag_timeline(
        &format!("{}: bootstrap flags", run.label),
        &["eps", "lambda", "b", "w", "coercive"],
        &s,
        &rows,
    );
    [
        (format!("{}_lambda_b.svg", run.label), lb),
        (format!("{}_mod.svg", run.label), md),
        (format!("{}_flags.svg", run.label), fl),
    ]
}

/// Writes one trajectory CSV per run, `summary.json`, and with `plots` the
/// three SVG figures per run. Returns the files written.
pub fn emit_outputs(dir: &Path, runs: &[RunResults], cauchy: Option<&LimitReport>, with_plots: bool) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut written = Vec::new();
    let mut summaries = Vec::with_capacity(runs.len());
    for run in runs {
        write(
            dir.join(trajectory_file_name(&run.label)),
            &construction_csv(&run.samples, run.dim),
            &mut written,
        )?;
        summaries.push(run_summary(run));
        if with_plots {
            for (name, svg) in plots(run) {
                write(dir.join(name), &svg, &mut written)?;
            }
        }
    }
    let summary = Summary {
        runs: summaries,
        cauchy: cauchy.cloned(),
    };
    let mut json = serde_json::to_string_pretty(&summary)?;
    json.push('\n');
    write(dir.join("summary.json"), &json, &mut written)?;
    Ok(written)
}

/// Parses `x,re,im` rows; the header row is required.
pub fn read_field_csv(text: &str) -> Result<Vec<(f64, f64, f64)>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, head) = lines.next().context("empty field file")?;
    let cols: Vec<&str> = head.split(',').map(str::trim).collect();
    anyhow::ensure!(cols == ["x", "re", "im"], "field header must be x,re,im, got {head:?}");
    let mut rows = Vec::new();
    for (i, l) in lines {
        let cells: Vec<&str> = l.split(',').map(str::trim).collect();
        anyhow::ensure!(cells.len() == 3, "line {}: expected 3 columns, got {}", i + 1, cells.len());
        let mut v = [0.0; 3];
        for (k, c) in cells.iter().enumerate() {
            v[k] = c.parse().with_context(|| format!("line {}, column {}: bad number {c:?}", i + 1, k + 1))?;
        }
        rows.push((v[0], v[1], v[2]));
    }
    Ok(rows)
}

/// Pretty JSON with a trailing newline.
pub fn to_json<S: Serialize>(value: &S) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_significant_digits() {
        assert_eq!(fmt_f64(0.1), "1.0000000000000001e-1");
        assert_eq!(fmt_f64(-2.5), "-2.5000000000000000e0");
        assert_eq!(fmt_f64(f64::NAN), "NaN");
        let x = std::f64::consts::PI;
        assert_eq!(fmt_f64(x).parse::<f64>().unwrap(), x);
    }

    #[test]
    fn header_columns() {
        assert_eq!(
            construction_header(1),
            "t,s,lambda,b,gamma_unwrapped,w,eps_h1,eps_weighted_l2,mod_norm,H,S,mass,energy,flags"
        );
        assert!(construction_header(2).contains("w_1,w_2"));
    }

    #[test]
    fn field_csv_round_trip() {
        let text = "x,re,im\n-1.0,0.5,0.25\n0.0,1e-3,-2\n";
        let rows = read_field_csv(text).unwrap();
        assert_eq!(rows, vec![(-1.0, 0.5, 0.25), (0.0, 1e-3, -2.0)]);
        assert!(read_field_csv("x,y\n").is_err());
        let err = read_field_csv("x,re,im\n1,2,zz\n").unwrap_err();
        assert!(format!("{err:#}").contains("line 2, column 3"));
    }
}
