//! Pinned thresholds and the report format of the acceptance run.

use std::fmt;
use std::time::Duration;

/// Ground state on the line.
pub mod ground_state {
    pub const RESIDUAL: f64 = 1e-10;
    pub const PEAK_TOL: f64 = 1e-8;
    pub const MASS_TOL: f64 = 1e-8;
    pub const RUNTIME_S: f64 = 5.0;
}

pub mod identities {
    pub const RESIDUAL: f64 = 1e-8;
    pub const RUNTIME_S: f64 = 30.0;
}

pub mod coercivity {
    /// half a unit in the second significant digit
    pub const RELATIVE_CHANGE: f64 = 5e-3;
}

pub mod tracking {
    pub const L2_ERROR: f64 = 1e-5;
    pub const ORDER_RATIO: (f64, f64) = (3.5, 4.5);
    pub const MASS_DRIFT: f64 = 1e-10;
    pub const RUNTIME_S: f64 = 60.0;
}

pub mod decomposition {
    pub const PARAMS: f64 = 1e-10;
    pub const ORTHO: f64 = 1e-10;
    pub const GAUGE: f64 = 1e-10;
}

pub mod eps_equation {
    pub const RESIDUAL: f64 = 1e-5;
    /// the reduction under halving must be 4 within this
    pub const RATIO_TOL: f64 = 0.5;
}

pub mod rates {
    pub const SLOPE: (f64, f64) = (0.95, 1.05);
    pub const MIN_DECADES: f64 = 0.5;
    pub const MOD_SLOPE: f64 = -2.3;
    pub const RUNTIME_S: f64 = 600.0;
}

pub mod bootstrap {
    pub const S0: f64 = 10.0;
    pub const K: u32 = 8;
    /// largest admissible constant of a one-sided fitted bound
    pub const FITTED_C: f64 = 1e3;
}

pub mod energy {
    pub const MONOTONE_FRACTION: f64 = 0.95;
}

pub mod limit {
    pub const RATIO: f64 = 0.7;
    pub const MIN_MEMBERS: usize = 4;
    pub const MASS_TOL: f64 = 1e-6;
    pub const RUNTIME_S: f64 = 900.0;
}

/// Outcome of one criterion.
#[derive(Clone, Debug)]
pub struct Verdict {
    pub id: u8,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub elapsed: Duration,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "criterion {:>2} {} {}: {} [{:.1} s]",
            self.id,
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.detail,
            self.elapsed.as_secs_f64()
        )
    }
}

/// Collects named checks and renders them as `ok`/`NOT` items.
#[derive(Default)]
pub struct Checks {
    items: Vec<(bool, String)>,
}

impl Checks {
    pub fn check(&mut self, ok: bool, what: impl Into<String>) -> &mut Self {
        self.items.push((ok, what.into()));
        self
    }

    pub fn passed(&self) -> bool {
        self.items.iter().all(|i| i.0)
    }

    pub fn detail(&self) -> String {
        self.items
            .iter()
            .map(|(ok, s)| if *ok { s.clone() } else { format!("NOT {s}") })
            .collect::<Vec<_>>()
            .join("; ")
    }

    pub fn verdict(&self, id: u8, name: &'static str, elapsed: Duration) -> Verdict {
        Verdict {
            id,
            name,
            passed: self.passed(),
            detail: self.detail(),
            elapsed,
        }
    }
}
