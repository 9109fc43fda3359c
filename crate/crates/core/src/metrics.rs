//! Communication-load accounting in exact rationals and the analytic
//! run-time model used to pick the redundancy r.

use num_rational::Ratio;

use crate::error::{Error, Result};
use crate::transport::ShuffleLedger;

/// The normalized shuffle volume of one run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoadReport {
    /// Computation load: how many nodes mapped each file.
    pub r: usize,
    /// Communication load L = total_units / (Q * N), exact.
    pub load: Ratio<u64>,
    /// Shuffled volume in intermediate-value units.
    pub total_units: Ratio<u64>,
    /// The normalizer Q * N.
    pub normalizer: u64,
}

impl LoadReport {
    pub fn load_f64(&self) -> f64 {
        *self.load.numer() as f64 / *self.load.denom() as f64
    }
}

/// Normalizes a ledger's unit count by Q * N.
pub fn communication_load(
    ledger: &ShuffleLedger,
    q: u64,
    n: u64,
    r: usize,
) -> Result<LoadReport> {
    let normalizer = q * n;
    if normalizer == 0 {
        return Err(Error::InvalidConfig(
            "load normalizer Q*N must be positive".into(),
        ));
    }
    let total_units = ledger.total_units();
    Ok(LoadReport {
        r,
        load: total_units / Ratio::from_integer(normalizer),
        total_units,
        normalizer,
    })
}

/// The exact coded load law: (1/r)(1 - r/K).
pub fn coded_load_formula(k: usize, r: usize) -> Ratio<u64> {
    Ratio::new((k - r) as u64, (r * k) as u64)
}

/// The uncoded load at computation load r: 1 - r/K. TeraSort itself is the
/// r = 1 case.
pub fn uncoded_load_formula(k: usize, r: usize) -> Ratio<u64> {
    Ratio::new((k - r) as u64, k as u64)
}

/// Predicted total time at computation load `r`:
/// `r * t_map + t_shuffle / r + t_reduce`.
pub fn predict_total_time(t_map: f64, t_shuffle: f64, t_reduce: f64, r: usize) -> f64 {
    assert!(r >= 1, "computation load starts at 1");
    assert!(
        t_map >= 0.0 && t_shuffle >= 0.0 && t_reduce >= 0.0,
        "stage times cannot be negative"
    );
    r as f64 * t_map + t_shuffle / r as f64 + t_reduce
}

/// The redundancy minimizing the predicted time over {1..K}: evaluate at the
/// floor and ceiling of sqrt(t_shuffle / t_map), clamp to range, and prefer
/// the smaller r on ties.
pub fn optimal_r(t_map: f64, t_shuffle: f64, k: usize) -> Result<usize> {
    if !t_map.is_finite() || t_map <= 0.0 {
        return Err(Error::InvalidCall(format!(
            "map time must be positive, got {t_map}"
        )));
    }
    if !t_shuffle.is_finite() || t_shuffle < 0.0 {
        return Err(Error::InvalidCall(format!(
            "shuffle time cannot be negative, got {t_shuffle}"
        )));
    }
    if k < 1 {
        return Err(Error::InvalidCall("node count must be at least 1".into()));
    }
    let root = (t_shuffle / t_map).sqrt();
    let clamp = |r: usize| r.clamp(1, k);
    let floor = clamp(root.floor() as usize);
    let ceil = clamp(root.ceil() as usize);
    let mut best = floor;
    let mut best_time = predict_total_time(t_map, t_shuffle, 0.0, floor);
    for candidate in [ceil] {
        let time = predict_total_time(t_map, t_shuffle, 0.0, candidate);
        if time < best_time || (time == best_time && candidate < best) {
            best = candidate;
            best_time = time;
        }
    }
    Ok(best)
}

// ---- Tests ----
