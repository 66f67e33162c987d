//! CHSH correlators and the S parameter, from states (exact Born
//! probabilities) and from coincidence counts (with Poisson errors).
//!
//! With the R(α) = cos α|H⟩ + sin α|V⟩ convention, |Ψ⁻⟩ gives S = −2√2 at
//! the canonical angles. Results keep the sign; reports use |S|.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, FRAC_PI_8, SQRT_2};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numerics::nelder_mead;
use crate::qstate::{born_probability, DensityMatrix, Projector1Q};

pub const TSIRELSON: f64 = 2.0 * SQRT_2;

/// Analyzer angles for the four correlators E₀..E₃; E_i uses (alpha[i], beta[i]).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChshAngles {
    pub alpha: [f64; 4],
    pub beta: [f64; 4],
}

impl ChshAngles {
    pub fn canonical() -> Self {
        Self::from_directions(0.0, FRAC_PI_4, FRAC_PI_8, 3.0 * FRAC_PI_8)
    }

    /// Angles built from the two analyzer directions per side:
    /// E₀ = (a, b), E₁ = (a′, b), E₂ = (a, b′), E₃ = (a′, b′).
    pub fn from_directions(a: f64, a_prime: f64, b: f64, b_prime: f64) -> Self {
        Self {
            alpha: [a, a_prime, a, a_prime],
            beta: [b, b, b_prime, b_prime],
        }
    }

    /// (a, a′, b, b′), assuming the angles follow the CHSH pattern.
    pub fn directions(&self) -> [f64; 4] {
        [self.alpha[0], self.alpha[1], self.beta[0], self.beta[2]]
    }
}

/// Analyzer settings of one count cell, radians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellSetting {
    pub a_hwp: f64,
    pub a_qwp: f64,
    pub b_hwp: f64,
    pub b_qwp: f64,
}

/// Coincidence counts indexed [A-setting][B-setting] with
/// A ∈ (a, a⊥, a′, a′⊥) and B ∈ (b, b⊥, b′, b′⊥).
#[derive(Debug, Clone, PartialEq)]
pub struct CountGrid {
    counts: [[f64; 4]; 4],
    pub settings: Option<[[CellSetting; 4]; 4]>,
    /// Integration time per setting, s.
    pub integration_time: f64,
}

pub const A_LABELS: [&str; 4] = ["a", "a_perp", "a'", "a'_perp"];
pub const B_LABELS: [&str; 4] = ["b", "b_perp", "b'", "b'_perp"];

impl CountGrid {
    pub fn new(counts: [[f64; 4]; 4], integration_time: f64) -> Result<Self> {
        for (i, row) in counts.iter().enumerate() {
            for (j, &n) in row.iter().enumerate() {
                if !(n >= 0.0 && n.is_finite()) {
                    return Err(Error::input(format!(
                        "count for cell ({}, {}) is {n}; counts must be non-negative",
                        A_LABELS[i], B_LABELS[j]
                    )));
                }
            }
        }
        if !(integration_time >= 0.0) {
            return Err(Error::input("integration time must be non-negative"));
        }
        Ok(Self { counts, settings: None, integration_time })
    }

    pub fn from_integers(counts: [[u64; 4]; 4], integration_time: f64) -> Result<Self> {
        Self::new(counts.map(|r| r.map(|n| n as f64)), integration_time)
    }

    pub fn with_settings(mut self, settings: [[CellSetting; 4]; 4]) -> Self {
        self.settings = Some(settings);
        self
    }

    pub fn counts(&self) -> &[[f64; 4]; 4] {
        &self.counts
    }

    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.counts[a][b]
    }

    pub fn total(&self) -> f64 {
        self.counts.iter().flatten().sum()
    }

    /// Cellwise sum; settings are kept from `self`.
    pub fn add(&self, other: &CountGrid) -> CountGrid {
        let mut counts = self.counts;
        for (row, orow) in counts.iter_mut().zip(&other.counts) {
            for (n, m) in row.iter_mut().zip(orow) {
                *n += m;
            }
        }
        CountGrid {
            counts,
            settings: self.settings,
            integration_time: self.integration_time + other.integration_time,
        }
    }

    /// (n₊₊, n₊₋, n₋₊, n₋₋) for correlator `i`.
    pub fn quadruple(&self, i: usize) -> [f64; 4] {
        let (ra, rb) = QUADRUPLE_BLOCKS[i];
        let n = &self.counts;
        [n[ra][rb], n[ra][rb + 1], n[ra + 1][rb], n[ra + 1][rb + 1]]
    }
}

/// (first A row, first B column) of the 2×2 block used by E₀..E₃.
const QUADRUPLE_BLOCKS: [(usize, usize); 4] = [(0, 0), (2, 0), (0, 2), (2, 2)];
const S_SIGNS: [f64; 4] = [1.0, 1.0, -1.0, 1.0];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SResult {
    /// Signed S = E₀ + E₁ − E₂ + E₃.
    pub s: f64,
    pub delta_s: f64,
    pub e: [f64; 4],
    pub delta_e: [f64; 4],
    pub total_counts: f64,
}

impl SResult {
    pub fn abs_s(&self) -> f64 {
        self.s.abs()
    }

    /// 2√2 − |S|.
    pub fn tsirelson_gap(&self) -> f64 {
        TSIRELSON - self.s.abs()
    }
}

/// Correlator E = (n₊₊ − n₊₋ − n₋₊ + n₋₋)/D and its Poisson uncertainty
/// ΔE = 2/D^{3/2} · √((n₊₊ + n₋₋)(n₊₋ + n₋₊)).
pub fn correlation_from_quadruple(n_pp: f64, n_pm: f64, n_mp: f64, n_mm: f64) -> Result<(f64, f64)> {
    if [n_pp, n_pm, n_mp, n_mm].iter().any(|n| !(*n >= 0.0)) {
        return Err(Error::input("counts must be non-negative"));
    }
    let d = n_pp + n_pm + n_mp + n_mm;
    if d == 0.0 {
        return Err(Error::input("all four counts of a correlator are zero"));
    }
    let e = (n_pp - n_pm - n_mp + n_mm) / d;
    let de = 2.0 / d.powf(1.5) * ((n_pp + n_mm) * (n_pm + n_mp)).sqrt();
    Ok((e, de))
}

pub fn s_from_count_grid(grid: &CountGrid) -> Result<SResult> {
    let mut e = [0.0; 4];
    let mut delta_e = [0.0; 4];
    for i in 0..4 {
        let [pp, pm, mp, mm] = grid.quadruple(i);
        let (ei, dei) = correlation_from_quadruple(pp, pm, mp, mm).map_err(|err| {
            Error::input(format!("correlator E{i}: {err}"))
        })?;
        e[i] = ei;
        delta_e[i] = dei;
    }
    Ok(SResult {
        s: (0..4).map(|i| S_SIGNS[i] * e[i]).sum(),
        delta_s: delta_e.iter().map(|d| d * d).sum::<f64>().sqrt(),
        e,
        delta_e,
        total_counts: grid.total(),
    })
}

/// Exact correlator for linear analyzers at (α, β).
pub fn correlation_of_state(rho: &DensityMatrix, alpha: f64, beta: f64) -> f64 {
    let pa = [Projector1Q::linear(alpha), Projector1Q::linear(alpha + FRAC_PI_2)];
    let pb = [Projector1Q::linear(beta), Projector1Q::linear(beta + FRAC_PI_2)];
    let p = |i: usize, j: usize| born_probability(rho, &pa[i], &pb[j]);
    let (pp, pm, mp, mm) = (p(0, 0), p(0, 1), p(1, 0), p(1, 1));
    (pp - pm - mp + mm) / (pp + pm + mp + mm)
}

/// Signed S from exact Born probabilities.
pub fn s_of_state(rho: &DensityMatrix, angles: &ChshAngles) -> f64 {
    (0..4)
        .map(|i| S_SIGNS[i] * correlation_of_state(rho, angles.alpha[i], angles.beta[i]))
        .sum()
}

/// Projectors for the four A and four B settings of a CHSH grid:
/// (a, a⊥, a′, a′⊥) and (b, b⊥, b′, b′⊥).
pub fn grid_projectors(angles: &ChshAngles) -> ([Projector1Q; 4], [Projector1Q; 4]) {
    let [a, ap, b, bp] = angles.directions();
    let lin = Projector1Q::linear;
    (
        [lin(a), lin(a + FRAC_PI_2), lin(ap), lin(ap + FRAC_PI_2)],
        [lin(b), lin(b + FRAC_PI_2), lin(bp), lin(bp + FRAC_PI_2)],
    )
}

/// Expected counts N·τ·p for each cell of the grid.
pub fn expected_count_grid(rho: &DensityMatrix, angles: &ChshAngles, pairs: f64) -> Result<CountGrid> {
    let (pa, pb) = grid_projectors(angles);
    let counts = std::array::from_fn(|i| std::array::from_fn(|j| pairs * born_probability(rho, &pa[i], &pb[j])));
    CountGrid::new(counts, 0.0)
}

/// Maximizes |S| over the analyzer directions (a, a′, b, b′), starting from
/// the canonical angles. Never returns less than the canonical |S|.
pub fn optimize_angles(rho: &DensityMatrix) -> Result<(ChshAngles, f64)> {
    let canonical = ChshAngles::canonical();
    let canonical_s = s_of_state(rho, &canonical).abs();
    let loss = |x: &[f64]| -s_of_state(rho, &ChshAngles::from_directions(x[0], x[1], x[2], x[3])).abs();

    let [a, ap, b, bp] = canonical.directions();
    let starts: Vec<[f64; 4]> = [0.0, FRAC_PI_8, FRAC_PI_4, 3.0 * FRAC_PI_8]
        .iter()
        .flat_map(|&shift| {
            [[a + shift, ap + shift, b + shift, bp + shift], [a + shift, ap + shift, -b - shift, -bp - shift]]
        })
        .collect();
    let results: Vec<_> = starts
        .par_iter()
        .map(|x0| {
            let first = nelder_mead(loss, x0, 0.1, 1e-13, 20_000);
            nelder_mead(loss, &first.x, 1e-3, 1e-14, 20_000)
        })
        .collect();
    if results.iter().all(|m| !m.converged) {
        let best = results.iter().map(|m| m.value).fold(f64::INFINITY, f64::min);
        return Err(Error::NonConvergence {
            what: "CHSH angle optimization".into(),
            iterations: results.iter().map(|m| m.iterations).sum(),
            residual: best,
        });
    }
    let best = results
        .iter()
        .filter(|m| m.converged)
        .min_by(|x, y| x.value.total_cmp(&y.value))
        .expect("at least one converged run");
    if -best.value < canonical_s {
        return Ok((canonical, canonical_s));
    }
    let x = &best.x;
    Ok((ChshAngles::from_directions(x[0], x[1], x[2], x[3]), -best.value))
}
