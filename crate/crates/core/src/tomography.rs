//! Two-qubit state tomography from 16 product projections: linear inversion,
//! maximum-likelihood reconstruction, and Monte-Carlo error bars.
//!
//! The {H, V, D, R}⊗{H, V, D, R} set is not a POVM, so the pair flux is an
//! unknown of the fit rather than Σ counts.

use nalgebra::{Cholesky, DMatrix, SMatrix};
use rayon::prelude::*;
use rand_distr::{Distribution, Poisson};

use crate::chsh::{s_of_state, ChshAngles};
use crate::error::{Error, Result};
use crate::numerics::{bfgs, c, mean_and_std, median, stream_rng, Mat2, Mat4};
use crate::qstate::{bell_psi_minus, concurrence, fidelity_to_pure, kron_mat, DensityMatrix, Projector1Q};

type Mat16 = SMatrix<f64, 16, 16>;

#[derive(Debug, Clone)]
pub struct TomoSettings {
    projectors: Vec<(Projector1Q, Projector1Q)>,
    labels: Vec<(String, String)>,
    /// Maps Pauli coefficients r_ij (ρ = Σ r_ij σ_i⊗σ_j / 4) to probabilities.
    measurement: Mat16,
    inverse: Mat16,
    condition_number: f64,
}

fn paulis() -> [Mat2; 4] {
    let z = c(0.0, 0.0);
    let one = c(1.0, 0.0);
    let i = c(0.0, 1.0);
    [
        Mat2::identity(),
        Mat2::new(one, z, z, -one),
        Mat2::new(z, one, one, z),
        Mat2::new(z, -i, i, z),
    ]
}

fn pauli_basis() -> Vec<Mat4> {
    let p = paulis();
    (0..16).map(|k| kron_mat(&p[k / 4], &p[k % 4])).collect()
}

impl TomoSettings {
    pub fn new(projectors: Vec<(Projector1Q, Projector1Q)>, labels: Vec<(String, String)>) -> Result<Self> {
        if projectors.len() != 16 || labels.len() != 16 {
            return Err(Error::input("tomography needs exactly 16 projector pairs"));
        }
        let basis = pauli_basis();
        let measurement = Mat16::from_fn(|k, j| {
            let m = kron_mat(projectors[k].0.matrix(), projectors[k].1.matrix());
            (basis[j] * m).trace().re / 4.0
        });
        let sv = measurement.singular_values();
        let (max, min) = (sv.max(), sv.min());
        if !(min > 1e-12 * max) {
            return Err(Error::Singular("tomography settings are not complete".into()));
        }
        let inverse = measurement
            .try_inverse()
            .ok_or_else(|| Error::Singular("measurement matrix is not invertible".into()))?;
        Ok(Self { projectors, labels, measurement, inverse, condition_number: max / min })
    }

    pub fn len(&self) -> usize {
        self.projectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.projectors.is_empty()
    }

    pub fn projectors(&self) -> &[(Projector1Q, Projector1Q)] {
        &self.projectors
    }

    pub fn labels(&self) -> &[(String, String)] {
        &self.labels
    }

    pub fn condition_number(&self) -> f64 {
        self.condition_number
    }

    pub fn index_of(&self, a: &str, b: &str) -> Option<usize> {
        self.labels.iter().position(|(x, y)| x == a && y == b)
    }

    fn operator(&self, k: usize) -> Mat4 {
        kron_mat(self.projectors[k].0.matrix(), self.projectors[k].1.matrix())
    }
}

pub const STANDARD_LABELS: [&str; 4] = ["H", "V", "D", "R"];

/// Product projectors {H, V, D, R}⊗{H, V, D, R}, A-label major.
pub fn standard_tomo_settings() -> TomoSettings {
    let single = [Projector1Q::h(), Projector1Q::v(), Projector1Q::d(), Projector1Q::r()];
    let mut projectors = Vec::with_capacity(16);
    let mut labels = Vec::with_capacity(16);
    for (i, a) in single.iter().enumerate() {
        for (j, b) in single.iter().enumerate() {
            projectors.push((*a, *b));
            labels.push((STANDARD_LABELS[i].to_string(), STANDARD_LABELS[j].to_string()));
        }
    }
    TomoSettings::new(projectors, labels).expect("standard settings are complete")
}

#[derive(Debug, Clone, PartialEq)]
pub struct TomoCounts {
    counts: [f64; 16],
    /// Expected pairs per setting N·τ, if known (0 otherwise).
    pub flux: f64,
}

impl TomoCounts {
    pub fn new(counts: [f64; 16], flux: f64) -> Result<Self> {
        if let Some(k) = counts.iter().position(|n| !(*n >= 0.0 && n.is_finite())) {
            return Err(Error::input(format!("tomography count {k} is {}", counts[k])));
        }
        Ok(Self { counts, flux })
    }

    pub fn counts(&self) -> &[f64; 16] {
        &self.counts
    }

    pub fn total(&self) -> f64 {
        self.counts.iter().sum()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self { counts: self.counts.map(|n| n * factor), flux: self.flux * factor }
    }
}

/// Exact expected counts flux·Tr(ρ M_k).
pub fn expected_tomo_counts(rho: &DensityMatrix, settings: &TomoSettings, flux: f64) -> TomoCounts {
    let counts = std::array::from_fn(|k| flux * (rho.matrix() * settings.operator(k)).trace().re.max(0.0));
    TomoCounts { counts, flux }
}

/// Unique Hermitian unit-trace matrix reproducing the measured frequencies.
/// Negative eigenvalues are kept.
pub fn linear_inversion(counts: &TomoCounts, settings: &TomoSettings) -> Result<DensityMatrix> {
    let n = nalgebra::SVector::<f64, 16>::from_column_slice(&counts.counts);
    let r = settings.inverse * n;
    if !(r[0].abs() > 0.0) {
        return Err(Error::input("tomography counts carry no flux"));
    }
    let basis = pauli_basis();
    let m = basis
        .iter()
        .zip(r.iter())
        .fold(Mat4::zeros(), |acc, (b, &x)| acc + b * c(x / (4.0 * r[0]), 0.0));
    DensityMatrix::unconstrained(m)
}

/// Poisson log-likelihood Σ n ln μ − μ for unnormalized A (μ_k = Tr(A M_k)).
fn poisson_log_likelihood(a: &Mat4, counts: &[f64; 16], ops: &[Mat4]) -> f64 {
    let mut total = 0.0;
    for (n, m) in counts.iter().zip(ops) {
        let mu = (a * m).trace().re;
        if mu <= 0.0 {
            if *n > 0.0 {
                return f64::NEG_INFINITY;
            }
            continue;
        }
        total += if *n > 0.0 { n * mu.ln() - mu } else { -mu };
    }
    total
}

/// Log-likelihood of a normalized state with the flux at its optimum Σn/Σp.
pub fn log_likelihood(rho: &DensityMatrix, counts: &TomoCounts, settings: &TomoSettings) -> f64 {
    let ops: Vec<Mat4> = (0..16).map(|k| settings.operator(k)).collect();
    let p_sum: f64 = ops.iter().map(|m| (rho.matrix() * m).trace().re).sum();
    let flux = counts.total() / p_sum;
    poisson_log_likelihood(&(rho.matrix() * c(flux, 0.0)), &counts.counts, &ops)
}

fn t_from_params(x: &[f64]) -> Mat4 {
    let mut t = Mat4::zeros();
    let mut k = 0;
    for i in 0..4 {
        t[(i, i)] = c(x[k], 0.0);
        k += 1;
    }
    for i in 0..4 {
        for j in i + 1..4 {
            t[(i, j)] = c(x[k], x[k + 1]);
            k += 2;
        }
    }
    t
}

fn params_from_t(t: &Mat4) -> Vec<f64> {
    let mut x = Vec::with_capacity(16);
    for i in 0..4 {
        x.push(t[(i, i)].re);
    }
    for i in 0..4 {
        for j in i + 1..4 {
            x.push(t[(i, j)].re);
            x.push(t[(i, j)].im);
        }
    }
    x
}

/// Physical projection of the linear-inversion estimate.
fn projected_linear(counts: &TomoCounts, settings: &TomoSettings) -> Result<DensityMatrix> {
    Ok(linear_inversion(counts, settings)?.clipped())
}

const MLE_MAX_ITER: usize = 20_000;

/// Maximum-likelihood physical state, parameterized as ρ = T†T / Tr(T†T)
/// with upper-triangular T. The scale of T†T plays the role of the flux.
pub fn mle_reconstruct(counts: &TomoCounts, settings: &TomoSettings) -> Result<DensityMatrix> {
    if !(counts.total() > 0.0) {
        return Err(Error::input("tomography counts are all zero"));
    }
    let ops: Vec<Mat4> = (0..16).map(|k| settings.operator(k)).collect();
    let start = projected_linear(counts, settings)?;
    let p_sum: f64 = ops.iter().map(|m| (start.matrix() * m).trace().re).sum();
    let flux = counts.total() / p_sum;
    let seed = (start.matrix() + Mat4::identity() * c(1e-6, 0.0)) * c(flux, 0.0);
    let chol = Cholesky::new(seed).ok_or_else(|| Error::Singular("seed state is not positive".into()))?;
    let x0 = params_from_t(&chol.l().adjoint());

    let neg_ll = |x: &[f64]| -> (f64, Vec<f64>) {
        let t = t_from_params(x);
        let a = t.adjoint() * t;
        let value = poisson_log_likelihood(&a, &counts.counts, &ops);
        if !value.is_finite() {
            return (f64::INFINITY, vec![0.0; 16]);
        }
        let mut g = Mat4::zeros();
        for (n, m) in counts.counts.iter().zip(&ops) {
            let mu = (a * m).trace().re;
            let w = if *n > 0.0 { n / mu - 1.0 } else { -1.0 };
            g += m * c(w, 0.0);
        }
        // dL/dT_ij = 2 (G T†)_ji split into real and imaginary parts
        let gt = g * t.adjoint();
        let mut grad = Vec::with_capacity(16);
        for i in 0..4 {
            grad.push(-2.0 * gt[(i, i)].re);
        }
        for i in 0..4 {
            for j in i + 1..4 {
                grad.push(-2.0 * gt[(j, i)].re);
                grad.push(2.0 * gt[(j, i)].im);
            }
        }
        (-value, grad)
    };

    let result = bfgs(neg_ll, &x0, 1e-10, MLE_MAX_ITER);
    if !result.converged {
        return Err(Error::NonConvergence {
            what: "maximum-likelihood tomography".into(),
            iterations: result.iterations,
            residual: result.value,
        });
    }
    let t = t_from_params(&result.x);
    let rho = DensityMatrix::from_unnormalized(t.adjoint() * t)?;
    // never return something less likely than the starting point
    if log_likelihood(&rho, counts, settings) < log_likelihood(&start, counts, settings) {
        return Ok(start);
    }
    Ok(rho)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonteCarloOptions {
    pub trials: usize,
    pub seed: u64,
    /// Resample each count as Poisson(n); disable for a degenerate check.
    pub resample: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub median: f64,
}

impl Summary {
    pub fn of(xs: &[f64]) -> Self {
        let (mean, std) = mean_and_std(xs);
        Self { mean, std, median: median(xs) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloMetrics {
    pub fidelity: Vec<f64>,
    pub concurrence: Vec<f64>,
    pub abs_s: Vec<f64>,
    pub failed: usize,
    pub fidelity_summary: Summary,
    pub concurrence_summary: Summary,
    pub abs_s_summary: Summary,
}

/// Per-state metrics: (fidelity to Ψ⁻, concurrence, |S| at canonical angles).
pub fn state_metrics(rho: &DensityMatrix) -> Result<(f64, f64, f64)> {
    Ok((
        fidelity_to_pure(rho, &bell_psi_minus())?,
        concurrence(rho)?,
        s_of_state(rho, &ChshAngles::canonical()).abs(),
    ))
}

pub fn poisson_resample<R: rand::Rng + ?Sized>(counts: &[f64; 16], rng: &mut R) -> [f64; 16] {
    counts.map(|mean| {
        if mean > 0.0 {
            Poisson::new(mean).map(|d| d.sample(rng)).unwrap_or(0.0)
        } else {
            0.0
        }
    })
}

/// Resamples the counts, reconstructs each trial by MLE and collects
/// metrics. Trial k uses random stream (seed, k), so the output does not
/// depend on scheduling. Fails if more than 1% of trials do not converge.
pub fn monte_carlo_metrics(
    counts: &TomoCounts,
    settings: &TomoSettings,
    opts: &MonteCarloOptions,
) -> Result<MonteCarloMetrics> {
    if opts.trials < 100 {
        return Err(Error::param(format!("need at least 100 trials, got {}", opts.trials)));
    }
    let outcomes: Vec<Result<(f64, f64, f64)>> = (0..opts.trials)
        .into_par_iter()
        .map(|k| {
            let sample = if opts.resample {
                let mut rng = stream_rng(opts.seed, k as u64);
                TomoCounts::new(poisson_resample(&counts.counts, &mut rng), counts.flux)?
            } else {
                counts.clone()
            };
            state_metrics(&mle_reconstruct(&sample, settings)?)
        })
        .collect();

    let mut fidelity = Vec::with_capacity(opts.trials);
    let mut conc = Vec::with_capacity(opts.trials);
    let mut abs_s = Vec::with_capacity(opts.trials);
    let mut failed = 0;
    for outcome in outcomes {
        match outcome {
            Ok((f, cc, s)) => {
                fidelity.push(f);
                conc.push(cc);
                abs_s.push(s);
            }
            Err(e) if e.is_numerical() => failed += 1,
            Err(e) => return Err(e),
        }
    }
    if failed * 100 > opts.trials {
        return Err(Error::NonConvergence {
            what: format!("tomography Monte-Carlo ({failed} of {} trials)", opts.trials),
            iterations: opts.trials,
            residual: failed as f64 / opts.trials as f64,
        });
    }
    Ok(MonteCarloMetrics {
        fidelity_summary: Summary::of(&fidelity),
        concurrence_summary: Summary::of(&conc),
        abs_s_summary: Summary::of(&abs_s),
        fidelity,
        concurrence: conc,
        abs_s,
        failed,
    })
}

/// The 16×16 matrix mapping Pauli coefficients to setting probabilities.
pub fn measurement_matrix(settings: &TomoSettings) -> DMatrix<f64> {
    DMatrix::from_iterator(16, 16, settings.measurement.iter().copied())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qstate::basis_state;
    use crate::source::{combined_source_state, SourceParams};
    use rand::Rng;

    #[test]
    fn standard_settings_are_complete() {
        let s = standard_tomo_settings();
        assert!(s.condition_number() < 20.0, "{}", s.condition_number());
        let k = s.index_of("H", "V").unwrap();
        assert_eq!(s.projectors()[k], (Projector1Q::h(), Projector1Q::v()));
        let counts = expected_tomo_counts(&bell_psi_minus().density(), &s, 1000.0);
        assert!((counts.counts()[k] - 500.0).abs() < 1e-10);
    }

    #[test]
    fn linear_inversion_round_trips() {
        let s = standard_tomo_settings();
        let psi = bell_psi_minus().density();
        let back = linear_inversion(&expected_tomo_counts(&psi, &s, 1e4), &s).unwrap();
        assert!((back.matrix() - psi.matrix()).norm() < 1e-10);
        assert!(back.is_unconstrained());
        let mut rng = stream_rng(5, 0);
        for _ in 0..100 {
            let rank = rng.random_range(1..=4);
            let rho = DensityMatrix::random(&mut rng, rank);
            let back = linear_inversion(&expected_tomo_counts(&rho, &s, 3e3), &s).unwrap();
            assert!((back.matrix() - rho.matrix()).norm() < 1e-10);
        }
    }

    #[test]
    fn noisy_linear_inversion_is_often_unphysical() {
        let s = standard_tomo_settings();
        let exact = expected_tomo_counts(&bell_psi_minus().density(), &s, 1e4);
        let negative = (0..1000u64)
            .filter(|&k| {
                let mut rng = stream_rng(8, k);
                let noisy = TomoCounts::new(poisson_resample(exact.counts(), &mut rng), 1e4).unwrap();
                linear_inversion(&noisy, &s).unwrap().min_eigenvalue() < 0.0
            })
            .count();
        assert!(negative > 500, "{negative}");
    }

    #[test]
    fn mle_on_noiseless_counts() {
        let s = standard_tomo_settings();
        let psi = bell_psi_minus();
        let rho = mle_reconstruct(&expected_tomo_counts(&psi.density(), &s, 1e4), &s).unwrap();
        assert!(fidelity_to_pure(&rho, &psi).unwrap() >= 1.0 - 1e-9);

        let mut rng = stream_rng(6, 0);
        for _ in 0..10 {
            let truth = DensityMatrix::random(&mut rng, 4);
            let counts = expected_tomo_counts(&truth, &s, 1e4);
            let mle = mle_reconstruct(&counts, &s).unwrap();
            let lin = linear_inversion(&counts, &s).unwrap();
            assert!(mle.trace_distance(&lin) < 1e-6);
        }
    }

    #[test]
    fn mle_output_is_physical_and_at_least_as_likely() {
        let s = standard_tomo_settings();
        let exact = expected_tomo_counts(&basis_state(1).density(), &s, 200.0);
        for k in 0..20u64 {
            let mut rng = stream_rng(21, k);
            let noisy = TomoCounts::new(poisson_resample(exact.counts(), &mut rng), 200.0).unwrap();
            let rho = mle_reconstruct(&noisy, &s).unwrap();
            assert!(rho.min_eigenvalue() >= -1e-12);
            assert!((rho.matrix().trace().re - 1.0).abs() < 1e-12);
            let lin = linear_inversion(&noisy, &s).unwrap().clipped();
            assert!(log_likelihood(&rho, &noisy, &s) >= log_likelihood(&lin, &noisy, &s) - 1e-9);
        }
    }

    #[test]
    fn degenerate_monte_carlo_is_exact() {
        let s = standard_tomo_settings();
        let counts = expected_tomo_counts(&bell_psi_minus().density(), &s, 1e4);
        let opts = MonteCarloOptions { trials: 100, seed: 1, resample: false };
        let m = monte_carlo_metrics(&counts, &s, &opts).unwrap();
        assert!(m.fidelity.iter().all(|f| (f - 1.0).abs() < 1e-9));
        assert!(monte_carlo_metrics(&counts, &s, &MonteCarloOptions { trials: 10, ..opts }).is_err());
    }

    #[test]
    fn monte_carlo_is_reproducible_and_scales() {
        let s = standard_tomo_settings();
        let params = SourceParams { balance: 1.03, crystal_offset_mm: 1.0, ..Default::default() };
        let truth = combined_source_state(&params).unwrap();
        let counts = expected_tomo_counts(&truth, &s, 1e4);
        let opts = MonteCarloOptions { trials: 100, seed: 3, resample: true };
        let a = monte_carlo_metrics(&counts, &s, &opts).unwrap();
        let b = monte_carlo_metrics(&counts, &s, &opts).unwrap();
        assert_eq!(a, b);
        let big = monte_carlo_metrics(&counts.scaled(100.0), &s, &opts).unwrap();
        let ratio = a.concurrence_summary.std / big.concurrence_summary.std;
        assert!((5.0..20.0).contains(&ratio), "{ratio}");
    }
}
