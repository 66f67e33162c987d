//! Two-qubit polarization states and their figures of merit.
//!
//! The computational basis is ordered (HH, HV, VH, VV) everywhere: index
//! `2·a + b` with `H = 0`, `V = 1` for photon A and photon B.

use std::f64::consts::FRAC_1_SQRT_2;

use nalgebra::Vector4;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{c, hermitian_eigen, Ket2, Ket4, Mat2, Mat4, C64};

pub const BASIS_LABELS: [&str; 4] = ["HH", "HV", "VH", "VV"];

const NORM_TOL: f64 = 1e-12;
const HERMITIAN_TOL: f64 = 1e-12;
const TRACE_TOL: f64 = 1e-12;
const PSD_TOL: f64 = -1e-10;
/// Eigenvalues of ρ below this fraction of the largest are treated as exact
/// zeros when taking matrix square roots; round-off there would otherwise be
/// amplified to ~1e-8 by the square root.
const SQRT_CUTOFF: f64 = 1e-13;

pub fn ket_h() -> Ket2 {
    Ket2::new(c(1.0, 0.0), c(0.0, 0.0))
}

pub fn ket_v() -> Ket2 {
    Ket2::new(c(0.0, 0.0), c(1.0, 0.0))
}

/// Linear polarization at angle `alpha` from horizontal: cos α |H⟩ + sin α |V⟩.
pub fn ket_linear(alpha: f64) -> Ket2 {
    Ket2::new(c(alpha.cos(), 0.0), c(alpha.sin(), 0.0))
}

/// Right-circular polarization (|H⟩ + i|V⟩)/√2.
pub fn ket_right() -> Ket2 {
    Ket2::new(c(FRAC_1_SQRT_2, 0.0), c(0.0, FRAC_1_SQRT_2))
}

pub fn kron2(a: &Ket2, b: &Ket2) -> Ket4 {
    Ket4::new(a[0] * b[0], a[0] * b[1], a[1] * b[0], a[1] * b[1])
}

pub fn kron_mat(a: &Mat2, b: &Mat2) -> Mat4 {
    Mat4::from_fn(|r, col| a[(r / 2, col / 2)] * b[(r % 2, col % 2)])
}

/// σy ⊗ σy, used for the spin flip in the concurrence.
fn sigma_yy() -> Mat4 {
    let mut m = Mat4::zeros();
    m[(0, 3)] = c(-1.0, 0.0);
    m[(1, 2)] = c(1.0, 0.0);
    m[(2, 1)] = c(1.0, 0.0);
    m[(3, 0)] = c(-1.0, 0.0);
    m
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PureState {
    amps: Ket4,
}

impl PureState {
    /// Amplitudes in (HH, HV, VH, VV) order; the norm must already be 1.
    pub fn new(amps: Ket4) -> Result<Self> {
        let norm2 = amps.norm_squared();
        if (norm2 - 1.0).abs() > NORM_TOL {
            return Err(Error::state(format!(
                "pure state has squared norm {norm2}, expected 1"
            )));
        }
        Ok(Self { amps })
    }

    pub fn normalized(amps: Ket4) -> Result<Self> {
        let norm = amps.norm();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::state("cannot normalize a zero or non-finite vector"));
        }
        Ok(Self { amps: amps / c(norm, 0.0) })
    }

    pub fn product(a: &Ket2, b: &Ket2) -> Result<Self> {
        Self::normalized(kron2(a, b))
    }

    pub fn amplitudes(&self) -> &Ket4 {
        &self.amps
    }

    pub fn density(&self) -> DensityMatrix {
        DensityMatrix {
            m: self.amps * self.amps.adjoint(),
            unconstrained: false,
        }
    }

    /// Haar-random pure state.
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        loop {
            let v = Ket4::from_fn(|_, _| {
                c(rng.sample(StandardNormal), rng.sample(StandardNormal))
            });
            if let Ok(s) = Self::normalized(v) {
                return s;
            }
        }
    }
}

/// |Ψ⁻⟩ = (|HV⟩ − |VH⟩)/√2.
pub fn bell_psi_minus() -> PureState {
    PureState {
        amps: Ket4::new(
            c(0.0, 0.0),
            c(FRAC_1_SQRT_2, 0.0),
            c(-FRAC_1_SQRT_2, 0.0),
            c(0.0, 0.0),
        ),
    }
}

/// Basis product state, e.g. `basis_state(1)` is |HV⟩.
pub fn basis_state(index: usize) -> PureState {
    let mut amps = Ket4::zeros();
    amps[index] = c(1.0, 0.0);
    PureState { amps }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    m: Mat4,
    unconstrained: bool,
}

fn check_hermitian(m: &Mat4) -> Result<()> {
    let dev = (m - m.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max);
    if dev > HERMITIAN_TOL {
        return Err(Error::state(format!(
            "matrix is not Hermitian (max deviation {dev:.3e})"
        )));
    }
    Ok(())
}

fn check_trace(m: &Mat4) -> Result<()> {
    let tr = m.trace();
    if (tr.re - 1.0).abs() > TRACE_TOL || tr.im.abs() > TRACE_TOL {
        return Err(Error::state(format!("trace is {tr}, expected 1")));
    }
    Ok(())
}

impl DensityMatrix {
    /// A physical state: Hermitian, unit trace and positive semidefinite.
    pub fn new(m: Mat4) -> Result<Self> {
        check_hermitian(&m)?;
        check_trace(&m)?;
        let min = hermitian_eigen(&m).0[0];
        if min < PSD_TOL {
            return Err(Error::state(format!(
                "matrix has negative eigenvalue {min:.3e}"
            )));
        }
        Ok(Self { m, unconstrained: false })
    }

    /// A Hermitian unit-trace matrix that may have negative eigenvalues, as
    /// produced by linear-inversion tomography. Always carries the
    /// unconstrained flag.
    pub fn unconstrained(m: Mat4) -> Result<Self> {
        check_hermitian(&m)?;
        check_trace(&m)?;
        Ok(Self { m, unconstrained: true })
    }

    /// Symmetrize and divide by the trace, then validate as physical.
    pub fn from_unnormalized(m: Mat4) -> Result<Self> {
        let h = (m + m.adjoint()).scale(0.5);
        let tr = h.trace().re;
        if !(tr > 0.0) {
            return Err(Error::state("matrix has non-positive trace"));
        }
        Self::new(h.unscale(tr))
    }

    pub fn maximally_mixed() -> Self {
        Self {
            m: Mat4::identity().scale(0.25),
            unconstrained: false,
        }
    }

    /// Convex combination; weights must be non-negative and sum to 1.
    pub fn mixture(parts: &[(f64, &DensityMatrix)]) -> Result<Self> {
        let total: f64 = parts.iter().map(|(w, _)| w).sum();
        if parts.iter().any(|(w, _)| *w < 0.0) || (total - 1.0).abs() > 1e-12 {
            return Err(Error::param("mixture weights must be non-negative and sum to 1"));
        }
        let m = parts
            .iter()
            .fold(Mat4::zeros(), |acc, (w, rho)| acc + rho.m.scale(*w));
        Self::new(m)
    }

    /// Ginibre-random mixed state of the given rank (1..=4).
    pub fn random<R: Rng + ?Sized>(rng: &mut R, rank: usize) -> Self {
        let rank = rank.clamp(1, 4);
        let g = nalgebra::DMatrix::<C64>::from_fn(4, rank, |_, _| {
            c(rng.sample(StandardNormal), rng.sample(StandardNormal))
        });
        let prod = &g * g.adjoint();
        let m = Mat4::from_fn(|r, col| prod[(r, col)]);
        Self::from_unnormalized(m).expect("Ginibre matrix is positive definite")
    }

    pub fn matrix(&self) -> &Mat4 {
        &self.m
    }

    pub fn is_unconstrained(&self) -> bool {
        self.unconstrained
    }

    pub fn entry(&self, row: usize, col: usize) -> C64 {
        self.m[(row, col)]
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Vector4<f64> {
        hermitian_eigen(&self.m).0
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues()[0]
    }

    pub fn purity(&self) -> f64 {
        (self.m * self.m).trace().re
    }

    pub fn trace_distance(&self, other: &DensityMatrix) -> f64 {
        let d = self.m - other.m;
        0.5 * hermitian_eigen(&d).0.iter().map(|v| v.abs()).sum::<f64>()
    }

    /// Nearest physical state obtained by clipping negative eigenvalues and
    /// renormalizing.
    pub fn clipped(&self) -> DensityMatrix {
        let (vals, vecs) = hermitian_eigen(&self.m);
        let d = Mat4::from_diagonal(&vals.map(|v| c(v.max(0.0), 0.0)));
        DensityMatrix::from_unnormalized(vecs * d * vecs.adjoint())
            .unwrap_or_else(|_| DensityMatrix::maximally_mixed())
    }

    fn check_physical(&self, tol: f64) -> Result<()> {
        let min = self.min_eigenvalue();
        if min < tol {
            return Err(Error::state(format!(
                "state has negative eigenvalue {min:.3e}"
            )));
        }
        Ok(())
    }
}

/// Square root of a PSD matrix with near-zero eigenvalues snapped to zero.
fn sqrt_snapped(m: &Mat4) -> Mat4 {
    let (vals, vecs) = hermitian_eigen(m);
    let cutoff = SQRT_CUTOFF * vals[3].abs().max(f64::MIN_POSITIVE);
    let d = Mat4::from_diagonal(&vals.map(|v| {
        if v > cutoff {
            c(v.sqrt(), 0.0)
        } else {
            c(0.0, 0.0)
        }
    }));
    vecs * d * vecs.adjoint()
}

/// ⟨ψ|ρ|ψ⟩. Not clipped: unconstrained matrices may exceed 1.
pub fn fidelity_to_pure(rho: &DensityMatrix, psi: &PureState) -> Result<f64> {
    let tr = rho.m.trace();
    if (tr.re - 1.0).abs() > 1e-10 || tr.im.abs() > 1e-10 {
        return Err(Error::state(format!("trace is {tr}, expected 1")));
    }
    let v = psi.amps.adjoint() * rho.m * psi.amps;
    Ok(v[(0, 0)].re)
}

/// Squared Uhlmann fidelity (Tr √(√ρ σ √ρ))².
pub fn uhlmann_fidelity(rho: &DensityMatrix, sigma: &DensityMatrix) -> Result<f64> {
    rho.check_physical(-1e-8)?;
    sigma.check_physical(-1e-8)?;
    let s = sqrt_snapped(&rho.m);
    let inner = s * sigma.m * s;
    let (vals, _) = hermitian_eigen(&inner);
    let cutoff = SQRT_CUTOFF * vals[3].abs().max(f64::MIN_POSITIVE);
    let root_sum: f64 = vals.iter().filter(|&&v| v > cutoff).map(|v| v.sqrt()).sum();
    let f = root_sum * root_sum;
    Ok(if f > 1.0 && f < 1.0 + 1e-9 { 1.0 } else { f })
}

/// Wootters concurrence max(0, λ₁ − λ₂ − λ₃ − λ₄).
///
/// The λᵢ are computed as singular values of √ρ (σy⊗σy) √ρ*, whose squares
/// are the eigenvalues of ρ(σy⊗σy)ρ*(σy⊗σy). Unconstrained matrices have
/// their negative eigenvalues clipped first.
pub fn concurrence(rho: &DensityMatrix) -> Result<f64> {
    let base = if rho.unconstrained { rho.clipped() } else { rho.clone() };
    base.check_physical(-1e-8)?;
    let s = sqrt_snapped(&base.m);
    let a = s * sigma_yy() * s.conjugate();
    let mut sv: Vec<f64> = a.singular_values().iter().copied().collect();
    sv.sort_by(|x, y| y.total_cmp(x));
    Ok((sv[0] - sv[1] - sv[2] - sv[3]).max(0.0))
}

/// Tr(ρ · (ma ⊗ mb)), clipped to [0, 1] only within 1e-12 of the ends.
pub fn born_probability(rho: &DensityMatrix, ma: &Projector1Q, mb: &Projector1Q) -> f64 {
    let p = (rho.m * kron_mat(&ma.m, &mb.m)).trace().re;
    if (-1e-12..0.0).contains(&p) {
        0.0
    } else if p > 1.0 && p <= 1.0 + 1e-12 {
        1.0
    } else {
        p
    }
}

/// Rank-1 single-photon projector |m⟩⟨m|.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projector1Q {
    m: Mat2,
}

impl Projector1Q {
    pub fn new(m: Mat2) -> Result<Self> {
        let herm = (m - m.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max);
        let idem = (m * m - m).iter().map(|z| z.norm()).fold(0.0, f64::max);
        let tr = m.trace();
        if herm > 1e-10 || idem > 1e-10 || (tr.re - 1.0).abs() > 1e-10 {
            return Err(Error::state(
                "projector must be Hermitian, idempotent and rank 1",
            ));
        }
        Ok(Self { m })
    }

    pub fn from_ket(ket: &Ket2) -> Result<Self> {
        let norm = ket.norm();
        if !(norm > 0.0) {
            return Err(Error::state("zero vector has no projector"));
        }
        let k = ket / c(norm, 0.0);
        Ok(Self { m: k * k.adjoint() })
    }

    /// |R(α)⟩⟨R(α)| for linear polarization at angle `alpha`.
    pub fn linear(alpha: f64) -> Self {
        let k = ket_linear(alpha);
        Self { m: k * k.adjoint() }
    }

    pub fn h() -> Self {
        Self::linear(0.0)
    }

    pub fn v() -> Self {
        Self::linear(std::f64::consts::FRAC_PI_2)
    }

    pub fn d() -> Self {
        Self::linear(std::f64::consts::FRAC_PI_4)
    }

    pub fn r() -> Self {
        let k = ket_right();
        Self { m: k * k.adjoint() }
    }

    pub fn matrix(&self) -> &Mat2 {
        &self.m
    }

    /// ⟨k|M|k⟩ for a normalized ket.
    pub fn overlap(&self, ket: &Ket2) -> f64 {
        (ket.adjoint() * self.m * ket)[(0, 0)].re
    }

    /// Stokes-like Bloch vector (S₁, S₂, S₃) of the projected state.
    pub fn bloch(&self) -> [f64; 3] {
        let m = &self.m;
        [
            m[(0, 0)].re - m[(1, 1)].re,
            2.0 * m[(1, 0)].re,
            2.0 * m[(1, 0)].im,
        ]
    }

    pub fn distance(&self, other: &Projector1Q) -> f64 {
        // trace distance between two pure states
        let f = (self.m * other.m).trace().re.clamp(0.0, 1.0);
        (1.0 - f).sqrt()
    }
}

#[derive(Serialize, Deserialize)]
struct DensityMatrixJson {
    basis: Vec<String>,
    /// Row-major entries as [re, im] pairs.
    entries: Vec<Vec<[f64; 2]>>,
    #[serde(default)]
    unconstrained: bool,
}

impl DensityMatrix {
    pub fn to_json_value(&self) -> serde_json::Value {
        let doc = DensityMatrixJson {
            basis: BASIS_LABELS.iter().map(|s| s.to_string()).collect(),
            entries: (0..4)
                .map(|r| (0..4).map(|col| [self.m[(r, col)].re, self.m[(r, col)].im]).collect())
                .collect(),
            unconstrained: self.unconstrained,
        };
        serde_json::to_value(doc).expect("density matrix serializes")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_json_value()).expect("density matrix serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: DensityMatrixJson = serde_json::from_str(text)?;
        if doc.basis != BASIS_LABELS {
            return Err(Error::input(format!(
                "basis must be {BASIS_LABELS:?}, found {:?}",
                doc.basis
            )));
        }
        if doc.entries.len() != 4 || doc.entries.iter().any(|r| r.len() != 4) {
            return Err(Error::input("density matrix must be 4x4"));
        }
        let m = Mat4::from_fn(|r, col| {
            let [re, im] = doc.entries[r][col];
            c(re, im)
        });
        if doc.unconstrained {
            Self::unconstrained(m)
        } else {
            Self::new(m)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn rng() -> rand_chacha::ChaCha8Rng {
        rand_chacha::ChaCha8Rng::seed_from_u64(11)
    }

    #[test]
    fn psi_minus_amplitudes() {
        let psi = bell_psi_minus();
        let a = psi.amplitudes();
        assert!((a[1].re - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        assert!((a[2].re + std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        assert_eq!(a[0], c(0.0, 0.0));
        assert_eq!(a[3], c(0.0, 0.0));
    }

    #[test]
    fn pure_state_rejects_bad_norm() {
        assert!(PureState::new(Ket4::from_element(c(1.0, 0.0))).is_err());
    }

    #[test]
    fn fidelity_examples() {
        let psi = bell_psi_minus();
        let rho = psi.density();
        assert!((fidelity_to_pure(&rho, &psi).unwrap() - 1.0).abs() < 1e-15);
        let hv = basis_state(1).density();
        assert!((fidelity_to_pure(&hv, &psi).unwrap() - 0.5).abs() < 1e-15);
        let mixed = DensityMatrix::maximally_mixed();
        assert!((fidelity_to_pure(&mixed, &psi).unwrap() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn uhlmann_examples() {
        let psi = bell_psi_minus().density();
        assert!((uhlmann_fidelity(&psi, &psi).unwrap() - 1.0).abs() < 1e-12);
        let hv = basis_state(1).density();
        let vh = basis_state(2).density();
        assert!(uhlmann_fidelity(&hv, &vh).unwrap().abs() < 1e-12);
        let mixed = DensityMatrix::maximally_mixed();
        assert!((uhlmann_fidelity(&psi, &mixed).unwrap() - 0.25).abs() < 1e-12);
        assert!((uhlmann_fidelity(&mixed, &psi).unwrap() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn uhlmann_reduces_to_pure_fidelity() {
        let mut r = rng();
        for _ in 0..20 {
            let psi = PureState::random(&mut r);
            let sigma = DensityMatrix::random(&mut r, 4);
            let a = uhlmann_fidelity(&psi.density(), &sigma).unwrap();
            let b = fidelity_to_pure(&sigma, &psi).unwrap();
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn concurrence_examples() {
        assert!((concurrence(&bell_psi_minus().density()).unwrap() - 1.0).abs() < 1e-12);
        assert!(concurrence(&DensityMatrix::maximally_mixed()).unwrap().abs() < 1e-12);
        assert!(concurrence(&basis_state(1).density()).unwrap().abs() < 1e-9);
    }

    #[test]
    fn born_examples() {
        let psi = bell_psi_minus().density();
        let h = Projector1Q::h();
        let v = Projector1Q::v();
        assert!((born_probability(&psi, &h, &v) - 0.5).abs() < 1e-15);
        assert_eq!(born_probability(&psi, &h, &h), 0.0);
        let p = born_probability(
            &psi,
            &Projector1Q::linear(PI / 8.0),
            &Projector1Q::linear(3.0 * PI / 8.0),
        );
        assert!((p - 0.25).abs() < 1e-15);
    }

    #[test]
    fn born_sums_to_one_over_orthogonal_settings() {
        let mut r = rng();
        for _ in 0..50 {
            let rank = 1 + r.random_range(0..4);
            let rho = DensityMatrix::random(&mut r, rank);
            let a: f64 = r.random_range(0.0..PI);
            let b: f64 = r.random_range(0.0..PI);
            let total: f64 = [a, a + FRAC_PI_2]
                .iter()
                .flat_map(|&x| [b, b + FRAC_PI_2].map(move |y| (x, y)))
                .map(|(x, y)| {
                    born_probability(&rho, &Projector1Q::linear(x), &Projector1Q::linear(y))
                })
                .sum();
            assert!((total - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn projector_constructors_are_valid() {
        for p in [Projector1Q::h(), Projector1Q::v(), Projector1Q::d(), Projector1Q::r()] {
            assert!(Projector1Q::new(*p.matrix()).is_ok());
        }
        let bad = Mat2::identity();
        assert!(Projector1Q::new(bad).is_err());
        assert!((Projector1Q::r().bloch()[2] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn density_validation() {
        let mut m = *DensityMatrix::maximally_mixed().matrix();
        m[(0, 1)] = c(0.1, 0.0);
        assert!(DensityMatrix::new(m).is_err(), "non-Hermitian accepted");
        let neg = Mat4::from_diagonal(&Vector4::new(c(0.6, 0.0), c(0.6, 0.0), c(-0.1, 0.0), c(-0.1, 0.0)));
        assert!(DensityMatrix::new(neg).is_err());
        let lin = DensityMatrix::unconstrained(neg).unwrap();
        assert!(lin.is_unconstrained());
        assert!(lin.clipped().min_eigenvalue() >= 0.0);
    }

    #[test]
    fn json_round_trip_and_rejection() {
        let mut r = rng();
        let rho = DensityMatrix::random(&mut r, 3);
        let back = DensityMatrix::from_json(&rho.to_json()).unwrap();
        assert_eq!(back, rho);

        let mut v = rho.to_json_value();
        v["entries"][0][1][0] = serde_json::json!(0.9);
        assert!(DensityMatrix::from_json(&v.to_string()).is_err());
    }

    #[test]
    fn tsirelson_related_product_state_s() {
        // sanity link to the CHSH module's closed form: product state correlator
        let hv = basis_state(1).density();
        let e = |a: f64, b: f64| {
            let p = |x: f64, y: f64| {
                born_probability(&hv, &Projector1Q::linear(x), &Projector1Q::linear(y))
            };
            p(a, b) - p(a, b + FRAC_PI_2) - p(a + FRAC_PI_2, b) + p(a + FRAC_PI_2, b + FRAC_PI_2)
        };
        let (a, b) = (0.3_f64, 1.1_f64);
        assert!((e(a, b) + (2.0 * a).cos() * (2.0 * b).cos()).abs() < 1e-12);
    }
}
