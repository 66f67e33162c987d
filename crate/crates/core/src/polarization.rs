//! Jones-calculus model of the polarization analyzers.
//!
//! Each photon passes a quarter-wave plate, then a half-wave plate, then a
//! polarizer fixed at H. Plates are retarders with a measured retardance and
//! a zero-point offset between the mount's marked zero and the fast axis.
//!
//! Stokes convention: S₁ = |Eₓ|² − |E_y|², S₂ = 2 Re(Eₓ* E_y),
//! S₃ = 2 Im(Eₓ* E_y), so right-circular (|H⟩ + i|V⟩)/√2 has S₃ = +1.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use crate::error::{Error, Result};
use crate::numerics::{c, levenberg_marquardt, nelder_mead, wrap, Ket2, Mat2};
use crate::qstate::{ket_h, ket_linear, Projector1Q};

/// Retarder with fast axis at `theta` and retardance `delta`:
/// R(θ)·diag(1, e^{iδ})·R(−θ).
pub fn retarder_jones(theta: f64, delta: f64) -> Mat2 {
    let (s, co) = theta.sin_cos();
    let rot = Mat2::new(c(co, 0.0), c(-s, 0.0), c(s, 0.0), c(co, 0.0));
    let phase = c(0.0, delta).exp();
    let d = Mat2::new(c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), phase);
    rot * d * rot.transpose()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlateCalibration {
    /// Retardance δ in radians, in (0, 2π).
    pub retardance: f64,
    /// Angle of the fast axis relative to the mount's zero, radians.
    pub zero_point: f64,
    pub retardance_uncertainty: f64,
    pub zero_point_uncertainty: f64,
}

impl PlateCalibration {
    pub fn new(
        retardance: f64,
        zero_point: f64,
        retardance_uncertainty: f64,
        zero_point_uncertainty: f64,
    ) -> Result<Self> {
        if !(retardance > 0.0 && retardance < TAU) {
            return Err(Error::param(format!(
                "retardance {retardance} rad outside (0, 2π)"
            )));
        }
        if !(retardance_uncertainty >= 0.0 && zero_point_uncertainty >= 0.0) {
            return Err(Error::param("calibration uncertainties must be non-negative"));
        }
        if !zero_point.is_finite() {
            return Err(Error::param("zero point must be finite"));
        }
        Ok(Self {
            retardance,
            zero_point,
            retardance_uncertainty,
            zero_point_uncertainty,
        })
    }

    pub fn ideal_hwp() -> Self {
        Self {
            retardance: PI,
            zero_point: 0.0,
            retardance_uncertainty: 0.0,
            zero_point_uncertainty: 0.0,
        }
    }

    pub fn ideal_qwp() -> Self {
        Self {
            retardance: FRAC_PI_2,
            ..Self::ideal_hwp()
        }
    }

    /// Jones matrix with the mount rotated to `mount_angle`.
    pub fn jones(&self, mount_angle: f64) -> Mat2 {
        retarder_jones(mount_angle - self.zero_point, self.retardance)
    }

    fn is_exactly(&self, retardance: f64) -> bool {
        (self.retardance - retardance).abs() < 1e-15
    }
}

/// Calibrations for the two plates in front of one polarizer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArmCalibration {
    pub hwp: PlateCalibration,
    pub qwp: PlateCalibration,
}

impl ArmCalibration {
    pub fn ideal() -> Self {
        Self {
            hwp: PlateCalibration::ideal_hwp(),
            qwp: PlateCalibration::ideal_qwp(),
        }
    }

    pub fn is_ideal(&self) -> bool {
        self.hwp.is_exactly(PI) && self.qwp.is_exactly(FRAC_PI_2)
    }
}

/// Wave-plate characterization of the source's analyzers (mode A is the
/// signal arm, mode B the idler arm).
pub fn measured_calibration() -> (ArmCalibration, ArmCalibration) {
    let deg = |d: f64| d.to_radians();
    let signal = ArmCalibration {
        hwp: PlateCalibration {
            retardance: 1.0122 * PI,
            zero_point: deg(35.924),
            retardance_uncertainty: 0.0035 * PI,
            zero_point_uncertainty: deg(0.0057),
        },
        qwp: PlateCalibration {
            retardance: 1.0427 * FRAC_PI_2,
            zero_point: deg(34.492),
            retardance_uncertainty: 0.0005 * FRAC_PI_2,
            zero_point_uncertainty: deg(0.0138),
        },
    };
    let idler = ArmCalibration {
        hwp: PlateCalibration {
            retardance: 1.0075 * PI,
            zero_point: deg(26.012),
            retardance_uncertainty: 0.0030 * PI,
            zero_point_uncertainty: deg(0.0086),
        },
        qwp: PlateCalibration {
            retardance: 0.99155 * FRAC_PI_2,
            zero_point: deg(109.893),
            retardance_uncertainty: 0.0005 * FRAC_PI_2,
            zero_point_uncertainty: deg(0.0103),
        },
    };
    (signal, idler)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlateSetting {
    /// Mount angle of the half-wave plate, radians in [0, 2π).
    pub hwp_angle: f64,
    /// Mount angle of the quarter-wave plate, radians in [0, 2π).
    pub qwp_angle: f64,
    pub hwp_cal: PlateCalibration,
    pub qwp_cal: PlateCalibration,
}

impl PlateSetting {
    pub fn new(hwp_angle: f64, qwp_angle: f64, arm: &ArmCalibration) -> Self {
        Self {
            hwp_angle: wrap(hwp_angle, TAU),
            qwp_angle: wrap(qwp_angle, TAU),
            hwp_cal: arm.hwp,
            qwp_cal: arm.qwp,
        }
    }

    pub fn arm(&self) -> ArmCalibration {
        ArmCalibration {
            hwp: self.hwp_cal,
            qwp: self.qwp_cal,
        }
    }

    /// Same mount angles with the plates swapped for `arm`.
    pub fn with_plates(&self, arm: &ArmCalibration) -> Self {
        Self::new(self.hwp_angle, self.qwp_angle, arm)
    }

    /// Mount angles shifted by the given errors (radians).
    pub fn perturbed(&self, hwp_error: f64, qwp_error: f64) -> Self {
        Self {
            hwp_angle: wrap(self.hwp_angle + hwp_error, TAU),
            qwp_angle: wrap(self.qwp_angle + qwp_error, TAU),
            ..*self
        }
    }

    /// The polarization state transmitted with unit probability.
    pub fn transmitted_ket(&self) -> Ket2 {
        let wq = self.qwp_cal.jones(self.qwp_angle);
        let wh = self.hwp_cal.jones(self.hwp_angle);
        wq.adjoint() * (wh.adjoint() * ket_h())
    }
}

/// Projector onto the polarization passed by QWP → HWP → H-polarizer.
pub fn projector_from_plates(s: &PlateSetting) -> Projector1Q {
    Projector1Q::from_ket(&s.transmitted_ket()).expect("unitary maps H to a unit vector")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlateSolution {
    pub setting: PlateSetting,
    /// ⟨target|M|target⟩ for the projector M realized by `setting`.
    pub overlap: f64,
}

impl PlateSolution {
    pub fn residual(&self) -> f64 {
        1.0 - self.overlap
    }
}

const MIN_OVERLAP: f64 = 0.99;

/// Plate angles projecting onto linear polarization at `alpha`.
///
/// Closed form for ideal plates (QWP along α, HWP at α/2, both shifted by
/// their zero points); otherwise a bounded two-dimensional search started
/// from that guess.
pub fn plates_for_linear_projection(alpha: f64, arm: &ArmCalibration) -> Result<PlateSolution> {
    let target = ket_linear(alpha);
    if arm.is_ideal() {
        let setting = PlateSetting::new(
            alpha / 2.0 + arm.hwp.zero_point,
            alpha + arm.qwp.zero_point,
            arm,
        );
        let overlap = projector_from_plates(&setting).overlap(&target);
        return Ok(PlateSolution { setting, overlap });
    }
    let mut guesses = vec![(alpha / 2.0 + arm.hwp.zero_point, alpha + arm.qwp.zero_point)];
    guesses.extend(start_grid(arm));
    solve_plates(&target, arm, &guesses)
}

fn start_grid(arm: &ArmCalibration) -> Vec<(f64, f64)> {
    let mut guesses = Vec::with_capacity(16);
    for i in 0..4 {
        for j in 0..4 {
            guesses.push((
                arm.hwp.zero_point + i as f64 * PI / 8.0,
                arm.qwp.zero_point + j as f64 * PI / 4.0,
            ));
        }
    }
    guesses
}

/// Plate angles projecting onto an arbitrary polarization state.
pub fn plates_for_state(target: &Ket2, arm: &ArmCalibration) -> Result<PlateSolution> {
    let target = target / c(target.norm(), 0.0);
    solve_plates(&target, arm, &start_grid(arm))
}

fn solve_plates(target: &Ket2, arm: &ArmCalibration, guesses: &[(f64, f64)]) -> Result<PlateSolution> {
    let loss = |x: &[f64]| {
        let s = PlateSetting::new(x[0], x[1], arm);
        1.0 - projector_from_plates(&s).overlap(target)
    };
    let mut best: Option<(Vec<f64>, f64)> = None;
    for &(h, q) in guesses {
        let m = nelder_mead(loss, &[h, q], 0.05, 1e-13, 4000);
        // restart once from the optimum to escape a collapsed simplex
        let m = nelder_mead(loss, &m.x, 1e-3, 1e-14, 4000);
        if best.as_ref().is_none_or(|(_, v)| m.value < *v) {
            best = Some((m.x, m.value));
        }
        if best.as_ref().is_some_and(|(_, v)| *v < 1e-14) {
            break;
        }
    }
    let (x, _) = best.ok_or_else(|| Error::param("no starting guesses"))?;
    let setting = PlateSetting::new(x[0], x[1], arm);
    let overlap = projector_from_plates(&setting).overlap(target);
    if overlap < MIN_OVERLAP {
        return Err(Error::NonConvergence {
            what: "plate angle search".into(),
            iterations: 0,
            residual: 1.0 - overlap,
        });
    }
    Ok(PlateSolution { setting, overlap })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StokesSample {
    /// Mount angle of the plate, radians.
    pub plate_angle: f64,
    /// (S₀, S₁, S₂, S₃) normalized to S₀ = 1.
    pub stokes: [f64; 4],
}

impl StokesSample {
    pub fn new(plate_angle: f64, stokes: [f64; 4]) -> Result<Self> {
        let s0 = stokes[0];
        if !(s0 > 0.0) {
            return Err(Error::input("S0 must be positive"));
        }
        let n = stokes.map(|v| v / s0);
        let pol2 = n[1] * n[1] + n[2] * n[2] + n[3] * n[3];
        if pol2 > 1.0 + 1e-6 {
            // noisy polarimeter data may overshoot slightly; only gross violations are rejected
            if pol2 > 1.5 {
                return Err(Error::input(format!(
                    "degree of polarization {:.3} exceeds 1",
                    pol2.sqrt()
                )));
            }
        }
        Ok(Self { plate_angle, stokes: n })
    }
}

/// Normalized Stokes vector of a Jones vector.
pub fn stokes_of(e: &Ket2) -> [f64; 4] {
    let s0 = e.norm_squared();
    let cross = e[0].conj() * e[1];
    [
        1.0,
        (e[0].norm_sqr() - e[1].norm_sqr()) / s0,
        2.0 * cross.re / s0,
        2.0 * cross.im / s0,
    ]
}

/// Output Stokes vectors of `input` after the plate at each mount angle.
pub fn stokes_curve(cal: &PlateCalibration, input: &Ket2, angles: &[f64]) -> Vec<StokesSample> {
    angles
        .iter()
        .map(|&theta| StokesSample {
            plate_angle: theta,
            stokes: stokes_of(&(cal.jones(theta) * input)),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WaveplateFit {
    pub calibration: PlateCalibration,
    /// Sum of squared Stokes residuals.
    pub residual: f64,
    pub iterations: usize,
}

/// Least-squares fit of (δ, θ₀) to measured Stokes curves.
///
/// The Stokes data are invariant under (θ₀, δ) → (θ₀ + π/2, 2π − δ); the
/// branch with δ closest to `nominal_retardance` is returned, ties broken by
/// θ₀ ∈ [0, π/2). θ₀ is reported in [0, π).
pub fn fit_waveplate(
    samples: &[StokesSample],
    input: &Ket2,
    nominal_retardance: f64,
) -> Result<WaveplateFit> {
    if samples.len() < 8 {
        return Err(Error::input(format!(
            "wave-plate fit needs at least 8 samples, got {}",
            samples.len()
        )));
    }
    let lo = samples.iter().map(|s| s.plate_angle).fold(f64::INFINITY, f64::min);
    let hi = samples.iter().map(|s| s.plate_angle).fold(f64::NEG_INFINITY, f64::max);
    if hi - lo < 1e-12 {
        return Err(Error::input("all Stokes samples share one plate angle"));
    }
    if hi - lo < FRAC_PI_2 - 1e-9 {
        return Err(Error::input(format!(
            "samples span {:.1} deg of rotation, at least 90 deg required",
            (hi - lo).to_degrees()
        )));
    }

    let residuals = |p: &[f64]| -> Vec<f64> {
        samples
            .iter()
            .flat_map(|s| {
                let out = retarder_jones(s.plate_angle - p[1], p[0]) * input;
                let m = stokes_of(&out);
                [m[1] - s.stokes[1], m[2] - s.stokes[2], m[3] - s.stokes[3]]
            })
            .collect()
    };

    // score a coarse (δ, θ₀) grid, then refine the most promising starts
    let cost = |p: &[f64]| residuals(p).iter().map(|r| r * r).sum::<f64>();
    let mut starts: Vec<(f64, [f64; 2])> = [0.5 * PI, PI, 1.5 * PI]
        .iter()
        .flat_map(|&d0| (0..8).map(move |k| [d0, k as f64 * PI / 8.0]))
        .map(|p| (cost(&p), p))
        .collect();
    starts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut best: Option<crate::numerics::LeastSquares> = None;
    for (_, p0) in starts.iter().take(4) {
        let fit = levenberg_marquardt(residuals, p0, 200);
        if best.as_ref().is_none_or(|b| fit.cost < b.cost) {
            best = Some(fit);
        }
    }
    let fit = best.expect("at least one start");
    let total_ss: f64 = samples.iter().map(|s| s.stokes[1..].iter().map(|v| v * v).sum::<f64>()).sum();
    if !fit.converged && fit.cost > 1e-6 * total_ss.max(1.0) {
        return Err(Error::NonConvergence {
            what: "wave-plate fit".into(),
            iterations: fit.iterations,
            residual: fit.cost,
        });
    }
    let cov = fit
        .covariance()
        .ok_or_else(|| Error::Singular("wave-plate fit covariance".into()))?;

    let delta = wrap(fit.params[0], TAU);
    let theta = wrap(fit.params[1], PI);
    let alt_delta = wrap(TAU - delta, TAU);
    let alt_theta = wrap(theta + FRAC_PI_2, PI);
    let dist = |d: f64| (d - nominal_retardance).abs();
    let use_alt = if (dist(delta) - dist(alt_delta)).abs() > 1e-6 {
        dist(alt_delta) < dist(delta)
    } else {
        theta >= FRAC_PI_2
    };
    let (delta, theta) = if use_alt { (alt_delta, alt_theta) } else { (delta, theta) };
    if !(delta > 0.0 && delta < TAU) {
        return Err(Error::NonConvergence {
            what: "wave-plate fit (retardance at 0 or 2π)".into(),
            iterations: fit.iterations,
            residual: fit.cost,
        });
    }

    Ok(WaveplateFit {
        calibration: PlateCalibration {
            retardance: delta,
            zero_point: theta,
            retardance_uncertainty: cov[(0, 0)].max(0.0).sqrt(),
            zero_point_uncertainty: cov[(1, 1)].max(0.0).sqrt(),
        },
        residual: fit.cost,
        iterations: fit.iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qstate::{ket_right, ket_v};
    use std::f64::consts::FRAC_PI_4;

    fn unitary_err(u: &Mat2) -> f64 {
        (u.adjoint() * u - Mat2::identity()).norm()
    }

    #[test]
    fn retarder_examples() {
        let u = retarder_jones(0.0, PI);
        assert!((u - Mat2::new(c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(-1.0, 0.0))).norm() < 1e-15);

        let out = retarder_jones(FRAC_PI_4, PI) * ket_h();
        assert!((out[1].norm() - 1.0).abs() < 1e-12 && out[0].norm() < 1e-12);

        let circ = stokes_of(&(retarder_jones(FRAC_PI_4, FRAC_PI_2) * ket_h()));
        assert!((circ[3].abs() - 1.0).abs() < 1e-12);
        assert!((circ[3] + 1.0).abs() < 1e-12, "handedness convention");
    }

    #[test]
    fn retarder_is_unitary_on_grid() {
        for i in 0..40 {
            for j in 0..40 {
                let u = retarder_jones(i as f64 * 0.17 - 3.0, j as f64 * 0.16);
                assert!(unitary_err(&u) < 1e-12);
            }
        }
    }

    #[test]
    fn projector_from_ideal_plates() {
        let arm = ArmCalibration::ideal();
        let p = projector_from_plates(&PlateSetting::new(0.0, 0.0, &arm));
        assert!((p.matrix() - Projector1Q::h().matrix()).norm() < 1e-14);

        let p = projector_from_plates(&PlateSetting::new(PI / 8.0, FRAC_PI_4, &arm));
        assert!((p.matrix() - Projector1Q::d().matrix()).norm() < 1e-14);
    }

    #[test]
    fn measured_zero_points_cancel() {
        let (signal, _) = measured_calibration();
        let s = PlateSetting::new(35.924f64.to_radians(), 34.492f64.to_radians(), &signal);
        let p = projector_from_plates(&s);
        let dist = p.distance(&Projector1Q::h());
        assert!(dist < 1e-3, "trace distance {dist}");
    }

    #[test]
    fn ideal_linear_solutions() {
        let arm = ArmCalibration::ideal();
        let s = plates_for_linear_projection(0.0, &arm).unwrap();
        assert_eq!((s.setting.hwp_angle, s.setting.qwp_angle), (0.0, 0.0));
        let s = plates_for_linear_projection(PI / 8.0, &arm).unwrap();
        assert!((s.setting.hwp_angle - PI / 16.0).abs() < 1e-15);
        assert!((s.setting.qwp_angle - PI / 8.0).abs() < 1e-15);
        assert!((s.overlap - 1.0).abs() < 1e-14);
    }

    #[test]
    fn circular_target_is_reachable() {
        let arm = ArmCalibration::ideal();
        let s = plates_for_state(&ket_right(), &arm).unwrap();
        assert!(s.overlap > 1.0 - 1e-12);
        let (signal, idler) = measured_calibration();
        for arm in [signal, idler] {
            for t in [ket_h(), ket_v(), ket_linear(FRAC_PI_4)] {
                assert!(plates_for_state(&t, &arm).unwrap().overlap > 1.0 - 1e-12);
            }
            // the signal plates cannot make exact circular light; best is ≈ 0.99979
            assert!(plates_for_state(&ket_right(), &arm).unwrap().overlap > 0.9997);
        }
    }

    #[test]
    fn stokes_curve_examples() {
        let hwp = PlateCalibration { zero_point: 0.3, ..PlateCalibration::ideal_hwp() };
        let s = stokes_curve(&hwp, &ket_h(), &[0.3, 0.3 + FRAC_PI_4]);
        for (got, want) in s.iter().zip([[1.0, 1.0, 0.0, 0.0], [1.0, -1.0, 0.0, 0.0]]) {
            for k in 0..4 {
                assert!((got.stokes[k] - want[k]).abs() < 1e-12);
            }
        }
        let qwp = PlateCalibration { zero_point: 0.3, ..PlateCalibration::ideal_qwp() };
        let s = stokes_curve(&qwp, &ket_h(), &[0.3 + FRAC_PI_4])[0];
        assert!(s.stokes[1].abs() < 1e-12 && s.stokes[2].abs() < 1e-12);
        assert!((s.stokes[3] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn hwp_stokes_are_pi_periodic() {
        let hwp = PlateCalibration::ideal_hwp();
        for i in 0..20 {
            let t = i as f64 * 0.31;
            let a = stokes_curve(&hwp, &ket_h(), &[t])[0].stokes;
            let b = stokes_curve(&hwp, &ket_h(), &[t + PI])[0].stokes;
            assert!((a[1] - b[1]).abs() < 1e-12 && (a[2] - b[2]).abs() < 1e-12);
        }
    }

    #[test]
    fn fit_rejects_bad_sample_sets() {
        let hwp = PlateCalibration::ideal_hwp();
        let few = stokes_curve(&hwp, &ket_h(), &[0.0, 0.5, 1.0]);
        assert!(fit_waveplate(&few, &ket_h(), PI).is_err());
        let same = stokes_curve(&hwp, &ket_h(), &[0.4; 10]);
        assert!(matches!(fit_waveplate(&same, &ket_h(), PI), Err(Error::Input(_))));
        let narrow: Vec<f64> = (0..10).map(|i| i as f64 * 0.05).collect();
        let narrow = stokes_curve(&hwp, &ket_h(), &narrow);
        assert!(fit_waveplate(&narrow, &ket_h(), PI).is_err());
    }

    #[test]
    fn fit_ideal_hwp_exactly() {
        let truth = PlateCalibration { zero_point: 0.4, ..PlateCalibration::ideal_hwp() };
        let angles: Vec<f64> = (0..36).map(|i| (i as f64 * 5.0).to_radians()).collect();
        let samples = stokes_curve(&truth, &ket_h(), &angles);
        let fit = fit_waveplate(&samples, &ket_h(), PI).unwrap();
        assert!((fit.calibration.retardance - PI).abs() < 1e-7);
        assert!((fit.calibration.zero_point - 0.4).abs() < 1e-9);
        assert!(fit.residual < 1e-9);
    }
}
