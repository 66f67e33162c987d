//! Physical models of the Sagnac pair source.
//!
//! Three error mechanisms map source parameters to a two-photon state:
//! unequal pair probability for the two pump directions, an offset of the
//! crystal from the loop center (which makes the clockwise and
//! counter-clockwise photons distinguishable in time), and accidental
//! coincidences from multi-pair emission.
//!
//! Units: lengths in mm, times in ps, rates in counts/s.

use std::sync::Arc;

use rustfft::num_complex::Complex as FftComplex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::numerics::{c, C64};
use crate::qstate::{basis_state, bell_psi_minus, DensityMatrix, PureState};
use crate::numerics::Ket4;

/// Speed of light in mm/ps.
pub const SPEED_OF_LIGHT_MM_PER_PS: f64 = 0.299_792_458;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrystalGeometry {
    pub length_mm: f64,
    /// Phase index at the pump wavelength; sets the internal focus shift.
    pub pump_index: f64,
    pub group_index_ordinary: f64,
    pub group_index_extraordinary: f64,
    pub waist_pump_um: f64,
    pub waist_signal_um: f64,
    pub waist_idler_um: f64,
    pub pump_wavelength_nm: f64,
    pub photon_wavelength_nm: f64,
    pub wavepacket_fwhm_ps: f64,
    /// Carried for reference only.
    pub degenerate_temperature_c: f64,
    pub time_step_ps: f64,
}

impl Default for CrystalGeometry {
    fn default() -> Self {
        Self {
            length_mm: 15.0,
            pump_index: 1.841,
            group_index_ordinary: 1.805,
            group_index_extraordinary: 1.910,
            waist_pump_um: 26.0,
            waist_signal_um: 36.0,
            waist_idler_um: 36.0,
            pump_wavelength_nm: 403.9,
            photon_wavelength_nm: 807.8,
            wavepacket_fwhm_ps: 1.92,
            degenerate_temperature_c: 31.9,
            time_step_ps: 0.005,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Ordinary,
    Extraordinary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Clockwise,
    CounterClockwise,
}

impl CrystalGeometry {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("length_mm", self.length_mm),
            ("pump_index", self.pump_index),
            ("group_index_ordinary", self.group_index_ordinary),
            ("group_index_extraordinary", self.group_index_extraordinary),
            ("waist_pump_um", self.waist_pump_um),
            ("waist_signal_um", self.waist_signal_um),
            ("waist_idler_um", self.waist_idler_um),
            ("pump_wavelength_nm", self.pump_wavelength_nm),
            ("photon_wavelength_nm", self.photon_wavelength_nm),
            ("wavepacket_fwhm_ps", self.wavepacket_fwhm_ps),
            ("time_step_ps", self.time_step_ps),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::param(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    pub fn group_index(&self, axis: Axis) -> f64 {
        match axis {
            Axis::Ordinary => self.group_index_ordinary,
            Axis::Extraordinary => self.group_index_extraordinary,
        }
    }

    /// Group velocity in mm/ps.
    pub fn group_velocity(&self, axis: Axis) -> f64 {
        SPEED_OF_LIGHT_MM_PER_PS / self.group_index(axis)
    }

    /// Bandwidth Δω (1/ps) of the Gaussian single-photon wavepacket.
    pub fn bandwidth(&self) -> f64 {
        2.0 * (2.0 * std::f64::consts::LN_2).sqrt() / self.wavepacket_fwhm_ps
    }

    /// In-crystal wavenumbers (1/mm) of pump, signal and idler. Signal and
    /// idler use the ordinary and extraordinary indices respectively.
    pub fn wavenumbers(&self) -> [f64; 3] {
        let k = |n: f64, nm: f64| std::f64::consts::TAU * n / (nm * 1e-6);
        [
            k(self.pump_index, self.pump_wavelength_nm),
            k(self.group_index_ordinary, self.photon_wavelength_nm),
            k(self.group_index_extraordinary, self.photon_wavelength_nm),
        ]
    }

    pub fn waists_mm(&self) -> [f64; 3] {
        [
            self.waist_pump_um * 1e-3,
            self.waist_signal_um * 1e-3,
            self.waist_idler_um * 1e-3,
        ]
    }

    /// Internal focus position of the collection modes for an external
    /// crystal displacement `z_c` (mm).
    pub fn internal_focus(&self, z_c: f64, direction: Direction) -> f64 {
        let shift = z_c / self.pump_index;
        match direction {
            Direction::Clockwise => shift,
            Direction::CounterClockwise => -shift,
        }
    }
}

/// Focus positions (mm, crystal-centered) of the pump, signal and idler modes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FocusPositions {
    pub pump: f64,
    pub signal: f64,
    pub idler: f64,
}

impl FocusPositions {
    pub fn all_at(z: f64) -> Self {
        Self { pump: z, signal: z, idler: z }
    }

    /// Pump at the crystal center, collection foci at `z0`.
    pub fn collection_at(z0: f64) -> Self {
        Self { pump: 0.0, signal: z0, idler: z0 }
    }
}

/// Spatial overlap of pump, signal and idler Gaussian modes at position `z`,
/// up to a constant factor:
/// w_p w_s w_i / (q_s* q_i* + q_p q_i* + q_p q_s*), q_j = w_j² + 2i(z − z₀ⱼ)/k_j.
pub fn spatial_overlap(z: f64, foci: &FocusPositions, geom: &CrystalGeometry) -> C64 {
    let [kp, ks, ki] = geom.wavenumbers();
    let [wp, ws, wi] = geom.waists_mm();
    let q = |w: f64, k: f64, z0: f64| c(w * w, 2.0 * (z - z0) / k);
    let qp = q(wp, kp, foci.pump);
    let qs = q(ws, ks, foci.signal);
    let qi = q(wi, ki, foci.idler);
    let denom = qs.conj() * qi.conj() + qp * qi.conj() + qp * qs.conj();
    c(wp * ws * wi, 0.0) / denom
}

/// Probability density on a uniform, origin-symmetric time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalDensity {
    step: f64,
    /// Values at t = (i − half_len)·step.
    values: Vec<f64>,
}

impl TemporalDensity {
    fn from_raw(step: f64, mut values: Vec<f64>) -> Result<Self> {
        for v in values.iter_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        let mass = trapezoid(&values, step);
        if !(mass > 0.0) {
            return Err(Error::param("temporal density has zero mass"));
        }
        values.iter_mut().for_each(|v| *v /= mass);
        Ok(Self { step, values })
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn time(&self, i: usize) -> f64 {
        (i as f64 - (self.values.len() / 2) as f64) * self.step
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.values.len()).map(|i| self.time(i))
    }

    pub fn integral(&self) -> f64 {
        trapezoid(&self.values, self.step)
    }

    pub fn mean(&self) -> f64 {
        let weighted: Vec<f64> = self.times().zip(&self.values).map(|(t, v)| t * v).collect();
        trapezoid(&weighted, self.step)
    }

    /// Full width at half maximum by linear interpolation.
    pub fn fwhm(&self) -> f64 {
        let (imax, vmax) = self
            .values
            .iter()
            .enumerate()
            .fold((0, f64::MIN), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
        let half = vmax / 2.0;
        let cross = |range: &mut dyn Iterator<Item = usize>, dir: isize| -> f64 {
            for i in range {
                let j = (i as isize + dir) as usize;
                if self.values[j] < half {
                    let (ti, tj) = (self.time(i), self.time(j));
                    let (vi, vj) = (self.values[i], self.values[j]);
                    return ti + (half - vi) * (tj - ti) / (vj - vi);
                }
            }
            f64::NAN
        };
        let right = cross(&mut (imax..self.values.len() - 1), 1);
        let left = cross(&mut (1..=imax).rev(), -1);
        right - left
    }

    /// Density concentrated in the single center cell.
    pub fn point_mass(step: f64, half_len: usize) -> Self {
        let mut values = vec![0.0; 2 * half_len + 1];
        values[half_len] = 1.0 / step;
        Self { step, values }
    }
}

fn trapezoid(values: &[f64], step: f64) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let inner: f64 = values.iter().sum();
    step * (inner - 0.5 * (values[0] + values[values.len() - 1]))
}

const MAX_TIME_STEP_PS: f64 = 0.01;

fn check_step(geom: &CrystalGeometry) -> Result<()> {
    geom.validate()?;
    if geom.time_step_ps > MAX_TIME_STEP_PS {
        return Err(Error::param(format!(
            "time grid step {} ps is coarser than {MAX_TIME_STEP_PS} ps",
            geom.time_step_ps
        )));
    }
    Ok(())
}

fn check_offset(z_c: f64, geom: &CrystalGeometry) -> Result<()> {
    if !z_c.is_finite() || (z_c / geom.pump_index).abs() > geom.length_mm / 2.0 {
        return Err(Error::param(format!(
            "crystal offset {z_c} mm puts the focus outside the crystal"
        )));
    }
    Ok(())
}

/// Half-length (in cells) of the grid covering the crystal transit time
/// plus five wavepacket widths on either side.
fn grid_half_len(axis: Axis, geom: &CrystalGeometry) -> usize {
    let half_transit = geom.length_mm / (2.0 * geom.group_velocity(axis));
    ((half_transit + 5.0 * geom.wavepacket_fwhm_ps) / geom.time_step_ps).ceil() as usize
}

/// Collection-time density τ(t) ∝ |O_s(t·v_g)|² inside the crystal transit
/// window |t| ≤ L/(2v_g), zero outside. Cells straddling the window edge are
/// weighted by the fraction inside.
pub fn collection_time_density(
    z_c: f64,
    axis: Axis,
    direction: Direction,
    geom: &CrystalGeometry,
) -> Result<TemporalDensity> {
    check_step(geom)?;
    check_offset(z_c, geom)?;
    let vg = geom.group_velocity(axis);
    let half_transit = geom.length_mm / (2.0 * vg);
    let foci = FocusPositions::collection_at(geom.internal_focus(z_c, direction));
    let n = grid_half_len(axis, geom);
    let step = geom.time_step_ps;
    let values = (0..=2 * n)
        .map(|i| {
            let t = (i as f64 - n as f64) * step;
            let lo = (t - step / 2.0).max(-half_transit);
            let hi = (t + step / 2.0).min(half_transit);
            let coverage = ((hi - lo) / step).clamp(0.0, 1.0);
            if coverage == 0.0 {
                0.0
            } else {
                coverage * spatial_overlap(t * vg, &foci, geom).norm_sqr()
            }
        })
        .collect();
    TemporalDensity::from_raw(step, values)
}

/// Gaussian single-photon wavepacket I_p(t) = Δω/√(2π) · exp(−t²Δω²/2).
pub fn wavepacket(t: f64, geom: &CrystalGeometry) -> f64 {
    let dw = geom.bandwidth();
    dw / (2.0 * std::f64::consts::PI).sqrt() * (-0.5 * t * t * dw * dw).exp()
}

/// Arrival-time density Q = τ ⊛ I_p, renormalized, on τ's grid.
pub fn arrival_density(tau: &TemporalDensity, geom: &CrystalGeometry) -> Result<TemporalDensity> {
    let step = tau.step;
    let sigma = 1.0 / geom.bandwidth();
    let m = ((10.0 * sigma) / step).ceil() as usize;
    let kernel: Vec<f64> = (0..=2 * m)
        .map(|i| wavepacket((i as f64 - m as f64) * step, geom) * step)
        .collect();
    let conv = fft_convolve(&tau.values, &kernel);
    // full convolution has length N + 2m; the centered slice lines up with τ
    let values = conv[m..m + tau.values.len()].to_vec();
    TemporalDensity::from_raw(step, values)
}

fn fft_convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
    let len = (a.len() + b.len() - 1).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd: Arc<dyn rustfft::Fft<f64>> = planner.plan_fft_forward(len);
    let inv = planner.plan_fft_inverse(len);
    let pad = |x: &[f64]| {
        let mut v: Vec<FftComplex<f64>> = x.iter().map(|&r| FftComplex::new(r, 0.0)).collect();
        v.resize(len, FftComplex::new(0.0, 0.0));
        v
    };
    let mut fa = pad(a);
    let mut fb = pad(b);
    fwd.process(&mut fa);
    fwd.process(&mut fb);
    let mut prod: Vec<_> = fa.iter().zip(&fb).map(|(x, y)| x * y).collect();
    inv.process(&mut prod);
    prod.iter()
        .take(a.len() + b.len() - 1)
        .map(|z| z.re / len as f64)
        .collect()
}

/// Arrival-time density for one axis and pump direction.
pub fn direction_arrival_density(
    z_c: f64,
    axis: Axis,
    direction: Direction,
    geom: &CrystalGeometry,
) -> Result<TemporalDensity> {
    arrival_density(&collection_time_density(z_c, axis, direction, geom)?, geom)
}

/// Temporal overlap O_c = (∫ √(Q_cw · Q_ccw) dt)² of the two pump directions.
pub fn direction_overlap(z_c: f64, axis: Axis, geom: &CrystalGeometry) -> Result<f64> {
    if z_c == 0.0 {
        check_step(geom)?;
        return Ok(1.0);
    }
    let cw = direction_arrival_density(z_c, axis, Direction::Clockwise, geom)?;
    let ccw = direction_arrival_density(z_c, axis, Direction::CounterClockwise, geom)?;
    let root: Vec<f64> = cw.values.iter().zip(&ccw.values).map(|(a, b)| (a * b).sqrt()).collect();
    let bc = trapezoid(&root, cw.step);
    Ok((bc * bc).min(1.0))
}

/// (O_c ordinary, O_c extraordinary) for a crystal offset.
pub fn crystal_offset_overlaps(z_c: f64, geom: &CrystalGeometry) -> Result<(f64, f64)> {
    Ok((
        direction_overlap(z_c, Axis::Ordinary, geom)?,
        direction_overlap(z_c, Axis::Extraordinary, geom)?,
    ))
}

fn offset_mixture(coherent: &DensityMatrix, mean_overlap: f64, hv_weight: f64) -> Result<DensityMatrix> {
    let hv = basis_state(1).density();
    let vh = basis_state(2).density();
    let lost = 1.0 - mean_overlap;
    DensityMatrix::mixture(&[
        (mean_overlap, coherent),
        (lost * hv_weight, &hv),
        (lost * (1.0 - hv_weight), &vh),
    ])
}

/// State produced with the crystal displaced by `z_c` (mm):
/// Ō|Ψ⁻⟩⟨Ψ⁻| + (1 − Ō)/2 (|HV⟩⟨HV| + |VH⟩⟨VH|), Ō = (O_o + O_e)/2.
pub fn crystal_offset_state(z_c: f64, geom: &CrystalGeometry) -> Result<DensityMatrix> {
    let (oo, oe) = crystal_offset_overlaps(z_c, geom)?;
    offset_mixture(&bell_psi_minus().density(), 0.5 * (oo + oe), 0.5)
}

/// √(1 − P/2)|HV⟩ − √(P/2)·e^{iφ}|VH⟩.
pub fn balance_state(balance: f64, phase: f64) -> Result<PureState> {
    if !(0.0..=2.0).contains(&balance) {
        return Err(Error::param(format!("balance P = {balance} outside [0, 2]")));
    }
    let mut amps = Ket4::zeros();
    amps[1] = c((1.0 - balance / 2.0).sqrt(), 0.0);
    amps[2] = -c((balance / 2.0).sqrt(), 0.0) * c(0.0, phase).exp();
    PureState::normalized(amps)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MultipairParams {
    /// Pair emission rate per direction ν, Hz.
    pub pair_rate: f64,
    pub eta_a: f64,
    pub eta_b: f64,
    /// Ratio of multi-pair to single-pair events p = ν·T_c.
    pub ratio: f64,
}

/// Multi-pair statistics from singles, coincidences and the coincidence window.
pub fn multipair_params_from_rates(
    rate_a: f64,
    rate_b: f64,
    rate_c: f64,
    window_ps: f64,
) -> Result<MultipairParams> {
    if !(rate_a > 0.0 && rate_b > 0.0 && rate_c > 0.0 && window_ps > 0.0) {
        return Err(Error::param("rates and coincidence window must be positive"));
    }
    if rate_c > rate_a.min(rate_b) {
        return Err(Error::param(format!(
            "coincidence rate {rate_c} exceeds a singles rate ({rate_a}, {rate_b})"
        )));
    }
    let pair_rate = rate_a * rate_b / rate_c;
    Ok(MultipairParams {
        pair_rate,
        eta_a: rate_c / rate_b,
        eta_b: rate_c / rate_a,
        ratio: pair_rate * window_ps * 1e-12,
    })
}

/// Fourfold-coincidence rate relative to the H/V coincidence rate for
/// polarizer angles (α, β).
pub fn accidental_ratio(alpha: f64, beta: f64, p: f64, eta_a: f64, eta_b: f64) -> f64 {
    let (sa, ca) = alpha.sin_cos();
    let (sb, cb) = beta.sin_cos();
    let first = (2.0 - eta_a * sa * sa) * (2.0 - eta_b * cb * cb) * (sa * cb).powi(2);
    let second = (2.0 - eta_a * ca * ca) * (2.0 - eta_b * sb * sb) * (ca * sb).powi(2);
    let third = 2.0 * (1.0 - eta_a * (sa * ca).powi(2)) * (1.0 - eta_b * (sb * cb).powi(2));
    p / 2.0 * (first + second + third)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SourceParams {
    /// Sagnac balance P in [0, 2]; 1 is balanced.
    pub balance: f64,
    /// Relative phase φ, radians.
    pub phase: f64,
    /// External crystal displacement z_c, mm.
    pub crystal_offset_mm: f64,
    /// Multi-pair ratio p.
    pub multipair_ratio: f64,
    pub eta_a: f64,
    pub eta_b: f64,
    pub coincidence_window_ps: f64,
    pub geometry: CrystalGeometry,
}

impl Default for SourceParams {
    fn default() -> Self {
        Self {
            balance: 1.0,
            phase: 0.0,
            crystal_offset_mm: 0.0,
            multipair_ratio: 0.0,
            eta_a: 1.0,
            eta_b: 1.0,
            coincidence_window_ps: 96.0,
            geometry: CrystalGeometry::default(),
        }
    }
}

impl SourceParams {
    /// Error estimates of the source as built.
    pub fn as_built() -> Self {
        let mp = multipair_params_from_rates(17380.0, 17458.0, 2181.0, 96.0)
            .expect("reference rates are consistent");
        Self {
            balance: 1.03,
            crystal_offset_mm: 1.0,
            multipair_ratio: 1.3e-5,
            eta_a: mp.eta_a,
            eta_b: mp.eta_b,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        if !(0.0..=2.0).contains(&self.balance) {
            return Err(Error::param(format!("balance P = {} outside [0, 2]", self.balance)));
        }
        if !(self.multipair_ratio >= 0.0) {
            return Err(Error::param("multipair ratio must be non-negative"));
        }
        for (name, eta) in [("eta_a", self.eta_a), ("eta_b", self.eta_b)] {
            if !(eta > 0.0 && eta <= 1.0) {
                return Err(Error::param(format!("{name} = {eta} outside (0, 1]")));
            }
        }
        if !(self.coincidence_window_ps > 0.0) {
            return Err(Error::param("coincidence window must be positive"));
        }
        check_offset(self.crystal_offset_mm, &self.geometry)
    }
}

/// Balance state with the crystal-offset dephasing applied; the incoherent
/// part keeps the balance-weighted HV/VH populations. Multi-pair accidentals
/// are added at count level, not here.
pub fn combined_source_state(params: &SourceParams) -> Result<DensityMatrix> {
    params.validate()?;
    let psi = balance_state(params.balance, params.phase)?.density();
    if params.crystal_offset_mm == 0.0 {
        return Ok(psi);
    }
    let (oo, oe) = crystal_offset_overlaps(params.crystal_offset_mm, &params.geometry)?;
    offset_mixture(&psi, 0.5 * (oo + oe), 1.0 - params.balance / 2.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qstate::{concurrence, fidelity_to_pure};
    use std::f64::consts::PI;

    #[test]
    fn balance_state_examples() {
        let psi = balance_state(1.0, 0.0).unwrap();
        assert!((fidelity_to_pure(&psi.density(), &bell_psi_minus()).unwrap() - 1.0).abs() < 1e-15);
        let c103 = concurrence(&balance_state(1.03, 0.0).unwrap().density()).unwrap();
        let closed = 2.0 * ((1.0 - 0.515) * 0.515f64).sqrt();
        assert!((c103 - closed).abs() < 1e-9);
        assert!((c103 - 0.99955).abs() < 1e-5);
        assert!(balance_state(2.1, 0.0).is_err());
        assert!(balance_state(-0.1, 0.0).is_err());
    }

    #[test]
    fn overlap_is_real_and_maximal_at_common_focus() {
        let geom = CrystalGeometry {
            waist_signal_um: 30.0,
            waist_idler_um: 30.0,
            waist_pump_um: 30.0,
            ..Default::default()
        };
        let foci = FocusPositions::all_at(1.5);
        let at = spatial_overlap(1.5, &foci, &geom);
        assert!(at.im.abs() < 1e-12 * at.re.abs());
        for dz in [0.1, 0.5, 2.0, 5.0] {
            assert!(spatial_overlap(1.5 + dz, &foci, &geom).norm() < at.norm());
            let left = spatial_overlap(1.5 - dz, &foci, &geom).norm();
            let right = spatial_overlap(1.5 + dz, &foci, &geom).norm();
            assert!((left - right).abs() < 1e-12 * left);
        }
    }

    #[test]
    #[allow(clippy::excessive_precision)]
    fn overlap_matches_high_precision_reference() {
        // |O_s|² with the pump focused at the center, evaluated at 50 digits.
        let geom = CrystalGeometry::default();
        let shifted = 1.0 / 1.841;
        let reference = [
            (0.0, 0.0, 96.407480764140524457),
            (1.0, 0.0, 95.317413816625675069),
            (-1.0, 0.0, 95.317413816625675069),
            (3.0, shifted, 90.102946259775724779),
            (-7.5, shifted, 55.377318178775382959),
        ];
        for (z, z0, want) in reference {
            let got = spatial_overlap(z, &FocusPositions::collection_at(z0), &geom).norm_sqr();
            assert!((got - want).abs() < 1e-12 * want, "z={z}: {got} vs {want}");
        }
    }

    #[test]
    fn centered_crystal_densities_coincide() {
        let geom = CrystalGeometry::default();
        let cw = collection_time_density(0.0, Axis::Ordinary, Direction::Clockwise, &geom).unwrap();
        let ccw =
            collection_time_density(0.0, Axis::Ordinary, Direction::CounterClockwise, &geom).unwrap();
        let diff = cw.values().iter().zip(ccw.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(diff < 1e-12);
        assert!((cw.integral() - 1.0).abs() < 1e-8);
    }

    #[test]
    fn support_matches_transit_time() {
        let geom = CrystalGeometry::default();
        let d = collection_time_density(0.0, Axis::Ordinary, Direction::Clockwise, &geom).unwrap();
        let covered: f64 = d.values().iter().map(|&v| if v > 0.0 { 1.0 } else { 0.0 }).sum::<f64>()
            * d.step();
        let expected = 15.0 * 1.805 / SPEED_OF_LIGHT_MM_PER_PS;
        assert!((expected - 90.31).abs() < 0.01);
        assert!((covered - expected).abs() < 2.0 * d.step(), "{covered} vs {expected}");
    }

    #[test]
    fn offset_shifts_mean_arrival_in_opposite_directions() {
        let geom = CrystalGeometry::default();
        let cw = collection_time_density(1.0, Axis::Ordinary, Direction::Clockwise, &geom).unwrap();
        let ccw =
            collection_time_density(1.0, Axis::Ordinary, Direction::CounterClockwise, &geom).unwrap();
        assert!(cw.mean() > 0.0 && ccw.mean() < 0.0);
        assert!((cw.mean() + ccw.mean()).abs() < 1e-9);
    }

    #[test]
    fn convolving_a_point_mass_gives_the_wavepacket() {
        let geom = CrystalGeometry::default();
        let q = arrival_density(&TemporalDensity::point_mass(0.005, 3000), &geom).unwrap();
        assert!((q.fwhm() - 1.92).abs() < 1e-3, "fwhm {}", q.fwhm());
        assert!((q.integral() - 1.0).abs() < 1e-8);
        assert!(q.mean().abs() < 1e-9);
    }

    #[test]
    fn convolution_preserves_mean_and_mass() {
        let geom = CrystalGeometry::default();
        let tau = collection_time_density(1.0, Axis::Extraordinary, Direction::Clockwise, &geom).unwrap();
        let q = arrival_density(&tau, &geom).unwrap();
        assert!((q.integral() - 1.0).abs() < 1e-8);
        assert!((q.mean() - tau.mean()).abs() < 1e-6, "{} vs {}", q.mean(), tau.mean());
        assert!(q.values().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn coarse_grid_is_rejected() {
        let geom = CrystalGeometry { time_step_ps: 0.05, ..Default::default() };
        assert!(collection_time_density(0.0, Axis::Ordinary, Direction::Clockwise, &geom).is_err());
    }

    #[test]
    fn multipair_from_reference_rates() {
        let mp = multipair_params_from_rates(17380.0, 17458.0, 2181.0, 96.0).unwrap();
        assert!((mp.pair_rate - 139e3).abs() < 0.5e3);
        assert!((mp.eta_a - 0.125).abs() < 1e-3 && (mp.eta_b - 0.125).abs() < 1e-3);
        assert!((mp.ratio - 1.34e-5).abs() < 0.01 * 1.34e-5);

        let lossless = multipair_params_from_rates(5000.0, 5000.0, 5000.0, 96.0).unwrap();
        assert_eq!((lossless.eta_a, lossless.eta_b, lossless.pair_rate), (1.0, 1.0, 5000.0));

        let doubled = multipair_params_from_rates(2.0 * 17380.0, 2.0 * 17458.0, 2181.0, 96.0).unwrap();
        assert!((doubled.pair_rate / mp.pair_rate - 4.0).abs() < 1e-12);

        assert!(multipair_params_from_rates(100.0, 100.0, 200.0, 96.0).is_err());
    }

    #[test]
    fn accidental_ratio_examples() {
        assert!((accidental_ratio(0.0, 0.0, 1.3e-5, 0.12, 0.13) - 1.3e-5).abs() < 1e-20);
        assert_eq!(accidental_ratio(0.7, 0.2, 0.0, 0.5, 0.5), 0.0);
    }

    #[test]
    fn accidental_ratio_symmetries() {
        for i in 0..30 {
            let a = i as f64 * 0.37;
            let b = i as f64 * 0.91 + 0.2;
            let r = accidental_ratio(a, b, 1e-5, 0.3, 0.7);
            assert!((r - accidental_ratio(a + PI, b, 1e-5, 0.3, 0.7)).abs() < 1e-18);
            assert!((r - accidental_ratio(a, b + PI, 1e-5, 0.3, 0.7)).abs() < 1e-18);
            assert!((r - accidental_ratio(b, a, 1e-5, 0.7, 0.3)).abs() < 1e-18);
        }
    }

    #[test]
    fn combined_state_identities() {
        let ideal = combined_source_state(&SourceParams::default()).unwrap();
        assert!((fidelity_to_pure(&ideal, &bell_psi_minus()).unwrap() - 1.0).abs() < 1e-15);

        let params = SourceParams { balance: 1.03, ..Default::default() };
        let rho = combined_source_state(&params).unwrap();
        let psi = balance_state(1.03, 0.0).unwrap();
        assert!((fidelity_to_pure(&rho, &psi).unwrap() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn offset_beyond_crystal_is_rejected() {
        let geom = CrystalGeometry::default();
        assert!(crystal_offset_state(20.0, &geom).is_err());
    }

    #[test]
    fn overlap_at_one_millimetre() {
        let geom = CrystalGeometry::default();
        let (oo, oe) = crystal_offset_overlaps(1.0, &geom).unwrap();
        assert!((oo - 0.998592).abs() < 2e-5, "{oo}");
        assert!((oe - 0.998592).abs() < 2e-5, "{oe}");
    }

    #[test]
    fn overlap_converges_with_grid_step() {
        let geom = CrystalGeometry::default();
        let fine = CrystalGeometry { time_step_ps: 0.0025, ..geom };
        for axis in [Axis::Ordinary, Axis::Extraordinary] {
            let a = direction_overlap(1.0, axis, &geom).unwrap();
            let b = direction_overlap(1.0, axis, &fine).unwrap();
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn overlap_is_even_and_decreasing() {
        let geom = CrystalGeometry::default();
        let mut last = 1.0;
        for i in 1..=8 {
            let z = 0.25 * i as f64;
            let plus = direction_overlap(z, Axis::Ordinary, &geom).unwrap();
            let minus = direction_overlap(-z, Axis::Ordinary, &geom).unwrap();
            assert!((plus - minus).abs() < 1e-12);
            assert!(plus < last && plus <= 1.0);
            last = plus;
        }
    }
}
