//! Virtual experiments: Poisson count generation, repeated CHSH campaigns,
//! single-error-source sweeps and the combined error budget.

use std::f64::consts::FRAC_PI_2;

use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;

use crate::chsh::{grid_projectors, s_from_count_grid, s_of_state, ChshAngles, CountGrid, SResult, TSIRELSON};
use crate::error::{Error, Result};
use crate::numerics::{mean_and_std, stream_rng};
use crate::polarization::{
    plates_for_linear_projection, plates_for_state, projector_from_plates, measured_calibration, ArmCalibration,
    PlateCalibration, PlateSetting,
};
use crate::qstate::{
    bell_psi_minus, born_probability, concurrence, fidelity_to_pure, ket_h, ket_linear, ket_right, ket_v,
    DensityMatrix, Projector1Q,
};
use crate::source::{
    accidental_ratio, balance_state, combined_source_state, crystal_offset_state, CrystalGeometry, SourceParams,
};
use crate::tomography::{
    expected_tomo_counts, linear_inversion, mle_reconstruct, standard_tomo_settings, TomoCounts, TomoSettings,
    STANDARD_LABELS,
};

/// Multi-pair accidental model: ratio p and heralding efficiencies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Accidentals {
    pub ratio: f64,
    pub eta_a: f64,
    pub eta_b: f64,
}

impl Accidentals {
    pub fn none() -> Self {
        Self { ratio: 0.0, eta_a: 1.0, eta_b: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum StateSource {
    Params(SourceParams),
    Explicit(DensityMatrix),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentPlan {
    pub source: StateSource,
    pub angles: ChshAngles,
    /// Pair (coincidence) rate N, 1/s.
    pub pair_rate: f64,
    /// Integration time τ per setting, s.
    pub integration_time: f64,
    pub repetitions: usize,
    pub seed: u64,
    /// Per-cell detection efficiency, indexed like the count grid.
    pub efficiency: [[f64; 4]; 4],
    /// Overrides the accidental model implied by `source`.
    pub accidentals: Option<Accidentals>,
}

impl ExperimentPlan {
    /// Ψ⁻ at the canonical angles at 4100 pairs/s, 25 repetitions of 60 s.
    pub fn reference_campaign(seed: u64) -> Self {
        Self {
            source: StateSource::Explicit(bell_psi_minus().density()),
            angles: ChshAngles::canonical(),
            pair_rate: 4100.0,
            integration_time: 60.0,
            repetitions: 25,
            seed,
            efficiency: [[1.0; 4]; 4],
            accidentals: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.pair_rate >= 0.0 && self.pair_rate.is_finite()) {
            return Err(Error::param("pair rate must be non-negative"));
        }
        if !(self.integration_time >= 0.0 && self.integration_time.is_finite()) {
            return Err(Error::param("integration time must be non-negative"));
        }
        if self.repetitions == 0 {
            return Err(Error::param("need at least one repetition"));
        }
        if self.efficiency.iter().flatten().any(|e| !(0.0..=1.0).contains(e)) {
            return Err(Error::param("efficiencies must lie in [0, 1]"));
        }
        if let StateSource::Params(p) = &self.source {
            p.validate()?;
        }
        Ok(())
    }

    pub fn state(&self) -> Result<DensityMatrix> {
        match &self.source {
            StateSource::Params(p) => combined_source_state(p),
            StateSource::Explicit(rho) => Ok(rho.clone()),
        }
    }

    pub fn accidental_model(&self) -> Accidentals {
        if let Some(a) = self.accidentals {
            return a;
        }
        match &self.source {
            StateSource::Params(p) => Accidentals { ratio: p.multipair_ratio, eta_a: p.eta_a, eta_b: p.eta_b },
            StateSource::Explicit(_) => Accidentals::none(),
        }
    }
}

/// Effective linear analyzer angle of a projector for the accidental model:
/// atan2(√⟨V|M|V⟩, √⟨H|M|H⟩).
pub fn effective_angle(p: &Projector1Q) -> f64 {
    p.overlap(&ket_v()).max(0.0).sqrt().atan2(p.overlap(&ket_h()).max(0.0).sqrt())
}

/// Accidental counts per unit of N·τ for an analyzer pair: the H/V
/// reference rate of `rho` times the multi-pair ratio at these angles.
fn accidental_fraction(rho: &DensityMatrix, pa: &Projector1Q, pb: &Projector1Q, acc: &Accidentals) -> f64 {
    if acc.ratio == 0.0 {
        return 0.0;
    }
    let reference = born_probability(rho, &Projector1Q::h(), &Projector1Q::v());
    reference * accidental_ratio(effective_angle(pa), effective_angle(pb), acc.ratio, acc.eta_a, acc.eta_b)
}

/// Poisson means of every cell: N·τ·(p·efficiency + accidental term).
pub fn expected_counts(plan: &ExperimentPlan) -> Result<CountGrid> {
    plan.validate()?;
    let rho = plan.state()?;
    let acc = plan.accidental_model();
    let (pa, pb) = grid_projectors(&plan.angles);
    let pairs = plan.pair_rate * plan.integration_time;
    let counts = std::array::from_fn(|i| {
        std::array::from_fn(|j| {
            let signal = born_probability(&rho, &pa[i], &pb[j]) * plan.efficiency[i][j];
            pairs * (signal + accidental_fraction(&rho, &pa[i], &pb[j], &acc))
        })
    });
    CountGrid::new(counts, plan.integration_time)
}

fn poisson(mean: f64, rng: &mut impl Rng) -> f64 {
    if mean > 0.0 {
        Poisson::new(mean).map(|d| d.sample(rng)).unwrap_or(0.0)
    } else {
        0.0
    }
}

fn sample_grid(means: &CountGrid, seed: u64, repetition: usize) -> Result<CountGrid> {
    let counts = std::array::from_fn(|i| {
        std::array::from_fn(|j| {
            let cell = (repetition * 16 + i * 4 + j) as u64;
            poisson(means.get(i, j), &mut stream_rng(seed, cell))
        })
    });
    CountGrid::new(counts, means.integration_time)
}

/// Counts of repetition `repetition`; cell (i, j) draws from stream
/// (seed, 16·repetition + 4i + j).
pub fn simulate_repetition(plan: &ExperimentPlan, repetition: usize) -> Result<CountGrid> {
    sample_grid(&expected_counts(plan)?, plan.seed, repetition)
}

pub fn simulate_counts(plan: &ExperimentPlan) -> Result<CountGrid> {
    simulate_repetition(plan, 0)
}

/// Poisson tomography counts for `rho` at `flux` expected pairs per setting.
pub fn simulate_tomo_counts(rho: &DensityMatrix, settings: &TomoSettings, flux: f64, seed: u64) -> Result<TomoCounts> {
    let exact = expected_tomo_counts(rho, settings, flux);
    let counts = std::array::from_fn(|k| poisson(exact.counts()[k], &mut stream_rng(seed, k as u64)));
    TomoCounts::new(counts, flux)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CampaignResult {
    pub repetitions: Vec<SResult>,
    pub repetition_counts: Vec<CountGrid>,
    pub pooled_counts: CountGrid,
    /// From the summed counts, not an average of S.
    pub pooled: SResult,
    /// Sample standard deviation of the per-repetition |S|.
    pub scatter: f64,
}

pub fn run_chsh_campaign(plan: &ExperimentPlan) -> Result<CampaignResult> {
    let means = expected_counts(plan)?;
    let grids: Vec<CountGrid> = (0..plan.repetitions)
        .into_par_iter()
        .map(|r| sample_grid(&means, plan.seed, r))
        .collect::<Result<_>>()?;
    let repetitions: Vec<SResult> = grids.iter().map(s_from_count_grid).collect::<Result<_>>()?;
    let pooled_counts = grids[1..].iter().fold(grids[0].clone(), |acc, g| acc.add(g));
    let pooled = s_from_count_grid(&pooled_counts)?;
    let abs: Vec<f64> = repetitions.iter().map(|r| r.abs_s()).collect();
    Ok(CampaignResult {
        scatter: mean_and_std(&abs).1,
        repetitions,
        repetition_counts: grids,
        pooled_counts,
        pooled,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ErrorSource {
    Balance,
    CrystalOffset,
    Multipair,
    PlateSetting,
    PlateCalibration,
}

impl ErrorSource {
    pub const ALL: [ErrorSource; 5] = [
        ErrorSource::Balance,
        ErrorSource::CrystalOffset,
        ErrorSource::Multipair,
        ErrorSource::PlateSetting,
        ErrorSource::PlateCalibration,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ErrorSource::Balance => "balance",
            ErrorSource::CrystalOffset => "crystal_offset",
            ErrorSource::Multipair => "multipair",
            ErrorSource::PlateSetting => "plate_setting",
            ErrorSource::PlateCalibration => "plate_calibration",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|s| s.name() == name.replace('-', "_"))
            .ok_or_else(|| Error::input(format!("unknown error source '{name}'")))
    }

    /// Meaning of the sweep parameter.
    pub fn parameter_unit(&self) -> &'static str {
        match self {
            ErrorSource::Balance => "P",
            ErrorSource::CrystalOffset => "z_c [mm]",
            ErrorSource::Multipair => "p",
            ErrorSource::PlateSetting => "epsilon [deg]",
            ErrorSource::PlateCalibration => "uncertainty scale",
        }
    }

    pub fn is_monte_carlo(&self) -> bool {
        matches!(self, ErrorSource::PlateSetting | ErrorSource::PlateCalibration)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlateErrorDistribution {
    /// σ = ε.
    Gaussian,
    /// Uniform on [−ε, ε].
    Uniform,
}

/// Which mount angles carry setting errors during the CHSH projections.
/// Linear analysis only needs the half-wave plate; tomography always
/// perturbs both plates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChshPlateErrors {
    HalfWaveOnly,
    BothPlates,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepOptions {
    pub trials: usize,
    pub seed: u64,
    pub distribution: PlateErrorDistribution,
    pub chsh_plate_errors: ChshPlateErrors,
    /// Efficiencies used by the multipair sweep.
    pub eta_a: f64,
    pub eta_b: f64,
    pub signal_arm: ArmCalibration,
    pub idler_arm: ArmCalibration,
    /// Crystal model for offset sweeps.
    pub geometry: CrystalGeometry,
}

impl Default for SweepOptions {
    fn default() -> Self {
        let built = SourceParams::as_built();
        let (signal_arm, idler_arm) = measured_calibration();
        Self {
            trials: 2000,
            seed: 0,
            distribution: PlateErrorDistribution::Gaussian,
            chsh_plate_errors: ChshPlateErrors::HalfWaveOnly,
            eta_a: built.eta_a,
            eta_b: built.eta_b,
            signal_arm,
            idler_arm,
            geometry: CrystalGeometry::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub parameter: f64,
    pub fidelity: f64,
    pub concurrence: f64,
    /// 2√2 − |S| at the canonical angles.
    pub tsirelson_gap: f64,
    /// Standard error of the Monte-Carlo mean gap; 0 for analytic sweeps.
    pub std_err: f64,
}

fn analytic_point(parameter: f64, rho: &DensityMatrix) -> Result<SweepPoint> {
    Ok(SweepPoint {
        parameter,
        fidelity: fidelity_to_pure(rho, &bell_psi_minus())?,
        concurrence: concurrence(rho)?,
        tsirelson_gap: TSIRELSON - s_of_state(rho, &ChshAngles::canonical()).abs(),
        std_err: 0.0,
    })
}

/// 2√2 − |S| for Ψ⁻ with multi-pair accidentals added to the exact counts.
pub fn multipair_gap(acc: &Accidentals) -> Result<f64> {
    let plan = ExperimentPlan {
        pair_rate: 1.0,
        integration_time: 1.0,
        accidentals: Some(*acc),
        ..ExperimentPlan::reference_campaign(0)
    };
    Ok(s_from_count_grid(&expected_counts(&plan)?)?.tsirelson_gap())
}

/// Apparent state from noiseless tomography with accidentals on every setting.
fn multipair_point(acc: &Accidentals) -> Result<SweepPoint> {
    let psi = bell_psi_minus().density();
    let settings = standard_tomo_settings();
    let exact = expected_tomo_counts(&psi, &settings, 1.0);
    let counts = std::array::from_fn(|k| {
        let (pa, pb) = &settings.projectors()[k];
        exact.counts()[k] + accidental_fraction(&psi, pa, pb, acc)
    });
    let apparent = linear_inversion(&TomoCounts::new(counts, 1.0)?, &settings)?.clipped();
    let mut point = analytic_point(acc.ratio, &apparent)?;
    point.tsirelson_gap = multipair_gap(acc)?;
    Ok(point)
}

/// Expected-count CHSH grid and tomography reconstruction for one set of
/// realized analyzer projectors.
struct Realized {
    /// [i][j] → (A projector, B projector) for CHSH cell (i, j).
    chsh: [[(Projector1Q, Projector1Q); 4]; 4],
    /// Tomography projector pairs, A-label major.
    tomo: Vec<(Projector1Q, Projector1Q)>,
}

fn evaluate_realized(rho: &DensityMatrix, realized: &Realized, nominal: &TomoSettings) -> Result<(f64, f64, f64)> {
    let counts = realized.chsh.map(|row| row.map(|(pa, pb)| born_probability(rho, &pa, &pb)));
    let gap = s_from_count_grid(&CountGrid::new(counts, 0.0)?)?.tsirelson_gap();
    let tomo_counts: [f64; 16] =
        std::array::from_fn(|k| born_probability(rho, &realized.tomo[k].0, &realized.tomo[k].1));
    let estimate = mle_reconstruct(&TomoCounts::new(tomo_counts, 1.0)?, nominal)?;
    Ok((fidelity_to_pure(&estimate, &bell_psi_minus())?, concurrence(&estimate)?, gap))
}

/// Nominal plate settings for the CHSH analyzers (a, a⊥, a′, a′⊥ on the
/// signal arm, b, b⊥, b′, b′⊥ on the idler arm) and the tomography states.
struct NominalSettings {
    chsh_a: [PlateSetting; 4],
    chsh_b: [PlateSetting; 4],
    tomo_a: [PlateSetting; 4],
    tomo_b: [PlateSetting; 4],
}

impl NominalSettings {
    fn solve(signal: &ArmCalibration, idler: &ArmCalibration) -> Result<Self> {
        let [a, ap, b, bp] = ChshAngles::canonical().directions();
        let lin = |angle: f64, arm: &ArmCalibration| plates_for_linear_projection(angle, arm).map(|s| s.setting);
        let tomo = |arm: &ArmCalibration| -> Result<[PlateSetting; 4]> {
            let targets = [ket_h(), ket_v(), ket_linear(std::f64::consts::FRAC_PI_4), ket_right()];
            let solved: Vec<PlateSetting> =
                targets.iter().map(|t| plates_for_state(t, arm).map(|s| s.setting)).collect::<Result<_>>()?;
            Ok([solved[0], solved[1], solved[2], solved[3]])
        };
        Ok(Self {
            chsh_a: [lin(a, signal)?, lin(a + FRAC_PI_2, signal)?, lin(ap, signal)?, lin(ap + FRAC_PI_2, signal)?],
            chsh_b: [lin(b, idler)?, lin(b + FRAC_PI_2, idler)?, lin(bp, idler)?, lin(bp + FRAC_PI_2, idler)?],
            tomo_a: tomo(signal)?,
            tomo_b: tomo(idler)?,
        })
    }

    /// Tomography settings as the nominal calibration predicts them.
    fn tomo_settings(&self) -> Result<TomoSettings> {
        let mut projectors = Vec::with_capacity(16);
        let mut labels = Vec::with_capacity(16);
        for i in 0..4 {
            for j in 0..4 {
                projectors.push((projector_from_plates(&self.tomo_a[i]), projector_from_plates(&self.tomo_b[j])));
                labels.push((STANDARD_LABELS[i].to_string(), STANDARD_LABELS[j].to_string()));
            }
        }
        TomoSettings::new(projectors, labels)
    }

    /// Realized projectors with each cell's four mount angles shifted by
    /// `errors[4·cell .. 4·cell + 4]` (CHSH cells first, then tomography).
    fn with_setting_errors(&self, errors: &[f64], chsh_plates: ChshPlateErrors) -> Realized {
        let shifted = |s: &PlateSetting, e: &[f64]| projector_from_plates(&s.perturbed(e[0], e[1]));
        let qwp = match chsh_plates {
            ChshPlateErrors::HalfWaveOnly => 0.0,
            ChshPlateErrors::BothPlates => 1.0,
        };
        let chsh = std::array::from_fn(|i| {
            std::array::from_fn(|j| {
                let e = &errors[4 * (4 * i + j)..];
                (
                    shifted(&self.chsh_a[i], &[e[0], qwp * e[1]]),
                    shifted(&self.chsh_b[j], &[e[2], qwp * e[3]]),
                )
            })
        });
        let tomo = (0..16)
            .map(|k| {
                let e = &errors[64 + 4 * k..];
                (shifted(&self.tomo_a[k / 4], &e[0..2]), shifted(&self.tomo_b[k % 4], &e[2..4]))
            })
            .collect();
        Realized { chsh, tomo }
    }

    /// Realized projectors with the true plates swapped in.
    fn with_plates(&self, signal: &ArmCalibration, idler: &ArmCalibration) -> Realized {
        let pa = self.chsh_a.map(|s| projector_from_plates(&s.with_plates(signal)));
        let pb = self.chsh_b.map(|s| projector_from_plates(&s.with_plates(idler)));
        let ta = self.tomo_a.map(|s| projector_from_plates(&s.with_plates(signal)));
        let tb = self.tomo_b.map(|s| projector_from_plates(&s.with_plates(idler)));
        Realized {
            chsh: std::array::from_fn(|i| std::array::from_fn(|j| (pa[i], pb[j]))),
            tomo: (0..16).map(|k| (ta[k / 4], tb[k % 4])).collect(),
        }
    }
}

fn perturb_plate(p: &PlateCalibration, scale: f64, z: [f64; 2]) -> PlateCalibration {
    PlateCalibration {
        retardance: p.retardance + scale * p.retardance_uncertainty * z[0],
        zero_point: p.zero_point + scale * p.zero_point_uncertainty * z[1],
        ..*p
    }
}

fn perturb_arm(arm: &ArmCalibration, scale: f64, z: &[f64]) -> ArmCalibration {
    ArmCalibration {
        hwp: perturb_plate(&arm.hwp, scale, [z[0], z[1]]),
        qwp: perturb_plate(&arm.qwp, scale, [z[2], z[3]]),
    }
}

/// Monte-Carlo mean of (fidelity, concurrence, gap) over antithetic trial
/// pairs: pair k draws one error vector from stream (seed, k) and evaluates
/// it with both signs.
fn monte_carlo_point<F>(parameter: f64, trials: usize, seed: u64, dims: usize, draw: F, eval: impl Fn(&[f64]) -> Result<(f64, f64, f64)> + Sync) -> Result<SweepPoint>
where
    F: Fn(&mut rand_chacha::ChaCha8Rng) -> f64 + Sync,
{
    let pairs = trials.div_ceil(2).max(1);
    let results: Vec<(f64, f64, f64)> = (0..pairs)
        .into_par_iter()
        .map(|k| {
            let mut rng = stream_rng(seed, k as u64);
            let e: Vec<f64> = (0..dims).map(|_| draw(&mut rng)).collect();
            let minus: Vec<f64> = e.iter().map(|x| -x).collect();
            let (f1, c1, g1) = eval(&e)?;
            let (f2, c2, g2) = eval(&minus)?;
            Ok((0.5 * (f1 + f2), 0.5 * (c1 + c2), 0.5 * (g1 + g2)))
        })
        .collect::<Result<_>>()?;
    let col = |f: fn(&(f64, f64, f64)) -> f64| results.iter().map(f).collect::<Vec<f64>>();
    let (fidelity, _) = mean_and_std(&col(|r| r.0));
    let (conc, _) = mean_and_std(&col(|r| r.1));
    let (gap, gap_sd) = mean_and_std(&col(|r| r.2));
    Ok(SweepPoint {
        parameter,
        fidelity,
        concurrence: conc,
        tsirelson_gap: gap,
        std_err: gap_sd / (pairs as f64).sqrt(),
    })
}

/// Mean effect of random mount-angle errors of size `epsilon_deg` on ideal plates.
pub fn plate_setting_point(epsilon_deg: f64, opts: &SweepOptions) -> Result<SweepPoint> {
    if !(epsilon_deg >= 0.0) {
        return Err(Error::param("plate setting error must be non-negative"));
    }
    let ideal = ArmCalibration::ideal();
    let nominal = NominalSettings::solve(&ideal, &ideal)?;
    let tomo = nominal.tomo_settings()?;
    let psi = bell_psi_minus().density();
    let eps = epsilon_deg.to_radians();
    if eps == 0.0 {
        return evaluate_realized(&psi, &nominal.with_setting_errors(&[0.0; 128], opts.chsh_plate_errors), &tomo)
            .map(|(f, c, g)| SweepPoint { parameter: 0.0, fidelity: f, concurrence: c, tsirelson_gap: g, std_err: 0.0 });
    }
    let normal = Normal::new(0.0, eps).map_err(|e| Error::param(e.to_string()))?;
    let distribution = opts.distribution;
    monte_carlo_point(
        epsilon_deg,
        opts.trials,
        opts.seed,
        128,
        move |rng| match distribution {
            PlateErrorDistribution::Gaussian => normal.sample(rng),
            PlateErrorDistribution::Uniform => rng.random_range(-eps..=eps),
        },
        |e| evaluate_realized(&psi, &nominal.with_setting_errors(e, opts.chsh_plate_errors), &tomo),
    )
}

/// Mean effect of drawing the true plates from the calibration
/// uncertainties (scaled by `scale`) while settings use the nominal values.
pub fn plate_calibration_point(scale: f64, opts: &SweepOptions) -> Result<SweepPoint> {
    if !(scale >= 0.0) {
        return Err(Error::param("calibration uncertainty scale must be non-negative"));
    }
    let (signal, idler) = (opts.signal_arm, opts.idler_arm);
    let nominal = NominalSettings::solve(&signal, &idler)?;
    let tomo = nominal.tomo_settings()?;
    let psi = bell_psi_minus().density();
    if scale == 0.0 {
        return evaluate_realized(&psi, &nominal.with_plates(&signal, &idler), &tomo)
            .map(|(f, c, g)| SweepPoint { parameter: 0.0, fidelity: f, concurrence: c, tsirelson_gap: g, std_err: 0.0 });
    }
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    monte_carlo_point(
        scale,
        opts.trials,
        opts.seed,
        8,
        move |rng| normal.sample(rng),
        |z| {
            let realized = nominal.with_plates(&perturb_arm(&signal, scale, &z[0..4]), &perturb_arm(&idler, scale, &z[4..8]));
            evaluate_realized(&psi, &realized, &tomo)
        },
    )
}

/// One curve of (fidelity, concurrence, 2√2 − |S|) against a single error
/// parameter, all other errors off. Monte-Carlo sweeps give each point its
/// own seed offset so points are independent.
pub fn sweep_error_source(source: ErrorSource, values: &[f64], opts: &SweepOptions) -> Result<Vec<SweepPoint>> {
    values
        .iter()
        .enumerate()
        .map(|(idx, &v)| match source {
            ErrorSource::Balance => analytic_point(v, &balance_state(v, 0.0)?.density()),
            ErrorSource::CrystalOffset => analytic_point(v, &crystal_offset_state(v, &opts.geometry)?),
            ErrorSource::Multipair => {
                if !(v >= 0.0) {
                    return Err(Error::param("multipair ratio must be non-negative"));
                }
                multipair_point(&Accidentals { ratio: v, eta_a: opts.eta_a, eta_b: opts.eta_b })
            }
            ErrorSource::PlateSetting => {
                plate_setting_point(v, &SweepOptions { seed: opts.seed.wrapping_add(idx as u64 * 0x9E37_79B9), ..*opts })
            }
            ErrorSource::PlateCalibration => {
                plate_calibration_point(v, &SweepOptions { seed: opts.seed.wrapping_add(idx as u64 * 0x9E37_79B9), ..*opts })
            }
        })
        .collect()
}

/// Inputs for the error budget.
#[derive(Debug, Clone, PartialEq)]
pub struct BudgetInputs {
    pub source: SourceParams,
    pub signal_arm: ArmCalibration,
    pub idler_arm: ArmCalibration,
    pub plate_error_deg: f64,
    pub trials: usize,
    pub seed: u64,
    pub distribution: PlateErrorDistribution,
    pub chsh_plate_errors: ChshPlateErrors,
}

impl BudgetInputs {
    pub fn as_built(seed: u64) -> Self {
        let (signal_arm, idler_arm) = measured_calibration();
        Self {
            source: SourceParams::as_built(),
            signal_arm,
            idler_arm,
            plate_error_deg: 0.1,
            trials: 4000,
            seed,
            distribution: PlateErrorDistribution::Gaussian,
            chsh_plate_errors: ChshPlateErrors::HalfWaveOnly,
        }
    }

    pub fn ideal(seed: u64) -> Self {
        Self {
            source: SourceParams::default(),
            signal_arm: ArmCalibration::ideal(),
            idler_arm: ArmCalibration::ideal(),
            plate_error_deg: 0.0,
            trials: 200,
            seed,
            distribution: PlateErrorDistribution::Gaussian,
            chsh_plate_errors: ChshPlateErrors::HalfWaveOnly,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BudgetEntry {
    pub source: ErrorSource,
    pub label: &'static str,
    pub parameter: String,
    /// Reduction of |S| from 2√2.
    pub delta_s: f64,
    pub std_err: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorBudget {
    /// Sorted by descending ΔS.
    pub entries: Vec<BudgetEntry>,
    pub total: f64,
}

impl ErrorBudget {
    pub fn entry(&self, source: ErrorSource) -> Option<&BudgetEntry> {
        self.entries.iter().find(|e| e.source == source)
    }
}

/// Each error source evaluated alone (all others ideal), sorted by impact.
pub fn error_budget(inputs: &BudgetInputs) -> Result<ErrorBudget> {
    let p = &inputs.source;
    p.validate()?;
    let gap = |rho: DensityMatrix| TSIRELSON - s_of_state(&rho, &ChshAngles::canonical()).abs();
    let opts = SweepOptions {
        trials: inputs.trials,
        seed: inputs.seed,
        distribution: inputs.distribution,
        chsh_plate_errors: inputs.chsh_plate_errors,
        eta_a: p.eta_a,
        eta_b: p.eta_b,
        signal_arm: inputs.signal_arm,
        idler_arm: inputs.idler_arm,
        geometry: p.geometry,
    };
    let calibration = plate_calibration_point(1.0, &opts)?;
    let setting = plate_setting_point(inputs.plate_error_deg, &SweepOptions { seed: inputs.seed ^ 0x5EED, ..opts })?;
    let mut entries = vec![
        BudgetEntry {
            source: ErrorSource::CrystalOffset,
            label: "Crystal offset",
            parameter: format!("z_c = {} mm", p.crystal_offset_mm),
            delta_s: gap(crystal_offset_state(p.crystal_offset_mm, &p.geometry)?),
            std_err: 0.0,
        },
        BudgetEntry {
            source: ErrorSource::Balance,
            label: "Sagnac balance",
            parameter: format!("P = {}", p.balance),
            delta_s: gap(balance_state(p.balance, p.phase)?.density()),
            std_err: 0.0,
        },
        BudgetEntry {
            source: ErrorSource::PlateCalibration,
            label: "Wave plate calibration",
            parameter: "calibration uncertainties".into(),
            delta_s: calibration.tsirelson_gap,
            std_err: calibration.std_err,
        },
        BudgetEntry {
            source: ErrorSource::PlateSetting,
            label: "Wave plate setting error",
            parameter: format!("±{} deg", inputs.plate_error_deg),
            delta_s: setting.tsirelson_gap,
            std_err: setting.std_err,
        },
        BudgetEntry {
            source: ErrorSource::Multipair,
            label: "Multi-pair emission",
            parameter: format!("p = {:e}", p.multipair_ratio),
            delta_s: multipair_gap(&Accidentals { ratio: p.multipair_ratio, eta_a: p.eta_a, eta_b: p.eta_b })?,
            std_err: 0.0,
        },
    ];
    // 2√2 is the maximum, so a negative entry can only be round-off
    for e in entries.iter_mut() {
        if e.delta_s < 0.0 && e.delta_s > -1e-12 {
            e.delta_s = 0.0;
        }
    }
    entries.sort_by(|a, b| b.delta_s.total_cmp(&a.delta_s));
    let total = entries.iter().map(|e| e.delta_s).sum();
    Ok(ErrorBudget { entries, total })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qstate::basis_state;

    #[test]
    fn zero_flux_gives_zero_counts() {
        let plan = ExperimentPlan { pair_rate: 0.0, ..ExperimentPlan::reference_campaign(1) };
        let g = simulate_counts(&plan).unwrap();
        assert_eq!(g.total(), 0.0);
    }

    #[test]
    fn sample_means_match_expectation() {
        let plan = ExperimentPlan { pair_rate: 10.0, integration_time: 10.0, ..ExperimentPlan::reference_campaign(5) };
        let means = expected_counts(&plan).unwrap();
        let n = 10_000;
        let mut sums = [[0.0; 4]; 4];
        for rep in 0..n {
            let g = simulate_repetition(&plan, rep).unwrap();
            for i in 0..4 {
                for j in 0..4 {
                    sums[i][j] += g.get(i, j);
                }
            }
        }
        for i in 0..4 {
            for j in 0..4 {
                let mu = means.get(i, j);
                let avg = sums[i][j] / n as f64;
                assert!((avg - mu).abs() < 3.0 * mu.sqrt() / (n as f64).sqrt() + 1e-12, "{i},{j}: {avg} vs {mu}");
            }
        }
    }

    #[test]
    fn single_repetition_uncertainty() {
        let plan = ExperimentPlan::reference_campaign(2);
        let exact = s_from_count_grid(&expected_counts(&plan).unwrap()).unwrap();
        assert!((exact.delta_s - 2.85e-3).abs() < 1e-5, "{}", exact.delta_s);
    }

    #[test]
    fn campaign_pools_summed_counts() {
        let c = run_chsh_campaign(&ExperimentPlan::reference_campaign(7)).unwrap();
        assert_eq!(c.repetitions.len(), 25);
        let summed = c.repetition_counts.iter().skip(1).fold(c.repetition_counts[0].clone(), |a, g| a.add(g));
        assert_eq!(summed.counts(), c.pooled_counts.counts());
        assert_eq!(s_from_count_grid(&summed).unwrap(), c.pooled);
        assert!((5.0e-4..6.5e-4).contains(&c.pooled.delta_s));
        assert_eq!(c, run_chsh_campaign(&ExperimentPlan::reference_campaign(7)).unwrap());
    }

    #[test]
    fn analytic_sweeps_at_zero_error() {
        let opts = SweepOptions { trials: 20, ..Default::default() };
        for (source, v) in [(ErrorSource::Balance, 1.0), (ErrorSource::CrystalOffset, 0.0), (ErrorSource::Multipair, 0.0)] {
            let p = sweep_error_source(source, &[v], &opts).unwrap()[0];
            assert!(p.tsirelson_gap.abs() < 1e-12, "{source:?}");
            assert!((p.fidelity - 1.0).abs() < 1e-12 && (p.concurrence - 1.0).abs() < 1e-9, "{source:?}");
        }
    }

    #[test]
    fn monte_carlo_sweeps_at_zero_error() {
        let opts = SweepOptions { trials: 20, ..Default::default() };
        for source in [ErrorSource::PlateSetting, ErrorSource::PlateCalibration] {
            let p = sweep_error_source(source, &[0.0], &opts).unwrap()[0];
            assert!(p.tsirelson_gap.abs() < 1e-10, "{source:?} {}", p.tsirelson_gap);
            assert!((p.fidelity - 1.0).abs() < 1e-8 && (p.concurrence - 1.0).abs() < 1e-6, "{source:?} {p:?}");
        }
    }

    #[test]
    fn analytic_sweeps_are_monotone() {
        let opts = SweepOptions::default();
        let grids: [(ErrorSource, Vec<f64>); 3] = [
            (ErrorSource::Balance, (0..=10).map(|i| 1.0 + 0.02 * i as f64).collect()),
            (ErrorSource::CrystalOffset, (0..=8).map(|i| 0.25 * i as f64).collect()),
            (ErrorSource::Multipair, (0..=10).map(|i| 1e-6 * i as f64 * 5.0).collect()),
        ];
        for (source, values) in grids {
            let pts = sweep_error_source(source, &values, &opts).unwrap();
            for w in pts.windows(2) {
                assert!(w[1].tsirelson_gap >= w[0].tsirelson_gap - 1e-15, "{source:?}");
            }
        }
    }

    #[test]
    fn effective_angle_of_linear_projectors() {
        for a in [0.0, 0.3, FRAC_PI_2] {
            assert!((effective_angle(&Projector1Q::linear(a)) - a).abs() < 1e-7);
        }
    }

    #[test]
    fn accidentals_use_the_hv_reference_rate() {
        let plan = ExperimentPlan {
            source: StateSource::Explicit(basis_state(1).density()),
            accidentals: Some(Accidentals { ratio: 1e-3, eta_a: 0.1, eta_b: 0.1 }),
            pair_rate: 1.0,
            integration_time: 1.0,
            ..ExperimentPlan::reference_campaign(0)
        };
        // |HV⟩ has unit H/V rate; at (a, b) = (0, π/8) the cell gets p·ratio(0, π/8)
        let g = expected_counts(&plan).unwrap();
        let want = born_probability(&basis_state(1).density(), &Projector1Q::linear(0.0), &Projector1Q::linear(std::f64::consts::FRAC_PI_8))
            + accidental_ratio(0.0, std::f64::consts::FRAC_PI_8, 1e-3, 0.1, 0.1);
        assert!((g.get(0, 0) - want).abs() < 1e-9);
    }

    #[test]
    fn ideal_budget_is_zero() {
        let b = error_budget(&BudgetInputs::ideal(1)).unwrap();
        for e in &b.entries {
            assert!(e.delta_s >= 0.0 && e.delta_s < 1e-10, "{e:?}");
        }
        assert!((b.total - b.entries.iter().map(|e| e.delta_s).sum::<f64>()).abs() < 1e-12);
    }
}
