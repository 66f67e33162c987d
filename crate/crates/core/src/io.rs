//! File formats: CHSH count tables, wave-plate calibrations, tomography
//! counts, Stokes scans, and the TOML run configuration.
//!
//! Angles in files are degrees; everything in memory is radians.

use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::chsh::{CellSetting, ChshAngles, CountGrid, A_LABELS, B_LABELS};
use crate::error::{Error, Result};
use crate::expsim::{
    Accidentals, BudgetInputs, ChshPlateErrors, ExperimentPlan, PlateErrorDistribution, StateSource, SweepOptions,
};
use crate::polarization::{plates_for_linear_projection, measured_calibration, ArmCalibration, PlateCalibration, StokesSample};
use crate::qstate::{ket_h, ket_linear, ket_right, ket_v};
use crate::numerics::Ket2;
use crate::source::{multipair_params_from_rates, CrystalGeometry, SourceParams};
use crate::tomography::{TomoCounts, TomoSettings};

pub const COUNT_TABLE_HEADER: [&str; 5] = ["a_hwp_deg", "a_qwp_deg", "b_hwp_deg", "b_qwp_deg", "coincidences"];

/// Maps file rows to (A, B) grid cells.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayoutMap {
    cells: [(usize, usize); 16],
}

impl Default for LayoutMap {
    /// Rows grouped four per A setting in the order (a, a⊥, a′, a′⊥);
    /// within a group B runs (b, b⊥, b′, b′⊥).
    fn default() -> Self {
        Self { cells: std::array::from_fn(|r| (r / 4, r % 4)) }
    }
}

impl LayoutMap {
    pub fn new(cells: [(usize, usize); 16]) -> Result<Self> {
        let mut seen = HashSet::new();
        for &(a, b) in &cells {
            if a > 3 || b > 3 {
                return Err(Error::input(format!("layout cell ({a}, {b}) is out of range")));
            }
            if !seen.insert((a, b)) {
                return Err(Error::input(format!("layout maps two rows to cell ({a}, {b})")));
            }
        }
        Ok(Self { cells })
    }

    /// Parses "AB,AB,..." with 16 two-digit entries, e.g. "00,01,02,03,10,...".
    pub fn parse(text: &str) -> Result<Self> {
        let tokens: Vec<&str> = text.split(',').map(str::trim).filter(|t| !t.is_empty()).collect();
        if tokens.len() != 16 {
            return Err(Error::input(format!("layout needs 16 entries, got {}", tokens.len())));
        }
        let mut cells = [(0, 0); 16];
        for (r, t) in tokens.iter().enumerate() {
            let digits: Vec<usize> = t.chars().filter_map(|ch| ch.to_digit(10).map(|d| d as usize)).collect();
            if digits.len() != 2 || t.len() != 2 {
                return Err(Error::input(format!("bad layout entry '{t}'")));
            }
            cells[r] = (digits[0], digits[1]);
        }
        Self::new(cells)
    }

    pub fn cell(&self, row: usize) -> (usize, usize) {
        self.cells[row]
    }

    pub fn to_spec(&self) -> String {
        self.cells.iter().map(|(a, b)| format!("{a}{b}")).collect::<Vec<_>>().join(",")
    }
}

fn cell_name(a: usize, b: usize) -> String {
    format!("({}, {})", A_LABELS[a], B_LABELS[b])
}

/// `# key: value` metadata lines at the top of a data file.
fn metadata(text: &str) -> Vec<(String, String)> {
    text.lines()
        .filter_map(|l| l.trim().strip_prefix('#'))
        .filter_map(|l| l.split_once(':'))
        .map(|(k, v)| (k.trim().to_lowercase(), v.trim().to_string()))
        .collect()
}

fn meta_value(meta: &[(String, String)], key: &str) -> Option<String> {
    meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.clone())
}

fn csv_reader(text: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes())
}

fn check_header(reader: &mut csv::Reader<&[u8]>, expected: &[&str]) -> Result<()> {
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if header != expected {
        return Err(Error::input(format!(
            "expected header '{}', found '{}'",
            expected.join(","),
            header.join(",")
        )));
    }
    Ok(())
}

fn parse_number(field: &str, what: &str, line: usize) -> Result<f64> {
    field
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::input(format!("line {line}: {what} '{field}' is not a number")))
}

/// Parses a CHSH count table. `# integration_time_s: <s>` sets τ.
pub fn parse_count_table_str(text: &str, layout: &LayoutMap) -> Result<CountGrid> {
    let meta = metadata(text);
    let integration_time = match meta_value(&meta, "integration_time_s") {
        Some(v) => parse_number(&v, "integration_time_s", 0)?,
        None => 0.0,
    };
    let mut reader = csv_reader(text);
    check_header(&mut reader, &COUNT_TABLE_HEADER)?;
    let mut counts = [[0.0; 4]; 4];
    let mut settings = [[CellSetting { a_hwp: 0.0, a_qwp: 0.0, b_hwp: 0.0, b_qwp: 0.0 }; 4]; 4];
    let mut seen_angles: HashSet<[u64; 4]> = HashSet::new();
    let mut rows = 0;
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        let line = record.position().map_or(r + 2, |p| p.line() as usize);
        if r >= 16 {
            return Err(Error::input(format!("count table has more than 16 data rows (line {line})")));
        }
        if record.len() != 5 {
            return Err(Error::input(format!("line {line}: expected 5 fields, found {}", record.len())));
        }
        let angles: Vec<f64> =
            (0..4).map(|k| parse_number(&record[k], COUNT_TABLE_HEADER[k], line)).collect::<Result<_>>()?;
        let n = parse_number(&record[4], "coincidences", line)?;
        let (a, b) = layout.cell(r);
        if n < 0.0 {
            return Err(Error::input(format!("line {line}: negative count {n} for cell {}", cell_name(a, b))));
        }
        if !seen_angles.insert(std::array::from_fn(|k| angles[k].to_bits())) {
            return Err(Error::input(format!("line {line}: duplicate setting row {:?}", angles)));
        }
        counts[a][b] = n;
        settings[a][b] = CellSetting {
            a_hwp: angles[0].to_radians(),
            a_qwp: angles[1].to_radians(),
            b_hwp: angles[2].to_radians(),
            b_qwp: angles[3].to_radians(),
        };
        rows += 1;
    }
    if rows < 16 {
        let (a, b) = layout.cell(rows);
        return Err(Error::input(format!(
            "count table has {rows} data rows, expected 16; missing row {} for cell {}",
            rows + 1,
            cell_name(a, b)
        )));
    }
    Ok(CountGrid::new(counts, integration_time)?.with_settings(settings))
}

pub fn parse_count_table(path: &Path, layout: &LayoutMap) -> Result<CountGrid> {
    parse_count_table_str(&read_text(path)?, layout)
        .map_err(|e| Error::input(format!("{}: {e}", path.display())))
}

fn read_text(path: &Path) -> Result<String> {
    let mut text = String::new();
    std::fs::File::open(path)
        .map_err(|e| Error::input(format!("cannot open {}: {e}", path.display())))?
        .read_to_string(&mut text)?;
    Ok(text)
}

fn deg(rad: f64) -> f64 {
    // strip round-off so 25.9° survives a radians round trip as 25.9
    let d = rad.to_degrees();
    let rounded = (d * 1e9).round() / 1e9;
    if (rounded - d).abs() < 1e-9 { rounded } else { d }
}

/// Writes a count table in file-row order of `layout`. Requires settings.
pub fn write_count_table<W: Write>(grid: &CountGrid, layout: &LayoutMap, out: W) -> Result<()> {
    let settings = grid
        .settings
        .ok_or_else(|| Error::input("count grid has no analyzer settings to write"))?;
    let mut out = out;
    writeln!(out, "# integration_time_s: {}", grid.integration_time)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(COUNT_TABLE_HEADER)?;
    for r in 0..16 {
        let (a, b) = layout.cell(r);
        let s = settings[a][b];
        w.write_record([
            deg(s.a_hwp).to_string(),
            deg(s.a_qwp).to_string(),
            deg(s.b_hwp).to_string(),
            deg(s.b_qwp).to_string(),
            grid.get(a, b).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Plate settings realizing the CHSH analyzers with ideal plates.
pub fn ideal_cell_settings(angles: &ChshAngles) -> Result<[[CellSetting; 4]; 4]> {
    let [a, ap, b, bp] = angles.directions();
    let ideal = ArmCalibration::ideal();
    let solve = |x: f64| plates_for_linear_projection(x, &ideal).map(|s| s.setting);
    let half = std::f64::consts::FRAC_PI_2;
    let sa = [solve(a)?, solve(a + half)?, solve(ap)?, solve(ap + half)?];
    let sb = [solve(b)?, solve(b + half)?, solve(bp)?, solve(bp + half)?];
    Ok(std::array::from_fn(|i| {
        std::array::from_fn(|j| CellSetting {
            a_hwp: sa[i].hwp_angle,
            a_qwp: sa[i].qwp_angle,
            b_hwp: sb[j].hwp_angle,
            b_qwp: sb[j].qwp_angle,
        })
    }))
}

pub const CALIBRATION_HEADER: [&str; 5] =
    ["plate_id", "retardance_rad", "retardance_unc_rad", "zero_point_rad", "zero_point_unc_rad"];
const PLATE_IDS: [&str; 4] = ["signal_hwp", "signal_qwp", "idler_hwp", "idler_qwp"];

/// Reads (signal, idler) arm calibrations.
pub fn parse_calibration_str(text: &str) -> Result<(ArmCalibration, ArmCalibration)> {
    let mut reader = csv_reader(text);
    check_header(&mut reader, &CALIBRATION_HEADER)?;
    let mut plates: [Option<PlateCalibration>; 4] = [None; 4];
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        let line = r + 2;
        let id = &record[0];
        let slot = PLATE_IDS
            .iter()
            .position(|p| *p == id)
            .ok_or_else(|| Error::input(format!("line {line}: unknown plate_id '{id}'")))?;
        if plates[slot].is_some() {
            return Err(Error::input(format!("line {line}: duplicate plate_id '{id}'")));
        }
        let v: Vec<f64> =
            (1..5).map(|k| parse_number(&record[k], CALIBRATION_HEADER[k], line)).collect::<Result<_>>()?;
        plates[slot] = Some(PlateCalibration::new(v[0], v[2], v[1], v[3])?);
    }
    let get = |k: usize| plates[k].ok_or_else(|| Error::input(format!("missing plate_id '{}'", PLATE_IDS[k])));
    Ok((
        ArmCalibration { hwp: get(0)?, qwp: get(1)? },
        ArmCalibration { hwp: get(2)?, qwp: get(3)? },
    ))
}

pub fn parse_calibration(path: &Path) -> Result<(ArmCalibration, ArmCalibration)> {
    parse_calibration_str(&read_text(path)?).map_err(|e| Error::input(format!("{}: {e}", path.display())))
}

pub fn write_calibration<W: Write>(signal: &ArmCalibration, idler: &ArmCalibration, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CALIBRATION_HEADER)?;
    for (id, p) in PLATE_IDS.iter().zip([signal.hwp, signal.qwp, idler.hwp, idler.qwp]) {
        w.write_record([
            id.to_string(),
            p.retardance.to_string(),
            p.retardance_uncertainty.to_string(),
            p.zero_point.to_string(),
            p.zero_point_uncertainty.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub const TOMO_HEADER: [&str; 3] = ["label_a", "label_b", "counts"];

/// Reads 16 tomography counts aligned to `settings`. `# flux: <N·τ>` is optional.
pub fn parse_tomo_counts_str(text: &str, settings: &TomoSettings) -> Result<TomoCounts> {
    let flux = match meta_value(&metadata(text), "flux") {
        Some(v) => parse_number(&v, "flux", 0)?,
        None => 0.0,
    };
    let mut reader = csv_reader(text);
    check_header(&mut reader, &TOMO_HEADER)?;
    let mut counts = [f64::NAN; 16];
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        let line = r + 2;
        let k = settings
            .index_of(&record[0], &record[1])
            .ok_or_else(|| Error::input(format!("line {line}: unknown setting ({}, {})", &record[0], &record[1])))?;
        if !counts[k].is_nan() {
            return Err(Error::input(format!("line {line}: duplicate setting ({}, {})", &record[0], &record[1])));
        }
        let n = parse_number(&record[2], "counts", line)?;
        if n < 0.0 {
            return Err(Error::input(format!("line {line}: negative count {n}")));
        }
        counts[k] = n;
    }
    if let Some(k) = counts.iter().position(|n| n.is_nan()) {
        let (a, b) = &settings.labels()[k];
        return Err(Error::input(format!("missing tomography setting ({a}, {b})")));
    }
    TomoCounts::new(counts, flux)
}

pub fn parse_tomo_counts(path: &Path, settings: &TomoSettings) -> Result<TomoCounts> {
    parse_tomo_counts_str(&read_text(path)?, settings).map_err(|e| Error::input(format!("{}: {e}", path.display())))
}

pub fn write_tomo_counts<W: Write>(counts: &TomoCounts, settings: &TomoSettings, out: W) -> Result<()> {
    let mut out = out;
    writeln!(out, "# flux: {}", counts.flux)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TOMO_HEADER)?;
    for (k, (a, b)) in settings.labels().iter().enumerate() {
        w.write_record([a.clone(), b.clone(), counts.counts()[k].to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub const STOKES_HEADER: [&str; 5] = ["plate_angle_deg", "s0", "s1", "s2", "s3"];

/// A Stokes scan of one plate. Metadata: `# plate: hwp|qwp` (nominal
/// retardance π or π/2) and `# input: H|V|D|R` (default H).
#[derive(Debug, Clone, PartialEq)]
pub struct StokesScan {
    pub samples: Vec<StokesSample>,
    pub nominal_retardance: f64,
    pub input: Ket2,
    pub input_label: String,
}

pub fn polarization_ket(label: &str) -> Result<Ket2> {
    match label.to_uppercase().as_str() {
        "H" => Ok(ket_h()),
        "V" => Ok(ket_v()),
        "D" => Ok(ket_linear(std::f64::consts::FRAC_PI_4)),
        "R" => Ok(ket_right()),
        other => Err(Error::input(format!("unknown polarization label '{other}'"))),
    }
}

pub fn parse_stokes_str(text: &str) -> Result<StokesScan> {
    let meta = metadata(text);
    let plate = meta_value(&meta, "plate").unwrap_or_else(|| "hwp".into()).to_lowercase();
    let nominal_retardance = match plate.as_str() {
        "hwp" => std::f64::consts::PI,
        "qwp" => std::f64::consts::FRAC_PI_2,
        other => return Err(Error::input(format!("plate must be hwp or qwp, got '{other}'"))),
    };
    let input_label = meta_value(&meta, "input").unwrap_or_else(|| "H".into()).to_uppercase();
    let input = polarization_ket(&input_label)?;
    let mut reader = csv_reader(text);
    check_header(&mut reader, &STOKES_HEADER)?;
    let mut samples = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        let line = r + 2;
        let v: Vec<f64> = (0..5).map(|k| parse_number(&record[k], STOKES_HEADER[k], line)).collect::<Result<_>>()?;
        samples.push(
            StokesSample::new(v[0].to_radians(), [v[1], v[2], v[3], v[4]])
                .map_err(|e| Error::input(format!("line {line}: {e}")))?,
        );
    }
    Ok(StokesScan { samples, nominal_retardance, input, input_label })
}

pub fn parse_stokes(path: &Path) -> Result<StokesScan> {
    parse_stokes_str(&read_text(path)?).map_err(|e| Error::input(format!("{}: {e}", path.display())))
}

pub fn write_stokes<W: Write>(samples: &[StokesSample], plate: &str, input: &str, out: W) -> Result<()> {
    let mut out = out;
    writeln!(out, "# plate: {plate}")?;
    writeln!(out, "# input: {input}")?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(STOKES_HEADER)?;
    for s in samples {
        let [s0, s1, s2, s3] = s.stokes;
        w.write_record([s.plate_angle.to_degrees(), s0, s1, s2, s3].map(|x| x.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SourceConfig {
    pub balance: f64,
    pub phase_rad: f64,
    pub crystal_offset_mm: f64,
    pub multipair_ratio: Option<f64>,
    /// Singles and coincidence rates (1/s); when given, η and p follow from them.
    pub singles_a: Option<f64>,
    pub singles_b: Option<f64>,
    pub coincidences: Option<f64>,
    pub eta_a: Option<f64>,
    pub eta_b: Option<f64>,
    pub coincidence_window_ps: f64,
    pub crystal_length_mm: f64,
    pub time_step_ps: f64,
}

impl Default for SourceConfig {
    fn default() -> Self {
        let g = CrystalGeometry::default();
        Self {
            balance: 1.0,
            phase_rad: 0.0,
            crystal_offset_mm: 0.0,
            multipair_ratio: None,
            singles_a: None,
            singles_b: None,
            coincidences: None,
            eta_a: None,
            eta_b: None,
            coincidence_window_ps: 96.0,
            crystal_length_mm: g.length_mm,
            time_step_ps: g.time_step_ps,
        }
    }
}

impl SourceConfig {
    pub fn to_params(&self) -> Result<SourceParams> {
        let geometry = CrystalGeometry {
            length_mm: self.crystal_length_mm,
            time_step_ps: self.time_step_ps,
            ..CrystalGeometry::default()
        };
        let mut params = SourceParams {
            balance: self.balance,
            phase: self.phase_rad,
            crystal_offset_mm: self.crystal_offset_mm,
            coincidence_window_ps: self.coincidence_window_ps,
            geometry,
            ..SourceParams::default()
        };
        match (self.singles_a, self.singles_b, self.coincidences) {
            (Some(a), Some(b), Some(c)) => {
                let mp = multipair_params_from_rates(a, b, c, self.coincidence_window_ps)?;
                params.eta_a = mp.eta_a;
                params.eta_b = mp.eta_b;
                params.multipair_ratio = mp.ratio;
            }
            (None, None, None) => {}
            _ => return Err(Error::input("singles_a, singles_b and coincidences must be given together")),
        }
        if let Some(p) = self.multipair_ratio {
            params.multipair_ratio = p;
        }
        if let Some(e) = self.eta_a {
            params.eta_a = e;
        }
        if let Some(e) = self.eta_b {
            params.eta_b = e;
        }
        params.validate()?;
        Ok(params)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub pair_rate: f64,
    pub integration_time_s: f64,
    pub repetitions: usize,
    /// Analyzer directions (a, a′, b, b′) in degrees.
    pub angles_deg: Option<[f64; 4]>,
    /// "ideal" (pure Ψ⁻) or "source" (state from [source], with accidentals).
    pub truth: String,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            pair_rate: 4100.0,
            integration_time_s: 60.0,
            repetitions: 25,
            angles_deg: None,
            truth: "ideal".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlateConfig {
    pub setting_error_deg: f64,
    /// "gaussian" or "uniform".
    pub distribution: String,
    /// "hwp_only" or "both" for the CHSH projections.
    pub chsh_errors: String,
    /// Calibration CSV, relative to the config file; the built-in measured calibration when absent.
    pub calibration: Option<PathBuf>,
    pub trials: usize,
}

impl Default for PlateConfig {
    fn default() -> Self {
        Self {
            setting_error_deg: 0.1,
            distribution: "gaussian".into(),
            chsh_errors: "hwp_only".into(),
            calibration: None,
            trials: 4000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub balance: Option<Vec<f64>>,
    pub crystal_offset: Option<Vec<f64>>,
    pub multipair: Option<Vec<f64>>,
    pub plate_setting: Option<Vec<f64>>,
    pub plate_calibration: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TomographyConfig {
    /// Expected pairs per setting.
    pub flux: f64,
    pub trials: usize,
}

impl Default for TomographyConfig {
    fn default() -> Self {
        Self { flux: 1e4, trials: 1000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub source: SourceConfig,
    pub experiment: ExperimentConfig,
    pub plates: PlateConfig,
    pub sweep: SweepConfig,
    pub tomography: TomographyConfig,
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg = Self::from_toml_str(&read_text(path)?)
            .map_err(|e| Error::input(format!("{}: {e}", path.display())))?;
        cfg.base_dir = path.parent().map(Path::to_path_buf);
        Ok(cfg)
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config is serializable")
    }

    pub fn distribution(&self) -> Result<PlateErrorDistribution> {
        match self.plates.distribution.to_lowercase().as_str() {
            "gaussian" | "normal" => Ok(PlateErrorDistribution::Gaussian),
            "uniform" => Ok(PlateErrorDistribution::Uniform),
            other => Err(Error::input(format!("unknown plate error distribution '{other}'"))),
        }
    }

    pub fn chsh_plate_errors(&self) -> Result<ChshPlateErrors> {
        match self.plates.chsh_errors.to_lowercase().as_str() {
            "hwp_only" | "hwp" => Ok(ChshPlateErrors::HalfWaveOnly),
            "both" => Ok(ChshPlateErrors::BothPlates),
            other => Err(Error::input(format!("unknown chsh_errors '{other}'"))),
        }
    }

    pub fn calibration(&self) -> Result<(ArmCalibration, ArmCalibration)> {
        match &self.plates.calibration {
            None => Ok(measured_calibration()),
            Some(p) => {
                let path = match (&self.base_dir, p.is_relative()) {
                    (Some(dir), true) => dir.join(p),
                    _ => p.clone(),
                };
                parse_calibration(&path)
            }
        }
    }

    pub fn angles(&self) -> ChshAngles {
        match self.experiment.angles_deg {
            Some([a, ap, b, bp]) => {
                ChshAngles::from_directions(a.to_radians(), ap.to_radians(), b.to_radians(), bp.to_radians())
            }
            None => ChshAngles::canonical(),
        }
    }

    pub fn experiment_plan(&self) -> Result<ExperimentPlan> {
        let source = match self.experiment.truth.to_lowercase().as_str() {
            "ideal" => StateSource::Explicit(crate::qstate::bell_psi_minus().density()),
            "source" => StateSource::Params(self.source.to_params()?),
            other => return Err(Error::input(format!("truth must be 'ideal' or 'source', got '{other}'"))),
        };
        let plan = ExperimentPlan {
            source,
            angles: self.angles(),
            pair_rate: self.experiment.pair_rate,
            integration_time: self.experiment.integration_time_s,
            repetitions: self.experiment.repetitions,
            seed: self.seed,
            efficiency: [[1.0; 4]; 4],
            accidentals: None,
        };
        plan.validate()?;
        Ok(plan)
    }

    pub fn sweep_options(&self) -> Result<SweepOptions> {
        let params = self.source.to_params()?;
        let (signal_arm, idler_arm) = self.calibration()?;
        Ok(SweepOptions {
            trials: self.plates.trials,
            seed: self.seed,
            distribution: self.distribution()?,
            chsh_plate_errors: self.chsh_plate_errors()?,
            eta_a: params.eta_a,
            eta_b: params.eta_b,
            signal_arm,
            idler_arm,
            geometry: params.geometry,
        })
    }

    pub fn budget_inputs(&self) -> Result<BudgetInputs> {
        let (signal_arm, idler_arm) = self.calibration()?;
        Ok(BudgetInputs {
            source: self.source.to_params()?,
            signal_arm,
            idler_arm,
            plate_error_deg: self.plates.setting_error_deg,
            trials: self.plates.trials,
            seed: self.seed,
            distribution: self.distribution()?,
            chsh_plate_errors: self.chsh_plate_errors()?,
        })
    }

    pub fn accidentals(&self) -> Result<Accidentals> {
        let p = self.source.to_params()?;
        Ok(Accidentals { ratio: p.multipair_ratio, eta_a: p.eta_a, eta_b: p.eta_b })
    }
}
