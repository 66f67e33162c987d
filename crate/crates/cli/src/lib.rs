//! `sagnac` command line: count-table analysis, CHSH campaigns, tomography,
//! error sweeps, the error budget and wave-plate fits.
//!
//! Every artifact carries the seed and the effective configuration so it can
//! be regenerated from its own header.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use sagnac_core::chsh::{s_from_count_grid, SResult, TSIRELSON};
use sagnac_core::expsim::{
    error_budget, run_chsh_campaign, simulate_tomo_counts, sweep_error_source, ErrorSource, SweepPoint,
};
use sagnac_core::io::{
    ideal_cell_settings, parse_count_table, parse_stokes, parse_tomo_counts, write_count_table, LayoutMap, RunConfig,
};
use sagnac_core::polarization::fit_waveplate;
use sagnac_core::qstate::DensityMatrix;
use sagnac_core::source::combined_source_state;
use sagnac_core::tomography::{
    linear_inversion, mle_reconstruct, monte_carlo_metrics, standard_tomo_settings, state_metrics, MonteCarloOptions,
    Summary, TomoCounts,
};
use sagnac_core::{Error, Result};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Parser)]
#[command(name = "sagnac", version, about = "Entangled-photon source simulation and analysis")]
struct Cli {
    /// Seed for all random streams (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for artifacts; without it the report goes to stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
    /// Monte-Carlo trials (overrides the config).
    #[arg(long, global = true)]
    trials: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// S, ΔS and the four correlators from a 16-row count table.
    AnalyzeCounts {
        file: PathBuf,
        /// Row-to-cell map, 16 comma-separated "AB" digit pairs.
        #[arg(long)]
        layout: Option<String>,
    },
    /// Repeated CHSH measurements of the configured state.
    SimulateChsh { config: PathBuf },
    /// Linear inversion, MLE and Monte-Carlo metrics from a counts CSV or a config.
    Tomography {
        input: PathBuf,
        /// Pairs per setting when simulating from a config.
        #[arg(long)]
        flux: Option<f64>,
    },
    /// Fidelity, concurrence and 2√2 − |S| against one error parameter.
    Sweep {
        source: String,
        config: PathBuf,
        /// Parameter values, overriding the config grid.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        values: Option<Vec<f64>>,
    },
    /// Contribution of each error source to 2√2 − |S|.
    Budget { config: PathBuf },
    /// Retardance and zero point from a Stokes scan.
    FitWaveplate { file: PathBuf },
}

/// A CSV artifact: file stem, header, rows.
struct Table {
    name: String,
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn new(name: impl Into<String>, header: &[&str]) -> Self {
        Self { name: name.into(), header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    fn push(&mut self, row: Vec<String>) {
        self.rows.push(row);
    }

    fn render(&self, preamble: &str) -> Result<String> {
        let mut w = csv::Writer::from_writer(preamble.as_bytes().to_vec());
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

/// What a subcommand produced.
struct Report {
    stem: String,
    headline: Vec<String>,
    json: Value,
    tables: Vec<Table>,
    /// Files written regardless of format (e.g. count tables).
    extra_files: Vec<(String, String)>,
}

fn num(x: f64) -> String {
    x.to_string()
}

fn provenance(seed: Option<u64>, config: &Value) -> String {
    let seed = seed.map_or("none".to_string(), |s| s.to_string());
    format!("# seed: {seed}\n# config: {config}\n")
}

/// Runs the command line and returns the process exit code.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_command_with(argv, &mut stdout.lock(), &mut stderr.lock())
}

/// As [`run_command`], writing to the given streams.
pub fn run_command_with<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() { write!(err, "{text}") } else { write!(out, "{text}") };
            return code;
        }
    };
    match execute(&cli).and_then(|report| emit(&cli, &report, out)) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

/// 3 for numerical failures (non-convergence, singular problems), 2 otherwise.
pub fn exit_code(e: &Error) -> i32 {
    if e.is_numerical() {
        EXIT_NUMERICAL
    } else {
        EXIT_INPUT
    }
}

fn execute(cli: &Cli) -> Result<Report> {
    match &cli.command {
        Command::AnalyzeCounts { file, layout } => analyze_counts(cli, file, layout.as_deref()),
        Command::SimulateChsh { config } => simulate_chsh(cli, config),
        Command::Tomography { input, flux } => tomography(cli, input, *flux),
        Command::Sweep { source, config, values } => sweep(cli, source, config, values.as_deref()),
        Command::Budget { config } => budget(cli, config),
        Command::FitWaveplate { file } => fit(cli, file),
    }
}

fn emit(cli: &Cli, report: &Report, out: &mut dyn Write) -> Result<()> {
    let seed = report.json.get("seed").and_then(Value::as_u64);
    let preamble = {
        let mut p = provenance(seed, &report.json["config"]);
        for h in &report.headline {
            p.push_str(&format!("# {h}\n"));
        }
        p
    };
    match &cli.out {
        None => match cli.format {
            Format::Json => writeln!(out, "{}", serde_json::to_string_pretty(&report.json)?)?,
            Format::Csv => {
                for (k, t) in report.tables.iter().enumerate() {
                    if k > 0 {
                        writeln!(out)?;
                    }
                    write!(out, "{}", t.render(&preamble)?)?;
                }
            }
        },
        Some(dir) => {
            std::fs::create_dir_all(dir)
                .map_err(|e| Error::Input(format!("cannot create {}: {e}", dir.display())))?;
            let mut written = Vec::new();
            let mut put = |name: &str, text: &str| -> Result<()> {
                let path = dir.join(name);
                std::fs::write(&path, text)
                    .map_err(|e| Error::Input(format!("cannot write {}: {e}", path.display())))?;
                written.push(path);
                Ok(())
            };
            match cli.format {
                Format::Json => put(&format!("{}.json", report.stem), &serde_json::to_string_pretty(&report.json)?)?,
                Format::Csv => {
                    for t in &report.tables {
                        put(&format!("{}.csv", t.name), &t.render(&preamble)?)?;
                    }
                    let summary = summary_json(&report.json);
                    put(&format!("{}.summary.json", report.stem), &serde_json::to_string_pretty(&summary)?)?;
                }
            }
            for (name, text) in &report.extra_files {
                put(name, text)?;
            }
            for h in &report.headline {
                writeln!(out, "{h}")?;
            }
            for p in written {
                writeln!(out, "wrote {}", p.display())?;
            }
        }
    }
    Ok(())
}

/// The report without its bulky arrays.
fn summary_json(full: &Value) -> Value {
    match full {
        Value::Object(map) => Value::Object(
            map.iter()
                .filter(|(_, v)| !matches!(v, Value::Array(a) if a.len() > 16))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        ),
        other => other.clone(),
    }
}

fn load_config(cli: &Cli, path: &Path) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(trials) = cli.trials {
        cfg.plates.trials = trials;
        cfg.tomography.trials = trials;
    }
    Ok(cfg)
}

fn config_echo(cfg: &RunConfig, path: &Path) -> Value {
    let mut v = cfg.to_json();
    v["path"] = json!(path.display().to_string());
    v
}

fn s_json(r: &SResult) -> Value {
    json!({
        "s": r.s,
        "abs_s": r.abs_s(),
        "delta_s": r.delta_s,
        "tsirelson_gap": r.tsirelson_gap(),
        "e": r.e,
        "delta_e": r.delta_e,
        "total_counts": r.total_counts,
    })
}

/// "2√2 − S = 5.65e-3 ± 5.7e-4", using |S|.
pub fn headline(r: &SResult) -> String {
    format!("2√2 − S = {:.2e} ± {:.1e}", r.tsirelson_gap(), r.delta_s)
}

fn s_lines(r: &SResult) -> Vec<String> {
    vec![
        format!("S = {:.6} (|S| = {:.6} ± {:.6})", r.s, r.abs_s(), r.delta_s),
        headline(r),
        format!("total counts = {}", r.total_counts),
    ]
}

fn s_table(name: &str, r: &SResult) -> Table {
    let mut t = Table::new(name, &["quantity", "value", "uncertainty"]);
    t.push(vec!["S".into(), num(r.s), num(r.delta_s)]);
    t.push(vec!["abs_S".into(), num(r.abs_s()), num(r.delta_s)]);
    t.push(vec!["tsirelson_gap".into(), num(r.tsirelson_gap()), num(r.delta_s)]);
    for i in 0..4 {
        t.push(vec![format!("E{i}"), num(r.e[i]), num(r.delta_e[i])]);
    }
    t.push(vec!["total_counts".into(), num(r.total_counts), String::new()]);
    t
}

fn analyze_counts(cli: &Cli, file: &Path, layout: Option<&str>) -> Result<Report> {
    let layout = match layout {
        Some(spec) => LayoutMap::parse(spec)?,
        None => LayoutMap::default(),
    };
    let grid = parse_count_table(file, &layout)?;
    let r = s_from_count_grid(&grid)?;
    let mut json = s_json(&r);
    json["command"] = json!("analyze-counts");
    json["seed"] = json!(cli.seed);
    json["config"] = json!({ "file": file.display().to_string(), "layout": layout.to_spec() });
    json["integration_time_s"] = json!(grid.integration_time);
    json["headline"] = json!(headline(&r));
    Ok(Report {
        stem: "analysis".into(),
        headline: s_lines(&r),
        json,
        tables: vec![s_table("analysis", &r)],
        extra_files: Vec::new(),
    })
}

fn simulate_chsh(cli: &Cli, config: &Path) -> Result<Report> {
    let cfg = load_config(cli, config)?;
    let mut plan = cfg.experiment_plan()?;
    if cfg.experiment.truth.eq_ignore_ascii_case("source") {
        plan.accidentals = Some(cfg.accidentals()?);
    }
    let campaign = run_chsh_campaign(&plan)?;
    let echo = config_echo(&cfg, config);
    let pooled = campaign.pooled_counts.clone().with_settings(ideal_cell_settings(&plan.angles)?);
    let layout = LayoutMap::default();
    let mut counts_csv = provenance(Some(cfg.seed), &echo).into_bytes();
    write_count_table(&pooled, &layout, &mut counts_csv)?;
    let counts_csv = String::from_utf8(counts_csv).expect("csv output is utf-8");

    let mut reps = Table::new("repetitions", &["repetition", "s", "abs_s", "delta_s", "tsirelson_gap"]);
    for (k, r) in campaign.repetitions.iter().enumerate() {
        reps.push(vec![k.to_string(), num(r.s), num(r.abs_s()), num(r.delta_s), num(r.tsirelson_gap())]);
    }
    let exceeding = campaign.repetitions.iter().filter(|r| r.abs_s() > TSIRELSON).count();
    let fraction = exceeding as f64 / campaign.repetitions.len() as f64;
    let json = json!({
        "command": "simulate-chsh",
        "seed": cfg.seed,
        "config": echo,
        "pooled": s_json(&campaign.pooled),
        "headline": headline(&campaign.pooled),
        "scatter_abs_s": campaign.scatter,
        "fraction_above_tsirelson": fraction,
        "pooled_counts": campaign.pooled_counts.counts(),
        "repetitions": campaign.repetitions.iter().map(s_json).collect::<Vec<_>>(),
    });
    let mut headline_lines = s_lines(&campaign.pooled);
    headline_lines.push(format!(
        "repetitions = {}, scatter of |S| = {:.2e}, above 2√2: {exceeding}",
        campaign.repetitions.len(),
        campaign.scatter
    ));
    Ok(Report {
        stem: "chsh".into(),
        headline: headline_lines,
        json,
        tables: vec![s_table("chsh_pooled", &campaign.pooled), reps],
        extra_files: vec![("counts.csv".into(), counts_csv)],
    })
}

fn matrix_json(rho: &DensityMatrix) -> Value {
    let m = rho.matrix();
    json!({
        "re": (0..4).map(|i| (0..4).map(|j| m[(i, j)].re).collect::<Vec<_>>()).collect::<Vec<_>>(),
        "im": (0..4).map(|i| (0..4).map(|j| m[(i, j)].im).collect::<Vec<_>>()).collect::<Vec<_>>(),
    })
}

fn metrics_json(rho: &DensityMatrix) -> Value {
    match state_metrics(rho) {
        Ok((f, c, s)) => json!({ "fidelity": f, "concurrence": c, "abs_s": s, "min_eigenvalue": rho.min_eigenvalue() }),
        Err(_) => json!({ "min_eigenvalue": rho.min_eigenvalue() }),
    }
}

fn summary_value(s: &Summary) -> Value {
    json!({ "mean": s.mean, "std": s.std, "median": s.median })
}

fn tomography(cli: &Cli, input: &Path, flux: Option<f64>) -> Result<Report> {
    let settings = standard_tomo_settings();
    let is_config = input.extension().is_some_and(|e| e == "toml");
    let (counts, seed, trials, echo, truth): (TomoCounts, u64, usize, Value, Option<DensityMatrix>) = if is_config {
        let cfg = load_config(cli, input)?;
        let rho = combined_source_state(&cfg.source.to_params()?)?;
        let flux = flux.unwrap_or(cfg.tomography.flux);
        let counts = simulate_tomo_counts(&rho, &settings, flux, cfg.seed)?;
        let mut echo = config_echo(&cfg, input);
        echo["tomography"]["flux"] = json!(flux);
        (counts, cfg.seed, cfg.tomography.trials, echo, Some(rho))
    } else {
        let counts = parse_tomo_counts(input, &settings)?;
        let seed = cli.seed.unwrap_or(0);
        let trials = cli.trials.unwrap_or(1000);
        (counts, seed, trials, json!({ "file": input.display().to_string(), "trials": trials }), None)
    };
    let linear = linear_inversion(&counts, &settings)?;
    let mle = mle_reconstruct(&counts, &settings)?;
    let mc = monte_carlo_metrics(&counts, &settings, &MonteCarloOptions { trials, seed, resample: true })?;

    let mut metrics = Table::new("tomography_metrics", &["method", "fidelity", "concurrence", "abs_s", "min_eigenvalue"]);
    let mut row = |name: &str, rho: &DensityMatrix| {
        let (f, c, s) = state_metrics(rho).map_or((f64::NAN, f64::NAN, f64::NAN), |m| m);
        metrics.push(vec![name.into(), num(f), num(c), num(s), num(rho.min_eigenvalue())]);
    };
    row("linear", &linear);
    row("mle", &mle);
    if let Some(t) = &truth {
        row("truth", t);
    }
    let mut density = Table::new("density_mle", &["row", "col", "re", "im"]);
    for i in 0..4 {
        for j in 0..4 {
            let z = mle.matrix()[(i, j)];
            density.push(vec![i.to_string(), j.to_string(), num(z.re), num(z.im)]);
        }
    }
    let mut trials_table = Table::new("tomography_trials", &["trial", "fidelity", "concurrence", "abs_s"]);
    for k in 0..mc.fidelity.len() {
        trials_table.push(vec![k.to_string(), num(mc.fidelity[k]), num(mc.concurrence[k]), num(mc.abs_s[k])]);
    }
    let json = json!({
        "command": "tomography",
        "seed": seed,
        "config": echo,
        "counts": counts.counts(),
        "condition_number": settings.condition_number(),
        "linear": { "metrics": metrics_json(&linear), "rho": matrix_json(&linear) },
        "mle": { "metrics": metrics_json(&mle), "rho": matrix_json(&mle) },
        "truth": truth.as_ref().map(|t| json!({ "metrics": metrics_json(t), "rho": matrix_json(t) })),
        "monte_carlo": {
            "trials": trials,
            "failed": mc.failed,
            "fidelity": summary_value(&mc.fidelity_summary),
            "concurrence": summary_value(&mc.concurrence_summary),
            "abs_s": summary_value(&mc.abs_s_summary),
        },
    });
    let (f, c, _) = state_metrics(&mle)?;
    let headline = vec![
        format!("MLE fidelity = {f:.5} ± {:.1e}", mc.fidelity_summary.std),
        format!("MLE concurrence = {c:.5} ± {:.1e}", mc.concurrence_summary.std),
        format!("linear inversion min eigenvalue = {:.3e}", linear.min_eigenvalue()),
    ];
    Ok(Report {
        stem: "tomography".into(),
        headline,
        json,
        tables: vec![metrics, density, trials_table],
        extra_files: Vec::new(),
    })
}

fn default_grid(source: ErrorSource) -> Vec<f64> {
    let lin = |a: f64, b: f64, n: usize| (0..n).map(|k| a + (b - a) * k as f64 / (n - 1) as f64).collect::<Vec<_>>();
    match source {
        ErrorSource::Balance => lin(0.8, 1.2, 21),
        ErrorSource::CrystalOffset => lin(-2.0, 2.0, 21),
        ErrorSource::Multipair => lin(0.0, 5e-5, 11),
        ErrorSource::PlateSetting => lin(0.0, 0.5, 6),
        ErrorSource::PlateCalibration => lin(0.0, 2.0, 5),
    }
}

fn sweep(cli: &Cli, source: &str, config: &Path, values: Option<&[f64]>) -> Result<Report> {
    let source = ErrorSource::parse(source)?;
    let cfg = load_config(cli, config)?;
    let grid = match values {
        Some(v) => v.to_vec(),
        None => {
            let s = &cfg.sweep;
            match source {
                ErrorSource::Balance => s.balance.clone(),
                ErrorSource::CrystalOffset => s.crystal_offset.clone(),
                ErrorSource::Multipair => s.multipair.clone(),
                ErrorSource::PlateSetting => s.plate_setting.clone(),
                ErrorSource::PlateCalibration => s.plate_calibration.clone(),
            }
            .unwrap_or_else(|| default_grid(source))
        }
    };
    if grid.is_empty() {
        return Err(Error::Input("sweep needs at least one parameter value".into()));
    }
    let points = sweep_error_source(source, &grid, &cfg.sweep_options()?)?;
    let name = format!("sweep_{}", source.name());
    let mut table = Table::new(&name, &["parameter", "fidelity", "concurrence", "tsirelson_gap", "std_err"]);
    for p in &points {
        table.push(vec![num(p.parameter), num(p.fidelity), num(p.concurrence), num(p.tsirelson_gap), num(p.std_err)]);
    }
    let point_json = |p: &SweepPoint| {
        json!({ "parameter": p.parameter, "fidelity": p.fidelity, "concurrence": p.concurrence,
                "tsirelson_gap": p.tsirelson_gap, "std_err": p.std_err })
    };
    let gaps: Vec<f64> = points.iter().map(|p| p.tsirelson_gap).collect();
    let max_gap = gaps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min_gap = gaps.iter().copied().fold(f64::INFINITY, f64::min);
    let json = json!({
        "command": "sweep",
        "seed": cfg.seed,
        "config": config_echo(&cfg, config),
        "source": source.name(),
        "parameter": source.parameter_unit(),
        "monte_carlo": source.is_monte_carlo(),
        "n_points": points.len(),
        "min_tsirelson_gap": min_gap,
        "max_tsirelson_gap": max_gap,
        "points": points.iter().map(point_json).collect::<Vec<_>>(),
    });
    Ok(Report {
        stem: name.clone(),
        headline: vec![format!(
            "{} sweep over {} points: 2√2 − |S| from {min_gap:.3e} to {max_gap:.3e}",
            source.name(),
            points.len()
        )],
        json,
        tables: vec![table],
        extra_files: Vec::new(),
    })
}

fn budget(cli: &Cli, config: &Path) -> Result<Report> {
    let cfg = load_config(cli, config)?;
    let b = error_budget(&cfg.budget_inputs()?)?;
    let mut table = Table::new("budget", &["error_source", "parameter", "delta_s", "std_err"]);
    for e in &b.entries {
        table.push(vec![e.label.into(), e.parameter.clone(), num(e.delta_s), num(e.std_err)]);
    }
    let total_err = b.entries.iter().map(|e| e.std_err * e.std_err).sum::<f64>().sqrt();
    table.push(vec!["Total".into(), String::new(), num(b.total), num(total_err)]);
    let mut headline: Vec<String> =
        b.entries.iter().map(|e| format!("{:<26} {:<28} ΔS = {:.2e}", e.label, e.parameter, e.delta_s)).collect();
    headline.push(format!("{:<26} {:<28} ΔS = {:.2e}", "Total", "", b.total));
    let json = json!({
        "command": "budget",
        "seed": cfg.seed,
        "config": config_echo(&cfg, config),
        "entries": b.entries.iter().map(|e| json!({
            "source": e.source.name(), "label": e.label, "parameter": e.parameter,
            "delta_s": e.delta_s, "std_err": e.std_err,
        })).collect::<Vec<_>>(),
        "total": b.total,
        "total_std_err": total_err,
    });
    Ok(Report { stem: "budget".into(), headline, json, tables: vec![table], extra_files: Vec::new() })
}

fn fit(cli: &Cli, file: &Path) -> Result<Report> {
    let scan = parse_stokes(file)?;
    let fit = fit_waveplate(&scan.samples, &scan.input, scan.nominal_retardance)?;
    let cal = fit.calibration;
    let plate = if scan.nominal_retardance > 2.0 { "hwp" } else { "qwp" };
    let mut table = Table::new(
        "waveplate_fit",
        &["plate_id", "retardance_rad", "retardance_unc_rad", "zero_point_rad", "zero_point_unc_rad"],
    );
    table.push(vec![
        format!("fitted_{plate}"),
        num(cal.retardance),
        num(cal.retardance_uncertainty),
        num(cal.zero_point),
        num(cal.zero_point_uncertainty),
    ]);
    let json = json!({
        "command": "fit-waveplate",
        "seed": cli.seed,
        "config": { "file": file.display().to_string(), "plate": plate, "input": scan.input_label, "samples": scan.samples.len() },
        "retardance_rad": cal.retardance,
        "retardance_unc_rad": cal.retardance_uncertainty,
        "retardance_over_nominal": cal.retardance / scan.nominal_retardance,
        "zero_point_rad": cal.zero_point,
        "zero_point_unc_rad": cal.zero_point_uncertainty,
        "zero_point_deg": cal.zero_point.to_degrees(),
        "residual": fit.residual,
        "iterations": fit.iterations,
    });
    let headline = vec![
        format!(
            "retardance = {:.5} × nominal ± {:.1e}",
            cal.retardance / scan.nominal_retardance,
            cal.retardance_uncertainty / scan.nominal_retardance
        ),
        format!("zero point = {:.4}° ± {:.1e}°", cal.zero_point.to_degrees(), cal.zero_point_uncertainty.to_degrees()),
    ];
    Ok(Report { stem: "waveplate_fit".into(), headline, json, tables: vec![table], extra_files: Vec::new() })
}
