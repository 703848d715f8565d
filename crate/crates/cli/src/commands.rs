//! Subcommand definitions and their implementations.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use superbunch::analytic::{evaluate_curve, ModelKind};
use superbunch::correlator::compare_curves;
use superbunch::fitting::{extract_report, fit, FitError, FitModel, FitOptions, Weighting};
use superbunch::model::{degrees_from_angle, G2Curve};
use superbunch::scenario::{builtin_scenarios, scenario_by_name};
use superbunch::speckle::{run_simulation, McRunConfig};

use crate::config::{CliConfig, WORKERS_ENV};
use crate::csvio::{key_value_lines, read_curve, write_curve};
use crate::plot::{render_svg, Series};
use crate::report::{render_comparison, render_fit_report};
use crate::units::{parse_angle, parse_length};

#[derive(Debug, Parser)]
#[command(name = "superbunch", version, about = "Super-bunching g2 models, speckle Monte Carlo and fitting")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Evaluate a closed-form g2 model on a grid and write it as CSV.
    Analytic(AnalyticArgs),
    /// Run the speckle Monte Carlo and write the estimated g2 as CSV.
    Simulate(SimulateArgs),
    /// Fit a model to a g2 curve and write a report.
    Fit(FitArgs),
    /// Compare two curves point by point; exits with status 1 when max|z| > 4.
    Compare(CompareArgs),
    /// Render curves to an SVG plot.
    Plot(PlotArgs),
    /// List the builtin scenarios, or run one against its closed-form reference.
    Scenario(ScenarioArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelArg {
    Hbt,
    Fringe,
    Scanned,
    Cascade,
}

impl From<ModelArg> for ModelKind {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::Hbt => ModelKind::Hbt,
            ModelArg::Fringe => ModelKind::Fringe,
            ModelArg::Scanned => ModelKind::Scanned,
            ModelArg::Cascade => ModelKind::Cascade,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum WeightingArg {
    /// Weight by the data standard errors when all are positive.
    Auto,
    Se,
    None,
}

#[derive(Debug, Args)]
pub struct AnalyticArgs {
    #[arg(long, value_enum)]
    pub model: ModelArg,
    /// TOML file with the same keys as the flags; flags win.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub params: CliConfig,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Start from a builtin scenario; other flags override its values.
    #[arg(long)]
    pub scenario: Option<String>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub params: CliConfig,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Curve CSV to fit.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum)]
    pub model: ModelArg,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Fixed values and starting points; the grid comes from the data.
    #[command(flatten)]
    pub params: CliConfig,
    /// Comma-separated free parameters, e.g. R,theta0.
    #[arg(long, default_value = "R")]
    pub free: String,
    /// Parameter value NAME=VALUE, e.g. beta_env=0.7 or R=300um; repeatable.
    #[arg(long = "set", value_name = "NAME=VALUE")]
    pub set: Vec<String>,
    #[arg(long, value_enum, default_value_t = WeightingArg::Auto)]
    pub weighting: WeightingArg,
    /// Skip the coarse grid scan that precedes the descent.
    #[arg(long)]
    pub no_prescan: bool,
    #[arg(long, default_value_t = 500)]
    pub max_iterations: usize,
    /// Report path.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the fitted curve on the data grid.
    #[arg(long)]
    pub curve: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    pub a: PathBuf,
    pub b: PathBuf,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    #[arg(required = true)]
    pub curves: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ScenarioArgs {
    /// Scenario to run; lists the scenarios when omitted.
    pub name: Option<String>,
    /// Monte Carlo curve CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Closed-form reference CSV.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// SVG overlay of both curves.
    #[arg(long)]
    pub plot: Option<PathBuf>,
    #[arg(long)]
    pub realizations: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub workers: Option<usize>,
}

/// Runs a command; the value is the process exit status.
pub fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Analytic(a) => cmd_analytic(&a),
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Fit(a) => cmd_fit(&a),
        Command::Compare(a) => cmd_compare(&a),
        Command::Plot(a) => cmd_plot(&a),
        Command::Scenario(a) => cmd_scenario(&a),
    }
}

fn load_base(path: Option<&Path>) -> Result<CliConfig> {
    Ok(match path {
        Some(p) => CliConfig::load(p)?,
        None => CliConfig::default(),
    })
}

fn env_workers() -> Option<String> {
    std::env::var(WORKERS_ENV).ok().filter(|v| !v.trim().is_empty())
}

fn write_out(path: &Path, curve: &G2Curve<f64>) -> Result<()> {
    write_curve(path, curve).with_context(|| format!("writing {}", path.display()))
}

pub fn cmd_analytic(a: &AnalyticArgs) -> Result<i32> {
    let cfg = load_base(a.config.as_deref())?.overlay(&a.params);
    let model = cfg.analytic(a.model.into())?;
    let curve = evaluate_curve(&model)?;
    write_out(&a.out, &curve)?;
    eprintln!("wrote {} points of the {} model to {}", curve.len(), model.kind.name(), a.out.display());
    Ok(0)
}

/// Path of the metadata written next to a simulated curve.
pub fn sidecar_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".meta");
    PathBuf::from(s)
}

fn sidecar(run: &McRunConfig<f64>, seconds: f64, scenario: Option<&str>) -> String {
    let cfg = &run.cfg;
    let stages = if run.stages.is_empty() { "none".to_owned() } else { run.stages.label() };
    let degrees: Vec<String> = run.stages.stages.iter().map(|s| format!("{}", degrees_from_angle(s.angle()))).collect();
    let mut entries = vec![
        ("scenario", scenario.unwrap_or("none").to_owned()),
        ("seed", run.seed.to_string()),
        ("realizations", run.realizations.to_string()),
        ("stages", stages),
        ("stage_angles_deg", if degrees.is_empty() { "none".to_owned() } else { degrees.join(",") }),
        ("wavelength_m", cfg.wavelength.to_string()),
        ("source_width_m", cfg.source_width.to_string()),
        ("distance_m", cfg.distance.to_string()),
        ("grid_points", cfg.dx_grid.len().to_string()),
        ("emitters", run.source.n_points.to_string()),
        ("statistics", format!("{:?}", run.source.statistics)),
        ("workers", run.workers.to_string()),
    ];
    entries.push(("wall_time_s", format!("{seconds:.3}")));
    key_value_lines(entries)
}

fn simulate_and_write(run: &McRunConfig<f64>, out: &Path, scenario: Option<&str>) -> Result<G2Curve<f64>> {
    if run.realizations == 1 {
        eprintln!("warning: a single realization gives no spread; the se column is all zero");
    }
    let start = Instant::now();
    let curve = run_simulation(run)?;
    let seconds = start.elapsed().as_secs_f64();
    write_out(out, &curve)?;
    let meta = sidecar_path(out);
    std::fs::write(&meta, sidecar(run, seconds, scenario)).with_context(|| format!("writing {}", meta.display()))?;
    eprintln!(
        "simulated {} realizations on {} worker(s) in {seconds:.2} s; wrote {} and {}",
        run.realizations,
        run.workers,
        out.display(),
        meta.display()
    );
    Ok(curve)
}

pub fn cmd_simulate(a: &SimulateArgs) -> Result<i32> {
    let preset = match &a.scenario {
        Some(name) => CliConfig::from_scenario(&scenario_by_name(name)?),
        None => CliConfig::default(),
    };
    let file = load_base(a.config.as_deref())?;
    let workers = file.resolve_workers(a.params.workers, env_workers().as_deref())?;
    let cfg = preset.overlay(&file).overlay(&a.params);
    let run = cfg.mc_run(workers)?;
    simulate_and_write(&run, &a.out, a.scenario.as_deref())?;
    Ok(0)
}

/// Parses `NAME=VALUE`, reading lengths and angles with their units.
fn parse_assignment(s: &str) -> Result<(String, f64)> {
    let (name, value) = s.split_once('=').with_context(|| format!("`{s}` is not NAME=VALUE"))?;
    let (name, value) = (name.trim(), value.trim());
    let v = if name == "R" {
        parse_length(value)?
    } else if name.starts_with("theta") {
        parse_angle(value)?
    } else {
        value.parse::<f64>().ok().filter(|v| v.is_finite()).with_context(|| format!("`{value}` is not a number"))?
    };
    Ok((name.to_owned(), v))
}

pub fn cmd_fit(a: &FitArgs) -> Result<i32> {
    let data = read_curve(&a.data)?;
    let cfg = load_base(a.config.as_deref())?.overlay(&a.params);
    if cfg.dx.is_some() {
        bail!("fit takes its grid from the data; drop --dx");
    }
    let analytic = cfg.analytic(a.model.into())?;
    let analytic = superbunch::analytic::AnalyticModel::new(analytic.kind, analytic.cfg.with_grid(data.dx.clone()), analytic.stages)?;
    let mut model = FitModel::from_analytic(&analytic);
    for assignment in &a.set {
        let (name, value) = parse_assignment(assignment)?;
        model.set(&name, value)?;
    }
    let free: Vec<&str> = a.free.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
    let model = model.with_free(&free)?;
    let mut options = FitOptions::for_data(&data);
    options.prescan = !a.no_prescan;
    options.max_iterations = a.max_iterations;
    options.weighting = match a.weighting {
        WeightingArg::Auto => options.weighting,
        WeightingArg::Se => Weighting::StandardError,
        WeightingArg::None => Weighting::Unweighted,
    };
    let result = match fit(&model, &data, &options) {
        Ok(r) => r,
        Err(FitError::NotConverged { result, damping }) => {
            let mut msg = format!(
                "fit did not converge after {} iterations (stop: {:?}, rss = {:e}, damping = {damping:e})\nlast parameter values:",
                result.iterations, result.stop, result.rss
            );
            for (n, v) in result.names.iter().zip(&result.values) {
                msg.push_str(&format!("\n  {n} = {v}"));
            }
            let tail: Vec<String> = result.rss_trace.iter().rev().take(5).map(|r| format!("{r:e}")).collect();
            msg.push_str(&format!("\nlast rss values (newest first): {}", tail.join(", ")));
            bail!(msg);
        }
        Err(e) => return Err(e.into()),
    };
    let report = extract_report(&result, &data);
    let text = render_fit_report(&report, &a.data.display().to_string());
    std::fs::write(&a.out, &text).with_context(|| format!("writing {}", a.out.display()))?;
    if let Some(path) = &a.curve {
        write_out(path, &report.fitted)?;
    }
    print!("{}", text.split("# params").next().unwrap_or(&text));
    Ok(0)
}

pub fn cmd_compare(a: &CompareArgs) -> Result<i32> {
    let ca = read_curve(&a.a)?;
    let cb = read_curve(&a.b)?;
    let report = compare_curves(&ca, &cb).with_context(|| format!("comparing {} with {}", a.a.display(), a.b.display()))?;
    print!("{}", render_comparison(&report));
    Ok(if report.flagged() { 1 } else { 0 })
}

fn label_of(path: &Path) -> String {
    path.file_stem().map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned())
}

pub fn cmd_plot(a: &PlotArgs) -> Result<i32> {
    let curves = a.curves.iter().map(|p| read_curve(p)).collect::<Result<Vec<_>, _>>()?;
    let series: Vec<Series<'_>> = a.curves.iter().zip(&curves).map(|(p, c)| Series { label: label_of(p), curve: c }).collect();
    let svg = render_svg(&series)?;
    std::fs::write(&a.out, svg).with_context(|| format!("writing {}", a.out.display()))?;
    Ok(0)
}

pub fn cmd_scenario(a: &ScenarioArgs) -> Result<i32> {
    let Some(name) = &a.name else {
        for s in builtin_scenarios::<f64>() {
            println!("{:<14} {}", s.name, s.description);
        }
        return Ok(0);
    };
    let scenario = scenario_by_name::<f64>(name)?;
    let overrides = CliConfig { realizations: a.realizations, seed: a.seed, ..CliConfig::default() };
    let workers = CliConfig::default().resolve_workers(a.workers, env_workers().as_deref())?;
    let run = CliConfig::from_scenario(&scenario).overlay(&overrides).mc_run(workers)?;
    let out = a.out.clone().unwrap_or_else(|| PathBuf::from(format!("{name}.csv")));
    let mc = simulate_and_write(&run, &out, Some(name))?;
    let reference = evaluate_curve(&scenario.reference)?;
    if let Some(path) = &a.reference {
        write_out(path, &reference)?;
    }
    if let Some(path) = &a.plot {
        let svg = render_svg(&[
            Series { label: format!("{name} Monte Carlo"), curve: &mc },
            Series { label: format!("{name} closed form"), curve: &reference },
        ])?;
        std::fs::write(path, svg).with_context(|| format!("writing {}", path.display()))?;
    }
    let report = compare_curves(&mc, &reference)?;
    println!("{name}: {}", scenario.description);
    print!("{}", render_comparison(&report));
    Ok(if report.flagged() { 1 } else { 0 })
}
