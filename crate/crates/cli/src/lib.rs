//! Command-line driver. Every subcommand reads a scenario (file, stdin or
//! preset), runs one pipeline and writes fields, tables, reports and a run
//! manifest under `--out`.
//!
//! Exit codes: 0 success, 1 solver failure, 2 configuration error,
//! 3 verification failure.

use std::ffi::OsString;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use stackelberg_heat::io::{self, RunManifest};
use stackelberg_heat::leader::{controllability_experiment, LeaderProblem};
use stackelberg_heat::nash::NashSettings;
use stackelberg_heat::presets;
use stackelberg_heat::scenario::{DiscretizationConfig, PhysicalControl, ScenarioConfig};
use stackelberg_heat::verification::{
    convergence_study, run_suite, StudyKind, StudySettings, SuiteSettings,
};
use stackelberg_heat::{ControlBundle, ControlSeries, DiscreteModel, Error, WeightedSpace};

pub const EXIT_SOLVER: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_VERIFY: i32 = 3;

#[derive(Parser, Debug)]
#[command(
    name = "stackelberg-heat",
    version,
    about = "Stackelberg-Nash control of the heat equation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Scenario JSON file, or `-` for stdin. Stdin is read when neither
    /// this nor `--preset` is given.
    #[arg(long, global = true)]
    pub scenario: Option<PathBuf>,
    /// Built-in scenario: tiny, desk or desk2d.
    #[arg(long, global = true)]
    pub preset: Option<String>,
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Worker threads (0 uses every core).
    #[arg(long, global = true, default_value_t = 0)]
    pub jobs: usize,
    #[arg(long, global = true, default_value_t = 7)]
    pub seed: u64,
    /// Comma-separated penalties, largest first.
    #[arg(
        long = "eps-sweep",
        global = true,
        default_value = "1e-1,1e-2,1e-3,1e-4"
    )]
    pub eps_sweep: String,
    #[arg(long, global = true)]
    pub theta: Option<f64>,
    /// Grid as `n,R`.
    #[arg(long, global = true)]
    pub grid: Option<String>,
    #[arg(long, global = true)]
    pub steps: Option<usize>,
    /// Omit timings so identical inputs give byte-identical outputs.
    #[arg(long, global = true)]
    pub deterministic: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Study {
    Space,
    Time,
    Radius,
    All,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Forward solve with a constant leader control on its region.
    SolveState {
        #[arg(long, default_value_t = 1.0)]
        leader_amplitude: f64,
    },
    /// Follower equilibrium for a constant leader control.
    SolveNash {
        #[arg(long, default_value_t = 1.0)]
        leader_amplitude: f64,
    },
    /// Penalized leader problem at the smallest penalty of the sweep.
    SolveLeader,
    /// The full penalty sweep with physical-space residual checks.
    Controllability,
    /// Oracle suite; writes JUnit XML.
    Verify,
    /// Self-convergence tables.
    Convergence {
        #[arg(long, value_enum, default_value = "all")]
        kind: Study,
    },
    /// Smallest eigenvalues of the weighted operator.
    Spectrum {
        #[arg(long, default_value_t = 5)]
        count: usize,
    },
}

/// Outcome of a subcommand that ran to completion.
struct Outcome {
    verification_failed: bool,
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I, stdin: impl Read) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { 0 };
        }
    };
    let result = load_scenario(&cli.common, stdin).and_then(|config| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.common.jobs)
            .build()
            .map_err(|e| Error::config("jobs", e.to_string()))
            .and_then(|pool| pool.install(|| execute(&cli, &config)))
    });
    match result {
        Ok(o) if o.verification_failed => {
            eprintln!(
                "verification failed; see reports under {}",
                cli.common.out.display()
            );
            EXIT_VERIFY
        }
        Ok(_) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config { .. } => EXIT_CONFIG,
        _ => EXIT_SOLVER,
    }
}

fn parse_grid(text: &str) -> stackelberg_heat::Result<(usize, f64)> {
    let bad = || Error::config("grid", format!("expected `n,R`, got {text:?}"));
    let (n, r) = text.split_once(',').ok_or_else(bad)?;
    Ok((
        n.trim().parse().map_err(|_| bad())?,
        r.trim().parse().map_err(|_| bad())?,
    ))
}

pub fn parse_eps_sweep(text: &str) -> stackelberg_heat::Result<Vec<f64>> {
    text.split(',')
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .map_err(|_| Error::config("eps-sweep", format!("cannot parse {p:?}")))
        })
        .collect()
}

fn load_scenario(
    common: &Common,
    mut stdin: impl Read,
) -> stackelberg_heat::Result<ScenarioConfig> {
    let mut config = match (&common.scenario, &common.preset) {
        (Some(_), Some(_)) => {
            return Err(Error::config(
                "scenario",
                "give either --scenario or --preset, not both",
            ))
        }
        (None, Some(name)) => presets::by_name(name)?,
        (Some(path), None) if path.as_os_str() != "-" => {
            let text = fs::read_to_string(path)
                .map_err(|e| Error::config("scenario", format!("{}: {e}", path.display())))?;
            ScenarioConfig::from_json_str(&text)?
        }
        _ => {
            let mut text = String::new();
            stdin
                .read_to_string(&mut text)
                .map_err(|e| Error::config("scenario", format!("stdin: {e}")))?;
            ScenarioConfig::from_json_str(&text)?
        }
    };
    let mut d: DiscretizationConfig = config.discretization_or_default();
    if let Some(g) = &common.grid {
        let (n, r) = parse_grid(g)?;
        d.n = n;
        d.radius = r;
    }
    if let Some(m) = common.steps {
        d.steps = m;
    }
    if let Some(t) = common.theta {
        d.theta = t;
    }
    config.discretization = Some(d);
    config.validate()?;
    Ok(config.normalized())
}

struct Writer<'a> {
    out: &'a Path,
    manifest: RunManifest,
}

impl Writer<'_> {
    fn text(&mut self, name: &str, body: &str) -> stackelberg_heat::Result<()> {
        let path = self.out.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, body)?;
        self.manifest.record(name, body.as_bytes());
        Ok(())
    }

    fn json(&mut self, name: &str, value: &impl serde::Serialize) -> stackelberg_heat::Result<()> {
        self.text(name, &(serde_json::to_string_pretty(value)? + "\n"))
    }

    fn record_binary(&mut self, path: &Path) -> stackelberg_heat::Result<()> {
        let name = path
            .strip_prefix(self.out)
            .unwrap_or(path)
            .to_string_lossy()
            .into_owned();
        self.manifest.record(&name, &fs::read(path)?);
        Ok(())
    }
}

fn constant_leader(model: &DiscreteModel, amplitude: f64) -> ControlSeries {
    let mut g = model.zero_controls();
    g.values_mut().iter_mut().for_each(|v| *v = amplitude);
    g.apply_masks(model.leader_masks());
    g
}

fn physical_csv(controls: &[(&str, &PhysicalControl)], model: &DiscreteModel) -> String {
    let grid = model.grid();
    let mut out = String::from("control,step,t,x0,x1,value\n");
    for (name, c) in controls {
        for k in 0..model.time().steps() {
            let (t, stretch, values) = c.sample_step(k);
            for (j, v) in values.iter().enumerate() {
                let p = grid.point(j);
                let x1 = if grid.dim() > 1 {
                    format!("{:.12e}", stretch * p[1])
                } else {
                    String::new()
                };
                out.push_str(&format!(
                    "{name},{k},{t:.12e},{:.12e},{x1},{v:.12e}\n",
                    stretch * p[0]
                ));
            }
        }
    }
    out
}

fn execute(cli: &Cli, config: &ScenarioConfig) -> stackelberg_heat::Result<Outcome> {
    let start = Instant::now();
    let common = &cli.common;
    let scenario_json = config.to_json_string()?;
    let model = DiscreteModel::from_config(config)?;
    let name = command_name(&cli.command);
    let mut w = Writer {
        out: &common.out,
        manifest: RunManifest::new(
            name,
            &scenario_json,
            model.grid(),
            model.time(),
            common.seed,
        ),
    };
    fs::create_dir_all(&common.out)?;
    w.manifest.deterministic = common.deterministic;
    w.manifest
        .tolerances
        .insert("linear".into(), model.options().linear.tol);
    w.text("scenario.json", &(scenario_json.clone() + "\n"))?;
    let mut verification_failed = false;

    match &cli.command {
        Command::SolveState { leader_amplitude } => {
            let bundle = ControlBundle {
                leader: constant_leader(&model, *leader_amplitude),
                followers: vec![model.zero_controls(); model.followers()],
            };
            let traj = model.solve_state(&bundle)?;
            for p in io::write_checkpoints(&common.out.join("checkpoints"), &traj)? {
                w.record_binary(&p)?;
            }
            let p = io::write_field(
                &common.out,
                "final_state",
                traj.final_state(),
                Some(model.time().horizon()),
            )?;
            w.record_binary(&p)?;
            w.text("final_state.csv", &traj.final_state().to_csv()?)?;
            let norms: Vec<f64> = traj
                .states
                .iter()
                .map(|v| model.inner(v.values(), v.values()).sqrt())
                .collect();
            w.json(
                "report.json",
                &serde_json::json!({ "weighted_norms": norms }),
            )?;
        }
        Command::SolveNash { leader_amplitude } => {
            let g = constant_leader(&model, *leader_amplitude);
            let (h, mut report) = model.solve_nash(&g, &NashSettings::default())?;
            if report.margin <= 0.0 && report.warning.is_none() {
                report.warning = Some(format!(
                    "coercivity margin {:.3e} is not positive",
                    report.margin
                ));
            }
            w.manifest
                .tolerances
                .insert("nash".into(), NashSettings::default().tol);
            for (i, hi) in h.iter().enumerate() {
                let p = io::write_series(&common.out, &format!("follower_{i}"), hi)?;
                w.record_binary(&p)?;
            }
            w.json("report.json", &report)?;
        }
        Command::SolveLeader => {
            let eps = parse_eps_sweep(&common.eps_sweep)?;
            let last = *eps
                .last()
                .ok_or_else(|| Error::config("eps-sweep", "empty"))?;
            let problem = LeaderProblem::new(last)?;
            w.manifest.tolerances.insert("leader".into(), problem.tol);
            let sol = model.solve_leader(&problem, None)?;
            let opt = model.optimality_residuals(&sol.g, &sol.h)?;
            let p = io::write_series(&common.out, "leader", &sol.g)?;
            w.record_binary(&p)?;
            for (i, hi) in sol.h.iter().enumerate() {
                let p = io::write_series(&common.out, &format!("follower_{i}"), hi)?;
                w.record_binary(&p)?;
            }
            let p = io::write_field(
                &common.out,
                "final_state",
                &sol.final_state,
                Some(model.time().horizon()),
            )?;
            w.record_binary(&p)?;
            w.json(
                "report.json",
                &serde_json::json!({
                    "epsilon": last,
                    "weighted_residual": sol.weighted_residual,
                    "leader_norm": sol.leader_norm,
                    "outer_iterations": sol.outer_iterations,
                    "nash_iterations": sol.nash_iterations,
                    "gradient_residual": sol.gradient_residual,
                    "optimality_residual": opt.max(),
                }),
            )?;
        }
        Command::Controllability => {
            let eps = parse_eps_sweep(&common.eps_sweep)?;
            let template = LeaderProblem::new(eps[0].max(f64::MIN_POSITIVE))?;
            w.manifest.tolerances.insert("leader".into(), template.tol);
            let run = controllability_experiment(&model, &eps, &template)?;
            w.text("controllability.csv", &run.report.to_csv())?;
            w.json("report.json", &run.report)?;
            let p = io::write_field(
                &common.out,
                "final_state",
                &run.solution.final_state,
                Some(model.time().horizon()),
            )?;
            w.record_binary(&p)?;
            let mut named: Vec<(String, &PhysicalControl)> =
                vec![("leader".into(), &run.physical_controls.leader)];
            for (i, f) in run.physical_controls.followers.iter().enumerate() {
                named.push((format!("follower_{i}"), f));
            }
            let refs: Vec<(&str, &PhysicalControl)> =
                named.iter().map(|(n, c)| (n.as_str(), *c)).collect();
            w.text("physical_controls.csv", &physical_csv(&refs, &model))?;
        }
        Command::Verify => {
            let report = run_suite(
                &model,
                &SuiteSettings {
                    seed: common.seed,
                    ..SuiteSettings::default()
                },
            );
            w.text("suite.xml", &report.to_junit_xml())?;
            w.json("suite.json", &report)?;
            verification_failed = !report.passed();
        }
        Command::Convergence { kind } => {
            let kinds: &[StudyKind] = match kind {
                Study::Space => &[StudyKind::Space],
                Study::Time => &[StudyKind::Time],
                Study::Radius => &[StudyKind::Radius],
                Study::All => &[StudyKind::Space, StudyKind::Time, StudyKind::Radius],
            };
            let mut settings = StudySettings::for_dim(config.dim);
            if let Some(t) = common.theta {
                settings.theta = t;
            }
            let mut summary = Vec::new();
            for k in kinds {
                let table = convergence_study(model.scenario(), *k, &settings)?;
                let name = format!(
                    "convergence_{}.csv",
                    serde_json::to_value(k)?.as_str().unwrap_or("study")
                );
                w.text(&name, &table.to_csv())?;
                summary.push(serde_json::json!({
                    "kind": k,
                    "theta": table.theta,
                    "fitted_rate": table.fitted_rate,
                    "r_squared": table.r_squared,
                    "floor": table.floor,
                }));
            }
            w.json("report.json", &summary)?;
        }
        Command::Spectrum { count } => {
            let ev = WeightedSpace::new(*model.grid()).spectral_probe(*count)?;
            let mut csv = String::from("index,eigenvalue\n");
            for (j, v) in ev.iter().enumerate() {
                csv.push_str(&format!("{j},{v:.15e}\n"));
            }
            w.text("spectrum.csv", &csv)?;
        }
    }

    if !common.deterministic {
        w.manifest.seconds = Some(start.elapsed().as_secs_f64());
    }
    let manifest = w.manifest.to_json()? + "\n";
    fs::write(common.out.join("manifest.json"), manifest)?;
    Ok(Outcome {
        verification_failed,
    })
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::SolveState { .. } => "solve-state",
        Command::SolveNash { .. } => "solve-nash",
        Command::SolveLeader => "solve-leader",
        Command::Controllability => "controllability",
        Command::Verify => "verify",
        Command::Convergence { .. } => "convergence",
        Command::Spectrum { .. } => "spectrum",
    }
}
