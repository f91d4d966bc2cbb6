use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use spocc_core::metrics::CommunityMetrics;
use spocc_core::posterior::{effective_draws, rhat, split_rhat, RHAT_THRESHOLD};
use spocc_core::sampler::{FitConfig, ModelKind};
use spocc_core::simulate::{run_scenario_batch, TransitionSource};

use crate::config::{load_toml, FitFile, ModelChoice, ScenarioFile, StudyConfig};
use crate::dataset::{merge_rare, read_datasets, select_quadrat, write_dataset_file, Dataset};
use crate::error::{CliError, Result, ResultExt};
use crate::fit::{fit_model, FitOutcome};
use crate::io;
use crate::simstudy::{run_study, write_study};

#[derive(Debug, Parser)]
#[command(name = "spocc", version, about = "Spatial multistate dynamic occupancy models")]
pub struct Cli {
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate datasets from a scenario file.
    Simulate(SimulateArgs),
    /// Fit a model to a survey file.
    Fit(FitArgs),
    /// Equilibrium composition, mean turnover time and damping ratio of transition matrices.
    Metrics(MetricsArgs),
    /// Convergence diagnostics and trace data for a draws file.
    Diagnose(DiagnoseArgs),
    /// Run a simulation study comparing the estimators.
    Simstudy(SimstudyArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Scenario TOML file; defaults apply when omitted.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of datasets (overrides the scenario).
    #[arg(long)]
    pub datasets: Option<usize>,
    /// Error rate (overrides the scenario).
    #[arg(long)]
    pub error_rate: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SamplerArgs {
    /// Fit TOML file with a `[fit]` section; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub chains: Option<usize>,
    /// Post-burn-in sweeps per chain, before thinning.
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub burnin: Option<usize>,
    #[arg(long)]
    pub thin: Option<usize>,
    /// Pin the kernel correlation at zero.
    #[arg(long)]
    pub fix_rho: bool,
    /// Upper bound U of the uniform prior on the kernel scales.
    #[arg(long)]
    pub bandwidth_max: Option<f64>,
}

impl SamplerArgs {
    fn resolve(&self, model: ModelKind) -> Result<FitConfig> {
        let file: FitFile = match &self.config {
            Some(p) => load_toml(p)?,
            None => FitFile::default(),
        };
        let mut fit = file.fit;
        if let Some(v) = self.chains {
            fit.chains = v;
        }
        if let Some(v) = self.iters {
            fit.iterations = v;
        }
        if let Some(v) = self.burnin {
            fit.burn_in = v;
        }
        if let Some(v) = self.thin {
            fit.thin = v;
        }
        if let Some(v) = self.bandwidth_max {
            fit.bandwidth_max = v;
        }
        fit.fix_rho_zero |= self.fix_rho;
        let seed = self.seed.or(file.seed).unwrap_or(FitConfig::default().seed);
        let config = fit.to_config(model, seed);
        config.validate()?;
        Ok(config)
    }
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Survey CSV file.
    pub dataset: PathBuf,
    #[arg(long, value_enum, default_value_t = ModelChoice::Spatial)]
    pub model: ModelChoice,
    /// Quadrat to fit when the file holds several.
    #[arg(long)]
    pub quadrat: Option<String>,
    /// Merge states recorded fewer than this many times into one state.
    #[arg(long)]
    pub merge_rare: Option<usize>,
    #[command(flatten)]
    pub sampler: SamplerArgs,
    /// Exit with status 3 if any R-hat exceeds the threshold.
    #[arg(long)]
    pub strict: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    /// Summary CSV files or plain matrix CSV files (rows = destination state).
    #[arg(required = true)]
    pub sources: Vec<PathBuf>,
    /// Renormalise columns whose sums are off by at most this much (printed tables).
    #[arg(long, default_value_t = 0.0)]
    pub rounding: f64,
    /// Write the table here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    pub draws: PathBuf,
    /// Acceptance log; defaults to `acceptance.csv` beside the draws.
    #[arg(long)]
    pub acceptance: Option<PathBuf>,
    /// Judge convergence by split R-hat instead of the classic statistic.
    #[arg(long)]
    pub split: bool,
    /// Exit with status 3 if any R-hat exceeds the threshold.
    #[arg(long)]
    pub strict: bool,
    /// Directory for `rhat.csv` and `trace.csv`; defaults to the draws directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimstudyArgs {
    /// Study TOML file.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (0: one per core).
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Fit(a) => fit(a),
        Command::Metrics(a) => metrics(a),
        Command::Diagnose(a) => diagnose(a),
        Command::Simstudy(a) => simstudy(a),
    }
}

#[derive(Serialize)]
struct Truth {
    replicate: usize,
    error_rate: f64,
    sigma1: f64,
    sigma2: f64,
    rho: f64,
    initial: Vec<f64>,
    transitions: Vec<Vec<f64>>,
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let mut file: ScenarioFile = match &a.scenario {
        Some(p) => load_toml(p)?,
        None => ScenarioFile::default(),
    };
    if let Some(s) = a.seed {
        file.seed = s;
    }
    if let Some(n) = a.datasets {
        file.datasets = n;
    }
    if let Some(e) = a.error_rate {
        file.error_rate = e;
    }
    let scenario = file.design.scenario(file.error_rate, file.seed)?;
    create_dir(&a.out)?;
    let batch = run_scenario_batch(&scenario, file.datasets)?;
    for d in &batch {
        let tag = format!("{:03}", d.replicate + 1);
        let dataset = Dataset {
            quadrat: format!("sim{tag}"),
            site_ids: (1..=scenario.frame.len() as u64).collect(),
            frame: scenario.frame.clone(),
            states: scenario.states.clone(),
            observations: d.observations.clone(),
        };
        write_dataset_file(&a.out.join(format!("dataset_{tag}.csv")), std::slice::from_ref(&dataset))?;

        let bw = scenario.bandwidth;
        let truth = Truth {
            replicate: d.replicate + 1,
            error_rate: scenario.error_rate,
            sigma1: bw.sigma1(),
            sigma2: bw.sigma2(),
            rho: bw.rho(),
            initial: scenario.initial.probs().to_vec(),
            transitions: d.transitions.rows(),
        };
        let text = toml::to_string(&truth).map_err(|e| CliError::Invalid(e.to_string()))?;
        write_text(&a.out.join(format!("truth_{tag}.toml")), &text)?;

        let mut occ = String::from("site,t,state\n");
        for i in 0..d.occupancy.sites() {
            for t in 0..d.occupancy.horizon() {
                occ.push_str(&format!("{},{},{}\n", i + 1, t + 1, d.occupancy.get(i, t) + 1));
            }
        }
        write_text(&a.out.join(format!("occupancy_{tag}.csv")), &occ)?;
    }
    let source = match scenario.transitions {
        TransitionSource::Fixed(_) => "fixed",
        TransitionSource::Dirichlet => "drawn per dataset",
    };
    println!(
        "wrote {} dataset(s) to {} ({} sites, {} periods, {} states, e = {}, transitions {source})",
        batch.len(),
        a.out.display(),
        scenario.frame.len(),
        scenario.horizon,
        scenario.states.len(),
        scenario.error_rate
    );
    Ok(())
}

#[derive(Serialize)]
struct RunManifest {
    dataset: String,
    quadrat: String,
    model: String,
    states: Vec<String>,
    sites: usize,
    periods: usize,
    records: usize,
    seed: u64,
    chains: usize,
    iterations: usize,
    burn_in: usize,
    thin: usize,
    bandwidth_max: f64,
    fix_rho_zero: bool,
    files: Vec<String>,
}

fn fit(a: FitArgs) -> Result<()> {
    let datasets = read_datasets(&a.dataset)?;
    let mut data = select_quadrat(datasets, a.quadrat.as_deref(), &a.dataset)?;
    if let Some(threshold) = a.merge_rare {
        data = merge_rare(&data, threshold)?;
    }
    let config = a.sampler.resolve(a.model.sampler().unwrap_or(ModelKind::NonSpatial))?;
    create_dir(&a.out)?;
    let outcome = fit_model(a.model, &data.observations, &data.frame, &data.states, &config, true)
        .context(|| format!("fitting {} model to {}", a.model.name(), a.dataset.display()))?;

    let mut files = Vec::new();
    let mut unconverged = Vec::new();
    let text = match &outcome {
        FitOutcome::Naive { transitions, unobserved } => {
            let mut matrix = Vec::new();
            io::write_matrix(&mut matrix, transitions).map_err(|e| CliError::io(&a.out, e))?;
            write_text(&a.out.join("estimate.csv"), &String::from_utf8_lossy(&matrix))?;
            io::write_point_summary(&a.out.join("summary.csv"), transitions, unobserved)?;
            files.extend(["estimate.csv", "summary.csv"]);
            io::naive_text(transitions, unobserved, &data.states)
        }
        FitOutcome::Bayesian { draws, summary } => {
            io::write_draws(&a.out.join("draws.csv"), draws)?;
            io::write_summary(&a.out.join("summary.csv"), summary)?;
            files.extend(["draws.csv", "summary.csv"]);
            if draws.model == ModelKind::Spatial {
                io::write_acceptance(&a.out.join("acceptance.csv"), draws)?;
                files.push("acceptance.csv");
            }
            unconverged = summary.unconverged().iter().map(|p| p.parameter.name()).collect();
            io::summary_text(summary, &data.states)
        }
    };
    write_text(&a.out.join("summary.txt"), &text)?;
    files.extend(["summary.txt", "run.toml"]);
    let manifest = RunManifest {
        dataset: a.dataset.display().to_string(),
        quadrat: data.quadrat.clone(),
        model: a.model.name().into(),
        states: data.states.labels().to_vec(),
        sites: data.frame.len(),
        periods: data.observations.horizon(),
        records: data.observations.len(),
        seed: config.seed,
        chains: config.chains,
        iterations: config.iterations,
        burn_in: config.burn_in,
        thin: config.thin,
        bandwidth_max: config.bandwidth_max,
        fix_rho_zero: config.fix_rho_zero,
        files: files.iter().map(|s| s.to_string()).collect(),
    };
    let manifest = toml::to_string(&manifest).map_err(|e| CliError::Invalid(e.to_string()))?;
    write_text(&a.out.join("run.toml"), &manifest)?;
    print!("{text}");
    if a.strict && !unconverged.is_empty() {
        return Err(CliError::Unconverged(unconverged));
    }
    Ok(())
}

fn metrics(a: MetricsArgs) -> Result<()> {
    let mut table = Vec::new();
    let width = a
        .sources
        .iter()
        .map(|p| io::read_matrix(p, a.rounding).map(|m| m.states()))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .max()
        .unwrap_or(0);
    let w_cols: Vec<String> = (1..=width).map(|s| format!("w_{s}")).collect();
    writeln!(table, "source,turnover,damping,{}", w_cols.join(",")).expect("write to memory");
    for path in &a.sources {
        let p = io::read_matrix(path, a.rounding)?;
        let m = CommunityMetrics::compute(&p).context(|| format!("metrics of {}", path.display()))?;
        io::write_metrics(&mut table, &path.display().to_string(), &m).expect("write to memory");
    }
    match &a.out {
        Some(path) => std::fs::write(path, &table).map_err(|e| CliError::io(path, e)),
        None => std::io::stdout().write_all(&table).map_err(|e| CliError::io("<stdout>", e)),
    }
}

fn diagnose(a: DiagnoseArgs) -> Result<()> {
    let draws = io::read_draws(&a.draws)?;
    let dir = a.out.clone().unwrap_or_else(|| a.draws.parent().map(Path::to_path_buf).unwrap_or_default());
    create_dir(&dir)?;

    let fmt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    let mut csv = String::from("parameter,rhat,split_rhat,ess\n");
    let mut text = format!(
        "{} chain(s), {} draws\n{:<10} {:>8} {:>8} {:>9}\n",
        draws.chains.len(),
        draws.total_draws(),
        "parameter",
        "rhat",
        "split",
        "ess"
    );
    let mut unconverged = Vec::new();
    for p in draws.parameters() {
        let series = draws.chain_series(p);
        let r = rhat(&series).ok();
        let sr = split_rhat(&series).ok();
        let ess = effective_draws(&series);
        csv.push_str(&format!("{},{},{},{}\n", io::column_name(p), fmt(r), fmt(sr), ess));
        let judged = if a.split { sr } else { r };
        let flag = if judged.is_some_and(|v| v > RHAT_THRESHOLD) {
            unconverged.push(p.name());
            " *"
        } else {
            ""
        };
        let show = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.3}"));
        text.push_str(&format!("{:<10} {:>8} {:>8} {:>9.0}{flag}\n", p.name(), show(r), show(sr), ess));
    }
    write_text(&dir.join("rhat.csv"), &csv)?;

    let mut trace = String::from("chain,iteration,parameter,value\n");
    for p in draws.parameters() {
        let name = io::column_name(p);
        for c in &draws.chains {
            for (it, v) in c.iterations.iter().zip(c.series(p, draws.states)) {
                trace.push_str(&format!("{},{it},{name},{v}\n", c.chain));
            }
        }
    }
    write_text(&dir.join("trace.csv"), &trace)?;

    let acceptance = a.acceptance.clone().or_else(|| {
        let sibling = a.draws.with_file_name("acceptance.csv");
        sibling.exists().then_some(sibling)
    });
    if let Some(path) = acceptance {
        text.push_str("acceptance rates after burn-in:\n");
        for (chain, name, rate) in io::read_acceptance(&path)? {
            let rate = rate.map_or("-".to_string(), |r| format!("{r:.3}"));
            text.push_str(&format!("  chain {chain} {name:<7} {rate}\n"));
        }
    }
    print!("{text}");
    if a.strict && !unconverged.is_empty() {
        return Err(CliError::Unconverged(unconverged));
    }
    Ok(())
}

fn simstudy(a: SimstudyArgs) -> Result<()> {
    let mut config: StudyConfig = load_toml(&a.config)?;
    if let Some(s) = a.seed {
        config.seed = s;
    }
    if let Some(t) = a.threads {
        config.threads = t;
    }
    let out = a.out.clone().or_else(|| config.out.clone()).ok_or_else(|| CliError::Config {
        path: a.config.clone(),
        message: "no output directory (set `out` or pass --out)".into(),
    })?;
    let result = run_study(&config)?;
    write_study(&out, &config, &result)?;
    println!("{:<6} {:<10} {:<7} {:>12} {:>12} {:>12} {:>4}", "e", "model", "param", "mse", "bias2", "var", "n");
    for q in &result.quality {
        println!(
            "{:<6} {:<10} {:<7} {:>12.6} {:>12.6} {:>12.6} {:>4}",
            q.error_rate,
            q.model.name(),
            q.parameter,
            q.quality.mse,
            q.quality.bias2,
            q.quality.var,
            q.estimates
        );
    }
    if !result.exclusions.is_empty() {
        println!("{} kernel-scale estimate(s) excluded; see exclusions.csv", result.exclusions.len());
    }
    Ok(())
}
