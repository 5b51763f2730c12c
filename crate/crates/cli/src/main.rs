//! `soec`: runs the surrogate-assisted operating-point pipeline stage by
//! stage and writes each stage's CSV or model file into an output
//! directory.

mod config;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use sha2::{Digest, Sha256};

use soec_core::dataset::{default_train_count, load_external, sample_campaign, write_csv, ColumnMap};
use soec_core::decision::{linmap_select, operating_curve};
use soec_core::optimize::{
    build_front, contour_csv, contour_scan, fronts_csv, sweep_power, Objective, SweepResult,
};
use soec_core::physics::{simulate_cell, Scenario};
use soec_core::sensitivity::{index_report, Target};
use soec_core::surrogate::{load_model, train_lm, Architecture, LmConfig, SurrogateEnsemble};
use soec_core::types::{InputRanges, Output};

use config::RunConfig;

#[derive(Parser)]
#[command(name = "soec", version, about = "SOEC surrogate modelling and operating-point selection")]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory [default: soec-out].
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed for the command's random stage.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overwrite existing output files.
    #[arg(long, global = true)]
    force: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one laboratory condition at a given cell voltage.
    Simulate {
        #[arg(long, value_enum)]
        scenario: ScenarioArg,
        #[arg(long)]
        vcell: f64,
    },
    /// Sample the reduced-order model over the operating box.
    Campaign {
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Fit the five-network surrogate ensemble.
    Train {
        /// Dataset CSV [default: OUT/campaign.csv].
        #[arg(long)]
        data: Option<PathBuf>,
        /// Column map, e.g. `t_fur=Tfur,q_air=Qair,...`.
        #[arg(long)]
        map: Option<String>,
    },
    /// First-order and total Sobol indices of SU, IH_I and IH_T.
    Sobol {
        #[command(flatten)]
        model: ModelArg,
        #[arg(long)]
        n_base: Option<usize>,
    },
    /// Pareto fronts over the power sweep.
    Pareto {
        #[command(flatten)]
        model: ModelArg,
        #[command(flatten)]
        power: PowerArgs,
    },
    /// LINMAP operating curves for each weight case.
    Linmap {
        #[command(flatten)]
        model: ModelArg,
        #[command(flatten)]
        power: PowerArgs,
        #[command(flatten)]
        weights: WeightArgs,
    },
    /// Every report table plus a manifest, written to OUT/report.
    Report {
        #[command(flatten)]
        model: ModelArg,
        #[command(flatten)]
        power: PowerArgs,
        #[command(flatten)]
        weights: WeightArgs,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ScenarioArg {
    Condition1,
    Condition2,
}

#[derive(Args)]
struct ModelArg {
    /// Model file [default: OUT/model.txt].
    #[arg(long)]
    model: Option<PathBuf>,
}

#[derive(Args)]
struct PowerArgs {
    #[arg(long)]
    power_min: Option<f64>,
    #[arg(long)]
    power_max: Option<f64>,
    #[arg(long)]
    power_step: Option<f64>,
}

#[derive(Args)]
struct WeightArgs {
    /// `case1`, `case2` or `w1,...,w6`; repeatable.
    #[arg(long)]
    weights: Vec<String>,
}

/// Bad invocation rather than a failed computation.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

struct Ctx {
    cfg: RunConfig,
    out: PathBuf,
    seed: Option<u64>,
    force: bool,
}

impl Ctx {
    fn write(&self, name: &str, contents: &str) -> Result<PathBuf> {
        let path = self.out.join(name);
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
        if path.exists() && !self.force {
            return Err(usage(format!("{} already exists (use --force to overwrite)", path.display())));
        }
        std::fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
        log::info!("wrote {}", path.display());
        Ok(path)
    }

    fn existing(&self, given: &Option<PathBuf>, default: &str) -> Result<PathBuf> {
        let path = given.clone().unwrap_or_else(|| self.out.join(default));
        if !path.is_file() {
            return Err(usage(format!("{} does not exist", path.display())));
        }
        Ok(path)
    }

    fn model(&self, arg: &ModelArg) -> Result<SurrogateEnsemble> {
        let path = self.existing(&arg.model, "model.txt")?;
        load_model(&path).map_err(|e| anyhow!("{}: {e}", path.display()))
    }

    fn apply_power(&mut self, p: &PowerArgs) {
        let pc = &mut self.cfg.power;
        pc.min = p.power_min.unwrap_or(pc.min);
        pc.max = p.power_max.unwrap_or(pc.max);
        pc.step = p.power_step.unwrap_or(pc.step);
    }

    fn apply_weights(&mut self, w: &WeightArgs) {
        if !w.weights.is_empty() {
            self.cfg.weights = w.weights.clone();
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<Usage>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn init_threads() -> Result<()> {
    let Ok(v) = std::env::var("SOEC_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| usage(format!("SOEC_THREADS must be a positive integer (got `{v}`)")))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    init_threads()?;
    let cfg = match &cli.config {
        Some(p) if !p.is_file() => return Err(usage(format!("{} does not exist", p.display()))),
        Some(p) => RunConfig::load(p).map_err(|e| usage(format!("{e:#}")))?,
        None => RunConfig::default(),
    };
    let mut ctx = Ctx {
        cfg,
        out: cli.out.clone().unwrap_or_else(|| PathBuf::from("soec-out")),
        seed: cli.seed,
        force: cli.force,
    };
    match &cli.command {
        Command::Simulate { scenario, vcell } => simulate(&ctx, *scenario, *vcell, cli.out.is_some()),
        Command::Campaign { samples } => campaign(&ctx, samples.unwrap_or(ctx.cfg.samples)),
        Command::Train { data, map } => train(&ctx, data, map),
        Command::Sobol { model, n_base } => {
            let ens = ctx.model(model)?;
            let n = n_base.unwrap_or(ctx.cfg.n_base);
            let csv = sobol_csv(&ens, n, ctx.seed.unwrap_or(ctx.cfg.sobol_seed))?;
            ctx.write("sobol_indices.csv", &csv)?;
            Ok(())
        }
        Command::Pareto { model, power } => {
            ctx.apply_power(power);
            let sweep = sweep(&ctx, &ctx.model(model)?)?;
            let fronts: Vec<_> = sweep.iter().filter_map(|(_, f)| f.as_ref().ok()).collect();
            if fronts.is_empty() {
                anyhow::bail!("no power in the sweep has a feasible front");
            }
            ctx.write("fronts.csv", &fronts_csv(fronts))?;
            Ok(())
        }
        Command::Linmap { model, power, weights } => {
            ctx.apply_power(power);
            ctx.apply_weights(weights);
            let sweep = sweep(&ctx, &ctx.model(model)?)?;
            for (name, contents) in curves(&ctx, &sweep)? {
                ctx.write(&name, &contents)?;
            }
            Ok(())
        }
        Command::Report { model, power, weights } => {
            ctx.apply_power(power);
            ctx.apply_weights(weights);
            let ens = ctx.model(model)?;
            report(&ctx, &ens)
        }
    }
}

fn simulate(ctx: &Ctx, scenario: ScenarioArg, vcell: f64, to_file: bool) -> Result<()> {
    let (name, sc) = match scenario {
        ScenarioArg::Condition1 => ("condition1", Scenario::Condition1),
        ScenarioArg::Condition2 => ("condition2", Scenario::Condition2),
    };
    if !vcell.is_finite() {
        return Err(usage("--vcell must be finite"));
    }
    let op = sc.operating_point(vcell);
    let r = simulate_cell(&op, &ctx.cfg.cell_parameters()?)?;
    let csv = format!(
        "scenario,t_fur_C,q_air_sccm,q_st_sccm,v_cell_V,t_max_C,t_min_C,i_up_A,i_mid_A,i_down_A\n{name},{},{},{},{},{},{},{},{},{}\n",
        op.t_fur, op.q_air, op.q_st, op.v_cell, r.t_max, r.t_min, r.i_up, r.i_mid, r.i_down
    );
    print!("{csv}");
    if to_file {
        ctx.write(&format!("simulate_{name}.csv"), &csv)?;
    }
    Ok(())
}

fn campaign(ctx: &Ctx, n: usize) -> Result<()> {
    let seed = ctx.seed.unwrap_or(ctx.cfg.campaign_seed);
    let ds = sample_campaign(n, &InputRanges::DOMAIN, seed, &ctx.cfg.cell_parameters()?)?;
    let mut buf = Vec::new();
    write_csv(&ds, &mut buf)?;
    let path = ctx.write("campaign.csv", std::str::from_utf8(&buf)?)?;
    println!("{} points -> {}", ds.len(), path.display());
    Ok(())
}

fn train(ctx: &Ctx, data: &Option<PathBuf>, map: &Option<String>) -> Result<()> {
    let path = ctx.existing(data, "campaign.csv")?;
    let map = match map {
        Some(m) => ColumnMap::parse(m).map_err(|e| usage(e.to_string()))?,
        None => ColumnMap::identity(),
    };
    let mut ds = load_external(&path, &map)?;
    let seed = ctx.seed.unwrap_or(ctx.cfg.train_seed);
    ds.resplit(seed, default_train_count(ds.len()))?;
    let ens = train_lm(&ds, &Architecture::default(), &LmConfig::default(), seed)?;
    let mut report = String::from("output,hidden,train_rmse,test_rmse,train_r2,test_r2,epochs,restart,stop\n");
    if let Some(reports) = &ens.reports {
        for (o, r) in Output::ALL.iter().zip(reports) {
            writeln!(
                report,
                "{},{},{},{},{},{},{},{},{:?}",
                o.name(),
                ens.model(*o).n_hidden,
                r.train_rmse,
                r.test_rmse,
                r.train_r2,
                r.test_r2,
                r.epochs,
                r.restart,
                r.stop
            )?;
        }
    }
    ctx.write("model.txt", &ens.to_text())?;
    ctx.write("fit_report.csv", &report)?;
    print!("{report}");
    Ok(())
}

fn sobol_csv(ens: &SurrogateEnsemble, n_base: usize, seed: u64) -> Result<String> {
    Ok(index_report(ens, &Target::ALL, &InputRanges::DOMAIN, n_base, seed)?.to_csv())
}

fn sweep(ctx: &Ctx, ens: &SurrogateEnsemble) -> Result<SweepResult> {
    let powers = ctx.cfg.powers().map_err(|e| usage(e.to_string()))?;
    Ok(sweep_power(ens, &powers, &ctx.cfg.grid()?)?)
}

fn curves(ctx: &Ctx, sweep: &SweepResult) -> Result<Vec<(String, String)>> {
    let cases = ctx.cfg.weight_cases().map_err(|e| usage(format!("{e:#}")))?;
    let mut files = Vec::new();
    for (name, w) in cases {
        let c = operating_curve(sweep, &w);
        if c.points.is_empty() {
            anyhow::bail!("no power in the sweep has a feasible front");
        }
        for (p, why) in &c.skipped {
            log::warn!("{name}: skipped {p} W ({why})");
        }
        files.push((format!("curve_{name}.csv"), c.to_csv()));
        files.push((format!("envelope_{name}.csv"), c.envelope_csv()));
    }
    Ok(files)
}

/// Best, worst and LINMAP rows of the 10 W front with equal weights.
fn decision_table(ens: &SurrogateEnsemble, ctx: &Ctx) -> Result<String> {
    let front = build_front(ens, 10.0, &ctx.cfg.grid()?)?;
    let r = linmap_select(&front, &soec_core::decision::WeightVector::case1())?;
    let mut s = String::from("row,ih_i,ih_t_C,v_cell_V,su,t_fur_C,i_tot_A\n");
    let rd = r.relative_distance().map(|x| 100.0 * x);
    for (name, row) in [("best", r.best), ("worst", r.worst), ("decision", r.objectives), ("relative_distance_pct", rd)] {
        let cells: Vec<String> = Objective::ALL.iter().map(|&o| row[o as usize].to_string()).collect();
        writeln!(s, "{name},{}", cells.join(","))?;
    }
    Ok(s)
}

fn report(ctx: &Ctx, ens: &SurrogateEnsemble) -> Result<()> {
    let t_levels = [600.0, 650.0, 700.0, 750.0];
    let q_levels: Vec<f64> = (0..14).map(|k| 20.0 + 10.0 * k as f64).collect();
    let su_levels: Vec<f64> = (0..13).map(|k| 0.3 + 0.05 * k as f64).collect();
    let contour = contour_csv(&contour_scan(ens, &t_levels, &q_levels, &su_levels));
    ctx.write("report/contour.csv", &contour)?;

    let sweep = sweep(ctx, ens)?;
    ctx.write("report/fronts.csv", &fronts_csv(sweep.iter().filter_map(|(_, f)| f.as_ref().ok())))?;
    for (name, contents) in curves(ctx, &sweep)? {
        ctx.write(&format!("report/{name}"), &contents)?;
    }
    let seed = ctx.seed.unwrap_or(ctx.cfg.sobol_seed);
    ctx.write("report/sobol_indices.csv", &sobol_csv(ens, ctx.cfg.n_base, seed)?)?;
    ctx.write("report/decision_10W.csv", &decision_table(ens, ctx)?)?;

    let manifest = manifest(&ctx.out)?;
    let path = ctx.write("report/manifest.csv", &manifest)?;
    println!("{}", path.display());
    Ok(())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Every file under `root` except the manifest itself, sorted by path.
fn manifest(root: &Path) -> Result<String> {
    fn walk(dir: &Path, files: &mut Vec<PathBuf>) -> Result<()> {
        for entry in std::fs::read_dir(dir)? {
            let path = entry?.path();
            if path.is_dir() {
                walk(&path, files)?;
            } else {
                files.push(path);
            }
        }
        Ok(())
    }
    let mut files = Vec::new();
    walk(root, &mut files)?;
    let mut rel: Vec<(String, PathBuf)> = files
        .into_iter()
        .map(|p| (p.strip_prefix(root).unwrap().to_string_lossy().replace('\\', "/"), p))
        .filter(|(r, _)| r != "report/manifest.csv")
        .collect();
    rel.sort();
    let mut s = String::from("file,bytes,sha256\n");
    for (r, p) in rel {
        let bytes = std::fs::read(&p)?;
        writeln!(s, "{r},{},{}", bytes.len(), hex(&Sha256::digest(&bytes)))?;
    }
    Ok(s)
}
