use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use arbitrage_core::agents::{train, AgentKind, GreedyAgent};
use arbitrage_core::config::RunConfig;
use arbitrage_core::controller::Controller;
use arbitrage_core::correction::verify::verify_controller;
use arbitrage_core::correction::{train_student, GridSpec};
use arbitrage_core::eval::{backtest_with, day_trace, policy_heatmap, price_histogram, write_trace_csv, ComparisonTable};
use arbitrage_core::market_data::{
    generate_synthetic_prices, load_price_csv, quartile_thresholds, split_dataset, write_price_csv, PriceSeries,
    RbcThresholds, SplitPart, SynthConfig,
};
use arbitrage_core::model::{agent_checkpoint, load_model_file, student_checkpoint, LoadedModel};

use crate::args::{AgentArg, Cli, Command, DaysArg};
use crate::controllers::{self, Named};
use crate::EXIT_VIOLATIONS;

pub enum Failure {
    Usage(String),
    Run(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Run(e.into())
    }
}

type Outcome = Result<ExitCode, Failure>;

struct Ctx {
    config: RunConfig,
}

impl Ctx {
    fn prices_path(&self, flag: Option<PathBuf>) -> Result<PathBuf, Failure> {
        flag.or_else(|| self.config.paths.prices.clone())
            .ok_or_else(|| Failure::Usage("no price file: pass --prices or set paths.prices".into()))
    }

    fn load_prices(&self, flag: Option<PathBuf>) -> Result<PriceSeries, Failure> {
        let path = self.prices_path(flag)?;
        let loaded = load_price_csv(&path).with_context(|| format!("reading {}", path.display()))?;
        if loaded.dropped_days > 0 {
            log::warn!("{}: dropped {} incomplete days", path.display(), loaded.dropped_days);
        }
        Ok(loaded.series)
    }

    fn output_dir(&self, flag: Option<PathBuf>) -> anyhow::Result<PathBuf> {
        let dir = flag.unwrap_or_else(|| self.config.paths.output_dir.clone());
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(dir)
    }

    /// Configured thresholds, else quartiles of the training days of
    /// `series`, else quartiles of all of it.
    fn rbc_thresholds(&self, series: Option<&PriceSeries>) -> anyhow::Result<RbcThresholds> {
        if let Some(t) = self.config.evaluation.rbc_thresholds {
            return Ok(t);
        }
        let series = series.ok_or_else(|| {
            anyhow!("rbc needs evaluation.rbc_thresholds in the config or a price file to derive them from")
        })?;
        let train = series.filter_days(|d| SplitPart::of(d) == SplitPart::Train);
        if train.is_empty() {
            log::warn!("no training days in the price file; rbc thresholds use every day");
            return Ok(quartile_thresholds(series)?);
        }
        Ok(quartile_thresholds(&train)?)
    }

    fn controllers(&self, list: &str, series: Option<&PriceSeries>) -> anyhow::Result<Vec<Named>> {
        controllers::parse(list, || self.rbc_thresholds(series))
    }

    fn grid(&self, path: Option<PathBuf>, default: &GridSpec) -> anyhow::Result<GridSpec> {
        match path {
            Some(path) => Ok(arbitrage_core::config::load_grid(&path).with_context(|| format!("loading grid {}", path.display()))?),
            None => Ok(default.clone()),
        }
    }
}

fn select_days(series: &PriceSeries, days: DaysArg) -> anyhow::Result<PriceSeries> {
    let part = match days {
        DaysArg::All => return Ok(series.clone()),
        DaysArg::Train => SplitPart::Train,
        DaysArg::Validation => SplitPart::Validation,
        DaysArg::Test => SplitPart::Test,
    };
    let out = series.filter_days(|d| SplitPart::of(d) == part);
    if out.is_empty() {
        bail!("the price file has no {days:?} days (use --days all to evaluate every day)");
    }
    Ok(out)
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    let mut w = create(path)?;
    w.write_all(bytes)?;
    w.flush()?;
    Ok(())
}

fn single(mut list: Vec<Named>, what: &str) -> Result<Named, Failure> {
    if list.len() != 1 {
        return Err(Failure::Usage(format!("{what} takes exactly one controller")));
    }
    Ok(list.remove(0))
}

pub fn run(cli: Cli) -> Outcome {
    if cli.print_default_config {
        print!("{}", RunConfig::default().to_toml_string()?);
        return Ok(ExitCode::SUCCESS);
    }
    let Some(command) = cli.command else {
        return Err(Failure::Usage("a subcommand is required (see --help)".into()));
    };

    if let Command::SynthPrices { out, days } = &command {
        let mut synth = match &cli.config {
            Some(p) => RunConfig::load(p)?.synth,
            None => SynthConfig::default(),
        };
        let seed = match (&cli.config, cli.seed) {
            (_, Some(s)) => s,
            (Some(p), None) => RunConfig::load(p)?.seed,
            (None, None) => 0,
        };
        if let Some(d) = days {
            synth.days = *d;
        }
        let series = generate_synthetic_prices(&synth, seed)?;
        let mut w = create(out)?;
        write_price_csv(&series, &mut w)?;
        w.flush()?;
        println!("wrote {} days to {}", series.day_count(), out.display());
        return Ok(ExitCode::SUCCESS);
    }

    let path = cli.config.ok_or_else(|| Failure::Usage("--config <path> is required for this subcommand".into()))?;
    let mut config = RunConfig::load(&path).with_context(|| format!("loading {}", path.display()))?;
    if let Some(seed) = cli.seed {
        config = config.with_seed(seed);
    }
    let ctx = Ctx { config };

    match command {
        Command::SynthPrices { .. } => unreachable!(),
        Command::Ingest { prices, out } => ingest(&ctx, prices, out),
        Command::Train { agent, out, prices } => train_cmd(&ctx, agent, out, prices),
        Command::Distill { teacher, out, prices } => distill(&ctx, teacher, out, prices),
        Command::Verify { student, controllers, grid } => verify(&ctx, student, controllers, grid),
        Command::Backtest { controllers, prices, days, out } => backtest_cmd(&ctx, &controllers, prices, days, out),
        Command::Heatmap { controllers, grid, out } => heatmap(&ctx, &controllers, grid, out),
        Command::Compare { controllers, prices, days, out } => compare(&ctx, &controllers, prices, days, out),
        Command::Trace { controllers, day, prices, out } => trace(&ctx, &controllers, day, prices, out),
    }
}

fn ingest(ctx: &Ctx, prices: PathBuf, out: PathBuf) -> Outcome {
    let loaded = load_price_csv(&prices).with_context(|| format!("reading {}", prices.display()))?;
    let series = loaded.series;
    let mut w = create(&out)?;
    write_price_csv(&series, &mut w)?;
    w.flush()?;
    let hist = price_histogram(&series, ctx.config.evaluation.histogram_bin_width)?;
    let dir = ctx.output_dir(None)?;
    hist.write_csv(create(&dir.join("histogram.csv"))?)?;
    let split = split_dataset(&series);
    println!(
        "{} complete days ({} dropped): train {}, validation {}, test {}",
        series.day_count(),
        loaded.dropped_days,
        split.train.day_count(),
        split.validation.day_count(),
        split.test.day_count()
    );
    println!(
        "settled quarter hours below -200 EUR/MWh: {:.3}%",
        100.0 * hist.fraction_below_minus_200
    );
    if !split.train.is_empty() {
        let q = quartile_thresholds(&split.train)?;
        println!("training quartiles: lower {:.2}, upper {:.2}", q.lower, q.upper);
    }
    Ok(ExitCode::SUCCESS)
}

fn train_cmd(ctx: &Ctx, agent: AgentArg, out: PathBuf, prices: Option<PathBuf>) -> Outcome {
    let series = ctx.load_prices(prices)?;
    let split = split_dataset(&series);
    let cfg = ctx.config.train_config();
    let kind = match agent {
        AgentArg::Dqn => AgentKind::Dqn,
        AgentArg::Ddqn => AgentKind::Ddqn { atoms: cfg.atoms },
    };
    let (trained, norm) = train(kind, &split, &ctx.config.battery, &cfg)?;
    let greedy = GreedyAgent { net: trained.nets.online, kind, norm };
    write_bytes(&out, &agent_checkpoint(&greedy)?)?;
    let curve = ctx.output_dir(None)?.join("curve.csv");
    write_bytes(&curve, trained.curve.to_csv().as_bytes())?;
    println!(
        "{}: {} episodes, {} gradient steps; checkpoint {}, curve {}",
        kind.label(),
        cfg.episodes,
        trained.gradient_steps,
        out.display(),
        curve.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn distill(ctx: &Ctx, teacher: PathBuf, out: PathBuf, prices: Option<PathBuf>) -> Outcome {
    let teacher = match load_model_file(&teacher).with_context(|| format!("loading {}", teacher.display()))? {
        LoadedModel::Agent(a) => a,
        LoadedModel::Student(_) => return Err(Failure::Usage("--teacher must be an agent checkpoint".into())),
    };
    let series = ctx.load_prices(prices)?;
    let split = split_dataset(&series);
    let result = train_student(
        &teacher,
        &split.train,
        &ctx.config.battery,
        &ctx.config.constraints,
        &ctx.config.distill_config(),
    )?;
    write_bytes(&out, &student_checkpoint(&result.student)?)?;
    let r = &result.probe_report;
    println!(
        "student {}: final loss {:.6}; layer-free probe violations {} of {} states (p1 {}, p2 {}, p3 {})",
        out.display(),
        result.epoch_losses.last().copied().unwrap_or(f64::NAN),
        r.violating_states,
        r.total_states,
        r.p1.count,
        r.p2.count,
        r.p3.count
    );
    Ok(ExitCode::SUCCESS)
}

fn verify(ctx: &Ctx, student: Option<PathBuf>, controllers: Option<String>, grid: Option<PathBuf>) -> Outcome {
    let grid = ctx.grid(grid, &ctx.config.distill.probe)?;
    let cfg = &ctx.config.constraints;
    let (checked, extra) = match (student, controllers) {
        (Some(path), None) => {
            let student = match load_model_file(&path).with_context(|| format!("loading {}", path.display()))? {
                LoadedModel::Student(s) => s,
                LoadedModel::Agent(_) => {
                    return Err(Failure::Usage("--student needs a student checkpoint; use --controllers for agents".into()))
                }
            };
            let with_layer = verify_controller(&student.with_layer(), &grid, cfg)?;
            let layer_free = verify_controller(&student, &grid, cfg)?;
            (with_layer, Some(layer_free))
        }
        (None, Some(list)) => {
            let c = single(ctx.controllers(&list, None)?, "verify")?;
            (verify_controller(&c, &grid, cfg)?, None)
        }
        _ => return Err(Failure::Usage("verify needs --student or --controllers".into())),
    };
    let json = match &extra {
        Some(free) => serde_json::json!({ "with_layer": checked, "layer_free": free }),
        None => serde_json::to_value(&checked)?,
    };
    println!("{}", serde_json::to_string_pretty(&json)?);
    if checked.is_clean() {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("{} of {} states violate a property", checked.violating_states, checked.total_states);
        Ok(ExitCode::from(EXIT_VIOLATIONS))
    }
}

fn evaluate(
    ctx: &Ctx,
    list: &str,
    prices: Option<PathBuf>,
    days: DaysArg,
) -> anyhow::Result<Vec<arbitrage_core::eval::ProfitReport>> {
    let series = ctx.load_prices(prices).map_err(|e| match e {
        Failure::Usage(m) => anyhow!(m),
        Failure::Run(e) => e,
    })?;
    let controllers = ctx.controllers(list, Some(&series))?;
    let eval_days = select_days(&series, days)?;
    let ev = &ctx.config.evaluation;
    controllers
        .iter()
        .map(|c| Ok(backtest_with(c, &eval_days, &ctx.config.battery, ev.initial_soc, ev.soc_carry)?))
        .collect()
}

fn backtest_cmd(ctx: &Ctx, list: &str, prices: Option<PathBuf>, days: DaysArg, out: Option<PathBuf>) -> Outcome {
    let reports = evaluate(ctx, list, prices, days)?;
    let path = ctx.output_dir(out)?.join("backtest.csv");
    let mut w = create(&path)?;
    writeln!(w, "controller,date,profit_eur,final_soc")?;
    for r in &reports {
        for d in &r.per_day {
            writeln!(w, "{},{},{:.6},{:.6}", r.controller, d.date, d.profit, d.final_soc)?;
        }
        println!(
            "{}: {:.2} EUR/day/MWh over {} days (total {:.2} EUR)",
            r.controller, r.profit_per_day_per_mwh, r.day_count, r.total_profit
        );
    }
    w.flush()?;
    Ok(ExitCode::SUCCESS)
}

fn compare(ctx: &Ctx, list: &str, prices: Option<PathBuf>, days: DaysArg, out: Option<PathBuf>) -> Outcome {
    if list.split(',').filter(|s| !s.trim().is_empty()).count() < 2 {
        return Err(Failure::Usage("compare needs at least two controllers".into()));
    }
    let reports = evaluate(ctx, list, prices, days)?;
    let table = ComparisonTable::from_profits(
        reports.iter().map(|r| (r.controller.clone(), r.profit_per_day_per_mwh)).collect(),
    );
    let path = ctx.output_dir(out)?.join("comparison.csv");
    table.write_csv(create(&path)?)?;
    table.write_csv(std::io::stdout().lock())?;
    Ok(ExitCode::SUCCESS)
}

fn heatmap(ctx: &Ctx, list: &str, grid: Option<PathBuf>, out: Option<PathBuf>) -> Outcome {
    let grid = ctx.grid(grid, &ctx.config.heatmap)?;
    let series = match ctx.config.paths.prices.as_ref() {
        Some(_) => Some(ctx.load_prices(None)?),
        None => None,
    };
    let controllers = ctx.controllers(list, series.as_ref())?;
    let base = ctx.output_dir(out)?;
    let many = controllers.len() > 1;
    for c in &controllers {
        let dir = if many { base.join(&c.label) } else { base.clone() };
        fs::create_dir_all(&dir)?;
        for table in policy_heatmap(c, &grid)? {
            let path = dir.join(table.file_name());
            table.write_csv(create(&path)?)?;
            println!("{}", path.display());
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn trace(ctx: &Ctx, list: &str, day: chrono::NaiveDate, prices: Option<PathBuf>, out: Option<PathBuf>) -> Outcome {
    let series = ctx.load_prices(prices)?;
    let c = single(ctx.controllers(list, Some(&series))?, "trace")?;
    let rows = day_trace(&c, &series, day, &ctx.config.battery, ctx.config.evaluation.initial_soc)?;
    let path = ctx.output_dir(out)?.join(format!("trace_{day}.csv"));
    write_trace_csv(&rows, create(&path)?)?;
    let profit: f64 = rows.iter().map(|r| r.reward).sum();
    println!("{}: {} steps, profit {:.2} EUR; {}", c.name(), rows.len(), profit, path.display());
    Ok(ExitCode::SUCCESS)
}
