mod config;

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use chrono::NaiveDate;
use clap::{Parser, Subcommand};
use lstm_ensemble::evaluation::{emit_plot_data, evaluate_variants, forecast_series};
use lstm_ensemble::ingest::{
    assemble_frames, parse_fundamentals, parse_prices, read_annual_csv, write_annual_csv, write_fundamentals_csv,
    write_prices_csv, AnnualFrame, DailyFrame,
};
use lstm_ensemble::lstm::gradient_suite;
use lstm_ensemble::models::{eligible_universe, train_variant, ModelFile, TrainedModel, Variant};
use lstm_ensemble::pipeline::prepare;
use lstm_ensemble::synthetic::annual_drift;

use crate::config::{Overrides, RunConfig};

const GRADCHECK_TOLERANCE: f64 = 1e-4;
const GRADCHECK_INSTANCES: usize = 10;

#[derive(Parser, Debug)]
#[command(
    name = "lstm-ensemble",
    version,
    about = "Serial annual/daily LSTM ensemble for next-day close forecasting"
)]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run seed; every learner seed is derived from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Use the built-in synthetic universe instead of data files.
    #[arg(long, global = true)]
    synthetic: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Ingest, impute, add indicators and write the prepared data.
    Prepare,
    /// Train one variant on the prepared data.
    Train {
        #[arg(long, default_value = "ensemble")]
        variant: String,
    },
    /// Print the predicted next close after a date.
    Predict {
        #[arg(long)]
        symbol: String,
        /// Last day of history to use (YYYY-MM-DD).
        #[arg(long)]
        date: NaiveDate,
        #[arg(long, default_value = "ensemble")]
        variant: String,
        /// Model file; defaults to <out>/models/<variant>.json.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Train or reuse all four variants and write the comparison report.
    Evaluate {
        /// Symbol for the forecast plot; defaults to the first test symbol.
        #[arg(long)]
        symbol: Option<String>,
    },
    /// Check LSTM and MLP gradients against finite differences.
    Gradcheck,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    if let Command::Gradcheck = cli.command {
        return gradcheck(cli.seed.unwrap_or(42));
    }
    let overrides = Overrides {
        seed: cli.seed,
        out_dir: cli.out.clone(),
        synthetic: cli.synthetic,
    };
    let cfg = RunConfig::load(cli.config.as_deref(), &overrides)?;
    match cli.command {
        Command::Prepare => cmd_prepare(&cfg)?,
        Command::Train { variant } => cmd_train(&cfg, variant.parse()?)?,
        Command::Predict {
            symbol,
            date,
            variant,
            model,
        } => {
            let variant: Variant = variant.parse()?;
            let path = model.unwrap_or_else(|| model_path(&cfg, variant));
            let price = cmd_predict(&cfg, &path, &symbol, date)?;
            println!("{price}");
        }
        Command::Evaluate { symbol } => cmd_evaluate(&cfg, symbol.as_deref())?,
        Command::Gradcheck => unreachable!(),
    }
    Ok(ExitCode::SUCCESS)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(
        File::open(path).with_context(|| format!("opening {}", path.display()))?,
    ))
}

fn file_stem(symbol: &str) -> String {
    symbol
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '.' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn model_path(cfg: &RunConfig, variant: Variant) -> PathBuf {
    cfg.models_dir().join(format!("{variant}.json"))
}

fn cmd_prepare(cfg: &RunConfig) -> Result<()> {
    let (prices, fundamentals, ratio_names) = if cfg.data.synthetic {
        let data = annual_drift(&cfg.synthetic);
        let raw = cfg.out_dir.join("synthetic");
        write_prices_csv(&data.prices, create(&raw.join("prices.csv"))?)?;
        write_fundamentals_csv(
            &data.ratio_names,
            &data.fundamentals,
            create(&raw.join("fundamentals.csv"))?,
        )?;
        (data.prices, data.fundamentals, data.ratio_names)
    } else {
        let prices_path = cfg.data.prices.as_deref().expect("validated");
        let fund_path = cfg.data.fundamentals.as_deref().expect("validated");
        let prices = parse_prices(open(prices_path)?, &cfg.data.price_schema)
            .with_context(|| format!("parsing {}", prices_path.display()))?;
        let (names, rows) = parse_fundamentals(open(fund_path)?, &cfg.data.fundamentals_schema)
            .with_context(|| format!("parsing {}", fund_path.display()))?;
        (prices, rows, names)
    };
    let assembled = assemble_frames(&prices, &fundamentals, &ratio_names)?;
    let prepared = prepare(assembled, &ratio_names, &cfg.prepare)?;

    let dir = cfg.prepared_dir();
    if dir.exists() {
        fs::remove_dir_all(&dir).with_context(|| format!("clearing {}", dir.display()))?;
    }
    for (symbol, frame) in &prepared.daily {
        frame.write_csv(create(&dir.join("daily").join(format!("{}.csv", file_stem(symbol))))?)?;
    }
    write_annual_csv(prepared.annual.values(), create(&dir.join("annual.csv"))?)?;
    serde_json::to_writer_pretty(create(&cfg.out_dir.join("summary.json"))?, &prepared.summary)?;
    fs::write(cfg.out_dir.join("summary.txt"), prepared.summary.to_text())?;
    fs::write(cfg.out_dir.join("config.toml"), cfg.to_toml()?)?;
    print!("{}", prepared.summary.to_text());
    Ok(())
}

type PreparedData = (BTreeMap<String, DailyFrame>, BTreeMap<String, AnnualFrame>);

fn load_prepared(cfg: &RunConfig) -> Result<PreparedData> {
    let dir = cfg.prepared_dir();
    let annual_path = dir.join("annual.csv");
    if !annual_path.exists() {
        bail!("no prepared data in {}; run `prepare` first", dir.display());
    }
    let annual = read_annual_csv(open(&annual_path)?).with_context(|| format!("reading {}", annual_path.display()))?;
    let mut daily = BTreeMap::new();
    let mut entries: Vec<PathBuf> = fs::read_dir(dir.join("daily"))?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()?;
    entries.sort();
    for path in entries {
        let frame = DailyFrame::read_csv(open(&path)?).with_context(|| format!("reading {}", path.display()))?;
        daily.insert(frame.symbol.clone(), frame);
    }
    Ok((daily, annual))
}

fn save_model(cfg: &RunConfig, model: TrainedModel) -> Result<PathBuf> {
    let path = model_path(cfg, model.variant());
    ModelFile::new(model, cfg.fingerprint()).write(create(&path)?)?;
    Ok(path)
}

fn load_model(cfg: &RunConfig, path: &Path) -> Result<ModelFile> {
    let file = ModelFile::read(open(path)?).with_context(|| format!("reading {}", path.display()))?;
    let expected = cfg.fingerprint();
    if file.config_fingerprint != expected {
        bail!(
            "{} was trained with a different configuration (fingerprint {} vs {}); use the same --config and --seed or retrain",
            path.display(),
            file.config_fingerprint,
            expected
        );
    }
    Ok(file)
}

fn cmd_train(cfg: &RunConfig, variant: Variant) -> Result<()> {
    let (daily, annual) = load_prepared(cfg)?;
    let universe = eligible_universe(&daily, &annual);
    let (model, _) = train_variant(variant, &universe, &annual, &cfg.models, &cfg.prepare.split)
        .with_context(|| format!("training {variant}"))?;
    let path = save_model(cfg, model)?;
    println!("{}", path.display());
    Ok(())
}

fn cmd_predict(cfg: &RunConfig, path: &Path, symbol: &str, date: NaiveDate) -> Result<f64> {
    let model = load_model(cfg, path)?.model;
    if !model.target_stats().contains_key(symbol) {
        bail!("symbol not in model: {symbol}");
    }
    let frame_path = cfg
        .prepared_dir()
        .join("daily")
        .join(format!("{}.csv", file_stem(symbol)));
    let frame = DailyFrame::read_csv(open(&frame_path)?)?;
    let history = frame.select_rows(|_, d| d <= date);
    let need = model.window_length();
    if history.len() < need {
        bail!(
            "only {} rows up to {date} for {symbol}; the model needs {need}",
            history.len()
        );
    }
    let recent = history.slice(history.len() - need..history.len());
    Ok(model.predict_next_close(&recent)?)
}

fn cmd_evaluate(cfg: &RunConfig, symbol: Option<&str>) -> Result<()> {
    let (daily, annual) = load_prepared(cfg)?;
    let fingerprint = cfg.fingerprint();
    let mut pretrained = BTreeMap::new();
    for v in Variant::ALL {
        let path = model_path(cfg, v);
        if !path.exists() {
            continue;
        }
        match load_model(cfg, &path) {
            Ok(file) if file.model.variant() == v => {
                pretrained.insert(v, file.model);
            }
            Ok(_) => log::warn!("{} holds another variant; retraining {v}", path.display()),
            Err(e) => log::warn!("{e:#}; retraining {v}"),
        }
    }
    let eval = evaluate_variants(
        &daily,
        &annual,
        &cfg.models,
        &cfg.prepare.split,
        cfg.seed,
        &fingerprint,
        &pretrained,
    )?;
    for (v, model) in &eval.models {
        if !pretrained.contains_key(v) {
            save_model(cfg, model.clone())?;
        }
    }
    let report = &eval.report;
    report.write_json(create(&cfg.out_dir.join("report.json"))?)?;
    fs::write(cfg.out_dir.join("report.txt"), report.to_text())?;
    print!("{}", report.to_text());

    let target = match symbol {
        Some(s) => s.to_string(),
        None => report
            .symbols
            .first()
            .cloned()
            .ok_or_else(|| anyhow!("no symbol in the test set"))?,
    };
    match eval.models.get(&Variant::Ensemble) {
        Some(model) if !report.row(Variant::Ensemble).is_some_and(|r| r.failed()) => {
            let frame = daily.get(&target).ok_or_else(|| anyhow!("unknown symbol {target}"))?;
            let test = frame.select_rows(|_, d| cfg.prepare.split.in_test(d));
            let series = forecast_series(model, &test)?;
            let stem = cfg
                .out_dir
                .join("forecast")
                .join(format!("{}_ensemble", file_stem(&target)));
            fs::create_dir_all(stem.parent().unwrap())?;
            let (csv, svg) = emit_plot_data(&series, &stem)?;
            println!("forecast: {} {}", csv.display(), svg.display());
        }
        _ => log::warn!("ensemble unavailable; no forecast plot written"),
    }
    Ok(())
}

fn gradcheck(seed: u64) -> Result<ExitCode> {
    let suite = gradient_suite(seed, GRADCHECK_INSTANCES);
    for c in &suite.cases {
        println!(
            "{:<5} F={:<2} H={:<2} T/N={:<2} max rel err {:.3e}",
            c.model, c.inputs, c.hidden, c.steps, c.max_relative_error
        );
    }
    let ok = suite.passes(GRADCHECK_TOLERANCE);
    println!(
        "max relative error {:.3e} ({} {GRADCHECK_TOLERANCE:e})",
        suite.max_relative_error,
        if ok { "<" } else { ">=" }
    );
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}
