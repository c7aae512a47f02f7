use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use chrono::NaiveDate;
use clap::{Parser, Subcommand};

use subseasonal::autoknn::{autoknn_forecast, neighbor_diagnostics, AutoknnConfig};
use subseasonal::cfsdebias::{average_members, debias, DebiasClimPair, RawModelForecast};
use subseasonal::climatology::{compute_climatology, Climatology};
use subseasonal::dataframe::synthetic::{generate_synthetic, SyntheticSpec};
use subseasonal::dataframe::{read_frame, write_frame, Dataset, DatasetView, SpatioTemporalFrame};
use subseasonal::geotime::{target_start, GridSpec, Horizon};
use subseasonal::harness::{
    backtest, parse_skills_csv, parse_year_range, write_backtest_outputs, RunConfig,
};
use subseasonal::multillr::{multillr_forecast, FeatureCatalog, DEFAULT_SPAN, DEFAULT_TOL};
use subseasonal::skill::{ensemble, EnsembleWeights, ForecastAnomaly};

#[derive(Parser)]
#[command(name = "subseasonal", about = "Subseasonal forecasting engine and backtest harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with known ground truth.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Inclusive year range, e.g. 2001..2012.
        #[arg(long, default_value = "2001..2012")]
        years: String,
        /// Inclusive latitude range, e.g. 35..38.
        #[arg(long, default_value = "35..38")]
        lats: String,
        /// Inclusive longitude range, e.g. -110..-107.
        #[arg(long, default_value = "-110..-107", allow_hyphen_values = true)]
        lons: String,
        #[arg(long, default_value = "temperature")]
        variable: String,
        #[arg(long, default_value_t = 6)]
        features: usize,
        #[arg(long, default_value_t = 3)]
        active: usize,
        #[arg(long, default_value_t = 0.5)]
        noise_sd: f64,
        #[arg(long, default_value_t = 8.0)]
        seasonal_amp: f64,
    },
    /// Compute a day-of-year climatology from a dataset's target variable.
    Climatology {
        #[arg(long)]
        data: PathBuf,
        /// Inclusive base period, e.g. 2001..2008.
        #[arg(long)]
        base_years: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Issue a single forecast from data available at the issue date.
    Forecast {
        #[arg(long)]
        data: PathBuf,
        /// multillr or autoknn.
        #[arg(long)]
        model: String,
        #[arg(long, default_value = "weeks34")]
        horizon: String,
        #[arg(long)]
        issue: String,
        #[arg(long)]
        base_years: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Remove a dynamical model's lead-dependent bias from its forecast.
    Debias {
        /// Ensemble member forecast frame; repeat for several members.
        #[arg(long, required = true)]
        member: Vec<PathBuf>,
        /// Climatology frame of the model's reforecasts.
        #[arg(long)]
        reforecast_clim: PathBuf,
        /// Climatology frame of the observations.
        #[arg(long)]
        observed_clim: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Combine anomaly frames with the normalized weighted ensemble rule.
    Ensemble {
        /// Input anomaly frame; repeat for each constituent.
        #[arg(long, required = true)]
        input: Vec<PathBuf>,
        /// Comma-separated nonnegative weights summing to 1; uniform if absent.
        #[arg(long)]
        weights: Option<String>,
        #[arg(long, default_value = "weeks34")]
        horizon: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a biweekly backtest described by a config file.
    Backtest {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Report the analog dates the neighbor model would use at an issue date.
    DiagnoseKnn {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "weeks34")]
        horizon: String,
        #[arg(long)]
        issue: String,
        #[arg(long)]
        base_years: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Regenerate summary tables from a per-issue skills file.
    Report {
        #[arg(long)]
        skills: PathBuf,
        #[arg(long, default_value = "weeks34")]
        horizon: String,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_i16_range(s: &str) -> Result<Vec<i16>> {
    let (a, b) = s
        .split_once("..")
        .with_context(|| format!("expected 'A..B', got '{s}'"))?;
    let a: i16 = a.trim().parse().with_context(|| format!("bad bound '{a}'"))?;
    let b: i16 = b.trim().parse().with_context(|| format!("bad bound '{b}'"))?;
    if b < a {
        bail!("range '{s}' is reversed");
    }
    Ok((a..=b).collect())
}

fn parse_date(s: &str) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .with_context(|| format!("invalid date '{s}' (expected YYYY-MM-DD)"))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

/// Climatology from data visible at the issue date only.
fn gated_climatology(view: &DatasetView, base_years: (i32, i32)) -> Result<Climatology> {
    compute_climatology(view.target(), base_years).map_err(Into::into)
}

fn single_date_frame(
    name: &str,
    grid: GridSpec,
    date: NaiveDate,
    values: Vec<f64>,
) -> Result<SpatioTemporalFrame> {
    SpatioTemporalFrame::new(name, grid, vec![date], values).map_err(Into::into)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth {
            out,
            seed,
            years,
            lats,
            lons,
            variable,
            features,
            active,
            noise_sd,
            seasonal_amp,
        } => {
            let years = parse_year_range(&years)?;
            let grid = GridSpec::regular(&parse_i16_range(&lats)?, &parse_i16_range(&lons)?)?;
            let spec = SyntheticSpec {
                variable,
                n_features: features,
                n_active: active,
                noise_sd,
                seasonal_amp,
                ..SyntheticSpec::default()
            };
            ensure_dir(&out)?;
            let truth = generate_synthetic(seed, &grid, years, &spec, &out)?;
            println!(
                "wrote synthetic dataset to {} (seed {seed}, active features: {})",
                out.display(),
                truth.active.join(",")
            );
        }
        Command::Climatology { data, base_years, out } => {
            let ds = Dataset::load(&data)?;
            let clim = compute_climatology(&ds.target, parse_year_range(&base_years)?)?;
            ensure_dir(&out)?;
            let path = out.join(format!("climatology_{}.csv", ds.variable));
            write_frame(&clim.to_frame(), &path)?;
            println!("wrote {}", path.display());
        }
        Command::Forecast { data, model, horizon, issue, base_years, out } => {
            let ds = Dataset::load(&data)?;
            let horizon = Horizon::parse(&horizon)?;
            let issue = parse_date(&issue)?;
            let view = DatasetView::gated(&ds, issue);
            let clim = gated_climatology(&view, parse_year_range(&base_years)?)?;
            let target = target_start(issue, horizon);
            ensure_dir(&out)?;
            let forecast: ForecastAnomaly = match model.as_str() {
                "multillr" => {
                    let catalog = FeatureCatalog::default_for(&view, horizon)?;
                    let (fc, trace) = multillr_forecast(
                        target,
                        horizon,
                        &catalog,
                        &view,
                        &clim,
                        DEFAULT_TOL,
                        DEFAULT_SPAN,
                    )?;
                    std::fs::write(out.join("trace.csv"), trace.to_csv())
                        .context("writing trace.csv")?;
                    fc
                }
                "autoknn" => {
                    let cfg = AutoknnConfig::for_variable(&ds.variable)
                        .unwrap_or_else(|_| AutoknnConfig::temperature());
                    let (fc, set) = autoknn_forecast(target, horizon, &cfg, &view, &clim, None)?;
                    let mut text = String::from("rank,neighbor_date,similarity\n");
                    for (i, (date, sim)) in set.neighbors.iter().enumerate() {
                        text.push_str(&format!("{},{date},{sim}\n", i + 1));
                    }
                    std::fs::write(out.join("neighbors.csv"), text)
                        .context("writing neighbors.csv")?;
                    fc
                }
                other => bail!("unknown model '{other}' (expected multillr or autoknn)"),
            };
            if view.violations() > 0 {
                bail!("{} reads past the issue cutoff were attempted", view.violations());
            }
            let path = out.join(format!("forecast_{model}_{target}.csv"));
            write_frame(
                &single_date_frame(&ds.variable, ds.grid().clone(), target, forecast.values)?,
                &path,
            )?;
            println!("wrote {} (target period starts {target})", path.display());
        }
        Command::Debias { member, reforecast_clim, observed_clim, out } => {
            let members: Result<Vec<SpatioTemporalFrame>> = member
                .iter()
                .map(|p| read_frame(p, None).map_err(Into::into))
                .collect();
            let members = members?;
            let variable = members[0].variable_name().to_string();
            let raw = RawModelForecast::new(variable, members)?;
            let pair = DebiasClimPair::new(
                Climatology::from_frame(&read_frame(&reforecast_clim, None)?)?,
                Climatology::from_frame(&read_frame(&observed_clim, None)?)?,
            )?;
            let averaged = average_members(&raw)?;
            let corrected = debias(&averaged, &pair)?;
            ensure_dir(&out)?;
            let path = out.join("debiased.csv");
            write_frame(&corrected, &path)?;
            println!("wrote {}", path.display());
        }
        Command::Ensemble { input, weights, horizon, out } => {
            let horizon = Horizon::parse(&horizon)?;
            let frames: Result<Vec<SpatioTemporalFrame>> = input
                .iter()
                .map(|p| read_frame(p, None).map_err(Into::into))
                .collect();
            let frames = frames?;
            let first = &frames[0];
            for f in &frames[1..] {
                if f.grid() != first.grid() || f.dates() != first.dates() {
                    bail!("input frames disagree on grid or dates");
                }
            }
            let w = match weights {
                Some(s) => {
                    let parsed: std::result::Result<Vec<f64>, _> =
                        s.split(',').map(|x| x.trim().parse::<f64>()).collect();
                    EnsembleWeights::new(parsed.context("parsing weights")?)?
                }
                None => EnsembleWeights::uniform(frames.len())?,
            };
            let g = first.grid().len();
            let mut values = Vec::with_capacity(first.dates().len() * g);
            for &date in first.dates() {
                let constituents: Result<Vec<ForecastAnomaly>> = frames
                    .iter()
                    .map(|f| {
                        let row = f
                            .row_at(date)
                            .with_context(|| format!("frame {} misses {date}", f.variable_name()))?;
                        ForecastAnomaly::new(f.variable_name(), date, horizon, row.to_vec())
                            .map_err(Into::into)
                    })
                    .collect();
                let ens = ensemble(&constituents?, &w)
                    .with_context(|| format!("ensembling target date {date}"))?;
                values.extend_from_slice(&ens.values);
            }
            ensure_dir(&out)?;
            let path = out.join("ensemble.csv");
            write_frame(
                &SpatioTemporalFrame::new(
                    "ensemble",
                    first.grid().clone(),
                    first.dates().to_vec(),
                    values,
                )?,
                &path,
            )?;
            println!("wrote {}", path.display());
        }
        Command::Backtest { config, out } => {
            let cfg = RunConfig::from_file(&config)?;
            let ds = Dataset::load(&cfg.dataset_dir)?;
            let outcome = backtest(&cfg, &ds)?;
            write_backtest_outputs(&outcome, &cfg, &out)?;
            println!("{}", outcome.report.summary_markdown());
            println!(
                "gate violations: {}; guarantee checks: {} ({} failed); outputs in {}",
                outcome.report.gate_violations,
                outcome.report.dominance_checked,
                outcome.report.dominance_failures,
                out.display()
            );
            if outcome.report.gate_violations > 0 || outcome.report.dominance_failures > 0 {
                bail!("backtest audit failed");
            }
        }
        Command::DiagnoseKnn { data, horizon, issue, base_years, out } => {
            let ds = Dataset::load(&data)?;
            let horizon = Horizon::parse(&horizon)?;
            let issue = parse_date(&issue)?;
            let view = DatasetView::gated(&ds, issue);
            let clim = gated_climatology(&view, parse_year_range(&base_years)?)?;
            let target = target_start(issue, horizon);
            let cfg = AutoknnConfig::for_variable(&ds.variable)
                .unwrap_or_else(|_| AutoknnConfig::temperature());
            let (_, set) = autoknn_forecast(target, horizon, &cfg, &view, &clim, None)?;
            ensure_dir(&out)?;
            let mut text = String::from("rank,neighbor_date,similarity\n");
            for (i, (date, sim)) in set.neighbors.iter().enumerate() {
                text.push_str(&format!("{},{date},{sim}\n", i + 1));
            }
            std::fs::write(out.join("neighbors.csv"), &text).context("writing neighbors.csv")?;
            std::fs::write(out.join("neighbor_months.csv"), neighbor_diagnostics(&[set]))
                .context("writing neighbor_months.csv")?;
            println!("wrote neighbor diagnostics for target {target} to {}", out.display());
        }
        Command::Report { skills, horizon, out } => {
            let horizon = Horizon::parse(&horizon)?;
            let text = std::fs::read_to_string(&skills)
                .with_context(|| format!("reading {}", skills.display()))?;
            let report = parse_skills_csv(&text, horizon)?;
            ensure_dir(&out)?;
            std::fs::write(out.join("summary.csv"), report.summary_csv())?;
            std::fs::write(out.join("summary.md"), report.summary_markdown())?;
            std::fs::write(out.join("histogram.csv"), report.histogram_csv())?;
            println!("wrote summary tables to {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
