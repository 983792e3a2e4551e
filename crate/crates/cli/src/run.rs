//! The `run` command: data, signals, covariance, construction, backtest and
//! analytics for every (pool, factor, scheme) combination.
//!
//! Layout of the output directory:
//!
//! ```text
//! resolved_config.json
//! summary.json                      every pool and world-wide summary
//! sharpe_table.csv                  world-wide Sharpe per factor and scheme
//! <pool>/kinks.csv                  kinks of the pool's cap-weighted index
//! <pool>/<factor>/<scheme>/         backtest.csv, summary.json, skew_curve.csv,
//!                                   conditional.csv, rolling.csv, exposures.csv,
//!                                   exposure_series.csv
//! world/<factor>/<scheme>/          backtest.csv, summary.json, skew_curve.csv
//! ```

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use portcon_core::analytics::{
    conditional_performance, detect_kinks, exposures, index_levels, rolling_stats, skew_curve, weekly_last, weekly_sum,
    AnalyticsError, ConditionalRow, ExposureReport, KinkEvent, PerformanceSummary, RollingStats, SkewCurve,
    WeeklySeries,
};
use portcon_core::backtest::{aggregate_worldwide, run_pool_backtests, BacktestError, BacktestResult};
use portcon_core::data::{
    cap_weighted_index_returns, generate_synthetic, load_panel, select_universe, IngestConfig, MarketPanel, Universe,
    UniverseConfig,
};
use portcon_core::signals::Factor;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{DataSource, PoolConfig, RunConfig};
use crate::error::CliError;
use crate::report::{self, scheme_dir, OutputDir, WORLD_DIR};

/// One pool with everything the backtests and analytics share.
struct Pool {
    name: String,
    panel: MarketPanel,
    universe: Universe,
    index: Vec<Option<f64>>,
    weekly_index: Option<WeeklySeries>,
    kinks: Vec<KinkEvent>,
}

/// Per-strategy summary written next to its backtest.
#[derive(Debug, Clone, Serialize)]
pub struct StrategySummary {
    #[serde(flatten)]
    pub performance: PerformanceSummary,
    pub weekly_pnl_total: f64,
    pub mean_sector_exposure: f64,
    pub undefined_exposure_days: usize,
    pub beta_fallback_days: Vec<NaiveDate>,
    pub requested_start: Option<NaiveDate>,
    pub conditional: Vec<ConditionalRow>,
}

struct StrategyReport {
    dir: PathBuf,
    result: BacktestResult,
    summary: StrategySummary,
    skew: SkewCurve,
    rolling: Option<RollingStats>,
    exposure: ExposureReport,
}

/// Summaries of a finished run.
#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub pools: Vec<StrategySummary>,
    pub world: Vec<PerformanceSummary>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub output_dir: PathBuf,
    pub summary: RunSummary,
    pub files: Vec<PathBuf>,
}

/// Executes a resolved configuration and writes every report. A relative
/// output directory is placed under `output_root` when given.
pub fn run(config: &RunConfig, output_root: Option<&Path>, force: bool) -> Result<RunOutcome, CliError> {
    let root = config.output_path(output_root);
    let mut out = OutputDir::prepare(&root, force)?;
    out.write_json("resolved_config.json", config)?;

    let pools: Vec<Pool> = config.pools.par_iter().map(|p| load_pool(p, config)).collect::<Result<_, _>>()?;

    let jobs: Vec<(usize, Factor)> =
        (0..pools.len()).flat_map(|p| config.factors.iter().map(move |f| (p, *f))).collect();
    let results: Vec<Vec<BacktestResult>> = jobs
        .par_iter()
        .map(|&(p, factor)| {
            let pool = &pools[p];
            tracing::info!(pool = %pool.name, %factor, "backtesting");
            run_pool_backtests(&pool.panel, &pool.universe, factor, &config.schemes, &config.backtest)
                .map_err(|e| backtest_error(e, &pool.name, factor, config))
        })
        .collect::<Result<_, _>>()?;

    let reports: Vec<StrategyReport> = jobs
        .iter()
        .zip(&results)
        .flat_map(|(&(p, _), rs)| rs.iter().map(move |r| (p, r)))
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|(p, r)| analyse(&pools[p], r, config))
        .collect::<Result<_, _>>()?;

    for pool in &pools {
        out.write(Path::new(&pool.name).join("kinks.csv"), |w| {
            report::write_kinks(w, &pool.kinks, &config.kink_thresholds)
        })?;
    }
    for rep in &reports {
        write_strategy(&mut out, rep)?;
    }

    let mut world = Vec::new();
    for (fi, factor) in config.factors.iter().enumerate() {
        for (si, scheme) in config.schemes.iter().enumerate() {
            let per_pool: Vec<BacktestResult> =
                (0..pools.len()).map(|p| results[p * config.factors.len() + fi][si].clone()).collect();
            let agg = aggregate_worldwide(&per_pool, &config.aggregation)
                .map_err(|e| CliError::from_core(e.into(), format!("aggregation factor={factor} scheme={scheme}")))?;
            let performance = PerformanceSummary::of(&agg);
            let curve = skew_curve(&weekly_sum(&agg.dates, &agg.net_pnl).values);
            let dir = Path::new(WORLD_DIR).join(factor.id()).join(scheme_dir(&scheme.to_string()));
            out.write(dir.join("backtest.csv"), |w| report::write_backtest(w, &agg))?;
            out.write_json(dir.join("summary.json"), &performance)?;
            out.write(dir.join("skew_curve.csv"), |w| report::write_skew_curve(w, &curve))?;
            world.push(performance);
        }
    }

    let summary = RunSummary { pools: reports.into_iter().map(|r| r.summary).collect(), world };
    out.write_json("summary.json", &summary)?;
    out.write("sharpe_table.csv", |w| write_sharpe_table(w, &summary.world))?;
    Ok(RunOutcome { output_dir: root, summary, files: out.written().to_vec() })
}

fn backtest_error(e: BacktestError, pool: &str, factor: Factor, config: &RunConfig) -> CliError {
    let schemes: Vec<String> = config.schemes.iter().map(|s| s.to_string()).collect();
    let context = format!("pool={pool} factor={factor} schemes=[{}]", schemes.join(","));
    match e {
        // not enough history in the panel for the warm-up
        BacktestError::WarmUp { .. } => CliError::data("backtest", context, e),
        e => CliError::from_core(e.into(), context),
    }
}

fn load_pool(pool: &PoolConfig, config: &RunConfig) -> Result<Pool, CliError> {
    let context = format!("pool={}", pool.name);
    let panel = match pool.source() {
        DataSource::Synthetic(spec) => generate_synthetic(spec),
        DataSource::Csv { prices, fundamentals } => {
            load_panel(prices, &IngestConfig { fundamentals: fundamentals.map(Path::to_path_buf) })
        }
    }
    .map_err(|e| CliError::from_core(e.into(), context.clone()))?;
    let universe = select_universe(
        &panel,
        &UniverseConfig {
            pool_name: pool.name.clone(),
            cap_filter_size: pool.cap_filter_size,
            liquidity_size: pool.liquidity_size,
            adv_window: pool.adv_window,
        },
    )
    .map_err(|e| CliError::from_core(e.into(), context.clone()))?;
    let index = cap_weighted_index_returns(&panel, &universe);

    // kinks are measured on the index from the first universe date on
    let (mut weekly_index, mut kinks) = (None, Vec::new());
    if let Some(first) = universe.first_date() {
        let levels: Vec<Option<f64>> = index_levels(&index[first..]).into_iter().map(Some).collect();
        let weekly = weekly_last(&panel.dates()[first..], &levels);
        let n_min = config.kink_thresholds.iter().copied().fold(f64::INFINITY, f64::min);
        match detect_kinks(&weekly.dates, &weekly.values, n_min, &config.kinks) {
            Ok(r) => kinks = r.events,
            Err(AnalyticsError::InsufficientData { required, available }) => {
                tracing::warn!(pool = %pool.name, required, available, "index too short for kink detection");
            }
            Err(e) => return Err(CliError::from_core(e.into(), format!("{context} index kinks"))),
        }
        weekly_index = Some(weekly);
    }
    Ok(Pool { name: pool.name.clone(), panel, universe, index, weekly_index, kinks })
}

fn analyse(pool: &Pool, r: &BacktestResult, config: &RunConfig) -> Result<StrategyReport, CliError> {
    let context = format!("pool={} factor={} scheme={}", pool.name, r.factor, r.scheme);
    let fail = |e: AnalyticsError| CliError::from_core(e.into(), context.clone());
    if !r.fallbacks.is_empty() {
        tracing::warn!(%context, days = r.fallbacks.len(), "beta scheme fell back to neutral");
    }

    let weekly = weekly_sum(&r.dates, &r.net_pnl);
    let skew = skew_curve(&weekly.values);

    let dates = pool.panel.dates();
    let index: Vec<Option<f64>> =
        r.dates.iter().map(|d| dates.binary_search(d).ok().and_then(|t| pool.index[t])).collect();
    let rolling = match rolling_stats(&r.net_pnl, &index, config.rolling_window) {
        Ok(s) => Some(s),
        Err(AnalyticsError::InsufficientData { .. }) => None,
        Err(e) => return Err(fail(e)),
    };

    let conditional = match &pool.weekly_index {
        Some(wi) => {
            // only events whose whole evaluation window was traded
            let traded: BTreeSet<(i32, u32)> = weekly.weeks.iter().copied().collect();
            let events: Vec<KinkEvent> = pool
                .kinks
                .iter()
                .filter(|e| e.eval_window.clone().all(|w| traded.contains(&wi.weeks[w])))
                .cloned()
                .collect();
            conditional_performance(&weekly.aligned_to(wi, 0.0), &events, &config.kink_thresholds).map_err(fail)?
        }
        None => Vec::new(),
    };

    let exposure = exposures(&r.positions, pool.panel.sectors(), pool.panel.sector_names(), Some(&r.beta_exposure))
        .map_err(fail)?;

    let summary = StrategySummary {
        performance: PerformanceSummary::of(r),
        weekly_pnl_total: skew.total,
        mean_sector_exposure: exposure.mean_sector_exposure(),
        undefined_exposure_days: exposure.undefined.len(),
        beta_fallback_days: r.fallbacks.clone(),
        requested_start: r.requested_start,
        conditional,
    };
    let dir = Path::new(&pool.name).join(&r.factor).join(scheme_dir(&r.scheme));
    Ok(StrategyReport { dir, result: r.clone(), summary, skew, rolling, exposure })
}

fn write_strategy(out: &mut OutputDir, rep: &StrategyReport) -> Result<(), CliError> {
    let d = &rep.dir;
    out.write(d.join("backtest.csv"), |w| report::write_backtest(w, &rep.result))?;
    out.write_json(d.join("summary.json"), &rep.summary)?;
    out.write(d.join("skew_curve.csv"), |w| report::write_skew_curve(w, &rep.skew))?;
    out.write(d.join("conditional.csv"), |w| report::write_conditional(w, &rep.summary.conditional))?;
    out.write(d.join("rolling.csv"), |w| report::write_rolling(w, &rep.result.dates, rep.rolling.as_ref()))?;
    out.write(d.join("exposures.csv"), |w| report::write_exposures(w, &rep.exposure))?;
    out.write(d.join("exposure_series.csv"), |w| report::write_exposure_series(w, &rep.exposure))
}

fn write_sharpe_table<W: std::io::Write>(w: W, world: &[PerformanceSummary]) -> Result<(), String> {
    let mut w = csv::Writer::from_writer(w);
    let err = |e: csv::Error| e.to_string();
    let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    w.write_record(["factor", "scheme", "pre_cost_sharpe", "net_sharpe", "net_tstat", "weekly_skewness"])
        .map_err(err)?;
    for s in world {
        w.write_record([
            s.factor.clone(),
            s.scheme.clone(),
            cell(s.pre_cost.sharpe),
            cell(s.net.sharpe),
            cell(s.net.tstat),
            cell(s.weekly_skewness),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| e.to_string())
}

/// Scheme by factor table of world-wide net Sharpe ratios.
pub fn format_sharpe_table(world: &[PerformanceSummary]) -> String {
    let mut factors: Vec<&str> = Vec::new();
    let mut schemes: Vec<&str> = Vec::new();
    for s in world {
        if !factors.contains(&s.factor.as_str()) {
            factors.push(&s.factor);
        }
        if !schemes.contains(&s.scheme.as_str()) {
            schemes.push(&s.scheme);
        }
    }
    let width = schemes.iter().map(|s| s.len()).max().unwrap_or(0).max("net sharpe".len());
    let mut text = format!("{:<width$}", "net sharpe");
    for f in &factors {
        text.push_str(&format!(" {f:>10}"));
    }
    text.push('\n');
    for sc in &schemes {
        text.push_str(&format!("{sc:<width$}"));
        for f in &factors {
            let v = world.iter().find(|s| s.scheme == *sc && s.factor == *f).and_then(|s| s.net.sharpe);
            match v {
                Some(v) => text.push_str(&format!(" {v:>10.2}")),
                None => text.push_str(&format!(" {:>10}", "n/a")),
            }
        }
        text.push('\n');
    }
    text
}
