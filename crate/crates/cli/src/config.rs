//! Run configuration.
//!
//! A run is described by one TOML file; every field is optional and
//! command-line flags override the file. Example:
//!
//! ```toml
//! seed = 7
//! output_dir = "runs/momentum"
//! factors = ["momentum", "lowvol"]
//! schemes = ["ff", "neutral", "beta", "betaopt", "markowitz:k=5", "costaware:k=5"]
//! max_k = 5
//! kink_thresholds = [1.0, 2.0, 3.0]
//! rolling_window = 252
//! aggregation = "flat"
//!
//! [backtest]
//! beta_window = 252
//! calibration_window = 252
//! halflife_grid = [1, 2, 5, 10, 21, 42, 63]
//! start = "2003-01-02"
//! costs = { commission_bps = 1.0, half_spread_bps = 5.0 }
//! correlation = { window = 252, min_obs = 189 }
//!
//! [kinks]
//! extremum_window = 9
//! reference_lookback = 26
//! vol_window = 52
//! horizon = 4
//!
//! [[pools]]
//! name = "us"
//! liquidity_size = 500
//! synthetic = { n_stocks = 300, n_days = 2500, n_sectors = 4 }
//!
//! [[pools]]
//! name = "europe"
//! liquidity_size = 400
//! prices = "data/europe_prices.csv"
//! fundamentals = "data/europe_fundamentals.csv"
//! ```
//!
//! A pool reads either a `synthetic` panel spec or a `prices` CSV. The seed
//! of a synthetic pool defaults to `seed + position of the pool`.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use portcon_core::analytics::{KinkConfig, DEFAULT_KINK_THRESHOLDS, ROLLING_WINDOW};
use portcon_core::backtest::{Aggregation, BacktestConfig};
use portcon_core::construction::Scheme;
use portcon_core::data::{SyntheticSpec, ADV_WINDOW};
use portcon_core::signals::Factor;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Environment variable naming the root under which relative output
/// directories are created.
pub const OUTPUT_ROOT_ENV: &str = "PORTCON_OUTPUT_ROOT";
/// Output directory used when neither the file nor the flags give one.
pub const DEFAULT_OUTPUT_DIR: &str = "portcon-output";
pub const DEFAULT_MAX_K: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
    pub pools: Vec<PoolConfig>,
    pub factors: Vec<Factor>,
    pub schemes: Vec<Scheme>,
    /// Upper bound accepted for the `k` of model-based schemes.
    pub max_k: usize,
    pub backtest: BacktestConfig,
    pub aggregation: Aggregation,
    pub kinks: KinkConfig,
    pub kink_thresholds: Vec<f64>,
    pub rolling_window: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: None,
            pools: vec![PoolConfig::default()],
            factors: vec![Factor::Momentum],
            schemes: vec![
                Scheme::Ff,
                Scheme::Neutral,
                Scheme::Beta,
                Scheme::Betaopt { k: 5 },
                Scheme::Markowitz { k: 5 },
            ],
            max_k: DEFAULT_MAX_K,
            backtest: BacktestConfig::default(),
            aggregation: Aggregation::Flat,
            kinks: KinkConfig::default(),
            kink_thresholds: DEFAULT_KINK_THRESHOLDS.to_vec(),
            rolling_window: ROLLING_WINDOW,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoolConfig {
    pub name: String,
    pub cap_filter_size: Option<usize>,
    pub liquidity_size: usize,
    pub adv_window: usize,
    pub synthetic: Option<SyntheticSpec>,
    pub prices: Option<PathBuf>,
    pub fundamentals: Option<PathBuf>,
}

impl Default for PoolConfig {
    fn default() -> Self {
        Self {
            name: "synthetic".into(),
            cap_filter_size: None,
            liquidity_size: 1000,
            adv_window: ADV_WINDOW,
            synthetic: None,
            prices: None,
            fundamentals: None,
        }
    }
}

/// Where a pool's panel comes from, once resolved.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource<'a> {
    Synthetic(&'a SyntheticSpec),
    Csv { prices: &'a Path, fundamentals: Option<&'a Path> },
}

impl RunConfig {
    /// Output directory, placed under `root` when relative.
    pub fn output_path(&self, root: Option<&Path>) -> PathBuf {
        let dir = self.output_dir.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR));
        match root {
            Some(root) if dir.is_relative() => root.join(dir),
            _ => dir,
        }
    }
}

impl PoolConfig {
    pub fn source(&self) -> DataSource<'_> {
        match (&self.synthetic, &self.prices) {
            (_, Some(p)) => DataSource::Csv { prices: p, fundamentals: self.fundamentals.as_deref() },
            (Some(s), None) => DataSource::Synthetic(s),
            (None, None) => unreachable!("pool sources are filled in by resolve"),
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
    pub factors: Vec<String>,
    pub schemes: Vec<String>,
    pub max_k: Option<usize>,
    pub start: Option<chrono::NaiveDate>,
    pub end: Option<chrono::NaiveDate>,
    pub commission_bps: Option<f64>,
    pub half_spread_bps: Option<f64>,
    pub correlation_window: Option<usize>,
    pub n_stocks: Option<usize>,
    pub n_days: Option<usize>,
}

fn config_error(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

/// Reads a TOML run configuration.
pub fn read_config(path: &Path) -> Result<RunConfig, CliError> {
    let text =
        std::fs::read_to_string(path).map_err(|e| config_error(format!("cannot read {}: {e}", path.display())))?;
    parse_config(&text).map_err(|e| match e {
        CliError::Config(m) => config_error(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn parse_config(text: &str) -> Result<RunConfig, CliError> {
    toml::from_str(text).map_err(|e| config_error(e.to_string()))
}

/// Applies the overrides, fills derived values and validates the result.
pub fn resolve(mut config: RunConfig, overrides: &Overrides) -> Result<RunConfig, CliError> {
    if let Some(s) = overrides.seed {
        config.seed = s;
    }
    if let Some(d) = &overrides.output_dir {
        config.output_dir = Some(d.clone());
    }
    if !overrides.factors.is_empty() {
        config.factors = overrides
            .factors
            .iter()
            .map(|f| {
                f.parse::<Factor>()
                    .map_err(|_| config_error(format!("unknown factor `{f}`; valid: {}", Factor::ids().join(", "))))
            })
            .collect::<Result<_, _>>()?;
    }
    if !overrides.schemes.is_empty() {
        config.schemes = overrides
            .schemes
            .iter()
            .map(|s| s.parse::<Scheme>().map_err(|e| config_error(e.to_string())))
            .collect::<Result<_, _>>()?;
    }
    if let Some(k) = overrides.max_k {
        config.max_k = k;
    }
    if overrides.start.is_some() {
        config.backtest.start = overrides.start;
    }
    if overrides.end.is_some() {
        config.backtest.end = overrides.end;
    }
    if let Some(c) = overrides.commission_bps {
        config.backtest.costs.commission_bps = c;
    }
    if let Some(c) = overrides.half_spread_bps {
        config.backtest.costs.half_spread_bps = c;
    }
    if let Some(w) = overrides.correlation_window {
        config.backtest.correlation.window = w;
    }

    if config.output_dir.is_none() {
        config.output_dir = Some(PathBuf::from(DEFAULT_OUTPUT_DIR));
    }

    for (position, pool) in config.pools.iter_mut().enumerate() {
        if pool.prices.is_some() && pool.synthetic.is_some() {
            return Err(config_error(format!("pool `{}` sets both `prices` and `synthetic`", pool.name)));
        }
        if pool.prices.is_none() {
            if pool.fundamentals.is_some() {
                return Err(config_error(format!("pool `{}` has `fundamentals` without `prices`", pool.name)));
            }
            let spec = pool.synthetic.get_or_insert_with(SyntheticSpec::default);
            if spec.seed == 0 {
                spec.seed = config.seed.wrapping_add(position as u64);
            }
            if let Some(n) = overrides.n_stocks {
                spec.n_stocks = n;
            }
            if let Some(n) = overrides.n_days {
                spec.n_days = n;
            }
        }
    }
    validate(&config)?;
    Ok(config)
}

/// Checks every cross-field constraint of a resolved configuration.
pub fn validate(config: &RunConfig) -> Result<(), CliError> {
    if config.pools.is_empty() {
        return Err(config_error("at least one pool is required"));
    }
    let mut names = BTreeSet::new();
    for pool in &config.pools {
        if pool.name.is_empty() || !pool.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
            return Err(config_error(format!("pool name `{}` must be non-empty and use [A-Za-z0-9_-]", pool.name)));
        }
        if pool.name == crate::report::WORLD_DIR {
            return Err(config_error(format!("pool name `{}` is reserved", pool.name)));
        }
        if !names.insert(pool.name.as_str()) {
            return Err(config_error(format!("duplicate pool name `{}`", pool.name)));
        }
        if pool.liquidity_size == 0 || pool.adv_window == 0 {
            return Err(config_error(format!("pool `{}`: liquidity_size and adv_window must be positive", pool.name)));
        }
        if let Some(spec) = &pool.synthetic {
            spec.validate().map_err(|e| config_error(format!("pool `{}`: {e}", pool.name)))?;
        }
    }
    if config.factors.is_empty() {
        return Err(config_error("at least one factor is required"));
    }
    if config.schemes.is_empty() {
        return Err(config_error(format!("at least one scheme is required; valid: {}", Scheme::valid_ids())));
    }
    if config.max_k == 0 {
        return Err(config_error("max_k must be positive"));
    }
    for s in &config.schemes {
        if let Some(k) = s.model_k() {
            if k > config.max_k {
                return Err(config_error(format!("scheme `{s}`: k = {k} exceeds max_k = {}", config.max_k)));
            }
        }
    }
    let unique: BTreeSet<String> = config.schemes.iter().map(|s| s.to_string()).collect();
    if unique.len() != config.schemes.len() {
        return Err(config_error("schemes must not repeat"));
    }
    let unique: BTreeSet<Factor> = config.factors.iter().copied().collect();
    if unique.len() != config.factors.len() {
        return Err(config_error("factors must not repeat"));
    }
    config.backtest.costs.validate().map_err(|e| config_error(e.to_string()))?;
    let b = &config.backtest;
    if b.correlation.window < 2 || b.beta_window < 2 || b.calibration_window < 2 {
        return Err(config_error("correlation window, beta window and calibration window must be at least 2"));
    }
    if b.halflife_grid.is_empty() || b.halflife_grid.iter().any(|h| !(*h > 0.0) || !h.is_finite()) {
        return Err(config_error("halflife_grid must hold positive values"));
    }
    if let (Some(s), Some(e)) = (b.start, b.end) {
        if s > e {
            return Err(config_error(format!("start {s} is after end {e}")));
        }
    }
    if config.kink_thresholds.is_empty() || config.kink_thresholds.iter().any(|n| !(*n > 0.0) || !n.is_finite()) {
        return Err(config_error("kink_thresholds must hold positive values"));
    }
    if config.rolling_window < 2 {
        return Err(config_error("rolling_window must be at least 2"));
    }
    if let Aggregation::Weighted(w) = &config.aggregation {
        if w.len() != config.pools.len() || w.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(config_error(format!("aggregation weights: {} positive values required", config.pools.len())));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn example_file_parses() {
        let text = r#"
            seed = 7
            factors = ["momentum", "lowvol"]
            schemes = ["ff", "markowitz:k=3", "costaware:k=2"]
            [backtest]
            start = "2003-01-02"
            costs = { commission_bps = 0.5, half_spread_bps = 2.0 }
            [[pools]]
            name = "us"
            synthetic = { n_stocks = 30, n_days = 600 }
            [[pools]]
            name = "eu"
            prices = "prices.csv"
        "#;
        let c = resolve(parse_config(text).unwrap(), &Overrides::default()).unwrap();
        assert_eq!(c.schemes[1], Scheme::Markowitz { k: 3 });
        assert_eq!(c.backtest.costs.half_spread_bps, 2.0);
        assert_eq!(c.pools[0].synthetic.as_ref().unwrap().seed, 7);
        assert_eq!(c.pools[0].synthetic.as_ref().unwrap().n_stocks, 30);
        assert!(matches!(c.pools[1].source(), DataSource::Csv { .. }));
        assert_eq!(c.output_dir.as_deref(), Some(Path::new(DEFAULT_OUTPUT_DIR)));
    }

    #[test]
    fn flags_override_the_file() {
        let file = parse_config("seed = 1\nschemes = [\"ff\"]\n").unwrap();
        let o = Overrides {
            seed: Some(9),
            schemes: vec!["neutral".into(), "betaopt:k=2".into()],
            half_spread_bps: Some(0.0),
            n_days: Some(700),
            output_dir: Some("x".into()),
            ..Default::default()
        };
        let c = resolve(file, &o).unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.schemes, vec![Scheme::Neutral, Scheme::Betaopt { k: 2 }]);
        assert_eq!(c.backtest.costs.half_spread_bps, 0.0);
        assert_eq!(c.pools[0].synthetic.as_ref().unwrap().n_days, 700);
        assert_eq!(c.pools[0].synthetic.as_ref().unwrap().seed, 9);
        assert_eq!(c.output_path(Some(Path::new("/tmp/root"))), PathBuf::from("/tmp/root/x"));
        assert_eq!(c.output_path(None), PathBuf::from("x"));
    }

    #[test]
    fn invalid_configurations_are_rejected() {
        let unknown = parse_config("schemes = [\"blend\"]").unwrap_err().to_string();
        assert!(unknown.contains("markowitz:k=<int>"), "{unknown}");
        assert!(parse_config("sede = 3").is_err());
        let bad = |text: &str| resolve(parse_config(text).unwrap(), &Overrides::default()).unwrap_err();
        assert!(bad("schemes = [\"markowitz:k=6\"]").to_string().contains("max_k"));
        assert!(
            resolve(parse_config("max_k = 8\nschemes = [\"markowitz:k=6\"]").unwrap(), &Overrides::default()).is_ok()
        );
        assert!(bad("[[pools]]\nname = \"a\"\n[[pools]]\nname = \"a\"").to_string().contains("duplicate"));
        assert!(bad("[[pools]]\nname = \"world\"").to_string().contains("reserved"));
        assert!(bad("kink_thresholds = []").to_string().contains("kink"));
        assert!(bad("[backtest.costs]\nhalf_spread_bps = -1.0").to_string().contains("config"));
        let o = Overrides { factors: vec!["value".into()], ..Default::default() };
        let e = resolve(RunConfig::default(), &o).unwrap_err().to_string();
        assert!(e.contains("momentum"), "{e}");
        assert_eq!(resolve(RunConfig::default(), &o).unwrap_err().exit_code(), 1);
    }
}
