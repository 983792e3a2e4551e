//! Quarterly, causal universe selection by trailing liquidity.

use std::fmt;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use super::panel::MarketPanel;
use super::DataError;

/// Trailing window (trading days) used to rank liquidity: three months.
pub const ADV_WINDOW: usize = 63;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UniverseConfig {
    pub pool_name: String,
    /// Optional pre-filter: keep only the largest-cap stocks before ranking
    /// by liquidity.
    pub cap_filter_size: Option<usize>,
    pub liquidity_size: usize,
    pub adv_window: usize,
}

impl Default for UniverseConfig {
    fn default() -> Self {
        Self { pool_name: "synthetic".into(), cap_filter_size: None, liquidity_size: 1000, adv_window: ADV_WINDOW }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Quarter {
    pub year: i32,
    /// 1..=4
    pub q: u32,
}

impl Quarter {
    pub fn of(d: NaiveDate) -> Self {
        Self { year: d.year(), q: d.month0() / 3 + 1 }
    }
}

impl fmt::Display for Quarter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}Q{}", self.year, self.q)
    }
}

/// Eligible stocks for one calendar quarter, chosen from data strictly
/// before the quarter's first trading day.
#[derive(Debug, Clone, PartialEq)]
pub struct QuarterUniverse {
    pub quarter: Quarter,
    /// First date index of the quarter in the panel.
    pub start: usize,
    /// One past the last date index of the quarter.
    pub end: usize,
    /// Stock indices, ascending.
    pub members: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Universe {
    pub pool_name: String,
    pub cap_filter_size: Option<usize>,
    pub liquidity_size: usize,
    pub quarters: Vec<QuarterUniverse>,
    /// Quarters skipped for lack of ADV history.
    pub warmup: Vec<Quarter>,
}

impl Universe {
    pub fn quarter_at(&self, t: usize) -> Option<&QuarterUniverse> {
        let k = self.quarters.partition_point(|q| q.end <= t);
        self.quarters.get(k).filter(|q| q.start <= t)
    }

    pub fn members_at(&self, t: usize) -> Option<&[usize]> {
        self.quarter_at(t).map(|q| q.members.as_slice())
    }

    /// First date index covered by a selected quarter.
    pub fn first_date(&self) -> Option<usize> {
        self.quarters.first().map(|q| q.start)
    }
}

fn rank_desc(stocks: &mut [(usize, f64)], ids: &[String]) {
    stocks.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| ids[a.0].cmp(&ids[b.0])));
}

/// Selects, for every calendar quarter with enough history, the most liquid
/// stocks by mean ADV over the `adv_window` trading days before the quarter.
/// When `cap_filter_size` is set, only the largest stocks by the last known
/// market cap before the quarter are considered. Ties go to the
/// lexicographically smaller stock id.
pub fn select_universe(panel: &MarketPanel, config: &UniverseConfig) -> Result<Universe, DataError> {
    if config.liquidity_size == 0 {
        return Err(DataError::InvalidSpec("liquidity_size must be >= 1".into()));
    }
    if config.adv_window == 0 {
        return Err(DataError::InvalidSpec("adv_window must be >= 1".into()));
    }
    let dates = panel.dates();
    let mut bounds: Vec<(Quarter, usize, usize)> = Vec::new();
    for (t, d) in dates.iter().enumerate() {
        let q = Quarter::of(*d);
        match bounds.last_mut() {
            Some(last) if last.0 == q => last.2 = t + 1,
            _ => bounds.push((q, t, t + 1)),
        }
    }

    let ids = panel.stock_ids();
    let mut quarters = Vec::new();
    let mut warmup = Vec::new();
    for (quarter, start, end) in bounds {
        if start < config.adv_window {
            warmup.push(quarter);
            continue;
        }
        let window = start - config.adv_window..start;
        let mut candidates: Vec<usize> = (0..panel.n_stocks()).collect();
        if let Some(cap_n) = config.cap_filter_size {
            let mut caps: Vec<(usize, f64)> = candidates
                .iter()
                .filter_map(|&i| window.clone().rev().find_map(|t| panel.market_cap().get(t, i)).map(|c| (i, c)))
                .collect();
            rank_desc(&mut caps, ids);
            candidates = caps.into_iter().take(cap_n).map(|(i, _)| i).collect();
        }
        let mut liquid: Vec<(usize, f64)> = candidates
            .into_iter()
            .filter_map(|i| {
                let v = panel.adv().present(i, window.clone());
                crate::stats::mean(&v).map(|m| (i, m))
            })
            .filter(|&(_, m)| m > 0.0)
            .collect();
        rank_desc(&mut liquid, ids);
        let mut members: Vec<usize> = liquid.into_iter().take(config.liquidity_size).map(|(i, _)| i).collect();
        members.sort_unstable();
        quarters.push(QuarterUniverse { quarter, start, end, members });
    }
    if quarters.is_empty() {
        return Err(DataError::WarmUp {
            required: config.adv_window,
            quarters: warmup.iter().map(ToString::to_string).collect(),
        });
    }
    if !warmup.is_empty() {
        tracing::debug!(pool = %config.pool_name, skipped = warmup.len(), "universe warm-up quarters skipped");
    }
    Ok(Universe {
        pool_name: config.pool_name.clone(),
        cap_filter_size: config.cap_filter_size,
        liquidity_size: config.liquidity_size,
        quarters,
        warmup,
    })
}

/// Daily returns of the cap-weighted index of the universe: members of the
/// current quarter, weighted by the previous day's market cap. `None` on
/// dates outside any selected quarter or without usable constituents.
pub fn cap_weighted_index_returns(panel: &MarketPanel, universe: &Universe) -> Vec<Option<f64>> {
    let mut out = vec![None; panel.n_dates()];
    for (t, slot) in out.iter_mut().enumerate().skip(1) {
        let Some(members) = universe.members_at(t) else { continue };
        let (mut num, mut den) = (0.0, 0.0);
        for &i in members {
            if let (Some(w), Some(r)) = (panel.market_cap().get(t - 1, i), panel.returns().get(t, i)) {
                num += w * r;
                den += w;
            }
        }
        if den > 0.0 {
            *slot = Some(num / den);
        }
    }
    out
}
