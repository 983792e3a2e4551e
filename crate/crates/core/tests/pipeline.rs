use nalgebra::{DMatrix, DVector};
use portcon_core::analytics::{skew_curve, weekly_sum, PerformanceSummary};
use portcon_core::backtest::{
    aggregate_worldwide, normalize_risk, run_pool_backtests, Aggregation, BacktestConfig, CostParams,
};
use portcon_core::construction::Scheme;
use portcon_core::covariance::{clip_spectrum, CorrelationConfig};
use portcon_core::data::{
    generate_synthetic, load_panel, select_universe, write_panel, IngestConfig, SyntheticSpec, UniverseConfig,
};
use portcon_core::signals::Factor;
use proptest::prelude::*;

fn pool(seed: u64, n_days: usize) -> (portcon_core::data::MarketPanel, portcon_core::data::Universe) {
    let panel = generate_synthetic(&SyntheticSpec { n_stocks: 40, n_days, seed, ..Default::default() }).unwrap();
    let universe =
        select_universe(&panel, &UniverseConfig { pool_name: format!("p{seed}"), ..Default::default() }).unwrap();
    (panel, universe)
}

fn short_config() -> BacktestConfig {
    BacktestConfig {
        correlation: CorrelationConfig { window: 200, min_obs: 120, ..Default::default() },
        costs: CostParams { commission_bps: 1.0, half_spread_bps: 4.0 },
        calibration_window: 60,
        ..Default::default()
    }
}

#[test]
fn accounting_identities_hold_for_every_scheme() {
    let (panel, universe) = pool(1, 800);
    let schemes = [
        Scheme::Ff,
        Scheme::Neutral,
        Scheme::Beta,
        Scheme::Betaopt { k: 2 },
        Scheme::Markowitz { k: 3 },
        Scheme::CostAware { k: 3 },
    ];
    let results = run_pool_backtests(&panel, &universe, Factor::Momentum, &schemes, &short_config()).unwrap();
    let first = &results[0].dates;
    for r in &results {
        assert_eq!(&r.dates, first, "{} covers other dates", r.scheme);
        assert_eq!(r.positions.len(), r.len());
        for k in 0..r.len() {
            assert_eq!(r.net_pnl[k], r.pre_cost_pnl[k] - r.cost[k]);
            assert!((r.cost[k] - 5e-4 * r.turnover[k]).abs() < 1e-15);
            let pos = &r.positions[k];
            assert!((r.gross[k] - 1.0).abs() < 1e-12 || r.gross[k] == 0.0);
            let t = pos.date_index;
            assert_eq!(panel.dates()[t], r.dates[k]);
            let members = universe.members_at(t).unwrap();
            assert!(pos.stocks.iter().all(|i| members.contains(i) && panel.is_tradable(t, *i)));
            // yesterday's book earns today's returns
            if k > 0 {
                let prev = &r.positions[k - 1];
                let pnl: f64 =
                    prev.stocks.iter().zip(&prev.x).map(|(&i, x)| x * panel.returns().get(t, i).unwrap_or(0.0)).sum();
                assert!((pnl - r.pre_cost_pnl[k]).abs() < 1e-15, "{} day {k}", r.scheme);
            }
        }
    }
}

#[test]
fn csv_round_trip_reproduces_the_backtest() {
    let (panel, universe) = pool(2, 700);
    let dir = tempfile::tempdir().unwrap();
    let (prices, fundamentals) = (dir.path().join("prices.csv"), dir.path().join("fundamentals.csv"));
    write_panel(&panel, &prices, Some(&fundamentals)).unwrap();
    let loaded = load_panel(&prices, &IngestConfig { fundamentals: Some(fundamentals) }).unwrap();
    let reselected =
        select_universe(&loaded, &UniverseConfig { pool_name: "p2".into(), ..Default::default() }).unwrap();
    let cfg = short_config();
    for factor in [Factor::Momentum, Factor::Book] {
        let a = run_pool_backtests(&panel, &universe, factor, &[Scheme::Neutral], &cfg).unwrap();
        let b = run_pool_backtests(&loaded, &reselected, factor, &[Scheme::Neutral], &cfg).unwrap();
        assert_eq!(a[0].dates, b[0].dates);
        for (x, y) in a[0].net_pnl.iter().zip(&b[0].net_pnl) {
            assert!((x - y).abs() <= 1e-12 * x.abs().max(1e-6), "{factor:?}");
        }
    }
}

#[test]
fn world_aggregation_and_risk_normalization() {
    let cfg = short_config();
    let runs: Vec<_> = [3u64, 4]
        .iter()
        .map(|&s| {
            let (panel, universe) = pool(s, 800);
            run_pool_backtests(&panel, &universe, Factor::Momentum, &[Scheme::Neutral], &cfg).unwrap().remove(0)
        })
        .collect();
    let world = aggregate_worldwide(&runs, &Aggregation::Flat).unwrap();
    assert_eq!(world.pool, "world");
    for (k, d) in world.dates.iter().enumerate() {
        let vals: Vec<f64> = runs.iter().filter_map(|r| r.position_of(*d).map(|j| r.pre_cost_pnl[j])).collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        assert!((world.pre_cost_pnl[k] - mean).abs() < 1e-15);
    }
    let normalized = normalize_risk(&[world.clone()], 0.1).unwrap().remove(0);
    let s = PerformanceSummary::of(&normalized);
    assert!((s.pre_cost.annual_vol.unwrap() - 0.1).abs() < 1e-12);
    assert_eq!(
        s.pre_cost.sharpe.map(|v| (v * 1e9).round()),
        PerformanceSummary::of(&world).pre_cost.sharpe.map(|v| (v * 1e9).round())
    );

    let weekly = weekly_sum(&world.dates, &world.net_pnl);
    let curve = skew_curve(&weekly.values);
    assert_eq!(curve.points.last().unwrap().cum_pnl, curve.total);
}

fn correlation_from(loadings: &[Vec<f64>]) -> DMatrix<f64> {
    let n = loadings.len();
    let raw = DMatrix::from_fn(n, n, |a, b| {
        let dot: f64 = loadings[a].iter().zip(&loadings[b]).map(|(x, y)| x * y).sum();
        if a == b {
            dot + 1.0
        } else {
            dot
        }
    });
    DMatrix::from_fn(n, n, |a, b| raw[(a, b)] / (raw[(a, a)] * raw[(b, b)]).sqrt())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn inverse_undoes_the_model(
        loadings in prop::collection::vec(prop::collection::vec(-2.0f64..2.0, 3), 4..20),
        vol in prop::collection::vec(0.005f64..0.05, 20),
        k in 1usize..4,
        seed in prop::collection::vec(-1.0f64..1.0, 20),
    ) {
        let n = loadings.len();
        let corr = correlation_from(&loadings);
        let model = clip_spectrum(&corr, &vol[..n], k.min(n - 1)).unwrap();
        let y = DVector::from_column_slice(&seed[..n]);
        let back = model.apply(&model.apply_inverse(&y));
        prop_assert!((&back - &y).amax() <= 1e-9 * y.amax().max(1e-12));
        let target: f64 = vol[..n].iter().map(|s| s * s).sum();
        prop_assert!((model.trace() - target).abs() <= 1e-12 * target);
        prop_assert!(model.epsilon2 > 0.0);
    }

    #[test]
    fn skew_curve_ends_at_the_total(pnl in prop::collection::vec(-1e3f64..1e3, 0..300)) {
        let c = skew_curve(&pnl);
        prop_assert_eq!(c.points.len(), pnl.len());
        if let Some(last) = c.points.last() {
            prop_assert_eq!(last.cum_pnl.to_bits(), c.total.to_bits());
        }
        prop_assert!(c.points.windows(2).all(|w| w[0].pnl.abs() <= w[1].pnl.abs()));
    }
}
