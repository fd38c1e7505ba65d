mod common;

use carbomarket_core::clearing::{clear_market, Bid, BidSet};
use carbomarket_core::curve::PiecewiseLinearCurve;
use carbomarket_core::linalg::Matrix;
use carbomarket_core::lp::{solve, LpProblem, LpStatus};
use carbomarket_core::network::StorageUnit;
use carbomarket_core::storage::*;
use common::{case, plant};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_unit(rng: &mut impl Rng) -> StorageUnit {
    let e_min = rng.random_range(0.0..5.0);
    let e_max = e_min + rng.random_range(8.0..40.0);
    let eta_c = rng.random_range(0.8..1.0);
    let eta_d = rng.random_range(0.8..1.0);
    let gamma_hi = rng.random_range(0.03..0.2);
    let gamma_lo = rng.random_range(0.0..0.9) * gamma_hi * eta_c * eta_d;
    StorageUnit {
        id: 0,
        bus: 0,
        p_max: rng.random_range(1.0..8.0),
        eta_c,
        eta_d,
        e_min,
        e_max,
        e_init: rng.random_range(e_min..e_max),
        gamma_lo,
        gamma_hi,
        n_segments: 50,
    }
}

/// Grid argmin of the exact drift-plus-penalty over net power in steps of
/// `step` MW.
fn grid_argmin(q: f64, gamma: f64, params: &PolicyParams, unit: &StorageUnit, step: f64) -> f64 {
    let n = (unit.p_max / step).round() as i64;
    let mut best = (f64::INFINITY, 0.0);
    for k in -n..=n {
        let p = (k as f64 * step).clamp(-unit.p_max, unit.p_max);
        let (pc, pd) = if p < 0.0 { (-p, 0.0) } else { (0.0, p) };
        let v = drift_plus_penalty(q, gamma, pc, pd, params, unit, 1.0).unwrap();
        if v < best.0 {
            best = (v, p);
        }
    }
    best.1
}

#[test]
fn closed_form_matches_grid_argmin() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let unit = StorageUnit { e_init: 10.0, ..random_unit(&mut rng) };
    let params = choose_parameters(&unit).unwrap();
    let mut worst: f64 = 0.0;
    for _ in 0..500 {
        let q = rng.random_range(-2.0 * params.v * unit.gamma_hi - 10.0..10.0);
        let gamma = rng.random_range(-0.05..0.25);
        let p = optimal_power(q, gamma, &params, &unit, 1.0);
        worst = worst.max((p - grid_argmin(q, gamma, &params, &unit, 1e-4)).abs());
    }
    assert!(worst <= 1e-3, "{worst}");
}

#[test]
fn policy_keeps_soc_in_bounds() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..20 {
        let unit = random_unit(&mut rng);
        let params = choose_parameters(&unit).unwrap();
        assert!(params_in_feasible_range(&params, &unit));
        let mut state = StorageState::new(&unit, &params);
        for _ in 0..20_000 {
            let gamma = rng.random_range(unit.gamma_lo..=unit.gamma_hi);
            let p = optimal_power(state.q, gamma, &params, &unit, 1.0);
            state = update_state(&state, p, 1.0, &unit, &params).unwrap();
        }
    }
}

/// Relaxed offline problem as a plain LP: variables (p_c, p_d, slack_c,
/// slack_d) per period plus SoC slacks.
fn offline_lp(prices: &[f64], unit: &StorageUnit) -> f64 {
    let t = prices.len();
    // columns: pc_t, pd_t, sc_t, sd_t, e_lo_t, e_hi_t
    let n = 6 * t;
    let m = 4 * t;
    let mut a = Matrix::zeros(m, n);
    let mut b = vec![0.0; m];
    let mut c = vec![0.0; n];
    for k in 0..t {
        let (pc, pd, sc, sd, lo, hi) = (6 * k, 6 * k + 1, 6 * k + 2, 6 * k + 3, 6 * k + 4, 6 * k + 5);
        c[pc] = prices[k];
        c[pd] = -prices[k];
        a.set(4 * k, pc, 1.0);
        a.set(4 * k, sc, 1.0);
        b[4 * k] = unit.p_max;
        a.set(4 * k + 1, pd, 1.0);
        a.set(4 * k + 1, sd, 1.0);
        b[4 * k + 1] = unit.p_max;
        // e_init + Σ_{j≤k} (pc η_c − pd/η_d) − e_lo = e_min, and + e_hi = e_max
        for j in 0..=k {
            a.set(4 * k + 2, 6 * j, unit.eta_c);
            a.set(4 * k + 2, 6 * j + 1, -1.0 / unit.eta_d);
            a.set(4 * k + 3, 6 * j, unit.eta_c);
            a.set(4 * k + 3, 6 * j + 1, -1.0 / unit.eta_d);
        }
        a.set(4 * k + 2, lo, -1.0);
        b[4 * k + 2] = unit.e_min - unit.e_init;
        a.set(4 * k + 3, hi, 1.0);
        b[4 * k + 3] = unit.e_max - unit.e_init;
    }
    let sol = solve(&LpProblem::new(c, a, b).unwrap()).unwrap();
    assert_eq!(sol.status, LpStatus::Optimal);
    -sol.objective * 1000.0
}

#[test]
fn offline_matches_lp_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..30 {
        let unit = random_unit(&mut rng);
        let t = rng.random_range(2..12);
        let prices: Vec<f64> = (0..t).map(|_| rng.random_range(-0.01..0.15)).collect();
        let sol = offline_optimal(&prices, &unit, 1.0);
        let oracle = offline_lp(&prices, &unit);
        assert!((sol.revenue - oracle).abs() <= 1e-6 * oracle.abs().max(1.0), "{} vs {oracle}", sol.revenue);
        let recomputed: f64 = sol.period_revenue.iter().sum();
        assert!((recomputed - sol.revenue).abs() < 1e-6);
    }
}

#[test]
fn offline_dominates_online() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for _ in 0..50 {
        let unit = random_unit(&mut rng);
        let params = choose_parameters(&unit).unwrap();
        let prices: Vec<f64> = (0..50).map(|_| rng.random_range(unit.gamma_lo..=unit.gamma_hi)).collect();
        let mut state = StorageState::new(&unit, &params);
        let mut online = 0.0;
        for &g in &prices {
            let p = optimal_power(state.q, g, &params, &unit, 1.0);
            online += g * p * 1000.0;
            state = update_state(&state, p, 1.0, &unit, &params).unwrap();
        }
        let offline = offline_optimal(&prices, &unit, 1.0);
        assert!(offline.revenue >= online - 1e-6, "{} < {online}", offline.revenue);
    }
}

#[test]
fn bounds_are_policy_at_price_extremes() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let unit = random_unit(&mut rng);
    let params = choose_parameters(&unit).unwrap();
    for _ in 0..1000 {
        let q = rng.random_range(unit.e_min - params.e_offset..=unit.e_max - params.e_offset);
        let (lo, hi) = power_bounds(q, &params, &unit, 1.0);
        assert_eq!(lo, optimal_power(q, unit.gamma_lo, &params, &unit, 1.0));
        assert_eq!(hi, optimal_power(q, unit.gamma_hi, &params, &unit, 1.0));
        assert!(lo <= 0.0 && hi >= 0.0);
    }
}

#[test]
fn bid_curve_dead_band_matches_subgradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let unit = random_unit(&mut rng);
    let params = choose_parameters(&unit).unwrap();
    let psi = 0.01;
    // exact bid slopes just left and right of 0
    let h = 1e-7;
    for _ in 0..100 {
        let q = rng.random_range(unit.e_min - params.e_offset..=unit.e_max - params.e_offset);
        let left = (bid_cost(0.0, q, psi, &params, &unit, 1.0) - bid_cost(-h, q, psi, &params, &unit, 1.0)) / h;
        let right = (bid_cost(h, q, psi, &params, &unit, 1.0) - bid_cost(0.0, q, psi, &params, &unit, 1.0)) / h;
        let (a, b) = dead_band(q, psi, &params, &unit);
        assert!((left - a).abs() < 1e-5 && (right - b).abs() < 1e-5);
    }
}

/// Clears one bus against the storage bid and a price-setting generator
/// with unlimited capacity at `gamma` $/kWh.
fn clear_against_price(state: &StorageState, params: &PolicyParams, unit: &StorageUnit, gamma: f64, n: usize) -> f64 {
    let c = case(vec![10.0], &[], vec![plant(0, 0.05, 0.0, 0.0, 1000.0)], vec![]);
    let curve = bid_curve(state.q, state.psi_prev, params, unit, 1.0, n).unwrap();
    let (lo, hi) = (curve.lo(), curve.hi());
    let bids = BidSet {
        generators: vec![Bid {
            bus: 0,
            curve: PiecewiseLinearCurve::linear(gamma * 1000.0, 0.0, 0.0, 1000.0).unwrap(),
            emission: None,
            p_min: 0.0,
            p_max: 1000.0,
        }],
        storages: vec![Bid { bus: 0, curve, emission: None, p_min: lo, p_max: hi }],
        demands: vec![10.0],
    };
    clear_market(&c, &bids).unwrap().storage_dispatch[0]
}

#[test]
fn market_clearing_reproduces_policy() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let unit = random_unit(&mut rng);
    let params = choose_parameters(&unit).unwrap();
    for _ in 0..50 {
        let e = rng.random_range(unit.e_min..=unit.e_max);
        let psi_prev = rng.random_range(0.0..0.02);
        let state = StorageState { e, q: e - params.e_offset, psi_prev };
        // the market price λ; the storage sees γ = λ + ψ
        let lambda = rng.random_range(-0.05..0.3);
        let (lo, hi) = power_bounds(state.q, &params, &unit, 1.0);
        let expected = optimal_power(state.q, lambda + psi_prev, &params, &unit, 1.0).clamp(lo, hi);
        let p = clear_against_price(&state, &params, &unit, lambda, 50);
        let tol = (hi - lo) / 49.0 + 1e-9;
        assert!((p - expected).abs() <= tol, "{p} vs {expected} (tol {tol})");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]
    #[test]
    fn policy_is_monotone(q1 in -60.0f64..10.0, dq in 0.0f64..10.0, g1 in -0.05f64..0.3, dg in 0.0f64..0.1) {
        let unit = StorageUnit {
            id: 0, bus: 0, p_max: 4.0, eta_c: 0.95, eta_d: 0.95, e_min: 4.0, e_max: 36.0, e_init: 10.0,
            gamma_lo: 0.02, gamma_hi: 0.09, n_segments: 50,
        };
        let params = choose_parameters(&unit).unwrap();
        // monotonicity holds on the reachable queue range q ≤ 0
        let q1 = q1.min(0.0);
        let q2 = (q1 + dq).min(0.0);
        prop_assert!(optimal_power(q1, g1 + dg, &params, &unit, 1.0) >= optimal_power(q1, g1, &params, &unit, 1.0) - 1e-12);
        prop_assert!(optimal_power(q2, g1, &params, &unit, 1.0) >= optimal_power(q1, g1, &params, &unit, 1.0) - 1e-12);
    }

    #[test]
    fn parameters_satisfy_feasible_range(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let unit = random_unit(&mut rng);
        let params = choose_parameters(&unit).unwrap();
        prop_assert!(params_in_feasible_range(&params, &unit));
    }
}
