//! Property tests for the statistical and metric invariants.

use proptest::collection::vec;
use proptest::prelude::*;

use lanecut_core::metrics::{
    acceleration_percentage, cumulative_velocity_change, max_acceleration, min_deceleration,
    velocity_change_ratio, WindowSeries,
};
use lanecut_core::model::{default_windows, window_to_frames};
use lanecut_core::stats::{p_value, rank_sum_u, PMode};
use lanecut_core::synth::make_null_scenario;

fn finite_sample(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
    vec(-1e3..1e3f64, 1..max_len)
}

/// Paired (vx, ax) series of equal length.
fn window_series_parts(max_len: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (2..max_len).prop_flat_map(|n| (vec(1.0..60.0f64, n..=n), vec(-3.0..3.0f64, n..=n)))
}

/// Distinct integers as floats: a tie-free sample.
fn distinct_ints(n: std::ops::Range<usize>) -> impl Strategy<Value = Vec<f64>> {
    vec(-10_000i64..10_000, n).prop_map(|mut v| {
        v.sort_unstable();
        v.dedup();
        v.into_iter().map(|x| x as f64).collect()
    })
}

proptest! {
    #[test]
    fn u_statistics_are_antisymmetric(a in finite_sample(30), b in finite_sample(30)) {
        let (u_ab, _, _) = rank_sum_u(&a, &b).unwrap();
        let (u_ba, _, _) = rank_sum_u(&b, &a).unwrap();
        let n = (a.len() * b.len()) as f64;
        prop_assert!((u_ab + u_ba - n).abs() < 1e-9);
    }

    #[test]
    fn two_sided_p_is_symmetric(a in finite_sample(25), b in finite_sample(25)) {
        let ab = p_value(&a, &b, PMode::Auto).unwrap();
        let ba = p_value(&b, &a, PMode::Auto).unwrap();
        prop_assert_eq!(ab.p_two_sided, ba.p_two_sided);
        prop_assert!((0.0..=1.0).contains(&ab.p_two_sided));
    }

    #[test]
    fn rank_test_is_invariant_under_monotone_transform(
        a in distinct_ints(2..12),
        b in distinct_ints(2..12),
    ) {
        prop_assume!(!a.is_empty() && !b.is_empty());
        // Strictly increasing transform of the pooled data.
        let f = |x: f64| (x / 100.0).exp() + x / 5.0;
        let fa: Vec<f64> = a.iter().map(|&x| f(x)).collect();
        let fb: Vec<f64> = b.iter().map(|&x| f(x)).collect();
        let raw = p_value(&a, &b, PMode::Auto).unwrap();
        let mapped = p_value(&fa, &fb, PMode::Auto).unwrap();
        prop_assert_eq!(raw.u_statistic, mapped.u_statistic);
        prop_assert_eq!(raw.p_two_sided, mapped.p_two_sided);
    }

    #[test]
    fn shifting_one_group_up_drives_its_opponent_u_down(
        a in distinct_ints(2..12),
        b in distinct_ints(2..12),
    ) {
        prop_assume!(!a.is_empty() && !b.is_empty());
        let (u_b_before, _, _) = rank_sum_u(&b, &a).unwrap();
        // Shift a above the pooled range: every b now loses each pair.
        let span = a
            .iter()
            .chain(&b)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
        let c = span.1 - span.0 + 1.0;
        let shifted: Vec<f64> = a.iter().map(|&x| x + c).collect();
        let (u_b_after, _, _) = rank_sum_u(&b, &shifted).unwrap();
        prop_assert_eq!(u_b_after, 0.0);
        if u_b_before > 0.0 {
            prop_assert!(u_b_after < u_b_before);
        }
    }

    #[test]
    fn exact_p_matches_enumeration_on_small_samples(
        a in distinct_ints(1..7),
        b in distinct_ints(1..7),
    ) {
        prop_assume!(!a.is_empty() && !b.is_empty() && a.len() + b.len() <= 12);
        // Tie-free across the pooled sample.
        let mut pooled: Vec<f64> = a.iter().chain(&b).copied().collect();
        pooled.sort_by(f64::total_cmp);
        prop_assume!(pooled.windows(2).all(|w| w[0] != w[1]));

        let r = p_value(&a, &b, PMode::Exact).unwrap();
        let brute = enumeration_p(&a, &b);
        prop_assert_eq!(r.p_two_sided, brute);
    }

    #[test]
    fn metrics_shift_invariance(
        (vx, ax) in window_series_parts(120),
        shift in 0.1..20.0f64,
    ) {
        let s = WindowSeries::new(vx.clone(), ax.clone(), 0.04).unwrap();
        let shifted = WindowSeries::new(
            vx.iter().map(|v| v + shift).collect(),
            ax.clone(),
            0.04,
        ).unwrap();

        prop_assert_eq!(acceleration_percentage(&s), acceleration_percentage(&shifted));
        prop_assert_eq!(cumulative_velocity_change(&s), cumulative_velocity_change(&shifted));
        prop_assert_eq!(max_acceleration(&s), max_acceleration(&shifted));
        prop_assert_eq!(min_deceleration(&s), min_deceleration(&shifted));

        let rv = velocity_change_ratio(&s).unwrap();
        let rv_shifted = velocity_change_ratio(&shifted).unwrap();
        let v_min = vx.iter().cloned().fold(f64::INFINITY, f64::min);
        let v_max = vx.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if v_max > v_min {
            prop_assert!(rv_shifted < rv, "rv {} !< {}", rv_shifted, rv);
        } else {
            prop_assert_eq!(rv, 0.0);
            prop_assert_eq!(rv_shifted, 0.0);
        }
    }

    #[test]
    fn total_variation_bounds_net_change(vx in vec(1.0..60.0f64, 2..120)) {
        // Accelerations as exact finite differences of the velocities.
        let dt = 0.04;
        let n = vx.len();
        let ax: Vec<f64> = (0..n)
            .map(|i| if i + 1 < n { (vx[i + 1] - vx[i]) / dt } else { 0.0 })
            .collect();
        let s = WindowSeries::new(vx.clone(), ax, dt).unwrap();
        let dv = cumulative_velocity_change(&s);
        let net = (vx[n - 1] - vx[0]).abs();
        prop_assert!(dv >= net - 1e-9 * net.max(1.0), "dv {} < net {}", dv, net);
        prop_assert!(min_deceleration(&s) <= max_acceleration(&s));
    }

    #[test]
    fn metric_ops_are_pure((vx, ax) in window_series_parts(60)) {
        let s = WindowSeries::new(vx, ax, 0.04).unwrap();
        prop_assert_eq!(
            cumulative_velocity_change(&s).to_bits(),
            cumulative_velocity_change(&s).to_bits()
        );
        prop_assert_eq!(
            velocity_change_ratio(&s).unwrap().to_bits(),
            velocity_change_ratio(&s).unwrap().to_bits()
        );
    }

    #[test]
    fn window_discretization_is_offset_symmetric(
        offset in 0.01..10.0f64,
        anchor in 0i64..10_000,
    ) {
        // Mirrored offsets give mirrored frame shifts.
        let w = lanecut_core::model::WindowSpec::new(
            lanecut_core::model::Anchor::T1, -offset, offset,
        );
        let (s, e) = window_to_frames(&w, anchor, 0.04);
        prop_assert_eq!(anchor - s, e - anchor);
    }
}

/// Brute-force two-sided exact p by enumerating every group assignment.
fn enumeration_p(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() + b.len();
    assert!(n <= 20);
    let mut pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    pooled.sort_by(f64::total_cmp);
    let rank_of = |x: f64| pooled.iter().position(|&p| p == x).unwrap() as f64 + 1.0;
    let obs: f64 = a.iter().map(|&x| rank_of(x)).sum();

    let mut le = 0u64;
    let mut ge = 0u64;
    let mut total = 0u64;
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != a.len() {
            continue;
        }
        let sum: f64 = (0..n).filter(|i| mask & (1 << i) != 0).map(|i| (i + 1) as f64).sum();
        total += 1;
        if sum <= obs {
            le += 1;
        }
        if sum >= obs {
            ge += 1;
        }
    }
    (2.0 * (le.min(ge) as f64) / total as f64).min(1.0)
}

#[test]
fn recording_serde_round_trip_is_bit_exact() {
    let rec = make_null_scenario(12.0, &[31.2, 27.9, 24.4]);
    let json = serde_json::to_string(&rec).unwrap();
    let back: lanecut_core::model::Recording = serde_json::from_str(&json).unwrap();
    assert_eq!(rec, back);
    for (id, track) in &rec.tracks {
        let bt = &back.tracks[id];
        for (a, b) in track.states.iter().zip(&bt.states) {
            assert_eq!(a.x.to_bits(), b.x.to_bits());
            assert_eq!(a.vy_raw.to_bits(), b.vy_raw.to_bits());
            assert_eq!(a.ax.to_bits(), b.ax.to_bits());
        }
    }
}

#[test]
fn default_window_grid_matches_analysis_plan() {
    let windows = default_windows();
    let t1_count = windows.iter().filter(|w| w.anchor == lanecut_core::model::Anchor::T1).count();
    assert_eq!((t1_count, windows.len() - t1_count), (4, 5));
}
