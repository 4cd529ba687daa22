use perspective_core::analysis::{
    entropy_z, g_score, hysteresis_summary, kendall_tau_b, quantile_trajectories, AlignedEvents,
};
use perspective_core::env::SwitchDirection;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Sort, then interpolate between the order statistics around q·(n−1).
fn oracle_percentile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

fn events(rows: Vec<Vec<f64>>) -> AlignedEvents {
    let period = rows[0].len();
    AlignedEvents {
        direction: SwitchDirection::AtoB,
        period,
        starts: (0..rows.len()).map(|e| 150 + 2 * e * period).collect(),
        total_events: rows.len(),
        dropped: 0,
        rows,
    }
}

#[test]
fn two_stage_quantiles_match_sort_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (seeds, n_events, period) = (3, 4, 8);
    let data: Vec<Vec<Vec<f64>>> = (0..seeds)
        .map(|_| {
            (0..n_events)
                .map(|_| (0..period).map(|_| rng.random_range(-3.0..3.0)).collect())
                .collect()
        })
        .collect();
    let runs: Vec<AlignedEvents> = data.iter().cloned().map(events).collect();
    let band = quantile_trajectories(&runs).unwrap();
    for tau in 0..period {
        let medians: Vec<f64> = data
            .iter()
            .map(|run| oracle_percentile(&run.iter().map(|r| r[tau]).collect::<Vec<_>>(), 0.5))
            .collect();
        assert_eq!(band.median[tau], oracle_percentile(&medians, 0.5));
        assert_eq!(band.q25[tau], oracle_percentile(&medians, 0.25));
        assert_eq!(band.q75[tau], oracle_percentile(&medians, 0.75));
    }
}

#[test]
fn single_run_single_event_is_the_raw_series() {
    let raw = vec![0.3, -1.2, 4.0, 2.5];
    let band = quantile_trajectories(&[events(vec![raw.clone()])]).unwrap();
    assert_eq!(band.median, raw);
    assert_eq!(band.q25, raw);
    assert_eq!(band.q75, raw);
}

#[test]
fn three_run_medians_give_textbook_iqr() {
    let runs: Vec<AlignedEvents> = [3.0, 1.0, 2.0]
        .iter()
        .map(|&v| events(vec![vec![v]]))
        .collect();
    let band = quantile_trajectories(&runs).unwrap();
    assert_eq!((band.median[0], band.q25[0], band.q75[0]), (2.0, 1.5, 2.5));
}

fn oracle_kendall(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len();
    let (mut c, mut d, mut tx, mut ty) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let s = (x[i] - x[j]).signum() * (y[i] - y[j]).signum();
            let x_tied = x[i] == x[j];
            let y_tied = y[i] == y[j];
            if x_tied && !y_tied {
                tx += 0.5;
            } else if y_tied && !x_tied {
                ty += 0.5;
            } else if !x_tied && !y_tied {
                if s > 0.0 {
                    c += 0.5;
                } else {
                    d += 0.5;
                }
            }
        }
    }
    let denom = f64::sqrt((c + d + tx) * (c + d + ty));
    if denom == 0.0 {
        0.0
    } else {
        (c - d) / denom
    }
}

#[test]
fn kendall_matches_reference_values() {
    // Reference values from an independent statistics package.
    let x: Vec<f64> = (1..=8).map(f64::from).collect();
    let y = [2.0, 1.0, 3.0, 3.0, 5.0, 4.0, 4.0, 9.0];
    assert!((kendall_tau_b(&x, &y) - 0.7412493166611012).abs() < 1e-15);
    let x2 = [1.0, 1.0, 2.0, 2.0, 3.0, 3.0, 4.0, 5.0];
    let y2 = [0.5, 0.1, 0.1, 0.9, 0.3, 0.3, 0.7, 0.2];
    assert!((kendall_tau_b(&x2, &y2) - 0.07844645405527362).abs() < 1e-15);
}

#[test]
fn hysteresis_of_mirrored_ramps() {
    let ab: Vec<f64> = (0..40).map(f64::from).collect();
    let ba: Vec<f64> = ab.iter().map(|v| -v).collect();
    let s = hysteresis_summary(&ab, &ba).unwrap();
    assert_eq!((s.trend_ab, s.trend_ba, s.asymmetry), (1.0, -1.0, 0.0));
    let flat = vec![2.0; 40];
    let s = hysteresis_summary(&flat, &flat).unwrap();
    assert_eq!(
        (s.trend_ab, s.terminal_delta_ab, s.terminal_delta_ba),
        (0.0, 0.0, 0.0)
    );
}

proptest! {
    #[test]
    fn kendall_matches_pair_count_oracle(
        pairs in prop::collection::vec((0i32..6, 0i32..6), 2..30)
    ) {
        let x: Vec<f64> = pairs.iter().map(|p| p.0 as f64).collect();
        let y: Vec<f64> = pairs.iter().map(|p| p.1 as f64).collect();
        prop_assert_eq!(kendall_tau_b(&x, &y), oracle_kendall(&x, &y));
    }

    #[test]
    fn g_score_is_linear(
        g1 in prop::collection::vec(-5.0f64..5.0, 12),
        g2 in prop::collection::vec(-5.0f64..5.0, 12),
        u in prop::collection::vec(-1.0f64..1.0, 12),
        a in -3.0f64..3.0,
        b in -3.0f64..3.0,
    ) {
        let mixed: Vec<f64> = g1.iter().zip(&g2).map(|(x, y)| a * x + b * y).collect();
        let lhs = g_score(&mixed, &u);
        let rhs = a * g_score(&g1, &u) + b * g_score(&g2, &u);
        prop_assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn entropy_z_is_standardized(series in prop::collection::vec(0.0f64..1.7, 2..200)) {
        let mean = series.iter().sum::<f64>() / series.len() as f64;
        prop_assume!(series.iter().any(|v| (v - mean).abs() > 1e-6));
        let z = entropy_z(&series).unwrap();
        let n = z.len() as f64;
        let m = z.iter().sum::<f64>() / n;
        let sd = (z.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt();
        prop_assert!(m.abs() < 1e-10);
        prop_assert!((sd - 1.0).abs() < 1e-10);
    }

    #[test]
    fn quantiles_ignore_seed_and_event_order(
        values in prop::collection::vec(-10.0f64..10.0, 4 * 3 * 5),
        rot in 0usize..4,
    ) {
        let data: Vec<Vec<Vec<f64>>> = values
            .chunks(3 * 5)
            .map(|run| run.chunks(5).map(|r| r.to_vec()).collect())
            .collect();
        let forward: Vec<AlignedEvents> = data.iter().cloned().map(events).collect();
        let mut shuffled_data = data.clone();
        shuffled_data.rotate_left(rot);
        for run in &mut shuffled_data {
            run.reverse();
        }
        let shuffled: Vec<AlignedEvents> = shuffled_data.into_iter().map(events).collect();
        let a = quantile_trajectories(&forward).unwrap();
        let b = quantile_trajectories(&shuffled).unwrap();
        prop_assert_eq!(a.median, b.median);
        prop_assert_eq!(a.q25, b.q25);
        prop_assert_eq!(a.q75, b.q75);
    }
}
