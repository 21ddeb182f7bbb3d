use branchtail::brownian_paths::{
    coarsen_path, exit_time_tail_probe, gamblers_ruin, green_profile, simulate_conditioned_path,
    simulate_conditioned_segment, simulate_exit_path, simulate_exit_walk, ExitTimeSide, Side,
};
use branchtail::stats::{wilson_interval, RngStream};

fn green_sup_error(level: u32, runs: u64, seed: u64) -> f64 {
    let field = green_profile(level, runs, RngStream::new(seed, 0)).unwrap();
    let spacing = field.spacing();
    field
        .values()
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let x = (field.origin() + i as i64) as f64 * spacing;
            (v - (1.0 - x.abs())).abs()
        })
        .fold(0.0, f64::max)
}

#[test]
fn exit_walk_mean_duration_is_one() {
    let level = 4;
    let mut rng = RngStream::new(1, 0).rng();
    let steps: Vec<f64> = (0..4000)
        .map(|_| simulate_exit_walk(level, 0, &mut rng).unwrap().n_steps() as f64)
        .collect();
    let n = steps.len() as f64;
    let mean = steps.iter().sum::<f64>() / n;
    let var = steps.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0);
    assert!((mean - 256.0).abs() < 3.0 * (var / n).sqrt(), "mean {mean}");
}

#[test]
fn exit_side_is_fair_from_zero() {
    let mut rng = RngStream::new(2, 0).rng();
    let n = 10_000;
    let plus = (0..n)
        .filter(|_| simulate_exit_walk(5, 0, &mut rng).unwrap().exit_side() == Some(Side::Plus))
        .count() as u64;
    assert!(wilson_interval(plus, n, 0.999).unwrap().covers(0.5));
}

#[test]
fn exit_side_follows_gamblers_ruin() {
    // Level 3, start at 3/8: leaves through +1 with probability 11/16.
    let mut rng = RngStream::new(3, 0).rng();
    let n = 10_000;
    let plus = (0..n)
        .filter(|_| simulate_exit_walk(3, 3, &mut rng).unwrap().exit_side() == Some(Side::Plus))
        .count() as u64;
    let p = gamblers_ruin(3.0, 8.0, -8.0).unwrap();
    assert!((p - 11.0 / 16.0).abs() < 1e-15);
    assert!(wilson_interval(plus, n, 0.999).unwrap().covers(p));
}

#[test]
fn coarsening_preserves_the_exit_side() {
    let mut rng = RngStream::new(4, 0).rng();
    for _ in 0..200 {
        let fine = simulate_exit_path(6, 0, &mut rng).unwrap();
        let coarse = coarsen_path(&fine).unwrap();
        let end = *fine.last().unwrap();
        assert_eq!(*coarse.last().unwrap(), end / 2);
        assert_eq!(coarse.last().unwrap().abs(), 32);
        assert!(coarse.windows(2).all(|w| (w[1] - w[0]).abs() == 1));
    }
}

#[test]
fn green_profile_error_shrinks_with_level() {
    let e5 = green_sup_error(5, 20_000, 7);
    let e6 = green_sup_error(6, 20_000, 7);
    let e7 = green_sup_error(7, 20_000, 7);
    assert!(e6 <= e5 + 0.01 && e7 <= e6 + 0.01, "{e5} {e6} {e7}");
    assert!(e7 < 0.02);
}

#[test]
fn conditioned_segments_always_arrive() {
    let mut rng = RngStream::new(5, 0).rng();
    for _ in 0..2000 {
        let seg = simulate_conditioned_segment(6, 4, 12, 0, &mut rng).unwrap();
        assert_eq!(seg.final_site(), 12);
        let path = simulate_conditioned_path(4, 12, 0, &mut rng).unwrap();
        assert_eq!(*path.last().unwrap(), 12);
        assert!(path.iter().all(|&x| x > 0 && x <= 12));
    }
}

#[test]
fn conditioned_segment_rejects_bad_order() {
    let mut rng = RngStream::new(6, 0).rng();
    assert!(simulate_conditioned_segment(4, 5, 3, 0, &mut rng).is_err());
    assert!(simulate_conditioned_segment(4, 0, 3, 0, &mut rng).is_err());
}

#[test]
fn fast_exit_is_rare() {
    let est = exit_time_tail_probe(
        5,
        1.0,
        0.01,
        100_000,
        ExitTimeSide::Min,
        1,
        RngStream::new(8, 0),
    )
    .unwrap();
    assert!(est.p_hat < 1e-3);
}

#[test]
fn exit_probe_is_monotone_in_threshold() {
    let probe = |a, side| {
        exit_time_tail_probe(4, 1.0, a, 5000, side, 2, RngStream::new(9, 0))
            .unwrap()
            .p_hat
    };
    let mins: Vec<f64> = [0.1, 0.2, 0.4]
        .iter()
        .map(|&a| probe(a, ExitTimeSide::Min))
        .collect();
    let maxs: Vec<f64> = [1.0, 2.0, 4.0]
        .iter()
        .map(|&a| probe(a, ExitTimeSide::Max))
        .collect();
    assert!(mins.windows(2).all(|w| w[0] <= w[1]), "{mins:?}");
    assert!(maxs.windows(2).all(|w| w[0] >= w[1]), "{maxs:?}");
}
