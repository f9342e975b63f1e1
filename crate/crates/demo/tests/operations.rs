use ntk_influence_demo::{compare_kernels, noise_trace, sweep, MAX_POINTS};

#[test]
fn wider_networks_track_the_analytic_kernel() {
    let narrow = compare_kernels(30, 10, 100, 4).unwrap();
    let wide = compare_kernels(30, 10, 20_000, 4).unwrap();
    assert_eq!(wide.pairs.len(), 30 * 29 / 2);
    assert!(wide.spectral_distance < narrow.spectral_distance);
    let worst = wide.pairs.iter().map(|p| (p.analytic - p.empirical).abs()).fold(0.0, f64::max);
    assert!(worst < 0.05, "{worst}");
}

#[test]
fn sweep_bound_never_exceeds_error() {
    let rows = sweep(80, 4, 1).unwrap();
    assert_eq!(rows.len(), 9);
    for r in &rows {
        assert!(r.lower_bound <= r.mean_error_rate, "{r:?}");
    }
    assert!(rows.windows(2).all(|w| w[1].lower_bound <= w[0].lower_bound));
}

#[test]
fn noise_trace_is_a_share_per_time() {
    let (t, share) = noise_trace(100, 0.4, false, 2).unwrap();
    assert_eq!(t.len(), 30);
    assert_eq!(share.len(), 30);
    assert!(share.iter().all(|s| (0.0..=1.0).contains(s)));
}

#[test]
fn oversized_requests_are_rejected() {
    assert!(sweep(MAX_POINTS + 1, 4, 0).is_err());
    assert!(compare_kernels(1, 3, 10, 0).is_err());
}
