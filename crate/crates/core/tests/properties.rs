//! Invariants checked over randomly drawn inputs.

mod common;

use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::*;
use volnet::datagen::sparse_var_coefficients;
use volnet::export::{adjacency_csv, parse_adjacency};
use volnet::gdfm::{hallin_liska_q_with, CriterionConfig};
use volnet::identify::{and_rule, choleski_of, eigenvector_centrality, estimate_pcn, CentralityMode};
use volnet::linalg::companion_radius;
use volnet::lvdn::{apply_threshold, degrees_of, fevd, VmaFilter};
use volnet::panel::{center, cumulate_returns, log_returns, slice_period, PeriodFilter, SectorMap, TimePanel};
use volnet::solver::{kkt_violation, objective, solve, Design, Penalty, SolverOptions};
use volnet::spectral::{estimate_spectral_density, mean_dynamic_eigenvalues};
use volnet::volpipe::fit_gdfm;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_filter(seed: u64, n: usize, m: usize, h: usize) -> VmaFilter {
    let mut r = rng(seed);
    VmaFilter {
        coefs: (0..=h).map(|_| normal_matrix(&mut r, n, m)).collect(),
        shock_labels: (1..=m).map(|j| format!("s{j}")).collect(),
        permutation: None,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn returns_round_trip(seed in any::<u64>(), n in 2usize..6, t in 3usize..60) {
        let mut r = rng(seed);
        let steps = normal_matrix(&mut r, n, t - 1);
        let start: Vec<f64> = (0..n).map(|i| 10.0 + i as f64).collect();
        let returns = TimePanel::from_values(steps).unwrap();
        let prices = cumulate_returns(&returns, &start, returns.dates[0] - chrono::Days::new(1));
        let back = log_returns(&prices).unwrap();
        prop_assert!(max_abs_diff(&back.values, &returns.values) < 1e-9);
    }

    #[test]
    fn centering_is_idempotent(seed in any::<u64>(), n in 2usize..6, t in 2usize..80) {
        let mut r = rng(seed);
        let p = TimePanel::from_values(normal_matrix(&mut r, n, t).add_scalar(3.0)).unwrap();
        let once = center(&p);
        let twice = center(&once);
        prop_assert!(max_abs_diff(&once.values, &twice.values) < 1e-12);
        for i in 0..n {
            prop_assert!(once.values.row(i).mean().abs() < 1e-12);
            let m = once.means.as_ref().unwrap()[i];
            let m2 = twice.means.as_ref().unwrap()[i];
            prop_assert!((m - m2).abs() < 1e-12);
        }
    }

    #[test]
    fn slicing_is_idempotent(seed in any::<u64>(), a in 0usize..40, len in 1usize..40) {
        let mut r = rng(seed);
        let p = TimePanel::from_values(normal_matrix(&mut r, 3, 100)).unwrap();
        let f = PeriodFilter::new(p.dates[a], p.dates[a + len]).unwrap();
        let once = slice_period(&p, &f).unwrap();
        let twice = slice_period(&once, &f).unwrap();
        prop_assert_eq!(once.t(), len + 1);
        prop_assert_eq!(&once.values, &twice.values);
        prop_assert_eq!(&once.dates, &twice.dates);
    }

    #[test]
    fn spectrum_is_hermitian_and_trace_preserving(seed in any::<u64>(), n in 2usize..6, b in 2usize..12) {
        let mut r = rng(seed);
        let p = iid_panel(&mut r, n, 200);
        let spec = estimate_spectral_density(&p, b, b).unwrap();
        for m in &spec.matrices {
            prop_assert!((m - m.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max) < 1e-12);
        }
        let traces: f64 = spec.matrices.iter().enumerate()
            .map(|(h, m)| spec.grid_weight(h) * (0..n).map(|i| m[(i, i)].re).sum::<f64>())
            .sum();
        let eig: f64 = mean_dynamic_eigenvalues(&spec).iter().sum();
        prop_assert!((traces - eig).abs() < 1e-9 * traces.abs().max(1.0));
    }

    #[test]
    fn solver_descends_and_satisfies_kkt(seed in any::<u64>(), d in 2usize..12, lam in 0.001f64..0.5, alpha in 0.05f64..1.0) {
        let mut r = rng(seed);
        let x = normal_matrix(&mut r, 80, d);
        let y = &x.column(0) * 0.8 + normal_matrix(&mut r, 80, 1).column(0);
        let design = Design::from_matrix(&x, true).with_groups(vec![(0..d / 2).collect(), (d / 2..d).collect()]);
        let resp = design.response((x.transpose() * &y / 80.0).as_slice(), y.dot(&y) / 80.0);
        let opts = SolverOptions { trace: true, ..Default::default() };
        for pen in [Penalty::Coordinate { alpha, weights: None }, Penalty::Group] {
            let s = solve(&design, &resp, &pen, lam, None, &opts);
            for w in s.objective_trace.windows(2) {
                prop_assert!(w[1] <= w[0] + 1e-12);
            }
            prop_assert!((objective(&design, &resp, &pen, lam, &s.coefs) - s.objective_trace.last().unwrap()).abs() < 1e-10);
            prop_assert!(kkt_violation(&design, &resp, &pen, lam, &s.coefs) < 1e-4);
            let lmax = pen.lambda_max(&design, &resp);
            prop_assert_eq!(solve(&design, &resp, &pen, lmax * 1.001, None, &opts).nonzeros(), 0);
        }
    }

    #[test]
    fn fevd_rows_sum_to_100(seed in any::<u64>(), n in 1usize..10, h in 0usize..10) {
        let w = fevd(&random_filter(seed, n, n, h)).unwrap().weights;
        for i in 0..n {
            prop_assert!((w.row(i).sum() - 100.0).abs() < 1e-8);
            prop_assert!(w.row(i).iter().all(|v| *v >= 0.0));
        }
    }

    #[test]
    fn fevd_ignores_shock_scale(seed in any::<u64>(), n in 1usize..8, c in 0.01f64..100.0) {
        let f = random_filter(seed, n, n, 4);
        let mut g = f.clone();
        for d in &mut g.coefs {
            *d *= c;
        }
        prop_assert!(max_abs_diff(&fevd(&f).unwrap().weights, &fevd(&g).unwrap().weights) < 1e-9);
    }

    #[test]
    fn fevd_relabels_coherently(seed in any::<u64>(), n in 2usize..8) {
        let f = random_filter(seed, n, n, 3);
        let perm: Vec<usize> = (0..n).rev().collect();
        let p = DMatrix::from_fn(n, n, |a, b| if perm[a] == b { 1.0 } else { 0.0 });
        let mut g = f.clone();
        for d in &mut g.coefs {
            *d = &p * &*d * p.transpose();
        }
        let wf = fevd(&f).unwrap().weights;
        let wg = fevd(&g).unwrap().weights;
        prop_assert!(max_abs_diff(&(&p * wf * p.transpose()), &wg) < 1e-9);
    }

    #[test]
    fn degree_means_agree(seed in any::<u64>(), n in 2usize..25) {
        let w = fevd(&random_filter(seed, n, n, 2)).unwrap().weights;
        let d = degrees_of(&w, &SectorMap::single(n)).unwrap();
        let to_mean = d.to.iter().sum::<f64>() / n as f64;
        prop_assert!((to_mean - d.total).abs() < 1e-8);
    }

    #[test]
    fn cholesky_reconstructs(seed in any::<u64>(), n in 1usize..15) {
        let mut r = rng(seed);
        let cov = random_spd(&mut r, n);
        let c = choleski_of(cov.clone(), (0..n).collect()).unwrap();
        prop_assert!(max_abs_diff(&(&c.r * c.r.transpose()), &cov) < 1e-10);
        prop_assert!((0..n).all(|i| (i + 1..n).all(|j| c.r[(i, j)] == 0.0)));
    }

    #[test]
    fn centrality_ignores_scale(seed in any::<u64>(), n in 2usize..12, c in 1e-3f64..1e3) {
        let mut r = rng(seed);
        let w = normal_matrix(&mut r, n, n);
        let base = eigenvector_centrality(&w, CentralityMode::Unsigned, true).unwrap();
        let scaled = eigenvector_centrality(&(&w * c), CentralityMode::Unsigned, true).unwrap();
        prop_assert_eq!(base.order, scaled.order);
    }

    #[test]
    fn and_rule_is_symmetric_and_bounded(a in -2.0f64..2.0, b in -2.0f64..2.0) {
        let v = and_rule(a, b);
        prop_assert_eq!(v, and_rule(b, a));
        prop_assert!(v.abs() <= 1.0);
        if a * b <= 0.0 {
            prop_assert_eq!(v, 0.0);
        }
    }

    #[test]
    fn threshold_density_decreases(seed in any::<u64>(), n in 2usize..10, t1 in 0.0f64..50.0, dt in 0.0f64..50.0) {
        let w = fevd(&random_filter(seed, n, n, 2)).unwrap().weights;
        let count = |m: &DMatrix<f64>| m.iter().filter(|v| **v != 0.0).count();
        let lo = apply_threshold(&w, t1);
        let hi = apply_threshold(&w, t1 + dt);
        prop_assert!(count(&hi) <= count(&lo));
        for i in 0..n {
            prop_assert_eq!(hi[(i, i)], w[(i, i)]);
        }
    }

    #[test]
    fn adjacency_text_round_trip(seed in any::<u64>(), n in 1usize..8) {
        let mut r = rng(seed);
        let m = normal_matrix(&mut r, n, n);
        let labels: Vec<String> = (0..n).map(|i| format!("S{i}")).collect();
        let (l, back) = parse_adjacency(&adjacency_csv(&labels, &m)).unwrap();
        prop_assert_eq!(l, labels);
        prop_assert_eq!(back, m);
    }

    #[test]
    fn generated_vars_are_stable(seed in any::<u64>(), n in 2usize..20, p in 1usize..4) {
        let mut r = rng(seed);
        let coefs = sparse_var_coefficients(n, p, 0.1, &mut r).unwrap();
        prop_assert!(companion_radius(&coefs) < 1.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn pcn_is_symmetric_partial_correlation(seed in any::<u64>(), n in 2usize..8) {
        let mut r = rng(seed);
        let cov = random_spd(&mut r, n);
        let (l, _) = volnet::linalg::cholesky_with_ridge(&cov, 1e-10).unwrap();
        let v = &l * normal_matrix(&mut r, n, 400);
        let pcn = estimate_pcn(&TimePanel::from_values(v).unwrap()).unwrap();
        prop_assert_eq!(&pcn.weights, &pcn.weights.transpose());
        prop_assert!(pcn.weights.iter().all(|w| w.abs() <= 1.0));
        prop_assert!((0..n).all(|i| pcn.weights[(i, i)] == 0.0));
    }

    #[test]
    fn common_plus_idiosyncratic_is_the_panel(seed in any::<u64>(), q in 1usize..3) {
        let mut r = rng(seed);
        let p = center(&iid_panel(&mut r, 8, 300));
        let fit = fit_gdfm(&p, q, None, None, 2).unwrap();
        let sum = &fit.split.common.values + &fit.split.idiosyncratic.values;
        prop_assert!(max_abs_diff(&sum, &p.values) < 1e-10);
    }

    #[test]
    fn factor_count_ignores_scale(seed in 0u64..1000, c in 0.01f64..100.0) {
        let spec = volnet::datagen::DgpSpec { n: 12, t: 400, seed, ..Default::default() };
        let (p, _) = volnet::datagen::simulate(&spec).unwrap();
        let cfg = CriterionConfig::default();
        let base = hallin_liska_q_with(&p, 4, &cfg).unwrap().q;
        let scaled = hallin_liska_q_with(&p.with_values(&p.values * c), 4, &cfg).unwrap().q;
        prop_assert_eq!(base, scaled);
    }
}
