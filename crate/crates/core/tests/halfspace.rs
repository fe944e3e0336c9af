use std::sync::Arc;

use fracbubbles::halfspace::*;
use fracbubbles::{Bubble, Params, PoissonKernel};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn grid(spec: GridSpec<f64>) -> Arc<HalfSpaceGrid<f64>> {
    Arc::new(HalfSpaceGrid::new(spec).unwrap())
}

fn bubble_trace(g: &HalfSpaceGrid<f64>, p: &Params, b: &Bubble<f64>) -> Vec<f64> {
    (0..g.boundary_len())
        .map(|i| b.eval_trace(p, &g.point(i)))
        .collect()
}

#[test]
fn constant_trace_extends_to_constant() {
    for spec in [
        GridSpec::cartesian(1, 0.25, 2.0, 32, 2.0, 16),
        GridSpec::radial(3, 0.5, 2.0, 32, 2.0, 16),
    ] {
        let g = grid(spec);
        let u = harmonic_extension(&vec![1.75; g.boundary_len()], &g).unwrap();
        for &v in u.values() {
            assert!((v - 1.75).abs() < 1e-8, "{v}");
        }
    }
}

#[test]
fn extension_is_linear() {
    let g = grid(GridSpec::cartesian(1, 0.3, 2.0, 40, 2.0, 20));
    let f: Vec<f64> = (0..g.boundary_len())
        .map(|i| (g.point(i)[0] * 1.3).cos())
        .collect();
    let h: Vec<f64> = (0..g.boundary_len())
        .map(|i| (-g.point(i)[0].powi(2)).exp())
        .collect();
    let (a, b) = (0.7, -2.2);
    let mix: Vec<f64> = f.iter().zip(&h).map(|(x, y)| a * x + b * y).collect();
    let uf = harmonic_extension(&f, &g).unwrap();
    let uh = harmonic_extension(&h, &g).unwrap();
    let um = harmonic_extension(&mix, &g).unwrap();
    let lin = uf.combine(a, &uh, b).unwrap();
    assert!(um.max_abs_diff(&lin) < 1e-8 * 3.0);
}

#[test]
fn extension_minimizes_energy() {
    let g = grid(GridSpec::cartesian(1, 0.25, 2.0, 40, 2.0, 20));
    let tr: Vec<f64> = (0..g.boundary_len())
        .map(|i| 1.0 / (1.0 + g.point(i)[0].powi(2)))
        .collect();
    let u = harmonic_extension(&tr, &g).unwrap();
    let e0 = weighted_dirichlet(&u);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..5 {
        let c: f64 = rng.random_range(-1.0..1.0);
        let yc: f64 = rng.random_range(0.3..1.2);
        let s: f64 = rng.random_range(0.2..0.5);
        let amp: f64 = rng.random_range(-1.0..1.0);
        let phi = Field::from_fn(g.clone(), |x, y| {
            let r2 = ((x[0] - c) / s).powi(2) + ((y - yc) / s).powi(2);
            if r2 < 1.0 && y > 0.0 {
                amp * (1.0 - r2).powi(3)
            } else {
                0.0
            }
        })
        .unwrap();
        let curv = weighted_dirichlet(&phi);
        assert!(curv > 0.0);
        for eps in [1e-1, 1e-2] {
            let pert = u.combine(1.0, &phi, eps).unwrap();
            let de = weighted_dirichlet(&pert) - e0;
            assert!(de > 0.0);
            assert!(
                (de / (eps * eps * curv) - 1.0).abs() < 1e-5,
                "{de} vs {}",
                eps * eps * curv
            );
        }
    }
}

#[test]
fn poisson_and_discrete_extensions_agree_in_energy() {
    let p = Params::new(3, 0.5).unwrap();
    let g = grid(GridSpec::radial(3, 0.5, 40.0, 400, 40.0, 80));
    let b = Bubble::centered(3, 1.0, p.kappa).unwrap();
    let u = harmonic_extension(&bubble_trace(&g, &p, &b), &g).unwrap();
    let k = PoissonKernel::new(&p);
    let up = Field::try_from_fn(g.clone(), |x, y| Ok(k.extend(&b, x, y)?.value)).unwrap();
    let (dh, dp) = (weighted_dirichlet(&u), weighted_dirichlet(&up));
    assert!(dh <= dp * (1.0 + 1e-10));
    assert!((dh / dp - 1.0).abs() < 0.02, "{dh} vs {dp}");
}

#[test]
fn far_field_dirichlet_reproduces_poisson_field_one_dimensional() {
    let p = Params::new(1, 0.25).unwrap();
    let g = grid(GridSpec::cartesian(1, 0.25, 4.0, 256, 4.0, 40));
    let b = Bubble::centered(1, 0.5, p.kappa).unwrap();
    let k = PoissonKernel::new(&p);
    let up = Field::try_from_fn(g.clone(), |x, y| Ok(k.extend(&b, x, y)?.value)).unwrap();
    let (uf, stats) = extend_with(&up, FarField::Dirichlet).unwrap();
    assert!(stats.relative_residual <= SOLVER_TOLERANCE);
    let (df, dp) = (weighted_dirichlet(&uf), weighted_dirichlet(&up));
    assert!(df <= dp * (1.0 + 1e-10));
    assert!((df / dp - 1.0).abs() < 0.02, "{df} vs {dp}");
}

#[test]
fn bubble_energy_converges_at_first_order_or_better() {
    let p = Params::new(3, 0.5).unwrap();
    let b = Bubble::centered(3, 1.0, p.kappa).unwrap();
    let d: Vec<f64> = (0..3)
        .map(|k| {
            let g = grid(GridSpec::radial(3, 0.5, 20.0, 50 << k, 20.0, 10 << k));
            weighted_dirichlet(&harmonic_extension(&bubble_trace(&g, &p, &b), &g).unwrap())
        })
        .collect();
    let rate = ((d[0] - d[1]).abs() / (d[1] - d[2]).abs()).log2();
    assert!(rate >= 1.0, "rate {rate}");
}

#[test]
fn bubble_is_nearly_extremal_for_trace_sobolev() {
    let p = Params::new(3, 0.5).unwrap();
    let g = grid(GridSpec::radial(3, 0.5, 40.0, 400, 40.0, 80));
    let b = Bubble::centered(3, 1.0, p.kappa).unwrap();
    let u = harmonic_extension(&bubble_trace(&g, &p, &b), &g).unwrap();
    let ratio =
        trace_power(&g, u.trace(), p.two_star).powf(2.0 / p.two_star) / weighted_dirichlet(&u);
    assert!(
        ratio >= 0.95 * p.sobolev_s && ratio <= 1.05 * p.sobolev_s,
        "{}",
        ratio / p.sobolev_s
    );
}

#[test]
fn zero_field_has_zero_functional_and_residual() {
    let g = grid(GridSpec::cartesian(1, 0.25, 2.0, 32, 2.0, 16));
    let u = Field::zeros(g.clone());
    assert_eq!(functional_i(&u, None).unwrap(), 0.0);
    let r = ps_residual(&u, None).unwrap();
    assert_eq!(r.riesz, 0.0);
    assert_eq!(r.dictionary, 0.0);
}

#[test]
fn discrete_critical_point_has_tiny_residual() {
    let g = grid(GridSpec::radial(3, 0.5, 4.0, 40, 4.0, 20));
    let q = vec![1.0; g.boundary_len()];
    let start = Field::from_fn(g.clone(), |x, y| (-(x[0] * x[0] + y * y)).exp()).unwrap();
    let cp = critical_point(&start, &q, DescentSettings::default()).unwrap();
    let r = ps_residual(&cp.field, Some(&q)).unwrap();
    assert!(r.riesz <= 1e-6, "{}", r.riesz);
    assert!(r.dictionary <= r.riesz + 1e-8);
    assert!(cp.field.trace().iter().all(|&v| v > 0.0));
}

#[test]
fn energy_report_is_consistent() {
    let p = Params::new(1, 0.25).unwrap();
    let g = grid(GridSpec::cartesian(1, 0.25, 4.0, 128, 4.0, 30));
    let b = Bubble::centered(1, 0.5, p.kappa).unwrap();
    let u = harmonic_extension(&bubble_trace(&g, &p, &b), &g).unwrap();
    let rep = energy_report(&u, None).unwrap();
    assert!(rep.dirichlet >= 0.0 && rep.trace_mass_2star >= 0.0);
    let i = 0.5 * rep.dirichlet - rep.trace_mass_2star / p.two_star;
    assert!((rep.functional_value - i).abs() < 1e-12 * i.abs().max(1.0));
    assert!(rep.residual_dual.is_finite());
}

#[test]
fn audit_of_zero_field() {
    let p = Params::new(1, 0.25).unwrap();
    let g = grid(GridSpec::cartesian(1, 0.25, 2.0, 32, 2.0, 16));
    let rec =
        eps_regularity_audit(&Field::zeros(g), &[0.0], 0.5, &p, &AuditSettings::default()).unwrap();
    assert_eq!(rec.lhs, 0.0);
    assert_eq!(rec.fitted_constant, 0.0);
    assert_eq!(rec.status, AuditStatus::Ok);
}

#[test]
fn audit_flags_concentrated_windows() {
    let p = Params::new(1, 0.25).unwrap();
    let g = grid(GridSpec::cartesian(1, 0.25, 4.0, 256, 4.0, 30));
    let b = Bubble::centered(1, 0.1, p.kappa).unwrap();
    let u = harmonic_extension(&bubble_trace(&g, &p, &b), &g).unwrap();
    let rec = eps_regularity_audit(&u, &[0.0], 0.5, &p, &AuditSettings::default()).unwrap();
    assert_eq!(rec.status, AuditStatus::MassTooLarge);
}

#[test]
fn field_rejects_non_finite_values() {
    let g = grid(GridSpec::cartesian(1, 0.25, 2.0, 8, 2.0, 4));
    let mut v = vec![0.0; g.len()];
    v[3] = f64::NAN;
    assert!(Field::new(g.clone(), v).is_err());
    assert!(Field::new(g, vec![0.0; 3]).is_err());
}

fn random_trace(g: &HalfSpaceGrid<f64>, seed: u64, support: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bumps: Vec<(f64, f64, f64)> = (0..4)
        .map(|_| {
            let s = rng.random_range(0.1..0.5) * support;
            let c = rng.random_range(-(support - s)..(support - s));
            (c, s, rng.random_range(-1.0..1.0))
        })
        .collect();
    (0..g.boundary_len())
        .map(|i| {
            let x = g.point(i)[0];
            bumps
                .iter()
                .map(|&(c, s, a)| {
                    let r2 = ((x - c) / s).powi(2);
                    if r2 < 1.0 {
                        a * (1.0 - r2).powi(3)
                    } else {
                        0.0
                    }
                })
                .sum()
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn riesz_norm_dominates_dictionary(seed in any::<u64>()) {
        let g = grid(GridSpec::cartesian(1, 0.25, 2.0, 48, 2.0, 16));
        let tr = random_trace(&g, seed, 1.0);
        let u = harmonic_extension(&tr, &g).unwrap();
        let r = ps_residual(&u, None).unwrap();
        prop_assert!(r.riesz >= r.dictionary - 1e-8);
    }

    #[test]
    fn compact_traces_respect_trace_sobolev(seed in any::<u64>()) {
        let p = Params::new(1, 0.25).unwrap();
        let g = grid(GridSpec::cartesian(1, 0.25, 8.0, 256, 8.0, 40));
        let tr = random_trace(&g, seed, 2.0);
        let u = harmonic_extension(&tr, &g).unwrap();
        let ratio = trace_power(&g, &tr, p.two_star).powf(2.0 / p.two_star) / weighted_dirichlet(&u);
        prop_assert!(ratio <= 1.05 * p.sobolev_s, "ratio/S = {}", ratio / p.sobolev_s);
    }

    #[test]
    fn energy_is_nonnegative_and_quadratic(seed in any::<u64>(), a in -3.0f64..3.0) {
        let g = grid(GridSpec::cartesian(1, 0.4, 1.0, 16, 1.0, 8));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v: Vec<f64> = (0..g.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let u = Field::new(g, v).unwrap();
        let d = weighted_dirichlet(&u);
        prop_assert!(d >= 0.0);
        let da = weighted_dirichlet(&u.scaled(a));
        prop_assert!((da - a * a * d).abs() <= 1e-10 * d.max(1.0));
    }
}
