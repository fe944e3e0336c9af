use std::sync::Arc;

use fracbubbles::extension::PoissonKernel;
use fracbubbles::halfspace::trace_power;
use fracbubbles::synth::{energy_ledger, separation, synthesize, synthesize_trace, LEDGER_COLUMNS};
use fracbubbles::{BubbleConfig, Error, Field, FracParams, HalfSpaceGrid};
use proptest::prelude::*;

fn cfg(text: &str) -> BubbleConfig<f64> {
    let c: BubbleConfig<f64> = serde_json::from_str(text).unwrap();
    c.validate().unwrap();
    c
}

fn grid_of(c: &BubbleConfig<f64>) -> Arc<HalfSpaceGrid<f64>> {
    Arc::new(HalfSpaceGrid::new(c.grid_spec()).unwrap())
}

#[test]
fn no_bubbles_returns_background() {
    let c = cfg(r#"{"n":1,"gamma":0.25,"grid":{"L":2,"N":32,"Y":2,"M":12},"bubbles":[]}"#);
    let p = FracParams::new(1, 0.25).unwrap();
    let g = grid_of(&c);
    let u0 = Field::from_fn(g.clone(), |x, y| (x[0] - y).sin()).unwrap();
    let u = synthesize(&c, 1, &g, &p, Some(&u0)).unwrap();
    assert_eq!(u.values(), u0.values());
}

#[test]
fn single_uncut_bubble_is_its_extension() {
    let c = cfg(
        r#"{"n":2,"gamma":0.5,"grid":{"L":3,"N":24,"Y":3,"M":8},"bubbles":[{"center":[0.5,0],"mu_schedule":[1]}]}"#,
    );
    let p = FracParams::new(2, 0.5).unwrap();
    let g = grid_of(&c);
    let u = synthesize(&c, 1, &g, &p, None).unwrap();
    let b = c.bubble_at(0, 1, &p).unwrap();
    let kernel = PoissonKernel::new(&p);
    for idx in (0..g.len()).step_by(37) {
        let (i, k) = (idx % g.boundary_len(), idx / g.boundary_len());
        let v = kernel.extend(&b, &g.point(i), g.y()[k]).unwrap().value;
        assert!((u.values()[idx] - v).abs() <= 1e-12 * v.abs().max(1.0));
    }
}

#[test]
fn far_pair_carries_twice_the_mass() {
    let c = cfg(r#"{"n":1,"gamma":0.25,"grid":{"L":8,"N":2048,"Y":2,"M":6},
            "bubbles":[{"center":[-4],"mu_schedule":[0.03125],"r0":1},{"center":[4],"mu_schedule":[0.03125],"r0":1}]}"#);
    let p = FracParams::new(1, 0.25).unwrap();
    let g = grid_of(&c);
    let u = synthesize(&c, 1, &g, &p, None).unwrap();
    let mass = trace_power(&g, u.trace(), p.two_star);
    let single = c.bubble_at(0, 1, &p).unwrap().trace_mass(&p);
    assert!(
        (mass / (2.0 * single) - 1.0).abs() < 0.03,
        "{mass} vs {}",
        2.0 * single
    );
}

#[test]
fn scales_below_four_cells_are_rejected() {
    let c = cfg(
        r#"{"n":1,"gamma":0.25,"grid":{"L":2,"N":32,"Y":2,"M":12},"bubbles":[{"center":[0],"mu_schedule":[0.5,0.2]}]}"#,
    );
    let p = FracParams::new(1, 0.25).unwrap();
    let g = grid_of(&c);
    assert!(synthesize(&c, 1, &g, &p, None).is_ok());
    assert!(matches!(
        synthesize(&c, 2, &g, &p, None),
        Err(Error::ScaleBelowGrid { .. })
    ));
    assert!(synthesize(&c, 3, &g, &p, None).is_err());
}

#[test]
fn empty_ledger_with_fixed_potential_has_zero_defect() {
    let c = cfg(
        r#"{"n":1,"gamma":0.25,"grid":{"L":2,"N":32,"Y":2,"M":12},"bubbles":[],
            "Q":{"mode":"constant","value":0.7}}"#,
    );
    let p = FracParams::new(1, 0.25).unwrap();
    let g = grid_of(&c);
    let u0 = Field::from_fn(g.clone(), |x, y| 0.3 * (-x[0] * x[0] - y).exp()).unwrap();
    let (rec, _) = energy_ledger(&c, 1, &g, &p, Some(&u0)).unwrap();
    assert_eq!(rec.defect, 0.0);
    assert_eq!(rec.min_separation, None);
    assert_eq!(rec.csv_row().len(), LEDGER_COLUMNS.len());
    assert_eq!(LEDGER_COLUMNS.len(), 7);
}

#[test]
fn single_bubble_defect_is_small_on_the_reference_grid() {
    let c = cfg(
        r#"{"n":3,"gamma":0.5,"grid":{"L":80,"N":800,"Y":80,"M":100,"geometry":"radial"},
            "bubbles":[{"center":[0,0,0],"mu_schedule":[1,0.5]}]}"#,
    );
    let p = FracParams::new(3, 0.5).unwrap();
    let g = grid_of(&c);
    let (rec, _) = energy_ledger(&c, 2, &g, &p, None).unwrap();
    assert!(
        rec.defect.abs() <= 0.05 * p.energy_quantum,
        "defect {}",
        rec.defect
    );
}

#[test]
fn perturbed_potential_converges() {
    let c = cfg(
        r#"{"n":1,"gamma":0.25,"grid":{"L":2,"N":32,"Y":2,"M":12},"bubbles":[{"center":[0],"mu_schedule":[1,0.5,0.25]}],
            "Q":{"mode":"perturbed","base":1,"amplitude":2,"center":[0],"radius":1}}"#,
    );
    let g = grid_of(&c);
    let lim = c.potential_limit(&g);
    let mut last = f64::INFINITY;
    for a in 1..=3 {
        let q = c.potential(a, &g);
        let d: f64 = q
            .iter()
            .zip(&lim)
            .zip(g.measure())
            .map(|((a, b), w)| w * (a - b) * (a - b))
            .sum();
        assert!(d < last);
        assert!(q.iter().all(|v| v.abs() <= c.potential.bound()));
        last = d;
    }
}

#[test]
fn separation_grows_along_schedule() {
    let c = cfg(r#"{"n":1,"gamma":0.25,"grid":{"L":8,"N":512,"Y":8},
            "bubbles":[{"center":[-2],"mu_schedule":[0.5,0.25,0.125,0.0625]},{"center":[2],"mu_schedule":[1,0.5,0.25,0.125]}]}"#);
    let mut last = None;
    for a in 1..=4 {
        let s = separation(&c, a).unwrap();
        assert_eq!(s.entries[0][0], 2.0);
        assert_eq!(s.entries[0][1], s.entries[1][0]);
        let e = s.exact[0][1].clone();
        if let Some(prev) = last {
            assert!(e > prev);
        }
        last = Some(e);
    }
}

#[test]
fn unknown_config_key_is_named() {
    let err = serde_json::from_str::<BubbleConfig<f64>>(
        r#"{"n":1,"gamma":0.25,"grid":{"L":2,"N":32,"Y":2},"bubbles":[{"center":[0],"mu_schedule":[1],"radius0":1}]}"#,
    )
    .unwrap_err();
    assert!(err.to_string().contains("radius0"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn synthesized_traces_are_nonnegative(
        c1 in -3.0f64..-1.0, c2 in 1.0f64..3.0, mu in 0.125f64..1.0, r0 in 0.1f64..0.5, bg in 0.0f64..1.0,
    ) {
        let text = format!(
            r#"{{"n":1,"gamma":0.25,"grid":{{"L":4,"N":256,"Y":4}},
                "bubbles":[{{"center":[{c1}],"mu_schedule":[{mu}],"r0":{r0}}},{{"center":[{c2}],"mu_schedule":[{mu}]}}]}}"#
        );
        let c = cfg(&text);
        let p = FracParams::new(1, 0.25).unwrap();
        let pts: Vec<Vec<f64>> = (0..=256).map(|i| vec![-4.0 + i as f64 / 32.0]).collect();
        let u0: Vec<f64> = pts.iter().map(|x| bg * (-x[0] * x[0]).exp()).collect();
        let u = synthesize_trace(&c, 1, &p, &pts, 1.0 / 32.0, Some(&u0)).unwrap();
        prop_assert!(u.iter().all(|&v| v >= 0.0));
    }
}

#[test]
fn shipped_configs_resolve_every_step() {
    use fracbubbles::acceptance::{shipped_config, SHIPPED_CONFIGS};
    use fracbubbles::BoundaryLattice;
    for (name, text) in SHIPPED_CONFIGS {
        let c = shipped_config(text).unwrap();
        let p = FracParams::new(c.n, c.gamma).unwrap();
        let lat = BoundaryLattice::new(c.n, c.grid.half_width, c.grid.resolution).unwrap();
        let h = lat.spacing();
        for a in 1..=c.steps() {
            for j in 0..c.m() {
                assert!(
                    c.scale(j, a) >= 4.0 * h,
                    "{name}: bubble {j} at step {a} is under-resolved"
                );
            }
            let u = synthesize_trace(&c, a, &p, &lat.points(), h, None).unwrap();
            assert!(u.iter().all(|v| v.is_finite() && *v >= 0.0), "{name}");
        }
    }
}
