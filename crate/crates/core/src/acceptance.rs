//! Desk-scale acceptance suite. Each criterion returns its metrics and a
//! verdict; reports serialize deterministically for a fixed seed.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::bubble::Bubble;
use crate::error::{Error, Result};
use crate::extension::PoissonKernel;
use crate::extract::{extract_all, BoundaryLattice, ExtractionSettings, HaltReason, TraceField};
use crate::halfspace::{
    eps_regularity_audit, extend_with, functional_i, harmonic_extension, trace_power,
    weighted_dirichlet, AuditSettings, AuditStatus, FarField, Field, GridSpec, HalfSpaceGrid,
};
use crate::params::{d_star, sobolev_constant, FracParams};
use crate::synth::{energy_ledger, separation, synthesize_trace, BubbleConfig, SeparationMatrix};

pub const PS_PAIR: &str = include_str!("../../../configs/ps_pair.json");
pub const PS_TOWER: &str = include_str!("../../../configs/ps_tower.json");
pub const PLANTED_THREE: &str = include_str!("../../../configs/planted_three.json");
pub const EXTRACT_SETTINGS: &str = include_str!("../../../configs/extract_settings.json");

/// Shipped configurations by file name.
pub const SHIPPED_CONFIGS: [(&str, &str); 3] = [
    ("ps_pair.json", PS_PAIR),
    ("ps_tower.json", PS_TOWER),
    ("planted_three.json", PLANTED_THREE),
];

/// Arbitrary-precision value of `S(3, 1/2)`.
pub const SOBOLEV_3_HALF: f64 = 0.370_018_484_153_678_1;

pub const ALL: [u32; 10] = [1, 2, 3, 4, 5, 6, 7, 8, 9, 10];

/// Criteria that cannot pass at desk scale; see the README.
pub const EXPECTED_RED: [u32; 1] = [6];

/// Criteria rerun by the determinism check.
pub const DETERMINISM_SUBSET: [u32; 3] = [1, 5, 9];

#[derive(Clone, Debug, Serialize)]
pub struct CriterionReport {
    pub id: u32,
    pub name: String,
    pub pass: bool,
    pub metrics: BTreeMap<String, f64>,
    pub notes: Vec<String>,
    pub budget_seconds: f64,
    #[serde(skip)]
    pub seconds: f64,
}

impl CriterionReport {
    pub fn within_budget(&self) -> bool {
        self.seconds <= self.budget_seconds
    }

    pub fn summary_line(&self) -> String {
        format!(
            "criterion {}: {} {} ({:.1}s of {:.0}s{})",
            self.id,
            if self.pass && self.within_budget() {
                "PASS"
            } else {
                "FAIL"
            },
            self.name,
            self.seconds,
            self.budget_seconds,
            if self.within_budget() {
                ""
            } else {
                ", over budget"
            },
        )
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SuiteReport {
    pub seed: u64,
    pub criteria: Vec<CriterionReport>,
}

impl SuiteReport {
    pub fn all_pass(&self) -> bool {
        self.criteria.iter().all(|c| c.pass && c.within_budget())
    }
}

struct Draft {
    metrics: BTreeMap<String, f64>,
    notes: Vec<String>,
    pass: bool,
}

impl Draft {
    fn new() -> Self {
        Self {
            metrics: BTreeMap::new(),
            notes: Vec::new(),
            pass: true,
        }
    }

    fn put(&mut self, key: impl Into<String>, v: f64) {
        self.metrics.insert(key.into(), v);
    }

    fn require(&mut self, ok: bool, what: impl Into<String>) {
        if !ok {
            self.pass = false;
            self.notes.push(format!("failed: {}", what.into()));
        }
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a / b - 1.0).abs()
}

fn rng_for(seed: u64, id: u32) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(u64::from(id));
    r
}

pub fn shipped_config(text: &str) -> Result<BubbleConfig<f64>> {
    let c: BubbleConfig<f64> = serde_json::from_str(text)?;
    c.validate()?;
    Ok(c)
}

fn grid(spec: GridSpec<f64>) -> Result<Arc<HalfSpaceGrid<f64>>> {
    Ok(Arc::new(HalfSpaceGrid::new(spec)?))
}

fn bubble_trace(g: &HalfSpaceGrid<f64>, p: &FracParams<f64>, b: &Bubble<f64>) -> Vec<f64> {
    (0..g.boundary_len())
        .map(|i| b.eval_trace(p, &g.point(i)))
        .collect()
}

/// `n = 3`, `γ = 1/2` radial grid used for energy and extremality checks.
pub fn reference_grid() -> GridSpec<f64> {
    GridSpec::radial(3, 0.5, 80.0, 800, 80.0, 100)
}

/// Sum of four smooth compact bumps inside `[-support, support]` on an
/// `n = 1` grid.
pub fn random_compact_trace(
    g: &HalfSpaceGrid<f64>,
    rng: &mut ChaCha8Rng,
    support: f64,
) -> Vec<f64> {
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

fn constants(d: &mut Draft) -> Result<()> {
    let ds = d_star(0.5f64);
    let s = sobolev_constant(3, 0.5f64);
    d.put("d_star_half", ds);
    d.put("sobolev_3_half", s);
    d.put("sobolev_rel_error", rel(s, SOBOLEV_3_HALF));
    d.require(ds == 1.0, "d* at 1/2 is not exactly 1");
    d.require(
        rel(s, SOBOLEV_3_HALF) <= 1e-10,
        "S(3, 1/2) off by more than 1e-10",
    );
    Ok(())
}

fn calibration(d: &mut Draft) -> Result<()> {
    for (n, gamma) in [(3usize, 0.5f64), (1, 0.25)] {
        let p = FracParams::new(n, gamma)?;
        let tag = format!("n{n}_g{gamma}");
        let err = rel(p.energy_quantum, p.beta_zero);
        d.put(format!("{tag}_kappa"), p.kappa);
        d.put(format!("{tag}_beta_zero"), p.beta_zero);
        d.put(format!("{tag}_energy_quantum"), p.energy_quantum);
        d.put(format!("{tag}_rel_error"), err);
        d.require(
            err <= 1e-4,
            format!("{tag}: threshold and bubble energy differ by {err:e}"),
        );
    }
    Ok(())
}

fn energy_constancy(d: &mut Draft) -> Result<()> {
    let p = FracParams::new(3, 0.5f64)?;
    let centers = [vec![0.0, 0.0, 0.0], vec![1.5, -0.5, 2.0]];
    let mut ratios = Vec::new();
    for (ci, c) in centers.iter().enumerate() {
        let g = grid(reference_grid().centered_at(c.clone()))?;
        for lambda in [0.5, 1.0, 2.0] {
            let b = Bubble::new(c.clone(), lambda, p.kappa)?;
            let u = harmonic_extension(&bubble_trace(&g, &p, &b), &g)?;
            let e = functional_i(&u, None)? / p.energy_quantum;
            d.put(format!("center{ci}_lambda{lambda}"), e);
            ratios.push(e);
        }
    }
    let (lo, hi) = ratios
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &r| {
            (a.min(r), b.max(r))
        });
    let spread = (hi - lo) / lo;
    d.put("spread", spread);
    d.require(
        spread <= 0.02,
        format!("energy spread {spread:.4} above 2%"),
    );
    Ok(())
}

fn two_routes(d: &mut Draft) -> Result<()> {
    let p3 = FracParams::new(3, 0.5f64)?;
    let g = grid(reference_grid())?;
    let b = Bubble::centered(3, 1.0, p3.kappa)?;
    let k = PoissonKernel::new(&p3);
    let up = Field::try_from_fn(g.clone(), |x, y| Ok(k.extend(&b, x, y)?.value))?;
    let dh = weighted_dirichlet(&harmonic_extension(&bubble_trace(&g, &p3, &b), &g)?);
    let dp = weighted_dirichlet(&up);
    d.put("n3_ratio", dh / dp);
    d.require(rel(dh, dp) <= 0.02, "n = 3 energies differ by more than 2%");

    let p1 = FracParams::new(1, 0.25f64)?;
    let g = grid(GridSpec::cartesian(1, 0.25, 8.0, 1024, 8.0, 60))?;
    let b = Bubble::centered(1, 0.5, p1.kappa)?;
    let k = PoissonKernel::new(&p1);
    let up = Field::try_from_fn(g.clone(), |x, y| Ok(k.extend(&b, x, y)?.value))?;
    let dp = weighted_dirichlet(&up);
    let (uf, _) = extend_with(&up, FarField::Dirichlet)?;
    let df = weighted_dirichlet(&uf);
    let dn = weighted_dirichlet(&harmonic_extension(&bubble_trace(&g, &p1, &b), &g)?);
    d.put("n1_ratio", df / dp);
    d.put("n1_natural_boundary_ratio", dn / dp);
    d.notes
        .push("n1_natural_boundary_ratio is informational".into());
    d.require(rel(df, dp) <= 0.02, "n = 1 energies differ by more than 2%");
    Ok(())
}

fn extremality(d: &mut Draft, seed: u64) -> Result<()> {
    let p3 = FracParams::new(3, 0.5f64)?;
    let g = grid(reference_grid())?;
    let b = Bubble::centered(3, 1.0, p3.kappa)?;
    let u = harmonic_extension(&bubble_trace(&g, &p3, &b), &g)?;
    let ratio = trace_power(&g, u.trace(), p3.two_star).powf(2.0 / p3.two_star)
        / weighted_dirichlet(&u)
        / p3.sobolev_s;
    d.put("bubble_ratio_over_s", ratio);
    d.require(ratio >= 0.95, "bubble quotient below 0.95 S");

    let p1 = FracParams::new(1, 0.25f64)?;
    let g = grid(GridSpec::cartesian(1, 0.25, 8.0, 256, 8.0, 40))?;
    let mut rng = rng_for(seed, 5);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let tr = random_compact_trace(&g, &mut rng, 2.0);
        let u = harmonic_extension(&tr, &g)?;
        let r = trace_power(&g, &tr, p1.two_star).powf(2.0 / p1.two_star)
            / weighted_dirichlet(&u)
            / p1.sobolev_s;
        worst = worst.max(r);
    }
    d.put("random_max_ratio_over_s", worst);
    d.require(worst <= 1.05, "a random field exceeds 1.05 S");
    Ok(())
}

fn ps_synthesis(d: &mut Draft) -> Result<()> {
    let cfg = shipped_config(PS_PAIR)?;
    let p = FracParams::new(cfg.n, cfg.gamma)?;
    let g = grid(cfg.grid_spec())?;
    let mut recs = Vec::new();
    for alpha in 1..=cfg.steps() {
        let (rec, _) = energy_ledger(&cfg, alpha, &g, &p, None)?;
        d.put(format!("alpha{alpha}_residual"), rec.residual);
        d.put(
            format!("alpha{alpha}_defect_over_quantum"),
            rec.defect / p.energy_quantum,
        );
        d.put(format!("alpha{alpha}_functional"), rec.i_total);
        recs.push(rec);
    }
    let (first, last) = (&recs[0], &recs[recs.len() - 1]);
    let floor = 0.0;
    let res_ratio = last.residual / first.residual;
    let def_ratio = last.defect.abs() / first.defect.abs();
    let sup = recs.iter().map(|r| r.i_total.abs()).fold(0.0, f64::max);
    let bound = 2.0 * first.i_total.abs() + cfg.m() as f64 * p.energy_quantum;
    d.put("residual_ratio", res_ratio);
    d.put("defect_ratio", def_ratio);
    d.put("truncation_floor", floor);
    d.put("functional_sup", sup);
    d.put("functional_bound", bound);
    d.require(
        res_ratio <= 0.5,
        format!("residual ratio {res_ratio:.3} above 0.5"),
    );
    d.require(
        last.defect.abs() <= (0.5 * first.defect.abs()).max(floor),
        format!("defect ratio {def_ratio:.3} above 0.5"),
    );
    d.require(
        recs.iter().all(|r| r.i_total.is_finite()) && sup <= bound,
        "functional values unbounded",
    );
    Ok(())
}

fn separation_growth(d: &mut Draft) -> Result<()> {
    for (name, text) in SHIPPED_CONFIGS {
        let cfg = shipped_config(text)?;
        let stem = name.trim_end_matches(".json");
        if cfg.steps() < 2 || cfg.m() < 2 {
            d.notes
                .push(format!("{stem}: single step, nothing to compare"));
            continue;
        }
        let mats: Vec<SeparationMatrix<f64>> = (1..=cfg.steps())
            .map(|a| separation(&cfg, a))
            .collect::<Result<_>>()?;
        let mut violations = 0usize;
        for w in mats.windows(2) {
            for i in 0..cfg.m() {
                for j in 0..cfg.m() {
                    if i != j && w[1].exact[i][j] <= w[0].exact[i][j] {
                        violations += 1;
                    }
                }
            }
        }
        d.put(format!("{stem}_violations"), violations as f64);
        d.put(
            format!("{stem}_final_min"),
            mats[mats.len() - 1].min_off_diagonal().unwrap_or(f64::NAN),
        );
        d.require(
            violations == 0,
            format!("{stem}: separation not strictly increasing"),
        );
    }
    Ok(())
}

fn flagship(d: &mut Draft) -> Result<()> {
    let cfg = shipped_config(PLANTED_THREE)?;
    let s: ExtractionSettings<f64> = serde_json::from_str(EXTRACT_SETTINGS)?;
    s.validate()?;
    let p = FracParams::new(cfg.n, cfg.gamma)?;
    let truths: Vec<Bubble<f64>> = (0..cfg.m())
        .map(|j| cfg.bubble_at(j, 1, &p))
        .collect::<Result<_>>()?;
    let max_lambda = truths.iter().map(|b| b.lambda).fold(0.0, f64::max);
    let mut min_gap = f64::INFINITY;
    for i in 0..truths.len() {
        for j in i + 1..truths.len() {
            min_gap = min_gap.min(truths[i].dist2(&truths[j].center).sqrt());
        }
    }
    d.put("planted_gap_over_max_lambda", min_gap / max_lambda);
    d.require(min_gap >= 8.0 * max_lambda, "planted centers too close");

    let lat = BoundaryLattice::new(cfg.n, cfg.grid.half_width, cfg.grid.resolution)?;
    let vals = synthesize_trace(&cfg, 1, &p, &lat.points(), lat.spacing(), None)?;
    let rep = extract_all(&TraceField::new(lat, vals)?, &s, &p)?;
    d.put("m", rep.m() as f64);
    d.require(
        rep.m() == truths.len(),
        format!("recovered {} bubbles", rep.m()),
    );
    d.require(
        rep.halt_reason == HaltReason::CompactResidual,
        "extraction did not reach a compact residual",
    );
    let found = rep.bubbles();
    for (j, t) in truths.iter().enumerate() {
        let Some(got) = found
            .iter()
            .min_by(|a, b| a.dist2(&t.center).total_cmp(&b.dist2(&t.center)))
        else {
            continue;
        };
        let ce = (got.dist2(&t.center)).sqrt() / t.lambda;
        let le = rel(got.lambda, t.lambda);
        d.put(format!("bubble{j}_center_error"), ce);
        d.put(format!("bubble{j}_lambda_error"), le);
        d.require(
            ce <= 0.05 && le <= 0.05,
            format!("bubble {j} off by more than 5%"),
        );
    }
    for (k, step) in rep.steps.iter().enumerate() {
        let r = step.energy_drop / p.energy_quantum;
        d.put(format!("step{k}_drop_over_quantum"), r);
        d.require(
            (r - 1.0).abs() <= 0.25,
            format!("step {k} drop off by more than 25%"),
        );
    }
    let bound = 0.5 * p.energy_quantum / p.energy_factor();
    d.put("residual_mass", rep.residual_mass);
    d.put("residual_bound", bound);
    d.require(rep.residual_mass <= bound, "residual mass above bound");
    Ok(())
}

fn regularity(d: &mut Draft, seed: u64) -> Result<()> {
    let p = FracParams::new(1, 0.25f64)?;
    let lambda = 0.25;
    let b = Bubble::centered(1, lambda, p.kappa)?;
    let settings = AuditSettings::default();
    let mut rng = rng_for(seed, 9);
    let windows: Vec<(f64, f64)> = (0..10)
        .map(|_| {
            let r = rng.random_range(0.25..1.0);
            let far = 10.0 * lambda;
            let c = rng.random_range(far..7.0 - 2.0 * r);
            (if rng.random_bool(0.5) { c } else { -c }, r)
        })
        .collect();
    let mut fits = Vec::new();
    for (level, (nn, mm)) in [(256usize, 40usize), (512, 80)].into_iter().enumerate() {
        let g = grid(GridSpec::cartesian(1, 0.25, 8.0, nn, 8.0, mm))?;
        let u = harmonic_extension(&bubble_trace(&g, &p, &b), &g)?;
        let cs: Vec<f64> = windows
            .iter()
            .map(|&(c, r)| {
                let rec = eps_regularity_audit(&u, &[c], r, &p, &settings)?;
                if rec.status != AuditStatus::Ok {
                    return Err(Error::InvalidInput(format!(
                        "window at {c} is not low-mass"
                    )));
                }
                Ok(rec.fitted_constant)
            })
            .collect::<Result<_>>()?;
        d.put(
            format!("level{level}_max_c"),
            cs.iter().copied().fold(0.0, f64::max),
        );
        fits.push(cs);
    }
    let mut worst = 1.0f64;
    for (a, b) in fits[0].iter().zip(&fits[1]) {
        worst = worst.max(a.max(*b) / a.min(*b));
    }
    let cmax = fits.iter().flatten().copied().fold(0.0, f64::max);
    d.put("max_refinement_ratio", worst);
    d.require(cmax < settings.c_max, "fitted constant above 1e3");
    d.require(worst < 2.0, "constant varies by 2x under refinement");
    Ok(())
}

fn determinism(d: &mut Draft, seed: u64) -> Result<()> {
    let a = crate::io::canonical_json(&run_suite(seed, &DETERMINISM_SUBSET))?;
    let b = crate::io::canonical_json(&run_suite(seed, &DETERMINISM_SUBSET))?;
    d.put("bytes", a.len() as f64);
    d.put("identical", if a == b { 1.0 } else { 0.0 });
    d.require(a == b, "reports differ between runs");
    Ok(())
}

fn describe(id: u32) -> Option<(&'static str, f64)> {
    Some(match id {
        1 => ("constants", 1.0),
        2 => ("calibration cross-check", 30.0),
        3 => ("bubble energy constancy", 60.0),
        4 => ("two-route extension agreement", 120.0),
        5 => ("trace Sobolev extremality", 120.0),
        6 => ("Palais-Smale synthesis", 300.0),
        7 => ("separation growth", 5.0),
        8 => ("extraction flagship", 300.0),
        9 => ("local energy audit", 60.0),
        10 => ("determinism", 300.0),
        _ => return None,
    })
}

/// Runs one criterion. Numerical errors inside a criterion mark it failed
/// rather than aborting the suite.
pub fn criterion(id: u32, seed: u64) -> Result<CriterionReport> {
    let (name, budget) =
        describe(id).ok_or_else(|| Error::InvalidInput(format!("no criterion {id}")))?;
    let start = Instant::now();
    let mut d = Draft::new();
    let out = match id {
        1 => constants(&mut d),
        2 => calibration(&mut d),
        3 => energy_constancy(&mut d),
        4 => two_routes(&mut d),
        5 => extremality(&mut d, seed),
        6 => ps_synthesis(&mut d),
        7 => separation_growth(&mut d),
        8 => flagship(&mut d),
        9 => regularity(&mut d, seed),
        _ => determinism(&mut d, seed),
    };
    if let Err(e) = out {
        d.pass = false;
        d.notes.push(format!("error: {e}"));
    }
    Ok(CriterionReport {
        id,
        name: name.into(),
        pass: d.pass,
        metrics: d.metrics,
        notes: d.notes,
        budget_seconds: budget,
        seconds: start.elapsed().as_secs_f64(),
    })
}

pub fn run_suite(seed: u64, ids: &[u32]) -> SuiteReport {
    let criteria = ids
        .iter()
        .filter_map(|&id| criterion(id, seed).ok())
        .collect();
    SuiteReport { seed, criteria }
}
