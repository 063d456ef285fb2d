//! Named verification suites: each one packages a property of the theory
//! into a machine-checkable pass/fail report with deterministic JSON
//! output (seed-stable and independent of the worker count).

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::asymptotics::{
    bound_audit, delta_condition, fit_decay, predicted_rate, y_membership,
};
use crate::curvature::{
    curvature_trace, evolved_frame, geodesic_metric, scalar_curvature_coords,
    scalar_curvature_frame, DiagonalData, GeodesicSpec, Method,
};
use crate::error::{Error, Result};
use crate::field::{structure_functions, Region, ScalarField, TorusGrid};
use crate::genericity::{
    build_3d_spike, designed_locus_t3, perturb_to_generic, singular_locus,
    transversality_margin, two_torus_family,
};
use crate::scenario::Scenario;
use crate::strata::{enumerate_multiplicities, leq, whitney_a_check};
use crate::symcore::{
    self, d_of, normal_form_embed, normal_form_extract, NormalFormCoords,
};

/// Result of running one suite.
#[derive(Debug, Clone)]
pub struct SuiteReport {
    pub suite: String,
    pub scenario: String,
    pub seed: u64,
    pub pass: bool,
    pub details: Value,
}

impl SuiteReport {
    /// Canonical JSON (sorted keys, shortest-round-trip numbers).
    pub fn to_json(&self) -> String {
        json!({
            "suite": self.suite,
            "scenario": self.scenario,
            "seed": self.seed,
            "pass": self.pass,
            "details": self.details,
        })
        .to_string()
    }
}

pub const SUITES: &[&str] = &[
    "diagonal-formula",
    "frame-vs-oracle",
    "bounds",
    "membership",
    "decay",
    "generic",
    "spike3d",
    "whitney-a",
    "normal-form",
];

/// Dispatch a named suite. Scenario-driven suites require `scenario`.
pub fn run_suite(
    name: &str,
    scenario: Option<&Scenario>,
    base_dir: &std::path::Path,
    seed: u64,
    workers: usize,
) -> Result<SuiteReport> {
    let need_scenario = || {
        scenario.ok_or_else(|| Error::Config(format!("suite '{name}' needs a scenario file")))
    };
    match name {
        "normal-form" => normal_form_suite(seed),
        "whitney-a" => whitney_a_suite(seed),
        "diagonal-formula" => method_comparison_suite(
            "diagonal-formula",
            need_scenario()?,
            base_dir,
            seed,
            workers,
            Method::Diagonal,
        ),
        "frame-vs-oracle" => method_comparison_suite(
            "frame-vs-oracle",
            need_scenario()?,
            base_dir,
            seed,
            workers,
            Method::Frame,
        ),
        "bounds" => bounds_suite(need_scenario()?, base_dir, seed),
        "membership" => membership_suite(need_scenario()?, base_dir, seed),
        "decay" => decay_suite(need_scenario()?, base_dir, seed, workers),
        "generic" => generic_suite(need_scenario()?, seed),
        "spike3d" => spike_suite(need_scenario()?, seed, workers),
        other => Err(Error::Config(format!(
            "unknown suite '{other}'; known: {SUITES:?}"
        ))),
    }
}

/// Normal-form round trips exact to 1e-14 with the dimension count d(m),
/// plus determinant-one checks for the symmetric exponential.
pub fn normal_form_suite(seed: u64) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst_round = 0.0f64;
    let mut dims_ok = true;
    for m in 2..=6usize {
        dims_ok &= d_of(m) == m * (m + 1) / 2 - 1;
        for _ in 0..50 {
            let coords: Vec<f64> = (0..d_of(m)).map(|_| rng.random_range(-2.0..2.0)).collect();
            let b = NormalFormCoords::new(m, coords.clone())?;
            let s = normal_form_embed(&b);
            let back = normal_form_extract(&s)?;
            for (x, y) in back.coords.iter().zip(&coords) {
                worst_round = worst_round.max((x - y).abs());
            }
            let again = normal_form_embed(&back);
            worst_round = worst_round.max((again - &s).norm());
        }
    }
    let mut worst_det = 0.0f64;
    let mut checked = 0usize;
    'outer: for _ in 0..1000 {
        let n = rng.random_range(2..=6usize);
        let t = rng.random_range(-5.0..5.0);
        let s = symcore::random_traceless(n, 0.3, &mut rng);
        let e = match symcore::sym_exp(&s, t) {
            Ok(e) => e,
            Err(_) => continue 'outer,
        };
        worst_det = worst_det.max((e.determinant() - 1.0).abs());
        checked += 1;
    }
    let pass = dims_ok && worst_round <= 1e-14 && worst_det <= 1e-10 && checked >= 990;
    Ok(SuiteReport {
        suite: "normal-form".into(),
        scenario: String::new(),
        seed,
        pass,
        details: json!({
            "round_trip_residual": worst_round,
            "det_residual": worst_det,
            "det_samples": checked,
            "dimension_counts_ok": dims_ok,
        }),
    })
}

fn sample_lambda<R: Rng>(m: &crate::symcore::Multiplicity, rng: &mut R) -> Vec<f64> {
    let l = m.len();
    let mut values = Vec::with_capacity(l);
    let mut acc = 0.0;
    for _ in 0..l {
        acc += 0.3 + rng.random_range(0.0..1.0);
        values.push(acc);
    }
    let weighted: f64 = values
        .iter()
        .zip(m.parts())
        .map(|(&v, &p)| v * p as f64)
        .sum::<f64>()
        / m.total() as f64;
    let mut lambda = Vec::with_capacity(m.total());
    for (i, &p) in m.parts().iter().enumerate() {
        for _ in 0..p {
            lambda.push(values[i] - weighted);
        }
    }
    lambda
}

/// Whitney condition (a) containment residual over all adjacent face pairs
/// with n <= 5, one hundred sampled diagonal points per pair.
pub fn whitney_a_suite(seed: u64) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let mut pairs = 0usize;
    for n in 2..=5usize {
        let faces = enumerate_multiplicities(n, usize::MAX);
        for a in &faces {
            for b in &faces {
                if a.m == b.m || !leq(&a.m, &b.m)? {
                    continue;
                }
                pairs += 1;
                for _ in 0..100 {
                    let lambda = sample_lambda(&a.m, &mut rng);
                    let res = whitney_a_check(&a.m, &b.m, &lambda, 1e-3, 1, &mut rng)?;
                    worst = worst.max(res);
                }
            }
        }
    }
    let pass = worst <= 1e-10;
    Ok(SuiteReport {
        suite: "whitney-a".into(),
        scenario: String::new(),
        seed,
        pass,
        details: json!({
            "adjacent_pairs": pairs,
            "samples_per_pair": 100,
            "worst_residual": worst,
        }),
    })
}

/// Relative sup discrepancy of a method against the coordinate oracle over
/// the scenario times.
fn method_comparison_suite(
    suite: &str,
    scenario: &Scenario,
    base_dir: &std::path::Path,
    seed: u64,
    workers: usize,
    method: Method,
) -> Result<SuiteReport> {
    let built = scenario.build(base_dir)?;
    let bf = built.block_frame()?;
    let diag = match method {
        Method::Diagonal => Some(DiagonalData::new(&bf, &built.g0)?),
        _ => None,
    };
    let mut per_time = Vec::new();
    let mut worst = 0.0f64;
    for &t in &scenario.times {
        let gt = geodesic_metric(&built.g0, &built.h, t)?;
        let r_method = match method {
            Method::Diagonal => diag.as_ref().expect("prepared").eval(t, workers),
            Method::Frame => {
                let et = evolved_frame(&bf, t)?;
                scalar_curvature_frame(&gt, &et, workers)
            }
            Method::Oracle => unreachable!("oracle is the reference"),
        };
        let r_oracle = scalar_curvature_coords(&gt, workers);
        let disc = sup_discrepancy(&r_method, &r_oracle, &built.full);
        worst = worst.max(disc);
        per_time.push(json!({ "t": t, "relative_sup_discrepancy": disc }));
    }
    let pass = worst <= 1e-3;
    Ok(SuiteReport {
        suite: suite.to_string(),
        scenario: scenario.name.clone(),
        seed,
        pass,
        details: json!({
            "times": per_time,
            "worst": worst,
            "tolerance": 1e-3,
        }),
    })
}

/// sup |a - b| over the region, relative to 1 + sup |b|.
pub fn sup_discrepancy(a: &ScalarField, b: &ScalarField, region: &Region) -> f64 {
    let grid = a.grid();
    let mut sup_b = 0.0f64;
    let mut sup_d = 0.0f64;
    for idx in region.indices(grid) {
        sup_b = sup_b.max(b.get(idx).abs());
        sup_d = sup_d.max((a.get(idx) - b.get(idx)).abs());
    }
    sup_d / (1.0 + sup_b)
}

fn bounds_suite(
    scenario: &Scenario,
    base_dir: &std::path::Path,
    seed: u64,
) -> Result<SuiteReport> {
    let built = scenario.build(base_dir)?;
    let bf = built.block_frame()?;
    let times: Vec<f64> = scenario.times.iter().copied().filter(|&t| t <= 4.0).collect();
    let per_time = (10_000 / times.len().max(1)).max(1);
    let report = bound_audit(&bf, &built.g0, &times, per_time, seed)?;
    let pass = report.violations == 0 && report.checked >= 10_000;
    Ok(SuiteReport {
        suite: "bounds".into(),
        scenario: scenario.name.clone(),
        seed,
        pass,
        details: json!({
            "checked": report.checked,
            "violations": report.violations,
            "worst_lower_ratio": report.worst_lower_ratio,
            "worst_upper_ratio": report.worst_upper_ratio,
            "derivative_constant": report.c_h,
            "witnesses": report.witnesses,
        }),
    })
}

fn membership_suite(
    scenario: &Scenario,
    base_dir: &std::path::Path,
    seed: u64,
) -> Result<SuiteReport> {
    let built = scenario.build(base_dir)?;
    let report = y_membership(
        &built.h,
        &built.g0,
        &built.cover(),
        scenario.eps_divisor,
    )?;
    let regions: Vec<Value> = report
        .regions
        .iter()
        .map(|v| {
            json!({
                "lo": v.region.lo,
                "hi": v.region.hi,
                "admissible": v.admissible,
                "member": v.member,
                "min_posstr": if v.min_posstr.is_nan() { Value::Null } else { json!(v.min_posstr) },
                "reason": v.reason,
            })
        })
        .collect();
    Ok(SuiteReport {
        suite: "membership".into(),
        scenario: scenario.name.clone(),
        seed,
        pass: report.member,
        details: json!({ "regions": regions, "member": report.member }),
    })
}

fn decay_suite(
    scenario: &Scenario,
    base_dir: &std::path::Path,
    seed: u64,
    workers: usize,
) -> Result<SuiteReport> {
    let built = scenario.build(base_dir)?;
    let bf = built.block_frame()?;
    let c0 = structure_functions(&bf.frame, &built.g0);
    let delta = delta_condition(&c0, &bf.spec.m, &built.full, &built.grid);
    let spec = GeodesicSpec {
        g0: &built.g0,
        h: &built.h,
        times: &scenario.times,
        region: &built.full,
    };
    let trace = curvature_trace(&spec, Method::Diagonal, Some(&bf), workers, false)?;
    let mut negative_from_two = true;
    for (t, sup) in trace.times.iter().zip(&trace.sup) {
        if *t >= 2.0 && *sup >= 0.0 {
            negative_from_two = false;
        }
    }
    let fit = fit_decay(&trace, scenario.fit_window)?;
    let rate = predicted_rate(&bf, &c0, &built.full, delta.delta, 1e-8)?;
    let ratio = fit.c2 / rate.rho;
    let pass = delta.delta > 0.0
        && negative_from_two
        && fit.c2 > 0.0
        && (ratio - 1.0).abs() <= 0.1;
    Ok(SuiteReport {
        suite: "decay".into(),
        scenario: scenario.name.clone(),
        seed,
        pass,
        details: json!({
            "delta_p": delta.delta,
            "fitted_c1": fit.c1,
            "fitted_c2": fit.c2,
            "fit_residual": fit.residual,
            "predicted_rate": rate.rho,
            "rate_floor": rate.floor,
            "c2_over_predicted": ratio,
            "negative_from_t2": negative_from_two,
            "window": [fit.t_lo, fit.t_hi],
        }),
    })
}

/// The genericity bundle: stable finite hit count on the 2-torus family,
/// designed degeneracy flagged and repaired, and codimension-two scaling
/// of the flagged-cell fraction on the 3-torus locus.
fn generic_suite(scenario: &Scenario, seed: u64) -> Result<SuiteReport> {
    let base_res = scenario.res.max(16);
    // Part one: finite stable hit count under two resolution doublings.
    let mut counts = Vec::new();
    let mut margins_ok = true;
    for factor in [1usize, 2, 4] {
        let grid = TorusGrid::new(2, base_res * factor)?;
        let h = two_torus_family(grid, false)?;
        let report = singular_locus(&h, 0.5);
        if factor == 1 {
            for hit in &report.hits {
                let m = transversality_margin(&h, hit, None)?;
                margins_ok &= m.transversal;
            }
        }
        counts.push(report.hits.len());
    }
    let stable = counts[0] > 0 && counts[0] == counts[1] && counts[1] == counts[2];
    // Part two: the degenerate family is flagged and repaired.
    let grid = TorusGrid::new(2, base_res)?;
    let degenerate = two_torus_family(grid, true)?;
    let locus = singular_locus(&degenerate, 0.5);
    let mut degenerate_flagged = false;
    for hit in &locus.hits {
        let m = transversality_margin(&degenerate, hit, None)?;
        if !m.transversal {
            degenerate_flagged = true;
        }
    }
    let repair = perturb_to_generic(&degenerate, seed, 0.35, 0.5, None, 24);
    let repaired = repair.is_ok();
    let repair_candidate = repair.as_ref().map(|(_, info)| info.candidate).unwrap_or(0);
    // Part three: flagged-fraction scaling on the designed 3-torus locus.
    let mut fractions = Vec::new();
    for res in [32usize, 64, 128] {
        let grid = TorusGrid::new(3, res)?;
        let h = designed_locus_t3(grid, 1.2)?;
        let tol = 8.0 / res as f64;
        let report = singular_locus(&h, tol);
        fractions.push(report.flagged as f64 / grid.len() as f64);
    }
    let mut scaling_ok = true;
    for w in fractions.windows(2) {
        let ratio = w[0] / w[1];
        scaling_ok &= (4.0 / 3.0..=12.0).contains(&ratio);
    }
    let pass = stable && margins_ok && degenerate_flagged && repaired && scaling_ok;
    Ok(SuiteReport {
        suite: "generic".into(),
        scenario: scenario.name.clone(),
        seed,
        pass,
        details: json!({
            "hit_counts": counts,
            "hits_transversal": margins_ok,
            "degenerate_flagged": degenerate_flagged,
            "repaired": repaired,
            "repair_candidate": repair_candidate,
            "flagged_fractions": fractions,
            "scaling_ok": scaling_ok,
        }),
    })
}

/// The spike: curvature at the designed point grows without bound over the
/// usable horizon while the same field fails the membership test.
fn spike_suite(scenario: &Scenario, seed: u64, workers: usize) -> Result<SuiteReport> {
    let grid = TorusGrid::new(3, scenario.res)?;
    let spike = build_3d_spike(grid, scenario.spike_c)?;
    let data = DiagonalData::from_parts(&spike.frame, &spike.lambdas, &spike.g0)?;
    let mut ts = Vec::new();
    let mut ys = Vec::new();
    let mut positive = true;
    for k in 0..=8 {
        let t = 1.0 + 0.5 * k as f64;
        let r = data.eval(t, workers).get(spike.p);
        positive &= r > 0.0;
        if r > 0.0 {
            ts.push(t);
            ys.push(r.ln());
        }
    }
    let (slope, fitted) = if ts.len() >= 5 {
        let (_b, s, _r) = crate::asymptotics::log_linear_fit(&ts, &ys);
        (s, true)
    } else {
        (f64::NAN, false)
    };
    let membership = y_membership(
        &spike.h,
        &spike.g0,
        &[Region::full(&grid)],
        scenario.eps_divisor,
    )?;
    let pass = positive && fitted && slope > 0.0 && !membership.member;
    Ok(SuiteReport {
        suite: "spike3d".into(),
        scenario: scenario.name.clone(),
        seed,
        pass,
        details: json!({
            "c": scenario.spike_c,
            "point": grid.coords(spike.p),
            "growth_slope": slope,
            "curvature_positive_at_p": positive,
            "member": membership.member,
        }),
    })
}
