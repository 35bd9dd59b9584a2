mod common;

use common::DataShape;
use monosmooth::objective::{self, total_objective};
use monosmooth::oracle::{aligned_grid_size, GridProblem};
use monosmooth::{
    assemble, solve, BnbConfig, Boundary, DataPoint, IntervalMode, KnotVector, ProblemSpec,
    RegimeAssignment,
};
use rand::Rng;

/// Feasible knot vector with every interval rising enough for a finite
/// energy in any mode.
fn random_feasible(rng: &mut impl Rng, spec: &ProblemSpec) -> KnotVector {
    let n = spec.n_knots();
    let top = spec.x_max();
    let mut values: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..top)).collect();
    values.sort_by(f64::total_cmp);
    if spec.boundary() == Boundary::PinnedZero {
        values[0] = 0.0;
    }
    for i in 1..n {
        if values[i] <= values[i - 1] {
            values[i] = values[i - 1] + 1e-3 * top;
        }
    }
    let scale = top / values[n - 1].max(f64::MIN_POSITIVE);
    if scale < 1.0 {
        values.iter_mut().for_each(|v| *v *= scale);
    }
    let slopes = (0..n).map(|_| rng.gen_range(0.0..2.0)).collect();
    KnotVector::new(spec.knots().to_vec(), values, slopes).unwrap()
}

#[test]
fn nonnegative_and_zero_only_on_exact_fit() {
    let mut rng = common::rng(201);
    for k in 0..50 {
        let spec = common::random_instance(&mut rng, 6, DataShape::Mixed, Boundary::PinnedZero);
        let kv = random_feasible(&mut rng, &spec);
        let assign = if k % 2 == 0 {
            RegimeAssignment::unrestricted(&spec)
        } else {
            RegimeAssignment::all_cubic(&spec)
        };
        assert!(total_objective(&spec, &kv, &assign).unwrap() >= 0.0);
    }
    let data: Vec<_> = (1..=5)
        .map(|k| DataPoint::new(k as f64, 0.7 * k as f64))
        .collect();
    let spec = ProblemSpec::new(data, 10.0, 5.0, Boundary::PinnedZero).unwrap();
    let n = spec.n_knots();
    let line = KnotVector::new(
        spec.knots().to_vec(),
        spec.knots().iter().map(|t| 0.7 * t).collect(),
        vec![0.7; n],
    )
    .unwrap();
    let assign = RegimeAssignment::unrestricted(&spec);
    assert_eq!(total_objective(&spec, &line, &assign).unwrap(), 0.0);
    let mut bent = line.clone();
    bent.slopes[2] = 0.8;
    assert!(total_objective(&spec, &bent, &assign).unwrap() > 0.0);
}

#[test]
fn gradient_matches_differences() {
    let mut rng = common::rng(202);
    let modes = [
        IntervalMode::Cubic,
        IntervalMode::ThreeSegment,
        IntervalMode::Unrestricted,
    ];
    for trial in 0..200 {
        let spec = common::random_instance(&mut rng, 6, DataShape::Mixed, Boundary::PinnedZero);
        let mut kv = random_feasible(&mut rng, &spec);
        // keep slopes off zero so the three-segment partials are two-sided
        kv.slopes.iter_mut().for_each(|v| *v += 0.05);
        let assign = RegimeAssignment::uniform(spec.n_intervals(), modes[trial % 3]);
        let g = objective::gradient(&spec, &kv, &assign).unwrap();
        assert!(!g.one_sided);
        let f = |kv: &KnotVector| total_objective(&spec, kv, &assign).unwrap();
        let gnorm = g
            .values
            .iter()
            .chain(&g.slopes)
            .fold(0.0f64, |m, x| m.max(x.abs()));
        let n = spec.n_knots();
        for k in 0..2 * n {
            let (mut up, mut dn) = (kv.clone(), kv.clone());
            let (analytic, h) = if k < n {
                // three-segment energies curve on the scale of the rise
                let rise = |i: usize| kv.values[i + 1] - kv.values[i];
                let near = match k {
                    0 => rise(0),
                    k if k == n - 1 => rise(k - 1),
                    k => rise(k - 1).min(rise(k)),
                };
                let h = 1e-4 * near;
                up.values[k] += h;
                dn.values[k] -= h;
                (g.values[k], h)
            } else {
                let h = 1e-4 * kv.slopes[k - n];
                up.slopes[k - n] += h;
                dn.slopes[k - n] -= h;
                (g.slopes[k - n], h)
            };
            // a step across a regime boundary is a kink for Unrestricted
            if modes[trial % 3] == IntervalMode::Unrestricted {
                let regimes = |kv: &KnotVector| -> Vec<bool> {
                    objective::certificate_shortfalls(kv)
                        .iter()
                        .map(|&s| s > 0.0)
                        .collect()
                };
                if regimes(&up) != regimes(&dn) {
                    continue;
                }
            }
            let fd = (f(&up) - f(&dn)) / (2.0 * h);
            assert!(
                (fd - analytic).abs() <= 1e-5 * gnorm.max(1.0),
                "trial {trial} var {k}: {fd} vs {analytic}"
            );
        }
    }
}

#[test]
fn convex_along_feasible_chords() {
    let mut rng = common::rng(203);
    let modes = [
        IntervalMode::Cubic,
        IntervalMode::Unrestricted,
        IntervalMode::ThreeSegment,
    ];
    let mut checks = 0;
    while checks < 1000 {
        let spec = common::random_instance(&mut rng, 5, DataShape::Mixed, Boundary::PinnedZero);
        let mode_list: Vec<_> = (0..spec.n_intervals())
            .map(|_| modes[rng.gen_range(0..3)])
            .collect();
        let assign = RegimeAssignment(mode_list);
        let a = random_feasible(&mut rng, &spec);
        let b = random_feasible(&mut rng, &spec);
        let mid = KnotVector::new(
            spec.knots().to_vec(),
            a.values
                .iter()
                .zip(&b.values)
                .map(|(x, y)| 0.5 * (x + y))
                .collect(),
            a.slopes
                .iter()
                .zip(&b.slopes)
                .map(|(x, y)| 0.5 * (x + y))
                .collect(),
        )
        .unwrap();
        let f = |kv: &KnotVector| total_objective(&spec, kv, &assign).unwrap();
        let (fa, fb, fm) = (f(&a), f(&b), f(&mid));
        assert!(
            fm <= 0.5 * (fa + fb) + 1e-12 * (1.0 + fa + fb),
            "{fm} > mean of {fa}, {fb}"
        );
        checks += 1;
    }
}

#[test]
fn objective_matches_discretized_energy() {
    let mut rng = common::rng(204);
    let mut worst: f64 = 0.0;
    for k in 0..50 {
        let shape = if k % 2 == 0 {
            DataShape::Mixed
        } else {
            DataShape::Increasing
        };
        let spec = common::random_instance(&mut rng, 6, shape, Boundary::PinnedZero);
        let (report, curve) = solve(&spec, &BnbConfig::default()).unwrap();
        let exact = total_objective(
            &spec,
            &report.incumbent,
            &RegimeAssignment::unrestricted(&spec),
        )
        .unwrap();
        let grid = GridProblem::new(&spec, aligned_grid_size(&spec, 4000)).unwrap();
        assert!(grid.snapping_error(&spec) <= 1e-12);
        let x: Vec<f64> = grid.grid().iter().map(|&t| curve.value(t)).collect();
        let discrete = grid.objective(&x);
        let gap = (discrete - exact).abs() / (1.0 + exact);
        worst = worst.max(gap);
        assert!(gap <= 1e-3, "instance {k}: exact {exact} grid {discrete}");
    }
    println!("worst relative gap {worst:.2e}");
}

#[test]
fn assembled_curve_reproduces_knot_vector() {
    let mut rng = common::rng(205);
    for _ in 0..30 {
        let spec = common::random_instance(&mut rng, 6, DataShape::Mixed, Boundary::FreeStart);
        let kv = random_feasible(&mut rng, &spec);
        let curve = assemble(&spec, &kv).unwrap();
        for (i, &t) in kv.knots.iter().enumerate() {
            assert!((curve.value(t) - kv.values[i]).abs() <= 1e-12 * (1.0 + kv.values[i]));
            assert!((curve.derivative_at(t) - kv.slopes[i]).abs() <= 1e-10 * (1.0 + kv.slopes[i]));
        }
        let (dv, dd) = curve.continuity_defect();
        assert!(dv <= 1e-12 && dd <= 1e-10, "defects {dv} {dd}");
    }
}
