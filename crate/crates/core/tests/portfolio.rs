use splitkit::harness::{run_algo, Algo, CommonArgs, SolverSettings, SvrArgs};
use splitkit::problems::{build_portfolio, portfolio_constraints, AssetData, PortfolioInstance};
use splitkit::Vector;

fn settings(tol: f64) -> SolverSettings {
    let common = CommonArgs { tol, trace_every: 0, ..CommonArgs::default() };
    SolverSettings::from(&common)
}

/// Required return between the equal-weight return and the best asset.
fn instance(n: usize, seed: u64) -> PortfolioInstance {
    let assets = AssetData::synthetic(n, seed);
    let avg = assets.means.iter().sum::<f64>() / n as f64;
    let best = assets.means.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    PortfolioInstance::new(assets, avg + 0.2 * (best - avg))
}

#[test]
fn kkt_conditions_hold_at_the_computed_point() {
    for seed in 0..4 {
        let inst = instance(15, seed);
        let prob = build_portfolio(&inst).unwrap();
        let n = inst.assets.n();
        let report = run_algo(&prob, Algo::Fbhf, &settings(1e-10), &SvrArgs::default(), seed).unwrap();
        assert!(report.converged, "seed {seed} did not converge");
        let z = Vector::from_vec(report.solution.clone());
        let x = z.rows(0, n);
        let u = z.rows(n, z.len() - n);

        assert!((x.sum() - 1.0).abs() < 1e-6, "budget {}", x.sum());
        assert!(x.iter().all(|&v| (-1e-6..=1.0 + 1e-6).contains(&v)));
        let g = portfolio_constraints(&prob, &z).unwrap();
        // g ≤ 0 is feasibility: return at least r and each group at least 0.3
        assert!(g.max() < 1e-6, "seed {seed}: constraint values {g:?}");
        assert!(u.min() > -1e-8);
        for (ui, gi) in u.iter().zip(g.iter()) {
            assert!((ui * gi).abs() < 1e-6, "seed {seed}: complementarity {ui} * {gi}");
        }
        let ret: f64 = inst.assets.means.iter().zip(x.iter()).map(|(m, w)| m * w).sum();
        assert!(ret >= inst.r - 1e-6);
    }
}

#[test]
fn fbhf_and_fourop_agree_on_the_objective() {
    for seed in 10..13 {
        let prob = build_portfolio(&instance(12, seed)).unwrap();
        let a = run_algo(&prob, Algo::Fbhf, &settings(1e-10), &SvrArgs::default(), seed).unwrap();
        let b = run_algo(&prob, Algo::NfbhfFourop, &settings(1e-10), &SvrArgs::default(), seed).unwrap();
        let (fa, fb) = (a.final_objective.unwrap(), b.final_objective.unwrap());
        assert!((fa - fb).abs() <= 1e-7 * fa.abs().max(1e-12), "seed {seed}: {fa} vs {fb}");
    }
}

#[test]
fn objective_is_half_quadratic_form() {
    let inst = instance(8, 3);
    let prob = build_portfolio(&inst).unwrap();
    let report = run_algo(&prob, Algo::Fbhf, &settings(1e-8), &SvrArgs::default(), 3).unwrap();
    let x = Vector::from_vec(report.solution[..8].to_vec());
    let h = inst.assets.covariance();
    let direct = 0.5 * x.dot(&(&h * &x));
    assert!((direct - report.final_objective.unwrap()).abs() < 1e-15);
}
