//! Acceptance checks. Prints one line per criterion and exits non-zero if
//! any of them fails.

mod common;

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use agmrf::graph::GraphKind;
use agmrf::inference::*;
use agmrf::latent::*;
use agmrf::priors::*;
use agmrf::simharness::*;
use agmrf::structmat::*;
use common::*;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn random_graph(rng: &mut ChaCha8Rng, k: usize) -> agmrf::graph::AreaGraph {
    if k % 2 == 0 {
        let n = rng.random_range(4..=40);
        random_temporal(rng, n)
    } else {
        let n = rng.random_range(4..=25);
        let m = rng.random_range(2..=3);
        random_areal(rng, n, 0.2, Some(m))
    }
}

fn two_parts(g: &agmrf::graph::AreaGraph) -> StructureParts {
    match g.kind() {
        GraphKind::TemporalPath => conflict_arw1_parts(g).unwrap(),
        GraphKind::Areal => multicountry_aicar_parts(g).unwrap(),
    }
}

fn plain_structure(g: &agmrf::graph::AreaGraph) -> SymSparseMatrix {
    match g.kind() {
        GraphKind::TemporalPath => rw1_structure(g.n()).unwrap(),
        GraphKind::Areal => icar_structure(g).unwrap(),
    }
}

fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst_row = 0.0f64;
    for k in 0..20 {
        let g = random_graph(&mut rng, k);
        let tau: f64 = rng.random_range(0.1..50.0);
        let parts = two_parts(&g);
        let q = parts.combine(&[1.0, 1.0]).scaled(tau);
        let want = plain_structure(&g).scaled(tau);
        ensure(q == want, format!("graph {k}: adaptive structure at theta = 1 differs from plain"))?;
        let scaled = scale_parts(parts).unwrap();
        let plain = scale_parts(StructureParts::plain(&g).unwrap()).unwrap();
        ensure(
            scaled.combine_scaled(&[1.0, 1.0]) == plain.combine_scaled(&[1.0]),
            format!("graph {k}: scaled structures differ at theta = 1"),
        )?;
        for theta in [1.0, rng.random_range(0.01..1.0)] {
            let q = parts_q(&scaled, tau, theta);
            worst_row = q.row_sums().iter().fold(worst_row, |m, r| m.max(r.abs()));
        }
    }
    ensure(worst_row < 1e-12, format!("max |row sum| {worst_row:e}"))?;
    Ok(format!("20 graphs exact at theta = 1, max |row sum| {worst_row:.1e}"))
}

fn parts_q(parts: &StructureParts, tau: f64, theta: f64) -> SymSparseMatrix {
    parts.combine_scaled(&[1.0, theta]).scaled(tau)
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst = 0.0f64;
    for k in 0..100 {
        let g = random_graph(&mut rng, k);
        let n = g.n();
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let tau: f64 = rng.random_range(0.1..50.0);
        let theta: f64 = rng.random_range(0.01..1.0);
        let q = two_parts(&g).combine(&[tau, tau * theta]);
        let direct: f64 = g
            .edges()
            .iter()
            .map(|&(i, j)| {
                let w = if g.is_reference_edge((i, j)) { tau } else { tau * theta };
                w * (x[i] - x[j]).powi(2)
            })
            .sum();
        worst = worst.max(((q.quad_form(&x) - direct) / direct).abs());

        // one precision per edge
        let taus: BTreeMap<(usize, usize), f64> = g.edges().iter().map(|&e| (e, rng.random_range(0.1..10.0))).collect();
        let q = match g.kind() {
            GraphKind::TemporalPath => general_arw1_precision(&taus.values().copied().collect::<Vec<_>>()).unwrap(),
            GraphKind::Areal => general_aicar_precision(&g, &taus).unwrap(),
        };
        let direct: f64 = taus.iter().map(|(&(i, j), t)| t * (x[i] - x[j]).powi(2)).sum();
        worst = worst.max(((q.quad_form(&x) - direct) / direct).abs());
    }
    ensure(worst < 1e-12, format!("max relative error {worst:e}"))?;
    Ok(format!("100 triples, max relative error {worst:.1e}"))
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut worst = 0.0f64;
    for k in 0..20 {
        let g = random_graph(&mut rng, k);
        let mut sets = vec![StructureParts::plain(&g).unwrap(), two_parts(&g)];
        if g.kind() == GraphKind::Areal {
            sets.push(general_multicountry_parts(&g).unwrap());
        }
        for parts in sets {
            let scaled = scale_parts(parts).unwrap();
            let ones = vec![1.0; scaled.n_parts()];
            let r = dense(&scaled.combine_scaled(&ones));
            let d = pinv(&r).diagonal();
            let gm = (d.iter().map(|v| v.ln()).sum::<f64>() / d.len() as f64).exp();
            worst = worst.max((gm - 1.0).abs());
        }
    }
    ensure(worst < 1e-8, format!("max |geometric mean - 1| {worst:e}"))?;
    Ok(format!("max |geometric mean - 1| {worst:.1e}"))
}

fn theta_kl2(r1: &DMatrix<f64>, r2: &DMatrix<f64>, theta: f64) -> f64 {
    let base = r1 + r2;
    let flex = r1 + r2 * theta;
    (&base * pinv(&flex)).trace() - (r1.nrows() as f64 - 1.0) + ln_pdet(&flex) - ln_pdet(&base)
}

fn phi_kl2(r: &DMatrix<f64>, phi: f64) -> f64 {
    let n = r.nrows();
    let cov = DMatrix::identity(n, n) * (1.0 - phi) + pinv(r) * phi;
    cov.trace() - n as f64 - cov.clone().cholesky().unwrap().l().diagonal().iter().map(|v| 2.0 * v.ln()).sum::<f64>()
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let (mut kl_err, mut jac_err) = (0.0f64, 0.0f64);
    let mut tail_err = 0.0f64;
    let mut instances = 0;
    while instances < 30 {
        let n = rng.random_range(3..=6);
        let g = if instances % 2 == 0 { random_temporal(&mut rng, n) } else { random_areal(&mut rng, n, 0.3, Some(2)) };
        let parts = two_parts(&g);
        if parts.part_edge_counts().contains(&0) {
            continue;
        }
        instances += 1;
        let parts = scale_parts(parts).unwrap();
        let eps = theta_eigenvalues(&parts, 0).unwrap();
        let r = parts.combine_scaled(&[1.0, 1.0]);
        let gt = phi_gamma_tilde(&r);
        let (r1, r2) = (dense(&parts.scaled_parts()[0]), dense(&parts.scaled_parts()[1]));
        for x in [0.05, 0.3, 0.6, 0.9] {
            kl_err = kl_err.max((d_theta(x, &eps).unwrap() - theta_kl2(&r1, &r2, x).max(0.0).sqrt()).abs());
            kl_err = kl_err.max((d_phi(x, &gt).unwrap() - phi_kl2(&dense(&r), x).max(0.0).sqrt()).abs());
            let h = 1e-6;
            let fd = (d_theta(x - h, &eps).unwrap() - d_theta(x + h, &eps).unwrap()) / (2.0 * h);
            let an = d_theta_slope(x, &eps).unwrap();
            jac_err = jac_err.max(((fd - an) / an).abs());
            let fd = (d_phi(x + h, &gt).unwrap() - d_phi(x - h, &gt).unwrap()) / (2.0 * h);
            let an = d_phi_slope(x, &gt).unwrap();
            jac_err = jac_err.max(((fd - an) / an).abs());
        }
        let theta = PcThetaPrior::from_parts(&parts, 0.75, 0.75).unwrap();
        let phi = PcPhiPrior::from_structure(&r, 0.5, 2.0 / 3.0).unwrap();
        tail_err = tail_err.max((prior_mass(&theta, 0.0, 0.75).unwrap() - 0.75).abs());
        tail_err = tail_err.max((prior_mass(&phi, 0.0, 0.5).unwrap() - 2.0 / 3.0).abs());
    }
    let tau = PcPrecisionPrior::calibrate(1.0, 0.01).unwrap();
    // P(1/sqrt(tau) > 1) = P(tau < 1)
    tail_err = tail_err.max((prior_mass(&tau, 0.0, 1.0).unwrap() - 0.01).abs());
    ensure(kl_err < 1e-8, format!("KL distance error {kl_err:e}"))?;
    ensure(jac_err < 1e-5, format!("Jacobian relative error {jac_err:e}"))?;
    ensure(tail_err < 1e-4, format!("tail statement error {tail_err:e}"))?;
    Ok(format!("distance err {kl_err:.1e}, Jacobian rel err {jac_err:.1e}, tail err {tail_err:.1e}"))
}

fn criterion_5() -> Outcome {
    let g = rwanda().to_graph().unwrap();
    ensure(g.n() == 35, format!("graph has {} periods", g.n()))?;
    let parts = scale_parts(conflict_arw1_parts(&g).unwrap()).unwrap();
    let prior = PcThetaPrior::from_parts(&parts, 0.75, 0.75).unwrap();
    let q = prior_quantiles(&prior, &[0.025, 0.975]).unwrap();
    ensure((q[0] - 0.09).abs() <= 0.03 && (q[1] - 0.97).abs() <= 0.03, format!("interval [{:.4}, {:.4}]", q[0], q[1]))?;
    Ok(format!("95% interval [{:.4}, {:.4}], lambda {:.6}", q[0], q[1], prior.lambda))
}

fn criterion_6() -> Outcome {
    // conjugate scalar: x ~ N(0, 1/p), y_k | x ~ N(x, v)
    let (p, v) = (0.7, 0.4);
    let ys = [0.3, -0.1, 1.2, 0.8];
    let n = ys.len() as f64;
    let sys = GaussianSystem {
        prior_precision: DMatrix::from_element(1, 1, p),
        ln_pdet_prior: p.ln(),
        design: ys.iter().map(|_| vec![(0, 1.0)]).collect(),
        y: ys.to_vec(),
        variance: vec![v; ys.len()],
        constraints: DMatrix::zeros(0, 1),
    };
    let cond = gaussian_conditional(&sys).map_err(|e| e.to_string())?;
    let sy: f64 = ys.iter().sum();
    let syy: f64 = ys.iter().map(|y| y * y).sum();
    let post_prec = p + n / v;
    let mean = sy / v / post_prec;
    let ln_det = n * v.ln() + (1.0 + n / (p * v)).ln();
    let quad = syy / v - (sy / v).powi(2) / post_prec;
    let ln_ml = -0.5 * (n * (2.0 * std::f64::consts::PI).ln() + ln_det + quad);
    let toy = (cond.mean[0] - mean).abs().max((cond.covariance()[(0, 0)] - 1.0 / post_prec).abs()).max((cond.ln_marginal - ln_ml).abs());
    ensure(toy < 1e-10, format!("scalar toy error {toy:e}"))?;

    let spec = small_spec(10, StructuredKind::Adaptive, 5, false, 1);
    let sys = model_system(&spec, &spec.decode(&[1.2, -0.4, 0.3])).unwrap();
    let cond = gaussian_conditional(&sys).unwrap();
    let fast = loo_log_cpo(&sys, &cond, &cond.covariance()).unwrap();
    let mut cpo = 0.0f64;
    for k in 0..sys.y.len() {
        let refit = gaussian_conditional(&sys.without(k)).unwrap();
        let row = &sys.design[k];
        let m: f64 = row.iter().map(|&(c, a)| a * refit.mean[c]).sum();
        let s2 = row_quad(row, &refit.covariance()) + sys.variance[k];
        let want = -0.5 * ((2.0 * std::f64::consts::PI * s2).ln() + (sys.y[k] - m).powi(2) / s2);
        cpo = cpo.max((fast[k] - want).abs());
    }
    ensure(cpo < 1e-8, format!("CPO error {cpo:e}"))?;

    let spec = small_spec(5, StructuredKind::Nonadaptive, 6, false, 1);
    let f = fit(&spec, &GridConfig::default()).unwrap();
    let mc = monte_carlo_dic(&spec, &f, 100_000, 99);
    let dic_err = (mc - f.dic.dic).abs();
    ensure(dic_err < 0.05, format!("DIC {} vs Monte Carlo {mc}", f.dic.dic))?;
    Ok(format!("toy err {toy:.1e}, CPO err {cpo:.1e}, |DIC - MC| {dic_err:.3}"))
}

fn criterion_7() -> Outcome {
    let setting = SimSetting { trend: Trend::Triangle, tau_regime: TauRegime::Unequal, v: 1.0 / 150.0 };
    let data = simulate_dataset(&setting, 7, 0).unwrap();
    ensure(data.y.len() == 30, "dataset size")?;
    let models = StudyModels::new().unwrap();
    let plain = models.spec(StudyModel::SmoothedDirect, &data).unwrap();
    let adaptive = models.spec(StudyModel::Proposed, &data).unwrap();
    let fixed = ModelSpec::new(
        adaptive.parts().clone(),
        adaptive.observations().to_vec(),
        1,
        ModelConfig { theta_fixed: Some(1.0), ..adaptive.config().clone() },
    )
    .unwrap();
    let cfg = GridConfig::default();
    let a = fit(&plain, &cfg).unwrap();
    let b = fit(&fixed, &cfg).unwrap();
    let mut worst = 0.0f64;
    for (x, y) in a.latent.iter().zip(&b.latent).chain(a.area_eta.iter().zip(&b.area_eta)) {
        worst = worst.max((x.mean - y.mean).abs()).max((x.sd - y.sd).abs());
    }
    worst = worst.max((a.dic.dic - b.dic.dic).abs()).max((a.log_score - b.log_score).abs());
    ensure(a.latent.len() == b.latent.len() && worst < 1e-8, format!("max difference {worst:e}"))?;
    Ok(format!("max difference {worst:.1e}"))
}

fn criterion_8() -> Outcome {
    let cfg = GridConfig::default();
    let constant = StudyConfig {
        replicates: 50,
        seed: 2024,
        trends: vec![Trend::Constant],
        regimes: vec![TauRegime::Equal, TauRegime::Unequal],
        variances: vec![1.0 / 75.0, 1.0 / 150.0, 1.0 / 300.0],
    };
    let shocks = StudyConfig {
        trends: vec![Trend::LevelChange, Trend::Triangle],
        regimes: vec![TauRegime::Unequal],
        variances: vec![1.0 / 75.0, 1.0 / 300.0],
        ..constant.clone()
    };
    let t_const = run_study(&constant, &cfg).map_err(|e| e.to_string())?;
    let t_shock = run_study(&shocks, &cfg).map_err(|e| e.to_string())?;
    let failures = t_const.failures.len() + t_shock.failures.len();
    let get = |t: &StudyTable, trend, v| t.summary_for(trend, TauRegime::Unequal, v).cloned().unwrap();
    let mut notes = Vec::new();
    let mut bad = Vec::new();
    for trend in [Trend::LevelChange, Trend::Triangle] {
        let s = get(&t_shock, trend, 1.0 / 300.0);
        notes.push(format!("{trend} dDIC {:.2} dLS {:.3}", s.dic.median, s.ls.median));
        if !(s.dic.median > 0.0 && s.ls.median > 0.0) {
            bad.push(format!("(a) {trend}"));
        }
    }
    let worst_rmse = t_const.summaries.iter().map(|s| s.rmse.median.abs()).fold(0.0, f64::max);
    notes.push(format!("constant max |dRMSE| {worst_rmse:.4}"));
    if !(worst_rmse < 0.02) {
        bad.push("(b)".into());
    }
    let ls_small = get(&t_shock, Trend::Triangle, 1.0 / 300.0).ls.median.abs();
    let ls_large = get(&t_shock, Trend::Triangle, 1.0 / 75.0).ls.median.abs();
    notes.push(format!("triangle |dLS| {ls_small:.3} at 1/300 vs {ls_large:.3} at 1/75"));
    if !(ls_small >= ls_large) {
        bad.push("(c)".into());
    }
    notes.push(format!("{failures} failed fits"));
    let detail = notes.join("; ");
    if bad.is_empty() {
        Ok(detail)
    } else {
        Err(format!("{} failed: {detail}", bad.join(", ")))
    }
}

fn agmrf(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_agmrf")).args(args).output().map_err(|e| e.to_string())?;
    ensure(out.status.success(), format!("agmrf {}: {}", args[0], String::from_utf8_lossy(&out.stderr)))
}

fn same_csvs(a: &Path, b: &Path) -> Result<usize, String> {
    let mut n = 0;
    for entry in fs::read_dir(a).map_err(|e| e.to_string())? {
        let path = entry.map_err(|e| e.to_string())?.path();
        if path.extension().is_some_and(|e| e == "csv") {
            let name = path.file_name().unwrap();
            let other = fs::read(b.join(name)).map_err(|e| e.to_string())?;
            ensure(fs::read(&path).unwrap() == other, format!("{} differs", name.to_string_lossy()))?;
            n += 1;
        }
    }
    Ok(n)
}

fn criterion_9() -> Outcome {
    let dir = std::env::temp_dir().join(format!("agmrf-acceptance-{}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
    let p = |s: &str| dir.join(s).to_string_lossy().into_owned();
    fs::write(
        dir.join("study.json"),
        r#"{"replicates": 3, "seed": 11, "trends": ["triangle"], "regimes": ["unequal"], "variances": [0.006666666666666667]}"#,
    )
    .unwrap();
    fs::write(
        dir.join("graph.json"),
        r#"{"n_periods": 30, "start_year": 1, "conflict_years": [9, 10, 11, 12, 13, 14, 15], "forecast_until": 32}"#,
    )
    .unwrap();
    let mut files = 0;
    for run in ["s1", "s2"] {
        agmrf(&["study", "--config", &p("study.json"), "--out", &p(run)])?;
    }
    files += same_csvs(&dir.join("s1"), &dir.join("s2"))?;
    agmrf(&["simulate", "--trend", "level-change", "--regime", "unequal", "--v", "0.01", "--seed", "5", "--out", &p("sim")])?;
    for run in ["f1", "f2"] {
        agmrf(&[
            "fit", "--data", &p("sim/data.csv"), "--graph", &p("graph.json"), "--model", "proposed", "--draws", "500",
            "--seed", "3", "--out", &p(run),
        ])?;
    }
    files += same_csvs(&dir.join("f1"), &dir.join("f2"))?;
    let _ = fs::remove_dir_all(&dir);
    ensure(files >= 8, format!("only {files} CSV files compared"))?;
    Ok(format!("{files} CSV files byte-identical across reruns"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("structure reductions", criterion_1),
        ("quadratic forms", criterion_2),
        ("scaling", criterion_3),
        ("PC priors", criterion_4),
        ("Rwanda theta prior", criterion_5),
        ("inference exactness", criterion_6),
        ("theta = 1 equivalence", criterion_7),
        ("simulation study", criterion_8),
        ("determinism", criterion_9),
    ];
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (k, (name, check)) in criteria.iter().enumerate() {
        if !only.is_empty() && !only.contains(&(k + 1)) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panic: {}", msg.unwrap_or_default()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {} [{name}]: PASS ({detail}; {secs:.1}s)", k + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {} [{name}]: FAIL ({detail}; {secs:.1}s)", k + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
