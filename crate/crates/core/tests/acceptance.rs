//! Acceptance suite. Runs every criterion in order, prints one PASS/FAIL
//! line each and exits non-zero if any fails.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use fedlab::aggregation::{
    aggregate_fedavg, aggregate_fedrpca, aggregate_scaled, aggregate_ties, stack_updates, AggregatorSpec, BetaMode,
    MatrixKind,
};
use fedlab::diagnostics::{decomposed_similarity, rounds_to_target, Selector};
use fedlab::experiment::{benchmark_config, prepare, run_experiment, RunConfig};
use fedlab::federation::{self, fedprox_loss_and_grad, local_train, ClientMethod, ClientUpdate, ServerState};
use fedlab::fixtures::{planted_low_rank_plus_sparse, shared_plus_private};
use fedlab::linalg::{soft_threshold, svt};
use fedlab::model::{DenseLayer, LoraAdapter};
use fedlab::rpca::{robust_pca, RpcaConfig};
use fedlab::Matrix;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn ok<T>(r: fedlab::Result<T>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn rel(a: &Matrix, b: &Matrix) -> f64 {
    a.sub(b).unwrap().frobenius_norm() / b.frobenius_norm()
}

// ---------------------------------------------------------------- 1

fn nuclear_2x2(z: [f64; 4]) -> f64 {
    // sigma1 + sigma2 = sqrt(||Z||_F^2 + 2 |det Z|)
    let f2: f64 = z.iter().map(|v| v * v).sum();
    let det = z[0] * z[3] - z[1] * z[2];
    (f2 + 2.0 * det.abs()).sqrt()
}

fn prox_objective(z: [f64; 4], x: [f64; 4], t: f64) -> f64 {
    let d2: f64 = z.iter().zip(&x).map(|(a, b)| (a - b) * (a - b)).sum();
    t * nuclear_2x2(z) + 0.5 * d2
}

fn criterion_1() -> Outcome {
    let tol = 1e-10;
    let st = ok(soft_threshold(&Matrix::from_rows(&[&[3.0, -1.0, 0.5]]), 1.0))?;
    ensure(st == Matrix::from_rows(&[&[2.0, 0.0, 0.0]]), || format!("shrink([3,-1,0.5], 1) = {st:?}"))?;
    let x = Matrix::from_rows(&[&[1.5, -2.0], &[0.0, 7.25]]);
    ensure(ok(soft_threshold(&x, 0.0))? == x, || "shrink(X, 0) != X".into())?;
    ensure(ok(soft_threshold(&Matrix::from_rows(&[&[-2.5]]), 2.5))?[(0, 0)] == 0.0, || "shrink(-2.5, 2.5) != 0".into())?;
    ensure(soft_threshold(&x, -1.0).is_err(), || "negative threshold accepted".into())?;

    let d = ok(svt(&Matrix::diag(&[5.0, 2.0, 0.5]), 1.0))?;
    ensure(d.sub(&Matrix::diag(&[4.0, 1.0, 0.0])).unwrap().max_abs() <= tol, || format!("svt(diag) = {d:?}"))?;
    ensure(ok(svt(&Matrix::zeros(3, 4), 2.0))? == Matrix::zeros(3, 4), || "svt(0) != 0".into())?;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let r = Matrix::from_fn(8, 5, |_, _| rng.random_range(-1.0..1.0));
    let back = ok(svt(&r, 0.0))?;
    ensure(back.sub(&r).unwrap().frobenius_norm() <= tol, || "svt(X, 0) does not reconstruct".into())?;

    // 2x2 diagonals: closed-form prox and a grid / perturbation search
    let mut worst_closed_form: f64 = 0.0;
    for _ in 0..200 {
        let (a, b) = (rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0));
        let t = rng.random_range(0.0..3.0);
        let z = ok(svt(&Matrix::from_rows(&[&[a, 0.0], &[0.0, b]]), t))?;
        let shrink = |v: f64| v.signum() * (v.abs() - t).max(0.0);
        let want = Matrix::from_rows(&[&[shrink(a), 0.0], &[0.0, shrink(b)]]);
        worst_closed_form = worst_closed_form.max(z.sub(&want).unwrap().max_abs());
        let zs = [z[(0, 0)], z[(0, 1)], z[(1, 0)], z[(1, 1)]];
        let x = [a, 0.0, 0.0, b];
        let best = prox_objective(zs, x, t);
        for i in 0..=40 {
            for j in 0..=40 {
                let cand = [-4.0 + 0.2 * i as f64, 0.0, 0.0, -4.0 + 0.2 * j as f64];
                ensure(best <= prox_objective(cand, x, t) + tol, || format!("grid beats svt at a={a} b={b} t={t}"))?;
            }
        }
        for _ in 0..50 {
            let cand: [f64; 4] = std::array::from_fn(|k| zs[k] + rng.random_range(-0.2..0.2));
            ensure(best <= prox_objective(cand, x, t) + tol, || format!("perturbation beats svt at a={a} b={b} t={t}"))?;
        }
    }
    ensure(worst_closed_form <= tol, || format!("closed-form deviation {worst_closed_form:e}"))?;
    Ok(format!("closed-form deviation {worst_closed_form:.1e}"))
}

// ---------------------------------------------------------------- 2

fn criterion_2() -> Outcome {
    let cfg = RpcaConfig::default();
    let mut converged = 0;
    let mut worst: f64 = 0.0;
    for seed in 0..100u64 {
        let m = if seed % 2 == 0 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            Matrix::from_fn(50, 20, |_, _| rng.random_range(-1.0..1.0))
        } else {
            ok(planted_low_rank_plus_sparse(50, 20, 2, 0.05, 5.0, seed)).map(|p| p.observed)?
        };
        let dec = ok(robust_pca(&m, &cfg))?;
        let actual = m.sub(&dec.low_rank).unwrap().sub(&dec.sparse).unwrap().frobenius_norm();
        ensure(actual == dec.residual, || format!("seed {seed}: reported {} but actual {actual}", dec.residual))?;
        if dec.converged {
            converged += 1;
            let ratio = actual / m.frobenius_norm();
            worst = worst.max(ratio);
            ensure(ratio <= cfg.tol, || format!("seed {seed}: converged with ratio {ratio:e}"))?;
        }
    }
    Ok(format!("{converged}/100 converged, worst ratio {worst:.2e}"))
}

// ---------------------------------------------------------------- 3

fn criterion_3() -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in 0..5 {
        let p = ok(planted_low_rank_plus_sparse(200, 100, 5, 0.05, 10.0, seed))?;
        let dec = ok(robust_pca(&p.observed, &RpcaConfig::default()))?;
        let (el, es) = (rel(&dec.low_rank, &p.low_rank), rel(&dec.sparse, &p.sparse));
        worst = worst.max(el).max(es);
        ensure(el <= 1e-3 && es <= 1e-3, || format!("seed {seed}: L error {el:e}, S error {es:e}"))?;
    }
    Ok(format!("worst relative error {worst:.1e}"))
}

// ---------------------------------------------------------------- 4

fn random_matrix(rows: usize, cols: usize, scale: f64, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-scale..scale))
}

fn criterion_4() -> Outcome {
    let eps = 1e-5;
    let mut worst: f64 = 0.0;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let d_in = rng.random_range(2..=6);
        let classes = rng.random_range(2..=4);
        let mut dims = vec![d_in];
        if seed % 2 == 1 {
            dims.push(rng.random_range(3..=5));
        }
        dims.push(classes);
        let rank = 2.min(classes).min(d_in);
        let mut layers = Vec::new();
        let mut adapters = Vec::new();
        let mut global = Vec::new();
        for w in dims.windows(2) {
            let (i, o) = (w[0], w[1]);
            layers.push(DenseLayer { weight: random_matrix(o, i, 1.0, &mut rng), bias: random_matrix(o, 1, 0.5, &mut rng) });
            adapters.push(LoraAdapter { a: random_matrix(rank, i, 1.0, &mut rng), b: random_matrix(o, rank, 1.0, &mut rng) });
            global.push(LoraAdapter { a: random_matrix(rank, i, 1.0, &mut rng), b: random_matrix(o, rank, 1.0, &mut rng) });
        }
        let n = rng.random_range(1..=5);
        let x = random_matrix(d_in, n, 2.0, &mut rng);
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
        let mu = if seed < 5 { 0.0 } else { rng.random_range(0.01..2.0) };

        let loss = |ad: &[LoraAdapter]| ok(fedprox_loss_and_grad(&layers, ad, &global, mu, &x, &labels)).map(|r| r.0);
        let (_, grads) = ok(fedprox_loss_and_grad(&layers, &adapters, &global, mu, &x, &labels))?;
        let (mut num, mut den_fd, mut den_an) = (0.0, 0.0, 0.0);
        for k in 0..adapters.len() {
            for which in 0..2 {
                let len = if which == 0 { adapters[k].a.len() } else { adapters[k].b.len() };
                for idx in 0..len {
                    let bump = |delta: f64| {
                        let mut ad = adapters.clone();
                        let m = if which == 0 { &mut ad[k].a } else { &mut ad[k].b };
                        m.as_mut_slice()[idx] += delta;
                        ad
                    };
                    let fd = (loss(&bump(eps))? - loss(&bump(-eps))?) / (2.0 * eps);
                    let an = if which == 0 { grads[k].a.as_slice()[idx] } else { grads[k].b.as_slice()[idx] };
                    num += (fd - an) * (fd - an);
                    den_fd += fd * fd;
                    den_an += an * an;
                }
            }
        }
        let err = num.sqrt() / den_fd.sqrt().max(den_an.sqrt()).max(1e-12);
        worst = worst.max(err);
        ensure(err < 1e-5, || format!("instance {seed} (mu {mu}): relative error {err:e}"))?;
    }
    Ok(format!("worst relative error {worst:.1e} over 20 instances"))
}

// ---------------------------------------------------------------- shared fixtures

fn benchmark_round_updates(cfg: &RunConfig, round: usize) -> Result<Vec<ClientUpdate>, String> {
    let mut cfg = cfg.clone();
    cfg.federation.rounds = round + 1;
    let cfg = ok(cfg.resolve())?;
    let prepared = ok(prepare(&cfg))?;
    let mut captured = Vec::new();
    ok(federation::run(&cfg.federation, &AggregatorSpec::Fedavg {}, prepared.setup, |o| {
        if o.metrics.round == round as i64 {
            captured = o.updates.clone();
        }
        Ok(())
    }))?;
    Ok(captured)
}

// ---------------------------------------------------------------- 5

fn criterion_5() -> Outcome {
    let cfg = RpcaConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let synthetic: Vec<ClientUpdate> = (0..8)
        .map(|i| ClientUpdate {
            client_id: i,
            layers: vec![LoraAdapter { a: random_matrix(4, 12, 1.0, &mut rng), b: random_matrix(10, 4, 1.0, &mut rng) }],
        })
        .collect();
    let realistic = benchmark_round_updates(&benchmark_config(), 0)?;
    let mut worst: f64 = 0.0;
    for updates in [synthetic, realistic] {
        let rpca = ok(aggregate_fedrpca(&updates, &BetaMode::Fixed { beta: 1.0 }, &cfg))?;
        let avg = ok(aggregate_fedavg(&updates))?;
        let stacks = ok(stack_updates(&updates))?;
        for t in &rpca.trace {
            let (got, want) = match t.matrix {
                MatrixKind::A => (&rpca.deltas[t.layer].a, &avg[t.layer].a),
                MatrixKind::B => (&rpca.deltas[t.layer].b, &avg[t.layer].b),
            };
            let bound = 10.0 * cfg.tol * stacks.layers[t.layer].stack(t.matrix).0.frobenius_norm();
            let dist = got.sub(want).unwrap().frobenius_norm();
            worst = worst.max(dist / bound);
            ensure(dist <= bound, || format!("layer {} {}: distance {dist:e} > bound {bound:e}", t.layer, t.matrix))?;
        }
    }
    Ok(format!("worst distance / bound {worst:.2e}"))
}

// ---------------------------------------------------------------- 6

fn criterion_6() -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in 0..5 {
        let toy = ok(shared_plus_private(64, 64, 8, 0.05, seed))?;
        let out = ok(aggregate_fedrpca(&toy.updates, &BetaMode::Fixed { beta: 2.0 }, &RpcaConfig::default()))?;
        let (g, w) = (&out.deltas[0], &toy.ideal[0]);
        let err = (g.a.sub(&w.a).unwrap().frobenius_norm().powi(2) + g.b.sub(&w.b).unwrap().frobenius_norm().powi(2)).sqrt();
        let norm = (w.a.frobenius_norm().powi(2) + w.b.frobenius_norm().powi(2)).sqrt();
        worst = worst.max(err / norm);
        ensure(err / norm <= 0.05, || format!("seed {seed}: relative error {:.4}", err / norm))?;
    }
    Ok(format!("worst relative error {worst:.1e} over 5 seeds"))
}

// ---------------------------------------------------------------- 7

fn criterion_7() -> Outcome {
    let updates = benchmark_round_updates(&benchmark_config(), 1)?;
    let d = ok(decomposed_similarity(&updates, Selector::all(), &RpcaConfig::default()))?;
    let (raw, low, sparse) = ok(d.means())?;
    let summary = format!("L {low:.4} > raw {raw:.4} > S {sparse:.4}");
    ensure(low > raw && raw > sparse, || summary.clone())?;
    Ok(summary)
}

// ---------------------------------------------------------------- 8

fn criterion_8(tmp: &Path) -> Outcome {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().map_err(|e| e.to_string())?;
    let go = |spec: AggregatorSpec, name: &str| {
        let mut cfg = benchmark_config();
        cfg.aggregator = spec;
        cfg.output_dir = tmp.join(name);
        pool.install(|| run_experiment(&cfg))
    };
    let fedavg = ok(go(AggregatorSpec::Fedavg {}, "fedavg"))?;
    let fedrpca = ok(go(AggregatorSpec::default(), "fedrpca"))?;
    let target = 0.9 * fedavg.final_accuracy;
    let r_avg = rounds_to_target(&fedavg.rounds, target);
    let r_rpca = rounds_to_target(&fedrpca.rounds, target);
    let summary = format!(
        "final fedrpca {:.4} vs fedavg {:.4}; rounds to {target:.4}: fedrpca {r_rpca:?} vs fedavg {r_avg:?}",
        fedrpca.final_accuracy, fedavg.final_accuracy
    );
    ensure(fedrpca.final_accuracy >= fedavg.final_accuracy, || summary.clone())?;
    let faster = match (r_rpca, r_avg) {
        (Some(a), Some(b)) => a <= b,
        (Some(_), None) => true,
        _ => false,
    };
    ensure(faster, || summary.clone())?;
    Ok(summary)
}

// ---------------------------------------------------------------- 9

fn small_federation() -> Result<(RunConfig, federation::FederatedSetup), String> {
    let mut cfg = benchmark_config();
    cfg.federation.num_clients = 6;
    if let fedlab::experiment::DataConfig::Synthetic { target_samples, .. } = &mut cfg.data {
        *target_samples = 3000;
    }
    let cfg = ok(cfg.resolve())?;
    let setup = ok(prepare(&cfg))?.setup;
    Ok((cfg, setup))
}

fn criterion_9() -> Outcome {
    let (cfg, setup) = small_federation()?;

    // FedProx(mu = 0) == plain, per client and over whole runs
    let mut prox_cfg = cfg.federation.clone();
    prox_cfg.client_method = ClientMethod::Fedprox { mu: 0.0 };
    prox_cfg.rounds = 3;
    let mut plain_cfg = cfg.federation.clone();
    plain_cfg.rounds = 3;
    let server = ServerState::new(setup.layers.clone(), setup.adapters.clone(), plain_cfg.client_method, 6);
    for (id, data) in setup.clients.iter().enumerate() {
        let a = ok(local_train(&server, id, data, &plain_cfg))?;
        let b = ok(local_train(&server, id, data, &prox_cfg))?;
        ensure(a == b, || format!("fedprox(mu=0) differs from plain on client {id}"))?;
    }
    let spec = AggregatorSpec::Fedavg {};
    let a = ok(federation::run(&plain_cfg, &spec, setup.clone(), |_| Ok(())))?;
    let b = ok(federation::run(&prox_cfg, &spec, setup.clone(), |_| Ok(())))?;
    ensure(a.rounds == b.rounds && a.server.adapters == b.server.adapters, || "fedprox(mu=0) run differs".into())?;

    // scaled(beta = 1) == fedavg
    let updates = benchmark_round_updates(&benchmark_config(), 0)?;
    ensure(ok(aggregate_scaled(&updates, 1.0))? == ok(aggregate_fedavg(&updates))?, || "scaled(1) != fedavg".into())?;

    // TIES hand trace
    let row = |v: &[f64]| Matrix::from_vec(1, v.len(), v.to_vec()).unwrap();
    let ties_in = vec![
        ClientUpdate { client_id: 0, layers: vec![LoraAdapter { a: row(&[2.0, -0.1]), b: row(&[0.0]) }] },
        ClientUpdate { client_id: 1, layers: vec![LoraAdapter { a: row(&[1.0, -3.0]), b: row(&[0.0]) }] },
    ];
    let merged = ok(aggregate_ties(&ties_in, 0.5))?;
    ensure(merged[0].a == row(&[2.0, -3.0]), || format!("ties merged {:?}", merged[0].a))?;

    // SCAFFOLD: c == mean(c_i) after every round
    let mut sc = cfg.federation.clone();
    sc.client_method = ClientMethod::Scaffold {};
    let mut server = ServerState::new(setup.layers.clone(), setup.adapters.clone(), sc.client_method, 6);
    for round in 0..5 {
        ok(federation::run_round(&mut server, &setup.clients, &spec, &sc, &setup.test))?;
        let state = server.scaffold.as_ref().ok_or("no scaffold state")?;
        let mut want: Vec<LoraAdapter> = state.clients[0].iter().map(LoraAdapter::zeros_like).collect();
        for ci in &state.clients {
            for (w, c) in want.iter_mut().zip(ci) {
                w.a.axpy(1.0, &c.a).unwrap();
                w.b.axpy(1.0, &c.b).unwrap();
            }
        }
        let m = state.clients.len() as f64;
        let worst = state
            .server
            .iter()
            .zip(&want)
            .map(|(s, w)| s.a.sub(&w.a.scale(1.0 / m)).unwrap().max_abs().max(s.b.sub(&w.b.scale(1.0 / m)).unwrap().max_abs()))
            .fold(0.0, f64::max);
        ensure(worst <= 1e-12, || format!("round {round}: |c - mean(c_i)| = {worst:e}"))?;
    }
    Ok("fedprox(0) == plain, scaled(1) == fedavg, ties trace, scaffold mean over 5 rounds".into())
}

// ---------------------------------------------------------------- 10

fn run_cli(config: &Path, out: &Path, threads: usize) -> Result<(), String> {
    let status = Command::new(env!("CARGO_BIN_EXE_fedlab"))
        .args(["run", config.to_str().unwrap(), "--output-dir", out.to_str().unwrap(), "--threads", &threads.to_string()])
        .env_remove("FEDLAB_SEED")
        .output()
        .map_err(|e| e.to_string())?;
    ensure(status.status.success(), || format!("fedlab run failed: {}", String::from_utf8_lossy(&status.stderr)))
}

fn criterion_10(tmp: &Path) -> Outcome {
    let mut cfg = benchmark_config();
    cfg.federation.rounds = 8;
    let config = tmp.join("determinism.toml");
    std::fs::write(&config, ok(cfg.to_toml())?).map_err(|e| e.to_string())?;
    let runs = [("first", 1), ("second", 1), ("threads4", 4)];
    for (name, threads) in runs {
        run_cli(&config, &tmp.join(name), threads)?;
    }
    for file in ["metrics.csv", "rpca_trace.csv"] {
        let read = |name: &str| std::fs::read(tmp.join(name).join(file)).map_err(|e| e.to_string());
        let base = read("first")?;
        for (name, _) in &runs[1..] {
            ensure(read(name)? == base, || format!("{file} differs between first and {name}"))?;
        }
    }
    Ok("3 invocations (threads 1, 1, 4), metrics.csv and rpca_trace.csv byte-identical".into())
}

fn main() {
    let tmp = tempfile::tempdir().expect("temp dir");
    let criteria: Vec<(&str, Duration, Box<dyn Fn() -> Outcome>)> = vec![
        ("prox operators", Duration::from_secs(1), Box::new(criterion_1)),
        ("rpca reconstruction contract", Duration::from_secs(30), Box::new(criterion_2)),
        ("rpca planted recovery", Duration::from_secs(60), Box::new(criterion_3)),
        ("gradient fidelity", Duration::from_secs(10), Box::new(criterion_4)),
        ("beta = 1 degeneracy", Duration::from_secs(5), Box::new(criterion_5)),
        ("shared + private recovery", Duration::from_secs(5), Box::new(criterion_6)),
        ("similarity ordering", Duration::from_secs(120), Box::new(criterion_7)),
        ("trend vs fedavg", Duration::from_secs(600), Box::new(|| criterion_8(tmp.path()))),
        ("baseline sanity", Duration::from_secs(120), Box::new(criterion_9)),
        ("determinism", Duration::from_secs(600), Box::new(|| criterion_10(tmp.path()))),
    ];
    let mut failed = 0;
    for (i, (name, budget, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = check();
        let elapsed = start.elapsed();
        let (verdict, detail) = match result {
            Ok(d) if elapsed <= *budget => ("PASS", d),
            Ok(d) => ("FAIL", format!("{d}; took {elapsed:.1?}, budget {budget:?}")),
            Err(e) => ("FAIL", e),
        };
        if verdict == "FAIL" {
            failed += 1;
        }
        println!("{verdict} criterion {:>2} {name} ({elapsed:.1?}): {detail}", i + 1);
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
    println!("all 10 criteria passed");
}
