use super::*;
use crate::fixtures::shared_plus_private;

fn one_layer(id: usize, a: Matrix, b: Matrix) -> ClientUpdate {
    ClientUpdate {
        client_id: id,
        layers: vec![LoraAdapter { a, b }],
    }
}

fn row(values: &[f64]) -> Matrix {
    Matrix::from_vec(1, values.len(), values.to_vec()).unwrap()
}

fn random_updates(m: usize, seed: u64) -> Vec<ClientUpdate> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..m)
        .map(|i| {
            let layers = [(3, 5, 7), (2, 7, 4)]
                .iter()
                .map(|&(r, d_in, d_out)| LoraAdapter {
                    a: Matrix::from_fn(r, d_in, |_, _| rng.random_range(-1.0..1.0)),
                    b: Matrix::from_fn(d_out, r, |_, _| rng.random_range(-1.0..1.0)),
                })
                .collect();
            ClientUpdate { client_id: i, layers }
        })
        .collect()
}

fn max_diff(x: &[LoraAdapter], y: &[LoraAdapter]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(p, q)| p.a.sub(&q.a).unwrap().max_abs().max(p.b.sub(&q.b).unwrap().max_abs()))
        .fold(0.0, f64::max)
}

#[test]
fn stacking_uses_column_major_vec() {
    let us = [
        one_layer(0, Matrix::from_rows(&[&[1.0, 2.0]]), row(&[0.0])),
        one_layer(1, Matrix::from_rows(&[&[3.0, 4.0]]), row(&[0.0])),
    ];
    let s = stack_updates(&us).unwrap();
    assert_eq!(s.layers[0].a, Matrix::from_rows(&[&[1.0, 3.0], &[2.0, 4.0]]));
    assert_eq!(s.num_clients(), 2);

    let single = stack_updates(&us[..1]).unwrap();
    assert_eq!(single.layers[0].a, us[0].layers[0].a.vec());

    let rand = random_updates(3, 1);
    let s = stack_updates(&rand).unwrap();
    for (i, u) in rand.iter().enumerate() {
        for (k, l) in u.layers.iter().enumerate() {
            let (ra, ca) = s.layers[k].a_shape;
            assert_eq!(s.layers[k].a.col(i).reshape(ra, ca).unwrap(), l.a);
        }
    }
}

#[test]
fn stacking_rejects_bad_input() {
    assert!(matches!(stack_updates(&[]), Err(Error::InvalidArgument(_))));
    let us = [
        one_layer(0, row(&[1.0, 2.0]), row(&[0.0])),
        one_layer(1, row(&[1.0, 2.0, 3.0]), row(&[0.0])),
    ];
    assert!(matches!(stack_updates(&us), Err(Error::ShapeMismatch { .. })));
}

#[test]
fn fedavg_examples() {
    let us = [
        one_layer(0, row(&[1.0, 1.0]), row(&[0.0])),
        one_layer(1, row(&[3.0, 3.0]), row(&[0.0])),
    ];
    assert_eq!(aggregate_fedavg(&us).unwrap()[0].a, row(&[2.0, 2.0]));
    assert_eq!(aggregate_fedavg(&us[..1]).unwrap()[0].a, us[0].layers[0].a);
    let zero = vec![one_layer(0, row(&[0.0, 0.0]), row(&[0.0])); 3];
    assert_eq!(aggregate_fedavg(&zero).unwrap()[0].a, row(&[0.0, 0.0]));
}

#[test]
fn fedavg_is_linear() {
    let us = random_updates(4, 2);
    let scaled: Vec<ClientUpdate> = us
        .iter()
        .map(|u| ClientUpdate {
            client_id: u.client_id,
            layers: u
                .layers
                .iter()
                .map(|l| LoraAdapter {
                    a: l.a.scale(-2.5),
                    b: l.b.scale(-2.5),
                })
                .collect(),
        })
        .collect();
    let lhs = aggregate_fedavg(&scaled).unwrap();
    let rhs: Vec<LoraAdapter> = aggregate_fedavg(&us)
        .unwrap()
        .into_iter()
        .map(|l| LoraAdapter {
            a: l.a.scale(-2.5),
            b: l.b.scale(-2.5),
        })
        .collect();
    assert!(max_diff(&lhs, &rhs) < 1e-14);
}

#[test]
fn scaled_is_beta_times_fedavg_bitwise() {
    let us = random_updates(5, 3);
    assert_eq!(aggregate_scaled(&us, 1.0).unwrap(), aggregate_fedavg(&us).unwrap());
    for beta in [2.0, 3.0, 4.0, 0.7] {
        let want: Vec<LoraAdapter> = aggregate_fedavg(&us)
            .unwrap()
            .into_iter()
            .map(|l| LoraAdapter {
                a: l.a.scale(beta),
                b: l.b.scale(beta),
            })
            .collect();
        assert_eq!(aggregate_scaled(&us, beta).unwrap(), want);
    }
    let us = [
        one_layer(0, row(&[1.0, 1.0]), row(&[0.0])),
        one_layer(1, row(&[3.0, 3.0]), row(&[0.0])),
    ];
    assert_eq!(aggregate_scaled(&us, 2.0).unwrap()[0].a, row(&[4.0, 4.0]));
    assert!(aggregate_scaled(&us, 0.0).is_err());
}

#[test]
fn ties_hand_trace() {
    let us = [
        one_layer(0, row(&[2.0, -0.1]), row(&[0.0])),
        one_layer(1, row(&[1.0, -3.0]), row(&[0.0])),
    ];
    assert_eq!(aggregate_ties(&us, 0.5).unwrap()[0].a, row(&[2.0, -3.0]));
}

#[test]
fn ties_degenerate_cases() {
    let mut us = random_updates(3, 4);
    for u in &mut us {
        for l in &mut u.layers {
            l.a = l.a.map(|x| x.abs() + 0.1);
            l.b = l.b.map(|x| -(x.abs() + 0.1));
        }
    }
    assert_eq!(aggregate_ties(&us, 1.0).unwrap(), aggregate_fedavg(&us).unwrap());
    assert_eq!(aggregate_ties(&us[..1], 1.0).unwrap(), us[0].layers);
    assert!(aggregate_ties(&us, 0.0).is_err());
    assert!(aggregate_ties(&us, 1.5).is_err());
}

#[test]
fn ties_zero_sum_elects_positive() {
    let us = [
        one_layer(0, row(&[1.0]), row(&[0.0])),
        one_layer(1, row(&[-1.0]), row(&[0.0])),
    ];
    assert_eq!(aggregate_ties(&us, 1.0).unwrap()[0].a, row(&[1.0]));
}

#[test]
fn sparse_energy_examples() {
    let m = Matrix::from_rows(&[&[1.0, 2.0], &[-3.0, 0.5]]);
    assert_eq!(sparse_energy(&m, &m).unwrap(), Some(1.0));
    assert_eq!(sparse_energy(&m, &Matrix::zeros(2, 2)).unwrap(), Some(0.0));
    assert_eq!(sparse_energy(&m, &m.scale(0.5)).unwrap(), Some(0.5));
    let cancel = Matrix::from_rows(&[&[1.0, -1.0]]);
    assert_eq!(sparse_energy(&cancel, &cancel).unwrap(), None);
    assert!(sparse_energy(&m, &Matrix::zeros(1, 2)).is_err());
}

#[test]
fn adaptive_beta_examples() {
    assert_eq!(adaptive_beta(1.0, 10.0), 1.0);
    assert_eq!(adaptive_beta(0.25, 10.0), 4.0);
    assert_eq!(adaptive_beta(0.01, 10.0), 10.0);
    assert_eq!(adaptive_beta(0.0, 10.0), 1.0);
    assert_eq!(adaptive_beta(3.0, 10.0), 1.0);
    for e in [1e-9, 0.05, 0.3, 0.99, 1.0, 7.0] {
        let b = adaptive_beta(e, 4.0);
        assert!((1.0..=4.0).contains(&b));
    }
}

fn stack_norm(updates: &[ClientUpdate], layer: usize, kind: MatrixKind) -> f64 {
    stack_updates(updates).unwrap().layers[layer].stack(kind).0.frobenius_norm()
}

#[test]
fn fedrpca_with_unit_beta_matches_fedavg() {
    let cfg = RpcaConfig::default();
    let us = random_updates(6, 5);
    let out = aggregate_fedrpca(&us, &BetaMode::Fixed { beta: 1.0 }, &cfg).unwrap();
    let avg = aggregate_fedavg(&us).unwrap();
    for t in &out.trace {
        assert!(t.converged);
        let (got, want) = match t.matrix {
            MatrixKind::A => (&out.deltas[t.layer].a, &avg[t.layer].a),
            MatrixKind::B => (&out.deltas[t.layer].b, &avg[t.layer].b),
        };
        let bound = 10.0 * cfg.tol * stack_norm(&us, t.layer, t.matrix);
        assert!(got.sub(want).unwrap().frobenius_norm() <= bound);
    }
    assert_eq!(out.trace.len(), 4);
}

#[test]
fn fedrpca_recovers_shared_plus_private() {
    for seed in 0..3 {
        let toy = shared_plus_private(64, 64, 8, 0.05, seed).unwrap();
        let out = aggregate_fedrpca(&toy.updates, &BetaMode::Fixed { beta: 2.0 }, &RpcaConfig::default()).unwrap();
        let got = &out.deltas[0];
        let want = &toy.ideal[0];
        let err = (got.a.sub(&want.a).unwrap().frobenius_norm().powi(2)
            + got.b.sub(&want.b).unwrap().frobenius_norm().powi(2))
        .sqrt();
        let norm = (want.a.frobenius_norm().powi(2) + want.b.frobenius_norm().powi(2)).sqrt();
        assert!(err / norm < 0.05, "seed {seed}: relative error {}", err / norm);
    }
}

#[test]
fn fedrpca_single_client_reconstructs() {
    let us = random_updates(1, 6);
    let cfg = RpcaConfig::default();
    let out = aggregate_fedrpca(&us, &BetaMode::Fixed { beta: 1.0 }, &cfg).unwrap();
    for t in &out.trace {
        assert!(t.converged);
        assert!(t.rpca_residual <= cfg.tol);
    }
    assert!(max_diff(&out.deltas, &us[0].layers) < 1e-6);
}

#[test]
fn fedrpca_adaptive_trace_is_consistent() {
    let us = random_updates(5, 7);
    let out = aggregate_fedrpca(&us, &BetaMode::Adaptive { beta_max: 10.0 }, &RpcaConfig::default()).unwrap();
    for t in &out.trace {
        let e = t.energy.unwrap();
        assert_eq!(t.beta, adaptive_beta(e, 10.0));
    }
}

#[test]
fn aggregators_are_permutation_invariant() {
    let us = random_updates(5, 8);
    let mut rev = us.clone();
    rev.reverse();
    let specs = [
        AggregatorSpec::Fedavg {},
        AggregatorSpec::Scaled { beta: 2.0 },
        AggregatorSpec::Ties { keep_fraction: 0.3 },
        AggregatorSpec::default(),
    ];
    for spec in &specs {
        let x = aggregate(spec, &us).unwrap().deltas;
        let y = aggregate(spec, &rev).unwrap().deltas;
        assert!(max_diff(&x, &y) < 1e-9, "{}", spec.name());
    }
}

#[test]
fn spec_names_roundtrip() {
    for name in AGGREGATOR_NAMES {
        let spec = AggregatorSpec::from_name(name).unwrap();
        assert_eq!(spec.name(), name);
        spec.validate().unwrap();
    }
    assert!(AggregatorSpec::from_name("median").is_none());
    assert!(AggregatorSpec::Ties { keep_fraction: 0.0 }.validate().is_err());
}

#[test]
fn spec_parses_from_toml() {
    let spec: AggregatorSpec = toml::from_str("kind = \"fedrpca\"\nbeta = { mode = \"fixed\", beta = 2.0 }\n").unwrap();
    assert_eq!(
        spec,
        AggregatorSpec::Fedrpca {
            beta: BetaMode::Fixed { beta: 2.0 },
            rpca: RpcaConfig::default()
        }
    );
    assert!(toml::from_str::<AggregatorSpec>("kind = \"fedavg\"\nbeta = 2.0\n").is_err());
}
