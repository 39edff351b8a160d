//! Compares the analytic LoRA gradients of a small MLP with central finite
//! differences.
//!
//! ```bash
//! cargo run -p fedlab --example lora_gradcheck -- [seed]
//! ```

use fedlab::model::{init_layers, loss_and_grad, LoraAdapter, ModelConfig};
use fedlab::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> fedlab::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0u64);
    let config = ModelConfig { input_dim: 6, num_classes: 4, hidden_dims: vec![8, 5], rank: 2 };
    let layers = init_layers(&config, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
    // nonzero B so that the A gradients are not trivially zero
    let adapters: Vec<LoraAdapter> = config
        .layer_shapes()
        .into_iter()
        .map(|(o, i)| LoraAdapter {
            a: Matrix::from_fn(config.rank, i, |_, _| rng.random_range(-1.0..1.0)),
            b: Matrix::from_fn(o, config.rank, |_, _| rng.random_range(-0.5..0.5)),
        })
        .collect();
    let x = Matrix::from_fn(6, 10, |_, _| rng.random_range(-2.0..2.0));
    let labels: Vec<usize> = (0..10).map(|_| rng.random_range(0..4)).collect();

    let (loss, grads) = loss_and_grad(&layers, &adapters, &x, &labels)?;
    println!("loss {loss:.6}");
    let eps = 1e-5;
    for (k, g) in grads.iter().enumerate() {
        for (name, analytic, pick) in [
            ("A", &g.a, (|ad: &mut LoraAdapter| &mut ad.a) as fn(&mut LoraAdapter) -> &mut Matrix),
            ("B", &g.b, |ad: &mut LoraAdapter| &mut ad.b),
        ] {
            let mut numeric = analytic.clone();
            for idx in 0..analytic.len() {
                let at = |delta: f64| -> fedlab::Result<f64> {
                    let mut ad = adapters.clone();
                    pick(&mut ad[k]).as_mut_slice()[idx] += delta;
                    Ok(loss_and_grad(&layers, &ad, &x, &labels)?.0)
                };
                numeric.as_mut_slice()[idx] = (at(eps)? - at(-eps)?) / (2.0 * eps);
            }
            let err = numeric.sub(analytic)?.frobenius_norm() / analytic.frobenius_norm().max(1e-12);
            println!("layer {k} d{name} ({}x{})  relative error {err:.2e}", analytic.rows(), analytic.cols());
        }
    }
    Ok(())
}
