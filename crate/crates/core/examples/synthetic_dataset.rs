//! Writes source and target samples of the synthetic task in the text format
//! read by `kind = "files"` data configs.
//!
//! ```bash
//! cargo run -p fedlab --example synthetic_dataset -- <out_dir> [samples] [seed]
//! ```

use std::path::PathBuf;

use fedlab::data::{Domain, SyntheticTask};
use fedlab::model::{evaluate_base, pretrain, ModelConfig, PretrainConfig};

fn main() -> fedlab::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = PathBuf::from(args.next().unwrap_or_else(|| "fedlab-out/data".into()));
    let n = args.next().and_then(|s| s.parse().ok()).unwrap_or(2000usize);
    let seed = args.next().and_then(|s| s.parse().ok()).unwrap_or(0u64);
    std::fs::create_dir_all(&dir).map_err(|e| fedlab::Error::Io { path: dir.clone(), source: e })?;

    let task = SyntheticTask::default();
    let source = task.sample(Domain::Source, n, seed)?;
    let target = task.sample(Domain::Target, n, seed + 1)?;
    source.save(dir.join("source_features.txt"), dir.join("source_labels.txt"))?;
    target.save(dir.join("target_features.txt"), dir.join("target_labels.txt"))?;

    // how much the domain shift hurts a model trained only on the source
    let model = ModelConfig { input_dim: task.input_dim, num_classes: task.num_classes, hidden_dims: vec![32], rank: 4 };
    let layers = pretrain(&source, &model, &PretrainConfig::default(), seed)?;
    let (src_loss, src_acc) = evaluate_base(&layers, &source)?;
    let (tgt_loss, tgt_acc) = evaluate_base(&layers, &target)?;
    println!("wrote {n} source and {n} target examples to {}", dir.display());
    println!("base model on source: accuracy {src_acc:.3} loss {src_loss:.3}");
    println!("base model on target: accuracy {tgt_acc:.3} loss {tgt_loss:.3}");
    Ok(())
}
