//! Checkpoint directories.
//!
//! ```text
//! <dir>/manifest.txt      format header, architecture, layer shapes
//! <dir>/layer<k>.weight.txt
//! <dir>/layer<k>.bias.txt
//! <dir>/layer<k>.lora_a.txt   (only when adapters are stored)
//! <dir>/layer<k>.lora_b.txt
//! ```
//!
//! The manifest is line oriented:
//!
//! ```text
//! fedlab-checkpoint 1
//! input_dim 16
//! num_classes 8
//! hidden_dims 32
//! rank 4
//! adapters true
//! layer 0 32 16
//! layer 1 8 32
//! ```

use std::path::Path;

use super::{DenseLayer, LoraAdapter, ModelConfig};
use crate::error::{Error, Result};
use crate::linalg::{read_matrix, write_matrix};

const MAGIC: &str = "fedlab-checkpoint 1";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub layers: Vec<DenseLayer>,
    pub adapters: Option<Vec<LoraAdapter>>,
}

pub fn save_checkpoint(dir: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let cfg = &ckpt.config;
    let hidden: Vec<String> = cfg.hidden_dims.iter().map(usize::to_string).collect();
    let mut manifest = format!(
        "{MAGIC}\ninput_dim {}\nnum_classes {}\nhidden_dims {}\nrank {}\nadapters {}\n",
        cfg.input_dim,
        cfg.num_classes,
        hidden.join(" "),
        cfg.rank,
        ckpt.adapters.is_some()
    );
    for (k, layer) in ckpt.layers.iter().enumerate() {
        manifest.push_str(&format!("layer {k} {} {}\n", layer.d_out(), layer.d_in()));
        write_matrix(dir.join(format!("layer{k}.weight.txt")), &layer.weight)?;
        write_matrix(dir.join(format!("layer{k}.bias.txt")), &layer.bias)?;
    }
    if let Some(adapters) = &ckpt.adapters {
        for (k, ad) in adapters.iter().enumerate() {
            write_matrix(dir.join(format!("layer{k}.lora_a.txt")), &ad.a)?;
            write_matrix(dir.join(format!("layer{k}.lora_b.txt")), &ad.b)?;
        }
    }
    let path = dir.join("manifest.txt");
    std::fs::write(&path, manifest).map_err(|e| Error::io(&path, e))
}

pub fn load_checkpoint(dir: impl AsRef<Path>) -> Result<Checkpoint> {
    let dir = dir.as_ref();
    let path = dir.join("manifest.txt");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let perr = |line: usize, message: String| Error::Parse {
        path: path.clone(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    match lines.next() {
        Some((_, MAGIC)) => {}
        _ => return Err(perr(1, format!("expected `{MAGIC}` header"))),
    }
    let mut input_dim = None;
    let mut num_classes = None;
    let mut hidden_dims = Vec::new();
    let mut rank = None;
    let mut with_adapters = false;
    let mut shapes = Vec::new();
    for (no, line) in lines.filter(|(_, l)| !l.is_empty()) {
        let mut toks = line.split_whitespace();
        let key = toks.next().unwrap_or_default();
        let nums = |toks: std::str::SplitWhitespace| -> Result<Vec<usize>> {
            toks.map(|t| t.parse().map_err(|_| perr(no, format!("invalid integer `{t}`"))))
                .collect()
        };
        match key {
            "input_dim" => input_dim = nums(toks)?.first().copied(),
            "num_classes" => num_classes = nums(toks)?.first().copied(),
            "hidden_dims" => hidden_dims = nums(toks)?,
            "rank" => rank = nums(toks)?.first().copied(),
            "adapters" => with_adapters = toks.next() == Some("true"),
            "layer" => {
                let v = nums(toks)?;
                if v.len() != 3 || v[0] != shapes.len() {
                    return Err(perr(no, "expected `layer <k> <d_out> <d_in>` in order".into()));
                }
                shapes.push((v[1], v[2]));
            }
            other => return Err(perr(no, format!("unknown manifest key `{other}`"))),
        }
    }
    let missing = |what: &str| perr(0, format!("manifest is missing `{what}`"));
    let config = ModelConfig {
        input_dim: input_dim.ok_or_else(|| missing("input_dim"))?,
        num_classes: num_classes.ok_or_else(|| missing("num_classes"))?,
        hidden_dims,
        rank: rank.ok_or_else(|| missing("rank"))?,
    };
    if config.layer_shapes() != shapes {
        return Err(perr(0, "layer shapes disagree with the architecture".into()));
    }
    let mut layers = Vec::with_capacity(shapes.len());
    let mut adapters = Vec::new();
    for (k, &(d_out, d_in)) in shapes.iter().enumerate() {
        let weight = read_matrix(dir.join(format!("layer{k}.weight.txt")))?;
        let bias = read_matrix(dir.join(format!("layer{k}.bias.txt")))?;
        if weight.shape() != (d_out, d_in) || bias.shape() != (d_out, 1) {
            return Err(perr(0, format!("layer {k} files do not match the manifest shape")));
        }
        layers.push(DenseLayer { weight, bias });
        if with_adapters {
            let a = read_matrix(dir.join(format!("layer{k}.lora_a.txt")))?;
            let b = read_matrix(dir.join(format!("layer{k}.lora_b.txt")))?;
            if a.shape() != (config.rank, d_in) || b.shape() != (d_out, config.rank) {
                return Err(perr(0, format!("layer {k} adapter files do not match rank {}", config.rank)));
            }
            adapters.push(LoraAdapter { a, b });
        }
    }
    Ok(Checkpoint {
        config,
        layers,
        adapters: with_adapters.then_some(adapters),
    })
}
