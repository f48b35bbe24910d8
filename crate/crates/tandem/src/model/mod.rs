//! Shared encoder and the two task heads, all built on the tape engine.

pub mod dp;
pub mod encoder;
pub mod srl;

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{LstmCellVars, ParamSet, Tape, Tensor, Var};

/// Dimensions and dropout rates of the full model.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub max_tokens: usize,
    /// Embedding width e.
    pub embed_dim: usize,
    /// Encoder output width h; must be even (h/2 per direction).
    pub hidden_dim: usize,
    pub encoder_layers: usize,
    /// Scorer width d of the DP head.
    pub dp_dim: usize,
    pub n_dep_labels: usize,
    pub n_srl_tags: usize,
    /// Hidden width of the SRL MLP classifier.
    pub mlp_hidden: usize,
    /// When false, SRL routes encoder output plus the predicate indicator
    /// directly into unit averaging (no task-specific BiLSTM).
    pub use_srl_bilstm: bool,
    pub gamma_bert: f64,
    pub gamma_dp: f64,
    pub gamma_lstm: f64,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim == 0 || self.hidden_dim % 2 != 0 {
            return Err(Error::config(format!(
                "hidden_dim must be a positive even number, got {}",
                self.hidden_dim
            )));
        }
        for (name, v) in [
            ("vocab_size", self.vocab_size),
            ("max_tokens", self.max_tokens),
            ("embed_dim", self.embed_dim),
            ("encoder_layers", self.encoder_layers),
            ("dp_dim", self.dp_dim),
            ("n_dep_labels", self.n_dep_labels),
            ("n_srl_tags", self.n_srl_tags),
            ("mlp_hidden", self.mlp_hidden),
        ] {
            if v == 0 {
                return Err(Error::config(format!("{name} must be positive")));
            }
        }
        for (name, g) in [
            ("gamma_bert", self.gamma_bert),
            ("gamma_dp", self.gamma_dp),
            ("gamma_lstm", self.gamma_lstm),
        ] {
            if !(0.0..1.0).contains(&g) {
                return Err(Error::config(format!("{name} must be in [0,1), got {g}")));
            }
        }
        Ok(())
    }

    /// Width of the per-position vectors entering SRL unit averaging.
    pub fn srl_unit_width(&self) -> usize {
        if self.use_srl_bilstm {
            self.hidden_dim
        } else {
            self.hidden_dim + 1
        }
    }
}

/// Train-time randomness or deterministic evaluation.
pub enum RunMode<'a> {
    Train(&'a mut ChaCha8Rng),
    Eval,
}

impl RunMode<'_> {
    pub fn is_train(&self) -> bool {
        matches!(self, RunMode::Train(_))
    }
}

fn xavier(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize, shape: Vec<usize>) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n: usize = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-limit..limit)).collect())
        .expect("shape matches generated data")
}

fn embedding(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::new(
        vec![rows, cols],
        (0..rows * cols).map(|_| rng.gen_range(-0.1..0.1)).collect(),
    )
    .expect("shape matches generated data")
}

fn insert_lstm_dir(params: &mut ParamSet, rng: &mut ChaCha8Rng, prefix: &str, din: usize, dh: usize) {
    for gate in ["i", "f", "o", "g"] {
        params.insert(format!("{prefix}.w_{gate}"), xavier(rng, din, dh, vec![din, dh]));
        params.insert(format!("{prefix}.u_{gate}"), xavier(rng, dh, dh, vec![dh, dh]));
        // forget-gate bias starts at 1 so memory persists early in training
        let bias = if gate == "f" { 1.0 } else { 0.0 };
        params.insert(
            format!("{prefix}.b_{gate}"),
            Tensor::matrix(1, dh, vec![bias; dh]).expect("bias shape"),
        );
    }
}

/// Initialize every trainable tensor from the seed. The construction
/// order is fixed, so a seed fully determines the values.
pub fn init_params(cfg: &ModelConfig, seed: u64) -> Result<ParamSet> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParamSet::new();
    let h = cfg.hidden_dim;
    let h2 = h / 2;

    params.insert("encoder.tok_emb", embedding(&mut rng, cfg.vocab_size, cfg.embed_dim));
    params.insert("encoder.seg_emb", embedding(&mut rng, 2, cfg.embed_dim));
    params.insert("encoder.pos_emb", embedding(&mut rng, cfg.max_tokens, cfg.embed_dim));
    for layer in 0..cfg.encoder_layers {
        let din = if layer == 0 { cfg.embed_dim } else { h };
        insert_lstm_dir(&mut params, &mut rng, &format!("encoder.l{layer}.fw"), din, h2);
        insert_lstm_dir(&mut params, &mut rng, &format!("encoder.l{layer}.bw"), din, h2);
    }

    let d = cfg.dp_dim;
    params.insert("dp.u", xavier(&mut rng, h, d, vec![h, d]));
    params.insert("dp.w", xavier(&mut rng, h, d, vec![h, d]));
    params.insert("dp.v", xavier(&mut rng, d, 1, vec![d, 1]));
    params.insert(
        "dp.label_u",
        xavier(&mut rng, d, cfg.n_dep_labels, vec![d, cfg.n_dep_labels]),
    );

    if cfg.use_srl_bilstm {
        insert_lstm_dir(&mut params, &mut rng, "srl.lstm.fw", h + 1, h2);
        insert_lstm_dir(&mut params, &mut rng, "srl.lstm.bw", h + 1, h2);
    }
    let mlp_in = 2 * cfg.srl_unit_width();
    params.insert(
        "srl.mlp.w1",
        xavier(&mut rng, mlp_in, cfg.mlp_hidden, vec![mlp_in, cfg.mlp_hidden]),
    );
    params.insert("srl.mlp.b1", Tensor::zeros(vec![1, cfg.mlp_hidden]));
    params.insert(
        "srl.mlp.w2",
        xavier(&mut rng, cfg.mlp_hidden, cfg.n_srl_tags, vec![cfg.mlp_hidden, cfg.n_srl_tags]),
    );
    params.insert("srl.mlp.b2", Tensor::zeros(vec![1, cfg.n_srl_tags]));
    Ok(params)
}

/// Tape handles for every parameter of one forward/backward pass.
pub struct TapeParams {
    vars: BTreeMap<String, Var>,
}

impl TapeParams {
    /// Put every parameter on the tape as a differentiable leaf.
    pub fn leaf_all(tape: &mut Tape, params: &ParamSet) -> Self {
        let mut vars = BTreeMap::new();
        for (name, tensor) in params.iter() {
            vars.insert(name.clone(), tape.leaf(tensor.clone()));
        }
        TapeParams { vars }
    }

    /// Wrap externally created leaves (drives gradient-check harnesses).
    pub fn from_vars(vars: BTreeMap<String, Var>) -> Self {
        TapeParams { vars }
    }

    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::config(format!("parameter {name} not on tape")))
    }

    pub fn lstm_vars(&self, prefix: &str) -> Result<LstmCellVars> {
        Ok(LstmCellVars {
            w_i: self.var(&format!("{prefix}.w_i"))?,
            u_i: self.var(&format!("{prefix}.u_i"))?,
            b_i: self.var(&format!("{prefix}.b_i"))?,
            w_f: self.var(&format!("{prefix}.w_f"))?,
            u_f: self.var(&format!("{prefix}.u_f"))?,
            b_f: self.var(&format!("{prefix}.b_f"))?,
            w_o: self.var(&format!("{prefix}.w_o"))?,
            u_o: self.var(&format!("{prefix}.u_o"))?,
            b_o: self.var(&format!("{prefix}.b_o"))?,
            w_g: self.var(&format!("{prefix}.w_g"))?,
            u_g: self.var(&format!("{prefix}.u_g"))?,
            b_g: self.var(&format!("{prefix}.b_g"))?,
        })
    }

    /// Gradients of every parameter the loss actually touched.
    pub fn collect_grads(&self, tape: &Tape) -> BTreeMap<String, Tensor> {
        let mut grads = BTreeMap::new();
        for (name, &var) in &self.vars {
            if let Some(g) = tape.grad(var) {
                grads.insert(name.clone(), g);
            }
        }
        grads
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny_config() -> ModelConfig {
        ModelConfig {
            vocab_size: 30,
            max_tokens: 64,
            embed_dim: 6,
            hidden_dim: 8,
            encoder_layers: 1,
            dp_dim: 8,
            n_dep_labels: 3,
            n_srl_tags: 5,
            mlp_hidden: 8,
            use_srl_bilstm: true,
            gamma_bert: 0.1,
            gamma_dp: 0.1,
            gamma_lstm: 0.1,
        }
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let cfg = tiny_config();
        let a = init_params(&cfg, 7).unwrap();
        let b = init_params(&cfg, 7).unwrap();
        assert_eq!(a, b);
        let c = init_params(&cfg, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn odd_hidden_dim_rejected() {
        let cfg = ModelConfig {
            hidden_dim: 7,
            ..tiny_config()
        };
        assert!(init_params(&cfg, 0).is_err());
    }

    #[test]
    fn no_bilstm_config_has_no_srl_lstm_params() {
        let cfg = ModelConfig {
            use_srl_bilstm: false,
            ..tiny_config()
        };
        let params = init_params(&cfg, 0).unwrap();
        assert!(!params.contains("srl.lstm.fw.w_i"));
        // MLP input widens to 2*(h+1)
        assert_eq!(
            params.get("srl.mlp.w1").unwrap().shape(),
            &[2 * (cfg.hidden_dim + 1), cfg.mlp_hidden]
        );
    }
}
