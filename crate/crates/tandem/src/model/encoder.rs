//! Shared trainable encoder: token + segment + position embeddings into a
//! bidirectional recurrent stack, one hidden vector per subword position.

use crate::error::{Error, Result};
use crate::model::{ModelConfig, RunMode, TapeParams};
use crate::numerics::{lstm_cell, Tape, Tensor, Var};
use crate::tokenize::AssembledInput;

/// One bidirectional layer: `[T,in] -> [T,2*h2]`.
pub fn bilstm_layer(
    tape: &mut Tape,
    tp: &TapeParams,
    x: Var,
    prefix: &str,
    h2: usize,
) -> Result<Var> {
    let t_len = tape.value(x).rows();
    let fw = tp.lstm_vars(&format!("{prefix}.fw"))?;
    let bw = tp.lstm_vars(&format!("{prefix}.bw"))?;

    let mut h = tape.constant(Tensor::zeros(vec![1, h2]));
    let mut c = tape.constant(Tensor::zeros(vec![1, h2]));
    let mut fw_states = Vec::with_capacity(t_len);
    for t in 0..t_len {
        let xt = tape.row(x, t)?;
        let (hn, cn) = lstm_cell(tape, xt, h, c, &fw)?;
        h = hn;
        c = cn;
        fw_states.push(h);
    }

    let mut h = tape.constant(Tensor::zeros(vec![1, h2]));
    let mut c = tape.constant(Tensor::zeros(vec![1, h2]));
    let mut bw_states = vec![h; t_len];
    for t in (0..t_len).rev() {
        let xt = tape.row(x, t)?;
        let (hn, cn) = lstm_cell(tape, xt, h, c, &bw)?;
        h = hn;
        c = cn;
        bw_states[t] = h;
    }

    let rows: Vec<Var> = (0..t_len)
        .map(|t| tape.concat_cols(fw_states[t], bw_states[t]))
        .collect::<Result<_>>()?;
    tape.concat_rows(&rows)
}

/// Encode an assembled input into `[positions, hidden_dim]`.
pub fn encode(
    tape: &mut Tape,
    tp: &TapeParams,
    cfg: &ModelConfig,
    input: &AssembledInput,
    mode: &mut RunMode,
) -> Result<Var> {
    let t_len = input.token_ids.len();
    if t_len > cfg.max_tokens {
        return Err(Error::length(format!(
            "input of {t_len} positions exceeds max_tokens {}",
            cfg.max_tokens
        )));
    }
    for &id in &input.token_ids {
        if id as usize >= cfg.vocab_size {
            return Err(Error::validation(format!(
                "token id {id} out of vocabulary size {}",
                cfg.vocab_size
            )));
        }
    }
    let ids: Vec<usize> = input.token_ids.iter().map(|&i| i as usize).collect();
    let segs: Vec<usize> = input.segment_ids.iter().map(|&s| s as usize).collect();
    let positions: Vec<usize> = (0..t_len).collect();

    let tok = tape.embedding_lookup(tp.var("encoder.tok_emb")?, &ids)?;
    let seg = tape.embedding_lookup(tp.var("encoder.seg_emb")?, &segs)?;
    let pos = tape.embedding_lookup(tp.var("encoder.pos_emb")?, &positions)?;
    let sum = tape.add(tok, seg)?;
    let mut x = tape.add(sum, pos)?;

    let h2 = cfg.hidden_dim / 2;
    for layer in 0..cfg.encoder_layers {
        x = bilstm_layer(tape, tp, x, &format!("encoder.l{layer}"), h2)?;
    }
    if let RunMode::Train(rng) = mode {
        x = tape.dropout_seeded(x, cfg.gamma_bert, *rng)?;
    }
    Ok(x)
}
