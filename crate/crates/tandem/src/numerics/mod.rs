//! Minimal dense-tensor engine with reverse-mode differentiation,
//! covering exactly the operations the models need, plus AdamW and the
//! checkpoint container. Everything is 64-bit and single-threaded.

mod checkpoint;
mod optim;
mod tape;
mod tensor;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use optim::{AdamW, ParamSet};
pub use tape::{lstm_cell, LstmCellVars, Tape, Var};
pub use tensor::Tensor;

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeMap;

    const FD_EPS: f64 = 1e-5;
    const FD_TOL: f64 = 1e-4;

    fn rel_ok(analytic: f64, fd: f64, tol: f64) -> bool {
        (analytic - fd).abs() <= tol * analytic.abs().max(fd.abs()).max(1.0)
    }

    /// Central finite differences against the analytic gradients for a
    /// scalar-valued graph built by `build` over the given leaf tensors.
    fn check_gradients<F>(inputs: &[Tensor], build: F)
    where
        F: Fn(&mut Tape, &[Var]) -> Var,
    {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
        let loss = build(&mut tape, &vars);
        assert!(tape.value(loss).is_scalar(), "graph must end in a scalar");
        tape.backward(loss).unwrap();
        let analytic: Vec<Tensor> = vars
            .iter()
            .zip(inputs)
            .map(|(&v, t)| {
                tape.grad(v)
                    .unwrap_or_else(|| Tensor::zeros(t.shape().to_vec()))
            })
            .collect();

        let eval = |ins: &[Tensor]| -> f64 {
            let mut tp = Tape::new();
            let vs: Vec<Var> = ins.iter().map(|t| tp.leaf(t.clone())).collect();
            let l = build(&mut tp, &vs);
            tp.value(l).item().unwrap()
        };

        for i in 0..inputs.len() {
            for j in 0..inputs[i].len() {
                let mut plus = inputs.to_vec();
                plus[i].data_mut()[j] += FD_EPS;
                let mut minus = inputs.to_vec();
                minus[i].data_mut()[j] -= FD_EPS;
                let fd = (eval(&plus) - eval(&minus)) / (2.0 * FD_EPS);
                let a = analytic[i].data()[j];
                assert!(
                    rel_ok(a, fd, FD_TOL),
                    "input {i} component {j}: analytic {a} vs fd {fd}"
                );
            }
        }
    }

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor {
        let n: usize = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn tanh_of_zero_is_zero() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::vector(vec![0.0]));
        let y = tape.tanh(x);
        assert_eq!(tape.value(y).data(), &[0.0]);
    }

    #[test]
    fn log_softmax_uniform_scores() {
        let mut tape = Tape::new();
        let k = 7;
        let x = tape.constant(Tensor::matrix(1, k, vec![0.3; k]).unwrap());
        let y = tape.log_softmax_rows(x, None).unwrap();
        for &v in tape.value(y).data() {
            assert!((v + (k as f64).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn log_softmax_masked_row_excludes_candidates() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::matrix(1, 3, vec![5.0, 1.0, 1.0]).unwrap());
        let y = tape
            .log_softmax_rows(x, Some(vec![vec![true, false, false]]))
            .unwrap();
        let out = tape.value(y).data();
        assert_eq!(out[0], f64::NEG_INFINITY);
        assert!((out[1] - (0.5f64).ln()).abs() < 1e-12);
        let mut t2 = Tape::new();
        let x2 = t2.constant(Tensor::matrix(1, 2, vec![0.0, 0.0]).unwrap());
        assert!(t2
            .log_softmax_rows(x2, Some(vec![vec![true, true]]))
            .is_err());
    }

    #[test]
    fn backward_of_sum_is_ones() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, -2.0, 7.5]));
        let s = tape.sum(x);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn backward_of_dot_product() {
        let mut tape = Tape::new();
        let xv = vec![1.0, 2.0, 3.0];
        let yv = vec![-1.0, 0.5, 2.0];
        let x = tape.leaf(Tensor::vector(xv.clone()));
        let y = tape.leaf(Tensor::vector(yv.clone()));
        let p = tape.mul(x, y).unwrap();
        let s = tape.sum(p);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), yv.as_slice());
        assert_eq!(tape.grad(y).unwrap().data(), xv.as_slice());
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::matrix(2, 3, vec![0.0; 6]).unwrap());
        let b = tape.constant(Tensor::matrix(2, 2, vec![0.0; 4]).unwrap());
        let err = tape.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("[2,3]") && err.contains("[2,2]"), "{err}");
    }

    #[test]
    fn gradcheck_matmul() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = rand_tensor(&mut rng, vec![3, 4]);
        let b = rand_tensor(&mut rng, vec![4, 2]);
        check_gradients(&[a, b], |t, vs| {
            let m = t.matmul(vs[0], vs[1]).unwrap();
            let sq = t.mul(m, m).unwrap();
            t.sum(sq)
        });
    }

    #[test]
    fn gradcheck_elementwise_and_structure_ops() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = rand_tensor(&mut rng, vec![3, 4]);
        let b = rand_tensor(&mut rng, vec![3, 4]);
        let row = rand_tensor(&mut rng, vec![1, 4]);
        check_gradients(&[a, b, row], |t, vs| {
            let s = t.add(vs[0], vs[1]).unwrap();
            let s = t.add_row_broadcast(s, vs[2]).unwrap();
            let s = t.tanh(s);
            let m = t.mul(s, vs[0]).unwrap();
            let m = t.sigmoid(m);
            let m = t.scale(m, 1.7);
            let c = t.concat_cols(m, vs[1]).unwrap();
            let r0 = t.row(c, 0).unwrap();
            let tiled = t.tile_row(r0, 2).unwrap();
            let sl = t.rows_slice(c, 1, 3).unwrap();
            let tr = t.transpose(sl).unwrap();
            let tr2 = t.transpose(tr).unwrap();
            let stacked = t.concat_rows(&[tiled, tr2]).unwrap();
            t.sum(stacked)
        });
    }

    #[test]
    fn gradcheck_embedding_dropout_mean_sets() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let table = rand_tensor(&mut rng, vec![5, 3]);
        let mask: Vec<f64> = (0..12)
            .map(|_| if rng.gen::<f64>() < 0.25 { 0.0 } else { 1.0 })
            .collect();
        check_gradients(&[table], move |t, vs| {
            let e = t.embedding_lookup(vs[0], &[0, 3, 3, 1]).unwrap();
            let d = t.dropout(e, 0.25, mask.clone()).unwrap();
            let m = t
                .mean_over_sets(d, &[vec![0, 2], vec![1], vec![3, 0, 1]])
                .unwrap();
            t.sum(m)
        });
    }

    #[test]
    fn gradcheck_log_softmax_and_gather() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = rand_tensor(&mut rng, vec![3, 4]);
        let mask = vec![
            vec![true, false, false, false],
            vec![false, true, false, false],
            vec![false, false, true, false],
        ];
        check_gradients(&[x], move |t, vs| {
            let lp = t.log_softmax_rows(vs[0], Some(mask.clone())).unwrap();
            let g = t.gather(lp, &[(0, 1), (1, 3), (2, 0)]).unwrap();
            t.sum(g)
        });
    }

    #[test]
    fn gradcheck_lstm_cell() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let din = 3;
        let dh = 2;
        let mut inputs = vec![
            rand_tensor(&mut rng, vec![1, din]),
            rand_tensor(&mut rng, vec![1, dh]),
            rand_tensor(&mut rng, vec![1, dh]),
        ];
        for _ in 0..4 {
            inputs.push(rand_tensor(&mut rng, vec![din, dh]));
            inputs.push(rand_tensor(&mut rng, vec![dh, dh]));
            inputs.push(rand_tensor(&mut rng, vec![1, dh]));
        }
        check_gradients(&inputs, |t, vs| {
            let p = LstmCellVars {
                w_i: vs[3],
                u_i: vs[4],
                b_i: vs[5],
                w_f: vs[6],
                u_f: vs[7],
                b_f: vs[8],
                w_o: vs[9],
                u_o: vs[10],
                b_o: vs[11],
                w_g: vs[12],
                u_g: vs[13],
                b_g: vs[14],
            };
            let (h, c) = lstm_cell(t, vs[0], vs[1], vs[2], &p).unwrap();
            let hs = t.sum(h);
            let cs = t.sum(c);
            t.add(hs, cs).unwrap()
        });
    }

    /// Direct-formula evaluation of one LSTM step, written independently
    /// of the tape, used as the oracle for `lstm_cell`.
    #[test]
    fn lstm_cell_matches_direct_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let din = 4;
        let dh = 3;
        let x = rand_tensor(&mut rng, vec![1, din]);
        let h = rand_tensor(&mut rng, vec![1, dh]);
        let c = rand_tensor(&mut rng, vec![1, dh]);
        let ws: Vec<Tensor> = (0..4).map(|_| rand_tensor(&mut rng, vec![din, dh])).collect();
        let us: Vec<Tensor> = (0..4).map(|_| rand_tensor(&mut rng, vec![dh, dh])).collect();
        let bs: Vec<Tensor> = (0..4).map(|_| rand_tensor(&mut rng, vec![1, dh])).collect();

        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let hv = tape.constant(h.clone());
        let cv = tape.constant(c.clone());
        let wv: Vec<Var> = ws.iter().map(|t| tape.constant(t.clone())).collect();
        let uv: Vec<Var> = us.iter().map(|t| tape.constant(t.clone())).collect();
        let bv: Vec<Var> = bs.iter().map(|t| tape.constant(t.clone())).collect();
        let p = LstmCellVars {
            w_i: wv[0],
            u_i: uv[0],
            b_i: bv[0],
            w_f: wv[1],
            u_f: uv[1],
            b_f: bv[1],
            w_o: wv[2],
            u_o: uv[2],
            b_o: bv[2],
            w_g: wv[3],
            u_g: uv[3],
            b_g: bv[3],
        };
        let (hn, cn) = lstm_cell(&mut tape, xv, hv, cv, &p).unwrap();

        // oracle: gate_k[j] = act(sum_i x[i] W[i,j] + sum_i h[i] U[i,j] + b[j])
        let gate = |w: &Tensor, u: &Tensor, b: &Tensor, act: &dyn Fn(f64) -> f64| -> Vec<f64> {
            (0..dh)
                .map(|j| {
                    let mut s = b.data()[j];
                    for i in 0..din {
                        s += x.data()[i] * w.at(i, j);
                    }
                    for i in 0..dh {
                        s += h.data()[i] * u.at(i, j);
                    }
                    act(s)
                })
                .collect()
        };
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let i_g = gate(&ws[0], &us[0], &bs[0], &sig);
        let f_g = gate(&ws[1], &us[1], &bs[1], &sig);
        let o_g = gate(&ws[2], &us[2], &bs[2], &sig);
        let g_g = gate(&ws[3], &us[3], &bs[3], &|v| v.tanh());
        for j in 0..dh {
            let c_exp = f_g[j] * c.data()[j] + i_g[j] * g_g[j];
            let h_exp = o_g[j] * c_exp.tanh();
            assert!((tape.value(cn).data()[j] - c_exp).abs() < 1e-12);
            assert!((tape.value(hn).data()[j] - h_exp).abs() < 1e-12);
        }
    }

    #[test]
    fn dropout_eval_mode_is_identity_and_train_preserves_mean() {
        // eval mode is "do not apply the op": rate 0 shortcut returns the input
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::vector(vec![1.0, 2.0]));
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let y = tape.dropout_seeded(x, 0.0, &mut rng).unwrap();
        assert_eq!(tape.value(y).data(), tape.value(x).data());

        let rate = 0.3;
        let n_draws = 40_000;
        let mut acc = 0.0;
        for _ in 0..n_draws {
            let mut tp = Tape::new();
            let v = tp.constant(Tensor::vector(vec![2.0]));
            let d = tp.dropout_seeded(v, rate, &mut rng).unwrap();
            acc += tp.value(d).data()[0];
        }
        let mean = acc / n_draws as f64;
        assert!((mean - 2.0).abs() < 0.05, "dropout mean {mean}");
    }

    #[test]
    fn adamw_zero_gradient_leaves_params_unchanged() {
        let mut params = ParamSet::new();
        params.insert("p", Tensor::vector(vec![1.0, -2.0]));
        let mut opt = AdamW::new(0.1, 0.0, 0);
        let mut grads = BTreeMap::new();
        grads.insert("p".to_string(), Tensor::vector(vec![0.0, 0.0]));
        opt.step(&mut params, &grads, 1).unwrap();
        assert_eq!(params.get("p").unwrap().data(), &[1.0, -2.0]);
    }

    #[test]
    fn adamw_step_decreases_param_against_positive_gradient() {
        let mut params = ParamSet::new();
        params.insert("p", Tensor::vector(vec![1.0]));
        let mut opt = AdamW::new(0.1, 0.0, 0);
        let mut grads = BTreeMap::new();
        grads.insert("p".to_string(), Tensor::vector(vec![1.0]));
        opt.step(&mut params, &grads, 1).unwrap();
        assert!(params.get("p").unwrap().data()[0] < 1.0);
    }

    #[test]
    fn adamw_converges_on_quadratic() {
        let mut params = ParamSet::new();
        params.insert("p", Tensor::vector(vec![1.0]));
        let mut opt = AdamW::new(0.1, 0.0, 0);
        for step in 1..=100 {
            let p = params.get("p").unwrap().data()[0];
            let mut grads = BTreeMap::new();
            grads.insert("p".to_string(), Tensor::vector(vec![2.0 * (p - 3.0)]));
            opt.step(&mut params, &grads, step).unwrap();
        }
        let p = params.get("p").unwrap().data()[0];
        assert!((p - 3.0).abs() < 1e-2, "p = {p}");
    }

    #[test]
    fn adamw_rejects_non_finite_gradients() {
        let mut params = ParamSet::new();
        params.insert("p", Tensor::vector(vec![1.0]));
        let mut opt = AdamW::new(0.1, 0.0, 0);
        let mut grads = BTreeMap::new();
        grads.insert("p".to_string(), Tensor::vector(vec![f64::NAN]));
        assert!(opt.step(&mut params, &grads, 1).is_err());
        assert_eq!(params.get("p").unwrap().data(), &[1.0]);
    }

    #[test]
    fn adamw_warmup_ramps_linearly() {
        let opt = AdamW::new(0.5, 0.0, 10);
        assert!((opt.lr_at(1) - 0.05).abs() < 1e-15);
        assert!((opt.lr_at(5) - 0.25).abs() < 1e-15);
        assert_eq!(opt.lr_at(10), 0.5);
        assert_eq!(opt.lr_at(999), 0.5);
    }

    #[test]
    fn checkpoint_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.tdmc");
        let mut params = ParamSet::new();
        params.insert("b.second", Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
        params.insert("a.first", Tensor::vector(vec![-0.25, 0.75]));
        let manifest = serde_json::json!({"hidden_dim": 8, "note": "roundtrip"});
        save_checkpoint(&path, &manifest, &params).unwrap();
        let (m2, p2) = load_checkpoint(&path).unwrap();
        assert_eq!(m2, manifest);
        assert_eq!(p2, params);
    }

    #[test]
    fn fixed_seed_reproduces_dropout_masks() {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(99);
            let mut tape = Tape::new();
            let x = tape.constant(Tensor::vector(vec![1.0; 32]));
            let d = tape.dropout_seeded(x, 0.5, &mut rng).unwrap();
            tape.value(d).data().to_vec()
        };
        assert_eq!(run(), run());
    }
}
