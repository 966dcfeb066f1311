use super::*;
use crate::autodiff::gradcheck;
use crate::graph::Edge;
use approx::assert_abs_diff_eq;
use ndarray::Array2;

fn leaky(x: f64, s: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        s * x
    }
}

fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp() - 1.0
    }
}

fn random_array(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    let mut m = Array2::zeros((rows, cols));
    for v in m.iter_mut() {
        *v = rng.random_range(-1.0..1.0);
    }
    m
}

fn random_subgraph(seed: u64, n: usize, feature_dim: u32, edge_prob: f64) -> AccountSubgraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::new();
    for s in 0..n as u32 {
        for d in 0..n as u32 {
            if s != d && rng.random::<f64>() < edge_prob {
                edges.push(Edge {
                    src: s,
                    dst: d,
                    times: rng.random_range(1..9),
                    amount: rng.random_range(1..5000u64) as u128,
                });
            }
        }
    }
    let node_feats = (0..n)
        .map(|_| {
            let mut feats = Vec::new();
            for ca in 0..feature_dim {
                if rng.random::<f64>() < 0.5 {
                    feats.push((ca, rng.random_range(1..6)));
                }
            }
            feats
        })
        .collect();
    AccountSubgraph {
        target_id: "0xt".into(),
        global_ids: (0..n as u32).collect(),
        feature_dim,
        edges,
        node_feats,
        label: 0,
    }
}

fn tiny_config(feature_dim: usize, classes: usize) -> HgateConfig {
    HgateConfig {
        feature_dim,
        hidden_dim: 4,
        layers: 2,
        classes,
        leaky_slope: 0.2,
        dropout: 0.0,
    }
}

#[test]
fn zero_alignment_matrix_gives_zero_neighbor_embeddings() {
    let sg = random_subgraph(1, 5, 3, 0.6);
    let batch = SubgraphBatch::build(&[&sg], &FeatureScaler::identity()).unwrap();
    let tape = Tape::new();
    let theta_x = tape.leaf(Array2::zeros((4, 5))).unwrap();
    let theta_x0 = tape.leaf(random_array(&mut ChaCha8Rng::seed_from_u64(2), 4, 3)).unwrap();
    let x = tape.leaf(batch.node_features.clone()).unwrap();
    let e = tape.leaf(batch.pair_edge_feats.clone()).unwrap();
    let pair_src = Rc::new(batch.pair_src.clone());
    let (_, u) = align_neighbors(&tape, theta_x, theta_x0, x, &pair_src, e, 0.2).unwrap();
    let u = tape.value(u.unwrap());
    assert!(u.iter().all(|&v| v == 0.0));
}

#[test]
fn single_node_has_self_embedding_and_no_alignment_rows() {
    let sg = AccountSubgraph {
        target_id: "0xt".into(),
        global_ids: vec![0],
        feature_dim: 3,
        edges: vec![],
        node_feats: vec![vec![(1, 2)]],
        label: 0,
    };
    let batch = SubgraphBatch::build(&[&sg], &FeatureScaler::identity()).unwrap();
    assert_eq!(batch.pair_count(), 0);
    let tape = Tape::new();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let theta_x = tape.leaf(random_array(&mut rng, 4, 5)).unwrap();
    let theta_x0_arr = random_array(&mut rng, 4, 3);
    let theta_x0 = tape.leaf(theta_x0_arr.clone()).unwrap();
    let x = tape.leaf(batch.node_features.clone()).unwrap();
    let e = tape.leaf(batch.pair_edge_feats.clone()).unwrap();
    let pair_src = Rc::new(batch.pair_src.clone());
    let (h0, u) = align_neighbors(&tape, theta_x, theta_x0, x, &pair_src, e, 0.2).unwrap();
    assert!(u.is_none());
    let h0 = tape.value(h0);
    let expected = batch.node_features.dot(&theta_x0_arr.t());
    assert_abs_diff_eq!(h0.as_slice().unwrap(), expected.as_slice().unwrap(), epsilon = 1e-12);
}

#[test]
fn alignment_matches_per_edge_loop() {
    let sg = random_subgraph(7, 5, 3, 0.7);
    let batch = SubgraphBatch::build(&[&sg], &FeatureScaler::identity()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let theta_x_arr = random_array(&mut rng, 4, 5);
    let theta_x0_arr = random_array(&mut rng, 4, 3);
    let tape = Tape::new();
    let theta_x = tape.leaf(theta_x_arr.clone()).unwrap();
    let theta_x0 = tape.leaf(theta_x0_arr).unwrap();
    let x = tape.leaf(batch.node_features.clone()).unwrap();
    let e = tape.leaf(batch.pair_edge_feats.clone()).unwrap();
    let pair_src = Rc::new(batch.pair_src.clone());
    let (_, u) = align_neighbors(&tape, theta_x, theta_x0, x, &pair_src, e, 0.2).unwrap();
    let u = tape.value(u.unwrap());

    for (p, &src) in batch.pair_src.iter().enumerate() {
        for out_dim in 0..4 {
            let mut acc = 0.0;
            for f in 0..3 {
                acc += theta_x_arr[[out_dim, f]] * batch.node_features[[src, f]];
            }
            for c in 0..2 {
                acc += theta_x_arr[[out_dim, 3 + c]] * batch.pair_edge_feats[[p, c]];
            }
            assert_abs_diff_eq!(u[[p, out_dim]], leaky(acc, 0.2), epsilon = 1e-10);
        }
    }
}

/// Dense-loop reference for one attention layer.
fn naive_attention_layer(
    h: &Array2<f64>,
    pair_dst: &[usize],
    pair_vals: &Array2<f64>,
    theta_n: &Array2<f64>,
    theta_alpha: &Array2<f64>,
    slope: f64,
) -> Array2<f64> {
    let (n, d) = h.dim();
    let score = |hi: ndarray::ArrayView1<f64>, hj: ndarray::ArrayView1<f64>| {
        let mut s = 0.0;
        for c in 0..d {
            s += theta_n[[0, c]] * hi[c];
            s += theta_n[[0, d + c]] * hj[c];
        }
        leaky(s, slope)
    };
    let mut out = Array2::zeros((n, d));
    for i in 0..n {
        let mut scores = vec![score(h.row(i), h.row(i))];
        let mut vals: Vec<ndarray::ArrayView1<f64>> = vec![h.row(i)];
        for (p, &dst) in pair_dst.iter().enumerate() {
            if dst == i {
                scores.push(score(h.row(i), pair_vals.row(p)));
                vals.push(pair_vals.row(p));
            }
        }
        let m = scores.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let exps: Vec<f64> = scores.iter().map(|&s| (s - m).exp()).collect();
        let total: f64 = exps.iter().sum();
        for out_dim in 0..d {
            let mut acc = 0.0;
            for (w, v) in exps.iter().zip(&vals) {
                let mut tv = 0.0;
                for c in 0..d {
                    tv += theta_alpha[[out_dim, c]] * v[c];
                }
                acc += (w / total) * tv;
            }
            out[[i, out_dim]] = elu(acc);
        }
    }
    out
}

#[test]
fn uniform_attention_when_scores_are_constant() {
    // Theta_n = 0 makes every score zero, so alpha is uniform over the
    // neighbor set plus self and the output is Elu of the transformed mean.
    let sg = random_subgraph(11, 6, 2, 0.5);
    let batch = SubgraphBatch::build(&[&sg], &FeatureScaler::identity()).unwrap();
    let d = 3usize;
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let h_arr = random_array(&mut rng, batch.node_count(), d);
    let theta_alpha_arr = random_array(&mut rng, d, d);
    let tape = Tape::new();
    let theta_n = tape.leaf(Array2::zeros((1, 2 * d))).unwrap();
    let theta_alpha = tape.leaf(theta_alpha_arr.clone()).unwrap();
    let h = tape.leaf(h_arr.clone()).unwrap();
    let vals = tape.gather_rows(h, Rc::new(batch.pair_src.clone())).unwrap();
    let pair_dst = Rc::new(batch.pair_dst.clone());
    let out = node_attention_layer(
        &tape,
        theta_n,
        theta_alpha,
        h,
        Some(vals),
        &pair_dst,
        batch.node_count(),
        0.2,
    )
    .unwrap();
    let alpha = tape.value(out.weights);
    for (r, &id) in out.ids.iter().enumerate() {
        let degree = batch.pair_dst.iter().filter(|&&dd| dd == id).count();
        assert_abs_diff_eq!(alpha[[r, 0]], 1.0 / (degree as f64 + 1.0), epsilon = 1e-12);
    }
    // aggregation equals Elu(Theta_alpha . mean of self plus neighbors)
    let got = tape.value(out.h);
    for i in 0..batch.node_count() {
        let mut mean = vec![0.0; d];
        let mut count = 1.0;
        for c in 0..d {
            mean[c] += h_arr[[i, c]];
        }
        for (p, &dst) in batch.pair_dst.iter().enumerate() {
            if dst == i {
                for c in 0..d {
                    mean[c] += h_arr[[batch.pair_src[p], c]];
                }
                count += 1.0;
            }
        }
        for out_dim in 0..d {
            let mut acc = 0.0;
            for c in 0..d {
                acc += theta_alpha_arr[[out_dim, c]] * mean[c] / count;
            }
            assert_abs_diff_eq!(got[[i, out_dim]], elu(acc), epsilon = 1e-9);
        }
    }
}

#[test]
fn isolated_node_keeps_transformed_self_embedding() {
    let d = 3;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let h_arr = random_array(&mut rng, 1, d);
    let theta_n_arr = random_array(&mut rng, 1, 2 * d);
    let theta_alpha_arr = random_array(&mut rng, d, d);
    let tape = Tape::new();
    let theta_n = tape.leaf(theta_n_arr).unwrap();
    let theta_alpha = tape.leaf(theta_alpha_arr.clone()).unwrap();
    let h = tape.leaf(h_arr.clone()).unwrap();
    let out = node_attention_layer(&tape, theta_n, theta_alpha, h, None, &Rc::new(vec![]), 1, 0.2)
        .unwrap();
    let alpha = tape.value(out.weights);
    assert_abs_diff_eq!(alpha[[0, 0]], 1.0, epsilon = 1e-15);
    let got = tape.value(out.h);
    for out_dim in 0..d {
        let mut acc = 0.0;
        for c in 0..d {
            acc += theta_alpha_arr[[out_dim, c]] * h_arr[[0, c]];
        }
        assert_abs_diff_eq!(got[[0, out_dim]], elu(acc), epsilon = 1e-12);
    }
}

#[test]
fn attention_layer_matches_dense_loop_and_rows_normalize() {
    let sg = random_subgraph(21, 6, 2, 0.6);
    let batch = SubgraphBatch::build(&[&sg], &FeatureScaler::identity()).unwrap();
    let d = 4usize;
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let h_arr = random_array(&mut rng, batch.node_count(), d);
    let theta_n_arr = random_array(&mut rng, 1, 2 * d);
    let theta_alpha_arr = random_array(&mut rng, d, d);

    let tape = Tape::new();
    let theta_n = tape.leaf(theta_n_arr.clone()).unwrap();
    let theta_alpha = tape.leaf(theta_alpha_arr.clone()).unwrap();
    let h = tape.leaf(h_arr.clone()).unwrap();
    let vals = tape.gather_rows(h, Rc::new(batch.pair_src.clone())).unwrap();
    let pair_dst = Rc::new(batch.pair_dst.clone());
    let out = node_attention_layer(
        &tape,
        theta_n,
        theta_alpha,
        h,
        Some(vals),
        &pair_dst,
        batch.node_count(),
        0.2,
    )
    .unwrap();

    // normalization: alpha sums to 1 per node
    let alpha = tape.value(out.weights);
    let mut sums = vec![0.0; batch.node_count()];
    for (r, &id) in out.ids.iter().enumerate() {
        sums[id] += alpha[[r, 0]];
    }
    for s in sums {
        assert!((s - 1.0).abs() < 1e-12);
    }

    let pair_vals = {
        let mut m = Array2::zeros((batch.pair_count(), d));
        for (p, &src) in batch.pair_src.iter().enumerate() {
            for c in 0..d {
                m[[p, c]] = h_arr[[src, c]];
            }
        }
        m
    };
    let expected = naive_attention_layer(
        &h_arr,
        &batch.pair_dst,
        &pair_vals,
        &theta_n_arr,
        &theta_alpha_arr,
        0.2,
    );
    let got = tape.value(out.h);
    for (a, b) in got.iter().zip(expected.iter()) {
        assert_abs_diff_eq!(a, b, epsilon = 1e-9);
    }
}

#[test]
fn single_node_pooling_reduces_to_transformed_embedding() {
    // With one node the max-pool seed equals the node embedding, scores tie
    // whatever Theta_s is, and g = Elu(Theta_beta . h).
    let d = 3;
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let h_arr = random_array(&mut rng, 1, d);
    let theta_s_arr = random_array(&mut rng, 1, 2 * d);
    let theta_beta_arr = random_array(&mut rng, d, d);
    let tape = Tape::new();
    let theta_s = tape.leaf(theta_s_arr).unwrap();
    let theta_beta = tape.leaf(theta_beta_arr.clone()).unwrap();
    let h = tape.leaf(h_arr.clone()).unwrap();
    let segments = Rc::new(vec![0usize]);
    let out = attentive_pool(&tape, theta_s, theta_beta, h, &segments, 1, 0.2).unwrap();
    let beta = tape.value(out.weights);
    assert_abs_diff_eq!(beta[[0, 0]], 0.5, epsilon = 1e-12);
    assert_abs_diff_eq!(beta[[1, 0]], 0.5, epsilon = 1e-12);
    let got = tape.value(out.h);
    for out_dim in 0..d {
        let mut acc = 0.0;
        for c in 0..d {
            acc += theta_beta_arr[[out_dim, c]] * h_arr[[0, c]];
        }
        assert_abs_diff_eq!(got[[0, out_dim]], elu(acc), epsilon = 1e-12);
    }
}

#[test]
fn zero_pool_scores_give_uniform_beta() {
    let d = 3;
    let m = 5usize;
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let h_arr = random_array(&mut rng, m, d);
    let tape = Tape::new();
    let theta_s = tape.leaf(Array2::zeros((1, 2 * d))).unwrap();
    let theta_beta = tape.leaf(random_array(&mut rng, d, d)).unwrap();
    let h = tape.leaf(h_arr).unwrap();
    let segments = Rc::new(vec![0usize; m]);
    let out = attentive_pool(&tape, theta_s, theta_beta, h, &segments, 1, 0.2).unwrap();
    let beta = tape.value(out.weights);
    assert_eq!(beta.nrows(), m + 1);
    for r in 0..=m {
        assert_abs_diff_eq!(beta[[r, 0]], 1.0 / (m as f64 + 1.0), epsilon = 1e-12);
    }
}

#[test]
fn batched_subgraphs_match_individual_encoding() {
    let sgs: Vec<AccountSubgraph> = (0..3).map(|s| random_subgraph(40 + s, 5 + s as usize, 3, 0.5)).collect();
    let refs: Vec<&AccountSubgraph> = sgs.iter().collect();
    let config = tiny_config(3, 2);
    let model = HgateModel::new(config, 7);
    let batched = model.embed_eval(&refs).unwrap();
    for (b, sg) in sgs.iter().enumerate() {
        let single = model.embed_eval(&[sg]).unwrap();
        for c in 0..model.config.hidden_dim {
            assert_abs_diff_eq!(batched[[b, c]], single[[0, c]], epsilon = 1e-12);
        }
    }
}

#[test]
fn permuting_node_order_leaves_embedding_unchanged() {
    let sg = random_subgraph(50, 8, 3, 0.5);
    // permute non-target nodes: local i -> perm[i], target stays at 0
    let perm: Vec<u32> = vec![0, 4, 2, 7, 1, 6, 3, 5];
    let mut inverse = vec![0u32; perm.len()];
    for (new_pos, &old) in perm.iter().enumerate() {
        inverse[old as usize] = new_pos as u32;
    }
    let mut edges: Vec<Edge> = sg
        .edges
        .iter()
        .map(|e| Edge {
            src: inverse[e.src as usize],
            dst: inverse[e.dst as usize],
            times: e.times,
            amount: e.amount,
        })
        .collect();
    edges.sort_unstable_by_key(|e| (e.src, e.dst));
    let permuted = AccountSubgraph {
        target_id: sg.target_id.clone(),
        global_ids: perm.iter().map(|&old| sg.global_ids[old as usize]).collect(),
        feature_dim: sg.feature_dim,
        edges,
        node_feats: perm.iter().map(|&old| sg.node_feats[old as usize].clone()).collect(),
        label: sg.label,
    };
    let model = HgateModel::new(tiny_config(3, 2), 97);
    let a = model.embed_eval(&[&sg]).unwrap();
    let b = model.embed_eval(&[&permuted]).unwrap();
    for c in 0..model.config.hidden_dim {
        assert_abs_diff_eq!(a[[0, c]], b[[0, c]], epsilon = 1e-10);
    }
}

#[test]
fn zero_embedding_exposes_head_biases() {
    let config = tiny_config(3, 2);
    let mut model = HgateModel::new(config, 3);
    // nonzero biases so the effect is visible
    model.params.proj_b1 = Array2::from_elem((1, 4), 0.3);
    model.params.proj_b2 = Array2::from_elem((1, 4), -0.1);
    model.params.pred_b2 = Array2::from_shape_vec((1, 2), vec![0.7, -0.7]).unwrap();
    let tape = Tape::new();
    let bound = model.bind(&tape).unwrap();
    let g = tape.leaf(Array2::zeros((1, 4))).unwrap();
    let z = model.project(&tape, &bound, g).unwrap();
    let z = tape.value(z);
    // z = W2 . Relu(b1) + b2 with g = 0
    let relu_b1 = model.params.proj_b1.mapv(|x| x.max(0.0));
    let expected = relu_b1.dot(&model.params.proj_w2.t()) + &model.params.proj_b2;
    for c in 0..4 {
        assert_abs_diff_eq!(z[[0, c]], expected[[0, c]], epsilon = 1e-12);
    }
    let probs = model.predict_probs(&tape, &bound, g).unwrap();
    let probs = tape.value(probs);
    assert_abs_diff_eq!(probs.row(0).sum(), 1.0, epsilon = 1e-12);
    // pred_w1 . 0 + b1 = 0 here, so probabilities are the softmax of pred_b2
    let exp: Vec<f64> = vec![0.7f64.exp(), (-0.7f64).exp()];
    let total: f64 = exp.iter().sum();
    assert_abs_diff_eq!(probs[[0, 0]], exp[0] / total, epsilon = 1e-12);
}

#[test]
fn probability_rows_sum_to_one_on_random_input() {
    let model = HgateModel::new(tiny_config(3, 5), 11);
    let tape = Tape::new();
    let bound = model.bind(&tape).unwrap();
    let g = tape
        .leaf(random_array(&mut ChaCha8Rng::seed_from_u64(1), 6, 4))
        .unwrap();
    let probs = model.predict_probs(&tape, &bound, g).unwrap();
    let probs = tape.value(probs);
    for r in 0..6 {
        assert_abs_diff_eq!(probs.row(r).sum(), 1.0, epsilon = 1e-12);
    }
}

#[test]
fn head_gradients_match_finite_differences() {
    let model = HgateModel::new(tiny_config(3, 2), 13);
    let sg = random_subgraph(60, 4, 3, 0.6);
    let batch = SubgraphBatch::build(&[&sg, &sg], &FeatureScaler::identity()).unwrap();
    let inputs: Vec<Array2<f64>> = model.params.named().iter().map(|(_, t)| (*t).clone()).collect();
    let labels = Rc::new(vec![0usize, 1usize]);
    let err = gradcheck::max_relative_error(
        |tape, vars| {
            let bound = BoundParams { vars: vars.to_vec() };
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let g = model.encode(tape, &bound, &batch, false, &mut rng).unwrap();
            let z = model.project(tape, &bound, g).unwrap();
            let zs = tape.sum_all(tape.mul(z, z)?)?;
            let probs = model.predict_probs(tape, &bound, g).unwrap();
            let nll = tape.nll_loss(probs, Rc::clone(&labels))?;
            tape.add(zs, nll)
        },
        &inputs,
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-4, "max relative error {err}");
}

#[test]
fn checkpoint_round_trip_preserves_model() {
    let mut model = HgateModel::new(tiny_config(5, 3), 17);
    model.scaler = FeatureScaler {
        edge_mean: [0.5, 2.5],
        edge_std: [1.5, 3.0],
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.hgate");
    model.save(&path).unwrap();
    let loaded = HgateModel::load(&path).unwrap();
    assert_eq!(loaded, model);
}
