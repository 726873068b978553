//! Causal insight layer: self-attention over per-node tokens from three
//! perspectives (the node itself, its in-neighborhood, its
//! out-neighborhood), followed by per-perspective mixing back to one
//! stream per node.

use crate::autodiff::{Tape, Var};
use crate::error::{input_err, Result};
use crate::params::ParamStore;
use crate::tensor::{self, Tensor};
use rand::Rng;

/// Attention layer over 3N tokens of width `width`. The token sequence is
/// X ⊕ I1 ⊕ O1 stacked along the token axis; scores are scaled dot
/// products; the three attended streams are mixed by per-perspective
/// square matrices over the feature dimension.
#[derive(Clone, Debug)]
pub struct CausalInsightLayer {
    pub prefix: String,
    pub width: usize,
}

const WEIGHT_NAMES: [&str; 7] = ["w_q", "w_k", "w_v", "w_out", "w_x", "w_i", "w_o"];

impl CausalInsightLayer {
    pub fn new(prefix: impl Into<String>, width: usize) -> Self {
        Self {
            prefix: prefix.into(),
            width,
        }
    }

    fn path(&self, name: &str) -> String {
        format!("{}/{name}", self.prefix)
    }

    pub fn register<R: Rng>(&self, store: &mut ParamStore, rng: &mut R) -> Result<()> {
        for name in WEIGHT_NAMES {
            store.init_uniform(&self.path(name), &[self.width, self.width], self.width, rng)?;
        }
        Ok(())
    }

    /// Runs the layer on already-formed perspective streams. `x`, `i1` and
    /// `o1` are N×F; for the degraded variant the caller passes `x` for
    /// all three.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: Var,
        i1: Var,
        o1: Var,
    ) -> Result<Var> {
        let shape = tape.shape(x).to_vec();
        if shape.len() != 2 || shape[1] != self.width {
            return input_err(format!(
                "causal insight expects N×{} input, got {shape:?}",
                self.width
            ));
        }
        for v in [i1, o1] {
            if tape.shape(v) != shape {
                return input_err("perspective streams must share the input shape");
            }
        }
        let n = shape[0];
        let s = tape.concat_rows(&[x, i1, o1])?;
        let w_q = tape.param(store, &self.path("w_q"))?;
        let w_k = tape.param(store, &self.path("w_k"))?;
        let w_v = tape.param(store, &self.path("w_v"))?;
        let q = tape.matmul(s, w_q)?;
        let k = tape.matmul(s, w_k)?;
        let v = tape.matmul(s, w_v)?;
        let scores = tape.matmul_transpose_b(q, k)?;
        let scaled = tape.scale(scores, 1.0 / (self.width as f64).sqrt())?;
        let weights = tape.softmax_rows(scaled)?;
        let attended = tape.matmul(weights, v)?;
        let w_out = tape.param(store, &self.path("w_out"))?;
        let s_prime = tape.matmul(attended, w_out)?;
        let x_prime = tape.slice_rows(s_prime, 0, n)?;
        let i1_prime = tape.slice_rows(s_prime, n, n)?;
        let o1_prime = tape.slice_rows(s_prime, 2 * n, n)?;
        let w_x = tape.param(store, &self.path("w_x"))?;
        let w_i = tape.param(store, &self.path("w_i"))?;
        let w_o = tape.param(store, &self.path("w_o"))?;
        let mx = tape.matmul(x_prime, w_x)?;
        let mi = tape.matmul(i1_prime, w_i)?;
        let mo = tape.matmul(o1_prime, w_o)?;
        let partial = tape.add(mx, mi)?;
        tape.add(partial, mo)
    }

    /// Pre-softmax scores and post-softmax weights for one station's three
    /// tokens, over all 3N column tokens. Pure inspection; no tape.
    pub fn extract_attention_scores(
        &self,
        store: &ParamStore,
        x: &Tensor,
        i1: &Tensor,
        o1: &Tensor,
        node_ids: &[String],
        station: usize,
    ) -> Result<AttentionView> {
        let n = x.rows();
        if station >= n {
            return input_err(format!(
                "station index {station} out of range for {n} nodes"
            ));
        }
        let s = tensor::concat_rows(&[x, i1, o1])?;
        let q = tensor::matmul(&s, store.value(&self.path("w_q"))?)?;
        let k = tensor::matmul(&s, store.value(&self.path("w_k"))?)?;
        let mut scores = tensor::matmul_transpose_b(&q, &k)?;
        scores.scale_assign(1.0 / (self.width as f64).sqrt());
        let weights = tensor::softmax_rows(&scores)?;
        let labels: Vec<String> = ["X", "I1", "O1"]
            .iter()
            .flat_map(|p| node_ids.iter().map(move |id| format!("{p}:{id}")))
            .collect();
        let rows = [0, n, 2 * n]
            .iter()
            .zip(["X", "I1", "O1"])
            .map(|(&offset, perspective)| {
                let row = offset + station;
                AttentionRow {
                    token: format!("{perspective}:{}", node_ids[station]),
                    scores: scores.data()[row * 3 * n..(row + 1) * 3 * n].to_vec(),
                    weights: weights.data()[row * 3 * n..(row + 1) * 3 * n].to_vec(),
                }
            })
            .collect();
        Ok(AttentionView {
            station,
            column_labels: labels,
            rows,
        })
    }
}

/// Scores and weights for one query token across all key tokens.
#[derive(Clone, Debug)]
pub struct AttentionRow {
    pub token: String,
    pub scores: Vec<f64>,
    pub weights: Vec<f64>,
}

/// One station's attention rows plus the shared column labels.
#[derive(Clone, Debug)]
pub struct AttentionView {
    pub station: usize,
    pub column_labels: Vec<String>,
    pub rows: Vec<AttentionRow>,
}

impl AttentionView {
    /// Long-format CSV: one line per (query token, key token) pair.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("query_token,key_token,score,weight\n");
        for row in &self.rows {
            for ((label, &score), &weight) in
                self.column_labels.iter().zip(&row.scores).zip(&row.weights)
            {
                out.push_str(&format!("{},{label},{score},{weight}\n", row.token));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{self, NeighborKind};
    use crate::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn two_node_setup() -> (graph::TransitionSet, Tensor) {
        let g = graph::SensorGraph::new(
            vec!["a".into(), "b".into()],
            Tensor::from_rows(&[vec![1.0, 0.5], vec![0.0, 1.0]]).unwrap(),
        )
        .unwrap();
        let ts = graph::build_transitions(&g).unwrap();
        let x = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        (ts, x)
    }

    fn set_const(store: &mut ParamStore, name: &str, width: usize, diag: f64) {
        let mut t = Tensor::zeros(&[width, width]);
        for i in 0..width {
            t.set2(i, i, diag);
        }
        store.set_value(name, t).unwrap();
    }

    fn run_layer(
        layer: &CausalInsightLayer,
        store: &ParamStore,
        ts: &graph::TransitionSet,
        x: &Tensor,
    ) -> Tensor {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let ti1 = tape.constant(ts.t_i1.clone());
        let to1 = tape.constant(ts.t_o1.clone());
        let i1 = tape.matmul(ti1, xv).unwrap();
        let o1 = tape.matmul(to1, xv).unwrap();
        let out = layer.forward(&mut tape, store, xv, i1, o1).unwrap();
        tape.value(out).clone()
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let (ts, x) = two_node_setup();
        let layer = CausalInsightLayer::new("ci", 2);
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        layer.register(&mut store, &mut rng).unwrap();
        for name in WEIGHT_NAMES {
            set_const(&mut store, &format!("ci/{name}"), 2, 0.0);
        }
        let out = run_layer(&layer, &store, &ts, &x);
        assert_eq!(out.data(), &[0.0; 4]);
    }

    #[test]
    fn uniform_attention_averages_all_tokens() {
        // Zero queries/keys force uniform weights; identity value/output
        // projections and identity X-mixing leave the token average.
        let (ts, x) = two_node_setup();
        let layer = CausalInsightLayer::new("ci", 2);
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        layer.register(&mut store, &mut rng).unwrap();
        set_const(&mut store, "ci/w_q", 2, 0.0);
        set_const(&mut store, "ci/w_k", 2, 0.0);
        set_const(&mut store, "ci/w_v", 2, 1.0);
        set_const(&mut store, "ci/w_out", 2, 1.0);
        set_const(&mut store, "ci/w_x", 2, 1.0);
        set_const(&mut store, "ci/w_i", 2, 0.0);
        set_const(&mut store, "ci/w_o", 2, 0.0);
        let out = run_layer(&layer, &store, &ts, &x);
        // Token rows: x=[1,2],[3,4]; i1=[0,0],[1,2]; o1=[3,4],[0,0].
        // Hand average over all six: [8/6, 12/6].
        for i in 0..2 {
            assert!((out.at2(i, 0) - 8.0 / 6.0).abs() < 1e-12);
            assert!((out.at2(i, 1) - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn matches_dense_oracle_on_three_nodes() {
        // Re-derives the whole layer with standalone tensor algebra.
        let g = graph::build_adjacency(
            &[
                graph::DistanceRecord {
                    from: "a".into(),
                    to: "b".into(),
                    cost: 2.0,
                },
                graph::DistanceRecord {
                    from: "b".into(),
                    to: "c".into(),
                    cost: 3.0,
                },
                graph::DistanceRecord {
                    from: "c".into(),
                    to: "a".into(),
                    cost: 4.0,
                },
            ],
            3.0,
            10.0,
        )
        .unwrap();
        let ts = graph::build_transitions(&g).unwrap();
        let width = 4;
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let rand_t = |rng: &mut ChaCha8Rng, r: usize, c: usize| {
            let data = (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect();
            Tensor::new(&[r, c], data).unwrap()
        };
        let x = rand_t(&mut rng, 3, width);
        let layer = CausalInsightLayer::new("ci", width);
        let mut store = ParamStore::new();
        layer.register(&mut store, &mut rng).unwrap();
        let got = run_layer(&layer, &store, &ts, &x);

        // Oracle path.
        let i1 = graph::aggregate(&ts, NeighborKind::I1, &x).unwrap();
        let o1 = graph::aggregate(&ts, NeighborKind::O1, &x).unwrap();
        let s = tensor::concat_rows(&[&x, &i1, &o1]).unwrap();
        let p = |n: &str| store.value(&format!("ci/{n}")).unwrap();
        let q = tensor::matmul(&s, p("w_q")).unwrap();
        let k = tensor::matmul(&s, p("w_k")).unwrap();
        let v = tensor::matmul(&s, p("w_v")).unwrap();
        let mut scores = tensor::matmul(&q, &k.transposed().unwrap()).unwrap();
        scores.scale_assign(1.0 / (width as f64).sqrt());
        let a = tensor::softmax_rows(&scores).unwrap();
        let sp = tensor::matmul(&tensor::matmul(&a, &v).unwrap(), p("w_out")).unwrap();
        let take = |from: usize| {
            Tensor::new(
                &[3, width],
                sp.data()[from * width..(from + 3) * width].to_vec(),
            )
            .unwrap()
        };
        let mut want = tensor::matmul(&take(0), p("w_x")).unwrap();
        want.add_assign(&tensor::matmul(&take(3), p("w_i")).unwrap());
        want.add_assign(&tensor::matmul(&take(6), p("w_o")).unwrap());
        for (g, w) in got.data().iter().zip(want.data()) {
            assert!((g - w).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_signal_stays_constant_rowwise() {
        // All tokens identical ⇒ every attended row is the same vector, so
        // the output is one row repeated N times.
        let g = graph::build_adjacency(
            &[
                graph::DistanceRecord {
                    from: "a".into(),
                    to: "b".into(),
                    cost: 2.0,
                },
                graph::DistanceRecord {
                    from: "b".into(),
                    to: "a".into(),
                    cost: 2.0,
                },
            ],
            3.0,
            10.0,
        )
        .unwrap();
        let ts = graph::build_transitions(&g).unwrap();
        let x = Tensor::filled(&[2, 3], 4.2);
        let layer = CausalInsightLayer::new("ci", 3);
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        layer.register(&mut store, &mut rng).unwrap();
        let out = run_layer(&layer, &store, &ts, &x);
        for j in 0..3 {
            assert!((out.at2(0, j) - out.at2(1, j)).abs() < 1e-12);
        }
    }

    #[test]
    fn full_layer_grad_check() {
        let g = graph::build_adjacency(
            &[
                graph::DistanceRecord {
                    from: "a".into(),
                    to: "b".into(),
                    cost: 2.0,
                },
                graph::DistanceRecord {
                    from: "b".into(),
                    to: "c".into(),
                    cost: 3.0,
                },
                graph::DistanceRecord {
                    from: "c".into(),
                    to: "d".into(),
                    cost: 2.5,
                },
                graph::DistanceRecord {
                    from: "d".into(),
                    to: "a".into(),
                    cost: 4.0,
                },
            ],
            3.0,
            10.0,
        )
        .unwrap();
        let ts = graph::build_transitions(&g).unwrap();
        let width = 3;
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let x = {
            let data = (0..4 * width).map(|_| rng.gen_range(-1.0..1.0)).collect();
            Tensor::new(&[4, width], data).unwrap()
        };
        let layer = CausalInsightLayer::new("ci", width);
        let mut base = ParamStore::new();
        layer.register(&mut base, &mut rng).unwrap();
        let proj = {
            let data = (0..4 * width).map(|_| rng.gen_range(-1.0..1.0)).collect();
            Tensor::new(&[4, width], data).unwrap()
        };

        let f = |flat: &[f64]| {
            let mut store = base.clone();
            store.unflatten_values(flat)?;
            let mut tape = Tape::new();
            let xv = tape.constant(x.clone());
            let ti1 = tape.constant(ts.t_i1.clone());
            let to1 = tape.constant(ts.t_o1.clone());
            let i1 = tape.matmul(ti1, xv)?;
            let o1 = tape.matmul(to1, xv)?;
            let out = layer.forward(&mut tape, &store, xv, i1, o1)?;
            let target = tape.dot_const(out, &proj)?;
            store.zero_grads();
            tape.backward_into(target, &mut store, 1.0)?;
            Ok((tape.value(target).data()[0], store.flatten_grads()))
        };
        let err = crate::gradcheck::grad_check(&f, &base.flatten_values(), 1e-5).unwrap();
        assert!(err < 1e-4, "causal insight gradient error {err}");
    }

    #[test]
    fn permutation_equivariant() {
        // Relabeling nodes permutes the output rows identically.
        let ids: Vec<String> = (0..4).map(|i| format!("s{i}")).collect();
        let recs = vec![
            graph::DistanceRecord {
                from: "s0".into(),
                to: "s1".into(),
                cost: 2.0,
            },
            graph::DistanceRecord {
                from: "s1".into(),
                to: "s2".into(),
                cost: 3.0,
            },
            graph::DistanceRecord {
                from: "s2".into(),
                to: "s3".into(),
                cost: 2.0,
            },
            graph::DistanceRecord {
                from: "s3".into(),
                to: "s0".into(),
                cost: 3.5,
            },
        ];
        let width = 3;
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let x = {
            let data = (0..4 * width).map(|_| rng.gen_range(-1.0..1.0)).collect();
            Tensor::new(&[4, width], data).unwrap()
        };
        let layer = CausalInsightLayer::new("ci", width);
        let mut store = ParamStore::new();
        layer.register(&mut store, &mut rng).unwrap();

        let g = graph::build_adjacency_for(&ids, &recs, 3.0, 10.0).unwrap();
        let ts = graph::build_transitions(&g).unwrap();
        let out = run_layer(&layer, &store, &ts, &x);

        // Permutation 0→2, 1→0, 2→3, 3→1 applied through relabeled ids.
        let perm = [2usize, 0, 3, 1];
        let perm_ids: Vec<String> = {
            let mut v = vec![String::new(); 4];
            for (old, &new) in perm.iter().enumerate() {
                v[new] = format!("s{old}");
            }
            v
        };
        let gp = graph::build_adjacency_for(&perm_ids, &recs, 3.0, 10.0).unwrap();
        let tsp = graph::build_transitions(&gp).unwrap();
        let mut xp = Tensor::zeros(&[4, width]);
        for old in 0..4 {
            for j in 0..width {
                xp.set2(perm[old], j, x.at2(old, j));
            }
        }
        let outp = run_layer(&layer, &store, &tsp, &xp);
        for old in 0..4 {
            for j in 0..width {
                assert!(
                    (out.at2(old, j) - outp.at2(perm[old], j)).abs() < 1e-9,
                    "row {old} feature {j}"
                );
            }
        }
    }

    #[test]
    fn attention_view_uniform_for_zero_queries() {
        let (ts, x) = two_node_setup();
        let layer = CausalInsightLayer::new("ci", 2);
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        layer.register(&mut store, &mut rng).unwrap();
        set_const(&mut store, "ci/w_q", 2, 0.0);
        let i1 = graph::aggregate(&ts, NeighborKind::I1, &x).unwrap();
        let o1 = graph::aggregate(&ts, NeighborKind::O1, &x).unwrap();
        let ids = vec!["a".to_string(), "b".to_string()];
        let view = layer
            .extract_attention_scores(&store, &x, &i1, &o1, &ids, 0)
            .unwrap();
        assert_eq!(view.rows.len(), 3);
        assert_eq!(view.column_labels.len(), 6);
        assert_eq!(view.column_labels[0], "X:a");
        assert_eq!(view.column_labels[2], "I1:a");
        for row in &view.rows {
            let sum: f64 = row.weights.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
            for &w in &row.weights {
                assert!((w - 1.0 / 6.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn attention_view_matches_softmax_oracle() {
        let (ts, x) = two_node_setup();
        let layer = CausalInsightLayer::new("ci", 2);
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        layer.register(&mut store, &mut rng).unwrap();
        let i1 = graph::aggregate(&ts, NeighborKind::I1, &x).unwrap();
        let o1 = graph::aggregate(&ts, NeighborKind::O1, &x).unwrap();
        let ids = vec!["a".to_string(), "b".to_string()];
        let view = layer
            .extract_attention_scores(&store, &x, &i1, &o1, &ids, 1)
            .unwrap();
        for row in &view.rows {
            // Independent softmax of the reported scores.
            let max = row.scores.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let exps: Vec<f64> = row.scores.iter().map(|&s| (s - max).exp()).collect();
            let sum: f64 = exps.iter().sum();
            for (got, e) in row.weights.iter().zip(&exps) {
                assert!((got - e / sum).abs() < 1e-12);
            }
            let total: f64 = row.weights.iter().sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
        assert!(layer
            .extract_attention_scores(&store, &x, &i1, &o1, &ids, 2)
            .is_err());
    }
}
