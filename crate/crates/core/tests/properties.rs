use aimlab::autodiff::{softmax, Bindings, Graph, Tensor};
use aimlab::corpus::{Dataset, Pair, Split, Vocab};
use aimlab::metrics::{bleu, dist_n, embedding_metric, ent_n, rouge_l, EmbeddingMode, EmbeddingTable};
use aimlab::oracles::{conditional_entropy, entropy, exact_mi, exact_posterior, variational_bound, JointTable};
use aimlab::rng::stream;
use aimlab::selftest::toy_dims;
use aimlab::seqmodels::Discriminator;
use proptest::prelude::*;

fn joint_strategy() -> impl Strategy<Value = JointTable> {
    (1usize..5, 1usize..5)
        .prop_flat_map(|(r, c)| prop::collection::vec(0.0f64..1.0, r * c).prop_map(move |w| (r, c, w)))
        .prop_filter("some mass", |(_, _, w)| w.iter().sum::<f64>() > 1e-3)
        .prop_map(|(_r, c, w)| {
            let total: f64 = w.iter().sum();
            JointTable::new(w.chunks(c).map(|row| row.iter().map(|x| x / total).collect()).collect()).unwrap()
        })
}

fn corpus_strategy() -> impl Strategy<Value = Vec<Vec<String>>> {
    prop::collection::vec(prop::collection::vec(prop::sample::select(vec!["a", "b", "c", "d", "e"]), 1..6), 1..8)
        .prop_map(|c| c.into_iter().map(|s| s.into_iter().map(String::from).collect()).collect())
}

proptest! {
    #[test]
    fn softmax_is_a_probability_vector(logits in prop::collection::vec(-50.0f64..50.0, 1..12), t in 0.01f64..5.0) {
        let p = softmax(&logits, t);
        prop_assert!(p.iter().all(|&x| x >= 0.0));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn soft_argmax_concentrates_on_a_unique_max(
        rest in prop::collection::vec(-5.0f64..5.0, 1..8),
        gap in 0.05f64..3.0,
        tau in 0.01f64..1.0,
    ) {
        let top = rest.iter().cloned().fold(f64::MIN, f64::max) + gap;
        let mut logits = rest.clone();
        logits.push(top);
        let p = softmax(&logits, tau);
        let bound = 1.0 - rest.len() as f64 * (-gap / tau).exp();
        prop_assert!(p[rest.len()] >= bound - 1e-12);
    }

    #[test]
    fn backward_is_linear_in_the_seed(
        w in prop::collection::vec(-1.0f64..1.0, 6),
        x in prop::collection::vec(-1.0f64..1.0, 3),
        s in prop::collection::vec(-1.0f64..1.0, 2),
        a in -3.0f64..3.0,
    ) {
        let mut g = Graph::new();
        let wn = g.param("w", Tensor::matrix(2, 3, w).unwrap()).unwrap();
        let xn = g.param("x", Tensor::matrix(3, 1, x).unwrap()).unwrap();
        let m = g.matmul(wn, xn).unwrap();
        let out = g.tanh(m).unwrap();
        g.evaluate(out, &Bindings::new()).unwrap();
        let seed = Tensor::matrix(2, 1, s.clone()).unwrap();
        let g1 = g.gradients(out, &seed).unwrap();
        let g2 = g.gradients(out, &seed.scaled(a)).unwrap();
        for (u, v) in g1.iter().zip(&g2) {
            if let (Some(u), Some(v)) = (u, v) {
                for (p, q) in u.data().iter().zip(v.data()) {
                    prop_assert!((a * p - q).abs() <= 1e-10);
                }
            }
        }
    }

    #[test]
    fn atanh_inverts_tanh(x in -3.0f64..3.0) {
        let mut g = Graph::new();
        let l = g.leaf(None, Tensor::scalar(x)).unwrap();
        let t = g.tanh(l).unwrap();
        let back = g.atanh(t).unwrap();
        let v = g.evaluate(back, &Bindings::new()).unwrap().item();
        prop_assert!((v - x).abs() <= 1e-9);
    }

    #[test]
    fn mi_identities_hold(joint in joint_strategy()) {
        let mi = exact_mi(&joint);
        prop_assert!(mi >= -1e-12);
        prop_assert!((mi - (entropy(joint.marginal_t()) - conditional_entropy(&joint))).abs() < 1e-10);
        prop_assert!((mi - exact_mi(&joint.transpose())).abs() < 1e-12);
    }

    #[test]
    fn variational_bound_never_exceeds_mi(joint in joint_strategy(), seed in 0u64..1000) {
        let mi = exact_mi(&joint);
        let post = exact_posterior(&joint).unwrap();
        let tight = variational_bound(&joint, &post).unwrap();
        prop_assert!((tight - mi).abs() < 1e-9);
        let mut rng = stream(seed, "q", 0);
        let (rows, cols) = (joint.rows(), joint.cols());
        let mut q = vec![vec![0.0; cols]; rows];
        for t in 0..cols {
            let w: Vec<f64> = (0..rows).map(|_| rand::Rng::random_range(&mut rng, 0.05..1.0)).collect();
            let z: f64 = w.iter().sum();
            for s in 0..rows {
                q[s][t] = w[s] / z;
            }
        }
        let b = variational_bound(&joint, &q).unwrap();
        prop_assert!(b <= mi + 1e-9);
    }

    #[test]
    fn diversity_metrics_are_bounded_and_order_free(corpus in corpus_strategy(), n in 1usize..4) {
        let mut rev = corpus.clone();
        rev.reverse();
        let total: usize = corpus.iter().map(|s| s.len().saturating_sub(n - 1)).sum();
        if total == 0 {
            prop_assert!(dist_n(&corpus, n).is_err() || dist_n(&corpus, n).unwrap() == 0.0);
        } else {
            let d = dist_n(&corpus, n).unwrap();
            let e = ent_n(&corpus, n).unwrap();
            prop_assert!((0.0..=1.0).contains(&d));
            prop_assert!(e >= 0.0);
            prop_assert!(e <= (d * total as f64).round().ln() + 1e-12);
            prop_assert_eq!(d, dist_n(&rev, n).unwrap());
            prop_assert!((e - ent_n(&rev, n).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn overlap_metrics_lie_in_the_unit_interval(pairs in prop::collection::vec((corpus_strategy(), corpus_strategy()), 1..2)) {
        let (mut h, mut r) = pairs[0].clone();
        let k = h.len().min(r.len());
        h.truncate(k);
        r.truncate(k);
        for v in [bleu(&h, &r).unwrap(), rouge_l(&h, &r).unwrap()] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        let (mut hr, mut rr) = (h.clone(), r.clone());
        hr.reverse();
        rr.reverse();
        prop_assert!((bleu(&h, &r).unwrap() - bleu(&hr, &rr).unwrap()).abs() < 1e-12);
        prop_assert!((rouge_l(&h, &r).unwrap() - rouge_l(&hr, &rr).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn embedding_metrics_are_cosines(
        h in corpus_strategy(),
        r in corpus_strategy(),
        vecs in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 3), 5),
    ) {
        let mut table = EmbeddingTable::new(3);
        for (w, v) in ["a", "b", "c", "d", "e"].iter().zip(vecs) {
            table.insert(*w, v).unwrap();
        }
        let k = h.len().min(r.len());
        for mode in [EmbeddingMode::Greedy, EmbeddingMode::Average, EmbeddingMode::Extreme] {
            if let Ok(v) = embedding_metric(mode, &h[..k], &r[..k], &table) {
                prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&v), "{mode:?} {v}");
            }
        }
    }

    #[test]
    fn vocab_decode_inverts_encode(words in prop::collection::btree_set("[a-z]{1,6}", 1..20), picks in prop::collection::vec(any::<prop::sample::Index>(), 0..10)) {
        let kept: Vec<String> = words.into_iter().collect();
        let vocab = Vocab::from_tokens(kept.clone());
        let sentence: Vec<String> = picks.iter().map(|i| kept[i.index(kept.len())].clone()).collect();
        let ids = vocab.encode(&sentence);
        prop_assert!(ids.iter().all(|&i| i >= 4));
        prop_assert_eq!(vocab.decode(&ids), sentence);
    }

    #[test]
    fn splits_are_disjoint_and_cover(n in 1usize..200, seed in any::<u64>()) {
        let pairs: Vec<Pair> = (0..n).map(|i| Pair::new(&format!("s{i}"), "t")).collect();
        let ds = Dataset::new(pairs, seed);
        let mut all: Vec<String> = [Split::Train, Split::Valid, Split::Test]
            .into_iter()
            .flat_map(|s| ds.split(s))
            .map(|p| p.source.join(" "))
            .collect();
        prop_assert_eq!(all.len(), n);
        all.sort();
        all.dedup();
        prop_assert_eq!(all.len(), n);
    }

    #[test]
    fn discriminator_scores_are_bounded(
        seed in 0u64..500,
        src in prop::collection::vec(1usize..7, 1..6),
        resp in prop::collection::vec(1usize..7, 1..6),
    ) {
        let d = Discriminator::new(toy_dims(7), &mut stream(seed, "disc", 0));
        let v = d.discriminate(&src, &resp).unwrap();
        prop_assert!((-1.0..=1.0).contains(&v));
        prop_assert!(d.discriminate(&[], &resp).is_err());
    }
}
