use aimlab::metrics::MetricsConfig;
use aimlab::rng::stream;
use aimlab::selftest::{desk_config, desk_data, toy_dims};
use aimlab::seqmodels::{rank_order, DecodeMode, Generator};
use aimlab::trainer::{evaluate_model, resolved_dims, Checkpoint, DecodeConfig};

fn toy_generator(seed: u64) -> Generator {
    let mut dims = toy_dims(9);
    dims.max_steps = 5;
    Generator::new(dims, "forward", &mut stream(seed, "models", 0))
}

#[test]
fn soft_decoding_at_low_temperature_follows_the_hard_path() {
    for seed in 0..5 {
        let g = toy_generator(seed);
        let z = vec![0.1; g.dims.hidden_dim];
        let src = [4, 5, 6];
        let hard = g.decode(&src, &z, 1.0, DecodeMode::Hard, 5).unwrap();
        let soft = g.decode(&src, &z, 1e-6, DecodeMode::Soft, 5).unwrap();
        assert_eq!(hard.tokens, soft.tokens, "seed {seed}");
        assert_eq!(soft.soft.len(), soft.tokens.len());
        for (row, &tok) in soft.soft.iter().zip(&soft.tokens) {
            assert!(row[tok] > 1.0 - 1e-6);
        }
        assert!(hard.logprobs.iter().all(|&l| l <= 0.0));
    }
}

#[test]
fn decoding_stops_at_the_end_token_or_the_step_limit() {
    let g = toy_generator(3);
    let z = vec![0.0; g.dims.hidden_dim];
    for src in [&[4usize][..], &[5, 6, 7, 8], &[]] {
        let out = g.decode(src, &z, 1.0, DecodeMode::Hard, 5).unwrap();
        assert!(out.tokens.len() <= 5);
        let end = out.tokens.iter().position(|&t| t == g.dims.end_id);
        if let Some(i) = end {
            assert_eq!(i + 1, out.tokens.len());
        }
    }
    assert!(g.decode(&[4], &z, 0.0, DecodeMode::Soft, 5).is_err());
}

#[test]
fn backward_role_is_the_same_model_under_another_name() {
    let fwd = toy_generator(7);
    let bwd = fwd.with_role("backward");
    let z = vec![0.2; fwd.dims.hidden_dim];
    let src = [6, 4];
    let a = fwd.decode(&src, &z, 0.5, DecodeMode::Soft, 5).unwrap();
    let b = bwd.decode(&src, &z, 0.5, DecodeMode::Soft, 5).unwrap();
    assert_eq!(a, b);
    let t = [5, 7, 2];
    assert_eq!(fwd.seq_logprob(&src, &t, None).unwrap().to_bits(), bwd.seq_logprob(&src, &t, None).unwrap().to_bits());
}

#[test]
fn beam_output_is_ranked_and_width_one_is_greedy() {
    let g = toy_generator(11);
    let src = [4, 8];
    let beam = g.beam_search(&src, 4).unwrap();
    assert!(!beam.is_empty() && beam.len() <= 4);
    for w in beam.windows(2) {
        assert_ne!(rank_order(w[0].logprob, &w[0].tokens, w[1].logprob, &w[1].tokens), std::cmp::Ordering::Greater);
    }
    for h in &beam {
        let lp = g.seq_logprob(&src, &h.tokens, None).unwrap();
        assert!((lp - h.logprob).abs() < 1e-9);
    }
    let greedy = g.decode(&src, &vec![0.0; g.dims.hidden_dim], 1.0, DecodeMode::Hard, g.dims.max_steps).unwrap();
    assert_eq!(g.beam_search(&src, 1).unwrap()[0].tokens, greedy.tokens);
    assert!(g.beam_search(&src, 0).is_err());
}

#[test]
fn checkpoint_round_trip_preserves_evaluation() {
    let mut cfg = desk_config(0);
    cfg.synthetic_pairs = 200;
    let (task, data) = desk_data(&cfg).unwrap();
    let dims = resolved_dims(&cfg, &data.vocab);
    let ck = Checkpoint::init(&cfg, data.vocab.clone(), dims);
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("ck.bin");
    ck.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    let decode = DecodeConfig { sample: true, seed: 5 };
    let metrics = MetricsConfig::default().without_embeddings();
    let a = evaluate_model(&ck, &data.test, &metrics, None, &decode, Some(&task)).unwrap();
    let b = evaluate_model(&back, &data.test, &metrics, None, &decode, Some(&task)).unwrap();
    assert_eq!(a.generations, b.generations);
    assert_eq!(serde_json::to_string(&a.report).unwrap(), serde_json::to_string(&b.report).unwrap());
    assert_eq!(back.to_bytes().unwrap(), ck.to_bytes().unwrap());
}
