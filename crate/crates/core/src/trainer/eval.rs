use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use crate::corpus::SyntheticTask;
use crate::error::{Error, Result};
use crate::metrics::{build_report, EmbeddingTable, MetricsConfig, MetricsReport};
use crate::objectives::{strip_end, Example};
use crate::rng::stream;
use crate::seqmodels::{DecodeMode, Generator};

/// Greedy decoding with Z = 0 unless `sample` is set, in which case response
/// `i` is a multinomial draw from stream `(seed, "eval/sample", i)`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DecodeConfig {
    pub sample: bool,
    pub seed: u64,
}

/// Maps `f` over `items` on scoped threads; output order matches input order.
pub(crate) fn par_map<T: Sync, U: Send>(items: &[T], f: impl Fn(usize, &T) -> Result<U> + Sync) -> Result<Vec<U>> {
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get()).min(items.len().max(1));
    let chunk = items.len().div_ceil(threads).max(1);
    let parts: Vec<Result<Vec<U>>> = std::thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .enumerate()
            .map(|(c, part)| {
                let f = &f;
                s.spawn(move || part.iter().enumerate().map(|(i, x)| f(c * chunk + i, x)).collect())
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
    });
    let mut out = Vec::with_capacity(items.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

/// One response (content ids, no end token) per source.
pub fn generate_responses(gen: &Generator, sources: &[Vec<usize>], decode: &DecodeConfig) -> Result<Vec<Vec<usize>>> {
    let end = gen.dims.end_id;
    let zero = vec![0.0; gen.dims.hidden_dim];
    par_map(sources, |i, src| {
        let tokens = if decode.sample {
            gen.sample_response(src, &mut stream(decode.seed, "eval/sample", i as u64))?.0
        } else {
            gen.decode(src, &zero, 1.0, DecodeMode::Hard, gen.dims.max_steps)?.tokens
        };
        Ok(strip_end(&tokens, end))
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub report: MetricsReport,
    pub sources: Vec<Vec<String>>,
    pub generations: Vec<Vec<String>>,
}

/// Decodes the forward model on every test source and scores the generations
/// against the test targets. With a synthetic `task` the exact
/// source-specificity rate is reported as well.
pub fn evaluate_model(
    checkpoint: &Checkpoint,
    test: &[Example],
    metrics: &MetricsConfig,
    table: Option<&EmbeddingTable>,
    decode: &DecodeConfig,
    task: Option<&SyntheticTask>,
) -> Result<Evaluation> {
    if test.is_empty() {
        return Err(Error::Empty("test split"));
    }
    let vocab = &checkpoint.vocab;
    let sources: Vec<Vec<usize>> = test.iter().map(|e| e.source.clone()).collect();
    let generated = generate_responses(&checkpoint.forward, &sources, decode)?;
    let generations: Vec<Vec<String>> = generated.iter().map(|g| vocab.decode(g)).collect();
    let references: Vec<Vec<String>> = test.iter().map(|e| vocab.decode(&e.target)).collect();
    let source_words: Vec<Vec<String>> = sources.iter().map(|s| vocab.decode(s)).collect();
    let mut report = build_report(&generations, &references, metrics, table)?;
    if let Some(task) = task {
        let pairs: Vec<(Vec<String>, Vec<String>)> = source_words.iter().cloned().zip(generations.iter().cloned()).collect();
        report.source_specificity = Some(task.specificity(&pairs)?);
    }
    report.config_hash = Some(checkpoint.config_hash());
    Ok(Evaluation {
        report,
        sources: source_words,
        generations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_vocab, generate_synthetic, BlandTrapSpec, Dataset, Pair};
    use crate::metrics::ent_n;
    use crate::seqmodels::ModelDims;
    use crate::trainer::{prepare_data, pretrain, resolved_dims, TrainConfig};

    fn dims() -> ModelDims {
        ModelDims {
            embed_dim: 8,
            hidden_dim: 12,
            disc_dim: 8,
            conv_channels: 8,
            conv_layers: 1,
            filter_width: 2,
            stride: 1,
            max_len: 4,
            max_steps: 6,
            ..ModelDims::default()
        }
    }

    #[test]
    fn par_map_keeps_order() {
        let xs: Vec<usize> = (0..103).collect();
        let ys = par_map(&xs, |i, &x| Ok(i * 1000 + x)).unwrap();
        assert_eq!(ys, (0..103).map(|x| x * 1001).collect::<Vec<_>>());
    }

    #[test]
    fn memorized_corpus_scores_perfect_bleu() {
        let ds = Dataset::train_only(vec![
            Pair::new("hi there", "hello friend of mine"),
            Pair::new("how are you", "fine thanks and you"),
            Pair::new("bye", "see you later then"),
            Pair::new("what now", "nothing much at all"),
        ]);
        let cfg = TrainConfig {
            batch_size: 4,
            pretrain_epochs: 400,
            pretrain_lr: 0.02,
            model: dims(),
            ..TrainConfig::default()
        };
        let data = prepare_data(&ds, build_vocab(&ds, 64).unwrap(), &cfg.model).unwrap();
        let ck = pretrain(&cfg, &data, None, None).unwrap().checkpoint;
        let mc = MetricsConfig::default().without_embeddings();
        let ev = evaluate_model(&ck, &data.train, &mc, None, &DecodeConfig::default(), None).unwrap();
        assert_eq!(ev.report.bleu, Some(1.0));
        assert_eq!(ev.report.config_hash, Some(cfg.hash()));
    }

    #[test]
    fn all_bland_generator_has_zero_specificity() {
        let task = SyntheticTask::bland_trap(&BlandTrapSpec::default()).unwrap();
        let ds = generate_synthetic(&task, 200, 1).unwrap();
        let cfg = TrainConfig {
            model: dims(),
            ..TrainConfig::default()
        };
        let vocab = build_vocab(&ds, 64).unwrap();
        let data = prepare_data(&ds, vocab.clone(), &cfg.model).unwrap();
        let mut ck = Checkpoint::init(&cfg, vocab.clone(), resolved_dims(&cfg, &vocab));
        // Force "i do not know" by making the output layer a lookup of the step.
        let bland: Vec<usize> = ["i", "do", "not", "know"].iter().map(|w| vocab.id(w)).collect();
        force_sequence(&mut ck, &bland);
        let mc = MetricsConfig::default().without_embeddings();
        let ev = evaluate_model(&ck, &data.test, &mc, None, &DecodeConfig::default(), Some(&task)).unwrap();
        assert!(ev.generations.iter().all(|g| g.join(" ") == "i do not know"), "{:?}", &ev.generations[..3]);
        assert_eq!(ev.report.source_specificity, Some(0.0));
        let bland_set = vec![task.targets().iter().find(|t| t.join(" ") == "i do not know").unwrap().clone()];
        assert_eq!(ev.report.ent_4, Some(ent_n(&bland_set, 4).unwrap()));
    }

    /// Rewrites the forward generator so greedy decoding emits `seq` then end,
    /// whatever the source: the previous token's embedding selects the next token.
    fn force_sequence(ck: &mut Checkpoint, seq: &[usize]) {
        let gen = &mut ck.forward;
        let (e, h) = (gen.dims.embed_dim, gen.dims.hidden_dim);
        assert!(seq.len() < e && e <= h);
        let names: Vec<String> = gen.params.names().cloned().collect();
        for n in &names {
            gen.params.get_mut(n).unwrap().data_mut().iter_mut().for_each(|x| *x = 0.0);
        }
        // Embedding of the token emitted at position k (begin for k = 0) is e_k.
        let mut prev = vec![gen.dims.begin_id];
        prev.extend_from_slice(seq);
        let embed = gen.params.get_mut("fwd/embed").unwrap();
        for (k, &tok) in prev.iter().enumerate() {
            embed.data_mut()[tok * e + k] = 1.0;
        }
        // Output gate and cell input copy the embedding into h (gate order i, f, g, o).
        let w = gen.params.get_mut("fwd/lstm.w").unwrap();
        for k in 0..e {
            w.data_mut()[k * 4 * h + 2 * h + k] = 10.0;
        }
        let b = gen.params.get_mut("fwd/lstm.b").unwrap();
        for j in 0..h {
            b.data_mut()[j] = 10.0;
            b.data_mut()[3 * h + j] = 10.0;
            b.data_mut()[h + j] = -10.0;
        }
        let out = gen.params.get_mut("fwd/out.v").unwrap();
        let mut next = seq.to_vec();
        next.push(gen.dims.end_id);
        for (k, &tok) in next.iter().enumerate() {
            out.data_mut()[tok * h + k] = 5.0;
        }
    }
}
