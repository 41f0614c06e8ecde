use std::collections::{BTreeMap, BTreeSet};

use ndarray::{Array1, Array2};
use proptest::prelude::*;
use rand::Rng;

use sigforge::classify::{evaluate, knn_classify, LabeledVectorSet};
use sigforge::corpus::{build_dictionary, encode, generate_synthetic_corpus, tokenize, CorpusSpec, Document};
use sigforge::nncore::{corrupt, loss, sgd_step, softmax_rows, Activation, Dense, DenseGrad, LossKind};
use sigforge::rng::stream_rng;

const VOCAB: &[&str] = &["a", "b", "ab", "B", "é", "z9", "{", "\"api\":", "ba", "aa", "\u{a0}x"];
const SEPS: &[&str] = &[" ", "\t", "\n", "\r\n", "  "];

fn doc_text() -> impl Strategy<Value = String> {
    prop::collection::vec((0..VOCAB.len(), 0..SEPS.len()), 0..40).prop_map(|parts| {
        parts
            .into_iter()
            .map(|(t, s)| format!("{}{}", VOCAB[t], SEPS[s]))
            .collect()
    })
}

fn docs(texts: &[String]) -> Vec<Document> {
    texts
        .iter()
        .enumerate()
        .map(|(i, t)| Document::new(format!("s{i}"), t.clone(), None))
        .collect()
}

/// Nested-loop document frequency, then the same ranking rules.
fn oracle_dictionary(texts: &[String], top_n: usize) -> Vec<(String, usize)> {
    let split = |t: &str| -> Vec<String> {
        t.split([' ', '\t', '\r', '\n'])
            .filter(|s| !s.is_empty())
            .map(str::to_owned)
            .collect()
    };
    let mut vocab = BTreeSet::new();
    for t in texts {
        vocab.extend(split(t));
    }
    let mut rows = Vec::new();
    for u in vocab {
        let df = texts.iter().filter(|t| split(t).contains(&u)).count();
        if df < texts.len() {
            rows.push((u, df));
        }
    }
    rows.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.as_bytes().cmp(b.0.as_bytes())));
    rows.truncate(top_n);
    rows
}

proptest! {
    #[test]
    fn dictionary_matches_oracle(texts in prop::collection::vec(doc_text(), 1..50), top_n in 1usize..15) {
        let dict = build_dictionary(&docs(&texts), top_n).unwrap();
        let got: Vec<(String, usize)> = dict.entries().iter().map(|e| (e.unigram.clone(), e.doc_frequency)).collect();
        prop_assert_eq!(got, oracle_dictionary(&texts, top_n));
    }

    #[test]
    fn dictionary_order_is_strict(texts in prop::collection::vec(doc_text(), 1..50)) {
        let dict = build_dictionary(&docs(&texts), 100).unwrap();
        for w in dict.entries().windows(2) {
            let key = |e: &sigforge::corpus::DictEntry| (std::cmp::Reverse(e.doc_frequency), e.unigram.clone());
            prop_assert!(key(&w[0]) < key(&w[1]));
        }
    }

    #[test]
    fn encode_is_membership(texts in prop::collection::vec(doc_text(), 2..20), probe in doc_text()) {
        let dict = build_dictionary(&docs(&texts), 50).unwrap();
        let doc = Document::new("q", probe.clone(), None);
        let tokens = tokenize(&probe);
        let v = encode(&doc, &dict);
        prop_assert_eq!(v.len(), dict.len());
        for (i, e) in dict.entries().iter().enumerate() {
            prop_assert_eq!(v.bits[i], tokens.contains(e.unigram.as_str()));
        }
    }

    #[test]
    fn tokenize_is_idempotent(text in doc_text()) {
        let once = tokenize(&text);
        let rendered = once.iter().copied().collect::<Vec<_>>().join(" ");
        prop_assert_eq!(tokenize(&rendered), once);
    }

    #[test]
    fn corrupt_zeroes_exact_count(n in 0usize..200, ratio in 0.0f64..=1.0, seed in any::<u64>()) {
        let mut rng = stream_rng(seed, 0);
        let x = Array1::from_shape_fn(n, |i| 1.0 + i as f64);
        let y = corrupt(x.view(), ratio, &mut rng);
        let changed: Vec<usize> = (0..n).filter(|&i| x[i] != y[i]).collect();
        prop_assert_eq!(changed.len(), (ratio * n as f64).floor() as usize);
        prop_assert!(changed.iter().all(|&i| y[i] == 0.0));
    }

    #[test]
    fn corrupt_is_reproducible(n in 1usize..100, ratio in 0.0f64..=1.0, seed in any::<u64>()) {
        let x = Array1::from_elem(n, 1.0);
        let a = corrupt(x.view(), ratio, &mut stream_rng(seed, 9));
        let b = corrupt(x.view(), ratio, &mut stream_rng(seed, 9));
        prop_assert_eq!(a, b);
    }

    #[test]
    fn l2_step_shrinks_weights(seed in any::<u64>(), l2 in 1e-4f64..1.0) {
        let mut rng = stream_rng(seed, 0);
        let mut layer = Dense::glorot(4, 3, Activation::Relu, &mut rng);
        layer.bias.fill(0.7);
        let before = layer.clone();
        let zero = DenseGrad { weights: Array2::zeros((4, 3)), bias: Array1::zeros(3) };
        sgd_step(&mut layer, &zero, 0.1, l2);
        for (a, b) in layer.weights.iter().zip(&before.weights) {
            prop_assert!(*b == 0.0 || a.abs() < b.abs());
        }
        prop_assert_eq!(&layer.bias, &before.bias);
    }

    #[test]
    fn softmax_xent_gradient_is_exact(seed in any::<u64>(), batch in 1usize..6, width in 2usize..8) {
        let mut rng = stream_rng(seed, 0);
        let z = Array2::from_shape_fn((batch, width), |_| rng.random_range(-5.0..5.0));
        let mut t = Array2::zeros((batch, width));
        for mut row in t.rows_mut() {
            row[rng.random_range(0..width)] = 1.0;
        }
        let got = loss(LossKind::SoftmaxXent, z.view(), t.view()).unwrap().gradient;
        let expected = (softmax_rows(z.view()) - &t) / batch as f64;
        prop_assert_eq!(got, expected);
    }

    #[test]
    fn knn_matches_naive_oracle(
        seed in any::<u64>(),
        n in 1usize..100,
        q in 1usize..100,
        width in 1usize..6,
        k in 1usize..6,
    ) {
        let mut rng = stream_rng(seed, 0);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..width).map(|_| rng.random_range(0..3) as f64).collect()).collect();
        let labels: Vec<String> = (0..n).map(|_| format!("c{}", rng.random_range(0..3))).collect();
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let set = LabeledVectorSet::new(Array2::from_shape_vec((n, width), flat).unwrap(), &labels).unwrap();
        for _ in 0..q {
            let query: Vec<f64> = (0..width).map(|_| rng.random_range(-1.0..3.0)).collect();
            let dists: Vec<f64> = rows
                .iter()
                .map(|r| r.iter().zip(&query).map(|(a, b)| (a - b) * (a - b)).sum())
                .collect();
            // repeated selection of the smallest (distance, index)
            let mut taken = vec![false; n];
            let mut order = Vec::new();
            for _ in 0..k.min(n) {
                let mut best = None;
                for i in 0..n {
                    if taken[i] {
                        continue;
                    }
                    if best.is_none_or(|b: usize| dists[i] < dists[b]) {
                        best = Some(i);
                    }
                }
                let b = best.unwrap();
                taken[b] = true;
                order.push(b);
            }
            let mut votes: BTreeMap<&str, usize> = BTreeMap::new();
            for &i in &order {
                *votes.entry(labels[i].as_str()).or_default() += 1;
            }
            let top = *votes.values().max().unwrap();
            let expected = order.iter().map(|&i| labels[i].as_str()).find(|l| votes[l] == top).unwrap();
            prop_assert_eq!(knn_classify(&set, &query, k).unwrap(), expected);
        }
    }

    #[test]
    fn knn_ignores_training_order_without_ties(seed in any::<u64>(), n in 2usize..40) {
        let mut rng = stream_rng(seed, 0);
        let width = 3;
        let flat: Vec<f64> = (0..n * width).map(|_| rng.random_range(-1.0..1.0)).collect();
        let labels: Vec<String> = (0..n).map(|i| format!("c{}", i % 3)).collect();
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let a = LabeledVectorSet::new(Array2::from_shape_vec((n, width), flat.clone()).unwrap(), &labels).unwrap();
        let pflat: Vec<f64> = perm.iter().flat_map(|&i| flat[i * width..(i + 1) * width].to_vec()).collect();
        let plabels: Vec<String> = perm.iter().map(|&i| labels[i].clone()).collect();
        let b = LabeledVectorSet::new(Array2::from_shape_vec((n, width), pflat).unwrap(), &plabels).unwrap();
        let query: Vec<f64> = (0..width).map(|_| rng.random_range(-1.0..1.0)).collect();
        prop_assert_eq!(knn_classify(&a, &query, 1).unwrap(), knn_classify(&b, &query, 1).unwrap());
    }

    #[test]
    fn evaluate_accuracy_is_indicator_mean(pairs in prop::collection::vec((0u8..4, 0u8..4), 1..60)) {
        let pred: Vec<String> = pairs.iter().map(|p| format!("c{}", p.0)).collect();
        let truth: Vec<String> = pairs.iter().map(|p| format!("c{}", p.1)).collect();
        let r = evaluate(&pred, &truth).unwrap();
        let hits = pairs.iter().filter(|p| p.0 == p.1).count();
        prop_assert_eq!(r.accuracy, hits as f64 / pairs.len() as f64);
        let trace: usize = (0..r.classes.len()).map(|i| r.confusion[i][i]).sum();
        prop_assert_eq!(trace, hits);
    }
}

#[test]
fn knn_distance_ties_go_to_lower_index() {
    let v = Array2::from_shape_vec((3, 1), vec![1.0, -1.0, 1.0]).unwrap();
    let labels = ["x".to_string(), "y".to_string(), "z".to_string()];
    let set = LabeledVectorSet::new(v, &labels).unwrap();
    assert_eq!(knn_classify(&set, &[0.0], 1).unwrap(), "x");
    // two equidistant neighbours with one vote each: the nearer-ranked wins
    assert_eq!(knn_classify(&set, &[0.0], 2).unwrap(), "x");
    let v = Array2::from_shape_vec((3, 1), vec![-1.0, 1.0, 1.0]).unwrap();
    let set = LabeledVectorSet::new(v, &labels).unwrap();
    assert_eq!(knn_classify(&set, &[0.0], 1).unwrap(), "x");
}

#[test]
fn base_token_survival_tracks_perturbation_rate() {
    let p = 0.1;
    let spec = CorpusSpec {
        n_families: 1,
        variants_per_family: 1000,
        base_tokens_per_family: 100,
        shared_token_pool: 50,
        perturbation_rate: p,
        seed: 11,
    };
    let corpus = generate_synthetic_corpus(&spec).unwrap();
    let base: BTreeSet<&str> = corpus.family_bases[0].iter().map(String::as_str).collect();
    let fractions: Vec<f64> = corpus
        .documents
        .iter()
        .map(|d| {
            let tokens = tokenize(&d.text);
            base.iter().filter(|b| tokens.contains(*b)).count() as f64 / base.len() as f64
        })
        .collect();
    let n = fractions.len() as f64;
    let mean = fractions.iter().sum::<f64>() / n;
    let var = fractions.iter().map(|f| (f - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let se = (var / n).sqrt();
    assert!((mean - (1.0 - p)).abs() < 3.0 * se, "mean {mean} se {se}");
}

#[test]
fn synthetic_corpus_is_reproducible() {
    let spec = CorpusSpec {
        n_families: 2,
        variants_per_family: 5,
        ..CorpusSpec::default()
    };
    let a = generate_synthetic_corpus(&spec).unwrap();
    let b = generate_synthetic_corpus(&spec).unwrap();
    assert_eq!(a.documents, b.documents);
    let other = generate_synthetic_corpus(&CorpusSpec { seed: 43, ..spec }).unwrap();
    assert_ne!(a.documents, other.documents);
}
