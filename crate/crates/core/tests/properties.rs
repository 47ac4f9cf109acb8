mod common;

use std::collections::BTreeSet;

use proptest::prelude::*;

use common::*;
use uralic_probe::corpus::{
    extract_morph_instances, is_bio_tag, parse_conllu, parse_wikiann, write_conllu, Sentence, Token, Treebank,
};
use uralic_probe::dataset::{
    form_key, from_jsonl, sample_probing_split, sample_tagging_split, tagging_allocation, tagging_records, to_jsonl,
    ProbingTaskSpec, Split, SplitConfig, TaggingRecord, TaggingTask,
};
use uralic_probe::embstore::{embeddings_to_bytes, read_embeddings, EmbeddingHeader, EmbeddingMeta, LayerMixer, SentenceEmbedding};
use uralic_probe::nn::{span_f1, AdamWConfig, AdamWState, Dropout, MlpModel};
use uralic_probe::rng::SplitRng;
use uralic_probe::tokenize::{strip_diacritics, tokenizer_stats};

fn token_strategy() -> impl Strategy<Value = Token> {
    (
        "[a-zäöő.]{1,8}",
        proptest::option::of("[a-z]{1,6}"),
        proptest::option::of(proptest::sample::select(vec!["NOUN", "VERB", "ADJ", "PUNCT"])),
        proptest::collection::btree_map("[A-Z][a-z]{1,5}", "[A-Z][a-z0-9]{0,4}", 0..3),
    )
        .prop_map(|(form, lemma, upos, feats)| Token {
            form,
            lemma,
            upos: upos.map(String::from),
            feats,
            ner: None,
        })
}

fn sentences_strategy() -> impl Strategy<Value = Vec<Vec<Token>>> {
    proptest::collection::vec(proptest::collection::vec(token_strategy(), 1..6), 1..5)
}

fn bio_tag() -> impl Strategy<Value = String> {
    prop_oneof![
        Just("O".to_string()),
        proptest::sample::select(vec!["PER", "LOC", "ORG"]).prop_map(|k| format!("B-{k}")),
        proptest::sample::select(vec!["PER", "LOC", "ORG"]).prop_map(|k| format!("I-{k}")),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn conllu_round_trip(sents in sentences_strategy()) {
        let sentences: Vec<Sentence> = sents
            .into_iter()
            .enumerate()
            .map(|(i, tokens)| Sentence { id: format!("conllu#{i}"), tokens })
            .collect();
        let parsed = parse_conllu(&write_conllu(&sentences)).unwrap();
        prop_assert_eq!(parsed, sentences);
    }

    #[test]
    fn wikiann_tags_are_bio(rows in proptest::collection::vec(proptest::collection::vec(("[a-zA-Z]{1,6}", bio_tag()), 1..6), 1..4)) {
        let text: String = rows
            .iter()
            .map(|s| s.iter().map(|(w, t)| format!("hu:{w}\t{t}\n")).collect::<String>() + "\n")
            .collect();
        let parsed = parse_wikiann(&text).unwrap();
        prop_assert_eq!(parsed.len(), rows.len());
        for (sent, row) in parsed.iter().zip(&rows) {
            for (tok, (w, t)) in sent.tokens.iter().zip(row) {
                prop_assert_eq!(&tok.form, w);
                prop_assert!(is_bio_tag(tok.ner.as_deref().unwrap()));
                prop_assert_eq!(tok.ner.as_deref(), Some(t.as_str()));
            }
        }
    }

    #[test]
    fn extraction_matches_brute_force(sents in sentences_strategy(), feature in "[A-Z][a-z]{1,5}") {
        let tb = Treebank::new(
            "fi",
            sents.into_iter().enumerate().map(|(i, tokens)| Sentence { id: format!("s{i}"), tokens }).collect(),
        );
        for upos in ["NOUN", "VERB"] {
            let mut expected = 0;
            for s in &tb.sentences {
                for t in &s.tokens {
                    if t.upos.as_deref() == Some(upos) && t.feats.contains_key(&feature) {
                        expected += 1;
                    }
                }
            }
            let got = extract_morph_instances(&tb, &feature, upos);
            prop_assert_eq!(got.len(), expected);
            for inst in got {
                let tok = &tb.sentences.iter().find(|s| s.id == inst.sentence_id).unwrap().tokens[inst.target_index];
                prop_assert_eq!(&tok.form, &inst.form);
                prop_assert_eq!(tok.feats.get(&feature), Some(&inst.label));
            }
        }
    }

    #[test]
    fn wordpiece_matches_oracle_and_reconstructs(seed in any::<u64>(), words in proptest::collection::vec("[abcdäö#]{1,10}", 1..8)) {
        let mut rng = SplitRng::new(seed);
        let letters = ['a', 'b', 'c', 'd', 'ä', 'ö', '#'];
        let pieces = random_wordpiece_vocab(&mut rng, &letters);
        let vocab = wordpiece_vocab(&pieces);
        for word in &words {
            let seg = vocab.segment(word).unwrap();
            match naive_wordpiece(&pieces, word) {
                None => prop_assert!(seg.is_unk && seg.pieces == [UNK]),
                Some(p) => {
                    prop_assert_eq!(&seg.pieces, &p);
                    let joined: String = p
                        .iter()
                        .enumerate()
                        .map(|(i, s)| if i == 0 { s.as_str() } else { s.strip_prefix(CONT).unwrap() })
                        .collect();
                    prop_assert_eq!(&joined, word);
                }
            }
        }
    }

    /// Single-character pieces only fill dead ends; longer pieces can
    /// create them (see `longer_piece_can_raise_missing_rate`).
    #[test]
    fn adding_a_character_piece_never_raises_missing_rate(seed in any::<u64>(), extra in "(##)?[abcdä]", words in proptest::collection::vec("[abcdä]{1,8}", 1..20)) {
        let mut rng = SplitRng::new(seed);
        let pieces = random_wordpiece_vocab(&mut rng, &['a', 'b', 'c', 'd', 'ä']);
        let before = tokenizer_stats(&wordpiece_vocab(&pieces), &words).unwrap();
        if !pieces.contains(&extra) {
            let mut bigger = pieces.clone();
            bigger.push(extra);
            let after = tokenizer_stats(&wordpiece_vocab(&bigger), &words).unwrap();
            prop_assert!(after.missing_rate <= before.missing_rate);
        }
    }

    #[test]
    fn diacritic_stripping_is_idempotent(text in "\\PC{0,20}") {
        let once = strip_diacritics(&text);
        prop_assert_eq!(strip_diacritics(&once), once.clone());
        prop_assert!(!once.chars().any(|c| matches!(c, 'đ' | 'Đ' | 'ŧ' | 'Ŧ' | 'ŋ' | 'Ŋ')));
    }

    #[test]
    fn mixing_is_permutation_equivariant(
        (layers, hidden, stack, raw, perm) in (1usize..6, 1usize..5).prop_flat_map(|(l, h)| (
            Just(l),
            Just(h),
            proptest::collection::vec(-3.0f64..3.0, l * h),
            proptest::collection::vec(-2.0f64..2.0, l),
            Just((0..l).collect::<Vec<usize>>()).prop_shuffle(),
        ))
    ) {
        let mixer = LayerMixer { raw_weights: raw.clone() };
        let mixed = mixer.mix(&stack, hidden).unwrap();
        let permuted_stack: Vec<f64> = perm.iter().flat_map(|&l| stack[l * hidden..(l + 1) * hidden].to_vec()).collect();
        let permuted = LayerMixer { raw_weights: perm.iter().map(|&l| raw[l]).collect() };
        let again = permuted.mix(&permuted_stack, hidden).unwrap();
        prop_assert_eq!(mixed.len(), hidden);
        prop_assert_eq!(layers, perm.len());
        for (a, b) in mixed.iter().zip(&again) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn mixing_gradient_matches_finite_differences(
        (hidden, stack, raw, upstream) in (1usize..6, 1usize..5).prop_flat_map(|(l, h)| (
            Just(h),
            proptest::collection::vec(-3.0f64..3.0, l * h),
            proptest::collection::vec(-2.0f64..2.0, l),
            proptest::collection::vec(-1.0f64..1.0, h),
        ))
    ) {
        let mixer = LayerMixer { raw_weights: raw.clone() };
        let analytic = mixer.backward(&stack, &upstream).unwrap();
        let objective = |w: &[f64]| -> f64 {
            let m = LayerMixer { raw_weights: w.to_vec() };
            m.mix(&stack, hidden).unwrap().iter().zip(&upstream).map(|(y, g)| y * g).sum()
        };
        let h = 1e-6;
        let numeric: Vec<f64> = (0..raw.len())
            .map(|i| {
                let mut plus = raw.clone();
                plus[i] += h;
                let mut minus = raw.clone();
                minus[i] -= h;
                (objective(&plus) - objective(&minus)) / (2.0 * h)
            })
            .collect();
        let err = relative_error(&[&analytic], &[numeric]);
        prop_assert!(err < 1e-4, "relative error {}", err);
    }

    #[test]
    fn adam_without_decay_matches_reference(
        (p0, grads) in (1usize..6).prop_flat_map(|n| (
            proptest::collection::vec(-2.0f64..2.0, n),
            proptest::collection::vec(proptest::collection::vec(-1.0f64..1.0, n), 5),
        ))
    ) {
        let cfg = AdamWConfig { weight_decay: 0.0, ..AdamWConfig::default() };
        let mut p = p0.clone();
        let mut st = AdamWState::new(cfg, &[p.len()]);
        for g in &grads {
            st.step(&mut [&mut p], &[g]).unwrap();
        }
        let want = adam_reference(&p0, &grads, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps);
        for (a, b) in p.iter().zip(&want) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn span_f1_matches_regex_oracle(pairs in proptest::collection::vec(proptest::collection::vec((bio_tag(), bio_tag()), 0..10), 1..5)) {
        let pred: Vec<Vec<String>> = pairs.iter().map(|s| s.iter().map(|p| p.0.clone()).collect()).collect();
        let gold: Vec<Vec<String>> = pairs.iter().map(|s| s.iter().map(|p| p.1.clone()).collect()).collect();
        let got = span_f1(&pred, &gold).unwrap();
        let (p, r, f) = regex_span_f1(&pred, &gold);
        prop_assert_eq!((got.precision, got.recall, got.f1), (p, r, f));
        let self_score = span_f1(&gold, &gold).unwrap();
        prop_assert!(self_score.counts.gold == 0 || self_score.f1 == 1.0);
    }

    #[test]
    fn tagging_allocation_fits(n in 3usize..30_000) {
        let cfg = SplitConfig::default();
        let (train, dev, test) = tagging_allocation(n, &cfg).unwrap();
        prop_assert!(train + dev + test <= n);
        prop_assert!(dev >= 1 && test >= 1 && train >= 1);
        prop_assert!(train <= cfg.train_size && dev <= cfg.dev_size && test <= cfg.test_size);
    }

    #[test]
    fn tagging_split_is_sentence_disjoint(n in 3usize..200, seed in any::<u64>()) {
        let sentences: Vec<Sentence> = (0..n)
            .map(|i| Sentence { id: format!("s{i}"), tokens: vec![Token::new("x").with_upos("X")] })
            .collect();
        let cfg = SplitConfig { seed, ..SplitConfig::default() };
        let ds = sample_tagging_split(&sentences, TaggingTask::Pos, &cfg).unwrap();
        let mut ids = BTreeSet::new();
        for s in ds.train.iter().chain(&ds.dev).chain(&ds.test) {
            prop_assert!(ids.insert(s.id.clone()));
        }
        let records = tagging_records(&ds);
        let back: Vec<TaggingRecord> = from_jsonl(&to_jsonl(&records).unwrap()).unwrap();
        prop_assert_eq!(back, records);
    }

    #[test]
    fn embeddings_round_trip(seed in any::<u64>(), layers in 1usize..4, hidden in 1usize..6, count in 0usize..5) {
        let mut rng = SplitRng::new(seed);
        let mut sents = Vec::new();
        for _ in 0..count {
            let words = rng.below(4) as usize;
            let mut alignment = Vec::new();
            let mut t = 0u32;
            for _ in 0..words {
                let n = 1 + rng.below(3) as u32;
                alignment.push((t, t + n));
                t += n;
            }
            let t = t as usize + rng.below(2) as usize;
            let values = (0..layers * t * hidden).map(|_| f32::from_bits(rng.next_u64() as u32)).collect();
            sents.push(SentenceEmbedding::new(layers, hidden, t, alignment, values).unwrap());
        }
        let meta = EmbeddingMeta { sentence_ids: (0..count).map(|i| format!("s{i}")).collect(), ..Default::default() };
        let header = EmbeddingHeader::new(layers as u32, hidden as u32, count as u32, &meta).unwrap();
        let bytes = embeddings_to_bytes(&header, &sents).unwrap();
        let (h2, s2) = read_embeddings(&bytes[..]).unwrap();
        prop_assert_eq!(&h2, &header);
        prop_assert_eq!(embeddings_to_bytes(&h2, &s2).unwrap(), bytes);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn probing_splits_respect_constraints(seed in any::<u64>()) {
        let mut rng = SplitRng::new(seed);
        let tb = random_morph_treebank(&mut rng, 300);
        let instances = extract_morph_instances(&tb, "Case", "NOUN");
        let labels: BTreeSet<String> = instances.iter().map(|i| i.label.clone()).collect();
        let spec = ProbingTaskSpec {
            language: "et".into(),
            feature: "Case".into(),
            upos: "NOUN".into(),
            label_set: labels.into_iter().collect(),
        };
        let cfg = SplitConfig { train_size: 60, dev_size: 15, test_size: 15, max_imbalance: 3, seed };
        // some random treebanks are legitimately infeasible
        if let Ok(ds) = sample_probing_split(&instances, &spec, &cfg) {
            let forms: Vec<BTreeSet<String>> = Split::ALL
                .iter()
                .map(|&s| ds.split(s).iter().map(|i| form_key(&i.form)).collect())
                .collect();
            prop_assert!(forms[0].is_disjoint(&forms[1]));
            prop_assert!(forms[0].is_disjoint(&forms[2]));
            prop_assert!(forms[1].is_disjoint(&forms[2]));
            for s in Split::ALL {
                let insts = ds.split(s);
                let counts: Vec<usize> = ds.spec.label_set.iter().map(|l| insts.iter().filter(|i| &i.label == l).count()).collect();
                let (min, max) = (*counts.iter().min().unwrap(), *counts.iter().max().unwrap());
                prop_assert!(min >= 1 && max <= 3 * min, "{:?}", counts);
            }
            let again = sample_probing_split(&instances, &spec, &cfg).unwrap();
            prop_assert_eq!(again, ds);
        }
    }
}

#[test]
fn longer_piece_can_raise_missing_rate() {
    let base: Vec<String> = ["a", "##bc", UNK].iter().map(|s| s.to_string()).collect();
    let before = tokenizer_stats(&wordpiece_vocab(&base), &["abc"]).unwrap();
    let mut bigger = base.clone();
    bigger.push("ab".into());
    let after = tokenizer_stats(&wordpiece_vocab(&bigger), &["abc"]).unwrap();
    assert_eq!(before.missing_rate, 0.0);
    assert_eq!(after.missing_rate, 1.0);
}

/// The mean of the logits under inverted dropout equals the deterministic
/// logits, since the output layer is linear in the hidden units.
#[test]
fn dropout_monte_carlo_mean() {
    let mut rng = SplitRng::new(17);
    let mut model = MlpModel::with_hidden(4, 20, 3, None, &mut rng);
    model.b1.iter_mut().for_each(|b| *b = 0.5);
    let x = [0.7f32, -0.3, 1.1, 0.4];
    let exact = model.forward(&x, None).unwrap();

    let draws = 100_000;
    let mut sum = [0.0; 3];
    let mut drop_rng = SplitRng::new(18);
    for _ in 0..draws {
        let mut d = Dropout {
            rate: 0.2,
            rng: &mut drop_rng,
        };
        for (s, v) in sum.iter_mut().zip(model.forward(&x, Some(&mut d)).unwrap()) {
            *s += v;
        }
    }
    for (s, e) in sum.iter().zip(&exact) {
        let mean = s / draws as f64;
        assert!((mean - e).abs() <= 0.02 * e.abs().max(0.1), "mean {mean} vs {e}");
    }
}
