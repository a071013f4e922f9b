mod support;

use support::{corpus, small_config, tiny_config, Toy};
use udmorph_core::conllu::{Corpus, Sentence};
use udmorph_core::embeddings::WordVectorTable;
use udmorph_core::lemma_rules::{apply_rule, LemmaRule};
use udmorph_core::merge::RestrictionMask;
use udmorph_core::model::{
    examples, fit, predict, predict_sentence, train, AuxInputs, EncoderKind, Example, ModelConfig,
    ModelError, TaggerModel, TrainConfig, Vocabulary,
};
use udmorph_core::CategoryTable;

fn toy_rows() -> Corpus {
    corpus(
        "Toy-T",
        &[
            &[("Dogs", "dog", "N;PL"), ("ran", "run", "V;PST")],
            &[
                ("a", "a", "DET;SG"),
                ("cat", "cat", "N;NOM;SG"),
                ("sits", "sit", "V;PRS"),
            ],
        ],
    )
}

fn model_for(corpus: &Corpus, config: ModelConfig, seed: u64) -> TaggerModel {
    let vocab = Vocabulary::build(corpus, &CategoryTable::unimorph(), config.ngram_max).unwrap();
    TaggerModel::new(config, vocab, seed).unwrap()
}

fn batch_of(data: &[Example]) -> Vec<&Example> {
    data.iter().collect()
}

fn word_vectors(dim: usize) -> WordVectorTable {
    let mut table = WordVectorTable::new(dim);
    for (i, word) in ["dogs", "cat", "ran", "a"].iter().enumerate() {
        let v = (0..dim)
            .map(|d| ((i * dim + d) as f32 * 0.37).sin())
            .collect();
        table.insert(word, v).unwrap();
    }
    table
}

/// Largest relative deviation between analytic and central-difference
/// gradients over every parameter.
fn max_gradient_error(config: ModelConfig, w: f64) -> (f64, usize) {
    let c = toy_rows();
    let vectors = word_vectors(config.pretrained_dim.max(1));
    let aux = AuxInputs {
        word_vectors: Some(&vectors),
        contextual: None,
    };
    let mut model = model_for(&c, config, 11);
    let data = examples(&model, &c, &CategoryTable::unimorph(), aux).unwrap();
    let batch = batch_of(&data);
    let (_, grads) = model.loss_and_gradients(&batch, w);
    let analytic: Vec<f64> = grads.values().collect();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for (i, &a) in analytic.iter().enumerate() {
        let original = *model.params_mut().value_mut(i);
        *model.params_mut().value_mut(i) = original + h;
        let plus = model.loss(&batch, w).total();
        *model.params_mut().value_mut(i) = original - h;
        let minus = model.loss(&batch, w).total();
        *model.params_mut().value_mut(i) = original;
        let numeric = (plus - minus) / (2.0 * h);
        let scale = a.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max((a - numeric).abs() / scale);
    }
    (worst, analytic.len())
}

#[test]
fn gradients_match_finite_differences_window() {
    let config = ModelConfig {
        use_pretrained: true,
        pretrained_dim: 2,
        ..tiny_config(EncoderKind::Window)
    };
    let (err, n) = max_gradient_error(config, 0.7);
    assert!(n <= 1000, "{n} parameters");
    assert!(err < 1e-4, "max relative error {err}");
}

#[test]
fn gradients_match_finite_differences_recurrent() {
    let (err, n) = max_gradient_error(tiny_config(EncoderKind::Recurrent), 1.3);
    assert!(n <= 1000, "{n} parameters");
    assert!(err < 1e-4, "max relative error {err}");
}

#[test]
fn gradients_match_finite_differences_stacked() {
    let config = ModelConfig {
        layers: 2,
        hidden_dim: 2,
        ..tiny_config(EncoderKind::Recurrent)
    };
    let (err, n) = max_gradient_error(config, 0.5);
    assert!(n <= 1000, "{n} parameters");
    assert!(err < 1e-4, "max relative error {err}");
}

#[test]
fn loss_decomposes_over_category_weight() {
    let c = toy_rows();
    let model = model_for(&c, small_config(EncoderKind::Recurrent), 5);
    let data = examples(&model, &c, &CategoryTable::unimorph(), AuxInputs::default()).unwrap();
    let batch = batch_of(&data);
    let base = model.loss(&batch, 0.0);
    assert_eq!(base.total(), base.lemma + base.bundle);
    for w in [0.5, 1.0, 2.0, 3.7] {
        let loss = model.loss(&batch, w);
        let diff = loss.total() - base.total() - w * base.category;
        assert!(diff.abs() / base.total() < 1e-9, "w={w}: {diff}");
    }
}

#[test]
fn loss_terms_match_head_distributions() {
    // one category (POS): total = CE(lemma) + CE(bundle) + CE(POS)
    let c = corpus(
        "Toy-T",
        &[&[
            ("dogs", "dog", "N"),
            ("ran", "run", "V"),
            ("cat", "cat", "N"),
        ]],
    );
    let table = CategoryTable::unimorph();
    let model = model_for(&c, small_config(EncoderKind::Window), 9);
    assert_eq!(model.vocab().categories.len(), 1);
    let data = examples(&model, &c, &table, AuxInputs::default()).unwrap();
    let loss = model.loss(&batch_of(&data), 1.0);

    let sentence = &data[0].sentence;
    let dists = model.distributions(sentence);
    let cats = model.category_distributions(sentence);
    let (mut lemma, mut bundle, mut category) = (0.0, 0.0, 0.0);
    for (t, gold) in data[0].gold.iter().enumerate() {
        lemma -= dists[t].rules[gold.rule.unwrap()].ln();
        bundle -= dists[t].bundles[gold.bundle.unwrap()].ln();
        category -= cats[t][0][gold.categories[0]].ln();
    }
    let n = 3.0;
    assert!((loss.lemma - lemma / n).abs() < 1e-12);
    assert!((loss.bundle - bundle / n).abs() < 1e-12);
    assert!((loss.category - category / n).abs() < 1e-12);
    assert!((loss.total() - (lemma + bundle + category) / n).abs() < 1e-12);
}

#[test]
fn zero_weights_give_uniform_distributions() {
    let c = toy_rows();
    for encoder in [EncoderKind::Window, EncoderKind::Recurrent] {
        let mut model = model_for(&c, small_config(encoder), 1);
        model.params_mut().fill(0.0);
        let encoded = model
            .encode_input(&c.sentences[1], 1, AuxInputs::default())
            .unwrap();
        let rules = model.vocab().rules.len() as f64;
        let bundles = model.vocab().bundles.len() as f64;
        for dist in model.distributions(&encoded) {
            assert!(dist.rules.iter().all(|&p| (p - 1.0 / rules).abs() < 1e-15));
            assert!(dist
                .bundles
                .iter()
                .all(|&p| (p - 1.0 / bundles).abs() < 1e-15));
        }
        for token in model.category_distributions(&encoded) {
            for (head, vocab) in token.iter().zip(&model.vocab().categories) {
                let k = vocab.values.len() as f64;
                assert!(head.iter().all(|&p| (p - 1.0 / k).abs() < 1e-15));
            }
        }
    }
}

#[test]
fn distributions_are_normalized() {
    let toy = Toy::new();
    let c = toy.corpus("Toy-X", 1, 10);
    let model = model_for(&c, small_config(EncoderKind::Recurrent), 2);
    for (i, s) in c.sentences.iter().enumerate() {
        let encoded = model.encode_input(s, i, AuxInputs::default()).unwrap();
        for dist in model.distributions(&encoded) {
            assert!((dist.rules.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            assert!((dist.bundles.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }
}

#[test]
fn single_token_state_has_encoder_width() {
    let c = toy_rows();
    let single = Sentence::from_tokens([("cat".to_string(), None, None)]);
    for (encoder, width) in [(EncoderKind::Window, 24), (EncoderKind::Recurrent, 48)] {
        let model = model_for(&c, small_config(encoder), 3);
        let encoded = model
            .encode_input(&single, 0, AuxInputs::default())
            .unwrap();
        let states = model.encode(&encoded);
        assert_eq!(states.len(), 1);
        assert_eq!(states[0].len(), width);
    }
}

#[test]
fn states_depend_on_context() {
    let c = toy_rows();
    let sentence =
        |forms: &[&str]| Sentence::from_tokens(forms.iter().map(|f| (f.to_string(), None, None)));
    let a = sentence(&["cat", "ran", "a"]);
    let b = sentence(&["cat", "a", "ran"]);
    for encoder in [EncoderKind::Window, EncoderKind::Recurrent] {
        let model = model_for(&c, small_config(encoder), 4);
        let sa = model.encode(&model.encode_input(&a, 0, AuxInputs::default()).unwrap());
        let sb = model.encode(&model.encode_input(&b, 0, AuxInputs::default()).unwrap());
        assert_ne!(sa[0], sb[0], "{encoder:?}");
        let deterministic = model.encode(&model.encode_input(&a, 0, AuxInputs::default()).unwrap());
        assert_eq!(sa, deterministic);
    }
}

#[test]
fn zeroed_aux_weights_reduce_to_plain_encoding() {
    let c = toy_rows();
    let vectors = word_vectors(4);
    for encoder in [EncoderKind::Window, EncoderKind::Recurrent] {
        let plain_config = small_config(encoder);
        let aux_config = ModelConfig {
            use_pretrained: true,
            pretrained_dim: 4,
            ..plain_config.clone()
        };
        let mut with_aux = model_for(&c, aux_config.clone(), 8);
        let mut plain = model_for(&c, plain_config.clone(), 8);
        let base = plain_config.input_dim();
        let full = aux_config.input_dim();
        let spans = match encoder {
            EncoderKind::Window => 2 * aux_config.window + 1,
            EncoderKind::Recurrent => 1,
        };
        // copy everything, zeroing and dropping the aux input columns
        for tensor in &mut with_aux.params_mut().tensors {
            let target = plain.params_mut().get_mut(&tensor.name).unwrap();
            let is_input = tensor.name.starts_with("encoder.0.")
                && (tensor.name.ends_with(".weight") || tensor.name.ends_with(".input"));
            if !is_input {
                target.data.clone_from(&tensor.data);
                continue;
            }
            for r in 0..tensor.rows {
                for s in 0..spans {
                    for k in 0..full {
                        let col = s * full + k;
                        if k >= base {
                            tensor.data[r * tensor.cols + col] = 0.0;
                        } else {
                            target.data[r * target.cols + s * base + k] =
                                tensor.data[r * tensor.cols + col];
                        }
                    }
                }
            }
        }
        let aux = AuxInputs {
            word_vectors: Some(&vectors),
            contextual: None,
        };
        let sentence = &c.sentences[1];
        let a = with_aux.encode(&with_aux.encode_input(sentence, 1, aux).unwrap());
        let b = plain.encode(
            &plain
                .encode_input(sentence, 1, AuxInputs::default())
                .unwrap(),
        );
        for (x, y) in a.iter().flatten().zip(b.iter().flatten()) {
            assert!((x - y).abs() < 1e-12, "{encoder:?}");
        }
    }
}

#[test]
fn aux_dimension_mismatch_is_an_error() {
    let c = toy_rows();
    let config = ModelConfig {
        use_pretrained: true,
        pretrained_dim: 4,
        ..small_config(EncoderKind::Window)
    };
    let model = model_for(&c, config, 1);
    let vectors = word_vectors(3);
    let aux = AuxInputs {
        word_vectors: Some(&vectors),
        contextual: None,
    };
    assert!(matches!(
        model.encode_input(&c.sentences[0], 0, aux),
        Err(ModelError::Dimension {
            expected: 4,
            found: 3,
            ..
        })
    ));
    assert!(matches!(
        model.encode_input(&c.sentences[0], 0, AuxInputs::default()),
        Err(ModelError::MissingAux(_))
    ));
}

fn quick_train_config(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 8,
        learning_rate: 0.01,
        ..TrainConfig::default()
    }
}

#[test]
fn zero_learning_rate_leaves_parameters_unchanged() {
    let c = Toy::new().corpus("Toy-X", 3, 12);
    let model = model_for(&c, small_config(EncoderKind::Recurrent), 6);
    let data = examples(&model, &c, &CategoryTable::unimorph(), AuxInputs::default()).unwrap();
    let config = TrainConfig {
        learning_rate: 0.0,
        ..quick_train_config(2)
    };
    let outcome = fit(model.clone(), &data, None, &config, &mut |_| {}).unwrap();
    assert_eq!(outcome.model.params(), model.params());
}

#[test]
fn fixed_seed_training_is_bit_identical() {
    let c = Toy::new().corpus("Toy-X", 3, 20);
    let run = || {
        train(
            &c,
            None,
            &CategoryTable::unimorph(),
            small_config(EncoderKind::Recurrent),
            &quick_train_config(2),
            AuxInputs::default(),
            &mut |_| {},
        )
        .unwrap()
    };
    let a = run();
    let b = run();
    assert_eq!(a.model, b.model);
    assert_eq!(a.epochs, b.epochs);
}

#[test]
fn training_loss_decreases_over_first_epochs() {
    let c = Toy::new().corpus("Toy-X", 4, 50);
    let config = TrainConfig {
        epochs: 5,
        ..TrainConfig::default()
    };
    let outcome = train(
        &c,
        None,
        &CategoryTable::unimorph(),
        small_config(EncoderKind::Recurrent),
        &config,
        AuxInputs::default(),
        &mut |_| {},
    )
    .unwrap();
    let losses: Vec<f64> = outcome
        .epochs
        .iter()
        .map(|e| e.train_loss.total())
        .collect();
    assert_eq!(losses.len(), 5);
    for pair in losses.windows(2) {
        assert!(pair[1] < pair[0], "{losses:?}");
    }
}

#[test]
fn best_dev_epoch_is_kept() {
    let toy = Toy::new();
    let c = toy.corpus("Toy-X", 4, 30);
    let dev = toy.corpus("Toy-X", 5, 10);
    let mut seen = Vec::new();
    let outcome = train(
        &c,
        Some((&dev, AuxInputs::default())),
        &CategoryTable::unimorph(),
        small_config(EncoderKind::Window),
        &quick_train_config(4),
        AuxInputs::default(),
        &mut |report| seen.push(report.dev.unwrap().selection_score()),
    )
    .unwrap();
    let best = outcome.best_epoch.unwrap();
    let top = seen.iter().cloned().fold(f64::MIN, f64::max);
    assert_eq!(seen[best - 1], top);
    assert_eq!(seen.iter().position(|&s| s == top), Some(best - 1));
    let predicted = predict(&outcome.model, &dev, AuxInputs::default(), None).unwrap();
    let report = udmorph_core::metrics::evaluate(&dev, &predicted).unwrap();
    assert_eq!(report.selection_score(), top);
}

#[test]
fn non_finite_parameters_abort_training() {
    let c = toy_rows();
    let mut model = model_for(&c, small_config(EncoderKind::Window), 1);
    *model.params_mut().value_mut(0) = f64::NAN;
    // word 0 is the unknown word; make every token use it
    let mut data = examples(&model, &c, &CategoryTable::unimorph(), AuxInputs::default()).unwrap();
    for example in &mut data {
        for token in &mut example.sentence.tokens {
            token.word = 0;
        }
    }
    let result = fit(model, &data, None, &quick_train_config(1), &mut |_| {});
    assert!(
        matches!(result, Err(ModelError::Divergence { epoch: 1, .. })),
        "{result:?}"
    );
}

#[test]
fn category_heads_do_not_affect_predictions() {
    let toy = Toy::new();
    let c = toy.corpus("Toy-X", 4, 20);
    let outcome = train(
        &c,
        None,
        &CategoryTable::unimorph(),
        small_config(EncoderKind::Recurrent),
        &quick_train_config(3),
        AuxInputs::default(),
        &mut |_| {},
    )
    .unwrap();
    let test = toy.corpus("Toy-X", 9, 10);
    let full = predict(&outcome.model, &test, AuxInputs::default(), None).unwrap();
    let stripped_model = outcome.model.without_category_heads();
    assert!(stripped_model.vocab().categories.is_empty());
    assert!(stripped_model.params().len() < outcome.model.params().len());
    let stripped = predict(&stripped_model, &test, AuxInputs::default(), None).unwrap();
    assert_eq!(full, stripped);

    let mut scrambled = outcome.model.clone();
    for tensor in &mut scrambled.params_mut().tensors {
        if tensor.name.starts_with("category.") {
            tensor.data.iter_mut().for_each(|v| *v = 3.0);
        }
    }
    assert_eq!(
        predict(&scrambled, &test, AuxInputs::default(), None).unwrap(),
        full
    );
}

fn rule_index(model: &TaggerModel, rule: &str) -> usize {
    model.vocab().rules.get(rule).unwrap()
}

#[test]
fn inapplicable_top_rule_falls_back() {
    // "abcd" -> "a" induces ↓0;d¦---
    let c = corpus(
        "Toy-T",
        &[&[("abcd", "a", "N"), ("Xy", "xy", "N"), ("dogs", "dog", "N")]],
    );
    let mut model = model_for(&c, small_config(EncoderKind::Window), 2);
    let long = rule_index(&model, "↓0;d¦---");
    let strip = rule_index(&model, "↓0;d¦-");
    let bias = model.params_mut().get_mut("lemma.bias").unwrap();
    bias.data[long] = 50.0;
    bias.data[strip] = 40.0;
    let sentence = Sentence::from_tokens([("ab".to_string(), None, None)]);
    let out = predict_sentence(&model, &sentence, 0, AuxInputs::default(), None).unwrap();
    assert_eq!(out[0].rule, Some(strip));
    assert!(!out[0].fallback);
    assert_eq!(out[0].lemma, "a");

    // a mask with only the inapplicable rule forces the identity fallback
    let mut mask = RestrictionMask::full(model.vocab(), "Toy-T");
    mask.rules.retain(|r| r == "↓0;d¦---");
    let out = predict_sentence(&model, &sentence, 0, AuxInputs::default(), Some(&mask)).unwrap();
    assert!(out[0].fallback);
    assert_eq!(out[0].lemma, "ab");
    assert_eq!(out[0].rule, Some(rule_index(&model, "↓0;d¦")));
}

#[test]
fn emitted_lemmas_come_from_the_chosen_rule() {
    let toy = Toy::new();
    let c = toy.corpus("Toy-X", 4, 20);
    let model = model_for(&c, small_config(EncoderKind::Recurrent), 12);
    let test = toy.corpus("Toy-X", 10, 20);
    for (i, s) in test.sentences.iter().enumerate() {
        for (token, p) in s
            .tokens
            .iter()
            .zip(predict_sentence(&model, s, i, AuxInputs::default(), None).unwrap())
        {
            assert!(!p.lemma.is_empty());
            let rule = match p.rule {
                Some(r) => model.vocab().rule(r).unwrap().clone(),
                None => LemmaRule::identity(),
            };
            assert_eq!(apply_rule(&rule, token.form()).unwrap(), p.lemma);
        }
    }
}

#[test]
fn identity_only_mask_lowercases() {
    let toy = Toy::new();
    let c = toy.corpus("Toy-X", 4, 20);
    let model = model_for(&c, small_config(EncoderKind::Window), 12);
    let mut mask = RestrictionMask::full(model.vocab(), "Toy-X");
    mask.rules.retain(|r| r == "↓0;d¦");
    let predicted = predict(&model, &c, AuxInputs::default(), Some(&mask)).unwrap();
    for (gold, pred) in c.tokens().zip(predicted.tokens()) {
        assert_eq!(pred.lemma().unwrap(), gold.form().to_lowercase());
    }
}

#[test]
fn full_mask_equals_no_mask() {
    let toy = Toy::new();
    let c = toy.corpus("Toy-X", 4, 20);
    let model = model_for(&c, small_config(EncoderKind::Recurrent), 13);
    let mask = RestrictionMask::full(model.vocab(), "Toy-X");
    let test = toy.corpus("Toy-X", 11, 15);
    assert_eq!(
        predict(&model, &test, AuxInputs::default(), Some(&mask)).unwrap(),
        predict(&model, &test, AuxInputs::default(), None).unwrap()
    );
}

#[test]
fn metadata_roundtrip_rebuilds_the_model() {
    let c = Toy::new().corpus("Toy-X", 4, 10);
    let config = ModelConfig {
        regularization_weight: 0.5,
        ..small_config(EncoderKind::Recurrent)
    };
    let model = model_for(&c, config, 21);
    let (config, vocab) = TaggerModel::parse_metadata(&model.metadata_text()).unwrap();
    let rebuilt = TaggerModel::from_parts(config, vocab, model.params().clone()).unwrap();
    assert_eq!(rebuilt, model);

    let mut bad = model.params().clone();
    bad.tensors.pop();
    let (config, vocab) = TaggerModel::parse_metadata(&model.metadata_text()).unwrap();
    assert!(matches!(
        TaggerModel::from_parts(config, vocab, bad),
        Err(ModelError::Parameters(_))
    ));
}

#[test]
fn config_text_roundtrip_and_errors() {
    let config = ModelConfig {
        encoder: EncoderKind::Window,
        use_contextual: true,
        contextual_dim: 768,
        regularization_weight: 2.0,
        ..ModelConfig::default()
    };
    assert_eq!(ModelConfig::from_text(&config.to_text()).unwrap(), config);
    assert!(ModelConfig::from_text("bogus=1").is_err());
    assert!(ModelConfig::from_text("layers=two").is_err());
    let mut zero = ModelConfig::default();
    zero.set("hidden_dim", "0").unwrap();
    assert!(zero.validate().is_err());
}
