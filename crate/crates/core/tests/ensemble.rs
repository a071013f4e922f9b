mod support;

use std::collections::BTreeMap;

use support::{corpus, small_config, Toy};
use udmorph_core::conllu::Corpus;
use udmorph_core::ensemble::{
    ensemble_distributions, ensemble_predict, select_any_subset, select_configuration,
    subsets_in_order, Configuration, Member, ModelConfigurationId, Objective, SelectionMethod,
    UnionSpace,
};
use udmorph_core::lemma_rules::apply_rule;
use udmorph_core::metrics::evaluate;
use udmorph_core::model::{
    predict, train, AuxInputs, EncoderKind, TaggerModel, TokenDistribution, TrainConfig, Vocabulary,
};
use udmorph_core::CategoryTable;

fn trained(corpus: &Corpus, seed: u64, epochs: usize) -> TaggerModel {
    let config = TrainConfig {
        epochs,
        batch_size: 8,
        learning_rate: 0.01,
        seed,
        ..TrainConfig::default()
    };
    train(
        corpus,
        None,
        &CategoryTable::unimorph(),
        small_config(EncoderKind::Window),
        &config,
        AuxInputs::default(),
        &mut |_| {},
    )
    .unwrap()
    .model
}

fn untrained(corpus: &Corpus, seed: u64) -> TaggerModel {
    let vocab = Vocabulary::build(corpus, &CategoryTable::unimorph(), 3).unwrap();
    TaggerModel::new(small_config(EncoderKind::Window), vocab, seed).unwrap()
}

#[test]
fn copies_of_one_model_predict_like_the_model() {
    let toy = Toy::new();
    let c = toy.corpus("Toy-X", 1, 20);
    let model = trained(&c, 1, 3);
    let test = toy.corpus("Toy-X", 2, 15);
    let single = predict(&model, &test, AuxInputs::default(), None).unwrap();
    for k in 1..=3 {
        let members: Vec<&TaggerModel> = std::iter::repeat_n(&model, k).collect();
        assert_eq!(
            ensemble_predict(&members, &test, AuxInputs::default(), None).unwrap(),
            single
        );
    }
}

#[test]
fn averaging_arithmetic() {
    let c = corpus("Toy-T", &[&[("a", "a", "N"), ("b", "b", "N")]]);
    let a = untrained(&c, 1);
    let b = untrained(&c, 2);
    assert_eq!(a.vocab().bundles.len(), 2);
    let space = UnionSpace::new(&[&a, &b]);
    let da = TokenDistribution {
        rules: vec![0.6, 0.4],
        bundles: vec![0.6, 0.4],
    };
    let db = TokenDistribution {
        rules: vec![0.2, 0.8],
        bundles: vec![0.2, 0.8],
    };
    let avg = space.average(&[0, 1], &[&da, &db]);
    for v in [&avg.rules, &avg.bundles] {
        assert!((v[0] - 0.4).abs() < 1e-15 && (v[1] - 0.6).abs() < 1e-15);
        let argmax = if v[1] > v[0] { 1 } else { 0 };
        assert_eq!(argmax, 1);
    }
}

/// Token-level argmax over canonical-string keyed averages, computed
/// directly from each member's own distributions.
fn brute_force_predict(models: &[&TaggerModel], corpus: &Corpus) -> Vec<(String, String)> {
    let mut out = Vec::new();
    for (i, sentence) in corpus.sentences.iter().enumerate() {
        let per_model: Vec<Vec<TokenDistribution>> = models
            .iter()
            .map(|m| m.distributions(&m.encode_input(sentence, i, AuxInputs::default()).unwrap()))
            .collect();
        for (t, token) in sentence.tokens.iter().enumerate() {
            let mut rules: BTreeMap<String, f64> = BTreeMap::new();
            let mut bundles: BTreeMap<String, f64> = BTreeMap::new();
            for (m, dists) in models.iter().zip(&per_model) {
                for (k, p) in dists[t].rules.iter().enumerate() {
                    *rules.entry(m.vocab().rules.items()[k].clone()).or_default() +=
                        p / models.len() as f64;
                }
                for (k, p) in dists[t].bundles.iter().enumerate() {
                    *bundles
                        .entry(m.vocab().bundles.items()[k].clone())
                        .or_default() += p / models.len() as f64;
                }
            }
            let total: f64 = rules.values().sum();
            assert!((total - 1.0).abs() < 1e-6);
            let mut ranked: Vec<(&String, &f64)> =
                rules.iter().filter(|(r, _)| *r != "<unk>").collect();
            ranked.sort_by(|a, b| b.1.total_cmp(a.1));
            let lemma = ranked
                .iter()
                .find_map(|(r, _)| apply_rule(&r.parse().unwrap(), token.form()).ok())
                .unwrap();
            let bundle = bundles
                .iter()
                .filter(|(b, _)| *b != "<unk>")
                .max_by(|a, b| a.1.total_cmp(b.1))
                .unwrap()
                .0
                .clone();
            out.push((lemma, bundle));
        }
    }
    out
}

#[test]
fn mixed_label_spaces_match_direct_averaging() {
    let toy = Toy::new();
    let models = [
        trained(&toy.corpus("Toy-A", 1, 15), 1, 3),
        trained(&toy.corpus("Toy-B", 2, 25), 2, 3),
        trained(&toy.corpus("Toy-C", 3, 10), 3, 3),
    ];
    let refs: Vec<&TaggerModel> = models.iter().collect();
    assert_ne!(refs[0].vocab().rules, refs[1].vocab().rules);
    let test = toy.corpus("Toy-D", 4, 20);
    let got = ensemble_predict(&refs, &test, AuxInputs::default(), None).unwrap();
    let expected = brute_force_predict(&refs, &test);
    let actual: Vec<(String, String)> = got
        .tokens()
        .map(|t| {
            (
                t.lemma().unwrap().to_string(),
                t.bundle().unwrap().canonical_text().to_string(),
            )
        })
        .collect();
    assert_eq!(actual, expected);

    for (i, sentence) in test.sentences.iter().enumerate() {
        let (_, dists) = ensemble_distributions(&refs, sentence, i, AuxInputs::default()).unwrap();
        for d in dists {
            assert!((d.rules.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            assert!((d.bundles.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }
}

fn members<'a>(
    models: &'a [TaggerModel],
    names: &'a [String],
    ids: &[ModelConfigurationId],
) -> Vec<Member<'a>> {
    models
        .iter()
        .zip(names)
        .enumerate()
        .map(|(i, (model, name))| Member {
            name,
            model,
            id: ids.get(i).copied(),
        })
        .collect()
}

#[test]
fn single_candidate_is_selected() {
    let toy = Toy::new();
    let dev = toy.corpus("Toy-X", 5, 10);
    let models = vec![untrained(&toy.corpus("Toy-X", 1, 10), 1)];
    let names = vec!["only".to_string()];
    let pool = members(&models, &names, &[]);
    let selection = select_any_subset(
        &pool,
        &dev,
        AuxInputs::default(),
        None,
        Objective::default(),
    )
    .unwrap();
    assert_eq!(selection.members, [0]);
    assert_eq!(selection.spec.members, ["only"]);
    assert_eq!(selection.spec.method, SelectionMethod::AnySubset);
}

#[test]
fn any_subset_matches_exhaustive_oracle() {
    let toy = Toy::new();
    let train_corpus = toy.corpus("Toy-X", 1, 25);
    let dev = toy.corpus("Toy-X", 6, 12);
    let models = vec![
        untrained(&train_corpus, 1),
        trained(&train_corpus, 2, 4),
        untrained(&train_corpus, 3),
        trained(&train_corpus, 4, 1),
    ];
    let names: Vec<String> = (0..models.len()).map(|i| format!("m{i}")).collect();
    let pool = members(&models, &names, &[]);
    let selection = select_any_subset(
        &pool,
        &dev,
        AuxInputs::default(),
        None,
        Objective::default(),
    )
    .unwrap();

    let mut oracle: Option<(f64, Vec<usize>)> = None;
    for subset in subsets_in_order(models.len()) {
        let refs: Vec<&TaggerModel> = subset.iter().map(|&i| &models[i]).collect();
        let predicted = ensemble_predict(&refs, &dev, AuxInputs::default(), None).unwrap();
        let score = evaluate(&dev, &predicted).unwrap().selection_score();
        if oracle.as_ref().is_none_or(|(s, _)| score > *s) {
            oracle = Some((score, subset));
        }
    }
    let (score, subset) = oracle.unwrap();
    assert_eq!(selection.members, subset);
    assert_eq!(selection.score, score);
}

#[test]
fn ties_prefer_smaller_then_lexicographically_first() {
    let toy = Toy::new();
    let model = trained(&toy.corpus("Toy-X", 1, 15), 1, 2);
    let models = vec![model.clone(), model.clone(), model];
    let names: Vec<String> = (0..3).map(|i| format!("copy{i}")).collect();
    let pool = members(&models, &names, &[]);
    let dev = toy.corpus("Toy-X", 6, 8);
    let selection = select_any_subset(
        &pool,
        &dev,
        AuxInputs::default(),
        None,
        Objective::default(),
    )
    .unwrap();
    assert_eq!(selection.members, [0]);
}

fn grid_models(corpus: &Corpus, planted: Option<Configuration>) -> Vec<TaggerModel> {
    let good = trained(corpus, 99, 6);
    ModelConfigurationId::grid()
        .iter()
        .map(|id| {
            if Some(id.configuration) == planted {
                good.clone()
            } else {
                untrained(
                    corpus,
                    100 + u64::from(id.replica) + 10 * id.configuration as u64,
                )
            }
        })
        .collect()
}

#[test]
fn configuration_selection_finds_the_planted_winner() {
    let toy = Toy::new();
    let corpus = toy.corpus("Toy-X", 1, 30);
    let dev = toy.corpus("Toy-X", 7, 12);
    let ids = ModelConfigurationId::grid();
    let names: Vec<String> = ids.iter().map(|id| id.to_string()).collect();
    for planted in Configuration::ALL {
        let models = grid_models(&corpus, Some(planted));
        let pool = members(&models, &names, &ids);
        let selection = select_configuration(
            &pool,
            &dev,
            AuxInputs::default(),
            None,
            Objective::default(),
        )
        .unwrap();
        let expected: Vec<String> = (1..=3)
            .map(|r| format!("{}-{r}", planted.as_str()))
            .collect();
        assert_eq!(selection.spec.members, expected);
        assert_eq!(selection.spec.method, SelectionMethod::Configuration);
    }
}

#[test]
fn identical_configurations_tie_to_regular() {
    let toy = Toy::new();
    let model = trained(&toy.corpus("Toy-X", 1, 15), 1, 2);
    let models = vec![model; 9];
    let ids = ModelConfigurationId::grid();
    let names: Vec<String> = ids.iter().map(|id| id.to_string()).collect();
    let pool = members(&models, &names, &ids);
    let dev = toy.corpus("Toy-X", 6, 8);
    let by_config = select_configuration(
        &pool,
        &dev,
        AuxInputs::default(),
        None,
        Objective::default(),
    )
    .unwrap();
    assert_eq!(by_config.members, [0, 1, 2]);
    let by_subset = select_any_subset(
        &pool,
        &dev,
        AuxInputs::default(),
        None,
        Objective::default(),
    )
    .unwrap();
    assert_eq!(by_subset.score, by_config.score);
}

#[test]
fn configuration_selection_returns_a_grid_row() {
    let toy = Toy::new();
    let corpus = toy.corpus("Toy-X", 1, 20);
    let dev = toy.corpus("Toy-X", 7, 10);
    let ids = ModelConfigurationId::grid();
    let names: Vec<String> = ids.iter().map(|id| id.to_string()).collect();
    let models = grid_models(&corpus, None);
    let pool = members(&models, &names, &ids);
    let selection = select_configuration(
        &pool,
        &dev,
        AuxInputs::default(),
        None,
        Objective::default(),
    )
    .unwrap();
    assert!([vec![0, 1, 2], vec![3, 4, 5], vec![6, 7, 8]].contains(&selection.members));
}

#[test]
fn configuration_selection_needs_ids() {
    let toy = Toy::new();
    let corpus = toy.corpus("Toy-X", 1, 5);
    let models = vec![untrained(&corpus, 1)];
    let names = vec!["x".to_string()];
    let pool = members(&models, &names, &[]);
    assert!(select_configuration(
        &pool,
        &corpus,
        AuxInputs::default(),
        None,
        Objective::default()
    )
    .is_err());
}
