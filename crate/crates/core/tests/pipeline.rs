use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use setseq::checkpoint;
use setseq::data::{read_jsonl, Objective};
use setseq::datagen::{generate, split, GenConfig};
use setseq::decoder::DecodeConfig;
use setseq::encoder::{EncoderConfig, EncoderModel};
use setseq::eval::{evaluate, interplay_analysis, score_sessions, Ranker};
use setseq::featurizer::FeatureLayout;
use setseq::model::Model;
use setseq::trainer::{train, LabelMode, Loss, TrainConfig};

fn small_data() -> Vec<setseq::data::Session> {
    let cfg = GenConfig {
        n_users: 40,
        sessions_per_user: 3,
        ..GenConfig::default()
    };
    generate(&cfg).unwrap().sessions
}

fn tiny(layout: FeatureLayout) -> Model {
    let cfg = EncoderConfig {
        layers: 1,
        heads: 2,
        inducing_points: 4,
        hidden: 8,
        ff_hidden: 16,
    };
    EncoderModel::new(cfg, layout, 5).unwrap().into()
}

#[test]
fn training_is_bit_reproducible() {
    let data = small_data();
    let cfg = TrainConfig {
        steps: 8,
        batch_sessions: 16,
        eval_every: 4,
        seed: 3,
        ..TrainConfig::default()
    };
    for loss in [Loss::Rmse, Loss::Bce, Loss::AttRank] {
        let cfg = TrainConfig { loss, ..cfg.clone() };
        let a = train(&data, &tiny(FeatureLayout::Standard), &cfg, LabelMode::Sat).unwrap();
        let b = train(&data, &tiny(FeatureLayout::Standard), &cfg, LabelMode::Sat).unwrap();
        assert_eq!(
            checkpoint::to_bytes(&a.model).unwrap(),
            checkpoint::to_bytes(&b.model).unwrap()
        );
        assert_eq!(a.log_csv(), b.log_csv());
    }
}

#[test]
fn composite_labels_train_on_the_wider_layout() {
    let data = small_data();
    let cfg = TrainConfig {
        steps: 4,
        batch_sessions: 8,
        eval_every: 2,
        ..TrainConfig::default()
    };
    let out = train(&data, &tiny(FeatureLayout::WithObjectives), &cfg, LabelMode::MoLtr).unwrap();
    let scores = score_sessions(&out.model, &data).unwrap();
    let report = evaluate("moltr", &Ranker::Sort, &data, Some(&scores)).unwrap();
    assert_eq!(report.sessions, data.len());
}

#[test]
fn generated_rates_match_configuration() {
    let cfg = GenConfig::reference();
    let data = generate(&cfg).unwrap();
    assert_eq!(data.sessions.len(), 10_000);
    let rates = data.manifest.objective_rates;
    assert!((rates[Objective::Boost.column()] - cfg.boost_rate).abs() < 0.02);
    assert!((rates[Objective::Exposure.column()] - 0.5).abs() < 0.02);
    assert!((rates[Objective::Discovery.column()] - cfg.discovery_rate).abs() < 0.02);
    for s in &data.sessions {
        assert!(s.objectives.rows().iter().flatten().all(|&v| v <= 1));
    }
}

#[test]
fn shuffled_satisfaction_has_no_discovery_correlation() {
    let mut data = generate(&GenConfig::reference()).unwrap().sessions;
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut pooled: Vec<u8> = data.iter().flat_map(|s| s.sat.iter().copied()).collect();
    pooled.shuffle(&mut rng);
    let mut it = pooled.into_iter();
    for s in &mut data {
        for v in &mut s.sat {
            *v = it.next().unwrap();
        }
    }
    let report = interplay_analysis(&data).unwrap();
    let rho = report.objectives[Objective::Discovery.column()]
        .sat_correlation
        .unwrap();
    assert!(rho.abs() < 0.05, "{}", rho);
}

#[test]
fn dataset_survives_jsonl_and_split() {
    let cfg = GenConfig {
        n_users: 10,
        sessions_per_user: 2,
        ..GenConfig::default()
    };
    let ds = generate(&cfg).unwrap();
    let text = ds.to_jsonl().unwrap();
    let back = read_jsonl(text.as_slice()).unwrap();
    assert_eq!(back, ds.sessions);
    let parts = split(&back, &[0.8, 0.1, 0.1], 1).unwrap();
    let users: Vec<usize> = parts
        .iter()
        .map(|p| {
            p.iter()
                .map(|s| s.user.id.clone())
                .collect::<std::collections::BTreeSet<_>>()
                .len()
        })
        .collect();
    assert_eq!(users, vec![8, 1, 1]);
}

#[test]
fn decoder_defaults_are_the_documented_ones() {
    let d = DecodeConfig::default();
    assert_eq!((d.epsilon, d.beam_width), (0.05, 4));
}
