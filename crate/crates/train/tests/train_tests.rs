use std::path::Path;

use hypergen_episode::{
    dataset_from_uri, sample_episode, synth_glyphs, AugmentationSpec, DatasetIndex, Episode,
    Split, SplitConfig,
};
use hypergen_model::{
    episode_loss, CnnSpec, Generator, GeneratorConfig, TransformerConfig, TransformerVariant,
    WeightSource,
};
use hypergen_tensor::{Real, Tape, Tensor};
use hypergen_train::{
    confidence95, derive_seed, evaluate, meta_step, episode_tensors, train, training_episode,
    EpisodeRecord, EpisodeShape, EvalReport, MetricsRow, MetricsWriter, QueryModel, TrainConfig,
    TrainError, CHECKPOINT_FILE, CSV_HEADER,
};

const INPUT: [usize; 3] = [1, 16, 16];

fn micro_generator<S: Real>(n_way: usize, body: WeightSource, seed: u64) -> Generator<S> {
    let mut config = GeneratorConfig::new(n_way);
    config.d_label = 8;
    config.transformer = TransformerConfig {
        num_layers: 1,
        num_heads: 2,
        nu: 0.25,
        variant: TransformerVariant::EncoderOnly,
        simplified: false,
    };
    let spec = CnnSpec::standard(2, 1, n_way, INPUT, body, WeightSource::Generated);
    Generator::new(config, spec, seed).unwrap()
}

fn glyphs(classes: usize, per: usize, seed: u64) -> DatasetIndex {
    synth_glyphs(classes, per, 16, seed).unwrap()
}

fn split_pair() -> (DatasetIndex, DatasetIndex) {
    let base = SplitConfig {
        train: 6,
        val: 0,
        test: 4,
        take: Split::Train,
        augment: AugmentationSpec::off(),
        min_samples: 1,
    };
    let uri = "synth://glyphs?classes=10&per=4&size=16&seed=5";
    let train = dataset_from_uri(uri, &base).unwrap();
    let test = dataset_from_uri(uri, &SplitConfig { take: Split::Test, ..base }).unwrap();
    (train, test)
}

fn tiny_config(total_steps: usize) -> TrainConfig {
    TrainConfig {
        lr0: 0.05,
        total_steps,
        meta_batch: 1,
        seed: 42,
        eval_every: 4,
        eval_episodes: 3,
        checkpoint_every: 0,
        log_every: 1,
        n_way: 2,
        k_shot: 1,
        q_query: 1,
        ..TrainConfig::default()
    }
}

#[test]
fn learning_rate_follows_the_decay_schedule() {
    let config = TrainConfig::default();
    assert_eq!(config.lr(0), config.lr0);
    assert_eq!(config.lr(99_999), config.lr0);
    assert!((config.lr(100_000) - 0.95 * config.lr0).abs() < 1e-15);
    assert!((config.lr(200_000) - 0.9025 * config.lr0).abs() < 1e-12);
    assert!(config.lr(500_000) < config.lr(400_000));
}

#[test]
fn config_validation_rejects_nonsense() {
    let ok = TrainConfig::default();
    assert!(ok.validate().is_ok());
    let cases: Vec<(&str, TrainConfig)> = vec![
        ("zero batch", TrainConfig { meta_batch: 0, ..ok.clone() }),
        ("zero steps", TrainConfig { total_steps: 0, ..ok.clone() }),
        ("bad decay", TrainConfig { decay: 0.0, ..ok.clone() }),
        ("decay above one", TrainConfig { decay: 1.5, ..ok.clone() }),
        ("negative lr", TrainConfig { lr0: -0.1, ..ok.clone() }),
        ("one way", TrainConfig { n_way: 1, ..ok.clone() }),
        ("no shots", TrainConfig { k_shot: 0, ..ok.clone() }),
        (
            "semi without unlabeled",
            TrainConfig { semi_supervised: true, u_unlabeled: 0, ..ok.clone() },
        ),
        (
            "unlabeled without semi",
            TrainConfig { semi_supervised: false, u_unlabeled: 2, ..ok.clone() },
        ),
    ];
    for (what, config) in cases {
        assert!(config.validate().is_err(), "{} should be rejected", what);
    }
}

#[test]
fn zero_learning_rate_leaves_parameters_bitwise_unchanged() {
    let index = glyphs(4, 4, 11);
    let episode = sample_episode(&index, 2, 1, 2, 0, 7).unwrap();
    let mut generator = micro_generator::<f64>(2, WeightSource::Learned, 3);
    let before: Vec<Tensor<f64>> = generator.params.iter().map(|(_, v)| v.clone()).collect();
    let stats = meta_step(&mut generator, std::slice::from_ref(&episode), 0.0).unwrap();
    assert!(stats.loss.is_finite() && stats.grad_norm > 0.0);
    for ((_, after), before) in generator.params.iter().zip(&before) {
        assert_eq!(after.data(), before.data());
    }
}

/// Mean query loss over the batch with parameters bound frozen.
fn batch_loss(generator: &Generator<f64>, episodes: &[Episode]) -> f64 {
    let mut sum = 0.0;
    for episode in episodes {
        let (support, support_labels, query, query_labels) = episode_tensors::<f64>(episode);
        let mut tape = Tape::new();
        let bound = generator.params.bind_frozen(&mut tape);
        let (loss, _) = episode_loss(
            &mut tape,
            generator,
            &bound,
            &support,
            &support_labels,
            &query,
            &query_labels,
        )
        .unwrap();
        sum += tape.value(loss).item().unwrap();
    }
    sum / episodes.len() as f64
}

#[test]
fn meta_step_update_matches_finite_differences() {
    let index = glyphs(6, 6, 11);
    let episodes = vec![
        sample_episode(&index, 2, 1, 2, 0, 100).unwrap(),
        sample_episode(&index, 2, 1, 2, 0, 101).unwrap(),
    ];
    let mut stepped = micro_generator::<f64>(2, WeightSource::Learned, 9);
    let mut probed = micro_generator::<f64>(2, WeightSource::Learned, 9);
    let before: Vec<Tensor<f64>> = stepped.params.iter().map(|(_, v)| v.clone()).collect();
    meta_step(&mut stepped, &episodes, 1.0).unwrap();

    let names = [
        "codebook.xi",
        "gen1.mu",
        "gen1.e0.attn.wq",
        "gen1.e0.attn.wv",
        "gen1.e0.attn.ob",
        "gen1.e0.ff.w1",
        "gen1.e0.ln1.gamma",
        "gen1.act0.kernel",
        "img.s0.kernel",
        "img.s2.bn_gamma",
        "cnn0.kernel",
        "cnn0.bn_gamma",
    ];
    let h = 1e-5;
    let mut worst = (0.0f64, String::new(), 0.0, 0.0);
    for name in names {
        let id = probed.params.id(name).unwrap_or_else(|| panic!("missing {}", name));
        let coord = 0usize;
        let base = probed.params.get(id).data()[coord];
        probed.params.get_mut(id).data_mut()[coord] = base + h;
        let up = batch_loss(&probed, &episodes);
        probed.params.get_mut(id).data_mut()[coord] = base - h;
        let down = batch_loss(&probed, &episodes);
        probed.params.get_mut(id).data_mut()[coord] = base;
        let fd = (up - down) / (2.0 * h);
        // lr was 1.0, so the applied update is exactly the averaged gradient.
        let implied = before[id.index()].data()[coord] - stepped.params.get(id).data()[coord];
        let rel = (implied - fd).abs() / fd.abs().max(1e-6);
        if rel > worst.0 {
            worst = (rel, name.to_string(), implied, fd);
        }
    }
    assert!(
        worst.0 < 1e-3,
        "worst rel err {} at {} (implied {}, fd {})",
        worst.0,
        worst.1,
        worst.2,
        worst.3
    );
}

#[test]
fn repeated_steps_on_one_episode_drive_the_loss_down() {
    let index = glyphs(4, 4, 21);
    let episode = sample_episode(&index, 2, 1, 2, 0, 999).unwrap();
    let mut generator = micro_generator::<f32>(2, WeightSource::Learned, 5);
    let mut trace = Vec::with_capacity(200);
    for _ in 0..200 {
        let stats = meta_step(&mut generator, std::slice::from_ref(&episode), 0.1).unwrap();
        trace.push(stats.loss);
    }
    let first: f64 = trace[..5].iter().sum::<f64>() / 5.0;
    // SGD on one episode overshoots periodically; the median of the tail is
    // the stable level.
    let mut tail: Vec<f64> = trace[150..].to_vec();
    tail.sort_by(f64::total_cmp);
    let settled = tail[tail.len() / 2];
    assert!(
        settled < 0.5 * first,
        "loss failed to drop: first {} settled {}",
        first,
        settled
    );
}

#[test]
fn nonfinite_parameters_abort_the_step() {
    let index = glyphs(4, 4, 31);
    let episode = sample_episode(&index, 2, 1, 1, 0, 1).unwrap();
    let mut generator = micro_generator::<f64>(2, WeightSource::Learned, 5);
    generator
        .params
        .set("codebook.xi", Tensor::full(vec![2, 8], f64::NAN))
        .unwrap();
    let err = meta_step(&mut generator, std::slice::from_ref(&episode), 0.1).unwrap_err();
    assert!(
        err.to_string().to_lowercase().contains("finite"),
        "unexpected diagnostic: {}",
        err
    );
}

#[test]
fn masking_matches_the_announced_schedule() {
    let index = glyphs(6, 8, 2);
    let config = TrainConfig {
        total_steps: 1000,
        semi_supervised: true,
        u_unlabeled: 3,
        n_way: 2,
        k_shot: 1,
        q_query: 1,
        ..TrainConfig::default()
    };
    for (step, ignore) in [(0usize, 0.7), (250, 0.35), (500, 0.0), (750, 0.0)] {
        let mut ignored = 0usize;
        let mut total = 0usize;
        for i in 0..1000 {
            let episode = training_episode(&config, &index, step, i).unwrap();
            assert_eq!(episode.labeled_count(), config.n_way * config.k_shot);
            ignored += config.n_way * config.u_unlabeled - episode.unlabeled_count();
            total += config.n_way * config.u_unlabeled;
        }
        let realized = ignored as f64 / total as f64;
        let sigma = (ignore * (1.0 - ignore) / total as f64).sqrt();
        assert!(
            (realized - ignore).abs() <= 3.0 * sigma + 1e-12,
            "step {}: realized ignore fraction {} vs schedule {} (sigma {})",
            step,
            realized,
            ignore,
            sigma
        );
    }
}

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap()
}

#[test]
fn resumed_runs_continue_bitwise_identically() {
    let (train_idx, test_idx) = split_pair();
    let dir_full = tempfile::tempdir().unwrap();
    let dir_resumed = tempfile::tempdir().unwrap();

    let mut full = micro_generator::<f64>(2, WeightSource::Learned, 7);
    train(&mut full, &tiny_config(8), &train_idx, &test_idx, dir_full.path(), 0).unwrap();

    let mut first_leg = micro_generator::<f64>(2, WeightSource::Learned, 7);
    train(&mut first_leg, &tiny_config(4), &train_idx, &test_idx, dir_resumed.path(), 0).unwrap();
    let (mut second_leg, extra) =
        Generator::<f64>::load(&dir_resumed.path().join(CHECKPOINT_FILE)).unwrap();
    assert_eq!(extra["step"].as_u64(), Some(4));
    train(&mut second_leg, &tiny_config(8), &train_idx, &test_idx, dir_resumed.path(), 4).unwrap();

    for ((name, a), (_, b)) in full.params.iter().zip(second_leg.params.iter()) {
        assert_eq!(a.data(), b.data(), "parameter {} diverged after resume", name);
    }
    assert_eq!(
        read(&dir_full.path().join(CHECKPOINT_FILE)),
        read(&dir_resumed.path().join(CHECKPOINT_FILE))
    );
    assert_eq!(
        read(&MetricsWriter::csv_path(dir_full.path())),
        read(&MetricsWriter::csv_path(dir_resumed.path()))
    );
    assert_eq!(
        read(&MetricsWriter::jsonl_path(dir_full.path())),
        read(&MetricsWriter::jsonl_path(dir_resumed.path()))
    );
}

#[test]
fn identical_runs_produce_identical_artifacts() {
    let (train_idx, test_idx) = split_pair();
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    for dir in [&dir_a, &dir_b] {
        let mut generator = micro_generator::<f64>(2, WeightSource::Learned, 7);
        train(&mut generator, &tiny_config(6), &train_idx, &test_idx, dir.path(), 0).unwrap();
    }
    assert_eq!(
        read(&dir_a.path().join(CHECKPOINT_FILE)),
        read(&dir_b.path().join(CHECKPOINT_FILE))
    );
    assert_eq!(
        read(&MetricsWriter::csv_path(dir_a.path())),
        read(&MetricsWriter::csv_path(dir_b.path()))
    );
}

#[test]
fn train_rejects_overlapping_splits() {
    let index = glyphs(6, 4, 5);
    let mut generator = micro_generator::<f64>(2, WeightSource::Learned, 7);
    let dir = tempfile::tempdir().unwrap();
    let err = train(&mut generator, &tiny_config(2), &index, &index, dir.path(), 0).unwrap_err();
    assert!(matches!(err, TrainError::Config(_)), "got {}", err);
    assert!(err.to_string().contains("share class"));
}

#[test]
fn metrics_stream_is_monotone_with_eval_columns_at_cadence() {
    let (train_idx, test_idx) = split_pair();
    let dir = tempfile::tempdir().unwrap();
    let config = TrainConfig {
        eval_every: 3,
        log_every: 2,
        total_steps: 6,
        ..tiny_config(6)
    };
    let mut generator = micro_generator::<f64>(2, WeightSource::Learned, 7);
    let outcome = train(&mut generator, &config, &train_idx, &test_idx, dir.path(), 0).unwrap();
    assert!(outcome.last_eval.is_some());

    let text = std::fs::read_to_string(MetricsWriter::csv_path(dir.path())).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some(CSV_HEADER));
    let mut steps = Vec::new();
    for line in lines {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields.len(), 6, "row {:?}", line);
        let step: usize = fields[0].parse().unwrap();
        if step % 3 == 0 {
            assert!(!fields[4].is_empty() && !fields[5].is_empty(), "row {:?}", line);
        } else {
            assert!(fields[4].is_empty() && fields[5].is_empty(), "row {:?}", line);
        }
        steps.push(step);
    }
    assert_eq!(steps, vec![2, 3, 4, 6]);
    assert!(steps.windows(2).all(|w| w[0] < w[1]));

    let jsonl = std::fs::read_to_string(MetricsWriter::jsonl_path(dir.path())).unwrap();
    let parsed: Vec<MetricsRow> = jsonl
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(parsed.iter().map(|r| r.step).collect::<Vec<_>>(), steps);
}

#[test]
fn metrics_resume_truncates_stale_rows() {
    let dir = tempfile::tempdir().unwrap();
    let row = |step: usize| MetricsRow {
        step,
        lr: 0.02,
        train_loss: 1.0,
        train_acc: 0.5,
        test_acc: None,
        ci95: None,
    };
    let mut writer = MetricsWriter::create(dir.path()).unwrap();
    for step in [10, 20, 30] {
        writer.append(&row(step)).unwrap();
    }
    drop(writer);
    let mut resumed = MetricsWriter::resume(dir.path(), 20).unwrap();
    assert!(resumed.append(&row(15)).is_err(), "steps must keep advancing");
    resumed.append(&row(25)).unwrap();
    drop(resumed);
    let text = std::fs::read_to_string(MetricsWriter::csv_path(dir.path())).unwrap();
    let steps: Vec<&str> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap())
        .collect();
    assert_eq!(steps, vec!["10", "20", "25"]);
}

struct PerfectStub;

impl QueryModel<f64> for PerfectStub {
    fn query_logits(&self, episode: &Episode) -> Result<Tensor<f64>, TrainError> {
        let n = episode.n_way;
        let mut logits = Tensor::zeros(vec![episode.query.len(), n]);
        for (i, q) in episode.query.iter().enumerate() {
            logits.data_mut()[i * n + q.label] = 10.0;
        }
        Ok(logits)
    }
}

struct RandomStub;

impl QueryModel<f64> for RandomStub {
    fn query_logits(&self, episode: &Episode) -> Result<Tensor<f64>, TrainError> {
        let n = episode.n_way;
        let data = (0..episode.query.len() * n)
            .map(|t| (derive_seed([episode.seed, 0xBEEF, t as u64, 0]) % 1009) as f64 / 1009.0)
            .collect();
        Ok(Tensor::new(vec![episode.query.len(), n], data).unwrap())
    }
}

const EVAL_SHAPE: EpisodeShape = EpisodeShape {
    n_way: 5,
    k_shot: 1,
    q_query: 1,
    u_unlabeled: 0,
};

#[test]
fn a_perfect_scorer_evaluates_to_one() {
    let index = glyphs(8, 4, 3);
    let report = evaluate(&PerfectStub, &index, EVAL_SHAPE, 50, 17).unwrap();
    assert_eq!(report.episodes, 50);
    assert_eq!(report.mean_accuracy, 1.0);
    assert_eq!(report.ci95, 0.0);
    assert!(report.records.iter().all(|r| r.accuracy == 1.0));
}

#[test]
fn a_random_scorer_evaluates_to_chance() {
    let index = glyphs(8, 4, 3);
    let report = evaluate(&RandomStub, &index, EVAL_SHAPE, 500, 17).unwrap();
    assert!(
        (report.mean_accuracy - 0.2).abs() <= 3.0 * report.ci95,
        "mean {} ci95 {}",
        report.mean_accuracy,
        report.ci95
    );
}

#[test]
fn evaluation_is_reproducible_from_its_arguments() {
    let index = glyphs(8, 4, 3);
    let a = evaluate(&RandomStub, &index, EVAL_SHAPE, 40, 23).unwrap();
    let b = evaluate(&RandomStub, &index, EVAL_SHAPE, 40, 23).unwrap();
    assert_eq!(
        serde_json::to_string(&a).unwrap(),
        serde_json::to_string(&b).unwrap()
    );
}

#[test]
fn confidence_interval_matches_the_normal_approximation() {
    let records: Vec<EpisodeRecord> = (0..600)
        .map(|i| EpisodeRecord {
            seed: i as u64,
            accuracy: if i % 2 == 0 { 0.6 } else { 0.4 },
            loss: 1.0,
            class_map: vec![],
        })
        .collect();
    let report = EvalReport::from_records(records);
    assert!((report.mean_accuracy - 0.5).abs() < 1e-12);
    assert!(
        (report.ci95 - 0.008).abs() < 1e-4,
        "ci95 {} should be about 1.96 * 0.1 / sqrt(600)",
        report.ci95
    );
    assert_eq!(confidence95(&[0.5]), 0.0);
    assert_eq!(EvalReport::from_records(vec![]).episodes, 0);
}
