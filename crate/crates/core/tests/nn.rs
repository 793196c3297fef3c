mod common;

use coin_core::detector::{train_detector, Detector, DetectorNet};
use coin_core::nn::checkpoint::{decode_header, MAGIC};
use coin_core::nn::{fit, Batch, DetectorHead, Encoder, EncoderConfig, ParametersExt, Sequence, TrainConfig, Trainable};
use coin_core::text::{build_vocab, SentencePair, SynthConfig, SyntheticTask};
use coin_core::CoinError;
use common::{randn, scramble, tiny_encoder_config};
use ndarray::{s, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn encoder(seed: u64) -> Encoder<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut e = Encoder::new(tiny_encoder_config(2), 12, &mut rng).unwrap();
    scramble(&mut e, 0.3, &mut rng);
    e
}

fn seq(tokens: &[usize]) -> Sequence<f64> {
    Sequence::tokens(tokens.to_vec())
}

#[test]
fn zero_offsets_are_the_identity() {
    let e = encoder(1);
    let plain = seq(&[1, 5, 6, 7, 2]);
    let zeros = Sequence {
        channel_offsets: Some(vec![0.0; 5]),
        ..plain.clone()
    };
    assert_eq!(e.encode_sequence(&plain).unwrap(), e.encode_sequence(&zeros).unwrap());
    let bumped = Sequence {
        channel_offsets: Some(vec![0.0, 0.0, 1.0, 0.0, 0.0]),
        ..plain.clone()
    };
    let diff = (e.encode_sequence(&plain).unwrap() - e.encode_sequence(&bumped).unwrap()).mapv(f64::abs).sum();
    assert!(diff > 1e-6, "a uniform channel offset must survive normalization");
}

#[test]
fn token_order_matters() {
    let e = encoder(2);
    let a = e.encode_sequence(&seq(&[1, 5, 6, 2])).unwrap();
    let b = e.encode_sequence(&seq(&[1, 6, 5, 2])).unwrap();
    // Swapped tokens do not simply swap their hidden rows.
    let swapped = ndarray::concatenate![Axis(0), a.slice(s![0..1, ..]), a.slice(s![2..3, ..]), a.slice(s![1..2, ..]), a.slice(s![3..4, ..])];
    assert!((swapped - b).mapv(f64::abs).sum() > 1e-6);
}

#[test]
fn packed_batches_match_single_sequences() {
    let e = encoder(3);
    let a = seq(&[1, 5, 6, 2]);
    let b = seq(&[1, 7, 8, 9, 10, 2]);
    let packed = e.encode(&Batch::from_sequences([&a, &b]).unwrap()).unwrap();
    let ha = e.encode_sequence(&a).unwrap();
    let hb = e.encode_sequence(&b).unwrap();
    let err_a = (&packed.slice(s![0..4, ..]) - &ha).mapv(f64::abs).sum();
    let err_b = (&packed.slice(s![4..10, ..]) - &hb).mapv(f64::abs).sum();
    assert!(err_a < 1e-12 && err_b < 1e-12);
}

#[test]
fn detector_head_is_row_local() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let head = DetectorHead::<f64>::new(8, 0.5, &mut rng);
    let h = randn(5, 8, 1.0, &mut rng);
    let (full, _) = head.forward(h.view());
    for i in 0..5 {
        let (one, _) = head.forward(h.slice(s![i..i + 1, ..]));
        assert!((one[0] - full[i]).abs() < 1e-12);
    }
}

#[test]
fn overlong_sequences_are_rejected() {
    let e = encoder(5);
    let long: Vec<usize> = vec![5; 17];
    assert!(matches!(e.encode_sequence(&seq(&long)), Err(CoinError::TooLong { .. })));
}

fn tiny_task() -> (Vec<SentencePair>, coin_core::Vocab) {
    let pairs = vec![
        SentencePair::from_strs("abxdab", "abcdab").unwrap(),
        SentencePair::from_strs("bcdxbc", "bcdabc").unwrap(),
        SentencePair::from_strs("cdabcd", "cdabcd").unwrap(),
        SentencePair::from_strs("xabcda", "dabcda").unwrap(),
    ];
    (pairs, build_vocab(&["abcdx"]))
}

fn small_config() -> EncoderConfig {
    EncoderConfig {
        d_model: 16,
        n_layers: 1,
        n_heads: 2,
        d_ffn: 32,
        max_len: 16,
        dropout: 0.0,
        init_std: 0.1,
    }
}

#[test]
fn detector_overfits_a_tiny_corpus() {
    let (pairs, vocab) = tiny_task();
    let train = TrainConfig {
        epochs: 150,
        batch_size: 4,
        lr: 1e-2,
        warmup_frac: 0.0,
        weight_decay: 0.0,
        ..TrainConfig::default()
    };
    let trained = train_detector(&pairs, &vocab, &small_config(), &train).unwrap();
    let losses = &trained.log.epoch_losses;
    assert!(losses.last().unwrap() < &(0.05 * losses[0]), "loss {} -> {}", losses[0], losses.last().unwrap());
    let decreasing = losses.windows(2).filter(|w| w[1] <= w[0]).count();
    assert!(decreasing as f64 >= 0.95 * (losses.len() - 1) as f64, "{decreasing} of {} epochs decreased", losses.len() - 1);
    for p in &pairs {
        let scores = trained.detector.score(p.source()).unwrap();
        let predicted: Vec<bool> = scores.values().iter().map(|&s| s > 0.5).collect();
        assert_eq!(predicted, p.error_mask());
    }
}

#[test]
fn zero_learning_rate_leaves_parameters_unchanged() {
    let (pairs, vocab) = tiny_task();
    let mut det = Detector::<f32>::new(vocab, small_config(), 0).unwrap();
    let before = det.net.clone();
    let examples: Vec<_> = pairs.iter().map(|p| det.example(p).unwrap()).collect();
    let cfg = TrainConfig {
        epochs: 3,
        lr: 0.0,
        ..TrainConfig::default()
    };
    fit(&mut det.net, &examples, &cfg, |_, _| {}).unwrap();
    assert_eq!(det.net, before);
}

#[test]
fn training_is_bitwise_deterministic() {
    let cfg = SynthConfig {
        n_train: 64,
        n_dev: 4,
        n_test: 4,
        ..SynthConfig::default()
    };
    let task = SyntheticTask::generate(&cfg, 3).unwrap();
    let vocab = build_vocab(&[task.language.symbols().iter().collect::<String>()]);
    let mut enc = small_config();
    enc.max_len = 24;
    enc.dropout = 0.1;
    let train = TrainConfig {
        epochs: 2,
        batch_size: 16,
        seed: 7,
        ..TrainConfig::default()
    };
    let a = train_detector(&task.train, &vocab, &enc, &train).unwrap();
    let b = train_detector(&task.train, &vocab, &enc, &train).unwrap();
    assert_eq!(a.detector.net.flatten(), b.detector.net.flatten());
    assert_eq!(a.log, b.log);
}

#[test]
fn non_finite_loss_aborts_training() {
    let (pairs, vocab) = tiny_task();
    let mut net = DetectorNet::<f32>::new(small_config(), vocab.len(), 0).unwrap();
    net.head.out.bias[0] = f32::NAN;
    let det = Detector { vocab, net };
    let examples: Vec<_> = pairs.iter().map(|p| det.example(p).unwrap()).collect();
    let mut net = det.net.clone();
    let err = fit(&mut net, &examples, &TrainConfig::default(), |_, _| {}).unwrap_err();
    assert!(matches!(err, CoinError::NonFiniteLoss { step: 0, .. }));
}

#[test]
fn checkpoint_round_trip_through_a_file() {
    let (_, vocab) = tiny_task();
    let det = Detector::<f32>::new(vocab, small_config(), 9).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("det.ckpt");
    det.save(&path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(&bytes[..8], MAGIC);
    let (header, _) = decode_header(&bytes).unwrap();
    assert_eq!(header.kind, "detector");
    assert_eq!(header.dtype, "f32");
    assert_eq!(Detector::<f32>::load(&path).unwrap(), det);

    // Loading into a wider float type keeps every value.
    let wide = Detector::<f64>::load(&path).unwrap();
    let narrow: Vec<f64> = det.net.flatten().iter().map(|&v| v as f64).collect();
    assert_eq!(wide.net.flatten(), narrow);

    let mut corrupt = bytes.clone();
    corrupt[0] = b'X';
    assert!(matches!(Detector::<f32>::from_bytes(&corrupt), Err(CoinError::Checkpoint(_))));
    assert!(Detector::<f32>::from_bytes(&bytes[..bytes.len() - 4]).is_err());
}

#[test]
fn batch_loss_is_a_mean_over_positions() {
    let (pairs, vocab) = tiny_task();
    let det = Detector::<f64>::new(vocab, small_config(), 1).unwrap();
    let examples: Vec<_> = pairs.iter().map(|p| det.example(p).unwrap()).collect();
    let refs: Vec<_> = examples.iter().collect();
    let whole = det.net.batch_loss(&refs, None, None).unwrap();
    let parts: f64 = refs.iter().map(|e| det.net.batch_loss(&[*e], None, None).unwrap()).sum::<f64>() / refs.len() as f64;
    // Every sentence has the same length, so the two means agree.
    assert!((whole - parts).abs() < 1e-12);
}
