//! Training-loop bookkeeping: schedule, reductions, isolation between the
//! two players and halting on non-finite values.

use scan_core::data::synthetic::{geometric_samples, SyntheticConfig};
use scan_core::model::{CriticNetwork, SegmentorNetwork};
use scan_core::ops::NormMode;
use scan_core::train::log::Phase;
use scan_core::train::{critic_objective, segmentor_objective, LogRecord, TrainConfig, TrainMode, Trainer};
use scan_core::ScanError;

fn config(mode: TrainMode) -> TrainConfig {
    TrainConfig {
        mode,
        lr: 0.001,
        epochs: 3,
        pretrain_epochs: 1,
        batch_size: 3,
        checkpoint_every: 100,
        ..Default::default()
    }
}

fn data(n: usize) -> Vec<scan_core::data::ImageSample> {
    geometric_samples(n, 3, SyntheticConfig { size: 32, ..Default::default() })
}

#[test]
fn zero_lambda_matches_fcn_only_bitwise() {
    let train = data(6);
    let mut fcn = Trainer::new(config(TrainMode::FcnOnly)).unwrap();
    fcn.run(&train).unwrap();
    let mut scan = Trainer::new(TrainConfig { lambda: 0.0, ..config(TrainMode::Scan) }).unwrap();
    scan.run(&train).unwrap();

    assert_eq!(fcn.segmentor().net.state_hash(), scan.segmentor().net.state_hash());
    // the critic still trained alongside
    let fresh: CriticNetwork = CriticNetwork::build(scan.config().critic_seed(), false);
    assert_ne!(fresh.net.state_hash(), scan.critic().unwrap().net.state_hash());
}

#[test]
fn step_schedule_follows_the_ratio() {
    let train = data(7);
    let cfg = TrainConfig { s_steps_per_d_step: 4, ..config(TrainMode::Scan) };
    let mut t = Trainer::new(cfg.clone()).unwrap();
    let out = t.run(&train).unwrap();

    let batches = train.len().div_ceil(cfg.batch_size);
    let adversarial_epochs = cfg.epochs - cfg.pretrain_epochs;
    let expected = batches * cfg.pretrain_epochs + batches * adversarial_epochs * (cfg.s_steps_per_d_step + 1);
    assert_eq!(out.steps as usize, expected);

    let phases: Vec<(usize, Phase, usize)> = t
        .log()
        .records()
        .iter()
        .filter_map(|r| match r {
            LogRecord::Step { epoch, phase, batch, .. } => Some((*epoch, *phase, *batch)),
            _ => None,
        })
        .collect();
    assert!(phases.iter().filter(|p| p.0 < cfg.pretrain_epochs).all(|p| p.1 == Phase::Pretrain));
    let adversarial: Vec<Phase> = phases.iter().filter(|p| p.0 >= cfg.pretrain_epochs).map(|p| p.1).collect();
    let mut pattern = vec![Phase::Segmentor; cfg.s_steps_per_d_step];
    pattern.push(Phase::Critic);
    for group in adversarial.chunks(pattern.len()) {
        assert_eq!(group, pattern.as_slice());
    }
    // 7 samples in batches of 3: the last minibatch of every epoch has one sample
    let sizes: Vec<usize> = phases.iter().filter(|p| p.0 == 0).map(|p| p.2).collect();
    assert_eq!(sizes, [3, 3, 1]);
}

#[test]
fn fcn_only_builds_no_critic_and_logs_no_adversarial_terms() {
    let train = data(6);
    let mut t = Trainer::new(TrainConfig { lambda: 0.1, ..config(TrainMode::FcnOnly) }).unwrap();
    t.run(&train).unwrap();
    assert!(t.critic().is_none());
    for r in t.log().records() {
        if let LogRecord::Step { phase, adversarial, critic, .. } = r {
            assert_ne!(*phase, Phase::Critic);
            assert!(adversarial.is_none() && critic.is_none());
        }
    }
}

#[test]
fn each_player_only_gets_its_own_gradients() {
    let train = data(3);
    let batch: Vec<_> = train.iter().collect();
    let seg: SegmentorNetwork = SegmentorNetwork::build(0);
    let critic: CriticNetwork = CriticNetwork::build(1, false);
    let (seg_hash, critic_hash) = (seg.net.state_hash(), critic.net.state_hash());

    let s = segmentor_objective(&seg, Some(&critic), &batch, 0.5, NormMode::Train, true).unwrap();
    let sg = s.grads.unwrap();
    assert_eq!(sg.iter().map(|g| g.len()).sum::<usize>(), seg.param_count());

    let d = critic_objective(&seg, &critic, &batch, NormMode::Train, NormMode::Train, true).unwrap();
    let dg = d.grads.unwrap();
    assert_eq!(dg.iter().map(|g| g.len()).sum::<usize>(), critic.param_count());

    // evaluating either objective leaves both networks (and their running statistics) untouched
    assert_eq!(seg.net.state_hash(), seg_hash);
    assert_eq!(critic.net.state_hash(), critic_hash);
}

#[test]
fn divergence_halts_with_a_diagnostic() {
    let train = data(6);
    let dir = tempfile::tempdir().unwrap();
    let cfg = TrainConfig { lr: 1e30, epochs: 20, pretrain_epochs: 20, ..config(TrainMode::FcnOnly) };
    let mut t = Trainer::new(cfg).unwrap().with_session(dir.path()).unwrap();
    let err = t.run(&train).unwrap_err();
    assert!(matches!(err, ScanError::NonFiniteLoss { .. } | ScanError::NonFiniteGradient { .. }), "{err}");

    let last = t.log().records().last().unwrap().clone();
    let LogRecord::Diagnostic { step, message, .. } = last else { panic!("last record is {last:?}") };
    assert_eq!(step, t.step() + 1, "the failing step is not applied");
    assert!(message.contains("non-finite"), "{message}");
    let on_disk = scan_core::train::TrainLog::read(&dir.path().join("train_log.jsonl")).unwrap();
    assert!(matches!(on_disk.last(), Some(LogRecord::Diagnostic { .. })));
}
