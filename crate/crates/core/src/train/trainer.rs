//! Alternating optimization of segmentor and critic.
//!
//! Epochs `0..pretrain_epochs` take one segmentor step per minibatch on the
//! pixel loss. Later epochs take `s_steps_per_d_step` segmentor steps on the
//! full segmentor objective followed by one critic step, all on the same
//! minibatch. FCN-only runs follow the same schedule without a critic.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::ImageSample;
use crate::error::{Result, ScanError};
use crate::model::checkpoint::{self, read_u64, write_atomic, write_u64};
use crate::model::{CriticNetwork, Network, SegmentorNetwork};
use crate::ops::NormMode;
use crate::optim::AdamState;
use crate::tensor::Tensor;

use super::config::{TrainConfig, TrainMode};
use super::log::{LogRecord, Phase, TrainLog};
use super::objective::{critic_objective, segmentor_objective};

const STATE_MAGIC: &[u8; 8] = b"SCANOPTM";
const STATE_VERSION: u32 = 1;
pub const LOG_FILE: &str = "train_log.jsonl";
pub const CHECKPOINT_DIR: &str = "checkpoints";

/// Summary returned when a run stops normally.
#[derive(Clone, Debug, PartialEq)]
pub struct RunOutcome {
    pub epochs_completed: usize,
    pub steps: u64,
    /// Per-sample pixel loss averaged over the last completed epoch.
    pub last_epoch_pixel: Option<f64>,
}

/// Sample order for one epoch; depends only on the seed and epoch index.
pub fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

pub fn segmentor_checkpoint(dir: &Path, epoch: usize) -> PathBuf {
    dir.join(CHECKPOINT_DIR).join(format!("segmentor_e{epoch:04}.ckpt"))
}

pub fn critic_checkpoint(dir: &Path, epoch: usize) -> PathBuf {
    dir.join(CHECKPOINT_DIR).join(format!("critic_e{epoch:04}.ckpt"))
}

fn state_path(dir: &Path, epoch: usize) -> PathBuf {
    dir.join(CHECKPOINT_DIR).join(format!("trainer_e{epoch:04}.state"))
}

/// Epoch of the newest complete checkpoint in a session directory.
pub fn latest_checkpoint(dir: &Path) -> Result<Option<usize>> {
    let ckdir = dir.join(CHECKPOINT_DIR);
    if !ckdir.is_dir() {
        return Ok(None);
    }
    let mut best = None;
    for entry in std::fs::read_dir(&ckdir).map_err(|e| ScanError::io(&ckdir, e))? {
        let name = entry.map_err(|e| ScanError::io(&ckdir, e))?.file_name();
        let name = name.to_string_lossy();
        let epoch = name
            .strip_prefix("trainer_e")
            .and_then(|s| s.strip_suffix(".state"))
            .and_then(|s| s.parse::<usize>().ok());
        if let Some(e) = epoch {
            best = best.max(Some(e));
        }
    }
    Ok(best)
}

pub struct Trainer {
    config: TrainConfig,
    segmentor: SegmentorNetwork,
    critic: Option<CriticNetwork>,
    s_opt: AdamState,
    d_opt: Option<AdamState>,
    epoch: usize,
    step: u64,
    log: TrainLog,
    session: Option<PathBuf>,
}

fn adam_for(net: &Network, config: &TrainConfig) -> AdamState {
    AdamState::new(net.params().iter().map(|p| p.shape()), config.adam)
}

impl Trainer {
    /// Fresh networks seeded from the config.
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let segmentor = SegmentorNetwork::build(config.seed);
        let critic = (config.mode == TrainMode::Scan)
            .then(|| CriticNetwork::build(config.critic_seed(), config.critic_sees_image));
        Self::from_parts(config, segmentor, critic)
    }

    pub fn from_parts(config: TrainConfig, segmentor: SegmentorNetwork, critic: Option<CriticNetwork>) -> Result<Self> {
        config.validate()?;
        match (config.mode, &critic) {
            (TrainMode::FcnOnly, Some(_)) => {
                return Err(ScanError::Config("fcn_only runs take no critic".into()));
            }
            (TrainMode::Scan, None) => return Err(ScanError::Config("scan runs need a critic".into())),
            (_, Some(c)) if c.includes_image() != config.critic_sees_image => {
                return Err(ScanError::Config(format!(
                    "critic takes {} input channels but critic_sees_image = {}",
                    c.input_channels(),
                    config.critic_sees_image
                )));
            }
            _ => {}
        }
        let s_opt = adam_for(&segmentor.net, &config);
        let d_opt = critic.as_ref().map(|c| adam_for(&c.net, &config));
        Ok(Self { config, segmentor, critic, s_opt, d_opt, epoch: 0, step: 0, log: TrainLog::new(), session: None })
    }

    /// Persists the log and checkpoints under `dir`, starting from scratch.
    pub fn with_session(mut self, dir: &Path) -> Result<Self> {
        let ckdir = dir.join(CHECKPOINT_DIR);
        std::fs::create_dir_all(&ckdir).map_err(|e| ScanError::io(&ckdir, e))?;
        let mut log = TrainLog::create(&dir.join(LOG_FILE))?;
        for r in self.log.records() {
            log.push(r.clone())?;
        }
        self.log = log;
        self.session = Some(dir.to_path_buf());
        Ok(self)
    }

    /// Continues the session in `dir` from its newest checkpoint, or starts
    /// it when there is none.
    pub fn resume(config: TrainConfig, dir: &Path) -> Result<Self> {
        let Some(epoch) = latest_checkpoint(dir)? else {
            return Self::new(config)?.with_session(dir);
        };
        let mut t = Self::new(config)?;
        checkpoint::load_into(&mut t.segmentor.net, &segmentor_checkpoint(dir, epoch))?;
        if let Some(c) = &mut t.critic {
            checkpoint::load_into(&mut c.net, &critic_checkpoint(dir, epoch))?;
        }
        t.read_state(&state_path(dir, epoch))?;
        if t.epoch != epoch {
            return Err(ScanError::format(state_path(dir, epoch), format!("records epoch {}", t.epoch)));
        }
        t.log = TrainLog::resume(&dir.join(LOG_FILE), t.step)?;
        t.session = Some(dir.to_path_buf());
        log::info!("resumed {} at epoch {epoch}, step {}", dir.display(), t.step);
        Ok(t)
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn segmentor(&self) -> &SegmentorNetwork {
        &self.segmentor
    }

    pub fn critic(&self) -> Option<&CriticNetwork> {
        self.critic.as_ref()
    }

    /// Completed epochs.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    /// Applied optimizer steps, both players.
    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn log(&self) -> &TrainLog {
        &self.log
    }

    pub fn into_parts(self) -> (SegmentorNetwork, Option<CriticNetwork>, TrainLog) {
        (self.segmentor, self.critic, self.log)
    }

    /// Marks the first `epochs` as done without training them.
    pub fn skip_to_epoch(&mut self, epochs: usize) {
        self.epoch = epochs;
    }

    pub fn run(&mut self, data: &[ImageSample]) -> Result<RunOutcome> {
        self.run_until(data, self.config.epochs)
    }

    /// Trains until `stop` epochs are complete (capped at the configured total).
    pub fn run_until(&mut self, data: &[ImageSample], stop: usize) -> Result<RunOutcome> {
        if data.is_empty() {
            return Err(ScanError::Config("training set is empty".into()));
        }
        for s in data {
            s.validate()?;
        }
        let stop = stop.min(self.config.epochs);
        while self.epoch < stop {
            let e = self.epoch;
            self.run_epoch(data, e)?;
            self.epoch = e + 1;
            if self.epoch % self.config.checkpoint_every == 0 || self.epoch == self.config.epochs {
                self.save_checkpoint()?;
            }
        }
        self.log.flush()?;
        Ok(RunOutcome {
            epochs_completed: self.epoch,
            steps: self.step,
            last_epoch_pixel: self.epoch.checked_sub(1).and_then(|e| self.log.epoch_mean_pixel(e)),
        })
    }

    fn run_epoch(&mut self, data: &[ImageSample], epoch: usize) -> Result<()> {
        let order = epoch_order(self.config.seed, epoch, data.len());
        self.log.push(LogRecord::Epoch { epoch, order: order.clone() })?;
        let pretraining = epoch < self.config.pretrain_epochs;
        for chunk in order.chunks(self.config.batch_size) {
            let batch: Vec<&ImageSample> = chunk.iter().map(|&i| &data[i]).collect();
            if pretraining {
                self.segmentor_step(&batch, epoch, Phase::Pretrain)?;
                continue;
            }
            for _ in 0..self.config.s_steps_per_d_step {
                self.segmentor_step(&batch, epoch, Phase::Segmentor)?;
            }
            if self.critic.is_some() {
                self.critic_step(&batch, epoch)?;
            }
        }
        log::debug!("epoch {epoch} done, step {}", self.step);
        Ok(())
    }

    fn halt(&mut self, epoch: usize, err: ScanError) -> ScanError {
        let message = err.to_string();
        log::error!("halting at step {}: {message}", self.step + 1);
        let _ = self.log.push(LogRecord::Diagnostic { step: self.step + 1, epoch, message });
        let _ = self.log.flush();
        err
    }

    fn segmentor_step(&mut self, batch: &[&ImageSample], epoch: usize, phase: Phase) -> Result<()> {
        let t0 = Instant::now();
        let lambda = if phase == Phase::Pretrain { 0.0 } else { self.config.effective_lambda() };
        let pass = segmentor_objective(&self.segmentor, self.critic.as_ref(), batch, lambda, NormMode::Train, true)?;
        if !pass.value.is_finite() {
            let what = if pass.pixel.is_finite() { "adversarial loss" } else { "pixel loss" };
            let err = ScanError::NonFiniteLoss { what: what.into(), step: self.step + 1, epoch };
            return Err(self.halt(epoch, err));
        }
        let grads = pass.grads.ok_or_else(|| ScanError::shape("segmentor objective returned no gradients"))?;
        let net = &mut self.segmentor.net;
        net.set_grads(grads)?;
        let names = net.param_names();
        let res = self.s_opt.step(&mut net.params_mut(), &names, self.config.lr, self.config.clip_norm);
        net.clear_grads();
        if let Err(e) = res {
            return Err(self.halt(epoch, e));
        }
        self.segmentor.net.absorb_running_stats(&pass.trace);
        self.step += 1;
        let adversarial = (lambda > 0.0).then_some(pass.adversarial);
        self.log.push(LogRecord::Step {
            step: self.step,
            epoch,
            phase,
            pixel: Some(pass.pixel),
            adversarial,
            critic: None,
            real_score: None,
            fake_score: None,
            batch: batch.len(),
            wall_ms: t0.elapsed().as_secs_f64() * 1e3,
        })
    }

    fn critic_step(&mut self, batch: &[&ImageSample], epoch: usize) -> Result<()> {
        let t0 = Instant::now();
        let (Some(critic), Some(opt)) = (self.critic.as_mut(), self.d_opt.as_mut()) else {
            return Ok(());
        };
        let pass = critic_objective(&self.segmentor, critic, batch, NormMode::Train, NormMode::Train, true)?;
        if !pass.value.is_finite() {
            let err = ScanError::NonFiniteLoss { what: "critic loss".into(), step: self.step + 1, epoch };
            return Err(self.halt(epoch, err));
        }
        let grads = pass.grads.ok_or_else(|| ScanError::shape("critic objective returned no gradients"))?;
        critic.net.set_grads(grads)?;
        let names = critic.net.param_names();
        let res = opt.step(&mut critic.net.params_mut(), &names, self.config.lr, self.config.clip_norm);
        critic.net.clear_grads();
        if let Err(e) = res {
            return Err(self.halt(epoch, e));
        }
        critic.net.absorb_running_stats(&pass.trace);
        self.step += 1;
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        self.log.push(LogRecord::Step {
            step: self.step,
            epoch,
            phase: Phase::Critic,
            pixel: None,
            adversarial: None,
            critic: Some(pass.value),
            real_score: Some(mean(&pass.real_scores)),
            fake_score: Some(mean(&pass.fake_scores)),
            batch: batch.len(),
            wall_ms: t0.elapsed().as_secs_f64() * 1e3,
        })
    }

    /// Writes networks, optimizer state and the log position for the
    /// current epoch. The state file goes last and marks completeness.
    pub fn save_checkpoint(&mut self) -> Result<()> {
        let Some(dir) = self.session.clone() else { return Ok(()) };
        self.log.flush()?;
        checkpoint::save_network(&self.segmentor.net, &segmentor_checkpoint(&dir, self.epoch))?;
        if let Some(c) = &self.critic {
            checkpoint::save_network(&c.net, &critic_checkpoint(&dir, self.epoch))?;
        }
        let path = state_path(&dir, self.epoch);
        let (epoch, step) = (self.epoch as u64, self.step);
        let (s_opt, d_opt) = (&self.s_opt, &self.d_opt);
        write_atomic(&path, |w| {
            w.write_all(STATE_MAGIC)?;
            w.write_all(&STATE_VERSION.to_le_bytes())?;
            write_u64(w, epoch)?;
            write_u64(w, step)?;
            write_adam(w, s_opt)?;
            match d_opt {
                Some(d) => {
                    w.write_all(&[1])?;
                    write_adam(w, d)
                }
                None => w.write_all(&[0]),
            }
        })?;
        log::info!("checkpoint at epoch {}", self.epoch);
        Ok(())
    }

    fn read_state(&mut self, path: &Path) -> Result<()> {
        let bad = |r: String| ScanError::format(path, r);
        let f = std::fs::File::open(path).map_err(|e| ScanError::io(path, e))?;
        let mut r = std::io::BufReader::new(f);
        let mut head = [0u8; 12];
        r.read_exact(&mut head).map_err(|e| bad(e.to_string()))?;
        if &head[..8] != STATE_MAGIC {
            return Err(bad("not a trainer state file".into()));
        }
        let version = u32::from_le_bytes(head[8..].try_into().unwrap());
        if version != STATE_VERSION {
            return Err(bad(format!("state version {version}, expected {STATE_VERSION}")));
        }
        let io = |e: std::io::Error| ScanError::format(path, e.to_string());
        self.epoch = read_u64(&mut r).map_err(io)? as usize;
        self.step = read_u64(&mut r).map_err(io)?;
        read_adam(&mut r, &mut self.s_opt, path)?;
        let mut flag = [0u8];
        r.read_exact(&mut flag).map_err(io)?;
        match (flag[0], self.d_opt.as_mut()) {
            (1, Some(d)) => read_adam(&mut r, d, path),
            (0, None) => Ok(()),
            _ => Err(bad("critic optimizer state does not match the run mode".into())),
        }
    }
}

fn write_adam<W: Write>(w: &mut W, s: &AdamState) -> std::io::Result<()> {
    write_u64(w, s.t)?;
    write_u64(w, s.m.len() as u64)?;
    for t in s.m.iter().chain(&s.v) {
        t.write_dump(&mut *w)?;
    }
    Ok(())
}

fn read_adam<R: Read>(r: &mut R, s: &mut AdamState, path: &Path) -> Result<()> {
    let io = |e: std::io::Error| ScanError::format(path, e.to_string());
    s.t = read_u64(r).map_err(io)?;
    let n = read_u64(r).map_err(io)? as usize;
    if n != s.m.len() {
        return Err(ScanError::format(path, format!("{n} moment tensors, expected {}", s.m.len())));
    }
    for slot in s.m.iter_mut().chain(s.v.iter_mut()) {
        let t = Tensor::read_dump(&mut *r).map_err(io)?;
        if t.shape() != slot.shape() {
            return Err(ScanError::format(path, format!("moment shape {:?} vs {:?}", t.shape(), slot.shape())));
        }
        *slot = t;
    }
    Ok(())
}

/// Pixel-loss pretraining for `config.pretrain_epochs` epochs.
pub fn pretrain(
    segmentor: SegmentorNetwork,
    data: &[ImageSample],
    config: &TrainConfig,
) -> Result<(SegmentorNetwork, TrainLog)> {
    let cfg = TrainConfig { mode: TrainMode::FcnOnly, epochs: config.pretrain_epochs, ..config.clone() };
    let mut t = Trainer::from_parts(cfg, segmentor, None)?;
    t.run(data)?;
    let (s, _, log) = t.into_parts();
    Ok((s, log))
}

/// Alternating training for the epochs after pretraining.
pub fn train_scan(
    segmentor: SegmentorNetwork,
    critic: CriticNetwork,
    data: &[ImageSample],
    config: &TrainConfig,
) -> Result<(SegmentorNetwork, CriticNetwork, TrainLog)> {
    let cfg = TrainConfig { mode: TrainMode::Scan, ..config.clone() };
    let mut t = Trainer::from_parts(cfg, segmentor, Some(critic))?;
    t.skip_to_epoch(config.pretrain_epochs);
    t.run(data)?;
    let (s, d, log) = t.into_parts();
    Ok((s, d.expect("scan trainer holds a critic"), log))
}
