//! Alternating adversarial training, detector training and synthesis.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{load_generator, sha256_hex};
use crate::data::{load_dataset, write_dataset, PairedStudy};
use crate::grid::{check_side, ImageGrid, LabelMap, PetImage};
use crate::imageio::{dequantize, quantize};
use crate::losses::{mgan_d_loss_backward, mgan_g_loss_grad, softplus, sigmoid, GLoss, LossConfig};
use crate::networks::{
    from_net, to_net, ChannelMode, Detector, Discriminator, DiscriminatorSpec, Generator, Phase,
};
use crate::nn::{Adam, Parameterized, Tensor};
use crate::phantom::stream_seed;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub seed: u64,
    /// Conditioning of the generator; experiments override it per arm.
    pub channel_mode: ChannelMode,
    pub d_steps_per_g_step: usize,
    pub generator_width: usize,
    pub discriminator_width: usize,
    pub detector_width: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 1,
            learning_rate: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            seed: 0,
            channel_mode: ChannelMode::Multi,
            d_steps_per_g_step: 1,
            generator_width: 32,
            discriminator_width: 32,
            detector_width: 16,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Validation(m));
        if self.epochs < 1 {
            return bad("train.epochs must be >= 1".into());
        }
        if self.batch_size < 1 {
            return bad("train.batch_size must be >= 1".into());
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad(format!("train.learning_rate must be > 0, got {}", self.learning_rate));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("train.{name} must lie in [0, 1), got {b}"));
            }
        }
        if self.d_steps_per_g_step < 1 {
            return bad("train.d_steps_per_g_step must be >= 1".into());
        }
        if self.generator_width < 1 || self.discriminator_width < 1 || self.detector_width < 1 {
            return bad("network widths must be >= 1".into());
        }
        Ok(())
    }

    fn optimizer(&self) -> Adam<f32> {
        Adam::new(self.learning_rate, self.beta1, self.beta2)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub d_loss: f64,
    pub g_adv: f64,
    pub g_l1: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
    pub d_updates: usize,
    pub g_updates: usize,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,d_loss,g_adv,g_l1,seconds\n");
        for r in &self.records {
            out.push_str(&format!(
                "{},{:.9},{:.9},{:.9},{:.3}\n",
                r.epoch, r.d_loss, r.g_adv, r.g_l1, r.seconds
            ));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    /// Hash of every loss value, bit for bit; wall times are left out.
    pub fn loss_fingerprint(&self) -> String {
        let mut bytes = Vec::new();
        for r in &self.records {
            bytes.extend_from_slice(&(r.epoch as u64).to_le_bytes());
            for v in [r.d_loss, r.g_adv, r.g_l1] {
                bytes.extend_from_slice(&v.to_bits().to_le_bytes());
            }
        }
        bytes.extend_from_slice(&(self.d_updates as u64).to_le_bytes());
        bytes.extend_from_slice(&(self.g_updates as u64).to_le_bytes());
        sha256_hex(&bytes)
    }

    pub fn all_finite(&self) -> bool {
        self.records
            .iter()
            .all(|r| r.d_loss.is_finite() && r.g_adv.is_finite() && r.g_l1.is_finite())
    }
}

/// Side length shared by all studies.
fn common_size(mut studies: impl Iterator<Item = (usize, usize)>) -> Result<usize> {
    let (h, w) = studies
        .next()
        .ok_or_else(|| Error::Precondition("training set is empty".into()))?;
    if h != w {
        return Err(Error::Precondition(format!("images must be square, got {h}x{w}")));
    }
    check_side(h)?;
    if let Some(other) = studies.find(|&d| d != (h, w)) {
        return Err(Error::Precondition(format!(
            "mixed image sizes: {h}x{w} and {}x{}",
            other.0, other.1
        )));
    }
    Ok(h)
}

fn grid_to_net(g: &ImageGrid) -> Vec<f32> {
    g.values().iter().map(|&v| to_net(v)).collect()
}

fn stack(samples: &[&[f32]], channels: usize, size: usize) -> Tensor<f32> {
    let data = samples.iter().flat_map(|s| s.iter().copied()).collect();
    Tensor::from_vec([samples.len(), channels, size, size], data)
}

fn non_finite(epoch: usize, batch: usize, what: &str) -> Error {
    Error::NonFinite {
        epoch,
        batch,
        what: what.to_string(),
    }
}

/// Output of one GAN training run.
pub struct GanRun {
    pub generator: Generator<f32>,
    pub discriminator: Discriminator<f32>,
    pub log: TrainLog,
}

/// Per-epoch progress hook.
pub type Observer<'a> = &'a mut dyn FnMut(&EpochRecord);

pub fn train_gan(studies: &[PairedStudy], cfg: &TrainConfig, loss: &LossConfig) -> Result<GanRun> {
    train_gan_observed(studies, cfg, loss, &mut |_| {})
}

/// Alternating updates: per batch, `d_steps_per_g_step` discriminator steps on the
/// detached synthetic batch, then one generator step through the updated discriminator.
pub fn train_gan_observed(
    studies: &[PairedStudy],
    cfg: &TrainConfig,
    loss: &LossConfig,
    observer: Observer<'_>,
) -> Result<GanRun> {
    cfg.validate()?;
    loss.validate()?;
    let size = common_size(studies.iter().map(|s| s.dims()))?;
    let mode = cfg.channel_mode;
    let mut g = Generator::<f32>::new(mode, size, cfg.generator_width, stream_seed(cfg.seed, &[b"generator"]))?;
    let mut d = Discriminator::<f32>::new(
        DiscriminatorSpec {
            mode,
            image_size: size,
            base_width: cfg.discriminator_width,
        },
        stream_seed(cfg.seed, &[b"discriminator"]),
    )?;
    let mut opt_g = cfg.optimizer();
    let mut opt_d = cfg.optimizer();
    let mut order_rng = ChaCha8Rng::seed_from_u64(stream_seed(cfg.seed, &[b"gan-order"]));
    let mut drop_rng = ChaCha8Rng::seed_from_u64(stream_seed(cfg.seed, &[b"dropout"]));

    let conds: Vec<Vec<f32>> = studies.iter().map(|s| mode.conditioning(&s.label, &s.ct)).collect();
    let reals: Vec<Vec<f32>> = studies.iter().map(|s| grid_to_net(s.pet.grid())).collect();
    let mut log = TrainLog::default();
    let mut order: Vec<usize> = (0..studies.len()).collect();

    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        order.shuffle(&mut order_rng);
        let (mut d_sum, mut adv_sum, mut l1_sum) = (0.0, 0.0, 0.0);
        let (mut d_count, mut g_count) = (0usize, 0usize);
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch = b + 1;
            let cond = stack(
                &chunk.iter().map(|&i| conds[i].as_slice()).collect::<Vec<_>>(),
                mode.in_channels(),
                size,
            );
            let real = stack(&chunk.iter().map(|&i| reals[i].as_slice()).collect::<Vec<_>>(), 1, size);
            let (fake, g_cache) = g.net.forward(&cond, Phase::Train(&mut drop_rng));
            if fake.data().iter().any(|v| !v.is_finite()) {
                return Err(non_finite(epoch, batch, "generator output"));
            }

            for _ in 0..cfg.d_steps_per_g_step {
                d.zero_grad();
                let dl = mgan_d_loss_backward(&mut d, &cond, &real, &fake)?;
                if !dl.is_finite() {
                    return Err(non_finite(epoch, batch, "discriminator loss"));
                }
                opt_d.step(d.params_mut());
                d_sum += dl;
                d_count += 1;
                log.d_updates += 1;
            }

            g.zero_grad();
            let (gl, grad): (GLoss, _) = mgan_g_loss_grad(&mut d, &cond, &fake, &real, loss)?;
            if !(gl.total.is_finite() && gl.adv.is_finite() && gl.l1.is_finite()) {
                return Err(non_finite(epoch, batch, "generator loss"));
            }
            g.net.backward(g_cache, &grad, false);
            opt_g.step(g.params_mut());
            adv_sum += gl.adv;
            l1_sum += gl.l1;
            g_count += 1;
            log.g_updates += 1;
        }
        let record = EpochRecord {
            epoch,
            d_loss: d_sum / d_count as f64,
            g_adv: adv_sum / g_count as f64,
            g_l1: l1_sum / g_count as f64,
            seconds: start.elapsed().as_secs_f64(),
        };
        observer(&record);
        log.records.push(record);
    }
    Ok(GanRun {
        generator: g,
        discriminator: d,
        log,
    })
}

/// Synthetic PET for each study, paired with the study's own label and CT.
///
/// Inference runs without dropout, one study at a time, and outputs are
/// snapped to the 16-bit storage grid so the in-memory result equals what a
/// reload from disk produces.
pub fn synthesize(g: &Generator<f32>, mode: ChannelMode, studies: &[PairedStudy]) -> Result<Vec<PairedStudy>> {
    if g.mode != mode {
        return Err(Error::Contract(format!(
            "generator was trained for {} but {} was requested",
            g.mode, mode
        )));
    }
    studies
        .iter()
        .map(|s| {
            let (h, w) = s.dims();
            let cond = Tensor::from_vec([1, mode.in_channels(), h, w], mode.conditioning(&s.label, &s.ct));
            g.net.check_input(&cond).map_err(|e| {
                e.context(format!("study ({}, {})", s.patient_id, s.slice_index))
            })?;
            let out = g.net.forward(&cond, Phase::Infer).0;
            let values = out
                .data()
                .iter()
                .map(|&v| dequantize(quantize(from_net(v))))
                .collect();
            let pet = PetImage::new(ImageGrid::unit(h, w, values)?, s.pet.suv_scale())?;
            PairedStudy::new(s.patient_id.clone(), s.slice_index, s.label.clone(), s.ct.clone(), pet)
        })
        .collect()
}

/// Loads a generator checkpoint, synthesizes every study of `manifest`, and writes a new corpus.
pub fn synthesize_to_dir(
    checkpoint: &Path,
    mode: ChannelMode,
    manifest: &Path,
    out_dir: &Path,
) -> Result<PathBuf> {
    let (g, meta) = load_generator(checkpoint)?;
    if meta.channel_mode != Some(mode) {
        return Err(Error::Contract(format!(
            "checkpoint {} holds a {:?} generator, not {mode}",
            checkpoint.display(),
            meta.channel_mode
        )));
    }
    let ds = load_dataset(manifest)?;
    let synth = synthesize(&g, mode, ds.studies())?;
    write_dataset(&synth, out_dir)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectorEpoch {
    pub epoch: usize,
    pub bce: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DetectorLog {
    pub records: Vec<DetectorEpoch>,
    pub updates: usize,
}

/// Mean per-pixel binary cross-entropy of logits against a 0/1 target.
pub fn bce_with_logits(logits: &[f32], target: &[f32]) -> f64 {
    let sum: f64 = logits
        .iter()
        .zip(target)
        .map(|(&z, &y)| softplus(z as f64) - y as f64 * z as f64)
        .sum();
    sum / logits.len() as f64
}

pub struct DetectorRun {
    pub detector: Detector<f32>,
    pub log: DetectorLog,
}

/// Fits the detector to `(PET, label)` pairs by per-pixel cross-entropy.
pub fn train_detector(pairs: &[(PetImage, LabelMap)], cfg: &TrainConfig) -> Result<DetectorRun> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(Error::Precondition("detector training set is empty".into()));
    }
    let size = common_size(pairs.iter().map(|(p, l)| {
        if p.grid().dims() != l.grid().dims() {
            (0, 1)
        } else {
            p.grid().dims()
        }
    }))?;
    let mut f = Detector::<f32>::new(size, cfg.detector_width, stream_seed(cfg.seed, &[b"detector"]))?;
    let mut opt = cfg.optimizer();
    let mut order_rng = ChaCha8Rng::seed_from_u64(stream_seed(cfg.seed, &[b"detector-order"]));
    let inputs: Vec<Vec<f32>> = pairs.iter().map(|(p, _)| grid_to_net(p.grid())).collect();
    let targets: Vec<&[f32]> = pairs.iter().map(|(_, l)| l.grid().values()).collect();
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut log = DetectorLog::default();
    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        order.shuffle(&mut order_rng);
        let mut sum = 0.0;
        let mut batches = 0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let x = stack(&chunk.iter().map(|&i| inputs[i].as_slice()).collect::<Vec<_>>(), 1, size);
            let y: Vec<f32> = chunk.iter().flat_map(|&i| targets[i].iter().copied()).collect();
            f.zero_grad();
            let (logits, cache) = f.net.forward(&x, Phase::Infer);
            let loss = bce_with_logits(logits.data(), &y);
            if !loss.is_finite() {
                return Err(non_finite(epoch, b + 1, "detector loss"));
            }
            let n = logits.len() as f64;
            let grad = Tensor::from_vec(
                logits.shape(),
                logits
                    .data()
                    .iter()
                    .zip(&y)
                    .map(|(&z, &t)| ((sigmoid(z as f64) - t as f64) / n) as f32)
                    .collect(),
            );
            f.net.backward(cache, &grad, false);
            opt.step(f.params_mut());
            sum += loss;
            batches += 1;
            log.updates += 1;
        }
        log.records.push(DetectorEpoch {
            epoch,
            bce: sum / batches as f64,
            seconds: start.elapsed().as_secs_f64(),
        });
    }
    Ok(DetectorRun { detector: f, log })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{generate_dataset, PhantomConfig};

    fn tiny_cfg() -> TrainConfig {
        TrainConfig {
            epochs: 1,
            generator_width: 4,
            discriminator_width: 4,
            detector_width: 4,
            seed: 3,
            ..TrainConfig::default()
        }
    }

    fn tiny_studies(n: usize) -> Vec<PairedStudy> {
        let cfg = PhantomConfig {
            image_size: 32,
            tumor_radius: (2.0, 3.0),
            ..PhantomConfig::default()
        };
        generate_dataset(&cfg, n.max(2), 1).unwrap().into_studies().into_iter().take(n).collect()
    }

    #[test]
    fn one_study_one_epoch_counts_updates() {
        let studies = tiny_studies(1);
        let run = train_gan(&studies, &tiny_cfg(), &LossConfig::default()).unwrap();
        assert_eq!(run.log.d_updates, 1);
        assert_eq!(run.log.g_updates, 1);
        assert_eq!(run.log.records.len(), 1);
        assert!(run.log.all_finite());
    }

    #[test]
    fn d_steps_multiply_discriminator_updates() {
        let studies = tiny_studies(3);
        let cfg = TrainConfig {
            d_steps_per_g_step: 2,
            batch_size: 2,
            epochs: 2,
            ..tiny_cfg()
        };
        let run = train_gan(&studies, &cfg, &LossConfig::default()).unwrap();
        assert_eq!(run.log.g_updates, 4);
        assert_eq!(run.log.d_updates, 8);
        let epochs: Vec<_> = run.log.records.iter().map(|r| r.epoch).collect();
        assert_eq!(epochs, vec![1, 2]);
    }

    #[test]
    fn training_is_deterministic() {
        let studies = tiny_studies(2);
        let a = train_gan(&studies, &tiny_cfg(), &LossConfig::default()).unwrap();
        let b = train_gan(&studies, &tiny_cfg(), &LossConfig::default()).unwrap();
        assert_eq!(a.log.loss_fingerprint(), b.log.loss_fingerprint());
        assert_eq!(a.generator.params(), b.generator.params());
        assert_eq!(a.discriminator.params(), b.discriminator.params());
    }

    #[test]
    fn empty_and_invalid_inputs_are_rejected() {
        assert!(matches!(
            train_gan(&[], &tiny_cfg(), &LossConfig::default()),
            Err(Error::Precondition(_))
        ));
        let bad = TrainConfig {
            learning_rate: 0.0,
            ..tiny_cfg()
        };
        assert!(train_gan(&tiny_studies(1), &bad, &LossConfig::default()).is_err());
        assert!(matches!(train_detector(&[], &tiny_cfg()), Err(Error::Precondition(_))));
    }

    #[test]
    fn huge_learning_rate_reports_epoch_and_batch() {
        let cfg = TrainConfig {
            learning_rate: 1e30,
            epochs: 3,
            ..tiny_cfg()
        };
        match train_gan(&tiny_studies(2), &cfg, &LossConfig::default()) {
            Err(Error::NonFinite { epoch, batch, .. }) => assert!(epoch >= 1 && batch >= 1),
            Err(other) => panic!("unexpected error {other}"),
            Ok(_) => panic!("training should have diverged"),
        }
    }

    #[test]
    fn synthesis_is_deterministic_and_keeps_labels() {
        let studies = tiny_studies(2);
        let run = train_gan(&studies, &tiny_cfg(), &LossConfig::default()).unwrap();
        let a = synthesize(&run.generator, ChannelMode::Multi, &studies).unwrap();
        let b = synthesize(&run.generator, ChannelMode::Multi, &studies).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), studies.len());
        for (s, o) in a.iter().zip(&studies) {
            assert_eq!(s.label, o.label);
            assert!(s.pet.grid().values().iter().all(|v| (0.0..=1.0).contains(v)));
        }
        assert!(synthesize(&run.generator, ChannelMode::Label, &studies).is_err());
    }

    #[test]
    fn bce_matches_direct_formula() {
        let z = [0.3f32, -2.0, 4.0];
        let y = [1.0f32, 0.0, 0.0];
        let direct: f64 = z
            .iter()
            .zip(&y)
            .map(|(&z, &y)| {
                let p = 1.0 / (1.0 + (-(z as f64)).exp());
                -(y as f64 * p.ln() + (1.0 - y as f64) * (1.0 - p).ln())
            })
            .sum::<f64>()
            / 3.0;
        assert!((bce_with_logits(&z, &y) - direct).abs() < 1e-12);
    }

    #[test]
    fn detector_training_is_deterministic() {
        let pairs: Vec<_> = tiny_studies(2).into_iter().map(|s| (s.pet, s.label)).collect();
        let a = train_detector(&pairs, &tiny_cfg()).unwrap();
        let b = train_detector(&pairs, &tiny_cfg()).unwrap();
        assert_eq!(a.detector.params(), b.detector.params());
        assert_eq!(a.log, DetectorLog { records: a.log.records.clone(), updates: 2 });
    }
}
