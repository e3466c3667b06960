//! Adversarial cross-entropy objectives and the L1-augmented generator loss.
//!
//! Logits are turned into log-probabilities with `softplus`, which stays
//! finite for any finite logit: `-log sigmoid(x) = softplus(-x)` and
//! `-log(1 - sigmoid(x)) = softplus(x)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::networks::{Discriminator, Generator, Phase};
use crate::nn::{Parameterized, Scalar, Tensor};
use crate::{Error, Result};

pub const DEFAULT_LAMBDA_L1: f64 = 100.0;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdversarialForm {
    /// Sigmoid cross-entropy on logits; generator uses the non-saturating form.
    #[default]
    CrossEntropy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub lambda_l1: f64,
    pub adversarial_form: AdversarialForm,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda_l1: DEFAULT_LAMBDA_L1,
            adversarial_form: AdversarialForm::CrossEntropy,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_l1.is_finite() && self.lambda_l1 >= 0.0) {
            return Err(Error::Validation(format!(
                "loss.lambda_l1 must be finite and >= 0, got {}",
                self.lambda_l1
            )));
        }
        Ok(())
    }
}

/// Input noise of the unconditional objective, drawn from `N(0, 1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseVector(Vec<f64>);

impl NoiseVector {
    pub fn standard_normal(len: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        NoiseVector((0..len).map(|_| StandardNormal.sample(&mut rng)).collect())
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    crate::networks::sigmoid(x)
}

fn same_shape<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Contract(format!(
            "{what}: shapes {:?} and {:?} differ",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

fn mean_softplus<T: Scalar>(t: &Tensor<T>, sign: f64) -> f64 {
    let sum: f64 = t
        .data()
        .iter()
        .map(|v| softplus(sign * v.to_f64().unwrap()))
        .sum();
    sum / t.len() as f64
}

/// Gradient of `mean softplus(sign * x)` with respect to `x`.
fn mean_softplus_grad<T: Scalar>(t: &Tensor<T>, sign: f64) -> Tensor<T> {
    let n = t.len() as f64;
    t.map(|v| T::from_f64_lossy(sign * sigmoid(sign * v.to_f64().unwrap()) / n))
}

/// Discriminator and generator losses for the unconditional min-max game.
pub fn gan_loss_reference<T: Scalar>(d_real: &Tensor<T>, d_fake: &Tensor<T>) -> Result<(f64, f64)> {
    same_shape(d_real, d_fake, "discriminator logits")?;
    Ok((d_loss_from_logits(d_real, d_fake)?, mean_softplus(d_fake, -1.0)))
}

/// Cross-entropy with real logits pushed toward 1 and fake logits toward 0.
pub fn d_loss_from_logits<T: Scalar>(real: &Tensor<T>, fake: &Tensor<T>) -> Result<f64> {
    same_shape(real, fake, "discriminator logits")?;
    Ok(mean_softplus(real, -1.0) + mean_softplus(fake, 1.0))
}

fn check_pair<T: Scalar>(cond: &Tensor<T>, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    same_shape(a, b, "real and synthetic PET")?;
    if cond.batch() != a.batch() || cond.height() != a.height() || cond.width() != a.width() {
        return Err(Error::Contract(format!(
            "conditioning {:?} not aligned with PET {:?}",
            cond.shape(),
            a.shape()
        )));
    }
    Ok(())
}

/// Conditional discriminator loss; `fake_pet` is treated as a constant.
pub fn mgan_d_loss<T: Scalar>(
    d: &Discriminator<T>,
    cond: &Tensor<T>,
    real_pet: &Tensor<T>,
    fake_pet: &Tensor<T>,
) -> Result<f64> {
    check_pair(cond, real_pet, fake_pet)?;
    d.check_inputs(cond, real_pet)?;
    let real = d.forward(cond, real_pet).0;
    let fake = d.forward(cond, fake_pet).0;
    d_loss_from_logits(&real, &fake)
}

/// [`mgan_d_loss`] that also accumulates the discriminator's parameter gradients.
pub fn mgan_d_loss_backward<T: Scalar>(
    d: &mut Discriminator<T>,
    cond: &Tensor<T>,
    real_pet: &Tensor<T>,
    fake_pet: &Tensor<T>,
) -> Result<f64> {
    check_pair(cond, real_pet, fake_pet)?;
    d.check_inputs(cond, real_pet)?;
    let (real, real_cache) = d.forward(cond, real_pet);
    let (fake, fake_cache) = d.forward(cond, fake_pet);
    let loss = d_loss_from_logits(&real, &fake)?;
    d.backward(real_cache, &mean_softplus_grad(&real, -1.0), false);
    d.backward(fake_cache, &mean_softplus_grad(&fake, 1.0), false);
    Ok(loss)
}

/// Components of the generator objective.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GLoss {
    pub total: f64,
    pub adv: f64,
    pub l1: f64,
}

/// `total = adv + lambda * l1` from already computed fake logits.
pub fn g_loss_from_logits<T: Scalar>(
    fake_logits: &Tensor<T>,
    fake_pet: &Tensor<T>,
    real_pet: &Tensor<T>,
    cfg: &LossConfig,
) -> Result<GLoss> {
    same_shape(fake_pet, real_pet, "real and synthetic PET")?;
    let adv = mean_softplus(fake_logits, -1.0);
    let l1 = fake_pet
        .data()
        .iter()
        .zip(real_pet.data())
        .map(|(f, r)| (r.to_f64().unwrap() - f.to_f64().unwrap()).abs())
        .sum::<f64>()
        / fake_pet.len() as f64;
    Ok(GLoss {
        total: adv + cfg.lambda_l1 * l1,
        adv,
        l1,
    })
}

/// Generator objective for a given synthetic batch (values in network space).
pub fn mgan_g_loss<T: Scalar>(
    d: &Discriminator<T>,
    cond: &Tensor<T>,
    fake_pet: &Tensor<T>,
    real_pet: &Tensor<T>,
    cfg: &LossConfig,
) -> Result<GLoss> {
    check_pair(cond, fake_pet, real_pet)?;
    d.check_inputs(cond, fake_pet)?;
    let logits = d.forward(cond, fake_pet).0;
    g_loss_from_logits(&logits, fake_pet, real_pet, cfg)
}

/// Generator objective plus its gradient with respect to `fake_pet`.
///
/// The discriminator's parameter gradients are left untouched.
pub fn mgan_g_loss_grad<T: Scalar>(
    d: &mut Discriminator<T>,
    cond: &Tensor<T>,
    fake_pet: &Tensor<T>,
    real_pet: &Tensor<T>,
    cfg: &LossConfig,
) -> Result<(GLoss, Tensor<T>)> {
    check_pair(cond, fake_pet, real_pet)?;
    d.check_inputs(cond, fake_pet)?;
    let saved: Vec<Vec<T>> = d.params().iter().map(|p| p.grad.clone()).collect();
    let (logits, cache) = d.forward(cond, fake_pet);
    let loss = g_loss_from_logits(&logits, fake_pet, real_pet, cfg)?;
    let mut grad = d
        .backward(cache, &mean_softplus_grad(&logits, -1.0), true)
        .expect("candidate gradient requested");
    for (p, g) in d.params_mut().into_iter().zip(saved) {
        p.grad = g;
    }
    let scale = cfg.lambda_l1 / fake_pet.len() as f64;
    for ((g, f), r) in grad
        .data_mut()
        .iter_mut()
        .zip(fake_pet.data())
        .zip(real_pet.data())
    {
        let diff = (*f - *r).to_f64().unwrap();
        let sign = if diff > 0.0 {
            1.0
        } else if diff < 0.0 {
            -1.0
        } else {
            0.0
        };
        *g = *g + T::from_f64_lossy(scale * sign);
    }
    Ok((loss, grad))
}

/// Runs the generator, evaluates its objective and accumulates its parameter gradients.
pub fn generator_objective_backward<T: Scalar>(
    g: &mut Generator<T>,
    d: &mut Discriminator<T>,
    cond: &Tensor<T>,
    real_pet: &Tensor<T>,
    cfg: &LossConfig,
    phase: Phase<'_>,
) -> Result<GLoss> {
    g.net.check_input(cond)?;
    let (fake, cache) = g.net.forward(cond, phase);
    let (loss, grad) = mgan_g_loss_grad(d, cond, &fake, real_pet, cfg)?;
    g.net.backward(cache, &grad, false);
    Ok(loss)
}
