use ghost_autograd::{ops, Float, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Discriminator and generator objectives of one relativistic
/// least-squares evaluation.
#[derive(Clone, Debug)]
pub struct RaganLs<T: Float> {
    pub d_loss: Tensor<T>,
    pub g_loss: Tensor<T>,
}

fn finite<T: Float>(t: &Tensor<T>, what: &str) -> Result<()> {
    if t.value().all_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("{what} scores")))
    }
}

/// `E[(a - E[b] - 1)^2]`-style term with an explicit offset.
fn rel_term<T: Float>(a: &Tensor<T>, b_mean: &Tensor<T>, offset: f64) -> Tensor<T> {
    let centered = ops::add_broadcast(a, &ops::mul_scalar(b_mean, -1.0));
    ops::mean_all(&ops::sqr(&ops::add_scalar(&centered, offset)))
}

/// Relativistic average least-squares losses for one score scale.
///
/// `d = E[(r - E[f] - 1)^2] + E[(f - E[r] + 1)^2]` and `g` with the roles of
/// real and fake swapped.
pub fn ragan_ls<T: Float>(real: &Tensor<T>, fake: &Tensor<T>) -> Result<RaganLs<T>> {
    if real.value().is_empty() || fake.value().is_empty() {
        return Err(crate::error::contract("score sets must be non-empty"));
    }
    finite(real, "real")?;
    finite(fake, "fake")?;
    let (mr, mf) = (ops::mean_all(real), ops::mean_all(fake));
    let d_loss = ops::add(&rel_term(real, &mf, -1.0), &rel_term(fake, &mr, 1.0));
    let g_loss = ops::add(&rel_term(fake, &mr, -1.0), &rel_term(real, &mf, 1.0));
    Ok(RaganLs { d_loss, g_loss })
}

/// Average of [`ragan_ls`] over several `(real, fake)` score scales.
pub fn ragan_ls_multi<T: Float>(scales: &[(&Tensor<T>, &Tensor<T>)]) -> Result<RaganLs<T>> {
    let parts = scales.iter().map(|(r, f)| ragan_ls(r, f)).collect::<Result<Vec<_>>>()?;
    let k = 1.0 / parts.len().max(1) as f64;
    let sum = |sel: fn(&RaganLs<T>) -> &Tensor<T>| {
        let mut it = parts.iter().map(sel);
        let first = it.next().expect("at least one scale").clone();
        ops::mul_scalar(&it.fold(first, |acc, t| ops::add(&acc, t)), k)
    };
    Ok(RaganLs { d_loss: sum(|p| &p.d_loss), g_loss: sum(|p| &p.g_loss) })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub w_pixel: f64,
    pub w_perceptual: f64,
    pub w_adversarial: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { w_pixel: 0.5, w_perceptual: 0.006, w_adversarial: 0.01 }
    }
}

impl LossWeights {
    pub fn problems(&self) -> Vec<String> {
        [("w_pixel", self.w_pixel), ("w_perceptual", self.w_perceptual), ("w_adversarial", self.w_adversarial)]
            .into_iter()
            .filter(|(_, v)| !(v.is_finite() && *v >= 0.0))
            .map(|(n, v)| format!("loss.{n} must be finite and >= 0, got {v}"))
            .collect()
    }

    pub fn is_zero(&self) -> bool {
        self.w_pixel == 0.0 && self.w_perceptual == 0.0 && self.w_adversarial == 0.0
    }
}

/// Unweighted generator loss components and the weighted total.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub pixel: f64,
    pub perceptual: f64,
    pub adversarial: f64,
    pub total: f64,
}

impl LossBreakdown {
    /// Weighted sum recomputed from the stored components.
    pub fn recombine(&self, w: &LossWeights) -> f64 {
        w.w_pixel * self.pixel + w.w_perceptual * self.perceptual + w.w_adversarial * self.adversarial
    }
}

/// `w_pixel * pixel + w_perceptual * perceptual + w_adversarial * adversarial`.
pub fn total_generator_loss<T: Float>(
    pixel: &Tensor<T>,
    perceptual: &Tensor<T>,
    adversarial: &Tensor<T>,
    w: &LossWeights,
) -> Result<(Tensor<T>, LossBreakdown)> {
    for (t, what) in [(pixel, "pixel loss"), (perceptual, "perceptual loss"), (adversarial, "adversarial loss")] {
        if !t.value().all_finite() {
            return Err(Error::NonFinite(what.into()));
        }
    }
    let total = ops::add(
        &ops::add(&ops::mul_scalar(pixel, w.w_pixel), &ops::mul_scalar(perceptual, w.w_perceptual)),
        &ops::mul_scalar(adversarial, w.w_adversarial),
    );
    let breakdown = LossBreakdown {
        pixel: pixel.item(),
        perceptual: perceptual.item(),
        adversarial: adversarial.item(),
        total: total.item(),
    };
    Ok((total, breakdown))
}
