//! Segmentation and reconstruction losses, and the thresholded Dice metric.
//!
//! Sums are accumulated in f64 whatever the graph precision.

use mtseg_tensor::{Function, Graph, Real, Result, Tensor, TensorError, Var};
use serde::{Deserialize, Serialize};

pub const DEFAULT_ALPHA: f64 = 0.8;
pub const DICE_EPSILON: f64 = 1e-6;
pub const BCE_CLAMP: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    pub alpha: f64,
    pub dice_epsilon: f64,
    pub bce_clamp: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            alpha: DEFAULT_ALPHA,
            dice_epsilon: DICE_EPSILON,
            bce_clamp: BCE_CLAMP,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(format!("alpha must lie in [0, 1], got {}", self.alpha));
        }
        if !(self.dice_epsilon > 0.0) {
            return Err(format!("dice_epsilon must be positive, got {}", self.dice_epsilon));
        }
        if !(self.bce_clamp > 0.0 && self.bce_clamp < 0.5) {
            return Err(format!("bce_clamp must lie in (0, 0.5), got {}", self.bce_clamp));
        }
        Ok(())
    }
}

fn same_shape<T: Real>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(TensorError::Shape {
            op,
            detail: format!("{:?} vs {:?}", a.shape(), b.shape()),
        });
    }
    Ok(())
}

struct Bce {
    clamp: f64,
}

impl<T: Real> Function<T> for Bce {
    fn name(&self) -> &'static str {
        "bce"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, g: &[T], needs: &[bool]) -> Vec<Option<Vec<T>>> {
        let (p, t) = (inputs[0].data(), inputs[1].data());
        let scale = g[0].as_f64() / p.len() as f64;
        let (lo, hi) = (self.clamp, 1.0 - self.clamp);
        let dp = needs[0].then(|| {
            p.iter()
                .zip(t)
                .map(|(&p, &t)| {
                    let (p, t) = (p.as_f64(), t.as_f64());
                    if p < lo || p > hi {
                        T::zero()
                    } else {
                        T::lit(scale * ((1.0 - t) / (1.0 - p) - t / p))
                    }
                })
                .collect()
        });
        vec![dp, None]
    }
}

struct SoftDice {
    eps: f64,
    /// Per channel: Σp·t, Σp + Σt.
    stats: Vec<(f64, f64)>,
}

impl<T: Real> Function<T> for SoftDice {
    fn name(&self) -> &'static str {
        "soft_dice"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, g: &[T], needs: &[bool]) -> Vec<Option<Vec<T>>> {
        let t = inputs[1];
        let c = t.channels();
        let s = t.spatial_len();
        let k = g[0].as_f64() / c as f64;
        let dp = needs[0].then(|| {
            let mut dp = vec![T::zero(); t.numel()];
            for n in 0..t.batch() {
                for (ch, &(inter, total)) in self.stats.iter().enumerate() {
                    let denom = total + self.eps;
                    let num = 2.0 * inter + self.eps;
                    let base = (n * c + ch) * s;
                    for i in base..base + s {
                        let ti = t.data()[i].as_f64();
                        dp[i] = T::lit(-k * (2.0 * ti * denom - num) / (denom * denom));
                    }
                }
            }
            dp
        });
        vec![dp, None]
    }
}

struct MeanSquare;

impl<T: Real> Function<T> for MeanSquare {
    fn name(&self) -> &'static str {
        "l2"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, g: &[T], needs: &[bool]) -> Vec<Option<Vec<T>>> {
        let (a, b) = (inputs[0].data(), inputs[1].data());
        let k = 2.0 * g[0].as_f64() / a.len() as f64;
        let diff = |sign: f64| -> Vec<T> {
            a.iter()
                .zip(b)
                .map(|(&x, &y)| T::lit(sign * k * (x.as_f64() - y.as_f64())))
                .collect()
        };
        vec![needs[0].then(|| diff(1.0)), needs[1].then(|| diff(-1.0))]
    }
}

/// Mean binary cross-entropy with probabilities clamped to
/// `[clamp, 1 - clamp]`; the gradient vanishes where the clamp is active.
pub fn bce<T: Real>(g: &mut Graph<T>, probs: Var, target: Var, clamp: f64) -> Result<Var> {
    let (p, t) = (g.value(probs), g.value(target));
    same_shape("bce", p, t)?;
    let sum: f64 = p
        .data()
        .iter()
        .zip(t.data())
        .map(|(&p, &t)| {
            let (p, t) = (p.as_f64().clamp(clamp, 1.0 - clamp), t.as_f64());
            -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
        })
        .sum();
    let value = Tensor::scalar(T::lit(sum / p.numel() as f64));
    Ok(g.apply(&[probs, target], value, Bce { clamp }))
}

/// `mean_c [1 - (2 Σ p·t + ε) / (Σ p + Σ t + ε)]` with sums over batch and
/// space per channel.
pub fn soft_dice_loss<T: Real>(g: &mut Graph<T>, probs: Var, target: Var, eps: f64) -> Result<Var> {
    let (p, t) = (g.value(probs), g.value(target));
    same_shape("soft_dice", p, t)?;
    let c = p.channels();
    let mut stats = vec![(0.0f64, 0.0f64); c];
    for n in 0..p.batch() {
        for (ch, st) in stats.iter_mut().enumerate() {
            for (&pi, &ti) in p.plane(n, ch).iter().zip(t.plane(n, ch)) {
                let (pi, ti) = (pi.as_f64(), ti.as_f64());
                st.0 += pi * ti;
                st.1 += pi + ti;
            }
        }
    }
    let loss = stats
        .iter()
        .map(|&(inter, total)| 1.0 - (2.0 * inter + eps) / (total + eps))
        .sum::<f64>()
        / c as f64;
    Ok(g.apply(&[probs, target], Tensor::scalar(T::lit(loss)), SoftDice { eps, stats }))
}

/// Mean squared difference.
pub fn l2<T: Real>(g: &mut Graph<T>, recon: Var, target: Var) -> Result<Var> {
    let (a, b) = (g.value(recon), g.value(target));
    same_shape("l2", a, b)?;
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x.as_f64() - y.as_f64()).powi(2))
        .sum();
    Ok(g.apply(&[recon, target], Tensor::scalar(T::lit(sum / a.numel() as f64)), MeanSquare))
}

/// BCE + soft Dice.
pub fn loss1<T: Real>(g: &mut Graph<T>, probs: Var, target: Var, cfg: &LossConfig) -> Result<Var> {
    let b = bce(g, probs, target, cfg.bce_clamp)?;
    let d = soft_dice_loss(g, probs, target, cfg.dice_epsilon)?;
    g.add(b, d)
}

/// `α·loss1 + (1-α)·l2`. Exactly `loss1` at α = 1 and exactly `l2` at α = 0.
pub fn loss2<T: Real>(
    g: &mut Graph<T>,
    probs: Var,
    seg_target: Var,
    recon: Var,
    recon_target: Var,
    cfg: &LossConfig,
) -> Result<Var> {
    let seg = loss1(g, probs, seg_target, cfg)?;
    let rec = l2(g, recon, recon_target)?;
    combine(g, seg, rec, cfg.alpha)
}

/// `α·seg + (1-α)·rec` for already computed loss terms.
pub fn combine<T: Real>(g: &mut Graph<T>, seg: Var, rec: Var, alpha: f64) -> Result<Var> {
    g.lincomb(&[(seg, T::lit(alpha)), (rec, T::lit(1.0 - alpha))])
}

/// Dice of the binarised prediction `p >= threshold` against a binary
/// target. Both empty scores 1, exactly one empty scores 0.
pub fn dice_score(probs: &[f32], target: &[bool], threshold: f32) -> f64 {
    assert_eq!(probs.len(), target.len(), "prediction and target lengths differ");
    let (mut a, mut b, mut both) = (0usize, 0usize, 0usize);
    for (&p, &t) in probs.iter().zip(target) {
        let pred = p >= threshold;
        a += pred as usize;
        b += t as usize;
        both += (pred && t) as usize;
    }
    if a + b == 0 {
        1.0
    } else {
        2.0 * both as f64 / (a + b) as f64
    }
}

/// `dice_score` per channel of a `(1, C, x, y, z)` probability map.
pub fn dice_per_channel<T: Real>(probs: &Tensor<T>, target: &Tensor<T>, threshold: f32) -> Result<Vec<f64>> {
    same_shape("dice_per_channel", probs, target)?;
    Ok((0..probs.channels())
        .map(|ch| {
            let (mut p, mut t) = (Vec::new(), Vec::new());
            for n in 0..probs.batch() {
                p.extend(probs.plane(n, ch).iter().map(|v| v.as_f64() as f32));
                t.extend(target.plane(n, ch).iter().map(|v| v.as_f64() >= 0.5));
            }
            dice_score(&p, &t, threshold)
        })
        .collect())
}
