//! Case preparation and the training loop for the three regimes.

use mtseg_core::patching::{crop, extract_unchecked, sample_training_patch};
use mtseg_core::{downsample2, downsample2_labels, normalize_intensity, LabelVolume, PatchSpec, Volume3};
use mtseg_model::losses::{combine, l2};
use mtseg_model::{loss1, LossConfig, MtUnet, UnetConfig};
use mtseg_tensor::{adam_step, AdamState, Graph, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Scale};
use crate::dataset::{select_recon_target, Dataset};
use crate::error::Result;

/// Attenuation window mapped onto [0, 1] for network inputs and
/// reconstruction targets.
pub const INPUT_WINDOW: (f32, f32) = (0.0, 1.0);
pub const CHANNELS: [&str; 2] = ["liver", "tumor"];

/// One case at the resolution the regime works on.
#[derive(Clone, Debug)]
pub struct CaseData {
    pub id: String,
    pub input: Volume3,
    pub mask: LabelVolume,
    pub recon_target: Option<Volume3>,
}

pub fn load_case(ds: &Dataset, cfg: &ExperimentConfig, case: &str) -> Result<CaseData> {
    let (lo, hi) = INPUT_WINDOW;
    let input = normalize_intensity(&ds.load_recon(case, cfg.n_p)?, lo, hi)?;
    let mask = ds.load_mask(case)?;
    let target = select_recon_target(ds, cfg.mode, case, cfg.n_p)?
        .map(|v| normalize_intensity(&v, lo, hi))
        .transpose()?;
    Ok(match cfg.scale {
        Scale::Patched => CaseData {
            id: case.to_string(),
            input,
            mask,
            recon_target: target,
        },
        Scale::Holistic => CaseData {
            id: case.to_string(),
            input: downsample2(&input),
            mask: downsample2_labels(&mask),
            recon_target: target.as_ref().map(downsample2),
        },
    })
}

/// Liver (label ≥ 1) then tumor (label 2) as 0/1 planes.
pub fn seg_channels(labels: &[u8]) -> Vec<f32> {
    let liver = labels.iter().map(|&l| (l >= 1) as u8 as f32);
    let tumor = labels.iter().map(|&l| (l == 2) as u8 as f32);
    liver.chain(tumor).collect()
}

struct Sample {
    input: Vec<f32>,
    seg: Vec<f32>,
    recon: Option<Vec<f32>>,
}

struct Batch {
    input: Tensor<f32>,
    seg: Tensor<f32>,
    recon: Option<Tensor<f32>>,
}

fn collate(samples: &[Sample], dims: [usize; 3]) -> Result<Batch> {
    let b = samples.len();
    let [x, y, z] = dims;
    let input = Tensor::new([b, 1, x, y, z], samples.iter().flat_map(|s| s.input.iter().copied()).collect())?;
    let seg = Tensor::new([b, 2, x, y, z], samples.iter().flat_map(|s| s.seg.iter().copied()).collect())?;
    let recon = match samples.iter().map(|s| s.recon.as_ref()).collect::<Option<Vec<_>>>() {
        Some(r) => Some(Tensor::new([b, 1, x, y, z], r.into_iter().flatten().copied().collect())?),
        None => None,
    };
    Ok(Batch { input, seg, recon })
}

fn whole(case: &CaseData) -> Sample {
    Sample {
        input: case.input.values().to_vec(),
        seg: seg_channels(case.mask.labels()),
        recon: case.recon_target.as_ref().map(|v| v.values().to_vec()),
    }
}

fn sampled(case: &CaseData, spec: &PatchSpec, rng: &mut ChaCha8Rng) -> Sample {
    let p = sample_training_patch(&case.input, &case.mask, spec, rng);
    let dims = case.input.dims();
    Sample {
        recon: case
            .recon_target
            .as_ref()
            .map(|v| crop(v.values(), dims, p.origin, spec.size, spec.pad_value)),
        input: p.values,
        seg: seg_channels(&p.labels),
    }
}

/// Every grid patch of a case, as one batch.
fn tiled(case: &CaseData, spec: &PatchSpec) -> Result<Batch> {
    let dims = case.input.dims();
    let samples: Vec<Sample> = extract_unchecked(case.input.values(), dims, spec)
        .into_iter()
        .map(|p| Sample {
            seg: seg_channels(&crop(case.mask.labels(), dims, p.origin, spec.size, 0)),
            input: p.values,
            recon: None,
        })
        .collect();
    collate(&samples, spec.size)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean training loss of each epoch (Loss₁ or Loss₂ by regime).
    pub epoch_losses: Vec<f64>,
    /// Validation Loss₁ after each epoch.
    pub val_losses: Vec<f64>,
    /// Loss of the first batch, before any update.
    pub initial_loss: f64,
    /// Mean loss over the last epoch.
    pub final_loss: f64,
    pub best_val_loss: f64,
    /// Zero-based epoch whose weights were kept.
    pub best_epoch: usize,
}

pub fn model_config(cfg: &ExperimentConfig, seed: u64) -> UnetConfig {
    UnetConfig {
        in_channels: 1,
        encoder_filters: cfg.encoder_filters.clone(),
        seg_classes: CHANNELS.len(),
        multitask: cfg.mode.multitask(),
        seed,
    }
}

fn validation_loss(model: &MtUnet<f32>, batches: &[Batch], losses: &LossConfig) -> Result<f64> {
    let mut total = 0.0;
    for b in batches {
        let (seg, _) = model.forward(&b.input)?;
        let mut g = Graph::new();
        let (p, t) = (g.constant(seg), g.constant(b.seg.clone()));
        let l = loss1(&mut g, p, t, losses)?;
        total += g.value(l).item() as f64;
    }
    Ok(total / batches.len() as f64)
}

/// Train one network. Weights and the sampling stream derive from `seed`;
/// the returned model is the one with the lowest validation Loss₁.
pub fn train(
    cfg: &ExperimentConfig,
    train_cases: &[CaseData],
    val_cases: &[CaseData],
    seed: u64,
) -> Result<(MtUnet<f32>, TrainReport)> {
    let mut model = MtUnet::<f32>::new(&model_config(cfg, seed))?;
    let mut adam = AdamState::new(model.params());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let losses = LossConfig {
        alpha: cfg.alpha,
        ..LossConfig::default()
    };
    let spec = cfg.patch.spec();
    let val_batches: Vec<Batch> = match cfg.scale {
        Scale::Patched => val_cases.iter().map(|c| tiled(c, &spec)).collect::<Result<_>>()?,
        Scale::Holistic => val_cases
            .iter()
            .map(|c| collate(&[whole(c)], c.input.dims()))
            .collect::<Result<_>>()?,
    };
    let per_case = match cfg.scale {
        Scale::Patched => cfg.samples_per_case,
        Scale::Holistic => 1,
    };

    let mut report = TrainReport {
        epoch_losses: Vec::with_capacity(cfg.epochs),
        val_losses: Vec::with_capacity(cfg.epochs),
        initial_loss: f64::NAN,
        final_loss: f64::NAN,
        best_val_loss: f64::INFINITY,
        best_epoch: 0,
    };
    let mut best = model.clone();
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..train_cases.len()).flat_map(|i| std::iter::repeat_n(i, per_case)).collect();
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut steps = 0;
        for chunk in order.chunks(cfg.batch_size()) {
            let (samples, dims): (Vec<Sample>, [usize; 3]) = match cfg.scale {
                Scale::Patched => (chunk.iter().map(|&i| sampled(&train_cases[i], &spec, &mut rng)).collect(), spec.size),
                Scale::Holistic => (
                    chunk.iter().map(|&i| whole(&train_cases[i])).collect(),
                    train_cases[chunk[0]].input.dims(),
                ),
            };
            let batch = collate(&samples, dims)?;
            let mut g = Graph::new();
            let x = g.constant(batch.input);
            let (vars, out) = model.forward_train(&mut g, x)?;
            let st = g.constant(batch.seg);
            let seg_loss = loss1(&mut g, out.seg, st, &losses)?;
            let loss = match (out.recon, batch.recon) {
                (Some(r), Some(t)) => {
                    let t = g.constant(t);
                    let rec_loss = l2(&mut g, r, t)?;
                    combine(&mut g, seg_loss, rec_loss, losses.alpha)?
                }
                _ => seg_loss,
            };
            let value = g.value(loss).item() as f64;
            if epoch == 0 && steps == 0 {
                report.initial_loss = value;
            }
            sum += value;
            steps += 1;
            g.backward(loss)?;
            let grads: Vec<Vec<f32>> = vars
                .iter()
                .map(|&v| g.take_grad(v).unwrap_or_else(|| vec![0.0; g.value(v).numel()]))
                .collect();
            let refs: Vec<&[f32]> = grads.iter().map(Vec::as_slice).collect();
            adam_step(model.params_mut(), &refs, &mut adam, cfg.learning_rate);
        }
        report.epoch_losses.push(sum / steps as f64);
        let val = validation_loss(&model, &val_batches, &losses)?;
        report.val_losses.push(val);
        if val < report.best_val_loss {
            report.best_val_loss = val;
            report.best_epoch = epoch;
            best = model.clone();
        }
    }
    report.final_loss = *report.epoch_losses.last().expect("at least one epoch");
    Ok((best, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn channels_nest_tumor_in_liver() {
        assert_eq!(seg_channels(&[0, 1, 2]), vec![0.0, 1.0, 1.0, 0.0, 0.0, 1.0]);
    }
}
