//! Test-split inference and thresholded Dice.

use mtseg_core::patching::{extract_unchecked, reaggregate};
use mtseg_core::{PatchSpec, Volume3};
use mtseg_model::{dice_score, MtUnet};
use mtseg_tensor::Tensor;
use serde::{Deserialize, Serialize};

use crate::config::Scale;
use crate::error::Result;
use crate::train::{CaseData, CHANNELS};

/// Anything that maps a `(n, 1, x, y, z)` input to `(n, C, x, y, z)`
/// probabilities.
pub trait Segmenter {
    fn segment(&self, input: &Tensor<f32>) -> Result<Tensor<f32>>;
}

impl Segmenter for MtUnet<f32> {
    fn segment(&self, input: &Tensor<f32>) -> Result<Tensor<f32>> {
        Ok(self.forward(input)?.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseDice {
    pub case_id: String,
    /// Liver, tumor.
    pub dice: [f64; 2],
}

/// Per-channel probability volumes for one input: a single forward pass
/// over the whole volume, or patch inference re-aggregated by averaging.
pub fn predict_volume(model: &impl Segmenter, input: &Volume3, patch: Option<&PatchSpec>) -> Result<Vec<Vec<f32>>> {
    let dims = input.dims();
    let [x, y, z] = dims;
    match patch {
        None => {
            let t = Tensor::new([1, 1, x, y, z], input.values().to_vec())?;
            let probs = model.segment(&t)?;
            Ok((0..probs.channels()).map(|c| probs.plane(0, c).to_vec()).collect())
        }
        Some(spec) => {
            let patches = extract_unchecked(input.values(), dims, spec);
            let [px, py, pz] = spec.size;
            let mut outputs: Vec<Vec<Vec<f32>>> = Vec::new();
            let mut origins = Vec::with_capacity(patches.len());
            for p in patches {
                let probs = model.segment(&Tensor::new([1, 1, px, py, pz], p.values)?)?;
                if outputs.is_empty() {
                    outputs.resize(probs.channels(), Vec::new());
                }
                for (c, out) in outputs.iter_mut().enumerate() {
                    out.push(probs.plane(0, c).to_vec());
                }
                origins.push(p.origin);
            }
            outputs
                .iter()
                .map(|chan| Ok(reaggregate(chan, &origins, spec.size, dims)?))
                .collect()
        }
    }
}

/// Dice per case and channel at `threshold`, against each case's mask at
/// the resolution the regime works on.
pub fn evaluate(
    model: &impl Segmenter,
    cases: &[CaseData],
    scale: Scale,
    spec: &PatchSpec,
    threshold: f32,
) -> Result<Vec<CaseDice>> {
    cases
        .iter()
        .map(|case| {
            let patch = (scale == Scale::Patched).then_some(spec);
            let probs = predict_volume(model, &case.input, patch)?;
            assert_eq!(probs.len(), CHANNELS.len(), "model emits liver and tumor channels");
            let labels = case.mask.labels();
            let liver: Vec<bool> = labels.iter().map(|&l| l >= 1).collect();
            let tumor: Vec<bool> = labels.iter().map(|&l| l == 2).collect();
            Ok(CaseDice {
                case_id: case.id.clone(),
                dice: [
                    dice_score(&probs[0], &liver, threshold),
                    dice_score(&probs[1], &tumor, threshold),
                ],
            })
        })
        .collect()
}
