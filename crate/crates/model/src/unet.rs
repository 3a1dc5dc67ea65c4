//! Dual-head 3D U-Net: three encoder double-conv blocks joined by max
//! pooling, a bottleneck block, three decoder blocks fed by nearest
//! upsampling plus the matching encoder output, a sigmoid segmentation head
//! and an optional linear reconstruction head (both 1×1×1 convolutions).

use std::path::{Path, PathBuf};

use mtseg_tensor::checkpoint::{load_checkpoint, save_checkpoint};
use mtseg_tensor::{BnState, Graph, Mode, Padding, Real, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{ModelError, Result};

pub const LEVELS: usize = 3;
const KERNEL: usize = 3;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnetConfig {
    pub in_channels: usize,
    pub encoder_filters: Vec<usize>,
    pub seg_classes: usize,
    pub multitask: bool,
    pub seed: u64,
}

impl Default for UnetConfig {
    fn default() -> Self {
        UnetConfig {
            in_channels: 1,
            encoder_filters: vec![8, 16, 32, 64],
            seg_classes: 2,
            multitask: true,
            seed: 0,
        }
    }
}

impl UnetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.encoder_filters.len() != LEVELS + 1 {
            return Err(ModelError::Config(format!(
                "encoder_filters needs {} entries, got {}",
                LEVELS + 1,
                self.encoder_filters.len()
            )));
        }
        if self.in_channels == 0 || self.seg_classes == 0 || self.encoder_filters.contains(&0) {
            return Err(ModelError::Config("channel and filter counts must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
struct Conv {
    w: usize,
    b: usize,
}

#[derive(Clone, Copy, Debug)]
struct Norm {
    scale: usize,
    shift: usize,
    state: usize,
}

#[derive(Clone, Copy, Debug)]
struct DoubleConv {
    c1: Conv,
    n1: Norm,
    c2: Conv,
    n2: Norm,
}

#[derive(Clone, Debug)]
struct Layout {
    encoder: [DoubleConv; LEVELS],
    bottleneck: DoubleConv,
    /// Shallowest first, mirroring `encoder`.
    decoder: [DoubleConv; LEVELS],
    seg_head: Conv,
    recon_head: Option<Conv>,
}

/// Parameters and batch-norm statistics of one network.
#[derive(Clone, Debug)]
pub struct MtUnet<T: Real> {
    config: UnetConfig,
    names: Vec<String>,
    params: Vec<Tensor<T>>,
    bn_names: Vec<String>,
    bn: Vec<BnState>,
    layout: Layout,
}

/// Graph handles of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct Output {
    pub seg: Var,
    pub recon: Option<Var>,
}

struct Builder {
    rng: ChaCha8Rng,
    names: Vec<String>,
    params: Vec<Tensor<f64>>,
    bn_names: Vec<String>,
    bn: Vec<BnState>,
}

impl Builder {
    fn push(&mut self, name: String, t: Tensor<f64>) -> usize {
        self.names.push(name);
        self.params.push(t);
        self.params.len() - 1
    }

    /// He-normal weights, zero bias.
    fn conv(&mut self, name: &str, cin: usize, cout: usize, k: usize) -> Conv {
        let fan_in = (cin * k * k * k) as f64;
        let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("positive std");
        let n = cout * cin * k * k * k;
        let w: Vec<f64> = (0..n).map(|_| normal.sample(&mut self.rng)).collect();
        let w = self.push(format!("{name}.weight"), Tensor::new([cout, cin, k, k, k], w).expect("sized"));
        let b = self.push(format!("{name}.bias"), Tensor::zeros([1, cout, 1, 1, 1]));
        Conv { w, b }
    }

    fn norm(&mut self, name: &str, c: usize) -> Norm {
        let scale = self.push(format!("{name}.scale"), Tensor::full([1, c, 1, 1, 1], 1.0));
        let shift = self.push(format!("{name}.shift"), Tensor::zeros([1, c, 1, 1, 1]));
        self.bn_names.push(name.to_string());
        self.bn.push(BnState::new(c));
        Norm {
            scale,
            shift,
            state: self.bn.len() - 1,
        }
    }

    fn double(&mut self, name: &str, cin: usize, cout: usize) -> DoubleConv {
        DoubleConv {
            c1: self.conv(&format!("{name}.conv1"), cin, cout, KERNEL),
            n1: self.norm(&format!("{name}.bn1"), cout),
            c2: self.conv(&format!("{name}.conv2"), cout, cout, KERNEL),
            n2: self.norm(&format!("{name}.bn2"), cout),
        }
    }
}

/// Closed-form parameter count of a configuration.
pub fn expected_param_count(config: &UnetConfig) -> usize {
    let k3 = KERNEL * KERNEL * KERNEL;
    // conv (weights + bias) and batch-norm (scale + shift), twice.
    let double = |cin: usize, cout: usize| k3 * cout * (cin + cout) + 2 * cout + 4 * cout;
    let f = &config.encoder_filters;
    let mut total = double(config.in_channels, f[0]);
    for l in 1..=LEVELS {
        total += double(f[l - 1], f[l]);
    }
    for l in 0..LEVELS {
        total += double(f[l + 1] + f[l], f[l]);
    }
    total += f[0] * config.seg_classes + config.seg_classes;
    if config.multitask {
        total += f[0] + 1;
    }
    total
}

pub fn build_model(config: &UnetConfig) -> Result<MtUnet<f32>> {
    MtUnet::new(config)
}

impl<T: Real> MtUnet<T> {
    /// Deterministic initialisation from `config.seed`. Weights are drawn in
    /// f64 and rounded, so f32 and f64 builds agree to f32 precision.
    pub fn new(config: &UnetConfig) -> Result<Self> {
        config.validate()?;
        let mut b = Builder {
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            names: Vec::new(),
            params: Vec::new(),
            bn_names: Vec::new(),
            bn: Vec::new(),
        };
        let f = &config.encoder_filters;
        let e1 = b.double("enc1", config.in_channels, f[0]);
        let e2 = b.double("enc2", f[0], f[1]);
        let e3 = b.double("enc3", f[1], f[2]);
        let bottleneck = b.double("bottleneck", f[2], f[3]);
        let d3 = b.double("dec3", f[3] + f[2], f[2]);
        let d2 = b.double("dec2", f[2] + f[1], f[1]);
        let d1 = b.double("dec1", f[1] + f[0], f[0]);
        let seg_head = b.conv("seg_head", f[0], config.seg_classes, 1);
        let recon_head = config.multitask.then(|| b.conv("recon_head", f[0], 1, 1));
        Ok(MtUnet {
            config: config.clone(),
            names: b.names,
            params: b.params.iter().map(Tensor::cast).collect(),
            bn_names: b.bn_names,
            bn: b.bn,
            layout: Layout {
                encoder: [e1, e2, e3],
                bottleneck,
                decoder: [d1, d2, d3],
                seg_head,
                recon_head,
            },
        })
    }

    pub fn config(&self) -> &UnetConfig {
        &self.config
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::numel).sum()
    }

    pub fn params(&self) -> &[Tensor<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.params
    }

    pub fn named_params(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.params)
    }

    pub fn bn_states(&self) -> &[BnState] {
        &self.bn
    }

    /// Same network in another precision.
    pub fn cast<U: Real>(&self) -> MtUnet<U> {
        MtUnet {
            config: self.config.clone(),
            names: self.names.clone(),
            params: self.params.iter().map(Tensor::cast).collect(),
            bn_names: self.bn_names.clone(),
            bn: self.bn.clone(),
            layout: self.layout.clone(),
        }
    }

    /// Register every parameter as a differentiable leaf.
    pub fn bind(&self, g: &mut Graph<T>) -> Vec<Var> {
        self.params.iter().map(|p| g.param(p.clone())).collect()
    }

    /// Forward pass over externally bound parameter handles. Train mode
    /// folds batch statistics into `bn`.
    pub fn forward_with(&self, g: &mut Graph<T>, vars: &[Var], bn: &mut [BnState], x: Var, mode: Mode) -> Result<Output> {
        let spatial = g.value(x).spatial();
        if spatial.iter().any(|&d| d == 0 || d % (1 << LEVELS) != 0) {
            return Err(ModelError::Input(format!(
                "spatial dims {spatial:?} must be positive multiples of {}",
                1 << LEVELS
            )));
        }
        let channels = g.value(x).channels();
        if channels != self.config.in_channels {
            return Err(ModelError::Input(format!(
                "expected {} input channels, got {channels}",
                self.config.in_channels
            )));
        }
        let l = &self.layout;
        let conv = |g: &mut Graph<T>, c: Conv, x: Var| g.conv3d(x, vars[c.w], Some(vars[c.b]), Padding::Same);
        let block = |g: &mut Graph<T>, bn: &mut [BnState], d: DoubleConv, x: Var| -> Result<Var> {
            let mut h = x;
            for (c, n) in [(d.c1, d.n1), (d.c2, d.n2)] {
                h = conv(g, c, h)?;
                h = g.batchnorm3d(h, vars[n.scale], vars[n.shift], &mut bn[n.state], mode)?;
                h = g.relu(h);
            }
            Ok(h)
        };

        let mut skips = Vec::with_capacity(LEVELS);
        let mut h = x;
        for d in l.encoder {
            let s = block(g, bn, d, h)?;
            skips.push(s);
            h = g.maxpool3d_2(s)?;
        }
        h = block(g, bn, l.bottleneck, h)?;
        for (d, skip) in l.decoder.iter().zip(skips).rev() {
            let up = g.upsample3d_2(h);
            let cat = g.concat_channels(up, skip)?;
            h = block(g, bn, *d, cat)?;
        }
        let logits = conv(g, l.seg_head, h)?;
        let seg = g.sigmoid(logits);
        let recon = l.recon_head.map(|c| conv(g, c, h)).transpose()?;
        Ok(Output { seg, recon })
    }

    /// Training-mode forward: binds the parameters and updates the running
    /// statistics. Returns the parameter handles alongside the outputs.
    pub fn forward_train(&mut self, g: &mut Graph<T>, x: Var) -> Result<(Vec<Var>, Output)> {
        let vars = self.bind(g);
        let mut bn = std::mem::take(&mut self.bn);
        let out = self.forward_with(g, &vars, &mut bn, x, Mode::Train);
        self.bn = bn;
        Ok((vars, out?))
    }

    /// Inference with running statistics; no gradients are recorded.
    pub fn forward(&self, input: &Tensor<T>) -> Result<(Tensor<T>, Option<Tensor<T>>)> {
        let mut g = Graph::new();
        let vars: Vec<Var> = self.params.iter().map(|p| g.constant(p.clone())).collect();
        let x = g.constant(input.clone());
        let mut bn = self.bn.clone();
        let out = self.forward_with(&mut g, &vars, &mut bn, x, Mode::Eval)?;
        let seg = g.value(out.seg).clone();
        let recon = out.recon.map(|r| g.value(r).clone());
        Ok((seg, recon))
    }

    /// `path.bin` / `path.json` hold parameters and running statistics,
    /// `path.config.json` the configuration. Values are stored as f32.
    pub fn save(&self, path: &Path) -> Result<()> {
        let stats: Vec<(String, Tensor<T>)> = self
            .bn_names
            .iter()
            .zip(&self.bn)
            .flat_map(|(name, s)| {
                let c = s.channels();
                let as_t = |v: &[f64]| Tensor::new([1, c, 1, 1, 1], v.iter().map(|&x| T::lit(x)).collect()).expect("sized");
                [
                    (format!("{name}.running_mean"), as_t(&s.running_mean)),
                    (format!("{name}.running_var"), as_t(&s.running_var)),
                ]
            })
            .collect();
        let all = self
            .named_params()
            .chain(stats.iter().map(|(n, t)| (n.as_str(), t)));
        save_checkpoint(path, all)?;
        let cfg = config_path(path);
        let text = serde_json::to_string_pretty(&self.config).expect("config serializes");
        std::fs::write(&cfg, text).map_err(|source| ModelError::Io { path: cfg, source })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let cfg = config_path(path);
        let text = std::fs::read(&cfg).map_err(|source| ModelError::Io {
            path: cfg.clone(),
            source,
        })?;
        let config: UnetConfig =
            serde_json::from_slice(&text).map_err(|e| ModelError::Config(format!("{}: {e}", cfg.display())))?;
        let mut model = MtUnet::<T>::new(&config)?;
        let mut stored: std::collections::HashMap<String, Tensor<T>> = load_checkpoint(path)?.into_iter().collect();
        let mut take = |name: &str, shape: [usize; 5]| -> Result<Tensor<T>> {
            let t = stored
                .remove(name)
                .ok_or_else(|| ModelError::Config(format!("checkpoint lacks tensor {name}")))?;
            if t.shape() != shape {
                return Err(ModelError::Config(format!("tensor {name} has shape {:?}, expected {shape:?}", t.shape())));
            }
            Ok(t)
        };
        for (name, p) in model.names.iter().zip(model.params.iter_mut()) {
            *p = take(name, p.shape())?;
        }
        for (name, s) in model.bn_names.iter().zip(model.bn.iter_mut()) {
            let shape = [1, s.channels(), 1, 1, 1];
            s.running_mean = take(&format!("{name}.running_mean"), shape)?.data().iter().map(|v| v.as_f64()).collect();
            s.running_var = take(&format!("{name}.running_var"), shape)?.data().iter().map(|v| v.as_f64()).collect();
        }
        if let Some(extra) = stored.keys().next() {
            return Err(ModelError::Config(format!("checkpoint has unexpected tensor {extra}")));
        }
        Ok(model)
    }
}

fn config_path(path: &Path) -> PathBuf {
    path.with_extension("config.json")
}
