//! Reference encoder, projection head, Adam optimizer, and checkpoints.
//!
//! Both networks are fully connected stacks with relu between layers
//! (none after the last). The encoder is behind the same [`Mlp`] type
//! as the projection head, so larger models can be swapped in by
//! constructing different layer lists.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;

use crate::binio::CountingReader;
use crate::error::{Error, Result};
use crate::numcore::{ops, Tape, TensorId};
use crate::seeding;
use crate::Tensor;

#[derive(Debug, Clone)]
pub struct DenseLayer {
    /// Shape `[in, out]`.
    pub weight: Tensor,
    /// Shape `[out]`.
    pub bias: Tensor,
}

/// Fully connected stack with relu between layers.
#[derive(Debug, Clone)]
pub struct Mlp {
    layers: Vec<DenseLayer>,
}

impl Mlp {
    /// Seeded initialization: every parameter uniform in
    /// `[-1/sqrt(fan_in), +1/sqrt(fan_in)]`.
    pub fn init(dims: &[usize], seed: u64) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::Contract(format!(
                "an mlp needs at least input and output dims, got {dims:?}"
            )));
        }
        let mut rng = seeding::substream(seed, &[dims.len() as u64]);
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for w in dims.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let weight: Vec<f64> = (0..fan_in * fan_out)
                .map(|_| rng.random_range(-bound..=bound))
                .collect();
            let bias: Vec<f64> = (0..fan_out)
                .map(|_| rng.random_range(-bound..=bound))
                .collect();
            layers.push(DenseLayer {
                weight: Tensor::from_vec(vec![fan_in, fan_out], weight)?,
                bias: Tensor::from_vec(vec![fan_out], bias)?,
            });
        }
        Ok(Mlp { layers })
    }

    pub fn from_layers(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Contract("an mlp needs at least one layer".into()));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            let (_, out_a) = pair[0].weight.dims2()?;
            let (in_b, _) = pair[1].weight.dims2()?;
            if out_a != in_b {
                return Err(Error::Contract(format!(
                    "layer {i} output {out_a} does not compose with layer {} input {in_b}",
                    i + 1
                )));
            }
        }
        Ok(Mlp { layers })
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.shape()[0]
    }

    pub fn output_dim(&self) -> usize {
        let last = self.layers.last().expect("non-empty");
        last.weight.shape()[1]
    }

    /// Tape-free forward pass over a `[B x in]` batch.
    pub fn forward(&self, batch: &Tensor) -> Result<Tensor> {
        let (_, d) = batch.dims2()?;
        if d != self.input_dim() {
            return Err(Error::dimension(
                "mlp forward",
                batch.shape(),
                self.layers[0].weight.shape(),
            ));
        }
        let mut cur = ops::add_bias(
            &ops::matmul(batch, &self.layers[0].weight)?,
            &self.layers[0].bias,
        )?;
        for layer in self.layers.iter().skip(1) {
            cur = ops::relu(&cur);
            cur = ops::add_bias(&ops::matmul(&cur, &layer.weight)?, &layer.bias)?;
        }
        Ok(cur)
    }

    /// Record the parameters on a tape as trainable leaves.
    pub fn bind(&self, tape: &mut Tape<f64>) -> BoundMlp {
        let ids = self
            .layers
            .iter()
            .map(|l| {
                (
                    tape.leaf(l.weight.clone().with_grad()),
                    tape.leaf(l.bias.clone().with_grad()),
                )
            })
            .collect();
        BoundMlp { ids }
    }
}

/// Tape handles for one [`Mlp`]'s parameters.
pub struct BoundMlp {
    ids: Vec<(TensorId, TensorId)>,
}

impl BoundMlp {
    /// Tape-recorded forward pass, same math as [`Mlp::forward`].
    pub fn forward(&self, tape: &mut Tape<f64>, x: TensorId) -> Result<TensorId> {
        let mut cur = x;
        for (i, (w, b)) in self.ids.iter().enumerate() {
            if i > 0 {
                cur = tape.relu(cur)?;
            }
            let prod = tape.matmul(cur, *w)?;
            cur = tape.add_bias(prod, *b)?;
        }
        Ok(cur)
    }

    pub fn param_ids(&self) -> Vec<TensorId> {
        self.ids.iter().flat_map(|(w, b)| [*w, *b]).collect()
    }
}

/// Encoder plus projection head.
#[derive(Debug, Clone)]
pub struct Model {
    pub encoder: Mlp,
    pub projection: Mlp,
}

#[derive(Debug, Clone)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub encoder_hidden: Vec<usize>,
    /// Representation dimension (output of the encoder).
    pub repr_dim: usize,
    pub proj_hidden: Vec<usize>,
    /// Projection dimension (where the loss and scores live).
    pub proj_dim: usize,
}

impl ModelConfig {
    pub fn with_input_dim(input_dim: usize) -> Self {
        ModelConfig {
            input_dim,
            encoder_hidden: vec![256, 128],
            repr_dim: 64,
            proj_hidden: vec![64],
            proj_dim: 32,
        }
    }
}

impl Model {
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        let mut enc_dims = vec![cfg.input_dim];
        enc_dims.extend_from_slice(&cfg.encoder_hidden);
        enc_dims.push(cfg.repr_dim);
        let mut proj_dims = vec![cfg.repr_dim];
        proj_dims.extend_from_slice(&cfg.proj_hidden);
        proj_dims.push(cfg.proj_dim);
        Ok(Model {
            encoder: Mlp::init(&enc_dims, seeding::mix(seed, &[1]))?,
            projection: Mlp::init(&proj_dims, seeding::mix(seed, &[2]))?,
        })
    }

    /// h = f(x) per row, tape-free.
    pub fn encode(&self, batch: &Tensor) -> Result<Tensor> {
        self.encoder.forward(batch)
    }

    /// z_raw = g(h), tape-free; callers normalize per row.
    pub fn project(&self, h: &Tensor) -> Result<Tensor> {
        self.projection.forward(h)
    }

    /// Unit-norm projected rows of a raw input batch, tape-free.
    pub fn projected_unit(&self, batch: &Tensor) -> Result<Tensor> {
        let h = self.encode(batch)?;
        let z = self.project(&h)?;
        ops::l2_normalize_rows(&z)
    }

    pub fn parameters(&self) -> Vec<&Tensor> {
        self.encoder
            .layers
            .iter()
            .chain(self.projection.layers.iter())
            .flat_map(|l| [&l.weight, &l.bias])
            .collect()
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        self.encoder
            .layers
            .iter_mut()
            .chain(self.projection.layers.iter_mut())
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }
}

// ---------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Classic L2: added to the gradient before the moment updates.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

/// Adam with bias correction; moment arrays shape-match the parameters
/// they belong to and the step counter strictly increases.
pub struct Adam {
    cfg: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
}

impl Adam {
    pub fn new(cfg: AdamConfig, param_sizes: &[usize]) -> Self {
        Adam {
            cfg,
            m: param_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: param_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
        }
    }

    pub fn for_model(cfg: AdamConfig, model: &Model) -> Self {
        let sizes: Vec<usize> = model.parameters().iter().map(|p| p.numel()).collect();
        Self::new(cfg, &sizes)
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update. `grads[i]` must be present for parameter `i`.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Option<&[f64]>]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Contract(format!(
                "optimizer tracks {} parameters, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.cfg.beta1.powi(t);
        let bc2 = 1.0 - self.cfg.beta2.powi(t);
        for (i, param) in params.iter_mut().enumerate() {
            let grad = grads[i]
                .ok_or_else(|| Error::Contract(format!("missing gradient for parameter {i}")))?;
            if grad.len() != param.numel() {
                return Err(Error::Contract(format!(
                    "gradient length {} does not match parameter {i} of size {}",
                    grad.len(),
                    param.numel()
                )));
            }
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            let data = param.data_mut();
            for j in 0..data.len() {
                let g = grad[j] + self.cfg.weight_decay * data[j];
                m[j] = self.cfg.beta1 * m[j] + (1.0 - self.cfg.beta1) * g;
                v[j] = self.cfg.beta2 * v[j] + (1.0 - self.cfg.beta2) * g * g;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                data[j] -= self.cfg.lr * m_hat / (v_hat.sqrt() + self.cfg.eps);
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------
// Checkpoints
//
// Flat binary file: magic "SSEL", version u32, parameter count u64;
// then per parameter: name length u64 + UTF-8 name, shape rank u64,
// dims u64 each, float64 values. All little-endian.
// ---------------------------------------------------------------------

const CHECKPOINT_MAGIC: &[u8; 4] = b"SSEL";
const CHECKPOINT_VERSION: u32 = 1;

fn named_parameters(model: &Model) -> Vec<(String, &Tensor)> {
    let mut out = Vec::new();
    for (prefix, mlp) in [
        ("encoder", &model.encoder),
        ("projection", &model.projection),
    ] {
        for (i, layer) in mlp.layers.iter().enumerate() {
            out.push((format!("{prefix}.{i}.weight"), &layer.weight));
            out.push((format!("{prefix}.{i}.bias"), &layer.bias));
        }
    }
    out
}

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    let params = named_parameters(model);
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(params.len() as u64).to_le_bytes())?;
    for (name, tensor) in params {
        w.write_all(&(name.len() as u64).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(tensor.ndim() as u64).to_le_bytes())?;
        for &d in tensor.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for v in tensor.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    let mut r = CountingReader::new(BufReader::new(File::open(path)?));
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic, "magic")?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: format!("bad magic {magic:?}, expected {CHECKPOINT_MAGIC:?}"),
        });
    }
    let version = r.read_u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format {
            offset: 4,
            message: format!("unsupported version {version}"),
        });
    }
    let count = r.read_u64("parameter count")?;

    let mut encoder: Vec<(usize, &'static str, Tensor)> = Vec::new();
    let mut projection: Vec<(usize, &'static str, Tensor)> = Vec::new();
    for _ in 0..count {
        let at = r.offset;
        let name_len = r.read_u64("name length")? as usize;
        let mut name_bytes = vec![0u8; name_len];
        r.read_exact(&mut name_bytes, "name")?;
        let name = String::from_utf8(name_bytes).map_err(|e| Error::Format {
            offset: at,
            message: format!("parameter name is not UTF-8: {e}"),
        })?;
        let rank = r.read_u64("shape rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.read_u64("dim")? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            data.push(r.read_f64("value")?);
        }
        let tensor = Tensor::from_vec(shape, data)?;

        let mut parts = name.splitn(3, '.');
        let (group, index, kind) = (parts.next(), parts.next(), parts.next());
        let index: usize = index
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format {
                offset: at,
                message: format!("unrecognized parameter name {name:?}"),
            })?;
        let slot = match kind {
            Some("weight") => "weight",
            Some("bias") => "bias",
            _ => {
                return Err(Error::Format {
                    offset: at,
                    message: format!("unrecognized parameter name {name:?}"),
                })
            }
        };
        match group {
            Some("encoder") => encoder.push((index, slot, tensor)),
            Some("projection") => projection.push((index, slot, tensor)),
            _ => {
                return Err(Error::Format {
                    offset: at,
                    message: format!("unrecognized parameter name {name:?}"),
                })
            }
        }
    }

    let build = |mut entries: Vec<(usize, &'static str, Tensor)>| -> Result<Mlp> {
        entries.sort_by_key(|(i, slot, _)| (*i, if *slot == "weight" { 0 } else { 1 }));
        let mut layers = Vec::new();
        let mut iter = entries.into_iter().peekable();
        while let Some((i, slot, weight)) = iter.next() {
            if slot != "weight" {
                return Err(Error::Format {
                    offset: 0,
                    message: format!("layer {i} has a bias without a weight"),
                });
            }
            match iter.next() {
                Some((j, "bias", bias)) if j == i => layers.push(DenseLayer { weight, bias }),
                _ => {
                    return Err(Error::Format {
                        offset: 0,
                        message: format!("layer {i} has a weight without a bias"),
                    })
                }
            }
        }
        Mlp::from_layers(layers)
    };

    Ok(Model {
        encoder: build(encoder)?,
        projection: build(projection)?,
    })
}
