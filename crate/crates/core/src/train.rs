//! Mini-batch SGD training of [`SaliencyNet`] and batched inference.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use smokesal_tensor::{par, Real, Sgd, Tape, Tensor};

use crate::dataset::Sample;
use crate::image::map_to_tensor;
use crate::net::{Fusion, FusionInputs, Prediction, SaliencyNet};
use crate::objectness::{objectness_unit_map, ObjectnessParams};
use crate::superpixel::{slic, SlicParams};
use crate::{Error, Result};

/// Learning rate over the course of a run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    Constant,
    /// Half-cosine from the base rate at step 0 down to zero at the end.
    Cosine,
}

impl LrSchedule {
    pub fn rate(self, base: f64, step: usize, steps: usize) -> f64 {
        match self {
            LrSchedule::Constant => base,
            LrSchedule::Cosine => {
                let t = step as f64 / steps.max(1) as f64;
                0.5 * base * (1.0 + (std::f64::consts::PI * t).cos())
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    /// Base learning rate; see `lr_schedule`.
    pub learning_rate: f64,
    pub lr_schedule: LrSchedule,
    pub momentum: f64,
    /// Rescales each parameter's gradient whose L2 norm exceeds this value.
    pub max_grad_norm: Option<f64>,
    /// Randomly mirrors each training item horizontally and vertically.
    pub flips: bool,
    /// Seed of the batch shuffling and flips.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 500,
            batch_size: 16,
            learning_rate: 0.01,
            lr_schedule: LrSchedule::Cosine,
            momentum: 0.9,
            max_grad_norm: Some(0.5),
            flips: true,
            seed: 0,
        }
    }
}

/// A sample converted to network inputs.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub id: String,
    pub image: Tensor,
    pub mask: Tensor,
    pub label: usize,
    pub object: Tensor,
    pub regions: Option<Vec<u32>>,
}

/// Converts samples to tensors, computing object-level maps from the
/// boxes and, for region fusion, SLIC labels.
pub fn prepare(
    samples: &[Sample],
    net: &SaliencyNet,
    objectness: &ObjectnessParams,
    slic_params: &SlicParams,
) -> Result<Vec<Prepared>> {
    let [h, w] = net.config().input_size;
    let need_regions = net.config().fusion == Fusion::PixelObjectRegion;
    par::map_indexed(samples.len(), |i| {
        let s = &samples[i];
        if s.image.size() != (w, h) {
            return Err(Error::invalid(format!(
                "sample {} is {}×{}, model input is {w}×{h}",
                s.id, s.image.width, s.image.height
            )));
        }
        let object = objectness_unit_map(&s.boxes, w, h, objectness)?;
        let regions = if need_regions {
            Some(slic(&s.image, slic_params)?.labels.data)
        } else {
            None
        };
        Ok(Prepared {
            id: s.id.clone(),
            image: s.image.to_tensor(),
            mask: map_to_tensor(&s.mask.map(|&m| if m { 1.0 } else { 0.0 })),
            label: s.label as usize,
            object: map_to_tensor(&object),
            regions,
        })
    })
    .into_iter()
    .collect()
}

fn flip_tensor(t: &Tensor, fx: bool, fy: bool) -> Tensor {
    let s = t.shape();
    Tensor::from_fn(s, |n, c, y, x| {
        let sx = if fx { s.w - 1 - x } else { x };
        let sy = if fy { s.h - 1 - y } else { y };
        t.at(n, c, sy, sx)
    })
}

impl Prepared {
    /// Mirror image of this item.
    pub fn flipped(&self, horizontal: bool, vertical: bool) -> Prepared {
        if !horizontal && !vertical {
            return self.clone();
        }
        let s = self.image.shape();
        let regions = self.regions.as_ref().map(|r| {
            (0..s.h * s.w)
                .map(|i| {
                    let (x, y) = (i % s.w, i / s.w);
                    let sx = if horizontal { s.w - 1 - x } else { x };
                    let sy = if vertical { s.h - 1 - y } else { y };
                    r[sy * s.w + sx]
                })
                .collect()
        });
        Prepared {
            id: self.id.clone(),
            image: flip_tensor(&self.image, horizontal, vertical),
            mask: flip_tensor(&self.mask, horizontal, vertical),
            label: self.label,
            object: flip_tensor(&self.object, horizontal, vertical),
            regions,
        }
    }
}

/// Stacked network inputs of a batch.
pub struct Batch {
    pub images: Tensor,
    pub inputs: FusionInputs,
    pub masks: Tensor,
    pub labels: Vec<usize>,
}

pub fn make_batch(items: &[&Prepared]) -> Result<Batch> {
    let stack = |f: &dyn Fn(&Prepared) -> Tensor| -> Result<Tensor> {
        Ok(Tensor::stack(&items.iter().map(|p| f(p)).collect::<Vec<_>>())?)
    };
    let regions = items
        .iter()
        .map(|p| p.regions.clone())
        .collect::<Option<Vec<_>>>();
    Ok(Batch {
        images: stack(&|p| p.image.clone())?,
        inputs: FusionInputs {
            object: Some(stack(&|p| p.object.clone())?),
            regions,
        },
        masks: stack(&|p| p.mask.clone())?,
        labels: items.iter().map(|p| p.label).collect(),
    })
}

/// One forward/backward/update cycle. Returns the batch loss before the
/// update.
pub fn train_step(net: &mut SaliencyNet, batch: &Batch, sgd: &Sgd, max_grad_norm: Option<f64>) -> Result<f64> {
    let mut tape = Tape::new();
    let x = tape.input(batch.images.clone());
    let fwd = net.forward(&mut tape, x, &batch.inputs)?;
    let loss = net.loss(&mut tape, &fwd, &batch.masks, &batch.labels)?;
    let value = tape.value(loss).data()[0] as f64;
    if !value.is_finite() {
        return Err(Error::Numerical(format!("training loss became {value}")));
    }
    net.params_mut().zero_grad();
    tape.backward_into(loss, net.params_mut())?;
    if let Some(limit) = max_grad_norm {
        clip_gradients(net, limit);
    }
    sgd.step(net.params_mut())?;
    Ok(value)
}

fn clip_gradients(net: &mut SaliencyNet, limit: f64) {
    for p in net.params_mut().iter_mut() {
        let norm = p.grad.data().iter().map(|&g| (g as f64) * (g as f64)).sum::<f64>().sqrt();
        if norm > limit {
            let factor = (limit / norm) as Real;
            p.grad.data_mut().iter_mut().for_each(|g| *g *= factor);
        }
    }
}

/// Deterministic epoch-shuffled batch order.
pub struct BatchOrder {
    rng: ChaCha8Rng,
    order: Vec<usize>,
    pos: usize,
    batch_size: usize,
}

impl BatchOrder {
    pub fn new(len: usize, batch_size: usize, seed: u64) -> Self {
        let mut b = BatchOrder {
            rng: ChaCha8Rng::seed_from_u64(seed),
            order: (0..len).collect(),
            pos: len,
            batch_size: batch_size.clamp(1, len.max(1)),
        };
        b.reshuffle_if_needed();
        b
    }

    fn reshuffle_if_needed(&mut self) {
        if self.pos + self.batch_size > self.order.len() {
            self.order.sort_unstable();
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
    }

    pub fn next_batch(&mut self) -> Vec<usize> {
        self.reshuffle_if_needed();
        let b = self.order[self.pos..self.pos + self.batch_size].to_vec();
        self.pos += self.batch_size;
        b
    }
}

/// Trains for `config.steps` steps, calling `on_step(step, loss)` after
/// each. Returns the loss trajectory.
pub fn train(
    net: &mut SaliencyNet,
    data: &[Prepared],
    config: &TrainConfig,
    mut on_step: impl FnMut(usize, f64),
) -> Result<Vec<f64>> {
    if data.is_empty() && config.steps > 0 {
        return Err(Error::invalid("training set is empty"));
    }
    let mut order = BatchOrder::new(data.len(), config.batch_size, config.seed);
    let mut flip_rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x9e37_79b9_7f4a_7c15));
    let mut losses = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        let idx = order.next_batch();
        let items: Vec<Prepared> = idx
            .iter()
            .map(|&i| {
                let (h, v) = if config.flips {
                    (flip_rng.gen_bool(0.5), flip_rng.gen_bool(0.5))
                } else {
                    (false, false)
                };
                data[i].flipped(h, v)
            })
            .collect();
        let batch = make_batch(&items.iter().collect::<Vec<_>>())?;
        let lr = config.lr_schedule.rate(config.learning_rate, step, config.steps);
        let sgd = Sgd::new(lr as Real, config.momentum as Real);
        let loss = train_step(net, &batch, &sgd, config.max_grad_norm)?;
        on_step(step, loss);
        losses.push(loss);
    }
    Ok(losses)
}

/// Runs inference over prepared samples in chunks of `batch_size`.
pub fn predict_all(net: &SaliencyNet, data: &[Prepared], batch_size: usize) -> Result<Vec<Prediction>> {
    let mut out = Vec::with_capacity(data.len());
    for chunk in data.chunks(batch_size.max(1)) {
        let items: Vec<&Prepared> = chunk.iter().collect();
        let batch = make_batch(&items)?;
        out.extend(net.predict(&batch.images, &batch.inputs)?);
    }
    Ok(out)
}
