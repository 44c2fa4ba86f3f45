//! Pixel-level saliency network: VGG-style encoder, recurrent convolutional
//! decoder, saliency fusion and frame-level existence heads.

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use smokesal_tensor::{glorot_uniform, he_uniform, snapshot, ParamSet, Real, Shape, Tape, Tensor, Var};

use crate::{Error, Result};

/// Frame-level existence prediction head.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Strategy {
    /// Fully connected layer on SmRCL1.
    S1,
    /// Two 3×3 convolutions, then fully connected, on SmRCL1.
    S2,
    /// Average-pooled SmRCL1 gated by a 1-channel projection of Conv4_3.
    S3,
    /// As S3 with a sigmoid on the gate.
    S4,
    /// Average-pooled Conv4_3, then fully connected.
    S5,
    /// SmRCL1 gated by a 1-channel projection of Conv1_2.
    S6,
}

impl Strategy {
    pub const ALL: [Strategy; 6] = [
        Strategy::S1,
        Strategy::S2,
        Strategy::S3,
        Strategy::S4,
        Strategy::S5,
        Strategy::S6,
    ];
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|k| format!("{k:?}").eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown existence strategy {s:?} (expected S1..S6)")))
    }
}

/// Which saliency maps enter the fusion layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fusion {
    /// No fusion: the pixel-level map is the output.
    PixelOnly,
    PixelObject,
    /// Pixel-level, object-level and superpixel-mean region-level maps.
    PixelObjectRegion,
}

impl Fusion {
    pub fn inputs(self) -> usize {
        match self {
            Fusion::PixelOnly => 1,
            Fusion::PixelObject => 2,
            Fusion::PixelObjectRegion => 3,
        }
    }
}

/// Weighting of the pixel term of the joint loss. With `α` the fraction of
/// salient pixels, `Literal` weights positives by `α` and negatives by
/// `1 − α`; `Balanced` swaps the two.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossWeighting {
    Literal,
    Balanced,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    /// `[height, width]`, both divisible by 8.
    pub input_size: [usize; 2],
    /// Factor applied to the VGG channel plan 64-128-256-512-512 and to
    /// the decoder width.
    pub channel_scale: f64,
    pub rcl_steps: usize,
    pub rcl_channels: usize,
    pub existence_strategy: Strategy,
    /// Adds loss terms on SmRCL2..4 against downsampled masks.
    pub supervise_intermediate: bool,
    pub fusion: Fusion,
    pub loss_weighting: LossWeighting,
    pub init_seed: u64,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            input_size: [64, 64],
            channel_scale: 0.125,
            rcl_steps: 3,
            rcl_channels: 64,
            existence_strategy: Strategy::S3,
            supervise_intermediate: false,
            fusion: Fusion::PixelObject,
            loss_weighting: LossWeighting::Literal,
            init_seed: 0,
        }
    }
}

const VGG_CHANNELS: [usize; 5] = [64, 128, 256, 512, 512];
const VGG_DEPTHS: [usize; 5] = [2, 2, 3, 3, 3];
const HEAD_CHANNELS: usize = 64;

fn scaled(c: usize, scale: f64) -> usize {
    ((c as f64 * scale).round() as usize).max(1)
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        let [h, w] = self.input_size;
        if h == 0 || w == 0 || h % 8 != 0 || w % 8 != 0 {
            return Err(Error::Config(format!("input size {h}×{w} must be a positive multiple of 8")));
        }
        if !(self.channel_scale > 0.0) || !self.channel_scale.is_finite() {
            return Err(Error::Config(format!("channel_scale {} must be positive", self.channel_scale)));
        }
        if self.rcl_steps == 0 {
            return Err(Error::Config("rcl_steps must be at least 1".into()));
        }
        if self.rcl_channels == 0 {
            return Err(Error::Config("rcl_channels must be at least 1".into()));
        }
        if self.existence_strategy == Strategy::S5 && (h < 64 || w < 64) {
            return Err(Error::Config(format!(
                "strategy S5 pools Conv4_3 with an 8×8 window and needs inputs of at least 64×64, got {h}×{w}"
            )));
        }
        Ok(())
    }

    pub fn encoder_channels(&self) -> [usize; 5] {
        VGG_CHANNELS.map(|c| scaled(c, self.channel_scale))
    }

    pub fn decoder_channels(&self) -> usize {
        scaled(self.rcl_channels, self.channel_scale)
    }

    fn head_channels(&self) -> usize {
        scaled(HEAD_CHANNELS, self.channel_scale)
    }
}

/// Encoder feature maps used by the decoder and the existence heads.
#[derive(Clone, Copy, Debug)]
pub struct EncoderFeatures {
    pub conv1_2: Var,
    pub conv2_2: Var,
    pub conv3_3: Var,
    pub conv4_3: Var,
    pub conv5_3: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct DecoderOutputs {
    pub smrcl4: Var,
    pub smrcl3: Var,
    pub smrcl2: Var,
    pub smrcl1: Var,
    /// Sigmoid saliency at input resolution.
    pub pixel_map: Var,
}

/// Everything a forward pass produces.
#[derive(Clone, Copy, Debug)]
pub struct Forward {
    pub encoder: EncoderFeatures,
    pub decoder: DecoderOutputs,
    /// Fused saliency, or the pixel map when fusion is disabled.
    pub saliency: Var,
    pub logits: Var,
    pub existence: Var,
}

/// Auxiliary per-image inputs of the fusion layer.
#[derive(Clone, Debug, Default)]
pub struct FusionInputs {
    /// Object-level maps in `[0, 1]`, `N × 1 × H × W`.
    pub object: Option<Tensor>,
    /// Superpixel label maps, one per batch item.
    pub regions: Option<Vec<Vec<u32>>>,
}

/// Counts of the building blocks found in a constructed model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Architecture {
    pub encoder_convolutions: usize,
    pub pooling_layers: usize,
    pub rcl_blocks: usize,
    pub transposed_convolutions: usize,
}

/// Fusion weight initialization: each input map enters with this weight
/// and the bias is centred so that all-half inputs give σ(0).
const FUSION_INIT_WEIGHT: Real = 4.0;

pub struct SaliencyNet {
    config: NetConfig,
    params: ParamSet,
}

fn layer_names() -> Vec<String> {
    let mut names = Vec::new();
    for (b, &depth) in VGG_DEPTHS.iter().enumerate() {
        for l in 0..depth {
            names.push(format!("conv{}_{}", b + 1, l + 1));
        }
    }
    names
}

impl SaliencyNet {
    pub fn new(config: NetConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let mut params = ParamSet::new();
        let enc = config.encoder_channels();
        let rc = config.decoder_channels();
        let [h, w] = config.input_size;

        let add_conv = |params: &mut ParamSet,
                        rng: &mut ChaCha8Rng,
                        name: &str,
                        (cin, cout, k): (usize, usize, usize),
                        relu: bool,
                        bias: bool|
         -> Result<()> {
            let shape = Shape::new(cout, cin, k, k);
            let weight = if relu {
                he_uniform(shape, false, rng)
            } else {
                glorot_uniform(shape, false, rng)
            };
            params.add(format!("{name}.weight"), weight)?;
            if bias {
                params.add(format!("{name}.bias"), Tensor::zeros([1, cout, 1, 1]))?;
            }
            Ok(())
        };

        let mut cin = 3;
        let mut li = 0;
        let names = layer_names();
        for (b, &depth) in VGG_DEPTHS.iter().enumerate() {
            for _ in 0..depth {
                add_conv(&mut params, &mut rng, &names[li], (cin, enc[b], 3), true, true)?;
                cin = enc[b];
                li += 1;
            }
        }
        add_conv(&mut params, &mut rng, "coarse", (enc[4], rc, 1), false, true)?;
        let skips = [enc[3], enc[2], enc[1], enc[0]];
        for (i, &skip) in skips.iter().enumerate() {
            let name = format!("smrcl{}", 4 - i);
            add_conv(&mut params, &mut rng, &format!("{name}.ff"), (rc + skip, rc, 3), true, true)?;
            add_conv(&mut params, &mut rng, &format!("{name}.rec"), (rc, rc, 3), true, false)?;
            add_conv(&mut params, &mut rng, &format!("{name}.out"), (rc, rc, 1), false, true)?;
            if i < 3 {
                let up = format!("up{}", 3 - i);
                params.add(
                    format!("{up}.weight"),
                    glorot_uniform(Shape::new(rc, rc, 2, 2), true, &mut rng),
                )?;
            }
        }
        add_conv(&mut params, &mut rng, "pixel", (rc, 1, 1), false, true)?;
        if config.supervise_intermediate {
            for s in 2..=4 {
                add_conv(&mut params, &mut rng, &format!("aux{s}"), (rc, 1, 1), false, true)?;
            }
        }
        let k = config.fusion.inputs();
        if k > 1 {
            params.add("fusion.weight", Tensor::full([1, k, 1, 1], FUSION_INIT_WEIGHT))?;
            params.add("fusion.bias", Tensor::full([1, 1, 1, 1], -FUSION_INIT_WEIGHT * k as Real / 2.0))?;
        }

        let hc = config.head_channels();
        let features = match config.existence_strategy {
            Strategy::S1 | Strategy::S6 => rc * h * w,
            Strategy::S2 => hc * h * w,
            Strategy::S3 | Strategy::S4 => rc * (h / 8) * (w / 8),
            Strategy::S5 => enc[3] * (h / 64) * (w / 64),
        };
        match config.existence_strategy {
            Strategy::S2 => {
                add_conv(&mut params, &mut rng, "head.conv1", (rc, hc, 3), true, true)?;
                add_conv(&mut params, &mut rng, "head.conv2", (hc, hc, 3), true, true)?;
            }
            Strategy::S3 | Strategy::S4 => add_conv(&mut params, &mut rng, "head.gate", (enc[3], 1, 1), false, true)?,
            Strategy::S6 => add_conv(&mut params, &mut rng, "head.gate", (enc[0], 1, 1), false, true)?,
            Strategy::S1 | Strategy::S5 => {}
        }
        params.add("head.fc.weight", glorot_uniform(Shape::new(2, features, 1, 1), false, &mut rng))?;
        params.add("head.fc.bias", Tensor::zeros([1, 2, 1, 1]))?;
        Ok(SaliencyNet { config, params })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn p(&self, tape: &mut Tape, name: &str) -> Result<Var> {
        let id = self
            .params
            .find(name)
            .ok_or_else(|| Error::invalid(format!("model has no parameter {name}")))?;
        Ok(tape.param(&self.params, id))
    }

    fn conv(&self, tape: &mut Tape, name: &str, x: Var, k: usize, bias: bool) -> Result<Var> {
        let w = self.p(tape, &format!("{name}.weight"))?;
        let b = if bias { Some(self.p(tape, &format!("{name}.bias"))?) } else { None };
        Ok(tape.conv2d(x, w, b, 1, k / 2)?)
    }

    fn check_input(&self, tape: &Tape, x: Var) -> Result<()> {
        let s = tape.shape(x);
        let [h, w] = self.config.input_size;
        if s.c != 3 || s.h != h || s.w != w {
            return Err(Error::invalid(format!(
                "model expects N×3×{h}×{w} images, got {s}"
            )));
        }
        Ok(())
    }

    /// Runs the 13-convolution encoder with pools after blocks 1-4: three
    /// 2×2/stride-2 pools and a final 3×3/stride-1 pool.
    pub fn encode(&self, tape: &mut Tape, x: Var) -> Result<EncoderFeatures> {
        self.check_input(tape, x)?;
        let names = layer_names();
        let mut h = x;
        let mut outs = Vec::with_capacity(5);
        let mut li = 0;
        for (b, &depth) in VGG_DEPTHS.iter().enumerate() {
            for _ in 0..depth {
                h = self.conv(tape, &names[li], h, 3, true)?;
                h = tape.relu(h)?;
                li += 1;
            }
            outs.push(h);
            h = match b {
                0..=2 => tape.maxpool(h, 2, 2)?,
                3 => tape.maxpool(h, 3, 1)?,
                _ => h,
            };
        }
        Ok(EncoderFeatures {
            conv1_2: outs[0],
            conv2_2: outs[1],
            conv3_3: outs[2],
            conv4_3: outs[3],
            conv5_3: outs[4],
        })
    }

    /// Unrolled recurrent convolutional layer: the feed-forward response
    /// is recomputed into every step and the recurrent kernel is shared.
    pub fn rcl_forward(&self, tape: &mut Tape, block: &str, x: Var) -> Result<Var> {
        let ff = self.conv(tape, &format!("{block}.ff"), x, 3, true)?;
        let mut state = ff;
        for _ in 0..self.config.rcl_steps {
            let rec = self.conv(tape, &format!("{block}.rec"), state, 3, false)?;
            let sum = tape.add(ff, rec)?;
            state = tape.relu(sum)?;
        }
        self.conv(tape, &format!("{block}.out"), state, 1, true)
    }

    pub fn decode(&self, tape: &mut Tape, enc: &EncoderFeatures) -> Result<DecoderOutputs> {
        let coarse = self.conv(tape, "coarse", enc.conv5_3, 1, true)?;
        let x = self.concat_checked(tape, coarse, enc.conv4_3)?;
        let smrcl4 = self.rcl_forward(tape, "smrcl4", x)?;
        let mut prev = smrcl4;
        let mut blocks = Vec::with_capacity(3);
        for (i, skip) in [enc.conv3_3, enc.conv2_2, enc.conv1_2].into_iter().enumerate() {
            let wt = self.p(tape, &format!("up{}.weight", 3 - i))?;
            let up = tape.transposed_conv2d(prev, wt, 2)?;
            let x = self.concat_checked(tape, up, skip)?;
            prev = self.rcl_forward(tape, &format!("smrcl{}", 3 - i), x)?;
            blocks.push(prev);
        }
        let logits = self.conv(tape, "pixel", blocks[2], 1, true)?;
        let pixel_map = tape.sigmoid(logits)?;
        Ok(DecoderOutputs {
            smrcl4,
            smrcl3: blocks[0],
            smrcl2: blocks[1],
            smrcl1: blocks[2],
            pixel_map,
        })
    }

    fn concat_checked(&self, tape: &mut Tape, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (tape.shape(a), tape.shape(b));
        if sa.h != sb.h || sa.w != sb.w {
            return Err(Error::invalid(format!(
                "decoder signal {sa} does not match skip feature {sb}"
            )));
        }
        Ok(tape.concat_channels(&[a, b])?)
    }

    /// `σ(W·X + b)` over the channel-concatenated maps.
    pub fn fuse(&self, tape: &mut Tape, maps: &[Var]) -> Result<Var> {
        if maps.len() != self.config.fusion.inputs() || maps.len() < 2 {
            return Err(Error::invalid(format!(
                "fusion configured for {} maps, got {}",
                self.config.fusion.inputs(),
                maps.len()
            )));
        }
        let s0 = tape.shape(maps[0]);
        if let Some(&bad) = maps.iter().find(|&&m| tape.shape(m) != s0) {
            return Err(Error::invalid(format!(
                "fusion inputs differ in shape: {s0} vs {}",
                tape.shape(bad)
            )));
        }
        let x = tape.concat_channels(maps)?;
        let f = self.conv(tape, "fusion", x, 1, true)?;
        Ok(tape.sigmoid(f)?)
    }

    /// Existence logits, `N × 2 × 1 × 1`.
    pub fn existence(&self, tape: &mut Tape, enc: &EncoderFeatures, dec: &DecoderOutputs) -> Result<Var> {
        let features = match self.config.existence_strategy {
            Strategy::S1 => dec.smrcl1,
            Strategy::S2 => {
                let a = self.conv(tape, "head.conv1", dec.smrcl1, 3, true)?;
                let a = tape.relu(a)?;
                let b = self.conv(tape, "head.conv2", a, 3, true)?;
                tape.relu(b)?
            }
            Strategy::S3 | Strategy::S4 => {
                let pooled = tape.avgpool(dec.smrcl1, 8, 8)?;
                let gate = self.existence_gate(tape, enc)?;
                self.gated(tape, pooled, gate)?
            }
            Strategy::S5 => tape.avgpool(enc.conv4_3, 8, 8)?,
            Strategy::S6 => {
                let gate = self.existence_gate(tape, enc)?;
                self.gated(tape, dec.smrcl1, gate)?
            }
        };
        let w = self.p(tape, "head.fc.weight")?;
        let b = self.p(tape, "head.fc.bias")?;
        Ok(tape.fully_connected(features, w, b)?)
    }

    /// The single-channel gate of strategies S3, S4 and S6, after the
    /// sigmoid for S4.
    pub fn existence_gate(&self, tape: &mut Tape, enc: &EncoderFeatures) -> Result<Var> {
        let source = match self.config.existence_strategy {
            Strategy::S3 | Strategy::S4 => enc.conv4_3,
            Strategy::S6 => enc.conv1_2,
            other => return Err(Error::invalid(format!("strategy {other:?} has no gate branch"))),
        };
        let g = self.conv(tape, "head.gate", source, 1, true)?;
        if self.config.existence_strategy == Strategy::S4 {
            Ok(tape.sigmoid(g)?)
        } else {
            Ok(g)
        }
    }

    fn gated(&self, tape: &mut Tape, x: Var, gate: Var) -> Result<Var> {
        let (sx, sg) = (tape.shape(x), tape.shape(gate));
        if sx.h != sg.h || sx.w != sg.w {
            return Err(Error::invalid(format!(
                "existence product branches differ in resolution: {sx} vs {sg}"
            )));
        }
        Ok(tape.mul_channels(x, gate)?)
    }

    /// Full forward pass on an `N × 3 × H × W` batch.
    pub fn forward(&self, tape: &mut Tape, images: Var, inputs: &FusionInputs) -> Result<Forward> {
        let encoder = self.encode(tape, images)?;
        let decoder = self.decode(tape, &encoder)?;
        let saliency = match self.config.fusion {
            Fusion::PixelOnly => decoder.pixel_map,
            fusion => {
                let object = inputs
                    .object
                    .clone()
                    .ok_or_else(|| Error::invalid("fusion requires object-level maps"))?;
                let object = tape.input(object);
                let mut maps = vec![decoder.pixel_map, object];
                if fusion == Fusion::PixelObjectRegion {
                    let labels = inputs
                        .regions
                        .as_ref()
                        .ok_or_else(|| Error::invalid("region fusion requires superpixel labels"))?;
                    maps.push(tape.segment_mean(decoder.pixel_map, labels)?);
                }
                self.fuse(tape, &maps)?
            }
        };
        let logits = self.existence(tape, &encoder, &decoder)?;
        let existence = tape.softmax2(logits)?;
        Ok(Forward {
            encoder,
            decoder,
            saliency,
            logits,
            existence,
        })
    }

    /// Joint pixel and frame loss of one batch, averaged over items.
    pub fn joint_loss(
        &self,
        tape: &mut Tape,
        saliency: Var,
        logits: Var,
        masks: &Tensor,
        labels: &[usize],
    ) -> Result<Var> {
        joint_loss(tape, saliency, logits, masks, labels, self.config.loss_weighting)
    }

    /// Training objective: joint loss on the pixel-level map, the same
    /// pixel term on the fused map when fusion is enabled, plus optional
    /// terms on intermediate decoder maps.
    pub fn loss(&self, tape: &mut Tape, fwd: &Forward, masks: &Tensor, labels: &[usize]) -> Result<Var> {
        let mut loss = self.joint_loss(tape, fwd.decoder.pixel_map, fwd.logits, masks, labels)?;
        if fwd.saliency != fwd.decoder.pixel_map {
            let (pos, neg) = pixel_weights(masks, self.config.loss_weighting);
            let term = tape.weighted_bce(fwd.saliency, masks, &pos, &neg)?;
            loss = tape.add(loss, term)?;
        }
        if self.config.supervise_intermediate {
            let levels = [(2, fwd.decoder.smrcl2, 2), (3, fwd.decoder.smrcl3, 4), (4, fwd.decoder.smrcl4, 8)];
            for (s, block, factor) in levels {
                let logit = self.conv(tape, &format!("aux{s}"), block, 1, true)?;
                let p = tape.sigmoid(logit)?;
                let target = downsample_mask(masks, factor);
                let (pos, neg) = pixel_weights(&target, self.config.loss_weighting);
                let term = tape.weighted_bce(p, &target, &pos, &neg)?;
                loss = tape.add(loss, term)?;
            }
        }
        Ok(loss)
    }

    /// Counts encoder convolutions and RCL blocks among the parameters and
    /// pooling layers and transposed convolutions on a recorded forward pass.
    pub fn architecture(&self) -> Result<Architecture> {
        let [h, w] = self.config.input_size;
        let mut tape = Tape::inference();
        let x = tape.input(Tensor::zeros([1, 3, h, w]));
        let enc = self.encode(&mut tape, x)?;
        self.decode(&mut tape, &enc)?;
        let ops = tape.op_names();
        let count_ops = |name: &str| ops.iter().filter(|&&o| o == name).count();
        let count_params = |pred: &dyn Fn(&str) -> bool| self.params.iter().filter(|p| pred(&p.id)).count();
        Ok(Architecture {
            encoder_convolutions: count_params(&|id| id.starts_with("conv") && id.ends_with(".weight")),
            pooling_layers: count_ops("maxpool"),
            rcl_blocks: count_params(&|id| id.starts_with("smrcl") && id.ends_with(".rec.weight")),
            transposed_convolutions: count_ops("transposed_conv2d"),
        })
    }

    /// Inference on a batch; returns per-item output saliency, pixel-level
    /// saliency and smoke probability.
    pub fn predict(&self, images: &Tensor, inputs: &FusionInputs) -> Result<Vec<Prediction>> {
        let mut tape = Tape::inference().check_finite(true);
        let x = tape.input(images.clone());
        let fwd = self.forward(&mut tape, x, inputs)?;
        let s = tape.value(fwd.saliency);
        let p = tape.value(fwd.decoder.pixel_map);
        let e = tape.value(fwd.existence);
        Ok((0..images.shape().n)
            .map(|n| Prediction {
                saliency: crate::image::tensor_to_map(s, n),
                pixel_map: crate::image::tensor_to_map(p, n),
                existence_probability: e.data()[2 * n + 1] as f64,
            })
            .collect())
    }

    /// Writes the parameters and a JSON sidecar holding the configuration.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        snapshot::save(&self.params, path)?;
        let json = serde_json::to_string_pretty(&self.config).expect("config serializes");
        let side = sidecar(path);
        fs::write(&side, json).map_err(|e| Error::io(side, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let side = sidecar(path);
        let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
        let config: NetConfig =
            serde_json::from_str(&text).map_err(|e| Error::data(&side, format!("invalid model config: {e}")))?;
        let mut net = SaliencyNet::new(config)?;
        snapshot::load_into(&mut net.params, path).map_err(|e| Error::data(path, e.to_string()))?;
        Ok(net)
    }
}

/// Sidecar path of a checkpoint: `model.smkt` → `model.json`.
pub fn sidecar(path: &Path) -> PathBuf {
    path.with_extension("json")
}

#[derive(Clone, Debug)]
pub struct Prediction {
    pub saliency: crate::image::Map,
    pub pixel_map: crate::image::Map,
    pub existence_probability: f64,
}

/// Per-item pixel-term weights `(w⁺, w⁻)` from the salient fraction `α`.
pub fn pixel_weights(masks: &Tensor, weighting: LossWeighting) -> (Vec<Real>, Vec<Real>) {
    let s = masks.shape();
    (0..s.n)
        .map(|n| {
            let item = masks.item(n);
            let alpha = item.iter().sum::<Real>() / item.len() as Real;
            match weighting {
                LossWeighting::Literal => (alpha, 1.0 - alpha),
                LossWeighting::Balanced => (1.0 - alpha, alpha),
            }
        })
        .unzip()
}

/// `−Σᵢ [w⁺·yᵢ·log pᵢ + w⁻·(1 − yᵢ)·log(1 − pᵢ)] − log z_y`, averaged over
/// the batch.
pub fn joint_loss(
    tape: &mut Tape,
    saliency: Var,
    logits: Var,
    masks: &Tensor,
    labels: &[usize],
    weighting: LossWeighting,
) -> Result<Var> {
    if !tape.value(logits).is_finite() {
        return Err(Error::Numerical("existence logits are not finite".into()));
    }
    let (pos, neg) = pixel_weights(masks, weighting);
    let pixel = tape.weighted_bce(saliency, masks, &pos, &neg)?;
    let frame = tape.softmax_cross_entropy(logits, labels)?;
    Ok(tape.add(pixel, frame)?)
}

/// Block-majority downsampling of binary masks by `factor`; ties count as
/// salient.
pub fn downsample_mask(masks: &Tensor, factor: usize) -> Tensor {
    let s = masks.shape();
    let (h, w) = (s.h / factor, s.w / factor);
    Tensor::from_fn([s.n, s.c, h, w], |n, c, y, x| {
        let mut sum = 0.0;
        for dy in 0..factor {
            for dx in 0..factor {
                sum += masks.at(n, c, y * factor + dy, x * factor + dx);
            }
        }
        if 2.0 * sum >= (factor * factor) as Real {
            1.0
        } else {
            0.0
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(strategy: Strategy) -> NetConfig {
        NetConfig {
            input_size: [64, 64],
            channel_scale: 1.0 / 16.0,
            rcl_steps: 2,
            existence_strategy: strategy,
            ..Default::default()
        }
    }

    #[test]
    fn rejects_bad_sizes() {
        let cfg = NetConfig {
            input_size: [60, 64],
            ..Default::default()
        };
        assert!(SaliencyNet::new(cfg).is_err());
    }

    #[test]
    fn channel_plan() {
        let cfg = NetConfig {
            channel_scale: 0.125,
            ..Default::default()
        };
        assert_eq!(cfg.encoder_channels(), [8, 16, 32, 64, 64]);
        assert_eq!(cfg.decoder_channels(), 8);
    }

    #[test]
    fn strategy_parse() {
        assert_eq!("s4".parse::<Strategy>().unwrap(), Strategy::S4);
        assert!("S7".parse::<Strategy>().is_err());
    }

    #[test]
    fn encoder_resolutions() {
        let net = SaliencyNet::new(small(Strategy::S3)).unwrap();
        let mut tape = Tape::inference();
        let x = tape.input(Tensor::full([1, 3, 64, 64], 0.5));
        let enc = net.encode(&mut tape, x).unwrap();
        assert_eq!(tape.shape(enc.conv1_2).h, 64);
        assert_eq!(tape.shape(enc.conv2_2).h, 32);
        assert_eq!(tape.shape(enc.conv3_3).h, 16);
        assert_eq!(tape.shape(enc.conv4_3).h, 8);
        assert_eq!(tape.shape(enc.conv5_3).h, 8);
        let dec = net.decode(&mut tape, &enc).unwrap();
        assert_eq!(tape.shape(dec.smrcl4).h, 8);
        assert_eq!(tape.shape(dec.smrcl3).h, 16);
        assert_eq!(tape.shape(dec.smrcl2).h, 32);
        assert_eq!(tape.shape(dec.pixel_map), Shape::new(1, 1, 64, 64));
    }

    #[test]
    fn downsampling_majority() {
        let m = Tensor::from_vec([1, 1, 2, 4], vec![1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        let d = downsample_mask(&m, 2);
        assert_eq!(d.data(), &[1.0, 0.0]);
    }
}
