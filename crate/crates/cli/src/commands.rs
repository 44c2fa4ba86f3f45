//! One function per subcommand. Each takes the resolved [`RunConfig`],
//! writes its artifacts and returns a summary that the binary prints.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use smokesal_core::augment::{composite_poisson, hide_and_seek, synth_dataset, CompositeJob, Solver};
use smokesal_core::dataset::{load_dataset, write_dataset, DatasetManifest, Sample};
use smokesal_core::eval::{evaluate, image_stats, pr_curve, write_pr_csv, AreaRatio, Averaging, EvalItem, ImageStats, MetricsReport};
use smokesal_core::image::{map_to_tensor, read_gray8, read_rgb, tensor_to_map, write_gray16, write_gray8, write_rgb, Gray8, Map};
use smokesal_core::net::{Fusion, NetConfig, SaliencyNet};
use smokesal_core::objectness::{normalize_u8, objectness_map, objectness_unit_map, BBox};
use smokesal_core::superpixel::{labels_to_u16, render_overlap, slic};
use smokesal_core::train::{predict_all, prepare, train};
use smokesal_core::{Error, Result};
use smokesal_tensor::{Tape, Tensor};

use crate::config::{Provenance, RunConfig};

pub const CHECKPOINT: &str = "model.smkt";
pub const LOSS_LOG: &str = "loss.csv";
pub const TRAIN_SUMMARY: &str = "train.json";
pub const EXISTENCE: &str = "existence.json";

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut text = serde_json::to_string_pretty(value).expect("summary serializes");
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn load_samples(data: &Path) -> Result<Vec<Sample>> {
    load_dataset(&DatasetManifest::scan(data)?)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SynthSummary {
    pub provenance: Provenance,
    pub smoke: usize,
    pub background: usize,
    pub size: [usize; 2],
}

/// Writes a synthetic dataset in the standard layout.
pub fn cmd_synth(cfg: &RunConfig, out: &Path) -> Result<SynthSummary> {
    let prov = cfg.provenance();
    let samples = synth_dataset(&cfg.synth)?;
    write_dataset(out, &samples, Some(&prov.line()))?;
    Ok(SynthSummary {
        provenance: prov,
        smoke: cfg.synth.n_smoke,
        background: cfg.synth.n_background,
        size: cfg.synth.size,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainSummary {
    pub provenance: Provenance,
    pub samples: usize,
    pub steps: usize,
    pub initial_loss: Option<f64>,
    pub final_loss: Option<f64>,
    pub checkpoint: PathBuf,
}

/// Trains on the dataset at `data`; writes the checkpoint, its config
/// sidecar, the loss log and a summary into `out`.
pub fn cmd_train(cfg: &RunConfig, data: &Path, out: &Path) -> Result<TrainSummary> {
    let prov = cfg.provenance();
    let samples = load_samples(data)?;
    let mut net = SaliencyNet::new(cfg.net.clone())?;
    let prepared = prepare(&samples, &net, &cfg.objectness, &cfg.slic)?;
    let losses = train(&mut net, &prepared, &cfg.train, |_, _| {})?;
    create_dir(out)?;
    let checkpoint = out.join(CHECKPOINT);
    net.save(&checkpoint)?;
    let mut log = format!("# provenance: {}\nstep,loss\n", prov.line());
    for (i, l) in losses.iter().enumerate() {
        log.push_str(&format!("{i},{l}\n"));
    }
    let log_path = out.join(LOSS_LOG);
    fs::write(&log_path, log).map_err(|e| Error::io(&log_path, e))?;
    let summary = TrainSummary {
        provenance: prov,
        samples: samples.len(),
        steps: losses.len(),
        initial_loss: losses.first().copied(),
        final_loss: losses.last().copied(),
        checkpoint,
    };
    write_json(&out.join(TRAIN_SUMMARY), &summary)?;
    Ok(summary)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExistenceRecord {
    pub image_id: String,
    pub existence_probability: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExistenceFile {
    pub provenance: Provenance,
    pub records: Vec<ExistenceRecord>,
}

/// Runs a checkpoint over a dataset: one 8-bit saliency PNG per image
/// plus `existence.json`. Object-level maps come from each image's boxes.
pub fn cmd_infer(cfg: &RunConfig, model: &Path, data: &Path, out: &Path) -> Result<ExistenceFile> {
    let prov = cfg.provenance();
    let net = SaliencyNet::load(model)?;
    let samples = load_samples(data)?;
    let prepared = prepare(&samples, &net, &cfg.objectness, &cfg.slic)?;
    let preds = predict_all(&net, &prepared, cfg.train.batch_size)?;
    create_dir(out)?;
    let line = prov.line();
    let mut records = Vec::with_capacity(preds.len());
    for (s, p) in samples.iter().zip(&preds) {
        write_gray8(out.join(format!("{}.png", s.id)), &p.saliency.unit_to_gray8(), Some(&line))?;
        records.push(ExistenceRecord {
            image_id: s.id.clone(),
            existence_probability: p.existence_probability,
        });
    }
    let file = ExistenceFile { provenance: prov, records };
    write_json(&out.join(EXISTENCE), &file)?;
    Ok(file)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricsFile {
    pub provenance: Provenance,
    #[serde(flatten)]
    pub report: MetricsReport,
}

/// Scores the saliency PNGs in `pred` against the dataset masks at the
/// adaptive threshold. Existence accuracy is included when `pred` holds
/// an `existence.json` covering every image.
pub fn cmd_eval(
    cfg: &RunConfig,
    pred: &Path,
    data: &Path,
    out: &Path,
    pr_csv: Option<&Path>,
    averaging: Averaging,
) -> Result<MetricsFile> {
    let prov = cfg.provenance();
    let samples = load_samples(data)?;
    let mut maps = Vec::with_capacity(samples.len());
    for s in &samples {
        let path = pred.join(format!("{}.png", s.id));
        let map = read_gray8(&path)?;
        if map.size() != s.mask.size() {
            return Err(Error::data(
                &path,
                format!("prediction is {}×{}, mask is {}×{}", map.width, map.height, s.mask.width, s.mask.height),
            ));
        }
        maps.push(map);
    }
    let existence_path = pred.join(EXISTENCE);
    let existence: Option<Vec<f64>> = if existence_path.is_file() {
        let text = fs::read_to_string(&existence_path).map_err(|e| Error::io(&existence_path, e))?;
        let file: ExistenceFile = serde_json::from_str(&text)
            .map_err(|e| Error::data(&existence_path, format!("invalid existence file: {e}")))?;
        samples
            .iter()
            .map(|s| file.records.iter().find(|r| r.image_id == s.id).map(|r| r.existence_probability))
            .collect()
    } else {
        None
    };
    let items: Vec<EvalItem> = samples
        .iter()
        .zip(&maps)
        .enumerate()
        .map(|(i, (s, m))| EvalItem {
            id: &s.id,
            map: m,
            gt: &s.mask,
            existence: existence.as_ref().map(|e| (e[i], s.label)),
        })
        .collect();
    let report = evaluate(&items)?;
    if let Some(path) = pr_csv {
        let masks: Vec<_> = samples.iter().map(|s| s.mask.clone()).collect();
        write_pr_csv(path, &pr_curve(&maps, &masks, averaging)?, Some(&prov.line()))?;
    }
    let file = MetricsFile { provenance: prov, report };
    write_json(out, &file)?;
    Ok(file)
}

/// Where the fusion weights come from.
pub enum FusionWeights {
    Model(PathBuf),
    Explicit { weights: Vec<f64>, bias: f64 },
}

/// Fuses 8-bit maps, each rescaled to `[0, 1]`, with a 1×1 convolution
/// followed by a sigmoid.
pub fn fuse_maps(maps: &[Map], weight: &Tensor, bias: &Tensor) -> Result<Map> {
    if maps.is_empty() || weight.len() != maps.len() {
        return Err(Error::invalid(format!("{} fusion weights for {} maps", weight.len(), maps.len())));
    }
    if let Some(m) = maps.iter().find(|m| !m.same_size(&maps[0])) {
        return Err(Error::invalid(format!(
            "fusion inputs differ in size: {}×{} vs {}×{}",
            maps[0].width, maps[0].height, m.width, m.height
        )));
    }
    let mut tape = Tape::inference();
    let xs: Vec<_> = maps.iter().map(|m| tape.input(map_to_tensor(m))).collect();
    let x = tape.concat_channels(&xs)?;
    let w = tape.input(weight.clone().reshaped([1, maps.len(), 1, 1])?);
    let b = tape.input(bias.clone().reshaped([1, 1, 1, 1])?);
    let f = tape.conv2d(x, w, Some(b), 1, 0)?;
    let u = tape.sigmoid(f)?;
    Ok(tensor_to_map(tape.value(u), 0))
}

pub fn cmd_fuse(cfg: &RunConfig, inputs: &[PathBuf], weights: &FusionWeights, out: &Path) -> Result<Map> {
    let maps = inputs.iter().map(|p| Ok(read_gray8(p)?.to_unit())).collect::<Result<Vec<_>>>()?;
    let (w, b) = match weights {
        FusionWeights::Model(path) => {
            let net = SaliencyNet::load(path)?;
            let p = net.params();
            let get = |name: &str| {
                p.find(name)
                    .map(|id| p.value(id).clone())
                    .ok_or_else(|| Error::data(path, "model has no fusion layer"))
            };
            (get("fusion.weight")?, get("fusion.bias")?)
        }
        FusionWeights::Explicit { weights, bias } => (
            Tensor::from_vec([1, weights.len(), 1, 1], weights.iter().map(|&v| v as _).collect())?,
            Tensor::scalar(*bias as _),
        ),
    };
    let fused = fuse_maps(&maps, &w, &b)?;
    write_gray8(out, &fused.unit_to_gray8(), Some(&cfg.provenance().line()))?;
    Ok(fused)
}

fn read_boxes(path: &Path) -> Result<Vec<BBox>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::data(path, format!("invalid box list: {e}")))
}

/// Renders the object-level saliency of a box list, normalized to 8 bits.
pub fn cmd_objectness(cfg: &RunConfig, boxes: &Path, width: usize, height: usize, out: &Path) -> Result<Gray8> {
    let boxes = read_boxes(boxes)?;
    let map = normalize_u8(&objectness_map(&boxes, width, height, &cfg.objectness)?)?;
    write_gray8(out, &map, Some(&cfg.provenance().line()))?;
    Ok(map)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SlicSummary {
    pub provenance: Provenance,
    pub superpixels: usize,
    pub residuals: Vec<f64>,
}

/// Segments an image; writes the label map as a 16-bit PNG and, given a
/// mask, the superpixel/mask overlap rendering.
pub fn cmd_slic(cfg: &RunConfig, image: &Path, out: &Path, render: Option<(&Path, &Path)>) -> Result<SlicSummary> {
    let prov = cfg.provenance();
    let img = read_rgb(image)?;
    let seg = slic(&img, &cfg.slic)?;
    write_gray16(out, &labels_to_u16(&seg.labels)?, Some(&prov.line()))?;
    if let Some((mask_path, render_path)) = render {
        let mask = read_gray8(mask_path)?.to_mask();
        write_gray8(render_path, &render_overlap(&img, &seg.labels, &mask)?, Some(&prov.line()))?;
    }
    Ok(SlicSummary {
        provenance: prov,
        superpixels: seg.count,
        residuals: seg.residuals,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CompositeSummary {
    pub provenance: Provenance,
    pub solver: Solver,
    pub iterations: usize,
    pub residual: f64,
}

/// Gradient-domain insertion of the masked source region into the target
/// with its top-left corner at `offset`.
pub fn cmd_composite(
    cfg: &RunConfig,
    source: &Path,
    mask: &Path,
    target: &Path,
    offset: (usize, usize),
    out: &Path,
) -> Result<CompositeSummary> {
    let prov = cfg.provenance();
    let job = CompositeJob::new(read_rgb(source)?, read_gray8(mask)?.to_mask(), read_rgb(target)?, offset);
    let c = composite_poisson(&job)?;
    write_rgb(out, &c.image, Some(&prov.line()))?;
    Ok(CompositeSummary {
        provenance: prov,
        solver: c.solver,
        iterations: c.iterations,
        residual: c.residual,
    })
}

/// Hide-and-seek occlusion of the smoke bounding box, seeded by the run
/// seed.
pub fn cmd_hide(cfg: &RunConfig, image: &Path, mask: &Path, out_image: &Path, out_mask: &Path) -> Result<usize> {
    let line = cfg.provenance().line();
    let (img, m) = hide_and_seek(&read_rgb(image)?, &read_gray8(mask)?.to_mask(), &cfg.hide, cfg.seed)?;
    write_rgb(out_image, &img, Some(&line))?;
    write_gray8(out_mask, &m.to_gray8(), Some(&line))?;
    Ok(m.count())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StatsRecord {
    pub image_id: String,
    #[serde(flatten)]
    pub stats: ImageStats,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StatsFile {
    pub provenance: Provenance,
    pub records: Vec<StatsRecord>,
}

/// Colour contrast, size, thickness and dispersion of every image with a
/// non-empty mask.
pub fn cmd_stats(cfg: &RunConfig, data: &Path, area: AreaRatio, out: &Path) -> Result<StatsFile> {
    let samples = load_samples(data)?;
    let records = samples
        .iter()
        .filter(|s| s.mask.count() > 0)
        .map(|s| {
            Ok(StatsRecord {
                image_id: s.id.clone(),
                stats: image_stats(&s.image, &s.mask, area)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let file = StatsFile {
        provenance: cfg.provenance(),
        records,
    };
    write_json(out, &file)?;
    Ok(file)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub stage: String,
    pub mean_seconds: f64,
    pub images: usize,
}

pub const BENCH_STAGES: [&str; 4] = ["slic", "objectness", "pixel_forward", "fusion"];

/// Times each test-time stage on `images` synthetic images of
/// `size = [h, w]` and writes `stage,mean_seconds,images` rows. The
/// network is the configured one resized to `size` with pixel-object
/// fusion; weights are freshly initialized since only timing matters.
pub fn cmd_bench(cfg: &RunConfig, images: usize, size: [usize; 2], out: Option<&Path>) -> Result<Vec<BenchRow>> {
    if images == 0 {
        return Err(Error::invalid("bench needs at least one image"));
    }
    let mut synth = cfg.synth.clone();
    synth.size = size;
    synth.n_smoke = images.div_ceil(2);
    synth.n_background = images / 2;
    let samples = synth_dataset(&synth)?;
    let net = SaliencyNet::new(NetConfig {
        input_size: size,
        fusion: Fusion::PixelObject,
        ..cfg.net.clone()
    })?;
    let [h, w] = size;
    let mut totals = [0.0f64; 4];
    for s in &samples {
        let t = Instant::now();
        slic(&s.image, &cfg.slic)?;
        totals[0] += t.elapsed().as_secs_f64();

        let t = Instant::now();
        let object = objectness_unit_map(&s.boxes, w, h, &cfg.objectness)?;
        totals[1] += t.elapsed().as_secs_f64();

        let t = Instant::now();
        let mut tape = Tape::inference();
        let x = tape.input(s.image.to_tensor());
        let enc = net.encode(&mut tape, x)?;
        let dec = net.decode(&mut tape, &enc)?;
        let pixel = tape.value(dec.pixel_map).clone();
        totals[2] += t.elapsed().as_secs_f64();

        let t = Instant::now();
        let mut tape = Tape::inference();
        let maps = [tape.input(pixel), tape.input(map_to_tensor(&object))];
        net.fuse(&mut tape, &maps)?;
        totals[3] += t.elapsed().as_secs_f64();
    }
    let rows: Vec<BenchRow> = BENCH_STAGES
        .iter()
        .zip(totals)
        .map(|(stage, total)| BenchRow {
            stage: stage.to_string(),
            mean_seconds: total / images as f64,
            images,
        })
        .collect();
    if let Some(path) = out {
        let mut text = format!("# provenance: {}\nstage,mean_seconds,images\n", cfg.provenance().line());
        for r in &rows {
            text.push_str(&format!("{},{:.9},{}\n", r.stage, r.mean_seconds, r.images));
        }
        fs::write(path, text).map_err(|e| Error::io(path, e))?;
    }
    Ok(rows)
}
