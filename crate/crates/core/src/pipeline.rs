//! File-based orchestration of the whole pipeline from one TOML config:
//! toy data, both GAN stages, synthesis, the two U-nets, the evaluation
//! report and the single-GAN baseline. Each step is a function taking the
//! effective config; the command-line front end is a thin wrapper.
//!
//! Layout under `workdir`:
//!
//! ```text
//! real/manifest.jsonl        paired toy data with train/test labels
//! real/masks.jsonl           masks-only view of the train split
//! checkpoints/*.ckpt         network weights, with *_history.csv and *_summary.json
//! synthetic/manifest.jsonl   generated pairs
//! reports/                   report.json, report.txt, histogram CSVs
//! baseline/                  single-GAN photos and report
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{
    gen_toy_dataset, save_image, split_dataset, DatasetKind, DatasetManifest, ManifestRecord,
    PairedSample, Provenance, SegmentationMask, Split, ToyFamily, ToyGenConfig,
};
use crate::error::{Error, Result};
use crate::metrics::{
    dataset_report, evaluate_segmenter, grayscale_histogram, memorization_audit, DatasetReport,
    DEFAULT_BINS,
};
use crate::nn::{load_checkpoint, save_checkpoint, NetworkKind, ParameterStore};
use crate::optim::TrainConfig;
use crate::rng::derive_seed;
use crate::segmenter::{train_unet, UnetModel, UnetSpec};
use crate::stage1::{train_stage1, DiscHead, GenLoss, MaskSampler, OutputHead, Stage1Config};
use crate::stage2::{train_stage2, translate_dataset, Stage2Config, Translator};
use crate::tensor::Tensor;

/// Optimizer settings of one training step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub d_steps_per_g_step: usize,
}

impl Default for OptimSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        OptimSection {
            epochs: t.epochs,
            batch_size: t.batch_size,
            lr: t.lr,
            beta1: t.beta1,
            beta2: t.beta2,
            d_steps_per_g_step: t.d_steps_per_g_step,
        }
    }
}

impl OptimSection {
    fn train_config(&self, image_size: usize, seed: u64) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            epochs: self.epochs,
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            seed,
            d_steps_per_g_step: self.d_steps_per_g_step,
            image_size,
            ..TrainConfig::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub family: ToyFamily,
    pub image_size: usize,
    /// Total pairs before the split.
    pub count: usize,
    pub noise: f64,
    pub train_fraction: f64,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            family: ToyFamily::VesselTree,
            image_size: 32,
            count: 128,
            noise: 0.02,
            train_fraction: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Stage1Section {
    pub noise_dim: usize,
    pub gen_channels: usize,
    pub disc_channels: usize,
    pub output: OutputHead,
    pub head: DiscHead,
    pub gen_loss: GenLoss,
    pub instance_noise: f64,
    pub optim: OptimSection,
}

impl Default for Stage1Section {
    fn default() -> Self {
        let m = Stage1Config::default();
        Stage1Section {
            noise_dim: m.noise_dim,
            gen_channels: m.gen_channels,
            disc_channels: m.disc_channels,
            output: m.output,
            head: m.head,
            gen_loss: m.gen_loss,
            instance_noise: m.instance_noise,
            optim: OptimSection::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Stage2Section {
    pub gen_channels: usize,
    pub disc_channels: usize,
    pub dropout: f64,
    pub inference_dropout: bool,
    pub head: DiscHead,
    pub lambda_l1: f64,
    pub optim: OptimSection,
}

impl Default for Stage2Section {
    fn default() -> Self {
        let m = Stage2Config::default();
        Stage2Section {
            gen_channels: m.gen_channels,
            disc_channels: m.disc_channels,
            dropout: m.dropout,
            inference_dropout: m.inference_dropout,
            head: m.head,
            lambda_l1: TrainConfig::default().lambda_l1,
            optim: OptimSection::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UnetSection {
    pub depth: usize,
    pub base_channels: usize,
    pub optim: OptimSection,
}

impl Default for UnetSection {
    fn default() -> Self {
        let s = UnetSpec::default();
        UnetSection {
            depth: s.depth,
            base_channels: s.base_channels,
            optim: OptimSection {
                lr: 1e-3,
                beta1: 0.9,
                ..OptimSection::default()
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    /// Pairs written by `synthesize`.
    pub count: usize,
    /// Feed Stage-II the raw generator output instead of binarized masks.
    pub soft_masks: bool,
    /// Keep only the largest connected component of each binarized mask
    /// before translation.
    pub largest_component: bool,
    /// Masks drawn for the memorization audit in `evaluate`.
    pub audit_count: usize,
}

impl Default for SynthSection {
    fn default() -> Self {
        SynthSection {
            count: 50,
            soft_masks: true,
            largest_component: false,
            audit_count: 200,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineSection {
    pub gen_channels: usize,
    pub disc_channels: usize,
    /// Defaults to the Stage-I plus Stage-II epoch count, which at equal
    /// batch size and dataset gives the same number of generator updates.
    pub epochs: Option<usize>,
}

impl Default for BaselineSection {
    fn default() -> Self {
        let m = Stage1Config::default();
        BaselineSection {
            gen_channels: m.gen_channels,
            disc_channels: m.disc_channels,
            epochs: None,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PipelineMode {
    #[default]
    Dual,
    SingleBaseline,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub workdir: PathBuf,
    /// Root seed; every component derives its own stream from it by label.
    pub seed: u64,
    pub mode: PipelineMode,
    pub data: DataSection,
    pub stage1: Stage1Section,
    pub stage2: Stage2Section,
    pub unet: UnetSection,
    pub synthesize: SynthSection,
    pub baseline: BaselineSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            workdir: PathBuf::from("run"),
            seed: 0,
            mode: PipelineMode::Dual,
            data: DataSection::default(),
            stage1: Stage1Section::default(),
            stage2: Stage2Section::default(),
            unet: UnetSection::default(),
            synthesize: SynthSection::default(),
            baseline: BaselineSection::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// First 16 hex digits of SHA-256 over the canonical JSON form, with
    /// `workdir` blanked so relocating a run does not change its artifacts.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.workdir = PathBuf::new();
        let json = serde_json::to_vec(&canonical).expect("config serializes");
        let digest = Sha256::digest(&json);
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn toy(&self) -> ToyGenConfig {
        ToyGenConfig {
            family: self.data.family,
            image_size: self.data.image_size,
            count: self.data.count,
            seed: derive_seed(self.seed, "toy"),
            noise: self.data.noise,
        }
    }

    pub fn n_train(&self) -> usize {
        let n = self.data.count;
        ((n as f64 * self.data.train_fraction).round() as usize).clamp(1, n.saturating_sub(1).max(1))
    }

    pub fn stage1_model(&self) -> Stage1Config {
        let s = &self.stage1;
        Stage1Config {
            image_size: self.data.image_size,
            noise_dim: s.noise_dim,
            channels: 1,
            gen_channels: s.gen_channels,
            disc_channels: s.disc_channels,
            output: s.output,
            head: s.head,
            gen_loss: s.gen_loss,
            instance_noise: s.instance_noise,
        }
    }

    pub fn stage1_train(&self) -> TrainConfig {
        let mut t = self.stage1.optim.train_config(self.data.image_size, derive_seed(self.seed, "stage1"));
        t.noise_dim = self.stage1.noise_dim;
        t
    }

    pub fn stage2_model(&self) -> Stage2Config {
        let s = &self.stage2;
        Stage2Config {
            image_size: self.data.image_size,
            gen_channels: s.gen_channels,
            disc_channels: s.disc_channels,
            dropout: s.dropout,
            inference_dropout: s.inference_dropout,
            head: s.head,
        }
    }

    pub fn stage2_train(&self) -> TrainConfig {
        let mut t = self.stage2.optim.train_config(self.data.image_size, derive_seed(self.seed, "stage2"));
        t.lambda_l1 = self.stage2.lambda_l1;
        t
    }

    pub fn unet_spec(&self) -> UnetSpec {
        UnetSpec {
            depth: self.unet.depth,
            base_channels: self.unet.base_channels,
        }
    }

    /// `label` separates the synthetic-trained and real-trained runs.
    pub fn unet_train(&self, label: &str) -> TrainConfig {
        self.unet
            .optim
            .train_config(self.data.image_size, derive_seed(self.seed, &format!("unet-{label}")))
    }

    pub fn baseline_model(&self) -> Stage1Config {
        Stage1Config {
            channels: 3,
            gen_channels: self.baseline.gen_channels,
            disc_channels: self.baseline.disc_channels,
            ..self.stage1_model()
        }
    }

    pub fn baseline_train(&self) -> TrainConfig {
        let mut t = self.stage1_train();
        t.epochs = self
            .baseline
            .epochs
            .unwrap_or(self.stage1.optim.epochs + self.stage2.optim.epochs);
        t.seed = derive_seed(self.seed, "baseline");
        t
    }

    /// Checks every section so no command starts work on a bad config.
    pub fn validate(&self) -> Result<()> {
        self.toy().validate()?;
        if self.data.image_size < 16 {
            return Err(Error::Config("image_size must be at least 16".into()));
        }
        if !(self.data.train_fraction > 0.0 && self.data.train_fraction < 1.0) {
            return Err(Error::Config("train_fraction must lie strictly between 0 and 1".into()));
        }
        if self.data.count < 2 {
            return Err(Error::Config("data.count must be at least 2 to split".into()));
        }
        let n_train = self.n_train();
        self.stage1_model().validate()?;
        self.stage1_train().validate(n_train)?;
        self.stage2_model().validate()?;
        self.stage2_train().validate(n_train)?;
        let spec = self.unet_spec();
        crate::segmenter::unet_net(&spec, self.data.image_size)?;
        self.unet_train("real").validate(n_train.min(self.synthesize.count.max(1)))?;
        self.baseline_model().validate()?;
        self.baseline_train().validate(n_train)?;
        if self.synthesize.count == 0 {
            return Err(Error::Config("synthesize.count must be at least 1".into()));
        }
        Ok(())
    }

    pub fn real_manifest(&self) -> PathBuf {
        self.workdir.join("real").join("manifest.jsonl")
    }

    pub fn real_masks_manifest(&self) -> PathBuf {
        self.workdir.join("real").join("masks.jsonl")
    }

    pub fn synthetic_manifest(&self) -> PathBuf {
        self.workdir.join("synthetic").join("manifest.jsonl")
    }

    pub fn checkpoint(&self, name: &str) -> PathBuf {
        self.workdir.join("checkpoints").join(format!("{name}.ckpt"))
    }

    pub fn reports_dir(&self) -> PathBuf {
        self.workdir.join("reports")
    }

    pub fn baseline_dir(&self) -> PathBuf {
        self.workdir.join("baseline")
    }
}

fn create_dir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

fn write_file(p: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = p.parent() {
        create_dir(parent)?;
    }
    std::fs::write(p, contents).map_err(|e| Error::io(p, e))
}

/// Writes `pairs` as `masks/<id>.png` and `photos/<id>.png` under `dir` and
/// returns a paired manifest rooted there.
pub fn write_pairs(
    dir: &Path,
    pairs: &[PairedSample],
    splits: &[Split],
    provenance: Provenance,
    config_hash: &str,
) -> Result<DatasetManifest> {
    create_dir(&dir.join("masks"))?;
    create_dir(&dir.join("photos"))?;
    let mut m = DatasetManifest::new(DatasetKind::Paired, provenance, dir);
    m.image_size = pairs.first().map(|p| p.mask.height());
    m.config_hash = Some(config_hash.to_string());
    for (p, &split) in pairs.iter().zip(splits) {
        let mask_path = format!("masks/{}.png", p.id);
        let photo_path = format!("photos/{}.png", p.id);
        save_image(p.mask.tensor(), dir.join(&mask_path))?;
        save_image(&p.photo, dir.join(&photo_path))?;
        m.records.push(ManifestRecord {
            id: p.id.clone(),
            mask_path,
            photo_path: Some(photo_path),
            split,
        });
    }
    Ok(m)
}

/// Generates the toy dataset, splits it, and writes `real/`. Refuses to
/// overwrite an existing manifest unless `force` is set.
pub fn gen_toy(cfg: &PipelineConfig, force: bool) -> Result<DatasetManifest> {
    cfg.validate()?;
    let dir = cfg.workdir.join("real");
    let manifest_path = cfg.real_manifest();
    if manifest_path.exists() && !force {
        return Err(Error::Config(format!(
            "{} exists; pass --force to overwrite",
            manifest_path.display()
        )));
    }
    let pairs = gen_toy_dataset(&cfg.toy())?;
    let hash = cfg.hash();
    let mut draft = DatasetManifest::new(DatasetKind::Paired, Provenance::Toy, &dir);
    draft.records = pairs
        .iter()
        .map(|p| ManifestRecord {
            id: p.id.clone(),
            mask_path: String::new(),
            photo_path: None,
            split: Split::Train,
        })
        .collect();
    let split = split_dataset(&draft, cfg.data.train_fraction, derive_seed(cfg.seed, "split"))?;
    let splits: Vec<Split> = split.records.iter().map(|r| r.split).collect();
    if dir.exists() && force {
        std::fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    let manifest = write_pairs(&dir, &pairs, &splits, Provenance::Toy, &hash)?;
    manifest.write(&manifest_path)?;
    let mut masks_only = manifest.clone();
    masks_only.kind = DatasetKind::MasksOnly;
    masks_only.records.retain(|r| r.split == Split::Train);
    for r in &mut masks_only.records {
        r.photo_path = None;
    }
    masks_only.write(cfg.real_masks_manifest())?;
    Ok(manifest)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub command: String,
    pub config_hash: String,
    pub epochs: usize,
    pub samples: usize,
    pub final_losses: Vec<f64>,
    pub checkpoints: Vec<String>,
}

fn finish_training(
    cfg: &PipelineConfig,
    name: &str,
    history_csv: String,
    summary: TrainSummary,
) -> Result<TrainSummary> {
    write_file(
        &cfg.workdir.join("checkpoints").join(format!("{name}_history.csv")),
        history_csv,
    )?;
    write_file(
        &cfg.workdir.join("checkpoints").join(format!("{name}_summary.json")),
        serde_json::to_string_pretty(&summary)?,
    )?;
    Ok(summary)
}

fn save_store(cfg: &PipelineConfig, name: &str, store: &mut ParameterStore) -> Result<String> {
    store.set_meta("config_hash", cfg.hash().into());
    store.set_meta("image_size", cfg.data.image_size.into());
    let path = cfg.checkpoint(name);
    if let Some(parent) = path.parent() {
        create_dir(parent)?;
    }
    save_checkpoint(store, &path)?;
    Ok(path.display().to_string())
}

fn require_kind(m: &DatasetManifest, kind: DatasetKind, path: &Path) -> Result<()> {
    if m.kind != kind {
        return Err(Error::Config(format!(
            "{} is a {:?} manifest; this command needs {:?}",
            path.display(),
            m.kind,
            kind
        )));
    }
    Ok(())
}

fn check_image_size(found: Option<usize>, want: usize, what: &str) -> Result<()> {
    match found {
        Some(s) if s != want => Err(Error::Config(format!(
            "{what} has image_size {s}, config expects {want}"
        ))),
        _ => Ok(()),
    }
}

/// Trains Stage-I on the train split of a masks-only manifest.
pub fn cmd_train_stage1(cfg: &PipelineConfig, manifest_path: &Path) -> Result<TrainSummary> {
    cfg.validate()?;
    let manifest = DatasetManifest::load(manifest_path)?;
    require_kind(&manifest, DatasetKind::MasksOnly, manifest_path)?;
    check_image_size(manifest.image_size, cfg.data.image_size, "manifest")?;
    let masks: Vec<Tensor> = manifest
        .load_masks(Some(Split::Train))?
        .into_iter()
        .map(SegmentationMask::into_tensor)
        .collect();
    let train = cfg.stage1_train();
    let (mut model, history) = train_stage1(&masks, &cfg.stage1_model(), &train, None)?;
    let checkpoints = vec![
        save_store(cfg, "stage1_generator", &mut model.gen)?,
        save_store(cfg, "stage1_discriminator", &mut model.disc)?,
    ];
    let summary = TrainSummary {
        command: "train-stage1".into(),
        config_hash: cfg.hash(),
        epochs: train.epochs,
        samples: masks.len(),
        final_losses: history
            .epochs
            .last()
            .map(|e| vec![e.d_loss, e.g_loss])
            .unwrap_or_default(),
        checkpoints,
    };
    finish_training(cfg, "stage1", history.to_csv(), summary)
}

/// Trains Stage-II on the train split of a paired manifest.
pub fn cmd_train_stage2(cfg: &PipelineConfig, manifest_path: &Path) -> Result<TrainSummary> {
    cfg.validate()?;
    let manifest = DatasetManifest::load(manifest_path)?;
    require_kind(&manifest, DatasetKind::Paired, manifest_path)?;
    check_image_size(manifest.image_size, cfg.data.image_size, "manifest")?;
    let pairs = manifest.load_pairs(Some(Split::Train))?;
    let train = cfg.stage2_train();
    let (mut model, history) = train_stage2(&pairs, &cfg.stage2_model(), &train, None)?;
    let checkpoints = vec![
        save_store(cfg, "stage2_generator", &mut model.gen)?,
        save_store(cfg, "stage2_discriminator", &mut model.disc)?,
    ];
    let summary = TrainSummary {
        command: "train-stage2".into(),
        config_hash: cfg.hash(),
        epochs: train.epochs,
        samples: pairs.len(),
        final_losses: history
            .epochs
            .last()
            .map(|e| vec![e.d_loss, e.g_loss])
            .unwrap_or_default(),
        checkpoints,
    };
    finish_training(cfg, "stage2", history.to_csv(), summary)
}

/// Trains a U-net on the train split of a paired manifest, saved as
/// `unet_<label>`.
pub fn cmd_train_unet(cfg: &PipelineConfig, manifest_path: &Path, label: &str) -> Result<TrainSummary> {
    cfg.validate()?;
    let manifest = DatasetManifest::load(manifest_path)?;
    require_kind(&manifest, DatasetKind::Paired, manifest_path)?;
    check_image_size(manifest.image_size, cfg.data.image_size, "manifest")?;
    let pairs = manifest.load_pairs(Some(Split::Train))?;
    let train = cfg.unet_train(label);
    train.validate(pairs.len())?;
    let (mut model, history) = train_unet(&pairs, &cfg.unet_spec(), &train)?;
    let name = format!("unet_{label}");
    let checkpoints = vec![save_store(cfg, &name, &mut model.params)?];
    let summary = TrainSummary {
        command: "train-unet".into(),
        config_hash: cfg.hash(),
        epochs: train.epochs,
        samples: pairs.len(),
        final_losses: history.epochs.last().map(|e| vec![e.loss]).unwrap_or_default(),
        checkpoints,
    };
    finish_training(cfg, &name, history.to_csv(), summary)
}

fn load_kind(path: &Path, kind: NetworkKind) -> Result<ParameterStore> {
    let s = load_checkpoint(path)?;
    if s.kind() != kind {
        return Err(Error::Config(format!(
            "{} holds a {} network, expected {}",
            path.display(),
            s.kind().as_str(),
            kind.as_str()
        )));
    }
    Ok(s)
}

fn store_image_size(s: &ParameterStore) -> Option<usize> {
    s.meta().get("image_size").and_then(|v| v.as_u64()).map(|v| v as usize)
}

/// Samples `count` masks from Stage-I, translates them with Stage-II and
/// writes `synthetic/`.
pub fn cmd_synthesize(
    cfg: &PipelineConfig,
    stage1: &Path,
    stage2: &Path,
    count: usize,
    seed: u64,
) -> Result<DatasetManifest> {
    cfg.validate()?;
    let sampler = MaskSampler::from_store(load_kind(stage1, NetworkKind::Stage1Generator)?)?;
    let translator = Translator::from_store(load_kind(stage2, NetworkKind::Stage2Generator)?)?;
    let (s1, s2) = (sampler.config.image_size, translator.config.image_size);
    if s1 != s2 {
        return Err(Error::Config(format!(
            "stage-I checkpoint produces {s1}x{s1} masks but stage-II expects {s2}x{s2}"
        )));
    }
    let mut masks = sampler.sample_masks(count, derive_seed(seed, "synth-noise"))?;
    if cfg.synthesize.largest_component {
        masks = masks.iter().map(SegmentationMask::largest_component).collect();
    }
    let inputs: Vec<SegmentationMask> = if cfg.synthesize.soft_masks {
        masks.clone()
    } else {
        masks.iter().map(SegmentationMask::binarized).collect()
    };
    let pairs = translate_dataset(&inputs, &translator, derive_seed(seed, "synth-dropout"))?;
    let pairs: Vec<PairedSample> = pairs
        .into_iter()
        .zip(&masks)
        .map(|(p, m)| PairedSample::new(p.id, m.binarized(), p.photo))
        .collect::<Result<_>>()?;
    let dir = cfg.workdir.join("synthetic");
    if dir.exists() {
        std::fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    let manifest = write_pairs(&dir, &pairs, &vec![Split::Train; pairs.len()], Provenance::Synthetic, &cfg.hash())?;
    manifest.write(cfg.synthetic_manifest())?;
    Ok(manifest)
}

/// Inputs of `evaluate`.
#[derive(Clone, Debug)]
pub struct EvaluateInputs {
    pub real: PathBuf,
    pub synthetic: PathBuf,
    pub unet_synthetic: PathBuf,
    pub unet_real: PathBuf,
    /// When present, the memorization audit samples from this generator.
    pub stage1: Option<PathBuf>,
}

impl EvaluateInputs {
    pub fn defaults(cfg: &PipelineConfig) -> Self {
        EvaluateInputs {
            real: cfg.real_manifest(),
            synthetic: cfg.synthetic_manifest(),
            unet_synthetic: cfg.checkpoint("unet_synthetic"),
            unet_real: cfg.checkpoint("unet_real"),
            stage1: Some(cfg.checkpoint("stage1_generator")),
        }
    }
}

fn photos(pairs: &[PairedSample]) -> Vec<Tensor> {
    pairs.iter().map(|p| p.photo.clone()).collect()
}

/// F1 of both U-nets on the real test split, the KL pair and the
/// memorization audit; writes `reports/`.
pub fn cmd_evaluate(cfg: &PipelineConfig, inputs: &EvaluateInputs) -> Result<DatasetReport> {
    cfg.validate()?;
    let size = cfg.data.image_size;
    let real = DatasetManifest::load(&inputs.real)?;
    let synthetic = DatasetManifest::load(&inputs.synthetic)?;
    require_kind(&real, DatasetKind::Paired, &inputs.real)?;
    require_kind(&synthetic, DatasetKind::Paired, &inputs.synthetic)?;
    check_image_size(real.image_size, size, "real manifest")?;
    check_image_size(synthetic.image_size, size, "synthetic manifest")?;
    if real.split(Split::Test).next().is_none() {
        return Err(Error::Config("real manifest has no test split".into()));
    }
    let unet_syn = UnetModel::from_store(load_kind(&inputs.unet_synthetic, NetworkKind::Unet)?)?;
    let unet_real = UnetModel::from_store(load_kind(&inputs.unet_real, NetworkKind::Unet)?)?;
    check_image_size(store_image_size(&unet_syn.params), size, "synthetic-trained u-net")?;
    check_image_size(store_image_size(&unet_real.params), size, "real-trained u-net")?;
    let sampler = match &inputs.stage1 {
        Some(p) => {
            let s = MaskSampler::from_store(load_kind(p, NetworkKind::Stage1Generator)?)?;
            check_image_size(Some(s.config.image_size), size, "stage-I generator")?;
            Some(s)
        }
        None => None,
    };

    let real_pairs = real.load_pairs(None)?;
    let test = real.load_pairs(Some(Split::Test))?;
    let syn_pairs = synthetic.load_pairs(None)?;
    let real_photos = photos(&real_pairs);
    let syn_photos = photos(&syn_pairs);
    let mut report = dataset_report(&real_photos, &syn_photos, derive_seed(cfg.seed, "report"))?;
    report.config_hash = Some(cfg.hash());
    report.set_f1(evaluate_segmenter(&unet_syn, &test)?, evaluate_segmenter(&unet_real, &test)?);
    if let Some(sampler) = sampler {
        let generated = sampler.sample_masks(cfg.synthesize.audit_count, derive_seed(cfg.seed, "audit-noise"))?;
        let training = real.load_masks(Some(Split::Train))?;
        report.memorization = Some(memorization_audit(&generated, &training)?);
    }
    let dir = cfg.reports_dir();
    write_file(&dir.join("report.json"), report.to_json()?)?;
    write_file(&dir.join("report.txt"), report.to_text())?;
    write_file(
        &dir.join("histogram_real.csv"),
        grayscale_histogram(&real_photos, DEFAULT_BINS)?.to_csv(),
    )?;
    write_file(
        &dir.join("histogram_synthetic.csv"),
        grayscale_histogram(&syn_photos, DEFAULT_BINS)?.to_csv(),
    )?;
    Ok(report)
}

/// Trains one GAN directly on real train photos with the same number of
/// generator updates as both stages together, and reports its histogram KL
/// to the real photos next to the dual pipeline's.
pub fn cmd_baseline_single_gan(cfg: &PipelineConfig, manifest_path: &Path) -> Result<DatasetReport> {
    cfg.validate()?;
    let manifest = DatasetManifest::load(manifest_path)?;
    require_kind(&manifest, DatasetKind::Paired, manifest_path)?;
    check_image_size(manifest.image_size, cfg.data.image_size, "manifest")?;
    let train_photos = photos(&manifest.load_pairs(Some(Split::Train))?);
    let real_photos = photos(&manifest.load_pairs(None)?);
    let train = cfg.baseline_train();
    let (mut model, history) = train_stage1(&train_photos, &cfg.baseline_model(), &train, None)?;
    let sampler = MaskSampler::from(&model);
    let samples = sampler.sample_images(cfg.synthesize.count, derive_seed(cfg.seed, "baseline-noise"))?;
    let dir = cfg.baseline_dir();
    create_dir(&dir.join("photos"))?;
    for (i, s) in samples.iter().enumerate() {
        save_image(s, dir.join("photos").join(format!("single-{i:04}.png")))?;
    }
    model.gen.set_meta("config_hash", cfg.hash().into());
    model.gen.set_meta("image_size", cfg.data.image_size.into());
    save_checkpoint(&model.gen, dir.join("generator.ckpt"))?;
    write_file(&dir.join("history.csv"), history.to_csv())?;
    let mut report = dataset_report(&real_photos, &samples, derive_seed(cfg.seed, "report"))?;
    report.config_hash = Some(cfg.hash());
    write_file(&dir.join("report.json"), report.to_json()?)?;
    write_file(&dir.join("report.txt"), report.to_text())?;
    write_file(
        &dir.join("histogram_single.csv"),
        grayscale_histogram(&samples, DEFAULT_BINS)?.to_csv(),
    )?;
    Ok(report)
}

/// Every step of the dual pipeline in order, plus the baseline when the
/// mode asks for it.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub report: DatasetReport,
    pub baseline: Option<DatasetReport>,
}

pub fn run_all(cfg: &PipelineConfig, force: bool) -> Result<RunOutcome> {
    cfg.validate()?;
    gen_toy(cfg, force)?;
    cmd_train_stage1(cfg, &cfg.real_masks_manifest())?;
    cmd_train_stage2(cfg, &cfg.real_manifest())?;
    cmd_synthesize(
        cfg,
        &cfg.checkpoint("stage1_generator"),
        &cfg.checkpoint("stage2_generator"),
        cfg.synthesize.count,
        derive_seed(cfg.seed, "synthesize"),
    )?;
    cmd_train_unet(cfg, &cfg.synthetic_manifest(), "synthetic")?;
    cmd_train_unet(cfg, &cfg.real_manifest(), "real")?;
    let report = cmd_evaluate(cfg, &EvaluateInputs::defaults(cfg))?;
    let baseline = match cfg.mode {
        PipelineMode::SingleBaseline => Some(cmd_baseline_single_gan(cfg, &cfg.real_manifest())?),
        PipelineMode::Dual => None,
    };
    Ok(RunOutcome { report, baseline })
}
