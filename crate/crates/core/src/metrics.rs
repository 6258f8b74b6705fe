//! F1 / precision / recall, pixel-intensity histograms, KL divergence and
//! the nearest-training-mask memorization audit.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{to_grayscale, PairedSample, SegmentationMask};
use crate::error::{Error, Result};
use crate::rng;
use crate::segmenter::{segment, UnetModel};
use crate::tensor::Tensor;

pub const DEFAULT_BINS: usize = 256;
/// Added to every bin of both histograms before KL, then renormalized.
pub const KL_SMOOTHING: f64 = 1e-9;
pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn from_bits(pred: &[bool], truth: &[bool]) -> Result<Self> {
        if pred.len() != truth.len() {
            return Err(Error::Contract(format!(
                "prediction has {} pixels, truth {}",
                pred.len(),
                truth.len()
            )));
        }
        let mut c = ConfusionCounts::default();
        for (&p, &t) in pred.iter().zip(truth) {
            match (p, t) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        Ok(c)
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn add(&mut self, other: &ConfusionCounts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
        self.tn += other.tn;
    }

    /// 0/0 precision or recall counts as 0; `f1` is 0 when both are 0,
    /// except that two all-background masks agree perfectly (`f1 = 1`).
    pub fn scores(&self) -> F1Score {
        let ratio = |num: u64, den: u64| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let precision = ratio(self.tp, self.tp + self.fp);
        let recall = ratio(self.tp, self.tp + self.fn_);
        let f1 = if self.tp + self.fp + self.fn_ == 0 {
            1.0
        } else if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        F1Score {
            precision,
            recall,
            f1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct F1Score {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn require_binary(m: &SegmentationMask, what: &str) -> Result<()> {
    if m.is_binary() {
        Ok(())
    } else {
        Err(Error::Contract(format!("{what} mask is not binary")))
    }
}

pub fn confusion(pred: &SegmentationMask, truth: &SegmentationMask) -> Result<ConfusionCounts> {
    if pred.tensor().shape() != truth.tensor().shape() {
        return Err(Error::Contract(format!(
            "mask shapes differ: {:?} vs {:?}",
            pred.tensor().shape(),
            truth.tensor().shape()
        )));
    }
    require_binary(pred, "predicted")?;
    require_binary(truth, "ground-truth")?;
    ConfusionCounts::from_bits(&pred.bits(), &truth.bits())
}

pub fn f1_score(pred: &SegmentationMask, truth: &SegmentationMask) -> Result<F1Score> {
    Ok(confusion(pred, truth)?.scores())
}

/// Normalized pixel-intensity distribution over uniform bins on `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub probabilities: Vec<f64>,
    /// Number of pixels pooled into it.
    pub count: usize,
}

impl Histogram {
    pub fn from_probabilities(probabilities: Vec<f64>) -> Result<Self> {
        if probabilities.is_empty() || probabilities.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
            return Err(Error::Contract("histogram needs non-negative finite bins".into()));
        }
        let total: f64 = probabilities.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Contract(format!("histogram sums to {total}, not 1")));
        }
        Ok(Histogram {
            probabilities,
            count: 0,
        })
    }

    pub fn bin_count(&self) -> usize {
        self.probabilities.len()
    }

    /// Bin for a value in `[0, 1]`; 1.0 lands in the last bin.
    pub fn bin_of(value: f64, bins: usize) -> usize {
        ((value * bins as f64) as usize).min(bins - 1)
    }

    /// `(p + KL_SMOOTHING) / (1 + bins · KL_SMOOTHING)` per bin.
    pub fn smoothed(&self) -> Vec<f64> {
        let z = 1.0 + self.bin_count() as f64 * KL_SMOOTHING;
        self.probabilities.iter().map(|p| (p + KL_SMOOTHING) / z).collect()
    }

    /// `bin_center,probability` rows with a header.
    pub fn to_csv(&self) -> String {
        let n = self.bin_count() as f64;
        let mut s = String::from("bin_center,probability\n");
        for (i, p) in self.probabilities.iter().enumerate() {
            let _ = writeln!(s, "{},{}", (i as f64 + 0.5) / n, p);
        }
        s
    }
}

/// Pooled histogram over every element of every tensor.
pub fn pixel_histogram(images: &[Tensor], bins: usize) -> Result<Histogram> {
    histogram_of(images.iter().map(|t| t.data()), bins)
}

/// Pooled histogram of grayscale-converted images.
pub fn grayscale_histogram(images: &[Tensor], bins: usize) -> Result<Histogram> {
    let gray = images.iter().map(to_grayscale).collect::<Result<Vec<_>>>()?;
    histogram_of(gray.iter().map(Vec::as_slice), bins)
}

fn histogram_of<'a>(images: impl Iterator<Item = &'a [f64]>, bins: usize) -> Result<Histogram> {
    if bins == 0 {
        return Err(Error::Contract("histogram needs at least one bin".into()));
    }
    let mut counts = vec![0u64; bins];
    let mut total = 0usize;
    let mut any = false;
    for img in images {
        any = true;
        for &v in img {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Contract(format!("pixel value {v} outside [0, 1]")));
            }
            counts[Histogram::bin_of(v, bins)] += 1;
            total += 1;
        }
    }
    if !any || total == 0 {
        return Err(Error::Contract("histogram of an empty image list".into()));
    }
    Ok(Histogram {
        probabilities: counts.iter().map(|&c| c as f64 / total as f64).collect(),
        count: total,
    })
}

/// `Σ P_i ln(P_i / Q_i)` over smoothed histograms.
pub fn kl_divergence(p: &Histogram, q: &Histogram) -> Result<f64> {
    if p.bin_count() != q.bin_count() {
        return Err(Error::Contract(format!(
            "bin counts differ: {} vs {}",
            p.bin_count(),
            q.bin_count()
        )));
    }
    let kl: f64 = p
        .smoothed()
        .iter()
        .zip(q.smoothed())
        .map(|(&a, b)| if a == 0.0 { 0.0 } else { a * (a / b).ln() })
        .sum();
    Ok(kl.max(0.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Nearest {
    pub index: usize,
    /// Mean squared pixel difference.
    pub distance: f64,
}

/// Closest training mask by mean squared error; ties go to the lower index.
pub fn nearest_training_mask(generated: &SegmentationMask, training: &[SegmentationMask]) -> Result<Nearest> {
    if training.is_empty() {
        return Err(Error::Contract("empty training list".into()));
    }
    let g = generated.values();
    let mut best = Nearest {
        index: 0,
        distance: f64::INFINITY,
    };
    for (i, t) in training.iter().enumerate() {
        if t.tensor().shape() != generated.tensor().shape() {
            return Err(Error::Contract(format!(
                "training mask {i} has shape {:?}, expected {:?}",
                t.tensor().shape(),
                generated.tensor().shape()
            )));
        }
        let d = g.iter().zip(t.values()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / g.len() as f64;
        if d < best.distance {
            best = Nearest { index: i, distance: d };
        }
    }
    Ok(best)
}

/// Two-sample Kolmogorov-Smirnov statistic.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Contract("KS statistic of an empty sample".into()));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
    }
    Ok(d)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemorizationStats {
    pub generated: usize,
    /// Binarized generated masks identical to some training mask.
    pub exact_copies: usize,
    pub min_distance: f64,
    pub mean_distance: f64,
    pub ks_foreground_fraction: f64,
}

/// Binarizes every generated mask and compares it with its nearest
/// training mask.
pub fn memorization_audit(generated: &[SegmentationMask], training: &[SegmentationMask]) -> Result<MemorizationStats> {
    if generated.is_empty() {
        return Err(Error::Contract("no generated masks to audit".into()));
    }
    let training: Vec<SegmentationMask> = training.iter().map(SegmentationMask::binarized).collect();
    let mut distances = Vec::with_capacity(generated.len());
    for m in generated {
        distances.push(nearest_training_mask(&m.binarized(), &training)?.distance);
    }
    let gen_ff: Vec<f64> = generated.iter().map(SegmentationMask::foreground_fraction).collect();
    let train_ff: Vec<f64> = training.iter().map(SegmentationMask::foreground_fraction).collect();
    Ok(MemorizationStats {
        generated: generated.len(),
        exact_copies: distances.iter().filter(|&&d| d == 0.0).count(),
        min_distance: distances.iter().copied().fold(f64::INFINITY, f64::min),
        mean_distance: distances.iter().sum::<f64>() / distances.len() as f64,
        ks_foreground_fraction: ks_statistic(&gen_ff, &train_ff)?,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct F1Summary {
    /// Precision, recall and F1 over all test pixels pooled.
    pub pooled: F1Score,
    pub mean_per_image: f64,
    pub images: usize,
}

/// Segments each test photo at threshold 0.5 and scores it against the
/// binarized ground truth.
pub fn evaluate_segmenter(model: &UnetModel, test: &[PairedSample]) -> Result<F1Summary> {
    if test.is_empty() {
        return Err(Error::Contract("no test pairs".into()));
    }
    let mut pooled = ConfusionCounts::default();
    let mut per_image = 0.0;
    for pair in test {
        let pred = segment(&pair.photo, model, 0.5)?;
        let c = confusion(&pred, &pair.mask.binarized())?;
        per_image += c.scores().f1;
        pooled.add(&c);
    }
    Ok(F1Summary {
        pooled: pooled.scores(),
        mean_per_image: per_image / test.len() as f64,
        images: test.len(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetReport {
    pub schema_version: u32,
    pub config_hash: Option<String>,
    pub image_size: usize,
    pub bins: usize,
    pub real_count: usize,
    pub synthetic_count: usize,
    /// `KL(synthetic ‖ real)` over grayscale pixels.
    pub kl_syn_vs_real: f64,
    /// `KL(real half A ‖ real half B)`.
    pub kl_real_split: f64,
    pub f1_synthetic_trained: Option<F1Summary>,
    pub f1_real_trained: Option<F1Summary>,
    /// `f1_real_trained - f1_synthetic_trained` on pooled F1.
    pub f1_gap: Option<f64>,
    pub memorization: Option<MemorizationStats>,
}

/// The two seeded halves of `0..n` used for the real-vs-real control.
pub fn real_split_halves(n: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::rng_for(seed, "real-split"));
    let b = order.split_off(n / 2);
    (order, b)
}

/// Histogram KL of synthetic against real photos plus the real-vs-real
/// control; F1 and memorization sections are filled in by the caller.
pub fn dataset_report(real: &[Tensor], synthetic: &[Tensor], seed: u64) -> Result<DatasetReport> {
    if real.len() < 2 {
        return Err(Error::Contract(format!(
            "real dataset needs at least 2 images, has {}",
            real.len()
        )));
    }
    if synthetic.is_empty() {
        return Err(Error::Contract("synthetic dataset is empty".into()));
    }
    let size = real[0].shape().last().copied().unwrap_or(0);
    if let Some(bad) = real.iter().chain(synthetic).find(|t| t.shape().last() != Some(&size)) {
        return Err(Error::Contract(format!(
            "image {:?} does not match image_size {size}",
            bad.shape()
        )));
    }
    let (a, b) = real_split_halves(real.len(), seed);
    let pick = |idx: &[usize]| idx.iter().map(|&i| real[i].clone()).collect::<Vec<_>>();
    let h_real = grayscale_histogram(real, DEFAULT_BINS)?;
    let h_syn = grayscale_histogram(synthetic, DEFAULT_BINS)?;
    let h_a = grayscale_histogram(&pick(&a), DEFAULT_BINS)?;
    let h_b = grayscale_histogram(&pick(&b), DEFAULT_BINS)?;
    Ok(DatasetReport {
        schema_version: REPORT_SCHEMA_VERSION,
        config_hash: None,
        image_size: size,
        bins: DEFAULT_BINS,
        real_count: real.len(),
        synthetic_count: synthetic.len(),
        kl_syn_vs_real: kl_divergence(&h_syn, &h_real)?,
        kl_real_split: kl_divergence(&h_a, &h_b)?,
        f1_synthetic_trained: None,
        f1_real_trained: None,
        f1_gap: None,
        memorization: None,
    })
}

impl DatasetReport {
    pub fn set_f1(&mut self, synthetic_trained: F1Summary, real_trained: F1Summary) {
        self.f1_gap = Some(real_trained.pooled.f1 - synthetic_trained.pooled.f1);
        self.f1_synthetic_trained = Some(synthetic_trained);
        self.f1_real_trained = Some(real_trained);
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let r: DatasetReport = serde_json::from_str(s)?;
        if r.schema_version != REPORT_SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported report schema version {}",
                r.schema_version
            )));
        }
        Ok(r)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "real images:        {}", self.real_count);
        let _ = writeln!(s, "synthetic images:   {}", self.synthetic_count);
        let _ = writeln!(s, "KL(synthetic|real): {:.6}", self.kl_syn_vs_real);
        let _ = writeln!(s, "KL(real A|real B):  {:.6}", self.kl_real_split);
        if let (Some(syn), Some(real)) = (&self.f1_synthetic_trained, &self.f1_real_trained) {
            let _ = writeln!(s, "F1 synthetic-trained: {:.4}", syn.pooled.f1);
            let _ = writeln!(s, "F1 real-trained:      {:.4}", real.pooled.f1);
        }
        if let Some(gap) = self.f1_gap {
            let _ = writeln!(s, "F1 gap:               {gap:.4}");
        }
        if let Some(m) = &self.memorization {
            let _ = writeln!(
                s,
                "memorization: {} of {} exact copies, min distance {:.5}, KS {:.3}",
                m.exact_copies, m.generated, m.min_distance, m.ks_foreground_fraction
            );
        }
        s
    }
}
