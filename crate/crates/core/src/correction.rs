//! Affine correction of estimated rates and its k-fold cross validation.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format::sig12;
use crate::stats::ErrorStats;

/// Estimated and reference values, aligned by index (one per time slice).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedSeries {
    estimated: Vec<f64>,
    reference: Vec<f64>,
}

impl PairedSeries {
    pub fn new(estimated: Vec<f64>, reference: Vec<f64>) -> Result<Self> {
        if estimated.len() != reference.len() {
            return Err(Error::invalid(
                "paired series",
                format!("lengths {} and {} differ", estimated.len(), reference.len()),
            ));
        }
        if estimated.iter().chain(&reference).any(|x| !x.is_finite()) {
            return Err(Error::invalid("paired series", "values must be finite"));
        }
        Ok(Self {
            estimated,
            reference,
        })
    }

    pub fn len(&self) -> usize {
        self.estimated.len()
    }

    pub fn is_empty(&self) -> bool {
        self.estimated.is_empty()
    }

    pub fn estimated(&self) -> &[f64] {
        &self.estimated
    }

    pub fn reference(&self) -> &[f64] {
        &self.reference
    }

    fn select(&self, idx: &[usize]) -> PairedSeries {
        PairedSeries {
            estimated: idx.iter().map(|&i| self.estimated[i]).collect(),
            reference: idx.iter().map(|&i| self.reference[i]).collect(),
        }
    }
}

/// `reference ~ beta0 + beta1 * estimated`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineFit {
    pub beta0: f64,
    pub beta1: f64,
}

impl AffineFit {
    pub const IDENTITY: AffineFit = AffineFit {
        beta0: 0.0,
        beta1: 1.0,
    };

    pub fn apply(&self, estimated: f64) -> f64 {
        self.beta0 + self.beta1 * estimated
    }
}

/// Ordinary least squares of the reference on the estimate.
pub fn fit_affine(pairs: &PairedSeries) -> Result<AffineFit> {
    let n = pairs.len();
    if n < 2 {
        return Err(Error::InsufficientData(format!("{n} pairs, need 2")));
    }
    let nf = n as f64;
    let mx = pairs.estimated.iter().sum::<f64>() / nf;
    let my = pairs.reference.iter().sum::<f64>() / nf;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (x, y) in pairs.estimated.iter().zip(&pairs.reference) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
    }
    if sxx <= f64::EPSILON * mx.abs().max(1.0).powi(2) * nf {
        return Err(Error::Singular("estimated values are constant"));
    }
    let beta1 = sxy / sxx;
    Ok(AffineFit {
        beta0: my - beta1 * mx,
        beta1,
    })
}

/// Unsigned and signed relative error statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelativeErrors {
    pub unsigned: ErrorStats,
    pub signed: ErrorStats,
    /// Pairs left out because the reference is zero.
    pub excluded: usize,
}

fn signed_errors(pairs: &PairedSeries, fit: Option<&AffineFit>) -> (Vec<f64>, usize) {
    let mut out = Vec::with_capacity(pairs.len());
    let mut excluded = 0;
    for (&e, &r) in pairs.estimated.iter().zip(&pairs.reference) {
        if r == 0.0 {
            excluded += 1;
            continue;
        }
        let e = fit.map_or(e, |f| f.apply(e));
        out.push((e - r) / r.abs());
    }
    (out, excluded)
}

fn summarize(signed: &[f64], excluded: usize) -> Result<RelativeErrors> {
    let unsigned: Vec<f64> = signed.iter().map(|e| e.abs()).collect();
    match (
        ErrorStats::from_values(&unsigned),
        ErrorStats::from_values(signed),
    ) {
        (Some(unsigned), Some(signed)) => Ok(RelativeErrors {
            unsigned,
            signed,
            excluded,
        }),
        _ => Err(Error::InsufficientData(
            "no pair with a nonzero reference".into(),
        )),
    }
}

/// `e_uns = |est - ref| / |ref|` and `e_sgn = (est - ref) / |ref|`, with the
/// estimate passed through `fit` first when given.
pub fn error_stats(pairs: &PairedSeries, fit: Option<&AffineFit>) -> Result<RelativeErrors> {
    let (signed, excluded) = signed_errors(pairs, fit);
    summarize(&signed, excluded)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CvSplit {
    /// Fit on one fold, evaluate on the remaining k-1.
    #[default]
    Inverted,
    /// Fit on k-1 folds, evaluate on the held-out one.
    Conventional,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub train_size: usize,
    pub test_size: usize,
    pub fit: AffineFit,
    pub corrected: RelativeErrors,
    pub uncorrected: RelativeErrors,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lower: f64,
    pub upper: f64,
    pub counts: Vec<usize>,
    pub below: usize,
    pub above: usize,
}

impl Histogram {
    /// `bins` equal-width bins over `[-3 sigma, 3 sigma]` of the sample
    /// standard deviation; values outside are tallied separately.
    pub fn symmetric(values: &[f64], bins: usize) -> Self {
        let sigma = ErrorStats::from_values(values).map_or(0.0, |s| s.std_dev);
        let half = if sigma > 0.0 { 3.0 * sigma } else { 1.0 };
        let mut h = Histogram {
            lower: -half,
            upper: half,
            counts: vec![0; bins],
            below: 0,
            above: 0,
        };
        let width = 2.0 * half / bins as f64;
        for &v in values {
            if v < -half {
                h.below += 1;
            } else if v > half {
                h.above += 1;
            } else {
                let i = (((v + half) / width) as usize).min(bins - 1);
                h.counts[i] += 1;
            }
        }
        h
    }

    pub fn write_csv<W: Write + ?Sized>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "bin,lower,upper,count")?;
        let width = (self.upper - self.lower) / self.counts.len() as f64;
        for (i, c) in self.counts.iter().enumerate() {
            let lo = self.lower + i as f64 * width;
            writeln!(out, "{i},{},{},{c}", sig12(lo), sig12(lo + width))?;
        }
        Ok(())
    }
}

pub const HISTOGRAM_BINS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub k: usize,
    pub seed: u64,
    pub split: CvSplit,
    /// Fold of each pair, by pair index.
    pub fold_labels: Vec<usize>,
    pub folds: Vec<FoldResult>,
    /// Every corrected test error of every fold taken together.
    pub pooled_corrected: RelativeErrors,
    /// Every pair once, without correction.
    pub uncorrected: RelativeErrors,
    /// Mean over folds of the per-fold corrected means.
    pub fold_mean_unsigned: f64,
    pub fold_mean_signed: f64,
    /// Pooled corrected signed errors.
    pub histogram: Histogram,
}

impl CvReport {
    pub fn write_folds_csv<W: Write + ?Sized>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(
            out,
            "fold,train_size,test_size,beta0,beta1,e_uns_mean,e_uns_std,e_sgn_mean,e_sgn_std"
        )?;
        for f in &self.folds {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                f.fold,
                f.train_size,
                f.test_size,
                sig12(f.fit.beta0),
                sig12(f.fit.beta1),
                sig12(f.corrected.unsigned.mean),
                sig12(f.corrected.unsigned.std_dev),
                sig12(f.corrected.signed.mean),
                sig12(f.corrected.signed.std_dev),
            )?;
        }
        Ok(())
    }
}

/// Seeded assignment of `n` indices to `k` folds of sizes differing by at
/// most one.
pub fn fold_labels(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut labels = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        labels[i] = pos * k / n;
    }
    labels
}

pub fn k_fold_validate(
    pairs: &PairedSeries,
    k: usize,
    seed: u64,
    split: CvSplit,
) -> Result<CvReport> {
    if k < 2 {
        return Err(Error::invalid(
            "fold count",
            format!("k = {k} must be at least 2"),
        ));
    }
    if pairs.len() < 2 * k {
        return Err(Error::InsufficientData(format!(
            "{} pairs cannot fill {k} folds of at least 2",
            pairs.len()
        )));
    }
    let labels = fold_labels(pairs.len(), k, seed);
    let mut folds = Vec::with_capacity(k);
    let mut pooled = Vec::new();
    let mut pooled_excluded = 0;
    for f in 0..k {
        let (inside, outside): (Vec<usize>, Vec<usize>) =
            (0..pairs.len()).partition(|&i| labels[i] == f);
        let (train, test) = match split {
            CvSplit::Inverted => (inside, outside),
            CvSplit::Conventional => (outside, inside),
        };
        let fit = fit_affine(&pairs.select(&train))?;
        let test_pairs = pairs.select(&test);
        let (signed, excluded) = signed_errors(&test_pairs, Some(&fit));
        let corrected = summarize(&signed, excluded)?;
        pooled.extend_from_slice(&signed);
        pooled_excluded += excluded;
        folds.push(FoldResult {
            fold: f,
            train_size: train.len(),
            test_size: test.len(),
            fit,
            corrected,
            uncorrected: error_stats(&test_pairs, None)?,
        });
    }
    let kf = k as f64;
    Ok(CvReport {
        k,
        seed,
        split,
        fold_labels: labels,
        pooled_corrected: summarize(&pooled, pooled_excluded)?,
        uncorrected: error_stats(pairs, None)?,
        fold_mean_unsigned: folds.iter().map(|f| f.corrected.unsigned.mean).sum::<f64>() / kf,
        fold_mean_signed: folds.iter().map(|f| f.corrected.signed.mean).sum::<f64>() / kf,
        histogram: Histogram::symmetric(&pooled, HISTOGRAM_BINS),
        folds,
    })
}
