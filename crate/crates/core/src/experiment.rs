//! Experiment orchestration: configuration, seeded runs, sweeps, the
//! fine-tuned-entry report used to pick `alpha`, and CSV/JSON emission.
//!
//! Every random quantity of run `r` derives from `(master_seed, r)`, so the
//! first rows of a longer experiment are identical to a shorter one.

use std::fmt::{self, Write as _};
use std::io::Write;
use std::path::PathBuf;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codec::{debias, decode_cluster, encode_cluster, MAX_BITS};
use crate::error::{Error, Result};
use crate::estimator::{fine_tune, shift_estimate, transfer_with_report};
use crate::eval::{baseline_global, baseline_local, metrics, MetricSummary};
use crate::mix::{derive_seed, Domain};
use crate::model::{CenterMethod, Distribution, HashedEstimate, ShiftConfig};
use crate::ngram::{corpus_distributions, Corpus, KGramDistribution, WindowMode, MAX_GRAM_LENGTH};
use crate::robust::robust_center;
use crate::synthetic::{
    perturb_sparse, truncated_geometric_central, uniform_central, CategoricalSampler,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Synthetic,
    NGram,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Synthetic => "synthetic",
            Mode::NGram => "ngram",
        }
    }
}

/// Central distribution of the synthetic generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Central {
    Uniform,
    TruncGeom(f64),
}

impl Central {
    pub fn build(self, dim: usize) -> Result<Distribution> {
        match self {
            Central::Uniform => uniform_central(dim),
            Central::TruncGeom(beta) => truncated_geometric_central(dim, beta),
        }
    }
}

impl fmt::Display for Central {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Central::Uniform => f.write_str("uniform"),
            Central::TruncGeom(beta) => write!(f, "geometric:{beta}"),
        }
    }
}

impl FromStr for Central {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "uniform" {
            return Ok(Central::Uniform);
        }
        if let Some(beta) = s.strip_prefix("geometric:") {
            return Ok(Central::TruncGeom(parse_num(beta, "central")?));
        }
        Err(Error::Config(format!(
            "unknown central distribution `{s}` (uniform | geometric:<beta>)"
        )))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum EstimatorKind {
    ShiftMedian,
    ShiftTrimmed(f64),
    BaselineLocal,
    BaselineGlobal,
}

impl EstimatorKind {
    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::ShiftMedian => "shift-median",
            EstimatorKind::ShiftTrimmed(_) => "shift-trimmed",
            EstimatorKind::BaselineLocal => "local",
            EstimatorKind::BaselineGlobal => "global",
        }
    }

    fn center(self) -> Option<CenterMethod> {
        match self {
            EstimatorKind::ShiftMedian => Some(CenterMethod::Median),
            EstimatorKind::ShiftTrimmed(omega) => Some(CenterMethod::TrimmedMean(omega)),
            _ => None,
        }
    }

    fn omega(self) -> Option<f64> {
        match self {
            EstimatorKind::ShiftTrimmed(omega) => Some(omega),
            _ => None,
        }
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EstimatorKind::ShiftTrimmed(omega) => write!(f, "shift-trimmed:{omega}"),
            other => f.write_str(other.name()),
        }
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "shift-median" => Ok(EstimatorKind::ShiftMedian),
            "shift-trimmed" => Ok(EstimatorKind::ShiftTrimmed(0.1)),
            "local" => Ok(EstimatorKind::BaselineLocal),
            "global" => Ok(EstimatorKind::BaselineGlobal),
            other => match other.strip_prefix("shift-trimmed:") {
                Some(omega) => Ok(EstimatorKind::ShiftTrimmed(parse_num(omega, "estimators")?)),
                None => Err(Error::Config(format!(
                    "unknown estimator `{other}` (shift-median | shift-trimmed[:omega] | local | global)"
                ))),
            },
        }
    }
}

fn parse_num<T: FromStr>(value: &str, key: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("bad value `{value}` for `{key}`")))
}

/// Parses integers written plainly or in scientific notation (`1e5`).
fn parse_count(value: &str, key: &str) -> Result<u64> {
    if let Ok(v) = value.trim().parse::<u64>() {
        return Ok(v);
    }
    let v: f64 = parse_num(value, key)?;
    if v >= 0.0 && v.fract() == 0.0 && v <= u64::MAX as f64 {
        Ok(v as u64)
    } else {
        Err(Error::Config(format!(
            "`{key}` must be a non-negative integer, got `{value}`"
        )))
    }
}

fn parse_bool(value: &str, key: &str) -> Result<bool> {
    match value.trim() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("bad boolean `{value}` for `{key}`"))),
    }
}

/// All knobs of an experiment. Keys of the `key = value` format are listed
/// in [`ExperimentConfig::KEYS`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub dim: usize,
    pub sparsity: usize,
    pub clusters: usize,
    pub samples: u64,
    pub new_samples: Option<u64>,
    pub bits: u32,
    pub central: Central,
    pub estimators: Vec<EstimatorKind>,
    /// `r` in `alpha = 2^r ln(n)`.
    pub alpha_exponent: f64,
    pub repeats: usize,
    pub master_seed: u64,
    pub corpus_dir: Option<PathBuf>,
    pub gram_length: usize,
    pub window: WindowMode,
    pub renormalize: bool,
    /// Record estimator wall time; off by default so output is reproducible.
    pub timing: bool,
    pub output: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Synthetic,
            dim: 300,
            sparsity: 5,
            clusters: 30,
            samples: 100_000,
            new_samples: None,
            bits: 2,
            central: Central::Uniform,
            estimators: vec![
                EstimatorKind::ShiftMedian,
                EstimatorKind::ShiftTrimmed(0.1),
                EstimatorKind::BaselineLocal,
                EstimatorKind::BaselineGlobal,
            ],
            alpha_exponent: 0.0,
            repeats: 10,
            master_seed: 0,
            corpus_dir: None,
            gram_length: 2,
            window: WindowMode::Concatenate,
            renormalize: false,
            timing: false,
            output: None,
        }
    }
}

impl ExperimentConfig {
    pub const KEYS: &'static [&'static str] = &[
        "mode",
        "d",
        "s",
        "clusters",
        "n",
        "n-new",
        "bits",
        "central",
        "estimators",
        "alpha-r",
        "repeats",
        "seed",
        "corpus-dir",
        "k",
        "window",
        "renormalize",
        "timing",
        "output",
    ];

    /// Sets one knob from its textual form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "mode" => {
                self.mode = match v {
                    "synthetic" => Mode::Synthetic,
                    "ngram" => Mode::NGram,
                    _ => return Err(Error::Config(format!("unknown mode `{v}`"))),
                }
            }
            "d" => self.dim = parse_count(v, key)? as usize,
            "s" => self.sparsity = parse_count(v, key)? as usize,
            "clusters" | "T" => self.clusters = parse_count(v, key)? as usize,
            "n" => self.samples = parse_count(v, key)?,
            "n-new" => {
                self.new_samples = match v {
                    "" | "none" => None,
                    _ => Some(parse_count(v, key)?),
                }
            }
            "bits" | "b" => self.bits = parse_count(v, key)? as u32,
            "central" => self.central = v.parse()?,
            "estimators" => {
                self.estimators = v
                    .split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(str::parse)
                    .collect::<Result<_>>()?
            }
            "alpha-r" => self.alpha_exponent = parse_num(v, key)?,
            "repeats" => self.repeats = parse_count(v, key)? as usize,
            "seed" => self.master_seed = parse_count(v, key)?,
            "corpus-dir" => self.corpus_dir = Some(PathBuf::from(v)),
            "k" => self.gram_length = parse_count(v, key)? as usize,
            "window" => {
                self.window = match v {
                    "concat" => WindowMode::Concatenate,
                    "break" => WindowMode::BreakAtStripped,
                    _ => {
                        return Err(Error::Config(format!(
                            "unknown window mode `{v}` (concat | break)"
                        )))
                    }
                }
            }
            "renormalize" => self.renormalize = parse_bool(v, key)?,
            "timing" => self.timing = parse_bool(v, key)?,
            "output" => self.output = Some(PathBuf::from(v)),
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Applies a flat `key = value` document on top of `self`. Blank lines
    /// and lines starting with `#` are ignored.
    pub fn apply_kv_text(&mut self, text: &str) -> Result<()> {
        for (line_no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`", line_no + 1))
            })?;
            self.set(key, value)?;
        }
        Ok(())
    }

    pub fn from_kv_text(text: &str) -> Result<Self> {
        let mut config = Self::default();
        config.apply_kv_text(text)?;
        Ok(config)
    }

    /// Renders the config in the `key = value` format.
    pub fn to_kv_text(&self) -> String {
        let estimators: Vec<String> = self.estimators.iter().map(ToString::to_string).collect();
        let mut out = String::new();
        let _ = writeln!(out, "mode = {}", self.mode.name());
        let _ = writeln!(out, "d = {}", self.dim);
        let _ = writeln!(out, "s = {}", self.sparsity);
        let _ = writeln!(out, "clusters = {}", self.clusters);
        let _ = writeln!(out, "n = {}", self.samples);
        if let Some(n) = self.new_samples {
            let _ = writeln!(out, "n-new = {n}");
        }
        let _ = writeln!(out, "bits = {}", self.bits);
        let _ = writeln!(out, "central = {}", self.central);
        let _ = writeln!(out, "estimators = {}", estimators.join(","));
        let _ = writeln!(out, "alpha-r = {}", self.alpha_exponent);
        let _ = writeln!(out, "repeats = {}", self.repeats);
        let _ = writeln!(out, "seed = {}", self.master_seed);
        if let Some(dir) = &self.corpus_dir {
            let _ = writeln!(out, "corpus-dir = {}", dir.display());
        }
        let _ = writeln!(out, "k = {}", self.gram_length);
        let window = match self.window {
            WindowMode::Concatenate => "concat",
            WindowMode::BreakAtStripped => "break",
        };
        let _ = writeln!(out, "window = {window}");
        let _ = writeln!(out, "renormalize = {}", self.renormalize);
        let _ = writeln!(out, "timing = {}", self.timing);
        if let Some(path) = &self.output {
            let _ = writeln!(out, "output = {}", path.display());
        }
        out
    }

    pub fn alpha(&self) -> f64 {
        alpha_for(self.alpha_exponent, self.samples)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.repeats == 0 {
            return bad("repeats must be at least 1".into());
        }
        if !(1..=MAX_BITS).contains(&self.bits) {
            return bad(format!("bits must be in 1..={MAX_BITS}, got {}", self.bits));
        }
        if self.samples == 0 || self.samples > u64::from(u32::MAX) {
            return bad(format!("n must be in 1..=2^32-1, got {}", self.samples));
        }
        if let Some(m) = self.new_samples {
            if m == 0 || m > u64::from(u32::MAX) {
                return bad(format!("n-new must be in 1..=2^32-1, got {m}"));
            }
            if self.mode == Mode::NGram {
                return bad("n-new is only supported in synthetic mode".into());
            }
        }
        if !self.alpha_exponent.is_finite() {
            return bad("alpha-r must be finite".into());
        }
        if self.estimators.is_empty() {
            return bad("at least one estimator is required".into());
        }
        match self.mode {
            Mode::Synthetic => {
                if self.dim < 2 {
                    return bad(format!("d must be at least 2, got {}", self.dim));
                }
                if self.sparsity > self.dim {
                    return bad(format!("s = {} exceeds d = {}", self.sparsity, self.dim));
                }
                if self.clusters == 0 {
                    return bad("clusters must be at least 1".into());
                }
                if let Central::TruncGeom(beta) = self.central {
                    if !(beta > 0.0 && beta < 1.0) {
                        return bad(format!("geometric beta must be in (0, 1), got {beta}"));
                    }
                }
            }
            Mode::NGram => {
                if self.corpus_dir.is_none() {
                    return bad("ngram mode needs corpus-dir".into());
                }
                if !(1..=MAX_GRAM_LENGTH).contains(&self.gram_length) {
                    return bad(format!("k must be in 1..={MAX_GRAM_LENGTH}"));
                }
            }
        }
        Ok(())
    }

    fn check_centers(&self, clusters: usize) -> Result<()> {
        for e in &self.estimators {
            if let Some(c) = e.center() {
                c.validate(clusters)
                    .map_err(|err| Error::Config(format!("{e}: {err}")))?;
            }
        }
        Ok(())
    }
}

/// `2^r ln(n)`.
pub fn alpha_for(exponent: f64, samples: u64) -> f64 {
    exponent.exp2() * (samples as f64).ln()
}

/// One row of experiment output: one estimator on one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub mode: Mode,
    pub estimator: String,
    pub run: usize,
    pub seed: u64,
    pub d: usize,
    pub s: Option<usize>,
    #[serde(rename = "T")]
    pub clusters: usize,
    pub n: u64,
    pub b: u32,
    pub alpha: Option<f64>,
    pub omega: Option<f64>,
    pub k: Option<usize>,
    pub avg_l2_sq: f64,
    pub avg_l1: f64,
    pub finetuned_mean: Option<f64>,
    pub wall_ms: f64,
    /// Knobs outside the CSV schema, echoed for JSON consumers.
    pub central: Option<String>,
    pub alpha_r: f64,
    pub master_seed: u64,
    pub renormalize: bool,
    pub window: Option<WindowMode>,
}

/// Exact CSV column order.
pub const CSV_HEADER: &str =
    "mode,estimator,run,seed,d,s,T,n,b,alpha,omega,k,avg_l2_sq,avg_l1,finetuned_mean,wall_ms";

/// Formats with 17 significant digits.
pub fn format_float(x: f64) -> String {
    format!("{x:.16e}")
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn opt_float(v: Option<f64>) -> String {
    v.map(format_float).unwrap_or_default()
}

impl ResultRow {
    pub fn to_csv_line(&self) -> String {
        [
            self.mode.name().to_string(),
            self.estimator.clone(),
            self.run.to_string(),
            self.seed.to_string(),
            self.d.to_string(),
            opt(self.s),
            self.clusters.to_string(),
            self.n.to_string(),
            self.b.to_string(),
            opt_float(self.alpha),
            opt_float(self.omega),
            opt(self.k),
            format_float(self.avg_l2_sq),
            format_float(self.avg_l1),
            opt_float(self.finetuned_mean),
            format_float(self.wall_ms),
        ]
        .join(",")
    }
}

pub fn write_csv<W: Write>(mut out: W, rows: &[ResultRow]) -> Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for row in rows {
        writeln!(out, "{}", row.to_csv_line())?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_json<W: Write>(mut out: W, rows: &[ResultRow]) -> Result<()> {
    let text = serde_json_string(rows)?;
    out.write_all(text.as_bytes())?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

fn serde_json_string<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value).map_err(|e| Error::Config(e.to_string()))
}

/// Writes one row per distribution, `d` columns at 17 significant digits.
pub fn write_truth_csv<W: Write>(mut out: W, truths: &[Distribution]) -> Result<()> {
    for p in truths {
        let line: Vec<String> = p.probs().iter().map(|&x| format_float(x)).collect();
        writeln!(out, "{}", line.join(","))?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_truth_csv(text: &str) -> Result<Vec<Distribution>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            let probs = line
                .split(',')
                .map(|v| parse_num::<f64>(v, "truth"))
                .collect::<Result<Vec<_>>>()?;
            Distribution::new(probs)
        })
        .collect()
}

/// Data of one simulated run, after decoding.
#[derive(Debug, Clone)]
pub struct RunData {
    pub run: usize,
    pub seed: u64,
    pub truths: Vec<Distribution>,
    pub hashed: Vec<HashedEstimate>,
    /// A held-out cluster with `n-new` samples, when configured.
    pub new_cluster: Option<(Distribution, HashedEstimate)>,
}

enum TruthSource {
    Synthetic(Distribution),
    Corpus(Vec<KGramDistribution>),
}

/// A validated experiment with its ground-truth source loaded.
pub struct Experiment {
    config: ExperimentConfig,
    source: TruthSource,
}

impl Experiment {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let source = match config.mode {
            Mode::Synthetic => TruthSource::Synthetic(config.central.build(config.dim)?),
            Mode::NGram => {
                let dir = config.corpus_dir.as_ref().expect("validated");
                let corpus = Corpus::from_dir(dir)?;
                TruthSource::Corpus(corpus_distributions(
                    &corpus,
                    config.gram_length,
                    config.window,
                )?)
            }
        };
        let experiment = Self { config, source };
        experiment.config.check_centers(experiment.clusters())?;
        Ok(experiment)
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn dim(&self) -> usize {
        match &self.source {
            TruthSource::Synthetic(p) => p.dim(),
            TruthSource::Corpus(d) => d[0].dim(),
        }
    }

    pub fn clusters(&self) -> usize {
        match &self.source {
            TruthSource::Synthetic(_) => self.config.clusters,
            TruthSource::Corpus(d) => d.len(),
        }
    }

    /// Ground truth of the corpus clusters, if in n-gram mode.
    pub fn corpus_truths(&self) -> Option<&[KGramDistribution]> {
        match &self.source {
            TruthSource::Corpus(d) => Some(d),
            TruthSource::Synthetic(_) => None,
        }
    }

    pub fn run_seed(&self, run: usize) -> u64 {
        derive_seed(self.config.master_seed, Domain::Run, &[run as u64])
    }

    /// Ground-truth distributions of run `run`.
    pub fn truths(&self, run: usize) -> Result<Vec<Distribution>> {
        let seed = self.run_seed(run);
        match &self.source {
            TruthSource::Synthetic(center) => (0..self.config.clusters)
                .map(|t| self.perturbed(center, seed, t as u64))
                .collect(),
            TruthSource::Corpus(d) => Ok(d.iter().map(|g| g.dist.clone()).collect()),
        }
    }

    fn perturbed(
        &self,
        center: &Distribution,
        run_seed: u64,
        cluster: u64,
    ) -> Result<Distribution> {
        let gen = derive_seed(run_seed, Domain::Generate, &[cluster]);
        Ok(perturb_sparse(center, self.config.sparsity, gen, cluster)?.0)
    }

    fn hashed_cluster(
        &self,
        p: &Distribution,
        n: u64,
        run_seed: u64,
        cluster: u64,
    ) -> Result<HashedEstimate> {
        let sample_seed = derive_seed(run_seed, Domain::Sample, &[cluster]);
        let hash_seed = derive_seed(run_seed, Domain::Hash, &[]);
        let points = CategoricalSampler::new(p).draw_n(n as usize, sample_seed);
        let messages = encode_cluster(&points, cluster, hash_seed, self.config.bits, p.dim())?;
        drop(points);
        decode_cluster(&messages, cluster, hash_seed, self.config.bits, p.dim())
    }

    /// Generates, samples, encodes and decodes every cluster of run `run`.
    pub fn simulate(&self, run: usize) -> Result<RunData> {
        let seed = self.run_seed(run);
        let truths = self.truths(run)?;
        let hashed = truths
            .par_iter()
            .enumerate()
            .map(|(t, p)| self.hashed_cluster(p, self.config.samples, seed, t as u64))
            .collect::<Result<Vec<_>>>()?;
        let new_cluster = match (&self.source, self.config.new_samples) {
            (TruthSource::Synthetic(center), Some(m)) => {
                let id = self.config.clusters as u64;
                let p = self.perturbed(center, seed, id)?;
                let h = self.hashed_cluster(&p, m, seed, id)?;
                Some((p, h))
            }
            _ => None,
        };
        Ok(RunData {
            run,
            seed,
            truths,
            hashed,
            new_cluster,
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn row(
        &self,
        data: &RunData,
        estimator: &str,
        summary: &MetricSummary,
        n: u64,
        alpha: Option<f64>,
        omega: Option<f64>,
        finetuned_mean: Option<f64>,
        wall_ms: f64,
    ) -> ResultRow {
        let synthetic = self.config.mode == Mode::Synthetic;
        ResultRow {
            mode: self.config.mode,
            estimator: estimator.to_string(),
            run: data.run,
            seed: data.seed,
            d: self.dim(),
            s: synthetic.then_some(self.config.sparsity),
            clusters: self.clusters(),
            n,
            b: self.config.bits,
            alpha,
            omega,
            k: (!synthetic).then_some(self.config.gram_length),
            avg_l2_sq: summary.avg_l2_sq,
            avg_l1: summary.avg_l1,
            finetuned_mean,
            wall_ms,
            central: synthetic.then(|| self.config.central.to_string()),
            alpha_r: self.config.alpha_exponent,
            master_seed: self.config.master_seed,
            renormalize: self.config.renormalize,
            window: (!synthetic).then_some(self.config.window),
        }
    }

    fn timed<T>(&self, f: impl FnOnce() -> Result<T>) -> Result<(T, f64)> {
        let start = Instant::now();
        let value = f()?;
        let ms = if self.config.timing {
            start.elapsed().as_secs_f64() * 1e3
        } else {
            0.0
        };
        Ok((value, ms))
    }

    fn shift_config(&self, center: CenterMethod) -> ShiftConfig {
        ShiftConfig {
            bits: self.config.bits,
            alpha: self.config.alpha(),
            center,
            master_seed: self.config.master_seed,
            renormalize_output: self.config.renormalize,
        }
    }

    /// Runs every configured estimator on already simulated data.
    pub fn evaluate(&self, data: &RunData) -> Result<Vec<ResultRow>> {
        let bits = self.config.bits;
        let n = self.config.samples;
        let mut rows = Vec::new();
        let mut transfer_rows = Vec::new();
        for &kind in &self.config.estimators {
            match kind {
                EstimatorKind::ShiftMedian | EstimatorKind::ShiftTrimmed(_) => {
                    let cfg = self.shift_config(kind.center().expect("shift estimator"));
                    let (out, ms) = self.timed(|| shift_estimate(&data.hashed, &cfg))?;
                    let summary = metrics(&data.truths, &out.estimates)?;
                    rows.push(self.row(
                        data,
                        kind.name(),
                        &summary,
                        n,
                        Some(cfg.alpha),
                        kind.omega(),
                        Some(out.mean_replaced()),
                        ms,
                    ));
                    if let Some((truth, local)) = &data.new_cluster {
                        let m = local.sample_size();
                        let alpha = alpha_for(self.config.alpha_exponent, m);
                        let ((p, report), ms) =
                            self.timed(|| transfer_with_report(&out.center, local, alpha))?;
                        let p = if self.config.renormalize {
                            p.renormalized()
                        } else {
                            p
                        };
                        let summary = metrics(std::slice::from_ref(truth), &[p])?;
                        let name = match kind {
                            EstimatorKind::ShiftMedian => "transfer-median",
                            _ => "transfer-trimmed",
                        };
                        transfer_rows.push(self.row(
                            data,
                            name,
                            &summary,
                            m,
                            Some(alpha),
                            kind.omega(),
                            Some(report.replaced_count as f64),
                            ms,
                        ));
                    }
                }
                EstimatorKind::BaselineLocal => {
                    let (est, ms) = self.timed(|| baseline_local(&data.hashed, bits))?;
                    let summary = metrics(&data.truths, &est)?;
                    rows.push(self.row(data, kind.name(), &summary, n, None, None, None, ms));
                }
                EstimatorKind::BaselineGlobal => {
                    let (est, ms) = self.timed(|| baseline_global(&data.hashed, bits))?;
                    let est = vec![est; data.truths.len()];
                    let summary = metrics(&data.truths, &est)?;
                    rows.push(self.row(data, kind.name(), &summary, n, None, None, None, ms));
                }
            }
        }
        if let Some((truth, local)) = &data.new_cluster {
            let (p, ms) = self.timed(|| Ok(debias(local.as_estimate(), bits)))?;
            let summary = metrics(std::slice::from_ref(truth), &[p])?;
            transfer_rows.push(self.row(
                data,
                "transfer-local",
                &summary,
                local.sample_size(),
                None,
                None,
                None,
                ms,
            ));
        }
        rows.extend(transfer_rows);
        Ok(rows)
    }

    /// All rows of all runs, ordered by run then estimator.
    pub fn run(&self) -> Result<Vec<ResultRow>> {
        let per_run = (0..self.config.repeats)
            .into_par_iter()
            .map(|run| {
                let data = self.simulate(run)?;
                self.evaluate(&data)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(per_run.into_iter().flatten().collect())
    }
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    Experiment::new(config.clone())?.run()
}

/// Knob varied by [`sweep`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepAxis {
    Samples,
    Clusters,
    Sparsity,
    Bits,
    AlphaExponent,
    Omega,
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "n" => Ok(SweepAxis::Samples),
            "T" | "clusters" => Ok(SweepAxis::Clusters),
            "s" => Ok(SweepAxis::Sparsity),
            "b" | "bits" => Ok(SweepAxis::Bits),
            "r" | "alpha-r" => Ok(SweepAxis::AlphaExponent),
            "omega" => Ok(SweepAxis::Omega),
            other => Err(Error::Config(format!(
                "unknown sweep axis `{other}` (n | T | s | b | r | omega)"
            ))),
        }
    }
}

/// Base config with one knob set to `value`.
pub fn with_axis(base: &ExperimentConfig, axis: SweepAxis, value: f64) -> Result<ExperimentConfig> {
    let mut config = base.clone();
    let count = || -> Result<u64> {
        if value >= 0.0 && value.fract() == 0.0 {
            Ok(value as u64)
        } else {
            Err(Error::Config(format!(
                "sweep value {value} must be a non-negative integer"
            )))
        }
    };
    match axis {
        SweepAxis::Samples => config.samples = count()?,
        SweepAxis::Clusters => config.clusters = count()? as usize,
        SweepAxis::Sparsity => config.sparsity = count()? as usize,
        SweepAxis::Bits => config.bits = count()? as u32,
        SweepAxis::AlphaExponent => config.alpha_exponent = value,
        SweepAxis::Omega => {
            for e in &mut config.estimators {
                if let EstimatorKind::ShiftTrimmed(omega) = e {
                    *omega = value;
                }
            }
        }
    }
    Ok(config)
}

/// Runs the base config once per axis value; rows are ordered by value, then
/// run, then estimator.
pub fn sweep(base: &ExperimentConfig, axis: SweepAxis, values: &[f64]) -> Result<Vec<ResultRow>> {
    let experiments = values
        .iter()
        .map(|&v| Experiment::new(with_axis(base, axis, v)?))
        .collect::<Result<Vec<_>>>()?;
    let jobs: Vec<(usize, usize)> = experiments
        .iter()
        .enumerate()
        .flat_map(|(i, e)| (0..e.config.repeats).map(move |r| (i, r)))
        .collect();
    let rows = jobs
        .into_par_iter()
        .map(|(i, run)| {
            let e = &experiments[i];
            e.evaluate(&e.simulate(run)?)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(rows.into_iter().flatten().collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaRow {
    pub r: f64,
    pub alpha: f64,
    /// Mean over runs and clusters of the number of fine-tuned entries.
    pub mean_finetuned: f64,
    /// Per-run means.
    pub per_run: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaReport {
    pub dim: usize,
    pub center: CenterMethod,
    pub rows: Vec<AlphaRow>,
    /// Smallest `r` whose fine-tuned count is below `d / 2`.
    pub recommended_r: Option<f64>,
}

impl AlphaReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("r,alpha,mean_finetuned\n");
        for row in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{}",
                row.r,
                format_float(row.alpha),
                format_float(row.mean_finetuned)
            );
        }
        out
    }
}

/// Counts fine-tuned entries for each `alpha = 2^r ln(n)`, reusing the same
/// simulated data across all `r`.
pub fn alpha_report(config: &ExperimentConfig, r_values: &[f64]) -> Result<AlphaReport> {
    if r_values.iter().any(|r| !r.is_finite()) {
        return Err(Error::Config("alpha exponents must be finite".into()));
    }
    let experiment = Experiment::new(config.clone())?;
    let center_method = config
        .estimators
        .iter()
        .find_map(|e| e.center())
        .unwrap_or(CenterMethod::TrimmedMean(0.1));
    center_method.validate(experiment.clusters())?;
    let per_run: Vec<Vec<f64>> = (0..config.repeats)
        .into_par_iter()
        .map(|run| {
            let data = experiment.simulate(run)?;
            let center = robust_center(&data.hashed, center_method)?;
            r_values
                .iter()
                .map(|&r| {
                    let alpha = alpha_for(r, config.samples);
                    let total = data
                        .hashed
                        .iter()
                        .map(|local| {
                            fine_tune(&center, local, alpha).map(|(_, rep)| rep.replaced_count)
                        })
                        .sum::<Result<usize>>()?;
                    Ok(total as f64 / data.hashed.len() as f64)
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let dim = experiment.dim();
    let rows: Vec<AlphaRow> = r_values
        .iter()
        .enumerate()
        .map(|(i, &r)| {
            let runs: Vec<f64> = per_run.iter().map(|v| v[i]).collect();
            AlphaRow {
                r,
                alpha: alpha_for(r, config.samples),
                mean_finetuned: runs.iter().sum::<f64>() / runs.len() as f64,
                per_run: runs,
            }
        })
        .collect();
    let recommended_r = rows
        .iter()
        .filter(|row| row.mean_finetuned < dim as f64 / 2.0)
        .map(|row| row.r)
        .min_by(f64::total_cmp);
    Ok(AlphaReport {
        dim,
        center: center_method,
        rows,
        recommended_r,
    })
}
