//! Simulation study: 30 time points with a conflict window, data drawn from
//! an unstructured model around a known trend, fitted by both the smoothed
//! direct model and the conflict-adaptive model.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::graph::AreaGraph;
use crate::inference::{fit, rmse, GridConfig};
use crate::latent::{ModelConfig, ModelSpec, Observation, StructuredKind};
use crate::structmat::{conflict_arw1_parts, scale_parts, StructureParts};

pub const N_PERIODS: usize = 30;
/// Conflict periods, 1-based and inclusive.
pub const CONFLICT: (usize, usize) = (9, 15);
pub const BASELINE: f64 = -3.0;
pub const AMPLITUDE: f64 = 1.0;
pub const TRIANGLE_PEAK: usize = 12;
pub const TAU_CALM: f64 = 20.0;
pub const TAU_CONFLICT: f64 = 10.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Trend {
    Constant,
    LevelChange,
    Triangle,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TauRegime {
    Equal,
    Unequal,
}

impl fmt::Display for Trend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Trend::Constant => "constant",
            Trend::LevelChange => "level-change",
            Trend::Triangle => "triangle",
        })
    }
}

impl fmt::Display for TauRegime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TauRegime::Equal => "equal",
            TauRegime::Unequal => "unequal",
        })
    }
}

impl std::str::FromStr for Trend {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(Trend::Constant),
            "level-change" => Ok(Trend::LevelChange),
            "triangle" => Ok(Trend::Triangle),
            _ => Err(Error::invalid(format!("unknown trend '{s}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimSetting {
    pub trend: Trend,
    pub tau_regime: TauRegime,
    /// Observation variance.
    pub v: f64,
}

impl SimSetting {
    /// Stable text key, also used to derive the random stream.
    pub fn key(&self) -> String {
        format!("{}/{}/{:.17e}", self.trend, self.tau_regime, self.v)
    }
}

fn in_conflict(i: usize) -> bool {
    (CONFLICT.0..=CONFLICT.1).contains(&i)
}

/// Trend values `mu_1..mu_n`.
pub fn make_trend(kind: Trend, n: usize) -> Vec<f64> {
    (1..=n)
        .map(|i| match kind {
            Trend::Constant => BASELINE,
            Trend::LevelChange => BASELINE + if in_conflict(i) { AMPLITUDE } else { 0.0 },
            Trend::Triangle => {
                let half = (CONFLICT.1 - CONFLICT.0 + 1) as f64 / 2.0 + 0.5;
                let dist = (i as f64 - TRIANGLE_PEAK as f64).abs();
                BASELINE + AMPLITUDE * (1.0 - dist / half).max(0.0)
            }
        })
        .collect()
}

/// Precisions `tau_1..tau_n` of the unstructured effect.
pub fn make_taus(regime: TauRegime, n: usize) -> Vec<f64> {
    (1..=n)
        .map(|i| match regime {
            TauRegime::Unequal if in_conflict(i) => TAU_CONFLICT,
            _ => TAU_CALM,
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SimData {
    pub eta: Vec<f64>,
    pub y: Vec<f64>,
    pub v: f64,
}

/// Generator for `(seed, setting, replicate)`: the key is hashed into the
/// ChaCha seed and the replicate selects the stream.
pub fn stream(seed: u64, setting: &SimSetting, replicate: u64) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(setting.key().as_bytes());
    let mut rng = ChaCha8Rng::from_seed(h.finalize().into());
    rng.set_stream(replicate);
    rng
}

/// `eta_i = mu_i + b_i`, `b_i ~ N(0, 1/tau_i)`, `y_i ~ N(eta_i, V)`.
pub fn simulate_dataset(setting: &SimSetting, seed: u64, replicate: u64) -> Result<SimData> {
    if !(setting.v > 0.0) {
        return Err(Error::invalid("observation variance must be positive"));
    }
    let mut rng = stream(seed, setting, replicate);
    let mu = make_trend(setting.trend, N_PERIODS);
    let taus = make_taus(setting.tau_regime, N_PERIODS);
    let mut eta = Vec::with_capacity(N_PERIODS);
    let mut y = Vec::with_capacity(N_PERIODS);
    for (m, t) in mu.iter().zip(&taus) {
        let e = m + rng.sample::<f64, _>(StandardNormal) / t.sqrt();
        eta.push(e);
        y.push(e + setting.v.sqrt() * rng.sample::<f64, _>(StandardNormal));
    }
    Ok(SimData { eta, y, v: setting.v })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StudyModel {
    SmoothedDirect,
    Proposed,
}

impl fmt::Display for StudyModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StudyModel::SmoothedDirect => "smoothed-direct",
            StudyModel::Proposed => "proposed",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyConfig {
    pub replicates: usize,
    pub seed: u64,
    pub trends: Vec<Trend>,
    pub regimes: Vec<TauRegime>,
    pub variances: Vec<f64>,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            replicates: 100,
            seed: 1,
            trends: vec![Trend::Constant, Trend::LevelChange, Trend::Triangle],
            regimes: vec![TauRegime::Equal, TauRegime::Unequal],
            variances: vec![1.0 / 75.0, 1.0 / 150.0, 1.0 / 300.0],
        }
    }
}

impl StudyConfig {
    pub fn settings(&self) -> Vec<SimSetting> {
        let mut out = Vec::new();
        for &trend in &self.trends {
            for &tau_regime in &self.regimes {
                for &v in &self.variances {
                    out.push(SimSetting { trend, tau_regime, v });
                }
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Metrics {
    pub rmse: f64,
    pub dic: f64,
    pub ls: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StudyRow {
    pub setting: SimSetting,
    pub replicate: usize,
    pub model: StudyModel,
    pub metrics: Metrics,
}

/// Smoothed direct minus proposed; positive favours the proposed model.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StudyDiff {
    pub setting: SimSetting,
    pub replicate: usize,
    pub rmse: f64,
    pub dic: f64,
    pub ls: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StudyFailure {
    pub setting: SimSetting,
    pub replicate: usize,
    pub message: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Spread {
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
}

impl Spread {
    pub fn iqr(&self) -> f64 {
        self.q75 - self.q25
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SettingSummary {
    pub setting: SimSetting,
    pub n_ok: usize,
    pub n_failed: usize,
    pub rmse: Spread,
    pub dic: Spread,
    pub ls: Spread,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StudyTable {
    pub rows: Vec<StudyRow>,
    pub diffs: Vec<StudyDiff>,
    pub failures: Vec<StudyFailure>,
    pub summaries: Vec<SettingSummary>,
}

impl StudyTable {
    pub fn summary_for(&self, trend: Trend, regime: TauRegime, v: f64) -> Option<&SettingSummary> {
        self.summaries
            .iter()
            .find(|s| s.setting.trend == trend && s.setting.tau_regime == regime && s.setting.v == v)
    }
}

/// Type-7 sample quantile.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn spread(values: &[f64]) -> Spread {
    if values.is_empty() {
        return Spread { median: f64::NAN, q25: f64::NAN, q75: f64::NAN };
    }
    let mut s = values.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    Spread { median: quantile(&s, 0.5), q25: quantile(&s, 0.25), q75: quantile(&s, 0.75) }
}

/// The two structures shared by every replicate.
pub struct StudyModels {
    plain: StructureParts,
    adaptive: StructureParts,
}

impl StudyModels {
    pub fn new() -> Result<Self> {
        let conflict: Vec<usize> = (CONFLICT.0 - 1..CONFLICT.1).collect();
        let g = AreaGraph::temporal(N_PERIODS, Some(&conflict))?;
        Ok(StudyModels {
            plain: scale_parts(StructureParts::plain(&g)?)?,
            adaptive: scale_parts(conflict_arw1_parts(&g)?)?,
        })
    }

    pub fn spec(&self, model: StudyModel, data: &SimData) -> Result<ModelSpec> {
        let obs = data
            .y
            .iter()
            .enumerate()
            .map(|(i, &y)| Observation { area: i, survey: 0, y, variance: data.v })
            .collect();
        let (parts, structured) = match model {
            StudyModel::SmoothedDirect => (self.plain.clone(), StructuredKind::Nonadaptive),
            StudyModel::Proposed => (self.adaptive.clone(), StructuredKind::Adaptive),
        };
        ModelSpec::new(parts, obs, 1, ModelConfig { structured, ..ModelConfig::default() })
    }

    /// Fit one model to one dataset and score it against the truth.
    pub fn evaluate(&self, model: StudyModel, data: &SimData, grid: &GridConfig) -> Result<Metrics> {
        let f = fit(&self.spec(model, data)?, grid)?;
        let est: Vec<f64> = f.area_eta.iter().map(|s| s.mean).collect();
        Ok(Metrics { rmse: rmse(&data.eta, &est)?, dic: f.dic.dic, ls: f.log_score })
    }
}

/// Run every setting and replicate. Replicates whose fit fails are listed
/// in `failures` and left out of the summaries.
pub fn run_study(cfg: &StudyConfig, grid: &GridConfig) -> Result<StudyTable> {
    if cfg.replicates == 0 {
        return Err(Error::invalid("replicates must be at least 1"));
    }
    if cfg.variances.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::invalid("observation variances must be positive"));
    }
    let models = StudyModels::new()?;
    let settings = cfg.settings();
    let jobs: Vec<(SimSetting, usize)> = settings
        .iter()
        .flat_map(|s| (0..cfg.replicates).map(move |r| (*s, r)))
        .collect();
    let results: Vec<Result<(Metrics, Metrics)>> = jobs
        .par_iter()
        .map(|(s, r)| {
            let data = simulate_dataset(s, cfg.seed, *r as u64)?;
            Ok((
                models.evaluate(StudyModel::SmoothedDirect, &data, grid)?,
                models.evaluate(StudyModel::Proposed, &data, grid)?,
            ))
        })
        .collect();
    let mut table = StudyTable { rows: Vec::new(), diffs: Vec::new(), failures: Vec::new(), summaries: Vec::new() };
    for ((setting, replicate), res) in jobs.into_iter().zip(results) {
        match res {
            Ok((a, b)) => {
                table.rows.push(StudyRow { setting, replicate, model: StudyModel::SmoothedDirect, metrics: a });
                table.rows.push(StudyRow { setting, replicate, model: StudyModel::Proposed, metrics: b });
                table.diffs.push(StudyDiff {
                    setting,
                    replicate,
                    rmse: a.rmse - b.rmse,
                    dic: a.dic - b.dic,
                    ls: a.ls - b.ls,
                });
            }
            Err(e) => table.failures.push(StudyFailure { setting, replicate, message: e.to_string() }),
        }
    }
    for s in settings {
        let d: Vec<&StudyDiff> = table.diffs.iter().filter(|d| d.setting == s).collect();
        let col = |f: fn(&StudyDiff) -> f64| spread(&d.iter().map(|x| f(x)).collect::<Vec<_>>());
        table.summaries.push(SettingSummary {
            setting: s,
            n_ok: d.len(),
            n_failed: table.failures.iter().filter(|f| f.setting == s).count(),
            rmse: col(|x| x.rmse),
            dic: col(|x| x.dic),
            ls: col(|x| x.ls),
        });
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trends() {
        let c = make_trend(Trend::Constant, N_PERIODS);
        assert_eq!(c[8], c[0]);
        let l = make_trend(Trend::LevelChange, N_PERIODS);
        assert_eq!(l[8] - l[7], 1.0);
        assert_eq!(l[15], BASELINE);
        let t = make_trend(Trend::Triangle, N_PERIODS);
        let argmax = (0..N_PERIODS).max_by(|&a, &b| t[a].total_cmp(&t[b])).unwrap();
        assert_eq!(argmax + 1, TRIANGLE_PEAK);
        for k in 1..=3 {
            assert_eq!(t[TRIANGLE_PEAK - 1 - k], t[TRIANGLE_PEAK - 1 + k]);
        }
        assert_eq!(t[TRIANGLE_PEAK - 1], BASELINE + AMPLITUDE);
        assert!(t[CONFLICT.0 - 1] > BASELINE && t[CONFLICT.1 - 1] > BASELINE);
        assert_eq!(t[CONFLICT.0 - 2], BASELINE);
        assert_eq!(t[CONFLICT.1], BASELINE);
        // shock detectable at the largest variance
        assert!(AMPLITUDE >= 5.0 * (1.0f64 / 75.0).sqrt());
    }

    #[test]
    fn deterministic_streams() {
        let s = SimSetting { trend: Trend::Triangle, tau_regime: TauRegime::Unequal, v: 1.0 / 150.0 };
        assert_eq!(simulate_dataset(&s, 7, 3).unwrap(), simulate_dataset(&s, 7, 3).unwrap());
        assert_ne!(simulate_dataset(&s, 7, 3).unwrap(), simulate_dataset(&s, 7, 4).unwrap());
        let tiny = SimSetting { v: 1e-30, ..s };
        let d = simulate_dataset(&tiny, 7, 0).unwrap();
        assert!(d.y.iter().zip(&d.eta).all(|(y, e)| (y - e).abs() < 1e-12));
    }

    #[test]
    fn unstructured_variance() {
        let s = SimSetting { trend: Trend::Constant, tau_regime: TauRegime::Equal, v: 1.0 };
        let mu = make_trend(s.trend, N_PERIODS);
        let draws: Vec<f64> = (0..3334u64)
            .flat_map(|r| {
                let d = simulate_dataset(&s, 11, r).unwrap();
                d.eta.iter().zip(&mu).map(|(e, m)| e - m).collect::<Vec<_>>()
            })
            .collect();
        let n = draws.len();
        let m = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((var - 0.05).abs() < 0.002, "{var}");
    }

    #[test]
    fn spreads() {
        let s = spread(&[4.0, 1.0, 3.0, 2.0, 5.0]);
        assert_eq!((s.median, s.q25, s.q75), (3.0, 2.0, 4.0));
        assert_eq!(s.iqr(), 2.0);
    }
}
