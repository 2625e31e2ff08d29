//! Latent Gaussian model for smoothed direct estimates: fixed effects,
//! survey effects and a BYM2-style area effect stored as `w = (b, x*)`.
//!
//! Latent layout: `[mu, beta?, nu_1..nu_S?, b_1..b_N, x*_1..x*_N]`.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::priors::{expit, PcPhiPrior, PcPrecisionPrior, PcThetaPrior, PriorStatement};
use crate::structmat::{StructureParts, SymSparseMatrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StructuredKind {
    Nonadaptive,
    Adaptive,
    GeneralMulticountry,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SurveyMode {
    /// Random effects when there is more than one survey, none otherwise.
    #[default]
    Auto,
    Random,
    Fixed,
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum SurveyEffects {
    None,
    Random,
    Fixed,
}

/// One direct estimate: `y ~ N(eta, variance)` for area `area`, survey `survey`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub area: usize,
    pub survey: usize,
    pub y: f64,
    pub variance: f64,
}

/// Prior statements as they appear in a model config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorConfig {
    pub tau_b: PriorStatement,
    pub phi: PriorStatement,
    pub theta: PriorStatement,
    pub psi: PriorStatement,
    pub survey: PriorStatement,
}

impl Default for PriorConfig {
    fn default() -> Self {
        PriorConfig {
            tau_b: PriorStatement::PRECISION,
            phi: PriorStatement::PHI,
            theta: PriorStatement::THETA,
            psi: PriorStatement::PRECISION,
            survey: PriorStatement::PRECISION,
        }
    }
}

/// User-facing model configuration (JSON).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub structured: StructuredKind,
    pub include_slope: bool,
    pub center_slope: bool,
    pub survey_mode: SurveyMode,
    pub priors: PriorConfig,
    /// Pin theta instead of giving it a prior.
    pub theta_fixed: Option<f64>,
    pub fixed_effect_precision: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            structured: StructuredKind::Nonadaptive,
            include_slope: false,
            center_slope: true,
            survey_mode: SurveyMode::Auto,
            priors: PriorConfig::default(),
            theta_fixed: None,
            fixed_effect_precision: 0.001,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum ThetaSpec {
    Free(PcThetaPrior),
    Fixed(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Hyperpriors {
    pub tau_b: PcPrecisionPrior,
    pub phi: PcPhiPrior,
    /// Absent for the non-adaptive model.
    pub theta: Option<ThetaSpec>,
    pub psi: Option<PcPrecisionPrior>,
    pub survey: Option<PcPrecisionPrior>,
}

/// Block offsets of the latent vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct LatentLayout {
    pub n_areas: usize,
    pub slope: bool,
    pub n_nu: usize,
}

impl LatentLayout {
    pub const MU: usize = 0;

    pub fn beta(&self) -> Option<usize> {
        self.slope.then_some(1)
    }

    pub fn nu_start(&self) -> usize {
        1 + usize::from(self.slope)
    }

    pub fn b_start(&self) -> usize {
        self.nu_start() + self.n_nu
    }

    pub fn x_start(&self) -> usize {
        self.b_start() + self.n_areas
    }

    pub fn dim(&self) -> usize {
        self.x_start() + self.n_areas
    }

    /// Row labels, e.g. `mu`, `beta`, `nu[2]`, `b[7]`, `x[7]` (1-based).
    pub fn labels(&self) -> Vec<String> {
        let mut out = vec!["mu".to_string()];
        if self.slope {
            out.push("beta".into());
        }
        out.extend((1..=self.n_nu).map(|s| format!("nu[{s}]")));
        out.extend((1..=self.n_areas).map(|i| format!("b[{i}]")));
        out.extend((1..=self.n_areas).map(|i| format!("x[{i}]")));
        out
    }
}

/// Hyperparameters on their natural scale.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HyperValues {
    pub tau_b: f64,
    pub phi: f64,
    pub theta: f64,
    pub psis: Vec<f64>,
    pub tau_nu: Option<f64>,
}

/// Sparse row: `(column, value)` pairs.
pub type SparseRow = Vec<(usize, f64)>;

/// A fully assembled model.
#[derive(Clone, Debug)]
pub struct ModelSpec {
    parts: StructureParts,
    kind: StructuredKind,
    config: ModelConfig,
    layout: LatentLayout,
    survey: SurveyEffects,
    n_surveys: usize,
    observations: Vec<Observation>,
    priors: Hyperpriors,
    forecast_areas: BTreeSet<usize>,
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

impl ModelSpec {
    /// `parts` must be scaled. Areas are 0-based, surveys `0..n_surveys`.
    pub fn new(
        parts: StructureParts,
        mut observations: Vec<Observation>,
        n_surveys: usize,
        config: ModelConfig,
    ) -> Result<Self> {
        if !parts.is_scaled() {
            return Err(Error::invalid("model needs scaled structure parts"));
        }
        let n = parts.dim();
        let l = parts.n_parts();
        match config.structured {
            StructuredKind::Adaptive if l != 2 => {
                return Err(Error::invalid(format!("adaptive model needs 2 structure parts, got {l}")))
            }
            StructuredKind::GeneralMulticountry if l < 3 => {
                return Err(Error::invalid(format!("general multi-country model needs at least 3 structure parts, got {l}")))
            }
            _ => {}
        }
        if observations.is_empty() {
            return Err(Error::invalid("no observations"));
        }
        if n_surveys == 0 {
            return Err(Error::invalid("at least one survey is required"));
        }
        for (k, o) in observations.iter().enumerate() {
            if o.area >= n {
                return Err(Error::OutOfRange { index: o.area + 1, n });
            }
            if o.survey >= n_surveys {
                return Err(Error::invalid(format!("observation {} references survey {} of {n_surveys}", k + 1, o.survey + 1)));
            }
            if !(o.variance > 0.0 && o.variance.is_finite()) || !o.y.is_finite() {
                return Err(Error::invalid(format!("observation {} needs finite y and positive variance", k + 1)));
            }
        }
        // canonical order, so results do not depend on how the input was listed
        observations.sort_by(|a, b| {
            (a.area, a.survey)
                .cmp(&(b.area, b.survey))
                .then(a.y.total_cmp(&b.y))
                .then(a.variance.total_cmp(&b.variance))
        });
        if !(config.fixed_effect_precision > 0.0) {
            return Err(Error::invalid("fixed effect precision must be positive"));
        }
        let survey = match config.survey_mode {
            SurveyMode::Auto if n_surveys > 1 => SurveyEffects::Random,
            SurveyMode::Auto | SurveyMode::None => SurveyEffects::None,
            SurveyMode::Random => SurveyEffects::Random,
            SurveyMode::Fixed => SurveyEffects::Fixed,
        };
        if survey == SurveyEffects::Fixed && n_surveys < 2 {
            return Err(Error::invalid("fixed survey effects with a sum-to-zero constraint need at least 2 surveys"));
        }
        let pc = &config.priors;
        let phi = PcPhiPrior::from_structure(&parts.combine_scaled(&vec![1.0; l]), pc.phi.u, pc.phi.alpha)?;
        let theta = match (config.structured, config.theta_fixed) {
            (StructuredKind::Nonadaptive, _) => None,
            (_, Some(t)) => {
                if !(t > 0.0 && t <= 1.0) {
                    return Err(Error::invalid(format!("fixed theta {t} outside (0, 1]")));
                }
                Some(ThetaSpec::Fixed(t))
            }
            (_, None) => Some(ThetaSpec::Free(PcThetaPrior::from_parts(&parts, pc.theta.u, pc.theta.alpha)?)),
        };
        let priors = Hyperpriors {
            tau_b: PcPrecisionPrior::calibrate(pc.tau_b.u, pc.tau_b.alpha)?,
            phi,
            theta,
            psi: (config.structured == StructuredKind::GeneralMulticountry)
                .then(|| PcPrecisionPrior::calibrate(pc.psi.u, pc.psi.alpha))
                .transpose()?,
            survey: (survey == SurveyEffects::Random)
                .then(|| PcPrecisionPrior::calibrate(pc.survey.u, pc.survey.alpha))
                .transpose()?,
        };
        let observed: BTreeSet<usize> = observations.iter().map(|o| o.area).collect();
        let forecast_areas = (0..n).filter(|i| !observed.contains(i)).collect();
        let layout = LatentLayout {
            n_areas: n,
            slope: config.include_slope,
            n_nu: if survey == SurveyEffects::None { 0 } else { n_surveys },
        };
        Ok(ModelSpec {
            parts,
            kind: config.structured,
            config,
            layout,
            survey,
            n_surveys,
            observations,
            priors,
            forecast_areas,
        })
    }

    pub fn parts(&self) -> &StructureParts {
        &self.parts
    }

    pub fn kind(&self) -> StructuredKind {
        self.kind
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> LatentLayout {
        self.layout
    }

    pub fn survey_effects(&self) -> SurveyEffects {
        self.survey
    }

    pub fn n_surveys(&self) -> usize {
        self.n_surveys
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn priors(&self) -> &Hyperpriors {
        &self.priors
    }

    /// Areas with no observation; predicted through the prior linkage.
    pub fn forecast_areas(&self) -> &BTreeSet<usize> {
        &self.forecast_areas
    }

    pub fn n_psi(&self) -> usize {
        match self.kind {
            StructuredKind::GeneralMulticountry => self.parts.n_parts() - 2,
            _ => 0,
        }
    }

    /// Slope covariate of area `i` (0-based).
    pub fn slope_covariate(&self, i: usize) -> f64 {
        let t = (i + 1) as f64;
        if self.config.center_slope {
            t - (self.layout.n_areas as f64 + 1.0) / 2.0
        } else {
            t
        }
    }

    /// Names of the internal hyperparameter coordinates.
    pub fn hyper_names(&self) -> Vec<String> {
        let mut out = vec!["tau_b".to_string(), "phi".to_string()];
        if matches!(self.priors.theta, Some(ThetaSpec::Free(_))) {
            out.push("theta".into());
        }
        out.extend((2..2 + self.n_psi()).map(|m| format!("psi[{m}]")));
        if self.priors.survey.is_some() {
            out.push("tau_nu".into());
        }
        out
    }

    pub fn n_hyper(&self) -> usize {
        self.hyper_names().len()
    }

    /// Map internal coordinates `z = (log tau_b, logit phi, [logit theta],
    /// [log psi_m], [log tau_nu])` to natural values.
    pub fn decode(&self, z: &[f64]) -> HyperValues {
        let mut it = z.iter().copied();
        let tau_b = it.next().expect("tau_b coordinate").exp();
        let phi = expit(it.next().expect("phi coordinate"));
        let theta = match &self.priors.theta {
            None => 1.0,
            Some(ThetaSpec::Fixed(t)) => *t,
            Some(ThetaSpec::Free(_)) => expit(it.next().expect("theta coordinate")),
        };
        let psis = (0..self.n_psi()).map(|_| it.next().expect("psi coordinate").exp()).collect();
        let tau_nu = self.priors.survey.map(|_| it.next().expect("tau_nu coordinate").exp());
        HyperValues { tau_b, phi, theta, psis, tau_nu }
    }

    /// Natural value of coordinate `k` given its internal value.
    pub fn decode_coordinate(&self, k: usize, zk: f64) -> f64 {
        match self.hyper_names()[k].as_str() {
            "phi" | "theta" => expit(zk),
            _ => zk.exp(),
        }
    }

    /// Log prior density of `z`, Jacobians included.
    pub fn ln_hyperprior(&self, z: &[f64]) -> f64 {
        let precision = |p: &PcPrecisionPrior, zk: f64| p.ln_density(zk.exp()) + zk;
        let mut k = 0;
        let mut next = || {
            k += 1;
            z[k - 1]
        };
        let mut lp = precision(&self.priors.tau_b, next());
        lp += self.priors.phi.ln_density_logit(next());
        if let Some(ThetaSpec::Free(p)) = &self.priors.theta {
            let zt = next();
            let theta = expit(zt);
            // log theta + log(1 - theta) = -softplus(-z) - softplus(z)
            lp += p.ln_density(theta) - softplus(-zt) - softplus(zt);
        }
        if let Some(p) = &self.priors.psi {
            for _ in 0..self.n_psi() {
                lp += precision(p, next());
            }
        }
        if let Some(p) = &self.priors.survey {
            lp += precision(p, next());
        }
        lp
    }

    /// Part weights `[1, psi_2..psi_M, theta]` (all ones for the plain model).
    pub fn part_weights(&self, h: &HyperValues) -> Vec<f64> {
        let l = self.parts.n_parts();
        match self.kind {
            StructuredKind::Nonadaptive => vec![1.0; l],
            StructuredKind::Adaptive => vec![1.0, h.theta],
            StructuredKind::GeneralMulticountry => {
                let mut w = vec![1.0];
                w.extend(&h.psis);
                w.push(h.theta);
                w
            }
        }
    }

    /// `R*_1 + sum psi_m R*_m + theta R*_L`.
    pub fn structured_precision(&self, h: &HyperValues) -> SymSparseMatrix {
        self.parts.combine_scaled(&self.part_weights(h))
    }

    /// Observation rows of the design matrix.
    pub fn design_matrix(&self) -> Vec<SparseRow> {
        self.observations.iter().map(|o| self.observation_row(o.area, Some(o.survey))).collect()
    }

    fn observation_row(&self, area: usize, survey: Option<usize>) -> SparseRow {
        let lay = &self.layout;
        let mut row = vec![(LatentLayout::MU, 1.0)];
        if let Some(b) = lay.beta() {
            row.push((b, self.slope_covariate(area)));
        }
        if let (Some(s), true) = (survey, lay.n_nu > 0) {
            row.push((lay.nu_start() + s, 1.0));
        }
        row.push((lay.b_start() + area, 1.0));
        row
    }

    /// `mu + slope + b_i` for every area, the linear predictor behind `p_i`.
    pub fn area_rows(&self) -> Vec<SparseRow> {
        (0..self.layout.n_areas).map(|i| self.observation_row(i, None)).collect()
    }

    /// Sum-to-zero rows: `x*` always, `nu` in fixed-effect survey mode.
    pub fn constraint_rows(&self) -> DMatrix<f64> {
        let lay = &self.layout;
        let k = 1 + usize::from(self.survey == SurveyEffects::Fixed);
        let mut c = DMatrix::zeros(k, lay.dim());
        for i in 0..lay.n_areas {
            c[(0, lay.x_start() + i)] = 1.0;
        }
        if self.survey == SurveyEffects::Fixed {
            for s in 0..lay.n_nu {
                c[(1, lay.nu_start() + s)] = 1.0;
            }
        }
        c
    }

    /// Prior precision of the full latent vector and the log of its
    /// generalized determinant on the constrained subspace.
    pub fn prior_precision(&self, h: &HyperValues) -> Result<(DMatrix<f64>, f64)> {
        let lay = &self.layout;
        let p0 = self.config.fixed_effect_precision;
        let mut q = DMatrix::zeros(lay.dim(), lay.dim());
        let mut ln_pdet = 0.0;
        q[(0, 0)] = p0;
        ln_pdet += p0.ln();
        if let Some(b) = lay.beta() {
            q[(b, b)] = p0;
            ln_pdet += p0.ln();
        }
        match self.survey {
            SurveyEffects::None => {}
            SurveyEffects::Random => {
                let t = h.tau_nu.expect("survey precision");
                for s in 0..lay.n_nu {
                    q[(lay.nu_start() + s, lay.nu_start() + s)] = t;
                }
                ln_pdet += lay.n_nu as f64 * t.ln();
            }
            SurveyEffects::Fixed => {
                for s in 0..lay.n_nu {
                    q[(lay.nu_start() + s, lay.nu_start() + s)] = p0;
                }
                ln_pdet += (lay.n_nu as f64 - 1.0) * p0.ln();
            }
        }
        let r = self.structured_precision(h);
        let s = bym2_block(&r, h.tau_b, h.phi)?;
        let off = lay.b_start();
        for (i, j, v) in s.upper_entries() {
            q[(off + i, off + j)] = v;
            q[(off + j, off + i)] = v;
        }
        let n = lay.n_areas as f64;
        ln_pdet += n * (h.tau_b / (1.0 - h.phi)).ln() + ln_pdet_laplacian(&r, 0)?;
        Ok((q, ln_pdet))
    }
}

/// Joint precision of `w = (b, x*)` given the structured precision `r`
/// (already weighted and scaled).
pub fn bym2_block(r: &SymSparseMatrix, tau_b: f64, phi: f64) -> Result<SymSparseMatrix> {
    if !(tau_b > 0.0) {
        return Err(Error::invalid(format!("tau_b = {tau_b} must be positive")));
    }
    if !(phi > 0.0 && phi < 1.0) {
        return Err(Error::invalid(format!("phi = {phi} outside (0, 1)")));
    }
    let n = r.dim();
    let omp = 1.0 - phi;
    let a = tau_b / omp;
    let c = -(phi * tau_b).sqrt() / omp;
    let d = phi / omp;
    let mut s = SymSparseMatrix::zeros(2 * n);
    for i in 0..n {
        s.add(i, i, a);
        s.add(i, n + i, c);
        s.add(n + i, n + i, d);
    }
    for (i, j, v) in r.upper_entries() {
        s.add(n + i, n + j, v);
    }
    Ok(s)
}

/// BYM2 joint precision over `2N` for the given structure parts.
/// `psis` weights the middle parts of the general multi-country model.
pub fn bym2_joint_precision(
    parts: &StructureParts,
    tau_b: f64,
    phi: f64,
    theta: f64,
    psis: Option<&[f64]>,
) -> Result<SymSparseMatrix> {
    if !(theta > 0.0 && theta <= 1.0) {
        return Err(Error::invalid(format!("theta = {theta} outside (0, 1]")));
    }
    let l = parts.n_parts();
    let psis = psis.unwrap_or(&[]);
    if psis.iter().any(|&p| !(p > 0.0)) {
        return Err(Error::invalid("psi values must be positive"));
    }
    let weights: Vec<f64> = match l {
        1 if theta == 1.0 && psis.is_empty() => vec![1.0],
        1 => return Err(Error::invalid("a single structure part cannot carry theta or psi")),
        _ if psis.len() != l - 2 && !psis.is_empty() => {
            return Err(Error::invalid(format!("expected {} psi values, got {}", l - 2, psis.len())))
        }
        _ => {
            let mut w = vec![1.0];
            w.extend(psis.iter().copied().chain(std::iter::repeat(1.0)).take(l - 2));
            w.push(theta);
            w
        }
    };
    bym2_block(&parts.combine_scaled(&weights), tau_b, phi)
}

/// Log generalized determinant of a connected weighted Laplacian: by the
/// matrix-tree theorem it is `ln N + ln det` of the matrix with row and
/// column `removed` deleted, for any choice of `removed`.
pub fn ln_pdet_laplacian(r: &SymSparseMatrix, removed: usize) -> Result<f64> {
    let n = r.dim();
    if removed >= n {
        return Err(Error::OutOfRange { index: removed, n });
    }
    if n == 1 {
        return Ok(0.0);
    }
    let dense = r.to_dense().remove_row(removed).remove_column(removed);
    let chol = nalgebra::Cholesky::new(dense)
        .ok_or_else(|| Error::numerical("structured precision is not positive definite after deletion"))?;
    Ok((n as f64).ln() + 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>())
}

/// Dense copy of sparse rows.
pub fn rows_to_dense(rows: &[SparseRow], ncol: usize) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(rows.len(), ncol);
    for (r, row) in rows.iter().enumerate() {
        for &(c, v) in row {
            a[(r, c)] += v;
        }
    }
    a
}

/// `row . x`.
pub fn row_dot(row: &SparseRow, x: &DVector<f64>) -> f64 {
    row.iter().map(|&(c, v)| v * x[c]).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::AreaGraph;
    use crate::structmat::{conflict_arw1_parts, scale_parts};

    fn temporal_spec(n: usize, obs: Vec<Observation>, s: usize, config: ModelConfig) -> ModelSpec {
        let g = AreaGraph::temporal(n, Some(&[n / 3, n / 3 + 1])).unwrap();
        let parts = match config.structured {
            StructuredKind::Nonadaptive => StructureParts::plain(&g).unwrap(),
            _ => conflict_arw1_parts(&g).unwrap(),
        };
        ModelSpec::new(scale_parts(parts).unwrap(), obs, s, config).unwrap()
    }

    fn obs(area: usize, survey: usize) -> Observation {
        Observation { area, survey, y: -3.0, variance: 0.01 }
    }

    #[test]
    fn degenerate_single_area_block() {
        let s = bym2_block(&SymSparseMatrix::zeros(1), 1.0, 0.5).unwrap().to_dense();
        let r2 = 2f64.sqrt();
        assert!((s[(0, 0)] - 2.0).abs() < 1e-15);
        assert!((s[(0, 1)] + r2).abs() < 1e-15);
        assert!((s[(1, 0)] + r2).abs() < 1e-15);
        assert!((s[(1, 1)] - 1.0).abs() < 1e-15);
        assert!(bym2_block(&SymSparseMatrix::zeros(1), 1.0, 1.0).is_err());
        assert!(bym2_block(&SymSparseMatrix::zeros(1), 1.0, 0.0).is_err());
    }

    #[test]
    fn unit_theta_matches_plain() {
        let g = AreaGraph::temporal(12, Some(&[4, 5, 6])).unwrap();
        let plain = scale_parts(StructureParts::plain(&g).unwrap()).unwrap();
        let adaptive = scale_parts(conflict_arw1_parts(&g).unwrap()).unwrap();
        let a = bym2_joint_precision(&plain, 3.0, 0.3, 1.0, None).unwrap();
        let b = bym2_joint_precision(&adaptive, 3.0, 0.3, 1.0, None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn joint_precision_structure() {
        let g = AreaGraph::temporal(9, Some(&[2, 3])).unwrap();
        let parts = scale_parts(conflict_arw1_parts(&g).unwrap()).unwrap();
        let (phi, n) = (0.4, 9);
        let s = bym2_joint_precision(&parts, 2.0, phi, 0.3, None).unwrap().to_dense();
        assert!((&s - s.transpose()).amax() == 0.0);
        for i in 0..n {
            let row: f64 = (0..n).map(|j| s[(n + i, n + j)]).sum::<f64>() - phi / (1.0 - phi);
            assert!(row.abs() < 1e-12);
        }
    }

    #[test]
    fn design_rows() {
        let config = ModelConfig {
            include_slope: true,
            center_slope: false,
            survey_mode: SurveyMode::Random,
            ..ModelConfig::default()
        };
        let spec = temporal_spec(6, vec![obs(2, 1), obs(2, 0), obs(0, 0)], 2, config);
        let lay = spec.layout();
        let a = rows_to_dense(&spec.design_matrix(), lay.dim());
        // rows come back sorted by (area, survey): (0,0), (2,0), (2,1)
        assert_eq!(spec.observations()[2].survey, 1);
        assert_eq!(a[(2, 0)], 1.0);
        assert_eq!(a[(2, 1)], 3.0);
        assert_eq!(a[(2, lay.nu_start() + 1)], 1.0);
        assert_eq!(a[(2, lay.b_start() + 2)], 1.0);
        assert_eq!(a.row(2).sum(), 6.0);
        let diff = a.row(2) - a.row(1);
        let nz: Vec<usize> = (0..lay.dim()).filter(|&c| diff[c] != 0.0).collect();
        assert_eq!(nz, vec![lay.nu_start(), lay.nu_start() + 1]);
        // areas 1, 3, 4, 5 have no rows
        assert_eq!(spec.forecast_areas().iter().copied().collect::<Vec<_>>(), vec![1, 3, 4, 5]);
        assert_eq!(spec.area_rows().len(), 6);
    }

    #[test]
    fn constraints() {
        let spec = temporal_spec(3, vec![obs(0, 0)], 1, ModelConfig::default());
        let c = spec.constraint_rows();
        assert_eq!(c.nrows(), 1);
        let lay = spec.layout();
        assert_eq!(lay.dim(), 7);
        let want = [0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0];
        assert_eq!(c.row(0).iter().copied().collect::<Vec<_>>(), want);

        let config = ModelConfig { survey_mode: SurveyMode::Fixed, ..ModelConfig::default() };
        let spec = temporal_spec(3, vec![obs(0, 0), obs(1, 1), obs(2, 2)], 3, config);
        let c = spec.constraint_rows();
        assert_eq!(c.nrows(), 2);
        assert_eq!(c.row(1).sum(), 3.0);
        assert_eq!(c.clone().svd(false, false).rank(1e-12), 2);
    }

    #[test]
    fn matrix_tree_row_invariance() {
        let g = AreaGraph::areal(
            &[vec![1, 2], vec![0, 2, 3], vec![0, 1, 4], vec![1, 4], vec![2, 3]],
            None,
        )
        .unwrap();
        let parts = scale_parts(StructureParts::plain(&g).unwrap()).unwrap();
        let r = parts.combine_scaled(&[1.0]);
        let eig = nalgebra::SymmetricEigen::new(r.to_dense());
        let want: f64 = eig.eigenvalues.iter().filter(|&&v| v > 1e-9).map(|v| v.ln()).sum();
        for k in 0..5 {
            assert!((ln_pdet_laplacian(&r, k).unwrap() - want).abs() < 1e-10);
        }
    }

    #[test]
    fn hyper_coordinates() {
        let config = ModelConfig { structured: StructuredKind::Adaptive, ..ModelConfig::default() };
        let spec = temporal_spec(8, vec![obs(0, 0), obs(5, 0)], 1, config);
        assert_eq!(spec.hyper_names(), vec!["tau_b", "phi", "theta"]);
        let h = spec.decode(&[0.0, 0.0, 2.0]);
        assert_eq!(h.tau_b, 1.0);
        assert_eq!(h.phi, 0.5);
        assert!((h.theta - expit(2.0)).abs() < 1e-15);
        assert!(spec.ln_hyperprior(&[0.0, 0.0, 2.0]).is_finite());
        assert!(spec.ln_hyperprior(&[0.0, 0.0, 40.0]).is_finite());

        let fixed = ModelConfig { structured: StructuredKind::Adaptive, theta_fixed: Some(1.0), ..ModelConfig::default() };
        let spec = temporal_spec(8, vec![obs(0, 0)], 1, fixed);
        assert_eq!(spec.n_hyper(), 2);
        assert_eq!(spec.decode(&[0.0, 0.0]).theta, 1.0);
    }
}
