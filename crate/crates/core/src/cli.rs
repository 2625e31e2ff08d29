//! Command-line front end: `structure`, `prior`, `fit`, `simulate`, `study`.
//!
//! Exit status: 0 success, 2 usage error, 3 invalid input, 4 numerical failure.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::graph::{connectivity_report, read_areal_graph, AreaGraph, GraphKind, TemporalConfig};
use crate::inference::{fit, theta_densities, u5mr_summaries, GridConfig, MarginalSummary};
use crate::latent::{ModelConfig, ModelSpec, Observation, StructuredKind, SurveyMode};
use crate::priors::{
    phi_gamma_tilde, prior_quantiles, PcPhiPrior, PcPrecisionPrior, PcThetaPrior, UnivariatePrior,
};
use crate::simharness::{run_study, simulate_dataset, SimSetting, StudyConfig, TauRegime, Trend};
use crate::structmat::{
    conflict_arw1_parts, general_multicountry_parts, multicountry_aicar_parts, scale_parts, StructureParts,
    SymSparseMatrix,
};

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_INVALID: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

#[derive(Parser, Debug)]
#[command(name = "agmrf", version, about = "Adaptive GMRF smoothing of direct mortality estimates")]
pub struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Assemble and scale structure matrices.
    Structure(StructureArgs),
    /// Calibrate a PC prior and tabulate its density.
    Prior(PriorArgs),
    /// Fit a smoothed direct model to direct estimates.
    Fit(FitArgs),
    /// Draw one simulated dataset.
    Simulate(SimulateArgs),
    /// Run the simulation study.
    Study(StudyArgs),
}

#[derive(Args, Debug, Clone, Serialize)]
struct GraphArgs {
    /// Temporal config (.json) or adjacency file.
    #[arg(long)]
    graph: PathBuf,
    /// `area_id,country_id` table for an areal graph.
    #[arg(long)]
    countries: Option<PathBuf>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Serialize)]
enum PartsKind {
    Plain,
    Adaptive,
    General,
}

#[derive(Args, Debug, Serialize)]
struct StructureArgs {
    #[command(flatten)]
    graph: GraphArgs,
    #[arg(long, value_enum, default_value = "adaptive")]
    kind: PartsKind,
    /// Part weights for the combined matrix (default: all ones).
    #[arg(long, value_delimiter = ',')]
    weights: Option<Vec<f64>>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Serialize)]
enum PriorKind {
    Theta,
    Phi,
    Precision,
}

#[derive(Args, Debug, Serialize)]
struct PriorArgs {
    #[arg(value_enum)]
    parameter: PriorKind,
    /// Required for theta and phi.
    #[arg(long)]
    graph: Option<PathBuf>,
    #[arg(long)]
    countries: Option<PathBuf>,
    /// Use the general multi-country split for theta.
    #[arg(long)]
    general: bool,
    #[arg(long = "U", alias = "u")]
    u: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, default_value_t = 199)]
    points: usize,
    #[arg(long, value_delimiter = ',', default_value = "0.025,0.5,0.975")]
    quantiles: Vec<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Serialize)]
enum ModelKind {
    SmoothedDirect,
    Proposed,
    ProposedGeneral,
}

#[derive(Args, Debug, Serialize)]
struct FitArgs {
    /// CSV with header `area_id,survey_id,logit_est,variance`.
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    graph: GraphArgs,
    #[arg(long, value_enum)]
    model: ModelKind,
    /// Model config JSON; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    slope: bool,
    #[arg(long, value_enum)]
    survey_mode: Option<SurveyModeArg>,
    #[arg(long)]
    theta_fixed: Option<f64>,
    /// Posterior draws for the mortality summaries.
    #[arg(long, default_value_t = 4000)]
    draws: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Serialize)]
enum SurveyModeArg {
    Auto,
    Random,
    Fixed,
    None,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Serialize)]
enum TrendArg {
    Constant,
    LevelChange,
    Triangle,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Serialize)]
enum RegimeArg {
    Equal,
    Unequal,
}

#[derive(Args, Debug, Serialize)]
struct SimulateArgs {
    #[arg(long, value_enum)]
    trend: TrendArg,
    #[arg(long, value_enum)]
    regime: RegimeArg,
    /// Observation variance.
    #[arg(long)]
    v: f64,
    #[arg(long, default_value_t = 0)]
    replicate: u64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct StudyArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

/// Format a float with 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        x.to_string()
    }
}

fn digest(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}

struct Output {
    dir: PathBuf,
    inputs: BTreeMap<String, String>,
}

impl Output {
    fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Output { dir: dir.to_path_buf(), inputs: BTreeMap::new() })
    }

    fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.insert(path.display().to_string(), digest(path)?);
        Ok(())
    }

    fn write(&self, name: &str, text: &str) -> Result<()> {
        fs::write(self.dir.join(name), text)?;
        Ok(())
    }

    fn json(&self, name: &str, v: &Value) -> Result<()> {
        self.write(name, &(serde_json::to_string_pretty(v)? + "\n"))
    }

    fn manifest(&self, subcommand: &str, config: Value, seed: Option<u64>, start: Instant) -> Result<()> {
        self.json(
            "manifest.json",
            &json!({
                "subcommand": subcommand,
                "config": config,
                "inputs": self.inputs,
                "seed": seed,
                "version": env!("CARGO_PKG_VERSION"),
                "wall_time_seconds": start.elapsed().as_secs_f64(),
            }),
        )
    }
}

/// A loaded graph plus the temporal config when there is one.
struct LoadedGraph {
    graph: AreaGraph,
    temporal: Option<TemporalConfig>,
}

fn load_graph(args: &GraphArgs, out: &mut Output) -> Result<LoadedGraph> {
    out.input(&args.graph)?;
    let text = fs::read_to_string(&args.graph)?;
    let is_json = args.graph.extension().is_some_and(|e| e == "json") || text.trim_start().starts_with('{');
    if is_json {
        if args.countries.is_some() {
            return Err(Error::invalid("a temporal graph takes no country table"));
        }
        let cfg: TemporalConfig = serde_json::from_str(&text)?;
        Ok(LoadedGraph { graph: cfg.to_graph()?, temporal: Some(cfg) })
    } else {
        if let Some(c) = &args.countries {
            out.input(c)?;
        }
        Ok(LoadedGraph { graph: read_areal_graph(&args.graph, args.countries.as_deref())?, temporal: None })
    }
}

fn adaptive_parts(g: &AreaGraph) -> Result<StructureParts> {
    match g.kind() {
        GraphKind::TemporalPath => conflict_arw1_parts(g),
        GraphKind::Areal => multicountry_aicar_parts(g),
    }
}

fn build_parts(g: &AreaGraph, kind: PartsKind) -> Result<StructureParts> {
    scale_parts(match kind {
        PartsKind::Plain => StructureParts::plain(g)?,
        PartsKind::Adaptive => adaptive_parts(g)?,
        PartsKind::General => general_multicountry_parts(g)?,
    })
}

fn coo_csv(m: &SymSparseMatrix) -> String {
    let mut s = String::from("i,j,value\n");
    for (i, j, v) in m.upper_entries() {
        let _ = writeln!(s, "{},{},{}", i + 1, j + 1, fmt_f64(v));
    }
    s
}

fn cmd_structure(a: &StructureArgs) -> Result<()> {
    let start = Instant::now();
    let mut out = Output::new(&a.out)?;
    let g = load_graph(&a.graph, &mut out)?.graph;
    let parts = build_parts(&g, a.kind)?;
    let l = parts.n_parts();
    let weights = a.weights.clone().unwrap_or_else(|| vec![1.0; l]);
    if weights.len() != l {
        return Err(Error::invalid(format!("expected {l} weights, got {}", weights.len())));
    }
    for (k, p) in parts.scaled_parts().iter().enumerate() {
        out.write(&format!("part_{}.csv", k + 1), &coo_csv(p))?;
    }
    let combined = parts.combine_scaled(&weights);
    out.write("combined.csv", &coo_csv(&combined))?;
    let rank = combined.to_dense().rank(crate::structmat::RANK_TOL * combined.to_dense().amax().max(1.0));
    let report = connectivity_report(&g);
    out.json(
        "structure.json",
        &json!({
            "n": g.n(),
            "n_parts": l,
            "part_edge_counts": parts.part_edge_counts(),
            "weights": weights,
            "rank": rank,
            "sigma2": parts.sigma2(),
            "reference_components": report.reference_components,
            "warnings": parts.warnings(),
        }),
    )?;
    out.manifest("structure", serde_json::to_value(a)?, None, start)
}

fn grid_between(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (1..=n).map(|k| lo + (hi - lo) * k as f64 / (n + 1) as f64).collect()
}

fn cmd_prior(a: &PriorArgs) -> Result<()> {
    let start = Instant::now();
    let mut out = Output::new(&a.out)?;
    let graph = |out: &mut Output| -> Result<AreaGraph> {
        let path = a.graph.clone().ok_or_else(|| Error::invalid("--graph is required for this prior"))?;
        Ok(load_graph(&GraphArgs { graph: path, countries: a.countries.clone() }, out)?.graph)
    };
    let (name, table, info): (&str, Vec<(f64, f64)>, Value) = match a.parameter {
        PriorKind::Theta => {
            let g = graph(&mut out)?;
            let kind = if a.general { PartsKind::General } else { PartsKind::Adaptive };
            let parts = build_parts(&g, kind)?;
            let p = PcThetaPrior::from_parts(&parts, a.u.unwrap_or(0.75), a.alpha.unwrap_or(0.75))?;
            let q = prior_quantiles(&p, &a.quantiles)?;
            let grid = grid_between(0.0, 1.0, a.points);
            let rows = grid.iter().map(|&t| (t, p.density(t))).collect();
            ("theta", rows, json!({"lambda": p.lambda, "eigenvalues": p.eps, "removed_index": p.removed_index + 1, "quantiles": quantile_json(&a.quantiles, &q)}))
        }
        PriorKind::Phi => {
            let g = graph(&mut out)?;
            let parts = build_parts(&g, PartsKind::Plain)?;
            let gt = phi_gamma_tilde(&parts.combine_scaled(&[1.0]));
            let p = PcPhiPrior::calibrate(a.u.unwrap_or(0.5), a.alpha.unwrap_or(2.0 / 3.0), gt)?;
            let q = prior_quantiles(&p, &a.quantiles)?;
            let grid = grid_between(0.0, 1.0, a.points);
            let rows = grid.iter().map(|&t| (t, p.density(t))).collect();
            ("phi", rows, json!({"lambda": p.lambda, "eigenvalues": p.gamma_tilde, "quantiles": quantile_json(&a.quantiles, &q)}))
        }
        PriorKind::Precision => {
            let p = PcPrecisionPrior::calibrate(a.u.unwrap_or(1.0), a.alpha.unwrap_or(0.01))?;
            let q = prior_quantiles(&p, &a.quantiles)?;
            let hi = prior_quantiles(&p, &[0.99])?[0];
            let grid = grid_between(0.0, hi, a.points);
            let rows = grid.iter().map(|&t| (t, p.density(t))).collect();
            ("tau", rows, json!({"lambda": p.lambda, "quantiles": quantile_json(&a.quantiles, &q)}))
        }
    };
    let mut csv = format!("{name},density\n");
    for (x, d) in table {
        let _ = writeln!(csv, "{},{}", fmt_f64(x), fmt_f64(d));
    }
    out.write(&format!("prior_{name}.csv"), &csv)?;
    out.json(&format!("prior_{name}.json"), &info)?;
    out.manifest("prior", serde_json::to_value(a)?, None, start)
}

fn quantile_json(probs: &[f64], values: &[f64]) -> Value {
    Value::Array(probs.iter().zip(values).map(|(p, v)| json!({"p": p, "value": v})).collect())
}

#[derive(Debug, Deserialize)]
struct DataRow {
    area_id: usize,
    survey_id: i64,
    logit_est: f64,
    variance: f64,
}

/// Read direct estimates; survey ids are mapped to `0..S` in increasing order.
pub fn read_direct_estimates(path: &Path, n_areas: usize) -> Result<(Vec<Observation>, Vec<i64>)> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let rows: Vec<DataRow> = rdr.deserialize().collect::<std::result::Result<_, _>>()?;
    if rows.is_empty() {
        return Err(Error::invalid("data file has no rows"));
    }
    let mut surveys: Vec<i64> = rows.iter().map(|r| r.survey_id).collect();
    surveys.sort_unstable();
    surveys.dedup();
    let obs = rows
        .iter()
        .map(|r| {
            if r.area_id == 0 || r.area_id > n_areas {
                return Err(Error::OutOfRange { index: r.area_id, n: n_areas });
            }
            Ok(Observation {
                area: r.area_id - 1,
                survey: surveys.binary_search(&r.survey_id).expect("listed survey"),
                y: r.logit_est,
                variance: r.variance,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((obs, surveys))
}

fn summary_cells(s: &MarginalSummary) -> String {
    [s.mean, s.sd, s.q025, s.median, s.q975].iter().map(|v| fmt_f64(*v)).collect::<Vec<_>>().join(",")
}

fn cmd_fit(a: &FitArgs) -> Result<()> {
    let start = Instant::now();
    let mut out = Output::new(&a.out)?;
    let loaded = load_graph(&a.graph, &mut out)?;
    let g = &loaded.graph;
    out.input(&a.data)?;
    let mut config = match &a.config {
        Some(p) => {
            out.input(p)?;
            serde_json::from_str::<ModelConfig>(&fs::read_to_string(p)?)?
        }
        None => ModelConfig::default(),
    };
    config.structured = match a.model {
        ModelKind::SmoothedDirect => StructuredKind::Nonadaptive,
        ModelKind::Proposed => StructuredKind::Adaptive,
        ModelKind::ProposedGeneral => StructuredKind::GeneralMulticountry,
    };
    if a.slope {
        config.include_slope = true;
    }
    if let Some(m) = a.survey_mode {
        config.survey_mode = match m {
            SurveyModeArg::Auto => SurveyMode::Auto,
            SurveyModeArg::Random => SurveyMode::Random,
            SurveyModeArg::Fixed => SurveyMode::Fixed,
            SurveyModeArg::None => SurveyMode::None,
        };
    }
    if a.theta_fixed.is_some() {
        config.theta_fixed = a.theta_fixed;
    }
    let parts = match config.structured {
        StructuredKind::Nonadaptive => build_parts(g, PartsKind::Plain)?,
        StructuredKind::Adaptive => build_parts(g, PartsKind::Adaptive)?,
        StructuredKind::GeneralMulticountry => build_parts(g, PartsKind::General)?,
    };
    let (obs, surveys) = read_direct_estimates(&a.data, g.n())?;
    let spec = ModelSpec::new(parts, obs, surveys.len(), config.clone())?;
    let grid = GridConfig::default();
    let f = fit(&spec, &grid)?;

    let mut latent = String::from("Parameter,Mean,SD,Q025,Median,Q975\n");
    for (label, s) in f.latent_labels.iter().zip(&f.latent) {
        let _ = writeln!(latent, "{label},{}", summary_cells(s));
    }
    for (i, s) in f.area_eta.iter().enumerate() {
        let _ = writeln!(latent, "eta[{}],{}", i + 1, summary_cells(s));
    }
    out.write("latent.csv", &latent)?;

    let p = u5mr_summaries(&f, a.draws, a.seed)?;
    let mut u5 = String::from("area_id,year,observed,Mean,SD,Q025,Median,Q975\n");
    for (i, s) in p.iter().enumerate() {
        let year = loaded.temporal.as_ref().map(|t| (t.start_year + i as i64).to_string()).unwrap_or_default();
        let observed = u8::from(!spec.forecast_areas().contains(&i));
        let _ = writeln!(u5, "{},{year},{observed},{}", i + 1, summary_cells(s));
    }
    out.write("u5mr.csv", &u5)?;

    let mut hyper = String::from("Parameter,Mean,SD,Q025,Median,Q975,Mode\n");
    for h in &f.hyper {
        let _ = writeln!(
            hyper,
            "{},{}",
            h.name,
            [h.mean, h.sd, h.q025, h.median, h.q975, h.mode].iter().map(|v| fmt_f64(*v)).collect::<Vec<_>>().join(",")
        );
    }
    out.write("hyper.csv", &hyper)?;

    let mut theta = String::from("theta,prior,posterior\n");
    if let Some(rows) = theta_densities(&spec, &f, &grid, &grid_between(0.0, 1.0, 199)) {
        for (t, pr, po) in rows {
            let _ = writeln!(theta, "{},{},{}", fmt_f64(t), fmt_f64(pr), fmt_f64(po));
        }
    }
    out.write("prior_posterior_theta.csv", &theta)?;

    out.json(
        "metrics.json",
        &json!({
            "dic": f.dic.dic,
            "p_d": f.dic.p_d,
            "mean_deviance": f.dic.mean_deviance,
            "log_score": f.log_score,
            "n_observations": f.y.len(),
            "n_surveys": surveys.len(),
            "survey_ids": surveys,
            "grid_points": f.points.len(),
            "ccd": f.exploration.ccd,
            "ln_posterior_mode": f.exploration.ln_post_mode,
            "warnings": f.exploration.warnings,
        }),
    )?;
    let mut cfg = serde_json::to_value(a)?;
    cfg["resolved_model"] = serde_json::to_value(&config)?;
    cfg["grid"] = serde_json::to_value(&grid)?;
    out.manifest("fit", cfg, Some(a.seed), start)
}

fn cmd_simulate(a: &SimulateArgs) -> Result<()> {
    let start = Instant::now();
    let out = Output::new(&a.out)?;
    let setting = SimSetting {
        trend: match a.trend {
            TrendArg::Constant => Trend::Constant,
            TrendArg::LevelChange => Trend::LevelChange,
            TrendArg::Triangle => Trend::Triangle,
        },
        tau_regime: match a.regime {
            RegimeArg::Equal => TauRegime::Equal,
            RegimeArg::Unequal => TauRegime::Unequal,
        },
        v: a.v,
    };
    let d = simulate_dataset(&setting, a.seed, a.replicate)?;
    let mut data = String::from("area_id,survey_id,logit_est,variance\n");
    let mut truth = String::from("area_id,eta\n");
    for (i, (y, e)) in d.y.iter().zip(&d.eta).enumerate() {
        let _ = writeln!(data, "{},1,{},{}", i + 1, fmt_f64(*y), fmt_f64(d.v));
        let _ = writeln!(truth, "{},{}", i + 1, fmt_f64(*e));
    }
    out.write("data.csv", &data)?;
    out.write("truth.csv", &truth)?;
    out.manifest("simulate", serde_json::to_value(a)?, Some(a.seed), start)
}

fn cmd_study(a: &StudyArgs) -> Result<()> {
    let start = Instant::now();
    let mut out = Output::new(&a.out)?;
    let mut cfg = match &a.config {
        Some(p) => {
            out.input(p)?;
            serde_json::from_str::<StudyConfig>(&fs::read_to_string(p)?)?
        }
        None => StudyConfig::default(),
    };
    if let Some(r) = a.replicates {
        cfg.replicates = r;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let grid = GridConfig::default();
    let table = run_study(&cfg, &grid)?;
    let (raw, diffs, summary) = study_csvs(&table);
    out.write("study_raw.csv", &raw)?;
    out.write("study_diffs.csv", &diffs)?;
    out.write("study_summary.csv", &summary)?;
    let mut failures = String::from("trend,regime,v,replicate,message\n");
    for f in &table.failures {
        let s = &f.setting;
        let _ = writeln!(failures, "{},{},{},{},\"{}\"", s.trend, s.tau_regime, fmt_f64(s.v), f.replicate, f.message.replace('"', "'"));
    }
    out.write("study_failures.csv", &failures)?;
    out.manifest("study", json!({"study": cfg, "grid": grid}), Some(cfg.seed), start)
}

/// `study_raw.csv`, `study_diffs.csv` and `study_summary.csv` contents.
pub fn study_csvs(table: &crate::simharness::StudyTable) -> (String, String, String) {
    let mut raw = String::from("trend,regime,v,replicate,model,rmse,dic,ls\n");
    for r in &table.rows {
        let s = &r.setting;
        let m = &r.metrics;
        let _ = writeln!(
            raw,
            "{},{},{},{},{},{},{},{}",
            s.trend,
            s.tau_regime,
            fmt_f64(s.v),
            r.replicate,
            r.model,
            fmt_f64(m.rmse),
            fmt_f64(m.dic),
            fmt_f64(m.ls)
        );
    }
    let mut diffs = String::from("trend,regime,v,replicate,d_rmse,d_dic,d_ls\n");
    for d in &table.diffs {
        let s = &d.setting;
        let _ = writeln!(
            diffs,
            "{},{},{},{},{},{},{}",
            s.trend,
            s.tau_regime,
            fmt_f64(s.v),
            d.replicate,
            fmt_f64(d.rmse),
            fmt_f64(d.dic),
            fmt_f64(d.ls)
        );
    }
    let mut summary = String::from(
        "trend,regime,v,n_ok,n_failed,d_rmse_median,d_rmse_q25,d_rmse_q75,d_dic_median,d_dic_q25,d_dic_q75,d_ls_median,d_ls_q25,d_ls_q75\n",
    );
    for s in &table.summaries {
        let st = &s.setting;
        let cells: Vec<String> = [s.rmse, s.dic, s.ls]
            .iter()
            .flat_map(|sp| [sp.median, sp.q25, sp.q75])
            .map(fmt_f64)
            .collect();
        let _ = writeln!(summary, "{},{},{},{},{},{}", st.trend, st.tau_regime, fmt_f64(st.v), s.n_ok, s.n_failed, cells.join(","));
    }
    (raw, diffs, summary)
}

fn exit_code(e: &Error) -> i32 {
    if e.is_numerical() {
        EXIT_NUMERICAL
    } else {
        EXIT_INVALID
    }
}

/// Parse `args` (including the program name), run, and return the exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { 0 };
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return EXIT_USAGE;
        }
        // a second call in the same process keeps the existing pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let res = match &cli.command {
        Command::Structure(a) => cmd_structure(a),
        Command::Prior(a) => cmd_prior(a),
        Command::Fit(a) => cmd_fit(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Study(a) => cmd_study(a),
    };
    match res {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
