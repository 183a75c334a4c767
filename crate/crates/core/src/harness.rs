//! Experiment configuration, orchestration and persistence.
//!
//! One TOML file describes one experiment. Every field has an explicit default,
//! printed by [`reference_config`]; unknown keys are rejected.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::beams::{
    assemble_beam, beam_residual, default_initial_data, solve_riccati, BeamProfile, CMat, ResidualOptions,
};
use crate::covector_algebra::{b_of, interaction_sum, NullFrame};
use crate::geometry::{build_fermi_chart_with, trace_through, GeodesicOptions, MetricPreset, WarpedMetric};
use crate::io::{save_trace, trace_table, CsvTable};
use crate::linearization::{cascade_recipe, cascade_solve, mixed_derivative_ndmap, EpsilonStencil};
use crate::recovery::{
    calibrate, null_covector, recover_coefficient, recovery_ladder, sweep_table, CalibrationProfile, RecoverySetup,
    RecoveryTask,
};
use crate::wave_solver::{
    smooth_ramp, solve_linear, solve_semilinear, CoefficientField, FnForcing, NeumannSource, NonlinearityProfile,
    PicardOptions, SolveMode, SpacetimeGrid,
};
use crate::{Complex64, Error, Result};

/// Environment variable read by the CLI for the default worker count.
pub const WORKERS_ENV: &str = "NLWAVE_WORKERS";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    Forward,
    BeamVerify,
    CovectorVerify,
    LinearizeVerify,
    Calibrate,
    Recover,
    Ladder,
}

impl TaskKind {
    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Forward => "forward",
            TaskKind::BeamVerify => "beam-verify",
            TaskKind::CovectorVerify => "covector-verify",
            TaskKind::LinearizeVerify => "linearize-verify",
            TaskKind::Calibrate => "calibrate",
            TaskKind::Recover => "recover",
            TaskKind::Ladder => "ladder",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSpec {
    pub cells: usize,
    /// derived from the CFL bound when absent
    pub steps: Option<usize>,
    pub t_final: f64,
    pub courant: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec { cells: 48, steps: None, t_final: 2.0, courant: 0.7 }
    }
}

impl GridSpec {
    pub fn build(&self, g: &WarpedMetric) -> Result<SpacetimeGrid> {
        let grid = match self.steps {
            Some(s) => SpacetimeGrid::new(g.spatial_dim(), self.cells, s, self.t_final, self.courant)?,
            None => SpacetimeGrid::fitted(g, self.cells, self.t_final, self.courant)?,
        };
        grid.check_cfl(g)?;
        Ok(grid)
    }
}

/// Smooth Neumann patch on one face:
/// `a · ramp((t − t_on)/rise) · exp(−|y − c|²/w²) · cos(ω t)`, `y` the face coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatchSpec {
    pub face: usize,
    pub center: Vec<f64>,
    pub width: f64,
    pub t_on: f64,
    pub rise: f64,
    pub frequency: f64,
    pub amplitude: f64,
}

impl PatchSpec {
    pub fn source(&self, grid: &SpacetimeGrid) -> Result<NeumannSource> {
        let n = grid.space_dim;
        if self.face >= 2 * n || self.center.len() != n - 1 {
            return Err(Error::Config(format!("patch on face {} needs {} centre coordinates", self.face, n - 1)));
        }
        let p = self.clone();
        Ok(NeumannSource::from_fn(grid, 3, move |x, f| {
            if f != p.face {
                return 0.0;
            }
            let axis = p.face / 2;
            let r2: f64 = (0..n).filter(|&a| a != axis).zip(&p.center).map(|(a, c)| (x[a + 1] - c).powi(2)).sum();
            p.amplitude
                * smooth_ramp((x[0] - p.t_on) / p.rise)
                * (-r2 / (p.width * p.width)).exp()
                * (p.frequency * x[0]).cos()
        }))
    }
}

fn default_patches() -> Vec<PatchSpec> {
    let patch = |face, c: f64, t_on, frequency| PatchSpec {
        face,
        center: vec![c],
        width: 0.15,
        t_on,
        rise: 0.15,
        frequency,
        amplitude: 1.0,
    };
    vec![patch(0, 0.5, 0.02, 2.0), patch(1, 0.4, 0.05, 3.0), patch(2, 0.6, 0.0, 1.0)]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForwardParams {
    pub sources: Vec<PatchSpec>,
    /// multiplies every source
    pub scale: f64,
    pub picard: PicardOptions,
}

impl Default for ForwardParams {
    fn default() -> Self {
        ForwardParams { sources: default_patches(), scale: 0.5, picard: PicardOptions::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BeamVerifyParams {
    pub point: Vec<f64>,
    pub direction: Vec<f64>,
    pub orders: Vec<usize>,
    /// `Im H(0)` for the residual beams
    pub width: f64,
    /// chart tube used for the residual runs; wide enough that the cutoff stays inactive
    pub chart_delta: f64,
    /// `τ` half-window of the residual quadrature
    pub window: f64,
    pub rho: Vec<f64>,
    pub geodesic_steps: Vec<f64>,
    pub n_tau: usize,
    pub n_y: usize,
    pub y_max: f64,
    /// allowed deviation of the residual slope from its prediction
    pub slope_tolerance: f64,
}

impl Default for BeamVerifyParams {
    fn default() -> Self {
        BeamVerifyParams {
            point: vec![0.5, 0.5, 0.5],
            direction: vec![0.6, 0.8],
            orders: vec![2, 4],
            width: 0.25,
            chart_delta: 8.0,
            window: 0.3,
            rho: vec![16.0, 32.0, 64.0, 128.0, 256.0],
            geodesic_steps: vec![1e-3, 5e-4],
            n_tau: 9,
            n_y: 9,
            y_max: 4.0,
            slope_tolerance: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CovectorParams {
    pub r0: Vec<f64>,
    pub varsigma: Vec<f64>,
    pub tolerance: f64,
}

impl Default for CovectorParams {
    fn default() -> Self {
        CovectorParams { r0: vec![0.0, 0.3, 0.6, 0.9], varsigma: vec![1e-1, 1e-2, 1e-3], tolerance: 0.01 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LinearizeParams {
    pub sources: Vec<PatchSpec>,
    pub eps: f64,
    /// random shift of the patch centres, drawn from the seed
    pub jitter: f64,
    pub tolerance: f64,
    pub picard: PicardOptions,
}

impl Default for LinearizeParams {
    fn default() -> Self {
        LinearizeParams {
            sources: default_patches(),
            eps: 1e-3,
            jitter: 0.0,
            tolerance: 0.05,
            picard: PicardOptions { tol: 1e-13, ..Default::default() },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrationParams {
    pub reference: CoefficientField,
    /// stored calibration for `recover`; computed in place when absent
    pub file: Option<PathBuf>,
}

impl Default for CalibrationParams {
    fn default() -> Self {
        CalibrationParams { reference: CoefficientField::bump(1.0, vec![1.5, 0.5, 0.5], 1.0), file: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LadderParams {
    pub k_max: usize,
    /// recovery points; the interpolated fields pass through them
    pub points: Vec<Vec<f64>>,
    pub h2: CoefficientField,
}

impl Default for LadderParams {
    fn default() -> Self {
        LadderParams { k_max: 4, points: vec![vec![1.5, 0.5, 0.5]], h2: CoefficientField::Zero }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub task: TaskKind,
    pub dimension: usize,
    pub metric: MetricPreset,
    pub grid: GridSpec,
    /// the simulated medium
    pub nonlinearity: NonlinearityProfile,
    pub output: PathBuf,
    pub seed: u64,
    /// worker threads; the CLI flag and environment take precedence
    pub workers: Option<usize>,
    pub forward: ForwardParams,
    pub beam_verify: BeamVerifyParams,
    pub covector_verify: CovectorParams,
    pub linearize_verify: LinearizeParams,
    pub recovery: RecoveryTask,
    pub calibration: CalibrationParams,
    pub ladder: LadderParams,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            task: TaskKind::Forward,
            dimension: 3,
            metric: MetricPreset::Minkowski,
            grid: GridSpec::default(),
            nonlinearity: NonlinearityProfile::zero().with(3, CoefficientField::bump(1.0, vec![0.9, 0.5, 0.5], 0.6)),
            output: PathBuf::from("out"),
            seed: 0,
            workers: None,
            forward: ForwardParams::default(),
            beam_verify: BeamVerifyParams::default(),
            covector_verify: CovectorParams::default(),
            linearize_verify: LinearizeParams::default(),
            recovery: RecoveryTask::default(),
            calibration: CalibrationParams::default(),
            ladder: LadderParams::default(),
        }
    }
}

/// The default configuration as TOML, every field spelled out.
pub fn reference_config() -> String {
    toml::to_string_pretty(&ExperimentConfig::default()).expect("default config serializes")
}

/// Sets `path` (dotted) in a TOML document. The value is parsed as a TOML
/// literal and taken as a plain string when that fails.
pub fn apply_override(doc: &mut toml::Value, assignment: &str) -> Result<()> {
    let (path, raw) =
        assignment.split_once('=').ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
    let value = toml::from_str::<toml::Table>(&format!("v = {}", raw.trim()))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.trim().to_string()));
    let keys: Vec<&str> = path.trim().split('.').collect();
    let mut cur = doc;
    for (i, key) in keys.iter().enumerate() {
        let table = cur
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override path `{path}` runs through a non-table")))?;
        if i + 1 == keys.len() {
            table.insert(key.to_string(), value);
            return Ok(());
        }
        cur = table.entry(key.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    Err(Error::Config("empty override path".into()))
}

pub fn parse_config(text: &str, overrides: &[String]) -> Result<ExperimentConfig> {
    let mut doc: toml::Value = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    for o in overrides {
        apply_override(&mut doc, o)?;
    }
    let cfg: ExperimentConfig = doc.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path, overrides: &[String]) -> Result<ExperimentConfig> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_config(&text, overrides)
}

impl ExperimentConfig {
    pub fn metric(&self) -> Result<WarpedMetric> {
        WarpedMetric::new(self.dimension, self.metric.clone())
    }

    /// Rejects inconsistent settings before any compute.
    pub fn validate(&self) -> Result<()> {
        let g = self.metric()?;
        self.nonlinearity.validate(self.dimension)?;
        match self.task {
            TaskKind::Forward | TaskKind::LinearizeVerify => {
                let grid = self.grid.build(&g)?;
                let sources =
                    if self.task == TaskKind::Forward { &self.forward.sources } else { &self.linearize_verify.sources };
                if self.task == TaskKind::LinearizeVerify && sources.len() != 3 {
                    return Err(Error::Config("linearize-verify needs exactly three sources".into()));
                }
                for s in sources {
                    s.source(&grid)?;
                }
            }
            TaskKind::BeamVerify => {
                let b = &self.beam_verify;
                if b.point.len() != self.dimension || b.direction.len() != self.dimension - 1 {
                    return Err(Error::Config("beam point/direction do not match the dimension".into()));
                }
                if b.rho.len() < 2 || b.orders.is_empty() || b.geodesic_steps.is_empty() {
                    return Err(Error::Config("beam-verify needs ≥ 2 ρ values, an order and a step".into()));
                }
            }
            TaskKind::CovectorVerify => {
                let c = &self.covector_verify;
                if c.varsigma.iter().any(|s| !(*s > 0.0 && *s < 1.0)) {
                    return Err(Error::Config("ς values must lie in (0, 1)".into()));
                }
            }
            TaskKind::Calibrate | TaskKind::Recover => {
                self.recovery.validate(&g)?;
                self.calibration.reference.validate(self.dimension)?;
            }
            TaskKind::Ladder => {
                if self.ladder.k_max < 3 || self.ladder.points.is_empty() {
                    return Err(Error::Config("ladder needs k_max ≥ 3 and at least one point".into()));
                }
                for p in &self.ladder.points {
                    RecoveryTask { q0: p.clone(), k: 3, known: NonlinearityProfile::zero(), ..self.recovery.clone() }
                        .validate(&g)?;
                }
            }
        }
        Ok(())
    }

    /// Content hash of the configuration, the output location excluded.
    pub fn fingerprint(&self) -> String {
        let mut c = self.clone();
        c.output = PathBuf::new();
        c.workers = None;
        let v = serde_json::to_value(&c).expect("config serializes");
        hex::encode(Sha256::digest(v.to_string().as_bytes()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub task: TaskKind,
    pub fingerprint: String,
    /// seconds per stage
    pub timings: BTreeMap<String, f64>,
    pub files: Vec<String>,
    pub checks: Vec<CheckResult>,
}

impl ResultRecord {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

struct Run {
    out: PathBuf,
    record: ResultRecord,
    clock: Instant,
}

impl Run {
    fn csv(&mut self, name: &str, t: &CsvTable) -> Result<()> {
        t.write(&self.out.join(name))?;
        self.record.files.push(name.into());
        Ok(())
    }

    fn text(&mut self, name: &str, body: &str) -> Result<()> {
        std::fs::write(self.out.join(name), body)?;
        self.record.files.push(name.into());
        Ok(())
    }

    fn check(&mut self, name: &str, passed: bool, detail: String) {
        self.record.checks.push(CheckResult { name: name.into(), passed, detail });
    }

    fn lap(&mut self, stage: &str) {
        self.record.timings.insert(stage.into(), self.clock.elapsed().as_secs_f64());
        self.clock = Instant::now();
    }
}

/// Runs the configured task, writing outputs and `record.json` into `out`.
pub fn run_experiment(cfg: &ExperimentConfig, out: &Path) -> Result<ResultRecord> {
    cfg.validate()?;
    std::fs::create_dir_all(out)?;
    let mut run = Run {
        out: out.to_path_buf(),
        record: ResultRecord {
            task: cfg.task,
            fingerprint: cfg.fingerprint(),
            timings: BTreeMap::new(),
            files: vec![],
            checks: vec![],
        },
        clock: Instant::now(),
    };
    let g = cfg.metric()?;
    match cfg.task {
        TaskKind::Forward => forward(cfg, &g, &mut run)?,
        TaskKind::BeamVerify => beam_verify(cfg, &g, &mut run)?,
        TaskKind::CovectorVerify => covector_verify(cfg, &mut run)?,
        TaskKind::LinearizeVerify => linearize_verify(cfg, &g, &mut run)?,
        TaskKind::Calibrate => {
            let setup = RecoverySetup::new(&g, &cfg.recovery)?;
            run.lap("setup");
            let cal = calibrate(&setup, &cfg.calibration.reference)?;
            run.lap("calibrate");
            run.text("calibration.json", &cal.to_json())?;
            run.csv("calibration_sweep.csv", &sweep_table(&cal.samples))?;
            let rel = cal.fit.residual / cal.fit.a.abs();
            run.check("fit residual", rel < cfg.recovery.max_fit_residual, format!("{rel:.3e} of |A|"));
        }
        TaskKind::Recover => {
            let setup = RecoverySetup::new(&g, &cfg.recovery)?;
            run.lap("setup");
            let cal = match &cfg.calibration.file {
                Some(p) => CalibrationProfile::from_json(&std::fs::read_to_string(p)?)?,
                None => calibrate(&setup, &cfg.calibration.reference)?,
            };
            run.lap("calibrate");
            let report = recover_coefficient(&setup, &cal, &cfg.nonlinearity)?;
            run.lap("recover");
            run.text("report.json", &report.to_json())?;
            run.csv("sweep.csv", &report.sweep_table())?;
            run.check("fit residual", true, format!("{:.3e} in coefficient units", report.residual));
            if let Some(e) = report.relative_error {
                run.check("recovered value", e < 0.15, format!("ĥ = {:.4}, relative error {e:.3}", report.value));
            }
        }
        TaskKind::Ladder => {
            let l = &cfg.ladder;
            let out = recovery_ladder(
                &g,
                &cfg.recovery,
                &l.points,
                l.k_max,
                &l.h2,
                &cfg.calibration.reference,
                &cfg.nonlinearity,
            )?;
            run.lap("ladder");
            let mut t = CsvTable::new("ladder", &["k", "point", "value", "truth", "residual"]);
            for (k, reports) in &out.reports {
                for (i, r) in reports.iter().enumerate() {
                    t.push(&[
                        k.to_string(),
                        i.to_string(),
                        r.value.to_string(),
                        r.truth.map_or("nan".into(), |v| v.to_string()),
                        r.residual.to_string(),
                    ]);
                }
            }
            run.csv("ladder.csv", &t)?;
            let fields = serde_json::to_string_pretty(&out.fields).map_err(|e| Error::Format(e.to_string()))?;
            run.text("ladder_fields.json", &fields)?;
        }
    }
    run.lap("write");
    let rec = serde_json::to_string_pretty(&run.record).map_err(|e| Error::Format(e.to_string()))?;
    std::fs::write(out.join("record.json"), rec)?;
    Ok(run.record)
}

fn forward(cfg: &ExperimentConfig, g: &WarpedMetric, run: &mut Run) -> Result<()> {
    let grid = cfg.grid.build(g)?;
    let parts: Vec<NeumannSource> = cfg.forward.sources.iter().map(|s| s.source(&grid)).collect::<Result<_>>()?;
    let f = if parts.is_empty() {
        NeumannSource::zero(&grid)
    } else {
        NeumannSource::combine(&parts.iter().map(|p| (cfg.forward.scale, p)).collect::<Vec<_>>())?
    };
    let sol = solve_semilinear(g, &cfg.nonlinearity, &f, &cfg.forward.picard)?;
    run.lap("solve");
    run.csv("trace.csv", &trace_table(&sol.field.trace))?;
    save_trace(&run.out.join("trace.nlwf"), &sol.field.trace)?;
    run.record.files.push("trace.nlwf".into());
    let mut t = CsvTable::new("picard", &["iteration", "distance", "ratio"]);
    for (i, d) in sol.distances.iter().enumerate() {
        let r = if i == 0 { f64::NAN } else { sol.ratios[i - 1] };
        t.push(&[(i + 1) as f64, *d, r]);
    }
    run.csv("picard.csv", &t)?;
    let c = sol.contraction_ratio();
    run.check("picard contraction", c < 1.0, format!("ratio {c:.3e} over {} iterations", sol.iterations()));
    Ok(())
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let (xs, ys): (Vec<f64>, Vec<f64>) = pts.iter().map(|(a, b)| (a.ln(), b.ln())).unzip();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>()
}

/// Predicted slope of `‖□u_ρ‖_{L²}` against `ρ` for an order-`N` beam.
pub fn residual_slope_prediction(order: usize) -> f64 {
    -((order as f64 + 1.0) / 2.0 - 1.0)
}

fn beam_chart(b: &BeamVerifyParams, g: &WarpedMetric, step: f64, delta: f64) -> Result<crate::geometry::FermiChart> {
    let xi = null_covector(g, &b.point, &b.direction);
    let geo = trace_through(g, &b.point, &xi, &GeodesicOptions { step, ..Default::default() })?;
    build_fermi_chart_with(g, &geo, delta, 100)
}

/// `(step, drift, min eig Im H)` for the default initial data.
pub fn riccati_drift(b: &BeamVerifyParams, g: &WarpedMetric, step: f64) -> Result<(f64, f64)> {
    let ch = beam_chart(b, g, step, 0.05)?;
    let (h0, y0) = default_initial_data(ch.m);
    let r = solve_riccati(&ch, &h0, &y0)?;
    Ok((r.conservation_drift(), r.min_imag_eigenvalue()))
}

/// `‖□u_ρ‖_{L²}` over the configured `ρ` list for one beam order.
pub fn residual_series(b: &BeamVerifyParams, g: &WarpedMetric, order: usize, rho: &[f64]) -> Result<Vec<(f64, f64)>> {
    let ch = Arc::new(beam_chart(b, g, b.geodesic_steps[0], b.chart_delta)?);
    let m = ch.m;
    let h0 = CMat::identity(m, m) * Complex64::new(0.0, b.width);
    let prof = Arc::new(BeamProfile::build(ch, Some((h0, CMat::identity(m, m))), order, Some((-b.window, b.window)))?);
    let opts = ResidualOptions { n_tau: b.n_tau, n_y: b.n_y, y_max: b.y_max, tau_range: None };
    rho.iter()
        .map(|&r| {
            let beam = assemble_beam(prof.clone(), r, 1.0, b.chart_delta)?;
            Ok((r, beam_residual(&beam, 0, &opts)?))
        })
        .collect()
}

fn beam_verify(cfg: &ExperimentConfig, g: &WarpedMetric, run: &mut Run) -> Result<()> {
    let b = &cfg.beam_verify;
    let mut t = CsvTable::new("riccati-drift", &["step", "drift", "min_imag_eig"]);
    let mut drifts = vec![];
    for &s in &b.geodesic_steps {
        let (d, e) = riccati_drift(b, g, s)?;
        t.push(&[s, d, e]);
        drifts.push((s, d, e));
    }
    run.csv("riccati.csv", &t)?;
    let (s0, d0, _) = drifts[0];
    run.check("riccati conservation", d0 < 1e-6, format!("drift {d0:.3e} at step {s0}"));
    let emin = drifts.iter().map(|d| d.2).fold(f64::INFINITY, f64::min);
    run.check("Im H positive", emin > 0.0, format!("min eigenvalue {emin:.3e}"));
    run.lap("riccati");
    let mut res = CsvTable::new("beam-residual", &["order", "rho", "residual"]);
    let mut slopes = CsvTable::new("residual-slope", &["order", "slope", "predicted"]);
    for &n in &b.orders {
        let pts = residual_series(b, g, n, &b.rho)?;
        for (r, v) in &pts {
            res.push(&[n as f64, *r, *v]);
        }
        let s = loglog_slope(&pts);
        let want = residual_slope_prediction(n);
        slopes.push(&[n as f64, s, want]);
        run.check(
            &format!("residual slope N={n}"),
            (s - want).abs() < b.slope_tolerance,
            format!("slope {s:.3}, predicted {want:.3}"),
        );
    }
    run.csv("residual.csv", &res)?;
    run.csv("residual_slope.csv", &slopes)?;
    run.lap("residual");
    Ok(())
}

/// One row per `(r₀, ς)`: the interaction sum, its normalised value and the
/// decomposition residual.
pub fn covector_table(p: &CovectorParams, dim: usize) -> Result<CsvTable> {
    let mut t = CsvTable::new(
        "interaction-sum",
        &["r0", "varsigma", "interaction_sum", "normalised", "target", "decomposition_residual"],
    );
    for &r0 in &p.r0 {
        for &s in &p.varsigma {
            let f = NullFrame::flat(&vec![0.5; dim], r0, s)?;
            let sum = interaction_sum(&f)?;
            let target = 3.0 / (4.0 * b_of(r0).powi(2));
            t.push(&[r0, s, sum, sum / (s * s), target, f.decomposition_residual()]);
        }
    }
    Ok(t)
}

fn covector_verify(cfg: &ExperimentConfig, run: &mut Run) -> Result<()> {
    let p = &cfg.covector_verify;
    let t = covector_table(p, cfg.dimension)?;
    let smin = p.varsigma.iter().copied().fold(f64::INFINITY, f64::min);
    let (s, norm, target, resid) = (
        t.column_f64("varsigma")?,
        t.column_f64("normalised")?,
        t.column_f64("target")?,
        t.column_f64("decomposition_residual")?,
    );
    let mut worst: f64 = 0.0;
    for i in 0..s.len() {
        if s[i] == smin {
            worst = worst.max((norm[i] / target[i] - 1.0).abs());
        }
    }
    let rmax = resid.iter().copied().fold(0.0, f64::max);
    run.csv("interaction_sum.csv", &t)?;
    run.check("asymptotic law", worst < p.tolerance, format!("max relative deviation {worst:.3e} at ς = {smin}"));
    run.check("decomposition", rmax < 1e-12, format!("max residual {rmax:.3e}"));
    Ok(())
}

/// The configured patches with centres shifted by seeded jitter.
pub fn jittered_sources(p: &LinearizeParams, grid: &SpacetimeGrid, seed: u64) -> Result<Vec<NeumannSource>> {
    let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
    p.sources
        .iter()
        .map(|s| {
            let mut s = s.clone();
            for c in s.center.iter_mut() {
                *c += p.jitter * rng.gen_range(-1.0..=1.0);
            }
            s.source(grid)
        })
        .collect()
}

/// Relative L² gap between the stencil `(1,1,1)` derivative at `eps` and the cascade.
pub fn linearization_gap(cfg: &ExperimentConfig, g: &WarpedMetric, eps: f64) -> Result<f64> {
    let p = &cfg.linearize_verify;
    let grid = cfg.grid.build(g)?;
    let sources = jittered_sources(p, &grid, cfg.seed)?;
    let alpha = [1, 1, 1];
    let fd = mixed_derivative_ndmap(g, &cfg.nonlinearity, &sources, &EpsilonStencil::uniform(&alpha, eps)?, &p.picard)?;
    let exact = cascade_solve(g, &cfg.nonlinearity, &sources, &alpha)?;
    fd.relative_l2(&exact.field.trace)
}

fn linearize_verify(cfg: &ExperimentConfig, g: &WarpedMetric, run: &mut Run) -> Result<()> {
    let p = &cfg.linearize_verify;
    let gap = linearization_gap(cfg, g, p.eps)?;
    run.lap("linearize");
    let mut t = CsvTable::new("linearization", &["eps", "relative_difference"]);
    t.push(&[p.eps, gap]);
    run.csv("linearization.csv", &t)?;
    let degrees: Vec<usize> = cfg.nonlinearity.coefficients.keys().copied().collect();
    let recipe = serde_json::to_string_pretty(&cascade_recipe(&[1, 1, 1], &degrees))
        .map_err(|e| Error::Format(e.to_string()))?;
    run.text("recipe.json", &recipe)?;
    run.check("stencil vs cascade", gap < p.tolerance, format!("relative difference {gap:.3e} at ε = {}", p.eps));
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepAxis {
    Grid,
    Rho,
    Epsilon,
    Step,
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "grid" => Ok(SweepAxis::Grid),
            "rho" => Ok(SweepAxis::Rho),
            "epsilon" => Ok(SweepAxis::Epsilon),
            "step" => Ok(SweepAxis::Step),
            _ => Err(Error::Config(format!("unknown sweep axis `{s}` (grid, rho, epsilon, step)"))),
        }
    }
}

/// Max-norm error of the manufactured solution `t³ cos πx cos πy (cos πz)` in flat space.
pub fn manufactured_error(dim: usize, cells: usize, t_final: f64, courant: f64) -> Result<f64> {
    use std::f64::consts::PI;
    let g = WarpedMetric::minkowski(dim);
    let grid = SpacetimeGrid::fitted(&g, cells, t_final, courant)?;
    let n = dim - 1;
    let space = move |p: &[f64]| (1..=n).map(|a| (PI * p[a]).cos()).product::<f64>();
    let forcing = FnForcing {
        grid: &grid,
        f: |p: &[f64]| {
            let s = space(p);
            -6.0 * p[0] * s - n as f64 * PI * PI * p[0].powi(3) * s
        },
    };
    let u = solve_linear(&g, &forcing, &NeumannSource::zero(&grid), SolveMode::Forward)?;
    let mut e: f64 = 0.0;
    for k in 0..grid.levels() {
        for (i, v) in u.level(k).iter().enumerate() {
            let p = grid.point(k, i);
            e = e.max((v - p[0].powi(3) * space(&p[..dim])).abs());
        }
    }
    Ok(e)
}

/// Reruns one quantity with a scaled parameter and reports observed orders
/// between successive rows (`log(q_i/q_{i+1}) / log(f_{i+1}/f_i)`).
pub fn convergence_sweep(cfg: &ExperimentConfig, axis: SweepAxis, factors: &[f64]) -> Result<CsvTable> {
    if factors.len() < 2 {
        return Err(Error::Config("a sweep needs at least two factors".into()));
    }
    let g = cfg.metric()?;
    let b = &cfg.beam_verify;
    let (name, param): (&str, Vec<f64>) = match axis {
        SweepAxis::Grid => ("cells", factors.iter().map(|f| (cfg.grid.cells as f64 * f).round()).collect()),
        SweepAxis::Rho => ("rho", factors.iter().map(|f| b.rho[0] * f).collect()),
        SweepAxis::Epsilon => ("eps", factors.iter().map(|f| cfg.linearize_verify.eps / f).collect()),
        SweepAxis::Step => ("step", factors.iter().map(|f| b.geodesic_steps[0] / f).collect()),
    };
    let values: Vec<f64> = match axis {
        SweepAxis::Grid => param
            .iter()
            .map(|&c| manufactured_error(cfg.dimension, c as usize, cfg.grid.t_final.min(1.0), cfg.grid.courant))
            .collect::<Result<_>>()?,
        SweepAxis::Rho => {
            let order = *b.orders.first().ok_or_else(|| Error::Config("no beam order".into()))?;
            residual_series(b, &g, order, &param)?.into_iter().map(|p| p.1).collect()
        }
        SweepAxis::Epsilon => param.iter().map(|&e| linearization_gap(cfg, &g, e)).collect::<Result<_>>()?,
        SweepAxis::Step => param.iter().map(|&s| riccati_drift(b, &g, s).map(|d| d.0)).collect::<Result<_>>()?,
    };
    let mut t = CsvTable::new(&format!("convergence-{name}"), &["factor", name, "quantity", "observed_order"]);
    for i in 0..factors.len() {
        let order =
            if i == 0 { f64::NAN } else { (values[i - 1] / values[i]).ln() / (factors[i] / factors[i - 1]).ln() };
        t.push(&[factors[i], param[i], values[i], order]);
    }
    Ok(t)
}
