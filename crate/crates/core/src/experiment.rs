//! Experiment drivers: ensembles on a worker pool, checkpoints, and the
//! CSV/JSON artifacts of each experiment kind.
//!
//! Member `i` draws its noise from the stream
//! `(splitmix64(seed ^ i), trajectory_id = i)`, so results do not depend on
//! the number of worker threads or on scheduling order.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::boussinesq::{
    comparison_initial, comparison_margin, energy_record, Bases, EnergyRecord, FinitePrSolver, History,
    PassiveSolver, PassiveState, SolverState,
};
use crate::config::{ExperimentKind, ExperimentSpec, Prandtl};
use crate::coupling::{
    couple_infinite_pr, estimate_decay, step_coupled_pair, CouplingConfig, CouplingRow, CouplingTrace,
    GirsanovLedger,
};
use crate::error::{Error, Result};
use crate::grid::{Grid, ScalarField, VelocityField};
use crate::infinite_pr::{InfPrSolver, InfPrState};
use crate::noise::{build_temperature_basis, Channel, NoiseBasis, WienerStream};
use crate::params::{build_background_profile, NondimParams};
use crate::snapshot::{profile_csv, write_atomic, Snapshot};
use crate::stats::{
    background_bound, exponential_moment_report, martingale_exceedance_test, nusselt_estimates,
    nusselt_functionals, pointwise_background_inequality, theta_martingale_increment, MartingaleTrace,
    NusseltEstimates, TimeAverager, NUSSELT_BATCHES, NUSSELT_FUNCTIONALS,
};

pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const CHECKPOINT_VERSION: u32 = 1;
pub const MANIFEST: &str = "manifest.json";
pub const SUMMARY: &str = "summary.json";
const CHECKPOINT_DIR: &str = "checkpoint";
const STATE_FILE: &str = "state.json";

pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn member_seed(seed: u64, member: usize) -> u64 {
    splitmix64(seed ^ member as u64)
}

pub fn member_stream(seed: u64, member: usize) -> WienerStream {
    WienerStream::new(member_seed(seed, member), member as u64)
}

pub fn member_dir(root: &Path, member: usize) -> PathBuf {
    root.join(format!("member_{member:04}"))
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub output: PathBuf,
    /// Worker threads; `None` uses one per core.
    pub threads: Option<usize>,
    /// Stop (with a checkpoint) once a trajectory reaches this step index.
    pub max_steps: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    /// `false` when stopped early by `max_steps`.
    pub complete: bool,
    pub summary: Value,
}

/// Leading comment line of every CSV artifact.
fn csv_stamp(spec: &ExperimentSpec) -> String {
    format!("# spec_hash={} version={}\n", spec.hash(), CODE_VERSION)
}

fn stamped(spec: &ExperimentSpec, mut v: Value) -> Value {
    if let Value::Object(m) = &mut v {
        m.insert("spec_hash".into(), json!(spec.hash()));
        m.insert("version".into(), json!(CODE_VERSION));
    }
    v
}

fn write_json(path: &Path, v: &Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(v)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

/// `sin(pi x2) cos(2 pi x1 / L)` scaled by `amp`.
pub fn initial_theta(grid: Grid, amp: f64) -> ScalarField {
    let l = grid.aspect;
    let pi = std::f64::consts::PI;
    ScalarField::from_fn(grid, |x, z| amp * (pi * z).sin() * (2.0 * pi * x / l).cos())
}

fn offset_theta(grid: Grid, amp: f64) -> ScalarField {
    let l = grid.aspect;
    let pi = std::f64::consts::PI;
    ScalarField::from_fn(grid, |x, z| amp * (2.0 * pi * z).sin() * (2.0 * pi * x / l).sin())
}

/// Either stepper behind one interface.
#[derive(Debug, Clone)]
pub enum Model {
    Finite(Box<FinitePrSolver>),
    Infinite(Box<InfPrSolver>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum State {
    Finite(SolverState),
    Infinite(InfPrState),
}

impl Model {
    pub fn new(prandtl: Prandtl, params: NondimParams, spec: &ExperimentSpec) -> Result<Self> {
        Ok(match prandtl {
            Prandtl::Finite(_) => Model::Finite(Box::new(FinitePrSolver::new(
                spec.grid,
                params,
                Bases::new(&params, &spec.grid)?,
                spec.step,
            )?)),
            Prandtl::Infinite => Model::Infinite(Box::new(InfPrSolver::new(
                spec.grid,
                params,
                build_temperature_basis(params.n2, &spec.grid)?,
                spec.step,
            )?)),
        })
    }

    pub fn temperature_basis(&self) -> &NoiseBasis {
        match self {
            Model::Finite(s) => &s.bases.temperature,
            Model::Infinite(s) => &s.basis,
        }
    }

    pub fn params(&self) -> &NondimParams {
        match self {
            Model::Finite(s) => &s.params,
            Model::Infinite(s) => &s.params,
        }
    }

    pub fn initial(&self, theta: ScalarField, stream: WienerStream) -> Result<State> {
        Ok(match self {
            Model::Finite(_) => State::Finite(SolverState::new(theta.clone(), theta.grid.zeros(), stream)?),
            Model::Infinite(s) => State::Infinite(s.initial_state(theta, stream)?),
        })
    }

    pub fn step(&self, state: &State) -> Result<State> {
        match (self, state) {
            (Model::Finite(m), State::Finite(s)) => Ok(State::Finite(m.step(s)?)),
            (Model::Infinite(m), State::Infinite(s)) => Ok(State::Infinite(m.step(s)?)),
            _ => Err(Error::domain("state", "state does not belong to this model")),
        }
    }

    pub fn couple(
        &self,
        ccfg: &CouplingConfig,
        u: &State,
        v: &State,
        ledger: &mut GirsanovLedger,
    ) -> Result<(State, State, CouplingRow)> {
        match (self, u, v) {
            (Model::Finite(m), State::Finite(u), State::Finite(v)) => {
                let (u, v, r) = step_coupled_pair(m, ccfg, u, v, ledger)?;
                Ok((State::Finite(u), State::Finite(v), r))
            }
            (Model::Infinite(m), State::Infinite(u), State::Infinite(v)) => {
                let (u, v, r) = couple_infinite_pr(m, ccfg, u, v, ledger)?;
                Ok((State::Infinite(u), State::Infinite(v), r))
            }
            _ => Err(Error::domain("state", "state does not belong to this model")),
        }
    }
}

impl State {
    pub fn t(&self) -> f64 {
        match self {
            State::Finite(s) => s.t,
            State::Infinite(s) => s.t,
        }
    }

    pub fn step_index(&self) -> u64 {
        match self {
            State::Finite(s) => s.step,
            State::Infinite(s) => s.step,
        }
    }

    pub fn theta(&self) -> &ScalarField {
        match self {
            State::Finite(s) => &s.theta,
            State::Infinite(s) => &s.theta,
        }
    }

    pub fn velocity(&self) -> &VelocityField {
        match self {
            State::Finite(s) => &s.velocity,
            State::Infinite(s) => &s.velocity,
        }
    }

    pub fn stream(&self) -> WienerStream {
        match self {
            State::Finite(s) => s.stream,
            State::Infinite(s) => s.stream,
        }
    }

    pub fn energy(&self) -> EnergyRecord {
        energy_record(self.t(), self.theta(), self.velocity())
    }
}

fn pool(threads: Option<usize>) -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        b = b.num_threads(n.max(1));
    }
    b.build().map_err(|e| Error::Config(format!("worker pool: {e}")))
}

fn manifest(spec: &ExperimentSpec) -> Result<Value> {
    let seeds: Vec<Value> = (0..spec.members.max(spec.sweep.len()))
        .map(|i| json!({"member": i, "seed": member_seed(spec.seed, i), "trajectory_id": i}))
        .collect();
    let mut bases = json!({});
    if spec.kind != ExperimentKind::NusseltSweep {
        let b = Bases::new(&spec.params, &spec.grid)?;
        bases = json!({
            "temperature": b.temperature.manifest_json(),
            "velocity": b.velocity.manifest_json(),
        });
    }
    Ok(stamped(
        spec,
        json!({
            "kind": spec.kind,
            "config": spec.canonical(),
            "seed_derivation": "member seed = splitmix64(seed ^ member); trajectory_id = member",
            "members": seeds,
            "bases": bases,
        }),
    ))
}

/// Runs the experiment described by `spec`, writing artifacts under `opts.output`.
pub fn run(spec: &ExperimentSpec, opts: &RunOptions) -> Result<Outcome> {
    let errs = spec.violations();
    if !errs.is_empty() {
        return Err(Error::Validation(errs));
    }
    fs::create_dir_all(&opts.output)?;
    write_json(&opts.output.join(MANIFEST), &manifest(spec)?)?;
    let pool = pool(opts.threads)?;
    pool.install(|| match spec.kind {
        ExperimentKind::RunFinitePr | ExperimentKind::RunInfinitePr => run_trajectories(spec, opts, None),
        ExperimentKind::Couple => run_couple(spec, opts),
        ExperimentKind::NusseltSweep => run_sweep(spec, opts),
        ExperimentKind::VerifyComparison => run_comparison(spec, opts),
        ExperimentKind::MartingaleTest => run_martingale(spec, opts),
    })
}

/// Continues an interrupted trajectory run from the checkpoints under `from`.
/// Every checkpoint is validated before anything is written.
pub fn resume(spec: &ExperimentSpec, from: &Path, opts: &RunOptions) -> Result<Outcome> {
    if !matches!(spec.kind, ExperimentKind::RunFinitePr | ExperimentKind::RunInfinitePr) {
        return Err(Error::CheckpointRefused(format!(
            "kind {} does not write checkpoints",
            spec.kind.name()
        )));
    }
    let errs = spec.violations();
    if !errs.is_empty() {
        return Err(Error::Validation(errs));
    }
    let model = Model::new(spec.prandtl, spec.params, spec)?;
    let mut loaded = vec![];
    let mut found = false;
    for m in 0..spec.members {
        let dir = member_dir(from, m).join(CHECKPOINT_DIR);
        if dir.join(STATE_FILE).exists() {
            found = true;
            loaded.push(Some(load_checkpoint(spec, &model, m, &dir)?));
        } else {
            loaded.push(None);
        }
    }
    if !found {
        return Err(Error::CheckpointRefused(format!("no checkpoint under {}", from.display())));
    }
    fs::create_dir_all(&opts.output)?;
    write_json(&opts.output.join(MANIFEST), &manifest(spec)?)?;
    pool(opts.threads)?.install(|| run_trajectories(spec, opts, Some(loaded)))
}

/// Everything a trajectory needs to continue bit-exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CheckpointMeta {
    format_version: u32,
    spec_hash: String,
    version: String,
    member: usize,
    t: f64,
    step: u64,
    stream: WienerStream,
    has_history: bool,
    rows: Vec<EnergyRecord>,
    averager: TimeAverager,
    inequality_min: f64,
}

#[derive(Debug, Clone)]
struct Progress {
    state: State,
    rows: Vec<EnergyRecord>,
    averager: TimeAverager,
    inequality_min: f64,
}

fn save_checkpoint(spec: &ExperimentSpec, member: usize, dir: &Path, p: &Progress) -> Result<()> {
    let fresh = dir.with_extension("new");
    let old = dir.with_extension("old");
    if fresh.exists() {
        fs::remove_dir_all(&fresh)?;
    }
    fs::create_dir_all(&fresh)?;
    let t = p.state.t();
    let hist = match &p.state {
        State::Finite(s) => s.history.as_ref().map(|h| (h.theta.clone(), Some(h.omega.clone()))),
        State::Infinite(s) => s.history.clone().map(|h| (h, None)),
    };
    Snapshot::of_field(p.state.theta(), t).write(&fresh.join("theta.bfld"))?;
    Snapshot::new(spec.grid, t, p.state.velocity().psi.clone())?.write(&fresh.join("psi.bfld"))?;
    if let Some((th, om)) = &hist {
        Snapshot::new(spec.grid, t, th.clone())?.write(&fresh.join("history_theta.bfld"))?;
        if let Some(om) = om {
            Snapshot::new(spec.grid, t, om.clone())?.write(&fresh.join("history_omega.bfld"))?;
        }
    }
    let meta = CheckpointMeta {
        format_version: CHECKPOINT_VERSION,
        spec_hash: spec.hash(),
        version: CODE_VERSION.into(),
        member,
        t,
        step: p.state.step_index(),
        stream: p.state.stream(),
        has_history: hist.is_some(),
        rows: p.rows.clone(),
        averager: p.averager.clone(),
        inequality_min: p.inequality_min,
    };
    write_atomic(&fresh.join(STATE_FILE), serde_json::to_string(&meta)?.as_bytes())?;
    if dir.exists() {
        if old.exists() {
            fs::remove_dir_all(&old)?;
        }
        fs::rename(dir, &old)?;
    }
    fs::rename(&fresh, dir)?;
    if old.exists() {
        fs::remove_dir_all(&old)?;
    }
    Ok(())
}

fn read_field(dir: &Path, name: &str, grid: Grid) -> Result<Snapshot> {
    let s = Snapshot::read(&dir.join(name))?;
    if s.grid != grid {
        return Err(Error::CheckpointRefused(format!("{name} was written on a different grid")));
    }
    Ok(s)
}

fn load_checkpoint(spec: &ExperimentSpec, model: &Model, member: usize, dir: &Path) -> Result<Progress> {
    let text = fs::read_to_string(dir.join(STATE_FILE))?;
    let raw: Value = serde_json::from_str(&text).map_err(|e| Error::Corrupt(format!("checkpoint state: {e}")))?;
    let found = raw.get("format_version").and_then(Value::as_u64).unwrap_or(0) as u32;
    if found != CHECKPOINT_VERSION {
        return Err(Error::VersionMismatch {
            found,
            expected: CHECKPOINT_VERSION,
        });
    }
    let meta: CheckpointMeta =
        serde_json::from_value(raw).map_err(|e| Error::Corrupt(format!("checkpoint state: {e}")))?;
    if meta.spec_hash != spec.hash() {
        return Err(Error::CheckpointRefused(format!(
            "checkpoint was written for spec {} but the configuration hashes to {}",
            meta.spec_hash,
            spec.hash()
        )));
    }
    if meta.member != member {
        return Err(Error::Corrupt(format!("checkpoint of member {} found in slot {member}", meta.member)));
    }
    let g = spec.grid;
    let theta = ScalarField::from_values(g, read_field(dir, "theta.bfld", g)?.values)?;
    let psi = read_field(dir, "psi.bfld", g)?.values;
    let hist_theta = if meta.has_history {
        Some(read_field(dir, "history_theta.bfld", g)?.values)
    } else {
        None
    };
    let state = match model {
        Model::Finite(_) => {
            let history = match hist_theta {
                Some(theta) => Some(History {
                    theta,
                    omega: read_field(dir, "history_omega.bfld", g)?.values,
                }),
                None => None,
            };
            State::Finite(SolverState {
                t: meta.t,
                step: meta.step,
                theta,
                velocity: VelocityField::from_streamfunction(g, psi)?,
                stream: meta.stream,
                history,
            })
        }
        Model::Infinite(m) => State::Infinite(InfPrState {
            t: meta.t,
            step: meta.step,
            velocity: m.velocity_of(&theta)?,
            theta,
            stream: meta.stream,
            history: hist_theta,
        }),
    };
    Ok(Progress {
        state,
        rows: meta.rows,
        averager: meta.averager,
        inequality_min: meta.inequality_min,
    })
}

fn record(spec: &ExperimentSpec, params: &NondimParams, profile_ra: f64, p: &mut Progress) -> Result<()> {
    let s = &p.state;
    p.rows.push(s.energy());
    let f = nusselt_functionals(s.theta(), s.velocity(), params.ra_tilde);
    p.averager.update(s.t(), &f)?;
    let profile = build_background_profile(profile_ra, params.ra_tilde, &spec.grid);
    let r = pointwise_background_inequality(s.theta(), s.velocity(), &profile, params);
    p.inequality_min = p.inequality_min.min(r);
    Ok(())
}

/// Steps one trajectory to `t_end`, sampling diagnostics and checkpointing.
/// Returns `None` when stopped by `max_steps`.
fn drive(
    spec: &ExperimentSpec,
    model: &Model,
    member: usize,
    dir: Option<&Path>,
    max_steps: Option<u64>,
    mut p: Progress,
) -> Result<Option<Progress>> {
    let total = spec.total_steps();
    let params = *model.params();
    while p.state.step_index() < total {
        if max_steps.is_some_and(|m| p.state.step_index() >= m) {
            if let Some(d) = dir {
                save_checkpoint(spec, member, &d.join(CHECKPOINT_DIR), &p)?;
            }
            return Ok(None);
        }
        p.state = model.step(&p.state)?;
        let n = p.state.step_index();
        if n.is_multiple_of(spec.sample_every) || n == total {
            record(spec, &params, params.ra, &mut p)?;
        }
        if let Some(d) = dir {
            if spec.checkpoint_every > 0 && n.is_multiple_of(spec.checkpoint_every) && n < total {
                save_checkpoint(spec, member, &d.join(CHECKPOINT_DIR), &p)?;
            }
        }
    }
    Ok(Some(p))
}

fn fresh_progress(spec: &ExperimentSpec, model: &Model, stream: WienerStream) -> Result<Progress> {
    let params = *model.params();
    let mut p = Progress {
        state: model.initial(initial_theta(spec.grid, spec.init_amplitude), stream)?,
        rows: vec![],
        averager: TimeAverager::new(&NUSSELT_FUNCTIONALS, spec.t_start),
        inequality_min: f64::INFINITY,
    };
    record(spec, &params, params.ra, &mut p)?;
    Ok(p)
}

fn nusselt_or_note(avg: &TimeAverager, params: &NondimParams) -> (Option<NusseltEstimates>, Option<String>) {
    match nusselt_estimates(avg, params) {
        Ok(e) => (Some(e), None),
        Err(e) => (None, Some(e.to_string())),
    }
}

fn moments(spec: &ExperimentSpec, rows: &[EnergyRecord]) -> Value {
    let window: Vec<&EnergyRecord> = rows.iter().filter(|r| r.t >= spec.t_start).collect();
    let report = |xs: Vec<f64>| match exponential_moment_report(&xs, &spec.eta_list) {
        Ok(rows) => json!(rows),
        Err(e) => json!(e.to_string()),
    };
    let half = window.len() / 2;
    let p2 = |r: &&EnergyRecord| r.norm_u_sq + r.norm_theta_sq;
    let p4 = |r: &&EnergyRecord| r.norm_u_sq + r.theta_l4 * r.theta_l4;
    json!({
        "samples": window.len(),
        "p2": report(window.iter().map(p2).collect()),
        "p4": report(window.iter().map(p4).collect()),
        "p2_second_half": report(window[half..].iter().map(p2).collect()),
        "p4_second_half": report(window[half..].iter().map(p4).collect()),
    })
}

fn run_trajectories(spec: &ExperimentSpec, opts: &RunOptions, loaded: Option<Vec<Option<Progress>>>) -> Result<Outcome> {
    let model = Model::new(spec.prandtl, spec.params, spec)?;
    let mut starts = loaded.unwrap_or_else(|| vec![None; spec.members]);
    starts.resize(spec.members, None);
    let results: Vec<Result<Option<Progress>>> = starts
        .into_par_iter()
        .enumerate()
        .map(|(m, start)| {
            let dir = member_dir(&opts.output, m);
            fs::create_dir_all(&dir)?;
            let p = match start {
                Some(p) => p,
                None => fresh_progress(spec, &model, member_stream(spec.seed, m))?,
            };
            let done = drive(spec, &model, m, Some(&dir), opts.max_steps, p)?;
            if let Some(p) = &done {
                write_trajectory(spec, &dir, p)?;
            }
            Ok(done)
        })
        .collect();
    let mut finished = vec![];
    for r in results {
        finished.push(r?);
    }
    if finished.iter().any(Option::is_none) {
        return Ok(Outcome {
            complete: false,
            summary: stamped(spec, json!({"status": "interrupted"})),
        });
    }
    let params = spec.params;
    let profile = build_background_profile(params.ra, params.ra_tilde, &spec.grid);
    let mut members = vec![];
    let mut nus = vec![];
    for (m, p) in finished.into_iter().flatten().enumerate() {
        let (nu, note) = nusselt_or_note(&p.averager, &params);
        if let Some(n) = &nu {
            nus.push(n.nu_flux);
        }
        members.push(json!({
            "member": m,
            "seed": member_seed(spec.seed, m),
            "final": p.rows.last(),
            "window": p.averager.window(),
            "nusselt": nu,
            "nusselt_note": note,
            "inequality_min": p.inequality_min,
            "exponential_moments": moments(spec, &p.rows),
        }));
    }
    let ensemble = if nus.is_empty() {
        Value::Null
    } else {
        let n = nus.len() as f64;
        let mean = nus.iter().sum::<f64>() / n;
        let sd = if nus.len() > 1 {
            (nus.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        json!({"nu_flux_mean": mean, "nu_flux_sd": sd, "count": nus.len()})
    };
    let summary = stamped(
        spec,
        json!({
            "kind": spec.kind,
            "params": params,
            "background_bound": background_bound(&params, &profile),
            "delta": profile.delta,
            "members": members,
            "ensemble_nusselt": ensemble,
        }),
    );
    write_json(&opts.output.join(SUMMARY), &summary)?;
    Ok(Outcome {
        complete: true,
        summary,
    })
}

fn write_trajectory(spec: &ExperimentSpec, dir: &Path, p: &Progress) -> Result<()> {
    let mut csv = csv_stamp(spec);
    csv.push_str(EnergyRecord::CSV_HEADER);
    csv.push('\n');
    for r in &p.rows {
        csv.push_str(&r.csv_row());
        csv.push('\n');
    }
    write_atomic(&dir.join("trajectory.csv"), csv.as_bytes())?;
    let t = p.state.t();
    Snapshot::of_field(p.state.theta(), t).write(&dir.join("theta_final.bfld"))?;
    Snapshot::new(spec.grid, t, p.state.velocity().psi.clone())?.write(&dir.join("psi_final.bfld"))?;
    write_atomic(
        &dir.join("theta_profile.csv"),
        profile_csv(p.state.theta(), &csv_stamp(spec)).as_bytes(),
    )?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoupleMember {
    pub member: usize,
    pub synced: bool,
    pub rate: Option<f64>,
    pub r_squared: Option<f64>,
    pub stopped_ever: bool,
    pub final_diff: f64,
    pub girsanov_cost: f64,
    pub log_density: f64,
}

impl CoupleMember {
    /// Synchronized with a clean exponential decay.
    pub fn decays(&self) -> bool {
        self.synced && self.rate.is_some_and(|r| r < 0.0) && self.r_squared.is_some_and(|r| r > 0.9)
    }
}

fn run_couple(spec: &ExperimentSpec, opts: &RunOptions) -> Result<Outcome> {
    let model = Model::new(spec.prandtl, spec.params, spec)?;
    let ccfg = spec.coupling.expect("validated couple spec");
    let ccfg = match &model {
        Model::Finite(m) => ccfg.resolve_modes(&m.bases.temperature, Some(&m.bases.velocity))?,
        Model::Infinite(m) => CouplingConfig {
            lambda1: 0.0,
            ..ccfg
        }
        .resolve_modes(&m.basis, None)?,
    };
    ccfg.validate(&spec.params)?;
    let total = spec.total_steps();
    let results: Vec<Result<CoupleMember>> = (0..spec.members)
        .into_par_iter()
        .map(|m| {
            let stream = member_stream(spec.seed, m);
            let th = initial_theta(spec.grid, spec.init_amplitude);
            let mut tv = th.clone();
            tv.axpy(1.0, &offset_theta(spec.grid, spec.couple_offset));
            let mut u = model.initial(th, stream)?;
            let mut v = model.initial(tv, stream)?;
            let mut ledger = GirsanovLedger::default();
            let mut trace = CouplingTrace::default();
            let mut stopped_ever = false;
            while u.step_index() < total {
                let (u1, v1, row) = model.couple(&ccfg, &u, &v, &mut ledger)?;
                stopped_ever |= row.stopped;
                u = u1;
                v = v1;
                let n = u.step_index();
                if n % spec.sample_every == 0 || n == total {
                    trace.rows.push(row);
                }
            }
            let dir = member_dir(&opts.output, m);
            fs::create_dir_all(&dir)?;
            let mut csv = csv_stamp(spec);
            csv.push_str(CouplingRow::CSV_HEADER);
            csv.push('\n');
            for r in &trace.rows {
                csv.push_str(&r.csv_row());
                csv.push('\n');
            }
            write_atomic(&dir.join("coupling.csv"), csv.as_bytes())?;
            let est = estimate_decay(&trace, &spec.decay)?;
            let last = trace.rows.last().expect("at least one step");
            Ok(CoupleMember {
                member: m,
                synced: est.synced,
                rate: est.rate,
                r_squared: est.r_squared,
                stopped_ever,
                final_diff: last.diff_u_sq + last.diff_theta_sq,
                girsanov_cost: ledger.cost,
                log_density: ledger.log_density,
            })
        })
        .collect();
    let members = results.into_iter().collect::<Result<Vec<_>>>()?;
    let n = members.len() as f64;
    let synced = members.iter().filter(|m| m.synced).count();
    let decaying = members.iter().filter(|m| m.decays()).count();
    let stopped_synced = members.iter().filter(|m| m.synced && m.stopped_ever).count();
    let fraction = decaying as f64 / n;
    let summary = stamped(
        spec,
        json!({
            "kind": spec.kind,
            "params": spec.params,
            "coupling": ccfg,
            "members": members,
            "synced": synced,
            "synced_with_decay": decaying,
            "stopped_on_synced": stopped_synced,
            "sync_fraction": fraction,
            "sync_target": spec.sync_target,
            "meets_target": fraction >= spec.sync_target && stopped_synced == 0,
        }),
    );
    write_json(&opts.output.join(SUMMARY), &summary)?;
    Ok(Outcome {
        complete: true,
        summary,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub ra: f64,
    pub ra_tilde: f64,
    pub nusselt: NusseltEstimates,
    pub bound: f64,
    pub inequality_min: f64,
}

impl SweepRow {
    pub const CSV_HEADER: &'static str =
        "ra,ra_tilde,product,nu_flux,hw_flux,nu_grad_t,hw_grad_t,nu_grad_u,hw_grad_u,bound,nu_over_sqrt_product";

    pub fn product(&self) -> f64 {
        self.ra * self.ra_tilde
    }

    pub fn csv_row(&self) -> String {
        let n = &self.nusselt;
        format!(
            "{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e}",
            self.ra,
            self.ra_tilde,
            self.product(),
            n.nu_flux,
            n.mc_halfwidths[0],
            n.nu_grad_t,
            n.mc_halfwidths[1],
            n.nu_grad_u,
            n.mc_halfwidths[2],
            self.bound,
            n.nu_flux / self.product().sqrt()
        )
    }
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() < 2 || x.iter().chain(y).any(|v| !(*v > 0.0)) {
        return None;
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// One Nusselt measurement at `(ra, ra_tilde)` from a single long trajectory.
pub fn nusselt_point(spec: &ExperimentSpec, ra: f64, ra_tilde: f64, member: usize) -> Result<SweepRow> {
    let params = NondimParams { ra, ra_tilde, ..spec.params };
    let model = Model::new(spec.prandtl, params, spec)?;
    let p = Progress {
        state: model.initial(initial_theta(spec.grid, spec.init_amplitude), member_stream(spec.seed, member))?,
        rows: vec![],
        averager: TimeAverager::new(&NUSSELT_FUNCTIONALS, spec.t_start),
        inequality_min: f64::INFINITY,
    };
    let mut p = p;
    record(spec, &params, ra, &mut p)?;
    let p = drive(spec, &model, member, None, None, p)?.expect("no step limit");
    let profile = build_background_profile(ra, ra_tilde, &spec.grid);
    Ok(SweepRow {
        ra,
        ra_tilde,
        nusselt: nusselt_estimates(&p.averager, &params)?,
        bound: background_bound(&params, &profile),
        inequality_min: p.inequality_min,
    })
}

fn run_sweep(spec: &ExperimentSpec, opts: &RunOptions) -> Result<Outcome> {
    let samples = (spec.t_end - spec.t_start) / spec.step.dt / spec.sample_every as f64;
    if samples < (2 * NUSSELT_BATCHES + 1) as f64 {
        return Err(Error::WindowTooShort(format!(
            "about {samples:.0} samples after t_start; {} batches need more",
            NUSSELT_BATCHES
        )));
    }
    let rows: Vec<Result<SweepRow>> = spec
        .sweep
        .par_iter()
        .enumerate()
        .map(|(i, &(ra, rt))| nusselt_point(spec, ra, rt, i))
        .collect();
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
    let mut csv = csv_stamp(spec);
    csv.push_str(SweepRow::CSV_HEADER);
    csv.push('\n');
    for r in &rows {
        csv.push_str(&r.csv_row());
        csv.push('\n');
    }
    write_atomic(&opts.output.join("sweep.csv"), csv.as_bytes())?;
    let products: Vec<f64> = rows.iter().map(SweepRow::product).collect();
    let bounds: Vec<f64> = rows.iter().map(|r| r.bound).collect();
    let nus: Vec<f64> = rows.iter().map(|r| r.nusselt.nu_flux).collect();
    let summary = stamped(
        spec,
        json!({
            "kind": spec.kind,
            "params": spec.params,
            "window": [spec.t_start, spec.t_end],
            "rows": rows,
            "bound_exponent": loglog_slope(&products, &bounds),
            "nu_flux_exponent": loglog_slope(&products, &nus),
            "bound_dominates": rows.iter().all(|r| r.nusselt.nu_flux <= r.bound),
        }),
    );
    write_json(&opts.output.join(SUMMARY), &summary)?;
    Ok(Outcome {
        complete: true,
        summary,
    })
}

/// Frozen smooth velocity used by comparison member `m`.
pub fn comparison_velocity(grid: Grid, amp: f64, m: usize) -> Result<VelocityField> {
    let pi = std::f64::consts::PI;
    let j = (1 + m % 3) as f64;
    let phase = 0.7 * m as f64;
    let l = grid.aspect;
    let psi = grid.from_fn(|x, z| amp * (2.0 * pi * j * x / l + phase).sin() * (pi * z).sin().powi(2));
    VelocityField::from_streamfunction(grid, psi)
}

/// Minimum over all steps and grid points of `|S| + 2 ra_tilde - |xi|` for member `m`.
pub fn comparison_member(spec: &ExperimentSpec, m: usize) -> Result<f64> {
    let g = spec.grid;
    let rt = spec.params.ra_tilde;
    let v = comparison_velocity(g, spec.comparison_velocity, m)?;
    let basis = build_temperature_basis(spec.params.n2, &g)?;
    let xi_solver = PassiveSolver::new(v.clone(), rt, basis.clone(), spec.step)?;
    let s_solver = PassiveSolver::new(v, 0.0, basis, spec.step)?;
    let l = g.aspect;
    let pi = std::f64::consts::PI;
    let phase = 0.3 * m as f64;
    let xi0 = ScalarField::from_fn(g, |x, z| {
        spec.xi_amplitude * (pi * z).sin() * (2.0 * pi * x / l + phase).cos()
    });
    let stream = member_stream(spec.seed, m);
    let mut xi = PassiveState::new(xi0.clone(), stream);
    let mut s = PassiveState::new(comparison_initial(&xi0, rt), stream);
    let mut worst = comparison_margin(&xi.field, &s.field, rt);
    for _ in 0..spec.total_steps() {
        xi = xi_solver.step(&xi)?;
        s = s_solver.step(&s)?;
        worst = worst.min(comparison_margin(&xi.field, &s.field, rt));
    }
    Ok(worst)
}

fn run_comparison(spec: &ExperimentSpec, opts: &RunOptions) -> Result<Outcome> {
    let margins: Vec<Result<f64>> = (0..spec.members).into_par_iter().map(|m| comparison_member(spec, m)).collect();
    let margins = margins.into_iter().collect::<Result<Vec<_>>>()?;
    let rt = spec.params.ra_tilde;
    let mut csv = csv_stamp(spec);
    csv.push_str("member,min_margin,min_margin_over_ra_tilde\n");
    for (m, v) in margins.iter().enumerate() {
        csv.push_str(&format!("{m},{v:e},{:e}\n", v / rt));
    }
    write_atomic(&opts.output.join("comparison.csv"), csv.as_bytes())?;
    let worst = margins.iter().copied().fold(f64::INFINITY, f64::min);
    let summary = stamped(
        spec,
        json!({
            "kind": spec.kind,
            "params": spec.params,
            "min_margin": worst,
            "tolerance": -1e-6 * rt,
            "holds": worst >= -1e-6 * rt,
            "margins": margins,
        }),
    );
    write_json(&opts.output.join(SUMMARY), &summary)?;
    Ok(Outcome {
        complete: true,
        summary,
    })
}

/// Martingale trace of `|theta|^2` and the end state's `|u|^2 + |theta|^2`.
pub fn martingale_member(spec: &ExperimentSpec, model: &Model, m: usize) -> Result<(MartingaleTrace, f64)> {
    let mut state = model.initial(initial_theta(spec.grid, spec.init_amplitude), member_stream(spec.seed, m))?;
    let basis = model.temperature_basis();
    let mut trace = MartingaleTrace::default();
    trace.push_increment(0.0, 0.0);
    for _ in 0..spec.total_steps() {
        let g = basis.draws(&state.stream(), Channel::Temperature);
        let (dm, dq) = theta_martingale_increment(state.theta(), basis, &g, spec.step.dt);
        trace.push_increment(dm, dq);
        state = model.step(&state)?;
    }
    let e = state.energy();
    Ok((trace, e.norm_u_sq + e.norm_theta_sq))
}

fn run_martingale(spec: &ExperimentSpec, opts: &RunOptions) -> Result<Outcome> {
    let model = Model::new(spec.prandtl, spec.params, spec)?;
    let runs: Vec<Result<(MartingaleTrace, f64)>> =
        (0..spec.members).into_par_iter().map(|m| martingale_member(spec, &model, m)).collect();
    let runs = runs.into_iter().collect::<Result<Vec<_>>>()?;
    let (traces, ends): (Vec<MartingaleTrace>, Vec<f64>) = runs.into_iter().unzip();
    let table = martingale_exceedance_test(&traces, spec.gamma, &spec.k_list)?;
    let mut csv = csv_stamp(spec);
    csv.push_str("k,frequency,bound,binomial_sigma,within_bound\n");
    for r in &table {
        csv.push_str(&format!(
            "{:e},{:e},{:e},{:e},{}\n",
            r.k, r.frequency, r.bound, r.binomial_sigma, r.within_bound
        ));
    }
    write_atomic(&opts.output.join("exceedance.csv"), csv.as_bytes())?;
    let mut sups = csv_stamp(spec);
    sups.push_str("member,sup_excess,final_energy\n");
    for (m, (t, e)) in traces.iter().zip(&ends).enumerate() {
        sups.push_str(&format!("{m},{:e},{e:e}\n", t.sup_excess(spec.gamma)));
    }
    write_atomic(&opts.output.join("martingale_members.csv"), sups.as_bytes())?;
    let moments = match exponential_moment_report(&ends, &spec.eta_list) {
        Ok(r) => json!(r),
        Err(e) => json!(e.to_string()),
    };
    let summary = stamped(
        spec,
        json!({
            "kind": spec.kind,
            "params": spec.params,
            "gamma": spec.gamma,
            "exceedance": table,
            "all_within_bound": table.iter().all(|r| r.within_bound),
            "exponential_moments": moments,
        }),
    );
    write_json(&opts.output.join(SUMMARY), &summary)?;
    Ok(Outcome {
        complete: true,
        summary,
    })
}

/// Reads back the summary under `dir`, refusing one written for another spec.
pub fn report(spec: &ExperimentSpec, dir: &Path) -> Result<Value> {
    let text = fs::read_to_string(dir.join(SUMMARY))?;
    let v: Value = serde_json::from_str(&text).map_err(|e| Error::Corrupt(format!("summary: {e}")))?;
    let found = v.get("spec_hash").and_then(Value::as_str).unwrap_or("");
    if found != spec.hash() {
        return Err(Error::CheckpointRefused(format!(
            "summary belongs to spec {found}, configuration hashes to {}",
            spec.hash()
        )));
    }
    Ok(v)
}
