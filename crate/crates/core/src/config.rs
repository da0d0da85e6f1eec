//! Flat `key = value` experiment configuration.
//!
//! Lines are `key = value`; `#` starts a comment; blank lines are ignored.
//! Unknown and repeated keys are errors. Every problem found is reported at
//! once through [`Error::Validation`].

use std::collections::BTreeMap;
use std::fmt::Display;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::boussinesq::{Scheme, StepConfig};
use crate::coupling::{CouplingConfig, CouplingMode, DecayOptions};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::params::NondimParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    RunFinitePr,
    RunInfinitePr,
    Couple,
    NusseltSweep,
    VerifyComparison,
    MartingaleTest,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 6] = [
        ExperimentKind::RunFinitePr,
        ExperimentKind::RunInfinitePr,
        ExperimentKind::Couple,
        ExperimentKind::NusseltSweep,
        ExperimentKind::VerifyComparison,
        ExperimentKind::MartingaleTest,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::RunFinitePr => "run_finite_pr",
            ExperimentKind::RunInfinitePr => "run_infinite_pr",
            ExperimentKind::Couple => "couple",
            ExperimentKind::NusseltSweep => "nusselt_sweep",
            ExperimentKind::VerifyComparison => "verify_comparison",
            ExperimentKind::MartingaleTest => "martingale_test",
        }
    }

    fn uses_prandtl(self) -> bool {
        !matches!(self, ExperimentKind::VerifyComparison)
    }
}

impl FromStr for ExperimentKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown kind `{s}`"))
    }
}

/// Every key accepted in a configuration file.
pub const KNOWN_KEYS: &[&str] = &[
    "kind",
    "pr",
    "ra",
    "ra_tilde",
    "aspect",
    "n1",
    "n2",
    "sigma_tilde_norm",
    "nx",
    "nz",
    "dt",
    "t_end",
    "t_start",
    "cfl_max",
    "dealias",
    "noise",
    "startup_steps",
    "seed",
    "members",
    "checkpoint_every",
    "sample_every",
    "init_amplitude",
    "lambda1",
    "lambda2",
    "n1_nudge",
    "n2_nudge",
    "r_budget",
    "coupling_mode",
    "auto_modes",
    "couple_offset",
    "sync_eps",
    "window_fraction",
    "sync_target",
    "sweep_ra",
    "sweep_ra_tilde",
    "comparison_velocity",
    "xi_amplitude",
    "gamma",
    "k_list",
    "eta_list",
];

/// Raw key/value pairs of a configuration file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigMap {
    entries: BTreeMap<String, String>,
}

impl ConfigMap {
    pub fn parse(text: &str) -> Result<Self> {
        let mut errs = vec![];
        let mut entries = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                errs.push(format!("line {}: expected `key = value`", n + 1));
                continue;
            };
            let (k, v) = (k.trim(), v.trim());
            if !KNOWN_KEYS.contains(&k) {
                errs.push(format!("line {}: unknown key `{k}`", n + 1));
            } else if entries.insert(k.to_string(), v.to_string()).is_some() {
                errs.push(format!("line {}: key `{k}` given twice", n + 1));
            }
        }
        if errs.is_empty() {
            Ok(ConfigMap { entries })
        } else {
            Err(Error::Validation(errs))
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn set(&mut self, key: &str, value: impl Display) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    /// `key = value` lines in key order.
    pub fn to_text(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Prandtl {
    Finite(f64),
    Infinite,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub kind: ExperimentKind,
    pub prandtl: Prandtl,
    /// `pr` is a placeholder of 1 when the Prandtl number is infinite.
    pub params: NondimParams,
    pub grid: Grid,
    pub step: StepConfig,
    pub t_end: f64,
    /// End of the burn-in; averages start here.
    pub t_start: f64,
    pub seed: u64,
    pub members: usize,
    /// Steps between checkpoints; 0 disables periodic checkpoints.
    pub checkpoint_every: u64,
    /// Steps between recorded diagnostics rows.
    pub sample_every: u64,
    /// Amplitude of the `sin(pi x2) cos(2 pi x1 / L)` initial temperature.
    pub init_amplitude: f64,
    pub coupling: Option<CouplingConfig>,
    /// Size of the initial temperature offset of the nudged trajectory.
    pub couple_offset: f64,
    pub decay: DecayOptions,
    /// Fraction of members that must synchronize.
    pub sync_target: f64,
    /// `(ra, ra_tilde)` sweep points.
    pub sweep: Vec<(f64, f64)>,
    /// Amplitude of the frozen velocity in comparison runs.
    pub comparison_velocity: f64,
    pub xi_amplitude: f64,
    pub gamma: f64,
    pub k_list: Vec<f64>,
    pub eta_list: Vec<f64>,
}

struct Reader<'a> {
    map: &'a ConfigMap,
    errs: Vec<String>,
}

impl Reader<'_> {
    fn opt<T: FromStr>(&mut self, key: &str) -> Option<T>
    where
        T::Err: Display,
    {
        let raw = self.map.get(key)?;
        match raw.parse::<T>() {
            Ok(v) => Some(v),
            Err(e) => {
                self.errs.push(format!("`{key} = {raw}`: {e}"));
                None
            }
        }
    }

    fn or<T: FromStr>(&mut self, key: &str, default: T) -> T
    where
        T::Err: Display,
    {
        self.opt(key).unwrap_or(default)
    }

    fn required<T: FromStr>(&mut self, key: &str, fallback: T) -> T
    where
        T::Err: Display,
    {
        if self.map.get(key).is_none() {
            self.errs.push(format!("missing required key `{key}`"));
            return fallback;
        }
        self.opt(key).unwrap_or(fallback)
    }

    fn list(&mut self, key: &str, default: &[f64]) -> Vec<f64> {
        let Some(raw) = self.map.get(key) else {
            return default.to_vec();
        };
        let mut out = vec![];
        for part in raw.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part.parse::<f64>() {
                Ok(v) => out.push(v),
                Err(e) => self.errs.push(format!("`{key}` entry `{part}`: {e}")),
            }
        }
        out
    }
}

fn fmt_list(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl ExperimentSpec {
    pub fn parse(text: &str) -> Result<Self> {
        Self::from_map(&ConfigMap::parse(text)?)
    }

    pub fn from_map(map: &ConfigMap) -> Result<Self> {
        let mut r = Reader { map, errs: vec![] };
        let kind: ExperimentKind = r.required("kind", ExperimentKind::RunFinitePr);
        let prandtl = match map.get("pr") {
            Some("inf") => Prandtl::Infinite,
            Some(_) => Prandtl::Finite(r.opt("pr").unwrap_or(1.0)),
            None if kind == ExperimentKind::RunInfinitePr => Prandtl::Infinite,
            None if matches!(kind, ExperimentKind::RunFinitePr | ExperimentKind::Couple) => {
                r.errs.push("missing required key `pr`".into());
                Prandtl::Finite(1.0)
            }
            None if kind == ExperimentKind::VerifyComparison => Prandtl::Finite(1.0),
            None => Prandtl::Infinite,
        };
        match (kind, prandtl) {
            (ExperimentKind::RunInfinitePr, Prandtl::Finite(_)) => {
                r.errs.push("run_infinite_pr requires `pr = inf` or no `pr`".into())
            }
            (ExperimentKind::RunFinitePr, Prandtl::Infinite) => {
                r.errs.push("run_finite_pr requires a finite `pr`".into())
            }
            _ => {}
        }
        let sweeping = kind == ExperimentKind::NusseltSweep;
        let (ra, ra_tilde) = if sweeping {
            (r.or("ra", 1.0), r.or("ra_tilde", 1.0))
        } else {
            (r.required("ra", 1.0), r.required("ra_tilde", 1.0))
        };
        let aspect = r.or("aspect", 2.0);
        let params = NondimParams {
            pr: match prandtl {
                Prandtl::Finite(p) => p,
                Prandtl::Infinite => 1.0,
            },
            ra,
            ra_tilde,
            aspect,
            n1: r.or("n1", 0),
            n2: r.or("n2", 4),
            sigma_tilde_norm: r.or("sigma_tilde_norm", 0.0),
        };
        let grid = (r.or("nx", 32usize), r.or("nz", 17usize));
        let step = StepConfig {
            dt: r.required("dt", 1e-3),
            cfl_max: r.or("cfl_max", 0.5),
            dealias: r.or("dealias", true),
            noise: r.or("noise", true),
            scheme: Scheme {
                startup_steps: r.or("startup_steps", Scheme::default().startup_steps),
            },
        };
        let coupling_keys = ["lambda1", "lambda2", "n1_nudge", "n2_nudge", "r_budget", "coupling_mode", "auto_modes"];
        let coupling = if kind == ExperimentKind::Couple {
            let mode = match map.get("coupling_mode") {
                Some("case_i") => CouplingMode::CaseI,
                Some("case_ii") => CouplingMode::CaseII,
                Some(other) => {
                    r.errs.push(format!("coupling_mode `{other}` is not case_i or case_ii"));
                    CouplingMode::CaseII
                }
                None => {
                    r.errs.push("missing required key `coupling_mode`".into());
                    CouplingMode::CaseII
                }
            };
            Some(CouplingConfig {
                lambda1: r.or("lambda1", 0.0),
                lambda2: r.required("lambda2", 0.0),
                n1_nudge: r.or("n1_nudge", 0),
                n2_nudge: r.or("n2_nudge", 0),
                r_budget: r.required("r_budget", 1.0),
                mode,
                auto_modes: r.or("auto_modes", false),
            })
        } else {
            for k in coupling_keys {
                if map.get(k).is_some() {
                    r.errs.push(format!("`{k}` applies only to kind = couple"));
                }
            }
            None
        };
        let sweep_ra = r.list("sweep_ra", &[]);
        let sweep_rt = r.list("sweep_ra_tilde", &[]);
        if sweeping && (sweep_ra.is_empty() || sweep_ra.len() != sweep_rt.len()) {
            r.errs.push("nusselt_sweep needs `sweep_ra` and `sweep_ra_tilde` lists of equal nonzero length".into());
        }
        let spec = ExperimentSpec {
            kind,
            prandtl,
            params,
            grid: Grid {
                nx: grid.0,
                nz: grid.1,
                aspect,
            },
            step,
            t_end: r.required("t_end", 0.0),
            t_start: r.or("t_start", 20.0),
            seed: r.or("seed", 0),
            members: r.or("members", 1),
            checkpoint_every: r.or("checkpoint_every", 0),
            sample_every: r.or("sample_every", 1),
            init_amplitude: r.or("init_amplitude", 0.0),
            coupling,
            couple_offset: r.or("couple_offset", 1.0),
            decay: DecayOptions {
                window_fraction: r.or("window_fraction", 0.5),
                sync_eps: r.or("sync_eps", 1e-10),
                ..DecayOptions::default()
            },
            sync_target: r.or("sync_target", 0.5),
            sweep: sweep_ra.into_iter().zip(sweep_rt).collect(),
            comparison_velocity: r.or("comparison_velocity", 1.0),
            xi_amplitude: r.or("xi_amplitude", 1.0),
            gamma: r.or("gamma", 0.25),
            k_list: r.list("k_list", &[2.0, 4.0, 8.0]),
            eta_list: r.list("eta_list", &[0.0, 1e-3, 1e-2]),
        };
        let mut errs = r.errs;
        errs.extend(spec.violations());
        if errs.is_empty() {
            Ok(spec)
        } else {
            Err(Error::Validation(errs))
        }
    }

    /// Every violated constraint, as messages.
    pub fn violations(&self) -> Vec<String> {
        let mut errs = vec![];
        let mut push = |r: Result<()>| {
            if let Err(e) = r {
                match e {
                    Error::Validation(v) => errs.extend(v),
                    other => errs.push(other.to_string()),
                }
            }
        };
        push(Grid::new(self.grid.nx, self.grid.nz, self.grid.aspect).map(|_| ()));
        if self.kind == ExperimentKind::NusseltSweep {
            for &(ra, rt) in &self.sweep {
                push(NondimParams { ra, ra_tilde: rt, ..self.params }.validate());
            }
        } else {
            push(self.params.validate());
        }
        push(self.step.validate());
        if let Some(c) = &self.coupling {
            push(c.validate(&self.params));
        }
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            errs.push(format!("t_end = {} must be positive", self.t_end));
        }
        if !(self.t_start >= 0.0 && self.t_start.is_finite()) {
            errs.push(format!("t_start = {} must be finite and >= 0", self.t_start));
        }
        if self.members < 1 {
            errs.push("members must be at least 1".into());
        }
        if self.sample_every < 1 {
            errs.push("sample_every must be at least 1".into());
        }
        if !self.init_amplitude.is_finite() || !self.couple_offset.is_finite() {
            errs.push("init_amplitude and couple_offset must be finite".into());
        }
        if !(self.sync_target >= 0.0 && self.sync_target <= 1.0) {
            errs.push(format!("sync_target = {} must lie in [0, 1]", self.sync_target));
        }
        if !(self.decay.window_fraction > 0.0 && self.decay.window_fraction <= 1.0) {
            errs.push("window_fraction must lie in (0, 1]".into());
        }
        if !(self.decay.sync_eps > 0.0) {
            errs.push("sync_eps must be positive".into());
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            errs.push(format!("gamma = {} must be >= 0", self.gamma));
        }
        if self.kind == ExperimentKind::MartingaleTest && !self.step.noise {
            errs.push("martingale_test needs noise = true".into());
        }
        if self.kind == ExperimentKind::Couple && !self.step.noise {
            errs.push("couple needs noise = true".into());
        }
        if !self.kind.uses_prandtl() && self.prandtl == Prandtl::Infinite {
            errs.push("verify_comparison does not take `pr = inf`".into());
        }
        errs
    }

    /// Number of steps to reach `t_end`.
    pub fn total_steps(&self) -> u64 {
        (self.t_end / self.step.dt).round() as u64
    }

    /// Fully resolved configuration, defaults included.
    pub fn to_map(&self) -> ConfigMap {
        let mut m = ConfigMap::default();
        let p = &self.params;
        m.set("kind", self.kind.name());
        match self.prandtl {
            Prandtl::Finite(pr) => m.set("pr", pr),
            Prandtl::Infinite => m.set("pr", "inf"),
        }
        m.set("ra", p.ra);
        m.set("ra_tilde", p.ra_tilde);
        m.set("aspect", p.aspect);
        m.set("n1", p.n1);
        m.set("n2", p.n2);
        m.set("sigma_tilde_norm", p.sigma_tilde_norm);
        m.set("nx", self.grid.nx);
        m.set("nz", self.grid.nz);
        m.set("dt", self.step.dt);
        m.set("cfl_max", self.step.cfl_max);
        m.set("dealias", self.step.dealias);
        m.set("noise", self.step.noise);
        m.set("startup_steps", self.step.scheme.startup_steps);
        m.set("t_end", self.t_end);
        m.set("t_start", self.t_start);
        m.set("seed", self.seed);
        m.set("members", self.members);
        m.set("checkpoint_every", self.checkpoint_every);
        m.set("sample_every", self.sample_every);
        m.set("init_amplitude", self.init_amplitude);
        if let Some(c) = &self.coupling {
            m.set("lambda1", c.lambda1);
            m.set("lambda2", c.lambda2);
            m.set("n1_nudge", c.n1_nudge);
            m.set("n2_nudge", c.n2_nudge);
            m.set("r_budget", c.r_budget);
            m.set(
                "coupling_mode",
                match c.mode {
                    CouplingMode::CaseI => "case_i",
                    CouplingMode::CaseII => "case_ii",
                },
            );
            m.set("auto_modes", c.auto_modes);
        }
        m.set("couple_offset", self.couple_offset);
        m.set("sync_eps", self.decay.sync_eps);
        m.set("window_fraction", self.decay.window_fraction);
        m.set("sync_target", self.sync_target);
        if !self.sweep.is_empty() {
            let (a, b): (Vec<f64>, Vec<f64>) = self.sweep.iter().copied().unzip();
            m.set("sweep_ra", fmt_list(&a));
            m.set("sweep_ra_tilde", fmt_list(&b));
        }
        m.set("comparison_velocity", self.comparison_velocity);
        m.set("xi_amplitude", self.xi_amplitude);
        m.set("gamma", self.gamma);
        m.set("k_list", fmt_list(&self.k_list));
        m.set("eta_list", fmt_list(&self.eta_list));
        m
    }

    /// Canonical text of the resolved configuration.
    pub fn canonical(&self) -> String {
        self.to_map().to_text()
    }

    /// Hex SHA-256 of [`Self::canonical`].
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical().as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASIC: &str = "kind = run_finite_pr\npr = 7 # water-like\nra = 1e3\nra_tilde = 2\ndt = 1e-3\nt_end = 0.1\n";

    #[test]
    fn parses_defaults_and_round_trips() {
        let s = ExperimentSpec::parse(BASIC).unwrap();
        assert_eq!(s.prandtl, Prandtl::Finite(7.0));
        assert_eq!(s.grid.nx, 32);
        assert_eq!(s.total_steps(), 100);
        let again = ExperimentSpec::parse(&s.canonical()).unwrap();
        assert_eq!(again, s);
        assert_eq!(again.hash(), s.hash());
    }

    #[test]
    fn collects_every_violation() {
        let text = "kind = run_finite_pr\nbogus = 1\nra = -1\nra = 2\n";
        match ConfigMap::parse(text) {
            Err(Error::Validation(v)) => assert_eq!(v.len(), 2),
            other => panic!("{other:?}"),
        }
        match ExperimentSpec::parse("kind = run_finite_pr\nra = -1\nnx = 12\n") {
            Err(Error::Validation(v)) => assert!(v.len() >= 5, "{v:?}"),
            other => panic!("{other:?}"),
        }
        assert!(ExperimentSpec::parse("kind = run_infinite_pr\npr = 3\nra = 1\nra_tilde = 1\ndt = 1\nt_end = 1").is_err());
    }
}
