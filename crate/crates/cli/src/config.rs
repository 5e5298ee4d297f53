//! Run configuration: parsing, defaults and validation.

use std::f64::consts::TAU;
use std::path::Path;
use std::sync::Arc;

use fg_core::grid::{Chart, SpatialField};
use fg_core::recursion::Tolerances;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Expand,
    Obstruction,
    Verify,
    Roots,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChartSpec {
    pub resolution: Vec<usize>,
    /// Defaults to `2 pi` on every axis.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub period: Option<Vec<f64>>,
}

/// One Fourier mode `amplitude * cos(k . x + phase)` added to component
/// `(i, j)`, numbered from 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeSpec {
    pub component: [usize; 2],
    pub wavenumbers: Vec<i64>,
    pub amplitude: f64,
    #[serde(default)]
    pub phase: f64,
}

/// Seeded random symmetric perturbation of `g0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomSpec {
    pub modes: usize,
    pub amplitude: f64,
    #[serde(default = "default_max_wavenumber")]
    pub max_wavenumber: i64,
}

fn default_max_wavenumber() -> i64 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleSpec {
    pub s: f64,
    /// Stencil step as a fraction of `s`.
    pub step_fraction: f64,
    pub tol: f64,
}

impl Default for OracleSpec {
    fn default() -> Self {
        OracleSpec {
            s: 0.05,
            step_fraction: 0.002,
            tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    pub dir: String,
    pub dump_fields: bool,
    pub top_modes: usize,
}

impl Default for OutputSpec {
    fn default() -> Self {
        OutputSpec {
            dir: "fg-out".into(),
            dump_fields: true,
            top_modes: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub n: usize,
    #[serde(alias = "N")]
    pub order: usize,
    #[serde(default)]
    pub chart: Option<ChartSpec>,
    #[serde(default)]
    pub g0: Vec<ModeSpec>,
    #[serde(default)]
    pub gn: Vec<ModeSpec>,
    /// Replace `gn` by the nearest admissible free datum before expanding.
    #[serde(default)]
    pub complete_gn: bool,
    #[serde(default)]
    pub random_g0: Option<RandomSpec>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_mode")]
    pub mode: Mode,
    #[serde(default = "default_samples")]
    pub s_samples: Vec<f64>,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub oracle: OracleSpec,
    #[serde(default)]
    pub output: OutputSpec,
}

fn default_mode() -> Mode {
    Mode::Expand
}

pub fn default_samples() -> Vec<f64> {
    vec![1e-2, 5e-3, 2e-3, 1e-3]
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed config: {0}")]
    Syntax(String),
    #[error("invalid config:\n  {}", .0.join("\n  "))]
    Invalid(Vec<String>),
}

pub fn parse_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_config_str(&text)
}

/// Parses, fills defaults and validates.
pub fn parse_config_str(text: &str) -> Result<RunConfig, ConfigError> {
    let mut cfg: RunConfig =
        serde_json::from_str(text).map_err(|e| ConfigError::Syntax(e.to_string()))?;
    if cfg.chart.is_none() && cfg.n > 0 {
        cfg.chart = Some(ChartSpec {
            resolution: vec![1; cfg.n],
            period: None,
        });
    }
    cfg.validate()?;
    Ok(cfg)
}

impl RunConfig {
    /// Collects every violated constraint.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut v = Vec::new();
        let n = self.n;
        if n < 3 {
            v.push(format!("n = {n} must be at least 3"));
        }
        match &self.chart {
            None => v.push("chart is missing".into()),
            Some(c) => {
                if c.resolution.len() != n {
                    v.push(format!(
                        "chart.resolution has {} entries, expected n = {n}",
                        c.resolution.len()
                    ));
                }
                if c.resolution.contains(&0) {
                    v.push("chart.resolution entries must be positive".into());
                }
                if let Some(p) = &c.period {
                    if p.len() != n {
                        v.push(format!("chart.period has {} entries, expected n = {n}", p.len()));
                    }
                    if p.iter().any(|x| !(*x > 0.0 && x.is_finite())) {
                        v.push("chart.period entries must be positive".into());
                    }
                }
            }
        }
        for (name, modes) in [("g0", &self.g0), ("gn", &self.gn)] {
            for (k, m) in modes.iter().enumerate() {
                let [i, j] = m.component;
                if i < 1 || i > n || j < 1 || j > n {
                    v.push(format!("{name}[{k}]: component ({i},{j}) outside 1..={n}"));
                }
                if m.wavenumbers.len() != n {
                    v.push(format!(
                        "{name}[{k}]: {} wavenumbers, expected {n}",
                        m.wavenumbers.len()
                    ));
                }
                if !m.amplitude.is_finite() || !m.phase.is_finite() {
                    v.push(format!("{name}[{k}]: amplitude and phase must be finite"));
                }
            }
            for k in unmatched_modes(modes) {
                let [i, j] = modes[k].component;
                v.push(format!(
                    "{name}[{k}]: mode on component ({i},{j}) has no matching ({j},{i}) entry; tensor would not be symmetric"
                ));
            }
        }
        if let Some(r) = &self.random_g0 {
            if !(r.amplitude >= 0.0 && r.amplitude.is_finite()) || r.max_wavenumber < 0 {
                v.push("random_g0: amplitude and max_wavenumber must be nonnegative".into());
            }
        }
        match self.mode {
            Mode::Expand | Mode::Verify if self.order < n => {
                v.push(format!("order N = {} is below n = {n}", self.order));
            }
            Mode::Obstruction if n % 2 == 1 || n < 4 => {
                v.push(format!("obstruction mode needs even n >= 4, got n = {n}"));
            }
            _ => {}
        }
        if self.mode == Mode::Verify {
            let s = &self.s_samples;
            if s.len() < 4 {
                v.push(format!("s_samples needs at least 4 entries, got {}", s.len()));
            }
            if s.iter().any(|x| !(*x > 0.0 && *x < 1.0)) {
                v.push("s_samples must lie in (0, 1)".into());
            }
            if s.windows(2).any(|w| w[1] >= w[0]) {
                v.push("s_samples must be strictly decreasing".into());
            }
            let o = &self.oracle;
            if !(o.s > 0.0 && o.s < 1.0) || !(o.step_fraction > 0.0) || !(o.tol > 0.0) {
                v.push("oracle: s must lie in (0, 1), step_fraction and tol must be positive".into());
            }
        }
        let t = &self.tolerances;
        if [t.compat, t.parity, t.zero].iter().any(|x| !(*x > 0.0 && x.is_finite())) {
            v.push("tolerances must be positive and finite".into());
        }
        if v.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(v))
        }
    }

    /// SHA-256 of the canonical JSON form.
    /// Digest of every setting that affects the computed results. The output
    /// directory is excluded.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output.dir = String::new();
        let bytes = serde_json::to_vec(&c).expect("config serializes");
        format!("{:x}", Sha256::digest(bytes))
    }

    pub fn build_chart(&self) -> Result<Arc<Chart>, fg_core::FgError> {
        let spec = self.chart.clone().unwrap_or(ChartSpec {
            resolution: vec![1; self.n],
            period: None,
        });
        let period = spec.period.unwrap_or_else(|| vec![TAU; self.n]);
        Chart::new(self.n, spec.resolution, period)
    }

    /// `delta` plus the configured and random modes.
    pub fn build_g0(&self, chart: &Arc<Chart>) -> SpatialField {
        let mut modes = self.g0.clone();
        if let Some(r) = &self.random_g0 {
            modes.extend(random_modes(self.n, r, self.seed));
        }
        SpatialField::identity(chart).lin_comb(1.0, &modes_field(chart, &modes), 1.0)
    }

    pub fn build_gn(&self, chart: &Arc<Chart>) -> SpatialField {
        modes_field(chart, &self.gn)
    }
}

/// Indices of off-diagonal entries without an identical mirrored entry.
fn unmatched_modes(modes: &[ModeSpec]) -> Vec<usize> {
    let mut used = vec![false; modes.len()];
    let mut out = Vec::new();
    for a in 0..modes.len() {
        let [i, j] = modes[a].component;
        if i == j || used[a] {
            continue;
        }
        let mirror = (0..modes.len()).find(|&b| {
            !used[b]
                && b != a
                && modes[b].component == [j, i]
                && modes[b].wavenumbers == modes[a].wavenumbers
                && modes[b].amplitude == modes[a].amplitude
                && modes[b].phase == modes[a].phase
        });
        match mirror {
            Some(b) => {
                used[a] = true;
                used[b] = true;
            }
            None => out.push(a),
        }
    }
    out
}

fn modes_field(chart: &Arc<Chart>, modes: &[ModeSpec]) -> SpatialField {
    let period = chart.period().to_vec();
    SpatialField::from_fn(chart, 2, |idx, x| {
        modes
            .iter()
            .filter(|m| m.component == [idx[0] + 1, idx[1] + 1])
            .map(|m| {
                let phase: f64 = m
                    .wavenumbers
                    .iter()
                    .zip(x)
                    .zip(&period)
                    .map(|((k, xa), p)| *k as f64 * TAU / p * xa)
                    .sum();
                m.amplitude * (phase + m.phase).cos()
            })
            .sum()
    })
    .symmetrize()
}

/// Symmetric pairs of modes drawn from a seeded generator.
pub fn random_modes(n: usize, spec: &RandomSpec, seed: u64) -> Vec<ModeSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for _ in 0..spec.modes {
        let i = rng.gen_range(1..=n);
        let j = rng.gen_range(1..=n);
        let k: Vec<i64> = (0..n)
            .map(|_| rng.gen_range(-spec.max_wavenumber..=spec.max_wavenumber))
            .collect();
        let amplitude = rng.gen_range(-spec.amplitude..=spec.amplitude);
        let phase = rng.gen_range(0.0..TAU);
        let m = ModeSpec {
            component: [i, j],
            wavenumbers: k,
            amplitude,
            phase,
        };
        if i != j {
            out.push(ModeSpec {
                component: [j, i],
                ..m.clone()
            });
        }
        out.push(m);
    }
    out
}
