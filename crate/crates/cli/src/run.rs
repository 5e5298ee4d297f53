//! Drives the engine for one configuration and collects the report.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use fg_core::frame::frame_ricci;
use fg_core::grid::{top_fourier_modes, trace, FourierMode, SpatialField, SpatialMetric};
use fg_core::indicial::{gauge_propagation_roots, indicial_roots, ricci_factorization, RicciFactorization};
use fg_core::recursion::{
    complete_free_datum, expand, obstruction_tensor, BoundaryData, ExpansionResult, OrderDiagnostics,
};
use fg_core::verify::{
    compare_tensors, fd_oracle_ricci, frame_to_coordinates, residual_report, write_decay_csv, Comparison,
    DecayReport, Stencil,
};
use fg_core::FgError;
use serde::Serialize;

use crate::config::{Mode, RunConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    ConfigError,
    SolvabilityViolation,
    VerificationFailure,
}

impl Status {
    pub fn exit_code(self) -> u8 {
        match self {
            Status::Ok => 0,
            Status::ConfigError => 2,
            Status::SolvabilityViolation => 3,
            Status::VerificationFailure => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComponentModes {
    pub component: [usize; 2],
    pub modes: Vec<FourierMode>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoefficientSummary {
    pub order: usize,
    pub log_power: usize,
    pub sup_norm: f64,
    pub trace_defect: f64,
    pub top_modes: Vec<ComponentModes>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ObstructionSummary {
    pub norm: f64,
    pub top_modes: Vec<ComponentModes>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RootTable {
    pub gauged: Vec<String>,
    pub ricci_factorization: RicciFactorization,
    pub gauge_propagation: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub order: Option<usize>,
    pub defect: Option<f64>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub config_hash: String,
    pub mode: Mode,
    pub n: usize,
    pub order: usize,
    pub free_datum_completed: bool,
    pub coefficients: Vec<CoefficientSummary>,
    pub obstruction: Option<ObstructionSummary>,
    pub decay: Option<DecayReport>,
    pub slope_threshold: Option<f64>,
    pub oracle: Option<Comparison>,
    pub roots: Option<RootTable>,
    pub diagnostics: Vec<OrderDiagnostics>,
    pub violation: Option<Violation>,
    pub status: Status,
    pub exit_code: u8,
}

/// A field to be written as a binary dump.
#[derive(Debug, Clone)]
pub struct FieldDump {
    pub name: String,
    pub order: Option<usize>,
    pub log_power: Option<usize>,
    pub field: SpatialField,
}

#[derive(Debug, Clone)]
pub struct Execution {
    pub report: RunReport,
    pub dumps: Vec<FieldDump>,
    pub decay_csv: Option<String>,
}

fn summarize_modes(f: &SpatialField, k: usize) -> Vec<ComponentModes> {
    let n = f.dim();
    let mut out = Vec::new();
    for i in 0..n {
        for j in i..n {
            out.push(ComponentModes {
                component: [i + 1, j + 1],
                modes: top_fourier_modes(f.component(&[i, j]), f.chart(), k),
            });
        }
    }
    out
}

fn violation_from(e: &FgError) -> Violation {
    let (order, defect) = e.violation().unzip();
    Violation {
        order,
        defect,
        message: e.to_string(),
    }
}

fn status_of(e: &FgError) -> Status {
    match e {
        FgError::Solvability { .. } | FgError::Parity { .. } => Status::SolvabilityViolation,
        FgError::DegenerateFit(_) | FgError::StencilOutOfRange { .. } => Status::VerificationFailure,
        _ => Status::ConfigError,
    }
}

fn coefficient_summaries(r: &ExpansionResult, k: usize) -> Vec<CoefficientSummary> {
    r.coeffs
        .iter()
        .map(|(&(order, log_power), h)| CoefficientSummary {
            order,
            log_power,
            sup_norm: h.sup_norm(),
            trace_defect: trace(&r.g0, h).map_or(f64::NAN, |t| t.sup_norm()),
            top_modes: summarize_modes(h, k),
        })
        .collect()
}

/// Runs the configured mode. Engine failures are reported in the returned
/// report rather than as errors.
pub fn execute(cfg: &RunConfig) -> Execution {
    let mut report = RunReport {
        config_hash: cfg.hash(),
        mode: cfg.mode,
        n: cfg.n,
        order: cfg.order,
        free_datum_completed: false,
        coefficients: Vec::new(),
        obstruction: None,
        decay: None,
        slope_threshold: None,
        oracle: None,
        roots: None,
        diagnostics: Vec::new(),
        violation: None,
        status: Status::Ok,
        exit_code: 0,
    };
    let mut dumps = Vec::new();
    let mut decay_csv = None;
    if let Err(e) = run_mode(cfg, &mut report, &mut dumps, &mut decay_csv) {
        report.status = status_of(&e);
        report.violation = Some(violation_from(&e));
    }
    report.exit_code = report.status.exit_code();
    Execution {
        report,
        dumps,
        decay_csv,
    }
}

fn run_mode(
    cfg: &RunConfig,
    report: &mut RunReport,
    dumps: &mut Vec<FieldDump>,
    decay_csv: &mut Option<String>,
) -> Result<(), FgError> {
    let k = cfg.output.top_modes;
    if cfg.mode == Mode::Roots {
        let show = |v: Vec<fg_core::poly::Q>| v.into_iter().map(|q| q.to_string()).collect();
        report.roots = Some(RootTable {
            gauged: show(indicial_roots(cfg.n)),
            ricci_factorization: ricci_factorization(cfg.n),
            gauge_propagation: show(gauge_propagation_roots(cfg.n)),
        });
        return Ok(());
    }
    let chart = cfg.build_chart()?;
    let g0 = SpatialMetric::new(cfg.build_g0(&chart))?;
    if cfg.mode == Mode::Obstruction {
        let o = obstruction_tensor(&g0, cfg.n)?;
        report.obstruction = Some(ObstructionSummary {
            norm: o.sup_norm(),
            top_modes: summarize_modes(&o, k),
        });
        dumps.push(FieldDump {
            name: "obstruction".into(),
            order: Some(cfg.n),
            log_power: None,
            field: o,
        });
        return Ok(());
    }

    let mut gn = cfg.build_gn(&chart);
    if cfg.complete_gn {
        gn = complete_free_datum(&g0, &gn, cfg.tolerances.zero)?;
        report.free_datum_completed = true;
    }
    let mut data = BoundaryData::new(g0, gn, cfg.order);
    data.tol = cfg.tolerances;
    let r = expand(&data)?;
    report.coefficients = coefficient_summaries(&r, k);
    report.diagnostics = r.diagnostics.clone();
    if let Some(o) = &r.obstruction {
        report.obstruction = Some(ObstructionSummary {
            norm: o.sup_norm(),
            top_modes: summarize_modes(o, k),
        });
    }
    for (&(i, m), h) in &r.coeffs {
        dumps.push(FieldDump {
            name: format!("coeff_i{i}_m{m}"),
            order: Some(i),
            log_power: Some(m),
            field: h.clone(),
        });
    }

    if cfg.mode == Mode::Verify {
        let decay = residual_report(&r, &cfg.s_samples)?;
        let mut buf = Vec::new();
        write_decay_csv(&decay, &mut buf).expect("writing to memory");
        *decay_csv = Some(String::from_utf8(buf).expect("ascii csv"));
        let threshold = cfg.order as f64 + 0.5;
        let slope = decay.fitted_slope;
        let slope_ok = decay.exact_zero || slope >= threshold;
        report.slope_threshold = Some(threshold);
        report.decay = Some(decay);

        let o = &cfg.oracle;
        let oracle = fd_oracle_ricci(&r.metric, o.s, Stencil::relative(o.s, o.step_fraction))?;
        let engine = frame_to_coordinates(&frame_ricci(&r.metric)?, o.s)?;
        let cmp = compare_tensors(&engine, &oracle, o.tol)?;
        report.oracle = Some(cmp);
        let failure = if !slope_ok {
            Some((slope, format!("residual decay slope {slope} below {threshold}")))
        } else if !cmp.pass {
            Some((cmp.rel_diff, format!("oracle relative difference {:e} exceeds {:e}", cmp.rel_diff, o.tol)))
        } else {
            None
        };
        if let Some((defect, message)) = failure {
            report.status = Status::VerificationFailure;
            report.violation = Some(Violation {
                order: None,
                defect: Some(defect),
                message,
            });
        }
    }
    Ok(())
}

/// Binary dump: little-endian `u64` header length, a JSON header, then the
/// component-major, row-major grid values as little-endian `f64`.
pub fn write_dump<W: Write>(d: &FieldDump, mut w: W) -> io::Result<()> {
    let chart = d.field.chart();
    let header = serde_json::json!({
        "name": d.name,
        "order": d.order,
        "log_power": d.log_power,
        "rank": d.field.rank(),
        "dim": chart.dim(),
        "resolution": chart.resolution(),
        "period": chart.period(),
        "components": d.field.num_components(),
        "layout": "component-major, row-major points, little-endian f64",
    });
    let bytes = serde_json::to_vec(&header)?;
    w.write_all(&(bytes.len() as u64).to_le_bytes())?;
    w.write_all(&bytes)?;
    for v in d.field.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Writes `report.json`, the dumps and `decay.csv` under `dir`.
pub fn write_outputs(exec: &Execution, dir: &Path, dump_fields: bool) -> io::Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let report = dir.join("report.json");
    let mut text = serde_json::to_string_pretty(&exec.report)?;
    text.push('\n');
    fs::write(&report, text)?;
    written.push(report);
    if dump_fields {
        for d in &exec.dumps {
            let path = dir.join(format!("{}.bin", d.name));
            let mut f = io::BufWriter::new(fs::File::create(&path)?);
            write_dump(d, &mut f)?;
            f.flush()?;
            written.push(path);
        }
    }
    if let Some(csv) = &exec.decay_csv {
        let path = dir.join("decay.csv");
        fs::write(&path, csv)?;
        written.push(path);
    }
    Ok(written)
}
