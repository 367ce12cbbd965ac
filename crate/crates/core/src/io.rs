//! JSON problem/solution files and CSV tables.
//!
//! Matrices are stored as flat row-major arrays. Gain indices (forced zeros)
//! are 0-based `(row, col)` pairs into the `m×n` gain.

use std::fs::File;
use std::io::{BufReader, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{Feasibility, Solution, Status, Trajectory};
use crate::batch::SweepRow;
use crate::error::SolverError;
use crate::l0::{L0Options, StageRow};
use crate::model::PlantData;
use crate::outer::{OuterOptions, Relaxation, TraceRow};
use crate::penalties::{PenaltyConfig, PenaltyKind, PqParams};

#[derive(Debug, Error)]
pub enum IoError {
    /// An input file could not be read.
    #[error("reading {path}")]
    Read {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}, column {column}: {msg}")]
    Parse { line: usize, column: usize, msg: String },
    #[error("unknown key: {0}")]
    UnknownKey(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid value: {0}")]
    Invalid(String),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

fn io_err(path: &Path, source: std::io::Error) -> IoError {
    IoError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn read_err(path: &Path, source: std::io::Error) -> IoError {
    IoError::Read {
        path: path.display().to_string(),
        source,
    }
}

fn classify(e: serde_json::Error) -> IoError {
    let msg = e.to_string();
    if let Some(rest) = msg.strip_prefix("unknown field `") {
        let key = rest.split('`').next().unwrap_or_default().to_string();
        return IoError::UnknownKey(key);
    }
    IoError::Parse {
        line: e.line(),
        column: e.column(),
        msg,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VertexFile {
    #[serde(rename = "A")]
    pub a: Vec<f64>,
    #[serde(rename = "B2")]
    pub b2: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PqFile {
    pub a1: f64,
    pub a2: f64,
    pub b1: f64,
    pub b2: f64,
}

/// Optional solver settings; unset fields take the library defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_outer: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inner_max_sweeps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_decay: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l0_pass_cap: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l0_max_outer: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    pub n: usize,
    pub m: usize,
    pub l: usize,
    pub q: usize,
    #[serde(rename = "A")]
    pub a: Vec<f64>,
    #[serde(rename = "B2")]
    pub b2: Vec<f64>,
    #[serde(rename = "B1")]
    pub b1: Vec<f64>,
    #[serde(rename = "C")]
    pub c: Vec<f64>,
    #[serde(rename = "D")]
    pub d: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vertices: Option<Vec<VertexFile>>,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_relaxation")]
    pub relaxation: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pq_params: Option<PqFile>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub forced_zeros: Vec<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solver: Option<SolverFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

fn default_gamma() -> f64 {
    1.0
}

fn default_relaxation() -> String {
    "l1".into()
}

fn matrix(name: &str, data: &[f64], rows: usize, cols: usize) -> Result<DMatrix<f64>, IoError> {
    if data.len() != rows * cols {
        return Err(IoError::DimensionMismatch(format!(
            "{name} has {} entries, expected {rows}×{cols} = {}",
            data.len(),
            rows * cols
        )));
    }
    Ok(DMatrix::from_row_slice(rows, cols, data))
}

pub fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

impl ProblemFile {
    pub fn from_plant(plant: &PlantData, gamma: f64, relaxation: Relaxation) -> Self {
        let vertices = if plant.vertices.len() == 1 && plant.vertices[0] == (plant.a.clone(), plant.b2.clone()) {
            None
        } else {
            Some(
                plant
                    .vertices
                    .iter()
                    .map(|(a, b)| VertexFile {
                        a: row_major(a),
                        b2: row_major(b),
                    })
                    .collect(),
            )
        };
        ProblemFile {
            n: plant.n(),
            m: plant.m(),
            l: plant.b1.ncols(),
            q: plant.c.nrows(),
            a: row_major(&plant.a),
            b2: row_major(&plant.b2),
            b1: row_major(&plant.b1),
            c: row_major(&plant.c),
            d: row_major(&plant.d),
            vertices,
            gamma,
            relaxation: relaxation.to_string(),
            weights: None,
            pq_params: None,
            forced_zeros: Vec::new(),
            solver: None,
            seed: None,
        }
    }

    /// Dimension and value checks beyond what the JSON schema enforces.
    pub fn validate(&self) -> Result<(), IoError> {
        self.plant()?;
        self.relaxation()?;
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(IoError::Invalid(format!(
                "gamma must be finite and >= 0, got {}",
                self.gamma
            )));
        }
        if let Some(w) = &self.weights {
            matrix("weights", w, self.m, self.n)?;
        }
        for &[i, j] in &self.forced_zeros {
            if i >= self.m || j >= self.n {
                return Err(IoError::DimensionMismatch(format!(
                    "forced zero ({i}, {j}) outside the {}×{} gain",
                    self.m, self.n
                )));
            }
        }
        self.penalty(PenaltyKind::WeightedL1, self.gamma)?.validate()?;
        if self.relaxation()? == Relaxation::Pq {
            self.penalty(PenaltyKind::PiecewiseQuadratic, self.gamma)?.validate()?;
        }
        Ok(())
    }

    pub fn plant(&self) -> Result<PlantData, IoError> {
        let (n, m, l, q) = (self.n, self.m, self.l, self.q);
        if n == 0 || m == 0 || l == 0 || q == 0 {
            return Err(IoError::DimensionMismatch("n, m, l, q must be positive".into()));
        }
        let a = matrix("A", &self.a, n, n)?;
        let b2 = matrix("B2", &self.b2, n, m)?;
        let mut plant = PlantData::new(
            a,
            b2,
            matrix("B1", &self.b1, n, l)?,
            matrix("C", &self.c, q, n)?,
            matrix("D", &self.d, q, m)?,
        );
        if let Some(vs) = &self.vertices {
            let vertices = vs
                .iter()
                .enumerate()
                .map(|(i, v)| {
                    Ok((
                        matrix(&format!("vertices[{i}].A"), &v.a, n, n)?,
                        matrix(&format!("vertices[{i}].B2"), &v.b2, n, m)?,
                    ))
                })
                .collect::<Result<Vec<_>, IoError>>()?;
            plant = plant.with_vertices(vertices);
        }
        Ok(plant)
    }

    pub fn relaxation(&self) -> Result<Relaxation, IoError> {
        self.relaxation
            .parse()
            .map_err(|_| IoError::Invalid(format!("relaxation must be l1, pq or l0, got {:?}", self.relaxation)))
    }

    pub fn forced_zeros(&self) -> Vec<(usize, usize)> {
        self.forced_zeros.iter().map(|&[i, j]| (i, j)).collect()
    }

    pub fn penalty(&self, kind: PenaltyKind, gamma: f64) -> Result<PenaltyConfig, IoError> {
        let mut cfg = PenaltyConfig::new(kind, gamma, self.m, self.n);
        if let Some(w) = &self.weights {
            cfg = cfg.with_weights(matrix("weights", w, self.m, self.n)?);
        }
        if let Some(pq) = self.pq_params {
            cfg = cfg.with_pq(PqParams {
                a1: pq.a1,
                a2: pq.a2,
                b1: pq.b1,
                b2: pq.b2,
            });
        }
        Ok(cfg)
    }

    pub fn outer_options(&self) -> OuterOptions {
        let mut o = OuterOptions::default();
        if let Some(s) = &self.solver {
            o.beta0 = s.beta0.unwrap_or(o.beta0);
            o.kappa0 = s.kappa0.unwrap_or(o.kappa0);
            o.eps1 = s.eps1.unwrap_or(o.eps1);
            o.eps2 = s.eps2.unwrap_or(o.eps2);
            o.max_outer = s.max_outer.unwrap_or(o.max_outer);
            o.inner_max_sweeps = s.inner_max_sweeps.unwrap_or(o.inner_max_sweeps);
        }
        o
    }

    pub fn l0_options(&self) -> L0Options {
        let mut o = L0Options::default();
        let outer = self.outer_options();
        o.sub = OuterOptions {
            max_outer: o.sub.max_outer,
            ..outer
        };
        if let Some(s) = &self.solver {
            o.lambda = s.lambda.unwrap_or(o.lambda);
            o.sigma0 = s.sigma0.unwrap_or(o.sigma0);
            o.decay = s.sigma_decay.unwrap_or(o.decay);
            o.sigma_min = s.sigma_min.unwrap_or(o.sigma_min);
            o.pass_cap = s.l0_pass_cap.unwrap_or(o.pass_cap);
            o.sub.max_outer = s.l0_max_outer.unwrap_or(o.sub.max_outer);
        }
        o
    }
}

pub fn parse_problem_str(text: &str) -> Result<ProblemFile, IoError> {
    let pf: ProblemFile = serde_json::from_str(text).map_err(classify)?;
    pf.validate()?;
    Ok(pf)
}

pub fn parse_problem(path: &Path) -> Result<ProblemFile, IoError> {
    let text = std::fs::read_to_string(path).map_err(|e| read_err(path, e))?;
    parse_problem_str(&text)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeasibilityFile {
    pub min_eig_w: f64,
    pub min_eig_psi: Vec<f64>,
    pub offdiag_w1: f64,
    pub gain_mismatch: f64,
}

impl From<&Feasibility> for FeasibilityFile {
    fn from(f: &Feasibility) -> Self {
        FeasibilityFile {
            min_eig_w: f.min_eig_w,
            min_eig_psi: f.min_eig_psi.clone(),
            offdiag_w1: f.offdiag_w1,
            gain_mismatch: f.gain_mismatch,
        }
    }
}

/// Everything needed to re-certify a solution without re-solving.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolutionFile {
    pub problem: ProblemFile,
    pub relaxation: String,
    pub gamma: f64,
    pub status: String,
    pub iterations: usize,
    pub inner_sweeps: usize,
    pub primal_res: f64,
    pub dual_res: f64,
    pub eps_pri: f64,
    pub eps_dua: f64,
    #[serde(rename = "J_upper")]
    pub j_upper: f64,
    /// `null` for an unstable vertex.
    #[serde(rename = "J_vertex")]
    pub j_vertex: Vec<Option<f64>>,
    pub margins: Vec<f64>,
    pub n_zeros: usize,
    pub penalty: f64,
    /// Row-major `m×n`, 1 where `K` is nonzero.
    pub pattern: Vec<u8>,
    #[serde(rename = "K")]
    pub k: Vec<f64>,
    #[serde(rename = "P")]
    pub p: Vec<f64>,
    #[serde(rename = "W")]
    pub w: Vec<f64>,
    pub feasibility: FeasibilityFile,
}

impl SolutionFile {
    pub fn new(problem: ProblemFile, relaxation: Relaxation, sol: &Solution) -> Self {
        SolutionFile {
            problem,
            relaxation: relaxation.to_string(),
            gamma: sol.gamma,
            status: sol.status.as_str().into(),
            iterations: sol.iterations,
            inner_sweeps: sol.inner_sweeps,
            primal_res: sol.primal_res,
            dual_res: sol.dual_res,
            eps_pri: sol.eps_pri,
            eps_dua: sol.eps_dua,
            j_upper: sol.j_upper,
            j_vertex: sol.j_vertex.iter().map(|j| j.is_finite().then_some(*j)).collect(),
            margins: sol.margins.clone(),
            n_zeros: sol.n_zeros,
            penalty: sol.penalty,
            pattern: sol.pattern.transpose().iter().map(|b| *b as u8).collect(),
            k: row_major(&sol.k),
            p: row_major(&sol.p),
            w: row_major(&sol.w),
            feasibility: (&sol.feasibility).into(),
        }
    }

    pub fn status(&self) -> Result<Status, IoError> {
        self.status.parse().map_err(IoError::Solver)
    }

    pub fn gain(&self) -> Result<DMatrix<f64>, IoError> {
        matrix("K", &self.k, self.problem.m, self.problem.n)
    }

    pub fn p_matrix(&self) -> Result<DMatrix<f64>, IoError> {
        matrix("P", &self.p, self.problem.m, self.problem.n)
    }

    pub fn w_matrix(&self) -> Result<DMatrix<f64>, IoError> {
        let p = self.problem.n + self.problem.m;
        matrix("W", &self.w, p, p)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("solution serializes");
        s.push('\n');
        s
    }
}

pub fn read_solution(path: &Path) -> Result<SolutionFile, IoError> {
    let f = File::open(path).map_err(|e| read_err(path, e))?;
    let sf: SolutionFile = serde_json::from_reader(BufReader::new(f)).map_err(classify)?;
    sf.problem.validate()?;
    Ok(sf)
}

/// Write through a temporary sibling and rename, so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = File::create(&tmp).map_err(|e| io_err(&tmp, e))?;
        f.write_all(bytes).map_err(|e| io_err(&tmp, e))?;
        f.sync_all().map_err(|e| io_err(&tmp, e))?;
    }
    std::fs::rename(&tmp, path).map_err(|e| io_err(path, e))
}

fn csv_bytes(header: &[String], rows: impl Iterator<Item = Vec<String>>) -> Result<Vec<u8>, IoError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.into_inner().map_err(|e| IoError::Invalid(e.to_string()))
}

pub const TRACE_HEADER: [&str; 8] = [
    "iter",
    "theta",
    "alpha",
    "primal_res",
    "dual_res",
    "objective",
    "inner_sweeps",
    "wall_ms",
];

pub fn trace_csv(trace: &[TraceRow]) -> Result<Vec<u8>, IoError> {
    let header: Vec<String> = TRACE_HEADER.iter().map(|s| s.to_string()).collect();
    csv_bytes(
        &header,
        trace.iter().map(|r| {
            vec![
                r.iter.to_string(),
                r.theta.to_string(),
                r.alpha.to_string(),
                r.primal_res.to_string(),
                r.dual_res.to_string(),
                r.objective.to_string(),
                r.inner_sweeps.to_string(),
                format!("{:.3}", r.wall_ms),
            ]
        }),
    )
}

pub const SWEEP_HEADER: [&str; 6] = ["gamma", "J_upper", "J_vertex_max", "n_zeros", "iters", "wall_ms"];

pub fn sweep_csv(rows: &[SweepRow]) -> Result<Vec<u8>, IoError> {
    let header: Vec<String> = SWEEP_HEADER.iter().map(|s| s.to_string()).collect();
    csv_bytes(
        &header,
        rows.iter().map(|r| {
            vec![
                r.gamma.to_string(),
                r.j_upper.to_string(),
                r.j_vertex_max.to_string(),
                r.n_zeros.to_string(),
                r.iters.to_string(),
                format!("{:.3}", r.wall_ms),
            ]
        }),
    )
}

pub fn stage_csv(rows: &[StageRow]) -> Result<Vec<u8>, IoError> {
    let header: Vec<String> = ["sigma", "pass", "h_sigma", "nnz", "accepted"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    csv_bytes(
        &header,
        rows.iter().map(|r| {
            vec![
                r.sigma.to_string(),
                r.pass.to_string(),
                r.h_sigma.to_string(),
                r.nnz.to_string(),
                r.accepted.to_string(),
            ]
        }),
    )
}

pub fn trajectory_csv(traj: &Trajectory) -> Result<Vec<u8>, IoError> {
    let n = traj.states.first().and_then(|c| c.first()).map_or(0, |x| x.len());
    let mut header = vec!["channel".to_string(), "t".to_string()];
    header.extend((1..=n).map(|i| format!("x{i}")));
    let rows = traj.states.iter().enumerate().flat_map(|(ch, xs)| {
        xs.iter().zip(&traj.times).map(move |(x, t)| {
            let mut r = vec![ch.to_string(), t.to_string()];
            r.extend(x.iter().map(|v| v.to_string()));
            r
        })
    });
    csv_bytes(&header, rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fixtures;

    fn ex1_json() -> String {
        serde_json::to_string(&ProblemFile::from_plant(&fixtures::example1(), 10.0, Relaxation::L1)).unwrap()
    }

    #[test]
    fn roundtrip_example1() {
        let pf = parse_problem_str(&ex1_json()).unwrap();
        assert_eq!(pf.plant().unwrap(), fixtures::example1());
        assert_eq!(pf.relaxation().unwrap(), Relaxation::L1);
    }

    #[test]
    fn missing_d_is_parse_error() {
        let mut v: serde_json::Value = serde_json::from_str(&ex1_json()).unwrap();
        v.as_object_mut().unwrap().remove("D");
        let err = parse_problem_str(&v.to_string()).unwrap_err();
        assert!(matches!(err, IoError::Parse { .. }), "{err}");
    }

    #[test]
    fn wrong_length_is_dimension_error() {
        let mut v: serde_json::Value = serde_json::from_str(&ex1_json()).unwrap();
        v["A"].as_array_mut().unwrap().pop();
        assert!(matches!(
            parse_problem_str(&v.to_string()),
            Err(IoError::DimensionMismatch(_))
        ));
    }

    #[test]
    fn unknown_key_rejected() {
        let mut v: serde_json::Value = serde_json::from_str(&ex1_json()).unwrap();
        v["colour"] = serde_json::json!(1);
        match parse_problem_str(&v.to_string()) {
            Err(IoError::UnknownKey(k)) => assert_eq!(k, "colour"),
            other => panic!("{other:?}"),
        }
        let mut v: serde_json::Value = serde_json::from_str(&ex1_json()).unwrap();
        v["solver"] = serde_json::json!({"eps3": 1.0});
        assert!(matches!(parse_problem_str(&v.to_string()), Err(IoError::UnknownKey(_))));
    }

    #[test]
    fn bad_forced_zero() {
        let mut v: serde_json::Value = serde_json::from_str(&ex1_json()).unwrap();
        v["forced_zeros"] = serde_json::json!([[2, 0]]);
        assert!(matches!(
            parse_problem_str(&v.to_string()),
            Err(IoError::DimensionMismatch(_))
        ));
    }

    #[test]
    fn trace_header() {
        let bytes = trace_csv(&[]).unwrap();
        assert_eq!(
            String::from_utf8(bytes).unwrap().trim(),
            "iter,theta,alpha,primal_res,dual_res,objective,inner_sweeps,wall_ms"
        );
    }
}
