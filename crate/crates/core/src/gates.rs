//! The acceptance policy applied to executor reports.
//!
//! A candidate is accepted only when execution succeeded, the geometry
//! gates hold, both exports succeeded and (optionally) the exported STL
//! passes the independent mesh-level recheck. Every violated gate is
//! reported, in a fixed order, so the model sees complete feedback.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mesh::{mesh_connected_components, mesh_is_watertight, TriMesh};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExecStatus {
    Ok,
    Error,
    Timeout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    pub num_brep_faces: u32,
    pub num_solids: u32,
    pub volume: f64,
    /// `[xmin, ymin, zmin, xmax, ymax, zmax]`
    pub bbox: [f64; 6],
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExportStatus {
    Ok,
    Error(String),
}

impl ExportStatus {
    pub fn is_ok(&self) -> bool {
        matches!(self, ExportStatus::Ok)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exports {
    pub stl: ExportStatus,
    pub step: ExportStatus,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactPaths {
    pub stl: String,
    pub step: String,
}

/// Structured verdict returned by the executor for one code submission.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub exec_status: ExecStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_message: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub traceback: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topo: Option<Topology>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exports: Option<Exports>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub artifact_paths: Option<ArtifactPaths>,
}

#[derive(Debug, Error, PartialEq)]
pub enum ReportError {
    #[error("report has exec_status {0:?} but carries topology or export results")]
    ResultsWithoutExecution(ExecStatus),
    #[error("reported volume is not finite")]
    NonFiniteVolume,
}

impl ValidationReport {
    pub fn failed(status: ExecStatus, message: impl Into<String>, traceback: Option<String>) -> Self {
        Self { exec_status: status, error_message: Some(message.into()), traceback, topo: None, exports: None, artifact_paths: None }
    }

    pub fn check_invariants(&self) -> Result<(), ReportError> {
        if self.exec_status != ExecStatus::Ok && (self.topo.is_some() || self.exports.is_some()) {
            return Err(ReportError::ResultsWithoutExecution(self.exec_status));
        }
        if self.topo.as_ref().is_some_and(|t| !t.volume.is_finite()) {
            return Err(ReportError::NonFiniteVolume);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeometryGates {
    pub min_faces: u32,
    pub require_single_solid: bool,
    pub min_volume: f64,
    pub require_watertight_stl: bool,
}

impl Default for GeometryGates {
    fn default() -> Self {
        Self { min_faces: 7, require_single_solid: true, min_volume: 0.01, require_watertight_stl: true }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum GatesError {
    #[error("min_faces must be at least 1")]
    MinFaces,
    #[error("min_volume must be positive")]
    MinVolume,
}

impl GeometryGates {
    pub fn validate(&self) -> Result<(), GatesError> {
        if self.min_faces < 1 {
            return Err(GatesError::MinFaces);
        }
        if !(self.min_volume > 0.0) {
            return Err(GatesError::MinVolume);
        }
        Ok(())
    }
}

/// Violated gate, in evaluation order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateReason {
    ExecError,
    ExecTimeout,
    MissingTopology,
    SingleSolid,
    MinFaces,
    MinVolume,
    MissingExports,
    StlExport,
    StepExport,
    StlMissing,
    StlUnreadable,
    StlNotWatertight,
    KernelMeshMismatch,
}

impl GateReason {
    pub fn code(self) -> &'static str {
        match self {
            GateReason::ExecError => "exec_error",
            GateReason::ExecTimeout => "exec_timeout",
            GateReason::MissingTopology => "missing_topology",
            GateReason::SingleSolid => "single_solid",
            GateReason::MinFaces => "min_faces",
            GateReason::MinVolume => "min_volume",
            GateReason::MissingExports => "missing_exports",
            GateReason::StlExport => "stl_export",
            GateReason::StepExport => "step_export",
            GateReason::StlMissing => "stl_missing",
            GateReason::StlUnreadable => "stl_unreadable",
            GateReason::StlNotWatertight => "stl_not_watertight",
            GateReason::KernelMeshMismatch => "kernel_mesh_mismatch",
        }
    }
}

impl fmt::Display for GateReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub passed: bool,
    pub reasons: Vec<GateReason>,
}

impl Verdict {
    fn from_reasons(reasons: Vec<GateReason>) -> Self {
        Self { passed: reasons.is_empty(), reasons }
    }

    pub fn codes(&self) -> Vec<&'static str> {
        self.reasons.iter().map(|r| r.code()).collect()
    }
}

/// What the caller could find at the report's STL path.
#[derive(Debug, Clone, Copy)]
pub enum MeshEvidence<'a> {
    /// No path in the report, or nothing at that path.
    Missing,
    /// The file exists but did not parse.
    Unreadable,
    Mesh(&'a TriMesh),
}

/// Applies every gate to `report` and collects all violations.
///
/// `mesh` is consulted only when `gates.require_watertight_stl` is set and
/// the STL export itself succeeded.
pub fn evaluate_report(report: &ValidationReport, gates: &GeometryGates, mesh: MeshEvidence<'_>) -> Verdict {
    let mut reasons = Vec::new();
    match report.exec_status {
        ExecStatus::Ok => {}
        ExecStatus::Error => return Verdict::from_reasons(alloc::vec![GateReason::ExecError]),
        ExecStatus::Timeout => return Verdict::from_reasons(alloc::vec![GateReason::ExecTimeout]),
    }

    match &report.topo {
        None => reasons.push(GateReason::MissingTopology),
        Some(topo) => {
            if gates.require_single_solid && topo.num_solids != 1 {
                reasons.push(GateReason::SingleSolid);
            }
            if topo.num_brep_faces < gates.min_faces {
                reasons.push(GateReason::MinFaces);
            }
            // NaN fails too.
            if !(topo.volume >= gates.min_volume) {
                reasons.push(GateReason::MinVolume);
            }
        }
    }

    let stl_exported = match &report.exports {
        None => {
            reasons.push(GateReason::MissingExports);
            false
        }
        Some(ex) => {
            if !ex.stl.is_ok() {
                reasons.push(GateReason::StlExport);
            }
            if !ex.step.is_ok() {
                reasons.push(GateReason::StepExport);
            }
            ex.stl.is_ok()
        }
    };

    if gates.require_watertight_stl && stl_exported {
        match mesh {
            MeshEvidence::Missing => reasons.push(GateReason::StlMissing),
            MeshEvidence::Unreadable => reasons.push(GateReason::StlUnreadable),
            MeshEvidence::Mesh(m) => {
                if !mesh_is_watertight(m) {
                    reasons.push(GateReason::StlNotWatertight);
                }
                if let Some(topo) = &report.topo {
                    if mesh_connected_components(m) != topo.num_solids as usize {
                        reasons.push(GateReason::KernelMeshMismatch);
                    }
                }
            }
        }
    }

    Verdict::from_reasons(reasons)
}
