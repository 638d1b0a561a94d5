use serde::{Deserialize, Serialize};

/// Numerical tolerances and conventions shared by all modules.
///
/// Every field has a default; a JSON config file may override any subset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Accepted deviation `||u*u - 1||` for inputs declared unitary.
    pub unitarity_tol: f64,
    /// Minimum distance of an eigenvalue from the logarithm's branch cut.
    pub branch_guard: f64,
    /// Eigenvalues closer than this are merged into one spectral cluster.
    pub cluster_tol: f64,
    /// Smallest singular value accepted by the polar decomposition.
    pub singular_tol: f64,
    /// Residual allowed when snapping a trace winding to the lattice `(1/d)Z`.
    pub lattice_tol: f64,
    /// Residual allowed when snapping a Bott index to an integer.
    pub integer_tol: f64,
    /// Admissibility threshold on cocycle defects.
    pub delta0: f64,
    /// Sign applied to the canonical K0 reduction of pair invariants.
    pub invariant_sign: i64,
    /// Ratio `delta(eps) / eps` for the short-homotopy synthesis.
    pub homotopy_ratio: f64,
    /// Samples per side of the unit square for boundary maps.
    pub samples_per_side: usize,
    /// Lipschitz bound certified for boundary maps.
    pub boundary_lip_max: f64,
    /// Relative cost gap below which eigenvalue matchings count as tied.
    pub ambiguity_tol: f64,
    /// Tolerance for exact algebraic relations (tower relations, model actions).
    pub exact_tol: f64,
    /// Record wall-clock times in transcripts (breaks byte-identical output).
    pub record_timing: bool,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            unitarity_tol: 1e-10,
            branch_guard: 1e-8,
            cluster_tol: 1e-8,
            singular_tol: 1e-12,
            lattice_tol: 1e-6,
            integer_tol: 1e-6,
            delta0: 1.0 / 16.0,
            invariant_sign: -1,
            homotopy_ratio: 1.0 / 8.0,
            samples_per_side: 64,
            boundary_lip_max: 4.0,
            ambiguity_tol: 1e-10,
            exact_tol: 1e-12,
            record_timing: false,
        }
    }
}

impl Config {
    pub fn from_json(text: &str) -> crate::Result<Config> {
        serde_json::from_str(text).map_err(|e| crate::Error::invalid(format!("config: {e}")))
    }
}
