//! Run configuration: one TOML file drives every subcommand. Unknown keys
//! are rejected, every field has a documented default, and the resolved
//! config is echoed into each output so a run can be replayed from its own
//! artifacts.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use parasource_core::carleman::CarlemanParams;
use parasource_core::forward::ProblemSpec;
use parasource_core::grid::{FaceId, Grid};
use parasource_core::inverse::{Method, ReconstructionConfig};
use parasource_core::scalar::cast;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Where artifacts land; `--out` overrides.
    pub output_dir: PathBuf,
    pub problem: ProblemSection,
    pub solver: SolverSection,
    pub besov: BesovSection,
    pub carleman: CarlemanSection,
    pub inverse: InverseSection,
    pub experiment: ExperimentSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            output_dir: PathBuf::from("out"),
            problem: ProblemSection::default(),
            solver: SolverSection::default(),
            besov: BesovSection::default(),
            carleman: CarlemanSection::default(),
            inverse: InverseSection::default(),
            experiment: ExperimentSection::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProblemSection {
    /// 1 or 2 spatial dimensions.
    pub dim: usize,
    /// Nodes per axis; a power of two at or above 16.
    pub points: usize,
    pub length: f64,
    /// Solution amplitude scale; the initial state and true source are the
    /// built-in sine profiles times this.
    pub epsilon: f64,
    /// Constant drift coefficient, every axis.
    pub drift: f64,
    /// Constant zero-order coefficient.
    pub reaction: f64,
    /// Quadratic coupling.
    pub lambda: f64,
    /// Transport coupling per axis; absent keeps the built-in profile
    /// (0.3 on the first axis, 0 elsewhere).
    pub alpha: Option<Vec<f64>>,
    /// Center of the observation window.
    pub t0: f64,
    /// Window half-width.
    pub delta: f64,
    /// Observed faces by name, e.g. "x1_high".
    pub observed_faces: Vec<String>,
    /// Switch the nonlinearity off.
    pub linear: bool,
}

impl Default for ProblemSection {
    fn default() -> Self {
        ProblemSection {
            dim: 1,
            points: 256,
            length: 1.0,
            epsilon: 0.05,
            drift: 0.5,
            reaction: -1.0,
            lambda: 1.0,
            alpha: None,
            t0: 0.5,
            delta: 0.1,
            observed_faces: vec!["x1_high".to_string()],
            linear: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub dt: f64,
}

impl Default for SolverSection {
    fn default() -> Self {
        SolverSection { dt: 1e-4 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BesovSection {
    /// Regularity index of the block-sum norms.
    pub s: f64,
}

impl Default for BesovSection {
    fn default() -> Self {
        BesovSection { s: 0.5 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CarlemanSection {
    pub s_c: f64,
    pub lambda_c: f64,
    pub beta: f64,
}

impl Default for CarlemanSection {
    fn default() -> Self {
        CarlemanSection {
            s_c: 4.0,
            lambda_c: 2.0,
            beta: 1.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InverseSection {
    /// "tikhonov" or "direct-slice".
    pub method: String,
    /// Conjugate directions instead of plain descent.
    pub cg: bool,
    pub gamma: f64,
    pub max_iters: usize,
    pub grad_tol: f64,
    pub snapshot_weight: f64,
    pub interior_margin: f64,
    /// Weight the misfit integrals with the carleman section's weight.
    pub carleman_weighting: bool,
}

impl Default for InverseSection {
    fn default() -> Self {
        let base = ReconstructionConfig::<f64>::tikhonov();
        InverseSection {
            method: "tikhonov".to_string(),
            cg: true,
            gamma: base.gamma,
            max_iters: base.max_iters,
            grad_tol: base.grad_tol,
            snapshot_weight: base.snapshot_weight,
            interior_margin: base.interior_margin,
            carleman_weighting: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSection {
    /// Base seed; `--seed` overrides.
    pub seed: u64,
    /// Observation noise for forward and reconstruct runs.
    pub noise: f64,
    /// Ladder levels for the exponent fit.
    pub noise_levels: Vec<f64>,
    pub seeds_per_level: usize,
    /// s_C values swept by the scan.
    pub s_c_sweep: Vec<f64>,
    /// Solution amplitudes swept by the perturbed scan.
    pub epsilon_sweep: Vec<f64>,
    /// Test functions per sweep point.
    pub ensemble: usize,
    /// Random samples per verification check.
    pub samples: usize,
    /// Negative control: run the verification suite against the
    /// non-telescoping partition profile, which must fail.
    pub break_partition: bool,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ExperimentSection {
            seed: 7,
            noise: 0.0,
            noise_levels: vec![0.01, 0.0316, 0.1, 0.32],
            seeds_per_level: 10,
            s_c_sweep: vec![2.0, 4.0, 8.0, 16.0],
            epsilon_sweep: vec![0.01, 0.05, 0.2],
            ensemble: 20,
            samples: 100,
            break_partition: false,
        }
    }
}

pub fn load(path: Option<&Path>) -> CliResult<RunConfig> {
    let Some(path) = path else {
        return Ok(RunConfig::default());
    };
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn parse_face(name: &str, dim: usize) -> CliResult<FaceId> {
    let bad = || {
        CliError::Config(format!(
            "face \"{name}\" is not of the form x<axis>_low or x<axis>_high \
             with axis in 1..={dim}"
        ))
    };
    let rest = name.strip_prefix('x').ok_or_else(bad)?;
    let (axis, side) = rest.split_once('_').ok_or_else(bad)?;
    let axis: usize = axis.parse().map_err(|_| bad())?;
    if axis == 0 || axis > dim {
        return Err(bad());
    }
    match side {
        "low" => Ok(FaceId::low(axis - 1)),
        "high" => Ok(FaceId::high(axis - 1)),
        _ => Err(bad()),
    }
}

impl RunConfig {
    pub fn grid(&self) -> CliResult<Grid<f64>> {
        let grid = match self.problem.dim {
            1 => Grid::line(self.problem.points, self.problem.length),
            2 => Grid::square(self.problem.points, self.problem.length),
            d => {
                return Err(CliError::Config(format!(
                    "dim = {d}; only 1 and 2 are supported"
                )))
            }
        };
        grid.map_err(CliError::from)
    }

    /// Problem built from the section values; validated.
    pub fn spec(&self) -> CliResult<ProblemSpec<f64>> {
        let p = &self.problem;
        let grid = self.grid()?;
        let mut spec = ProblemSpec::with_amplitude(grid, p.epsilon);
        for b in &mut spec.b {
            *b = parasource_core::field::SpatialField::constant(grid, p.drift);
        }
        spec.c = parasource_core::field::SpatialField::constant(grid, p.reaction);
        spec.lambda = p.lambda;
        if let Some(alpha) = &p.alpha {
            if alpha.len() != grid.dim() {
                return Err(CliError::Config(format!(
                    "alpha has {} entries for a {}-dimensional problem",
                    alpha.len(),
                    grid.dim()
                )));
            }
            spec.alpha = alpha.clone();
        }
        spec.t0 = p.t0;
        spec.delta = p.delta;
        spec.observed_faces = p
            .observed_faces
            .iter()
            .map(|n| parse_face(n, grid.dim()))
            .collect::<CliResult<Vec<_>>>()?;
        if p.linear {
            spec = spec.linearized();
        }
        spec.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(spec)
    }

    pub fn carleman_params(&self, spec: &ProblemSpec<f64>) -> CliResult<CarlemanParams<f64>> {
        let mut params = CarlemanParams::linear_default(spec.grid, spec.t0);
        params.s_c = self.carleman.s_c;
        params.lambda_c = self.carleman.lambda_c;
        params.beta = self.carleman.beta;
        params.gamma = spec.observed_faces.clone();
        params.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(params)
    }

    pub fn reconstruction(&self, spec: &ProblemSpec<f64>) -> CliResult<ReconstructionConfig<f64>> {
        let inv = &self.inverse;
        let mut cfg = ReconstructionConfig::tikhonov();
        cfg.method = match inv.method.as_str() {
            "tikhonov" => Method::Tikhonov { cg: inv.cg },
            "direct-slice" => Method::DirectSlice,
            other => {
                return Err(CliError::Config(format!(
                    "inverse.method \"{other}\" is neither \"tikhonov\" nor \"direct-slice\""
                )))
            }
        };
        cfg.gamma = cast(inv.gamma);
        cfg.max_iters = inv.max_iters;
        cfg.grad_tol = cast(inv.grad_tol);
        cfg.snapshot_weight = cast(inv.snapshot_weight);
        cfg.interior_margin = cast(inv.interior_margin);
        cfg.carleman_weighting = if inv.carleman_weighting {
            Some(self.carleman_params(spec)?)
        } else {
            None
        };
        cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }

    /// Seed ladder for the exponent fit: consecutive seeds from the base.
    pub fn seed_ladder(&self) -> Vec<u64> {
        let base = self.experiment.seed;
        (0..self.experiment.seeds_per_level as u64)
            .map(|k| base.wrapping_add(k))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_build_a_valid_problem() {
        let cfg = RunConfig::default();
        let spec = cfg.spec().unwrap();
        assert_eq!(spec.grid.total_nodes(), 256);
        cfg.reconstruction(&spec).unwrap();
        cfg.carleman_params(&spec).unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = toml::from_str::<RunConfig>("unknown_key = 1").unwrap_err();
        assert!(err.to_string().contains("unknown_key"));
    }

    #[test]
    fn face_names_parse_and_reject() {
        assert_eq!(parse_face("x1_high", 1).unwrap(), FaceId::high(0));
        assert_eq!(parse_face("x2_low", 2).unwrap(), FaceId::low(1));
        assert!(parse_face("x2_low", 1).is_err());
        assert!(parse_face("y1_low", 2).is_err());
        assert!(parse_face("x1_mid", 1).is_err());
    }

    #[test]
    fn the_default_config_round_trips_through_toml() {
        let cfg = RunConfig::default();
        let text = toml::to_string_pretty(&cfg).unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(toml::to_string_pretty(&back).unwrap(), text);
    }
}
