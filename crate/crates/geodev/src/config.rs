//! Run configuration: JSON file + flag merging, chart and map specs.
//!
//! A config file holds the same fields the CLI flags set; explicit flags win
//! over file values. Unknown keys are rejected with the offending key named
//! in the error.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::chartmap::{ChartMap, PolyTerm};
use crate::connection::{self, ConnectionChart, GammaTerm};
use crate::error::{Error, Result};
use crate::integrate::{IntegrateOpts, Method};

/// A chart is either a catalog name or a polynomial Christoffel field.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ChartSpec {
    Name(String),
    Polynomial { dim: usize, terms: Vec<GammaTerm> },
}

impl ChartSpec {
    pub fn build(&self) -> Result<ConnectionChart> {
        match self {
            ChartSpec::Name(name) => connection::catalog(name),
            ChartSpec::Polynomial { dim, terms } => {
                connection::polynomial_chart(*dim, terms.clone())
            }
        }
    }
}

/// Coordinate-map specification, keyed by `kind`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MapSpec {
    Affine {
        #[serde(rename = "Lambda")]
        lambda: Vec<Vec<f64>>,
        #[serde(rename = "C")]
        c: Vec<f64>,
    },
    CubicCounterexample {
        n: usize,
    },
    Polynomial {
        dim: usize,
        terms: Vec<PolyTerm>,
    },
    /// Cartesian -> polar in the plane.
    Polar,
    PolarInverse,
    /// Cartesian -> spherical in 3-space.
    Spherical,
    SphericalInverse,
    Identity {
        n: usize,
    },
}

impl MapSpec {
    pub fn build(&self) -> Result<ChartMap> {
        match self {
            MapSpec::Affine { lambda, c } => {
                let n = c.len();
                if lambda.len() != n || lambda.iter().any(|row| row.len() != n) {
                    return Err(Error::Config("affine Lambda must be square".into()));
                }
                let m = nalgebra::DMatrix::from_fn(n, n, |i, j| lambda[i][j]);
                Ok(crate::chartmap::AffineMap::new(m, c.clone())?.to_map())
            }
            MapSpec::CubicCounterexample { n } => ChartMap::cubic_counterexample(*n),
            MapSpec::Polynomial { dim, terms } => ChartMap::polynomial(*dim, terms.clone()),
            MapSpec::Polar => Ok(ChartMap::cartesian_to_polar()),
            MapSpec::PolarInverse => Ok(ChartMap::polar_to_cartesian()),
            MapSpec::Spherical => Ok(ChartMap::cartesian_to_spherical()),
            MapSpec::SphericalInverse => Ok(ChartMap::spherical_to_cartesian()),
            MapSpec::Identity { n } => Ok(ChartMap::identity(*n)),
        }
    }
}

/// Everything a run can configure. All fields optional so that flag and
/// file values merge field by field.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub command: Option<String>,
    pub chart: Option<ChartSpec>,
    pub map: Option<MapSpec>,
    pub integrator: Option<String>,
    pub steps: Option<usize>,
    pub rtol: Option<f64>,
    pub atol: Option<f64>,
    pub max_step: Option<f64>,
    pub span: Option<[f64; 2]>,
    pub x0: Option<Vec<f64>>,
    pub v0: Option<Vec<f64>>,
    pub xi0: Option<Vec<f64>>,
    pub xidot0: Option<Vec<f64>>,
    pub kind: Option<String>,
    pub n: Option<usize>,
    pub seed: Option<u64>,
    pub maps: Option<usize>,
    pub triples: Option<usize>,
    pub out: Option<String>,
    pub frame: Option<Vec<Vec<f64>>>,
    pub rho: Option<f64>,
    pub interval: Option<[f64; 2]>,
    pub s0: Option<f64>,
    pub samples: Option<usize>,
    pub u: Option<Vec<f64>>,
    pub v: Option<Vec<f64>>,
    pub w: Option<Vec<f64>>,
    pub jobs: Option<usize>,
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<RunConfig> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| {
            Error::Config(format!("{}: {e}", path.display()))
        })
    }

    /// Field-by-field merge; values in `self` (the flags) win.
    pub fn or(self, fallback: RunConfig) -> RunConfig {
        RunConfig {
            command: self.command.or(fallback.command),
            chart: self.chart.or(fallback.chart),
            map: self.map.or(fallback.map),
            integrator: self.integrator.or(fallback.integrator),
            steps: self.steps.or(fallback.steps),
            rtol: self.rtol.or(fallback.rtol),
            atol: self.atol.or(fallback.atol),
            max_step: self.max_step.or(fallback.max_step),
            span: self.span.or(fallback.span),
            x0: self.x0.or(fallback.x0),
            v0: self.v0.or(fallback.v0),
            xi0: self.xi0.or(fallback.xi0),
            xidot0: self.xidot0.or(fallback.xidot0),
            kind: self.kind.or(fallback.kind),
            n: self.n.or(fallback.n),
            seed: self.seed.or(fallback.seed),
            maps: self.maps.or(fallback.maps),
            triples: self.triples.or(fallback.triples),
            out: self.out.or(fallback.out),
            frame: self.frame.or(fallback.frame),
            rho: self.rho.or(fallback.rho),
            interval: self.interval.or(fallback.interval),
            s0: self.s0.or(fallback.s0),
            samples: self.samples.or(fallback.samples),
            u: self.u.or(fallback.u),
            v: self.v.or(fallback.v),
            w: self.w.or(fallback.w),
            jobs: self.jobs.or(fallback.jobs),
        }
    }

    pub fn integrate_opts(&self) -> Result<IntegrateOpts> {
        let mut opts = IntegrateOpts::default();
        match self.integrator.as_deref() {
            None | Some("adaptive") => {}
            Some("rk4") => {
                opts.method = Method::Rk4Fixed {
                    steps: self.steps.unwrap_or(1000),
                };
            }
            Some(other) => {
                return Err(Error::Config(format!(
                    "unknown integrator `{other}` (expected rk4 or adaptive)"
                )))
            }
        }
        if let Some(rtol) = self.rtol {
            opts.rtol = rtol;
        }
        if let Some(atol) = self.atol {
            opts.atol = atol;
        }
        if let Some(h) = self.max_step {
            opts.max_step = if h > 0.0 { Some(h) } else { None };
        }
        Ok(opts)
    }

    pub fn chart(&self) -> Result<ConnectionChart> {
        self.chart
            .as_ref()
            .ok_or_else(|| Error::Config("missing chart specification".into()))?
            .build()
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(42)
    }
}
