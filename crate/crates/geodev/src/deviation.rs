//! The three deviation equations along a geodesic and their pointwise
//! operators.
//!
//! For a base geodesic X and functions ξ along it, three second-order
//! operators are implemented:
//!
//! - `op_j` — the Jacobi operator, linear in (ξ, ξ̇, ξ̈):
//!   `J^μ = ξ̈^μ + ∂_τΓ^μ_{νσ} ξ^τ Ẋ^ν Ẋ^σ + 2 Γ^μ_{νσ} Ẋ^σ ξ̇^ν`
//! - `op_delta` — the quadratic/cubic excess in ξ̇:
//!   `Δ^μ = Γ^μ_{νσ} ξ̇^ν ξ̇^σ + 2 ∂_αΓ^μ_{νσ} ξ^α Ẋ^ν ξ̇^σ + ∂_αΓ^μ_{νσ} ξ^α ξ̇^ν ξ̇^σ`
//! - `op_g` — the generalized Jacobi operator, evaluated directly from its
//!   own formula (an independent code path from `op_j + op_delta`):
//!   `G^μ = ξ̈^μ + Γ^μ_{νρ}(2 ξ̇^ρ Ẋ^ν + ξ̇^ρ ξ̇^ν) + ∂_τΓ^μ_{ρν} ξ^τ (Ẋ^ρ + ξ̇^ρ)(Ẋ^ν + ξ̇^ν)`
//!
//! All connection coefficients are evaluated on the central geodesic X(s),
//! except for the exact deviation equation which evaluates Γ at X + ξ as
//! written. Integration of each equation produces a [`DeviationPath`] whose
//! ξ̈ is recoverable from dense-output differentiation, so the operators act
//! as independent residual checks on stored paths.

use serde::Serialize;

use crate::connection::{curvature, ConnectionChart};
use crate::error::{Error, Result};
use crate::geodesic::GeodesicPath;
use crate::integrate::{self, IntegrateOpts, OdeProblem, Trajectory};
use crate::report::ResidualReport;
use crate::tensor::sub;

/// Which equation produced a deviation path.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum DeviationKind {
    Jacobi,
    Gje,
    ExactOde,
    ExactDifference,
}

/// Sampled (ξ, ξ̇) along a base geodesic.
#[derive(Clone, Debug)]
pub struct DeviationPath {
    pub base: GeodesicPath,
    pub trajectory: Trajectory,
    pub kind: DeviationKind,
}

impl DeviationPath {
    pub fn dim(&self) -> usize {
        self.base.dim()
    }

    pub fn span(&self) -> [f64; 2] {
        self.trajectory.span()
    }

    pub fn xi(&self, s: f64) -> Vec<f64> {
        self.trajectory.eval(s)[..self.dim()].to_vec()
    }

    pub fn xidot(&self, s: f64) -> Vec<f64> {
        self.trajectory.eval(s)[self.dim()..].to_vec()
    }

    /// ξ̈ from dense-output differentiation of the stored ξ̇.
    pub fn xiddot(&self, s: f64) -> Vec<f64> {
        self.trajectory.eval_deriv(s)[self.dim()..].to_vec()
    }
}

/// Jacobi operator at parameter `s` of the base geodesic.
pub fn op_j(
    chart: &ConnectionChart,
    base: &GeodesicPath,
    xi: &[f64],
    xidot: &[f64],
    xiddot: &[f64],
    s: f64,
) -> Result<Vec<f64>> {
    let n = chart.dim();
    let (x, v) = base.state(s);
    let g = chart.christoffel(&x)?;
    let dg = chart.dchristoffel(&x)?;
    let mut out = vec![0.0; n];
    for mu in 0..n {
        let mut acc = xiddot[mu];
        for nu in 0..n {
            for sg in 0..n {
                acc += 2.0 * g[(mu, nu, sg)] * v[sg] * xidot[nu];
                for tau in 0..n {
                    acc += dg[(mu, nu, sg, tau)] * xi[tau] * v[nu] * v[sg];
                }
            }
        }
        out[mu] = acc;
    }
    Ok(out)
}

/// Excess operator Δ = G − J; every term carries at least one ξ̇.
pub fn op_delta(
    chart: &ConnectionChart,
    base: &GeodesicPath,
    xi: &[f64],
    xidot: &[f64],
    s: f64,
) -> Result<Vec<f64>> {
    let n = chart.dim();
    let (x, v) = base.state(s);
    let g = chart.christoffel(&x)?;
    let dg = chart.dchristoffel(&x)?;
    let mut out = vec![0.0; n];
    for mu in 0..n {
        let mut acc = 0.0;
        for nu in 0..n {
            for sg in 0..n {
                acc += g[(mu, nu, sg)] * xidot[nu] * xidot[sg];
                for al in 0..n {
                    acc += dg[(mu, nu, sg, al)]
                        * xi[al]
                        * (2.0 * v[nu] * xidot[sg] + xidot[nu] * xidot[sg]);
                }
            }
        }
        out[mu] = acc;
    }
    Ok(out)
}

/// Generalized Jacobi operator, evaluated directly (not as J + Δ).
pub fn op_g(
    chart: &ConnectionChart,
    base: &GeodesicPath,
    xi: &[f64],
    xidot: &[f64],
    xiddot: &[f64],
    s: f64,
) -> Result<Vec<f64>> {
    let n = chart.dim();
    let (x, v) = base.state(s);
    let g = chart.christoffel(&x)?;
    let dg = chart.dchristoffel(&x)?;
    let mut out = vec![0.0; n];
    for mu in 0..n {
        let mut acc = xiddot[mu];
        for nu in 0..n {
            for rho in 0..n {
                acc += g[(mu, nu, rho)] * (2.0 * xidot[rho] * v[nu] + xidot[rho] * xidot[nu]);
                for tau in 0..n {
                    acc += dg[(mu, rho, nu, tau)]
                        * xi[tau]
                        * (v[rho] + xidot[rho])
                        * (v[nu] + xidot[nu]);
                }
            }
        }
        out[mu] = acc;
    }
    Ok(out)
}

fn deviation_ode(
    base: &GeodesicPath,
    xi0: &[f64],
    xidot0: &[f64],
    opts: &IntegrateOpts,
    kind: DeviationKind,
) -> Result<DeviationPath> {
    let n = base.dim();
    if xi0.len() != n || xidot0.len() != n {
        return Err(Error::InvalidInput(format!(
            "expected {n}-dimensional deviation data"
        )));
    }
    let chart = base.chart.clone();
    let b = base.clone();
    let rhs = move |s: f64, y: &[f64], dy: &mut [f64]| -> Result<()> {
        let (xi, xidot) = y.split_at(n);
        let (x, v) = b.state(s);
        dy[..n].copy_from_slice(xidot);
        match kind {
            DeviationKind::Jacobi => {
                let g = chart.christoffel(&x)?;
                let dg = chart.dchristoffel(&x)?;
                for mu in 0..n {
                    let mut acc = 0.0;
                    for nu in 0..n {
                        for sg in 0..n {
                            acc += 2.0 * g[(mu, nu, sg)] * v[sg] * xidot[nu];
                            for tau in 0..n {
                                acc += dg[(mu, nu, sg, tau)] * xi[tau] * v[nu] * v[sg];
                            }
                        }
                    }
                    dy[n + mu] = -acc;
                }
            }
            DeviationKind::Gje => {
                let g = chart.christoffel(&x)?;
                let dg = chart.dchristoffel(&x)?;
                for mu in 0..n {
                    let mut acc = 0.0;
                    for nu in 0..n {
                        for rho in 0..n {
                            acc += g[(mu, nu, rho)]
                                * (2.0 * xidot[rho] * v[nu] + xidot[rho] * xidot[nu]);
                            for tau in 0..n {
                                acc += dg[(mu, rho, nu, tau)]
                                    * xi[tau]
                                    * (v[rho] + xidot[rho])
                                    * (v[nu] + xidot[nu]);
                            }
                        }
                    }
                    dy[n + mu] = -acc;
                }
            }
            DeviationKind::ExactOde => {
                let displaced: Vec<f64> = (0..n).map(|i| x[i] + xi[i]).collect();
                let g_disp = chart.christoffel(&displaced)?;
                let g_base = chart.christoffel(&x)?;
                for mu in 0..n {
                    let mut acc = 0.0;
                    for nu in 0..n {
                        for sg in 0..n {
                            acc += g_disp[(mu, nu, sg)]
                                * (v[nu] + xidot[nu])
                                * (v[sg] + xidot[sg])
                                - g_base[(mu, nu, sg)] * v[nu] * v[sg];
                        }
                    }
                    dy[n + mu] = -acc;
                }
            }
            DeviationKind::ExactDifference => unreachable!("not an ODE kind"),
        }
        Ok(())
    };
    let mut y0 = xi0.to_vec();
    y0.extend_from_slice(xidot0);
    let problem = OdeProblem {
        state_dim: 2 * n,
        rhs: &rhs,
        s_span: base.span(),
        y0,
    };
    let trajectory = integrate::solve(&problem, opts)?;
    Ok(DeviationPath {
        base: base.clone(),
        trajectory,
        kind,
    })
}

/// Integrate the (linear) Jacobi equation along the base span.
pub fn integrate_jacobi(
    base: &GeodesicPath,
    xi0: &[f64],
    xidot0: &[f64],
    opts: &IntegrateOpts,
) -> Result<DeviationPath> {
    deviation_ode(base, xi0, xidot0, opts, DeviationKind::Jacobi)
}

/// Integrate the generalized Jacobi equation. The equation is nonlinear and
/// only locally solvable; blow-up surfaces as `StepUnderflow`.
pub fn integrate_gje(
    base: &GeodesicPath,
    xi0: &[f64],
    xidot0: &[f64],
    opts: &IntegrateOpts,
) -> Result<DeviationPath> {
    deviation_ode(base, xi0, xidot0, opts, DeviationKind::Gje)
}

/// Integrate the exact deviation equation, with Γ evaluated at X + ξ as
/// written; leaves the chart with `DomainEscape` if X + ξ does.
pub fn integrate_exact_ode(
    base: &GeodesicPath,
    xi0: &[f64],
    xidot0: &[f64],
    opts: &IntegrateOpts,
) -> Result<DeviationPath> {
    deviation_ode(base, xi0, xidot0, opts, DeviationKind::ExactOde)
}

/// ξ(s) = x(s) − X(s) nodewise; the two geodesics must share their s-grid
/// and chart.
pub fn exact_by_difference(base: &GeodesicPath, other: &GeodesicPath) -> Result<DeviationPath> {
    let n = base.dim();
    if other.dim() != n || base.chart.name() != other.chart.name() {
        return Err(Error::GridMismatch);
    }
    let ta = &base.trajectory;
    let tb = &other.trajectory;
    if ta.len() != tb.len() {
        return Err(Error::GridMismatch);
    }
    let scale = 1e-12 * (1.0 + ta.span()[1].abs().max(ta.span()[0].abs()));
    if ta
        .nodes()
        .iter()
        .zip(tb.nodes())
        .any(|(a, b)| (a - b).abs() > scale)
    {
        return Err(Error::GridMismatch);
    }
    let mut ys = Vec::with_capacity(ta.len());
    let mut dys = Vec::with_capacity(ta.len());
    for k in 0..ta.len() {
        let (xa, xb) = (ta.node_state(k), tb.node_state(k));
        let (da, db) = (ta.node_deriv(k), tb.node_deriv(k));
        let mut y = sub(&xb[..n], &xa[..n]);
        y.extend(sub(&xb[n..], &xa[n..]));
        let mut dy = sub(&db[..n], &da[..n]);
        dy.extend(sub(&db[n..], &da[n..]));
        ys.push(y);
        dys.push(dy);
    }
    Ok(DeviationPath {
        base: base.clone(),
        trajectory: Trajectory::new(ta.nodes().to_vec(), ys, dys)?,
        kind: DeviationKind::ExactDifference,
    })
}

/// Central-difference derivative of a geodesic variation:
/// `ξ(s) = (Λ(+ε, s) − Λ(−ε, s)) / 2ε` on a uniform grid of `nodes` points.
pub fn jacobi_from_variation(
    family: &dyn Fn(f64) -> Result<GeodesicPath>,
    eps: f64,
    nodes: usize,
) -> Result<DeviationPath> {
    if eps <= 0.0 || nodes < 2 {
        return Err(Error::InvalidInput(
            "variation needs eps > 0 and at least two nodes".into(),
        ));
    }
    let center = family(0.0)?;
    let plus = family(eps)?;
    let minus = family(-eps)?;
    let [a, b] = center.span();
    let n = center.dim();
    let mut ss = Vec::with_capacity(nodes);
    let mut ys = Vec::with_capacity(nodes);
    let mut dys = Vec::with_capacity(nodes);
    for k in 0..nodes {
        let s = a + (b - a) * k as f64 / (nodes - 1) as f64;
        let (xp, vp) = plus.state(s);
        let (xm, vm) = minus.state(s);
        let ap = plus.acceleration(s);
        let am = minus.acceleration(s);
        let xi: Vec<f64> = (0..n).map(|i| (xp[i] - xm[i]) / (2.0 * eps)).collect();
        let xidot: Vec<f64> = (0..n).map(|i| (vp[i] - vm[i]) / (2.0 * eps)).collect();
        let xiddot: Vec<f64> = (0..n).map(|i| (ap[i] - am[i]) / (2.0 * eps)).collect();
        let mut y = xi;
        y.extend_from_slice(&xidot);
        let mut dy = y[n..].to_vec();
        dy.extend_from_slice(&xiddot);
        ss.push(s);
        ys.push(y);
        dys.push(dy);
    }
    Ok(DeviationPath {
        base: center,
        trajectory: Trajectory::new(ss, ys, dys)?,
        kind: DeviationKind::Jacobi,
    })
}

fn operator_report(
    dev: &DeviationPath,
    sample_s: &[f64],
    label: &str,
    op: &dyn Fn(&[f64], &[f64], &[f64], f64) -> Result<Vec<f64>>,
) -> Result<ResidualReport> {
    let mut entries = Vec::with_capacity(sample_s.len());
    for &s in sample_s {
        let xi = dev.xi(s);
        let xidot = dev.xidot(s);
        let xiddot = dev.xiddot(s);
        entries.push((s, op(&xi, &xidot, &xiddot, s)?));
    }
    Ok(ResidualReport::from_samples(label, &entries))
}

/// op_J evaluated along a stored path, ξ̈ from the interpolant.
pub fn jacobi_residual(dev: &DeviationPath, sample_s: &[f64]) -> Result<ResidualReport> {
    let chart = dev.base.chart.clone();
    let base = dev.base.clone();
    operator_report(dev, sample_s, "jacobi", &|xi, xidot, xiddot, s| {
        op_j(&chart, &base, xi, xidot, xiddot, s)
    })
}

/// op_G evaluated along a stored path.
pub fn gje_residual(dev: &DeviationPath, sample_s: &[f64]) -> Result<ResidualReport> {
    let chart = dev.base.chart.clone();
    let base = dev.base.clone();
    operator_report(dev, sample_s, "gje", &|xi, xidot, xiddot, s| {
        op_g(&chart, &base, xi, xidot, xiddot, s)
    })
}

/// Residual of the exact deviation equation (Γ evaluated at X + ξ).
pub fn exact_residual(dev: &DeviationPath, sample_s: &[f64]) -> Result<ResidualReport> {
    let chart = dev.base.chart.clone();
    let base = dev.base.clone();
    let n = chart.dim();
    operator_report(dev, sample_s, "exact", &move |xi, xidot, xiddot, s| {
        let (x, v) = base.state(s);
        let displaced: Vec<f64> = (0..n).map(|i| x[i] + xi[i]).collect();
        let g_disp = chart.christoffel(&displaced)?;
        let g_base = chart.christoffel(&x)?;
        let mut out = vec![0.0; n];
        for mu in 0..n {
            let mut acc = xiddot[mu];
            for nu in 0..n {
                for sg in 0..n {
                    acc += g_disp[(mu, nu, sg)] * (v[nu] + xidot[nu]) * (v[sg] + xidot[sg])
                        - g_base[(mu, nu, sg)] * v[nu] * v[sg];
                }
            }
            out[mu] = acc;
        }
        Ok(out)
    })
}

/// Residual of whichever equation the path claims to solve.
pub fn defining_residual(dev: &DeviationPath, sample_s: &[f64]) -> Result<ResidualReport> {
    match dev.kind {
        DeviationKind::Jacobi => jacobi_residual(dev, sample_s),
        DeviationKind::Gje => gje_residual(dev, sample_s),
        DeviationKind::ExactOde | DeviationKind::ExactDifference => {
            exact_residual(dev, sample_s)
        }
    }
}

/// Covariant form of the Jacobi operator, `D²ξ/Ds² + R(ξ, Ẋ)Ẋ`, built from
/// the curvature tensor and dense-output Ẍ. Equivalent to `op_j` along a
/// geodesic, which the tests check numerically.
pub fn covariant_jacobi_residual(dev: &DeviationPath, sample_s: &[f64]) -> Result<ResidualReport> {
    let chart = dev.base.chart.clone();
    let base = dev.base.clone();
    let n = chart.dim();
    operator_report(dev, sample_s, "covariant_jacobi", &move |xi,
                                                              xidot,
                                                              xiddot,
                                                              s| {
        let (x, v) = base.state(s);
        let a = base.acceleration(s);
        let g = chart.christoffel(&x)?;
        let dg = chart.dchristoffel(&x)?;
        let r = curvature(&chart, &x)?;

        // w = Dξ/Ds
        let mut w = vec![0.0; n];
        for mu in 0..n {
            let mut acc = xidot[mu];
            for nu in 0..n {
                for sg in 0..n {
                    acc += g[(mu, nu, sg)] * v[nu] * xi[sg];
                }
            }
            w[mu] = acc;
        }
        // wdot = d/ds (Dξ/Ds), with Ẍ from the dense output
        let mut out = vec![0.0; n];
        for mu in 0..n {
            let mut acc = xiddot[mu];
            for nu in 0..n {
                for sg in 0..n {
                    acc += g[(mu, nu, sg)] * (a[nu] * xi[sg] + v[nu] * xidot[sg]);
                    acc += g[(mu, nu, sg)] * v[nu] * w[sg];
                    for tau in 0..n {
                        acc += dg[(mu, nu, sg, tau)] * v[tau] * v[nu] * xi[sg];
                    }
                }
            }
            out[mu] = acc;
        }
        // + R(ξ, Ẋ)Ẋ
        for mu in 0..n {
            let mut acc = 0.0;
            for nu in 0..n {
                for rho in 0..n {
                    for sg in 0..n {
                        acc += r[(mu, nu, rho, sg)] * v[nu] * xi[rho] * v[sg];
                    }
                }
            }
            out[mu] += acc;
        }
        Ok(out)
    })
}
