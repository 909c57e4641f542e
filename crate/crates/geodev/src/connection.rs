//! Charts carrying affine torsion-free connections.
//!
//! A [`ConnectionChart`] is a pure evaluator: it knows its dimension, how to
//! produce the connection coefficients Γ^μ_{νσ}(x) at a point, optionally
//! their analytic first derivatives, and which points belong to the chart.
//! Everything downstream (geodesics, deviation equations, pullbacks, Fermi
//! charts) consumes this interface only.
//!
//! Derivative index conventions used throughout the crate:
//! - `dgamma[(mu, nu, sigma, tau)] = ∂Γ^μ_{νσ} / ∂x^τ`
//! - `dg[(tau, lam, sig)] = ∂g_{λσ} / ∂x^τ`
//!
//! Curvature follows the convention
//! `R^μ_{νρσ} = ∂_ρ Γ^μ_{σν} − ∂_σ Γ^μ_{ρν} + Γ^μ_{ρλ} Γ^λ_{σν} − Γ^μ_{σλ} Γ^λ_{ρν}`,
//! chosen so that the covariant and coordinate forms of the Jacobi equation
//! agree with the endomorphism contraction `(R(ξ, Ẋ)Ẋ)^μ = R^μ_{νρσ} Ẋ^ν ξ^ρ Ẋ^σ`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Tensor3, Tensor4};

pub type GammaFn = Arc<dyn Fn(&[f64]) -> Result<Tensor3> + Send + Sync>;
pub type DGammaFn = Arc<dyn Fn(&[f64]) -> Result<Tensor4> + Send + Sync>;
pub type DomainFn = Arc<dyn Fn(&[f64]) -> bool + Send + Sync>;

/// A chart of dimension `n >= 2` with its connection coefficient field.
///
/// Immutable after construction; all evaluators are pure functions, safe to
/// call concurrently.
#[derive(Clone)]
pub struct ConnectionChart {
    dim: usize,
    name: String,
    gamma: GammaFn,
    dgamma: Option<DGammaFn>,
    domain: DomainFn,
    /// Base step for finite-difference ∂Γ when no analytic derivative exists.
    fd_step: f64,
}

impl ConnectionChart {
    pub fn new(
        dim: usize,
        name: impl Into<String>,
        gamma: GammaFn,
        dgamma: Option<DGammaFn>,
        domain: DomainFn,
    ) -> Self {
        ConnectionChart {
            dim,
            name: name.into(),
            gamma,
            dgamma,
            domain,
            fd_step: 1e-3,
        }
    }

    pub fn with_fd_step(mut self, h: f64) -> Self {
        self.fd_step = h;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn fd_step(&self) -> f64 {
        self.fd_step
    }

    pub fn has_analytic_dgamma(&self) -> bool {
        self.dgamma.is_some()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim && x.iter().all(|v| v.is_finite()) && (self.domain)(x)
    }

    /// Γ^μ_{νσ}(x). Fails with `DomainEscape` outside the chart.
    pub fn christoffel(&self, x: &[f64]) -> Result<Tensor3> {
        if !self.contains(x) {
            return Err(Error::DomainEscape { point: x.to_vec() });
        }
        (self.gamma)(x)
    }

    /// ∂Γ^μ_{νσ}/∂x^τ at `x`: the analytic field when available, otherwise
    /// 4th-order central differences of `christoffel`.
    pub fn dchristoffel(&self, x: &[f64]) -> Result<Tensor4> {
        if !self.contains(x) {
            return Err(Error::DomainEscape { point: x.to_vec() });
        }
        match &self.dgamma {
            Some(f) => f(x),
            None => dgamma_fd(self, x, self.fd_step),
        }
    }
}

impl std::fmt::Debug for ConnectionChart {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ConnectionChart")
            .field("dim", &self.dim)
            .field("name", &self.name)
            .finish()
    }
}

/// 4th-order central differences of Γ in every coordinate direction,
/// with per-coordinate step `h_τ = max(h, h * |x_τ|)`.
pub fn dgamma_fd(chart: &ConnectionChart, x: &[f64], h: f64) -> Result<Tensor4> {
    let n = chart.dim;
    let mut out = Tensor4::zeros(n);
    let mut p = x.to_vec();
    for tau in 0..n {
        let ht = h.max(h * x[tau].abs());
        let mut stencil = Vec::with_capacity(4);
        for shift in [-2.0, -1.0, 1.0, 2.0] {
            p[tau] = x[tau] + shift * ht;
            stencil.push(chart.christoffel(&p)?);
            p[tau] = x[tau];
        }
        let (m2, m1, p1, p2) = (&stencil[0], &stencil[1], &stencil[2], &stencil[3]);
        for mu in 0..n {
            for nu in 0..n {
                for sg in 0..n {
                    out[(mu, nu, sg, tau)] = (-p2[(mu, nu, sg)] + 8.0 * p1[(mu, nu, sg)]
                        - 8.0 * m1[(mu, nu, sg)]
                        + m2[(mu, nu, sg)])
                        / (12.0 * ht);
                }
            }
        }
    }
    Ok(out)
}

/// Curvature tensor R^μ_{νρσ} at `x` (see module docs for the convention).
/// Antisymmetric in its last two indices by construction.
pub fn curvature(chart: &ConnectionChart, x: &[f64]) -> Result<Tensor4> {
    let n = chart.dim;
    let g = chart.christoffel(x)?;
    let dg = chart.dchristoffel(x)?;
    let mut r = Tensor4::zeros(n);
    for mu in 0..n {
        for nu in 0..n {
            for rho in 0..n {
                for sg in 0..n {
                    let mut v = dg[(mu, sg, nu, rho)] - dg[(mu, rho, nu, sg)];
                    for lam in 0..n {
                        v += g[(mu, rho, lam)] * g[(lam, sg, nu)]
                            - g[(mu, sg, lam)] * g[(lam, rho, nu)];
                    }
                    r[(mu, nu, rho, sg)] = v;
                }
            }
        }
    }
    Ok(r)
}

pub type MetricFn = Arc<dyn Fn(&[f64]) -> Result<DMatrix<f64>> + Send + Sync>;
pub type DMetricFn = Arc<dyn Fn(&[f64]) -> Result<Tensor3> + Send + Sync>;

/// A chart carrying a (pseudo-)metric, used to derive Levi-Civita
/// connections and as the inner product in orthonormality checks.
#[derive(Clone)]
pub struct MetricChart {
    pub dim: usize,
    pub name: String,
    g: MetricFn,
    dg: Option<DMetricFn>,
    pub signature: Vec<i8>,
    domain: DomainFn,
}

impl MetricChart {
    pub fn new(
        dim: usize,
        name: impl Into<String>,
        g: MetricFn,
        dg: Option<DMetricFn>,
        signature: Vec<i8>,
        domain: DomainFn,
    ) -> Self {
        MetricChart {
            dim,
            name: name.into(),
            g,
            dg,
            signature,
            domain,
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim && (self.domain)(x)
    }

    pub fn metric(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        if !self.contains(x) {
            return Err(Error::DomainEscape { point: x.to_vec() });
        }
        (self.g)(x)
    }

    fn dmetric(&self, x: &[f64], h: f64) -> Result<Tensor3> {
        if let Some(f) = &self.dg {
            return f(x);
        }
        let n = self.dim;
        let mut out = Tensor3::zeros(n);
        let mut p = x.to_vec();
        for tau in 0..n {
            let ht = h.max(h * x[tau].abs());
            let mut stencil = Vec::with_capacity(4);
            for shift in [-2.0, -1.0, 1.0, 2.0] {
                p[tau] = x[tau] + shift * ht;
                stencil.push(self.metric(&p)?);
                p[tau] = x[tau];
            }
            for lam in 0..n {
                for sg in 0..n {
                    out[(tau, lam, sg)] = (-stencil[3][(lam, sg)] + 8.0 * stencil[2][(lam, sg)]
                        - 8.0 * stencil[1][(lam, sg)]
                        + stencil[0][(lam, sg)])
                        / (12.0 * ht);
                }
            }
        }
        Ok(out)
    }

    /// Convenience diagonal-metric constructor.
    pub fn diagonal(
        dim: usize,
        name: impl Into<String>,
        diag: Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>,
        domain: DomainFn,
    ) -> Self {
        let g: MetricFn = Arc::new(move |x: &[f64]| {
            Ok(DMatrix::from_diagonal(&DVector::from_vec(diag(x))))
        });
        MetricChart::new(dim, name, g, None, vec![1; dim], domain)
    }

    pub fn euclidean_cartesian(n: usize) -> Self {
        MetricChart::diagonal(
            n,
            format!("euclidean_cartesian({n})"),
            Arc::new(move |_x| vec![1.0; n]),
            Arc::new(|_x| true),
        )
    }

    /// Plane metric in polar coordinates (r, θ): diag(1, r²).
    pub fn euclidean_polar() -> Self {
        MetricChart::diagonal(
            2,
            "euclidean_polar_metric",
            Arc::new(|x: &[f64]| vec![1.0, x[0] * x[0]]),
            Arc::new(|x: &[f64]| x[0] > 1e-6),
        )
    }

    /// Euclidean 3-space in spherical coordinates (r, θ, φ):
    /// diag(1, r², r² sin²θ).
    pub fn euclidean_spherical3() -> Self {
        MetricChart::diagonal(
            3,
            "euclidean_spherical3_metric",
            Arc::new(|x: &[f64]| {
                let (r, th) = (x[0], x[1]);
                vec![1.0, r * r, r * r * th.sin() * th.sin()]
            }),
            Arc::new(|x: &[f64]| x[0] > 1e-6 && x[1].sin().abs() > 1e-6),
        )
    }

    /// Round unit 2-sphere in (φ, θ): diag(1, sin²φ).
    pub fn sphere2() -> Self {
        MetricChart::diagonal(
            2,
            "sphere2_metric",
            Arc::new(|x: &[f64]| vec![1.0, x[0].sin() * x[0].sin()]),
            Arc::new(|x: &[f64]| x[0].sin().abs() > 1e-6),
        )
    }

    /// Round unit 3-sphere in (χ, φ, θ): diag(1, sin²χ, sin²χ sin²φ).
    pub fn sphere3() -> Self {
        MetricChart::diagonal(
            3,
            "sphere3_metric",
            Arc::new(|x: &[f64]| {
                let (chi, ph) = (x[0], x[1]);
                let s = chi.sin();
                vec![1.0, s * s, s * s * ph.sin() * ph.sin()]
            }),
            Arc::new(|x: &[f64]| x[0].sin().abs() > 1e-6 && x[1].sin().abs() > 1e-6),
        )
    }
}

/// Levi-Civita connection of a metric:
/// `Γ^μ_{νσ} = ½ g^{μλ} (∂_ν g_{λσ} + ∂_σ g_{λν} − ∂_λ g_{νσ})`,
/// with metric derivatives by 4th-order central differences (base step `h`)
/// unless the metric carries analytic derivatives.
pub fn from_metric(metric: &MetricChart, h: f64) -> ConnectionChart {
    let m = metric.clone();
    let n = metric.dim;
    let gamma: GammaFn = Arc::new(move |x: &[f64]| {
        let g = m.metric(x)?;
        let ginv = g
            .clone()
            .try_inverse()
            .ok_or(Error::SingularMetric { point: x.to_vec() })?;
        let dg = m.dmetric(x, h)?;
        let mut out = Tensor3::zeros(n);
        for mu in 0..n {
            for nu in 0..n {
                for sg in 0..n {
                    let mut v = 0.0;
                    for lam in 0..n {
                        v += ginv[(mu, lam)]
                            * (dg[(nu, lam, sg)] + dg[(sg, lam, nu)] - dg[(lam, nu, sg)]);
                    }
                    out[(mu, nu, sg)] = 0.5 * v;
                }
            }
        }
        Ok(out)
    });
    let m2 = metric.clone();
    let domain: DomainFn = Arc::new(move |x: &[f64]| m2.contains(x));
    ConnectionChart::new(n, format!("levi_civita({})", metric.name), gamma, None, domain)
}

/// Builtin geometries, all with analytic Γ and ∂Γ.
///
/// Names: `flat_cartesian(N)`, `euclidean_polar`, `euclidean_spherical3`,
/// `sphere2`, `sphere3`.
pub fn catalog(name: &str) -> Result<ConnectionChart> {
    if let Some(rest) = name.strip_prefix("flat_cartesian(") {
        let n: usize = rest
            .strip_suffix(')')
            .and_then(|v| v.trim().parse().ok())
            .ok_or_else(|| Error::UnknownGeometry(name.to_string()))?;
        if n < 2 {
            return Err(Error::UnknownGeometry(name.to_string()));
        }
        return Ok(flat_cartesian(n));
    }
    match name {
        "euclidean_polar" => Ok(euclidean_polar()),
        "euclidean_spherical3" => Ok(euclidean_spherical3()),
        "sphere2" => Ok(sphere2()),
        "sphere3" => Ok(sphere3()),
        _ => Err(Error::UnknownGeometry(name.to_string())),
    }
}

pub fn catalog_names() -> &'static [&'static str] {
    &[
        "flat_cartesian(2)",
        "flat_cartesian(3)",
        "euclidean_polar",
        "euclidean_spherical3",
        "sphere2",
        "sphere3",
    ]
}

/// A coordinate box per catalog chart on which random sampling is safe
/// (clear of coordinate singularities).
pub fn catalog_sample_box(name: &str) -> Result<Vec<[f64; 2]>> {
    if name.starts_with("flat_cartesian(") {
        let chart = catalog(name)?;
        return Ok(vec![[-2.0, 2.0]; chart.dim()]);
    }
    match name {
        "euclidean_polar" => Ok(vec![[0.3, 3.0], [-3.0, 3.0]]),
        "euclidean_spherical3" => Ok(vec![[0.3, 3.0], [0.4, 2.7], [-3.0, 3.0]]),
        "sphere2" => Ok(vec![[0.4, 2.7], [-3.0, 3.0]]),
        "sphere3" => Ok(vec![[0.4, 2.7], [0.4, 2.7], [-3.0, 3.0]]),
        _ => Err(Error::UnknownGeometry(name.to_string())),
    }
}

pub fn flat_cartesian(n: usize) -> ConnectionChart {
    ConnectionChart::new(
        n,
        format!("flat_cartesian({n})"),
        Arc::new(move |_x: &[f64]| Ok(Tensor3::zeros(n))),
        Some(Arc::new(move |_x: &[f64]| Ok(Tensor4::zeros(n)))),
        Arc::new(|_x| true),
    )
}

/// Flat plane in polar coordinates (r, θ).
pub fn euclidean_polar() -> ConnectionChart {
    let gamma: GammaFn = Arc::new(|x: &[f64]| {
        let r = x[0];
        let mut g = Tensor3::zeros(2);
        g[(0, 1, 1)] = -r;
        g[(1, 0, 1)] = 1.0 / r;
        g[(1, 1, 0)] = 1.0 / r;
        Ok(g)
    });
    let dgamma: DGammaFn = Arc::new(|x: &[f64]| {
        let r = x[0];
        let mut d = Tensor4::zeros(2);
        d[(0, 1, 1, 0)] = -1.0;
        d[(1, 0, 1, 0)] = -1.0 / (r * r);
        d[(1, 1, 0, 0)] = -1.0 / (r * r);
        Ok(d)
    });
    ConnectionChart::new(
        2,
        "euclidean_polar",
        gamma,
        Some(dgamma),
        Arc::new(|x: &[f64]| x[0] > 1e-6),
    )
}

/// Euclidean 3-space in spherical coordinates (r, θ, φ).
pub fn euclidean_spherical3() -> ConnectionChart {
    let gamma: GammaFn = Arc::new(|x: &[f64]| {
        let (r, th) = (x[0], x[1]);
        let (st, ct) = th.sin_cos();
        let mut g = Tensor3::zeros(3);
        g[(0, 1, 1)] = -r;
        g[(0, 2, 2)] = -r * st * st;
        g[(1, 0, 1)] = 1.0 / r;
        g[(1, 1, 0)] = 1.0 / r;
        g[(1, 2, 2)] = -st * ct;
        g[(2, 0, 2)] = 1.0 / r;
        g[(2, 2, 0)] = 1.0 / r;
        g[(2, 1, 2)] = ct / st;
        g[(2, 2, 1)] = ct / st;
        Ok(g)
    });
    let dgamma: DGammaFn = Arc::new(|x: &[f64]| {
        let (r, th) = (x[0], x[1]);
        let st = th.sin();
        let c2t = (2.0 * th).cos();
        let s2t = (2.0 * th).sin();
        let mut d = Tensor4::zeros(3);
        d[(0, 1, 1, 0)] = -1.0;
        d[(0, 2, 2, 0)] = -st * st;
        d[(0, 2, 2, 1)] = -r * s2t;
        d[(1, 0, 1, 0)] = -1.0 / (r * r);
        d[(1, 1, 0, 0)] = -1.0 / (r * r);
        d[(1, 2, 2, 1)] = -c2t;
        d[(2, 0, 2, 0)] = -1.0 / (r * r);
        d[(2, 2, 0, 0)] = -1.0 / (r * r);
        d[(2, 1, 2, 1)] = -1.0 / (st * st);
        d[(2, 2, 1, 1)] = -1.0 / (st * st);
        Ok(d)
    });
    ConnectionChart::new(
        3,
        "euclidean_spherical3",
        gamma,
        Some(dgamma),
        Arc::new(|x: &[f64]| x[0] > 1e-6 && x[1].sin().abs() > 1e-6),
    )
}

/// Round unit 2-sphere in (φ, θ), φ the colatitude.
pub fn sphere2() -> ConnectionChart {
    let gamma: GammaFn = Arc::new(|x: &[f64]| {
        let (sp, cp) = x[0].sin_cos();
        let mut g = Tensor3::zeros(2);
        g[(0, 1, 1)] = -sp * cp;
        g[(1, 0, 1)] = cp / sp;
        g[(1, 1, 0)] = cp / sp;
        Ok(g)
    });
    let dgamma: DGammaFn = Arc::new(|x: &[f64]| {
        let sp = x[0].sin();
        let c2p = (2.0 * x[0]).cos();
        let mut d = Tensor4::zeros(2);
        d[(0, 1, 1, 0)] = -c2p;
        d[(1, 0, 1, 0)] = -1.0 / (sp * sp);
        d[(1, 1, 0, 0)] = -1.0 / (sp * sp);
        Ok(d)
    });
    ConnectionChart::new(
        2,
        "sphere2",
        gamma,
        Some(dgamma),
        Arc::new(|x: &[f64]| x[0].sin().abs() > 1e-6),
    )
}

/// Round unit 3-sphere in (χ, φ, θ).
pub fn sphere3() -> ConnectionChart {
    let gamma: GammaFn = Arc::new(|x: &[f64]| {
        let (chi, ph) = (x[0], x[1]);
        let (sc, cc) = chi.sin_cos();
        let (sp, cp) = ph.sin_cos();
        let mut g = Tensor3::zeros(3);
        g[(0, 1, 1)] = -sc * cc;
        g[(0, 2, 2)] = -sc * cc * sp * sp;
        g[(1, 0, 1)] = cc / sc;
        g[(1, 1, 0)] = cc / sc;
        g[(1, 2, 2)] = -sp * cp;
        g[(2, 0, 2)] = cc / sc;
        g[(2, 2, 0)] = cc / sc;
        g[(2, 1, 2)] = cp / sp;
        g[(2, 2, 1)] = cp / sp;
        Ok(g)
    });
    let dgamma: DGammaFn = Arc::new(|x: &[f64]| {
        let (chi, ph) = (x[0], x[1]);
        let sc = chi.sin();
        let sp = ph.sin();
        let c2c = (2.0 * chi).cos();
        let s2c = (2.0 * chi).sin();
        let c2p = (2.0 * ph).cos();
        let s2p = (2.0 * ph).sin();
        let mut d = Tensor4::zeros(3);
        d[(0, 1, 1, 0)] = -c2c;
        d[(0, 2, 2, 0)] = -c2c * sp * sp;
        d[(0, 2, 2, 1)] = -0.5 * s2c * s2p;
        d[(1, 0, 1, 0)] = -1.0 / (sc * sc);
        d[(1, 1, 0, 0)] = -1.0 / (sc * sc);
        d[(1, 2, 2, 1)] = -c2p;
        d[(2, 0, 2, 0)] = -1.0 / (sc * sc);
        d[(2, 2, 0, 0)] = -1.0 / (sc * sc);
        d[(2, 1, 2, 1)] = -1.0 / (sp * sp);
        d[(2, 2, 1, 1)] = -1.0 / (sp * sp);
        Ok(d)
    });
    ConnectionChart::new(
        3,
        "sphere3",
        gamma,
        Some(dgamma),
        Arc::new(|x: &[f64]| x[0].sin().abs() > 1e-6 && x[1].sin().abs() > 1e-6),
    )
}

/// One monomial of a user-defined polynomial connection:
/// `Γ^mu_{nu sigma} += coeff * Π_i x_i^{exponents[i]}`, with `nu <= sigma`
/// required (the symmetric slot is filled automatically).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GammaTerm {
    pub mu: usize,
    pub nu: usize,
    pub sigma: usize,
    pub exponents: Vec<u32>,
    pub coeff: f64,
}

/// Build a torsion-free chart from polynomial Christoffel data, with
/// analytic derivatives obtained by term differentiation.
pub fn polynomial_chart(dim: usize, terms: Vec<GammaTerm>) -> Result<ConnectionChart> {
    if dim < 2 {
        return Err(Error::Config("polynomial chart needs dim >= 2".into()));
    }
    for t in &terms {
        if t.mu >= dim || t.nu >= dim || t.sigma >= dim {
            return Err(Error::Config(format!(
                "gamma term indices ({},{},{}) out of range for dim {}",
                t.mu, t.nu, t.sigma, dim
            )));
        }
        if t.nu > t.sigma {
            return Err(Error::Config(
                "gamma terms must have nu <= sigma; the symmetric entry is implied".into(),
            ));
        }
        if t.exponents.len() != dim {
            return Err(Error::Config(format!(
                "gamma term exponents must have length {dim}"
            )));
        }
    }

    fn monomial(x: &[f64], exps: &[u32]) -> f64 {
        x.iter()
            .zip(exps)
            .map(|(xi, &e)| xi.powi(e as i32))
            .product()
    }

    let terms_g = terms.clone();
    let gamma: GammaFn = Arc::new(move |x: &[f64]| {
        let mut g = Tensor3::zeros(x.len());
        for t in &terms_g {
            let v = t.coeff * monomial(x, &t.exponents);
            g[(t.mu, t.nu, t.sigma)] += v;
            if t.nu != t.sigma {
                g[(t.mu, t.sigma, t.nu)] += v;
            }
        }
        Ok(g)
    });

    let terms_d = terms;
    let n = dim;
    let dgamma: DGammaFn = Arc::new(move |x: &[f64]| {
        let mut d = Tensor4::zeros(n);
        for t in &terms_d {
            for tau in 0..n {
                let e = t.exponents[tau];
                if e == 0 {
                    continue;
                }
                let mut v = t.coeff * e as f64 * x[tau].powi(e as i32 - 1);
                for (i, (&xi, &ei)) in x.iter().zip(&t.exponents).enumerate() {
                    if i != tau {
                        v *= xi.powi(ei as i32);
                    }
                }
                d[(t.mu, t.nu, t.sigma, tau)] += v;
                if t.nu != t.sigma {
                    d[(t.mu, t.sigma, t.nu, tau)] += v;
                }
            }
        }
        Ok(d)
    });

    Ok(ConnectionChart::new(
        dim,
        "polynomial",
        gamma,
        Some(dgamma),
        Arc::new(|_x| true),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sample_point(name: &str, rng: &mut impl Rng) -> Vec<f64> {
        catalog_sample_box(name)
            .unwrap()
            .iter()
            .map(|[a, b]| rng.random_range(*a..*b))
            .collect()
    }

    #[test]
    fn polar_connection_matches_levi_civita_of_its_metric() {
        let analytic = euclidean_polar();
        let derived = from_metric(&MetricChart::euclidean_polar(), 1e-3);
        let x = [2.0, 0.7];
        let ga = analytic.christoffel(&x).unwrap();
        let gd = derived.christoffel(&x).unwrap();
        for mu in 0..2 {
            for nu in 0..2 {
                for sg in 0..2 {
                    assert_abs_diff_eq!(ga[(mu, nu, sg)], gd[(mu, nu, sg)], epsilon = 1e-10);
                }
            }
        }
        assert_abs_diff_eq!(ga[(0, 1, 1)], -2.0, epsilon = 1e-14);
        assert_abs_diff_eq!(ga[(1, 0, 1)], 0.5, epsilon = 1e-14);
    }

    #[test]
    fn sphere2_connection_matches_levi_civita_of_its_metric() {
        let analytic = sphere2();
        let derived = from_metric(&MetricChart::sphere2(), 1e-3);
        let x = [1.1, -0.4];
        let ga = analytic.christoffel(&x).unwrap();
        let gd = derived.christoffel(&x).unwrap();
        for mu in 0..2 {
            for nu in 0..2 {
                for sg in 0..2 {
                    assert_abs_diff_eq!(ga[(mu, nu, sg)], gd[(mu, nu, sg)], epsilon = 1e-10);
                }
            }
        }
        assert_abs_diff_eq!(ga[(0, 1, 1)], -(1.1f64.sin() * 1.1f64.cos()), epsilon = 1e-14);
        assert_abs_diff_eq!(ga[(1, 0, 1)], 1.0 / 1.1f64.tan(), epsilon = 1e-14);
    }

    #[test]
    fn spherical3_and_sphere3_match_their_metrics() {
        for (analytic, metric) in [
            (euclidean_spherical3(), MetricChart::euclidean_spherical3()),
            (sphere3(), MetricChart::sphere3()),
        ] {
            let derived = from_metric(&metric, 1e-3);
            let x = [1.3, 0.9, 0.5];
            let ga = analytic.christoffel(&x).unwrap();
            let gd = derived.christoffel(&x).unwrap();
            for mu in 0..3 {
                for nu in 0..3 {
                    for sg in 0..3 {
                        assert_abs_diff_eq!(
                            ga[(mu, nu, sg)],
                            gd[(mu, nu, sg)],
                            epsilon = 1e-9
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn euclidean_metric_in_cartesian_coordinates_is_flat() {
        let chart = from_metric(&MetricChart::euclidean_cartesian(3), 1e-3);
        let g = chart.christoffel(&[0.2, -1.0, 0.5]).unwrap();
        assert!(g.sup_norm() <= 1e-13);
    }

    #[test]
    fn fd_gamma_derivative_on_flat_chart_is_zero() {
        let chart = flat_cartesian(3);
        let d = dgamma_fd(&chart, &[0.3, 0.1, -0.2], 1e-3).unwrap();
        assert_eq!(d.sup_norm(), 0.0);
    }

    #[test]
    fn fd_gamma_derivative_recovers_polar_value() {
        let chart = euclidean_polar();
        let d = dgamma_fd(&chart, &[2.0, 0.0], 1e-3).unwrap();
        assert_abs_diff_eq!(d[(0, 1, 1, 0)], -1.0, epsilon = 1e-10);
    }

    #[test]
    fn fd_gamma_derivative_converges_at_fourth_order() {
        let chart = sphere2();
        let x = [0.9, 0.3];
        let exact = chart.dchristoffel(&x).unwrap();
        let err = |h: f64| dgamma_fd(&chart, &x, h).unwrap().sub(&exact).sup_norm();
        let e1 = err(2e-2);
        let e2 = err(1e-2);
        let e3 = err(5e-3);
        assert!(e1 / e2 > 12.0, "ratio {} not 4th order", e1 / e2);
        assert!(e2 / e3 > 12.0, "ratio {} not 4th order", e2 / e3);
    }

    #[test]
    fn dgamma_fd_fails_when_stencil_escapes_domain() {
        let chart = euclidean_polar();
        // r = 1e-4 leaves no room for the 2h stencil at h = 1e-3
        match dgamma_fd(&chart, &[1e-4, 0.0], 1e-3) {
            Err(Error::DomainEscape { .. }) => {}
            other => panic!("expected DomainEscape, got {other:?}"),
        }
    }

    #[test]
    fn curvature_vanishes_on_flat_family_charts() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for name in ["flat_cartesian(2)", "euclidean_polar", "euclidean_spherical3"] {
            let chart = catalog(name).unwrap();
            for _ in 0..20 {
                let x = sample_point(name, &mut rng);
                let r = curvature(&chart, &x).unwrap();
                assert!(
                    r.sup_norm() <= 1e-6,
                    "{name} curvature {} at {x:?}",
                    r.sup_norm()
                );
            }
        }
    }

    #[test]
    fn sphere_curvature_has_unit_sectional_value_on_equator() {
        let chart = sphere2();
        let r = curvature(&chart, &[std::f64::consts::FRAC_PI_2, 0.3]).unwrap();
        assert_abs_diff_eq!(r[(0, 1, 0, 1)], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn curvature_is_antisymmetric_in_last_index_pair() {
        let chart = sphere3();
        let x = [1.0, 1.2, 0.4];
        let r = curvature(&chart, &x).unwrap();
        for mu in 0..3 {
            for nu in 0..3 {
                for rho in 0..3 {
                    for sg in 0..3 {
                        assert_abs_diff_eq!(
                            r[(mu, nu, rho, sg)],
                            -r[(mu, nu, sg, rho)],
                            epsilon = 1e-12
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn catalog_charts_are_torsion_free_and_so_are_their_derivatives() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for name in catalog_names() {
            let chart = catalog(name).unwrap();
            let n = chart.dim();
            for _ in 0..100 {
                let x = sample_point(name, &mut rng);
                let g = chart.christoffel(&x).unwrap();
                let d = chart.dchristoffel(&x).unwrap();
                for mu in 0..n {
                    for nu in 0..n {
                        for sg in 0..n {
                            assert_eq!(g[(mu, nu, sg)], g[(mu, sg, nu)], "{name} at {x:?}");
                            for tau in 0..n {
                                assert_eq!(
                                    d[(mu, nu, sg, tau)],
                                    d[(mu, sg, nu, tau)],
                                    "{name} dgamma at {x:?}"
                                );
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn metric_built_connection_is_torsion_free_to_twelve_digits() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let chart = from_metric(&MetricChart::sphere2(), 1e-3);
        for _ in 0..100 {
            let x = sample_point("sphere2", &mut rng);
            let g = chart.christoffel(&x).unwrap();
            for mu in 0..2 {
                assert_abs_diff_eq!(g[(mu, 0, 1)], g[(mu, 1, 0)], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn singular_metric_is_reported() {
        let metric = MetricChart::diagonal(
            2,
            "degenerate",
            Arc::new(|x: &[f64]| vec![x[0], 1.0]),
            Arc::new(|_| true),
        );
        let chart = from_metric(&metric, 1e-4);
        match chart.christoffel(&[0.0, 1.0]) {
            Err(Error::SingularMetric { .. }) => {}
            other => panic!("expected SingularMetric, got {other:?}"),
        }
    }

    #[test]
    fn catalog_rejects_unknown_names() {
        match catalog("schwarzschild") {
            Err(Error::UnknownGeometry(n)) => assert_eq!(n, "schwarzschild"),
            other => panic!("expected UnknownGeometry, got {other:?}"),
        }
        assert_eq!(catalog("flat_cartesian(3)").unwrap().dim(), 3);
    }

    #[test]
    fn polynomial_chart_matches_hand_evaluation_and_differentiation() {
        // Gamma^0_{01} = Gamma^0_{10} = 2 x0 x1^2
        let chart = polynomial_chart(
            2,
            vec![GammaTerm {
                mu: 0,
                nu: 0,
                sigma: 1,
                exponents: vec![1, 2],
                coeff: 2.0,
            }],
        )
        .unwrap();
        let x = [1.5, -0.5];
        let g = chart.christoffel(&x).unwrap();
        assert_abs_diff_eq!(g[(0, 0, 1)], 2.0 * 1.5 * 0.25, epsilon = 1e-15);
        assert_eq!(g[(0, 0, 1)], g[(0, 1, 0)]);
        let d = chart.dchristoffel(&x).unwrap();
        assert_abs_diff_eq!(d[(0, 0, 1, 0)], 2.0 * 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(d[(0, 0, 1, 1)], 2.0 * 1.5 * 2.0 * -0.5, epsilon = 1e-15);

        let fd = dgamma_fd(&chart, &x, 1e-3).unwrap();
        assert_abs_diff_eq!(fd[(0, 0, 1, 1)], d[(0, 0, 1, 1)], epsilon = 1e-9);
    }

    #[test]
    fn polynomial_chart_rejects_bad_terms() {
        let bad = polynomial_chart(
            2,
            vec![GammaTerm {
                mu: 0,
                nu: 1,
                sigma: 0,
                exponents: vec![0, 0],
                coeff: 1.0,
            }],
        );
        assert!(matches!(bad, Err(Error::Config(_))));
    }
}
