//! Geodesics of a connection chart: initial-value integration, residual
//! checks, parallel transport of frames, and the exponential map.

use crate::connection::ConnectionChart;
use crate::error::{Error, Result};
use crate::integrate::{self, IntegrateOpts, OdeProblem, Trajectory};
use crate::report::ResidualReport;
use crate::tensor::norm;

/// A solved geodesic: trajectory over the state `(X^μ, Ẋ^μ)` together with
/// the chart it lives in.
#[derive(Clone, Debug)]
pub struct GeodesicPath {
    pub chart: ConnectionChart,
    pub trajectory: Trajectory,
}

impl GeodesicPath {
    pub fn dim(&self) -> usize {
        self.chart.dim()
    }

    pub fn span(&self) -> [f64; 2] {
        self.trajectory.span()
    }

    pub fn position(&self, s: f64) -> Vec<f64> {
        self.trajectory.eval(s)[..self.dim()].to_vec()
    }

    pub fn velocity(&self, s: f64) -> Vec<f64> {
        self.trajectory.eval(s)[self.dim()..].to_vec()
    }

    pub fn state(&self, s: f64) -> (Vec<f64>, Vec<f64>) {
        let y = self.trajectory.eval(s);
        let n = self.dim();
        (y[..n].to_vec(), y[n..].to_vec())
    }

    /// Ẍ from dense-output differentiation of the stored velocity, not from
    /// re-evaluating the geodesic right-hand side.
    pub fn acceleration(&self, s: f64) -> Vec<f64> {
        self.trajectory.eval_deriv(s)[self.dim()..].to_vec()
    }
}

fn geodesic_rhs<'a>(
    chart: &'a ConnectionChart,
) -> impl Fn(f64, &[f64], &mut [f64]) -> Result<()> + 'a {
    let n = chart.dim();
    move |_s: f64, y: &[f64], dy: &mut [f64]| {
        let (x, v) = y.split_at(n);
        let g = chart.christoffel(x)?;
        dy[..n].copy_from_slice(v);
        for mu in 0..n {
            let mut a = 0.0;
            for nu in 0..n {
                for sg in 0..n {
                    a += g[(mu, nu, sg)] * v[nu] * v[sg];
                }
            }
            dy[n + mu] = -a;
        }
        Ok(())
    }
}

/// Solve `Ẍ^μ + Γ^μ_{νσ}(X) Ẋ^ν Ẋ^σ = 0` from `(x0, v0)` over `s_span`.
pub fn integrate_geodesic(
    chart: &ConnectionChart,
    x0: &[f64],
    v0: &[f64],
    s_span: [f64; 2],
    opts: &IntegrateOpts,
) -> Result<GeodesicPath> {
    let n = chart.dim();
    if x0.len() != n || v0.len() != n {
        return Err(Error::InvalidInput(format!(
            "expected {n}-dimensional initial data"
        )));
    }
    if norm(v0) == 0.0 {
        return Err(Error::InvalidInput(
            "geodesics are regular curves; v0 must be nonzero".into(),
        ));
    }
    if !chart.contains(x0) {
        return Err(Error::DomainEscape { point: x0.to_vec() });
    }
    let rhs = geodesic_rhs(chart);
    let mut y0 = x0.to_vec();
    y0.extend_from_slice(v0);
    let problem = OdeProblem {
        state_dim: 2 * n,
        rhs: &rhs,
        s_span,
        y0,
    };
    let trajectory = integrate::solve(&problem, opts)?;
    Ok(GeodesicPath {
        chart: chart.clone(),
        trajectory,
    })
}

/// Sup over interior samples of `|Ẍ + Γ(X) Ẋ Ẋ|`, with Ẍ taken from the
/// dense-output derivative so the report is an independent check of the
/// stored path.
pub fn geodesic_residual(path: &GeodesicPath, samples: usize) -> Result<ResidualReport> {
    let n = path.dim();
    let mut entries = Vec::with_capacity(samples);
    for s in integrate::uniform_samples(path.span(), samples) {
        let (x, v) = path.state(s);
        let a = path.acceleration(s);
        let g = path.chart.christoffel(&x)?;
        let mut res = vec![0.0; n];
        for mu in 0..n {
            let mut acc = a[mu];
            for nu in 0..n {
                for sg in 0..n {
                    acc += g[(mu, nu, sg)] * v[nu] * v[sg];
                }
            }
            res[mu] = acc;
        }
        entries.push((s, res));
    }
    Ok(ResidualReport::from_samples("geodesic", &entries))
}

/// Parallel-transported vector fields along a geodesic.
///
/// The frame is integrated jointly with the geodesic state in one ODE
/// system, so no interpolation error enters through Ẋ; `base` is the jointly
/// integrated copy of the input geodesic.
#[derive(Clone, Debug)]
pub struct FrameField {
    pub base: GeodesicPath,
    pub vectors: Vec<Trajectory>,
}

impl FrameField {
    pub fn k(&self) -> usize {
        self.vectors.len()
    }

    pub fn vector(&self, i: usize, s: f64) -> Vec<f64> {
        self.vectors[i].eval(s)
    }
}

fn transport_rhs<'a>(
    chart: &'a ConnectionChart,
    k: usize,
) -> impl Fn(f64, &[f64], &mut [f64]) -> Result<()> + 'a {
    let n = chart.dim();
    move |_s: f64, y: &[f64], dy: &mut [f64]| {
        let x = &y[..n];
        let v = &y[n..2 * n];
        let g = chart.christoffel(x)?;
        dy[..n].copy_from_slice(v);
        for mu in 0..n {
            let mut a = 0.0;
            for nu in 0..n {
                for sg in 0..n {
                    a += g[(mu, nu, sg)] * v[nu] * v[sg];
                }
            }
            dy[n + mu] = -a;
        }
        for i in 0..k {
            let e = &y[(2 + i) * n..(3 + i) * n];
            for mu in 0..n {
                let mut a = 0.0;
                for nu in 0..n {
                    for sg in 0..n {
                        a += g[(mu, nu, sg)] * v[nu] * e[sg];
                    }
                }
                dy[(2 + i) * n + mu] = -a;
            }
        }
        Ok(())
    }
}

/// Transport `e0` (given at the start of `path`) along the whole path.
pub fn parallel_transport(
    path: &GeodesicPath,
    e0: &[Vec<f64>],
    opts: &IntegrateOpts,
) -> Result<FrameField> {
    parallel_transport_from(path, path.span()[0], e0, opts)
}

/// Transport `e0` given at `X(s0)` for an interior anchor `s0`, integrating
/// towards both endpoints of the path's span.
pub fn parallel_transport_from(
    path: &GeodesicPath,
    s0: f64,
    e0: &[Vec<f64>],
    opts: &IntegrateOpts,
) -> Result<FrameField> {
    let n = path.dim();
    let k = e0.len();
    let chart = &path.chart;
    for e in e0 {
        if e.len() != n || !e.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidInput("frame vectors must be finite".into()));
        }
    }
    let [a, b] = path.span();
    if !(a..=b).contains(&s0) {
        return Err(Error::InvalidInput("transport anchor outside span".into()));
    }

    let (x0, v0) = path.state(s0);
    let mut y0 = x0;
    y0.extend_from_slice(&v0);
    for e in e0 {
        y0.extend_from_slice(e);
    }

    let rhs = transport_rhs(chart, k);
    let dim = (2 + k) * n;
    let run = |span: [f64; 2]| -> Result<Trajectory> {
        let problem = OdeProblem {
            state_dim: dim,
            rhs: &rhs,
            s_span: span,
            y0: y0.clone(),
        };
        integrate::solve(&problem, opts)
    };

    let eps = 1e-12 * (b - a).abs().max(1.0);
    let joint = if s0 - a <= eps {
        run([a, b])?
    } else if b - s0 <= eps {
        run([s0, a])?
    } else {
        let left = run([s0, a])?;
        let right = run([s0, b])?;
        left.concat(&right)?
    };

    let base = GeodesicPath {
        chart: chart.clone(),
        trajectory: joint.project(0, 2 * n),
    };
    let vectors = (0..k).map(|i| joint.project((2 + i) * n, n)).collect();
    Ok(FrameField { base, vectors })
}

/// `exp(base, v)`: endpoint at parameter 1 of the geodesic with initial
/// data `(base, v)`. `exp(base, 0) = base`.
pub fn exp_map(
    chart: &ConnectionChart,
    base: &[f64],
    v: &[f64],
    opts: &IntegrateOpts,
) -> Result<Vec<f64>> {
    if norm(v) == 0.0 {
        if !chart.contains(base) {
            return Err(Error::DomainEscape { point: base.to_vec() });
        }
        return Ok(base.to_vec());
    }
    let path = integrate_geodesic(chart, base, v, [0.0, 1.0], opts)?;
    Ok(path.position(1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::connection::catalog;
    use crate::tensor::sub;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn flat2() -> ConnectionChart {
        catalog("flat_cartesian(2)").unwrap()
    }

    #[test]
    fn flat_geodesic_is_a_straight_line() {
        let path = integrate_geodesic(
            &flat2(),
            &[0.0, 0.0],
            &[1.0, 0.0],
            [0.0, 1.0],
            &IntegrateOpts::default(),
        )
        .unwrap();
        for s in [0.2, 0.5, 0.9] {
            let x = path.position(s);
            assert_abs_diff_eq!(x[0], s, epsilon = 1e-12);
            assert_abs_diff_eq!(x[1], 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn polar_geodesic_tracks_the_cartesian_line_through_zero_one() {
        // The straight line (s, 1) in Cartesian coordinates, expressed in
        // polar coordinates: r = sqrt(1 + s^2), theta = atan2(1, s).
        let chart = catalog("euclidean_polar").unwrap();
        let path = integrate_geodesic(
            &chart,
            &[1.0, FRAC_PI_2],
            &[0.0, -1.0],
            [0.0, 5.0],
            &IntegrateOpts::default(),
        )
        .unwrap();
        for s in [0.5, 1.0, 2.5, 5.0] {
            let x = path.position(s);
            assert_abs_diff_eq!(x[0], (1.0 + s * s).sqrt(), epsilon = 1e-8);
            assert_abs_diff_eq!(x[1], 1.0f64.atan2(s), epsilon = 1e-8);
        }
    }

    #[test]
    fn sphere_equator_closes_after_full_revolution() {
        let chart = catalog("sphere2").unwrap();
        let path = integrate_geodesic(
            &chart,
            &[FRAC_PI_2, 0.0],
            &[0.0, 1.0],
            [0.0, 2.0 * PI],
            &IntegrateOpts::default(),
        )
        .unwrap();
        let x = path.position(2.0 * PI);
        assert_abs_diff_eq!(x[0], FRAC_PI_2, epsilon = 1e-6);
        assert_abs_diff_eq!(x[1], 2.0 * PI, epsilon = 1e-6);
    }

    #[test]
    fn equator_residual_is_within_integration_budget() {
        let chart = catalog("sphere2").unwrap();
        let path = integrate_geodesic(
            &chart,
            &[FRAC_PI_2, 0.0],
            &[0.2, 1.0],
            [0.0, PI],
            &IntegrateOpts::default(),
        )
        .unwrap();
        let report = geodesic_residual(&path, 200).unwrap();
        assert!(report.sup <= 1e-7, "residual {}", report.sup);
    }

    #[test]
    fn straight_line_residual_is_zero() {
        let path = integrate_geodesic(
            &flat2(),
            &[0.0, 0.0],
            &[1.0, 0.5],
            [0.0, 2.0],
            &IntegrateOpts::default(),
        )
        .unwrap();
        let report = geodesic_residual(&path, 100).unwrap();
        assert_eq!(report.sup, 0.0);
    }

    #[test]
    fn residual_detects_a_corrupted_path() {
        // A straight line with a 1e-3 sin(s) wobble written into the nodes.
        let s: Vec<f64> = (0..=100).map(|k| 0.02 * k as f64).collect();
        let y: Vec<Vec<f64>> = s
            .iter()
            .map(|&s| vec![s + 1e-3 * s.sin(), 0.0, 1.0 + 1e-3 * s.cos(), 0.0])
            .collect();
        let dy: Vec<Vec<f64>> = s
            .iter()
            .map(|&s| vec![1.0 + 1e-3 * s.cos(), 0.0, -1e-3 * s.sin(), 0.0])
            .collect();
        let path = GeodesicPath {
            chart: flat2(),
            trajectory: Trajectory::new(s, y, dy).unwrap(),
        };
        let report = geodesic_residual(&path, 100).unwrap();
        assert!(report.sup >= 1e-4, "residual {}", report.sup);
    }

    #[test]
    fn flat_transport_is_constant() {
        let path = integrate_geodesic(
            &flat2(),
            &[0.0, 0.0],
            &[1.0, 0.0],
            [0.0, 2.0],
            &IntegrateOpts::default(),
        )
        .unwrap();
        let frame = parallel_transport(&path, &[vec![0.3, -0.8]], &IntegrateOpts::default()).unwrap();
        let e = frame.vector(0, 1.7);
        assert_abs_diff_eq!(e[0], 0.3, epsilon = 1e-12);
        assert_abs_diff_eq!(e[1], -0.8, epsilon = 1e-12);
    }

    #[test]
    fn polar_transport_is_constant_in_cartesian_components() {
        let chart = catalog("euclidean_polar").unwrap();
        let path = integrate_geodesic(
            &chart,
            &[1.0, FRAC_PI_2],
            &[0.0, -1.0],
            [0.0, 4.0],
            &IntegrateOpts::default(),
        )
        .unwrap();
        // Transport the unit radial vector at s=0 and push every sample back
        // to Cartesian components with the polar-to-Cartesian Jacobian.
        let frame =
            parallel_transport(&path, &[vec![1.0, 0.0]], &IntegrateOpts::default()).unwrap();
        let cartesian = |s: f64| {
            let x = frame.base.position(s);
            let e = frame.vector(0, s);
            let (r, th) = (x[0], x[1]);
            vec![
                th.cos() * e[0] - r * th.sin() * e[1],
                th.sin() * e[0] + r * th.cos() * e[1],
            ]
        };
        let at0 = cartesian(0.0);
        for s in [1.0, 2.5, 4.0] {
            let c = cartesian(s);
            assert_abs_diff_eq!(c[0], at0[0], epsilon = 1e-8);
            assert_abs_diff_eq!(c[1], at0[1], epsilon = 1e-8);
        }
    }

    #[test]
    fn equator_transport_fixes_the_normal() {
        let chart = catalog("sphere2").unwrap();
        let path = integrate_geodesic(
            &chart,
            &[FRAC_PI_2, 0.0],
            &[0.0, 1.0],
            [0.0, PI],
            &IntegrateOpts::default(),
        )
        .unwrap();
        let frame =
            parallel_transport(&path, &[vec![1.0, 0.0]], &IntegrateOpts::default()).unwrap();
        let e = frame.vector(0, PI);
        assert_abs_diff_eq!(e[0], 1.0, epsilon = 1e-8);
        assert_abs_diff_eq!(e[1], 0.0, epsilon = 1e-8);
    }

    #[test]
    fn transport_is_linear_in_the_initial_vector() {
        let chart = catalog("sphere2").unwrap();
        let path = integrate_geodesic(
            &chart,
            &[1.0, 0.2],
            &[0.3, 0.9],
            [0.0, 1.5],
            &IntegrateOpts::default(),
        )
        .unwrap();
        let a = vec![1.0, 0.4];
        let b = vec![-0.2, 0.7];
        let (alpha, beta) = (1.7, -0.6);
        let combo: Vec<f64> = a
            .iter()
            .zip(&b)
            .map(|(x, y)| alpha * x + beta * y)
            .collect();
        let frame = parallel_transport(
            &path,
            &[a.clone(), b.clone(), combo],
            &IntegrateOpts::default(),
        )
        .unwrap();
        for s in [0.5, 1.0, 1.5] {
            let ea = frame.vector(0, s);
            let eb = frame.vector(1, s);
            let ec = frame.vector(2, s);
            for i in 0..2 {
                assert_abs_diff_eq!(ec[i], alpha * ea[i] + beta * eb[i], epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn transport_preserves_frame_independence() {
        let chart = catalog("sphere2").unwrap();
        let path = integrate_geodesic(
            &chart,
            &[1.2, 0.0],
            &[0.1, 1.0],
            [0.0, 2.0],
            &IntegrateOpts::default(),
        )
        .unwrap();
        let frame =
            parallel_transport(&path, &[vec![1.0, 0.0]], &IntegrateOpts::default()).unwrap();
        for s in integrate::uniform_samples([0.0, 2.0], 20) {
            let v = frame.base.velocity(s);
            let e = frame.vector(0, s);
            let det = v[0] * e[1] - v[1] * e[0];
            assert!(det.abs() > 0.05, "frame degenerated at s = {s}: det {det}");
        }
    }

    #[test]
    fn affine_reparameterization_lands_on_the_same_endpoint() {
        let chart = catalog("sphere2").unwrap();
        let lambda = 2.5;
        let span = 1.2;
        let a = integrate_geodesic(
            &chart,
            &[1.0, 0.0],
            &[0.2, 1.0],
            [0.0, span],
            &IntegrateOpts::default(),
        )
        .unwrap();
        let b = integrate_geodesic(
            &chart,
            &[1.0, 0.0],
            &[0.2 * lambda, lambda],
            [0.0, span / lambda],
            &IntegrateOpts::default(),
        )
        .unwrap();
        let d = sub(&a.position(span), &b.position(span / lambda));
        assert!(norm(&d) <= 1e-8, "endpoint gap {}", norm(&d));
    }

    #[test]
    fn exp_map_trivial_cases() {
        let chart = catalog("flat_cartesian(3)").unwrap();
        let base = [0.0, 0.0, 0.0];
        assert_eq!(
            exp_map(&chart, &base, &[0.0, 0.0, 0.0], &IntegrateOpts::uncapped()).unwrap(),
            base.to_vec()
        );
        let p = exp_map(&chart, &base, &[1.0, 2.0, 3.0], &IntegrateOpts::uncapped()).unwrap();
        assert_abs_diff_eq!(p[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p[1], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p[2], 3.0, epsilon = 1e-12);
    }

    #[test]
    fn exp_map_walks_half_the_equator() {
        let chart = catalog("sphere2").unwrap();
        let p = exp_map(
            &chart,
            &[FRAC_PI_2, 0.0],
            &[0.0, PI],
            &IntegrateOpts::uncapped(),
        )
        .unwrap();
        assert_abs_diff_eq!(p[0], FRAC_PI_2, epsilon = 1e-8);
        assert_abs_diff_eq!(p[1], PI, epsilon = 1e-8);
    }

    #[test]
    fn transport_from_an_interior_anchor_covers_the_whole_span() {
        let path = integrate_geodesic(
            &flat2(),
            &[0.0, 0.0],
            &[1.0, 0.0],
            [0.0, 2.0],
            &IntegrateOpts::default(),
        )
        .unwrap();
        let frame =
            parallel_transport_from(&path, 0.8, &[vec![0.0, 1.0]], &IntegrateOpts::default())
                .unwrap();
        assert_eq!(frame.base.span(), [0.0, 2.0]);
        let e = frame.vector(0, 0.1);
        assert_abs_diff_eq!(e[1], 1.0, epsilon = 1e-12);
    }
}
