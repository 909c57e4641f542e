//! Fermi charts along a geodesic: a parallel frame spread out by the
//! exponential map.
//!
//! The forward map `f(s, z) = exp_{X(s)}(Σ zⁱ eᵢ(s))` is realized by
//! shooting a fresh geodesic per evaluation with a fixed-step RK4 — a
//! deterministic, smooth function of its inputs, which is what makes the
//! central-difference jets of `f` (and with them the induced connection in
//! Fermi coordinates) behave. The induced connection's coefficients vanish
//! along the axis up to that finite-difference floor, which
//! [`gamma_on_axis`] measures.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::chartmap::{induced_on_source, AffineMap, ChartMap};
use crate::connection::ConnectionChart;
use crate::deviation::{DeviationKind, DeviationPath};
use crate::error::{Error, Result};
use crate::geodesic::{parallel_transport_from, FrameField, GeodesicPath};
use crate::integrate::{uniform_samples, IntegrateOpts, Trajectory};
use crate::report::ResidualReport;
use crate::tensor::{norm, sub, sup};

#[derive(Clone, Debug)]
pub struct FermiOpts {
    /// RK4 steps per exponential-map shot.
    pub shoot_steps: usize,
    /// Finite-difference step for first derivatives of the forward map.
    pub jet_h1: f64,
    /// Finite-difference step for second differences of the forward map.
    pub jet_h2: f64,
    /// Round-trip tolerance certifying injectivity on the probed box.
    pub roundtrip_tol: f64,
    /// Number of probe points per candidate box radius.
    pub probes: usize,
    /// Frame anchor; defaults to 10% into the interval.
    pub s0: Option<f64>,
    /// Give up shrinking the box below this radius.
    pub min_rho: f64,
    pub transport: IntegrateOpts,
}

impl Default for FermiOpts {
    fn default() -> Self {
        FermiOpts {
            shoot_steps: 100,
            jet_h1: 1e-4,
            jet_h2: 5e-3,
            roundtrip_tol: 1e-8,
            probes: 20,
            s0: None,
            min_rho: 1e-4,
            transport: IntegrateOpts::default(),
        }
    }
}

/// Fermi coordinates `(s, z¹, …, z^{n−1})` along a geodesic.
pub struct FermiChart {
    pub ambient: ConnectionChart,
    pub base: GeodesicPath,
    pub frame: FrameField,
    pub interval: [f64; 2],
    pub rho: f64,
    pub s0: f64,
    map: ChartMap,
    /// The ambient connection expressed in Fermi coordinates.
    pub induced: ConnectionChart,
}

fn shoot(chart: &ConnectionChart, x0: &[f64], v0: &[f64], steps: usize) -> Result<Vec<f64>> {
    let n = chart.dim();
    if norm(v0) == 0.0 {
        return Ok(x0.to_vec());
    }
    let h = 1.0 / steps as f64;
    let mut x = x0.to_vec();
    let mut v = v0.to_vec();
    let mut kx = vec![vec![0.0; n]; 4];
    let mut kv = vec![vec![0.0; n]; 4];
    let mut px = vec![0.0; n];
    let mut pv = vec![0.0; n];
    let accel = |x: &[f64], v: &[f64], out: &mut [f64]| -> Result<()> {
        let g = chart.christoffel(x)?;
        for mu in 0..n {
            let mut a = 0.0;
            for nu in 0..n {
                for sg in 0..n {
                    a += g[(mu, nu, sg)] * v[nu] * v[sg];
                }
            }
            out[mu] = -a;
        }
        Ok(())
    };
    for _ in 0..steps {
        for stage in 0..4 {
            let c = match stage {
                0 => 0.0,
                1 | 2 => 0.5,
                _ => 1.0,
            };
            for i in 0..n {
                let (dx, dv) = if stage == 0 {
                    (0.0, 0.0)
                } else {
                    (kx[stage - 1][i], kv[stage - 1][i])
                };
                px[i] = x[i] + c * h * dx;
                pv[i] = v[i] + c * h * dv;
            }
            kx[stage].copy_from_slice(&pv);
            accel(&px, &pv, &mut kv[stage])?;
        }
        for i in 0..n {
            x[i] += h / 6.0 * (kx[0][i] + 2.0 * kx[1][i] + 2.0 * kx[2][i] + kx[3][i]);
            v[i] += h / 6.0 * (kv[0][i] + 2.0 * kv[1][i] + 2.0 * kv[2][i] + kv[3][i]);
        }
        if !x.iter().all(|c| c.is_finite()) {
            return Err(Error::NonFiniteState { s: f64::NAN });
        }
    }
    Ok(x)
}

/// Build a Fermi chart along `base` over `interval ⊂ span(base)`, spanning
/// the complement of the tangent with `frame0` anchored at `s0`.
/// The box radius starts at `rho` and is halved until round trips through
/// the numerical inverse pass, certifying injectivity empirically.
pub fn build_fermi(
    chart: &ConnectionChart,
    base: &GeodesicPath,
    frame0: &[Vec<f64>],
    interval: [f64; 2],
    rho: f64,
    opts: &FermiOpts,
) -> Result<FermiChart> {
    let n = chart.dim();
    if frame0.len() != n - 1 {
        return Err(Error::InvalidInput(format!(
            "need {} frame vectors for dimension {n}",
            n - 1
        )));
    }
    let [lo, hi] = base.span();
    if interval[0] < lo || interval[1] > hi || interval[0] >= interval[1] {
        return Err(Error::InvalidInput(
            "fermi interval must sit inside the base geodesic span".into(),
        ));
    }
    let s0 = opts
        .s0
        .unwrap_or(interval[0] + 0.1 * (interval[1] - interval[0]));

    // The frame plus the tangent must span the whole tangent space.
    let v0 = base.velocity(s0);
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        m[(i, 0)] = v0[i];
        for (j, e) in frame0.iter().enumerate() {
            m[(i, j + 1)] = e[i];
        }
    }
    let scale: f64 = (0..n)
        .map(|j| m.column(j).norm())
        .product();
    if m.determinant().abs() <= 1e-10 * scale.max(1e-300) {
        return Err(Error::DegenerateFrame);
    }

    let frame = parallel_transport_from(base, s0, frame0, &opts.transport)?;

    let fwd_chart = chart.clone();
    let fwd_frame = frame.clone();
    let steps = opts.shoot_steps;
    let forward = Arc::new(move |q: &[f64]| -> Result<Vec<f64>> {
        let s = q[0];
        let z = &q[1..];
        let x = fwd_frame.base.position(s);
        let mut v = vec![0.0; x.len()];
        for (i, zi) in z.iter().enumerate() {
            let e = fwd_frame.vector(i, s);
            for mu in 0..v.len() {
                v[mu] += zi * e[mu];
            }
        }
        shoot(&fwd_chart, &x, &v, steps)
    });

    // Backward seed: nearest axis node, then a least-squares z guess
    // against the frame there.
    let seed_frame = frame.clone();
    let seed = Arc::new(move |p: &[f64]| -> Vec<f64> {
        let traj = &seed_frame.base.trajectory;
        let nvars = p.len();
        let mut best = (f64::INFINITY, traj.nodes()[0]);
        for k in 0..traj.len() {
            let xk = &traj.node_state(k)[..nvars];
            let d = norm(&sub(xk, p));
            if d < best.0 {
                best = (d, traj.nodes()[k]);
            }
        }
        let s = best.1;
        let x = seed_frame.base.position(s);
        let k = seed_frame.k();
        let mut e = DMatrix::zeros(nvars, k);
        for i in 0..k {
            let ei = seed_frame.vector(i, s);
            for mu in 0..nvars {
                e[(mu, i)] = ei[mu];
            }
        }
        let rhs = DVector::from_vec(sub(p, &x));
        let z = e
            .svd(true, true)
            .solve(&rhs, 1e-12)
            .unwrap_or_else(|_| DVector::zeros(k));
        let mut q = vec![s];
        q.extend(z.iter().copied());
        q
    });

    let map = ChartMap::numerical(n, "fermi", forward, opts.jet_h1, opts.jet_h2)
        .with_backward_seed(seed);

    // Shrink the box until every probe round-trips.
    let mut rho = rho;
    let mut rng = ChaCha8Rng::seed_from_u64(0xFE22);
    loop {
        let mut ok = true;
        for _ in 0..opts.probes {
            let s = rng.random_range(interval[0]..interval[1]);
            let mut q = vec![s];
            let mut z2 = 0.0;
            for _ in 1..n {
                let zi = rng.random_range(-rho..rho);
                z2 += zi * zi;
                q.push(zi);
            }
            if z2.sqrt() > rho {
                let f = rho / z2.sqrt() * 0.99;
                for zi in q[1..].iter_mut() {
                    *zi *= f;
                }
            }
            let trip = map
                .forward(&q)
                .and_then(|p| map.backward(&p))
                .map(|back| norm(&sub(&back, &q)));
            match trip {
                Ok(d) if d <= opts.roundtrip_tol => {}
                _ => {
                    ok = false;
                    break;
                }
            }
        }
        if ok {
            break;
        }
        rho *= 0.5;
        if rho < opts.min_rho {
            return Err(Error::InjectivityFailure { rho });
        }
    }

    let induced = induced_on_source(chart, &map);

    Ok(FermiChart {
        ambient: chart.clone(),
        base: frame.base.clone(),
        frame,
        interval,
        rho,
        s0,
        map,
        induced,
    })
}

impl FermiChart {
    pub fn dim(&self) -> usize {
        self.ambient.dim()
    }

    /// `f(s, z)` for `(s, z)` in the certified box.
    pub fn forward(&self, s: f64, z: &[f64]) -> Result<Vec<f64>> {
        if !(self.interval[0]..=self.interval[1]).contains(&s) || norm(z) > self.rho * 1.0001 {
            let mut q = vec![s];
            q.extend_from_slice(z);
            return Err(Error::DomainEscape { point: q });
        }
        let mut q = vec![s];
        q.extend_from_slice(z);
        self.map.forward(&q)
    }

    /// Invert an ambient point into Fermi coordinates `(s, z)`.
    pub fn backward(&self, p: &[f64]) -> Result<Vec<f64>> {
        self.map.backward(p)
    }

    /// The underlying coordinate map, for pullback machinery.
    pub fn map(&self) -> &ChartMap {
        &self.map
    }

    /// The central geodesic `(s, 0, …, 0)` as a path in the induced chart.
    pub fn axis_path(&self, span: [f64; 2], nodes: usize) -> GeodesicPath {
        let n = self.dim();
        let ss: Vec<f64> = (0..nodes)
            .map(|k| span[0] + (span[1] - span[0]) * k as f64 / (nodes - 1) as f64)
            .collect();
        let mut y = vec![0.0; 2 * n];
        y[0] = 0.0;
        y[n] = 1.0;
        let ys: Vec<Vec<f64>> = ss
            .iter()
            .map(|&s| {
                let mut v = y.clone();
                v[0] = s;
                v
            })
            .collect();
        let mut dy = vec![0.0; 2 * n];
        dy[0] = 1.0;
        let dys = vec![dy; nodes];
        GeodesicPath {
            chart: self.induced.clone(),
            trajectory: Trajectory::new(ss, ys, dys).expect("axis grid is monotone"),
        }
    }
}

/// Sup over sampled `s` of the induced connection coefficients on the axis.
/// For a torsion-free ambient connection these vanish up to the
/// finite-difference floor of the numerical jets.
pub fn gamma_on_axis(fc: &FermiChart, samples: usize) -> Result<ResidualReport> {
    let n = fc.dim();
    let mut entries = Vec::with_capacity(samples);
    for s in uniform_samples(fc.interval, samples) {
        let mut q = vec![0.0; n];
        q[0] = s;
        let g = fc.induced.christoffel(&q)?;
        let mut flat = Vec::with_capacity(n * n * n);
        for mu in 0..n {
            for nu in 0..n {
                for sg in 0..n {
                    flat.push(g[(mu, nu, sg)]);
                }
            }
        }
        entries.push((s, flat));
    }
    Ok(ResidualReport::from_samples("gamma_on_axis", &entries))
}

/// Fitted affine transition between two Fermi charts built along the same
/// geodesic with the same initial hyperplane.
#[derive(Clone, Debug, Serialize)]
pub struct FermiTransition {
    /// s̃ = a·s + b
    pub a: f64,
    pub b: f64,
    /// z̃ = T z
    pub t: Vec<Vec<f64>>,
    pub fit_residual: f64,
    /// Constant term of the fitted z-part (should vanish).
    pub z_const_norm: f64,
    /// s-dependence of the fitted z-part (should vanish).
    pub z_s_dependence: f64,
    /// z-dependence of the fitted s-part (should vanish).
    pub s_z_dependence: f64,
}

impl FermiTransition {
    /// The transition as an affine coordinate map.
    pub fn to_affine(&self) -> Result<AffineMap> {
        let n = self.t.len() + 1;
        let mut lambda = DMatrix::zeros(n, n);
        lambda[(0, 0)] = self.a;
        for i in 0..n - 1 {
            for j in 0..n - 1 {
                lambda[(i + 1, j + 1)] = self.t[i][j];
            }
        }
        let mut offset = vec![0.0; n];
        offset[0] = self.b;
        AffineMap::new(lambda, offset)
    }
}

/// Least-squares affine fit of `b.backward ∘ a.forward` over a sample
/// lattice in `a`'s box.
pub fn fermi_transition(
    a: &FermiChart,
    b: &FermiChart,
    s_points: usize,
) -> Result<FermiTransition> {
    let n = a.dim();
    if b.dim() != n {
        return Err(Error::InvalidInput("dimension mismatch".into()));
    }
    let margin = 0.05 * (a.interval[1] - a.interval[0]);
    let span = [a.interval[0] + margin, a.interval[1] - margin];
    let zr = a.rho * 0.5;

    let mut rows: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
    for k in 0..s_points {
        let s = span[0] + (span[1] - span[0]) * k as f64 / (s_points - 1).max(1) as f64;
        let mut zs: Vec<Vec<f64>> = vec![vec![0.0; n - 1]];
        for i in 0..n - 1 {
            for sign in [1.0, -1.0] {
                let mut z = vec![0.0; n - 1];
                z[i] = sign * zr;
                zs.push(z);
            }
        }
        for z in zs {
            let mut q = vec![s];
            q.extend_from_slice(&z);
            let p = match a.map.forward(&q) {
                Ok(p) => p,
                Err(_) => continue,
            };
            match b.map.backward(&p) {
                Ok(qt) => rows.push((q, qt)),
                Err(_) => continue,
            }
        }
    }
    if rows.len() < 2 * (n + 1) {
        return Err(Error::InsufficientOverlap);
    }

    // Fit q̃ = M q + c, one least-squares solve per output component.
    let m_rows = rows.len();
    let mut design = DMatrix::zeros(m_rows, n + 1);
    for (r, (q, _)) in rows.iter().enumerate() {
        for c in 0..n {
            design[(r, c)] = q[c];
        }
        design[(r, n)] = 1.0;
    }
    let svd = design.clone().svd(true, true);
    let mut m_fit = DMatrix::zeros(n, n);
    let mut c_fit = vec![0.0; n];
    for out in 0..n {
        let rhs = DVector::from_iterator(m_rows, rows.iter().map(|(_, qt)| qt[out]));
        let beta = svd
            .solve(&rhs, 1e-13)
            .map_err(|e| Error::InvalidInput(e.to_string()))?;
        for c in 0..n {
            m_fit[(out, c)] = beta[c];
        }
        c_fit[out] = beta[n];
    }

    let mut fit_residual: f64 = 0.0;
    for (q, qt) in &rows {
        for out in 0..n {
            let mut pred = c_fit[out];
            for c in 0..n {
                pred += m_fit[(out, c)] * q[c];
            }
            fit_residual = fit_residual.max((pred - qt[out]).abs());
        }
    }

    let t: Vec<Vec<f64>> = (0..n - 1)
        .map(|i| (0..n - 1).map(|j| m_fit[(i + 1, j + 1)]).collect())
        .collect();
    let z_const_norm = sup(&c_fit[1..]);
    let z_s_dependence = (1..n).map(|i| m_fit[(i, 0)].abs()).fold(0.0, f64::max);
    let s_z_dependence = (1..n).map(|j| m_fit[(0, j)].abs()).fold(0.0, f64::max);

    Ok(FermiTransition {
        a: m_fit[(0, 0)],
        b: c_fit[0],
        t,
        fit_residual,
        z_const_norm,
        z_s_dependence,
        s_z_dependence,
    })
}

/// Express another geodesic as a displacement field `(0, z(s))` off the
/// central geodesic of a Fermi chart. Fails with `NotGraphLike` when the
/// curve cannot be reparameterized by the axis coordinate.
pub fn fermi_xi(fc: &FermiChart, x: &GeodesicPath) -> Result<DeviationPath> {
    let n = fc.dim();
    let traj = &x.trajectory;
    let max_nodes = 160;
    let stride = (traj.len() / max_nodes).max(1);

    let mut ss: Vec<f64> = Vec::new();
    let mut zs: Vec<Vec<f64>> = Vec::new();
    let mut dzds: Vec<Vec<f64>> = Vec::new();
    for k in (0..traj.len()).step_by(stride) {
        let state = traj.node_state(k);
        let (p, pdot) = state.split_at(n);
        let q = fc.map.backward(p)?;
        let (_, j1, _) = fc.map.order2(&q)?;
        let d = j1
            .lu()
            .solve(&DVector::from_vec(pdot.to_vec()))
            .ok_or(Error::SingularJacobian { point: q.clone() })?;
        let sdot = d[0];
        if sdot.abs() <= 1e-9 * d.norm() {
            return Err(Error::NotGraphLike);
        }
        ss.push(q[0]);
        zs.push(q[1..].to_vec());
        dzds.push((1..n).map(|i| d[i] / sdot).collect());
    }
    if ss.len() < 2 {
        return Err(Error::NotGraphLike);
    }
    let increasing = ss.windows(2).all(|w| w[1] > w[0]);
    let decreasing = ss.windows(2).all(|w| w[1] < w[0]);
    if !increasing && !decreasing {
        return Err(Error::NotGraphLike);
    }
    if decreasing {
        ss.reverse();
        zs.reverse();
        dzds.reverse();
    }

    let m = ss.len();
    let mut ys = Vec::with_capacity(m);
    let mut dys = Vec::with_capacity(m);
    for k in 0..m {
        let mut y = vec![0.0; 2 * n];
        let mut dy = vec![0.0; 2 * n];
        for i in 0..n - 1 {
            y[1 + i] = zs[k][i];
            y[n + 1 + i] = dzds[k][i];
            dy[1 + i] = dzds[k][i];
        }
        // second derivative of z by centered differences on the s grid
        let (kl, kr) = if k == 0 {
            (0, 1)
        } else if k == m - 1 {
            (m - 2, m - 1)
        } else {
            (k - 1, k + 1)
        };
        let ds = ss[kr] - ss[kl];
        for i in 0..n - 1 {
            dy[n + 1 + i] = (dzds[kr][i] - dzds[kl][i]) / ds;
        }
        ys.push(y);
        dys.push(dy);
    }

    let base = fc.axis_path([ss[0], *ss.last().unwrap()], m.max(2));
    Ok(DeviationPath {
        base,
        trajectory: Trajectory::new(ss, ys, dys)?,
        kind: DeviationKind::ExactDifference,
    })
}
