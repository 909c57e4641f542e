//! Reproducible numerical experiments with pass/fail verdicts: affine
//! invariance of the generalized Jacobi equation, the cubic-map
//! counterexample in dimension >= 3, and the polar-coordinates displacement
//! example.

use rand::Rng;
use serde::Serialize;

use crate::chartmap::{push_exact, push_geodesic, push_tensorial, AffineMap, ChartMap};
use crate::connection::{catalog, ConnectionChart};
use crate::deviation::{
    exact_by_difference, exact_residual, gje_residual, integrate_gje, op_g, op_j,
};
use crate::error::{Error, Result};
use crate::geodesic::{integrate_geodesic, GeodesicPath};
use crate::integrate::{node_samples, uniform_samples, IntegrateOpts};
use crate::tensor::{norm, sub, sup};

/// Outcome of one experiment, with the residual that decides it.
#[derive(Clone, Debug, Serialize)]
pub struct PropositionVerdict {
    pub name: String,
    pub residual_achieved: f64,
    pub threshold: f64,
    pub passed: bool,
    pub artifacts: Vec<String>,
}

impl PropositionVerdict {
    fn new(name: &str, residual: f64, threshold: f64, extra_pass: bool) -> Self {
        PropositionVerdict {
            name: name.into(),
            residual_achieved: residual,
            threshold,
            passed: residual <= threshold && extra_pass,
            artifacts: Vec::new(),
        }
    }
}

/// Integrate the generalized Jacobi equation along `base`, push the solution
/// tensorially through an affine map, and measure the generalized-Jacobi
/// residual in the transformed chart along the transformed geodesic.
///
/// Affine invariance says this residual is pure discretization noise; the
/// verdict threshold is 1e-7. If the nonlinear equation blows up on the full
/// span, the span is halved (up to five times) before giving up.
pub fn verify_prop3(
    chart: &ConnectionChart,
    base: &GeodesicPath,
    xi0: &[f64],
    xidot0: &[f64],
    map: &AffineMap,
    samples: usize,
    opts: &IntegrateOpts,
) -> Result<PropositionVerdict> {
    let threshold = 1e-7;
    let cmap = map.to_map();
    let pulled = crate::chartmap::pull_connection(chart, &cmap)?;

    let mut base_local = base.clone();
    let mut halvings = 0;
    let dev = loop {
        match integrate_gje(
            &base_local,
            xi0,
            xidot0,
            opts,
        ) {
            Ok(d) => break d,
            Err(Error::StepUnderflow { .. }) if halvings < 5 => {
                halvings += 1;
                let [a, b] = base_local.span();
                let (x0, v0) = base_local.state(a);
                base_local =
                    integrate_geodesic(chart, &x0, &v0, [a, a + 0.5 * (b - a)], opts)?;
            }
            Err(e) => return Err(e),
        }
    };

    let pushed_base = push_geodesic(&base_local, &cmap, &pulled)?;
    let pushed = push_tensorial(&dev, &cmap, &pushed_base)?;
    let sample_s = node_samples(&pushed.trajectory, samples);
    let report = gje_residual(&pushed, &sample_s)?;
    Ok(PropositionVerdict::new("prop3", report.sup, threshold, true))
}

/// Everything the cubic-map counterexample produces.
#[derive(Clone, Debug, Serialize)]
pub struct Prop4Outcome {
    pub verdict: PropositionVerdict,
    /// Generalized-Jacobi operator of the pushed field at the anchor.
    pub g_at_s0: Vec<f64>,
    /// Independent closed-form route to the same vector.
    pub closed_form: Vec<f64>,
    /// Gap between the two routes.
    pub route_gap: f64,
    /// Jacobi operator of the pushed field at the anchor (tensorial rule
    /// does preserve Jacobi fields, so this stays at noise level).
    pub op_j_at_s0: f64,
    /// Sup of |G| over the window [-0.2, 0.2] (nonvanishing check).
    pub window_sup: f64,
    /// Gap between the numerically integrated field and v + s w.
    pub integration_gap: f64,
    pub triple: [Vec<f64>; 3],
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_orthonormal(u: &[f64], v: &[f64], w: &[f64]) -> Result<()> {
    let tol = 1e-10;
    for (label, val) in [
        ("|u|-1", dot(u, u) - 1.0),
        ("|v|-1", dot(v, v) - 1.0),
        ("|w|-1", dot(w, w) - 1.0),
        ("u.v", dot(u, v)),
        ("u.w", dot(u, w)),
        ("v.w", dot(v, w)),
    ] {
        if val.abs() > tol {
            return Err(Error::NonOrthonormalInput(format!("{label} = {val:.3e}")));
        }
    }
    Ok(())
}

/// Gram–Schmidt of three random vectors into an orthonormal triple.
pub fn random_orthonormal_triple(n: usize, rng: &mut impl Rng) -> [Vec<f64>; 3] {
    loop {
        let mut basis: Vec<Vec<f64>> = Vec::new();
        for _ in 0..3 {
            let mut cand: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            for prev in &basis {
                let c = dot(&cand, prev);
                for i in 0..n {
                    cand[i] -= c * prev[i];
                }
            }
            let len = norm(&cand);
            if len < 1e-3 {
                basis.clear();
                break;
            }
            for x in cand.iter_mut() {
                *x /= len;
            }
            basis.push(cand);
        }
        if basis.len() == 3 {
            // Re-orthogonalize once for 1e-10-grade orthonormality.
            for i in 0..3 {
                for j in 0..i {
                    let (head, tail) = basis.split_at_mut(i);
                    let c = dot(&tail[0], &head[j]);
                    for q in 0..n {
                        tail[0][q] -= c * head[j][q];
                    }
                }
                let len = norm(&basis[i]);
                for x in basis[i].iter_mut() {
                    *x /= len;
                }
            }
            let w = basis.pop().unwrap();
            let v = basis.pop().unwrap();
            let u = basis.pop().unwrap();
            return [u, v, w];
        }
    }
}

/// The cubic-map counterexample on flat n-space (n >= 3).
///
/// A generalized Jacobi field with data `(v, w)` at the origin, pushed
/// tensorially through `x̃ = x + ½ x‖x‖²`, fails the equation in the new
/// chart: the operator value at the anchor equals
/// `−[g(2u+w, w) v + g(v, w)(2u+w) + g(v, 2u+w) w]`, which is `−v` for an
/// orthonormal triple.
pub fn verify_prop4(n: usize, triple: Option<[Vec<f64>; 3]>) -> Result<Prop4Outcome> {
    if n < 3 {
        return Err(Error::InvalidInput(
            "the counterexample needs dimension >= 3".into(),
        ));
    }
    let [u, v, w] = match triple {
        Some(t) => t,
        None => {
            let mut u = vec![0.0; n];
            let mut v = vec![0.0; n];
            let mut w = vec![0.0; n];
            u[0] = 1.0;
            v[1] = 1.0;
            w[2] = 1.0;
            [u, v, w]
        }
    };
    if u.len() != n || v.len() != n || w.len() != n {
        return Err(Error::InvalidInput("triple has the wrong dimension".into()));
    }
    check_orthonormal(&u, &v, &w)?;

    let chart = catalog(&format!("flat_cartesian({n})"))?;
    let opts = IntegrateOpts::default();
    let span = [-0.3, 0.3];
    let x0: Vec<f64> = u.iter().map(|c| span[0] * c).collect();
    let base = integrate_geodesic(&chart, &x0, &u, span, &opts)?;

    // GJE data at the left end so that xi(0) = v, xi-dot(0) = w.
    let xi_start: Vec<f64> = (0..n).map(|i| v[i] + span[0] * w[i]).collect();
    let dev = integrate_gje(&base, &xi_start, &w, &opts)?;

    // Flat space: the solution is exactly v + s w; keep the gap as evidence.
    let mut integration_gap: f64 = 0.0;
    for s in uniform_samples(span, 20) {
        let expect: Vec<f64> = (0..n).map(|i| v[i] + s * w[i]).collect();
        integration_gap = integration_gap.max(sup(&sub(&dev.xi(s), &expect)));
    }

    let map = ChartMap::cubic_counterexample(n)?;
    let pulled = crate::chartmap::pull_connection(&chart, &map)?;
    let pushed_base = push_geodesic(&base, &map, &pulled)?;
    let pushed = push_tensorial(&dev, &map, &pushed_base)?;

    let s0 = 0.0;
    let xi = pushed.xi(s0);
    let xid = pushed.xidot(s0);
    let xidd = pushed.xiddot(s0);
    let g_at_s0 = op_g(&pulled, &pushed_base, &xi, &xid, &xidd, s0)?;
    let j_at_s0 = op_j(&pulled, &pushed_base, &xi, &xid, &xidd, s0)?;

    // Closed-form route from the proof's contraction of the cubic tensor.
    let two_u_plus_w: Vec<f64> = (0..n).map(|i| 2.0 * u[i] + w[i]).collect();
    let c1 = dot(&two_u_plus_w, &w);
    let c2 = dot(&v, &w);
    let c3 = dot(&v, &two_u_plus_w);
    let closed_form: Vec<f64> = (0..n)
        .map(|i| -(c1 * v[i] + c2 * two_u_plus_w[i] + c3 * w[i]))
        .collect();

    let route_gap = sup(&sub(&g_at_s0, &closed_form));
    let minus_v_gap = {
        let plus_v: Vec<f64> = (0..n).map(|i| g_at_s0[i] + v[i]).collect();
        norm(&plus_v)
    };

    let mut window_sup: f64 = 0.0;
    for s in uniform_samples([-0.2, 0.2], 21) {
        let xi = pushed.xi(s);
        let xid = pushed.xidot(s);
        let xidd = pushed.xiddot(s);
        let g = op_g(&pulled, &pushed_base, &xi, &xid, &xidd, s)?;
        window_sup = window_sup.max(norm(&g));
    }

    let verdict = PropositionVerdict::new("prop4", minus_v_gap, 1e-7, window_sup >= 0.5);
    Ok(Prop4Outcome {
        verdict,
        g_at_s0,
        closed_form,
        route_gap,
        op_j_at_s0: sup(&j_at_s0),
        window_sup,
        integration_gap,
        triple: [u, v, w],
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct PolarCheckRow {
    pub s: f64,
    pub expected: [f64; 2],
    pub computed: [f64; 2],
    pub delta: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct PolarOutcome {
    pub verdict: PropositionVerdict,
    pub rows: Vec<PolarCheckRow>,
    /// Sup gap of the Cartesian displacement from (0, 1).
    pub cartesian_gap: f64,
    /// Residual of the pushed displacement in the exact equation, polar chart.
    pub polar_exact_residual: f64,
    /// Distance between the tensorially pushed-back polar displacement and
    /// the true Cartesian one at s = 1.
    pub mismatch_at_1: f64,
}

/// The two parallel lines `(s, 0)` and `(s, 1)`, their displacement in
/// Cartesian and polar coordinates, and the failure of the tensorial rule
/// on the exact displacement.
pub fn run_polar_example() -> Result<PolarOutcome> {
    let flat = catalog("flat_cartesian(2)")?;
    let polar = catalog("euclidean_polar")?;
    let span = [0.5, 5.0];
    let opts = IntegrateOpts::rk4(1800);

    let line0 = integrate_geodesic(&flat, &[span[0], 0.0], &[1.0, 0.0], span, &opts)?;
    let line1 = integrate_geodesic(&flat, &[span[0], 1.0], &[1.0, 0.0], span, &opts)?;
    let dev_cart = exact_by_difference(&line0, &line1)?;

    let mut cartesian_gap: f64 = 0.0;
    for s in [0.5, 1.0, 2.0, 5.0] {
        let xi = dev_cart.xi(s);
        cartesian_gap = cartesian_gap.max(sup(&sub(&xi, &[0.0, 1.0])));
    }

    let to_polar = ChartMap::cartesian_to_polar();
    let base_polar = push_geodesic(&line0, &to_polar, &polar)?;
    let dev_polar = push_exact(&dev_cart, &to_polar, &line0, &base_polar)?;

    let mut rows = Vec::new();
    let mut polar_gap: f64 = 0.0;
    for s in [0.5f64, 1.0, 2.0, 5.0] {
        let expected = [(1.0 + s * s).sqrt() - s, (1.0 / s).atan()];
        let got = dev_polar.xi(s);
        let delta = sup(&sub(&got, &expected));
        polar_gap = polar_gap.max(delta);
        rows.push(PolarCheckRow {
            s,
            expected,
            computed: [got[0], got[1]],
            delta,
        });
    }

    let sample_s = node_samples(&dev_polar.trajectory, 100);
    let polar_exact_residual = exact_residual(&dev_polar, &sample_s)?.sup;

    // Tensorial push of the exact polar displacement back to Cartesian
    // coordinates does NOT recover (0, 1).
    let to_cart = ChartMap::polar_to_cartesian();
    let tens = push_tensorial(&dev_polar, &to_cart, &line0)?;
    let mismatch_at_1 = norm(&sub(&tens.xi(1.0), &[0.0, 1.0]));

    let passed_extra =
        cartesian_gap == 0.0 && mismatch_at_1 >= 0.25 && polar_exact_residual <= 1e-8;
    let verdict = PropositionVerdict::new("polar_example", polar_gap, 1e-8, passed_extra);
    Ok(PolarOutcome {
        verdict,
        rows,
        cartesian_gap,
        polar_exact_residual,
        mismatch_at_1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_PI_2, PI};

    #[test]
    fn prop4_standard_triple_produces_minus_v() {
        let out = verify_prop4(3, None).unwrap();
        assert!(out.verdict.passed, "{out:?}");
        assert_abs_diff_eq!(out.g_at_s0[0], 0.0, epsilon = 1e-7);
        assert_abs_diff_eq!(out.g_at_s0[1], -1.0, epsilon = 1e-7);
        assert_abs_diff_eq!(out.g_at_s0[2], 0.0, epsilon = 1e-7);
        assert!(out.route_gap <= 1e-7, "route gap {}", out.route_gap);
        assert!(out.op_j_at_s0 <= 1e-9, "op_j {}", out.op_j_at_s0);
        assert!(out.window_sup >= 0.5);
        assert!(out.integration_gap <= 1e-9);
    }

    #[test]
    fn prop4_holds_in_dimension_four() {
        let out = verify_prop4(4, None).unwrap();
        assert!(out.verdict.passed);
        let expect = [0.0, -1.0, 0.0, 0.0];
        for i in 0..4 {
            assert_abs_diff_eq!(out.g_at_s0[i], expect[i], epsilon = 1e-7);
        }
    }

    #[test]
    fn prop4_random_triples_follow_the_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(424242);
        for _ in 0..6 {
            let triple = random_orthonormal_triple(3, &mut rng);
            let v = triple[1].clone();
            let out = verify_prop4(3, Some(triple)).unwrap();
            assert!(out.verdict.passed);
            for i in 0..3 {
                assert_abs_diff_eq!(out.g_at_s0[i], -v[i], epsilon = 1e-7);
            }
        }
    }

    #[test]
    fn prop4_rejects_skewed_triples() {
        let u = vec![1.0, 0.0, 0.0];
        let v = vec![0.1, 1.0, 0.0];
        let w = vec![0.0, 0.0, 1.0];
        match verify_prop4(3, Some([u, v, w])) {
            Err(Error::NonOrthonormalInput(_)) => {}
            other => panic!("expected NonOrthonormalInput, got {other:?}"),
        }
    }

    #[test]
    fn prop3_flat_chart_with_affine_maps_is_invariant() {
        let chart = catalog("flat_cartesian(2)").unwrap();
        let base = integrate_geodesic(
            &chart,
            &[0.0, 0.0],
            &[1.0, 0.2],
            [0.0, 2.0],
            &IntegrateOpts::default(),
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let map = AffineMap::random(2, &mut rng);
        let verdict = verify_prop3(
            &chart,
            &base,
            &[0.1, -0.2],
            &[0.3, 0.4],
            &map,
            40,
            &IntegrateOpts::default(),
        )
        .unwrap();
        assert!(verdict.passed, "{verdict:?}");
        assert!(verdict.residual_achieved <= 1e-10);
    }

    #[test]
    fn prop3_sphere_equator_is_invariant_under_a_random_affine_map() {
        let chart = catalog("sphere2").unwrap();
        let base = integrate_geodesic(
            &chart,
            &[FRAC_PI_2, 0.0],
            &[0.0, 1.0],
            [0.0, PI],
            &IntegrateOpts::default(),
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(78);
        let map = AffineMap::random(2, &mut rng);
        let verdict = verify_prop3(
            &chart,
            &base,
            &[0.0, 0.0],
            &[0.5, 0.0],
            &map,
            40,
            &IntegrateOpts::default(),
        )
        .unwrap();
        assert!(verdict.passed, "{verdict:?}");
    }

    #[test]
    fn polar_example_matches_every_published_number() {
        let out = run_polar_example().unwrap();
        assert!(out.verdict.passed, "{out:?}");
        assert_eq!(out.cartesian_gap, 0.0);
        // s = 1 row: (sqrt(2) - 1, pi/4)
        let row = &out.rows[1];
        assert_abs_diff_eq!(row.computed[0], 2.0f64.sqrt() - 1.0, epsilon = 1e-8);
        assert_abs_diff_eq!(row.computed[1], PI / 4.0, epsilon = 1e-8);
        // s = 5 row decays like sqrt(26) - 5
        let tail = &out.rows[3];
        assert_abs_diff_eq!(tail.computed[0], 26.0f64.sqrt() - 5.0, epsilon = 1e-8);
        assert!(out.mismatch_at_1 >= 0.25, "mismatch {}", out.mismatch_at_1);
    }
}
