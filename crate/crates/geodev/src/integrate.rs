//! Initial-value ODE integration: fixed-step RK4 and an embedded
//! Dormand–Prince 5(4) pair with PI step control, both producing
//! trajectories with cubic Hermite dense output.

use crate::error::{Error, Result};

/// Right-hand side signature: `rhs(s, y, dy)` fills `dy` with `dy/ds`.
/// It may fail, e.g. when a chart evaluation leaves its domain.
pub type Rhs<'a> = &'a dyn Fn(f64, &[f64], &mut [f64]) -> Result<()>;

pub struct OdeProblem<'a> {
    pub state_dim: usize,
    pub rhs: Rhs<'a>,
    pub s_span: [f64; 2],
    pub y0: Vec<f64>,
}

/// Options for [`solve`] and [`rk_adaptive`].
///
/// `max_step`, when set, caps the accepted step size. Keeping steps small is
/// what makes the Hermite interpolant (and its derivatives) accurate enough
/// to serve as an independent residual check on the stored path; pure error
/// control would take much larger steps than interpolation quality allows.
#[derive(Clone, Debug)]
pub struct IntegrateOpts {
    pub method: Method,
    pub rtol: f64,
    pub atol: f64,
    pub max_step: Option<f64>,
    pub max_steps: usize,
}

#[derive(Clone, Debug)]
pub enum Method {
    Rk4Fixed { steps: usize },
    Adaptive,
}

impl Default for IntegrateOpts {
    fn default() -> Self {
        IntegrateOpts {
            method: Method::Adaptive,
            rtol: 1e-10,
            atol: 1e-12,
            max_step: Some(0.01),
            max_steps: 4_000_000,
        }
    }
}

impl IntegrateOpts {
    /// Adaptive integration with no step cap: fastest path to an accurate
    /// endpoint when the dense output in between does not matter.
    pub fn uncapped() -> Self {
        IntegrateOpts {
            max_step: None,
            ..Default::default()
        }
    }

    pub fn rk4(steps: usize) -> Self {
        IntegrateOpts {
            method: Method::Rk4Fixed { steps },
            ..Default::default()
        }
    }

    pub fn with_rtol(mut self, rtol: f64) -> Self {
        self.rtol = rtol;
        self
    }

    pub fn with_atol(mut self, atol: f64) -> Self {
        self.atol = atol;
        self
    }

    pub fn with_max_step(mut self, h: Option<f64>) -> Self {
        self.max_step = h;
        self
    }
}

pub fn solve(problem: &OdeProblem, opts: &IntegrateOpts) -> Result<Trajectory> {
    match opts.method {
        Method::Rk4Fixed { steps } => rk4_fixed(problem, steps),
        Method::Adaptive => rk_adaptive(problem, opts),
    }
}

/// Sampled ODE solution with cubic Hermite dense output.
///
/// Nodes store both the state and its derivative, so the interpolant matches
/// the stored values bitwise at the nodes and is C¹ in between.
#[derive(Clone, Debug)]
pub struct Trajectory {
    s: Vec<f64>,
    y: Vec<Vec<f64>>,
    dy: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn new(s: Vec<f64>, y: Vec<Vec<f64>>, dy: Vec<Vec<f64>>) -> Result<Self> {
        if s.len() < 2 || s.len() != y.len() || s.len() != dy.len() {
            return Err(Error::InvalidInput(
                "trajectory needs >= 2 nodes with matching state and derivative lists".into(),
            ));
        }
        if !s.windows(2).all(|w| w[1] > w[0]) {
            return Err(Error::InvalidInput(
                "trajectory nodes must be strictly increasing in s".into(),
            ));
        }
        Ok(Trajectory { s, y, dy })
    }

    pub fn state_dim(&self) -> usize {
        self.y[0].len()
    }

    pub fn len(&self) -> usize {
        self.s.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn span(&self) -> [f64; 2] {
        [self.s[0], *self.s.last().unwrap()]
    }

    pub fn nodes(&self) -> &[f64] {
        &self.s
    }

    pub fn node_state(&self, k: usize) -> &[f64] {
        &self.y[k]
    }

    pub fn node_deriv(&self, k: usize) -> &[f64] {
        &self.dy[k]
    }

    fn segment(&self, s: f64) -> usize {
        // index k with s in [s_k, s_{k+1}); clamps to the boundary segments
        let m = self.s.len();
        let k = self.s.partition_point(|&sk| sk <= s);
        k.clamp(1, m - 1) - 1
    }

    /// Dense output. At node points this returns the stored state bitwise;
    /// outside the span it extrapolates with the boundary segment cubic.
    pub fn eval(&self, s: f64) -> Vec<f64> {
        if let Ok(k) = self.s.binary_search_by(|sk| sk.partial_cmp(&s).unwrap()) {
            return self.y[k].clone();
        }
        let k = self.segment(s);
        let h = self.s[k + 1] - self.s[k];
        let t = (s - self.s[k]) / h;
        let (h00, h10, h01, h11) = hermite_basis(t);
        let dim = self.state_dim();
        let mut out = vec![0.0; dim];
        for i in 0..dim {
            out[i] = h00 * self.y[k][i]
                + h * h10 * self.dy[k][i]
                + h01 * self.y[k + 1][i]
                + h * h11 * self.dy[k + 1][i];
        }
        out
    }

    /// Derivative of the interpolant. At nodes this equals the stored
    /// derivative, so sampling between nodes is what provides an independent
    /// check on a path.
    pub fn eval_deriv(&self, s: f64) -> Vec<f64> {
        let k = self.segment(s);
        let h = self.s[k + 1] - self.s[k];
        let t = (s - self.s[k]) / h;
        let (g00, g10, g01, g11) = hermite_basis_deriv(t);
        let dim = self.state_dim();
        let mut out = vec![0.0; dim];
        for i in 0..dim {
            out[i] = (g00 * self.y[k][i]
                + h * g10 * self.dy[k][i]
                + g01 * self.y[k + 1][i]
                + h * g11 * self.dy[k + 1][i])
                / h;
        }
        out
    }

    /// Restrict every node to a contiguous range of state components.
    pub fn project(&self, offset: usize, len: usize) -> Trajectory {
        Trajectory {
            s: self.s.clone(),
            y: self.y.iter().map(|v| v[offset..offset + len].to_vec()).collect(),
            dy: self
                .dy
                .iter()
                .map(|v| v[offset..offset + len].to_vec())
                .collect(),
        }
    }

    /// Reverse node order (for trajectories integrated backwards in s).
    pub fn reversed(mut self) -> Trajectory {
        self.s.reverse();
        self.y.reverse();
        self.dy.reverse();
        self
    }

    /// Concatenate two trajectories that share their junction node.
    pub fn concat(mut self, other: &Trajectory) -> Result<Trajectory> {
        let junction = *self.s.last().unwrap();
        if (other.s[0] - junction).abs() > 1e-12 {
            return Err(Error::GridMismatch);
        }
        self.s.extend_from_slice(&other.s[1..]);
        self.y.extend_from_slice(&other.y[1..]);
        self.dy.extend_from_slice(&other.dy[1..]);
        Trajectory::new(self.s, self.y, self.dy)
    }
}

fn hermite_basis(t: f64) -> (f64, f64, f64, f64) {
    let t2 = t * t;
    let t3 = t2 * t;
    (
        2.0 * t3 - 3.0 * t2 + 1.0,
        t3 - 2.0 * t2 + t,
        -2.0 * t3 + 3.0 * t2,
        t3 - t2,
    )
}

fn hermite_basis_deriv(t: f64) -> (f64, f64, f64, f64) {
    let t2 = t * t;
    (
        6.0 * t2 - 6.0 * t,
        3.0 * t2 - 4.0 * t + 1.0,
        -6.0 * t2 + 6.0 * t,
        3.0 * t2 - 2.0 * t,
    )
}

fn check_finite(s: f64, y: &[f64]) -> Result<()> {
    if y.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteState { s })
    }
}

/// Classical 4th-order Runge–Kutta with `steps` equal steps.
pub fn rk4_fixed(problem: &OdeProblem, steps: usize) -> Result<Trajectory> {
    if steps == 0 {
        return Err(Error::InvalidInput("rk4_fixed needs steps >= 1".into()));
    }
    let dim = problem.state_dim;
    let [s0, s1] = problem.s_span;
    let h = (s1 - s0) / steps as f64;
    let rhs = problem.rhs;

    let mut s = s0;
    let mut y = problem.y0.clone();
    check_finite(s, &y)?;

    let mut nodes_s = Vec::with_capacity(steps + 1);
    let mut nodes_y = Vec::with_capacity(steps + 1);
    let mut nodes_dy = Vec::with_capacity(steps + 1);

    let mut k1 = vec![0.0; dim];
    let mut k2 = vec![0.0; dim];
    let mut k3 = vec![0.0; dim];
    let mut k4 = vec![0.0; dim];
    let mut tmp = vec![0.0; dim];

    (rhs)(s, &y, &mut k1)?;
    nodes_s.push(s);
    nodes_y.push(y.clone());
    nodes_dy.push(k1.clone());

    for step in 1..=steps {
        for i in 0..dim {
            tmp[i] = y[i] + 0.5 * h * k1[i];
        }
        (rhs)(s + 0.5 * h, &tmp, &mut k2)?;
        for i in 0..dim {
            tmp[i] = y[i] + 0.5 * h * k2[i];
        }
        (rhs)(s + 0.5 * h, &tmp, &mut k3)?;
        for i in 0..dim {
            tmp[i] = y[i] + h * k3[i];
        }
        (rhs)(s + h, &tmp, &mut k4)?;
        for i in 0..dim {
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        s = s0 + h * step as f64;
        check_finite(s, &y)?;
        (rhs)(s, &y, &mut k1)?;
        nodes_s.push(s);
        nodes_y.push(y.clone());
        nodes_dy.push(k1.clone());
    }

    let traj = Trajectory { s: nodes_s, y: nodes_y, dy: nodes_dy };
    if s1 >= s0 {
        Trajectory::new(traj.s, traj.y, traj.dy)
    } else {
        let r = traj.reversed();
        Trajectory::new(r.s, r.y, r.dy)
    }
}

// Dormand-Prince 5(4) tableau.
const DP_C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const DP_A: [[f64; 6]; 6] = [
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const DP_B5: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
const DP_B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// Embedded Dormand–Prince 5(4) with PI step-size control.
///
/// Step underflow (below `1e-14 * |span|`) is reported as a typed error so
/// finite-time blow-up surfaces gracefully instead of spinning forever.
pub fn rk_adaptive(problem: &OdeProblem, opts: &IntegrateOpts) -> Result<Trajectory> {
    if !(opts.rtol > 0.0 && opts.atol > 0.0) {
        return Err(Error::InvalidInput("rtol and atol must be positive".into()));
    }
    let dim = problem.state_dim;
    let [s0, s1] = problem.s_span;
    let span = (s1 - s0).abs();
    let dir = if s1 >= s0 { 1.0 } else { -1.0 };
    let h_floor = 1e-14 * span;
    let h_cap = opts.max_step.unwrap_or(f64::INFINITY).min(span);
    let rhs = problem.rhs;

    let mut s = s0;
    let mut y = problem.y0.clone();
    check_finite(s, &y)?;
    let mut k: Vec<Vec<f64>> = (0..7).map(|_| vec![0.0; dim]).collect();
    (rhs)(s, &y, &mut k[0])?;

    let mut h = initial_step(problem, &y, &k[0], opts, h_cap)?;

    let mut nodes_s = vec![s];
    let mut nodes_y = vec![y.clone()];
    let mut nodes_dy = vec![k[0].clone()];

    let mut err_prev: f64 = 1.0;
    let mut steps_taken = 0usize;
    let mut tmp = vec![0.0; dim];
    let mut y5 = vec![0.0; dim];

    while (s1 - s) * dir > 1e-14 * span.max(1.0) {
        if steps_taken > opts.max_steps {
            return Err(Error::TooManySteps(opts.max_steps));
        }
        h = h.min(h_cap).min((s1 - s) * dir);
        if h < h_floor {
            return Err(Error::StepUnderflow { s });
        }
        let hs = h * dir;

        // Stages 2..7; a failing stage evaluation rejects the step.
        let mut stage_err: Option<Error> = None;
        for i in 1..7 {
            for q in 0..dim {
                let mut acc = 0.0;
                for j in 0..i {
                    acc += DP_A[i - 1][j] * k[j][q];
                }
                tmp[q] = y[q] + hs * acc;
            }
            if i == 6 {
                y5.copy_from_slice(&tmp); // b row equals the last a row (FSAL)
            }
            if let Err(e) = (rhs)(s + DP_C[i] * hs, &tmp, &mut k[i]) {
                stage_err = Some(e);
                break;
            }
        }

        let err = if stage_err.is_some() {
            f64::INFINITY
        } else {
            let mut err: f64 = 0.0;
            for q in 0..dim {
                let mut e = 0.0;
                for j in 0..7 {
                    e += (DP_B5[j] - DP_B4[j]) * k[j][q];
                }
                e *= hs;
                let sc = opts.atol + opts.rtol * y[q].abs().max(y5[q].abs());
                let w = e / sc;
                err = err.max(w.abs());
            }
            if err.is_finite() {
                err
            } else {
                f64::INFINITY
            }
        };

        steps_taken += 1;
        if err <= 1.0 {
            s += hs;
            y.copy_from_slice(&y5);
            check_finite(s, &y)?;
            let (head, tail) = k.split_at_mut(6);
            head[0].copy_from_slice(&tail[0]); // FSAL
            nodes_s.push(s);
            nodes_y.push(y.clone());
            nodes_dy.push(k[0].clone());

            let fac = 0.9 * err.max(1e-16).powf(-0.7 / 5.0) * err_prev.powf(0.4 / 5.0);
            h *= fac.clamp(0.2, 10.0);
            err_prev = err.max(1e-16);
        } else {
            let shrink = if err.is_finite() {
                (0.9 * err.powf(-1.0 / 5.0)).clamp(0.1, 0.9)
            } else {
                0.5
            };
            let h_new = h * shrink;
            if h_new < h_floor {
                // Persistent failure: surface the stage error if one caused it.
                return Err(match stage_err {
                    Some(e) => e,
                    None => Error::StepUnderflow { s },
                });
            }
            h = h_new;
        }
    }

    let traj = Trajectory { s: nodes_s, y: nodes_y, dy: nodes_dy };
    if dir > 0.0 {
        Trajectory::new(traj.s, traj.y, traj.dy)
    } else {
        let r = traj.reversed();
        Trajectory::new(r.s, r.y, r.dy)
    }
}

// Step-size guess from the scaled magnitudes of y, f and an Euler probe.
fn initial_step(
    problem: &OdeProblem,
    y0: &[f64],
    f0: &[f64],
    opts: &IntegrateOpts,
    h_cap: f64,
) -> Result<f64> {
    let dim = problem.state_dim;
    let [s0, s1] = problem.s_span;
    let dir = if s1 >= s0 { 1.0 } else { -1.0 };
    let sc =
        |q: usize, v: f64| -> f64 { v / (opts.atol + opts.rtol * y0[q].abs()) };
    let d0 = (0..dim).map(|q| sc(q, y0[q]).abs()).fold(0.0f64, f64::max);
    let d1 = (0..dim).map(|q| sc(q, f0[q]).abs()).fold(0.0f64, f64::max);
    let mut h0 = if d0 < 1e-5 || d1 < 1e-5 {
        1e-6 * (s1 - s0).abs().max(1.0)
    } else {
        0.01 * d0 / d1
    };
    h0 = h0.min(h_cap);

    let mut y1 = vec![0.0; dim];
    for q in 0..dim {
        y1[q] = y0[q] + dir * h0 * f0[q];
    }
    let mut f1 = vec![0.0; dim];
    match (problem.rhs)(s0 + dir * h0, &y1, &mut f1) {
        Ok(()) => {}
        Err(_) => return Ok((h0 * 0.1).max(1e-14 * (s1 - s0).abs())),
    }
    let d2 = (0..dim)
        .map(|q| sc(q, f1[q] - f0[q]).abs())
        .fold(0.0f64, f64::max)
        / h0;
    let h1 = if d1.max(d2) <= 1e-15 {
        h_cap.min((h0 * 100.0).max(1e-6))
    } else {
        (0.01 / d1.max(d2)).powf(1.0 / 5.0)
    };
    Ok(h1.min(100.0 * h0).min(h_cap))
}

/// Interior sample points: midpoints of `k` equal subintervals of `span`.
pub fn uniform_samples(span: [f64; 2], k: usize) -> Vec<f64> {
    let d = (span[1] - span[0]) / k as f64;
    (0..k).map(|i| span[0] + (i as f64 + 0.5) * d).collect()
}

/// At most `max` node s-values of a trajectory, evenly thinned.
pub fn node_samples(traj: &Trajectory, max: usize) -> Vec<f64> {
    let m = traj.len();
    if m <= max {
        return traj.nodes().to_vec();
    }
    (0..max)
        .map(|i| traj.nodes()[i * (m - 1) / (max - 1)])
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn constant_rhs(_s: f64, _y: &[f64], dy: &mut [f64]) -> Result<()> {
        dy[0] = 0.0;
        Ok(())
    }

    #[test]
    fn rk4_constant_solution_is_exact() {
        let problem = OdeProblem {
            state_dim: 1,
            rhs: &constant_rhs,
            s_span: [0.0, 2.0],
            y0: vec![3.5],
        };
        let traj = rk4_fixed(&problem, 10).unwrap();
        assert_eq!(traj.eval(1.234)[0], 3.5);
    }

    #[test]
    fn rk4_exponential_growth_matches_closed_form() {
        let rhs = |_s: f64, y: &[f64], dy: &mut [f64]| -> Result<()> {
            dy[0] = y[0];
            Ok(())
        };
        let problem = OdeProblem {
            state_dim: 1,
            rhs: &rhs,
            s_span: [0.0, 1.0],
            y0: vec![1.0],
        };
        let traj = rk4_fixed(&problem, 1000).unwrap();
        assert_abs_diff_eq!(traj.eval(1.0)[0], std::f64::consts::E, epsilon = 1e-10);
    }

    fn oscillator_rhs(_s: f64, y: &[f64], dy: &mut [f64]) -> Result<()> {
        dy[0] = y[1];
        dy[1] = -y[0];
        Ok(())
    }

    #[test]
    fn rk4_harmonic_oscillator_half_period() {
        let problem = OdeProblem {
            state_dim: 2,
            rhs: &oscillator_rhs,
            s_span: [0.0, std::f64::consts::PI],
            y0: vec![0.0, 1.0],
        };
        let traj = rk4_fixed(&problem, 2000).unwrap();
        assert_abs_diff_eq!(traj.eval(std::f64::consts::PI)[0], 0.0, epsilon = 1e-8);
    }

    #[test]
    fn rk4_exhibits_fourth_order_convergence() {
        let end = |steps: usize| {
            let problem = OdeProblem {
                state_dim: 2,
                rhs: &oscillator_rhs,
                s_span: [0.0, std::f64::consts::PI],
                y0: vec![0.0, 1.0],
            };
            rk4_fixed(&problem, steps).unwrap().eval(std::f64::consts::PI)[0].abs()
        };
        let e1 = end(100);
        let e2 = end(200);
        assert!(e1 / e2 >= 12.0, "convergence ratio {} too low", e1 / e2);
    }

    #[test]
    fn adaptive_constant_problem_takes_one_macro_step() {
        let problem = OdeProblem {
            state_dim: 1,
            rhs: &constant_rhs,
            s_span: [0.0, 5.0],
            y0: vec![1.25],
        };
        let traj = rk_adaptive(&problem, &IntegrateOpts::uncapped()).unwrap();
        assert_eq!(traj.len(), 2, "expected a single accepted macro-step");
        assert_eq!(traj.eval(3.3)[0], 1.25);
    }

    #[test]
    fn adaptive_reports_blow_up_as_step_underflow() {
        let rhs = |_s: f64, y: &[f64], dy: &mut [f64]| -> Result<()> {
            dy[0] = y[0] * y[0];
            Ok(())
        };
        let problem = OdeProblem {
            state_dim: 1,
            rhs: &rhs,
            s_span: [0.0, 2.0],
            y0: vec![1.0],
        };
        match rk_adaptive(&problem, &IntegrateOpts::uncapped()) {
            Err(Error::StepUnderflow { s }) => {
                // y = 1/(1-s) blows up at s = 1
                assert!((s - 1.0).abs() < 0.05, "blow-up detected at s = {s}");
            }
            other => panic!("expected StepUnderflow, got {other:?}"),
        }
    }

    #[test]
    fn adaptive_handles_fast_relaxation() {
        let rhs = |s: f64, y: &[f64], dy: &mut [f64]| -> Result<()> {
            dy[0] = -1000.0 * (y[0] - s.cos());
            Ok(())
        };
        let problem = OdeProblem {
            state_dim: 1,
            rhs: &rhs,
            s_span: [0.0, 1.0],
            y0: vec![0.0],
        };
        let opts = IntegrateOpts::uncapped().with_rtol(1e-8).with_atol(1e-10);
        let traj = rk_adaptive(&problem, &opts).unwrap();

        let reference = rk4_fixed(&problem, 1_000_000).unwrap();
        assert_abs_diff_eq!(traj.eval(1.0)[0], reference.eval(1.0)[0], epsilon = 1e-7);
    }

    #[test]
    fn dense_output_hits_nodes_bitwise() {
        let rhs = |s: f64, _y: &[f64], dy: &mut [f64]| -> Result<()> {
            dy[0] = s.sin();
            dy[1] = s.cos();
            Ok(())
        };
        let problem = OdeProblem {
            state_dim: 2,
            rhs: &rhs,
            s_span: [0.0, 3.0],
            y0: vec![0.3, -0.7],
        };
        let traj = rk_adaptive(&problem, &IntegrateOpts::default()).unwrap();
        for k in 0..traj.len() {
            let s = traj.nodes()[k];
            assert_eq!(traj.eval(s), traj.node_state(k).to_vec());
        }
    }

    #[test]
    fn backward_span_integration_produces_increasing_grid() {
        let rhs = |_s: f64, y: &[f64], dy: &mut [f64]| -> Result<()> {
            dy[0] = y[0];
            Ok(())
        };
        let problem = OdeProblem {
            state_dim: 1,
            rhs: &rhs,
            s_span: [1.0, 0.0],
            y0: vec![std::f64::consts::E],
        };
        let traj = rk_adaptive(&problem, &IntegrateOpts::default()).unwrap();
        assert!(traj.nodes().windows(2).all(|w| w[1] > w[0]));
        assert_abs_diff_eq!(traj.eval(0.0)[0], 1.0, epsilon = 1e-9);
    }
}
