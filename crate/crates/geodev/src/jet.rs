//! Third-order forward-mode jets.
//!
//! A [`Jet3`] carries a value together with its gradient, Hessian and third
//! derivative tensor with respect to `n` seed variables. Arithmetic and the
//! elementary functions propagate all of them through the exact chain rule,
//! so coordinate maps written against `Jet3` get analytic jets up to third
//! order with no finite-difference truncation.

/// Truncated multivariate Taylor coefficient stack: value, gradient,
/// Hessian (dense `n*n`) and third derivatives (dense `n*n*n`).
#[derive(Clone, Debug)]
pub struct Jet3 {
    n: usize,
    pub val: f64,
    d1: Vec<f64>,
    d2: Vec<f64>,
    d3: Vec<f64>,
}

impl Jet3 {
    pub fn constant(n: usize, val: f64) -> Self {
        Jet3 {
            n,
            val,
            d1: vec![0.0; n],
            d2: vec![0.0; n * n],
            d3: vec![0.0; n * n * n],
        }
    }

    /// Seed variable `i` at value `x`: unit first derivative, zero higher ones.
    pub fn variable(n: usize, i: usize, x: f64) -> Self {
        let mut j = Jet3::constant(n, x);
        j.d1[i] = 1.0;
        j
    }

    pub fn vars(x: &[f64]) -> Vec<Jet3> {
        let n = x.len();
        (0..n).map(|i| Jet3::variable(n, i, x[i])).collect()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn d1(&self, i: usize) -> f64 {
        self.d1[i]
    }

    #[inline]
    pub fn d2(&self, i: usize, j: usize) -> f64 {
        self.d2[i * self.n + j]
    }

    #[inline]
    pub fn d3(&self, i: usize, j: usize, k: usize) -> f64 {
        self.d3[(i * self.n + j) * self.n + k]
    }

    pub fn add(&self, rhs: &Jet3) -> Jet3 {
        let mut out = self.clone();
        out.val += rhs.val;
        for (a, b) in out.d1.iter_mut().zip(&rhs.d1) {
            *a += b;
        }
        for (a, b) in out.d2.iter_mut().zip(&rhs.d2) {
            *a += b;
        }
        for (a, b) in out.d3.iter_mut().zip(&rhs.d3) {
            *a += b;
        }
        out
    }

    pub fn sub(&self, rhs: &Jet3) -> Jet3 {
        self.add(&rhs.neg())
    }

    pub fn neg(&self) -> Jet3 {
        self.scale(-1.0)
    }

    pub fn scale(&self, c: f64) -> Jet3 {
        Jet3 {
            n: self.n,
            val: c * self.val,
            d1: self.d1.iter().map(|v| c * v).collect(),
            d2: self.d2.iter().map(|v| c * v).collect(),
            d3: self.d3.iter().map(|v| c * v).collect(),
        }
    }

    pub fn add_scalar(&self, c: f64) -> Jet3 {
        let mut out = self.clone();
        out.val += c;
        out
    }

    /// Leibniz rule through third order.
    pub fn mul(&self, rhs: &Jet3) -> Jet3 {
        let n = self.n;
        assert_eq!(n, rhs.n);
        let (a, b) = (self, rhs);
        let mut out = Jet3::constant(n, a.val * b.val);
        for i in 0..n {
            out.d1[i] = a.val * b.d1[i] + a.d1[i] * b.val;
        }
        for i in 0..n {
            for j in 0..n {
                out.d2[i * n + j] = a.val * b.d2(i, j)
                    + a.d1[i] * b.d1[j]
                    + a.d1[j] * b.d1[i]
                    + a.d2(i, j) * b.val;
            }
        }
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    out.d3[(i * n + j) * n + k] = a.val * b.d3(i, j, k)
                        + a.d1[i] * b.d2(j, k)
                        + a.d1[j] * b.d2(i, k)
                        + a.d1[k] * b.d2(i, j)
                        + a.d2(i, j) * b.d1[k]
                        + a.d2(i, k) * b.d1[j]
                        + a.d2(j, k) * b.d1[i]
                        + a.d3(i, j, k) * b.val;
                }
            }
        }
        out
    }

    pub fn div(&self, rhs: &Jet3) -> Jet3 {
        self.mul(&rhs.recip())
    }

    /// Faà di Bruno through third order for a univariate `f` with
    /// derivatives `f1, f2, f3` at `self.val`.
    fn compose(&self, f0: f64, f1: f64, f2: f64, f3: f64) -> Jet3 {
        let n = self.n;
        let a = self;
        let mut out = Jet3::constant(n, f0);
        for i in 0..n {
            out.d1[i] = f1 * a.d1[i];
        }
        for i in 0..n {
            for j in 0..n {
                out.d2[i * n + j] = f2 * a.d1[i] * a.d1[j] + f1 * a.d2(i, j);
            }
        }
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    out.d3[(i * n + j) * n + k] = f3 * a.d1[i] * a.d1[j] * a.d1[k]
                        + f2 * (a.d2(i, j) * a.d1[k]
                            + a.d2(i, k) * a.d1[j]
                            + a.d2(j, k) * a.d1[i])
                        + f1 * a.d3(i, j, k);
                }
            }
        }
        out
    }

    pub fn recip(&self) -> Jet3 {
        let u = self.val;
        self.compose(1.0 / u, -1.0 / (u * u), 2.0 / (u * u * u), -6.0 / (u * u * u * u))
    }

    pub fn sqrt(&self) -> Jet3 {
        let r = self.val.sqrt();
        self.compose(
            r,
            0.5 / r,
            -0.25 / (r * self.val),
            0.375 / (r * self.val * self.val),
        )
    }

    pub fn sin(&self) -> Jet3 {
        let (s, c) = self.val.sin_cos();
        self.compose(s, c, -s, -c)
    }

    pub fn cos(&self) -> Jet3 {
        let (s, c) = self.val.sin_cos();
        self.compose(c, -s, -c, s)
    }

    pub fn atan(&self) -> Jet3 {
        let u = self.val;
        let d = 1.0 + u * u;
        self.compose(
            u.atan(),
            1.0 / d,
            -2.0 * u / (d * d),
            (6.0 * u * u - 2.0) / (d * d * d),
        )
    }

    pub fn powi(&self, e: u32) -> Jet3 {
        let mut out = Jet3::constant(self.n, 1.0);
        for _ in 0..e {
            out = out.mul(self);
        }
        out
    }

    /// Two-argument arctangent. Away from the origin its derivatives agree
    /// with `atan(y/x)` (or the reflected branch when `|y| > |x|`), while the
    /// value comes from `f64::atan2` so the quadrant is always right.
    pub fn atan2(y: &Jet3, x: &Jet3) -> Jet3 {
        let mut out = if x.val.abs() >= y.val.abs() {
            y.div(x).atan()
        } else {
            x.div(y).atan().neg()
        };
        out.val = y.val.atan2(x.val);
        out
    }
}
