//! Monotone piecewise-cubic Hermite interpolation (Fritsch–Carlson).

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum InterpError {
    #[error("need at least two knots, got {0}")]
    TooFewKnots(usize),
    #[error("knots must be strictly increasing")]
    NotIncreasing,
    #[error("x = {x} outside [{lo}, {hi}]")]
    OutOfSpan { x: f64, lo: f64, hi: f64 },
}

/// Shape-preserving cubic interpolant: monotone data gives a monotone curve.
#[derive(Debug, Clone, PartialEq)]
pub struct Pchip {
    x: Vec<f64>,
    y: Vec<f64>,
    d: Vec<f64>,
}

fn end_slope(h0: f64, h1: f64, m0: f64, m1: f64) -> f64 {
    let d = ((2.0 * h0 + h1) * m0 - h0 * m1) / (h0 + h1);
    if d.signum() != m0.signum() {
        0.0
    } else if m0.signum() != m1.signum() && d.abs() > 3.0 * m0.abs() {
        3.0 * m0
    } else {
        d
    }
}

impl Pchip {
    pub fn new(x: &[f64], y: &[f64]) -> Result<Self, InterpError> {
        let n = x.len();
        if n < 2 || y.len() != n {
            return Err(InterpError::TooFewKnots(n.min(y.len())));
        }
        if x.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(InterpError::NotIncreasing);
        }
        let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
        let m: Vec<f64> = (0..n - 1).map(|k| (y[k + 1] - y[k]) / h[k]).collect();
        let mut d = vec![0.0; n];
        if n == 2 {
            d[0] = m[0];
            d[1] = m[0];
        } else {
            for k in 1..n - 1 {
                if m[k - 1] * m[k] > 0.0 {
                    let w1 = 2.0 * h[k] + h[k - 1];
                    let w2 = h[k] + 2.0 * h[k - 1];
                    d[k] = (w1 + w2) / (w1 / m[k - 1] + w2 / m[k]);
                }
            }
            d[0] = end_slope(h[0], h[1], m[0], m[1]);
            d[n - 1] = end_slope(h[n - 2], h[n - 3], m[n - 2], m[n - 3]);
        }
        Ok(Self {
            x: x.to_vec(),
            y: y.to_vec(),
            d,
        })
    }

    pub fn span(&self) -> (f64, f64) {
        (self.x[0], self.x[self.x.len() - 1])
    }

    pub fn knots(&self) -> &[f64] {
        &self.x
    }

    pub fn values(&self) -> &[f64] {
        &self.y
    }

    /// Index of the interval containing `x`.
    pub fn interval(&self, x: f64) -> Result<usize, InterpError> {
        let (lo, hi) = self.span();
        if !(x >= lo && x <= hi) {
            return Err(InterpError::OutOfSpan { x, lo, hi });
        }
        let k = self.x.partition_point(|&v| v <= x);
        Ok(k.saturating_sub(1).min(self.x.len() - 2))
    }

    pub fn eval(&self, x: f64) -> Result<f64, InterpError> {
        let k = self.interval(x)?;
        Ok(self.eval_in(k, x))
    }

    pub(crate) fn eval_in(&self, k: usize, x: f64) -> f64 {
        let h = self.x[k + 1] - self.x[k];
        let t = (x - self.x[k]) / h;
        let t2 = t * t;
        let t3 = t2 * t;
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + t;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        h00 * self.y[k] + h10 * h * self.d[k] + h01 * self.y[k + 1] + h11 * h * self.d[k + 1]
    }
}

/// Root of a continuous function on `[a, b]` given a sign change, by
/// safeguarded secant steps (Illinois variant).
pub fn bracketed_root(mut f: impl FnMut(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let mut fa = f(a);
    let mut fb = f(b);
    if fa == 0.0 {
        return a;
    }
    if fb == 0.0 {
        return b;
    }
    let mut side = 0;
    for _ in 0..200 {
        let c = (a * fb - b * fa) / (fb - fa);
        let c = if c.is_finite() && c > a.min(b) && c < a.max(b) {
            c
        } else {
            0.5 * (a + b)
        };
        let fc = f(c);
        if fc == 0.0 || (b - a).abs() < tol {
            return c;
        }
        if fc.signum() == fb.signum() {
            b = c;
            fb = fc;
            if side == -1 {
                fa *= 0.5;
            }
            side = -1;
        } else {
            a = c;
            fa = fc;
            if side == 1 {
                fb *= 0.5;
            }
            side = 1;
        }
    }
    0.5 * (a + b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn reproduces_knots_and_lines() {
        let x = [0.0, 1.0, 2.5, 4.0];
        let y = [1.0, 3.0, 6.0, 9.0];
        let p = Pchip::new(&x, &y).unwrap();
        for (a, b) in x.iter().zip(&y) {
            assert!((p.eval(*a).unwrap() - b).abs() < 1e-12);
        }
        let line = Pchip::new(&[0.0, 1.0, 2.0], &[0.0, 2.0, 4.0]).unwrap();
        assert!((line.eval(1.3).unwrap() - 2.6).abs() < 1e-12);
        assert!(p.eval(4.1).is_err());
    }

    #[test]
    fn rejects_bad_knots() {
        assert!(Pchip::new(&[0.0], &[0.0]).is_err());
        assert!(Pchip::new(&[0.0, 0.0], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn root_finder() {
        let r = bracketed_root(|x| x * x * x - 2.0, 0.0, 2.0, 1e-15);
        assert!((r - 2f64.powf(1.0 / 3.0)).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn monotone_data_stays_monotone(steps in prop::collection::vec((0.01f64..1.0, 0.0f64..1.0), 3..20)) {
            let mut x = vec![0.0];
            let mut y = vec![0.0];
            for (dx, dy) in &steps {
                x.push(x.last().unwrap() + dx);
                y.push(y.last().unwrap() + dy);
            }
            let p = Pchip::new(&x, &y).unwrap();
            let (lo, hi) = p.span();
            let mut prev = f64::NEG_INFINITY;
            for k in 0..=500 {
                let x = (lo + (hi - lo) * k as f64 / 500.0).min(hi);
                let v = p.eval(x).unwrap();
                prop_assert!(v >= prev - 1e-12);
                prev = v;
            }
        }
    }
}
