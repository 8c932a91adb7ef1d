use crate::error::{BamError, Result};

/// Concave piecewise-linear function on `[breakpoints[0], breakpoints[last]]`.
/// A single breakpoint describes a function on a one-point domain.
#[derive(Clone, Debug, PartialEq)]
pub struct PiecewiseLinearConcave {
    breakpoints: Vec<f64>,
    values: Vec<f64>,
}

/// One linear piece `value + slope·(x - at)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Piece {
    pub at: f64,
    pub value: f64,
    pub slope: f64,
}

impl Piece {
    pub fn eval(&self, x: f64) -> f64 {
        self.value + self.slope * (x - self.at)
    }
}

impl PiecewiseLinearConcave {
    pub fn new(breakpoints: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if breakpoints.is_empty() || breakpoints.len() != values.len() {
            return Err(BamError::InvalidArgument("breakpoints and values must be non-empty and aligned".into()));
        }
        if breakpoints.iter().chain(&values).any(|x| !x.is_finite()) {
            return Err(BamError::InvalidArgument("non-finite breakpoint or value".into()));
        }
        if breakpoints.windows(2).any(|w| w[1] <= w[0]) {
            return Err(BamError::InvalidArgument("breakpoints must be strictly increasing".into()));
        }
        let f = Self { breakpoints, values };
        let scale = f.values.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        let slopes = f.slopes();
        for (i, w) in slopes.windows(2).enumerate() {
            let h = f.breakpoints[i + 2] - f.breakpoints[i];
            if (w[1] - w[0]) * h > 1e-9 * scale {
                return Err(BamError::NotConcave { at: f.breakpoints[i + 1] });
            }
        }
        Ok(f)
    }

    /// The linear function `x ↦ value + slope·(x - a)` on `[a, b]`.
    pub fn linear(a: f64, b: f64, value_at_a: f64, slope: f64) -> Result<Self> {
        if b > a {
            Self::new(vec![a, b], vec![value_at_a, value_at_a + slope * (b - a)])
        } else {
            Self::new(vec![a], vec![value_at_a])
        }
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.breakpoints[0], *self.breakpoints.last().unwrap())
    }

    pub fn len(&self) -> usize {
        self.breakpoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.breakpoints.is_empty()
    }

    pub fn slopes(&self) -> Vec<f64> {
        self.breakpoints
            .windows(2)
            .zip(self.values.windows(2))
            .map(|(x, y)| (y[1] - y[0]) / (x[1] - x[0]))
            .collect()
    }

    /// Linear interpolation; outside the domain is an error.
    pub fn eval(&self, x: f64) -> Result<f64> {
        let (a, b) = self.domain();
        let slack = 1e-12 * a.abs().max(b.abs()).max(1.0);
        if !(x >= a - slack && x <= b + slack) {
            return Err(BamError::InvalidArgument(format!("{x} outside [{a}, {b}]")));
        }
        Ok(self.interpolate(x.clamp(a, b)))
    }

    fn interpolate(&self, x: f64) -> f64 {
        let n = self.breakpoints.len();
        if n == 1 {
            return self.values[0];
        }
        let k = self.breakpoints.partition_point(|&p| p <= x).clamp(1, n - 1);
        let (x0, x1) = (self.breakpoints[k - 1], self.breakpoints[k]);
        let (y0, y1) = (self.values[k - 1], self.values[k]);
        y0 + (y1 - y0) * (x - x0) / (x1 - x0)
    }

    /// Pieces of the function extended beyond the right end with slope `-1`:
    /// one per chord, then the tail.
    pub fn pieces_with_tail(&self) -> Vec<Piece> {
        let mut out: Vec<Piece> = self
            .slopes()
            .iter()
            .enumerate()
            .map(|(i, &s)| Piece { at: self.breakpoints[i], value: self.values[i], slope: s })
            .collect();
        let n = self.breakpoints.len();
        out.push(Piece { at: self.breakpoints[n - 1], value: self.values[n - 1], slope: -1.0 });
        out
    }

    /// Value at `x >= a`, continuing with slope `-1` beyond the right end. Returns the
    /// value and the index of the active piece in `pieces_with_tail`.
    pub fn eval_extended(&self, x: f64) -> (f64, usize) {
        let n = self.breakpoints.len();
        let b = self.breakpoints[n - 1];
        if x >= b || n == 1 {
            return (self.values[n - 1] - (x - b), n - 1);
        }
        let k = self.breakpoints.partition_point(|&p| p <= x).clamp(1, n - 1);
        (self.interpolate(x), k - 1)
    }

    /// Right slope at the left end, or `-1` on a one-point domain.
    pub fn first_slope(&self) -> f64 {
        self.slopes().first().copied().unwrap_or(-1.0)
    }

    /// Largest value and the smallest breakpoint attaining it.
    pub fn argmax(&self) -> (f64, f64) {
        let mut best = 0;
        for i in 1..self.values.len() {
            if self.values[i] > self.values[best] {
                best = i;
            }
        }
        (self.breakpoints[best], self.values[best])
    }

    /// The same function shifted up by `delta`.
    pub fn shifted(&self, delta: f64) -> Self {
        Self { breakpoints: self.breakpoints.clone(), values: self.values.iter().map(|v| v + delta).collect() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interpolates_and_rejects_outside() {
        let f = PiecewiseLinearConcave::new(vec![0.0, 1.0, 3.0], vec![0.0, 2.0, 1.0]).unwrap();
        assert_eq!(f.eval(0.5).unwrap(), 1.0);
        assert_eq!(f.eval(2.0).unwrap(), 1.5);
        assert!(f.eval(3.5).is_err());
        assert_eq!(f.eval_extended(4.0), (0.0, 2));
        assert_eq!(f.argmax(), (1.0, 2.0));
        assert_eq!(f.pieces_with_tail().len(), 3);
    }

    #[test]
    fn rejects_convex_kink() {
        let r = PiecewiseLinearConcave::new(vec![0.0, 1.0, 2.0], vec![0.0, 0.0, 1.0]);
        assert!(matches!(r, Err(BamError::NotConcave { .. })));
    }

    #[test]
    fn one_point_domain() {
        let f = PiecewiseLinearConcave::new(vec![0.0], vec![0.0]).unwrap();
        assert_eq!(f.eval(0.0).unwrap(), 0.0);
        assert_eq!(f.eval_extended(2.0).0, -2.0);
        assert_eq!(f.first_slope(), -1.0);
    }
}
