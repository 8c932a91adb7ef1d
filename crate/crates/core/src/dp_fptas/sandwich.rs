use super::piecewise::PiecewiseLinearConcave;
use crate::error::{BamError, Result};

/// Lower and upper concave bounds of an oracle function with gap at most `delta`.
#[derive(Clone, Debug, PartialEq)]
pub struct SandwichResult {
    pub lower: PiecewiseLinearConcave,
    pub upper: PiecewiseLinearConcave,
    /// Oracle calls at interior points; the two end values are supplied by the caller.
    pub queries: usize,
}

/// Sandwiches a concave `evaluate` on `[a, b]` between chord interpolation and chord
/// interpolation plus `delta`.
///
/// `beta_a` must bound the right derivative at `a` from above and `beta_b` the left
/// derivative at `b` from below.
#[allow(clippy::too_many_arguments)]
pub fn sandwich(
    evaluate: &mut dyn FnMut(f64) -> Result<f64>,
    a: f64,
    b: f64,
    f_a: f64,
    f_b: f64,
    beta_a: f64,
    beta_b: f64,
    delta: f64,
) -> Result<SandwichResult> {
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(BamError::BadDelta(delta));
    }
    if !(b >= a) {
        return Err(BamError::InvalidArgument(format!("empty interval [{a}, {b}]")));
    }
    if b == a {
        let lower = PiecewiseLinearConcave::new(vec![a], vec![f_a])?;
        return Ok(SandwichResult { upper: lower.shifted(delta), lower, queries: 0 });
    }
    let beta = (f_b - f_a) / (b - a);
    let chord = |x: f64| f_a + beta * (x - a);
    let scale = f_a.abs().max(f_b.abs()).max(1.0);
    let tol = 1e-9 * scale;
    let tol_slope = tol / (b - a);
    let sa = beta_a - beta;
    let sb = beta_b - beta;
    if sa < -tol_slope {
        return Err(BamError::NotConcave { at: a });
    }
    if sb > tol_slope {
        return Err(BamError::NotConcave { at: b });
    }
    let mut queries = 0usize;
    // points as (x, f(x) - chord(x))
    let mut pts: Vec<(f64, f64)> = vec![(a, 0.0)];
    let linear = sa <= tol_slope || sb >= -tol_slope;
    if !linear {
        let mut psi = |x: f64, q: &mut usize| -> Result<f64> {
            *q += 1;
            Ok(evaluate(x)? - chord(x))
        };
        pts.push((b, 0.0));
        // split each segment at the crossing of its neighbouring chord lines until
        // the triangle they bound is at most delta high against the envelope of its neighbouring chords
        loop {
            check_concave(&pts, sa, sb, a, b, tol)?;
            let mut added = Vec::new();
            for i in 0..pts.len() - 1 {
                let (x0, y0) = pts[i];
                let (x1, y1) = pts[i + 1];
                let h = x1 - x0;
                if h <= 1e-13 * (b - a) {
                    continue;
                }
                let sc = (y1 - y0) / h;
                let sl = if i == 0 { sa } else { (y0 - pts[i - 1].1) / (x0 - pts[i - 1].0) };
                let sr = if i + 2 == pts.len() { sb } else { (pts[i + 2].1 - y1) / (pts[i + 2].0 - x1) };
                let (ka, kb) = ((sl - sc).max(0.0), (sc - sr).max(0.0));
                if ka + kb == 0.0 {
                    continue;
                }
                let gap = h * ka * kb / (ka + kb);
                if gap > delta {
                    let mut u = h * kb / (ka + kb);
                    if u <= 1e-9 * h || u >= h * (1.0 - 1e-9) {
                        u = h / 2.0;
                    }
                    added.push(x0 + u);
                }
            }
            if added.is_empty() {
                break;
            }
            for x in added {
                let y = psi(x, &mut queries)?;
                pts.push((x, y));
            }
            pts.sort_by(|p, q| p.0.partial_cmp(&q.0).unwrap());
            pts.dedup_by(|p, q| p.0 == q.0);
        }
    } else {
        pts.push((b, 0.0));
    }
    check_concave(&pts, sa, sb, a, b, tol)?;
    let hull = concave_hull(&pts);
    let xs: Vec<f64> = hull.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = hull.iter().map(|p| p.1 + chord(p.0)).collect();
    let lower = PiecewiseLinearConcave::new(xs, ys)?;
    Ok(SandwichResult { upper: lower.shifted(delta), lower, queries })
}

/// Queried offsets must be concave and respect the end-slope bounds.
fn check_concave(pts: &[(f64, f64)], sa: f64, sb: f64, a: f64, b: f64, tol: f64) -> Result<()> {
    for i in 1..pts.len() - 1 {
        let (x0, y0) = pts[i - 1];
        let (x2, y2) = pts[i + 1];
        let mid = y0 + (y2 - y0) * (pts[i].0 - x0) / (x2 - x0);
        if pts[i].1 < mid - tol {
            return Err(BamError::NotConcave { at: pts[i].0 });
        }
    }
    if pts.len() > 2 {
        let n = pts.len();
        let first = (pts[1].1 - pts[0].1) / (pts[1].0 - pts[0].0);
        let last = (pts[n - 1].1 - pts[n - 2].1) / (pts[n - 1].0 - pts[n - 2].0);
        if first > sa + tol / (pts[1].0 - a) {
            return Err(BamError::NotConcave { at: a });
        }
        if last < sb - tol / (b - pts[n - 2].0) {
            return Err(BamError::NotConcave { at: b });
        }
    }
    Ok(())
}

/// Upper concave hull of points sorted by `x`; drops points sitting below a chord.
fn concave_hull(pts: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut out: Vec<(f64, f64)> = Vec::with_capacity(pts.len());
    for &p in pts {
        while out.len() >= 2 {
            let (o, q) = (out[out.len() - 2], out[out.len() - 1]);
            // q is kept only if it lies strictly above the chord o→p
            let cross = (q.0 - o.0) * (p.1 - o.1) - (q.1 - o.1) * (p.0 - o.0);
            if cross >= 0.0 {
                out.pop();
            } else {
                break;
            }
        }
        out.push(p);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_check(f: impl Fn(f64) -> f64, r: &SandwichResult, a: f64, b: f64, delta: f64) {
        for k in 0..=10_000 {
            let x = a + (b - a) * k as f64 / 10_000.0;
            let lo = r.lower.eval(x).unwrap();
            let hi = r.upper.eval(x).unwrap();
            assert!(lo <= f(x) + 1e-9 && f(x) <= hi + 1e-9, "x={x} lo={lo} f={} hi={hi}", f(x));
            assert!(hi - lo <= delta + 1e-12);
        }
    }

    #[test]
    fn linear_needs_no_queries() {
        let mut calls = 0;
        let mut f = |x: f64| {
            calls += 1;
            Ok(2.0 * x + 1.0)
        };
        let r = sandwich(&mut f, 0.0, 3.0, 1.0, 7.0, 2.0, 2.0, 0.1).unwrap();
        assert_eq!(r.queries, 0);
        assert_eq!(r.lower.values(), &[1.0, 7.0]);
        assert_eq!(r.upper.eval(1.5).unwrap(), 4.1);
        assert_eq!(calls, 0);
    }

    #[test]
    fn negative_square() {
        let f = |x: f64| -x * x;
        let r = sandwich(&mut |x| Ok(f(x)), -1.0, 1.0, -1.0, -1.0, 2.0, -2.0, 0.1).unwrap();
        grid_check(f, &r, -1.0, 1.0, 0.1);
    }

    #[test]
    fn tent_breakpoint() {
        let f = |x: f64| x.min(1.0 - x);
        let r = sandwich(&mut |x| Ok(f(x)), 0.0, 1.0, 0.0, 0.0, 1.0, -1.0, 0.01).unwrap();
        grid_check(f, &r, 0.0, 1.0, 0.01);
    }

    #[test]
    fn bad_delta_and_convexity() {
        let mut f = |x: f64| Ok(x * x);
        assert!(matches!(sandwich(&mut f, 0.0, 1.0, 0.0, 1.0, 2.0, 0.0, 0.0), Err(BamError::BadDelta(_))));
        let mut g = |x: f64| Ok(if x < 0.5 { 0.0 } else { 2.0 * (x - 0.5) });
        let r = sandwich(&mut g, 0.0, 1.0, 0.0, 1.0, 3.0, -3.0, 0.01);
        assert!(matches!(r, Err(BamError::NotConcave { .. })));
    }
}
