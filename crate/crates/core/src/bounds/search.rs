//! One-dimensional searches and coordinate descent for convex objectives.

const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Result of a one-dimensional minimization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineMin {
    pub x: f64,
    pub fx: f64,
    pub evaluations: usize,
}

/// Golden-section search for the minimum of a convex function on `[lo, hi]`.
/// The endpoints are evaluated too, so a minimum on the boundary is found
/// exactly.
pub fn golden_section(mut f: impl FnMut(f64) -> f64, lo: f64, hi: f64, tol: f64) -> LineMin {
    let (mut a, mut b) = if lo <= hi { (lo, hi) } else { (hi, lo) };
    let fa0 = f(a);
    let fb0 = f(b);
    let mut best = if fa0 <= fb0 { (a, fa0) } else { (b, fb0) };
    let mut evals = 2;
    if b - a <= tol {
        return LineMin { x: best.0, fx: best.1, evaluations: evals };
    }
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    evals += 2;
    while b - a > tol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
        evals += 1;
        if evals > 400 {
            break;
        }
    }
    for (x, fx) in [(c, fc), (d, fd)] {
        if fx < best.1 {
            best = (x, fx);
        }
    }
    LineMin { x: best.0, fx: best.1, evaluations: evals }
}

/// Longest pattern move, in multiples of the displacement it follows.
const PATTERN_REACH: f64 = 16.0;

/// Outcome of [`coordinate_descent`].
#[derive(Debug, Clone, PartialEq)]
pub struct CoordinateDescentResult {
    pub x: Vec<f64>,
    pub fx: f64,
    pub evaluations: usize,
    pub sweeps: usize,
    /// Objective decrease over the last sweep.
    pub final_improvement: f64,
    pub converged: bool,
}

/// Line search from `x` along `x - from`, kept inside the brackets. Updates
/// `x` and `fx` on improvement and returns the evaluations spent.
fn pattern_move(
    x: &mut [f64],
    fx: &mut f64,
    from: &[f64],
    bracket: &impl Fn(usize) -> (f64, f64),
    f: &mut impl FnMut(&[f64]) -> f64,
) -> usize {
    let step: Vec<f64> = x.iter().zip(from).map(|(a, b)| a - b).collect();
    let t_max = (0..x.len())
        .filter(|&i| step[i] != 0.0)
        .map(|i| {
            let (lo, hi) = bracket(i);
            if step[i] > 0.0 { (hi - x[i]) / step[i] } else { (lo - x[i]) / step[i] }
        })
        .fold(PATTERN_REACH, f64::min);
    if !(t_max > 0.0) || step.iter().all(|&d| d == 0.0) {
        return 0;
    }
    let base = x.to_vec();
    let mut probe = base.clone();
    let m = golden_section(
        |t| {
            for i in 0..probe.len() {
                probe[i] = base[i] + t * step[i];
            }
            f(&probe)
        },
        0.0,
        t_max,
        1e-11 * t_max.max(1.0),
    );
    if m.fx < *fx {
        for i in 0..x.len() {
            x[i] = base[i] + m.x * step[i];
        }
        *fx = m.fx;
    }
    m.evaluations
}

/// Cyclic coordinate descent with golden-section line searches. Each
/// coordinate is searched on `bracket(i)`; the incumbent value is kept when
/// the search does not improve on it, so the objective never increases.
///
/// On piecewise-linear objectives single coordinates can zigzag down a
/// diagonal valley, so after each sweep a line search follows the net
/// displacement of the last one and the last two sweeps.
/// Stops when a sweep improves by less than `tol * (1 + |f|)`.
pub fn coordinate_descent(
    x0: Vec<f64>,
    bracket: impl Fn(usize) -> (f64, f64),
    mut f: impl FnMut(&[f64]) -> f64,
    tol: f64,
    max_sweeps: usize,
) -> CoordinateDescentResult {
    let mut x = x0;
    let mut fx = f(&x);
    let mut evaluations = 1;
    let mut final_improvement = f64::INFINITY;
    let mut sweeps = 0;
    let mut converged = x.is_empty();
    let mut older: Option<Vec<f64>> = None;
    while !converged && sweeps < max_sweeps {
        sweeps += 1;
        let start = fx;
        let origin = x.clone();
        for i in 0..x.len() {
            let (lo, hi) = bracket(i);
            let keep = x[i];
            let line_tol = 1e-11 * (hi - lo).abs().max(1.0);
            let m = golden_section(
                |v| {
                    x[i] = v;
                    f(&x)
                },
                lo,
                hi,
                line_tol,
            );
            evaluations += m.evaluations;
            if m.fx < fx {
                x[i] = m.x;
                fx = m.fx;
            } else {
                x[i] = keep;
            }
        }
        if fx < start {
            evaluations += pattern_move(&mut x, &mut fx, &origin, &bracket, &mut f);
            if let Some(o) = &older {
                evaluations += pattern_move(&mut x, &mut fx, o, &bracket, &mut f);
            }
        }
        older = Some(origin);
        final_improvement = start - fx;
        converged = final_improvement < tol * (1.0 + fx.abs());
    }
    CoordinateDescentResult { x, fx, evaluations, sweeps, final_improvement, converged }
}
