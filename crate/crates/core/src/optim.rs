//! Derivative-free search primitives shared by the scalar saddle solvers.
//!
//! Everything here is deterministic: no randomness, fixed evaluation order.

/// Golden-section minimization of a unimodal function on `[lo, hi]`.
pub fn golden_section<F: FnMut(f64) -> f64>(mut f: F, lo: f64, hi: f64, tol: f64) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let (mut a, mut b) = (lo.min(hi), lo.max(hi));
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    let mut iters = 0;
    while (b - a) > tol * (1.0 + c.abs() + d.abs()) && iters < 200 {
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
        iters += 1;
    }
    if fc <= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// Step-halving coordinate (compass) search settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoordinateSearch {
    /// First trial step along each coordinate.
    pub initial_step: f64,
    /// Number of times a coordinate's step is halved before it is considered settled.
    pub halvings: u32,
    /// Upper bound on full sweeps over all coordinates.
    pub max_sweeps: usize,
    /// Stop once the largest coordinate move in a sweep is below this.
    pub tol: f64,
}

impl Default for CoordinateSearch {
    fn default() -> Self {
        Self {
            initial_step: 0.5,
            halvings: 12,
            max_sweeps: 200,
            tol: 1e-7,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub sweeps: usize,
    pub evaluations: usize,
    /// Largest coordinate move in the final sweep.
    pub last_move: f64,
    pub converged: bool,
}

/// Box bounds per coordinate; `None` means unbounded on that side.
pub type Bounds = [(Option<f64>, Option<f64>)];

fn clamp(v: f64, b: (Option<f64>, Option<f64>)) -> f64 {
    let v = b.0.map_or(v, |lo| v.max(lo));
    b.1.map_or(v, |hi| v.min(hi))
}

impl CoordinateSearch {
    /// Minimize `f` by cycling through coordinates. Along each coordinate the
    /// search walks with the current step while it improves (doubling the step
    /// after each success) and halves it otherwise, stopping after
    /// `halvings` halvings.
    pub fn minimize<F: FnMut(&[f64]) -> f64>(&self, mut f: F, x0: &[f64], bounds: &Bounds) -> SearchOutcome {
        let n = x0.len();
        assert_eq!(bounds.len(), n, "one bound pair per coordinate");
        let mut x: Vec<f64> = x0.iter().zip(bounds).map(|(&v, &b)| clamp(v, b)).collect();
        let mut fx = f(&x);
        let mut evals = 1;
        let mut steps = vec![self.initial_step; n];
        let mut last_move = f64::INFINITY;
        let mut sweeps = 0;
        let mut converged = false;

        while sweeps < self.max_sweeps {
            sweeps += 1;
            let mut sweep_move: f64 = 0.0;
            for i in 0..n {
                let start = x[i];
                let mut step = steps[i].max(self.initial_step * 0.5f64.powi(self.halvings as i32));
                let mut halvings = 0;
                let mut direction = 0.0;
                while halvings <= self.halvings {
                    let mut improved = false;
                    let dirs: &[f64] = if direction == 0.0 { &[1.0, -1.0] } else if direction > 0.0 { &[1.0] } else { &[-1.0] };
                    for &dir in dirs {
                        let cand = clamp(x[i] + dir * step, bounds[i]);
                        if cand == x[i] {
                            continue;
                        }
                        let old = x[i];
                        x[i] = cand;
                        let fc = f(&x);
                        evals += 1;
                        if fc < fx {
                            fx = fc;
                            direction = dir;
                            improved = true;
                            break;
                        }
                        x[i] = old;
                    }
                    if improved {
                        step *= 2.0;
                    } else {
                        if direction != 0.0 {
                            direction = 0.0;
                        }
                        step *= 0.5;
                        halvings += 1;
                    }
                }
                // Next sweep starts this coordinate at a step matched to how far it moved.
                let moved = (x[i] - start).abs();
                steps[i] = (moved * 2.0).clamp(self.initial_step * 0.5f64.powi(self.halvings as i32), self.initial_step);
                sweep_move = sweep_move.max(moved);
            }
            last_move = sweep_move;
            if sweep_move < self.tol {
                converged = true;
                break;
            }
        }
        SearchOutcome {
            x,
            value: fx,
            sweeps,
            evaluations: evals,
            last_move,
            converged,
        }
    }

    pub fn maximize<F: FnMut(&[f64]) -> f64>(&self, mut f: F, x0: &[f64], bounds: &Bounds) -> SearchOutcome {
        let mut out = self.minimize(|x| -f(x), x0, bounds);
        out.value = -out.value;
        out
    }
}

/// Result of a nested min-max search.
#[derive(Debug, Clone, PartialEq)]
pub struct SaddleOutcome {
    pub min_vars: Vec<f64>,
    pub max_vars: Vec<f64>,
    pub value: f64,
    pub outer: SearchOutcome,
    pub evaluations: usize,
}

/// `min_x max_y f(x, y)` by nested coordinate search: the outer search over
/// `x` evaluates the inner maximum over `y`, warm-started from the previous
/// inner maximizer.
pub fn nested_saddle<F>(
    f: F,
    x0: &[f64],
    y0: &[f64],
    x_bounds: &Bounds,
    y_bounds: &Bounds,
    outer: &CoordinateSearch,
    inner: &CoordinateSearch,
) -> SaddleOutcome
where
    F: Fn(&[f64], &[f64]) -> f64,
{
    let mut y_warm = y0.to_vec();
    let mut evaluations = 0usize;
    let outer_out = outer.minimize(
        |x| {
            let res = inner.maximize(|y| f(x, y), &y_warm, y_bounds);
            evaluations += res.evaluations;
            y_warm = res.x;
            res.value
        },
        x0,
        x_bounds,
    );
    // Re-solve the inner problem at the final outer point so the returned pair is consistent.
    let fin = inner.maximize(|y| f(&outer_out.x, y), &y_warm, y_bounds);
    evaluations += fin.evaluations;
    SaddleOutcome {
        min_vars: outer_out.x.clone(),
        max_vars: fin.x,
        value: fin.value,
        outer: outer_out,
        evaluations,
    }
}

/// Largest violation of the saddle conditions under `±probe` coordinate
/// perturbations: moving a min variable must not decrease `f`, moving a max
/// variable must not increase it.
pub fn saddle_residual<F>(f: F, x: &[f64], y: &[f64], probe: f64, x_bounds: &Bounds, y_bounds: &Bounds) -> f64
where
    F: Fn(&[f64], &[f64]) -> f64,
{
    let base = f(x, y);
    let mut worst: f64 = 0.0;
    let mut xs = x.to_vec();
    for i in 0..x.len() {
        for dir in [1.0, -1.0] {
            let cand = clamp(x[i] + dir * probe, x_bounds[i]);
            if cand == x[i] {
                continue;
            }
            xs[i] = cand;
            worst = worst.max(base - f(&xs, y));
            xs[i] = x[i];
        }
    }
    let mut ys = y.to_vec();
    for i in 0..y.len() {
        for dir in [1.0, -1.0] {
            let cand = clamp(y[i] + dir * probe, y_bounds[i]);
            if cand == y[i] {
                continue;
            }
            ys[i] = cand;
            worst = worst.max(f(x, &ys) - base);
            ys[i] = y[i];
        }
    }
    worst
}
