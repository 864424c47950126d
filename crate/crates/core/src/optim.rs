//! Box-constrained local minimizers used for hyperparameter searches.
//!
//! `lbfgs_bounded` is a projected limited-memory quasi-Newton method with
//! Armijo backtracking along the projected path. `nelder_mead_bounded` is the
//! derivative-free fallback; vertices are clamped into the box.

use std::collections::VecDeque;

#[derive(Clone, Debug)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Bounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Self {
        debug_assert_eq!(lower.len(), upper.len());
        Bounds { lower, upper }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn clamp(&self, x: &mut [f64]) {
        for ((v, lo), hi) in x.iter_mut().zip(&self.lower).zip(&self.upper) {
            *v = v.clamp(*lo, *hi);
        }
    }
}

#[derive(Clone, Debug)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
    pub converged: bool,
}

#[derive(Clone, Copy, Debug)]
pub struct Tolerances {
    pub max_iter: usize,
    /// Relative change in objective below which the search stops.
    pub ftol: f64,
    /// Infinity norm of the projected gradient below which the search stops.
    pub gtol: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { max_iter: 100, ftol: 1e-9, gtol: 1e-6 }
    }
}

const MEMORY: usize = 7;

fn projected_gradient(x: &[f64], g: &[f64], b: &Bounds) -> Vec<f64> {
    x.iter()
        .zip(g)
        .enumerate()
        .map(|(i, (&xi, &gi))| {
            if (xi <= b.lower[i] && gi > 0.0) || (xi >= b.upper[i] && gi < 0.0) {
                0.0
            } else {
                gi
            }
        })
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Minimize `f` inside `bounds` starting from `x0`. `f` returns `None` where
/// the objective cannot be evaluated; the line search backs off from such
/// points. Returns `None` if the starting point itself cannot be evaluated.
pub fn lbfgs_bounded<F>(mut f: F, x0: &[f64], bounds: &Bounds, tol: Tolerances) -> Option<Minimum>
where
    F: FnMut(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    let mut x = x0.to_vec();
    bounds.clamp(&mut x);
    let (mut fx, mut g) = f(&x).filter(|(v, g)| v.is_finite() && g.iter().all(|d| d.is_finite()))?;
    let mut evals = 1;
    let mut mem: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(MEMORY);
    let mut converged = false;

    for _ in 0..tol.max_iter {
        let pg = projected_gradient(&x, &g, bounds);
        if pg.iter().fold(0.0f64, |m, v| m.max(v.abs())) < tol.gtol {
            converged = true;
            break;
        }
        let active: Vec<bool> = pg.iter().zip(&g).map(|(p, g)| *p == 0.0 && *g != 0.0).collect();

        // two-loop recursion on the free variables
        let mut q = pg.clone();
        let mut alphas = Vec::with_capacity(mem.len());
        for (s, y, rho) in mem.iter().rev() {
            let a = rho * dot(s, &q);
            for (qi, yi) in q.iter_mut().zip(y) {
                *qi -= a * yi;
            }
            alphas.push(a);
        }
        if let Some((s, y, _)) = mem.back() {
            let gamma = dot(s, y) / dot(y, y);
            q.iter_mut().for_each(|v| *v *= gamma);
        }
        for ((s, y, rho), a) in mem.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &q);
            for (qi, si) in q.iter_mut().zip(s) {
                *qi += (a - b) * si;
            }
        }
        let mut d: Vec<f64> = q.iter().zip(&active).map(|(v, &act)| if act { 0.0 } else { -v }).collect();
        if dot(&d, &pg) >= 0.0 {
            d = pg.iter().map(|v| -v).collect();
            mem.clear();
        }

        let mut step = if mem.is_empty() {
            (1.0 / d.iter().fold(0.0f64, |m, v| m.max(v.abs()))).min(1.0)
        } else {
            1.0
        };
        let mut accepted = None;
        for _ in 0..40 {
            let mut xn: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + step * di).collect();
            bounds.clamp(&mut xn);
            let dx: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
            if dx.iter().all(|v| *v == 0.0) {
                break;
            }
            evals += 1;
            match f(&xn) {
                Some((fnew, gnew))
                    if fnew.is_finite()
                        && gnew.iter().all(|v| v.is_finite())
                        && fnew <= fx + 1e-4 * dot(&g, &dx) =>
                {
                    accepted = Some((xn, fnew, gnew, dx));
                    break;
                }
                _ => step *= 0.5,
            }
        }
        let Some((xn, fnew, gnew, s)) = accepted else {
            if mem.is_empty() {
                break;
            }
            mem.clear();
            continue;
        };
        let y: Vec<f64> = gnew.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&y, &y).max(1e-300) {
            if mem.len() == MEMORY {
                mem.pop_front();
            }
            mem.push_back((s, y, 1.0 / sy));
        }
        let rel = (fx - fnew).abs() / fx.abs().max(1.0);
        x = xn;
        fx = fnew;
        g = gnew;
        if rel < tol.ftol {
            converged = true;
            break;
        }
    }
    Some(Minimum { x, value: fx, evaluations: evals, converged })
}

/// Derivative-free simplex search inside `bounds`. Non-evaluable points are
/// treated as `+inf`.
pub fn nelder_mead_bounded<F>(mut f: F, x0: &[f64], bounds: &Bounds, step: f64, max_evals: usize) -> Option<Minimum>
where
    F: FnMut(&[f64]) -> Option<f64>,
{
    let n = x0.len();
    let mut eval = |x: &[f64]| f(x).filter(|v| v.is_finite()).unwrap_or(f64::INFINITY);
    let mut start = x0.to_vec();
    bounds.clamp(&mut start);
    let mut simplex = vec![start.clone()];
    for i in 0..n {
        let mut v = start.clone();
        let room_up = bounds.upper[i] - v[i];
        v[i] += if room_up >= step { step } else { -step };
        bounds.clamp(&mut v);
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| eval(v)).collect();
    let mut evals = n + 1;
    if values.iter().all(|v| v.is_infinite()) {
        return None;
    }
    let mut converged = false;

    while evals < max_evals {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();

        let spread = (values[n] - values[0]).abs();
        if values[n].is_finite() && spread <= 1e-10 * (1.0 + values[0].abs()) {
            converged = true;
            break;
        }

        let centroid: Vec<f64> = (0..n).map(|k| simplex[..n].iter().map(|v| v[k]).sum::<f64>() / n as f64).collect();
        let along = |t: f64| {
            let mut v: Vec<f64> = centroid.iter().zip(&simplex[n]).map(|(c, w)| c + t * (c - w)).collect();
            bounds.clamp(&mut v);
            v
        };

        let xr = along(1.0);
        let fr = eval(&xr);
        evals += 1;
        if fr < values[0] {
            let xe = along(2.0);
            let fe = eval(&xe);
            evals += 1;
            if fe < fr {
                simplex[n] = xe;
                values[n] = fe;
            } else {
                simplex[n] = xr;
                values[n] = fr;
            }
        } else if fr < values[n - 1] {
            simplex[n] = xr;
            values[n] = fr;
        } else {
            let t = if fr < values[n] { 0.5 } else { -0.5 };
            let xc = along(t);
            let fc = eval(&xc);
            evals += 1;
            if fc < values[n].min(fr) {
                simplex[n] = xc;
                values[n] = fc;
            } else {
                for i in 1..=n {
                    let v: Vec<f64> = simplex[0].iter().zip(&simplex[i]).map(|(b, w)| b + 0.5 * (w - b)).collect();
                    values[i] = eval(&v);
                    simplex[i] = v;
                    evals += 1;
                }
            }
        }
    }

    let best = (0..=n).min_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)))?;
    values[best].is_finite().then(|| Minimum {
        x: simplex[best].clone(),
        value: values[best],
        evaluations: evals,
        converged,
    })
}

/// Golden-section search for a minimum of a 1-D function on `[lo, hi]`,
/// started from a bracket around `x0`.
pub fn golden_section<F: FnMut(f64) -> f64>(mut f: F, x0: f64, lo: f64, hi: f64, width: f64, iters: usize) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut a = (x0 - width).max(lo);
    let mut b = (x0 + width).min(hi);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..iters {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    let f0 = f(x0);
    let (xm, fm) = if fc < fd { (c, fc) } else { (d, fd) };
    if f0 <= fm {
        (x0, f0)
    } else {
        (xm, fm)
    }
}
