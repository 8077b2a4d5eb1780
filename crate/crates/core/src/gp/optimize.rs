//! Box-constrained quasi-Newton ascent driven by finite-difference gradients.

/// Central-difference step used for gradients inside the optimizer.
pub const FD_STEP: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct AscentConfig {
    pub fd_step: f64,
    pub max_iter: usize,
    pub grad_tol: f64,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct AscentResult {
    pub x: Vec<f64>,
    pub value: f64,
    /// Objective after the start point and after every accepted step.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Central finite-difference gradient; `None` when any evaluation is non-finite.
pub fn fd_gradient<F: Fn(&[f64]) -> f64>(f: &F, x: &[f64], h: f64) -> Option<Vec<f64>> {
    let mut xp = x.to_vec();
    let mut g = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = xp[i];
        xp[i] = orig + h;
        let up = f(&xp);
        xp[i] = orig - h;
        let down = f(&xp);
        xp[i] = orig;
        let d = (up - down) / (2.0 * h);
        if !d.is_finite() {
            return None;
        }
        g.push(d);
    }
    Some(g)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn clamp_into(x: &mut [f64], lo: &[f64], hi: &[f64]) {
    for i in 0..x.len() {
        x[i] = x[i].clamp(lo[i], hi[i]);
    }
}

/// Maximizes `f` from `x0`. Steps are accepted only when they raise the
/// objective, so `trace` is non-decreasing. Returns `None` if `f(x0)` is
/// not finite.
pub fn maximize<F: Fn(&[f64]) -> f64>(f: F, x0: &[f64], cfg: &AscentConfig) -> Option<AscentResult> {
    let n = x0.len();
    let mut x = x0.to_vec();
    clamp_into(&mut x, &cfg.lower, &cfg.upper);
    let mut fx = f(&x);
    if !fx.is_finite() {
        return None;
    }
    let mut trace = vec![fx];
    let mut grad = fd_gradient(&f, &x, cfg.fd_step)?;
    // Inverse Hessian approximation of −f.
    let mut h = identity(n);
    let mut converged = false;
    let mut iterations = 0;
    let mut stalls = 0;

    while iterations < cfg.max_iter {
        iterations += 1;
        if projected_grad_norm(&x, &grad, cfg) < cfg.grad_tol {
            converged = true;
            break;
        }

        let mut accepted = None;
        for attempt in 0..2 {
            if attempt == 1 {
                h = identity(n);
            }
            let dir: Vec<f64> = (0..n).map(|i| dot(&h[i * n..(i + 1) * n], &grad)).collect();
            let slope = dot(&dir, &grad);
            if !(slope > 0.0) {
                continue;
            }
            // Keep the first trial step to at most one unit in log-parameter space.
            let norm = dir.iter().map(|d| d * d).sum::<f64>().sqrt();
            let mut t = if norm > 1.0 { 1.0 / norm } else { 1.0 };
            for _ in 0..40 {
                let mut cand: Vec<f64> = (0..n).map(|i| x[i] + t * dir[i]).collect();
                clamp_into(&mut cand, &cfg.lower, &cfg.upper);
                let fc = f(&cand);
                let moved: f64 = (0..n).map(|i| (cand[i] - x[i]) * grad[i]).sum();
                if fc.is_finite() && fc > fx && fc >= fx + 1e-4 * moved.max(0.0) {
                    accepted = Some((cand, fc));
                    break;
                }
                t *= 0.5;
            }
            if accepted.is_some() {
                break;
            }
        }

        let Some((x_new, f_new)) = accepted else {
            converged = true;
            break;
        };
        let Some(g_new) = fd_gradient(&f, &x_new, cfg.fd_step) else {
            break;
        };
        // BFGS update for the minimization of −f: s = Δx, y = −Δg.
        let s: Vec<f64> = (0..n).map(|i| x_new[i] - x[i]).collect();
        let y: Vec<f64> = (0..n).map(|i| grad[i] - g_new[i]).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 {
            bfgs_update(&mut h, &s, &y, sy);
        }
        let gain = f_new - fx;
        x = x_new;
        fx = f_new;
        grad = g_new;
        trace.push(fx);
        if gain < 1e-10 * (1.0 + fx.abs()) {
            stalls += 1;
            if stalls >= 3 {
                converged = true;
                break;
            }
        } else {
            stalls = 0;
        }
    }

    Some(AscentResult {
        x,
        value: fx,
        trace,
        iterations,
        converged,
    })
}

fn identity(n: usize) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        m[i * n + i] = 1.0;
    }
    m
}

fn projected_grad_norm(x: &[f64], g: &[f64], cfg: &AscentConfig) -> f64 {
    let mut m = 0.0f64;
    for i in 0..x.len() {
        let blocked = (x[i] <= cfg.lower[i] && g[i] < 0.0) || (x[i] >= cfg.upper[i] && g[i] > 0.0);
        if !blocked {
            m = m.max(g[i].abs());
        }
    }
    m
}

fn bfgs_update(h: &mut [f64], s: &[f64], y: &[f64], sy: f64) {
    let n = s.len();
    let rho = 1.0 / sy;
    let hy: Vec<f64> = (0..n).map(|i| dot(&h[i * n..(i + 1) * n], y)).collect();
    let yhy = dot(y, &hy);
    for i in 0..n {
        for j in 0..n {
            h[i * n + j] += -rho * (hy[i] * s[j] + s[i] * hy[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
        }
    }
}
