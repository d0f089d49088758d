//! Debiased entropic transport in the log domain.
//!
//! The self terms are annealed geometrically from the support diameter down
//! to the target blur with averaged symmetric updates. For `p = 1` the cross
//! potentials start from the exact 1-D Kantorovich potential, which places
//! them within `O(ε)` of the entropic solution; otherwise the cross term is
//! annealed as well. Both are then refined by Anderson-accelerated
//! alternating updates at the target blur until the marginal violation is below
//! tolerance.

use super::{DiscreteMass, TransportParams, TransportValue};
use crate::{Error, Result};
use nalgebra::{DMatrix, DVector};
use std::collections::VecDeque;

/// History length of the Anderson-accelerated cross iteration.
const ANDERSON_DEPTH: usize = 5;

/// Safeguarded Anderson acceleration of the fixed point `f = G(f)`; the
/// history is dropped whenever the violation jumps above twice its best.
struct Anderson {
    depth: usize,
    xs: VecDeque<Vec<f64>>,
    rs: VecDeque<Vec<f64>>,
    best: f64,
}

impl Anderson {
    fn new(depth: usize) -> Self {
        Self {
            depth,
            xs: VecDeque::new(),
            rs: VecDeque::new(),
            best: f64::INFINITY,
        }
    }

    /// Replaces `f` by the next iterate given `gf = G(f)` and its violation.
    fn step(&mut self, f: &mut [f64], gf: &[f64], violation: f64) {
        if !violation.is_finite() || violation > 2.0 * self.best {
            self.xs.clear();
            self.rs.clear();
        }
        self.best = self.best.min(violation);
        let r: Vec<f64> = gf.iter().zip(f.iter()).map(|(g, x)| g - x).collect();
        self.xs.push_back(f.to_vec());
        self.rs.push_back(r.clone());
        if self.xs.len() > self.depth {
            self.xs.pop_front();
            self.rs.pop_front();
        }
        let k = self.rs.len() - 1;
        if k > 0 {
            let n = f.len();
            let dr = DMatrix::from_fn(n, k, |i, j| self.rs[j + 1][i] - self.rs[j][i]);
            let dx = DMatrix::from_fn(n, k, |i, j| self.xs[j + 1][i] - self.xs[j][i]);
            if let Ok(gamma) = dr.clone().svd(true, true).solve(&DVector::from_column_slice(&r), 1e-12) {
                let corr = (dx + dr) * gamma;
                if corr.iter().all(|c| c.is_finite()) {
                    for i in 0..n {
                        f[i] += r[i] - corr[i];
                    }
                    return;
                }
            }
        }
        f.copy_from_slice(gf);
    }
}

struct Cost {
    rows: usize,
    cols: usize,
    c: Vec<f64>,
    /// `∂c(x_i, y_j)/∂x_i`
    d: Vec<f64>,
}

impl Cost {
    fn new(x: &[f64], y: &[f64], p: f64) -> Self {
        let mut c = Vec::with_capacity(x.len() * y.len());
        let mut d = Vec::with_capacity(x.len() * y.len());
        for &xi in x {
            for &yj in y {
                let diff = xi - yj;
                let ad = diff.abs();
                if p == 1.0 {
                    c.push(ad);
                    d.push(if ad > 0.0 { diff.signum() } else { 0.0 });
                } else {
                    c.push(ad.powf(p));
                    d.push(p * ad.powf(p - 1.0) * diff.signum());
                }
            }
        }
        Self {
            rows: x.len(),
            cols: y.len(),
            c,
            d,
        }
    }

    fn transpose(&self) -> Self {
        let mut c = vec![0.0; self.c.len()];
        let mut d = vec![0.0; self.d.len()];
        for i in 0..self.rows {
            for j in 0..self.cols {
                c[j * self.rows + i] = self.c[i * self.cols + j];
                // ∂c(x_i,y_j)/∂y_j = -∂c/∂x_i
                d[j * self.rows + i] = -self.d[i * self.cols + j];
            }
        }
        Self {
            rows: self.cols,
            cols: self.rows,
            c,
            d,
        }
    }
}

/// `out_i = -ε log Σ_j exp(log_w_j + h_j/ε - C_ij/ε)`.
fn softmin(eps: f64, cost: &Cost, log_w: &[f64], h: &[f64], out: &mut [f64]) {
    let inv = 1.0 / eps;
    let mut buf = vec![0.0; cost.cols];
    for i in 0..cost.rows {
        let row = &cost.c[i * cost.cols..(i + 1) * cost.cols];
        let mut mx = f64::NEG_INFINITY;
        for j in 0..cost.cols {
            let v = log_w[j] + (h[j] - row[j]) * inv;
            buf[j] = v;
            mx = mx.max(v);
        }
        let s: f64 = buf.iter().map(|v| (v - mx).exp()).sum();
        out[i] = -eps * (mx + s.ln());
    }
}

/// Row-marginal violation `Σ_i α_i |exp((f_i - t_i)/ε) - 1|` of the plan
/// built from `f` and a partner potential whose softmin is `t`.
fn row_violation(eps: f64, log_w: &[f64], f: &[f64], t: &[f64]) -> f64 {
    log_w
        .iter()
        .zip(f.iter().zip(t))
        .map(|(l, (fi, ti))| l.exp() * ((fi - ti) / eps).exp_m1().abs())
        .sum()
}

/// `Σ_j π_ij ∂c(x_i,y_j)/∂x_i` for every `i`.
fn plan_pull(eps: f64, cost: &Cost, la: &[f64], lb: &[f64], f: &[f64], g: &[f64]) -> Vec<f64> {
    (0..cost.rows)
        .map(|i| {
            (0..cost.cols)
                .map(|j| {
                    let k = i * cost.cols + j;
                    (la[i] + lb[j] + (f[i] + g[j] - cost.c[k]) / eps).exp() * cost.d[k]
                })
                .sum()
        })
        .collect()
}

fn blur_schedule(diameter: f64, params: &TransportParams) -> Vec<f64> {
    let p = params.p;
    let mut eps = vec![diameter.powf(p)];
    let mut s = diameter;
    while s * params.scaling > params.blur {
        s *= params.scaling;
        eps.push(s.powf(p));
    }
    eps.push(params.blur.powf(p));
    eps
}

/// Kantorovich potential of W1 between `a` and `b`,
/// `φ(t) = -∫ sign(F_a - F_b)`, evaluated at the atoms of both.
fn w1_potential(a: &DiscreteMass, b: &DiscreteMass) -> (Vec<f64>, Vec<f64>) {
    let mut events: Vec<(f64, f64, usize)> = Vec::with_capacity(a.len() + b.len());
    events.extend(a.atoms().iter().zip(a.mass()).enumerate().map(|(i, (&x, &m))| (x, m, i)));
    let n = a.len();
    events.extend(b.atoms().iter().zip(b.mass()).enumerate().map(|(j, (&y, &m))| (y, -m, n + j)));
    events.sort_by(|u, v| u.0.total_cmp(&v.0));
    let mut pa = vec![0.0; n];
    let mut pb = vec![0.0; b.len()];
    let (mut phi, mut diff) = (0.0, 0.0);
    let mut prev = events[0].0;
    for &(t, m, id) in &events {
        let slope = if diff > 1e-12 {
            -1.0
        } else if diff < -1e-12 {
            1.0
        } else {
            0.0
        };
        phi += slope * (t - prev);
        prev = t;
        diff += m;
        if id < n {
            pa[id] = phi;
        } else {
            pb[id - n] = phi;
        }
    }
    (pa, pb)
}

/// Symmetric solve of `OT_ε(a, a)`: returns the self potential.
fn self_potential(eps_schedule: &[f64], cost: &Cost, lw: &[f64], tol: f64, cap: usize) -> Result<Vec<f64>> {
    let mut f = vec![0.0; lw.len()];
    let mut t = vec![0.0; lw.len()];
    softmin(eps_schedule[0], cost, lw, &f, &mut t);
    f.copy_from_slice(&t);
    for &eps in &eps_schedule[1..] {
        softmin(eps, cost, lw, &f, &mut t);
        for (d, s) in f.iter_mut().zip(&t) {
            *d = 0.5 * (*d + s);
        }
    }
    let eps = *eps_schedule.last().unwrap();
    for it in 0.. {
        softmin(eps, cost, lw, &f, &mut t);
        // rows and columns of a symmetric plan violate equally
        let v = 2.0 * row_violation(eps, lw, &f, &t);
        if v.is_nan() {
            return Err(Error::NotConverged { iterations: it, violation: v });
        }
        if v <= tol {
            break;
        }
        if it >= cap {
            return Err(Error::NotConverged { iterations: it, violation: v });
        }
        for (d, s) in f.iter_mut().zip(&t) {
            *d = 0.5 * (*d + s);
        }
    }
    Ok(f)
}

/// Debiased Sinkhorn divergence `OT_ε(a,b) - ½OT_ε(a,a) - ½OT_ε(b,b)` with
/// `ε = blur^p` and cost `|x-y|^p`.
///
/// The result is exactly symmetric: the pair is put in a canonical order
/// before solving. Gradients use the envelope theorem on the converged
/// potentials. `max_iters` bounds the refinement iterations at the target
/// blur, per term.
pub fn sinkhorn_divergence(a: &DiscreteMass, b: &DiscreteMass, params: &TransportParams) -> Result<TransportValue> {
    params.validate()?;
    if canonical_swap(a, b) {
        let v = solve(b, a, params)?;
        return Ok(TransportValue {
            value: v.value,
            grad_a: v.grad_b,
            grad_b: v.grad_a,
        });
    }
    solve(a, b, params)
}

fn canonical_swap(a: &DiscreteMass, b: &DiscreteMass) -> bool {
    let key = |m: &DiscreteMass| (m.len(), m.atoms().iter().chain(m.mass()).map(|v| v.to_bits()).collect::<Vec<_>>());
    key(a) > key(b)
}

fn solve(a: &DiscreteMass, b: &DiscreteMass, params: &TransportParams) -> Result<TransportValue> {
    let (x, y) = (a.atoms(), b.atoms());
    let la: Vec<f64> = a.mass().iter().map(|m| m.ln()).collect();
    let lb: Vec<f64> = b.mass().iter().map(|m| m.ln()).collect();

    let cxy = Cost::new(x, y, params.p);
    let cyx = cxy.transpose();
    let cxx = Cost::new(x, x, params.p);
    let cyy = Cost::new(y, y, params.p);

    let lo = x.iter().chain(y).copied().fold(f64::INFINITY, f64::min);
    let hi = x.iter().chain(y).copied().fold(f64::NEG_INFINITY, f64::max);
    let diameter = (hi - lo).max(params.blur);
    let schedule = blur_schedule(diameter, params);
    let eps = *schedule.last().unwrap();

    let f_aa = self_potential(&schedule, &cxx, &la, params.tolerance, params.max_iters)?;
    let g_bb = self_potential(&schedule, &cyy, &lb, params.tolerance, params.max_iters)?;

    let (n, m) = (x.len(), y.len());
    let (mut f, mut g) = (vec![0.0; n], vec![0.0; m]);
    let (mut tf, mut tg) = (vec![0.0; n], vec![0.0; m]);
    if params.p == 1.0 {
        let (pa, pb) = w1_potential(a, b);
        f = pa;
        g = pb.iter().map(|v| -v).collect();
    } else {
        softmin(schedule[0], &cxy, &lb, &g, &mut f);
        softmin(schedule[0], &cyx, &la, &tf, &mut g);
        for &e in &schedule[1..] {
            softmin(e, &cxy, &lb, &g, &mut tf);
            softmin(e, &cyx, &la, &f, &mut tg);
            for (d, s) in f.iter_mut().zip(&tf) {
                *d = 0.5 * (*d + s);
            }
            for (d, s) in g.iter_mut().zip(&tg) {
                *d = 0.5 * (*d + s);
            }
        }
    }
    let mut accel = Anderson::new(ANDERSON_DEPTH);
    for it in 0.. {
        // `g` is the exact partner of `f`, so only the rows can be violated
        softmin(eps, &cyx, &la, &f, &mut g);
        softmin(eps, &cxy, &lb, &g, &mut tf);
        let v = row_violation(eps, &la, &f, &tf);
        if v.is_nan() {
            return Err(Error::NotConverged { iterations: it, violation: v });
        }
        if v <= params.tolerance {
            break;
        }
        if it >= params.max_iters {
            return Err(Error::NotConverged { iterations: it, violation: v });
        }
        accel.step(&mut f, &tf, v);
    }

    let dot = |w: &[f64], v: &[f64]| -> f64 { w.iter().zip(v).map(|(l, p)| l.exp() * p).sum() };
    let value = dot(&la, &f) - dot(&la, &f_aa) + dot(&lb, &g) - dot(&lb, &g_bb);

    let pull_ab = plan_pull(eps, &cxy, &la, &lb, &f, &g);
    let pull_aa = plan_pull(eps, &cxx, &la, &la, &f_aa, &f_aa);
    let pull_ba = plan_pull(eps, &cyx, &lb, &la, &g, &f);
    let pull_bb = plan_pull(eps, &cyy, &lb, &lb, &g_bb, &g_bb);
    let grad_a = pull_ab.iter().zip(&pull_aa).map(|(u, v)| u - v).collect();
    let grad_b = pull_ba.iter().zip(&pull_bb).map(|(u, v)| u - v).collect();

    Ok(TransportValue {
        value: value.max(0.0),
        grad_a,
        grad_b,
    })
}
