//! Bounded Nelder–Mead with multi-start, plus finite-difference curvature.

use rayon::prelude::*;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Bounds {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Bounds {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.iter().zip(&hi).any(|(a, b)| !(a < b)) {
            return Err(Error::invalid("bounds must satisfy lo < hi componentwise"));
        }
        Ok(Bounds { lo, hi })
    }

    pub fn unbounded(n: usize) -> Self {
        Bounds {
            lo: vec![f64::NEG_INFINITY; n],
            hi: vec![f64::INFINITY; n],
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn clamp(&self, x: &mut [f64]) {
        for ((v, lo), hi) in x.iter_mut().zip(&self.lo).zip(&self.hi) {
            *v = v.clamp(*lo, *hi);
        }
    }

    /// Characteristic length of coordinate `i`, used for steps and tolerances.
    pub fn scale(&self, i: usize, x: f64) -> f64 {
        let w = self.hi[i] - self.lo[i];
        if w.is_finite() {
            w.min(x.abs().max(1e-3 * w)).max(1e-12)
        } else {
            x.abs().max(1e-6)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NmOptions {
    pub max_iter: usize,
    /// Relative spread of objective values across the simplex.
    pub f_tol: f64,
    /// Simplex size relative to each coordinate's scale.
    pub x_tol: f64,
    /// Initial simplex edge as a fraction of each coordinate's scale.
    pub initial_step: f64,
    /// Number of restarts from the current best point after convergence.
    pub restarts: usize,
}

impl Default for NmOptions {
    fn default() -> Self {
        NmOptions {
            max_iter: 20_000,
            f_tol: 1e-13,
            x_tol: 1e-10,
            initial_step: 0.1,
            restarts: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NmResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Best objective after each iteration; never increases.
    pub history: Vec<f64>,
}

fn eval<F: Fn(&[f64]) -> f64>(f: &F, x: &[f64]) -> f64 {
    let v = f(x);
    if v.is_nan() { f64::INFINITY } else { v }
}

/// Box constraints are enforced by a smooth change of variables: doubly
/// bounded coordinates use x = lo + (hi − lo)(1 + sin u)/2, one-sided ones
/// x = lo − 1 + √(u² + 1) (mirrored for an upper bound). The simplex never
/// collapses onto a face and every evaluated point is feasible.
#[derive(Debug, Clone, Copy)]
enum Map {
    Free,
    Both(f64, f64),
    Lower(f64),
    Upper(f64),
}

impl Map {
    fn of(bounds: &Bounds, i: usize) -> Self {
        match (bounds.lo[i].is_finite(), bounds.hi[i].is_finite()) {
            (true, true) => Map::Both(bounds.lo[i], bounds.hi[i]),
            (true, false) => Map::Lower(bounds.lo[i]),
            (false, true) => Map::Upper(bounds.hi[i]),
            (false, false) => Map::Free,
        }
    }

    fn to_x(self, u: f64) -> f64 {
        match self {
            Map::Free => u,
            Map::Both(lo, hi) => (lo + (hi - lo) * 0.5 * (1.0 + u.sin())).clamp(lo, hi),
            Map::Lower(lo) => lo - 1.0 + (u * u + 1.0).sqrt(),
            Map::Upper(hi) => hi + 1.0 - (u * u + 1.0).sqrt(),
        }
    }

    fn to_u(self, x: f64) -> f64 {
        match self {
            Map::Free => x,
            Map::Both(lo, hi) => (2.0 * (x - lo) / (hi - lo) - 1.0).clamp(-1.0, 1.0).asin(),
            Map::Lower(lo) => {
                let s = x - lo + 1.0;
                (s * s - 1.0).max(0.0).sqrt()
            }
            Map::Upper(hi) => {
                let s = hi - x + 1.0;
                (s * s - 1.0).max(0.0).sqrt()
            }
        }
    }

    /// Internal step giving roughly `dx` in x, capped for periodic maps.
    fn u_step(self, u: f64, dx: f64) -> f64 {
        let slope = match self {
            Map::Free => 1.0,
            Map::Both(lo, hi) => 0.5 * (hi - lo) * u.cos().abs(),
            Map::Lower(_) | Map::Upper(_) => u.abs() / (u * u + 1.0).sqrt(),
        };
        if slope > 1e-8 {
            let s = dx / slope;
            if matches!(self, Map::Free) { s } else { s.min(0.5) }
        } else {
            0.3
        }
    }
}

/// Minimises `f` inside `bounds` starting from `x0`.
pub fn nelder_mead<F>(f: &F, x0: &[f64], bounds: &Bounds, opts: NmOptions) -> Result<NmResult>
where
    F: Fn(&[f64]) -> f64 + ?Sized,
{
    let n = x0.len();
    if n == 0 || bounds.dim() != n {
        return Err(Error::invalid("dimension mismatch between start point and bounds"));
    }
    let maps: Vec<Map> = (0..n).map(|i| Map::of(bounds, i)).collect();
    let to_x = |u: &[f64]| -> Vec<f64> { u.iter().zip(&maps).map(|(u, m)| m.to_x(*u)).collect() };
    let fu = |u: &[f64]| eval(&f, &to_x(u));

    let mut start = x0.to_vec();
    bounds.clamp(&mut start);
    let mut best: Vec<f64> = start.iter().zip(&maps).map(|(x, m)| m.to_u(*x)).collect();
    let mut fbest = fu(&best);
    let mut history = Vec::new();
    let mut iterations = 0;
    let mut converged = false;

    for round in 0..=opts.restarts {
        let xb = to_x(&best);
        let scales: Vec<f64> = (0..n).map(|i| bounds.scale(i, xb[i])).collect();
        let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
        simplex.push((best.clone(), fbest));
        for i in 0..n {
            let mut v = best.clone();
            v[i] += maps[i].u_step(best[i], opts.initial_step * scales[i]);
            let fv = fu(&v);
            simplex.push((v, fv));
        }

        let mut round_converged = false;
        while iterations < opts.max_iter {
            simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
            iterations += 1;
            history.push(simplex[0].1.min(fbest));

            let f_lo = simplex[0].1;
            let f_hi = simplex[n].1;
            let f_flat = (f_hi - f_lo).abs() <= opts.f_tol * f_lo.abs() + 1e-300;
            let x_lo = to_x(&simplex[0].0);
            let x_small = (0..n).all(|i| {
                simplex
                    .iter()
                    .map(|v| (maps[i].to_x(v.0[i]) - x_lo[i]).abs())
                    .fold(0.0, f64::max)
                    <= opts.x_tol * scales[i]
            });
            let u_small = (0..n).all(|i| {
                simplex
                    .iter()
                    .map(|v| (v.0[i] - simplex[0].0[i]).abs())
                    .fold(0.0, f64::max)
                    <= 1e-14 * (1.0 + simplex[0].0[i].abs())
            });
            if (f_flat && x_small) || u_small || (x_small && (f_hi - f_lo).abs() < 1e-10 * (f_lo.abs() + 1.0)) {
                round_converged = true;
                break;
            }

            let mut centroid = vec![0.0; n];
            for v in &simplex[..n] {
                for (c, x) in centroid.iter_mut().zip(&v.0) {
                    *c += x / n as f64;
                }
            }
            let along = |t: f64| -> Vec<f64> {
                centroid
                    .iter()
                    .zip(&simplex[n].0)
                    .map(|(c, w)| c + t * (c - w))
                    .collect()
            };

            let ur = along(1.0);
            let fr = fu(&ur);
            if fr < simplex[0].1 {
                let ue = along(2.0);
                let fe = fu(&ue);
                simplex[n] = if fe < fr { (ue, fe) } else { (ur, fr) };
            } else if fr < simplex[n - 1].1 {
                simplex[n] = (ur, fr);
            } else {
                let uc = if fr < simplex[n].1 { along(0.5) } else { along(-0.5) };
                let fc = fu(&uc);
                if fc < simplex[n].1.min(fr) {
                    simplex[n] = (uc, fc);
                } else {
                    let u0 = simplex[0].0.clone();
                    for v in simplex.iter_mut().skip(1) {
                        for (ui, bi) in v.0.iter_mut().zip(&u0) {
                            *ui = bi + 0.5 * (*ui - bi);
                        }
                        v.1 = fu(&v.0);
                    }
                }
            }
        }
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let improved = simplex[0].1 < fbest;
        if simplex[0].1 <= fbest {
            best = simplex[0].0.clone();
            fbest = simplex[0].1;
        }
        converged = round_converged;
        if !round_converged || (!improved && round > 0) {
            break;
        }
    }
    Ok(NmResult {
        x: to_x(&best),
        f: fbest,
        iterations,
        converged,
        history,
    })
}

/// Runs Nelder–Mead from every start in parallel and returns the lowest
/// objective; ties go to the earliest start.
pub fn multi_start<F>(f: &F, starts: &[Vec<f64>], bounds: &Bounds, opts: NmOptions) -> Result<NmResult>
where
    F: Fn(&[f64]) -> f64 + Sync + ?Sized,
{
    if starts.is_empty() {
        return Err(Error::invalid("no start points"));
    }
    let runs: Vec<NmResult> = starts
        .par_iter()
        .map(|s| nelder_mead(f, s, bounds, opts))
        .collect::<Result<_>>()?;
    let mut best = 0;
    for (i, r) in runs.iter().enumerate() {
        if r.f < runs[best].f {
            best = i;
        }
    }
    Ok(runs.into_iter().nth(best).unwrap())
}

fn fd_step(bounds: &Bounds, i: usize, x: f64) -> f64 {
    1e-4 * bounds.scale(i, x)
}

/// Central-difference gradient; one-sided where a bound is within one step.
pub fn gradient<F>(f: &F, x: &[f64], bounds: &Bounds) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64 + ?Sized,
{
    let f0 = f(x);
    (0..x.len())
        .map(|i| {
            let h = fd_step(bounds, i, x[i]);
            let mut p = x.to_vec();
            let mut m = x.to_vec();
            let up = x[i] + h <= bounds.hi[i];
            let down = x[i] - h >= bounds.lo[i];
            match (up, down) {
                (true, true) => {
                    p[i] += h;
                    m[i] -= h;
                    (f(&p) - f(&m)) / (2.0 * h)
                }
                (true, false) => {
                    p[i] += h;
                    (f(&p) - f0) / h
                }
                (false, true) => {
                    m[i] -= h;
                    (f0 - f(&m)) / h
                }
                (false, false) => 0.0,
            }
        })
        .collect()
}

/// Central-difference Hessian over the coordinates in `idx`. The stencil
/// centre is nudged inward when a bound is closer than two steps.
pub fn hessian<F>(f: &F, x: &[f64], bounds: &Bounds, idx: &[usize]) -> Vec<Vec<f64>>
where
    F: Fn(&[f64]) -> f64 + ?Sized,
{
    let mut c = x.to_vec();
    let hs: Vec<f64> = idx.iter().map(|&i| fd_step(bounds, i, x[i])).collect();
    for (k, &i) in idx.iter().enumerate() {
        let h = hs[k];
        c[i] = c[i].clamp(bounds.lo[i] + 2.0 * h, bounds.hi[i] - 2.0 * h);
    }
    let at = |di: &[(usize, f64)]| {
        let mut p = c.clone();
        for &(i, d) in di {
            p[i] += d;
        }
        f(&p)
    };
    let f0 = at(&[]);
    let m = idx.len();
    let mut h = vec![vec![0.0; m]; m];
    for a in 0..m {
        let (i, hi) = (idx[a], hs[a]);
        h[a][a] = (at(&[(i, hi)]) - 2.0 * f0 + at(&[(i, -hi)])) / (hi * hi);
        for b in 0..a {
            let (j, hj) = (idx[b], hs[b]);
            let v = (at(&[(i, hi), (j, hj)]) - at(&[(i, hi), (j, -hj)]) - at(&[(i, -hi), (j, hj)])
                + at(&[(i, -hi), (j, -hj)]))
                / (4.0 * hi * hj);
            h[a][b] = v;
            h[b][a] = v;
        }
    }
    h
}

/// Inverse of a symmetric positive-definite matrix via Cholesky; `None`
/// when the matrix is not positive definite.
pub fn spd_inverse(a: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let n = a.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = a[i][j] - (0..j).map(|k| l[i][k] * l[j][k]).sum::<f64>();
            if i == j {
                if !(s > 0.0) || !s.is_finite() {
                    return None;
                }
                l[i][i] = s.sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    // invert L, then A⁻¹ = L⁻ᵀ L⁻¹
    let mut li = vec![vec![0.0; n]; n];
    for i in 0..n {
        li[i][i] = 1.0 / l[i][i];
        for j in 0..i {
            let s: f64 = (j..i).map(|k| l[i][k] * li[k][j]).sum();
            li[i][j] = -s / l[i][i];
        }
    }
    let mut inv = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (i..n).map(|k| li[k][i] * li[k][j]).sum();
            inv[i][j] = s;
            inv[j][i] = s;
        }
    }
    Some(inv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rosenbrock(x: &[f64]) -> f64 {
        (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2)
    }

    #[test]
    fn rosenbrock_minimum() {
        let r = nelder_mead(&rosenbrock, &[-1.2, 1.0], &Bounds::unbounded(2), NmOptions::default())
            .unwrap();
        assert!(r.converged);
        assert!((r.x[0] - 1.0).abs() < 1e-6 && (r.x[1] - 1.0).abs() < 1e-6, "{:?}", r.x);
        assert!(r.history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn respects_bounds() {
        let b = Bounds::new(vec![2.0, -1.0], vec![5.0, 1.0]).unwrap();
        let r = nelder_mead(&rosenbrock, &[3.0, 0.0], &b, NmOptions::default()).unwrap();
        assert!((r.x[0] - 2.0).abs() < 1e-9);
        assert!(r.x[1] <= 1.0 && r.x[1] >= -1.0);
    }

    #[test]
    fn multi_start_picks_global() {
        let f = |x: &[f64]| (x[0] * x[0] - 4.0).powi(2) + 0.1 * (x[0] - 2.0).powi(2);
        let b = Bounds::unbounded(1);
        let r = multi_start(&f, &[vec![-3.0], vec![3.0]], &b, NmOptions::default()).unwrap();
        assert!((r.x[0] - 2.0).abs() < 1e-6);
    }

    #[test]
    fn curvature_of_quadratic() {
        let f = |x: &[f64]| 3.0 * x[0] * x[0] + x[0] * x[1] + 2.0 * x[1] * x[1];
        let b = Bounds::unbounded(2);
        let h = hessian(&f, &[0.5, -0.3], &b, &[0, 1]);
        assert!((h[0][0] - 6.0).abs() < 1e-5 && (h[1][1] - 4.0).abs() < 1e-5);
        assert!((h[0][1] - 1.0).abs() < 1e-5);
        let inv = spd_inverse(&h).unwrap();
        let det = 6.0 * 4.0 - 1.0;
        assert!((inv[0][0] - 4.0 / det).abs() < 1e-6);
        assert!((inv[0][1] + 1.0 / det).abs() < 1e-6);
        assert!(spd_inverse(&[vec![1.0, 2.0], vec![2.0, 1.0]]).is_none());
        let g = gradient(&f, &[0.5, -0.3], &b);
        assert!((g[0] - 2.7).abs() < 1e-6 && (g[1] + 0.7).abs() < 1e-6);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn shifted_quadratic(cx in -5.0f64..5.0, cy in -5.0f64..5.0, sx in -4.0f64..4.0, sy in -4.0f64..4.0) {
            let b = Bounds::new(vec![-3.0, -3.0], vec![3.0, 3.0]).unwrap();
            let f = |x: &[f64]| (x[0] - cx).powi(2) + 2.0 * (x[1] - cy).powi(2);
            let r = nelder_mead(&f, &[sx, sy], &b, NmOptions::default()).unwrap();
            prop_assert!(r.x.iter().all(|v| (-3.0..=3.0).contains(v)));
            prop_assert!((r.x[0] - cx.clamp(-3.0, 3.0)).abs() < 1e-6);
            prop_assert!((r.x[1] - cy.clamp(-3.0, 3.0)).abs() < 1e-6);
            prop_assert!(r.history.windows(2).all(|w| w[1] <= w[0]));
        }
    }
}
