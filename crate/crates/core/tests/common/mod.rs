//! Independent numerical oracles shared by the integration and acceptance
//! tests. Nothing here calls into the library's optimization code.

#![allow(dead_code)]

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

/// Nelder–Mead simplex search from `x0` with initial edge `step`.
pub fn nelder_mead<F: Fn(&[f64]) -> f64>(
    f: &F,
    x0: &[f64],
    step: f64,
    max_evals: usize,
    ftol: f64,
) -> (Vec<f64>, f64) {
    let d = x0.len();
    let mut simplex: Vec<Vec<f64>> = vec![x0.to_vec()];
    for i in 0..d {
        let mut p = x0.to_vec();
        p[i] += step;
        simplex.push(p);
    }
    let mut values: Vec<f64> = simplex.iter().map(|p| f(p)).collect();
    let mut evals = d + 1;
    while evals < max_evals {
        let mut order: Vec<usize> = (0..=d).collect();
        order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();
        if (values[d] - values[0]).abs() <= ftol * (1.0 + values[0].abs()) {
            let spread = simplex
                .iter()
                .map(|p| p.iter().zip(&simplex[0]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
                .fold(0.0, f64::max);
            if spread < 1e-13 {
                break;
            }
            if (values[d] - values[0]).abs() == 0.0 {
                break;
            }
        }
        let centroid: Vec<f64> = (0..d)
            .map(|k| simplex[..d].iter().map(|p| p[k]).sum::<f64>() / d as f64)
            .collect();
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[d])
                .map(|(c, w)| c + t * (c - w))
                .collect()
        };
        let reflected = along(1.0);
        let fr = f(&reflected);
        evals += 1;
        if fr < values[0] {
            let expanded = along(2.0);
            let fe = f(&expanded);
            evals += 1;
            if fe < fr {
                simplex[d] = expanded;
                values[d] = fe;
            } else {
                simplex[d] = reflected;
                values[d] = fr;
            }
        } else if fr < values[d - 1] {
            simplex[d] = reflected;
            values[d] = fr;
        } else {
            let contracted = if fr < values[d] { along(0.5) } else { along(-0.5) };
            let fc = f(&contracted);
            evals += 1;
            if fc < values[d].min(fr) {
                simplex[d] = contracted;
                values[d] = fc;
            } else {
                for i in 1..=d {
                    let shrunk: Vec<f64> = simplex[i]
                        .iter()
                        .zip(&simplex[0])
                        .map(|(p, b)| b + 0.5 * (p - b))
                        .collect();
                    values[i] = f(&shrunk);
                    simplex[i] = shrunk;
                }
                evals += d;
            }
        }
    }
    let best = (0..=d)
        .min_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap())
        .unwrap();
    (simplex[best].clone(), values[best])
}

/// Compass search: tries `+-h` along every axis and halves `h` when no move
/// improves, down to `min_step`.
pub fn pattern_polish<F: Fn(&[f64]) -> f64>(f: &F, x: &mut Vec<f64>, start: f64, min_step: f64) -> f64 {
    let mut fx = f(x);
    let mut h = start;
    while h >= min_step {
        let mut improved = false;
        for k in 0..x.len() {
            for dir in [1.0, -1.0] {
                let old = x[k];
                x[k] = old + dir * h;
                let fc = f(x);
                if fc < fx {
                    fx = fc;
                    improved = true;
                } else {
                    x[k] = old;
                }
            }
        }
        if !improved {
            h *= 0.5;
        }
    }
    fx
}

/// Nelder–Mead with restarts from the incumbent until the value stops
/// improving, then a compass polish.
pub fn minimize<F: Fn(&[f64]) -> f64>(f: &F, x0: &[f64], step: f64) -> (Vec<f64>, f64) {
    let mut x = x0.to_vec();
    let mut fx = f(&x);
    let mut s = step;
    for _ in 0..30 {
        let (cand, fc) = nelder_mead(f, &x, s, 20_000, 1e-16);
        let gain = fx - fc;
        if fc <= fx {
            x = cand;
            fx = fc;
        }
        if gain <= 1e-15 * (1.0 + fx.abs()) {
            break;
        }
        s = (s * 0.5).max(1e-6);
    }
    let fx = pattern_polish(f, &mut x, 1e-3, 1e-13).min(fx);
    (x, fx)
}

/// `1/2 ||v - b||^2 + t (||b+|| + ||b-||)`.
pub fn prox_objective(v: &[f64], t: f64, b: &[f64]) -> f64 {
    let mut quad = 0.0;
    let mut pos = 0.0;
    let mut neg = 0.0;
    for (&bk, &vk) in b.iter().zip(v) {
        quad += (bk - vk).powi(2);
        if bk > 0.0 {
            pos += bk * bk;
        } else {
            neg += bk * bk;
        }
    }
    0.5 * quad + t * (pos.sqrt() + neg.sqrt())
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Pen {
    Coop,
    Group,
    L1,
}

pub fn block_penalty(pen: Pen, b: &[f64]) -> f64 {
    match pen {
        Pen::Coop => {
            let pos: f64 = b.iter().filter(|&&v| v > 0.0).map(|v| v * v).sum();
            let neg: f64 = b.iter().filter(|&&v| v < 0.0).map(|v| v * v).sum();
            pos.sqrt() + neg.sqrt()
        }
        Pen::Group => b.iter().map(|v| v * v).sum::<f64>().sqrt(),
        Pen::L1 => b.iter().map(|v| v.abs()).sum(),
    }
}

/// `1/2 ||y - Z b||^2 + lambda sum_j pen(b_j)` over blocks of size `m`.
pub fn penalized_objective(z: ArrayView2<f64>, y: ArrayView1<f64>, m: usize, pen: Pen, lambda: f64, b: &[f64]) -> f64 {
    let bv = ArrayView1::from(b);
    let r = &y - &z.dot(&bv);
    let penalty: f64 = b.chunks(m).map(|blk| block_penalty(pen, blk)).sum();
    0.5 * r.dot(&r) + lambda * penalty
}

/// Block coordinate descent with a derivative-free solve of every block
/// subproblem. The penalty is block-separable, so cyclic exact block
/// minimization converges to the global minimum of the convex objective.
pub fn bcd_minimize(z: ArrayView2<f64>, y: ArrayView1<f64>, m: usize, pen: Pen, lambda: f64) -> (Vec<f64>, f64) {
    let (n, total) = z.dim();
    let blocks = total / m;
    let mut b = vec![0.0; total];
    let mut resid: Array1<f64> = y.to_owned();
    let mut value = penalized_objective(z, y, m, pen, lambda, &b);
    for _sweep in 0..2000 {
        for j in 0..blocks {
            let cols: Vec<Array1<f64>> = (0..m).map(|k| z.column(j * m + k).to_owned()).collect();
            // Residual with block j removed.
            let mut partial = resid.clone();
            for k in 0..m {
                partial.scaled_add(b[j * m + k], &cols[k]);
            }
            let block_obj = |c: &[f64]| -> f64 {
                let mut ss = 0.0;
                for i in 0..n {
                    let mut fit = 0.0;
                    for k in 0..m {
                        fit += cols[k][i] * c[k];
                    }
                    ss += (partial[i] - fit).powi(2);
                }
                0.5 * ss + lambda * block_penalty(pen, c)
            };
            let current = b[j * m..(j + 1) * m].to_vec();
            let zero = vec![0.0; m];
            // Try both the current block and zero as starting points.
            let (c1, f1) = minimize(&block_obj, &current, 0.1 + current.iter().fold(0.0, |a: f64, v| a.max(v.abs())));
            let (c2, f2) = minimize(&block_obj, &zero, 0.5);
            let (best, fbest) = if f2 < f1 { (c2, f2) } else { (c1, f1) };
            let best = if block_obj(&zero) <= fbest { zero } else { best };
            for k in 0..m {
                b[j * m + k] = best[k];
            }
            resid = partial;
            for k in 0..m {
                resid.scaled_add(-best[k], &cols[k]);
            }
        }
        let new_value = penalized_objective(z, y, m, pen, lambda, &b);
        let done = value - new_value <= 1e-14 * new_value.abs().max(1e-300);
        value = new_value.min(value);
        if done {
            break;
        }
    }
    (b, value)
}

/// Least squares by the normal equations and Gaussian elimination with
/// partial pivoting.
pub fn ols(z: ArrayView2<f64>, y: ArrayView1<f64>) -> Vec<f64> {
    let p = z.ncols();
    let mut a: Array2<f64> = z.t().dot(&z);
    let mut rhs: Array1<f64> = z.t().dot(&y);
    for col in 0..p {
        let piv = (col..p)
            .max_by(|&i, &j| a[[i, col]].abs().partial_cmp(&a[[j, col]].abs()).unwrap())
            .unwrap();
        if piv != col {
            for k in 0..p {
                a.swap([col, k], [piv, k]);
            }
            rhs.swap(col, piv);
        }
        for row in col + 1..p {
            let factor = a[[row, col]] / a[[col, col]];
            for k in col..p {
                a[[row, k]] -= factor * a[[col, k]];
            }
            rhs[row] -= factor * rhs[col];
        }
    }
    let mut x = vec![0.0; p];
    for row in (0..p).rev() {
        let s: f64 = (row + 1..p).map(|k| a[[row, k]] * x[k]).sum();
        x[row] = (rhs[row] - s) / a[[row, row]];
    }
    x
}
