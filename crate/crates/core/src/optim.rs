//! Derivative-free local minimization.

#[derive(Debug, Clone, Copy)]
pub struct NelderMeadOptions {
    pub max_evaluations: usize,
    /// Stop once the simplex spans less than this in every coordinate.
    pub x_tol: f64,
    /// ... and its values differ by less than this (relative to the best).
    pub f_tol: f64,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        NelderMeadOptions {
            max_evaluations: 4000,
            x_tol: 1e-7,
            f_tol: 1e-12,
        }
    }
}

/// Minimizes `f` from `start` with initial simplex edges `steps`.
/// Returns the best point and its value.
pub fn nelder_mead<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    start: &[f64],
    steps: &[f64],
    opts: NelderMeadOptions,
) -> (Vec<f64>, f64) {
    let n = start.len();
    let mut pts: Vec<Vec<f64>> = vec![start.to_vec()];
    for i in 0..n {
        let mut p = start.to_vec();
        p[i] += steps[i];
        pts.push(p);
    }
    let mut vals: Vec<f64> = pts.iter().map(|p| f(p)).collect();
    let mut evals = n + 1;
    let eval = |f: &mut F, p: &[f64], evals: &mut usize| {
        *evals += 1;
        let v = f(p);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };

    while evals < opts.max_evaluations {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
        pts = order.iter().map(|&i| pts[i].clone()).collect();
        vals = order.iter().map(|&i| vals[i]).collect();

        let spread_f = vals[n] - vals[0];
        let spread_x = (0..n)
            .map(|d| {
                let (lo, hi) = pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
                    (lo.min(p[d]), hi.max(p[d]))
                });
                hi - lo
            })
            .fold(0.0, f64::max);
        if spread_x <= opts.x_tol && spread_f <= opts.f_tol * vals[0].abs().max(1.0) {
            break;
        }

        let centroid: Vec<f64> = (0..n)
            .map(|d| pts[..n].iter().map(|p| p[d]).sum::<f64>() / n as f64)
            .collect();
        let toward = |t: f64| -> Vec<f64> { (0..n).map(|d| centroid[d] + t * (pts[n][d] - centroid[d])).collect() };

        let reflected = toward(-1.0);
        let fr = eval(&mut f, &reflected, &mut evals);
        if fr < vals[0] {
            let expanded = toward(-2.0);
            let fe = eval(&mut f, &expanded, &mut evals);
            if fe < fr {
                pts[n] = expanded;
                vals[n] = fe;
            } else {
                pts[n] = reflected;
                vals[n] = fr;
            }
            continue;
        }
        if fr < vals[n - 1] {
            pts[n] = reflected;
            vals[n] = fr;
            continue;
        }
        let (contracted, fc) = if fr < vals[n] {
            let c = toward(-0.5);
            let v = eval(&mut f, &c, &mut evals);
            (c, v)
        } else {
            let c = toward(0.5);
            let v = eval(&mut f, &c, &mut evals);
            (c, v)
        };
        if fc < vals[n].min(fr) {
            pts[n] = contracted;
            vals[n] = fc;
            continue;
        }
        // shrink toward the best vertex
        let best = pts[0].clone();
        for i in 1..=n {
            for (x, b) in pts[i].iter_mut().zip(&best) {
                *x = b + 0.5 * (*x - b);
            }
            vals[i] = eval(&mut f, &pts[i].clone(), &mut evals);
        }
    }
    let best = (0..=n).min_by(|&a, &b| vals[a].total_cmp(&vals[b])).unwrap();
    (pts[best].clone(), vals[best])
}
