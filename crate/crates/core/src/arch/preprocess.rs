//! Per-sample preprocessing transforms over `[T, C]` row-major series.

use super::descriptor::PreprocStep;

const EPS: f64 = 1e-8;

/// Series length after every step (only downsampling changes it).
pub fn output_len(steps: &[PreprocStep], t: usize) -> usize {
    steps.iter().fold(t, |t, s| match s {
        PreprocStep::Downsample { factor } => t / factor,
        _ => t,
    })
}

/// Applies `steps` in order to one sample. Returns the new data and length.
pub fn apply(steps: &[PreprocStep], data: &[f64], t: usize, c: usize) -> (Vec<f64>, usize) {
    debug_assert_eq!(data.len(), t * c);
    let mut x = data.to_vec();
    let mut t = t;
    for step in steps {
        match step {
            PreprocStep::ZscorePerChannel => per_channel(&mut x, t, c, |col| {
                let (mean, sd) = mean_sd(col);
                col.iter_mut().for_each(|v| *v = (*v - mean) / (sd + EPS));
            }),
            PreprocStep::MinmaxPerChannel => per_channel(&mut x, t, c, |col| {
                let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let span = hi - lo;
                col.iter_mut()
                    .for_each(|v| *v = if span > EPS { (*v - lo) / span } else { 0.0 });
            }),
            PreprocStep::DetrendLinear => per_channel(&mut x, t, c, detrend),
            PreprocStep::Clip { sigma } => per_channel(&mut x, t, c, |col| {
                let (mean, sd) = mean_sd(col);
                let (lo, hi) = (mean - sigma * sd, mean + sigma * sd);
                col.iter_mut().for_each(|v| *v = v.clamp(lo, hi));
            }),
            PreprocStep::Downsample { factor } => {
                let f = *factor;
                let t_out = t / f;
                let mut out = vec![0.0; t_out * c];
                for i in 0..t_out {
                    for k in 0..f {
                        let row = &x[(i * f + k) * c..(i * f + k + 1) * c];
                        for j in 0..c {
                            out[i * c + j] += row[j] / f as f64;
                        }
                    }
                }
                x = out;
                t = t_out;
            }
        }
    }
    (x, t)
}

fn per_channel(x: &mut [f64], t: usize, c: usize, mut f: impl FnMut(&mut [f64])) {
    if t == 0 {
        return;
    }
    let mut col = vec![0.0; t];
    for j in 0..c {
        for i in 0..t {
            col[i] = x[i * c + j];
        }
        f(&mut col);
        for i in 0..t {
            x[i * c + j] = col[i];
        }
    }
}

fn mean_sd(col: &[f64]) -> (f64, f64) {
    let n = col.len() as f64;
    let mean = col.iter().sum::<f64>() / n;
    let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Subtracts the least-squares line through `(i, col[i])`.
fn detrend(col: &mut [f64]) {
    let n = col.len() as f64;
    let tbar = (n - 1.0) / 2.0;
    let ybar = col.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for (i, y) in col.iter().enumerate() {
        let dt = i as f64 - tbar;
        sxy += dt * (y - ybar);
        sxx += dt * dt;
    }
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    for (i, y) in col.iter_mut().enumerate() {
        *y -= ybar + slope * (i as f64 - tbar);
    }
}
