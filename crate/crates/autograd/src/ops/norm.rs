use crate::{Array, Float, Tensor};

/// Per-channel batch statistics from a training-mode batch-norm call.
#[derive(Clone, Debug)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Unbiased variance, the quantity folded into running estimates.
    pub var_unbiased: Vec<f64>,
}

fn affine_params<T: Float>(c: usize, gamma: Option<&Tensor<T>>, beta: Option<&Tensor<T>>) -> (Vec<T>, Vec<T>) {
    let g = gamma.map_or_else(|| vec![T::one(); c], |t| {
        assert_eq!(t.shape(), &[c], "norm gamma shape");
        t.value().data().to_vec()
    });
    let b = beta.map_or_else(|| vec![T::zero(); c], |t| {
        assert_eq!(t.shape(), &[c], "norm beta shape");
        t.value().data().to_vec()
    });
    (g, b)
}

struct Normalized<T> {
    xhat: Vec<T>,
    inv_std: Vec<f64>,
}

fn normalize<T: Float>(
    x: &[T],
    groups: &[Vec<(usize, usize)>],
    stats: &[(f64, f64)],
    eps: f64,
) -> Normalized<T> {
    let mut xhat = vec![T::zero(); x.len()];
    let mut inv_std = Vec::with_capacity(groups.len());
    for (slices, &(mean, var)) in groups.iter().zip(stats) {
        let is = 1.0 / (var + eps).sqrt();
        inv_std.push(is);
        for &(o, l) in slices {
            for (d, &v) in xhat[o..o + l].iter_mut().zip(&x[o..o + l]) {
                *d = T::of_f64((v.as_f64() - mean) * is);
            }
        }
    }
    Normalized { xhat, inv_std }
}

fn moments<T: Float>(x: &[T], slices: &[(usize, usize)]) -> (f64, f64, usize) {
    let count: usize = slices.iter().map(|s| s.1).sum();
    let mean = slices.iter().flat_map(|&(o, l)| &x[o..o + l]).map(|v| v.as_f64()).sum::<f64>() / count as f64;
    let var = slices
        .iter()
        .flat_map(|&(o, l)| &x[o..o + l])
        .map(|v| (v.as_f64() - mean).powi(2))
        .sum::<f64>()
        / count as f64;
    (mean, var, count)
}

/// Shared normalize-and-backprop core. `groups[i]` lists the `(offset, len)`
/// slices of the flat buffer that share statistics; group `i` uses the affine
/// coefficients of channel `group_chan[i]`.
#[allow(clippy::too_many_arguments)]
fn normalized_op<T: Float>(
    x: &Tensor<T>,
    gamma: Option<&Tensor<T>>,
    beta: Option<&Tensor<T>>,
    groups: Vec<Vec<(usize, usize)>>,
    group_chan: Vec<usize>,
    stats: Vec<(f64, f64)>,
    eps: f64,
    batch_stats_in_graph: bool,
) -> Tensor<T> {
    let (_, c, _, _) = x.dims4();
    let (gv, bv) = affine_params(c, gamma, beta);
    let norm = normalize(x.value().data(), &groups, &stats, eps);
    let mut out = vec![T::zero(); norm.xhat.len()];
    for (slices, &ch) in groups.iter().zip(&group_chan) {
        for &(o, l) in slices {
            for (d, &xh) in out[o..o + l].iter_mut().zip(&norm.xhat[o..o + l]) {
                *d = xh * gv[ch] + bv[ch];
            }
        }
    }
    let value = Array::from_vec(x.shape().to_vec(), out);
    let shape = x.shape().to_vec();
    let mut parents = vec![x.clone()];
    let has_gamma = gamma.is_some();
    parents.extend(gamma.cloned());
    parents.extend(beta.cloned());
    Tensor::from_op(value, parents, move |g, needs| {
        let g = g.data();
        let mut dgamma = vec![0.0f64; c];
        let mut dbeta = vec![0.0f64; c];
        let mut dx = needs[0].then(|| vec![T::zero(); g.len()]);
        for ((slices, &ch), &is) in groups.iter().zip(&group_chan).zip(&norm.inv_std) {
            let mut sum_g = 0.0;
            let mut sum_gx = 0.0;
            let mut count = 0usize;
            for &(o, l) in slices {
                for (&gi, &xh) in g[o..o + l].iter().zip(&norm.xhat[o..o + l]) {
                    sum_g += gi.as_f64();
                    sum_gx += gi.as_f64() * xh.as_f64();
                }
                count += l;
            }
            dgamma[ch] += sum_gx;
            dbeta[ch] += sum_g;
            if let Some(dx) = dx.as_mut() {
                let gm = gv[ch].as_f64();
                let scale = gm * is;
                if batch_stats_in_graph {
                    let mg = sum_g / count as f64;
                    let mgx = sum_gx / count as f64;
                    for &(o, l) in slices {
                        for ((d, &gi), &xh) in dx[o..o + l].iter_mut().zip(&g[o..o + l]).zip(&norm.xhat[o..o + l]) {
                            *d = T::of_f64(scale * (gi.as_f64() - mg - xh.as_f64() * mgx));
                        }
                    }
                } else {
                    for &(o, l) in slices {
                        for (d, &gi) in dx[o..o + l].iter_mut().zip(&g[o..o + l]) {
                            *d = T::of_f64(scale * gi.as_f64());
                        }
                    }
                }
            }
        }
        let to_arr = |v: Vec<f64>| Array::from_vec(vec![c], v.into_iter().map(T::of_f64).collect());
        let mut grads = vec![dx.map(|d| Array::from_vec(shape.clone(), d))];
        let mut k = 1;
        if has_gamma {
            grads.push(needs[k].then(|| to_arr(dgamma.clone())));
            k += 1;
        }
        if needs.len() > k {
            grads.push(needs[k].then(|| to_arr(dbeta)));
        }
        grads
    })
}

/// Instance normalization: statistics per sample and channel over the
/// spatial extent, biased variance.
pub fn instance_norm<T: Float>(x: &Tensor<T>, gamma: Option<&Tensor<T>>, beta: Option<&Tensor<T>>, eps: f64) -> Tensor<T> {
    let (n, c, h, w) = x.dims4();
    let hw = h * w;
    let groups: Vec<Vec<(usize, usize)>> = (0..n * c).map(|p| vec![(p * hw, hw)]).collect();
    let chan: Vec<usize> = (0..n * c).map(|p| p % c).collect();
    let stats = groups
        .iter()
        .map(|s| {
            let (m, v, _) = moments(x.value().data(), s);
            (m, v)
        })
        .collect();
    normalized_op(x, gamma, beta, groups, chan, stats, eps, true)
}

fn channel_groups(n: usize, c: usize, hw: usize) -> Vec<Vec<(usize, usize)>> {
    (0..c).map(|ch| (0..n).map(|b| ((b * c + ch) * hw, hw)).collect()).collect()
}

/// Training-mode batch normalization over `(N, H, W)` per channel.
pub fn batch_norm_train<T: Float>(
    x: &Tensor<T>,
    gamma: Option<&Tensor<T>>,
    beta: Option<&Tensor<T>>,
    eps: f64,
) -> (Tensor<T>, BatchStats) {
    let (n, c, h, w) = x.dims4();
    let groups = channel_groups(n, c, h * w);
    let mut mean = Vec::with_capacity(c);
    let mut var_unbiased = Vec::with_capacity(c);
    let stats = groups
        .iter()
        .map(|s| {
            let (m, v, count) = moments(x.value().data(), s);
            mean.push(m);
            var_unbiased.push(if count > 1 { v * count as f64 / (count - 1) as f64 } else { v });
            (m, v)
        })
        .collect();
    let y = normalized_op(x, gamma, beta, groups, (0..c).collect(), stats, eps, true);
    (y, BatchStats { mean, var_unbiased })
}

/// Eval-mode batch normalization with fixed running statistics.
pub fn batch_norm_eval<T: Float>(
    x: &Tensor<T>,
    gamma: Option<&Tensor<T>>,
    beta: Option<&Tensor<T>>,
    running_mean: &Array<T>,
    running_var: &Array<T>,
    eps: f64,
) -> Tensor<T> {
    let (n, c, h, w) = x.dims4();
    assert!(running_mean.len() == c && running_var.len() == c, "running statistics must have {c} entries");
    let stats = running_mean.data().iter().zip(running_var.data()).map(|(m, v)| (m.as_f64(), v.as_f64())).collect();
    normalized_op(x, gamma, beta, channel_groups(n, c, h * w), (0..c).collect(), stats, eps, false)
}
