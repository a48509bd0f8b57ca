//! Differentiable operations. Shape mismatches are programming errors and
//! panic; model code validates user-facing contracts before calling in.

mod activation;
mod arith;
mod conv;
mod norm;
mod reduce;
mod shape;

pub use activation::{clamp, hard_sigmoid, leaky_relu, relu, tanh};
pub use arith::{add, add_broadcast, add_scalar, channel_affine_const, mul, mul_channels, mul_scalar, sqr, sub};
pub use conv::{conv2d, conv_output_size, depthwise_conv2d};
pub use norm::{batch_norm_eval, batch_norm_train, instance_norm, BatchStats};
pub use reduce::{global_avg_pool, mean_all, mse, sum_all};
pub use shape::{concat_channels, crop, max_pool2, narrow_channels, reflect_index, reflect_pad, upsample_nearest};

/// Output range `[lo, hi)` of positions `o` for which `o * stride + offset - pad`
/// lands inside `[0, len)`, clipped to `[0, out_len)`.
#[inline]
pub(crate) fn valid_range(offset: usize, pad: usize, stride: usize, len: usize, out_len: usize) -> (usize, usize) {
    let lo = if pad > offset { (pad - offset).div_ceil(stride) } else { 0 };
    // largest o with o*stride + offset - pad <= len - 1
    let top = len + pad;
    let hi = if top > offset { ((top - offset - 1) / stride + 1).min(out_len) } else { 0 };
    (lo.min(hi), hi)
}

#[cfg(test)]
mod tests {
    use super::valid_range;

    #[test]
    fn valid_range_matches_brute_force() {
        for len in 1usize..9 {
            for pad in 0..4 {
                for stride in 1..4 {
                    for offset in 0..5 {
                        let out_len = (len + 2 * pad).saturating_sub(offset) / stride + 1;
                        let brute: Vec<usize> = (0..out_len)
                            .filter(|&o| {
                                let i = (o * stride + offset) as isize - pad as isize;
                                i >= 0 && (i as usize) < len
                            })
                            .collect();
                        let (lo, hi) = valid_range(offset, pad, stride, len, out_len);
                        let fast: Vec<usize> = (lo..hi).collect();
                        assert_eq!(brute, fast, "len {len} pad {pad} stride {stride} offset {offset}");
                    }
                }
            }
        }
    }
}
