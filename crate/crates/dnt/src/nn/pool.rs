//! Spatial pooling: 2x2 max pooling and global average pooling.

use crate::nn::tensor::Tensor;

/// Argmax positions recorded by the forward pass, one flat input index per
/// output element.
#[derive(Debug, Clone)]
pub struct MaxPoolCache {
    argmax: Vec<usize>,
    input_shape: Vec<usize>,
}

/// 2x2 window, stride-2 maximum per channel. Odd trailing rows/columns are
/// truncated. Ties resolve to the first maximum in scan order (top-left,
/// top-right, bottom-left, bottom-right), which keeps backward routing
/// deterministic.
pub fn maxpool2(x: &Tensor) -> (Tensor, MaxPoolCache) {
    let (h, w, c) = x.dims3();
    let (oh, ow) = (h / 2, w / 2);
    let data = x.data();
    let mut out = vec![0.0; oh * ow * c];
    let mut argmax = vec![0usize; oh * ow * c];
    for oy in 0..oh {
        for ox in 0..ow {
            for ch in 0..c {
                let mut best_idx = ((2 * oy) * w + 2 * ox) * c + ch;
                let mut best = data[best_idx];
                for dy in 0..2 {
                    for dx in 0..2 {
                        let idx = ((2 * oy + dy) * w + 2 * ox + dx) * c + ch;
                        if data[idx] > best {
                            best = data[idx];
                            best_idx = idx;
                        }
                    }
                }
                let o = (oy * ow + ox) * c + ch;
                out[o] = best;
                argmax[o] = best_idx;
            }
        }
    }
    let out = Tensor::new(vec![oh, ow, c], out).expect("sized above");
    (out, MaxPoolCache { argmax, input_shape: x.shape().to_vec() })
}

/// Routes each upstream gradient to the input element that produced the
/// maximum; truncated rows/columns receive zero gradient.
pub fn maxpool2_backward(cache: &MaxPoolCache, grad_out: &Tensor) -> Tensor {
    let mut gx = Tensor::zeros(cache.input_shape.clone());
    let g = gx.data_mut();
    for (o, &idx) in cache.argmax.iter().enumerate() {
        g[idx] += grad_out.data()[o];
    }
    gx
}

/// Spatial mean per channel, reducing `h x w x c` to `1 x 1 x c`.
pub fn global_average_pool(x: &Tensor) -> Tensor {
    let (h, w, c) = x.dims3();
    let n = (h * w) as f64;
    let mut out = vec![0.0; c];
    for pos in 0..h * w {
        for ch in 0..c {
            out[ch] += x.data()[pos * c + ch];
        }
    }
    out.iter_mut().for_each(|v| *v /= n);
    Tensor::new(vec![1, 1, c], out).expect("sized above")
}

/// Every input element receives upstream/(h·w) for its channel.
pub fn global_average_pool_backward(input_shape: &[usize], grad_out: &Tensor) -> Tensor {
    let (h, w, c) = (input_shape[0], input_shape[1], input_shape[2]);
    let n = (h * w) as f64;
    let go = grad_out.data();
    let mut gx = vec![0.0; h * w * c];
    for pos in 0..h * w {
        for ch in 0..c {
            gx[pos * c + ch] = go[ch] / n;
        }
    }
    Tensor::new(input_shape.to_vec(), gx).expect("sized above")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{check_gradient, DEFAULT_STEP};
    use crate::rng::SplitMix64;

    #[test]
    fn maxpool_of_2x2_window() {
        let x = Tensor::new(vec![2, 2, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (out, _) = maxpool2(&x);
        assert_eq!(out.shape(), &[1, 1, 1]);
        assert_eq!(out.data(), &[4.0]);
    }

    #[test]
    fn odd_extents_truncate() {
        let x = Tensor::new(vec![3, 5, 1], (0..15).map(|v| v as f64).collect()).unwrap();
        let (out, _) = maxpool2(&x);
        assert_eq!(out.shape(), &[1, 2, 1]);
        assert_eq!(out.data(), &[6.0, 8.0]);
    }

    #[test]
    fn maxpool_backward_routes_to_argmax() {
        let x = Tensor::new(vec![2, 2, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (_, cache) = maxpool2(&x);
        let g = Tensor::new(vec![1, 1, 1], vec![5.0]).unwrap();
        let gx = maxpool2_backward(&cache, &g);
        assert_eq!(gx.data(), &[0.0, 0.0, 0.0, 5.0]);
    }

    #[test]
    fn gap_means_each_channel() {
        let x = Tensor::new(vec![2, 2, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let out = global_average_pool(&x);
        assert_eq!(out.shape(), &[1, 1, 1]);
        assert_eq!(out.data(), &[2.5]);
    }

    #[test]
    fn gap_of_constant_map_is_the_constant() {
        let x = Tensor::filled(vec![5, 9, 3], 7.0);
        let out = global_average_pool(&x);
        assert!(out.data().iter().all(|&v| v == 7.0));
    }

    #[test]
    fn gap_gradient_matches_finite_differences() {
        let mut rng = SplitMix64::new(11);
        let x = Tensor::new(vec![3, 4, 2], (0..24).map(|_| rng.uniform(-1.0, 1.0)).collect())
            .unwrap();
        let weights: Vec<f64> = (0..2).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let grad_out = Tensor::new(vec![1, 1, 2], weights.clone()).unwrap();
        let gx = global_average_pool_backward(x.shape(), &grad_out);
        let mut xs = x.data().to_vec();
        let r = check_gradient(
            |v: &[f64]| {
                let t = Tensor::new(vec![3, 4, 2], v.to_vec()).unwrap();
                global_average_pool(&t).data().iter().zip(&weights).map(|(a, b)| a * b).sum()
            },
            &mut xs,
            gx.data(),
            DEFAULT_STEP,
        );
        assert!(r.max_rel_error < 1e-8, "gap grad error {}", r.max_rel_error);
    }

    #[test]
    fn gap_subtracted_map_has_zero_mean() {
        let mut rng = SplitMix64::new(5);
        let mut x = Tensor::new(vec![4, 4, 3], (0..48).map(|_| rng.uniform(0.0, 10.0)).collect())
            .unwrap();
        let means = global_average_pool(&x);
        let c = 3;
        for (i, v) in x.data_mut().iter_mut().enumerate() {
            *v -= means.data()[i % c];
        }
        let recentred = global_average_pool(&x);
        assert!(recentred.data().iter().all(|&v| v.abs() < 1e-12));
    }

    #[test]
    fn maxpool_gradient_matches_finite_differences() {
        let mut rng = SplitMix64::new(17);
        let x = Tensor::new(vec![4, 4, 2], (0..32).map(|_| rng.uniform(-1.0, 1.0)).collect())
            .unwrap();
        let (out, cache) = maxpool2(&x);
        let weights: Vec<f64> = (0..out.numel()).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let grad_out = Tensor::new(out.shape().to_vec(), weights.clone()).unwrap();
        let gx = maxpool2_backward(&cache, &grad_out);
        let mut xs = x.data().to_vec();
        let r = check_gradient(
            |v: &[f64]| {
                let t = Tensor::new(vec![4, 4, 2], v.to_vec()).unwrap();
                let (o, _) = maxpool2(&t);
                o.data().iter().zip(&weights).map(|(a, b)| a * b).sum()
            },
            &mut xs,
            gx.data(),
            DEFAULT_STEP,
        );
        assert!(r.max_rel_error < 1e-6, "maxpool grad error {}", r.max_rel_error);
    }
}
