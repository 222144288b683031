//! Multi-aggregator over a multiset of vectors: elementwise mean, min, max
//! and population standard deviation, concatenated in that order.

/// Intermediates of a forward pass needed by [`backward`].
#[derive(Debug, Clone, Default)]
pub struct PnaCache {
    pub n: usize,
    pub argmin: Vec<u32>,
    pub argmax: Vec<u32>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// `items` is row-major `n x dim`; `out` has width `4 * dim`. An empty
/// multiset maps to zeros.
pub fn forward(items: &[f64], dim: usize, out: &mut [f64], cache: &mut PnaCache) {
    assert_eq!(out.len(), 4 * dim);
    assert_eq!(items.len() % dim.max(1), 0);
    let n = if dim == 0 { 0 } else { items.len() / dim };
    cache.n = n;
    cache.argmin.clear();
    cache.argmax.clear();
    cache.mean.clear();
    cache.std.clear();
    if n == 0 {
        out.fill(0.0);
        cache.argmin.resize(dim, 0);
        cache.argmax.resize(dim, 0);
        cache.mean.resize(dim, 0.0);
        cache.std.resize(dim, 0.0);
        return;
    }
    let inv_n = 1.0 / n as f64;
    for j in 0..dim {
        let mut sum = 0.0;
        let (mut lo, mut hi) = (items[j], items[j]);
        let (mut lo_k, mut hi_k) = (0u32, 0u32);
        for k in 0..n {
            let v = items[k * dim + j];
            sum += v;
            if v < lo {
                lo = v;
                lo_k = k as u32;
            }
            if v > hi {
                hi = v;
                hi_k = k as u32;
            }
        }
        let mean = sum * inv_n;
        let mut sq = 0.0;
        for k in 0..n {
            let c = items[k * dim + j] - mean;
            sq += c * c;
        }
        let std = (sq * inv_n).sqrt();
        out[j] = mean;
        out[dim + j] = lo;
        out[2 * dim + j] = hi;
        out[3 * dim + j] = std;
        cache.mean.push(mean);
        cache.std.push(std);
        cache.argmin.push(lo_k);
        cache.argmax.push(hi_k);
    }
}

/// Accumulates `d loss / d items` into `ditems` given `dout = d loss / d out`.
/// The standard deviation contributes no gradient where it is exactly zero.
pub fn backward(items: &[f64], dim: usize, cache: &PnaCache, dout: &[f64], ditems: &mut [f64]) {
    let n = cache.n;
    if n == 0 {
        return;
    }
    let inv_n = 1.0 / n as f64;
    for j in 0..dim {
        let g_mean = dout[j] * inv_n;
        for k in 0..n {
            ditems[k * dim + j] += g_mean;
        }
        ditems[cache.argmin[j] as usize * dim + j] += dout[dim + j];
        ditems[cache.argmax[j] as usize * dim + j] += dout[2 * dim + j];
        let std = cache.std[j];
        if std > 0.0 {
            let scale = dout[3 * dim + j] * inv_n / std;
            for k in 0..n {
                ditems[k * dim + j] += scale * (items[k * dim + j] - cache.mean[j]);
            }
        }
    }
}
