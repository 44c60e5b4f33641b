//! Unitary d-dimensional FFT on row-major buffers.
//!
//! Both directions carry the symmetric `1/sqrt(total)` normalisation, so
//! `forward` followed by `inverse` is the identity and both preserve the
//! `l2` norm exactly (up to rounding). Plans are cached per transform length
//! for the life of the process.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use rustfft::{Fft, FftDirection, FftPlanner};

use crate::C64;

type PlanKey = (usize, bool);
type PlanMap = HashMap<PlanKey, Arc<dyn Fft<f64>>>;

fn plan(len: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    static CACHE: OnceLock<Mutex<PlanMap>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut map = cache.lock().expect("fft plan cache poisoned");
    map.entry((len, inverse))
        .or_insert_with(|| {
            let direction = if inverse {
                FftDirection::Inverse
            } else {
                FftDirection::Forward
            };
            FftPlanner::new().plan_fft(len, direction)
        })
        .clone()
}

/// Unitary forward transform of a row-major `shape` buffer, in place.
pub fn forward(data: &mut [C64], shape: &[usize]) {
    transform(data, shape, false);
}

/// Unitary inverse transform of a row-major `shape` buffer, in place.
pub fn inverse(data: &mut [C64], shape: &[usize]) {
    transform(data, shape, true);
}

fn transform(data: &mut [C64], shape: &[usize], inverse: bool) {
    let total: usize = shape.iter().product();
    assert_eq!(
        data.len(),
        total,
        "buffer length {} does not match shape {:?}",
        data.len(),
        shape
    );
    if total == 0 {
        return;
    }

    for (axis, &n) in shape.iter().enumerate() {
        if n == 1 {
            continue;
        }
        let fft = plan(n, inverse);
        let mut scratch = vec![C64::default(); fft.get_inplace_scratch_len()];
        let inner: usize = shape[axis + 1..].iter().product();
        if inner == 1 {
            // Last axis: lanes are contiguous, process them all in one call.
            fft.process_with_scratch(data, &mut scratch);
        } else {
            let outer: usize = shape[..axis].iter().product();
            let mut lane = vec![C64::default(); n];
            for o in 0..outer {
                let block = o * n * inner;
                for i in 0..inner {
                    for (k, slot) in lane.iter_mut().enumerate() {
                        *slot = data[block + k * inner + i];
                    }
                    fft.process_with_scratch(&mut lane, &mut scratch);
                    for (k, &value) in lane.iter().enumerate() {
                        data[block + k * inner + i] = value;
                    }
                }
            }
        }
    }

    let scale = 1.0 / (total as f64).sqrt();
    for value in data.iter_mut() {
        *value *= scale;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn l2(data: &[C64]) -> f64 {
        data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    #[test]
    fn roundtrip_is_identity_1d() {
        let n = 64;
        let original: Vec<C64> = (0..n)
            .map(|j| C64::new((j as f64).sin(), (3.0 + j as f64).cos()))
            .collect();
        let mut data = original.clone();
        forward(&mut data, &[n]);
        inverse(&mut data, &[n]);
        for (a, b) in data.iter().zip(&original) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn roundtrip_is_identity_2d() {
        let shape = [16, 32];
        let total = shape.iter().product::<usize>();
        let original: Vec<C64> = (0..total)
            .map(|j| C64::new((0.1 * j as f64).cos(), (0.07 * j as f64).sin()))
            .collect();
        let mut data = original.clone();
        forward(&mut data, &shape);
        inverse(&mut data, &shape);
        for (a, b) in data.iter().zip(&original) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn forward_preserves_l2_norm() {
        let shape = [8, 8, 4];
        let total = shape.iter().product::<usize>();
        let mut data: Vec<C64> = (0..total)
            .map(|j| C64::new(1.0 / (1.0 + j as f64), (j as f64).sqrt()))
            .collect();
        let before = l2(&data);
        forward(&mut data, &shape);
        assert!((l2(&data) - before).abs() < 1e-12 * before);
    }

    #[test]
    fn forward_of_plane_wave_is_single_bin() {
        let n = 32;
        let k = 5usize;
        let mut data: Vec<C64> = (0..n)
            .map(|j| C64::from_polar(1.0, 2.0 * std::f64::consts::PI * (k * j) as f64 / n as f64))
            .collect();
        forward(&mut data, &[n]);
        for (bin, value) in data.iter().enumerate() {
            let expected = if bin == k { (n as f64).sqrt() } else { 0.0 };
            assert!(
                (value.norm() - expected).abs() < 1e-10,
                "bin {bin} has magnitude {}",
                value.norm()
            );
        }
    }
}
