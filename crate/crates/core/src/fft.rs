//! Multidimensional FFT over a cubic grid, applied axis by axis.

use num_complex::Complex64;
use rustfft::{FftDirection, FftPlanner};

/// In-place unnormalized transform of a `g^dim` row-major array
/// (last axis fastest). `Inverse` uses the `e^{+2 pi i jk/g}` kernel.
pub fn fft_nd(data: &mut [Complex64], dim: usize, g: usize, direction: FftDirection) {
    debug_assert_eq!(data.len(), g.pow(dim as u32));
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft(g, direction);
    let mut line = vec![Complex64::new(0.0, 0.0); g];
    let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    for axis in 0..dim {
        let stride = g.pow((dim - 1 - axis) as u32);
        let outer = data.len() / (g * stride);
        for o in 0..outer {
            for s in 0..stride {
                let base = o * g * stride + s;
                for (j, x) in line.iter_mut().enumerate() {
                    *x = data[base + j * stride];
                }
                fft.process_with_scratch(&mut line, &mut scratch);
                for (j, x) in line.iter().enumerate() {
                    data[base + j * stride] = *x;
                }
            }
        }
    }
}
