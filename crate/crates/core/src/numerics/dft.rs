//! Discrete Fourier transform over real signals.
//!
//! The forward sum is unnormalized; downstream consumers only compare
//! relative peak magnitudes, so no normalization constant is applied.

use crate::error::{Error, Result};
use crate::numerics::Vector;

/// Magnitude of the DFT coefficient at each frequency 0..=len/2.
pub fn dft_magnitudes(signal: &Vector) -> Result<Vector> {
    let n = signal.len();
    if n < 2 {
        return Err(Error::Contract("dft requires signal length >= 2".into()));
    }
    let mut out = Vec::with_capacity(n / 2 + 1);
    for f in 0..=(n / 2) {
        let mut re = 0.0;
        let mut im = 0.0;
        for (j, &x) in signal.data.iter().enumerate() {
            let ang = -2.0 * std::f64::consts::PI * (f as f64) * (j as f64) / (n as f64);
            re += x * ang.cos();
            im += x * ang.sin();
        }
        out.push((re * re + im * im).sqrt());
    }
    Ok(Vector::from(out))
}

/// Per-frequency spectral energy (squared magnitude).
pub fn dft_energies(signal: &Vector) -> Result<Vector> {
    let mags = dft_magnitudes(signal)?;
    Ok(Vector::from(mags.data.iter().map(|m| m * m).collect::<Vec<_>>()))
}
