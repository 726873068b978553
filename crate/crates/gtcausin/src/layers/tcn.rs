//! Dilated causal convolution along the time axis.

use crate::autodiff::Tape;
use crate::error::Result;
use crate::tensor::Tensor;

/// out[n,q,t] = Σ_{p,k} θ[q,p,k] · x[n,p,t−d·k], reading zeros before the
/// window start. Output has the same length as the input.
pub fn tcn_forward(theta: &Tensor, dilation: usize, x: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let th = tape.constant(theta.clone());
    let out = tape.dilated_conv(xv, th, dilation)?;
    Ok(tape.value(out).clone())
}
