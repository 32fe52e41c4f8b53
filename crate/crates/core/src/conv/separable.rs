use super::{conv2d, conv2d_backward, ConvSpec, ConvWeights};
use crate::tensor::{Element, Tensor};
use crate::{Error, Result};

/// Size-preserving 3x3 depthwise conv: one group per channel, padding equal
/// to the dilation.
pub fn depthwise_spec(channels: usize, dilation: usize) -> ConvSpec {
    ConvSpec::new(channels, channels, 3)
        .groups(channels)
        .dilation(dilation)
        .padding(dilation)
}

pub fn pointwise_spec(in_channels: usize, out_channels: usize) -> ConvSpec {
    ConvSpec::new(in_channels, out_channels, 1)
}

fn specs<T: Element>(
    x: &Tensor<T>,
    depthwise: &ConvWeights<T>,
    pointwise: &ConvWeights<T>,
    dilation: usize,
) -> Result<(ConvSpec, ConvSpec)> {
    let c = x.shape().c;
    let ws = pointwise.weight.shape();
    if ws.h != 1 || ws.w != 1 {
        return Err(Error::InvalidConv(format!("pointwise kernel must be 1x1, got {ws}")));
    }
    let dw = depthwise_spec(c, dilation);
    depthwise.check(&dw)?;
    Ok((dw, pointwise_spec(c, ws.n)))
}

/// Depthwise 3x3 (dilated, size-preserving) followed by a 1x1 pointwise conv.
pub fn separable_conv2d<T: Element>(
    x: &Tensor<T>,
    depthwise: &ConvWeights<T>,
    pointwise: &ConvWeights<T>,
    dilation: usize,
) -> Result<Tensor<T>> {
    let (dw, pw) = specs(x, depthwise, pointwise, dilation)?;
    conv2d(&conv2d(x, depthwise, &dw)?, pointwise, &pw)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeparableGrads<T> {
    pub grad_x: Tensor<T>,
    pub depthwise: ConvWeights<T>,
    pub pointwise: ConvWeights<T>,
}

/// Backward pass of [`separable_conv2d`]. `mid` is the depthwise output
/// from the forward pass.
pub fn separable_conv2d_backward<T: Element>(
    x: &Tensor<T>,
    mid: &Tensor<T>,
    depthwise: &ConvWeights<T>,
    pointwise: &ConvWeights<T>,
    dilation: usize,
    grad_out: &Tensor<T>,
) -> Result<SeparableGrads<T>> {
    let (dw, pw) = specs(x, depthwise, pointwise, dilation)?;
    let g_pw = conv2d_backward(mid, pointwise, &pw, grad_out)?;
    let g_dw = conv2d_backward(x, depthwise, &dw, &g_pw.grad_x)?;
    Ok(SeparableGrads {
        grad_x: g_dw.grad_x,
        depthwise: g_dw.grad_w,
        pointwise: g_pw.grad_w,
    })
}
