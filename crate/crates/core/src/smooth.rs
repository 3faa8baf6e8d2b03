//! Smoothness regularizer for sorted attribute grids.
//!
//! Each plane is compared against a blurred copy of itself with a Huber
//! penalty. The loss is differentiable with respect to the plane values; the
//! gradient flows through both the plane and its blurred copy unless
//! `detach_target` is set.

use serde::{Deserialize, Serialize};

use crate::blur::{blur, blur_adjoint, GaussianKernel};
use crate::cloud::{Attribute, AttributeWeights, GridStack};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessParams {
    pub kernel_size: usize,
    pub sigma: f64,
    pub lambda: f64,
    pub weights: AttributeWeights,
    pub huber_delta: f64,
    /// Treat the blurred grid as a constant when differentiating.
    pub detach_target: bool,
}

impl Default for SmoothnessParams {
    fn default() -> Self {
        SmoothnessParams {
            kernel_size: 5,
            sigma: 3.0,
            lambda: 1.0,
            weights: AttributeWeights::SMOOTHNESS,
            huber_delta: 1.0,
            detach_target: false,
        }
    }
}

impl SmoothnessParams {
    pub fn validate(&self) -> Result<()> {
        if self.kernel_size % 2 == 0 {
            return Err(Error::invalid(format!(
                "kernel size must be odd, got {}",
                self.kernel_size
            )));
        }
        if !(self.sigma > 0.0) {
            return Err(Error::invalid("sigma must be positive"));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid("lambda must be finite and non-negative"));
        }
        if !(self.huber_delta > 0.0) {
            return Err(Error::invalid("Huber delta must be positive"));
        }
        self.weights.validate()
    }

    fn kernel(&self) -> GaussianKernel {
        GaussianKernel::new(self.kernel_size / 2, self.sigma)
    }
}

/// `x^2 / 2` inside `[-delta, delta]`, linear with slope `delta` outside.
pub fn huber(x: f64, delta: f64) -> f64 {
    let a = x.abs();
    if a <= delta {
        0.5 * x * x
    } else {
        delta * (a - 0.5 * delta)
    }
}

pub fn huber_grad(x: f64, delta: f64) -> f64 {
    if x.abs() <= delta {
        x
    } else {
        delta * x.signum()
    }
}

/// One attribute plane in `f64`, `side * side * channels` values.
#[derive(Clone, Debug, PartialEq)]
pub struct PlaneF64 {
    pub attribute: Attribute,
    pub channels: usize,
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SmoothnessOutput {
    pub loss: f64,
    /// Gradient per plane, same layout as the input planes.
    pub gradient: Vec<Vec<f64>>,
}

/// Loss and gradient over `f64` planes of a `side x side` grid.
pub fn smoothness_loss_planes(planes: &[PlaneF64], side: usize, params: &SmoothnessParams) -> Result<SmoothnessOutput> {
    params.validate()?;
    let kernel = params.kernel();
    let mut loss = 0.0;
    let mut gradient = Vec::with_capacity(planes.len());
    for p in planes {
        let n = side * side * p.channels;
        if p.data.len() != n {
            return Err(Error::invalid(format!("{} plane has the wrong size", p.attribute)));
        }
        let w = params.weights.get(p.attribute);
        if w == 0.0 || n == 0 {
            gradient.push(vec![0.0; n]);
            continue;
        }
        let blurred = blur(&p.data, side, side, p.channels, &kernel);
        let residual: Vec<f64> = p.data.iter().zip(&blurred).map(|(x, b)| x - b).collect();
        let sum: f64 = residual.iter().map(|&r| huber(r, params.huber_delta)).sum();
        loss += w * sum / n as f64;

        let scale = w / n as f64;
        let dr: Vec<f64> = residual
            .iter()
            .map(|&r| scale * huber_grad(r, params.huber_delta))
            .collect();
        let g = if params.detach_target {
            dr
        } else {
            // d/dx of h(x - Bx) = h'(r) - B^T h'(r)
            let back = blur_adjoint(&dr, side, side, p.channels, &kernel);
            dr.iter().zip(&back).map(|(a, b)| a - b).collect()
        };
        gradient.push(g.into_iter().map(|v| params.lambda * v).collect());
    }
    Ok(SmoothnessOutput {
        loss: params.lambda * loss,
        gradient,
    })
}

/// Smoothness loss of every plane of `stack`; the gradient follows `Attribute::ALL` order.
pub fn smoothness_loss(stack: &GridStack, params: &SmoothnessParams) -> Result<SmoothnessOutput> {
    let planes: Vec<PlaneF64> = Attribute::ALL
        .iter()
        .map(|&a| {
            let p = stack.plane(a);
            if p.data.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("{a} plane is not finite")));
            }
            Ok(PlaneF64 {
                attribute: a,
                channels: p.channels,
                data: p.data.iter().map(|&v| f64::from(v)).collect(),
            })
        })
        .collect::<Result<_>>()?;
    smoothness_loss_planes(&planes, stack.layout.side, params)
}
