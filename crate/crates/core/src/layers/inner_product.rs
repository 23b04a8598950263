use std::sync::Arc;

use rand::{Rng, RngCore};

use crate::backend::{Backend, Real};
use crate::error::Result;
use crate::layers::LayerSpec;
use crate::tensor::{Blob, Shape};

/// Fully connected layer: top = bottom·Wᵀ + bias.
///
/// Weight shape is (1,1,num_output,input_dim), bias (1,1,1,num_output).
pub(super) struct InnerProduct {
    num_output: usize,
    input_dim: usize,
    batch: usize,
    /// Column of ones used to broadcast the bias through gemm.
    ones: Option<Blob>,
}

impl InnerProduct {
    pub(super) fn setup(
        spec: &LayerSpec,
        bottom: Shape,
        backend: &Arc<Backend>,
        rng: &mut dyn RngCore,
        params: &mut Vec<Blob>,
    ) -> Result<(Self, Shape)> {
        let param = spec.inner_product.clone().unwrap_or_default();
        let num_output = match param.num_output {
            Some(0) => return spec.err("num_output must be positive"),
            Some(n) => n,
            None => return spec.err("inner_product_param.num_output is required"),
        };
        let bias_term = param.bias_term.unwrap_or(true);
        let input_dim = bottom.item_count();
        let batch = bottom.num();

        // Uniform Xavier filler.
        let weight = Blob::new(
            backend,
            format!("{}.weight", spec.name),
            Shape::new(1, 1, num_output, input_dim),
        )?;
        let scale = (6.0 / (input_dim + num_output) as f64).sqrt();
        let init: Vec<Real> = (0..weight.count())
            .map(|_| rng.gen_range(-scale..scale) as Real)
            .collect();
        weight.write_data(&init)?;
        params.push(weight);

        let ones = if bias_term {
            params.push(Blob::new(
                backend,
                format!("{}.bias", spec.name),
                Shape::vector(num_output),
            )?);
            let ones = Blob::new(backend, format!("{}.bias_multiplier", spec.name), Shape::vector(batch))?;
            backend.set(batch, 1.0, ones.data())?;
            Some(ones)
        } else {
            None
        };

        Ok((
            InnerProduct {
                num_output,
                input_dim,
                batch,
                ones,
            },
            Shape::new(batch, 1, 1, num_output),
        ))
    }

    pub(super) fn forward(&self, params: &[Blob], bottom: &Blob, top: &Blob) -> Result<()> {
        let be = bottom.backend();
        let (m, n, k) = (self.batch, self.num_output, self.input_dim);
        be.gemm(false, true, m, n, k, 1.0, bottom.data(), params[0].data(), 0.0, top.data())?;
        if let Some(ones) = &self.ones {
            be.gemm(false, false, m, n, 1, 1.0, ones.data(), params[1].data(), 1.0, top.data())?;
        }
        Ok(())
    }

    pub(super) fn backward(&self, params: &[Blob], top: &Blob, bottom: &Blob) -> Result<()> {
        let be = bottom.backend();
        let (m, n, k) = (self.batch, self.num_output, self.input_dim);
        // dW += top_diffᵀ · bottom
        be.gemm(true, false, n, k, m, 1.0, top.diff(), bottom.data(), 1.0, params[0].diff())?;
        if let Some(ones) = &self.ones {
            // dbias += top_diffᵀ · 1
            be.gemm(true, false, n, 1, m, 1.0, top.diff(), ones.data(), 1.0, params[1].diff())?;
        }
        // bottom_diff = top_diff · W
        be.gemm(false, false, m, k, n, 1.0, top.diff(), params[0].data(), 0.0, bottom.diff())
    }
}
