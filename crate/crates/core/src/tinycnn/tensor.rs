use crate::imaging::{resize_bilinear, Image};
use crate::{Error, Result};

/// Dense real tensor, either `(channels, height, width)` or flat `(features)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.len() > 3 || shape.iter().product::<usize>() != data.len() {
            return Err(Error::InvalidInput(format!(
                "shape {shape:?} does not hold {} values",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; n],
        }
    }

    /// `(3, side, side)` tensor of the image resized to `side`, scaled to [0, 1].
    pub fn from_image(img: &Image, side: usize) -> Result<Self> {
        let img = resize_bilinear(img, side, side)?;
        let plane = side * side;
        let mut data = vec![0.0; 3 * plane];
        for (i, px) in img.data().chunks_exact(3).enumerate() {
            for c in 0..3 {
                data[c * plane + i] = px[c] as f64 / 255.0;
            }
        }
        Ok(Tensor {
            shape: vec![3, side, side],
            data,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// `(channels, height, width)`, or an error for flat tensors.
    pub fn chw(&self) -> Result<(usize, usize, usize)> {
        match self.shape[..] {
            [c, h, w] => Ok((c, h, w)),
            _ => Err(Error::InvalidInput(format!("expected a (c, h, w) tensor, got {:?}", self.shape))),
        }
    }

    pub(crate) fn with_data(&self, data: Vec<f64>) -> Tensor {
        debug_assert_eq!(data.len(), self.data.len());
        Tensor {
            shape: self.shape.clone(),
            data,
        }
    }
}
