use super::{Dataset, IMAGE_SIDE};
use crate::error::{Error, Result};
use crate::tensor::{Rng, Scalar, Tensor};

/// A mini-batch: images `[B, 1, 48, 48]`, their labels and the dataset
/// indices they came from.
#[derive(Debug, Clone)]
pub struct Batch<T = f32> {
    pub images: Tensor<T>,
    pub labels: Vec<usize>,
    pub indices: Vec<usize>,
}

/// One epoch's batch sequence over a dataset.
pub struct Batches<'a, T = f32> {
    dataset: &'a Dataset,
    order: Vec<usize>,
    batch_size: usize,
    next: usize,
    _scalar: std::marker::PhantomData<T>,
}

/// Batches in dataset order, or in a Fisher-Yates permutation drawn once
/// from `rng` when `shuffle` is set. The final partial batch is kept.
pub fn batches<'a, T: Scalar>(
    dataset: &'a Dataset,
    batch_size: usize,
    shuffle: bool,
    rng: &mut Rng,
) -> Result<Batches<'a, T>> {
    if batch_size == 0 {
        return Err(Error::config("batch size must be >= 1"));
    }
    let order = if shuffle {
        rng.permutation(dataset.len())
    } else {
        (0..dataset.len()).collect()
    };
    Ok(Batches {
        dataset,
        order,
        batch_size,
        next: 0,
        _scalar: std::marker::PhantomData,
    })
}

impl<T> Batches<'_, T> {
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn num_batches(&self) -> usize {
        self.order.len().div_ceil(self.batch_size)
    }
}

impl<T: Scalar> Iterator for Batches<'_, T> {
    type Item = Batch<T>;

    fn next(&mut self) -> Option<Batch<T>> {
        if self.next >= self.order.len() {
            return None;
        }
        let end = (self.next + self.batch_size).min(self.order.len());
        let indices = self.order[self.next..end].to_vec();
        self.next = end;
        let mut data = Vec::with_capacity(indices.len() * IMAGE_SIDE * IMAGE_SIDE);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in &indices {
            let ex = &self.dataset.examples[i];
            data.extend(ex.pixels.iter().map(|&p| T::from_f64_lossy(f64::from(p))));
            labels.push(usize::from(ex.label));
        }
        let images = Tensor::from_vec(&[indices.len(), 1, IMAGE_SIDE, IMAGE_SIDE], data)
            .expect("examples hold full images");
        Some(Batch {
            images,
            labels,
            indices,
        })
    }
}
