use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

/// Row-major dense array of `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseArray {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl DenseArray {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(SimError::dim(
                "DenseArray::new",
                format!("{expected} elements for shape {shape:?}"),
                data.len(),
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(SimError::NonFinite("DenseArray::new".into()));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; len],
        }
    }

    pub fn full(shape: Vec<usize>, value: f64) -> Self {
        let len = shape.iter().product();
        Self {
            shape,
            data: vec![value; len],
        }
    }

    /// Builds from a buffer whose length is already known to match the shape.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Extent of the leading axis (0 for a scalar shape).
    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(0)
    }

    /// Number of elements per leading-axis row.
    pub fn row_len(&self) -> usize {
        self.shape.iter().skip(1).product()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.row_len();
        &self.data[i * w..(i + 1) * w]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let w = self.row_len();
        &mut self.data[i * w..(i + 1) * w]
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != self.data.len() {
            return Err(SimError::dim("reshape", self.data.len(), expected));
        }
        Ok(Self {
            shape,
            data: self.data,
        })
    }

    /// Stacks equally shaped arrays along a new leading axis.
    pub fn stack(items: &[&DenseArray]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| SimError::Empty("stack of zero arrays".into()))?;
        let mut data = Vec::with_capacity(first.len() * items.len());
        for item in items {
            if item.shape != first.shape {
                return Err(SimError::dim("stack", format!("{:?}", first.shape), format!("{:?}", item.shape)));
            }
            data.extend_from_slice(&item.data);
        }
        let mut shape = Vec::with_capacity(first.shape.len() + 1);
        shape.push(items.len());
        shape.extend_from_slice(&first.shape);
        Ok(Self { shape, data })
    }

    /// Concatenates along the leading axis.
    pub fn concat_rows(a: &DenseArray, b: &DenseArray) -> Result<Self> {
        if a.shape.len() != b.shape.len() || a.shape[1..] != b.shape[1..] {
            return Err(SimError::dim("concat_rows", format!("{:?}", a.shape), format!("{:?}", b.shape)));
        }
        let mut shape = a.shape.clone();
        shape[0] += b.shape[0];
        let mut data = Vec::with_capacity(a.len() + b.len());
        data.extend_from_slice(&a.data);
        data.extend_from_slice(&b.data);
        Ok(Self { shape, data })
    }

    /// Copies rows `start..end` of the leading axis.
    pub fn slice_rows(&self, start: usize, end: usize) -> Self {
        let w = self.row_len();
        let mut shape = self.shape.clone();
        shape[0] = end - start;
        Self {
            shape,
            data: self.data[start * w..end * w].to_vec(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn ensure_finite(&self, context: &str) -> Result<()> {
        if self.all_finite() {
            Ok(())
        } else {
            Err(SimError::NonFinite(context.to_string()))
        }
    }
}
