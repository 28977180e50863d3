use std::collections::BTreeMap;

use ndarray::{ArrayD, ArrayView1, ArrayView2, Ix1, Ix2};

use crate::error::{Error, Result};

/// Named, shaped parameter blocks. Also used for gradients and optimizer
/// moments, which mirror the parameter layout.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParameterSet {
    blocks: BTreeMap<String, ArrayD<f64>>,
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: ArrayD<f64>) {
        self.blocks.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Result<&ArrayD<f64>> {
        self.blocks
            .get(name)
            .ok_or_else(|| Error::Shape(format!("missing parameter block `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut ArrayD<f64>> {
        self.blocks
            .get_mut(name)
            .ok_or_else(|| Error::Shape(format!("missing parameter block `{name}`")))
    }

    pub fn matrix(&self, name: &str) -> Result<ArrayView2<'_, f64>> {
        self.get(name)?
            .view()
            .into_dimensionality::<Ix2>()
            .map_err(|_| Error::Shape(format!("block `{name}` is not a matrix")))
    }

    pub fn vector(&self, name: &str) -> Result<ArrayView1<'_, f64>> {
        self.get(name)?
            .view()
            .into_dimensionality::<Ix1>()
            .map_err(|_| Error::Shape(format!("block `{name}` is not a vector")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.blocks.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.blocks.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ArrayD<f64>)> {
        self.blocks.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut ArrayD<f64>)> {
        self.blocks.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    /// Total number of scalars.
    pub fn num_values(&self) -> usize {
        self.blocks.values().map(|b| b.len()).sum()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            blocks: self
                .blocks
                .iter()
                .map(|(k, v)| (k.clone(), ArrayD::zeros(v.raw_dim())))
                .collect(),
        }
    }

    /// Add `other` into `self` block by block. Blocks missing from `other` are left alone.
    pub fn add_assign(&mut self, other: &ParameterSet) -> Result<()> {
        for (name, g) in &other.blocks {
            let dst = self.get_mut(name)?;
            if dst.shape() != g.shape() {
                return Err(Error::Shape(format!(
                    "block `{name}`: {:?} vs {:?}",
                    dst.shape(),
                    g.shape()
                )));
            }
            *dst += g;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        for b in self.blocks.values_mut() {
            b.mapv_inplace(|v| v * factor);
        }
    }

    /// Accumulate a dense gradient into block `name`.
    pub(crate) fn accumulate<D: ndarray::Dimension>(
        &mut self,
        name: &str,
        grad: &ndarray::Array<f64, D>,
    ) -> Result<()> {
        let dst = self.get_mut(name)?;
        if dst.shape() == grad.shape() {
            *dst += &grad.view().into_dyn();
            return Ok(());
        }
        let flat: Vec<f64> = grad.iter().copied().collect();
        let g = ArrayD::from_shape_vec(dst.raw_dim(), flat).map_err(|_| {
            Error::Shape(format!("gradient for `{name}` has shape {:?}", grad.shape()))
        })?;
        *dst += &g;
        Ok(())
    }

    /// First block containing a non-finite value.
    pub fn first_non_finite(&self) -> Option<&str> {
        self.blocks
            .iter()
            .find(|(_, b)| b.iter().any(|v| !v.is_finite()))
            .map(|(k, _)| k.as_str())
    }

    /// True when both sets have the same names and shapes.
    pub fn same_layout(&self, other: &ParameterSet) -> bool {
        self.blocks.len() == other.blocks.len()
            && self
                .blocks
                .iter()
                .zip(&other.blocks)
                .all(|((ka, a), (kb, b))| ka == kb && a.shape() == b.shape())
    }

    /// Bitwise equality of every value (distinguishes `0.0` from `-0.0`, NaN payloads).
    pub fn bit_eq(&self, other: &ParameterSet) -> bool {
        self.same_layout(other)
            && self.blocks.values().zip(other.blocks.values()).all(|(a, b)| {
                a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits())
            })
    }
}
