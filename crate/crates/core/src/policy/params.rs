//! Flat parameter storage and the offsets of each tensor inside it.

use serde::{Deserialize, Serialize};

/// Architecture-level sizes. `hidden` is the width of the optional tanh
/// trunk shared by all heads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyShape {
    pub feature_dim: usize,
    pub hidden: Option<usize>,
    pub audio: usize,
    pub visual: usize,
    pub answer: usize,
}

/// A weight matrix (row-major, `rows x cols`) followed by its bias.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DenseSlot {
    pub weight: usize,
    pub bias: usize,
    pub rows: usize,
    pub cols: usize,
}

impl DenseSlot {
    fn at(offset: usize, rows: usize, cols: usize) -> Self {
        Self {
            weight: offset,
            bias: offset + rows * cols,
            rows,
            cols,
        }
    }

    fn end(&self) -> usize {
        self.bias + self.rows
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub trunk: Option<DenseSlot>,
    pub audio: DenseSlot,
    pub visual: DenseSlot,
    pub answer: DenseSlot,
    pub malform: usize,
    pub len: usize,
}

impl PolicyShape {
    /// Input width of the heads.
    pub fn head_input(&self) -> usize {
        self.hidden.unwrap_or(self.feature_dim)
    }

    pub fn layout(&self) -> Layout {
        let trunk = self.hidden.map(|h| DenseSlot::at(0, h, self.feature_dim));
        let d = self.head_input();
        let audio = DenseSlot::at(trunk.map_or(0, |t| t.end()), self.audio, d);
        let visual = DenseSlot::at(audio.end(), self.visual, d);
        let answer = DenseSlot::at(visual.end(), self.answer, d);
        let malform = answer.end();
        Layout {
            trunk,
            audio,
            visual,
            answer,
            malform,
            len: malform + 1,
        }
    }
}

/// Parameters (or a gradient) as one flat vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Params(Vec<f64>);

impl Params {
    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn from_vec(v: Vec<f64>) -> Self {
        Self(v)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f64, other: &Params) {
        assert_eq!(self.len(), other.len(), "parameter length mismatch");
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += alpha * b;
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        self.0.iter_mut().for_each(|a| *a *= alpha);
    }

    pub fn dot(&self, other: &Params) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&x| x == 0.0)
    }
}

impl std::ops::Index<usize> for Params {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl std::ops::IndexMut<usize> for Params {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.0[i]
    }
}
