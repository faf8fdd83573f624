//! Dense row-major `f64` arrays with a small amount of shape logic.
//!
//! Broadcasting follows the usual rule restricted to what the layers need:
//! shapes are right-aligned, missing leading dimensions count as 1, and a
//! dimension of size 1 stretches to match the other operand.

use super::TapeError;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, TapeError> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(TapeError::ShapeMismatch(format!(
                "shape {:?} holds {} values, got {}",
                shape,
                numel,
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn scalar(v: f64) -> Self {
        Tensor { shape: vec![], data: vec![v] }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor { shape: vec![data.len()], data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![0.0; n] }
    }

    pub fn full(shape: &[usize], v: f64) -> Self {
        let n = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![v; n] }
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

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Option<f64> {
        if self.data.len() == 1 {
            Some(self.data[0])
        } else {
            None
        }
    }

    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, data }
    }
}

/// Splits `shape` around `axis` into `(outer, len, inner)` so that element
/// `(o, i, r)` sits at `(o * len + i) * inner + r`.
pub(crate) fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = dim_from_right(a, rank, i);
        let db = dim_from_right(b, rank, i);
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

fn dim_from_right(shape: &[usize], rank: usize, i: usize) -> usize {
    let pad = rank - shape.len();
    if i < pad {
        1
    } else {
        shape[i - pad]
    }
}

/// For every element of `out`, the linear index of the element of `input`
/// it reads under broadcasting.
pub(crate) fn broadcast_index(out: &[usize], input: &[usize]) -> Vec<usize> {
    let rank = out.len();
    let n: usize = out.iter().product();
    let numel_in: usize = input.iter().product();
    if numel_in == 1 || n == 0 {
        return vec![0; n];
    }
    // strides of the input expressed in output coordinates (0 where stretched)
    let mut strides = vec![0usize; rank];
    let mut acc = 1;
    for i in (0..rank).rev() {
        let d = dim_from_right(input, rank, i);
        strides[i] = if d == 1 { 0 } else { acc };
        acc *= d;
    }
    // the index block of the inner axes repeats, shifted, along each outer axis
    let mut idx = Vec::with_capacity(n);
    idx.push(0);
    for ax in (0..rank).rev() {
        let block = idx.len();
        for o in 1..out[ax] {
            let shift = o * strides[ax];
            idx.extend_from_within(..block);
            idx[o * block..].iter_mut().for_each(|v| *v += shift);
        }
    }
    idx
}

/// Rows of a broadcast binary op: along the last output axis each operand
/// either advances by one or stays put, so every row is described by its
/// two starting offsets.
pub(crate) struct RowPlan {
    pub len: usize,
    pub sa: usize,
    pub sb: usize,
    pub rows: Vec<(usize, usize)>,
}

impl RowPlan {
    pub(crate) fn new(out: &[usize], a: &[usize], b: &[usize]) -> RowPlan {
        let n: usize = out.iter().product();
        if a == out && b == out {
            return RowPlan { len: n, sa: 1, sb: 1, rows: vec![(0, 0)] };
        }
        let Some((&len, outer)) = out.split_last() else {
            return RowPlan { len: 1, sa: 0, sb: 0, rows: vec![(0, 0)] };
        };
        let side = |s: &[usize]| {
            let (last, head) = match s.split_last() {
                Some((&l, h)) => (l, h),
                None => (1, &[][..]),
            };
            let idx = broadcast_index(outer, head);
            (idx.into_iter().map(|i| i * last).collect::<Vec<_>>(), usize::from(last != 1))
        };
        let (ra, sa) = side(a);
        let (rb, sb) = side(b);
        RowPlan { len, sa, sb, rows: ra.into_iter().zip(rb).collect() }
    }
}
