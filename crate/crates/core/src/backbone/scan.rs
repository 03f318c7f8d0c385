//! Four-direction 2-D traversal: row-major, row-major reversed,
//! column-major, column-major reversed.

use std::rc::Rc;

use fusedepth_tensor::Tensor;

use crate::error::{CoreError, Result};

/// Pixel visited at step `t` for each direction, plus the inverse maps.
#[derive(Debug, Clone)]
pub struct ScanOrder {
    pub height: usize,
    pub width: usize,
    pub forward: [Vec<usize>; 4],
    pub inverse: [Vec<usize>; 4],
}

impl ScanOrder {
    pub fn new(height: usize, width: usize) -> Self {
        let l = height * width;
        let row: Vec<usize> = (0..l).collect();
        let col: Vec<usize> = (0..l).map(|t| (t % height) * width + t / height).collect();
        let rev = |v: &Vec<usize>| v.iter().rev().copied().collect::<Vec<_>>();
        let forward = [row.clone(), rev(&row), col.clone(), rev(&col)];
        let inverse = forward.clone().map(|f| {
            let mut inv = vec![0; l];
            for (t, &p) in f.iter().enumerate() {
                inv[p] = t;
            }
            inv
        });
        ScanOrder {
            height,
            width,
            forward,
            inverse,
        }
    }

    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `C×H×W` map to the `L×C` sequence of direction `k`.
    pub fn scan(&self, f: &Tensor, k: usize) -> Result<Tensor> {
        let (c, l) = self.check_map(f)?;
        let idx: Rc<[usize]> = (0..l)
            .flat_map(|t| {
                let p = self.forward[k][t];
                (0..c).map(move |ch| ch * l + p)
            })
            .collect();
        Ok(f.gather(idx, &[l, c])?)
    }

    /// `L×C` sequence of direction `k` back to its `C×H×W` layout.
    pub fn unscan(&self, y: &Tensor, k: usize) -> Result<Tensor> {
        let l = self.len();
        if y.ndim() != 2 || y.shape()[0] != l {
            return Err(CoreError::invalid("cross_merge", format!("sequence {:?} does not have length {l}", y.shape())));
        }
        let c = y.shape()[1];
        let idx: Rc<[usize]> = (0..c)
            .flat_map(|ch| self.inverse[k].iter().map(move |&t| t * c + ch))
            .collect();
        Ok(y.gather(idx, &[c, self.height, self.width])?)
    }

    fn check_map(&self, f: &Tensor) -> Result<(usize, usize)> {
        let s = f.shape();
        if s.len() != 3 || s[1] != self.height || s[2] != self.width {
            return Err(CoreError::invalid(
                "cross_scan",
                format!("map {s:?} does not match {}×{}", self.height, self.width),
            ));
        }
        Ok((s[0], self.len()))
    }
}

pub fn cross_scan_2d(f: &Tensor) -> Result<[Tensor; 4]> {
    if f.ndim() != 3 {
        return Err(CoreError::invalid("cross_scan", format!("expected C×H×W, got {:?}", f.shape())));
    }
    let order = ScanOrder::new(f.shape()[1], f.shape()[2]);
    Ok([order.scan(f, 0)?, order.scan(f, 1)?, order.scan(f, 2)?, order.scan(f, 3)?])
}

/// Un-permutes each sequence and sums the four maps.
pub fn cross_merge(ys: &[Tensor; 4], height: usize, width: usize) -> Result<Tensor> {
    let order = ScanOrder::new(height, width);
    let mut out = order.unscan(&ys[0], 0)?;
    for (k, y) in ys.iter().enumerate().skip(1) {
        out = out.add(&order.unscan(y, k)?)?;
    }
    Ok(out)
}
