//! Reverse-mode autodiff on a flat tape.
//!
//! Every intermediate is a row-major `f64` matrix. Ops append nodes holding
//! the forward value plus a closure that maps the upstream gradient to
//! per-parent contributions; `backward` walks the tape once in reverse.
//! Parents always precede children on the tape, so one sweep suffices.

use ndarray::{s, Array2, Axis};

use crate::error::{Error, Result};

pub type Mat = Array2<f64>;

/// Handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

type BackFn = Box<dyn Fn(&Mat) -> Vec<Mat>>;

struct Node {
    value: Mat,
    parents: Vec<Var>,
    back: Option<BackFn>,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of one scalar with respect to every tape node that influenced
/// it. Nodes off the path report `None`, i.e. an exact zero.
pub struct Grads {
    grads: Vec<Option<Mat>>,
}

impl Grads {
    pub fn of(&self, v: Var) -> Option<&Mat> {
        self.grads[v.0].as_ref()
    }

    /// Gradient as a dense matrix, zeros when the node is off the path.
    pub fn dense(&self, v: Var, shape: (usize, usize)) -> Mat {
        self.grads[v.0].clone().unwrap_or_else(|| Mat::zeros(shape))
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let m = &self.nodes[v.0].value;
        (m.nrows(), m.ncols())
    }

    /// Gradient-tracked input (parameter or data).
    pub fn leaf(&mut self, value: Mat) -> Var {
        self.push_node(value, Vec::new(), None)
    }

    /// Alias of [`Tape::leaf`] for values that are conceptually constants.
    pub fn constant(&mut self, value: Mat) -> Var {
        self.leaf(value)
    }

    /// Re-enter a value as a fresh leaf, cutting the gradient path.
    pub fn stop_gradient(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.leaf(value)
    }

    fn push_node(&mut self, value: Mat, parents: Vec<Var>, back: Option<BackFn>) -> Var {
        debug_assert!(value.iter().all(|x| x.is_finite()), "non-finite forward value");
        self.nodes.push(Node { value, parents, back });
        Var(self.nodes.len() - 1)
    }

    /// Custom differentiable op with one parent. The closure receives the
    /// upstream gradient and must return the gradient w.r.t. the parent.
    pub fn custom_unary(
        &mut self,
        parent: Var,
        value: Mat,
        back: impl Fn(&Mat) -> Mat + 'static,
    ) -> Var {
        self.push_node(value, vec![parent], Some(Box::new(move |g| vec![back(g)])))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) + self.value(b);
        self.push_node(value, vec![a, b], Some(Box::new(|g: &Mat| vec![g.clone(), g.clone()])))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) - self.value(b);
        self.push_node(value, vec![a, b], Some(Box::new(|g: &Mat| vec![g.clone(), -g])))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a) * c;
        self.push_node(value, vec![a], Some(Box::new(move |g: &Mat| vec![g * c])))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a).clone(), self.value(b).clone());
        let value = &va * &vb;
        self.push_node(
            value,
            vec![a, b],
            Some(Box::new(move |g: &Mat| vec![g * &vb, g * &va])),
        )
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a).clone(), self.value(b).clone());
        assert_eq!(va.ncols(), vb.nrows(), "matmul inner dims");
        let value = va.dot(&vb);
        self.push_node(
            value,
            vec![a, b],
            Some(Box::new(move |g: &Mat| vec![g.dot(&vb.t()), va.t().dot(g)])),
        )
    }

    /// Broadcast-add a 1xD row vector to every row of an NxD matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let r = self.value(row).clone();
        assert_eq!(r.nrows(), 1);
        assert_eq!(r.ncols(), self.value(a).ncols());
        let value = self.value(a) + &r;
        self.push_node(
            value,
            vec![a, row],
            Some(Box::new(|g: &Mat| {
                let summed = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                vec![g.clone(), summed]
            })),
        )
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let mask = self.value(a).mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
        let value = self.value(a) * &mask;
        self.push_node(value, vec![a], Some(Box::new(move |g: &Mat| vec![g * &mask])))
    }

    /// Row-wise softmax.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut value = x.clone();
        for mut row in value.rows_mut() {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            row.mapv_inplace(|v| (v - max).exp());
            let sum: f64 = row.sum();
            row.mapv_inplace(|v| v / sum);
        }
        let y = value.clone();
        self.push_node(
            value,
            vec![a],
            Some(Box::new(move |g: &Mat| {
                let mut out = Mat::zeros(g.raw_dim());
                for i in 0..g.nrows() {
                    let dot: f64 = g.row(i).iter().zip(y.row(i).iter()).map(|(a, b)| a * b).sum();
                    for j in 0..g.ncols() {
                        out[[i, j]] = y[[i, j]] * (g[[i, j]] - dot);
                    }
                }
                vec![out]
            })),
        )
    }

    /// Per-row standardization with affine gain/bias (both 1xD).
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Var {
        let xv = self.value(x).clone();
        let gv = self.value(gain).clone();
        let bv = self.value(bias).clone();
        let d = xv.ncols();
        assert_eq!(gv.ncols(), d);
        assert_eq!(bv.ncols(), d);

        let mut normed = Mat::zeros(xv.raw_dim());
        let mut sigmas = Vec::with_capacity(xv.nrows());
        for (i, row) in xv.rows().into_iter().enumerate() {
            let mean = row.sum() / d as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
            let sigma = (var + eps).sqrt();
            sigmas.push(sigma);
            for j in 0..d {
                normed[[i, j]] = (row[j] - mean) / sigma;
            }
        }
        let value = &normed * &gv + &bv;
        let normed_c = normed;
        self.push_node(
            value,
            vec![x, gain, bias],
            Some(Box::new(move |g: &Mat| {
                let n = g.nrows();
                let df = d as f64;
                let mut dx = Mat::zeros(g.raw_dim());
                let mut dgain = Mat::zeros((1, d));
                let mut dbias = Mat::zeros((1, d));
                for i in 0..n {
                    // d/dxhat, then pull back through mean/variance.
                    let mut sum_dxhat = 0.0;
                    let mut sum_dxhat_xhat = 0.0;
                    for j in 0..d {
                        let dxhat = g[[i, j]] * gv[[0, j]];
                        sum_dxhat += dxhat;
                        sum_dxhat_xhat += dxhat * normed_c[[i, j]];
                        dgain[[0, j]] += g[[i, j]] * normed_c[[i, j]];
                        dbias[[0, j]] += g[[i, j]];
                    }
                    for j in 0..d {
                        let dxhat = g[[i, j]] * gv[[0, j]];
                        dx[[i, j]] = (dxhat - sum_dxhat / df
                            - normed_c[[i, j]] * sum_dxhat_xhat / df)
                            / sigmas[i];
                    }
                }
                vec![dx, dgain, dbias]
            })),
        )
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let n = self.value(parts[0]).nrows();
        let widths: Vec<usize> = parts.iter().map(|&p| self.value(p).ncols()).collect();
        let total: usize = widths.iter().sum();
        let mut value = Mat::zeros((n, total));
        let mut off = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            assert_eq!(self.value(p).nrows(), n, "concat_cols row mismatch");
            value.slice_mut(s![.., off..off + w]).assign(self.value(p));
            off += w;
        }
        self.push_node(
            value,
            parts.to_vec(),
            Some(Box::new(move |g: &Mat| {
                let mut out = Vec::with_capacity(widths.len());
                let mut off = 0;
                for &w in &widths {
                    out.push(g.slice(s![.., off..off + w]).to_owned());
                    off += w;
                }
                out
            })),
        )
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let cols = self.value(parts[0]).ncols();
        let heights: Vec<usize> = parts.iter().map(|&p| self.value(p).nrows()).collect();
        let total: usize = heights.iter().sum();
        let mut value = Mat::zeros((total, cols));
        let mut off = 0;
        for (&p, &h) in parts.iter().zip(&heights) {
            assert_eq!(self.value(p).ncols(), cols, "concat_rows column mismatch");
            value.slice_mut(s![off..off + h, ..]).assign(self.value(p));
            off += h;
        }
        self.push_node(
            value,
            parts.to_vec(),
            Some(Box::new(move |g: &Mat| {
                let mut out = Vec::with_capacity(heights.len());
                let mut off = 0;
                for &h in &heights {
                    out.push(g.slice(s![off..off + h, ..]).to_owned());
                    off += h;
                }
                out
            })),
        )
    }

    pub fn slice_cols(&mut self, a: Var, lo: usize, hi: usize) -> Var {
        let full = self.value(a).ncols();
        let value = self.value(a).slice(s![.., lo..hi]).to_owned();
        let rows = self.value(a).nrows();
        self.push_node(
            value,
            vec![a],
            Some(Box::new(move |g: &Mat| {
                let mut out = Mat::zeros((rows, full));
                out.slice_mut(s![.., lo..hi]).assign(g);
                vec![out]
            })),
        )
    }

    pub fn slice_rows(&mut self, a: Var, lo: usize, hi: usize) -> Var {
        let (rows, cols) = self.shape(a);
        let value = self.value(a).slice(s![lo..hi, ..]).to_owned();
        self.push_node(
            value,
            vec![a],
            Some(Box::new(move |g: &Mat| {
                let mut out = Mat::zeros((rows, cols));
                out.slice_mut(s![lo..hi, ..]).assign(g);
                vec![out]
            })),
        )
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).t().to_owned();
        self.push_node(value, vec![a], Some(Box::new(|g: &Mat| vec![g.t().to_owned()])))
    }

    /// Row-major reshape.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let (r0, c0) = self.shape(a);
        assert_eq!(r0 * c0, rows * cols, "reshape must preserve element count");
        let value = self
            .value(a)
            .clone()
            .into_shape((rows, cols))
            .expect("contiguous reshape");
        self.push_node(
            value,
            vec![a],
            Some(Box::new(move |g: &Mat| {
                vec![g.clone().into_shape((r0, c0)).expect("contiguous reshape")]
            })),
        )
    }

    /// Repeat a 1xW row N times.
    pub fn tile_rows(&mut self, row: Var, n: usize) -> Var {
        let r = self.value(row).clone();
        assert_eq!(r.nrows(), 1);
        let w = r.ncols();
        let mut value = Mat::zeros((n, w));
        for mut out in value.rows_mut() {
            out.assign(&r.row(0));
        }
        self.push_node(
            value,
            vec![row],
            Some(Box::new(|g: &Mat| vec![g.sum_axis(Axis(0)).insert_axis(Axis(0))])),
        )
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let (rows, cols) = self.shape(a);
        let value = Mat::from_elem((1, 1), self.value(a).sum());
        self.push_node(
            value,
            vec![a],
            Some(Box::new(move |g: &Mat| vec![Mat::from_elem((rows, cols), g[[0, 0]])])),
        )
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let (rows, cols) = self.shape(a);
        let count = (rows * cols) as f64;
        let value = Mat::from_elem((1, 1), self.value(a).sum() / count);
        self.push_node(
            value,
            vec![a],
            Some(Box::new(move |g: &Mat| {
                vec![Mat::from_elem((rows, cols), g[[0, 0]] / count)]
            })),
        )
    }

    /// Per-row sum, producing an Nx1 column.
    pub fn row_sums(&mut self, a: Var) -> Var {
        let (rows, cols) = self.shape(a);
        let value = self.value(a).sum_axis(Axis(1)).insert_axis(Axis(1));
        self.push_node(
            value,
            vec![a],
            Some(Box::new(move |g: &Mat| {
                let mut out = Mat::zeros((rows, cols));
                for i in 0..rows {
                    for j in 0..cols {
                        out[[i, j]] = g[[i, 0]];
                    }
                }
                vec![out]
            })),
        )
    }

    /// Elementwise square root with subgradient 0 at 0.
    pub fn sqrt(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::sqrt);
        let y = value.clone();
        self.push_node(
            value,
            vec![a],
            Some(Box::new(move |g: &Mat| {
                let mut out = g.clone();
                out.zip_mut_with(&y, |gv, &yv| {
                    *gv = if yv == 0.0 { 0.0 } else { *gv * 0.5 / yv };
                });
                vec![out]
            })),
        )
    }

    /// 2x2 max pooling with stride 2.
    pub fn maxpool2(&mut self, a: Var) -> Var {
        let x = self.value(a).clone();
        let (rows, cols) = (x.nrows(), x.ncols());
        assert!(rows % 2 == 0 && cols % 2 == 0, "maxpool2 requires even dims");
        let (or, oc) = (rows / 2, cols / 2);
        let mut value = Mat::zeros((or, oc));
        let mut argmax = vec![(0usize, 0usize); or * oc];
        for i in 0..or {
            for j in 0..oc {
                let mut best = f64::NEG_INFINITY;
                let mut pos = (2 * i, 2 * j);
                for di in 0..2 {
                    for dj in 0..2 {
                        let v = x[[2 * i + di, 2 * j + dj]];
                        if v > best {
                            best = v;
                            pos = (2 * i + di, 2 * j + dj);
                        }
                    }
                }
                value[[i, j]] = best;
                argmax[i * oc + j] = pos;
            }
        }
        self.push_node(
            value,
            vec![a],
            Some(Box::new(move |g: &Mat| {
                let mut out = Mat::zeros((rows, cols));
                for i in 0..or {
                    for j in 0..oc {
                        let (pi, pj) = argmax[i * oc + j];
                        out[[pi, pj]] += g[[i, j]];
                    }
                }
                vec![out]
            })),
        )
    }

    /// Row-wise outer products: each 1xW row becomes its WxW outer product,
    /// flattened row-major to 1xW^2.
    pub fn outer_rows(&mut self, a: Var) -> Var {
        let x = self.value(a).clone();
        let (n, w) = (x.nrows(), x.ncols());
        let mut value = Mat::zeros((n, w * w));
        for r in 0..n {
            for i in 0..w {
                for j in 0..w {
                    value[[r, i * w + j]] = x[[r, i]] * x[[r, j]];
                }
            }
        }
        self.push_node(
            value,
            vec![a],
            Some(Box::new(move |g: &Mat| {
                let mut out = Mat::zeros((n, w));
                for r in 0..n {
                    // d/df of f^T f contracted with G is (G + G^T) f.
                    for i in 0..w {
                        let mut acc = 0.0;
                        for j in 0..w {
                            acc += (g[[r, i * w + j]] + g[[r, j * w + i]]) * x[[r, j]];
                        }
                        out[[r, i]] = acc;
                    }
                }
                vec![out]
            })),
        )
    }

    /// Reverse sweep from a 1x1 scalar node.
    pub fn backward(&self, loss: Var) -> Result<Grads> {
        let loss_val = self.value(loss);
        if loss_val.nrows() != 1 || loss_val.ncols() != 1 {
            return Err(Error::shape("backward target must be a 1x1 scalar"));
        }
        let mut grads: Vec<Option<Mat>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Mat::from_elem((1, 1), 1.0));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if let Some(back) = &node.back {
                let contribs = back(&g);
                debug_assert_eq!(contribs.len(), node.parents.len());
                for (p, c) in node.parents.iter().zip(contribs) {
                    match &mut grads[p.0] {
                        Some(acc) => *acc += &c,
                        slot => *slot = Some(c),
                    }
                }
            }
            grads[i] = Some(g);
        }
        Ok(Grads { grads })
    }
}

/// Mean over rows of the Euclidean row norms of `a - b`.
pub fn row_norm_mean(tape: &mut Tape, a: Var, b: Var) -> Var {
    let diff = tape.sub(a, b);
    let sq = tape.mul(diff, diff);
    let sums = tape.row_sums(sq);
    let norms = tape.sqrt(sums);
    tape.mean_all(norms)
}
