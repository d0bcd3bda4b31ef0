use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::rc::Rc;

use rand::Rng;

use super::data::strides;
use super::graph::{check_finite, Var};
use super::{Tensor, TensorError};

/// Splits `shape` around `axis` into (outer, len, inner) extents.
fn axis_extents(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn check_axis(op: &'static str, shape: &[usize], axis: usize) -> Result<(), TensorError> {
    if axis >= shape.len() {
        return Err(TensorError::InvalidAxis {
            op,
            axis,
            shape: shape.to_vec(),
        });
    }
    Ok(())
}

fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>, TensorError> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => {
                return Err(TensorError::ShapeMismatch {
                    op,
                    lhs: a.to_vec(),
                    rhs: b.to_vec(),
                })
            }
        };
    }
    Ok(out)
}

/// How an input is read when broadcast to the output shape.
enum Broadcast {
    Same,
    /// Input equals a trailing block of the output; index with `i % len`.
    Suffix(usize),
    Offsets(Rc<Vec<usize>>),
}

impl Broadcast {
    fn plan(out: &[usize], input: &[usize]) -> Broadcast {
        let numel: usize = input.iter().product();
        if out == input {
            return Broadcast::Same;
        }
        let trimmed: Vec<usize> = {
            let first = input.iter().position(|&d| d != 1).unwrap_or(input.len());
            input[first..].to_vec()
        };
        if out.ends_with(&trimmed) {
            return Broadcast::Suffix(numel);
        }
        let rank = out.len();
        let mut in_strides = vec![0; rank];
        let s = strides(input);
        for k in 0..input.len() {
            let axis = rank - input.len() + k;
            if input[k] != 1 {
                in_strides[axis] = s[k];
            }
        }
        let offsets = odometer_offsets(out, &in_strides);
        Broadcast::Offsets(Rc::new(offsets))
    }

    #[inline]
    fn index(&self, i: usize) -> usize {
        match self {
            Broadcast::Same => i,
            Broadcast::Suffix(n) => i % n,
            Broadcast::Offsets(o) => o[i],
        }
    }

    /// Sums an output-shaped gradient back onto the input shape.
    fn reduce(&self, grad: &[f64], numel: usize) -> Vec<f64> {
        match self {
            Broadcast::Same => grad.to_vec(),
            Broadcast::Suffix(n) => {
                let mut out = vec![0.0; *n];
                for chunk in grad.chunks(*n) {
                    out.iter_mut().zip(chunk).for_each(|(o, g)| *o += g);
                }
                out
            }
            Broadcast::Offsets(o) => {
                let mut out = vec![0.0; numel];
                for (g, &k) in grad.iter().zip(o.iter()) {
                    out[k] += g;
                }
                out
            }
        }
    }
}

fn binary(op: &'static str, a: &Var, b: &Var, mul: bool) -> Result<Var, TensorError> {
    check_finite(op, &[a, b])?;
    let out_shape = broadcast_shape(op, a.shape(), b.shape())?;
    let pa = Rc::new(Broadcast::plan(&out_shape, a.shape()));
    let pb = Rc::new(Broadcast::plan(&out_shape, b.shape()));
    let total: usize = out_shape.iter().product();
    let (ad, bd) = (a.data(), b.data());
    let data: Vec<f64> = match (&*pa, &*pb, mul) {
        (Broadcast::Same, Broadcast::Same, false) => ad.iter().zip(bd).map(|(x, y)| x + y).collect(),
        (Broadcast::Same, Broadcast::Same, true) => ad.iter().zip(bd).map(|(x, y)| x * y).collect(),
        _ => (0..total)
            .map(|i| {
                let (x, y) = (ad[pa.index(i)], bd[pb.index(i)]);
                if mul {
                    x * y
                } else {
                    x + y
                }
            })
            .collect(),
    };
    let (na, nb) = (a.numel(), b.numel());
    Ok(Var::from_op(
        Tensor::from_parts(out_shape, data),
        &[a, b],
        Box::new(move |parents, g| {
            let (a, b) = (&parents[0], &parents[1]);
            if !mul {
                return vec![
                    a.requires_grad().then(|| pa.reduce(g, na)),
                    b.requires_grad().then(|| pb.reduce(g, nb)),
                ];
            }
            let ga = a.requires_grad().then(|| {
                let bd = b.data();
                let prod: Vec<f64> = g.iter().enumerate().map(|(i, gi)| gi * bd[pb.index(i)]).collect();
                pa.reduce(&prod, na)
            });
            let gb = b.requires_grad().then(|| {
                let ad = a.data();
                let prod: Vec<f64> = g.iter().enumerate().map(|(i, gi)| gi * ad[pa.index(i)]).collect();
                pb.reduce(&prod, nb)
            });
            vec![ga, gb]
        }),
    ))
}

/// `c = a·b (+ c)`, where `a` is logically m×k and `b` is k×n. The `_t`
/// flags mark operands stored transposed.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the strides above address exactly the m×k, k×n and m×n
    // regions whose lengths are checked by the debug assertion.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

impl Var {
    pub fn add(&self, other: &Var) -> Result<Var, TensorError> {
        binary("add", self, other, false)
    }

    pub fn mul(&self, other: &Var) -> Result<Var, TensorError> {
        binary("mul", self, other, true)
    }

    pub fn sub(&self, other: &Var) -> Result<Var, TensorError> {
        self.add(&other.scale(-1.0))
    }

    pub fn scale(&self, c: f64) -> Var {
        let data = self.data().iter().map(|x| x * c).collect();
        Var::from_op(
            Tensor::from_parts(self.shape().to_vec(), data),
            &[self],
            Box::new(move |_, g| vec![Some(g.iter().map(|x| x * c).collect())]),
        )
    }

    /// Matrix product over the last two axes. The right operand is either a
    /// 2-D matrix shared by every leading index of `self`, or has the same
    /// batch dimensions as `self`.
    pub fn matmul(&self, rhs: &Var) -> Result<Var, TensorError> {
        check_finite("matmul", &[self, rhs])?;
        let (ls, rs) = (self.shape(), rhs.shape());
        let mismatch = || TensorError::ShapeMismatch {
            op: "matmul",
            lhs: ls.to_vec(),
            rhs: rs.to_vec(),
        };
        if ls.len() < 2 || rs.len() < 2 {
            return Err(mismatch());
        }
        let k = ls[ls.len() - 1];
        let m = ls[ls.len() - 2];
        let n = rs[rs.len() - 1];
        if rs[rs.len() - 2] != k {
            return Err(mismatch());
        }
        let mut out_shape = ls[..ls.len() - 1].to_vec();
        out_shape.push(n);
        if rs.len() == 2 {
            let rows = self.numel() / k;
            let mut out = vec![0.0; rows * n];
            gemm(rows, k, n, self.data(), false, rhs.data(), false, &mut out, false);
            return Ok(Var::from_op(
                Tensor::from_parts(out_shape, out),
                &[self, rhs],
                Box::new(move |p, g| {
                    let (a, b) = (&p[0], &p[1]);
                    let ga = a.requires_grad().then(|| {
                        let mut ga = vec![0.0; rows * k];
                        gemm(rows, n, k, g, false, b.data(), true, &mut ga, false);
                        ga
                    });
                    let gb = b.requires_grad().then(|| {
                        let mut gb = vec![0.0; k * n];
                        gemm(k, rows, n, a.data(), true, g, false, &mut gb, false);
                        gb
                    });
                    vec![ga, gb]
                }),
            ));
        }
        if ls.len() != rs.len() || ls[..ls.len() - 2] != rs[..rs.len() - 2] {
            return Err(mismatch());
        }
        let batch: usize = ls[..ls.len() - 2].iter().product();
        let mut out = vec![0.0; batch * m * n];
        let (ad, bd) = (self.data(), rhs.data());
        for i in 0..batch {
            gemm(
                m,
                k,
                n,
                &ad[i * m * k..],
                false,
                &bd[i * k * n..],
                false,
                &mut out[i * m * n..(i + 1) * m * n],
                false,
            );
        }
        Ok(Var::from_op(
            Tensor::from_parts(out_shape, out),
            &[self, rhs],
            Box::new(move |p, g| {
                let (a, b) = (&p[0], &p[1]);
                let ga = a.requires_grad().then(|| {
                    let mut ga = vec![0.0; batch * m * k];
                    for i in 0..batch {
                        gemm(
                            m,
                            n,
                            k,
                            &g[i * m * n..],
                            false,
                            &b.data()[i * k * n..],
                            true,
                            &mut ga[i * m * k..(i + 1) * m * k],
                            false,
                        );
                    }
                    ga
                });
                let gb = b.requires_grad().then(|| {
                    let mut gb = vec![0.0; batch * k * n];
                    for i in 0..batch {
                        gemm(
                            k,
                            m,
                            n,
                            &a.data()[i * m * k..],
                            true,
                            &g[i * m * n..],
                            false,
                            &mut gb[i * k * n..(i + 1) * k * n],
                            false,
                        );
                    }
                    gb
                });
                vec![ga, gb]
            }),
        ))
    }

    pub fn softmax(&self, axis: usize) -> Result<Var, TensorError> {
        check_axis("softmax", self.shape(), axis)?;
        check_finite("softmax", &[self])?;
        let (outer, len, inner) = axis_extents(self.shape(), axis);
        let x = self.data();
        let mut y = vec![0.0; x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                let max = (0..len).map(|j| x[base + j * inner]).fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for j in 0..len {
                    let e = (x[base + j * inner] - max).exp();
                    y[base + j * inner] = e;
                    sum += e;
                }
                for j in 0..len {
                    y[base + j * inner] /= sum;
                }
            }
        }
        let out = Tensor::from_parts(self.shape().to_vec(), y);
        let saved = Rc::new(out.data().to_vec());
        Ok(Var::from_op(
            out,
            &[self],
            Box::new(move |_, g| {
                let y = &saved;
                let mut gx = vec![0.0; y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let base = o * len * inner + i;
                        let dot: f64 = (0..len).map(|j| g[base + j * inner] * y[base + j * inner]).sum();
                        for j in 0..len {
                            let idx = base + j * inner;
                            gx[idx] = y[idx] * (g[idx] - dot);
                        }
                    }
                }
                vec![Some(gx)]
            }),
        ))
    }

    /// Normalizes over the last axis, then applies `gamma` and `beta`.
    pub fn layer_norm(&self, gamma: &Var, beta: &Var, eps: f64) -> Result<Var, TensorError> {
        check_finite("layer_norm", &[self, gamma, beta])?;
        let d = *self.shape().last().expect("tensor rank >= 1");
        if gamma.shape() != [d] || beta.shape() != [d] {
            return Err(TensorError::ShapeMismatch {
                op: "layer_norm",
                lhs: self.shape().to_vec(),
                rhs: gamma.shape().to_vec(),
            });
        }
        let rows = self.numel() / d;
        let x = self.data();
        let (gm, bt) = (gamma.data(), beta.data());
        let mut xhat = vec![0.0; x.len()];
        let mut inv_std = vec![0.0; rows];
        let mut y = vec![0.0; x.len()];
        for r in 0..rows {
            let row = &x[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for j in 0..d {
                let h = (row[j] - mean) * is;
                xhat[r * d + j] = h;
                y[r * d + j] = h * gm[j] + bt[j];
            }
        }
        let xhat = Rc::new(xhat);
        Ok(Var::from_op(
            Tensor::from_parts(self.shape().to_vec(), y),
            &[self, gamma, beta],
            Box::new(move |p, g| {
                let gm = p[1].data();
                let gx = p[0].requires_grad().then(|| {
                    let mut gx = vec![0.0; g.len()];
                    for r in 0..rows {
                        let (mut m1, mut m2) = (0.0, 0.0);
                        for j in 0..d {
                            let dh = g[r * d + j] * gm[j];
                            m1 += dh;
                            m2 += dh * xhat[r * d + j];
                        }
                        m1 /= d as f64;
                        m2 /= d as f64;
                        for j in 0..d {
                            let dh = g[r * d + j] * gm[j];
                            gx[r * d + j] = inv_std[r] * (dh - m1 - xhat[r * d + j] * m2);
                        }
                    }
                    gx
                });
                let (mut gg, mut gb) = (vec![0.0; d], vec![0.0; d]);
                for r in 0..rows {
                    for j in 0..d {
                        gg[j] += g[r * d + j] * xhat[r * d + j];
                        gb[j] += g[r * d + j];
                    }
                }
                vec![gx, Some(gg), Some(gb)]
            }),
        ))
    }

    /// Exact (erf-based) GELU.
    pub fn gelu(&self) -> Result<Var, TensorError> {
        check_finite("gelu", &[self])?;
        let y = self
            .data()
            .iter()
            .map(|&x| 0.5 * x * (1.0 + libm::erf(x * FRAC_1_SQRT_2)))
            .collect();
        Ok(Var::from_op(
            Tensor::from_parts(self.shape().to_vec(), y),
            &[self],
            Box::new(|p, g| {
                let norm = 1.0 / (2.0 * PI).sqrt();
                let gx = p[0]
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&x, gi)| {
                        let cdf = 0.5 * (1.0 + libm::erf(x * FRAC_1_SQRT_2));
                        let pdf = norm * (-0.5 * x * x).exp();
                        gi * (cdf + x * pdf)
                    })
                    .collect();
                vec![Some(gx)]
            }),
        ))
    }

    /// Inverted dropout: zeroes each element with probability `p` and
    /// rescales survivors by `1/(1-p)`.
    pub fn dropout<R: Rng + ?Sized>(&self, p: f64, rng: &mut R) -> Result<Var, TensorError> {
        if !(0.0..1.0).contains(&p) {
            return Err(TensorError::InvalidArgument {
                op: "dropout",
                reason: format!("rate {p} outside [0, 1)"),
            });
        }
        if p == 0.0 {
            return Ok(self.clone());
        }
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..self.numel())
            .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
            .collect();
        let y = self.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
        Ok(Var::from_op(
            Tensor::from_parts(self.shape().to_vec(), y),
            &[self],
            Box::new(move |_, g| vec![Some(g.iter().zip(&mask).map(|(x, m)| x * m).collect())]),
        ))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var, TensorError> {
        if shape.iter().product::<usize>() != self.numel() {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                lhs: self.shape().to_vec(),
                rhs: shape.to_vec(),
            });
        }
        Ok(Var::from_op(
            Tensor::from_parts(shape.to_vec(), self.data().to_vec()),
            &[self],
            Box::new(|_, g| vec![Some(g.to_vec())]),
        ))
    }

    /// Reorders axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(&self, axes: &[usize]) -> Result<Var, TensorError> {
        let shape = self.shape();
        let rank = shape.len();
        let mut seen = vec![false; rank];
        if axes.len() != rank || axes.iter().any(|&a| a >= rank || std::mem::replace(&mut seen[a], true)) {
            return Err(TensorError::InvalidArgument {
                op: "permute",
                reason: format!("axes {axes:?} are not a permutation for shape {shape:?}"),
            });
        }
        let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
        let in_strides = strides(shape);
        let src_strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
        let index = Rc::new(odometer_offsets(&out_shape, &src_strides));
        let out = gather_values(self.data(), &index);
        Ok(gather_node(self, Tensor::from_parts(out_shape, out), index))
    }

    pub fn transpose(&self, a: usize, b: usize) -> Result<Var, TensorError> {
        let mut axes: Vec<usize> = (0..self.shape().len()).collect();
        if a >= axes.len() || b >= axes.len() {
            return Err(TensorError::InvalidAxis {
                op: "transpose",
                axis: a.max(b),
                shape: self.shape().to_vec(),
            });
        }
        axes.swap(a, b);
        self.permute(&axes)
    }

    /// Reads `out[i] = self[index[i]]`; gradients scatter-add back.
    pub fn gather(&self, index: Rc<Vec<usize>>, shape: &[usize]) -> Result<Var, TensorError> {
        if shape.iter().product::<usize>() != index.len() {
            return Err(TensorError::ShapeMismatch {
                op: "gather",
                lhs: vec![index.len()],
                rhs: shape.to_vec(),
            });
        }
        if let Some(&bad) = index.iter().find(|&&i| i >= self.numel()) {
            return Err(TensorError::InvalidArgument {
                op: "gather",
                reason: format!("index {bad} out of range for {} elements", self.numel()),
            });
        }
        let out = gather_values(self.data(), &index);
        Ok(gather_node(self, Tensor::from_parts(shape.to_vec(), out), index))
    }

    pub fn slice(&self, axis: usize, start: usize, end: usize) -> Result<Var, TensorError> {
        check_axis("slice", self.shape(), axis)?;
        let (outer, len, inner) = axis_extents(self.shape(), axis);
        if start >= end || end > len {
            return Err(TensorError::InvalidArgument {
                op: "slice",
                reason: format!("range {start}..{end} invalid for axis of length {len}"),
            });
        }
        let width = end - start;
        let mut index = Vec::with_capacity(outer * width * inner);
        for o in 0..outer {
            let base = o * len * inner + start * inner;
            index.extend(base..base + width * inner);
        }
        let mut shape = self.shape().to_vec();
        shape[axis] = width;
        self.gather(Rc::new(index), &shape)
    }

    pub fn concat(items: &[&Var], axis: usize) -> Result<Var, TensorError> {
        let first = items.first().ok_or(TensorError::InvalidArgument {
            op: "concat",
            reason: "nothing to concatenate".into(),
        })?;
        check_axis("concat", first.shape(), axis)?;
        for it in items {
            let ok = it.shape().len() == first.shape().len()
                && it
                    .shape()
                    .iter()
                    .zip(first.shape())
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    lhs: first.shape().to_vec(),
                    rhs: it.shape().to_vec(),
                });
            }
        }
        let (outer, _, inner) = axis_extents(first.shape(), axis);
        let lens: Vec<usize> = items.iter().map(|v| v.shape()[axis]).collect();
        let total_len: usize = lens.iter().sum();
        let mut data = Vec::with_capacity(outer * total_len * inner);
        for o in 0..outer {
            for (it, &l) in items.iter().zip(&lens) {
                data.extend_from_slice(&it.data()[o * l * inner..(o + 1) * l * inner]);
            }
        }
        let mut shape = first.shape().to_vec();
        shape[axis] = total_len;
        let parents: Vec<&Var> = items.to_vec();
        Ok(Var::from_op(
            Tensor::from_parts(shape, data),
            &parents,
            Box::new(move |p, g| {
                let mut grads: Vec<Option<Vec<f64>>> = p
                    .iter()
                    .zip(&lens)
                    .map(|(v, &l)| v.requires_grad().then(|| Vec::with_capacity(outer * l * inner)))
                    .collect();
                let mut pos = 0;
                for _ in 0..outer {
                    for (gv, &l) in grads.iter_mut().zip(&lens) {
                        if let Some(gv) = gv {
                            gv.extend_from_slice(&g[pos..pos + l * inner]);
                        }
                        pos += l * inner;
                    }
                }
                grads
            }),
        ))
    }

    /// Mean over one axis, which is removed from the shape.
    pub fn mean(&self, axis: usize) -> Result<Var, TensorError> {
        check_axis("mean", self.shape(), axis)?;
        let (outer, len, inner) = axis_extents(self.shape(), axis);
        let x = self.data();
        let mut y = vec![0.0; outer * inner];
        for o in 0..outer {
            for j in 0..len {
                let row = &x[(o * len + j) * inner..(o * len + j + 1) * inner];
                y[o * inner..(o + 1) * inner].iter_mut().zip(row).for_each(|(a, b)| *a += b);
            }
        }
        let scale = 1.0 / len as f64;
        y.iter_mut().for_each(|v| *v *= scale);
        let mut shape = self.shape().to_vec();
        shape.remove(axis);
        if shape.is_empty() {
            shape.push(1);
        }
        Ok(Var::from_op(
            Tensor::from_parts(shape, y),
            &[self],
            Box::new(move |_, g| {
                let mut gx = vec![0.0; outer * len * inner];
                for o in 0..outer {
                    for j in 0..len {
                        let dst = &mut gx[(o * len + j) * inner..(o * len + j + 1) * inner];
                        dst.iter_mut()
                            .zip(&g[o * inner..(o + 1) * inner])
                            .for_each(|(d, gi)| *d = gi * scale);
                    }
                }
                vec![Some(gx)]
            }),
        ))
    }

    pub fn sum_all(&self) -> Var {
        let s = self.data().iter().sum();
        let n = self.numel();
        Var::from_op(
            Tensor::scalar(s),
            &[self],
            Box::new(move |_, g| vec![Some(vec![g[0]; n])]),
        )
    }

    pub fn mean_all(&self) -> Var {
        self.sum_all().scale(1.0 / self.numel() as f64)
    }
}

fn gather_values(src: &[f64], index: &[usize]) -> Vec<f64> {
    index.iter().map(|&i| src[i]).collect()
}

fn gather_node(input: &Var, out: Tensor, index: Rc<Vec<usize>>) -> Var {
    let n = input.numel();
    Var::from_op(
        out,
        &[input],
        Box::new(move |_, g| {
            let mut gx = vec![0.0; n];
            for (gi, &i) in g.iter().zip(index.iter()) {
                gx[i] += gi;
            }
            vec![Some(gx)]
        }),
    )
}

/// Source offsets for walking `shape` in row-major order with the given
/// per-axis source strides.
pub(crate) fn odometer_offsets(shape: &[usize], src_strides: &[usize]) -> Vec<usize> {
    let total: usize = shape.iter().product();
    let rank = shape.len();
    let mut out = Vec::with_capacity(total);
    let mut idx = vec![0usize; rank];
    let mut off = 0usize;
    for _ in 0..total {
        out.push(off);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            off += src_strides[ax];
            if idx[ax] < shape[ax] {
                break;
            }
            off -= src_strides[ax] * shape[ax];
            idx[ax] = 0;
        }
    }
    out
}
