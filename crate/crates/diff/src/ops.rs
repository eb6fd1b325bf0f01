//! Differentiable primitives recorded on a [`Tape`].

use crate::array::{broadcast_indices, broadcast_shape, numel, strides, Array};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};

/// Dense kernels shared by forward and backward passes.
pub mod kernels {
    use crate::scalar::Scalar;

    /// out[m,n] = a[m,k] · b[k,n]
    pub fn mm<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
        let mut out = vec![T::zero(); m * n];
        T::gemm(m, k, n, a, (k as isize, 1), b, (n as isize, 1), &mut out);
        out
    }

    /// out[m,n] = a[m,k] · b[n,k]ᵀ
    pub fn mm_nt<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
        let mut out = vec![T::zero(); m * n];
        T::gemm(m, k, n, a, (k as isize, 1), b, (1, k as isize), &mut out);
        out
    }

    /// out[m,n] = a[k,m]ᵀ · b[k,n]
    pub fn mm_tn<T: Scalar>(a: &[T], b: &[T], k: usize, m: usize, n: usize) -> Vec<T> {
        let mut out = vec![T::zero(); m * n];
        T::gemm(m, k, n, a, (1, m as isize), b, (n as isize, 1), &mut out);
        out
    }
}

fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn softplus<T: Scalar>(x: T) -> T {
    // log(1 + e^x) without overflow
    x.max(T::zero()) + (-(x.abs())).exp().ln_1p()
}

pub fn sigmoid_scalar<T: Scalar>(x: T) -> T {
    sigmoid(x)
}

pub fn softplus_scalar<T: Scalar>(x: T) -> T {
    softplus(x)
}

impl<T: Scalar> Tape<T> {
    fn unary<F, D>(&self, op: &'static str, x: Var, f: F, df: D) -> Var
    where
        F: Fn(T) -> T,
        D: Fn(T, T) -> T + 'static,
    {
        let out = self.value(x).map(f);
        let n = out.len() as u64;
        self.custom(op, &[x], out, 4 * n, move |a| {
            let xs = a.inputs[0].data();
            let ys = a.output.data();
            let g = a.grad.data();
            let data = (0..g.len()).map(|i| g[i] * df(xs[i], ys[i])).collect();
            vec![Some(Array::new(a.grad.shape().to_vec(), data))]
        })
    }

    fn binary<F, DA, DB>(&self, op: &'static str, a: Var, b: Var, f: F, da: DA, db: DB) -> Var
    where
        F: Fn(T, T) -> T,
        DA: Fn(T, T, T) -> T + 'static,
        DB: Fn(T, T, T) -> T + 'static,
    {
        let (out, ia, ib) = {
            let av = self.value(a);
            let bv = self.value(b);
            let shape = broadcast_shape(av.shape(), bv.shape()).unwrap_or_else(|| {
                panic!("{op}: cannot broadcast {:?} with {:?}", av.shape(), bv.shape())
            });
            let ia = broadcast_indices(av.shape(), &shape);
            let ib = broadcast_indices(bv.shape(), &shape);
            let (ad, bd) = (av.data(), bv.data());
            let data = ia.iter().zip(&ib).map(|(&i, &j)| f(ad[i], bd[j])).collect();
            (Array::new(shape, data), ia, ib)
        };
        let n = out.len() as u64;
        self.custom(op, &[a, b], out, n, move |args| {
            let (av, bv) = (args.inputs[0], args.inputs[1]);
            let (ad, bd) = (av.data(), bv.data());
            let g = args.grad.data();
            let ga = args.needs[0].then(|| {
                let mut acc = vec![T::zero(); av.len()];
                for k in 0..g.len() {
                    acc[ia[k]] += da(ad[ia[k]], bd[ib[k]], g[k]);
                }
                Array::new(av.shape().to_vec(), acc)
            });
            let gb = args.needs[1].then(|| {
                let mut acc = vec![T::zero(); bv.len()];
                for k in 0..g.len() {
                    acc[ib[k]] += db(ad[ia[k]], bd[ib[k]], g[k]);
                }
                Array::new(bv.shape().to_vec(), acc)
            });
            vec![ga, gb]
        })
    }

    pub fn add(&self, a: Var, b: Var) -> Var {
        self.binary("add", a, b, |x, y| x + y, |_, _, g| g, |_, _, g| g)
    }

    pub fn sub(&self, a: Var, b: Var) -> Var {
        self.binary("sub", a, b, |x, y| x - y, |_, _, g| g, |_, _, g| -g)
    }

    pub fn mul(&self, a: Var, b: Var) -> Var {
        self.binary("mul", a, b, |x, y| x * y, |_, y, g| g * y, |x, _, g| g * x)
    }

    pub fn div(&self, a: Var, b: Var) -> Var {
        self.binary(
            "div",
            a,
            b,
            |x, y| x / y,
            |_, y, g| g / y,
            |x, y, g| -g * x / (y * y),
        )
    }

    pub fn add_scalar(&self, x: Var, s: T) -> Var {
        self.unary("add_scalar", x, move |v| v + s, |_, _| T::one())
    }

    pub fn mul_scalar(&self, x: Var, s: T) -> Var {
        self.unary("mul_scalar", x, move |v| v * s, move |_, _| s)
    }

    pub fn neg(&self, x: Var) -> Var {
        self.mul_scalar(x, -T::one())
    }

    pub fn exp(&self, x: Var) -> Var {
        self.unary("exp", x, |v| v.exp(), |_, y| y)
    }

    pub fn ln(&self, x: Var) -> Var {
        self.unary("ln", x, |v| v.ln(), |x, _| T::one() / x)
    }

    pub fn sqrt(&self, x: Var) -> Var {
        self.unary("sqrt", x, |v| v.sqrt(), |_, y| T::lit(0.5) / y)
    }

    pub fn square(&self, x: Var) -> Var {
        self.unary("square", x, |v| v * v, |x, _| T::lit(2.0) * x)
    }

    pub fn recip(&self, x: Var) -> Var {
        self.unary("recip", x, |v| T::one() / v, |_, y| -y * y)
    }

    pub fn sigmoid(&self, x: Var) -> Var {
        self.unary("sigmoid", x, sigmoid, |_, y| y * (T::one() - y))
    }

    pub fn softplus(&self, x: Var) -> Var {
        self.unary("softplus", x, softplus, |x, _| sigmoid(x))
    }

    pub fn tanh(&self, x: Var) -> Var {
        self.unary("tanh", x, |v| v.tanh(), |_, y| T::one() - y * y)
    }

    /// x · sigmoid(x)
    pub fn silu(&self, x: Var) -> Var {
        self.unary(
            "silu",
            x,
            |v| v * sigmoid(v),
            |x, _| {
                let s = sigmoid(x);
                s * (T::one() + x * (T::one() - s))
            },
        )
    }

    pub fn relu(&self, x: Var) -> Var {
        self.unary(
            "relu",
            x,
            |v| v.max(T::zero()),
            |x, _| if x > T::zero() { T::one() } else { T::zero() },
        )
    }

    /// Clamp with zero gradient outside `[lo, hi]`.
    pub fn clamp(&self, x: Var, lo: T, hi: T) -> Var {
        self.unary(
            "clamp",
            x,
            move |v| v.max(lo).min(hi),
            move |x, _| {
                if x >= lo && x <= hi {
                    T::one()
                } else {
                    T::zero()
                }
            },
        )
    }

    pub fn sum(&self, x: Var) -> Var {
        let (out, shape) = {
            let v = self.value(x);
            (Array::scalar(v.sum()), v.shape().to_vec())
        };
        let n = numel(&shape) as u64;
        self.custom("sum", &[x], out, n, move |a| {
            vec![Some(Array::full(&shape, a.grad.item()))]
        })
    }

    pub fn mean(&self, x: Var) -> Var {
        let n = self.value(x).len().max(1);
        let s = self.sum(x);
        self.mul_scalar(s, T::one() / T::lit(n as f64))
    }

    /// Sums over `axis`, removing it.
    pub fn sum_axis(&self, x: Var, axis: usize) -> Var {
        let (out, in_shape) = {
            let v = self.value(x);
            let shape = v.shape().to_vec();
            assert!(axis < shape.len(), "sum_axis: axis {axis} of {shape:?}");
            let outer: usize = shape[..axis].iter().product();
            let len = shape[axis];
            let inner: usize = shape[axis + 1..].iter().product();
            let d = v.data();
            let mut o = vec![T::zero(); outer * inner];
            for a in 0..outer {
                for l in 0..len {
                    let base = (a * len + l) * inner;
                    for i in 0..inner {
                        o[a * inner + i] += d[base + i];
                    }
                }
            }
            let mut out_shape = shape.clone();
            out_shape.remove(axis);
            (Array::new(out_shape, o), shape)
        };
        let n = numel(&in_shape) as u64;
        self.custom("sum_axis", &[x], out, n, move |a| {
            let outer: usize = in_shape[..axis].iter().product();
            let len = in_shape[axis];
            let inner: usize = in_shape[axis + 1..].iter().product();
            let g = a.grad.data();
            let mut gx = vec![T::zero(); numel(&in_shape)];
            for o in 0..outer {
                for l in 0..len {
                    let base = (o * len + l) * inner;
                    gx[base..base + inner].copy_from_slice(&g[o * inner..(o + 1) * inner]);
                }
            }
            vec![Some(Array::new(in_shape.clone(), gx))]
        })
    }

    /// Matrix product of `a: [.., k]` (rows flattened) with `b: [k, n]`.
    pub fn matmul(&self, a: Var, b: Var) -> Var {
        let (out, m, k, n) = {
            let av = self.value(a);
            let bv = self.value(b);
            assert_eq!(bv.ndim(), 2, "matmul: rhs must be 2-D, got {:?}", bv.shape());
            let k = bv.shape()[0];
            let n = bv.shape()[1];
            assert_eq!(
                av.shape().last().copied(),
                Some(k),
                "matmul: {:?} x {:?}",
                av.shape(),
                bv.shape()
            );
            let m = av.len() / k.max(1);
            let mut shape = av.shape().to_vec();
            *shape.last_mut().unwrap() = n;
            let data = kernels::mm(av.data(), bv.data(), m, k, n);
            (Array::new(shape, data), m, k, n)
        };
        self.custom("matmul", &[a, b], out, (2 * m * k * n) as u64, move |args| {
            let (av, bv) = (args.inputs[0], args.inputs[1]);
            let g = args.grad.data();
            let ga = args.needs[0]
                .then(|| Array::new(av.shape().to_vec(), kernels::mm_nt(g, bv.data(), m, n, k)));
            let gb = args.needs[1]
                .then(|| Array::new(bv.shape().to_vec(), kernels::mm_tn(av.data(), g, m, k, n)));
            vec![ga, gb]
        })
    }

    /// Batched product `a: [B, m, k]` with `b: [B, k, n]`, or `b: [B, n, k]`
    /// when `transpose_b`.
    pub fn bmm(&self, a: Var, b: Var, transpose_b: bool) -> Var {
        let (out, bs, m, k, n) = {
            let av = self.value(a);
            let bv = self.value(b);
            assert!(av.ndim() == 3 && bv.ndim() == 3, "bmm needs 3-D operands");
            let (bs, m, k) = (av.shape()[0], av.shape()[1], av.shape()[2]);
            assert_eq!(bv.shape()[0], bs, "bmm batch");
            let n = if transpose_b {
                assert_eq!(bv.shape()[2], k, "bmm inner");
                bv.shape()[1]
            } else {
                assert_eq!(bv.shape()[1], k, "bmm inner");
                bv.shape()[2]
            };
            let mut data = Vec::with_capacity(bs * m * n);
            for i in 0..bs {
                let ad = &av.data()[i * m * k..(i + 1) * m * k];
                let bd = &bv.data()[i * k * n..(i + 1) * k * n];
                if transpose_b {
                    data.extend(kernels::mm_nt(ad, bd, m, k, n));
                } else {
                    data.extend(kernels::mm(ad, bd, m, k, n));
                }
            }
            (Array::new(vec![bs, m, n], data), bs, m, k, n)
        };
        self.custom("bmm", &[a, b], out, (2 * bs * m * k * n) as u64, move |args| {
            let (av, bv) = (args.inputs[0], args.inputs[1]);
            let g = args.grad.data();
            let mut ga = args.needs[0].then(|| Vec::with_capacity(bs * m * k));
            let mut gb = args.needs[1].then(|| Vec::with_capacity(bs * k * n));
            for i in 0..bs {
                let ad = &av.data()[i * m * k..(i + 1) * m * k];
                let bd = &bv.data()[i * k * n..(i + 1) * k * n];
                let gd = &g[i * m * n..(i + 1) * m * n];
                if let Some(ga) = ga.as_mut() {
                    if transpose_b {
                        // a·bᵀ: da = g · b
                        ga.extend(kernels::mm(gd, bd, m, n, k));
                    } else {
                        ga.extend(kernels::mm_nt(gd, bd, m, n, k));
                    }
                }
                if let Some(gb) = gb.as_mut() {
                    if transpose_b {
                        // db[n,k] = gᵀ · a
                        gb.extend(kernels::mm_tn(gd, ad, m, n, k));
                    } else {
                        gb.extend(kernels::mm_tn(ad, gd, m, k, n));
                    }
                }
            }
            vec![
                ga.map(|d| Array::new(av.shape().to_vec(), d)),
                gb.map(|d| Array::new(bv.shape().to_vec(), d)),
            ]
        })
    }

    /// Softmax over the last axis.
    pub fn softmax(&self, x: Var) -> Var {
        let out = {
            let v = self.value(x);
            let w = *v.shape().last().expect("softmax of a scalar");
            let mut data = v.data().to_vec();
            for row in data.chunks_mut(w) {
                let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
                let mut s = T::zero();
                for e in row.iter_mut() {
                    *e = (*e - mx).exp();
                    s += *e;
                }
                for e in row.iter_mut() {
                    *e /= s;
                }
            }
            Array::new(v.shape().to_vec(), data)
        };
        let n = out.len() as u64;
        self.custom("softmax", &[x], out, 5 * n, |a| {
            let w = *a.output.shape().last().unwrap();
            let y = a.output.data();
            let g = a.grad.data();
            let mut gx = vec![T::zero(); y.len()];
            for r in 0..y.len() / w {
                let ys = &y[r * w..(r + 1) * w];
                let gs = &g[r * w..(r + 1) * w];
                let dot: T = ys.iter().zip(gs).map(|(&a, &b)| a * b).sum();
                for j in 0..w {
                    gx[r * w + j] = ys[j] * (gs[j] - dot);
                }
            }
            vec![Some(Array::new(a.output.shape().to_vec(), gx))]
        })
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(&self, x: Var) -> Var {
        let out = {
            let v = self.value(x);
            let w = *v.shape().last().expect("log_softmax of a scalar");
            let mut data = v.data().to_vec();
            for row in data.chunks_mut(w) {
                let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
                let lse = mx + row.iter().map(|&e| (e - mx).exp()).sum::<T>().ln();
                for e in row.iter_mut() {
                    *e -= lse;
                }
            }
            Array::new(v.shape().to_vec(), data)
        };
        let n = out.len() as u64;
        self.custom("log_softmax", &[x], out, 5 * n, |a| {
            let w = *a.output.shape().last().unwrap();
            let y = a.output.data();
            let g = a.grad.data();
            let mut gx = vec![T::zero(); y.len()];
            for r in 0..y.len() / w {
                let gs = &g[r * w..(r + 1) * w];
                let gsum: T = gs.iter().copied().sum();
                for j in 0..w {
                    gx[r * w + j] = gs[j] - y[r * w + j].exp() * gsum;
                }
            }
            vec![Some(Array::new(a.output.shape().to_vec(), gx))]
        })
    }

    /// Normalization over the last axis to zero mean and unit variance.
    pub fn layer_norm(&self, x: Var, eps: T) -> Var {
        let (out, inv_std) = {
            let v = self.value(x);
            let w = *v.shape().last().expect("layer_norm of a scalar");
            let wt = T::lit(w as f64);
            let mut data = v.data().to_vec();
            let mut inv = Vec::with_capacity(data.len() / w);
            for row in data.chunks_mut(w) {
                let mean = row.iter().copied().sum::<T>() / wt;
                let var = row.iter().map(|&e| (e - mean) * (e - mean)).sum::<T>() / wt;
                let is = T::one() / (var + eps).sqrt();
                for e in row.iter_mut() {
                    *e = (*e - mean) * is;
                }
                inv.push(is);
            }
            (Array::new(v.shape().to_vec(), data), inv)
        };
        let n = out.len() as u64;
        self.custom("layer_norm", &[x], out, 8 * n, move |a| {
            let w = *a.output.shape().last().unwrap();
            let wt = T::lit(w as f64);
            let y = a.output.data();
            let g = a.grad.data();
            let mut gx = vec![T::zero(); y.len()];
            for r in 0..y.len() / w {
                let ys = &y[r * w..(r + 1) * w];
                let gs = &g[r * w..(r + 1) * w];
                let gm = gs.iter().copied().sum::<T>() / wt;
                let gym = ys.iter().zip(gs).map(|(&a, &b)| a * b).sum::<T>() / wt;
                for j in 0..w {
                    gx[r * w + j] = inv_std[r] * (gs[j] - gm - ys[j] * gym);
                }
            }
            vec![Some(Array::new(a.output.shape().to_vec(), gx))]
        })
    }

    pub fn reshape(&self, x: Var, shape: &[usize]) -> Var {
        let (out, in_shape) = {
            let v = self.value(x);
            assert_eq!(
                numel(shape),
                v.len(),
                "reshape {:?} -> {:?}",
                v.shape(),
                shape
            );
            (Array::new(shape.to_vec(), v.data().to_vec()), v.shape().to_vec())
        };
        self.custom("reshape", &[x], out, 0, move |a| {
            vec![Some(Array::new(in_shape.clone(), a.grad.data().to_vec()))]
        })
    }

    /// Reorders axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(&self, x: Var, axes: &[usize]) -> Var {
        let (out, map) = {
            let v = self.value(x);
            let shape = v.shape();
            assert_eq!(axes.len(), shape.len(), "permute rank");
            let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
            let in_strides = strides(shape);
            let perm_strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
            let n = v.len();
            let mut map = Vec::with_capacity(n);
            let mut idx = vec![0usize; out_shape.len()];
            let mut off = 0usize;
            for _ in 0..n {
                map.push(off);
                for d in (0..out_shape.len()).rev() {
                    idx[d] += 1;
                    off += perm_strides[d];
                    if idx[d] < out_shape[d] {
                        break;
                    }
                    off -= perm_strides[d] * out_shape[d];
                    idx[d] = 0;
                }
            }
            let d = v.data();
            let data = map.iter().map(|&i| d[i]).collect();
            (Array::new(out_shape, data), map)
        };
        self.custom("permute", &[x], out, 0, move |a| {
            let g = a.grad.data();
            let mut gx = vec![T::zero(); g.len()];
            for (k, &i) in map.iter().enumerate() {
                gx[i] = g[k];
            }
            vec![Some(Array::new(a.inputs[0].shape().to_vec(), gx))]
        })
    }

    pub fn transpose(&self, x: Var) -> Var {
        self.permute(x, &[1, 0])
    }

    /// Concatenation along `axis`.
    pub fn concat(&self, xs: &[Var], axis: usize) -> Var {
        assert!(!xs.is_empty(), "concat of nothing");
        let (out, lens, outer, inner) = {
            let vals: Vec<_> = xs.iter().map(|&v| self.value(v)).collect();
            let base = vals[0].shape().to_vec();
            let outer: usize = base[..axis].iter().product();
            let inner: usize = base[axis + 1..].iter().product();
            let mut lens = Vec::new();
            for v in &vals {
                let s = v.shape();
                assert!(
                    s.len() == base.len() && s[..axis] == base[..axis] && s[axis + 1..] == base[axis + 1..],
                    "concat: {:?} vs {:?}",
                    s,
                    base
                );
                lens.push(s[axis]);
            }
            let total: usize = lens.iter().sum();
            let mut data = Vec::with_capacity(outer * total * inner);
            for o in 0..outer {
                for (v, &l) in vals.iter().zip(&lens) {
                    data.extend_from_slice(&v.data()[o * l * inner..(o + 1) * l * inner]);
                }
            }
            let mut shape = base.clone();
            shape[axis] = total;
            (Array::new(shape, data), lens, outer, inner)
        };
        self.custom("concat", xs, out, 0, move |a| {
            let total: usize = lens.iter().sum();
            let g = a.grad.data();
            let mut parts: Vec<Vec<T>> = lens.iter().map(|&l| Vec::with_capacity(outer * l * inner)).collect();
            for o in 0..outer {
                let mut off = o * total * inner;
                for (p, &l) in parts.iter_mut().zip(&lens) {
                    p.extend_from_slice(&g[off..off + l * inner]);
                    off += l * inner;
                }
            }
            parts
                .into_iter()
                .zip(a.inputs)
                .map(|(p, inp)| Some(Array::new(inp.shape().to_vec(), p)))
                .collect()
        })
    }

    /// Sub-range `[start, end)` of `axis`.
    pub fn slice(&self, x: Var, axis: usize, start: usize, end: usize) -> Var {
        let (out, in_shape) = {
            let v = self.value(x);
            let shape = v.shape().to_vec();
            assert!(start <= end && end <= shape[axis], "slice {start}..{end} of {shape:?}");
            let outer: usize = shape[..axis].iter().product();
            let len = shape[axis];
            let inner: usize = shape[axis + 1..].iter().product();
            let mut data = Vec::with_capacity(outer * (end - start) * inner);
            for o in 0..outer {
                data.extend_from_slice(&v.data()[(o * len + start) * inner..(o * len + end) * inner]);
            }
            let mut out_shape = shape.clone();
            out_shape[axis] = end - start;
            (Array::new(out_shape, data), shape)
        };
        self.custom("slice", &[x], out, 0, move |a| {
            let outer: usize = in_shape[..axis].iter().product();
            let len = in_shape[axis];
            let inner: usize = in_shape[axis + 1..].iter().product();
            let w = (end - start) * inner;
            let g = a.grad.data();
            let mut gx = vec![T::zero(); numel(&in_shape)];
            for o in 0..outer {
                gx[(o * len + start) * inner..(o * len + end) * inner]
                    .copy_from_slice(&g[o * w..(o + 1) * w]);
            }
            vec![Some(Array::new(in_shape.clone(), gx))]
        })
    }

    /// Column `j` of a 2-D array as a 1-D array.
    pub fn col(&self, x: Var, j: usize) -> Var {
        let s = self.slice(x, 1, j, j + 1);
        let n = self.shape(x)[0];
        self.reshape(s, &[n])
    }

    /// Stacks 1-D arrays of equal length as columns of a 2-D array.
    pub fn stack_cols(&self, cols: &[Var]) -> Var {
        let n = self.shape(cols[0])[0];
        let c: Vec<Var> = cols.iter().map(|&v| self.reshape(v, &[n, 1])).collect();
        self.concat(&c, 1)
    }

    /// Rows of `x` (axis 0) picked by `index`.
    pub fn gather_rows(&self, x: Var, index: &[usize]) -> Var {
        let (out, in_shape) = {
            let v = self.value(x);
            let shape = v.shape().to_vec();
            let inner: usize = shape[1..].iter().product();
            let mut data = Vec::with_capacity(index.len() * inner);
            for &i in index {
                data.extend_from_slice(&v.data()[i * inner..(i + 1) * inner]);
            }
            let mut out_shape = shape.clone();
            out_shape[0] = index.len();
            (Array::new(out_shape, data), shape)
        };
        let index = index.to_vec();
        self.custom("gather_rows", &[x], out, 0, move |a| {
            let inner: usize = in_shape[1..].iter().product();
            let g = a.grad.data();
            let mut gx = vec![T::zero(); numel(&in_shape)];
            for (k, &i) in index.iter().enumerate() {
                for j in 0..inner {
                    gx[i * inner + j] += g[k * inner + j];
                }
            }
            vec![Some(Array::new(in_shape.clone(), gx))]
        })
    }

    pub fn broadcast_to(&self, x: Var, shape: &[usize]) -> Var {
        let (out, map) = {
            let v = self.value(x);
            let target = broadcast_shape(v.shape(), shape)
                .filter(|s| s == shape)
                .unwrap_or_else(|| panic!("broadcast_to {:?} -> {:?}", v.shape(), shape));
            let map = broadcast_indices(v.shape(), &target);
            let d = v.data();
            let data = map.iter().map(|&i| d[i]).collect();
            (Array::new(target, data), map)
        };
        self.custom("broadcast_to", &[x], out, 0, move |a| {
            let g = a.grad.data();
            let mut gx = vec![T::zero(); a.inputs[0].len()];
            for (k, &i) in map.iter().enumerate() {
                gx[i] += g[k];
            }
            vec![Some(Array::new(a.inputs[0].shape().to_vec(), gx))]
        })
    }

    /// `x · W + b` for `x: [.., in]`, `W: [in, out]`, `b: [out]`.
    pub fn linear(&self, x: Var, w: Var, b: Option<Var>) -> Var {
        let y = self.matmul(x, w);
        match b {
            Some(b) => self.add(y, b),
            None => y,
        }
    }
}
