use super::kernels::{col2im, im2col, window_extent, AxisTaps, ResampleMode, Scale};
use super::{IndexTensor, Real, Result, Tensor, TensorError};

/// Handle to a tensor recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Var,
        stride: usize,
        padding: usize,
    },
    PixelShuffle {
        input: Var,
        r: usize,
    },
    PixelUnshuffle {
        input: Var,
        r: usize,
    },
    Unfold {
        input: Var,
        k: usize,
        stride: usize,
        padding: usize,
    },
    Fold {
        input: Var,
        k: usize,
        stride: usize,
        padding: usize,
    },
    IndexSelect {
        input: Var,
        indices: IndexTensor,
    },
    Resample {
        input: Var,
        rows: AxisTaps<T>,
        cols: AxisTaps<T>,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulChannelMap(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    Relu(Var),
    ConcatChannels(Var, Var),
    Sum(Var),
    Mean(Var),
    L1Loss(Var, Var),
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    requires_grad: bool,
    grad: Option<Vec<T>>,
    op: Op<T>,
}

/// The tape: every operation is appended in execution order and replayed in
/// reverse by [`Graph::backward`].
#[derive(Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, requires_grad, Op::Leaf)
    }

    /// A leaf that receives gradients.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    fn push(&mut self, value: Tensor<T>, requires_grad: bool, op: Op<T>) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            grad: None,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(TensorError::dim(
                op,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    /// 2-D cross-correlation (no kernel flip) with zero padding.
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var, stride: usize, padding: usize) -> Result<Var> {
        let [bsz, cin, h, w] = self.value(input).dims4("conv2d")?;
        let [cout, wcin, kh, kw] = self.value(weight).dims4("conv2d")?;
        if cin != wcin {
            return Err(TensorError::dim(
                "conv2d",
                format!(
                    "input {:?} has {cin} channels but weight {:?} expects {wcin}",
                    self.shape(input),
                    self.shape(weight)
                ),
            ));
        }
        if kh != kw || kh % 2 == 0 {
            return Err(TensorError::dim("conv2d", format!("kernel must be square and odd, got {kh}x{kw}")));
        }
        if self.shape(bias) != [cout] {
            return Err(TensorError::dim(
                "conv2d",
                format!("bias {:?} does not match {cout} output channels", self.shape(bias)),
            ));
        }
        let k = kh;
        let ho = window_extent("conv2d", h, k, stride, padding)?;
        let wo = window_extent("conv2d", w, k, stride, padding)?;
        let kk = cin * k * k;
        let l = ho * wo;
        let x = self.value(input).data();
        let wt = self.value(weight).data();
        let bs = self.value(bias).data();
        let mut out = vec![T::zero(); bsz * cout * l];
        for b in 0..bsz {
            let cols = im2col(&x[b * cin * h * w..(b + 1) * cin * h * w], cin, h, w, k, stride, padding, ho, wo);
            let ob = &mut out[b * cout * l..(b + 1) * cout * l];
            for (co, row) in ob.chunks_mut(l).enumerate() {
                row.fill(bs[co]);
            }
            T::gemm(cout, kk, l, T::one(), wt, kk as isize, 1, &cols, l as isize, 1, T::one(), ob, l as isize, 1);
        }
        let value = Tensor::new(vec![bsz, cout, ho, wo], out)?;
        let rg = self.any_grad(&[input, weight, bias]);
        Ok(self.push(
            value,
            rg,
            Op::Conv2d {
                input,
                weight,
                bias,
                stride,
                padding,
            },
        ))
    }

    /// `[B, C*r*r, H, W] -> [B, C, r*H, r*W]`.
    pub fn pixel_shuffle(&mut self, input: Var, r: usize) -> Result<Var> {
        let [b, c, h, w] = self.value(input).dims4("pixel_shuffle")?;
        if r == 0 || c % (r * r) != 0 {
            return Err(TensorError::dim(
                "pixel_shuffle",
                format!("{c} channels not divisible by r^2 = {}", r * r),
            ));
        }
        let map = shuffle_map(b, c / (r * r), h, w, r);
        let x = self.value(input).data();
        let out: Vec<T> = map.iter().map(|&src| x[src]).collect();
        let value = Tensor::new(vec![b, c / (r * r), h * r, w * r], out)?;
        let rg = self.any_grad(&[input]);
        Ok(self.push(value, rg, Op::PixelShuffle { input, r }))
    }

    /// Inverse of [`Graph::pixel_shuffle`]: `[B, C, r*H, r*W] -> [B, C*r*r, H, W]`.
    pub fn pixel_unshuffle(&mut self, input: Var, r: usize) -> Result<Var> {
        let [b, c, hh, ww] = self.value(input).dims4("pixel_unshuffle")?;
        if r == 0 || hh % r != 0 || ww % r != 0 {
            return Err(TensorError::dim(
                "pixel_unshuffle",
                format!("spatial {hh}x{ww} not divisible by {r}"),
            ));
        }
        let map = shuffle_map(b, c, hh / r, ww / r, r);
        let x = self.value(input).data();
        let mut out = vec![T::zero(); x.len()];
        for (dst, &src) in map.iter().enumerate() {
            out[src] = x[dst];
        }
        let value = Tensor::new(vec![b, c * r * r, hh / r, ww / r], out)?;
        let rg = self.any_grad(&[input]);
        Ok(self.push(value, rg, Op::PixelUnshuffle { input, r }))
    }

    /// Sliding `k x k` patches: `[B, C, H, W] -> [B, C*k*k, L]`.
    pub fn unfold(&mut self, input: Var, k: usize, stride: usize, padding: usize) -> Result<Var> {
        let [b, c, h, w] = self.value(input).dims4("unfold")?;
        if k.is_multiple_of(2) {
            return Err(TensorError::dim("unfold", format!("patch size {k} must be odd")));
        }
        let ho = window_extent("unfold", h, k, stride, padding)?;
        let wo = window_extent("unfold", w, k, stride, padding)?;
        let x = self.value(input).data();
        let mut out = Vec::with_capacity(b * c * k * k * ho * wo);
        for bi in 0..b {
            out.extend(im2col(&x[bi * c * h * w..(bi + 1) * c * h * w], c, h, w, k, stride, padding, ho, wo));
        }
        let value = Tensor::new(vec![b, c * k * k, ho * wo], out)?;
        let rg = self.any_grad(&[input]);
        Ok(self.push(
            value,
            rg,
            Op::Unfold {
                input,
                k,
                stride,
                padding,
            },
        ))
    }

    /// Adjoint of [`Graph::unfold`]: sums patch columns back onto an `h x w` grid.
    pub fn fold(&mut self, input: Var, h: usize, w: usize, k: usize, stride: usize, padding: usize) -> Result<Var> {
        let shape = self.shape(input).to_vec();
        let [b, d, l] = match shape[..] {
            [b, d, l] => [b, d, l],
            _ => return Err(TensorError::dim("fold", format!("expected [B, D, L], got {shape:?}"))),
        };
        if k.is_multiple_of(2) || d % (k * k) != 0 {
            return Err(TensorError::dim("fold", format!("{d} rows incompatible with patch size {k}")));
        }
        let ho = window_extent("fold", h, k, stride, padding)?;
        let wo = window_extent("fold", w, k, stride, padding)?;
        if ho * wo != l {
            return Err(TensorError::dim(
                "fold",
                format!("{l} columns but a {h}x{w} grid has {} windows", ho * wo),
            ));
        }
        let c = d / (k * k);
        let x = self.value(input).data();
        let mut out = vec![T::zero(); b * c * h * w];
        for bi in 0..b {
            col2im(
                &x[bi * d * l..(bi + 1) * d * l],
                c,
                h,
                w,
                k,
                stride,
                padding,
                ho,
                wo,
                &mut out[bi * c * h * w..(bi + 1) * c * h * w],
            );
        }
        let value = Tensor::new(vec![b, c, h, w], out)?;
        let rg = self.any_grad(&[input]);
        Ok(self.push(
            value,
            rg,
            Op::Fold {
                input,
                k,
                stride,
                padding,
            },
        ))
    }

    /// `out[b, :, i] = patches[b, :, indices[b, i]]`. No gradient reaches the indices.
    pub fn index_select_columns(&mut self, patches: Var, indices: &IndexTensor) -> Result<Var> {
        let shape = self.shape(patches).to_vec();
        let [b, d, l] = match shape[..] {
            [b, d, l] => [b, d, l],
            _ => {
                return Err(TensorError::dim(
                    "index_select_columns",
                    format!("expected [B, D, L], got {shape:?}"),
                ))
            }
        };
        if indices.batch() != b {
            return Err(TensorError::dim(
                "index_select_columns",
                format!("indices batch {} vs patches batch {b}", indices.batch()),
            ));
        }
        for bi in 0..b {
            for (i, &j) in indices.row(bi).iter().enumerate() {
                if j >= l {
                    return Err(TensorError::Bounds {
                        op: "index_select_columns",
                        batch: bi,
                        position: i,
                        value: j,
                        limit: l,
                    });
                }
            }
        }
        let lp = indices.len();
        let x = self.value(patches).data();
        let mut out = vec![T::zero(); b * d * lp];
        for bi in 0..b {
            let idx = indices.row(bi);
            for di in 0..d {
                let src = &x[(bi * d + di) * l..(bi * d + di + 1) * l];
                let dst = &mut out[(bi * d + di) * lp..(bi * d + di + 1) * lp];
                for (o, &j) in dst.iter_mut().zip(idx) {
                    *o = src[j];
                }
            }
        }
        let value = Tensor::new(vec![b, d, lp], out)?;
        let rg = self.any_grad(&[patches]);
        Ok(self.push(
            value,
            rg,
            Op::IndexSelect {
                input: patches,
                indices: indices.clone(),
            },
        ))
    }

    pub fn resample(&mut self, input: Var, scale: Scale, mode: ResampleMode) -> Result<Var> {
        let [b, c, h, w] = self.value(input).dims4("resample")?;
        let ho = scale.apply(h)?;
        let wo = scale.apply(w)?;
        let rows = AxisTaps::<T>::new(h, ho, mode);
        let cols = AxisTaps::<T>::new(w, wo, mode);
        let x = self.value(input).data();
        let mut out = vec![T::zero(); b * c * ho * wo];
        for p in 0..b * c {
            let src = &x[p * h * w..(p + 1) * h * w];
            let dst = &mut out[p * ho * wo..(p + 1) * ho * wo];
            for (oy, &(y0, y1, wy0, wy1)) in rows.taps.iter().enumerate() {
                for (ox, &(x0, x1, wx0, wx1)) in cols.taps.iter().enumerate() {
                    dst[oy * wo + ox] = wy0 * (wx0 * src[y0 * w + x0] + wx1 * src[y0 * w + x1])
                        + wy1 * (wx0 * src[y1 * w + x0] + wx1 * src[y1 * w + x1]);
                }
            }
        }
        let value = Tensor::new(vec![b, c, ho, wo], out)?;
        let rg = self.any_grad(&[input]);
        Ok(self.push(value, rg, Op::Resample { input, rows, cols }))
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Tensor<T> {
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(va.shape().to_vec(), data).expect("shapes checked by caller")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let value = self.zip_with(a, b, |x, y| x + y);
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, rg, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let value = self.zip_with(a, b, |x, y| x - y);
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, rg, Op::Sub(a, b)))
    }

    /// Element-wise product. `b` may also be a `[B, 1, H, W]` map, broadcast
    /// across the channels of a `[B, C, H, W]` operand `a`.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) == self.shape(b) {
            let value = self.zip_with(a, b, |x, y| x * y);
            let rg = self.any_grad(&[a, b]);
            return Ok(self.push(value, rg, Op::Mul(a, b)));
        }
        let [ba, c, h, w] = self.value(a).dims4("mul")?;
        let map_shape = self.value(b).dims4("mul")?;
        if map_shape != [ba, 1, h, w] {
            return Err(TensorError::dim(
                "mul",
                format!("cannot broadcast {:?} over {:?}", self.shape(b), self.shape(a)),
            ));
        }
        let hw = h * w;
        let (x, m) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(x.len());
        for bi in 0..ba {
            let map = &m[bi * hw..(bi + 1) * hw];
            for ci in 0..c {
                let plane = &x[(bi * c + ci) * hw..(bi * c + ci + 1) * hw];
                out.extend(plane.iter().zip(map).map(|(&p, &s)| p * s));
            }
        }
        let value = Tensor::new(vec![ba, c, h, w], out)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, rg, Op::MulChannelMap(a, b)))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let value = self.value(a).map(|x| x * c);
        let rg = self.any_grad(&[a]);
        self.push(value, rg, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: T) -> Var {
        let value = self.value(a).map(|x| x + c);
        let rg = self.any_grad(&[a]);
        self.push(value, rg, Op::AddScalar(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| if x > T::zero() { x } else { T::zero() });
        let rg = self.any_grad(&[a]);
        self.push(value, rg, Op::Relu(a))
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let [ba, ca, h, w] = self.value(a).dims4("concat_channels")?;
        let [bb, cb, hb, wb] = self.value(b).dims4("concat_channels")?;
        if (ba, h, w) != (bb, hb, wb) {
            return Err(TensorError::dim(
                "concat_channels",
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        let hw = h * w;
        let (x, y) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(x.len() + y.len());
        for bi in 0..ba {
            out.extend_from_slice(&x[bi * ca * hw..(bi + 1) * ca * hw]);
            out.extend_from_slice(&y[bi * cb * hw..(bi + 1) * cb * hw]);
        }
        let value = Tensor::new(vec![ba, ca + cb, h, w], out)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, rg, Op::ConcatChannels(a, b)))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().copied().sum();
        let rg = self.any_grad(&[a]);
        self.push(Tensor::scalar(s), rg, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let s: T = v.data().iter().copied().sum();
        let m = s / T::of(v.numel() as f64);
        let rg = self.any_grad(&[a]);
        self.push(Tensor::scalar(m), rg, Op::Mean(a))
    }

    /// Mean absolute error.
    pub fn l1_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        self.same_shape("l1_loss", pred, target)?;
        let (p, t) = (self.value(pred), self.value(target));
        let s: T = p.data().iter().zip(t.data()).map(|(&a, &b)| (a - b).abs()).sum();
        let m = s / T::of(p.numel() as f64);
        let rg = self.any_grad(&[pred, target]);
        Ok(self.push(Tensor::scalar(m), rg, Op::L1Loss(pred, target)))
    }

    /// Replays the tape in reverse from a scalar `loss`, accumulating into
    /// the `grad` of every node that requires one.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(TensorError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        if !self.requires_grad(loss) {
            return Ok(());
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            self.propagate(i, &g, &mut grads);
            let node = &mut self.nodes[i];
            match &mut node.grad {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &b)| *a = *a + b),
                None => node.grad = Some(g),
            }
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let mut send = |v: Var, contribution: Vec<T>| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(acc) => acc.iter_mut().zip(&contribution).for_each(|(a, &b)| *a = *a + b),
                slot @ None => *slot = Some(contribution),
            }
        };
        let out_shape = self.nodes[i].value.shape();
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                weight,
                bias,
                stride,
                padding,
            } => {
                let (stride, padding) = (*stride, *padding);
                let [bsz, cin, h, w] = self.value(*input).dims4("conv2d").expect("recorded");
                let [cout, _, k, _] = self.value(*weight).dims4("conv2d").expect("recorded");
                let (ho, wo) = (out_shape[2], out_shape[3]);
                let (kk, l) = (cin * k * k, ho * wo);
                let x = self.value(*input).data();
                let wt = self.value(*weight).data();
                let need_w = self.requires_grad(*weight);
                let need_x = self.requires_grad(*input);
                let mut dw = vec![T::zero(); if need_w { cout * kk } else { 0 }];
                let mut dx = vec![T::zero(); if need_x { x.len() } else { 0 }];
                let mut dcols = vec![T::zero(); if need_x { kk * l } else { 0 }];
                for b in 0..bsz {
                    let gb = &g[b * cout * l..(b + 1) * cout * l];
                    let xb = &x[b * cin * h * w..(b + 1) * cin * h * w];
                    if need_w {
                        let cols = im2col(xb, cin, h, w, k, stride, padding, ho, wo);
                        T::gemm(cout, l, kk, T::one(), gb, l as isize, 1, &cols, 1, l as isize, T::one(), &mut dw, kk as isize, 1);
                    }
                    if need_x {
                        T::gemm(kk, cout, l, T::one(), wt, 1, kk as isize, gb, l as isize, 1, T::zero(), &mut dcols, l as isize, 1);
                        col2im(
                            &dcols,
                            cin,
                            h,
                            w,
                            k,
                            stride,
                            padding,
                            ho,
                            wo,
                            &mut dx[b * cin * h * w..(b + 1) * cin * h * w],
                        );
                    }
                }
                if self.requires_grad(*bias) {
                    let mut db = vec![T::zero(); cout];
                    for b in 0..bsz {
                        for (co, d) in db.iter_mut().enumerate() {
                            let row = &g[(b * cout + co) * l..(b * cout + co + 1) * l];
                            *d = *d + row.iter().copied().sum();
                        }
                    }
                    send(*bias, db);
                }
                if need_w {
                    send(*weight, dw);
                }
                if need_x {
                    send(*input, dx);
                }
            }
            Op::PixelShuffle { input, r } => {
                let [b, c, h, w] = self.value(*input).dims4("pixel_shuffle").expect("recorded");
                let map = shuffle_map(b, c / (r * r), h, w, *r);
                let mut dx = vec![T::zero(); g.len()];
                for (dst, &src) in map.iter().enumerate() {
                    dx[src] = g[dst];
                }
                send(*input, dx);
            }
            Op::PixelUnshuffle { input, r } => {
                let [b, c, h, w] = out_shape.try_into().expect("4-D");
                let map = shuffle_map(b, c / (r * r), h, w, *r);
                let dx = map.iter().map(|&src| g[src]).collect();
                send(*input, dx);
            }
            Op::Unfold {
                input,
                k,
                stride,
                padding,
            } => {
                let [b, c, h, w] = self.value(*input).dims4("unfold").expect("recorded");
                let ho = window_extent("unfold", h, *k, *stride, *padding).expect("recorded");
                let wo = window_extent("unfold", w, *k, *stride, *padding).expect("recorded");
                let per = c * k * k * ho * wo;
                let mut dx = vec![T::zero(); b * c * h * w];
                for bi in 0..b {
                    col2im(
                        &g[bi * per..(bi + 1) * per],
                        c,
                        h,
                        w,
                        *k,
                        *stride,
                        *padding,
                        ho,
                        wo,
                        &mut dx[bi * c * h * w..(bi + 1) * c * h * w],
                    );
                }
                send(*input, dx);
            }
            Op::Fold {
                input,
                k,
                stride,
                padding,
            } => {
                let [b, c, h, w] = out_shape.try_into().expect("4-D");
                let ho = window_extent("fold", h, *k, *stride, *padding).expect("recorded");
                let wo = window_extent("fold", w, *k, *stride, *padding).expect("recorded");
                let mut dx = Vec::with_capacity(self.value(*input).numel());
                for bi in 0..b {
                    dx.extend(im2col(&g[bi * c * h * w..(bi + 1) * c * h * w], c, h, w, *k, *stride, *padding, ho, wo));
                }
                send(*input, dx);
            }
            Op::IndexSelect { input, indices } => {
                let shape = self.shape(*input);
                let (b, d, l) = (shape[0], shape[1], shape[2]);
                let lp = indices.len();
                let mut dx = vec![T::zero(); b * d * l];
                for bi in 0..b {
                    let idx = indices.row(bi);
                    for di in 0..d {
                        let src = &g[(bi * d + di) * lp..(bi * d + di + 1) * lp];
                        let dst = &mut dx[(bi * d + di) * l..(bi * d + di + 1) * l];
                        for (&gv, &j) in src.iter().zip(idx) {
                            dst[j] = dst[j] + gv;
                        }
                    }
                }
                send(*input, dx);
            }
            Op::Resample { input, rows, cols } => {
                let [b, c, h, w] = self.value(*input).dims4("resample").expect("recorded");
                let (ho, wo) = (rows.taps.len(), cols.taps.len());
                let mut dx = vec![T::zero(); b * c * h * w];
                for p in 0..b * c {
                    let src = &g[p * ho * wo..(p + 1) * ho * wo];
                    let dst = &mut dx[p * h * w..(p + 1) * h * w];
                    for (oy, &(y0, y1, wy0, wy1)) in rows.taps.iter().enumerate() {
                        for (ox, &(x0, x1, wx0, wx1)) in cols.taps.iter().enumerate() {
                            let gv = src[oy * wo + ox];
                            dst[y0 * w + x0] = dst[y0 * w + x0] + wy0 * wx0 * gv;
                            dst[y0 * w + x1] = dst[y0 * w + x1] + wy0 * wx1 * gv;
                            dst[y1 * w + x0] = dst[y1 * w + x0] + wy1 * wx0 * gv;
                            dst[y1 * w + x1] = dst[y1 * w + x1] + wy1 * wx1 * gv;
                        }
                    }
                }
                send(*input, dx);
            }
            Op::Add(a, b) => {
                send(*a, g.to_vec());
                send(*b, g.to_vec());
            }
            Op::Sub(a, b) => {
                send(*a, g.to_vec());
                send(*b, g.iter().map(|&x| -x).collect());
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                send(*a, g.iter().zip(vb).map(|(&x, &y)| x * y).collect());
                send(*b, g.iter().zip(va).map(|(&x, &y)| x * y).collect());
            }
            Op::MulChannelMap(a, m) => {
                let [b, c, h, w] = self.value(*a).dims4("mul").expect("recorded");
                let hw = h * w;
                let (x, map) = (self.value(*a).data(), self.value(*m).data());
                let mut da = Vec::with_capacity(x.len());
                let mut dm = vec![T::zero(); b * hw];
                for bi in 0..b {
                    let mp = &map[bi * hw..(bi + 1) * hw];
                    let dmp = &mut dm[bi * hw..(bi + 1) * hw];
                    for ci in 0..c {
                        let off = (bi * c + ci) * hw;
                        let gp = &g[off..off + hw];
                        let xp = &x[off..off + hw];
                        da.extend(gp.iter().zip(mp).map(|(&gv, &s)| gv * s));
                        for ((d, &gv), &xv) in dmp.iter_mut().zip(gp).zip(xp) {
                            *d = *d + gv * xv;
                        }
                    }
                }
                send(*a, da);
                send(*m, dm);
            }
            Op::Scale(a, c) => send(*a, g.iter().map(|&x| x * *c).collect()),
            Op::AddScalar(a) => send(*a, g.to_vec()),
            Op::Relu(a) => {
                let x = self.value(*a).data();
                send(
                    *a,
                    g.iter()
                        .zip(x)
                        .map(|(&gv, &xv)| if xv > T::zero() { gv } else { T::zero() })
                        .collect(),
                );
            }
            Op::ConcatChannels(a, b) => {
                let [bsz, ca, h, w] = self.value(*a).dims4("concat").expect("recorded");
                let cb = self.shape(*b)[1];
                let hw = h * w;
                let mut da = Vec::with_capacity(bsz * ca * hw);
                let mut db = Vec::with_capacity(bsz * cb * hw);
                for bi in 0..bsz {
                    let off = bi * (ca + cb) * hw;
                    da.extend_from_slice(&g[off..off + ca * hw]);
                    db.extend_from_slice(&g[off + ca * hw..off + (ca + cb) * hw]);
                }
                send(*a, da);
                send(*b, db);
            }
            Op::Sum(a) => send(*a, vec![g[0]; self.value(*a).numel()]),
            Op::Mean(a) => {
                let n = self.value(*a).numel();
                send(*a, vec![g[0] / T::of(n as f64); n]);
            }
            Op::L1Loss(p, t) => {
                let (pv, tv) = (self.value(*p).data(), self.value(*t).data());
                let scale = g[0] / T::of(pv.len() as f64);
                let dp: Vec<T> = pv
                    .iter()
                    .zip(tv)
                    .map(|(&a, &b)| {
                        let d = a - b;
                        if d > T::zero() {
                            scale
                        } else if d < T::zero() {
                            -scale
                        } else {
                            T::zero()
                        }
                    })
                    .collect();
                if self.requires_grad(*t) {
                    send(*t, dp.iter().map(|&x| -x).collect());
                }
                send(*p, dp);
            }
        }
    }
}

/// For each flat index of the shuffled `[b, c, r*h, r*w]` tensor, the flat
/// index of its source in `[b, c*r*r, h, w]`.
fn shuffle_map(b: usize, c: usize, h: usize, w: usize, r: usize) -> Vec<usize> {
    let (hh, ww) = (h * r, w * r);
    let mut map = Vec::with_capacity(b * c * hh * ww);
    for bi in 0..b {
        for ci in 0..c {
            for y in 0..hh {
                let (i, di) = (y / r, y % r);
                for x in 0..ww {
                    let (j, dj) = (x / r, x % r);
                    let src_c = ci * r * r + di * r + dj;
                    map.push(((bi * c * r * r + src_c) * h + i) * w + j);
                }
            }
        }
    }
    map
}
