//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Tape`] records a computation graph node by node; creation order is a
//! topological order, so the backward pass is a single reverse sweep with
//! gradient accumulation. Each node stores its parents and a backward rule
//! mapping the output gradient to one gradient per parent.

use std::cell::RefCell;

use crate::error::{Error, Result};
use crate::tensor::{self, Tensor};

/// Context handed to a backward rule.
pub struct BackCtx<'a> {
    /// Gradient of the loss w.r.t. this node's value.
    pub grad: &'a Tensor,
    /// The node's forward value.
    pub out: &'a Tensor,
    /// Forward values of the parents, in parent order.
    pub parents: Vec<&'a Tensor>,
}

type BackwardFn = Box<dyn Fn(&BackCtx) -> Vec<Tensor>>;

struct Node {
    value: Tensor,
    parents: Vec<usize>,
    backward: Option<BackwardFn>,
}

/// Records one computation graph. Values are immutable once pushed.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a node on a tape.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

/// Per-node gradients produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    pub fn get(&self, v: Var<'_>) -> Option<&Tensor> {
        self.grads.get(v.id).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, with unreachable nodes reported as zeros.
    pub fn get_or_zeros(&self, v: Var<'_>) -> Tensor {
        match self.grads.get(v.id).and_then(|g| g.clone()) {
            Some(g) => g,
            None => Tensor::zeros(&self.shapes[v.id]),
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, parents: Vec<usize>, backward: Option<BackwardFn>) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node {
            value,
            parents,
            backward,
        });
        Var { tape: self, id }
    }

    /// Insert a leaf (input or parameter). Leaves have no backward rule.
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push(value, vec![], None)
    }

    /// Reverse sweep from a scalar root; returns per-node gradients.
    pub fn backward(&self, root: Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let root_val = &nodes[root.id].value;
        if !root_val.is_scalar() {
            return Err(Error::Contract(format!(
                "backward root must be scalar, got shape {:?}",
                root_val.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..nodes.len()).map(|_| None).collect();
        grads[root.id] = Some(Tensor::filled(root_val.shape(), 1.0));

        for id in (0..=root.id).rev() {
            let g = match grads[id].take() {
                Some(g) => g,
                None => continue,
            };
            let node = &nodes[id];
            if let Some(bwd) = &node.backward {
                let parent_vals: Vec<&Tensor> =
                    node.parents.iter().map(|&p| &nodes[p].value).collect();
                let ctx = BackCtx {
                    grad: &g,
                    out: &node.value,
                    parents: parent_vals,
                };
                let pgrads = bwd(&ctx);
                debug_assert_eq!(pgrads.len(), node.parents.len());
                for (&pid, pg) in node.parents.iter().zip(pgrads.into_iter()) {
                    debug_assert_eq!(pg.shape(), nodes[pid].value.shape());
                    match &mut grads[pid] {
                        Some(acc) => acc.add_assign(&pg)?,
                        slot @ None => *slot = Some(pg),
                    }
                }
            }
            grads[id] = Some(g);
        }

        let shapes = nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }
}

impl<'t> Var<'t> {
    pub fn value(&self) -> Tensor {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    /// Insert a constant leaf on this var's tape.
    pub fn tape_leaf(&self, value: Tensor) -> Var<'t> {
        self.tape.leaf(value)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    /// Run `f` against the node's value without cloning it.
    pub fn with_value<R>(&self, f: impl FnOnce(&Tensor) -> R) -> R {
        f(&self.tape.nodes.borrow()[self.id].value)
    }

    fn binary(
        &self,
        other: Var<'t>,
        value: Tensor,
        backward: BackwardFn,
    ) -> Var<'t> {
        self.tape
            .push(value, vec![self.id, other.id], Some(backward))
    }

    fn unary(&self, value: Tensor, backward: BackwardFn) -> Var<'t> {
        self.tape.push(value, vec![self.id], Some(backward))
    }

    pub fn matmul(&self, other: Var<'t>) -> Result<Var<'t>> {
        let out = self.with_value(|a| other.with_value(|b| tensor::matmul(a, b)))?;
        Ok(self.binary(
            other,
            out,
            Box::new(|ctx| {
                let da = tensor::matmul_nt(ctx.grad, ctx.parents[1]).expect("matmul da");
                let db = tensor::matmul_tn(ctx.parents[0], ctx.grad).expect("matmul db");
                vec![da, db]
            }),
        ))
    }

    pub fn add(&self, other: Var<'t>) -> Result<Var<'t>> {
        let out = self.with_value(|a| {
            other.with_value(|b| -> Result<Tensor> {
                if a.shape() != b.shape() {
                    return Err(Error::Dimension(format!(
                        "add {:?} vs {:?}",
                        a.shape(),
                        b.shape()
                    )));
                }
                let mut o = a.clone();
                o.add_assign(b)?;
                Ok(o)
            })
        })?;
        Ok(self.binary(
            other,
            out,
            Box::new(|ctx| vec![ctx.grad.clone(), ctx.grad.clone()]),
        ))
    }

    pub fn sub(&self, other: Var<'t>) -> Result<Var<'t>> {
        let out = self.with_value(|a| {
            other.with_value(|b| {
                if a.shape() != b.shape() {
                    return Err(Error::Dimension(format!(
                        "sub {:?} vs {:?}",
                        a.shape(),
                        b.shape()
                    )));
                }
                let data = a
                    .data()
                    .iter()
                    .zip(b.data().iter())
                    .map(|(x, y)| x - y)
                    .collect();
                Tensor::new(a.shape().to_vec(), data)
            })
        })?;
        Ok(self.binary(
            other,
            out,
            Box::new(|ctx| {
                let neg = ctx.grad.map(|v| -v);
                vec![ctx.grad.clone(), neg]
            }),
        ))
    }

    /// Elementwise product.
    pub fn mul(&self, other: Var<'t>) -> Result<Var<'t>> {
        let out = self.with_value(|a| {
            other.with_value(|b| {
                if a.shape() != b.shape() {
                    return Err(Error::Dimension(format!(
                        "mul {:?} vs {:?}",
                        a.shape(),
                        b.shape()
                    )));
                }
                let data = a
                    .data()
                    .iter()
                    .zip(b.data().iter())
                    .map(|(x, y)| x * y)
                    .collect();
                Tensor::new(a.shape().to_vec(), data)
            })
        })?;
        Ok(self.binary(
            other,
            out,
            Box::new(|ctx| {
                let da = elementwise(ctx.grad, ctx.parents[1], |g, b| g * b);
                let db = elementwise(ctx.grad, ctx.parents[0], |g, a| g * a);
                vec![da, db]
            }),
        ))
    }

    pub fn scale(&self, s: f64) -> Var<'t> {
        let out = self.with_value(|a| a.map(|v| v * s));
        self.unary(out, Box::new(move |ctx| vec![ctx.grad.map(|g| g * s)]))
    }

    pub fn relu(&self) -> Var<'t> {
        let out = self.with_value(|a| a.map(|v| v.max(0.0)));
        self.unary(
            out,
            Box::new(|ctx| {
                vec![elementwise(ctx.grad, ctx.parents[0], |g, x| {
                    if x > 0.0 {
                        g
                    } else {
                        0.0
                    }
                })]
            }),
        )
    }

    /// Broadcast-add a length-C row vector to every row of an N x C tensor.
    pub fn add_row(&self, row: Var<'t>) -> Result<Var<'t>> {
        let out = self.with_value(|a| {
            row.with_value(|b| -> Result<Tensor> {
                check_row_broadcast(a, b, "add_row")?;
                let c = a.cols();
                let mut o = a.clone();
                for r in 0..a.rows() {
                    for j in 0..c {
                        o.data_mut()[r * c + j] += b.data()[j];
                    }
                }
                Ok(o)
            })
        })?;
        Ok(self.binary(
            row,
            out,
            Box::new(|ctx| {
                let db = column_sums(ctx.grad, ctx.parents[1].shape());
                vec![ctx.grad.clone(), db]
            }),
        ))
    }

    /// Broadcast-multiply every row of an N x C tensor by a length-C row vector.
    pub fn mul_row(&self, row: Var<'t>) -> Result<Var<'t>> {
        let out = self.with_value(|a| {
            row.with_value(|b| -> Result<Tensor> {
                check_row_broadcast(a, b, "mul_row")?;
                let c = a.cols();
                let mut o = a.clone();
                for r in 0..a.rows() {
                    for j in 0..c {
                        o.data_mut()[r * c + j] *= b.data()[j];
                    }
                }
                Ok(o)
            })
        })?;
        Ok(self.binary(
            row,
            out,
            Box::new(|ctx| {
                let a = ctx.parents[0];
                let b = ctx.parents[1];
                let c = a.cols();
                let mut da = ctx.grad.clone();
                for r in 0..a.rows() {
                    for j in 0..c {
                        da.data_mut()[r * c + j] *= b.data()[j];
                    }
                }
                let mut db = Tensor::zeros(b.shape());
                for r in 0..a.rows() {
                    for j in 0..c {
                        db.data_mut()[j] += ctx.grad.data()[r * c + j] * a.data()[r * c + j];
                    }
                }
                vec![da, db]
            }),
        ))
    }

    /// Concatenate two tensors with equal row counts along columns.
    pub fn concat_cols(&self, other: Var<'t>) -> Result<Var<'t>> {
        let out = self.with_value(|a| {
            other.with_value(|b| {
                if a.rows() != b.rows() || a.shape().len() != 2 || b.shape().len() != 2 {
                    return Err(Error::Dimension(format!(
                        "concat_cols {:?} vs {:?}",
                        a.shape(),
                        b.shape()
                    )));
                }
                let (n, ca, cb) = (a.rows(), a.cols(), b.cols());
                let mut data = Vec::with_capacity(n * (ca + cb));
                for r in 0..n {
                    data.extend_from_slice(a.row(r));
                    data.extend_from_slice(b.row(r));
                }
                Tensor::new(vec![n, ca + cb], data)
            })
        })?;
        Ok(self.binary(
            other,
            out,
            Box::new(|ctx| {
                let (ca, cb) = (ctx.parents[0].cols(), ctx.parents[1].cols());
                let n = ctx.parents[0].rows();
                let mut da = Tensor::zeros(ctx.parents[0].shape());
                let mut db = Tensor::zeros(ctx.parents[1].shape());
                for r in 0..n {
                    let grow = ctx.grad.row(r);
                    da.data_mut()[r * ca..(r + 1) * ca].copy_from_slice(&grow[..ca]);
                    db.data_mut()[r * cb..(r + 1) * cb].copy_from_slice(&grow[ca..ca + cb]);
                }
                vec![da, db]
            }),
        ))
    }

    /// Split columns at `at`, returning (left, right).
    pub fn split_cols(&self, at: usize) -> Result<(Var<'t>, Var<'t>)> {
        let (left_val, right_val) = self.with_value(|a| {
            if a.shape().len() != 2 || at == 0 || at >= a.cols() {
                return Err(Error::Dimension(format!(
                    "split_cols at {at} of shape {:?}",
                    a.shape()
                )));
            }
            let (n, c) = (a.rows(), a.cols());
            let mut l = Vec::with_capacity(n * at);
            let mut r = Vec::with_capacity(n * (c - at));
            for row in 0..n {
                let full = a.row(row);
                l.extend_from_slice(&full[..at]);
                r.extend_from_slice(&full[at..]);
            }
            Ok((
                Tensor::new(vec![n, at], l)?,
                Tensor::new(vec![n, c - at], r)?,
            ))
        })?;
        let left = self.unary(
            left_val,
            Box::new(move |ctx| {
                let full = ctx.parents[0];
                let (n, c) = (full.rows(), full.cols());
                let mut da = Tensor::zeros(full.shape());
                for row in 0..n {
                    da.data_mut()[row * c..row * c + at]
                        .copy_from_slice(ctx.grad.row(row));
                }
                vec![da]
            }),
        );
        let right = self.unary(
            right_val,
            Box::new(move |ctx| {
                let full = ctx.parents[0];
                let (n, c) = (full.rows(), full.cols());
                let mut da = Tensor::zeros(full.shape());
                for row in 0..n {
                    da.data_mut()[row * c + at..(row + 1) * c]
                        .copy_from_slice(ctx.grad.row(row));
                }
                vec![da]
            }),
        );
        Ok((left, right))
    }

    /// Gather rows by index; duplicates allowed. Backward scatter-adds.
    pub fn gather_rows(&self, indices: &[usize]) -> Result<Var<'t>> {
        let idx: Vec<usize> = indices.to_vec();
        let out = self.with_value(|a| {
            if a.shape().len() != 2 {
                return Err(Error::Dimension("gather_rows wants 2-D".into()));
            }
            if let Some(&bad) = idx.iter().find(|&&i| i >= a.rows()) {
                return Err(Error::Input(format!(
                    "gather index {bad} out of {} rows",
                    a.rows()
                )));
            }
            let c = a.cols();
            let mut data = Vec::with_capacity(idx.len() * c);
            for &i in &idx {
                data.extend_from_slice(a.row(i));
            }
            Tensor::new(vec![idx.len(), c], data)
        })?;
        Ok(self.unary(
            out,
            Box::new(move |ctx| {
                let src = ctx.parents[0];
                let c = src.cols();
                let mut da = Tensor::zeros(src.shape());
                for (r, &i) in idx.iter().enumerate() {
                    let grow = ctx.grad.row(r);
                    let drow = &mut da.data_mut()[i * c..(i + 1) * c];
                    for (d, g) in drow.iter_mut().zip(grow.iter()) {
                        *d += g;
                    }
                }
                vec![da]
            }),
        ))
    }

    pub fn transpose(&self) -> Result<Var<'t>> {
        let out = self.with_value(tensor::transpose)?;
        Ok(self.unary(
            out,
            Box::new(|ctx| vec![tensor::transpose(ctx.grad).expect("transpose grad")]),
        ))
    }

    pub fn reshape(&self, shape: Vec<usize>) -> Result<Var<'t>> {
        let out = self.with_value(|a| a.reshaped(shape))?;
        Ok(self.unary(
            out,
            Box::new(|ctx| {
                vec![ctx
                    .grad
                    .reshaped(ctx.parents[0].shape().to_vec())
                    .expect("reshape grad")]
            }),
        ))
    }

    /// Sum of all entries, as a scalar.
    pub fn sum_all(&self) -> Var<'t> {
        let out = self.with_value(|a| Tensor::scalar(a.data().iter().sum()));
        self.unary(
            out,
            Box::new(|ctx| {
                let g = ctx.grad.scalar_value();
                vec![Tensor::filled(ctx.parents[0].shape(), g)]
            }),
        )
    }

    /// Column-wise max over rows with first-row tie break.
    /// Returns the 1 x C values node plus the argmax row per channel.
    /// Gradient flows only to the argmax rows.
    pub fn global_max_pool(&self) -> Result<(Var<'t>, Vec<usize>)> {
        let (out, argmax) = self.with_value(|a| {
            if a.shape().len() != 2 || a.rows() == 0 {
                return Err(Error::Input(format!(
                    "global_max_pool wants non-empty 2-D input, got {:?}",
                    a.shape()
                )));
            }
            Ok(column_max(a, 0, a.rows()))
        })?;
        let am = argmax.clone();
        let var = self.unary(
            out,
            Box::new(move |ctx| {
                let src = ctx.parents[0];
                let c = src.cols();
                let mut da = Tensor::zeros(src.shape());
                for (j, &r) in am.iter().enumerate() {
                    da.data_mut()[r * c + j] += ctx.grad.data()[j];
                }
                vec![da]
            }),
        );
        Ok((var, argmax))
    }

    /// Max over consecutive groups of `group` rows: (N*group) x C -> N x C.
    pub fn group_max(&self, group: usize) -> Result<Var<'t>> {
        let (out, argmax) = self.with_value(|a| {
            if a.shape().len() != 2 || group == 0 || a.rows() % group != 0 {
                return Err(Error::Dimension(format!(
                    "group_max of {:?} by {group}",
                    a.shape()
                )));
            }
            let n = a.rows() / group;
            let c = a.cols();
            let mut vals = Vec::with_capacity(n * c);
            let mut args = Vec::with_capacity(n * c);
            for g in 0..n {
                let (v, am) = column_max(a, g * group, group);
                vals.extend_from_slice(v.data());
                args.extend_from_slice(&am);
            }
            Ok((Tensor::new(vec![n, c], vals)?, args))
        })?;
        Ok(self.unary(
            out,
            Box::new(move |ctx| {
                let src = ctx.parents[0];
                let c = src.cols();
                let mut da = Tensor::zeros(src.shape());
                for (flat, &r) in argmax.iter().enumerate() {
                    let j = flat % c;
                    da.data_mut()[r * c + j] += ctx.grad.data()[flat];
                }
                vec![da]
            }),
        ))
    }

    /// Class-weighted mean softmax cross-entropy over a batch of logit rows.
    /// Numerically stabilized by per-row max subtraction.
    pub fn softmax_cross_entropy(
        &self,
        labels: &[usize],
        class_weights: &[f64],
    ) -> Result<Var<'t>> {
        let labels = labels.to_vec();
        let weights = class_weights.to_vec();
        let (out, probs, wsum) = self.with_value(|a| {
            if a.shape().len() != 2 {
                return Err(Error::Dimension("logits must be 2-D".into()));
            }
            if a.rows() != labels.len() {
                return Err(Error::Dimension(format!(
                    "{} logit rows vs {} labels",
                    a.rows(),
                    labels.len()
                )));
            }
            if !a.all_finite() {
                return Err(Error::Numeric("non-finite logits".into()));
            }
            let c = a.cols();
            if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
                return Err(Error::Input(format!("label {bad} out of {c} classes")));
            }
            if weights.len() != c {
                return Err(Error::Dimension(format!(
                    "{} class weights for {c} classes",
                    weights.len()
                )));
            }
            let mut probs = Tensor::zeros(a.shape());
            let mut loss = 0.0;
            let mut wsum = 0.0;
            for r in 0..a.rows() {
                let row = a.row(r);
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = row.iter().map(|&v| (v - m).exp()).collect();
                let z: f64 = exps.iter().sum();
                for (j, e) in exps.iter().enumerate() {
                    probs.set(r, j, e / z);
                }
                let w = weights[labels[r]];
                loss += w * (z.ln() - (row[labels[r]] - m));
                wsum += w;
            }
            Ok((Tensor::scalar(loss / wsum), probs, wsum))
        })?;
        Ok(self.unary(
            out,
            Box::new(move |ctx| {
                let g = ctx.grad.scalar_value();
                let c = probs.cols();
                let mut da = probs.clone();
                for (r, &label) in labels.iter().enumerate() {
                    let w = weights[label] / wsum;
                    for j in 0..c {
                        let p = da.at(r, j);
                        let y = if j == label { 1.0 } else { 0.0 };
                        da.set(r, j, g * w * (p - y));
                    }
                }
                vec![da]
            }),
        ))
    }

    /// Batch normalization over rows (training mode, biased variance).
    /// Returns the normalized output and the batch statistics for running
    /// updates. `gamma` and `beta` are 1 x C.
    pub fn batch_norm_train(
        &self,
        gamma: Var<'t>,
        beta: Var<'t>,
        eps: f64,
    ) -> Result<(Var<'t>, BatchStats)> {
        let (out, mean, var) = self.with_value(|x| {
            gamma.with_value(|gm| {
                beta.with_value(|bt| -> Result<(Tensor, Vec<f64>, Vec<f64>)> {
                    check_row_broadcast(x, gm, "batch_norm gamma")?;
                    check_row_broadcast(x, bt, "batch_norm beta")?;
                    let (n, c) = (x.rows(), x.cols());
                    // Batch statistics use exactly rounded sums, so the
                    // layer output is exactly invariant under row
                    // permutations of the input.
                    let mut mean = vec![ExactSum::new(); c];
                    let mut var = vec![ExactSum::new(); c];
                    for r in 0..n {
                        for (acc, &v) in mean.iter_mut().zip(x.row(r)) {
                            acc.add(v);
                        }
                    }
                    let mean: Vec<f64> =
                        mean.into_iter().map(|a| a.value() / n as f64).collect();
                    for r in 0..n {
                        for (j, &v) in x.row(r).iter().enumerate() {
                            let d = v - mean[j];
                            var[j].add(d * d);
                        }
                    }
                    let var: Vec<f64> =
                        var.into_iter().map(|a| a.value() / n as f64).collect();
                    let mut out = Tensor::zeros(x.shape());
                    for r in 0..n {
                        for j in 0..c {
                            let xhat = (x.at(r, j) - mean[j]) / (var[j] + eps).sqrt();
                            out.set(r, j, gm.data()[j] * xhat + bt.data()[j]);
                        }
                    }
                    Ok((out, mean, var))
                })
            })
        })?;
        let stats = BatchStats {
            mean: mean.clone(),
            var: var.clone(),
        };
        let node = self.tape.push(
            out,
            vec![self.id, gamma.id, beta.id],
            Some(Box::new(move |ctx| {
                let x = ctx.parents[0];
                let gm = ctx.parents[1];
                let (n, c) = (x.rows(), x.cols());
                let nf = n as f64;
                // xhat, plus the column means of g*xhat and g needed by the
                // batch-statistics chain rule.
                let mut dgamma = Tensor::zeros(gm.shape());
                let mut dbeta = Tensor::zeros(gm.shape());
                let mut mean_g = vec![0.0; c];
                let mut mean_gx = vec![0.0; c];
                let mut xhat = Tensor::zeros(x.shape());
                for r in 0..n {
                    for j in 0..c {
                        let xh = (x.at(r, j) - mean[j]) / (var[j] + eps).sqrt();
                        xhat.set(r, j, xh);
                        let g = ctx.grad.at(r, j);
                        dgamma.data_mut()[j] += g * xh;
                        dbeta.data_mut()[j] += g;
                        mean_g[j] += g;
                        mean_gx[j] += g * xh;
                    }
                }
                for j in 0..c {
                    mean_g[j] /= nf;
                    mean_gx[j] /= nf;
                }
                let mut dx = Tensor::zeros(x.shape());
                for r in 0..n {
                    for j in 0..c {
                        let inv_std = 1.0 / (var[j] + eps).sqrt();
                        let g = ctx.grad.at(r, j);
                        dx.set(
                            r,
                            j,
                            gm.data()[j]
                                * inv_std
                                * (g - mean_g[j] - xhat.at(r, j) * mean_gx[j]),
                        );
                    }
                }
                vec![dx, dgamma, dbeta]
            })),
        );
        Ok((node, stats))
    }
}

/// Batch statistics captured by one batch-norm forward (biased variance).
#[derive(Debug, Clone)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

fn elementwise(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    debug_assert_eq!(a.shape(), b.shape());
    let data = a
        .data()
        .iter()
        .zip(b.data().iter())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Tensor::new(a.shape().to_vec(), data).expect("elementwise shape")
}

fn check_row_broadcast(a: &Tensor, row: &Tensor, what: &str) -> Result<()> {
    let ok = a.shape().len() == 2 && row.numel() == a.cols();
    if !ok {
        return Err(Error::Dimension(format!(
            "{what}: {:?} does not broadcast over rows of {:?}",
            row.shape(),
            a.shape()
        )));
    }
    Ok(())
}

/// Exactly rounded f64 accumulator (Shewchuk's growing nonoverlapping
/// expansion). Because the represented sum is exact, the result depends
/// only on the multiset of addends, never on their order.
#[derive(Debug, Clone)]
pub struct ExactSum {
    expansion: Vec<f64>,
}

impl ExactSum {
    pub fn new() -> Self {
        Self {
            expansion: Vec::with_capacity(4),
        }
    }

    pub fn add(&mut self, value: f64) {
        let mut q = value;
        let mut kept = 0;
        for i in 0..self.expansion.len() {
            let x = self.expansion[i];
            // Two-sum of x and q.
            let s = x + q;
            let bv = s - x;
            let err = (x - (s - bv)) + (q - bv);
            if err != 0.0 {
                self.expansion[kept] = err;
                kept += 1;
            }
            q = s;
        }
        self.expansion.truncate(kept);
        self.expansion.push(q);
    }

    /// Collapse the expansion (nonoverlapping, increasing magnitude) to a
    /// single f64.
    pub fn value(&self) -> f64 {
        self.expansion.iter().sum()
    }
}

impl Default for ExactSum {
    fn default() -> Self {
        Self::new()
    }
}

fn column_sums(g: &Tensor, row_shape: &[usize]) -> Tensor {
    let mut out = Tensor::zeros(row_shape);
    for r in 0..g.rows() {
        for (o, v) in out.data_mut().iter_mut().zip(g.row(r)) {
            *o += v;
        }
    }
    out
}

/// Max per column over `count` rows starting at `start`; ties resolve to the
/// smallest row index. Returns (1 x C values, absolute argmax rows).
fn column_max(a: &Tensor, start: usize, count: usize) -> (Tensor, Vec<usize>) {
    let c = a.cols();
    let mut vals = a.row(start).to_vec();
    let mut args = vec![start; c];
    for r in start + 1..start + count {
        for (j, &v) in a.row(r).iter().enumerate() {
            if v > vals[j] {
                vals[j] = v;
                args[j] = r;
            }
        }
    }
    (Tensor::new(vec![1, c], vals).expect("column_max"), args)
}
