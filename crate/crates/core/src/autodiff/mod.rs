//! Tape-based reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! Every value is a 2-D array (scalars are 1x1). Operations are recorded on a
//! [`Tape`]; [`Tape::backward`] walks the recording in reverse and accumulates
//! gradients additively into every node, so leaves reached through several
//! paths receive the sum of all path contributions.
//!
//! Besides dense kernels (matmul, concat, activations) the op set includes the
//! segment operations needed for graph attention over ragged node/edge groups:
//! [`Tape::segment_softmax`], [`Tape::segment_weighted_sum`] and
//! [`Tape::segment_max`]. Segment ids may appear in any order; rows belonging
//! to the same id form one group.
//!
//! All forward results are checked for finiteness; a NaN or infinity anywhere
//! raises [`AutodiffError::NonFiniteValue`] at the op that produced it.

mod checkpoint;
pub mod gradcheck;
mod optim;

pub use checkpoint::{load_named_tensors, save_named_tensors, CheckpointError, CHECKPOINT_MAGIC};
pub use optim::{Adam, AdamConfig, Optimizer, Sgd};

use ndarray::{s, Array2};
use rand::RngCore;
use std::cell::RefCell;
use std::rc::Rc;
use thiserror::Error;

/// Errors raised while recording or differentiating a computation.
#[derive(Debug, Error)]
pub enum AutodiffError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("non-finite value produced by {op}")]
    NonFiniteValue { op: &'static str },
    #[error("row {row} has zero norm, cosine is undefined")]
    ZeroVector { row: usize },
    #[error("segment {segment} is empty")]
    EmptySegment { segment: usize },
}

type Result<T> = std::result::Result<T, AutodiffError>;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

struct Node {
    value: Array2<f64>,
    step: Step,
}

enum Step {
    Leaf,
    Matmul { a: Var, b: Var },
    Add { a: Var, b: Var },
    AddBias { a: Var, bias: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { a: Var, c: f64 },
    SumAll { a: Var },
    Transpose { a: Var },
    ConcatCols { a: Var, b: Var, a_cols: usize },
    ConcatRows { a: Var, b: Var, a_rows: usize },
    GatherRows { a: Var, idx: Rc<Vec<usize>>, a_rows: usize },
    LeakyRelu { a: Var, slope: f64 },
    Elu { a: Var },
    Relu { a: Var },
    Dropout { a: Var, mask: Array2<f64> },
    SegmentSoftmax { a: Var, ids: Rc<Vec<usize>> },
    SegmentWeightedSum { values: Var, weights: Var, ids: Rc<Vec<usize>> },
    SegmentMax { a: Var, argmax: Vec<usize> },
    L2NormalizeRows { a: Var },
    SoftmaxRows { a: Var },
    NllLoss { probs: Var, labels: Rc<Vec<usize>> },
    InfoNceExcl { sim: Var, inv_tau: f64 },
}

/// Records a computation as it runs so it can be differentiated in reverse.
///
/// A tape lives for one forward/backward pass and is confined to a single
/// execution context.
pub struct Tape {
    inner: RefCell<Vec<Node>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

fn check_finite(value: &Array2<f64>, op: &'static str) -> Result<()> {
    if value.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(AutodiffError::NonFiniteValue { op })
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            inner: RefCell::new(Vec::new()),
        }
    }

    fn push(&self, value: Array2<f64>, step: Step, op: &'static str) -> Result<Var> {
        check_finite(&value, op)?;
        let mut nodes = self.inner.borrow_mut();
        nodes.push(Node { value, step });
        Ok(Var(nodes.len() - 1))
    }

    /// Registers an input value. Leaves receive gradients like any other node.
    pub fn leaf(&self, value: Array2<f64>) -> Result<Var> {
        self.push(value, Step::Leaf, "leaf")
    }

    pub fn value(&self, v: Var) -> Array2<f64> {
        self.inner.borrow()[v.0].value.clone()
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let d = self.inner.borrow()[v.0].value.dim();
        d
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        self.inner.borrow()[v.0].value[[0, 0]]
    }

    fn with<R>(&self, v: Var, f: impl FnOnce(&Array2<f64>) -> R) -> R {
        f(&self.inner.borrow()[v.0].value)
    }

    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let value = self.with(a, |av| {
            self.with(b, |bv| {
                if av.ncols() != bv.nrows() {
                    return Err(AutodiffError::ShapeMismatch {
                        op: "matmul",
                        detail: format!("{:?} x {:?}", av.dim(), bv.dim()),
                    });
                }
                Ok(av.dot(bv))
            })
        })?;
        self.push(value, Step::Matmul { a, b }, "matmul")
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        let value = self.with(a, |av| {
            self.with(b, |bv| {
                if av.dim() != bv.dim() {
                    return Err(AutodiffError::ShapeMismatch {
                        op: "add",
                        detail: format!("{:?} vs {:?}", av.dim(), bv.dim()),
                    });
                }
                Ok(av + bv)
            })
        })?;
        self.push(value, Step::Add { a, b }, "add")
    }

    /// Adds a 1 x C bias row to every row of an N x C matrix.
    pub fn add_bias(&self, a: Var, bias: Var) -> Result<Var> {
        let value = self.with(a, |av| {
            self.with(bias, |bv| {
                if bv.nrows() != 1 || bv.ncols() != av.ncols() {
                    return Err(AutodiffError::ShapeMismatch {
                        op: "add_bias",
                        detail: format!("{:?} + bias {:?}", av.dim(), bv.dim()),
                    });
                }
                Ok(av + &bv.row(0))
            })
        })?;
        self.push(value, Step::AddBias { a, bias }, "add_bias")
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        let value = self.with(a, |av| {
            self.with(b, |bv| {
                if av.dim() != bv.dim() {
                    return Err(AutodiffError::ShapeMismatch {
                        op: "sub",
                        detail: format!("{:?} vs {:?}", av.dim(), bv.dim()),
                    });
                }
                Ok(av - bv)
            })
        })?;
        self.push(value, Step::Sub { a, b }, "sub")
    }

    /// Elementwise product of two same-shape matrices.
    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        let value = self.with(a, |av| {
            self.with(b, |bv| {
                if av.dim() != bv.dim() {
                    return Err(AutodiffError::ShapeMismatch {
                        op: "mul",
                        detail: format!("{:?} vs {:?}", av.dim(), bv.dim()),
                    });
                }
                Ok(av * bv)
            })
        })?;
        self.push(value, Step::Mul { a, b }, "mul")
    }

    pub fn scale(&self, a: Var, c: f64) -> Result<Var> {
        let value = self.with(a, |av| av * c);
        self.push(value, Step::Scale { a, c }, "scale")
    }

    /// Sum of all entries, as a 1x1 value.
    pub fn sum_all(&self, a: Var) -> Result<Var> {
        let value = self.with(a, |av| Array2::from_elem((1, 1), av.sum()));
        self.push(value, Step::SumAll { a }, "sum_all")
    }

    pub fn transpose(&self, a: Var) -> Result<Var> {
        let value = self.with(a, |av| av.t().to_owned());
        self.push(value, Step::Transpose { a }, "transpose")
    }

    pub fn concat_cols(&self, a: Var, b: Var) -> Result<Var> {
        let value = self.with(a, |av| {
            self.with(b, |bv| {
                if av.nrows() != bv.nrows() {
                    return Err(AutodiffError::ShapeMismatch {
                        op: "concat_cols",
                        detail: format!("{:?} | {:?}", av.dim(), bv.dim()),
                    });
                }
                ndarray::concatenate(ndarray::Axis(1), &[av.view(), bv.view()]).map_err(|_| {
                    AutodiffError::ShapeMismatch {
                        op: "concat_cols",
                        detail: "concatenate failed".into(),
                    }
                })
            })
        })?;
        let a_cols = self.with(a, |av| av.ncols());
        self.push(value, Step::ConcatCols { a, b, a_cols }, "concat_cols")
    }

    pub fn concat_rows(&self, a: Var, b: Var) -> Result<Var> {
        let value = self.with(a, |av| {
            self.with(b, |bv| {
                if av.ncols() != bv.ncols() {
                    return Err(AutodiffError::ShapeMismatch {
                        op: "concat_rows",
                        detail: format!("{:?} / {:?}", av.dim(), bv.dim()),
                    });
                }
                ndarray::concatenate(ndarray::Axis(0), &[av.view(), bv.view()]).map_err(|_| {
                    AutodiffError::ShapeMismatch {
                        op: "concat_rows",
                        detail: "concatenate failed".into(),
                    }
                })
            })
        })?;
        let a_rows = self.with(a, |av| av.nrows());
        self.push(value, Step::ConcatRows { a, b, a_rows }, "concat_rows")
    }

    /// Row gather: `out[r] = a[idx[r]]`. The same source row may be gathered
    /// many times; its gradient is the sum over all occurrences.
    pub fn gather_rows(&self, a: Var, idx: Rc<Vec<usize>>) -> Result<Var> {
        let (a_rows, value) = self.with(a, |av| {
            let mut out = Array2::zeros((idx.len(), av.ncols()));
            for (r, &i) in idx.iter().enumerate() {
                if i >= av.nrows() {
                    return Err(AutodiffError::ShapeMismatch {
                        op: "gather_rows",
                        detail: format!("index {i} out of {} rows", av.nrows()),
                    });
                }
                out.row_mut(r).assign(&av.row(i));
            }
            Ok((av.nrows(), out))
        })?;
        self.push(value, Step::GatherRows { a, idx, a_rows }, "gather_rows")
    }

    pub fn leaky_relu(&self, a: Var, slope: f64) -> Result<Var> {
        let value = self.with(a, |av| av.mapv(|x| if x > 0.0 { x } else { slope * x }));
        self.push(value, Step::LeakyRelu { a, slope }, "leaky_relu")
    }

    pub fn elu(&self, a: Var) -> Result<Var> {
        let value = self.with(a, |av| av.mapv(|x| if x > 0.0 { x } else { x.exp() - 1.0 }));
        self.push(value, Step::Elu { a }, "elu")
    }

    pub fn relu(&self, a: Var) -> Result<Var> {
        let value = self.with(a, |av| av.mapv(|x| if x > 0.0 { x } else { 0.0 }));
        self.push(value, Step::Relu { a }, "relu")
    }

    /// Inverted dropout: at train time each entry is zeroed with probability
    /// `rate` and survivors are scaled by `1/(1-rate)`; at eval time (or with
    /// `rate == 0`) this is the identity and consumes no randomness.
    pub fn dropout(&self, a: Var, rate: f64, train: bool, rng: &mut dyn RngCore) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(AutodiffError::ShapeMismatch {
                op: "dropout",
                detail: format!("rate {rate} outside [0, 1)"),
            });
        }
        if !train || rate == 0.0 {
            let value = self.with(a, |av| av.clone());
            let mask = self.with(a, |av| Array2::ones(av.dim()));
            return self.push(value, Step::Dropout { a, mask }, "dropout");
        }
        let keep = 1.0 - rate;
        let mask = self.with(a, |av| {
            let mut m = Array2::zeros(av.dim());
            for x in m.iter_mut() {
                let u = rand::Rng::random::<f64>(rng);
                *x = if u < rate { 0.0 } else { 1.0 / keep };
            }
            m
        });
        let value = self.with(a, |av| av * &mask);
        self.push(value, Step::Dropout { a, mask }, "dropout")
    }

    /// Softmax over rows sharing a segment id. `a` must be a single column;
    /// `ids[r]` names the group of row `r` and may appear in any order.
    pub fn segment_softmax(&self, a: Var, ids: Rc<Vec<usize>>, n_segments: usize) -> Result<Var> {
        let value = self.with(a, |av| {
            if av.ncols() != 1 || av.nrows() != ids.len() {
                return Err(AutodiffError::ShapeMismatch {
                    op: "segment_softmax",
                    detail: format!("{:?} with {} ids", av.dim(), ids.len()),
                });
            }
            let mut max = vec![f64::NEG_INFINITY; n_segments];
            for (r, &id) in ids.iter().enumerate() {
                if id >= n_segments {
                    return Err(AutodiffError::ShapeMismatch {
                        op: "segment_softmax",
                        detail: format!("id {id} >= {n_segments}"),
                    });
                }
                max[id] = max[id].max(av[[r, 0]]);
            }
            let mut sum = vec![0.0; n_segments];
            let mut out = Array2::zeros(av.dim());
            for (r, &id) in ids.iter().enumerate() {
                let e = (av[[r, 0]] - max[id]).exp();
                out[[r, 0]] = e;
                sum[id] += e;
            }
            for (r, &id) in ids.iter().enumerate() {
                out[[r, 0]] /= sum[id];
            }
            Ok(out)
        })?;
        self.push(value, Step::SegmentSoftmax { a, ids }, "segment_softmax")
    }

    /// `out[s] = sum over rows r with ids[r] == s of weights[r] * values[r]`.
    pub fn segment_weighted_sum(
        &self,
        values: Var,
        weights: Var,
        ids: Rc<Vec<usize>>,
        n_segments: usize,
    ) -> Result<Var> {
        let value = self.with(values, |vv| {
            self.with(weights, |wv| {
                if wv.ncols() != 1 || wv.nrows() != vv.nrows() || vv.nrows() != ids.len() {
                    return Err(AutodiffError::ShapeMismatch {
                        op: "segment_weighted_sum",
                        detail: format!("{:?} with weights {:?}, {} ids", vv.dim(), wv.dim(), ids.len()),
                    });
                }
                let mut out = Array2::zeros((n_segments, vv.ncols()));
                for (r, &id) in ids.iter().enumerate() {
                    if id >= n_segments {
                        return Err(AutodiffError::ShapeMismatch {
                            op: "segment_weighted_sum",
                            detail: format!("id {id} >= {n_segments}"),
                        });
                    }
                    let w = wv[[r, 0]];
                    let mut row = out.row_mut(id);
                    row += &(&vv.row(r) * w);
                }
                Ok(out)
            })
        })?;
        self.push(
            value,
            Step::SegmentWeightedSum { values, weights, ids },
            "segment_weighted_sum",
        )
    }

    /// Column-wise max over the rows of each segment (max pooling). Every
    /// segment must own at least one row. Gradient flows to the first row
    /// attaining the maximum in each (segment, column).
    pub fn segment_max(&self, a: Var, ids: Rc<Vec<usize>>, n_segments: usize) -> Result<Var> {
        let (value, argmax) = self.with(a, |av| {
            if av.nrows() != ids.len() {
                return Err(AutodiffError::ShapeMismatch {
                    op: "segment_max",
                    detail: format!("{:?} with {} ids", av.dim(), ids.len()),
                });
            }
            let cols = av.ncols();
            let mut out = Array2::from_elem((n_segments, cols), f64::NEG_INFINITY);
            let mut arg = vec![usize::MAX; n_segments * cols];
            for (r, &id) in ids.iter().enumerate() {
                if id >= n_segments {
                    return Err(AutodiffError::ShapeMismatch {
                        op: "segment_max",
                        detail: format!("id {id} >= {n_segments}"),
                    });
                }
                for c in 0..cols {
                    if av[[r, c]] > out[[id, c]] {
                        out[[id, c]] = av[[r, c]];
                        arg[id * cols + c] = r;
                    }
                }
            }
            for s in 0..n_segments {
                if cols > 0 && arg[s * cols] == usize::MAX {
                    return Err(AutodiffError::EmptySegment { segment: s });
                }
            }
            Ok((out, arg))
        })?;
        self.push(value, Step::SegmentMax { a, argmax }, "segment_max")
    }

    /// Scales every row to unit L2 norm. A zero row is an error ([`AutodiffError::ZeroVector`]).
    pub fn l2_normalize_rows(&self, a: Var) -> Result<Var> {
        let value = self.with(a, |av| {
            let mut out = av.clone();
            for (r, mut row) in out.rows_mut().into_iter().enumerate() {
                let norm = row.dot(&row).sqrt();
                if norm == 0.0 {
                    return Err(AutodiffError::ZeroVector { row: r });
                }
                row.mapv_inplace(|x| x / norm);
            }
            Ok(out)
        })?;
        self.push(value, Step::L2NormalizeRows { a }, "l2_normalize_rows")
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&self, a: Var) -> Result<Var> {
        let value = self.with(a, |av| {
            let mut out = av.clone();
            for mut row in out.rows_mut() {
                let m = row.fold(f64::NEG_INFINITY, |acc, &x| acc.max(x));
                row.mapv_inplace(|x| (x - m).exp());
                let s = row.sum();
                row.mapv_inplace(|x| x / s);
            }
            out
        });
        self.push(value, Step::SoftmaxRows { a }, "softmax_rows")
    }

    /// Mean negative log likelihood of the labelled entries of a probability
    /// matrix, with probabilities clamped at 1e-12 before the log.
    pub fn nll_loss(&self, probs: Var, labels: Rc<Vec<usize>>) -> Result<Var> {
        let value = self.with(probs, |pv| {
            if pv.nrows() != labels.len() {
                return Err(AutodiffError::ShapeMismatch {
                    op: "nll_loss",
                    detail: format!("{} rows vs {} labels", pv.nrows(), labels.len()),
                });
            }
            let mut total = 0.0;
            for (r, &y) in labels.iter().enumerate() {
                if y >= pv.ncols() {
                    return Err(AutodiffError::ShapeMismatch {
                        op: "nll_loss",
                        detail: format!("label {y} >= {} classes", pv.ncols()),
                    });
                }
                total -= pv[[r, y]].max(NLL_CLAMP).ln();
            }
            Ok(Array2::from_elem((1, 1), total / labels.len() as f64))
        })?;
        self.push(value, Step::NllLoss { probs, labels }, "nll_loss")
    }

    /// Cross entropy from logits: row softmax followed by [`Tape::nll_loss`].
    pub fn cross_entropy(&self, logits: Var, labels: Rc<Vec<usize>>) -> Result<Var> {
        let probs = self.softmax_rows(logits)?;
        self.nll_loss(probs, labels)
    }

    /// Normalized-temperature contrastive loss over a matrix of pairwise
    /// cosine similarities (`sim[i][j] = cos(z_i^1, z_j^2)`). For each anchor
    /// row i the positive is the diagonal entry and the denominator runs over
    /// the off-diagonal entries only:
    ///
    /// `L = mean_i [ -sim[i][i]/tau + log sum_{j != i} exp(sim[i][j]/tau) ]`
    pub fn info_nce_excl(&self, sim: Var, tau: f64) -> Result<Var> {
        if tau <= 0.0 {
            return Err(AutodiffError::ShapeMismatch {
                op: "info_nce_excl",
                detail: format!("temperature {tau} must be positive"),
            });
        }
        let inv_tau = 1.0 / tau;
        let value = self.with(sim, |sv| {
            let n = sv.nrows();
            if sv.ncols() != n || n < 2 {
                return Err(AutodiffError::ShapeMismatch {
                    op: "info_nce_excl",
                    detail: format!("need square matrix with n >= 2, got {:?}", sv.dim()),
                });
            }
            let mut total = 0.0;
            for i in 0..n {
                let mut max = f64::NEG_INFINITY;
                for j in 0..n {
                    if j != i {
                        max = max.max(sv[[i, j]] * inv_tau);
                    }
                }
                let mut sum = 0.0;
                for j in 0..n {
                    if j != i {
                        sum += (sv[[i, j]] * inv_tau - max).exp();
                    }
                }
                total += -sv[[i, i]] * inv_tau + max + sum.ln();
            }
            Ok(Array2::from_elem((1, 1), total / n as f64))
        })?;
        self.push(value, Step::InfoNceExcl { sim, inv_tau }, "info_nce_excl")
    }

    /// Runs reverse accumulation from a 1x1 loss node and returns the
    /// gradient of every node recorded before it.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let nodes = self.inner.borrow();
        if nodes[loss.0].value.dim() != (1, 1) {
            return Err(AutodiffError::ShapeMismatch {
                op: "backward",
                detail: format!("loss must be 1x1, got {:?}", nodes[loss.0].value.dim()),
            });
        }
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; nodes.len()];
        grads[loss.0] = Some(Array2::ones((1, 1)));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            backward_step(&nodes, i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }
}

const NLL_CLAMP: f64 = 1e-12;

fn accumulate(grads: &mut [Option<Array2<f64>>], v: Var, delta: Array2<f64>) {
    match &mut grads[v.0] {
        Some(g) => *g += &delta,
        slot => *slot = Some(delta),
    }
}

fn backward_step(nodes: &[Node], i: usize, g: &Array2<f64>, grads: &mut Vec<Option<Array2<f64>>>) {
    match &nodes[i].step {
        Step::Leaf => {}
        Step::Matmul { a, b } => {
            let av = &nodes[a.0].value;
            let bv = &nodes[b.0].value;
            accumulate(grads, *a, g.dot(&bv.t()));
            accumulate(grads, *b, av.t().dot(g));
        }
        Step::Add { a, b } => {
            accumulate(grads, *a, g.clone());
            accumulate(grads, *b, g.clone());
        }
        Step::AddBias { a, bias } => {
            accumulate(grads, *a, g.clone());
            let col_sum = g.sum_axis(ndarray::Axis(0)).insert_axis(ndarray::Axis(0));
            accumulate(grads, *bias, col_sum);
        }
        Step::Sub { a, b } => {
            accumulate(grads, *a, g.clone());
            accumulate(grads, *b, -g);
        }
        Step::Mul { a, b } => {
            let av = &nodes[a.0].value;
            let bv = &nodes[b.0].value;
            accumulate(grads, *a, g * bv);
            accumulate(grads, *b, g * av);
        }
        Step::Scale { a, c } => {
            accumulate(grads, *a, g * *c);
        }
        Step::SumAll { a } => {
            let av = &nodes[a.0].value;
            accumulate(grads, *a, Array2::from_elem(av.dim(), g[[0, 0]]));
        }
        Step::Transpose { a } => {
            accumulate(grads, *a, g.t().to_owned());
        }
        Step::ConcatCols { a, b, a_cols } => {
            accumulate(grads, *a, g.slice(s![.., ..*a_cols]).to_owned());
            accumulate(grads, *b, g.slice(s![.., *a_cols..]).to_owned());
        }
        Step::ConcatRows { a, b, a_rows } => {
            accumulate(grads, *a, g.slice(s![..*a_rows, ..]).to_owned());
            accumulate(grads, *b, g.slice(s![*a_rows.., ..]).to_owned());
        }
        Step::GatherRows { a, idx, a_rows } => {
            let mut da = Array2::zeros((*a_rows, g.ncols()));
            for (r, &src) in idx.iter().enumerate() {
                let mut row = da.row_mut(src);
                row += &g.row(r);
            }
            accumulate(grads, *a, da);
        }
        Step::LeakyRelu { a, slope } => {
            let av = &nodes[a.0].value;
            let mut da = g.clone();
            ndarray::Zip::from(&mut da).and(av).for_each(|d, &x| {
                if x <= 0.0 {
                    *d *= slope;
                }
            });
            accumulate(grads, *a, da);
        }
        Step::Elu { a } => {
            let yv = &nodes[i].value;
            let av = &nodes[a.0].value;
            let mut da = g.clone();
            ndarray::Zip::from(&mut da).and(av).and(yv).for_each(|d, &x, &y| {
                if x <= 0.0 {
                    *d *= y + 1.0;
                }
            });
            accumulate(grads, *a, da);
        }
        Step::Relu { a } => {
            let av = &nodes[a.0].value;
            let mut da = g.clone();
            ndarray::Zip::from(&mut da).and(av).for_each(|d, &x| {
                if x <= 0.0 {
                    *d = 0.0;
                }
            });
            accumulate(grads, *a, da);
        }
        Step::Dropout { a, mask } => {
            accumulate(grads, *a, g * mask);
        }
        Step::SegmentSoftmax { a, ids } => {
            let yv = &nodes[i].value;
            let mut dot = std::collections::HashMap::new();
            for (r, &id) in ids.iter().enumerate() {
                *dot.entry(id).or_insert(0.0) += g[[r, 0]] * yv[[r, 0]];
            }
            let mut da = Array2::zeros(yv.dim());
            for (r, &id) in ids.iter().enumerate() {
                da[[r, 0]] = yv[[r, 0]] * (g[[r, 0]] - dot[&id]);
            }
            accumulate(grads, *a, da);
        }
        Step::SegmentWeightedSum { values, weights, ids } => {
            let vv = &nodes[values.0].value;
            let wv = &nodes[weights.0].value;
            let mut dv = Array2::zeros(vv.dim());
            let mut dw = Array2::zeros(wv.dim());
            for (r, &id) in ids.iter().enumerate() {
                let gr = g.row(id);
                let mut drow = dv.row_mut(r);
                drow += &(&gr * wv[[r, 0]]);
                dw[[r, 0]] = vv.row(r).dot(&gr);
            }
            accumulate(grads, *values, dv);
            accumulate(grads, *weights, dw);
        }
        Step::SegmentMax { a, argmax } => {
            let av = &nodes[a.0].value;
            let cols = av.ncols();
            let mut da = Array2::zeros(av.dim());
            for s in 0..g.nrows() {
                for c in 0..cols {
                    let r = argmax[s * cols + c];
                    da[[r, c]] += g[[s, c]];
                }
            }
            accumulate(grads, *a, da);
        }
        Step::L2NormalizeRows { a } => {
            let av = &nodes[a.0].value;
            let yv = &nodes[i].value;
            let mut da = Array2::zeros(av.dim());
            for r in 0..av.nrows() {
                let norm = av.row(r).dot(&av.row(r)).sqrt();
                let y = yv.row(r);
                let gr = g.row(r);
                let proj = gr.dot(&y);
                let mut drow = da.row_mut(r);
                drow.assign(&((&gr - &(&y * proj)) / norm));
            }
            accumulate(grads, *a, da);
        }
        Step::SoftmaxRows { a } => {
            let yv = &nodes[i].value;
            let mut da = Array2::zeros(yv.dim());
            for r in 0..yv.nrows() {
                let y = yv.row(r);
                let gr = g.row(r);
                let dot = gr.dot(&y);
                let mut drow = da.row_mut(r);
                drow.assign(&(&y * &(&gr - dot)));
            }
            accumulate(grads, *a, da);
        }
        Step::NllLoss { probs, labels } => {
            let pv = &nodes[probs.0].value;
            let gs = g[[0, 0]];
            let n = labels.len() as f64;
            let mut dp = Array2::zeros(pv.dim());
            for (r, &y) in labels.iter().enumerate() {
                let p = pv[[r, y]];
                if p > NLL_CLAMP {
                    dp[[r, y]] = -gs / (n * p);
                }
            }
            accumulate(grads, *probs, dp);
        }
        Step::InfoNceExcl { sim, inv_tau } => {
            let sv = &nodes[sim.0].value;
            let n = sv.nrows();
            let gs = g[[0, 0]] / n as f64;
            let mut ds = Array2::zeros(sv.dim());
            for i_row in 0..n {
                let mut max = f64::NEG_INFINITY;
                for j in 0..n {
                    if j != i_row {
                        max = max.max(sv[[i_row, j]] * inv_tau);
                    }
                }
                let mut sum = 0.0;
                for j in 0..n {
                    if j != i_row {
                        sum += (sv[[i_row, j]] * inv_tau - max).exp();
                    }
                }
                for j in 0..n {
                    if j != i_row {
                        let w = (sv[[i_row, j]] * inv_tau - max).exp() / sum;
                        ds[[i_row, j]] += gs * inv_tau * w;
                    }
                }
                ds[[i_row, i_row]] -= gs * inv_tau;
            }
            accumulate(grads, *sim, ds);
        }
    }
}

/// Gradients produced by [`Tape::backward`], indexable by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Array2<f64>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of a variable, or zeros of the given shape when the loss did
    /// not depend on it.
    pub fn get_or_zeros(&self, v: Var, shape: (usize, usize)) -> Array2<f64> {
        match self.get(v) {
            Some(g) => g.clone(),
            None => Array2::zeros(shape),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn leaky_relu_negative_value_and_gradient() {
        let slope = 0.2;
        let tape = Tape::new();
        let x = tape.leaf(array![[-2.0]]).unwrap();
        let y = tape.leaky_relu(x, slope).unwrap();
        assert_abs_diff_eq!(tape.scalar_value(y), -2.0 * slope);
        let loss = tape.sum_all(y).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_abs_diff_eq!(grads.get(x).unwrap()[[0, 0]], slope);
    }

    #[test]
    fn segment_softmax_uniform_on_equal_scores() {
        let tape = Tape::new();
        let x = tape.leaf(Array2::from_elem((4, 1), 3.7)).unwrap();
        let ids = Rc::new(vec![0, 0, 0, 0]);
        let y = tape.segment_softmax(x, ids, 1).unwrap();
        for v in tape.value(y).iter() {
            assert_abs_diff_eq!(*v, 0.25, epsilon = 1e-15);
        }
    }

    #[test]
    fn matmul_shape_mismatch_reported() {
        let tape = Tape::new();
        let a = tape.leaf(Array2::zeros((2, 3))).unwrap();
        let b = tape.leaf(Array2::zeros((2, 3))).unwrap();
        assert!(matches!(
            tape.matmul(a, b),
            Err(AutodiffError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn non_finite_forward_raises() {
        let tape = Tape::new();
        let a = tape.leaf(array![[1e308]]).unwrap();
        let b = tape.leaf(array![[1e308]]).unwrap();
        assert!(matches!(
            tape.add(a, b),
            Err(AutodiffError::NonFiniteValue { .. })
        ));
    }

    #[test]
    fn dropout_eval_is_identity_and_consumes_no_rng() {
        let tape = Tape::new();
        let x = tape.leaf(array![[1.0, 2.0], [3.0, 4.0]]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let before = rng.clone();
        let y = tape.dropout(x, 0.5, false, &mut rng).unwrap();
        assert_eq!(tape.value(y), tape.value(x));
        assert_eq!(
            rand::RngCore::next_u64(&mut rng.clone()),
            rand::RngCore::next_u64(&mut before.clone())
        );
    }

    #[test]
    fn zero_row_normalization_is_an_error() {
        let tape = Tape::new();
        let x = tape.leaf(array![[1.0, 0.0], [0.0, 0.0]]).unwrap();
        assert!(matches!(
            tape.l2_normalize_rows(x),
            Err(AutodiffError::ZeroVector { row: 1 })
        ));
    }

    #[test]
    fn segment_max_empty_segment_is_an_error() {
        let tape = Tape::new();
        let x = tape.leaf(array![[1.0], [2.0]]).unwrap();
        let ids = Rc::new(vec![0, 0]);
        assert!(matches!(
            tape.segment_max(x, ids, 2),
            Err(AutodiffError::EmptySegment { segment: 1 })
        ));
    }

    #[test]
    fn zero_loss_graph_yields_zero_gradients() {
        let tape = Tape::new();
        let x = tape.leaf(array![[1.0, -2.0], [0.5, 3.0]]).unwrap();
        let y = tape.scale(x, 0.0).unwrap();
        let loss = tape.sum_all(y).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert!(grads.get(x).unwrap().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn backward_accumulates_over_shared_inputs() {
        // loss = sum(x + x) -> dx = 2
        let tape = Tape::new();
        let x = tape.leaf(array![[1.0, 2.0]]).unwrap();
        let y = tape.add(x, x).unwrap();
        let loss = tape.sum_all(y).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap(), &array![[2.0, 2.0]]);
    }
}
