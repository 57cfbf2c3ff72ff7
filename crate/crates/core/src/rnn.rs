//! Recurrent cells, the forward pass, and backpropagation through time.
//!
//! `h_{t+1} = φ(V h_t + U x_{t+1} + b)`, `logits_t = W h_t + b_out`, with
//! cross-entropy in nats averaged over the scored steps of a batch.
//!
//! Batches are processed time-major: at each step the whole batch is one
//! `batch × n` matrix, so the recurrence is a single matrix product.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{gemm_into, matmul, matmul_at, matmul_bt, Mat};
use crate::schur::{Assembled, GammaMode, InitScheme, SchurCheckpoint, SchurGrads, SchurParams};

/// Target value for steps that are not scored.
pub const IGNORE: usize = usize::MAX;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    ModRelu,
    Tanh,
    /// Linear dynamics: `h_{t+1} = V h_t + U x + b`.
    Identity,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellKind {
    #[serde(rename = "nnrnn")]
    NnRnn,
    #[serde(rename = "vanilla")]
    VanillaRnn,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Recurrence {
    Schur(SchurParams),
    /// Unconstrained dense `V`.
    Dense(Mat),
}

#[derive(Clone, Debug, PartialEq)]
pub struct RnnModel {
    pub recurrence: Recurrence,
    /// `n × d_in`
    pub u_in: Mat,
    pub b_hidden: Vec<f64>,
    /// `d_out × n`
    pub w_out: Mat,
    pub b_out: Vec<f64>,
    pub activation: Activation,
}

/// `modReLU(z, b) = (|z| + b)·sign(z)` where `|z| + b > 0`, else `0`.
pub fn modrelu(z: &[f64], b: &[f64]) -> Vec<f64> {
    z.iter()
        .zip(b)
        .map(|(&z, &b)| modrelu_scalar(z, b))
        .collect()
}

#[inline]
fn modrelu_scalar(z: f64, b: f64) -> f64 {
    let m = z.abs() + b;
    if m > 0.0 {
        m * sign(z)
    } else {
        0.0
    }
}

#[inline]
fn sign(z: f64) -> f64 {
    if z > 0.0 {
        1.0
    } else if z < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Time-major sequences: `inputs[t]` is `batch × d_in`, `targets[t][b]` a
/// class id or [`IGNORE`], `mask[t][b]` whether that step is scored.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceBatch {
    pub inputs: Vec<Mat>,
    pub targets: Vec<Vec<usize>>,
    pub mask: Vec<Vec<bool>>,
    /// Optional `batch × n` initial hidden state.
    pub h0: Option<Mat>,
}

impl SequenceBatch {
    pub fn new(
        inputs: Vec<Mat>,
        targets: Vec<Vec<usize>>,
        mask: Vec<Vec<bool>>,
        h0: Option<Mat>,
    ) -> Result<Self> {
        let b = SequenceBatch {
            inputs,
            targets,
            mask,
            h0,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn steps(&self) -> usize {
        self.inputs.len()
    }

    pub fn batch_size(&self) -> usize {
        self.inputs.first().map_or(0, Mat::rows)
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.first().map_or(0, Mat::cols)
    }

    pub fn scored_count(&self) -> usize {
        self.mask.iter().flatten().filter(|m| **m).count()
    }

    fn validate(&self) -> Result<()> {
        let t = self.steps();
        let bs = self.batch_size();
        let d = self.input_dim();
        if self.targets.len() != t || self.mask.len() != t {
            return Err(Error::InvalidParameter(format!(
                "sequence has {t} input steps but {} target and {} mask steps",
                self.targets.len(),
                self.mask.len()
            )));
        }
        for step in 0..t {
            if self.inputs[step].shape() != (bs, d)
                || self.targets[step].len() != bs
                || self.mask[step].len() != bs
            {
                return Err(Error::InvalidParameter(format!(
                    "ragged batch at step {step}"
                )));
            }
            for (&target, &scored) in self.targets[step].iter().zip(&self.mask[step]) {
                if scored == (target == IGNORE) {
                    return Err(Error::InvalidParameter(format!(
                        "step {step}: scored steps need a class id and unscored steps the sentinel"
                    )));
                }
            }
        }
        if let Some(h0) = &self.h0 {
            if h0.rows() != bs {
                return Err(Error::InvalidParameter(format!(
                    "h0 has {} rows for batch {bs}",
                    h0.rows()
                )));
            }
        }
        Ok(())
    }

    /// Builds a token batch with one-hot inputs from `batch × time` ids.
    pub fn from_tokens(
        inputs: &[Vec<usize>],
        targets: &[Vec<usize>],
        mask: &[Vec<bool>],
        vocab: usize,
        h0: Option<Mat>,
    ) -> Result<Self> {
        let bs = inputs.len();
        let t = inputs.first().map_or(0, Vec::len);
        if targets.len() != bs
            || mask.len() != bs
            || inputs.iter().chain(targets).any(|r| r.len() != t)
        {
            return Err(Error::InvalidParameter("ragged token batch".into()));
        }
        let mut xs = Vec::with_capacity(t);
        let mut ys = Vec::with_capacity(t);
        let mut ms = Vec::with_capacity(t);
        for step in 0..t {
            let mut x = Mat::zeros(bs, vocab);
            for (b, row) in inputs.iter().enumerate() {
                if row[step] >= vocab {
                    return Err(Error::InvalidParameter(format!(
                        "token {} outside vocabulary of {vocab}",
                        row[step]
                    )));
                }
                x[(b, row[step])] = 1.0;
            }
            xs.push(x);
            ys.push(targets.iter().map(|r| r[step]).collect());
            ms.push(mask.iter().map(|r| r[step]).collect());
        }
        SequenceBatch::new(xs, ys, ms, h0)
    }
}

/// `V` for one step plus, for the Schur cell, what its backward pass needs.
#[derive(Clone, Debug)]
pub struct RecurrentCache {
    pub v: Mat,
    pub schur: Option<Assembled>,
}

#[derive(Clone, Debug)]
pub struct ForwardOutput {
    /// `V h_t + U x_{t+1}` (bias excluded), one `batch × n` matrix per step.
    pub pre: Vec<Mat>,
    /// `h_0 … h_T`.
    pub hidden: Vec<Mat>,
    pub logits: Vec<Mat>,
    pub loss: f64,
    pub scored: usize,
}

impl ForwardOutput {
    pub fn final_hidden(&self) -> &Mat {
        self.hidden.last().expect("h_0 is always present")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum RecurrenceGrads {
    Schur(SchurGrads),
    Dense(Mat),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelGrads {
    pub recurrence: RecurrenceGrads,
    /// `∂L/∂V` before it is mapped onto the recurrence parameters.
    pub grad_v: Mat,
    pub u_in: Mat,
    pub b_hidden: Vec<f64>,
    pub w_out: Mat,
    pub b_out: Vec<f64>,
}

impl ModelGrads {
    /// Sum of squares over every trainable scalar.
    pub fn norm_sq(&self) -> f64 {
        let rec = match &self.recurrence {
            RecurrenceGrads::Schur(g) => g.norm_sq(),
            RecurrenceGrads::Dense(g) => g.frobenius_norm().powi(2),
        };
        rec + self.u_in.frobenius_norm().powi(2)
            + self.w_out.frobenius_norm().powi(2)
            + self.b_hidden.iter().map(|x| x * x).sum::<f64>()
            + self.b_out.iter().map(|x| x * x).sum::<f64>()
    }
}

/// Glorot-uniform bound for a `fan_out × fan_in` matrix.
fn glorot(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Mat {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    Mat::from_fn(rows, cols, |_, _| rng.random_range(-a..a))
}

impl RnnModel {
    /// nnRNN with modReLU, the given recurrent parameters, Glorot-uniform
    /// input and output weights and zero biases.
    pub fn nnrnn(schur: SchurParams, d_in: usize, d_out: usize, seed: u64) -> Self {
        let n = schur.n();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0001);
        RnnModel {
            recurrence: Recurrence::Schur(schur),
            u_in: glorot(&mut rng, n, d_in),
            b_hidden: vec![0.0; n],
            w_out: glorot(&mut rng, d_out, n),
            b_out: vec![0.0; d_out],
            activation: Activation::ModRelu,
        }
    }

    /// Vanilla tanh RNN with a Gaussian `V` of spectral scale about one.
    pub fn vanilla(n: usize, d_in: usize, d_out: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0002);
        let s = 1.0 / (n as f64).sqrt();
        let v = Mat::from_fn(n, n, |_, _| {
            rng.sample::<f64, _>(rand_distr::StandardNormal) * s
        });
        RnnModel {
            recurrence: Recurrence::Dense(v),
            u_in: glorot(&mut rng, n, d_in),
            b_hidden: vec![0.0; n],
            w_out: glorot(&mut rng, d_out, n),
            b_out: vec![0.0; d_out],
            activation: Activation::Tanh,
        }
    }

    pub fn cell_kind(&self) -> CellKind {
        match self.recurrence {
            Recurrence::Schur(_) => CellKind::NnRnn,
            Recurrence::Dense(_) => CellKind::VanillaRnn,
        }
    }

    pub fn hidden_size(&self) -> usize {
        self.u_in.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.u_in.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.w_out.rows()
    }

    pub fn schur(&self) -> Option<&SchurParams> {
        match &self.recurrence {
            Recurrence::Schur(p) => Some(p),
            Recurrence::Dense(_) => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.hidden_size();
        let rec_n = match &self.recurrence {
            Recurrence::Schur(p) => p.n(),
            Recurrence::Dense(v) if v.is_square() => v.rows(),
            Recurrence::Dense(v) => {
                return Err(Error::NotSquare {
                    op: "recurrent matrix",
                    rows: v.rows(),
                    cols: v.cols(),
                })
            }
        };
        if rec_n != n
            || self.b_hidden.len() != n
            || self.w_out.cols() != n
            || self.b_out.len() != self.output_dim()
        {
            return Err(Error::InvalidParameter(
                "model dimensions are inconsistent".into(),
            ));
        }
        Ok(())
    }

    pub fn recurrent_cache(&self) -> Result<RecurrentCache> {
        match &self.recurrence {
            Recurrence::Schur(p) => {
                let a = p.assemble_v()?;
                Ok(RecurrentCache {
                    v: a.v.clone(),
                    schur: Some(a),
                })
            }
            Recurrence::Dense(v) => Ok(RecurrentCache {
                v: v.clone(),
                schur: None,
            }),
        }
    }

    fn activate(&self, pre: &Mat) -> Mat {
        let n = self.hidden_size();
        let b = &self.b_hidden;
        let f: fn(f64, f64) -> f64 = match self.activation {
            Activation::ModRelu => modrelu_scalar,
            Activation::Tanh => |z, b| (z + b).tanh(),
            Activation::Identity => |z, b| z + b,
        };
        Mat::from_fn(pre.rows(), n, |r, i| f(pre[(r, i)], b[i]))
    }

    fn check_batch(&self, batch: &SequenceBatch) -> Result<()> {
        if batch.steps() > 0 && batch.input_dim() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                op: "rnn input",
                left: (self.input_dim(), 1),
                right: (batch.input_dim(), 1),
            });
        }
        if let Some(h0) = &batch.h0 {
            if h0.cols() != self.hidden_size() {
                return Err(Error::DimensionMismatch {
                    op: "rnn h0",
                    left: (batch.batch_size(), self.hidden_size()),
                    right: h0.shape(),
                });
            }
        }
        for row in &batch.targets {
            if let Some(&t) = row.iter().find(|&&t| t != IGNORE && t >= self.output_dim()) {
                return Err(Error::InvalidParameter(format!(
                    "target class {t} out of range"
                )));
            }
        }
        Ok(())
    }

    pub fn forward(&self, cache: &RecurrentCache, batch: &SequenceBatch) -> Result<ForwardOutput> {
        self.check_batch(batch)?;
        let bs = batch.batch_size();
        let n = self.hidden_size();
        let h0 = batch.h0.clone().unwrap_or_else(|| Mat::zeros(bs, n));
        let mut hidden = Vec::with_capacity(batch.steps() + 1);
        hidden.push(h0);
        let mut pre = Vec::with_capacity(batch.steps());
        let mut logits = Vec::with_capacity(batch.steps());
        let mut loss = 0.0;
        for (step, x) in batch.inputs.iter().enumerate() {
            let mut a = matmul_bt(hidden.last().expect("nonempty"), &cache.v);
            a.axpy(1.0, &matmul_bt(x, &self.u_in))?;
            let h = self.activate(&a);
            if !h.is_finite() {
                return Err(Error::NonFiniteActivation { step });
            }
            let mut z = matmul_bt(&h, &self.w_out);
            for r in 0..bs {
                for (zi, bi) in z.row_mut(r).iter_mut().zip(&self.b_out) {
                    *zi += bi;
                }
                if batch.mask[step][r] {
                    loss += cross_entropy(z.row(r), batch.targets[step][r]);
                }
            }
            pre.push(a);
            hidden.push(h);
            logits.push(z);
        }
        let scored = batch.scored_count();
        let loss = if scored > 0 {
            loss / scored as f64
        } else {
            0.0
        };
        if !loss.is_finite() {
            return Err(Error::NonFinite("cross-entropy loss".into()));
        }
        Ok(ForwardOutput {
            pre,
            hidden,
            logits,
            loss,
            scored,
        })
    }

    /// Exact reverse-mode gradients of the mean loss, plus `‖∂L/∂h_t‖` for
    /// `t = 0 … T` in time order (oldest state first).
    pub fn bptt(
        &self,
        cache: &RecurrentCache,
        batch: &SequenceBatch,
        out: &ForwardOutput,
        gamma_mode: GammaMode,
    ) -> Result<(ModelGrads, Vec<f64>)> {
        let n = self.hidden_size();
        let bs = batch.batch_size();
        let steps = batch.steps();
        let mut g_v = Mat::zeros(n, n);
        let mut g_u = Mat::zeros(n, self.input_dim());
        let mut g_bh = vec![0.0; n];
        let mut g_w = Mat::zeros(self.output_dim(), n);
        let mut g_bo = vec![0.0; self.output_dim()];
        let mut norms = vec![0.0; steps + 1];
        let scale = if out.scored > 0 {
            1.0 / out.scored as f64
        } else {
            0.0
        };

        let mut dh = Mat::zeros(bs, n);
        for step in (0..steps).rev() {
            // Output head at h_{step+1}.
            let mut dz = Mat::zeros(bs, self.output_dim());
            let mut any = false;
            for r in 0..bs {
                if batch.mask[step][r] {
                    any = true;
                    softmax_grad(
                        out.logits[step].row(r),
                        batch.targets[step][r],
                        scale,
                        dz.row_mut(r),
                    );
                }
            }
            let h_next = &out.hidden[step + 1];
            if any {
                gemm_into(1.0, &dz.transpose(), h_next, 1.0, &mut g_w);
                for r in 0..bs {
                    for (g, d) in g_bo.iter_mut().zip(dz.row(r)) {
                        *g += d;
                    }
                }
                gemm_into(1.0, &dz, &self.w_out, 1.0, &mut dh);
            }
            norms[step + 1] = dh.frobenius_norm();

            // Through the activation.
            let a = &out.pre[step];
            let mut da = Mat::zeros(bs, n);
            for r in 0..bs {
                for i in 0..n {
                    let g = dh[(r, i)];
                    let b = self.b_hidden[i];
                    let (d_pre, d_bias) = match self.activation {
                        Activation::ModRelu => {
                            let z = a[(r, i)];
                            if z.abs() + b > 0.0 {
                                (g, g * sign(z))
                            } else {
                                (0.0, 0.0)
                            }
                        }
                        Activation::Tanh => {
                            let h = h_next[(r, i)];
                            let d = g * (1.0 - h * h);
                            (d, d)
                        }
                        Activation::Identity => (g, g),
                    };
                    da[(r, i)] = d_pre;
                    g_bh[i] += d_bias;
                }
            }
            g_v.axpy(1.0, &matmul_at(&da, &out.hidden[step]))?;
            g_u.axpy(1.0, &matmul_at(&da, &batch.inputs[step]))?;
            dh = matmul(&da, &cache.v)?;
        }
        norms[0] = dh.frobenius_norm();

        let recurrence = match (&self.recurrence, &cache.schur) {
            (Recurrence::Schur(p), Some(a)) => {
                RecurrenceGrads::Schur(p.backward_v(&g_v, a, gamma_mode)?)
            }
            (Recurrence::Dense(_), _) => RecurrenceGrads::Dense(g_v.clone()),
            (Recurrence::Schur(_), None) => {
                return Err(Error::InvalidParameter(
                    "Schur cell needs an assembled cache".into(),
                ))
            }
        };
        Ok((
            ModelGrads {
                recurrence,
                grad_v: g_v,
                u_in: g_u,
                b_hidden: g_bh,
                w_out: g_w,
                b_out: g_bo,
            },
            norms,
        ))
    }

    /// Forward and backward in one call.
    pub fn loss_and_grads(
        &self,
        batch: &SequenceBatch,
        gamma_mode: GammaMode,
    ) -> Result<(ForwardOutput, ModelGrads)> {
        let cache = self.recurrent_cache()?;
        let out = self.forward(&cache, batch)?;
        let (grads, _) = self.bptt(&cache, batch, &out, gamma_mode)?;
        Ok((out, grads))
    }

    /// `‖∂L/∂h_t‖₂` over the batch for `t = 0 … T`, oldest first.
    pub fn gradient_norm_trace(&self, batch: &SequenceBatch) -> Result<Vec<f64>> {
        let cache = self.recurrent_cache()?;
        let out = self.forward(&cache, batch)?;
        Ok(self.bptt(&cache, batch, &out, GammaMode::Free)?.1)
    }
}

/// `logsumexp(z) − z[target]`
pub fn cross_entropy(logits: &[f64], target: usize) -> f64 {
    log_sum_exp(logits) - logits[target]
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

fn softmax_grad(z: &[f64], target: usize, scale: f64, out: &mut [f64]) {
    let lse = log_sum_exp(z);
    for (o, v) in out.iter_mut().zip(z) {
        *o = (v - lse).exp() * scale;
    }
    out[target] -= scale;
}

/// On-disk form of an [`RnnModel`]. Dense matrices are stored as row lists.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelCheckpoint {
    pub cell: CellKind,
    pub activation: Activation,
    /// Present for the nnRNN.
    pub schur: Option<SchurCheckpoint>,
    /// Present for the vanilla RNN.
    pub v_dense: Option<Vec<Vec<f64>>>,
    pub u_in: Vec<Vec<f64>>,
    pub b_hidden: Vec<f64>,
    pub w_out: Vec<Vec<f64>>,
    pub b_out: Vec<f64>,
}

impl RnnModel {
    pub fn to_checkpoint(&self, scheme: Option<InitScheme>, seed: Option<u64>) -> ModelCheckpoint {
        let (schur, v_dense) = match &self.recurrence {
            Recurrence::Schur(p) => (Some(p.to_checkpoint(scheme, seed)), None),
            Recurrence::Dense(v) => (None, Some(v.to_rows())),
        };
        ModelCheckpoint {
            cell: self.cell_kind(),
            activation: self.activation,
            schur,
            v_dense,
            u_in: self.u_in.to_rows(),
            b_hidden: self.b_hidden.clone(),
            w_out: self.w_out.to_rows(),
            b_out: self.b_out.clone(),
        }
    }

    pub fn from_checkpoint(ck: &ModelCheckpoint) -> Result<Self> {
        let recurrence = match (ck.cell, &ck.schur, &ck.v_dense) {
            (CellKind::NnRnn, Some(s), None) => Recurrence::Schur(SchurParams::from_checkpoint(s)?),
            (CellKind::VanillaRnn, None, Some(v)) => Recurrence::Dense(Mat::from_rows(v)?),
            _ => {
                return Err(Error::InvalidParameter(
                    "checkpoint needs `schur` for an nnrnn cell or `v_dense` for a vanilla cell"
                        .into(),
                ))
            }
        };
        let model = RnnModel {
            recurrence,
            u_in: Mat::from_rows(&ck.u_in)?,
            b_hidden: ck.b_hidden.clone(),
            w_out: Mat::from_rows(&ck.w_out)?,
            b_out: ck.b_out.clone(),
            activation: ck.activation,
        };
        model.validate()?;
        Ok(model)
    }
}
