//! RMSprop for the unconstrained parameters, RMSprop on the skew generator
//! of `P` (which keeps `P = exp(B)` orthogonal), and the training loop.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::rnn::{Recurrence, RecurrenceGrads, RnnModel};
use crate::schur::{GammaMode, InitScheme, SchurParams};
use crate::tasks::BatchSource;

pub const RMS_EPS: f64 = 1e-8;

/// Stop once the mean task loss over the last `window` updates is below
/// `below`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EarlyStop {
    pub below: f64,
    pub window: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub lr_orth: f64,
    pub rms_alpha: f64,
    /// Weight of `Σ (1 − γᵢ)²` in regularised mode.
    pub delta: f64,
    pub t_decay: f64,
    pub gamma_mode: GammaMode,
    pub batch_size: usize,
    pub max_updates: usize,
    pub seed: u64,
    pub log_every: usize,
    #[serde(default)]
    pub early_stop: Option<EarlyStop>,
}

impl TrainConfig {
    /// Copy-task settings: `lr = 5e-4`, `lr_orth = 1e-6`, `α = 0.99`,
    /// `δ = 1e-4`, `t_decay = 1e-6`.
    pub fn copy_defaults() -> Self {
        TrainConfig {
            lr: 5e-4,
            lr_orth: 1e-6,
            rms_alpha: 0.99,
            delta: 1e-4,
            t_decay: 1e-6,
            gamma_mode: GammaMode::Regularized,
            batch_size: 10,
            max_updates: 10_000,
            seed: 0,
            log_every: 100,
            early_stop: None,
        }
    }

    /// Character-level settings: `lr = 8e-4`, `lr_orth = 8e-5`, `α = 0.9`,
    /// `δ = 1`, `t_decay = 1e-4`.
    pub fn char_lm_defaults() -> Self {
        TrainConfig {
            lr: 8e-4,
            lr_orth: 8e-5,
            rms_alpha: 0.9,
            delta: 1.0,
            t_decay: 1e-4,
            gamma_mode: GammaMode::Regularized,
            batch_size: 32,
            max_updates: 2_000,
            seed: 0,
            log_every: 50,
            early_stop: None,
        }
    }

    pub fn copy_init_scheme() -> InitScheme {
        InitScheme::Henaff
    }

    pub fn char_lm_init_scheme() -> InitScheme {
        InitScheme::Cayley
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidParameter(msg.to_string()));
        if !(self.lr > 0.0) || !(self.lr_orth > 0.0) {
            return bad("learning rates must be > 0");
        }
        if !(self.rms_alpha > 0.0 && self.rms_alpha < 1.0) {
            return bad("rms_alpha must lie in (0, 1)");
        }
        if !(self.delta >= 0.0) || !(self.t_decay >= 0.0) {
            return bad("delta and t_decay must be >= 0");
        }
        if self.batch_size == 0 || self.log_every == 0 {
            return bad("batch_size and log_every must be >= 1");
        }
        if let Some(e) = self.early_stop {
            if e.window == 0 {
                return bad("early_stop.window must be >= 1");
            }
        }
        self.gamma_mode.validate()
    }
}

/// `state ← α·state + (1−α)·g²`, `param ← param − lr·g/(√state + ε)`.
pub fn rmsprop_step(param: &mut [f64], grad: &[f64], state: &mut [f64], lr: f64, alpha: f64) {
    debug_assert!(param.len() == grad.len() && grad.len() == state.len());
    for ((p, &g), s) in param.iter_mut().zip(grad).zip(state.iter_mut()) {
        *s = alpha * *s + (1.0 - alpha) * g * g;
        *p -= lr * g / (s.sqrt() + RMS_EPS);
    }
}

/// Running squared-gradient means, one buffer per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct RmsState {
    /// Strict lower half of the generator, row-major.
    pub b_skew: Vec<f64>,
    pub gamma: Vec<f64>,
    pub theta: Vec<f64>,
    pub t_lower: Vec<f64>,
    pub v_dense: Vec<f64>,
    pub u_in: Vec<f64>,
    pub b_hidden: Vec<f64>,
    pub w_out: Vec<f64>,
    pub b_out: Vec<f64>,
}

impl RmsState {
    pub fn new(model: &RnnModel) -> Self {
        let n = model.hidden_size();
        let (schur_n, dense) = match &model.recurrence {
            Recurrence::Schur(_) => (n, 0),
            Recurrence::Dense(_) => (0, n * n),
        };
        RmsState {
            b_skew: vec![0.0; schur_n * schur_n.saturating_sub(1) / 2],
            gamma: vec![0.0; schur_n / 2],
            theta: vec![0.0; schur_n / 2],
            t_lower: vec![0.0; schur_n * schur_n],
            v_dense: vec![0.0; dense],
            u_in: vec![0.0; model.u_in.data().len()],
            b_hidden: vec![0.0; n],
            w_out: vec![0.0; model.w_out.data().len()],
            b_out: vec![0.0; model.b_out.len()],
        }
    }
}

fn lower_half(m: &Mat) -> Vec<f64> {
    (0..m.rows()).flat_map(|i| m.row(i)[..i].to_vec()).collect()
}

/// RMSprop on the free (strict lower) generator entries, mirrored so that
/// `B` stays exactly skew-symmetric and `exp(B)` orthogonal. The incoming
/// gradient is first projected onto skew matrices, `(g − gᵀ)/2`.
pub fn stiefel_step(
    schur: &mut SchurParams,
    grad_b: &Mat,
    state: &mut [f64],
    lr_orth: f64,
    alpha: f64,
) {
    let skew = grad_b.skew_part();
    let grad = lower_half(&skew);
    let mut params = lower_half(&schur.b_skew);
    rmsprop_step(&mut params, &grad, state, lr_orth, alpha);
    let n = schur.n();
    let mut it = params.into_iter();
    for i in 0..n {
        for j in 0..i {
            schur.set_generator(i, j, it.next().expect("lower half"));
        }
    }
}

/// Applies one update to every trainable tensor of `model`.
pub fn apply_update(
    model: &mut RnnModel,
    grads: &crate::rnn::ModelGrads,
    state: &mut RmsState,
    cfg: &TrainConfig,
) {
    let (lr, a) = (cfg.lr, cfg.rms_alpha);
    rmsprop_step(
        model.u_in.data_mut(),
        grads.u_in.data(),
        &mut state.u_in,
        lr,
        a,
    );
    rmsprop_step(
        &mut model.b_hidden,
        &grads.b_hidden,
        &mut state.b_hidden,
        lr,
        a,
    );
    rmsprop_step(
        model.w_out.data_mut(),
        grads.w_out.data(),
        &mut state.w_out,
        lr,
        a,
    );
    rmsprop_step(&mut model.b_out, &grads.b_out, &mut state.b_out, lr, a);
    match (&mut model.recurrence, &grads.recurrence) {
        (Recurrence::Schur(p), RecurrenceGrads::Schur(g)) => {
            stiefel_step(p, &g.b_skew, &mut state.b_skew, cfg.lr_orth, a);
            if !cfg.gamma_mode.is_clamped() {
                rmsprop_step(&mut p.gamma, &g.gamma, &mut state.gamma, lr, a);
            }
            rmsprop_step(&mut p.theta, &g.theta, &mut state.theta, lr, a);
            // Entries outside the free pattern have zero gradient and stay 0.
            rmsprop_step(
                p.t_lower.data_mut(),
                g.t_lower.data(),
                &mut state.t_lower,
                lr,
                a,
            );
        }
        (Recurrence::Dense(v), RecurrenceGrads::Dense(g)) => {
            rmsprop_step(v.data_mut(), g.data(), &mut state.v_dense, lr, a);
        }
        _ => unreachable!("gradients come from the same model"),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub update: usize,
    pub loss: f64,
    pub task_loss: f64,
    pub reg_loss: f64,
    pub mean_gamma: f64,
    pub t_fro: f64,
    pub orth_err: f64,
    pub grad_norm_total: f64,
}

pub const LOG_COLUMNS: [&str; 8] = [
    "update",
    "loss",
    "task_loss",
    "reg_loss",
    "mean_gamma",
    "t_fro",
    "orth_err",
    "grad_norm_total",
];

#[derive(Debug)]
pub struct TrainLog {
    pub records: Vec<LogRecord>,
    /// Task loss of every update, logged or not.
    pub task_losses: Vec<f64>,
    pub updates: usize,
    pub stopped_early: bool,
    /// Set when training aborted on a numerical failure.
    pub failure: Option<Error>,
}

pub fn write_log_csv(records: &[LogRecord], mut w: impl Write) -> std::io::Result<()> {
    writeln!(w, "{}", LOG_COLUMNS.join(","))?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            r.update,
            r.loss,
            r.task_loss,
            r.reg_loss,
            r.mean_gamma,
            r.t_fro,
            r.orth_err,
            r.grad_norm_total
        )?;
    }
    Ok(())
}

/// Runs `cfg.max_updates` updates (or until early stop or a numerical
/// failure). Each update's final hidden state is handed to the source as
/// the carry for the next batch. Logged metrics describe the parameters that
/// produced that update's loss. Clamped γ is set to its value before the
/// first update.
pub fn train_loop(
    model: &mut RnnModel,
    source: &mut dyn BatchSource,
    cfg: &TrainConfig,
) -> Result<TrainLog> {
    cfg.validate()?;
    model.validate()?;
    if let (GammaMode::Clamped(value), Recurrence::Schur(p)) =
        (cfg.gamma_mode, &mut model.recurrence)
    {
        p.gamma.iter_mut().for_each(|g| *g = value);
    }
    let mut state = RmsState::new(model);
    let mut log = TrainLog {
        records: Vec::new(),
        task_losses: Vec::with_capacity(cfg.max_updates),
        updates: 0,
        stopped_early: false,
        failure: None,
    };
    let mut carry: Option<Mat> = None;
    for update in 1..=cfg.max_updates {
        match train_step(model, source, cfg, &mut state, carry.as_ref()) {
            Ok((record, final_hidden)) => {
                carry = Some(final_hidden);
                log.task_losses.push(record.task_loss);
                log.updates = update;
                if update % cfg.log_every == 0 || update == cfg.max_updates {
                    log.records.push(LogRecord { update, ..record });
                }
                if let Some(stop) = cfg.early_stop {
                    let n = log.task_losses.len();
                    if n >= stop.window {
                        let recent = &log.task_losses[n - stop.window..];
                        let mean = recent.iter().sum::<f64>() / stop.window as f64;
                        if mean < stop.below {
                            if log.records.last().map(|r| r.update) != Some(update) {
                                log.records.push(LogRecord { update, ..record });
                            }
                            log.stopped_early = true;
                            break;
                        }
                    }
                }
            }
            Err(e) if e.is_numerical() || matches!(e, Error::NonFinite(_)) => {
                log.failure = Some(match e {
                    Error::NonFinite(_) => Error::Divergence {
                        update,
                        loss: f64::NAN,
                    },
                    Error::Divergence { loss, .. } => Error::Divergence { update, loss },
                    other => other,
                });
                break;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(log)
}

fn train_step(
    model: &mut RnnModel,
    source: &mut dyn BatchSource,
    cfg: &TrainConfig,
    state: &mut RmsState,
    carry: Option<&Mat>,
) -> Result<(LogRecord, Mat)> {
    let batch = source.next_batch(carry)?;
    let cache = model.recurrent_cache()?;
    let out = model.forward(&cache, &batch)?;
    let (mut grads, _) = model.bptt(&cache, &batch, &out, cfg.gamma_mode)?;
    let task_loss = out.loss;
    let (reg_loss, mean_gamma, t_fro, orth_err) = match (&model.recurrence, &mut grads.recurrence) {
        (Recurrence::Schur(p), RecurrenceGrads::Schur(g)) => {
            let (reg, rg) = p.regularizer_loss_and_grads(cfg.gamma_mode, cfg.delta, cfg.t_decay);
            g.add_assign(&rg);
            let orth = cache
                .schur
                .as_ref()
                .expect("schur cache")
                .p
                .orthogonality_error();
            (reg, p.mean_gamma(), p.t_frobenius(), orth)
        }
        _ => (0.0, f64::NAN, f64::NAN, f64::NAN),
    };
    let loss = task_loss + reg_loss;
    if !loss.is_finite() {
        return Err(Error::Divergence { update: 0, loss });
    }
    let grad_norm_total = grads.norm_sq().sqrt();
    if !grad_norm_total.is_finite() {
        return Err(Error::Divergence { update: 0, loss });
    }
    let previous = model.clone();
    apply_update(model, &grads, state, cfg);
    // An unconstrained γ can be pushed through zero; that ends the run like
    // any blow-up, leaving the last valid parameters in place.
    if let Recurrence::Schur(p) = &model.recurrence {
        if p.gamma.iter().any(|g| !(*g > 0.0) || !g.is_finite()) {
            *model = previous;
            return Err(Error::Divergence { update: 0, loss });
        }
    }
    Ok((
        LogRecord {
            update: 0,
            loss,
            task_loss,
            reg_loss,
            mean_gamma,
            t_fro,
            orth_err,
            grad_norm_total,
        },
        out.final_hidden().clone(),
    ))
}
