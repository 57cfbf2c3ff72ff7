//! Acceptance suite. Runs every criterion, prints one line each, and exits
//! nonzero if any criterion fails.

use std::f64::consts::TAU;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use nnrnn_core::linalg::{eigenvalues_small, Complex, Mat};
use nnrnn_core::memory::{
    delay_line_fmc_closed_form, fisher_memory_curve, prop1_sweep, transient_ensemble, FmcConfig,
};
use nnrnn_core::optim::{train_loop, EarlyStop, TrainConfig};
use nnrnn_core::propcheck::{
    iterate_growth_probe, labeled_growth_suite, verify_prop2, GROWTH_SUITE_HORIZON,
};
use nnrnn_core::rnn::{Recurrence, RnnModel, SequenceBatch};
use nnrnn_core::schur::{init_params, is_free_t_entry, GammaMode, InitScheme, SchurParams};
use nnrnn_core::tasks::{
    copy_baseline_loss, CopyTask, CopyTaskSpec, COPY_INPUT_DIM, COPY_OUTPUT_DIM,
};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn within(elapsed: Duration, limit_s: f64) -> bool {
    elapsed.as_secs_f64() < limit_s
}

fn fmc_closed_form() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for alpha in [0.95, 1.0, 1.05] {
        // The family carries its parameter on the sub-diagonal, and the
        // closed form is in terms of the squared sub-diagonal.
        let mut cfg = FmcConfig::new(100, 0.0, f64::sqrt(alpha), 0.0);
        cfg.k_max = 99;
        let r = match fisher_memory_curve(&cfg) {
            Ok(r) => r,
            Err(e) => return outcome(false, format!("alpha={alpha}: {e}")),
        };
        for (k, j) in r.j_curve.iter().enumerate() {
            let want = delay_line_fmc_closed_form(alpha, k);
            worst = worst.max(((j - want) / want).abs());
        }
    }
    let t = start.elapsed();
    outcome(
        worst <= 1e-8 && within(t, 10.0),
        format!(
            "max rel err {worst:.2e} over k <= 99, {:.2} s",
            t.as_secs_f64()
        ),
    )
}

/// Published values: (alpha, beta, d, J_tot), three significant figures.
const JTOT_TABLE: [(f64, f64, f64, f64); 12] = [
    (0.95, 0.0, 0.0, 3.03),
    (1.00, 0.0, 0.0, 5.19),
    (1.05, 0.0, 0.0, 12.1),
    (0.95, 0.005, 0.0, 3.18),
    (1.00, 0.005, 0.0, 5.30),
    (1.05, 0.005, 0.0, 12.1),
    (0.95, 0.0, 0.2, 12.0),
    (1.00, 0.0, 0.2, 16.2),
    (1.05, 0.0, 0.2, 20.5),
    (0.95, 0.005, 0.2, 12.1),
    (1.00, 0.005, 0.2, 16.3),
    (1.05, 0.005, 0.2, 20.4),
];

fn jtot_table() -> Outcome {
    let start = Instant::now();
    let mut misses = Vec::new();
    let mut worst: f64 = 0.0;
    for (row, &(alpha, beta, d, published)) in JTOT_TABLE.iter().enumerate() {
        match fisher_memory_curve(&FmcConfig::new(100, d, alpha, beta)) {
            Ok(r) => {
                let rel = (r.j_tot - published) / published;
                worst = worst.max(rel.abs());
                if rel.abs() > 0.02 {
                    misses.push(format!(
                        "row {} (a={alpha}, b={beta}, d={d}): {:.4} vs {published} ({:+.2}%)",
                        row + 1,
                        r.j_tot,
                        100.0 * rel
                    ));
                }
            }
            Err(e) => misses.push(format!("row {}: {e}", row + 1)),
        }
    }
    let t = start.elapsed();
    let mut detail = format!(
        "worst |rel| {:.2}%, {:.2} s",
        100.0 * worst,
        t.as_secs_f64()
    );
    if !misses.is_empty() {
        detail.push_str("; outside 2%: ");
        detail.push_str(&misses.join("; "));
    }
    outcome(misses.is_empty() && within(t, 120.0), detail)
}

fn prop1_bound() -> Outcome {
    match prop1_sweep(200, 12, &[0.9, 1.0, 1.1], 20_190_611) {
        Ok(s) => outcome(
            s.violations.is_empty(),
            format!(
                "{} violations in {} matrices, min relative margin {:.3e}",
                s.violations.len(),
                s.samples,
                s.min_relative_margin
            ),
        ),
        Err(e) => outcome(false, e.to_string()),
    }
}

fn prop2_exact() -> Outcome {
    let start = Instant::now();
    let mut failures = Vec::new();
    let mut entries = 0;
    for n in 2..=8 {
        match verify_prop2(n, 30) {
            Ok(rep) => {
                entries += rep.entries.len();
                if !rep.checks.all() {
                    failures.push(format!("n={n}: {:?}", rep.failures.first()));
                }
            }
            Err(e) => failures.push(format!("n={n}: {e}")),
        }
    }
    let t = start.elapsed();
    outcome(
        failures.is_empty() && within(t, 30.0),
        format!(
            "{entries} (k, t) polynomials checked, {} failures, {:.2} s{}",
            failures.len(),
            t.as_secs_f64(),
            failures
                .first()
                .map(|f| format!(": {f}"))
                .unwrap_or_default()
        ),
    )
}

fn random_schur(n: usize, rng: &mut ChaCha8Rng) -> SchurParams {
    let mut p = init_params(n, InitScheme::RandomOrth, rng.random()).unwrap();
    for i in 0..n {
        for j in 0..i {
            let (b, t): (f64, f64) = (StandardNormal.sample(rng), StandardNormal.sample(rng));
            p.set_generator(i, j, b);
            if is_free_t_entry(i, j) {
                p.t_lower[(i, j)] = 0.5 * t;
            }
        }
    }
    for k in 0..n / 2 {
        p.gamma[k] = rng.random_range(0.6..1.0);
        p.theta[k] = rng.random_range(0.0..TAU);
    }
    p
}

fn schur_mut(m: &mut RnnModel) -> &mut SchurParams {
    match &mut m.recurrence {
        Recurrence::Schur(p) => p,
        Recurrence::Dense(_) => unreachable!("nnrnn model"),
    }
}

fn loss(model: &RnnModel, batch: &SequenceBatch) -> f64 {
    model
        .forward(&model.recurrent_cache().unwrap(), batch)
        .unwrap()
        .loss
}

/// Worst relative error per parameter group between the analytic gradient
/// and a central difference with step 1e-6.
fn gradient_errors(model: &RnnModel, batch: &SequenceBatch) -> [(&'static str, f64); 8] {
    let h = 1e-6;
    let (_, g) = model.loss_and_grads(batch, GammaMode::Free).unwrap();
    let sg = match &g.recurrence {
        nnrnn_core::rnn::RecurrenceGrads::Schur(s) => s.clone(),
        nnrnn_core::rnn::RecurrenceGrads::Dense(_) => unreachable!("nnrnn model"),
    };
    let fd = |edit: &dyn Fn(&mut RnnModel, f64)| {
        let mut plus = model.clone();
        edit(&mut plus, h);
        let mut minus = model.clone();
        edit(&mut minus, -h);
        (loss(&plus, batch) - loss(&minus, batch)) / (2.0 * h)
    };
    let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-7);
    let n = model.hidden_size();
    let mut errs = [
        ("u_in", 0.0f64),
        ("b_hidden", 0.0),
        ("w_out", 0.0),
        ("b_out", 0.0),
        ("gamma", 0.0),
        ("theta", 0.0),
        ("T", 0.0),
        ("b_skew", 0.0),
    ];
    let mut bump = |slot: usize, analytic: f64, numeric: f64| {
        errs[slot].1 = errs[slot].1.max(rel(analytic, numeric))
    };
    for i in 0..n {
        for j in 0..model.input_dim() {
            bump(0, g.u_in[(i, j)], fd(&|m, d| m.u_in[(i, j)] += d));
        }
        bump(1, g.b_hidden[i], fd(&|m, d| m.b_hidden[i] += d));
    }
    for i in 0..model.output_dim() {
        for j in 0..n {
            bump(2, g.w_out[(i, j)], fd(&|m, d| m.w_out[(i, j)] += d));
        }
        bump(3, g.b_out[i], fd(&|m, d| m.b_out[i] += d));
    }
    let base = model.schur().unwrap().clone();
    for k in 0..n / 2 {
        bump(4, sg.gamma[k], fd(&|m, d| schur_mut(m).gamma[k] += d));
        bump(5, sg.theta[k], fd(&|m, d| schur_mut(m).theta[k] += d));
    }
    for i in 0..n {
        for j in 0..i {
            if is_free_t_entry(i, j) {
                bump(
                    6,
                    sg.t_lower[(i, j)],
                    fd(&|m, d| schur_mut(m).t_lower[(i, j)] += d),
                );
            }
            let b0 = base.b_skew[(i, j)];
            bump(
                7,
                sg.b_skew[(i, j)],
                fd(&|m, d| schur_mut(m).set_generator(i, j, b0 + d)),
            );
        }
    }
    errs
}

fn gradient_correctness() -> Outcome {
    let (n, steps, bs, d_in, d_out) = (6, 5, 2, 3, 4);
    let mut worst = [0.0f64; 8];
    let mut names = [""; 8];
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let mut model = RnnModel::nnrnn(random_schur(n, &mut rng), d_in, d_out, seed);
        model.b_hidden = (0..n).map(|_| rng.random_range(-0.3..0.3)).collect();
        model.b_out = (0..d_out).map(|_| rng.random_range(-0.3..0.3)).collect();
        let inputs = (0..steps)
            .map(|_| Mat::from_fn(bs, d_in, |_, _| rng.random_range(-1.0..1.0)))
            .collect();
        let targets = (0..steps)
            .map(|_| (0..bs).map(|_| rng.random_range(0..d_out)).collect())
            .collect();
        let mask = vec![vec![true; bs]; steps];
        let h0 = Some(Mat::from_fn(bs, n, |_, _| rng.random_range(-0.5..0.5)));
        let batch = SequenceBatch::new(inputs, targets, mask, h0).unwrap();
        for (slot, (name, e)) in gradient_errors(&model, &batch).into_iter().enumerate() {
            worst[slot] = worst[slot].max(e);
            names[slot] = name;
        }
    }
    let max = worst.iter().copied().fold(0.0, f64::max);
    let per_group: Vec<String> = names
        .iter()
        .zip(&worst)
        .map(|(n, e)| format!("{n} {e:.1e}"))
        .collect();
    outcome(
        max <= 1e-5,
        format!(
            "20 models, worst rel err {max:.2e} ({})",
            per_group.join(", ")
        ),
    )
}

fn manifold_preservation() -> Outcome {
    let start = Instant::now();
    let seed = 7;
    let cfg = TrainConfig {
        max_updates: 2000,
        log_every: 10,
        seed,
        ..TrainConfig::copy_defaults()
    };
    let spec = CopyTaskSpec {
        delay: 50,
        batch_size: cfg.batch_size,
        seed,
    };
    let mut task = CopyTask::new(spec).unwrap();
    let mut model = RnnModel::nnrnn(
        init_params(128, TrainConfig::copy_init_scheme(), seed).unwrap(),
        COPY_INPUT_DIM,
        COPY_OUTPUT_DIM,
        seed,
    );
    let log = match train_loop(&mut model, &mut task, &cfg) {
        Ok(log) => log,
        Err(e) => return outcome(false, e.to_string()),
    };
    let logged = log.records.iter().map(|r| r.orth_err).fold(0.0, f64::max);
    let last = model
        .schur()
        .unwrap()
        .p_matrix()
        .unwrap()
        .orthogonality_error();
    let worst = logged.max(last);
    outcome(
        log.failure.is_none() && log.updates == 2000 && worst <= 1e-8,
        format!(
            "{} updates, {} logged steps, max ||P^T P - I||_F {worst:.2e}, {:.1} s",
            log.updates,
            log.records.len(),
            start.elapsed().as_secs_f64()
        ),
    )
}

fn match_spectra(got: &[Complex], want: &[Complex]) -> f64 {
    let mut used = vec![false; got.len()];
    let mut worst: f64 = 0.0;
    for w in want {
        let best = (0..got.len())
            .filter(|i| !used[*i])
            .min_by(|a, b| got[*a].dist(w).total_cmp(&got[*b].dist(w)))
            .expect("equal sizes");
        used[best] = true;
        worst = worst.max(got[best].dist(w));
    }
    worst
}

fn spectrum_separation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let p = random_schur(8, &mut rng);
        let v = p.assemble_v().unwrap().v;
        let got = eigenvalues_small(&v).unwrap();
        let want: Vec<Complex> = p
            .gamma
            .iter()
            .zip(&p.theta)
            .flat_map(|(&g, &t)| [Complex::from_polar(g, t), Complex::from_polar(g, -t)])
            .collect();
        worst = worst.max(match_spectra(&got, &want));
    }
    outcome(
        worst <= 1e-6,
        format!("50 parameter sets, max eigenvalue distance {worst:.2e}"),
    )
}

fn copy_task_learning() -> Outcome {
    let start = Instant::now();
    let delay = 50;
    let target = 0.5 * copy_baseline_loss(delay);
    let mut results = Vec::new();
    for seed in 0..3u64 {
        let cfg = TrainConfig {
            seed,
            max_updates: 10_000,
            early_stop: Some(EarlyStop {
                below: target,
                window: 10,
            }),
            ..TrainConfig::copy_defaults()
        };
        let spec = CopyTaskSpec {
            delay,
            batch_size: cfg.batch_size,
            seed,
        };
        let mut task = CopyTask::new(spec).unwrap();
        let mut model = RnnModel::nnrnn(
            init_params(128, TrainConfig::copy_init_scheme(), seed).unwrap(),
            COPY_INPUT_DIM,
            COPY_OUTPUT_DIM,
            seed,
        );
        let r = train_loop(&mut model, &mut task, &cfg);
        results.push(match r {
            Ok(log) if log.stopped_early => (true, format!("seed {seed}: {} updates", log.updates)),
            Ok(log) => (
                false,
                format!(
                    "seed {seed}: not reached, last loss {:.4}",
                    log.task_losses.last().copied().unwrap_or(f64::NAN)
                ),
            ),
            Err(e) => (false, format!("seed {seed}: {e}")),
        });
    }
    let wins = results.iter().filter(|r| r.0).count();
    let t = start.elapsed();
    let detail: Vec<String> = results.into_iter().map(|r| r.1).collect();
    outcome(
        wins >= 2 && within(t, 1800.0),
        format!(
            "{wins}/3 seeds below {target:.4} (10-update mean): {}; {:.1} s",
            detail.join(", "),
            t.as_secs_f64()
        ),
    )
}

fn transients_nilpotency() -> Outcome {
    let start = Instant::now();
    let t_max = 120;
    let mut peaks = Vec::new();
    let mut tail_zero = true;
    for alpha in [0.95, 1.0, 1.05] {
        let cfg = FmcConfig::new(100, 0.0, alpha, 0.0);
        let stats = match transient_ensemble(&cfg, 1000, t_max, 5) {
            Ok(s) => s,
            Err(e) => return outcome(false, e.to_string()),
        };
        for series in [&stats.norm, &stats.unit_std] {
            tail_zero &= series.mean[100..]
                .iter()
                .chain(&series.std[100..])
                .all(|x| *x == 0.0);
        }
        peaks.push(stats.peak_mean_norm());
    }
    let ordered = peaks[2] > peaks[1] && peaks[1] > peaks[0];
    let t = start.elapsed();
    outcome(
        tail_zero && ordered && within(t, 10.0),
        format!(
            "exact zeros for t >= 100: {tail_zero}; peak mean norm {:.4} / {:.4} / {:.4} for alpha 0.95 / 1.00 / 1.05; {:.2} s",
            peaks[0],
            peaks[1],
            peaks[2],
            t.as_secs_f64()
        ),
    )
}

fn growth_classification() -> Outcome {
    let suite = labeled_growth_suite(0).unwrap();
    let mut misses = Vec::new();
    for case in &suite {
        match iterate_growth_probe(&case.m, GROWTH_SUITE_HORIZON) {
            Ok(p) if case.label.accepts(p.class, case.m.rows()) => {}
            Ok(p) => misses.push(format!("{}: {:?}", case.name, p.class)),
            Err(e) => misses.push(format!("{}: {e}", case.name)),
        }
    }
    outcome(
        misses.is_empty(),
        format!(
            "{} cases, {} misclassified{}",
            suite.len(),
            misses.len(),
            misses.first().map(|m| format!(": {m}")).unwrap_or_default()
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("FMC closed form for the delay line", fmc_closed_form),
        ("J_tot table", jtot_table),
        ("Memory lower bound for feed-forward chains", prop1_bound),
        ("Exact polynomial gradient growth", prop2_exact),
        (
            "BPTT and Schur backward vs finite differences",
            gradient_correctness,
        ),
        ("Orthogonality of P during training", manifold_preservation),
        ("Spectrum independent of T and P", spectrum_separation),
        ("Copy task learning at T=50, n=128", copy_task_learning),
        ("Transients and nilpotency", transients_nilpotency),
        ("Gradient growth classification", growth_classification),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let o = run();
        if !o.passed {
            failed += 1;
        }
        println!(
            "criterion {:>2} {}: {} ({})",
            i + 1,
            if o.passed { "PASS" } else { "FAIL" },
            name,
            o.detail
        );
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
