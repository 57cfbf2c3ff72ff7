//! Structural contrast between trained solutions: the copy task is solved
//! with an almost normal recurrence, character prediction uses more of the
//! feed-forward part.

use std::path::Path;

use nnrnn_core::analysis::connectivity_report;
use nnrnn_core::optim::{train_loop, TrainConfig};
use nnrnn_core::rnn::RnnModel;
use nnrnn_core::schur::init_params;
use nnrnn_core::tasks::{BatchSource, CharLmSpec, CharLmStream, CopyTask, CopyTaskSpec};
use nnrnn_core::InitScheme;

const N: usize = 128;
const UPDATES: usize = 500;

fn non_normality_after(source: &mut dyn BatchSource, cfg: &TrainConfig, scheme: InitScheme) -> f64 {
    let mut model = RnnModel::nnrnn(
        init_params(N, scheme, cfg.seed).unwrap(),
        source.input_dim(),
        source.output_dim(),
        cfg.seed,
    );
    let log = train_loop(&mut model, source, cfg).unwrap();
    assert!(log.failure.is_none());
    connectivity_report(model.schur().unwrap())
        .unwrap()
        .non_normality()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

#[test]
fn copy_solutions_are_more_normal_than_char_lm_solutions() {
    let corpus = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/declaration.txt");
    let mut copy = Vec::new();
    let mut chars = Vec::new();
    for seed in 0..3u64 {
        let cfg = TrainConfig {
            seed,
            max_updates: UPDATES,
            ..TrainConfig::copy_defaults()
        };
        let mut task = CopyTask::new(CopyTaskSpec {
            delay: 50,
            batch_size: cfg.batch_size,
            seed,
        })
        .unwrap();
        copy.push(non_normality_after(
            &mut task,
            &cfg,
            TrainConfig::copy_init_scheme(),
        ));

        let cfg = TrainConfig {
            seed,
            max_updates: UPDATES,
            batch_size: 8,
            ..TrainConfig::char_lm_defaults()
        };
        let mut stream = CharLmStream::from_path(
            &corpus,
            CharLmSpec {
                window: 50,
                batch_size: 8,
            },
        )
        .unwrap();
        chars.push(non_normality_after(
            &mut stream,
            &cfg,
            TrainConfig::char_lm_init_scheme(),
        ));
    }
    let (c, l) = (median(copy.clone()), median(chars.clone()));
    assert!(c < l, "copy {copy:?} vs char {chars:?}");
}
