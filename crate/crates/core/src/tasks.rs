//! Sequence tasks: the copy task and character-level next-symbol
//! prediction with truncated-BPTT windows.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::rnn::SequenceBatch;

/// A stream of training batches. `carry` is the final hidden state of the
/// previous batch; sources that do not carry state ignore it.
pub trait BatchSource {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn next_batch(&mut self, carry: Option<&Mat>) -> Result<SequenceBatch>;
}

/// Data symbols are ids `0..8`, the blank is `8`, the marker `9`.
pub const COPY_DATA_SYMBOLS: usize = 8;
pub const COPY_BLANK: usize = 8;
pub const COPY_MARKER: usize = 9;
pub const COPY_RECALL_LEN: usize = 10;
pub const COPY_INPUT_DIM: usize = 10;
/// Output classes: the 8 data symbols and the blank.
pub const COPY_OUTPUT_DIM: usize = 9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CopyTaskSpec {
    pub delay: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl CopyTaskSpec {
    pub fn validate(&self) -> Result<()> {
        if self.delay == 0 || self.batch_size == 0 {
            return Err(Error::InvalidParameter(
                "copy task needs delay >= 1 and batch_size >= 1".into(),
            ));
        }
        Ok(())
    }

    pub fn seq_len(&self) -> usize {
        self.delay + 2 * COPY_RECALL_LEN
    }
}

/// `10 ln 8 / (T + 20)`: the mean loss of a memoryless predictor that is
/// certain of the blank until the recall window and uniform over the 8 data
/// symbols inside it.
pub fn copy_baseline_loss(delay: usize) -> f64 {
    COPY_RECALL_LEN as f64 * (COPY_DATA_SYMBOLS as f64).ln() / (delay + 2 * COPY_RECALL_LEN) as f64
}

/// Input/target token rows of one copy sequence.
fn copy_sequence(delay: usize, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>) {
    let len = delay + 2 * COPY_RECALL_LEN;
    let data: Vec<usize> = (0..COPY_RECALL_LEN)
        .map(|_| rng.random_range(0..COPY_DATA_SYMBOLS))
        .collect();
    let mut input = vec![COPY_BLANK; len];
    input[..COPY_RECALL_LEN].copy_from_slice(&data);
    input[delay + COPY_RECALL_LEN - 1] = COPY_MARKER;
    let mut target = vec![COPY_BLANK; len];
    target[delay + COPY_RECALL_LEN..].copy_from_slice(&data);
    (input, target)
}

/// Endless copy-task batches from one seeded generator.
#[derive(Clone, Debug)]
pub struct CopyTask {
    spec: CopyTaskSpec,
    rng: ChaCha8Rng,
}

impl CopyTask {
    pub fn new(spec: CopyTaskSpec) -> Result<Self> {
        spec.validate()?;
        Ok(CopyTask {
            spec,
            rng: ChaCha8Rng::seed_from_u64(spec.seed),
        })
    }

    pub fn spec(&self) -> &CopyTaskSpec {
        &self.spec
    }

    /// Token rows (`batch × time`) of the next batch.
    pub fn next_tokens(&mut self) -> (Vec<Vec<usize>>, Vec<Vec<usize>>) {
        (0..self.spec.batch_size)
            .map(|_| copy_sequence(self.spec.delay, &mut self.rng))
            .unzip()
    }
}

impl BatchSource for CopyTask {
    fn input_dim(&self) -> usize {
        COPY_INPUT_DIM
    }

    fn output_dim(&self) -> usize {
        COPY_OUTPUT_DIM
    }

    fn next_batch(&mut self, _carry: Option<&Mat>) -> Result<SequenceBatch> {
        let (inputs, targets) = self.next_tokens();
        let mask = vec![vec![true; self.spec.seq_len()]; self.spec.batch_size];
        SequenceBatch::from_tokens(&inputs, &targets, &mask, COPY_INPUT_DIM, None)
    }
}

/// The first batch drawn with `spec.seed`.
pub fn copy_batch(spec: CopyTaskSpec) -> Result<SequenceBatch> {
    CopyTask::new(spec)?.next_batch(None)
}

pub fn nats_to_bpc(nats: f64) -> f64 {
    nats / std::f64::consts::LN_2
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CharLmSpec {
    pub window: usize,
    pub batch_size: usize,
}

/// Byte-level vocabulary: each distinct byte of the corpus, in byte order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    bytes: Vec<u8>,
    index: [Option<usize>; 256],
}

impl Vocabulary {
    pub fn from_corpus(corpus: &[u8]) -> Self {
        let mut seen = [false; 256];
        for &b in corpus {
            seen[b as usize] = true;
        }
        let bytes: Vec<u8> = (0..=255u8).filter(|&b| seen[b as usize]).collect();
        let mut index = [None; 256];
        for (i, &b) in bytes.iter().enumerate() {
            index[b as usize] = Some(i);
        }
        Vocabulary { bytes, index }
    }

    pub fn len(&self) -> usize {
        self.bytes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bytes.is_empty()
    }

    pub fn id(&self, byte: u8) -> Option<usize> {
        self.index[byte as usize]
    }

    pub fn byte(&self, id: usize) -> u8 {
        self.bytes[id]
    }
}

/// Contiguous per-lane windows over a byte corpus.
///
/// The corpus is cut into `batch_size` equal lanes (the remainder is
/// dropped). Window `w` of lane `b` covers lane positions
/// `[w·T, (w+1)·T)` with targets shifted by one. Within an epoch each batch
/// starts from the previous batch's final hidden state; every epoch starts
/// from zero.
#[derive(Clone, Debug)]
pub struct CharLmStream {
    spec: CharLmSpec,
    vocab: Vocabulary,
    lanes: Vec<Vec<usize>>,
    windows_per_epoch: usize,
    next_window: usize,
    epoch: usize,
}

impl CharLmStream {
    pub fn new(corpus: &[u8], spec: CharLmSpec) -> Result<Self> {
        if spec.window < 2 || spec.batch_size == 0 {
            return Err(Error::InvalidParameter(
                "char-LM needs window >= 2 and batch_size >= 1".into(),
            ));
        }
        let vocab = Vocabulary::from_corpus(corpus);
        let tokens: Vec<usize> = corpus
            .iter()
            .map(|&b| vocab.id(b).expect("byte in vocabulary"))
            .collect();
        let lane_len = tokens.len() / spec.batch_size;
        let windows_per_epoch = lane_len.saturating_sub(1) / spec.window;
        if windows_per_epoch == 0 {
            return Err(Error::CorpusTooShort {
                len: corpus.len(),
                window: spec.window,
            });
        }
        let lanes = tokens
            .chunks_exact(lane_len)
            .take(spec.batch_size)
            .map(<[usize]>::to_vec)
            .collect();
        Ok(CharLmStream {
            spec,
            vocab,
            lanes,
            windows_per_epoch,
            next_window: 0,
            epoch: 0,
        })
    }

    pub fn from_path(path: &Path, spec: CharLmSpec) -> Result<Self> {
        CharLmStream::new(&std::fs::read(path)?, spec)
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn lanes(&self) -> &[Vec<usize>] {
        &self.lanes
    }

    pub fn windows_per_epoch(&self) -> usize {
        self.windows_per_epoch
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }
}

impl BatchSource for CharLmStream {
    fn input_dim(&self) -> usize {
        self.vocab.len()
    }

    fn output_dim(&self) -> usize {
        self.vocab.len()
    }

    fn next_batch(&mut self, carry: Option<&Mat>) -> Result<SequenceBatch> {
        let w = self.next_window;
        let t = self.spec.window;
        let inputs: Vec<Vec<usize>> = self
            .lanes
            .iter()
            .map(|l| l[w * t..(w + 1) * t].to_vec())
            .collect();
        let targets: Vec<Vec<usize>> = self
            .lanes
            .iter()
            .map(|l| l[w * t + 1..(w + 1) * t + 1].to_vec())
            .collect();
        let mask = vec![vec![true; t]; self.spec.batch_size];
        let h0 = if w == 0 { None } else { carry.cloned() };
        self.next_window += 1;
        if self.next_window == self.windows_per_epoch {
            self.next_window = 0;
            self.epoch += 1;
        }
        SequenceBatch::from_tokens(&inputs, &targets, &mask, self.vocab.len(), h0)
    }
}
