use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ParallelExample, PAD};

/// Right-padded batch. Masks are `true` on real tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    /// Positions of these examples in the batcher's input slice.
    pub indices: Vec<usize>,
    pub src_lang: Vec<usize>,
    pub tgt_lang: Vec<usize>,
    pub src: Vec<Vec<usize>>,
    pub src_mask: Vec<Vec<bool>>,
    pub tgt: Vec<Vec<usize>>,
    pub tgt_mask: Vec<Vec<bool>>,
}

fn pad(seqs: &[&[usize]]) -> (Vec<Vec<usize>>, Vec<Vec<bool>>) {
    let width = seqs.iter().map(|s| s.len()).max().unwrap_or(0);
    seqs.iter()
        .map(|s| {
            let mut ids = s.to_vec();
            ids.resize(width, PAD);
            let mask = (0..width).map(|i| i < s.len()).collect();
            (ids, mask)
        })
        .unzip()
}

impl Batch {
    fn from_examples(indices: Vec<usize>, examples: &[ParallelExample]) -> Self {
        let picked: Vec<&ParallelExample> = indices.iter().map(|&i| &examples[i]).collect();
        let (src, src_mask) = pad(&picked
            .iter()
            .map(|e| e.src_ids.as_slice())
            .collect::<Vec<_>>());
        let (tgt, tgt_mask) = pad(&picked
            .iter()
            .map(|e| e.tgt_ids.as_slice())
            .collect::<Vec<_>>());
        Batch {
            src_lang: picked.iter().map(|e| e.src_lang).collect(),
            tgt_lang: picked.iter().map(|e| e.tgt_lang).collect(),
            indices,
            src,
            src_mask,
            tgt,
            tgt_mask,
        }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// The unpadded `i`-th example.
    pub fn example(&self, i: usize) -> ParallelExample {
        let strip = |ids: &[usize], mask: &[bool]| -> Vec<usize> {
            ids.iter()
                .zip(mask)
                .filter(|(_, m)| **m)
                .map(|(id, _)| *id)
                .collect()
        };
        ParallelExample {
            src_lang: self.src_lang[i],
            tgt_lang: self.tgt_lang[i],
            src_ids: strip(&self.src[i], &self.src_mask[i]),
            tgt_ids: strip(&self.tgt[i], &self.tgt_mask[i]),
        }
    }
}

/// Seeded epoch-by-epoch batch stream; one consumer.
#[derive(Debug)]
pub struct Batcher<'a> {
    examples: &'a [ParallelExample],
    batch_size: usize,
    rng: ChaCha8Rng,
}

impl<'a> Batcher<'a> {
    pub fn new(examples: &'a [ParallelExample], batch_size: usize, seed: u64) -> Self {
        assert!(batch_size >= 1, "batch_size must be >= 1");
        Batcher {
            examples,
            batch_size,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Batches of the next epoch, a fresh seeded permutation of all examples.
    pub fn epoch(&mut self) -> Vec<Batch> {
        let mut order: Vec<usize> = (0..self.examples.len()).collect();
        order.shuffle(&mut self.rng);
        order
            .chunks(self.batch_size)
            .map(|c| Batch::from_examples(c.to_vec(), self.examples))
            .collect()
    }
}
