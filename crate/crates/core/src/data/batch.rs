use super::dataset::LabeledExample;
use crate::error::{Error, Result};
use crate::numcore::RngStream;
use crate::textpipe::PAD_ID;

/// A padded minibatch. Row `r` comes from `examples[indices[r]]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub indices: Vec<usize>,
    /// batch × max_len, right-padded with PAD
    pub token_ids: Vec<Vec<usize>>,
    /// true for real tokens
    pub mask: Vec<Vec<bool>>,
    pub labels: Vec<Vec<bool>>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Unpadded token ids of row `r`.
    pub fn row_tokens(&self, r: usize) -> &[usize] {
        let n = self.mask[r].iter().filter(|&&m| m).count();
        &self.token_ids[r][..n]
    }
}

/// Splits examples into padded batches, optionally shuffled by `rng`.
pub fn make_batches(
    examples: &[LabeledExample],
    batch_size: usize,
    rng: &mut RngStream,
    shuffle: bool,
) -> Result<Vec<Batch>> {
    if examples.is_empty() {
        return Err(Error::invalid("no examples to batch"));
    }
    if batch_size == 0 {
        return Err(Error::invalid("batch_size must be positive"));
    }
    let mut order: Vec<usize> = (0..examples.len()).collect();
    if shuffle {
        rng.shuffle(&mut order);
    }
    Ok(order
        .chunks(batch_size)
        .map(|chunk| {
            let width = chunk.iter().map(|&i| examples[i].token_ids.len()).max().unwrap_or(0);
            let mut token_ids = Vec::with_capacity(chunk.len());
            let mut mask = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let ids = &examples[i].token_ids;
                let mut row = ids.clone();
                row.resize(width, PAD_ID);
                let mut m = vec![true; ids.len()];
                m.resize(width, false);
                token_ids.push(row);
                mask.push(m);
            }
            Batch {
                indices: chunk.to_vec(),
                token_ids,
                mask,
                labels: chunk.iter().map(|&i| examples[i].labels.clone()).collect(),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ex(id: usize, len: usize) -> LabeledExample {
        LabeledExample {
            id: format!("d{id}"),
            token_ids: (0..len).map(|t| 2 + (t + id) % 5).collect(),
            labels: vec![id.is_multiple_of(2), true],
        }
    }

    #[test]
    fn single_rows_are_unpadded() {
        let xs: Vec<_> = (0..5).map(|i| ex(i, i + 1)).collect();
        let batches = make_batches(&xs, 1, &mut RngStream::new(0), false).unwrap();
        assert_eq!(batches.len(), 5);
        for (i, b) in batches.iter().enumerate() {
            assert_eq!(b.indices, vec![i]);
            assert_eq!(b.token_ids[0], xs[i].token_ids);
            assert!(b.mask[0].iter().all(|&m| m));
        }
    }

    #[test]
    fn padding_and_mask() {
        let xs = vec![ex(0, 2), ex(1, 4), ex(2, 3)];
        let b = &make_batches(&xs, 3, &mut RngStream::new(0), false).unwrap()[0];
        assert_eq!(b.indices, vec![0, 1, 2]);
        assert_eq!(b.token_ids[0][2..], [PAD_ID, PAD_ID]);
        assert_eq!(b.mask[2], vec![true, true, true, false]);
        assert_eq!(b.row_tokens(0), &xs[0].token_ids[..]);
    }

    #[test]
    fn shuffled_batches_cover_input() {
        let xs: Vec<_> = (0..23).map(|i| ex(i, 1 + i % 4)).collect();
        let batches = make_batches(&xs, 5, &mut RngStream::new(9), true).unwrap();
        let mut seen: Vec<usize> = batches.iter().flat_map(|b| b.indices.clone()).collect();
        assert_ne!(seen, (0..23).collect::<Vec<_>>());
        seen.sort();
        assert_eq!(seen, (0..23).collect::<Vec<_>>());
        assert!(make_batches(&[], 2, &mut RngStream::new(0), false).is_err());
    }
}
