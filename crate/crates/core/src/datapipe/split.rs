use super::dataset::Split;
use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::Label;

/// Minimum number of samples of a class present in a split.
pub const MIN_CLASS_SIZE: usize = 5;

/// `(train, val, test)` for a class of `n`: test = round(0.2n), val = round(0.16n).
pub fn split_counts(n: usize) -> (usize, usize, usize) {
    let test = (0.2 * n as f64).round() as usize;
    let val = (0.16 * n as f64).round() as usize;
    (n - test - val, val, test)
}

/// Per-class seeded shuffle, then test, validation and training partitions.
pub fn stratified_split(labels: &[Label], seed: u64) -> Result<Vec<Split>> {
    let mut out = vec![Split::Train; labels.len()];
    for class in Label::ALL {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if idx.is_empty() {
            continue;
        }
        if idx.len() < MIN_CLASS_SIZE {
            return Err(Error::validation(format!(
                "class {class} has {} samples; at least {MIN_CLASS_SIZE} are needed to split",
                idx.len()
            )));
        }
        let mut rng = RngStream::for_parts(seed, &[0x5B17, class.index() as u64]);
        rng.shuffle(&mut idx);
        let (_, val, test) = split_counts(idx.len());
        for (rank, &i) in idx.iter().enumerate() {
            out[i] = if rank < test {
                Split::Test
            } else if rank < test + val {
                Split::Val
            } else {
                Split::Train
            };
        }
    }
    Ok(out)
}
