use super::LabeledDataset;
use crate::error::{Error, Result};
use crate::numerics::RngState;

/// Stratified index split. Each class is shuffled independently and
/// `floor(count * test_fraction)` of its members go to test. Both index lists
/// come back sorted.
pub fn split_indices(
    labels: &[usize],
    class_count: usize,
    test_fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::contract(format!(
            "test fraction {test_fraction} outside (0, 1)"
        )));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); class_count];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l].push(i);
    }
    let mut rng = RngState::new(seed);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (class, mut members) in by_class.into_iter().enumerate() {
        if members.len() == 1 {
            log::warn!("class {class} has a single member; keeping it in the training split");
        }
        rng.shuffle(&mut members);
        let n_test = if members.len() < 2 {
            0
        } else {
            (members.len() as f64 * test_fraction).floor() as usize
        };
        test.extend_from_slice(&members[..n_test]);
        train.extend_from_slice(&members[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// Stratified train/test split of a dataset.
pub fn split(
    dataset: &LabeledDataset,
    test_fraction: f64,
    seed: u64,
) -> Result<(LabeledDataset, LabeledDataset)> {
    let (train, test) = split_indices(dataset.labels(), dataset.class_count(), test_fraction, seed)?;
    Ok((
        dataset.subset(&train, format!("{}/train", dataset.id)),
        dataset.subset(&test, format!("{}/test", dataset.id)),
    ))
}
