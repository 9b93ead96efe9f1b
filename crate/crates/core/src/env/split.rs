use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::TaskInstance;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MetaSplit {
    pub train: Vec<TaskInstance>,
    pub validation: Vec<TaskInstance>,
    pub test: Vec<TaskInstance>,
}

/// Seeded shuffle followed by a contiguous partition into `(t_tr, t_va, t_te)`.
/// Tasks beyond the requested total are discarded.
pub fn split_meta(tasks: Vec<TaskInstance>, sizes: (usize, usize, usize), seed: u64) -> Result<MetaSplit> {
    let (t_tr, t_va, t_te) = sizes;
    let need = t_tr + t_va + t_te;
    if tasks.len() < need {
        return Err(Error::Infeasible(format!(
            "split needs {need} tasks but only {} are available",
            tasks.len()
        )));
    }
    let mut order: Vec<usize> = (0..tasks.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut slots: Vec<Option<TaskInstance>> = tasks.into_iter().map(Some).collect();
    let mut take = |range: std::ops::Range<usize>| -> Vec<TaskInstance> {
        order[range].iter().map(|&i| slots[i].take().expect("indices are distinct")).collect()
    };
    let train = take(0..t_tr);
    let validation = take(t_tr..t_tr + t_va);
    let test = take(t_tr + t_va..need);
    Ok(MetaSplit { train, validation, test })
}
