use crate::error::{Error, Result};
use crate::metrics::{ensemble_average, nll, PredictionMatrix};

/// Greedy forward selection of `m` pool members by ensemble validation NLL.
///
/// Each round adds the member that minimizes the NLL of the averaged
/// predictions; ties go to the lower pool index.
pub fn forward_select(
    pool: &PredictionMatrix,
    m: usize,
    with_replacement: bool,
) -> Result<Vec<usize>> {
    let n = pool.num_members();
    if m == 0 || (!with_replacement && n < m) {
        return Err(Error::invalid(
            "forward_select",
            format!("cannot select {m} members from a pool of {n}"),
        ));
    }
    let mut chosen: Vec<usize> = Vec::with_capacity(m);
    for _ in 0..m {
        let mut best: Option<(f64, usize)> = None;
        for c in 0..n {
            if !with_replacement && chosen.contains(&c) {
                continue;
            }
            let mut set = chosen.clone();
            set.push(c);
            let v = nll(&ensemble_average(&pool.subset(&set)?), &pool.labels)?;
            if best.is_none_or(|(bv, _)| v < bv) {
                best = Some((v, c));
            }
        }
        chosen.push(best.expect("non-empty candidate set").1);
    }
    Ok(chosen)
}

/// Ensemble NLL of a pool subset.
pub fn subset_nll(pool: &PredictionMatrix, idx: &[usize]) -> Result<f64> {
    nll(&ensemble_average(&pool.subset(idx)?), &pool.labels)
}
