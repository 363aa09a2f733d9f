//! Hessian sharpness probes, the random-sample regret study, and
//! architecture distances.

mod distance;
mod hessian;
mod regret;

pub use distance::{attributed_ops, count_recovered, hamming_csv, hamming_matrix, strongest_ops};
pub use hessian::{
    dominant_eig, fd_eps, hvp_fd, EigEstimate, EigRow, EigTrace, EIG_MAX_ITER, EIG_TOL, PROBE_BATCH,
};
pub use regret::{regret_sample, regret_study, RegretEntry, RegretGroup, RegretStudy};

use crate::error::{Error, Result};

fn finish_csv(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w
        .into_inner()
        .map_err(|e| Error::invalid("csv", e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::invalid("csv", e.to_string()))
}
