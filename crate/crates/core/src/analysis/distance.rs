use crate::error::{Error, Result};
use crate::space::{hamming, ArchParams, CellTopology, MultiHeadGenotype, OpKind};

/// Pairwise Hamming distances between edge vectors.
pub fn hamming_matrix(genotypes: &[MultiHeadGenotype]) -> Result<Vec<Vec<usize>>> {
    let n = genotypes.len();
    let mut out = vec![vec![0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let d = hamming(&genotypes[i], &genotypes[j])?;
            out[i][j] = d;
            out[j][i] = d;
        }
    }
    Ok(out)
}

/// CSV with a leading `id` column and one column per genotype.
pub fn hamming_csv(names: &[String], matrix: &[Vec<usize>]) -> Result<String> {
    if names.len() != matrix.len() {
        return Err(Error::invalid("hamming_csv", "one name per row required"));
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(std::iter::once("id").chain(names.iter().map(String::as_str)))?;
    for (name, row) in names.iter().zip(matrix) {
        w.write_record(std::iter::once(name.clone()).chain(row.iter().map(|d| d.to_string())))?;
    }
    super::finish_csv(w)
}

/// Strongest op on every edge of `head`, in edge order.
pub fn strongest_ops(arch: &ArchParams, head: usize) -> Vec<OpKind> {
    let ops = &arch.heads[head].ops;
    arch.op_strengths(head)
        .iter()
        .map(|s| {
            let mut best = 0;
            for (i, v) in s.iter().enumerate() {
                if *v > s[best] {
                    best = i;
                }
            }
            ops[best]
        })
        .collect()
}

/// Per-edge op choice implied by scored one-shot samples: for each edge of
/// `head`, the op whose samples containing that edge have the lowest mean
/// score. Edges no sample uses are `None`.
pub fn attributed_ops(candidates: &[(MultiHeadGenotype, f64)], head: usize) -> Vec<Option<OpKind>> {
    let Some((first, _)) = candidates.first() else {
        return Vec::new();
    };
    let topo = CellTopology::new(first.spec.nodes);
    let ops = &first.spec.ops;
    let mut sum = vec![vec![0.0; ops.len()]; topo.num_edges()];
    let mut count = vec![vec![0usize; ops.len()]; topo.num_edges()];
    for (g, score) in candidates {
        for gene in &g.heads[head] {
            for slot in 0..2 {
                let e = topo.edge_index(gene.inputs[slot], gene.node);
                let o = ops
                    .iter()
                    .position(|&x| x == gene.ops[slot])
                    .expect("op in spec");
                sum[e][o] += score;
                count[e][o] += 1;
            }
        }
    }
    sum.iter()
        .zip(&count)
        .map(|(s, c)| {
            let mut best: Option<(f64, usize)> = None;
            for o in 0..ops.len() {
                if c[o] == 0 {
                    continue;
                }
                let mean = s[o] / c[o] as f64;
                if best.is_none_or(|(b, _)| mean < b) {
                    best = Some((mean, o));
                }
            }
            best.map(|(_, o)| ops[o])
        })
        .collect()
}

/// Number of edges whose op equals `planted`.
pub fn count_recovered<'a, I>(ops: I, planted: OpKind) -> usize
where
    I: IntoIterator<Item = &'a Option<OpKind>>,
{
    ops.into_iter().filter(|o| **o == Some(planted)).count()
}
