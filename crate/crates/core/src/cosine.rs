//! Pairwise cosine distances between differential vectors.
//!
//! `dist(i, j) = 1 - <d_i, d_j> / (||d_i|| ||d_j||)`, with a zero diagonal.
//!
//! The production path is a cascade: `k` stages connected in a chain. During a
//! pass, vectors are streamed into the first stage in ascending client order.
//! Each stage latches the first vector that reaches it, computes the dot
//! product of its latched vector with every later arrival, and forwards those
//! later arrivals to the next stage. One pass therefore fills `k` rows of the
//! upper triangle. Pass `j` starts the stream at client `j * k`, so
//! `ceil(n / k)` passes cover every pair exactly once. The first pass is fed
//! directly by the preprocessor; vectors streamed in later passes are counted
//! as reloads from memory.
//!
//! [`naive_distances`] is a plain double loop kept as an oracle. Both paths use
//! [`dot64`] so their outputs are bit-identical.

use std::io::{self, Write};
use std::sync::mpsc::{sync_channel, Receiver, SyncSender};
use std::thread;

use crate::error::PipelineError;
use crate::model::{dot64, DifferentialVector, L2Norms};

const LINK_DEPTH: usize = 32;

/// Symmetric `n x n` distance matrix with a zero diagonal, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    entries: Vec<f64>,
}

impl DistanceMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            entries: vec![0.0; n * n],
        }
    }

    /// Builds a matrix from explicit rows, checking shape, zero diagonal and
    /// exact symmetry.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self, PipelineError> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(PipelineError::MalformedMatrix("rows are not all of length n"));
        }
        let entries: Vec<f64> = rows.into_iter().flatten().collect();
        let m = Self { n, entries };
        for i in 0..n {
            if m.get(i, i) != 0.0 {
                return Err(PipelineError::MalformedMatrix("non-zero diagonal"));
            }
            for j in 0..i {
                if m.get(i, j).to_bits() != m.get(j, i).to_bits() {
                    return Err(PipelineError::MalformedMatrix("matrix is not symmetric"));
                }
                if !m.get(i, j).is_finite() {
                    return Err(PipelineError::MalformedMatrix("non-finite entry"));
                }
            }
        }
        Ok(m)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.n..(i + 1) * self.n]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    /// Stores `value` at `(i, j)` and copies it to `(j, i)`.
    fn set_pair(&mut self, i: usize, j: usize, value: f64) {
        self.entries[i * self.n + j] = value;
        self.entries[j * self.n + i] = value;
    }

    /// Every off-diagonal entry multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            n: self.n,
            entries: self.entries.iter().map(|v| v * factor).collect(),
        }
    }

    /// Relabels clients: entry `(i, j)` of the result is entry
    /// `(perm[i], perm[j])` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        assert_eq!(perm.len(), self.n);
        let mut out = Self::zeros(self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                out.entries[i * self.n + j] = self.get(perm[i], perm[j]);
            }
        }
        out
    }

    /// Row-major CSV with 17 significant digits per entry.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        for i in 0..self.n {
            let line: Vec<String> = self.row(i).iter().map(|v| format!("{v:.16e}")).collect();
            writeln!(out, "{}", line.join(","))?;
        }
        Ok(())
    }
}

/// Pass schedule and memory-traffic accounting of one cascade run.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CascadeReport {
    pub pass_count: usize,
    /// Vectors streamed into the first stage during each pass.
    pub vector_feeds_per_pass: Vec<usize>,
    /// Feeds not served directly by the preprocessor stream.
    pub total_memory_reloads: usize,
    pub dot_products_computed: usize,
}

impl CascadeReport {
    /// The report implied by the schedule alone, without running it.
    pub fn expected(n: usize, stages: usize) -> Self {
        assert!(stages > 0);
        let feeds: Vec<usize> = (0..n).step_by(stages).map(|start| n - start).collect();
        Self {
            pass_count: feeds.len(),
            total_memory_reloads: feeds.iter().sum::<usize>() - n,
            vector_feeds_per_pass: feeds,
            dot_products_computed: n * n.saturating_sub(1) / 2,
        }
    }
}

/// One dot product produced by a cascade stage. `row < col`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairDot {
    pub row: usize,
    pub col: usize,
    pub dot: f64,
}

/// Distance between two differential vectors given their dot product and norms.
///
/// Undefined cases are pinned: two zero vectors are at distance 0, a zero and
/// a non-zero vector at distance 1.
#[inline]
pub fn cosine_distance(dot: f64, norm_a: f64, norm_b: f64) -> f64 {
    match (norm_a == 0.0, norm_b == 0.0) {
        (false, false) => 1.0 - dot / (norm_a * norm_b),
        (true, true) => 0.0,
        _ => 1.0,
    }
}

fn validate(diffs: &[DifferentialVector], norms: &L2Norms) -> Result<(), PipelineError> {
    let Some(first) = diffs.first() else {
        return Err(PipelineError::NoClients);
    };
    if norms.len() != diffs.len() {
        return Err(PipelineError::ClientCountMismatch {
            what: "norms",
            expected: diffs.len(),
            found: norms.len(),
        });
    }
    for (i, d) in diffs.iter().enumerate() {
        if d.client != i {
            return Err(PipelineError::InvalidClientIndex {
                index: d.client,
                clients: diffs.len(),
            });
        }
        if d.len() != first.len() {
            return Err(PipelineError::DimensionMismatch {
                client: i,
                expected: first.len(),
                found: d.len(),
            });
        }
    }
    Ok(())
}

/// Runs the cascade and returns every upper-triangle dot product it computed,
/// in the order the stages produced them, together with the traffic report.
pub fn cascade_dot_products(
    diffs: &[DifferentialVector],
    stages: usize,
) -> Result<(Vec<PairDot>, CascadeReport), PipelineError> {
    if stages == 0 {
        return Err(PipelineError::StageCountZero);
    }
    let n = diffs.len();
    let mut dots = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    let mut report = CascadeReport::default();
    for start in (0..n).step_by(stages) {
        report.vector_feeds_per_pass.push(n - start);
        dots.extend(run_pass(diffs, start, stages));
    }
    report.pass_count = report.vector_feeds_per_pass.len();
    report.total_memory_reloads = report.vector_feeds_per_pass.iter().sum::<usize>() - n;
    report.dot_products_computed = dots.len();
    Ok((dots, report))
}

/// Cosine distance matrix through the cascade structure with `stages` stages.
pub fn cascade_distances(
    diffs: &[DifferentialVector],
    norms: &L2Norms,
    stages: usize,
) -> Result<(DistanceMatrix, CascadeReport), PipelineError> {
    validate(diffs, norms)?;
    let (dots, report) = cascade_dot_products(diffs, stages)?;
    let mut matrix = DistanceMatrix::zeros(diffs.len());
    for PairDot { row, col, dot } in dots {
        matrix.set_pair(row, col, cosine_distance(dot, norms[row], norms[col]));
    }
    Ok((matrix, report))
}

/// Direct double loop over `i < j`; the reference for [`cascade_distances`].
pub fn naive_distances(
    diffs: &[DifferentialVector],
    norms: &L2Norms,
) -> Result<DistanceMatrix, PipelineError> {
    validate(diffs, norms)?;
    let n = diffs.len();
    let mut matrix = DistanceMatrix::zeros(n);
    for i in 0..n {
        for j in i + 1..n {
            let dot = dot64(&diffs[i].values, &diffs[j].values);
            matrix.set_pair(i, j, cosine_distance(dot, norms[i], norms[j]));
        }
    }
    Ok(matrix)
}

/// One pass through the chain of stages, starting the stream at `start`.
fn run_pass(diffs: &[DifferentialVector], start: usize, stages: usize) -> Vec<PairDot> {
    let n = diffs.len();
    let active = stages.min(n - start);
    thread::scope(|scope| {
        let (feed, first) = sync_channel::<usize>(LINK_DEPTH);
        let mut upstream = Some(first);
        let mut workers = Vec::with_capacity(active);
        for s in 0..active {
            let input = upstream.take().expect("each stage has an input link");
            let downstream = if s + 1 < active {
                let (tx, rx) = sync_channel::<usize>(LINK_DEPTH);
                upstream = Some(rx);
                Some(tx)
            } else {
                None
            };
            workers.push(scope.spawn(move || stage(diffs, input, downstream)));
        }
        for v in start..n {
            feed.send(v).expect("first stage hung up early");
        }
        drop(feed);
        workers
            .into_iter()
            .flat_map(|w| w.join().expect("cascade stage panicked"))
            .collect()
    })
}

/// A single stage: latch the first arrival, then dot it with every later
/// arrival and pass those on.
fn stage(
    diffs: &[DifferentialVector],
    input: Receiver<usize>,
    output: Option<SyncSender<usize>>,
) -> Vec<PairDot> {
    let Ok(held) = input.recv() else {
        return Vec::new();
    };
    let latched = diffs[held].values.clone();
    let mut dots = Vec::new();
    for v in input.iter() {
        debug_assert!(held < v);
        dots.push(PairDot {
            row: held,
            col: v,
            dot: dot64(&latched, &diffs[v].values),
        });
        if let Some(next) = &output {
            next.send(v).expect("downstream stage hung up early");
        }
    }
    dots
}

#[cfg(test)]
mod tests {
    use super::*;

    fn diffs(rows: &[&[f32]]) -> (Vec<DifferentialVector>, L2Norms) {
        let d: Vec<DifferentialVector> = rows
            .iter()
            .enumerate()
            .map(|(i, r)| DifferentialVector {
                client: i,
                values: r.to_vec(),
            })
            .collect();
        let norms = L2Norms(d.iter().map(|v| dot64(&v.values, &v.values).sqrt()).collect());
        (d, norms)
    }

    #[test]
    fn orthogonal_pair_is_at_distance_one() {
        let (d, norms) = diffs(&[&[1.0, 0.0], &[0.0, 1.0]]);
        for k in 1..=4 {
            let (m, _) = cascade_distances(&d, &norms, k).unwrap();
            assert_eq!(m.get(0, 1), 1.0);
            assert_eq!(m.get(1, 0), 1.0);
        }
    }

    #[test]
    fn antiparallel_pair_is_at_distance_two() {
        let (d, norms) = diffs(&[&[1.0, 0.0], &[-2.0, 0.0]]);
        let (m, _) = cascade_distances(&d, &norms, 1).unwrap();
        assert_eq!(m.get(0, 1), 2.0);
    }

    #[test]
    fn identical_vectors_are_at_distance_zero() {
        let (d, norms) = diffs(&[&[0.3, -1.7, 2.2], &[0.3, -1.7, 2.2]]);
        let m = naive_distances(&d, &norms).unwrap();
        assert!(m.get(0, 1).abs() < 1e-12);
    }

    #[test]
    fn single_client_gives_zero_matrix() {
        let (d, norms) = diffs(&[&[1.0, 2.0]]);
        let m = naive_distances(&d, &norms).unwrap();
        assert_eq!(m.entries(), &[0.0]);
        let (c, report) = cascade_distances(&d, &norms, 3).unwrap();
        assert_eq!(c, m);
        assert_eq!(report.pass_count, 1);
        assert_eq!(report.dot_products_computed, 0);
    }

    #[test]
    fn zero_norm_conventions() {
        let (d, norms) = diffs(&[&[0.0, 0.0], &[0.0, 0.0], &[1.0, 1.0]]);
        let (m, _) = cascade_distances(&d, &norms, 2).unwrap();
        assert_eq!(m.get(0, 1), 0.0);
        assert_eq!(m.get(0, 2), 1.0);
        assert_eq!(m.get(2, 1), 1.0);
    }

    #[test]
    fn ten_clients_four_stages_schedule() {
        let rows: Vec<Vec<f32>> = (0..10).map(|i| vec![i as f32 + 1.0, 1.0]).collect();
        let refs: Vec<&[f32]> = rows.iter().map(|r| r.as_slice()).collect();
        let (d, norms) = diffs(&refs);
        let (_, report) = cascade_distances(&d, &norms, 4).unwrap();
        assert_eq!(report.pass_count, 3);
        assert_eq!(report.vector_feeds_per_pass, vec![10, 6, 2]);
        assert_eq!(report.total_memory_reloads, 8);
        assert_eq!(report.dot_products_computed, 45);
        assert_eq!(report, CascadeReport::expected(10, 4));
    }

    #[test]
    fn errors() {
        let (d, norms) = diffs(&[&[1.0, 0.0], &[0.0, 1.0]]);
        assert_eq!(
            cascade_distances(&d, &norms, 0).unwrap_err(),
            PipelineError::StageCountZero
        );
        let (mut bad, bad_norms) = diffs(&[&[1.0, 0.0], &[0.0, 1.0]]);
        bad[1].values.push(3.0);
        assert!(matches!(
            naive_distances(&bad, &bad_norms),
            Err(PipelineError::DimensionMismatch { client: 1, .. })
        ));
        assert!(matches!(
            naive_distances(&d, &L2Norms(vec![1.0])),
            Err(PipelineError::ClientCountMismatch { .. })
        ));
    }

    #[test]
    fn csv_dump_has_seventeen_significant_digits() {
        let (d, norms) = diffs(&[&[1.0, 0.0], &[1.0, 1.0]]);
        let m = naive_distances(&d, &norms).unwrap();
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        let cells: Vec<f64> = lines[0].split(',').map(|c| c.parse().unwrap()).collect();
        assert_eq!(cells[1].to_bits(), m.get(0, 1).to_bits());
        assert_eq!(lines[0].split(',').nth(1).unwrap().split('e').next().unwrap().len(), 18);
    }

    #[test]
    fn from_rows_checks_shape_and_symmetry() {
        assert!(DistanceMatrix::from_rows(vec![vec![0.0, 1.0], vec![1.0, 0.0]]).is_ok());
        assert!(DistanceMatrix::from_rows(vec![vec![0.0, 1.0], vec![0.5, 0.0]]).is_err());
        assert!(DistanceMatrix::from_rows(vec![vec![0.1, 1.0], vec![1.0, 0.0]]).is_err());
        assert!(DistanceMatrix::from_rows(vec![vec![0.0, 1.0]]).is_err());
    }
}
