use std::sync::Arc;

use super::{DataError, Domain, DomainDataset, EngineRun};
use crate::linalg::Matrix;

/// Number of windows a run of `len` cycles yields: `max(len, T_w + 1) - T_w`.
pub fn window_count(len: usize, t_w: usize) -> usize {
    len.max(t_w + 1) - t_w
}

/// Position of a window inside a run.
///
/// `t` is the 1-based index of the predicted step in the left-zero-padded
/// series, so `T_w + 1 <= t <= max(T_i, T_w + 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct WindowRef {
    pub run: usize,
    pub t: usize,
}

/// A materialized `T_w × q` input slab.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSample {
    pub x: Matrix,
    /// RUL label (cycles) at the predicted step, for labelled domains.
    pub y: Option<f64>,
    pub domain: Domain,
    pub dataset: Arc<str>,
    pub unit_id: u32,
    pub t: usize,
    /// Original (unpadded) cycle whose RUL is predicted.
    pub cycle: usize,
}

/// Leading zero rows added to a run so that it yields at least one window.
fn padding(len: usize, t_w: usize) -> usize {
    (t_w + 1).saturating_sub(len)
}

fn fill_window(run: &EngineRun, t_w: usize, t: usize, out: &mut impl FnMut(usize, &[f64])) {
    let pad = padding(run.len(), t_w);
    // Padded rows t - T_w ..= t - 1 (1-based).
    for step in 0..t_w {
        let padded_row = t - t_w - 1 + step;
        if padded_row >= pad {
            out(step, run.features.row(padded_row - pad));
        }
    }
}

fn label_at(run: &EngineRun, t_w: usize, t: usize) -> Option<f64> {
    let pad = padding(run.len(), t_w);
    run.rul.as_ref().map(|y| y[t - pad - 1])
}

/// Time-window transform of one run: one sample per step `t = T_w + 1 ..= T_i`,
/// covering the `T_w` steps strictly before `t`. Runs no longer than `T_w` are
/// left-padded with zero rows to `T_w + 1` steps and yield exactly one sample.
pub fn window(run: &EngineRun, t_w: usize) -> Vec<WindowSample> {
    let q = run.num_features();
    let pad = padding(run.len(), t_w);
    (t_w + 1..=run.len().max(t_w + 1))
        .map(|t| {
            let mut x = Matrix::zeros(t_w, q);
            fill_window(run, t_w, t, &mut |step, row| x.row_mut(step).copy_from_slice(row));
            WindowSample {
                x,
                y: label_at(run, t_w, t),
                domain: Domain::Source,
                dataset: Arc::from(""),
                unit_id: run.unit_id,
                t,
                cycle: t - pad,
            }
        })
        .collect()
}

/// Inputs of a batch of windows, one `B × q` matrix per time step.
#[derive(Debug, Clone, PartialEq)]
pub struct SeqBatch {
    pub steps: Vec<Matrix>,
}

impl SeqBatch {
    pub fn batch_size(&self) -> usize {
        self.steps.first().map_or(0, Matrix::rows)
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// A single `T × q` window viewed as a batch of one.
    pub fn from_window(x: &Matrix) -> Self {
        Self {
            steps: (0..x.rows())
                .map(|t| Matrix::from_vec(1, x.cols(), x.row(t).to_vec()))
                .collect(),
        }
    }

    /// Stacks two batches along the batch dimension.
    pub fn concat(&self, other: &SeqBatch) -> SeqBatch {
        assert_eq!(self.len(), other.len(), "sequence lengths differ");
        let steps = self
            .steps
            .iter()
            .zip(&other.steps)
            .map(|(a, b)| {
                let mut data = a.as_slice().to_vec();
                data.extend_from_slice(b.as_slice());
                Matrix::from_vec(a.rows() + b.rows(), a.cols(), data)
            })
            .collect();
        SeqBatch { steps }
    }
}

/// All windows of one dataset, materialized lazily per batch.
#[derive(Debug, Clone)]
pub struct WindowSet {
    name: Arc<str>,
    domain: Domain,
    t_w: usize,
    runs: Vec<EngineRun>,
    refs: Vec<WindowRef>,
}

impl WindowSet {
    pub fn new(dataset: &DomainDataset, t_w: usize, domain: Domain) -> Result<Self, DataError> {
        Self::from_runs(dataset.name.clone(), dataset.runs.clone(), t_w, domain)
    }

    pub fn from_runs(
        name: Arc<str>,
        runs: Vec<EngineRun>,
        t_w: usize,
        domain: Domain,
    ) -> Result<Self, DataError> {
        if t_w == 0 {
            return Err(DataError::Invalid("window length must be at least 1".into()));
        }
        if let Some(first) = runs.first() {
            let q = first.num_features();
            if runs.iter().any(|r| r.num_features() != q || r.is_empty()) {
                return Err(DataError::Invalid(format!(
                    "{name}: runs must be nonempty and share a feature count"
                )));
            }
        }
        let refs = runs
            .iter()
            .enumerate()
            .flat_map(|(i, r)| (t_w + 1..=r.len().max(t_w + 1)).map(move |t| WindowRef { run: i, t }))
            .collect();
        Ok(Self {
            name,
            domain,
            t_w,
            runs,
            refs,
        })
    }

    /// Only the last window of each run (prediction at the final observed cycle).
    pub fn last_per_run(mut self) -> Self {
        let t_w = self.t_w;
        self.refs = self
            .runs
            .iter()
            .enumerate()
            .map(|(i, r)| WindowRef {
                run: i,
                t: r.len().max(t_w + 1),
            })
            .collect();
        self
    }

    pub fn len(&self) -> usize {
        self.refs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.refs.is_empty()
    }

    pub fn t_w(&self) -> usize {
        self.t_w
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn name(&self) -> &Arc<str> {
        &self.name
    }

    pub fn num_features(&self) -> usize {
        self.runs.first().map_or(0, EngineRun::num_features)
    }

    pub fn refs(&self) -> &[WindowRef] {
        &self.refs
    }

    pub fn runs(&self) -> &[EngineRun] {
        &self.runs
    }

    pub fn is_labeled(&self) -> bool {
        !self.runs.is_empty() && self.runs.iter().all(|r| r.rul.is_some())
    }

    /// Inputs for the windows at `indices` (positions in [`Self::refs`]).
    pub fn inputs(&self, indices: &[usize]) -> SeqBatch {
        let q = self.num_features();
        let b = indices.len();
        let mut steps = vec![Matrix::zeros(b, q); self.t_w];
        for (row, &i) in indices.iter().enumerate() {
            let r = self.refs[i];
            fill_window(&self.runs[r.run], self.t_w, r.t, &mut |step, values| {
                steps[step].row_mut(row).copy_from_slice(values)
            });
        }
        SeqBatch { steps }
    }

    /// RUL labels (cycles) for the windows at `indices`; `None` if unlabelled.
    pub fn labels(&self, indices: &[usize]) -> Option<Vec<f64>> {
        indices
            .iter()
            .map(|&i| {
                let r = self.refs[i];
                label_at(&self.runs[r.run], self.t_w, r.t)
            })
            .collect()
    }

    /// `(unit_id, cycle)` of the step each window predicts.
    pub fn origin(&self, i: usize) -> (u32, usize) {
        let r = self.refs[i];
        let run = &self.runs[r.run];
        (run.unit_id, r.t - padding(run.len(), self.t_w))
    }

    pub fn sample(&self, i: usize) -> WindowSample {
        let r = self.refs[i];
        let run = &self.runs[r.run];
        let mut x = Matrix::zeros(self.t_w, self.num_features());
        fill_window(run, self.t_w, r.t, &mut |step, row| x.row_mut(step).copy_from_slice(row));
        WindowSample {
            x,
            y: label_at(run, self.t_w, r.t),
            domain: self.domain,
            dataset: self.name.clone(),
            unit_id: run.unit_id,
            t: r.t,
            cycle: r.t - padding(run.len(), self.t_w),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::label_rul;

    fn ramp(len: usize, q: usize) -> EngineRun {
        let run = EngineRun::new(9, Matrix::from_fn(len, q, |t, j| (t + 1) as f64 + 0.1 * j as f64));
        label_rul(&run, 125.0).unwrap()
    }

    #[test]
    fn long_run_window_count_and_contents() {
        let samples = window(&ramp(32, 2), 30);
        assert_eq!(samples.len(), 2);
        let first = &samples[0];
        assert_eq!(first.t, 31);
        assert_eq!(first.x.row(0)[0], 1.0);
        assert_eq!(first.x.row(29)[0], 30.0);
        assert_eq!(first.y, Some(1.0));
        assert_eq!(samples[1].y, Some(0.0));
    }

    #[test]
    fn short_run_is_left_padded() {
        let samples = window(&ramp(10, 3), 30);
        assert_eq!(samples.len(), 1);
        let x = &samples[0].x;
        assert_eq!(x.rows(), 30);
        assert!((0..21).all(|r| x.row(r).iter().all(|&v| v == 0.0)));
        assert_eq!(x.row(21)[0], 1.0);
        assert_eq!(x.row(29)[0], 9.0);
        assert_eq!(samples[0].cycle, 10);
        assert_eq!(samples[0].y, Some(0.0));
    }

    #[test]
    fn exact_length_run() {
        // T_i = T_w: padded to T_w + 1 with a single zero row.
        let samples = window(&ramp(5, 1), 5);
        assert_eq!(samples.len(), 1);
        assert_eq!(samples[0].x.column(0), vec![0.0, 1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn window_set_matches_per_run_transform() {
        let ds = DomainDataset::new("toy", vec![ramp(12, 2), ramp(4, 2), ramp(7, 2)]);
        let set = WindowSet::new(&ds, 5, Domain::Source).unwrap();
        assert_eq!(set.len(), ds.window_count(5));
        let expected: Vec<WindowSample> = ds.runs.iter().flat_map(|r| window(r, 5)).collect();
        let all: Vec<usize> = (0..set.len()).collect();
        let batch = set.inputs(&all);
        for (i, s) in expected.iter().enumerate() {
            for step in 0..5 {
                assert_eq!(batch.steps[step].row(i), s.x.row(step));
            }
            assert_eq!(set.sample(i).x, s.x);
        }
        let labels = set.labels(&all).unwrap();
        assert_eq!(labels, expected.iter().map(|s| s.y.unwrap()).collect::<Vec<_>>());
    }

    #[test]
    fn unlabeled_set_has_no_labels() {
        let ds = DomainDataset::new("toy", vec![ramp(12, 2)]).without_labels();
        let set = WindowSet::new(&ds, 5, Domain::Target).unwrap();
        assert!(set.labels(&[0, 1]).is_none());
    }

    #[test]
    fn last_per_run_picks_final_cycle() {
        let ds = DomainDataset::new("toy", vec![ramp(12, 2), ramp(3, 2)]);
        let set = WindowSet::new(&ds, 5, Domain::Source).unwrap().last_per_run();
        assert_eq!(set.len(), 2);
        assert_eq!(set.origin(0), (9, 12));
        assert_eq!(set.origin(1), (9, 3));
        assert_eq!(set.labels(&[0, 1]).unwrap(), vec![0.0, 0.0]);
    }

    proptest::proptest! {
        #[test]
        fn label_index_in_range(len in 1usize..80, t_w in 1usize..40) {
            let samples = window(&ramp(len, 1), t_w);
            proptest::prop_assert_eq!(samples.len(), window_count(len, t_w));
            for s in &samples {
                proptest::prop_assert!(s.t > t_w && s.t <= len.max(t_w + 1));
            }
        }
    }
}
