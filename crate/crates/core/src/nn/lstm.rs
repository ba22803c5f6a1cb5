use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{bias_view, check_shape, column_sums, fingerprint, glorot_uniform, matrix_view, sigmoid, NnError, Parameters, TensorView};
use crate::linalg::{gemm_into, Matrix, Vector};

/// Gate blocks inside the stacked LSTM parameters, in storage order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gate {
    Forget,
    Input,
    Output,
    Cell,
}

impl Gate {
    pub const ALL: [Gate; 4] = [Gate::Forget, Gate::Input, Gate::Output, Gate::Cell];

    fn index(self) -> usize {
        self as usize
    }
}

/// One LSTM layer. The four gates are stacked row-wise in the order
/// forget, input, output, candidate: `w` is `4h × q`, `r` is `4h × h`, `b` has `4h` entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmParams {
    pub w: Matrix,
    pub r: Matrix,
    pub b: Vector,
}

impl LstmParams {
    pub fn zeros(q: usize, h: usize) -> Self {
        Self {
            w: Matrix::zeros(4 * h, q),
            r: Matrix::zeros(4 * h, h),
            b: Vector::zeros(4 * h),
        }
    }

    /// Glorot-uniform matrices per gate, zero biases except the forget gate at 1.
    pub fn init(q: usize, h: usize, rng: &mut impl Rng) -> Self {
        let w = glorot_uniform(4 * h, q, q, h, rng);
        let r = glorot_uniform(4 * h, h, h, h, rng);
        let mut b = Vector::zeros(4 * h);
        b.as_mut_slice()[Self::gate_rows(h, Gate::Forget)].fill(1.0);
        Self { w, r, b }
    }

    pub fn hidden(&self) -> usize {
        self.r.cols()
    }

    pub fn input_dim(&self) -> usize {
        self.w.cols()
    }

    pub fn gate_rows(h: usize, gate: Gate) -> Range<usize> {
        gate.index() * h..(gate.index() + 1) * h
    }

    /// `h × q` input weights of one gate.
    pub fn input_weights(&self, gate: Gate) -> Matrix {
        let h = self.hidden();
        let rows = Self::gate_rows(h, gate);
        Matrix::from_fn(h, self.input_dim(), |i, j| self.w[(rows.start + i, j)])
    }

    /// `h × h` recurrent weights of one gate.
    pub fn recurrent_weights(&self, gate: Gate) -> Matrix {
        let h = self.hidden();
        let rows = Self::gate_rows(h, gate);
        Matrix::from_fn(h, h, |i, j| self.r[(rows.start + i, j)])
    }

    pub fn bias(&self, gate: Gate) -> &[f64] {
        &self.b.as_slice()[Self::gate_rows(self.hidden(), gate)]
    }

    pub fn validate(&self) -> Result<(), NnError> {
        let h = self.hidden();
        check_shape("lstm recurrent weights", (4 * h, h), self.r.shape())?;
        check_shape("lstm input weights", (4 * h, self.w.cols()), self.w.shape())?;
        check_shape("lstm bias", (1, 4 * h), (1, self.b.len()))
    }

    fn fingerprint(&self) -> u64 {
        fingerprint([self.w.as_slice(), self.r.as_slice(), self.b.as_slice()])
    }

    /// Runs the layer over a batch of sequences from a zero state.
    pub fn forward_seq(&self, xs: &[Matrix]) -> Result<LstmCache, NnError> {
        let batch = xs.first().map_or(0, Matrix::rows);
        self.forward_seq_from(xs, &LstmState::zeros(batch, self.hidden()))
    }

    pub fn forward_seq_from(&self, xs: &[Matrix], s0: &LstmState) -> Result<LstmCache, NnError> {
        self.validate()?;
        let (h, q) = (self.hidden(), self.input_dim());
        let batch = s0.h.rows();
        check_shape("lstm initial hidden state", (batch, h), s0.h.shape())?;
        check_shape("lstm initial cell state", (batch, h), s0.c.shape())?;
        for x in xs {
            check_shape("lstm input step", (batch, q), x.shape())?;
        }

        let steps = xs.len();
        let mut gates = Vec::with_capacity(steps);
        let mut cells = Vec::with_capacity(steps + 1);
        let mut tanh_cells = Vec::with_capacity(steps);
        let mut hidden = Vec::with_capacity(steps + 1);
        cells.push(s0.c.clone());
        hidden.push(s0.h.clone());

        for x in xs {
            let mut z = Matrix::zeros(batch, 4 * h);
            for row in 0..batch {
                z.row_mut(row).copy_from_slice(self.b.as_slice());
            }
            gemm_into(x, false, &self.w, true, &mut z, 1.0);
            gemm_into(hidden.last().expect("seeded"), false, &self.r, true, &mut z, 1.0);

            let c_prev = cells.last().expect("seeded");
            let mut c = Matrix::zeros(batch, h);
            let mut tc = Matrix::zeros(batch, h);
            let mut hn = Matrix::zeros(batch, h);
            for row in 0..batch {
                let zr = z.row_mut(row);
                for v in &mut zr[..3 * h] {
                    *v = sigmoid(*v);
                }
                for v in &mut zr[3 * h..] {
                    *v = v.tanh();
                }
                let zr = z.row(row);
                let cp = c_prev.row(row);
                let (cr, tcr, hr) = (c.row_mut(row), tc.row_mut(row), hn.row_mut(row));
                for k in 0..h {
                    let (f, i, o, g) = (zr[k], zr[h + k], zr[2 * h + k], zr[3 * h + k]);
                    cr[k] = f * cp[k] + i * g;
                    tcr[k] = cr[k].tanh();
                    hr[k] = o * tcr[k];
                }
            }
            gates.push(z);
            cells.push(c);
            tanh_cells.push(tc);
            hidden.push(hn);
        }

        Ok(LstmCache {
            fingerprint: self.fingerprint(),
            q,
            h,
            batch,
            xs: xs.to_vec(),
            gates,
            cells,
            tanh_cells,
            hidden,
        })
    }

    /// Backpropagation through time. Returns parameter gradients and the
    /// gradient for every input step.
    pub fn backward_seq(&self, cache: &LstmCache, grad: SeqGrad<'_>) -> Result<(LstmParams, Vec<Matrix>), NnError> {
        let (h, q) = (self.hidden(), self.input_dim());
        if cache.h != h || cache.q != q {
            return Err(NnError::StaleCache("lstm shape"));
        }
        if cache.fingerprint != self.fingerprint() {
            return Err(NnError::StaleCache("lstm parameters changed"));
        }
        let steps = cache.xs.len();
        let batch = cache.batch;
        match grad {
            SeqGrad::Last(g) => check_shape("lstm output gradient", (batch, h), g.shape())?,
            SeqGrad::All(gs) => {
                if gs.len() != steps {
                    return Err(NnError::Shape {
                        op: "lstm output gradient steps",
                        expected: (steps, h),
                        got: (gs.len(), h),
                    });
                }
                for g in gs {
                    check_shape("lstm output gradient", (batch, h), g.shape())?;
                }
            }
        }

        let mut grads = LstmParams::zeros(q, h);
        let mut dxs = vec![Matrix::zeros(0, 0); steps];
        let mut dh_next = Matrix::zeros(batch, h);
        let mut dc_next = Matrix::zeros(batch, h);
        let mut dz = Matrix::zeros(batch, 4 * h);
        let mut db = vec![0.0; 4 * h];

        for t in (0..steps).rev() {
            let mut dh = dh_next;
            match grad {
                SeqGrad::Last(g) if t + 1 == steps => dh.add_scaled(g, 1.0)?,
                SeqGrad::All(gs) => dh.add_scaled(&gs[t], 1.0)?,
                _ => {}
            }
            let (gates, c_prev, tc) = (&cache.gates[t], &cache.cells[t], &cache.tanh_cells[t]);
            for row in 0..batch {
                let gr = gates.row(row);
                let (dhr, cpr, tcr) = (dh.row(row), c_prev.row(row), tc.row(row));
                let dcn = dc_next.row_mut(row);
                let dzr = dz.row_mut(row);
                for k in 0..h {
                    let (f, i, o, g) = (gr[k], gr[h + k], gr[2 * h + k], gr[3 * h + k]);
                    let dc = dcn[k] + dhr[k] * o * (1.0 - tcr[k] * tcr[k]);
                    dzr[k] = dc * cpr[k] * f * (1.0 - f);
                    dzr[h + k] = dc * g * i * (1.0 - i);
                    dzr[2 * h + k] = dhr[k] * tcr[k] * o * (1.0 - o);
                    dzr[3 * h + k] = dc * i * (1.0 - g * g);
                    dcn[k] = dc * f;
                }
            }
            gemm_into(&dz, true, &cache.xs[t], false, &mut grads.w, 1.0);
            gemm_into(&dz, true, &cache.hidden[t], false, &mut grads.r, 1.0);
            for (acc, v) in db.iter_mut().zip(column_sums(&dz)) {
                *acc += v;
            }
            let mut dx = Matrix::zeros(batch, q);
            gemm_into(&dz, false, &self.w, false, &mut dx, 0.0);
            dxs[t] = dx;
            let mut dhp = Matrix::zeros(batch, h);
            gemm_into(&dz, false, &self.r, false, &mut dhp, 0.0);
            dh_next = dhp;
        }
        grads.b = Vector::from(db);
        Ok((grads, dxs))
    }
}

impl Parameters for LstmParams {
    fn tensors(&self, prefix: &str) -> Vec<TensorView<'_>> {
        vec![
            matrix_view(prefix, "w", &self.w),
            matrix_view(prefix, "r", &self.r),
            bias_view(prefix, "b", &self.b),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![self.w.as_mut_slice(), self.r.as_mut_slice(), self.b.as_mut_slice()]
    }
}

/// Cell and hidden state for a batch, each `B × h`.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub c: Matrix,
    pub h: Matrix,
}

impl LstmState {
    pub fn zeros(batch: usize, h: usize) -> Self {
        Self {
            c: Matrix::zeros(batch, h),
            h: Matrix::zeros(batch, h),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.c.is_finite() && self.h.is_finite()
    }
}

/// Upstream gradient for an LSTM layer: either only for the final hidden
/// state or for every step's output.
#[derive(Debug, Clone, Copy)]
pub enum SeqGrad<'a> {
    Last(&'a Matrix),
    All(&'a [Matrix]),
}

/// Activations recorded by a forward pass, one entry per step.
#[derive(Debug, Clone)]
pub struct LstmCache {
    fingerprint: u64,
    q: usize,
    h: usize,
    batch: usize,
    xs: Vec<Matrix>,
    /// Activated gates `[f, i, o, c̃]` per step, `B × 4h`.
    gates: Vec<Matrix>,
    /// `C_0 ..= C_T`.
    cells: Vec<Matrix>,
    tanh_cells: Vec<Matrix>,
    /// `h_0 ..= h_T`.
    hidden: Vec<Matrix>,
}

impl LstmCache {
    pub fn steps(&self) -> usize {
        self.xs.len()
    }

    /// Hidden states `h_1 ..= h_T`.
    pub fn outputs(&self) -> &[Matrix] {
        &self.hidden[1..]
    }

    pub fn final_hidden(&self) -> &Matrix {
        self.hidden.last().expect("cache always holds the initial state")
    }

    pub fn final_state(&self) -> LstmState {
        LstmState {
            c: self.cells.last().expect("initial state").clone(),
            h: self.final_hidden().clone(),
        }
    }

    /// Activated value of one gate at step `t` (0-based) for batch row `row`.
    pub fn gate(&self, t: usize, row: usize, gate: Gate) -> &[f64] {
        &self.gates[t].row(row)[LstmParams::gate_rows(self.h, gate)]
    }

    pub fn cell(&self, t: usize) -> &Matrix {
        &self.cells[t + 1]
    }
}

/// Runs one `T × q` window from state `s0` (batch of one); returns `h_T`.
pub fn lstm_forward(p: &LstmParams, x: &Matrix, s0: &LstmState) -> Result<(Vector, LstmCache), NnError> {
    check_shape("lstm window", (x.rows(), p.input_dim()), x.shape())?;
    let xs: Vec<Matrix> = (0..x.rows()).map(|t| Matrix::from_vec(1, x.cols(), x.row(t).to_vec())).collect();
    let cache = p.forward_seq_from(&xs, s0)?;
    let h_t = Vector::from(cache.final_hidden().row(0).to_vec());
    Ok((h_t, cache))
}

/// Gradients for a single window given `∂L/∂h_T`; the input gradient is `T × q`.
pub fn lstm_backward(p: &LstmParams, cache: &LstmCache, grad_ht: &[f64]) -> Result<(LstmParams, Matrix), NnError> {
    let g = Matrix::from_vec(1, grad_ht.len(), grad_ht.to_vec());
    let (grads, dxs) = p.backward_seq(cache, SeqGrad::Last(&g))?;
    let q = p.input_dim();
    let data = dxs.into_iter().flat_map(Matrix::into_vec).collect::<Vec<_>>();
    Ok((grads, Matrix::from_vec(data.len() / q.max(1), q, data)))
}
