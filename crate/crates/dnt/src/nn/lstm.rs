//! Single-layer fully-gated LSTM with backpropagation through time.

use crate::error::{Error, Result};
use crate::nn::tensor::{Parameter, Tensor};
use crate::rng::SplitMix64;

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// One gate's parameters: input-to-hidden matrix `c x v`, hidden-to-hidden
/// matrix `v x v`, bias `v`.
#[derive(Debug, Clone)]
pub struct Gate {
    pub wx: Parameter,
    pub wh: Parameter,
    pub b: Parameter,
}

impl Gate {
    fn new(name: &str, c: usize, v: usize, bias_init: f64, rng: &mut SplitMix64) -> Self {
        let sx = 1.0 / (c as f64).sqrt();
        let sh = 1.0 / (v as f64).sqrt();
        let wx: Vec<f64> = (0..c * v).map(|_| rng.uniform(-sx, sx)).collect();
        let wh: Vec<f64> = (0..v * v).map(|_| rng.uniform(-sh, sh)).collect();
        Gate {
            wx: Parameter::new(format!("{name}.wx"), Tensor::new(vec![c, v], wx).unwrap()),
            wh: Parameter::new(format!("{name}.wh"), Tensor::new(vec![v, v], wh).unwrap()),
            b: Parameter::new(format!("{name}.b"), Tensor::filled(vec![v], bias_init)),
        }
    }

    /// a[j] = sum_i x[i]·wx[i,j] + sum_k h[k]·wh[k,j] + b[j]
    fn preactivation(&self, x: &[f64], h: &[f64], v: usize) -> Vec<f64> {
        let mut a = self.b.value.data().to_vec();
        let wx = self.wx.value.data();
        for (i, &xv) in x.iter().enumerate() {
            if xv == 0.0 {
                continue;
            }
            let row = &wx[i * v..(i + 1) * v];
            for j in 0..v {
                a[j] += xv * row[j];
            }
        }
        let wh = self.wh.value.data();
        for (k, &hv) in h.iter().enumerate() {
            if hv == 0.0 {
                continue;
            }
            let row = &wh[k * v..(k + 1) * v];
            for j in 0..v {
                a[j] += hv * row[j];
            }
        }
        a
    }
}

/// Per-gate gradient tensors mirroring [`Gate`].
#[derive(Debug, Clone)]
pub struct GateGrads {
    pub wx: Tensor,
    pub wh: Tensor,
    pub b: Tensor,
}

impl GateGrads {
    fn zeros(c: usize, v: usize) -> Self {
        GateGrads {
            wx: Tensor::zeros(vec![c, v]),
            wh: Tensor::zeros(vec![v, v]),
            b: Tensor::zeros(vec![v]),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LstmGrads {
    pub input_gate: GateGrads,
    pub forget_gate: GateGrads,
    pub output_gate: GateGrads,
    pub candidate: GateGrads,
}

/// Activations recorded for one time step.
#[derive(Debug, Clone)]
struct StepRecord {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    i: Vec<f64>,
    f: Vec<f64>,
    o: Vec<f64>,
    g: Vec<f64>,
    tanh_c: Vec<f64>,
}

/// Cache for backpropagation through time.
#[derive(Debug, Clone)]
pub struct LstmCache {
    steps: Vec<StepRecord>,
}

/// Fully-gated LSTM cell: sigmoid input/forget/output gates, tanh candidate
/// and output squashing. Initial hidden and cell states are zero.
#[derive(Debug, Clone)]
pub struct LstmCell {
    pub input_size: usize,
    pub hidden_size: usize,
    pub input_gate: Gate,
    pub forget_gate: Gate,
    pub output_gate: Gate,
    pub candidate: Gate,
}

impl LstmCell {
    /// Uniform ±1/sqrt(fan-in) weights, zero biases except the forget-gate
    /// bias which starts at 1.0.
    pub fn new(name: &str, input_size: usize, hidden_size: usize, rng: &mut SplitMix64) -> Self {
        LstmCell {
            input_size,
            hidden_size,
            input_gate: Gate::new(&format!("{name}.input"), input_size, hidden_size, 0.0, rng),
            forget_gate: Gate::new(&format!("{name}.forget"), input_size, hidden_size, 1.0, rng),
            output_gate: Gate::new(&format!("{name}.output"), input_size, hidden_size, 0.0, rng),
            candidate: Gate::new(&format!("{name}.cand"), input_size, hidden_size, 0.0, rng),
        }
    }

    /// 4·(c·v + v·v + v)
    pub fn param_count(&self) -> usize {
        let (c, v) = (self.input_size, self.hidden_size);
        4 * (c * v + v * v + v)
    }

    /// One recurrence step. Returns (h_new, c_new) and records activations.
    fn step(&self, x: &[f64], h: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>, StepRecord) {
        let v = self.hidden_size;
        let i: Vec<f64> =
            self.input_gate.preactivation(x, h, v).iter().map(|&a| sigmoid(a)).collect();
        let f: Vec<f64> =
            self.forget_gate.preactivation(x, h, v).iter().map(|&a| sigmoid(a)).collect();
        let o: Vec<f64> =
            self.output_gate.preactivation(x, h, v).iter().map(|&a| sigmoid(a)).collect();
        let g: Vec<f64> =
            self.candidate.preactivation(x, h, v).iter().map(|&a| a.tanh()).collect();
        let mut c_new = vec![0.0; v];
        let mut tanh_c = vec![0.0; v];
        let mut h_new = vec![0.0; v];
        for j in 0..v {
            c_new[j] = f[j] * c[j] + i[j] * g[j];
            tanh_c[j] = c_new[j].tanh();
            h_new[j] = o[j] * tanh_c[j];
        }
        let record = StepRecord {
            x: x.to_vec(),
            h_prev: h.to_vec(),
            c_prev: c.to_vec(),
            i,
            f,
            o,
            g,
            tanh_c,
        };
        (h_new, c_new, record)
    }

    /// Runs the recurrence over the whole sequence and returns the final
    /// hidden state h_T together with the BPTT cache.
    pub fn forward(&self, inputs: &[Vec<f64>]) -> Result<(Vec<f64>, LstmCache)> {
        if inputs.is_empty() {
            return Err(Error::Usage("lstm sequence must be non-empty".into()));
        }
        for x in inputs {
            if x.len() != self.input_size {
                return Err(Error::Config(format!(
                    "lstm expects input extent {}, got {}",
                    self.input_size,
                    x.len()
                )));
            }
        }
        let v = self.hidden_size;
        let mut h = vec![0.0; v];
        let mut c = vec![0.0; v];
        let mut steps = Vec::with_capacity(inputs.len());
        for x in inputs {
            let (h_new, c_new, record) = self.step(x, &h, &c);
            steps.push(record);
            h = h_new;
            c = c_new;
        }
        Ok((h, LstmCache { steps }))
    }

    /// Backpropagation through time from a gradient on the final hidden
    /// state. Returns per-step input gradients and parameter gradients.
    pub fn backward(&self, cache: &LstmCache, grad_h_final: &[f64]) -> (Vec<Vec<f64>>, LstmGrads) {
        let (cin, v) = (self.input_size, self.hidden_size);
        let t_len = cache.steps.len();
        let mut grads = LstmGrads {
            input_gate: GateGrads::zeros(cin, v),
            forget_gate: GateGrads::zeros(cin, v),
            output_gate: GateGrads::zeros(cin, v),
            candidate: GateGrads::zeros(cin, v),
        };
        let mut dx_all = vec![vec![0.0; cin]; t_len];
        let mut dh = grad_h_final.to_vec();
        let mut dc = vec![0.0; v];

        for t in (0..t_len).rev() {
            let s = &cache.steps[t];
            let mut da_i = vec![0.0; v];
            let mut da_f = vec![0.0; v];
            let mut da_o = vec![0.0; v];
            let mut da_g = vec![0.0; v];
            let mut dc_prev = vec![0.0; v];
            for j in 0..v {
                let do_gate = dh[j] * s.tanh_c[j];
                let dct = dc[j] + dh[j] * s.o[j] * (1.0 - s.tanh_c[j] * s.tanh_c[j]);
                let di = dct * s.g[j];
                let dg = dct * s.i[j];
                let df = dct * s.c_prev[j];
                dc_prev[j] = dct * s.f[j];
                da_i[j] = di * s.i[j] * (1.0 - s.i[j]);
                da_f[j] = df * s.f[j] * (1.0 - s.f[j]);
                da_o[j] = do_gate * s.o[j] * (1.0 - s.o[j]);
                da_g[j] = dg * (1.0 - s.g[j] * s.g[j]);
            }

            let mut dh_prev = vec![0.0; v];
            let mut dx = vec![0.0; cin];
            for (gate, da) in [
                (&self.input_gate, &da_i),
                (&self.forget_gate, &da_f),
                (&self.output_gate, &da_o),
                (&self.candidate, &da_g),
            ] {
                let wx = gate.wx.value.data();
                let wh = gate.wh.value.data();
                for i in 0..cin {
                    let row = &wx[i * v..(i + 1) * v];
                    let mut acc = 0.0;
                    for j in 0..v {
                        acc += row[j] * da[j];
                    }
                    dx[i] += acc;
                }
                for k in 0..v {
                    let row = &wh[k * v..(k + 1) * v];
                    let mut acc = 0.0;
                    for j in 0..v {
                        acc += row[j] * da[j];
                    }
                    dh_prev[k] += acc;
                }
            }
            for (gate_grads, da) in [
                (&mut grads.input_gate, &da_i),
                (&mut grads.forget_gate, &da_f),
                (&mut grads.output_gate, &da_o),
                (&mut grads.candidate, &da_g),
            ] {
                let gwx = gate_grads.wx.data_mut();
                for (i, &xv) in s.x.iter().enumerate() {
                    if xv == 0.0 {
                        continue;
                    }
                    let row = &mut gwx[i * v..(i + 1) * v];
                    for j in 0..v {
                        row[j] += xv * da[j];
                    }
                }
                let gwh = gate_grads.wh.data_mut();
                for (k, &hv) in s.h_prev.iter().enumerate() {
                    if hv == 0.0 {
                        continue;
                    }
                    let row = &mut gwh[k * v..(k + 1) * v];
                    for j in 0..v {
                        row[j] += hv * da[j];
                    }
                }
                let gb = gate_grads.b.data_mut();
                for j in 0..v {
                    gb[j] += da[j];
                }
            }
            dx_all[t] = dx;
            dh = dh_prev;
            dc = dc_prev;
        }
        (dx_all, grads)
    }

    pub fn gates(&self) -> [&Gate; 4] {
        [&self.input_gate, &self.forget_gate, &self.output_gate, &self.candidate]
    }

    pub fn params(&self) -> Vec<&Parameter> {
        self.gates().iter().flat_map(|g| [&g.wx, &g.wh, &g.b]).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter> {
        [
            &mut self.input_gate,
            &mut self.forget_gate,
            &mut self.output_gate,
            &mut self.candidate,
        ]
        .into_iter()
        .flat_map(|g| [&mut g.wx, &mut g.wh, &mut g.b])
        .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{check_gradient, DEFAULT_STEP};

    fn zeroed_cell(c: usize, v: usize) -> LstmCell {
        let mut rng = SplitMix64::new(0);
        let mut cell = LstmCell::new("lstm", c, v, &mut rng);
        for p in cell.params_mut() {
            p.value.fill(0.0);
        }
        cell
    }

    #[test]
    fn zero_cell_outputs_zero_hidden_state() {
        let cell = zeroed_cell(3, 4);
        let inputs = vec![vec![1.0, -2.0, 0.5]; 6];
        let (h, _) = cell.forward(&inputs).unwrap();
        assert!(h.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn empty_sequence_is_usage_error() {
        let cell = zeroed_cell(3, 4);
        assert!(matches!(cell.forward(&[]), Err(Error::Usage(_))));
    }

    #[test]
    fn extent_mismatch_is_config_error() {
        let cell = zeroed_cell(3, 4);
        assert!(matches!(cell.forward(&[vec![1.0, 2.0]]), Err(Error::Config(_))));
    }

    #[test]
    fn parameter_count_formula() {
        let mut rng = SplitMix64::new(1);
        let cell = LstmCell::new("lstm", 6, 5, &mut rng);
        assert_eq!(cell.param_count(), 4 * (6 * 5 + 5 * 5 + 5));
        let total: usize = cell.params().iter().map(|p| p.value.numel()).sum();
        assert_eq!(total, cell.param_count());

        let big = LstmCell::new("lstm", 1024, 1024, &mut rng);
        assert_eq!(big.param_count(), 8_392_704);
    }

    // Scalar cell evaluated against the gate equations written out by hand.
    #[test]
    fn single_step_matches_hand_evaluated_gates() {
        let mut cell = zeroed_cell(1, 1);
        cell.input_gate.wx.value.data_mut()[0] = 0.5;
        cell.input_gate.b.value.data_mut()[0] = 0.1;
        cell.forget_gate.wx.value.data_mut()[0] = -0.3;
        cell.forget_gate.b.value.data_mut()[0] = 1.0;
        cell.output_gate.wx.value.data_mut()[0] = 0.8;
        cell.output_gate.b.value.data_mut()[0] = -0.2;
        cell.candidate.wx.value.data_mut()[0] = 1.1;
        cell.candidate.b.value.data_mut()[0] = 0.05;

        let x = 0.7;
        let (h, _) = cell.forward(&[vec![x]]).unwrap();

        let sig = |a: f64| 1.0 / (1.0 + (-a).exp());
        let i = sig(0.5 * x + 0.1);
        let f = sig(-0.3 * x + 1.0);
        let o = sig(0.8 * x - 0.2);
        let g = (1.1 * x + 0.05).tanh();
        let c = f * 0.0 + i * g;
        let expected = o * c.tanh();
        assert!((h[0] - expected).abs() < 1e-15, "{} vs {}", h[0], expected);
    }

    #[test]
    fn length_one_sequence_equals_single_step() {
        let mut rng = SplitMix64::new(8);
        let cell = LstmCell::new("lstm", 4, 3, &mut rng);
        let x: Vec<f64> = (0..4).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let (h_seq, _) = cell.forward(&[x.clone()]).unwrap();
        let (h_step, _, _) = cell.step(&x, &[0.0; 3], &[0.0; 3]);
        assert_eq!(h_seq, h_step);
    }

    // BPTT over 16 steps, all 4·(6·5 + 5·5 + 5) parameters plus inputs.
    #[test]
    fn bptt_gradients_match_finite_differences() {
        let mut rng = SplitMix64::new(21);
        let cell = LstmCell::new("lstm", 6, 5, &mut rng);
        let inputs: Vec<Vec<f64>> =
            (0..16).map(|_| (0..6).map(|_| rng.uniform(-1.0, 1.0)).collect()).collect();
        let weights: Vec<f64> = (0..5).map(|_| rng.uniform(-1.0, 1.0)).collect();

        let (h, cache) = cell.forward(&inputs).unwrap();
        assert_eq!(h.len(), 5);
        let (dx_all, grads) = cell.backward(&cache, &weights);

        let loss = |cl: &LstmCell, ins: &[Vec<f64>]| -> f64 {
            let (h, _) = cl.forward(ins).unwrap();
            h.iter().zip(&weights).map(|(a, b)| a * b).sum()
        };

        // Parameter gradients, gate by gate.
        let gate_grads = [
            (&grads.input_gate, 0usize),
            (&grads.forget_gate, 1),
            (&grads.output_gate, 2),
            (&grads.candidate, 3),
        ];
        for (gg, gate_idx) in gate_grads {
            for (part, analytic) in [(0usize, &gg.wx), (1, &gg.wh), (2, &gg.b)] {
                let read = |cl: &LstmCell| -> Vec<f64> {
                    let g = cl.gates()[gate_idx];
                    match part {
                        0 => g.wx.value.data().to_vec(),
                        1 => g.wh.value.data().to_vec(),
                        _ => g.b.value.data().to_vec(),
                    }
                };
                let mut vals = read(&cell);
                let r = check_gradient(
                    |v: &[f64]| {
                        let mut cl = cell.clone();
                        {
                            let g = match gate_idx {
                                0 => &mut cl.input_gate,
                                1 => &mut cl.forget_gate,
                                2 => &mut cl.output_gate,
                                _ => &mut cl.candidate,
                            };
                            match part {
                                0 => g.wx.value.data_mut().copy_from_slice(v),
                                1 => g.wh.value.data_mut().copy_from_slice(v),
                                _ => g.b.value.data_mut().copy_from_slice(v),
                            }
                        }
                        loss(&cl, &inputs)
                    },
                    &mut vals,
                    analytic.data(),
                    DEFAULT_STEP,
                );
                assert!(
                    r.max_rel_error < 1e-5,
                    "gate {gate_idx} part {part} error {}",
                    r.max_rel_error
                );
            }
        }

        // Input gradients at the first, middle, and last step.
        for &t in &[0usize, 7, 15] {
            let mut vals = inputs[t].clone();
            let r = check_gradient(
                |v: &[f64]| {
                    let mut ins = inputs.clone();
                    ins[t] = v.to_vec();
                    loss(&cell, &ins)
                },
                &mut vals,
                &dx_all[t],
                DEFAULT_STEP,
            );
            assert!(r.max_rel_error < 1e-5, "input step {t} error {}", r.max_rel_error);
        }
    }
}
