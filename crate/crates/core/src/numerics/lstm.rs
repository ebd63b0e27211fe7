//! Multi-layer bidirectional LSTM with explicit backward pass.
//!
//! Cell: `z = W [x; h_prev] + b`, gates `i, f, g, o` in that order,
//! `c = f ⊙ c_prev + i ⊙ g`, `h = o ⊙ tanh(c)`.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::rng::Rng;
use super::{affine, affine_backward, init_matrix, sigmoid, ParamStore, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BiLstmSpec {
    pub layers: usize,
    pub hidden: usize,
    pub input_dim: usize,
}

impl BiLstmSpec {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.hidden == 0 || self.input_dim == 0 {
            return Err(Error::InvalidConfig(format!("BiLSTM dims must be >= 1, got {self:?}")));
        }
        Ok(())
    }

    pub fn output_dim(&self) -> usize {
        2 * self.hidden
    }
}

struct StepCache {
    xh: Vec<f64>,
    i: Vec<f64>,
    f: Vec<f64>,
    g: Vec<f64>,
    o: Vec<f64>,
    c_prev: Vec<f64>,
    tanh_c: Vec<f64>,
}

struct DirectionTape {
    // In processing order (reversed time for the backward direction).
    steps: Vec<StepCache>,
}

struct LayerTape {
    fwd: DirectionTape,
    bwd: DirectionTape,
    dropout_mask: Option<Vec<Vec<f64>>>,
}

/// Cached activations of one [`BiLstm::forward`] call.
pub struct BiLstmTape {
    layers: Vec<LayerTape>,
    len: usize,
}

#[derive(Clone, Debug)]
struct DirNames {
    w: String,
    b: String,
}

/// A stack of bidirectional LSTM layers whose parameters live under `prefix`.
#[derive(Clone, Debug)]
pub struct BiLstm {
    spec: BiLstmSpec,
    names: Vec<(DirNames, DirNames)>,
}

impl BiLstm {
    pub fn new(prefix: &str, spec: BiLstmSpec) -> Result<Self> {
        spec.validate()?;
        let names = (0..spec.layers)
            .map(|l| {
                let d = |dir: &str| DirNames {
                    w: format!("{prefix}/layer_{l}/{dir}/w"),
                    b: format!("{prefix}/layer_{l}/{dir}/b"),
                };
                (d("fwd"), d("bwd"))
            })
            .collect();
        Ok(BiLstm { spec, names })
    }

    pub fn spec(&self) -> BiLstmSpec {
        self.spec
    }

    fn layer_input(&self, layer: usize) -> usize {
        if layer == 0 {
            self.spec.input_dim
        } else {
            2 * self.spec.hidden
        }
    }

    /// Glorot weights, zero biases except the forget gate at +1.
    pub fn init(&self, params: &mut ParamStore, rng: &mut Rng) -> Result<()> {
        let h = self.spec.hidden;
        for (l, (fwd, bwd)) in self.names.iter().enumerate() {
            for dir in [fwd, bwd] {
                params.insert(&dir.w, init_matrix(4 * h, self.layer_input(l) + h, rng))?;
                let mut b = Tensor::zeros(&[4 * h]);
                b.data_mut()[h..2 * h].iter_mut().for_each(|v| *v = 1.0);
                params.insert(&dir.b, b)?;
            }
        }
        Ok(())
    }

    /// Runs the stack over `inputs: [T × input_dim]`, returning `[T × 2H]`.
    ///
    /// `dropout` gives one inverted-dropout rate per layer, applied to that
    /// layer's output, and the stream used to draw masks.
    pub fn forward(
        &self,
        params: &ParamStore,
        inputs: &Tensor,
        mut dropout: Option<(&[f64], &mut Rng)>,
    ) -> Result<(Tensor, BiLstmTape)> {
        if inputs.shape().len() != 2 || inputs.cols() != self.spec.input_dim || inputs.rows() == 0 {
            return Err(Error::ShapeMismatch(format!(
                "BiLSTM expects [T x {}] with T >= 1, got {:?}",
                self.spec.input_dim,
                inputs.shape()
            )));
        }
        let t_len = inputs.rows();
        let mut xs = inputs.to_rows();
        let mut tapes = Vec::with_capacity(self.spec.layers);
        for (l, (fwd, bwd)) in self.names.iter().enumerate() {
            let (hf, tf) = run_direction(params.get(&fwd.w)?, params.get(&fwd.b)?, &xs, false);
            let (hb, tb) = run_direction(params.get(&bwd.w)?, params.get(&bwd.b)?, &xs, true);
            let mut out: Vec<Vec<f64>> = hf.into_iter().zip(hb).map(|(a, b)| [a, b].concat()).collect();
            let mut mask = None;
            if let Some((rates, rng)) = dropout.as_mut() {
                let rate = rates.get(l).copied().unwrap_or(0.0);
                if rate > 0.0 {
                    let keep = 1.0 - rate;
                    let m: Vec<Vec<f64>> = out
                        .iter()
                        .map(|row| {
                            row.iter().map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 }).collect()
                        })
                        .collect();
                    for (row, mrow) in out.iter_mut().zip(&m) {
                        row.iter_mut().zip(mrow).for_each(|(v, k)| *v *= k);
                    }
                    mask = Some(m);
                }
            }
            tapes.push(LayerTape { fwd: tf, bwd: tb, dropout_mask: mask });
            xs = out;
        }
        Ok((Tensor::from_rows(&xs)?, BiLstmTape { layers: tapes, len: t_len }))
    }

    /// Accumulates parameter gradients and returns `d inputs`.
    pub fn backward(
        &self,
        params: &ParamStore,
        tape: &BiLstmTape,
        d_out: &Tensor,
        grads: &mut ParamStore,
    ) -> Result<Tensor> {
        let h = self.spec.hidden;
        if d_out.shape() != [tape.len, 2 * h] {
            return Err(Error::ShapeMismatch(format!(
                "BiLSTM backward expects [{} x {}], got {:?}",
                tape.len,
                2 * h,
                d_out.shape()
            )));
        }
        let mut d = d_out.to_rows();
        for (l, (fwd, bwd)) in self.names.iter().enumerate().rev() {
            let lt = &tape.layers[l];
            if let Some(mask) = &lt.dropout_mask {
                for (row, mrow) in d.iter_mut().zip(mask) {
                    row.iter_mut().zip(mrow).for_each(|(v, k)| *v *= k);
                }
            }
            let d_f: Vec<&[f64]> = d.iter().map(|r| &r[..h]).collect();
            let d_b: Vec<&[f64]> = d.iter().map(|r| &r[h..]).collect();
            let in_dim = self.layer_input(l);
            let mut dx = vec![vec![0.0; in_dim]; tape.len];
            backprop_direction(params.get(&fwd.w)?, &lt.fwd, &d_f, false, grads, fwd, &mut dx)?;
            backprop_direction(params.get(&bwd.w)?, &lt.bwd, &d_b, true, grads, bwd, &mut dx)?;
            d = dx;
        }
        Tensor::from_rows(&d)
    }
}

fn run_direction(w: &Tensor, b: &Tensor, xs: &[Vec<f64>], reverse: bool) -> (Vec<Vec<f64>>, DirectionTape) {
    let hid = b.len() / 4;
    let t_len = xs.len();
    let mut h = vec![0.0; hid];
    let mut c = vec![0.0; hid];
    let mut outs = vec![Vec::new(); t_len];
    let mut steps = Vec::with_capacity(t_len);
    for k in 0..t_len {
        let t = if reverse { t_len - 1 - k } else { k };
        let mut xh = xs[t].clone();
        xh.extend_from_slice(&h);
        let z = affine(w, Some(b), &xh);
        let i: Vec<f64> = z[..hid].iter().map(|&v| sigmoid(v)).collect();
        let f: Vec<f64> = z[hid..2 * hid].iter().map(|&v| sigmoid(v)).collect();
        let g: Vec<f64> = z[2 * hid..3 * hid].iter().map(|&v| v.tanh()).collect();
        let o: Vec<f64> = z[3 * hid..].iter().map(|&v| sigmoid(v)).collect();
        let c_prev = c;
        c = (0..hid).map(|j| f[j] * c_prev[j] + i[j] * g[j]).collect();
        let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
        h = (0..hid).map(|j| o[j] * tanh_c[j]).collect();
        outs[t] = h.clone();
        steps.push(StepCache { xh, i, f, g, o, c_prev, tanh_c });
    }
    (outs, DirectionTape { steps })
}

fn backprop_direction(
    w: &Tensor,
    tape: &DirectionTape,
    d_out: &[&[f64]],
    reverse: bool,
    grads: &mut ParamStore,
    names: &DirNames,
    dx: &mut [Vec<f64>],
) -> Result<()> {
    let t_len = d_out.len();
    let hid = w.rows() / 4;
    let in_dim = w.cols() - hid;
    let mut dh_next = vec![0.0; hid];
    let mut dc_next = vec![0.0; hid];
    let mut dz = vec![0.0; 4 * hid];
    let mut dxh = vec![0.0; in_dim + hid];
    let mut db_acc = vec![0.0; 4 * hid];
    let dw = grads.get_mut(&names.w)?;
    for k in (0..t_len).rev() {
        let t = if reverse { t_len - 1 - k } else { k };
        let s = &tape.steps[k];
        for j in 0..hid {
            let dh = d_out[t][j] + dh_next[j];
            let dc = dc_next[j] + dh * s.o[j] * (1.0 - s.tanh_c[j] * s.tanh_c[j]);
            let d_o = dh * s.tanh_c[j];
            let di = dc * s.g[j];
            let dg = dc * s.i[j];
            let df = dc * s.c_prev[j];
            dc_next[j] = dc * s.f[j];
            dz[j] = di * s.i[j] * (1.0 - s.i[j]);
            dz[hid + j] = df * s.f[j] * (1.0 - s.f[j]);
            dz[2 * hid + j] = dg * (1.0 - s.g[j] * s.g[j]);
            dz[3 * hid + j] = d_o * s.o[j] * (1.0 - s.o[j]);
        }
        dxh.iter_mut().for_each(|v| *v = 0.0);
        affine_backward(w, &s.xh, &dz, dw, Some(&mut dxh));
        db_acc.iter_mut().zip(&dz).for_each(|(a, b)| *a += b);
        for (a, b) in dx[t].iter_mut().zip(&dxh[..in_dim]) {
            *a += b;
        }
        dh_next.copy_from_slice(&dxh[in_dim..]);
    }
    grads.get_mut(&names.b)?.data_mut().iter_mut().zip(&db_acc).for_each(|(a, b)| *a += b);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::rng::stream;

    fn net(layers: usize, hidden: usize, input_dim: usize) -> (BiLstm, ParamStore) {
        let lstm = BiLstm::new("enc", BiLstmSpec { layers, hidden, input_dim }).unwrap();
        let mut p = ParamStore::new();
        lstm.init(&mut p, &mut stream(7, "init", 0)).unwrap();
        (lstm, p)
    }

    #[test]
    fn parameter_names_and_forget_bias() {
        let (_, p) = net(2, 3, 4);
        let names: Vec<_> = p.names().collect();
        assert_eq!(names[0], "enc/layer_0/fwd/w");
        assert_eq!(names[7], "enc/layer_1/bwd/b");
        assert_eq!(p.get("enc/layer_1/fwd/w").unwrap().shape(), &[12, 9]);
        let b = p.get("enc/layer_0/fwd/b").unwrap().data();
        assert_eq!(&b[3..6], &[1.0, 1.0, 1.0]);
        assert_eq!(&b[..3], &[0.0; 3]);
    }

    #[test]
    fn single_step_is_finite() {
        let (lstm, p) = net(2, 3, 4);
        let x = Tensor::from_vec(&[1, 4], vec![0.5, -1.0, 2.0, 0.1]).unwrap();
        let (y, _) = lstm.forward(&p, &x, None).unwrap();
        assert_eq!(y.shape(), &[1, 6]);
        assert!(y.is_finite());
    }

    #[test]
    fn zero_fixed_point() {
        let (lstm, mut p) = net(2, 3, 4);
        p.iter_mut().for_each(|(_, t)| t.data_mut().iter_mut().for_each(|v| *v = 0.0));
        let x = Tensor::zeros(&[5, 4]);
        let (y, _) = lstm.forward(&p, &x, None).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_wrong_width() {
        let (lstm, p) = net(1, 2, 4);
        assert!(matches!(lstm.forward(&p, &Tensor::zeros(&[2, 3]), None), Err(Error::ShapeMismatch(_))));
    }

    // Scalar loss Σ c ⊙ y with fixed random c; central differences, h = 1e-5.
    #[test]
    fn gradients_match_finite_differences() {
        let (lstm, p) = net(2, 2, 3);
        let mut rng = stream(11, "test", 0);
        let x = super::super::init_uniform(&[3, 3], 1.0, &mut rng);
        let c = super::super::init_uniform(&[3, 4], 1.0, &mut rng);
        let loss = |p: &ParamStore| {
            let (y, _) = lstm.forward(p, &x, None).unwrap();
            y.data().iter().zip(c.data()).map(|(a, b)| a * b).sum::<f64>()
        };
        let (_, tape) = lstm.forward(&p, &x, None).unwrap();
        let mut grads = p.zeros_like();
        let dx = lstm.backward(&p, &tape, &c, &mut grads).unwrap();
        let h = 1e-5;
        let mut worst = 0.0f64;
        for i in 0..p.total_params() {
            let (_, _, v) = p.flat_get(i).unwrap();
            let mut q = p.clone();
            q.flat_set(i, v + h);
            let up = loss(&q);
            q.flat_set(i, v - h);
            let down = loss(&q);
            let num = (up - down) / (2.0 * h);
            let ana = grads.flat_get(i).unwrap().2;
            worst = worst.max((num - ana).abs() / num.abs().max(ana.abs()).max(1.0));
        }
        assert!(worst < 1e-6, "max relative error {worst}");
        // input gradient
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp.data_mut()[i] += h;
            let up: f64 = lstm.forward(&p, &xp, None).unwrap().0.data().iter().zip(c.data()).map(|(a, b)| a * b).sum();
            xp.data_mut()[i] -= 2.0 * h;
            let down: f64 = lstm.forward(&p, &xp, None).unwrap().0.data().iter().zip(c.data()).map(|(a, b)| a * b).sum();
            let num = (up - down) / (2.0 * h);
            assert!((num - dx.data()[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn dropout_gradients_use_the_same_mask() {
        let (lstm, p) = net(2, 2, 3);
        let x = super::super::init_uniform(&[4, 3], 1.0, &mut stream(3, "x", 0));
        let rates = [0.5, 0.3];
        let loss = |p: &ParamStore| {
            let mut rng = stream(5, "dropout", 0);
            lstm.forward(p, &x, Some((&rates, &mut rng))).unwrap().0.data().iter().sum::<f64>()
        };
        let mut rng = stream(5, "dropout", 0);
        let (y, tape) = lstm.forward(&p, &x, Some((&rates, &mut rng))).unwrap();
        let ones = Tensor::from_vec(y.shape(), vec![1.0; y.len()]).unwrap();
        let mut grads = p.zeros_like();
        lstm.backward(&p, &tape, &ones, &mut grads).unwrap();
        for i in (0..p.total_params()).step_by(7) {
            let v = p.flat_get(i).unwrap().2;
            let mut q = p.clone();
            q.flat_set(i, v + 1e-5);
            let up = loss(&q);
            q.flat_set(i, v - 1e-5);
            let num = (up - loss(&q)) / 2e-5;
            assert!((num - grads.flat_get(i).unwrap().2).abs() < 1e-6);
        }
    }
}
