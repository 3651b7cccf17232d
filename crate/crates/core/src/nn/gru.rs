use super::Module;
use crate::error::TensorError;
use crate::tensor::kernels;
use crate::tensor::{Graph, NodeId, Scalar, Tensor};
use rand::Rng;

/// Single-layer GRU cell.
///
/// Gates are packed as `[reset | update | candidate]` along the columns of
/// `wx: [in, 3H]` and `wh: [H, 3H]`. The update rule is
/// `h' = h + u ⊙ (n − h)`, so an update gate of 0 keeps the previous state.
#[derive(Clone, Debug, PartialEq)]
pub struct Gru<T: Scalar = f32> {
    wx: Tensor<T>,
    bx: Tensor<T>,
    wh: Tensor<T>,
    bh: Tensor<T>,
}

impl<T: Scalar> Gru<T> {
    pub fn new(input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let init = |rows: usize, rng: &mut dyn rand::RngCore| {
            let a = (1.0 / hidden as f64).sqrt();
            let data = (0..rows * 3 * hidden)
                .map(|_| T::of(rng.gen_range(-a..a)))
                .collect();
            Tensor::from_parts(vec![rows, 3 * hidden], data)
        };
        Self {
            wx: init(input, rng),
            bx: Tensor::zeros(&[3 * hidden]),
            wh: init(hidden, rng),
            bh: Tensor::zeros(&[3 * hidden]),
        }
    }

    pub fn from_tensors(mut t: Vec<Tensor<T>>) -> Result<Self, TensorError> {
        if t.len() != 4 {
            return Err(TensorError::Dimension(format!("gru needs 4 tensors, got {}", t.len())));
        }
        let bh = t.pop().unwrap();
        let wh = t.pop().unwrap();
        let bx = t.pop().unwrap();
        let wx = t.pop().unwrap();
        let h3 = bh.len();
        let ok = wx.shape().len() == 2
            && wx.shape()[1] == h3
            && bx.shape() == [h3]
            && wh.shape() == [h3 / 3, h3]
            && h3.is_multiple_of(3);
        if !ok {
            return Err(TensorError::Dimension("inconsistent gru tensors".into()));
        }
        Ok(Self { wx, bx, wh, bh })
    }

    pub fn hidden(&self) -> usize {
        self.bh.len() / 3
    }

    pub fn input(&self) -> usize {
        self.wx.shape()[0]
    }

    pub fn cast<U: Scalar>(&self) -> Gru<U> {
        Gru {
            wx: self.wx.cast(),
            bx: self.bx.cast(),
            wh: self.wh.cast(),
            bh: self.bh.cast(),
        }
    }

    /// Mutable access to the packed input-side bias (tests force gates with it).
    pub fn input_bias_mut(&mut self) -> &mut Tensor<T> {
        &mut self.bx
    }

    /// One recurrent step on the graph: `h_prev: [B, H]`, `x: [B, in]`.
    pub fn forward(
        &self,
        g: &mut Graph<T>,
        ids: &[NodeId],
        h_prev: NodeId,
        x: NodeId,
    ) -> Result<NodeId, TensorError> {
        let (hs, xs) = (g.shape(h_prev).to_vec(), g.shape(x).to_vec());
        let hd = self.hidden();
        if hs.len() != 2 || hs[1] != hd || xs.len() != 2 || xs[1] != self.input() || xs[0] != hs[0] {
            return Err(TensorError::Dimension(format!(
                "gru expects h [B, {hd}] and x [B, {}], got {hs:?} and {xs:?}",
                self.input()
            )));
        }
        if ids.len() != 4 {
            return Err(TensorError::Dimension("gru needs 4 bound parameters".into()));
        }
        let gx = g.matmul(x, ids[0]);
        let gx = g.add_bias(gx, ids[1]);
        let gh = g.matmul(h_prev, ids[2]);
        let gh = g.add_bias(gh, ids[3]);
        let (xr, xu, xn) = (g.slice_cols(gx, 0, hd), g.slice_cols(gx, hd, hd), g.slice_cols(gx, 2 * hd, hd));
        let (hr, hu, hn) = (g.slice_cols(gh, 0, hd), g.slice_cols(gh, hd, hd), g.slice_cols(gh, 2 * hd, hd));
        let r = g.add(xr, hr);
        let r = g.sigmoid(r);
        let u = g.add(xu, hu);
        let u = g.sigmoid(u);
        let rn = g.mul(r, hn);
        let n = g.add(xn, rn);
        let n = g.tanh(n);
        let d = g.sub(n, h_prev);
        let ud = g.mul(u, d);
        Ok(g.add(h_prev, ud))
    }

    /// Tape-free step over `rows` stacked states, same arithmetic as [`Gru::forward`].
    pub fn infer_rows(&self, h: &[T], x: &[T], rows: usize) -> Vec<T> {
        let hd = self.hidden();
        let mut gx = kernels::matmul(x, self.wx.data(), rows, self.input(), 3 * hd);
        kernels::add_bias(&mut gx, self.bx.data());
        let mut gh = kernels::matmul(h, self.wh.data(), rows, hd, 3 * hd);
        kernels::add_bias(&mut gh, self.bh.data());
        let mut out = Vec::with_capacity(rows * hd);
        for i in 0..rows {
            let (gxr, ghr) = (&gx[i * 3 * hd..(i + 1) * 3 * hd], &gh[i * 3 * hd..(i + 1) * 3 * hd]);
            for j in 0..hd {
                let r = kernels::sigmoid(gxr[j] + ghr[j]);
                let u = kernels::sigmoid(gxr[hd + j] + ghr[hd + j]);
                let n = (gxr[2 * hd + j] + r * ghr[2 * hd + j]).tanh();
                let hp = h[i * hd + j];
                out.push(hp + u * (n - hp));
            }
        }
        out
    }
}

impl<T: Scalar> Module<T> for Gru<T> {
    fn params(&self) -> Vec<&Tensor<T>> {
        vec![&self.wx, &self.bx, &self.wh, &self.bh]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        vec![&mut self.wx, &mut self.bx, &mut self.wh, &mut self.bh]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::bind;
    use crate::rng;

    #[test]
    fn closed_update_gate_keeps_state() {
        let mut gru = Gru::<f64>::new(3, 4, &mut rng::from_u64(1));
        for j in 4..8 {
            gru.input_bias_mut().data_mut()[j] = -1e3;
        }
        let h = vec![0.3, -0.2, 0.9, 0.1];
        let out = gru.infer_rows(&h, &[1.0, -1.0, 0.5], 1);
        for (a, b) in out.iter().zip(&h) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_everything_gives_zero_state() {
        let mut gru = Gru::<f32>::new(3, 4, &mut rng::from_u64(1));
        for p in gru.params_mut() {
            p.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        assert_eq!(gru.infer_rows(&[0.0; 4], &[0.0; 3], 1), vec![0.0; 4]);
    }

    #[test]
    fn graph_matches_tape_free() {
        let gru = Gru::<f32>::new(3, 5, &mut rng::from_u64(9));
        let h: Vec<f32> = (0..10).map(|i| (i as f32 * 0.3).cos() * 0.5).collect();
        let x: Vec<f32> = (0..6).map(|i| (i as f32 * 0.7).sin()).collect();
        let mut g = Graph::new();
        let ids = bind(&mut g, &gru, false);
        let hi = g.constant(Tensor::new(vec![2, 5], h.clone()).unwrap());
        let xi = g.constant(Tensor::new(vec![2, 3], x.clone()).unwrap());
        let out = gru.forward(&mut g, &ids, hi, xi).unwrap();
        assert_eq!(g.value(out).data(), gru.infer_rows(&h, &x, 2).as_slice());
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let gru = Gru::<f32>::new(3, 5, &mut rng::from_u64(9));
        let mut g = Graph::new();
        let ids = bind(&mut g, &gru, false);
        let hi = g.constant(Tensor::zeros(&[1, 4]));
        let xi = g.constant(Tensor::zeros(&[1, 3]));
        assert!(gru.forward(&mut g, &ids, hi, xi).is_err());
    }
}
