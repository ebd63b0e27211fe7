use super::rng::Rng;
use super::{affine, affine_backward, init_matrix, init_uniform, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Lookup table `[vocab × dim]`.
#[derive(Clone, Debug)]
pub struct Embedding {
    name: String,
    vocab: usize,
    dim: usize,
}

impl Embedding {
    pub fn new(name: impl Into<String>, vocab: usize, dim: usize) -> Self {
        Embedding { name: name.into(), vocab, dim }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn init(&self, params: &mut ParamStore, rng: &mut Rng) -> Result<()> {
        params.insert(&self.name, init_uniform(&[self.vocab, self.dim], 0.1, rng))
    }

    pub fn forward(&self, params: &ParamStore, ids: &[u32]) -> Result<Tensor> {
        let table = params.get(&self.name)?;
        let mut out = Vec::with_capacity(ids.len() * self.dim);
        for &id in ids {
            if id as usize >= self.vocab {
                return Err(Error::ShapeMismatch(format!("id {id} outside vocabulary of {}", self.vocab)));
            }
            out.extend_from_slice(table.row(id as usize));
        }
        Tensor::from_vec(&[ids.len(), self.dim], out)
    }

    pub fn backward(&self, ids: &[u32], d_out: &Tensor, grads: &mut ParamStore) -> Result<()> {
        let g = grads.get_mut(&self.name)?;
        for (r, &id) in ids.iter().enumerate() {
            for (a, b) in g.row_mut(id as usize).iter_mut().zip(d_out.row(r)) {
                *a += b;
            }
        }
        Ok(())
    }
}

/// Row-wise affine map `y = W x + b`, `W: [out × in]`.
#[derive(Clone, Debug)]
pub struct Linear {
    w: String,
    b: String,
    input: usize,
    output: usize,
}

impl Linear {
    pub fn new(prefix: &str, input: usize, output: usize) -> Self {
        Linear { w: format!("{prefix}/w"), b: format!("{prefix}/b"), input, output }
    }

    pub fn init(&self, params: &mut ParamStore, rng: &mut Rng) -> Result<()> {
        params.insert(&self.w, init_matrix(self.output, self.input, rng))?;
        params.insert(&self.b, Tensor::zeros(&[self.output]))
    }

    pub fn forward(&self, params: &ParamStore, x: &Tensor) -> Result<Tensor> {
        if x.cols() != self.input {
            return Err(Error::ShapeMismatch(format!("linear expects width {}, got {}", self.input, x.cols())));
        }
        let w = params.get(&self.w)?;
        let b = params.get(&self.b)?;
        let rows: Vec<Vec<f64>> = (0..x.rows()).map(|r| affine(w, Some(b), x.row(r))).collect();
        Tensor::from_rows(&rows)
    }

    /// `x` is the forward input; returns `d x`.
    pub fn backward(&self, params: &ParamStore, x: &Tensor, d_out: &Tensor, grads: &mut ParamStore) -> Result<Tensor> {
        let w = params.get(&self.w)?;
        let mut dx = Tensor::zeros(x.shape());
        {
            let dw = grads.get_mut(&self.w)?;
            for r in 0..x.rows() {
                affine_backward(w, x.row(r), d_out.row(r), dw, Some(dx.row_mut(r)));
            }
        }
        let db = grads.get_mut(&self.b)?;
        for r in 0..d_out.rows() {
            db.data_mut().iter_mut().zip(d_out.row(r)).for_each(|(a, b)| *a += b);
        }
        Ok(dx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::rng::stream;

    #[test]
    fn embedding_scatter_adds_repeated_ids() {
        let e = Embedding::new("emb", 5, 2);
        let mut p = ParamStore::new();
        e.init(&mut p, &mut stream(1, "init", 0)).unwrap();
        let ids = [3, 1, 3];
        let out = e.forward(&p, &ids).unwrap();
        assert_eq!(out.row(0), out.row(2));
        let mut g = p.zeros_like();
        e.backward(&ids, &Tensor::from_vec(&[3, 2], vec![1.0; 6]).unwrap(), &mut g).unwrap();
        assert_eq!(g.get("emb").unwrap().row(3), &[2.0, 2.0]);
        assert_eq!(g.get("emb").unwrap().row(0), &[0.0, 0.0]);
        assert!(e.forward(&p, &[9]).is_err());
    }

    #[test]
    fn linear_backward_matches_definition() {
        let l = Linear::new("out", 3, 2);
        let mut p = ParamStore::new();
        l.init(&mut p, &mut stream(1, "init", 0)).unwrap();
        let x = Tensor::from_vec(&[1, 3], vec![1.0, 2.0, 3.0]).unwrap();
        let d = Tensor::from_vec(&[1, 2], vec![1.0, -1.0]).unwrap();
        let mut g = p.zeros_like();
        let dx = l.backward(&p, &x, &d, &mut g).unwrap();
        let w = p.get("out/w").unwrap();
        for j in 0..3 {
            assert!((dx.data()[j] - (w.at(0, j) - w.at(1, j))).abs() < 1e-15);
        }
        assert_eq!(g.get("out/w").unwrap().row(1), &[-1.0, -2.0, -3.0]);
        assert_eq!(g.get("out/b").unwrap().data(), &[1.0, -1.0]);
    }
}
