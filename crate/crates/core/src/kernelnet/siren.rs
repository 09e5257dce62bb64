use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Activation, Bound, Graph, ParamId, ParamStore, Tensor, Var};

/// Hidden widths, frequency multiplier and activation of a kernel network.
#[derive(Clone, Debug, PartialEq)]
pub struct SirenConfig {
    pub hidden: Vec<usize>,
    pub omega0: f64,
    /// ω₀ of the networks over subgroup coordinates in the separable
    /// layouts; `None` uses `omega0`. Joint networks always use `omega0`.
    pub subgroup_omega0: Option<f64>,
    pub activation: Activation,
}

impl Default for SirenConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            omega0: 10.0,
            subgroup_omega0: None,
            activation: Activation::Sine,
        }
    }
}

/// Multilayer perceptron with hidden layers `act(ω₀·W x + b)` and an affine
/// output layer.
#[derive(Clone, Debug)]
pub struct Siren {
    widths: Vec<usize>,
    omega0: f64,
    activation: Activation,
    layers: Vec<(ParamId, ParamId)>,
}

impl Siren {
    /// Registers weights `{name}.{l}.w` / `{name}.{l}.b` in `store`.
    ///
    /// The first layer draws from U(±1/fan_in), later layers from
    /// U(±√(6/fan_in)/ω₀); biases from U(±1/√fan_in).
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        widths: &[usize],
        omega0: f64,
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::arg(format!("invalid network widths {widths:?}")));
        }
        if !(omega0 > 0.0) {
            return Err(Error::arg(format!("ω₀ must be positive, got {omega0}")));
        }
        let mut layers = Vec::with_capacity(widths.len() - 1);
        for (l, pair) in widths.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = if l == 0 {
                1.0 / fan_in as f64
            } else {
                (6.0 / fan_in as f64).sqrt() / omega0
            };
            let bias = 1.0 / (fan_in as f64).sqrt();
            let w = store.add(
                &format!("{name}.{l}.w"),
                Tensor::uniform(&[fan_out, fan_in], -bound, bound, rng),
            )?;
            let b = store.add(&format!("{name}.{l}.b"), Tensor::uniform(&[fan_out], -bias, bias, rng))?;
            layers.push((w, b));
        }
        Ok(Self {
            widths: widths.to_vec(),
            omega0,
            activation,
            layers,
        })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn in_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn out_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn omega0(&self) -> f64 {
        self.omega0
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    /// `(weight, bias)` ids per layer.
    pub fn layers(&self) -> &[(ParamId, ParamId)] {
        &self.layers
    }

    /// Evaluates the network on `coords: (n, in_dim)`, giving `(n, out_dim)`.
    pub fn forward(&self, g: &mut Graph, params: &Bound, coords: Var) -> Result<Var> {
        match g.shape(coords) {
            &[_, d] if d == self.in_dim() => {}
            s => {
                return Err(Error::arg(format!(
                    "network expects (n, {}) coordinates, got {s:?}",
                    self.in_dim()
                )))
            }
        }
        let mut x = coords;
        let last = self.layers.len() - 1;
        for (l, &(w, b)) in self.layers.iter().enumerate() {
            if l < last {
                let pre = g.linear(x, params.var(w), Some(params.var(b)), self.omega0)?;
                x = g.activation(pre, self.activation);
            } else {
                x = g.linear(x, params.var(w), Some(params.var(b)), 1.0)?;
            }
        }
        Ok(x)
    }

    /// Forward pass on plain arrays.
    pub fn evaluate(&self, store: &ParamStore, coords: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let p = store.bind(&mut g, false);
        let c = g.constant(coords.clone());
        let y = self.forward(&mut g, &p, c)?;
        Ok(g.value(y).clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn net(widths: &[usize], omega0: f64, seed: u64) -> (Siren, ParamStore) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = Siren::init(&mut store, "k", widths, omega0, Activation::Sine, &mut rng).unwrap();
        (s, store)
    }

    fn set(store: &mut ParamStore, id: ParamId, values: &[f64]) {
        let shape = store.get(id).shape().to_vec();
        store.set(id, Tensor::new(&shape, values.to_vec()).unwrap()).unwrap();
    }

    #[test]
    fn hand_evaluated_single_unit() {
        let (s, mut store) = net(&[1, 1, 1], 10.0, 0);
        let [(w1, b1), (w2, b2)] = [s.layers()[0], s.layers()[1]];
        set(&mut store, w1, &[1.0]);
        set(&mut store, b1, &[0.0]);
        set(&mut store, w2, &[1.0]);
        set(&mut store, b2, &[0.0]);
        let y = s.evaluate(&store, &Tensor::new(&[1, 1], vec![PI / 20.0]).unwrap()).unwrap();
        assert!((y.item() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn one_hidden_layer_frequency_identity() {
        let (s10, store10) = net(&[2, 16, 1], 10.0, 3);
        let (s20, mut store20) = net(&[2, 16, 1], 20.0, 3);
        let (w1, b1) = s20.layers()[0];
        store20.set(w1, store10.get(s10.layers()[0].0).map(|v| v / 2.0)).unwrap();
        store20.set(b1, store10.get(s10.layers()[0].1).clone()).unwrap();
        let (w2, b2) = s20.layers()[1];
        store20.set(w2, store10.get(s10.layers()[1].0).clone()).unwrap();
        store20.set(b2, store10.get(s10.layers()[1].1).clone()).unwrap();
        let x = Tensor::uniform(&[10, 2], -1.0, 1.0, &mut ChaCha8Rng::seed_from_u64(4));
        let a = s10.evaluate(&store10, &x).unwrap();
        let b = s20.evaluate(&store20, &x).unwrap();
        assert!(a.max_abs_diff(&b) < 1e-14);
    }

    #[test]
    fn zero_weights_return_final_bias() {
        let (s, mut store) = net(&[3, 5, 5, 2], 10.0, 1);
        for &(w, _) in s.layers() {
            let shape = store.get(w).shape().to_vec();
            store.set(w, Tensor::zeros(&shape)).unwrap();
        }
        let bias = store.get(s.layers()[2].1).clone();
        let x = Tensor::uniform(&[4, 3], -1.0, 1.0, &mut ChaCha8Rng::seed_from_u64(2));
        let y = s.evaluate(&store, &x).unwrap();
        for row in y.data().chunks(2) {
            assert_eq!(row, bias.data());
        }
    }

    #[test]
    fn zero_input_with_zero_biases_gives_output_bias() {
        let (s, mut store) = net(&[2, 4, 1], 10.0, 1);
        let (_, b1) = s.layers()[0];
        set(&mut store, b1, &[0.0; 4]);
        let y = s.evaluate(&store, &Tensor::zeros(&[1, 2])).unwrap();
        assert_eq!(y.item(), store.get(s.layers()[1].1).item());
    }

    #[test]
    fn seeded_init_is_bit_identical() {
        let (_, a) = net(&[2, 64, 64, 4], 10.0, 42);
        let (_, b) = net(&[2, 64, 64, 4], 10.0, 42);
        for id in a.ids() {
            assert_eq!(a.get(id), b.get(id));
        }
    }

    #[test]
    fn init_bounds() {
        let (s, store) = net(&[2, 64, 64, 4], 10.0, 7);
        let first = store.get(s.layers()[0].0).max_abs();
        assert!(first <= 0.5 && first > 0.4);
        let later = store.get(s.layers()[1].0).max_abs();
        let bound = (6.0f64 / 64.0).sqrt() / 10.0;
        assert!(later <= bound && later > 0.9 * bound);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let (s, store) = net(&[2, 4, 1], 10.0, 0);
        assert!(s.evaluate(&store, &Tensor::zeros(&[3, 3])).is_err());
    }

    #[test]
    fn forward_passes_grad_check() {
        let (s, store) = net(&[2, 8, 8, 3], 10.0, 11);
        let params: Vec<Tensor> = store.ids().map(|id| store.get(id).clone()).collect();
        let x = Tensor::uniform(&[5, 2], -1.0, 1.0, &mut ChaCha8Rng::seed_from_u64(1));
        let proj = std::rc::Rc::new(Tensor::uniform(&[5, 3], -1.0, 1.0, &mut ChaCha8Rng::seed_from_u64(2)));
        let err = crate::tensor::grad_check_many(
            |g, vars| {
                let bound = Bound::from_vars(vars.to_vec());
                let c = g.constant(x.clone());
                let y = s.forward(g, &bound, c)?;
                g.dot_const(y, proj.clone())
            },
            &params,
            1e-6,
            None,
        )
        .unwrap();
        assert!(err < 1e-5, "{err}");
    }
}
