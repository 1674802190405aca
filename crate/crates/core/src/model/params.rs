use std::collections::HashMap;

use rand::Rng;

use super::ModelConfig;
use crate::autodiff::{Gradients, Tape, Var};
use crate::molio::vocab::{ATOM_VOCAB_SIZE, BLOCK_VOCAB_SIZE, POSITION_VOCAB_SIZE};
use crate::graph::EDGE_KINDS;
use crate::tensor::Tensor;

/// Named parameter tensors in a fixed order.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

/// (name, shape, fan_in); fan_in 0 marks layer-norm gains (init 1) and 1 marks embeddings.
fn layout(cfg: &ModelConfig) -> Vec<(String, Vec<usize>, usize)> {
    let (h, hf, he, hr) = (cfg.h, cfg.h_ffn, cfg.h_edge, cfg.h_rbf);
    let mut out: Vec<(String, Vec<usize>, usize)> = Vec::new();
    let mut add = |name: String, shape: &[usize], fan_in: usize| out.push((name, shape.to_vec(), fan_in));
    add("embed.block".into(), &[BLOCK_VOCAB_SIZE, h], 1);
    add("embed.atom".into(), &[ATOM_VOCAB_SIZE, h], 1);
    add("embed.pos".into(), &[POSITION_VOCAB_SIZE, h], 1);
    add("embed.edge".into(), &[EDGE_KINDS, he], 1);
    let edge_in = 2 * h + he + hr;
    for phi in ["phi_s", "phi_v"] {
        add(format!("{phi}.w1_i"), &[h, h], edge_in);
        add(format!("{phi}.w1_j"), &[h, h], edge_in);
        add(format!("{phi}.w1_edge"), &[he, h], edge_in);
        add(format!("{phi}.w1_rbf"), &[hr, h], edge_in);
        add(format!("{phi}.b1"), &[h], edge_in);
        add(format!("{phi}.w2"), &[h, h], h);
        add(format!("{phi}.b2"), &[h], h);
    }
    add("phi_h.w1".into(), &[2 * h, h], 2 * h);
    add("phi_h.b1".into(), &[h], 2 * h);
    add("phi_h.w2".into(), &[h, h], h);
    add("phi_h.b2".into(), &[h], h);
    for l in 0..cfg.layers {
        let p = |s: &str| format!("layer{l}.{s}");
        add(p("ln1.gamma"), &[h], 0);
        add(p("ln1.beta"), &[h], usize::MAX);
        add(p("attn.wq"), &[h, 4 * h], h);
        add(p("attn.wk"), &[h, 4 * h], h);
        add(p("attn.wvh"), &[h, h], h);
        add(p("attn.wvv"), &[h, h], h);
        add(p("attn.woh"), &[h, h], h);
        add(p("attn.wov"), &[h, h], h);
        add(p("phi_r.w1"), &[he + hr, he], he + hr);
        add(p("phi_r.b1"), &[he], he + hr);
        add(p("phi_r.w2"), &[he, 1], he);
        add(p("phi_r.b2"), &[1], he);
        add(p("ln2.gamma"), &[h], 0);
        add(p("ln2.beta"), &[h], usize::MAX);
        add(p("ffn.w1"), &[h, h], h);
        add(p("ffn.w2"), &[h, h], h);
        add(p("phi_ffn.w1"), &[2 * h, hf], 2 * h);
        add(p("phi_ffn.b1"), &[hf], 2 * h);
        add(p("phi_ffn.w2"), &[hf, 2 * h], hf);
        add(p("phi_ffn.b2"), &[2 * h], hf);
        add(p("ln_u.gamma"), &[h], 0);
        add(p("ln_u.beta"), &[h], usize::MAX);
    }
    add("head.w1".into(), &[h, h], h);
    add("head.w2".into(), &[h, h], h);
    add("phi_out.w1".into(), &[2 * h, h], 2 * h);
    add("phi_out.b1".into(), &[h], 2 * h);
    add("phi_out.w2".into(), &[h, h], h);
    add("phi_out.b2".into(), &[h], h);
    add("phi_e.w1".into(), &[h, h], h);
    add("phi_e.b1".into(), &[h], h);
    add("phi_e.w2".into(), &[h, 1], h);
    add("phi_e.b2".into(), &[1], h);
    out
}

impl ModelParams {
    /// Weights and biases uniform in ±1/√fan_in, embeddings uniform in ±1, LN gain 1 and bias 0.
    pub fn init<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Self {
        let entries = layout(cfg)
            .into_iter()
            .map(|(name, shape, fan_in)| {
                let numel = shape.iter().product();
                let data = match fan_in {
                    0 => vec![1.0; numel],
                    usize::MAX => vec![0.0; numel],
                    f => {
                        let bound = 1.0 / (f as f64).sqrt();
                        (0..numel).map(|_| rng.random_range(-bound..=bound)).collect()
                    }
                };
                (name, Tensor::new(shape, data).expect("layout shape"))
            })
            .collect();
        Self::from_named(entries)
    }

    pub fn from_named(entries: Vec<(String, Tensor)>) -> Self {
        let (names, tensors): (Vec<String>, Vec<Tensor>) = entries.into_iter().unzip();
        let index = names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        Self { names, tensors, index }
    }

    /// True when names and shapes match what `cfg` expects.
    pub fn matches(&self, cfg: &ModelConfig) -> bool {
        let want = layout(cfg);
        want.len() == self.len()
            && want.iter().zip(self.iter()).all(|((n, s, _), (name, t))| n == name && s.as_slice() == t.shape())
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index.get(name).map(|&i| &mut self.tensors[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Places every parameter on `tape` as a differentiable leaf.
    pub fn bind<'p>(&'p self, tape: &mut Tape) -> BoundParams<'p> {
        let vars = self.tensors.iter().map(|t| tape.leaf(t.clone())).collect();
        BoundParams { params: self, vars }
    }
}

/// Parameters placed on a tape.
pub struct BoundParams<'p> {
    params: &'p ModelParams,
    vars: Vec<Var>,
}

impl BoundParams<'_> {
    pub fn var(&self, name: &str) -> Var {
        let i = *self.params.index.get(name).unwrap_or_else(|| panic!("unknown parameter {name}"));
        self.vars[i]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    /// Gradients in parameter order; zeros for parameters the output does not reach.
    pub fn collect(&self, grads: &Gradients, tape: &Tape) -> Vec<Tensor> {
        self.vars.iter().map(|&v| grads.wrt(v, tape)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn init_respects_shapes_and_bounds() {
        let cfg = ModelConfig::desk();
        let p = ModelParams::init(&cfg, &mut ChaCha8Rng::seed_from_u64(0));
        assert!(p.matches(&cfg));
        assert!(!p.matches(&ModelConfig::tiny()));
        assert_eq!(p.get("layer0.attn.wq").unwrap().shape(), &[64, 256]);
        assert_eq!(p.get("layer0.attn.wvh").unwrap().shape(), &[64, 64]);
        assert!(p.get("layer2.ln1.gamma").unwrap().data().iter().all(|&v| v == 1.0));
        assert!(p.get("layer2.ln1.beta").unwrap().data().iter().all(|&v| v == 0.0));
        let bound = 1.0 / 8.0;
        assert!(p.get("layer1.ffn.w1").unwrap().data().iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn init_is_deterministic() {
        let cfg = ModelConfig::tiny();
        let a = ModelParams::init(&cfg, &mut ChaCha8Rng::seed_from_u64(3));
        let b = ModelParams::init(&cfg, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(a, b);
    }
}
