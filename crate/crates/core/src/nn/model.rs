use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Activation, DenseLayer, Gradients, LayerCache, NnError, Parameterized};

/// `h ↦ h + project(expand(h))`
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualBlock {
    pub expand: DenseLayer,
    pub project: DenseLayer,
}

/// Deep residual network: an input projection, a chain of residual blocks
/// producing the final representation, and a linear classification head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TeacherModel {
    pub input_proj: DenseLayer,
    pub blocks: Vec<ResidualBlock>,
    pub head: DenseLayer,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TeacherShape {
    pub d_in: usize,
    pub width: usize,
    pub hidden: usize,
    pub depth: usize,
    pub n_classes: usize,
}

impl Default for TeacherShape {
    fn default() -> Self {
        Self {
            d_in: 8,
            width: 16,
            hidden: 32,
            depth: 12,
            n_classes: 2,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct TeacherTrace {
    input: LayerCache,
    blocks: Vec<(LayerCache, LayerCache)>,
    head: LayerCache,
}

#[derive(Clone, Debug)]
pub struct TeacherOutput {
    pub final_rep: Vec<f64>,
    pub logits: Vec<f64>,
    /// `h_0 .. h_depth`, the residual stream after the projection and after each block.
    pub block_acts: Vec<Vec<f64>>,
    pub trace: TeacherTrace,
}

impl TeacherModel {
    pub fn new_random<R: Rng + ?Sized>(shape: TeacherShape, rng: &mut R) -> Self {
        let input_proj = DenseLayer::glorot(shape.d_in, shape.width, Activation::Identity, rng);
        let blocks = (0..shape.depth)
            .map(|_| {
                let expand = DenseLayer::glorot(shape.width, shape.hidden, Activation::Tanh, rng);
                let mut project =
                    DenseLayer::glorot(shape.hidden, shape.width, Activation::Identity, rng);
                // Keep the residual stream from growing with depth at init.
                let damp = 1.0 / (shape.depth as f64).sqrt();
                project.weight.data_mut().iter_mut().for_each(|w| *w *= damp);
                ResidualBlock { expand, project }
            })
            .collect();
        let head = DenseLayer::glorot(shape.width, shape.n_classes, Activation::Identity, rng);
        Self {
            input_proj,
            blocks,
            head,
        }
    }

    pub fn depth(&self) -> usize {
        self.blocks.len()
    }

    pub fn d_in(&self) -> usize {
        self.input_proj.input_dim()
    }

    pub fn width(&self) -> usize {
        self.input_proj.output_dim()
    }

    pub fn n_classes(&self) -> usize {
        self.head.output_dim()
    }

    pub fn validate(&self) -> Result<(), NnError> {
        let d = self.width();
        for b in &self.blocks {
            if b.expand.input_dim() != d
                || b.project.output_dim() != d
                || b.project.input_dim() != b.expand.output_dim()
            {
                return Err(NnError::Architecture("residual block widths"));
            }
        }
        if self.head.input_dim() != d {
            return Err(NnError::Architecture("head input width"));
        }
        Ok(())
    }

    /// Final representation only, without caching.
    pub fn final_rep(&self, x: &[f64]) -> Result<Vec<f64>, NnError> {
        let mut h = self.input_proj.forward(x)?;
        for b in &self.blocks {
            let f = b.project.forward(&b.expand.forward(&h)?)?;
            for (hi, fi) in h.iter_mut().zip(f) {
                *hi += fi;
            }
        }
        Ok(h)
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>, NnError> {
        self.head.forward(&self.final_rep(x)?)
    }

    pub fn forward(&self, x: &[f64]) -> Result<TeacherOutput, NnError> {
        let input = self.input_proj.forward_cached(x)?;
        let mut h = input.output.clone();
        let mut block_acts = vec![h.clone()];
        let mut caches = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let e = b.expand.forward_cached(&h)?;
            let p = b.project.forward_cached(&e.output)?;
            for (hi, fi) in h.iter_mut().zip(&p.output) {
                *hi += fi;
            }
            block_acts.push(h.clone());
            caches.push((e, p));
        }
        let head = self.head.forward_cached(&h)?;
        Ok(TeacherOutput {
            logits: head.output.clone(),
            final_rep: h,
            block_acts,
            trace: TeacherTrace {
                input,
                blocks: caches,
                head,
            },
        })
    }

    /// Reverse pass given upstream gradients at the final representation
    /// and/or the logits.
    pub fn backward(
        &self,
        trace: &TeacherTrace,
        d_final_rep: Option<&[f64]>,
        d_logits: Option<&[f64]>,
    ) -> Result<Gradients, NnError> {
        if trace.blocks.len() != self.blocks.len() || trace.input.output.is_empty() {
            return Err(NnError::MissingForward);
        }
        let mut grads = self.zero_grads();
        let n_blocks = self.blocks.len();
        let layers = grads.layers_mut();
        let (input_g, rest) = layers.split_at_mut(1);
        let (block_g, head_g) = rest.split_at_mut(2 * n_blocks);

        let mut dh = vec![0.0; self.width()];
        if let Some(d) = d_final_rep {
            check_len("final_rep gradient", self.width(), d.len())?;
            dh.iter_mut().zip(d).for_each(|(a, b)| *a += b);
        }
        if let Some(d) = d_logits {
            let dx = self.head.backward(&trace.head, d, &mut head_g[0])?;
            dh.iter_mut().zip(dx).for_each(|(a, b)| *a += b);
        }
        for (i, (b, (e, p))) in self.blocks.iter().zip(&trace.blocks).enumerate().rev() {
            let (ge, gp) = block_g[2 * i..2 * i + 2].split_at_mut(1);
            let d_e = b.project.backward(p, &dh, &mut gp[0])?;
            let d_in = b.expand.backward(e, &d_e, &mut ge[0])?;
            dh.iter_mut().zip(d_in).for_each(|(a, b)| *a += b);
        }
        self.input_proj.backward(&trace.input, &dh, &mut input_g[0])?;
        Ok(grads)
    }
}

impl Parameterized for TeacherModel {
    fn layers(&self) -> Vec<&DenseLayer> {
        let mut v = vec![&self.input_proj];
        for b in &self.blocks {
            v.push(&b.expand);
            v.push(&b.project);
        }
        v.push(&self.head);
        v
    }

    fn layers_mut(&mut self) -> Vec<&mut DenseLayer> {
        let mut v = vec![&mut self.input_proj];
        for b in &mut self.blocks {
            v.push(&mut b.expand);
            v.push(&mut b.project);
        }
        v.push(&mut self.head);
        v
    }
}

/// Shallow tanh network with a representation tap at layer ⌈N/2⌉.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudentModel {
    pub input_proj: DenseLayer,
    pub layers: Vec<DenseLayer>,
}

#[derive(Clone, Debug, Default)]
pub struct StudentTrace {
    input: LayerCache,
    layers: Vec<LayerCache>,
}

#[derive(Clone, Debug)]
pub struct StudentOutput {
    pub final_rep: Vec<f64>,
    pub mid_rep: Vec<f64>,
    pub trace: StudentTrace,
}

/// ⌈N/2⌉
pub fn mid_index(depth: usize) -> usize {
    depth.div_ceil(2)
}

impl StudentModel {
    pub fn new_random<R: Rng + ?Sized>(
        d_in: usize,
        width: usize,
        depth: usize,
        rng: &mut R,
    ) -> Result<Self, NnError> {
        if depth < 2 {
            return Err(NnError::Architecture("student depth must be at least 2"));
        }
        let input_proj = DenseLayer::glorot(d_in, width, Activation::Tanh, rng);
        let layers = (0..depth)
            .map(|_| DenseLayer::glorot(width, width, Activation::Tanh, rng))
            .collect();
        Ok(Self { input_proj, layers })
    }

    pub fn from_parts(input_proj: DenseLayer, layers: Vec<DenseLayer>) -> Result<Self, NnError> {
        let s = Self { input_proj, layers };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), NnError> {
        if self.layers.len() < 2 {
            return Err(NnError::Architecture("student depth must be at least 2"));
        }
        let d = self.width();
        if self
            .layers
            .iter()
            .any(|l| l.input_dim() != d || l.output_dim() != d)
        {
            return Err(NnError::Architecture("student layers must be width × width"));
        }
        Ok(())
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn mid_index(&self) -> usize {
        mid_index(self.depth())
    }

    pub fn d_in(&self) -> usize {
        self.input_proj.input_dim()
    }

    pub fn width(&self) -> usize {
        self.input_proj.output_dim()
    }

    pub fn final_rep(&self, x: &[f64]) -> Result<Vec<f64>, NnError> {
        let mut h = self.input_proj.forward(x)?;
        for l in &self.layers {
            h = l.forward(&h)?;
        }
        Ok(h)
    }

    pub fn forward(&self, x: &[f64]) -> Result<StudentOutput, NnError> {
        let input = self.input_proj.forward_cached(x)?;
        let mut caches: Vec<LayerCache> = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            let prev = caches.last().map_or(&input.output, |c| &c.output);
            let c = l.forward_cached(prev)?;
            caches.push(c);
        }
        let mid = self.mid_index();
        Ok(StudentOutput {
            final_rep: caches[caches.len() - 1].output.clone(),
            mid_rep: caches[mid - 1].output.clone(),
            trace: StudentTrace {
                input,
                layers: caches,
            },
        })
    }

    pub fn backward(
        &self,
        trace: &StudentTrace,
        d_final: Option<&[f64]>,
        d_mid: Option<&[f64]>,
    ) -> Result<Gradients, NnError> {
        let mut grads = self.zero_grads();
        self.backward_into(trace, d_final, d_mid, &mut grads)?;
        Ok(grads)
    }

    /// Accumulating variant of [`StudentModel::backward`].
    pub fn backward_into(
        &self,
        trace: &StudentTrace,
        d_final: Option<&[f64]>,
        d_mid: Option<&[f64]>,
        grads: &mut Gradients,
    ) -> Result<(), NnError> {
        if trace.layers.len() != self.layers.len() || trace.input.output.is_empty() {
            return Err(NnError::MissingForward);
        }
        if !grads.is_congruent_with(&self.layers()) {
            return Err(NnError::Incongruent);
        }
        let d = self.width();
        let mid = self.mid_index();
        let mut dh = vec![0.0; d];
        if let Some(g) = d_final {
            check_len("final_rep gradient", d, g.len())?;
            dh.copy_from_slice(g);
        }
        let layer_grads = grads.layers_mut();
        for (i, (l, c)) in self.layers.iter().zip(&trace.layers).enumerate().rev() {
            if i + 1 == mid {
                if let Some(g) = d_mid {
                    check_len("mid_rep gradient", d, g.len())?;
                    dh.iter_mut().zip(g).for_each(|(a, b)| *a += b);
                }
            }
            dh = l.backward(c, &dh, &mut layer_grads[i + 1])?;
        }
        self.input_proj
            .backward(&trace.input, &dh, &mut layer_grads[0])?;
        Ok(())
    }
}

impl Parameterized for StudentModel {
    fn layers(&self) -> Vec<&DenseLayer> {
        std::iter::once(&self.input_proj)
            .chain(self.layers.iter())
            .collect()
    }

    fn layers_mut(&mut self) -> Vec<&mut DenseLayer> {
        std::iter::once(&mut self.input_proj)
            .chain(self.layers.iter_mut())
            .collect()
    }
}

fn check_len(what: &'static str, expected: usize, got: usize) -> Result<(), NnError> {
    if expected != got {
        return Err(NnError::Shape {
            what,
            expected,
            got,
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Matrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.5..1.5)).collect()
    }

    fn scalar_dense(l: &DenseLayer, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; l.output_dim()];
        for r in 0..l.output_dim() {
            let mut acc = l.bias[r];
            for c in 0..l.input_dim() {
                acc += l.weight.get(r, c) * x[c];
            }
            out[r] = match l.activation {
                Activation::Tanh => acc.tanh(),
                Activation::Identity => acc,
            };
        }
        out
    }

    #[test]
    fn zero_blocks_give_projected_input_bitwise() {
        let mut r = rng(1);
        let mut t = TeacherModel::new_random(TeacherShape::default(), &mut r);
        for b in &mut t.blocks {
            b.expand = DenseLayer::zeros(16, 32, Activation::Tanh);
            b.project = DenseLayer::zeros(32, 16, Activation::Identity);
        }
        let x = random_vec(&mut r, 8);
        let out = t.forward(&x).unwrap();
        let proj = t.input_proj.forward(&x).unwrap();
        assert_eq!(
            out.final_rep.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            proj.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn identity_block_doubles_the_stream() {
        let mut r = rng(2);
        let shape = TeacherShape {
            depth: 1,
            hidden: 16,
            ..TeacherShape::default()
        };
        let mut t = TeacherModel::new_random(shape, &mut r);
        t.blocks[0].expand =
            DenseLayer::new(Matrix::identity(16), vec![0.0; 16], Activation::Identity).unwrap();
        t.blocks[0].project =
            DenseLayer::new(Matrix::identity(16), vec![0.0; 16], Activation::Identity).unwrap();
        let x = random_vec(&mut r, 8);
        let h0 = t.input_proj.forward(&x).unwrap();
        let rep = t.final_rep(&x).unwrap();
        for (a, b) in rep.iter().zip(&h0) {
            assert_eq!(*a, 2.0 * b);
        }
    }

    #[test]
    fn depth_three_teacher_matches_unrolled_oracle() {
        let mut r = rng(3);
        let shape = TeacherShape {
            depth: 3,
            ..TeacherShape::default()
        };
        let t = TeacherModel::new_random(shape, &mut r);
        let x = random_vec(&mut r, 8);
        let h0 = scalar_dense(&t.input_proj, &x);
        let f1 = scalar_dense(&t.blocks[0].project, &scalar_dense(&t.blocks[0].expand, &h0));
        let h1: Vec<f64> = h0.iter().zip(&f1).map(|(a, b)| a + b).collect();
        let f2 = scalar_dense(&t.blocks[1].project, &scalar_dense(&t.blocks[1].expand, &h1));
        let h2: Vec<f64> = h1.iter().zip(&f2).map(|(a, b)| a + b).collect();
        let f3 = scalar_dense(&t.blocks[2].project, &scalar_dense(&t.blocks[2].expand, &h2));
        let h3: Vec<f64> = h2.iter().zip(&f3).map(|(a, b)| a + b).collect();
        let out = t.forward(&x).unwrap();
        for (a, b) in out.final_rep.iter().zip(&h3) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(out.block_acts.len(), 4);
        let logits = scalar_dense(&t.head, &h3);
        for (a, b) in out.logits.iter().zip(&logits) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn student_taps_follow_ceil_half() {
        let mut r = rng(4);
        for n in 2..=12 {
            let s = StudentModel::new_random(8, 16, n, &mut r).unwrap();
            assert_eq!(s.mid_index(), (n + 1) / 2);
        }
        assert_eq!(mid_index(2), 1);
        assert_eq!(mid_index(3), 2);
        assert!(StudentModel::new_random(8, 16, 1, &mut r).is_err());
    }

    #[test]
    fn two_layer_student_matches_scalar_oracle() {
        let mut r = rng(5);
        let s = StudentModel::new_random(8, 16, 2, &mut r).unwrap();
        let x = random_vec(&mut r, 8);
        let h0 = scalar_dense(&s.input_proj, &x);
        let h1 = scalar_dense(&s.layers[0], &h0);
        let h2 = scalar_dense(&s.layers[1], &h1);
        let out = s.forward(&x).unwrap();
        for (a, b) in out.mid_rep.iter().zip(&h1) {
            assert!((a - b).abs() < 1e-14);
        }
        for (a, b) in out.final_rep.iter().zip(&h2) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut r = rng(6);
        let s = StudentModel::new_random(8, 16, 3, &mut r).unwrap();
        let out = s.forward(&random_vec(&mut r, 8)).unwrap();
        let g = s
            .backward(&out.trace, Some(&[0.0; 16]), Some(&[0.0; 16]))
            .unwrap();
        assert!(g.is_zero());
        let t = TeacherModel::new_random(TeacherShape::default(), &mut r);
        let out = t.forward(&random_vec(&mut r, 8)).unwrap();
        assert!(t.backward(&out.trace, None, Some(&[0.0, 0.0])).unwrap().is_zero());
    }

    #[test]
    fn backward_requires_a_forward_trace() {
        let mut r = rng(7);
        let s = StudentModel::new_random(8, 16, 2, &mut r).unwrap();
        let err = s.backward(&StudentTrace::default(), Some(&[0.0; 16]), None);
        assert!(matches!(err, Err(NnError::MissingForward)));
        let t = TeacherModel::new_random(TeacherShape::default(), &mut r);
        let err = t.backward(&TeacherTrace::default(), None, Some(&[1.0, 0.0]));
        assert!(matches!(err, Err(NnError::MissingForward)));
    }

    #[test]
    fn wrong_input_width_is_rejected() {
        let mut r = rng(8);
        let s = StudentModel::new_random(8, 16, 2, &mut r).unwrap();
        assert!(s.forward(&[0.0; 7]).is_err());
        let t = TeacherModel::new_random(TeacherShape::default(), &mut r);
        assert!(t.forward(&[0.0; 9]).is_err());
    }
}
