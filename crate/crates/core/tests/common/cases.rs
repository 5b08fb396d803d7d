//! One finite-difference case per differentiable tape operation.

use rand::Rng;
use seisbert::numerics::{Real, Tape, Tensor, Var};

use super::{contract, random_tensor, ScalarFn};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OpKind {
    MatMul,
    Transpose,
    Add,
    AddBroadcast,
    Sub,
    Mul,
    MulBroadcast,
    Scale,
    Softmax,
    SoftmaxLeading,
    LayerNorm,
    Gelu,
    Sigmoid,
    Slice,
    Concat,
    Reshape,
    Mean,
    Mse,
    MseMasked,
    L1,
    CrossEntropy,
}

pub const ALL_OPS: [OpKind; 21] = [
    OpKind::MatMul,
    OpKind::Transpose,
    OpKind::Add,
    OpKind::AddBroadcast,
    OpKind::Sub,
    OpKind::Mul,
    OpKind::MulBroadcast,
    OpKind::Scale,
    OpKind::Softmax,
    OpKind::SoftmaxLeading,
    OpKind::LayerNorm,
    OpKind::Gelu,
    OpKind::Sigmoid,
    OpKind::Slice,
    OpKind::Concat,
    OpKind::Reshape,
    OpKind::Mean,
    OpKind::Mse,
    OpKind::MseMasked,
    OpKind::L1,
    OpKind::CrossEntropy,
];

pub struct OpCase {
    pub kind: OpKind,
    pub rows: usize,
    pub cols: usize,
    pub target: Tensor<f64>,
    pub mask: Tensor<f64>,
    pub classes: Vec<usize>,
    pub seed: u64,
}

impl OpCase {
    /// Random case with extents at most 4×5 plus the inputs to differentiate.
    pub fn random(kind: OpKind, rng: &mut impl Rng) -> (Self, Vec<Tensor<f64>>) {
        let rows = rng.random_range(1..=4);
        let cols = rng.random_range(2..=5);
        let inner = rng.random_range(1..=4);
        let x = random_tensor(rng, &[rows, cols], 1.0);
        let target = random_tensor(rng, &[rows, cols], 1.0);
        let mut mask = Tensor::zeros([rows, cols]);
        for r in 0..rows {
            if r % 2 == 0 {
                for c in 0..cols {
                    mask.data_mut()[r * cols + c] = 1.0;
                }
            }
        }
        let classes = (0..rows).map(|_| rng.random_range(0..cols)).collect();
        let inputs = match kind {
            OpKind::MatMul => vec![x, random_tensor(rng, &[cols, inner], 1.0)],
            OpKind::Add | OpKind::Sub | OpKind::Mul => {
                vec![x, random_tensor(rng, &[rows, cols], 1.0)]
            }
            OpKind::AddBroadcast | OpKind::MulBroadcast => {
                vec![x, random_tensor(rng, &[cols], 1.0)]
            }
            OpKind::LayerNorm => vec![
                x,
                random_tensor(rng, &[cols], 1.0),
                random_tensor(rng, &[cols], 1.0),
            ],
            OpKind::Concat => vec![x, random_tensor(rng, &[rows, inner], 1.0)],
            _ => vec![x],
        };
        let case = OpCase {
            kind,
            rows,
            cols,
            target,
            mask,
            classes,
            seed: rng.random(),
        };
        (case, inputs)
    }
}

impl ScalarFn for OpCase {
    fn eval<'t, F: Real>(&self, tape: &'t Tape<F>, v: &[Var<'t, F>]) -> Var<'t, F> {
        let _ = tape;
        let out = match self.kind {
            OpKind::MatMul => v[0].matmul(v[1]).unwrap(),
            OpKind::Transpose => v[0].transpose().unwrap(),
            OpKind::Add | OpKind::AddBroadcast => v[0].add(v[1]).unwrap(),
            OpKind::Sub => v[0].sub(v[1]).unwrap(),
            OpKind::Mul | OpKind::MulBroadcast => v[0].mul(v[1]).unwrap(),
            OpKind::Scale => v[0].scale(F::from_f64(-1.75)),
            OpKind::Softmax => v[0].softmax(1).unwrap(),
            OpKind::SoftmaxLeading => v[0].softmax(0).unwrap(),
            OpKind::LayerNorm => v[0].layer_norm(v[1], v[2], F::from_f64(1e-5)).unwrap(),
            OpKind::Gelu => v[0].gelu(),
            OpKind::Sigmoid => v[0].sigmoid(),
            OpKind::Slice => v[0].slice(1, 1, self.cols - 1).unwrap(),
            OpKind::Concat => Var::concat(&[v[0], v[1]], 1).unwrap(),
            OpKind::Reshape => v[0].reshape([self.rows * self.cols]).unwrap(),
            OpKind::Mean => return v[0].gelu().mean(),
            OpKind::Mse => return v[0].mse_loss(&self.target.cast(), None).unwrap(),
            OpKind::MseMasked => {
                return v[0]
                    .mse_loss(&self.target.cast(), Some(&self.mask.cast()))
                    .unwrap()
            }
            OpKind::L1 => return v[0].l1_loss(&self.target.cast()).unwrap(),
            OpKind::CrossEntropy => return v[0].cross_entropy(&self.classes).unwrap(),
        };
        contract(out, self.seed)
    }
}
