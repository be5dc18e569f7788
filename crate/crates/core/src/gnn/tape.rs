//! Minimal reverse-mode differentiation over dense matrices.

use ndarray::{s, Array2, Axis, Zip};

/// Handle of a value recorded on a [`Tape`].
pub type Var = usize;

enum Op {
    Leaf,
    MatMul(Var, Var),
    /// Adds a `1 x m` row to every row.
    AddBias(Var, Var),
    Relu(Var),
    /// Column-wise concatenation.
    Concat(Var, Var),
    /// Row `r` of the output is the sum of the listed `(var, row)` pairs;
    /// an empty list yields a zero row.
    Gather(Vec<Vec<(Var, usize)>>),
    /// Mean over rows of `(x - target)^2` for an `n x 1` input.
    SquaredError(Var, Vec<f64>),
    /// Weighted mean binary cross-entropy of `n x 1` logits against 0/1
    /// labels: `sum(w * l) / n`.
    Bce(Var, Vec<f64>, Vec<f64>),
}

struct Node {
    op: Op,
    value: Array2<f64>,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// `log(1 + exp(x))` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    fn push(&mut self, op: Op, value: Array2<f64>, needs_grad: bool) -> Var {
        self.nodes.push(Node { op, value, needs_grad });
        self.nodes.len() - 1
    }

    fn grad_flag(&self, vars: &[Var]) -> bool {
        vars.iter().any(|&v| self.nodes[v].needs_grad)
    }

    /// Records an input. Parameters pass `needs_grad = true`.
    pub fn leaf(&mut self, value: Array2<f64>, needs_grad: bool) -> Var {
        self.push(Op::Leaf, value, needs_grad)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v].value
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(self.value(b));
        let g = self.grad_flag(&[a, b]);
        self.push(Op::MatMul(a, b), value, g)
    }

    pub fn add_bias(&mut self, a: Var, bias: Var) -> Var {
        let value = self.value(a) + self.value(bias);
        let g = self.grad_flag(&[a, bias]);
        self.push(Op::AddBias(a, bias), value, g)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|x| x.max(0.0));
        let g = self.grad_flag(&[a]);
        self.push(Op::Relu(a), value, g)
    }

    pub fn concat(&mut self, a: Var, b: Var) -> Var {
        let value = ndarray::concatenate(Axis(1), &[self.value(a).view(), self.value(b).view()])
            .expect("concatenated operands have equal row counts");
        let g = self.grad_flag(&[a, b]);
        self.push(Op::Concat(a, b), value, g)
    }

    /// Sums each group in sorted `(var, row)` order, so the result is
    /// bit-identical however the members are listed.
    pub fn gather(&mut self, cols: usize, mut groups: Vec<Vec<(Var, usize)>>) -> Var {
        for group in &mut groups {
            group.sort_unstable();
        }
        let mut value = Array2::zeros((groups.len(), cols));
        let mut g = false;
        for (r, group) in groups.iter().enumerate() {
            let mut row = value.row_mut(r);
            for &(v, i) in group {
                row += &self.nodes[v].value.row(i);
                g |= self.nodes[v].needs_grad;
            }
        }
        self.push(Op::Gather(groups), value, g)
    }

    pub fn squared_error(&mut self, x: Var, target: Vec<f64>) -> Var {
        let xs = self.value(x);
        let n = target.len() as f64;
        let loss = xs.column(0).iter().zip(&target).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / n;
        let g = self.grad_flag(&[x]);
        self.push(Op::SquaredError(x, target), Array2::from_elem((1, 1), loss), g)
    }

    pub fn bce(&mut self, logits: Var, labels: Vec<f64>) -> Var {
        let weights = vec![1.0; labels.len()];
        self.weighted_bce(logits, labels, weights)
    }

    pub fn weighted_bce(&mut self, logits: Var, labels: Vec<f64>, weights: Vec<f64>) -> Var {
        assert_eq!(labels.len(), weights.len(), "one weight per label");
        let xs = self.value(logits);
        let n = labels.len() as f64;
        // -[y log s(x) + (1-y) log(1-s(x))] = softplus(x) - y x
        let loss = xs
            .column(0)
            .iter()
            .zip(&labels)
            .zip(&weights)
            .map(|((&x, &y), &w)| w * (softplus(x) - y * x))
            .sum::<f64>()
            / n;
        let g = self.grad_flag(&[logits]);
        self.push(Op::Bce(logits, labels, weights), Array2::from_elem((1, 1), loss), g)
    }

    /// Gradients of the scalar `loss` with respect to every recorded value
    /// that depends on a gradient-requiring leaf.
    pub fn backward(&self, loss: Var) -> Vec<Option<Array2<f64>>> {
        let mut grads: Vec<Option<Array2<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss] = Some(Array2::ones((1, 1)));

        fn accumulate(grads: &mut [Option<Array2<f64>>], v: Var, g: Array2<f64>) {
            match &mut grads[v] {
                Some(acc) => *acc += &g,
                slot => *slot = Some(g),
            }
        }

        for i in (0..=loss).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let wants = |v: Var| self.nodes[v].needs_grad;
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    if wants(*a) {
                        accumulate(&mut grads, *a, g.dot(&self.value(*b).t()));
                    }
                    if wants(*b) {
                        accumulate(&mut grads, *b, self.value(*a).t().dot(&g));
                    }
                }
                Op::AddBias(a, b) => {
                    if wants(*b) {
                        accumulate(&mut grads, *b, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    }
                    if wants(*a) {
                        accumulate(&mut grads, *a, g);
                    }
                }
                Op::Relu(a) => {
                    if wants(*a) {
                        let mut ga = g;
                        Zip::from(&mut ga).and(&node.value).for_each(|d, &y| {
                            if y <= 0.0 {
                                *d = 0.0;
                            }
                        });
                        accumulate(&mut grads, *a, ga);
                    }
                }
                Op::Concat(a, b) => {
                    let split = self.value(*a).ncols();
                    if wants(*a) {
                        accumulate(&mut grads, *a, g.slice(s![.., ..split]).to_owned());
                    }
                    if wants(*b) {
                        accumulate(&mut grads, *b, g.slice(s![.., split..]).to_owned());
                    }
                }
                Op::Gather(groups) => {
                    for (r, group) in groups.iter().enumerate() {
                        for &(v, row) in group {
                            if !wants(v) {
                                continue;
                            }
                            let shape = self.value(v).raw_dim();
                            let slot = grads[v].get_or_insert_with(|| Array2::zeros(shape));
                            let mut dst = slot.row_mut(row);
                            dst += &g.row(r);
                        }
                    }
                }
                Op::SquaredError(x, target) => {
                    if wants(*x) {
                        let scale = 2.0 * g[[0, 0]] / target.len() as f64;
                        let mut gx = Array2::zeros((target.len(), 1));
                        for (r, t) in target.iter().enumerate() {
                            gx[[r, 0]] = scale * (self.value(*x)[[r, 0]] - t);
                        }
                        accumulate(&mut grads, *x, gx);
                    }
                }
                Op::Bce(x, labels, weights) => {
                    if wants(*x) {
                        let scale = g[[0, 0]] / labels.len() as f64;
                        let mut gx = Array2::zeros((labels.len(), 1));
                        for (r, (y, w)) in labels.iter().zip(weights).enumerate() {
                            gx[[r, 0]] = scale * w * (sigmoid(self.value(*x)[[r, 0]]) - y);
                        }
                        accumulate(&mut grads, *x, gx);
                    }
                }
            }
        }
        grads
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn linear_layer_gradient_is_outer_product() {
        let mut t = Tape::new();
        let x = t.leaf(array![[1.0, 2.0]], false);
        let w = t.leaf(array![[0.5], [-1.0]], true);
        let y = t.matmul(x, w);
        let loss = t.squared_error(y, vec![0.0]);
        let grads = t.backward(loss);
        // d/dw (x.w)^2 = 2 (x.w) x^T, x.w = -1.5
        let gw = grads[w].as_ref().unwrap();
        assert_eq!(gw, &array![[-3.0], [-6.0]]);
        assert!(grads[x].is_none());
    }

    #[test]
    fn gather_sums_and_scatters() {
        let mut t = Tape::new();
        let a = t.leaf(array![[1.0, 2.0], [3.0, 4.0]], true);
        let g = t.gather(2, vec![vec![(a, 0), (a, 1)], vec![], vec![(a, 1)]]);
        assert_eq!(t.value(g), &array![[4.0, 6.0], [0.0, 0.0], [3.0, 4.0]]);
        let w = t.leaf(array![[1.0], [1.0]], false);
        let y = t.matmul(g, w);
        let loss = t.squared_error(y, vec![0.0, 0.0, 0.0]);
        let grads = t.backward(loss);
        // dL/dy = 2/3 y = [20/3, 0, 14/3]; row 1 of a feeds rows 0 and 2
        let ga = grads[a].as_ref().unwrap();
        assert!((ga[[0, 0]] - 20.0 / 3.0).abs() < 1e-12);
        assert!((ga[[1, 1]] - 34.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn bce_matches_closed_form() {
        let mut t = Tape::new();
        let x = t.leaf(array![[0.0], [40.0]], true);
        let loss = t.bce(x, vec![1.0, 1.0]);
        let v = t.value(loss)[[0, 0]];
        assert!((v - std::f64::consts::LN_2 / 2.0).abs() < 1e-12);
    }
}
