//! Minimal reverse-mode differentiation over matrix values.
//!
//! Covers exactly what the pyramid, divisive normalisation, the distance and
//! the Pearson objective need. Binary element-wise ops broadcast a `1x1`
//! operand. Values are recorded eagerly; [`Tape::gradient`] walks the tape
//! backwards once.

use crate::matrix::{self, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    Abs(Var),
    Sqrt(Var),
    Sum(Var),
    /// Mirror-boundary correlation of `input` with `kernel`.
    Filter { input: Var, kernel: Var },
    Downsample(Var),
    ZeroStuff(Var),
}

#[derive(Debug, Default)]
pub struct Tape {
    values: Vec<Matrix>,
    ops: Vec<Op>,
}

fn broadcast(a: &Matrix, b: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
    match (a.shape(), b.shape()) {
        (sa, sb) if sa == sb => a.zip_map(b, f),
        (_, (1, 1)) => {
            let s = b.get(0, 0);
            a.map(|x| f(x, s))
        }
        ((1, 1), _) => {
            let s = a.get(0, 0);
            b.map(|y| f(s, y))
        }
        (sa, sb) => panic!("tape: incompatible shapes {sa:?} and {sb:?}"),
    }
}

/// Reduces a gradient to the operand's shape (sums over a broadcast axis).
fn unbroadcast(grad: Matrix, shape: (usize, usize)) -> Matrix {
    if grad.shape() == shape {
        grad
    } else {
        debug_assert_eq!(shape, (1, 1));
        Matrix::scalar(grad.sum())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.values.push(value);
        self.ops.push(op);
        Var(self.values.len() - 1)
    }

    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.leaf(Matrix::scalar(value))
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.values[v.0]
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        let m = self.value(v);
        debug_assert_eq!(m.shape(), (1, 1));
        m.get(0, 0)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = broadcast(self.value(a), self.value(b), |x, y| x + y);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = broadcast(self.value(a), self.value(b), |x, y| x - y);
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = broadcast(self.value(a), self.value(b), |x, y| x * y);
        self.push(v, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        let v = broadcast(self.value(a), self.value(b), |x, y| x / y);
        self.push(v, Op::Div(a, b))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a).map(|x| x * k);
        self.push(v, Op::Scale(a, k))
    }

    /// Absolute value; the subgradient at zero is zero.
    pub fn abs(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::abs);
        self.push(v, Op::Abs(a))
    }

    /// Square root; the derivative at zero is taken as zero.
    pub fn sqrt(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::sqrt);
        self.push(v, Op::Sqrt(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Matrix::scalar(self.value(a).sum());
        self.push(v, Op::Sum(a))
    }

    pub fn filter(&mut self, input: Var, kernel: Var) -> Var {
        let v = matrix::filter2d(self.value(input), self.value(kernel));
        self.push(v, Op::Filter { input, kernel })
    }

    pub fn downsample(&mut self, a: Var) -> Var {
        let v = matrix::downsample2(self.value(a));
        self.push(v, Op::Downsample(a))
    }

    /// Zero-stuffing to `rows x cols` with gain 4.
    pub fn zero_stuff(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let v = matrix::zero_stuff(self.value(a), rows, cols);
        self.push(v, Op::ZeroStuff(a))
    }

    /// Gradients of the scalar `output` with respect to every recorded node.
    pub fn gradient(&self, output: Var) -> Gradients {
        assert_eq!(self.value(output).shape(), (1, 1), "gradient of a non-scalar");
        let mut grads: Vec<Option<Matrix>> = vec![None; output.0 + 1];
        grads[output.0] = Some(Matrix::scalar(1.0));

        fn accumulate(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        }

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let shape_of = |v: Var| self.values[v.0].shape();
            match self.ops[idx] {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, a, unbroadcast(g.clone(), shape_of(a)));
                    accumulate(&mut grads, b, unbroadcast(g, shape_of(b)));
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, a, unbroadcast(g.clone(), shape_of(a)));
                    accumulate(&mut grads, b, unbroadcast(g.map(|x| -x), shape_of(b)));
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (&self.values[a.0], &self.values[b.0]);
                    let ga = broadcast(&g, vb, |g, y| g * y);
                    let gb = broadcast(&g, va, |g, x| g * x);
                    accumulate(&mut grads, a, unbroadcast(ga, shape_of(a)));
                    accumulate(&mut grads, b, unbroadcast(gb, shape_of(b)));
                }
                Op::Div(a, b) => {
                    let vb = &self.values[b.0];
                    let ga = broadcast(&g, vb, |g, y| g / y);
                    // d(a/b)/db = -a/b² = -out/b
                    let out = &self.values[idx];
                    let gb = broadcast(&g.zip_map(out, |g, o| g * o), vb, |go, y| -go / y);
                    accumulate(&mut grads, a, unbroadcast(ga, shape_of(a)));
                    accumulate(&mut grads, b, unbroadcast(gb, shape_of(b)));
                }
                Op::Scale(a, k) => accumulate(&mut grads, a, g.map(|x| x * k)),
                Op::Abs(a) => {
                    let ga = g.zip_map(&self.values[a.0], |g, x| {
                        if x > 0.0 {
                            g
                        } else if x < 0.0 {
                            -g
                        } else {
                            0.0
                        }
                    });
                    accumulate(&mut grads, a, ga);
                }
                Op::Sqrt(a) => {
                    let ga = g.zip_map(&self.values[idx], |g, s| if s > 0.0 { g / (2.0 * s) } else { 0.0 });
                    accumulate(&mut grads, a, ga);
                }
                Op::Sum(a) => {
                    let (r, c) = shape_of(a);
                    accumulate(&mut grads, a, Matrix::filled(r, c, g.get(0, 0)));
                }
                Op::Filter { input, kernel } => {
                    let k = &self.values[kernel.0];
                    let gi = matrix::filter2d_input_adjoint(&g, k);
                    let gk = matrix::filter2d_kernel_adjoint(&g, &self.values[input.0], k.rows(), k.cols());
                    accumulate(&mut grads, input, gi);
                    accumulate(&mut grads, kernel, gk);
                }
                Op::Downsample(a) => {
                    let (r, c) = shape_of(a);
                    accumulate(&mut grads, a, matrix::downsample2_adjoint(&g, r, c));
                }
                Op::ZeroStuff(input) => {
                    let (r, c) = shape_of(input);
                    accumulate(&mut grads, input, matrix::zero_stuff_adjoint(&g, r, c));
                }
            }
        }
        Gradients { grads }
    }
}

/// Gradients recorded by [`Tape::gradient`]; only leaves are retained.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    /// Gradient for `v`, or `None` if the output does not depend on it.
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient for `v` with zeros where the output does not depend on it.
    pub fn get_or_zeros(&self, v: Var, shape: (usize, usize)) -> Matrix {
        self.get(v).cloned().unwrap_or_else(|| Matrix::zeros(shape.0, shape.1))
    }
}

/// Records `pearson(xs, ys)` for row vectors on the tape.
pub fn pearson(tape: &mut Tape, xs: Var, ys: Var) -> Var {
    let n = tape.value(xs).len() as f64;
    let sx = tape.sum(xs);
    let mx = tape.scale(sx, 1.0 / n);
    let sy = tape.sum(ys);
    let my = tape.scale(sy, 1.0 / n);
    let dx = tape.sub(xs, mx);
    let dy = tape.sub(ys, my);
    let dxy = tape.mul(dx, dy);
    let cov = tape.sum(dxy);
    let dxx = tape.mul(dx, dx);
    let vx = tape.sum(dxx);
    let dyy = tape.mul(dy, dy);
    let vy = tape.sum(dyy);
    let sdx = tape.sqrt(vx);
    let sdy = tape.sqrt(vy);
    let denom = tape.mul(sdx, sdy);
    tape.div(cov, denom)
}
