//! Recording of primitive operations and the reverse sweep over them.

use std::cell::{Cell, Ref, RefCell};

use crate::array::Array;
use crate::error::{DiffError, Result};
use crate::scalar::Scalar;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Arguments handed to a backward function.
pub struct BackwardArgs<'a, T> {
    pub inputs: &'a [&'a Array<T>],
    pub output: &'a Array<T>,
    pub grad: &'a Array<T>,
    /// Which inputs need a gradient; others may return `None`.
    pub needs: &'a [bool],
}

pub type BackwardFn<T> = Box<dyn Fn(&BackwardArgs<'_, T>) -> Vec<Option<Array<T>>>>;

struct Node<T> {
    value: Array<T>,
    parents: Vec<usize>,
    backward: Option<BackwardFn<T>>,
    requires_grad: bool,
    leaf: bool,
    op: &'static str,
}

/// Ordered record of operations. Record order is a topological order.
pub struct Tape<T: Scalar> {
    nodes: RefCell<Vec<Node<T>>>,
    flops: Cell<u64>,
    bytes: Cell<u64>,
    nonfinite: Cell<Option<(usize, &'static str)>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            flops: Cell::new(0),
            bytes: Cell::new(0),
            nonfinite: Cell::new(None),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Floating point operations recorded so far (estimated per op).
    pub fn flops(&self) -> u64 {
        self.flops.get()
    }

    /// Bytes held by every array stored on the tape. The tape keeps all
    /// values alive until it is dropped, so this is also the peak.
    pub fn live_bytes(&self) -> u64 {
        self.bytes.get()
    }

    pub fn op_name(&self, v: Var) -> &'static str {
        self.nodes.borrow()[v.0].op
    }

    /// First non-finite value recorded, as an error.
    pub fn check_finite(&self) -> Result<()> {
        match self.nonfinite.get() {
            Some((index, op)) => Err(DiffError::NonFinite { index, op }),
            None => Ok(()),
        }
    }

    pub fn leaf(&self, value: Array<T>, requires_grad: bool) -> Var {
        self.push(Node {
            value,
            parents: Vec::new(),
            backward: None,
            requires_grad,
            leaf: true,
            op: "leaf",
        })
    }

    pub fn param(&self, value: Array<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&self, value: Array<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn scalar(&self, v: T) -> Var {
        self.constant(Array::scalar(v))
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> Ref<'_, Array<T>> {
        Ref::map(self.nodes.borrow(), |n| &n[v.0].value)
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    pub fn item(&self, v: Var) -> T {
        self.nodes.borrow()[v.0].value.item()
    }

    /// Copy of the value with no link back to `v`.
    pub fn detach(&self, v: Var) -> Var {
        let a = self.value(v).clone();
        self.constant(a)
    }

    /// Records an operation with a hand-written backward function.
    ///
    /// `backward` receives the input values, the output value and the
    /// output gradient, and returns one gradient per input (same shape).
    pub fn custom<F>(
        &self,
        op: &'static str,
        inputs: &[Var],
        output: Array<T>,
        flops: u64,
        backward: F,
    ) -> Var
    where
        F: Fn(&BackwardArgs<'_, T>) -> Vec<Option<Array<T>>> + 'static,
    {
        let requires_grad = {
            let nodes = self.nodes.borrow();
            inputs.iter().any(|v| nodes[v.0].requires_grad)
        };
        self.flops.set(self.flops.get() + flops);
        self.push(Node {
            value: output,
            parents: inputs.iter().map(|v| v.0).collect(),
            backward: if requires_grad {
                Some(Box::new(backward))
            } else {
                None
            },
            requires_grad,
            leaf: false,
            op,
        })
    }

    fn push(&self, node: Node<T>) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        let index = nodes.len();
        if self.nonfinite.get().is_none() && !node.value.is_finite() {
            self.nonfinite.set(Some((index, node.op)));
        }
        self.bytes.set(self.bytes.get() + node.value.bytes() as u64);
        nodes.push(node);
        Var(index)
    }

    /// Reverse sweep from `output` seeded with `seed`.
    pub fn backward(&self, output: Var, seed: &Array<T>) -> Result<Gradients<T>> {
        let nodes = self.nodes.borrow();
        let out_shape = nodes[output.0].value.shape();
        if seed.shape() != out_shape {
            return Err(DiffError::Shape {
                expected: out_shape.to_vec(),
                got: seed.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Array<T>>> = (0..=output.0).map(|_| None).collect();
        grads[output.0] = Some(seed.clone());
        for i in (0..=output.0).rev() {
            let node = &nodes[i];
            if !node.requires_grad || node.leaf {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let Some(bw) = node.backward.as_ref() else {
                continue;
            };
            let inputs: Vec<&Array<T>> = node.parents.iter().map(|&p| &nodes[p].value).collect();
            let needs: Vec<bool> = node
                .parents
                .iter()
                .map(|&p| nodes[p].requires_grad)
                .collect();
            let parent_grads = bw(&BackwardArgs {
                inputs: &inputs,
                output: &node.value,
                grad: &g,
                needs: &needs,
            });
            debug_assert_eq!(parent_grads.len(), node.parents.len(), "op {}", node.op);
            for (&p, pg) in node.parents.iter().zip(parent_grads) {
                let Some(pg) = pg else { continue };
                if !nodes[p].requires_grad {
                    continue;
                }
                debug_assert_eq!(pg.shape(), nodes[p].value.shape(), "grad of op {}", node.op);
                match &mut grads[p] {
                    Some(acc) => acc.add_assign(&pg),
                    slot => *slot = Some(pg),
                }
            }
        }
        let leaves = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| if nodes[i].leaf { g } else { None })
            .collect();
        Ok(Gradients { grads: leaves })
    }

    /// Backward with a seed of ones for a scalar output.
    pub fn grad(&self, output: Var) -> Result<Gradients<T>> {
        let shape = self.shape(output);
        if !shape.is_empty() && shape.iter().product::<usize>() != 1 {
            return Err(DiffError::NotScalar(shape));
        }
        self.backward(output, &Array::full(&shape, T::one()))
    }
}

/// Gradients of requires-grad leaves.
pub struct Gradients<T> {
    grads: Vec<Option<Array<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Array<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Array<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }

    /// Gradient of `v`, zeros of `shape` when the leaf was unreachable.
    pub fn get_or_zeros(&self, v: Var, shape: &[usize]) -> Array<T> {
        self.get(v).cloned().unwrap_or_else(|| Array::zeros(shape))
    }
}

/// Runs `program` on a fresh tape over `inputs` (all requiring grad).
pub fn forward_record<T, F>(program: F, inputs: &[Array<T>]) -> Result<(Vec<Var>, Vec<Var>, Tape<T>)>
where
    T: Scalar,
    F: FnOnce(&Tape<T>, &[Var]) -> Vec<Var>,
{
    let tape = Tape::new();
    let leaves: Vec<Var> = inputs.iter().map(|a| tape.param(a.clone())).collect();
    let outputs = program(&tape, &leaves);
    tape.check_finite()?;
    Ok((leaves, outputs, tape))
}
