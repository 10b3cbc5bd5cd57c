//! Minimal reverse-mode automatic differentiation over dense f64 tensors.
//!
//! A [`Tape`] records every operation whose inputs are tracked; calling
//! [`backward`] on a scalar loss replays the tape in reverse and accumulates
//! exact gradients for all leaves. Tensors are immutable: every op allocates
//! its output, and any op producing a NaN or infinity fails with
//! [`crate::Error::Numerics`] rather than letting the value propagate.
//!
//! One tape belongs to one training step and one thread. Tensors without a
//! tape behave as constants, which doubles as the no-grad evaluation path.

mod adam;
mod gradcheck;
mod ops;
mod params;

pub use adam::Adam;
pub use gradcheck::{gradcheck, GradCheckReport};
pub use params::{collect_grads, Param, ParamStore, TapeParams};

use std::cell::RefCell;
use std::rc::Rc;

use crate::{Error, Result};

type BackwardFn = Box<dyn Fn(&[f64]) -> Vec<Vec<f64>>>;

struct Node {
    /// Node ids of tracked operands, `None` for constant slots. The
    /// backward closure returns one gradient buffer per slot, in order.
    inputs: Vec<Option<usize>>,
    backward: BackwardFn,
}

/// A recording of operations in topological order. Cloning is cheap and
/// shares the recording.
#[derive(Clone, Default)]
pub struct Tape {
    nodes: Rc<RefCell<Vec<Node>>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, node: Node) -> usize {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        nodes.len() - 1
    }

    fn same_as(&self, other: &Tape) -> bool {
        Rc::ptr_eq(&self.nodes, &other.nodes)
    }

    /// Creates a tracked leaf tensor (a trainable parameter).
    pub fn leaf(&self, data: Vec<f64>, shape: &[usize]) -> Result<Tensor> {
        check_data(&data, shape, "leaf")?;
        let id = self.push(Node {
            inputs: Vec::new(),
            backward: Box::new(|_| Vec::new()),
        });
        Ok(Tensor {
            shape: shape.to_vec(),
            data: Rc::new(data),
            node: Some((self.clone(), id)),
        })
    }
}

fn check_data(data: &[f64], shape: &[usize], what: &str) -> Result<()> {
    let numel: usize = shape.iter().product();
    if data.len() != numel {
        return Err(Error::shape(format!(
            "{what}: data length {} does not match shape {shape:?}",
            data.len()
        )));
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerics(format!("{what} produced a non-finite value")));
    }
    Ok(())
}

/// An n-dimensional row-major value, possibly recorded on a tape.
/// The empty shape `[]` denotes a scalar.
#[derive(Clone)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Rc<Vec<f64>>,
    node: Option<(Tape, usize)>,
}

impl Tensor {
    /// An untracked constant.
    pub fn constant(data: Vec<f64>, shape: &[usize]) -> Result<Tensor> {
        check_data(&data, shape, "constant")?;
        Ok(Tensor {
            shape: shape.to_vec(),
            data: Rc::new(data),
            node: None,
        })
    }

    pub fn scalar_const(v: f64) -> Result<Tensor> {
        Tensor::constant(vec![v], &[])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.node.is_some()
    }

    /// The value of a one-element tensor.
    pub fn value(&self) -> f64 {
        assert_eq!(self.numel(), 1, "value() needs a one-element tensor");
        self.data[0]
    }

    /// Rows of a 2-D tensor.
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Columns of a 2-D tensor.
    pub fn cols(&self) -> usize {
        self.shape[1]
    }

    /// Same data, no tape: gradients stop here.
    pub fn detach(&self) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: Rc::clone(&self.data),
            node: None,
        }
    }

    fn node_id(&self) -> Option<usize> {
        self.node.as_ref().map(|(_, id)| *id)
    }

    fn tape(&self) -> Option<&Tape> {
        self.node.as_ref().map(|(t, _)| t)
    }
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("tracked", &self.requires_grad())
            .field("data", &&self.data[..self.data.len().min(8)])
            .finish()
    }
}

/// Picks the common tape of a set of operands, if any is tracked.
fn unify_tapes(operands: &[&Tensor]) -> Result<Option<Tape>> {
    let mut found: Option<&Tape> = None;
    for t in operands {
        if let Some(tape) = t.tape() {
            match found {
                None => found = Some(tape),
                Some(prev) if prev.same_as(tape) => {}
                Some(_) => {
                    return Err(Error::invalid(
                        "operands recorded on different tapes cannot be combined",
                    ))
                }
            }
        }
    }
    Ok(found.cloned())
}

/// Builds the output tensor of an op, recording a backward rule when any
/// operand is tracked.
fn make_output(
    op: &'static str,
    operands: &[&Tensor],
    data: Vec<f64>,
    shape: Vec<usize>,
    backward: impl Fn(&[f64]) -> Vec<Vec<f64>> + 'static,
) -> Result<Tensor> {
    check_data(&data, &shape, op)?;
    let tape = unify_tapes(operands)?;
    let node = tape.map(|tape| {
        let id = tape.push(Node {
            inputs: operands.iter().map(|t| t.node_id()).collect(),
            backward: Box::new(backward),
        });
        (tape, id)
    });
    Ok(Tensor {
        shape,
        data: Rc::new(data),
        node,
    })
}

/// Gradients of a backward pass, retrievable for leaf tensors.
pub struct Gradients {
    by_node: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// The gradient buffer of a leaf, if it received any gradient.
    pub fn get(&self, leaf: &Tensor) -> Option<&[f64]> {
        leaf.node_id()
            .and_then(|id| self.by_node.get(id))
            .and_then(|g| g.as_deref())
    }
}

/// Runs reverse-mode accumulation from a scalar loss back to every leaf.
///
/// Intermediate gradients are dropped once consumed; only leaf gradients
/// are retained in the returned [`Gradients`].
pub fn backward(loss: &Tensor) -> Result<Gradients> {
    let (tape, loss_id) = loss
        .node
        .clone()
        .ok_or_else(|| Error::invalid("loss is not recorded on a tape"))?;
    if loss.numel() != 1 {
        return Err(Error::invalid(format!(
            "backward requires a scalar loss, got shape {:?}",
            loss.shape
        )));
    }
    let nodes = tape.nodes.borrow();
    let mut grads: Vec<Option<Vec<f64>>> = Vec::new();
    grads.resize_with(nodes.len(), || None);
    grads[loss_id] = Some(vec![1.0]);
    for id in (0..=loss_id).rev() {
        let Some(upstream) = grads[id].take() else {
            continue;
        };
        let node = &nodes[id];
        if node.inputs.is_empty() {
            // Leaf: keep the accumulated gradient for retrieval.
            grads[id] = Some(upstream);
            continue;
        }
        let contributions = (node.backward)(&upstream);
        debug_assert_eq!(contributions.len(), node.inputs.len());
        for (slot, contrib) in node.inputs.iter().zip(contributions) {
            let Some(input_id) = slot else { continue };
            match &mut grads[*input_id] {
                Some(acc) => {
                    for (a, c) in acc.iter_mut().zip(&contrib) {
                        *a += c;
                    }
                }
                empty => *empty = Some(contrib),
            }
        }
    }
    Ok(Gradients { by_node: grads })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn product_rule_at_three_four() {
        let tape = Tape::new();
        let x = tape.leaf(vec![3.0], &[]).unwrap();
        let y = tape.leaf(vec![4.0], &[]).unwrap();
        let loss = x.mul(&y).unwrap();
        let grads = backward(&loss).unwrap();
        assert_eq!(grads.get(&x).unwrap(), &[4.0]);
        assert_eq!(grads.get(&y).unwrap(), &[3.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let tape = Tape::new();
        let x = tape.leaf(vec![1.0, 2.0], &[2]).unwrap();
        let y = x.relu().unwrap();
        assert!(matches!(backward(&y), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn constants_are_not_recorded() {
        let a = Tensor::constant(vec![1.0, 2.0], &[2]).unwrap();
        let b = Tensor::constant(vec![3.0, 4.0], &[2]).unwrap();
        let c = a.add(&b).unwrap();
        assert!(!c.requires_grad());
    }

    #[test]
    fn gradient_accumulates_over_reuse() {
        // loss = x*x -> dloss/dx = 2x.
        let tape = Tape::new();
        let x = tape.leaf(vec![5.0], &[]).unwrap();
        let loss = x.mul(&x).unwrap();
        let grads = backward(&loss).unwrap();
        assert_eq!(grads.get(&x).unwrap(), &[10.0]);
    }

    #[test]
    fn non_finite_op_output_is_numerics_error() {
        let tape = Tape::new();
        let x = tape.leaf(vec![800.0], &[]).unwrap();
        let e = x.exp();
        assert!(matches!(e, Err(Error::Numerics(_))));
    }

    #[test]
    fn mixing_tapes_is_rejected() {
        let t1 = Tape::new();
        let t2 = Tape::new();
        let a = t1.leaf(vec![1.0], &[]).unwrap();
        let b = t2.leaf(vec![2.0], &[]).unwrap();
        assert!(a.add(&b).is_err());
    }

    #[test]
    fn linearity_of_backward() {
        // d(f+g) = df + dg on a shared leaf.
        let tape = Tape::new();
        let x = tape.leaf(vec![0.7, -0.3], &[2]).unwrap();
        let f = x.mul(&x).unwrap().sum().unwrap();
        let g = x.scale(3.0).unwrap().sum().unwrap();
        let combined = f.add(&g).unwrap();
        let grads = backward(&combined).unwrap();
        let gx = grads.get(&x).unwrap().to_vec();

        let tape2 = Tape::new();
        let x2 = tape2.leaf(vec![0.7, -0.3], &[2]).unwrap();
        let f2 = x2.mul(&x2).unwrap().sum().unwrap();
        let gf = backward(&f2).unwrap().get(&x2).unwrap().to_vec();
        let tape3 = Tape::new();
        let x3 = tape3.leaf(vec![0.7, -0.3], &[2]).unwrap();
        let g3 = x3.scale(3.0).unwrap().sum().unwrap();
        let gg = backward(&g3).unwrap().get(&x3).unwrap().to_vec();

        for i in 0..2 {
            assert!((gx[i] - (gf[i] + gg[i])).abs() < 1e-12);
        }
    }
}
