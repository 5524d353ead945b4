use std::cell::RefCell;
use std::collections::HashSet;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use super::ops::Op;
use super::Arr;

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

pub(crate) struct Node {
    pub(crate) id: u64,
    pub(crate) value: Arr,
    pub(crate) grad: Arr,
    pub(crate) trainable: bool,
    pub(crate) parents: Vec<Var>,
    pub(crate) op: Op,
}

/// Handle to a node in the computation graph. Cloning is cheap and refers
/// to the same node.
#[derive(Clone)]
pub struct Var {
    pub(crate) node: Rc<RefCell<Node>>,
}

/// Counters returned by [`Var::backward`]; `applied` is the number of
/// non-leaf nodes whose chain rule ran, `visited` counts every reachable
/// node. Each node is processed exactly once per call.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BackwardStats {
    pub visited: usize,
    pub applied: usize,
}

pub(crate) fn assert_finite(value: &Arr, what: &str) {
    if !value.iter().all(|x| x.is_finite()) {
        panic!("non-finite value produced by {what}");
    }
}

impl Var {
    pub(crate) fn from_node(value: Arr, parents: Vec<Var>, op: Op) -> Var {
        assert_finite(&value, op.name());
        let grad = Arr::zeros(value.raw_dim());
        Var {
            node: Rc::new(RefCell::new(Node {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                value,
                grad,
                trainable: false,
                parents,
                op,
            })),
        }
    }

    /// Trainable leaf. Gradients accumulate here across backward calls.
    pub fn param(value: Arr) -> Var {
        let v = Var::from_node(value, Vec::new(), Op::Leaf);
        v.node.borrow_mut().trainable = true;
        v
    }

    /// Non-trainable leaf (network input, fixed tensor). Gradients are
    /// still accumulated so inputs can be checked numerically.
    pub fn constant(value: Arr) -> Var {
        Var::from_node(value, Vec::new(), Op::Leaf)
    }

    pub fn scalar(x: f64) -> Var {
        Var::constant(super::arr_from(&[1], vec![x]))
    }

    pub(crate) fn id(&self) -> u64 {
        self.node.borrow().id
    }

    pub fn value(&self) -> Arr {
        self.node.borrow().value.clone()
    }

    pub fn grad(&self) -> Arr {
        self.node.borrow().grad.clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.node.borrow().value.shape().to_vec()
    }

    pub fn len(&self) -> usize {
        self.node.borrow().value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self.node.borrow().op, Op::Leaf)
    }

    pub fn is_trainable(&self) -> bool {
        self.node.borrow().trainable
    }

    /// Extracts the single element of a scalar (shape `[1]`) node.
    pub fn item(&self) -> f64 {
        let node = self.node.borrow();
        assert!(
            node.value.len() == 1,
            "item() needs a scalar, got shape {:?}",
            node.value.shape()
        );
        *node.value.iter().next().unwrap()
    }

    /// Overwrites a leaf's value in place. Panics on interior nodes or on
    /// a shape change: downstream graphs are rebuilt per step, not patched.
    pub fn set_value(&self, value: Arr) {
        let mut node = self.node.borrow_mut();
        assert!(matches!(node.op, Op::Leaf), "set_value only applies to leaves");
        assert_eq!(
            node.value.shape(),
            value.shape(),
            "set_value must preserve shape"
        );
        assert_finite(&value, "set_value");
        node.value = value;
    }

    pub fn zero_grad(&self) {
        let mut node = self.node.borrow_mut();
        node.grad.fill(0.0);
    }

    /// New constant leaf sharing this node's current value: a stop-gradient.
    pub fn detach(&self) -> Var {
        Var::constant(self.value())
    }

    /// Reverse pass from a scalar loss. Interior gradients are reset before
    /// propagation; leaf gradients accumulate, so two backward calls from
    /// disjoint losses sum their contributions at shared leaves.
    pub fn backward(&self) -> BackwardStats {
        {
            let node = self.node.borrow();
            assert!(
                node.value.len() == 1,
                "backward requires a scalar loss, got shape {:?}",
                node.value.shape()
            );
        }
        let order = topo_order(self);
        for var in &order {
            let mut node = var.node.borrow_mut();
            if !matches!(node.op, Op::Leaf) {
                node.grad.fill(0.0);
            }
        }
        {
            let mut node = self.node.borrow_mut();
            let seed = node.grad.first().copied().unwrap_or(0.0) + 1.0;
            node.grad.fill(seed);
        }
        let mut applied = 0usize;
        for var in order.iter().rev() {
            let is_leaf = {
                let node = var.node.borrow();
                matches!(node.op, Op::Leaf)
            };
            if is_leaf {
                continue;
            }
            super::ops::apply_backward(var);
            applied += 1;
        }
        BackwardStats {
            visited: order.len(),
            applied,
        }
    }

    /// Leaf vars reachable from this node, in first-encounter order.
    pub fn leaves(&self) -> Vec<Var> {
        topo_order(self)
            .into_iter()
            .filter(|v| v.is_leaf())
            .collect()
    }
}

/// Post-order over the DAG: every parent precedes its consumers. Iterative
/// so deep chains (long rollouts) cannot overflow the call stack.
pub(crate) fn topo_order(root: &Var) -> Vec<Var> {
    let mut order: Vec<Var> = Vec::new();
    let mut seen: HashSet<u64> = HashSet::new();
    let mut stack: Vec<(Var, usize)> = Vec::new();
    seen.insert(root.id());
    stack.push((root.clone(), 0));
    while let Some((var, next)) = stack.pop() {
        let parent = {
            let node = var.node.borrow();
            node.parents.get(next).cloned()
        };
        match parent {
            Some(p) => {
                stack.push((var, next + 1));
                if seen.insert(p.id()) {
                    stack.push((p, 0));
                }
            }
            None => order.push(var),
        }
    }
    order
}

#[cfg(test)]
mod tests {
    use super::super::arr_from;
    use super::*;

    #[test]
    fn backward_visits_shared_subgraph_once() {
        // y = (x*x) + (x*x) built with a shared square node.
        let x = Var::param(arr_from(&[1], vec![3.0]));
        let sq = x.mul(&x);
        let y = sq.add(&sq);
        let stats = y.backward();
        // nodes: x, sq, y
        assert_eq!(stats.visited, 3);
        assert_eq!(stats.applied, 2);
        assert_eq!(y.item(), 18.0);
        assert_eq!(x.grad()[[0]], 12.0);
    }

    #[test]
    fn grads_accumulate_across_backward_calls() {
        let x = Var::param(arr_from(&[1], vec![2.0]));
        let y = x.mul(&x);
        y.backward();
        assert_eq!(x.grad()[[0]], 4.0);
        y.backward();
        assert_eq!(x.grad()[[0]], 8.0);
        x.zero_grad();
        y.backward();
        assert_eq!(x.grad()[[0]], 4.0);
    }

    #[test]
    fn disjoint_losses_sum_at_shared_leaf() {
        let x = Var::param(arr_from(&[1], vec![1.5]));
        let a = x.scale(2.0).sum_all();
        let b = x.mul(&x).sum_all();
        a.backward();
        b.backward();
        let separate = x.grad()[[0]];
        x.zero_grad();
        let joint = a.add(&b);
        joint.backward();
        assert!((x.grad()[[0]] - separate).abs() < 1e-15);
        assert_eq!(separate, 2.0 + 3.0);
    }

    #[test]
    #[should_panic(expected = "scalar loss")]
    fn backward_rejects_non_scalar() {
        let x = Var::param(arr_from(&[2], vec![1.0, 2.0]));
        x.relu().backward();
    }

    #[test]
    #[should_panic(expected = "non-finite")]
    fn non_finite_forward_panics() {
        let x = Var::constant(arr_from(&[1], vec![1e308]));
        let _ = x.mul(&x).mul(&x);
    }

    #[test]
    fn detach_blocks_gradient() {
        let x = Var::param(arr_from(&[1], vec![2.0]));
        let d = x.detach();
        let y = x.mul(&d).sum_all();
        y.backward();
        // d is a fresh leaf: x only sees the d-as-constant factor.
        assert_eq!(x.grad()[[0]], 2.0);
        assert_eq!(d.grad()[[0]], 2.0);
        assert!(!d.is_trainable());
    }

    #[test]
    fn set_value_preserves_graph_identity() {
        let x = Var::param(arr_from(&[2], vec![1.0, 2.0]));
        x.set_value(arr_from(&[2], vec![3.0, 4.0]));
        assert_eq!(x.value()[[1]], 4.0);
    }

    #[test]
    #[should_panic(expected = "preserve shape")]
    fn set_value_rejects_shape_change() {
        let x = Var::param(arr_from(&[2], vec![1.0, 2.0]));
        x.set_value(arr_from(&[3], vec![0.0; 3]));
    }
}
