use std::collections::{HashMap, HashSet};
use std::fmt;
use std::rc::Rc;

use crate::{Array, Float, ParamId};

type BackwardFn<T> = Box<dyn Fn(&Array<T>, &[bool]) -> Vec<Option<Array<T>>>>;

struct Node<T: Float> {
    value: Array<T>,
    requires_grad: bool,
    parents: Vec<Tensor<T>>,
    backward: Option<BackwardFn<T>>,
    param: Option<ParamId>,
}

/// A value in the computation graph.
///
/// Tensors are cheap to clone. A tensor that does not require gradients keeps
/// no reference to its inputs, so inference never retains intermediates.
pub struct Tensor<T: Float>(Rc<Node<T>>);

impl<T: Float> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Self(Rc::clone(&self.0))
    }
}

impl<T: Float> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape())
            .field("requires_grad", &self.0.requires_grad)
            .field("param", &self.0.param)
            .finish()
    }
}

impl<T: Float> Tensor<T> {
    /// Leaf that never receives gradients.
    pub fn constant(value: Array<T>) -> Self {
        Self(Rc::new(Node { value, requires_grad: false, parents: Vec::new(), backward: None, param: None }))
    }

    /// Leaf whose gradient is reported by [`Gradients::wrt`].
    pub fn leaf(value: Array<T>) -> Self {
        Self(Rc::new(Node { value, requires_grad: true, parents: Vec::new(), backward: None, param: None }))
    }

    pub(crate) fn param_leaf(value: Array<T>, id: ParamId, requires_grad: bool) -> Self {
        Self(Rc::new(Node { value, requires_grad, parents: Vec::new(), backward: None, param: Some(id) }))
    }

    /// Build an op node. `backward` receives the output gradient and, per
    /// parent, whether that parent needs a gradient.
    pub fn from_op(
        value: Array<T>,
        parents: Vec<Tensor<T>>,
        backward: impl Fn(&Array<T>, &[bool]) -> Vec<Option<Array<T>>> + 'static,
    ) -> Self {
        let requires_grad = parents.iter().any(|p| p.requires_grad());
        if !requires_grad {
            return Self::constant(value);
        }
        Self(Rc::new(Node {
            value,
            requires_grad,
            parents,
            backward: Some(Box::new(backward)),
            param: None,
        }))
    }

    pub fn value(&self) -> &Array<T> {
        &self.0.value
    }

    pub fn shape(&self) -> &[usize] {
        self.0.value.shape()
    }

    pub fn dims4(&self) -> (usize, usize, usize, usize) {
        self.0.value.dims4()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn param_id(&self) -> Option<ParamId> {
        self.0.param
    }

    /// Same value, cut from the graph.
    pub fn detach(&self) -> Self {
        Self::constant(self.0.value.clone())
    }

    /// Scalar value of a one-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.0.value.len(), 1, "item() on a tensor with {} elements", self.0.value.len());
        self.0.value.data()[0].as_f64()
    }

    fn key(&self) -> usize {
        Rc::as_ptr(&self.0) as usize
    }

    /// Reverse-mode sweep seeded with ones. Usually called on a scalar loss.
    pub fn backward(&self) -> Gradients<T> {
        let seed = Array::full(self.shape().to_vec(), T::one());
        self.backward_with(seed)
    }

    pub fn backward_with(&self, seed: Array<T>) -> Gradients<T> {
        assert_eq!(seed.shape(), self.shape(), "seed shape must match the tensor");
        let mut grads = Gradients { params: HashMap::new(), leaves: HashMap::new() };
        if !self.requires_grad() {
            return grads;
        }
        let order = self.topo_order();
        let mut pending: HashMap<usize, Array<T>> = HashMap::new();
        pending.insert(self.key(), seed);
        for node in order.iter().rev() {
            let Some(g) = pending.remove(&node.key()) else { continue };
            let inner = &node.0;
            if inner.parents.is_empty() {
                if let Some(id) = inner.param {
                    accumulate(grads.params.entry(id), g);
                } else {
                    grads.leaves.insert(node.key(), (node.clone(), g));
                }
                continue;
            }
            let needs: Vec<bool> = inner.parents.iter().map(|p| p.requires_grad()).collect();
            let backward = inner.backward.as_ref().expect("op node without backward");
            let parent_grads = backward(&g, &needs);
            debug_assert_eq!(parent_grads.len(), inner.parents.len());
            for ((parent, pg), need) in inner.parents.iter().zip(parent_grads).zip(needs) {
                if let (true, Some(pg)) = (need, pg) {
                    assert_eq!(pg.shape(), parent.shape(), "backward produced a mis-shaped gradient");
                    accumulate(pending.entry(parent.key()), pg);
                }
            }
        }
        grads
    }

    /// Post-order over nodes that require gradients.
    fn topo_order(&self) -> Vec<Tensor<T>> {
        let mut order = Vec::new();
        let mut visited = HashSet::new();
        let mut stack: Vec<(Tensor<T>, bool)> = vec![(self.clone(), false)];
        while let Some((node, expanded)) = stack.pop() {
            if expanded {
                order.push(node);
                continue;
            }
            if !visited.insert(node.key()) {
                continue;
            }
            stack.push((node.clone(), true));
            for p in &node.0.parents {
                if p.requires_grad() && !visited.contains(&p.key()) {
                    stack.push((p.clone(), false));
                }
            }
        }
        order
    }
}

fn accumulate<K, T: Float>(entry: std::collections::hash_map::Entry<'_, K, Array<T>>, g: Array<T>) {
    use std::collections::hash_map::Entry;
    match entry {
        Entry::Occupied(mut e) => e.get_mut().add_assign(&g),
        Entry::Vacant(e) => {
            e.insert(g);
        }
    }
}

/// Result of a backward sweep.
pub struct Gradients<T: Float> {
    params: HashMap<ParamId, Array<T>>,
    leaves: HashMap<usize, (Tensor<T>, Array<T>)>,
}

impl<T: Float> Gradients<T> {
    pub fn param(&self, id: ParamId) -> Option<&Array<T>> {
        self.params.get(&id)
    }

    /// Gradient with respect to a leaf created by [`Tensor::leaf`].
    pub fn wrt(&self, t: &Tensor<T>) -> Option<&Array<T>> {
        self.leaves.get(&t.key()).map(|(_, g)| g)
    }

    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Array<T>)> {
        self.params.iter().map(|(k, v)| (*k, v))
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty() && self.leaves.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops;

    #[test]
    fn shared_subexpression_accumulates() {
        // f(x) = sum(x * x + x) -> df/dx = 2x + 1
        let x = Tensor::leaf(Array::from_vec(vec![3], vec![1.0f64, -2.0, 0.5]));
        let y = ops::add(&ops::mul(&x, &x), &x);
        let g = ops::sum_all(&y).backward();
        assert_eq!(g.wrt(&x).unwrap().data(), &[3.0, -3.0, 2.0]);
    }

    #[test]
    fn constants_do_not_retain_graph() {
        let a = Tensor::constant(Array::from_vec(vec![2], vec![1.0f32, 2.0]));
        let b = ops::mul_scalar(&a, 3.0);
        assert!(!b.requires_grad());
        assert!(b.backward().is_empty());
    }
}
