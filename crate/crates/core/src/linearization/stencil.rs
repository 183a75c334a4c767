use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// One evaluation point of a stencil.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StencilNode {
    pub eps: Vec<f64>,
    pub weight: f64,
}

/// Tensor-product central difference rule for `∂^α/∂ε^α` at `ε = 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpsilonStencil {
    pub orders: Vec<usize>,
    pub steps: Vec<f64>,
    pub nodes: Vec<StencilNode>,
}

/// Offsets and weights (for unit step) of the central rule for the `p`-th derivative.
pub fn central_weights(p: usize) -> (Vec<i32>, Vec<f64>) {
    if p == 0 {
        return (vec![0], vec![1.0]);
    }
    let offsets: Vec<i32> = if p % 2 == 1 {
        let m = (p as i32 + 1) / 2;
        (-m..=m).filter(|&j| j != 0).collect()
    } else {
        let m = p as i32 / 2;
        (-m..=m).collect()
    };
    let n = offsets.len();
    // Σ w_j j^q = p! δ_{qp}
    let v = DMatrix::from_fn(n, n, |q, j| (offsets[j] as f64).powi(q as i32));
    let mut rhs = DVector::zeros(n);
    rhs[p] = (1..=p).map(|i| i as f64).product();
    let w = v.lu().solve(&rhs).expect("Vandermonde system with distinct nodes");
    (offsets, w.iter().copied().collect())
}

impl EpsilonStencil {
    pub fn central(orders: &[usize], steps: &[f64]) -> Result<Self> {
        if orders.len() != steps.len() || orders.is_empty() {
            return Err(Error::Linearization("one step per parameter required".into()));
        }
        if steps.iter().any(|&e| !(e > 0.0)) {
            return Err(Error::Linearization("stencil steps must be positive".into()));
        }
        let rules: Vec<(Vec<i32>, Vec<f64>)> = orders.iter().map(|&p| central_weights(p)).collect();
        let mut nodes = vec![StencilNode { eps: vec![], weight: 1.0 }];
        for (i, (offs, ws)) in rules.iter().enumerate() {
            let scale = steps[i].powi(orders[i] as i32);
            let mut next = Vec::with_capacity(nodes.len() * offs.len());
            for node in &nodes {
                for (&j, &w) in offs.iter().zip(ws) {
                    if w == 0.0 {
                        continue;
                    }
                    let mut eps = node.eps.clone();
                    eps.push(j as f64 * steps[i]);
                    next.push(StencilNode { eps, weight: node.weight * w / scale });
                }
            }
            nodes = next;
        }
        Ok(EpsilonStencil { orders: orders.to_vec(), steps: steps.to_vec(), nodes })
    }

    pub fn uniform(orders: &[usize], eps: f64) -> Result<Self> {
        Self::central(orders, &vec![eps; orders.len()])
    }

    pub fn total_order(&self) -> usize {
        self.orders.iter().sum()
    }

    pub fn halved(&self) -> Result<Self> {
        let steps: Vec<f64> = self.steps.iter().map(|e| 0.5 * e).collect();
        Self::central(&self.orders, &steps)
    }

    /// Apply the rule to a scalar function of `ε`.
    pub fn apply(&self, f: impl Fn(&[f64]) -> f64) -> f64 {
        self.nodes.iter().map(|n| n.weight * f(&n.eps)).sum()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).unwrap_or_default()
    }
}
