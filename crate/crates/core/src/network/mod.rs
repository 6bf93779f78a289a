//! Feedforward composition of nodes: node `i` sees the departures of node `i − 1`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::node::{self, DeclaredRates, NodeOutput, NodePrimitives, NodeSpec};
use crate::pathcalc::{InvertiblePath, MonotonePath};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub classes: usize,
    pub nodes: Vec<NodeSpec>,
}

impl NetworkSpec {
    pub fn new(classes: usize, nodes: Vec<NodeSpec>) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::Config("network needs at least one node".into()));
        }
        for (i, n) in nodes.iter().enumerate() {
            if n.classes != classes {
                return Err(Error::Config(format!("node {} declares {} classes, network has {classes}", i + 1, n.classes)));
            }
            n.validate().map_err(|e| e.at_node(i + 1))?;
        }
        Ok(NetworkSpec { classes, nodes })
    }

    pub fn n(&self) -> usize {
        self.nodes.len()
    }
}

/// Exogenous arrivals per class and service paths per node and class.
#[derive(Clone, Debug)]
pub struct NetworkPrimitives {
    pub a: Vec<MonotonePath>,
    pub s: Vec<Vec<Option<InvertiblePath>>>,
}

impl NetworkPrimitives {
    pub fn new(a: Vec<MonotonePath>, s: Vec<Vec<Option<InvertiblePath>>>, spec: &NetworkSpec) -> Result<Self> {
        if a.len() != spec.classes {
            return Err(Error::Input(format!("expected {} arrival paths, got {}", spec.classes, a.len())));
        }
        if s.len() != spec.n() {
            return Err(Error::Input(format!("expected {} service rows, got {}", spec.n(), s.len())));
        }
        for (i, (row, node)) in s.iter().zip(&spec.nodes).enumerate() {
            if row.len() != spec.classes {
                return Err(Error::Input(format!("node {}: service row has wrong length", i + 1)));
            }
            if let Some(j) = node.visiting().find(|&j| row[j].is_none()) {
                return Err(Error::Input(format!("node {}: missing service path for class {j}", i + 1)));
            }
        }
        Ok(NetworkPrimitives { a, s })
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.a[0].start(), self.a[0].end())
    }
}

#[derive(Clone, Debug)]
pub struct NetworkOutput {
    pub nodes: Vec<NodeOutput>,
}

impl NetworkOutput {
    /// Departures of node `i` (1-based); `i = 0` is not stored, use the arrivals.
    pub fn departures(&self, i: usize) -> &[MonotonePath] {
        &self.nodes[i - 1].d
    }
}

/// Declared rates: per-class arrivals and per-node, per-class service.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkRates {
    pub arrival: Vec<f64>,
    pub service: Vec<Vec<f64>>,
}

impl NetworkRates {
    pub fn node(&self, i: usize) -> DeclaredRates {
        DeclaredRates { arrival: self.arrival.clone(), service: self.service[i].clone() }
    }
}

pub fn propagate(np: &NetworkPrimitives, spec: &NetworkSpec) -> Result<NetworkOutput> {
    let mut input = np.a.clone();
    let mut nodes = Vec::with_capacity(spec.n());
    let mut upstream_sensitive = false;
    for (i, node_spec) in spec.nodes.iter().enumerate() {
        let prim = NodePrimitives::new(input, np.s[i].clone()).map_err(|e| e.at_node(i + 1))?;
        let mut out = node::solve(&prim, node_spec).map_err(|e| e.at_node(i + 1))?;
        upstream_sensitive |= out.truncation_sensitive;
        out.truncation_sensitive = upstream_sensitive;
        input = out.d.clone();
        nodes.push(out);
    }
    Ok(NetworkOutput { nodes })
}

/// True iff every node's declared load is below one.
pub fn check_network_regular(spec: &NetworkSpec, rates: &NetworkRates) -> Result<bool> {
    if rates.service.len() != spec.n() {
        return Err(Error::Config("declared service rates needed for every node".into()));
    }
    for (i, n) in spec.nodes.iter().enumerate() {
        if !node::check_regular(n, &rates.node(i)).map_err(|e| e.at_node(i + 1))? {
            return Ok(false);
        }
    }
    Ok(true)
}
