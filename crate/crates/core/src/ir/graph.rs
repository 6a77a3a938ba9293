use std::collections::BTreeSet;

use super::{IrError, LayerKind, Model};

/// Index-based view of a model's edges. Nodes are numbered in lexicographic
/// id order, so "smallest index" and "smallest id" coincide.
pub(crate) struct Adjacency<'a> {
    pub ids: Vec<&'a str>,
    pub succ: Vec<Vec<usize>>,
    pub pred: Vec<Vec<usize>>,
}

impl<'a> Adjacency<'a> {
    pub fn new(model: &'a Model) -> Self {
        let mut ids: Vec<&str> = model.layers.iter().map(|l| l.id.as_str()).collect();
        ids.sort_unstable();
        ids.dedup();
        let mut succ = vec![Vec::new(); ids.len()];
        let mut pred = vec![Vec::new(); ids.len()];
        for (from, to) in &model.edges {
            let (Ok(f), Ok(t)) = (ids.binary_search(&from.as_str()), ids.binary_search(&to.as_str())) else {
                continue;
            };
            succ[f].push(t);
            pred[t].push(f);
        }
        for list in succ.iter_mut().chain(pred.iter_mut()) {
            list.sort_unstable();
            list.dedup();
        }
        Adjacency { ids, succ, pred }
    }

    pub fn index(&self, id: &str) -> Option<usize> {
        self.ids.binary_search(&id).ok()
    }

    /// Kahn's algorithm with a lexicographic ready queue. Returns the order
    /// found and whether every node was placed.
    fn kahn(&self) -> (Vec<usize>, bool) {
        let mut indegree: Vec<usize> = self.pred.iter().map(Vec::len).collect();
        let mut ready: BTreeSet<usize> = (0..self.ids.len()).filter(|&i| indegree[i] == 0).collect();
        let mut order = Vec::with_capacity(self.ids.len());
        while let Some(n) = ready.pop_first() {
            order.push(n);
            for &s in &self.succ[n] {
                indegree[s] -= 1;
                if indegree[s] == 0 {
                    ready.insert(s);
                }
            }
        }
        let complete = order.len() == self.ids.len();
        (order, complete)
    }

    /// Finds one cycle among the nodes Kahn could not place. Every such node
    /// has an unplaced predecessor, so walking predecessors must revisit a node.
    fn find_cycle(&self, placed: &[usize]) -> Vec<usize> {
        let mut done = vec![false; self.ids.len()];
        for &p in placed {
            done[p] = true;
        }
        let Some(start) = (0..self.ids.len()).find(|&i| !done[i]) else {
            return Vec::new();
        };
        let mut seen_at = vec![usize::MAX; self.ids.len()];
        let mut walk = Vec::new();
        let mut cur = start;
        while seen_at[cur] == usize::MAX {
            seen_at[cur] = walk.len();
            walk.push(cur);
            cur = *self.pred[cur]
                .iter()
                .find(|&&p| !done[p])
                .expect("unplaced node has an unplaced predecessor");
        }
        let mut cycle: Vec<usize> = walk[seen_at[cur]..].to_vec();
        // the walk follows predecessors; flip to edge direction
        cycle.reverse();
        let min_pos = cycle
            .iter()
            .enumerate()
            .min_by_key(|(_, &n)| n)
            .map(|(i, _)| i)
            .unwrap_or(0);
        cycle.rotate_left(min_pos);
        cycle
    }
}

/// Topological order of layer ids with lexicographic tie-breaking.
pub fn topo_order(model: &Model) -> Result<Vec<String>, IrError> {
    let adj = Adjacency::new(model);
    let (order, complete) = adj.kahn();
    if !complete {
        let cycle = adj.find_cycle(&order);
        return Err(IrError::CycleDetected {
            ids: cycle.into_iter().map(|i| adj.ids[i].to_string()).collect(),
        });
    }
    Ok(order.into_iter().map(|i| adj.ids[i].to_string()).collect())
}

/// Like [`topo_order`], but never fails: nodes stuck behind a cycle follow
/// the sortable prefix in lexicographic order.
pub fn topo_order_lenient(model: &Model) -> Vec<String> {
    let adj = Adjacency::new(model);
    let (mut order, complete) = adj.kahn();
    if !complete {
        let mut placed = vec![false; adj.ids.len()];
        for &i in &order {
            placed[i] = true;
        }
        order.extend((0..adj.ids.len()).filter(|&i| !placed[i]));
    }
    order.into_iter().map(|i| adj.ids[i].to_string()).collect()
}

/// An edge that closes a cycle, with the cycle it closes (starting at the
/// edge's target and ending at its source).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BackEdge {
    pub from: String,
    pub to: String,
    pub cycle: Vec<String>,
}

/// Back edges of a depth-first search that visits roots and successors in
/// lexicographic order. Removing all of them leaves the graph acyclic.
pub fn dfs_back_edges(model: &Model) -> Vec<BackEdge> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        New,
        Active,
        Done,
    }
    let adj = Adjacency::new(model);
    let n = adj.ids.len();
    let mut mark = vec![Mark::New; n];
    let mut out = Vec::new();
    for root in 0..n {
        if mark[root] != Mark::New {
            continue;
        }
        // explicit stack of (node, next successor position)
        let mut stack: Vec<(usize, usize)> = vec![(root, 0)];
        mark[root] = Mark::Active;
        while let Some(&mut (node, ref mut pos)) = stack.last_mut() {
            if let Some(&next) = adj.succ[node].get(*pos) {
                *pos += 1;
                match mark[next] {
                    Mark::New => {
                        mark[next] = Mark::Active;
                        stack.push((next, 0));
                    }
                    Mark::Active => {
                        let start = stack.iter().position(|&(s, _)| s == next).unwrap();
                        out.push(BackEdge {
                            from: adj.ids[node].to_string(),
                            to: adj.ids[next].to_string(),
                            cycle: stack[start..].iter().map(|&(s, _)| adj.ids[s].to_string()).collect(),
                        });
                    }
                    Mark::Done => {}
                }
            } else {
                mark[node] = Mark::Done;
                stack.pop();
            }
        }
    }
    out
}

/// Ids reachable from any Input layer (inputs included), sorted.
pub fn reachable_from_inputs(model: &Model) -> BTreeSet<String> {
    let adj = Adjacency::new(model);
    let mut seen = vec![false; adj.ids.len()];
    let mut stack: Vec<usize> = model
        .layers
        .iter()
        .filter(|l| l.kind == LayerKind::Input)
        .filter_map(|l| adj.index(&l.id))
        .collect();
    for &s in &stack {
        seen[s] = true;
    }
    while let Some(n) = stack.pop() {
        for &s in &adj.succ[n] {
            if !seen[s] {
                seen[s] = true;
                stack.push(s);
            }
        }
    }
    (0..adj.ids.len())
        .filter(|&i| seen[i])
        .map(|i| adj.ids[i].to_string())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::Layer;

    fn chain(ids: &[&str], edges: &[(&str, &str)]) -> Model {
        let mut m = Model::new("t");
        for id in ids {
            m.insert_layer(Layer::flatten(id)).unwrap();
        }
        for (a, b) in edges {
            m.insert_edge(a, b).unwrap();
        }
        m
    }

    #[test]
    fn single_node() {
        assert_eq!(topo_order(&chain(&["in"], &[])).unwrap(), vec!["in"]);
    }

    #[test]
    fn diamond_uses_lexicographic_tiebreak() {
        let m = chain(
            &["m", "b", "a", "in"],
            &[("in", "a"), ("in", "b"), ("a", "m"), ("b", "m")],
        );
        assert_eq!(topo_order(&m).unwrap(), vec!["in", "a", "b", "m"]);
    }

    #[test]
    fn two_cycle_detected() {
        let m = chain(&["a", "b"], &[("a", "b"), ("b", "a")]);
        assert_eq!(
            topo_order(&m),
            Err(IrError::CycleDetected {
                ids: vec!["a".into(), "b".into()]
            })
        );
    }

    #[test]
    fn cycle_reported_behind_prefix() {
        let m = chain(
            &["in", "x", "y", "z"],
            &[("in", "x"), ("x", "y"), ("y", "z"), ("z", "x")],
        );
        let Err(IrError::CycleDetected { ids }) = topo_order(&m) else {
            panic!("expected cycle");
        };
        assert_eq!(ids, vec!["x", "y", "z"]);
        assert_eq!(topo_order_lenient(&m), vec!["in", "x", "y", "z"]);
    }

    #[test]
    fn back_edges_break_all_cycles() {
        let mut m = chain(
            &["a", "b", "c", "d"],
            &[("a", "b"), ("b", "a"), ("b", "c"), ("c", "d"), ("d", "b")],
        );
        let back = dfs_back_edges(&m);
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].cycle, vec!["a", "b"]);
        for e in &back {
            m.remove_edge(&e.from, &e.to);
        }
        assert!(topo_order(&m).is_ok());
        assert!(dfs_back_edges(&m).is_empty());
    }

    #[test]
    fn reachability() {
        let mut m = Model::new("t");
        m.insert_layer(Layer::input("in")).unwrap();
        m.append("in", Layer::flatten("f")).unwrap();
        m.insert_layer(Layer::flatten("orphan")).unwrap();
        let r = reachable_from_inputs(&m);
        assert!(r.contains("in") && r.contains("f") && !r.contains("orphan"));
    }
}
