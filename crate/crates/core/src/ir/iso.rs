use std::collections::BTreeMap;

use super::graph::Adjacency;
use super::Model;

/// True iff some bijection between the layers of `a` and `b` preserves
/// kind, parameters and edges. Ids, display names, model names and
/// metadata are ignored.
///
/// Candidates are pruned with colour refinement over (kind, params,
/// in-neighbour colours, out-neighbour colours), then matched by
/// backtracking.
pub fn graph_isomorphic(a: &Model, b: &Model) -> bool {
    if a.layers.len() != b.layers.len() || a.edges.len() != b.edges.len() {
        return false;
    }
    let ga = Labeled::new(a);
    let gb = Labeled::new(b);
    if ga.adj.ids.len() != a.layers.len() || gb.adj.ids.len() != b.layers.len() {
        // duplicate ids; not a well-formed model
        return false;
    }

    let (ca, cb) = refine(&ga, &gb);
    let mut hist_a = ca.clone();
    let mut hist_b = cb.clone();
    hist_a.sort_unstable();
    hist_b.sort_unstable();
    if hist_a != hist_b {
        return false;
    }

    // match rarest colours first
    let mut freq: BTreeMap<usize, usize> = BTreeMap::new();
    for &c in &ca {
        *freq.entry(c).or_default() += 1;
    }
    let mut order: Vec<usize> = (0..ca.len()).collect();
    order.sort_by_key(|&n| (freq[&ca[n]], ca[n], n));

    let mut map = vec![usize::MAX; ca.len()];
    let mut used = vec![false; cb.len()];
    backtrack(&ga, &gb, &ca, &cb, &order, 0, &mut map, &mut used)
}

struct Labeled<'a> {
    adj: Adjacency<'a>,
    labels: Vec<String>,
}

impl<'a> Labeled<'a> {
    fn new(model: &'a Model) -> Self {
        let adj = Adjacency::new(model);
        let labels = adj
            .ids
            .iter()
            .map(|id| {
                let layer = model.layer(id).expect("id from model");
                format!("{}{}", layer.kind, layer.params.to_json())
            })
            .collect();
        Labeled { adj, labels }
    }

    fn has_edge(&self, from: usize, to: usize) -> bool {
        self.adj.succ[from].binary_search(&to).is_ok()
    }
}

/// Joint colour refinement so that colour ids are comparable across graphs.
fn refine(a: &Labeled, b: &Labeled) -> (Vec<usize>, Vec<usize>) {
    let mut palette: BTreeMap<String, usize> = BTreeMap::new();
    let intern = |key: String, palette: &mut BTreeMap<String, usize>| {
        let next = palette.len();
        *palette.entry(key).or_insert(next)
    };
    let mut ca: Vec<usize> = a.labels.iter().map(|l| intern(l.clone(), &mut palette)).collect();
    let mut cb: Vec<usize> = b.labels.iter().map(|l| intern(l.clone(), &mut palette)).collect();
    let mut classes = palette.len();

    loop {
        let mut round: BTreeMap<(usize, Vec<usize>, Vec<usize>), usize> = BTreeMap::new();
        let step = |g: &Labeled, colours: &[usize], round: &mut BTreeMap<_, usize>| {
            (0..colours.len())
                .map(|n| {
                    let mut ins: Vec<usize> = g.adj.pred[n].iter().map(|&p| colours[p]).collect();
                    let mut outs: Vec<usize> = g.adj.succ[n].iter().map(|&s| colours[s]).collect();
                    ins.sort_unstable();
                    outs.sort_unstable();
                    let next = round.len();
                    *round.entry((colours[n], ins, outs)).or_insert(next)
                })
                .collect::<Vec<usize>>()
        };
        let na = step(a, &ca, &mut round);
        let nb = step(b, &cb, &mut round);
        ca = na;
        cb = nb;
        if round.len() == classes {
            break;
        }
        classes = round.len();
    }
    (ca, cb)
}

#[allow(clippy::too_many_arguments)]
fn backtrack(
    a: &Labeled,
    b: &Labeled,
    ca: &[usize],
    cb: &[usize],
    order: &[usize],
    depth: usize,
    map: &mut [usize],
    used: &mut [bool],
) -> bool {
    let Some(&node) = order.get(depth) else {
        return true;
    };
    for cand in 0..cb.len() {
        if used[cand] || cb[cand] != ca[node] {
            continue;
        }
        let consistent = order[..depth].iter().all(|&prev| {
            let img = map[prev];
            a.has_edge(prev, node) == b.has_edge(img, cand) && a.has_edge(node, prev) == b.has_edge(cand, img)
        });
        if !consistent {
            continue;
        }
        map[node] = cand;
        used[cand] = true;
        if backtrack(a, b, ca, cb, order, depth + 1, map, used) {
            return true;
        }
        used[cand] = false;
        map[node] = usize::MAX;
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{ConvParams, Layer};

    fn net(prefix: &str, filters: u32) -> Model {
        let p = |s: &str| format!("{prefix}{s}");
        let mut m = Model::new("n");
        m.insert_layer(Layer::input(&p("in"))).unwrap();
        m.append(&p("in"), Layer::conv2d(&p("c"), ConvParams::new(filters, (3, 3))))
            .unwrap();
        m.append(&p("in"), Layer::conv2d(&p("d"), ConvParams::new(32, (1, 1))))
            .unwrap();
        m.insert_layer(Layer::concat(&p("cat"))).unwrap();
        m.insert_edge(&p("c"), &p("cat")).unwrap();
        m.insert_edge(&p("d"), &p("cat")).unwrap();
        m
    }

    #[test]
    fn reflexive() {
        let m = net("", 64);
        assert!(graph_isomorphic(&m, &m));
    }

    #[test]
    fn renamed_ids() {
        assert!(graph_isomorphic(&net("", 64), &net("x_", 64)));
    }

    #[test]
    fn params_differ() {
        assert!(!graph_isomorphic(&net("", 64), &net("", 32)));
    }

    #[test]
    fn edge_direction_matters() {
        let mut a = Model::new("a");
        a.insert_layer(Layer::flatten("x")).unwrap();
        a.insert_layer(Layer::flatten("y")).unwrap();
        a.insert_layer(Layer::flatten("z")).unwrap();
        let mut b = a.clone();
        a.insert_edge("x", "y").unwrap();
        a.insert_edge("y", "z").unwrap();
        b.insert_edge("x", "y").unwrap();
        b.insert_edge("z", "y").unwrap();
        assert!(!graph_isomorphic(&a, &b));
    }
}
