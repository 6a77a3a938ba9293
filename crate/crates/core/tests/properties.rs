use std::collections::BTreeMap;

use proptest::prelude::*;

use darviz_core::backends::weights::{layout_permutation, permute_shape, permute_tensor, LayoutTag};
use darviz_core::frontends::{import_caffe, import_keras_json};
use darviz_core::ir::{
    graph_isomorphic, parse_ir, serialize_ir, topo_order, ActivationFn, ConvParams, Layer, LayerKind, LayerParams,
    Model, PoolParams, Rounding,
};
use darviz_core::lint::{apply_suggestion, lint_model, RuleId};
use darviz_core::trace::{lint_trace, parse_trace, DetectorConfig, TraceFormat, TrainingTrace};
use darviz_core::zoo::zoo_get;

fn pair(max: u32) -> impl Strategy<Value = (u32, u32)> {
    (1..=max, 1..=max)
}

fn layer_params() -> impl Strategy<Value = (LayerKind, LayerParams)> {
    let rounding = prop_oneof![Just(Rounding::Floor), Just(Rounding::Ceil)];
    prop_oneof![
        Just((LayerKind::Input, LayerParams::Empty)),
        (1..512u32, pair(11), pair(4), (0..4u32, 0..4u32), rounding.clone()).prop_map(|(f, k, s, p, r)| {
            let mut c = ConvParams::new(f, k).with_stride(s).with_pad(p);
            c.rounding = r;
            (LayerKind::Conv2D, LayerParams::Conv2D(c))
        }),
        (pair(5), pair(3), (0..2u32, 0..2u32), rounding, any::<bool>()).prop_map(|(k, s, p, r, max)| {
            let kind = if max {
                LayerKind::MaxPool2D
            } else {
                LayerKind::AvgPool2D
            };
            (
                kind,
                LayerParams::Pool(PoolParams::new(k, s).with_pad(p).with_rounding(r)),
            )
        }),
        (1..5000u32).prop_map(|units| (
            LayerKind::Dense,
            LayerParams::Dense(darviz_core::ir::DenseParams { units })
        )),
        (-1.0..2.0f64).prop_map(|rate| (
            LayerKind::Dropout,
            LayerParams::Dropout(darviz_core::ir::DropoutParams { rate })
        )),
        prop_oneof![
            Just(ActivationFn::Relu),
            Just(ActivationFn::Sigmoid),
            Just(ActivationFn::Tanh),
            Just(ActivationFn::Softmax)
        ]
        .prop_map(|function| (
            LayerKind::Activation,
            LayerParams::Activation(darviz_core::ir::ActivationParams { function })
        )),
        Just((LayerKind::Flatten, LayerParams::Empty)),
        Just((LayerKind::BatchNorm, LayerParams::Empty)),
        Just((LayerKind::Concat, LayerParams::Concat(Default::default()))),
        Just((LayerKind::Add, LayerParams::Empty)),
        Just((LayerKind::Softmax, LayerParams::Empty)),
    ]
}

/// Random models: ids from the full id alphabet, arbitrary edges (cycles
/// included), arbitrary metadata strings.
fn model() -> impl Strategy<Value = Model> {
    let ids = prop::collection::btree_set("[a-zA-Z0-9_./-]{1,8}", 1..14);
    (ids, "\\PC{0,12}")
        .prop_flat_map(|(ids, name)| {
            let n = ids.len();
            (
                Just(ids.into_iter().collect::<Vec<_>>()),
                Just(name),
                prop::collection::vec(layer_params(), n),
                prop::collection::vec((0..n, 0..n), 0..n * 2),
                prop::collection::btree_map("[a-z_.]{1,10}", "\\PC{0,10}", 0..4),
                Just(()),
            )
        })
        .prop_map(|(ids, name, params, edges, metadata, ())| {
            let mut m = Model::new(name);
            for (id, (kind, p)) in ids.iter().zip(params) {
                m.insert_layer(Layer::new(id.clone(), kind, p).unwrap()).unwrap();
            }
            for (a, b) in edges {
                if a != b {
                    m.insert_edge(&ids[a], &ids[b]).unwrap();
                }
            }
            m.metadata.extend(metadata);
            m
        })
}

/// The same graph under different ids and layer order.
fn relabel(m: &Model, salt: usize) -> Model {
    let rename: BTreeMap<&str, String> = m
        .layers
        .iter()
        .enumerate()
        .map(|(i, l)| (l.id.as_str(), format!("n{}", (i * 7919 + salt) % 100_003)))
        .collect();
    let mut out = Model::new(&m.name);
    let mut layers = m.layers.clone();
    layers.reverse();
    for mut l in layers {
        l.id = rename[l.id.as_str()].clone();
        out.insert_layer(l).unwrap();
    }
    for (a, b) in &m.edges {
        out.insert_edge(&rename[a.as_str()], &rename[b.as_str()]).unwrap();
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn ir_round_trip(m in model()) {
        let text = serialize_ir(&m);
        let back = parse_ir(&text).unwrap();
        prop_assert_eq!(&back, &m);
        prop_assert_eq!(serialize_ir(&back), text);
    }

    #[test]
    fn isomorphism_ignores_ids_and_order(m in model(), salt in 0usize..1000) {
        let r = relabel(&m, salt);
        prop_assert!(graph_isomorphic(&m, &r));
        prop_assert!(graph_isomorphic(&r, &m));
    }

    #[test]
    fn isomorphism_sees_param_changes(m in model(), pick in any::<prop::sample::Index>()) {
        let mut changed = relabel(&m, 1);
        let i = pick.index(changed.layers.len());
        let l = &mut changed.layers[i];
        l.params = match l.params {
            LayerParams::Dense(d) => LayerParams::Dense(darviz_core::ir::DenseParams { units: d.units + 1 }),
            LayerParams::Conv2D(c) => LayerParams::Conv2D(ConvParams { filters: c.filters + 1, ..c }),
            _ => {
                // swap kind for one that takes no params
                l.kind = if l.kind == LayerKind::Add { LayerKind::Flatten } else { LayerKind::Add };
                LayerParams::Empty
            }
        };
        prop_assert!(!graph_isomorphic(&m, &changed));
        prop_assert!(!graph_isomorphic(&changed, &m));
    }

    #[test]
    fn trace_prefix_monotone(
        losses in prop::collection::vec(
            prop_oneof![8 => 0.0..10.0f64, 1 => Just(f64::NAN), 1 => Just(f64::INFINITY), 1 => 1e3..1e6f64],
            1..60,
        ),
    ) {
        let trace = TrainingTrace::from_losses(&losses).unwrap();
        let config = DetectorConfig::default();
        let full = lint_trace(&trace, &config);
        for k in 1..=trace.len() {
            let part = lint_trace(&trace.prefix(k), &config);
            prop_assert!(full.starts_with(&part));
            let expected: Vec<_> = full.iter().filter(|f| f.epoch as usize <= k).cloned().collect();
            prop_assert_eq!(part, expected);
        }
    }

    #[test]
    fn clean_decay_has_no_findings(l0 in 1e-3..1e3f64, rate in 1e-3..0.5f64, n in 1usize..150) {
        let losses: Vec<f64> = (0..n).map(|t| l0 * (1.0 - rate).powi(t as i32)).collect();
        let trace = TrainingTrace::from_losses(&losses).unwrap();
        prop_assert_eq!(lint_trace(&trace, &DetectorConfig::default()), vec![]);
    }

    #[test]
    fn importers_total_on_noise(text in "\\PC{0,200}") {
        let _ = import_caffe(&text);
        let _ = import_keras_json(&text);
        let _ = parse_ir(&text);
        let _ = parse_trace(&text, TraceFormat::Csv);
        let _ = parse_trace(&text, TraceFormat::JsonLines);
    }

    #[test]
    fn caffe_importer_total_on_token_soup(
        tokens in prop::collection::vec(
            prop_oneof![
                Just("layer".to_string()), Just("{".to_string()), Just("}".to_string()), Just(":".to_string()),
                Just("name".to_string()), Just("type".to_string()), Just("bottom".to_string()), Just("top".to_string()),
                Just("\"Convolution\"".to_string()), Just("\"Pooling\"".to_string()), Just("\"ReLU\"".to_string()),
                Just("\"Input\"".to_string()), Just("\"x\"".to_string()), Just("convolution_param".to_string()),
                Just("num_output".to_string()), Just("kernel_size".to_string()), Just("-3".to_string()),
                Just("0".to_string()), Just("99999999999".to_string()), Just("MAX".to_string()), Just("#".to_string()),
            ],
            0..80,
        ),
    ) {
        let _ = import_caffe(&tokens.join(" "));
    }
}

fn no_rule(m: &Model, rule: RuleId) -> bool {
    lint_model(m, None).diagnostics.iter().all(|d| d.rule != rule)
}

/// Applies every suggestion attached to `rule`'s diagnostics, one at a time.
fn fix_all(mut m: Model, rule: RuleId) -> Model {
    for _ in 0..16 {
        let diags = lint_model(&m, None).diagnostics;
        let Some(d) = diags.iter().find(|d| d.rule == rule) else {
            break;
        };
        let s = d
            .suggestion
            .clone()
            .unwrap_or_else(|| panic!("{rule} without suggestion"));
        m = apply_suggestion(&m, &s).unwrap();
    }
    m
}

const ZOO: [&str; 4] = ["inception_block", "lenet5", "vgg16", "vgg19"];

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn fix_removes_cycle(name in prop::sample::select(&ZOO[..]), pick in any::<prop::sample::Index>(), steps in 1usize..8) {
        let mut m = zoo_get(name).unwrap();
        let order = topo_order(&m).unwrap();
        // walk back from a random layer to one of its ancestors
        let head = order[pick.index(order.len())].clone();
        let mut tail = head.clone();
        for _ in 0..steps {
            match m.predecessors(&tail).first() {
                Some(p) => tail = p.to_string(),
                None => break,
            }
        }
        prop_assume!(tail != head);
        m.insert_edge(&head, &tail).unwrap();
        prop_assert!(!no_rule(&m, RuleId::L1));
        prop_assert!(no_rule(&fix_all(m, RuleId::L1), RuleId::L1));
    }

    #[test]
    fn fix_restores_flatten(name in prop::sample::select(&["lenet5", "vgg16", "vgg19"][..])) {
        let mut m = zoo_get(name).unwrap();
        let pred = m.predecessors("flatten")[0].to_string();
        let succ = m.successors("flatten")[0].to_string();
        m.remove_layer("flatten");
        m.insert_edge(&pred, &succ).unwrap();
        prop_assert!(!no_rule(&m, RuleId::L4));
        let fixed = fix_all(m, RuleId::L4);
        prop_assert!(!lint_model(&fixed, None).has_errors());
    }

    #[test]
    fn fix_dropout_rate(rate in prop_oneof![-5.0..=0.0f64, 1.0..5.0f64], which in prop::sample::select(&["drop6", "drop7"][..])) {
        let mut m = zoo_get("vgg16").unwrap();
        m.layer_mut(which).unwrap().params = LayerParams::Dropout(darviz_core::ir::DropoutParams { rate });
        prop_assert!(!no_rule(&m, RuleId::L5));
        let fixed = fix_all(m, RuleId::L5);
        prop_assert!(no_rule(&fixed, RuleId::L5));
        prop_assert!(!lint_model(&fixed, None).has_errors());
    }

    #[test]
    fn fix_oversized_kernel(name in prop::sample::select(&ZOO[..]), pick in any::<prop::sample::Index>(), extra in 1u32..40) {
        let mut m = zoo_get(name).unwrap();
        let analysis = lint_model(&m, None);
        let convs: Vec<String> = m.layers.iter().filter(|l| l.kind == LayerKind::Conv2D).map(|l| l.id.clone()).collect();
        let id = &convs[pick.index(convs.len())];
        let input = &analysis.shapes.shapes[m.predecessors(id)[0]];
        let LayerParams::Conv2D(c) = m.layer(id).unwrap().params else { unreachable!() };
        let k = input.dims()[0] as u32 + 2 * c.pad.0 + extra;
        m.layer_mut(id).unwrap().params = LayerParams::Conv2D(ConvParams { kernel: (k, k), ..c });
        prop_assert!(!no_rule(&m, RuleId::L6));
        // a clamped kernel may still upset a downstream concat, so only the
        // originating rule is checked
        prop_assert!(no_rule(&fix_all(m, RuleId::L6), RuleId::L6));
    }

    #[test]
    fn fix_learning_rate(lr in prop_oneof![1e-12..1e-6f64, 1.0001..1e6f64]) {
        let mut m = zoo_get("lenet5").unwrap();
        prop_assume!(!(1e-6..=1.0).contains(&lr));
        m.metadata.insert("learning_rate".into(), lr.to_string());
        prop_assert!(!no_rule(&m, RuleId::L9));
        prop_assert!(no_rule(&fix_all(m, RuleId::L9), RuleId::L9));
    }
}

#[test]
fn layout_inverse_composition_exhaustive() {
    for a in LayoutTag::ALL {
        for b in LayoutTag::ALL {
            let (Ok(ab), Ok(ba)) = (layout_permutation(a, b), layout_permutation(b, a)) else {
                assert!(layout_permutation(a, b).is_err() && layout_permutation(b, a).is_err());
                continue;
            };
            let composed: Vec<usize> = ba.iter().map(|&i| ab[i]).collect();
            assert_eq!(composed, (0..a.rank()).collect::<Vec<_>>(), "{a}->{b}->{a}");

            let shape: Vec<usize> = (2..2 + a.rank()).collect();
            let data: Vec<f32> = (0..shape.iter().product::<usize>()).map(|x| x as f32).collect();
            let there = permute_tensor(data.clone(), &shape, &ab).unwrap();
            let back = permute_tensor(there, &permute_shape(&shape, &ab), &ba).unwrap();
            assert_eq!(back, data);
        }
    }
}

#[test]
fn deep_nesting_is_rejected_not_overflowed() {
    let deep = "layer {".repeat(100_000);
    assert!(import_caffe(&deep).is_err());
    let deep_json = "[".repeat(100_000);
    assert!(import_keras_json(&deep_json).is_err());
    assert!(parse_ir(&deep_json).is_err());
}
