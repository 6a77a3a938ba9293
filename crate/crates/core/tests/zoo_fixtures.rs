//! The shipped zoo documents must equal the canonical serialization of
//! architectures built here layer by layer from their reference
//! definitions. Run with `DARVIZ_BLESS=1` to rewrite the files.

use std::path::PathBuf;

use darviz_core::ir::{serialize_ir, ActivationFn, ConvParams, Layer, Model, PoolParams};
use darviz_core::zoo::zoo_entries;

fn conv(id: &str, filters: u32, k: u32, pad: u32) -> Layer {
    Layer::conv2d(id, ConvParams::new(filters, (k, k)).with_pad((pad, pad)))
}

fn vgg(name: &str, blocks: &[usize]) -> Model {
    let mut m = Model::new(name);
    m.insert_layer(Layer::input("input")).unwrap();
    m.set_default_input_shape("input", &[224, 224, 3]);
    let widths = [64, 128, 256, 512, 512];
    let mut prev = "input".to_string();
    for (b, (&n, &width)) in blocks.iter().zip(&widths).enumerate() {
        for i in 1..=n {
            let c = format!("conv{}_{i}", b + 1);
            let r = format!("relu{}_{i}", b + 1);
            m.append(&prev, conv(&c, width, 3, 1)).unwrap();
            m.append(&c, Layer::activation(&r, ActivationFn::Relu)).unwrap();
            prev = r;
        }
        let p = format!("pool{}", b + 1);
        m.append(&prev, Layer::max_pool(&p, PoolParams::new((2, 2), (2, 2))))
            .unwrap();
        prev = p;
    }
    m.append(&prev, Layer::flatten("flatten")).unwrap();
    m.append("flatten", Layer::dense("fc6", 4096)).unwrap();
    m.append("fc6", Layer::activation("relu6", ActivationFn::Relu)).unwrap();
    m.append("relu6", Layer::dropout("drop6", 0.5)).unwrap();
    m.append("drop6", Layer::dense("fc7", 4096)).unwrap();
    m.append("fc7", Layer::activation("relu7", ActivationFn::Relu)).unwrap();
    m.append("relu7", Layer::dropout("drop7", 0.5)).unwrap();
    m.append("drop7", Layer::dense("fc8", 1000)).unwrap();
    m.append("fc8", Layer::softmax("prob")).unwrap();
    let convs: usize = blocks.iter().sum();
    m.metadata.insert(
        "description".into(),
        format!(
            "VGG-{}: {convs} 3x3 convolutions in five blocks, three dense layers",
            convs + 3
        ),
    );
    m
}

fn lenet5() -> Model {
    let mut m = Model::new("lenet5");
    m.insert_layer(Layer::input("input")).unwrap();
    m.set_default_input_shape("input", &[32, 32, 1]);
    m.append("input", conv("conv1", 6, 5, 0)).unwrap();
    m.append("conv1", Layer::activation("tanh1", ActivationFn::Tanh))
        .unwrap();
    m.append("tanh1", Layer::avg_pool("pool1", PoolParams::new((2, 2), (2, 2))))
        .unwrap();
    m.append("pool1", conv("conv2", 16, 5, 0)).unwrap();
    m.append("conv2", Layer::activation("tanh2", ActivationFn::Tanh))
        .unwrap();
    m.append("tanh2", Layer::avg_pool("pool2", PoolParams::new((2, 2), (2, 2))))
        .unwrap();
    m.append("pool2", Layer::flatten("flatten")).unwrap();
    m.append("flatten", Layer::dense("fc1", 120)).unwrap();
    m.append("fc1", Layer::activation("tanh3", ActivationFn::Tanh)).unwrap();
    m.append("tanh3", Layer::dense("fc2", 84)).unwrap();
    m.append("fc2", Layer::activation("tanh4", ActivationFn::Tanh)).unwrap();
    m.append("tanh4", Layer::dense("fc3", 10)).unwrap();
    m.append("fc3", Layer::softmax("prob")).unwrap();
    m.metadata.insert(
        "description".into(),
        "LeNet-5: two 5x5 convolutions with average pooling, three dense layers".into(),
    );
    m
}

fn inception_block() -> Model {
    let mut m = Model::new("inception_block");
    m.insert_layer(Layer::input("input")).unwrap();
    m.set_default_input_shape("input", &[28, 28, 192]);
    let relu_after = |m: &mut Model, from: &str, layer: Layer| -> String {
        let id = layer.id.clone();
        m.append(from, layer).unwrap();
        let r = format!("{id}_relu");
        m.append(&id, Layer::activation(&r, ActivationFn::Relu)).unwrap();
        r
    };
    let b1 = relu_after(&mut m, "input", conv("b1_1x1", 64, 1, 0));
    let b2 = relu_after(&mut m, "input", conv("b2_reduce", 96, 1, 0));
    let b2 = relu_after(&mut m, &b2, conv("b2_3x3", 128, 3, 1));
    let b3 = relu_after(&mut m, "input", conv("b3_reduce", 16, 1, 0));
    let b3 = relu_after(&mut m, &b3, conv("b3_5x5", 32, 5, 2));
    m.append(
        "input",
        Layer::max_pool("b4_pool", PoolParams::new((3, 3), (1, 1)).with_pad((1, 1))),
    )
    .unwrap();
    let b4 = relu_after(&mut m, "b4_pool", conv("b4_proj", 32, 1, 0));
    m.insert_layer(Layer::concat("concat")).unwrap();
    for b in [b1, b2, b3, b4] {
        m.insert_edge(&b, "concat").unwrap();
    }
    m.metadata.insert(
        "description".into(),
        "Inception module (3a): 1x1, 3x3, 5x5 and pooled branches joined by channel concat".into(),
    );
    m
}

fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("zoo")
}

#[test]
fn fixtures_match_reference_builders() {
    let expected = [
        ("inception_block", inception_block()),
        ("lenet5", lenet5()),
        ("vgg16", vgg("vgg16", &[2, 2, 3, 3, 3])),
        ("vgg19", vgg("vgg19", &[2, 2, 4, 4, 4])),
    ];
    let bless = std::env::var_os("DARVIZ_BLESS").is_some();
    for (name, model) in &expected {
        let text = serialize_ir(model);
        let path = fixture_dir().join(format!("{name}.json"));
        if bless {
            std::fs::write(&path, &text).unwrap();
            continue;
        }
        let shipped = std::fs::read_to_string(&path).unwrap();
        assert_eq!(shipped, text, "{name} fixture differs from its reference build");
    }
    if !bless {
        for entry in zoo_entries() {
            let (_, reference) = expected.iter().find(|(n, _)| *n == entry.name).unwrap();
            assert_eq!(&entry.model, reference);
        }
    }
}
