use crate::error::{Error, Result};
use crate::layers::{LrnParams, PoolParams};
use crate::tensor::Shape;
use std::collections::BTreeMap;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum LayerKind {
    Data,
    Conv {
        in_channels: usize,
        out_channels: usize,
        kernel: (usize, usize),
        stride: usize,
        padding: usize,
    },
    MaxPool(PoolParams),
    Lrn(LrnParams),
    Relu,
    /// Channel concatenation of exactly two inputs.
    Concat,
    Fc {
        in_dim: usize,
        out_dim: usize,
    },
    Softmax,
}

impl LayerKind {
    pub fn has_params(&self) -> bool {
        matches!(self, LayerKind::Conv { .. } | LayerKind::Fc { .. })
    }

    fn expected_inputs(&self) -> usize {
        match self {
            LayerKind::Data => 0,
            LayerKind::Concat => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    pub inputs: Vec<String>,
    /// Expected output shape, when the architecture declares one; inference
    /// fails loudly on any disagreement.
    #[serde(default)]
    pub declared: Option<Shape>,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct NetworkGraph {
    /// Topologically ordered: every layer's inputs precede it.
    pub layers: Vec<LayerSpec>,
    pub input_shape: Shape,
    pub num_classes: usize,
}

impl NetworkGraph {
    pub fn new(layers: Vec<LayerSpec>, input_shape: Shape, num_classes: usize) -> Result<Self> {
        let g = NetworkGraph { layers, input_shape, num_classes };
        g.validate()?;
        Ok(g)
    }

    pub fn layer_index(&self) -> BTreeMap<&str, usize> {
        self.layers
            .iter()
            .enumerate()
            .map(|(i, l)| (l.name.as_str(), i))
            .collect()
    }

    pub fn layer_names(&self) -> Vec<&str> {
        self.layers.iter().map(|l| l.name.as_str()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::InvalidGraph("graph has no layers".into()));
        }
        if self.num_classes < 2 {
            return Err(Error::InvalidGraph(format!(
                "need at least 2 classes, got {}",
                self.num_classes
            )));
        }
        let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
        let mut consumed = vec![false; self.layers.len()];
        let mut sources = 0;
        for (i, layer) in self.layers.iter().enumerate() {
            if seen.insert(layer.name.as_str(), i).is_some() {
                return Err(Error::InvalidGraph(format!("duplicate layer name '{}'", layer.name)));
            }
            let expected = layer.kind.expected_inputs();
            if layer.inputs.len() != expected {
                return Err(Error::InvalidGraph(format!(
                    "layer '{}' expects {} input(s), has {}",
                    layer.name,
                    expected,
                    layer.inputs.len()
                )));
            }
            if matches!(layer.kind, LayerKind::Data) {
                sources += 1;
            }
            for input in &layer.inputs {
                // Topological order doubles as the acyclicity check.
                match seen.get(input.as_str()) {
                    Some(&j) => consumed[j] = true,
                    None => {
                        return Err(Error::InvalidGraph(format!(
                            "layer '{}' references unknown or later layer '{}'",
                            layer.name, input
                        )))
                    }
                }
            }
        }
        if sources != 1 {
            return Err(Error::InvalidGraph(format!("expected exactly one Data layer, found {sources}")));
        }
        let sinks: Vec<&str> = self
            .layers
            .iter()
            .zip(&consumed)
            .filter(|&(_, &c)| !c)
            .map(|(l, _)| l.name.as_str())
            .collect();
        if sinks.len() != 1 {
            return Err(Error::InvalidGraph(format!("expected exactly one sink, found {sinks:?}")));
        }
        Ok(())
    }
}

fn infer_layer_shape(
    layer: &LayerSpec,
    input_shapes: &[&Shape],
    graph_input: &Shape,
) -> Result<Shape> {
    let conflict = |detail: String| Error::ShapeConflict {
        producer: layer.inputs.first().cloned().unwrap_or_default(),
        consumer: layer.name.clone(),
        detail,
    };
    match &layer.kind {
        LayerKind::Data => Ok(graph_input.clone()),
        LayerKind::Conv { in_channels, out_channels, kernel, stride, padding } => {
            let p = crate::layers::ConvParams::<f32>::zeroed(
                *in_channels,
                *out_channels,
                *kernel,
                *stride,
                *padding,
            );
            p.out_shape(input_shapes[0]).map_err(|e| conflict(e.to_string()))
        }
        LayerKind::MaxPool(p) => {
            p.out_shape(input_shapes[0]).map_err(|e| conflict(e.to_string()))
        }
        LayerKind::Lrn(_) | LayerKind::Relu => Ok(input_shapes[0].clone()),
        LayerKind::Concat => {
            let (a, b) = (input_shapes[0], input_shapes[1]);
            match (a.dims(), b.dims()) {
                (&[ca, ha, wa], &[cb, hb, wb]) if ha == hb && wa == wb => {
                    Shape::new(vec![ca + cb, ha, wa])
                }
                _ => Err(Error::ShapeConflict {
                    producer: layer.inputs[0].clone(),
                    consumer: layer.name.clone(),
                    detail: format!("cannot concat {a} with {b}"),
                }),
            }
        }
        LayerKind::Fc { in_dim, out_dim } => {
            let got = input_shapes[0].num_elements();
            if got != *in_dim {
                return Err(conflict(format!("FC expects {in_dim} inputs, got {got}")));
            }
            Shape::new(vec![*out_dim])
        }
        LayerKind::Softmax => Ok(input_shapes[0].clone()),
    }
}

/// Per-layer output shapes, in graph order. Fails loudly on any inconsistency,
/// naming both layers involved.
pub fn infer_shapes(g: &NetworkGraph) -> Result<Vec<(String, Shape)>> {
    g.validate()?;
    let index = g.layer_index();
    let mut shapes: Vec<Shape> = Vec::with_capacity(g.layers.len());
    for layer in &g.layers {
        let inputs: Vec<&Shape> = layer.inputs.iter().map(|n| &shapes[index[n.as_str()]]).collect();
        let shape = infer_layer_shape(layer, &inputs, &g.input_shape)?;
        if let Some(declared) = &layer.declared {
            if declared != &shape {
                return Err(Error::ShapeConflict {
                    producer: layer.inputs.first().cloned().unwrap_or_else(|| "Data".into()),
                    consumer: layer.name.clone(),
                    detail: format!("inferred {shape}, declared {declared}"),
                });
            }
        }
        shapes.push(shape);
    }
    Ok(g.layers
        .iter()
        .zip(shapes)
        .map(|(l, s)| (l.name.clone(), s))
        .collect())
}

/// Channel widths and input size of the DeXpression architecture; the
/// standard configuration reproduces the published per-layer sizes, scaled
/// variants serve small-scale gradient checks and tests.
#[derive(Debug, Clone)]
pub struct DexpressionConfig {
    pub input_hw: usize,
    pub conv1_filters: usize,
    pub conv2a_filters: usize,
    pub conv2b_filters: usize,
    pub conv2c_filters: usize,
    pub conv3a_filters: usize,
    pub conv3b_filters: usize,
    pub conv3c_filters: usize,
    pub lrn: LrnParams,
    pub num_classes: usize,
}

impl DexpressionConfig {
    pub fn standard(num_classes: usize) -> Self {
        DexpressionConfig {
            input_hw: 224,
            conv1_filters: 64,
            conv2a_filters: 96,
            conv2b_filters: 208,
            conv2c_filters: 64,
            conv3a_filters: 96,
            conv3b_filters: 208,
            conv3c_filters: 64,
            lrn: LrnParams::default(),
            num_classes,
        }
    }

    /// Same topology at 16x16 input with narrow channels; used by the
    /// end-to-end gradient check and fast training tests.
    pub fn shrunken(num_classes: usize) -> Self {
        DexpressionConfig {
            input_hw: 16,
            conv1_filters: 4,
            conv2a_filters: 4,
            conv2b_filters: 6,
            conv2c_filters: 3,
            conv3a_filters: 4,
            conv3b_filters: 6,
            conv3c_filters: 3,
            lrn: LrnParams::default(),
            num_classes,
        }
    }
}

struct GraphBuilder {
    layers: Vec<LayerSpec>,
}

impl GraphBuilder {
    fn push(&mut self, name: &str, kind: LayerKind, inputs: &[&str]) -> String {
        self.layers.push(LayerSpec {
            name: name.to_string(),
            kind,
            inputs: inputs.iter().map(|s| s.to_string()).collect(),
            declared: None,
        });
        name.to_string()
    }

    fn conv(
        &mut self,
        name: &str,
        input: &str,
        in_c: usize,
        out_c: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> String {
        self.push(
            name,
            LayerKind::Conv {
                in_channels: in_c,
                out_channels: out_c,
                kernel: (kernel, kernel),
                stride,
                padding,
            },
            &[input],
        )
    }
}

/// One FeatEx block: a 1x1-conv -> ReLU -> 3x3-conv -> ReLU path in parallel
/// with a max-pool -> 1x1-conv -> ReLU path, joined by channel concatenation.
#[allow(clippy::too_many_arguments)]
fn featex(
    b: &mut GraphBuilder,
    suffix: &str,
    input: &str,
    in_channels: usize,
    a_filters: usize,
    b_filters: usize,
    c_filters: usize,
) -> String {
    let conv_a = b.conv(&format!("Convolution {suffix}a"), input, in_channels, a_filters, 1, 1, 0);
    let relu_a = b.push(&format!("ReLU {suffix}a"), LayerKind::Relu, &[&conv_a]);
    let conv_b =
        b.conv(&format!("Convolution {suffix}b"), &relu_a, a_filters, b_filters, 3, 1, 1);
    let relu_b = b.push(&format!("ReLU {suffix}b"), LayerKind::Relu, &[&conv_b]);

    let pool = b.push(
        &format!("Pooling {suffix}a"),
        LayerKind::MaxPool(PoolParams { window: 3, stride: 1, padding: 1 }),
        &[input],
    );
    let conv_c = b.conv(&format!("Convolution {suffix}c"), &pool, in_channels, c_filters, 1, 1, 0);
    let relu_c = b.push(&format!("ReLU {suffix}c"), LayerKind::Relu, &[&conv_c]);

    b.push(&format!("Concat {suffix}"), LayerKind::Concat, &[&relu_b, &relu_c])
}

pub fn build_dexpression_with(cfg: &DexpressionConfig) -> Result<NetworkGraph> {
    let mut b = GraphBuilder { layers: Vec::new() };
    let data = b.push("Data", LayerKind::Data, &[]);
    let conv1 = b.conv("Convolution 1", &data, 1, cfg.conv1_filters, 7, 2, 3);
    let relu1 = b.push("ReLU 1", LayerKind::Relu, &[&conv1]);
    let pool1 = b.push(
        "Pooling 1",
        LayerKind::MaxPool(PoolParams { window: 3, stride: 2, padding: 0 }),
        &[&relu1],
    );
    let lrn1 = b.push("LRN 1", LayerKind::Lrn(cfg.lrn), &[&pool1]);

    let concat2 = featex(
        &mut b,
        "2",
        &lrn1,
        cfg.conv1_filters,
        cfg.conv2a_filters,
        cfg.conv2b_filters,
        cfg.conv2c_filters,
    );
    let pool2b = b.push(
        "Pooling 2b",
        LayerKind::MaxPool(PoolParams { window: 3, stride: 2, padding: 0 }),
        &[&concat2],
    );

    let block2_channels = cfg.conv2b_filters + cfg.conv2c_filters;
    let concat3 = featex(
        &mut b,
        "3",
        &pool2b,
        block2_channels,
        cfg.conv3a_filters,
        cfg.conv3b_filters,
        cfg.conv3c_filters,
    );
    let pool3b = b.push(
        "Pooling 3b",
        LayerKind::MaxPool(PoolParams { window: 3, stride: 2, padding: 0 }),
        &[&concat3],
    );

    // Size the classifier from the inferred feature map.
    let input_shape = Shape::new(vec![1, cfg.input_hw, cfg.input_hw])?;
    let partial =
        NetworkGraph::new(b.layers.clone(), input_shape.clone(), cfg.num_classes)?;
    let shapes = infer_shapes(&partial)?;
    let feat_shape = &shapes.last().expect("non-empty graph").1;
    let fc_in = feat_shape.num_elements();

    let fc = b.push(
        "Classifier",
        LayerKind::Fc { in_dim: fc_in, out_dim: cfg.num_classes },
        &[&pool3b],
    );
    b.push("Softmax", LayerKind::Softmax, &[&fc]);

    let mut g = NetworkGraph::new(b.layers, input_shape, cfg.num_classes)?;
    // Freeze the consistent shape table as per-layer declarations so that any
    // later edit to the graph is caught at the first inconsistent layer.
    let shapes = infer_shapes(&g)?;
    for (layer, (_, shape)) in g.layers.iter_mut().zip(shapes) {
        layer.declared = Some(shape);
    }
    Ok(g)
}

/// The full-size dual-FeatEx graph on 224x224 grayscale input.
pub fn build_dexpression(num_classes: usize) -> Result<NetworkGraph> {
    build_dexpression_with(&DexpressionConfig::standard(num_classes))
}
