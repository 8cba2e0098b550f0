use super::TransformError;
use crate::model_ir::{BlobData, DType, Graph, Node, Op, TensorBlob};

/// Removes `binarize_w` markers, moving their weight blob onto the conv they
/// feed and tagging that conv as binarized. Weights are not modified.
pub fn prune_weight_quant_subgraph(g: &Graph) -> Result<Graph, TransformError> {
    let consumers = g.consumer_map();
    let mut markers = Vec::new();
    for node in g.nodes() {
        if !matches!(node.op, Op::BinarizeW {}) {
            continue;
        }
        let feeds = consumers.get(node.id.as_str()).map(Vec::as_slice).unwrap_or(&[]);
        let on_weight_edge = node.inputs.is_empty()
            && node.weights.is_some()
            && !feeds.is_empty()
            && feeds.iter().all(|c| {
                g.node(c)
                    .is_some_and(|c| c.is_conv() && c.inputs.get(1) == Some(&node.id))
            });
        if !on_weight_edge {
            return Err(TransformError::MarkerOnNonWeightEdge(node.id.clone()));
        }
        markers.push(node.id.as_str());
    }
    if markers.is_empty() {
        return Ok(g.clone());
    }

    let mut nodes = Vec::with_capacity(g.len());
    for node in g.nodes() {
        if markers.contains(&node.id.as_str()) {
            continue;
        }
        let mut node: Node = node.clone();
        if let Some(marker) = node.inputs.get(1).filter(|id| markers.contains(&id.as_str())).cloned() {
            let marker = g.node(&marker).expect("marker exists");
            node.inputs.truncate(1);
            node.weights = marker.weights;
            if let Op::Conv2d { binarized, .. } = &mut node.op {
                *binarized = true;
            }
        }
        nodes.push(node);
    }
    Ok(Graph::new(nodes, g.blobs().to_vec())?)
}

/// Sign binarization: `w >= 0 -> +1`, `w < 0 -> -1`.
pub fn binarize_weights(w: &TensorBlob) -> Result<TensorBlob, TransformError> {
    let BlobData::F32(values) = &w.data else {
        return Err(TransformError::WrongDtype(w.desc.dtype));
    };
    let mut bits = Vec::with_capacity(values.len());
    for (index, &v) in values.iter().enumerate() {
        if !v.is_finite() {
            return Err(TransformError::NonFiniteWeight { index });
        }
        bits.push(if v >= 0.0 { 1 } else { -1 });
    }
    Ok(TensorBlob::new(
        w.desc.with_dtype(DType::Bin1),
        w.count,
        BlobData::Bin1(bits),
    )?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model_ir::{Layout, TensorDesc};

    fn weights(v: Vec<f32>) -> TensorBlob {
        let desc = TensorDesc::new(1, 1, v.len(), DType::F32, Layout::HeightInnermost);
        TensorBlob::single(desc, BlobData::F32(v)).unwrap()
    }

    fn conv_graph(marker_on_weights: bool) -> Graph {
        let conv = Op::Conv2d {
            kernel: [1, 1],
            filters: 1,
            stride: 1,
            pad: 0,
            binarized: false,
        };
        let mut nodes = vec![
            Node::new(
                "in",
                Op::Input {
                    height: 2,
                    width: 2,
                    depth: 3,
                },
                &[],
            ),
            Node::new("q", Op::QuantizeAct { delta: 1.0 }, &["in"]),
        ];
        if marker_on_weights {
            nodes.push(Node::new("bw", Op::BinarizeW {}, &[]).with_weights(0));
            nodes.push(Node::new("conv", conv, &["q", "bw"]));
        } else {
            nodes.push(Node::new("conv", conv, &["q"]).with_weights(0));
        }
        nodes.push(Node::new("out", Op::Output {}, &["conv"]));
        Graph::new(nodes, vec![weights(vec![0.5, -1.0, 0.0])]).unwrap()
    }

    #[test]
    fn marker_is_removed_and_conv_tagged() {
        let pruned = prune_weight_quant_subgraph(&conv_graph(true)).unwrap();
        assert!(pruned.node("bw").is_none());
        let conv = pruned.node("conv").unwrap();
        assert_eq!(conv.inputs, vec!["q".to_string()]);
        assert_eq!(conv.weights, Some(0));
        assert!(matches!(conv.op, Op::Conv2d { binarized: true, .. }));
        assert_eq!(pruned.blobs(), conv_graph(true).blobs());
    }

    #[test]
    fn no_markers_is_identity() {
        let g = conv_graph(false);
        assert_eq!(prune_weight_quant_subgraph(&g).unwrap(), g);
    }

    #[test]
    fn marker_on_activation_edge() {
        let nodes = vec![
            Node::new(
                "in",
                Op::Input {
                    height: 2,
                    width: 2,
                    depth: 1,
                },
                &[],
            ),
            Node::new("bw", Op::BinarizeW {}, &["in"]),
            Node::new("out", Op::Output {}, &["bw"]),
        ];
        let g = Graph::new(nodes, vec![]).unwrap();
        assert_eq!(
            prune_weight_quant_subgraph(&g),
            Err(TransformError::MarkerOnNonWeightEdge("bw".into()))
        );
    }

    #[test]
    fn sign_rule_with_tie() {
        let b = binarize_weights(&weights(vec![-0.5, 0.0, 1.2])).unwrap();
        assert_eq!(b.data, BlobData::Bin1(vec![-1, 1, 1]));
        assert_eq!(b.desc.dtype, DType::Bin1);
        let b = binarize_weights(&weights(vec![-0.0])).unwrap();
        assert_eq!(b.data, BlobData::Bin1(vec![1]));
        assert_eq!(
            binarize_weights(&weights(vec![1.0, f32::NAN])),
            Err(TransformError::NonFiniteWeight { index: 1 })
        );
    }
}
