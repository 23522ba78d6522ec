//! Message-passing structure encoder and its linear proposal head.

use serde::{Deserialize, Serialize};

use crate::data::NUM_AMINO_ACIDS;
use crate::error::{Error, Result};
use crate::geometry::{GraphConfig, StructureInput, NODE_FEATURES};
use crate::nn::{dropout, feed_forward, layer_norm, linear, Matrix, ParamStore, Tape, Var};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub dropout: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            d_model: 128,
            n_layers: 3,
            dropout: 0.0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 {
            return Err(Error::Config("encoder.d_model must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("encoder.dropout must be in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Per-residue structural states.
#[derive(Debug, Clone, PartialEq)]
pub struct StructureRepr {
    /// L × d_model.
    pub states: Matrix,
    /// True for real residues. Padded rows of `states` are zero.
    pub mask: Vec<bool>,
}

impl StructureRepr {
    pub fn len(&self) -> usize {
        self.states.rows
    }

    pub fn is_empty(&self) -> bool {
        self.states.rows == 0
    }
}

pub fn init_encoder(
    store: &mut ParamStore,
    seed: u64,
    config: &EncoderConfig,
    graph: &GraphConfig,
) {
    let d = config.d_model;
    store.init_linear(seed, "encoder.node_in", NODE_FEATURES, d, true);
    store.init_linear(seed, "encoder.edge_in", graph.edge_features(), d, true);
    for l in 0..config.n_layers {
        let p = format!("encoder.layers.{l}");
        // The first message layer acts on [h_i; h_j; e_ij]; it is stored as
        // three blocks so each block can be applied before gathering.
        let std3 = 1.0 / (3.0f64).sqrt();
        for part in ["msg.i", "msg.j", "msg.e"] {
            let name = format!("{p}.{part}");
            store.init_linear(seed, &name, d, d, part == "msg.i");
            store
                .get_mut(&format!("{name}.w"))
                .unwrap()
                .value
                .scale_in_place(std3);
        }
        store.init_linear(seed, &format!("{p}.msg.out"), d, d, true);
        store.init_layer_norm(&format!("{p}.ln1"), d);
        store.init_linear(seed, &format!("{p}.ffn.up"), d, 2 * d, true);
        store.init_linear(seed, &format!("{p}.ffn.down"), 2 * d, d, true);
        store.init_layer_norm(&format!("{p}.ln2"), d);
    }
    store.init_linear(seed, "encoder.proposal", d, NUM_AMINO_ACIDS, true);
}

fn check_shape(name: &str, m: &Matrix, expected: (usize, usize)) -> Result<()> {
    if m.shape() != expected {
        return Err(Error::Shape {
            name: name.into(),
            expected,
            actual: m.shape(),
        });
    }
    Ok(())
}

/// Records the encoder on `tape` and returns the L × d_model state node.
/// `rng` enables dropout.
pub fn encode_tape(
    tape: &mut Tape,
    store: &ParamStore,
    config: &EncoderConfig,
    input: &StructureInput,
    mut rng: Option<&mut Rng>,
) -> Result<Var> {
    let l = input.graph.len();
    let edges = input.graph.num_edges();
    check_shape("node features", &input.features.node, (l, NODE_FEATURES))?;
    let edge_in = store
        .get("encoder.edge_in.w")
        .ok_or_else(|| Error::MissingTensor("encoder.edge_in.w".into()))?;
    check_shape(
        "edge features",
        &input.features.edge,
        (edges, edge_in.value.rows),
    )?;

    let x = tape.input(input.features.node.clone());
    let mut h = linear(tape, store, "encoder.node_in", x);
    if config.n_layers == 0 {
        return Ok(h);
    }
    let e = tape.input(input.features.edge.clone());
    let e = linear(tape, store, "encoder.edge_in", e);
    let (src, dst): (Vec<usize>, Vec<usize>) = input.graph.edges().unzip();
    let offsets = input.graph.offsets();
    for layer in 0..config.n_layers {
        let p = format!("encoder.layers.{layer}");
        let a = linear(tape, store, &format!("{p}.msg.i"), h);
        let b = linear(tape, store, &format!("{p}.msg.j"), h);
        let c = linear(tape, store, &format!("{p}.msg.e"), e);
        let a = tape.gather_rows(a, src.clone());
        let b = tape.gather_rows(b, dst.clone());
        let pre = tape.add(a, b);
        let pre = tape.add(pre, c);
        let act = tape.gelu(pre);
        // The output layer of the message MLP is affine, so it commutes with
        // the neighbour mean.
        let mean = tape.segment_mean(act, offsets.clone());
        let m = linear(tape, store, &format!("{p}.msg.out"), mean);
        let m = dropout(tape, m, config.dropout, rng.as_deref_mut());
        let r = tape.add(h, m);
        h = layer_norm(tape, store, &format!("{p}.ln1"), r);
        let f = feed_forward(tape, store, &format!("{p}.ffn"), h);
        let f = dropout(tape, f, config.dropout, rng.as_deref_mut());
        let r = tape.add(h, f);
        h = layer_norm(tape, store, &format!("{p}.ln2"), r);
    }
    Ok(h)
}

/// L × 20 proposal logits from encoder states.
pub fn proposal_tape(tape: &mut Tape, store: &ParamStore, states: Var) -> Var {
    linear(tape, store, "encoder.proposal", states)
}

pub fn encode(
    input: &StructureInput,
    params: &ParamStore,
    config: &EncoderConfig,
) -> Result<StructureRepr> {
    let mut tape = Tape::new();
    let h = encode_tape(&mut tape, params, config, input, None)?;
    let states = tape.value(h).clone();
    Ok(StructureRepr {
        mask: vec![true; states.rows],
        states,
    })
}

pub fn proposal_logits(repr: &StructureRepr, params: &ParamStore) -> Matrix {
    let mut tape = Tape::new();
    let h = tape.input(repr.states.clone());
    let out = proposal_tape(&mut tape, params, h);
    tape.value(out).clone()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_synthetic_record, SyntheticSpec};
    use crate::geometry::{apply_rigid, random_rotation};
    use crate::rng::stream;
    use rand::Rng as _;

    fn small() -> (EncoderConfig, GraphConfig) {
        (
            EncoderConfig {
                d_model: 16,
                n_layers: 2,
                dropout: 0.0,
            },
            GraphConfig {
                k: 8,
                ..GraphConfig::default()
            },
        )
    }

    fn params(ec: &EncoderConfig, gc: &GraphConfig) -> ParamStore {
        let mut p = ParamStore::new();
        init_encoder(&mut p, 3, ec, gc);
        p
    }

    fn input(gc: &GraphConfig, index: u64) -> (crate::data::BackboneStructure, StructureInput) {
        let spec = SyntheticSpec {
            length_range: (12, 20),
            ..SyntheticSpec::default()
        };
        let s = gen_synthetic_record(&spec, index).structure;
        let i = StructureInput::build(&s, gc).unwrap();
        (s, i)
    }

    #[test]
    fn zero_layers_is_node_projection() {
        let (mut ec, gc) = small();
        ec.n_layers = 0;
        let p = params(&ec, &gc);
        let (_, inp) = input(&gc, 0);
        let repr = encode(&inp, &p, &ec).unwrap();
        let w = &p.get("encoder.node_in.w").unwrap().value;
        let b = &p.get("encoder.node_in.b").unwrap().value;
        for r in 0..inp.len() {
            for c in 0..ec.d_model {
                let mut want = b.data[c];
                for k in 0..NODE_FEATURES {
                    want += inp.features.node.get(r, k) * w.get(k, c);
                }
                assert!((repr.states.get(r, c) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rigid_motion_leaves_states_unchanged() {
        let (ec, gc) = small();
        let p = params(&ec, &gc);
        let mut rng = stream(11, &[]);
        for trial in 0..10 {
            let (s, inp) = input(&gc, trial);
            let base = encode(&inp, &p, &ec).unwrap();
            let rot = random_rotation(&mut rng);
            let t = [rng.random_range(-50.0..50.0), 3.0, -7.0];
            let moved = StructureInput::build(&apply_rigid(&s, &rot, t), &gc).unwrap();
            assert_eq!(moved.graph, inp.graph);
            let out = encode(&moved, &p, &ec).unwrap();
            assert!(out.states.max_abs_diff(&base.states) < 1e-5);
        }
    }

    #[test]
    fn permuting_residues_permutes_states() {
        let (ec, gc) = small();
        let p = params(&ec, &gc);
        let (_, inp) = input(&gc, 4);
        let l = inp.len();
        let mut rng = stream(5, &[]);
        let mut perm: Vec<usize> = (0..l).collect();
        for i in (1..l).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        // New residue a is old residue perm[a].
        let mut inv = vec![0; l];
        for (a, &old) in perm.iter().enumerate() {
            inv[old] = a;
        }
        let edges: Vec<(usize, usize)> = inp.graph.edges().collect();
        let offsets = inp.graph.offsets();
        let mut neighbors = Vec::with_capacity(l);
        let mut edge_rows = Vec::new();
        for &old in &perm {
            neighbors.push(inp.graph.neighbors[old].iter().map(|&j| inv[j]).collect());
            edge_rows.extend(offsets[old]..offsets[old + 1]);
        }
        assert_eq!(edge_rows.len(), edges.len());
        let permuted = StructureInput {
            graph: crate::geometry::ResidueGraph {
                neighbors,
                chain_breaks: perm.iter().map(|&o| inp.graph.chain_breaks[o]).collect(),
            },
            features: crate::geometry::FeatureSet {
                node: inp.features.node.gather_rows(&perm),
                edge: inp.features.edge.gather_rows(&edge_rows),
            },
        };
        let a = encode(&inp, &p, &ec).unwrap();
        let b = encode(&permuted, &p, &ec).unwrap();
        assert_eq!(b.states, a.states.gather_rows(&perm));
    }

    #[test]
    fn proposal_head_is_affine() {
        let (ec, gc) = small();
        let mut p = params(&ec, &gc);
        let d = ec.d_model;
        let bias: Vec<f64> = (0..20).map(|i| i as f64 * 0.5 - 3.0).collect();
        p.get_mut("encoder.proposal.w").unwrap().value = Matrix::zeros(d, 20);
        p.get_mut("encoder.proposal.b").unwrap().value = Matrix::from_vec(1, 20, bias.clone());
        let repr = StructureRepr {
            states: crate::nn::gaussian(0, "h", 5, d, 1.0),
            mask: vec![true; 5],
        };
        let out = proposal_logits(&repr, &p);
        for r in 0..5 {
            assert_eq!(out.row(r), &bias[..]);
        }
        // One-hot weight columns select hidden coordinates.
        let mut w = Matrix::zeros(d, 20);
        for c in 0..20 {
            w.set((c * 7) % d, c, 1.0);
        }
        p.get_mut("encoder.proposal.w").unwrap().value = w;
        p.get_mut("encoder.proposal.b").unwrap().value = Matrix::zeros(1, 20);
        let out = proposal_logits(&repr, &p);
        for r in 0..5 {
            for c in 0..20 {
                assert_eq!(out.get(r, c), repr.states.get(r, (c * 7) % d));
            }
        }
    }

    #[test]
    fn proposal_matches_reference_product() {
        let (ec, gc) = small();
        let mut p = params(&ec, &gc);
        p.get_mut("encoder.proposal.b").unwrap().value = crate::nn::gaussian(0, "pb", 1, 20, 1.0);
        let repr = StructureRepr {
            states: crate::nn::gaussian(0, "h", 7, ec.d_model, 1.0),
            mask: vec![true; 7],
        };
        let out = proposal_logits(&repr, &p);
        let w = &p.get("encoder.proposal.w").unwrap().value;
        let b = &p.get("encoder.proposal.b").unwrap().value;
        for r in 0..7 {
            for c in 0..20 {
                let mut want = b.data[c];
                for k in 0..ec.d_model {
                    want += repr.states.get(r, k) * w.get(k, c);
                }
                assert!((out.get(r, c) - want).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn mismatched_features_are_rejected_by_name() {
        let (ec, gc) = small();
        let p = params(&ec, &gc);
        let (_, mut inp) = input(&gc, 1);
        inp.features.edge = Matrix::zeros(inp.graph.num_edges(), 3);
        let err = encode(&inp, &p, &ec).unwrap_err();
        assert!(err.to_string().contains("edge features"), "{err}");
    }
}
