mod common;

use std::sync::Arc;

use common::{random_params, random_tensor};
use mbp_core::model::{check_frame_size, Direction, HiddenState};
use mbp_core::{count_parameters, Error, Frame, FrameSequence, Model, ModelConfig, ParameterStore, Variant};
use mbp_tensor::{Backend, Eager, ParamId, Tensor};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn frames(seed: u64, n: usize, h: usize, w: usize) -> Vec<Tensor<f32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| random_tensor(&mut rng, &[3, h, w])).collect()
}

fn flat(state: &HiddenState<Arc<Tensor<f32>>>) -> Vec<f32> {
    state.members().iter().flat_map(|m| m.data().to_vec()).collect()
}

// Closed-form parameter counts, written out layer by layer.
fn conv(ci: usize, co: usize, k: usize) -> usize {
    ci * co * k * k + co
}

fn oracle_count(c: usize, r: usize, v: Variant) -> usize {
    let c33 = conv(c, c, 3);
    let cab = 2 * c33 + conv(c, c / r, 1) + conv(c / r, c, 1);
    let extractor = conv(3, c, 3) + cab;
    // three gather levels (2 CABs + 2 convs), two downs, dec3 + 2x(up conv + 2 stacks)
    let unet = 3 * (2 * cab + 2 * c33) + 2 * c33 + 2 * cab + 2 * (c33 + 4 * cab);
    let single = c33 + 2 * cab;
    // psi stacks, fuse convs and 0 + 2 + 4 upsampling convs
    let tfr = 3 * 8 * cab + 6 * c33 + 6 * c33 + conv(c, 3, 5);
    let head = conv(3 * c, c, 3) + c33 + conv(c, 3, 5);
    match v {
        Variant::Baseline => extractor + 2 * single + head,
        Variant::BaselineMbp => extractor + 2 * unet + head,
        Variant::RnnMbp => extractor + 2 * unet + tfr,
    }
}

#[test]
fn tiny_counts_match_enumeration() {
    // hand-enumerated values for C=2, r=2
    assert_eq!(oracle_count(2, 2, Variant::Baseline), 848);
    assert_eq!(oracle_count(2, 2, Variant::BaselineMbp), 3856);
    assert_eq!(oracle_count(2, 2, Variant::RnnMbp), 6156);
    for (c, r) in [(2, 2), (4, 2), (4, 4), (8, 2), (16, 16)] {
        for v in Variant::ALL {
            let cfg = ModelConfig::tiny(c, r, v);
            let n = count_parameters(&cfg).unwrap();
            assert_eq!(n, oracle_count(c, r, v), "C={c} r={r} {v}");
            assert_eq!(Model::new(cfg).unwrap().init_params(0).total(), n);
        }
    }
}

#[test]
fn count_ordering_at_full_width() {
    let n = |v| count_parameters(&ModelConfig { variant: v, ..ModelConfig::default() }).unwrap();
    assert!(n(Variant::Baseline) < n(Variant::BaselineMbp));
    assert!(n(Variant::BaselineMbp) < n(Variant::RnnMbp));
}

#[test]
fn shapes_preserved_for_every_variant() {
    for v in Variant::ALL {
        let model = Model::new(ModelConfig::tiny(4, 2, v)).unwrap();
        let store = random_params(&model, 1, 0.3);
        let seq = FrameSequence::new(
            frames(2, 3, 8, 12)
                .into_iter()
                .map(|t| Frame::new(t).unwrap())
                .collect(),
        )
        .unwrap();
        let out = model.run(&store, &seq).unwrap();
        assert_eq!(out.len(), 3);
        assert_eq!((out.height(), out.width()), (8, 12), "{v}");
    }
}

#[test]
fn hidden_states_have_scale_structure() {
    let model = Model::new(ModelConfig::tiny(8, 2, Variant::RnnMbp)).unwrap();
    let store = random_params(&model, 3, 0.3);
    let b = Eager::new(store.tensors());
    let inputs: Vec<_> = frames(1, 3, 16, 16).into_iter().map(|f| b.constant(f)).collect();
    let trace = model.forward_trace(&b, &inputs).unwrap();
    for s in trace.forward_states.iter().chain(&trace.backward_states) {
        let set = s.as_multi_scale().unwrap();
        let owned = mbp_core::model::HiddenStateSet {
            e1: (*set.e1).clone(),
            e2: (*set.e2).clone(),
            e3: (*set.e3).clone(),
            d3: (*set.d3).clone(),
            d2: (*set.d2).clone(),
            d1: (*set.d1).clone(),
        };
        assert!(owned.has_scale_structure(8, 16, 16));
    }
}

#[test]
fn residual_identity_when_output_conv_is_zero() {
    for v in Variant::ALL {
        let model = Model::new(ModelConfig::tiny(4, 2, v)).unwrap();
        // fresh init already zeroes the output conv
        let store = model.init_params(7);
        let b = Eager::new(store.tensors());
        let input = frames(5, 4, 8, 8);
        let vars: Vec<_> = input.iter().map(|f| b.constant(f.clone())).collect();
        for (o, i) in model.forward(&b, &vars).unwrap().iter().zip(&input) {
            assert_eq!(o.data(), i.data(), "{v}");
        }
    }
}

#[test]
fn single_frame_sequence_uses_zero_states_both_ways() {
    let model = Model::new(ModelConfig::tiny(4, 2, Variant::RnnMbp)).unwrap();
    let store = random_params(&model, 4, 0.3);
    let b = Eager::new(store.tensors());
    let x = b.constant(frames(1, 1, 8, 8).remove(0));
    let trace = model.forward_trace(&b, std::slice::from_ref(&x)).unwrap();
    let phi = &trace.features[0];
    let zero = model.zero_state(&b, 8, 8);
    let f = model.cell_step(&b, Direction::Forward, phi, &zero).unwrap();
    let bk = model.cell_step(&b, Direction::Backward, phi, &zero).unwrap();
    assert_eq!(flat(&trace.forward_states[0]), flat(&f));
    assert_eq!(flat(&trace.backward_states[0]), flat(&bk));
    assert_ne!(flat(&f), flat(&bk));
    assert_eq!(trace.outputs.len(), 1);
}

#[test]
fn temporal_causality() {
    let n = 6;
    for v in Variant::ALL {
        let model = Model::new(ModelConfig::tiny(4, 2, v)).unwrap();
        let store = random_params(&model, 12, 0.3);
        let b = Eager::new(store.tensors());
        let base = frames(3, n, 8, 8);
        let run = |input: &[Tensor<f32>]| {
            let vars: Vec<_> = input.iter().map(|f| b.constant(f.clone())).collect();
            model.forward_trace(&b, &vars).unwrap()
        };
        let reference = run(&base);
        for k in 0..n {
            let mut perturbed = base.clone();
            perturbed[k].data_mut()[17] += 0.25;
            let t = run(&perturbed);
            for i in 0..n {
                let fwd_same = flat(&t.forward_states[i]) == flat(&reference.forward_states[i]);
                let bwd_same = flat(&t.backward_states[i]) == flat(&reference.backward_states[i]);
                assert_eq!(fwd_same, i < k, "{v} forward state {i}, perturbed frame {k}");
                assert_eq!(bwd_same, i > k, "{v} backward state {i}, perturbed frame {k}");
            }
        }
    }
}

#[test]
fn backward_pass_is_forward_pass_on_reversed_sequence() {
    let model = Model::new(ModelConfig::tiny(4, 2, Variant::RnnMbp)).unwrap();
    let store = random_params(&model, 6, 0.3);
    // forward-cell slots loaded with the backward-cell weights
    let mut swapped = store.clone();
    for (i, name) in store.names().iter().enumerate() {
        if let Some(rest) = name.strip_prefix("forward_cell.") {
            let t = store.get(&format!("backward_cell.{rest}")).unwrap().clone();
            *swapped.by_id_mut(ParamId(i)) = t;
        }
    }
    let input = frames(8, 5, 8, 8);
    let b = Eager::new(store.tensors());
    let feats: Vec<_> = input.iter().map(|f| model.extract_features(&b, &b.constant(f.clone()))).collect();
    let bwd = model.propagate_backward(&b, &feats).unwrap();

    let bs = Eager::new(swapped.tensors());
    let mut rev: Vec<_> = feats.iter().map(|f| bs.constant((**f).clone())).collect();
    rev.reverse();
    let mut fwd_rev = model.propagate_forward(&bs, &rev).unwrap();
    fwd_rev.reverse();
    for (x, y) in bwd.iter().zip(&fwd_rev) {
        assert_eq!(flat(x), flat(y));
    }
}

#[test]
fn evaluation_is_deterministic() {
    let model = Model::new(ModelConfig::tiny(4, 2, Variant::RnnMbp)).unwrap();
    let store = random_params(&model, 2, 0.3);
    let seq = FrameSequence::new(frames(1, 3, 8, 8).into_iter().map(|t| Frame::new(t).unwrap()).collect()).unwrap();
    let a = model.run(&store, &seq).unwrap();
    let b = model.run(&store, &seq).unwrap();
    assert_eq!(a, b);
}

#[test]
fn direction_parameters_are_disjoint() {
    let model = Model::new(ModelConfig::tiny(4, 2, Variant::RnnMbp)).unwrap();
    let store = random_params(&model, 2, 0.3);
    let input = frames(4, 3, 8, 8);
    let states = |s: &ParameterStore<f32>| {
        let b = Eager::new(s.tensors());
        let vars: Vec<_> = input.iter().map(|f| b.constant(f.clone())).collect();
        let t = model.forward_trace(&b, &vars).unwrap();
        (
            t.forward_states.iter().flat_map(flat).collect::<Vec<_>>(),
            t.backward_states.iter().flat_map(flat).collect::<Vec<_>>(),
        )
    };
    let (f0, b0) = states(&store);
    for (mutated, keep_fwd) in [("forward_cell.", false), ("backward_cell.", true)] {
        let mut s = store.clone();
        for (i, name) in store.names().iter().enumerate() {
            if name.starts_with(mutated) {
                for v in s.by_id_mut(ParamId(i)).data_mut() {
                    *v *= 1.5;
                }
            }
        }
        let (f1, b1) = states(&s);
        assert_eq!(f1 == f0, keep_fwd);
        assert_eq!(b1 == b0, !keep_fwd);
    }
}

#[test]
fn shape_errors_are_reported() {
    let model = Model::new(ModelConfig::tiny(4, 2, Variant::RnnMbp)).unwrap();
    let store = model.init_params(0);
    let b = Eager::new(store.tensors());
    let phi = b.constant(Tensor::zeros(&[4, 8, 8]));
    let wrong = model.zero_state(&b, 16, 16);
    let err = model.cell_step(&b, Direction::Forward, &phi, &wrong).unwrap_err();
    assert!(matches!(err, Error::Contract(_)), "{err}");
    let single = HiddenState::Single(b.constant(Tensor::zeros(&[4, 8, 8])));
    assert!(matches!(
        model.cell_step(&b, Direction::Forward, &phi, &single),
        Err(Error::Contract(_))
    ));
    assert!(matches!(model.propagate_forward(&b, &[]), Err(Error::Contract(_))));

    let odd = b.constant(Tensor::zeros(&[3, 10, 8]));
    let err = model.forward(&b, &[odd]).unwrap_err();
    assert!(matches!(err, Error::Input(_)));
    assert!(err.to_string().contains("12x8"), "{err}");
    assert!(check_frame_size(4, 4).is_ok());
}

#[test]
fn unknown_variant_is_a_config_error() {
    assert!(matches!("basline".parse::<Variant>(), Err(Error::Config(_))));
    for v in Variant::ALL {
        assert_eq!(v.as_str().parse::<Variant>().unwrap(), v);
    }
}

#[test]
fn store_file_round_trip() {
    let model = Model::new(ModelConfig::tiny(4, 2, Variant::BaselineMbp)).unwrap();
    let store = random_params(&model, 9, 1.0);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.mbp");
    store.save(&path, model.config()).unwrap();
    let (cfg, loaded) = ParameterStore::load(&path).unwrap();
    assert_eq!(&cfg, model.config());
    assert_eq!(loaded, store);
    loaded.check_layout(model.layout()).unwrap();
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn container_round_trip_is_bit_exact(
        values in prop::collection::vec(any::<u32>(), 1..64),
        split in 0usize..64,
    ) {
        // arbitrary bit patterns, NaN payloads and signed zeros included
        let floats: Vec<f32> = values.iter().map(|&b| f32::from_bits(b)).collect();
        let split = split.min(floats.len());
        let named = vec![
            ("a.weight".to_string(), Tensor::from_vec(&[split], floats[..split].to_vec()).unwrap()),
            ("b.bias".to_string(), Tensor::from_vec(&[floats.len() - split], floats[split..].to_vec()).unwrap()),
        ];
        let store = ParameterStore::from_named(named).unwrap();
        let c = store.to_container(&ModelConfig::default());
        let back = mbp_core::container::Container::from_bytes(&c.to_bytes().unwrap(), std::path::Path::new("mem")).unwrap();
        let bits = |s: &[(String, Tensor<f32>)]| -> Vec<(String, Vec<u32>)> {
            s.iter().map(|(n, t)| (n.clone(), t.data().iter().map(|v| v.to_bits()).collect())).collect()
        };
        prop_assert_eq!(bits(&back.tensors), bits(&c.tensors));
    }
}
