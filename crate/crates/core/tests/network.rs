//! Forward pass against a naive reference interpreter, translation
//! consistency, checkpoint round trips and determinism.

use dpn_core::conv::ConvParams;
use dpn_core::model::{CellSpec, Checkpoint, LayerRole, Network, NetworkSpec, VariantKind};
use dpn_core::{Dims, Tensor4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `[c][y][x]` planes of one sample.
type Planes = Vec<Vec<Vec<f64>>>;

fn conv_ref(x: &Planes, p: &ConvParams<f64>) -> Planes {
    let (cin, h, w) = (x.len(), x[0].len(), x[0][0].len());
    let cout = p.bias.len();
    let mut out = vec![vec![vec![0.0; w]; h]; cout];
    for (o, plane) in out.iter_mut().enumerate() {
        for y in 0..h {
            for xx in 0..w {
                let mut acc = p.bias[o];
                for (i, src) in x.iter().enumerate().take(cin) {
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let (sy, sx) = (y as isize + ky as isize - 1, xx as isize + kx as isize - 1);
                            if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                continue;
                            }
                            acc += p.weights.get(o, i, ky, kx) * src[sy as usize][sx as usize];
                        }
                    }
                }
                plane[y][xx] = acc;
            }
        }
    }
    out
}

fn relu(x: &Planes) -> Planes {
    x.iter().map(|p| p.iter().map(|r| r.iter().map(|v| v.max(0.0)).collect()).collect()).collect()
}

fn sum(a: &Planes, b: &Planes) -> Planes {
    a.iter()
        .zip(b)
        .map(|(p, q)| p.iter().zip(q).map(|(r, s)| r.iter().zip(s).map(|(u, v)| u + v).collect()).collect())
        .collect()
}

/// Walks the parameter list by layer role only.
fn forward_ref(spec: &NetworkSpec, params: &[ConvParams<f64>], input: &Planes) -> Planes {
    let layers = spec.layers();
    let units = spec.units();
    let mut x = input.clone();
    let mut i = 0;
    while i < layers.len() {
        match layers[i].role {
            LayerRole::Extraction => {
                x = relu(&conv_ref(&x, &params[i]));
                i += 1;
            }
            LayerRole::Branch { unit, .. } => {
                let (f1, f2) = (&params[i], &params[i + 1]);
                let branch = match units[unit].activation {
                    dpn_core::model::ActivationOrder::AfterAct => relu(&conv_ref(&relu(&conv_ref(&x, f1)), f2)),
                    dpn_core::model::ActivationOrder::PreAct => conv_ref(&relu(&conv_ref(&relu(&x), f1)), f2),
                };
                i += 2;
                let skip = if i < layers.len() && layers[i].role == (LayerRole::Skip { unit }) {
                    i += 1;
                    conv_ref(&x, &params[i - 1])
                } else {
                    x.clone()
                };
                x = sum(&skip, &branch);
            }
            LayerRole::Reconstruction => {
                x = conv_ref(&x, &params[i]);
                i += 1;
            }
            LayerRole::Skip { .. } => unreachable!("skip follows its branch"),
        }
    }
    if spec.global_residual {
        x = sum(&x, input);
    }
    x
}

fn random_image(h: usize, w: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..h * w).map(|_| rng.random_range(0.0..1.0)).collect()
}

fn planes(h: usize, w: usize, data: &[f64]) -> Planes {
    assert_eq!(data.len(), h * w);
    vec![data.chunks(w).map(|r| r.to_vec()).collect()]
}

fn small_spec() -> NetworkSpec {
    NetworkSpec {
        extraction: vec![3],
        cells: vec![CellSpec::new(3, 1), CellSpec::new(4, 2)],
        reconstruction: vec![3, 1],
        ..NetworkSpec::toy()
    }
}

#[test]
fn forward_matches_reference_interpreter() {
    let (h, w) = (9, 7);
    let data = random_image(h, w, 3);
    for (k, kind) in VariantKind::ALL.into_iter().enumerate() {
        let spec = kind.apply(&small_spec());
        let mut net = Network::<f64>::build(spec.clone(), 40 + k as u64).unwrap();
        // Nonzero biases so every bias path is exercised.
        let mut rng = ChaCha8Rng::seed_from_u64(k as u64);
        for p in net.params_mut() {
            for b in p.bias.iter_mut() {
                *b = rng.random_range(-0.2..0.2);
            }
        }
        let out = net.forward(&Tensor4::from_vec(Dims::new(1, 1, h, w), data.clone()).unwrap()).unwrap();
        let want = forward_ref(&spec, net.params(), &planes(h, w, &data));
        for y in 0..h {
            for x in 0..w {
                let (a, b) = (out.get(0, 0, y, x), want[0][y][x]);
                assert!((a - b).abs() < 1e-12, "{}: ({y},{x}) {a} vs {b}", kind.name());
            }
        }
    }
}

#[test]
fn toy_forward_matches_reference_interpreter() {
    let spec = NetworkSpec::toy();
    let net = Network::<f64>::build(spec.clone(), 9).unwrap();
    let (h, w) = (12, 10);
    let data = random_image(h, w, 8);
    let out = net.forward(&Tensor4::from_vec(Dims::new(1, 1, h, w), data.clone()).unwrap()).unwrap();
    let want = forward_ref(&spec, net.params(), &planes(h, w, &data));
    for y in 0..h {
        for x in 0..w {
            assert!((out.get(0, 0, y, x) - want[0][y][x]).abs() < 1e-12);
        }
    }
}

#[test]
fn translation_consistency_away_from_borders() {
    let spec = small_spec();
    let r = spec.receptive_radius();
    let net = Network::<f64>::build(spec, 5).unwrap();
    let (h, w) = (40, 44);
    let data = random_image(h, w, 1);
    let full = net.forward(&Tensor4::from_vec(Dims::new(1, 1, h, w), data.clone()).unwrap()).unwrap();
    let (top, left, ch, cw) = (5, 7, 30, 32);
    let crop: Vec<f64> = (0..ch).flat_map(|y| data[(top + y) * w + left..(top + y) * w + left + cw].to_vec()).collect();
    let part = net.forward(&Tensor4::from_vec(Dims::new(1, 1, ch, cw), crop).unwrap()).unwrap();
    let mut checked = 0;
    for y in r..ch - r {
        for x in r..cw - r {
            let (a, b) = (part.get(0, 0, y, x), full.get(0, 0, top + y, left + x));
            assert!((a - b).abs() < 1e-12, "({y},{x}) {a} vs {b}");
            checked += 1;
        }
    }
    assert!(checked > 0);
}

#[test]
fn checkpoint_round_trip_preserves_forward_bitwise() {
    let net = Network::<f32>::build(NetworkSpec::toy(), 11).unwrap();
    let ck = Checkpoint::new(net).with_meta("note", "x");
    let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
    let input = Tensor4::from_vec(Dims::new(2, 1, 20, 17), random_image(20, 34, 2).iter().map(|&v| v as f32).collect()).unwrap();
    let a = ck.network.forward(&input).unwrap();
    let b = back.network.forward(&input).unwrap();
    let bits = |t: &Tensor4<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));
    assert_eq!(back.meta("note"), Some("x"));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    ck.save(&path).unwrap();
    assert_eq!(Checkpoint::load(&path).unwrap().to_bytes(), ck.to_bytes());
}

#[test]
fn build_and_forward_are_deterministic() {
    let a = Network::<f32>::build(NetworkSpec::toy(), 3).unwrap();
    let b = Network::<f32>::build(NetworkSpec::toy(), 3).unwrap();
    assert_eq!(Checkpoint::new(a.clone()).to_bytes(), Checkpoint::new(b).to_bytes());
    let c = Network::<f32>::build(NetworkSpec::toy(), 4).unwrap();
    assert_ne!(a.params(), c.params());
    let input = Tensor4::from_vec(Dims::new(1, 1, 16, 16), random_image(16, 16, 6).iter().map(|&v| v as f32).collect()).unwrap();
    assert_eq!(a.forward(&input).unwrap(), a.forward(&input).unwrap());
}

#[test]
fn parameter_totals() {
    let count = NetworkSpec::dpn().parameter_count();
    assert_eq!(count.main_path, 570_769);
    assert_eq!(count.skip, 267_936);
    assert_eq!(count.total(), 838_705);
    assert_eq!(NetworkSpec::vdsr().parameter_count().total(), 665_921);
    assert_eq!(NetworkSpec::dpn().main_path_depth(), 40);
    assert_eq!(NetworkSpec::toy().receptive_radius(), 22);
}
