use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::{Tape, Tensor};
use crate::grid::{uniform_vertices, Hypercube};

fn scrambled(kind: LayerKind, m: usize, q: usize, p: usize, first: bool, adapt: bool, seed: u64) -> (Layer, ParamStore) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let opts = LayerOptions { adapt, random_grid: false };
    let layer = Layer::new(kind, &mut store, "l", m, q, p, first, opts, &mut rng).unwrap();
    // spread parameters over a wider range, keeping increments away from the kink
    for id in store.ids().collect::<Vec<_>>() {
        let name = store.get(id).name.clone();
        let n = store.get(id).value.numel();
        let vals: Vec<f64> = (0..n)
            .map(|_| {
                if name.ends_with(".d") {
                    let mag = rng.random_range(0.01..0.5);
                    if rng.random_bool(0.8) { mag } else { -mag }
                } else if name.ends_with(".bhat") {
                    let mag = rng.random_range(0.02..1.0);
                    if rng.random_bool(0.7) { mag } else { -mag }
                } else {
                    rng.random_range(-1.0..1.0)
                }
            })
            .collect();
        store.set_value(id, &vals);
    }
    (layer, store)
}

fn sample_points(rng: &mut ChaCha8Rng, dom: &Hypercube, n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n * dom.dim());
    for _ in 0..n {
        for i in 0..dom.dim() {
            out.push(rng.random_range(dom.lower[i]..=dom.upper[i]));
        }
    }
    out
}

#[test]
fn shape_functions() {
    let v = uniform_vertices(0.0, 1.0, 5);
    let psi = shape_values(0.4, &v);
    assert!((psi[2] - 1.0).abs() < 1e-12);
    let psi = shape_values(0.3, &v);
    assert!((psi[1] - 0.5).abs() < 1e-12 && (psi[2] - 0.5).abs() < 1e-12);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..100 {
        let x = rng.random_range(0.0..=1.0);
        let psi = shape_values(x, &v);
        assert!((psi.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(psi.iter().all(|&s| (-1e-12..=1.0 + 1e-12).contains(&s)));
        assert_eq!(psi.iter().filter(|&&s| s != 0.0).count() <= 2, true);
    }
}

#[test]
fn p1_nodal_recursion() {
    let v = [0.0, 0.5, 1.0];
    assert_eq!(p1_nodal_values(1.0, 2.0, &[0.0], &v, true), vec![1.0, 2.0, 3.0]);
    assert_eq!(p1_nodal_values(1.0, 2.0, &[1.0], &v, true), vec![1.0, 2.0, 3.5]);
    assert_eq!(p1_nodal_values(1.0, 2.0, &[-5.0], &v, true), vec![1.0, 2.0, 3.0]);
}

#[test]
fn tape_nodal_values_match_direct_recursion() {
    for kind in [LayerKind::P1, LayerKind::Cubic] {
        for first in [true, false] {
            let (layer, store) = scrambled(kind, 3, 2, 6, first, true, 7);
            let dom = Hypercube::new(vec![-1.0, 0.0, 2.0], vec![1.0, 0.5, 5.0]).unwrap();
            let table = layer.nodal_table(&store, &dom);
            let (m, q, p) = (3, 2, 6);
            let b = store.value(layer.ids.b.unwrap());
            let bh = store.value(layer.ids.bhat.unwrap());
            let d = store.value(layer.ids.d.unwrap());
            let nd = if kind == LayerKind::P1 { p - 1 } else { p };
            for j in 0..m {
                let v = table.vertices(j, p);
                assert_eq!(v[0], dom.lower[j]);
                assert_eq!(v[p], dom.upper[j]);
                for k in 0..q {
                    let dj: Vec<f64> = (0..nd).map(|i| d[(j * nd + i) * q + k]).collect();
                    let got = NodalTable::column(&table.a0, j, k, p, q);
                    let want = match kind {
                        LayerKind::P1 => p1_nodal_values(b[j * q + k], bh[j * q + k], &dj, v, first),
                        _ => {
                            let g = store.value(layer.ids.g.unwrap());
                            let gj: Vec<f64> = (0..p).map(|i| g[(j * p + i) * q + k]).collect();
                            let (a0, a1) = cubic_nodal_values(b[j * q + k], bh[j * q + k], &dj, &gj, v, first);
                            let got1 = NodalTable::column(table.a1.as_ref().unwrap(), j, k, p, q);
                            for (x, y) in got1.iter().zip(&a1) {
                                assert!((x - y).abs() < 1e-12);
                            }
                            a0
                        }
                    };
                    for (x, y) in got.iter().zip(&want) {
                        assert!((x - y).abs() < 1e-12, "{kind:?} {x} vs {y}");
                    }
                }
            }
        }
    }
}

#[test]
fn identity_like_neuron() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut store = ParamStore::new();
    let layer = Layer::new(LayerKind::P1, &mut store, "l", 1, 1, 2, true, LayerOptions::default(), &mut rng).unwrap();
    store.set_value(layer.ids.b.unwrap(), &[0.0]);
    store.set_value(layer.ids.bhat.unwrap(), &[1.0]);
    store.set_value(layer.ids.d.unwrap(), &[0.0]);
    let dom = Hypercube::cube(1, 0.0, 1.0).unwrap();
    let xs = [0.0, 0.2, 0.5, 0.9, 1.0];
    let (y, image) = layer.evaluate(&store, &xs, &dom).unwrap();
    for (a, b) in y.iter().zip(&xs) {
        assert!((a - b).abs() < 1e-15);
    }
    assert_eq!(image, dom);
}

#[test]
fn affine_layer_is_affine() {
    let (layer, mut store) = scrambled(LayerKind::P1, 2, 3, 5, true, false, 3);
    let d = layer.ids.d.unwrap();
    let n = store.get(d).value.numel();
    store.set_value(d, &vec![0.0; n]);
    let dom = Hypercube::cube(2, -1.0, 1.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..50 {
        let x = sample_points(&mut rng, &dom, 2);
        let lam: f64 = rng.random();
        let mix: Vec<f64> = (0..2).map(|i| lam * x[i] + (1.0 - lam) * x[2 + i]).collect();
        let (yx, _) = layer.evaluate(&store, &x, &dom).unwrap();
        let (ym, _) = layer.evaluate(&store, &mix, &dom).unwrap();
        for k in 0..3 {
            let lin = lam * yx[k] + (1.0 - lam) * yx[3 + k];
            assert!((ym[k] - lin).abs() < 1e-12);
        }
    }
}

#[test]
fn kan_layer_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut store = ParamStore::new();
    let (m, q, p) = (2, 2, 4);
    let layer = Layer::new(LayerKind::Kan, &mut store, "r", m, q, p, false, LayerOptions::default(), &mut rng).unwrap();
    let dom = Hypercube::new(vec![0.0, -1.0], vec![1.0, 3.0]).unwrap();
    let mut a = vec![0.0; m * (p + 1) * q];
    for j in 0..m {
        let v = uniform_vertices(dom.lower[j], dom.upper[j], p);
        for i in 0..=p {
            for k in 0..q {
                a[(j * (p + 1) + i) * q + k] = v[i];
            }
        }
    }
    store.set_value(layer.ids.a.unwrap(), &a);
    let x = sample_points(&mut rng, &dom, 20);
    let (y, _) = layer.evaluate(&store, &x, &dom).unwrap();
    for b in 0..20 {
        for k in 0..q {
            assert!((y[b * q + k] - (x[2 * b] + x[2 * b + 1])).abs() < 1e-12);
        }
    }
    store.set_value(layer.ids.a.unwrap(), &vec![0.7; a.len()]);
    let (y, image) = layer.evaluate(&store, &x, &dom).unwrap();
    assert!(y.iter().all(|&v| (v - 1.4).abs() < 1e-12));
    assert_eq!(image.lower, vec![1.4, 1.4]);
    assert_eq!(image.upper, vec![1.4, 1.4]);
}

#[test]
fn image_box_contains_samples_and_is_tight() {
    for kind in [LayerKind::P1, LayerKind::Kan, LayerKind::Cubic] {
        for (seed, first) in [(1, true), (2, false)] {
            let (mut layer, store) = scrambled(kind, 2, 3, 5, first, true, seed);
            layer.clip = kind == LayerKind::Cubic;
            let dom = Hypercube::new(vec![-2.0, 0.0], vec![1.0, 1.5]).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 10);
            let x = sample_points(&mut rng, &dom, 10_000);
            let (y, image) = layer.evaluate(&store, &x, &dom).unwrap();
            for row in y.chunks(3) {
                for k in 0..3 {
                    assert!(row[k] >= image.lower[k] - 1e-12 && row[k] <= image.upper[k] + 1e-12);
                }
            }
            if kind == LayerKind::Cubic {
                continue;
            }
            // piecewise-linear extremes sit on vertex products
            let table = layer.nodal_table(&store, &dom);
            let v0 = table.vertices(0, 5).to_vec();
            let v1 = table.vertices(1, 5).to_vec();
            let mut grid = Vec::new();
            for a in &v0 {
                for b in &v1 {
                    grid.extend([*a, *b]);
                }
            }
            let (y, _) = layer.evaluate(&store, &grid, &dom).unwrap();
            for k in 0..3 {
                let lo = y.chunks(3).map(|r| r[k]).fold(f64::INFINITY, f64::min);
                let hi = y.chunks(3).map(|r| r[k]).fold(f64::NEG_INFINITY, f64::max);
                assert!((lo - image.lower[k]).abs() < 1e-9, "{kind:?} lower");
                assert!((hi - image.upper[k]).abs() < 1e-9, "{kind:?} upper");
            }
        }
    }
}

#[test]
fn piecewise_linear_inside_cells() {
    let (layer, store) = scrambled(LayerKind::P1, 2, 2, 4, true, true, 5);
    let dom = Hypercube::cube(2, 0.0, 1.0).unwrap();
    let table = layer.nodal_table(&store, &dom);
    let v0 = table.vertices(0, 4).to_vec();
    let v1 = table.vertices(1, 4).to_vec();
    for c0 in 0..4 {
        for c1 in 0..4 {
            let base = [0.5 * (v0[c0] + v0[c0 + 1]), 0.5 * (v1[c1] + v1[c1 + 1])];
            let h = [0.2 * (v0[c0 + 1] - v0[c0]), 0.2 * (v1[c1 + 1] - v1[c1])];
            for axis in 0..2 {
                let mut pts = Vec::new();
                for s in [-1.0, 0.0, 1.0] {
                    let mut x = base;
                    x[axis] += s * h[axis];
                    pts.extend(x);
                }
                let (y, _) = layer.evaluate(&store, &pts, &dom).unwrap();
                for k in 0..2 {
                    let second = y[k] - 2.0 * y[2 + k] + y[4 + k];
                    assert!(second.abs() < 1e-12);
                }
            }
        }
    }
}

fn check_param_gradients(kind: LayerKind, first: bool, clip: bool, seed: u64) {
    let (mut layer, mut store) = scrambled(kind, 2, 3, 4, first, true, seed);
    layer.clip = clip;
    let dom = Hypercube::new(vec![-1.0, 0.5], vec![1.0, 2.0]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = sample_points(&mut rng, &dom, 16);
    let w: Vec<f64> = (0..48).map(|_| rng.random_range(-1.0..1.0)).collect();
    let loss = |store: &ParamStore, grads: bool| -> (f64, Option<ParamStore>) {
        let mut tape = Tape::new();
        let bind = store.bind(&mut tape, true);
        let xv = tape.constant(Tensor::new(vec![16, 2], x.clone()).unwrap());
        let d = TapeBox::constant(&mut tape, &dom);
        let pass = layer.forward(&mut tape, &bind, xv, &d, false).unwrap();
        let wv = tape.constant(Tensor::new(vec![16, 3], w.clone()).unwrap());
        let prod = tape.mul(pass.y, wv);
        let s = tape.sum(prod);
        let val = tape.data(s)[0];
        if !grads {
            return (val, None);
        }
        let adj = tape.backward(s).unwrap();
        let mut out = store.clone();
        out.zero_grad();
        out.accumulate(&bind, &adj);
        (val, Some(out))
    };
    let (_, g) = loss(&store, true);
    let g = g.unwrap();
    let h = 1e-6;
    for id in store.ids().collect::<Vec<_>>() {
        let base = store.value(id).to_vec();
        for i in 0..base.len() {
            let mut v = base.clone();
            v[i] += h;
            store.set_value(id, &v);
            let (fp, _) = loss(&store, false);
            v[i] -= 2.0 * h;
            store.set_value(id, &v);
            let (fm, _) = loss(&store, false);
            store.set_value(id, &base);
            let fd = (fp - fm) / (2.0 * h);
            let ad = g.get(id).grad[i];
            assert!(
                (fd - ad).abs() <= 1e-4 * fd.abs().max(1.0),
                "{kind:?} {} [{i}]: ad {ad} fd {fd}",
                store.get(id).name
            );
        }
    }
}

#[test]
fn parameter_gradients_match_finite_differences() {
    check_param_gradients(LayerKind::P1, true, false, 11);
    check_param_gradients(LayerKind::P1, false, false, 12);
    check_param_gradients(LayerKind::Cubic, true, false, 13);
    check_param_gradients(LayerKind::Cubic, false, true, 14);
    check_param_gradients(LayerKind::Kan, false, false, 15);
}

#[test]
fn hermite_basis_examples() {
    assert_eq!(crate::autodiff::hermite_basis(0.0), [1.0, 0.0, 0.0, 0.0]);
    assert_eq!(crate::autodiff::hermite_basis(1.0), [0.0, 0.0, 1.0, 0.0]);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..100 {
        let t: f64 = rng.random();
        let h = crate::autodiff::hermite_basis(t);
        assert!((h[0] + h[2] - 1.0).abs() < 1e-14);
    }
}

#[test]
fn cubic_affine_case_and_gate_limit() {
    let v = [0.0, 0.3, 1.0, 1.5];
    for g in [-3.0, 0.0, 4.0] {
        let (a0, a1) = cubic_nodal_values(0.5, 2.0, &[0.0; 3], &[g; 3], &v, true);
        assert!(a1.iter().all(|&s| s == 2.0));
        for i in 0..4 {
            assert!((a0[i] - (0.5 + 2.0 * v[i])).abs() < 1e-14);
        }
    }
    let (a0, a1) = cubic_nodal_values(0.0, 1.0, &[1.0, 0.5, 2.0], &[-60.0; 3], &v, true);
    for i in 1..4 {
        let low = (v[i] - v[i - 1]) / 3.0 * (2.0 * a1[i - 1] + a1[i]);
        assert!((a0[i] - a0[i - 1] - low).abs() < 1e-12);
    }
}

#[test]
fn cubic_continuity_and_vertex_slopes() {
    let (layer, store) = scrambled(LayerKind::Cubic, 1, 2, 5, true, true, 21);
    let dom = Hypercube::cube(1, -1.0, 2.0).unwrap();
    let t = layer.nodal_table(&store, &dom);
    let v = t.vertices(0, 5).to_vec();
    for k in 0..2 {
        let a0 = NodalTable::column(&t.a0, 0, k, 5, 2);
        let a1 = NodalTable::column(t.a1.as_ref().unwrap(), 0, k, 5, 2);
        for c in 0..5 {
            let (y0, s0) = hermite_patch(v[c], v[c], v[c + 1], a0[c], a0[c + 1], a1[c], a1[c + 1]);
            let (y1, s1) = hermite_patch(v[c + 1], v[c], v[c + 1], a0[c], a0[c + 1], a1[c], a1[c + 1]);
            assert!((y0 - a0[c]).abs() < 1e-10 && (s0 - a1[c]).abs() < 1e-10);
            assert!((y1 - a0[c + 1]).abs() < 1e-10 && (s1 - a1[c + 1]).abs() < 1e-10);
        }
    }
    // the layer's own evaluation agrees from both sides of every vertex
    for c in 1..5 {
        let eps = 1e-9;
        let (ym, _) = layer.evaluate(&store, &[v[c] - eps], &dom).unwrap();
        let (yp, _) = layer.evaluate(&store, &[v[c] + eps], &dom).unwrap();
        for k in 0..2 {
            assert!((ym[k] - yp[k]).abs() < 1e-8);
        }
    }
}

#[test]
fn zero_width_box_is_widened() {
    let mut tape = Tape::new();
    let cube = Hypercube::new(vec![3.0, 0.0], vec![3.0, 1.0]).unwrap();
    let b = TapeBox::constant(&mut tape, &cube);
    let w = b.widened(&mut tape).read(&tape);
    assert!(w.lower[0] < 3.0 && w.upper[0] > 3.0);
    assert!((w.upper[0] - w.lower[0] - 8e-6).abs() < 1e-12);
    assert_eq!((w.lower[1], w.upper[1]), (0.0, 1.0));
}

#[test]
fn wrong_input_width_is_an_error() {
    let (layer, store) = scrambled(LayerKind::P1, 2, 1, 3, true, false, 0);
    let dom = Hypercube::cube(3, 0.0, 1.0).unwrap();
    assert!(layer.evaluate(&store, &[0.1, 0.2, 0.3], &dom).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn layers_are_midpoint_convex(seed in 0u64..10_000, kind in 0usize..2, first in any::<bool>()) {
        let kind = [LayerKind::P1, LayerKind::Cubic][kind];
        let (mut layer, store) = scrambled(kind, 2, 2, 5, first, true, seed);
        layer.clip = kind == LayerKind::Cubic;
        let dom = Hypercube::new(vec![-1.0, 0.0], vec![1.0, 3.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
        let a = sample_points(&mut rng, &dom, 32);
        let b = sample_points(&mut rng, &dom, 32);
        let mid: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 0.5 * (x + y)).collect();
        let (ya, _) = layer.evaluate(&store, &a, &dom).unwrap();
        let (yb, _) = layer.evaluate(&store, &b, &dom).unwrap();
        let (ym, _) = layer.evaluate(&store, &mid, &dom).unwrap();
        for i in 0..ya.len() {
            prop_assert!(ym[i] <= 0.5 * (ya[i] + yb[i]) + 1e-9);
        }
    }

    #[test]
    fn later_layers_are_monotone(seed in 0u64..10_000, kind in 0usize..2) {
        let kind = [LayerKind::P1, LayerKind::Cubic][kind];
        let (layer, store) = scrambled(kind, 3, 2, 4, false, true, seed);
        let dom = Hypercube::cube(3, -1.0, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = sample_points(&mut rng, &dom, 16);
        let bumped: Vec<f64> = x.iter().map(|&v| (v + rng.random_range(0.0..0.5)).min(1.0)).collect();
        let (y0, _) = layer.evaluate(&store, &x, &dom).unwrap();
        let (y1, _) = layer.evaluate(&store, &bumped, &dom).unwrap();
        for i in 0..y0.len() {
            prop_assert!(y1[i] >= y0[i] - 1e-12);
        }
    }

    #[test]
    fn p1_slopes_nondecreasing(bhat in -2.0f64..2.0, d in proptest::collection::vec(-1.0f64..1.0, 5), first in any::<bool>()) {
        let v = uniform_vertices(-1.0, 2.0, 6);
        let a = p1_nodal_values(0.3, bhat, &d, &v, first);
        let slopes: Vec<f64> = (0..6).map(|s| (a[s + 1] - a[s]) / (v[s + 1] - v[s])).collect();
        for s in 1..6 {
            prop_assert!(slopes[s] >= slopes[s - 1] - 1e-12);
        }
        if !first {
            prop_assert!(slopes[0] >= -1e-12);
        }
    }

    #[test]
    fn cubic_bracket_holds(
        b in -1.0f64..1.0,
        bhat in -2.0f64..2.0,
        d in proptest::collection::vec(-1.0f64..1.0, 4),
        g in proptest::collection::vec(-6.0f64..6.0, 4),
        raw in proptest::collection::vec(-2.0f64..2.0, 4),
    ) {
        let v = crate::grid::vertices_from_weights(&raw, -1.0, 1.5).unwrap();
        let (a0, a1) = cubic_nodal_values(b, bhat, &d, &g, &v, true);
        for p in 0..4 {
            prop_assert!(a1[p + 1] >= a1[p]);
            let w = v[p + 1] - v[p];
            let lo = a0[p] + w / 3.0 * (2.0 * a1[p] + a1[p + 1]);
            let hi = a0[p] + w / 3.0 * (a1[p] + 2.0 * a1[p + 1]);
            prop_assert!(a0[p + 1] >= lo - 1e-12 && a0[p + 1] <= hi + 1e-12);
        }
        // the derivative of every patch is nondecreasing on a dense sample
        let mut last = f64::NEG_INFINITY;
        for i in 0..=400 {
            let x = -1.0 + 2.5 * i as f64 / 400.0;
            let (c, _) = crate::grid::locate_cell(x, &v);
            let (_, s) = hermite_patch(x, v[c], v[c + 1], a0[c], a0[c + 1], a1[c], a1[c + 1]);
            prop_assert!(s >= last - 1e-9);
            last = s;
        }
    }
}
