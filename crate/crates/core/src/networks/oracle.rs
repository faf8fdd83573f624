//! Exact P1 network for the maximum of two affine functions.
//!
//! `max(l1, l2) = relu(l1 - l2) + l2`. Three first-layer neurons produce
//! `l1`, `-l2` and `l2`; the second layer adds the first two and passes the
//! third through; the output layer applies a ReLU built from a lattice whose
//! interior vertex is moved onto 0, plus the identity on the second input.
//! Every box is read from the network's own forward pass.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::model::Model;
use super::spec::{Family, NetworkSpec};
use crate::grid::{raw_for_weight, Hypercube};
use crate::layers::Layer;
use crate::{Error, Result};

/// Parameters of one convex P1 function `(j, k)` with `P = 2`.
#[derive(Clone, Copy)]
struct Piece {
    b: f64,
    bhat: f64,
    d: f64,
}

const ZERO: Piece = Piece { b: 0.0, bhat: 0.0, d: 0.0 };

fn identity_on(lo: f64) -> Piece {
    Piece { b: lo, bhat: 1.0, d: 0.0 }
}

fn set_layer(model: &mut Model, l: usize, pieces: &dyn Fn(usize, usize) -> Piece) {
    let layer: Layer = model.layers().expect("chain")[l].clone();
    let (m, q) = (layer.fan_in, layer.fan_out);
    let mut b = vec![0.0; m * q];
    let mut bhat = vec![0.0; m * q];
    let mut d = vec![0.0; m * q];
    for j in 0..m {
        for k in 0..q {
            let p = pieces(j, k);
            b[j * q + k] = p.b;
            bhat[j * q + k] = p.bhat;
            d[j * q + k] = p.d;
        }
    }
    model.store.set_value(layer.ids.b.expect("p1"), &b);
    model.store.set_value(layer.ids.bhat.expect("p1"), &bhat);
    model.store.set_value(layer.ids.d.expect("p1"), &d);
    model.refresh_boxes();
}

/// Builds a P1 network equal to `max(a1.x + b1, a2.x + b2)` on `domain`.
///
/// When `a1 == a2` the function is affine and a single layer is returned.
pub fn construct_max_affine_p1(a1: &[f64], b1: f64, a2: &[f64], b2: f64, domain: &Hypercube) -> Result<Model> {
    let n = domain.dim();
    if a1.len() != n || a2.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: if a1.len() != n { a1.len() } else { a2.len() } });
    }
    let lo = domain.lower.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    // slope `s` on input j starting from `c` at the lower corner
    let affine = |a: &[f64], beta: f64, j: usize| Piece {
        b: a[j] * lo[j] + if j == 0 { beta } else { 0.0 },
        bhat: a[j],
        d: 0.0,
    };

    if a1 == a2 {
        let spec = NetworkSpec::ickan(Family::P1, domain.clone(), vec![], 2, true);
        let mut model = Model::new(spec, &mut rng)?;
        let top = b1.max(b2);
        set_layer(&mut model, 0, &|j, _| affine(a1, top, j));
        return Ok(model);
    }

    let spec = NetworkSpec::ickan(Family::P1, domain.clone(), vec![3, 2], 2, true);
    let mut model = Model::new(spec, &mut rng)?;
    let neg2: Vec<f64> = a2.iter().map(|v| -v).collect();
    set_layer(&mut model, 0, &|j, k| match k {
        0 => affine(a1, b1, j),
        1 => affine(&neg2, -b2, j),
        _ => affine(a2, b2, j),
    });

    let g1 = model.boxes()[1].widened();
    set_layer(&mut model, 1, &|j, k| match (j, k) {
        (0 | 1, 0) => identity_on(g1.lower[j]),
        (2, 1) => identity_on(g1.lower[2]),
        _ => ZERO,
    });

    let g2 = model.boxes()[2].widened();
    let (l, u) = (g2.lower[0], g2.upper[0]);
    let relu_piece = if l < 0.0 && 0.0 < u {
        // place the interior vertex at 0
        let scale = 1.0 / (-l).min(u);
        let raw = [raw_for_weight(-l * scale), raw_for_weight(u * scale)];
        let id = model.layers().expect("chain")[2].ids.raw.expect("adaptive");
        let mut all = model.store.value(id).to_vec();
        all[..2].copy_from_slice(&raw);
        model.store.set_value(id, &all);
        Piece { b: 0.0, bhat: 0.0, d: 1.0 }
    } else if u <= 0.0 {
        ZERO
    } else {
        identity_on(l)
    };
    set_layer(&mut model, 2, &|j, _| if j == 0 { relu_piece } else { identity_on(g2.lower[1]) });
    Ok(model)
}
