mod support;

use atcn::nn::{conv1d, ConvParams};
use atcn::tensor::rand_uniform;
use atcn::{Prng, Shape, Tensor};
use proptest::prelude::*;
use support::naive;

fn params(w: Vec<f64>, b: Option<Vec<f64>>, c_out: usize, cig: usize, k: usize, d: usize, g: usize, s: usize) -> ConvParams<f64> {
    ConvParams {
        weight: Tensor::from_vec(Shape::new(c_out, cig, k), w).unwrap(),
        bias: b,
        stride: s,
        dilation: d,
        groups: g,
    }
}

#[test]
fn matches_naive_oracle_over_grid() {
    let c = 8;
    let mut rng = Prng::new(11);
    let mut worst = 0.0f64;
    for k in [1, 3, 13, 25] {
        for d in [1, 2, 4, 6] {
            for g in [1, c / 2, c] {
                for (c_out, bias, s) in [(c, false, 1), (2 * c, true, 1), (c, true, 2)] {
                    let t = (k - 1) * d + 1 + 17;
                    let cig = c / g;
                    let x = rand_uniform(&mut rng, Shape::new(2, c, t), -1.0, 1.0).unwrap();
                    let w = rand_uniform(&mut rng, Shape::new(c_out, cig, k), -1.0, 1.0).unwrap().into_vec();
                    let b = bias.then(|| rand_uniform(&mut rng, Shape::new(1, 1, c_out), -1.0, 1.0).unwrap().into_vec());
                    let want = naive(&x, &w, b.as_deref(), c_out, k, d, g, s);
                    let got = conv1d(&x, &params(w, b, c_out, cig, k, d, g, s)).unwrap();
                    assert_eq!(got.len(), want.len(), "k={k} d={d} g={g}");
                    for (a, e) in got.data().iter().zip(&want) {
                        let err = (a - e).abs();
                        worst = worst.max(err);
                        assert!(err <= 1e-6, "k={k} d={d} g={g} c_out={c_out} s={s}: {a} vs {e}");
                    }
                }
            }
        }
    }
    assert!(worst <= 1e-6);
}

#[test]
fn single_precision_tracks_double_oracle() {
    let mut rng = Prng::new(5);
    for (k, d, g) in [(25, 1, 1), (13, 2, 8), (7, 4, 4)] {
        let c = 8;
        let t = (k - 1) * d + 40;
        let x = rand_uniform(&mut rng, Shape::new(1, c, t), -1.0, 1.0).unwrap();
        let w = rand_uniform(&mut rng, Shape::new(c, c / g, k), -1.0, 1.0).unwrap().into_vec();
        let want = naive(&x, &w, None, c, k, d, g, 1);
        let p32 = ConvParams {
            weight: Tensor::from_vec(Shape::new(c, c / g, k), w.iter().map(|&v| v as f32).collect()).unwrap(),
            bias: None,
            stride: 1,
            dilation: d,
            groups: g,
        };
        let got = conv1d(&x.cast::<f32>(), &p32).unwrap();
        for (a, e) in got.data().iter().zip(&want) {
            assert!((*a as f64 - e).abs() <= 1e-4 * (1.0 + e.abs()), "{a} vs {e}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn bias_free_conv_is_linear(
        seed in any::<u64>(),
        k in 1usize..6,
        d in 1usize..4,
        g_pow in 0u32..3,
        a in -2.0f64..2.0,
        b in -2.0f64..2.0,
    ) {
        let g = 1usize << g_pow;
        let c = 4;
        let t = (k - 1) * d + 1 + 9;
        let mut rng = Prng::new(seed);
        let x1 = rand_uniform(&mut rng, Shape::new(2, c, t), -1.0, 1.0).unwrap();
        let x2 = rand_uniform(&mut rng, Shape::new(2, c, t), -1.0, 1.0).unwrap();
        let w = rand_uniform(&mut rng, Shape::new(c, c / g, k), -1.0, 1.0).unwrap().into_vec();
        let p = params(w, None, c, c / g, k, d, g, 1);
        let mut mix = x1.scale(a);
        mix.add_assign(&x2.scale(b)).unwrap();
        let lhs = conv1d(&mix, &p).unwrap();
        let y1 = conv1d(&x1, &p).unwrap();
        let y2 = conv1d(&x2, &p).unwrap();
        for ((l, u), v) in lhs.data().iter().zip(y1.data()).zip(y2.data()) {
            prop_assert!((l - (a * u + b * v)).abs() <= 1e-10);
        }
    }
}
