use alloc::vec;
use alloc::vec::Vec;

use proptest::prelude::*;
use rand::Rng;

use super::*;
use crate::seed;

fn flat(v: &[f64]) -> Tensor {
    Tensor::new(Shape::Flat(v.len()), v.to_vec()).unwrap()
}

fn dense(out_dim: usize, weight: Vec<f64>, bias: Option<Vec<f64>>) -> LayerSpec {
    LayerSpec::Dense { out_dim, weight, bias }
}

fn random_input(shape: Shape, seed: u64) -> Tensor {
    let mut rng = seed::rng(seed);
    let data = (0..shape.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::new(shape, data).unwrap()
}

/// Draws an input whose forward pass stays at least `1e-6` from every kink.
fn smooth_input(net: &Network, seed: u64) -> Tensor {
    (0..1000)
        .map(|k| random_input(net.input_shape(), seed.wrapping_mul(1000) + k))
        .find(|x| net.kink_margin(x, &net.forward(x).unwrap()) > 1e-6)
        .expect("non-degenerate draw")
}

fn two_conv_net(seed: u64) -> Network {
    NetworkBuilder::new(Shape::spatial(3, 8, 8))
        .conv2d(4, 3, 1, Padding::Same, true)
        .relu()
        .conv2d(5, 3, 1, Padding::Same, true)
        .relu()
        .max_pool(2, 2)
        .flatten()
        .dense(3, true)
        .build(&mut seed::rng(seed))
        .unwrap()
}

#[test]
fn dense_identity_forward() {
    let net =
        Network::new(Shape::Flat(3), 3, vec![dense(3, vec![1., 0., 0., 0., 1., 0., 0., 0., 1.], Some(vec![0.; 3]))])
            .unwrap();
    assert_eq!(net.predict(&flat(&[1., 2., 3.])).unwrap(), vec![1., 2., 3.]);
}

#[test]
fn relu_forward() {
    let net = Network::new(Shape::Flat(2), 2, vec![LayerSpec::Relu]).unwrap();
    assert_eq!(net.predict(&flat(&[-1., 2.])).unwrap(), vec![0., 2.]);
}

#[test]
fn max_pool_forward() {
    let net =
        Network::new(Shape::spatial(1, 2, 2), 1, vec![LayerSpec::MaxPool { kernel: 2, stride: 2 }, LayerSpec::Flatten])
            .unwrap();
    let x = Tensor::new(Shape::spatial(1, 2, 2), vec![1., 2., 3., 4.]).unwrap();
    assert_eq!(net.predict(&x).unwrap(), vec![4.]);
}

#[test]
fn max_pool_ties_route_to_first() {
    let net =
        Network::new(Shape::spatial(1, 2, 2), 1, vec![LayerSpec::MaxPool { kernel: 2, stride: 2 }, LayerSpec::Flatten])
            .unwrap();
    let x = Tensor::new(Shape::spatial(1, 2, 2), vec![1., 4., 4., 4.]).unwrap();
    let trace = net.forward(&x).unwrap();
    let back = net.backward(&x, &trace, 0, false).unwrap();
    assert_eq!(back.input_grad().data(), &[0., 1., 0., 0.]);
}

#[test]
fn same_padding_puts_excess_bottom_right() {
    // 2x2 all-ones kernel, stride 1, on 3x3: one row/column of padding, all at the end.
    let net = Network::new(
        Shape::spatial(1, 3, 3),
        9,
        vec![
            LayerSpec::Conv2d {
                out_channels: 1,
                kernel: [2, 2],
                stride: 1,
                padding: Padding::Same,
                weight: vec![1.; 4],
                bias: None,
            },
            LayerSpec::Flatten,
        ],
    )
    .unwrap();
    let x = Tensor::new(Shape::spatial(1, 3, 3), (1..=9).map(f64::from).collect()).unwrap();
    let y = net.predict(&x).unwrap();
    assert_eq!(y[0], 1. + 2. + 4. + 5.);
    assert_eq!(y[8], 9.);
    assert_eq!(y[2], 3. + 6.);
}

#[test]
fn strided_same_output_size() {
    assert_eq!(conv_axis(7, 3, 2, Padding::Same).unwrap(), (4, 1));
    assert_eq!(conv_axis(8, 3, 2, Padding::Same).unwrap(), (4, 0));
    assert_eq!(conv_axis(8, 3, 2, Padding::Valid).unwrap(), (3, 0));
    assert!(conv_axis(2, 3, 1, Padding::Valid).is_err());
}

#[test]
fn construction_checks_shape_chain() {
    assert!(Network::new(Shape::Flat(3), 2, vec![dense(2, vec![0.; 5], None)]).is_err());
    assert!(Network::new(Shape::Flat(3), 3, vec![LayerSpec::MaxPool { kernel: 2, stride: 2 }]).is_err());
    assert!(Network::new(Shape::Flat(3), 4, vec![LayerSpec::Relu]).is_err());
    assert!(Network::new(Shape::Flat(2), 2, vec![dense(2, vec![0.; 4], Some(vec![0.; 3]))]).is_err());
}

#[test]
fn dense_gradient_is_weight_row() {
    let net = Network::new(Shape::Flat(2), 1, vec![dense(1, vec![3., -2.], None)]).unwrap();
    let x = flat(&[0.3, 0.9]);
    let t = net.forward(&x).unwrap();
    assert_eq!(net.backward(&x, &t, 0, false).unwrap().input_grad().data(), &[3., -2.]);
}

#[test]
fn guided_relu_zeroes_both_lanes() {
    // Upstream gradient into the ReLU is the dense row (4, -4).
    let net = Network::new(Shape::Flat(2), 1, vec![LayerSpec::Relu, dense(1, vec![4., -4.], None)]).unwrap();
    let x = flat(&[-1., 5.]);
    let t = net.forward(&x).unwrap();
    assert_eq!(net.backward(&x, &t, 0, true).unwrap().input_grad().data(), &[0., 0.]);
    assert_eq!(net.backward(&x, &t, 0, false).unwrap().input_grad().data(), &[0., -4.]);
}

#[test]
fn backward_rejects_bad_class_and_trace() {
    let net = two_conv_net(1);
    let x = random_input(net.input_shape(), 2);
    let t = net.forward(&x).unwrap();
    assert!(matches!(net.backward(&x, &t, 3, false), Err(crate::Error::Index(_))));
    let other = Network::new(Shape::Flat(2), 2, vec![LayerSpec::Relu]).unwrap();
    let ox = flat(&[1., 2.]);
    let ot = other.forward(&ox).unwrap();
    assert!(matches!(net.backward(&x, &ot, 0, false), Err(crate::Error::Shape(_))));
    assert!(matches!(net.forward(&ox), Err(crate::Error::Shape(_))));
}

#[test]
fn backward_counter_tracks_calls() {
    let net = two_conv_net(3);
    let x = random_input(net.input_shape(), 4);
    let t = net.forward(&x).unwrap();
    assert_eq!(net.backward_count(), 0);
    net.backward(&x, &t, 0, false).unwrap();
    net.backward(&x, &t, 1, true).unwrap();
    assert_eq!(net.backward_count(), 2);
    assert_eq!(net.clone().backward_count(), 0);
}

#[test]
fn bias_gradients_present_exactly_for_biased_layers() {
    let net = two_conv_net(5);
    let x = random_input(net.input_shape(), 6);
    let t = net.forward(&x).unwrap();
    let b = net.backward(&x, &t, 1, false).unwrap();
    for (i, layer) in net.layers().iter().enumerate() {
        assert_eq!(b.bias_grad(i).is_some(), layer.bias().is_some(), "layer {}", i);
        if let Some(g) = b.bias_grad(i) {
            assert_eq!(g.len(), layer.bias().unwrap().len());
        }
    }
}

#[test]
fn bias_gradients_match_finite_differences() {
    let net = two_conv_net(7);
    let x = smooth_input(&net, 8);
    let class = 2;
    let t = net.forward(&x).unwrap();
    let back = net.backward(&x, &t, class, false).unwrap();
    let h = 1e-4;
    for (i, layer) in net.layers().iter().enumerate() {
        let Some(bias) = layer.bias() else { continue };
        for k in 0..bias.len() {
            let shifted = |delta: f64| {
                let n = net.map_layers(|ls| ls[i].bias_mut().unwrap()[k] += delta).unwrap();
                n.predict(&x).unwrap()[class]
            };
            let numeric = (shifted(h) - shifted(-h)) / (2. * h);
            let exact = back.bias_grad(i).unwrap()[k];
            assert!(
                (numeric - exact).abs() <= 1e-6 * exact.abs().max(1.),
                "layer {} bias {}: {} vs {}",
                i,
                k,
                numeric,
                exact
            );
        }
    }
}

#[test]
fn random_two_conv_net_passes_grad_check() {
    for s in 0..3 {
        let net = two_conv_net(10 + s);
        let x = smooth_input(&net, 20 + s);
        for class in 0..3 {
            let report = grad_check_with(&net, &x, class, &GradCheckConfig::default()).unwrap();
            assert!(report.checked >= 32, "too many skipped: {:?}", report);
            assert!(report.max_rel_err <= 1e-3, "{:?}", report);
        }
    }
}

#[test]
fn every_layer_kind_passes_grad_check() {
    let nets = [
        NetworkBuilder::new(Shape::spatial(2, 7, 7))
            .conv2d(3, 3, 2, Padding::Same, true)
            .relu()
            .avg_pool(2, 1)
            .global_avg_pool()
            .dense(2, true),
        NetworkBuilder::new(Shape::spatial(2, 6, 6))
            .conv2d(3, 2, 1, Padding::Valid, false)
            .max_pool(3, 1)
            .relu()
            .flatten()
            .dense(4, false)
            .relu()
            .dense(2, true),
    ];
    for (i, b) in nets.into_iter().enumerate() {
        let net = b.build(&mut seed::rng(40 + i as u64)).unwrap();
        let x = smooth_input(&net, 50 + i as u64);
        let report = grad_check_with(&net, &x, 1, &GradCheckConfig::default()).unwrap();
        assert!(report.max_rel_err <= 1e-3 && report.checked > 0, "net {}: {:?}", i, report);
    }
}

#[test]
fn linear_net_grad_check_is_tight() {
    let net = NetworkBuilder::new(Shape::spatial(1, 5, 5))
        .conv2d(2, 3, 1, Padding::Same, true)
        .avg_pool(2, 1)
        .flatten()
        .dense(3, true)
        .build(&mut seed::rng(60))
        .unwrap();
    let x = random_input(net.input_shape(), 61);
    assert!(grad_check(&net, &x, 0).unwrap() <= 1e-6);
}

#[test]
fn grad_check_skips_relu_at_zero() {
    let net = Network::new(Shape::Flat(2), 1, vec![LayerSpec::Relu, dense(1, vec![1., 1.], None)]).unwrap();
    let report = grad_check_with(&net, &flat(&[0., 1.]), 0, &GradCheckConfig::default()).unwrap();
    assert_eq!((report.checked, report.skipped), (1, 1));
    assert!(report.max_rel_err <= 1e-12);
}

#[test]
fn guided_gradients_after_relu_are_nonnegative() {
    let net = two_conv_net(70);
    for s in 0..5 {
        let x = random_input(net.input_shape(), 71 + s);
        let t = net.forward(&x).unwrap();
        let b = net.backward(&x, &t, (s % 3) as usize, true).unwrap();
        for (i, layer) in net.layers().iter().enumerate() {
            if *layer == LayerSpec::Relu {
                let below = if i == 0 { b.input_grad() } else { b.layer_grad(i - 1) };
                assert!(below.data().iter().all(|&g| g >= 0.));
            }
        }
    }
}

#[test]
fn network_json_round_trip() {
    let net = two_conv_net(80);
    let json = serde_json::to_string(&net).unwrap();
    let back: Network = serde_json::from_str(&json).unwrap();
    assert_eq!(back, net);
    let bad = json.replace("\"class_count\":3", "\"class_count\":4");
    assert!(serde_json::from_str::<Network>(&bad).is_err());
}

#[test]
fn softmax_is_a_distribution() {
    let p = softmax(&[1000., 1000., -5.]);
    assert!((p.iter().sum::<f64>() - 1.).abs() < 1e-12);
    assert!((p[0] - 0.5).abs() < 1e-12);
}

proptest! {
    #[test]
    fn bias_free_linear_net_is_homogeneous(alpha in 0.01f64..100., s in 0u64..1000) {
        let net = NetworkBuilder::new(Shape::spatial(2, 4, 4))
            .conv2d(3, 3, 1, Padding::Same, false)
            .avg_pool(2, 2)
            .flatten()
            .dense(2, false)
            .build(&mut seed::rng(s))
            .unwrap();
        let x = random_input(net.input_shape(), s + 1);
        let mut scaled = x.clone();
        scaled.data_mut().iter_mut().for_each(|v| *v *= alpha);
        let (t, ts) = (net.forward(&x).unwrap(), net.forward(&scaled).unwrap());
        for (a, b) in t.logits().iter().zip(ts.logits()) {
            prop_assert!((alpha * a - b).abs() <= 1e-9 * (1. + b.abs()));
        }
        let (g, gs) = (net.backward(&x, &t, 0, false).unwrap(), net.backward(&scaled, &ts, 0, false).unwrap());
        for (a, b) in g.input_grad().data().iter().zip(gs.input_grad().data()) {
            prop_assert!((a - b).abs() <= 1e-12 * (1. + a.abs()));
        }
    }
}
