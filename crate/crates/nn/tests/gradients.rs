use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rhomap_nn::gradcheck::check_network;
use rhomap_nn::{l1_loss, LayerSpec, Mode, Network, NetworkBuilder, Tensor};

const TOL: f64 = 1e-4;

fn random_tensor(shape: [usize; 4], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = shape.iter().product();
    Tensor::from_vec(shape, (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn assert_grads(net: &Network, x: &Tensor) {
    let r = check_network(net, x).unwrap();
    assert!(r.checked > 0);
    assert!(r.max_rel_err < TOL, "max rel err {} at {}", r.max_rel_err, r.worst);
}

#[test]
fn conv3() {
    let net = Network::new(
        2,
        vec![LayerSpec::Conv2d {
            in_channels: 2,
            out_channels: 3,
            kernel: 3,
        }],
        1,
    )
    .unwrap();
    assert_grads(&net, &random_tensor([2, 2, 5, 4], 2));
}

#[test]
fn conv1() {
    let net = Network::new(
        3,
        vec![LayerSpec::Conv2d {
            in_channels: 3,
            out_channels: 2,
            kernel: 1,
        }],
        3,
    )
    .unwrap();
    assert_grads(&net, &random_tensor([2, 3, 3, 3], 4));
}

#[test]
fn max_pool_and_upsample() {
    let mut b = NetworkBuilder::new(1);
    b.conv(2, 3).max_pool().upsample().conv(1, 1);
    assert_grads(&b.build(5).unwrap(), &random_tensor([2, 1, 4, 6], 6));
}

#[test]
fn concat_skip() {
    let mut b = NetworkBuilder::new(2);
    b.conv(2, 3);
    let skip = b.mark() + 1;
    b.relu().max_pool().conv(3, 3).upsample().concat(skip).conv(1, 3);
    assert_grads(&b.build(7).unwrap(), &random_tensor([2, 2, 4, 4], 8));
}

#[test]
fn fully_connected_relu_batch_norm_add_skip() {
    let mut b = NetworkBuilder::new(2);
    b.fc(4).relu().batch_norm();
    let skip = b.mark();
    b.fc(4).relu().batch_norm().add(skip).fc(1);
    assert_grads(&b.build(9).unwrap(), &random_tensor([6, 2, 1, 1], 10));
}

#[test]
fn batch_norm_spatial() {
    let mut b = NetworkBuilder::new(2);
    b.conv(3, 3).batch_norm().conv(1, 1);
    assert_grads(&b.build(11).unwrap(), &random_tensor([2, 2, 3, 4], 12));
}

#[test]
fn limiter_and_rescale() {
    // inputs placed inside the unsaturated band, away from the kinks
    let net = Network::new(
        1,
        vec![
            LayerSpec::Rescale { scale: 20.0, offset: 45.0 },
            LayerSpec::Limiter { y_min: 10.0, y_max: 100.0 },
        ],
        0,
    )
    .unwrap();
    let x = Tensor::from_rows(4, 1, vec![-0.3, 0.1, 0.5, 0.9]).unwrap();
    assert_grads(&net, &x);
}

#[test]
fn small_unet_shape() {
    let mut b = NetworkBuilder::new(2);
    b.conv(2, 3).batch_norm().relu();
    let s1 = b.mark();
    b.max_pool().conv(4, 3).batch_norm().relu().upsample().concat(s1).conv(2, 3).relu().conv(1, 1);
    b.rescale(10.0, 30.0).limiter(10.0, 100.0);
    assert_grads(&b.build(13).unwrap(), &random_tensor([2, 2, 4, 4], 14));
}

#[test]
fn scalar_chain_rule() {
    // y = w x with w = 2, x = 3, loss = |y - 0| => dL/dw = sign(6) * 3
    let mut net = Network::new(
        1,
        vec![LayerSpec::FullyConnected {
            in_features: 1,
            out_features: 1,
        }],
        0,
    )
    .unwrap();
    {
        let mut ps: Vec<_> = net.params_mut().collect();
        ps[0].value[0] = 2.0;
        ps[1].value[0] = 0.0;
    }
    let x = Tensor::from_rows(1, 1, vec![3.0]).unwrap();
    let y = net.forward(&x, Mode::Train).unwrap();
    assert_eq!(y.data(), &[6.0]);
    let loss = l1_loss(&y, &Tensor::zeros([1, 1, 1, 1]), None).unwrap();
    net.backward(&loss.grad).unwrap();
    let ps: Vec<_> = net.params().collect();
    assert_eq!(ps[0].grad, vec![3.0]);
    assert_eq!(ps[1].grad, vec![1.0]);
}
