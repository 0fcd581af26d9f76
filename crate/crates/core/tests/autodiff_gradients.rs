//! Every graph primitive against central differences (h = 1e-5) on 100
//! random instances each.

use preflab::numerics::{finite_diff_check, Coordinates, Graph, NodeId, NumericsError, Prng, Tensor};

const INSTANCES: u64 = 100;
const TOL: f64 = 1e-6;
const H: f64 = 1e-5;

fn random_tensor(rng: &mut Prng, shape: &[usize], away_from_zero: bool) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let v = rng.uniform() * 2.0 - 1.0;
            if away_from_zero {
                v.signum() * (0.05 + v.abs())
            } else {
                v
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// `sum(weights * op(inputs))` for a random constant weight tensor.
fn check_primitive<F>(name: &str, shapes: &[Vec<usize>], away_from_zero: bool, op: F)
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId, NumericsError> + Copy,
{
    let mut worst: f64 = 0.0;
    for seed in 0..INSTANCES {
        let mut rng = Prng::new(seed * 7919 + name.len() as u64);
        let params: Vec<Tensor> = shapes.iter().map(|s| random_tensor(&mut rng, s, away_from_zero)).collect();
        let weight_seed = rng.stream(1).seed();
        let loss = |ps: &[Tensor]| {
            let mut g = Graph::new();
            let leaves: Vec<NodeId> = ps.iter().map(|t| g.leaf(t.clone())).collect();
            let out = op(&mut g, &leaves)?;
            let mut wr = Prng::new(weight_seed);
            let w = random_tensor(&mut wr, g.value(out).shape(), false);
            let w = g.constant(w);
            let prod = g.mul(out, w)?;
            let total = g.sum(prod);
            let grads = g.backward(total)?;
            Ok((g.scalar(total), leaves.iter().map(|l| grads.get(*l)).collect()))
        };
        let report = finite_diff_check(loss, &params, H, Coordinates::All).unwrap();
        worst = worst.max(report.max_rel_error);
    }
    assert!(worst <= TOL, "{name}: max relative error {worst:e}");
}

#[test]
fn elementwise_binary() {
    check_primitive("add", &[vec![3, 4], vec![3, 4]], false, |g, p| g.add(p[0], p[1]));
    check_primitive("sub", &[vec![3, 4], vec![3, 4]], false, |g, p| g.sub(p[0], p[1]));
    check_primitive("mul", &[vec![3, 4], vec![3, 4]], false, |g, p| g.mul(p[0], p[1]));
    check_primitive("add_row", &[vec![3, 4], vec![4]], false, |g, p| g.add_row(p[0], p[1]));
}

#[test]
fn linear_algebra() {
    check_primitive("matmul", &[vec![3, 5], vec![5, 2]], false, |g, p| g.matmul(p[0], p[1]));
    check_primitive("transpose", &[vec![3, 5]], false, |g, p| g.transpose(p[0]));
    check_primitive("scale", &[vec![2, 3]], false, |g, p| Ok(g.scale(p[0], -1.7)));
}

#[test]
fn nonlinearities() {
    check_primitive("tanh", &[vec![4, 3]], false, |g, p| Ok(g.tanh(p[0])));
    check_primitive("relu", &[vec![4, 3]], true, |g, p| Ok(g.relu(p[0])));
    check_primitive("log_sigmoid", &[vec![6]], false, |g, p| Ok(g.log_sigmoid(p[0])));
}

#[test]
fn softmax_family() {
    check_primitive("softmax", &[vec![3, 5]], false, |g, p| g.softmax(p[0], false));
    check_primitive("causal_softmax", &[vec![4, 4]], false, |g, p| g.softmax(p[0], true));
    check_primitive("log_softmax", &[vec![3, 8]], false, |g, p| g.log_softmax(p[0]));
}

#[test]
fn indexing() {
    check_primitive("gather", &[vec![4, 5]], false, |g, p| g.gather(p[0], &[1, 0, 4, 1]));
    check_primitive("embed", &[vec![6, 3]], false, |g, p| g.embed(p[0], &[5, 0, 5, 2]));
    check_primitive("slice_rows", &[vec![5, 3]], false, |g, p| g.slice_rows(p[0], 1, 4));
}

#[test]
fn reductions_and_norm() {
    check_primitive("sum", &[vec![3, 3]], false, |g, p| Ok(g.sum(p[0])));
    check_primitive("mean", &[vec![3, 3]], false, |g, p| Ok(g.mean(p[0])));
    check_primitive("layer_norm", &[vec![3, 6], vec![6], vec![6]], false, |g, p| {
        g.layer_norm(p[0], p[1], p[2])
    });
}

#[test]
fn sum_of_log_softmax_gradient() {
    // f = sum(log_softmax(logits)) on random 8-vectors
    check_primitive("sum_log_softmax", &[vec![1, 8]], false, |g, p| {
        let l = g.log_softmax(p[0])?;
        Ok(g.sum(l))
    });
}
