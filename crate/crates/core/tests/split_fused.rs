//! The VFL split is an implementation detail: parameter gradients obtained
//! through the message-passing protocol must equal those of the fused
//! end-to-end network.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vflpriv::nn::{loss, LayerSpec, Matrix, MlpModel, OptimKind, OptimizerState};
use vflpriv::protocol::{
    top_step, ClientState, CoordinatorState, GradFeedback, IntermediateOutput, TaskKind, TopModel,
};

struct FusedGrads {
    clients: Vec<Vec<f64>>,
    heads: Vec<Vec<f64>>,
    trunk: Vec<f64>,
}

/// Test-local fused composition: one forward/backward over the whole
/// network with no protocol plumbing.
fn fused_gradients(
    clients: &mut [MlpModel],
    top: &mut TopModel,
    shards: &[Matrix],
    labels: &[usize],
    task: TaskKind,
) -> FusedGrads {
    let client_traces: Vec<_> = clients
        .iter_mut()
        .zip(shards)
        .map(|(m, x)| m.forward_train(x).unwrap())
        .collect();
    let head_traces: Vec<_> = top
        .heads
        .iter_mut()
        .zip(&client_traces)
        .map(|(h, t)| h.forward_train(t.output()).unwrap())
        .collect();
    let head_outs: Vec<&Matrix> = head_traces.iter().map(|t| t.output()).collect();
    let trunk_in = Matrix::hcat(&head_outs).unwrap();
    let trunk_trace = top.trunk.forward_train(&trunk_in).unwrap();

    let loss_grad = match task {
        TaskKind::MultiClass => loss::cross_entropy(trunk_trace.output(), labels).unwrap().1,
        TaskKind::Binary => {
            let targets = Matrix::from_fn(labels.len(), 1, |r, _| labels[r] as f64);
            loss::bce(trunk_trace.output(), &targets).unwrap().1
        }
    };
    let trunk_bundle = top.trunk.backward(&trunk_trace, &loss_grad).unwrap();
    let mut col = 0;
    let mut head_grads = Vec::new();
    let mut client_grads = Vec::new();
    for ((head, head_trace), (client, client_trace)) in top
        .heads
        .iter()
        .zip(&head_traces)
        .zip(clients.iter().zip(&client_traces))
    {
        let width = head.output_width();
        let upstream = trunk_bundle.input_grad.col_block(col, width).unwrap();
        col += width;
        let head_bundle = head.backward(head_trace, &upstream).unwrap();
        let client_bundle = client
            .backward(client_trace, &head_bundle.input_grad)
            .unwrap();
        head_grads.push(head_bundle.flat());
        client_grads.push(client_bundle.flat());
    }
    FusedGrads {
        clients: client_grads,
        heads: head_grads,
        trunk: trunk_bundle.flat(),
    }
}

fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-12))
        .fold(0.0, f64::max)
}

fn random_case(seed: u64) -> (Vec<MlpModel>, TopModel, Vec<Matrix>, Vec<usize>, TaskKind) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = rng.gen_range(1..=3usize);
    let batch = rng.gen_range(2..=6usize);
    let task = if seed % 2 == 0 {
        TaskKind::MultiClass
    } else {
        TaskKind::Binary
    };
    let classes = if task == TaskKind::MultiClass {
        rng.gen_range(3..=5usize)
    } else {
        2
    };
    let mut clients = Vec::new();
    let mut shards = Vec::new();
    let mut heads = Vec::new();
    for _ in 0..m {
        let dm = rng.gen_range(2..=6usize);
        let fw = rng.gen_range(3..=8usize);
        let act = match rng.gen_range(0..3) {
            0 => LayerSpec::Relu,
            1 => LayerSpec::Tanh,
            _ => LayerSpec::Sigmoid,
        };
        clients.push(
            MlpModel::init(dm, &[LayerSpec::Linear(dm, fw), act], &mut rng).unwrap(),
        );
        shards.push(Matrix::from_fn(batch, dm, |_, _| rng.gen_range(-1.0..1.0)));
        let hw = rng.gen_range(2..=5usize);
        heads.push(MlpModel::init(fw, &[LayerSpec::Linear(fw, hw)], &mut rng).unwrap());
    }
    let trunk_in: usize = heads.iter().map(MlpModel::output_width).sum();
    let trunk = match task {
        TaskKind::MultiClass => MlpModel::init(
            trunk_in,
            &[LayerSpec::Relu, LayerSpec::Linear(trunk_in, classes)],
            &mut rng,
        )
        .unwrap(),
        TaskKind::Binary => MlpModel::init(
            trunk_in,
            &[
                LayerSpec::Relu,
                LayerSpec::Linear(trunk_in, 1),
                LayerSpec::Sigmoid,
            ],
            &mut rng,
        )
        .unwrap(),
    };
    let labels = (0..batch).map(|_| rng.gen_range(0..classes)).collect();
    (clients, TopModel { heads, trunk }, shards, labels, task)
}

/// Protocol-route gradients: feedback from `top_step`, client bundles from
/// the chain rule, top gradients recovered from the SGD parameter delta.
fn protocol_gradients(
    clients: &[MlpModel],
    top: &TopModel,
    shards: &[Matrix],
    labels: &[usize],
    task: TaskKind,
) -> FusedGrads {
    let lr = 0.5;
    let mut states: Vec<ClientState> = clients
        .iter()
        .enumerate()
        .map(|(id, m)| {
            ClientState::new(
                id,
                m.clone(),
                shards[id].clone(),
                OptimizerState::new(OptimKind::Sgd, m.param_count()),
            )
            .unwrap()
        })
        .collect();
    let mut coord = CoordinatorState {
        top: TopModel {
            heads: top.heads.clone(),
            trunk: top.trunk.clone(),
        },
        optim: OptimizerState::new(OptimKind::Sgd, top.param_count()),
        task,
    };
    let ctx = vflpriv::protocol::BatchCtx {
        epoch: 1,
        batch_index: 0,
    };
    let outputs: Vec<IntermediateOutput> = states
        .iter_mut()
        .zip(shards)
        .map(|(c, x)| c.forward_batch(x, ctx).unwrap())
        .collect();
    let top_before = coord.top.flatten();
    let step = top_step(&mut coord, &outputs, labels, lr).unwrap();
    let top_after = coord.top.flatten();
    let top_grads: Vec<f64> = top_before
        .iter()
        .zip(&top_after)
        .map(|(b, a)| (b - a) / lr)
        .collect();

    let mut client_grads = Vec::new();
    for (c, fb) in states.iter_mut().zip(&step.feedback) {
        // The engine computes this same bundle before the optimizer step.
        let fb2 = GradFeedback {
            client: fb.client,
            epoch: fb.epoch,
            batch_index: fb.batch_index,
            grad: fb.grad.clone(),
        };
        let trace = c.model.forward_train(&shards[c.id]).unwrap();
        let bundle = c.model.backward(&trace, &fb2.grad).unwrap();
        client_grads.push(bundle.flat());
    }

    // Split the flat top gradient back into heads and trunk.
    let mut heads = Vec::new();
    let mut pos = 0;
    for h in &top.heads {
        let n = h.param_count();
        heads.push(top_grads[pos..pos + n].to_vec());
        pos += n;
    }
    let trunk = top_grads[pos..].to_vec();
    FusedGrads {
        clients: client_grads,
        heads,
        trunk,
    }
}

#[test]
fn split_gradients_equal_fused_gradients_on_random_configurations() {
    for seed in 0..5u64 {
        let (mut clients, mut top, shards, labels, task) = random_case(seed);
        let fused = fused_gradients(&mut clients, &mut top, &shards, &labels, task);
        let split = protocol_gradients(&clients, &top, &shards, &labels, task);

        for (m, (a, b)) in fused.clients.iter().zip(&split.clients).enumerate() {
            let err = max_rel_err(a, b);
            assert!(err < 1e-10, "seed {seed} client {m}: rel err {err}");
        }
        for (m, (a, b)) in fused.heads.iter().zip(&split.heads).enumerate() {
            let err = max_rel_err(a, b);
            assert!(err < 1e-9, "seed {seed} head {m}: rel err {err}");
        }
        let err = max_rel_err(&fused.trunk, &split.trunk);
        assert!(err < 1e-9, "seed {seed} trunk: rel err {err}");
    }
}

#[test]
fn single_client_composite_matches_one_fused_model() {
    // With one client the whole pipeline is literally one sequential model;
    // chaining backward through the protocol must agree with a single
    // backward pass over the concatenated layer stack.
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let client = MlpModel::init(
        4,
        &[LayerSpec::Linear(4, 6), LayerSpec::Tanh],
        &mut rng,
    )
    .unwrap();
    let head = MlpModel::init(6, &[LayerSpec::Linear(6, 5)], &mut rng).unwrap();
    let trunk = MlpModel::init(
        5,
        &[LayerSpec::Relu, LayerSpec::Linear(5, 3)],
        &mut rng,
    )
    .unwrap();
    let shard = Matrix::from_fn(4, 4, |r, c| ((r * 4 + c) as f64 * 0.3).sin());
    let labels = vec![0usize, 1, 2, 0];

    // One sequential model from the concatenated layers.
    let mut layers = client.layers().to_vec();
    layers.extend(head.layers().to_vec());
    layers.extend(trunk.layers().to_vec());
    let mut fused = MlpModel::from_layers(4, layers).unwrap();
    let trace = fused.forward_train(&shard).unwrap();
    let (_, grad) = loss::cross_entropy(trace.output(), &labels).unwrap();
    let fused_flat = fused.backward(&trace, &grad).unwrap().flat();

    let top = TopModel {
        heads: vec![head],
        trunk,
    };
    let split = protocol_gradients(
        &[client.clone()],
        &top,
        std::slice::from_ref(&shard),
        &labels,
        TaskKind::MultiClass,
    );
    let mut split_flat = split.clients[0].clone();
    split_flat.extend(split.heads[0].clone());
    split_flat.extend(split.trunk.clone());
    let err = max_rel_err(&fused_flat, &split_flat);
    assert!(err < 1e-10, "rel err {err}");
}
