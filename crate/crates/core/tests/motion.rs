use dance2midi::motion::{
    skeleton_input, stgcn_forward, MotionConfig, MotionEncoder, MotionGraph, SkeletonSequence, StGcn, INPUT_CHANNELS,
};
use dance2midi::nn::Linear;
use dance2midi::tensor::gradcheck::check_params;
use dance2midi::tensor::{Graph, ParamStore, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_clip(rng: &mut ChaCha8Rng, t: usize, j: usize) -> SkeletonSequence {
    let frames = (0..t)
        .map(|_| {
            (0..j)
                .map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
                .collect()
        })
        .collect();
    SkeletonSequence::new(frames).unwrap()
}

#[test]
fn stgcn_is_invariant_to_joint_relabeling() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut store = ParamStore::new();
    let net = StGcn::new(&mut store, &mut rng, "stgcn", INPUT_CHANNELS, &[4, 4, 6], 3, 5).unwrap();
    let graph = MotionGraph::for_joints(7).unwrap();
    let clip = random_clip(&mut rng, 9, 7);
    let perm = [3, 6, 0, 5, 1, 2, 4];
    let mut moved = clip.clone();
    for (f_new, f_old) in moved.frames.iter_mut().zip(&clip.frames) {
        for j in 0..7 {
            f_new[perm[j]] = f_old[j];
        }
    }
    let pgraph = graph.permuted(&perm).unwrap();

    let mut g = Graph::with_params(&store);
    let a = stgcn_forward(&mut g, &net, &clip, &graph).unwrap();
    let b = stgcn_forward(&mut g, &net, &moved, &pgraph).unwrap();
    assert_eq!(g.value(a).shape(), &[9, 5]);
    let diff = g.value(a).max_abs_diff(g.value(b));
    assert!(diff < 1e-12, "max diff {diff}");
}

#[test]
fn spatial_conv_on_two_node_path() {
    // A + I = [[1,1],[1,1]] so each joint receives the mean of both.
    let graph = MotionGraph::new(2, &[(0, 1)], 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut store = ParamStore::new();
    let lin = Linear::new(&mut store, &mut rng, "conv", 2, 1).unwrap();
    store.value_mut(0).data_mut().copy_from_slice(&[2.0, -1.0]);
    store.value_mut(1).data_mut()[0] = 0.5;
    let x = Tensor::from_rows(&[vec![1.0, 3.0], vec![5.0, -1.0]]).unwrap();
    let mut g = Graph::with_params(&store);
    let xv = g.constant(x);
    let a = g.graph_agg(xv, graph.normalized().clone()).unwrap();
    let y = lin.forward(&mut g, a).unwrap();
    // mean row = (3, 1); 2·3 − 1·1 + 0.5 = 5.5 for both joints
    assert_eq!(g.value(y).data(), &[5.5, 5.5]);
}

#[test]
fn encoder_gradients_on_miniature() {
    let cfg = MotionConfig {
        stgcn_channels: vec![3, 4],
        feature_dim: 4,
        kernel: 3,
        beat_layers: 1,
        beat_heads: 2,
        beat_ff: 4,
        style_channels: vec![2],
        style_hidden: 2,
        style_dim: 32,
        genres: 6,
        d_model: 4,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut store = ParamStore::new();
    let enc = MotionEncoder::new(&mut store, &mut rng, &cfg).unwrap();
    for id in 0..store.len() {
        for v in store.value_mut(id).data_mut() {
            *v = rng.gen_range(-0.5..0.5);
        }
    }
    let graph = MotionGraph::new(3, &[(0, 1), (1, 2)], 1).unwrap();
    let clip = random_clip(&mut rng, 2, 3);
    let reports = check_params("encoder", &store, 1e-5, |g| {
        let beat_logits = enc.beat_logits(g, &clip, &graph).map_err(to_tensor)?;
        let beat_loss = enc.beat.loss(g, beat_logits, &[1, 0])?;
        let x = skeleton_input(g, &clip, &graph).map_err(to_tensor)?;
        let (zs, genre) = enc.style.forward(g, x, &graph)?;
        let style_loss = g.cross_entropy(genre, &[3], &[1.0])?;
        let zs_sum = g.sum(zs)?;
        let zs_sum = g.scale(zs_sum, 0.1)?;
        let z = enc.fuse.forward(g, &[1, 0], &[0.25; 32])?;
        let z_sum = g.sum(z)?;
        let l = g.add(beat_loss, style_loss)?;
        let l = g.add(l, zs_sum)?;
        g.add(l, z_sum)
    })
    .unwrap();
    for r in reports {
        assert!(r.passes(1e-5), "{} rel err {:.3e}", r.name, r.max_rel_error);
    }
}

fn to_tensor(e: dance2midi::motion::MotionError) -> dance2midi::tensor::TensorError {
    dance2midi::tensor::TensorError::Shape(e.to_string())
}

#[test]
fn style_argmax_ignores_global_translation() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut store = ParamStore::new();
    let enc = MotionEncoder::new(&mut store, &mut rng, &MotionConfig::desk()).unwrap();
    let graph = MotionGraph::for_joints(7).unwrap();
    let clip = random_clip(&mut rng, 12, 7);
    let mut moved = clip.clone();
    for p in moved.frames.iter_mut().flatten() {
        p[0] += 3.0;
        p[2] -= 1.5;
    }
    let a = enc.condition(&store, &clip, &graph, None).unwrap();
    let b = enc.condition(&store, &moved, &graph, None).unwrap();
    let argmax = |v: &[f64]| (0..v.len()).max_by(|&i, &j| v[i].total_cmp(&v[j])).unwrap();
    assert_eq!(argmax(&a.genre_logits), argmax(&b.genre_logits));
    let frozen = enc.condition(&store, &clip, &graph, None).unwrap();
    assert_eq!(a.style, frozen.style);
}
