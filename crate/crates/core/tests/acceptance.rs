//! Acceptance run. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails. Criteria 6 and 7 train models and take a few
//! minutes.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use graphite::graph::{edge_weight, Radius};
use graphite::model::{OutputGrads, ScoreTap};
use graphite::nn::gradcheck::{central_difference, relative_error};
use graphite::nn::ops::{
    fc_backward, fc_forward, l2_normalize, l2_normalize_backward, scatter_max, scatter_max_backward,
    tag_conv_backward, tag_conv_forward,
};
use graphite::nn::{mse_loss, triplet_ratio_loss, Activation, DenseParams, Reduction, TagConvParams, Tensor};
use graphite::patching::{extract_patches, PatchSeeds, SCENE_PATCH_SIZE};
use graphite::pointcloud::PointCloud;
use graphite::registration::{
    kabsch, pose_errors, ransac_pose, register_clouds, registration_recall, Match, RansacConfig, RegisterConfig,
};
use graphite::synthgen::{generate_instance, generate_pose_pair, ComposedScene, CornerDatasetConfig, PosePairConfig, SceneConfig};
use graphite::training::{
    corner_triplets, keypoint_accuracy, pose_triplets, split_holdout, triplet_accuracy, Stage, TrainConfig, Trainer,
    TrainingData, WarpMap,
};
use graphite::{GraphiteModel, ModelConfig, PatchGraph, RigidPose};
use nalgebra::Vector3;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

type Outcome = graphite::Result<(bool, String)>;

fn report(id: usize, name: &str, outcome: Outcome) -> bool {
    let (pass, detail) = outcome.unwrap_or_else(|e| (false, format!("error: {e}")));
    println!("{} {id:>2} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    pass
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn random_nodes(rng: &mut ChaCha8Rng, n: usize) -> Vec<[f64; 6]> {
    (0..n)
        .map(|_| {
            let nv = Vector3::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), 1.0).normalize();
            [
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-0.3..0.3),
                nv.x,
                nv.y,
                nv.z,
            ]
        })
        .collect()
}

fn weighted_sum(t: &Tensor, w: &Tensor) -> f64 {
    t.data().iter().zip(w.data()).map(|(a, b)| a * b).sum()
}

/// Largest relative error between `analytic` and central differences of
/// `loss` over every coordinate of `x`.
fn max_error(x: &Tensor, analytic: &Tensor, loss: impl Fn(&Tensor) -> f64) -> f64 {
    (0..x.len())
        .map(|i| {
            let num = central_difference(|h| {
                let mut y = x.clone();
                y.data_mut()[i] += h;
                loss(&y)
            });
            relative_error(analytic.data()[i], num)
        })
        .fold(0.0, f64::max)
}

// 1. finite-difference gradients

fn per_op_checks() -> Vec<(&'static str, f64)> {
    const N: u64 = 100;
    let mut worst = Vec::new();
    let mut track = |name: &'static str, errs: Vec<f64>| worst.push((name, errs.into_iter().fold(0.0, f64::max)));

    track(
        "tag_conv",
        (0..N)
            .into_par_iter()
            .map(|s| {
                let mut r = rng(s);
                let n = r.random_range(2..12);
                let (din, dout, hops) = (r.random_range(1..6), r.random_range(1..5), r.random_range(0..4));
                let graph = PatchGraph::build(random_nodes(&mut r, n), Radius::Relative(2.5)).unwrap();
                let prop = graph.propagation();
                let mut params = TagConvParams::new(&mut r, din, dout, hops);
                params.bias = random_tensor(&mut r, 1, dout);
                let x = random_tensor(&mut r, n, din);
                let w = random_tensor(&mut r, n, dout);
                let (_, cache) = tag_conv_forward(&params, &x, &prop).unwrap();
                let (dx, dp) = tag_conv_backward(&params, &prop, &cache, &w);
                let mut e = max_error(&x, &dx, |x| weighted_sum(&tag_conv_forward(&params, x, &prop).unwrap().0, &w));
                for k in 0..=hops {
                    e = e.max(max_error(&params.theta[k], &dp.theta[k], |t| {
                        let mut p = params.clone();
                        p.theta[k] = t.clone();
                        weighted_sum(&tag_conv_forward(&p, &x, &prop).unwrap().0, &w)
                    }));
                }
                e.max(max_error(&params.bias, &dp.bias, |b| {
                    let mut p = params.clone();
                    p.bias = b.clone();
                    weighted_sum(&tag_conv_forward(&p, &x, &prop).unwrap().0, &w)
                }))
            })
            .collect(),
    );

    track(
        "fc",
        (0..N)
            .map(|s| {
                let mut r = rng(1000 + s);
                let (din, dout) = (r.random_range(1..10), r.random_range(1..10));
                let params = DenseParams {
                    weight: random_tensor(&mut r, din, dout),
                    bias: random_tensor(&mut r, 1, dout),
                };
                let x = random_tensor(&mut r, 1, din);
                let w = random_tensor(&mut r, 1, dout);
                let (dx, dp) = fc_backward(&params, &x, &w);
                let f = |p: &DenseParams, x: &Tensor| weighted_sum(&fc_forward(p, x).unwrap(), &w);
                max_error(&x, &dx, |x| f(&params, x))
                    .max(max_error(&params.weight, &dp.weight, |t| {
                        f(&DenseParams { weight: t.clone(), bias: params.bias.clone() }, &x)
                    }))
                    .max(max_error(&params.bias, &dp.bias, |t| {
                        f(&DenseParams { weight: params.weight.clone(), bias: t.clone() }, &x)
                    }))
            })
            .collect(),
    );

    for (name, act) in [
        ("relu", Activation::Relu),
        ("tanh", Activation::Tanh),
        ("sigmoid", Activation::Sigmoid),
        ("identity", Activation::Identity),
    ] {
        track(
            name,
            (0..N)
                .map(|s| {
                    let mut r = rng(2000 + s);
                    // keep inputs off the ReLU kink
                    let x = random_tensor(&mut r, 4, 5).map(|v| if v.abs() < 1e-3 { 0.5 } else { v });
                    let w = random_tensor(&mut r, 4, 5);
                    let dx = act.backward(&act.forward(&x), &w);
                    max_error(&x, &dx, |x| weighted_sum(&act.forward(x), &w))
                })
                .collect(),
        );
    }

    track(
        "scatter_max",
        (0..N)
            .map(|s| {
                let mut r = rng(3000 + s);
                let rows = r.random_range(1..12);
                let x = random_tensor(&mut r, rows, 6);
                let w = random_tensor(&mut r, 1, 6);
                let (_, arg) = scatter_max(&x);
                let dx = scatter_max_backward(&arg, x.rows(), &w);
                max_error(&x, &dx, |x| weighted_sum(&scatter_max(x).0, &w))
            })
            .collect(),
    );

    track(
        "l2_normalize",
        (0..N)
            .map(|s| {
                let mut r = rng(4000 + s);
                let x = random_tensor(&mut r, 1, 32);
                let w = random_tensor(&mut r, 1, 32);
                let (out, div) = l2_normalize(&x);
                let dx = l2_normalize_backward(&out, div, &w);
                max_error(&x, &dx, |x| weighted_sum(&l2_normalize(x).0, &w))
            })
            .collect(),
    );

    track(
        "mse",
        (0..N)
            .map(|s| {
                let mut r = rng(5000 + s);
                let n = r.random_range(1..20);
                let x = random_tensor(&mut r, 1, n);
                let t = random_tensor(&mut r, 1, n);
                let mask: Vec<bool> = (0..n).map(|_| r.random_bool(0.7)).collect();
                let red = if s % 2 == 0 { Reduction::Mean } else { Reduction::Sum };
                let m = (s % 3 != 0).then_some(mask.as_slice());
                let (_, g) = mse_loss(&x, &t, m, red);
                max_error(&x, &g, |x| mse_loss(x, &t, m, red).0)
            })
            .collect(),
    );

    track(
        "triplet_ratio",
        (0..N)
            .map(|s| {
                let mut r = rng(6000 + s);
                let (a, p, n) = (random_tensor(&mut r, 1, 32), random_tensor(&mut r, 1, 32), random_tensor(&mut r, 1, 32));
                let m = r.random_range(0.5..2.0);
                let l = triplet_ratio_loss(&a, &p, &n, m);
                max_error(&a, &l.grad_anchor, |a| triplet_ratio_loss(a, &p, &n, m).value)
                    .max(max_error(&p, &l.grad_positive, |p| triplet_ratio_loss(&a, p, &n, m).value))
                    .max(max_error(&n, &l.grad_negative, |n| triplet_ratio_loss(&a, &p, n, m).value))
            })
            .collect(),
    );

    track(
        "warp",
        (0..N)
            .map(|s| {
                let mut r = rng(7000 + s);
                let src: Vec<Vector3<f64>> = (0..r.random_range(4..20))
                    .map(|_| Vector3::new(r.random(), r.random(), r.random()))
                    .collect();
                let q = PointCloud::from_positions((0..r.random_range(4..20)).map(|_| Vector3::new(r.random(), r.random(), r.random())));
                let map = WarpMap::build(&src, &q, &RigidPose::identity(), 3, f64::INFINITY).unwrap();
                let v = random_tensor(&mut r, 1, src.len());
                let w = random_tensor(&mut r, 1, map.len());
                let g = Tensor::row_vector(map.backward(w.data(), src.len()));
                max_error(&v, &g, |v| map.apply(v.data()).iter().zip(w.data()).map(|(a, b)| a * b).sum())
            })
            .collect(),
    );
    worst
}

/// Returns the worst relative error and the number of parameters checked.
fn end_to_end_check(seed: u64) -> (f64, usize) {
    let mut r = rng(10_000 + seed);
    let config = ModelConfig {
        hidden_activation: if seed.is_multiple_of(2) { Activation::Relu } else { Activation::Tanh },
        descriptor_fc_layers: 1 + seed.is_multiple_of(3) as usize,
        score_tap: if seed.is_multiple_of(5) { ScoreTap::Pre } else { ScoreTap::Post },
        ..ModelConfig::default()
    };
    let model = GraphiteModel::new(config, seed).unwrap();
    let n = r.random_range(8..16);
    let graph = PatchGraph::build(random_nodes(&mut r, n), Radius::Relative(2.5)).unwrap();
    let (x, prop) = (graph.feature_tensor(), graph.propagation());
    let wv: Vec<f64> = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
    let wd: Vec<f64> = (0..32).map(|_| r.random_range(-1.0..1.0)).collect();
    let ws: f64 = r.random_range(-1.0..1.0);
    let eval = |m: &GraphiteModel| {
        let (o, t) = m.forward_features(&x, &prop).unwrap();
        let l = o.values.iter().zip(&wv).map(|(a, b)| a * b).sum::<f64>()
            + o.descriptor.iter().zip(&wd).map(|(a, b)| a * b).sum::<f64>()
            + ws * o.score;
        (l, t.kink_signature())
    };
    let (_, trace) = model.forward_features(&x, &prop).unwrap();
    let kinks = trace.kink_signature();
    let grads = model
        .backward(&trace, &OutputGrads { values: Some(&wv), descriptor: Some(&wd), score: Some(ws) })
        .unwrap();
    let analytic: Vec<f64> = grads.tensors().iter().flat_map(|t| t.data().to_vec()).collect();
    let shifted = |idx: usize, h: f64| {
        let mut m = model.clone();
        let mut k = idx;
        for t in m.params.tensors_mut() {
            if k < t.len() {
                t.data_mut()[k] += h;
                break;
            }
            k -= t.len();
        }
        eval(&m)
    };
    let (mut worst, mut checked) = (0.0f64, 0);
    for _ in 0..40 {
        let idx = r.random_range(0..analytic.len());
        // skip parameters whose perturbation crosses a ReLU or max-pool switch
        if shifted(idx, 1e-5).1 != kinks || shifted(idx, -1e-5).1 != kinks {
            continue;
        }
        let num = central_difference(|h| shifted(idx, h).0);
        worst = worst.max(relative_error(analytic[idx], num));
        checked += 1;
    }
    (worst, checked)
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let ops = per_op_checks();
    let e2e: Vec<(f64, usize)> = (0..100u64).into_par_iter().map(end_to_end_check).collect();
    let e2e_worst = e2e.iter().map(|e| e.0).fold(0.0, f64::max);
    let e2e_checked: usize = e2e.iter().map(|e| e.1).sum();
    let op_worst = ops.iter().map(|o| o.1).fold(0.0, f64::max);
    let secs = start.elapsed().as_secs_f64();
    let detail = ops.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect::<Vec<_>>().join(", ");
    Ok((
        op_worst < 1e-4 && e2e_worst < 1e-3 && e2e.iter().all(|e| e.1 > 0) && secs < 60.0,
        format!(
            "per-op worst rel err over 100 instances each: {detail}; network worst {e2e_worst:.1e} over 100 instances ({e2e_checked} params); {secs:.1}s"
        ),
    ))
}

// 2. graph weight and convolution oracles

fn criterion_2() -> Outcome {
    let mut r = rng(20);
    let mut weight_mismatch = 0usize;
    let mut radius_err = 0.0f64;
    let mut conv_err = 0.0f64;
    for _ in 0..50 {
        let n = r.random_range(2..=10);
        let nodes = random_nodes(&mut r, n);
        let dist = |a: &[f64; 6], b: &[f64; 6]| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt();
        // radius: multiplier times the mean distance to the nearest distinct node
        let nn: Vec<f64> = nodes
            .iter()
            .map(|a| nodes.iter().map(|b| dist(a, b)).filter(|&d| d > 0.0).fold(f64::INFINITY, f64::min))
            .collect();
        let rho = r.random_range(2.0..5.0);
        let expected_r = rho * nn.iter().sum::<f64>() / n as f64;
        let graph = PatchGraph::build(nodes.clone(), Radius::Relative(rho)).unwrap();
        let rad = graph.radius_used();
        radius_err = radius_err.max((rad - expected_r).abs() / expected_r);
        for j in 0..n {
            for k in 0..n {
                let d = dist(&nodes[j], &nodes[k]);
                let w = if j != k && d < rad { rad / (rad + d) } else { 0.0 };
                if graph.weight(j, k) != w || (j != k && edge_weight(rad, d) != w) {
                    weight_mismatch += 1;
                }
            }
        }

        // dense Σ_k M^k X Θ_k + b against the sparse layer
        let a = graph.adjacency_dense();
        let deg: Vec<f64> = a.iter().map(|row| row.iter().sum::<f64>().max(1e-8)).collect();
        let m: Vec<Vec<f64>> = (0..n)
            .map(|j| (0..n).map(|k| a[j][k] / (deg[j].sqrt() * deg[k].sqrt())).collect())
            .collect();
        let (din, dout, hops) = (r.random_range(1..7), r.random_range(1..6), r.random_range(0..4));
        let mut params = TagConvParams::new(&mut r, din, dout, hops);
        params.bias = random_tensor(&mut r, 1, dout);
        let x = random_tensor(&mut r, n, din);
        let (out, _) = tag_conv_forward(&params, &x, &graph.propagation()).unwrap();
        let mut power: Vec<Vec<f64>> = (0..n).map(|i| x.row(i).to_vec()).collect();
        let mut dense = vec![vec![0.0; dout]; n];
        for (k, theta) in params.theta.iter().enumerate() {
            if k > 0 {
                power = (0..n)
                    .map(|i| (0..din).map(|c| (0..n).map(|l| m[i][l] * power[l][c]).sum()).collect())
                    .collect();
            }
            for i in 0..n {
                for o in 0..dout {
                    dense[i][o] += (0..din).map(|c| power[i][c] * theta.get(c, o)).sum::<f64>();
                }
            }
        }
        for i in 0..n {
            for o in 0..dout {
                conv_err = conv_err.max((dense[i][o] + params.bias.get(0, o) - out.get(i, o)).abs());
            }
        }
    }
    Ok((
        weight_mismatch == 0 && radius_err < 1e-12 && conv_err < 1e-10,
        format!("50 graphs: {weight_mismatch} weight mismatches, radius rel err {radius_err:.1e}, conv max abs err {conv_err:.1e}"),
    ))
}

// 3. permutation invariance

fn criterion_3() -> Outcome {
    let model = GraphiteModel::init(3);
    let mut patches = Vec::new();
    for s in 0..4u64 {
        let pair = generate_pose_pair(30 + s, &PosePairConfig::default())?;
        patches.extend(extract_patches(&pair.p, 64, &PatchSeeds::Random { count: 25, seed: s })?);
    }
    let mut r = rng(31);
    let mut failures = 0;
    for patch in &patches {
        let mut order: Vec<usize> = (0..patch.len()).collect();
        order.shuffle(&mut r);
        let a = model.forward(&model.graph(patch)?)?;
        let b = model.forward(&model.graph(&patch.permuted(&order))?)?;
        let values_ok = order.iter().enumerate().all(|(new, &old)| b.values[new] == a.values[old]);
        if a.descriptor != b.descriptor || a.score != b.score || !values_ok {
            failures += 1;
        }
    }
    Ok((failures == 0, format!("{} patches, {failures} with any bit difference", patches.len())))
}

// 4. Kabsch

fn criterion_4() -> Outcome {
    let mut r = rng(40);
    let (mut rot, mut trans) = (0.0f64, 0.0f64);
    for _ in 0..1000 {
        let pose = RigidPose::random(&mut r, std::f64::consts::PI, 1.0);
        let n = r.random_range(3..50);
        let src: Vec<Vector3<f64>> = (0..n)
            .map(|_| Vector3::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)))
            .collect();
        let dst: Vec<_> = src.iter().map(|p| pose.apply(p)).collect();
        let est = kabsch(&src, &dst)?;
        rot = rot.max(est.rotation_error_deg(&pose));
        trans = trans.max(est.translation_error(&pose));
    }
    Ok((
        rot < 1e-6 && trans < 1e-9,
        format!("1000 poses: max rotation err {rot:.1e} deg, max translation err {trans:.1e} m"),
    ))
}

// 5. RANSAC

fn criterion_5() -> Outcome {
    let cfg = RansacConfig {
        iterations: 1000,
        ..RansacConfig::default()
    };
    let noise = Normal::new(0.0, 0.003).unwrap();
    let mut ok = 0;
    for t in 0..100u64 {
        let mut r = rng(500 + t);
        let pose = RigidPose::random(&mut r, std::f64::consts::PI, 1.0);
        let n = 100;
        let point = |r: &mut ChaCha8Rng| Vector3::new(r.random_range(-0.5..0.5), r.random_range(-0.5..0.5), r.random_range(-0.5..0.5));
        let kp: Vec<_> = (0..n).map(|_| point(&mut r)).collect();
        let kq: Vec<_> = kp
            .iter()
            .enumerate()
            .map(|(i, p)| {
                if i < 30 {
                    pose.apply(p) + Vector3::from_fn(|_, _| noise.sample(&mut r))
                } else {
                    pose.apply(&point(&mut r))
                }
            })
            .collect();
        let mut matches: Vec<Match> = (0..n).map(|i| Match { index_p: i, index_q: i, distance: 0.0 }).collect();
        matches.shuffle(&mut r);
        let est = ransac_pose(&matches, &kp, &kq, &cfg)?.pose;
        if est.rotation_error_deg(&pose) < 2.0 && est.translation_error(&pose) < 0.02 {
            ok += 1;
        }
    }
    Ok((ok >= 95, format!("70% outliers, 1000 iterations: {ok}/100 trials within 2 deg and 2 cm")))
}

// 6. stage-1 training

fn criterion_6() -> graphite::Result<((bool, String), GraphiteModel)> {
    let start = Instant::now();
    let (pairs, seed) = (2000, 1);
    let model_cfg = ModelConfig::default();
    let samples = (0..pairs)
        .into_par_iter()
        .map(|id| generate_instance(id, pairs, seed, &CornerDatasetConfig::default())?.sample())
        .collect::<graphite::Result<Vec<_>>>()?;
    let triplets = corner_triplets(&model_cfg, &samples)?;
    let (train_idx, test_idx) = split_holdout(triplets.len(), 0.1, seed);
    let train = TrainingData::Corners(train_idx.iter().map(|&i| triplets[i].clone()).collect());
    let test: Vec<_> = test_idx.iter().map(|&i| triplets[i].clone()).collect();
    let config = TrainConfig {
        seed,
        epochs: Some(30),
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(GraphiteModel::new(model_cfg, seed)?, config)?;
    for _ in 0..30 {
        trainer.run_epoch(&train)?;
    }
    let kp = keypoint_accuracy(&trainer.model, &test)?;
    let trip = triplet_accuracy(&trainer.model, &test)?;
    let secs = start.elapsed().as_secs_f64();
    Ok((
        (
            kp >= 0.85 && trip >= 0.90 && secs <= 1800.0,
            format!(
                "2000 pairs, 30 epochs, {} held out: keypoint acc {kp:.3}, triplet acc {trip:.3}, {secs:.0}s",
                test.len()
            ),
        ),
        trainer.model,
    ))
}

// 7. end-to-end registration

fn stage2(model: GraphiteModel) -> graphite::Result<GraphiteModel> {
    let train_cfg = PosePairConfig {
        noise_sigma: 0.01,
        ..PosePairConfig::default()
    };
    let pairs = (0..200u64)
        .into_par_iter()
        .map(|i| generate_pose_pair(1_000_000 + i, &train_cfg))
        .collect::<graphite::Result<Vec<_>>>()?;
    let config = TrainConfig {
        epochs: Some(10),
        ..TrainConfig::for_stage(Stage::Pose)
    };
    let (samples, skipped) = pose_triplets(&model.config, &pairs, &config)?;
    let data = TrainingData::Poses { samples, skipped };
    let mut trainer = Trainer::new(model, config)?;
    for _ in 0..10 {
        trainer.run_epoch(&data)?;
    }
    Ok(trainer.model)
}

struct RegistrationRun {
    raw_mae: f64,
    icp_mae: f64,
    icp_not_worse: usize,
    registered: usize,
    recall: f64,
}

fn registration_run(model: &GraphiteModel, sigma: f64) -> graphite::Result<RegistrationRun> {
    let test_cfg = PosePairConfig {
        noise_sigma: sigma,
        ..PosePairConfig::default()
    };
    let cfg = RegisterConfig::objects();
    let (mut raw, mut icp) = (Vec::new(), Vec::new());
    let (mut not_worse, mut estimates, mut sets) = (0, Vec::new(), Vec::new());
    for i in 0..50u64 {
        let pair = generate_pose_pair(i, &test_cfg)?;
        let Ok(reg) = register_clouds(model, &pair.p, &pair.q, &cfg) else {
            continue;
        };
        let (a, b) = (pose_errors(&reg.result.pose, &pair.pose), pose_errors(reg.result.final_pose(), &pair.pose));
        if b.rot_mae <= a.rot_mae {
            not_worse += 1;
        }
        raw.push((reg.result.pose, pair.pose));
        icp.push((*reg.result.final_pose(), pair.pose));
        estimates.push(*reg.result.final_pose());
        sets.push(pair.correspondences.iter().map(|&(p, q)| (*pair.p.position(p), *pair.q.position(q))).collect());
    }
    let mae = |v: &[(RigidPose, RigidPose)]| graphite::registration::aggregate_errors(v).map(|e| e.rot_mae);
    Ok(RegistrationRun {
        raw_mae: mae(&raw)?,
        icp_mae: mae(&icp)?,
        icp_not_worse: not_worse,
        registered: raw.len(),
        recall: registration_recall(&estimates, &sets, 0.02, 0.5)?,
    })
}

fn criterion_7(stage1: GraphiteModel) -> Outcome {
    let start = Instant::now();
    let model = stage2(stage1)?;
    let clean = registration_run(&model, 0.0)?;
    let noisy = registration_run(&model, 0.01)?;
    let line = |name: &str, r: &RegistrationRun| {
        format!(
            "{name}: {} of 50 registered, rot MAE {:.3} deg, +ICP {:.3} deg, ICP not worse on {}/50, recall@2cm {:.2}",
            r.registered, r.raw_mae, r.icp_mae, r.icp_not_worse, r.recall
        )
    };
    let helps = |r: &RegistrationRun| r.raw_mae >= 3.0 * r.icp_mae;
    let pass = [&clean, &noisy].iter().all(|r| r.registered == 50 && r.raw_mae < 5.0 && r.icp_not_worse >= 45 && helps(r))
        && clean.icp_mae < 1.0;
    Ok((
        pass,
        format!(
            "{}; {}; {:.0}s incl. 10 stage-2 epochs",
            line("sigma 0", &clean),
            line("sigma 1cm", &noisy),
            start.elapsed().as_secs_f64()
        ),
    ))
}

// 8. throughput

fn criterion_8() -> Outcome {
    let model = GraphiteModel::init(8);
    let mut r = rng(80);
    let scene = ComposedScene::random(&mut r, &SceneConfig::default());
    let cloud = scene.sample(20_000, &mut r);
    let patches = extract_patches(&cloud, SCENE_PATCH_SIZE, &PatchSeeds::Random { count: 100, seed: 8 })?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().expect("pool");
    let mut best = f64::INFINITY;
    for _ in 0..3 {
        let start = Instant::now();
        pool.install(|| patches.iter().map(|p| model.describe_patch(p)).collect::<graphite::Result<Vec<_>>>())?;
        best = best.min(start.elapsed().as_secs_f64() * 1e3);
    }
    Ok((best <= 250.0, format!("100 patches of n = 225, one thread: {best:.1} ms (best of 3)")))
}

// 9. metric fixtures

fn criterion_9() -> Outcome {
    let id = RigidPose::identity();
    let zero = pose_errors(&id, &id);
    let zero_ok = [zero.rot_mse, zero.rot_rmse, zero.rot_mae, zero.trans_mse, zero.trans_rmse, zero.trans_mae]
        .iter()
        .all(|&v| v == 0.0);
    let tilt = RigidPose::from_axis_angle(Vector3::z(), 2f64.to_radians(), Vector3::zeros());
    let e = pose_errors(&tilt, &id);
    let close = |a: f64, b: f64| (a - b).abs() < 1e-12;
    let tilt_ok = close(e.rot_mae, 2.0 / 3.0) && close(e.rot_mse, 4.0 / 3.0) && close(e.rot_rmse, (4.0f64 / 3.0).sqrt()) && e.trans_mae == 0.0;
    let c = |x: f64| (Vector3::new(x, 0.0, 0.0), Vector3::new(x, 0.0, 0.0));
    let near = vec![c(0.0), c(1.0)];
    let far = vec![(Vector3::zeros(), Vector3::new(1.0, 0.0, 0.0))];
    let poses = [id, id, id];
    let recall = registration_recall(&poses, &[near.clone(), far, near], 0.1, 0.5)?;
    Ok((
        zero_ok && tilt_ok && recall == 2.0 / 3.0,
        format!(
            "identity errors all zero: {zero_ok}; 2 deg about z: mae {:.15}, mse {:.15}; recall fixture {recall:.15}",
            e.rot_mae, e.rot_mse
        ),
    ))
}

// 10. determinism

fn pipeline_once(dir: &Path, threads: &str) -> graphite::Result<(Vec<u8>, String)> {
    let bin = env!("CARGO_BIN_EXE_graphite");
    let run = |args: &[&str]| -> graphite::Result<String> {
        let out = Command::new(bin)
            .args(["--threads", threads])
            .args(args)
            .current_dir(dir)
            .output()
            .map_err(|e| graphite::Error::InvalidInput(format!("cannot run graphite: {e}")))?;
        if !out.status.success() {
            return Err(graphite::Error::InvalidInput(format!(
                "graphite {args:?} failed: {}",
                String::from_utf8_lossy(&out.stderr)
            )));
        }
        Ok(String::from_utf8_lossy(&out.stdout).into_owned())
    };
    run(&["synthgen", "corners", "--count", "60", "--seed", "4"])?;
    run(&["train", "corners", "--out", "model.ckpt", "--epochs", "1", "--seed", "4"])?;
    run(&["synthgen", "pairs", "--kind", "pose-pairs", "--count", "1", "--seed", "4"])?;
    let pose = run(&[
        "register",
        "model.ckpt",
        "pairs/pair_000000/cloud_p.xyz",
        "pairs/pair_000000/cloud_q.xyz",
        "-n",
        "64",
        "--num-patches",
        "100",
        "--score-threshold",
        "0",
        "--icp",
    ])?;
    let ckpt = std::fs::read(dir.join("model.ckpt")).map_err(|e| graphite::Error::InvalidInput(e.to_string()))?;
    Ok((ckpt, pose))
}

fn criterion_10() -> Outcome {
    let a = tempfile::tempdir().expect("tempdir");
    let b = tempfile::tempdir().expect("tempdir");
    let (ca, pa) = pipeline_once(a.path(), "1")?;
    let (cb, pb) = pipeline_once(b.path(), "4")?;
    Ok((
        ca == cb && pa == pb,
        format!(
            "synthgen -> train 1 epoch -> register, run on 1 and 4 threads: checkpoints identical {}, pose output identical {}",
            ca == cb,
            pa == pb
        ),
    ))
}

fn main() {
    let start = Instant::now();
    let mut pass = Vec::new();
    pass.push(report(1, "gradient correctness", criterion_1()));
    pass.push(report(2, "graph weight and convolution oracles", criterion_2()));
    pass.push(report(3, "permutation invariance", criterion_3()));
    pass.push(report(4, "Kabsch exact recovery", criterion_4()));
    pass.push(report(5, "RANSAC robustness", criterion_5()));
    let stage1 = match criterion_6() {
        Ok((outcome, model)) => {
            pass.push(report(6, "stage-1 training", Ok(outcome)));
            Some(model)
        }
        Err(e) => {
            pass.push(report(6, "stage-1 training", Err(e)));
            None
        }
    };
    pass.push(match stage1 {
        Some(model) => report(7, "end-to-end synthetic registration", criterion_7(model)),
        None => report(7, "end-to-end synthetic registration", Ok((false, "no stage-1 model".into()))),
    });
    pass.push(report(8, "throughput budget", criterion_8()));
    pass.push(report(9, "metric definitions", criterion_9()));
    pass.push(report(10, "determinism", criterion_10()));
    let failed = pass.iter().filter(|p| !**p).count();
    println!("{} of {} criteria passed ({:.0}s)", pass.len() - failed, pass.len(), start.elapsed().as_secs_f64());
    if failed > 0 {
        std::process::exit(1);
    }
}
