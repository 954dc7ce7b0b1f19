//! Acceptance gate: one PASS/FAIL line per criterion.
//!
//! Criteria 1 to 8 are exact or statistical properties and fail the test when
//! red. Criteria 9 and 10 are measured training outcomes on the desk-scale
//! task; their lines are printed verbatim and recorded, but a red result there
//! is a finding about the regularizer at this scale rather than a defect, so
//! it does not abort the suite.
//!
//! Built without the libtest harness so the report is never captured:
//! `cargo test --release --test acceptance`.

mod common;

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::process::Command;
use std::time::{Duration, Instant};

use pointdrop::geometry::{brute_force_knn, build_knn_index, knn_query, generate_shape, Point, PointCloud, ShapeKind};
use pointdrop::masks::*;
use pointdrop::net::{Params, Sample};
use pointdrop::rng;
use pointdrop::train::*;
use rand::Rng;

struct Verdict {
    id: u32,
    pass: bool,
    detail: String,
    gating: bool,
}

fn line(v: &Verdict) -> String {
    format!("criterion {:>2}: {} | {}", v.id, if v.pass { "PASS" } else { "FAIL" }, v.detail)
}

fn random_cloud(n: usize, seed: u64) -> Vec<Point<f64>> {
    let mut r = rng::stream(seed);
    (0..n).map(|_| [r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)]).collect()
}

/// Clouds with many exactly tied distances: integer lattice points, some
/// repeated verbatim.
fn tie_cloud(n: usize, seed: u64) -> Vec<Point<f64>> {
    let mut r = rng::stream(seed);
    let mut pts: Vec<Point<f64>> = (0..n)
        .map(|_| [r.random_range(-2..=2) as f64, r.random_range(-2..=2) as f64, r.random_range(-1..=1) as f64])
        .collect();
    for i in (1..n).step_by(7) {
        pts[i] = pts[i - 1];
    }
    pts
}

fn mask_statistics() -> Verdict {
    let start = Instant::now();
    let trials = 1000u64;
    let mut worst = u64::MAX;
    let mut detail = String::new();
    for theta in [0.1, 0.3, 0.5] {
        let within = |units: usize, dropped: usize| {
            let sd = (units as f64 * theta * (1.0 - theta)).sqrt();
            (dropped as f64 - units as f64 * theta).abs() <= 3.0 * sd
        };
        let feat = (0..trials)
            .filter(|&s| {
                let m = dropfeat_mask(100, 100, theta, s).unwrap();
                within(10_000, m.dropped_count())
            })
            .count() as u64;
        let point = (0..trials)
            .filter(|&s| {
                let m = droppoint_mask(10_000, theta, s).unwrap();
                within(10_000, m.len() - m.kept_count())
            })
            .count() as u64;
        worst = worst.min(feat).min(point);
        let _ = write!(detail, "theta {theta}: feat {feat}/1000, point {point}/1000; ");
    }
    let elapsed = start.elapsed();
    Verdict {
        id: 1,
        pass: worst >= 995 && elapsed < Duration::from_secs(10),
        detail: format!("{detail}{:.2}s", elapsed.as_secs_f64()),
        gating: true,
    }
}

fn gamma_one_degeneration() -> Verdict {
    let mut equal = 0;
    let mut total = 0;
    for theta in [0.1, 0.3, 0.5] {
        for seed in 0..100u64 {
            let n = 64 + (seed as usize * 37) % 449;
            let index = build_knn_index(&random_cloud(n, 7000 + seed)).unwrap();
            let cluster = dropcluster_mask(&index, theta, 1, seed).unwrap();
            let point = droppoint_mask(n, theta, seed).unwrap();
            total += 1;
            equal += usize::from(cluster.same_pattern(&point));
        }
    }
    Verdict {
        id: 2,
        pass: equal == total,
        detail: format!("{equal}/{total} masks bitwise equal"),
        gating: true,
    }
}

fn cluster_correctness() -> Verdict {
    let mut exact = 0;
    let mut draws_ok = 0;
    let mut dropped_total = 0;
    for c in 0..50u64 {
        let mut r = rng::stream(8000 + c);
        let n = r.random_range(2..=512);
        let theta = [0.1, 0.2, 0.3, 0.5][c as usize % 4];
        let gamma = r.random_range(1..=40);
        let pts = if c % 5 == 0 { tie_cloud(n, c) } else { random_cloud(n, 9000 + c) };
        let index = build_knn_index(&pts).unwrap();
        let m = dropcluster_mask(&index, theta, gamma, c).unwrap();
        let centroids = m.centroids.clone().unwrap();
        let mut expected = vec![true; n];
        for &j in &centroids {
            expected[j] = false;
            for i in brute_force_knn(&pts, j, (gamma - 1).min(n - 1)).unwrap() {
                expected[i] = false;
            }
        }
        exact += usize::from(m.keep() == expected.as_slice());
        // Centroids are the points whose uniform draw from the mask seed falls
        // under theta / gamma.
        let mut u = rng::stream(c);
        let drawn: Vec<usize> = (0..n).filter(|_| u.random::<f64>() < theta / gamma as f64).collect();
        draws_ok += usize::from(drawn == centroids);
        dropped_total += n - m.kept_count();
    }
    Verdict {
        id: 3,
        pass: exact == 50 && draws_ok == 50 && dropped_total > 0,
        detail: format!("{exact}/50 masks equal the brute-force reconstruction, {draws_ok}/50 centroid draws match, {dropped_total} points dropped in total"),
        gating: true,
    }
}

fn coordinate_only_masking() -> Verdict {
    let mut unchanged = 0;
    let mut feature_knn_differs = 0;
    for t in 0..100u64 {
        let coords = random_cloud(200, 10_000 + t);
        let mut r = rng::stream(11_000 + t);
        let d = 4;
        let feats = pointdrop::matrix::Matrix::from_vec(200, d, (0..200 * d).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap();
        let cloud = PointCloud::new(coords.clone(), Some(feats.clone()), 0).unwrap();
        let mut perturbed_feats = feats.clone();
        perturbed_feats.as_mut_slice().iter_mut().for_each(|x| *x = -3.0 * *x + r.random_range(-1.0..1.0));
        let perturbed = PointCloud::new(coords, Some(perturbed_feats.clone()), 0).unwrap();
        let (theta, gamma) = (0.2, 8);
        let a = Sample::new(cloud, gamma - 1).unwrap();
        let b = Sample::new(perturbed, gamma - 1).unwrap();
        let ma = dropcluster_mask(&a.table, theta, gamma, t).unwrap();
        let mb = dropcluster_mask(&b.table, theta, gamma, t).unwrap();
        unchanged += usize::from(ma.same_pattern(&mb) && ma.centroids == mb.centroids);
        // Teeth: clustering in feature space instead would see the change.
        let feature_points = |m: &pointdrop::matrix::Matrix<f64>| -> Vec<Point<f64>> {
            (0..200).map(|i| [m[(i, 0)], m[(i, 1)], m[(i, 2)]]).collect()
        };
        let fa = dropcluster_mask_from_coords(&feature_points(&feats), theta, gamma, t).unwrap();
        let fb = dropcluster_mask_from_coords(&feature_points(&perturbed_feats), theta, gamma, t).unwrap();
        feature_knn_differs += usize::from(!fa.same_pattern(&fb));
    }
    Verdict {
        id: 4,
        pass: unchanged == 100 && feature_knn_differs >= 90,
        detail: format!("{unchanged}/100 masks unchanged under feature perturbation; a feature-space clustering would have changed in {feature_knn_differs}/100"),
        gating: true,
    }
}

fn knn_oracle_equivalence() -> Verdict {
    let mut equal = 0;
    let cases = 200;
    for c in 0..cases as u64 {
        let mut r = rng::stream(12_000 + c);
        let n = r.random_range(1..=300);
        let pts = match c % 4 {
            0 => tie_cloud(n, c),
            1 => vec![[0.5, -0.25, 1.0]; n],
            _ => random_cloud(n, 13_000 + c),
        };
        let index = build_knn_index(&pts).unwrap();
        let q = r.random_range(0..n);
        let k = if c % 10 == 0 { n - 1 } else { r.random_range(0..n) };
        equal += usize::from(knn_query(&index, q, k).unwrap() == brute_force_knn(&pts, q, k).unwrap());
    }
    Verdict {
        id: 5,
        pass: equal == cases,
        detail: format!("{equal}/{cases} queries identical (lattice ties, duplicates, random clouds)"),
        gating: true,
    }
}

fn gradient_correctness() -> Verdict {
    let start = Instant::now();
    let model = common::grad_toy_model();
    let params = common::jittered_params(&model, 3);
    let count = params.param_count();
    let specs = [
        DropSpec::none(),
        DropSpec::new(DropKind::DropCluster, 0.3, 4, [0, 1]).unwrap(),
        DropSpec::new(DropKind::DropPoint, 0.3, 1, [0, 1]).unwrap(),
        DropSpec::new(DropKind::DropFeat, 0.3, 1, [0, 1]).unwrap(),
    ];
    let mut worst = 0.0f64;
    let mut at = String::new();
    let (mut checked, mut kinks) = (0, 0);
    for (i, drop) in specs.iter().enumerate() {
        let s = common::toy_sample(20 + i as u64, 48);
        let g = common::max_grad_error(&model, &params, &s, drop, 77 + i as u64, 1e-5, 1e-6);
        checked += g.checked;
        kinks += g.kinks;
        if g.worst > worst {
            worst = g.worst;
            at = format!("{}: {}", drop.kind, g.at);
        }
    }
    let elapsed = start.elapsed();
    let kink_share = kinks as f64 / (checked + kinks) as f64;
    Verdict {
        id: 6,
        pass: count <= 2000 && worst <= 1e-4 && kink_share <= 0.01 && elapsed < Duration::from_secs(30),
        detail: format!(
            "{count} params, max rel err {worst:.2e} over {checked} coordinates ({kinks} kink probes skipped), worst at {at}, {:.1}s",
            elapsed.as_secs_f64()
        ),
        gating: true,
    }
}

fn permutation_invariance() -> Verdict {
    let cfg = ExperimentConfig::desk_default(5);
    let params = Params::<f64>::init(&cfg.model, 5).unwrap();
    let cloud: PointCloud<f64> = generate_shape(ShapeKind::TORUS, 256, 0.1, 6).unwrap();
    let drift = common::max_permutation_drift(&cfg.model, &params, &cloud, 20, cfg.model.max_edge_k());
    Verdict {
        id: 7,
        pass: drift <= 1e-9,
        detail: format!("max logit drift {drift:.2e} over 20 permutations"),
        gating: true,
    }
}

const SHORT_RUN: &str = "[dataset]
train_per_class = 10
test_per_class = 10
points = 128
[run]
epochs = 4
seed = 11
";

fn cli_determinism() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("short.ini");
    std::fs::write(&cfg, SHORT_RUN).unwrap();
    let mut outputs = Vec::new();
    for name in ["first.csv", "second.csv"] {
        let out = dir.path().join(name);
        let status = Command::new(env!("CARGO_BIN_EXE_pointdrop"))
            .arg("train")
            .arg(&cfg)
            .arg("--out")
            .arg(&out)
            .output()
            .unwrap();
        assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
        outputs.push(std::fs::read(&out).unwrap());
    }
    let same = outputs[0] == outputs[1];
    Verdict {
        id: 8,
        pass: same && !outputs[0].is_empty(),
        detail: format!("two processes wrote {} and {} bytes, identical: {same}", outputs[0].len(), outputs[1].len()),
        gating: true,
    }
}

/// Measured outcomes of one configuration over the paired seeds.
struct Arm {
    test: Vec<f64>,
    gap: Vec<f64>,
}

impl Arm {
    fn mean_test(&self) -> f64 {
        mean_sd(&self.test).0
    }
    fn mean_gap(&self) -> f64 {
        mean_sd(&self.gap).0
    }
}

const SEEDS: [u64; 7] = [0, 1, 2, 3, 4, 5, 6];

fn run_arm(cfg: &ExperimentConfig) -> Arm {
    let mut arm = Arm { test: vec![], gap: vec![] };
    for &seed in &SEEDS {
        let r = run_experiment::<f32>(&cfg.with_seed(seed)).unwrap();
        arm.test.push(r.final_test_acc);
        arm.gap.push(r.gap);
    }
    arm
}

fn describe(name: &str, arm: &Arm) -> String {
    let (m, sd) = mean_sd(&arm.test);
    format!("{name} test {m:.4} (sd {sd:.4}) gap {:.4}", arm.mean_gap())
}

fn regularization_and_ablation() -> (Verdict, Verdict) {
    let cfg = ExperimentConfig::desk_default(0);
    assert_eq!(cfg.dataset.points, 256);
    assert_eq!(cfg.dataset.kinds.len() * cfg.dataset.train_per_class, 200);
    assert_eq!(cfg.dataset.kinds.len() * cfg.dataset.test_per_class, 200);
    assert_eq!(cfg.epochs, 60);
    assert_eq!((cfg.drop.kind, cfg.drop.theta, cfg.drop.gamma), (DropKind::DropCluster, 0.1, 8));
    assert_eq!(cfg.drop.positions, earliest_slots(&cfg.model, 2));

    let start = Instant::now();
    let baseline = run_arm(&cfg.with_drop(DropSpec::none()));
    let cluster = run_arm(&cfg);
    let paired = start.elapsed();
    let c9 = Verdict {
        id: 9,
        pass: cluster.mean_gap() <= baseline.mean_gap()
            && cluster.mean_test() >= baseline.mean_test() - 0.005
            && paired < Duration::from_secs(300),
        detail: format!(
            "{}; {}; 14 runs in {:.0}s",
            describe("baseline", &baseline),
            describe("drop_cluster", &cluster),
            paired.as_secs_f64()
        ),
        gating: false,
    };

    // theta = 0 reproduces the baseline and theta = 0.1 the paired DropCluster arm.
    let mut sweep = vec![(0.0, baseline.mean_test()), (0.1, cluster.mean_test())];
    for theta in [0.05, 0.2, 0.4] {
        let mut c = cfg.clone();
        c.drop.theta = theta;
        sweep.push((theta, run_arm(&c).mean_test()));
    }
    sweep.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let at = |t: f64| sweep.iter().find(|(x, _)| *x == t).unwrap().1;
    let mut late_cfg = cfg.clone();
    late_cfg.drop.positions = latest_slots(&cfg.model, 2);
    let late = run_arm(&late_cfg);
    let early_positions: BTreeSet<usize> = cfg.drop.positions.clone();
    let curve: Vec<String> = sweep.iter().map(|(t, a)| format!("{t}:{a:.4}")).collect();
    let c10 = Verdict {
        id: 10,
        pass: at(0.4) < at(0.1) && cluster.mean_test() >= late.mean_test(),
        detail: format!(
            "theta sweep [{}]; positions {:?} {:.4} vs {:?} {:.4}",
            curve.join(", "),
            early_positions,
            cluster.mean_test(),
            late_cfg.drop.positions,
            late.mean_test()
        ),
        gating: false,
    };
    (c9, c10)
}

fn main() {
    let mut verdicts = vec![
        mask_statistics(),
        gamma_one_degeneration(),
        cluster_correctness(),
        coordinate_only_masking(),
        knn_oracle_equivalence(),
        gradient_correctness(),
        permutation_invariance(),
        cli_determinism(),
    ];
    let (c9, c10) = regularization_and_ablation();
    verdicts.push(c9);
    verdicts.push(c10);
    for v in &verdicts {
        println!("{}", line(v));
    }
    let broken = verdicts.iter().filter(|v| v.gating && !v.pass).count();
    if broken > 0 {
        eprintln!("{broken} property criteria failed");
        std::process::exit(1);
    }
}
