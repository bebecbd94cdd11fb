use num_traits::ToPrimitive;
use proptest::prelude::*;

use gwsnake_core::distributions::{moments, OffspringDistribution};
use gwsnake_core::mc::{self, ExperimentConfig, Statistic};
use gwsnake_core::model::Model;
use gwsnake_core::oracle;
use gwsnake_core::sampler::{derive_stream, sample_conditioned_tree, ConditionedSampler, LabelSampler, SeedSpec};
use gwsnake_core::snake::{self, label_decomposition, normalized_processes};
use gwsnake_core::{PlanarTree, SpannedDecomposition};

#[test]
fn model_to_decomposition() {
    let model = Model::three_point();
    let ms = moments(&model.mu, model.nu.as_ref().unwrap()).unwrap();
    assert!(ms.centered);
    let sampler = ConditionedSampler::new(&model.mu, 300).unwrap();
    let labels = LabelSampler::new(model.nu.as_ref().unwrap());
    for i in 0..20 {
        let mut rng = derive_stream(11, i).rng();
        let tree = sampler.sample(&mut rng).unwrap();
        let lt = labels.assign(&tree, &mut rng).unwrap();
        let p = normalized_processes(&lt).unwrap();
        let dec = label_decomposition(&lt, &model.mu, &ms).unwrap();
        assert!(dec.max_residual(&p.label) < 1e-12);
        // drift vanishes for a centered model
        assert!(dec.drift.values().iter().all(|&x| x == 0.0));
        assert_eq!(p.height.values().len(), 301);
        assert_eq!(p.contour.values().len(), 601);
    }
}

#[test]
fn sampled_trees_feed_the_spanned_decomposition() {
    let mu = OffspringDistribution::three_point();
    let tree = sample_conditioned_tree(&mu, 60, SeedSpec::new(3, 0)).unwrap();
    let marked = [5, 17, 42];
    let dec = SpannedDecomposition::new(&tree, &marked).unwrap();
    assert!(dec.phi_preserves_ancestry(&tree));
    if !dec.nested {
        for l in 0..=marked.len() {
            assert_eq!(dec.sub_count_formula(l), Some(dec.sub_counts[l] as i64));
            assert_eq!(dec.fringe_size_formula(l), Some(dec.fringe_sizes[l] as i64));
        }
    }
}

#[test]
fn sampler_matches_enumeration_for_ternary_law() {
    let exact = Model::from_json_str(r#"{"mu":{"probs":["1/2","1/4","0","1/4"]}}"#).unwrap().mu;
    let ens = oracle::enumerate(&exact, 5, oracle::DEFAULT_ENUMERATION_CAP).unwrap();
    let sampler = ConditionedSampler::new(&exact, 5).unwrap();
    let mut rng = derive_stream(99, 0).rng();
    let r = 40_000;
    let mut counts = vec![0usize; ens.len()];
    for _ in 0..r {
        let t = sampler.sample(&mut rng).unwrap();
        let i = ens.trees.iter().position(|e| e == &t).expect("sampled tree is enumerated");
        counts[i] += 1;
    }
    for (i, &c) in counts.iter().enumerate() {
        let p = ens.conditional(i).to_f64().unwrap();
        let se = (p * (1.0 - p) / r as f64).sqrt();
        assert!((c as f64 / r as f64 - p).abs() < 5.0 * se, "tree {i}: {c} vs {p}");
    }
}

#[test]
fn run_manifest_round_trip() {
    let model = Model::binary_mixed();
    let cfg = ExperimentConfig::new(60, 120, vec![0.3, 0.7], vec![Statistic::Cov, Statistic::Ks, Statistic::Indep, Statistic::Diag], 8);
    let m = mc::run_ensemble(&model, &cfg).unwrap();
    let dir = std::env::temp_dir().join(format!("gwsnake-pipeline-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("run.json");
    mc::write_manifest(&path, &m).unwrap();
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(v["format_version"], 1);
    assert_eq!(v["config"]["n_edges"], 60);
    assert_eq!(v["model"], *model.source());
    assert!(v["metadata"]["wall_clock_seconds"].as_f64().unwrap() > 0.0);
    let mut det = v.clone();
    det.as_object_mut().unwrap().remove("metadata");
    assert_eq!(det, m.deterministic_value());
    assert_eq!(m.independence.len(), 4);
    assert!(m.ks.iter().any(|k| k.process == "r"));
    assert_eq!(m.pathwise.decomposition_failures, 0);
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn multinomial_moment_ratio_stays_bounded() {
    let mu = OffspringDistribution::binary();
    let a = mc::moment_ratio(&mu, 10_000, 100, 4000, 1);
    let b = mc::moment_ratio(&mu, 10_000, 400, 4000, 2);
    // E||G||_1^2 = 4 * lambda * 1/4 for two types with p = 1/2 and G_1 = -G_2
    assert!((a - 1.0).abs() < 0.1, "{a}");
    assert!((b - 1.0).abs() < 0.1, "{b}");
    assert_eq!(mc::moment_ratio(&mu, 10_000, 0, 10, 3), 0.0);
}

#[test]
fn paths_csv_for_sampled_tree() {
    let mu = OffspringDistribution::binary();
    let tree = sample_conditioned_tree(&mu, 8, SeedSpec::new(1, 0)).unwrap();
    let h = snake::height_path(&tree).unwrap();
    let g = snake::lineage_field(&tree, &mu).unwrap();
    let mut out = Vec::new();
    let names = ["h", "G_1_1", "G_2_1", "G_2_2"];
    let mut paths = vec![&h];
    paths.extend(g.components().iter());
    snake::write_paths_csv(&mut out, &names, &paths).unwrap();
    let text = String::from_utf8(out).unwrap();
    assert_eq!(text.lines().count(), 10);
    assert!(text.starts_with("s,h,G_1_1,G_2_1,G_2_2\n0,0,0,0,0\n"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sampled_trees_have_the_requested_size(half in 1usize..200, seed in any::<u64>()) {
        let mu = OffspringDistribution::binary();
        let n = 2 * half;
        let tree = sample_conditioned_tree(&mu, n, SeedSpec::new(seed, 0)).unwrap();
        prop_assert_eq!(tree.n_edges(), n);
        prop_assert!(tree.child_counts().iter().all(|&c| c == 0 || c == 2));
        let again = PlanarTree::from_child_counts(tree.child_counts()).unwrap();
        prop_assert_eq!(again, tree);
    }
}
