#![allow(clippy::needless_range_loop)]

mod common;

use common::{ldm_cli, run_pipeline, BUNDLED_CSV};
use ldm::cli::{sha256_hex, PairwiseFile, PanelFile, StudyFile, TestFile, TreeFile};
use std::path::Path;

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> T {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

#[test]
fn pipeline_is_byte_identical_across_runs_and_threads() {
    let (a, b, c) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let first = run_pipeline(a.path(), 1);
    let second = run_pipeline(b.path(), 1);
    let threaded = run_pipeline(c.path(), 4);
    for ((name, x), ((_, y), (_, z))) in first.iter().zip(second.iter().zip(&threaded)) {
        assert!(x == y, "{name} differs between runs");
        assert!(x == z, "{name} differs between thread counts");
    }
}

#[test]
fn artifacts_carry_manifests() {
    let dir = tempfile::tempdir().unwrap();
    run_pipeline(dir.path(), 1);
    let input = std::fs::read(BUNDLED_CSV).unwrap();
    let panel_bytes = std::fs::read(dir.path().join("panel.json")).unwrap();

    let panel: PanelFile = read_json(&dir.path().join("panel.json"));
    assert_eq!(panel.manifest.command, "ingest");
    assert_eq!(panel.manifest.inputs["synthetic_pa.csv"], sha256_hex(&input));
    assert_eq!(panel.manifest.config["season"], 2000);
    assert_eq!(panel.ingest.kept, panel.panel.rows.len());

    let tree: TreeFile = read_json(&dir.path().join("tree.json"));
    assert_eq!(tree.manifest.inputs["panel.json"], sha256_hex(&panel_bytes));
    assert!(tree.score <= tree.baseline_score);
    assert!(!tree.branches.is_empty());

    let test: TestFile = read_json(&dir.path().join("test.json"));
    assert!(test.manifest.inputs.contains_key("tree.json"));
    assert_eq!(test.result.groups.len(), 3);

    for csv in ["trace.csv", "test.csv", "heatmap.csv"] {
        let text = std::fs::read_to_string(dir.path().join(csv)).unwrap();
        let line = text.lines().next().unwrap();
        let json = line.strip_prefix("# manifest: ").unwrap_or_else(|| panic!("{csv}: {line}"));
        let _: serde_json::Value = serde_json::from_str(json).unwrap();
    }
    let svg = std::fs::read_to_string(dir.path().join("heatmap.svg")).unwrap();
    assert!(svg.contains("<metadata>") && svg.contains("&quot;command&quot;:&quot;heatmap&quot;"));
}

#[test]
fn pairwise_has_one_block_per_pair() {
    let dir = tempfile::tempdir().unwrap();
    run_pipeline(dir.path(), 1);
    let pw: PairwiseFile = read_json(&dir.path().join("pairwise.json"));
    assert_eq!(pw.pairs.len(), 3);
    for pair in &pw.pairs {
        assert_eq!(pair.v, 5);
        let b = pair.p_bonferroni.unwrap();
        assert!((b - (3.0 * pair.p_value).min(1.0)).abs() < 1e-15);
    }
}

#[test]
fn heatmap_csv_is_symmetric_with_unit_diagonal() {
    let dir = tempfile::tempdir().unwrap();
    run_pipeline(dir.path(), 1);
    let text = std::fs::read_to_string(dir.path().join("heatmap.csv")).unwrap();
    let mut blocks = 0;
    let mut lines = text.lines().skip(1).peekable();
    while let Some(head) = lines.next() {
        assert!(head.starts_with("# group: "), "{head}");
        blocks += 1;
        lines.next().unwrap(); // column names
        let rows: Vec<Vec<String>> = (0..6)
            .map(|_| lines.next().unwrap().split(',').skip(1).map(String::from).collect())
            .collect();
        for i in 0..6 {
            for j in 0..6 {
                assert_eq!(rows[i][j], rows[j][i]);
            }
            assert!(rows[i][i].is_empty() || rows[i][i] == "1.000000");
        }
        while lines.peek().is_some_and(|l| !l.starts_with('#')) {
            lines.next();
        }
    }
    // pooled plus the three age groups
    assert_eq!(blocks, 4);
}

#[test]
fn identical_groups_give_zero_statistic() {
    let dir = tempfile::tempdir().unwrap();
    let rows = [[3, 1, 8, 30, 110, 20], [6, 0, 12, 25, 90, 30], [1, 2, 5, 40, 120, 15], [4, 1, 9, 33, 100, 18]];
    let mut csv = String::from("player_id,season,age,bat_hand,pitch_hand,hr,triple,double,single,out,other\n");
    for (i, r) in rows.iter().enumerate() {
        for age in [23, 38] {
            let c: Vec<String> = r.iter().map(|x| x.to_string()).collect();
            csv.push_str(&format!("p{i}_{age},2005,{age},R,R,{}\n", c.join(",")));
        }
    }
    let input = dir.path().join("same.csv");
    std::fs::write(&input, csv).unwrap();
    let p = |f: &str| dir.path().join(f).to_string_lossy().into_owned();
    ldm_cli(&["ingest", "--input", &p("same.csv"), "--schema", "six", "--out", &p("panel.json")]).unwrap();
    ldm_cli(&["test", "--panel", &p("panel.json"), "--tree", "baseball", "--out", &p("test.json")]).unwrap();
    let test: TestFile = read_json(&dir.path().join("test.json"));
    assert_eq!(test.result.groups.len(), 2);
    assert!(test.result.lambda.abs() < 1e-6, "{}", test.result.lambda);
    assert!(test.result.p_value > 0.999);
}

fn study_json(level: f64, reps: usize) -> String {
    let params = ldm::simlab::baseball_params(1).unwrap();
    let group = |name: &str| ldm::GroupSpec::from_params(name, 60, &params);
    let config = ldm::StudyConfig {
        components: ldm::ComponentSchema::six().names().to_vec(),
        tree: params.to_spec(),
        groups: vec![group("a"), group("b")],
        replications: reps,
        level: 0.05,
        seed: 99,
    };
    let mut v = serde_json::to_value(&config).unwrap();
    v["level"] = serde_json::json!(level);
    serde_json::to_string_pretty(&v).unwrap()
}

#[test]
fn simulate_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("study.json"), study_json(0.05, 20)).unwrap();
    let p = |f: &str| dir.path().join(f).to_string_lossy().into_owned();
    for (out, threads) in [("a.json", "1"), ("b.json", "3")] {
        ldm_cli(&["--threads", threads, "simulate", "--config", &p("study.json"), "--out", &p(out)]).unwrap();
    }
    let (a, b) = (std::fs::read(p("a.json")).unwrap(), std::fs::read(p("b.json")).unwrap());
    assert_eq!(a, b);
    let file: StudyFile = serde_json::from_slice(&a).unwrap();
    assert_eq!(file.result.replications, 20);
    assert_eq!(file.manifest.seed, Some(99));
    assert_eq!(file.result.lambdas.len(), 20);
}

#[test]
fn simulate_rejects_bad_level() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("study.json"), study_json(1.5, 5)).unwrap();
    let p = |f: &str| dir.path().join(f).to_string_lossy().into_owned();
    let err = ldm_cli(&["simulate", "--config", &p("study.json"), "--out", &p("out.json")]).unwrap_err();
    assert!(matches!(err, ldm::Error::Config(_)), "{err}");
    assert!(!dir.path().join("out.json").exists());
}

#[test]
fn missing_input_and_bad_tree_are_errors() {
    let dir = tempfile::tempdir().unwrap();
    let p = |f: &str| dir.path().join(f).to_string_lossy().into_owned();
    assert!(ldm_cli(&["ingest", "--input", &p("nope.csv"), "--out", &p("panel.json")]).is_err());
    run_pipeline(dir.path(), 1);
    std::fs::write(p("bad_tree.json"), r#"{"name":"root","children":[{"name":"hr"},{"name":"out"}]}"#).unwrap();
    assert!(ldm_cli(&["test", "--panel", &p("panel.json"), "--tree", &p("bad_tree.json"), "--out", &p("t.json")]).is_err());
}
