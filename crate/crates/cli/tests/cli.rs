use std::fs;
use std::path::{Path, PathBuf};
use topohaz::trees::{grow_tree, TreeGrowth};
use topohaz_cli::run;

fn topohaz(args: &[&str]) -> i32 {
    let mut argv = vec!["topohaz"];
    argv.extend_from_slice(args);
    run(argv)
}

fn p(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}

fn s(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn manifest(path: &Path) -> serde_json::Value {
    let mut m = path.as_os_str().to_owned();
    m.push(".manifest.json");
    serde_json::from_str(&fs::read_to_string(PathBuf::from(m)).unwrap()).unwrap()
}

#[test]
fn na_field_single_jump() {
    let dir = tempfile::tempdir().unwrap();
    let field = p(dir.path(), "field.csv");
    fs::write(&field, "0.3,0.1,0.2\n").unwrap();
    let out = p(dir.path(), "curve.csv");
    let bars = p(dir.path(), "bars.csv");
    assert_eq!(topohaz(&["na-field", "--in", s(&field), "--out", s(&out), "--barcode", s(&bars)]), 0);
    let text = fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines, ["level,A_hat,var_naive", "0.1,0.3333333333333333,0.1111111111111111"]);
    assert_eq!(fs::read_to_string(&bars).unwrap(), "birth,death,row,col\n0.1,inf,0,1\n");
    let m = manifest(&out);
    assert_eq!(m["subcommand"], "na-field");
    assert!(m["seed"].is_null());
    assert_eq!(m["inputs"][0]["sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn simulate_field_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, c) = (p(dir.path(), "a.csv"), p(dir.path(), "b.csv"), p(dir.path(), "c.csv"));
    let base = ["simulate-field", "--rows", "6", "--cols", "5", "--eta", "2", "--nu", "1", "--seed", "7", "--out"];
    assert_eq!(topohaz(&[&base[..], &[s(&a)]].concat()), 0);
    assert_eq!(topohaz(&[&base[..], &[s(&b)]].concat()), 0);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_eq!(fs::read_to_string(&a).unwrap().lines().count(), 6);

    // Without --seed a seed is drawn, recorded, and replays bit for bit.
    assert_eq!(topohaz(&["simulate-field", "--rows", "4", "--cols", "4", "--eta", "3", "--nu", "0.5", "--out", s(&c)]), 0);
    let m = manifest(&c);
    assert!(m["seed"].is_u64());
    assert_eq!(m["params"]["seed"], m["seed"]);
    let mut mpath = c.as_os_str().to_owned();
    mpath.push(".manifest.json");
    let replay = p(dir.path(), "replay.csv");
    assert_eq!(topohaz(&["simulate-field", "--config", mpath.to_str().unwrap(), "--out", s(&replay)]), 0);
    assert_eq!(fs::read(&c).unwrap(), fs::read(&replay).unwrap());
}

#[test]
fn command_line_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = p(dir.path(), "cfg.json");
    fs::write(&cfg, r#"{"rows": 3, "cols": 3, "eta": 1, "nu": 0.5, "seed": 3}"#).unwrap();
    let out = p(dir.path(), "f.csv");
    assert_eq!(topohaz(&["simulate-field", "--config", s(&cfg), "--rows", "2", "--out", s(&out)]), 0);
    let text = fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().count(), 2);
    assert!(text.lines().all(|l| l.split(',').count() == 3));
    assert_eq!(manifest(&out)["params"]["rows"], 2);
}

#[test]
fn usage_errors_exit_nonzero() {
    assert_eq!(topohaz(&["simulate-field", "--rows", "3", "--bogus"]), 2);
    assert_eq!(topohaz(&["no-such-command"]), 2);
    assert_eq!(topohaz(&["--help"]), 0);
}

#[test]
fn failures_leave_no_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let bad = p(dir.path(), "bad.csv");
    fs::write(&bad, "1,2\nx,3\n").unwrap();
    let out = p(dir.path(), "out.csv");
    assert_eq!(topohaz(&["na-field", "--in", s(&bad), "--out", s(&out)]), 1);
    assert!(!out.exists());

    // The curve is complete but the barcode cannot be written: neither appears.
    let good = p(dir.path(), "good.csv");
    fs::write(&good, "0.3,0.1,0.2\n").unwrap();
    let missing = dir.path().join("missing").join("bars.csv");
    assert_eq!(topohaz(&["na-field", "--in", s(&good), "--out", s(&out), "--barcode", s(&missing)]), 1);
    assert!(!out.exists());
    let leftovers: Vec<_> = fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(leftovers.len(), 2, "{leftovers:?}");
}

#[test]
fn independent_limit_matches_closed_form() {
    let dir = tempfile::tempdir().unwrap();
    let out = p(dir.path(), "limit.csv");
    let args = ["limit", "--iid", "--rows", "10", "--cols", "10", "--from", "-2", "--to", "1", "--points", "4", "--seed", "1", "--out", s(&out)];
    assert_eq!(topohaz(&args), 0);
    let text = fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("level,A,mc_se"));
    for line in lines {
        let v: Vec<f64> = line.split(',').map(|x| x.parse().unwrap()).collect();
        let exact = topohaz::iid_limit(v[0]);
        assert!((v[1] - exact).abs() < 1e-3, "{line} vs {exact}");
    }
}

#[test]
fn bands_do_not_depend_on_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    let fields = p(dir.path(), "rep.csv");
    let sim = ["simulate-field", "--rows", "12", "--cols", "12", "--eta", "2", "--nu", "1", "--seed", "11", "--count", "6", "--out", s(&fields)];
    assert_eq!(topohaz(&sim), 0);
    let inputs: Vec<String> = (0..6).map(|i| s(&p(dir.path(), &format!("rep_{i}.csv"))).to_string()).collect();
    let mut outs = Vec::new();
    for threads in ["1", "3"] {
        let out = p(dir.path(), &format!("band{threads}.csv"));
        let mut args: Vec<&str> = vec!["band-replicates", "--in"];
        args.extend(inputs.iter().map(String::as_str));
        args.extend(["--points", "30", "--mc-draws", "2000", "--seed", "5", "--threads", threads, "--out", s(&out)]);
        assert_eq!(topohaz(&args), 0);
        outs.push(fs::read(&out).unwrap());
    }
    assert_eq!(outs[0], outs[1]);
    let text = String::from_utf8(outs.remove(0)).unwrap();
    assert!(text.starts_with("level,center,lower,upper\n"));
    assert_eq!(text.lines().count(), 31);
    let m = manifest(&p(dir.path(), "band1.csv"));
    assert!(m["results"]["band"]["threshold"].as_f64().unwrap() > 1.96);
}

#[test]
fn bootstrap_band_runs() {
    let dir = tempfile::tempdir().unwrap();
    let field = p(dir.path(), "f.csv");
    assert_eq!(topohaz(&["simulate-field", "--rows", "8", "--cols", "8", "--eta", "2", "--nu", "1", "--seed", "4", "--out", s(&field)]), 0);
    let out = p(dir.path(), "boot.csv");
    let args = ["band-bootstrap", "--in", s(&field), "--replicates", "100", "--points", "20", "--seed", "9", "--out", s(&out)];
    assert_eq!(topohaz(&args), 0);
    assert_eq!(fs::read_to_string(&out).unwrap().lines().count(), 21);
    let m = manifest(&out);
    assert!(m["results"]["mle"]["params"]["eta"].as_f64().unwrap() > 0.0);
    assert_eq!(topohaz(&["band-bootstrap", "--in", s(&field), "--replicates", "50", "--out", s(&out)]), 1);
}

#[test]
fn coverage_table_is_written() {
    let dir = tempfile::tempdir().unwrap();
    let out = p(dir.path(), "cov.csv");
    let args = [
        "coverage", "--eta", "2", "--nu", "1", "--rows", "12", "--cols", "12", "--method", "replicate", "--trials", "4",
        "--replicates", "10", "--pilot-fields", "10", "--points", "30", "--percentiles", "0.8,0.4", "--mc-draws", "1000",
        "--limit-samples", "10000", "--seed", "2", "--out", s(&out),
    ];
    assert_eq!(topohaz(&args), 0);
    let text = fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "percentile,level,coverage");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("0.8,"));
    let m = manifest(&out);
    assert!(m["results"]["simultaneous_coverage"].is_number());
}

#[test]
fn tree_events_then_cox_fit() {
    let dir = tempfile::tempdir().unwrap();
    let trees: Vec<serde_json::Value> = (0..6)
        .map(|i| grow_tree(&TreeGrowth::default(), format!("t{i}"), 100 + i).unwrap().to_json())
        .collect();
    let json = p(dir.path(), "trees.json");
    fs::write(&json, serde_json::to_string(&trees).unwrap()).unwrap();
    let events = p(dir.path(), "events.csv");
    assert_eq!(topohaz(&["tree-events", "--in", s(&json), "--proximity-radius", "1", "--out", s(&events)]), 0);
    let header = fs::read_to_string(&events).unwrap().lines().next().unwrap().to_string();
    assert!(header.starts_with("tree_id,edge,entry_radius,exit_radius,status"));

    let cfg = p(dir.path(), "cox.json");
    fs::write(&cfg, r#"{"covariates": ["width"], "term": ["geometry:order,azimuth"], "factor": "tree_id"}"#).unwrap();
    let out = p(dir.path(), "fit.json");
    assert_eq!(topohaz(&["cox-fit", "--config", s(&cfg), "--in", s(&events), "--event", "leaf", "--out", s(&out)]), 0);
    let fit: serde_json::Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    let names: Vec<&str> = fit["coefficients"].as_array().unwrap().iter().map(|c| c["name"].as_str().unwrap()).collect();
    assert_eq!(&names[..3], ["width", "order", "azimuth"]);
    let terms = fit["terms"].as_array().unwrap();
    assert_eq!(terms[1]["term"], "geometry");
    assert_eq!(terms[1]["df"], 2);
    assert!(terms[0]["hr_20_80"].as_f64().unwrap() > 0.0);
    assert_eq!(topohaz(&["cox-fit", "--in", s(&events), "--event", "leaf", "--covariates", "nope", "--out", s(&out)]), 1);
}

#[test]
fn plot_renders_empty_and_banded_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let empty = p(dir.path(), "empty.csv");
    fs::write(&empty, "level,A_hat\n").unwrap();
    let svg = p(dir.path(), "empty.svg");
    assert_eq!(topohaz(&["plot", "--in", s(&empty), "--out", s(&svg)]), 0);
    let text = fs::read_to_string(&svg).unwrap();
    assert!(text.starts_with("<svg") && text.trim_end().ends_with("</svg>"));
    assert!(!text.contains("<path"));

    let band = p(dir.path(), "band.csv");
    fs::write(&band, "level,center,lower,upper\n-1,0.1,0.05,0.15\n0,0.7,0.6,0.8\n1,1.8,1.6,2.0\n").unwrap();
    let limit = p(dir.path(), "limit.csv");
    fs::write(&limit, "level,A,mc_se\n-1,0.1,0\n0,0.69,0\n1,1.84,0\n").unwrap();
    let out = p(dir.path(), "band.svg");
    assert_eq!(topohaz(&["plot", "--in", s(&band), "--reference", s(&limit), "--title", "A & B", "--out", s(&out)]), 0);
    let text = fs::read_to_string(&out).unwrap();
    assert!(text.contains("fill-opacity") && text.contains("stroke-dasharray") && text.contains("A &amp; B"));
}
