use std::path::Path;
use std::process::Command;

use proptest::prelude::*;

use preb_cli::config::{BackendKind, BathConfig, ExperimentConfig, Mode, OutputConfig, RunConfig, SystemConfig};
use preb_core::spectral::SpectralKind;
use preb_core::system::Pattern;
use preb_core::tebd::Scheme;

fn small_config(dir: &Path, extra_run: &str) -> String {
    format!(
        r#"
[system]
L_S = 4
V = 0.0
pattern = "alternating"

[[baths]]
beta = 0.1
mu = 1.5
spectral = {{ kind = "semicircle", coupling = 1.0, bath_hopping = 2.0 }}

[[baths]]
beta = 0.2
mu = -1.5
spectral = {{ kind = "semicircle", coupling = 2.0, bath_hopping = 2.0 }}

[run]
tau = 3.0
n_steps = 4
{extra_run}

[output]
directory = "{}"
stride = 0.5
"#,
        dir.display()
    )
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_preb-sim"))
}

fn write_cfg(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn run_writes_timeline_and_meta() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let cfg = write_cfg(tmp.path(), "c.toml", &small_config(&out, ""));
    let st = bin().arg("run").arg(&cfg).status().unwrap();
    assert_eq!(st.code(), Some(0));
    let csv = std::fs::read_to_string(out.join("timeline.csv")).unwrap();
    assert!(csv.starts_with("t,n_1,n_2,n_3,n_4,I_1,I_2,I_3\n"));
    // 0, then 6 inner samples and a boundary per cycle
    assert_eq!(csv.lines().count(), 1 + 1 + 4 * 6);
    let meta: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("meta.json")).unwrap()).unwrap();
    assert_eq!(meta["bath_sites"], serde_json::json!([8, 8]));
    assert!(meta["wall_time_s"].as_f64().unwrap() >= 0.0);
    assert_eq!(meta["config"]["run"]["tau"], 3.0);

    // refuses to overwrite without --force
    assert_eq!(bin().arg("run").arg(&cfg).status().unwrap().code(), Some(1));
    assert_eq!(bin().arg("run").arg(&cfg).arg("--force").status().unwrap().code(), Some(0));
}

#[test]
fn outputs_are_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let mut csvs = Vec::new();
    for name in ["a", "b"] {
        let out = tmp.path().join(name);
        let cfg = write_cfg(tmp.path(), &format!("{name}.toml"), &small_config(&out, ""));
        assert!(bin().arg("run").arg(&cfg).status().unwrap().success());
        csvs.push(std::fs::read(out.join("timeline.csv")).unwrap());
    }
    assert_eq!(csvs[0], csvs[1]);
}

#[test]
fn config_errors_exit_1() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let bad = small_config(&out, "").replace("V = 0.0", "V = 1.0");
    let cfg = write_cfg(tmp.path(), "bad.toml", &bad);
    let o = bin().arg("run").arg(&cfg).output().unwrap();
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("interacting system requires tebd or dense"));
    assert!(!out.exists());
}

#[test]
fn certify_writes_verdict() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let cfg = write_cfg(tmp.path(), "c.toml", &small_config(&out, "t_max = 12.0"));
    let st = bin().args(["certify"]).arg(&cfg).args(["--tau0", "3", "--tol", "1e-2", "--max-doublings", "2"]).status().unwrap();
    assert_eq!(st.code(), Some(0));
    let rep: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("convergence.json")).unwrap()).unwrap();
    assert_eq!(rep["taus"][0], 3.0);
    assert!(rep["converged"].is_boolean());
    assert!(rep["deviations"].as_array().unwrap().len() >= 1);
}

#[test]
fn reconstruct_merges_offsets() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let cfg = write_cfg(tmp.path(), "c.toml", &small_config(&out, ""));
    let st = bin().arg("reconstruct").arg(&cfg).args(["--t1", "0,1,2"]).status().unwrap();
    assert_eq!(st.code(), Some(0));
    let csv = std::fs::read_to_string(out.join("timeline.csv")).unwrap();
    let times: Vec<f64> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap().parse().unwrap()).collect();
    assert!(times.windows(2).all(|w| w[0] < w[1]));
    // boundaries 0, t₁ + 3k for k = 0..=4 and t₁ ∈ {0, 1, 2}
    assert_eq!(times.len(), 15);
}

#[test]
fn compare_against_exact_ness() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let cfg = write_cfg(tmp.path(), "c.toml", &small_config(&out, "").replace("n_steps = 4", "n_steps = 0"));
    let ness = tmp.path().join("ness.json");
    assert!(bin().arg("ness").arg(&cfg).arg("-o").arg(&ness).status().unwrap().success());
    assert!(bin().arg("run").arg(&cfg).status().unwrap().success());
    // the initial product state is far from the NESS: comparison failure
    let o = bin().arg("compare").arg(&ness).arg(out.join("timeline.csv")).args(["--tail", "5"]).output().unwrap();
    assert_eq!(o.status.code(), Some(3));
    let rep: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(rep["max_deviation"].as_f64().unwrap() > 0.1);

    // a timeline sitting exactly on the NESS passes
    let n: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&ness).unwrap()).unwrap();
    let occ: Vec<f64> = serde_json::from_value(n["observables"]["occupations"].clone()).unwrap();
    let cur: Vec<f64> = serde_json::from_value(n["observables"]["currents"].clone()).unwrap();
    let mut text = String::from("t,n_1,n_2,n_3,n_4,I_1,I_2,I_3\n");
    for t in 0..10 {
        let row: Vec<String> = std::iter::once(t as f64).chain(occ.iter().copied()).chain(cur.iter().copied()).map(|v| format!("{v:?}")).collect();
        text += &(row.join(",") + "\n");
    }
    let flat = tmp.path().join("flat.csv");
    std::fs::write(&flat, text).unwrap();
    let o = bin().arg("compare").arg(&ness).arg(&flat).output().unwrap();
    assert_eq!(o.status.code(), Some(0));
    let rep: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(rep["steady_from"], 0.0);
}

#[test]
fn chainmap_and_memory_dumps() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(tmp.path(), "c.toml", &small_config(&tmp.path().join("out"), ""));
    let o = bin().arg("chainmap").arg(&cfg).args(["--sites", "5"]).output().unwrap();
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["baths"][0]["eps"].as_array().unwrap().len(), 5);
    // γ² = Γ g_B / 2
    assert!((v["baths"][1]["gamma"].as_f64().unwrap() - 2f64.sqrt()).abs() < 1e-8);

    let o = bin().arg("memory").arg(&cfg).args(["--t-max", "20"]).output().unwrap();
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let tm = v["baths"][0]["memory_time"].as_f64().unwrap();
    assert!((1.5..=2.5).contains(&tm), "{tm}");
}

fn finite() -> impl Strategy<Value = f64> {
    -5.0..5.0f64
}

fn spectral() -> impl Strategy<Value = SpectralKind> {
    prop_oneof![
        (0.1..3.0f64, 0.5..3.0f64).prop_map(|(coupling, bath_hopping)| SpectralKind::Semicircle { coupling, bath_hopping }),
        (0.1..3.0f64, 0.5..5.0f64).prop_map(|(coupling, cutoff)| SpectralKind::OhmicGaussian { coupling, cutoff }),
    ]
}

fn bath() -> impl Strategy<Value = BathConfig> {
    (spectral(), 0.01..5.0f64, finite()).prop_map(|(spectral, beta, mu)| BathConfig { spectral, beta, mu })
}

fn config() -> impl Strategy<Value = ExperimentConfig> {
    (
        2usize..10,
        finite(),
        prop_oneof![Just(Pattern::Alternating), Just(Pattern::Empty), Just(Pattern::AlternatingShifted)],
        bath(),
        bath(),
        1usize..200,
        0usize..50,
        prop::option::of(1usize..20),
        prop::option::of(0.1..2.0f64),
        prop_oneof![Just(Scheme::Svd), Just(Scheme::Dmt)],
    )
        .prop_map(|(sites, field, pattern, b1, b2, tau_steps, n_steps, bath_sites, stride, scheme)| {
            let dt = 0.1;
            let tau = tau_steps as f64 * dt;
            ExperimentConfig {
                system: SystemConfig { sites, interaction: 1.0, field, pattern },
                baths: vec![b1, b2],
                run: RunConfig {
                    mode: Mode::Preb,
                    backend: BackendKind::Tebd,
                    tau: Some(tau),
                    n_steps: Some(n_steps),
                    t1: vec![0.0, (tau_steps / 2) as f64 * dt],
                    dt,
                    chi: 64,
                    svd_cutoff: 1e-12,
                    scheme,
                    t_max: Some(tau * 3.0),
                    bath_sites,
                    threshold: 0.05,
                    tolerance: 1e-2,
                },
                output: OutputConfig { directory: "results/x".into(), stride: stride.map(|s| (s * 10.0).round().max(1.0) / 10.0) },
            }
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn config_round_trip(cfg in config()) {
        let text = cfg.to_toml().unwrap();
        prop_assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), cfg);
    }
}
