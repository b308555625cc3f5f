use std::fs;
use std::path::Path;
use std::process::Command;

use phs_cli::builtins::{self, BUILTINS};
use phs_cli::run;
use proptest::prelude::*;

fn phs(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let code = run(std::iter::once("phs").chain(args.iter().copied()), &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

const FIBER: &str = "[variables]\nx state\nlam multiplier\n[hamiltonian]\nstates = x\nH = lam*x\n";

#[test]
fn builtins_pass_their_checks() {
    for (name, _) in BUILTINS {
        let (code, out, err) = phs(&["check", name]);
        assert_eq!(code, 0, "{name}: {out}{err}");
        assert!(out.ends_with("check: PASS\n"), "{out}");
    }
}

#[test]
fn relativistic_reduction() {
    let (code, out, _) = phs(&["reduce", "relativistic_free"]);
    assert_eq!(code, 0);
    assert!(
        out.contains("rank W = 1 over 8 points, 1 primary constraint(s)"),
        "{out}"
    );
    assert!(out.contains("H_c = 0\n"));
    assert!(out.contains("1  primary    first         -m^2 - p0^2 + p1^2"), "{out}");
    assert!(out.contains("lam       free"));
    assert!(out.contains("H_total = lam*(-m^2 - p0^2 + p1^2)\n"));
    assert!(!out.contains("secondary"));

    let (_, out, _) = phs(&["reduce", "relativistic_em"]);
    assert!(
        out.contains("H_total = lam*(-m^2 - (p0 - A0*e)^2 + (p1 - A1*e)^2)"),
        "{out}"
    );
}

#[test]
fn second_class_reduction() {
    let (code, out, _) = phs(&["--json", "reduce", "second_class_toy"]);
    assert_eq!(code, 0);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    let cs = &v["constraints"]["constraints"];
    assert_eq!(cs[1]["phi"], "p");
    assert_eq!(cs[1]["generation"], "secondary");
    assert!(cs.as_array().unwrap().iter().all(|c| c["class"] == "second"));
    assert_eq!(v["constraints"]["multipliers"][0]["status"]["value"], "0");
    assert_eq!(v["seed"], 0);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let incons = write(
        dir.path(),
        "i.phs",
        "[variables]\nq state\np state\n[hamiltonian]\ncoordinates = q\nmomenta = p\nH = q\n[constraints]\np\n",
    );
    assert_eq!(phs(&["reduce", &incons]).0, 3);
    assert_eq!(phs(&["check", &incons]).0, 3);

    let dup = write(
        dir.path(),
        "d.phs",
        "[variables]\nq state\np state\nu1 input\nu2 input\n[hamiltonian]\ncoordinates = q\nmomenta = p\nH = 1/2*p^2\n[inputs]\nu1 = q\nu2 = q\n",
    );
    let (code, out, _) = phs(&["check", &dup]);
    assert_eq!(code, 2);
    assert!(out.contains("restricted rank condition: required rank 2") && out.ends_with("check: FAIL\n"));

    let missing = write(dir.path(), "m.phs", "[variables]\nq state\n\np state\n");
    let (code, _, err) = phs(&["check", &missing]);
    assert_eq!(code, 1);
    assert!(
        err.contains("line 4: missing [lagrangian] or [hamiltonian] section"),
        "{err}"
    );

    let bad_expr = write(
        dir.path(),
        "b.phs",
        "[variables]\nq state\np state\n[hamiltonian]\ncoordinates = q\nmomenta = p\nH = q^^2\n",
    );
    let (code, _, err) = phs(&["reduce", &bad_expr]);
    assert_eq!(code, 1);
    assert!(err.contains("line 7, col "), "{err}");

    assert_eq!(phs(&["check", "no/such/file"]).0, 1);
    assert_eq!(phs(&["check"]).0, 1);
    assert_eq!(phs(&["--tol-rank", "0", "check", "oscillator"]).0, 1);
    assert_eq!(phs(&["--jobs", "0", "check", "oscillator"]).0, 1);
    assert_eq!(phs(&["frobnicate"]).0, 1);
    let (code, out, _) = phs(&["--help"]);
    assert_eq!(code, 0);
    assert!(out.contains("simulate"));
    assert_eq!(phs(&["--version"]).0, 0);
}

#[test]
fn rank_suite_from_files() {
    let dir = tempfile::tempdir().unwrap();
    let fiber = write(dir.path(), "f.phs", FIBER);
    let (code, out, _) = phs(&["check", &fiber]);
    assert_eq!(code, 0, "{out}");
    assert!(out.contains("Morse rank condition: required rank 1"));

    let cubic = write(
        dir.path(),
        "c.phs",
        &FIBER
            .replace("lam*x", "lam^3")
            .replace("H = lam^3\n", "H = lam^3\n[points]\nx = 0.3, lam = 0\n"),
    );
    let (code, out, _) = phs(&["check", &cubic]);
    assert_eq!(code, 2, "{out}");
    assert!(out.contains("    0     0  0.000000e0"), "{out}");
}

#[test]
fn checks_are_deterministic_under_a_seed() {
    let a = phs(&["--json", "--seed", "0", "check", "relativistic_em"]);
    let b = phs(&["--json", "--seed", "0", "--jobs", "2", "check", "relativistic_em"]);
    assert_eq!(a, b);
    let c = phs(&["--json", "--seed", "7", "check", "relativistic_em"]);
    assert_eq!(c.0, 0);
    assert_ne!(a.1, c.1);
}

#[test]
fn simulate_then_audit() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("traj.csv");
    let csv_s = csv.to_str().unwrap();
    let (code, out, err) = phs(&["simulate", "relativistic_free", "--out", csv_s]);
    assert_eq!(code, 0, "{err}");
    assert!(
        out.contains("final state (q0, q1, p0, p1) = (0.000000000, 1.000000000, 0.000000000, 1.000000000)"),
        "{out}"
    );
    let text = fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("t,x_q0,x_q1,x_p0,x_p1,lam_lam,res_closed,res_energyport,res_constraint_max\n"));
    assert_eq!(text.lines().count(), 1002);

    let (code, out, _) = phs(&["audit", "relativistic_free", "--traj", csv_s]);
    assert_eq!(code, 0);
    assert!(out.contains("audited 999 interior steps"));
    assert_eq!(out.lines().count(), 1 + 999 + 1 + 4);

    // the trajectory belongs to a different system
    let (code, _, err) = phs(&["audit", "oscillator", "--traj", csv_s]);
    assert_eq!(code, 1);
    assert!(err.contains("do not match"), "{err}");
    let garbage = write(dir.path(), "g.csv", "t,x_q\n0,1\n");
    assert_eq!(phs(&["audit", "oscillator", "--traj", &garbage]).0, 1);
}

#[test]
fn failed_simulation_leaves_no_file() {
    let dir = tempfile::tempdir().unwrap();
    let off = write(
        dir.path(),
        "off.phs",
        &builtins::RELATIVISTIC_FREE.replace("x0 = 0, 0, 0, 1", "x0 = 0, 0, 0, 2"),
    );
    let out = dir.path().join("off.csv");
    let (code, _, err) = phs(&["simulate", &off, "--out", out.to_str().unwrap()]);
    assert_eq!(code, 4);
    assert!(
        err.contains("off the constraint surface") || err.contains("-m^2 - p0^2 + p1^2"),
        "{err}"
    );
    assert!(!out.exists());
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);

    let no_gauge = write(
        dir.path(),
        "ng.phs",
        &builtins::RELATIVISTIC_FREE.replace("lam = const(0.5)", ""),
    );
    let (code, _, err) = phs(&["simulate", &no_gauge, "--out", out.to_str().unwrap()]);
    assert_eq!(code, 1, "{err}");
    assert!(err.contains("lam"));
    let no_sim = write(
        dir.path(),
        "ns.phs",
        "[variables]\nq state\np state\n[hamiltonian]\ncoordinates = q\nmomenta = p\nH = p^2\n",
    );
    assert_eq!(phs(&["simulate", &no_sim, "--out", out.to_str().unwrap()]).0, 1);
}

#[test]
fn ported_system_file() {
    let dir = tempfile::tempdir().unwrap();
    let file = write(
        dir.path(),
        "port.phs",
        "[variables]\nx1 state\nx2 state\n[hamiltonian]\nstates = x1, x2\nH = 1/2*x1^2 + 1/4*x2^4\n\
         [dirac]\nJ = [[0, 1], [-1, 0]]\nB = [[0], [1]]\n[signals]\nep_1 = sin(0.5, 2, 0)\n\
         [simulation]\nt1 = 2\ndt = 1e-3\nx0 = 0.2, 0.1\n",
    );
    let csv = dir.path().join("p.csv");
    let (code, _, err) = phs(&["simulate", &file, "--out", csv.to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    let (code, out, _) = phs(&["--json", "audit", &file, "--traj", csv.to_str().unwrap(), "--summary"]);
    assert_eq!(code, 0);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert!(v["worst"]["closed"]["value"].as_f64().unwrap() <= 1e-12);
    assert!(v["worst"]["hamiltonian"]["value"].as_f64().unwrap() <= 1e-6);
    assert!(fs::read_to_string(&csv).unwrap().starts_with("t,x_x1,x_x2,fp_1,ep_1,"));

    let stray = write(
        dir.path(),
        "s.phs",
        &fs::read_to_string(&file).unwrap().replace("ep_1 =", "ep_2 ="),
    );
    let (code, _, err) = phs(&["simulate", &stray, "--out", csv.to_str().unwrap()]);
    assert_eq!(code, 1);
    assert!(err.contains("ep_2"), "{err}");
}

#[test]
fn examples_are_byte_stable() {
    let (code, out, _) = phs(&["examples"]);
    assert_eq!(code, 0);
    assert_eq!(out.lines().collect::<Vec<_>>(), builtins::names().collect::<Vec<_>>());

    let (code, em, _) = phs(&["examples", "relativistic_em"]);
    assert_eq!(code, 0);
    assert_eq!(em, builtins::RELATIVISTIC_EM);
    assert!(em.contains("-(p0 - e*A0)^2 + (p1 - e*A1)^2 - m^2"));
    let (_, osc, _) = phs(&["examples", "oscillator"]);
    assert!(!osc.contains(" multiplier\n") && !osc.contains(" input\n") && !osc.contains("[inputs]"));
    let (code, _, err) = phs(&["examples", "nosuch"]);
    assert_eq!(code, 1);
    assert!(err.contains("unknown example `nosuch`"));

    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        assert_eq!(phs(&["examples", "--out-dir", d.path().to_str().unwrap()]).0, 0);
    }
    for (name, text) in BUILTINS {
        let fa = fs::read(a.path().join(format!("{name}.phs"))).unwrap();
        assert_eq!(fa, fs::read(b.path().join(format!("{name}.phs"))).unwrap());
        assert_eq!(fa, text.as_bytes());
        // a written file behaves like the built-in it came from
        let path = a.path().join(format!("{name}.phs"));
        assert_eq!(
            phs(&["--json", "check", path.to_str().unwrap()])
                .1
                .replace(path.to_str().unwrap(), name),
            phs(&["--json", "check", name]).1
        );
    }
}

#[test]
fn binary_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_phs");
    let status = |args: &[&str]| Command::new(bin).args(args).output().unwrap().status.code().unwrap();
    assert_eq!(status(&["check", "relativistic_free"]), 0);
    assert_eq!(status(&["examples", "nosuch"]), 1);
    assert_eq!(status(&["--help"]), 0);
    let out = Command::new(bin).args(["examples", "io_linear"]).output().unwrap();
    assert_eq!(out.stdout, builtins::IO_LINEAR.as_bytes());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn parser_never_panics(src in "(\\[[a-z]{0,12}\\]|[a-z0-9 =,\\[\\]()*^+./-]{0,30}|\n){0,30}") {
        let _ = phs_cli::sysfile::parse_system(&src);
    }

    #[test]
    fn mutated_builtins_never_panic(idx in 0usize..5, cut in 0usize..2000, junk in "[a-z0-9 =,\\[\\]()*^+./#-]{0,8}") {
        let text = BUILTINS[idx].1;
        let cut = cut.min(text.len());
        let src = format!("{}{}{}", &text[..cut], junk, &text[cut..]);
        if let Ok(f) = phs_cli::sysfile::parse_system(&src) {
            let _ = phs_cli::analysis::analyse(&f, &Default::default(), false);
        }
    }
}
