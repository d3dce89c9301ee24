mod common;

use common::{f, run};

const NEUMANN_Y1: &str = "
[mesh]
source = sphere
level = 2

[problem]
kind = laplace_neumann
data = y1

[eval]
points = 0,0,0.5; 0.3,-0.2,0.1; 0,0,0.995
";

#[test]
fn neumann_first_harmonic_solves() {
    let dir = tempfile::tempdir().unwrap();
    let r = run(dir.path(), "solve", NEUMANN_Y1, &[]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let rep = r.json("report.json");
    assert!(f(&rep["solve"]["residual"]) <= 1e-10);
    assert_eq!(rep["solve"]["kernel_dimension"], 1);
    assert_eq!(rep["status"], "ok");
    assert_eq!(rep["threads"].as_u64().unwrap() as usize, rayon_default());

    let density = r.read("density.csv");
    let lines: Vec<&str> = density.lines().collect();
    assert_eq!(lines[0], "node,x,y,z,weight,density0");
    assert_eq!(lines.len(), 321);
    // g = 3 Y1 up to discretization error
    for l in &lines[1..] {
        let c: Vec<f64> = l.split(',').map(|s| s.parse().unwrap()).collect();
        assert!((c[5] - 3.0 * c[3]).abs() < 0.05, "{l}");
    }

    let eval = r.read("eval.csv");
    let rows: Vec<Vec<&str>> = eval.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 3);
    let u: f64 = rows[0][5].parse().unwrap();
    assert!((u - 0.5).abs() < 0.015, "{u}");
    assert_eq!(rows[0][4], "0");
    assert_eq!(rows[2][4], "1");

    let schema = r.read("schema.txt");
    for needle in ["[density.csv]", "[eval.csv]", "density0:", "u0_z:"] {
        assert!(schema.contains(needle), "{needle}");
    }
    assert!(r.out.join("timings.json").exists());
}

fn rayon_default() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

#[test]
fn missing_mesh_file_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let r = run(
        dir.path(),
        "solve",
        "[mesh]\nsource = file\npath = no/such/mesh.txt\n[problem]\nkind = laplace_dirichlet\n",
        &[],
    );
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("no/such/mesh.txt"), "{}", r.stderr);
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    for cfg in [
        "[mesh]\nlevel = two\n[problem]\nkind = laplace_neumann\n",
        "[mesh]\nlevel = 1\nlevle = 2\n[problem]\nkind = laplace_neumann\n",
        "[problem]\nkind = heat\n",
        "[mesh]\nlevel = 1\n[kernel]\nfamily = lame\n[problem]\nkind = laplace_neumann\n",
        "[mesh\n",
    ] {
        let r = run(dir.path(), "solve", cfg, &[]);
        assert_eq!(r.code, 2, "{cfg}: {}", r.stderr);
    }
    let r = run(dir.path(), "solve", "[mesh]\nlevel = 1\nlevle = 2\n[problem]\nkind = laplace_neumann\n", &[]);
    assert!(r.stderr.contains("levle"), "{}", r.stderr);
    let missing = common::run_file(&dir.path().join("absent.cfg"), "solve", &dir.path().join("o"), &[]);
    assert_eq!(missing.code, 2);
    let r = run(dir.path(), "solve", NEUMANN_Y1, &["--threads", "0"]);
    assert_eq!(r.code, 2);
}

#[test]
fn mesh_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mesh = layerpot::geometry::unit_sphere::<f64>(layerpot::geometry::SphereBase::Octahedron, 2);
    std::fs::write(dir.path().join("ball.mesh"), layerpot::geometry::write_mesh(&mesh)).unwrap();
    let cfg = "[mesh]\nsource = file\npath = ball.mesh\nlevel = 0\n[problem]\nkind = laplace_dirichlet\ndata = constant\nvalue = 2\n[eval]\npoints = 0,0,0\norder = 0\n";
    let r = run(dir.path(), "solve", cfg, &[]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let eval = r.read("eval.csv");
    let u: f64 = eval.lines().nth(1).unwrap().split(',').nth(5).unwrap().parse().unwrap();
    assert!((u - 2.0).abs() < 0.02, "{u}");
}

#[test]
fn incompatible_neumann_data_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "[mesh]\nlevel = 1\n[problem]\nkind = laplace_neumann\ndata = uniform\nvalue = 1\n";
    let r = run(dir.path(), "solve", cfg, &[]);
    assert_eq!(r.code, 3, "{}", r.stderr);
    let rep = r.json("report.json");
    assert_eq!(rep["status"], "compatibility_violation");
    let integral = f(&rep["compatibility"]["data_integral"][0]);
    let area = f(&rep["mesh"]["total_measure"]);
    assert!((integral - area).abs() < 1e-12 * area, "{integral} vs {area}");

    let r = run(dir.path(), "solve", cfg, &["--auto-project"]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert!(f(&r.json("report.json")["projection_norm"]) > 1.0);
}

#[test]
fn traction_and_biharmonic_solves() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "[mesh]\nlevel = 1\n[kernel]\nfamily = lame\nmu = 1\nlambda = 1.5\n[problem]\nkind = traction\ndata = kelvin\nauto_project = true\n[eval]\npoints = 0,0,0; 0.2,0.1,0\n";
    let r = run(dir.path(), "solve", cfg, &[]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert!(r.read("density.csv").starts_with("node,x,y,z,weight,density0,density1,density2\n"));
    assert_eq!(r.json("report.json")["solve"]["kernel_dimension"], 6);

    let cfg = "[mesh]\nlevel = 1\n[kernel]\nfamily = biharmonic\nrho = 0.25\n[problem]\nkind = biharmonic_dirichlet\ndata = x3_squared\n[eval]\npoints = 0,0,0.5\norder = 0\n";
    let r = run(dir.path(), "solve", cfg, &[]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let u: f64 = r.read("eval.csv").lines().nth(1).unwrap().split(',').nth(5).unwrap().parse().unwrap();
    assert!((u - 0.25).abs() < 0.05, "{u}");
}

#[test]
fn mis_signed_kernel_fails_gauss_check() {
    let dir = tempfile::tempdir().unwrap();
    let r = run(dir.path(), "verify", "[mesh]\nsource = sphere\n[verify]\nlevels = 1\nflip_sign = true\n", &[]);
    assert_eq!(r.code, 4, "{}", r.stderr);
    assert!(r.stderr.contains("gauss_calibration"), "{}", r.stderr);
    let rep = r.json("report.json");
    assert_eq!(rep["identities"]["gauss_calibration"]["passed"], false);
    assert_eq!(rep["flip_sign"], true);
}

#[test]
fn single_level_reports_no_order() {
    let dir = tempfile::tempdir().unwrap();
    let r = run(
        dir.path(),
        "verify",
        "[mesh]\nsource = sphere\n[verify]\nlevels = 2\njump_tol = 0.1\ndensities = 2\n",
        &[],
    );
    assert_eq!(r.code, 0, "{}", r.stderr);
    let rep = r.json("report.json");
    for (name, id) in rep["identities"].as_object().unwrap() {
        assert_eq!(id["orders"][0], "n/a", "{name}");
        assert_eq!(id["passed"], true, "{name}");
    }
    let csv = r.read("verify.csv");
    assert!(csv.lines().skip(1).all(|l| l.ends_with(",n/a")));
}

#[test]
fn sweep_marks_failed_rows_and_continues() {
    let dir = tempfile::tempdir().unwrap();
    let r = run(dir.path(), "sweep", "[mesh]\nlevel = 1\n[sweep]\naxis = corner\nvalues = 1.0, 0.0, 0.5\n", &[]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let csv = r.read("sweep.csv");
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 3);
    assert!(rows[0].contains(",ok,"), "{}", rows[0]);
    assert!(rows[1].contains(",failed: "), "{}", rows[1]);
    assert!(rows[2].contains(",ok,"), "{}", rows[2]);
    assert_eq!(r.json("report.json")["failed_rows"], 1);
}

#[test]
fn rho_sweep_finds_affine_kernel() {
    let dir = tempfile::tempdir().unwrap();
    let r = run(dir.path(), "sweep", "[mesh]\nlevel = 1\n[sweep]\naxis = rho\nvalues = -0.45, 0.0, 0.5, 0.95\n", &[]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    for row in r.json("report.json")["rows"].as_array().unwrap() {
        assert_eq!(row["kernel_dim"], 4, "{row}");
    }
}

#[test]
fn refinement_sweep_stays_invertible() {
    let dir = tempfile::tempdir().unwrap();
    let r = run(dir.path(), "sweep", "[mesh]\nsource = sphere\n[sweep]\naxis = refinement\nvalues = 0, 1, 2\n", &[]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let rows = r.json("report.json")["rows"].as_array().unwrap().clone();
    let svs: Vec<f64> = rows.iter().map(|r| f(&r["min_singular_value"])).collect();
    assert!(rows.iter().all(|r| r["kernel_dim"] == 0));
    // eigenvalues −½ − 1/(2(2k+1)) of −½I + K keep the spectrum away from 0
    assert!(svs.iter().all(|s| *s > 0.4), "{svs:?}");
}

#[test]
fn lame_sweep_reports_rigid_kernel() {
    let dir = tempfile::tempdir().unwrap();
    let r = run(
        dir.path(),
        "sweep",
        "[mesh]\nlevel = 1\n[kernel]\nfamily = lame\nmu = 1\n[sweep]\naxis = lame_lambda\nvalues = 1.0, 0.0\n",
        &[],
    );
    assert_eq!(r.code, 0, "{}", r.stderr);
    for row in r.json("report.json")["rows"].as_array().unwrap() {
        assert_eq!(row["kernel_dim"], 6, "{row}");
    }
}

#[test]
fn rh_dyadic_and_weights_commands() {
    let dir = tempfile::tempdir().unwrap();
    let r = run(dir.path(), "rh", "[mesh]\nsource = sphere\n[rh]\nlevels = 1, 2\n", &[]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let rep = r.json("report.json");
    assert!(rep["ratios"].as_array().unwrap().iter().all(|v| f(v).is_finite() && f(v) > 0.0));
    assert_eq!(r.read("rh.csv").lines().count(), 3);

    let r = run(dir.path(), "dyadic", "[mesh]\nsource = sphere\n[dyadic]\nlevels = 2\n", &[]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert_eq!(r.json("report.json")["passed"], true);
    assert_eq!(r.read("lambda.csv").lines().count(), 17);

    let r = run(dir.path(), "weights", "[mesh]\nsource = sphere\n[weights]\nlevels = 1, 2\nalphas = 0.4\n", &[]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let rep = r.json("report.json");
    assert_eq!(rep["uniform_constants"][0], rep["uniform_constants"][1]);
    assert_eq!(f(&rep["uniform_constants"][0]), 1.0);
    assert_eq!(rep["alphas"][0]["observed"], "inconclusive");
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let a = run(dir.path(), "solve", NEUMANN_Y1, &["--threads", "1"]);
    let b = run(dir.path(), "solve", NEUMANN_Y1, &["--threads", "2"]);
    assert_eq!(a.code, 0);
    assert_eq!(b.code, 0);
    for name in ["density.csv", "eval.csv", "schema.txt"] {
        assert_eq!(a.read(name), b.read(name), "{name}");
    }
    let strip = |s: String| s.lines().filter(|l| !l.contains("\"threads\"")).collect::<Vec<_>>().join("\n");
    assert_eq!(strip(a.read("report.json")), strip(b.read("report.json")));
    assert_eq!(b.json("report.json")["threads"], 2);
}
