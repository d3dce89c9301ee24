use layerpot::geometry::*;
use layerpot::scalar::*;
use proptest::prelude::*;

fn cube() -> (Vec<[f64; 3]>, Vec<[usize; 3]>) {
    let v = vec![
        [0.0, 0.0, 0.0],
        [1.0, 0.0, 0.0],
        [1.0, 1.0, 0.0],
        [0.0, 1.0, 0.0],
        [0.0, 0.0, 1.0],
        [1.0, 0.0, 1.0],
        [1.0, 1.0, 1.0],
        [0.0, 1.0, 1.0],
    ];
    let f = vec![
        [0, 2, 1],
        [0, 3, 2],
        [4, 5, 6],
        [4, 6, 7],
        [0, 1, 5],
        [0, 5, 4],
        [1, 2, 6],
        [1, 6, 5],
        [2, 3, 7],
        [2, 7, 6],
        [3, 0, 4],
        [3, 4, 7],
    ];
    (v, f)
}

fn octahedron() -> (Vec<[f64; 3]>, Vec<[usize; 3]>) {
    let v = vec![
        [1.0, 0.0, 0.0],
        [-1.0, 0.0, 0.0],
        [0.0, 1.0, 0.0],
        [0.0, -1.0, 0.0],
        [0.0, 0.0, 1.0],
        [0.0, 0.0, -1.0],
    ];
    let f = vec![
        [0, 2, 4],
        [2, 1, 4],
        [1, 3, 4],
        [3, 0, 4],
        [2, 0, 5],
        [1, 2, 5],
        [3, 1, 5],
        [0, 3, 5],
    ];
    (v, f)
}

#[test]
fn unit_square_perimeter_and_gauss() {
    let sq = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
    let m = build_polygon_boundary::<f64>(&sq, 4).unwrap();
    assert_eq!(m.len(), 16);
    assert!((m.total_measure() - 4.0).abs() < 1e-12);
    assert_eq!(m.gauss_vector(), [0.0, 0.0, 0.0]);
    for n in m.normals() {
        assert!((norm(*n) - 1.0).abs() < 1e-12);
    }
    // outward: the bottom edge normal points down
    assert!((m.normals()[0][1] + 1.0).abs() < 1e-15);
}

/// Smallest slope achievable at a corner by a chart along some axis t,
/// found by scanning the axis direction.
fn corner_slope_oracle(a: [f64; 2], b: [f64; 2]) -> f64 {
    let mut best = f64::INFINITY;
    for k in 0..200_000 {
        let phi = std::f64::consts::TAU * k as f64 / 200_000.0;
        let t = [phi.cos(), phi.sin()];
        let (da, db) = (a[0] * t[0] + a[1] * t[1], b[0] * t[0] + b[1] * t[1]);
        if da <= 0.0 || db <= 0.0 {
            continue;
        }
        let sa = (a[0] * t[1] - a[1] * t[0]).abs() / da;
        let sb = (b[0] * t[1] - b[1] * t[0]).abs() / db;
        best = best.min(sa.max(sb));
    }
    best
}

#[test]
fn sheared_l_shape_reports_lipschitz_above_one() {
    let pts = [[0.0, 0.0], [2.0, 0.0], [2.0, 1.0], [1.2, 1.0], [1.0, 2.0], [0.0, 2.0]];
    let m = build_polygon_boundary::<f64>(&pts, 3).unwrap();
    let n = pts.len();
    let mut oracle: f64 = 0.0;
    for i in 0..n {
        let p = pts[(i + n - 1) % n];
        let q = pts[i];
        let r = pts[(i + 1) % n];
        let a = [q[0] - p[0], q[1] - p[1]];
        let b = [r[0] - q[0], r[1] - q[1]];
        let (la, lb) = ((a[0] * a[0] + a[1] * a[1]).sqrt(), (b[0] * b[0] + b[1] * b[1]).sqrt());
        oracle = oracle.max(corner_slope_oracle([a[0] / la, a[1] / la], [b[0] / lb, b[1] / lb]));
    }
    assert!(oracle > 1.0);
    assert!((m.lipschitz() - oracle).abs() < 1e-3, "{} vs {}", m.lipschitz(), oracle);
}

#[test]
fn polygon_errors() {
    let bow = [[0.0, 0.0], [1.0, 1.0], [1.0, 0.0], [0.0, 1.0]];
    assert!(build_polygon_boundary::<f64>(&bow, 1).is_err());
    let dup = [[0.0, 0.0], [0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
    assert!(build_polygon_boundary::<f64>(&dup, 1).is_err());
    let cw = [[0.0, 0.0], [0.0, 1.0], [1.0, 1.0], [1.0, 0.0]];
    assert!(build_polygon_boundary::<f64>(&cw, 1).is_err());
    let line = [[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]];
    assert!(build_polygon_boundary::<f64>(&line, 1).is_err());
}

#[test]
fn cube_area_and_gauss() {
    let (v, f) = cube();
    let m = build_triangulated_boundary(&v, &f, 0).unwrap();
    assert!((m.total_measure() - 6.0).abs() < 1e-14);
    assert!(norm(m.gauss_vector()) <= 1e-10 * 6.0);
    let m2 = build_triangulated_boundary(&v, &f, 2).unwrap();
    assert_eq!(m2.len(), 12 * 16);
    assert!((m2.total_measure() - 6.0).abs() < 1e-12);
    assert!(norm(m2.gauss_vector()) <= 1e-10 * 6.0);
    // right-angle edges: tan(45°)
    assert!((m.lipschitz() - 1.0).abs() < 1e-12);
}

#[test]
fn refined_octahedron_area() {
    let (v, f) = octahedron();
    // project midpoints onto the sphere by hand to get the inscribed polyhedron
    let mut verts = v.clone();
    let mut faces = f.clone();
    for _ in 0..3 {
        let mut nf = Vec::new();
        let mut cache = std::collections::HashMap::new();
        let mut midp = |a: usize, b: usize, verts: &mut Vec<[f64; 3]>| -> usize {
            *cache.entry((a.min(b), a.max(b))).or_insert_with(|| {
                let m = normalize(add(verts[a], verts[b]));
                verts.push(m);
                verts.len() - 1
            })
        };
        for t in &faces {
            let ab = midp(t[0], t[1], &mut verts);
            let bc = midp(t[1], t[2], &mut verts);
            let ca = midp(t[2], t[0], &mut verts);
            nf.extend([[t[0], ab, ca], [ab, t[1], bc], [ca, bc, t[2]], [ab, bc, ca]]);
        }
        faces = nf;
    }
    let m = build_triangulated_boundary(&verts, &faces, 0).unwrap();
    assert_eq!(m.panels().len(), 512);
    let direct: f64 = faces
        .iter()
        .map(|t| 0.5 * norm(cross(sub(verts[t[1]], verts[t[0]]), sub(verts[t[2]], verts[t[0]]))))
        .sum();
    assert!((m.total_measure() - direct).abs() < 1e-12);
    let four_pi = 4.0 * std::f64::consts::PI;
    assert!((direct - four_pi).abs() / four_pi < 0.02, "{direct}");
    assert!(norm(m.gauss_vector()) <= 1e-10 * direct);
}

#[test]
fn sphere_mesh_exact_area() {
    let m = unit_sphere::<f64>(SphereBase::Octahedron, 3);
    assert_eq!(m.len(), 512);
    let four_pi = 4.0 * std::f64::consts::PI;
    assert!((m.total_measure() - four_pi).abs() < 1e-10);
    let m = unit_sphere::<f64>(SphereBase::Icosahedron, 3);
    assert_eq!(m.len(), 1280);
    assert!((m.total_measure() - four_pi).abs() < 1e-10);
    for (x, n) in m.nodes().iter().zip(m.normals()) {
        assert!((norm(*x) - 1.0).abs() < 1e-14);
        assert!(dist(*x, *n) < 1e-14);
    }
    assert!(norm(m.gauss_vector()) < 1e-10);
}

#[test]
fn triangulation_errors() {
    let (v, f) = cube();
    let open: Vec<_> = f[..11].to_vec();
    assert!(matches!(
        build_triangulated_boundary(&v, &open, 0),
        Err(layerpot::Error::Geometry(_))
    ));
    let inverted: Vec<_> = f.iter().map(|t| [t[0], t[2], t[1]]).collect();
    assert!(build_triangulated_boundary(&v, &inverted, 0).is_err());
    let mut flipped = f.clone();
    flipped[0] = [0, 1, 2];
    assert!(build_triangulated_boundary(&v, &flipped, 0).is_err());
}

#[test]
fn flat_graph_patch() {
    let m = graph_patch_from_fn::<f64>(64, 64, -1.0, 1.0, -1.0, 1.0, |_, _| 0.0).unwrap();
    assert!(!m.is_closed());
    assert!((m.total_measure() - 4.0).abs() < 1e-12);
    for n in m.normals() {
        assert_eq!(*n, [0.0, 0.0, -1.0]);
    }
    assert_eq!(m.lipschitz(), 0.0);
}

#[test]
fn cone_graph_lipschitz() {
    let m = graph_patch_from_fn::<f64>(33, 33, -1.0, 1.0, -1.0, 1.0, |x, _| x.abs()).unwrap();
    assert!((m.lipschitz() - 1.0).abs() < 1e-12);
}

#[test]
fn sloped_graph_area() {
    let m = graph_patch_from_fn::<f64>(17, 9, -1.0, 1.0, -1.0, 1.0, |x, _| 0.5 * x).unwrap();
    assert!((m.total_measure() - 4.0 * 1.25f64.sqrt()).abs() < 1e-6);
    let g = m.graph().unwrap();
    let p = [0.3, -0.2];
    assert_eq!(g.phi_inv(g.phi(p)), p);
    assert!((g.phi(p)[2] - 0.15).abs() < 1e-14);
}

#[test]
fn graph_patch_rejects_nan() {
    let r = graph_patch_from_fn::<f64>(4, 4, 0.0, 1.0, 0.0, 1.0, |x, _| if x > 0.5 { f64::NAN } else { 0.0 });
    assert!(r.is_err());
}

#[test]
fn surface_ball_limits() {
    let m = unit_sphere::<f64>(SphereBase::Icosahedron, 2);
    assert_eq!(surface_ball(&m, 7, 2.5).len(), m.len());
    assert_eq!(surface_ball(&m, 7, 1e-9), vec![7]);
}

#[test]
fn surface_ball_cap_fraction() {
    let m = unit_sphere::<f64>(SphereBase::Icosahedron, 3);
    let p = m.nearest_node([0.0, 0.0, 1.0]);
    let r = 0.5;
    let ball = surface_ball(&m, p, r);
    // chord r = 2 sin(θ/2) ⇒ cos θ = 1 − r²/2; cap fraction (1 − cos θ)/2
    let cos_t = 1.0 - r * r / 2.0;
    let frac = (1.0 - cos_t) / 2.0;
    let got = ball.len() as f64 / m.len() as f64;
    assert!((got - frac).abs() / frac < 0.10, "{got} vs {frac}");
}

#[test]
fn dyadic_tree_structure() {
    let m = graph_patch_from_fn::<f64>(64, 64, -1.0, 1.0, -1.0, 1.0, |x, y| 0.1 * x * y).unwrap();
    let t0 = dyadic_cubes(&m, 0).unwrap();
    assert_eq!(t0.cubes.len(), 1);
    assert_eq!(t0.root().nodes.len(), m.len());
    let t = dyadic_cubes(&m, 3).unwrap();
    let leaves: Vec<_> = t.leaves().collect();
    assert_eq!(leaves.len(), 64);
    let mut seen = vec![0usize; m.len()];
    for q in &leaves {
        for &i in &q.nodes {
            seen[i] += 1;
        }
    }
    assert!(seen.iter().all(|&s| s == 1));
    // 63 cells per axis split 31/32: siblings differ by at most one row of 63 nodes
    for q in t.at_depth(1) {
        let n = q.nodes.len() as i64;
        for r in t.at_depth(1) {
            assert!((n - r.nodes.len() as i64).abs() <= 2 * 63 + 1);
        }
    }
    let kids = &t.root().children;
    let counts: Vec<usize> = kids.iter().map(|&k| t.cubes[k].nodes.len()).collect();
    assert_eq!(counts.iter().sum::<usize>(), m.len());
    let row_split: Vec<usize> = vec![31 * 31, 32 * 31, 31 * 32, 32 * 32];
    assert_eq!(counts, row_split);
}

#[test]
fn dyadic_dilation_clips() {
    let m = graph_patch_from_fn::<f64>(32, 32, -1.0, 1.0, -1.0, 1.0, |_, _| 0.0).unwrap();
    let t = dyadic_cubes(&m, 2).unwrap();
    let q = t.at_depth(2).next().unwrap();
    let d = t.dilation(q, 2.0);
    assert!(d.clipped);
    let inner = t.at_depth(2).find(|q| q.lo == [-0.5, -0.5]).unwrap();
    let d = t.dilation(inner, 2.0);
    assert!(!d.clipped);
    assert!((d.hi[0] - d.lo[0] - 2.0 * (inner.hi[0] - inner.lo[0])).abs() < 1e-15);
    assert!(d.nodes.len() > inner.nodes.len());
}

#[test]
fn dyadic_needs_graph() {
    let m = unit_sphere::<f64>(SphereBase::Octahedron, 1);
    assert!(matches!(dyadic_cubes(&m, 2), Err(layerpot::Error::UnsupportedGeometry(_))));
    let chart = chart_cubes(&m, 0, 0.4, 2).unwrap();
    assert_eq!(chart.leaves().count(), 16);
}

#[test]
fn flat_patch_cone_samples_all_accepted() {
    let m = graph_patch_from_fn::<f64>(33, 33, -1.0, 1.0, -1.0, 1.0, |_, _| 0.0).unwrap();
    let p = m.nearest_node([0.0, 0.0, 0.0]);
    let s = cone_samples(&m, p, 0.25, 5);
    assert_eq!(s.rejected, 0);
    assert_eq!(s.interior.len(), 10);
    assert_eq!(s.exterior.len(), 10);
    let x0 = m.nodes()[p];
    for (j, x) in s.interior.iter().step_by(2).enumerate() {
        let d = 0.25 * 0.5f64.powi(j as i32);
        assert!((dist(*x, x0) - d).abs() < 1e-15);
        assert!(x[2] > 0.0);
    }
    for x in s.interior.iter().chain(&s.exterior) {
        assert!(dist(*x, x0) < 2.0 * m.distance(*x));
    }
}

#[test]
fn aperture_rejects_shallow_points() {
    let m = graph_patch_from_fn::<f64>(33, 33, -1.0, 1.0, -1.0, 1.0, |_, _| 0.0).unwrap();
    let p = m.nearest_node([0.0, 0.0, 0.0]);
    let x0 = m.nodes()[p];
    // |x − P| = 2.5·dist
    let h = 0.04;
    let t = (2.5f64 * 2.5 - 1.0).sqrt() * h;
    let x = add(x0, [t, 0.0, h]);
    assert!((dist(x, x0) / m.distance(x) - 2.5).abs() < 1e-12);
    assert!(!in_cone(&m, x0, x, 0.25));
    let y = add(x0, [0.0, 0.0, h]);
    assert!(in_cone(&m, x0, y, 0.25));
}

#[test]
fn distance_matches_brute_force() {
    let (v, f) = cube();
    let m = build_triangulated_boundary(&v, &f, 2).unwrap();
    let mut rng = 12345u64;
    let mut next = || {
        rng = rng.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((rng >> 11) as f64 / (1u64 << 53) as f64) * 3.0 - 1.0
    };
    for _ in 0..200 {
        let x = [next(), next(), next()];
        let mut brute = f64::INFINITY;
        for pan in m.panels() {
            let p = |k: usize| m.vertices()[pan.vertices[k]];
            brute = brute.min(point_triangle_distance(x, p(0), p(1), p(2)));
        }
        assert!((m.distance(x) - brute).abs() < 1e-14);
        let inside = (0..3).all(|k| x[k] > 0.0 && x[k] < 1.0);
        assert_eq!(m.is_interior(x), inside);
    }
}

#[test]
fn mesh_text_roundtrip() {
    let text = "dim 3 closed 1\n\
                v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nv 0 0 1\nv 1 0 1\nv 1 1 1\nv 0 1 1\n\
                f 0 2 1\nf 0 3 2\nf 4 5 6\nf 4 6 7\nf 0 1 5\nf 0 5 4\n\
                f 1 2 6\nf 1 6 5\nf 2 3 7\nf 2 7 6\nf 3 0 4\nf 3 4 7\n";
    let m = parse_mesh::<f64>(text, 0).unwrap();
    assert!((m.total_measure() - 6.0).abs() < 1e-14);
    let again = parse_mesh::<f64>(&write_mesh(&m), 0).unwrap();
    assert_eq!(again.nodes(), m.nodes());

    let g = "dim 3 closed 0\ng 3 2 0 1 0 1\n0 0.5 1\n0 0.5 1\n";
    let m = parse_mesh::<f64>(g, 0).unwrap();
    assert_eq!(m.len(), 2);
    assert!((m.total_measure() - 2f64.sqrt()).abs() < 1e-12);

    let poly = "dim 2 closed 1\nv 0 0\nv 1 0\nv 1 1\nv 0 1\nf 0 1\nf 1 2\nf 2 3\nf 3 0\n";
    let m = parse_mesh::<f64>(poly, 1).unwrap();
    assert_eq!(m.len(), 8);

    assert!(matches!(parse_mesh::<f64>("dim 3 closed 1\nv 0 0\n", 0), Err(layerpot::Error::Parse { line: 2, .. })));
    assert!(parse_mesh::<f64>("v 0 0 0\n", 0).is_err());
}

#[test]
fn single_precision_mesh() {
    let m = unit_sphere::<f32>(SphereBase::Octahedron, 2);
    assert!((m.total_measure() - 4.0 * std::f32::consts::PI).abs() < 1e-4);
}

proptest! {
    #[test]
    fn surface_ball_monotone(p in 0usize..320, r1 in 0.0f64..2.5, dr in 0.0f64..1.0) {
        let m = unit_sphere::<f64>(SphereBase::Icosahedron, 2);
        let a = surface_ball(&m, p, r1);
        let b = surface_ball(&m, p, r1 + dr);
        prop_assert!(a.iter().all(|i| b.contains(i)));
    }

    #[test]
    fn regular_polygon_gauss_zero(k in 3usize..12, r in 0.1f64..10.0, m in 1usize..6) {
        let pts: Vec<[f64; 2]> = (0..k)
            .map(|i| {
                let t = std::f64::consts::TAU * i as f64 / k as f64;
                [r * t.cos(), r * t.sin()]
            })
            .collect();
        let mesh = build_polygon_boundary(&pts, m).unwrap();
        prop_assert!(norm(mesh.gauss_vector()) <= 1e-12 * mesh.total_measure());
        for n in mesh.normals() {
            prop_assert!((norm(*n) - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn dyadic_levels_partition(depth in 0usize..4, nx in 5usize..40, ny in 5usize..40) {
        let m = graph_patch_from_fn::<f64>(nx, ny, -1.0, 2.0, 0.0, 1.0, |x, y| 0.2 * (x * y).sin()).unwrap();
        let t = dyadic_cubes(&m, depth).unwrap();
        for d in 0..=depth {
            let mut seen = vec![0usize; m.len()];
            for q in t.at_depth(d) {
                for &i in &q.nodes {
                    seen[i] += 1;
                }
            }
            prop_assert!(seen.iter().all(|&s| s == 1));
        }
        for q in &t.cubes {
            if !q.children.is_empty() {
                let s: usize = q.children.iter().map(|&c| t.cubes[c].nodes.len()).sum();
                prop_assert_eq!(s, q.nodes.len());
            }
        }
    }

    #[test]
    fn cone_samples_satisfy_aperture(p in 0usize..128, trunc in 0.05f64..0.5) {
        let m = unit_sphere::<f64>(SphereBase::Octahedron, 2);
        let s = cone_samples(&m, p, trunc, 4);
        let x0 = m.nodes()[p];
        for x in s.interior.iter().chain(&s.exterior) {
            prop_assert!(dist(*x, x0) < 2.0 * m.distance(*x));
            prop_assert!(dist(*x, x0) <= trunc);
        }
        for x in &s.interior {
            prop_assert!(m.is_interior(*x));
        }
    }
}
