//! Meshes, kernels and boundary data described by a config.

use layerpot::bvp::{BoundaryData, ProblemKind};
use layerpot::geometry::{
    build_triangulated_boundary, graph_patch_from_fn, parse_mesh, sphere_mesh, BoundaryMesh, SphereBase,
};
use layerpot::kernels::{conormal_of_field, fundamental_derivatives, Family, KernelSpec};
use layerpot::potentials::{DensityField, DirichletPair, NeumannPair, TangentialStencil};
use layerpot::scalar::{dist, Vec3};

use crate::config::Config;
use crate::error::CliError;

pub fn build_mesh(cfg: &Config, level: Option<usize>) -> Result<BoundaryMesh<f64>, CliError> {
    let source = cfg.str_or("mesh", "source", "sphere");
    let level = match level {
        Some(l) => {
            // read so the key counts as used
            cfg.usize_or("mesh", "level", 0)?;
            l
        }
        None => cfg.usize_or("mesh", "level", 2)?,
    };
    match source.as_str() {
        "sphere" => {
            let base = match cfg.str_or("mesh", "base", "icosahedron").as_str() {
                "icosahedron" => SphereBase::Icosahedron,
                "octahedron" => SphereBase::Octahedron,
                other => return Err(CliError::Config(format!("unknown sphere base {other:?}"))),
            };
            let center = cfg.point("mesh", "center")?.unwrap_or([0.0; 3]);
            let radius = cfg.f64_or("mesh", "radius", 1.0)?;
            Ok(sphere_mesh(base, level, center, radius)?)
        }
        "octahedron" => {
            let (v, f) = bipyramid(1.0);
            Ok(build_triangulated_boundary(&v, &f, level)?)
        }
        "bipyramid" => {
            let apex = cfg.f64_or("mesh", "apex", 1.0)?;
            if apex <= 0.0 {
                return Err(CliError::Config("[mesh] apex must be positive".into()));
            }
            let (v, f) = bipyramid(apex);
            Ok(build_triangulated_boundary(&v, &f, level)?)
        }
        "file" => {
            let p = cfg.resolve(&cfg.require("mesh", "path")?);
            let text = std::fs::read_to_string(&p)
                .map_err(|e| CliError::Io(format!("cannot read mesh file {}: {e}", p.display())))?;
            Ok(parse_mesh(&text, level)?)
        }
        "graph" => {
            let nx = cfg.usize_or("mesh", "nx", 33)?;
            let ny = cfg.usize_or("mesh", "ny", nx)?;
            let x0 = cfg.f64_or("mesh", "x0", -1.0)?;
            let x1 = cfg.f64_or("mesh", "x1", 1.0)?;
            let y0 = cfg.f64_or("mesh", "y0", -1.0)?;
            let y1 = cfg.f64_or("mesh", "y1", 1.0)?;
            let amp = cfg.f64_or("mesh", "amplitude", 0.0)?;
            Ok(graph_patch_from_fn(nx, ny, x0, x1, y0, y1, |x, y| amp * x.sin() * y.cos())?)
        }
        other => Err(CliError::Config(format!("unknown mesh source {other:?}"))),
    }
}

/// Octahedron with its two apexes at height `±apex`.
pub fn bipyramid(apex: f64) -> (Vec<[f64; 3]>, Vec<[usize; 3]>) {
    let v = vec![
        [1.0, 0.0, 0.0],
        [-1.0, 0.0, 0.0],
        [0.0, 1.0, 0.0],
        [0.0, -1.0, 0.0],
        [0.0, 0.0, apex],
        [0.0, 0.0, -apex],
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

pub fn build_kernel(cfg: &Config, dim: usize) -> Result<KernelSpec<f64>, CliError> {
    kernel_with(cfg, dim, None, None)
}

/// Kernel from the config with optional overrides of `λ` (Lamé) or `ρ`.
pub fn kernel_with(cfg: &Config, dim: usize, lambda: Option<f64>, rho: Option<f64>) -> Result<KernelSpec<f64>, CliError> {
    let family = cfg.str_or("kernel", "family", "laplace");
    match family.as_str() {
        "laplace" => Ok(KernelSpec::laplace(dim)?),
        "lame" => {
            let mu = cfg.f64_or("kernel", "mu", 1.0)?;
            let l = cfg.f64_or("kernel", "lambda", 1.0)?;
            Ok(KernelSpec::lame(dim, mu, lambda.unwrap_or(l))?)
        }
        "biharmonic" => {
            let r = cfg.f64_or("kernel", "rho", 0.25)?;
            Ok(KernelSpec::biharmonic(dim, rho.unwrap_or(r))?)
        }
        other => Err(CliError::Config(format!("unknown kernel family {other:?}"))),
    }
}

pub fn problem_kind(name: &str) -> Result<ProblemKind, CliError> {
    Ok(match name {
        "laplace_dirichlet" => ProblemKind::LaplaceDirichlet,
        "laplace_neumann" => ProblemKind::LaplaceNeumann,
        "weighted_neumann" => ProblemKind::WeightedLaplaceNeumann,
        "system_dirichlet" => ProblemKind::SystemDirichlet,
        "system_neumann" => ProblemKind::SystemNeumann,
        "traction" => ProblemKind::Traction,
        "biharmonic_dirichlet" => ProblemKind::BiharmonicDirichlet,
        "biharmonic_neumann" => ProblemKind::BiharmonicNeumann,
        other => return Err(CliError::Config(format!("unknown problem kind {other:?}"))),
    })
}

/// Named analytic field, or nodal values given directly.
#[derive(Clone, Debug)]
pub enum Recipe {
    /// `u = x₃`.
    Y1,
    Constant(f64),
    Linear([f64; 3]),
    /// `u = 1/|x − pole|`.
    PointSource([f64; 3]),
    /// `u = x₃²` (biharmonic).
    X3Squared,
    /// `u = Γ(x − pole) a` for the configured kernel.
    Kelvin { pole: [f64; 3], direction: [f64; 3] },
    /// Nodal data equal to `value` in every component, whatever the problem.
    Uniform(f64),
    /// Nodal data from a CSV file, one row per node.
    File(Vec<Vec<f64>>),
}

pub struct Jet {
    pub value: Vec<f64>,
    /// `grad[k*3 + i] = D_i u_k`.
    pub grad: Vec<f64>,
    pub hess: [[f64; 3]; 3],
    pub grad_lap: Vec3<f64>,
}

impl Recipe {
    pub fn from_config(cfg: &Config, section: &str) -> Result<Self, CliError> {
        let name = cfg.str_or(section, "data", "y1");
        Ok(match name.as_str() {
            "y1" => Recipe::Y1,
            "constant" => Recipe::Constant(cfg.f64_or(section, "value", 1.0)?),
            "linear" => Recipe::Linear(cfg.point(section, "direction")?.unwrap_or([1.0, 0.0, 0.0])),
            "point_source" => Recipe::PointSource(cfg.point(section, "pole")?.unwrap_or([0.0, 0.0, 3.0])),
            "x3_squared" => Recipe::X3Squared,
            "kelvin" => Recipe::Kelvin {
                pole: cfg.point(section, "pole")?.unwrap_or([0.0, 0.0, 3.0]),
                direction: cfg.point(section, "direction")?.unwrap_or([1.0, 0.5, -0.3]),
            },
            "uniform" => Recipe::Uniform(cfg.f64_or(section, "value", 1.0)?),
            "file" => {
                let p = cfg.resolve(&cfg.require(section, "data_file")?);
                Recipe::File(read_nodal_csv(&p)?)
            }
            other => return Err(CliError::Config(format!("unknown data recipe {other:?}"))),
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Recipe::Y1 => "y1",
            Recipe::Constant(_) => "constant",
            Recipe::Linear(_) => "linear",
            Recipe::PointSource(_) => "point_source",
            Recipe::X3Squared => "x3_squared",
            Recipe::Kelvin { .. } => "kelvin",
            Recipe::Uniform(_) => "uniform",
            Recipe::File(_) => "file",
        }
    }

    fn jet(&self, spec: &KernelSpec<f64>, x: Vec3<f64>) -> Result<Jet, CliError> {
        let mut j = Jet {
            value: vec![0.0],
            grad: vec![0.0; 3],
            hess: [[0.0; 3]; 3],
            grad_lap: [0.0; 3],
        };
        match self {
            Recipe::Y1 => {
                j.value[0] = x[2];
                j.grad[2] = 1.0;
            }
            Recipe::Constant(c) => j.value[0] = *c,
            Recipe::Linear(a) => {
                j.value[0] = a[0] * x[0] + a[1] * x[1] + a[2] * x[2];
                j.grad.copy_from_slice(a);
            }
            Recipe::PointSource(p) => {
                let d = dist(x, *p);
                if d == 0.0 {
                    return Err(CliError::Config("point source lies on a node".into()));
                }
                j.value[0] = 1.0 / d;
                for i in 0..3 {
                    j.grad[i] = -(x[i] - p[i]) / d.powi(3);
                    for k in 0..3 {
                        let delta = if i == k { 1.0 } else { 0.0 };
                        j.hess[i][k] = 3.0 * (x[i] - p[i]) * (x[k] - p[k]) / d.powi(5) - delta / d.powi(3);
                    }
                }
            }
            Recipe::X3Squared => {
                j.value[0] = x[2] * x[2];
                j.grad[2] = 2.0 * x[2];
                j.hess[2][2] = 2.0;
            }
            Recipe::Kelvin { pole, direction } => {
                let m = spec.m();
                let z = [x[0] - pole[0], x[1] - pole[1], x[2] - pole[2]];
                let kv = fundamental_derivatives(spec, &z[..spec.dim], 1)?;
                j.value = vec![0.0; m];
                j.grad = vec![0.0; m * 3];
                for k in 0..m {
                    for l in 0..m {
                        j.value[k] += kv.get(k, l) * direction[l];
                        for i in 0..spec.dim {
                            j.grad[k * 3 + i] += kv.derivative(k, l, &[i]).unwrap_or(0.0) * direction[l];
                        }
                    }
                }
            }
            Recipe::Uniform(_) | Recipe::File(_) => unreachable!("nodal recipes have no jets"),
        }
        Ok(j)
    }

    fn components(&self, spec: &KernelSpec<f64>) -> usize {
        match self {
            Recipe::Kelvin { .. } => spec.m(),
            Recipe::Uniform(_) => spec.m(),
            Recipe::File(rows) => rows.first().map_or(0, |r| r.len()),
            _ => 1,
        }
    }

    /// Boundary data for `kind` on `mesh`.
    pub fn boundary_data(&self, kind: ProblemKind, mesh: &BoundaryMesh<f64>, spec: &KernelSpec<f64>) -> Result<BoundaryData<f64>, CliError> {
        let m = spec.m();
        let n = mesh.dim();
        match self {
            Recipe::Uniform(v) => {
                if kind.is_biharmonic() {
                    return Err(CliError::Config("uniform data is not available for biharmonic problems".into()));
                }
                return Ok(BoundaryData::Field(DensityField::from_fn(mesh, m, |_, _| vec![*v; m])));
            }
            Recipe::File(rows) => {
                if rows.len() != mesh.len() {
                    return Err(CliError::Config(format!("data file has {} rows, the mesh {} nodes", rows.len(), mesh.len())));
                }
                if kind.is_biharmonic() {
                    return Err(CliError::Config("file data is not available for biharmonic problems".into()));
                }
                let values: Vec<f64> = rows.iter().flatten().copied().collect();
                return Ok(BoundaryData::Field(DensityField::new(mesh, self.components(spec), values)?));
            }
            _ => {}
        }
        if self.components(spec) != m && !kind.is_biharmonic() {
            return Err(CliError::Config(format!(
                "data recipe {} has {} components, the kernel {m}",
                self.name(),
                self.components(spec)
            )));
        }
        let jets: Vec<Jet> = mesh.nodes().iter().map(|x| self.jet(spec, *x)).collect::<Result<_, _>>()?;
        let normals = mesh.normals();
        match kind {
            ProblemKind::LaplaceDirichlet | ProblemKind::SystemDirichlet => {
                let values = jets.iter().flat_map(|j| j.value.clone()).collect();
                Ok(BoundaryData::Field(DensityField::new(mesh, m, values)?))
            }
            ProblemKind::LaplaceNeumann | ProblemKind::WeightedLaplaceNeumann | ProblemKind::SystemNeumann | ProblemKind::Traction => {
                let mut values = Vec::with_capacity(mesh.len() * m);
                for (j, nr) in jets.iter().zip(normals) {
                    let grad: Vec<f64> = (0..m).flat_map(|k| (0..n).map(move |i| j.grad[k * 3 + i])).collect();
                    values.extend(conormal_of_field(spec, &grad, &nr[..n]));
                }
                Ok(BoundaryData::Field(DensityField::new(mesh, m, values)?))
            }
            ProblemKind::BiharmonicDirichlet => {
                let mut pair = DirichletPair::zeros(mesh.len());
                for (i, (j, nr)) in jets.iter().zip(normals).enumerate() {
                    pair.f[i] = j.value[0];
                    pair.g[i] = (0..n).map(|a| j.grad[a] * nr[a]).sum();
                }
                Ok(BoundaryData::Dirichlet(pair))
            }
            ProblemKind::BiharmonicNeumann => {
                let rho = match spec.family {
                    Family::Biharmonic { rho, .. } => rho,
                    _ => return Err(CliError::Config("biharmonic Neumann data needs the biharmonic kernel".into())),
                };
                let hess: Vec<Vec<f64>> = jets.iter().map(|j| (0..n * n).map(|a| j.hess[a / n][a % n]).collect()).collect();
                let gl: Vec<Vec3<f64>> = jets.iter().map(|j| j.grad_lap).collect();
                let pair = NeumannPair::from_jets(mesh, rho, &hess, &gl)?;
                let st = TangentialStencil::new(mesh)?;
                Ok(BoundaryData::Neumann(pair.stacked(mesh, &st)))
            }
        }
    }
}

fn read_nodal_csv(p: &std::path::Path) -> Result<Vec<Vec<f64>>, CliError> {
    let text = std::fs::read_to_string(p).map_err(|e| CliError::Io(format!("cannot read data file {}: {e}", p.display())))?;
    let mut rows = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row: Result<Vec<f64>, _> = line.split(',').map(|s| s.trim().parse::<f64>()).collect();
        match row {
            Ok(r) if !r.is_empty() => rows.push(r),
            _ if k == 0 => continue,
            _ => return Err(CliError::Config(format!("{}:{}: not a row of numbers", p.display(), k + 1))),
        }
    }
    if rows.iter().any(|r| r.len() != rows[0].len()) {
        return Err(CliError::Config(format!("{}: rows differ in length", p.display())));
    }
    Ok(rows)
}
