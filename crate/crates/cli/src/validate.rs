//! Built-in property suite: fast deterministic checks of the core
//! invariants, one pass/fail line each.

use dehomo3d::combing::{proper_rotations_24, rotation_angle, single_scale_widths, LayerContributions};
use dehomo3d::dehomog::sawtooth;
use dehomo3d::fem::{
    dense_solve, element_stiffness, element_stiffness_with_quadrature, BoundarySpec, ElasticLevel,
    MgSolver, MgcgConfig,
};
use dehomo3d::fields::{
    angle_penalty, smoothed_heaviside, width_projection, ContinuationSchedule, DensityFilter,
};
use dehomo3d::material::{
    frame_from_angles, rank3_elasticity, ElasticityTensor, EulerAngles, LayerWidths,
    MaterialConstants,
};
use dehomo3d::optimize::MmaState;
use dehomo3d::pipeline::load_preset;
use dehomo3d::postprocess::open_close;
use dehomo3d::Grid3;
use nalgebra::{Matrix3, Vector3};

type Check = (&'static str, fn() -> Result<(), String>);

fn seq(i: usize) -> f64 {
    // low-discrepancy sample in [0,1)
    (i as f64 * 0.6180339887498949).fract()
}

fn frames_orthonormal() -> Result<(), String> {
    for i in 0..200 {
        let a = EulerAngles::new(
            (seq(i) - 0.5) * 8.0,
            (seq(i + 1000) - 0.5) * 8.0,
            (seq(i + 2000) - 0.5) * 8.0,
        );
        let m = frame_from_angles(&a).matrix();
        let res = (m.transpose() * m - Matrix3::identity()).norm();
        if res > 1e-12 {
            return Err(format!("orthonormality residual {res}"));
        }
    }
    Ok(())
}

fn rank3_endpoints() -> Result<(), String> {
    let mat = MaterialConstants::new(1.0, 1e-3, 0.3).map_err(|e| e.to_string())?;
    let a = EulerAngles::new(0.4, -0.7, 1.2);
    let solid = rank3_elasticity(&LayerWidths::new(1.0, 0.2, 0.9), &a, &mat)
        .map_err(|e| e.to_string())?;
    let ep = ElasticityTensor::isotropic(1.0, 0.3);
    let err = (solid.voigt() - ep.voigt()).norm() / ep.voigt().norm();
    if err > 1e-12 {
        return Err(format!("solid endpoint off by {err}"));
    }
    let void = rank3_elasticity(&LayerWidths::new(0.0, 0.0, 0.0), &a, &mat)
        .map_err(|e| e.to_string())?;
    let em = ElasticityTensor::isotropic(1e-3, 0.3);
    let err = (void.voigt() - em.voigt()).norm() / em.voigt().norm();
    if err > 1e-12 {
        return Err(format!("void endpoint off by {err}"));
    }
    Ok(())
}

fn volume_fraction_identities() -> Result<(), String> {
    use dehomo3d::material::volume_fraction;
    let v = volume_fraction(&LayerWidths::new(0.5, 0.5, 0.5));
    if (v - 0.875).abs() > 1e-15 {
        return Err(format!("rho(0.5,0.5,0.5) = {v}"));
    }
    for i in 0..100 {
        let w = LayerWidths::new(seq(i), seq(i + 77), seq(i + 154));
        let direct = volume_fraction(&w);
        let complement = 1.0 - (1.0 - w.mu1) * (1.0 - w.mu2) * (1.0 - w.mu3);
        if (direct - complement).abs() > 1e-15 {
            return Err("inclusion-exclusion and complement forms disagree".into());
        }
    }
    Ok(())
}

fn filter_adjoint() -> Result<(), String> {
    let g = Grid3::new(5, 4, 3, 1.0);
    let f = DensityFilter::new(&g, 1.5);
    let u: Vec<f64> = (0..g.num_elements()).map(seq).collect();
    let v: Vec<f64> = (0..g.num_elements()).map(|i| seq(i + 321)).collect();
    let fu = f.apply(&u);
    let ftv = f.apply_adjoint(&v);
    let a: f64 = fu.iter().zip(&v).map(|(x, y)| x * y).sum();
    let b: f64 = u.iter().zip(&ftv).map(|(x, y)| x * y).sum();
    if (a - b).abs() > 1e-12 * a.abs().max(1.0) {
        return Err(format!("adjoint identity violated: {a} vs {b}"));
    }
    let uniform = f.apply(&vec![0.3; g.num_elements()]);
    if uniform.iter().any(|&x| (x - 0.3).abs() > 1e-13) {
        return Err("uniform field not preserved".into());
    }
    Ok(())
}

fn projection_behaviour() -> Result<(), String> {
    for step in ContinuationSchedule::standard().steps {
        if smoothed_heaviside(step.beta, step.eta, 0.0) != 0.0 {
            return Err("H(0) != 0".into());
        }
        let h1 = smoothed_heaviside(step.beta, step.eta, 1.0);
        if (h1 - 1.0).abs() > 1e-14 {
            return Err("H(1) != 1".into());
        }
        let mut prev = -1.0;
        for i in 0..=500 {
            let x = i as f64 / 500.0;
            let y = width_projection(x, step.beta, step.eta);
            if y < prev - 1e-12 || !(-1e-12..=1.0 + 1e-12).contains(&y) {
                return Err(format!(
                    "projection not monotone/bounded at x={x}, beta={}, eta={}",
                    step.beta, step.eta
                ));
            }
            prev = y;
        }
    }
    Ok(())
}

fn penalty_values() -> Result<(), String> {
    let e1 = Vector3::x();
    let d = std::f64::consts::FRAC_1_SQRT_2;
    let checks = [
        (Vector3::x(), 0.0),
        (-Vector3::x(), 0.0),
        (Vector3::y(), 0.0),
        (Vector3::new(d, d, 0.0), 1.0),
    ];
    for (v, expected) in checks {
        let p = angle_penalty(&e1, &v);
        if (p - expected).abs() > 1e-13 {
            return Err(format!("penalty({v:?}) = {p}, expected {expected}"));
        }
    }
    Ok(())
}

fn element_stiffness_checks() -> Result<(), String> {
    let t = ElasticityTensor::isotropic(1.0, 0.3);
    let k2 = element_stiffness(&t, 0.37);
    if (k2 - k2.transpose()).norm() > 1e-12 {
        return Err("element matrix asymmetric".into());
    }
    let k3 = element_stiffness_with_quadrature(&t, 0.37, 3);
    if (k2 - k3).norm() > 1e-10 * k3.norm() {
        return Err("2- and 3-point quadrature disagree".into());
    }
    Ok(())
}

fn mgcg_matches_dense() -> Result<(), String> {
    let grid = Grid3::new(4, 2, 2, 0.5);
    let mut bc = BoundarySpec::new(&grid, 3);
    for k in 0..=grid.nz {
        for j in 0..=grid.ny {
            for c in 0..3 {
                bc.fix(grid.node_index(0, j, k), c);
            }
        }
    }
    bc.add_load(grid.node_index(4, 1, 2), 2, -1.0);
    let tensors: Vec<_> = (0..grid.num_elements())
        .map(|_| *ElasticityTensor::isotropic(1.0, 0.3).voigt())
        .collect();
    let op = ElasticLevel::from_tensors(&grid, &tensors, bc.shared_fixed());
    let expected = dense_solve(&op, &bc.loads);
    let mut solver = MgSolver::new(
        Box::new(op),
        MgcgConfig {
            tol: 1e-11,
            max_direct_dofs: 100,
            ..Default::default()
        },
    );
    let mut x = vec![0.0; bc.loads.len()];
    solver.solve(&bc.loads, &mut x).map_err(|e| e.to_string())?;
    let scale = expected.iter().map(|v| v.abs()).fold(0.0, f64::max);
    for i in 0..x.len() {
        if (x[i] - expected[i]).abs() > 1e-8 * scale {
            return Err(format!("dof {i} differs from the dense solve"));
        }
    }
    Ok(())
}

fn mma_toy() -> Result<(), String> {
    let mut state = MmaState::new(vec![0.0], vec![1.0], vec![0.5], 1);
    let mut x = vec![0.9];
    let mut best = f64::INFINITY;
    for _ in 0..50 {
        let df0 = vec![2.0 * (x[0] - 0.3)];
        x = state
            .update(&x, &df0, &[-1.0], &[vec![0.0]])
            .map_err(|e| e.to_string())?;
        best = best.min((x[0] - 0.3).abs());
    }
    if best > 1e-3 {
        return Err(format!("quadratic toy stalled at distance {best}"));
    }
    Ok(())
}

fn rotation_group() -> Result<(), String> {
    let rots = proper_rotations_24();
    if rots.len() != 24 {
        return Err(format!("{} rotations", rots.len()));
    }
    for r in &rots {
        if (r.determinant() - 1.0).abs() > 1e-12 {
            return Err("improper element".into());
        }
    }
    for a in &rots {
        for b in &rots {
            let c = a * b;
            if !rots.iter().any(|r| (r - c).norm() < 1e-12) {
                return Err("group not closed".into());
            }
        }
    }
    if rotation_angle(&rots[0]) > 1e-12 {
        return Err("identity angle nonzero".into());
    }
    Ok(())
}

fn single_scale_round_trip() -> Result<(), String> {
    for i in 0..200 {
        let w = [
            0.02 + 0.9 * seq(i),
            0.02 + 0.9 * seq(i + 501),
            0.02 + 0.9 * seq(i + 1002),
        ];
        let rho = 1.0 - (1.0 - w[0]) * (1.0 - w[1]) * (1.0 - w[2]);
        let p = dehomo3d::combing::layer_contributions(&w, rho);
        let (_, ws) = single_scale_widths(&p, rho);
        let back = 1.0 - (1.0 - ws[0]) * (1.0 - ws[1]) * (1.0 - ws[2]);
        if (back - rho).abs() > 1e-10 {
            return Err(format!("round trip {rho} -> {back}"));
        }
        let sum = p.p1 + p.p2 + p.p3;
        if (sum - 1.0).abs() > 1e-10 {
            return Err(format!("contributions sum to {sum}"));
        }
    }
    let _ = LayerContributions {
        p1: 1.0,
        p2: 0.0,
        p3: 0.0,
    };
    Ok(())
}

fn sawtooth_periodic() -> Result<(), String> {
    use std::f64::consts::PI;
    if sawtooth(0.0) != 0.0 || (sawtooth(PI / 2.0) - 0.5).abs() > 1e-15 {
        return Err("sawtooth fixed values wrong".into());
    }
    for i in 0..100 {
        let t = (seq(i) - 0.5) * 60.0;
        if (sawtooth(t + 2.0 * PI) - sawtooth(t)).abs() > 1e-12 {
            return Err(format!("period violated at t = {t}"));
        }
    }
    Ok(())
}

fn morphology_idempotent() -> Result<(), String> {
    let grid = Grid3::new(12, 10, 8, 1.0);
    let mut data: Vec<u8> = (0..grid.num_elements())
        .map(|i| u8::from(seq(i) > 0.55))
        .collect();
    open_close(&grid, &mut data, 1.5);
    let snapshot = data.clone();
    open_close(&grid, &mut data, 1.5);
    if snapshot != data {
        return Err("open-close not idempotent on its own output".into());
    }
    Ok(())
}

fn preset_resultants() -> Result<(), String> {
    let mat = MaterialConstants::new(1.0, 1e-3, 0.3).map_err(|e| e.to_string())?;
    for (name, dims) in [
        ("michell_cantilever", (48, 24, 24)),
        ("electrical_mast", (24, 24, 72)),
        ("l_beam", (48, 48, 24)),
    ] {
        let p = load_preset(name, dims, mat).map_err(|e| e.to_string())?;
        let r = p.problem.boundary.load_resultant();
        let total = (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt();
        if (total - 1.0).abs() > 1e-12 {
            return Err(format!("{name}: load resultant {total}"));
        }
    }
    let p = load_preset("torsion_sphere", (48, 48, 48), mat).map_err(|e| e.to_string())?;
    let total: f64 = p.problem.boundary.loads.iter().map(|v| v.abs()).sum();
    if (total - 1.0).abs() > 1e-12 {
        return Err(format!("torsion circulation magnitude {total}"));
    }
    Ok(())
}

pub fn run_all() -> bool {
    let checks: Vec<Check> = vec![
        ("frame orthonormality", frames_orthonormal),
        ("rank-3 endpoint tensors", rank3_endpoints),
        ("volume fraction identities", volume_fraction_identities),
        ("density filter adjoint", filter_adjoint),
        ("width projection monotone", projection_behaviour),
        ("angle penalty values", penalty_values),
        ("hex element stiffness", element_stiffness_checks),
        ("multigrid CG vs dense", mgcg_matches_dense),
        ("MMA quadratic toy", mma_toy),
        ("24 proper rotations", rotation_group),
        ("single-scale widths", single_scale_round_trip),
        ("sawtooth periodicity", sawtooth_periodic),
        ("open-close idempotent", morphology_idempotent),
        ("preset load resultants", preset_resultants),
    ];
    let mut ok = true;
    for (name, f) in checks {
        match f() {
            Ok(()) => println!("[PASS] {name}"),
            Err(msg) => {
                ok = false;
                println!("[FAIL] {name}: {msg}");
            }
        }
    }
    ok
}
