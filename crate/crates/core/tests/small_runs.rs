use std::sync::Arc;

use dislocation_iga::config::RunConfig;
use dislocation_iga::pipeline::{elastic_stage, plastic_stage, run_pipeline, Mode};
use dislocation_iga::plastic::{burgers_circuit, square_loop};

fn small(preset: &str, burgers: f64, dir: Option<&std::path::Path>) -> RunConfig {
    let out = dir.map_or(String::new(), |d| format!("[output]\ndir = {:?}\nvtk_samples = [9, 9, 5]\n", d.display().to_string()));
    let text = format!(
        "[domain]\nextents = [16.0, 16.0, 8.0]\n\
         [grid]\nbases = [16, 16, 6]\n\
         [dislocation]\npreset = \"{preset}\"\nburgers = {burgers}\ncore_radius = 1.5\n{out}"
    );
    RunConfig::from_toml_str(&text, &[]).unwrap()
}

#[test]
fn plastic_solution_is_linear_in_burgers() {
    let a = plastic_stage(&small("screw", 1.0, None)).unwrap();
    // Halving b and the tolerance together scales every Krylov iterate exactly.
    let mut half = small("screw", 0.5, None);
    half.solver.minres_tol *= 0.5;
    let b = plastic_stage(&half).unwrap();
    let peak = a.field.max_abs_coefficient(2, 0).max(a.field.max_abs_coefficient(2, 1));
    let diff = a
        .field
        .theta
        .iter()
        .zip(&b.field.theta)
        .flat_map(|(x, y)| (0..9).map(move |k| (x[k / 3][k % 3] - 2.0 * y[k / 3][k % 3]).abs()))
        .fold(0.0, f64::max);
    assert!(diff <= 1e-13 * peak, "{diff} vs {peak}");
    assert!(a.report.minres_residual < 1e-5);
}

#[test]
fn screw_circuit_recovers_burgers_vector() {
    let sol = plastic_stage(&small("screw", 1.0, None)).unwrap();
    let patch = sol.field.patch().clone();
    let lp = square_loop(&patch, [0.0, 0.0], 6.0, 0.0).unwrap();
    let b = burgers_circuit(&sol.field, &lp, 6).unwrap();
    assert!((b[2] - 1.0).abs() < 0.03, "{b:?}");
    assert!(b[0].abs() < 1e-3 && b[1].abs() < 1e-3, "{b:?}");
    let off = square_loop(&patch, [5.0, 5.0], 1.0, 0.0).unwrap();
    let z = burgers_circuit(&sol.field, &off, 6).unwrap();
    assert!(z[2].abs() < 0.02, "{z:?}");
}

#[test]
fn edge_field_mirrors_screw_field_in_first_row() {
    let s = plastic_stage(&small("screw", 1.0, None)).unwrap();
    let e = plastic_stage(&small("edge", 1.0, None)).unwrap();
    for (ts, te) in s.field.theta.iter().zip(&e.field.theta) {
        for j in 0..3 {
            assert!((ts[2][j] - te[0][j]).abs() < 1e-9);
        }
    }
}

#[test]
fn elastic_energy_scales_quadratically() {
    let cfg = small("screw", 1.0, None);
    let base = Arc::new(plastic_stage(&cfg).unwrap().field);
    let mut energy = Vec::new();
    for s in [0.1, 0.2] {
        let (prob, sol) = elastic_stage(&cfg, Arc::new(base.scaled(s))).unwrap();
        assert!(sol.relative_residual <= 1e-6);
        assert!(sol.iterations <= 25);
        energy.push(prob.strain_energy(&sol.state).unwrap());
    }
    let ratio = energy[1] / energy[0];
    assert!((3.5..=4.5).contains(&ratio), "{ratio}");
}

#[test]
fn pipeline_outputs_are_reproducible() {
    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let o1 = run_pipeline(&small("edge", 0.2, Some(d1.path())), &Mode::Full).ok().unwrap();
    let o2 = run_pipeline(&small("edge", 0.2, Some(d2.path())), &Mode::Full).ok().unwrap();
    assert_eq!(o1.files, o2.files);
    for name in &o1.files {
        if name == "metadata.txt" || name == "config.toml" {
            continue;
        }
        let a = std::fs::read(d1.path().join(name)).unwrap();
        let b = std::fs::read(d2.path().join(name)).unwrap();
        assert!(a == b, "{name} differs");
    }
}

#[test]
fn plastic_residuals_stay_within_frozen_bounds() {
    let sol = plastic_stage(&small("screw", 1.0, None)).unwrap();
    let r = sol.report;
    // Measured 0.033 and 0.074 of ||Theta|| on this grid.
    assert!(r.divergence_residual <= 0.04 * r.theta_norm, "{r:?}");
    assert!(r.structure_residual <= 0.09 * r.theta_norm, "{r:?}");
}
