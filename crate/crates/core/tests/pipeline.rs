use dynbc_core::assembly::assemble;
use dynbc_core::energy::energy_identity_residual;
use dynbc_core::mesh::{generate_annulus, generate_interval, generate_rectangle, Mesh, Side};
use dynbc_core::nonlin::{Kind, PowerSumSpec, ProblemSpec};
use dynbc_core::stepper::{integrate, IntegrateOptions, StepperConfig};
use nalgebra::DVector;
use proptest::prelude::*;

fn same_mesh(a: &Mesh, b: &Mesh) -> bool {
    a.dim() == b.dim()
        && a.num_nodes() == b.num_nodes()
        && a.num_elements() == b.num_elements()
        && a.num_facets() == b.num_facets()
        && (0..a.num_nodes()).all(|i| a.node(i).iter().zip(b.node(i)).all(|(x, y)| x.to_bits() == y.to_bits()))
        && (0..a.num_elements()).all(|e| a.element(e) == b.element(e))
        && (0..a.num_facets()).all(|f| a.facet(f) == b.facet(f) && a.facet_tag(f) == b.facet_tag(f))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn csv_round_trip_is_exact(len in 0.1f64..10.0, n in 2usize..40, r0 in 0.05f64..0.9, nr in 2usize..5, nt in 8usize..24,
                               nx in 2usize..8, ny in 2usize..8, side in 0usize..4) {
        let side = [Side::Top, Side::Bottom, Side::Left, Side::Right][side];
        for mesh in [
            generate_interval(len, n).unwrap(),
            generate_annulus(r0, 1.0, nr, nt).unwrap(),
            generate_rectangle(len, 1.0, nx, ny, side).unwrap(),
        ] {
            let back = Mesh::from_csv(&mesh.to_csv()).unwrap();
            prop_assert!(same_mesh(&mesh, &back));
        }
    }

    #[test]
    fn damped_energy_never_increases(amp in 0.1f64..3.0, m in 1.5f64..5.0) {
        let mesh = generate_interval(1.0, 30).unwrap();
        let ops = assemble(&mesh).unwrap();
        let damp = PowerSumSpec::power(Kind::Damping, m).unwrap();
        let spec = ProblemSpec::conservative(&mesh).with_damping(damp.clone(), damp);
        let nodal: Vec<f64> = (0..mesh.num_nodes()).map(|i| amp * mesh.node(i)[0]).collect();
        let u0 = ops.restrict_nodal(&nodal);
        let v0 = DVector::zeros(ops.num_dofs());
        let tr = integrate(&ops, &spec, &StepperConfig::fixed(2e-3), &u0, &v0, &IntegrateOptions::new(1.0)).unwrap();
        for w in tr.samples.windows(2) {
            prop_assert!(w[1].e <= w[0].e + 1e-10 * (1.0 + w[0].e.abs()));
        }
        prop_assert!(energy_identity_residual(&tr.samples).unwrap() < 1e-3);
    }
}

#[test]
fn integration_is_bitwise_reproducible() {
    let mesh = generate_annulus(0.4, 1.0, 3, 16).unwrap();
    let ops = assemble(&mesh).unwrap();
    let damp = PowerSumSpec::power(Kind::Damping, 3.0).unwrap();
    let src = PowerSumSpec::power(Kind::Source, 3.0).unwrap();
    let spec = ProblemSpec::conservative(&mesh).with_damping(damp.clone(), damp).with_sources(PowerSumSpec::zero(Kind::Source), src);
    let u0 = DVector::from_fn(ops.num_dofs(), |i, _| ((i * 7 % 11) as f64) / 11.0);
    let v0 = DVector::zeros(ops.num_dofs());
    let run = || integrate(&ops, &spec, &StepperConfig::default(), &u0, &v0, &IntegrateOptions::new(1.0)).unwrap();
    let (a, b) = (run(), run());
    assert_eq!(a.final_state.u.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), b.final_state.u.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
    assert_eq!(a.accepted_steps, b.accepted_steps);
    assert_eq!(a.history.len(), b.history.len());
}
