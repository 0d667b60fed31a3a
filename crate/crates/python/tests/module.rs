use pyo3::prelude::*;
use pyo3::types::PyDict;

#[test]
fn bindings_solve_and_evaluate_from_python() {
    Python::initialize();
    Python::attach(|py| {
        let module = pyo3::wrap_pymodule!(stealthlqg_py::stealthlqg_py)(py);
        let m = module.bind(py);
        let names: Vec<String> = m.getattr("preset_names").unwrap().call0().unwrap().extract().unwrap();
        assert_eq!(names.len(), 3);

        let problem = m
            .getattr("Problem")
            .unwrap()
            .call_method1("from_preset", ("1d-mean-revert", 0.0))
            .unwrap();
        let (rho, tau): (Vec<Vec<f64>>, Vec<Vec<f64>>) =
            problem.call_method0("optimal_deterministic").unwrap().extract().unwrap();
        assert!(rho.iter().chain(&tau).all(|v| v[0].abs() <= 1e-12));
        let report = problem.call_method1("exact_objective", (rho, tau)).unwrap();
        let report = report.cast::<PyDict>().unwrap();
        let objective: f64 = report.get_item("objective").unwrap().unwrap().extract().unwrap();
        assert!(objective.abs() <= 1e-12);

        let err = m
            .getattr("Problem")
            .unwrap()
            .call_method1("from_preset", ("missing",))
            .unwrap_err();
        assert!(err.is_instance_of::<pyo3::exceptions::PyValueError>(py));
    });
}
