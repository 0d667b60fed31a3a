use stealthlqg::attacks::{build_optimal_det, AttackStrategy};
use stealthlqg::detect::discrepancy_euler;
use stealthlqg::evaluate::Evaluator;
use stealthlqg::model::preset;
use stealthlqg::sim::{simulate_path, NoiseStream};
use stealthlqg::synthesis::{solve_det_attack, Context, GainSet};

fn solved(name: &str, n_steps: usize) -> (Context, GainSet) {
    let mut model = preset(name).unwrap().model;
    model.n_steps = n_steps;
    let ctx = Context::new(model).unwrap();
    let gains = GainSet::solve(&ctx).unwrap();
    (ctx, gains)
}

fn optimal(ctx: &Context, g: &GainSet) -> AttackStrategy {
    let det = solve_det_attack(ctx, &g.filter, &g.agent).unwrap();
    build_optimal_det(ctx, &g.filter, &g.agent, &det).unwrap().0
}

// The discrepancy between the two filters is noise-free under a fixed
// attack path, so every simulated path must reproduce the Euler recursion.
#[test]
fn simulated_discrepancy_is_noise_free() {
    for name in ["1d-mean-revert", "2d-tracking"] {
        let (ctx, g) = solved(name, 400);
        let strategy = optimal(&ctx, &g);
        let AttackStrategy::DeterministicPath { rho, tau } = &strategy else {
            unreachable!()
        };
        let expected = discrepancy_euler(&ctx, &g.filter, rho, tau).unwrap();
        let scale = 1.0 + expected.sup_norm();
        let ev = Evaluator::new(&ctx, &g.filter, &g.agent).unwrap();
        for path in 0..5 {
            let b = simulate_path(&ev.plan, &strategy, NoiseStream::new(11, path)).unwrap();
            for (k, dx) in b.discrepancy.iter().enumerate() {
                let gap = (dx - expected.node(k).column(0)).amax();
                assert!(gap <= 1e-9 * scale, "{name} path {path} node {k}: {gap}");
            }
        }
    }
}

#[test]
fn monte_carlo_brackets_the_exact_objective() {
    let (ctx, g) = solved("1d-mean-revert", 400);
    let ev = Evaluator::new(&ctx, &g.filter, &g.agent).unwrap();
    for strategy in [AttackStrategy::Zero, optimal(&ctx, &g)] {
        let exact = ev.exact_strategy(&strategy).unwrap();
        let mc = ev.mc_objective(&strategy, 1500, 3, 0).unwrap();
        let se = mc.degradation_se.unwrap();
        // Euler bias at 400 steps is O(h) and well inside the slack
        let slack = 4.0 * se + 0.02 * exact.degradation;
        assert!(
            (mc.degradation - exact.degradation).abs() <= slack,
            "{}: {} vs {} (se {se})",
            strategy.name(),
            mc.degradation,
            exact.degradation
        );
        assert!((mc.rho_energy - exact.rho_energy).abs() <= 1e-9 + 1e-2 * exact.rho_energy);
    }
}
