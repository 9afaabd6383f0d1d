use bavwm::bavwm::{self as solver, Method};
use bavwm::gap::{self, GapInstance, IntegralAssignment};
use bavwm::harness;
use bavwm::lp::{self, LpStatus};
use bavwm::mechanism::{
    self, BicMode, BidderMapping, BidderPrior, BidderType, MappingDistribution, Prior, SolverKind,
    TypeMapping, VirtualMapping,
};
use bavwm::model::{Allocation, BavwmInstance, SplitAllocation};
use bavwm::BigRational;
use proptest::collection::vec;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn halves(xs: Vec<i32>) -> Vec<f64> {
    xs.into_iter().map(|x| f64::from(x) / 2.0).collect()
}

/// Raw instance on a half-integer grid; values may exceed budgets and multipliers may be negative.
fn raw_instance(n_max: usize, m_max: usize) -> impl Strategy<Value = BavwmInstance<f64>> {
    (1..=n_max, 1..=m_max).prop_flat_map(|(n, m)| {
        (
            vec(vec(0..=20i32, m), n),
            vec(0..=10i32, n),
            vec(-4..=4i32, n),
            vec(vec(-8..=8i32, m), n),
        )
            .prop_map(|(v, b, mult, w)| {
                BavwmInstance::new(
                    v.into_iter().map(halves).collect(),
                    halves(b),
                    halves(mult),
                    w.into_iter().map(halves).collect(),
                )
            })
    })
}

fn gap_instance() -> impl Strategy<Value = GapInstance<f64>> {
    (1..=3usize, 1..=5usize, any::<u64>()).prop_map(|(machines, jobs, seed)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        harness::random_gap(&mut rng, machines, jobs)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn clamp_invariance(raw in raw_instance(2, 3)) {
        // Only the value clamp is objective-preserving, so compare with
        // multipliers already clamped on both sides.
        let mut raw = raw;
        for m in raw.multipliers.iter_mut() {
            *m = m.max(0.0);
        }
        let norm = raw.normalize();
        for alloc in Allocation::enumerate(raw.n, raw.m) {
            prop_assert_eq!(raw.truncated_objective(&alloc).unwrap(), norm.objective(&alloc).unwrap());
        }
    }

    #[test]
    fn normalize_is_idempotent(raw in raw_instance(3, 4)) {
        let once = raw.normalize();
        prop_assert_eq!(once.normalize(), once.clone());
        prop_assert!(once.validate().is_empty());
        prop_assert!(once.multipliers.iter().all(|m| *m >= 0.0));
        for (row, b) in once.values.iter().zip(&once.budgets) {
            prop_assert!(row.iter().all(|v| v <= b));
        }
    }

    #[test]
    fn split_matches_objective_within_budget(raw in raw_instance(2, 4), seed in any::<u64>()) {
        let inst = raw.normalize();
        let all = Allocation::enumerate(inst.n, inst.m);
        let alloc = &all[(seed % all.len() as u64) as usize];
        let split = SplitAllocation::all_bar(alloc);
        let fits = (0..inst.n).all(|i| split.bar_load(&inst, i) <= inst.budgets[i]);
        if fits {
            let a = inst.split_objective(&split).unwrap();
            let b = inst.objective(alloc).unwrap();
            prop_assert!((a - b).abs() <= 1e-9);
        }
    }

    #[test]
    fn solver_outputs_are_priced_feasibly(raw in raw_instance(3, 5)) {
        let inst = raw.normalize();
        for result in [solver::solve_exact(&inst).unwrap(), solver::solve_approx(&inst).unwrap()] {
            prop_assert!(result.prices.is_feasible_for(&inst, &result.allocation));
            prop_assert_eq!(inst.objective(&result.allocation).unwrap(), result.objective_value);
        }
    }

    #[test]
    fn three_approximation_and_certificate(raw in raw_instance(3, 5)) {
        let exact = solver::solve_exact(&raw).unwrap();
        let approx = solver::solve_approx(&raw).unwrap();
        prop_assert_eq!(approx.method, Method::Approx);
        prop_assert!(approx.objective_value >= exact.objective_value / 3.0 - 1e-9);
        prop_assert!(approx.objective_value <= exact.objective_value + 1e-9);
        let bound = approx.certificate.unwrap();
        prop_assert!(exact.objective_value <= bound + 1e-7);
    }

    #[test]
    fn float_and_exact_lp_agree(raw in raw_instance(3, 4)) {
        let inst = raw.normalize();
        let (relax, _) = solver::build_relaxation(&inst).unwrap();
        let float = lp::solve(&relax).unwrap();
        let exact = lp::solve(&relax.convert::<BigRational>()).unwrap();
        prop_assert_eq!(float.status, LpStatus::Optimal);
        prop_assert_eq!(exact.status, LpStatus::Optimal);
        let e: f64 = bavwm::Scalar::to_f64(&exact.objective_value);
        prop_assert!((float.objective_value - e).abs() <= 1e-6);
    }

    #[test]
    fn exact_lp_returns_vertex(raw in raw_instance(2, 4)) {
        let inst = raw.normalize().convert::<BigRational>();
        let (relax, _) = solver::build_relaxation(&inst).unwrap();
        let sol = lp::solve(&relax).unwrap();
        prop_assert_eq!(relax.max_violation(&sol.values), BigRational::from_integer(0.into()));
        prop_assert!(relax.tight_count(&sol.values) >= relax.num_vars());
    }

    #[test]
    fn tripartition_bounds_exact(raw in raw_instance(3, 5)) {
        let inst = raw.normalize().convert::<BigRational>();
        let result = solver::solve_approx(&inst).unwrap();
        let trace = result.trace.unwrap();
        for agent in &trace.bins {
            for load in &agent.loads {
                prop_assert!(*load <= inst.budgets[agent.agent]);
            }
        }
        let three = BigRational::from_integer(3.into());
        prop_assert!(trace.selected_objective.clone() * three >= trace.rounded_objective);
    }

    #[test]
    fn posted_prices_bound_budget_downward_optimum(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let prior = harness::random_prior(&mut rng, 2, 2, 2);
        let down = mechanism::solve_optimal_mechanism::<f64>(&prior, BicMode::BudgetDownward).unwrap();
        let (_, best) = mechanism::best_posted_price(&prior);
        prop_assert!(down.revenue >= best - 1e-7);
    }

    #[test]
    fn mechanism_run_maximizes_virtual_welfare(raw in raw_instance(3, 3), seed in any::<u64>()) {
        // One type per bidder: its values and budget come from the instance,
        // its virtual type from the multipliers and virtual values.
        let prior = Prior {
            m: raw.m,
            bidders: (0..raw.n)
                .map(|i| BidderPrior {
                    types: vec![BidderType {
                        values: raw.values[i].clone(),
                        budget: raw.budgets[i],
                        probability: 1.0,
                    }],
                })
                .collect(),
        };
        let mapping = VirtualMapping {
            bidders: (0..raw.n)
                .map(|i| BidderMapping {
                    types: vec![TypeMapping {
                        multiplier: raw.multipliers[i].max(0.0),
                        virtual_values: raw.virtual_values[i].clone(),
                    }],
                })
                .collect(),
        };
        let delta = MappingDistribution::point_mass(mapping);
        let profile = vec![0; raw.n];
        let run = mechanism::run_virtual_welfare_mechanism(&prior, &delta, &profile, seed, SolverKind::Exact).unwrap();
        let inst = run.instance.normalize();
        let best = Allocation::enumerate(inst.n, inst.m)
            .iter()
            .map(|a| inst.objective(a).unwrap())
            .fold(f64::NEG_INFINITY, f64::max);
        prop_assert_eq!(inst.objective(&run.allocation).unwrap(), best);
        for (i, price) in run.prices.prices.iter().enumerate() {
            let cap: f64 = prior.payment_cap(&profile, &run.allocation, i);
            prop_assert!(*price >= 0.0 && *price <= cap);
        }
    }

    #[test]
    fn budget_downward_dominates_full(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let prior = harness::random_prior(&mut rng, 2, 2, 1);
        let full = mechanism::solve_optimal_mechanism::<f64>(&prior, BicMode::Full).unwrap();
        let down = mechanism::solve_optimal_mechanism::<f64>(&prior, BicMode::BudgetDownward).unwrap();
        prop_assert!(down.revenue >= full.revenue - 1e-7);
        prop_assert!(mechanism::check_bic(&full, &prior, BicMode::Full, 1e-7).is_empty());
        prop_assert!(mechanism::check_ex_post(&down, &prior, 1e-7).is_empty());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn st_round_bounds(g in gap_instance()) {
        let frac = gap::solve_gap_lp(&g).unwrap();
        let lp_cost = g.fractional_cost(&frac);
        let rounded = gap::st_round(&g, &frac).unwrap();
        prop_assert!(g.cost(&rounded) >= lp_cost - 1e-9);
        for (load, cap) in g.loads(&rounded).iter().zip(&g.capacities) {
            prop_assert!(*load <= 2.0 * cap + 1e-9);
        }
    }

    #[test]
    fn gap_lp_dominates_integral_assignments(g in gap_instance(), picks in vec(any::<u64>(), 16)) {
        let frac = gap::solve_gap_lp(&g).unwrap();
        let lp_cost = g.fractional_cost(&frac);
        for pick in picks {
            let mut state = pick;
            let machine_of = (0..g.jobs)
                .map(|_| {
                    let k = (state % g.machines() as u64) as usize;
                    state /= g.machines() as u64;
                    k
                })
                .collect();
            let assignment = IntegralAssignment { machine_of };
            let loads = g.loads(&assignment);
            if loads.iter().zip(&g.capacities).all(|(l, c)| l <= c) {
                prop_assert!(g.cost(&assignment) <= lp_cost + 1e-9);
            }
        }
    }
}

#[test]
fn double_credit_rounding() {
    let inst = BavwmInstance::new(
        vec![vec![3.0, 3.0]],
        vec![3.0],
        vec![1.0],
        vec![vec![-2.0, -2.0]],
    )
    .normalize()
    .convert::<BigRational>();
    let (relax, _) = solver::build_relaxation(&inst).unwrap();
    let sol = lp::solve(&relax).unwrap();
    let one = BigRational::from_integer(1.into());
    assert_eq!(sol.objective_value, one);
    let split = solver::round_to_split(&inst, &sol).unwrap();
    assert!(inst.split_objective(&split).unwrap() >= one);
    assert!(split.bar_load(&inst, 0) <= BigRational::from_integer(6.into()));
}
