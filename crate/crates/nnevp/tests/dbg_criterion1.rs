use nnevp::elasticity::{build_stiffness, ElasticParams};
use nnevp::network::*;
use nnevp::reference::PowerLawParams;
use nnevp::solver::*;
use nnevp::trainer::*;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

#[test]
fn dbg_criterion1_powerlaw_n10() {
    let elastic = ElasticParams::new(130e3, 0.34).unwrap();
    let c = build_stiffness(&elastic).unwrap();
    let program = LoadingProgram { rate: 1e-3, target_strain: 0.05, stepping: Stepping::Fixed { count: 80 }, mode: SolveMode::TrueUniaxial };
    let model = PowerLawFlow {
        params: PowerLawParams { n: 10.0, eps_dot_0: 1e-3, sigma_y: 50.0 },
        hardening: HardeningLaw::Perfect,
    };
    let settings = SolverSettings { tol: 1e-6, max_iter: 80 };
    let (truth, _, fail) = simulate_curve(&program, &model, &c, &settings);
    assert!(fail.is_none());
    let sigma_ref = truth.stress_mpa.iter().cloned().fold(0.0f64, f64::max);
    println!("sigma_ref = {sigma_ref}, first pts {:?}", &truth.stress_mpa[..3]);

    let mut rng = ChaCha12Rng::seed_from_u64(42);
    let mut nets = ModelNets {
        potential: ConstrainedNet::init(ConstraintProfile::ConvexIncreasing, &[20, 20], None, &mut rng).unwrap(),
        hardening: None,
        hall_petch: None,
        scales: ModelScales { stress_mpa: sigma_ref, rate_per_s: 1e-3, d_ref_um: 1.0 },
    };
    let dataset = CurveSet { curves: vec![CurveTarget { name: "n10".into(), stress: truth.stress_mpa.clone(), grain_size_um: None }] };
    let cfg = TrainConfig { epochs: 200, nr_max_iter: 80, check_constraints_every_epoch: false, seed: 42, ..Default::default() };
    let t0 = std::time::Instant::now();
    let stats = train(&mut nets, &dataset, &program, &elastic, &cfg).unwrap();
    println!("train time {:?}", t0.elapsed());
    for rec in stats.records.iter().step_by(10) {
        println!("epoch {:3}  loss {:.3e}  lr {:.3e}", rec.epoch, rec.loss, rec.lr);
    }
    println!("final loss {:.3e}", stats.final_loss);
    println!("nr histogram {:?}", stats.nr_histogram);
    println!("failed epochs {:?}", stats.failed_epochs);
}
