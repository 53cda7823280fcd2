use mcno::model::*;
use mcno::rng::Rng;
use mcno::spectral::*;
use mcno::train::*;
use std::time::Instant;

fn main() {
    // Burgers smoke config
    let solver = SolverParams::Burgers { viscosity: 0.1, dt: 2e-4, hi_res: 1024 };
    let t0 = Instant::now();
    let sets = generate_dataset(&solver, 306, &[256, 512, 1024], 0, 2).unwrap();
    println!("burgers gen {:.0}s", t0.elapsed().as_secs_f64());
    let ds = &sets[0];
    let train_set = ds.slice(0, 256).unwrap();
    let test_set = ds.slice(256, 50).unwrap();
    for variant in [KernelVariant::Global, KernelVariant::Interp] {
        let config = MCNOConfig { kernel_variant: variant, ..MCNOConfig::default() };
        let mut model = MCNOModel::init(config, 256, &Rng::new(0)).unwrap();
        let tc = TrainConfig { epochs: 100, batch_size: 20, checkpoint_every: 0, ..TrainConfig::default() };
        let t1 = Instant::now();
        let report = train(&mut model, &train_set, &test_set, &tc, None).unwrap();
        println!("burgers {variant:?}: {:.0}s final train {:.4} test {:.4}",
            t1.elapsed().as_secs_f64(), report.epochs.last().unwrap().train_rel_l2, report.final_test_rel_l2);
        if matches!(variant, KernelVariant::Global) {
            for (i, s) in [512usize, 1024].iter().enumerate() {
                let hi = sets[i + 1].slice(256, 50).unwrap();
                println!("  transfer s={s}: {:.4}", evaluate(&model, &hi).unwrap());
            }
        }
    }

    // KdV smoke config
    let solver = SolverParams::Kdv { dt: 1e-3, hi_res: 1024, dealias_fraction: 2.0/3.0 };
    let t0 = Instant::now();
    let sets = generate_dataset(&solver, 306, &[128], 0, 2).unwrap();
    println!("kdv gen {:.0}s", t0.elapsed().as_secs_f64());
    let ds = &sets[0];
    let train_set = ds.slice(0, 256).unwrap();
    let test_set = ds.slice(256, 50).unwrap();
    for variant in [KernelVariant::Global, KernelVariant::Interp] {
        let config = MCNOConfig { kernel_variant: variant, n_samples: 75, ..MCNOConfig::default() };
        let mut model = MCNOModel::init(config, 128, &Rng::new(0)).unwrap();
        let tc = TrainConfig { epochs: 100, batch_size: 20, checkpoint_every: 0, ..TrainConfig::default() };
        let t1 = Instant::now();
        let report = train(&mut model, &train_set, &test_set, &tc, None).unwrap();
        println!("kdv {variant:?}: {:.0}s final train {:.4} test {:.4}",
            t1.elapsed().as_secs_f64(), report.epochs.last().unwrap().train_rel_l2, report.final_test_rel_l2);
    }
}
