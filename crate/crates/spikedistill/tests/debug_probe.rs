use spikedistill::config::RunConfig;
use spikedistill::data;
use spikedistill::distill::{self, DistillConfig, DistillMode};
use spikedistill::layers;
use spikedistill::optim::Optimizer;
use spikedistill::rng::Stream;
use spikedistill::tape::{SurrogateMode, Tape};

#[test]
#[ignore]
fn probe_bkd_magnitudes() {
    let mut cfg = RunConfig::default();
    cfg.dataset.synth_train = 512;
    cfg.dataset.synth_test = 64;
    let data = spikedistill::train::load_dataset(&cfg).unwrap();
    // teacher: quick 2-epoch train via the library
    cfg.run.epochs = 2;
    cfg.run.out_dir = "/tmp/probe-teacher".into();
    let _ = std::fs::remove_dir_all("/tmp/probe-teacher");
    let t_out = spikedistill::train::train_teacher::<f32>(&cfg, None).unwrap();
    let teacher = spikedistill::train::load_teacher::<f32>(&cfg, &t_out.best_ckpt).unwrap();

    let mut student = layers::build_student::<f32>(&cfg.arch_config(), 1).unwrap();
    let mut blocks = distill::DistillBlocks::<f32>::new(16, 32, 1);
    let dcfg: DistillConfig<f32> = DistillConfig { mode: DistillMode::Md, ..Default::default() };
    let ncfg = cfg.neuron_config::<f32>();
    let mut opt = Optimizer::sgd_momentum(0.9f32, 5e-4, &student.params);
    let mut opt_b = Optimizer::sgd_momentum(0.9f32, 5e-4, &blocks.params);

    for iter in 0..24 {
        let idx: Vec<usize> = (iter * 16..(iter + 1) * 16).map(|i| i % 512).collect();
        let (images, labels) = data::gather(&data.train, &idx);
        let x = data::normalize_batch::<f32>(&images, 16, 1, 28, 28, &data.norm).unwrap();
        let (y_tea, f_tea) = layers::forward_teacher(&teacher, &x).unwrap();
        let mut tape = Tape::new();
        let vars = layers::bind(&mut tape, &student, true);
        let bvars = distill::bind_blocks(&mut tape, &blocks, true);
        let xv = tape.constant(x);
        let fwd = layers::forward_student_traced(&mut tape, &student, &vars, xv, 4, &ncfg, SurrogateMode::Hard, None).unwrap();
        let task = tape.cross_entropy(fwd.logits, &labels).unwrap();
        let ld = distill::ld_loss(&mut tape, fwd.logits, &y_tea, 2.0).unwrap();
        let mut ms = Stream::derive(1, "mask", &[0, iter as u64]);
        let mask = distill::sample_blur_mask::<f32>(16, 32, 0.15, &mut ms).unwrap();
        let f_tilde = distill::time_average(&mut tape, &fwd.tap).unwrap();
        let f_hat = distill::blurred_restore(&mut tape, f_tilde, &mask, &blocks, &bvars).unwrap();
        let bkd = distill::bkd_loss(&mut tape, f_hat, &f_tea).unwrap();
        let total = distill::total_loss(&mut tape, task, Some(ld), Some(bkd), &dcfg).unwrap();
        let f_tea_mag = f_tea.data().iter().map(|v| (v * v) as f64).sum::<f64>() / f_tea.numel() as f64;
        let f_hat_mag = tape.value(f_hat).data().iter().map(|v| (v * v) as f64).sum::<f64>() / f_tea.numel() as f64;
        println!(
            "iter {iter}: task {:.3} ld {:.3} bkd {:.1} total {:.2} | rms2 tea {:.3} hat {:.3}",
            tape.value(task).item().unwrap(),
            tape.value(ld).item().unwrap(),
            tape.value(bkd).item().unwrap(),
            tape.value(total).item().unwrap(),
            f_tea_mag,
            f_hat_mag
        );
        let mut grads = tape.backward(total).unwrap();
        layers::extract_grads(&mut grads, &vars, &mut student.params);
        layers::extract_grads(&mut grads, &bvars, &mut blocks.params);
        let gmag = |ps: &[layers::Parameter<f32>]| -> f64 {
            ps.iter().map(|p| p.grad.as_ref().unwrap().data().iter().map(|v| (v*v) as f64).sum::<f64>()).sum::<f64>().sqrt()
        };
        println!("    |g_student| {:.3e}  |g_blocks| {:.3e}", gmag(&student.params), gmag(&blocks.params));
        opt.step(&mut student.params, 0.05).unwrap();
        opt_b.step(&mut blocks.params, 0.05).unwrap();
    }
}
