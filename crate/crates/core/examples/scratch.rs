use seisbert::finetune::*;
use seisbert::gather::DomainTag;
use seisbert::model::checkpoint::Checkpoint;
use seisbert::model::*;
use seisbert::numerics::rng;
use seisbert::pretrain::*;
use seisbert::seisgen::*;
use seisbert::dataset::Dataset;
use seisbert::train::Schedule;
fn main() {
    let args: Vec<String> = std::env::args().collect();
    let epochs: usize = args[1].parse().unwrap();
    let mut p = Preset::desk(); p.n_traces = 20;
    let s = generate(&p, 600, 1, 0, DomainTag::Clean).unwrap();
    let ds = Dataset::from_samples(&s, 1500.0, 4500.0).unwrap();
    let ck = std::path::Path::new("/tmp/pre.ssck");
    let pre = if ck.exists() { Checkpoint::load(ck).unwrap().model } else {
        let g: Vec<_> = s.iter().map(|s| s.input.clone()).collect();
        let (tr, te) = g.split_at(540);
        let m = SeismicBert::with_head(ModelConfig::desk(128, 20), HeadKind::Reconstruction, HeadInit::Random, &mut rng::seeded(0)).unwrap();
        let sched = Schedule { max_epochs: 200, ..Schedule::default() };
        let (m, _) = pretrain(m, tr, te, &sched, &PretrainOptions::default(), None).unwrap();
        Checkpoint::new(m.clone()).save(ck).unwrap(); m };
    for kind in args[2..].iter().map(|a| TaskKind::by_name(a).unwrap()) {
        let t0 = std::time::Instant::now();
        let mut task = TaskSpec::new(kind);
        task.schedule.max_epochs = epochs;
        let (train, test) = if kind == TaskKind::Denoise {
            let g: Vec<_> = s.iter().map(|s| s.input.clone()).collect();
            let all = noisy_pairs(&g, 9).unwrap();
            (all[..540].to_vec(), all[540..].to_vec())
        } else {
            let all = samples_from_dataset(&ds, kind).unwrap();
            (all[..540].to_vec(), all[540..].to_vec())
        };
        if kind == TaskKind::Denoise { println!("pre {:?}", eval_denoise(&pre, &test).unwrap()); }
        let mut st = seisbert::train::TrainState::new(prepare_model(pre.clone(), &task).unwrap(), task.schedule.learning_rate);
        let _r = finetune_with(&mut st, &task, &train, &test, None, &mut |e| if e.epoch % 5 == 0 { println!("{} {:.4e} {:.4e} {:.1}s", e.epoch, e.train_loss, e.test_loss, e.seconds) }).unwrap();
        let po = PickOptions { max_offset_fraction: 0.5, ..Default::default() };
        println!("{:?} {:?}  {:?}", kind, evaluate_task(&st.model, &task, &test, &po).unwrap(), t0.elapsed());
    }
}
