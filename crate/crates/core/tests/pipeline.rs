use zonecast::evalkit::Protocol;
use zonecast::pipeline::{build_samples, dataset_loss, evaluate, train, Checkpoint, EvalOptions, RunConfig, Split};
use zonecast::predictor::{generate, single_modal_predict, Observation, Strategy};
use zonecast::relnet::encode_scene;
use zonecast::scenegen::{generate_dataset, GeneratorConfig};

fn small() -> RunConfig {
    let mut c = RunConfig::test_dims();
    c.batch_size = 8;
    c.lr = 3e-3;
    c
}

#[test]
fn checkpoint_reload_gives_identical_predictions() {
    let mut cfg = small();
    cfg.epochs = 1;
    let data = generate_dataset(4, 21, &GeneratorConfig::default()).unwrap();
    let scenes = build_samples(&data, &cfg, Split::All).unwrap();
    let ck = train(&cfg, &scenes, &mut std::io::sink()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ck");
    ck.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back, ck);

    let scene = &scenes[0];
    let t = &scene.targets[0];
    let run = |c: &Checkpoint| {
        let enc = encode_scene(&c.model, &scene.pooled).unwrap();
        let obs = Observation::new(&c.model, &enc, &t.past).unwrap();
        let single = single_modal_predict(&c.model, &obs, &scene.map).unwrap();
        let multi = generate(&c.model, &obs, &scene.map, Strategy::Prob, 5, 9).unwrap();
        (single, multi)
    };
    let (a, b) = (run(&ck), run(&back));
    assert_eq!(a, b);
    for (x, y) in a.0.steps.iter().zip(&b.0.steps) {
        assert!(x.p.iter().zip(&y.p).all(|(p, q)| p.to_bits() == q.to_bits()));
    }
}

#[test]
fn training_reduces_loss_and_repeats_exactly() {
    let mut cfg = small();
    cfg.epochs = 6;
    let data = generate_dataset(20, 5, &GeneratorConfig::default()).unwrap();
    let scenes = build_samples(&data, &cfg, Split::Train).unwrap();
    let init = zonecast::pipeline::init_checkpoint(&cfg).unwrap();
    let before = dataset_loss(&init.model, &cfg, &scenes).unwrap().total;
    let mut log = Vec::new();
    let ck = train(&cfg, &scenes, &mut log).unwrap();
    let after = dataset_loss(&ck.model, &cfg, &scenes).unwrap().total;
    assert!(after < before, "{after} !< {before}");
    let again = train(&cfg, &scenes, &mut Vec::new()).unwrap();
    assert_eq!(again, ck);

    let text = String::from_utf8(log).unwrap();
    let echo: String = text
        .lines()
        .take_while(|l| l.starts_with("# "))
        .map(|l| format!("{}\n", &l[2..]))
        .collect();
    assert_eq!(RunConfig::from_text(&echo).unwrap(), cfg);
    assert_eq!(text.lines().filter(|l| l.starts_with("step ")).count() as u64, ck.step());

    let held = build_samples(&data, &cfg, Split::Test).unwrap();
    let held = if held.is_empty() { scenes.clone() } else { held };
    let opts = EvalOptions {
        protocol: Protocol::Multi,
        samples: 20,
        strategy: Strategy::Best,
        seed: 4,
    };
    let single = evaluate(Some(&ck.model), &held, cfg.delta, &EvalOptions::default()).unwrap();
    let multi = evaluate(Some(&ck.model), &held, cfg.delta, &opts).unwrap();
    assert_eq!(multi, evaluate(Some(&ck.model), &held, cfg.delta, &opts).unwrap());
    assert!(single.report.intention_accuracy.is_some());
    assert_eq!(multi.report.min_fde.as_ref().unwrap().len(), 4);
}

#[test]
fn split_is_order_independent() {
    let cfg = small();
    let mut data = generate_dataset(30, 2, &GeneratorConfig::default()).unwrap();
    let seeds = |s: &[zonecast::sample::SceneSample]| {
        let mut v: Vec<u64> = s.iter().map(|x| x.seed).collect();
        v.sort();
        v
    };
    let a = build_samples(&data, &cfg, Split::Test).unwrap();
    data.reverse();
    let b = build_samples(&data, &cfg, Split::Test).unwrap();
    assert_eq!(seeds(&a), seeds(&b));
}
