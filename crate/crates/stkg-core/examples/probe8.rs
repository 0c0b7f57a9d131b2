use stkg_core::config::{ModelConfig, TrainConfig};
use stkg_core::data::{eval_batch, generate_synthetic, EvalScope, SplitPlan, SyntheticSpec};
use stkg_core::evalharness::circular_lag_distance;
use stkg_core::model::init_model;
use stkg_core::nn::Mode;
use stkg_core::training::Trainer;
use stkg_core::Tape;

fn agg_lag(corr: &[f64]) -> usize {
    (0..corr.len())
        .max_by(|&a, &b| corr[a].partial_cmp(&corr[b]).unwrap().then(b.cmp(&a)))
        .unwrap()
}

fn run(seed: u64, enc: usize, stride: usize) -> (usize, usize, usize, usize, usize) {
    let l = 24usize;
    let t_total = 480usize;
    let t_train = 336usize;
    let shift = 2usize;
    let synth = generate_synthetic(&SyntheticSpec {
        sensors: 2,
        steps: t_total,
        seed,
        period: 24,
        shift_max: shift as i64,
        noise: 0.1,
        neighbors: 1,
        step_minutes: 60,
        shifts: Some(vec![0, shift as i64]),
    })
    .unwrap();
    let ds = &synth.dataset;
    let train_split = SplitPlan { known: vec![0, 1], val: vec![], test: vec![1], t_train };
    let mcfg = ModelConfig { steps_per_day: 24, encoder_layers: enc, ..ModelConfig::default() };
    let tcfg = TrainConfig { train_stride: stride, seed, ..TrainConfig::default() };
    let model = init_model(&mcfg, seed).unwrap();
    let mut trainer = Trainer::new(model, ds, &train_split, &tcfg).unwrap();
    for epoch in 1..=tcfg.epochs {
        trainer.run_epoch(epoch).unwrap();
    }
    let model = trainer.model;

    let probe_split = SplitPlan { known: vec![0], val: vec![], test: vec![1], t_train };
    let mut corr_xhat = vec![0.0f64; l];
    let mut corr_dpm = vec![0.0f64; l];
    let mut corr_zt = vec![0.0f64; l];
    let mut start = t_train;
    while start + l <= t_total {
        let batch = eval_batch(ds, &probe_split, start, l, EvalScope::Test).unwrap();
        let mut tape = Tape::new();
        let out = model.forward_on(&mut tape, &batch, &mut Mode::Eval).unwrap();
        let zrow = tape.value(out.z)[l..2 * l].to_vec();
        let hrow = tape.value(out.pre_phase)[l..2 * l].to_vec();
        let xrow = tape.value(out.xhat)[l..2 * l].to_vec();
        let truth = batch.truth[1].clone();
        for lag in 0..l {
            for t in 0..l {
                corr_xhat[lag] += xrow[(t + lag) % l] * truth[t];
                corr_dpm[lag] += zrow[(t + lag) % l] * hrow[t];
                corr_zt[lag] += zrow[(t + lag) % l] * truth[t];
            }
        }
        start += l;
    }
    let lag_x = agg_lag(&corr_xhat);
    let lag_d = agg_lag(&corr_dpm);
    let lag_zt = agg_lag(&corr_zt);
    (
        lag_x,
        circular_lag_distance(lag_x, 0, l),
        lag_d,
        circular_lag_distance(lag_d, shift, l),
        lag_zt,
    )
}

fn main() {
    for &(enc, stride) in &[(1usize, 1usize), (1, 24), (2, 1), (2, 24)] {
        let mut hx = 0;
        let mut hd = 0;
        let mut hb = 0;
        let t0 = std::time::Instant::now();
        let mut lines = Vec::new();
        for seed in 0..5u64 {
            let (lx, dx, ld, dd, lzt) = run(seed, enc, stride);
            if dx <= 1 {
                hx += 1;
            }
            if dd <= 1 {
                hd += 1;
            }
            if dx <= 1 && dd <= 1 {
                hb += 1;
            }
            lines.push(format!(
                "  seed {seed}: xhat {lx}(d{dx}) dpm {ld}(d{dd}) z-vs-truth {lzt}"
            ));
        }
        println!(
            "enc={enc} stride={stride}: xhat {hx}/5 dpm {hd}/5 both {hb}/5  ({:.0}s)",
            t0.elapsed().as_secs_f64()
        );
        for l in lines {
            println!("{l}");
        }
    }
}
