use stkg_core::config::{ModelConfig, TrainConfig};
use stkg_core::data::{eval_batch, generate_synthetic, make_split, EvalScope, SyntheticSpec};
use stkg_core::evalharness::{
    circular_xcorr_lag, evaluate_model, okriging_eval, MetricAccum,
};
use stkg_core::model::init_model;
use stkg_core::nn::Mode;
use stkg_core::training::fit;
use stkg_core::Tape;

// Oracle: okriging but with every neighbor unshifted by its true shift and the
// target re-shifted by its own — the best "compensate then average" can do.
fn shift_aware_baseline(
    ds: &stkg_core::data::Dataset,
    shifts: &[i64],
    split: &stkg_core::data::SplitPlan,
) -> f64 {
    let n = ds.n();
    let t = ds.t();
    let known: Vec<bool> = {
        let mut k = vec![false; n];
        for &i in &split.known {
            k[i] = true;
        }
        k
    };
    let mut accum = MetricAccum::default();
    for &i in &split.test {
        // aligned neighbor average in "parent time": v_j(t + s_j) ~ parent(t)
        for w in (split.t_train..t - 24 + 1).step_by(24) {
            for step in w..w + 24 {
                let mut num = 0.0;
                let mut den = 0.0;
                for j in 0..n {
                    if !known[j] || j == i {
                        continue;
                    }
                    let w_ij = ds.adjacency.get(i, j);
                    if w_ij <= 0.0 {
                        continue;
                    }
                    // parent index for target step: step - s_i; neighbor value at
                    // parent time: series_j[(step - s_i) + s_j]
                    let idx = step as i64 - shifts[i] + shifts[j];
                    if idx < 0 || idx >= t as i64 {
                        continue;
                    }
                    num += w_ij * ds.series[j][idx as usize];
                    den += w_ij;
                }
                if den > 0.0 {
                    accum.push(num / den, ds.series[i][step]);
                }
            }
        }
    }
    accum.report("oracle", 0, 0).map(|r| r.mae).unwrap_or(f64::NAN)
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let stride: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(5);
    let epochs: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(50);
    let seed: u64 = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(0);
    let ablation = stkg_core::config::Ablation::parse(
        &args
            .get(4)
            .map(|s| {
                s.split(',')
                    .filter(|f| !f.is_empty())
                    .map(|f| f.to_string())
                    .collect::<Vec<_>>()
            })
            .unwrap_or_default(),
    )
    .unwrap();
    let period: usize = args.get(5).map(|s| s.parse().unwrap()).unwrap_or(12);
    let neighbors: usize = args.get(7).map(|s| s.parse().unwrap()).unwrap_or(4);
    let spec = SyntheticSpec {
        sensors: 30,
        steps: 2000,
        seed,
        period,
        shift_max: 3,
        noise: 0.1,
        neighbors,
        step_minutes: 60,
        shifts: None,
    };
    let base_ds = generate_synthetic(&SyntheticSpec { shifts: Some(vec![0; 30]), ..spec.clone() }).unwrap();
    let coords = base_ds.dataset.coords.as_ref().unwrap();
    // Shift class = parity of the first fraction digit of latitude (as the
    // digit tokenizer would print it after 4-decimal rounding).
    let band: i64 = args.get(6).map(|s| s.parse().unwrap()).unwrap_or(1);
    let xs: Vec<f64> = coords.iter().map(|c| c.0).collect();
    let (xmin, xmax) = (
        xs.iter().cloned().fold(f64::MAX, f64::min),
        xs.iter().cloned().fold(f64::MIN, f64::max),
    );
    let shifts: Vec<i64> = coords
        .iter()
        .map(|&(x, _)| {
            let xr = (x.abs() * 10000.0).round() / 10000.0;
            if band == 0 {
                (((x - xmin) / (xmax - xmin) * 7.999).floor() as i64) % 4
            } else if band == 5 {
                let d1 = ((xr - xr.floor()) * 10.0 + 1e-7).floor() as i64;
                3 * ((d1 >= 5) as i64)
            } else if band == 7 {
                let d = xr.floor() as i64 % 10;
                3 * ((d >= 5) as i64)
            } else {
                let d = xr.floor() as i64 % 10;
                3 * ((d / band) % 2)
            }
        })
        .collect();
    let synth = generate_synthetic(&SyntheticSpec { shifts: Some(shifts), ..spec.clone() }).unwrap();
    let ds = &synth.dataset;
    let split = make_split(ds.n(), ds.t(), (7, 1, 2), seed).unwrap();
    println!("shifts: {:?}", synth.shifts);
    println!("test sensors: {:?} val: {:?}", split.test, split.val);
    for &i in &split.test {
        println!("  coords test {i}: lat {:.3} shift {}", coords[i].0, synth.shifts[i]);
    }
    let mcfg = ModelConfig { steps_per_day: 24, ablation, ..ModelConfig::default() };
    let tcfg = TrainConfig { train_stride: stride, seed, epochs, ..TrainConfig::default() };
    let model = init_model(&mcfg, seed).unwrap();
    let init_test = evaluate_model(&model, ds, &split, EvalScope::Test).unwrap();
    let init_val = evaluate_model(&model, ds, &split, EvalScope::Val).unwrap();
    println!("init test {:.4} val {:.4}", init_test.mae, init_val.mae);
    {
        let batch = eval_batch(ds, &split, split.t_train, 24, EvalScope::Test).unwrap();
        let mut tape = Tape::new();
        let out = model.forward_on(&mut tape, &batch, &mut Mode::Eval).unwrap();
        let z = tape.value(out.z).to_vec();
        let xh = tape.value(out.xhat).to_vec();
        for &i in &split.test {
            let tr: &[f64] = &batch.truth[i];
            let zr = &z[i * 24..(i + 1) * 24];
            let xr = &xh[i * 24..(i + 1) * 24];
            let mae = |a: &[f64]| -> f64 {
                a.iter().zip(tr).map(|(p, t)| (p - t).abs()).sum::<f64>() / 24.0
            };
            let amp = |a: &[f64]| -> f64 {
                let m = a.iter().sum::<f64>() / 24.0;
                (a.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / 24.0).sqrt()
            };
            println!(
                "  init sensor {i}: z mae {:.3} amp {:.2} | xhat mae {:.3} amp {:.2} | truth amp {:.2}",
                mae(zr), amp(zr), mae(xr), amp(xr), amp(tr)
            );
        }
    }
    let run = fit(model, ds, &split, &tcfg, |st, _| {
        if st.epoch % 5 == 0 || st.epoch <= 3 {
            println!(
                "  ep {:>2}: loss {:.4} val m {:.4}",
                st.epoch, st.loss_main, st.val_mae
            );
        }
        Ok(())
    })
    .unwrap();
    let test = evaluate_model(&run.best, ds, &split, EvalScope::Test).unwrap();
    let base = okriging_eval(ds, &split, EvalScope::Test, 24).unwrap();
    let oracle = shift_aware_baseline(ds, &synth.shifts, &split);
    println!(
        "model {:.4} baseline {:.4} oracle {:.4} ratio {:.3} best_ep {}",
        test.mae,
        base.mae,
        oracle,
        test.mae / base.mae,
        run.best_epoch
    );
    // Dynamic-graph routing diagnostic: where do test rows draw from?
    {
        use stkg_core::metagraph::{build_embedding, dynamic_graph, WindowMeta};
        let batch = eval_batch(ds, &split, split.t_train, 24, EvalScope::Test).unwrap();
        let mut tape = Tape::new();
        let meta = WindowMeta {
            series_rows: &batch.x,
            coords: batch.coords.as_deref(),
            tod: batch.tod,
            dow: batch.dow,
        };
        let de = build_embedding(
            &mut tape,
            &run.best.store,
            &run.best.arch.metagraph,
            &run.best.config,
            &meta,
            &mut Mode::Eval,
        )
        .unwrap();
        let at = dynamic_graph(
            &mut tape,
            &run.best.store,
            de,
            run.best.arch.metagraph.edge_resid,
            run.best.config.topk,
        )
        .unwrap();
        let a = tape.value(at).to_vec();
        let n = ds.n();
        for &i in &split.test {
            let mut row: Vec<(usize, f64)> = (0..n).map(|j| (j, a[i * n + j])).collect();
            row.sort_by(|x, y| y.1.partial_cmp(&x.1).unwrap());
            let top: Vec<String> = row
                .iter()
                .take(3)
                .map(|&(j, w)| format!("{}(s{} w{:.2})", j, synth.shifts[j], w))
                .collect();
            println!(
                "  graph test {i} (s{}): {}",
                synth.shifts[i],
                top.join(" ")
            );
        }
    }
    // DPM translation diagnostic on the first eval window.
    let batch = eval_batch(ds, &split, split.t_train, 24, EvalScope::Test).unwrap();
    let mut tape = Tape::new();
    let out = run.best.forward_on(&mut tape, &batch, &mut Mode::Eval).unwrap();
    let z = tape.value(out.z).to_vec();
    let h = tape.value(out.pre_phase).to_vec();
    let mut lags = Vec::new();
    for &i in &split.test {
        let zr = &z[i * 24..(i + 1) * 24];
        let hr = &h[i * 24..(i + 1) * 24];
        lags.push((i, synth.shifts[i], circular_xcorr_lag(zr, hr).unwrap()));
    }
    println!("dpm (sensor, true shift, out-vs-in lag): {lags:?}");
    for (bi, branch) in out.trace.branches.iter().enumerate() {
        for (si, slot) in branch.iter().enumerate() {
            let mut rows = Vec::new();
            for &i in &split.test {
                let d = stkg_core::spectral::wrap_phase(slot.phase_new[i] - slot.phase_old[i]);
                rows.push((i, synth.shifts[i], slot.bins[i], (d * 100.0).round() / 100.0));
            }
            println!("branch {bi} slot {si} (sensor, shift, bin, delta): {rows:?}");
        }
    }
}

