use stkg_core::data::EvalScope;
use stkg_core::data::{generate_synthetic, make_split, Dataset, SplitPlan, SyntheticSpec};
use stkg_core::evalharness::{okriging_eval, MetricAccum};

fn field(coords: &[(f64, f64)], kind: &str) -> Vec<i64> {
    let xs: Vec<f64> = coords.iter().map(|c| c.0).collect();
    let ys: Vec<f64> = coords.iter().map(|c| c.1).collect();
    let (xmin, xmax) = (xs.iter().cloned().fold(f64::MAX, f64::min), xs.iter().cloned().fold(f64::MIN, f64::max));
    let (ymin, ymax) = (ys.iter().cloned().fold(f64::MAX, f64::min), ys.iter().cloned().fold(f64::MIN, f64::max));
    coords
        .iter()
        .map(|&(x, y)| match kind {
            "linx" => ((x - xmin) / (xmax - xmin) * 3.0).round() as i64,
            "diag" => (((x - xmin) / (xmax - xmin) + (y - ymin) / (ymax - ymin)) / 2.0 * 3.0).round() as i64,
            "bands" => (((x - xmin) / (xmax - xmin) * 7.999).floor() as i64) % 4,
            _ => unreachable!(),
        })
        .collect()
}

fn aligned_oracle(ds: &Dataset, shifts: &[i64], split: &SplitPlan, l: usize) -> f64 {
    let n = ds.n();
    let t = ds.t();
    let mut known = vec![false; n];
    for &i in &split.known {
        known[i] = true;
    }
    let mut accum = MetricAccum::default();
    for &i in &split.test {
        for w in (split.t_train..=t - l).step_by(l) {
            for step in w..w + l {
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
    for &period in &[24usize, 12, 8] {
        for kind in ["iid", "linx", "diag", "bands"] {
            let mut ok_sum = 0.0;
            let mut or_sum = 0.0;
            for seed in 0..5u64 {
                let spec = SyntheticSpec {
                    sensors: 30,
                    steps: 2000,
                    seed,
                    period,
                    shift_max: 3,
                    noise: 0.1,
                    neighbors: 4,
                    step_minutes: 60,
                    shifts: None,
                };
                let synth = if kind == "iid" {
                    generate_synthetic(&spec).unwrap()
                } else {
                    let base = generate_synthetic(&SyntheticSpec {
                        shifts: Some(vec![0; 30]),
                        ..spec.clone()
                    })
                    .unwrap();
                    let shifts = field(base.dataset.coords.as_ref().unwrap(), kind);
                    generate_synthetic(&SyntheticSpec { shifts: Some(shifts), ..spec.clone() }).unwrap()
                };
                let ds = &synth.dataset;
                let split = make_split(ds.n(), ds.t(), (7, 1, 2), seed).unwrap();
                let ok = okriging_eval(ds, &split, EvalScope::Test, 24).unwrap().mae;
                let orc = aligned_oracle(ds, &synth.shifts, &split, 24);
                ok_sum += ok;
                or_sum += orc;
            }
            println!(
                "period {period:>2} {kind:>5}: okriging {:.4} oracle {:.4} oracle-ratio {:.3}",
                ok_sum / 5.0,
                or_sum / 5.0,
                or_sum / ok_sum
            );
        }
    }
}
