//! Evaluates the acceptance metrics for dimensionless model knobs.
//!
//! `cargo run --release --example calibrate -- f0=20 c=15 abar=10 d=1000 rho=1e5 eps=0.024 levels=50 top=3 work=50`
//!
//! Rates are in units of `gamma_down`; `c = κ/ā`, `ā = b_absorb_0 ρ K / 2`,
//! `f0` is the emission/absorption ratio of the ground mode and `eps = ħΩ/k_BT`.

use std::collections::HashMap;
use std::f64::consts::PI;

use pbec::dynamics::*;
use pbec::gas::{GasState, GasSystem, Polarization, HBAR, K_B};
use pbec::params::ParameterFile;
use pbec::stokes::{prepare_pump, raster_hemisphere, StokesVector};

fn pols(sys: &GasSystem, s: &GasState) -> (f64, f64, f64) {
    let kv = sys.params.kappa;
    let kh = kv * sys.ladder.anisotropy.loss_ratio_h_over_v;
    let p = |v: f64, h: f64| (kv * v - kh * h) / (kv * v + kh * h);
    let [v0, h0] = s.ground();
    let tv: f64 = s.photons[1..].iter().map(|p| p[0]).sum();
    let th: f64 = s.photons[1..].iter().map(|p| p[1]).sum();
    (p(v0, h0), p(tv, th), p(v0 + tv, h0 + th))
}

fn main() {
    let mut k: HashMap<String, f64> = [
        ("f0", 20.0), ("c", 15.0), ("abar", 10.0), ("d", 1000.0), ("rho", 1e5), ("eps", 0.024),
        ("levels", 50.0), ("bins", 64.0), ("top", 3.0), ("work", 50.0), ("full", 0.0), ("show", 0.0), ("temp", 300.0),
    ]
    .into_iter()
    .map(|(a, b)| (a.to_string(), b))
    .collect();
    for arg in std::env::args().skip(1) {
        let (a, b) = arg.split_once('=').unwrap();
        assert!(k.contains_key(a), "unknown knob {a}");
        k.insert(a.into(), b.parse().unwrap());
    }
    let g = 2.5e8;
    let kt = K_B * k["temp"] / HBAR;
    let bins = k["bins"] as usize;
    let mut pf = ParameterFile::shipped();
    pf.ladder.n_levels = k["levels"] as usize;
    pf.ladder.trap_spacing = k["eps"] * kt;
    pf.reservoir.n_bins = bins;
    pf.reservoir.total_per_bin = k["rho"];
    pf.reservoir.d_rot = k["d"] * g;
    pf.reservoir.temperature = k["temp"];
    pf.rates.gamma_down = g;
    pf.rates.b_absorb_0 = 2.0 * k["abar"] * g / (k["rho"] * bins as f64);
    pf.rates.kappa = k["c"] * k["abar"] * g;
    pf.rates.ground_detuning = -k["f0"].ln() * kt;
    pf.pump.conversion = g * k["rho"] * bins as f64;
    println!("{}", pf.to_toml());
    let sys = pf.system().unwrap();
    let ctl = pf.integration_control();
    let search = ThresholdSearch { low: 1e-4, high: 1e4, rel_width: 1e-5, fraction: 0.25 };
    let ss = |s: &GasSystem, p: f64, st: StokesVector| steady_state(&s.with_pump(p, st), &ctl).unwrap().state;
    let t0 = std::time::Instant::now();
    let pv = find_threshold(&sys, StokesVector::vertical(), &search, &ctl).unwrap().critical_power;
    let pc = find_threshold(&sys, StokesVector::right_circular(), &search, &ctl).unwrap().critical_power;
    println!("Pc_V {pv:.4e}  ratio {:.4}", pc / pv);
    let s2 = second_threshold(&sys, StokesVector::vertical(), &ThresholdSearch { low: pv, high: pv * 1e3, ..search }, &ctl);
    match &s2 {
        Ok(r) => println!("second/first {:.3}", r.critical_power / pv),
        Err(e) => println!("second: {e}"),
    }
    let top = k["top"];
    let mut below = 0.0f64;
    let n_sweep = 40;
    let mut above = vec![];
    for i in 0..n_sweep {
        let q = 0.1 * (top / 0.1f64).powf(i as f64 / (n_sweep - 1) as f64);
        let s = ss(&sys, pv * q, StokesVector::vertical());
        let (c, t, tot) = pols(&sys, &s);
        if q <= 0.9 { below = below.max(tot.abs()); }
        if q >= 1.0 { above.push((q, tot, c, t, s.ground(), s.photons_in(Polarization::H))); }
    }
    println!("below max |tot| {below:.4}");
    let mono = above.windows(2).all(|w| w[1].1 >= w[0].1);
    let tail: Vec<f64> = above.iter().rev().take(8).map(|a| a.1).collect();
    println!("monotone {mono} plateau {:.3}..{:.3}", tail.iter().cloned().fold(9.0, f64::min), tail.iter().cloned().fold(-9.0, f64::max));
    for a in above.iter().step_by(3) {
        println!("  q {:.2} tot {:.3} cond {:.3} th {:.3} N0 [{:.3e} {:.3e}] NH {:.3e}", a.0, a.1, a.2, a.3, a.4[0], a.4[1], a.5);
    }
    let pr = k["work"] * pv;
    let mut data = vec![];
    for i in 0..36 {
        let a = i as f64 * PI / 36.0;
        let st = prepare_pump(a, 0.0, 1.0, 532.0).unwrap();
        let s = ss(&sys, pr, st);
        data.push(((4.0 * a).cos(), (4.0 * a).sin(), pols(&sys, &s).0));
    }
    let (cc, cs, s2s, yc, ys) = data.iter().fold((0.0, 0.0, 0.0, 0.0, 0.0), |acc, (c, s, y)| {
        (acc.0 + c * c, acc.1 + c * s, acc.2 + s * s, acc.3 + y * c, acc.4 + y * s)
    });
    let det = cc * s2s - cs * cs;
    let a1 = (yc * s2s - ys * cs) / det;
    let a2 = (ys * cc - yc * cs) / det;
    let rms = (data.iter().map(|(c, s, y)| (y - a1 * c - a2 * s).powi(2)).sum::<f64>() / 36.0).sqrt();
    println!("hwp A {:.4} rms {rms:.4}", a1.hypot(a2));
    if k["show"] > 0.0 {
        for (c, _, y) in data.iter().take(10) { println!("  cos4a {c:.3} cond {y:.4}"); }
    }
    if k["full"] > 0.0 {
        let raster = raster_hemisphere(10, 10).unwrap();
        let (mut sx, mut sy, mut sxx, mut sxy, mut thm) = (0.0, 0.0, 0.0, 0.0, 0.0f64);
        for rp in &raster {
            let s = ss(&sys, pr, rp.stokes);
            let (c, t, _) = pols(&sys, &s);
            let x = rp.stokes.s1 / rp.stokes.s0;
            sx += x; sy += c; sxx += x * x; sxy += x * c;
            thm = thm.max(t.abs());
        }
        let n = raster.len() as f64;
        println!("raster slope {:.4} thermal max {thm:.4}", (n * sxy - sx * sy) / (n * sxx - sx * sx));
        let mut pin = sys.clone();
        pin.ladder.anisotropy.loss_ratio_h_over_v = 1.05;
        let (mut cnt, mut thm) = (0, 0.0f64);
        for rp in &raster {
            let s = ss(&pin, pr, rp.stokes);
            let (c, t, _) = pols(&pin, &s);
            if c.abs() > 0.9 { cnt += 1; }
            thm = thm.max(t.abs());
        }
        println!("pin frac {:.2} thermal {thm:.4}", cnt as f64 / n);
    }
    println!("elapsed {:?}", t0.elapsed());
}
