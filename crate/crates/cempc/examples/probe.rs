use cempc::linalg::spectral_radius;
use cempc::simbench::msd::*;
use cempc::simbench::scenarios::*;
use cempc::simbench::noise::{Channel, Stream};
use cempc::simbench::*;
use nalgebra::DVector;

fn slow_vertex(bundle: &ChainBundle, seed: u64, lo: f64, hi: f64) -> Option<(DVector<f64>, f64)> {
    let n = bundle.theta_nominal.len();
    for attempt in 0..50000u64 {
        let mut s = Stream::for_channel(seed.wrapping_add(attempt.wrapping_mul(0x9e37)), 0, Channel::Init);
        let signs = s.signs(n);
        let th = DVector::from_fn(n, |i, _| bundle.theta_nominal[i] * (1.0 + 0.5 * signs[i]));
        let lm = bundle.model.linear_at(&th).unwrap();
        let r = spectral_radius(&lm.a);
        if r >= lo && r <= hi {
            return Some((th, r));
        }
    }
    None
}

fn main() {
    let bundle = build_msd_chain(&chain_params()).unwrap();
    let mut tr_all = Vec::new();
    let mut cr_all = Vec::new();
    for seed in 0u64..5 {
        let (th, rho) = slow_vertex(&bundle, seed, 0.955, 0.995).unwrap();
        let mut m = Vec::new();
        for abl in [Ablation::Full, Ablation::NoTerm, Ablation::NoAdapt] {
            let cfg = ChainScenarioConfig { seed, ablation: abl, steps: 400, noisy: true, drift: false, theta_error: 0.5 };
            let mut sc = chain_scenario(&cfg).unwrap();
            sc.theta_true0 = th.clone();
            let res = run(&sc).unwrap();
            m.push((res.track_metric, res.constr_metric, res.diverged));
        }
        let tr = m[1].0 / m[0].0;
        let cr = m[2].1 / m[0].1.max(1e-300);
        println!("seed {seed} (rho_true {rho:.3}): full=({:.2e},{:.2e}) no_term tr={:.3} cr={:.2} | no_adapt tr={:.2} cr={:.2}",
            m[0].0, m[0].1, tr, m[1].1 / m[0].1.max(1e-300), m[2].0 / m[0].0, cr);
        tr_all.push(tr);
        cr_all.push(cr);
    }
    tr_all.sort_by(|a, b| a.partial_cmp(b).unwrap());
    cr_all.sort_by(|a, b| a.partial_cmp(b).unwrap());
    println!("MEDIANS: no_term track {:.3} (>=1.3), no_adapt constr {:.2} (>=10)", tr_all[2], cr_all[2]);
}
