use cempc::certificates::*;
use cempc::simbench::msd::*;
use cempc::simbench::scenarios::*;
use cempc::simbench::*;

fn main() {
    let which = std::env::args().nth(1).unwrap_or_else(|| "cert".into());
    match which.as_str() {
        "cert" => cert(),
        "nominal" => nominal(),
        "adaptive" => adaptive(),
        "thm1" => thm1(),
        "table" => table(),
        _ => eprintln!("unknown phase"),
    }
}

fn cert() {
    let bundle = build_msd_chain(&chain_params()).unwrap();
    let weights = chain_weights(CHAIN_N, CHAIN_M, CHAIN_OMEGA, 20);
    let samples = chain_theta_samples(&bundle.theta_nominal, 0.5, 32, 100);
    let t0 = std::time::Instant::now();
    let decay = estimate_decay_linear(&bundle.model, &samples, &weights, &bundle.constraints, 150).unwrap();
    println!("decay: C_rho={:.3} rho={:.5} C_ell={:.3} ({} ms)", decay.c_rho, decay.rho, decay.c_ell, t0.elapsed().as_millis());
    match build_report(decay, &weights, None, None) {
        Ok(r) => println!("eps_f={:.6} (lp {:.6}) alpha={:.6} omega_lower={:?} N_min={:?} certified={}",
            r.epsilon_f, r.epsilon_f_lp, r.alpha, r.omega_lower, r.n_min, r.certified()),
        Err(e) => println!("report error: {e}"),
    }
}

fn nominal() {
    // theta_hat = theta (nominal), no noise: criterion-3 shape.
    let cfg = ChainScenarioConfig { seed: 7, ablation: Ablation::Full, steps: 200, noisy: false, drift: false, theta_error: 0.0 };
    let mut sc = chain_scenario(&cfg).unwrap();
    sc.reference = vec![(0usize, nalgebra::DVector::from_element(1, 0.5))];
    let t0 = std::time::Instant::now();
    let res = run(&sc).unwrap();
    println!("nominal run: {} steps in {:?} ({:.2} ms/step)", res.records.len(), t0.elapsed(), res.wall_ms_per_step);
    let mut first_below = None;
    for (k, y) in res.outputs.iter().enumerate() {
        if (y[0] - 0.5).abs() < 1e-4 && first_below.is_none() {
            first_below = Some(k);
        }
    }
    println!("first |y - y_d| < 1e-4 at step {:?}; final err {:.3e}", first_below, (res.outputs.last().unwrap()[0] - 0.5).abs());
    for k in [0usize, 20, 40, 60, 80, 100, 120] { println!("  J*({k}) = {:.3e}  yerr={:.3e}", res.records[k].j_star, (res.outputs[k][0] - 0.5).abs()); }
    // Decrease slack with alpha = 1 along the recorded closed loop.
    let alpha = 1.0;
    let mut worst_rel = f64::NEG_INFINITY;
    let mut worst_k = 0;
    for k in 0..res.records.len() - 1 {
        let ell = cempc::cost::stage_cost(
            &res.states[k], &res.inputs[k],
            &res.records[k].setpoint.x, &res.records[k].setpoint.u,
            &sc.weights, &sc.constraints);
        let slack = res.records[k + 1].j_star - res.records[k].j_star + alpha * ell;
        let rel = slack / res.records[k].j_star.max(1e-300);
        if rel > worst_rel { worst_rel = rel; worst_k = k; }
        if k < 130 && rel > -1e9 {
            if k % 10 == 0 || rel > 1e-5 {
                if rel > 1e-5 { println!("  VIOLATION k={k} J*={:.3e} slack={:.3e} rel={:.3e}", res.records[k].j_star, slack, rel); }
            }
        }
    }
    println!("worst slack/J* = {:.3e} at k={} (tolerance 1e-5)", worst_rel, worst_k);
    let mut worst120 = f64::NEG_INFINITY;
    for k in 0..80.min(res.records.len() - 1) {
        let ell = cempc::cost::stage_cost(
            &res.states[k], &res.inputs[k],
            &res.records[k].setpoint.x, &res.records[k].setpoint.u,
            &sc.weights, &sc.constraints);
        let slack = res.records[k + 1].j_star - res.records[k].j_star + alpha * ell;
        worst120 = worst120.max(slack / res.records[k].j_star.max(1e-300));
    }
    println!("worst slack/J* over k<80 = {:.3e}", worst120);
}

fn adaptive() {
    // +-50% error, no noise: criterion-4 shape (shorter dry run).
    let cfg = ChainScenarioConfig { seed: 3, ablation: Ablation::Full, steps: 2000, noisy: false, drift: false, theta_error: 0.5 };
    let mut sc = chain_scenario(&cfg).unwrap();
    sc.reference = vec![(0usize, nalgebra::DVector::from_element(1, 0.5))];
    let t0 = std::time::Instant::now();
    let res = run(&sc).unwrap();
    println!("adaptive run: {} steps in {:?}", res.records.len(), t0.elapsed());
    for k in [0usize, 10, 50, 100, 200, 400, 800, 1200, 1600, 1999] {
        if k < res.per_step_track.len() {
            println!("  k={k:4} track={:.3e} constr={:.3e}", res.per_step_track[k], res.per_step_constr[k]);
        }
    }
    println!("cumulative track={:.4e} constr={:.4e} diverged={} asm4={}", res.track_metric, res.constr_metric, res.diverged, res.asm4_violations);
}

fn thm1() {
    let cfg = ChainScenarioConfig { seed: 1, ablation: Ablation::Full, steps: 500, noisy: true, drift: true, theta_error: 0.5 };
    let sc = chain_scenario(&cfg).unwrap();
    let t0 = std::time::Instant::now();
    let res = run(&sc).unwrap();
    let mut worst5a = f64::INFINITY;
    let mut worst5b = f64::INFINITY;
    let mut worst5c = f64::INFINITY;
    let mut n = 0;
    for d in res.diagnostics.iter().flatten() {
        worst5a = worst5a.min(d.slack_5a);
        worst5b = worst5b.min(d.slack_5b);
        if let Some(s) = d.slack_5c { worst5c = worst5c.min(s); }
        assert!(d.holds_5a && d.holds_5b && d.holds_5c.unwrap_or(true), "violated at a step");
        n += 1;
    }
    println!("thm1 over {n} transitions in {:?}: worst 5a={:.3e} 5b={:.3e} 5c={:.3e} asm4_viol={}", t0.elapsed(), worst5a, worst5b, worst5c, res.asm4_violations);
}

fn table() {
    for seed in [0u64, 1, 2] {
        let mut results = Vec::new();
        for abl in [Ablation::Full, Ablation::NoTerm, Ablation::NoAdapt] {
            let cfg = ChainScenarioConfig { seed, ablation: abl, steps: 400, noisy: true, drift: false, theta_error: 0.5 };
            let sc = chain_scenario(&cfg).unwrap();
            let res = run(&sc).unwrap();
            results.push((abl, res));
        }
        let refs: Vec<(Ablation, &SimResult)> = results.iter().map(|(a, r)| (*a, r)).collect();
        let cmp = compare(&refs).unwrap();
        println!("seed {seed}:\n{}", cmp.render_text());
    }
}
