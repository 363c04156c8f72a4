//! Ten acceptance criteria, one PASS/FAIL line each. Exits with status 1
//! when any criterion fails.

use std::time::Instant;

use qoverlap::disorder::Averaging;
use qoverlap::dsl::{parse, Expr};
use qoverlap::model::System;
use qoverlap::pauli::{Axis, CMatrix, NonRandomTerm, SpinOperator, C64};
use qoverlap::spectral::{duhamel, duhamel_fd_oracle, eigendecompose, gibbs_expect};
use qoverlap::verifier::{
    block_interpolation_check, check_dpdj, check_gamma, check_variance, classical_limit_suite, discussion_checks,
    evaluate_claims, gg1_claim, gg1_hand_built, ibp_claim, run_builtins, BuiltinOptions, CheckKind, VerifierReport,
};
use qoverlap::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEED: u64 = 20_251_015;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn fmt_report(r: &VerifierReport) -> String {
    format!(
        "    {:<22} L={} beta={} J={} lhs={:.6e} rhs={:.6e} residual={:.3e} se={:.1e} tol={:.0e} {}{}",
        r.identity,
        r.l,
        r.beta,
        r.j,
        r.lhs,
        r.rhs,
        r.residual,
        r.std_error,
        r.tolerance,
        match (r.pass, r.kind) {
            (true, _) => "ok",
            // finite-size value of a limit statement, informative only
            (false, CheckKind::Asymptotic) => "nonzero",
            (false, _) => "FAIL",
        },
        r.note.as_deref().map(|n| format!(" ({n})")).unwrap_or_default()
    )
}

fn quantum_chain(side: usize, axes: &[Axis], beta: f64) -> System {
    System::random_field(1, side, axes, 1.0, 1.0, beta).unwrap()
}

// 1 -------------------------------------------------------------------------

fn ibp_claims() -> Vec<qoverlap::verifier::Claim> {
    // f = R(1,2) involves replica 2, so the sum runs over n = 2 replicas
    [(1, "1"), (1, "R(1,1)"), (2, "R(1,2)")]
        .iter()
        .map(|&(n, f)| ibp_claim(&format!("correq[f={f}]"), n, f).unwrap())
        .collect()
}

fn criterion_1(log: &mut Vec<String>) -> Outcome {
    let mut pass = true;
    let mut worst = 0.0f64;
    for side in [2, 3] {
        for beta in [0.5, 1.0] {
            let sys = quantum_chain(side, &[Axis::Z], beta);
            for r in evaluate_claims(&ibp_claims(), &sys, Axis::Z, &Averaging::gh(11)).unwrap() {
                let ok = r.residual.abs() <= 1e-8;
                pass &= ok;
                worst = worst.max(r.residual.abs());
                log.push(fmt_report(&r));
            }
        }
    }
    log.push("    supplementary, trapezoid rule on the same systems:".into());
    let mut worst_trap = 0.0f64;
    for side in [2, 3] {
        let avg = if side == 2 { Averaging::trapezoid(0.25, 9.0) } else { Averaging::trapezoid(0.35, 8.0) };
        for beta in [0.5, 1.0] {
            let sys = quantum_chain(side, &[Axis::Z], beta);
            for r in evaluate_claims(&ibp_claims(), &sys, Axis::Z, &avg).unwrap() {
                worst_trap = worst_trap.max(r.residual.abs());
                log.push(fmt_report(&r));
            }
        }
    }
    outcome(pass, format!("max |residual| Gauss-Hermite q=11 {worst:.2e} (tol 1e-8); trapezoid {worst_trap:.2e}"))
}

// 2 -------------------------------------------------------------------------

fn criterion_2(log: &mut Vec<String>) -> Outcome {
    let mut pass = true;
    let (mut worst, mut worst_fd) = (0.0f64, 0.0f64);
    for side in [2, 3] {
        for beta in [0.5, 1.0] {
            let sys = quantum_chain(side, &[Axis::Z], beta);
            let avg = Averaging::gh(11);
            let r = evaluate_claims(&[ibp_claim("hL", 1, "1").unwrap()], &sys, Axis::Z, &avg).unwrap().remove(0);
            let fd = check_dpdj(&sys, &avg).unwrap();
            let rel = fd.residual.abs() / fd.rhs.abs().max(1.0);
            pass &= r.residual.abs() <= 1e-8 && rel <= 1e-6;
            worst = worst.max(r.residual.abs());
            worst_fd = worst_fd.max(rel);
            log.push(fmt_report(&r));
            log.push(fmt_report(&fd));
            let t = evaluate_claims(&[ibp_claim("hL", 1, "1").unwrap()], &sys, Axis::Z, &Averaging::trapezoid(0.35, 8.0))
                .unwrap()
                .remove(0);
            log.push(format!("    supplementary trapezoid: hL residual {:.2e}", t.residual));
        }
    }
    outcome(pass, format!("max |hL residual| {worst:.2e} (tol 1e-8); max relative dp/dJ gap {worst_fd:.2e} (tol 1e-6)"))
}

// 3 -------------------------------------------------------------------------

fn random_hermitian(n: usize, rng: &mut ChaCha8Rng) -> CMatrix {
    let a = CMatrix::from_fn(n, n, |_, _| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
    (&a + a.adjoint()) * C64::new(0.5, 0.0)
}

fn criterion_3(log: &mut Vec<String>) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut worst = 0.0f64;
    for inst in 0..20 {
        let n = [2, 4, 8, 16][inst % 4];
        let h = random_hermitian(n, &mut rng);
        let beta = rng.gen_range(0.3..2.0);
        let ops: Vec<CMatrix> = (0..3).map(|_| random_hermitian(n, &mut rng)).collect();
        let sd = eigendecompose(&h, beta).unwrap();
        for k in 1..=3 {
            let refs: Vec<&CMatrix> = ops[..k].iter().collect();
            let a = duhamel(&sd, &refs).unwrap().value;
            let step = if k == 3 { 1e-2 } else { 1e-3 };
            let b = duhamel_fd_oracle(&h, beta, &refs, step).unwrap().value;
            worst = worst.max((a - b).abs() / b.abs().max(1.0));
        }
    }
    let sz = SpinOperator::new(Axis::Z, &[0], 1).unwrap().to_dense();
    let sx = SpinOperator::new(Axis::X, &[0], 1).unwrap().to_dense();
    let mut worst_spin = 0.0f64;
    for bh in [0.1, 1.0, 10.0] {
        let sd = eigendecompose(&(-&sz), bh).unwrap();
        let d = duhamel(&sd, &[&sx, &sx]).unwrap().value;
        log.push(format!("    beta*h={bh}: (sx,sx)_D={d:.15} closed form {:.15}", bh.tanh() / bh));
        worst_spin = worst_spin.max((d - bh.tanh() / bh).abs());
    }
    outcome(
        worst <= 1e-6 && worst_spin <= 1e-10,
        format!("spectral vs finite differences {worst:.2e} (tol 1e-6); single spin {worst_spin:.2e} (tol 1e-10)"),
    )
}

// 4 -------------------------------------------------------------------------

fn criterion_4(log: &mut Vec<String>) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 4);
    let mut norm = 0.0f64;
    for _ in 0..10 {
        let h = random_hermitian(8, &mut rng);
        let o = random_hermitian(8, &mut rng);
        let sd = eigendecompose(&h, rng.gen_range(0.1..3.0)).unwrap();
        norm = norm.max((duhamel(&sd, &[&o]).unwrap().value - gibbs_expect(&sd, &o).unwrap()).abs());
    }
    // diagonal Hamiltonian and diagonal observables
    let n = 3;
    let z = |s: &[usize]| SpinOperator::new(Axis::Z, s, n).unwrap().to_dense();
    let mut commuting = 0.0f64;
    for _ in 0..10 {
        let c: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let h = z(&[0]) * C64::new(c[0], 0.0) + z(&[1, 2]) * C64::new(c[1], 0.0) + z(&[0, 1, 2]) * C64::new(c[2], 0.0);
        let sd = eigendecompose(&h, 1.0 + c[3]).unwrap();
        let (a, b) = (z(&[0, 1]), z(&[2]));
        let ab = &a * &b;
        commuting = commuting.max((duhamel(&sd, &[&a, &b]).unwrap().value - gibbs_expect(&sd, &ab).unwrap()).abs());
    }
    let mut sys = System::random_field(1, 2, &[Axis::Z], 1.0, 0.0, 1.0).unwrap();
    sys.spec.nonrandom.push(NonRandomTerm { sites: vec![0, 1], axis: Axis::Z, coeff: -0.8 });
    let suite = classical_limit_suite(&sys, Axis::Z, &Averaging::trapezoid(0.25, 9.0)).unwrap();
    let r11 = suite.iter().find(|r| r.identity == "classical_R11").unwrap();
    log.push(fmt_report(r11));
    let r11_err = (r11.lhs - 1.0).abs();
    outcome(
        norm <= 1e-12 && commuting <= 1e-10 && r11_err <= 1e-12,
        format!("(O)_D vs <O> {norm:.1e} (tol 1e-12); commuting (AB)_D {commuting:.1e} (tol 1e-10); (R11)_D - 1 = {r11_err:.1e} (tol 1e-12)"),
    )
}

// 5 -------------------------------------------------------------------------

fn criterion_5(log: &mut Vec<String>) -> Outcome {
    let systems: Vec<System> = [2, 4, 6].iter().map(|&l| quantum_chain(l, &[Axis::Z, Axis::X], 1.0)).collect();
    let avg = Averaging::mc(2000, SEED);
    let reports = run_builtins(&["GG1", "GG2", "Delta_h"], &systems, Axis::Z, &avg, &BuiltinOptions::default()).unwrap();
    let mut pass = true;
    let mut summary = Vec::new();
    for r in &reports {
        log.push(fmt_report(r));
        if r.kind == CheckKind::Trend {
            pass &= r.pass;
            summary.push(format!("{} {}", r.identity, if r.pass { "ok" } else { "fail" }));
        }
    }
    pass &= summary.len() == 3;
    outcome(pass, summary.join(", "))
}

// 6 -------------------------------------------------------------------------

fn criterion_6(log: &mut Vec<String>) -> Outcome {
    let systems: Vec<System> = (2..=6).map(|l| quantum_chain(l, &[Axis::Z, Axis::X], 1.0)).collect();
    let reports = check_variance(&systems, &Averaging::mc(2000, SEED)).unwrap();
    for r in &reports {
        log.push(fmt_report(r));
    }
    let bound_ok = reports.iter().filter(|r| r.identity == "varineq").all(|r| r.pass);
    let bounded = reports.iter().any(|r| r.identity == "varineq_bounded" && r.pass);
    outcome(bound_ok && bounded, format!("bound at every L: {bound_ok}; no growth across L: {bounded}"))
}

// 7 -------------------------------------------------------------------------

fn criterion_7(log: &mut Vec<String>) -> Outcome {
    let sys = System::random_bond(1, 6, &[Axis::Z, Axis::X], 1.0, 0.0, 1.0).unwrap();
    let reports = block_interpolation_check(&sys, 3, &Averaging::mc(400, SEED)).unwrap();
    let mut pass = true;
    for r in &reports {
        log.push(fmt_report(r));
        let ok = match r.identity.as_str() {
            "block_phi0" | "block_phi1" => r.residual.abs() <= 1e-10,
            "block_convexity" => r.residual <= 1e-9,
            "block_sandwich_lower" | "block_sandwich_upper" => r.pass,
            _ => true,
        };
        pass &= ok;
    }
    outcome(pass, "endpoints, convexity of phi and tangent sandwich on N = 6 = 3 x 2")
}

// 8 -------------------------------------------------------------------------

fn criterion_8(log: &mut Vec<String>) -> Outcome {
    // a single random axis, so γ(1) − γ(0) is the full variance
    let sys = System::random_field(1, 2, &[Axis::Z], 1.0, 1.0, 1.0).unwrap();
    let reports = check_gamma(&sys, Axis::Z, 2, &Averaging::gh(9)).unwrap();
    for r in &reports {
        log.push(fmt_report(r));
    }
    let mono = reports.iter().filter(|r| r.identity == "gamma_monotone").all(|r| r.pass);
    let ends = reports.iter().find(|r| r.identity == "gamma_endpoints").map(|r| r.pass).unwrap_or(false);
    outcome(mono && ends, format!("nondecreasing: {mono}; endpoints equal |Lambda| Var psi: {ends}"))
}

// 9 -------------------------------------------------------------------------

fn criterion_9(log: &mut Vec<String>) -> Outcome {
    let mut classical = System::random_field(1, 2, &[Axis::Z], 1.0, 0.0, 1.0).unwrap();
    classical.spec.nonrandom.push(NonRandomTerm { sites: vec![0, 1], axis: Axis::Z, coeff: -0.8 });
    let suite = classical_limit_suite(&classical, Axis::Z, &Averaging::trapezoid(0.25, 9.0)).unwrap();
    let mut classical_ok = true;
    let mut failed = Vec::new();
    for r in &suite {
        log.push(fmt_report(r));
        if r.identity.starts_with("disc_") || r.identity == "chain_saturation" {
            let ok = r.residual.abs() <= 1e-8;
            classical_ok &= ok;
            if !ok {
                failed.push(r.identity.clone());
            }
        }
    }
    let quantum = quantum_chain(4, &[Axis::Z, Axis::X], 1.0);
    let reports = discussion_checks(&[quantum], Axis::Z, &Averaging::mc(1000, SEED)).unwrap();
    let mut quantum_ok = true;
    for r in &reports {
        log.push(fmt_report(r));
        if r.identity.ends_with("_nonneg") || r.identity.starts_with("chain_") || r.identity == "psd_delta_R12" {
            quantum_ok &= r.pass;
            if !r.pass {
                failed.push(format!("{} (L=4)", r.identity));
            }
        }
    }
    outcome(
        classical_ok && quantum_ok,
        format!(
            "classical identities and saturation: {classical_ok}; quantum nonnegativity and chain order: {quantum_ok}{}",
            if failed.is_empty() { String::new() } else { format!("; failing: {}", failed.join(", ")) }
        ),
    )
}

// 10 ------------------------------------------------------------------------

fn random_atom(rng: &mut ChaCha8Rng) -> Expr {
    match rng.gen_range(0..3) {
        0 => {
            let a = rng.gen_range(1..=3);
            Expr::Overlap(a, rng.gen_range(a..=3))
        }
        1 => Expr::Field(rng.gen_range(1..=3)),
        _ => Expr::Spin { axis: Axis::ALL[rng.gen_range(0..3)], range: rng.gen_range(1..=4), replica: rng.gen_range(1..=3) },
    }
}

/// At most two operators per replica in a product, so every block stays
/// under the degree caps.
fn random_body(rng: &mut ChaCha8Rng, depth: usize) -> Expr {
    if depth == 0 {
        return random_atom(rng);
    }
    match rng.gen_range(0..5) {
        0 => Expr::Add(Box::new(random_body(rng, depth - 1)), Box::new(random_body(rng, depth - 1))),
        1 => Expr::Sub(Box::new(random_body(rng, depth - 1)), Box::new(random_body(rng, depth - 1))),
        2 => Expr::Mul(Box::new(random_atom(rng)), Box::new(random_atom(rng))),
        3 => Expr::Mul(Box::new(random_num(rng)), Box::new(random_body(rng, depth - 1))),
        _ => random_atom(rng),
    }
}

fn random_num(rng: &mut ChaCha8Rng) -> Expr {
    match rng.gen_range(0..4) {
        0 => Expr::Beta,
        1 => Expr::Coupling,
        _ => Expr::Num((rng.gen_range(1..1000) as f64) / 8.0),
    }
}

fn random_block(rng: &mut ChaCha8Rng) -> Expr {
    let body = Box::new(random_body(rng, 2));
    if rng.gen_bool(0.7) {
        Expr::D(body)
    } else {
        Expr::G(body)
    }
}

fn random_inner(rng: &mut ChaCha8Rng, depth: usize) -> Expr {
    if depth == 0 {
        return random_block(rng);
    }
    match rng.gen_range(0..5) {
        0 => Expr::Add(Box::new(random_inner(rng, depth - 1)), Box::new(random_inner(rng, depth - 1))),
        1 => Expr::Sub(Box::new(random_inner(rng, depth - 1)), Box::new(random_inner(rng, depth - 1))),
        2 => Expr::Mul(Box::new(random_block(rng)), Box::new(random_block(rng))),
        3 => Expr::Neg(Box::new(random_block(rng))),
        _ => random_block(rng),
    }
}

fn random_top(rng: &mut ChaCha8Rng, depth: usize) -> Expr {
    if depth == 0 {
        return match rng.gen_range(0..3) {
            0 => random_num(rng),
            _ => Expr::E(Box::new(random_inner(rng, 2))),
        };
    }
    match rng.gen_range(0..4) {
        0 => Expr::Add(Box::new(random_top(rng, depth - 1)), Box::new(random_top(rng, depth - 1))),
        1 => Expr::Sub(Box::new(random_top(rng, depth - 1)), Box::new(random_top(rng, depth - 1))),
        2 => Expr::Mul(Box::new(random_top(rng, depth - 1)), Box::new(random_top(rng, depth - 1))),
        _ => Expr::Neg(Box::new(random_top(rng, depth - 1))),
    }
}

fn criterion_10(log: &mut Vec<String>) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 10);
    let mut round_trips = 0;
    for _ in 0..100 {
        let e = random_top(&mut rng, 3);
        let text = e.to_string();
        match parse(&text) {
            Ok(back) if back == e => round_trips += 1,
            Ok(_) => log.push(format!("    structure changed: {text}")),
            Err(err) => log.push(format!("    {text}: {err}")),
        }
    }
    let sys = quantum_chain(4, &[Axis::Z, Axis::X], 1.0);
    let avg = Averaging::mc(64, SEED);
    let hand = gg1_hand_built(&sys, Axis::Z, &avg).unwrap();
    let dsl = evaluate_claims(&[gg1_claim("GG1", 1, "R(1,1)").unwrap()], &sys, Axis::Z, &avg).unwrap().remove(0);
    let gap = (hand.mean - dsl.lhs).abs();
    log.push(format!("    GG1 hand-built {:.15e}, expression {:.15e}", hand.mean, dsl.lhs));
    let mut positioned = 0;
    for bad in ["D[E[R(1,2)]]", "E[D[R(1,2)]", "E[R(1,2)]"] {
        let r = parse(bad);
        log.push(format!("    {bad:<14} -> {:?}", r.as_ref().err().map(ToString::to_string)));
        if matches!(r, Err(Error::Parse { .. })) {
            positioned += 1;
        }
    }
    outcome(
        round_trips == 100 && gap <= 1e-12 && positioned == 3,
        format!("round trips {round_trips}/100; GG1 gap {gap:.1e} (tol 1e-12); positioned errors {positioned}/3"),
    )
}

fn main() {
    let criteria: [(&str, fn(&mut Vec<String>) -> Outcome); 10] = [
        ("exact integration by parts, Gauss-Hermite q=11", criterion_1),
        ("field expectation and dp/dJ", criterion_2),
        ("Duhamel engine oracles", criterion_3),
        ("normalization and commuting reductions", criterion_4),
        ("overlap identity trends, L = 2, 4, 6", criterion_5),
        ("variance bound and boundedness", criterion_6),
        ("block interpolation", criterion_7),
        ("gamma interpolation", criterion_8),
        ("limit relations, classical and quantum", criterion_9),
        ("expression language", criterion_10),
    ];
    let verbose = std::env::var_os("QOVERLAP_ACCEPTANCE_VERBOSE").is_some();
    // comma-separated criterion numbers, for partial runs
    let only: Option<Vec<usize>> = std::env::var("QOVERLAP_ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let mut failures = 0;
    let mut lines = Vec::new();
    for (i, (name, run)) in criteria.iter().enumerate() {
        if only.as_ref().is_some_and(|o| !o.contains(&(i + 1))) {
            continue;
        }
        let start = Instant::now();
        let mut log = Vec::new();
        let o = run(&mut log);
        let line = format!(
            "{} criterion {:>2}: {name} [{:.1} s] {}",
            if o.pass { "PASS" } else { "FAIL" },
            i + 1,
            start.elapsed().as_secs_f64(),
            o.detail
        );
        println!("{line}");
        if verbose || !o.pass {
            for l in &log {
                println!("{l}");
            }
        }
        failures += usize::from(!o.pass);
        lines.push(line);
    }
    println!("\nsummary");
    for l in &lines {
        println!("{}", l.split(" [").next().unwrap_or(l));
    }
    println!("{} of {} criteria passed", lines.len() - failures, lines.len());
    if failures > 0 {
        std::process::exit(1);
    }
}
