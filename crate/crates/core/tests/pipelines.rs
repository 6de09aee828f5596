use lasalle_core::detect::{strong_zsd_verdict, invariant_kernel, kernel_sample, DetectConfig};
use lasalle_core::dynsys::{corpus_get, AffineControlSystem, CorpusOptions};
use lasalle_core::integrate::{integrate, IntegratorConfig, Termination};
use lasalle_core::invariance::{omega_limit_estimate, SetLabel};
use lasalle_core::lyapunov::{check_hypotheses, Certificate, HypothesisOptions};
use lasalle_core::sampling::{norm, LowDiscrepancy};
use lasalle_core::verdict::Status;

fn example2() -> AffineControlSystem {
    corpus_get("example2", &CorpusOptions::default()).unwrap().system.control().unwrap().clone()
}

#[test]
fn example1_hypotheses_hold() {
    let f = corpus_get("example1", &CorpusOptions::default()).unwrap().system.field().clone();
    let cert = Certificate::from_exprs("y^2", 2, "x2^2", "-2*x2^4").unwrap();
    let r = check_hypotheses(&cert, &f, &HypothesisOptions::new(1.0), &LowDiscrepancy::new(0));
    assert_eq!(r.h1.status, Status::Pass);
    assert_eq!(r.h2.status, Status::Pass);
    assert_eq!(r.h3.status, Status::Pass);
    assert!(r.zero_set_points > 0);
}

#[test]
fn wrong_sign_certificate_fails_h2_with_witness() {
    let f = corpus_get("example1", &CorpusOptions::default()).unwrap().system.field().clone();
    let cert = Certificate::from_exprs("x^2", 2, "x1^2", "0").unwrap();
    let r = check_hypotheses(&cert, &f, &HypothesisOptions::new(1.0), &LowDiscrepancy::new(0));
    assert_eq!(r.h2.status, Status::Fail);
    assert!(r.h2.witness.is_some());
}

#[test]
fn example2_detectability_from_public_api() {
    let sys = example2();
    let s = LowDiscrepancy::new(1);
    let e = kernel_sample(&sys, 1e-10, 80, &s);
    assert!(e.points().iter().all(|p| p[1].abs() < 1e-4));
    let n = invariant_kernel(&sys, &e, 20.0, 1e-10).unwrap();
    assert_eq!(n.label(), SetLabel::N);
    let cfg = DetectConfig { eps0: Some(0.5), ..Default::default() };
    let r = strong_zsd_verdict(&sys, &n, &cfg, &s).unwrap();
    assert!(r.zsd.passed());
    assert!(r.strong_zsd.passed());
    let j: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
    assert_eq!(j["strong_zsd"]["status"], "pass");
}

#[test]
fn example2_omega_limit_is_near_origin() {
    let traj = integrate(example2().drift(), 0.0, &[0.4, -0.3], &IntegratorConfig::new(1e4), &[]).unwrap();
    assert_eq!(traj.terminated(), Termination::HorizonReached);
    let om = omega_limit_estimate(&traj, 0.1, 0.05).unwrap();
    assert!(om.points().iter().all(|p| norm(p) < 0.05));
}
