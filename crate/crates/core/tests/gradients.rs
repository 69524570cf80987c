use std::time::Instant;

use vsgn::checks::registry;
use vsgn::numerics::gradcheck::FD_TOLERANCE;

#[test]
fn every_registered_check_passes() {
    let mut failures = Vec::new();
    for c in registry() {
        let t = Instant::now();
        let r = (c.run)().unwrap_or_else(|e| panic!("{}: {e}", c.name));
        println!(
            "{:10} {:26} checked {:6} skipped {:4} max_rel {:.3e} ({:.2}s)",
            c.module,
            c.name,
            r.checked,
            r.skipped,
            r.max_rel_error,
            t.elapsed().as_secs_f64()
        );
        if !r.passed(FD_TOLERANCE) {
            failures.push(format!("{} worst {:?} err {:.3e}", c.name, r.worst, r.max_rel_error));
        }
    }
    assert!(failures.is_empty(), "{failures:#?}");
}
