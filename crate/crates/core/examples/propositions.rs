//! Verification suites: alignment propositions, splitting error, label-shift
//! breakage, and finite-difference gradient checks.

use spdim::sim::{check_propositions, grad_check, GradCheckConfig, PropositionConfig};

fn main() {
    let props = check_propositions(&PropositionConfig::default());
    print!("{props}");
    let grads = grad_check(&GradCheckConfig::default());
    print!("{grads}");
    println!("all passed: {}", props.all_passed() && grads.all_passed());
}
